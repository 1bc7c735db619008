//! Driving the debugger: in-process against over-the-socket, scripted runs,
//! and a shrinking version of the soundness check.

mod common;

use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use common::*;
use mvdbg::client::FrontendRequest;
use mvdbg::fixtures;
use mvdbg::protocol::ExecState;
use mvdbg::script::{self, RunOptions, Script};
use mvdbg::server::DebugServer;
use mvdbg::session::{serve_stream, Driver, RemoteSession, Session};
use mvdbg::wasm::{Environment, Module};
use proptest::prelude::*;

fn remote(module: Arc<Module>, seed: u64) -> (RemoteSession, thread::JoinHandle<DebugServer>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let m = module.clone();
    let server = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut server = DebugServer::new(m, Environment::seeded(seed)).unwrap();
        serve_stream(&mut server, stream).unwrap();
        server
    });
    (RemoteSession::connect(module, TcpStream::connect(addr).unwrap()).unwrap(), server)
}

#[test]
fn remote_and_in_process_build_the_same_tree() {
    let mut rng = TestRng::seed_from_u64(7);
    for trial in 0..8 {
        let src = program(&mut rng, GenConfig { max_reads: 4, allow_div: true, forever: true });
        let m = module(&src, 3);
        let mut local = seeded_session(m.clone(), trial);
        let (mut far, handle) = remote(m, trial);
        for i in 0..30 {
            // running is timed differently by the two drivers
            let req = loop {
                match random_action(&mut rng, &local, ActionMix { suggest: true, breakpoints: true }) {
                    FrontendRequest::Play | FrontendRequest::Pause => continue,
                    req => break req,
                }
            };
            let shown = format!("{req:?}");
            apply(&mut local, req.clone());
            apply(&mut far, req);
            assert_eq!(local.client.tree, far.client.tree, "trial {trial} action {i} {shown}\n{src}");
            assert_eq!(local.client.current(), far.client.current());
        }
        drop(far);
        let server = handle.join().unwrap();
        assert_eq!(server.state().snapshot(), local.server.state().snapshot(), "trial {trial}");
    }
}

#[test]
fn remote_play_pauses_within_budget() {
    let m = fixtures::get("io_heavy_bench").unwrap().module().unwrap();
    let (mut far, handle) = remote(m.clone(), 0);
    far.submit(FrontendRequest::Play);
    far.settle(50).unwrap();
    assert_eq!(far.client.server_state(), ExecState::Paused);
    assert!(far.client.tree.len() > 1);
    let labels = path_labels(&far.client.tree, far.client.current());
    replay(&m, &labels).expect("remote path replays plainly");
    drop(far);
    handle.join().unwrap();
}

#[test]
fn scripts_are_deterministic() {
    let dir = std::env::temp_dir().join(format!("mvdbg-script-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let m = fixtures::get("knock").unwrap().module().unwrap();
    let text = "step 40\nplay\npause\nsuggest 50\nslide 3\nstep\nreset\nstep 5\nmock 1\nexport tree.json\nexport tree.dot\n";
    let script = Script::parse(text, &m).unwrap();
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let mut s = Session::new(m.clone(), Environment::seeded(3)).unwrap();
        let opts = RunOptions { play_budget: 5_000, base_dir: dir.clone() };
        let report = script::run(&mut s, &script, &opts);
        let json = std::fs::read_to_string(dir.join("tree.json")).unwrap();
        let dot = std::fs::read_to_string(dir.join("tree.dot")).unwrap();
        outputs.push((report.log, report.failure.map(|f| f.to_string()), json, dot));
    }
    std::fs::remove_dir_all(&dir).unwrap();
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn pause_overtakes_queued_work() {
    let m = fixtures::get("io_heavy_bench").unwrap().module().unwrap();
    let mut s = seeded_session(m, 1);
    s.submit(FrontendRequest::Play);
    s.submit(FrontendRequest::Step);
    s.submit(FrontendRequest::Step);
    for _ in 0..100 {
        s.tick();
    }
    assert_eq!(s.server.exec_state(), ExecState::Running);
    s.submit(FrontendRequest::Pause);
    s.settle(1_000).unwrap();
    assert_eq!(s.server.exec_state(), ExecState::Paused);
    assert!(s.requests.is_empty());
    check_sound(&s).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_settled_state_replays(program_seed in any::<u64>(), action_seed in any::<u64>(), n in 1..30usize) {
        let mut rng = TestRng::seed_from_u64(program_seed);
        let src = program(&mut rng, GenConfig { max_reads: 4, allow_div: true, forever: true });
        let mut s = seeded_session(module(&src, 3), program_seed);
        let mut rng = TestRng::seed_from_u64(action_seed);
        for _ in 0..n {
            let req = random_action(&mut rng, &s, ActionMix { suggest: true, breakpoints: true });
            apply(&mut s, req);
            check_sound(&s).map_err(|e| TestCaseError::fail(format!("{e}\n{src}")))?;
        }
    }
}
