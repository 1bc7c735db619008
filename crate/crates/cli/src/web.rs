//! Browser frontend: static assets over HTTP and one live session over a
//! WebSocket at `/ws`. The session (and with it the tree) lives here; the
//! browser only renders the events it is sent.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use anyhow::Result;
use mvdbg::client::{FrontendEvent, FrontendRequest};
use mvdbg::session::{Driver, Session, Tick};
use tungstenite::{Message, WebSocket};

const INDEX: &str = include_str!("../assets/index.html");
/// Scheduler ticks between socket polls.
const TICKS_PER_POLL: usize = 4096;
const MAX_HEAD: usize = 16 * 1024;

pub fn serve(listener: TcpListener, session: Session, static_dir: Option<PathBuf>, once: bool) -> Result<()> {
    let mut session = session;
    session.events_enabled = true;
    let session = Arc::new(Mutex::new(session));
    let static_dir = Arc::new(static_dir);
    for stream in listener.incoming() {
        let stream = stream?;
        let (session, static_dir) = (session.clone(), static_dir.clone());
        let handle = thread::spawn(move || match handle(stream, &session, static_dir.as_deref()) {
            Ok(upgraded) => upgraded,
            Err(e) => {
                log::warn!("connection: {e}");
                false
            }
        });
        // with --once the process ends after the first WebSocket session
        if once && handle.join().unwrap_or(false) {
            break;
        }
    }
    Ok(())
}

struct Head {
    method: String,
    path: String,
    websocket: bool,
    len: usize,
}

/// Looks at the request head without consuming it, so a WebSocket handshake
/// can still read it.
fn peek_head(stream: &TcpStream) -> io::Result<Option<Head>> {
    let mut buf = vec![0u8; MAX_HEAD];
    for _ in 0..200 {
        let n = stream.peek(&mut buf)?;
        if n == 0 {
            return Ok(None);
        }
        let mut headers = [httparse::EMPTY_HEADER; 64];
        let mut req = httparse::Request::new(&mut headers);
        match req.parse(&buf[..n]) {
            Ok(httparse::Status::Complete(len)) => {
                let websocket = req
                    .headers
                    .iter()
                    .any(|h| h.name.eq_ignore_ascii_case("upgrade") && h.value.eq_ignore_ascii_case(b"websocket"));
                return Ok(Some(Head {
                    method: req.method.unwrap_or("").to_string(),
                    path: req.path.unwrap_or("/").to_string(),
                    websocket,
                    len,
                }));
            }
            Ok(httparse::Status::Partial) if n < MAX_HEAD => thread::sleep(Duration::from_millis(5)),
            _ => return Err(io::Error::new(io::ErrorKind::InvalidData, "bad request head")),
        }
    }
    Err(io::Error::new(io::ErrorKind::TimedOut, "incomplete request head"))
}

/// Returns true if the connection became a WebSocket session.
fn handle(stream: TcpStream, session: &Mutex<Session>, static_dir: Option<&Path>) -> Result<bool> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let Some(head) = peek_head(&stream)? else { return Ok(false) };
    let path = head.path.split('?').next().unwrap_or("/").to_string();
    if head.websocket && path == "/ws" {
        let ws = tungstenite::accept(stream)?;
        // one browser drives the session at a time; others wait here
        let mut s = session.lock().unwrap_or_else(|p| p.into_inner());
        live(ws, &mut s)?;
        return Ok(true);
    }
    let mut stream = stream;
    let mut head_bytes = vec![0u8; head.len];
    stream.read_exact(&mut head_bytes)?;
    if head.method != "GET" && head.method != "HEAD" {
        respond(&mut stream, "405 Method Not Allowed", "text/plain", b"GET only\n", &head.method)?;
        return Ok(false);
    }
    match asset(&path, static_dir) {
        Some((body, mime)) => respond(&mut stream, "200 OK", mime, &body, &head.method)?,
        None => respond(&mut stream, "404 Not Found", "text/plain", b"not found\n", &head.method)?,
    }
    Ok(false)
}

fn respond(stream: &mut TcpStream, status: &str, mime: &str, body: &[u8], method: &str) -> io::Result<()> {
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: {mime}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    )?;
    if method != "HEAD" {
        stream.write_all(body)?;
    }
    stream.flush()
}

fn asset(path: &str, static_dir: Option<&Path>) -> Option<(Vec<u8>, &'static str)> {
    let rel = path.trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let Some(dir) = static_dir else {
        return (rel == "index.html").then(|| (INDEX.as_bytes().to_vec(), "text/html; charset=utf-8"));
    };
    let rel = Path::new(rel);
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return None;
    }
    let body = std::fs::read(dir.join(rel)).ok()?;
    let mime = match rel.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("wasm") => "application/wasm",
        _ => "application/octet-stream",
    };
    Some((body, mime))
}

fn send(ws: &mut WebSocket<TcpStream>, ev: &FrontendEvent) -> Result<(), tungstenite::Error> {
    let text = serde_json::to_string(ev).expect("events serialize");
    match ws.send(Message::text(text)) {
        Err(tungstenite::Error::Io(e)) if e.kind() == io::ErrorKind::WouldBlock => Ok(()),
        other => other,
    }
}

fn live(mut ws: WebSocket<TcpStream>, s: &mut Session) -> Result<()> {
    ws.get_mut().set_nonblocking(true)?;
    s.take_events();
    send(&mut ws, &s.client.full_delta())?;
    send(&mut ws, &FrontendEvent::SessionState { state: s.server.exec_state() })?;
    loop {
        loop {
            match ws.read() {
                Ok(Message::Text(text)) => match serde_json::from_str::<FrontendRequest>(text.as_str()) {
                    Ok(req) => s.submit(req),
                    Err(e) => send(&mut ws, &FrontendEvent::Diagnostics { message: format!("bad request: {e}") })?,
                },
                Ok(Message::Close(_)) => return Ok(()),
                Ok(_) => {}
                Err(tungstenite::Error::Io(e)) if e.kind() == io::ErrorKind::WouldBlock => break,
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
                Err(e) => return Err(e.into()),
            }
        }
        let mut busy = false;
        for _ in 0..TICKS_PER_POLL {
            if s.tick() == Tick::Idle {
                break;
            }
            busy = true;
        }
        for ev in s.take_events() {
            send(&mut ws, &ev)?;
        }
        match ws.flush() {
            Err(tungstenite::Error::Io(e)) if e.kind() == io::ErrorKind::WouldBlock => {}
            Err(tungstenite::Error::ConnectionClosed) => return Ok(()),
            other => other?,
        }
        if !busy {
            thread::sleep(Duration::from_millis(5));
        }
    }
}
