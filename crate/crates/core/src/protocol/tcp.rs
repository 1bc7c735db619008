//! JSON-lines over TCP.
//!
//! A reader thread per connection turns incoming lines into decoded messages
//! on an mpsc channel, so the session loop can poll without blocking and
//! per-direction FIFO order is kept.

use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, TcpStream};
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::codec::{decode, encode, DecodeError};

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("decode: {0}")]
    Decode(#[from] DecodeError),
    #[error("peer closed the connection")]
    Closed,
}

/// One end of a JSON-lines connection sending `Out` and receiving `In`.
pub struct LineChannel<Out, In> {
    writer: TcpStream,
    rx: Receiver<Result<In, TransportError>>,
    _out: std::marker::PhantomData<fn(Out)>,
}

impl<Out: Serialize, In: DeserializeOwned + Send + 'static> LineChannel<Out, In> {
    pub fn new(stream: TcpStream) -> std::io::Result<Self> {
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut lines = BufReader::new(reader);
            let mut buf = Vec::new();
            loop {
                buf.clear();
                match lines.read_until(b'\n', &mut buf) {
                    Ok(0) => break,
                    Ok(_) => {
                        if buf.iter().all(|b| b.is_ascii_whitespace()) {
                            continue;
                        }
                        if tx.send(decode::<In>(&buf).map_err(TransportError::from)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e.into()));
                        break;
                    }
                }
            }
        });
        Ok(LineChannel { writer: stream, rx, _out: std::marker::PhantomData })
    }

    pub fn send(&mut self, msg: &Out) -> Result<(), TransportError> {
        self.writer.write_all(&encode(msg))?;
        Ok(())
    }

    /// Next message if one is already available.
    pub fn try_recv(&self) -> Result<Option<In>, TransportError> {
        match self.rx.try_recv() {
            Ok(r) => r.map(Some),
            Err(TryRecvError::Empty) => Ok(None),
            Err(TryRecvError::Disconnected) => Err(TransportError::Closed),
        }
    }

    /// Waits up to `timeout` for the next message.
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<In>, TransportError> {
        match self.rx.recv_timeout(timeout) {
            Ok(r) => r.map(Some),
            Err(mpsc::RecvTimeoutError::Timeout) => Ok(None),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(TransportError::Closed),
        }
    }
}

impl<Out, In> Drop for LineChannel<Out, In> {
    fn drop(&mut self) {
        // the reader thread holds a clone of the socket; shutting down lets the peer see EOF
        let _ = self.writer.shutdown(Shutdown::Both);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{ClientBound, ServerBound};
    use std::net::TcpListener;

    #[test]
    fn fifo_over_loopback() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = thread::spawn(move || {
            let (s, _) = listener.accept().unwrap();
            let mut ch: LineChannel<ClientBound, ServerBound> = LineChannel::new(s).unwrap();
            let mut got = Vec::new();
            while got.len() < 50 {
                if let Some(m) = ch.recv_timeout(Duration::from_secs(5)).unwrap() {
                    got.push(m);
                }
            }
            for i in 0..50 {
                ch.send(&ClientBound::Executed { count: i }).unwrap();
            }
            got
        });
        let mut client: LineChannel<ServerBound, ClientBound> = LineChannel::new(TcpStream::connect(addr).unwrap()).unwrap();
        for v in 0..50 {
            client.send(&ServerBound::Mock { value: v }).unwrap();
        }
        let mut counts = Vec::new();
        while counts.len() < 50 {
            if let Some(ClientBound::Executed { count }) = client.recv_timeout(Duration::from_secs(5)).unwrap() {
                counts.push(count);
            }
        }
        let sent = handle.join().unwrap();
        assert_eq!(sent, (0..50).map(|v| ServerBound::Mock { value: v }).collect::<Vec<_>>());
        assert_eq!(counts, (0..50).collect::<Vec<_>>());
    }
}
