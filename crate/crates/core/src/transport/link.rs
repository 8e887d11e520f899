//! Byte-frame links between the two endpoints of a channel.

use std::io::{self, BufReader, ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, Sender};
use std::thread::{self, JoinHandle};

use crate::error::{Error, Result};

pub trait FrameSink: Send {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<()>;
}

pub trait FrameSource: Send {
    fn recv_frame(&mut self) -> Result<Vec<u8>>;
}

pub struct InProcSink(Sender<Vec<u8>>);
pub struct InProcSource(Receiver<Vec<u8>>);

impl FrameSink for InProcSink {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<()> {
        self.0.send(frame).map_err(|_| Error::ChannelClosed)
    }
}

impl FrameSource for InProcSource {
    fn recv_frame(&mut self) -> Result<Vec<u8>> {
        self.0.recv().map_err(|_| Error::ChannelClosed)
    }
}

/// One direction of an unbounded in-process queue.
pub fn inproc_pipe() -> (InProcSink, InProcSource) {
    let (tx, rx) = mpsc::channel();
    (InProcSink(tx), InProcSource(rx))
}

/// Writes `u32 LE length | frame` to a socket from a background thread, so
/// `send` never blocks on a full kernel buffer while the peer is busy.
pub struct SocketSink {
    queue: Option<Sender<Vec<u8>>>,
    writer: Option<JoinHandle<io::Result<()>>>,
}

impl SocketSink {
    fn new(mut stream: TcpStream) -> Self {
        let (tx, rx) = mpsc::channel::<Vec<u8>>();
        let writer = thread::spawn(move || {
            for frame in rx {
                stream.write_all(&(frame.len() as u32).to_le_bytes())?;
                stream.write_all(&frame)?;
            }
            stream.flush()?;
            stream.shutdown(std::net::Shutdown::Write)
        });
        SocketSink {
            queue: Some(tx),
            writer: Some(writer),
        }
    }
}

impl FrameSink for SocketSink {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<()> {
        if u32::try_from(frame.len()).is_err() {
            return Err(Error::Size {
                rows: frame.len(),
                cols: 1,
            });
        }
        let queue = self.queue.as_ref().ok_or(Error::ChannelClosed)?;
        queue.send(frame).map_err(|_| Error::ChannelClosed)
    }
}

impl Drop for SocketSink {
    fn drop(&mut self) {
        self.queue.take();
        if let Some(w) = self.writer.take() {
            let _ = w.join();
        }
    }
}

pub struct SocketSource(BufReader<TcpStream>);

impl FrameSource for SocketSource {
    fn recv_frame(&mut self) -> Result<Vec<u8>> {
        let mut len = [0u8; 4];
        match self.0.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Err(Error::ChannelClosed),
            Err(e) => return Err(e.into()),
        }
        let mut frame = vec![0u8; u32::from_le_bytes(len) as usize];
        self.0.read_exact(&mut frame).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => Error::Protocol("stream ended mid-frame".into()),
            _ => e.into(),
        })?;
        Ok(frame)
    }
}

pub fn socket_halves(stream: TcpStream) -> Result<(SocketSink, SocketSource)> {
    stream.set_nodelay(true)?;
    let reader = stream.try_clone()?;
    Ok((SocketSink::new(stream), SocketSource(BufReader::new(reader))))
}

/// Accepts a single peer on `addr`.
pub fn listen(addr: impl ToSocketAddrs) -> Result<(SocketSink, SocketSource)> {
    let listener = TcpListener::bind(addr)?;
    let (stream, _) = listener.accept()?;
    socket_halves(stream)
}

pub fn connect(addr: impl ToSocketAddrs) -> Result<(SocketSink, SocketSource)> {
    socket_halves(TcpStream::connect(addr)?)
}

/// Two connected socket endpoints over loopback (or `host:port`).
pub fn socket_pair(addr: &str) -> Result<((SocketSink, SocketSource), (SocketSink, SocketSource))> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let client = TcpStream::connect(local)?;
    let (server, _) = listener.accept()?;
    Ok((socket_halves(client)?, socket_halves(server)?))
}
