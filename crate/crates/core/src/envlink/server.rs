use std::io::{self, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::envs::{EnvError, EnvSpec, Environment};

use super::frame::{get_f64s, put_f64s, read_frame, write_frame, Frame, FrameError, FrameType};
use super::{encode_error, encode_spec_payload, ErrorCode};

/// Builds the environment behind one connection from the HELLO name (empty
/// for the server default).
pub type EnvFactory = dyn Fn(&str) -> Result<Box<dyn Environment>, EnvError> + Send + Sync;

fn env_error_code(e: &EnvError) -> ErrorCode {
    match e {
        EnvError::NotReset => ErrorCode::NotReset,
        EnvError::ActionWidth { .. } => ErrorCode::ActionWidth,
        EnvError::NonFiniteAction => ErrorCode::NonFiniteAction,
        EnvError::UnknownEnv(_) => ErrorCode::UnknownEnv,
        _ => ErrorCode::EnvFault,
    }
}

fn error_frame(code: ErrorCode, message: impl AsRef<str>) -> Frame {
    Frame::new(FrameType::Error, encode_error(code as u16, message.as_ref()))
}

fn obs_payload(obs: &[f64], spec: &EnvSpec) -> Vec<u8> {
    let mut p = Vec::with_capacity(8 * (obs.len() + 7));
    put_f64s(&mut p, obs);
    put_f64s(&mut p, &spec.target.position);
    put_f64s(&mut p, &spec.target.orientation);
    p
}

/// The reply to one request and whether the connection stays open.
fn respond(env: &mut Option<Box<dyn Environment>>, factory: &EnvFactory, frame: &Frame) -> (Frame, bool) {
    let Some(kind) = frame.frame_type() else {
        return (error_frame(ErrorCode::UnknownType, format!("unknown frame type 0x{:02x}", frame.kind)), true);
    };
    if kind == FrameType::Close {
        return (Frame::new(FrameType::Close, Vec::new()), false);
    }
    if kind == FrameType::Hello {
        if env.is_some() {
            return (error_frame(ErrorCode::Handshake, "HELLO already received"), true);
        }
        let Ok(name) = std::str::from_utf8(&frame.payload) else {
            return (error_frame(ErrorCode::Malformed, "HELLO name is not UTF-8"), true);
        };
        return match factory(name) {
            Ok(e) => {
                let f = Frame::new(FrameType::Spec, encode_spec_payload(e.spec()));
                *env = Some(e);
                (f, true)
            }
            Err(e) => (error_frame(env_error_code(&e), e.to_string()), true),
        };
    }
    let Some(e) = env.as_mut() else {
        return (error_frame(ErrorCode::Handshake, "HELLO must come first"), true);
    };
    let reply = match kind {
        FrameType::Reset if frame.payload.is_empty() => match e.reset() {
            Ok(obs) => Frame::new(FrameType::Obs, obs_payload(&obs, e.spec())),
            Err(err) => error_frame(env_error_code(&err), err.to_string()),
        },
        FrameType::Step => match get_f64s(&frame.payload) {
            Some(action) => match e.step(&action) {
                Ok(t) => {
                    let mut p = Vec::with_capacity(8 * t.observation.len() + 9);
                    put_f64s(&mut p, &t.observation);
                    p.extend_from_slice(&t.reward.to_le_bytes());
                    p.push(u8::from(t.done));
                    Frame::new(FrameType::Transition, p)
                }
                Err(err) => error_frame(env_error_code(&err), err.to_string()),
            },
            None => error_frame(ErrorCode::Malformed, "STEP payload is not a whole number of f64"),
        },
        FrameType::Seed if frame.payload.len() == 8 => {
            let seed = u64::from_le_bytes(frame.payload[..].try_into().expect("8 bytes"));
            match e.seed(seed) {
                Ok(()) => Frame::new(FrameType::Seed, Vec::new()),
                Err(err) => error_frame(env_error_code(&err), err.to_string()),
            }
        }
        FrameType::Reset | FrameType::Seed => error_frame(ErrorCode::Malformed, "unexpected payload length"),
        other => error_frame(ErrorCode::UnexpectedType, format!("{other:?} is not a request")),
    };
    (reply, true)
}

/// Serves one connection until CLOSE, end of stream, or an unrecoverable
/// framing error (oversized or zero length prefix, which cannot be resynced).
pub fn serve_connection<S: Read + Write>(stream: S, factory: &EnvFactory) -> io::Result<()> {
    let mut stream = BufReaderWriter::new(stream);
    let mut env: Option<Box<dyn Environment>> = None;
    loop {
        let frame = match read_frame(&mut stream)? {
            None => return Ok(()),
            Some(Ok(f)) => f,
            Some(Err(e @ (FrameError::TooLong(_) | FrameError::ZeroLength))) => {
                write_frame(&mut stream, &error_frame(ErrorCode::Malformed, e.to_string()))?;
                return Ok(());
            }
            Some(Err(e)) => {
                write_frame(&mut stream, &error_frame(ErrorCode::Malformed, e.to_string()))?;
                continue;
            }
        };
        let (reply, keep) = respond(&mut env, factory, &frame);
        write_frame(&mut stream, &reply)?;
        if !keep {
            return Ok(());
        }
    }
}

struct BufReaderWriter<S: Read + Write> {
    inner: BufReader<S>,
}

impl<S: Read + Write> BufReaderWriter<S> {
    fn new(s: S) -> Self {
        Self { inner: BufReader::new(s) }
    }
}

impl<S: Read + Write> Read for BufReaderWriter<S> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.inner.read(buf)
    }
}

impl<S: Read + Write> Write for BufReaderWriter<S> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.inner.get_mut().write(buf)
    }
    fn flush(&mut self) -> io::Result<()> {
        self.inner.get_mut().flush()
    }
}

/// A listening server; each accepted connection runs on its own thread.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl Server {
    pub fn bind<A: ToSocketAddrs>(addr: A, factory: Arc<EnvFactory>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let accept = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let _ = stream.set_nodelay(true);
                let f = Arc::clone(&factory);
                std::thread::spawn(move || {
                    let _ = serve_connection(stream, &*f);
                });
            }
        });
        Ok(Self { addr, stop, accept: Some(accept) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop ends.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    /// Stops accepting new connections. Open connections run to completion.
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_accepting();
        }
    }
}
