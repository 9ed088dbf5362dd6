//! Out-of-process environments over a length-prefixed TCP protocol.
//!
//! Every frame is `[len: u32 LE][type: u8][payload]` with `len` counting the
//! type byte. Reals are `f64` little-endian, so a remote environment is
//! bit-identical to the local one it wraps. A session is
//! `HELLO(name) → SPEC`, then any sequence of `SEED(u64) → SEED`,
//! `RESET → OBS`, `STEP(action) → TRANSITION`, and finally `CLOSE → CLOSE`.
//! Failures come back as `ERROR(code: u16 LE, message)` and leave the
//! connection open.
//!
//! SPEC: `N, M, max_episode_steps` as u32, variant id, target position and
//! quaternion (7 f64), then the environment name.
//! OBS: the observation followed by the current target pose (7 f64).

mod frame;
mod server;

pub use frame::{decode_frame, encode_frame, read_frame, write_frame, Frame, FrameDecoder, FrameError, FrameType, MAX_FRAME_LEN};
pub use server::{serve_connection, EnvFactory, Server};

use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Arc;

use crate::envs::{make_env, EnvError, EnvSpec, Environment, Pose, ReacherOptions, Transition, Variant};

use frame::{get_f64s, put_f64s};

/// Environment variable consulted for the server address when no flag is given.
pub const ENDPOINT_ENV: &str = "POLGRAD_ENV_ENDPOINT";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u16)]
pub enum ErrorCode {
    Malformed = 1,
    UnknownType = 2,
    UnexpectedType = 3,
    Handshake = 4,
    NotReset = 5,
    ActionWidth = 6,
    NonFiniteAction = 7,
    UnknownEnv = 8,
    EnvFault = 9,
}

pub(crate) fn encode_error(code: u16, message: &str) -> Vec<u8> {
    let mut p = code.to_le_bytes().to_vec();
    p.extend_from_slice(message.as_bytes());
    p
}

pub fn decode_error(payload: &[u8]) -> (u16, String) {
    if payload.len() < 2 {
        return (0, String::from_utf8_lossy(payload).into_owned());
    }
    (u16::from_le_bytes([payload[0], payload[1]]), String::from_utf8_lossy(&payload[2..]).into_owned())
}

pub fn encode_spec_payload(spec: &EnvSpec) -> Vec<u8> {
    let mut p = Vec::new();
    for d in [spec.obs_dim, spec.act_dim, spec.max_episode_steps] {
        p.extend_from_slice(&u32::try_from(d).expect("dimension fits in u32").to_le_bytes());
    }
    p.push(spec.variant.id());
    put_f64s(&mut p, &spec.target.position);
    put_f64s(&mut p, &spec.target.orientation);
    p.extend_from_slice(spec.name.as_bytes());
    p
}

pub fn decode_spec_payload(p: &[u8]) -> Result<EnvSpec, EnvError> {
    let bad = |m: &str| EnvError::Protocol(format!("SPEC payload: {m}"));
    if p.len() < 13 + 56 {
        return Err(bad("too short"));
    }
    let u = |i: usize| u32::from_le_bytes(p[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    let variant = Variant::from_id(p[12]).ok_or_else(|| bad("unknown variant"))?;
    let reals = get_f64s(&p[13..69]).ok_or_else(|| bad("target"))?;
    let name = std::str::from_utf8(&p[69..]).map_err(|_| bad("name is not UTF-8"))?;
    let spec = EnvSpec {
        name: name.to_string(),
        obs_dim: u(0),
        act_dim: u(1),
        max_episode_steps: u(2),
        variant,
        target: Pose { position: [reals[0], reals[1], reals[2]], orientation: [reals[3], reals[4], reals[5], reals[6]] },
    };
    if spec.obs_dim != spec.act_dim + 7 {
        return Err(bad("observation width is not action width + 7"));
    }
    Ok(spec)
}

/// Client side of a session; implements [`Environment`].
pub struct RemoteEnv {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    spec: EnvSpec,
    closed: bool,
}

impl RemoteEnv {
    /// Connects and performs the HELLO handshake. An empty `name` asks for the
    /// server's default environment.
    pub fn connect<A: ToSocketAddrs>(addr: A, name: &str) -> Result<Self, EnvError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut env = Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            spec: EnvSpec {
                name: String::new(),
                obs_dim: 7,
                act_dim: 0,
                max_episode_steps: 0,
                variant: Variant::Reach,
                target: Pose::identity_at([0.0; 3]),
            },
            closed: false,
        };
        let reply = env.request(FrameType::Hello, name.as_bytes().to_vec(), FrameType::Spec)?;
        env.spec = decode_spec_payload(&reply)?;
        Ok(env)
    }

    /// Address from [`ENDPOINT_ENV`].
    pub fn endpoint_from_env() -> Option<String> {
        std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty())
    }

    fn request(&mut self, kind: FrameType, payload: Vec<u8>, expect: FrameType) -> Result<Vec<u8>, EnvError> {
        if self.closed {
            return Err(EnvError::Protocol("session is closed".into()));
        }
        write_frame(&mut self.writer, &Frame::new(kind, payload))?;
        let reply = match read_frame(&mut self.reader)? {
            None => return Err(EnvError::Protocol("server closed the connection".into())),
            Some(Err(e)) => return Err(EnvError::Protocol(e.to_string())),
            Some(Ok(f)) => f,
        };
        match reply.frame_type() {
            Some(t) if t == expect => Ok(reply.payload),
            Some(FrameType::Error) => {
                let (code, message) = decode_error(&reply.payload);
                Err(EnvError::Remote { code, message })
            }
            _ => Err(EnvError::Protocol(format!("expected {expect:?}, got type 0x{:02x}", reply.kind))),
        }
    }

    pub fn close(mut self) -> Result<(), EnvError> {
        self.request(FrameType::Close, Vec::new(), FrameType::Close)?;
        self.closed = true;
        Ok(())
    }
}

impl Drop for RemoteEnv {
    fn drop(&mut self) {
        if !self.closed {
            self.closed = true;
            let _ = write_frame(&mut self.writer, &Frame::new(FrameType::Close, Vec::new()));
        }
    }
}

impl Environment for RemoteEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn seed(&mut self, seed: u64) -> Result<(), EnvError> {
        self.request(FrameType::Seed, seed.to_le_bytes().to_vec(), FrameType::Seed).map(|_| ())
    }

    fn reset(&mut self) -> Result<Vec<f64>, EnvError> {
        let p = self.request(FrameType::Reset, Vec::new(), FrameType::Obs)?;
        let n = self.spec.obs_dim;
        let reals = get_f64s(&p).filter(|r| r.len() == n + 7).ok_or_else(|| EnvError::Protocol("OBS payload".into()))?;
        self.spec.target = Pose {
            position: [reals[n], reals[n + 1], reals[n + 2]],
            orientation: [reals[n + 3], reals[n + 4], reals[n + 5], reals[n + 6]],
        };
        Ok(reals[..n].to_vec())
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition, EnvError> {
        let mut p = Vec::with_capacity(8 * action.len());
        put_f64s(&mut p, action);
        let t = self.request(FrameType::Step, p, FrameType::Transition)?;
        let n = self.spec.obs_dim;
        if t.len() != 8 * n + 9 || t[8 * n + 8] > 1 {
            return Err(EnvError::Protocol("TRANSITION payload".into()));
        }
        let observation = get_f64s(&t[..8 * n]).expect("length checked");
        let reward = f64::from_le_bytes(t[8 * n..8 * n + 8].try_into().expect("8 bytes"));
        Ok(Transition { observation, reward, done: t[8 * n + 8] == 1 })
    }
}

/// A factory serving the named reachers with `options`; an empty HELLO name
/// picks `default_env`.
pub fn reacher_factory(default_env: String, options: ReacherOptions) -> Arc<EnvFactory> {
    Arc::new(move |name: &str| make_env(if name.is_empty() { &default_env } else { name }, &options))
}
