//! Length-prefixed wire protocol.
//!
//! A frame is a `u32` little-endian byte length followed by that many bytes
//! of UTF-8 JSON. Every message carries a `type` field:
//!
//! | type   | direction        | fields                                         |
//! |--------|------------------|------------------------------------------------|
//! | RESET  | client → server  | `seed`, optional `family` or `scenario` (TOML)  |
//! | STEP   | either           | `p`, `s` as `[row, col]`                       |
//! | RENDER | client → server  |                                                |
//! | CLOSE  | either           |                                                |
//! | OBS    | either           | `obs` (base64 HMAP1), `step`, `done`, `failed`, optional `world`, `pose` |
//! | RESULT | server → client  | `obs`, `reward`, `components`, `done`, `failed`, `duration`, `step` |
//! | ERROR  | server → client  | `code`, `message`                              |
//!
//! The environment server answers RESET with OBS, STEP with RESULT, RENDER
//! with OBS (including the full-resolution `world` map and the `pose`) and
//! CLOSE with CLOSE. An external policy works the other way round: the
//! harness sends OBS and the policy answers STEP, or CLOSE to stop.
//!
//! Floats travel as shortest round-trip decimal, so values are bit exact.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::thread::JoinHandle;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::heightmap::Grid;
use crate::hmap;
use crate::mdp::{Env, RewardComponents, StepResult, WaypointAction};
use crate::policy::{Policy, PolicyAction};
use crate::scenario::{Family, ScenarioSpec};

/// Frames above this size are refused.
pub const MAX_FRAME: u32 = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "UPPERCASE", deny_unknown_fields)]
pub enum Message {
    Reset {
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        family: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scenario: Option<String>,
    },
    Step {
        p: [i64; 2],
        s: [i64; 2],
    },
    Render {},
    Close {},
    Obs {
        obs: String,
        step: usize,
        done: bool,
        failed: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        world: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pose: Option<[f64; 3]>,
    },
    Result {
        obs: String,
        reward: f64,
        /// `[f_v, f_t, f_h, done_bonus, fail_penalty]`
        components: [f64; 5],
        done: bool,
        failed: bool,
        duration: f64,
        step: usize,
    },
    Error {
        code: String,
        message: String,
    },
}

pub mod codes {
    pub const MALFORMED: &str = "malformed";
    pub const UNEXPECTED: &str = "unexpected";
    pub const NO_SESSION: &str = "no_session";
    pub const INVALID: &str = "invalid";
    pub const FINISHED: &str = "finished";
}

pub fn encode_grid(g: &Grid) -> String {
    B64.encode(hmap::encode(g))
}

pub fn decode_grid(s: &str) -> Result<Grid> {
    let bytes = B64.decode(s).map_err(|e| Error::Protocol(format!("bad base64: {e}")))?;
    hmap::decode(&bytes)
}

pub fn write_frame(w: &mut impl Write, msg: &Message) -> Result<()> {
    let body = serde_json::to_vec(msg).map_err(|e| Error::Protocol(e.to_string()))?;
    write_raw_frame(w, &body)
}

pub fn write_raw_frame(w: &mut impl Write, body: &[u8]) -> Result<()> {
    let len = u32::try_from(body.len()).map_err(|_| Error::Protocol("frame too large".into()))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(body)?;
    w.flush()?;
    Ok(())
}

/// Next frame body, or `None` on a clean end of stream.
pub fn read_raw_frame(r: &mut impl Read) -> Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len);
    if len > MAX_FRAME {
        return Err(Error::Protocol(format!("frame of {len} bytes exceeds the limit")));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn parse_message(body: &[u8]) -> Result<Message> {
    serde_json::from_slice(body).map_err(|e| Error::Protocol(format!("bad message: {e}")))
}

pub fn read_frame(r: &mut impl Read) -> Result<Option<Message>> {
    read_raw_frame(r)?.map(|b| parse_message(&b)).transpose()
}

fn error_msg(code: &str, message: impl Into<String>) -> Message {
    Message::Error { code: code.to_string(), message: message.into() }
}

fn result_msg(r: &StepResult, step: usize) -> Message {
    let c = &r.components;
    Message::Result {
        obs: encode_grid(&r.observation),
        reward: r.reward,
        components: [c.f_v, c.f_t, c.f_h, c.done_bonus, c.fail_penalty],
        done: r.done,
        failed: r.failed,
        duration: r.info.duration,
        step,
    }
}

fn scenario_from(family: Option<&str>, scenario: Option<&str>) -> Result<ScenarioSpec> {
    match (family, scenario) {
        (Some(_), Some(_)) => Err(Error::InvalidParameter("give either family or scenario, not both".into())),
        (_, Some(text)) => ScenarioSpec::from_toml(text),
        (Some(f), None) => Ok(ScenarioSpec::preset(Family::parse(f)?)),
        (None, None) => Ok(ScenarioSpec::preset(Family::Init)),
    }
}

/// One connection's state.
struct Session {
    config: Config,
    env: Option<Env>,
}

impl Session {
    fn handle(&mut self, msg: Message) -> (Message, bool) {
        match msg {
            Message::Reset { seed, family, scenario } => {
                let spec = match scenario_from(family.as_deref(), scenario.as_deref()) {
                    Ok(s) => s,
                    Err(e) => return (error_msg(codes::INVALID, e.to_string()), false),
                };
                match Env::reset(&self.config, &spec, seed) {
                    Ok((env, obs)) => {
                        let reply = Message::Obs {
                            obs: encode_grid(&obs),
                            step: 0,
                            done: env.is_terminal(),
                            failed: false,
                            world: None,
                            pose: None,
                        };
                        self.env = Some(env);
                        (reply, false)
                    }
                    Err(e) => (error_msg(codes::INVALID, e.to_string()), false),
                }
            }
            Message::Step { p, s } => {
                let Some(env) = self.env.as_mut() else {
                    return (error_msg(codes::NO_SESSION, "STEP before RESET"), false);
                };
                match env.step(WaypointAction::new((p[0], p[1]), (s[0], s[1]))) {
                    Ok(r) => (result_msg(&r, env.steps()), false),
                    Err(Error::EpisodeFinished) => (error_msg(codes::FINISHED, "episode already finished"), false),
                    Err(e) => (error_msg(codes::INVALID, e.to_string()), false),
                }
            }
            Message::Render {} => {
                let Some(env) = self.env.as_ref() else {
                    return (error_msg(codes::NO_SESSION, "RENDER before RESET"), false);
                };
                let pose = env.dozer().pose;
                (
                    Message::Obs {
                        obs: encode_grid(env.observation()),
                        step: env.steps(),
                        done: env.status() == crate::mdp::EpisodeStatus::Done,
                        failed: env.status() == crate::mdp::EpisodeStatus::Failed,
                        world: Some(encode_grid(&env.delta())),
                        pose: Some([pose.x, pose.y, pose.heading]),
                    },
                    false,
                )
            }
            Message::Close {} => (Message::Close {}, true),
            other => (error_msg(codes::UNEXPECTED, format!("server does not accept {}", type_name(&other))), false),
        }
    }
}

fn type_name(m: &Message) -> &'static str {
    match m {
        Message::Reset { .. } => "RESET",
        Message::Step { .. } => "STEP",
        Message::Render {} => "RENDER",
        Message::Close {} => "CLOSE",
        Message::Obs { .. } => "OBS",
        Message::Result { .. } => "RESULT",
        Message::Error { .. } => "ERROR",
    }
}

fn serve_connection(stream: TcpStream, config: Config) -> Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut session = Session { config, env: None };
    loop {
        let body = match read_raw_frame(&mut reader) {
            Ok(Some(b)) => b,
            Ok(None) => return Ok(()),
            Err(Error::Protocol(m)) => {
                // framing is lost; report and hang up
                write_frame(&mut writer, &error_msg(codes::MALFORMED, m))?;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let (reply, close) = match parse_message(&body) {
            Ok(msg) => session.handle(msg),
            Err(e) => (error_msg(codes::MALFORMED, e.to_string()), false),
        };
        write_frame(&mut writer, &reply)?;
        if close {
            return Ok(());
        }
    }
}

/// Environment server: one thread and one isolated session per connection.
pub struct Server {
    listener: TcpListener,
    config: Config,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, config: Config) -> Result<Self> {
        config.validate()?;
        let listener = TcpListener::bind(addr)?;
        Ok(Self { listener, config })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn serve(self) -> Result<()> {
        for stream in self.listener.incoming() {
            let stream = stream?;
            let config = self.config.clone();
            std::thread::spawn(move || {
                let _ = serve_connection(stream, config);
            });
        }
        Ok(())
    }

    /// Serves on a background thread.
    pub fn spawn(self) -> Result<(SocketAddr, JoinHandle<Result<()>>)> {
        let addr = self.local_addr()?;
        Ok((addr, std::thread::spawn(move || self.serve())))
    }
}

/// Result of a remote STEP.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteStep {
    pub observation: Grid,
    pub reward: f64,
    pub components: RewardComponents,
    pub done: bool,
    pub failed: bool,
    pub duration: f64,
    pub step: usize,
}

/// Blocking client for the environment server.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { reader: BufReader::new(stream.try_clone()?), writer: BufWriter::new(stream) })
    }

    pub fn request(&mut self, msg: &Message) -> Result<Message> {
        write_frame(&mut self.writer, msg)?;
        self.receive()
    }

    pub fn send_raw(&mut self, body: &[u8]) -> Result<Message> {
        write_raw_frame(&mut self.writer, body)?;
        self.receive()
    }

    fn receive(&mut self) -> Result<Message> {
        read_frame(&mut self.reader)?.ok_or_else(|| Error::Protocol("connection closed".into()))
    }

    fn expect_obs(reply: Message) -> Result<Grid> {
        match reply {
            Message::Obs { obs, .. } => decode_grid(&obs),
            Message::Error { code, message } => Err(Error::Protocol(format!("{code}: {message}"))),
            other => Err(Error::Protocol(format!("unexpected {} reply", type_name(&other)))),
        }
    }

    pub fn reset(&mut self, seed: u64, spec: Option<&ScenarioSpec>) -> Result<Grid> {
        let reply = self.request(&Message::Reset { seed, family: None, scenario: spec.map(|s| s.to_toml()) })?;
        Self::expect_obs(reply)
    }

    pub fn reset_family(&mut self, seed: u64, family: Family) -> Result<Grid> {
        let reply = self.request(&Message::Reset { seed, family: Some(family.name().into()), scenario: None })?;
        Self::expect_obs(reply)
    }

    pub fn step(&mut self, action: WaypointAction) -> Result<RemoteStep> {
        let msg = Message::Step { p: [action.p.0, action.p.1], s: [action.s.0, action.s.1] };
        match self.request(&msg)? {
            Message::Result { obs, reward, components: c, done, failed, duration, step } => Ok(RemoteStep {
                observation: decode_grid(&obs)?,
                reward,
                components: RewardComponents { f_v: c[0], f_t: c[1], f_h: c[2], done_bonus: c[3], fail_penalty: c[4] },
                done,
                failed,
                duration,
                step,
            }),
            Message::Error { code, message } => Err(Error::Protocol(format!("{code}: {message}"))),
            other => Err(Error::Protocol(format!("unexpected {} reply", type_name(&other)))),
        }
    }

    /// Full-resolution difference map and dozer pose.
    pub fn render(&mut self) -> Result<(Grid, [f64; 3])> {
        match self.request(&Message::Render {})? {
            Message::Obs { world: Some(w), pose: Some(pose), .. } => Ok((decode_grid(&w)?, pose)),
            Message::Error { code, message } => Err(Error::Protocol(format!("{code}: {message}"))),
            other => Err(Error::Protocol(format!("unexpected {} reply", type_name(&other)))),
        }
    }

    pub fn close(mut self) -> Result<()> {
        match self.request(&Message::Close {})? {
            Message::Close {} => Ok(()),
            other => Err(Error::Protocol(format!("unexpected {} reply", type_name(&other)))),
        }
    }
}

/// A policy living in another process. The harness connects to it, sends
/// OBS for every decision and reads back STEP or CLOSE.
pub struct ExternalPolicy {
    addr: String,
    conn: Option<(BufReader<TcpStream>, BufWriter<TcpStream>)>,
}

impl ExternalPolicy {
    pub fn new(addr: impl Into<String>) -> Self {
        Self { addr: addr.into(), conn: None }
    }

    fn send_obs(&mut self, env: &Env) -> Result<()> {
        let (_, w) = self.conn.as_mut().ok_or_else(|| Error::Protocol("not connected".into()))?;
        let msg = Message::Obs {
            obs: encode_grid(env.observation()),
            step: env.steps(),
            done: env.status() == crate::mdp::EpisodeStatus::Done,
            failed: env.status() == crate::mdp::EpisodeStatus::Failed,
            world: None,
            pose: None,
        };
        write_frame(w, &msg)
    }
}

impl Policy for ExternalPolicy {
    fn name(&self) -> &str {
        "external"
    }

    fn begin(&mut self, _env: &Env) -> Result<()> {
        let stream = TcpStream::connect(&self.addr)?;
        stream.set_nodelay(true)?;
        self.conn = Some((BufReader::new(stream.try_clone()?), BufWriter::new(stream)));
        Ok(())
    }

    fn act(&mut self, env: &Env) -> Result<PolicyAction> {
        self.send_obs(env)?;
        let (r, _) = self.conn.as_mut().expect("connected in send_obs");
        match read_frame(r)? {
            Some(Message::Step { p, s }) => Ok(PolicyAction::Act(WaypointAction::new((p[0], p[1]), (s[0], s[1])))),
            Some(Message::Close {}) | None => Ok(PolicyAction::Stop),
            Some(other) => Err(Error::Protocol(format!("policy replied {}", type_name(&other)))),
        }
    }

    fn finish(&mut self, env: &Env) -> Result<()> {
        if self.conn.is_some() {
            // final observation, then hang up; the peer may already be gone
            let _ = self.send_obs(env);
            if let Some((_, w)) = self.conn.as_mut() {
                let _ = write_frame(w, &Message::Close {});
            }
            self.conn = None;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_json_shape() {
        let m = Message::Step { p: [1, 2], s: [3, 4] };
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(text, r#"{"type":"STEP","p":[1,2],"s":[3,4]}"#);
        assert_eq!(parse_message(br#"{"type":"CLOSE"}"#).unwrap(), Message::Close {});
        assert!(parse_message(br#"{"type":"JUMP"}"#).is_err());
        assert!(parse_message(b"not json").is_err());
    }

    #[test]
    fn frames_roundtrip() {
        let mut buf = Vec::new();
        let m = Message::Result {
            obs: "AAAA".into(),
            reward: 0.1 + 0.2,
            components: [1.0 / 3.0, 2.0, -0.0, 100.0, 0.0],
            done: true,
            failed: false,
            duration: 1e-300,
            step: 4,
        };
        write_frame(&mut buf, &m).unwrap();
        assert_eq!(u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize, buf.len() - 4);
        let back = read_frame(&mut buf.as_slice()).unwrap().unwrap();
        assert_eq!(back, m);
        if let Message::Result { reward, .. } = back {
            assert_eq!(reward.to_bits(), (0.1f64 + 0.2).to_bits());
        }
        assert!(read_frame(&mut [].as_slice()).unwrap().is_none());
    }

    #[test]
    fn oversized_frame_is_refused() {
        let bytes = (MAX_FRAME + 1).to_le_bytes();
        assert!(matches!(read_raw_frame(&mut bytes.as_slice()), Err(Error::Protocol(_))));
    }

    #[test]
    fn grid_base64_roundtrip() {
        let g = Grid::from_values(2, 2, 0.5, vec![0.5, -0.25, 0.0, 1.0]).unwrap();
        assert_eq!(decode_grid(&encode_grid(&g)).unwrap(), g);
        assert!(decode_grid("@@@").is_err());
    }
}
