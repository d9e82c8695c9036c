//! Step-based environment over line-delimited JSON.
//!
//! Every request is one JSON object on one line and carries a `seq` number;
//! every request gets exactly one reply echoing it. The message catalogue is
//! documented in `docs/env-protocol.md`.

use crate::error::Error;
use crate::optimizer::DEFAULT_TTI_LEVELS_S;
use crate::scenario::Scenario;
use crate::sim::{FrameAlloc, PacketRecord, SimMode, Simulation, Step};
use log::{debug, info, warn};
use serde_json::{json, Map, Value};
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, ToSocketAddrs};
use std::path::PathBuf;

/// Error codes carried by `error` replies.
pub mod codes {
    pub const MALFORMED: &str = "MALFORMED";
    pub const UNKNOWN_TYPE: &str = "UNKNOWN_TYPE";
    pub const NOT_READY: &str = "NOT_READY";
    pub const EXCLUSIVITY: &str = "EXCLUSIVITY";
    pub const BOUNDS: &str = "BOUNDS";
    pub const INFEASIBLE: &str = "INFEASIBLE";
    pub const EPISODE_DONE: &str = "EPISODE_DONE";
    pub const SCENARIO: &str = "SCENARIO";
}

/// Episodes are cut after this many steps per packet.
pub const STEP_CAP_PER_PACKET: usize = 100;

struct Fault {
    code: &'static str,
    message: String,
}

fn fault(code: &'static str, message: impl Into<String>) -> Fault {
    Fault {
        code,
        message: message.into(),
    }
}

struct Episode {
    sim: Simulation,
    step_index: usize,
    step_cap: usize,
    done: bool,
    ret: f64,
    resolved: usize,
}

/// One client session. Requests are processed strictly in order.
pub struct Session {
    scenario: Option<Scenario>,
    levels: Vec<f64>,
    mode: SimMode,
    episode: Option<Episode>,
}

impl Default for Session {
    fn default() -> Self {
        Session::new(None)
    }
}

impl Session {
    /// A session, optionally preloaded with a scenario so `hello` may omit it.
    pub fn new(scenario: Option<Scenario>) -> Self {
        Session {
            scenario,
            levels: DEFAULT_TTI_LEVELS_S.to_vec(),
            mode: SimMode::Sampled,
            episode: None,
        }
    }

    /// Handle one request line and produce the reply line (without newline).
    pub fn handle_line(&mut self, line: &str) -> String {
        let request: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return error_reply(Value::Null, &fault(codes::MALFORMED, format!("not JSON: {e}"))),
        };
        let seq = request.get("seq").cloned().unwrap_or(Value::Null);
        let Some(obj) = request.as_object() else {
            return error_reply(seq, &fault(codes::MALFORMED, "request must be an object"));
        };
        let result = match obj.get("type").and_then(Value::as_str) {
            None => Err(fault(codes::MALFORMED, "missing string field 'type'")),
            Some("hello") => self.hello(obj),
            Some("reset") => self.reset(obj),
            Some("step") => self.step(obj),
            Some(other) => Err(fault(codes::UNKNOWN_TYPE, format!("unknown message type '{other}'"))),
        };
        match result {
            Ok(mut reply) => {
                reply.insert("seq".into(), seq);
                Value::Object(reply).to_string()
            }
            Err(f) => {
                debug!("request rejected: {} {}", f.code, f.message);
                error_reply(seq, &f)
            }
        }
    }

    fn hello(&mut self, obj: &Map<String, Value>) -> Result<Map<String, Value>, Fault> {
        if let Some(path) = obj.get("scenario").and_then(Value::as_str) {
            let s = Scenario::from_path(PathBuf::from(path)).map_err(|e| fault(codes::SCENARIO, e.to_string()))?;
            self.scenario = Some(s);
        } else if let Some(text) = obj.get("scenario_text").and_then(Value::as_str) {
            let s = Scenario::parse(text).map_err(|e| fault(codes::SCENARIO, e.to_string()))?;
            self.scenario = Some(s);
        }
        if let Some(levels) = obj.get("tti_levels_s") {
            let parsed: Vec<f64> = serde_json::from_value(levels.clone())
                .map_err(|_| fault(codes::MALFORMED, "tti_levels_s must be a list of numbers"))?;
            if parsed.is_empty() || parsed.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                return Err(fault(codes::BOUNDS, "tti_levels_s must be non-empty and positive"));
            }
            self.levels = parsed;
        }
        if let Some(mode) = obj.get("mode") {
            self.mode = serde_json::from_value(mode.clone())
                .map_err(|_| fault(codes::MALFORMED, "mode must be 'expected' or 'sampled'"))?;
        }
        let Some(s) = &self.scenario else {
            return Err(fault(
                codes::SCENARIO,
                "no scenario loaded; pass 'scenario' with a file path",
            ));
        };
        self.episode = None;
        let q = s.queues();
        let mut reply = Map::new();
        reply.insert("type".into(), json!("spec"));
        reply.insert("version".into(), json!(crate::VERSION));
        reply.insert("users".into(), json!(s.users));
        reply.insert("queues".into(), json!(q));
        reply.insert("subchannels".into(), json!(s.subchannels));
        reply.insert("period_s".into(), json!(s.period_s));
        reply.insert("packet_bits".into(), json!(s.packet_bits));
        reply.insert("mode".into(), json!(self.mode));
        reply.insert("tti_levels_s".into(), json!(self.levels));
        reply.insert(
            "observation".into(),
            json!({
                "layout": [
                    {"name": "queue_bits", "len": q},
                    {"name": "hol_wait_s", "len": q},
                    {"name": "busy", "len": q},
                    {"name": "gain_db", "len": s.users * s.subchannels},
                    {"name": "remaining_period_s", "len": 1},
                    {"name": "step_index", "len": 1},
                ],
                "size": 3 * q + s.users * s.subchannels + 2,
            }),
        );
        reply.insert(
            "action".into(),
            json!({
                "assignment_len": s.subchannels,
                "user_choices": q,
                "tti_levels": self.levels.len(),
                "joint_size": (q as f64 + 1.0).powi(s.subchannels as i32) * (self.levels.len() as f64).powi(q as i32),
            }),
        );
        Ok(reply)
    }

    fn reset(&mut self, obj: &Map<String, Value>) -> Result<Map<String, Value>, Fault> {
        let Some(base) = &self.scenario else {
            return Err(fault(codes::NOT_READY, "send hello first"));
        };
        let mut s = base.clone();
        if let Some(seed) = obj.get("seed") {
            s.seed = seed
                .as_u64()
                .ok_or_else(|| fault(codes::MALFORMED, "seed must be a non-negative integer"))?;
        }
        let sim = Simulation::new(&s, self.mode).map_err(|e| fault(codes::SCENARIO, e.to_string()))?;
        let packets = sim.arrivals().len();
        let mut ep = Episode {
            sim,
            step_index: 0,
            step_cap: STEP_CAP_PER_PACKET * packets.max(1),
            done: false,
            ret: 0.0,
            resolved: 0,
        };
        let (_, _, done) = advance(&mut ep).map_err(|e| fault(codes::SCENARIO, e.to_string()))?;
        ep.done = done;
        info!("episode reset: seed {}, {packets} packets", s.seed);
        let mut reply = Map::new();
        reply.insert("type".into(), json!("observation"));
        reply.insert("packets".into(), json!(packets));
        insert_observation(&mut reply, &ep);
        reply.insert("done".into(), json!(ep.done));
        self.episode = Some(ep);
        Ok(reply)
    }

    fn step(&mut self, obj: &Map<String, Value>) -> Result<Map<String, Value>, Fault> {
        let levels = self.levels.clone();
        let Some(ep) = self.episode.as_mut() else {
            return Err(fault(codes::NOT_READY, "send reset first"));
        };
        if ep.done {
            return Err(fault(codes::EPISODE_DONE, "episode finished; send reset"));
        }
        let action = obj
            .get("action")
            .and_then(Value::as_object)
            .ok_or_else(|| fault(codes::MALFORMED, "step needs an 'action' object"))?;
        let allocs = parse_action(action, ep.sim.scenario(), &levels)?;
        if allocs.is_empty() {
            let tick = levels.iter().copied().fold(f64::INFINITY, f64::min);
            ep.sim.wait(tick).map_err(|e| fault(codes::BOUNDS, e.to_string()))?;
        } else {
            ep.sim.apply(&allocs).map_err(|e| match e {
                Error::SchedulingConflict { .. } => fault(codes::EXCLUSIVITY, e.to_string()),
                Error::Infeasible(_) => fault(codes::INFEASIBLE, e.to_string()),
                other => fault(codes::BOUNDS, other.to_string()),
            })?;
        }
        ep.step_index += 1;
        let (resolved, reward_done, finished) = advance(ep).map_err(|e| fault(codes::SCENARIO, e.to_string()))?;
        let mut reward = reward_done;
        let mut truncated = false;
        if !finished && ep.step_index >= ep.step_cap {
            truncated = true;
            let pending = ep.sim.arrivals().len() - ep.resolved;
            reward -= ep.sim.scenario().period_s * pending as f64;
            warn!(
                "episode truncated after {} steps with {pending} packets pending",
                ep.step_index
            );
        }
        ep.done = finished || truncated;
        ep.ret += reward;
        let mut reply = Map::new();
        reply.insert("type".into(), json!("transition"));
        reply.insert("reward".into(), json!(reward));
        reply.insert("done".into(), json!(ep.done));
        insert_observation(&mut reply, ep);
        let records: Vec<Value> = resolved
            .iter()
            .map(|r| {
                json!({
                    "id": r.id, "user": r.user, "dropped": r.dropped,
                    "attempts": r.attempts, "total_s": r.breakdown.total_s,
                })
            })
            .collect();
        reply.insert(
            "info".into(),
            json!({
                "time_s": ep.sim.time_s(),
                "resolved": records,
                "truncated": truncated,
                "episode_return": ep.ret,
            }),
        );
        Ok(reply)
    }
}

/// Run to the next decision point; returns packets resolved on the way, their reward and whether the episode ended.
fn advance(ep: &mut Episode) -> crate::error::Result<(Vec<PacketRecord>, f64, bool)> {
    let step = ep.sim.next_decision()?;
    let resolved = ep.sim.take_resolved();
    ep.resolved += resolved.len();
    let period = ep.sim.scenario().period_s;
    let reward = resolved
        .iter()
        .map(|r| if r.dropped { -period } else { -r.breakdown.total_s })
        .sum();
    let done = match step {
        Step::Decision(_) => false,
        Step::Finished | Step::Stalled => true,
    };
    Ok((resolved, reward, done))
}

fn insert_observation(reply: &mut Map<String, Value>, ep: &Episode) {
    let s = ep.sim.scenario();
    let snap = ep.sim.snapshot();
    let now = ep.sim.time_s();
    let queue_bits = ep.sim.queue_bits();
    let hol: Vec<f64> = snap.head.iter().map(|h| h.map_or(0.0, |p| now - p.arrival_s)).collect();
    let busy: Vec<f64> = (0..s.queues())
        .map(|q| (queue_bits[q] / s.packet_bits > snap.waiting[q] as u64) as u8 as f64)
        .collect();
    let mut gain = Vec::with_capacity(s.users * s.subchannels);
    for u in 0..s.users {
        let g = match &s.snr_db {
            Some(v) if v.len() == 1 => v[0],
            Some(v) => v[u],
            None => s.gain_db(u),
        };
        gain.extend(std::iter::repeat_n(g, s.subchannels));
    }
    let remaining = (s.period_s - now).max(0.0);
    let mut flat: Vec<f64> = queue_bits.iter().map(|&b| b as f64).collect();
    flat.extend(&hol);
    flat.extend(&busy);
    flat.extend(&gain);
    flat.push(remaining);
    flat.push(ep.step_index as f64);
    reply.insert(
        "observation".into(),
        json!({
            "queue_bits": queue_bits,
            "hol_wait_s": hol,
            "busy": busy,
            "gain_db": gain,
            "remaining_period_s": remaining,
            "step_index": ep.step_index,
            "vector": flat,
        }),
    );
}

fn error_reply(seq: Value, f: &Fault) -> String {
    json!({"seq": seq, "type": "error", "code": f.code, "message": f.message}).to_string()
}

fn tti_from(value: Option<&Value>, levels: &[f64], what: &str) -> Result<Option<f64>, Fault> {
    match value {
        None | Some(Value::Null) => Ok(None),
        Some(v) => {
            let x = v
                .as_f64()
                .ok_or_else(|| fault(codes::MALFORMED, format!("{what} must be a number")))?;
            if what.ends_with("tti_index") {
                let i = v
                    .as_u64()
                    .ok_or_else(|| fault(codes::BOUNDS, format!("{what} {x} is not a level index")))?;
                levels
                    .get(i as usize)
                    .copied()
                    .map(Some)
                    .ok_or_else(|| fault(codes::BOUNDS, format!("{what} {i} outside 0..{}", levels.len())))
            } else if x > 0.0 && x.is_finite() {
                Ok(Some(x))
            } else {
                Err(fault(codes::BOUNDS, format!("{what} {x} must be positive")))
            }
        }
    }
}

fn as_list<'a>(v: &'a Value, what: &str) -> Result<&'a Vec<Value>, Fault> {
    v.as_array()
        .ok_or_else(|| fault(codes::MALFORMED, format!("{what} must be a list")))
}

/// Decode an action into frames. Both the assignment-vector and grant-list forms are accepted.
fn parse_action(action: &Map<String, Value>, s: &Scenario, levels: &[f64]) -> Result<Vec<FrameAlloc>, Fault> {
    let queues = s.queues();
    let mut frames: Vec<FrameAlloc> = Vec::new();
    let mut owner: Vec<Option<usize>> = vec![None; s.subchannels];
    let claim = |sub: usize, q: usize, owner: &mut Vec<Option<usize>>| -> Result<(), Fault> {
        if sub >= s.subchannels {
            return Err(fault(
                codes::BOUNDS,
                format!("subchannel {sub} outside 0..{}", s.subchannels),
            ));
        }
        if q >= queues {
            return Err(fault(codes::BOUNDS, format!("user {q} outside 0..{queues}")));
        }
        match owner[sub] {
            Some(other) if other != q => Err(fault(
                codes::EXCLUSIVITY,
                format!("subchannel {sub} given to users {other} and {q}"),
            )),
            _ => {
                owner[sub] = Some(q);
                Ok(())
            }
        }
    };
    if let Some(grants) = action.get("grants") {
        for g in as_list(grants, "grants")? {
            let user =
                g.get("user")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| fault(codes::MALFORMED, "grant needs an integer 'user'"))? as usize;
            let subs = as_list(g.get("subchannels").unwrap_or(&Value::Null), "grant subchannels")?;
            let mut list = Vec::new();
            for v in subs {
                let sub = v
                    .as_u64()
                    .ok_or_else(|| fault(codes::MALFORMED, "subchannel ids must be integers"))?
                    as usize;
                claim(sub, user, &mut owner)?;
                list.push(sub);
            }
            let tti = match tti_from(g.get("tti_index"), levels, "tti_index")? {
                Some(t) => t,
                None => tti_from(g.get("tti_s"), levels, "tti_s")?
                    .ok_or_else(|| fault(codes::MALFORMED, "grant needs tti_index or tti_s"))?,
            };
            if frames.iter().any(|f| f.user == user) {
                return Err(fault(codes::EXCLUSIVITY, format!("user {user} granted twice")));
            }
            frames.push(FrameAlloc::new(user, list, tti));
        }
        return Ok(frames);
    }
    let assignment = action
        .get("assignment")
        .ok_or_else(|| fault(codes::MALFORMED, "action needs 'assignment' or 'grants'"))?;
    let assignment = as_list(assignment, "assignment")?;
    if assignment.len() != s.subchannels {
        return Err(fault(
            codes::BOUNDS,
            format!(
                "assignment has {} entries for {} subchannels",
                assignment.len(),
                s.subchannels
            ),
        ));
    }
    for (sub, entry) in assignment.iter().enumerate() {
        let users: Vec<i64> = match entry {
            Value::Array(v) => v.iter().filter_map(Value::as_i64).collect(),
            other => vec![other
                .as_i64()
                .ok_or_else(|| fault(codes::MALFORMED, "assignment entries are user indices or -1"))?],
        };
        for u in users.into_iter().filter(|&u| u >= 0) {
            claim(sub, u as usize, &mut owner)?;
        }
    }
    let by_index = action.get("tti_index").map(|v| as_list(v, "tti_index")).transpose()?;
    let by_time = action.get("tti_s").map(|v| as_list(v, "tti_s")).transpose()?;
    for q in 0..queues {
        let subs: Vec<usize> = (0..s.subchannels).filter(|&x| owner[x] == Some(q)).collect();
        if subs.is_empty() {
            continue;
        }
        let tti = match (by_index, by_time) {
            (Some(v), _) => tti_from(v.get(q), levels, "tti_index")?,
            (None, Some(v)) => tti_from(v.get(q), levels, "tti_s")?,
            (None, None) => return Err(fault(codes::MALFORMED, "action needs tti_index or tti_s")),
        }
        .ok_or_else(|| fault(codes::BOUNDS, format!("no TTI for user {q}")))?;
        frames.push(FrameAlloc::new(q, subs, tti));
    }
    Ok(frames)
}

/// Serve one session over a pair of streams until the reader closes.
pub fn serve_stream<R: BufRead, W: Write>(reader: R, mut writer: W, scenario: Option<Scenario>) -> io::Result<()> {
    let mut session = Session::new(scenario);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = session.handle_line(&line);
        writeln!(writer, "{reply}")?;
        writer.flush()?;
    }
    Ok(())
}

pub fn serve_stdio(scenario: Option<Scenario>) -> io::Result<()> {
    let stdin = io::stdin();
    let stdout = io::stdout();
    serve_stream(stdin.lock(), stdout.lock(), scenario)
}

/// Accept connections forever, one thread and one session per connection.
pub fn serve_tcp(addr: impl ToSocketAddrs, scenario: Option<Scenario>) -> io::Result<()> {
    let listener = TcpListener::bind(addr)?;
    info!("listening on {}", listener.local_addr()?);
    for stream in listener.incoming() {
        let stream = stream?;
        let peer = stream.peer_addr().ok();
        let scenario = scenario.clone();
        std::thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(e) => {
                    warn!("connection {peer:?}: {e}");
                    return;
                }
            };
            if let Err(e) = serve_stream(reader, stream, scenario) {
                warn!("connection {peer:?} closed: {e}");
            }
        });
    }
    Ok(())
}
