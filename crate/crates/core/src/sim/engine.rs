//! Event-driven variable-TTI queue.
//!
//! Packets wait FIFO per queue. Whenever a queue is idle with a waiting packet
//! and a subchannel is free, the simulation stops at a decision point and the
//! caller supplies frame allocations. An allocation holds its subchannels for
//! the whole service of one packet, retransmissions included.

use super::frame::{plan_frame, FrameAlloc, FramePlan};
use super::{Arrival, PacketRecord, SimMode, SimStats};
use crate::delay::{compose_over_the_air, expected_attempts, ComponentTimes};
use crate::error::{Error, Result};
use crate::protocol::{attempt_failure_prob, gf_collision_prob, ContentionConfig, ProtocolProfile};
use crate::scenario::Scenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};

/// Head-of-line packet as seen by a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketView {
    pub id: usize,
    pub user: usize,
    pub arrival_s: f64,
}

/// Snapshot handed to a policy at a decision point.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionContext {
    pub time_s: f64,
    /// Queues that are not in service and have a packet waiting.
    pub idle_queues: Vec<usize>,
    pub free_subchannels: Vec<usize>,
    /// Waiting packets per queue (excluding the one in service).
    pub waiting: Vec<usize>,
    /// Head-of-line waiting packet per queue.
    pub head: Vec<Option<PacketView>>,
    /// Queue currently holding each subchannel.
    pub holder: Vec<Option<usize>>,
}

pub trait Policy {
    fn decide(&mut self, ctx: &DecisionContext) -> Result<Vec<FrameAlloc>>;
}

impl<F> Policy for F
where
    F: FnMut(&DecisionContext) -> Result<Vec<FrameAlloc>>,
{
    fn decide(&mut self, ctx: &DecisionContext) -> Result<Vec<FrameAlloc>> {
        self(ctx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Decision(DecisionContext),
    /// Every packet has been served or dropped.
    Finished,
    /// Packets are waiting but nothing else will happen without an allocation.
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    Arrival(usize),
    AttemptStart(usize),
    AttemptEnd(usize),
    ServiceEnd(usize),
    Wake,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed: BinaryHeap pops the earliest event first
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone)]
struct Service {
    packet: usize,
    subchannels: Vec<usize>,
    tti_s: f64,
    frame: FramePlan,
    start_s: f64,
    attempts: u32,
    attempt_start_s: f64,
    resource: Option<usize>,
    decode_failed: bool,
}

#[derive(Debug, Clone, Copy)]
struct Span {
    queue: usize,
    resource: usize,
    start: f64,
    end: f64,
}

pub struct Simulation {
    scenario: Scenario,
    profile: ProtocolProfile,
    mode: SimMode,
    gap_s: f64,
    subchannel_bw: f64,
    packets: Vec<Arrival>,
    queues: Vec<VecDeque<usize>>,
    service: Vec<Option<Service>>,
    holder: Vec<Option<usize>>,
    events: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    declined_at: Option<f64>,
    rng: ChaCha8Rng,
    spans: Vec<Span>,
    frames: HashMap<(usize, usize, u64), FramePlan>,
    records: Vec<PacketRecord>,
    fresh: Vec<usize>,
    arrived: usize,
}

impl Simulation {
    /// Start a run on precomputed arrivals (sorted by time, ids `0..len`).
    pub fn with_arrivals(scenario: &Scenario, arrivals: Vec<Arrival>, mode: SimMode) -> Result<Self> {
        scenario.validate()?;
        for (i, a) in arrivals.iter().enumerate() {
            if a.id != i || a.user >= scenario.users {
                return Err(Error::validation(format!("arrival {i} is malformed")));
            }
        }
        let mut sim = Simulation {
            scenario: scenario.clone(),
            profile: scenario.profile(),
            mode,
            gap_s: scenario.retx_gap_s(),
            subchannel_bw: scenario.subchannel_bandwidth_hz(),
            queues: vec![VecDeque::new(); scenario.queues()],
            service: vec![None; scenario.queues()],
            holder: vec![None; scenario.subchannels],
            events: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            declined_at: None,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            spans: Vec::new(),
            frames: HashMap::new(),
            records: Vec::new(),
            fresh: Vec::new(),
            arrived: 0,
            packets: arrivals,
        };
        for i in 0..sim.packets.len() {
            let t = sim.packets[i].time_s;
            sim.push(t, EventKind::Arrival(i));
        }
        Ok(sim)
    }

    pub fn new(scenario: &Scenario, mode: SimMode) -> Result<Self> {
        let arrivals = super::generate_arrivals(scenario)?;
        Simulation::with_arrivals(scenario, arrivals, mode)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn time_s(&self) -> f64 {
        self.now
    }

    pub fn arrivals(&self) -> &[Arrival] {
        &self.packets
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Event {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn context(&self) -> DecisionContext {
        let idle_queues = (0..self.queues.len())
            .filter(|&q| self.service[q].is_none() && !self.queues[q].is_empty())
            .collect();
        let free_subchannels = (0..self.holder.len()).filter(|&s| self.holder[s].is_none()).collect();
        let head = self
            .queues
            .iter()
            .map(|q| {
                q.front().map(|&id| PacketView {
                    id,
                    user: self.packets[id].user,
                    arrival_s: self.packets[id].time_s,
                })
            })
            .collect();
        DecisionContext {
            time_s: self.now,
            idle_queues,
            free_subchannels,
            waiting: self.queues.iter().map(|q| q.len()).collect(),
            head,
            holder: self.holder.clone(),
        }
    }

    fn decision_pending(&self) -> bool {
        let idle = (0..self.queues.len()).any(|q| self.service[q].is_none() && !self.queues[q].is_empty());
        idle && self.holder.iter().any(|h| h.is_none())
    }

    /// Process events up to the next decision point.
    pub fn next_decision(&mut self) -> Result<Step> {
        loop {
            if self.declined_at != Some(self.now) && self.decision_pending() {
                // drain simultaneous events first so the policy sees a complete state
                match self.events.peek() {
                    Some(e) if e.time <= self.now => {}
                    _ => return Ok(Step::Decision(self.context())),
                }
            }
            let Some(ev) = self.events.pop() else {
                let waiting = self.queues.iter().any(|q| !q.is_empty());
                return Ok(if waiting { Step::Stalled } else { Step::Finished });
            };
            if ev.time > self.now {
                self.now = ev.time;
                self.declined_at = None;
            }
            self.handle(ev.kind)?;
        }
    }

    /// Let time pass without a decision; a new decision point follows at `now + dt`.
    pub fn wait(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::validation(format!("wait must be positive, got {dt}")));
        }
        self.declined_at = Some(self.now);
        let t = self.now + dt;
        self.push(t, EventKind::Wake);
        Ok(())
    }

    fn frame_for(&mut self, queue_user: usize, n_sub: usize, tti_s: f64) -> Result<FramePlan> {
        let key = (queue_user, n_sub, tti_s.to_bits());
        if let Some(p) = self.frames.get(&key) {
            return Ok(*p);
        }
        let plan = plan_frame(&self.scenario, queue_user, n_sub as f64 * self.subchannel_bw, tti_s)?;
        self.frames.insert(key, plan);
        Ok(plan)
    }

    /// Start the given frames. Validation is atomic: on error nothing changes.
    /// An empty list declines the current decision point.
    pub fn apply(&mut self, allocs: &[FrameAlloc]) -> Result<()> {
        let mut claimed: Vec<Option<usize>> = vec![None; self.holder.len()];
        let mut seen = vec![false; self.queues.len()];
        let mut plans = Vec::with_capacity(allocs.len());
        for a in allocs {
            if a.user >= self.queues.len() {
                return Err(Error::validation(format!("queue {} does not exist", a.user)));
            }
            if seen[a.user] {
                return Err(Error::validation(format!("queue {} allocated twice", a.user)));
            }
            seen[a.user] = true;
            if self.service[a.user].is_some() || self.queues[a.user].is_empty() {
                return Err(Error::validation(format!(
                    "queue {} has no waiting packet to serve",
                    a.user
                )));
            }
            if a.subchannels.is_empty() {
                return Err(Error::validation(format!(
                    "frame for queue {} has no subchannel",
                    a.user
                )));
            }
            for &s in &a.subchannels {
                if s >= self.holder.len() {
                    return Err(Error::validation(format!("subchannel {s} does not exist")));
                }
                if let Some(h) = self.holder[s].or(claimed[s]) {
                    return Err(Error::SchedulingConflict {
                        time_s: self.now,
                        subchannel: s,
                        user: a.user,
                        holder: h,
                    });
                }
                claimed[s] = Some(a.user);
            }
            let head = self.queues[a.user][0];
            let user = self.packets[head].user;
            plans.push(self.frame_for(user, a.subchannels.len(), a.tti_s)?);
        }
        if allocs.is_empty() {
            self.declined_at = Some(self.now);
        }
        for (a, frame) in allocs.iter().zip(plans) {
            let packet = self.queues[a.user].pop_front().expect("checked above");
            for &s in &a.subchannels {
                self.holder[s] = Some(a.user);
            }
            self.service[a.user] = Some(Service {
                packet,
                subchannels: a.subchannels.clone(),
                tti_s: a.tti_s,
                frame,
                start_s: self.now,
                attempts: 0,
                attempt_start_s: self.now,
                resource: None,
                decode_failed: false,
            });
        }
        // expectation mode sees the contenders started in the same batch
        for a in allocs {
            match self.mode {
                SimMode::Expected => self.start_expected(a.user)?,
                SimMode::Sampled => self.start_attempt(a.user),
            }
        }
        Ok(())
    }

    fn busy_others(&self, queue: usize) -> u32 {
        (0..self.service.len())
            .filter(|&q| q != queue && self.service[q].is_some())
            .count() as u32
    }

    fn collision_prob(&self, queue: usize) -> Result<f64> {
        if !self.profile.is_contention_based() {
            return Ok(0.0);
        }
        let cfg = ContentionConfig::new(1 + self.busy_others(queue), self.scenario.contention_resources() as u32)?;
        gf_collision_prob(cfg)
    }

    fn start_expected(&mut self, queue: usize) -> Result<()> {
        let coll = self.collision_prob(queue)?;
        let svc = self.service[queue].as_ref().expect("in service");
        let eps = attempt_failure_prob(svc.frame.decode_eps, coll)?;
        let cap = self.scenario.max_attempts;
        let (attempts, dropped) = if eps >= 1.0 {
            (cap.unwrap_or(1) as f64, true)
        } else {
            (expected_attempts(eps, cap)?.mean, false)
        };
        let occupancy = attempts * self.profile.tx_count as f64 * svc.frame.air_time_s + (attempts - 1.0) * self.gap_s;
        let end = self.now + occupancy;
        let record = self.record(queue, attempts, dropped, eps)?;
        self.records.push(record);
        self.push(end, EventKind::ServiceEnd(queue));
        Ok(())
    }

    fn start_attempt(&mut self, queue: usize) {
        let k = self.scenario.contention_resources();
        let contention = self.profile.is_contention_based();
        let resource = contention.then(|| self.rng.random_range(0..k));
        let svc = self.service[queue].as_mut().expect("in service");
        let decode_failed = self.rng.random::<f64>() < svc.frame.decode_eps;
        svc.attempts += 1;
        svc.attempt_start_s = self.now;
        svc.resource = resource;
        svc.decode_failed = decode_failed;
        let end = self.now + self.profile.tx_count as f64 * svc.frame.air_time_s;
        if let Some(resource) = resource {
            self.spans.push(Span {
                queue,
                resource,
                start: self.now,
                end,
            });
        }
        self.push(end, EventKind::AttemptEnd(queue));
    }

    fn end_attempt(&mut self, queue: usize) -> Result<()> {
        let svc = self.service[queue].as_ref().expect("in service");
        let start = svc.attempt_start_s;
        let end = self.now;
        let collided = svc.resource.is_some_and(|r| {
            self.spans
                .iter()
                .any(|s| s.queue != queue && s.resource == r && s.start < end && start < s.end)
        });
        let failed = svc.decode_failed || collided;
        let attempts = svc.attempts;
        let decode_eps = svc.frame.decode_eps;
        // a span can only overlap attempts that began before it ended
        let horizon = self
            .service
            .iter()
            .enumerate()
            .filter(|(q, _)| *q != queue)
            .filter_map(|(_, s)| s.as_ref().map(|s| s.attempt_start_s))
            .fold(self.now, f64::min);
        self.spans.retain(|s| s.end > horizon);
        let exhausted = self.scenario.max_attempts.is_some_and(|k| attempts >= k);
        if failed && !exhausted {
            let t = self.now + self.gap_s;
            self.push(t, EventKind::AttemptStart(queue));
            return Ok(());
        }
        let eps_attempt = attempt_failure_prob(decode_eps, self.collision_prob(queue)?)?;
        let record = self.record(queue, attempts as f64, failed, eps_attempt)?;
        self.records.push(record);
        self.release(queue);
        Ok(())
    }

    fn record(&self, queue: usize, attempts: f64, dropped: bool, eps_attempt: f64) -> Result<PacketRecord> {
        let svc = self.service[queue].as_ref().expect("in service");
        let a = &self.packets[svc.packet];
        let times = ComponentTimes {
            transmission_s: svc.frame.air_time_s,
            processing_s: self.scenario.processing_s,
            propagation_s: self.scenario.propagation_s,
        };
        let queuing = svc.start_s - a.time_s;
        let breakdown = compose_over_the_air(queuing, &times, &self.profile, attempts, self.gap_s)?;
        Ok(PacketRecord {
            id: a.id,
            user: a.user,
            arrival_s: a.time_s,
            start_s: svc.start_s,
            attempts,
            departure_s: svc.start_s + (breakdown.total_s - queuing),
            dropped,
            subchannels: svc.subchannels.clone(),
            tti_s: svc.tti_s,
            blocklength: svc.frame.blocklength,
            segments: svc.frame.segments,
            decode_eps: svc.frame.decode_eps,
            eps_attempt,
            breakdown,
        })
    }

    fn release(&mut self, queue: usize) {
        if let Some(svc) = self.service[queue].take() {
            for s in svc.subchannels {
                self.holder[s] = None;
            }
            self.fresh.push(svc.packet);
        }
    }

    fn handle(&mut self, kind: EventKind) -> Result<()> {
        match kind {
            EventKind::Arrival(i) => {
                let q = self.scenario.queue_of(self.packets[i].user);
                self.queues[q].push_back(i);
                self.arrived += 1;
            }
            EventKind::AttemptStart(q) => self.start_attempt(q),
            EventKind::AttemptEnd(q) => self.end_attempt(q)?,
            EventKind::ServiceEnd(q) => self.release(q),
            EventKind::Wake => {}
        }
        Ok(())
    }

    /// Packets resolved (served or dropped) since the previous call.
    pub fn take_resolved(&mut self) -> Vec<PacketRecord> {
        let ids = std::mem::take(&mut self.fresh);
        ids.into_iter()
            .filter_map(|id| self.records.iter().rev().find(|r| r.id == id).cloned())
            .collect()
    }

    /// Snapshot of queue state for observers.
    pub fn snapshot(&self) -> DecisionContext {
        self.context()
    }

    /// Bits queued per queue, in service included.
    pub fn queue_bits(&self) -> Vec<u64> {
        (0..self.queues.len())
            .map(|q| {
                let n = self.queues[q].len() + self.service[q].is_some() as usize;
                n as u64 * self.scenario.packet_bits
            })
            .collect()
    }

    pub fn all_resolved(&self) -> bool {
        self.arrived == self.packets.len()
            && self.queues.iter().all(|q| q.is_empty())
            && self.service.iter().all(|s| s.is_none())
    }

    /// Close the run. Packets still queued or in service are reported as unserved.
    pub fn finish(mut self) -> SimStats {
        let mut unserved: Vec<usize> = self.queues.iter().flatten().copied().collect();
        let in_service: Vec<usize> = self.service.iter().flatten().map(|s| s.packet).collect();
        self.records.retain(|r| !in_service.contains(&r.id));
        unserved.extend(in_service);
        let pending: Vec<usize> = self
            .events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::Arrival(i) => Some(i),
                _ => None,
            })
            .collect();
        unserved.extend(pending);
        unserved.sort_unstable();
        let max_arrival = self.packets.iter().map(|a| a.time_s).fold(0.0, f64::max);
        SimStats::from_records(self.mode, self.scenario.seed, self.records, unserved, max_arrival)
    }
}
