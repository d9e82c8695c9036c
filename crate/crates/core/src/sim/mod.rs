//! Discrete-event simulation of the variable-TTI dynamic queue.

mod engine;
mod frame;
mod policy;

pub use engine::{DecisionContext, PacketView, Policy, Simulation, Step};
pub use frame::{plan_frame, FrameAlloc, FramePlan, MAX_SEGMENTS};
pub use policy::{round_robin_assignment, PerPacketPolicy, StaticPlanPolicy};

use crate::delay::DelayBreakdown;
use crate::error::{Constraint, Infeasibility, Result};
use crate::scenario::{ArrivalProcess, MultipleAccess, Scenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// How attempt outcomes are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    /// Fractional expected attempts, no randomness after the arrivals.
    Expected,
    /// Every attempt draws its decoding outcome and contention resource.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub id: usize,
    pub user: usize,
    pub time_s: f64,
}

/// Arrivals of all users within one period, ordered by time then user.
pub fn generate_arrivals(scenario: &Scenario) -> Result<Vec<Arrival>> {
    scenario.validate()?;
    let period = scenario.period_s;
    let mut out: Vec<(f64, usize)> = Vec::new();
    match &scenario.arrival {
        ArrivalProcess::Poisson { .. } | ArrivalProcess::PoissonLoad { .. } => {
            for user in 0..scenario.users {
                let rate = scenario.poisson_rate(user)?.expect("poisson process");
                let exp = Exp::new(rate).map_err(|e| crate::Error::validation(format!("arrival rate: {e}")))?;
                let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
                rng.set_stream(user as u64 + 1);
                let mut t = exp.sample(&mut rng);
                while t < period {
                    out.push((t, user));
                    t += exp.sample(&mut rng);
                }
            }
        }
        ArrivalProcess::Deterministic { interval_s } => {
            for user in 0..scenario.users {
                let mut k = 0u64;
                loop {
                    let t = k as f64 * interval_s;
                    if t >= period * (1.0 - 1e-12) {
                        break;
                    }
                    out.push((t, user));
                    k += 1;
                }
            }
        }
        ArrivalProcess::Trace { entries } => {
            for e in entries {
                match e.user {
                    Some(u) => out.push((e.time_s, u)),
                    None => out.extend((0..scenario.users).map(|u| (e.time_s, u))),
                }
            }
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(out
        .into_iter()
        .enumerate()
        .map(|(id, (time_s, user))| Arrival { id, user, time_s })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub id: usize,
    pub user: usize,
    pub arrival_s: f64,
    pub start_s: f64,
    pub attempts: f64,
    pub departure_s: f64,
    pub dropped: bool,
    pub subchannels: Vec<usize>,
    pub tti_s: f64,
    pub blocklength: u64,
    pub segments: u32,
    /// Probability that one transmission of the packet is not decoded.
    pub decode_eps: f64,
    /// Failure probability of one attempt (decoding and, for GF, collision).
    pub eps_attempt: f64,
    pub breakdown: DelayBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub mode: SimMode,
    pub seed: u64,
    /// Mean over-the-air delay of served (not dropped) packets.
    pub avg_over_the_air_s: f64,
    /// Completion time of the last packet.
    pub total_time_s: f64,
    pub served: usize,
    pub dropped: usize,
    /// Packets never taken into service.
    pub unserved: Vec<usize>,
    pub mean_attempts: f64,
    pub packets: Vec<PacketRecord>,
}

impl SimStats {
    fn from_records(
        mode: SimMode,
        seed: u64,
        mut packets: Vec<PacketRecord>,
        unserved: Vec<usize>,
        max_arrival: f64,
    ) -> Self {
        packets.sort_by_key(|p| p.id);
        let served: Vec<&PacketRecord> = packets.iter().filter(|p| !p.dropped).collect();
        let n = served.len();
        let avg = if n == 0 {
            f64::NAN
        } else {
            served.iter().map(|p| p.breakdown.total_s).sum::<f64>() / n as f64
        };
        let mean_attempts = if packets.is_empty() {
            f64::NAN
        } else {
            packets.iter().map(|p| p.attempts).sum::<f64>() / packets.len() as f64
        };
        let total_time_s = packets.iter().map(|p| p.departure_s).fold(max_arrival, f64::max);
        SimStats {
            mode,
            seed,
            avg_over_the_air_s: avg,
            total_time_s,
            served: n,
            dropped: packets.len() - n,
            unserved,
            mean_attempts,
            packets,
        }
    }

    /// Sum of over-the-air delays of served packets.
    pub fn total_delay_s(&self) -> f64 {
        self.packets
            .iter()
            .filter(|p| !p.dropped)
            .map(|p| p.breakdown.total_s)
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialise")
    }

    /// Per-packet table `id,user,arrival_s,start_s,attempts,departure_s,dropped,queue_s,tx_s,total_s`.
    pub fn packets_csv(&self) -> String {
        let mut out = String::from("id,user,arrival_s,start_s,attempts,departure_s,dropped,queue_s,tx_s,total_s\n");
        for p in &self.packets {
            let _ = writeln!(
                out,
                "{},{},{:e},{:e},{},{:e},{},{:e},{:e},{:e}",
                p.id,
                p.user,
                p.arrival_s,
                p.start_s,
                p.attempts,
                p.departure_s,
                p.dropped as u8,
                p.breakdown.queuing_s,
                p.breakdown.transmission_s,
                p.breakdown.total_s
            );
        }
        out
    }
}

/// Run one period under `policy`. Packets the policy never serves end up in `unserved`.
pub fn simulate(scenario: &Scenario, policy: &mut dyn Policy, mode: SimMode) -> Result<SimStats> {
    let sim = Simulation::new(scenario, mode)?;
    drive(sim, policy)
}

/// Run a prepared simulation to completion.
pub fn drive(mut sim: Simulation, policy: &mut dyn Policy) -> Result<SimStats> {
    loop {
        match sim.next_decision()? {
            Step::Decision(ctx) => {
                let allocs = policy.decide(&ctx)?;
                sim.apply(&allocs)?;
            }
            Step::Finished | Step::Stalled => return Ok(sim.finish()),
        }
    }
}

/// Every frame uses `tti_s`; subchannel `s` belongs to user `s mod U`.
pub fn run_fixed_baseline(scenario: &Scenario, tti_s: f64, mode: SimMode) -> Result<SimStats> {
    let mut policy = fixed_baseline_policy(scenario, tti_s)?;
    simulate(scenario, &mut policy, mode)
}

/// The static policy behind [`run_fixed_baseline`], after checking every frame is realisable.
pub fn fixed_baseline_policy(scenario: &Scenario, tti_s: f64) -> Result<StaticPlanPolicy> {
    scenario.validate()?;
    let assignment = match scenario.access {
        MultipleAccess::Oma => {
            if scenario.users > scenario.subchannels {
                return Err(Infeasibility::new(
                    Constraint::Resources,
                    format!(
                        "{} users cannot each hold one of {} subchannels",
                        scenario.users, scenario.subchannels
                    ),
                )
                .into());
            }
            round_robin_assignment(scenario.users, scenario.subchannels)
        }
        MultipleAccess::Noma => vec![Some(0); scenario.subchannels],
    };
    let policy = StaticPlanPolicy::new(scenario, &assignment, &vec![tti_s; scenario.queues()])?;
    let sub_bw = scenario.subchannel_bandwidth_hz();
    for user in 0..scenario.users {
        let q = scenario.queue_of(user);
        let bw = policy.subchannels_of(q).len() as f64 * sub_bw;
        plan_frame(scenario, user, bw, tti_s)?;
    }
    Ok(policy)
}
