//! Adaptive blocklength solvers.
//!
//! Plans are scored in expectation mode by `(violations, average delay)`,
//! compared lexicographically. A violation is an unserved or dropped packet or
//! a subchannel whose frames overrun the period.

mod multi;
mod single;

pub use crate::sim::FrameAlloc;
pub use multi::{optimize_adaptive, optimize_exhaustive, optimize_greedy, refine_continuous, EXHAUSTIVE_LIMIT};
pub use single::optimize_single_user;

use crate::error::{Constraint, Error, Result};
use crate::fbl::realize_blocklength;
use crate::scenario::Scenario;
use crate::sim::{
    fixed_baseline_policy, generate_arrivals, plan_frame, Arrival, PerPacketPolicy, Policy, SimMode, SimStats,
    Simulation, StaticPlanPolicy,
};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

/// LTE and NR block durations.
pub const DEFAULT_TTI_LEVELS_S: [f64; 5] = [0.0625e-3, 0.125e-3, 0.25e-3, 0.5e-3, 1.0e-3];

pub const DEFAULT_BUDGET: u128 = 10_000_000;

/// Lexicographic plan score; smaller is better.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Score {
    pub violations: usize,
    pub avg_delay_s: f64,
}

impl PartialEq for Score {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Score {}
impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        self.violations
            .cmp(&other.violations)
            .then_with(|| self.avg_delay_s.total_cmp(&other.avg_delay_s))
    }
}

/// Machine-checkable constraint slacks of an evaluated plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// `period - sum of frame air times` on each subchannel.
    pub period_slack_s: Vec<f64>,
    /// Smallest `error_target - decoding error` over all frames.
    pub reliability_slack: f64,
    /// No subchannel is held by two frames at once.
    pub exclusive: bool,
    pub unserved: usize,
    pub dropped: usize,
    /// The first violated constraint, if any.
    pub binding: Option<Constraint>,
}

impl Certificate {
    fn from_stats(scenario: &Scenario, stats: &SimStats) -> Self {
        let mut used = vec![0.0; scenario.subchannels];
        let mut reliability_slack = f64::INFINITY;
        let mut spans: Vec<Vec<(f64, f64)>> = vec![Vec::new(); scenario.subchannels];
        for p in &stats.packets {
            let air = p.segments as f64 * p.tti_s;
            let busy_until = p.start_s
                + p.attempts * scenario.profile().tx_count as f64 * air
                + (p.attempts - 1.0) * scenario.retx_gap_s();
            for &s in &p.subchannels {
                used[s] += air;
                spans[s].push((p.start_s, busy_until));
            }
            reliability_slack = reliability_slack.min(scenario.error_target - p.decode_eps);
        }
        let exclusive = spans.iter_mut().all(|v| {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            v.windows(2).all(|w| w[0].1 <= w[1].0 + 1e-15)
        });
        let period_slack_s: Vec<f64> = used.iter().map(|u| scenario.period_s - u).collect();
        let binding = if !stats.unserved.is_empty() {
            Some(Constraint::Resources)
        } else if period_slack_s.iter().any(|&s| s < -PERIOD_TOL) {
            Some(Constraint::Period)
        } else if reliability_slack < 0.0 || stats.dropped > 0 {
            Some(Constraint::Reliability)
        } else {
            None
        };
        Certificate {
            period_slack_s,
            reliability_slack,
            exclusive,
            unserved: stats.unserved.len(),
            dropped: stats.dropped,
            binding,
        }
    }

    pub fn feasible(&self) -> bool {
        self.binding.is_none() && self.exclusive
    }

    fn violations(&self) -> usize {
        self.unserved + self.dropped + self.period_slack_s.iter().filter(|&&s| s < -PERIOD_TOL).count()
    }
}

const PERIOD_TOL: f64 = 1e-12;

/// A solver's answer: subchannel ownership plus TTIs, or per-packet TTIs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub solver: String,
    /// Owner queue of each subchannel.
    pub assignment: Vec<Option<usize>>,
    /// TTI per queue (static plans).
    pub tti_s: Vec<f64>,
    /// TTI per packet id (single-queue plans); empty for static plans.
    pub packet_tti_s: Vec<f64>,
    /// Realised blocklength per queue, or per packet for single-queue plans.
    pub blocklengths: Vec<u64>,
    pub objective_s: f64,
    pub total_time_s: f64,
    pub score: Score,
    pub feasible: bool,
    pub certificate: Certificate,
    pub evaluations: u64,
    /// Scores accepted by the final local search, in order.
    pub history: Vec<Score>,
}

impl AllocationPlan {
    pub fn policy(&self, scenario: &Scenario) -> Result<Box<dyn Policy>> {
        if self.packet_tti_s.is_empty() {
            Ok(Box::new(StaticPlanPolicy::new(
                scenario,
                &self.assignment,
                &self.tti_s,
            )?))
        } else {
            Ok(Box::new(PerPacketPolicy::new(scenario, self.packet_tti_s.clone())))
        }
    }

    /// One frame per queue holding subchannels (static plans).
    pub fn frames(&self) -> Vec<FrameAlloc> {
        let mut out = Vec::new();
        for (q, &tti) in self.tti_s.iter().enumerate() {
            let subs: Vec<usize> = (0..self.assignment.len())
                .filter(|&s| self.assignment[s] == Some(q))
                .collect();
            if !subs.is_empty() {
                out.push(FrameAlloc::new(q, subs, tti));
            }
        }
        out
    }

    pub fn total_tti_s(&self) -> f64 {
        if self.packet_tti_s.is_empty() {
            self.tti_s.iter().sum()
        } else {
            self.packet_tti_s.iter().sum()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serialise")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::validation(format!("plan JSON: {e}")))
    }

    /// Replay the plan in the simulator.
    pub fn simulate(&self, scenario: &Scenario, mode: SimMode) -> Result<SimStats> {
        let mut policy = self.policy(scenario)?;
        crate::sim::simulate(scenario, policy.as_mut(), mode)
    }
}

/// Shared plan evaluator; arrivals are generated once.
#[derive(Debug, Clone)]
pub struct Evaluator {
    scenario: Scenario,
    arrivals: Vec<Arrival>,
}

impl Evaluator {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        Ok(Evaluator {
            scenario: scenario.clone(),
            arrivals: generate_arrivals(scenario)?,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn arrivals(&self) -> &[Arrival] {
        &self.arrivals
    }

    fn users_of(&self, queue: usize) -> Vec<usize> {
        (0..self.scenario.users)
            .filter(|&u| self.scenario.queue_of(u) == queue)
            .collect()
    }

    /// Whether every user of `queue` can send its packet in `tti_s` blocks over `n_sub` subchannels.
    pub fn realisable(&self, queue: usize, n_sub: usize, tti_s: f64) -> bool {
        let bw = n_sub as f64 * self.scenario.subchannel_bandwidth_hz();
        self.users_of(queue)
            .into_iter()
            .all(|u| plan_frame(&self.scenario, u, bw, tti_s).is_ok())
    }

    fn run(&self, policy: &mut dyn Policy) -> Result<SimStats> {
        let sim = Simulation::with_arrivals(&self.scenario, self.arrivals.clone(), SimMode::Expected)?;
        crate::sim::drive(sim, policy)
    }

    fn score(&self, stats: &SimStats) -> (Score, Certificate) {
        let cert = Certificate::from_stats(&self.scenario, stats);
        let avg = if stats.served == 0 {
            0.0
        } else {
            stats.avg_over_the_air_s
        };
        (
            Score {
                violations: cert.violations(),
                avg_delay_s: avg,
            },
            cert,
        )
    }

    /// Score a static plan. Queues whose frames cannot be realised are left unserved.
    pub fn static_plan(&self, assignment: &[Option<usize>], tti_s: &[f64]) -> Result<(Score, Certificate, SimStats)> {
        let mut usable = assignment.to_vec();
        for q in 0..self.scenario.queues() {
            let n_sub = assignment.iter().filter(|a| **a == Some(q)).count();
            if n_sub > 0 && !self.realisable(q, n_sub, tti_s[q]) {
                for a in usable.iter_mut().filter(|a| **a == Some(q)) {
                    *a = None;
                }
            }
        }
        let mut policy = StaticPlanPolicy::new(&self.scenario, &usable, tti_s)?;
        let stats = self.run(&mut policy)?;
        let (score, cert) = self.score(&stats);
        Ok((score, cert, stats))
    }

    /// Score per-packet TTIs on one queue holding every subchannel.
    pub fn per_packet(&self, tti_s: &[f64]) -> Result<(Score, Certificate, SimStats)> {
        let mut policy = PerPacketPolicy::new(&self.scenario, tti_s.to_vec());
        let stats = self.run(&mut policy)?;
        let (score, cert) = self.score(&stats);
        Ok((score, cert, stats))
    }

    pub(crate) fn static_result(
        &self,
        solver: &str,
        assignment: Vec<Option<usize>>,
        tti_s: Vec<f64>,
        evaluations: u64,
        history: Vec<Score>,
    ) -> Result<AllocationPlan> {
        let (score, certificate, stats) = self.static_plan(&assignment, &tti_s)?;
        let sub_bw = self.scenario.subchannel_bandwidth_hz();
        let blocklengths = (0..tti_s.len())
            .map(|q| {
                let n_sub = assignment.iter().filter(|a| **a == Some(q)).count();
                realize_blocklength(tti_s[q] * n_sub as f64 * sub_bw)
            })
            .collect();
        Ok(AllocationPlan {
            solver: solver.to_string(),
            assignment,
            tti_s,
            packet_tti_s: Vec::new(),
            blocklengths,
            objective_s: score.avg_delay_s,
            total_time_s: stats.total_time_s,
            score,
            feasible: certificate.feasible(),
            certificate,
            evaluations,
            history,
        })
    }
}

/// The round-robin fixed-TTI baseline expressed as a plan.
pub fn fixed_plan(scenario: &Scenario, tti_s: f64) -> Result<AllocationPlan> {
    fixed_baseline_policy(scenario, tti_s)?;
    let ev = Evaluator::new(scenario)?;
    let assignment = match scenario.access {
        crate::scenario::MultipleAccess::Oma => {
            crate::sim::round_robin_assignment(scenario.users, scenario.subchannels)
        }
        crate::scenario::MultipleAccess::Noma => vec![Some(0); scenario.subchannels],
    };
    ev.static_result(
        &format!("fixed-{}us", tti_s * 1e6),
        assignment,
        vec![tti_s; scenario.queues()],
        1,
        Vec::new(),
    )
}

/// Integer golden-section search on `[lo, hi]` followed by a scan of the final bracket.
pub(crate) fn golden_integer<F>(lo: u64, hi: u64, mut f: F) -> Result<(u64, Score)>
where
    F: FnMut(u64) -> Result<Score>,
{
    let mut memo = std::collections::HashMap::new();
    let mut eval = |n: u64, memo: &mut std::collections::HashMap<u64, Score>| -> Result<Score> {
        if let Some(s) = memo.get(&n) {
            return Ok(*s);
        }
        let s = f(n)?;
        memo.insert(n, s);
        Ok(s)
    };
    let (mut a, mut b) = (lo.min(hi), hi.max(lo));
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    while b - a > 4 {
        let width = (b - a) as f64;
        let m1 = a + ((1.0 - INV_PHI) * width).round() as u64;
        let m2 = a + (INV_PHI * width).round() as u64;
        if eval(m1, &mut memo)? <= eval(m2, &mut memo)? {
            b = m2;
        } else {
            a = m1;
        }
    }
    let mut best = (a, eval(a, &mut memo)?);
    for n in a + 1..=b {
        let s = eval(n, &mut memo)?;
        if s < best.1 {
            best = (n, s);
        }
    }
    Ok(best)
}
