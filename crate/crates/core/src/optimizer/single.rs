//! Per-packet blocklengths on one queue that owns the whole band.

use super::{golden_integer, AllocationPlan, Evaluator, Score};
use crate::delay::Regime;
use crate::error::{Constraint, Error, Infeasibility, Result};
use crate::fbl;
use crate::scenario::{MultipleAccess, Scenario};

const MAX_CYCLES: usize = 50;

struct Problem<'a> {
    ev: &'a Evaluator,
    bandwidth_hz: f64,
    n_min: Vec<u64>,
    budget: u64,
    evaluations: u64,
}

impl Problem<'_> {
    fn score(&mut self, n: &[u64]) -> Result<Score> {
        self.evaluations += 1;
        let tti: Vec<f64> = n.iter().map(|&n| n as f64 / self.bandwidth_hz).collect();
        Ok(self.ev.per_packet(&tti)?.0)
    }

    /// Cyclic coordinate search: golden section per coordinate, then unit steps.
    fn descend(&mut self, mut n: Vec<u64>) -> Result<(Vec<u64>, Score, Vec<Score>)> {
        let mut best = self.score(&n)?;
        let mut history = vec![best];
        for _ in 0..MAX_CYCLES {
            let mut improved = false;
            for i in 0..n.len() {
                let used: u64 = n.iter().sum();
                let hi = n[i] + (self.budget - used);
                let lo = self.n_min[i];
                let mut trial = n.clone();
                let (cand, score) = golden_integer(lo, hi, |v| {
                    trial[i] = v;
                    self.score(&trial)
                })?;
                if score < best {
                    n[i] = cand;
                    best = score;
                    history.push(best);
                    improved = true;
                }
                // unit polish in both directions
                loop {
                    let mut moved = false;
                    for step in [-1i64, 1] {
                        let v = n[i] as i64 + step;
                        let used: u64 = n.iter().sum();
                        if v < lo as i64 || (step > 0 && used + 1 > self.budget) {
                            continue;
                        }
                        let mut trial = n.clone();
                        trial[i] = v as u64;
                        let s = self.score(&trial)?;
                        if s < best {
                            n = trial;
                            best = s;
                            history.push(best);
                            moved = true;
                            improved = true;
                        }
                    }
                    if !moved {
                        break;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        Ok((n, best, history))
    }
}

/// Minimise the average delay over per-packet blocklengths `n_i` subject to
/// `n_i * R(n_i) >= b` at the error target, `sum n_i / B <= period` and `n_i >= 0`.
///
/// Applies to one user, or to NOMA where every packet uses the full band.
pub fn optimize_single_user(scenario: &Scenario) -> Result<AllocationPlan> {
    scenario.validate()?;
    if scenario.users != 1 && scenario.access != MultipleAccess::Noma {
        return Err(Error::validation(
            "the single-queue solver needs one user or NOMA access",
        ));
    }
    let ev = Evaluator::new(scenario)?;
    let bandwidth_hz = scenario.total_bandwidth_hz;
    let mut n_min = Vec::with_capacity(ev.arrivals().len());
    for a in ev.arrivals() {
        let snr = scenario.snr(a.user, bandwidth_hz)?;
        let n = match scenario.regime {
            Regime::Fbl => scenario
                .fbl_model()
                .min_blocklength(snr, scenario.packet_bits, scenario.error_target)?,
            Regime::Ibl => fbl::ibl_min_blocklength(snr, scenario.packet_bits)?,
        };
        n_min.push(n);
    }
    let budget = (bandwidth_hz * scenario.period_s + 1e-9).floor() as u64;
    let need: u64 = n_min.iter().sum();
    if need > budget {
        return Err(Infeasibility::new(
            Constraint::Period,
            format!(
                "{} packets need at least {need} symbols, the period holds {budget}",
                n_min.len()
            ),
        )
        .into());
    }
    let mut problem = Problem {
        ev: &ev,
        bandwidth_hz,
        n_min: n_min.clone(),
        budget,
        evaluations: 0,
    };
    let mut starts = vec![n_min.clone()];
    if !n_min.is_empty() {
        let share = budget / n_min.len() as u64;
        let split: Vec<u64> = n_min.iter().map(|&m| m.max(share)).collect();
        if split.iter().sum::<u64>() <= budget && split != n_min {
            starts.push(split);
        }
    }
    let mut best: Option<(Vec<u64>, Score, Vec<Score>)> = None;
    for start in starts {
        let run = problem.descend(start)?;
        if best.as_ref().is_none_or(|b| run.1 < b.1) {
            best = Some(run);
        }
    }
    let (n, _, history) = best.expect("at least one start");
    let tti: Vec<f64> = n.iter().map(|&n| n as f64 / bandwidth_hz).collect();
    let (score, certificate, stats) = ev.per_packet(&tti)?;
    Ok(AllocationPlan {
        solver: "single".into(),
        assignment: vec![Some(0); scenario.subchannels],
        tti_s: Vec::new(),
        packet_tti_s: tti,
        blocklengths: n,
        objective_s: score.avg_delay_s,
        total_time_s: stats.total_time_s,
        score,
        feasible: certificate.feasible(),
        certificate,
        evaluations: problem.evaluations,
        history,
    })
}
