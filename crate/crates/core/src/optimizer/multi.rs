//! Multi-user OMA: joint subchannel assignment and per-user TTI.

use super::{golden_integer, optimize_single_user, AllocationPlan, Evaluator, Score};
use crate::delay::Regime;
use crate::error::{Error, Result};
use crate::fbl::{self, realize_blocklength};
use crate::scenario::{MultipleAccess, Scenario};
use crate::sim::round_robin_assignment;
use rayon::prelude::*;
use std::cmp::Ordering;

/// Largest exhaustive search the adaptive pipeline runs before falling back to greedy.
pub const EXHAUSTIVE_LIMIT: u128 = 10_000;

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::validation("TTI level set is empty"));
    }
    if let Some(t) = levels.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::validation(format!("TTI level {t} is not positive")));
    }
    Ok(())
}

fn check_oma(scenario: &Scenario) -> Result<()> {
    if scenario.access != MultipleAccess::Oma {
        return Err(Error::validation("multi-user solvers need OMA access"));
    }
    Ok(())
}

/// Number of plans in the exhaustive space, `U^S * L^U`.
pub fn exhaustive_size(users: usize, subchannels: usize, levels: usize) -> u128 {
    let a = (users as u128).checked_pow(subchannels as u32);
    let b = (levels as u128).checked_pow(users as u32);
    match (a, b) {
        (Some(a), Some(b)) => a.saturating_mul(b),
        _ => u128::MAX,
    }
}

/// Digits of `index` in base `base`, most significant first.
fn digits(mut index: u128, base: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = (index % base as u128) as usize;
        index /= base as u128;
    }
    out
}

#[derive(Debug, Clone)]
struct Candidate {
    score: Score,
    assignment: Vec<usize>,
    total_tti: f64,
    levels: Vec<usize>,
}

fn tie_break(a: &Candidate, b: &Candidate) -> Ordering {
    a.score
        .cmp(&b.score)
        .then_with(|| a.assignment.cmp(&b.assignment))
        .then_with(|| a.total_tti.total_cmp(&b.total_tti))
        .then_with(|| a.levels.cmp(&b.levels))
}

/// Globally optimal plan over every subchannel assignment and per-user TTI level.
///
/// Ties go to the lexicographically smallest assignment, then the smallest total TTI.
pub fn optimize_exhaustive(scenario: &Scenario, levels: &[f64], budget: u128) -> Result<AllocationPlan> {
    scenario.validate()?;
    check_oma(scenario)?;
    check_levels(levels)?;
    let (u, s, l) = (scenario.users, scenario.subchannels, levels.len());
    let required = exhaustive_size(u, s, l);
    if required > budget {
        return Err(Error::BudgetExceeded { required, budget });
    }
    let ev = Evaluator::new(scenario)?;
    let assignments = (u as u128).pow(s as u32);
    let per_assignment = (l as u128).pow(u as u32);
    let best = (0..assignments as u64)
        .into_par_iter()
        .map(|ai| -> Result<Candidate> {
            let assignment = digits(ai as u128, u, s);
            let owned: Vec<Option<usize>> = assignment.iter().map(|&x| Some(x)).collect();
            let mut local: Option<Candidate> = None;
            for li in 0..per_assignment {
                let lv = digits(li, l, u);
                let tti: Vec<f64> = lv.iter().map(|&i| levels[i]).collect();
                let (score, _, _) = ev.static_plan(&owned, &tti)?;
                let cand = Candidate {
                    score,
                    assignment: assignment.clone(),
                    total_tti: tti.iter().sum(),
                    levels: lv,
                };
                if local.as_ref().is_none_or(|b| tie_break(&cand, b) == Ordering::Less) {
                    local = Some(cand);
                }
            }
            Ok(local.expect("at least one level"))
        })
        .try_reduce_with(|a, b| Ok(if tie_break(&b, &a) == Ordering::Less { b } else { a }))
        .expect("at least one assignment")?;
    let tti = best.levels.iter().map(|&i| levels[i]).collect();
    let assignment = best.assignment.iter().map(|&x| Some(x)).collect();
    ev.static_result("exhaustive", assignment, tti, required as u64, Vec::new())
}

/// Smallest level that carries a packet of every user of `queue` in one block, else
/// the smallest realisable level, else the largest level.
fn default_level(ev: &Evaluator, queue: usize, n_sub: usize, levels: &[f64]) -> f64 {
    let mut sorted = levels.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sc = ev.scenario();
    let bw = n_sub as f64 * sc.subchannel_bandwidth_hz();
    let single = sorted.iter().find(|&&t| {
        (0..sc.users)
            .filter(|&u| sc.queue_of(u) == queue)
            .all(|u| crate::sim::plan_frame(sc, u, bw, t).is_ok_and(|p| p.segments == 1))
    });
    single
        .or_else(|| sorted.iter().find(|&&t| ev.realisable(queue, n_sub, t)))
        .copied()
        .unwrap_or(*sorted.last().expect("levels checked"))
}

struct Search<'a> {
    ev: &'a Evaluator,
    evaluations: u64,
}

impl Search<'_> {
    fn score(&mut self, assignment: &[Option<usize>], tti: &[f64]) -> Result<Score> {
        self.evaluations += 1;
        Ok(self.ev.static_plan(assignment, tti)?.0)
    }

    /// Try every level for each user in turn; keep strict improvements.
    fn descend_levels(
        &mut self,
        assignment: &[Option<usize>],
        tti: &mut [f64],
        levels: &[f64],
    ) -> Result<(Score, Vec<Score>)> {
        let mut best = self.score(assignment, tti)?;
        let mut history = vec![best];
        loop {
            let mut improved = false;
            for u in 0..tti.len() {
                for &t in levels {
                    if t == tti[u] {
                        continue;
                    }
                    let old = tti[u];
                    tti[u] = t;
                    let s = self.score(assignment, tti)?;
                    if s < best {
                        best = s;
                        history.push(s);
                        improved = true;
                    } else {
                        tti[u] = old;
                    }
                }
            }
            if !improved {
                return Ok((best, history));
            }
        }
    }
}

/// Greedy assignment followed by coordinate descent over TTI levels.
///
/// Subchannels are handed out one at a time to the user whose plan scores best
/// with it. A round-robin start with the best uniform level is descended as
/// well; the better of the two is then improved by single-subchannel moves.
pub fn optimize_greedy(scenario: &Scenario, levels: &[f64]) -> Result<AllocationPlan> {
    scenario.validate()?;
    check_oma(scenario)?;
    check_levels(levels)?;
    let ev = Evaluator::new(scenario)?;
    let mut search = Search {
        ev: &ev,
        evaluations: 0,
    };
    let (u, s) = (scenario.users, scenario.subchannels);
    let largest = levels.iter().copied().fold(f64::MIN, f64::max);

    let mut assignment: Vec<Option<usize>> = vec![None; s];
    let mut tti = vec![largest; u];
    for sub in 0..s {
        let mut best: Option<(Score, usize, f64)> = None;
        for user in 0..u {
            let mut cand = assignment.clone();
            cand[sub] = Some(user);
            let n_sub = cand.iter().filter(|a| **a == Some(user)).count();
            let level = default_level(&ev, user, n_sub, levels);
            let mut t = tti.clone();
            t[user] = level;
            let score = search.score(&cand, &t)?;
            if best.as_ref().is_none_or(|b| score < b.0) {
                best = Some((score, user, level));
            }
        }
        let (_, user, level) = best.expect("at least one user");
        assignment[sub] = Some(user);
        tti[user] = level;
    }
    let (greedy_score, greedy_history) = search.descend_levels(&assignment, &mut tti, levels)?;

    let rr = round_robin_assignment(u, s);
    let mut uniform: Option<(Score, f64)> = None;
    for &t in levels {
        let score = search.score(&rr, &vec![t; u])?;
        if uniform.as_ref().is_none_or(|b| score < b.0) {
            uniform = Some((score, t));
        }
    }
    let mut rr_tti = vec![uniform.expect("levels checked").1; u];
    let (rr_score, rr_history) = search.descend_levels(&rr, &mut rr_tti, levels)?;

    let (mut assignment, mut tti, mut best, mut history) = if rr_score < greedy_score {
        (rr, rr_tti, rr_score, rr_history)
    } else {
        (assignment, tti, greedy_score, greedy_history)
    };
    search.reassign(&mut assignment, &mut tti, levels, &mut best, &mut history)?;
    let evaluations = search.evaluations;
    ev.static_result("greedy", assignment, tti, evaluations, history)
}

impl Search<'_> {
    /// Levels of `users` only, each tried in turn; returns the best score found.
    fn descend_some(
        &mut self,
        assignment: &[Option<usize>],
        tti: &mut [f64],
        levels: &[f64],
        users: &[usize],
        mut best: Score,
    ) -> Result<Score> {
        loop {
            let mut improved = false;
            for &u in users {
                for &t in levels {
                    if t == tti[u] {
                        continue;
                    }
                    let old = tti[u];
                    tti[u] = t;
                    let s = self.score(assignment, tti)?;
                    if s < best {
                        best = s;
                        improved = true;
                    } else {
                        tti[u] = old;
                    }
                }
            }
            if !improved {
                return Ok(best);
            }
        }
    }

    /// Move single subchannels between users while that helps, re-tuning the
    /// levels of the two users involved after each move.
    fn reassign(
        &mut self,
        assignment: &mut Vec<Option<usize>>,
        tti: &mut Vec<f64>,
        levels: &[f64],
        best: &mut Score,
        history: &mut Vec<Score>,
    ) -> Result<()> {
        let users = tti.len();
        for _ in 0..assignment.len() * users {
            let mut improved = false;
            for sub in 0..assignment.len() {
                for to in 0..users {
                    let from = assignment[sub];
                    if from == Some(to) {
                        continue;
                    }
                    let mut cand = assignment.clone();
                    cand[sub] = Some(to);
                    let mut t = tti.clone();
                    let touched: Vec<usize> = std::iter::once(to).chain(from).collect();
                    for &u in &touched {
                        let n_sub = cand.iter().filter(|a| **a == Some(u)).count();
                        if n_sub > 0 {
                            t[u] = default_level(self.ev, u, n_sub, levels);
                        }
                    }
                    let start = self.score(&cand, &t)?;
                    let score = self.descend_some(&cand, &mut t, levels, &touched, start)?;
                    if score < *best {
                        *assignment = cand;
                        *tti = t;
                        *best = score;
                        history.push(score);
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        Ok(())
    }
}

/// Lower bound on the blocklength of any frame of `user` over `bandwidth_hz`.
fn min_symbols(scenario: &Scenario, user: usize, bandwidth_hz: f64) -> Result<u64> {
    let snr = scenario.snr(user, bandwidth_hz)?;
    match scenario.regime {
        Regime::Fbl => scenario
            .fbl_model()
            .min_blocklength(snr, scenario.packet_bits, scenario.error_target),
        Regime::Ibl => fbl::ibl_min_blocklength(snr, scenario.packet_bits),
    }
}

/// Refine each user's TTI at one-symbol resolution on its allocated band.
///
/// Searches `[n_min, n_current]` by golden section and unit steps, user by user,
/// until a full pass brings no improvement. Never returns a worse plan.
pub fn refine_continuous(scenario: &Scenario, plan: &AllocationPlan) -> Result<AllocationPlan> {
    if !plan.packet_tti_s.is_empty() {
        return Ok(plan.clone());
    }
    let ev = Evaluator::new(scenario)?;
    let mut search = Search {
        ev: &ev,
        evaluations: 0,
    };
    let assignment = plan.assignment.clone();
    let mut tti = plan.tti_s.clone();
    let mut best = search.score(&assignment, &tti)?;
    let mut history = vec![best];
    let sub_bw = scenario.subchannel_bandwidth_hz();
    for _ in 0..20 {
        let mut improved = false;
        for q in 0..tti.len() {
            let n_sub = assignment.iter().filter(|a| **a == Some(q)).count();
            if n_sub == 0 {
                continue;
            }
            let bw = n_sub as f64 * sub_bw;
            let mut lo = u64::MAX;
            for user in (0..scenario.users).filter(|&u| scenario.queue_of(u) == q) {
                lo = lo.min(min_symbols(scenario, user, bw).unwrap_or(1));
            }
            let current = realize_blocklength(tti[q] * bw);
            let hi = current.max(lo);
            let mut trial = tti.clone();
            let (n, score) = golden_integer(lo, hi, |n| {
                trial[q] = n as f64 / bw;
                search.score(&assignment, &trial)
            })?;
            let mut cand = (n, score);
            loop {
                let mut moved = false;
                for next in [cand.0.saturating_sub(1).max(1), cand.0 + 1] {
                    if next == cand.0 {
                        continue;
                    }
                    let mut t = tti.clone();
                    t[q] = next as f64 / bw;
                    let s = search.score(&assignment, &t)?;
                    if s < cand.1 {
                        cand = (next, s);
                        moved = true;
                    }
                }
                if !moved {
                    break;
                }
            }
            if cand.1 < best {
                tti[q] = cand.0 as f64 / bw;
                best = cand.1;
                history.push(best);
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    let evaluations = plan.evaluations + search.evaluations;
    let mut out = ev.static_result(&plan.solver, assignment, tti, evaluations, plan.history.clone())?;
    out.history.extend(history.into_iter().skip(1));
    Ok(out)
}

/// The adaptive pipeline: single-queue search for one user or NOMA; otherwise
/// exhaustive search when small enough, greedy when not, then TTI refinement.
pub fn optimize_adaptive(scenario: &Scenario, levels: &[f64], budget: u128) -> Result<AllocationPlan> {
    scenario.validate()?;
    if scenario.users == 1 || scenario.access == MultipleAccess::Noma {
        let mut plan = optimize_single_user(scenario)?;
        plan.solver = "adaptive/single".into();
        return Ok(plan);
    }
    check_levels(levels)?;
    let size = exhaustive_size(scenario.users, scenario.subchannels, levels.len());
    let (base, name) = if size <= EXHAUSTIVE_LIMIT.min(budget) {
        (optimize_exhaustive(scenario, levels, budget)?, "adaptive/exhaustive")
    } else {
        (optimize_greedy(scenario, levels)?, "adaptive/greedy")
    };
    let mut plan = refine_continuous(scenario, &base)?;
    plan.solver = name.into();
    Ok(plan)
}
