//! Reference computations written without the library's numerics or search code.
#![allow(dead_code)]

use std::f64::consts::{LN_2, PI, SQRT_2};
use urllc_core::optimizer::AllocationPlan;
use urllc_core::sim::{plan_frame, simulate, SimMode, StaticPlanPolicy};
use urllc_core::Scenario;

pub fn scenario_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

pub fn load(name: &str) -> Scenario {
    Scenario::from_path(scenario_path(name)).expect("shipped scenario parses")
}

/// erfc by power series below 2 and a continued fraction above.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 2.0 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term.abs() > 1e-18 * sum.abs() {
            n += 1.0;
            term *= -x * x / n;
            sum += term / (2.0 * n + 1.0);
        }
        1.0 - 2.0 / PI.sqrt() * sum
    } else {
        // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
        let mut f = x;
        for k in (1..200).rev() {
            f = x + (k as f64 / 2.0) / f;
        }
        (-x * x).exp() / PI.sqrt() / f
    }
}

pub fn q(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Q^{-1}(p) by bisection on [-40, 40].
pub fn q_inv(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if q(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn capacity(snr: f64) -> f64 {
    (1.0 + snr).ln() / LN_2
}

pub fn dispersion(snr: f64) -> f64 {
    let l = 1.0 / LN_2;
    (1.0 - 1.0 / ((1.0 + snr) * (1.0 + snr))) * l * l
}

/// Smallest n whose normal-approximation payload reaches `bits` at `eps`.
pub fn fbl_min_scan(snr_db: f64, bits: f64, eps: f64) -> u64 {
    let g = 10f64.powf(snr_db / 10.0);
    let (c, v, z) = (capacity(g), dispersion(g), q_inv(eps));
    (1..1_000_000u64)
        .find(|&n| {
            let n = n as f64;
            n * c - (n * v).sqrt() * z + 0.5 * n.log2() >= bits
        })
        .expect("reachable")
}

pub fn ibl_min_scan(snr_db: f64, bits: f64) -> u64 {
    let c = capacity(10f64.powf(snr_db / 10.0));
    (1..1_000_000u64).find(|&n| n as f64 * c >= bits).expect("reachable")
}

/// splitmix64, enough for drawing test instances.
pub struct Mix(pub u64);

impl Mix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OraclePlan {
    pub assignment: Vec<usize>,
    pub tti_s: Vec<f64>,
    pub violations: usize,
    pub avg_delay_s: f64,
}

/// Score one static plan by running the simulator directly and counting
/// constraint breaks from the packet records.
pub fn oracle_score(s: &Scenario, assignment: &[usize], tti_s: &[f64]) -> (usize, f64) {
    let sub_bw = s.total_bandwidth_hz / s.subchannels as f64;
    let mut owned: Vec<Option<usize>> = assignment.iter().map(|&u| Some(u)).collect();
    for q in 0..s.users {
        let n = assignment.iter().filter(|&&u| u == q).count();
        if n > 0 && plan_frame(s, q, n as f64 * sub_bw, tti_s[q]).is_err() {
            for o in owned.iter_mut().filter(|o| **o == Some(q)) {
                *o = None;
            }
        }
    }
    let mut policy = StaticPlanPolicy::new(s, &owned, tti_s).unwrap();
    let stats = simulate(s, &mut policy, SimMode::Expected).unwrap();
    let mut air = vec![0.0; s.subchannels];
    let mut sum = 0.0;
    let mut served = 0usize;
    let mut dropped = 0usize;
    let mut records = stats.packets.clone();
    records.sort_by_key(|p| p.id);
    for p in &records {
        for &x in &p.subchannels {
            air[x] += p.segments as f64 * p.tti_s;
        }
        if p.dropped {
            dropped += 1;
        } else {
            served += 1;
            sum += p.breakdown.total_s;
        }
    }
    let over = air.iter().filter(|&&a| s.period_s - a < -1e-12).count();
    let avg = if served == 0 { 0.0 } else { sum / served as f64 };
    (stats.unserved.len() + dropped + over, avg)
}

/// Every subchannel owned by some user, every user at some level.
pub fn brute_force(s: &Scenario, levels: &[f64]) -> (OraclePlan, usize) {
    let (u, k, l) = (s.users, s.subchannels, levels.len());
    let mut best: Option<OraclePlan> = None;
    let mut count = 0;
    for a in 0..u.pow(k as u32) {
        let assignment: Vec<usize> = (0..k).rev().map(|i| (a / u.pow(i as u32)) % u).collect();
        for b in 0..l.pow(u as u32) {
            let lv: Vec<usize> = (0..u).rev().map(|i| (b / l.pow(i as u32)) % l).collect();
            let tti: Vec<f64> = lv.iter().map(|&i| levels[i]).collect();
            let (violations, avg) = oracle_score(s, &assignment, &tti);
            count += 1;
            let cand = OraclePlan {
                assignment: assignment.clone(),
                tti_s: tti,
                violations,
                avg_delay_s: avg,
            };
            let better = match &best {
                None => true,
                Some(b) => {
                    let key = |p: &OraclePlan| (p.violations, p.avg_delay_s);
                    key(&cand) < key(b)
                        || (key(&cand) == key(b)
                            && cand.assignment == b.assignment
                            && cand.tti_s.iter().sum::<f64>() < b.tti_s.iter().sum::<f64>())
                }
            };
            if better {
                best = Some(cand);
            }
        }
    }
    (best.unwrap(), count)
}

pub fn matches_oracle(plan: &AllocationPlan, oracle: &OraclePlan) -> bool {
    let assignment: Vec<Option<usize>> = oracle.assignment.iter().map(|&u| Some(u)).collect();
    plan.assignment == assignment
        && plan.tti_s == oracle.tti_s
        && plan.score.violations == oracle.violations
        && plan.objective_s.to_bits() == oracle.avg_delay_s.to_bits()
}
