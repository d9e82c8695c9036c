//! Over-the-air delay composition and the blocklength tradeoff sweep.

use crate::error::{Error, Result};
use crate::fbl::{self, Snr};
use crate::protocol::ProtocolProfile;
use crate::scenario::{ArrivalProcess, Scenario};
use crate::sim::generate_arrivals;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Infinite blocklength: rate equals capacity, no decoding errors.
    Ibl,
    /// Finite blocklength: normal-approximation rate and error probability.
    Fbl,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Ibl => "ibl",
            Regime::Fbl => "fbl",
        })
    }
}

/// Per-occurrence component times of one access.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentTimes {
    pub transmission_s: f64,
    pub processing_s: f64,
    pub propagation_s: f64,
}

/// Per-packet delay ledger. Component fields are accumulated over all attempts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayBreakdown {
    pub transmission_s: f64,
    pub queuing_s: f64,
    pub processing_s: f64,
    pub propagation_s: f64,
    /// Feedback turnaround spent between attempts.
    pub feedback_s: f64,
    pub attempts: f64,
    pub total_s: f64,
}

/// Transmission delay of a frame: its TTI, `n / B`.
pub fn transmission_delay(blocklength: f64, bandwidth_hz: f64) -> Result<f64> {
    if !(bandwidth_hz > 0.0) || !bandwidth_hz.is_finite() {
        return Err(Error::domain(format!("bandwidth must be positive, got {bandwidth_hz}")));
    }
    if !(blocklength >= 0.0) || !blocklength.is_finite() {
        return Err(Error::domain(format!(
            "blocklength must be non-negative, got {blocklength}"
        )));
    }
    Ok(blocklength / bandwidth_hz)
}

/// Mean number of attempts and residual loss of a capped retransmission process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttemptStats {
    pub mean: f64,
    pub loss: f64,
    /// Every attempt fails (`eps = 1`); the packet is always lost.
    pub saturated: bool,
}

/// Truncated-geometric attempt statistics for per-attempt failure `eps` and cap `max_attempts`.
pub fn expected_attempts(eps: f64, max_attempts: Option<u32>) -> Result<AttemptStats> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::domain(format!(
            "attempt failure probability {eps} outside [0, 1]"
        )));
    }
    match max_attempts {
        Some(0) => Err(Error::domain("max_attempts must be >= 1")),
        Some(k) if eps == 1.0 => Ok(AttemptStats {
            mean: k as f64,
            loss: 1.0,
            saturated: true,
        }),
        None if eps == 1.0 => Err(Error::domain("unbounded retries with certain failure never terminate")),
        Some(k) => {
            let tail = eps.powi(k as i32);
            Ok(AttemptStats {
                mean: (1.0 - tail) / (1.0 - eps),
                loss: tail,
                saturated: false,
            })
        }
        None => Ok(AttemptStats {
            mean: 1.0 / (1.0 - eps),
            loss: 0.0,
            saturated: false,
        }),
    }
}

/// First and second moments of the attempt count.
fn attempt_moments(eps: f64, max_attempts: Option<u32>) -> Result<(f64, f64)> {
    let stats = expected_attempts(eps, max_attempts)?;
    match max_attempts {
        None => Ok((stats.mean, (1.0 + eps) / ((1.0 - eps) * (1.0 - eps)))),
        Some(k) => {
            let mut second = 0.0;
            let mut p_reach = 1.0;
            for j in 1..=k {
                let p_stop = if j == k { p_reach } else { p_reach * (1.0 - eps) };
                second += p_stop * (j as f64) * (j as f64);
                p_reach *= eps;
            }
            Ok((stats.mean, second))
        }
    }
}

/// Compose the over-the-air delay of one packet.
///
/// `total = queuing + attempts * (c_tx T_tx + c_proc T_proc + c_prop T_prop) + (attempts - 1) * gap`.
/// Queuing is counted once: the packet keeps its head-of-line position while retrying.
pub fn compose_over_the_air(
    queuing_s: f64,
    times: &ComponentTimes,
    profile: &ProtocolProfile,
    attempts: f64,
    retx_gap_s: f64,
) -> Result<DelayBreakdown> {
    for (name, v) in [
        ("queuing", queuing_s),
        ("transmission", times.transmission_s),
        ("processing", times.processing_s),
        ("propagation", times.propagation_s),
        ("retransmission gap", retx_gap_s),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::domain(format!("{name} time must be non-negative, got {v}")));
        }
    }
    if !(attempts >= 1.0) || !attempts.is_finite() {
        return Err(Error::domain(format!("attempts must be >= 1, got {attempts}")));
    }
    let per_attempt = profile.single_access_delay(times.transmission_s, times.processing_s, times.propagation_s);
    let total_s = queuing_s + attempts * per_attempt + (attempts - 1.0) * retx_gap_s;
    Ok(DelayBreakdown {
        transmission_s: attempts * profile.tx_count as f64 * times.transmission_s,
        queuing_s,
        processing_s: attempts * profile.proc_count as f64 * times.processing_s,
        propagation_s: attempts * profile.prop_count as f64 * times.propagation_s,
        feedback_s: (attempts - 1.0) * retx_gap_s,
        attempts,
        total_s,
    })
}

/// One grid point of the tradeoff curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: u64,
    pub tti_s: f64,
    pub tx_s: f64,
    pub queue_s: f64,
    pub attempts: f64,
    pub eps: f64,
    pub total_s: f64,
    pub feasible: bool,
    pub note: Option<String>,
}

impl SweepPoint {
    fn infeasible(n: u64, tti_s: f64, note: impl Into<String>) -> Self {
        SweepPoint {
            n,
            tti_s,
            tx_s: f64::NAN,
            queue_s: f64::NAN,
            attempts: f64::NAN,
            eps: f64::NAN,
            total_s: f64::NAN,
            feasible: false,
            note: Some(note.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub regime: Regime,
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    /// Index of the smallest feasible total (first one on ties).
    pub fn argmin(&self) -> Option<usize> {
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.feasible)
            .min_by(|a, b| a.1.total_s.total_cmp(&b.1.total_s))
            .map(|(i, _)| i)
    }

    /// The minimiser is neither the first nor the last grid point.
    pub fn argmin_is_interior(&self) -> bool {
        match self.argmin() {
            Some(i) => i > 0 && i + 1 < self.points.len(),
            None => false,
        }
    }

    pub fn feasible_count(&self) -> usize {
        self.points.iter().filter(|p| p.feasible).count()
    }

    /// CSV with columns `n,tti_s,tx_s,queue_s,attempts,eps,total_s,feasible`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,tti_s,tx_s,queue_s,attempts,eps,total_s,feasible\n");
        for p in &self.points {
            let f = |v: f64| if v.is_finite() { format!("{v:e}") } else { String::new() };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                p.n,
                f(p.tti_s),
                f(p.tx_s),
                f(p.queue_s),
                f(p.attempts),
                f(p.eps),
                f(p.total_s),
                p.feasible as u8
            );
        }
        out
    }
}

/// Inputs of the uniform-blocklength queue analysis that do not depend on `n`.
#[derive(Debug, Clone)]
pub struct UniformQueue {
    pub bandwidth_hz: f64,
    pub packet_bits: f64,
    pub profile: ProtocolProfile,
    pub processing_s: f64,
    pub propagation_s: f64,
    pub retx_gap_s: f64,
    pub max_attempts: Option<u32>,
    pub load: QueueLoad,
}

/// How packets reach the link-layer queue.
#[derive(Debug, Clone)]
pub enum QueueLoad {
    /// Poisson arrivals at the aggregate rate (packets per second).
    Poisson(f64),
    /// Explicit sorted arrival instants.
    Arrivals(Vec<f64>),
}

impl UniformQueue {
    pub fn from_scenario(scenario: &Scenario) -> Result<Self> {
        let load = match scenario.arrival {
            ArrivalProcess::Poisson { .. } | ArrivalProcess::PoissonLoad { .. } => {
                let mut rate = 0.0;
                for u in 0..scenario.users {
                    rate += scenario.poisson_rate(u)?.unwrap_or(0.0);
                }
                QueueLoad::Poisson(rate)
            }
            _ => {
                let arrivals = generate_arrivals(scenario)?;
                QueueLoad::Arrivals(arrivals.iter().map(|a| a.time_s).collect())
            }
        };
        Ok(UniformQueue {
            bandwidth_hz: scenario.total_bandwidth_hz,
            packet_bits: scenario.packet_bits as f64,
            profile: scenario.profile(),
            processing_s: scenario.processing_s,
            propagation_s: scenario.propagation_s,
            retx_gap_s: scenario.retx_gap_s(),
            max_attempts: scenario.max_attempts,
            load,
        })
    }

    /// Analyse the queue when every frame has `n` symbols, carries traffic at
    /// `rate` bits per symbol and fails with probability `eps`.
    ///
    /// The link drains queued bits at `rate * B` bits/s; a packet is delivered at
    /// the end of the frame carrying its last bit, so its transmission delay is
    /// the TTI `n / B`.
    pub fn point(&self, n: u64, rate: f64, eps: f64) -> Result<SweepPoint> {
        let tti_s = transmission_delay(n as f64, self.bandwidth_hz)?;
        if n == 0 {
            return Ok(SweepPoint::infeasible(n, tti_s, "empty frame"));
        }
        if !(rate > 0.0) {
            return Ok(SweepPoint::infeasible(n, tti_s, "zero rate"));
        }
        let stats = expected_attempts(eps, self.max_attempts)?;
        let (m1, m2) = attempt_moments(eps, self.max_attempts)?;
        // channel time used by one packet per attempt
        let per_attempt = self.profile.tx_count as f64 * self.packet_bits / (rate * self.bandwidth_hz);
        let mean_service = m1 * per_attempt;
        let queue_s = match &self.load {
            QueueLoad::Poisson(lambda) => {
                let rho = lambda * mean_service;
                if rho >= 1.0 {
                    return Ok(SweepPoint::infeasible(
                        n,
                        tti_s,
                        format!("unstable queue (load {rho:.3})"),
                    ));
                }
                lambda * m2 * per_attempt * per_attempt / (2.0 * (1.0 - rho))
            }
            QueueLoad::Arrivals(times) => lindley_mean_wait(times, mean_service),
        };
        let times = ComponentTimes {
            transmission_s: tti_s,
            processing_s: self.processing_s,
            propagation_s: self.propagation_s,
        };
        let b = compose_over_the_air(queue_s, &times, &self.profile, stats.mean, self.retx_gap_s)?;
        Ok(SweepPoint {
            n,
            tti_s,
            tx_s: b.transmission_s,
            queue_s,
            attempts: stats.mean,
            eps,
            total_s: b.total_s,
            feasible: true,
            note: None,
        })
    }
}

fn lindley_mean_wait(times: &[f64], service: f64) -> f64 {
    if times.is_empty() {
        return 0.0;
    }
    let mut wait = 0.0;
    let mut sum = 0.0;
    for w in times.windows(2) {
        wait = (wait + service - (w[1] - w[0])).max(0.0);
        sum += wait;
    }
    sum / times.len() as f64
}

/// Sweep a uniform blocklength over `grid` and report the delay components.
///
/// The link is the first user's channel over the full band; arrivals of all
/// users feed one queue. Under FBL each frame is coded at the scenario's error
/// target; under IBL at capacity and without errors.
pub fn tradeoff_sweep(scenario: &Scenario, grid: &[u64]) -> Result<SweepCurve> {
    if grid.is_empty() {
        return Err(Error::validation("blocklength grid is empty"));
    }
    scenario.validate()?;
    let queue = UniformQueue::from_scenario(scenario)?;
    let snr: Snr = scenario.snr(0, scenario.total_bandwidth_hz)?;
    let model = scenario.fbl_model();
    let n_ibl = fbl::ibl_min_blocklength(snr, scenario.packet_bits).ok();
    let capacity = fbl::capacity(snr);
    let mut points = Vec::with_capacity(grid.len());
    for &n in grid {
        let tti_s = n as f64 / scenario.total_bandwidth_hz;
        match n_ibl {
            Some(min) if n >= min => {}
            _ => {
                points.push(SweepPoint::infeasible(n, tti_s, "below the IBL minimum blocklength"));
                continue;
            }
        }
        let point = match scenario.regime {
            crate::delay::Regime::Ibl => queue.point(n, capacity, 0.0)?,
            crate::delay::Regime::Fbl => {
                let rate = model.rate(snr, n as f64, scenario.error_target)?;
                queue.point(n, rate, scenario.error_target)?
            }
        };
        points.push(point);
    }
    Ok(SweepCurve {
        regime: scenario.regime,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{profile_of, AccessProtocol};
    use proptest::prelude::*;

    fn gf() -> ProtocolProfile {
        profile_of(AccessProtocol::GrantFree)
    }

    #[test]
    fn transmission_delay_points() {
        assert_eq!(transmission_delay(0.0, 1e6).unwrap(), 0.0);
        assert!((transmission_delay(94.0, 1e6).unwrap() - 94e-6).abs() < 1e-18);
        assert!((transmission_delay(500.0, 1e6).unwrap() - 0.5e-3).abs() < 1e-18);
        assert!(transmission_delay(10.0, 0.0).is_err());
    }

    #[test]
    fn attempts_points() {
        let a = expected_attempts(0.0, Some(4)).unwrap();
        assert_eq!((a.mean, a.loss), (1.0, 0.0));
        let a = expected_attempts(0.5, None).unwrap();
        assert_eq!(a.mean, 2.0);
        // two-attempt outcome tree: success first (0.9) -> 1, else second attempt -> 2
        let tree_mean = 0.9 * 1.0 + 0.1 * 2.0;
        let a = expected_attempts(0.1, Some(2)).unwrap();
        assert!((a.mean - tree_mean).abs() < 1e-15);
        assert!((a.loss - 0.01).abs() < 1e-15);
        let a = expected_attempts(1.0, Some(3)).unwrap();
        assert!(a.saturated && a.mean == 3.0 && a.loss == 1.0);
        assert!(expected_attempts(1.0, None).is_err());
        assert!(expected_attempts(1.5, None).is_err());
    }

    #[test]
    fn moments_match_enumeration() {
        let (m1, m2) = attempt_moments(0.3, Some(3)).unwrap();
        let p = [0.7, 0.3 * 0.7, 0.3 * 0.3];
        let e1: f64 = p.iter().enumerate().map(|(i, p)| p * (i + 1) as f64).sum();
        let e2: f64 = p.iter().enumerate().map(|(i, p)| p * ((i + 1) * (i + 1)) as f64).sum();
        assert!((m1 - e1).abs() < 1e-15 && (m2 - e2).abs() < 1e-14);
    }

    #[test]
    fn compose_points() {
        let ms = ComponentTimes {
            transmission_s: 1e-3,
            processing_s: 1e-3,
            propagation_s: 1e-3,
        };
        let b = compose_over_the_air(2e-3, &ms, &gf(), 1.0, 0.0).unwrap();
        assert!((b.total_s - 6e-3).abs() < 1e-15);
        let zero = ComponentTimes {
            transmission_s: 0.0,
            processing_s: 0.0,
            propagation_s: 0.0,
        };
        assert_eq!(compose_over_the_air(0.0, &zero, &gf(), 1.0, 0.0).unwrap().total_s, 0.0);
        let t = ComponentTimes {
            transmission_s: 94e-6,
            processing_s: 100e-6,
            propagation_s: 3e-6,
        };
        let b = compose_over_the_air(0.0, &t, &gf(), 2.0, 0.0).unwrap();
        assert!((b.total_s - 400e-6).abs() < 1e-15);
        assert!(compose_over_the_air(-1.0, &t, &gf(), 1.0, 0.0).is_err());
        assert!(compose_over_the_air(0.0, &t, &gf(), 0.5, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn composition_is_linear(tx in 0.0..1e-2f64, pr in 0.0..1e-2f64, pp in 0.0..1e-2f64,
                                 q in 0.0..1e-2f64, a in 1.0..10.0f64) {
            let t = ComponentTimes { transmission_s: tx, processing_s: pr, propagation_s: pp };
            let t2 = ComponentTimes { transmission_s: 2.0 * tx, processing_s: 2.0 * pr, propagation_s: 2.0 * pp };
            let one = compose_over_the_air(q, &t, &gf(), a, 0.0).unwrap();
            let two = compose_over_the_air(q, &t2, &gf(), a, 0.0).unwrap();
            let lhs = two.total_s - q;
            let rhs = 2.0 * (one.total_s - q);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-12));
        }

        #[test]
        fn attempts_bounded(eps in 0.0..1.0f64, k in 1u32..50) {
            let a = expected_attempts(eps, Some(k)).unwrap();
            prop_assert!(a.mean >= 1.0 && a.mean <= k as f64 + 1e-12);
            prop_assert!((0.0..=1.0).contains(&a.loss));
        }
    }

    fn reference(regime: Regime) -> Scenario {
        Scenario {
            snr_db: Some(vec![10.0]),
            arrival: ArrivalProcess::PoissonLoad { load: 0.7 },
            regime,
            ..Scenario::default()
        }
    }

    #[test]
    fn fbl_sweep_has_interior_minimum() {
        let grid: Vec<u64> = (94..=400).collect();
        let curve = tradeoff_sweep(&reference(Regime::Fbl), &grid).unwrap();
        assert_eq!(curve.feasible_count(), grid.len());
        assert!(curve.argmin_is_interior());
    }

    #[test]
    fn ibl_sweep_decreases_toward_small_n() {
        let grid: Vec<u64> = (75..=400).collect();
        let curve = tradeoff_sweep(&reference(Regime::Ibl), &grid).unwrap();
        for w in curve.points.windows(2) {
            assert!(w[0].total_s <= w[1].total_s);
        }
        assert_eq!(curve.argmin(), Some(0));
    }

    #[test]
    fn sweep_marks_points_below_ibl_minimum() {
        let curve = tradeoff_sweep(&reference(Regime::Fbl), &[10, 74, 75]).unwrap();
        assert!(!curve.points[0].feasible && !curve.points[1].feasible);
        assert!(curve.points[2].feasible || curve.points[2].note.is_some());
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert!(tradeoff_sweep(&reference(Regime::Fbl), &[]).is_err());
    }

    #[test]
    fn single_packet_prefers_shorter_frame() {
        use crate::scenario::TraceEntry;
        let s = Scenario {
            arrival: ArrivalProcess::Trace {
                entries: vec![TraceEntry {
                    user: None,
                    time_s: 0.0,
                }],
            },
            ..reference(Regime::Fbl)
        };
        let curve = tradeoff_sweep(&s, &[110, 200]).unwrap();
        assert!(curve.points.iter().all(|p| p.eps == s.error_target && p.queue_s == 0.0));
        assert!(curve.points[0].total_s < curve.points[1].total_s);
    }

    #[test]
    fn fbl_pinned_to_capacity_reproduces_ibl() {
        let ibl = reference(Regime::Ibl);
        let queue = UniformQueue::from_scenario(&ibl).unwrap();
        let snr = ibl.snr(0, ibl.total_bandwidth_hz).unwrap();
        let curve = tradeoff_sweep(&ibl, &[80, 120, 300]).unwrap();
        for p in &curve.points {
            let forced = queue.point(p.n, fbl::capacity(snr), 0.0).unwrap();
            assert!((forced.total_s - p.total_s).abs() <= 1e-12 * p.total_s);
        }
    }

    #[test]
    fn csv_header_is_fixed() {
        let curve = tradeoff_sweep(&reference(Regime::Fbl), &[94]).unwrap();
        let csv = curve.to_csv();
        assert!(csv.starts_with("n,tti_s,tx_s,queue_s,attempts,eps,total_s,feasible\n94,"));
    }
}
