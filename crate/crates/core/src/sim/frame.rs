//! Realising a frame allocation: blocklength, segmentation and decoding error.

use crate::delay::Regime;
use crate::error::{Constraint, Error, Infeasibility, Result};
use crate::fbl::{self, realize_blocklength};
use crate::scenario::Scenario;
use serde::{Deserialize, Serialize};

/// Upper bound on the number of blocks one packet may be split across.
pub const MAX_SEGMENTS: u32 = 1024;

/// One frame's decision variables: a queue, its subchannels and the TTI.
///
/// Under OMA `user` is the user index; under NOMA it is the single shared
/// queue (always 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAlloc {
    pub user: usize,
    pub subchannels: Vec<usize>,
    pub tti_s: f64,
}

impl FrameAlloc {
    pub fn new(user: usize, subchannels: Vec<usize>, tti_s: f64) -> Self {
        FrameAlloc {
            user,
            subchannels,
            tti_s,
        }
    }

    /// Allocated bandwidth given the per-subchannel bandwidth.
    pub fn bandwidth_hz(&self, subchannel_bw: f64) -> f64 {
        self.subchannels.len() as f64 * subchannel_bw
    }

    /// Realised blocklength `ceil(tti * bandwidth)`.
    pub fn blocklength(&self, subchannel_bw: f64) -> u64 {
        realize_blocklength(self.tti_s * self.bandwidth_hz(subchannel_bw))
    }
}

/// How a packet is carried on a given allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramePlan {
    pub blocklength: u64,
    pub segments: u32,
    pub segment_bits: u64,
    /// Probability that one attempt (all segments) is not decoded.
    pub decode_eps: f64,
    /// Air time of one transmission of the packet, `segments * tti`.
    pub air_time_s: f64,
}

fn segment_error(scenario: &Scenario, snr: fbl::Snr, n: u64, bits: u64) -> Result<f64> {
    match scenario.regime {
        Regime::Ibl => Ok(if n as f64 * fbl::capacity(snr) >= bits as f64 {
            0.0
        } else {
            1.0
        }),
        Regime::Fbl => Ok(scenario.fbl_model().error_prob(snr, n as f64, bits as f64)?.value),
    }
}

/// Carry one packet of `user` in blocks of `tti_s` over `bandwidth_hz`.
///
/// Uses the fewest consecutive blocks whose per-block error keeps the packet
/// error at or below the scenario target.
pub fn plan_frame(scenario: &Scenario, user: usize, bandwidth_hz: f64, tti_s: f64) -> Result<FramePlan> {
    if !(tti_s > 0.0) || !tti_s.is_finite() {
        return Err(Error::validation(format!("TTI must be positive, got {tti_s}")));
    }
    let n = realize_blocklength(tti_s * bandwidth_hz);
    if n == 0 {
        return Err(Infeasibility::new(Constraint::ZeroPayload, format!("TTI {tti_s} s holds no symbol")).into());
    }
    let snr = scenario.snr(user, bandwidth_hz)?;
    let b = scenario.packet_bits;
    let eps = scenario.error_target;
    for k in 1..=MAX_SEGMENTS {
        let bits = b.div_ceil(k as u64);
        let per_segment_target = -((-eps).ln_1p() / k as f64).exp_m1();
        let e = segment_error(scenario, snr, n, bits)?;
        if e <= per_segment_target {
            let decode_eps = -((-e).ln_1p() * k as f64).exp_m1();
            return Ok(FramePlan {
                blocklength: n,
                segments: k,
                segment_bits: bits,
                decode_eps,
                air_time_s: k as f64 * tti_s,
            });
        }
        if bits == 1 {
            break;
        }
    }
    Err(Infeasibility::new(
        Constraint::Reliability,
        format!(
            "{n}-symbol blocks cannot carry {b} bits at error {eps:e} for user {user} (SNR {:.2} dB)",
            snr.db()
        ),
    )
    .into())
}
