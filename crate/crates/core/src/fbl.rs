//! Finite-blocklength primitives for the complex AWGN channel.
//!
//! The achievable rate at blocklength `n` and error probability `eps` follows
//! the normal approximation
//!
//! ```text
//! R(n, eps) = C - sqrt(V / n) * Qinv(eps) + log2(n) / (2n)
//! ```
//!
//! with `C = log2(1 + snr)` and `V = (1 - (1 + snr)^-2) * log2(e)^2`.
//! Rates are in bits per channel symbol, blocklengths in symbols.

use crate::error::{Constraint, Error, Infeasibility, Result};
use crate::gaussian::{q_function, q_inverse};
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, LOG2_E};

/// Lower clamp applied to decoding error probabilities.
pub const MIN_ERROR_PROB: f64 = 1e-30;
/// Upper clamp applied to decoding error probabilities.
pub const MAX_ERROR_PROB: f64 = 1.0 - 1e-15;
/// Default search limit for [`FblModel::min_blocklength`].
pub const DEFAULT_MAX_BLOCKLENGTH: u64 = 1_000_000;
/// Thermal noise floor used when a scenario does not override it.
pub const DEFAULT_NOISE_PSD_DBM_PER_HZ: f64 = -174.0;

/// Linear signal-to-noise ratio.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Snr(f64);

impl Snr {
    pub fn from_linear(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::domain(format!("SNR must be finite, got {value}")));
        }
        if value < 0.0 {
            return Err(Error::domain(format!("SNR must be non-negative, got {value}")));
        }
        Ok(Snr(value))
    }

    pub fn from_db(db: f64) -> Result<Self> {
        Snr::from_linear(10f64.powf(db / 10.0))
    }

    pub fn linear(self) -> f64 {
        self.0
    }

    pub fn db(self) -> f64 {
        10.0 * self.0.log10()
    }
}

/// Link budget of one user on an allocated band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub transmit_power_w: f64,
    pub channel_gain_db: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub bandwidth_hz: f64,
}

impl ChannelSpec {
    pub fn new(
        transmit_power_w: f64,
        channel_gain_db: f64,
        noise_psd_dbm_per_hz: f64,
        bandwidth_hz: f64,
    ) -> Result<Self> {
        let spec = ChannelSpec {
            transmit_power_w,
            channel_gain_db,
            noise_psd_dbm_per_hz,
            bandwidth_hz,
        };
        spec.snr()?;
        Ok(spec)
    }

    /// Same link on a different bandwidth; the power is spread over the new band.
    pub fn with_bandwidth(self, bandwidth_hz: f64) -> Self {
        ChannelSpec { bandwidth_hz, ..self }
    }

    /// `P * g / (N0 * B)`.
    pub fn snr(&self) -> Result<Snr> {
        if !(self.transmit_power_w > 0.0) || !self.transmit_power_w.is_finite() {
            return Err(Error::domain(format!(
                "transmit power must be positive, got {}",
                self.transmit_power_w
            )));
        }
        if !(self.bandwidth_hz > 0.0) || !self.bandwidth_hz.is_finite() {
            return Err(Error::domain(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth_hz
            )));
        }
        let gain = 10f64.powf(self.channel_gain_db / 10.0);
        let noise_w_per_hz = 10f64.powf((self.noise_psd_dbm_per_hz - 30.0) / 10.0);
        let snr = self.transmit_power_w * gain / (noise_w_per_hz * self.bandwidth_hz);
        if !(snr > 0.0) {
            return Err(Error::domain(format!("derived SNR {snr} is not positive")));
        }
        Snr::from_linear(snr)
    }
}

/// Shannon capacity `log2(1 + snr)` in bits per symbol.
pub fn capacity(snr: Snr) -> f64 {
    snr.0.ln_1p() / LN_2
}

/// Channel dispersion `(1 - (1 + snr)^-2) * log2(e)^2` in squared bits per symbol.
pub fn dispersion(snr: Snr) -> f64 {
    let s = snr.0;
    // 1 - (1+s)^-2 written to stay accurate for small s
    let factor = s * (2.0 + s) / ((1.0 + s) * (1.0 + s));
    factor * LOG2_E * LOG2_E
}

/// Decoding error probability together with a degeneracy flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorProb {
    pub value: f64,
    /// Set when the dispersion vanishes and the probability is an exact step.
    pub degenerate: bool,
}

/// Realise a continuous blocklength as an integer number of symbols (round up).
pub fn realize_blocklength(symbols: f64) -> u64 {
    let rounded = symbols.round();
    if (symbols - rounded).abs() <= 1e-9 * symbols.abs().max(1.0) {
        rounded.max(0.0) as u64
    } else {
        symbols.ceil().max(0.0) as u64
    }
}

/// Normal-approximation model settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FblModel {
    /// Include the `log2(n) / (2n)` correction term.
    pub log_correction: bool,
    /// Upper limit for the minimum blocklength search.
    pub max_blocklength: u64,
}

impl Default for FblModel {
    fn default() -> Self {
        FblModel {
            log_correction: true,
            max_blocklength: DEFAULT_MAX_BLOCKLENGTH,
        }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("error probability must be in (0, 1), got {eps}")))
    }
}

fn check_blocklength(n: f64) -> Result<()> {
    if n >= 1.0 && n.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("blocklength must be >= 1, got {n}")))
    }
}

impl FblModel {
    fn correction(&self, n: f64) -> f64 {
        if self.log_correction {
            n.log2() / (2.0 * n)
        } else {
            0.0
        }
    }

    /// Achievable rate in bits per symbol, floored at zero.
    pub fn rate(&self, snr: Snr, n: f64, eps: f64) -> Result<f64> {
        check_blocklength(n)?;
        check_eps(eps)?;
        let penalty = (dispersion(snr) / n).sqrt() * q_inverse(eps)?;
        Ok((capacity(snr) - penalty + self.correction(n)).max(0.0))
    }

    /// Error probability of sending `payload_bits` in `n` symbols.
    pub fn error_prob(&self, snr: Snr, n: f64, payload_bits: f64) -> Result<ErrorProb> {
        check_blocklength(n)?;
        if !(payload_bits >= 1.0) {
            return Err(Error::domain(format!("payload must be >= 1 bit, got {payload_bits}")));
        }
        let margin = n * capacity(snr) - payload_bits + n * self.correction(n);
        let v = dispersion(snr);
        if v == 0.0 {
            let value = if margin > 0.0 {
                0.0
            } else if margin < 0.0 {
                1.0
            } else {
                0.5
            };
            return Ok(ErrorProb {
                value,
                degenerate: true,
            });
        }
        let q = q_function(margin / (n * v).sqrt());
        Ok(ErrorProb {
            value: q.clamp(MIN_ERROR_PROB, MAX_ERROR_PROB),
            degenerate: false,
        })
    }

    /// Smallest integer blocklength whose error probability meets `error_target`.
    pub fn min_blocklength(&self, snr: Snr, payload_bits: u64, error_target: f64) -> Result<u64> {
        check_eps(error_target)?;
        if payload_bits == 0 {
            return Err(Error::domain("payload must be >= 1 bit"));
        }
        let b = payload_bits as f64;
        let meets = |n: u64| -> Result<bool> { Ok(self.error_prob(snr, n as f64, b)?.value <= error_target) };
        let n_max = self.max_blocklength.max(1);
        if !meets(n_max)? {
            return Err(Infeasibility::new(
                Constraint::MaxBlocklength,
                format!(
                    "{payload_bits} bits at error {error_target:e} need more than {n_max} symbols (SNR {:.3} dB)",
                    snr.db()
                ),
            )
            .into());
        }
        // error_prob is decreasing in n: bracket by doubling, then bisect.
        let mut hi = 1u64;
        while hi < n_max && !meets(hi)? {
            hi = (hi * 2).min(n_max);
        }
        let mut lo = hi / 2;
        if lo >= 1 && meets(lo)? {
            lo = 0;
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if meets(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }
}

/// Infinite-blocklength minimum: smallest `n` with `n * C >= b`.
pub fn ibl_min_blocklength(snr: Snr, payload_bits: u64) -> Result<u64> {
    let c = capacity(snr);
    if !(c > 0.0) {
        return Err(Infeasibility::new(Constraint::ZeroPayload, "zero capacity").into());
    }
    let b = payload_bits as f64;
    let mut n = (b / c).ceil().max(1.0) as u64;
    while n > 1 && (n - 1) as f64 * c >= b {
        n -= 1;
    }
    while (n as f64) * c < b {
        n += 1;
    }
    Ok(n)
}

/// FBL rate with the default model.
pub fn fbl_rate(snr: Snr, n: f64, eps: f64) -> Result<f64> {
    FblModel::default().rate(snr, n, eps)
}

/// Decoding error probability with the default model.
pub fn error_prob(snr: Snr, n: f64, payload_bits: f64) -> Result<ErrorProb> {
    FblModel::default().error_prob(snr, n, payload_bits)
}

/// Minimum blocklength with the default model.
pub fn min_blocklength(snr: Snr, payload_bits: u64, error_target: f64) -> Result<u64> {
    FblModel::default().min_blocklength(snr, payload_bits, error_target)
}
