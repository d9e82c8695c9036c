//! Scenario description and its flat `key = value` text format.
//!
//! One assignment per line, `#` starts a comment, lists are written
//! `[a, b, c]`. Keys not present take the defaults of [`Scenario::default`].
//! The full key list lives in `docs/scenario-format.md`.

use crate::delay::Regime;
use crate::error::{Error, Result};
use crate::fbl::{self, ChannelSpec, FblModel, Snr};
use crate::protocol::{profile_of, AccessProtocol, ProtocolProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ArrivalProcess {
    /// Poisson arrivals per user at a fixed rate (packets per second).
    Poisson { rate_per_s: f64 },
    /// Poisson arrivals per user at a fraction of the user's Shannon service
    /// capacity on an equal bandwidth share.
    PoissonLoad { load: f64 },
    /// One packet every `interval_s` per user, starting at 0.
    Deterministic { interval_s: f64 },
    /// Explicit arrival times.
    Trace { entries: Vec<TraceEntry> },
}

/// A trace arrival; without a user it applies to every user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub user: Option<usize>,
    pub time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultipleAccess {
    /// Each subchannel belongs to at most one user at a time.
    Oma,
    /// All users share the full band through one logical queue.
    Noma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub users: usize,
    pub subchannels: usize,
    pub total_bandwidth_hz: f64,
    pub period_s: f64,
    pub packet_bits: u64,
    pub arrival: ArrivalProcess,
    pub error_target: f64,
    pub regime: Regime,
    pub protocol: AccessProtocol,
    pub access: MultipleAccess,
    /// Contention pool size; defaults to the number of subchannels.
    pub contention_resources: Option<usize>,
    /// Attempt cap; `None` means unbounded.
    pub max_attempts: Option<u32>,
    pub processing_s: f64,
    pub propagation_s: f64,
    /// Feedback turnaround between a failed attempt and its retry.
    /// Defaults to one propagation round trip plus one processing time.
    pub retx_gap_s: Option<f64>,
    pub transmit_power_w: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub channel_gains_db: Vec<f64>,
    pub gain_range_db: (f64, f64),
    /// Pinned SNR per user (one value applies to all); overrides the link budget.
    pub snr_db: Option<Vec<f64>>,
    pub log_correction: bool,
    pub max_blocklength: u64,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            users: 1,
            subchannels: 1,
            total_bandwidth_hz: 1e6,
            period_s: 0.01,
            packet_bits: 256,
            arrival: ArrivalProcess::PoissonLoad { load: 0.5 },
            error_target: 1e-7,
            regime: Regime::Fbl,
            protocol: AccessProtocol::GrantFree,
            access: MultipleAccess::Oma,
            contention_resources: None,
            max_attempts: Some(10),
            processing_s: 100e-6,
            propagation_s: 3e-6,
            retx_gap_s: None,
            transmit_power_w: 0.1,
            noise_psd_dbm_per_hz: fbl::DEFAULT_NOISE_PSD_DBM_PER_HZ,
            channel_gains_db: vec![0.0],
            gain_range_db: (-20.0, 20.0),
            snr_db: None,
            log_correction: true,
            max_blocklength: fbl::DEFAULT_MAX_BLOCKLENGTH,
            seed: 1,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(format!("{name} must be positive, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(format!("{name} must be non-negative, got {v}")))
    }
}

impl Scenario {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::validation(format!("cannot read {}: {e}", path.display())))?;
        Scenario::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.users == 0 {
            return Err(Error::validation("users must be >= 1"));
        }
        if self.subchannels == 0 {
            return Err(Error::validation("subchannels must be >= 1"));
        }
        positive("total_bandwidth_hz", self.total_bandwidth_hz)?;
        positive("period_s", self.period_s)?;
        if self.packet_bits == 0 {
            return Err(Error::validation("packet_bits must be >= 1"));
        }
        if !(self.error_target > 0.0 && self.error_target < 1.0) {
            return Err(Error::validation(format!(
                "error_target must be in (0, 1), got {}",
                self.error_target
            )));
        }
        if self.contention_resources == Some(0) {
            return Err(Error::validation("contention_resources must be >= 1"));
        }
        if self.max_attempts == Some(0) {
            return Err(Error::validation("max_attempts must be >= 1"));
        }
        non_negative("processing_s", self.processing_s)?;
        non_negative("propagation_s", self.propagation_s)?;
        if let Some(gap) = self.retx_gap_s {
            non_negative("retx_gap_s", gap)?;
        }
        positive("transmit_power_w", self.transmit_power_w)?;
        if !self.noise_psd_dbm_per_hz.is_finite() {
            return Err(Error::validation("noise_psd_dbm_per_hz must be finite"));
        }
        if self.channel_gains_db.len() != 1 && self.channel_gains_db.len() != self.users {
            return Err(Error::validation(format!(
                "channel_gains_db has {} entries for {} users",
                self.channel_gains_db.len(),
                self.users
            )));
        }
        let (lo, hi) = self.gain_range_db;
        for &g in &self.channel_gains_db {
            if !(g >= lo && g <= hi) {
                return Err(Error::validation(format!(
                    "channel gain {g} dB outside configured range [{lo}, {hi}] dB"
                )));
            }
        }
        if let Some(snrs) = &self.snr_db {
            if snrs.len() != 1 && snrs.len() != self.users {
                return Err(Error::validation(format!(
                    "snr_db has {} entries for {} users",
                    snrs.len(),
                    self.users
                )));
            }
            if snrs.iter().any(|s| !s.is_finite()) {
                return Err(Error::validation("snr_db entries must be finite"));
            }
        }
        if self.max_blocklength == 0 {
            return Err(Error::validation("max_blocklength must be >= 1"));
        }
        match &self.arrival {
            ArrivalProcess::Poisson { rate_per_s } => positive("arrival_rate_per_s", *rate_per_s)?,
            ArrivalProcess::PoissonLoad { load } => positive("arrival_load", *load)?,
            ArrivalProcess::Deterministic { interval_s } => positive("arrival_interval_s", *interval_s)?,
            ArrivalProcess::Trace { entries } => {
                for e in entries {
                    if !(e.time_s >= 0.0 && e.time_s <= self.period_s) {
                        return Err(Error::validation(format!(
                            "trace time {} outside [0, {}]",
                            e.time_s, self.period_s
                        )));
                    }
                    if let Some(u) = e.user {
                        if u >= self.users {
                            return Err(Error::validation(format!("trace user {u} out of range")));
                        }
                    }
                }
            }
        }
        for u in 0..self.users {
            self.snr(u, self.subchannel_bandwidth_hz())?;
        }
        Ok(())
    }

    pub fn subchannel_bandwidth_hz(&self) -> f64 {
        self.total_bandwidth_hz / self.subchannels as f64
    }

    pub fn contention_resources(&self) -> usize {
        self.contention_resources.unwrap_or(self.subchannels)
    }

    pub fn retx_gap_s(&self) -> f64 {
        self.retx_gap_s.unwrap_or(2.0 * self.propagation_s + self.processing_s)
    }

    pub fn profile(&self) -> ProtocolProfile {
        profile_of(self.protocol)
    }

    pub fn fbl_model(&self) -> FblModel {
        FblModel {
            log_correction: self.log_correction,
            max_blocklength: self.max_blocklength,
        }
    }

    pub fn gain_db(&self, user: usize) -> f64 {
        if self.channel_gains_db.len() == 1 {
            self.channel_gains_db[0]
        } else {
            self.channel_gains_db[user]
        }
    }

    pub fn channel(&self, user: usize, bandwidth_hz: f64) -> ChannelSpec {
        ChannelSpec {
            transmit_power_w: self.transmit_power_w,
            channel_gain_db: self.gain_db(user),
            noise_psd_dbm_per_hz: self.noise_psd_dbm_per_hz,
            bandwidth_hz,
        }
    }

    /// SNR of `user` transmitting over `bandwidth_hz`.
    pub fn snr(&self, user: usize, bandwidth_hz: f64) -> Result<Snr> {
        match &self.snr_db {
            Some(v) if v.len() == 1 => Snr::from_db(v[0]),
            Some(v) => Snr::from_db(v[user]),
            None => self.channel(user, bandwidth_hz).snr(),
        }
    }

    /// The same scenario with `users` users. Per-user lists are cycled and
    /// trace entries for removed users are dropped.
    pub fn with_users(&self, users: usize) -> Result<Scenario> {
        let cycle = |v: &[f64]| -> Vec<f64> {
            if v.len() == 1 {
                v.to_vec()
            } else {
                (0..users).map(|u| v[u % v.len()]).collect()
            }
        };
        let mut s = self.clone();
        s.users = users;
        s.channel_gains_db = cycle(&self.channel_gains_db);
        s.snr_db = self.snr_db.as_deref().map(cycle);
        if let ArrivalProcess::Trace { entries } = &mut s.arrival {
            entries.retain(|e| e.user.is_none_or(|u| u < users));
        }
        s.validate()?;
        Ok(s)
    }

    /// Draw one gain per user uniformly from `gain_range_db`.
    pub fn with_random_gains(&self, seed: u64) -> Result<Scenario> {
        let (lo, hi) = self.gain_range_db;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = self.clone();
        s.channel_gains_db = (0..self.users)
            .map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo })
            .collect();
        s.validate()?;
        Ok(s)
    }

    /// Number of decision queues: one per user under OMA, a single one under NOMA.
    pub fn queues(&self) -> usize {
        match self.access {
            MultipleAccess::Oma => self.users,
            MultipleAccess::Noma => 1,
        }
    }

    pub fn queue_of(&self, user: usize) -> usize {
        match self.access {
            MultipleAccess::Oma => user,
            MultipleAccess::Noma => 0,
        }
    }

    /// Per-user Poisson rate implied by the arrival process, if any.
    pub fn poisson_rate(&self, user: usize) -> Result<Option<f64>> {
        match &self.arrival {
            ArrivalProcess::Poisson { rate_per_s } => Ok(Some(*rate_per_s)),
            ArrivalProcess::PoissonLoad { load } => {
                let share = self.total_bandwidth_hz / self.users as f64;
                let c = fbl::capacity(self.snr(user, share)?);
                Ok(Some(load * share * c / self.packet_bits as f64))
            }
            _ => Ok(None),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Scenario::default();
        let mut arrival_kind: Option<String> = None;
        let mut rate = None;
        let mut load = None;
        let mut interval = None;
        let mut trace = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |message: String| Error::Parse { line: line_no, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| perr(format!("expected 'key = value', got '{line}'")))?;
            let key = key.trim();
            let value = value.trim();
            let num = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .map_err(|_| perr(format!("{key}: '{v}' is not a number")))
            };
            let int = |v: &str| -> Result<u64> {
                v.parse::<u64>()
                    .map_err(|_| perr(format!("{key}: '{v}' is not a non-negative integer")))
            };
            let list = |v: &str| -> Result<Vec<String>> {
                let inner = v
                    .strip_prefix('[')
                    .and_then(|r| r.strip_suffix(']'))
                    .ok_or_else(|| perr(format!("{key}: expected a list '[a, b, ...]'")))?;
                Ok(inner
                    .split(',')
                    .map(|x| x.trim().to_string())
                    .filter(|x| !x.is_empty())
                    .collect())
            };
            let num_list = |v: &str| -> Result<Vec<f64>> { list(v)?.iter().map(|x| num(x)).collect() };
            match key {
                "users" => s.users = int(value)? as usize,
                "subchannels" => s.subchannels = int(value)? as usize,
                "total_bandwidth_hz" => s.total_bandwidth_hz = num(value)?,
                "period_s" => s.period_s = num(value)?,
                "packet_bits" => s.packet_bits = int(value)?,
                "arrival" => arrival_kind = Some(value.to_ascii_lowercase()),
                "arrival_rate_per_s" => rate = Some(num(value)?),
                "arrival_load" => load = Some(num(value)?),
                "arrival_interval_s" => interval = Some(num(value)?),
                "arrival_trace" => {
                    let mut entries = Vec::new();
                    for item in list(value)? {
                        let entry = match item.split_once('@') {
                            Some((u, t)) => TraceEntry {
                                user: Some(int(u.trim())? as usize),
                                time_s: num(t.trim())?,
                            },
                            None => TraceEntry {
                                user: None,
                                time_s: num(&item)?,
                            },
                        };
                        entries.push(entry);
                    }
                    trace = Some(entries);
                }
                "error_target" => s.error_target = num(value)?,
                "regime" => {
                    s.regime = match value.to_ascii_lowercase().as_str() {
                        "fbl" => Regime::Fbl,
                        "ibl" => Regime::Ibl,
                        other => return Err(perr(format!("regime: unknown '{other}' (fbl|ibl)"))),
                    }
                }
                "protocol" => s.protocol = value.parse().map_err(|e: Error| perr(e.to_string()))?,
                "access" => {
                    s.access = match value.to_ascii_lowercase().as_str() {
                        "oma" => MultipleAccess::Oma,
                        "noma" => MultipleAccess::Noma,
                        other => return Err(perr(format!("access: unknown '{other}' (oma|noma)"))),
                    }
                }
                "contention_resources" => s.contention_resources = Some(int(value)? as usize),
                "max_attempts" => {
                    s.max_attempts = if value.eq_ignore_ascii_case("unbounded") {
                        None
                    } else {
                        Some(int(value)? as u32)
                    }
                }
                "processing_s" => s.processing_s = num(value)?,
                "propagation_s" => s.propagation_s = num(value)?,
                "retx_gap_s" => s.retx_gap_s = Some(num(value)?),
                "transmit_power_w" => s.transmit_power_w = num(value)?,
                "noise_psd_dbm_per_hz" => s.noise_psd_dbm_per_hz = num(value)?,
                "channel_gains_db" => s.channel_gains_db = num_list(value)?,
                "gain_range_db" => {
                    let r = num_list(value)?;
                    if r.len() != 2 {
                        return Err(perr("gain_range_db: expected [min, max]".into()));
                    }
                    s.gain_range_db = (r[0], r[1]);
                }
                "snr_db" => s.snr_db = Some(num_list(value)?),
                "log_correction" => {
                    s.log_correction = match value {
                        "true" => true,
                        "false" => false,
                        other => return Err(perr(format!("log_correction: expected true|false, got '{other}'"))),
                    }
                }
                "max_blocklength" => s.max_blocklength = int(value)?,
                "seed" => s.seed = int(value)?,
                other => return Err(perr(format!("unknown key '{other}'"))),
            }
        }
        if let Some(kind) = arrival_kind {
            let missing = |k: &str| Error::validation(format!("arrival = {kind} needs {k}"));
            s.arrival = match kind.as_str() {
                "poisson" => match (rate, load) {
                    (Some(r), _) => ArrivalProcess::Poisson { rate_per_s: r },
                    (None, Some(l)) => ArrivalProcess::PoissonLoad { load: l },
                    (None, None) => return Err(missing("arrival_rate_per_s or arrival_load")),
                },
                "deterministic" => ArrivalProcess::Deterministic {
                    interval_s: interval.ok_or_else(|| missing("arrival_interval_s"))?,
                },
                "trace" => ArrivalProcess::Trace {
                    entries: trace.ok_or_else(|| missing("arrival_trace"))?,
                },
                other => {
                    return Err(Error::validation(format!(
                        "unknown arrival '{other}' (poisson|deterministic|trace)"
                    )))
                }
            };
        }
        s.validate()?;
        Ok(s)
    }

    /// Canonical text form; `Scenario::parse(&s.to_text())` reproduces `s`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let list = |v: &[f64]| {
            let items: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            format!("[{}]", items.join(", "))
        };
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("users", self.users.to_string());
        kv("subchannels", self.subchannels.to_string());
        kv("total_bandwidth_hz", format!("{:?}", self.total_bandwidth_hz));
        kv("period_s", format!("{:?}", self.period_s));
        kv("packet_bits", self.packet_bits.to_string());
        match &self.arrival {
            ArrivalProcess::Poisson { rate_per_s } => {
                kv("arrival", "poisson".into());
                kv("arrival_rate_per_s", format!("{rate_per_s:?}"));
            }
            ArrivalProcess::PoissonLoad { load } => {
                kv("arrival", "poisson".into());
                kv("arrival_load", format!("{load:?}"));
            }
            ArrivalProcess::Deterministic { interval_s } => {
                kv("arrival", "deterministic".into());
                kv("arrival_interval_s", format!("{interval_s:?}"));
            }
            ArrivalProcess::Trace { entries } => {
                kv("arrival", "trace".into());
                let items: Vec<String> = entries
                    .iter()
                    .map(|e| match e.user {
                        Some(u) => format!("{u}@{:?}", e.time_s),
                        None => format!("{:?}", e.time_s),
                    })
                    .collect();
                kv("arrival_trace", format!("[{}]", items.join(", ")));
            }
        }
        kv("error_target", format!("{:?}", self.error_target));
        kv("regime", self.regime.to_string());
        kv("protocol", self.protocol.to_string().to_ascii_lowercase());
        kv(
            "access",
            match self.access {
                MultipleAccess::Oma => "oma".into(),
                MultipleAccess::Noma => "noma".into(),
            },
        );
        if let Some(k) = self.contention_resources {
            kv("contention_resources", k.to_string());
        }
        kv(
            "max_attempts",
            self.max_attempts
                .map_or_else(|| "unbounded".to_string(), |k| k.to_string()),
        );
        kv("processing_s", format!("{:?}", self.processing_s));
        kv("propagation_s", format!("{:?}", self.propagation_s));
        if let Some(gap) = self.retx_gap_s {
            kv("retx_gap_s", format!("{gap:?}"));
        }
        kv("transmit_power_w", format!("{:?}", self.transmit_power_w));
        kv("noise_psd_dbm_per_hz", format!("{:?}", self.noise_psd_dbm_per_hz));
        kv("channel_gains_db", list(&self.channel_gains_db));
        kv("gain_range_db", list(&[self.gain_range_db.0, self.gain_range_db.1]));
        if let Some(snr) = &self.snr_db {
            kv("snr_db", list(snr));
        }
        kv("log_correction", self.log_correction.to_string());
        kv("max_blocklength", self.max_blocklength.to_string());
        kv("seed", self.seed.to_string());
        out
    }
}
