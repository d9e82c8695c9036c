//! Access protocol delay profiles and the grant-free contention model.
//!
//! Each profile counts how often a component delay occurs during one access:
//!
//! | component    | GB (preamble + data / BS + user) | GF |
//! |--------------|----------------------------------|----|
//! | transmission | 2                                | 1  |
//! | queuing      | 1                                | 0  |
//! | processing   | 3                                | 1  |
//! | propagation  | 4                                | 2  |
//!
//! GB resolves contention through its handshake, GF transmits data immediately
//! and resolves collisions by retransmission.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessProtocol {
    #[serde(rename = "GB")]
    GrantBased,
    #[serde(rename = "GF")]
    GrantFree,
}

impl fmt::Display for AccessProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccessProtocol::GrantBased => "GB",
            AccessProtocol::GrantFree => "GF",
        })
    }
}

impl FromStr for AccessProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gb" => Ok(AccessProtocol::GrantBased),
            "gf" => Ok(AccessProtocol::GrantFree),
            other => Err(Error::validation(format!("unknown protocol '{other}' (gb|gf)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contention {
    ContentionFree,
    ContentionBased,
}

/// Occurrence counts of each delay component in one access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolProfile {
    pub protocol: AccessProtocol,
    pub tx_count: u32,
    pub queue_count: u32,
    pub proc_count: u32,
    pub prop_count: u32,
    pub contention: Contention,
}

const GRANT_BASED: ProtocolProfile = ProtocolProfile {
    protocol: AccessProtocol::GrantBased,
    tx_count: 2,
    queue_count: 1,
    proc_count: 3,
    prop_count: 4,
    contention: Contention::ContentionFree,
};

const GRANT_FREE: ProtocolProfile = ProtocolProfile {
    protocol: AccessProtocol::GrantFree,
    tx_count: 1,
    queue_count: 0,
    proc_count: 1,
    prop_count: 2,
    contention: Contention::ContentionBased,
};

pub fn profile_of(protocol: AccessProtocol) -> ProtocolProfile {
    match protocol {
        AccessProtocol::GrantBased => GRANT_BASED,
        AccessProtocol::GrantFree => GRANT_FREE,
    }
}

impl ProtocolProfile {
    /// Single-access delay: counts-weighted transmission, processing and propagation.
    pub fn single_access_delay(&self, transmission_s: f64, processing_s: f64, propagation_s: f64) -> f64 {
        self.tx_count as f64 * transmission_s
            + self.proc_count as f64 * processing_s
            + self.prop_count as f64 * propagation_s
    }

    pub fn is_contention_based(&self) -> bool {
        self.contention == Contention::ContentionBased
    }
}

/// Active users competing for a pool of contention resources (preambles or slots).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentionConfig {
    pub active_users: u32,
    pub contention_resources: u32,
}

impl ContentionConfig {
    pub fn new(active_users: u32, contention_resources: u32) -> Result<Self> {
        if contention_resources == 0 {
            return Err(Error::domain("contention pool needs at least one resource"));
        }
        Ok(ContentionConfig {
            active_users,
            contention_resources,
        })
    }
}

/// Probability that a tagged user collides when `M` users pick uniformly among `K` resources.
pub fn gf_collision_prob(cfg: ContentionConfig) -> Result<f64> {
    if cfg.contention_resources == 0 {
        return Err(Error::domain("contention pool needs at least one resource"));
    }
    let contenders = cfg.active_users.saturating_sub(1);
    if contenders == 0 {
        return Ok(0.0);
    }
    let k = cfg.contention_resources as f64;
    let free = (1.0 - 1.0 / k).powi(contenders as i32);
    Ok(1.0 - free)
}

/// An attempt fails if it is not decoded or if it collided (independent events).
pub fn attempt_failure_prob(decode_eps: f64, collision_p: f64) -> Result<f64> {
    for (name, p) in [("decoding error", decode_eps), ("collision", collision_p)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("{name} probability {p} outside [0, 1]")));
        }
    }
    Ok(decode_eps + collision_p * (1.0 - decode_eps))
}
