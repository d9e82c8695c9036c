//! Ready-made policies: static subchannel plans and per-packet TTIs.

use super::engine::{DecisionContext, Policy};
use super::frame::FrameAlloc;
use crate::error::{Error, Result};
use crate::scenario::Scenario;

/// Subchannel `s` goes to user `s mod users`.
pub fn round_robin_assignment(users: usize, subchannels: usize) -> Vec<Option<usize>> {
    (0..subchannels).map(|s| Some(s % users.max(1))).collect()
}

/// Each queue owns a fixed subchannel set and a fixed TTI.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticPlanPolicy {
    owned: Vec<Vec<usize>>,
    tti_s: Vec<f64>,
}

impl StaticPlanPolicy {
    /// `assignment[s]` is the queue owning subchannel `s`; `tti_s[q]` the TTI of queue `q`.
    pub fn new(scenario: &Scenario, assignment: &[Option<usize>], tti_s: &[f64]) -> Result<Self> {
        let queues = scenario.queues();
        if assignment.len() != scenario.subchannels {
            return Err(Error::validation(format!(
                "assignment covers {} of {} subchannels",
                assignment.len(),
                scenario.subchannels
            )));
        }
        if tti_s.len() != queues {
            return Err(Error::validation(format!("{} TTIs for {queues} queues", tti_s.len())));
        }
        let mut owned = vec![Vec::new(); queues];
        for (s, a) in assignment.iter().enumerate() {
            if let Some(q) = *a {
                if q >= queues {
                    return Err(Error::validation(format!(
                        "subchannel {s} assigned to missing queue {q}"
                    )));
                }
                owned[q].push(s);
            }
        }
        for (q, &t) in tti_s.iter().enumerate() {
            if !owned[q].is_empty() && !(t > 0.0 && t.is_finite()) {
                return Err(Error::validation(format!("TTI of queue {q} must be positive, got {t}")));
            }
        }
        Ok(StaticPlanPolicy {
            owned,
            tti_s: tti_s.to_vec(),
        })
    }

    pub fn subchannels_of(&self, queue: usize) -> &[usize] {
        &self.owned[queue]
    }
}

impl Policy for StaticPlanPolicy {
    fn decide(&mut self, ctx: &DecisionContext) -> Result<Vec<FrameAlloc>> {
        Ok(ctx
            .idle_queues
            .iter()
            .filter(|&&q| !self.owned[q].is_empty() && self.owned[q].iter().all(|&s| ctx.holder[s].is_none()))
            .map(|&q| FrameAlloc::new(q, self.owned[q].clone(), self.tti_s[q]))
            .collect())
    }
}

/// One shared queue over all subchannels; packet `id` is sent with TTI `tti_s[id]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerPacketPolicy {
    subchannels: Vec<usize>,
    tti_s: Vec<f64>,
}

impl PerPacketPolicy {
    pub fn new(scenario: &Scenario, tti_s: Vec<f64>) -> Self {
        PerPacketPolicy {
            subchannels: (0..scenario.subchannels).collect(),
            tti_s,
        }
    }
}

impl Policy for PerPacketPolicy {
    fn decide(&mut self, ctx: &DecisionContext) -> Result<Vec<FrameAlloc>> {
        let Some(&q) = ctx.idle_queues.first() else {
            return Ok(Vec::new());
        };
        let id = ctx.head[q].expect("idle queue has a head").id;
        let tti = *self
            .tti_s
            .get(id)
            .ok_or_else(|| Error::validation(format!("no TTI for packet {id}")))?;
        Ok(vec![FrameAlloc::new(q, self.subchannels.clone(), tti)])
    }
}
