//! Simulated user answering schedule proposals.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{LambdaSpec, OracleMode};
use crate::user_flex::ContextKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleUser {
    pub mode: OracleMode,
    /// Needed by the stochastic and conjunctive modes.
    pub lambda_true: Option<LambdaSpec>,
}

/// What actually happened on the day of a proposal, in hours from midnight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub actual_ready: u32,
    /// The operation must be finished by this hour; `None` when unbounded.
    pub deadline: Option<i64>,
    pub op_len: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Decision {
    Accepted,
    Rejected { manual_delay: u32 },
    /// The proposed start precedes the ready action, so the device could not run then.
    NotReady,
}

impl OracleUser {
    pub fn lambda(&self, ctx: ContextKey) -> Option<f64> {
        self.lambda_true.as_ref().map(|l| l.get(ctx))
    }
}

pub fn simulate_user_decision(
    oracle: &OracleUser,
    ctx: ContextKey,
    chosen_t: u32,
    truth: &GroundTruth,
    rng: &mut ChaCha8Rng,
) -> Decision {
    if chosen_t < truth.actual_ready {
        return Decision::NotReady;
    }
    let delay = chosen_t - truth.actual_ready;
    let deadline_ok = truth.deadline.is_none_or(|d| chosen_t as i64 + truth.op_len as i64 <= d);
    let survives = match oracle.mode {
        OracleMode::Deadline => true,
        OracleMode::Stochastic | OracleMode::Both => {
            let lambda = oracle.lambda(ctx).expect("stochastic oracle needs lambda_true");
            let u: f64 = rng.random();
            u < (-lambda * delay as f64).exp()
        }
    };
    let accepted = match oracle.mode {
        OracleMode::Deadline => deadline_ok,
        OracleMode::Stochastic => survives,
        OracleMode::Both => deadline_ok && survives,
    };
    if accepted {
        return Decision::Accepted;
    }
    if oracle.mode == OracleMode::Deadline || delay == 0 {
        return Decision::Rejected { manual_delay: 0 };
    }
    let slack = truth
        .deadline
        .map(|d| (d - truth.op_len as i64 - truth.actual_ready as i64).max(0) as u32)
        .unwrap_or(u32::MAX);
    let hi = (delay - 1).min(slack);
    Decision::Rejected { manual_delay: rng.random_range(0..=hi) }
}
