//! Run metrics, pooled over devices and market shuffles.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::oracle::Decision;

/// Rounds to 9 significant digits so reports are byte-stable.
pub fn sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { 0.0 } else { x };
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// Hex SHA-256 of a serialisable configuration.
pub fn config_digest<T: Serialize>(cfg: &T) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serialises");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// One scheduled operation and what the user did with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub device: String,
    pub date: chrono::NaiveDate,
    pub shuffle_seed: u64,
    /// Actual ready hour.
    pub t_es: u32,
    pub reference_t_es: u32,
    pub chosen_t: u32,
    /// `chosen_t - t_es`.
    pub delay: i64,
    /// Savings against starting at the actual ready hour.
    pub delta_spot: f64,
    pub delta_reg: f64,
    pub expected_utility: f64,
    pub acceptance_prob: f64,
    pub outcome: String,
    pub manual_delay: Option<u32>,
}

impl ProposalRecord {
    pub(crate) fn rounded(mut self) -> Self {
        self.delta_spot = sig9(self.delta_spot);
        self.delta_reg = sig9(self.delta_reg);
        self.expected_utility = sig9(self.expected_utility);
        self.acceptance_prob = sig9(self.acceptance_prob);
        self
    }
}

pub(crate) fn outcome_label(d: &Decision) -> (&'static str, Option<u32>) {
    match d {
        Decision::Accepted => ("accepted", None),
        Decision::Rejected { manual_delay } => ("rejected", Some(*manual_delay)),
        Decision::NotReady => ("not_ready", None),
    }
}

/// Additive counters of one or more runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub test_days: u64,
    pub day_correct: u64,
    pub hour_sq_err: f64,
    pub hour_n: u64,
    pub proposals: u64,
    pub accepted: u64,
    pub rejected: u64,
    /// Rejections because the proposal preceded the ready action; also counted in `rejected`.
    pub not_ready: u64,
    /// Spot and regulation savings of accepted proposals.
    pub spot_saved: f64,
    pub reg_saved: f64,
    /// Unshifted spot cost and absolute regulation cost of accepted proposals.
    pub spot_base: f64,
    pub reg_base: f64,
    /// Savings of every proposal as if all were executed.
    pub raw_savings: f64,
    pub feedback: u64,
    pub lambda_err_sum: f64,
    pub lambda_runs: u64,
}

impl Tally {
    pub fn merge(&mut self, o: &Tally) {
        self.test_days += o.test_days;
        self.day_correct += o.day_correct;
        self.hour_sq_err += o.hour_sq_err;
        self.hour_n += o.hour_n;
        self.proposals += o.proposals;
        self.accepted += o.accepted;
        self.rejected += o.rejected;
        self.not_ready += o.not_ready;
        self.spot_saved += o.spot_saved;
        self.reg_saved += o.reg_saved;
        self.spot_base += o.spot_base;
        self.reg_base += o.reg_base;
        self.raw_savings += o.raw_savings;
        self.feedback += o.feedback;
        self.lambda_err_sum += o.lambda_err_sum;
        self.lambda_runs += o.lambda_runs;
    }

    fn ratio(a: f64, b: f64) -> f64 {
        if b == 0.0 {
            0.0
        } else {
            a / b
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        Self::ratio(self.accepted as f64, self.proposals as f64)
    }

    pub fn day_accuracy(&self) -> f64 {
        Self::ratio(self.day_correct as f64, self.test_days as f64)
    }

    pub fn hour_rmse(&self) -> f64 {
        Self::ratio(self.hour_sq_err, self.hour_n as f64).sqrt()
    }
}

/// Short per-shuffle summary, in shuffle order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleSummary {
    pub seed: u64,
    pub acceptance_rate: f64,
    pub accepted_savings: f64,
    pub n_proposals: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub acceptance_rate: f64,
    /// Percent of the unshifted spot cost saved, accepted proposals only.
    pub spot_savings_pct: f64,
    /// Percent of the absolute unshifted regulation cost saved, accepted proposals only.
    pub reg_savings_pct: f64,
    /// Spot plus regulation savings of accepted proposals.
    pub accepted_savings: f64,
    /// Spot plus regulation savings of all proposals, ignoring rejections.
    pub raw_savings: f64,
    pub day_accuracy: f64,
    pub hour_rmse: f64,
    pub n_proposals: u64,
    pub n_accepted: u64,
    pub n_rejected: u64,
    pub n_not_ready: u64,
    pub n_feedback: u64,
    /// Mean over runs of the feedback-weighted relative error of the learned rates.
    pub lambda_rel_error: Option<f64>,
    pub n_runs: u64,
    pub seeds: Vec<u64>,
    pub config_digest: String,
    pub per_shuffle: Vec<ShuffleSummary>,
    #[serde(default)]
    pub proposals: Vec<ProposalRecord>,
}

impl RunReport {
    pub fn from_tally(
        label: impl Into<String>,
        tally: &Tally,
        n_runs: u64,
        seeds: Vec<u64>,
        config_digest: String,
        per_shuffle: Vec<ShuffleSummary>,
        proposals: Vec<ProposalRecord>,
    ) -> Self {
        let pct = |a: f64, b: f64| if b == 0.0 { 0.0 } else { 100.0 * a / b };
        Self {
            label: label.into(),
            acceptance_rate: sig9(tally.acceptance_rate()),
            spot_savings_pct: sig9(pct(tally.spot_saved, tally.spot_base)),
            reg_savings_pct: sig9(pct(tally.reg_saved, tally.reg_base)),
            accepted_savings: sig9(tally.spot_saved + tally.reg_saved),
            raw_savings: sig9(tally.raw_savings),
            day_accuracy: sig9(tally.day_accuracy()),
            hour_rmse: sig9(tally.hour_rmse()),
            n_proposals: tally.proposals,
            n_accepted: tally.accepted,
            n_rejected: tally.rejected,
            n_not_ready: tally.not_ready,
            n_feedback: tally.feedback,
            lambda_rel_error: (tally.lambda_runs > 0).then(|| sig9(tally.lambda_err_sum / tally.lambda_runs as f64)),
            n_runs,
            seeds,
            config_digest,
            per_shuffle: per_shuffle
                .into_iter()
                .map(|s| ShuffleSummary {
                    acceptance_rate: sig9(s.acceptance_rate),
                    accepted_savings: sig9(s.accepted_savings),
                    ..s
                })
                .collect(),
            proposals,
        }
    }

    pub fn validate(&self) -> bool {
        let finite = [
            self.acceptance_rate,
            self.spot_savings_pct,
            self.reg_savings_pct,
            self.accepted_savings,
            self.raw_savings,
            self.day_accuracy,
            self.hour_rmse,
        ]
        .iter()
        .all(|v| v.is_finite());
        finite && self.n_accepted + self.n_rejected == self.n_proposals && self.n_not_ready <= self.n_rejected
    }
}
