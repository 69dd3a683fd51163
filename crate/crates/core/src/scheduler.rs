//! Expected-utility scheduling of a probabilistic flex-offer.
//!
//! Hours in flex-offers are relative to midnight of the forecast day;
//! `day_start` is the market index of that midnight.

use serde::{Deserialize, Serialize};

use crate::flexoffer::{energies, enumerate_intervals, FlexInterval, ProbabilisticFlexOffer};
use crate::market::{reg_contribution, spot_cost, MarketSeries, SavingsBreakdown};
use crate::user_flex::{ContextKey, UserFlexModel};
use crate::{Error, Result};

/// Probability that the user accepts a delay.
pub trait AcceptanceModel {
    fn acceptance(&self, ctx: ContextKey, delay: f64) -> f64;
}

impl AcceptanceModel for UserFlexModel {
    fn acceptance(&self, ctx: ContextKey, delay: f64) -> f64 {
        crate::user_flex::survival(self.lambda(ctx), delay.max(0.0))
    }
}

/// Treats every schedule as accepted.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformAcceptance;

impl AcceptanceModel for UniformAcceptance {
    fn acceptance(&self, _: ContextKey, _: f64) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalContribution {
    pub interval: FlexInterval,
    pub delta_spot: f64,
    pub delta_reg: f64,
    pub acceptance_prob: f64,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEvaluation {
    pub t: u32,
    pub expected_utility: f64,
    /// Intervals containing `t`; the others contribute nothing.
    pub per_interval: Vec<IntervalContribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleProposal {
    pub device_id: String,
    pub chosen_t: u32,
    pub reference_t_es: u32,
    pub expected_utility: f64,
    /// Savings of `chosen_t` against `reference_t_es`.
    pub savings: SavingsBreakdown,
    /// Acceptance probability of the delay `chosen_t - reference_t_es`.
    pub acceptance_prob: f64,
    pub candidates: Vec<CandidateEvaluation>,
}

impl ScheduleProposal {
    pub fn delay(&self) -> i64 {
        self.chosen_t as i64 - self.reference_t_es as i64
    }
}

/// Spot and regulation cost of starting at each relative hour.
struct CostTable {
    spot: Vec<f64>,
    reg: Vec<f64>,
}

impl CostTable {
    fn new(profile: &[f64], m: &MarketSeries, day_start: usize, last_hour: u32) -> Result<Self> {
        let mut spot = Vec::with_capacity(last_hour as usize + 1);
        let mut reg = Vec::with_capacity(last_hour as usize + 1);
        for h in 0..=last_hour {
            let x = (day_start + h as usize) as i64;
            spot.push(spot_cost(profile, x, m)?);
            reg.push(reg_contribution(profile, x, m)?);
        }
        Ok(Self { spot, reg })
    }

    fn savings(&self, t_es: u32, t: u32) -> (f64, f64) {
        let (a, b) = (t_es as usize, t as usize);
        (self.spot[a] - self.spot[b], self.reg[a] - self.reg[b])
    }
}

/// `(dS + dR) * acceptance(t - t_es)` for a start `t` inside `interval`.
#[allow(clippy::too_many_arguments)]
pub fn expected_utility(
    t: u32,
    interval: &FlexInterval,
    profile: &[f64],
    m: &MarketSeries,
    day_start: usize,
    flex: &dyn AcceptanceModel,
    ctx: ContextKey,
) -> Result<f64> {
    if !interval.contains(t) {
        return Err(Error::Domain(format!("start {t} outside interval [{}, {}]", interval.t_es, interval.t_ls)));
    }
    let base = (day_start + interval.t_es as usize) as i64;
    let moved = (day_start + t as usize) as i64;
    let ds = spot_cost(profile, base, m)? - spot_cost(profile, moved, m)?;
    let dr = reg_contribution(profile, base, m)? - reg_contribution(profile, moved, m)?;
    Ok((ds + dr) * flex.acceptance(ctx, (t - interval.t_es) as f64))
}

/// `E[t]`: probability-weighted expected utility over all feasible intervals.
pub fn objective(
    t: u32,
    pfo: &ProbabilisticFlexOffer,
    m: &MarketSeries,
    day_start: usize,
    flex: &dyn AcceptanceModel,
    ctx: ContextKey,
) -> Result<f64> {
    let intervals = enumerate_intervals(pfo);
    if intervals.is_empty() {
        return Err(Error::NoFeasibleSchedule);
    }
    let profile = energies(&pfo.profile);
    let mut total = 0.0;
    for iv in intervals.iter().filter(|iv| iv.contains(t)) {
        total += iv.probability * expected_utility(t, iv, &profile, m, day_start, flex, ctx)?;
    }
    Ok(total)
}

/// Picks the start hour maximising `E[t]`, earliest on ties.
///
/// With `detailed = false` the per-candidate table is left empty.
pub fn schedule(
    pfo: &ProbabilisticFlexOffer,
    m: &MarketSeries,
    day_start: usize,
    flex: &dyn AcceptanceModel,
    ctx: ContextKey,
    device_id: &str,
    detailed: bool,
) -> Result<ScheduleProposal> {
    let intervals = enumerate_intervals(pfo);
    if intervals.is_empty() {
        return Err(Error::NoFeasibleSchedule);
    }
    let profile = energies(&pfo.profile);
    let reference_t_es = pfo.t_es_dist.mode();
    let last_hour = intervals.iter().map(|i| i.t_ls).max().unwrap_or(0).max(reference_t_es);
    let costs = CostTable::new(&profile, m, day_start, last_hour)?;

    let mut grid = vec![false; last_hour as usize + 1];
    for iv in &intervals {
        for t in iv.t_es..=iv.t_ls {
            grid[t as usize] = true;
        }
    }

    let mut best: Option<(u32, f64)> = None;
    let mut candidates = Vec::new();
    for t in (0..=last_hour).filter(|t| grid[*t as usize]) {
        let mut total = 0.0;
        let mut per_interval = Vec::new();
        for iv in intervals.iter().filter(|iv| iv.contains(t)) {
            let (ds, dr) = costs.savings(iv.t_es, t);
            let acc = flex.acceptance(ctx, (t - iv.t_es) as f64);
            let contribution = iv.probability * ((ds + dr) * acc);
            total += contribution;
            if detailed {
                per_interval.push(IntervalContribution {
                    interval: *iv,
                    delta_spot: ds,
                    delta_reg: dr,
                    acceptance_prob: acc,
                    contribution,
                });
            }
        }
        if best.is_none_or(|(_, e)| total > e) {
            best = Some((t, total));
        }
        if detailed {
            candidates.push(CandidateEvaluation { t, expected_utility: total, per_interval });
        }
    }
    let (chosen_t, expected_utility) = best.expect("at least one interval gives a candidate");
    let (delta_spot, delta_reg) = costs.savings(reference_t_es, chosen_t);
    let delay = chosen_t.saturating_sub(reference_t_es) as f64;
    Ok(ScheduleProposal {
        device_id: device_id.to_string(),
        chosen_t,
        reference_t_es,
        expected_utility,
        savings: SavingsBreakdown { delta_spot, delta_reg },
        acceptance_prob: flex.acceptance(ctx, delay),
        candidates,
    })
}
