//! Standard and probabilistic flex-offers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::forecast::{ActivityForecast, ForecastDistribution};
use crate::load_data::DeviceSignature;
use crate::{Error, Result};

/// One hour of the energy profile. Only time flexibility is used, so `e_min == e_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub e_min: f64,
    pub e_max: f64,
}

pub fn profile_of(sig: &DeviceSignature) -> Vec<Slice> {
    sig.per_hour_demand.iter().map(|e| Slice { e_min: *e, e_max: *e }).collect()
}

/// Hourly energies of a fixed-amount profile.
pub fn energies(profile: &[Slice]) -> Vec<f64> {
    profile.iter().map(|s| s.e_max).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexOffer {
    pub t_es: u32,
    pub t_ls: u32,
    pub profile: Vec<Slice>,
}

impl FlexOffer {
    pub fn duration(&self) -> usize {
        self.profile.len()
    }

    pub fn latest_end(&self) -> u32 {
        self.t_ls + self.profile.len() as u32
    }
}

pub fn make_flexoffer(t_es: u32, t_le: u32, sig: &DeviceSignature) -> Result<FlexOffer> {
    let k = sig.len();
    let window = t_le as i64 - t_es as i64;
    if window < k as i64 {
        return Err(Error::Infeasible { window, length: k });
    }
    Ok(FlexOffer { t_es, t_ls: t_le - k as u32, profile: profile_of(sig) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilisticFlexOffer {
    pub t_es_dist: ForecastDistribution,
    pub t_le_conditional: BTreeMap<u32, ForecastDistribution>,
    pub profile: Vec<Slice>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlexInterval {
    pub t_es: u32,
    pub t_ls: u32,
    pub probability: f64,
}

impl FlexInterval {
    pub fn contains(&self, t: u32) -> bool {
        self.t_es <= t && t <= self.t_ls
    }
}

impl ProbabilisticFlexOffer {
    pub fn from_forecast(fc: &ActivityForecast, sig: &DeviceSignature) -> Self {
        Self {
            t_es_dist: fc.t_es_dist.clone(),
            t_le_conditional: fc.t_le_conditional.clone(),
            profile: profile_of(sig),
        }
    }

    /// Degenerate offer with a single known interval.
    pub fn point(t_es: u32, t_le: u32, sig: &DeviceSignature) -> Self {
        let mut cond = BTreeMap::new();
        cond.insert(t_es, ForecastDistribution::point_mass(t_le));
        Self { t_es_dist: ForecastDistribution::point_mass(t_es), t_le_conditional: cond, profile: profile_of(sig) }
    }

    pub fn validate(&self) -> Result<()> {
        self.t_es_dist.validate()?;
        for d in self.t_le_conditional.values() {
            d.validate()?;
        }
        if self.profile.is_empty() || self.profile.iter().any(|s| !(s.e_min > 0.0) || s.e_min != s.e_max) {
            return Err(Error::Domain("profile slices must be positive with e_min = e_max".into()));
        }
        Ok(())
    }

    /// Joint mass of `(t_es, t_le)` pairs too short for the profile.
    pub fn infeasible_mass(&self) -> f64 {
        let k = self.profile.len() as u32;
        self.t_es_dist
            .iter()
            .map(|(t_es, p)| match self.t_le_conditional.get(&t_es) {
                Some(cond) => cond.iter().filter(|(t_le, _)| *t_le < t_es + k).map(|(_, q)| p * q).sum(),
                None => p,
            })
            .sum()
    }
}

/// Feasible intervals with their joint probabilities, sorted by `(t_es, t_ls)`.
pub fn enumerate_intervals(pfo: &ProbabilisticFlexOffer) -> Vec<FlexInterval> {
    let k = pfo.profile.len() as u32;
    let mut out = Vec::new();
    for (t_es, p) in pfo.t_es_dist.iter() {
        let Some(cond) = pfo.t_le_conditional.get(&t_es) else { continue };
        for (t_le, q) in cond.iter() {
            let probability = p * q;
            if t_le >= t_es + k && probability > 0.0 {
                out.push(FlexInterval { t_es, t_ls: t_le - k, probability });
            }
        }
    }
    out.sort_by_key(|i| (i.t_es, i.t_ls));
    out
}

/// Standard flex-offer from the modal earliest start and its modal latest end.
pub fn collapse_to_standard(pfo: &ProbabilisticFlexOffer) -> Result<FlexOffer> {
    let t_es = pfo.t_es_dist.mode();
    let cond = pfo.t_le_conditional.get(&t_es).ok_or(Error::NoFeasibleSchedule)?;
    let t_le = cond.mode();
    let k = pfo.profile.len();
    let window = t_le as i64 - t_es as i64;
    if window < k as i64 {
        return Err(Error::Infeasible { window, length: k });
    }
    Ok(FlexOffer { t_es, t_ls: t_le - k as u32, profile: pfo.profile.clone() })
}

impl From<&FlexOffer> for ProbabilisticFlexOffer {
    fn from(fo: &FlexOffer) -> Self {
        let mut cond = BTreeMap::new();
        cond.insert(fo.t_es, ForecastDistribution::point_mass(fo.latest_end()));
        Self { t_es_dist: ForecastDistribution::point_mass(fo.t_es), t_le_conditional: cond, profile: fo.profile.clone() }
    }
}
