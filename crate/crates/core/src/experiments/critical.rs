use serde::{Deserialize, Serialize};

use super::{estimate_survival, InitSpec, SurvivalEstimate, TrialPlan};
use crate::analytics;
use crate::error::{FlockError, Result};
use crate::model::{ModelParams, Phi};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriticalKind {
    /// Critical external birth rate of the `N = 1` contact process.
    LambdaC,
    /// Critical maximum flock size at constant `lambda`.
    NC,
}

/// Shared settings of a bisection search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalSearch {
    /// A point counts as surviving when its estimated survival exceeds this.
    pub eps: f64,
    pub trials_per_point: u64,
    pub t_max: f64,
    pub base_seed: u64,
    /// Stop when the lambda bracket is at most this wide.
    pub resolution: f64,
}

impl Default for CriticalSearch {
    fn default() -> Self {
        CriticalSearch {
            eps: 0.05,
            trials_per_point: 400,
            t_max: 300.0,
            base_seed: 0,
            resolution: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalEstimate {
    pub kind: CriticalKind,
    /// Largest value seen dying out (lambda) or surviving (N).
    pub bracket_low: f64,
    /// Smallest value seen surviving (lambda) or dying out (N).
    pub bracket_high: f64,
    pub survival_threshold_eps: f64,
    pub trials_per_point: u64,
    pub t_max: f64,
    /// Every evaluated point in evaluation order.
    pub evaluations: Vec<(f64, SurvivalEstimate)>,
    /// For `NC`: the smallest `N` with `m(N) <= 1`, if found.
    pub analytic_bound: Option<u32>,
}

impl CriticalEstimate {
    /// Whether the empirical upper end respects the analytic extinction bound.
    pub fn consistent_with_threshold(&self) -> bool {
        match (self.kind, self.analytic_bound) {
            (CriticalKind::NC, Some(bound)) => self.bracket_high <= bound as f64,
            _ => true,
        }
    }

    /// Evaluations sorted by parameter value.
    pub fn sorted_evaluations(&self) -> Vec<(f64, SurvivalEstimate)> {
        let mut v = self.evaluations.clone();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }
}

fn bracket_error(low: f64, high: f64, reason: impl Into<String>) -> FlockError {
    FlockError::Bracket {
        low,
        high,
        reason: reason.into(),
    }
}

/// Bisection for the contact-process critical value in dimension `dim`,
/// starting from one occupied site. The low end must die out and the high end
/// survive (estimated survival above `eps` at the horizon).
pub fn estimate_critical_lambda(dim: usize, bracket: (f64, f64), search: &CriticalSearch) -> Result<CriticalEstimate> {
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(bracket_error(lo, hi, "need 0 < low < high"));
    }
    let mut evaluations = Vec::new();
    let mut eval = |lambda: f64| -> Result<bool> {
        let params = ModelParams::sparse(dim, 1, lambda, 0.0)?;
        let plan = TrialPlan::new(
            params,
            InitSpec::SingleAtOrigin { state: 1 },
            search.t_max,
            search.trials_per_point,
            search.base_seed,
        );
        let est = estimate_survival(&plan)?;
        evaluations.push((lambda, est));
        Ok(est.point > search.eps)
    };
    let lo_survives = eval(lo)?;
    let hi_survives = eval(hi)?;
    match (lo_survives, hi_survives) {
        (false, true) => {}
        (true, true) => return Err(bracket_error(lo, hi, "both ends survive")),
        (false, false) => return Err(bracket_error(lo, hi, "both ends die out")),
        (true, false) => return Err(bracket_error(lo, hi, "low end survives but high end dies out")),
    }
    while hi - lo > search.resolution {
        let mid = 0.5 * (lo + hi);
        if eval(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(CriticalEstimate {
        kind: CriticalKind::LambdaC,
        bracket_low: lo,
        bracket_high: hi,
        survival_threshold_eps: search.eps,
        trials_per_point: search.trials_per_point,
        t_max: search.t_max,
        evaluations,
        analytic_bound: None,
    })
}

/// Largest `N` scanned for the analytic bound.
const ANALYTIC_SCAN_MAX: u32 = 4096;

/// Integer bisection for the critical flock size at constant `lambda`. The
/// low end must survive and the high end die out.
pub fn estimate_critical_n(
    dim: usize,
    lambda: f64,
    phi: f64,
    bracket: (u32, u32),
    init: &InitSpec,
    search: &CriticalSearch,
) -> Result<CriticalEstimate> {
    let (mut lo, mut hi) = bracket;
    if !(lo >= 1 && hi > lo) {
        return Err(bracket_error(lo as f64, hi as f64, "need 1 <= low < high"));
    }
    let template = ModelParams::sparse(dim, lo, lambda, phi)?;
    let geometry = match init {
        InitSpec::AllN => super::torus(dim),
        _ => template.geometry,
    };
    let mut evaluations = Vec::new();
    let mut eval = |n: u32| -> Result<bool> {
        let params = ModelParams::new(dim, n, lambda, Phi::Finite(phi), geometry)?;
        let plan = TrialPlan::new(params, init.clone(), search.t_max, search.trials_per_point, search.base_seed);
        let est = estimate_survival(&plan)?;
        evaluations.push((n as f64, est));
        Ok(est.point > search.eps)
    };
    let lo_survives = eval(lo)?;
    let hi_survives = eval(hi)?;
    let (l, h) = (lo as f64, hi as f64);
    match (lo_survives, hi_survives) {
        (true, false) => {}
        (false, false) => return Err(bracket_error(l, h, "both ends die out")),
        (true, true) => return Err(bracket_error(l, h, "both ends survive")),
        (false, true) => return Err(bracket_error(l, h, "low end dies out but high end survives")),
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if eval(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CriticalEstimate {
        kind: CriticalKind::NC,
        bracket_low: lo as f64,
        bracket_high: hi as f64,
        survival_threshold_eps: search.eps,
        trials_per_point: search.trials_per_point,
        t_max: search.t_max,
        evaluations,
        analytic_bound: analytics::smallest_extinct_n(dim, phi, |_| lambda, ANALYTIC_SCAN_MAX),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_lambda_bracket_is_an_error() {
        let search = CriticalSearch {
            trials_per_point: 100,
            t_max: 100.0,
            ..Default::default()
        };
        let err = estimate_critical_lambda(1, (0.1, 0.2), &search).unwrap_err();
        assert!(matches!(err, FlockError::Bracket { .. }));
    }

    #[test]
    fn all_extinct_n_bracket_is_an_error() {
        let search = CriticalSearch {
            trials_per_point: 100,
            t_max: 100.0,
            ..Default::default()
        };
        let err = estimate_critical_n(1, 0.5, 1.0, (1, 8), &InitSpec::SingleAtOrigin { state: 1 }, &search).unwrap_err();
        assert!(matches!(err, FlockError::Bracket { .. }));
    }
}
