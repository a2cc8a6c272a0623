//! Closed-form extinction threshold, founder offspring law and Galton-Watson
//! machinery for the dominating branching process.
//!
//! A founder starts a flock of size 1 that climbs `i -> i + 1` at rate
//! `i * phi + 2d * lambda` and is wiped out at rate 1. If it reaches `N` it
//! seeds new founders at total rate `2d * lambda` until it dies. The number of
//! founders it produces has mean
//!
//! ```text
//! m = 2d * lambda * prod_{i=1}^{N-1} (i*phi + 2d*lambda) / (1 + i*phi + 2d*lambda)
//! ```
//!
//! and `m <= 1` forces extinction of every finite population.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    /// Mean number of founders produced by one founder.
    pub m: f64,
    /// Probability that a founder's flock reaches `N`.
    pub p_reach: f64,
    /// `ln m` (`-inf` when `lambda = 0`).
    pub log_m: f64,
}

/// Values of `m` within this distance of 1 are treated as exactly critical;
/// the log-space product lands a few ulps either side of 1 at the telescoping
/// critical points.
pub const CRITICAL_SLACK: f64 = 1e-12;

impl ThresholdReport {
    /// `m <= 1`: finite populations die out.
    pub fn is_subcritical(&self) -> bool {
        self.m <= 1.0 + CRITICAL_SLACK
    }

    /// `m < 1`: infinite populations die out as well.
    pub fn is_strictly_subcritical(&self) -> bool {
        self.m < 1.0 - CRITICAL_SLACK
    }
}

/// `m` and `P(reach N)` for a finite `phi`, summing `log1p` terms so that
/// flock sizes up to 10^6 neither underflow nor lose precision.
pub fn threshold(dim: usize, max_flock: u32, lambda: f64, phi: f64) -> ThresholdReport {
    let push = 2.0 * dim as f64 * lambda;
    let mut log_reach = 0.0;
    for i in 1..max_flock {
        let growth = i as f64 * phi + push;
        if growth == 0.0 {
            log_reach = f64::NEG_INFINITY;
            break;
        }
        // ln(g / (1 + g)) = -ln(1 + 1/g)
        log_reach -= (1.0 / growth).ln_1p();
    }
    let p_reach = log_reach.exp();
    ThresholdReport {
        m: push * p_reach,
        p_reach,
        log_m: push.ln() + log_reach,
    }
}

pub fn compute_threshold(params: &ModelParams) -> Result<ThresholdReport> {
    let phi = params.finite_phi()?;
    Ok(threshold(params.dim, params.max_flock, params.lambda, phi))
}

/// `m` for reporting purposes; for `phi = inf` this is the limit `2d * lambda`
/// (every founder's flock is full at once).
pub fn analytic_m(params: &ModelParams) -> f64 {
    match params.phi.finite() {
        Some(phi) => threshold(params.dim, params.max_flock, params.lambda, phi).m,
        None => 2.0 * params.dim as f64 * params.lambda,
    }
}

/// Parameters of the founder offspring law: with probability `p_reach` the
/// flock fills, after which it produces `k` founders with probability
/// `p_geo^k * (1 - p_geo)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectiveGeometric {
    pub p_geo: f64,
    pub p_reach: f64,
}

impl DefectiveGeometric {
    pub fn mean(&self) -> f64 {
        if self.p_geo == 0.0 {
            0.0
        } else {
            self.p_reach * self.p_geo / (1.0 - self.p_geo)
        }
    }

    /// Closed-form smallest root of `s = G(s)` for
    /// `G(s) = 1 - p_reach + p_reach (1 - p) / (1 - p s)`. The roots are
    /// 1 and `(1 - p_reach p) / p`.
    pub fn extinction_prob(&self) -> f64 {
        let p = self.p_geo;
        if p == 0.0 {
            return 1.0;
        }
        ((1.0 - self.p_reach * p) / p).min(1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if rng.random::<f64>() >= self.p_reach {
            return 0;
        }
        let mut k = 0;
        while rng.random::<f64>() < self.p_geo {
            k += 1;
        }
        k
    }
}

/// An offspring law on `0..=k_max` with the truncated tail reported
/// separately rather than renormalized away.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffspringDist {
    pub pmf: Vec<f64>,
    /// Mass of `{k > k_max}`.
    pub remainder: f64,
    /// Set when the law is the founder law, enabling exact pgf and sampling.
    pub family: Option<DefectiveGeometric>,
}

impl OffspringDist {
    /// Arbitrary law; mass missing from `pmf` becomes the remainder.
    pub fn from_pmf(pmf: Vec<f64>) -> Self {
        let total: f64 = pmf.iter().sum();
        OffspringDist {
            pmf,
            remainder: (1.0 - total).max(0.0),
            family: None,
        }
    }

    pub fn p_geo(&self) -> Option<f64> {
        self.family.map(|f| f.p_geo)
    }

    pub fn p_reach(&self) -> Option<f64> {
        self.family.map(|f| f.p_reach)
    }

    pub fn prob(&self, k: usize) -> f64 {
        self.pmf.get(k).copied().unwrap_or(0.0)
    }

    /// Exact mean for the founder law; for a generic law the tabulated part
    /// only.
    pub fn mean(&self) -> f64 {
        match self.family {
            Some(f) => f.mean(),
            None => self.pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum(),
        }
    }

    pub fn pgf(&self, s: f64) -> f64 {
        if let Some(f) = self.family {
            return 1.0 - f.p_reach + f.p_reach * (1.0 - f.p_geo) / (1.0 - f.p_geo * s);
        }
        // Horner from the top; tail mass sits at "infinity" and contributes 0.
        self.pmf.iter().rev().fold(0.0, |acc, &p| acc * s + p)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<u64> {
        if let Some(f) = self.family {
            return Some(f.sample(rng));
        }
        let mut u = rng.random::<f64>();
        for (k, &p) in self.pmf.iter().enumerate() {
            if u < p {
                return Some(k as u64);
            }
            u -= p;
        }
        // Landed in the untabulated tail.
        None
    }
}

pub fn founder_law(dim: usize, max_flock: u32, lambda: f64, phi: f64) -> DefectiveGeometric {
    let push = 2.0 * dim as f64 * lambda;
    DefectiveGeometric {
        p_geo: push / (push + 1.0),
        p_reach: threshold(dim, max_flock, lambda, phi).p_reach,
    }
}

/// Founder offspring pmf truncated at `k_max`.
pub fn offspring_pmf(params: &ModelParams, k_max: usize) -> Result<OffspringDist> {
    let phi = params.finite_phi()?;
    let law = founder_law(params.dim, params.max_flock, params.lambda, phi);
    let mut pmf = Vec::with_capacity(k_max + 1);
    pmf.push(0.0);
    let mut geo_k = 1.0;
    for _ in 1..=k_max {
        geo_k *= law.p_geo;
        pmf.push(geo_k * (1.0 - law.p_geo) * law.p_reach);
    }
    // P(X >= 1) = p_reach * p_geo and P(X > k_max) = p_reach * p_geo^(k_max+1)
    pmf[0] = 1.0 - law.p_reach * law.p_geo;
    let remainder = law.p_reach * law.p_geo.powi(k_max as i32 + 1);
    Ok(OffspringDist {
        pmf,
        remainder,
        family: Some(law),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GwResult {
    pub extinction_prob: f64,
    pub is_subcritical: bool,
    /// Fixed-point iterations used (0 on the closed-form path).
    pub iterations: u64,
}

const FIXED_POINT_TOL: f64 = 1e-12;
const FIXED_POINT_MAX_ITER: u64 = 1_000_000;

/// Smallest fixed point of the offspring pgf in `[0, 1]`.
pub fn gw_extinction(dist: &OffspringDist) -> GwResult {
    let m = dist.mean();
    // Only the tabulated tail can hide a supercritical generic law.
    let subcritical = m <= 1.0 + CRITICAL_SLACK && (dist.family.is_some() || dist.remainder == 0.0);

    if let Some(f) = dist.family {
        let q = if subcritical { 1.0 } else { f.extinction_prob() };
        return GwResult {
            extinction_prob: q,
            is_subcritical: subcritical,
            iterations: 0,
        };
    }

    if dist.prob(1) == 1.0 {
        // Z_n = 1 forever.
        return GwResult {
            extinction_prob: 0.0,
            is_subcritical: true,
            iterations: 0,
        };
    }
    if subcritical {
        return GwResult {
            extinction_prob: 1.0,
            is_subcritical: true,
            iterations: 0,
        };
    }

    let mut q = 0.0;
    let mut iterations = 0;
    while iterations < FIXED_POINT_MAX_ITER {
        let next = dist.pgf(q);
        iterations += 1;
        let done = (next - q).abs() < FIXED_POINT_TOL;
        q = next;
        if done {
            break;
        }
    }
    GwResult {
        extinction_prob: q.clamp(0.0, 1.0),
        is_subcritical: false,
        iterations,
    }
}

/// Extinction probability of the branching process started from one flock
/// that is already full: its first generation is geometric with mean
/// `2d * lambda`, later generations follow the founder law.
pub fn full_flock_extinction(params: &ModelParams) -> Result<f64> {
    let dist = offspring_pmf(params, 0)?;
    let law = dist.family.expect("founder law");
    let q = gw_extinction(&dist).extinction_prob;
    Ok((1.0 - law.p_geo) / (1.0 - law.p_geo * q))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GwTrajectory {
    pub extinct: bool,
    /// `Z_0 = 1, Z_1, ...` up to extinction, escape or the last generation.
    pub trajectory: Vec<u64>,
    /// The population passed the cap (or drew from the untabulated tail).
    pub escaped: bool,
}

/// Samples `Z_0 = 1, Z_1, ..., Z_generations`; a population above
/// `population_cap` is declared to have escaped.
pub fn simulate_gw<R: Rng + ?Sized>(
    dist: &OffspringDist,
    generations: usize,
    population_cap: u64,
    rng: &mut R,
) -> GwTrajectory {
    let mut trajectory = vec![1u64];
    let mut z = 1u64;
    for _ in 0..generations {
        let mut next = 0u64;
        for _ in 0..z {
            match dist.sample(rng) {
                Some(k) => next += k,
                None => {
                    next = u64::MAX;
                    break;
                }
            }
            if next > population_cap {
                break;
            }
        }
        if next > population_cap {
            trajectory.push(next.min(population_cap + 1));
            return GwTrajectory {
                extinct: false,
                trajectory,
                escaped: true,
            };
        }
        trajectory.push(next);
        z = next;
        if z == 0 {
            return GwTrajectory {
                extinct: true,
                trajectory,
                escaped: false,
            };
        }
    }
    GwTrajectory {
        extinct: false,
        trajectory,
        escaped: false,
    }
}

/// Smallest `N` in `1..=n_max` with `m(N) <= 1` under the schedule
/// `lambda_of_n`.
pub fn smallest_extinct_n<F>(dim: usize, phi: f64, lambda_of_n: F, n_max: u32) -> Option<u32>
where
    F: Fn(u32) -> f64,
{
    (1..=n_max).find(|&n| threshold(dim, n, lambda_of_n(n), phi).is_subcritical())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Geometry, Phi};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn threshold_examples() {
        let r = threshold(1, 1, 0.75, 0.0);
        assert_eq!(r.m, 1.5);
        assert_eq!(r.p_reach, 1.0);

        let r = threshold(1, 2, 1.0, 0.0);
        assert!(close(r.p_reach, 2.0 / 3.0, 1e-15));
        assert!(close(r.m, 4.0 / 3.0, 1e-15));

        let r = threshold(2, 3, 0.5, 1.0);
        assert!(close(r.p_reach, 0.6, 1e-15));
        assert!(close(r.m, 1.2, 1e-15));

        for n in 2..50u32 {
            assert!(close(threshold(1, n, 1.0, 1.0).m, 6.0 / (n as f64 + 2.0), 1e-13));
        }
    }

    #[test]
    fn zero_lambda_gives_zero_m() {
        let r = threshold(2, 5, 0.0, 0.0);
        assert_eq!(r.m, 0.0);
        assert_eq!(r.p_reach, 0.0);
        let r = threshold(2, 5, 0.0, 1.0);
        assert_eq!(r.m, 0.0);
    }

    #[test]
    fn threshold_handles_huge_flocks() {
        let r = threshold(1, 1_000_000, 1.0, 1.0);
        assert!(close(r.m, 6.0 / 1_000_002.0, 1e-9));
        assert!(r.m > 0.0);
    }

    #[test]
    fn infinite_phi_rejected_and_limit_reported() {
        let p = ModelParams::new(1, 4, 1.0, Phi::Infinite, Geometry::SparseUnbounded).unwrap();
        assert!(compute_threshold(&p).is_err());
        assert_eq!(analytic_m(&p), 2.0);
    }

    #[test]
    fn pmf_examples() {
        let p = ModelParams::sparse(1, 2, 0.5, 0.0).unwrap();
        let d = offspring_pmf(&p, 60).unwrap();
        assert!(close(d.p_reach().unwrap(), 0.5, 1e-15));
        assert!(close(d.p_geo().unwrap(), 0.5, 1e-15));
        for k in 1..=60 {
            assert!(close(d.prob(k), 0.5f64.powi(k as i32 + 2), 1e-14));
        }
        assert!(close(d.prob(0), 0.75, 1e-15));
        assert!(close(d.mean(), 0.5, 1e-15));

        let p = ModelParams::sparse(1, 1, 1.0, 0.0).unwrap();
        let d = offspring_pmf(&p, 5).unwrap();
        assert!(close(d.prob(1), 2.0 / 9.0, 1e-15));
    }

    #[test]
    fn pmf_mass_accounting() {
        for &(dim, n, lam, phi, kmax) in &[
            (1, 3, 1.0, 1.0, 0usize),
            (2, 5, 0.7, 0.3, 10),
            (3, 1, 2.0, 0.0, 200),
            (1, 8, 0.1, 4.0, 3),
        ] {
            let p = ModelParams::sparse(dim, n, lam, phi).unwrap();
            let d = offspring_pmf(&p, kmax).unwrap();
            let total: f64 = d.pmf.iter().sum::<f64>() + d.remainder;
            assert!((total - 1.0).abs() < 1e-12, "total {total}");
        }
    }

    #[test]
    fn gw_closed_form_matches_iteration() {
        let p = ModelParams::sparse(1, 1, 1.0, 0.0).unwrap();
        let d = offspring_pmf(&p, 400).unwrap();
        let closed = gw_extinction(&d);
        let generic = gw_extinction(&OffspringDist::from_pmf(d.pmf.clone()));
        assert!((closed.extinction_prob - 0.5).abs() < 1e-15);
        assert!((generic.extinction_prob - 0.5).abs() < 1e-10);
        assert!(generic.iterations > 0);
    }

    #[test]
    fn gw_degenerate_cases() {
        let none = OffspringDist::from_pmf(vec![1.0]);
        assert_eq!(gw_extinction(&none).extinction_prob, 1.0);
        let one = OffspringDist::from_pmf(vec![0.0, 1.0]);
        assert_eq!(gw_extinction(&one).extinction_prob, 0.0);
        let sub = offspring_pmf(&ModelParams::sparse(1, 1, 0.4, 0.0).unwrap(), 10).unwrap();
        let r = gw_extinction(&sub);
        assert_eq!(r.extinction_prob, 1.0);
        assert!(r.is_subcritical);
    }

    #[test]
    fn critical_telescoping_point_is_exactly_extinct() {
        let d = offspring_pmf(&ModelParams::sparse(1, 4, 1.0, 1.0).unwrap(), 10).unwrap();
        assert_eq!(gw_extinction(&d).extinction_prob, 1.0);
    }

    #[test]
    fn simulate_gw_no_offspring() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = simulate_gw(&OffspringDist::from_pmf(vec![1.0]), 10, 1000, &mut rng);
        assert!(t.extinct);
        assert_eq!(t.trajectory, vec![1, 0]);
    }

    #[test]
    fn smallest_extinct_n_examples() {
        assert_eq!(smallest_extinct_n(1, 1.0, |_| 1.0, 100), Some(4));
        assert_eq!(smallest_extinct_n(1, 0.0, |_| 0.4, 100), Some(1));
        assert_eq!(smallest_extinct_n(1, 1.0, |n| n as f64, 50), None);
    }

    #[test]
    fn full_flock_start_is_more_robust() {
        let p = ModelParams::sparse(1, 3, 1.0, 1.0).unwrap();
        let q_founder = gw_extinction(&offspring_pmf(&p, 0).unwrap()).extinction_prob;
        let q_full = full_flock_extinction(&p).unwrap();
        assert!(q_full < q_founder);
        // 1 - p_reach p over p with p = 2/3, p_reach = 3/5: q = 0.9
        assert!(close(q_founder, 0.9, 1e-14));
        assert!(close(q_full, (1.0 / 3.0) / (1.0 - 0.6), 1e-14));
    }
}
