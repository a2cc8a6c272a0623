//! Monte Carlo harness: survival estimates, critical-value searches, sweeps,
//! density decay from a full torus, and persistence of result tables.
//!
//! Trial `i` of a plan always runs on `ClockStreams::for_trial(base_seed, i)`
//! and results are aggregated in trial order, so estimates do not depend on
//! how rayon schedules the work.

mod critical;
mod persist;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics;
use crate::error::{FlockError, Result};
use crate::model::{Configuration, Geometry, ModelParams, Phi, Site};
use crate::simulator::{run_branching, BranchingConfig, ClockStreams, LatticeSim};

pub use critical::{estimate_critical_lambda, estimate_critical_n, CriticalEstimate, CriticalKind, CriticalSearch};
pub use persist::{read_table, write_manifest, write_table, ResultRow, RunManifest, CSV_HEADER};

/// Default flock cap for branching trials.
pub const DEFAULT_FLOCK_CAP: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSpec {
    /// One site (the origin) in the given state: a finite population.
    SingleAtOrigin { state: u32 },
    /// Every torus site in state `N`: the infinite-population analogue.
    AllN,
    Explicit(Configuration),
}

impl InitSpec {
    pub fn configuration(&self, params: &ModelParams) -> Result<Configuration> {
        let c = match self {
            InitSpec::SingleAtOrigin { state } => {
                if *state == 0 || *state > params.max_flock {
                    return Err(FlockError::InvalidInit(format!(
                        "initial state {state} outside [1, {}]",
                        params.max_flock
                    )));
                }
                Configuration::single(Site::origin(params.dim), *state)
            }
            InitSpec::AllN => Configuration::all_full(params)?,
            InitSpec::Explicit(c) => c.clone(),
        };
        c.validate(params)?;
        Ok(c)
    }

    /// The same start for the branching process: one flock per occupied site.
    pub fn branching(&self, params: &ModelParams) -> Result<BranchingConfig> {
        let c = self.configuration(params)?;
        let mut b = BranchingConfig::new();
        for (site, state) in c.iter() {
            b.add(*site, state);
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    Eta,
    Contact,
    Branching,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub params: ModelParams,
    pub init: InitSpec,
    pub t_max: f64,
    pub n_trials: u64,
    pub base_seed: u64,
    pub process: ProcessKind,
    #[serde(default = "default_cap")]
    pub flock_cap: u64,
}

fn default_cap() -> u64 {
    DEFAULT_FLOCK_CAP
}

impl TrialPlan {
    pub fn new(params: ModelParams, init: InitSpec, t_max: f64, n_trials: u64, base_seed: u64) -> Self {
        TrialPlan {
            params,
            init,
            t_max,
            n_trials,
            base_seed,
            process: ProcessKind::Eta,
            flock_cap: DEFAULT_FLOCK_CAP,
        }
    }

    pub fn with_process(mut self, process: ProcessKind) -> Self {
        self.process = process;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.t_max > 0.0) {
            return Err(FlockError::InvalidHorizon(self.t_max));
        }
        if self.n_trials == 0 {
            return Err(FlockError::InvalidParams("n_trials must be positive".into()));
        }
        let init = self.init.configuration(&self.params)?;
        match self.process {
            ProcessKind::Eta | ProcessKind::Branching => {
                self.params.finite_phi()?;
            }
            ProcessKind::Contact => {
                if init.iter().any(|(_, s)| s != self.params.max_flock) {
                    return Err(FlockError::InvalidInit("contact mode needs states in {0, N}".into()));
                }
            }
        }
        if self.process == ProcessKind::Branching && self.flock_cap == 0 {
            return Err(FlockError::InvalidParams("flock cap must be at least 1".into()));
        }
        Ok(())
    }

    /// Whether trial `index` is alive at the horizon (or past the flock cap).
    pub fn run_trial(&self, index: u64) -> Result<bool> {
        let streams = ClockStreams::for_trial(self.base_seed, index);
        let survived = match self.process {
            ProcessKind::Eta => {
                let init = self.init.configuration(&self.params)?;
                LatticeSim::eta(&self.params, &init, &streams)?
                    .run(self.t_max, |_| {})?
                    .fate
                    .survived()
            }
            ProcessKind::Contact => {
                let init = self.init.configuration(&self.params)?;
                LatticeSim::contact(&self.params, &init, &streams)?
                    .run(self.t_max, |_| {})?
                    .fate
                    .survived()
            }
            ProcessKind::Branching => {
                let init = self.init.branching(&self.params)?;
                run_branching(&self.params, &init, self.t_max, self.flock_cap, &streams, |_| {})?
                    .fate
                    .survived()
            }
        };
        Ok(survived)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub surviving: u64,
    pub n_trials: u64,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub censored_horizon: f64,
}

impl SurvivalEstimate {
    pub fn from_counts(surviving: u64, n_trials: u64, censored_horizon: f64) -> Self {
        let point = surviving as f64 / n_trials as f64;
        let (lo, hi) = wilson_interval(surviving, n_trials);
        SurvivalEstimate {
            surviving,
            n_trials,
            point,
            ci_low: lo.min(point),
            ci_high: hi.max(point),
            censored_horizon,
        }
    }

    /// Binomial standard error of the point estimate.
    pub fn std_error(&self) -> f64 {
        (self.point * (1.0 - self.point) / self.n_trials as f64).sqrt()
    }
}

const Z_95: f64 = 1.959_963_984_540_054;

/// 95% Wilson score interval.
pub fn wilson_interval(successes: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z_95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

pub fn estimate_survival(plan: &TrialPlan) -> Result<SurvivalEstimate> {
    plan.validate()?;
    let outcomes = (0..plan.n_trials)
        .into_par_iter()
        .map(|i| plan.run_trial(i))
        .collect::<Result<Vec<bool>>>()?;
    let surviving = outcomes.iter().filter(|&&s| s).count() as u64;
    Ok(SurvivalEstimate::from_counts(surviving, plan.n_trials, plan.t_max))
}

/// Axes of a parameter sweep; an empty axis keeps the template's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub dims: Vec<usize>,
    pub max_flocks: Vec<u32>,
    pub lambdas: Vec<f64>,
    pub phis: Vec<Phi>,
}

impl SweepGrid {
    pub fn points(&self, template: &ModelParams) -> Vec<ModelParams> {
        fn axis<T: Copy>(values: &[T], default: T) -> Vec<T> {
            if values.is_empty() {
                vec![default]
            } else {
                values.to_vec()
            }
        }
        let mut out = Vec::new();
        for &dim in &axis(&self.dims, template.dim) {
            for &n in &axis(&self.max_flocks, template.max_flock) {
                for &lambda in &axis(&self.lambdas, template.lambda) {
                    for &phi in &axis(&self.phis, template.phi) {
                        out.push(ModelParams {
                            dim,
                            max_flock: n,
                            lambda,
                            phi,
                            geometry: template.geometry,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty() && self.max_flocks.is_empty() && self.lambdas.is_empty() && self.phis.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub params: ModelParams,
    /// Threshold `m` for this row (the `2d * lambda` limit when `phi = inf`).
    pub m: f64,
    pub estimate: SurvivalEstimate,
    pub base_seed: u64,
}

impl SweepRow {
    pub fn to_result_row(&self) -> ResultRow {
        ResultRow::new(&self.params, self.m, &self.estimate, self.base_seed)
    }
}

/// One survival estimate per grid point, in grid order. Every point reuses the
/// template's seed, so neighbouring points share random numbers.
pub fn sweep(grid: &SweepGrid, template: &TrialPlan) -> Result<Vec<SweepRow>> {
    let points = grid.points(&template.params);
    if points.is_empty() {
        return Err(FlockError::InvalidParams("empty sweep grid".into()));
    }
    points
        .into_iter()
        .map(|params| {
            let plan = TrialPlan {
                params,
                ..template.clone()
            };
            Ok(SweepRow {
                params,
                m: analytics::analytic_m(&params),
                estimate: estimate_survival(&plan)?,
                base_seed: plan.base_seed,
            })
        })
        .collect()
}

/// Mean fraction of occupied torus sites at each time of `t_grid`, starting
/// from every site in state `N`. Only defined for `m < 1`.
pub fn density_decay(params: &ModelParams, t_grid: &[f64], n_trials: u64, base_seed: u64) -> Result<Vec<(f64, f64)>> {
    params.validate()?;
    let report = analytics::compute_threshold(params)?;
    if !report.is_strictly_subcritical() {
        return Err(FlockError::NotSubcritical { m: report.m });
    }
    let Some(volume) = params.geometry.volume(params.dim) else {
        return Err(FlockError::InvalidParams("density decay needs torus geometry".into()));
    };
    if t_grid.windows(2).any(|w| w[1] < w[0]) || t_grid.iter().any(|&t| t < 0.0) {
        return Err(FlockError::InvalidParams("time grid must be non-negative and sorted".into()));
    }
    if n_trials == 0 {
        return Err(FlockError::InvalidParams("n_trials must be positive".into()));
    }
    let init = Configuration::all_full(params)?;
    let series = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let mut sim = LatticeSim::eta(params, &init, &ClockStreams::for_trial(base_seed, i))?;
            Ok(t_grid
                .iter()
                .map(|&t| {
                    sim.advance_to(t, |_| {});
                    sim.occupied() as f64 / volume as f64
                })
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(t_grid
        .iter()
        .enumerate()
        .map(|(k, &t)| (t, series.iter().map(|s| s[k]).sum::<f64>() / n_trials as f64))
        .collect())
}

/// Default torus side for density runs.
pub fn default_torus_side(dim: usize) -> u32 {
    if dim == 1 {
        200
    } else {
        64
    }
}

pub fn torus(dim: usize) -> Geometry {
    Geometry::Torus {
        side: default_torus_side(dim),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_brackets_point() {
        for &(k, n) in &[(0u64, 10u64), (10, 10), (3, 7), (500, 1000), (1, 400)] {
            let e = SurvivalEstimate::from_counts(k, n, 1.0);
            assert!(0.0 <= e.ci_low && e.ci_low <= e.point && e.point <= e.ci_high && e.ci_high <= 1.0);
        }
        // textbook value: 0 of 10 gives an upper limit of about 0.2775
        let (_, hi) = wilson_interval(0, 10);
        assert!((hi - 0.2775).abs() < 1e-3);
    }

    #[test]
    fn pure_death_never_survives() {
        let p = ModelParams::sparse(1, 3, 0.0, 0.0).unwrap();
        let plan = TrialPlan::new(p, InitSpec::SingleAtOrigin { state: 3 }, 200.0, 200, 5);
        assert_eq!(estimate_survival(&plan).unwrap().surviving, 0);
    }

    #[test]
    fn plan_validation() {
        let p = ModelParams::sparse(1, 3, 1.0, 1.0).unwrap();
        let bad = TrialPlan::new(p, InitSpec::SingleAtOrigin { state: 4 }, 10.0, 10, 0);
        assert!(bad.validate().is_err());
        let contact = TrialPlan::new(p, InitSpec::SingleAtOrigin { state: 1 }, 10.0, 10, 0)
            .with_process(ProcessKind::Contact);
        assert!(contact.validate().is_err());
        let all_n_sparse = TrialPlan::new(p, InitSpec::AllN, 10.0, 10, 0);
        assert!(all_n_sparse.validate().is_err());
    }

    #[test]
    fn sweep_grid_order_and_singleton() {
        let p = ModelParams::sparse(1, 1, 2.0, 1.0).unwrap();
        let grid = SweepGrid {
            max_flocks: vec![1, 2],
            lambdas: vec![0.5, 1.0],
            ..Default::default()
        };
        let pts = grid.points(&p);
        assert_eq!(pts.len(), 4);
        assert_eq!((pts[1].max_flock, pts[1].lambda), (1, 1.0));
        assert_eq!((pts[2].max_flock, pts[2].lambda), (2, 0.5));

        let plan = TrialPlan::new(p, InitSpec::SingleAtOrigin { state: 1 }, 20.0, 50, 9);
        let one = SweepGrid {
            lambdas: vec![2.0],
            ..Default::default()
        };
        let rows = sweep(&one, &plan).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].estimate, estimate_survival(&plan).unwrap());
    }

    #[test]
    fn zero_lambda_sweep_is_all_extinct() {
        let p = ModelParams::sparse(1, 2, 1.0, 1.0).unwrap();
        let plan = TrialPlan::new(p, InitSpec::SingleAtOrigin { state: 1 }, 100.0, 50, 1);
        let grid = SweepGrid {
            lambdas: vec![0.0],
            ..Default::default()
        };
        for row in sweep(&grid, &plan).unwrap() {
            assert_eq!(row.estimate.surviving, 0);
            assert_eq!(row.m, 0.0);
        }
    }

    #[test]
    fn density_decay_rejects_critical_params() {
        let p = ModelParams::new(1, 4, 1.0, Phi::Finite(1.0), Geometry::Torus { side: 200 }).unwrap();
        assert!(matches!(
            density_decay(&p, &[0.0, 10.0], 2, 0),
            Err(FlockError::NotSubcritical { .. })
        ));
    }

    #[test]
    fn density_decay_pure_death_is_exponential() {
        let p = ModelParams::new(1, 2, 0.0, Phi::Finite(1.0), Geometry::Torus { side: 200 }).unwrap();
        let grid = [0.0, 0.5, 1.0, 2.0];
        let series = density_decay(&p, &grid, 20, 3).unwrap();
        assert_eq!(series[0].1, 1.0);
        for &(t, frac) in &series[1..] {
            let expected = (-t).exp();
            // 4000 independent sites in total
            let se = (expected * (1.0 - expected) / 4000.0).sqrt();
            assert!((frac - expected).abs() < 4.0 * se, "t={t}: {frac} vs {expected}");
        }
    }
}
