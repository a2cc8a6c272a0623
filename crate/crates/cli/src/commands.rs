use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use flockcp_core::analytics::{
    analytic_m, compute_threshold, full_flock_extinction, gw_extinction, offspring_pmf, simulate_gw,
    smallest_extinct_n,
};
use flockcp_core::experiments::{
    density_decay, estimate_critical_lambda, estimate_critical_n, estimate_survival, sweep, torus, write_manifest,
    write_table, CriticalEstimate, CriticalKind, CriticalSearch, InitSpec, ProcessKind, ResultRow, RunManifest,
    SurvivalEstimate, SweepGrid, TrialPlan,
};
use flockcp_core::simulator::{
    run_branching, run_contact, run_eta, run_coupled_pair, run_phi_coupled_pair, BranchingFate, ClockStreams,
    EventLog, Fate, TrajectoryEvent,
};
use flockcp_core::{Configuration, ModelParams, Phi, Site};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::{Cli, CliError, Command, CriticalKindArg};

const DEFAULT_T_MAX: f64 = 100.0;
const DEFAULT_TRIALS: u64 = 1000;

pub fn run(cli: Cli) -> Result<u8, CliError> {
    let file = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let out = Output { json: cli.json };
    match cli.command {
        Command::Threshold { params } => threshold(file.overlay(params.to_config()), out),
        Command::Gw {
            params,
            k_max,
            lineages,
            generations,
            population_cap,
        } => gw(file.overlay(params.to_config()), k_max, lineages, generations, population_cap, out),
        Command::Simulate { run, log_events } => simulate(file.overlay(run.to_config()), log_events.as_deref(), out),
        Command::Survival { run, trials, out: path } => {
            let cfg = file.overlay(RunConfig {
                trials,
                ..run.to_config()
            });
            survival(cfg, path.as_deref(), out)
        }
        Command::Sweep {
            run,
            trials,
            dims,
            max_flocks,
            lambdas,
            phis,
            out: path,
        } => {
            let cfg = file.overlay(RunConfig {
                trials,
                ..run.to_config()
            });
            let grid = SweepGrid {
                dims,
                max_flocks,
                lambdas,
                phis,
            };
            sweep_cmd(cfg, grid, path.as_deref(), out)
        }
        Command::Critical {
            params,
            kind,
            bracket,
            eps,
            trials_per_point,
            t_max,
            resolution,
            start,
            out: path,
        } => {
            let cfg = file.overlay(RunConfig {
                eps,
                trials: trials_per_point,
                t_max,
                resolution,
                ..params.to_config()
            });
            critical(cfg, kind, bracket, &start, path.as_deref(), out)
        }
        Command::CoupleCheck {
            params,
            n1,
            n2,
            against_inf,
            seeds,
            t_max,
            out: path,
        } => {
            let cfg = file.overlay(RunConfig {
                t_max,
                ..params.to_config()
            });
            couple_check(cfg, n1, n2, against_inf, seeds, path.as_deref(), out)
        }
        Command::Density {
            params,
            times,
            trials,
            out: path,
        } => {
            let cfg = file.overlay(RunConfig {
                trials,
                ..params.to_config()
            });
            density(cfg, times, path.as_deref(), out)
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Output {
    json: bool,
}

impl Output {
    fn emit(&self, value: Value, text: impl FnOnce() -> String) {
        if self.json {
            println!("{}", serde_json::to_string_pretty(&value).expect("json value"));
        } else {
            print!("{}", text());
        }
    }
}

/// Up to 12 decimals with trailing zeros dropped; tiny values in exponent
/// form.
fn num(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x != 0.0 && x.abs() < 1e-6 {
        return format!("{x:e}");
    }
    let s = format!("{x:.12}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn manifest_config(cfg: &RunConfig, extra: Value) -> Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let (Some(map), Value::Object(extra)) = (v.as_object_mut(), extra) {
        map.extend(extra);
    }
    v
}

fn write_outputs(path: &Path, command: &str, config: Value, body: impl FnOnce(&mut dyn Write) -> Result<(), CliError>) -> Result<(), CliError> {
    let mut f = BufWriter::new(File::create(path)?);
    body(&mut f)?;
    f.flush()?;
    write_manifest(path, &RunManifest::new(command, config))?;
    Ok(())
}

fn write_rows(path: &Path, command: &str, config: Value, rows: &[ResultRow]) -> Result<(), CliError> {
    write_outputs(path, command, config, |w| Ok(write_table(w, rows)?))
}

fn rows_csv(rows: &[ResultRow]) -> Result<String, CliError> {
    let mut buf = Vec::new();
    write_table(&mut buf, rows)?;
    Ok(String::from_utf8(buf).expect("csv is utf-8"))
}

fn threshold(cfg: RunConfig, out: Output) -> Result<u8, CliError> {
    let params = cfg.params()?;
    let report = compute_threshold(&params)?;
    let verdict = if report.is_subcritical() {
        "EXTINCT"
    } else {
        "SUPERCRITICAL-POSSIBLE"
    };
    out.emit(
        json!({
            "d": params.dim,
            "N": params.max_flock,
            "lambda": params.lambda,
            "phi": params.phi,
            "m": report.m,
            "p_reach": report.p_reach,
            "log_m": report.log_m,
            "verdict": verdict,
        }),
        || {
            format!(
                "m = {}\np_reach = {}\nlog_m = {}\nverdict = {verdict}\n",
                num(report.m),
                num(report.p_reach),
                num(report.log_m)
            )
        },
    );
    Ok(0)
}

fn gw(cfg: RunConfig, k_max: usize, lineages: Option<u64>, generations: usize, population_cap: u64, out: Output) -> Result<u8, CliError> {
    let params = cfg.params()?;
    let dist = offspring_pmf(&params, k_max)?;
    let result = gw_extinction(&dist);
    let full = full_flock_extinction(&params)?;
    let simulated = lineages.map(|n| {
        let mut rng = ClockStreams::new(cfg.seed()).solo_rng();
        let extinct = (0..n)
            .filter(|_| simulate_gw(&dist, generations, population_cap, &mut rng).extinct)
            .count() as u64;
        (extinct, n)
    });
    out.emit(
        json!({
            "m": dist.mean(),
            "p_geo": dist.p_geo(),
            "p_reach": dist.p_reach(),
            "pmf": dist.pmf,
            "remainder": dist.remainder,
            "extinction_prob": result.extinction_prob,
            "is_subcritical": result.is_subcritical,
            "full_flock_extinction_prob": full,
            "simulated": simulated.map(|(e, n)| json!({"extinct": e, "lineages": n, "frequency": e as f64 / n as f64})),
        }),
        || {
            let mut s = format!(
                "m = {}\np_geo = {}\np_reach = {}\nextinction_prob = {}\nsubcritical = {}\nfull_flock_extinction_prob = {}\n",
                num(dist.mean()),
                num(dist.p_geo().unwrap_or(0.0)),
                num(dist.p_reach().unwrap_or(0.0)),
                num(result.extinction_prob),
                result.is_subcritical,
                num(full)
            );
            if let Some((e, n)) = simulated {
                let _ = writeln!(s, "simulated_extinction = {e}/{n} ({})", num(e as f64 / n as f64));
            }
            s
        },
    );
    Ok(0)
}

fn effective_process(cfg: &RunConfig) -> Result<ProcessKind, CliError> {
    if cfg.process.is_none() && cfg.phi.is_some_and(Phi::is_infinite) {
        return Ok(ProcessKind::Contact);
    }
    cfg.process_kind()
}

fn process_name(p: ProcessKind) -> &'static str {
    match p {
        ProcessKind::Eta => "eta",
        ProcessKind::Contact => "contact",
        ProcessKind::Branching => "branching",
    }
}

fn fill_run_defaults(cfg: RunConfig) -> Result<(RunConfig, ProcessKind), CliError> {
    let process = effective_process(&cfg)?;
    let mut cfg = cfg.resolved(DEFAULT_T_MAX);
    cfg.init.get_or_insert_with(|| "single:1".into());
    cfg.process = Some(process_name(process).into());
    if process == ProcessKind::Branching {
        cfg.cap.get_or_insert(cfg.cap());
    }
    Ok((cfg, process))
}

fn simulate(cfg: RunConfig, log_path: Option<&Path>, out: Output) -> Result<u8, CliError> {
    let (cfg, process) = fill_run_defaults(cfg)?;
    let params = cfg.params()?;
    let init = cfg.init_spec()?;
    let t_max = cfg.t_max.expect("resolved");
    let streams = ClockStreams::new(cfg.seed());

    let mut log = match log_path {
        Some(p) => Some(EventLog::new(BufWriter::new(File::create(p)?))),
        None => None,
    };
    let observer = |e: &TrajectoryEvent| {
        if let Some(l) = log.as_mut() {
            l.record(e);
        }
    };
    let (outcome, time, events, occupied, individuals) = match process {
        ProcessKind::Eta | ProcessKind::Contact => {
            let start = init.configuration(&params)?;
            let o = if process == ProcessKind::Eta {
                run_eta(&params, &start, t_max, &streams, observer)?
            } else {
                run_contact(&params, &start, t_max, &streams, observer)?
            };
            let (label, time) = match o.fate {
                Fate::Extinct(t) => ("EXTINCT", Some(t)),
                Fate::Censored => ("CENSORED", None),
            };
            (label, time, o.events, o.final_config.occupied(), o.final_config.individuals())
        }
        ProcessKind::Branching => {
            let start = init.branching(&params)?;
            let o = run_branching(&params, &start, t_max, cfg.cap(), &streams, observer)?;
            let (label, time) = match o.fate {
                BranchingFate::Extinct(t) => ("EXTINCT", Some(t)),
                BranchingFate::Censored => ("CENSORED", None),
                BranchingFate::CapExceeded(t) => ("CAP_EXCEEDED", Some(t)),
            };
            let individuals = o
                .final_config
                .iter()
                .flat_map(|(_, flocks)| flocks.iter().map(|&s| s as u64))
                .sum();
            (label, time, o.events, o.final_config.total_flocks(), individuals)
        }
    };
    if let Some(log) = log {
        log.finish()?;
    }
    out.emit(
        json!({
            "process": process_name(process),
            "outcome": outcome,
            "time": time,
            "t_max": t_max,
            "events": events,
            "occupied": occupied,
            "individuals": individuals,
            "seed": cfg.seed(),
        }),
        || {
            let mut s = format!("process = {}\noutcome = {outcome}\n", process_name(process));
            if let Some(t) = time {
                let _ = writeln!(s, "time = {}", num(t));
            }
            let _ = write!(
                s,
                "t_max = {}\nevents = {events}\n{} = {occupied}\nindividuals = {individuals}\n",
                num(t_max),
                if process == ProcessKind::Branching { "flocks" } else { "occupied" }
            );
            s
        },
    );
    Ok(0)
}

fn estimate_text(est: &SurvivalEstimate, m: f64) -> String {
    format!(
        "surviving = {}/{}\npoint = {}\nci95 = [{}, {}]\nt_max = {}\nm = {}\n",
        est.surviving,
        est.n_trials,
        num(est.point),
        num(est.ci_low),
        num(est.ci_high),
        num(est.censored_horizon),
        num(m)
    )
}

fn survival(cfg: RunConfig, path: Option<&Path>, out: Output) -> Result<u8, CliError> {
    let (mut cfg, process) = fill_run_defaults(cfg)?;
    cfg.trials.get_or_insert(DEFAULT_TRIALS);
    let params = cfg.params()?;
    let plan = TrialPlan {
        flock_cap: cfg.cap(),
        process,
        ..TrialPlan::new(
            params,
            cfg.init_spec()?,
            cfg.t_max.expect("resolved"),
            cfg.trials.expect("resolved"),
            cfg.seed(),
        )
    };
    let est = estimate_survival(&plan)?;
    let m = analytic_m(&params);
    let row = ResultRow::new(&params, m, &est, plan.base_seed);
    if let Some(path) = path {
        write_rows(path, "survival", manifest_config(&cfg, json!({})), std::slice::from_ref(&row))?;
    }
    out.emit(serde_json::to_value(&row).expect("row"), || estimate_text(&est, m));
    Ok(0)
}

fn sweep_cmd(cfg: RunConfig, grid: SweepGrid, path: Option<&Path>, out: Output) -> Result<u8, CliError> {
    if grid.is_empty() {
        return Err(CliError::Usage(
            "sweep needs at least one of --dims, --Ns, --lambdas, --phis".into(),
        ));
    }
    let (mut cfg, process) = fill_run_defaults(cfg)?;
    cfg.trials.get_or_insert(DEFAULT_TRIALS);
    let template = TrialPlan {
        flock_cap: cfg.cap(),
        process,
        ..TrialPlan::new(
            cfg.params()?,
            cfg.init_spec()?,
            cfg.t_max.expect("resolved"),
            cfg.trials.expect("resolved"),
            cfg.seed(),
        )
    };
    let rows: Vec<ResultRow> = sweep(&grid, &template)?.iter().map(|r| r.to_result_row()).collect();
    if let Some(path) = path {
        let extra = json!({ "grid": grid });
        write_rows(path, "sweep", manifest_config(&cfg, extra), &rows)?;
    }
    let csv = rows_csv(&rows)?;
    out.emit(serde_json::to_value(&rows).expect("rows"), || csv);
    Ok(0)
}

fn critical(
    cfg: RunConfig,
    kind: CriticalKindArg,
    bracket: Option<Vec<f64>>,
    start: &str,
    path: Option<&Path>,
    out: Output,
) -> Result<u8, CliError> {
    let search_defaults = CriticalSearch::default();
    let mut cfg = cfg;
    cfg.dim.get_or_insert(1);
    cfg.seed.get_or_insert(0);
    let search = CriticalSearch {
        eps: *cfg.eps.get_or_insert(search_defaults.eps),
        trials_per_point: *cfg.trials.get_or_insert(search_defaults.trials_per_point),
        t_max: *cfg.t_max.get_or_insert(search_defaults.t_max),
        base_seed: cfg.seed(),
        resolution: *cfg.resolution.get_or_insert(search_defaults.resolution),
    };
    let dim = cfg.dim();
    let (estimate, bracket_used) = match kind {
        CriticalKindArg::Lambda => {
            let b = match bracket.as_deref() {
                Some([lo, hi]) => (*lo, *hi),
                _ => (0.5, 5.0),
            };
            cfg.max_flock = Some(1);
            cfg.lambda = None;
            cfg.phi = None;
            (estimate_critical_lambda(dim, b, &search)?, (b.0, b.1))
        }
        CriticalKindArg::N => {
            let lambda = *cfg.lambda.get_or_insert(1.0);
            let phi = cfg
                .phi
                .get_or_insert(Phi::Finite(1.0))
                .finite()
                .ok_or(flockcp_core::FlockError::InfinitePhi)?;
            cfg.max_flock = None;
            let init = match start {
                "single" => InitSpec::SingleAtOrigin { state: 1 },
                "all-n" => InitSpec::AllN,
                other => return Err(CliError::Usage(format!("start must be single or all-n, got {other:?}"))),
            };
            let b = match bracket.as_deref() {
                Some([lo, hi]) => {
                    if lo.fract() != 0.0 || hi.fract() != 0.0 || *lo < 1.0 {
                        return Err(CliError::Usage(format!("flock-size bracket must be integers >= 1, got {lo},{hi}")));
                    }
                    (*lo as u32, *hi as u32)
                }
                _ => {
                    let bound = smallest_extinct_n(dim, phi, |_| lambda, 4096).unwrap_or(64);
                    (1, bound.max(2))
                }
            };
            (
                estimate_critical_n(dim, lambda, phi, b, &init, &search)?,
                (b.0 as f64, b.1 as f64),
            )
        }
    };

    let rows = evaluation_rows(&cfg, &estimate, start)?;
    if let Some(path) = path {
        let extra = json!({
            "kind": kind_name(estimate.kind),
            "bracket": [bracket_used.0, bracket_used.1],
            "start": start,
        });
        write_rows(path, "critical", manifest_config(&cfg, extra), &rows)?;
    }
    let csv = rows_csv(&rows)?;
    out.emit(serde_json::to_value(&estimate).expect("estimate"), || {
        let mut s = format!(
            "kind = {}\nbracket = [{}, {}]\n",
            kind_name(estimate.kind),
            num(estimate.bracket_low),
            num(estimate.bracket_high)
        );
        if let Some(bound) = estimate.analytic_bound {
            let _ = writeln!(s, "analytic_bound = {bound}\nconsistent = {}", estimate.consistent_with_threshold());
        }
        s.push_str("evaluations:\n");
        s.push_str(&csv);
        s
    });
    Ok(0)
}

fn kind_name(kind: CriticalKind) -> &'static str {
    match kind {
        CriticalKind::LambdaC => "lambda",
        CriticalKind::NC => "N",
    }
}

/// One result row per evaluated point, in evaluation order.
fn evaluation_rows(cfg: &RunConfig, est: &CriticalEstimate, start: &str) -> Result<Vec<ResultRow>, CliError> {
    let dim = cfg.dim();
    est.evaluations
        .iter()
        .map(|(x, e)| {
            let params = match est.kind {
                CriticalKind::LambdaC => ModelParams::sparse(dim, 1, *x, 0.0)?,
                CriticalKind::NC => {
                    let geometry = if start == "all-n" { torus(dim) } else { cfg.geometry()? };
                    ModelParams::new(dim, *x as u32, cfg.lambda.unwrap_or(1.0), cfg.phi.unwrap_or(Phi::Finite(1.0)), geometry)?
                }
            };
            Ok(ResultRow::new(&params, analytic_m(&params), e, cfg.seed()))
        })
        .collect()
}

fn couple_check(
    cfg: RunConfig,
    n1: u32,
    n2: u32,
    against_inf: bool,
    seeds: u64,
    path: Option<&Path>,
    out: Output,
) -> Result<u8, CliError> {
    let mut cfg = cfg.resolved(50.0);
    let t_max = cfg.t_max.expect("resolved");
    if against_inf {
        cfg.max_flock.get_or_insert(1);
    } else {
        cfg.max_flock = Some(n2);
    }
    let params = cfg.params()?;
    let start = Configuration::single(Site::origin(params.dim), params.max_flock);
    let mut lines = String::from("trial,violations,events_first,events_second,fate_first,fate_second\n");
    let mut total = 0u64;
    for i in 0..seeds {
        let streams = ClockStreams::for_trial(cfg.seed(), i);
        let o = if against_inf {
            run_phi_coupled_pair(&params, &start, t_max, &streams, false)?
        } else {
            run_coupled_pair(&params, n1, n2, t_max, &streams, false)?
        };
        total += o.violation_count;
        let _ = writeln!(
            lines,
            "{i},{},{},{},{},{}",
            o.violation_count, o.events[0], o.events[1], o.fates[0], o.fates[1]
        );
    }
    if let Some(path) = path {
        let extra = if against_inf {
            json!({ "mode": "phi_vs_inf", "seeds": seeds })
        } else {
            json!({ "mode": "flock_size", "n1": n1, "n2": n2, "seeds": seeds })
        };
        write_outputs(path, "couple-check", manifest_config(&cfg, extra), |w| {
            w.write_all(lines.as_bytes())?;
            Ok(())
        })?;
    }
    out.emit(json!({ "runs": seeds, "violations": total }), || {
        format!("{seeds} coupled runs, {total} violations\n")
    });
    Ok(if total == 0 { 0 } else { 2 })
}

fn density(cfg: RunConfig, times: Vec<f64>, path: Option<&Path>, out: Output) -> Result<u8, CliError> {
    let mut cfg = cfg;
    let dim = *cfg.dim.get_or_insert(1);
    let geometry = match cfg.geometry()? {
        flockcp_core::Geometry::SparseUnbounded if cfg.geometry.is_none() => torus(dim),
        g => g,
    };
    cfg.geometry = Some(geometry.to_string());
    let mut cfg = cfg.resolved(DEFAULT_T_MAX);
    cfg.t_max = None;
    let trials = *cfg.trials.get_or_insert(20);
    let times = if times.is_empty() {
        (0..=10).map(|k| 10.0 * k as f64).collect()
    } else {
        times
    };
    let params = cfg.params()?;
    let series = density_decay(&params, &times, trials, cfg.seed())?;
    let mut table = String::from("t,occupied_fraction\n");
    for (t, f) in &series {
        let _ = writeln!(table, "{t},{f}");
    }
    if let Some(path) = path {
        let extra = json!({ "times": times });
        write_outputs(path, "density", manifest_config(&cfg, extra), |w| {
            w.write_all(table.as_bytes())?;
            Ok(())
        })?;
    }
    out.emit(
        json!(series.iter().map(|(t, f)| json!({"t": t, "occupied_fraction": f})).collect::<Vec<_>>()),
        || table.clone(),
    );
    Ok(0)
}
