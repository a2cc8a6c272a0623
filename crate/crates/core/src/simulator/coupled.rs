//! Runs driven directly by the graphical construction: several processes
//! read the same Poisson clocks, each applying an arrival according to its
//! own state. Only clocks that can change some process are kept in the
//! event queue; skipped arrivals would have been no-ops.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rustc_hash::FxHashMap as HashMap;

use super::streams::{ClockFamily, ClockKey, ClockStreams, PoissonClock};
use super::{EventKind, Fate, TrajectoryEvent};
use crate::error::{FlockError, Result};
use crate::model::{Configuration, Geometry, ModelParams, Site};

/// One process driven by the shared clocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessSpec {
    /// Flock process with cap `max_flock`; reads `F^{x,i}` for `i < max_flock`.
    Flock { max_flock: u32 },
    /// `phi = inf` process: a birth onto an empty site fills it to
    /// `max_flock`. Growth clocks are ignored.
    Contact { max_flock: u32 },
}

impl ProcessSpec {
    fn cap(&self) -> u32 {
        match *self {
            ProcessSpec::Flock { max_flock } | ProcessSpec::Contact { max_flock } => max_flock,
        }
    }

    fn reads_growth(&self, state: u32) -> bool {
        matches!(*self, ProcessSpec::Flock { max_flock } if state >= 1 && state < max_flock)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledOutcome {
    pub fates: Vec<Fate>,
    pub finals: Vec<Configuration>,
    /// State changes per process.
    pub events: Vec<u64>,
    /// Clock arrivals after which the ordering check failed.
    pub violation_count: u64,
    /// Per-process event logs, when recording was requested.
    pub trajectories: Option<Vec<Vec<TrajectoryEvent>>>,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    time: f64,
    key: ClockKey,
    gen: u64,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then_with(|| self.key.cmp(&other.key))
            .then_with(|| self.gen.cmp(&other.gen))
    }
}

struct ClockEntry {
    clock: PoissonClock,
    scheduled: bool,
    gen: u64,
}

type SiteCheck<'a> = &'a dyn Fn(&[u32]) -> bool;

struct Engine<'a> {
    dim: usize,
    geometry: Geometry,
    lambda: f64,
    phi: f64,
    procs: Vec<ProcessSpec>,
    states: Vec<HashMap<Site, u32>>,
    clocks: HashMap<ClockKey, ClockEntry>,
    armed: HashMap<Site, Vec<ClockKey>>,
    heap: BinaryHeap<Reverse<Pending>>,
    streams: ClockStreams,
    time: f64,
    events: Vec<u64>,
    extinct_at: Vec<Option<f64>>,
    logs: Option<Vec<Vec<TrajectoryEvent>>>,
    check: Option<SiteCheck<'a>>,
    violations: u64,
    arrivals: u64,
}

impl<'a> Engine<'a> {
    fn state(&self, p: usize, x: &Site) -> u32 {
        self.states[p].get(x).copied().unwrap_or(0)
    }

    fn rate(&self, key: &ClockKey) -> f64 {
        match key.family {
            ClockFamily::Birth => self.lambda,
            ClockFamily::Growth => key.index as f64 * self.phi,
            ClockFamily::Disaster => 1.0,
        }
    }

    fn desired(&self, x: &Site) -> Vec<ClockKey> {
        let mut keys = Vec::new();
        let mut occupied = false;
        let mut some_full = false;
        for (p, spec) in self.procs.iter().enumerate() {
            let s = self.state(p, x);
            occupied |= s >= 1;
            some_full |= s >= 1 && s == spec.cap();
            if self.phi > 0.0 && spec.reads_growth(s) {
                let k = ClockKey::growth(*x, s);
                if !keys.contains(&k) {
                    keys.push(k);
                }
            }
        }
        if occupied {
            keys.push(ClockKey::disaster(*x));
        }
        if some_full && self.lambda > 0.0 {
            // L^{x,y} matters only if some process has x full and y below cap.
            for dir in 0..2 * self.dim {
                let y = self.geometry.step(x, dir);
                let live = self.procs.iter().enumerate().any(|(p, spec)| {
                    let cap = spec.cap();
                    self.state(p, x) == cap && self.state(p, &y) < cap
                });
                if live {
                    keys.push(ClockKey::birth(*x, dir));
                }
            }
        }
        keys
    }

    fn sync(&mut self, x: Site) {
        let old = self.armed.remove(&x).unwrap_or_default();
        let want = self.desired(&x);
        for k in &old {
            if !want.contains(k) {
                if let Some(e) = self.clocks.get_mut(k) {
                    e.scheduled = false;
                    e.gen += 1;
                }
            }
        }
        for k in &want {
            let rate = self.rate(k);
            let e = self.clocks.entry(*k).or_insert_with(|| ClockEntry {
                clock: PoissonClock::new(*k, rate),
                scheduled: false,
                gen: 0,
            });
            if !e.scheduled {
                let t = e.clock.next_after(&self.streams, self.time);
                e.scheduled = true;
                self.heap.push(Reverse(Pending { time: t, key: *k, gen: e.gen }));
            }
        }
        if !want.is_empty() {
            self.armed.insert(x, want);
        }
    }

    fn set(&mut self, p: usize, x: Site, new: u32, kind: EventKind) {
        if new == 0 {
            self.states[p].remove(&x);
        } else {
            self.states[p].insert(x, new);
        }
        self.events[p] += 1;
        if let Some(logs) = self.logs.as_mut() {
            logs[p].push(TrajectoryEvent {
                time: self.time,
                site: x,
                kind,
                new_state: new,
            });
        }
        if self.states[p].is_empty() && self.extinct_at[p].is_none() {
            self.extinct_at[p] = Some(self.time);
        }
    }

    fn apply(&mut self, key: ClockKey) -> Option<Site> {
        let x = key.site;
        let mut touched = None;
        for p in 0..self.procs.len() {
            let spec = self.procs[p];
            let cap = spec.cap();
            let sx = self.state(p, &x);
            match key.family {
                ClockFamily::Disaster if sx > 0 => {
                    self.set(p, x, 0, EventKind::Disaster);
                    touched = Some(x);
                }
                ClockFamily::Growth if spec.reads_growth(sx) && sx == key.index => {
                    self.set(p, x, sx + 1, EventKind::InternalBirth);
                    touched = Some(x);
                }
                ClockFamily::Birth if sx == cap => {
                    let y = self.geometry.step(&x, key.index as usize);
                    let sy = self.state(p, &y);
                    if sy < cap {
                        let new = match spec {
                            ProcessSpec::Flock { .. } => sy + 1,
                            ProcessSpec::Contact { .. } => cap,
                        };
                        self.set(p, y, new, EventKind::ExternalBirth { source: x });
                        touched = Some(y);
                    }
                }
                _ => {}
            }
        }
        touched
    }

    fn site_ok(&self, x: &Site) -> bool {
        match self.check {
            Some(check) => {
                let column: Vec<u32> = (0..self.procs.len()).map(|p| self.state(p, x)).collect();
                check(&column)
            }
            None => true,
        }
    }

    fn sweep_ok(&self) -> bool {
        if self.check.is_none() {
            return true;
        }
        self.states
            .iter()
            .flat_map(|m| m.keys())
            .all(|x| self.site_ok(x))
    }

    fn run(&mut self, t_max: f64) {
        while let Some(Reverse(next)) = self.heap.pop() {
            let live = self
                .clocks
                .get(&next.key)
                .is_some_and(|e| e.scheduled && e.gen == next.gen);
            if !live {
                continue;
            }
            if next.time > t_max {
                break;
            }
            self.time = next.time;
            self.clocks.get_mut(&next.key).expect("live clock").scheduled = false;
            self.arrivals += 1;

            let touched = self.apply(next.key);
            if let Some(y) = touched {
                // Birth clocks of y's neighbours depend on y's state.
                self.sync(y);
                for dir in 0..2 * self.dim {
                    self.sync(self.geometry.step(&y, dir));
                }
                let ok = self.site_ok(&y) && (self.arrivals % 256 != 0 || self.sweep_ok());
                if !ok {
                    self.violations += 1;
                }
            } else {
                self.sync(next.key.site);
            }
            if self.extinct_at.iter().all(Option::is_some) {
                break;
            }
        }
        if !self.sweep_ok() {
            self.violations += 1;
        }
    }
}

/// Drives `procs` from one set of clocks. `base` supplies the lattice,
/// `lambda` and the growth rate `phi` shared by all flock processes; its
/// `max_flock` is not used. `check` is evaluated on the column of per-process
/// states at every site an arrival changes.
pub fn run_graphical(
    base: &ModelParams,
    procs: &[ProcessSpec],
    init: &[Configuration],
    t_max: f64,
    streams: &ClockStreams,
    record: bool,
    check: Option<SiteCheck<'_>>,
) -> Result<CoupledOutcome> {
    base.validate()?;
    if !(t_max > 0.0) {
        return Err(FlockError::InvalidHorizon(t_max));
    }
    if procs.len() != init.len() || procs.is_empty() {
        return Err(FlockError::InvalidParams("one initial configuration per process".into()));
    }
    let uses_growth = procs.iter().any(|p| matches!(p, ProcessSpec::Flock { .. }));
    let phi = match (uses_growth, base.phi.finite()) {
        (true, None) => return Err(FlockError::InfinitePhi),
        (_, phi) => phi.unwrap_or(0.0),
    };
    for (spec, c) in procs.iter().zip(init) {
        if spec.cap() == 0 {
            return Err(FlockError::InvalidParams("N must be at least 1".into()));
        }
        c.validate(&base.with_max_flock(spec.cap()))?;
        if matches!(spec, ProcessSpec::Contact { .. }) && c.iter().any(|(_, s)| s != spec.cap()) {
            return Err(FlockError::InvalidInit("contact mode needs states in {0, N}".into()));
        }
    }

    let mut engine = Engine {
        dim: base.dim,
        geometry: base.geometry,
        lambda: base.lambda,
        phi,
        procs: procs.to_vec(),
        states: init
            .iter()
            .map(|c| c.iter().map(|(s, v)| (*s, v)).collect())
            .collect(),
        clocks: HashMap::default(),
        armed: HashMap::default(),
        heap: BinaryHeap::new(),
        streams: *streams,
        time: 0.0,
        events: vec![0; procs.len()],
        extinct_at: init
            .iter()
            .map(|c| if c.is_empty() { Some(0.0) } else { None })
            .collect(),
        logs: record.then(|| vec![Vec::new(); procs.len()]),
        check,
        violations: 0,
        arrivals: 0,
    };
    let mut sites: Vec<Site> = init.iter().flat_map(|c| c.iter().map(|(s, _)| *s)).collect();
    sites.sort();
    sites.dedup();
    for s in sites {
        engine.sync(s);
    }
    if !engine.sweep_ok() {
        engine.violations += 1;
    }
    engine.run(t_max);

    Ok(CoupledOutcome {
        fates: engine
            .extinct_at
            .iter()
            .map(|e| e.map_or(Fate::Censored, Fate::Extinct))
            .collect(),
        finals: engine
            .states
            .iter()
            .map(|m| m.iter().map(|(s, v)| (*s, *v)).collect())
            .collect(),
        events: engine.events,
        violation_count: engine.violations,
        trajectories: engine.logs,
    })
}

/// Flock processes with caps `n1 < n2` and common `lambda`, `phi`, both
/// started from one individual at the origin, checking
/// `min(eta2(x), n1) <= eta1(x)` after every arrival.
pub fn run_coupled_pair(
    params: &ModelParams,
    n1: u32,
    n2: u32,
    t_max: f64,
    streams: &ClockStreams,
    record: bool,
) -> Result<CoupledOutcome> {
    if n1 == 0 || n1 >= n2 {
        return Err(FlockError::InvalidParams(format!(
            "coupled pair needs 1 <= N1 < N2, got N1 = {n1}, N2 = {n2}"
        )));
    }
    let start = Configuration::single(Site::origin(params.dim), 1);
    let check = move |col: &[u32]| col[1].min(n1) <= col[0];
    run_graphical(
        params,
        &[ProcessSpec::Flock { max_flock: n1 }, ProcessSpec::Flock { max_flock: n2 }],
        &[start.clone(), start],
        t_max,
        streams,
        record,
        Some(&check),
    )
}

/// The finite-`phi` flock process (first) against the `phi = inf` process
/// (second) from the same start, checking the second dominates site by site.
pub fn run_phi_coupled_pair(
    params: &ModelParams,
    init: &Configuration,
    t_max: f64,
    streams: &ClockStreams,
    record: bool,
) -> Result<CoupledOutcome> {
    let n = params.max_flock;
    let check = |col: &[u32]| col[1] >= col[0];
    run_graphical(
        params,
        &[ProcessSpec::Flock { max_flock: n }, ProcessSpec::Contact { max_flock: n }],
        &[init.clone(), init.clone()],
        t_max,
        streams,
        record,
        Some(&check),
    )
}
