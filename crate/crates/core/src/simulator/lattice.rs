use rustc_hash::FxHashMap as HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use super::streams::ClockStreams;
use super::tree::RateTree;
use super::{EventKind, Fate, SimOutcome, TrajectoryEvent};
use crate::error::{FlockError, Result};
use crate::model::{Configuration, ModelParams, Site};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Dynamics {
    /// Sites climb one individual at a time.
    Flock { phi: f64 },
    /// `phi = inf`: an empty site that receives a birth is full at once.
    Contact,
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    site: Site,
    internal: f64,
    birth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepResult {
    Event(TrajectoryEvent),
    /// No individuals left.
    Absorbed,
    /// The next event would fall after the horizon; the clock now reads the
    /// horizon.
    Horizon,
}

/// Event-driven simulator for the flock process (or its contact reduction)
/// with incremental rate bookkeeping: each event touches only the changed
/// site and, if its full/not-full status flipped, its 2d neighbours.
#[derive(Debug, Clone)]
pub struct LatticeSim {
    params: ModelParams,
    dynamics: Dynamics,
    states: HashMap<Site, u32>,
    slot_of: HashMap<Site, usize>,
    slots: Vec<Slot>,
    free: Vec<usize>,
    tree: RateTree,
    time: f64,
    rng: ChaCha8Rng,
    events: u64,
    extinct_at: Option<f64>,
}

impl LatticeSim {
    /// The flock process; `phi` must be finite.
    pub fn eta(params: &ModelParams, init: &Configuration, streams: &ClockStreams) -> Result<Self> {
        params.validate()?;
        let phi = params.finite_phi()?;
        init.validate(params)?;
        Ok(Self::build(params, Dynamics::Flock { phi }, init, streams))
    }

    /// Two-state dynamics `0 -> N` at rate `lambda * n_full`, `N -> 0` at
    /// rate 1. `params.phi` is not consulted.
    pub fn contact(params: &ModelParams, init: &Configuration, streams: &ClockStreams) -> Result<Self> {
        params.validate()?;
        init.validate(params)?;
        if let Some((site, state)) = init.iter().find(|&(_, s)| s != params.max_flock) {
            return Err(FlockError::InvalidInit(format!(
                "contact mode needs states in {{0, N}}; site {site} is in state {state}"
            )));
        }
        Ok(Self::build(params, Dynamics::Contact, init, streams))
    }

    fn build(params: &ModelParams, dynamics: Dynamics, init: &Configuration, streams: &ClockStreams) -> Self {
        let mut sim = LatticeSim {
            params: *params,
            dynamics,
            states: HashMap::with_capacity_and_hasher(init.occupied() * 2, Default::default()),
            slot_of: HashMap::default(),
            slots: Vec::new(),
            free: Vec::new(),
            tree: RateTree::new(),
            time: 0.0,
            rng: streams.solo_rng(),
            events: 0,
            extinct_at: if init.is_empty() { Some(0.0) } else { None },
        };
        for (site, state) in init.iter() {
            sim.states.insert(*site, state);
        }
        for (site, _) in init.iter() {
            sim.refresh(*site);
            sim.refresh_neighbors(*site);
        }
        sim
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn occupied(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, x: &Site) -> u32 {
        self.states.get(x).copied().unwrap_or(0)
    }

    pub fn configuration(&self) -> Configuration {
        self.states.iter().map(|(s, v)| (*s, *v)).collect()
    }

    /// Incrementally maintained total event rate.
    pub fn total_rate(&self) -> f64 {
        self.tree.total()
    }

    /// Total rate recomputed from the configuration alone.
    pub fn recomputed_rate(&self) -> f64 {
        let config = self.configuration();
        match self.dynamics {
            Dynamics::Flock { phi } => {
                let params = self.params.with_phi(crate::model::Phi::Finite(phi));
                crate::model::total_rate(&config, &params).expect("finite phi")
            }
            Dynamics::Contact => {
                let n = self.params.max_flock;
                let mut total = config.occupied() as f64;
                let mut empty = std::collections::BTreeSet::new();
                for (x, _) in config.iter() {
                    for dir in 0..self.params.coordination() {
                        let y = self.params.geometry.step(x, dir);
                        if config.get(&y) == 0 {
                            empty.insert(y);
                        }
                    }
                }
                for y in &empty {
                    total += self.params.lambda * crate::model::count_full(y, &config, &self.params) as f64;
                }
                debug_assert!(config.iter().all(|(_, s)| s == n));
                total
            }
        }
    }

    fn full_neighbors(&self, x: &Site) -> u32 {
        let n = self.params.max_flock;
        (0..self.params.coordination())
            .filter(|&dir| self.state(&self.params.geometry.step(x, dir)) == n)
            .count() as u32
    }

    fn rates_at(&self, x: &Site) -> (f64, f64, f64) {
        let n = self.params.max_flock;
        let state = self.state(x);
        let death = if state > 0 { 1.0 } else { 0.0 };
        let (internal, external) = match self.dynamics {
            Dynamics::Flock { phi } if state < n => {
                (state as f64 * phi, self.params.lambda * self.full_neighbors(x) as f64)
            }
            Dynamics::Contact if state == 0 => (0.0, self.params.lambda * self.full_neighbors(x) as f64),
            _ => (0.0, 0.0),
        };
        (internal, internal + external, death)
    }

    fn refresh(&mut self, x: Site) {
        let (internal, birth, death) = self.rates_at(&x);
        let total = birth + death;
        match self.slot_of.get(&x).copied() {
            Some(slot) if total == 0.0 => {
                self.slot_of.remove(&x);
                self.tree.set(slot, 0.0);
                self.free.push(slot);
            }
            Some(slot) => {
                self.slots[slot] = Slot { site: x, internal, birth };
                self.tree.set(slot, total);
            }
            None if total == 0.0 => {}
            None => {
                let entry = Slot { site: x, internal, birth };
                let slot = match self.free.pop() {
                    Some(s) => {
                        self.slots[s] = entry;
                        s
                    }
                    None => {
                        self.slots.push(entry);
                        self.slots.len() - 1
                    }
                };
                self.slot_of.insert(x, slot);
                self.tree.set(slot, total);
            }
        }
    }

    fn refresh_neighbors(&mut self, x: Site) {
        for dir in 0..self.params.coordination() {
            let y = self.params.geometry.step(&x, dir);
            self.refresh(y);
        }
    }

    fn set_state(&mut self, x: Site, new: u32) {
        let n = self.params.max_flock;
        let old = self.state(&x);
        if new == 0 {
            self.states.remove(&x);
        } else {
            self.states.insert(x, new);
        }
        self.refresh(x);
        if (old == n) != (new == n) {
            self.refresh_neighbors(x);
        }
    }

    /// Advances by one event unless that would pass `horizon`.
    pub fn step(&mut self, horizon: f64) -> StepResult {
        if self.states.is_empty() {
            return StepResult::Absorbed;
        }
        let total = self.tree.total();
        let wait: f64 = self.rng.sample::<f64, _>(Exp1) / total;
        if self.time + wait > horizon {
            self.time = horizon;
            return StepResult::Horizon;
        }
        self.time += wait;
        let u = self.rng.random::<f64>() * total;
        let (slot, r) = self.tree.find(u);
        let Slot { site, internal, birth, .. } = self.slots[slot];
        let state = self.state(&site);

        let (kind, new_state) = if r < birth {
            let grown = match self.dynamics {
                Dynamics::Flock { .. } => state + 1,
                Dynamics::Contact => self.params.max_flock,
            };
            if r < internal {
                (EventKind::InternalBirth, grown)
            } else {
                let k = ((r - internal) / self.params.lambda) as u32;
                (EventKind::ExternalBirth { source: self.kth_full_neighbor(&site, k) }, grown)
            }
        } else {
            (EventKind::Disaster, 0)
        };

        self.set_state(site, new_state);
        self.events += 1;
        if self.states.is_empty() {
            self.extinct_at = Some(self.time);
        }

        #[cfg(debug_assertions)]
        if self.events % 4096 == 0 {
            let scratch = self.recomputed_rate();
            debug_assert!(
                (scratch - self.tree.total()).abs() <= 1e-9 * scratch.max(1.0),
                "rate bookkeeping drift: {} vs {}",
                self.tree.total(),
                scratch
            );
        }

        StepResult::Event(TrajectoryEvent {
            time: self.time,
            site,
            kind,
            new_state,
        })
    }

    fn kth_full_neighbor(&self, x: &Site, k: u32) -> Site {
        let n = self.params.max_flock;
        let mut last = None;
        let full = (0..self.params.coordination())
            .map(|dir| self.params.geometry.step(x, dir))
            .filter(|y| self.state(y) == n);
        for (i, y) in full.enumerate() {
            last = Some(y);
            if i as u32 == k {
                break;
            }
        }
        last.expect("external birth without a full neighbour")
    }

    /// Runs events up to time `t`, feeding each to `observer`.
    pub fn advance_to<F: FnMut(&TrajectoryEvent)>(&mut self, t: f64, mut observer: F) {
        while let StepResult::Event(ev) = self.step(t) {
            observer(&ev);
        }
    }

    pub fn fate(&self) -> Fate {
        match self.extinct_at {
            Some(t) => Fate::Extinct(t),
            None => Fate::Censored,
        }
    }

    pub fn run<F: FnMut(&TrajectoryEvent)>(mut self, t_max: f64, observer: F) -> Result<SimOutcome> {
        if !(t_max > 0.0) {
            return Err(FlockError::InvalidHorizon(t_max));
        }
        self.advance_to(t_max, observer);
        Ok(SimOutcome {
            final_config: self.configuration(),
            fate: self.fate(),
            t_max,
            events: self.events,
        })
    }
}

/// Simulates the flock process from `init` until extinction or `t_max`.
pub fn run_eta<F: FnMut(&TrajectoryEvent)>(
    params: &ModelParams,
    init: &Configuration,
    t_max: f64,
    streams: &ClockStreams,
    observer: F,
) -> Result<SimOutcome> {
    if !(t_max > 0.0) {
        return Err(FlockError::InvalidHorizon(t_max));
    }
    LatticeSim::eta(params, init, streams)?.run(t_max, observer)
}

/// Simulates the `phi = inf` two-state process.
pub fn run_contact<F: FnMut(&TrajectoryEvent)>(
    params: &ModelParams,
    init: &Configuration,
    t_max: f64,
    streams: &ClockStreams,
    observer: F,
) -> Result<SimOutcome> {
    if !(t_max > 0.0) {
        return Err(FlockError::InvalidHorizon(t_max));
    }
    LatticeSim::contact(params, init, streams)?.run(t_max, observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Geometry, Phi};

    fn origin(state: u32) -> Configuration {
        Configuration::single(Site::origin(1), state)
    }

    #[test]
    fn empty_start_is_extinct_at_zero() {
        let p = ModelParams::sparse(1, 2, 1.0, 1.0).unwrap();
        let out = run_eta(&p, &Configuration::new(), 10.0, &ClockStreams::new(1), |_| {}).unwrap();
        assert_eq!(out.fate, Fate::Extinct(0.0));
        assert_eq!(out.events, 0);
    }

    #[test]
    fn pure_death_has_one_event() {
        let p = ModelParams::sparse(1, 3, 0.0, 0.0).unwrap();
        let mut log = Vec::new();
        let out = run_eta(&p, &origin(1), 1e6, &ClockStreams::new(3), |e| log.push(*e)).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].kind, EventKind::Disaster);
        assert_eq!(out.fate, Fate::Extinct(log[0].time));
    }

    #[test]
    fn rejects_bad_input() {
        let p = ModelParams::sparse(1, 2, 1.0, 1.0).unwrap();
        assert!(matches!(
            run_eta(&p, &origin(3), 1.0, &ClockStreams::new(0), |_| {}),
            Err(FlockError::InvalidInit(_))
        ));
        assert!(matches!(
            run_eta(&p, &origin(1), 0.0, &ClockStreams::new(0), |_| {}),
            Err(FlockError::InvalidHorizon(_))
        ));
        let inf = p.with_phi(Phi::Infinite);
        assert_eq!(
            run_eta(&inf, &origin(1), 1.0, &ClockStreams::new(0), |_| {}).unwrap_err(),
            FlockError::InfinitePhi
        );
        assert!(run_contact(&inf, &origin(1), 1.0, &ClockStreams::new(0), |_| {}).is_err());
    }

    #[test]
    fn contact_matches_eta_at_n_one() {
        let eta = ModelParams::sparse(1, 1, 1.8, 0.7).unwrap();
        let contact = eta.with_phi(Phi::Infinite);
        for seed in 0..20 {
            let s = ClockStreams::new(seed);
            let (mut a, mut b) = (Vec::new(), Vec::new());
            run_eta(&eta, &origin(1), 30.0, &s, |e| a.push(*e)).unwrap();
            run_contact(&contact, &origin(1), 30.0, &s, |e| b.push(*e)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn contact_zero_lambda_single_disaster() {
        let p = ModelParams::new(1, 4, 0.0, Phi::Infinite, Geometry::SparseUnbounded).unwrap();
        let mut log = Vec::new();
        run_contact(&p, &origin(4), 100.0, &ClockStreams::new(9), |e| log.push(*e)).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].kind, EventKind::Disaster);
    }

    #[test]
    fn incremental_rate_tracks_recomputation() {
        let p = ModelParams::new(2, 3, 1.3, Phi::Finite(0.6), Geometry::Torus { side: 6 }).unwrap();
        let init = Configuration::all_full(&p).unwrap();
        let mut sim = LatticeSim::eta(&p, &init, &ClockStreams::new(5)).unwrap();
        for _ in 0..3000 {
            if !matches!(sim.step(f64::INFINITY), StepResult::Event(_)) {
                break;
            }
            let scratch = sim.recomputed_rate();
            assert!((sim.total_rate() - scratch).abs() <= 1e-9 * scratch.max(1.0));
        }
    }

    #[test]
    fn external_births_name_a_full_source() {
        let p = ModelParams::sparse(2, 2, 2.0, 0.5).unwrap();
        let init = Configuration::single(Site::origin(2), 2);
        let mut seen = 0;
        for seed in 0..10 {
            let mut sim = LatticeSim::eta(&p, &init, &ClockStreams::new(seed)).unwrap();
            for _ in 0..2000 {
                let before = sim.configuration();
                match sim.step(50.0) {
                    StepResult::Event(ev) => {
                        if let EventKind::ExternalBirth { source } = ev.kind {
                            assert_eq!(before.get(&source), 2);
                            seen += 1;
                        }
                        assert_eq!(sim.state(&ev.site), ev.new_state);
                    }
                    _ => break,
                }
            }
        }
        assert!(seen > 0);
    }
}
