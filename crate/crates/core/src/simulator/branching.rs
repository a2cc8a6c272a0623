//! The dominating branching-like process: any number of flocks per site,
//! each capped at `N`. A flock grows at `i * phi + 2d * lambda`, dies at
//! rate 1, and every full flock founds new flocks on each neighbouring site at
//! rate `lambda`.

use std::collections::BTreeMap;

use rustc_hash::FxHashMap as HashMap;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::streams::ClockStreams;
use super::tree::RateTree;
use super::{EventKind, TrajectoryEvent};
use crate::error::{FlockError, Result};
use crate::model::{Geometry, ModelParams, Site};

/// Flock sizes per site (an unordered multiset, stored sorted).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchingConfig {
    flocks: BTreeMap<Site, Vec<u32>>,
}

impl BranchingConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(site: Site, size: u32) -> Self {
        let mut c = Self::new();
        c.add(site, size);
        c
    }

    /// One full flock on every site of the torus.
    pub fn all_full(params: &ModelParams) -> Result<Self> {
        let Geometry::Torus { side } = params.geometry else {
            return Err(FlockError::InvalidInit("an all-N start needs torus geometry".into()));
        };
        let mut c = Self::new();
        for site in crate::model::torus_sites(params.dim, side) {
            c.add(site, params.max_flock);
        }
        Ok(c)
    }

    pub fn add(&mut self, site: Site, size: u32) {
        let list = self.flocks.entry(site).or_default();
        let pos = list.partition_point(|&s| s <= size);
        list.insert(pos, size);
    }

    pub fn flocks_at(&self, site: &Site) -> &[u32] {
        self.flocks.get(site).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Site, &[u32])> + '_ {
        self.flocks.iter().map(|(s, v)| (s, v.as_slice()))
    }

    pub fn total_flocks(&self) -> usize {
        self.flocks.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.flocks.is_empty()
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        for (site, sizes) in self.iter() {
            if site.dim() != params.dim || !params.geometry.contains(site) {
                return Err(FlockError::InvalidInit(format!("site {site} is not on the lattice")));
            }
            if let Some(bad) = sizes.iter().find(|&&s| s == 0 || s > params.max_flock) {
                return Err(FlockError::InvalidInit(format!(
                    "flock of size {bad} at {site} is outside [1, {}]",
                    params.max_flock
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BranchingFate {
    Extinct(f64),
    Censored,
    /// More flocks than the cap; counted as survival.
    CapExceeded(f64),
}

impl BranchingFate {
    pub fn survived(&self) -> bool {
        !matches!(self, BranchingFate::Extinct(_))
    }
}

impl fmt::Display for BranchingFate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchingFate::Extinct(t) => write!(f, "EXTINCT({t})"),
            BranchingFate::Censored => f.write_str("CENSORED"),
            BranchingFate::CapExceeded(t) => write!(f, "CAP_EXCEEDED({t})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchingOutcome {
    pub final_config: BranchingConfig,
    pub fate: BranchingFate,
    pub t_max: f64,
    pub events: u64,
}

#[derive(Debug, Clone)]
struct SiteFlocks {
    /// `counts[i - 1]` = number of flocks of size `i`.
    counts: Vec<u32>,
    total: u32,
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    site: Site,
    growth: f64,
    death: f64,
}

pub struct BranchingSim {
    params: ModelParams,
    phi: f64,
    push: f64,
    sites: HashMap<Site, SiteFlocks>,
    slot_of: HashMap<Site, usize>,
    slots: Vec<Slot>,
    free: Vec<usize>,
    tree: RateTree,
    flocks: u64,
    time: f64,
    events: u64,
    rng: ChaCha8Rng,
}

impl BranchingSim {
    pub fn new(params: &ModelParams, init: &BranchingConfig, streams: &ClockStreams) -> Result<Self> {
        params.validate()?;
        let phi = params.finite_phi()?;
        init.validate(params)?;
        let mut sim = BranchingSim {
            params: *params,
            phi,
            push: params.coordination() as f64 * params.lambda,
            sites: HashMap::default(),
            slot_of: HashMap::default(),
            slots: Vec::new(),
            free: Vec::new(),
            tree: RateTree::new(),
            flocks: 0,
            time: 0.0,
            events: 0,
            rng: streams.solo_rng(),
        };
        let n = params.max_flock as usize;
        for (site, sizes) in init.iter() {
            let entry = sim.sites.entry(*site).or_insert_with(|| SiteFlocks {
                counts: vec![0; n],
                total: 0,
            });
            for &s in sizes {
                entry.counts[s as usize - 1] += 1;
                entry.total += 1;
                sim.flocks += 1;
            }
        }
        let occupied: Vec<Site> = init.iter().map(|(s, _)| *s).collect();
        for site in occupied {
            sim.refresh(site);
            sim.refresh_neighbors(site);
        }
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn total_flocks(&self) -> u64 {
        self.flocks
    }

    pub fn total_rate(&self) -> f64 {
        self.tree.total()
    }

    pub fn configuration(&self) -> BranchingConfig {
        let mut c = BranchingConfig::new();
        let mut sites: Vec<_> = self.sites.iter().collect();
        sites.sort_by_key(|(s, _)| **s);
        for (site, f) in sites {
            for (i, &count) in f.counts.iter().enumerate() {
                for _ in 0..count {
                    c.add(*site, i as u32 + 1);
                }
            }
        }
        c
    }

    fn full_at(&self, x: &Site) -> u32 {
        self.sites
            .get(x)
            .map(|f| f.counts[self.params.max_flock as usize - 1])
            .unwrap_or(0)
    }

    /// Size-N flocks among the 2d neighbours (each flock counts, not each site).
    fn full_nearby(&self, x: &Site) -> u32 {
        (0..self.params.coordination())
            .map(|dir| self.full_at(&self.params.geometry.step(x, dir)))
            .sum()
    }

    fn rates_at(&self, x: &Site) -> (f64, f64, f64) {
        let seed = self.params.lambda * self.full_nearby(x) as f64;
        let Some(f) = self.sites.get(x) else {
            return (0.0, 0.0, seed);
        };
        let n = self.params.max_flock as usize;
        let growth: f64 = f.counts[..n - 1]
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * ((i + 1) as f64 * self.phi + self.push))
            .sum();
        (growth, f.total as f64, seed)
    }

    fn refresh(&mut self, x: Site) {
        let (growth, death, seed) = self.rates_at(&x);
        let total = growth + death + seed;
        match self.slot_of.get(&x).copied() {
            Some(slot) if total == 0.0 => {
                self.slot_of.remove(&x);
                self.tree.set(slot, 0.0);
                self.free.push(slot);
            }
            Some(slot) => {
                self.slots[slot] = Slot { site: x, growth, death };
                self.tree.set(slot, total);
            }
            None if total == 0.0 => {}
            None => {
                let entry = Slot { site: x, growth, death };
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

    /// One event, or `None` when extinct or the next event is past `horizon`
    /// (the clock then reads `horizon`).
    pub fn step(&mut self, horizon: f64) -> Option<TrajectoryEvent> {
        if self.flocks == 0 {
            return None;
        }
        let total = self.tree.total();
        let wait: f64 = self.rng.sample::<f64, _>(Exp1) / total;
        if self.time + wait > horizon {
            self.time = horizon;
            return None;
        }
        self.time += wait;
        let u = self.rng.random::<f64>() * total;
        let (slot, r) = self.tree.find(u);
        let Slot { site, growth, death, .. } = self.slots[slot];
        let n = self.params.max_flock as usize;
        let full_before = self.full_at(&site);

        let (kind, new_state) = if r < growth {
            let f = self.sites.get_mut(&site).expect("occupied");
            let mut left = r;
            let mut idx = 0;
            for i in 0..n - 1 {
                let w = f.counts[i] as f64 * ((i + 1) as f64 * self.phi + self.push);
                idx = i;
                if left < w {
                    break;
                }
                left -= w;
            }
            while f.counts[idx] == 0 {
                idx -= 1;
            }
            f.counts[idx] -= 1;
            f.counts[idx + 1] += 1;
            (EventKind::InternalBirth, idx as u32 + 2)
        } else if r < growth + death {
            let f = self.sites.get_mut(&site).expect("occupied");
            let mut pick = ((r - growth) as u32).min(f.total - 1);
            let mut idx = 0;
            while pick >= f.counts[idx] {
                pick -= f.counts[idx];
                idx += 1;
            }
            f.counts[idx] -= 1;
            f.total -= 1;
            self.flocks -= 1;
            if f.total == 0 {
                self.sites.remove(&site);
            }
            (EventKind::Disaster, 0)
        } else {
            let sources: Vec<(Site, u32)> = (0..self.params.coordination())
                .map(|dir| self.params.geometry.step(&site, dir))
                .map(|y| (y, self.full_at(&y)))
                .filter(|&(_, c)| c > 0)
                .collect();
            let available: u32 = sources.iter().map(|&(_, c)| c).sum();
            let mut pick = (((r - growth - death) / self.params.lambda) as u32).min(available - 1);
            let mut source = sources[0].0;
            for &(y, c) in &sources {
                source = y;
                if pick < c {
                    break;
                }
                pick -= c;
            }
            let f = self.sites.entry(site).or_insert_with(|| SiteFlocks {
                counts: vec![0; n],
                total: 0,
            });
            f.counts[0] += 1;
            f.total += 1;
            self.flocks += 1;
            (EventKind::ExternalBirth { source }, 1)
        };

        self.refresh(site);
        if self.full_at(&site) != full_before {
            self.refresh_neighbors(site);
        }
        self.events += 1;
        Some(TrajectoryEvent {
            time: self.time,
            site,
            kind,
            new_state,
        })
    }

    pub fn run<F: FnMut(&TrajectoryEvent)>(
        mut self,
        t_max: f64,
        flock_cap: u64,
        mut observer: F,
    ) -> Result<BranchingOutcome> {
        if !(t_max > 0.0) {
            return Err(FlockError::InvalidHorizon(t_max));
        }
        let mut fate = if self.flocks == 0 {
            BranchingFate::Extinct(0.0)
        } else if self.flocks > flock_cap {
            BranchingFate::CapExceeded(0.0)
        } else {
            BranchingFate::Censored
        };
        if fate == BranchingFate::Censored {
            while let Some(ev) = self.step(t_max) {
                observer(&ev);
                if self.flocks == 0 {
                    fate = BranchingFate::Extinct(self.time);
                    break;
                }
                if self.flocks > flock_cap {
                    fate = BranchingFate::CapExceeded(self.time);
                    break;
                }
            }
        }
        Ok(BranchingOutcome {
            final_config: self.configuration(),
            fate,
            t_max,
            events: self.events,
        })
    }
}

/// Simulates the branching process until extinction, `t_max`, or more than
/// `flock_cap` flocks.
pub fn run_branching<F: FnMut(&TrajectoryEvent)>(
    params: &ModelParams,
    init: &BranchingConfig,
    t_max: f64,
    flock_cap: u64,
    streams: &ClockStreams,
    observer: F,
) -> Result<BranchingOutcome> {
    if flock_cap == 0 {
        return Err(FlockError::InvalidParams("flock cap must be at least 1".into()));
    }
    if !(t_max > 0.0) {
        return Err(FlockError::InvalidHorizon(t_max));
    }
    BranchingSim::new(params, init, streams)?.run(t_max, flock_cap, observer)
}
