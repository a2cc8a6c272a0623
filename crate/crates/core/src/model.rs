//! Parameters, lattice geometry, configurations and local transition rates.
//!
//! A site in state `i` (its flock size, `0..=N`) jumps to `i + 1` at rate
//! `i * phi + lambda * n_full`, where `n_full` counts nearest neighbours in
//! state `N`, and drops to `0` at rate 1 whenever `i >= 1`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{FlockError, Result};

/// Largest lattice dimension a [`Site`] can address.
pub const MAX_DIM: usize = 6;

/// A lattice point of Z^d (or of the torus (Z/LZ)^d).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    dim: u8,
    coords: [i32; MAX_DIM],
}

impl Site {
    pub fn new(coords: &[i32]) -> Self {
        assert!(
            !coords.is_empty() && coords.len() <= MAX_DIM,
            "site dimension must be in 1..={MAX_DIM}"
        );
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Site {
            dim: coords.len() as u8,
            coords: c,
        }
    }

    pub fn origin(dim: usize) -> Self {
        Site::new(&vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn coords(&self) -> &[i32] {
        &self.coords[..self.dim as usize]
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({self})")
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, c) in self.coords().iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for Site {
    type Err = FlockError;

    fn from_str(s: &str) -> Result<Self> {
        let coords = s
            .split(',')
            .map(|p| p.trim().parse::<i32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| FlockError::InvalidInit(format!("bad site {s:?}: {e}")))?;
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(FlockError::InvalidInit(format!(
                "site {s:?} must have 1..={MAX_DIM} coordinates"
            )));
        }
        Ok(Site::new(&coords))
    }
}

impl Serialize for Site {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Site {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Internal birth rate per individual. `Infinite` means a flock fills to `N`
/// the moment it is founded, which only the contact mode can simulate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phi {
    Finite(f64),
    Infinite,
}

impl Phi {
    pub fn finite(self) -> Option<f64> {
        match self {
            Phi::Finite(v) => Some(v),
            Phi::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Phi::Infinite)
    }
}

impl From<f64> for Phi {
    fn from(v: f64) -> Self {
        if v == f64::INFINITY {
            Phi::Infinite
        } else {
            Phi::Finite(v)
        }
    }
}

impl fmt::Display for Phi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phi::Finite(v) => write!(f, "{v}"),
            Phi::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Phi {
    type Err = FlockError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "+inf" => Ok(Phi::Infinite),
            other => other
                .parse::<f64>()
                .map(Phi::from)
                .map_err(|e| FlockError::InvalidParams(format!("bad phi {s:?}: {e}"))),
        }
    }
}

impl Serialize for Phi {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Phi::Finite(v) => s.serialize_f64(*v),
            Phi::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Phi {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Phi::from(v)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    /// Periodic box `[0, side)^d`.
    Torus { side: u32 },
    /// All of Z^d; only occupied sites are stored.
    SparseUnbounded,
}

impl Geometry {
    /// The `dir`-th nearest neighbour of `x`: axis `dir / 2`, `+1` for even
    /// `dir` and `-1` for odd.
    #[inline]
    pub fn step(&self, x: &Site, dir: usize) -> Site {
        let mut y = *x;
        let axis = dir / 2;
        let delta = if dir % 2 == 0 { 1 } else { -1 };
        match *self {
            Geometry::Torus { side } => {
                y.coords[axis] = (x.coords[axis] + delta).rem_euclid(side as i32);
            }
            Geometry::SparseUnbounded => y.coords[axis] += delta,
        }
        y
    }

    pub fn contains(&self, x: &Site) -> bool {
        match *self {
            Geometry::Torus { side } => x.coords().iter().all(|&c| c >= 0 && c < side as i32),
            Geometry::SparseUnbounded => true,
        }
    }

    /// Number of sites, `None` when unbounded.
    pub fn volume(&self, dim: usize) -> Option<u64> {
        match *self {
            Geometry::Torus { side } => Some((side as u64).pow(dim as u32)),
            Geometry::SparseUnbounded => None,
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Geometry::Torus { side } => write!(f, "torus:{side}"),
            Geometry::SparseUnbounded => f.write_str("sparse"),
        }
    }
}

impl FromStr for Geometry {
    type Err = FlockError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "sparse" || s == "unbounded" {
            return Ok(Geometry::SparseUnbounded);
        }
        if let Some(side) = s.strip_prefix("torus:") {
            let side = side
                .parse()
                .map_err(|e| FlockError::InvalidParams(format!("bad torus side {side:?}: {e}")))?;
            return Ok(Geometry::Torus { side });
        }
        Err(FlockError::InvalidParams(format!(
            "geometry must be `sparse` or `torus:<side>`, got {s:?}"
        )))
    }
}

/// The 2d nearest neighbours of `x`, in direction order (+e1, -e1, +e2, ...).
pub fn neighbors(x: &Site, geometry: &Geometry, dim: usize) -> Vec<Site> {
    (0..2 * dim).map(|dir| geometry.step(x, dir)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Lattice dimension.
    pub dim: usize,
    /// Maximum flock size per site.
    pub max_flock: u32,
    /// External birth rate per ordered neighbour pair.
    pub lambda: f64,
    pub phi: Phi,
    pub geometry: Geometry,
}

impl ModelParams {
    pub fn new(dim: usize, max_flock: u32, lambda: f64, phi: Phi, geometry: Geometry) -> Result<Self> {
        let p = ModelParams {
            dim,
            max_flock,
            lambda,
            phi,
            geometry,
        };
        p.validate()?;
        Ok(p)
    }

    /// Unbounded lattice with finite `phi`, the common case.
    pub fn sparse(dim: usize, max_flock: u32, lambda: f64, phi: f64) -> Result<Self> {
        Self::new(dim, max_flock, lambda, Phi::Finite(phi), Geometry::SparseUnbounded)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > MAX_DIM {
            return Err(FlockError::InvalidParams(format!(
                "dimension must be in 1..={MAX_DIM}, got {}",
                self.dim
            )));
        }
        if self.max_flock == 0 {
            return Err(FlockError::InvalidParams("N must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(FlockError::InvalidParams(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if let Phi::Finite(phi) = self.phi {
            if !(phi >= 0.0 && phi.is_finite()) {
                return Err(FlockError::InvalidParams(format!(
                    "phi must be non-negative or inf, got {phi}"
                )));
            }
        }
        if let Geometry::Torus { side } = self.geometry {
            if side < 3 {
                return Err(FlockError::InvalidParams(format!(
                    "torus side must be at least 3, got {side}"
                )));
            }
        }
        Ok(())
    }

    pub fn finite_phi(&self) -> Result<f64> {
        self.phi.finite().ok_or(FlockError::InfinitePhi)
    }

    pub fn coordination(&self) -> usize {
        2 * self.dim
    }

    pub fn with_max_flock(mut self, n: u32) -> Self {
        self.max_flock = n;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_phi(mut self, phi: Phi) -> Self {
        self.phi = phi;
        self
    }
}

/// A configuration eta: sites mapped to flock sizes. Empty sites are absent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration {
    occupancy: BTreeMap<Site, u32>,
}

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(site: Site, state: u32) -> Self {
        let mut c = Self::new();
        c.set(site, state);
        c
    }

    /// Every site of a torus in state `N`.
    pub fn all_full(params: &ModelParams) -> Result<Self> {
        let Geometry::Torus { side } = params.geometry else {
            return Err(FlockError::InvalidInit(
                "an all-N start needs torus geometry".into(),
            ));
        };
        let mut c = Self::new();
        for site in torus_sites(params.dim, side) {
            c.set(site, params.max_flock);
        }
        Ok(c)
    }

    #[inline]
    pub fn get(&self, x: &Site) -> u32 {
        self.occupancy.get(x).copied().unwrap_or(0)
    }

    pub fn set(&mut self, x: Site, state: u32) {
        if state == 0 {
            self.occupancy.remove(&x);
        } else {
            self.occupancy.insert(x, state);
        }
    }

    /// Occupied sites in coordinate order.
    pub fn iter(&self) -> impl Iterator<Item = (&Site, u32)> + '_ {
        self.occupancy.iter().map(|(s, &v)| (s, v))
    }

    pub fn occupied(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    pub fn individuals(&self) -> u64 {
        self.occupancy.values().map(|&v| v as u64).sum()
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        for (site, state) in self.iter() {
            if site.dim() != params.dim {
                return Err(FlockError::InvalidInit(format!(
                    "site {site} has dimension {}, expected {}",
                    site.dim(),
                    params.dim
                )));
            }
            if !params.geometry.contains(site) {
                return Err(FlockError::InvalidInit(format!(
                    "site {site} lies outside {}",
                    params.geometry
                )));
            }
            if state > params.max_flock {
                return Err(FlockError::InvalidInit(format!(
                    "site {site} in state {state} exceeds N = {}",
                    params.max_flock
                )));
            }
        }
        Ok(())
    }
}

impl FromIterator<(Site, u32)> for Configuration {
    fn from_iter<I: IntoIterator<Item = (Site, u32)>>(iter: I) -> Self {
        let mut c = Configuration::new();
        for (s, v) in iter {
            c.set(s, v);
        }
        c
    }
}

/// All points of `[0, side)^dim` in lexicographic order.
pub fn torus_sites(dim: usize, side: u32) -> impl Iterator<Item = Site> {
    let total = (side as u64).pow(dim as u32);
    (0..total).map(move |mut idx| {
        let mut coords = [0i32; MAX_DIM];
        for c in coords[..dim].iter_mut().rev() {
            *c = (idx % side as u64) as i32;
            idx /= side as u64;
        }
        Site::new(&coords[..dim])
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteRates {
    pub birth: f64,
    pub death: f64,
    /// Nearest neighbours in state `N`.
    pub n_full: u32,
}

pub(crate) fn count_full(x: &Site, config: &Configuration, params: &ModelParams) -> u32 {
    (0..params.coordination())
        .filter(|&dir| config.get(&params.geometry.step(x, dir)) == params.max_flock)
        .count() as u32
}

pub fn site_rates(x: &Site, config: &Configuration, params: &ModelParams) -> Result<SiteRates> {
    let phi = params.finite_phi()?;
    let state = config.get(x);
    let n_full = count_full(x, config, params);
    let birth = if state < params.max_flock {
        state as f64 * phi + params.lambda * n_full as f64
    } else {
        0.0
    };
    Ok(SiteRates {
        birth,
        death: if state >= 1 { 1.0 } else { 0.0 },
        n_full,
    })
}

/// Total jump rate of the configuration: occupied sites plus the empty
/// sites that receive births from a full neighbour.
pub fn total_rate(config: &Configuration, params: &ModelParams) -> Result<f64> {
    params.finite_phi()?;
    let mut sites: BTreeSet<Site> = BTreeSet::new();
    for (x, state) in config.iter() {
        sites.insert(*x);
        if state == params.max_flock {
            sites.extend(neighbors(x, &params.geometry, params.dim));
        }
    }
    let mut total = 0.0;
    for x in &sites {
        let r = site_rates(x, config, params)?;
        total += r.birth + r.death;
    }
    Ok(total)
}
