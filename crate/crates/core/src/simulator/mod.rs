//! Exact continuous-time simulation of the flock process, its two-state
//! (`phi = inf`) contact reduction, the dominating multi-flock branching
//! process, and coupled runs driven by shared Poisson clocks.

mod branching;
mod coupled;
mod founder;
mod lattice;
pub mod streams;
mod tree;

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::model::Site;

pub use branching::{run_branching, BranchingConfig, BranchingFate, BranchingOutcome, BranchingSim};
pub use coupled::{
    run_coupled_pair, run_graphical, run_phi_coupled_pair, CoupledOutcome, ProcessSpec,
};
pub use founder::{founder_trial, founder_trial_with};
pub use lattice::{run_contact, run_eta, LatticeSim, StepResult};
pub use streams::{ClockFamily, ClockKey, ClockStreams, PoissonClock};

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Fate {
    /// Every site empty at this time.
    Extinct(f64),
    /// Still alive at the horizon.
    Censored,
}

impl Fate {
    pub fn survived(&self) -> bool {
        matches!(self, Fate::Censored)
    }

    pub fn extinction_time(&self) -> Option<f64> {
        match self {
            Fate::Extinct(t) => Some(*t),
            Fate::Censored => None,
        }
    }
}

impl fmt::Display for Fate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fate::Extinct(t) => write!(f, "EXTINCT({t})"),
            Fate::Censored => f.write_str("CENSORED"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    InternalBirth,
    ExternalBirth { source: Site },
    Disaster,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvent {
    pub time: f64,
    pub site: Site,
    pub kind: EventKind,
    /// Site state after the event (for the branching process: the size of
    /// the affected flock, 0 if it died).
    pub new_state: u32,
}

/// Column order of the event log.
pub const EVENT_LOG_FIELDS: [&str; 4] = ["time", "site", "kind", "new_state"];

impl fmt::Display for TrajectoryEvent {
    /// One tab-separated event-log record: `time site kind new_state`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            EventKind::InternalBirth => "INTERNAL_BIRTH".to_string(),
            EventKind::ExternalBirth { source } => format!("EXTERNAL_BIRTH({source})"),
            EventKind::Disaster => "DISASTER".to_string(),
        };
        write!(f, "{}\t{}\t{}\t{}", self.time, self.site, kind, self.new_state)
    }
}

/// Writes newline-delimited event records.
pub struct EventLog<W: Write> {
    out: W,
    error: Option<io::Error>,
}

impl<W: Write> EventLog<W> {
    pub fn new(out: W) -> Self {
        EventLog { out, error: None }
    }

    pub fn record(&mut self, ev: &TrajectoryEvent) {
        if self.error.is_none() {
            if let Err(e) = writeln!(self.out, "{ev}") {
                self.error = Some(e);
            }
        }
    }

    pub fn finish(mut self) -> io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Result of one lattice run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub final_config: crate::model::Configuration,
    pub fate: Fate,
    pub t_max: f64,
    pub events: u64,
}
