use rand::Rng;

use super::streams::ClockStreams;
use crate::error::Result;
use crate::model::ModelParams;

/// Number of founders produced by one isolated founder of the branching
/// process, drawn from the embedded jump chain: at size `i < N` the flock
/// grows before dying with probability `g / (1 + g)`, `g = i*phi + 2d*lambda`;
/// once full, each further birth beats the disaster with probability
/// `2d*lambda / (1 + 2d*lambda)`.
pub fn founder_trial(params: &ModelParams, streams: &ClockStreams) -> Result<u64> {
    founder_trial_with(params, &mut streams.solo_rng())
}

pub fn founder_trial_with<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R) -> Result<u64> {
    let phi = params.finite_phi()?;
    let push = params.coordination() as f64 * params.lambda;
    for i in 1..params.max_flock {
        let growth = i as f64 * phi + push;
        if rng.random::<f64>() * (1.0 + growth) >= growth {
            return Ok(0);
        }
    }
    let mut births = 0;
    while rng.random::<f64>() * (1.0 + push) < push {
        births += 1;
    }
    Ok(births)
}
