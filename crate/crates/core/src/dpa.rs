//! Discrete joint beam hopping and power allocation.
//!
//! One actor-critic agent per satellite picks its K cells and, for every
//! beam, one of a few power levels. It reuses the beam-hopping learner with
//! a per-satellite reward (throughput / fairness minus interference
//! penalty) instead of the global load-balance reward.

use crate::bh::{self, Ma3cConfig, RewardKind, TrainOutcome};
use crate::env::World;
use crate::error::Result;
use crate::exec::Execution;
use crate::predictor::Forecaster;

/// Power levels as fractions of the beam cap.
pub const LEVELS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// `base` with the discrete power head and per-satellite rewards.
pub fn config(base: Ma3cConfig) -> Ma3cConfig {
    Ma3cConfig {
        power_levels: LEVELS.to_vec(),
        reward: RewardKind::PerSatellite,
        ..base
    }
}

/// Number of distinct joint actions per satellite: `C choose K` cell sets
/// times `levels^K` power choices.
pub fn action_space_size(c: usize, k: usize, levels: usize) -> u128 {
    let mut choose: u128 = 1;
    for i in 0..k as u128 {
        choose = choose * (c as u128 - i) / (i + 1);
    }
    choose * (levels as u128).pow(k as u32)
}

pub fn train(world: &World, forecaster: &Forecaster, base: &Ma3cConfig, mode: Execution) -> Result<TrainOutcome> {
    bh::train(world, forecaster, &config(base.clone()), mode)
}
