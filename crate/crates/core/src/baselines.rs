//! Non-learning comparison schemes.
//!
//! BH: random (R-BH), greedy on forecast arrivals (G-BH), queue-length
//! priority (Q-BH) and periodic round-robin (P-BH). PA: equal power (FP) and
//! demand-proportional power (DP). Ties always go to the lowest cell id.

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

use crate::alloc::{BhPattern, PowerAlloc};
use crate::env::{BhView, PaState, World};
use crate::numcore::sampling::top_k;
use crate::policy::{BhPolicy, PaPolicy};
use crate::scenario::Scenario;

/// Uniformly random K-subset of each satellite's coverage.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomBh;

pub fn rbh(world: &World, rng: &mut ChaCha8Rng) -> BhPattern {
    let c = world.cells_per_sat();
    let k = world.n_beams();
    let local: Vec<Vec<usize>> = (0..world.n_sats()).map(|_| sample(rng, c, k).into_vec()).collect();
    world.pattern_from_local(&local)
}

impl BhPolicy for RandomBh {
    fn decide(&mut self, world: &World, _view: &BhView, rng: &mut ChaCha8Rng) -> BhPattern {
        rbh(world, rng)
    }
}

/// Lights the K cells with the largest score in `scores[sat][local]`.
fn top_k_pattern(world: &World, scores: &[Vec<f64>]) -> BhPattern {
    let local: Vec<Vec<usize>> = scores.iter().map(|s| top_k(s, world.n_beams())).collect();
    world.pattern_from_local(&local)
}

/// Top-K cells by forecast arrivals.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyBh;

impl BhPolicy for GreedyBh {
    fn decide(&mut self, world: &World, view: &BhView, _rng: &mut ChaCha8Rng) -> BhPattern {
        top_k_pattern(world, &view.predicted)
    }
}

/// Top-K cells by queued backlog.
#[derive(Debug, Clone, Copy, Default)]
pub struct QueueBh;

impl BhPolicy for QueueBh {
    fn decide(&mut self, world: &World, view: &BhView, _rng: &mut ChaCha8Rng) -> BhPattern {
        top_k_pattern(world, &view.backlogs)
    }
}

/// Round-robin: slot `t` lights local positions `(t*K + j) mod C`, so every
/// cell is visited within `ceil(C / K)` slots.
#[derive(Debug, Clone, Copy, Default)]
pub struct PeriodicBh;

pub fn periodic_selection(slot: usize, c: usize, k: usize) -> Vec<usize> {
    let mut s: Vec<usize> = (0..k).map(|j| (slot * k + j) % c).collect();
    s.sort_unstable();
    s
}

impl BhPolicy for PeriodicBh {
    fn decide(&mut self, world: &World, view: &BhView, _rng: &mut ChaCha8Rng) -> BhPattern {
        let sel = periodic_selection(view.slot, world.cells_per_sat(), world.n_beams());
        world.pattern_from_local(&vec![sel; world.n_sats()])
    }
}

/// Equal split: every beam gets `min(P_tot / K, P_max)`.
pub fn fp(scenario: &Scenario) -> PowerAlloc {
    let k = scenario.n_beams;
    PowerAlloc::new(vec![(scenario.p_tot_w / k as f64).min(scenario.p_max_w); k])
}

/// Power shares proportional to demand. Beams whose share exceeds `P_max`
/// are capped and the surplus is handed to the rest in proportion to their
/// demand, repeating until nothing exceeds the cap. All-zero demand falls
/// back to the equal split.
pub fn dp(demands: &[f64], scenario: &Scenario) -> PowerAlloc {
    let k = demands.len();
    let (p_max, p_tot) = (scenario.p_max_w, scenario.p_tot_w);
    let total: f64 = demands.iter().sum();
    if total <= 0.0 {
        return PowerAlloc::new(vec![(p_tot / k as f64).min(p_max); k]);
    }
    let mut p = vec![0.0; k];
    let mut capped = vec![false; k];
    let mut budget = p_tot;
    loop {
        let weight: f64 = (0..k).filter(|&i| !capped[i]).map(|i| demands[i]).sum();
        if weight <= 0.0 {
            break;
        }
        let mut newly = false;
        for i in 0..k {
            if !capped[i] {
                p[i] = budget * demands[i] / weight;
                if p[i] > p_max {
                    newly = true;
                }
            }
        }
        if !newly {
            break;
        }
        for i in 0..k {
            if !capped[i] && p[i] > p_max {
                capped[i] = true;
                p[i] = p_max;
                budget -= p_max;
            }
        }
    }
    PowerAlloc::new(p)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FixedPower;

impl PaPolicy for FixedPower {
    fn allocate(&mut self, world: &World, states: &[PaState], _rng: &mut ChaCha8Rng) -> Vec<PowerAlloc> {
        states.iter().map(|_| fp(&world.scenario)).collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DemandPower;

impl PaPolicy for DemandPower {
    fn allocate(&mut self, world: &World, states: &[PaState], _rng: &mut ChaCha8Rng) -> Vec<PowerAlloc> {
        states.iter().map(|s| dp(&s.backlogs, &world.scenario)).collect()
    }
}
