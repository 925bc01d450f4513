//! Decision interfaces for the two layers.

use rand_chacha::ChaCha8Rng;

use crate::alloc::{BhPattern, PowerAlloc};
use crate::env::{BhView, PaState, World};

/// Chooses which cells every satellite lights in a slot.
pub trait BhPolicy: Send {
    fn decide(&mut self, world: &World, view: &BhView, rng: &mut ChaCha8Rng) -> BhPattern;
}

/// Chooses per-beam powers for every satellite once cells are fixed.
pub trait PaPolicy: Send {
    fn allocate(&mut self, world: &World, states: &[PaState], rng: &mut ChaCha8Rng) -> Vec<PowerAlloc>;
}

/// A complete per-slot controller: cells first, then powers for them.
pub trait SlotPolicy: Send {
    fn decide(&mut self, world: &World, view: &BhView, rng: &mut ChaCha8Rng) -> BhPattern;
    fn allocate(
        &mut self,
        world: &World,
        pattern: &BhPattern,
        states: &[PaState],
        rng: &mut ChaCha8Rng,
    ) -> Vec<PowerAlloc>;
}

/// Independent BH and PA policies run back to back.
#[derive(Debug, Clone)]
pub struct Composed<B, P> {
    pub bh: B,
    pub pa: P,
}

impl<B: BhPolicy, P: PaPolicy> SlotPolicy for Composed<B, P> {
    fn decide(&mut self, world: &World, view: &BhView, rng: &mut ChaCha8Rng) -> BhPattern {
        self.bh.decide(world, view, rng)
    }

    fn allocate(
        &mut self,
        world: &World,
        _pattern: &BhPattern,
        states: &[PaState],
        rng: &mut ChaCha8Rng,
    ) -> Vec<PowerAlloc> {
        self.pa.allocate(world, states, rng)
    }
}

impl<T: BhPolicy + ?Sized> BhPolicy for Box<T> {
    fn decide(&mut self, world: &World, view: &BhView, rng: &mut ChaCha8Rng) -> BhPattern {
        (**self).decide(world, view, rng)
    }
}

impl<T: PaPolicy + ?Sized> PaPolicy for Box<T> {
    fn allocate(&mut self, world: &World, states: &[PaState], rng: &mut ChaCha8Rng) -> Vec<PowerAlloc> {
        (**self).allocate(world, states, rng)
    }
}

/// Maps per-beam fractions of the beam cap to feasible powers: scale by
/// `p_max`, then shrink uniformly if the total exceeds `p_tot`.
pub fn project_powers(fractions: &[f64], p_max: f64, p_tot: f64) -> PowerAlloc {
    let mut p: Vec<f64> = fractions.iter().map(|f| f.clamp(0.0, 1.0) * p_max).collect();
    let total: f64 = p.iter().sum();
    if total > p_tot {
        let k = p_tot / total;
        for x in &mut p {
            *x = (*x * k).min(p_max);
        }
    }
    PowerAlloc::new(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_examples() {
        let p = project_powers(&[1.0, 0.9, 0.8, 0.7], 1000.0, 7943.28);
        assert_eq!(p.powers_w, vec![1000.0, 900.0, 800.0, 700.0]);
        let p = project_powers(&[0.8; 4], 1000.0, 2000.0);
        for w in &p.powers_w {
            assert!((w - 500.0).abs() < 1e-9);
        }
        assert!(p.is_feasible(1000.0, 2000.0));
        let again = project_powers(&p.powers_w.iter().map(|w| w / 1000.0).collect::<Vec<_>>(), 1000.0, 2000.0);
        assert_eq!(again, p);
    }
}
