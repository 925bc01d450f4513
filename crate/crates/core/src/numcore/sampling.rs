//! Ordered sampling of K distinct indices from a categorical policy.
//!
//! Each draw is a softmax over the indices not yet taken, so the joint
//! log-probability is the sum of the conditional log-probabilities.

use rand::Rng;

/// Softmax over the entries where `available` is true; others get 0.
pub fn masked_softmax(logits: &[f64], available: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(available)
        .filter(|(_, &a)| a)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits
        .iter()
        .zip(available)
        .map(|(&l, &a)| if a { (l - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = p.iter().sum();
    for x in &mut p {
        *x /= z;
    }
    p
}

/// Draws `k` distinct indices in order; returns them with the joint log-prob.
pub fn sample_k_distinct(logits: &[f64], k: usize, rng: &mut impl Rng) -> (Vec<usize>, f64) {
    assert!(k <= logits.len(), "cannot draw {k} distinct items from {}", logits.len());
    let mut available = vec![true; logits.len()];
    let mut picks = Vec::with_capacity(k);
    let mut logp = 0.0;
    for _ in 0..k {
        let p = masked_softmax(logits, &available);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut choice = None;
        for (i, &pi) in p.iter().enumerate() {
            if !available[i] {
                continue;
            }
            acc += pi;
            choice = Some(i);
            if u < acc {
                break;
            }
        }
        let c = choice.expect("at least one index available");
        logp += p[c].ln();
        available[c] = false;
        picks.push(c);
    }
    (picks, logp)
}

/// Log-probability of drawing `order` in that sequence.
pub fn log_prob_ordered(logits: &[f64], order: &[usize]) -> f64 {
    let mut available = vec![true; logits.len()];
    let mut logp = 0.0;
    for &c in order {
        logp += masked_softmax(logits, &available)[c].ln();
        available[c] = false;
    }
    logp
}

/// Gradient of [`log_prob_ordered`] with respect to the logits.
pub fn grad_log_prob_ordered(logits: &[f64], order: &[usize]) -> Vec<f64> {
    let mut available = vec![true; logits.len()];
    let mut g = vec![0.0; logits.len()];
    for &c in order {
        let p = masked_softmax(logits, &available);
        for (gi, pi) in g.iter_mut().zip(&p) {
            *gi -= pi;
        }
        g[c] += 1.0;
        available[c] = false;
    }
    g
}

/// Greedy choice: the `k` largest logits, ties to the lowest index, in
/// descending logit order.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}
