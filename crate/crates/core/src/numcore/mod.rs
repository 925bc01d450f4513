//! Hand-differentiated numeric kernels shared by the learners.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod lstm;
pub mod mlp;
pub mod sampling;

pub use adam::Adam;
pub use lstm::Lstm;
pub use mlp::{Activation, Mlp};

/// Rescales `g` in place so its Euclidean norm is at most `max_norm`.
pub fn clip_norm(g: &mut [f64], max_norm: f64) {
    let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > max_norm {
        let k = max_norm / n;
        for x in g {
            *x *= k;
        }
    }
}

/// Element-wise mean of equally sized vectors, accumulated in slice order.
pub fn mean_params(sets: &[&[f64]]) -> Vec<f64> {
    let n = sets.len() as f64;
    let mut out = vec![0.0; sets.first().map_or(0, |s| s.len())];
    for s in sets {
        for (o, x) in out.iter_mut().zip(s.iter()) {
            *o += x;
        }
    }
    for o in &mut out {
        *o /= n;
    }
    out
}
