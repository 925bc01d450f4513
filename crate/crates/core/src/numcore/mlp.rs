use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a = f(z)`.
    fn deriv_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Dense feed-forward network with all weights in one flat vector.
///
/// Layer `l` stores its weight matrix row-major (`out x in`) followed by its
/// bias. Keeping parameters flat lets optimizers, averaging and soft updates
/// treat every network the same way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub params: Vec<f64>,
}

/// Layer inputs and outputs from a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds at least the input")
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(sizes: &[usize], activations: &[Activation], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        assert_eq!(activations.len(), sizes.len() - 1, "one activation per layer");
        let mut params = Vec::with_capacity(Self::count(sizes));
        for w in sizes.windows(2) {
            let (i, o) = (w[0], w[1]);
            let limit = (6.0 / (i + o) as f64).sqrt();
            params.extend((0..i * o).map(|_| rng.random_range(-limit..limit)));
            params.extend(std::iter::repeat_n(0.0, o));
        }
        Self {
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
            params,
        }
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Scales the last layer's weights, e.g. to start a policy near uniform.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let n = self.sizes.len();
        let (i, o) = (self.sizes[n - 2], self.sizes[n - 1]);
        let start = self.params.len() - (i * o + o);
        for w in &mut self.params[start..start + i * o] {
            *w *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn forward(&self, input: &[f64]) -> MlpCache {
        assert_eq!(input.len(), self.sizes[0], "input size mismatch");
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(input.to_vec());
        let mut off = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (ni, no) = (w[0], w[1]);
            let weights = &self.params[off..off + ni * no];
            let bias = &self.params[off + ni * no..off + ni * no + no];
            let x = &acts[l];
            let act = self.activations[l];
            let out: Vec<f64> = (0..no)
                .map(|r| {
                    let row = &weights[r * ni..(r + 1) * ni];
                    act.apply(dot(row, x) + bias[r])
                })
                .collect();
            acts.push(out);
            off += ni * no + no;
        }
        MlpCache { acts }
    }

    pub fn predict(&self, input: &[f64]) -> Vec<f64> {
        self.forward(input).acts.pop().unwrap()
    }

    /// Accumulates `dL/dparams` into `grads` given `dL/doutput`; returns `dL/dinput`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size mismatch");
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta: Vec<f64> = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (ni, no) = (self.sizes[l], self.sizes[l + 1]);
            let out = &cache.acts[l + 1];
            let x = &cache.acts[l];
            let act = self.activations[l];
            for (d, &a) in delta.iter_mut().zip(out) {
                *d *= act.deriv_from_output(a);
            }
            let off = offsets[l];
            let weights = &self.params[off..off + ni * no];
            {
                let (gw, gb) = grads[off..off + ni * no + no].split_at_mut(ni * no);
                for r in 0..no {
                    let d = delta[r];
                    if d == 0.0 {
                        continue;
                    }
                    gb[r] += d;
                    for (g, &xi) in gw[r * ni..(r + 1) * ni].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            let mut prev = vec![0.0; ni];
            for r in 0..no {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                for (p, &w) in prev.iter_mut().zip(&weights[r * ni..(r + 1) * ni]) {
                    *p += d * w;
                }
            }
            delta = prev;
        }
        delta
    }

    /// `dL/dinput` only, without touching parameter gradients.
    pub fn input_grad(&self, cache: &MlpCache, grad_out: &[f64]) -> Vec<f64> {
        let mut off = self.params.len();
        let mut delta: Vec<f64> = grad_out.to_vec();
        for l in (0..self.sizes.len() - 1).rev() {
            let (ni, no) = (self.sizes[l], self.sizes[l + 1]);
            off -= ni * no + no;
            let act = self.activations[l];
            for (d, &a) in delta.iter_mut().zip(&cache.acts[l + 1]) {
                *d *= act.deriv_from_output(a);
            }
            let weights = &self.params[off..off + ni * no];
            let mut prev = vec![0.0; ni];
            for (r, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    for (p, &w) in prev.iter_mut().zip(&weights[r * ni..(r + 1) * ni]) {
                        *p += d * w;
                    }
                }
            }
            delta = prev;
        }
        delta
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::gradcheck::{central_diff, rel_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::new(&[3, 3], &[Activation::Linear], &mut rng);
        net.params.fill(0.0);
        for i in 0..3 {
            net.params[i * 3 + i] = 1.0;
        }
        assert_eq!(net.predict(&[1.0, -2.0, 0.5]), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn zero_weights_give_final_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::new(&[2, 4, 2], &[Activation::Tanh, Activation::Linear], &mut rng);
        net.params.fill(0.0);
        let n = net.n_params();
        net.params[n - 2] = 0.3;
        net.params[n - 1] = -0.7;
        assert_eq!(net.predict(&[5.0, 6.0]), vec![0.3, -0.7]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for acts in [
            [Activation::Tanh, Activation::Linear],
            [Activation::Sigmoid, Activation::Tanh],
        ] {
            let net = Mlp::new(&[4, 8, 2], &acts, &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w = [0.7, -1.3];
            let mut g = vec![0.0; net.n_params()];
            let cache = net.forward(&x);
            let gx = net.backward(&cache, &w, &mut g);
            let numeric = central_diff(
                |p| {
                    let n = Mlp { params: p.to_vec(), ..net.clone() };
                    dot(&n.predict(&x), &w)
                },
                &net.params,
                1e-5,
            );
            assert!(rel_error(&g, &numeric) < 1e-6);
            let numeric_x = central_diff(|xx| dot(&net.predict(xx), &w), &x, 1e-5);
            assert!(rel_error(&gx, &numeric_x) < 1e-6);
            assert_eq!(net.input_grad(&cache, &w), gx);
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
