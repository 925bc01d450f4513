use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{dot, sigmoid};

/// Single-layer LSTM with a linear read-out, parameters in one flat vector.
///
/// Layout: input weights `W` (4H x I), recurrent weights `U` (4H x H), gate
/// bias `b` (4H), read-out `W_y` (O x H), read-out bias `b_y` (O). Gate
/// blocks are ordered forget, input, candidate, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub params: Vec<f64>,
}

/// Intermediate values of one step, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    f: Vec<f64>,
    i: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StepOut {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub y: Vec<f64>,
    pub cache: StepCache,
}

impl Lstm {
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(input, hidden, output);
        let limit = 1.0 / (hidden as f64).sqrt();
        let (b0, _) = net.bias_range();
        for (k, p) in net.params.iter_mut().enumerate() {
            if !(b0..b0 + 4 * hidden).contains(&k) {
                *p = rng.random_range(-limit..limit);
            }
        }
        // Forget gate starts open.
        for p in &mut net.params[b0..b0 + hidden] {
            *p = 1.0;
        }
        net
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        let n = 4 * hidden * input + 4 * hidden * hidden + 4 * hidden + output * hidden + output;
        Self {
            input,
            hidden,
            output,
            params: vec![0.0; n],
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn offsets(&self) -> [usize; 5] {
        let (i, h, o) = (self.input, self.hidden, self.output);
        let w = 0;
        let u = w + 4 * h * i;
        let b = u + 4 * h * h;
        let wy = b + 4 * h;
        let by = wy + o * h;
        [w, u, b, wy, by]
    }

    fn bias_range(&self) -> (usize, usize) {
        let [_, _, b, wy, _] = self.offsets();
        (b, wy)
    }

    /// Mutable view of the read-out bias.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let [.., by] = self.offsets();
        &mut self.params[by..]
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepOut {
        let (ni, nh, no) = (self.input, self.hidden, self.output);
        assert_eq!(x.len(), ni);
        let [w, u, b, wy, by] = self.offsets();
        let p = &self.params;
        let z: Vec<f64> = (0..4 * nh)
            .map(|r| {
                dot(&p[w + r * ni..w + (r + 1) * ni], x)
                    + dot(&p[u + r * nh..u + (r + 1) * nh], h_prev)
                    + p[b + r]
            })
            .collect();
        let f: Vec<f64> = z[..nh].iter().map(|&v| sigmoid(v)).collect();
        let i: Vec<f64> = z[nh..2 * nh].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[2 * nh..3 * nh].iter().map(|v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * nh..].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<f64> = (0..nh).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..nh).map(|k| o[k] * tanh_c[k]).collect();
        let y: Vec<f64> = (0..no)
            .map(|r| dot(&p[wy + r * nh..wy + (r + 1) * nh], &h) + p[by + r])
            .collect();
        StepOut {
            h: h.clone(),
            c: c.clone(),
            y,
            cache: StepCache {
                x: x.to_vec(),
                h_prev: h_prev.to_vec(),
                c_prev: c_prev.to_vec(),
                f,
                i,
                g,
                o,
                tanh_c,
                h,
            },
        }
    }

    /// Backpropagates one step. `dh_next`/`dc_next` come from the following
    /// step (zeros at the end of a window). Accumulates parameter gradients
    /// and returns `(dx, dh_prev, dc_prev)`.
    pub fn step_backward(
        &self,
        cache: &StepCache,
        dy: &[f64],
        dh_next: &[f64],
        dc_next: &[f64],
        grads: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (ni, nh, no) = (self.input, self.hidden, self.output);
        let [w, u, b, wy, by] = self.offsets();
        let p = &self.params;

        let mut dh = dh_next.to_vec();
        for r in 0..no {
            let d = dy[r];
            grads[by + r] += d;
            for k in 0..nh {
                grads[wy + r * nh + k] += d * cache.h[k];
                dh[k] += d * p[wy + r * nh + k];
            }
        }

        let mut dz = vec![0.0; 4 * nh];
        let mut dc_prev = vec![0.0; nh];
        for k in 0..nh {
            let (f, i, g, o, tc) = (cache.f[k], cache.i[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
            let d_o = dh[k] * tc;
            let dc = dh[k] * o * (1.0 - tc * tc) + dc_next[k];
            dz[k] = dc * cache.c_prev[k] * f * (1.0 - f);
            dz[nh + k] = dc * g * i * (1.0 - i);
            dz[2 * nh + k] = dc * i * (1.0 - g * g);
            dz[3 * nh + k] = d_o * o * (1.0 - o);
            dc_prev[k] = dc * f;
        }

        let mut dx = vec![0.0; ni];
        let mut dh_prev = vec![0.0; nh];
        for r in 0..4 * nh {
            let d = dz[r];
            if d == 0.0 {
                continue;
            }
            grads[b + r] += d;
            for j in 0..ni {
                grads[w + r * ni + j] += d * cache.x[j];
                dx[j] += d * p[w + r * ni + j];
            }
            for j in 0..nh {
                grads[u + r * nh + j] += d * cache.h_prev[j];
                dh_prev[j] += d * p[u + r * nh + j];
            }
        }
        (dx, dh_prev, dc_prev)
    }

    /// Mean squared one-step error over a window and its gradient, by
    /// backpropagation through time from the given initial state.
    pub fn window_loss_grad(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        h0: &[f64],
        c0: &[f64],
        grads: &mut [f64],
    ) -> f64 {
        assert_eq!(inputs.len(), targets.len());
        let nh = self.hidden;
        let mut h = h0.to_vec();
        let mut c = c0.to_vec();
        let mut caches = Vec::with_capacity(inputs.len());
        let mut dys = Vec::with_capacity(inputs.len());
        let count = (inputs.len() * self.output) as f64;
        let mut loss = 0.0;
        for (x, t) in inputs.iter().zip(targets) {
            let out = self.step(x, &h, &c);
            let dy: Vec<f64> = out
                .y
                .iter()
                .zip(t)
                .map(|(y, t)| {
                    loss += (y - t) * (y - t);
                    2.0 * (y - t) / count
                })
                .collect();
            h = out.h;
            c = out.c;
            caches.push(out.cache);
            dys.push(dy);
        }
        let mut dh = vec![0.0; nh];
        let mut dc = vec![0.0; nh];
        for (cache, dy) in caches.iter().zip(&dys).rev() {
            let (_, dhp, dcp) = self.step_backward(cache, dy, &dh, &dc, grads);
            dh = dhp;
            dc = dcp;
        }
        loss / count
    }
}
