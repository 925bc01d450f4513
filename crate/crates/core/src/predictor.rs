//! One-step-ahead arrival forecasting.
//!
//! Each satellite gets its own LSTM whose input and output are the arrivals
//! of its C covered cells, scaled by a constant learned from the training
//! traces. The forecast for slot `t` is made from the arrivals observed in
//! slot `t - 1`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::geometry::Geometry;
use crate::numcore::{checkpoint, clip_norm, Adam, Lstm};
use crate::traffic::TrafficTrace;

pub const CHECKPOINT_KIND: &str = "predictor";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    /// Truncated BPTT window, in slots.
    pub window: usize,
    pub epochs: usize,
    pub lr: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            window: 32,
            epochs: 30,
            lr: 5e-3,
            hidden: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficPredictor {
    pub models: Vec<Lstm>,
    /// Covered cell ids per satellite, in model input order.
    pub covered: Vec<Vec<usize>>,
    /// Bits per model unit.
    pub scale: f64,
    /// Mean training loss per epoch, averaged over satellites.
    pub loss_history: Vec<f64>,
}

/// Recurrent state for every satellite's model.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl TrafficPredictor {
    pub fn n_sats(&self) -> usize {
        self.models.len()
    }

    pub fn initial_state(&self) -> PredictorState {
        PredictorState {
            h: self.models.iter().map(|m| vec![0.0; m.hidden]).collect(),
            c: self.models.iter().map(|m| vec![0.0; m.hidden]).collect(),
        }
    }

    /// Forecast for `sat`'s cells from their last observed arrivals.
    /// Advances the recurrent state; negative outputs clamp to zero.
    pub fn predict(&self, sat: usize, last: &[f64], state: &mut PredictorState) -> Vec<f64> {
        let x: Vec<f64> = last.iter().map(|v| v / self.scale).collect();
        let out = self.models[sat].step(&x, &state.h[sat], &state.c[sat]);
        state.h[sat] = out.h;
        state.c[sat] = out.c;
        out.y.iter().map(|y| (y * self.scale).max(0.0)).collect()
    }

    /// Forecasts for every satellite from last slot's global arrivals.
    pub fn predict_all(&self, last_global: &[f64], state: &mut PredictorState) -> Vec<Vec<f64>> {
        (0..self.n_sats())
            .map(|n| {
                let last: Vec<f64> = self.covered[n].iter().map(|&c| last_global[c]).collect();
                self.predict(n, &last, state)
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        checkpoint::save(path, CHECKPOINT_KIND, self)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        checkpoint::load(path, CHECKPOINT_KIND)
    }
}

/// Trains one model per satellite on every trace, in parallel across
/// satellites when `mode` allows. Deterministic for a given config.
pub fn train_predictor(
    traces: &[TrafficTrace],
    geom: &Geometry,
    cfg: &PredictorConfig,
    mode: Execution,
) -> Result<TrafficPredictor> {
    let shortest = traces.iter().map(TrafficTrace::n_slots).min().unwrap_or(0);
    if cfg.window == 0 || cfg.window + 1 > shortest {
        return Err(Error::WindowTooLong {
            window: cfg.window,
            len: shortest,
        });
    }
    let total: f64 = traces.iter().map(TrafficTrace::total_bits).sum();
    let count: usize = traces.iter().map(|t| t.n_slots() * geom.n_cells()).sum();
    let mean = total / count.max(1) as f64;
    let scale = if mean > 0.0 { mean } else { 1.0 };

    let covered: Vec<Vec<usize>> = (0..geom.n_sats()).map(|n| geom.covered(n).to_vec()).collect();
    let results = exec::map_range(mode, geom.n_sats(), |n| {
        let series: Vec<Vec<Vec<f64>>> = traces
            .iter()
            .map(|tr| (0..tr.n_slots()).map(|t| tr.gather(t, &covered[n]).iter().map(|v| v / scale).collect()).collect())
            .collect();
        train_one(&series, covered[n].len(), cfg, cfg.seed.wrapping_add(n as u64))
    });
    let epochs = cfg.epochs;
    let mut loss_history = vec![0.0; epochs];
    let mut models = Vec::with_capacity(results.len());
    for (model, losses) in results {
        for (acc, l) in loss_history.iter_mut().zip(&losses) {
            *acc += l / geom.n_sats() as f64;
        }
        models.push(model);
    }
    Ok(TrafficPredictor {
        models,
        covered,
        scale,
        loss_history,
    })
}

/// Trains one LSTM on scaled series; returns it with per-epoch mean loss.
fn train_one(series: &[Vec<Vec<f64>>], dim: usize, cfg: &PredictorConfig, seed: u64) -> (Lstm, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Lstm::new(dim, cfg.hidden, dim, &mut rng);
    let mut opt = Adam::new(net.n_params(), cfg.lr);
    let mut grads = vec![0.0; net.n_params()];
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut windows = 0usize;
        for s in series {
            let mut h = vec![0.0; cfg.hidden];
            let mut c = vec![0.0; cfg.hidden];
            let mut start = 0;
            while start + 1 < s.len() {
                let end = (start + cfg.window).min(s.len() - 1);
                let inputs = &s[start..end];
                let targets = &s[start + 1..end + 1];
                grads.fill(0.0);
                loss_sum += net.window_loss_grad(inputs, targets, &h, &c, &mut grads);
                windows += 1;
                // Carry the state forward without gradients.
                for x in inputs {
                    let out = net.step(x, &h, &c);
                    h = out.h;
                    c = out.c;
                }
                clip_norm(&mut grads, 5.0);
                opt.step(&mut net.params, &grads);
                start = end;
            }
        }
        history.push(loss_sum / windows.max(1) as f64);
    }
    (net, history)
}

/// Source of the arrival estimate used in the DT state.
#[derive(Debug, Clone, PartialEq)]
pub enum Forecaster {
    /// `rho_hat(t) = rho(t - 1)`.
    Persistence,
    Lstm(TrafficPredictor),
}

/// Per-episode forecasting state.
#[derive(Debug, Clone, PartialEq)]
pub enum ForecastState {
    Persistence,
    Lstm(PredictorState),
}

impl Forecaster {
    pub fn start(&self) -> ForecastState {
        match self {
            Forecaster::Persistence => ForecastState::Persistence,
            Forecaster::Lstm(p) => ForecastState::Lstm(p.initial_state()),
        }
    }

    /// Estimates of this slot's arrivals, per satellite in coverage order.
    pub fn forecast(&self, geom: &Geometry, last_global: &[f64], state: &mut ForecastState) -> Vec<Vec<f64>> {
        match (self, state) {
            (Forecaster::Lstm(p), ForecastState::Lstm(s)) => p.predict_all(last_global, s),
            _ => (0..geom.n_sats())
                .map(|n| geom.covered(n).iter().map(|&c| last_global[c]).collect())
                .collect(),
        }
    }
}

/// Mean squared error of `pred` against `actual`.
pub fn mse(pred: &[f64], actual: &[f64]) -> f64 {
    pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum::<f64>() / pred.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Scenario, TrafficConfig};

    fn one_sat() -> (Scenario, Geometry) {
        let s = Scenario::single_sat();
        let g = Geometry::build(&s).unwrap();
        (s, g)
    }

    #[test]
    fn window_longer_than_trace_is_rejected() {
        let (s, g) = one_sat();
        let tr = crate::traffic::generate_trace(&s, &s.traffic, 10, 0).unwrap();
        let cfg = PredictorConfig { window: 10, ..Default::default() };
        assert!(matches!(
            train_predictor(&[tr], &g, &cfg, Execution::Sequential),
            Err(Error::WindowTooLong { window: 10, len: 10 })
        ));
    }

    #[test]
    fn constant_signal_is_learned() {
        let (_, g) = one_sat();
        let tr = TrafficTrace {
            arrivals: vec![vec![5.0; 7]; 96],
            hotspot_mask: vec![false; 7],
        };
        let cfg = PredictorConfig {
            epochs: 150,
            hidden: 8,
            lr: 1e-2,
            ..Default::default()
        };
        let p = train_predictor(&[tr], &g, &cfg, Execution::Sequential).unwrap();
        let mut st = p.initial_state();
        let mut y = vec![];
        for _ in 0..20 {
            y = p.predict(0, &[5.0; 7], &mut st);
        }
        for v in y {
            assert!((v - 5.0).abs() < 0.05, "{v}");
        }
    }

    #[test]
    fn zero_model_predicts_clamped_bias() {
        let (_, g) = one_sat();
        let mut m = Lstm::zeros(7, 4, 7);
        m.output_bias_mut().copy_from_slice(&[1.0, -1.0, 0.0, 2.0, 0.0, 0.0, 0.0]);
        let p = TrafficPredictor {
            models: vec![m],
            covered: vec![g.covered(0).to_vec()],
            scale: 10.0,
            loss_history: vec![],
        };
        let mut st = p.initial_state();
        assert_eq!(p.predict(0, &[3.0; 7], &mut st), vec![10.0, 0.0, 0.0, 20.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn training_is_deterministic_and_stateful() {
        let (s, g) = one_sat();
        let cfg_t = TrafficConfig { diurnal_amplitude: 0.5, ..s.traffic.clone() };
        let tr = crate::traffic::generate_trace(&s, &cfg_t, 80, 3).unwrap();
        let cfg = PredictorConfig { epochs: 3, hidden: 6, ..Default::default() };
        let a = train_predictor(std::slice::from_ref(&tr), &g, &cfg, Execution::Sequential).unwrap();
        let b = train_predictor(std::slice::from_ref(&tr), &g, &cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let mut warm = a.initial_state();
        let x = tr.gather(5, g.covered(0));
        a.predict(0, &tr.gather(4, g.covered(0)), &mut warm);
        let stateful = a.predict(0, &x, &mut warm);
        let fresh = a.predict(0, &x, &mut a.initial_state());
        assert_ne!(stateful, fresh);
    }
}
