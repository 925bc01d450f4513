//! Multi-agent deterministic policy gradient for per-beam power.
//!
//! Each beam of a satellite has its own actor; all K actors observe the same
//! state (backlogs and gains of the lit cells). One critic per satellite
//! scores the joint action, and every network has a slowly tracking target
//! copy. Actors emit a raw value; the beam power is `sigmoid(raw) * P_max`,
//! uniformly shrunk when the satellite budget binds.
//!
//! Satellites learn independently from their own rewards, so their updates
//! run in parallel once a slot's shared transmission step is done.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::alloc::PowerAlloc;
use crate::env::{Env, ObsScale, PaState, World};
use crate::error::Result;
use crate::exec::{self, derive_seed, Execution};
use crate::numcore::mlp::{sigmoid, Activation};
use crate::numcore::{checkpoint, clip_norm, Adam, Mlp};
use crate::policy::{project_powers, BhPolicy, PaPolicy};
use crate::predictor::Forecaster;

pub const CHECKPOINT_KIND: &str = "mapa";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapaConfig {
    pub episodes: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    /// Soft-update rate of the target networks.
    pub tau: f64,
    pub buffer: usize,
    pub batch: usize,
    /// Standard deviation of the Gaussian noise added to raw actor outputs.
    pub noise_std: f64,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for MapaConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            actor_lr: 1e-5,
            critic_lr: 1e-4,
            gamma: 0.99,
            tau: 0.001,
            buffer: 1_000_000,
            batch: 64,
            noise_std: 0.2,
            actor_hidden: 128,
            critic_hidden: 256,
            grad_clip: 10.0,
            seed: 0,
        }
    }
}

impl MapaConfig {
    /// Scaled-down settings: smaller networks, faster steps and a short
    /// horizon, since a power choice mostly pays off within its own slot.
    pub fn desk() -> Self {
        Self {
            episodes: 100,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            gamma: 0.5,
            tau: 0.01,
            buffer: 100_000,
            actor_hidden: 32,
            critic_hidden: 64,
            ..Self::default()
        }
    }
}

/// Networks of one satellite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatAgents {
    pub actors: Vec<Mlp>,
    pub critic: Mlp,
    pub target_actors: Vec<Mlp>,
    pub target_critic: Mlp,
}

impl SatAgents {
    pub fn new(k: usize, cfg: &MapaConfig, rng: &mut impl Rng) -> Self {
        let actors: Vec<Mlp> = (0..k)
            .map(|_| {
                Mlp::new(
                    &[2 * k, cfg.actor_hidden, cfg.actor_hidden, 1],
                    &[Activation::Tanh, Activation::Tanh, Activation::Linear],
                    rng,
                )
            })
            .collect();
        let critic = Mlp::new(
            &[3 * k, cfg.critic_hidden, cfg.critic_hidden, 1],
            &[Activation::Tanh, Activation::Tanh, Activation::Linear],
            rng,
        );
        Self {
            target_actors: actors.clone(),
            target_critic: critic.clone(),
            actors,
            critic,
        }
    }

    pub fn n_beams(&self) -> usize {
        self.actors.len()
    }

    /// Noise-free raw outputs of the online actors.
    pub fn raw(&self, state: &[f64]) -> Vec<f64> {
        self.actors.iter().map(|a| a.predict(state)[0]).collect()
    }

    /// Beam fractions `sigmoid(raw)` proposed by the target actors.
    pub fn target_fractions(&self, state: &[f64]) -> Vec<f64> {
        self.target_actors.iter().map(|a| sigmoid(a.predict(state)[0])).collect()
    }

    pub fn q(&self, state: &[f64], fractions: &[f64]) -> f64 {
        self.critic.predict(&concat(state, fractions))[0]
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// `r + gamma * Q'(s', mu'(s'))`, or `r` for a terminal transition.
pub fn critic_target(agents: &SatAgents, r: f64, gamma: f64, next_state: &[f64], terminal: bool) -> f64 {
    if terminal || gamma == 0.0 {
        return r;
    }
    let a = agents.target_fractions(next_state);
    r + gamma * agents.target_critic.predict(&concat(next_state, &a))[0]
}

/// `target <- tau * net + (1 - tau) * target`, element-wise.
pub fn soft_update(target: &mut [f64], net: &[f64], tau: f64) {
    for (t, &n) in target.iter_mut().zip(net) {
        *t = tau * n + (1.0 - tau) * *t;
    }
}

/// `a = raw + N(0, std)`; `std = 0` returns `raw` unchanged.
pub fn pa_act(raw: f64, std: f64, rng: &mut impl Rng) -> f64 {
    if std <= 0.0 {
        return raw;
    }
    raw + Normal::new(0.0, std).expect("finite std").sample(rng)
}

/// Beam powers from raw actor outputs.
pub fn powers_from_raw(raw: &[f64], p_max: f64, p_tot: f64) -> PowerAlloc {
    let fractions: Vec<f64> = raw.iter().map(|&r| sigmoid(r)).collect();
    project_powers(&fractions, p_max, p_tot)
}

/// Anything that can report `dQ/da` for a joint action.
pub trait ActionCritic {
    fn action_grad(&self, state: &[f64], actions: &[f64]) -> Vec<f64>;
}

/// A critic network whose input is the state followed by the actions.
pub struct MlpCritic<'a>(pub &'a Mlp);

impl ActionCritic for MlpCritic<'_> {
    fn action_grad(&self, state: &[f64], actions: &[f64]) -> Vec<f64> {
        let cache = self.0.forward(&concat(state, actions));
        let mut g = self.0.input_grad(&cache, &[1.0]);
        g.drain(..state.len());
        g
    }
}

/// Gradient (for descent) of `-mean Q(s, a_1..sigmoid(actor(s))..a_K)` with
/// respect to beam `beam`'s actor parameters; other beams' actions come from
/// the batch.
pub fn actor_gradient(
    actor: &Mlp,
    critic: &impl ActionCritic,
    states: &[&[f64]],
    actions: &[&[f64]],
    beam: usize,
) -> Vec<f64> {
    let mut grads = vec![0.0; actor.n_params()];
    let scale = 1.0 / states.len().max(1) as f64;
    for (s, a) in states.iter().zip(actions) {
        let cache = actor.forward(s);
        let f = sigmoid(cache.output()[0]);
        let mut joint = a.to_vec();
        joint[beam] = f;
        let dq = critic.action_grad(s, &joint)[beam];
        actor.backward(&cache, &[-dq * f * (1.0 - f) * scale], &mut grads);
    }
    grads
}

/// Mean squared TD error of the critic on `batch` and its gradient (of half
/// that loss) with respect to the critic parameters.
pub fn critic_gradient(agents: &SatAgents, batch: &[Transition], gamma: f64) -> (f64, Vec<f64>) {
    let mut g = vec![0.0; agents.critic.n_params()];
    let mut loss = 0.0;
    let inv = 1.0 / batch.len().max(1) as f64;
    for t in batch {
        let y = critic_target(agents, t.reward, gamma, &t.next_state, t.terminal);
        let cache = agents.critic.forward(&concat(&t.state, &t.action));
        let err = cache.output()[0] - y;
        loss += err * err * inv;
        agents.critic.backward(&cache, &[err * inv], &mut g);
    }
    (loss, g)
}

/// Per-beam agents of every satellite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapaModel {
    pub sats: Vec<SatAgents>,
    pub obs: ObsScale,
    pub p_max_w: f64,
    pub p_tot_w: f64,
}

impl MapaModel {
    pub fn new(world: &World, cfg: &MapaConfig, rng: &mut impl Rng) -> Self {
        Self {
            sats: (0..world.n_sats()).map(|_| SatAgents::new(world.n_beams(), cfg, rng)).collect(),
            obs: ObsScale::for_world(world),
            p_max_w: world.scenario.p_max_w,
            p_tot_w: world.scenario.p_tot_w,
        }
    }

    /// Scaled backlogs then scaled gains of the lit cells.
    pub fn observation(&self, st: &PaState) -> Vec<f64> {
        let mut o: Vec<f64> = st.backlogs.iter().map(|&b| self.obs.demand(b)).collect();
        o.extend(st.gains.iter().map(|&g| self.obs.gain(g)));
        o
    }

    /// Deterministic powers for every satellite.
    pub fn allocate(&self, states: &[PaState]) -> Vec<PowerAlloc> {
        self.sats
            .iter()
            .zip(states)
            .map(|(ag, st)| powers_from_raw(&ag.raw(&self.observation(st)), self.p_max_w, self.p_tot_w))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(path, CHECKPOINT_KIND, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        checkpoint::load(path, CHECKPOINT_KIND)
    }
}

/// Noise-free MAPA as a PA policy.
#[derive(Debug, Clone)]
pub struct MapaPolicy(pub MapaModel);

impl PaPolicy for MapaPolicy {
    fn allocate(&mut self, _world: &World, states: &[PaState], _rng: &mut ChaCha8Rng) -> Vec<PowerAlloc> {
        self.0.allocate(states)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Beam fractions `sigmoid(raw + noise)` before budget projection.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: Vec::new(),
            capacity,
            head: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends, evicting the oldest entry when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (a, b) = self.items.split_at(self.head);
        b.iter().chain(a)
    }

    /// `min(n, len)` distinct stored transitions, uniformly at random.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<&Transition> {
        let n = n.min(self.items.len());
        sample(rng, self.items.len(), n).into_iter().map(|i| &self.items[i]).collect()
    }
}

/// Optimizers, replay and exploration stream of one satellite.
#[derive(Debug, Clone)]
struct SatLearner {
    agents: SatAgents,
    actor_opts: Vec<Adam>,
    critic_opt: Adam,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
}

/// Diagnostics of one update.
#[derive(Debug, Clone, Copy, Default)]
struct UpdateStats {
    critic_loss: f64,
}

impl SatLearner {
    fn new(agents: SatAgents, cfg: &MapaConfig, sat: usize) -> Self {
        Self {
            actor_opts: agents.actors.iter().map(|a| Adam::new(a.n_params(), cfg.actor_lr)).collect(),
            critic_opt: Adam::new(agents.critic.n_params(), cfg.critic_lr),
            buffer: ReplayBuffer::new(cfg.buffer),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 11, sat as u64)),
            agents,
        }
    }

    /// Raw actions with exploration noise.
    fn explore(&mut self, state: &[f64], std: f64) -> Vec<f64> {
        let raw = self.agents.raw(state);
        raw.into_iter().map(|r| pa_act(r, std, &mut self.rng)).collect()
    }

    fn update(&mut self, cfg: &MapaConfig) -> Option<UpdateStats> {
        if self.buffer.len() < cfg.batch {
            return None;
        }
        let mut rng = self.rng.clone();
        let batch: Vec<Transition> = self.buffer.sample(cfg.batch, &mut rng).into_iter().cloned().collect();
        self.rng = rng;
        let ag = &mut self.agents;

        let (loss, mut cg) = critic_gradient(ag, &batch, cfg.gamma);
        clip_norm(&mut cg, cfg.grad_clip);
        self.critic_opt.step(&mut ag.critic.params, &cg);

        let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
        let actions: Vec<&[f64]> = batch.iter().map(|t| t.action.as_slice()).collect();
        for k in 0..ag.actors.len() {
            let mut g = actor_gradient(&ag.actors[k], &MlpCritic(&ag.critic), &states, &actions, k);
            clip_norm(&mut g, cfg.grad_clip);
            self.actor_opts[k].step(&mut ag.actors[k].params, &g);
        }

        soft_update(&mut ag.target_critic.params, &ag.critic.params, cfg.tau);
        for (t, a) in ag.target_actors.iter_mut().zip(&ag.actors) {
            soft_update(&mut t.params, &a.params, cfg.tau);
        }
        Some(UpdateStats { critic_loss: loss })
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaEpisodeLog {
    pub episode: usize,
    /// Mean per-slot reward, averaged over satellites.
    pub reward: f64,
    pub critic_loss: f64,
    pub mean_power_w: f64,
    pub throughput_bits: f64,
}

pub fn write_training_csv<W: Write>(logs: &[PaEpisodeLog], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for l in logs {
        w.serialize(l)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PaTrainOutcome {
    pub model: MapaModel,
    pub logs: Vec<PaEpisodeLog>,
}

struct PendingStep {
    state: Vec<f64>,
    action: Vec<f64>,
    reward: f64,
}

/// Trains fresh agents with cells chosen by `bh`.
pub fn train(
    world: &World,
    forecaster: &Forecaster,
    bh: &mut dyn BhPolicy,
    cfg: &MapaConfig,
    mode: Execution,
) -> Result<PaTrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 10, 0));
    let model = MapaModel::new(world, cfg, &mut rng);
    train_from(world, forecaster, bh, model, cfg, mode)
}

pub fn train_from(
    world: &World,
    forecaster: &Forecaster,
    bh: &mut dyn BhPolicy,
    model: MapaModel,
    cfg: &MapaConfig,
    mode: Execution,
) -> Result<PaTrainOutcome> {
    let MapaModel {
        sats,
        obs,
        p_max_w,
        p_tot_w,
    } = model;
    let shell = MapaModel {
        sats: Vec::new(),
        obs,
        p_max_w,
        p_tot_w,
    };
    let mut learners: Vec<SatLearner> = sats.into_iter().enumerate().map(|(n, a)| SatLearner::new(a, cfg, n)).collect();
    let mut bh_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 12, 0));
    let mut logs = Vec::with_capacity(cfg.episodes);
    let n_sats = learners.len();
    for episode in 0..cfg.episodes {
        let mut env = Env::new(world, forecaster, derive_seed(cfg.seed, 13, episode as u64))?;
        let mut pending: Vec<Option<PendingStep>> = (0..n_sats).map(|_| None).collect();
        let (mut reward_sum, mut loss_sum, mut updates, mut power_sum, mut thr) = (0.0, 0.0, 0usize, 0.0, 0.0);
        while !env.done() {
            let view = env.begin_slot();
            let pattern = bh.decide(world, &view, &mut bh_rng);
            let states: Vec<Vec<f64>> = env.pa_states(&pattern).iter().map(|s| shell.observation(s)).collect();
            for (n, p) in pending.iter_mut().enumerate() {
                if let Some(p) = p.take() {
                    learners[n].buffer.push(Transition {
                        state: p.state,
                        action: p.action,
                        reward: p.reward,
                        next_state: states[n].clone(),
                        terminal: false,
                    });
                }
            }
            let (l, u) = update_all(&mut learners, cfg, mode);
            loss_sum += l;
            updates += u;

            let raws: Vec<Vec<f64>> = learners
                .iter_mut()
                .zip(&states)
                .map(|(ln, s)| ln.explore(s, cfg.noise_std))
                .collect();
            let powers: Vec<PowerAlloc> = raws.iter().map(|r| powers_from_raw(r, p_max_w, p_tot_w)).collect();
            let m = env.end_slot(&pattern, &powers)?;
            reward_sum += m.pa_rewards.iter().sum::<f64>() / n_sats as f64;
            power_sum += powers.iter().map(PowerAlloc::total).sum::<f64>() / n_sats as f64;
            thr += m.total_throughput();
            for n in 0..n_sats {
                pending[n] = Some(PendingStep {
                    state: states[n].clone(),
                    action: raws[n].iter().map(|&r| sigmoid(r)).collect(),
                    reward: m.pa_rewards[n],
                });
            }
        }
        // The episode ends here; the last step bootstraps nothing.
        for (n, p) in pending.into_iter().enumerate() {
            if let Some(p) = p {
                learners[n].buffer.push(Transition {
                    next_state: p.state.clone(),
                    state: p.state,
                    action: p.action,
                    reward: p.reward,
                    terminal: true,
                });
            }
        }
        let (l, u) = update_all(&mut learners, cfg, mode);
        loss_sum += l;
        updates += u;
        let t = env.slot().max(1) as f64;
        logs.push(PaEpisodeLog {
            episode,
            reward: reward_sum / t,
            critic_loss: if updates > 0 { loss_sum / updates as f64 } else { 0.0 },
            mean_power_w: power_sum / t,
            throughput_bits: thr,
        });
    }
    Ok(PaTrainOutcome {
        model: MapaModel {
            sats: learners.into_iter().map(|l| l.agents).collect(),
            ..shell
        },
        logs,
    })
}

/// One update per satellite; returns (summed critic loss, number of updates).
fn update_all(learners: &mut Vec<SatLearner>, cfg: &MapaConfig, mode: Execution) -> (f64, usize) {
    let owned = std::mem::take(learners);
    let results = exec::map(mode, owned, |mut l| {
        let s = l.update(cfg);
        (l, s)
    });
    let mut loss = 0.0;
    let mut count = 0;
    for (l, s) in results {
        if let Some(s) = s {
            loss += s.critic_loss;
            count += 1;
        }
        learners.push(l);
    }
    (loss, count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = MapaConfig {
            actor_hidden: 4,
            critic_hidden: 4,
            ..Default::default()
        };
        let mut ag = SatAgents::new(2, &cfg, &mut rng);
        // Make Q' identically 2: zero weights, output bias 2.
        ag.target_critic.params.fill(0.0);
        *ag.target_critic.params.last_mut().unwrap() = 2.0;
        let s = [0.1, 0.2, 0.3, 0.4];
        assert!((critic_target(&ag, 1.0, 0.99, &s, false) - 2.98).abs() < 1e-12);
        assert_eq!(critic_target(&ag, 1.0, 0.0, &s, false), 1.0);
        assert_eq!(critic_target(&ag, 1.0, 0.99, &s, true), 1.0);
    }

    #[test]
    fn soft_update_examples() {
        let mut t = vec![0.0, 5.0];
        soft_update(&mut t, &[1.0, 1.0], 0.0);
        assert_eq!(t, vec![0.0, 5.0]);
        soft_update(&mut t, &[1.0, 1.0], 0.001);
        assert!((t[0] - 0.001).abs() < 1e-15);
        soft_update(&mut t, &[1.0, 3.0], 1.0);
        assert_eq!(t, vec![1.0, 3.0]);
    }

    #[test]
    fn replay_is_fifo_and_bounded() {
        let mut b = ReplayBuffer::new(3);
        let tr = |r: f64| Transition {
            state: vec![],
            action: vec![],
            reward: r,
            next_state: vec![],
            terminal: false,
        };
        for i in 0..5 {
            b.push(tr(i as f64));
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.iter().map(|t| t.reward).collect::<Vec<_>>(), vec![2.0, 3.0, 4.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = b.sample(10, &mut rng);
        assert_eq!(s.len(), 3);
        let mut r: Vec<f64> = s.iter().map(|t| t.reward).collect();
        r.sort_by(f64::total_cmp);
        assert_eq!(r, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn zero_noise_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(pa_act(0.3, 0.0, &mut rng), 0.3);
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(pa_act(0.3, 0.2, &mut a), pa_act(0.3, 0.2, &mut b));
    }

    #[test]
    fn mlp_critic_action_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = MapaConfig {
            critic_hidden: 6,
            actor_hidden: 3,
            ..Default::default()
        };
        let ag = SatAgents::new(2, &cfg, &mut rng);
        let s = [0.4, -0.2, 0.1, 0.9];
        let a = [0.3, 0.8];
        let g = MlpCritic(&ag.critic).action_grad(&s, &a);
        let n = crate::numcore::gradcheck::central_diff(|x| ag.q(&s, x), &a, 1e-6);
        assert!(crate::numcore::gradcheck::rel_error(&g, &n) < 1e-7);
    }
}
