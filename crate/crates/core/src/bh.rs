//! Multi-agent asynchronous actor-critic for beam hopping.
//!
//! Every satellite has an actor over its local observation (demand estimate
//! and channel gains of its C cells) and a critic over the global state. A
//! shared critic on the global state is trained on the agents' mean TD
//! error. Workers train private copies on independent episodes and the
//! global parameters become their arithmetic mean after every round.
//!
//! The same learner, with per-beam power levels appended to the action and
//! per-satellite rewards, is the discrete joint baseline (see [`crate::dpa`]).

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alloc::{BhPattern, PowerAlloc};
use crate::baselines;
use crate::env::{BhView, Env, ObsScale, PaState, World};
use crate::error::Result;
use crate::exec::{self, derive_seed, Execution};
use crate::metrics::SlotMetrics;
use crate::numcore::mlp::Activation;
use crate::numcore::sampling::{grad_log_prob_ordered, masked_softmax, sample_k_distinct, top_k};
use crate::numcore::{checkpoint, clip_norm, mean_params, Adam, Mlp};
use crate::policy::{project_powers, BhPolicy, SlotPolicy};
use crate::predictor::Forecaster;

pub const CHECKPOINT_KIND: &str = "ma3c-bh";

/// Which reward each agent learns from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// The global load-balance / fairness reward, shared by all agents.
    #[default]
    Global,
    /// Each satellite's throughput / fairness reward minus the interference penalty.
    PerSatellite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ma3cConfig {
    /// Total training episodes, split across workers.
    pub episodes: usize,
    pub workers: usize,
    /// Episodes each worker runs between parameter averages.
    pub sync_every: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Step size of the shared critic.
    pub shared_lr: f64,
    pub gamma: f64,
    /// Slots of experience per gradient step.
    pub rollout: usize,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    pub entropy_coeff: f64,
    pub grad_clip: f64,
    /// Per-beam power levels as fractions of the beam cap. Empty means the
    /// agent only picks cells and beams use equal power.
    pub power_levels: Vec<f64>,
    pub reward: RewardKind,
    pub seed: u64,
}

impl Default for Ma3cConfig {
    fn default() -> Self {
        Self {
            episodes: 6000,
            workers: 16,
            sync_every: 5,
            actor_lr: 1e-5,
            critic_lr: 1e-4,
            shared_lr: 1e-4,
            gamma: 0.99,
            rollout: 8,
            actor_hidden: 128,
            critic_hidden: 256,
            entropy_coeff: 0.0,
            grad_clip: 10.0,
            power_levels: Vec::new(),
            reward: RewardKind::Global,
            seed: 0,
        }
    }
}

impl Ma3cConfig {
    /// Scaled-down settings that train in seconds on a small scenario.
    pub fn desk() -> Self {
        Self {
            episodes: 800,
            workers: 8,
            sync_every: 5,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            shared_lr: 1e-3,
            actor_hidden: 64,
            critic_hidden: 128,
            ..Self::default()
        }
    }
}

/// Trained (or in-training) networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ma3cModel {
    pub actors: Vec<Mlp>,
    pub critics: Vec<Mlp>,
    pub shared_critic: Mlp,
    pub obs: ObsScale,
    pub cells_per_sat: usize,
    pub n_beams: usize,
    pub power_levels: Vec<f64>,
    pub reward: RewardKind,
}

/// One satellite's sampled or greedy action.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentAction {
    /// Local cell indices in draw order.
    pub order: Vec<usize>,
    /// Power level index per beam (beam order = ascending cell index).
    pub levels: Vec<usize>,
    pub log_prob: f64,
}

impl Ma3cModel {
    pub fn new(world: &World, cfg: &Ma3cConfig, rng: &mut impl Rng) -> Self {
        let c = world.cells_per_sat();
        let k = world.n_beams();
        let n = world.n_sats();
        let out = c + k * level_head_width(&cfg.power_levels);
        let actors = (0..n)
            .map(|_| {
                let mut a = Mlp::new(
                    &[2 * c, cfg.actor_hidden, cfg.actor_hidden, out],
                    &[Activation::Tanh, Activation::Tanh, Activation::Linear],
                    rng,
                );
                a.scale_output_layer(0.01);
                a
            })
            .collect();
        let critics = (0..n).map(|_| critic_net(world, cfg, rng)).collect();
        let shared_critic = critic_net(world, cfg, rng);
        Self {
            actors,
            critics,
            shared_critic,
            obs: ObsScale::for_world(world),
            cells_per_sat: c,
            n_beams: k,
            power_levels: cfg.power_levels.clone(),
            reward: cfg.reward,
        }
    }

    pub fn n_sats(&self) -> usize {
        self.actors.len()
    }

    /// Agent `sat`'s observation: scaled demand estimates then scaled gains.
    pub fn observation(&self, world: &World, view: &BhView, sat: usize) -> Vec<f64> {
        let mut o: Vec<f64> = view.demand_hat[sat].iter().map(|&d| self.obs.demand(d)).collect();
        o.extend(world.own_gains[sat].iter().map(|&g| self.obs.gain(g)));
        o
    }

    /// Global state: every agent's observation, concatenated in satellite order.
    pub fn global_state(&self, world: &World, view: &BhView) -> Vec<f64> {
        (0..self.n_sats()).flat_map(|n| self.observation(world, view, n)).collect()
    }

    /// Levels when there is no choice to make: none, or beam `k` at the only level.
    fn fixed_levels(&self) -> Vec<usize> {
        if self.power_levels.len() == 1 {
            vec![0; self.n_beams]
        } else {
            Vec::new()
        }
    }

    fn chosen_levels<'a>(&self, action: &'a AgentAction) -> &'a [usize] {
        if level_head_width(&self.power_levels) > 0 {
            &action.levels
        } else {
            &[]
        }
    }

    fn level_logits<'a>(&self, out: &'a [f64], beam: usize) -> &'a [f64] {
        let l = self.power_levels.len();
        let start = self.cells_per_sat + beam * l;
        &out[start..start + l]
    }

    /// Samples an action from actor output `out`.
    pub fn sample(&self, out: &[f64], rng: &mut impl Rng) -> AgentAction {
        let (order, mut log_prob) = sample_k_distinct(&out[..self.cells_per_sat], self.n_beams, rng);
        let mut levels = self.fixed_levels();
        if level_head_width(&self.power_levels) > 0 {
            levels.clear();
            for beam in 0..self.n_beams {
                let logits = self.level_logits(out, beam);
                let p = masked_softmax(logits, &vec![true; logits.len()]);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = p.len() - 1;
                for (i, pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                log_prob += p[pick].ln();
                levels.push(pick);
            }
        }
        AgentAction {
            order,
            levels,
            log_prob,
        }
    }

    /// Highest-scoring action (ties to the lowest index).
    pub fn greedy(&self, out: &[f64]) -> AgentAction {
        let order = top_k(&out[..self.cells_per_sat], self.n_beams);
        let levels = if level_head_width(&self.power_levels) == 0 {
            self.fixed_levels()
        } else {
            (0..self.n_beams).map(|b| top_k(self.level_logits(out, b), 1)[0]).collect()
        };
        AgentAction {
            order,
            levels,
            log_prob: 0.0,
        }
    }

    /// Gradient of the action's log-probability with respect to the actor output.
    pub fn grad_log_prob(&self, out: &[f64], action: &AgentAction) -> Vec<f64> {
        let mut g = grad_log_prob_ordered(&out[..self.cells_per_sat], &action.order);
        for (beam, &lvl) in self.chosen_levels(action).iter().enumerate() {
            let logits = self.level_logits(out, beam);
            let p = masked_softmax(logits, &vec![true; logits.len()]);
            for (i, pi) in p.iter().enumerate() {
                g.push(if i == lvl { 1.0 - pi } else { -pi });
            }
        }
        g
    }

    /// Log-probability of `action` under actor output `out`.
    pub fn log_prob(&self, out: &[f64], action: &AgentAction) -> f64 {
        let mut lp = crate::numcore::sampling::log_prob_ordered(&out[..self.cells_per_sat], &action.order);
        for (beam, &lvl) in self.chosen_levels(action).iter().enumerate() {
            let logits = self.level_logits(out, beam);
            lp += masked_softmax(logits, &vec![true; logits.len()])[lvl].ln();
        }
        lp
    }

    /// Beam powers implied by the chosen levels (cells ascending = beam order).
    pub fn powers(&self, world: &World, action: &AgentAction) -> PowerAlloc {
        if self.power_levels.is_empty() {
            return baselines::fp(&world.scenario);
        }
        let fractions: Vec<f64> = action.levels.iter().map(|&l| self.power_levels[l]).collect();
        project_powers(&fractions, world.scenario.p_max_w, world.scenario.p_tot_w)
    }

    fn sorted_cells(action: &AgentAction) -> Vec<usize> {
        let mut s = action.order.clone();
        s.sort_unstable();
        s
    }

    /// Per-agent reward for a finished slot.
    pub fn rewards(&self, world: &World, m: &SlotMetrics) -> Vec<f64> {
        match self.reward {
            RewardKind::Global => vec![m.bh_reward; self.n_sats()],
            RewardKind::PerSatellite => m
                .pa_rewards
                .iter()
                .map(|r| r - world.scenario.penalty_coeff * m.violations as f64)
                .collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(path, CHECKPOINT_KIND, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        checkpoint::load(path, CHECKPOINT_KIND)
    }

    /// Every network in a fixed order, for averaging.
    fn nets(&self) -> Vec<&Mlp> {
        self.actors.iter().chain(&self.critics).chain(std::iter::once(&self.shared_critic)).collect()
    }

    fn nets_mut(&mut self) -> Vec<&mut Mlp> {
        self.actors
            .iter_mut()
            .chain(self.critics.iter_mut())
            .chain(std::iter::once(&mut self.shared_critic))
            .collect()
    }

    /// Replaces every parameter with the element-wise mean over `models`.
    pub fn average_from(&mut self, models: &[&Ma3cModel]) {
        let per_model: Vec<Vec<&Mlp>> = models.iter().map(|m| m.nets()).collect();
        for (i, net) in self.nets_mut().into_iter().enumerate() {
            let sets: Vec<&[f64]> = per_model.iter().map(|nets| nets[i].params.as_slice()).collect();
            net.params = mean_params(&sets);
        }
    }
}

/// Extra actor outputs per beam. A single level is no choice, so it gets no head.
fn level_head_width(levels: &[f64]) -> usize {
    if levels.len() > 1 {
        levels.len()
    } else {
        0
    }
}

fn critic_net(world: &World, cfg: &Ma3cConfig, rng: &mut impl Rng) -> Mlp {
    let state = 2 * world.cells_per_sat() * world.n_sats();
    Mlp::new(
        &[state, cfg.critic_hidden, cfg.critic_hidden, 1],
        &[Activation::Tanh, Activation::Tanh, Activation::Linear],
        rng,
    )
}

/// `r + gamma * V(s') - V(s)`.
pub fn td_error(r: f64, gamma: f64, v_next: f64, v: f64) -> f64 {
    r + gamma * v_next - v
}

/// Trained actors used as a BH policy (or a full slot policy when the model
/// carries power levels).
#[derive(Debug, Clone)]
pub struct Ma3cPolicy {
    pub model: Ma3cModel,
    /// Greedy top-K instead of sampling.
    pub greedy: bool,
    last: Vec<AgentAction>,
}

impl Ma3cPolicy {
    pub fn new(model: Ma3cModel, greedy: bool) -> Self {
        Self {
            model,
            greedy,
            last: Vec::new(),
        }
    }

    /// Actions of every agent for `view`.
    pub fn act(&self, world: &World, view: &BhView, rng: &mut ChaCha8Rng) -> Vec<AgentAction> {
        (0..self.model.n_sats())
            .map(|n| {
                let out = self.model.actors[n].predict(&self.model.observation(world, view, n));
                if self.greedy {
                    self.model.greedy(&out)
                } else {
                    self.model.sample(&out, rng)
                }
            })
            .collect()
    }
}

impl BhPolicy for Ma3cPolicy {
    fn decide(&mut self, world: &World, view: &BhView, rng: &mut ChaCha8Rng) -> BhPattern {
        self.last = self.act(world, view, rng);
        let local: Vec<Vec<usize>> = self.last.iter().map(Ma3cModel::sorted_cells).collect();
        world.pattern_from_local(&local)
    }
}

impl SlotPolicy for Ma3cPolicy {
    fn decide(&mut self, world: &World, view: &BhView, rng: &mut ChaCha8Rng) -> BhPattern {
        BhPolicy::decide(self, world, view, rng)
    }

    fn allocate(
        &mut self,
        world: &World,
        _pattern: &BhPattern,
        _states: &[PaState],
        _rng: &mut ChaCha8Rng,
    ) -> Vec<PowerAlloc> {
        self.last.iter().map(|a| self.model.powers(world, a)).collect()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub worker: usize,
    /// Mean per-slot reward (averaged over agents).
    pub reward: f64,
    /// Mean squared TD error of the local critics.
    pub loss: f64,
    pub q_gap: f64,
    pub j_gap: f64,
    pub violations: usize,
}

pub fn write_training_csv<W: Write>(logs: &[EpisodeLog], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for l in logs {
        w.serialize(l)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Ma3cModel,
    /// Round-major, worker-minor.
    pub logs: Vec<EpisodeLog>,
    /// Worker models right before the last averaging step.
    pub last_worker_models: Vec<Ma3cModel>,
}

/// Optimizer state owned by one worker across rounds.
#[derive(Debug, Clone)]
struct Worker {
    id: usize,
    model: Ma3cModel,
    actor_opts: Vec<Adam>,
    critic_opts: Vec<Adam>,
    shared_opt: Adam,
    rng: ChaCha8Rng,
}

/// Gradient buffers matching a model's networks.
struct Grads {
    actors: Vec<Vec<f64>>,
    critics: Vec<Vec<f64>>,
    shared: Vec<f64>,
    steps: usize,
}

impl Grads {
    fn zeros(m: &Ma3cModel) -> Self {
        Self {
            actors: m.actors.iter().map(|a| vec![0.0; a.n_params()]).collect(),
            critics: m.critics.iter().map(|c| vec![0.0; c.n_params()]).collect(),
            shared: vec![0.0; m.shared_critic.n_params()],
            steps: 0,
        }
    }

    fn clear(&mut self) {
        for g in self.actors.iter_mut().chain(self.critics.iter_mut()) {
            g.fill(0.0);
        }
        self.shared.fill(0.0);
        self.steps = 0;
    }
}

/// A slot whose successor state is not known yet.
struct Pending {
    state: Vec<f64>,
    actor_caches: Vec<crate::numcore::mlp::MlpCache>,
    actions: Vec<AgentAction>,
    rewards: Vec<f64>,
}

impl Worker {
    fn new(id: usize, model: Ma3cModel, cfg: &Ma3cConfig) -> Self {
        Self {
            id,
            actor_opts: model.actors.iter().map(|a| Adam::new(a.n_params(), cfg.actor_lr)).collect(),
            critic_opts: model.critics.iter().map(|c| Adam::new(c.n_params(), cfg.critic_lr)).collect(),
            shared_opt: Adam::new(model.shared_critic.n_params(), cfg.shared_lr),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1, id as u64)),
            model,
        }
    }

    /// Accumulates the actor, critic and shared-critic gradients of one
    /// transition; returns the mean squared local TD error.
    fn accumulate(&self, p: &Pending, next_state: &[f64], cfg: &Ma3cConfig, g: &mut Grads) -> f64 {
        let m = &self.model;
        let n = m.n_sats();
        let mut deltas = Vec::with_capacity(n);
        for i in 0..n {
            let cache = m.critics[i].forward(&p.state);
            let v = cache.output()[0];
            let v_next = m.critics[i].predict(next_state)[0];
            let delta = td_error(p.rewards[i], cfg.gamma, v_next, v);
            // Semi-gradient of 0.5 * delta^2.
            m.critics[i].backward(&cache, &[-delta], &mut g.critics[i]);
            let out = p.actor_caches[i].output();
            let mut d_out: Vec<f64> = m.grad_log_prob(out, &p.actions[i]).iter().map(|x| -delta * x).collect();
            if cfg.entropy_coeff > 0.0 {
                add_entropy_grad(&mut d_out, &out[..m.cells_per_sat], cfg.entropy_coeff);
            }
            m.actors[i].backward(&p.actor_caches[i], &d_out, &mut g.actors[i]);
            deltas.push(delta);
        }
        let mean_delta = deltas.iter().sum::<f64>() / n as f64;
        let cache = m.shared_critic.forward(&p.state);
        m.shared_critic.backward(&cache, &[-mean_delta], &mut g.shared);
        g.steps += 1;
        deltas.iter().map(|d| d * d).sum::<f64>() / n as f64
    }

    fn apply(&mut self, g: &mut Grads, clip: f64) {
        if g.steps == 0 {
            return;
        }
        let scale = 1.0 / g.steps as f64;
        let m = &mut self.model;
        for ((net, opt), grad) in m.actors.iter_mut().zip(&mut self.actor_opts).zip(&mut g.actors) {
            grad.iter_mut().for_each(|x| *x *= scale);
            clip_norm(grad, clip);
            opt.step(&mut net.params, grad);
        }
        for ((net, opt), grad) in m.critics.iter_mut().zip(&mut self.critic_opts).zip(&mut g.critics) {
            grad.iter_mut().for_each(|x| *x *= scale);
            clip_norm(grad, clip);
            opt.step(&mut net.params, grad);
        }
        g.shared.iter_mut().for_each(|x| *x *= scale);
        clip_norm(&mut g.shared, clip);
        self.shared_opt.step(&mut m.shared_critic.params, &g.shared);
        g.clear();
    }

    fn run_episode(
        &mut self,
        world: &World,
        forecaster: &Forecaster,
        episode: usize,
        cfg: &Ma3cConfig,
    ) -> Result<EpisodeLog> {
        let mut env = Env::new(world, forecaster, derive_seed(cfg.seed, 2, episode as u64))?;
        let mut grads = Grads::zeros(&self.model);
        let mut pending: Option<Pending> = None;
        let (mut reward_sum, mut loss_sum, mut q_sum, mut j_sum, mut viol) = (0.0, 0.0, 0.0, 0.0, 0);
        let mut transitions = 0usize;
        while !env.done() {
            let view = env.begin_slot();
            let state = self.model.global_state(world, &view);
            if let Some(p) = pending.take() {
                loss_sum += self.accumulate(&p, &state, cfg, &mut grads);
                transitions += 1;
                if grads.steps >= cfg.rollout {
                    self.apply(&mut grads, cfg.grad_clip);
                }
            }
            let mut caches = Vec::with_capacity(self.model.n_sats());
            let mut actions = Vec::with_capacity(self.model.n_sats());
            for n in 0..self.model.n_sats() {
                let cache = self.model.actors[n].forward(&self.model.observation(world, &view, n));
                actions.push(self.model.sample(cache.output(), &mut self.rng));
                caches.push(cache);
            }
            let local: Vec<Vec<usize>> = actions.iter().map(Ma3cModel::sorted_cells).collect();
            let pattern = world.pattern_from_local(&local);
            let powers: Vec<PowerAlloc> = actions.iter().map(|a| self.model.powers(world, a)).collect();
            let m = env.end_slot(&pattern, &powers)?;
            let rewards = self.model.rewards(world, &m);
            reward_sum += rewards.iter().sum::<f64>() / rewards.len() as f64;
            q_sum += m.q_gap;
            j_sum += m.j_gap;
            viol += m.violations;
            pending = Some(Pending {
                state,
                actor_caches: caches,
                actions,
                rewards,
            });
        }
        if let Some(p) = pending.take() {
            let next = self.model.global_state(world, &env.peek_view());
            loss_sum += self.accumulate(&p, &next, cfg, &mut grads);
            transitions += 1;
        }
        self.apply(&mut grads, cfg.grad_clip);
        let t = env.slot().max(1) as f64;
        Ok(EpisodeLog {
            episode,
            worker: self.id,
            reward: reward_sum / t,
            loss: loss_sum / transitions.max(1) as f64,
            q_gap: q_sum / t,
            j_gap: j_sum / t,
            violations: viol,
        })
    }
}

fn add_entropy_grad(d_out: &mut [f64], logits: &[f64], coeff: f64) {
    // Descent direction for -coeff * H(softmax(logits)).
    let p = masked_softmax(logits, &vec![true; logits.len()]);
    let h: f64 = -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>();
    for (i, pi) in p.iter().enumerate() {
        if *pi > 0.0 {
            d_out[i] += coeff * pi * (pi.ln() + h);
        }
    }
}

/// Trains from a fresh model.
pub fn train(world: &World, forecaster: &Forecaster, cfg: &Ma3cConfig, mode: Execution) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0, 0));
    let model = Ma3cModel::new(world, cfg, &mut rng);
    train_from(world, forecaster, model, cfg, mode)
}

/// Trains starting from `model`. Episodes are split into rounds of
/// `workers * sync_every`; within a round workers run concurrently on
/// private copies, then the global model becomes their mean.
pub fn train_from(
    world: &World,
    forecaster: &Forecaster,
    model: Ma3cModel,
    cfg: &Ma3cConfig,
    mode: Execution,
) -> Result<TrainOutcome> {
    let n_workers = cfg.workers.max(1);
    let sync = cfg.sync_every.max(1);
    let mut global = model;
    let mut workers: Vec<Worker> = (0..n_workers).map(|i| Worker::new(i, global.clone(), cfg)).collect();
    let mut logs = Vec::with_capacity(cfg.episodes);
    let mut last_worker_models = Vec::new();
    let mut next_episode = 0usize;
    while next_episode < cfg.episodes {
        let remaining = cfg.episodes - next_episode;
        let round = remaining.min(n_workers * sync);
        // Worker i runs episodes next_episode + i, + i + n_workers, ...
        let plan: Vec<Vec<usize>> = (0..n_workers)
            .map(|i| (i..round).step_by(n_workers).map(|j| next_episode + j).collect())
            .collect();
        for w in &mut workers {
            w.model.clone_from(&global);
        }
        let results = exec::map(mode, workers.into_iter().zip(plan).collect(), |(mut w, eps)| {
            let mut out = Vec::with_capacity(eps.len());
            for e in eps {
                out.push(w.run_episode(world, forecaster, e, cfg));
            }
            (w, out)
        });
        workers = Vec::with_capacity(n_workers);
        let mut round_logs = Vec::new();
        for (w, out) in results {
            for r in out {
                round_logs.push(r?);
            }
            workers.push(w);
        }
        round_logs.sort_by_key(|l| l.episode);
        logs.extend(round_logs);
        let active: Vec<&Ma3cModel> = workers
            .iter()
            .filter(|w| w.id < round)
            .map(|w| &w.model)
            .collect();
        global.average_from(&active);
        last_worker_models = active.into_iter().cloned().collect();
        next_episode += round;
    }
    Ok(TrainOutcome {
        model: global,
        logs,
        last_worker_models,
    })
}
