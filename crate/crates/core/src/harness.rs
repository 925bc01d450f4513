//! Episode loop, named policies, evaluation and parameter sweeps.

use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{DemandPower, FixedPower, GreedyBh, PeriodicBh, QueueBh, RandomBh};
use crate::bh::{Ma3cModel, Ma3cPolicy};
use crate::env::{Env, World};
use crate::error::{Error, Result};
use crate::exec::{self, derive_seed, Execution};
use crate::metrics::{constraint_check, EpisodeSummary, MetricsRow, SlotMetrics, SlotRow};
use crate::pa::{MapaModel, MapaPolicy};
use crate::policy::{BhPolicy, Composed, SlotPolicy};
use crate::predictor::Forecaster;
use crate::scenario::Scenario;
use crate::traffic::hotspot_mask;

/// Everything one episode produced.
#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub slots: Vec<SlotMetrics>,
    pub summary: EpisodeSummary,
    /// Slots whose decision broke a hard constraint (binary, beam count,
    /// coverage, beam cap, budget). Always zero for the shipped policies.
    pub hard_violations: usize,
}

impl EpisodeRun {
    pub fn metrics_rows(&self, world: &World) -> Vec<MetricsRow> {
        self.slots.iter().flat_map(|m| m.rows(&world.geom)).collect()
    }

    pub fn slot_rows(&self) -> Vec<SlotRow> {
        self.slots.iter().map(SlotMetrics::slot_row).collect()
    }
}

/// Runs one episode. `seed` fixes both the traffic and the policy's random
/// stream, so equal inputs give bit-identical results.
pub fn run_episode(world: &World, forecaster: &Forecaster, policy: &mut dyn SlotPolicy, seed: u64) -> Result<EpisodeRun> {
    let env = Env::new(world, forecaster, seed)?;
    run_env(env, policy, seed)
}

/// As [`run_episode`] on a given environment.
pub fn run_env(mut env: Env<'_>, policy: &mut dyn SlotPolicy, seed: u64) -> Result<EpisodeRun> {
    let world = env.world;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 40, 0));
    let mut slots = Vec::with_capacity(env.trace.n_slots());
    let mut hard = 0;
    while !env.done() {
        let view = env.begin_slot();
        let pattern = policy.decide(world, &view, &mut rng);
        let states = env.pa_states(&pattern);
        let powers = policy.allocate(world, &pattern, &states, &mut rng);
        if constraint_check(&pattern, &powers, &world.scenario, &world.geom).hard() > 0 {
            hard += 1;
        }
        slots.push(env.end_slot(&pattern, &powers)?);
    }
    let summary = EpisodeSummary::from_slots(&slots, &world.scenario, &world.norms);
    Ok(EpisodeRun {
        slots,
        summary,
        hard_violations: hard,
    })
}

/// Joint schemes addressable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    /// Learned BH with learned per-beam power.
    BhpaLbdp,
    RbhFp,
    RbhDp,
    /// Learned BH with equal power.
    Fpa,
    /// Discrete joint learner.
    Dpa,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [Self::BhpaLbdp, Self::RbhFp, Self::RbhDp, Self::Fpa, Self::Dpa];

    pub fn name(self) -> &'static str {
        match self {
            Self::BhpaLbdp => "bhpa-lbdp",
            Self::RbhFp => "rbh-fp",
            Self::RbhDp => "rbh-dp",
            Self::Fpa => "fpa",
            Self::Dpa => "dpa",
        }
    }
}

impl FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownPolicy(s.to_string()))
    }
}

/// BH-only comparators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BhMethod {
    Ma3c,
    Greedy,
    Random,
    Periodic,
    Queue,
}

impl BhMethod {
    pub const ALL: [BhMethod; 5] = [Self::Ma3c, Self::Greedy, Self::Random, Self::Periodic, Self::Queue];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ma3c => "ma3c",
            Self::Greedy => "g",
            Self::Random => "r",
            Self::Periodic => "p",
            Self::Queue => "q",
        }
    }
}

impl FromStr for BhMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownPolicy(s.to_string()))
    }
}

/// Trained models a named policy may need.
#[derive(Debug, Clone, Default)]
pub struct Checkpoints {
    pub bh: Option<Ma3cModel>,
    pub pa: Option<MapaModel>,
    pub dpa: Option<Ma3cModel>,
    /// Evaluate learned BH with top-K instead of sampling.
    pub greedy: bool,
}

fn need<'a, T>(m: &'a Option<T>, what: &str, policy: &str) -> Result<&'a T> {
    m.as_ref()
        .ok_or_else(|| Error::Checkpoint(format!("policy `{policy}` needs a {what} checkpoint")))
}

pub fn build_bh(method: BhMethod, ck: &Checkpoints) -> Result<Box<dyn BhPolicy>> {
    Ok(match method {
        BhMethod::Ma3c => Box::new(Ma3cPolicy::new(need(&ck.bh, "BH", "ma3c")?.clone(), ck.greedy)),
        BhMethod::Greedy => Box::new(GreedyBh),
        BhMethod::Random => Box::new(RandomBh),
        BhMethod::Periodic => Box::new(PeriodicBh),
        BhMethod::Queue => Box::new(QueueBh),
    })
}

pub fn build_policy(kind: PolicyKind, ck: &Checkpoints) -> Result<Box<dyn SlotPolicy>> {
    let name = kind.name();
    let learned_bh = || -> Result<Ma3cPolicy> { Ok(Ma3cPolicy::new(need(&ck.bh, "BH", name)?.clone(), ck.greedy)) };
    Ok(match kind {
        PolicyKind::BhpaLbdp => Box::new(Composed {
            bh: learned_bh()?,
            pa: MapaPolicy(need(&ck.pa, "PA", name)?.clone()),
        }),
        PolicyKind::Fpa => Box::new(Composed {
            bh: learned_bh()?,
            pa: FixedPower,
        }),
        PolicyKind::RbhFp => Box::new(Composed {
            bh: RandomBh,
            pa: FixedPower,
        }),
        PolicyKind::RbhDp => Box::new(Composed {
            bh: RandomBh,
            pa: DemandPower,
        }),
        PolicyKind::Dpa => Box::new(Ma3cPolicy::new(need(&ck.dpa, "DPA", name)?.clone(), ck.greedy)),
    })
}

/// Makes a fresh policy instance per episode.
pub type PolicyFactory = Arc<dyn Fn() -> Result<Box<dyn SlotPolicy>> + Send + Sync>;

pub fn named_factory(kind: PolicyKind, ck: Arc<Checkpoints>) -> PolicyFactory {
    Arc::new(move || build_policy(kind, &ck))
}

/// Per-episode evaluation result, flat for CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub policy: String,
    pub seed: u64,
    pub episode: usize,
    pub throughput_bits: f64,
    pub arrived_bits: f64,
    pub dropped_bits: f64,
    pub mean_q_gap: f64,
    pub mean_j_gap: f64,
    pub mean_delay_ms: f64,
    pub violations: usize,
    pub bh_reward: f64,
    pub pa_reward: f64,
    pub p0: f64,
}

impl EpisodeRecord {
    pub const METRICS: [&'static str; 10] = [
        "throughput_bits",
        "arrived_bits",
        "dropped_bits",
        "mean_q_gap",
        "mean_j_gap",
        "mean_delay_ms",
        "violations",
        "bh_reward",
        "pa_reward",
        "p0",
    ];

    pub fn new(policy: &str, seed: u64, episode: usize, s: &EpisodeSummary, slot_s: f64) -> Self {
        Self {
            policy: policy.to_string(),
            seed,
            episode,
            throughput_bits: s.throughput_bits,
            arrived_bits: s.arrived_bits,
            dropped_bits: s.dropped_bits,
            mean_q_gap: s.mean_q_gap,
            mean_j_gap: s.mean_j_gap,
            mean_delay_ms: s.mean_delay_slots * slot_s * 1e3,
            violations: s.violations,
            bh_reward: s.bh_reward,
            pa_reward: s.pa_reward,
            p0: s.p0,
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "throughput_bits" => self.throughput_bits,
            "arrived_bits" => self.arrived_bits,
            "dropped_bits" => self.dropped_bits,
            "mean_q_gap" => self.mean_q_gap,
            "mean_j_gap" => self.mean_j_gap,
            "mean_delay_ms" => self.mean_delay_ms,
            "violations" => self.violations as f64,
            "bh_reward" => self.bh_reward,
            "pa_reward" => self.pa_reward,
            "p0" => self.p0,
            _ => return None,
        })
    }
}

/// Mean and population standard deviation of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub policy: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn summarize(policy: &str, records: &[EpisodeRecord]) -> Vec<Stat> {
    EpisodeRecord::METRICS
        .iter()
        .map(|&metric| {
            let xs: Vec<f64> = records.iter().filter_map(|r| r.metric(metric)).collect();
            let (mean, std) = mean_std(&xs);
            Stat {
                policy: policy.to_string(),
                metric: metric.to_string(),
                mean,
                std,
                n: xs.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub records: Vec<EpisodeRecord>,
    /// Same order as `records`.
    pub summaries: Vec<EpisodeSummary>,
    pub stats: Vec<Stat>,
}

impl Evaluation {
    pub fn stat(&self, metric: &str) -> Option<&Stat> {
        self.stats.iter().find(|s| s.metric == metric)
    }

    pub fn mean(&self, metric: &str) -> f64 {
        self.stat(metric).map_or(f64::NAN, |s| s.mean)
    }
}

/// Seed of episode `episode` under evaluation seed `seed`.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    derive_seed(seed, 30, episode as u64)
}

/// `n_episodes` episodes for every seed, each with a fresh policy.
pub fn evaluate(
    world: &World,
    forecaster: &Forecaster,
    policy: &str,
    factory: &PolicyFactory,
    n_episodes: usize,
    seeds: &[u64],
    mode: Execution,
) -> Result<Evaluation> {
    let jobs: Vec<(u64, usize)> = seeds.iter().flat_map(|&s| (0..n_episodes).map(move |e| (s, e))).collect();
    let runs = exec::map(mode, jobs, |(seed, ep)| -> Result<(u64, usize, EpisodeSummary)> {
        let mut p = factory()?;
        let run = run_episode(world, forecaster, p.as_mut(), episode_seed(seed, ep))?;
        Ok((seed, ep, run.summary))
    });
    let mut records = Vec::with_capacity(runs.len());
    let mut summaries = Vec::with_capacity(runs.len());
    for r in runs {
        let (seed, ep, s) = r?;
        records.push(EpisodeRecord::new(policy, seed, ep, &s, world.scenario.slot_s));
        summaries.push(s);
    }
    let stats = summarize(policy, &records);
    Ok(Evaluation {
        records,
        summaries,
        stats,
    })
}

/// Per-satellite load and throughput of one BH method (FP power), averaged
/// over evaluation episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub sat: usize,
    pub mean_load_bits: f64,
    pub throughput_bits: f64,
}

pub fn compare_bh(
    world: &World,
    forecaster: &Forecaster,
    methods: &[BhMethod],
    ck: Arc<Checkpoints>,
    n_episodes: usize,
    seeds: &[u64],
    mode: Execution,
) -> Result<(Vec<CompareRow>, Vec<Evaluation>)> {
    let mut rows = Vec::new();
    let mut evals = Vec::new();
    for &m in methods {
        build_bh(m, &ck)?;
        let ck = ck.clone();
        let factory: PolicyFactory = Arc::new(move || -> Result<Box<dyn SlotPolicy>> {
            Ok(Box::new(Composed {
                bh: build_bh(m, &ck)?,
                pa: FixedPower,
            }))
        });
        let ev = evaluate(world, forecaster, m.name(), &factory, n_episodes, seeds, mode)?;
        let count = ev.summaries.len().max(1) as f64;
        for n in 0..world.n_sats() {
            rows.push(CompareRow {
                method: m.name().to_string(),
                sat: n,
                mean_load_bits: ev.summaries.iter().map(|s| s.sat_mean_load_bits[n]).sum::<f64>() / count,
                throughput_bits: ev.summaries.iter().map(|s| s.sat_throughput_bits[n]).sum::<f64>() / count,
            });
        }
        evals.push(ev);
    }
    Ok((rows, evals))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Alpha,
    Beta,
    /// Mean offered load over all cells, in Mbit/s.
    TotalDemand,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::Alpha => "alpha",
            Self::Beta => "beta",
            Self::TotalDemand => "total_demand",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(Self::Alpha),
            "beta" => Ok(Self::Beta),
            "total_demand" => Ok(Self::TotalDemand),
            _ => Err(Error::InvalidScenario(format!("unknown sweep axis `{s}`"))),
        }
    }
}

/// Long-run mean offered load of a scenario, in Mbit/s.
pub fn offered_load_mbps(s: &Scenario) -> Result<f64> {
    let mask = hotspot_mask(s, &s.traffic)?;
    let hot = mask.iter().filter(|&&h| h).count() as f64;
    let cold = mask.len() as f64 - hot;
    let bits = hot * s.traffic.mean_hot_bits + cold * s.traffic.mean_cold_bits;
    Ok(bits / s.slot_s / 1e6)
}

/// `template` with one axis set to `value`. Demand scales the hotspot and
/// ordinary means together, keeping their ratio.
pub fn apply_axis(template: &Scenario, axis: SweepAxis, value: f64) -> Result<Scenario> {
    let mut s = template.clone();
    match axis {
        SweepAxis::Alpha => s.alpha = value,
        SweepAxis::Beta => s.beta = value,
        SweepAxis::TotalDemand => {
            let now = offered_load_mbps(template)?;
            if now <= 0.0 {
                return Err(Error::InvalidTraffic("cannot rescale a zero-demand template".into()));
            }
            let f = value / now;
            s.traffic.mean_hot_bits *= f;
            s.traffic.mean_cold_bits *= f;
        }
    }
    s.validate()?;
    Ok(s)
}

/// Builds the per-episode policy factory for one sweep point (training on
/// that point's world if the source wants to).
pub type PolicySource = Box<dyn Fn(&World) -> Result<PolicyFactory> + Sync>;

/// One (point, policy) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub policy: String,
    pub throughput_bits: f64,
    pub throughput_std: f64,
    pub mean_q_gap: f64,
    pub mean_j_gap: f64,
    pub mean_delay_ms: f64,
    pub bh_reward: f64,
    pub pa_reward: f64,
    pub p0: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn sweep(
    template: &Scenario,
    axis: SweepAxis,
    values: &[f64],
    policies: &[(String, PolicySource)],
    forecaster: &Forecaster,
    n_episodes: usize,
    seeds: &[u64],
    mode: Execution,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::EmptySweep(axis.name().to_string()));
    }
    let geom = crate::geometry::Geometry::build(template)?;
    let mut rows = Vec::new();
    for &v in values {
        let world = World::with_geometry(apply_axis(template, axis, v)?, geom.clone())?;
        for (name, source) in policies {
            let factory = source(&world)?;
            let ev = evaluate(&world, forecaster, name, &factory, n_episodes, seeds, mode)?;
            rows.push(SweepRow {
                axis: axis.name().to_string(),
                value: v,
                policy: name.clone(),
                throughput_bits: ev.mean("throughput_bits"),
                throughput_std: ev.stat("throughput_bits").map_or(0.0, |s| s.std),
                mean_q_gap: ev.mean("mean_q_gap"),
                mean_j_gap: ev.mean("mean_j_gap"),
                mean_delay_ms: ev.mean("mean_delay_ms"),
                bh_reward: ev.mean("bh_reward"),
                pa_reward: ev.mean("pa_reward"),
                p0: ev.mean("p0"),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        for m in BhMethod::ALL {
            assert_eq!(m.name().parse::<BhMethod>().unwrap(), m);
        }
        assert!(matches!("nope".parse::<PolicyKind>(), Err(Error::UnknownPolicy(_))));
    }

    #[test]
    fn single_sample_has_zero_spread() {
        assert_eq!(mean_std(&[3.5]), (3.5, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    #[test]
    fn empty_sweep_is_an_error() {
        let r = sweep(
            &Scenario::small(),
            SweepAxis::Alpha,
            &[],
            &[],
            &Forecaster::Persistence,
            1,
            &[0],
            Execution::Sequential,
        );
        assert!(matches!(r, Err(Error::EmptySweep(a)) if a == "alpha"));
    }

    #[test]
    fn demand_axis_hits_the_target() {
        let s = Scenario::small();
        let t = apply_axis(&s, SweepAxis::TotalDemand, 1234.0).unwrap();
        assert!((offered_load_mbps(&t).unwrap() - 1234.0).abs() < 1e-9);
        let ratio = t.traffic.mean_hot_bits / t.traffic.mean_cold_bits;
        assert!((ratio - s.traffic.mean_hot_bits / s.traffic.mean_cold_bits).abs() < 1e-9);
    }

    #[test]
    fn learned_policies_need_checkpoints() {
        let ck = Checkpoints::default();
        assert!(build_policy(PolicyKind::RbhFp, &ck).is_ok());
        assert!(matches!(build_policy(PolicyKind::Fpa, &ck), Err(Error::Checkpoint(_))));
    }
}
