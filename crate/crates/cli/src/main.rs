use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use leo_bhpa::baselines::RandomBh;
use leo_bhpa::bh::{self, Ma3cConfig, Ma3cModel, Ma3cPolicy};
use leo_bhpa::dpa;
use leo_bhpa::env::World;
use leo_bhpa::error::Error;
use leo_bhpa::exec::{derive_seed, Execution};
use leo_bhpa::harness::{
    self, compare_bh, evaluate, named_factory, run_episode, BhMethod, Checkpoints, PolicyKind, PolicySource,
    SweepAxis,
};
use leo_bhpa::metrics::{write_csv, write_metrics_csv};
use leo_bhpa::pa::{self, MapaConfig, MapaModel};
use leo_bhpa::policy::BhPolicy;
use leo_bhpa::predictor::{train_predictor, Forecaster, PredictorConfig, TrafficPredictor};
use leo_bhpa::scenario::Scenario;
use leo_bhpa::traffic::generate_trace;

#[derive(Parser)]
#[command(name = "bhpa", version, about = "Beam hopping and power allocation for multi-satellite LEO downlinks")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scenario files.
    Scenario {
        #[command(subcommand)]
        action: ScenarioCmd,
    },
    /// Train a predictor or a policy.
    Train {
        #[command(subcommand)]
        what: TrainCmd,
    },
    /// Evaluate a named joint policy.
    Eval(EvalArgs),
    /// Evaluate policies across values of one scenario parameter.
    Sweep(SweepArgs),
    /// Per-satellite load and throughput of BH methods under equal power.
    CompareBh(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Reference,
    Small,
    SingleSat,
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Write a preset scenario as JSON.
    Gen {
        #[arg(long, value_enum, default_value = "reference")]
        preset: Preset,
        /// Overrides the scenario's layout and hotspot seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Per-episode (or per-epoch) training log.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Start from the reduced desk-scale hyperparameters.
    #[arg(long)]
    desk: bool,
    /// LSTM forecaster checkpoint; persistence when absent.
    #[arg(long)]
    predictor: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TrainCmd {
    /// LSTM arrival forecaster, one model per satellite. `--episodes` is
    /// the number of generated training traces.
    Predictor {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        /// Slots per training trace.
        #[arg(long, default_value_t = 256)]
        slots: usize,
    },
    /// MA3C beam hopping.
    Bh {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// MADDPG power allocation under a fixed BH policy (random if no
    /// checkpoint is given).
    Pa {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bh_ckpt: Option<PathBuf>,
    },
    /// Joint cell and discrete power-level learner.
    Dpa {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Args)]
struct CkptArgs {
    #[arg(long)]
    bh_ckpt: Option<PathBuf>,
    #[arg(long)]
    pa_ckpt: Option<PathBuf>,
    #[arg(long)]
    dpa_ckpt: Option<PathBuf>,
    /// Learned BH picks the top-K cells instead of sampling.
    #[arg(long)]
    greedy: bool,
}

impl CkptArgs {
    fn load(&self) -> Result<Checkpoints, Error> {
        Ok(Checkpoints {
            bh: self.bh_ckpt.as_ref().map(Ma3cModel::load).transpose()?,
            pa: self.pa_ckpt.as_ref().map(MapaModel::load).transpose()?,
            dpa: self.dpa_ckpt.as_ref().map(Ma3cModel::load).transpose()?,
            greedy: self.greedy,
        })
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// One of bhpa-lbdp, rbh-fp, rbh-dp, fpa, dpa.
    #[arg(long)]
    policy: String,
    /// Comma-separated evaluation seeds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seed: Vec<u64>,
    /// Episodes per seed.
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    #[command(flatten)]
    ckpt: CkptArgs,
    #[arg(long)]
    predictor: Option<PathBuf>,
    /// Per-episode records.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Mean and standard deviation per metric.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-slot, per-cell metrics of the first episode of the first seed.
    #[arg(long)]
    slots_csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// alpha, beta or total_demand (Mbit/s offered over all cells).
    #[arg(long)]
    axis: String,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Comma-separated policy names.
    #[arg(long, value_delimiter = ',', required = true)]
    policy: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seed: Vec<u64>,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    #[command(flatten)]
    ckpt: CkptArgs,
    #[arg(long)]
    predictor: Option<PathBuf>,
    #[arg(long)]
    csv: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "ma3c,g,r,p,q")]
    methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seed: Vec<u64>,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    #[command(flatten)]
    ckpt: CkptArgs,
    #[arg(long)]
    predictor: Option<PathBuf>,
    /// Per-satellite rows.
    #[arg(long)]
    csv: PathBuf,
    /// Per-episode records of every method.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure reported as one JSON line on stderr.
struct Failure {
    kind: String,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(Error::from)?))
}

fn forecaster(path: Option<&PathBuf>) -> CliResult<Forecaster> {
    Ok(match path {
        Some(p) => Forecaster::Lstm(TrafficPredictor::load(p)?),
        None => Forecaster::Persistence,
    })
}

fn world(path: &Path) -> CliResult<World> {
    Ok(World::new(Scenario::load(path)?)?)
}

fn ma3c_config(common: &Common, workers: Option<usize>) -> Ma3cConfig {
    let base = if common.desk { Ma3cConfig::desk() } else { Ma3cConfig::default() };
    Ma3cConfig {
        episodes: common.episodes.unwrap_or(base.episodes),
        workers: workers.unwrap_or(base.workers),
        seed: common.seed,
        ..base
    }
}

fn write_bh_log(common: &Common, logs: &[bh::EpisodeLog]) -> CliResult {
    if let Some(path) = &common.csv {
        bh::write_training_csv(logs, create(path)?)?;
    }
    Ok(())
}

fn train(what: &TrainCmd, mode: Execution) -> CliResult {
    match what {
        TrainCmd::Predictor { common, epochs, slots } => {
            let s = Scenario::load(&common.scenario)?;
            let geom = leo_bhpa::geometry::Geometry::build(&s)?;
            let n = common.episodes.unwrap_or(8);
            let traces = (0..n)
                .map(|i| generate_trace(&s, &s.traffic, *slots, derive_seed(common.seed, 50, i as u64)))
                .collect::<Result<Vec<_>, _>>()?;
            let base = PredictorConfig::default();
            let cfg = PredictorConfig {
                epochs: epochs.unwrap_or(base.epochs),
                seed: common.seed,
                ..base
            };
            let p = train_predictor(&traces, &geom, &cfg, mode)?;
            p.save(&common.out)?;
            if let Some(path) = &common.csv {
                let mut w = create(path)?;
                let mut text = String::from("epoch,loss\n");
                for (e, l) in p.loss_history.iter().enumerate() {
                    text.push_str(&format!("{e},{l}\n"));
                }
                w.write_all(text.as_bytes()).map_err(Error::from)?;
            }
        }
        TrainCmd::Bh { common, workers } => {
            let w = world(&common.scenario)?;
            let f = forecaster(common.predictor.as_ref())?;
            let out = bh::train(&w, &f, &ma3c_config(common, *workers), mode)?;
            out.model.save(&common.out)?;
            write_bh_log(common, &out.logs)?;
        }
        TrainCmd::Dpa { common, workers } => {
            let w = world(&common.scenario)?;
            let f = forecaster(common.predictor.as_ref())?;
            let out = dpa::train(&w, &f, &ma3c_config(common, *workers), mode)?;
            out.model.save(&common.out)?;
            write_bh_log(common, &out.logs)?;
        }
        TrainCmd::Pa { common, bh_ckpt } => {
            let w = world(&common.scenario)?;
            let f = forecaster(common.predictor.as_ref())?;
            let base = if common.desk { MapaConfig::desk() } else { MapaConfig::default() };
            let cfg = MapaConfig {
                episodes: common.episodes.unwrap_or(base.episodes),
                seed: common.seed,
                ..base
            };
            let mut bh: Box<dyn BhPolicy> = match bh_ckpt {
                Some(p) => Box::new(Ma3cPolicy::new(Ma3cModel::load(p)?, false)),
                None => Box::new(RandomBh),
            };
            let out = pa::train(&w, &f, bh.as_mut(), &cfg, mode)?;
            out.model.save(&common.out)?;
            if let Some(path) = &common.csv {
                pa::write_training_csv(&out.logs, create(path)?)?;
            }
        }
    }
    Ok(())
}

fn eval(a: &EvalArgs, mode: Execution) -> CliResult {
    let w = world(&a.scenario)?;
    let f = forecaster(a.predictor.as_ref())?;
    let kind: PolicyKind = a.policy.parse()?;
    let ck = Arc::new(a.ckpt.load()?);
    let factory = named_factory(kind, ck);
    let ev = evaluate(&w, &f, kind.name(), &factory, a.episodes, &a.seed, mode)?;
    if let Some(path) = &a.csv {
        write_csv(&ev.records, create(path)?)?;
    }
    if let Some(path) = &a.out {
        write_csv(&ev.stats, create(path)?)?;
    }
    if let Some(path) = &a.slots_csv {
        let seed = a.seed.first().copied().unwrap_or(0);
        let mut p = factory()?;
        let run = run_episode(&w, &f, p.as_mut(), harness::episode_seed(seed, 0))?;
        write_metrics_csv(&run.metrics_rows(&w), create(path)?)?;
    }
    let mut stdout = std::io::stdout().lock();
    for s in &ev.stats {
        let line = serde_json::json!({"policy": s.policy, "metric": s.metric, "mean": s.mean, "std": s.std, "n": s.n});
        writeln!(stdout, "{line}").map_err(Error::from)?;
    }
    Ok(())
}

fn sweep(a: &SweepArgs, mode: Execution) -> CliResult {
    let template = Scenario::load(&a.scenario)?;
    let f = forecaster(a.predictor.as_ref())?;
    let ck = Arc::new(a.ckpt.load()?);
    let axis: SweepAxis = a.axis.parse()?;
    let kinds = a.policy.iter().map(|p| p.parse()).collect::<Result<Vec<PolicyKind>, _>>()?;
    let policies: Vec<(String, PolicySource)> = kinds
        .into_iter()
        .map(|kind| {
            let ck = ck.clone();
            let source: PolicySource = Box::new(move |_w: &World| Ok(named_factory(kind, ck.clone())));
            (kind.name().to_string(), source)
        })
        .collect();
    let rows = harness::sweep(&template, axis, &a.values, &policies, &f, a.episodes, &a.seed, mode)?;
    write_csv(&rows, create(&a.csv)?)?;
    Ok(())
}

fn compare(a: &CompareArgs, mode: Execution) -> CliResult {
    let w = world(&a.scenario)?;
    let f = forecaster(a.predictor.as_ref())?;
    let ck = Arc::new(a.ckpt.load()?);
    let methods = a.methods.iter().map(|m| m.parse()).collect::<Result<Vec<BhMethod>, _>>()?;
    let (rows, evals) = compare_bh(&w, &f, &methods, ck, a.episodes, &a.seed, mode)?;
    write_csv(&rows, create(&a.csv)?)?;
    if let Some(path) = &a.out {
        let records: Vec<_> = evals.into_iter().flat_map(|e| e.records).collect();
        write_csv(&records, create(path)?)?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let mode = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match &cli.command {
        Command::Scenario {
            action: ScenarioCmd::Gen { preset, seed, out },
        } => {
            let mut s = match preset {
                Preset::Reference => Scenario::reference(),
                Preset::Small => Scenario::small(),
                Preset::SingleSat => Scenario::single_sat(),
            };
            if let Some(seed) = seed {
                s.rng_seed = *seed;
            }
            // Fail here rather than at first use if the layout cannot be built.
            leo_bhpa::geometry::Geometry::build(&s)?;
            s.save(out)?;
            Ok(())
        }
        Command::Train { what } => train(what, mode),
        Command::Eval(a) => eval(a, mode),
        Command::Sweep(a) => sweep(a, mode),
        Command::CompareBh(a) => compare(a, mode),
    }
}

fn fail(f: Failure) -> ExitCode {
    let line = serde_json::json!({"kind": f.kind, "message": f.message});
    eprintln!("error: {line}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            return fail(Failure {
                kind: "usage".into(),
                message: e
                    .to_string()
                    .lines()
                    .take_while(|l| !l.starts_with("Usage:"))
                    .map(|l| l.trim().trim_start_matches("error: "))
                    .filter(|l| !l.is_empty())
                    .collect::<Vec<_>>()
                    .join(" "),
            })
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(f),
    }
}
