mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowsense::collision::CreditConfig;
use flowsense::{Execution, ForwardModelConfig};

/// Sensorimotor forward models from optical flow: simulate, align, train,
/// evaluate and anticipate collisions.
///
/// Every option can also be given through an environment variable named
/// `FLOWSENSE_<OPTION>` (upper case, dashes as underscores).
#[derive(Parser, Debug)]
#[command(name = "flowsense", version)]
struct Cli {
    /// Root under which run directories are created.
    #[arg(long, global = true, env = "FLOWSENSE_OUT", default_value = "runs")]
    out: PathBuf,
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true, env = "FLOWSENSE_SEQUENTIAL")]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a stream log from a scenario.
    Simulate(SimulateArgs),
    /// Estimate the actuation delay of a log.
    Align(AlignArgs),
    /// Stream a log through a new forward model and save it.
    Train(TrainArgs),
    /// Write held-out predictions of a saved model.
    Predict(PredictArgs),
    /// Score a model against the zero-change baseline; optional sweep.
    Eval(EvalArgs),
    /// Replay a bump log, learn collision credit and emit the signal trace.
    Collide(CollideArgs),
    /// simulate, align, train, eval and collide from one seed.
    Pipeline(PipelineArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Wander,
    Approach,
    Rotate,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario file; overrides --preset.
    #[arg(long, env = "FLOWSENSE_SCENARIO")]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_enum, env = "FLOWSENSE_PRESET", default_value = "wander")]
    pub preset: Preset,
    /// Overrides the scenario seed.
    #[arg(long, env = "FLOWSENSE_SEED")]
    pub seed: Option<u64>,
    /// Run length in seconds.
    #[arg(long, env = "FLOWSENSE_DURATION")]
    pub duration: Option<f64>,
    /// Actuation delay in frames.
    #[arg(long, env = "FLOWSENSE_DELAY")]
    pub delay: Option<usize>,
    /// Episodes of the approach preset.
    #[arg(long, env = "FLOWSENSE_EPISODES")]
    pub episodes: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    #[arg(long, env = "FLOWSENSE_LOG")]
    pub log: PathBuf,
    /// Largest candidate delay (candidates are 0..=max).
    #[arg(long, env = "FLOWSENSE_MAX_DELAY", default_value_t = 15)]
    pub max_delay: usize,
    #[arg(long, env = "FLOWSENSE_SPLIT")]
    pub split: Option<f64>,
}

/// Forward-model options. Unset values keep the command's defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// Prediction horizon T in frames.
    #[arg(long, env = "FLOWSENSE_HORIZON")]
    pub horizon: Option<usize>,
    /// Leave the action out of the input.
    #[arg(long, env = "FLOWSENSE_NO_ACTION")]
    pub no_action: bool,
    /// Leave proprioception out of the input.
    #[arg(long, env = "FLOWSENSE_NO_PROPRIO")]
    pub no_proprio: bool,
    /// Append normalized cell coordinates to the input.
    #[arg(long, env = "FLOWSENSE_CELL_COORDS", conflicts_with = "no_cell_coords")]
    pub cell_coords: bool,
    #[arg(long, env = "FLOWSENSE_NO_CELL_COORDS")]
    pub no_cell_coords: bool,
    /// Initial component std dev (standardized units, both blocks).
    #[arg(long, env = "FLOWSENSE_INIT_STD")]
    pub init_std: Option<f64>,
    /// Novelty threshold as a Mahalanobis distance from a fresh component.
    #[arg(long, env = "FLOWSENSE_NOVELTY")]
    pub novelty: Option<f64>,
    /// Mass covered by the prediction-eligible components.
    #[arg(long, env = "FLOWSENSE_MASS_FRACTION")]
    pub mass_fraction: Option<f64>,
    /// Minimum proportional contribution for a component update.
    #[arg(long, env = "FLOWSENSE_UPDATE_SKIP")]
    pub update_skip: Option<f64>,
    /// Pairs used to fix the feature scales.
    #[arg(long, env = "FLOWSENSE_WARMUP")]
    pub warmup: Option<usize>,
}

impl ModelArgs {
    pub fn apply(&self, base: ForwardModelConfig) -> ForwardModelConfig {
        let mut c = base;
        if let Some(h) = self.horizon {
            c.horizon = h;
        }
        if self.no_action {
            c.layout.use_action = false;
        }
        if self.no_proprio {
            c.layout.use_proprio = false;
        }
        if self.cell_coords {
            c.layout.use_cell_coords = true;
        }
        if self.no_cell_coords {
            c.layout.use_cell_coords = false;
        }
        if let Some(s) = self.init_std {
            c.init_std_x = s;
            c.init_std_y = s;
        }
        if let Some(d) = self.novelty {
            c.novelty_distance = d;
        }
        if let Some(m) = self.mass_fraction {
            c.mass_fraction = m;
        }
        if let Some(u) = self.update_skip {
            c.update_skip = u;
        }
        if let Some(w) = self.warmup {
            c.warmup_pairs = w;
        }
        c
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct CreditArgs {
    /// Credit discount per frame of age.
    #[arg(long, env = "FLOWSENSE_GAMMA")]
    pub gamma: Option<f64>,
    /// Frames before a bump that receive credit.
    #[arg(long, env = "FLOWSENSE_WINDOW")]
    pub window: Option<usize>,
    /// Fixed alarm threshold (otherwise calibrated when logs are given).
    #[arg(long, env = "FLOWSENSE_THRESHOLD")]
    pub threshold: Option<f64>,
    /// Components per cell counted as active.
    #[arg(long, env = "FLOWSENSE_ACTIVE_SET")]
    pub active_set: Option<usize>,
    /// Credit a component once per frame instead of once per cell.
    #[arg(long, env = "FLOWSENSE_PER_FRAME_CREDIT")]
    pub per_frame_credit: bool,
}

impl CreditArgs {
    pub fn apply(&self, base: CreditConfig) -> CreditConfig {
        let mut c = base;
        if let Some(g) = self.gamma {
            c.gamma = g;
        }
        if let Some(w) = self.window {
            c.window = w;
        }
        if let Some(t) = self.threshold {
            c.alarm_threshold = t;
        }
        if let Some(k) = self.active_set {
            c.active_set_size = k;
        }
        if self.per_frame_credit {
            c.per_cell_credit = false;
        }
        c
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, env = "FLOWSENSE_LOG")]
    pub log: PathBuf,
    /// Re-time the motor streams by this many frames first.
    #[arg(long, env = "FLOWSENSE_DELAY", default_value_t = 0)]
    pub delay: usize,
    /// Leading fraction of frames used for training.
    #[arg(long, env = "FLOWSENSE_SPLIT", default_value_t = 0.7)]
    pub split: f64,
    /// Samples between progress reports.
    #[arg(long, env = "FLOWSENSE_REPORT_EVERY", default_value_t = 100)]
    pub report_every: usize,
    /// Samples in the rolling error window.
    #[arg(long, env = "FLOWSENSE_ROLLING", default_value_t = 1000)]
    pub rolling: usize,
    /// Print every progress report to stdout.
    #[arg(long)]
    pub verbose: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long, env = "FLOWSENSE_LOG")]
    pub log: PathBuf,
    #[arg(long, env = "FLOWSENSE_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "FLOWSENSE_DELAY", default_value_t = 0)]
    pub delay: usize,
    #[arg(long, env = "FLOWSENSE_SPLIT", default_value_t = 0.7)]
    pub split: f64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, env = "FLOWSENSE_LOG")]
    pub log: PathBuf,
    /// Saved model; without it a model is trained on the leading split.
    #[arg(long, env = "FLOWSENSE_MODEL")]
    pub model: Option<PathBuf>,
    /// Prediction dump of `--model` to score instead of predicting again.
    #[arg(long, env = "FLOWSENSE_PREDICTIONS", requires = "model")]
    pub predictions: Option<PathBuf>,
    #[arg(long, env = "FLOWSENSE_DELAY", default_value_t = 0)]
    pub delay: usize,
    #[arg(long, env = "FLOWSENSE_SPLIT", default_value_t = 0.7)]
    pub split: f64,
    /// Also run the novelty-threshold sweep with and without the action.
    #[arg(long)]
    pub sweep: bool,
    /// Comma-separated novelty distances for the sweep.
    #[arg(long, env = "FLOWSENSE_GRID", value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Bootstrap resamples for the log-likelihood ratio interval.
    #[arg(long, env = "FLOWSENSE_BOOTSTRAP", default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long, env = "FLOWSENSE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model_args: ModelArgs,
}

#[derive(Args, Debug)]
pub struct CollideArgs {
    /// Bump log replayed with online credit learning.
    #[arg(long, env = "FLOWSENSE_LOG")]
    pub log: PathBuf,
    /// Saved model; without it one is trained on `--log`.
    #[arg(long, env = "FLOWSENSE_MODEL")]
    pub model: Option<PathBuf>,
    /// Labelled logs for threshold calibration (repeatable).
    #[arg(long = "calibrate", env = "FLOWSENSE_CALIBRATE", value_delimiter = ',')]
    pub calibrate: Vec<PathBuf>,
    /// Logs scored with the credited model and threshold (repeatable).
    #[arg(long = "test", env = "FLOWSENSE_TEST", value_delimiter = ',')]
    pub test: Vec<PathBuf>,
    /// Frames of warning required before contact.
    #[arg(long, env = "FLOWSENSE_LEAD", default_value_t = 15)]
    pub lead: usize,
    #[command(flatten)]
    pub credit: CreditArgs,
    #[command(flatten)]
    pub model_args: ModelArgs,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[arg(long, env = "FLOWSENSE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Length of the wander run in seconds.
    #[arg(long, env = "FLOWSENSE_DURATION", default_value_t = 120.0)]
    pub duration: f64,
    /// Episodes per approach run.
    #[arg(long, env = "FLOWSENSE_EPISODES", default_value_t = 20)]
    pub episodes: usize,
    #[arg(long, env = "FLOWSENSE_MAX_DELAY", default_value_t = 15)]
    pub max_delay: usize,
    #[arg(long, env = "FLOWSENSE_SPLIT", default_value_t = 0.7)]
    pub split: f64,
    #[arg(long)]
    pub sweep: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub credit: CreditArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let ctx = commands::Ctx {
        out: cli.out,
        exec,
    };
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(&ctx, a),
        Command::Align(a) => commands::align(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Predict(a) => commands::predict(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Collide(a) => commands::collide(&ctx, a),
        Command::Pipeline(a) => commands::pipeline(&ctx, a),
    };
    match result {
        Ok(dir) => {
            commands::say(&format!("run directory: {}\n", dir.display()));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
