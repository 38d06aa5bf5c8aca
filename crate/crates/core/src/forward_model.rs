//! The learned forward model: a [`Mixture`] over standardized per-cell
//! features, queried by picking the most probable component for the input
//! block and reading off its output-block mean.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{parse_err, Error, Result};
use crate::igmm::{IgmmConfig, LearnOutcome, Mixture};
use crate::par::{self, Execution};
use crate::sensorimotor::{FeatureLayout, FlowGrid, FlowVector, SensorimotorFrame, TrainingPair};
use crate::textio::{fmt_f64, join_f64, parse_f64, parse_f64_list, parse_usize, split_kv};

pub const MODEL_MAGIC: &str = "flowsense-forward-model";
pub const MODEL_VERSION: &str = "1";

/// Everything needed to build and train a forward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardModelConfig {
    pub horizon: usize,
    pub layout: FeatureLayout,
    /// Initial component std dev in standardized input units.
    pub init_std_x: f64,
    /// Initial component std dev in standardized output units.
    pub init_std_y: f64,
    /// Mahalanobis distance (from a fresh component) defining the novelty
    /// threshold.
    pub novelty_distance: f64,
    pub update_skip: f64,
    pub mass_fraction: f64,
    pub regularization_floor: f64,
    /// Number of leading pairs used to fix the feature scales.
    pub warmup_pairs: usize,
}

impl Default for ForwardModelConfig {
    fn default() -> Self {
        Self {
            horizon: 15,
            layout: FeatureLayout::default(),
            init_std_x: 0.2,
            init_std_y: 0.2,
            novelty_distance: crate::igmm::DEFAULT_NOVELTY_DISTANCE,
            update_skip: crate::igmm::DEFAULT_UPDATE_SKIP,
            mass_fraction: crate::igmm::DEFAULT_MASS_FRACTION,
            regularization_floor: crate::igmm::DEFAULT_REGULARIZATION_FLOOR,
            warmup_pairs: 4000,
        }
    }
}

impl ForwardModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be >= 1".into()));
        }
        if !(self.init_std_x > 0.0 && self.init_std_y > 0.0) {
            return Err(Error::InvalidConfig("initial std devs must be positive".into()));
        }
        if !(self.novelty_distance > 0.0) {
            return Err(Error::InvalidConfig("novelty distance must be positive".into()));
        }
        if self.warmup_pairs == 0 {
            return Err(Error::InvalidConfig("warm-up window must be non-empty".into()));
        }
        Ok(())
    }

    pub fn igmm_config(&self) -> IgmmConfig {
        let dx = self.layout.input_dim();
        let mut cfg = IgmmConfig::new(vec![self.init_std_x; dx], vec![self.init_std_y; 2])
            .with_novelty_distance(self.novelty_distance)
            .with_update_skip(self.update_skip)
            .with_mass_fraction(self.mass_fraction);
        cfg.regularization_floor = self.regularization_floor;
        cfg
    }
}

/// Affine standardization of inputs and pure scaling of output deltas (zero
/// delta stays zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_scale: [f64; 2],
}

const MIN_SCALE: f64 = 1e-9;

impl FeatureScaler {
    pub fn identity(dx: usize) -> Self {
        Self {
            x_mean: vec![0.0; dx],
            x_scale: vec![1.0; dx],
            y_scale: [1.0, 1.0],
        }
    }

    /// Per-feature mean and standard deviation of `pairs`; near-constant
    /// features keep unit scale.
    pub fn fit(pairs: &[TrainingPair]) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::InsufficientData("no pairs to fit feature scales".into()))?;
        let dx = first.x.len();
        let n = pairs.len() as f64;
        let mut mean = vec![0.0; dx];
        for p in pairs {
            for (m, v) in mean.iter_mut().zip(&p.x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dx];
        let mut yvar = [0.0; 2];
        for p in pairs {
            for i in 0..dx {
                var[i] += (p.x[i] - mean[i]).powi(2);
            }
            yvar[0] += p.y[0] * p.y[0];
            yvar[1] += p.y[1] * p.y[1];
        }
        let fix = |s: f64| if s > MIN_SCALE { s } else { 1.0 };
        Ok(Self {
            x_mean: mean,
            x_scale: var.iter().map(|v| fix((v / n).sqrt())).collect(),
            y_scale: [fix((yvar[0] / n).sqrt()), fix((yvar[1] / n).sqrt())],
        })
    }

    pub fn scale_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.x_mean.iter().zip(&self.x_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn scale_y(&self, y: &[f64; 2]) -> [f64; 2] {
        [y[0] / self.y_scale[0], y[1] / self.y_scale[1]]
    }

    pub fn unscale_y(&self, y: &[f64]) -> [f64; 2] {
        [y[0] * self.y_scale[0], y[1] * self.y_scale[1]]
    }

    /// Log-Jacobian of the output scaling.
    pub fn log_y_jacobian(&self) -> f64 {
        self.y_scale[0].ln() + self.y_scale[1].ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellPrediction {
    /// Predicted flow change (pixels/s).
    pub delta: [f64; 2],
    pub component: usize,
    pub posterior: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowPrediction {
    /// Predicted flow grid `horizon` frames ahead.
    pub grid: FlowGrid,
    pub deltas: Vec<[f64; 2]>,
    pub map_component: Vec<usize>,
    pub map_posterior: Vec<f64>,
    /// Predictive log-density of the eventual observation, when known.
    pub log_lik: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    mixture: Mixture,
    horizon: usize,
    layout: FeatureLayout,
    scaler: FeatureScaler,
    grid_shape: (usize, usize),
}

impl ForwardModel {
    pub fn new(
        config: &ForwardModelConfig,
        scaler: FeatureScaler,
        grid_shape: (usize, usize),
    ) -> Result<Self> {
        config.validate()?;
        let dx = config.layout.input_dim();
        if scaler.x_mean.len() != dx || scaler.x_scale.len() != dx {
            return Err(Error::DimensionMismatch {
                what: "feature scaler",
                expected: dx,
                actual: scaler.x_mean.len(),
            });
        }
        Ok(Self {
            mixture: Mixture::new(config.igmm_config())?,
            horizon: config.horizon,
            layout: config.layout,
            scaler,
            grid_shape,
        })
    }

    /// Fixes feature scales on the first `warmup_pairs` pairs, then streams
    /// every pair through the mixture in order.
    pub fn fit(
        config: &ForwardModelConfig,
        pairs: &[TrainingPair],
        grid_shape: (usize, usize),
    ) -> Result<Self> {
        let warm = &pairs[..pairs.len().min(config.warmup_pairs)];
        let mut fm = Self::new(config, FeatureScaler::fit(warm)?, grid_shape)?;
        for p in pairs {
            fm.learn_pair(p)?;
        }
        Ok(fm)
    }

    pub fn learn_pair(&mut self, pair: &TrainingPair) -> Result<LearnOutcome> {
        self.learn(&pair.x, &pair.y)
    }

    pub fn learn(&mut self, x: &[f64], y: &[f64; 2]) -> Result<LearnOutcome> {
        self.check_x(x)?;
        let xs = self.scaler.scale_x(x);
        let ys = self.scaler.scale_y(y);
        self.mixture.learn_one(&xs, &ys)
    }

    pub fn mixture(&self) -> &Mixture {
        &self.mixture
    }

    pub fn mixture_mut(&mut self) -> &mut Mixture {
        &mut self.mixture
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn scaler(&self) -> &FeatureScaler {
        &self.scaler
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        self.grid_shape
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.layout.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "forward-model input",
                expected: self.layout.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn prediction_set(&self) -> Result<Vec<usize>> {
        self.mixture.prediction_set()
    }

    /// Predicted delta for one raw input vector.
    pub fn predict_cell(&self, x: &[f64]) -> Result<CellPrediction> {
        let set = self.prediction_set()?;
        self.predict_cell_in(x, &set)
    }

    /// As [`ForwardModel::predict_cell`] with a precomputed prediction set.
    pub fn predict_cell_in(&self, x: &[f64], set: &[usize]) -> Result<CellPrediction> {
        self.check_x(x)?;
        let xs = self.scaler.scale_x(x);
        let (component, posterior) = self.mixture.select_component(&xs, set)?;
        let delta = self.scaler.unscale_y(self.mixture.component(component).mu_y());
        Ok(CellPrediction {
            delta,
            component,
            posterior,
        })
    }

    /// Raw input vectors for every cell of `frame`, row-major.
    pub fn frame_inputs(&self, frame: &SensorimotorFrame) -> Result<Vec<Vec<f64>>> {
        if frame.flow.shape() != self.grid_shape {
            return Err(Error::DimensionMismatch {
                what: "frame grid cells",
                expected: self.grid_shape.0 * self.grid_shape.1,
                actual: frame.flow.len(),
            });
        }
        let (rows, cols) = self.grid_shape;
        let mut xs = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                xs.push(self.layout.encode(
                    frame.flow.get(r, c),
                    &frame.action,
                    &frame.proprio,
                    (r, c),
                    self.grid_shape,
                ));
            }
        }
        Ok(xs)
    }

    pub fn predict_grid(&self, frame: &SensorimotorFrame) -> Result<FlowPrediction> {
        self.predict_grid_with(frame, Execution::Parallel)
    }

    pub fn predict_grid_with(
        &self,
        frame: &SensorimotorFrame,
        exec: Execution,
    ) -> Result<FlowPrediction> {
        let set = self.prediction_set()?;
        let xs = self.frame_inputs(frame)?;
        let cells = exec.try_map(&xs, |x| self.predict_cell_in(x, &set))?;
        let (rows, cols) = self.grid_shape;
        let grid = FlowGrid::new(
            rows,
            cols,
            frame
                .flow
                .cells()
                .iter()
                .zip(&cells)
                .map(|(f, p)| f.add(&FlowVector::new(p.delta[0], p.delta[1])))
                .collect(),
        )?;
        Ok(FlowPrediction {
            grid,
            deltas: cells.iter().map(|c| c.delta).collect(),
            map_component: cells.iter().map(|c| c.component).collect(),
            map_posterior: cells.iter().map(|c| c.posterior).collect(),
            log_lik: None,
        })
    }

    /// The `k` most probable components per cell of `frame`.
    pub fn active_components(&self, frame: &SensorimotorFrame, k: usize) -> Result<Vec<Vec<usize>>> {
        let set = self.prediction_set()?;
        let xs = self.frame_inputs(frame)?;
        par::auto(xs.len(), 8).try_map(&xs, |x| {
            let xs = self.scaler.scale_x(x);
            if k <= 1 {
                Ok(vec![self.mixture.select_component(&xs, &set)?.0])
            } else {
                self.mixture.top_components(&xs, &set, k)
            }
        })
    }

    /// `log p(y | x)` in raw output units under the prediction-set mixture.
    pub fn posterior_predictive_loglik(&self, x: &[f64], y: &[f64; 2]) -> Result<f64> {
        let set = self.prediction_set()?;
        self.posterior_predictive_loglik_in(x, y, &set)
    }

    pub fn posterior_predictive_loglik_in(
        &self,
        x: &[f64],
        y: &[f64; 2],
        set: &[usize],
    ) -> Result<f64> {
        self.check_x(x)?;
        let xs = self.scaler.scale_x(x);
        let ys = self.scaler.scale_y(y);
        Ok(self.mixture.conditional_loglik(&xs, &ys, set)? - self.scaler.log_y_jacobian())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MODEL_MAGIC} {MODEL_VERSION}");
        let _ = writeln!(s, "horizon={}", self.horizon);
        let _ = writeln!(s, "use_action={}", self.layout.use_action);
        let _ = writeln!(s, "use_proprio={}", self.layout.use_proprio);
        let _ = writeln!(s, "use_cell_coords={}", self.layout.use_cell_coords);
        let _ = writeln!(s, "action_scale={}", join_f64(&self.layout.action_scale));
        let _ = writeln!(s, "grid_rows={}", self.grid_shape.0);
        let _ = writeln!(s, "grid_cols={}", self.grid_shape.1);
        let _ = writeln!(s, "x_mean={}", join_f64(&self.scaler.x_mean));
        let _ = writeln!(s, "x_scale={}", join_f64(&self.scaler.x_scale));
        let _ = writeln!(s, "y_scale={}", join_f64(&self.scaler.y_scale));
        s.push_str("mixture:\n");
        s.push_str(&self.mixture.to_snapshot());
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (head, body) = text
            .split_once("mixture:\n")
            .ok_or_else(|| parse_err(0, "missing 'mixture:' section"))?;
        let mut lines = head.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (ln, first) = lines.next().ok_or_else(|| parse_err(1, "empty model file"))?;
        let mut parts = first.split_whitespace();
        if parts.next() != Some(MODEL_MAGIC) {
            return Err(parse_err(ln, "not a forward-model file"));
        }
        let version = parts.next().unwrap_or("").to_string();
        if version != MODEL_VERSION {
            return Err(Error::Version {
                found: version,
                expected: MODEL_VERSION.into(),
            });
        }
        let mut kv = std::collections::BTreeMap::new();
        for (ln, line) in lines {
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_kv(line).ok_or_else(|| parse_err(ln, "expected key=value"))?;
            kv.insert(k.to_string(), (ln, v.to_string()));
        }
        let get = |k: &str| -> Result<&(usize, String)> {
            kv.get(k)
                .ok_or_else(|| parse_err(0, format!("missing key '{k}'")))
        };
        let flag = |k: &str| -> Result<bool> {
            let (ln, v) = get(k)?;
            v.parse::<bool>()
                .map_err(|_| parse_err(*ln, format!("bad boolean for '{k}'")))
        };
        let (ln, v) = get("horizon")?;
        let horizon = parse_usize(v, *ln)?;
        let (ln, v) = get("action_scale")?;
        let scale = parse_f64_list(v, *ln)?;
        if scale.len() != 2 {
            return Err(parse_err(*ln, "action_scale needs two values"));
        }
        let layout = FeatureLayout {
            use_action: flag("use_action")?,
            use_proprio: flag("use_proprio")?,
            use_cell_coords: flag("use_cell_coords")?,
            action_scale: [scale[0], scale[1]],
        };
        let (ln, v) = get("grid_rows")?;
        let rows = parse_usize(v, *ln)?;
        let (ln, v) = get("grid_cols")?;
        let cols = parse_usize(v, *ln)?;
        let (ln, v) = get("x_mean")?;
        let x_mean = parse_f64_list(v, *ln)?;
        let (ln, v) = get("x_scale")?;
        let x_scale = parse_f64_list(v, *ln)?;
        let (ln, v) = get("y_scale")?;
        let ys = parse_f64_list(v, *ln)?;
        if ys.len() != 2 {
            return Err(parse_err(*ln, "y_scale needs two values"));
        }
        let mut mixture = Mixture::from_snapshot(body)?;
        if mixture.dx() != layout.input_dim() || x_mean.len() != mixture.dx() || x_scale.len() != mixture.dx() {
            return Err(Error::DimensionMismatch {
                what: "model feature layout",
                expected: layout.input_dim(),
                actual: mixture.dx(),
            });
        }
        mixture.refresh_caches()?;
        Ok(Self {
            mixture,
            horizon,
            layout,
            scaler: FeatureScaler {
                x_mean,
                x_scale,
                y_scale: [ys[0], ys[1]],
            },
            grid_shape: (rows, cols),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// One line of the prediction dump.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub t: u64,
    pub cell: (usize, usize),
    pub predicted: [f64; 2],
    pub truth: [f64; 2],
    pub component: usize,
    pub posterior: f64,
    pub loglik_model: f64,
    pub loglik_naive: f64,
    pub x: Vec<f64>,
}

pub const DUMP_HEADER: &str = "# t row col pred_du pred_dv true_du true_dv component posterior loglik_model loglik_naive x...";

impl PredictionRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {} {} {} {} {} {} {} {}",
            self.t,
            self.cell.0,
            self.cell.1,
            fmt_f64(self.predicted[0]),
            fmt_f64(self.predicted[1]),
            fmt_f64(self.truth[0]),
            fmt_f64(self.truth[1]),
            self.component,
            fmt_f64(self.posterior),
            fmt_f64(self.loglik_model),
            fmt_f64(self.loglik_naive),
            join_f64(&self.x)
        )
    }

    pub fn parse_line(line: &str, lineno: usize) -> Result<Self> {
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() < 11 {
            return Err(parse_err(lineno, "prediction record too short"));
        }
        let num = |i: usize| parse_f64(tok[i], lineno);
        Ok(Self {
            t: tok[0].parse().map_err(|_| parse_err(lineno, "bad t"))?,
            cell: (parse_usize(tok[1], lineno)?, parse_usize(tok[2], lineno)?),
            predicted: [num(3)?, num(4)?],
            truth: [num(5)?, num(6)?],
            component: parse_usize(tok[7], lineno)?,
            posterior: num(8)?,
            loglik_model: num(9)?,
            loglik_naive: num(10)?,
            x: tok[11..]
                .iter()
                .map(|t| parse_f64(t, lineno))
                .collect::<Result<_>>()?,
        })
    }
}

pub fn dump_to_text(records: &[PredictionRecord]) -> String {
    let mut s = String::from(DUMP_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.to_line());
        s.push('\n');
    }
    s
}

pub fn parse_dump(text: &str) -> Result<Vec<PredictionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| PredictionRecord::parse_line(l, i + 1))
        .collect()
}
