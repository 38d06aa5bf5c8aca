//! Actuation-delay estimation: shift the motor streams against the flow
//! stream and keep the shift under which a freshly trained model explains
//! held-out data best.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward_model::{ForwardModel, ForwardModelConfig};
use crate::par::Execution;
use crate::sensorimotor::{make_pairs_anchored, ActionAnchor, FeatureLayout, SensorimotorFrame};
use crate::stream_log::StreamLog;
use crate::textio::fmt_f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    /// Model trained per candidate. Its horizon is the prediction step used
    /// for scoring (one frame by default). Scoring uses the whole mixture by
    /// default: the components that capture action switches are rare, and
    /// a 90% mass cut drops exactly the evidence that separates delays.
    pub model: ForwardModelConfig,
    /// Leading fraction of pairs (in time order) used for training.
    pub train_fraction: f64,
    /// Candidates with fewer held-out pairs are reported absent.
    pub min_heldout_pairs: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            model: ForwardModelConfig {
                horizon: 1,
                layout: FeatureLayout {
                    use_action: true,
                    use_proprio: false,
                    use_cell_coords: true,
                    action_scale: [1.0, 1.0],
                },
                init_std_x: 0.5,
                init_std_y: 0.5,
                mass_fraction: 1.0,
                ..ForwardModelConfig::default()
            },
            train_fraction: 0.7,
            min_heldout_pairs: 100,
            execution: Execution::Parallel,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(
                "train fraction must lie strictly between 0 and 1".into(),
            ));
        }
        Ok(())
    }
}

pub const DEFAULT_CANDIDATES: std::ops::RangeInclusive<usize> = 0..=15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub best_delay: usize,
    /// Mean held-out log-likelihood per scored candidate.
    pub scores: BTreeMap<usize, f64>,
    pub n_pairs: BTreeMap<usize, usize>,
    /// Candidates that could not be scored.
    pub absent: Vec<usize>,
}

impl AlignmentResult {
    /// Two-column `delay mean_loglik` table; unscored candidates appear as
    /// comment lines.
    pub fn to_table(&self) -> String {
        let mut s = String::from("# delay mean_loglik\n");
        let mut all: Vec<usize> = self.scores.keys().chain(&self.absent).copied().collect();
        all.sort_unstable();
        for d in all {
            match self.scores.get(&d) {
                Some(v) => {
                    let _ = writeln!(s, "{d} {}", fmt_f64(*v));
                }
                None => {
                    let _ = writeln!(s, "# {d} absent");
                }
            }
        }
        s
    }
}

/// Re-times the motor streams: frame `t` of the result carries the action and
/// proprioception issued at `t - d`. The first `d` flow frames are dropped;
/// flow, bump and timestamps are untouched.
pub fn apply_delay(log: &StreamLog, d: usize) -> Result<StreamLog> {
    let frames = log.frames();
    if d >= frames.len() {
        return Err(Error::InsufficientData(format!(
            "delay {d} is not shorter than the log ({} frames)",
            frames.len()
        )));
    }
    let shifted: Vec<SensorimotorFrame> = frames[d..]
        .iter()
        .zip(frames)
        .map(|(sense, motor)| SensorimotorFrame {
            action: motor.action,
            proprio: motor.proprio,
            ..sense.clone()
        })
        .collect();
    StreamLog::new(log.header().clone(), shifted)
}

/// Scores one candidate. Every candidate is evaluated on the same flow
/// frames (those after the largest candidate delay) so scores compare like
/// with like.
fn score_candidate(
    log: &StreamLog,
    d: usize,
    max_d: usize,
    cfg: &AlignmentConfig,
) -> Result<Option<(f64, usize)>> {
    if max_d >= log.len() {
        return Ok(None);
    }
    let shifted = apply_delay(log, d)?;
    let common = shifted.slice((max_d - d)..shifted.len());
    let pairs = make_pairs_anchored(&common, cfg.model.horizon, &cfg.model.layout, ActionAnchor::Target);
    let cells = log.header().cell_count();
    let frames = pairs.len() / cells.max(1);
    let split = ((frames as f64 * cfg.train_fraction).floor() as usize) * cells;
    if split == 0 || pairs.len() - split < cfg.min_heldout_pairs.max(1) {
        return Ok(None);
    }
    let (train, test) = pairs.split_at(split);
    let fm = ForwardModel::fit(&cfg.model, train, log.header().shape())?;
    let set = fm.prediction_set()?;
    let mut total = 0.0;
    for p in test {
        total += fm.posterior_predictive_loglik_in(&p.x, &p.y, &set)?;
    }
    Ok(Some((total / test.len() as f64, test.len())))
}

/// Picks the delay maximizing mean held-out log-likelihood. Ties go to the
/// smaller delay.
pub fn estimate_delay(
    log: &StreamLog,
    candidates: &[usize],
    cfg: &AlignmentConfig,
) -> Result<AlignmentResult> {
    cfg.validate()?;
    let mut cands: Vec<usize> = candidates.to_vec();
    cands.sort_unstable();
    cands.dedup();
    let max_d = *cands
        .last()
        .ok_or_else(|| Error::InvalidConfig("no candidate delays".into()))?;
    let results = cfg
        .execution
        .try_map(&cands, |&d| score_candidate(log, d, max_d, cfg))?;

    let mut scores = BTreeMap::new();
    let mut n_pairs = BTreeMap::new();
    let mut absent = Vec::new();
    for (&d, r) in cands.iter().zip(results) {
        match r {
            Some((s, n)) => {
                scores.insert(d, s);
                n_pairs.insert(d, n);
            }
            None => absent.push(d),
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for (&d, &s) in &scores {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((d, s));
        }
    }
    let (best_delay, _) = best.ok_or_else(|| {
        Error::InsufficientData("log too short to score any candidate delay".into())
    })?;
    Ok(AlignmentResult {
        best_delay,
        scores,
        n_pairs,
        absent,
    })
}
