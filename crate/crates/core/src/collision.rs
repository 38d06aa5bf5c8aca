//! Collision anticipation by temporal credit assignment: each bump credits
//! the mixture components that were active over the preceding frames, with
//! exponential discount, and the mean credit of the currently active
//! components is the collision signal.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{parse_err, Error, Result};
use crate::forward_model::{ForwardModel, ForwardModelConfig};
use crate::igmm::Mixture;
use crate::sensorimotor::{FeatureLayout, SensorimotorFrame};
use crate::stream_log::StreamLog;
use crate::textio::{fmt_f64, parse_f64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CreditConfig {
    /// Number of past frames (including the bump frame) receiving credit.
    pub window: usize,
    pub gamma: f64,
    pub alarm_threshold: f64,
    /// Components per cell counted as active (1 = the MAP component).
    pub active_set_size: usize,
    /// Credit once per (component, cell) activation rather than once per
    /// component per frame.
    pub per_cell_credit: bool,
}

impl Default for CreditConfig {
    fn default() -> Self {
        Self {
            window: 30,
            gamma: 0.9,
            alarm_threshold: f64::INFINITY,
            active_set_size: 1,
            per_cell_credit: true,
        }
    }
}

impl CreditConfig {
    /// Window of two seconds at `frame_rate`.
    pub fn for_frame_rate(frame_rate: f64) -> Self {
        Self {
            window: ((2.0 * frame_rate).round() as usize).max(1),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidConfig("credit window must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig("gamma must lie in (0, 1)".into()));
        }
        if self.active_set_size == 0 {
            return Err(Error::InvalidConfig("active set size must be >= 1".into()));
        }
        if self.alarm_threshold.is_nan() {
            return Err(Error::InvalidConfig("alarm threshold is NaN".into()));
        }
        Ok(())
    }
}

/// Forward model used to index sensorimotor states for collision credit:
/// one-step horizon, cell coordinates in the input and broad initial
/// components, so a component stands for a recognisable situation rather
/// than a fine flow detail.
pub fn default_model_config() -> ForwardModelConfig {
    ForwardModelConfig {
        horizon: 1,
        layout: FeatureLayout {
            use_action: true,
            use_proprio: false,
            use_cell_coords: true,
            action_scale: [1.0, 1.0],
        },
        init_std_x: 0.6,
        init_std_y: 0.6,
        ..ForwardModelConfig::default()
    }
}

/// Bump onsets the log producer marked as static contacts (header entry
/// `static_bump_onsets`: comma-separated frame indices, `-` for none).
/// Logs without the entry have none.
pub fn static_onsets(log: &StreamLog) -> Result<Vec<usize>> {
    match log.header().metadata.get("static_bump_onsets") {
        None => Ok(Vec::new()),
        Some(v) if v.trim() == "-" || v.trim().is_empty() => Ok(Vec::new()),
        Some(v) => v
            .split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad static bump onset {t:?}")))
            })
            .collect(),
    }
}

/// Per-cell active component indices of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub t: u64,
    pub cells: Vec<Vec<usize>>,
}

/// Ring buffer of the most recent `capacity` activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationHistory {
    capacity: usize,
    entries: VecDeque<Activation>,
}

impl ActivationHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            entries: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &Activation> {
        self.entries.iter()
    }

    pub fn record_activation(&mut self, t: u64, cells: Vec<Vec<usize>>) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(Activation { t, cells });
    }
}

/// Adds `gamma^age` to every component active in the history, where `age` is
/// the number of frames between the activation and `t_bump`. Entries older
/// than the window or later than the bump are ignored. Returns the total
/// credit added.
pub fn assign_credit(
    mixture: &mut Mixture,
    history: &ActivationHistory,
    t_bump: u64,
    cfg: &CreditConfig,
) -> Result<f64> {
    cfg.validate()?;
    let mut total = 0.0;
    for entry in history.entries() {
        if entry.t > t_bump {
            continue;
        }
        let age = t_bump - entry.t;
        if age >= cfg.window as u64 {
            continue;
        }
        let credit = cfg.gamma.powi(age as i32);
        let mut seen: Vec<usize> = Vec::new();
        for cell in &entry.cells {
            for &j in cell {
                if j >= mixture.len() {
                    return Err(Error::DimensionMismatch {
                        what: "active component index",
                        expected: mixture.len(),
                        actual: j,
                    });
                }
                if !cfg.per_cell_credit {
                    if seen.contains(&j) {
                        continue;
                    }
                    seen.push(j);
                }
                mixture.add_collision_value(j, credit);
                total += credit;
            }
        }
    }
    Ok(total)
}

/// Mean collision value over the active components of every cell.
pub fn signal_for(mixture: &Mixture, active: &[Vec<usize>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for cell in active {
        for &j in cell {
            sum += mixture.component(j).collision_value();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn collision_signal(fm: &ForwardModel, frame: &SensorimotorFrame, cfg: &CreditConfig) -> Result<f64> {
    if fm.mixture().is_empty() {
        return Err(Error::EmptyMixture);
    }
    let active = fm.active_components(frame, cfg.active_set_size)?;
    Ok(signal_for(fm.mixture(), &active))
}

/// One line of the collision trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub t: u64,
    pub signal: f64,
    pub alarm: bool,
    pub bump: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CollisionTrace {
    pub points: Vec<TracePoint>,
}

pub const TRACE_HEADER: &str = "# t signal alarm bump";

impl CollisionTrace {
    pub fn to_text(&self) -> String {
        let mut s = String::from(TRACE_HEADER);
        s.push('\n');
        for p in &self.points {
            let _ = writeln!(s, "{} {} {} {}", p.t, fmt_f64(p.signal), p.alarm as u8, p.bump as u8);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != 4 {
                return Err(parse_err(i + 1, "trace lines have four fields"));
            }
            let flag = |s: &str| match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(parse_err(i + 1, "flags are 0 or 1")),
            };
            points.push(TracePoint {
                t: tok[0].parse().map_err(|_| parse_err(i + 1, "bad t"))?,
                signal: parse_f64(tok[1], i + 1)?,
                alarm: flag(tok[2])?,
                bump: flag(tok[3])?,
            });
        }
        Ok(Self { points })
    }

    /// Indices of rising edges of the bump flag.
    pub fn bump_onsets(&self) -> Vec<usize> {
        rising_edges(self.points.iter().map(|p| p.bump))
    }

    pub fn alarm_onsets(&self) -> Vec<usize> {
        rising_edges(self.points.iter().map(|p| p.alarm))
    }

    /// Re-thresholds the stored signal.
    pub fn with_threshold(&self, threshold: f64) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| TracePoint {
                    alarm: p.signal >= threshold,
                    ..*p
                })
                .collect(),
        }
    }
}

pub fn rising_edges(flags: impl IntoIterator<Item = bool>) -> Vec<usize> {
    let mut prev = false;
    let mut out = Vec::new();
    for (i, f) in flags.into_iter().enumerate() {
        if f && !prev {
            out.push(i);
        }
        prev = f;
    }
    out
}

/// Replays a log through a trained forward model. Per frame: compute the
/// signal from the credit accumulated so far, record the activation, and on
/// a bump onset credit the history. The mixture itself is not re-trained.
pub fn replay(fm: &mut ForwardModel, log: &StreamLog, cfg: &CreditConfig, learn_credit: bool) -> Result<CollisionTrace> {
    cfg.validate()?;
    if fm.mixture().is_empty() {
        return Err(Error::EmptyMixture);
    }
    let mut history = ActivationHistory::new(cfg.window);
    let mut points = Vec::with_capacity(log.len());
    let mut prev_bump = false;
    for frame in log.frames() {
        let active = fm.active_components(frame, cfg.active_set_size)?;
        let signal = signal_for(fm.mixture(), &active);
        history.record_activation(frame.t, active);
        if learn_credit && frame.bump && !prev_bump {
            assign_credit(fm.mixture_mut(), &history, frame.t, cfg)?;
        }
        prev_bump = frame.bump;
        points.push(TracePoint {
            t: frame.t,
            signal,
            alarm: signal >= cfg.alarm_threshold,
            bump: frame.bump,
        });
    }
    Ok(CollisionTrace { points })
}

/// Episode-level detection statistics of a thresholded trace.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionStats {
    pub bumps: usize,
    /// Bumps with an alarm onset inside the look-back window.
    pub detected: usize,
    /// Alarm onsets not followed by a bump within the window.
    pub false_alarms: usize,
    /// Bumps with the alarm raised at some frame between `window` and
    /// `lead_required` frames before contact.
    pub anticipated: usize,
}

impl DetectionStats {
    pub fn f1(&self) -> f64 {
        let tp = self.detected as f64;
        let fp = self.false_alarms as f64;
        let fn_ = (self.bumps - self.detected) as f64;
        if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        }
    }
}

/// Frames the alarm had been continuously on right before `onset` (capped at
/// `cap`).
pub fn alarm_lead(alarm: &[bool], onset: usize, cap: usize) -> usize {
    let mut lead = 0;
    while lead < cap && lead < onset && alarm[onset - 1 - lead] {
        lead += 1;
    }
    lead
}

/// Scores alarms against bump onsets. An alarm onset within `window` frames
/// before (or at) a bump onset detects it; other alarm onsets are false.
/// `excluded` bump onsets (e.g. static contacts) are neither required nor
/// used to excuse alarms.
pub fn detection_stats(
    trace: &CollisionTrace,
    window: usize,
    lead_required: usize,
    excluded: &[usize],
) -> DetectionStats {
    let alarm: Vec<bool> = trace.points.iter().map(|p| p.alarm).collect();
    let bumps: Vec<usize> = trace
        .bump_onsets()
        .into_iter()
        .filter(|b| !excluded.contains(b))
        .collect();
    let alarms = trace.alarm_onsets();
    let mut stats = DetectionStats {
        bumps: bumps.len(),
        ..Default::default()
    };
    let mut used = vec![false; alarms.len()];
    for &b in &bumps {
        let lo = b.saturating_sub(window);
        let mut hit = false;
        for (k, &a) in alarms.iter().enumerate() {
            if a >= lo && a <= b {
                used[k] = true;
                hit = true;
            }
        }
        // An alarm that was already on when the window opened also counts.
        if !hit && alarm_lead(&alarm, b + 1, window + 1) > 0 {
            hit = true;
        }
        if hit {
            stats.detected += 1;
        }
        if b >= lead_required && alarm[lo..=b - lead_required].iter().any(|&a| a) {
            stats.anticipated += 1;
        }
    }
    // Onsets during contact/static phases after a bump are part of it.
    for (k, &a) in alarms.iter().enumerate() {
        if used[k] {
            continue;
        }
        let explained = trace.points[a].bump
            || excluded
                .iter()
                .any(|&e| a >= e.saturating_sub(window) && a <= e);
        if !explained {
            stats.false_alarms += 1;
        }
    }
    stats
}

/// Candidate threshold maximizing F1 over the given traces (their signals are
/// re-thresholded). Ties go to the lowest threshold. Returns
/// `(threshold, f1)`.
pub fn calibrate_threshold(traces: &[(&CollisionTrace, Vec<usize>)], window: usize) -> Result<(f64, f64)> {
    let mut cands: Vec<f64> = traces
        .iter()
        .flat_map(|(t, _)| t.points.iter().map(|p| p.signal))
        .filter(|s| *s > 0.0)
        .collect();
    if cands.is_empty() {
        return Err(Error::InsufficientData(
            "no positive collision signal to calibrate against".into(),
        ));
    }
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    // Bound the search on long traces.
    let step = (cands.len() / 2000).max(1);
    let mut best = (f64::INFINITY, -1.0);
    for th in cands.iter().step_by(step) {
        let mut total = DetectionStats::default();
        for (trace, excluded) in traces {
            let s = detection_stats(&trace.with_threshold(*th), window, 0, excluded);
            total.bumps += s.bumps;
            total.detected += s.detected;
            total.false_alarms += s.false_alarms;
        }
        let f1 = total.f1();
        if f1 > best.1 {
            best = (*th, f1);
        }
    }
    Ok(best)
}
