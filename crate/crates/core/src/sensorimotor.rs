//! Sensorimotor vocabulary: flow grids, actions, proprioception, frames and
//! the (input, output) training pairs assembled from a stream.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream_log::StreamLog;

/// One 2-D optical flow vector in pixels per second.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowVector {
    pub u: f64,
    pub v: f64,
}

impl FlowVector {
    pub const ZERO: FlowVector = FlowVector { u: 0.0, v: 0.0 };

    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.u.hypot(self.v)
    }

    pub fn sub(&self, other: &FlowVector) -> FlowVector {
        FlowVector::new(self.u - other.u, self.v - other.v)
    }

    pub fn add(&self, other: &FlowVector) -> FlowVector {
        FlowVector::new(self.u + other.u, self.v + other.v)
    }
}

/// Row-major `rows x cols` grid of flow vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowGrid {
    rows: usize,
    cols: usize,
    cells: Vec<FlowVector>,
}

impl FlowGrid {
    pub fn new(rows: usize, cols: usize, cells: Vec<FlowVector>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidConfig(format!(
                "flow grid must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if cells.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "flow grid cells",
                expected: rows * cols,
                actual: cells.len(),
            });
        }
        if cells.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("flow grid"));
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            cells: vec![FlowVector::ZERO; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[FlowVector] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> FlowVector {
        self.cells[row * self.cols + col]
    }

    /// Dimensionality of the flattened field (two components per cell).
    pub fn dimension(&self) -> usize {
        2 * self.cells.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    Stop,
    Forward,
    Backward,
    TurnLeft,
    TurnRight,
}

impl ActionKind {
    pub const ALL: [ActionKind; 5] = [
        ActionKind::Stop,
        ActionKind::Forward,
        ActionKind::Backward,
        ActionKind::TurnLeft,
        ActionKind::TurnRight,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ActionKind::Stop => "stop",
            ActionKind::Forward => "forward",
            ActionKind::Backward => "backward",
            ActionKind::TurnLeft => "turn_left",
            ActionKind::TurnRight => "turn_right",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stop" | "st" => Ok(ActionKind::Stop),
            "forward" | "fw" => Ok(ActionKind::Forward),
            "backward" | "bw" => Ok(ActionKind::Backward),
            "turn_left" | "left" => Ok(ActionKind::TurnLeft),
            "turn_right" | "right" => Ok(ActionKind::TurnRight),
            other => Err(Error::InvalidConfig(format!("unknown action kind '{other}'"))),
        }
    }
}

/// Fixed linear (m/s) and angular (rad/s) speeds of the discrete action set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionConstants {
    pub linear: f64,
    pub angular: f64,
}

impl Default for ActionConstants {
    fn default() -> Self {
        Self {
            linear: 0.3,
            angular: 0.6,
        }
    }
}

/// A commanded action. Construct through [`ActionCommand::from_kind`] so the
/// velocities always agree with the kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionCommand {
    pub kind: ActionKind,
    pub linear: f64,
    pub angular: f64,
}

impl ActionCommand {
    pub fn from_kind(kind: ActionKind, constants: &ActionConstants) -> Self {
        let (linear, angular) = match kind {
            ActionKind::Stop => (0.0, 0.0),
            ActionKind::Forward => (constants.linear, 0.0),
            ActionKind::Backward => (-constants.linear, 0.0),
            ActionKind::TurnLeft => (0.0, constants.angular),
            ActionKind::TurnRight => (0.0, -constants.angular),
        };
        Self {
            kind,
            linear,
            angular,
        }
    }

    pub fn stop() -> Self {
        Self {
            kind: ActionKind::Stop,
            linear: 0.0,
            angular: 0.0,
        }
    }
}

/// Measured wheel velocities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Proprioception {
    pub linear: f64,
    pub angular: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorimotorFrame {
    pub t: u64,
    pub flow: FlowGrid,
    pub action: ActionCommand,
    pub proprio: Proprioception,
    pub bump: bool,
}

/// Encodes an action as its commanded `(linear, angular)` pair scaled per axis.
pub fn encode_action(action: &ActionCommand, scale: [f64; 2]) -> [f64; 2] {
    [action.linear * scale[0], action.angular * scale[1]]
}

/// Which input features a pair carries besides the source-cell flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub use_action: bool,
    pub use_proprio: bool,
    pub use_cell_coords: bool,
    pub action_scale: [f64; 2],
}

impl Default for FeatureLayout {
    fn default() -> Self {
        Self {
            use_action: true,
            use_proprio: true,
            use_cell_coords: false,
            action_scale: [1.0, 1.0],
        }
    }
}

impl FeatureLayout {
    pub fn input_dim(&self) -> usize {
        2 + if self.use_action { 2 } else { 0 }
            + if self.use_proprio { 2 } else { 0 }
            + if self.use_cell_coords { 2 } else { 0 }
    }

    /// Feature names in layout order.
    pub fn names(&self) -> Vec<&'static str> {
        let mut names = vec!["flow_u", "flow_v"];
        if self.use_action {
            names.extend(["action_linear", "action_angular"]);
        }
        if self.use_proprio {
            names.extend(["proprio_linear", "proprio_angular"]);
        }
        if self.use_cell_coords {
            names.extend(["cell_row", "cell_col"]);
        }
        names
    }

    /// Builds the raw (unscaled) input vector for one grid cell.
    pub fn encode(
        &self,
        flow: FlowVector,
        action: &ActionCommand,
        proprio: &Proprioception,
        cell: (usize, usize),
        shape: (usize, usize),
    ) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.input_dim());
        x.push(flow.u);
        x.push(flow.v);
        if self.use_action {
            x.extend(encode_action(action, self.action_scale));
        }
        if self.use_proprio {
            x.push(proprio.linear);
            x.push(proprio.angular);
        }
        if self.use_cell_coords {
            x.push(normalized_coord(cell.0, shape.0));
            x.push(normalized_coord(cell.1, shape.1));
        }
        x
    }
}

fn normalized_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub x: Vec<f64>,
    /// Flow change at the cell over the horizon.
    pub y: [f64; 2],
    pub cell: (usize, usize),
    /// Index (within the log) of the target frame.
    pub target: usize,
    /// Frame timestamp of the target frame.
    pub t: u64,
}

/// Frame whose action and proprioception enter the input vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionAnchor {
    /// Action issued at the source frame `t - T` (the forward-model layout).
    Source,
    /// Action attached to the target frame `t` (used when scoring alignment).
    Target,
}

/// Emits one pair per cell for every target frame `t >= horizon`, pairing
/// frame `t - horizon` inputs with the flow change up to frame `t`. Ordered by
/// target frame, then row-major cell.
pub fn make_pairs(log: &StreamLog, horizon: usize, layout: &FeatureLayout) -> Vec<TrainingPair> {
    make_pairs_anchored(log, horizon, layout, ActionAnchor::Source)
}

pub fn make_pairs_anchored(
    log: &StreamLog,
    horizon: usize,
    layout: &FeatureLayout,
    anchor: ActionAnchor,
) -> Vec<TrainingPair> {
    let frames = log.frames();
    if horizon == 0 || frames.len() <= horizon {
        return Vec::new();
    }
    let shape = log.header().shape();
    let mut pairs = Vec::with_capacity((frames.len() - horizon) * shape.0 * shape.1);
    for target in horizon..frames.len() {
        let src = &frames[target - horizon];
        let dst = &frames[target];
        let motor = match anchor {
            ActionAnchor::Source => src,
            ActionAnchor::Target => dst,
        };
        for row in 0..shape.0 {
            for col in 0..shape.1 {
                let before = src.flow.get(row, col);
                let after = dst.flow.get(row, col);
                let delta = after.sub(&before);
                pairs.push(TrainingPair {
                    x: layout.encode(before, &motor.action, &motor.proprio, (row, col), shape),
                    y: [delta.u, delta.v],
                    cell: (row, col),
                    target,
                    t: dst.t,
                });
            }
        }
    }
    pairs
}
