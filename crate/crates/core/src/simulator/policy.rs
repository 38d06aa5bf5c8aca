//! Action sources: fixed scripts and simple reactive policies that see the
//! true robot state.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Kinematics, RobotState};
use crate::error::{Error, Result};
use crate::sensorimotor::ActionKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub seconds: f64,
    pub kind: ActionKind,
}

/// Random forward / stop / backward segments, reversing before the robot
/// gets within `margin` metres of a wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WanderParams {
    pub min_segment: usize,
    pub max_segment: usize,
    pub margin: f64,
}

impl Default for WanderParams {
    fn default() -> Self {
        Self {
            min_segment: 20,
            max_segment: 60,
            margin: 1.3,
        }
    }
}

/// Episodes of: pause, drive forward until contact, stop, back off to a
/// random clearance, turn by a random amount.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproachParams {
    pub episodes: usize,
    pub clear_min: f64,
    pub clear_max: f64,
    /// Minimum free distance ahead before starting an approach.
    pub min_approach: f64,
    pub turn_min: usize,
    pub turn_max: usize,
    pub pause_min: usize,
    pub pause_max: usize,
    /// Stop frames after contact is sensed.
    pub contact_frames: usize,
    /// When non-zero, push forward again for this many frames while already
    /// touching the wall (a contact with no approach).
    pub static_push_frames: usize,
}

impl Default for ApproachParams {
    fn default() -> Self {
        Self {
            episodes: 20,
            clear_min: 1.2,
            clear_max: 2.4,
            min_approach: 1.0,
            turn_min: 4,
            turn_max: 20,
            pause_min: 10,
            pause_max: 20,
            contact_frames: 15,
            static_push_frames: 0,
        }
    }
}

/// Alternating left / stop / right / stop rotation segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotateParams {
    pub min_segment: usize,
    pub max_segment: usize,
}

impl Default for RotateParams {
    fn default() -> Self {
        Self {
            min_segment: 15,
            max_segment: 45,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicySpec {
    /// Cycled until the scenario duration is reached.
    Script(Vec<ScriptStep>),
    Wander(WanderParams),
    Approach(ApproachParams),
    Rotate(RotateParams),
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Script(_) => "script",
            PolicySpec::Wander(_) => "wander",
            PolicySpec::Approach(_) => "approach",
            PolicySpec::Rotate(_) => "rotate",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range = |lo: usize, hi: usize, what: &str| {
            if lo == 0 || hi < lo {
                Err(Error::Scenario(format!("{what}: need 1 <= min <= max")))
            } else {
                Ok(())
            }
        };
        match self {
            PolicySpec::Script(steps) => {
                if steps.is_empty() {
                    return Err(Error::Scenario("action script is empty".into()));
                }
                if steps.iter().any(|s| !(s.seconds > 0.0 && s.seconds.is_finite())) {
                    return Err(Error::Scenario("script durations must be positive".into()));
                }
                Ok(())
            }
            PolicySpec::Wander(p) => {
                range(p.min_segment, p.max_segment, "wander segments")?;
                if !(p.margin >= 0.0) {
                    return Err(Error::Scenario("wander margin must be >= 0".into()));
                }
                Ok(())
            }
            PolicySpec::Approach(p) => {
                if p.episodes == 0 {
                    return Err(Error::Scenario("approach needs at least one episode".into()));
                }
                range(p.turn_min, p.turn_max, "approach turns")?;
                range(p.pause_min, p.pause_max, "approach pauses")?;
                if !(p.clear_min > 0.0 && p.clear_max >= p.clear_min) {
                    return Err(Error::Scenario("approach clearances: need 0 < min <= max".into()));
                }
                Ok(())
            }
            PolicySpec::Rotate(p) => range(p.min_segment, p.max_segment, "rotate segments"),
        }
    }
}

pub(super) struct Observation<'a> {
    pub state: &'a RobotState,
    pub kinematics: &'a Kinematics,
}

impl Observation<'_> {
    fn ahead(&self) -> f64 {
        self.kinematics.clearance(&self.state.pose, self.state.pose.heading)
    }

    fn behind(&self) -> f64 {
        self.kinematics
            .clearance(&self.state.pose, self.state.pose.heading + PI)
    }
}

#[derive(Debug, Clone, Copy)]
pub(super) enum Phase {
    Pause(usize),
    Approach,
    Contact(usize),
    StaticPush(usize),
    StaticSettle(usize),
    Backoff(f64),
    Turn(usize, ActionKind),
    Done,
}

pub(super) enum Policy {
    Script {
        steps: Vec<ScriptStep>,
        index: usize,
        remaining: Option<usize>,
    },
    Wander {
        p: WanderParams,
        kind: ActionKind,
        remaining: usize,
    },
    Approach {
        p: ApproachParams,
        phase: Phase,
        completed: usize,
    },
    Rotate {
        p: RotateParams,
        cycle: usize,
        remaining: usize,
    },
}

fn span(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

impl Policy {
    pub fn new(spec: &PolicySpec) -> Self {
        match spec {
            PolicySpec::Script(steps) => Policy::Script {
                steps: steps.clone(),
                index: 0,
                remaining: None,
            },
            PolicySpec::Wander(p) => Policy::Wander {
                p: *p,
                kind: ActionKind::Stop,
                remaining: 0,
            },
            PolicySpec::Approach(p) => Policy::Approach {
                p: *p,
                phase: Phase::Pause(p.pause_min),
                completed: 0,
            },
            PolicySpec::Rotate(p) => Policy::Rotate {
                p: *p,
                cycle: 0,
                remaining: 0,
            },
        }
    }

    /// Whether an episodic policy has completed; time-driven ones always are.
    pub fn finished(&self) -> bool {
        match self {
            Policy::Approach { phase, .. } => matches!(phase, Phase::Done),
            _ => true,
        }
    }

    /// Next command, or `None` once an episodic policy is done.
    pub fn next(&mut self, obs: &Observation<'_>, rng: &mut ChaCha8Rng) -> Option<ActionKind> {
        match self {
            Policy::Script {
                steps,
                index,
                remaining,
            } => {
                let frames = |s: &ScriptStep| ((s.seconds / obs.kinematics.dt).round() as usize).max(1);
                let left = remaining.get_or_insert_with(|| frames(&steps[*index]));
                if *left == 0 {
                    *index = (*index + 1) % steps.len();
                    *left = frames(&steps[*index]);
                }
                *left -= 1;
                Some(steps[*index].kind)
            }
            Policy::Wander { p, kind, remaining } => {
                if *remaining == 0 {
                    *kind = [ActionKind::Forward, ActionKind::Stop, ActionKind::Backward]
                        [rng.random_range(0..3)];
                    *remaining = span(rng, p.min_segment, p.max_segment);
                }
                if *kind == ActionKind::Forward && obs.ahead() < p.margin {
                    *kind = ActionKind::Backward;
                    *remaining = span(rng, p.min_segment, p.max_segment);
                } else if *kind == ActionKind::Backward && obs.behind() < p.margin {
                    *kind = ActionKind::Forward;
                    *remaining = span(rng, p.min_segment, p.max_segment);
                }
                *remaining -= 1;
                Some(*kind)
            }
            Policy::Approach {
                p,
                phase,
                completed,
            } => approach_step(p, phase, completed, obs, rng),
            Policy::Rotate {
                p,
                cycle,
                remaining,
            } => {
                if *remaining == 0 {
                    *cycle = (*cycle + 1) % 4;
                    *remaining = span(rng, p.min_segment, p.max_segment);
                }
                *remaining -= 1;
                Some(match *cycle {
                    1 => ActionKind::TurnLeft,
                    3 => ActionKind::TurnRight,
                    _ => ActionKind::Stop,
                })
            }
        }
    }
}

fn approach_step(
    p: &ApproachParams,
    phase: &mut Phase,
    completed: &mut usize,
    obs: &Observation<'_>,
    rng: &mut ChaCha8Rng,
) -> Option<ActionKind> {
    // Some phase changes need no action of their own; loop until one emits.
    loop {
        match *phase {
            Phase::Pause(0) => *phase = Phase::Approach,
            Phase::Pause(n) => {
                *phase = Phase::Pause(n - 1);
                return Some(ActionKind::Stop);
            }
            Phase::Approach => {
                if obs.state.bump {
                    *phase = Phase::Contact(p.contact_frames);
                } else {
                    return Some(ActionKind::Forward);
                }
            }
            Phase::Contact(0) => {
                if p.static_push_frames > 0 {
                    *phase = Phase::StaticPush(p.static_push_frames);
                } else {
                    *phase = end_episode(p, completed, rng);
                }
            }
            Phase::Contact(n) => {
                *phase = Phase::Contact(n - 1);
                return Some(ActionKind::Stop);
            }
            Phase::StaticPush(0) => *phase = Phase::StaticSettle(p.contact_frames),
            Phase::StaticPush(n) => {
                *phase = Phase::StaticPush(n - 1);
                return Some(ActionKind::Forward);
            }
            Phase::StaticSettle(0) => *phase = end_episode(p, completed, rng),
            Phase::StaticSettle(n) => {
                *phase = Phase::StaticSettle(n - 1);
                return Some(ActionKind::Stop);
            }
            Phase::Backoff(target) => {
                if obs.ahead() >= target || obs.behind() < 0.3 {
                    let dir = if rng.random_bool(0.5) {
                        ActionKind::TurnLeft
                    } else {
                        ActionKind::TurnRight
                    };
                    *phase = Phase::Turn(span(rng, p.turn_min, p.turn_max), dir);
                } else {
                    return Some(ActionKind::Backward);
                }
            }
            Phase::Turn(0, dir) => {
                if obs.ahead() >= p.min_approach {
                    *phase = Phase::Pause(span(rng, p.pause_min, p.pause_max));
                } else {
                    *phase = Phase::Turn(1, dir);
                }
            }
            Phase::Turn(n, dir) => {
                *phase = Phase::Turn(n - 1, dir);
                return Some(dir);
            }
            Phase::Done => return None,
        }
    }
}

fn end_episode(p: &ApproachParams, completed: &mut usize, rng: &mut ChaCha8Rng) -> Phase {
    *completed += 1;
    if *completed >= p.episodes {
        Phase::Done
    } else {
        Phase::Backoff(rng.random_range(p.clear_min..=p.clear_max))
    }
}
