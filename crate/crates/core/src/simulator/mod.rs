//! Deterministic synthetic sensorimotor data: a differential-drive robot in a
//! walled room, analytic optical flow on the grid, delayed and smoothed
//! actuation, sensor noise and bump events.

mod camera;
mod policy;
mod scenario_file;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use camera::{Camera, CameraFrame, Pose, Room};
pub use policy::{ApproachParams, PolicySpec, RotateParams, ScriptStep, WanderParams};

use crate::error::{Error, Result};
use crate::sensorimotor::{
    ActionCommand, ActionConstants, FlowGrid, FlowVector, Proprioception, SensorimotorFrame,
};
use crate::stream_log::{LogHeader, StreamLog};
use crate::textio::fmt_f64;

/// Additive sensor noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Isotropic per-cell flow noise std (pixels/s). `None` derives it from
    /// the noiseless run as `flow_fraction` times the 90th-percentile flow
    /// magnitude.
    pub flow_std: Option<f64>,
    pub flow_fraction: f64,
    pub proprio_linear: f64,
    pub proprio_angular: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            flow_std: None,
            flow_fraction: 0.05,
            proprio_linear: 0.005,
            proprio_angular: 0.01,
        }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            flow_std: Some(0.0),
            flow_fraction: 0.0,
            proprio_linear: 0.0,
            proprio_angular: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Run length in seconds (an upper bound for episodic policies).
    pub duration: f64,
    pub frame_rate: f64,
    pub room: Room,
    pub start: Pose,
    pub robot_radius: f64,
    pub camera: Camera,
    pub constants: ActionConstants,
    /// Frames between issuing a command and the wheels starting to follow it.
    pub actuation_delay: usize,
    /// First-order time constant (s) of the wheel-velocity response; 0 makes
    /// the response instantaneous.
    pub velocity_time_constant: f64,
    pub noise: NoiseModel,
    pub policy: PolicySpec,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::wander(0)
    }
}

impl Scenario {
    /// Forward / stop / backward alternation along the long axis of the room.
    pub fn wander(seed: u64) -> Self {
        Self {
            name: "wander".into(),
            seed,
            duration: 120.0,
            frame_rate: 15.0,
            room: Room {
                width: 8.0,
                depth: 6.0,
            },
            start: Pose {
                x: 4.0,
                y: 3.0,
                heading: 0.0,
            },
            robot_radius: 0.25,
            camera: Camera::default(),
            constants: ActionConstants::default(),
            actuation_delay: 6,
            velocity_time_constant: 0.5,
            noise: NoiseModel::default(),
            policy: PolicySpec::Wander(WanderParams::default()),
        }
    }

    /// Repeated drive-into-a-wall episodes.
    pub fn approach(seed: u64, episodes: usize) -> Self {
        Self {
            name: "approach".into(),
            duration: 3600.0,
            start: Pose {
                x: 2.5,
                y: 3.0,
                heading: 0.0,
            },
            policy: PolicySpec::Approach(ApproachParams {
                episodes,
                ..ApproachParams::default()
            }),
            ..Self::wander(seed)
        }
    }

    pub fn rotate(seed: u64) -> Self {
        Self {
            name: "rotate".into(),
            duration: 60.0,
            policy: PolicySpec::Rotate(RotateParams::default()),
            ..Self::wander(seed)
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.frame_rate
    }

    pub fn max_frames(&self) -> usize {
        (self.duration * self.frame_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(Error::Scenario("frame rate must be positive".into()));
        }
        if !(self.duration > 0.0) {
            return Err(Error::Scenario("duration must be positive".into()));
        }
        if !(self.room.width > 2.0 * self.robot_radius && self.room.depth > 2.0 * self.robot_radius)
        {
            return Err(Error::Scenario("room is smaller than the robot".into()));
        }
        let r = self.robot_radius;
        if !(self.start.x >= r
            && self.start.x <= self.room.width - r
            && self.start.y >= r
            && self.start.y <= self.room.depth - r)
        {
            return Err(Error::Scenario("robot must start inside the room".into()));
        }
        if self.velocity_time_constant < 0.0 {
            return Err(Error::Scenario("velocity time constant must be >= 0".into()));
        }
        let n = &self.noise;
        if n.flow_std.is_some_and(|s| !(s >= 0.0))
            || !(n.flow_fraction >= 0.0 && n.proprio_linear >= 0.0 && n.proprio_angular >= 0.0)
        {
            return Err(Error::Scenario("noise levels must be non-negative".into()));
        }
        self.camera.validate()?;
        self.policy.validate()
    }

    pub fn kinematics(&self) -> Kinematics {
        let dt = self.dt();
        Kinematics {
            room: self.room,
            radius: self.robot_radius,
            dt,
            response: if self.velocity_time_constant > 0.0 {
                1.0 - (-dt / self.velocity_time_constant).exp()
            } else {
                1.0
            },
        }
    }

    pub fn to_text(&self) -> String {
        scenario_file::to_text(self)
    }

    pub fn parse(text: &str) -> Result<Self> {
        scenario_file::parse(text)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose,
    /// Realized forward speed (m/s).
    pub linear: f64,
    /// Realized yaw rate (rad/s).
    pub angular: f64,
    /// Touching a wall while driving into it.
    pub bump: bool,
}

/// Unicycle integration with a first-order wheel response and wall clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub room: Room,
    pub radius: f64,
    pub dt: f64,
    /// Fraction of the velocity error closed per frame.
    pub response: f64,
}

impl Kinematics {
    /// Advances one frame under the command currently reaching the wheels.
    pub fn step(&self, s: &RobotState, applied: &ActionCommand) -> RobotState {
        let v = s.linear + self.response * (applied.linear - s.linear);
        let w = s.angular + self.response * (applied.angular - s.angular);
        let mid = s.pose.heading + 0.5 * w * self.dt;
        let (sm, cm) = mid.sin_cos();
        let nx = s.pose.x + v * self.dt * cm;
        let ny = s.pose.y + v * self.dt * sm;
        let r = self.radius;
        let cx = nx.clamp(r, self.room.width - r);
        let cy = ny.clamp(r, self.room.depth - r);
        let clamped = cx != nx || cy != ny;
        let linear = if clamped {
            ((cx - s.pose.x) * cm + (cy - s.pose.y) * sm) / self.dt
        } else {
            v
        };
        RobotState {
            pose: Pose {
                x: cx,
                y: cy,
                heading: s.pose.heading + w * self.dt,
            },
            linear,
            angular: w,
            bump: clamped,
        }
    }

    /// Free distance between the robot's body and the wall along `heading`.
    pub fn clearance(&self, pose: &Pose, heading: f64) -> f64 {
        self.room.distance_along(pose.x, pose.y, heading) - self.radius
    }
}

/// Simulator output with ground truth alongside the log.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub log: StreamLog,
    pub states: Vec<RobotState>,
    pub clean_flow: Vec<FlowGrid>,
    /// Frame indices of bump rising edges.
    pub bump_onsets: Vec<usize>,
    /// Rising edges produced by pushing while already touching (no approach).
    pub static_bump_onsets: Vec<usize>,
    pub flow_noise_std: f64,
}

pub fn run(scenario: &Scenario) -> Result<StreamLog> {
    Ok(simulate(scenario)?.log)
}

/// Runs the scenario. Deterministic in `scenario` (including the seed).
pub fn simulate(scenario: &Scenario) -> Result<Simulation> {
    scenario.validate()?;
    let kin = scenario.kinematics();
    let cam = &scenario.camera;
    let mut policy_rng = stream_rng(scenario.seed, 1);
    let mut noise_rng = stream_rng(scenario.seed, 2);
    let mut policy = policy::Policy::new(&scenario.policy);

    let max_frames = scenario.max_frames();
    let mut state = RobotState {
        pose: scenario.start,
        ..RobotState::default()
    };
    let mut issued: Vec<ActionCommand> = Vec::new();
    let mut states = Vec::new();
    let mut clean = Vec::new();
    let mut static_onsets = Vec::new();
    for t in 0..max_frames {
        let obs = policy::Observation {
            state: &state,
            kinematics: &kin,
        };
        let Some(kind) = policy.next(&obs, &mut policy_rng) else {
            break;
        };
        let cmd = ActionCommand::from_kind(kind, &scenario.constants);
        issued.push(cmd);
        let applied = if t >= scenario.actuation_delay {
            issued[t - scenario.actuation_delay]
        } else {
            ActionCommand::stop()
        };
        let prev_bump = state.bump;
        let prev_speed = state.linear;
        state = kin.step(&state, &applied);
        if state.bump && !prev_bump && prev_speed.abs() < 0.5 * scenario.constants.linear {
            static_onsets.push(t);
        }
        states.push(state);
        clean.push(cam.render_flow(&scenario.room, &state.pose, state.linear, state.angular)?);
    }
    if !policy.finished() {
        return Err(Error::Scenario(format!(
            "policy did not finish within {max_frames} frames"
        )));
    }

    let flow_std = match scenario.noise.flow_std {
        Some(s) => s,
        None => scenario.noise.flow_fraction * p90_magnitude(&clean),
    };
    let flow_noise = normal(flow_std);
    let lin_noise = normal(scenario.noise.proprio_linear);
    let ang_noise = normal(scenario.noise.proprio_angular);

    let mut frames = Vec::with_capacity(clean.len());
    for (t, (grid, st)) in clean.iter().zip(&states).enumerate() {
        let cells = grid
            .cells()
            .iter()
            .map(|c| {
                FlowVector::new(
                    c.u + draw(&flow_noise, &mut noise_rng),
                    c.v + draw(&flow_noise, &mut noise_rng),
                )
            })
            .collect();
        frames.push(SensorimotorFrame {
            t: t as u64,
            flow: FlowGrid::new(cam.rows, cam.cols, cells)?,
            action: issued[t],
            proprio: Proprioception {
                linear: st.linear + draw(&lin_noise, &mut noise_rng),
                angular: st.angular + draw(&ang_noise, &mut noise_rng),
            },
            bump: st.bump,
        });
    }

    let bump_onsets: Vec<usize> = (0..states.len())
        .filter(|&t| states[t].bump && (t == 0 || !states[t - 1].bump))
        .collect();

    let mut header = LogHeader::new(cam.rows, cam.cols, scenario.frame_rate);
    header.constants = scenario.constants;
    header.scenario = scenario.name.clone();
    header.seed = Some(scenario.seed);
    header.injected_delay = Some(scenario.actuation_delay);
    header
        .metadata
        .insert("policy".into(), scenario.policy.name().into());
    header
        .metadata
        .insert("flow_noise_std".into(), fmt_f64(flow_std));
    header.metadata.insert(
        "velocity_time_constant".into(),
        fmt_f64(scenario.velocity_time_constant),
    );
    header
        .metadata
        .insert("bump_events".into(), bump_onsets.len().to_string());
    header.metadata.insert(
        "static_bump_onsets".into(),
        if static_onsets.is_empty() {
            "-".into()
        } else {
            static_onsets
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(",")
        },
    );

    Ok(Simulation {
        log: StreamLog::new(header, frames)?,
        states,
        clean_flow: clean,
        bump_onsets,
        static_bump_onsets: static_onsets,
        flow_noise_std: flow_std,
    })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(std: f64) -> Option<Normal<f64>> {
    (std > 0.0).then(|| Normal::new(0.0, std).expect("std is positive and finite"))
}

fn draw(dist: &Option<Normal<f64>>, rng: &mut ChaCha8Rng) -> f64 {
    dist.as_ref().map_or(0.0, |d| d.sample(rng))
}

/// 90th percentile (nearest rank) of all cell flow magnitudes.
pub fn p90_magnitude(grids: &[FlowGrid]) -> f64 {
    let mut mags: Vec<f64> = grids
        .iter()
        .flat_map(|g| g.cells().iter().map(|c| c.norm()))
        .collect();
    if mags.is_empty() {
        return 0.0;
    }
    mags.sort_by(f64::total_cmp);
    let rank = ((0.9 * mags.len() as f64).ceil() as usize).clamp(1, mags.len());
    mags[rank - 1]
}
