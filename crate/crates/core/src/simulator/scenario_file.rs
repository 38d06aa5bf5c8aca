//! Scenario description files.
//!
//! `key=value` lines (`#` starts a comment) followed by an optional
//! `[script]` section of `<seconds> <action>` lines. `policy` selects the
//! preset whose defaults the remaining keys override, so it may appear
//! anywhere in the key section.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{ApproachParams, PolicySpec, RotateParams, Scenario, ScriptStep, WanderParams};
use crate::error::{parse_err, Error, Result};
use crate::sensorimotor::ActionKind;
use crate::textio::{fmt_f64, parse_f64, parse_usize};

pub(super) fn to_text(s: &Scenario) -> String {
    let mut o = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(o, "{k}={v}");
    };
    kv("policy", s.policy.name().into());
    kv("name", s.name.clone());
    kv("seed", s.seed.to_string());
    kv("duration", fmt_f64(s.duration));
    kv("frame_rate", fmt_f64(s.frame_rate));
    kv("room_width", fmt_f64(s.room.width));
    kv("room_depth", fmt_f64(s.room.depth));
    kv("start_x", fmt_f64(s.start.x));
    kv("start_y", fmt_f64(s.start.y));
    kv("start_heading", fmt_f64(s.start.heading));
    kv("robot_radius", fmt_f64(s.robot_radius));
    let c = &s.camera;
    kv("focal", fmt_f64(c.focal));
    kv("image_width", fmt_f64(c.image_width));
    kv("image_height", fmt_f64(c.image_height));
    kv("cx", fmt_f64(c.cx));
    kv("cy", fmt_f64(c.cy));
    kv("camera_height", fmt_f64(c.height));
    kv("camera_tilt", fmt_f64(c.tilt));
    kv("camera_offset", fmt_f64(c.offset));
    kv("grid_rows", c.rows.to_string());
    kv("grid_cols", c.cols.to_string());
    kv("action_linear", fmt_f64(s.constants.linear));
    kv("action_angular", fmt_f64(s.constants.angular));
    kv("actuation_delay", s.actuation_delay.to_string());
    kv("velocity_time_constant", fmt_f64(s.velocity_time_constant));
    kv(
        "flow_noise",
        s.noise.flow_std.map_or_else(|| "auto".to_string(), fmt_f64),
    );
    kv("flow_noise_fraction", fmt_f64(s.noise.flow_fraction));
    kv("proprio_noise_linear", fmt_f64(s.noise.proprio_linear));
    kv("proprio_noise_angular", fmt_f64(s.noise.proprio_angular));
    match &s.policy {
        PolicySpec::Wander(p) => {
            kv("wander_min_segment", p.min_segment.to_string());
            kv("wander_max_segment", p.max_segment.to_string());
            kv("wander_margin", fmt_f64(p.margin));
        }
        PolicySpec::Approach(p) => {
            kv("approach_episodes", p.episodes.to_string());
            kv("approach_clear_min", fmt_f64(p.clear_min));
            kv("approach_clear_max", fmt_f64(p.clear_max));
            kv("approach_min_clearance", fmt_f64(p.min_approach));
            kv("approach_turn_min", p.turn_min.to_string());
            kv("approach_turn_max", p.turn_max.to_string());
            kv("approach_pause_min", p.pause_min.to_string());
            kv("approach_pause_max", p.pause_max.to_string());
            kv("approach_contact_frames", p.contact_frames.to_string());
            kv("approach_static_push", p.static_push_frames.to_string());
        }
        PolicySpec::Rotate(p) => {
            kv("rotate_min_segment", p.min_segment.to_string());
            kv("rotate_max_segment", p.max_segment.to_string());
        }
        PolicySpec::Script(steps) => {
            o.push_str("[script]\n");
            for st in steps {
                let _ = writeln!(o, "{} {}", fmt_f64(st.seconds), st.kind);
            }
        }
    }
    o
}

pub(super) fn parse(text: &str) -> Result<Scenario> {
    let mut kv: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut script = Vec::new();
    let mut in_script = false;
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line == "[script]" {
            in_script = true;
            continue;
        }
        if in_script {
            let mut tok = line.split_whitespace();
            let (Some(secs), Some(kind), None) = (tok.next(), tok.next(), tok.next()) else {
                return Err(parse_err(ln, "script lines are '<seconds> <action>'"));
            };
            let kind: ActionKind = kind
                .parse()
                .map_err(|_| parse_err(ln, format!("unknown action '{kind}'")))?;
            script.push(ScriptStep {
                seconds: parse_f64(secs, ln)?,
                kind,
            });
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(ln, "expected key=value"))?;
        if kv.insert(k.trim().to_string(), (ln, v.trim().to_string())).is_some() {
            return Err(parse_err(ln, format!("duplicate key '{}'", k.trim())));
        }
    }

    let policy = kv.remove("policy").map(|(_, v)| v);
    let mut s = match policy.as_deref() {
        None | Some("wander") => Scenario::wander(0),
        Some("approach") => Scenario::approach(0, ApproachParams::default().episodes),
        Some("rotate") => Scenario::rotate(0),
        Some("script") => Scenario {
            name: "script".into(),
            policy: PolicySpec::Script(Vec::new()),
            ..Scenario::wander(0)
        },
        Some(other) => return Err(Error::Scenario(format!("unknown policy '{other}'"))),
    };
    if !script.is_empty() {
        match &mut s.policy {
            PolicySpec::Script(steps) => *steps = script,
            _ => return Err(Error::Scenario("[script] given but policy is not 'script'".into())),
        }
    }

    for (k, (ln, v)) in kv {
        let f = || parse_f64(&v, ln);
        let u = || parse_usize(&v, ln);
        match k.as_str() {
            "name" => s.name = v.clone(),
            "seed" => s.seed = v.parse().map_err(|_| parse_err(ln, "bad seed"))?,
            "duration" => s.duration = f()?,
            "frame_rate" => s.frame_rate = f()?,
            "room_width" => s.room.width = f()?,
            "room_depth" => s.room.depth = f()?,
            "start_x" => s.start.x = f()?,
            "start_y" => s.start.y = f()?,
            "start_heading" => s.start.heading = f()?,
            "robot_radius" => s.robot_radius = f()?,
            "focal" => s.camera.focal = f()?,
            "image_width" => s.camera.image_width = f()?,
            "image_height" => s.camera.image_height = f()?,
            "cx" => s.camera.cx = f()?,
            "cy" => s.camera.cy = f()?,
            "camera_height" => s.camera.height = f()?,
            "camera_tilt" => s.camera.tilt = f()?,
            "camera_tilt_deg" => s.camera.tilt = f()?.to_radians(),
            "camera_offset" => s.camera.offset = f()?,
            "grid_rows" => s.camera.rows = u()?,
            "grid_cols" => s.camera.cols = u()?,
            "action_linear" => s.constants.linear = f()?,
            "action_angular" => s.constants.angular = f()?,
            "actuation_delay" => s.actuation_delay = u()?,
            "velocity_time_constant" => s.velocity_time_constant = f()?,
            "flow_noise" => {
                s.noise.flow_std = if v == "auto" { None } else { Some(f()?) };
            }
            "flow_noise_fraction" => s.noise.flow_fraction = f()?,
            "proprio_noise_linear" => s.noise.proprio_linear = f()?,
            "proprio_noise_angular" => s.noise.proprio_angular = f()?,
            _ => set_policy_key(&mut s.policy, &k, &v, ln)?,
        }
    }
    s.validate()?;
    Ok(s)
}

fn set_policy_key(policy: &mut PolicySpec, k: &str, v: &str, ln: usize) -> Result<()> {
    let f = || parse_f64(v, ln);
    let u = || parse_usize(v, ln);
    let unknown = || parse_err(ln, format!("unknown key '{k}' for policy '{}'", policy_name(k)));
    match policy {
        PolicySpec::Wander(WanderParams {
            min_segment,
            max_segment,
            margin,
        }) => match k {
            "wander_min_segment" => *min_segment = u()?,
            "wander_max_segment" => *max_segment = u()?,
            "wander_margin" => *margin = f()?,
            _ => return Err(unknown()),
        },
        PolicySpec::Approach(p) => match k {
            "approach_episodes" => p.episodes = u()?,
            "approach_clear_min" => p.clear_min = f()?,
            "approach_clear_max" => p.clear_max = f()?,
            "approach_min_clearance" => p.min_approach = f()?,
            "approach_turn_min" => p.turn_min = u()?,
            "approach_turn_max" => p.turn_max = u()?,
            "approach_pause_min" => p.pause_min = u()?,
            "approach_pause_max" => p.pause_max = u()?,
            "approach_contact_frames" => p.contact_frames = u()?,
            "approach_static_push" => p.static_push_frames = u()?,
            _ => return Err(unknown()),
        },
        PolicySpec::Rotate(RotateParams {
            min_segment,
            max_segment,
        }) => match k {
            "rotate_min_segment" => *min_segment = u()?,
            "rotate_max_segment" => *max_segment = u()?,
            _ => return Err(unknown()),
        },
        PolicySpec::Script(_) => return Err(unknown()),
    }
    Ok(())
}

fn policy_name(key: &str) -> &str {
    key.split('_').next().unwrap_or(key)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip() {
        let mut scripted = Scenario::wander(9);
        scripted.name = "script".into();
        scripted.policy = PolicySpec::Script(vec![
            ScriptStep {
                seconds: 2.0,
                kind: ActionKind::Forward,
            },
            ScriptStep {
                seconds: 0.5,
                kind: ActionKind::TurnLeft,
            },
        ]);
        scripted.noise.flow_std = Some(0.25);
        for s in [
            Scenario::wander(1),
            Scenario::approach(2, 7),
            Scenario::rotate(3),
            scripted,
        ] {
            let text = to_text(&s);
            assert_eq!(parse(&text).unwrap(), s, "{text}");
        }
    }

    #[test]
    fn defaults_fill_missing_keys() {
        let s = parse("policy=approach\nseed=4\napproach_episodes=3\n").unwrap();
        let mut want = Scenario::approach(4, 3);
        want.seed = 4;
        assert_eq!(s, want);
        let deg = parse("camera_tilt_deg=20").unwrap();
        assert!((deg.camera.tilt - 20f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse("policy=script\n[script]\n1.0 jump\n").is_err());
        assert!(parse("policy=script\n").is_err());
        assert!(parse("policy=fly\n").is_err());
        assert!(parse("colour=blue\n").is_err());
        assert!(parse("seed=1\nseed=2\n").is_err());
        assert!(parse("start_x=-3\n").is_err());
        assert!(parse("approach_episodes=3\n").is_err());
    }
}
