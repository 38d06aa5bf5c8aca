//! Persisted sensorimotor streams.
//!
//! Text layout: a block of `key=value` header lines followed by one line per
//! frame,
//!
//! ```text
//! t action_kind linear angular bump u_00 v_00 u_01 v_01 ...
//! ```
//!
//! where `linear`/`angular` are the measured (proprioceptive) velocities,
//! `bump` is `0` or `1`, and cells are row-major. The commanded velocities
//! follow from the action kind and the header's action constants.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{parse_err, Error, Result};
use crate::sensorimotor::{
    ActionCommand, ActionConstants, ActionKind, FlowGrid, FlowVector, Proprioception,
    SensorimotorFrame,
};
use crate::textio::{fmt_f64, parse_f64, parse_usize, split_kv};

pub const FORMAT_NAME: &str = "flowsense-streamlog";
pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub rows: usize,
    pub cols: usize,
    pub frame_rate: f64,
    pub constants: ActionConstants,
    pub scenario: String,
    pub seed: Option<u64>,
    /// Ground-truth actuation delay in frames, when the log is synthetic.
    pub injected_delay: Option<usize>,
    pub metadata: BTreeMap<String, String>,
}

impl LogHeader {
    pub fn new(rows: usize, cols: usize, frame_rate: f64) -> Self {
        Self {
            rows,
            cols,
            frame_rate,
            constants: ActionConstants::default(),
            scenario: "unknown".to_string(),
            seed: None,
            injected_delay: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamLog {
    header: LogHeader,
    frames: Vec<SensorimotorFrame>,
}

impl StreamLog {
    pub fn new(header: LogHeader, frames: Vec<SensorimotorFrame>) -> Result<Self> {
        if header.rows == 0 || header.cols == 0 {
            return Err(Error::InvalidConfig("log grid must be at least 1x1".into()));
        }
        if !(header.frame_rate > 0.0 && header.frame_rate.is_finite()) {
            return Err(Error::InvalidConfig("frame rate must be positive".into()));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.flow.shape() != header.shape() {
                return Err(Error::DimensionMismatch {
                    what: "frame grid shape",
                    expected: header.cell_count(),
                    actual: f.flow.len(),
                });
            }
            if i > 0 && f.t <= frames[i - 1].t {
                return Err(Error::InvalidConfig(format!(
                    "frame timestamps must be strictly increasing (frame {i})"
                )));
            }
            if !(f.proprio.linear.is_finite() && f.proprio.angular.is_finite()) {
                return Err(Error::NonFinite("proprioception"));
            }
        }
        Ok(Self { header, frames })
    }

    pub fn header(&self) -> &LogHeader {
        &self.header
    }

    pub fn header_mut(&mut self) -> &mut LogHeader {
        &mut self.header
    }

    pub fn frames(&self) -> &[SensorimotorFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn into_parts(self) -> (LogHeader, Vec<SensorimotorFrame>) {
        (self.header, self.frames)
    }

    /// Frames `range` as a new log sharing this header.
    pub fn slice(&self, range: std::ops::Range<usize>) -> StreamLog {
        StreamLog {
            header: self.header.clone(),
            frames: self.frames[range].to_vec(),
        }
    }

    pub fn duration_seconds(&self) -> f64 {
        self.frames.len() as f64 / self.header.frame_rate
    }

    pub fn to_text(&self) -> String {
        let h = &self.header;
        let mut s = String::new();
        let _ = writeln!(s, "format={FORMAT_NAME}");
        let _ = writeln!(s, "version={FORMAT_VERSION}");
        let _ = writeln!(s, "rows={}", h.rows);
        let _ = writeln!(s, "cols={}", h.cols);
        let _ = writeln!(s, "frame_rate={}", fmt_f64(h.frame_rate));
        let _ = writeln!(s, "action_linear={}", fmt_f64(h.constants.linear));
        let _ = writeln!(s, "action_angular={}", fmt_f64(h.constants.angular));
        let _ = writeln!(s, "scenario={}", h.scenario);
        if let Some(seed) = h.seed {
            let _ = writeln!(s, "seed={seed}");
        }
        if let Some(d) = h.injected_delay {
            let _ = writeln!(s, "injected_delay={d}");
        }
        for (k, v) in &h.metadata {
            let _ = writeln!(s, "meta.{k}={v}");
        }
        for f in &self.frames {
            let _ = write!(
                s,
                "{} {} {} {} {}",
                f.t,
                f.action.kind,
                fmt_f64(f.proprio.linear),
                fmt_f64(f.proprio.angular),
                u8::from(f.bump)
            );
            for c in f.flow.cells() {
                let _ = write!(s, " {} {}", fmt_f64(c.u), fmt_f64(c.v));
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        let mut lines = text.lines().enumerate().peekable();
        while let Some((_, line)) = lines.peek() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                lines.next();
                continue;
            }
            match split_kv(line) {
                Some((k, v)) => {
                    kv.insert(k.to_string(), v.to_string());
                    lines.next();
                }
                None => break,
            }
        }
        match kv.get("format").map(String::as_str) {
            Some(FORMAT_NAME) => {}
            other => {
                return Err(parse_err(
                    1,
                    format!("not a stream log (format={})", other.unwrap_or("<missing>")),
                ))
            }
        }
        let version = kv.get("version").cloned().unwrap_or_default();
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION.into(),
            });
        }
        let need = |k: &str| -> Result<&String> {
            kv.get(k)
                .ok_or_else(|| parse_err(0, format!("missing header key '{k}'")))
        };
        let rows = parse_usize(need("rows")?, 0)?;
        let cols = parse_usize(need("cols")?, 0)?;
        let mut header = LogHeader::new(rows, cols, parse_f64(need("frame_rate")?, 0)?);
        header.constants = ActionConstants {
            linear: parse_f64(need("action_linear")?, 0)?,
            angular: parse_f64(need("action_angular")?, 0)?,
        };
        header.scenario = kv.get("scenario").cloned().unwrap_or_else(|| "unknown".into());
        header.seed = match kv.get("seed") {
            Some(s) => Some(
                s.parse::<u64>()
                    .map_err(|_| parse_err(0, format!("bad seed '{s}'")))?,
            ),
            None => None,
        };
        header.injected_delay = match kv.get("injected_delay") {
            Some(s) => Some(parse_usize(s, 0)?),
            None => None,
        };
        for (k, v) in &kv {
            if let Some(key) = k.strip_prefix("meta.") {
                header.metadata.insert(key.to_string(), v.clone());
            }
        }

        let n_cells = header.cell_count();
        let mut frames = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != 5 + 2 * n_cells {
                return Err(parse_err(
                    lineno,
                    format!(
                        "expected {} cells ({} tokens), found {} tokens",
                        n_cells,
                        5 + 2 * n_cells,
                        tokens.len()
                    ),
                ));
            }
            let t = tokens[0]
                .parse::<u64>()
                .map_err(|_| parse_err(lineno, "bad frame index"))?;
            let kind: ActionKind = tokens[1]
                .parse()
                .map_err(|_| parse_err(lineno, format!("unknown action '{}'", tokens[1])))?;
            let proprio = Proprioception {
                linear: parse_f64(tokens[2], lineno)?,
                angular: parse_f64(tokens[3], lineno)?,
            };
            let bump = match tokens[4] {
                "0" => false,
                "1" => true,
                other => return Err(parse_err(lineno, format!("bad bump flag '{other}'"))),
            };
            let mut cells = Vec::with_capacity(n_cells);
            for c in 0..n_cells {
                cells.push(FlowVector::new(
                    parse_f64(tokens[5 + 2 * c], lineno)?,
                    parse_f64(tokens[6 + 2 * c], lineno)?,
                ));
            }
            frames.push(SensorimotorFrame {
                t,
                flow: FlowGrid::new(rows, cols, cells)?,
                action: ActionCommand::from_kind(kind, &header.constants),
                proprio,
                bump,
            });
        }
        StreamLog::new(header, frames)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut s = String::new();
        r.read_to_string(&mut s)?;
        Self::parse(&s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_log() -> StreamLog {
        let mut header = LogHeader::new(2, 2, 15.0);
        header.scenario = "unit".into();
        header.seed = Some(3);
        header.injected_delay = Some(6);
        header.metadata.insert("note".into(), "hello".into());
        let c = header.constants;
        let frames = (0..4)
            .map(|t| SensorimotorFrame {
                t,
                flow: FlowGrid::new(
                    2,
                    2,
                    (0..4)
                        .map(|i| FlowVector::new(0.1 * i as f64 + t as f64, -1.0 / 3.0))
                        .collect(),
                )
                .unwrap(),
                action: ActionCommand::from_kind(ActionKind::ALL[t as usize % 5], &c),
                proprio: Proprioception {
                    linear: 0.29,
                    angular: -0.01,
                },
                bump: t == 2,
            })
            .collect();
        StreamLog::new(header, frames).unwrap()
    }

    #[test]
    fn text_round_trip_is_exact() {
        let log = sample_log();
        let text = log.to_text();
        let back = StreamLog::parse(&text).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn rejects_mismatched_cell_count() {
        let text = sample_log().to_text();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let last = lines.last_mut().unwrap();
        last.push_str(" 1.0");
        let broken = lines.join("\n");
        assert!(matches!(StreamLog::parse(&broken), Err(Error::Parse { .. })));
    }

    #[test]
    fn rejects_wrong_version_and_non_monotone_time() {
        let text = sample_log().to_text().replace("version=1", "version=9");
        assert!(matches!(StreamLog::parse(&text), Err(Error::Version { .. })));

        let log = sample_log();
        let (h, mut frames) = log.into_parts();
        frames[2].t = 0;
        assert!(StreamLog::new(h, frames).is_err());
    }
}
