//! Text snapshot of a [`Mixture`].
//!
//! ```text
//! flowsense-igmm 1
//! dx=<n>
//! dy=<n>
//! novelty_threshold=<f64>
//! sigma_ini_x=<f64 ...>
//! sigma_ini_y=<f64 ...>
//! update_skip_threshold=<f64>
//! regularization_floor=<f64>
//! min_mass_fraction_for_prediction=<f64>
//! n_samples=<n>
//! components=<K>
//! component <created_at> <mass> <collision_value>
//! mu_x <f64 ...>
//! cov_x <f64 ...>          (row-major)
//! mu_y <f64 ...>
//! cov_y <f64 ...>
//! ... (K component records)
//! end
//! ```
//!
//! Floats use the shortest representation that parses back bit-exactly.

use std::fmt::Write as _;

use super::{GaussianBlock, IgmmConfig, Mixture, MixtureComponent};
use crate::error::{parse_err, Error, Result};
use crate::textio::{fmt_f64, join_f64, parse_f64, parse_f64_list, parse_usize, split_kv};

pub const SNAPSHOT_MAGIC: &str = "flowsense-igmm";
pub const SNAPSHOT_VERSION: &str = "1";

impl Mixture {
    pub fn to_snapshot(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION}");
        let _ = writeln!(s, "dx={}", self.dx());
        let _ = writeln!(s, "dy={}", self.dy());
        let _ = writeln!(s, "novelty_threshold={}", fmt_f64(c.novelty_threshold));
        let _ = writeln!(s, "sigma_ini_x={}", join_f64(&c.sigma_ini_x));
        let _ = writeln!(s, "sigma_ini_y={}", join_f64(&c.sigma_ini_y));
        let _ = writeln!(s, "update_skip_threshold={}", fmt_f64(c.update_skip_threshold));
        let _ = writeln!(s, "regularization_floor={}", fmt_f64(c.regularization_floor));
        let _ = writeln!(
            s,
            "min_mass_fraction_for_prediction={}",
            fmt_f64(c.min_mass_fraction_for_prediction)
        );
        let _ = writeln!(s, "n_samples={}", self.n_samples);
        let _ = writeln!(s, "components={}", self.components.len());
        for comp in &self.components {
            let _ = writeln!(
                s,
                "component {} {} {}",
                comp.created_at,
                fmt_f64(comp.mass),
                fmt_f64(comp.collision_value)
            );
            let _ = writeln!(s, "mu_x {}", join_f64(comp.x.mean()));
            let _ = writeln!(s, "cov_x {}", join_f64(comp.x.cov()));
            let _ = writeln!(s, "mu_y {}", join_f64(comp.y.mean()));
            let _ = writeln!(s, "cov_y {}", join_f64(comp.y.cov()));
        }
        s.push_str("end\n");
        s
    }

    /// Parses a snapshot. Density caches are left dirty and rebuilt on first
    /// use (or eagerly via [`Mixture::refresh_caches`]).
    pub fn from_snapshot(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (ln, magic) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty snapshot"))?;
        let mut head = magic.split_whitespace();
        if head.next() != Some(SNAPSHOT_MAGIC) {
            return Err(parse_err(ln, "not a mixture snapshot"));
        }
        let version = head.next().unwrap_or("").to_string();
        if version != SNAPSHOT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: SNAPSHOT_VERSION.into(),
            });
        }

        let mut next_kv = |key: &str| -> Result<(usize, String)> {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| parse_err(0, format!("truncated snapshot: missing '{key}'")))?;
            match split_kv(line) {
                Some((k, v)) if k == key => Ok((ln, v.to_string())),
                _ => Err(parse_err(ln, format!("expected '{key}=...'"))),
            }
        };
        let (l, v) = next_kv("dx")?;
        let dx = parse_usize(&v, l)?;
        let (l, v) = next_kv("dy")?;
        let dy = parse_usize(&v, l)?;
        let (l, v) = next_kv("novelty_threshold")?;
        let novelty_threshold = parse_f64(&v, l)?;
        let (l, v) = next_kv("sigma_ini_x")?;
        let sigma_ini_x = parse_f64_list(&v, l)?;
        let (l, v) = next_kv("sigma_ini_y")?;
        let sigma_ini_y = parse_f64_list(&v, l)?;
        let (l, v) = next_kv("update_skip_threshold")?;
        let update_skip_threshold = parse_f64(&v, l)?;
        let (l, v) = next_kv("regularization_floor")?;
        let regularization_floor = parse_f64(&v, l)?;
        let (l, v) = next_kv("min_mass_fraction_for_prediction")?;
        let min_mass_fraction_for_prediction = parse_f64(&v, l)?;
        let (l, v) = next_kv("n_samples")?;
        let n_samples = v
            .parse::<u64>()
            .map_err(|_| parse_err(l, "bad n_samples"))?;
        let (l, v) = next_kv("components")?;
        let count = parse_usize(&v, l)?;

        let config = IgmmConfig {
            novelty_threshold,
            sigma_ini_x,
            sigma_ini_y,
            update_skip_threshold,
            regularization_floor,
            min_mass_fraction_for_prediction,
        };
        if config.dx() != dx || config.dy() != dy {
            return Err(parse_err(l, "initial scales disagree with block dimensions"));
        }
        let mut mixture = Mixture::new(config)?;

        let mut data_line = |tag: &str, len: usize| -> Result<Vec<f64>> {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| parse_err(0, format!("truncated snapshot: missing '{tag}'")))?;
            let rest = line
                .strip_prefix(tag)
                .ok_or_else(|| parse_err(ln, format!("expected '{tag}'")))?;
            let values = parse_f64_list(rest, ln)?;
            if values.len() != len {
                return Err(parse_err(
                    ln,
                    format!("'{tag}' has {} values, expected {len}", values.len()),
                ));
            }
            Ok(values)
        };
        for _ in 0..count {
            let header = data_line("component", 3)?;
            let created_at = header[0];
            if created_at < 0.0 || created_at.fract() != 0.0 {
                return Err(parse_err(0, "bad component creation index"));
            }
            let mu_x = data_line("mu_x", dx)?;
            let cov_x = data_line("cov_x", dx * dx)?;
            let mu_y = data_line("mu_y", dy)?;
            let cov_y = data_line("cov_y", dy * dy)?;
            let mut comp = MixtureComponent::new(
                GaussianBlock::new(mu_x, cov_x)?,
                GaussianBlock::new(mu_y, cov_y)?,
                header[1],
                created_at as u64,
            )?;
            comp.collision_value = header[2];
            mixture.components.push(comp);
        }
        mixture.set_n_samples(n_samples);
        match data_line("end", 0) {
            Ok(_) => {}
            Err(_) => return Err(parse_err(0, "truncated snapshot: missing 'end'")),
        }
        Ok(mixture)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn trained(n_components_hint: usize) -> Mixture {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut m = Mixture::new(IgmmConfig::new(vec![0.3, 0.3, 0.3], vec![0.3, 0.3])).unwrap();
        let mut i = 0;
        while m.len() < n_components_hint {
            let c = (i % 97) as f64;
            let x = [c + 0.1 * normal.sample(&mut rng), -c, 0.1 * normal.sample(&mut rng)];
            let y = [c * 0.5, 0.2 * normal.sample(&mut rng)];
            m.learn_one(&x, &y).unwrap();
            i += 1;
        }
        for j in 0..m.len() {
            m.set_collision_value(j, j as f64 / 7.0);
        }
        m
    }

    #[test]
    fn round_trip_is_field_for_field() {
        let m = trained(50);
        let text = m.to_snapshot();
        let back = Mixture::from_snapshot(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.n_samples(), m.n_samples());
        assert_eq!(back.to_snapshot(), text);
        for (a, b) in back.components().iter().zip(m.components()) {
            assert_eq!(a.collision_value().to_bits(), b.collision_value().to_bits());
            assert!(!a.input().is_cached());
        }
    }

    #[test]
    fn rejects_empty_truncated_and_wrong_version() {
        assert!(Mixture::from_snapshot("").is_err());
        let text = trained(5).to_snapshot();
        let truncated: String = text.lines().take(14).collect::<Vec<_>>().join("\n");
        assert!(Mixture::from_snapshot(&truncated).is_err());
        let no_end = text.replace("end\n", "");
        assert!(Mixture::from_snapshot(&no_end).is_err());
        let wrong = text.replacen("flowsense-igmm 1", "flowsense-igmm 2", 1);
        assert!(matches!(Mixture::from_snapshot(&wrong), Err(Error::Version { .. })));
    }
}
