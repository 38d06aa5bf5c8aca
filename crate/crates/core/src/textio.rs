//! Small helpers shared by the line-oriented text formats.

use std::fmt::Write as _;

use crate::error::{parse_err, Result};

/// Shortest decimal representation that parses back to the identical `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn join_f64(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v:?}");
    }
    s
}

pub fn parse_f64(token: &str, line: usize) -> Result<f64> {
    token
        .parse::<f64>()
        .map_err(|_| parse_err(line, format!("expected a number, found '{token}'")))
}

pub fn parse_f64_list(tokens: &str, line: usize) -> Result<Vec<f64>> {
    tokens
        .split_whitespace()
        .map(|t| parse_f64(t, line))
        .collect()
}

pub fn parse_usize(token: &str, line: usize) -> Result<usize> {
    token
        .parse::<usize>()
        .map_err(|_| parse_err(line, format!("expected an unsigned integer, found '{token}'")))
}

/// Splits `key=value`, trimming both sides.
pub fn split_kv(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once('=')?;
    Some((k.trim(), v.trim()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_bit_exact() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1e300, 0.0, -0.0, 12345.678901234567] {
            let back = parse_f64(&fmt_f64(x), 1).unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
