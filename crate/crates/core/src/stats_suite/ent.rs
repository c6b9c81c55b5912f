//! Byte-oriented randomness metrics in the style of the classic ENT tool.

use serde::Serialize;

use super::special::chi_square_p;
use crate::error::{Error, Result};

const MONTE_POINT_BYTES: usize = 6;

#[derive(Debug, Clone, Serialize)]
pub struct EntReport {
    pub bytes: usize,
    pub bits_per_byte: f64,
    pub chi_square: f64,
    pub chi_square_p: f64,
    pub monte_carlo_pi: f64,
    pub pi_error_pct: f64,
    /// Lag-1 byte correlation with wraparound; `None` when the input has zero variance.
    pub serial_correlation: Option<f64>,
}

pub fn ent_metrics(data: &[u8]) -> Result<EntReport> {
    if data.len() < MONTE_POINT_BYTES {
        return Err(Error::InputTooShort {
            needed: MONTE_POINT_BYTES,
            got: data.len(),
        });
    }
    let n = data.len() as f64;

    let mut hist = [0u64; 256];
    for &b in data {
        hist[b as usize] += 1;
    }

    let mut entropy = 0.0;
    let mut chi_square = 0.0;
    let expected = n / 256.0;
    for &count in &hist {
        if count > 0 {
            let p = count as f64 / n;
            entropy -= p * p.log2();
        }
        let d = count as f64 - expected;
        chi_square += d * d / expected;
    }

    let (monte_carlo_pi, pi_error_pct) = monte_carlo_pi(data);

    Ok(EntReport {
        bytes: data.len(),
        bits_per_byte: entropy.max(0.0),
        chi_square,
        chi_square_p: chi_square_p(chi_square, 255),
        monte_carlo_pi,
        pi_error_pct,
        serial_correlation: serial_correlation(data),
    })
}

fn monte_carlo_pi(data: &[u8]) -> (f64, f64) {
    const RADIUS: u64 = (1 << 24) - 1;
    let limit = (RADIUS as u128) * (RADIUS as u128);
    let mut inside = 0u64;
    let mut points = 0u64;
    for p in data.chunks_exact(MONTE_POINT_BYTES) {
        let x = u32::from_be_bytes([0, p[0], p[1], p[2]]) as u128;
        let y = u32::from_be_bytes([0, p[3], p[4], p[5]]) as u128;
        if x * x + y * y <= limit {
            inside += 1;
        }
        points += 1;
    }
    let pi_hat = 4.0 * inside as f64 / points as f64;
    let err = 100.0 * (pi_hat - std::f64::consts::PI).abs() / std::f64::consts::PI;
    (pi_hat, err)
}

fn serial_correlation(data: &[u8]) -> Option<f64> {
    let n = data.len() as f64;
    let mut t1 = 0.0;
    let mut t2 = 0.0;
    let mut t3 = 0.0;
    for (i, &b) in data.iter().enumerate() {
        let u = b as f64;
        let next = data[(i + 1) % data.len()] as f64;
        t1 += u * next;
        t2 += u;
        t3 += u * u;
    }
    let t2sq = t2 * t2;
    let denom = n * t3 - t2sq;
    if denom == 0.0 {
        return None;
    }
    Some((n * t1 - t2sq) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_histogram() {
        let data: Vec<u8> = (0..4096).flat_map(|_| 0..=255u8).collect();
        let r = ent_metrics(&data).unwrap();
        assert!((r.bits_per_byte - 8.0).abs() < 1e-12);
        assert_eq!(r.chi_square, 0.0);
        assert_eq!(r.chi_square_p, 1.0);
    }

    #[test]
    fn all_zero_megabyte() {
        let r = ent_metrics(&vec![0u8; 1 << 20]).unwrap();
        assert_eq!(r.bits_per_byte, 0.0);
        assert_eq!(r.monte_carlo_pi, 4.0);
        assert!((r.pi_error_pct - 27.323_954_473_516_27).abs() < 1e-9);
        assert!(r.serial_correlation.is_none());
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            ent_metrics(&[1, 2, 3, 4, 5]),
            Err(Error::InputTooShort { needed: 6, got: 5 })
        ));
        assert!(ent_metrics(&[1, 2, 3, 4, 5, 6]).is_ok());
    }

    #[test]
    fn monte_carlo_corner_points() {
        // (max, 0) is on the circle; (max, max) is outside
        let on = [0xff, 0xff, 0xff, 0, 0, 0];
        assert_eq!(ent_metrics(&on).unwrap().monte_carlo_pi, 4.0);
        let out = [0xff; 6];
        assert_eq!(ent_metrics(&out).unwrap().monte_carlo_pi, 0.0);
    }

    #[test]
    fn serial_correlation_of_alternating_bytes() {
        let data: Vec<u8> = (0..1000).map(|i| if i % 2 == 0 { 0 } else { 255 }).collect();
        let r = ent_metrics(&data).unwrap();
        assert!((r.serial_correlation.unwrap() + 1.0).abs() < 1e-12);
    }
}
