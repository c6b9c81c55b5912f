//! A subset of the NIST SP 800-22 battery: Frequency, Block Frequency, Runs
//! and Cumulative Sums (forward and backward).

use serde::Serialize;

use super::special::{erfc, gamma_q, normal_cdf};
use crate::bits::BitBuf;
use crate::error::{Error, Result};

pub const PASS_THRESHOLD: f64 = 0.01;
pub const MIN_SAMPLE_BITS: usize = 1_000_000;
pub const DEFAULT_BLOCK_BITS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum NistTest {
    Frequency,
    BlockFrequency,
    Runs,
    CumulativeSumsForward,
    CumulativeSumsBackward,
}

impl NistTest {
    pub const ALL: [NistTest; 5] = [
        NistTest::Frequency,
        NistTest::BlockFrequency,
        NistTest::Runs,
        NistTest::CumulativeSumsForward,
        NistTest::CumulativeSumsBackward,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NistTest::Frequency => "Frequency",
            NistTest::BlockFrequency => "BlockFrequency",
            NistTest::Runs => "Runs",
            NistTest::CumulativeSumsForward => "CumulativeSumsForward",
            NistTest::CumulativeSumsBackward => "CumulativeSumsBackward",
        }
    }

    pub fn run(self, bits: &BitBuf) -> f64 {
        match self {
            NistTest::Frequency => frequency(bits),
            NistTest::BlockFrequency => block_frequency(bits, DEFAULT_BLOCK_BITS),
            NistTest::Runs => runs(bits),
            NistTest::CumulativeSumsForward => cumulative_sums(bits, true),
            NistTest::CumulativeSumsBackward => cumulative_sums(bits, false),
        }
    }
}

/// Monobit frequency test.
pub fn frequency(bits: &BitBuf) -> f64 {
    let n = bits.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let s = 2.0 * bits.count_ones() as f64 - n;
    erfc(s.abs() / (n.sqrt() * std::f64::consts::SQRT_2))
}

fn ones_in_range(bits: &BitBuf, start: usize, len: usize) -> u64 {
    if start.is_multiple_of(8) && len.is_multiple_of(8) {
        bits.as_bytes()[start / 8..(start + len) / 8]
            .iter()
            .map(|b| b.count_ones() as u64)
            .sum()
    } else {
        (start..start + len).filter(|&i| bits.get(i)).count() as u64
    }
}

/// Frequency within blocks of `block` bits; trailing bits are ignored.
pub fn block_frequency(bits: &BitBuf, block: usize) -> f64 {
    assert!(block > 0);
    let blocks = bits.len() / block;
    if blocks == 0 {
        return 0.0;
    }
    let m = block as f64;
    let chi2: f64 = (0..blocks)
        .map(|i| {
            let pi = ones_in_range(bits, i * block, block) as f64 / m;
            (pi - 0.5) * (pi - 0.5)
        })
        .sum::<f64>()
        * 4.0
        * m;
    gamma_q(blocks as f64 / 2.0, chi2 / 2.0)
}

/// Number of positions `i` with `bits[i] != bits[i+1]`.
fn transitions(bits: &BitBuf) -> u64 {
    let n = bits.len();
    let bytes = bits.as_bytes();
    let whole = n / 8;
    let mut t = 0u64;
    for (i, &b) in bytes[..whole].iter().enumerate() {
        t += ((b ^ (b >> 1)) & 0x7f).count_ones() as u64;
        let boundary = 8 * (i + 1);
        if boundary < n && ((b & 1) == 1) != bits.get(boundary) {
            t += 1;
        }
    }
    for i in (whole * 8 + 1)..n {
        if bits.get(i - 1) != bits.get(i) {
            t += 1;
        }
    }
    t
}

pub fn runs(bits: &BitBuf) -> f64 {
    let n = bits.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let pi = bits.count_ones() as f64 / n;
    if (pi - 0.5).abs() >= 2.0 / n.sqrt() {
        // frequency prerequisite failed
        return 0.0;
    }
    let v = 1.0 + transitions(bits) as f64;
    let q = pi * (1.0 - pi);
    erfc((v - 2.0 * n * q).abs() / (2.0 * (2.0 * n).sqrt() * q))
}

// Per byte: net step (+1 per one, -1 per zero), highest and lowest partial sum
// over the byte's eight prefixes.
const WALK: [(i8, i8, i8); 256] = {
    let mut t = [(0i8, 0i8, 0i8); 256];
    let mut b = 0;
    while b < 256 {
        let mut s = 0i8;
        let mut hi = i8::MIN;
        let mut lo = i8::MAX;
        let mut k = 0;
        while k < 8 {
            s += if (b >> (7 - k)) & 1 == 1 { 1 } else { -1 };
            if s > hi {
                hi = s;
            }
            if s < lo {
                lo = s;
            }
            k += 1;
        }
        t[b] = (s, hi, lo);
        b += 1;
    }
    t
};

/// Largest |partial sum| over prefixes 1..=n.
fn max_excursion(bits: &BitBuf) -> i64 {
    let n = bits.len();
    let mut s = 0i64;
    let mut hi = i64::MIN;
    let mut lo = i64::MAX;
    for &b in &bits.as_bytes()[..n / 8] {
        let (d, h, l) = WALK[b as usize];
        hi = hi.max(s + h as i64);
        lo = lo.min(s + l as i64);
        s += d as i64;
    }
    for i in (n / 8) * 8..n {
        s += if bits.get(i) { 1 } else { -1 };
        hi = hi.max(s);
        lo = lo.min(s);
    }
    hi.abs().max(lo.abs())
}

fn reversed(bits: &BitBuf) -> BitBuf {
    let n = bits.len();
    if n.is_multiple_of(8) {
        BitBuf::from_bytes(bits.as_bytes().iter().rev().map(|b| b.reverse_bits()).collect())
    } else {
        BitBuf::from_bits((0..n).rev().map(|i| bits.get(i)))
    }
}

/// Cumulative sums test, forward (`true`) or backward.
pub fn cumulative_sums(bits: &BitBuf, forward: bool) -> f64 {
    let n = bits.len() as i64;
    if n == 0 {
        return 0.0;
    }
    let z = if forward {
        max_excursion(bits)
    } else {
        max_excursion(&reversed(bits))
    };
    let nf = n as f64;
    let zf = z as f64;
    let sq = nf.sqrt();

    // integer bounds follow the reference implementation's truncating division
    let mut sum1 = 0.0;
    let mut k = (-n / z + 1) / 4;
    while k <= (n / z - 1) / 4 {
        let kf = k as f64;
        sum1 += normal_cdf((4.0 * kf + 1.0) * zf / sq) - normal_cdf((4.0 * kf - 1.0) * zf / sq);
        k += 1;
    }
    let mut sum2 = 0.0;
    let mut k = (-n / z - 3) / 4;
    while k <= (n / z - 1) / 4 {
        let kf = k as f64;
        sum2 += normal_cdf((4.0 * kf + 3.0) * zf / sq) - normal_cdf((4.0 * kf + 1.0) * zf / sq);
        k += 1;
    }
    (1.0 - sum1 + sum2).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct TestOutcome {
    pub test: NistTest,
    /// `(sample_id, p_value)` pairs in sample order.
    pub p_values: Vec<(usize, f64)>,
    pub pass_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NistBatchReport {
    pub samples: usize,
    pub tests: Vec<TestOutcome>,
}

impl NistBatchReport {
    pub fn outcome(&self, test: NistTest) -> &TestOutcome {
        self.tests.iter().find(|t| t.test == test).expect("all tests present")
    }
}

/// Runs all five tests on every sample. Samples are evaluated in parallel.
pub fn nist_subset(samples: &[BitBuf]) -> Result<NistBatchReport> {
    for (index, s) in samples.iter().enumerate() {
        if s.len() < MIN_SAMPLE_BITS {
            return Err(Error::SampleTooShort {
                index,
                needed: MIN_SAMPLE_BITS,
                got: s.len(),
            });
        }
    }
    let per_sample: Vec<[f64; 5]> = parallel_map(samples, |s| NistTest::ALL.map(|t| t.run(s)));

    let tests = NistTest::ALL
        .iter()
        .enumerate()
        .map(|(ti, &test)| {
            let p_values: Vec<(usize, f64)> =
                per_sample.iter().enumerate().map(|(i, ps)| (i, ps[ti])).collect();
            let passed = p_values.iter().filter(|(_, p)| *p >= PASS_THRESHOLD).count();
            let pass_rate = if p_values.is_empty() {
                0.0
            } else {
                passed as f64 / p_values.len() as f64
            };
            TestOutcome { test, p_values, pass_rate }
        })
        .collect();
    Ok(NistBatchReport {
        samples: samples.len(),
        tests,
    })
}

fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    let chunk = items.len().div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("nist worker panicked"))
            .collect()
    })
}

/// Kolmogorov-Smirnov distance between the empirical distribution of `p`
/// and Uniform(0, 1).
pub fn ks_uniform_statistic(p: &[f64]) -> f64 {
    let mut v: Vec<f64> = p.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let above = (i as f64 + 1.0) / n - x;
            let below = x - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic two-sided 1% critical value of the KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.627_6 / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    // 100-bit example sequence used throughout the SP 800-22 test descriptions
    const EPS100: &str = "1100100100001111110110101010001000100001011010001100001000110100110001001100011001100010100010111000";

    fn from_str(s: &str) -> BitBuf {
        BitBuf::from_bits(s.bytes().map(|c| c == b'1'))
    }

    #[test]
    fn documented_examples() {
        let e = from_str(EPS100);
        assert!((frequency(&e) - 0.109_599).abs() < 1e-4);
        assert!((block_frequency(&e, 10) - 0.706_438).abs() < 1e-4);
        assert!((runs(&e) - 0.500_798).abs() < 1e-4);
        assert!((cumulative_sums(&e, true) - 0.219_194).abs() < 1e-4);
        assert!((cumulative_sums(&e, false) - 0.114_866).abs() < 1e-4);
    }

    #[test]
    fn frequency_extremes() {
        let ones = BitBuf::from_bits(std::iter::repeat_n(true, 100));
        let p = frequency(&ones);
        assert!(p < 1e-20);
        assert!((p / 1.523_970_604_832_116_6e-23 - 1.0).abs() < 1e-6);
        let alt = BitBuf::from_bits((0..100).map(|i| i % 2 == 1));
        assert_eq!(frequency(&alt), 1.0);
    }

    #[test]
    fn transitions_match_naive_count() {
        let data: Vec<u8> = (0..60u32).map(|i| (i * 37 + 11) as u8).collect();
        for len in [399usize, 400, 401, 7, 8, 9, 1] {
            let b = BitBuf::from_bytes_with_len(data.clone(), len);
            let naive = (1..len).filter(|&i| b.get(i) != b.get(i - 1)).count() as u64;
            assert_eq!(transitions(&b), naive, "len {len}");
        }
    }

    #[test]
    fn excursion_table_matches_naive_walk() {
        let data: Vec<u8> = (0..64u32).map(|i| (i * 91 + 5) as u8).collect();
        for len in [512usize, 509, 3] {
            let b = BitBuf::from_bytes_with_len(data.clone(), len);
            let mut s = 0i64;
            let mut z = 0i64;
            for bit in b.iter() {
                s += if bit { 1 } else { -1 };
                z = z.max(s.abs());
            }
            assert_eq!(max_excursion(&b), z);
            let r = reversed(&b);
            assert_eq!(r.iter().collect::<Vec<_>>(), b.iter().collect::<Vec<_>>().into_iter().rev().collect::<Vec<_>>());
        }
    }

    #[test]
    fn short_samples_rejected() {
        let s = BitBuf::from_bytes(vec![0x55; 1000]);
        assert!(matches!(
            nist_subset(&[s]),
            Err(Error::SampleTooShort { index: 0, .. })
        ));
    }

    #[test]
    fn ks_statistic_of_perfect_grid() {
        let p: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_uniform_statistic(&p) - 0.005).abs() < 1e-12);
    }
}
