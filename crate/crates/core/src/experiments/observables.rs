//! Scalar and per-site observables built from local densities and entropies.

use crate::error::{Error, Result};

/// Below this the denominator of a normalized difference counts as zero.
pub const EMPTY_DENOMINATOR: f64 = 1e-12;

/// `(a - b) / (a + b)`, with `0/0 -> 0`.
pub fn normalized_difference(a: f64, b: f64) -> f64 {
    let sum = a + b;
    if sum.abs() < EMPTY_DENOMINATOR {
        0.0
    } else {
        (a - b) / sum
    }
}

fn elementwise(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| normalized_difference(x, y)).collect())
}

/// Per-site `Δn_i = (n_i^b - n_i^f) / (n_i^b + n_i^f)`.
pub fn delta_n(boson: &[f64], fermion: &[f64]) -> Result<Vec<f64>> {
    elementwise(boson, fermion)
}

/// Per-cut `ΔS = (S^b - S^f) / (S^b + S^f)`.
pub fn delta_entropy(boson: &[f64], fermion: &[f64]) -> Result<Vec<f64>> {
    elementwise(boson, fermion)
}

/// Odd-even imbalance over 1-based site parity.
pub fn imbalance(densities: &[f64]) -> f64 {
    let (odd, even) = densities
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(o, e), (i, &n)| {
            if i % 2 == 0 {
                (o + n, e)
            } else {
                (o, e + n)
            }
        });
    normalized_difference(odd, even)
}

/// `Σ_i (⟨n_i⟩ - ⟨n_i⟩²) / M`, using `n² = n` for hard-core occupations.
pub fn total_fluctuations(densities: &[f64]) -> f64 {
    if densities.is_empty() {
        return 0.0;
    }
    site_fluctuations(densities).iter().sum::<f64>() / densities.len() as f64
}

pub fn site_fluctuations(densities: &[f64]) -> Vec<f64> {
    densities.iter().map(|&n| n - n * n).collect()
}

/// Sliding mean of `|I|` over `window` consecutive samples, indexed by the
/// window's first sample.
pub fn time_block_imbalance(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window > values.len() {
        return Err(Error::WindowTooLong {
            window,
            len: values.len(),
        });
    }
    Ok(values
        .windows(window)
        .map(|w| w.iter().map(|v| v.abs()).sum::<f64>() / window as f64)
        .collect())
}
