use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix4};

use super::{Charge, ThetaKey};
use crate::error::{Error, Result};
use crate::C64;

/// Elements smaller than this between different particle-number sectors are
/// treated as round-off.
const CHARGE_LEAK_TOL: f64 = 1e-13;

/// A 4×4 operator on a site pair that conserves particle number, in the basis
/// index `2 n_left + n_right`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoSiteGate {
    matrix: Matrix4<C64>,
}

fn occupations(index: usize) -> (u8, u8) {
    ((index >> 1) as u8, (index & 1) as u8)
}

fn pair_charge(index: usize) -> u32 {
    (index as u32).count_ones()
}

impl TwoSiteGate {
    /// Fails with the offending `(row, col, |value|)` if the matrix couples
    /// different total occupations.
    pub fn new(matrix: Matrix4<C64>) -> std::result::Result<Self, (usize, usize, f64)> {
        for r in 0..4 {
            for c in 0..4 {
                let v = matrix[(r, c)].norm();
                if pair_charge(r) != pair_charge(c) && v > CHARGE_LEAK_TOL {
                    return Err((r, c, v));
                }
            }
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Matrix4<C64> {
        &self.matrix
    }

    pub(super) fn apply(
        &self,
        theta: &BTreeMap<ThetaKey, DMatrix<C64>>,
    ) -> BTreeMap<ThetaKey, DMatrix<C64>> {
        let mut out: BTreeMap<ThetaKey, DMatrix<C64>> = BTreeMap::new();
        for (&(q, m1, m2), block) in theta {
            let col = 2 * m1 as usize + m2 as usize;
            for row in 0..4 {
                if pair_charge(row) != pair_charge(col) {
                    continue;
                }
                let g = self.matrix[(row, col)];
                if g == C64::from(0.0) {
                    continue;
                }
                let (n1, n2) = occupations(row);
                let key: (Charge, u8, u8) = (q, n1, n2);
                match out.get_mut(&key) {
                    Some(acc) => *acc += block * g,
                    None => {
                        out.insert(key, block * g);
                    }
                }
            }
        }
        out
    }
}

/// `exp(-i h τ)` for a particle-conserving two-site generator `h`.
///
/// `h` may be non-Hermitian (effective Hamiltonians with decay). The exponential
/// is taken exactly on each particle-number block: two 1×1 blocks and the 2×2
/// block spanned by `|01⟩, |10⟩`.
pub fn exp_generator(h: &Matrix4<C64>, tau: f64) -> Result<Matrix4<C64>> {
    TwoSiteGate::new(*h).map_err(|(row, col, value)| Error::ChargeViolation {
        bond: 0,
        row,
        col,
        value,
    })?;
    let minus_i_tau = C64::new(0.0, -tau);
    let mut out = Matrix4::zeros();
    out[(0, 0)] = (h[(0, 0)] * minus_i_tau).exp();
    out[(3, 3)] = (h[(3, 3)] * minus_i_tau).exp();

    let a = h[(1, 1)] * minus_i_tau;
    let b = h[(1, 2)] * minus_i_tau;
    let c = h[(2, 1)] * minus_i_tau;
    let d = h[(2, 2)] * minus_i_tau;
    let mean = (a + d) * 0.5;
    let half_diff = (a - d) * 0.5;
    let delta_sq = half_diff * half_diff + b * c;
    let delta = delta_sq.sqrt();
    // cosh(Δ) and sinh(Δ)/Δ are even in Δ, so the branch of the root is irrelevant.
    let (cosh, sinhc) = if delta.norm() < 1e-4 {
        (
            C64::from(1.0) + delta_sq * 0.5 + delta_sq * delta_sq / 24.0,
            C64::from(1.0) + delta_sq / 6.0 + delta_sq * delta_sq / 120.0,
        )
    } else {
        (delta.cosh(), delta.sinh() / delta)
    };
    let scale = mean.exp();
    out[(1, 1)] = scale * (cosh + sinhc * half_diff);
    out[(2, 2)] = scale * (cosh - sinhc * half_diff);
    out[(1, 2)] = scale * sinhc * b;
    out[(2, 1)] = scale * sinhc * c;
    Ok(out)
}
