use nalgebra::{Matrix2, Matrix4};

use super::{exp_generator, CenterSide, SymmetricMps, Truncation};
use crate::error::{Error, Result};
use crate::model::HamiltonianTerms;
use crate::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrotterOrder {
    First,
    Second,
}

/// Time step and truncation controls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NumericsSpec {
    pub max_bond: usize,
    pub dt: f64,
    pub trunc_tol: f64,
    pub trotter_order: TrotterOrder,
}

impl Default for NumericsSpec {
    fn default() -> Self {
        Self {
            max_bond: 100,
            dt: 1e-3,
            trunc_tol: 1e-18,
            trotter_order: TrotterOrder::Second,
        }
    }
}

impl NumericsSpec {
    pub fn validate(&self) -> Result<()> {
        if self.max_bond < 1 {
            return Err(Error::invalid("bond dimension must be >= 1"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("time step {} must be > 0", self.dt)));
        }
        if !(self.trunc_tol >= 0.0) {
            return Err(Error::invalid("truncation tolerance must be >= 0"));
        }
        Ok(())
    }

    pub fn truncation(&self) -> Truncation {
        Truncation::new(self.max_bond, self.trunc_tol)
    }
}

/// Two-site generators per bond with every single-site term folded in.
///
/// A site term enters both bonds touching an interior site with weight 1/2 and
/// the single bond of an edge site with weight 1. Site decay rates `Γ_i` add
/// the anti-Hermitian part `-(i/2) Γ_i n_i` of an effective Hamiltonian.
#[derive(Clone, Debug, PartialEq)]
pub struct BondGenerators {
    generators: Vec<Matrix4<C64>>,
    hermitian: bool,
}

impl BondGenerators {
    pub fn new(terms: &HamiltonianTerms, decay: &[f64]) -> Result<Self> {
        let m = terms.sites;
        if decay.len() != m {
            return Err(Error::LengthMismatch {
                left: decay.len(),
                right: m,
            });
        }
        let mut site_ops = vec![Matrix2::<C64>::zeros(); m];
        for t in &terms.site_terms {
            site_ops[t.site - 1] += t.matrix;
        }
        for (op, &gamma) in site_ops.iter_mut().zip(decay) {
            op[(1, 1)] += C64::new(0.0, -0.5 * gamma);
        }
        let weight = |site: usize| if site == 1 || site == m { 1.0 } else { 0.5 };
        let mut generators = vec![Matrix4::<C64>::zeros(); m - 1];
        for b in &terms.bonds {
            generators[b.site - 1] += b.matrix;
        }
        for (k, g) in generators.iter_mut().enumerate() {
            let (l, r) = (k + 1, k + 2);
            *g += kron(&site_ops[l - 1], &Matrix2::identity()) * C64::from(weight(l));
            *g += kron(&Matrix2::identity(), &site_ops[r - 1]) * C64::from(weight(r));
        }
        let hermitian = decay.iter().all(|&g| g == 0.0);
        Ok(Self {
            generators,
            hermitian,
        })
    }

    /// Generator of bond `b` (1-based left site).
    pub fn generator(&self, bond: usize) -> &Matrix4<C64> {
        &self.generators[bond - 1]
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn bonds(&self) -> usize {
        self.generators.len()
    }
}

fn kron(a: &Matrix2<C64>, b: &Matrix2<C64>) -> Matrix4<C64> {
    Matrix4::from_fn(|r, c| a[(r >> 1, c >> 1)] * b[(r & 1, c & 1)])
}

/// A sequence of gate layers implementing one time step.
#[derive(Clone, Debug)]
pub struct TrotterPropagator {
    layers: Vec<Vec<(usize, Matrix4<C64>)>>,
    truncation: Truncation,
    unitary: bool,
}

impl TrotterPropagator {
    /// Second order: odd bonds for `dt/2`, even bonds for `dt`, odd bonds for
    /// `dt/2`. First order: odd then even bonds for `dt`.
    pub fn new(generators: &BondGenerators, numerics: &NumericsSpec) -> Result<Self> {
        numerics.validate()?;
        let dt = numerics.dt;
        let layer = |parity: usize, tau: f64| -> Result<Vec<(usize, Matrix4<C64>)>> {
            (1..=generators.bonds())
                .filter(|b| b % 2 == parity)
                .map(|b| Ok((b, exp_generator(generators.generator(b), tau)?)))
                .collect()
        };
        let layers = match numerics.trotter_order {
            TrotterOrder::Second => {
                let half_odd = layer(1, dt / 2.0)?;
                vec![half_odd.clone(), layer(0, dt)?, half_odd]
            }
            TrotterOrder::First => vec![layer(1, dt)?, layer(0, dt)?],
        };
        Ok(Self {
            layers,
            truncation: numerics.truncation(),
            unitary: generators.is_hermitian(),
        })
    }

    pub fn is_unitary(&self) -> bool {
        self.unitary
    }

    pub fn truncation(&self) -> &Truncation {
        &self.truncation
    }
}

/// Advance by one time step; returns the summed discarded weight.
///
/// Each layer is swept away from whichever end is nearer the orthogonality
/// center. Schmidt values are renormalized after truncation only when the
/// step is unitary; under an effective Hamiltonian the decaying norm is kept.
pub fn tebd_step(state: &mut SymmetricMps, propagator: &TrotterPropagator) -> Result<f64> {
    let trunc = &propagator.truncation;
    let mut discarded = 0.0;
    for layer in &propagator.layers {
        if layer.is_empty() {
            continue;
        }
        let left_to_right = state.center_index() < state.len() / 2;
        let mut apply = |(bond, gate): &(usize, Matrix4<C64>), side| -> Result<()> {
            discarded += state.apply_two_site_gate(*bond, gate, trunc, side, propagator.unitary)?;
            Ok(())
        };
        if left_to_right {
            layer.iter().try_for_each(|g| apply(g, CenterSide::Right))?;
        } else {
            layer.iter().rev().try_for_each(|g| apply(g, CenterSide::Left))?;
        }
    }
    Ok(discarded)
}
