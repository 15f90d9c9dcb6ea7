//! Exact-diagonalization oracle on the full `2^M` Fock space.
//!
//! Basis index convention: site 1 is the least significant bit, so the
//! occupation of site `i` in basis state `x` is `(x >> (i - 1)) & 1`. All
//! string matrices follow this ordering.
//!
//! Operators are built as dense matrices. The integrators convert them once
//! to a sparse triplet form and then apply them column by column to dense
//! state vectors or density matrices.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::experiments::observables::{imbalance, site_fluctuations};
use crate::model::{
    build_jump_channels, ChannelKind, DissipationSpec, HamiltonianSpec, JumpChannel, Species,
};
use crate::C64;

/// Largest lattice for dense operators and state vectors.
pub const MAX_DENSE_SITES: usize = 12;
/// Largest lattice for full master-equation integration.
pub const MAX_LINDBLAD_SITES: usize = 8;

/// Trace drift that aborts an integration.
pub const TRACE_DRIFT_LIMIT: f64 = 1e-6;

fn guard(what: &'static str, sites: usize, max: usize) -> Result<()> {
    if sites > max {
        return Err(Error::Capacity { what, sites, max });
    }
    Ok(())
}

fn occupied(x: usize, site: usize) -> bool {
    (x >> (site - 1)) & 1 == 1
}

/// Pure state on `2^M` amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseState {
    pub sites: usize,
    pub amplitudes: DVector<C64>,
}

impl DenseState {
    pub fn fock(occupations: &[u8]) -> Result<Self> {
        let sites = occupations.len();
        guard("dense state", sites, MAX_DENSE_SITES)?;
        let index: usize = occupations
            .iter()
            .enumerate()
            .map(|(i, &n)| usize::from(n & 1) << i)
            .sum();
        let mut amplitudes = DVector::zeros(1 << sites);
        amplitudes[index] = C64::from(1.0);
        Ok(Self { sites, amplitudes })
    }

    pub fn from_amplitudes(amplitudes: Vec<C64>, sites: usize) -> Result<Self> {
        guard("dense state", sites, MAX_DENSE_SITES)?;
        if amplitudes.len() != 1 << sites {
            return Err(Error::LengthMismatch {
                left: amplitudes.len(),
                right: 1 << sites,
            });
        }
        Ok(Self {
            sites,
            amplitudes: DVector::from_vec(amplitudes),
        })
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn normalize(&mut self) -> Result<f64> {
        let norm = self.norm();
        if !(norm > 0.0) {
            return Err(Error::ZeroNorm(norm));
        }
        self.amplitudes /= C64::from(norm);
        Ok(norm)
    }

    pub fn apply(&mut self, op: &DMatrix<C64>) {
        self.amplitudes = op * &self.amplitudes;
    }

    pub fn densities(&self) -> Vec<f64> {
        (1..=self.sites)
            .map(|i| {
                self.amplitudes
                    .iter()
                    .enumerate()
                    .filter(|(x, _)| occupied(*x, i))
                    .map(|(_, a)| a.norm_sqr())
                    .sum::<f64>()
                    / self.amplitudes.norm_squared()
            })
            .collect()
    }

    /// Entropy of the reduced density matrix of sites `1..=cut`.
    pub fn entanglement_entropy(&self, cut: usize) -> Result<f64> {
        if cut == 0 || cut >= self.sites {
            return Err(Error::CutOutOfRange {
                cut,
                max: self.sites - 1,
            });
        }
        let left = 1usize << cut;
        let right = 1usize << (self.sites - cut);
        // Ψ[a, b] with x = a + (b << cut).
        let psi = DMatrix::from_fn(left, right, |a, b| self.amplitudes[a + (b << cut)]);
        let rho = &psi * psi.adjoint() / C64::from(self.amplitudes.norm_squared());
        let r = faer::Mat::<C64>::from_fn(left, left, |i, j| rho[(i, j)]);
        let eig = r
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .map_err(|e| Error::invalid(format!("eigensolver failed: {e:?}")))?;
        Ok(eig
            .iter()
            .filter(|&&p| p > 1e-15)
            .map(|&p| -p * p.ln())
            .sum())
    }

    pub fn entanglement_profile(&self) -> Result<Vec<f64>> {
        (1..self.sites).map(|c| self.entanglement_entropy(c)).collect()
    }
}

/// Density operator on the `2^M` Fock space.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub sites: usize,
    pub matrix: DMatrix<C64>,
}

impl DensityMatrix {
    pub fn from_pure(state: &DenseState) -> Self {
        let a = &state.amplitudes;
        Self {
            sites: state.sites,
            matrix: a * a.adjoint() / C64::from(a.norm_squared()),
        }
    }

    pub fn fock(occupations: &[u8]) -> Result<Self> {
        Ok(Self::from_pure(&DenseState::fock(occupations)?))
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    /// `max |ρ - ρ†|`.
    pub fn hermiticity_error(&self) -> f64 {
        let d = &self.matrix - self.matrix.adjoint();
        d.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn populations(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|z| z.re).collect()
    }

    pub fn densities(&self) -> Vec<f64> {
        let pops = self.populations();
        let trace: f64 = pops.iter().sum();
        (1..=self.sites)
            .map(|i| {
                pops.iter()
                    .enumerate()
                    .filter(|(x, _)| occupied(*x, i))
                    .map(|(_, p)| p)
                    .sum::<f64>()
                    / trace
            })
            .collect()
    }
}

/// Tight-binding Hamiltonian with interaction and potential, identical for
/// both species in the spin basis.
pub fn dense_hamiltonian(spec: &HamiltonianSpec) -> Result<DMatrix<C64>> {
    spec.validate()?;
    let m = spec.sites;
    guard("dense Hamiltonian", m, MAX_DENSE_SITES)?;
    let dim = 1usize << m;
    let mut h = DMatrix::zeros(dim, dim);
    for x in 0..dim {
        let mut diag = 0.0;
        for i in 1..=m {
            if occupied(x, i) {
                diag += spec.potential[i - 1];
            }
        }
        for i in 1..m {
            let (a, b) = (occupied(x, i), occupied(x, i + 1));
            if a && b {
                diag += spec.interaction;
            }
            if a != b {
                let y = x ^ (0b11 << (i - 1));
                h[(y, x)] += C64::from(-spec.hopping);
            }
        }
        h[(x, x)] = C64::from(diag);
    }
    Ok(h)
}

/// `n_site` on the full space.
pub fn number_operator(sites: usize, site: usize) -> Result<DMatrix<C64>> {
    guard("dense operator", sites, MAX_DENSE_SITES)?;
    check_site(sites, site)?;
    let dim = 1usize << sites;
    Ok(DMatrix::from_fn(dim, dim, |r, c| {
        if r == c && occupied(r, site) {
            C64::from(1.0)
        } else {
            C64::from(0.0)
        }
    }))
}

/// `σ⁻_site` for bosons, `(-1)^{Σ_{i<site} n_i} σ⁻_site` for fermions.
pub fn loss_operator(sites: usize, site: usize, species: Species) -> Result<DMatrix<C64>> {
    guard("dense operator", sites, MAX_DENSE_SITES)?;
    check_site(sites, site)?;
    let dim = 1usize << sites;
    let bit = 1usize << (site - 1);
    let mut op = DMatrix::zeros(dim, dim);
    for x in (0..dim).filter(|x| x & bit != 0) {
        let parity = (x & (bit - 1)).count_ones();
        let sign = match species {
            Species::SpinlessFermion if parity % 2 == 1 => -1.0,
            _ => 1.0,
        };
        op[(x ^ bit, x)] = C64::from(sign);
    }
    Ok(op)
}

fn check_site(sites: usize, site: usize) -> Result<()> {
    if site == 0 || site > sites {
        return Err(Error::SiteOutOfRange { site, sites });
    }
    Ok(())
}

/// A channel together with its dense jump operator.
#[derive(Clone, Debug)]
pub struct DenseJump {
    pub channel: JumpChannel,
    pub matrix: DMatrix<C64>,
}

/// Dense jump operators for every channel with a nonzero rate.
pub fn dense_jump_operators(spec: &DissipationSpec, species: Species) -> Result<Vec<DenseJump>> {
    let sites = spec.loss.len();
    guard("dense jump operators", sites, MAX_DENSE_SITES)?;
    build_jump_channels(spec)?
        .into_iter()
        .map(|channel| {
            let matrix = match channel.kind {
                ChannelKind::Loss => loss_operator(sites, channel.site, species)?,
                ChannelKind::Dephasing => number_operator(sites, channel.site)?,
            };
            Ok(DenseJump { channel, matrix })
        })
        .collect()
}

/// Nonzero entries `(row, col, value)` of a matrix.
#[derive(Clone, Debug, Default)]
struct Triplets {
    entries: Vec<(usize, usize, C64)>,
}

impl Triplets {
    fn from_dense(m: &DMatrix<C64>) -> Self {
        let mut entries = Vec::new();
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                let v = m[(r, c)];
                if v != C64::from(0.0) {
                    entries.push((r, c, v));
                }
            }
        }
        Self { entries }
    }

    /// `out += scale · A x` for one column.
    fn mul_add(&self, x: &[C64], out: &mut [C64], scale: C64) {
        for &(r, c, v) in &self.entries {
            out[r] += scale * v * x[c];
        }
    }

    /// `out += scale · A X` for column-major `X` with `rows_x` rows.
    fn left_mul_add(&self, x: &DMatrix<C64>, out: &mut DMatrix<C64>, scale: C64) {
        let (rx, ro) = (x.nrows(), out.nrows());
        if rx == 0 || ro == 0 {
            return;
        }
        for (xc, oc) in x
            .as_slice()
            .chunks_exact(rx)
            .zip(out.as_mut_slice().chunks_exact_mut(ro))
        {
            self.mul_add(xc, oc, scale);
        }
    }

    /// `out += scale · X A†`; column `r` of the result gathers `conj(A[r, c]) X[:, c]`.
    fn right_mul_adjoint_add(&self, x: &DMatrix<C64>, out: &mut DMatrix<C64>, scale: C64) {
        let n = x.nrows();
        for &(r, c, v) in &self.entries {
            let w = scale * v.conj();
            let src = &x.as_slice()[c * n..(c + 1) * n];
            let dst = &mut out.as_mut_slice()[r * n..(r + 1) * n];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
}

/// Basis states grouped by particle number.
#[derive(Clone, Debug)]
struct Sectors {
    states: Vec<Vec<usize>>,
    local: Vec<usize>,
}

impl Sectors {
    fn new(sites: usize) -> Self {
        let mut states = vec![Vec::new(); sites + 1];
        let mut local = vec![0; 1 << sites];
        for x in 0..1usize << sites {
            let n = x.count_ones() as usize;
            local[x] = states[n].len();
            states[n].push(x);
        }
        Self { states, local }
    }

    fn dim(&self, n: usize) -> usize {
        self.states[n].len()
    }

    /// Splits a dense operator into `(target sector, source sector, block)`.
    fn split(&self, m: &DMatrix<C64>) -> Vec<(usize, usize, Triplets)> {
        let mut pieces: BTreeMap<(usize, usize), Triplets> = BTreeMap::new();
        for (r, c, v) in Triplets::from_dense(m).entries {
            let key = (r.count_ones() as usize, c.count_ones() as usize);
            pieces
                .entry(key)
                .or_default()
                .entries
                .push((self.local[r], self.local[c], v));
        }
        pieces.into_iter().map(|((t, s), p)| (t, s, p)).collect()
    }
}

/// Density operator stored as blocks `ρ_{N, N'}` between particle-number
/// sectors. Blocks that are absent are zero.
#[derive(Clone, Debug)]
pub struct BlockDensityMatrix {
    sites: usize,
    sectors: std::sync::Arc<Sectors>,
    blocks: BTreeMap<(usize, usize), DMatrix<C64>>,
}

impl BlockDensityMatrix {
    pub fn from_dense(rho: &DensityMatrix) -> Self {
        let sectors = std::sync::Arc::new(Sectors::new(rho.sites));
        let mut blocks = BTreeMap::new();
        for a in 0..=rho.sites {
            for b in 0..=rho.sites {
                let (ra, rb) = (&sectors.states[a], &sectors.states[b]);
                let block =
                    DMatrix::from_fn(ra.len(), rb.len(), |i, j| rho.matrix[(ra[i], rb[j])]);
                if block.iter().any(|z| *z != C64::from(0.0)) {
                    blocks.insert((a, b), block);
                }
            }
        }
        Self {
            sites: rho.sites,
            sectors,
            blocks,
        }
    }

    pub fn to_dense(&self) -> DensityMatrix {
        let dim = 1usize << self.sites;
        let mut matrix = DMatrix::zeros(dim, dim);
        for (&(a, b), block) in &self.blocks {
            let (ra, rb) = (&self.sectors.states[a], &self.sectors.states[b]);
            for j in 0..rb.len() {
                for i in 0..ra.len() {
                    matrix[(ra[i], rb[j])] = block[(i, j)];
                }
            }
        }
        DensityMatrix {
            sites: self.sites,
            matrix,
        }
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn trace(&self) -> f64 {
        self.blocks
            .iter()
            .filter(|((a, b), _)| a == b)
            .map(|(_, m)| m.trace().re)
            .sum()
    }

    /// Probability of each particle number.
    pub fn number_distribution(&self) -> Vec<f64> {
        (0..=self.sites)
            .map(|n| self.blocks.get(&(n, n)).map_or(0.0, |m| m.trace().re))
            .collect()
    }

    pub fn densities(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.sites];
        let mut trace = 0.0;
        for (&(a, b), block) in &self.blocks {
            if a != b {
                continue;
            }
            for (i, &x) in self.sectors.states[a].iter().enumerate() {
                let p = block[(i, i)].re;
                trace += p;
                for (site, n) in out.iter_mut().enumerate() {
                    if (x >> site) & 1 == 1 {
                        *n += p;
                    }
                }
            }
        }
        out.iter_mut().for_each(|n| *n /= trace);
        out
    }

    fn zero_like(&self) -> Self {
        Self {
            sites: self.sites,
            sectors: self.sectors.clone(),
            blocks: BTreeMap::new(),
        }
    }

    fn block_mut(&mut self, a: usize, b: usize) -> &mut DMatrix<C64> {
        let (da, db) = (self.sectors.dim(a), self.sectors.dim(b));
        self.blocks
            .entry((a, b))
            .or_insert_with(|| DMatrix::zeros(da, db))
    }

    /// `self += s · other`.
    fn axpy(&mut self, s: C64, other: &Self) {
        for (&(a, b), m) in &other.blocks {
            let dst = self.block_mut(a, b);
            dst.zip_apply(m, |d, x| *d += s * x);
        }
    }

    fn plus(&self, s: C64, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(s, other);
        out
    }
}

/// Right-hand side of the master equation
/// `dρ/dt = -i[H, ρ] - ½ Σ γ (J†J ρ + ρ J†J - 2 J ρ J†)`,
/// written as `-i H_eff ρ + i ρ H_eff† + Σ γ J ρ J†` with
/// `H_eff = H - (i/2) Σ γ J†J`.
///
/// `H` must conserve particle number; jumps may change it.
pub struct Lindbladian {
    sectors: std::sync::Arc<Sectors>,
    h_eff: Vec<Triplets>,
    jumps: Vec<(f64, Vec<(usize, usize, Triplets)>)>,
}

impl Lindbladian {
    pub fn new(hamiltonian: &DMatrix<C64>, jumps: &[DenseJump]) -> Result<Self> {
        let dim = hamiltonian.nrows();
        if !dim.is_power_of_two() || hamiltonian.ncols() != dim {
            return Err(Error::invalid("operator dimension must be 2^M"));
        }
        let sites = dim.trailing_zeros() as usize;
        let sectors = std::sync::Arc::new(Sectors::new(sites));
        let mut h_eff = hamiltonian.clone();
        for j in jumps {
            if j.matrix.shape() != (dim, dim) {
                return Err(Error::LengthMismatch {
                    left: j.matrix.nrows(),
                    right: dim,
                });
            }
            h_eff -= j.matrix.adjoint() * &j.matrix * C64::new(0.0, 0.5 * j.channel.rate);
        }
        let mut diag = vec![Triplets::default(); sites + 1];
        for (t, s, piece) in sectors.split(&h_eff) {
            if t != s {
                return Err(Error::Unsupported(
                    "Hamiltonian that changes particle number".into(),
                ));
            }
            diag[s] = piece;
        }
        Ok(Self {
            h_eff: diag,
            jumps: jumps
                .iter()
                .map(|j| (j.channel.rate, sectors.split(&j.matrix)))
                .collect(),
            sectors,
        })
    }

    pub fn apply(&self, rho: &BlockDensityMatrix) -> BlockDensityMatrix {
        let mut out = rho.zero_like();
        let (minus_i, plus_i) = (C64::new(0.0, -1.0), C64::new(0.0, 1.0));
        for (&(a, b), block) in &rho.blocks {
            let dst = out.block_mut(a, b);
            self.h_eff[a].left_mul_add(block, dst, minus_i);
            self.h_eff[b].right_mul_adjoint_add(block, dst, plus_i);
        }
        for (rate, pieces) in &self.jumps {
            let scale = C64::from(*rate);
            for (&(a, b), block) in &rho.blocks {
                for (ta, _, left) in pieces.iter().filter(|p| p.1 == a) {
                    for (tb, _, right) in pieces.iter().filter(|p| p.1 == b) {
                        let mut t = DMatrix::zeros(block.nrows(), self.sectors.dim(*tb));
                        right.right_mul_adjoint_add(block, &mut t, scale);
                        left.left_mul_add(&t, out.block_mut(*ta, *tb), C64::from(1.0));
                    }
                }
            }
        }
        out
    }
}

/// Classical RK4 integration of the master equation with fixed step `dt`.
///
/// `observe(step, t, ρ)` is called for the initial state and after every
/// step. Fails if the trace drifts by more than [`TRACE_DRIFT_LIMIT`].
pub fn integrate_master_equation_with<F>(
    rho0: &DensityMatrix,
    hamiltonian: &DMatrix<C64>,
    jumps: &[DenseJump],
    t_max: f64,
    dt: f64,
    mut observe: F,
) -> Result<BlockDensityMatrix>
where
    F: FnMut(usize, f64, &BlockDensityMatrix),
{
    guard("master equation", rho0.sites, MAX_LINDBLAD_SITES)?;
    if !(dt > 0.0) || !(t_max >= 0.0) {
        return Err(Error::invalid("integration needs dt > 0 and t_max >= 0"));
    }
    if hamiltonian.nrows() != rho0.matrix.nrows() {
        return Err(Error::LengthMismatch {
            left: hamiltonian.nrows(),
            right: rho0.matrix.nrows(),
        });
    }
    let lindblad = Lindbladian::new(hamiltonian, jumps)?;
    let steps = (t_max / dt).round() as usize;
    let mut rho = BlockDensityMatrix::from_dense(rho0);
    let trace0 = rho.trace();
    observe(0, 0.0, &rho);
    let half = C64::from(dt / 2.0);
    let full = C64::from(dt);
    let sixth = C64::from(dt / 6.0);
    let third = C64::from(dt / 3.0);
    for step in 1..=steps {
        let k1 = lindblad.apply(&rho);
        let k2 = lindblad.apply(&rho.plus(half, &k1));
        let k3 = lindblad.apply(&rho.plus(half, &k2));
        let k4 = lindblad.apply(&rho.plus(full, &k3));
        rho.axpy(sixth, &k1);
        rho.axpy(third, &k2);
        rho.axpy(third, &k3);
        rho.axpy(sixth, &k4);
        let t = step as f64 * dt;
        let drift = (rho.trace() - trace0).abs();
        if drift > TRACE_DRIFT_LIMIT || !drift.is_finite() {
            return Err(Error::IntegratorFailure { drift, time: t });
        }
        observe(step, t, &rho);
    }
    Ok(rho)
}

/// RK4 integration returning dense snapshots every `every` steps (and the
/// last step).
pub fn integrate_master_equation(
    rho0: &DensityMatrix,
    hamiltonian: &DMatrix<C64>,
    jumps: &[DenseJump],
    t_max: f64,
    dt: f64,
    every: usize,
) -> Result<Vec<(f64, DensityMatrix)>> {
    let steps = (t_max / dt).round() as usize;
    let every = every.max(1);
    let mut out = Vec::new();
    integrate_master_equation_with(rho0, hamiltonian, jumps, t_max, dt, |step, t, rho| {
        if step % every == 0 || step == steps {
            out.push((t, rho.to_dense()));
        }
    })?;
    Ok(out)
}

/// RK4 integration of `i dψ/dt = H ψ` with fixed step `dt`.
pub fn evolve_state_with<F>(
    psi0: &DenseState,
    hamiltonian: &DMatrix<C64>,
    t_max: f64,
    dt: f64,
    mut observe: F,
) -> Result<DenseState>
where
    F: FnMut(usize, f64, &DenseState),
{
    if !(dt > 0.0) || !(t_max >= 0.0) {
        return Err(Error::invalid("integration needs dt > 0 and t_max >= 0"));
    }
    let h = Triplets::from_dense(hamiltonian);
    let minus_i = C64::new(0.0, -1.0);
    let rhs = |v: &DVector<C64>| {
        let mut out = DVector::zeros(v.len());
        h.mul_add(v.as_slice(), out.as_mut_slice(), minus_i);
        out
    };
    let steps = (t_max / dt).round() as usize;
    let mut psi = psi0.clone();
    observe(0, 0.0, &psi);
    let half = C64::from(dt / 2.0);
    for step in 1..=steps {
        let a = &psi.amplitudes;
        let k1 = rhs(a);
        let k2 = rhs(&(a + &k1 * half));
        let k3 = rhs(&(a + &k2 * half));
        let k4 = rhs(&(a + &k3 * C64::from(dt)));
        psi.amplitudes += (k1 + (k2 + k3) * C64::from(2.0) + k4) * C64::from(dt / 6.0);
        observe(step, step as f64 * dt, &psi);
    }
    Ok(psi)
}

/// Either kind of dense operand.
#[derive(Clone, Copy, Debug)]
pub enum DenseOperand<'a> {
    Pure(&'a DenseState),
    Mixed(&'a DensityMatrix),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseObservables {
    pub densities: Vec<f64>,
    pub total: f64,
    pub imbalance: f64,
    /// `⟨n_i⟩ - ⟨n_i⟩²` per site.
    pub fluctuations: Vec<f64>,
    /// Bipartition entropies for cuts `1..M` (pure states only).
    pub entropies: Option<Vec<f64>>,
}

pub fn dense_observables(operand: DenseOperand<'_>, with_entropy: bool) -> Result<DenseObservables> {
    let densities = match operand {
        DenseOperand::Pure(s) => s.densities(),
        DenseOperand::Mixed(r) => r.densities(),
    };
    let entropies = match (with_entropy, operand) {
        (false, _) => None,
        (true, DenseOperand::Pure(s)) => Some(s.entanglement_profile()?),
        (true, DenseOperand::Mixed(_)) => {
            return Err(Error::Unsupported(
                "entanglement entropy of a mixed density matrix".into(),
            ))
        }
    };
    Ok(DenseObservables {
        total: densities.iter().sum(),
        imbalance: imbalance(&densities),
        fluctuations: site_fluctuations(&densities),
        densities,
        entropies,
    })
}

#[cfg(test)]
mod tests;
