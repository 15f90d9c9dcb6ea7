//! Number-conserving matrix product states.
//!
//! Every bond carries a set of charge sectors, where the charge of a bond is
//! the number of particles on the sites to its left. A site tensor is stored
//! as a collection of dense blocks keyed by `(left charge, occupation)`; the
//! right charge of a block is always `left + occupation`. Because each block
//! knows how many particles sit to its left, the fermionic Jordan-Wigner string
//! of a site is a known sign per block and never has to be contracted.
//!
//! The state is kept in mixed-canonical form around a single orthogonality
//! center. Tensors left of the center are left-isometric, tensors right of it
//! are right-isometric, and the center tensor carries the full norm.
//!
//! ```text
//!   bond 0     bond 1           bond M-1    bond M
//!   {0} --A[1]-- {q} -- ... --A[M-1]-- {q} --A[M]-- {N}
//!          |                     |             |
//!         n_1                  n_{M-1}        n_M
//! ```
//!
//! Sites and cuts are 1-based in the public API; cut `b` separates sites
//! `1..=b` from `b+1..=M`.

mod gate;
mod svd;
mod tebd;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix4};

use crate::error::{Error, Result};
use crate::C64;

pub use gate::{exp_generator, TwoSiteGate};
pub use svd::Truncation;
pub use tebd::{tebd_step, BondGenerators, NumericsSpec, TrotterOrder, TrotterPropagator};

use svd::{decompose, Sector};

/// Cumulative particle number to the left of a bond.
pub type Charge = u32;

type BlockKey = (Charge, u8);
type ThetaKey = (Charge, u8, u8);

/// Charge sectors of one bond and their degeneracies.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BondSpace {
    sectors: BTreeMap<Charge, usize>,
}

impl BondSpace {
    fn single(charge: Charge) -> Self {
        Self {
            sectors: BTreeMap::from([(charge, 1)]),
        }
    }

    pub fn dim(&self, charge: Charge) -> Option<usize> {
        self.sectors.get(&charge).copied()
    }

    pub fn total_dim(&self) -> usize {
        self.sectors.values().sum()
    }

    pub fn charges(&self) -> impl Iterator<Item = Charge> + '_ {
        self.sectors.keys().copied()
    }

    pub fn sectors(&self) -> impl Iterator<Item = (Charge, usize)> + '_ {
        self.sectors.iter().map(|(&q, &d)| (q, d))
    }
}

/// Blocks of one site tensor, keyed by `(left charge, occupation)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SiteTensor {
    blocks: BTreeMap<BlockKey, DMatrix<C64>>,
}

impl SiteTensor {
    pub fn block(&self, left: Charge, occupation: u8) -> Option<&DMatrix<C64>> {
        self.blocks.get(&(left, occupation))
    }

    pub fn blocks(&self) -> impl Iterator<Item = ((Charge, u8), &DMatrix<C64>)> {
        self.blocks.iter().map(|(&k, v)| (k, v))
    }

    fn frobenius_sq(&self) -> f64 {
        self.blocks.values().map(|b| b.norm_squared()).sum()
    }
}

/// Which of the two sites of a gate receives the orthogonality center.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CenterSide {
    Left,
    Right,
}

#[derive(Clone, Debug)]
pub struct SymmetricMps {
    sites: Vec<SiteTensor>,
    bonds: Vec<BondSpace>,
    // Schmidt values of each internal bond as of the last decomposition across
    // it, normalized and sorted descending. Index `b - 1` holds cut `b`.
    schmidt: Vec<Vec<f64>>,
    center: usize,
}

impl SymmetricMps {
    /// Product state for a Fock configuration.
    pub fn product(occupations: &[u8]) -> Result<Self> {
        if occupations.is_empty() {
            return Err(Error::invalid("empty lattice"));
        }
        if occupations.iter().any(|&n| n > 1) {
            return Err(Error::invalid("occupations must be 0 or 1"));
        }
        let mut bonds = Vec::with_capacity(occupations.len() + 1);
        let mut sites = Vec::with_capacity(occupations.len());
        let mut q: Charge = 0;
        bonds.push(BondSpace::single(0));
        for &n in occupations {
            let mut site = SiteTensor::default();
            site.blocks.insert((q, n), DMatrix::from_element(1, 1, C64::from(1.0)));
            sites.push(site);
            q += Charge::from(n);
            bonds.push(BondSpace::single(q));
        }
        Ok(Self {
            schmidt: vec![vec![1.0]; occupations.len() - 1],
            sites,
            bonds,
            center: 0,
        })
    }

    /// Build from dense amplitudes with site 1 on the least significant bit.
    ///
    /// All nonzero amplitudes must share one particle number.
    pub fn from_amplitudes(amplitudes: &[C64], sites: usize) -> Result<Self> {
        if sites == 0 || amplitudes.len() != 1 << sites {
            return Err(Error::invalid(format!(
                "{} amplitudes do not describe {sites} sites",
                amplitudes.len()
            )));
        }
        let mut numbers = amplitudes
            .iter()
            .enumerate()
            .filter(|(_, a)| a.norm_sqr() > 0.0)
            .map(|(i, _)| i.count_ones());
        let total = numbers.next().ok_or(Error::ZeroNorm(0.0))?;
        if numbers.any(|n| n != total) {
            return Err(Error::invalid("amplitudes mix different particle numbers"));
        }
        let trunc = Truncation::exact();

        // Remaining configurations of bits `from..sites` with `count` particles.
        let configs = |from: usize, count: u32| -> Vec<usize> {
            (0..1usize << (sites - from))
                .filter(|c| c.count_ones() == count)
                .map(|c| c << from)
                .collect()
        };

        let mut psi: BTreeMap<Charge, (DMatrix<C64>, Vec<usize>)> = BTreeMap::new();
        let first = configs(0, total);
        psi.insert(
            0,
            (
                DMatrix::from_iterator(1, first.len(), first.iter().map(|&c| amplitudes[c])),
                first,
            ),
        );
        let mut bonds = vec![BondSpace::single(0)];
        let mut tensors = Vec::with_capacity(sites);
        let mut schmidt = Vec::new();
        for s in 0..sites - 1 {
            let high = !((1usize << (s + 1)) - 1);
            let mut stacked: Vec<Sector> = Vec::new();
            let mut next_cols = BTreeMap::new();
            let targets: Vec<Charge> = {
                let mut t: Vec<Charge> = psi.keys().flat_map(|&q| [q, q + 1]).collect();
                t.sort_unstable();
                t.dedup();
                t
            };
            for qn in targets {
                if qn > total || (total - qn) as usize > sites - s - 1 {
                    continue;
                }
                let cols = configs(s + 1, total - qn);
                let index: BTreeMap<usize, usize> =
                    cols.iter().enumerate().map(|(j, &c)| (c, j)).collect();
                let mut rows = Vec::new();
                let mut parts = Vec::new();
                for n in 0..2u8 {
                    let Some(q) = qn.checked_sub(Charge::from(n)) else { continue };
                    let Some((m, cfg)) = psi.get(&q) else { continue };
                    let mut part = DMatrix::zeros(m.nrows(), cols.len());
                    for (j, &c) in cfg.iter().enumerate() {
                        if (c >> s) & 1 == n as usize {
                            part.set_column(index[&(c & high)], &m.column(j));
                        }
                    }
                    rows.push((q, n, m.nrows()));
                    parts.push(part);
                }
                if rows.is_empty() {
                    continue;
                }
                let nrows: usize = parts.iter().map(|p| p.nrows()).sum();
                let mut mat = DMatrix::zeros(nrows, cols.len());
                let mut r0 = 0;
                for p in &parts {
                    mat.view_mut((r0, 0), p.shape()).copy_from(p);
                    r0 += p.nrows();
                }
                stacked.push(Sector {
                    charge: qn,
                    rows,
                    matrix: mat,
                });
                next_cols.insert(qn, cols);
            }
            let dec = decompose(stacked, &trunc, false)?;
            let mut site = SiteTensor::default();
            let mut bond = BondSpace::default();
            let mut next = BTreeMap::new();
            for kept in dec.kept {
                let k = kept.values.len();
                bond.sectors.insert(kept.charge, k);
                let mut r0 = 0;
                for &(q, n, d) in &kept.rows {
                    site.blocks
                        .insert((q, n), kept.u.rows(r0, d).into_owned());
                    r0 += d;
                }
                let svt = scale_rows(&kept.vt, &kept.values);
                next.insert(kept.charge, (svt, next_cols.remove(&kept.charge).unwrap()));
            }
            schmidt.push(dec.schmidt);
            tensors.push(site);
            bonds.push(bond);
            psi = next;
        }
        let mut last = SiteTensor::default();
        for (q, (m, _)) in psi {
            let n = (total - q) as u8;
            last.blocks.insert((q, n), m);
        }
        tensors.push(last);
        bonds.push(BondSpace::single(total));
        Ok(Self {
            sites: tensors,
            bonds,
            schmidt,
            center: sites - 1,
        })
    }

    /// Dense amplitudes with site 1 on the least significant bit.
    pub fn to_amplitudes(&self) -> Vec<C64> {
        let m = self.len();
        let total = self.particle_number();
        (0..1usize << m)
            .map(|idx| {
                if idx.count_ones() != total {
                    return C64::from(0.0);
                }
                let mut v = DMatrix::from_element(1, 1, C64::from(1.0));
                let mut q: Charge = 0;
                for (s, site) in self.sites.iter().enumerate() {
                    let n = ((idx >> s) & 1) as u8;
                    match site.block(q, n) {
                        Some(b) if b.nrows() == v.ncols() => v = &v * b,
                        _ => return C64::from(0.0),
                    }
                    q += Charge::from(n);
                }
                v[(0, 0)]
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// 1-based position of the orthogonality center.
    pub fn center(&self) -> usize {
        self.center + 1
    }

    /// Exact particle number of the sector the state lives in.
    pub fn particle_number(&self) -> Charge {
        self.bonds[self.len()].charges().next().unwrap_or(0)
    }

    /// Charge sectors of bond `b` (0 = left boundary, M = right boundary).
    pub fn bond(&self, b: usize) -> &BondSpace {
        &self.bonds[b]
    }

    /// 1-based site tensor.
    pub fn site(&self, site: usize) -> &SiteTensor {
        &self.sites[site - 1]
    }

    pub fn max_bond_dimension(&self) -> usize {
        self.bonds.iter().map(BondSpace::total_dim).max().unwrap_or(1)
    }

    /// Schmidt values stored for cut `b` by the most recent decomposition across it.
    pub fn stored_schmidt_values(&self, cut: usize) -> Option<&[f64]> {
        cut.checked_sub(1)
            .and_then(|i| self.schmidt.get(i))
            .map(Vec::as_slice)
    }

    pub fn norm(&self) -> f64 {
        self.sites[self.center].frobenius_sq().sqrt()
    }

    /// Divide by the norm; returns the norm before scaling.
    pub fn normalize(&mut self) -> Result<f64> {
        let norm = self.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::ZeroNorm(norm));
        }
        self.scale(C64::from(1.0 / norm));
        Ok(norm)
    }

    pub fn scale(&mut self, factor: C64) {
        for b in self.sites[self.center].blocks.values_mut() {
            *b *= factor;
        }
    }

    /// Full scan of the block structure: every block connects existing sectors
    /// with `right = left + occupation` and has matching shape.
    pub fn charges_consistent(&self) -> bool {
        self.sites.iter().enumerate().all(|(s, site)| {
            site.blocks.iter().all(|(&(q, n), b)| {
                let left = self.bonds[s].dim(q);
                let right = self.bonds[s + 1].dim(q + Charge::from(n));
                n <= 1 && left == Some(b.nrows()) && right == Some(b.ncols())
            })
        })
    }

    fn check_site(&self, site: usize) -> Result<usize> {
        if site == 0 || site > self.len() {
            return Err(Error::SiteOutOfRange {
                site,
                sites: self.len(),
            });
        }
        Ok(site - 1)
    }

    fn check_cut(&self, cut: usize) -> Result<()> {
        if cut == 0 || cut >= self.len() {
            return Err(Error::CutOutOfRange {
                cut,
                max: self.len().saturating_sub(1),
            });
        }
        Ok(())
    }

    /// Move the orthogonality center to the 1-based `site`.
    pub fn move_center(&mut self, site: usize, trunc: &Truncation) -> Result<()> {
        let target = self.check_site(site)?;
        while self.center < target {
            self.shift_center_right(trunc)?;
        }
        while self.center > target {
            self.shift_center_left(trunc)?;
        }
        Ok(())
    }

    fn shift_center_right(&mut self, trunc: &Truncation) -> Result<()> {
        let c = self.center;
        let mut groups: BTreeMap<Charge, Vec<BlockKey>> = BTreeMap::new();
        for &(q, n) in self.sites[c].blocks.keys() {
            groups.entry(q + Charge::from(n)).or_default().push((q, n));
        }
        let mut sectors = Vec::with_capacity(groups.len());
        for (qr, keys) in groups {
            let blocks: Vec<&DMatrix<C64>> =
                keys.iter().map(|k| &self.sites[c].blocks[k]).collect();
            let rows = keys
                .iter()
                .zip(&blocks)
                .map(|(&(q, n), b)| (q, n, b.nrows()))
                .collect();
            sectors.push(Sector {
                charge: qr,
                rows,
                matrix: vstack(&blocks),
            });
        }
        let dec = decompose(sectors, trunc, false)?;
        let mut left = SiteTensor::default();
        let mut bond = BondSpace::default();
        let mut carry = BTreeMap::new();
        for kept in dec.kept {
            bond.sectors.insert(kept.charge, kept.values.len());
            let mut r0 = 0;
            for &(q, n, d) in &kept.rows {
                left.blocks.insert((q, n), kept.u.rows(r0, d).into_owned());
                r0 += d;
            }
            carry.insert(kept.charge, scale_rows(&kept.vt, &kept.values));
        }
        let right = std::mem::take(&mut self.sites[c + 1].blocks);
        for ((q, n), b) in right {
            if let Some(svt) = carry.get(&q) {
                self.sites[c + 1].blocks.insert((q, n), svt * b);
            }
        }
        self.sites[c] = left;
        self.bonds[c + 1] = bond;
        self.schmidt[c] = dec.schmidt;
        self.center = c + 1;
        Ok(())
    }

    fn shift_center_left(&mut self, trunc: &Truncation) -> Result<()> {
        let c = self.center;
        let mut groups: BTreeMap<Charge, Vec<BlockKey>> = BTreeMap::new();
        for &(q, n) in self.sites[c].blocks.keys() {
            groups.entry(q).or_default().push((q, n));
        }
        let mut sectors = Vec::with_capacity(groups.len());
        let mut layouts = BTreeMap::new();
        for (ql, keys) in groups {
            let blocks: Vec<&DMatrix<C64>> =
                keys.iter().map(|k| &self.sites[c].blocks[k]).collect();
            let widths: Vec<(u8, usize)> =
                keys.iter().zip(&blocks).map(|(&(_, n), b)| (n, b.ncols())).collect();
            // Decompose the adjoint so that the kept "rows" index the right legs.
            let adj = hstack(&blocks).adjoint();
            let rows = widths.iter().map(|&(n, d)| (ql, n, d)).collect();
            layouts.insert(ql, widths);
            sectors.push(Sector {
                charge: ql,
                rows,
                matrix: adj,
            });
        }
        let dec = decompose(sectors, trunc, false)?;
        let mut right = SiteTensor::default();
        let mut bond = BondSpace::default();
        let mut carry = BTreeMap::new();
        for kept in dec.kept {
            bond.sectors.insert(kept.charge, kept.values.len());
            // adj = U S Vt  =>  block = V S U†; V S goes left, U† stays.
            let udag = kept.u.adjoint();
            let mut c0 = 0;
            for &(n, d) in &layouts[&kept.charge] {
                right
                    .blocks
                    .insert((kept.charge, n), udag.columns(c0, d).into_owned());
                c0 += d;
            }
            carry.insert(kept.charge, scale_columns(&kept.vt.adjoint(), &kept.values));
        }
        let left = std::mem::take(&mut self.sites[c - 1].blocks);
        for ((q, n), b) in left {
            if let Some(vs) = carry.get(&(q + Charge::from(n))) {
                self.sites[c - 1].blocks.insert((q, n), b * vs);
            }
        }
        self.sites[c] = right;
        self.bonds[c] = bond;
        self.schmidt[c - 1] = dec.schmidt;
        self.center = c - 1;
        Ok(())
    }

    /// Two-site wavefunction `θ(q_left, n_i, n_{i+1})` on 0-based sites `(i, i+1)`.
    fn theta(&self, i: usize) -> BTreeMap<ThetaKey, DMatrix<C64>> {
        let mut theta = BTreeMap::new();
        for (&(q, m1), a) in &self.sites[i].blocks {
            let mid = q + Charge::from(m1);
            for m2 in 0..2u8 {
                if let Some(b) = self.sites[i + 1].blocks.get(&(mid, m2)) {
                    theta.insert((q, m1, m2), a * b);
                }
            }
        }
        theta
    }

    /// Apply a particle-conserving 4×4 gate to the pair `(bond, bond + 1)`.
    ///
    /// The orthogonality center is first moved onto the pair if needed and ends
    /// on `side`. Returns the discarded weight, i.e. the sum of squared dropped
    /// Schmidt values relative to the total.
    pub fn apply_two_site_gate(
        &mut self,
        bond: usize,
        gate: &Matrix4<C64>,
        trunc: &Truncation,
        side: CenterSide,
        renormalize: bool,
    ) -> Result<f64> {
        self.check_cut(bond)?;
        let gate = TwoSiteGate::new(*gate).map_err(|(row, col, value)| {
            Error::ChargeViolation {
                bond,
                row,
                col,
                value,
            }
        })?;
        let i = bond - 1;
        // Moving the center only drops numerically negligible values.
        let move_trunc = Truncation::new(usize::MAX, trunc.tol);
        if self.center < i {
            self.move_center(i + 1, &move_trunc)?;
        } else if self.center > i + 1 {
            self.move_center(i + 2, &move_trunc)?;
        }
        let theta = gate.apply(&self.theta(i));

        let left_bond = &self.bonds[i];
        let right_bond = &self.bonds[i + 2];
        let mut mids: Vec<Charge> = theta.keys().map(|&(q, n1, _)| q + Charge::from(n1)).collect();
        mids.sort_unstable();
        mids.dedup();
        let mut sectors = Vec::with_capacity(mids.len());
        let mut col_layouts = BTreeMap::new();
        for qm in mids {
            let rows: Vec<(Charge, u8, usize)> = (0..2u8)
                .filter_map(|n1| {
                    let q = qm.checked_sub(Charge::from(n1))?;
                    left_bond.dim(q).map(|d| (q, n1, d))
                })
                .collect();
            let cols: Vec<(u8, usize)> = (0..2u8)
                .filter_map(|n2| right_bond.dim(qm + Charge::from(n2)).map(|d| (n2, d)))
                .collect();
            let nr: usize = rows.iter().map(|r| r.2).sum();
            let nc: usize = cols.iter().map(|c| c.1).sum();
            let mut mat = DMatrix::zeros(nr, nc);
            let mut any = false;
            let mut r0 = 0;
            for &(q, n1, dr) in &rows {
                let mut c0 = 0;
                for &(n2, dc) in &cols {
                    if let Some(block) = theta.get(&(q, n1, n2)) {
                        mat.view_mut((r0, c0), (dr, dc)).copy_from(block);
                        any = true;
                    }
                    c0 += dc;
                }
                r0 += dr;
            }
            if any {
                col_layouts.insert(qm, cols);
                sectors.push(Sector {
                    charge: qm,
                    rows,
                    matrix: mat,
                });
            }
        }
        let dec = decompose(sectors, trunc, renormalize)?;
        let discarded = dec.discarded;
        let mut left = SiteTensor::default();
        let mut right = SiteTensor::default();
        let mut bond_space = BondSpace::default();
        for kept in dec.kept {
            bond_space.sectors.insert(kept.charge, kept.values.len());
            let (u, vt) = match side {
                CenterSide::Left => (scale_columns(&kept.u, &kept.values), kept.vt),
                CenterSide::Right => (kept.u, scale_rows(&kept.vt, &kept.values)),
            };
            let mut r0 = 0;
            for &(q, n1, d) in &kept.rows {
                left.blocks.insert((q, n1), u.rows(r0, d).into_owned());
                r0 += d;
            }
            let mut c0 = 0;
            for &(n2, d) in &col_layouts[&kept.charge] {
                right
                    .blocks
                    .insert((kept.charge, n2), vt.columns(c0, d).into_owned());
                c0 += d;
            }
        }
        self.sites[i] = left;
        self.sites[i + 1] = right;
        self.bonds[i + 1] = bond_space;
        self.schmidt[i] = dec.schmidt;
        self.center = match side {
            CenterSide::Left => i,
            CenterSide::Right => i + 1,
        };
        Ok(discarded)
    }

    /// Left environments `L_b[q]` for bonds `0..=M`.
    fn left_environments(&self) -> Vec<BTreeMap<Charge, DMatrix<C64>>> {
        let mut envs = Vec::with_capacity(self.len() + 1);
        envs.push(BTreeMap::from([(0, DMatrix::from_element(1, 1, C64::from(1.0)))]));
        for site in &self.sites {
            let prev = envs.last().unwrap();
            let mut next: BTreeMap<Charge, DMatrix<C64>> = BTreeMap::new();
            for (&(q, n), a) in &site.blocks {
                let Some(l) = prev.get(&q) else { continue };
                let t = a.adjoint() * l * a;
                let key = q + Charge::from(n);
                match next.get_mut(&key) {
                    Some(acc) => *acc += t,
                    None => {
                        next.insert(key, t);
                    }
                }
            }
            envs.push(next);
        }
        envs
    }

    /// Right environments `R_b[q]` for bonds `0..=M`.
    fn right_environments(&self) -> Vec<BTreeMap<Charge, DMatrix<C64>>> {
        let m = self.len();
        let mut envs = vec![BTreeMap::new(); m + 1];
        envs[m] = self.bonds[m]
            .sectors()
            .map(|(q, d)| (q, DMatrix::identity(d, d)))
            .collect();
        for s in (0..m).rev() {
            let mut next: BTreeMap<Charge, DMatrix<C64>> = BTreeMap::new();
            for (&(q, n), a) in &self.sites[s].blocks {
                let Some(r) = envs[s + 1].get(&(q + Charge::from(n))) else { continue };
                let t = a * r * a.adjoint();
                match next.get_mut(&q) {
                    Some(acc) => *acc += t,
                    None => {
                        next.insert(q, t);
                    }
                }
            }
            envs[s] = next;
        }
        envs
    }

    /// `⟨n_i⟩` on every site, normalized by the current norm.
    ///
    /// Computed by full transfer-matrix contraction, so it does not rely on the
    /// canonical form.
    pub fn densities(&self) -> Vec<f64> {
        let left = self.left_environments();
        let right = self.right_environments();
        let norm_sq = left[self.len()]
            .values()
            .map(|m| m.trace().re)
            .sum::<f64>();
        self.sites
            .iter()
            .enumerate()
            .map(|(s, site)| {
                let mut occ = 0.0;
                for (&(q, n), a) in &site.blocks {
                    if n != 1 {
                        continue;
                    }
                    if let (Some(l), Some(r)) = (left[s].get(&q), right[s + 1].get(&(q + 1))) {
                        occ += (a.adjoint() * l * a * r).trace().re;
                    }
                }
                occ / norm_sq
            })
            .collect()
    }

    pub fn local_density(&self, site: usize) -> Result<f64> {
        let s = self.check_site(site)?;
        Ok(self.densities()[s])
    }

    /// `Σ_i ⟨n_i⟩`.
    pub fn total_number(&self) -> f64 {
        self.densities().iter().sum()
    }

    /// Normalized expectation value of a two-site operator on `(bond, bond + 1)`.
    pub fn expect_two_site(&self, bond: usize, op: &Matrix4<C64>) -> Result<C64> {
        self.check_cut(bond)?;
        let op = TwoSiteGate::new(*op).map_err(|(row, col, value)| Error::ChargeViolation {
            bond,
            row,
            col,
            value,
        })?;
        let i = bond - 1;
        let left = self.left_environments();
        let right = self.right_environments();
        let theta = self.theta(i);
        let phi = op.apply(&theta);
        let mut value = C64::from(0.0);
        for (&(q, n1, n2), t) in &theta {
            let qr = q + Charge::from(n1) + Charge::from(n2);
            if let (Some(p), Some(l), Some(r)) =
                (phi.get(&(q, n1, n2)), left[i].get(&q), right[i + 2].get(&qr))
            {
                value += (t.adjoint() * l * p * r).trace();
            }
        }
        let norm_sq: f64 = left[self.len()].values().map(|m| m.trace().re).sum();
        Ok(value / norm_sq)
    }

    /// `⟨self|other⟩` without normalization.
    pub fn overlap(&self, other: &SymmetricMps) -> C64 {
        assert_eq!(self.len(), other.len(), "overlap of chains with different length");
        let mut env: BTreeMap<Charge, DMatrix<C64>> =
            BTreeMap::from([(0, DMatrix::from_element(1, 1, C64::from(1.0)))]);
        for (a_site, b_site) in self.sites.iter().zip(&other.sites) {
            let mut next: BTreeMap<Charge, DMatrix<C64>> = BTreeMap::new();
            for (&(q, n), a) in &a_site.blocks {
                let (Some(e), Some(b)) = (env.get(&q), b_site.blocks.get(&(q, n))) else {
                    continue;
                };
                let t = a.adjoint() * e * b;
                let key = q + Charge::from(n);
                match next.get_mut(&key) {
                    Some(acc) => *acc += t,
                    None => {
                        next.insert(key, t);
                    }
                }
            }
            env = next;
        }
        env.values().map(|m| m.trace()).sum()
    }

    /// Exact Schmidt values across `cut`, recomputed on a canonicalized copy.
    pub fn schmidt_values(&self, cut: usize) -> Result<Vec<f64>> {
        self.check_cut(cut)?;
        let mut copy = self.clone();
        let trunc = Truncation::exact();
        copy.move_center(cut, &trunc)?;
        copy.shift_center_right(&trunc)?;
        Ok(copy.schmidt[cut - 1].clone())
    }

    /// Von Neumann entropy `-Σ λ² ln λ²` across `cut`.
    pub fn entanglement_entropy(&self, cut: usize) -> Result<f64> {
        Ok(von_neumann(&self.schmidt_values(cut)?))
    }

    /// Entropies across all cuts `1..M`, from a single sweep on a copy.
    pub fn entanglement_profile(&self) -> Result<Vec<f64>> {
        let mut copy = self.clone();
        let trunc = Truncation::exact();
        copy.move_center(1, &trunc)?;
        for _ in 1..self.len() {
            copy.shift_center_right(&trunc)?;
        }
        Ok(copy.schmidt.iter().map(|s| von_neumann(s)).collect())
    }

    // ---- crate-internal hooks for local operators ----

    pub(crate) fn center_tensor_mut(&mut self) -> &mut BTreeMap<(Charge, u8), DMatrix<C64>> {
        &mut self.sites[self.center].blocks
    }

    pub(crate) fn center_index(&self) -> usize {
        self.center
    }

    /// Lower all charges on bonds right of 0-based site `s` by one, after the
    /// occupied blocks of `s` have been relabelled to empty ones.
    pub(crate) fn lower_charges_right_of(&mut self, s: usize) {
        for site in &mut self.sites[s + 1..] {
            let blocks = std::mem::take(&mut site.blocks);
            site.blocks = blocks
                .into_iter()
                .filter(|&((q, _), _)| q > 0)
                .map(|((q, n), b)| ((q - 1, n), b))
                .collect();
        }
        for bond in &mut self.bonds[s + 1..] {
            let sectors = std::mem::take(&mut bond.sectors);
            bond.sectors = sectors
                .into_iter()
                .filter(|&(q, _)| q > 0)
                .map(|(q, d)| (q - 1, d))
                .collect();
        }
    }
}

/// Returns `(norm, normalized copy)`.
pub fn norm_and_normalize(state: &SymmetricMps) -> Result<(f64, SymmetricMps)> {
    let mut out = state.clone();
    let norm = out.normalize()?;
    Ok((norm, out))
}

/// Build a product state for a Fock configuration.
pub fn product_mps(occupations: &[u8]) -> Result<SymmetricMps> {
    SymmetricMps::product(occupations)
}

pub(crate) fn von_neumann(values: &[f64]) -> f64 {
    let total: f64 = values.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        return 0.0;
    }
    values
        .iter()
        .map(|s| s * s / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

fn vstack(blocks: &[&DMatrix<C64>]) -> DMatrix<C64> {
    let nr = blocks.iter().map(|b| b.nrows()).sum();
    let nc = blocks.first().map_or(0, |b| b.ncols());
    let mut out = DMatrix::zeros(nr, nc);
    let mut r0 = 0;
    for b in blocks {
        out.view_mut((r0, 0), b.shape()).copy_from(*b);
        r0 += b.nrows();
    }
    out
}

fn hstack(blocks: &[&DMatrix<C64>]) -> DMatrix<C64> {
    let nr = blocks.first().map_or(0, |b| b.nrows());
    let nc = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(nr, nc);
    let mut c0 = 0;
    for b in blocks {
        out.view_mut((0, c0), b.shape()).copy_from(*b);
        c0 += b.ncols();
    }
    out
}

fn scale_rows(m: &DMatrix<C64>, s: &[f64]) -> DMatrix<C64> {
    let mut out = m.clone();
    for (i, &v) in s.iter().enumerate() {
        let mut row = out.row_mut(i);
        row *= C64::from(v);
    }
    out
}

fn scale_columns(m: &DMatrix<C64>, s: &[f64]) -> DMatrix<C64> {
    let mut out = m.clone();
    for (j, &v) in s.iter().enumerate() {
        let mut col = out.column_mut(j);
        col *= C64::from(v);
    }
    out
}
