use nalgebra::{DMatrix, Matrix2};

use super::*;
use crate::model::build_hamiltonian_terms;

fn c(re: f64) -> C64 {
    C64::from(re)
}

fn sorted_eigenvalues(h: &DMatrix<C64>) -> Vec<f64> {
    let mut ev: Vec<f64> = h.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

/// `op` on `site` via Kronecker products. Site 1 is the least significant
/// bit, so it is the rightmost factor.
fn embed(sites: usize, site: usize, op: &DMatrix<C64>, left_fill: &DMatrix<C64>) -> DMatrix<C64> {
    let id = DMatrix::<C64>::identity(2, 2);
    let mut out = DMatrix::<C64>::identity(1, 1);
    for s in (1..=sites).rev() {
        let f = if s == site {
            op
        } else if s < site {
            left_fill
        } else {
            &id
        };
        out = kron(&out, f);
    }
    out
}

fn lowering() -> DMatrix<C64> {
    // basis (|0⟩, |1⟩): σ⁻|1⟩ = |0⟩
    DMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(0.0), c(0.0)])
}

fn parity() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(-1.0)])
}

/// Fermion operators from Kronecker products with a parity string, hopping
/// and interaction written in terms of them.
fn fermion_hamiltonian(sites: usize, j: f64, u: f64) -> DMatrix<C64> {
    let cs: Vec<DMatrix<C64>> = (1..=sites)
        .map(|s| embed(sites, s, &lowering(), &parity()))
        .collect();
    let dim = 1 << sites;
    let mut h = DMatrix::<C64>::zeros(dim, dim);
    for i in 0..sites - 1 {
        let hop = cs[i].adjoint() * &cs[i + 1];
        h -= (&hop + hop.adjoint()) * c(j);
        let ni = cs[i].adjoint() * &cs[i];
        let nj = cs[i + 1].adjoint() * &cs[i + 1];
        h += ni * nj * c(u);
    }
    h
}

#[test]
fn three_site_single_particle_spectrum() {
    let h = dense_hamiltonian(&HamiltonianSpec::hopping_only(3, 1.0)).unwrap();
    // One-particle block: states 1, 2, 4.
    let idx = [1usize, 2, 4];
    let block = DMatrix::from_fn(3, 3, |r, col| h[(idx[r], idx[col])]);
    let ev = sorted_eigenvalues(&block);
    let s2 = 2f64.sqrt();
    for (a, b) in ev.iter().zip([-s2, 0.0, s2]) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn boson_and_fermion_spectra_agree() {
    let spec = HamiltonianSpec::hopping_only(8, 1.0).with_interaction(0.7);
    let hb = dense_hamiltonian(&spec).unwrap();
    let hf = fermion_hamiltonian(8, 1.0, 0.7);
    // Nearest-neighbour strings cancel, so the matrices coincide exactly.
    assert!((&hb - &hf).norm() < 1e-13);
    let (eb, ef) = (sorted_eigenvalues(&hb), sorted_eigenvalues(&hf));
    assert!(eb.iter().zip(&ef).all(|(a, b)| (a - b).abs() < 1e-10));
}

#[test]
fn dense_hamiltonian_matches_embedded_terms() {
    let mut spec = HamiltonianSpec::hopping_only(5, 0.8).with_interaction(1.3);
    spec.potential = vec![0.1, -0.4, 0.0, 0.9, 0.25];
    let terms = build_hamiltonian_terms(&spec).unwrap();
    let dim = 1usize << 5;
    let mut h = DMatrix::<C64>::zeros(dim, dim);
    for b in &terms.bonds {
        let i = b.site - 1;
        for x in 0..dim {
            let col = 2 * ((x >> i) & 1) + ((x >> (i + 1)) & 1);
            let cleared = x & !(0b11 << i);
            for row in 0..4 {
                let y = cleared | ((row >> 1) << i) | ((row & 1) << (i + 1));
                h[(y, x)] += b.matrix[(row, col)];
            }
        }
    }
    for t in &terms.site_terms {
        let m: &Matrix2<C64> = &t.matrix;
        let op = DMatrix::from_fn(2, 2, |r, col| m[(r, col)]);
        h += embed(5, t.site, &op, &DMatrix::identity(2, 2));
    }
    assert!((h - dense_hamiltonian(&spec).unwrap()).norm() < 1e-13);
}

#[test]
fn loss_operators_are_nilpotent_and_count() {
    for species in Species::BOTH {
        for site in 1..=4 {
            let l = loss_operator(4, site, species).unwrap();
            assert_eq!((&l * &l).norm(), 0.0);
            let n = number_operator(4, site).unwrap();
            assert!((l.adjoint() * &l - n).norm() < 1e-15);
        }
    }
    let lf = loss_operator(3, 3, Species::SpinlessFermion).unwrap();
    let reference = embed(3, 3, &lowering(), &parity());
    assert!((lf - reference).norm() < 1e-15);
}

#[test]
fn capacity_and_site_guards() {
    assert!(matches!(
        dense_hamiltonian(&HamiltonianSpec::hopping_only(13, 1.0)),
        Err(Error::Capacity { sites: 13, .. })
    ));
    assert!(matches!(
        loss_operator(4, 5, Species::HardCoreBoson),
        Err(Error::SiteOutOfRange { .. })
    ));
    let rho = DensityMatrix::fock(&[1; 9]).unwrap();
    let h = DMatrix::zeros(512, 512);
    assert!(matches!(
        integrate_master_equation(&rho, &h, &[], 0.1, 0.01, 1),
        Err(Error::Capacity { max: 8, .. })
    ));
}

#[test]
fn no_dynamics_keeps_state() {
    let psi = DenseState::from_amplitudes(
        (0..16).map(|x| C64::new(x as f64, 1.0 - x as f64)).collect(),
        4,
    )
    .unwrap();
    let rho = DensityMatrix::from_pure(&psi);
    let h = DMatrix::zeros(16, 16);
    let out = integrate_master_equation(&rho, &h, &[], 1.0, 0.1, 1).unwrap();
    assert_eq!(out.len(), 11);
    assert!((&out[10].1.matrix - &rho.matrix).norm() < 1e-15);
}

#[test]
fn uniform_loss_decays_exponentially() {
    let gamma = 0.3;
    let spec = HamiltonianSpec::hopping_only(4, 1.0);
    let h = dense_hamiltonian(&spec).unwrap();
    for species in Species::BOTH {
        let jumps =
            dense_jump_operators(&DissipationSpec::uniform(4, gamma, 0.0), species).unwrap();
        let rho = DensityMatrix::fock(&[1, 1, 1, 1]).unwrap();
        integrate_master_equation_with(&rho, &h, &jumps, 2.0, 0.01, |_, t, r| {
            let n: f64 = r.densities().iter().sum::<f64>() * r.trace();
            assert!((n - 4.0 * (-gamma * t).exp()).abs() < 1e-9, "t = {t}");
            assert!((r.trace() - 1.0).abs() < 1e-12);
        })
        .unwrap();
    }
}

#[test]
fn dephasing_only_keeps_populations_and_kills_coherence() {
    let gamma = 0.5;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    // (|10⟩ + |01⟩)/√2 on two sites: indices 1 and 2.
    let psi = DenseState::from_amplitudes(vec![c(0.0), c(s), c(s), c(0.0)], 2).unwrap();
    let rho = DensityMatrix::from_pure(&psi);
    let jumps =
        dense_jump_operators(&DissipationSpec::uniform(2, 0.0, gamma), Species::HardCoreBoson)
            .unwrap();
    let h = DMatrix::zeros(4, 4);
    let out = integrate_master_equation(&rho, &h, &jumps, 1.0, 0.01, 100).unwrap();
    let (t, last) = out.last().unwrap();
    assert_eq!(last.populations(), rho.populations());
    // Each site dephases the coherence at rate γ/2; two sites give γ.
    assert!((last.matrix[(1, 2)].re - 0.5 * (-gamma * t).exp()).abs() < 1e-10);
}

#[test]
fn full_dynamics_stays_hermitian_and_matches_pure_evolution_without_jumps() {
    let mut spec = HamiltonianSpec::hopping_only(4, 1.0).with_interaction(0.5);
    spec.potential = vec![0.2, 0.0, -0.3, 0.1];
    let h = dense_hamiltonian(&spec).unwrap();
    let psi = DenseState::fock(&[1, 0, 1, 0]).unwrap();
    let rho = DensityMatrix::from_pure(&psi);

    let mut pure = Vec::new();
    evolve_state_with(&psi, &h, 1.5, 0.01, |_, _, p| pure.push(p.densities())).unwrap();
    let mut mixed = Vec::new();
    integrate_master_equation_with(&rho, &h, &[], 1.5, 0.01, |_, _, r| {
        mixed.push(r.densities())
    })
    .unwrap();
    for (a, b) in pure.iter().zip(&mixed) {
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-7));
    }

    let jumps = dense_jump_operators(
        &DissipationSpec::uniform(4, 0.2, 0.1),
        Species::SpinlessFermion,
    )
    .unwrap();
    integrate_master_equation_with(&rho, &h, &jumps, 1.5, 0.01, |_, _, r| {
        assert!(r.to_dense().hermiticity_error() < 1e-12);
        assert!((r.trace() - 1.0).abs() < 1e-10);
    })
    .unwrap();
}

#[test]
fn single_loss_densities_agree_between_species_and_differ_after_hopping() {
    // A loss from a product state gives identical densities; only the
    // relative signs of later superpositions differ.
    let rho = DensityMatrix::fock(&[1, 1, 0]).unwrap();
    let lb = loss_operator(3, 2, Species::HardCoreBoson).unwrap();
    let lf = loss_operator(3, 2, Species::SpinlessFermion).unwrap();
    let rb = &lb * &rho.matrix * lb.adjoint();
    let rf = &lf * &rho.matrix * lf.adjoint();
    assert!((rb - rf).norm() < 1e-15);
}

#[test]
fn entropy_of_pure_states_and_mixed_rejection() {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let psi = DenseState::from_amplitudes(vec![c(0.0), c(s), c(s), c(0.0)], 2).unwrap();
    let obs = dense_observables(DenseOperand::Pure(&psi), true).unwrap();
    assert!((obs.entropies.unwrap()[0] - std::f64::consts::LN_2).abs() < 1e-14);
    assert!((obs.total - 1.0).abs() < 1e-15);
    assert_eq!(obs.imbalance, 0.0);

    let cdw = DenseState::fock(&[1, 0, 1, 0]).unwrap();
    let obs = dense_observables(DenseOperand::Pure(&cdw), true).unwrap();
    assert_eq!(obs.imbalance, 1.0);
    assert!(obs.entropies.unwrap().iter().all(|&e| e.abs() < 1e-15));

    let rho = DensityMatrix::from_pure(&psi);
    assert!(matches!(
        dense_observables(DenseOperand::Mixed(&rho), true),
        Err(Error::Unsupported(_))
    ));
    assert!(dense_observables(DenseOperand::Mixed(&rho), false).is_ok());
}
