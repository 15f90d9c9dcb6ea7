//! Loss and dephasing jumps on a [`SymmetricMps`].
//!
//! The Jordan-Wigner string `(-1)^{Σ_{i<k} n_i}` of a fermionic annihilator
//! on site `k` is read off the charge label of each block on the bond left of
//! `k`, so a fermionic loss is a local operation times one sign per block.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::Species;
use crate::mps::{Charge, SymmetricMps, Truncation};

/// Jumps with squared norm below this are treated as impossible.
pub const ANNIHILATION_THRESHOLD: f64 = 1e-14;

/// Sign `(-1)^q` of each charge block `q` on the bond left of `site` (1-based).
pub fn string_phase(state: &SymmetricMps, site: usize) -> Result<BTreeMap<Charge, i8>> {
    if site == 0 || site > state.len() {
        return Err(Error::SiteOutOfRange {
            site,
            sites: state.len(),
        });
    }
    Ok(state
        .bond(site - 1)
        .charges()
        .map(|q| (q, if q % 2 == 0 { 1 } else { -1 }))
        .collect())
}

/// Multiply each block of `site` by its string sign. Changes phases only.
pub fn apply_string(state: &mut SymmetricMps, site: usize) -> Result<()> {
    let signs = string_phase(state, site)?;
    state.move_center(site, &Truncation::exact())?;
    for (&(q, _), block) in state.center_tensor_mut().iter_mut() {
        if signs.get(&q) == Some(&-1) {
            block.neg_mut();
        }
    }
    Ok(())
}

/// Apply `b_k` (bosons) or `a_k = (-1)^{Σ_{i<k} n_i} σ⁻_k` (fermions).
///
/// Returns the jump weight `‖J|ψ⟩‖² = ⟨n_k⟩` for a normalized input. The
/// output is left unnormalized and lives in the sector with one particle less.
pub fn apply_loss(state: &mut SymmetricMps, site: usize, species: Species) -> Result<f64> {
    if site == 0 || site > state.len() {
        return Err(Error::SiteOutOfRange {
            site,
            sites: state.len(),
        });
    }
    state.move_center(site, &Truncation::exact())?;
    let signs = string_phase(state, site)?;
    let s = site - 1;
    let weight: f64 = state
        .center_tensor_mut()
        .iter()
        .filter(|((_, n), _)| *n == 1)
        .map(|(_, b)| b.norm_squared())
        .sum();
    if weight < ANNIHILATION_THRESHOLD {
        return Err(Error::Annihilated { site, weight });
    }
    let blocks = std::mem::take(state.center_tensor_mut());
    let mut lowered = BTreeMap::new();
    for ((q, n), mut block) in blocks {
        if n != 1 {
            continue;
        }
        if species == Species::SpinlessFermion && signs[&q] == -1 {
            block.neg_mut();
        }
        lowered.insert((q, 0), block);
    }
    *state.center_tensor_mut() = lowered;
    state.lower_charges_right_of(s);
    Ok(weight)
}

/// Apply the projector `n_k`. Identical for both species.
///
/// Returns the jump weight `⟨n_k⟩` for a normalized input; the output is
/// left unnormalized.
pub fn apply_dephasing_jump(state: &mut SymmetricMps, site: usize) -> Result<f64> {
    if site == 0 || site > state.len() {
        return Err(Error::SiteOutOfRange {
            site,
            sites: state.len(),
        });
    }
    state.move_center(site, &Truncation::exact())?;
    let weight: f64 = state
        .center_tensor_mut()
        .iter()
        .filter(|((_, n), _)| *n == 1)
        .map(|(_, b)| b.norm_squared())
        .sum();
    if weight < ANNIHILATION_THRESHOLD {
        return Err(Error::Annihilated { site, weight });
    }
    state.center_tensor_mut().retain(|&(_, n), _| n == 1);
    Ok(weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mps::product_mps;
    use crate::C64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(x: f64) -> C64 {
        C64::from(x)
    }

    /// Basis index for an occupation string written left to right (site 1 first).
    fn index(occ: &str) -> usize {
        occ.bytes()
            .enumerate()
            .map(|(i, b)| ((b - b'0') as usize) << i)
            .sum()
    }

    fn superposition(terms: &[(&str, f64)], sites: usize) -> Vec<C64> {
        let mut psi = vec![c(0.0); 1 << sites];
        for &(occ, amp) in terms {
            psi[index(occ)] = c(amp);
        }
        psi
    }

    /// Explicit `(-1)^{Σ_{i<k} n_i} σ⁻_k` (or plain `σ⁻_k`) on a dense vector.
    fn dense_loss(psi: &[C64], k: usize, fermion: bool) -> Vec<C64> {
        let mut out = vec![c(0.0); psi.len()];
        for (x, &a) in psi.iter().enumerate() {
            if (x >> k) & 1 == 1 {
                let parity = (x & ((1 << k) - 1)).count_ones();
                let sign = if fermion && parity % 2 == 1 { -1.0 } else { 1.0 };
                out[x & !(1 << k)] += a * sign;
            }
        }
        out
    }

    fn random_state(sites: usize, particles: u32, rng: &mut ChaCha8Rng) -> Vec<C64> {
        let mut psi: Vec<C64> = (0..1usize << sites)
            .map(|x| {
                if x.count_ones() == particles {
                    C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                } else {
                    c(0.0)
                }
            })
            .collect();
        let n = psi.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        psi.iter_mut().for_each(|a| *a /= n);
        psi
    }

    fn max_diff(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn string_phase_examples() {
        let mps = product_mps(&[1, 1, 0, 1]).unwrap();
        assert!(string_phase(&mps, 1).unwrap().values().all(|&s| s == 1));
        assert_eq!(string_phase(&mps, 3).unwrap(), BTreeMap::from([(2, 1)]));

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let psi = superposition(&[("011", h), ("110", h)], 3);
        let mps = SymmetricMps::from_amplitudes(&psi, 3).unwrap();
        assert_eq!(string_phase(&mps, 2).unwrap(), BTreeMap::from([(0, 1), (1, -1)]));
        assert!(string_phase(&mps, 4).is_err());
    }

    #[test]
    fn loss_from_unit_filling_is_species_blind() {
        for species in Species::BOTH {
            let mut mps = product_mps(&[1, 1, 1, 1]).unwrap();
            let w = apply_loss(&mut mps, 2, species).unwrap();
            assert_eq!(w, 1.0);
            assert_eq!(mps.particle_number(), 3);
            assert!(mps.charges_consistent());
            assert_eq!(mps.densities(), [1.0, 0.0, 1.0, 1.0]);
            let amps = mps.to_amplitudes();
            assert_eq!(amps[index("1011")].norm(), 1.0);
        }
    }

    #[test]
    fn loss_sign_distinguishes_species() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let psi = superposition(&[("011", h), ("110", h)], 3);
        let mut boson = SymmetricMps::from_amplitudes(&psi, 3).unwrap();
        let mut fermion = boson.clone();
        let wb = apply_loss(&mut boson, 2, Species::HardCoreBoson).unwrap();
        let wf = apply_loss(&mut fermion, 2, Species::SpinlessFermion).unwrap();
        assert!((wb - 1.0).abs() < 1e-14 && (wf - 1.0).abs() < 1e-14);
        let expected_b = superposition(&[("001", h), ("100", h)], 3);
        let expected_f = superposition(&[("001", h), ("100", -h)], 3);
        assert!(max_diff(&boson.to_amplitudes(), &expected_b) < 1e-14);
        assert!(max_diff(&fermion.to_amplitudes(), &expected_f) < 1e-14);
        let (db, df) = (boson.densities(), fermion.densities());
        assert!(max_diff(
            &db.iter().map(|&x| c(x)).collect::<Vec<_>>(),
            &df.iter().map(|&x| c(x)).collect::<Vec<_>>()
        ) < 1e-14);
    }

    #[test]
    fn loss_on_empty_site_is_an_error() {
        let mut mps = product_mps(&[0, 1]).unwrap();
        let before = mps.to_amplitudes();
        assert!(matches!(
            apply_loss(&mut mps, 1, Species::SpinlessFermion),
            Err(Error::Annihilated { site: 1, .. })
        ));
        assert_eq!(mps.to_amplitudes(), before);
    }

    #[test]
    fn dephasing_jump_projects() {
        let mut mps = product_mps(&[0, 1, 1]).unwrap();
        assert_eq!(apply_dephasing_jump(&mut mps, 2).unwrap(), 1.0);
        assert_eq!(mps.densities(), [0.0, 1.0, 1.0]);

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let psi = superposition(&[("10", h), ("01", h)], 2);
        let mut mps = SymmetricMps::from_amplitudes(&psi, 2).unwrap();
        let w = apply_dephasing_jump(&mut mps, 1).unwrap();
        assert!((w - 0.5).abs() < 1e-14);
        mps.normalize().unwrap();
        assert!(max_diff(&mps.to_amplitudes(), &superposition(&[("10", 1.0)], 2)) < 1e-14);
        assert!(apply_dephasing_jump(&mut product_mps(&[0, 1]).unwrap(), 1).is_err());
    }

    #[test]
    fn loss_matches_explicit_string_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for sites in 2..=8 {
            for particles in 1..=sites as u32 {
                let psi = random_state(sites, particles, &mut rng);
                let mps = SymmetricMps::from_amplitudes(&psi, sites).unwrap();
                for k in 1..=sites {
                    let dense_b = dense_loss(&psi, k - 1, false);
                    let dense_f = dense_loss(&psi, k - 1, true);
                    let weight: f64 = dense_f.iter().map(|a| a.norm_sqr()).sum();
                    let pre = mps.local_density(k).unwrap();
                    let mut b = mps.clone();
                    let mut f = mps.clone();
                    if weight < ANNIHILATION_THRESHOLD {
                        continue;
                    }
                    let wb = apply_loss(&mut b, k, Species::HardCoreBoson).unwrap();
                    let wf = apply_loss(&mut f, k, Species::SpinlessFermion).unwrap();
                    assert!((wf - weight).abs() < 1e-12 && (wb - weight).abs() < 1e-12);
                    assert!((wf - pre).abs() < 1e-12);
                    assert!(max_diff(&b.to_amplitudes(), &dense_b) < 1e-12);
                    assert!(max_diff(&f.to_amplitudes(), &dense_f) < 1e-12);
                    let (nb, nf) = (b.densities(), f.densities());
                    assert!(nb.iter().zip(&nf).all(|(x, y)| (x - y).abs() < 1e-10));
                    assert!(f.charges_consistent());
                }
            }
        }
    }

    #[test]
    fn string_signs_leave_densities_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let psi = random_state(6, 3, &mut rng);
        let mps = SymmetricMps::from_amplitudes(&psi, 6).unwrap();
        let before = mps.densities();
        for k in 1..=6 {
            let mut signed = mps.clone();
            apply_string(&mut signed, k).unwrap();
            let after = signed.densities();
            assert!(before.iter().zip(&after).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn dephasing_matches_dense_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let psi = random_state(6, 3, &mut rng);
        let mps = SymmetricMps::from_amplitudes(&psi, 6).unwrap();
        for k in 1..=6 {
            let mut projected: Vec<C64> = psi
                .iter()
                .enumerate()
                .map(|(x, &a)| if (x >> (k - 1)) & 1 == 1 { a } else { c(0.0) })
                .collect();
            let w: f64 = projected.iter().map(|a| a.norm_sqr()).sum();
            projected.iter_mut().for_each(|a| *a /= w.sqrt());
            let mut m = mps.clone();
            let weight = apply_dephasing_jump(&mut m, k).unwrap();
            m.normalize().unwrap();
            assert!((weight - w).abs() < 1e-12);
            let dense: Vec<f64> = (0..6)
                .map(|i| {
                    projected
                        .iter()
                        .enumerate()
                        .filter(|(x, _)| (x >> i) & 1 == 1)
                        .map(|(_, a)| a.norm_sqr())
                        .sum()
                })
                .collect();
            let got = m.densities();
            assert!(got.iter().zip(&dense).all(|(x, y)| (x - y).abs() < 1e-10));
        }
    }
}
