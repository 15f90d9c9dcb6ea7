//! Oracle-equivalence checks run by the `validate` command and by
//! `stochastic --validate`.

use std::fmt;

use crate::ed::{dense_hamiltonian, evolve_state_with, DenseState, MAX_LINDBLAD_SITES};
use crate::error::{Error, Result};
use crate::experiments::deterministic::run_deterministic;
use crate::experiments::stochastic::{run_oracle, run_stochastic, OracleSeries, StochasticOptions, StochasticRunResult};
use crate::model::{build_initial_state, DissipationSpec, InitialStatePattern, LossSchedule, ModelSpec, Species};
use crate::mps::NumericsSpec;
use crate::trajectory::{ObservableSeries, TrajectorySolver};

/// Largest lattice the suite accepts.
pub const MAX_VALIDATION_SITES: usize = 6;
pub const SEM_FACTOR: f64 = 3.0;
pub const REQUIRED_FRACTION: f64 = 0.95;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        write!(f, "{}", if self.passed() { "overall: PASS" } else { "overall: FAIL" })
    }
}

/// Fraction of grid points where `|mean - reference| <= k·sem`. A small
/// absolute floor covers points where every trajectory agrees exactly.
pub fn fraction_within(series: &ObservableSeries, reference: &[f64], k: f64) -> f64 {
    let hits = series
        .mean
        .iter()
        .zip(&series.sem)
        .zip(reference)
        .filter(|((m, s), r)| (*m - *r).abs() <= k * **s + 1e-9)
        .count();
    hits as f64 / reference.len().max(1) as f64
}

/// Compare every scalar ensemble series against the density-matrix result.
pub fn compare_with_oracle(
    result: &StochasticRunResult,
    oracles: &[OracleSeries],
    grid: &[f64],
    report: &mut ValidationReport,
) {
    for oracle in oracles {
        let Some(s) = result.get(oracle.species) else {
            continue;
        };
        let pairs = [
            ("middle_density", &s.middle_density, oracle.middle_density()),
            ("total_number", &s.total, oracle.total.clone()),
            ("imbalance", &s.imbalance, oracle.imbalance.clone()),
            ("fluctuations", &s.fluctuations, oracle.fluctuations.clone()),
        ];
        for (name, series, values) in pairs {
            let frac = fraction_within(series, &oracle.at(grid, &values), SEM_FACTOR);
            report.push(
                format!("{} {name} vs master equation", oracle.species.tag()),
                frac >= REQUIRED_FRACTION,
                format!("{:.1}% of {} times within {SEM_FACTOR} SEM", 100.0 * frac, grid.len()),
            );
        }
    }
}

/// Master-equation series on the trajectory time step for each species.
pub fn oracles_for(model: &ModelSpec, species: &[Species], numerics: &NumericsSpec, t_max: f64) -> Result<Vec<OracleSeries>> {
    if model.sites() > MAX_LINDBLAD_SITES {
        return Err(Error::Capacity {
            what: "master equation",
            sites: model.sites(),
            max: MAX_LINDBLAD_SITES,
        });
    }
    species
        .iter()
        .map(|&s| run_oracle(model, s, numerics.dt, t_max, 1))
        .collect()
}

/// The full suite on a small lattice.
pub fn oracle_suite(
    model: &ModelSpec,
    numerics: &NumericsSpec,
    grid: &[f64],
    trajectories: usize,
    base_seed: u64,
) -> Result<ValidationReport> {
    let m = model.sites();
    if m > MAX_VALIDATION_SITES {
        return Err(Error::Capacity {
            what: "validation suite",
            sites: m,
            max: MAX_VALIDATION_SITES,
        });
    }
    let mut report = ValidationReport::default();
    let t_max = grid.last().copied().unwrap_or(0.0);

    // Closed dynamics against the state vector, and species equivalence.
    let closed = ModelSpec {
        dissipation: DissipationSpec::closed(m),
        ..model.clone()
    };
    let fine = NumericsSpec { dt: 1e-3, ..*numerics };
    let h = dense_hamiltonian(&closed.hamiltonian)?;
    let psi0 = DenseState::fock(&build_initial_state(&closed.initial, m)?)?;
    let t_closed = t_max.min(2.0);
    let closed_grid = [0.0, t_closed / 2.0, t_closed];
    let mut exact = Vec::new();
    let stride = ((t_closed / 2.0) / fine.dt).round().max(1.0) as usize;
    evolve_state_with(&psi0, &h, t_closed, fine.dt, |step, _, psi| {
        if step % stride == 0 {
            exact.push(psi.densities());
        }
    })?;
    let mut records = Vec::new();
    for s in Species::BOTH {
        records.push(TrajectorySolver::new(&closed, s, &fine)?.run(&closed_grid, 0, false)?);
    }
    let err = records[0]
        .samples
        .iter()
        .zip(&exact)
        .flat_map(|(s, e)| s.densities.iter().zip(e).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    report.push("closed TEBD vs state vector", err < 1e-6, format!("max |Δ⟨n_i⟩| = {err:.2e}"));
    let species_gap = records[0]
        .samples
        .iter()
        .zip(&records[1].samples)
        .flat_map(|(a, b)| a.densities.iter().zip(&b.densities).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    report.push("closed boson = fermion", species_gap < 1e-10, format!("max gap = {species_gap:.2e}"));

    // Single loss from unit filling leaves the species indistinguishable.
    let unit = ModelSpec {
        initial: InitialStatePattern::UnitFilling,
        ..closed.clone()
    };
    let det = run_deterministic(&unit, &LossSchedule::single(m)?, &fine, &closed_grid)?;
    let null = (0..closed_grid.len()).map(|k| det.max_delta_n(k)).fold(0.0, f64::max);
    report.push("single-loss null", null < 1e-8, format!("max |Δn_i| = {null:.2e}"));

    // Unraveling against the master equation.
    if !model.dissipation.is_closed() {
        let options = StochasticOptions {
            species: Species::BOTH.to_vec(),
            trajectories,
            base_seed,
            with_entropy: false,
            block_window: None,
        };
        let result = run_stochastic(model, numerics, grid, &options)?;
        let oracles = oracles_for(model, &Species::BOTH, numerics, t_max)?;
        compare_with_oracle(&result, &oracles, grid, &mut report);
    }
    Ok(report)
}
