//! Dissipative protocol: trajectory ensembles for both species with shared
//! seeds, and the matching density-matrix series from the dense oracle.

use crate::ed::{dense_hamiltonian, dense_jump_operators, integrate_master_equation_with, DensityMatrix};
use crate::error::{Error, Result};
use crate::experiments::observables::{imbalance, time_block_imbalance, total_fluctuations};
use crate::model::{build_initial_state, ModelSpec, Species};
use crate::mps::NumericsSpec;
use crate::trajectory::{run_ensemble, trajectory_seeds, EnsembleAccumulator, ObservableSeries, TrajectorySolver};

/// Named scalar series of one species.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeciesSeries {
    pub species: Species,
    /// `⟨n_{M/2}⟩`
    pub middle_density: ObservableSeries,
    pub total: ObservableSeries,
    /// `Σ_i σ_{n_i} / M`
    pub fluctuations: ObservableSeries,
    pub imbalance: ObservableSeries,
    /// Sliding mean of `|I|`, indexed by window start. Present when a window
    /// was requested and fits in the grid.
    pub block_imbalance: Option<ObservableSeries>,
    /// Per-site densities.
    pub densities: Vec<ObservableSeries>,
    /// Per-cut entropies, when recorded.
    pub entropies: Vec<ObservableSeries>,
    pub jumps: usize,
}

impl SpeciesSeries {
    /// Every scalar series with its file stem.
    pub fn scalars(&self) -> Vec<(&'static str, &ObservableSeries)> {
        let mut out = vec![
            ("middle_density", &self.middle_density),
            ("total_number", &self.total),
            ("fluctuations", &self.fluctuations),
            ("imbalance", &self.imbalance),
        ];
        if let Some(b) = &self.block_imbalance {
            out.push(("block_imbalance", b));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StochasticRunResult {
    pub seeds: Vec<u64>,
    pub series: Vec<SpeciesSeries>,
}

impl StochasticRunResult {
    pub fn get(&self, species: Species) -> Option<&SpeciesSeries> {
        self.series.iter().find(|s| s.species == species)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StochasticOptions {
    pub species: Vec<Species>,
    pub trajectories: usize,
    pub base_seed: u64,
    pub with_entropy: bool,
    /// Samples per window of the block-averaged imbalance.
    pub block_window: Option<usize>,
}

/// Sliding mean of `|I|` with the SEM taken as the mean SEM over the window.
pub fn block_average(series: &ObservableSeries, window: usize) -> Result<ObservableSeries> {
    let mean = time_block_imbalance(&series.mean, window)?;
    let sem = time_block_imbalance(&series.sem, window)?;
    Ok(ObservableSeries {
        times: series.times[..mean.len()].to_vec(),
        mean,
        sem,
        n_traj: series.n_traj,
    })
}

fn summarize(species: Species, acc: &EnsembleAccumulator, window: Option<usize>) -> Result<SpeciesSeries> {
    let m = acc.sites();
    let imbalance = acc.imbalance();
    let block_imbalance = match window {
        Some(w) if w <= imbalance.mean.len() => Some(block_average(&imbalance, w)?),
        _ => None,
    };
    Ok(SpeciesSeries {
        species,
        middle_density: acc.site_density((m / 2).max(1))?,
        total: acc.total(),
        fluctuations: acc.fluctuations(),
        imbalance,
        block_imbalance,
        densities: (1..=m).map(|i| acc.site_density(i)).collect::<Result<_>>()?,
        entropies: (1..m).filter_map(|c| acc.entropy(c)).collect(),
        jumps: acc.jump_count(),
    })
}

/// Run `trajectories` trajectories per species with the same seed list, so
/// that species differences are not masked by sampling noise.
pub fn run_stochastic(
    model: &ModelSpec,
    numerics: &NumericsSpec,
    grid: &[f64],
    options: &StochasticOptions,
) -> Result<StochasticRunResult> {
    if options.trajectories < 2 {
        return Err(Error::invalid("need at least two trajectories"));
    }
    let seeds = trajectory_seeds(options.base_seed, options.trajectories);
    let run = |species| -> Result<SpeciesSeries> {
        let solver = TrajectorySolver::new(model, species, numerics)?;
        let acc = run_ensemble(&solver, grid, &seeds, options.with_entropy)?;
        summarize(species, &acc, options.block_window)
    };
    let series = options.species.iter().map(|&s| run(s)).collect::<Result<_>>()?;
    Ok(StochasticRunResult { seeds, series })
}

/// Density-matrix series on the dt grid.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSeries {
    pub species: Species,
    pub times: Vec<f64>,
    /// `[time][site]`
    pub densities: Vec<Vec<f64>>,
    pub total: Vec<f64>,
    pub imbalance: Vec<f64>,
    pub fluctuations: Vec<f64>,
}

impl OracleSeries {
    pub fn middle_density(&self) -> Vec<f64> {
        let m = self.densities.first().map_or(0, |d| d.len());
        self.densities.iter().map(|d| d[(m / 2).max(1) - 1]).collect()
    }

    /// Values at the step nearest to each of `grid`.
    pub fn at(&self, grid: &[f64], values: &[f64]) -> Vec<f64> {
        let dt = if self.times.len() > 1 {
            self.times[1] - self.times[0]
        } else {
            1.0
        };
        grid.iter()
            .map(|t| values[((t / dt).round() as usize).min(values.len() - 1)])
            .collect()
    }
}

/// Integrate the master equation for one species, recording every `stride`
/// steps of size `dt`.
pub fn run_oracle(model: &ModelSpec, species: Species, dt: f64, t_max: f64, stride: usize) -> Result<OracleSeries> {
    model.validate()?;
    let h = dense_hamiltonian(&model.hamiltonian)?;
    let jumps = dense_jump_operators(&model.dissipation, species)?;
    let rho0 = DensityMatrix::fock(&build_initial_state(&model.initial, model.sites())?)?;
    let stride = stride.max(1);
    let mut out = OracleSeries {
        species,
        times: Vec::new(),
        densities: Vec::new(),
        total: Vec::new(),
        imbalance: Vec::new(),
        fluctuations: Vec::new(),
    };
    integrate_master_equation_with(&rho0, &h, &jumps, t_max, dt, |step, t, rho| {
        if step % stride != 0 {
            return;
        }
        let n = rho.densities();
        out.times.push(t);
        out.total.push(n.iter().sum());
        out.imbalance.push(imbalance(&n));
        out.fluctuations.push(total_fluctuations(&n));
        out.densities.push(n);
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DissipationSpec, HamiltonianSpec, InitialStatePattern};
    use crate::trajectory::{snapshot_grid, GridKind};

    fn model(sites: usize, loss: f64) -> ModelSpec {
        ModelSpec {
            hamiltonian: HamiltonianSpec::hopping_only(sites, 1.0),
            dissipation: DissipationSpec::uniform(sites, loss, 0.0),
            initial: InitialStatePattern::CdwOdd,
        }
    }

    fn options(n: usize) -> StochasticOptions {
        StochasticOptions {
            species: Species::BOTH.to_vec(),
            trajectories: n,
            base_seed: 3,
            with_entropy: false,
            block_window: Some(3),
        }
    }

    #[test]
    fn closed_system_species_are_identical() {
        let numerics = NumericsSpec { dt: 0.01, ..NumericsSpec::default() };
        let grid = snapshot_grid(GridKind::Regular, 1.0, 6, 0).unwrap();
        let r = run_stochastic(&model(6, 0.0), &numerics, &grid, &options(4)).unwrap();
        let (b, f) = (r.get(Species::HardCoreBoson).unwrap(), r.get(Species::SpinlessFermion).unwrap());
        assert_eq!(b.imbalance.mean, f.imbalance.mean);
        assert_eq!(b.densities, f.densities);
        assert!(b.imbalance.sem.iter().all(|&s| s == 0.0));
        assert_eq!(r.seeds, [3, 4, 5, 6]);
        assert_eq!(b.block_imbalance.as_ref().unwrap().mean.len(), 4);
    }

    #[test]
    fn oracle_number_decays_and_imbalance_is_bounded() {
        let o = run_oracle(&model(6, 0.2), Species::SpinlessFermion, 0.01, 3.0, 10).unwrap();
        assert_eq!(o.times.len(), 31);
        assert!(o.total.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        for (t, n) in o.times.iter().zip(&o.total) {
            assert!((n - 3.0 * (-0.2 * t).exp()).abs() < 1e-8);
        }
        assert!(o.imbalance.iter().all(|i| i.abs() <= 1.0));
        assert_eq!(o.at(&[0.0, 1.0], &o.total)[1], o.total[10]);
    }

    #[test]
    fn block_average_of_constant_series() {
        let s = ObservableSeries { times: vec![0.0, 1.0, 2.0], mean: vec![-0.5; 3], sem: vec![0.1; 3], n_traj: 5 };
        let b = block_average(&s, 2).unwrap();
        assert_eq!(b.mean, [0.5, 0.5]);
        assert_eq!(b.times, [0.0, 1.0]);
        assert!(block_average(&s, 4).is_err());
    }
}
