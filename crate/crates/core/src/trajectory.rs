//! Quantum-trajectory unraveling of the master equation and ensemble
//! statistics.
//!
//! Each step draws one uniform number `r` and takes one TEBD step under the
//! effective Hamiltonian. With per-channel weights `δp_m = γ_m ⟨n_m⟩ dt` a
//! jump follows if `r < Σ δp_m`, and the rescaled `r` then selects the
//! channel from the weights of the evolved state. The state is renormalized
//! after each operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experiments::observables::{imbalance, site_fluctuations};
use crate::jump::{apply_dephasing_jump, apply_loss};
use crate::model::{
    build_hamiltonian_terms, build_initial_state, build_jump_channels, ChannelKind, JumpChannel,
    LossSchedule, ModelSpec, Species,
};
use crate::mps::{tebd_step, BondGenerators, NumericsSpec, SymmetricMps, TrotterPropagator};

/// Upper bound on the total jump probability of one step.
pub const STEP_PROBABILITY_LIMIT: f64 = 0.1;

/// Trajectories per parallel task. Fixed so that the merge order, and with
/// it every floating-point sum, does not depend on the worker count.
pub const CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpRecord {
    pub time: f64,
    pub site: usize,
    pub kind: ChannelKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub time: f64,
    pub densities: Vec<f64>,
    pub total: f64,
    pub imbalance: f64,
    pub fluctuations: Vec<f64>,
    pub entropies: Option<Vec<f64>>,
}

impl Sample {
    pub fn measure(time: f64, state: &SymmetricMps, with_entropy: bool) -> Result<Self> {
        let densities = state.densities();
        Ok(Self {
            time,
            total: densities.iter().sum(),
            imbalance: imbalance(&densities),
            fluctuations: site_fluctuations(&densities),
            entropies: if with_entropy {
                Some(state.entanglement_profile()?)
            } else {
                None
            },
            densities,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub jumps: Vec<JumpRecord>,
    pub samples: Vec<Sample>,
}

impl TrajectoryRecord {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.time).collect()
    }
}

/// Everything needed to run trajectories of one species: gates of the
/// effective Hamiltonian, jump channels, and the initial Fock state.
#[derive(Clone, Debug)]
pub struct TrajectorySolver {
    species: Species,
    sites: usize,
    initial: Vec<u8>,
    channels: Vec<JumpChannel>,
    /// `Some(γ_loss + γ_deph)` when every site carries the same rates, so
    /// that `Σ δp_m = γ N dt` follows from the particle number alone.
    uniform_rate: Option<f64>,
    propagator: TrotterPropagator,
    dt: f64,
    schedule: Vec<(usize, usize)>,
}

impl TrajectorySolver {
    pub fn new(model: &ModelSpec, species: Species, numerics: &NumericsSpec) -> Result<Self> {
        model.validate()?;
        numerics.validate()?;
        let sites = model.sites();
        let terms = build_hamiltonian_terms(&model.hamiltonian)?;
        let diss = &model.dissipation;
        let decay: Vec<f64> = diss.loss.iter().zip(&diss.dephasing).map(|(a, b)| a + b).collect();
        let generators = BondGenerators::new(&terms, &decay)?;
        let uniform = |v: &[f64]| v.iter().all(|&g| g == v[0]);
        let uniform_rate = (uniform(&diss.loss) && uniform(&diss.dephasing)).then(|| decay[0]);
        Ok(Self {
            species,
            sites,
            initial: build_initial_state(&model.initial, sites)?,
            channels: build_jump_channels(diss)?,
            uniform_rate,
            propagator: TrotterPropagator::new(&generators, numerics)?,
            dt: numerics.dt,
            schedule: Vec::new(),
        })
    }

    /// Add deterministic losses, applied at the nearest step before sampling.
    pub fn with_schedule(mut self, schedule: &LossSchedule) -> Result<Self> {
        for e in schedule.events() {
            if e.site > self.sites {
                return Err(Error::SiteOutOfRange {
                    site: e.site,
                    sites: self.sites,
                });
            }
            self.schedule.push(((e.time / self.dt).round() as usize, e.site));
        }
        self.schedule.sort();
        Ok(self)
    }

    pub fn species(&self) -> Species {
        self.species
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn channels(&self) -> &[JumpChannel] {
        &self.channels
    }

    pub fn initial_state(&self) -> Result<SymmetricMps> {
        SymmetricMps::product(&self.initial)
    }

    /// Step index that a sample time snaps to.
    pub fn snap(&self, time: f64) -> usize {
        (time / self.dt).round() as usize
    }

    /// One first-order step. Returns the channel that fired, if any.
    pub fn effective_step<R: Rng>(
        &self,
        state: &mut SymmetricMps,
        rng: &mut R,
    ) -> Result<Option<(usize, ChannelKind)>> {
        if self.channels.is_empty() {
            tebd_step(state, &self.propagator)?;
            state.normalize()?;
            return Ok(None);
        }
        let total = match self.uniform_rate {
            Some(rate) => rate * state.particle_number() as f64 * self.dt,
            None => self.channel_weights(&state.densities()).sum(),
        };
        if total > STEP_PROBABILITY_LIMIT {
            return Err(Error::StepSizeGuard {
                total,
                limit: STEP_PROBABILITY_LIMIT,
            });
        }
        let r: f64 = rng.random();
        tebd_step(state, &self.propagator)?;
        state.normalize()?;
        if r >= total {
            return Ok(None);
        }
        // The jump lands at the end of the step, on the evolved state, so
        // jumped trajectories do not fall behind the clock.
        let n = state.densities();
        let weights: Vec<f64> = self.channel_weights(&n).collect();
        let target = r / total * weights.iter().sum::<f64>();
        let mut acc = 0.0;
        let mut chosen = None;
        for (ch, w) in self.channels.iter().zip(weights) {
            acc += w;
            if w > 0.0 {
                chosen = Some(ch);
                if target < acc {
                    break;
                }
            }
        }
        // Round-off can leave the target just above the sum; the last
        // channel with nonzero weight takes it.
        let ch = chosen.ok_or(Error::ZeroNorm(total))?;
        match ch.kind {
            ChannelKind::Loss => apply_loss(state, ch.site, self.species)?,
            ChannelKind::Dephasing => apply_dephasing_jump(state, ch.site)?,
        };
        state.normalize()?;
        Ok(Some((ch.site, ch.kind)))
    }

    fn channel_weights<'a>(&'a self, densities: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        self.channels
            .iter()
            .map(move |ch| ch.rate * densities[ch.site - 1].max(0.0) * self.dt)
    }

    /// Run one trajectory, sampling at `grid` (snapped to the step grid).
    pub fn run(&self, grid: &[f64], seed: u64, with_entropy: bool) -> Result<TrajectoryRecord> {
        self.run_with(grid, seed, with_entropy, |_| Ok(()))
    }

    /// As [`run`](Self::run), with `on_sample` called for each sample as it
    /// is taken.
    pub fn run_with<F>(
        &self,
        grid: &[f64],
        seed: u64,
        with_entropy: bool,
        mut on_sample: F,
    ) -> Result<TrajectoryRecord>
    where
        F: FnMut(&Sample) -> Result<()>,
    {
        check_grid(grid)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = self.initial_state()?;
        let steps: Vec<usize> = grid.iter().map(|&t| self.snap(t)).collect();
        let last = steps.last().copied().unwrap_or(0);
        let mut record = TrajectoryRecord {
            seed,
            jumps: Vec::new(),
            samples: Vec::with_capacity(grid.len()),
        };
        let mut next_sample = 0;
        let mut next_event = 0;
        for step in 0..=last {
            while next_event < self.schedule.len() && self.schedule[next_event].0 == step {
                let site = self.schedule[next_event].1;
                apply_loss(&mut state, site, self.species)?;
                state.normalize()?;
                record.jumps.push(JumpRecord {
                    time: step as f64 * self.dt,
                    site,
                    kind: ChannelKind::Loss,
                });
                next_event += 1;
            }
            while next_sample < grid.len() && steps[next_sample] == step {
                let sample = Sample::measure(grid[next_sample], &state, with_entropy)?;
                on_sample(&sample)?;
                record.samples.push(sample);
                next_sample += 1;
            }
            if step == last {
                break;
            }
            if let Some((site, kind)) = self.effective_step(&mut state, &mut rng)? {
                record.jumps.push(JumpRecord {
                    time: (step + 1) as f64 * self.dt,
                    site,
                    kind,
                });
            }
        }
        Ok(record)
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("sample grid is empty"));
    }
    if grid.iter().any(|t| !(*t >= 0.0 && t.is_finite())) || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("sample grid must be sorted, finite and >= 0"));
    }
    Ok(())
}

/// Convenience wrapper around [`TrajectorySolver`].
pub fn run_trajectory(
    model: &ModelSpec,
    species: Species,
    numerics: &NumericsSpec,
    grid: &[f64],
    seed: u64,
) -> Result<TrajectoryRecord> {
    TrajectorySolver::new(model, species, numerics)?.run(grid, seed, false)
}

/// Per-time mean and standard error of the mean.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservableSeries {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub sem: Vec<f64>,
    pub n_traj: usize,
}

/// Running sums for a scalar per-time observable.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarAccumulator {
    times: Vec<f64>,
    count: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl ScalarAccumulator {
    pub fn new(times: Vec<f64>) -> Self {
        let n = times.len();
        Self {
            times,
            count: 0,
            sum: vec![0.0; n],
            sum_sq: vec![0.0; n],
        }
    }

    pub fn push(&mut self, times: &[f64], values: &[f64]) -> Result<()> {
        if times != self.times.as_slice() || values.len() != times.len() {
            return Err(Error::GridMismatch);
        }
        for (k, &v) in values.iter().enumerate() {
            self.sum[k] += v;
            self.sum_sq[k] += v * v;
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.times != self.times {
            return Err(Error::GridMismatch);
        }
        self.count += other.count;
        for k in 0..self.sum.len() {
            self.sum[k] += other.sum[k];
            self.sum_sq[k] += other.sum_sq[k];
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn series(&self) -> ObservableSeries {
        let n = self.count as f64;
        let (mean, sem) = self
            .sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(&s, &q)| {
                let m = s / n;
                (m, (sample_variance(s, q, n) / n).sqrt())
            })
            .unzip();
        ObservableSeries {
            times: self.times.clone(),
            mean,
            sem,
            n_traj: self.count,
        }
    }
}

/// Unbiased sample variance from running sums, clamped at zero.
fn sample_variance(sum: f64, sum_sq: f64, n: f64) -> f64 {
    if n < 2.0 {
        return 0.0;
    }
    ((sum_sq - sum * sum / n) / (n - 1.0)).max(0.0)
}

/// Mean and SEM of a scalar selected from each sample.
pub fn ensemble_average<F>(records: &[TrajectoryRecord], select: F) -> Result<ObservableSeries>
where
    F: Fn(&Sample) -> f64,
{
    if records.len() < 2 {
        return Err(Error::invalid("ensemble average needs at least two records"));
    }
    let times = records[0].times();
    let mut acc = ScalarAccumulator::new(times.clone());
    for r in records {
        let values: Vec<f64> = r.samples.iter().map(&select).collect();
        acc.push(&r.times(), &values)?;
    }
    Ok(acc.series())
}

/// First and second moments of the site densities (and optionally the
/// entropies) at every sample time.
///
/// Nonlinear ensemble observables such as the imbalance are evaluated on the
/// ensemble-mean densities, which is what the density matrix gives, with a
/// delta-method standard error.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleAccumulator {
    times: Vec<f64>,
    sites: usize,
    count: usize,
    /// `[time][site]`
    sum: Vec<Vec<f64>>,
    /// `[time][i * M + j]`
    cross: Vec<Vec<f64>>,
    entropy: Option<Vec<ScalarAccumulator>>,
    jumps: usize,
}

impl EnsembleAccumulator {
    pub fn new(times: Vec<f64>, sites: usize, with_entropy: bool) -> Self {
        let n = times.len();
        Self {
            sites,
            count: 0,
            sum: vec![vec![0.0; sites]; n],
            cross: vec![vec![0.0; sites * sites]; n],
            entropy: with_entropy
                .then(|| vec![ScalarAccumulator::new(times.clone()); sites.saturating_sub(1)]),
            times,
            jumps: 0,
        }
    }

    pub fn push(&mut self, record: &TrajectoryRecord) -> Result<()> {
        if record.samples.len() != self.times.len()
            || record.samples.iter().zip(&self.times).any(|(s, t)| s.time != *t)
        {
            return Err(Error::GridMismatch);
        }
        let m = self.sites;
        for (k, s) in record.samples.iter().enumerate() {
            if s.densities.len() != m {
                return Err(Error::LengthMismatch {
                    left: s.densities.len(),
                    right: m,
                });
            }
            for i in 0..m {
                self.sum[k][i] += s.densities[i];
                for j in 0..m {
                    self.cross[k][i * m + j] += s.densities[i] * s.densities[j];
                }
            }
        }
        if let Some(acc) = &mut self.entropy {
            let times = record.times();
            for (cut, a) in acc.iter_mut().enumerate() {
                let values = record
                    .samples
                    .iter()
                    .map(|s| s.entropies.as_ref().map(|e| e[cut]))
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(|| Error::invalid("record has no entropies"))?;
                a.push(&times, &values)?;
            }
        }
        self.count += 1;
        self.jumps += record.jumps.len();
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.times != self.times || other.sites != self.sites {
            return Err(Error::GridMismatch);
        }
        self.count += other.count;
        self.jumps += other.jumps;
        for k in 0..self.times.len() {
            for (a, b) in self.sum[k].iter_mut().zip(&other.sum[k]) {
                *a += b;
            }
            for (a, b) in self.cross[k].iter_mut().zip(&other.cross[k]) {
                *a += b;
            }
        }
        match (&mut self.entropy, &other.entropy) {
            (Some(a), Some(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    x.merge(y)?;
                }
            }
            (None, None) => {}
            _ => return Err(Error::GridMismatch),
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    /// Total number of jumps recorded over the ensemble.
    pub fn jump_count(&self) -> usize {
        self.jumps
    }

    fn n(&self) -> f64 {
        self.count as f64
    }

    /// Ensemble-mean densities at time index `k`.
    pub fn mean_densities(&self, k: usize) -> Vec<f64> {
        self.sum[k].iter().map(|s| s / self.n()).collect()
    }

    /// Sample covariance `C_ij` of the densities at time index `k`.
    fn covariance(&self, k: usize) -> Vec<f64> {
        let (m, n) = (self.sites, self.n());
        let mut c = vec![0.0; m * m];
        if n < 2.0 {
            return c;
        }
        for i in 0..m {
            for j in 0..m {
                c[i * m + j] =
                    (self.cross[k][i * m + j] - self.sum[k][i] * self.sum[k][j] / n) / (n - 1.0);
            }
        }
        c
    }

    /// Mean and SEM of `f(n̄)` with gradient `grad(n̄)`.
    fn delta_method<F, G>(&self, f: F, grad: G) -> ObservableSeries
    where
        F: Fn(&[f64], &[f64]) -> f64,
        G: Fn(&[f64]) -> Vec<f64>,
    {
        let m = self.sites;
        let mut mean = Vec::with_capacity(self.times.len());
        let mut sem = Vec::with_capacity(self.times.len());
        for k in 0..self.times.len() {
            let nbar = self.mean_densities(k);
            let cov = self.covariance(k);
            let diag: Vec<f64> = (0..m).map(|i| cov[i * m + i]).collect();
            mean.push(f(&nbar, &diag));
            let g = grad(&nbar);
            let mut var = 0.0;
            for i in 0..m {
                for j in 0..m {
                    var += g[i] * cov[i * m + j] * g[j];
                }
            }
            sem.push((var.max(0.0) / self.n()).sqrt());
        }
        ObservableSeries {
            times: self.times.clone(),
            mean,
            sem,
            n_traj: self.count,
        }
    }

    /// Linear combination `Σ w_i n_i`; exact SEM.
    pub fn linear(&self, weights: &[f64]) -> ObservableSeries {
        let w = weights.to_vec();
        self.delta_method(
            |n, _| n.iter().zip(weights).map(|(a, b)| a * b).sum(),
            |_| w.clone(),
        )
    }

    /// `⟨n_site⟩` (1-based site).
    pub fn site_density(&self, site: usize) -> Result<ObservableSeries> {
        if site == 0 || site > self.sites {
            return Err(Error::SiteOutOfRange {
                site,
                sites: self.sites,
            });
        }
        let mut w = vec![0.0; self.sites];
        w[site - 1] = 1.0;
        Ok(self.linear(&w))
    }

    pub fn total(&self) -> ObservableSeries {
        self.linear(&vec![1.0; self.sites])
    }

    /// Imbalance of the ensemble-mean densities.
    pub fn imbalance(&self) -> ObservableSeries {
        let odd = |i: usize| i % 2 == 0;
        self.delta_method(
            |n, _| imbalance(n),
            |n| {
                let o: f64 = n.iter().enumerate().filter(|(i, _)| odd(*i)).map(|(_, v)| v).sum();
                let e: f64 = n.iter().enumerate().filter(|(i, _)| !odd(*i)).map(|(_, v)| v).sum();
                let s = o + e;
                if s.abs() < crate::experiments::observables::EMPTY_DENOMINATOR {
                    return vec![0.0; n.len()];
                }
                let (d_o, d_e) = (2.0 * e / (s * s), -2.0 * o / (s * s));
                (0..n.len()).map(|i| if odd(i) { d_o } else { d_e }).collect()
            },
        )
    }

    /// `Σ_i (⟨n_i⟩ - ⟨n_i⟩²) / M` of the ensemble-mean densities. The square
    /// is bias-corrected with the sample variance of each site density.
    pub fn fluctuations(&self) -> ObservableSeries {
        let m = self.sites as f64;
        let n = self.n();
        self.delta_method(
            |nbar, var| {
                nbar.iter()
                    .zip(var)
                    .map(|(a, v)| a - a * a + v / n)
                    .sum::<f64>()
                    / m
            },
            |nbar| nbar.iter().map(|a| (1.0 - 2.0 * a) / m).collect(),
        )
    }

    /// Mean entropy across `cut`, if entropies were recorded.
    pub fn entropy(&self, cut: usize) -> Option<ObservableSeries> {
        self.entropy
            .as_ref()
            .and_then(|e| e.get(cut.checked_sub(1)?))
            .map(|a| a.series())
    }
}

/// Run `seeds.len()` trajectories in parallel and merge in seed order.
///
/// The pool of the caller is used; wrap in `ThreadPool::install` to cap the
/// worker count.
pub fn run_ensemble(
    solver: &TrajectorySolver,
    grid: &[f64],
    seeds: &[u64],
    with_entropy: bool,
) -> Result<EnsembleAccumulator> {
    check_grid(grid)?;
    let times: Vec<f64> = grid.to_vec();
    let partial: Vec<Result<EnsembleAccumulator>> = seeds
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = EnsembleAccumulator::new(times.clone(), solver.sites(), with_entropy);
            for &seed in chunk {
                acc.push(&solver.run(grid, seed, with_entropy)?)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = EnsembleAccumulator::new(times, solver.sites(), with_entropy);
    for p in partial {
        total.merge(&p?)?;
    }
    Ok(total)
}

/// Seeds `base, base + 1, ...`.
pub fn trajectory_seeds(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base.wrapping_add(i)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridKind {
    Regular,
    Random,
}

impl std::str::FromStr for GridKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" => Ok(Self::Regular),
            "random" => Ok(Self::Random),
            other => Err(Error::invalid(format!("unknown grid kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for GridKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Regular => "regular",
            Self::Random => "random",
        })
    }
}

/// Sorted sample times in `[0, t_max]`. A regular grid includes both ends.
pub fn snapshot_grid(kind: GridKind, t_max: f64, count: usize, seed: u64) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::invalid("grid needs at least one time"));
    }
    if !(t_max >= 0.0 && t_max.is_finite()) {
        return Err(Error::invalid("t_max must be finite and >= 0"));
    }
    Ok(match kind {
        GridKind::Regular if count == 1 => vec![0.0],
        GridKind::Regular => (0..count)
            .map(|k| t_max * k as f64 / (count - 1) as f64)
            .collect(),
        GridKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * t_max).collect();
            t.sort_by(f64::total_cmp);
            t
        }
    })
}
