//! Command-line front end: configuration, dispatch and output files.

pub mod config;
pub mod output;
pub mod presets;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};

use crate::error::{Error, Result};
use crate::experiments::validation::{compare_with_oracle, oracle_suite, oracles_for, ValidationReport};
use crate::experiments::{run_deterministic, run_oracle, run_stochastic, StochasticOptions};
use crate::ed::MAX_LINDBLAD_SITES;

pub use config::{parse_config, parse_config_str, Mode, RunConfig};
use output::{indexed_csv, indexed_series_csv, number, scalar_csv, series_csv, Artifacts, KeyValues};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Deterministic,
    Stochastic,
    Oracle,
    Validate,
}

impl From<Command> for Mode {
    fn from(c: Command) -> Self {
        match c {
            Command::Deterministic => Mode::Deterministic,
            Command::Stochastic => Mode::Stochastic,
            Command::Oracle => Mode::Oracle,
            Command::Validate => Mode::Validate,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "latticeloss", version, about = "Hard-core bosons vs. spinless fermions under particle loss")]
pub struct Cli {
    pub mode: Command,
    /// Configuration file (TOML). Keys here override a `--figure` preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Base seed; overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "LATTICELOSS_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// Load a named figure preset.
    #[arg(long)]
    pub figure: Option<String>,
    /// Stochastic mode: compare against the master equation.
    #[arg(long)]
    pub validate: bool,
}

impl Cli {
    /// Resolve presets, the config file and command-line overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.figure {
            Some(name) => presets::preset(name)?,
            None => String::new(),
        };
        let text = match &self.config {
            Some(path) => {
                let file = std::fs::read_to_string(path)
                    .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
                config::merge_config_text(&base, &file)?
            }
            None if self.figure.is_some() => base,
            None => return Err(Error::config("--config", "give a configuration file or --figure")),
        };
        let mut config = parse_config_str(&text)?;
        config.mode = Some(self.mode.into());
        if let Some(seed) = self.seed {
            config.run.seed = seed;
        }
        Ok(config)
    }
}

/// What a command produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub files: Vec<String>,
    /// False when a validation check failed.
    pub passed: bool,
    pub report: Option<ValidationReport>,
}

/// Run one mode and write its files into `out_dir`.
pub fn run_command(mode: Mode, config: &RunConfig, out_dir: &Path, validate: bool) -> Result<RunOutcome> {
    let started = Instant::now();
    let mut config = config.clone();
    config.mode = Some(mode);
    let mut files = Artifacts::create(out_dir)?;
    let mut manifest = KeyValues::default();
    manifest.push("version", env!("CARGO_PKG_VERSION"));
    manifest.push("mode", mode);
    manifest.push("config", "config.toml");
    files.write("config.toml", &config.to_toml())?;

    let grid = config.grid()?;
    let steps_per_run = (config.run.t_max / config.numerics.dt).round() as u64;
    let mut summary = KeyValues::default();
    let mut report = None;
    match mode {
        Mode::Deterministic => {
            deterministic(&config, &grid, &mut files, &mut summary)?;
            manifest.push("steps", 2 * steps_per_run);
        }
        Mode::Stochastic => {
            let seeds = stochastic(&config, &grid, &mut files, &mut summary, validate, &mut report)?;
            manifest.push("base_seed", config.run.seed);
            manifest.push("seeds", seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","));
            let per_species = steps_per_run * seeds.len() as u64;
            manifest.push("steps", per_species * config.species.species().len() as u64);
        }
        Mode::Oracle => {
            oracle(&config, &grid, &mut files, &mut summary)?;
            manifest.push("steps", steps_per_run * config.species.species().len() as u64);
        }
        Mode::Validate => {
            let r = oracle_suite(&config.model, &config.numerics, &grid, config.run.trajectories, config.run.seed)?;
            files.write("report.txt", &format!("{r}\n"))?;
            summary.push("checks", r.checks.len());
            summary.push("failed", r.checks.iter().filter(|c| !c.passed).count());
            manifest.push("base_seed", config.run.seed);
            report = Some(r);
        }
    }
    let passed = report.as_ref().is_none_or(|r| r.passed());
    summary.push("passed", passed);
    files.write("summary.txt", &summary.render())?;
    manifest.push("wall_clock_seconds", format!("{:.3}", started.elapsed().as_secs_f64()));
    manifest.push("files", files.files().join(","));
    files.write("manifest.txt", &manifest.render())?;
    Ok(RunOutcome {
        files: files.files().to_vec(),
        passed,
        report,
    })
}

fn max_abs(rows: &[Vec<f64>]) -> f64 {
    rows.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
}

fn deterministic(config: &RunConfig, grid: &[f64], files: &mut Artifacts, summary: &mut KeyValues) -> Result<()> {
    if config.species != config::SpeciesSelection::Both {
        return Err(Error::config("model.species", "deterministic mode compares both species; use \"both\""));
    }
    let schedule = config.loss_schedule()?;
    let r = run_deterministic(&config.model, &schedule, &config.numerics, grid)?;
    files.write("delta_n.csv", &indexed_csv("site", &r.times, &r.delta_n, None))?;
    files.write("delta_s.csv", &indexed_csv("cut", &r.times, &r.delta_s, None))?;
    for (tag, p) in [("boson", &r.boson), ("fermion", &r.fermion)] {
        files.write(&format!("density_{tag}.csv"), &indexed_csv("site", &r.times, &p.densities, None))?;
        files.write(&format!("entropy_{tag}.csv"), &indexed_csv("cut", &r.times, &p.entropies, None))?;
    }
    summary.push("max_abs_delta_n", number(max_abs(&r.delta_n)));
    summary.push("max_abs_delta_s", number(max_abs(&r.delta_s)));
    Ok(())
}

fn stochastic(
    config: &RunConfig,
    grid: &[f64],
    files: &mut Artifacts,
    summary: &mut KeyValues,
    validate: bool,
    report: &mut Option<ValidationReport>,
) -> Result<Vec<u64>> {
    if validate && config.sites() > MAX_LINDBLAD_SITES {
        return Err(Error::Capacity {
            what: "master equation",
            sites: config.sites(),
            max: MAX_LINDBLAD_SITES,
        });
    }
    let options = StochasticOptions {
        species: config.species.species(),
        trajectories: config.run.trajectories,
        base_seed: config.run.seed,
        with_entropy: config.run.entropy,
        block_window: (config.run.block_window > 0).then_some(config.run.block_window),
    };
    let result = run_stochastic(&config.model, &config.numerics, grid, &options)?;
    for s in &result.series {
        let tag = s.species.tag();
        for (stem, series) in s.scalars() {
            files.write(&format!("{stem}_{tag}.csv"), &series_csv(series))?;
        }
        files.write(&format!("density_{tag}.csv"), &indexed_series_csv("site", &s.densities))?;
        if !s.entropies.is_empty() {
            files.write(&format!("entropy_{tag}.csv"), &indexed_series_csv("cut", &s.entropies))?;
        }
        summary.push(format!("jumps_{tag}"), s.jumps);
        if let Some(last) = s.total.mean.last() {
            summary.push(format!("final_total_{tag}"), number(*last));
        }
    }
    if validate {
        let t_max = grid.last().copied().unwrap_or(0.0);
        let oracles = oracles_for(&config.model, &options.species, &config.numerics, t_max)?;
        let mut r = ValidationReport::default();
        compare_with_oracle(&result, &oracles, grid, &mut r);
        files.write("report.txt", &format!("{r}\n"))?;
        *report = Some(r);
    }
    Ok(result.seeds)
}

fn oracle(config: &RunConfig, grid: &[f64], files: &mut Artifacts, summary: &mut KeyValues) -> Result<()> {
    if config.sites() > MAX_LINDBLAD_SITES {
        return Err(Error::Capacity {
            what: "master equation",
            sites: config.sites(),
            max: MAX_LINDBLAD_SITES,
        });
    }
    let t_max = grid.last().copied().unwrap_or(0.0);
    for species in config.species.species() {
        let o = run_oracle(&config.model, species, config.numerics.dt, t_max, 1)?;
        let tag = species.tag();
        let zeros = vec![0.0; grid.len()];
        let scalars = [
            ("middle_density", o.middle_density()),
            ("total_number", o.total.clone()),
            ("fluctuations", o.fluctuations.clone()),
            ("imbalance", o.imbalance.clone()),
        ];
        for (stem, values) in scalars {
            files.write(&format!("{stem}_{tag}.csv"), &scalar_csv(grid, &o.at(grid, &values), &zeros))?;
        }
        let m = config.sites();
        let densities: Vec<Vec<f64>> = {
            let per_site: Vec<Vec<f64>> = (0..m)
                .map(|i| o.at(grid, &o.densities.iter().map(|d| d[i]).collect::<Vec<_>>()))
                .collect();
            (0..grid.len()).map(|k| per_site.iter().map(|s| s[k]).collect()).collect()
        };
        files.write(&format!("density_{tag}.csv"), &indexed_csv("site", grid, &densities, None))?;
        if let Some(last) = o.total.last() {
            summary.push(format!("final_total_{tag}"), number(*last));
        }
    }
    Ok(())
}

/// Entry point for the binary. Returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let run = || -> Result<RunOutcome> {
        let config = cli.resolve()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build()
            .map_err(|e| Error::config("--threads", e.to_string()))?;
        pool.install(|| run_command(cli.mode.into(), &config, &cli.out, cli.validate))
    };
    match run() {
        Ok(outcome) => {
            if let Some(r) = &outcome.report {
                println!("{r}");
            }
            println!("wrote {} files to {}", outcome.files.len(), cli.out.display());
            if outcome.passed {
                0
            } else {
                eprintln!("validation failed");
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
