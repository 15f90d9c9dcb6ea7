//! Run configuration: a TOML file of `key = value` pairs in sections.
//!
//! ```toml
//! mode = "stochastic"
//!
//! [model]
//! sites = 8
//! species = "both"
//! initial = "cdw-odd"
//!
//! [dissipation]
//! gamma_loss = 0.05
//!
//! [run]
//! t_max = 20.0
//! trajectories = 200
//! ```
//!
//! Every key is optional except `model.sites`. Unknown keys are rejected and
//! every error names the offending key path.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::model::{
    DissipationSpec, HamiltonianSpec, InitialStatePattern, LossEvent, LossSchedule, ModelSpec,
    Species,
};
use crate::mps::{NumericsSpec, TrotterOrder};
use crate::trajectory::{snapshot_grid, GridKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Deterministic,
    Stochastic,
    Oracle,
    Validate,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(Self::Deterministic),
            "stochastic" => Ok(Self::Stochastic),
            "oracle" => Ok(Self::Oracle),
            "validate" => Ok(Self::Validate),
            other => Err(Error::config("mode", format!("unknown mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Deterministic => "deterministic",
            Self::Stochastic => "stochastic",
            Self::Oracle => "oracle",
            Self::Validate => "validate",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpeciesSelection {
    Both,
    Boson,
    Fermion,
}

impl SpeciesSelection {
    pub fn species(self) -> Vec<Species> {
        match self {
            Self::Both => Species::BOTH.to_vec(),
            Self::Boson => vec![Species::HardCoreBoson],
            Self::Fermion => vec![Species::SpinlessFermion],
        }
    }
}

impl FromStr for SpeciesSelection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "both" => Ok(Self::Both),
            "boson" => Ok(Self::Boson),
            "fermion" => Ok(Self::Fermion),
            other => Err(format!("expected both, boson or fermion, got `{other}`")),
        }
    }
}

impl std::fmt::Display for SpeciesSelection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Both => "both",
            Self::Boson => "boson",
            Self::Fermion => "fermion",
        })
    }
}

/// Sample-time layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridChoice {
    Regular,
    Random,
    /// Every time step.
    EveryStep,
}

impl FromStr for GridChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "regular" => Ok(Self::Regular),
            "random" => Ok(Self::Random),
            "every-step" => Ok(Self::EveryStep),
            other => Err(format!("expected regular, random or every-step, got `{other}`")),
        }
    }
}

impl std::fmt::Display for GridChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Regular => "regular",
            Self::Random => "random",
            Self::EveryStep => "every-step",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleConfig {
    /// Explicit `(time, site)` losses. When empty, `tau0`/`delta` apply.
    pub events: Vec<(f64, usize)>,
    /// Time of the second loss; `None` means a single loss at `t = 0`.
    pub tau0: Option<f64>,
    pub delta: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub t_max: f64,
    pub samples: usize,
    pub grid: GridChoice,
    pub grid_seed: u64,
    pub trajectories: usize,
    pub seed: u64,
    pub entropy: bool,
    /// Samples per window of the block-averaged imbalance; 0 disables it.
    pub block_window: usize,
}

/// Fully resolved configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub species: SpeciesSelection,
    pub model: ModelSpec,
    pub numerics: NumericsSpec,
    pub schedule: ScheduleConfig,
    pub run: RunSettings,
}

impl RunConfig {
    pub fn sites(&self) -> usize {
        self.model.sites()
    }

    pub fn loss_schedule(&self) -> Result<LossSchedule> {
        let m = self.sites();
        if !self.schedule.events.is_empty() {
            let events = self
                .schedule
                .events
                .iter()
                .map(|&(time, site)| LossEvent { time, site })
                .collect();
            return LossSchedule::new(events, m)
                .map_err(|e| Error::config("schedule.events", e.to_string()));
        }
        match self.schedule.tau0 {
            None => LossSchedule::single(m),
            Some(tau0) => LossSchedule::two_loss(m, tau0, self.schedule.delta as isize)
                .map_err(|e| Error::config("schedule.delta", e.to_string())),
        }
    }

    /// Sample times for the run.
    pub fn grid(&self) -> Result<Vec<f64>> {
        let r = &self.run;
        match r.grid {
            GridChoice::Regular => snapshot_grid(GridKind::Regular, r.t_max, r.samples, r.grid_seed),
            GridChoice::Random => snapshot_grid(GridKind::Random, r.t_max, r.samples, r.grid_seed),
            GridChoice::EveryStep => {
                let steps = (r.t_max / self.numerics.dt).round() as usize;
                Ok((0..=steps).map(|k| k as f64 * self.numerics.dt).collect())
            }
        }
    }

    /// Resolved configuration as TOML; parsing it back gives `self`.
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        let m = &self.model;
        if let Some(mode) = self.mode {
            let _ = writeln!(s, "mode = \"{mode}\"");
        }
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "sites = {}", m.sites());
        let _ = writeln!(s, "species = \"{}\"", self.species);
        let _ = writeln!(s, "hopping = {}", float(m.hamiltonian.hopping));
        let _ = writeln!(s, "interaction = {}", float(m.hamiltonian.interaction));
        let _ = writeln!(s, "potential = {}", floats(&m.hamiltonian.potential));
        let _ = writeln!(s, "initial = \"{}\"", m.initial);
        let _ = writeln!(s, "\n[dissipation]");
        let _ = writeln!(s, "gamma_loss = {}", floats(&m.dissipation.loss));
        let _ = writeln!(s, "gamma_dephasing = {}", floats(&m.dissipation.dephasing));
        let n = &self.numerics;
        let _ = writeln!(s, "\n[numerics]");
        let _ = writeln!(s, "dt = {}", float(n.dt));
        let _ = writeln!(s, "max_bond = {}", n.max_bond);
        let _ = writeln!(s, "trunc_tol = {}", float(n.trunc_tol));
        let order = match n.trotter_order {
            TrotterOrder::First => 1,
            TrotterOrder::Second => 2,
        };
        let _ = writeln!(s, "trotter_order = {order}");
        let _ = writeln!(s, "\n[schedule]");
        if let Some(t) = self.schedule.tau0 {
            let _ = writeln!(s, "tau0 = {}", float(t));
        }
        let _ = writeln!(s, "delta = {}", self.schedule.delta);
        if !self.schedule.events.is_empty() {
            let ev: Vec<String> = self
                .schedule
                .events
                .iter()
                .map(|(t, site)| format!("[{}, {site}]", float(*t)))
                .collect();
            let _ = writeln!(s, "events = [{}]", ev.join(", "));
        }
        let r = &self.run;
        let _ = writeln!(s, "\n[run]");
        let _ = writeln!(s, "t_max = {}", float(r.t_max));
        let _ = writeln!(s, "samples = {}", r.samples);
        let _ = writeln!(s, "grid = \"{}\"", r.grid);
        let _ = writeln!(s, "grid_seed = {}", r.grid_seed);
        let _ = writeln!(s, "trajectories = {}", r.trajectories);
        let _ = writeln!(s, "seed = {}", r.seed);
        let _ = writeln!(s, "entropy = {}", r.entropy);
        let _ = writeln!(s, "block_window = {}", r.block_window);
        s
    }
}

/// Shortest round-trip representation, always with a decimal point or
/// exponent so TOML reads it back as a float.
fn float(x: f64) -> String {
    let s = format!("{x:?}");
    if s.contains(['.', 'e', 'n', 'i']) {
        s
    } else {
        format!("{s}.0")
    }
}

fn floats(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| float(*x)).collect::<Vec<_>>().join(", "))
}

/// Walks one table, remembering which keys were read.
struct Section<'a> {
    path: String,
    table: Option<&'a Table>,
    seen: BTreeSet<String>,
}

impl<'a> Section<'a> {
    fn new(path: &str, table: Option<&'a Table>) -> Self {
        Self {
            path: path.to_string(),
            table,
            seen: BTreeSet::new(),
        }
    }

    fn key(&self, k: &str) -> String {
        if self.path.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.path)
        }
    }

    fn get(&mut self, k: &str) -> Option<&'a Value> {
        self.seen.insert(k.to_string());
        self.table.and_then(|t| t.get(k))
    }

    fn type_error(&self, k: &str, expected: &str, v: &Value) -> Error {
        Error::config(self.key(k), format!("expected {expected}, found {}", v.type_str()))
    }

    fn float_value(&self, k: &str, v: &Value) -> Result<f64> {
        match v {
            Value::Float(x) => Ok(*x),
            Value::Integer(i) => Ok(*i as f64),
            other => Err(self.type_error(k, "a number", other)),
        }
    }

    fn float(&mut self, k: &str) -> Result<Option<f64>> {
        self.get(k).map(|v| self.float_value(k, v)).transpose()
    }

    fn int(&mut self, k: &str) -> Result<Option<i64>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Integer(i)) => Ok(Some(*i)),
            Some(other) => Err(self.type_error(k, "an integer", other)),
        }
    }

    fn count(&mut self, k: &str) -> Result<Option<usize>> {
        match self.int(k)? {
            Some(i) if i < 0 => Err(Error::config(self.key(k), "must be >= 0")),
            other => Ok(other.map(|i| i as usize)),
        }
    }

    fn seed(&mut self, k: &str) -> Result<Option<u64>> {
        match self.int(k)? {
            Some(i) if i < 0 => Err(Error::config(self.key(k), "must be >= 0")),
            other => Ok(other.map(|i| i as u64)),
        }
    }

    fn boolean(&mut self, k: &str) -> Result<Option<bool>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(other) => Err(self.type_error(k, "a boolean", other)),
        }
    }

    fn string(&mut self, k: &str) -> Result<Option<&'a str>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.as_str())),
            Some(other) => Err(self.type_error(k, "a string", other)),
        }
    }

    fn parsed<T: FromStr>(&mut self, k: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.string(k)?
            .map(|s| s.parse::<T>().map_err(|e| Error::config(self.key(k), e.to_string())))
            .transpose()
    }

    /// A number (uniform value) or a list with one number per site.
    fn per_site(&mut self, k: &str, sites: usize) -> Result<Option<Vec<f64>>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Array(items)) => {
                if items.len() != sites {
                    return Err(Error::config(
                        self.key(k),
                        format!("expected {sites} entries, found {}", items.len()),
                    ));
                }
                items.iter().map(|v| self.float_value(k, v)).collect::<Result<_>>().map(Some)
            }
            Some(v) => Ok(Some(vec![self.float_value(k, v)?; sites])),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some(t) = self.table {
            for k in t.keys() {
                if !self.seen.contains(k) {
                    return Err(Error::config(self.key(k), "unknown key"));
                }
            }
        }
        Ok(())
    }
}

fn subtable<'a>(root: &'a Table, name: &str) -> Result<Option<&'a Table>> {
    match root.get(name) {
        None => Ok(None),
        Some(Value::Table(t)) => Ok(Some(t)),
        Some(other) => Err(Error::config(name, format!("expected a section, found {}", other.type_str()))),
    }
}

fn non_negative(key: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
        return Err(Error::config(key, "rates must be finite and >= 0"));
    }
    Ok(())
}

/// Parse configuration text.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let root: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
    const SECTIONS: [&str; 5] = ["model", "dissipation", "numerics", "schedule", "run"];
    for k in root.keys() {
        if k != "mode" && !SECTIONS.contains(&k.as_str()) {
            return Err(Error::config(k.as_str(), "unknown key"));
        }
    }
    let mut top = Section::new("", Some(&root));
    let mode = top.parsed::<Mode>("mode")?;

    let mut model = Section::new("model", subtable(&root, "model")?);
    let sites = model
        .count("sites")?
        .ok_or_else(|| Error::config("model.sites", "required"))?;
    if sites < 2 {
        return Err(Error::config("model.sites", "need at least 2 sites"));
    }
    let species = model.parsed::<SpeciesSelection>("species")?.unwrap_or(SpeciesSelection::Both);
    let hopping = model.float("hopping")?.unwrap_or(1.0);
    let interaction = model.float("interaction")?.unwrap_or(0.0);
    let potential = model.per_site("potential", sites)?.unwrap_or_else(|| vec![0.0; sites]);
    let initial = model
        .parsed::<InitialStatePattern>("initial")?
        .unwrap_or(InitialStatePattern::UnitFilling);
    if let InitialStatePattern::Custom(occ) = &initial {
        if occ.len() != sites {
            return Err(Error::config("model.initial", format!("pattern has {} sites, expected {sites}", occ.len())));
        }
    }
    model.finish()?;

    let mut diss = Section::new("dissipation", subtable(&root, "dissipation")?);
    let loss = diss.per_site("gamma_loss", sites)?.unwrap_or_else(|| vec![0.0; sites]);
    let dephasing = diss.per_site("gamma_dephasing", sites)?.unwrap_or_else(|| vec![0.0; sites]);
    non_negative("dissipation.gamma_loss", &loss)?;
    non_negative("dissipation.gamma_dephasing", &dephasing)?;
    diss.finish()?;

    let defaults = NumericsSpec::default();
    let mut num = Section::new("numerics", subtable(&root, "numerics")?);
    let dt = num.float("dt")?.unwrap_or(defaults.dt);
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config("numerics.dt", "must be > 0"));
    }
    let max_bond = num.count("max_bond")?.unwrap_or(defaults.max_bond);
    if max_bond < 1 {
        return Err(Error::config("numerics.max_bond", "must be >= 1"));
    }
    let trunc_tol = num.float("trunc_tol")?.unwrap_or(defaults.trunc_tol);
    if !(trunc_tol >= 0.0) {
        return Err(Error::config("numerics.trunc_tol", "must be >= 0"));
    }
    let trotter_order = match num.int("trotter_order")? {
        None => defaults.trotter_order,
        Some(1) => TrotterOrder::First,
        Some(2) => TrotterOrder::Second,
        Some(_) => return Err(Error::config("numerics.trotter_order", "must be 1 or 2")),
    };
    num.finish()?;

    let mut sched = Section::new("schedule", subtable(&root, "schedule")?);
    let tau0 = sched.float("tau0")?;
    if tau0.is_some_and(|t| !(t >= 0.0)) {
        return Err(Error::config("schedule.tau0", "must be >= 0"));
    }
    let delta = sched.int("delta")?.unwrap_or(0);
    let events = match sched.get("events") {
        None => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|item| match item.as_array().map(|a| a.as_slice()) {
                Some([t, Value::Integer(site)]) if *site >= 1 => {
                    Ok((sched.float_value("events", t)?, *site as usize))
                }
                _ => Err(Error::config("schedule.events", "entries must be [time, site]")),
            })
            .collect::<Result<_>>()?,
        Some(other) => return Err(sched.type_error("events", "an array", other)),
    };
    sched.finish()?;

    let mut run = Section::new("run", subtable(&root, "run")?);
    let settings = RunSettings {
        t_max: run.float("t_max")?.unwrap_or(4.0),
        samples: run.count("samples")?.unwrap_or(41),
        grid: run.parsed::<GridChoice>("grid")?.unwrap_or(GridChoice::Regular),
        grid_seed: run.seed("grid_seed")?.unwrap_or(0),
        trajectories: run.count("trajectories")?.unwrap_or(100),
        seed: run.seed("seed")?.unwrap_or(1),
        entropy: run.boolean("entropy")?.unwrap_or(false),
        block_window: run.count("block_window")?.unwrap_or(300),
    };
    run.finish()?;
    if !(settings.t_max >= 0.0 && settings.t_max.is_finite()) {
        return Err(Error::config("run.t_max", "must be finite and >= 0"));
    }
    if settings.samples < 1 {
        return Err(Error::config("run.samples", "must be >= 1"));
    }
    if settings.trajectories < 2 {
        return Err(Error::config("run.trajectories", "must be >= 2"));
    }

    let config = RunConfig {
        mode,
        species,
        model: ModelSpec {
            hamiltonian: HamiltonianSpec {
                sites,
                hopping,
                interaction,
                potential,
            },
            dissipation: DissipationSpec { loss, dephasing },
            initial,
        },
        numerics: NumericsSpec {
            max_bond,
            dt,
            trunc_tol,
            trotter_order,
        },
        schedule: ScheduleConfig { events, tau0, delta },
        run: settings,
    };
    config
        .model
        .validate()
        .map_err(|e| Error::config("model", e.to_string()))?;
    Ok(config)
}

/// Read and parse a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

/// Overlay `overrides` on top of `base` (both TOML text); keys in
/// `overrides` win.
pub fn merge_config_text(base: &str, overrides: &str) -> Result<String> {
    let parse = |t: &str| -> Result<Table> {
        t.parse()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))
    };
    let mut merged = parse(base)?;
    for (k, v) in parse(overrides)? {
        match (merged.get_mut(&k), v) {
            (Some(Value::Table(dst)), Value::Table(src)) => dst.extend(src),
            (_, v) => {
                merged.insert(k, v);
            }
        }
    }
    Ok(merged.to_string())
}
