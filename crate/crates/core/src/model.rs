//! Physical system description shared by the MPS engine and the dense oracle.
//!
//! All site indices in this module are 1-based. Two-site operators act in the
//! basis `{|00⟩, |01⟩, |10⟩, |11⟩}` of the pair `(i, i+1)`, i.e. basis index
//! `2 n_i + n_{i+1}`; single-site operators act in `{|0⟩, |1⟩}`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix4};

use crate::error::{Error, Result};
use crate::C64;

/// Tight-binding chain with nearest-neighbour density interaction and a
/// site-resolved potential, open boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianSpec {
    pub sites: usize,
    pub hopping: f64,
    pub interaction: f64,
    pub potential: Vec<f64>,
}

impl HamiltonianSpec {
    /// Pure hopping chain with `ε_i = 0` and `U = 0`.
    pub fn hopping_only(sites: usize, hopping: f64) -> Self {
        Self {
            sites,
            hopping,
            interaction: 0.0,
            potential: vec![0.0; sites],
        }
    }

    pub fn with_interaction(mut self, interaction: f64) -> Self {
        self.interaction = interaction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites < 2 {
            return Err(Error::invalid(format!(
                "lattice needs at least 2 sites, got {}",
                self.sites
            )));
        }
        if self.potential.len() != self.sites {
            return Err(Error::invalid(format!(
                "potential has {} entries for {} sites",
                self.potential.len(),
                self.sites
            )));
        }
        let finite = self.hopping.is_finite()
            && self.interaction.is_finite()
            && self.potential.iter().all(|e| e.is_finite());
        if !finite {
            return Err(Error::invalid("non-finite Hamiltonian parameter"));
        }
        Ok(())
    }
}

/// Particle exchange statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Species {
    HardCoreBoson,
    SpinlessFermion,
}

impl Species {
    pub const BOTH: [Species; 2] = [Species::HardCoreBoson, Species::SpinlessFermion];

    /// Short tag used in file names.
    pub fn tag(self) -> &'static str {
        match self {
            Species::HardCoreBoson => "boson",
            Species::SpinlessFermion => "fermion",
        }
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Species::HardCoreBoson => "hard-core-boson",
            Species::SpinlessFermion => "spinless-fermion",
        })
    }
}

impl FromStr for Species {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boson" | "hard-core-boson" | "hcb" => Ok(Species::HardCoreBoson),
            "fermion" | "spinless-fermion" => Ok(Species::SpinlessFermion),
            other => Err(Error::invalid(format!("unknown species `{other}`"))),
        }
    }
}

/// Per-site loss and dephasing rates.
#[derive(Clone, Debug, PartialEq)]
pub struct DissipationSpec {
    pub loss: Vec<f64>,
    pub dephasing: Vec<f64>,
}

impl DissipationSpec {
    pub fn closed(sites: usize) -> Self {
        Self::uniform(sites, 0.0, 0.0)
    }

    pub fn uniform(sites: usize, loss: f64, dephasing: f64) -> Self {
        Self {
            loss: vec![loss; sites],
            dephasing: vec![dephasing; sites],
        }
    }

    pub fn validate(&self, sites: usize) -> Result<()> {
        for (name, rates) in [("loss", &self.loss), ("dephasing", &self.dephasing)] {
            if rates.len() != sites {
                return Err(Error::invalid(format!(
                    "{name} rates have {} entries for {sites} sites",
                    rates.len()
                )));
            }
            if let Some((i, r)) = rates
                .iter()
                .enumerate()
                .find(|(_, r)| !(r.is_finite() && **r >= 0.0))
            {
                return Err(Error::invalid(format!(
                    "{name} rate on site {} is {r}; rates must be >= 0",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn is_closed(&self) -> bool {
        self.loss.iter().chain(&self.dephasing).all(|&r| r == 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    Loss,
    Dephasing,
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelKind::Loss => "loss",
            ChannelKind::Dephasing => "dephasing",
        })
    }
}

/// One Lindblad channel: loss (`a_m` / `b_m`) or dephasing (`n_m`) on a site.
/// For both kinds `J†J = n_m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpChannel {
    pub kind: ChannelKind,
    pub site: usize,
    pub rate: f64,
}

/// Initial Fock configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InitialStatePattern {
    /// One particle per site.
    UnitFilling,
    /// Odd sites (1, 3, ...) occupied.
    CdwOdd,
    /// Even sites (2, 4, ...) occupied.
    CdwEven,
    Custom(Vec<u8>),
}

impl InitialStatePattern {
    pub fn occupations(&self, sites: usize) -> Result<Vec<u8>> {
        build_initial_state(self, sites)
    }
}

impl FromStr for InitialStatePattern {
    type Err = Error;

    /// Accepts a preset name or an explicit `0`/`1` string such as `0110`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit-filling" | "unit" => Ok(Self::UnitFilling),
            "cdw-odd" | "cdw" => Ok(Self::CdwOdd),
            "cdw-even" => Ok(Self::CdwEven),
            bits if !bits.is_empty() && bits.chars().all(|c| c == '0' || c == '1') => Ok(
                Self::Custom(bits.bytes().map(|b| b - b'0').collect()),
            ),
            other => Err(Error::invalid(format!("unknown initial state `{other}`"))),
        }
    }
}

impl fmt::Display for InitialStatePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnitFilling => f.write_str("unit-filling"),
            Self::CdwOdd => f.write_str("cdw-odd"),
            Self::CdwEven => f.write_str("cdw-even"),
            Self::Custom(occ) => occ.iter().try_for_each(|n| write!(f, "{n}")),
        }
    }
}

/// A loss applied at a fixed time on a fixed site.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossEvent {
    pub time: f64,
    pub site: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossSchedule {
    events: Vec<LossEvent>,
}

impl LossSchedule {
    pub fn new(events: Vec<LossEvent>, sites: usize) -> Result<Self> {
        for e in &events {
            if !(e.time.is_finite() && e.time >= 0.0) {
                return Err(Error::invalid(format!("loss time {} must be >= 0", e.time)));
            }
            if e.site == 0 || e.site > sites {
                return Err(Error::SiteOutOfRange {
                    site: e.site,
                    sites,
                });
            }
        }
        if events.windows(2).any(|w| w[1].time < w[0].time) {
            return Err(Error::invalid("loss events must be sorted by time"));
        }
        Ok(Self { events })
    }

    /// One loss on the middle site `M/2` at `t = 0`.
    pub fn single(sites: usize) -> Result<Self> {
        Self::new(
            vec![LossEvent {
                time: 0.0,
                site: sites / 2,
            }],
            sites,
        )
    }

    /// Loss on `M0 = M/2` at `t = 0` followed by a loss on `M0 - delta` at `t = tau0`.
    pub fn two_loss(sites: usize, tau0: f64, delta: isize) -> Result<Self> {
        let first = sites / 2;
        let second = first as isize - delta;
        if second < 1 || second > sites as isize {
            return Err(Error::invalid(format!(
                "second loss site {second} outside lattice of {sites} sites"
            )));
        }
        Self::new(
            vec![
                LossEvent {
                    time: 0.0,
                    site: first,
                },
                LossEvent {
                    time: tau0,
                    site: second as usize,
                },
            ],
            sites,
        )
    }

    pub fn events(&self) -> &[LossEvent] {
        &self.events
    }
}

/// Complete physical configuration of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub hamiltonian: HamiltonianSpec,
    pub dissipation: DissipationSpec,
    pub initial: InitialStatePattern,
}

impl ModelSpec {
    pub fn sites(&self) -> usize {
        self.hamiltonian.sites
    }

    pub fn validate(&self) -> Result<()> {
        self.hamiltonian.validate()?;
        self.dissipation.validate(self.sites())?;
        self.initial.occupations(self.sites())?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BondTerm {
    /// Left site of the bond; the term acts on `(site, site + 1)`.
    pub site: usize,
    pub matrix: Matrix4<C64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SiteTerm {
    pub site: usize,
    pub matrix: Matrix2<C64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianTerms {
    pub sites: usize,
    pub bonds: Vec<BondTerm>,
    pub site_terms: Vec<SiteTerm>,
}

/// Hopping plus interaction on every bond `(i, i+1)` and `ε_i n_i` on every site.
///
/// After the Jordan-Wigner mapping nearest-neighbour hopping carries no string,
/// so the same terms describe both species.
pub fn build_hamiltonian_terms(spec: &HamiltonianSpec) -> Result<HamiltonianTerms> {
    spec.validate()?;
    let j = C64::from(spec.hopping);
    let u = C64::from(spec.interaction);
    let zero = C64::from(0.0);
    let bond = Matrix4::new(
        zero, zero, zero, zero, //
        zero, zero, -j, zero, //
        zero, -j, zero, zero, //
        zero, zero, zero, u,
    );
    let bonds = (1..spec.sites)
        .map(|site| BondTerm {
            site,
            matrix: bond,
        })
        .collect();
    let site_terms = spec
        .potential
        .iter()
        .enumerate()
        .map(|(i, &eps)| SiteTerm {
            site: i + 1,
            matrix: Matrix2::new(zero, zero, zero, C64::from(eps)),
        })
        .collect();
    Ok(HamiltonianTerms {
        sites: spec.sites,
        bonds,
        site_terms,
    })
}

/// Resolve a preset or validate a custom occupation list.
pub fn build_initial_state(pattern: &InitialStatePattern, sites: usize) -> Result<Vec<u8>> {
    let occ = match pattern {
        InitialStatePattern::UnitFilling => vec![1; sites],
        InitialStatePattern::CdwOdd => (0..sites).map(|i| ((i + 1) % 2) as u8).collect(),
        InitialStatePattern::CdwEven => (0..sites).map(|i| (i % 2) as u8).collect(),
        InitialStatePattern::Custom(occ) => {
            if occ.len() != sites {
                return Err(Error::invalid(format!(
                    "initial occupations have {} entries for {sites} sites",
                    occ.len()
                )));
            }
            if occ.iter().any(|&n| n > 1) {
                return Err(Error::invalid("occupations must be 0 or 1"));
            }
            occ.clone()
        }
    };
    Ok(occ)
}

/// Loss channels first (sites 1..M), then dephasing; zero-rate channels omitted.
pub fn build_jump_channels(spec: &DissipationSpec) -> Result<Vec<JumpChannel>> {
    spec.validate(spec.loss.len())?;
    if spec.loss.len() != spec.dephasing.len() {
        return Err(Error::LengthMismatch {
            left: spec.loss.len(),
            right: spec.dephasing.len(),
        });
    }
    let loss = spec.loss.iter().enumerate().map(|(i, &rate)| JumpChannel {
        kind: ChannelKind::Loss,
        site: i + 1,
        rate,
    });
    let dephasing = spec.dephasing.iter().enumerate().map(|(i, &rate)| JumpChannel {
        kind: ChannelKind::Dephasing,
        site: i + 1,
        rate,
    });
    Ok(loss.chain(dephasing).filter(|c| c.rate > 0.0).collect())
}
