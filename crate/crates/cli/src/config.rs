//! Experiment configuration: a flat TOML table, validated into a [`Plan`]
//! before anything is computed.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use gtomo_core::displaced_counting::AlphaGrid;
use gtomo_core::homodyne::HomodyneGrid;
use gtomo_core::simulate::{Mode, DEFAULT_SHARDS};
use gtomo_core::spin::{FiniteMode, SpinFrame};
use gtomo_core::{DensityMatrix, FockSpace, SpinSystem};
use serde::Deserialize;

use crate::state::StateSpec;
use crate::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    SpinSphere,
    SpinFinite,
    Homodyne,
    DisplacedCount,
    VerifyFrame,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::SpinSphere, Scheme::SpinFinite, Scheme::Homodyne, Scheme::DisplacedCount, Scheme::VerifyFrame];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::SpinSphere => "spin-sphere",
            Scheme::SpinFinite => "spin-finite",
            Scheme::Homodyne => "homodyne",
            Scheme::DisplacedCount => "displaced-count",
            Scheme::VerifyFrame => "verify-frame",
        }
    }

    /// Keys accepted besides `scheme`, `seed`, `shards` and `out`.
    pub fn keys(self) -> &'static [&'static str] {
        match self {
            Scheme::SpinSphere => &["state", "mode", "shots", "two_s", "polar", "azimuthal", "psi_nodes"],
            Scheme::SpinFinite => &["state", "mode", "shots", "two_s", "finite_mode", "label_seed"],
            Scheme::Homodyne => &["state", "mode", "shots", "nmax", "phi_count", "x_max", "x_count", "k_max"],
            Scheme::DisplacedCount => &["state", "mode", "shots", "nmax", "y", "radius", "steps", "photon_cutoff"],
            Scheme::VerifyFrame => &["frame", "trials", "two_s", "nmax", "y", "radius", "steps"],
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            Scheme::SpinSphere => "spin tomography over the sphere of axes (quadrature or Monte Carlo)",
            Scheme::SpinFinite => "spin tomography through (2S+1)^2 rotations or projectors and their dual basis",
            Scheme::Homodyne => "optical homodyne tomography with band-limited pattern functions",
            Scheme::DisplacedCount => "displaced photon counting over a disk of displacements",
            Scheme::VerifyFrame => "numerical check of k~, trace, closure and covariance identities",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Raw configuration file. Every key except `scheme` is optional; which
/// ones apply depends on the scheme (see [`Scheme::keys`]).
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: Option<Scheme>,
    pub state: Option<String>,
    pub mode: Option<Mode>,
    pub shots: Option<i64>,
    pub seed: Option<u64>,
    pub shards: Option<i64>,
    pub out: Option<PathBuf>,
    pub two_s: Option<i64>,
    pub polar: Option<i64>,
    pub azimuthal: Option<i64>,
    pub psi_nodes: Option<i64>,
    pub finite_mode: Option<FiniteMode>,
    pub label_seed: Option<u64>,
    pub nmax: Option<i64>,
    pub phi_count: Option<i64>,
    pub x_max: Option<f64>,
    pub x_count: Option<i64>,
    pub k_max: Option<f64>,
    pub y: Option<f64>,
    pub radius: Option<f64>,
    pub steps: Option<i64>,
    pub photon_cutoff: Option<i64>,
    pub frame: Option<String>,
    pub trials: Option<i64>,
}

macro_rules! present_keys {
    ($cfg:expr, $($field:ident),*) => {{
        let mut v: Vec<&'static str> = Vec::new();
        $( if $cfg.$field.is_some() { v.push(stringify!($field)); } )*
        v
    }};
}

/// Defaults for keys a scheme leaves unset.
pub mod defaults {
    pub const HOMODYNE_X_MAX: f64 = 7.0;
    pub const HOMODYNE_X_COUNT: usize = 800;
    pub const HOMODYNE_K_MAX: f64 = 24.0;
    pub const BW_RADIUS: f64 = 5.0;
    pub const BW_STEPS: usize = 100;
    pub const VERIFY_TRIALS: usize = 20;
    pub const VERIFY_NMAX: usize = 10;
    pub const VERIFY_RADIUS: f64 = 8.0;
    pub const VERIFY_STEPS: usize = 160;
    /// Truncation used for covariance checks of oscillator frames.
    pub const COVARIANCE_NMAX: usize = 60;
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        Self::from_toml(&text)
    }

    fn present(&self) -> Vec<&'static str> {
        present_keys!(
            self, state, mode, shots, two_s, polar, azimuthal, psi_nodes, finite_mode, label_seed, nmax, phi_count, x_max,
            x_count, k_max, y, radius, steps, photon_cutoff, frame, trials
        )
    }

    /// Checks every key and resolves defaults. `needs_state` is false for
    /// ingest, where the true state is optional.
    pub fn validate(&self, needs_state: bool) -> Result<Plan> {
        let scheme = self.scheme.ok_or_else(|| CliError::Config("missing key 'scheme'".into()))?;
        for key in self.present() {
            if !scheme.keys().contains(&key) {
                return Err(CliError::Config(format!("key '{key}' does not apply to scheme {scheme}")));
            }
        }
        let seed = self.seed.unwrap_or(0);
        let shards = match self.shards {
            None => DEFAULT_SHARDS,
            Some(s) => positive("shards", s)?,
        };
        let shots = match self.shots {
            None => 0,
            Some(s) if s < 0 => return Err(CliError::Config(format!("shots must be nonnegative, got {s}"))),
            Some(s) => s as u64,
        };
        let mode = self.mode.unwrap_or(Mode::Exact);
        if scheme != Scheme::VerifyFrame && mode == Mode::Sampled && shots == 0 && needs_state {
            return Err(CliError::Config("sampled mode needs shots > 0".into()));
        }
        let state = self.state.as_deref().map(str::parse::<StateSpec>).transpose()?;
        if needs_state && scheme != Scheme::VerifyFrame && state.is_none() {
            return Err(CliError::Config(format!("scheme {scheme} needs a 'state'")));
        }
        let setup = match scheme {
            Scheme::SpinSphere => {
                let sys = SpinSystem::new(self.spin()?);
                let frame = match (self.polar, self.azimuthal, self.psi_nodes) {
                    (None, None, None) => SpinFrame::for_spin(sys.two_s()),
                    (p, a, s) => {
                        let d = SpinFrame::for_spin(sys.two_s());
                        let def = |v: Option<i64>, name: &str, fallback: usize| v.map(|x| positive(name, x)).unwrap_or(Ok(fallback));
                        SpinFrame::product(
                            def(p, "polar", sys.two_s() + 2)?,
                            def(a, "azimuthal", 2 * sys.two_s() + 2)?,
                            def(s, "psi_nodes", d.psi_nodes.len())?,
                        )?
                    }
                };
                Setup::SpinSphere { sys, frame }
            }
            Scheme::SpinFinite => Setup::SpinFinite {
                sys: SpinSystem::new(self.spin()?),
                mode: self.finite_mode.unwrap_or(FiniteMode::Rotations),
                label_seed: self.label_seed.unwrap_or(seed),
            },
            Scheme::Homodyne => {
                let nmax = self.nmax()?;
                let grid = HomodyneGrid::new(
                    self.phi_count.map(|v| positive("phi_count", v)).unwrap_or(Ok(2 * nmax + 2))?,
                    self.x_max.unwrap_or(defaults::HOMODYNE_X_MAX),
                    self.x_count.map(|v| positive("x_count", v)).unwrap_or(Ok(defaults::HOMODYNE_X_COUNT))?,
                    self.k_max.unwrap_or(defaults::HOMODYNE_K_MAX),
                )?;
                Setup::Homodyne { space: FockSpace::new(nmax), grid }
            }
            Scheme::DisplacedCount => {
                let nmax = self.nmax()?;
                let mut grid = AlphaGrid::new(
                    self.radius.unwrap_or(defaults::BW_RADIUS),
                    self.steps.map(|v| positive("steps", v)).unwrap_or(Ok(defaults::BW_STEPS))?,
                    self.y.unwrap_or(PI),
                )?;
                if let Some(c) = self.photon_cutoff {
                    let c = positive("photon_cutoff", c)?;
                    if c < nmax {
                        return Err(CliError::Config(format!("photon_cutoff {c} is below nmax {nmax}")));
                    }
                    grid = grid.with_photon_cutoff(c);
                }
                Setup::DisplacedCount { space: FockSpace::new(nmax), grid }
            }
            Scheme::VerifyFrame => {
                let name = self.frame.as_deref().ok_or_else(|| CliError::Config("verify-frame needs a 'frame'".into()))?;
                let frame = match name {
                    "pauli" => FrameSpec::Pauli,
                    "spin-haar" => FrameSpec::SpinHaar { two_s: self.spin()? },
                    "displacement" | "displaced-count" => {
                        let nmax = self.nmax.map(|v| positive("nmax", v)).unwrap_or(Ok(defaults::VERIFY_NMAX))?;
                        let radius = self.radius.unwrap_or(defaults::VERIFY_RADIUS);
                        let steps = self.steps.map(|v| positive("steps", v)).unwrap_or(Ok(defaults::VERIFY_STEPS))?;
                        if name == "displacement" {
                            FrameSpec::Displacement { nmax, radius, steps }
                        } else {
                            FrameSpec::DisplacedCount { nmax, radius, steps, y: self.y.unwrap_or(PI) }
                        }
                    }
                    other => {
                        return Err(CliError::Config(format!(
                            "unknown frame '{other}' (expected pauli, spin-haar, displacement or displaced-count)"
                        )))
                    }
                };
                let trials = self.trials.map(|v| positive("trials", v)).unwrap_or(Ok(defaults::VERIFY_TRIALS))?;
                if trials < 2 {
                    return Err(CliError::Config("trials must be at least 2".into()));
                }
                Setup::VerifyFrame { frame, trials }
            }
        };
        let truth = match (&state, &setup) {
            (Some(s), Setup::SpinSphere { sys, .. } | Setup::SpinFinite { sys, .. }) => Some(s.spin(sys)?),
            (Some(s), Setup::Homodyne { space, .. } | Setup::DisplacedCount { space, .. }) => Some(s.oscillator(space)?),
            _ => None,
        };
        Ok(Plan { scheme, state, truth, mode, shots, seed, shards, setup, out: self.out.clone() })
    }

    fn spin(&self) -> Result<usize> {
        match self.two_s {
            None => Err(CliError::Config("missing key 'two_s'".into())),
            Some(v) if v < 0 => Err(CliError::Config(format!("two_s must be nonnegative, got {v}"))),
            Some(v) => Ok(v as usize),
        }
    }

    fn nmax(&self) -> Result<usize> {
        positive("nmax", self.nmax.ok_or_else(|| CliError::Config("missing key 'nmax'".into()))?)
    }
}

fn positive(name: &str, v: i64) -> Result<usize> {
    if v <= 0 {
        return Err(CliError::Config(format!("{name} must be positive, got {v}")));
    }
    Ok(v as usize)
}

#[derive(Clone, Debug, PartialEq)]
pub enum FrameSpec {
    Pauli,
    SpinHaar { two_s: usize },
    Displacement { nmax: usize, radius: f64, steps: usize },
    DisplacedCount { nmax: usize, radius: f64, steps: usize, y: f64 },
}

impl FrameSpec {
    /// The same oscillator frame truncated at `nmax.max(min_nmax)`; `None` for finite frames.
    pub fn lifted(&self, min_nmax: usize) -> Option<FrameSpec> {
        match *self {
            FrameSpec::Pauli | FrameSpec::SpinHaar { .. } => None,
            FrameSpec::Displacement { nmax, radius, steps } => Some(FrameSpec::Displacement { nmax: nmax.max(min_nmax), radius, steps }),
            FrameSpec::DisplacedCount { nmax, radius, steps, y } => {
                Some(FrameSpec::DisplacedCount { nmax: nmax.max(min_nmax), radius, steps, y })
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum Setup {
    SpinSphere { sys: SpinSystem, frame: SpinFrame },
    SpinFinite { sys: SpinSystem, mode: FiniteMode, label_seed: u64 },
    Homodyne { space: FockSpace, grid: HomodyneGrid },
    DisplacedCount { space: FockSpace, grid: AlphaGrid },
    VerifyFrame { frame: FrameSpec, trials: usize },
}

/// A validated configuration.
#[derive(Clone, Debug)]
pub struct Plan {
    pub scheme: Scheme,
    pub state: Option<StateSpec>,
    pub truth: Option<DensityMatrix>,
    pub mode: Mode,
    pub shots: u64,
    pub seed: u64,
    pub shards: usize,
    pub setup: Setup,
    pub out: Option<PathBuf>,
}
