//! Textual state specs.
//!
//! Oscillator: `vacuum`, `fock:n`, `coherent:re,im`, `thermal:nbar`.
//! Spin: `basis:k` (the `k`-th `S_z` eigenstate, `k = 0` is `m = S`),
//! `coherent:theta,phi` (spin coherent state along the direction), `mixed`.
//! Both: `random:seed` (full-rank random mixed state).

use std::fmt;
use std::str::FromStr;

use gtomo_core::numerics::{c64, random_density, ComplexMatrix};
use gtomo_core::simulate::shard_rng;
use gtomo_core::{DensityMatrix, Direction, FockSpace, SpinSystem};

use crate::{CliError, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum StateSpec {
    Vacuum,
    Fock(usize),
    Coherent(f64, f64),
    Thermal(f64),
    Basis(usize),
    Mixed,
    Random(u64),
}

fn bad(s: &str) -> CliError {
    CliError::Config(format!("unrecognized state '{s}'"))
}

fn numbers(s: &str, args: &str, n: usize) -> Result<Vec<f64>> {
    let v = args
        .split(',')
        .map(|a| a.trim().parse::<f64>().map_err(|_| bad(s)))
        .collect::<Result<Vec<_>>>()?;
    if v.len() != n || v.iter().any(|x| !x.is_finite()) {
        return Err(bad(s));
    }
    Ok(v)
}

impl FromStr for StateSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let (head, args) = match s.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a)),
            None => (s.trim(), None),
        };
        match (head, args) {
            ("vacuum", None) => Ok(StateSpec::Vacuum),
            ("mixed", None) => Ok(StateSpec::Mixed),
            ("fock", Some(a)) => a.trim().parse().map(StateSpec::Fock).map_err(|_| bad(s)),
            ("basis", Some(a)) => a.trim().parse().map(StateSpec::Basis).map_err(|_| bad(s)),
            ("random", Some(a)) => a.trim().parse().map(StateSpec::Random).map_err(|_| bad(s)),
            ("thermal", Some(a)) => {
                let v = numbers(s, a, 1)?;
                Ok(StateSpec::Thermal(v[0]))
            }
            ("coherent", Some(a)) => {
                let v = numbers(s, a, 2)?;
                Ok(StateSpec::Coherent(v[0], v[1]))
            }
            _ => Err(bad(s)),
        }
    }
}

impl fmt::Display for StateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateSpec::Vacuum => write!(f, "vacuum"),
            StateSpec::Fock(n) => write!(f, "fock:{n}"),
            StateSpec::Coherent(a, b) => write!(f, "coherent:{a},{b}"),
            StateSpec::Thermal(n) => write!(f, "thermal:{n}"),
            StateSpec::Basis(k) => write!(f, "basis:{k}"),
            StateSpec::Mixed => write!(f, "mixed"),
            StateSpec::Random(s) => write!(f, "random:{s}"),
        }
    }
}

impl StateSpec {
    pub fn oscillator(&self, space: &FockSpace) -> Result<DensityMatrix> {
        Ok(match *self {
            StateSpec::Vacuum => space.fock_state(0)?,
            StateSpec::Fock(n) => space.fock_state(n)?,
            StateSpec::Coherent(re, im) => space.coherent_state(c64(re, im))?,
            StateSpec::Thermal(nbar) => space.thermal_state(nbar)?,
            StateSpec::Mixed => DensityMatrix::maximally_mixed(space.dim()),
            StateSpec::Random(seed) => random_density(&mut shard_rng(seed, 0), space.dim()),
            StateSpec::Basis(_) => return Err(CliError::Config(format!("state '{self}' applies to spin schemes only"))),
        })
    }

    pub fn spin(&self, sys: &SpinSystem) -> Result<DensityMatrix> {
        Ok(match *self {
            StateSpec::Basis(k) => {
                if k >= sys.dim() {
                    return Err(CliError::Config(format!("basis index {k} exceeds 2S = {}", sys.two_s())));
                }
                DensityMatrix::new(ComplexMatrix::from_fn(sys.dim(), |i, j| c64(if i == k && j == k { 1.0 } else { 0.0 }, 0.0)))?
            }
            StateSpec::Coherent(theta, phi) => DensityMatrix::pure(&sys.eigenvector(Direction::new(theta, phi), 0))?,
            StateSpec::Mixed => DensityMatrix::maximally_mixed(sys.dim()),
            StateSpec::Random(seed) => random_density(&mut shard_rng(seed, 0), sys.dim()),
            StateSpec::Vacuum | StateSpec::Fock(_) | StateSpec::Thermal(_) => {
                return Err(CliError::Config(format!("state '{self}' applies to oscillator schemes only")))
            }
        })
    }
}
