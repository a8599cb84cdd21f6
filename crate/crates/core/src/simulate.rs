//! Measurement simulation and Monte Carlo bookkeeping shared by all schemes.
//!
//! Randomness contract: every stream is a ChaCha20 generator seeded with
//! `seed_from_u64(seed)` and switched to stream `shard` via `set_stream`.
//! Shots are split over shards as evenly as possible (the first
//! `shots % shards` shards take one extra), shards run in parallel, and their
//! results are merged in shard order. Output is therefore a pure function of
//! `(seed, shards)` regardless of thread count.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::numerics::{fidelity, trace_distance, ComplexMatrix, DensityMatrix, C64};
use crate::spin::Direction;

/// Default number of independent RNG shards for Monte Carlo runs.
pub const DEFAULT_SHARDS: usize = 16;

/// Identity of the generator algorithm; part of the output contract.
pub const RNG_ALGORITHM: &str = "chacha20-stream/v1";

pub type SimRng = ChaCha20Rng;

pub fn shard_rng(seed: u64, shard: usize) -> SimRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(shard as u64);
    rng
}

/// Shots assigned to each shard.
pub fn shard_sizes(shots: u64, shards: usize) -> Vec<u64> {
    let shards = shards.max(1);
    let base = shots / shards as u64;
    let extra = (shots % shards as u64) as usize;
    (0..shards).map(|s| base + u64::from(s < extra)).collect()
}

/// Runs `job(rng, shard_shots, shard_index)` for every shard in parallel and
/// returns the results in shard order.
pub fn run_sharded<T, F>(seed: u64, shots: u64, shards: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut SimRng, u64, usize) -> T + Sync,
{
    shard_sizes(shots, shards)
        .into_par_iter()
        .enumerate()
        .map(|(k, n)| {
            let mut rng = shard_rng(seed, k);
            job(&mut rng, n, k)
        })
        .collect()
}

/// Uniform direction on the unit sphere: `cos θ ~ U[-1, 1]`, `φ ~ U[0, 2π)`.
pub fn sample_sphere(rng: &mut impl Rng) -> Direction {
    let cos_theta: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..2.0 * PI);
    Direction::new(cos_theta.clamp(-1.0, 1.0).acos(), phi)
}

/// Negative weights down to this value are treated as zero.
pub const NEGATIVE_WEIGHT_TOL: f64 = 1e-10;

fn clamped_weights(weights: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(weights.len());
    for &w in weights {
        if !w.is_finite() || w < -NEGATIVE_WEIGHT_TOL {
            return Err(TomoError::InvalidParameter(format!("invalid sampling weight {w}")));
        }
        out.push(w.max(0.0));
    }
    Ok(out)
}

/// Draws index `i` with probability `w_i / Σw`.
pub fn sample_categorical(weights: &[f64], rng: &mut impl Rng) -> Result<usize> {
    Ok(InverseCdf::new(weights)?.sample(rng))
}

/// Piecewise-constant inverse CDF over a fixed grid of bins.
#[derive(Clone, Debug)]
pub struct InverseCdf {
    cumulative: Vec<f64>,
    mass: f64,
}

impl InverseCdf {
    pub fn new(weights: &[f64]) -> Result<Self> {
        let w = clamped_weights(weights)?;
        let mut cumulative = Vec::with_capacity(w.len());
        let mut acc = 0.0;
        for x in &w {
            acc += x;
            cumulative.push(acc);
        }
        if !(acc > 0.0) {
            return Err(TomoError::ZeroMass);
        }
        Ok(Self { cumulative, mass: acc })
    }

    /// Total (unnormalized) mass.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u = rng.gen::<f64>() * self.mass;
        let idx = self.cumulative.partition_point(|&c| c <= u);
        if idx < self.cumulative.len() {
            return idx;
        }
        // u rounded up to the total mass: take the last bin with positive width
        self.cumulative.partition_point(|&c| c < self.mass)
    }
}

/// Draws a grid value from a density tabulated on `grid` (bin probability ∝ `pdf`).
pub fn sample_inverse_cdf(pdf: &[f64], grid: &[f64], rng: &mut impl Rng) -> Result<f64> {
    if pdf.len() != grid.len() {
        return Err(TomoError::DimensionMismatch { expected: grid.len(), found: pdf.len() });
    }
    Ok(grid[InverseCdf::new(pdf)?.sample(rng)])
}

/// One-pass mean and per-entry variance of a stream of matrices.
///
/// The variance of a complex entry is `E|X - μ|²`.
#[derive(Clone, Debug)]
pub struct McAccumulator {
    dim: usize,
    count: u64,
    mean: Vec<C64>,
    m2: Vec<f64>,
}

impl McAccumulator {
    pub fn new(dim: usize) -> Self {
        Self { dim, count: 0, mean: vec![C64::default(); dim * dim], m2: vec![0.0; dim * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, term: &ComplexMatrix) -> Result<()> {
        if term.dim() != self.dim {
            return Err(TomoError::DimensionMismatch { expected: self.dim, found: term.dim() });
        }
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for (k, x) in term.as_dmatrix().iter().enumerate() {
            let delta = x - self.mean[k];
            self.mean[k] += delta * inv;
            self.m2[k] += (delta.conj() * (x - self.mean[k])).re;
        }
        Ok(())
    }

    /// Pairwise (Chan et al.) merge.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.dim != self.dim {
            return Err(TomoError::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for k in 0..self.mean.len() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * (nb / n);
            self.m2[k] += other.m2[k] + delta.norm_sqr() * na * nb / n;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn mean(&self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.dim, |i, j| self.mean[i + j * self.dim])
    }

    /// Per-entry standard error of the mean, `sqrt(s² / n)`; zero below two samples.
    pub fn stderr(&self) -> Vec<Vec<f64>> {
        let n = self.count as f64;
        (0..self.dim)
            .map(|i| {
                (0..self.dim)
                    .map(|j| if self.count < 2 { 0.0 } else { (self.m2[i + j * self.dim] / (n - 1.0) / n).max(0.0).sqrt() })
                    .collect()
            })
            .collect()
    }
}

/// Output of [`mc_accumulate`].
#[derive(Clone, Debug)]
pub struct Accumulation {
    pub accumulator: McAccumulator,
    /// `(shots, running mean)` at every power of two.
    pub checkpoints: Vec<(u64, ComplexMatrix)>,
}

/// Streams terms into a [`McAccumulator`], snapshotting the mean at powers of two.
pub fn mc_accumulate<I>(terms: I) -> Result<Accumulation>
where
    I: IntoIterator<Item = ComplexMatrix>,
{
    let mut iter = terms.into_iter().peekable();
    let dim = match iter.peek() {
        Some(m) => m.dim(),
        None => return Err(TomoError::InvalidParameter("empty term stream".into())),
    };
    let mut acc = McAccumulator::new(dim);
    let mut checkpoints = Vec::new();
    for term in iter {
        acc.push(&term)?;
        if acc.count().is_power_of_two() {
            checkpoints.push((acc.count(), acc.mean()));
        }
    }
    Ok(Accumulation { accumulator: acc, checkpoints })
}

/// Appends the final state when it is not already the last snapshot.
pub fn close_checkpoints(checkpoints: &mut Vec<(u64, ComplexMatrix)>, acc: &McAccumulator) {
    if acc.count() > 0 && checkpoints.last().map(|c| c.0) != Some(acc.count()) {
        checkpoints.push((acc.count(), acc.mean()));
    }
}

/// Merges per-shard accumulations in shard order. Checkpoint `k` of the merged
/// result combines every shard's `k`-th snapshot (shards that stopped earlier
/// contribute their final state).
pub fn merge_shards(shards: &[Accumulation]) -> Result<Accumulation> {
    let first = shards.first().ok_or_else(|| TomoError::InvalidParameter("no shards".into()))?;
    let dim = first.accumulator.dim();
    let mut total = McAccumulator::new(dim);
    for s in shards {
        total.merge(&s.accumulator)?;
    }
    let depth = shards.iter().map(|s| s.checkpoints.len()).max().unwrap_or(0);
    let mut checkpoints = Vec::with_capacity(depth);
    for k in 0..depth {
        let mut shots = 0u64;
        let mut sum = ComplexMatrix::zeros(dim);
        for s in shards {
            let (n, mean) = match s.checkpoints.get(k) {
                Some((n, m)) => (*n, m.clone()),
                None => (s.accumulator.count(), s.accumulator.mean()),
            };
            shots += n;
            sum += &mean.scale_real(n as f64);
        }
        if shots > 0 {
            checkpoints.push((shots, sum.scale_real(1.0 / shots as f64)));
        }
    }
    Ok(Accumulation { accumulator: total, checkpoints })
}

/// A convergence-trace entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub shots: u64,
    pub fidelity: f64,
    pub trace_distance: f64,
}

/// Estimated state plus the statistics that accompany it.
#[derive(Clone, Debug)]
pub struct ReconstructionResult {
    /// Raw pattern-function sum, neither symmetrized nor renormalized.
    pub estimate: ComplexMatrix,
    /// Hermitian, positive, unit-trace projection of `estimate`.
    pub symmetrized: DensityMatrix,
    /// Zero for exact-probability reconstructions.
    pub shots: u64,
    /// Per-entry standard error of `estimate` (zeros for exact reconstructions).
    pub stderr: Vec<Vec<f64>>,
    pub trace: Vec<Checkpoint>,
    /// Bootstrap standard error of the fidelity to the true state, when available.
    pub fidelity_stderr: Option<f64>,
}

impl ReconstructionResult {
    pub fn exact(estimate: ComplexMatrix) -> Result<Self> {
        let dim = estimate.dim();
        let symmetrized = DensityMatrix::from_estimate(&estimate)?;
        Ok(Self { estimate, symmetrized, shots: 0, stderr: vec![vec![0.0; dim]; dim], trace: Vec::new(), fidelity_stderr: None })
    }

    pub fn sampled(estimate: ComplexMatrix, shots: u64, stderr: Vec<Vec<f64>>) -> Result<Self> {
        let symmetrized = DensityMatrix::from_estimate(&estimate)?;
        Ok(Self { estimate, symmetrized, shots, stderr, trace: Vec::new(), fidelity_stderr: None })
    }

    pub fn fidelity_to(&self, truth: &DensityMatrix) -> Result<f64> {
        fidelity(truth, &self.symmetrized)
    }

    pub fn trace_distance_to(&self, truth: &DensityMatrix) -> Result<f64> {
        trace_distance(truth, &self.symmetrized)
    }

    /// Largest entrywise standard error.
    pub fn max_stderr(&self) -> f64 {
        self.stderr.iter().flatten().copied().fold(0.0, f64::max)
    }

    /// Fills the convergence trace from `(shots, estimate)` snapshots.
    pub fn with_trace(mut self, truth: &DensityMatrix, snapshots: &[(u64, ComplexMatrix)]) -> Result<Self> {
        self.trace = convergence_trace(truth, snapshots)?;
        Ok(self)
    }
}

pub fn convergence_trace(truth: &DensityMatrix, snapshots: &[(u64, ComplexMatrix)]) -> Result<Vec<Checkpoint>> {
    snapshots
        .iter()
        .map(|(shots, m)| {
            let est = DensityMatrix::from_estimate(m)?;
            Ok(Checkpoint { shots: *shots, fidelity: fidelity(truth, &est)?, trace_distance: trace_distance(truth, &est)? })
        })
        .collect()
}

/// Nonparametric bootstrap standard error of `metric` over independent units.
///
/// Each unit is `(weight, mean)`; a resample draws units with replacement and
/// evaluates `metric` on the weight-averaged mean. Returns `None` with fewer
/// than two units.
pub fn bootstrap_stderr<F>(units: &[(f64, ComplexMatrix)], resamples: usize, seed: u64, metric: F) -> Option<f64>
where
    F: Fn(&ComplexMatrix) -> Option<f64>,
{
    if units.len() < 2 || resamples < 2 {
        return None;
    }
    let mut rng = shard_rng(seed, usize::MAX);
    let dim = units[0].1.dim();
    let mut values = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut sum = ComplexMatrix::zeros(dim);
        let mut w = 0.0;
        for _ in 0..units.len() {
            let (uw, um) = &units[rng.gen_range(0..units.len())];
            sum += &um.scale_real(*uw);
            w += uw;
        }
        if w > 0.0 {
            if let Some(v) = metric(&sum.scale_real(1.0 / w)) {
                values.push(v);
            }
        }
    }
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Some((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Bootstrap resample count for derived-metric standard errors.
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Whether a reconstruction uses exact probabilities or sampled counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    Sampled,
}

impl std::str::FromStr for Mode {
    type Err = TomoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Mode::Exact),
            "sampled" => Ok(Mode::Sampled),
            other => Err(TomoError::InvalidParameter(format!("unknown mode '{other}'"))),
        }
    }
}

/// Sample mean of a Monte Carlo estimator computed from aggregated counts.
#[derive(Clone, Debug)]
pub struct SampledEstimate {
    pub mean: ComplexMatrix,
    pub stderr: Vec<Vec<f64>>,
    pub shots: u64,
}

impl SampledEstimate {
    /// Standard errors from the mean and the per-entry second moment `E|X|²`,
    /// matching [`McAccumulator::stderr`].
    pub fn from_moments(mean: ComplexMatrix, second: &[Vec<f64>], shots: u64) -> Self {
        let dim = mean.dim();
        let stderr = (0..dim)
            .map(|a| {
                (0..dim)
                    .map(|b| {
                        if shots < 2 {
                            0.0
                        } else {
                            ((second[a][b] - mean[(a, b)].norm_sqr()).max(0.0) / (shots - 1) as f64).sqrt()
                        }
                    })
                    .collect()
            })
            .collect();
        Self { mean, stderr, shots }
    }

    pub fn into_result(self) -> Result<ReconstructionResult> {
        ReconstructionResult::sampled(self.mean, self.shots, self.stderr)
    }
}

/// Running means after each shard prefix, from per-shard `(shots, mean)` pairs.
pub fn shard_prefix_snapshots(shards: &[(u64, ComplexMatrix)]) -> Vec<(u64, ComplexMatrix)> {
    let mut out = Vec::with_capacity(shards.len());
    let mut shots = 0u64;
    let mut sum: Option<ComplexMatrix> = None;
    for (n, mean) in shards {
        if *n == 0 {
            continue;
        }
        shots += n;
        let term = mean.scale_real(*n as f64);
        sum = Some(match sum {
            Some(s) => &s + &term,
            None => term,
        });
        out.push((shots, sum.as_ref().expect("set above").scale_real(1.0 / shots as f64)));
    }
    out
}

/// Attaches the shard-prefix convergence trace and a bootstrap fidelity error.
pub fn finish_sharded(
    mut result: ReconstructionResult,
    truth: &DensityMatrix,
    shards: &[(u64, ComplexMatrix)],
    seed: u64,
) -> Result<ReconstructionResult> {
    result.trace = convergence_trace(truth, &shard_prefix_snapshots(shards))?;
    let units: Vec<(f64, ComplexMatrix)> = shards.iter().filter(|s| s.0 > 0).map(|(n, m)| (*n as f64, m.clone())).collect();
    result.fidelity_stderr = bootstrap_stderr(&units, BOOTSTRAP_RESAMPLES, seed, |m| {
        DensityMatrix::from_estimate(m).ok().and_then(|d| fidelity(truth, &d).ok())
    });
    Ok(result)
}

/// Measurement schemes with a record format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeId {
    SpinSphere,
    SpinFinite,
    Homodyne,
    DisplacedCount,
}

impl SchemeId {
    pub const ALL: [SchemeId; 4] = [SchemeId::SpinSphere, SchemeId::SpinFinite, SchemeId::Homodyne, SchemeId::DisplacedCount];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeId::SpinSphere => "spin-sphere",
            SchemeId::SpinFinite => "spin-finite",
            SchemeId::Homodyne => "homodyne",
            SchemeId::DisplacedCount => "displaced-count",
        }
    }

    /// CSV column names of the setting label.
    pub fn setting_columns(self) -> &'static [&'static str] {
        match self {
            SchemeId::SpinSphere => &["theta", "phi"],
            SchemeId::SpinFinite => &["theta", "phi", "psi"],
            SchemeId::Homodyne => &["phi"],
            SchemeId::DisplacedCount => &["alpha_re", "alpha_im"],
        }
    }

    /// CSV column name of the outcome (`m`, quadrature value `x`, or photon count `n`).
    pub fn outcome_column(self) -> &'static str {
        match self {
            SchemeId::SpinSphere | SchemeId::SpinFinite => "m",
            SchemeId::Homodyne => "x",
            SchemeId::DisplacedCount => "n",
        }
    }
}

impl std::str::FromStr for SchemeId {
    type Err = TomoError;
    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| TomoError::InvalidParameter(format!("unknown scheme '{s}'")))
    }
}

/// One row of measurement data: how often `outcome` was seen at `setting`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementRecord {
    pub scheme: SchemeId,
    pub setting: Vec<f64>,
    pub outcome: f64,
    pub count: u64,
}

/// Writes records as CSV: `scheme,<setting columns>,<outcome column>,count`.
pub fn write_records<W: Write>(out: W, scheme: SchemeId, records: &[MeasurementRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["scheme"];
    header.extend_from_slice(scheme.setting_columns());
    header.push(scheme.outcome_column());
    header.push("count");
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        if r.scheme != scheme || r.setting.len() != scheme.setting_columns().len() {
            return Err(TomoError::InvalidParameter("record does not match the file scheme".into()));
        }
        let mut row = vec![scheme.as_str().to_string()];
        row.extend(r.setting.iter().map(|x| x.to_string()));
        row.push(r.outcome.to_string());
        row.push(r.count.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| TomoError::InvalidParameter(e.to_string()))?;
    Ok(())
}

/// Reads records written by [`write_records`]. The header must match the
/// scheme named in the first data row.
pub fn read_records<R: Read>(input: R) -> Result<(SchemeId, Vec<MeasurementRecord>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let mut scheme: Option<SchemeId> = None;
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let id: SchemeId = row.get(0).unwrap_or_default().parse()?;
        match scheme {
            None => {
                let mut expected = vec!["scheme"];
                expected.extend_from_slice(id.setting_columns());
                expected.push(id.outcome_column());
                expected.push("count");
                if header != expected {
                    return Err(TomoError::InvalidParameter(format!("header {header:?} does not match scheme {}", id.as_str())));
                }
                scheme = Some(id);
            }
            Some(s) if s != id => return Err(TomoError::InvalidParameter("mixed schemes in one record file".into())),
            _ => {}
        }
        let width = id.setting_columns().len();
        if row.len() != width + 3 {
            return Err(TomoError::InvalidParameter(format!("record has {} fields, expected {}", row.len(), width + 3)));
        }
        let num = |k: usize| -> Result<f64> {
            let v: f64 = row[k].trim().parse().map_err(|_| TomoError::InvalidParameter(format!("bad number '{}'", &row[k])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(TomoError::InvalidParameter(format!("non-finite value '{}'", &row[k])))
            }
        };
        let setting = (1..=width).map(num).collect::<Result<Vec<_>>>()?;
        let outcome = num(width + 1)?;
        let count: u64 = row[width + 2].trim().parse().map_err(|_| TomoError::InvalidParameter(format!("bad count '{}'", &row[width + 2])))?;
        records.push(MeasurementRecord { scheme: id, setting, outcome, count });
    }
    let scheme = scheme.ok_or_else(|| TomoError::InvalidParameter("record file has no data rows".into()))?;
    Ok((scheme, records))
}

fn csv_err(e: csv::Error) -> TomoError {
    TomoError::InvalidParameter(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::c64;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sphere_moments() {
        let mut rng = shard_rng(42, 0);
        let n = 100_000;
        let (mut sz, mut szz, mut sxy) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let d = sample_sphere(&mut rng);
            let v = d.unit_vector();
            sz += v[2];
            szz += v[2] * v[2];
            sxy += v[0] * v[1];
        }
        let n = n as f64;
        assert!((sz / n).abs() <= 0.01);
        assert_abs_diff_eq!(szz / n, 1.0 / 3.0, epsilon = 0.01);
        assert!((sxy / n).abs() <= 0.01);
    }

    #[test]
    fn sphere_is_deterministic() {
        let a: Vec<_> = {
            let mut r = shard_rng(9, 3);
            (0..10).map(|_| sample_sphere(&mut r)).collect()
        };
        let b: Vec<_> = {
            let mut r = shard_rng(9, 3);
            (0..10).map(|_| sample_sphere(&mut r)).collect()
        };
        assert_eq!(a, b);
        let c: Vec<_> = {
            let mut r = shard_rng(9, 4);
            (0..10).map(|_| sample_sphere(&mut r)).collect()
        };
        assert_ne!(a, c);
    }

    #[test]
    fn categorical_examples() {
        let mut rng = shard_rng(1, 0);
        for _ in 0..1000 {
            assert_eq!(sample_categorical(&[1.0, 0.0, 0.0], &mut rng).unwrap(), 0);
        }
        let draws = 100_000;
        let ones = (0..draws).filter(|_| sample_categorical(&[1.0, 1.0], &mut rng).unwrap() == 1).count();
        assert_abs_diff_eq!(ones as f64 / draws as f64, 0.5, epsilon = 0.01);
        assert!(sample_categorical(&[0.3, -1e-12, 0.7], &mut rng).is_ok());
        assert!(sample_categorical(&[0.3, -1e-3], &mut rng).is_err());
        assert!(matches!(sample_categorical(&[0.0, 0.0], &mut rng), Err(TomoError::ZeroMass)));
    }

    #[test]
    fn zero_bins_are_never_drawn() {
        let mut rng = shard_rng(2, 0);
        let cdf = InverseCdf::new(&[0.0, 0.5, 0.0, 0.0, 0.5, 0.0]).unwrap();
        for _ in 0..10_000 {
            let k = cdf.sample(&mut rng);
            assert!(k == 1 || k == 4, "drew empty bin {k}");
        }
    }

    #[test]
    fn inverse_cdf_examples() {
        let mut rng = shard_rng(3, 0);
        let grid: Vec<f64> = (0..201).map(|i| -1.0 + 0.01 * i as f64).collect();
        let mut delta = vec![0.0; 201];
        delta[37] = 2.0;
        for _ in 0..100 {
            assert_eq!(sample_inverse_cdf(&delta, &grid, &mut rng).unwrap(), grid[37]);
        }
        let uniform = vec![1.0; 201];
        let n = 100_000;
        let mean = (0..n).map(|_| sample_inverse_cdf(&uniform, &grid, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02);

        // vacuum homodyne density sqrt(2/π) e^{-2x²} has variance 1/4
        let grid: Vec<f64> = (0..801).map(|i| -4.0 + 0.01 * i as f64).collect();
        let pdf: Vec<f64> = grid.iter().map(|x| (2.0 / PI).sqrt() * (-2.0 * x * x).exp()).collect();
        let cdf = InverseCdf::new(&pdf).unwrap();
        let xs: Vec<f64> = (0..n).map(|_| grid[cdf.sample(&mut rng)]).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
        assert_abs_diff_eq!(v, 0.25, epsilon = 0.01);
        assert!(sample_inverse_cdf(&[0.0; 3], &[0.0, 1.0, 2.0], &mut rng).is_err());
    }

    #[test]
    fn accumulator_constant_stream() {
        let m = ComplexMatrix::from_fn(3, |i, j| c64(i as f64, j as f64 - 0.5));
        let acc = mc_accumulate(std::iter::repeat_n(m.clone(), 100)).unwrap();
        assert!((&acc.accumulator.mean() - &m).max_abs() < 1e-14);
        assert!(acc.accumulator.stderr().iter().flatten().all(|&s| s < 1e-12));
        let shots: Vec<u64> = acc.checkpoints.iter().map(|c| c.0).collect();
        assert_eq!(shots, vec![1, 2, 4, 8, 16, 32, 64]);
    }

    #[test]
    fn accumulator_alternating_stream() {
        let m = ComplexMatrix::from_fn(2, |i, j| c64(1.0 + i as f64, -(j as f64)));
        for &n in &[100usize, 400, 1600] {
            let terms = (0..n).map(|k| if k % 2 == 0 { m.clone() } else { m.scale_real(-1.0) });
            let acc = mc_accumulate(terms).unwrap().accumulator;
            assert!(acc.mean().max_abs() < 1e-12);
            // sample variance of ±z is |z|² n/(n-1)
            let se = acc.stderr();
            for i in 0..2 {
                for j in 0..2 {
                    let expected = m[(i, j)].norm() / ((n - 1) as f64).sqrt();
                    assert_abs_diff_eq!(se[i][j], expected, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn accumulator_rejects_dimension_drift() {
        let terms = vec![ComplexMatrix::identity(2), ComplexMatrix::identity(3)];
        assert!(mc_accumulate(terms).is_err());
    }

    #[test]
    fn sharded_merge_matches_single_stream() {
        let mut rng = shard_rng(5, 0);
        let terms: Vec<ComplexMatrix> = (0..1000)
            .map(|_| ComplexMatrix::from_fn(3, |_, _| c64(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))))
            .collect();
        let single = mc_accumulate(terms.clone()).unwrap();
        let a = mc_accumulate(terms[..613].to_vec()).unwrap();
        let b = mc_accumulate(terms[613..].to_vec()).unwrap();
        let merged = merge_shards(&[a, b]).unwrap();
        assert!((&single.accumulator.mean() - &merged.accumulator.mean()).max_abs() < 1e-12);
        let (s1, s2) = (single.accumulator.stderr(), merged.accumulator.stderr());
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(s1[i][j], s2[i][j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sharded_runs_are_deterministic() {
        let job = |rng: &mut SimRng, n: u64, _k: usize| (0..n).map(|_| rng.gen::<u64>()).collect::<Vec<_>>();
        let a = run_sharded(77, 1001, 4, job);
        let b = run_sharded(77, 1001, 4, job);
        assert_eq!(a, b);
        assert_eq!(a.iter().map(Vec::len).collect::<Vec<_>>(), vec![251, 250, 250, 250]);
    }

    #[test]
    fn bootstrap_of_identical_units_is_zero() {
        let units = vec![(1.0, ComplexMatrix::identity(2)); 8];
        let se = bootstrap_stderr(&units, BOOTSTRAP_RESAMPLES, 1, |m| Some(m[(0, 0)].re)).unwrap();
        assert!(se < 1e-14);
        assert!(bootstrap_stderr(&units[..1], 200, 1, |_| Some(0.0)).is_none());
    }

    #[test]
    fn records_round_trip() {
        let recs = vec![
            MeasurementRecord { scheme: SchemeId::Homodyne, setting: vec![0.1], outcome: -2.5, count: 3 },
            MeasurementRecord { scheme: SchemeId::Homodyne, setting: vec![1.0 / 3.0], outcome: 0.1 + 0.2, count: 0 },
        ];
        let mut buf = Vec::new();
        write_records(&mut buf, SchemeId::Homodyne, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("scheme,phi,x,count\n"));
        let (id, back) = read_records(buf.as_slice()).unwrap();
        assert_eq!(id, SchemeId::Homodyne);
        assert_eq!(back, recs);
    }

    #[test]
    fn records_reject_bad_input() {
        assert!(read_records("".as_bytes()).is_err());
        assert!(read_records("scheme,phi,x,count\n".as_bytes()).is_err());
        assert!(read_records("scheme,theta,x,count\nhomodyne,0.1,0.2,3\n".as_bytes()).is_err());
        assert!(read_records("scheme,phi,x,count\nhomodyne,0.1,0.2,-3\n".as_bytes()).is_err());
        assert!(read_records("scheme,phi,x,count\nhomodyne,0.1,NaN,3\n".as_bytes()).is_err());
        assert!(read_records("scheme,phi,x,count\nbogus,0.1,0.2,3\n".as_bytes()).is_err());
    }

    #[test]
    fn moments_match_accumulator() {
        let terms: Vec<ComplexMatrix> = (0..7)
            .map(|k| ComplexMatrix::from_fn(2, |i, j| C64::new(k as f64 * (i + 1) as f64, (j as f64) - k as f64 * 0.5)))
            .collect();
        let acc = mc_accumulate(terms.clone()).unwrap().accumulator;
        let n = terms.len() as f64;
        let second: Vec<Vec<f64>> =
            (0..2).map(|a| (0..2).map(|b| terms.iter().map(|t| t[(a, b)].norm_sqr()).sum::<f64>() / n).collect()).collect();
        let est = SampledEstimate::from_moments(acc.mean(), &second, terms.len() as u64);
        for (x, y) in est.stderr.iter().flatten().zip(acc.stderr().iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn prefix_snapshots_weight_by_shots() {
        let a = ComplexMatrix::identity(2);
        let b = ComplexMatrix::zeros(2);
        let snaps = shard_prefix_snapshots(&[(1, a.clone()), (0, a.clone()), (3, b)]);
        assert_eq!(snaps.len(), 2);
        assert_eq!(snaps[1].0, 4);
        assert!((snaps[1].1[(0, 0)].re - 0.25).abs() < 1e-15);
    }

    #[test]
    fn mode_parses() {
        assert_eq!("exact".parse::<Mode>().unwrap(), Mode::Exact);
        assert_eq!("sampled".parse::<Mode>().unwrap(), Mode::Sampled);
        assert!("other".parse::<Mode>().is_err());
    }
}
