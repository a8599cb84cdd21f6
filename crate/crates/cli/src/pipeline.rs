//! `run`, `ingest` and `verify-frame`. Each returns the full artifact set;
//! nothing is written here.

use std::f64::consts::PI;

use gtomo_core::displaced_counting::{bw_estimate_from_records, counting_frame, photon_cutoff, reconstruct_bw_sharded, simulate_bw_records, AlphaGrid};
use gtomo_core::frames::{pauli_frame, OperatorFrame, EXACT_FRAME_TOL};
use gtomo_core::homodyne::{displacement_frame, reconstruct_homodyne_sharded, simulate_homodyne_records, HomodyneKernel};
use gtomo_core::numerics::{fidelity, random_operator, trace_distance, MatrixJson};
use gtomo_core::oscillator::DiskLattice;
use gtomo_core::simulate::{
    bootstrap_stderr, sample_sphere, shard_rng, shard_sizes, Checkpoint, Mode, BOOTSTRAP_RESAMPLES, RNG_ALGORITHM,
};
use gtomo_core::spin::{
    haar_frame, random_finite_labels, reconstruct_spin_finite, reconstruct_spin_finite_records, reconstruct_spin_quadrature,
    simulate_spin_sphere_records, spin_sphere_from_records, FiniteSpinFrame, SpinFrame,
};
use gtomo_core::{ComplexMatrix, DensityMatrix, FockSpace, MeasurementRecord, ReconstructionResult, SchemeId, SpinSystem};
use rand::Rng;
use serde::Serialize;

use crate::artifacts::{ArtifactSet, Check, EstimateFile, FrameReport, KTildeCheck, Metrics};
use crate::config::{defaults, FrameSpec, Plan, Scheme, Setup};
use crate::{CliError, Result};

/// Result of a command: the files to write and a one-line summary.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub artifacts: ArtifactSet,
    pub summary: String,
    /// False when a verified identity exceeds its tolerance.
    pub passed: bool,
}

fn record_scheme(scheme: Scheme) -> Result<SchemeId> {
    Ok(match scheme {
        Scheme::SpinSphere => SchemeId::SpinSphere,
        Scheme::SpinFinite => SchemeId::SpinFinite,
        Scheme::Homodyne => SchemeId::Homodyne,
        Scheme::DisplacedCount => SchemeId::DisplacedCount,
        Scheme::VerifyFrame => return Err(CliError::Config("verify-frame has no measurement records".into())),
    })
}

/// Sphere estimate from records; the convergence trace comes from the
/// power-of-two checkpoints when the true state is known.
fn spin_sphere_estimate(sys: &SpinSystem, records: &[MeasurementRecord], truth: Option<&DensityMatrix>) -> Result<ReconstructionResult> {
    let (acc, checkpoints) = spin_sphere_from_records(sys, records)?;
    let r = ReconstructionResult::sampled(acc.mean(), acc.count(), acc.stderr())?;
    Ok(match truth {
        Some(t) => r.with_trace(t, &checkpoints)?,
        None => r,
    })
}

fn spin_k_tilde(sys: &SpinSystem) -> Result<KTildeCheck> {
    let frame = haar_frame(sys, &SpinFrame::for_spin(sys.two_s()))?;
    Ok(KTildeCheck { expected: 1.0 / sys.dim() as f64, estimated: frame.k_tilde()? })
}

fn homodyne_k_tilde(space: &FockSpace) -> Result<KTildeCheck> {
    let frame = displacement_frame(space, &DiskLattice::new(6.0, 120)?)?;
    Ok(KTildeCheck { expected: PI, estimated: frame.k_tilde()? })
}

fn counting_k_tilde(space: &FockSpace, grid: &AlphaGrid) -> Result<KTildeCheck> {
    let frame = counting_frame(space, grid)?;
    Ok(KTildeCheck { expected: PI / (2.0 * (1.0 - grid.y.cos())), estimated: frame.k_tilde()? })
}

struct Reconstruction {
    result: ReconstructionResult,
    records: Option<Vec<MeasurementRecord>>,
    k_tilde: Option<KTildeCheck>,
    photon_cutoff: Option<usize>,
}

fn finish(plan: &Plan, source: &str, rec: Reconstruction) -> Result<Outcome> {
    let scheme = record_scheme(plan.scheme)?;
    let r = &rec.result;
    let (fid, td) = match &plan.truth {
        Some(t) => (Some(fidelity(t, &r.symmetrized)?), Some(trace_distance(t, &r.symmetrized)?)),
        None => (None, None),
    };
    let trace = match (&plan.truth, r.trace.is_empty()) {
        (Some(_), true) => vec![Checkpoint { shots: r.shots, fidelity: fid.unwrap_or(f64::NAN), trace_distance: td.unwrap_or(f64::NAN) }],
        _ => r.trace.clone(),
    };
    let metrics = Metrics {
        scheme: plan.scheme.to_string(),
        source: source.to_string(),
        mode: if source == "records" { Mode::Sampled } else { plan.mode },
        state: plan.state.as_ref().map(|s| s.to_string()),
        dim: r.estimate.dim(),
        shots: r.shots,
        seed: plan.seed,
        shards: plan.shards,
        rng: RNG_ALGORITHM.to_string(),
        fidelity: fid,
        trace_distance: td,
        fidelity_stderr: r.fidelity_stderr,
        max_stderr: r.max_stderr(),
        hermitian_deviation: r.estimate.hermitian_deviation(),
        k_tilde: rec.k_tilde,
        photon_cutoff: rec.photon_cutoff,
    };
    let summary = match (fid, td) {
        (Some(f), Some(d)) => format!("{} ({source}): dim {}, shots {}, fidelity {f:.9}, trace distance {d:.3e}", plan.scheme, metrics.dim, r.shots),
        _ => format!("{} ({source}): dim {}, shots {}", plan.scheme, metrics.dim, r.shots),
    };
    let artifacts = ArtifactSet {
        rho_true: plan.truth.as_ref().map(|t| MatrixJson::from(t.matrix())),
        rho_est: Some(EstimateFile::new(scheme.as_str(), r)),
        metrics: Some(serde_json::to_value(&metrics)?),
        trace: Some(trace),
        records: rec.records.map(|v| (scheme, v)),
    };
    Ok(Outcome { artifacts, summary, passed: true })
}

fn truth(plan: &Plan) -> Result<&DensityMatrix> {
    plan.truth.as_ref().ok_or_else(|| CliError::Config(format!("scheme {} needs a 'state'", plan.scheme)))
}

/// Simulates (or computes exactly) and reconstructs the configured state.
pub fn run(plan: &Plan) -> Result<Outcome> {
    let rho = truth(plan)?;
    let sampled = plan.mode == Mode::Sampled;
    let rec = match &plan.setup {
        Setup::SpinSphere { sys, frame } => {
            if sampled {
                let records = simulate_spin_sphere_records(rho, sys, plan.shots, plan.seed, plan.shards)?;
                let mut result = spin_sphere_estimate(sys, &records, Some(rho))?;
                let mut units = Vec::new();
                let mut start = 0usize;
                for n in shard_sizes(plan.shots, plan.shards) {
                    let chunk = &records[start..start + n as usize];
                    start += n as usize;
                    if !chunk.is_empty() {
                        let (acc, _) = spin_sphere_from_records(sys, chunk)?;
                        units.push((acc.count() as f64, acc.mean()));
                    }
                }
                result.fidelity_stderr = bootstrap_stderr(&units, BOOTSTRAP_RESAMPLES, plan.seed, |m| {
                    DensityMatrix::from_estimate(m).ok().and_then(|d| fidelity(rho, &d).ok())
                });
                Reconstruction { result, records: Some(records), k_tilde: Some(spin_k_tilde(sys)?), photon_cutoff: None }
            } else {
                let result = reconstruct_spin_quadrature(rho, sys, frame)?;
                Reconstruction { result, records: None, k_tilde: Some(spin_k_tilde(sys)?), photon_cutoff: None }
            }
        }
        Setup::SpinFinite { sys, mode, label_seed } => {
            let labels = random_finite_labels(sys, *mode, *label_seed)?;
            if sampled {
                let per_label = plan.shots / labels.len() as u64;
                if per_label == 0 {
                    return Err(CliError::Config(format!("spin-finite needs at least {} shots (one per label)", labels.len())));
                }
                let frame = FiniteSpinFrame::new(sys, labels, *mode)?;
                let records = frame.simulate_records(sys, rho, per_label, plan.seed)?;
                let result = reconstruct_spin_finite_records(sys, *mode, &records)?;
                Reconstruction { result, records: Some(records), k_tilde: Some(spin_k_tilde(sys)?), photon_cutoff: None }
            } else {
                let result = reconstruct_spin_finite(rho, sys, labels, *mode)?;
                Reconstruction { result, records: None, k_tilde: Some(spin_k_tilde(sys)?), photon_cutoff: None }
            }
        }
        Setup::Homodyne { space, grid } => {
            let result = reconstruct_homodyne_sharded(rho, space, grid, plan.mode, plan.shots, plan.seed, plan.shards)?;
            let records = if sampled { Some(simulate_homodyne_records(rho, grid, plan.shots, plan.seed, plan.shards)?) } else { None };
            Reconstruction { result, records, k_tilde: Some(homodyne_k_tilde(space)?), photon_cutoff: None }
        }
        Setup::DisplacedCount { space, grid } => {
            let result = reconstruct_bw_sharded(rho, space, grid, plan.mode, plan.shots, plan.seed, plan.shards)?;
            let records = if sampled { Some(simulate_bw_records(rho, space, grid, plan.shots, plan.seed, plan.shards)?) } else { None };
            Reconstruction { result, records, k_tilde: Some(counting_k_tilde(space, grid)?), photon_cutoff: Some(photon_cutoff(rho, grid)) }
        }
        Setup::VerifyFrame { .. } => return Err(CliError::Config("use the verify-frame command for scheme verify-frame".into())),
    };
    finish(plan, "simulated", rec)
}

fn check_settings(plan: &Plan, records: &[MeasurementRecord]) -> Result<()> {
    for (i, r) in records.iter().enumerate() {
        let inside = match &plan.setup {
            Setup::Homodyne { grid, .. } => r.outcome.abs() <= grid.x_max * (1.0 + 1e-12),
            Setup::DisplacedCount { grid, .. } => r.setting[0].hypot(r.setting[1]) <= grid.lattice.radius() * (1.0 + 1e-12),
            _ => true,
        };
        if !inside {
            return Err(CliError::Config(format!("record {i} lies outside the configured grid")));
        }
    }
    Ok(())
}

/// Reconstructs from measured records; observed frequencies replace the
/// exact probabilities. The configured state, if any, is only used for metrics.
pub fn ingest(plan: &Plan, scheme: SchemeId, records: &[MeasurementRecord]) -> Result<Outcome> {
    let expected = record_scheme(plan.scheme)?;
    if scheme != expected {
        return Err(CliError::Config(format!("records are {} but the config scheme is {}", scheme.as_str(), expected.as_str())));
    }
    check_settings(plan, records)?;
    let result = match &plan.setup {
        Setup::SpinSphere { sys, .. } => spin_sphere_estimate(sys, records, plan.truth.as_ref())?,
        Setup::SpinFinite { sys, mode, .. } => reconstruct_spin_finite_records(sys, *mode, records)?,
        Setup::Homodyne { space, grid } => HomodyneKernel::new(space, grid.k_max, grid.x_max)?.estimate_from_records(records)?.into_result()?,
        Setup::DisplacedCount { space, grid } => bw_estimate_from_records(space, grid.y, grid.area(), records)?.into_result()?,
        Setup::VerifyFrame { .. } => unreachable!("rejected by record_scheme"),
    };
    finish(plan, "records", Reconstruction { result, records: None, k_tilde: None, photon_cutoff: None })
}

fn random_label(spec: &FrameSpec, rng: &mut impl Rng) -> Vec<f64> {
    match spec {
        FrameSpec::Pauli => vec![rng.gen_range(0..4) as f64],
        FrameSpec::SpinHaar { .. } => {
            let n = sample_sphere(rng);
            vec![n.theta, n.phi, rng.gen_range(0.0..2.0 * PI)]
        }
        FrameSpec::Displacement { .. } | FrameSpec::DisplacedCount { .. } => vec![rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7)],
    }
}

fn build_frame(spec: &FrameSpec) -> Result<(OperatorFrame, f64, f64, f64)> {
    // (frame, expected k̃, k̃ tolerance, covariance tolerance)
    Ok(match spec {
        FrameSpec::Pauli => (pauli_frame(), 2.0, 1e-12, EXACT_FRAME_TOL),
        FrameSpec::SpinHaar { two_s } => {
            let sys = SpinSystem::new(*two_s);
            (haar_frame(&sys, &SpinFrame::for_spin(*two_s))?, 1.0 / sys.dim() as f64, 1e-10, EXACT_FRAME_TOL)
        }
        FrameSpec::Displacement { nmax, radius, steps } => {
            (displacement_frame(&FockSpace::new(*nmax), &DiskLattice::new(*radius, *steps)?)?, PI, 1e-3, 1e-5)
        }
        FrameSpec::DisplacedCount { nmax, radius, steps, y } => {
            let grid = AlphaGrid::new(*radius, *steps, *y)?;
            (counting_frame(&FockSpace::new(*nmax), &grid)?, PI / (2.0 * (1.0 - y.cos())), 1e-3, 1e-5)
        }
    })
}

fn check(name: &str, value: f64, tolerance: f64) -> Check {
    Check { name: name.to_string(), value, tolerance, passed: value <= tolerance }
}

/// Numerically verifies the frame identities of the configured frame.
pub fn verify_frame(plan: &Plan) -> Result<Outcome> {
    let (spec, trials) = match &plan.setup {
        Setup::VerifyFrame { frame, trials } => (frame, *trials),
        _ => return Err(CliError::Config(format!("verify-frame needs scheme verify-frame, got {}", plan.scheme))),
    };
    let (frame, expected, k_tol, cov_tol) = build_frame(spec)?;
    let k = frame.k_tilde()?;
    let mut op_rng = shard_rng(plan.seed, 1);
    let mut trace_res: f64 = 0.0;
    let mut closure_res: f64 = 0.0;
    for _ in 0..trials {
        let a: ComplexMatrix = random_operator(&mut op_rng, frame.dim());
        trace_res = trace_res.max(frame.trace_identity_residual(&a)?);
        closure_res = closure_res.max(frame.closure_residual(&a)?);
    }
    // truncated products only commute with the group near the bottom of a
    // much larger space, so oscillator frames are lifted for this check
    let lifted = spec.lifted(defaults::COVARIANCE_NMAX).map(|s| build_frame(&s)).transpose()?;
    let cov_frame = lifted.as_ref().map_or(&frame, |l| &l.0);
    let mut label_rng = shard_rng(plan.seed, 2);
    let mut cov: f64 = 0.0;
    let mut adj: f64 = 0.0;
    for _ in 0..trials {
        let g = random_label(spec, &mut label_rng);
        let h = random_label(spec, &mut label_rng);
        cov = cov.max(cov_frame.covariance_residual(&g, &h)?);
        adj = adj.max(cov_frame.adjoint_covariance_residual(&g, &h)?);
    }
    let checks = vec![
        check("k_tilde", (k - expected).abs(), k_tol),
        check("k_tilde_invariance", frame.k_tilde_invariance(trials, plan.seed)?, k_tol.max(frame.tolerance())),
        check("trace_identity_residual", trace_res, frame.tolerance()),
        check("closure_residual", closure_res, frame.tolerance()),
        check("covariance_residual", cov, cov_tol),
        check("adjoint_covariance_residual", adj, cov_tol),
    ];
    let passed = checks.iter().all(|c| c.passed);
    let report = FrameReport {
        frame: frame.name().to_string(),
        dim: frame.dim(),
        elements: frame.len(),
        k_tilde: KTildeCheck { expected, estimated: k },
        checks,
        passed,
    };
    let summary = format!(
        "{}: k~ = {k:.12} (expected {expected:.12}), closure residual {closure_res:.3e}, {}",
        report.frame,
        if passed { "all checks passed" } else { "CHECKS FAILED" }
    );
    Ok(Outcome { artifacts: ArtifactSet { metrics: Some(serialize(&report)?), ..Default::default() }, summary, passed })
}

fn serialize<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}
