//! Residual energy of an initial condition.
//!
//! The residual energy of a point is half the squared Frobenius distance
//! between the linear fit of the trajectory launched there and a reference
//! Jacobian at the origin. It is finite on the region of attraction, blows
//! up towards and beyond its boundary, and is squashed into `[0, 1]` by the
//! hyperbolic tangent before driving the boundary flow.
//!
//! Escaping trajectories map straight to infinite energy rather than to a
//! huge finite misfit, and so do trajectories that fail the excitation
//! check: a point whose trajectory is not exciting cannot certify
//! attraction.
//!
//! The reference Jacobian either comes from the field's registered analytic
//! Jacobian or is estimated from data by averaging fits over trajectories
//! started on a small sphere around the origin.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::estimator::{self, default_pe_tol, gram_matrices, pe_check};
use crate::exec;
use crate::integrator::{integrate, IntegrationControls, Termination};
use crate::systems::VectorField;
use crate::textio::fmt_g17;
use crate::{Error, Result};

/// Outcome class of a residual-energy evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyStatus {
    Ok,
    Escaped,
    PeFailed,
}

impl EnergyStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EnergyStatus::Ok => "ok",
            EnergyStatus::Escaped => "escaped",
            EnergyStatus::PeFailed => "pe_failed",
        }
    }
}

/// Residual energy value with its squashed form and provenance.
#[derive(Debug, Clone)]
pub struct ResidualEnergy {
    /// Nonnegative, `f64::INFINITY` allowed.
    pub value: f64,
    /// `tanh(value)`, with infinity mapped to 1.
    pub squashed: f64,
    /// Reference matrix the fit was compared against.
    pub a_ref: DMatrix<f64>,
    pub horizon: f64,
    pub status: EnergyStatus,
}

/// Where the reference Jacobian comes from.
#[derive(Debug, Clone)]
pub enum ARefSource {
    /// Use the field's registered analytic Jacobian.
    Analytic,
    /// Average fits over `probes` trajectories started uniformly on the
    /// sphere of radius `eps`.
    DataDriven { eps: f64, probes: usize, seed: u64 },
}

/// Horizon, sampling and integration settings for energy evaluations.
#[derive(Debug, Clone)]
pub struct EnergyConfig {
    pub horizon: f64,
    pub dt: f64,
    pub a_ref: ARefSource,
    pub controls: IntegrationControls,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        // 40 samples at dt = 0.1.
        Self {
            horizon: 3.9,
            dt: 0.1,
            a_ref: ARefSource::DataDriven {
                eps: 0.1,
                probes: 8,
                seed: 0,
            },
            controls: IntegrationControls::default(),
        }
    }
}

impl EnergyConfig {
    pub(crate) fn integration_controls(&self) -> IntegrationControls {
        IntegrationControls {
            dt: self.dt,
            ..self.controls.clone()
        }
    }
}

/// Squashes a nonnegative extended real into `[0, 1]` by `tanh`; infinity
/// maps to exactly 1. Negative inputs are refused.
pub fn squash(value: f64) -> Result<f64> {
    if value.is_nan() || value < 0.0 {
        return Err(Error::NegativeEnergy(value));
    }
    if value.is_infinite() {
        return Ok(1.0);
    }
    Ok(value.tanh())
}

/// Resolves the reference Jacobian for a field according to the source.
pub fn resolve_a_ref(field: &VectorField, cfg: &EnergyConfig) -> Result<DMatrix<f64>> {
    match cfg.a_ref {
        ARefSource::Analytic => field
            .jacobian_at_origin()
            .ok_or_else(|| Error::JacobianUnavailable(field.id().to_string())),
        ARefSource::DataDriven { eps, probes, seed } => estimate_jacobian_near_origin(
            field,
            eps,
            probes,
            seed,
            cfg.horizon,
            cfg.dt,
            &cfg.controls,
        ),
    }
}

/// Estimates the Jacobian at the origin from data: averages the linear fits
/// of `probes` trajectories started uniformly on the sphere of radius `eps`.
/// Probes that fail the excitation check are skipped; the call errors only
/// when every probe fails.
pub fn estimate_jacobian_near_origin(
    field: &VectorField,
    eps: f64,
    probes: usize,
    seed: u64,
    horizon: f64,
    dt: f64,
    controls: &IntegrationControls,
) -> Result<DMatrix<f64>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "probe radius must be positive, got {eps}"
        )));
    }
    if probes == 0 {
        return Err(Error::InvalidConfig("need at least one probe".into()));
    }
    let n = field.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = Vec::with_capacity(probes);
    for _ in 0..probes {
        starts.push(sphere_point(&mut rng, n, eps));
    }

    let controls = IntegrationControls {
        dt,
        ..controls.clone()
    };
    let fits: Vec<Result<DMatrix<f64>>> = exec::map_collect(&starts, |x0| {
        let traj = integrate(field, x0, horizon, &controls)?;
        let g = gram_matrices(&traj)?;
        let report = pe_check(&g, default_pe_tol(&g));
        if !report.excited {
            return Err(Error::ExcitationFailure {
                lambda_min: report.lambda_min,
                tol: default_pe_tol(&g),
            });
        }
        estimator::solve_gram(&g)
    });

    let mut acc = DMatrix::zeros(n, n);
    let mut ok = 0usize;
    for fit in fits.into_iter().flatten() {
        acc += fit;
        ok += 1;
    }
    if ok == 0 {
        return Err(Error::AllProbesFailed(probes));
    }
    Ok(acc / ok as f64)
}

fn sphere_point(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-6 {
            return v * (radius / norm);
        }
    }
}

/// Evaluates the residual energy of one initial condition against `a_ref`.
///
/// Escaped trajectories and excitation failures report infinite energy with
/// the corresponding status instead of erroring; only non-finite input is an
/// error.
pub fn residual_energy(
    field: &VectorField,
    x0: &DVector<f64>,
    a_ref: &DMatrix<f64>,
    cfg: &EnergyConfig,
) -> Result<ResidualEnergy> {
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("energy evaluation point"));
    }
    let n = field.dimension();
    if a_ref.nrows() != n || a_ref.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a_ref.nrows(),
        });
    }

    let saturated = |status: EnergyStatus| ResidualEnergy {
        value: f64::INFINITY,
        squashed: 1.0,
        a_ref: a_ref.clone(),
        horizon: cfg.horizon,
        status,
    };

    let traj = integrate(field, x0, cfg.horizon, &cfg.integration_controls())?;
    if traj.termination == Termination::Escaped {
        return Ok(saturated(EnergyStatus::Escaped));
    }
    if traj.len() < 2 {
        return Ok(saturated(EnergyStatus::PeFailed));
    }
    let g = gram_matrices(&traj)?;
    let report = pe_check(&g, default_pe_tol(&g));
    if !report.excited {
        return Ok(saturated(EnergyStatus::PeFailed));
    }
    let a_hat = match estimator::solve_gram(&g) {
        Ok(a) => a,
        Err(Error::ExcitationFailure { .. }) => return Ok(saturated(EnergyStatus::PeFailed)),
        Err(e) => return Err(e),
    };
    let value = 0.5 * (a_hat - a_ref).norm_squared();
    Ok(ResidualEnergy {
        squashed: squash(value)?,
        value,
        a_ref: a_ref.clone(),
        horizon: cfg.horizon,
        status: EnergyStatus::Ok,
    })
}

/// Batch evaluation over many points; parallel under the `parallel` feature,
/// results in input order either way.
pub fn residual_energies(
    field: &VectorField,
    points: &[DVector<f64>],
    a_ref: &DMatrix<f64>,
    cfg: &EnergyConfig,
) -> Vec<Result<ResidualEnergy>> {
    exec::map_collect(points, |x0| residual_energy(field, x0, a_ref, cfg))
}

/// Sequential batch evaluation, independent of feature flags.
pub fn residual_energies_seq(
    field: &VectorField,
    points: &[DVector<f64>],
    a_ref: &DMatrix<f64>,
    cfg: &EnergyConfig,
) -> Vec<Result<ResidualEnergy>> {
    exec::map_collect_seq(points, |x0| residual_energy(field, x0, a_ref, cfg))
}

/// Rectangular evaluation grid for heatmap exports.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub x1_min: f64,
    pub x1_max: f64,
    pub x2_min: f64,
    pub x2_max: f64,
    /// Points per axis.
    pub res: usize,
}

pub struct GridSample {
    pub x1: f64,
    pub x2: f64,
    pub energy: ResidualEnergy,
}

/// Evaluates the residual energy over a planar grid, row-major in `x1`.
pub fn energy_grid(
    field: &VectorField,
    a_ref: &DMatrix<f64>,
    cfg: &EnergyConfig,
    spec: &GridSpec,
) -> Result<Vec<GridSample>> {
    if field.dimension() != 2 {
        return Err(Error::InvalidConfig(
            "energy grids are defined for planar systems".into(),
        ));
    }
    if spec.res < 2 || !(spec.x1_max > spec.x1_min) || !(spec.x2_max > spec.x2_min) {
        return Err(Error::InvalidConfig("malformed grid specification".into()));
    }
    let mut points = Vec::with_capacity(spec.res * spec.res);
    for i in 0..spec.res {
        let x1 = spec.x1_min + (spec.x1_max - spec.x1_min) * i as f64 / (spec.res - 1) as f64;
        for j in 0..spec.res {
            let x2 = spec.x2_min + (spec.x2_max - spec.x2_min) * j as f64 / (spec.res - 1) as f64;
            points.push(DVector::from_vec(vec![x1, x2]));
        }
    }
    let energies = residual_energies(field, &points, a_ref, cfg);
    let mut out = Vec::with_capacity(points.len());
    for (p, e) in points.into_iter().zip(energies) {
        out.push(GridSample {
            x1: p[0],
            x2: p[1],
            energy: e?,
        });
    }
    Ok(out)
}

/// Writes grid samples as CSV: `x1,x2,E,tanhE,status`.
pub fn write_grid_csv<W: Write>(w: &mut W, samples: &[GridSample]) -> Result<()> {
    writeln!(w, "x1,x2,E,tanhE,status")?;
    for s in samples {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_g17(s.x1),
            fmt_g17(s.x2),
            fmt_g17(s.energy.value),
            fmt_g17(s.energy.squashed),
            s.energy.status.as_str()
        )?;
    }
    Ok(())
}
