//! Best linear fit of a vector field along one trajectory.
//!
//! The fit minimizes the integrated squared residual between the sampled
//! derivatives and a linear model of the sampled states. The quadratic
//! structure reduces everything to the two trajectory Gram matrices
//!
//! ```text
//! Gamma1 = ∫ f(s(t)) s(t)^T dt,    Gamma2 = ∫ s(t) s(t)^T dt,
//! ```
//!
//! whose ratio is the unique minimizer whenever `Gamma2` is positive
//! definite, i.e. whenever the trajectory is persistently exciting. The
//! module offers three routes to the minimizer: a symmetric positive
//! definite solve, an explicit-Euler matrix gradient flow, and the
//! sampled-data pseudo-inverse form on raw snapshot matrices.
//!
//! The main quadrature is composite trapezoid, which is second order in the
//! grid spacing. [`discrete_minimizer`] keeps the rectangle rule so that it
//! agrees with `Xdot * pinv(X)` exactly.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::integrator::Trajectory;
use crate::textio::fmt_g17;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureRule {
    /// Composite trapezoid: half weights at both endpoints.
    Trapezoid,
    /// Every sample weighted by `dt`; matches the snapshot pseudo-inverse
    /// form exactly.
    Rectangle,
}

impl QuadratureRule {
    pub fn as_str(self) -> &'static str {
        match self {
            QuadratureRule::Trapezoid => "trapezoid",
            QuadratureRule::Rectangle => "rectangle",
        }
    }
}

/// The trajectory Gram matrices with their quadrature metadata.
///
/// `gamma2` (and `gamma0` when present) are symmetrized after quadrature and
/// are positive semidefinite up to rounding.
#[derive(Debug, Clone)]
pub struct GramMatrices {
    pub gamma1: DMatrix<f64>,
    pub gamma2: DMatrix<f64>,
    /// `∫ f(s) f(s)^T dt`; carries the constant part of the cost.
    pub gamma0: Option<DMatrix<f64>>,
    pub horizon: f64,
    pub dt: f64,
    pub rule: QuadratureRule,
}

impl GramMatrices {
    pub fn dim(&self) -> usize {
        self.gamma2.nrows()
    }
}

/// A fitted linear model with its diagnostics.
#[derive(Debug, Clone)]
pub struct LinearEstimate {
    pub a_hat: DMatrix<f64>,
    /// Initial condition of the trajectory behind the fit, when known.
    pub x0: Option<DVector<f64>>,
    pub lambda_min_gamma2: f64,
    pub residual_cost: f64,
    /// Largest real part over the eigenvalues of `a_hat`.
    pub spectral_abscissa: f64,
    pub horizon: f64,
    pub dt: f64,
}

impl LinearEstimate {
    pub fn dim(&self) -> usize {
        self.a_hat.nrows()
    }

    /// Structured text record: flat `key=value` lines, matrix entries
    /// row-major with 17 significant digits.
    pub fn record(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("n={}\n", self.dim()));
        if let Some(x0) = &self.x0 {
            let cols: Vec<String> = x0.iter().map(|v| fmt_g17(*v)).collect();
            out.push_str(&format!("x0={}\n", cols.join(",")));
        }
        let entries: Vec<String> = self
            .a_hat
            .row_iter()
            .flat_map(|r| r.iter().map(|v| fmt_g17(*v)).collect::<Vec<_>>())
            .collect();
        out.push_str(&format!("a_hat={}\n", entries.join(",")));
        out.push_str(&format!(
            "lambda_min_gamma2={}\n",
            fmt_g17(self.lambda_min_gamma2)
        ));
        out.push_str(&format!("residual_cost={}\n", fmt_g17(self.residual_cost)));
        out.push_str(&format!(
            "spectral_abscissa={}\n",
            fmt_g17(self.spectral_abscissa)
        ));
        out.push_str(&format!("horizon={}\n", fmt_g17(self.horizon)));
        out.push_str(&format!("dt={}\n", fmt_g17(self.dt)));
        out
    }
}

/// Largest real part over the eigenvalues of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest eigenvalue of a symmetric matrix.
fn lambda_min_sym(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn lambda_max_sym(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Computes the trajectory Gram matrices with the trapezoid rule.
pub fn gram_matrices(traj: &Trajectory) -> Result<GramMatrices> {
    gram_matrices_with_rule(traj, QuadratureRule::Trapezoid)
}

pub fn gram_matrices_with_rule(traj: &Trajectory, rule: QuadratureRule) -> Result<GramMatrices> {
    let m = traj.len();
    if m < 2 {
        return Err(Error::TooFewSamples { got: m, need: 2 });
    }
    let derivs = traj.derivatives.as_ref().ok_or(Error::MissingDerivatives)?;
    let dt = traj.grid_spacing()?;
    let n = traj.dim();

    let mut g1 = DMatrix::zeros(n, n);
    let mut g2 = DMatrix::zeros(n, n);
    let mut g0 = DMatrix::zeros(n, n);
    for k in 0..m {
        let w = match rule {
            QuadratureRule::Trapezoid if k == 0 || k == m - 1 => 0.5 * dt,
            _ => dt,
        };
        let s = &traj.states[k];
        let f = &derivs[k];
        for i in 0..n {
            for j in 0..n {
                g1[(i, j)] += w * f[i] * s[j];
                g2[(i, j)] += w * s[i] * s[j];
                g0[(i, j)] += w * f[i] * f[j];
            }
        }
    }
    let g2 = (&g2 + g2.transpose()) * 0.5;
    let g0 = (&g0 + g0.transpose()) * 0.5;

    Ok(GramMatrices {
        gamma1: g1,
        gamma2: g2,
        gamma0: Some(g0),
        horizon: traj.span(),
        dt,
        rule,
    })
}

/// Persistency-of-excitation verdict for a Gram pair.
#[derive(Debug, Clone, Copy)]
pub struct ExcitationReport {
    pub lambda_min: f64,
    pub excited: bool,
}

/// Checks persistency of excitation: the smallest eigenvalue of `Gamma2`
/// must clear `pe_tol`.
pub fn pe_check(g: &GramMatrices, pe_tol: f64) -> ExcitationReport {
    let lambda_min = lambda_min_sym(&g.gamma2);
    ExcitationReport {
        lambda_min,
        excited: lambda_min > pe_tol,
    }
}

/// Relative default threshold, so rescaling the initial condition does not
/// change the verdict.
pub fn default_pe_tol(g: &GramMatrices) -> f64 {
    1e-10 * g.gamma2.trace()
}

/// Solves `a_hat * Gamma2 = Gamma1` by Cholesky. The caller has already
/// checked excitation; a factorization failure still reports as one.
pub(crate) fn solve_gram(g: &GramMatrices) -> Result<DMatrix<f64>> {
    let chol = Cholesky::new(g.gamma2.clone()).ok_or_else(|| Error::ExcitationFailure {
        lambda_min: lambda_min_sym(&g.gamma2),
        tol: default_pe_tol(g),
    })?;
    Ok(chol.solve(&g.gamma1.transpose()).transpose())
}

/// Direct minimizer of the residual cost: solves `a_hat * Gamma2 = Gamma1`
/// and attaches diagnostics from the trajectory.
pub fn minimizer(
    g: &GramMatrices,
    x0: &DVector<f64>,
    traj: &Trajectory,
) -> Result<LinearEstimate> {
    let report = pe_check(g, default_pe_tol(g));
    if !report.excited {
        return Err(Error::ExcitationFailure {
            lambda_min: report.lambda_min,
            tol: default_pe_tol(g),
        });
    }
    let a_hat = solve_gram(g)?;
    let residual_cost = cost(&a_hat, traj)?;
    let spectral_abscissa = spectral_abscissa(&a_hat);
    Ok(LinearEstimate {
        x0: Some(x0.clone()),
        lambda_min_gamma2: report.lambda_min,
        residual_cost,
        spectral_abscissa,
        horizon: g.horizon,
        dt: g.dt,
        a_hat,
    })
}

/// Iterative minimizer: explicit Euler on the matrix flow
/// `B' = Gamma1 - B * Gamma2`, stopping once the residual drops under `tol`
/// in Frobenius norm.
///
/// Stability of the explicit iteration needs `step < 2 / lambda_max(Gamma2)`.
/// The residual cost is recovered from `Gamma0`, which must be present.
pub fn minimizer_gradient_flow(
    g: &GramMatrices,
    b0: &DMatrix<f64>,
    step: f64,
    max_iters: usize,
    tol: f64,
) -> Result<LinearEstimate> {
    let n = g.dim();
    if b0.nrows() != n || b0.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b0.nrows(),
        });
    }
    let report = pe_check(g, default_pe_tol(g));
    if !report.excited {
        return Err(Error::ExcitationFailure {
            lambda_min: report.lambda_min,
            tol: default_pe_tol(g),
        });
    }
    let lambda_max = lambda_max_sym(&g.gamma2);
    if !(step > 0.0) || step >= 2.0 / lambda_max {
        return Err(Error::InvalidConfig(format!(
            "step {step} is outside the stable range (0, {:.6e})",
            2.0 / lambda_max
        )));
    }

    let mut b = b0.clone();
    let mut residual = &g.gamma1 - &b * &g.gamma2;
    let mut iters = 0usize;
    while residual.norm() >= tol {
        if iters >= max_iters {
            return Err(Error::GradientFlowStalled {
                iters,
                residual: residual.norm(),
            });
        }
        b += step * &residual;
        residual = &g.gamma1 - &b * &g.gamma2;
        iters += 1;
    }

    let residual_cost = cost_from_grams(g, &b)?;
    Ok(LinearEstimate {
        x0: None,
        lambda_min_gamma2: report.lambda_min,
        residual_cost,
        spectral_abscissa: spectral_abscissa(&b),
        horizon: g.horizon,
        dt: g.dt,
        a_hat: b,
    })
}

/// Residual cost of a candidate matrix along a trajectory: trapezoid
/// quadrature of `|f(s) - a_bar s|^2`.
pub fn cost(a_bar: &DMatrix<f64>, traj: &Trajectory) -> Result<f64> {
    let m = traj.len();
    if m < 2 {
        return Err(Error::TooFewSamples { got: m, need: 2 });
    }
    let derivs = traj.derivatives.as_ref().ok_or(Error::MissingDerivatives)?;
    let dt = traj.grid_spacing()?;
    let n = traj.dim();
    if a_bar.nrows() != n || a_bar.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a_bar.nrows(),
        });
    }

    let mut acc = 0.0;
    for k in 0..m {
        let w = if k == 0 || k == m - 1 { 0.5 * dt } else { dt };
        let s = &traj.states[k];
        let f = &derivs[k];
        let mut r_sq = 0.0;
        for i in 0..n {
            let mut model = 0.0;
            for j in 0..n {
                model += a_bar[(i, j)] * s[j];
            }
            let r = f[i] - model;
            r_sq += r * r;
        }
        acc += w * r_sq;
    }
    Ok(acc)
}

/// Residual cost expressed through the Gram matrices:
/// `Trace[Gamma0 - B Gamma1^T - Gamma1 B^T + B Gamma2 B^T]`, clamped at zero
/// against rounding. Exact for the same quadrature weights as the Grams.
pub fn cost_from_grams(g: &GramMatrices, b: &DMatrix<f64>) -> Result<f64> {
    let g0 = g.gamma0.as_ref().ok_or(Error::MissingGamma0)?;
    let cross = b * g.gamma1.transpose();
    let quad = b * &g.gamma2 * b.transpose();
    let j = g0.trace() - 2.0 * cross.trace() + quad.trace();
    Ok(j.max(0.0))
}

/// Sampled-data minimizer `Xdot * pinv(X)` on snapshot matrices with states
/// in columns. Equals the rectangle-rule Gram minimizer exactly; the
/// sampling interval cancels.
pub fn discrete_minimizer(x: &DMatrix<f64>, xdot: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.shape() != xdot.shape() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            got: xdot.ncols(),
        });
    }
    let n = x.nrows();
    let svd = x.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let eps = sigma_max * x.nrows().max(x.ncols()) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|s| **s > eps).count();
    if rank < n {
        return Err(Error::RankDeficient { rank, need: n });
    }
    let pinv = svd
        .pseudo_inverse(eps)
        .map_err(|m| Error::InvalidConfig(m.to_string()))?;
    Ok(xdot * pinv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{integrate, IntegrationControls};
    use crate::systems::VectorField;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    fn diag_m1_m2() -> VectorField {
        VectorField::linear(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0])).unwrap()
    }

    fn controls(dt: f64) -> IntegrationControls {
        IntegrationControls {
            dt,
            ..IntegrationControls::default()
        }
    }

    /// Analytic infinite-horizon Grams for diag(-1,-2) from (1,1).
    fn analytic_grams() -> GramMatrices {
        GramMatrices {
            gamma1: DMatrix::from_row_slice(
                2,
                2,
                &[-0.5, -1.0 / 3.0, -2.0 / 3.0, -0.5],
            ),
            gamma2: DMatrix::from_row_slice(2, 2, &[0.5, 1.0 / 3.0, 1.0 / 3.0, 0.25]),
            gamma0: Some(DMatrix::from_row_slice(2, 2, &[0.5, 2.0 / 3.0, 2.0 / 3.0, 1.0])),
            horizon: f64::INFINITY,
            dt: 0.0,
            rule: QuadratureRule::Trapezoid,
        }
    }

    #[test]
    fn grams_match_analytic_integrals() {
        let field = diag_m1_m2();
        let traj = integrate(&field, &v2(1.0, 1.0), 25.0, &controls(1e-3)).unwrap();
        let g = gram_matrices(&traj).unwrap();
        let exact = analytic_grams();
        assert!((g.gamma1 - exact.gamma1).norm() < 1e-5);
        assert!((g.gamma2 - exact.gamma2).norm() < 1e-5);
        assert!((g.gamma0.unwrap() - exact.gamma0.unwrap()).norm() < 1e-5);
    }

    /// Fundamental theorem of calculus on the symmetric part of Gamma1.
    #[test]
    fn grams_symmetry_identity() {
        let field = VectorField::vdp_reverse();
        let x0 = v2(0.5, 0.0);
        let traj = integrate(&field, &x0, 4.0, &controls(1e-3)).unwrap();
        let g = gram_matrices(&traj).unwrap();
        let end = traj.final_state();
        let lhs = &g.gamma1 + g.gamma1.transpose();
        let rhs = end * end.transpose() - &x0 * x0.transpose();
        assert!((lhs - rhs).norm() < 1e-6);
    }

    /// Independent oracle: fixed-step RK4 at a much finer step with
    /// rectangle-rule accumulation, no shared code with the main path.
    #[test]
    fn grams_match_fine_rectangle_oracle() {
        let field = VectorField::vdp_reverse();
        let x0 = v2(0.5, 0.0);
        let traj = integrate(&field, &x0, 40.0, &controls(1e-3)).unwrap();
        let g = gram_matrices(&traj).unwrap();

        let span = traj.span();
        let h = 2e-5;
        let steps = (span / h).round() as usize;
        let mut y = [0.5, 0.0];
        let mut g1 = [[0.0_f64; 2]; 2];
        let mut g2 = [[0.0_f64; 2]; 2];
        let eval = |y: &[f64; 2]| {
            let mut out = [0.0; 2];
            out[0] = -y[1];
            out[1] = y[0] - (1.0 - y[0] * y[0]) * y[1];
            out
        };
        for _ in 0..steps {
            let f = eval(&y);
            for i in 0..2 {
                for j in 0..2 {
                    g1[i][j] += h * f[i] * y[j];
                    g2[i][j] += h * y[i] * y[j];
                }
            }
            let k1 = f;
            let y2 = [y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]];
            let k2 = eval(&y2);
            let y3 = [y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]];
            let k3 = eval(&y3);
            let y4 = [y[0] + h * k3[0], y[1] + h * k3[1]];
            let k4 = eval(&y4);
            for i in 0..2 {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (g.gamma1[(i, j)] - g1[i][j]).abs() < 1e-5,
                    "gamma1[{i}{j}]: {} vs oracle {}",
                    g.gamma1[(i, j)],
                    g1[i][j]
                );
                assert!(
                    (g.gamma2[(i, j)] - g2[i][j]).abs() < 1e-5,
                    "gamma2[{i}{j}]: {} vs oracle {}",
                    g.gamma2[(i, j)],
                    g2[i][j]
                );
            }
        }
    }

    #[test]
    fn pe_check_analytic_lambda_min() {
        let g = analytic_grams();
        let report = pe_check(&g, default_pe_tol(&g));
        // Smallest eigenvalue of [[1/2,1/3],[1/3,1/4]]: (3/4 - sqrt(73)/12)/2.
        let exact = (0.75 - 73.0_f64.sqrt() / 12.0) / 2.0;
        assert_abs_diff_eq!(report.lambda_min, exact, epsilon = 1e-12);
        assert_abs_diff_eq!(report.lambda_min, 0.018999843945103, epsilon = 1e-12);
        assert!(report.excited);
    }

    #[test]
    fn pe_fails_on_invariant_subspace_and_zero_trajectory() {
        let field = diag_m1_m2();
        // Trajectory confined to the x1-axis: rank-1 Gram.
        let traj = integrate(&field, &v2(1.0, 0.0), 10.0, &controls(0.01)).unwrap();
        let g = gram_matrices(&traj).unwrap();
        let report = pe_check(&g, default_pe_tol(&g));
        assert!(!report.excited);
        assert!(report.lambda_min.abs() < 1e-12);

        let zero = integrate(&field, &v2(0.0, 0.0), 1.0, &controls(0.01)).unwrap();
        assert_eq!(zero.len(), 1); // inside the convergence ball at t = 0
    }

    #[test]
    fn minimizer_recovers_linear_fields_exactly() {
        let field = diag_m1_m2();
        let traj = integrate(&field, &v2(1.0, 1.0), 8.0, &controls(0.01)).unwrap();
        let g = gram_matrices(&traj).unwrap();
        let est = minimizer(&g, &traj.origin, &traj).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        assert!((est.a_hat - &a).norm() < 1e-10);
        assert!(est.residual_cost < 1e-18);

        let a3 = DMatrix::from_row_slice(
            3,
            3,
            &[-0.7, 0.3, 0.1, -0.2, -1.1, 0.4, 0.05, -0.3, -0.9],
        );
        let field3 = VectorField::linear(a3.clone()).unwrap();
        let x0 = DVector::from_vec(vec![0.8, -0.5, 0.3]);
        let traj3 = integrate(&field3, &x0, 12.0, &controls(0.01)).unwrap();
        let g3 = gram_matrices(&traj3).unwrap();
        let est3 = minimizer(&g3, &x0, &traj3).unwrap();
        assert!((est3.a_hat - a3).norm() < 1e-9);
    }

    #[test]
    fn minimizer_refuses_unexcited_trajectory() {
        let field = diag_m1_m2();
        let traj = integrate(&field, &v2(1.0, 0.0), 10.0, &controls(0.01)).unwrap();
        let g = gram_matrices(&traj).unwrap();
        assert!(matches!(
            minimizer(&g, &traj.origin, &traj),
            Err(Error::ExcitationFailure { .. })
        ));
    }

    #[test]
    fn minimizer_is_lyapunov_stable_inside_roa() {
        let field = VectorField::vdp_reverse();
        let x0 = v2(0.5, 0.5);
        let traj = integrate(&field, &x0, 120.0, &controls(0.01)).unwrap();
        assert_eq!(
            traj.termination,
            crate::integrator::Termination::ConvergedToOrigin
        );
        let g = gram_matrices(&traj).unwrap();
        let est = minimizer(&g, &x0, &traj).unwrap();
        assert!(est.spectral_abscissa <= 1e-8, "{}", est.spectral_abscissa);
    }

    #[test]
    fn gradient_flow_identity_gamma2_has_explicit_iterates() {
        let gamma1 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let g = GramMatrices {
            gamma0: Some(&gamma1 * gamma1.transpose()),
            gamma1: gamma1.clone(),
            gamma2: DMatrix::identity(2, 2),
            horizon: 1.0,
            dt: 0.1,
            rule: QuadratureRule::Trapezoid,
        };
        // With Gamma2 = I the iterates decouple: B_k = (1 - (1-step)^k) Gamma1.
        let step = 0.5_f64;
        let k = 3_i32;
        let factor = 1.0 - (1.0 - step).powi(k);
        let expected = &gamma1 * factor;
        let reached = minimizer_gradient_flow(
            &g,
            &DMatrix::zeros(2, 2),
            step,
            k as usize,
            (&gamma1 * (1.0 - step).powi(k)).norm() + 1e-12,
        )
        .unwrap();
        assert!((reached.a_hat - expected).norm() < 1e-12);
    }

    #[test]
    fn gradient_flow_fixed_point_needs_no_iterations() {
        let g = analytic_grams();
        let direct = solve_gram(&g).unwrap();
        let est = minimizer_gradient_flow(&g, &direct, 1.0, 0, 1e-10).unwrap();
        assert!((est.a_hat - direct).norm() < 1e-14);
    }

    #[test]
    fn gradient_flow_matches_direct_solve_on_analytic_grams() {
        let g = analytic_grams();
        let est = minimizer_gradient_flow(&g, &DMatrix::zeros(2, 2), 1.0, 100_000, 1e-13).unwrap();
        let diag = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        assert!((est.a_hat - diag).norm() <= 1e-10);
    }

    #[test]
    fn gradient_flow_guards() {
        let g = analytic_grams();
        // Unstable step.
        assert!(matches!(
            minimizer_gradient_flow(&g, &DMatrix::zeros(2, 2), 10.0, 10, 1e-10),
            Err(Error::InvalidConfig(_))
        ));
        // Too few iterations.
        assert!(matches!(
            minimizer_gradient_flow(&g, &DMatrix::zeros(2, 2), 0.1, 2, 1e-12),
            Err(Error::GradientFlowStalled { .. })
        ));
    }

    #[test]
    fn cost_vanishes_for_the_true_linear_model() {
        let field = diag_m1_m2();
        let traj = integrate(&field, &v2(1.0, 1.0), 6.0, &controls(0.05)).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        assert_eq!(cost(&a, &traj).unwrap(), 0.0);
    }

    #[test]
    fn cost_split_identity_and_midpoint_convexity() {
        let field = VectorField::vdp_reverse();
        let traj = integrate(&field, &v2(0.5, 0.5), 4.0, &controls(0.01)).unwrap();
        let g = gram_matrices(&traj).unwrap();
        let a_hat = solve_gram(&g).unwrap();
        let j_hat = cost(&a_hat, &traj).unwrap();

        let a1 = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 0.8, -0.4]);
        let a2 = DMatrix::from_row_slice(2, 2, &[-0.9, 0.1, 1.4, -1.6]);

        for a in [&a1, &a2] {
            let lhs = cost(a, &traj).unwrap() - j_hat;
            let d = a.clone() - &a_hat;
            let rhs = (&d * &g.gamma2 * d.transpose()).trace();
            assert!((lhs - rhs).abs() < 1e-8, "split identity: {lhs} vs {rhs}");
        }

        let mid = (&a1 + &a2) * 0.5;
        let j_mid = cost(&mid, &traj).unwrap();
        let j_avg = 0.5 * (cost(&a1, &traj).unwrap() + cost(&a2, &traj).unwrap());
        assert!(j_mid < j_avg);
    }

    #[test]
    fn quadrature_refinement_is_second_order() {
        let field = VectorField::vdp_reverse();
        let x0 = v2(0.5, 0.0);
        let mut fits = Vec::new();
        for dt in [0.05, 0.025, 0.0125] {
            let mut c = controls(dt);
            c.rtol = 1e-11;
            c.atol = 1e-13;
            let traj = integrate(&field, &x0, 4.0, &c).unwrap();
            let g = gram_matrices(&traj).unwrap();
            fits.push(solve_gram(&g).unwrap());
        }
        let e1 = (&fits[0] - &fits[1]).norm();
        let e2 = (&fits[1] - &fits[2]).norm();
        let order = (e1 / e2).log2();
        assert!(order >= 1.9, "observed order {order:.3}");
    }

    #[test]
    fn discrete_minimizer_rejects_rank_deficiency() {
        let x = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        let xdot = x.clone();
        assert!(matches!(
            discrete_minimizer(&x, &xdot),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn discrete_minimizer_matches_rectangle_grams_on_vdp() {
        let field = VectorField::vdp_reverse();
        let traj = integrate(&field, &v2(0.5, 0.0), 3.9, &controls(0.1)).unwrap();
        assert_eq!(traj.len(), 40);
        let n = traj.dim();
        let m = traj.len();
        let mut x = DMatrix::zeros(n, m);
        let mut xdot = DMatrix::zeros(n, m);
        for k in 0..m {
            x.set_column(k, &traj.states[k]);
            xdot.set_column(k, &traj.derivatives.as_ref().unwrap()[k]);
        }
        let direct = discrete_minimizer(&x, &xdot).unwrap();
        let g = gram_matrices_with_rule(&traj, QuadratureRule::Rectangle).unwrap();
        let via_grams = solve_gram(&g).unwrap();
        assert!((direct - via_grams).norm() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// Consistent snapshot pairs recover the generator exactly.
        #[test]
        fn discrete_minimizer_recovers_generator(
            entries in proptest::collection::vec(-1.0f64..1.0, 4),
            cols in proptest::collection::vec(-2.0f64..2.0, 2 * 12),
        ) {
            let a = DMatrix::from_row_slice(2, 2, &entries);
            let x = DMatrix::from_row_slice(2, 12, &cols);
            prop_assume!(x.clone().svd(false, false).singular_values.iter().all(|s| *s > 1e-3));
            let xdot = &a * &x;
            let rec = discrete_minimizer(&x, &xdot).unwrap();
            prop_assert!((rec - a).norm() < 1e-8);
        }
    }
}
