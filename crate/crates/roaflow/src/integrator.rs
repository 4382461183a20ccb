//! Trajectory production and persistence.
//!
//! Integration uses the Dormand–Prince 5(4) embedded pair with a standard
//! step-size controller, then resamples the adaptive solution onto a uniform
//! grid of spacing `dt` through 4th-order Hermite interpolation of the stored
//! step endpoints and derivatives. Runs stop early once a grid sample enters
//! the convergence ball around the origin or leaves the escape radius.
//!
//! Externally recorded trajectories come in through a plain CSV schema
//! (`t,x1,...,xn[,dx1,...,dxn]`, `#` comments ignored) and can have their
//! derivatives reconstructed by central differences when only states were
//! logged.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::systems::VectorField;
use crate::textio::{fmt_g17, parse_f64};
use crate::{Error, Result};

/// How a trajectory run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// The configured horizon was reached.
    HorizonReached,
    /// A sample entered the ball `|x| < delta_conv`.
    ConvergedToOrigin,
    /// A sample left the ball `|x| > r_escape`, or stepping stalled inside a
    /// finite-time blow-up (see [`Trajectory::step_underflow`]).
    Escaped,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::HorizonReached => "horizon_reached",
            Termination::ConvergedToOrigin => "converged_to_origin",
            Termination::Escaped => "escaped",
        }
    }

    fn from_str(s: &str) -> Option<Self> {
        match s {
            "horizon_reached" => Some(Termination::HorizonReached),
            "converged_to_origin" => Some(Termination::ConvergedToOrigin),
            "escaped" => Some(Termination::Escaped),
            _ => None,
        }
    }
}

/// Time-stamped state (and optional state-derivative) samples of one
/// solution, on a uniform grid. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub derivatives: Option<Vec<DVector<f64>>>,
    /// The initial condition; always equal to `states[0]`.
    pub origin: DVector<f64>,
    pub termination: Termination,
    /// Set when the adaptive stepper hit the step-size floor inside a stiff
    /// blow-up and the run was cut short of the escape radius.
    pub step_underflow: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least one sample")
    }

    /// Time span covered by the samples.
    pub fn span(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Returns the uniform grid spacing, or an error when the grid is not
    /// uniform to within a few ulps of the accumulated time.
    pub fn grid_spacing(&self) -> Result<f64> {
        if self.times.len() < 2 {
            return Err(Error::TooFewSamples {
                got: self.times.len(),
                need: 2,
            });
        }
        let dt = self.times[1] - self.times[0];
        for k in 1..self.times.len() - 1 {
            let step = self.times[k + 1] - self.times[k];
            let tol = 8.0 * f64::EPSILON * self.times[k + 1].abs().max(dt.abs());
            if (step - dt).abs() > tol {
                return Err(Error::NonUniformGrid { index: k });
            }
        }
        Ok(dt)
    }
}

/// Tolerances and stopping sets for [`integrate`].
#[derive(Debug, Clone)]
pub struct IntegrationControls {
    pub rtol: f64,
    pub atol: f64,
    /// Uniform output grid spacing.
    pub dt: f64,
    /// Convergence ball radius around the origin.
    pub delta_conv: f64,
    /// Escape radius.
    pub r_escape: f64,
    /// Cap on the adaptive step, which also bounds the Hermite resampling
    /// error.
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for IntegrationControls {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            dt: 0.1,
            delta_conv: 1e-6,
            r_escape: 1e3,
            max_step: 0.02,
            max_steps: 20_000_000,
        }
    }
}

impl IntegrationControls {
    /// Tight tolerances for ground-truth runs.
    pub fn oracle_grade() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-13,
            ..Self::default()
        }
    }
}

// Dormand–Prince 5(4) tableau. Stage times are not needed: all fields here
// are autonomous.
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// b (5th order) equals the last A row; FSAL. Error weights are b - b*(4th).
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

pub(crate) enum StepVerdict {
    Continue,
    Stop,
}

pub(crate) enum DriveEnd {
    ReachedHorizon,
    Stopped,
    StepUnderflow,
}

/// Runs the adaptive stepper from `t = 0` to `horizon`, invoking `on_step`
/// once per accepted step with `(t0, y0, f0, t1, y1, f1)`.
pub(crate) fn dopri5<F, G>(
    n: usize,
    rhs: &F,
    x0: &[f64],
    horizon: f64,
    controls: &IntegrationControls,
    mut on_step: G,
) -> DriveEnd
where
    F: Fn(&[f64], &mut [f64]),
    G: FnMut(f64, &[f64], &[f64], f64, &[f64], &[f64]) -> StepVerdict,
{
    let mut t = 0.0_f64;
    let mut y = x0.to_vec();
    let mut f0 = vec![0.0; n];
    rhs(&y, &mut f0);

    let mut k = vec![vec![0.0; n]; 7];
    let mut y_stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];

    let mut h = controls.max_step.min(horizon);
    let mut rejected = false;
    let mut steps = 0usize;

    loop {
        let remaining = horizon - t;
        if remaining <= 1e-14 * horizon.max(1.0) {
            return DriveEnd::ReachedHorizon;
        }
        h = h.min(controls.max_step).min(remaining);
        if h < 1e-14 * t.abs().max(1.0) {
            return DriveEnd::StepUnderflow;
        }
        steps += 1;
        if steps > controls.max_steps {
            return DriveEnd::StepUnderflow;
        }

        k[0].copy_from_slice(&f0);
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[i];
                }
                y_stage[i] = y[i] + h * acc;
            }
            if s == 6 {
                y_new.copy_from_slice(&y_stage);
            }
            let (head, tail) = k.split_at_mut(s);
            let _ = head;
            rhs(&y_stage, &mut tail[0]);
        }

        // Weighted RMS error of the embedded pair.
        let mut err_sq = 0.0;
        let mut finite = true;
        for i in 0..n {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += E[j] * kj[i];
            }
            e *= h;
            let sc = controls.atol + controls.rtol * y[i].abs().max(y_new[i].abs());
            let r = e / sc;
            err_sq += r * r;
            if !y_new[i].is_finite() {
                finite = false;
            }
        }
        let err = (err_sq / n as f64).sqrt();

        if finite && err <= 1.0 {
            let t_new = t + h;
            let verdict = on_step(t, &y, &k[0], t_new, &y_new, &k[6]);
            y.copy_from_slice(&y_new);
            f0.copy_from_slice(&k[6]); // FSAL
            t = t_new;
            if matches!(verdict, StepVerdict::Stop) {
                return DriveEnd::Stopped;
            }
            let mut scale = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if rejected {
                scale = scale.min(1.0);
                rejected = false;
            }
            h *= scale;
        } else {
            rejected = true;
            let scale = if finite && err.is_finite() {
                (0.9 * err.powf(-0.2)).clamp(0.2, 1.0)
            } else {
                0.5
            };
            h *= scale;
        }
    }
}

/// Cubic Hermite interpolation over one accepted step, written into `out`.
pub(crate) fn hermite(
    theta: f64,
    h: f64,
    y0: &[f64],
    f0: &[f64],
    y1: &[f64],
    f1: &[f64],
    out: &mut [f64],
) {
    let th = theta.clamp(0.0, 1.0);
    for i in 0..out.len() {
        let dy = y1[i] - y0[i];
        out[i] = (1.0 - th) * y0[i]
            + th * y1[i]
            + th * (th - 1.0) * ((1.0 - 2.0 * th) * dy + (th - 1.0) * h * f0[i] + th * h * f1[i]);
    }
}

/// Integrates `x' = f(x)` from `x0` over `[0, horizon]` and resamples the
/// solution onto the uniform grid `t_k = k * controls.dt`. Derivatives are
/// filled by evaluating the field at each sample. The run stops early with
/// `ConvergedToOrigin` or `Escaped` when a grid sample crosses the
/// corresponding threshold.
pub fn integrate(
    field: &VectorField,
    x0: &DVector<f64>,
    horizon: f64,
    controls: &IntegrationControls,
) -> Result<Trajectory> {
    let n = field.dimension();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x0.len(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial condition"));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    if !(controls.dt > 0.0) || controls.dt > horizon {
        return Err(Error::InvalidConfig(format!(
            "grid spacing dt must lie in (0, horizon], got {}",
            controls.dt
        )));
    }

    let dt = controls.dt;
    let last_index = (horizon / dt + 1e-6).floor() as usize;

    let mut times = vec![0.0];
    let mut states = vec![x0.clone()];
    let mut stop: Option<Termination> = None;
    let mut underflow = false;

    let norm0 = x0.norm();
    if norm0 < controls.delta_conv {
        stop = Some(Termination::ConvergedToOrigin);
    } else if norm0 > controls.r_escape {
        stop = Some(Termination::Escaped);
    }

    if stop.is_none() {
        let rhs = |x: &[f64], out: &mut [f64]| field.eval_slice(x, out);
        let mut next_k = 1usize;
        let mut sample = vec![0.0; n];

        let end = dopri5(n, &rhs, x0.as_slice(), horizon, controls, |t0, y0, g0, t1, y1, g1| {
            let pad = 1e-9 * t1.abs().max(1.0);
            while next_k <= last_index {
                let tg = next_k as f64 * dt;
                if tg > t1 + pad {
                    break;
                }
                let h = t1 - t0;
                hermite((tg - t0) / h, h, y0, g0, y1, g1, &mut sample);
                times.push(tg);
                states.push(DVector::from_column_slice(&sample));
                next_k += 1;

                let norm_sq: f64 = sample.iter().map(|v| v * v).sum();
                if !norm_sq.is_finite() {
                    underflow = true;
                    stop = Some(Termination::Escaped);
                    return StepVerdict::Stop;
                }
                let norm = norm_sq.sqrt();
                if norm > controls.r_escape {
                    stop = Some(Termination::Escaped);
                    return StepVerdict::Stop;
                }
                if norm < controls.delta_conv {
                    stop = Some(Termination::ConvergedToOrigin);
                    return StepVerdict::Stop;
                }
            }
            StepVerdict::Continue
        });

        match end {
            DriveEnd::Stopped => {}
            DriveEnd::ReachedHorizon => stop = Some(Termination::HorizonReached),
            DriveEnd::StepUnderflow => {
                stop = Some(Termination::Escaped);
                underflow = true;
            }
        }
    }

    let derivatives = states
        .iter()
        .map(|s| {
            let mut d = DVector::zeros(n);
            field.eval_slice(s.as_slice(), d.as_mut_slice());
            d
        })
        .collect();

    Ok(Trajectory {
        times,
        states,
        derivatives: Some(derivatives),
        origin: x0.clone(),
        termination: stop.unwrap_or(Termination::HorizonReached),
        step_underflow: underflow,
    })
}

/// Fills missing derivatives by central differences on a uniform grid, with
/// second-order one-sided stencils at both endpoints. States are untouched.
pub fn derivatives_from_samples(traj: &Trajectory) -> Result<Trajectory> {
    let m = traj.len();
    if m < 3 {
        return Err(Error::TooFewSamples { got: m, need: 3 });
    }
    let dt = traj.grid_spacing()?;
    let n = traj.dim();
    let s = &traj.states;

    let mut derivs = Vec::with_capacity(m);
    derivs.push((-3.0 * &s[0] + 4.0 * &s[1] - &s[2]) / (2.0 * dt));
    for k in 1..m - 1 {
        derivs.push((&s[k + 1] - &s[k - 1]) / (2.0 * dt));
    }
    derivs.push((3.0 * &s[m - 1] - 4.0 * &s[m - 2] + &s[m - 3]) / (2.0 * dt));
    debug_assert_eq!(derivs.len(), m);
    let _ = n;

    Ok(Trajectory {
        times: traj.times.clone(),
        states: traj.states.clone(),
        derivatives: Some(derivs),
        origin: traj.origin.clone(),
        termination: traj.termination,
        step_underflow: traj.step_underflow,
    })
}

/// Writes a trajectory as CSV: header `t,x1,...,xn[,dx1,...,dxn]`, one row
/// per sample, 17 significant digits.
pub fn save_trajectory<P: AsRef<Path>>(traj: &Trajectory, path: P) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_trajectory(traj, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_trajectory<W: Write>(traj: &Trajectory, w: &mut W) -> Result<()> {
    let n = traj.dim();
    writeln!(w, "# termination: {}", traj.termination.as_str())?;
    if traj.step_underflow {
        writeln!(w, "# step_underflow: true")?;
    }
    let mut header = String::from("t");
    for i in 1..=n {
        header.push_str(&format!(",x{i}"));
    }
    if traj.derivatives.is_some() {
        for i in 1..=n {
            header.push_str(&format!(",dx{i}"));
        }
    }
    writeln!(w, "{header}")?;
    for (k, t) in traj.times.iter().enumerate() {
        let mut row = fmt_g17(*t);
        for v in traj.states[k].iter() {
            row.push(',');
            row.push_str(&fmt_g17(*v));
        }
        if let Some(d) = &traj.derivatives {
            for v in d[k].iter() {
                row.push(',');
                row.push_str(&fmt_g17(*v));
            }
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

/// Loads a trajectory saved by [`save_trajectory`] (or recorded externally in
/// the same schema). Files without derivative columns load with
/// `derivatives: None`.
pub fn load_trajectory<P: AsRef<Path>>(path: P) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path)?;
    parse_trajectory(&text)
}

pub fn parse_trajectory(text: &str) -> Result<Trajectory> {
    let mut termination = Termination::HorizonReached;
    let mut step_underflow = false;
    let mut header: Option<(usize, bool)> = None; // (n, has_derivatives)
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut derivs = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(t) = comment.strip_prefix("termination:") {
                if let Some(term) = Termination::from_str(t.trim()) {
                    termination = term;
                }
            } else if comment == "step_underflow: true" {
                step_underflow = true;
            }
            continue;
        }

        let fields: Vec<&str> = line.split(',').collect();
        match header {
            None => {
                header = Some(parse_header(&fields, lineno)?);
            }
            Some((n, has_d)) => {
                let expected = 1 + n + if has_d { n } else { 0 };
                if fields.len() != expected {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("expected {expected} fields, got {}", fields.len()),
                    });
                }
                let t = parse_f64(fields[0], lineno)?;
                if let Some(prev) = times.last() {
                    if t <= *prev {
                        return Err(Error::NonIncreasingTimes { row: times.len() });
                    }
                }
                times.push(t);
                let mut x = DVector::zeros(n);
                for i in 0..n {
                    x[i] = parse_f64(fields[1 + i], lineno)?;
                }
                states.push(x);
                if has_d {
                    let mut d = DVector::zeros(n);
                    for i in 0..n {
                        d[i] = parse_f64(fields[1 + n + i], lineno)?;
                    }
                    derivs.push(d);
                }
            }
        }
    }

    let (n, has_d) = header.ok_or(Error::Parse {
        line: 0,
        msg: "missing header".into(),
    })?;
    let _ = n;
    if states.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    Ok(Trajectory {
        origin: states[0].clone(),
        times,
        states,
        derivatives: if has_d { Some(derivs) } else { None },
        termination,
        step_underflow,
    })
}

fn parse_header(fields: &[&str], lineno: usize) -> Result<(usize, bool)> {
    if fields.first().map(|s| s.trim()) != Some("t") {
        return Err(Error::Parse {
            line: lineno,
            msg: "header must start with `t`".into(),
        });
    }
    let mut n = 0usize;
    let mut i = 1usize;
    while i < fields.len() {
        let expect = format!("x{}", n + 1);
        if fields[i].trim() == expect {
            n += 1;
            i += 1;
        } else {
            break;
        }
    }
    if n == 0 {
        return Err(Error::Parse {
            line: lineno,
            msg: "header must list state columns x1..xn".into(),
        });
    }
    let rest = &fields[i..];
    if rest.is_empty() {
        return Ok((n, false));
    }
    if rest.len() != n {
        return Err(Error::Parse {
            line: lineno,
            msg: "derivative columns must match state columns".into(),
        });
    }
    for (j, f) in rest.iter().enumerate() {
        if f.trim() != format!("dx{}", j + 1) {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("unexpected header column `{}`", f.trim()),
            });
        }
    }
    Ok((n, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    fn diag_m1_m2() -> VectorField {
        VectorField::linear(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0])).unwrap()
    }

    #[test]
    fn linear_diag_matches_closed_form() {
        let field = diag_m1_m2();
        let traj = integrate(&field, &v2(1.0, 1.0), 4.0, &IntegrationControls::default()).unwrap();
        assert_eq!(traj.len(), 41);
        assert_eq!(traj.states[0], v2(1.0, 1.0));
        for (k, t) in traj.times.iter().enumerate() {
            let exact = v2((-t).exp(), (-2.0 * t).exp());
            let err = (&traj.states[k] - exact).norm();
            assert!(err < 1e-8, "t={t}: err={err:.3e}");
        }
    }

    #[test]
    fn vdp_inside_converges_outside_escapes() {
        let field = VectorField::vdp_reverse();
        let c = IntegrationControls::default();

        let inside = integrate(&field, &v2(0.1, 0.0), 40.0, &c).unwrap();
        assert_eq!(inside.termination, Termination::ConvergedToOrigin);
        assert!(inside.final_state().norm() < c.delta_conv);

        let outside = integrate(&field, &v2(10.0, 10.0), 40.0, &c).unwrap();
        assert_eq!(outside.termination, Termination::Escaped);
    }

    #[test]
    fn grid_spacing_within_one_ulp() {
        let field = diag_m1_m2();
        let traj = integrate(&field, &v2(1.0, 1.0), 3.9, &IntegrationControls::default()).unwrap();
        assert_eq!(traj.len(), 40);
        let dt = traj.grid_spacing().unwrap();
        assert_eq!(dt, traj.times[1] - traj.times[0]);
        for k in 0..traj.len() - 1 {
            let step = traj.times[k + 1] - traj.times[k];
            let ulp = f64::EPSILON * traj.times[k + 1].abs().max(0.1);
            assert!((step - 0.1).abs() <= 2.0 * ulp);
        }
    }

    #[test]
    fn hurwitz_linear_norms_stay_bounded() {
        let field = diag_m1_m2();
        let x0 = v2(0.7, -0.4);
        let traj = integrate(&field, &x0, 10.0, &IntegrationControls::default()).unwrap();
        let bound = x0.norm() * (1.0 + 1e-9);
        for s in &traj.states {
            assert!(s.norm() <= bound);
        }
    }

    #[test]
    fn derivatives_from_samples_exponential() {
        let dt = 0.01;
        let m = 101;
        let times: Vec<f64> = (0..m).map(|k| k as f64 * dt).collect();
        let states: Vec<DVector<f64>> =
            times.iter().map(|t| DVector::from_vec(vec![(-t).exp()])).collect();
        let traj = Trajectory {
            origin: states[0].clone(),
            times,
            states,
            derivatives: None,
            termination: Termination::HorizonReached,
            step_underflow: false,
        };
        let filled = derivatives_from_samples(&traj).unwrap();
        let d = filled.derivatives.as_ref().unwrap();
        for k in 1..m - 1 {
            let expect = -(-filled.times[k]).exp();
            assert!((d[k][0] - expect).abs() < 1e-4);
        }
    }

    #[test]
    fn derivatives_from_samples_constant_and_quadratic() {
        let dt = 0.1;
        let times: Vec<f64> = (0..11).map(|k| k as f64 * dt).collect();

        let zeros: Vec<DVector<f64>> = times.iter().map(|_| v2(0.0, 0.0)).collect();
        let constant = Trajectory {
            origin: zeros[0].clone(),
            times: times.clone(),
            states: zeros,
            derivatives: None,
            termination: Termination::HorizonReached,
            step_underflow: false,
        };
        for d in derivatives_from_samples(&constant).unwrap().derivatives.unwrap() {
            assert_eq!(d, v2(0.0, 0.0));
        }

        // Central and one-sided second-order stencils are exact on quadratics.
        let quad: Vec<DVector<f64>> = times.iter().map(|t| v2(*t, t * t)).collect();
        let traj = Trajectory {
            origin: quad[0].clone(),
            times: times.clone(),
            states: quad,
            derivatives: None,
            termination: Termination::HorizonReached,
            step_underflow: false,
        };
        let filled = derivatives_from_samples(&traj).unwrap();
        let d = filled.derivatives.as_ref().unwrap();
        for (k, t) in times.iter().enumerate() {
            assert!((d[k][0] - 1.0).abs() < 1e-12);
            assert!((d[k][1] - 2.0 * t).abs() < 1e-12);
        }
    }

    #[test]
    fn derivatives_from_samples_rejects_bad_input() {
        let times = vec![0.0, 0.1];
        let states = vec![v2(0.0, 0.0), v2(0.1, 0.0)];
        let short = Trajectory {
            origin: states[0].clone(),
            times,
            states,
            derivatives: None,
            termination: Termination::HorizonReached,
            step_underflow: false,
        };
        assert!(matches!(
            derivatives_from_samples(&short),
            Err(Error::TooFewSamples { .. })
        ));

        let times = vec![0.0, 0.1, 0.3];
        let states = vec![v2(0.0, 0.0), v2(0.1, 0.0), v2(0.2, 0.0)];
        let uneven = Trajectory {
            origin: states[0].clone(),
            times,
            states,
            derivatives: None,
            termination: Termination::HorizonReached,
            step_underflow: false,
        };
        assert!(matches!(
            derivatives_from_samples(&uneven),
            Err(Error::NonUniformGrid { .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let field = VectorField::vdp_reverse();
        let traj = integrate(&field, &v2(0.5, 0.0), 3.9, &IntegrationControls::default()).unwrap();
        assert_eq!(traj.len(), 40);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        save_trajectory(&traj, &path).unwrap();
        let back = load_trajectory(&path).unwrap();

        assert_eq!(back.termination, traj.termination);
        assert_eq!(back.len(), traj.len());
        for k in 0..traj.len() {
            assert_eq!(back.times[k].to_bits(), traj.times[k].to_bits());
            assert_eq!(back.states[k], traj.states[k]);
        }
        let (da, db) = (
            traj.derivatives.as_ref().unwrap(),
            back.derivatives.as_ref().unwrap(),
        );
        for k in 0..traj.len() {
            assert_eq!(da[k], db[k]);
        }
    }

    #[test]
    fn csv_without_derivative_columns() {
        let text = "t,x1,x2\n0.0,1.0,2.0\n0.1,0.9,1.8\n";
        let traj = parse_trajectory(text).unwrap();
        assert!(traj.derivatives.is_none());
        assert_eq!(traj.origin, v2(1.0, 2.0));
    }

    #[test]
    fn csv_malformed_inputs() {
        assert!(matches!(
            parse_trajectory("t,x1\n0.0,1.0\n-0.1,0.9\n"),
            Err(Error::NonIncreasingTimes { row: 1 })
        ));
        assert!(matches!(
            parse_trajectory("time,x1\n0.0,1.0\n"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_trajectory("t,x1,x2\n0.0,1.0\n"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_trajectory("t,x1,dx1,dx2\n0.0,1.0,0.0,0.0\n"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn blow_up_reports_escape() {
        let field = VectorField::vdp_reverse();
        let traj =
            integrate(&field, &v2(50.0, 50.0), 40.0, &IntegrationControls::default()).unwrap();
        assert_eq!(traj.termination, Termination::Escaped);
    }

    #[test]
    fn immediate_stopping_sets() {
        let field = VectorField::vdp_reverse();
        let c = IntegrationControls::default();
        let tiny = integrate(&field, &v2(1e-9, 0.0), 1.0, &c).unwrap();
        assert_eq!(tiny.termination, Termination::ConvergedToOrigin);
        assert_eq!(tiny.len(), 1);

        assert!(matches!(
            integrate(&field, &v2(f64::NAN, 0.0), 1.0, &c),
            Err(Error::NonFinite(_))
        ));
        assert!(integrate(&field, &v2(0.1, 0.0), -1.0, &c).is_err());
    }
}
