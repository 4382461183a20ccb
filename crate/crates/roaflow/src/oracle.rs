//! Independent ground truth for tests and acceptance runs.
//!
//! Nothing here feeds the estimator: membership labels come from long
//! tightly-tolerated integrations, the reference limit cycle from a return
//! map on the time-reversed benchmark, and curve agreement from the
//! symmetric Hausdorff distance between polylines.

use nalgebra::DVector;

use crate::boundary::{BoundaryCurve, Point};
use crate::integrator::{self, dopri5, hermite, IntegrationControls, StepVerdict, Termination};
use crate::systems::VectorField;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    Inside,
    Outside,
    Undecided,
}

impl Membership {
    pub fn as_str(self) -> &'static str {
        match self {
            Membership::Inside => "inside",
            Membership::Outside => "outside",
            Membership::Undecided => "undecided",
        }
    }
}

/// Labels an initial condition by integrating until it either enters the
/// convergence ball (`inside`), leaves the escape radius (`outside`), or the
/// horizon runs out (`undecided`).
pub fn roa_membership(
    field: &VectorField,
    x0: &DVector<f64>,
    t_max: f64,
    delta_conv: f64,
    r_escape: f64,
) -> Result<Membership> {
    let controls = IntegrationControls {
        dt: 0.1,
        delta_conv,
        r_escape,
        ..IntegrationControls::oracle_grade()
    };
    let traj = integrator::integrate(field, x0, t_max, &controls)?;
    Ok(match traj.termination {
        Termination::ConvergedToOrigin => Membership::Inside,
        Termination::Escaped => Membership::Outside,
        Termination::HorizonReached => Membership::Undecided,
    })
}

/// Dense record of accepted adaptive steps, for interpolation.
struct DenseSegments {
    t0: Vec<f64>,
    t1: Vec<f64>,
    y0: Vec<[f64; 2]>,
    y1: Vec<[f64; 2]>,
    f0: Vec<[f64; 2]>,
    f1: Vec<[f64; 2]>,
}

impl DenseSegments {
    fn new() -> Self {
        Self {
            t0: Vec::new(),
            t1: Vec::new(),
            y0: Vec::new(),
            y1: Vec::new(),
            f0: Vec::new(),
            f1: Vec::new(),
        }
    }

    fn push(&mut self, t0: f64, y0: &[f64], f0: &[f64], t1: f64, y1: &[f64], f1: &[f64]) {
        self.t0.push(t0);
        self.t1.push(t1);
        self.y0.push([y0[0], y0[1]]);
        self.y1.push([y1[0], y1[1]]);
        self.f0.push([f0[0], f0[1]]);
        self.f1.push([f1[0], f1[1]]);
    }

    fn len(&self) -> usize {
        self.t0.len()
    }

    /// Interpolates the state at time `t`, walking from segment `hint`.
    fn sample(&self, t: f64, hint: &mut usize) -> [f64; 2] {
        while *hint + 1 < self.len() && self.t1[*hint] < t {
            *hint += 1;
        }
        let i = *hint;
        let h = self.t1[i] - self.t0[i];
        let mut out = [0.0; 2];
        hermite(
            (t - self.t0[i]) / h,
            h,
            &self.y0[i],
            &self.f0[i],
            &self.y1[i],
            &self.f1[i],
            &mut out,
        );
        out
    }
}

fn record_segments<F>(
    rhs: &F,
    x0: [f64; 2],
    horizon: f64,
    controls: &IntegrationControls,
) -> Result<DenseSegments>
where
    F: Fn(&[f64], &mut [f64]),
{
    let mut segs = DenseSegments::new();
    let end = dopri5(2, rhs, &x0, horizon, controls, |t0, y0, f0, t1, y1, f1| {
        segs.push(t0, y0, f0, t1, y1, f1);
        StepVerdict::Continue
    });
    match end {
        integrator::DriveEnd::ReachedHorizon => Ok(segs),
        _ => Err(Error::PeriodDetection("integration stalled")),
    }
}

/// Reference limit cycle of the `vdp_reverse` benchmark.
///
/// Integrates the time-reversed field (where the cycle attracts) from
/// `(2, 0)` through a long transient, detects the period on the section
/// `x2 = 0, x1 > 0`, and samples one period into `d` points. The returned
/// curve is closed, simple, and counterclockwise.
pub fn reference_limit_cycle(d: usize) -> Result<BoundaryCurve> {
    reference_limit_cycle_with_transient(d, 120.0)
}

pub fn reference_limit_cycle_with_transient(d: usize, transient: f64) -> Result<BoundaryCurve> {
    if d < crate::boundary::MIN_POINTS {
        return Err(Error::TooFewPoints {
            got: d,
            need: crate::boundary::MIN_POINTS,
        });
    }
    let field = VectorField::vdp_reverse();
    // Reversed time: the repelling cycle of the benchmark becomes attracting.
    let rhs = move |x: &[f64], out: &mut [f64]| {
        field.eval_slice(x, out);
        out[0] = -out[0];
        out[1] = -out[1];
    };
    let controls = IntegrationControls {
        dt: 0.1,
        ..IntegrationControls::oracle_grade()
    };

    // Transient onto the cycle.
    let start = [2.0, 0.0];
    let transient_segs = record_segments(&rhs, start, transient, &controls)?;
    let last = transient_segs.len() - 1;
    let settled = transient_segs.y1[last];

    // Record a few periods and locate downward crossings of x2 = 0 at
    // positive x1.
    let segs = record_segments(&rhs, settled, 25.0, &controls)?;
    let mut crossings: Vec<f64> = Vec::new();
    for i in 0..segs.len() {
        if segs.y0[i][1] > 0.0 && segs.y1[i][1] <= 0.0 && segs.y0[i][0] > 0.0 {
            // Bisection on the Hermite interpolant; stays within segment i.
            let (mut lo, mut hi) = (segs.t0[i], segs.t1[i]);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let mut hint = i;
                if segs.sample(mid, &mut hint)[1] > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            crossings.push(0.5 * (lo + hi));
        }
    }
    if crossings.len() < 2 {
        return Err(Error::PeriodDetection("fewer than two section crossings"));
    }
    let period = crossings[1] - crossings[0];
    if !(period > 1.0) {
        return Err(Error::PeriodDetection("implausibly short period"));
    }

    // Sample one period from the first crossing.
    let mut hint = 0usize;
    let anchor = segs.sample(crossings[0], &mut hint);
    let cycle_segs = record_segments(&rhs, anchor, period, &controls)?;
    let mut points = Vec::with_capacity(d);
    let mut walk = 0usize;
    for k in 0..d {
        let t = period * k as f64 / d as f64;
        let y = cycle_segs.sample(t.min(period), &mut walk);
        points.push(Point::new(y[0], y[1]));
    }

    let curve = BoundaryCurve::from_points(points, 0)?;
    if !curve.is_simple() {
        return Err(Error::PeriodDetection("sampled cycle self-intersects"));
    }
    Ok(curve)
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len_sq = ab.norm_squared();
    if len_sq == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len_sq).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn directed_hausdorff(from: &BoundaryCurve, to: &BoundaryCurve) -> f64 {
    let tp = to.points();
    let m = tp.len();
    let mut worst = 0.0_f64;
    for p in from.points() {
        let mut best = f64::INFINITY;
        for j in 0..m {
            let d = point_segment_distance(*p, tp[j], tp[(j + 1) % m]);
            if d < best {
                best = d;
            }
        }
        worst = worst.max(best);
    }
    worst
}

/// Symmetric Hausdorff distance between two closed polylines, measured from
/// the vertices of each curve to the segments of the other.
pub fn hausdorff_distance(a: &BoundaryCurve, b: &BoundaryCurve) -> f64 {
    directed_hausdorff(a, b).max(directed_hausdorff(b, a))
}
