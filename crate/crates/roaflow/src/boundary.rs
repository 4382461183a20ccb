//! Geometric flow of a discretized closed planar curve.
//!
//! The curve is an ordered counterclockwise polyline. Each iteration
//! evaluates the residual energy at every point concurrently, then moves
//! every point along its outward normal with speed `gamma - tanh(E)`
//! (explicit Euler in flow pseudo-time). With `gamma = 1` speeds are
//! nonnegative and the curve grows until the energy saturates; with
//! `gamma < 1` points past the `tanh(E) = gamma` level move inward, which
//! yields a conservative estimate for systems whose nonlinearity does not
//! blow up along escaping trajectories.
//!
//! Points are redistributed to uniform arclength every few iterations to
//! counter tangential drift and clustering under non-uniform normal motion.
//! A self-intersecting curve aborts the run: a fold signals a step size too
//! large or growth the polyline resolution cannot track, and repairing it
//! silently would hide that.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Vector2};

use crate::energy::{self, EnergyConfig, EnergyStatus, ResidualEnergy};
use crate::systems::VectorField;
use crate::textio::fmt_g17;
use crate::{Error, Result};

pub type Point = Vector2<f64>;

/// Minimum number of points a curve may carry.
pub const MIN_POINTS: usize = 8;

/// Ordered closed polyline, counterclockwise.
#[derive(Debug, Clone)]
pub struct BoundaryCurve {
    points: Vec<Point>,
    pub iteration: usize,
}

impl BoundaryCurve {
    /// Builds a curve from points, enforcing the minimum point count and
    /// counterclockwise orientation (the point order is reversed if needed,
    /// keeping the first point first).
    pub fn from_points(mut points: Vec<Point>, iteration: usize) -> Result<Self> {
        if points.len() < MIN_POINTS {
            return Err(Error::TooFewPoints {
                got: points.len(),
                need: MIN_POINTS,
            });
        }
        if signed_area(&points) < 0.0 {
            points[1..].reverse();
        }
        Ok(Self { points, iteration })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(&self.points)
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.points.len();
        (0..n)
            .map(|i| (self.points[(i + 1) % n] - self.points[i]).norm())
            .sum()
    }

    /// True when no two non-adjacent edges intersect.
    pub fn is_simple(&self) -> bool {
        let pts = &self.points;
        let n = pts.len();
        for i in 0..n {
            let (a1, a2) = (pts[i], pts[(i + 1) % n]);
            for j in i + 1..n {
                // Skip the edge itself and both neighbors.
                if j == i || (j + 1) % n == i || (i + 1) % n == j {
                    continue;
                }
                let (b1, b2) = (pts[j], pts[(j + 1) % n]);
                if segments_intersect(a1, a2, b1, b2) {
                    return false;
                }
            }
        }
        true
    }

    pub fn states(&self) -> Vec<DVector<f64>> {
        self.points
            .iter()
            .map(|p| DVector::from_vec(vec![p.x, p.y]))
            .collect()
    }
}

fn signed_area(points: &[Point]) -> f64 {
    let n = points.len();
    let mut acc = 0.0;
    for i in 0..n {
        let p = points[i];
        let q = points[(i + 1) % n];
        acc += p.x * q.y - q.x * p.y;
    }
    0.5 * acc
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn on_segment(p: Point, q: Point, r: Point) -> bool {
    q.x <= p.x.max(r.x) && q.x >= p.x.min(r.x) && q.y <= p.y.max(r.y) && q.y >= p.y.min(r.y)
}

fn segments_intersect(p1: Point, p2: Point, p3: Point, p4: Point) -> bool {
    let d1 = cross(p3, p4, p1);
    let d2 = cross(p3, p4, p2);
    let d3 = cross(p1, p2, p3);
    let d4 = cross(p1, p2, p4);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(p3, p1, p4))
        || (d2 == 0.0 && on_segment(p3, p2, p4))
        || (d3 == 0.0 && on_segment(p1, p3, p2))
        || (d4 == 0.0 && on_segment(p1, p4, p2))
}

/// Hyperparameters of the geometric flow.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    /// Speed offset in `(0, 1]`; 1 gives pure outward growth.
    pub gamma: f64,
    /// Flow pseudo-time per iteration.
    pub step_size: f64,
    pub max_iters: usize,
    /// Convergence threshold on the largest point displacement per
    /// iteration.
    pub conv_tol: f64,
    /// Point count.
    pub d: usize,
    pub init_radius: f64,
    pub resample_every: usize,
    /// Record a history snapshot every this many iterations (0 disables
    /// intermediate history; the final state is always recorded).
    pub history_every: usize,
    pub energy: EnergyConfig,
}

impl Default for FlowConfig {
    fn default() -> Self {
        let init_radius = 0.1;
        Self {
            gamma: 1.0,
            step_size: 0.02,
            max_iters: 2000,
            conv_tol: 1e-4 * init_radius,
            d: 50,
            init_radius,
            resample_every: 5,
            history_every: 10,
            energy: EnergyConfig::default(),
        }
    }
}

impl FlowConfig {
    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidConfig("step_size must be positive".into()));
        }
        if !(self.conv_tol > 0.0) {
            return Err(Error::InvalidConfig("conv_tol must be positive".into()));
        }
        if !(self.init_radius > 0.0) {
            return Err(Error::InvalidConfig("init_radius must be positive".into()));
        }
        if self.resample_every == 0 {
            return Err(Error::InvalidConfig(
                "resample_every must be at least 1".into(),
            ));
        }
        if self.d < MIN_POINTS {
            return Err(Error::TooFewPoints {
                got: self.d,
                need: MIN_POINTS,
            });
        }
        Ok(())
    }
}

/// `d` equally spaced points on the circle of the given radius,
/// counterclockwise, starting at angle 0.
pub fn init_circle(radius: f64, d: usize) -> Result<BoundaryCurve> {
    if d < MIN_POINTS {
        return Err(Error::TooFewPoints {
            got: d,
            need: MIN_POINTS,
        });
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidConfig("radius must be positive".into()));
    }
    let points = (0..d)
        .map(|k| {
            let th = std::f64::consts::TAU * k as f64 / d as f64;
            Point::new(radius * th.cos(), radius * th.sin())
        })
        .collect();
    Ok(BoundaryCurve {
        points,
        iteration: 0,
    })
}

/// Outward unit normals: the central-difference tangent at each point,
/// rotated clockwise by 90 degrees. Outward for a counterclockwise simple
/// curve.
pub fn outward_normals(curve: &BoundaryCurve) -> Result<Vec<Point>> {
    let pts = curve.points();
    let n = pts.len();
    let scale = curve.perimeter() / n as f64;
    let mut normals = Vec::with_capacity(n);
    for i in 0..n {
        let tangent = pts[(i + 1) % n] - pts[(i + n - 1) % n];
        let len = tangent.norm();
        if len <= 1e-12 * scale.max(1e-300) {
            return Err(Error::DegenerateSpacing(i));
        }
        normals.push(Point::new(tangent.y, -tangent.x) / len);
    }
    Ok(normals)
}

/// One explicit-Euler step: `p_i += step_size * (gamma - tanh(E_i)) * n_i`.
/// Speeds may be negative when `gamma < 1`; that inward motion is what makes
/// the modified flow conservative.
pub fn flow_step(
    curve: &BoundaryCurve,
    energies: &[ResidualEnergy],
    cfg: &FlowConfig,
) -> Result<BoundaryCurve> {
    if energies.len() != curve.len() {
        return Err(Error::DimensionMismatch {
            expected: curve.len(),
            got: energies.len(),
        });
    }
    let normals = outward_normals(curve)?;
    let mut points = Vec::with_capacity(curve.len());
    for ((p, normal), e) in curve.points().iter().zip(&normals).zip(energies) {
        let speed = cfg.gamma - e.squashed;
        let moved = p + cfg.step_size * speed * normal;
        if !moved.x.is_finite() || !moved.y.is_finite() {
            return Err(Error::NonFinite("flow step produced a non-finite point"));
        }
        points.push(moved);
    }
    Ok(BoundaryCurve {
        points,
        iteration: curve.iteration + 1,
    })
}

/// Redistributes `d` points at uniform arclength along the polygon, keeping
/// the traversal direction and the first point anchored at arclength zero.
pub fn resample_curve(curve: &BoundaryCurve, d: usize) -> Result<BoundaryCurve> {
    if d < MIN_POINTS {
        return Err(Error::TooFewPoints {
            got: d,
            need: MIN_POINTS,
        });
    }
    if !curve.is_simple() {
        return Err(Error::CurveFolded {
            iteration: curve.iteration,
        });
    }
    let pts = curve.points();
    let n = pts.len();
    let mut cumulative = Vec::with_capacity(n + 1);
    cumulative.push(0.0);
    for i in 0..n {
        let seg = (pts[(i + 1) % n] - pts[i]).norm();
        cumulative.push(cumulative[i] + seg);
    }
    let perimeter = cumulative[n];
    if !(perimeter > 0.0) {
        return Err(Error::DegenerateSpacing(0));
    }

    let mut out = Vec::with_capacity(d);
    let mut seg = 0usize;
    for k in 0..d {
        let target = perimeter * k as f64 / d as f64;
        while seg + 1 < n && cumulative[seg + 1] < target {
            seg += 1;
        }
        let seg_len = cumulative[seg + 1] - cumulative[seg];
        let frac = if seg_len > 0.0 {
            (target - cumulative[seg]) / seg_len
        } else {
            0.0
        };
        let a = pts[seg];
        let b = pts[(seg + 1) % n];
        out.push(a + (b - a) * frac);
    }
    Ok(BoundaryCurve {
        points: out,
        iteration: curve.iteration,
    })
}

/// How a flow run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowStatus {
    /// Largest point displacement fell under `conv_tol`.
    Converged,
    MaxIters,
    /// The curve self-intersected; the last simple curve is returned.
    Folded,
}

impl FlowStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FlowStatus::Converged => "converged",
            FlowStatus::MaxIters => "max_iters",
            FlowStatus::Folded => "folded",
        }
    }
}

/// Per-point state of the curve at one recorded iteration.
#[derive(Debug, Clone)]
pub struct CurveSnapshot {
    pub iteration: usize,
    pub points: Vec<Point>,
    pub speeds: Vec<f64>,
    pub energies: Vec<f64>,
    pub statuses: Vec<EnergyStatus>,
}

/// Result of [`run_flow`].
#[derive(Debug, Clone)]
pub struct FlowOutcome {
    pub final_curve: BoundaryCurve,
    /// Final curve with its energies and speeds, for emission.
    pub final_snapshot: CurveSnapshot,
    pub history: Vec<CurveSnapshot>,
    pub status: FlowStatus,
    pub iterations: usize,
    /// Reference Jacobian the energies were measured against.
    pub a_ref: DMatrix<f64>,
}

fn snapshot(curve: &BoundaryCurve, energies: &[ResidualEnergy], cfg: &FlowConfig) -> CurveSnapshot {
    CurveSnapshot {
        iteration: curve.iteration,
        points: curve.points().to_vec(),
        speeds: energies.iter().map(|e| cfg.gamma - e.squashed).collect(),
        energies: energies.iter().map(|e| e.value).collect(),
        statuses: energies.iter().map(|e| e.status).collect(),
    }
}

/// Evaluates the batch of point energies for a curve, mapping per-point
/// failures to saturated `pe_failed` entries. Errors only when every point
/// failed.
fn curve_energies(
    field: &VectorField,
    curve: &BoundaryCurve,
    a_ref: &DMatrix<f64>,
    cfg: &EnergyConfig,
) -> Result<Vec<ResidualEnergy>> {
    let states = curve.states();
    let results = energy::residual_energies(field, &states, a_ref, cfg);
    let mut ok = 0usize;
    let energies: Vec<ResidualEnergy> = results
        .into_iter()
        .map(|r| match r {
            Ok(e) => {
                ok += 1;
                e
            }
            Err(_) => ResidualEnergy {
                value: f64::INFINITY,
                squashed: 1.0,
                a_ref: a_ref.clone(),
                horizon: cfg.horizon,
                status: EnergyStatus::PeFailed,
            },
        })
        .collect();
    if ok == 0 {
        return Err(Error::EnergyEvaluationFailed);
    }
    Ok(energies)
}

/// Runs the full boundary flow from a circle of `cfg.init_radius`, which the
/// caller is responsible for placing strictly inside the region of
/// attraction.
///
/// Each iteration evaluates the residual energy at every curve point
/// concurrently, applies one explicit-Euler step, and redistributes points
/// every `resample_every` iterations. The run ends when the largest point
/// displacement in an iteration drops under `conv_tol`, when `max_iters` is
/// exhausted, or when the curve folds.
pub fn run_flow(field: &VectorField, cfg: &FlowConfig) -> Result<FlowOutcome> {
    cfg.validate()?;
    if field.dimension() != 2 {
        return Err(Error::InvalidConfig(
            "the boundary flow is defined for planar systems".into(),
        ));
    }
    let a_ref = energy::resolve_a_ref(field, &cfg.energy)?;

    let mut curve = init_circle(cfg.init_radius, cfg.d)?;
    let mut history = Vec::new();
    let mut status = FlowStatus::MaxIters;

    for it in 0..cfg.max_iters {
        let energies = curve_energies(field, &curve, &a_ref, &cfg.energy)?;
        if cfg.history_every > 0 && it % cfg.history_every == 0 {
            history.push(snapshot(&curve, &energies, cfg));
        }

        let max_speed = energies
            .iter()
            .map(|e| (cfg.gamma - e.squashed).abs())
            .fold(0.0_f64, f64::max);

        curve = flow_step(&curve, &energies, cfg)?;

        if (it + 1) % cfg.resample_every == 0 {
            match resample_curve(&curve, cfg.d) {
                Ok(resampled) => curve = resampled,
                Err(Error::CurveFolded { .. }) => {
                    status = FlowStatus::Folded;
                    break;
                }
                Err(e) => return Err(e),
            }
        }

        if cfg.step_size * max_speed < cfg.conv_tol {
            status = FlowStatus::Converged;
            break;
        }
    }

    let energies = curve_energies(field, &curve, &a_ref, &cfg.energy)?;
    let final_snapshot = snapshot(&curve, &energies, cfg);
    Ok(FlowOutcome {
        iterations: curve.iteration,
        final_curve: curve,
        final_snapshot,
        history,
        status,
        a_ref,
    })
}

/// Writes snapshots as CSV rows `iter,idx,x1,x2,speed,E,status`.
pub fn write_history_csv<W: Write>(w: &mut W, snapshots: &[&CurveSnapshot]) -> Result<()> {
    writeln!(w, "iter,idx,x1,x2,speed,E,status")?;
    for snap in snapshots {
        for (idx, p) in snap.points.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                snap.iteration,
                idx,
                fmt_g17(p.x),
                fmt_g17(p.y),
                fmt_g17(snap.speeds[idx]),
                fmt_g17(snap.energies[idx]),
                snap.statuses[idx].as_str()
            )?;
        }
    }
    Ok(())
}

/// SVG overlay: history curves in grey, the final curve highlighted, and an
/// optional reference polyline dashed.
pub fn flow_svg(outcome: &FlowOutcome, reference: Option<&BoundaryCurve>) -> String {
    let mut min = Point::new(f64::INFINITY, f64::INFINITY);
    let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut extend = |pts: &[Point]| {
        for p in pts {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
    };
    for snap in &outcome.history {
        extend(&snap.points);
    }
    extend(&outcome.final_snapshot.points);
    if let Some(r) = reference {
        extend(r.points());
    }
    let pad = 0.05 * (max - min).norm().max(1e-9);
    min -= Point::new(pad, pad);
    max += Point::new(pad, pad);

    let size = 640.0;
    let scale = size / (max.x - min.x).max(max.y - min.y);
    let project = |p: &Point| {
        let x = (p.x - min.x) * scale;
        let y = size - (p.y - min.y) * scale; // flip: SVG y grows downward
        format!("{x:.2},{y:.2}")
    };
    let polygon = |pts: &[Point], style: &str| {
        let coords: Vec<String> = pts.iter().map(&project).collect();
        format!("  <polygon points=\"{}\" {} />\n", coords.join(" "), style)
    };

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {size} {size}\" width=\"{size}\" height=\"{size}\">\n"
    );
    for snap in &outcome.history {
        svg.push_str(&polygon(
            &snap.points,
            "fill=\"none\" stroke=\"#b9b9b9\" stroke-width=\"1\"",
        ));
    }
    if let Some(r) = reference {
        svg.push_str(&polygon(
            r.points(),
            "fill=\"none\" stroke=\"#000000\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\"",
        ));
    }
    svg.push_str(&polygon(
        &outcome.final_snapshot.points,
        "fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\"",
    ));
    svg.push_str("</svg>\n");
    svg
}
