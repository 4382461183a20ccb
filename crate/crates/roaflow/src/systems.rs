//! Vector-field abstraction and the built-in benchmark systems.
//!
//! Three planar benchmarks are hard-coded with their published coefficients:
//! the Van der Pol oscillator in reverse time (`vdp_reverse`, bounded region
//! of attraction), a cubic system with an unbounded region of attraction
//! (`unbounded`), and a rational system whose nonlinearity flattens out far
//! from the origin (`rational`). User-defined systems enter as linear
//! matrices, either directly or from a whitespace-separated matrix file via
//! the registry key `linear:<file>`; arbitrary user nonlinearities are
//! supported through recorded trajectory files instead of an expression
//! parser.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// An autonomous vector field `x' = f(x)` with an equilibrium at the origin.
///
/// Evaluation is pure and stateless; a `VectorField` can be shared freely
/// across threads.
#[derive(Debug, Clone)]
pub struct VectorField {
    id: String,
    dimension: usize,
    kind: FieldKind,
}

#[derive(Debug, Clone)]
enum FieldKind {
    VdpReverse,
    Unbounded,
    Rational,
    Linear(DMatrix<f64>),
}

impl VectorField {
    /// Van der Pol oscillator in reverse time:
    /// `x1' = -x2, x2' = x1 - (1 - x1^2) x2`.
    pub fn vdp_reverse() -> Self {
        Self {
            id: "vdp_reverse".into(),
            dimension: 2,
            kind: FieldKind::VdpReverse,
        }
    }

    /// Cubic system with an unbounded region of attraction:
    /// `x1' = x2, x2' = -x1 - x2 + x1^3 / 3`.
    pub fn unbounded() -> Self {
        Self {
            id: "unbounded".into(),
            dimension: 2,
            kind: FieldKind::Unbounded,
        }
    }

    /// Rational system:
    /// `x1' = -x1/(1 + x1^2)^2 + x2, x2' = -(x1 + x2)/(1 + x1^2)^2`.
    pub fn rational() -> Self {
        Self {
            id: "rational".into(),
            dimension: 2,
            kind: FieldKind::Rational,
        }
    }

    /// Linear field `x' = A x`.
    pub fn linear(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidConfig(format!(
                "linear system matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear system matrix"));
        }
        Ok(Self {
            id: format!("linear[{}]", a.nrows()),
            dimension: a.nrows(),
            kind: FieldKind::Linear(a),
        })
    }

    /// Loads a linear field from a whitespace-separated `n x n` matrix file.
    /// Lines starting with `#` are ignored.
    pub fn linear_from_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            for tok in line.split_whitespace() {
                entries.push(crate::textio::parse_f64(tok, lineno + 1)?);
            }
        }
        let n = (entries.len() as f64).sqrt().round() as usize;
        if n == 0 || n * n != entries.len() {
            return Err(Error::Parse {
                line: 0,
                msg: format!(
                    "matrix file holds {} entries, which is not a perfect square",
                    entries.len()
                ),
            });
        }
        let mut field = Self::linear(DMatrix::from_row_slice(n, n, &entries))?;
        field.id = format!("linear:{}", path.as_ref().display());
        Ok(field)
    }

    /// Resolves a registry key: `vdp_reverse`, `unbounded`, `rational`, or
    /// `linear:<file>`.
    pub fn from_key(key: &str) -> Result<Self> {
        match key {
            "vdp_reverse" => Ok(Self::vdp_reverse()),
            "unbounded" => Ok(Self::unbounded()),
            "rational" => Ok(Self::rational()),
            _ => {
                if let Some(path) = key.strip_prefix("linear:") {
                    Self::linear_from_file(path)
                } else {
                    Err(Error::UnknownSystem(key.to_string()))
                }
            }
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Evaluates `f(x)`, checking the state dimension.
    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: x.len(),
            });
        }
        let mut out = DVector::zeros(self.dimension);
        self.eval_slice(x.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// Allocation-free evaluation on raw slices. Callers guarantee that both
    /// slices have length `dimension`.
    pub(crate) fn eval_slice(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            FieldKind::VdpReverse => {
                out[0] = -x[1];
                out[1] = x[0] - (1.0 - x[0] * x[0]) * x[1];
            }
            FieldKind::Unbounded => {
                out[0] = x[1];
                out[1] = -x[0] - x[1] + x[0] * x[0] * x[0] / 3.0;
            }
            FieldKind::Rational => {
                let d = 1.0 + x[0] * x[0];
                let d2 = d * d;
                out[0] = -x[0] / d2 + x[1];
                out[1] = -(x[0] + x[1]) / d2;
            }
            FieldKind::Linear(a) => {
                let n = self.dimension;
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += a[(i, j)] * x[j];
                    }
                    out[i] = acc;
                }
            }
        }
    }

    /// The analytic Jacobian at the origin, when one is registered.
    /// Callers without one fall back to the data-driven estimate.
    pub fn jacobian_at_origin(&self) -> Option<DMatrix<f64>> {
        match &self.kind {
            FieldKind::VdpReverse => {
                Some(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, -1.0]))
            }
            FieldKind::Unbounded => {
                Some(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]))
            }
            FieldKind::Rational => {
                Some(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, -1.0, -1.0]))
            }
            FieldKind::Linear(a) => Some(a.clone()),
        }
    }
}

impl fmt::Display for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (n={})", self.id, self.dimension)
    }
}
