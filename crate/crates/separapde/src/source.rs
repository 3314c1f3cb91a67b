//! Scalar load terms in separated form.
//!
//! A source is a sum of products of per-axis smooth functions plus optional
//! nodal point loads. Keeping the source separated is what lets every
//! multi-dimensional integral in the solvers factor into 1D pieces.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One smooth per-axis factor together with its derivative.
///
/// The derivative is consumed by the r-adaptive solvers, whose position
/// gradient must track the motion of the quadrature points.
#[derive(Clone)]
pub struct AxisFn {
    f: ScalarFn,
    df: ScalarFn,
}

impl AxisFn {
    pub fn new(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            f: Arc::new(f),
            df: Arc::new(df),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c, |_| 0.0)
    }

    /// `amp * sin(k x)`.
    pub fn sine(amp: f64, k: f64) -> Self {
        Self::new(move |x| amp * (k * x).sin(), move |x| amp * k * (k * x).cos())
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        (self.df)(x)
    }
}

impl fmt::Debug for AxisFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("AxisFn")
    }
}

/// One rank-1 term `b_x(x) b_y(y) [b_z(z)]`.
#[derive(Clone, Debug)]
pub struct SeparableTerm {
    pub axes: Vec<AxisFn>,
}

/// Concentrated load of given magnitude at a point of the domain.
#[derive(Clone, Debug)]
pub struct PointLoad {
    pub position: Vec<f64>,
    pub magnitude: f64,
}

/// Scalar load `b(x)` as a separated sum of per-axis functions plus
/// optional point loads.
#[derive(Clone, Debug, Default)]
pub struct SourceTerm {
    dim: usize,
    terms: Vec<SeparableTerm>,
    point_loads: Vec<PointLoad>,
}

impl SourceTerm {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            terms: Vec::new(),
            point_loads: Vec::new(),
        }
    }

    /// Add a separable term; the factor count must match the dimension.
    pub fn with_term(mut self, axes: Vec<AxisFn>) -> Result<Self> {
        if axes.len() != self.dim {
            return Err(Error::UnsupportedSource(format!(
                "separable term has {} factors for a {}-D source",
                axes.len(),
                self.dim
            )));
        }
        self.terms.push(SeparableTerm { axes });
        Ok(self)
    }

    pub fn with_point_load(mut self, position: Vec<f64>, magnitude: f64) -> Result<Self> {
        if position.len() != self.dim {
            return Err(Error::UnsupportedSource(format!(
                "point load has {} coordinates for a {}-D source",
                position.len(),
                self.dim
            )));
        }
        self.point_loads.push(PointLoad {
            position,
            magnitude,
        });
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[SeparableTerm] {
        &self.terms
    }

    pub fn point_loads(&self) -> &[PointLoad] {
        &self.point_loads
    }

    /// Pointwise value of the smooth part (point loads excluded).
    pub fn eval_smooth(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.axes.iter().zip(x).map(|(a, &xi)| a.eval(xi)).product::<f64>())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_checks() {
        assert!(SourceTerm::new(2)
            .with_term(vec![AxisFn::constant(1.0)])
            .is_err());
        assert!(SourceTerm::new(2)
            .with_point_load(vec![0.5], 1.0)
            .is_err());
        let s = SourceTerm::new(2)
            .with_term(vec![AxisFn::constant(2.0), AxisFn::constant(3.0)])
            .unwrap();
        assert_eq!(s.eval_smooth(&[0.1, 0.9]), 6.0);
    }

    #[test]
    fn sine_derivative() {
        let f = AxisFn::sine(2.0, std::f64::consts::PI);
        let x = 0.3;
        let fd = (f.eval(x + 1e-7) - f.eval(x - 1e-7)) / 2e-7;
        assert!((f.deriv(x) - fd).abs() < 1e-6);
    }
}
