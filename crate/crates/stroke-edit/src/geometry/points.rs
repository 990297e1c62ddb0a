//! Ordered control-point sets on the text contour, in normalized
//! [-1, 1]^2 coordinates: K points along the top edge followed by K along
//! the bottom edge, each run ordered by increasing x.

use ndarray::{ArrayD, IxDyn};

use crate::autograd::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Margin between the canonical contour and the frame border.
pub const CANONICAL_MARGIN: f64 = 0.05;

/// Small overshoot tolerated on stored coordinates.
const COORD_BOUND: f64 = 1.05;

#[derive(Clone, Debug, PartialEq)]
pub struct ControlPointSet {
    points: Vec<[f64; 2]>,
    k: usize,
}

impl ControlPointSet {
    /// Validates count (2K, K >= 2), finiteness, coordinate bounds and the
    /// per-contour x ordering.
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        let set = Self::from_predicted(points)?;
        let k = set.k;
        for half in [&set.points[..k], &set.points[k..]] {
            for w in half.windows(2) {
                if w[0][0] > w[1][0] {
                    return Err(Error::Config(
                        "control points must be ordered by increasing x per contour".into(),
                    ));
                }
            }
        }
        Ok(set)
    }

    /// Validates count and bounds only; predicted points may be unordered
    /// while the predictor is still training.
    pub fn from_predicted(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() < 4 || !points.len().is_multiple_of(2) {
            return Err(Error::Config(format!(
                "control point set needs 2K points with K >= 2, got {}",
                points.len()
            )));
        }
        for p in &points {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::Config("non-finite control point".into()));
            }
            if p[0].abs() > COORD_BOUND || p[1].abs() > COORD_BOUND {
                return Err(Error::Config(format!(
                    "control point ({}, {}) outside [-{COORD_BOUND}, {COORD_BOUND}]",
                    p[0], p[1]
                )));
            }
        }
        let k = points.len() / 2;
        Ok(ControlPointSet { points, k })
    }

    /// 2K points evenly spaced along the top (y = -1 + margin) and bottom
    /// (y = 1 - margin) edges of the normalized frame.
    pub fn canonical(k: usize) -> Result<Self> {
        Self::canonical_with_margin(k, CANONICAL_MARGIN)
    }

    pub fn canonical_with_margin(k: usize, margin: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!(
                "canonical control points need K >= 2, got {k}"
            )));
        }
        let span = 1.0 - margin;
        let mut points = Vec::with_capacity(2 * k);
        for &y in &[-span, span] {
            for i in 0..k {
                let x = -span + 2.0 * span * i as f64 / (k - 1) as f64;
                points.push([x, y]);
            }
        }
        Self::new(points)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// `[1, 2K, 2]` tensor for the warp ops (batch of one).
    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        let mut arr = ArrayD::zeros(IxDyn(&[1, self.points.len(), 2]));
        for (i, p) in self.points.iter().enumerate() {
            arr[[0, i, 0]] = S::from_fp(p[0]);
            arr[[0, i, 1]] = S::from_fp(p[1]);
        }
        Tensor::constant(arr)
    }

    /// Flat `[4K]` array (x0, y0, x1, y1, ...), the layout the point
    /// predictor regresses.
    pub fn to_flat<S: Scalar>(&self) -> ArrayD<S> {
        let mut arr = ArrayD::zeros(IxDyn(&[self.points.len() * 2]));
        for (i, p) in self.points.iter().enumerate() {
            arr[[2 * i]] = S::from_fp(p[0]);
            arr[[2 * i + 1]] = S::from_fp(p[1]);
        }
        arr
    }

    /// Reads one batch row of a `[B, 2K, 2]` prediction tensor.
    pub fn from_tensor_row<S: Scalar>(t: &Tensor<S>, row: usize) -> Result<Self> {
        let v = t.value();
        let n = v.shape()[1];
        let mut points = Vec::with_capacity(n);
        for i in 0..n {
            points.push([v[[row, i, 0]].fp(), v[[row, i, 1]].fp()]);
        }
        Self::from_predicted(points)
    }
}
