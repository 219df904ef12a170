//! Log barriers for the scalar block domains and the local norms they induce.
//!
//! Every block in this crate is one coordinate wide, so the Hessian of the
//! weighted barrier is diagonal and is stored as a vector.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockKind {
    /// `[0, cap]`
    NonNegBox { cap: f64 },
    /// `[lo, hi]`
    Box { lo: f64, hi: f64 },
    /// The open interval `(0, 2)`.
    UnitInterval02,
    /// The half-line `(0, inf)` with barrier `-log x`. Only the slack
    /// coordinate added by the initial-point reduction uses it.
    Positive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockDomain {
    pub kind: BlockKind,
}

impl BlockDomain {
    pub fn non_neg_box(cap: f64) -> Result<Self> {
        if !(cap > 0.0) || !cap.is_finite() {
            return Err(Error::InvalidParameter(format!("box cap must be positive, got {cap}")));
        }
        Ok(Self { kind: BlockKind::NonNegBox { cap } })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!("need lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Self { kind: BlockKind::Box { lo, hi } })
    }

    pub fn unit_interval_02() -> Self {
        Self { kind: BlockKind::UnitInterval02 }
    }

    pub fn positive() -> Self {
        Self { kind: BlockKind::Positive }
    }

    /// Width of the block. Always 1 here.
    pub fn width(&self) -> usize {
        1
    }

    pub fn lo(&self) -> f64 {
        match self.kind {
            BlockKind::NonNegBox { .. } | BlockKind::UnitInterval02 | BlockKind::Positive => 0.0,
            BlockKind::Box { lo, .. } => lo,
        }
    }

    pub fn hi(&self) -> f64 {
        match self.kind {
            BlockKind::NonNegBox { cap } => cap,
            BlockKind::Box { hi, .. } => hi,
            BlockKind::UnitInterval02 => 2.0,
            BlockKind::Positive => f64::INFINITY,
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.hi().is_finite()
    }

    /// Self-concordance parameter of the barrier.
    pub fn nu(&self) -> f64 {
        if self.is_bounded() {
            2.0
        } else {
            1.0
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lo() && x < self.hi()
    }

    /// Minimizer of the barrier, the midpoint for bounded kinds. The half-line
    /// barrier has no minimizer.
    pub fn analytic_center(&self) -> Option<f64> {
        self.is_bounded().then(|| 0.5 * (self.lo() + self.hi()))
    }

    fn check(&self, block: usize, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain { block, value: x })
        }
    }

    /// Value, gradient and Hessian of the barrier at `x`.
    pub fn eval(&self, block: usize, x: f64) -> Result<(f64, f64, f64)> {
        self.check(block, x)?;
        let a = x - self.lo();
        if !self.is_bounded() {
            return Ok((-a.ln(), -1.0 / a, 1.0 / (a * a)));
        }
        let b = self.hi() - x;
        Ok((
            -a.ln() - b.ln(),
            -1.0 / a + 1.0 / b,
            1.0 / (a * a) + 1.0 / (b * b),
        ))
    }

    /// Unchecked gradient and Hessian for hot loops; `x` must be interior.
    #[inline]
    pub(crate) fn grad_hess(&self, x: f64) -> (f64, f64) {
        let a = x - self.lo();
        let hi = self.hi();
        if hi.is_finite() {
            let b = hi - x;
            (-1.0 / a + 1.0 / b, 1.0 / (a * a) + 1.0 / (b * b))
        } else {
            (-1.0 / a, 1.0 / (a * a))
        }
    }

    /// Third derivative, used for the self-concordance check.
    pub fn third_derivative(&self, block: usize, x: f64) -> Result<f64> {
        self.check(block, x)?;
        let a = x - self.lo();
        let mut d = -2.0 / (a * a * a);
        if self.is_bounded() {
            let b = self.hi() - x;
            d += 2.0 / (b * b * b);
        }
        Ok(d)
    }

    /// Largest step `s` such that `x + s * dx` stays inside the domain,
    /// scaled back by `frac`.
    pub fn max_step(&self, x: f64, dx: f64, frac: f64) -> f64 {
        if dx < 0.0 {
            frac * (x - self.lo()) / -dx
        } else if dx > 0.0 && self.is_bounded() {
            frac * (self.hi() - x) / dx
        } else {
            f64::INFINITY
        }
    }
}

/// Per-coordinate barrier Hessians at a point, together with the weights.
#[derive(Clone, Debug)]
pub struct LocalMetric {
    pub hess: DVector<f64>,
    pub weights: DVector<f64>,
}

impl LocalMetric {
    pub fn assemble(blocks: &[BlockDomain], weights: &DVector<f64>, x: &DVector<f64>) -> Result<Self> {
        if x.len() != blocks.len() {
            return Err(Error::Dimension { what: "metric point", expected: blocks.len(), found: x.len() });
        }
        let mut hess = DVector::zeros(x.len());
        for (i, blk) in blocks.iter().enumerate() {
            hess[i] = blk.eval(i, x[i])?.2;
        }
        Ok(Self { hess, weights: weights.clone() })
    }

    /// `‖v‖_{x_i}`
    pub fn norm(&self, i: usize, v: f64) -> f64 {
        v.abs() * self.hess[i].sqrt()
    }

    /// `‖v‖*_{x_i}`
    pub fn dual_norm(&self, i: usize, v: f64) -> f64 {
        v.abs() / self.hess[i].sqrt()
    }

    /// Diagonal of the weighted Hessian `H_{w,x}`.
    pub fn weighted_hess(&self) -> DVector<f64> {
        self.hess.component_mul(&self.weights)
    }

    pub fn weighted_norm(&self, v: &DVector<f64>) -> f64 {
        v.iter()
            .zip(self.hess.iter().zip(self.weights.iter()))
            .map(|(vi, (h, w))| vi * vi * h * w)
            .sum::<f64>()
            .sqrt()
    }

    pub fn weighted_dual_norm(&self, v: &DVector<f64>) -> f64 {
        v.iter()
            .zip(self.hess.iter().zip(self.weights.iter()))
            .map(|(vi, (h, w))| vi * vi / (h * w))
            .sum::<f64>()
            .sqrt()
    }
}
