//! Globally Lipschitz cutoffs for the coupling terms.
//!
//! The solver never evaluates the model couplings directly inside the
//! fixed-point map. It evaluates `F(clamp(u), clamp+(m), clamp(Du), clamp(Dm))`
//! instead, where every clamp is the identity on the core range
//! `m in [1/K, K]`, `|u|, |Du|, |Dm| <= K`. A fixed point that stays inside
//! that range therefore solves the untruncated system as well.

use crate::error::{Error, Result};
use crate::grid::{euclidean, Field, Matrix, Vector};
use crate::models::{CouplingModel, PointArgs};

/// Threshold `K` together with the data it was derived from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationParams {
    pub k: f64,
    pub delta: f64,
    pub lipschitz_h: f64,
    pub c0: f64,
}

impl TruncationParams {
    /// Smallest admissible threshold:
    /// `max{2 |m0|^(1), 2 (L_h |m0|^(1) + C0), 2 / delta}`.
    pub fn required_k(m0_c1: f64, lipschitz_h: f64, c0: f64, delta: f64) -> f64 {
        (2.0 * m0_c1).max(2.0 * (lipschitz_h * m0_c1 + c0)).max(2.0 / delta)
    }

    /// Validates a user-chosen `k` against the lower bound.
    pub fn new(k: f64, m0: &Field, lipschitz_h: f64, c0: f64, delta: f64) -> Result<Self> {
        check_floor(m0, delta)?;
        let required = Self::required_k(m0.norm_c1(), lipschitz_h, c0, delta);
        if !(k.is_finite() && k >= required) {
            return Err(Error::InvalidParameter(format!(
                "truncation threshold {k} is below the admissible minimum {required}"
            )));
        }
        Ok(Self { k, delta, lipschitz_h, c0 })
    }
}

fn check_floor(m0: &Field, delta: f64) -> Result<()> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("density floor must be positive, got {delta}")));
    }
    if !m0.is_finite() {
        return Err(Error::AssumptionViolated("initial density is not finite".into()));
    }
    let min = m0.min();
    if min < delta {
        return Err(Error::AssumptionViolated(format!(
            "initial density minimum {min} is below the floor {delta}"
        )));
    }
    Ok(())
}

/// Picks the smallest admissible `K` for the initial density `m0`.
pub fn select_k(m0: &Field, lipschitz_h: f64, c0: f64, delta: f64) -> Result<TruncationParams> {
    check_floor(m0, delta)?;
    let k = TruncationParams::required_k(m0.norm_c1(), lipschitz_h, c0, delta);
    Ok(TruncationParams { k, delta, lipschitz_h, c0 })
}

/// Clamp onto `[1/K, K]`; the identity there and 1-Lipschitz everywhere.
pub fn clamp_positive(x: f64, k: f64) -> f64 {
    debug_assert!(k >= 1.0);
    x.max(1.0 / k).min(k)
}

/// Clamp onto `[-K, K]`.
pub fn clamp_symmetric(x: f64, k: f64) -> f64 {
    x.max(-k).min(k)
}

/// Radial retraction onto the closed ball of radius `K`; keeps the direction of `p`.
pub fn clamp_vector(p: Vector, k: f64) -> Vector {
    let r = euclidean(&p);
    if r <= k {
        p
    } else {
        let s = k / r;
        [p[0] * s, p[1] * s]
    }
}

/// Truncated couplings `F^`, `G^` of a model.
#[derive(Clone, Copy)]
pub struct TruncatedModel<'a> {
    model: &'a CouplingModel,
    params: TruncationParams,
}

pub fn wrap_model(model: &CouplingModel, params: TruncationParams) -> TruncatedModel<'_> {
    TruncatedModel { model, params }
}

impl<'a> TruncatedModel<'a> {
    pub fn params(&self) -> TruncationParams {
        self.params
    }

    pub fn model(&self) -> &'a CouplingModel {
        self.model
    }

    pub fn clamp_args(&self, args: &PointArgs) -> PointArgs {
        let k = self.params.k;
        PointArgs {
            x: args.x,
            t: args.t,
            u: clamp_symmetric(args.u, k),
            m: clamp_positive(args.m, k),
            du: clamp_vector(args.du, k),
            dm: clamp_vector(args.dm, k),
        }
    }

    pub fn f(&self, args: &PointArgs) -> Result<f64> {
        let v = (self.model.f)(&self.clamp_args(args))?;
        finite(v, "F", args)
    }

    /// `G^`; the Hessian slot is passed through unclamped.
    pub fn g(&self, args: &PointArgs, hess: &Matrix) -> Result<f64> {
        let v = (self.model.g)(&self.clamp_args(args), hess)?;
        finite(v, "G", args)
    }
}

fn finite(v: f64, name: &str, args: &PointArgs) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::ModelContract(format!("{name} is not finite at {args:?}")))
    }
}
