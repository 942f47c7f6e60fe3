//! Exact solutions of the linear backward-forward system
//!
//! ```text
//! -u_t - Lap u = 0,   m_t - Lap m = Lap u,   u(T) = alpha m(T),   m(0) = m0
//! ```
//!
//! by expansion in Laplace eigenfunctions of the torus. Each mode satisfies
//! `m_k'' = lambda_k^2 m_k` with `m_k(0) = B_k` and
//! `lambda_k (alpha + 1) m_k(T) = -m_k'(T)`, so
//! `m_k = A_k sinh(lambda_k t) + B_k cosh(lambda_k t)` with
//!
//! ```text
//! A_k = -B_k ((alpha + 1) cosh(lambda_k T) + sinh(lambda_k T))
//!          / ((alpha + 1) sinh(lambda_k T) + cosh(lambda_k T))
//! ```
//!
//! For `alpha < -2` the denominator vanishes at `T_k = artanh(-1/(alpha + 1)) / lambda_k`
//! and the problem has no solution there.
//!
//! All hyperbolic expressions are evaluated with `e^{lambda T}` factored out.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{Field, Point, SpaceGrid, SpaceTimeField, TorusGrid};

/// Default relative tolerance on the scaled denominator.
pub const DEFAULT_TOL_DENOM: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Parity {
    Cos,
    Sin,
}

/// `cos(2 pi k x)` or `sin(2 pi k x)` along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AxisMode {
    pub parity: Parity,
    pub k: u32,
}

impl AxisMode {
    pub fn eval(&self, x: f64) -> f64 {
        let arg = 2.0 * PI * self.k as f64 * x;
        match self.parity {
            Parity::Cos => arg.cos(),
            Parity::Sin => arg.sin(),
        }
    }
}

/// Tensor-product eigenfunction of the Laplacian, written `c1` in 1D or
/// `c1,s2` in 2D. `c0` is the constant.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mode {
    axes: Vec<AxisMode>,
}

impl Mode {
    pub fn new(axes: Vec<AxisMode>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::InvalidParameter(format!("a mode needs 1 or 2 axes, got {}", axes.len())));
        }
        if axes.iter().any(|a| a.k == 0 && a.parity == Parity::Sin) {
            return Err(Error::InvalidParameter("sin of frequency 0 is identically zero".into()));
        }
        Ok(Self { axes })
    }

    pub fn constant(dim: usize) -> Self {
        Self { axes: vec![AxisMode { parity: Parity::Cos, k: 0 }; dim] }
    }

    pub fn cos(k: u32) -> Self {
        Self { axes: vec![AxisMode { parity: Parity::Cos, k }] }
    }

    pub fn sin(k: u32) -> Self {
        Self { axes: vec![AxisMode { parity: Parity::Sin, k }] }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[AxisMode] {
        &self.axes
    }

    /// Eigenvalue `4 pi^2 |k|^2` of `-Lap`.
    pub fn lambda(&self) -> f64 {
        4.0 * PI * PI * self.axes.iter().map(|a| (a.k as f64).powi(2)).sum::<f64>()
    }

    pub fn eval(&self, x: Point) -> f64 {
        self.axes.iter().enumerate().map(|(i, a)| a.eval(x[i])).product()
    }

    pub fn field(&self, space: SpaceGrid) -> Field {
        Field::from_fn(space, |x| self.eval(x))
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.axes.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            let p = match a.parity {
                Parity::Cos => 'c',
                Parity::Sin => 's',
            };
            write!(f, "{p}{}", a.k)?;
        }
        Ok(())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let axes = s
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                let parity = match tok.chars().next() {
                    Some('c') => Parity::Cos,
                    Some('s') => Parity::Sin,
                    _ => return Err(Error::InvalidParameter(format!("bad mode token {tok:?}"))),
                };
                let k = tok[1..]
                    .parse::<u32>()
                    .map_err(|_| Error::InvalidParameter(format!("bad mode frequency in {tok:?}")))?;
                Ok(AxisMode { parity, k })
            })
            .collect::<Result<Vec<_>>>()?;
        Mode::new(axes)
    }
}

/// One term `value * phi_mode` of a trigonometric polynomial.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeCoefficient {
    pub mode: Mode,
    pub value: f64,
}

impl ModeCoefficient {
    pub fn new(mode: Mode, value: f64) -> Self {
        Self { mode, value }
    }
}

/// Evaluates `sum value * phi_mode` on a grid.
pub fn trig_polynomial(space: SpaceGrid, coeffs: &[ModeCoefficient]) -> Result<Field> {
    check_dims(coeffs.iter().map(|c| &c.mode), space.dim())?;
    Ok(Field::from_fn(space, |x| coeffs.iter().map(|c| c.value * c.mode.eval(x)).sum()))
}

/// Discrete projection coefficients `<f, phi> / <phi, phi>`.
pub fn project(field: &Field, modes: &[Mode]) -> Result<Vec<ModeCoefficient>> {
    let space = field.space();
    check_dims(modes.iter(), space.dim())?;
    modes
        .iter()
        .map(|mode| {
            let phi = mode.field(space);
            let norm: f64 = phi.values().iter().map(|v| v * v).sum();
            if norm < 1e-12 * space.len() as f64 {
                return Err(Error::InvalidParameter(format!("mode {mode} aliases to zero on an n = {} grid", space.n())));
            }
            let dot: f64 = field.values().iter().zip(phi.values()).map(|(a, b)| a * b).sum();
            Ok(ModeCoefficient::new(mode.clone(), dot / norm))
        })
        .collect()
}

fn check_dims<'a>(modes: impl Iterator<Item = &'a Mode>, dim: usize) -> Result<()> {
    for m in modes {
        if m.dim() != dim {
            return Err(Error::InvalidParameter(format!("mode {m} does not match dimension {dim}")));
        }
    }
    Ok(())
}

/// `T_k` for `alpha < -2`; `None` when the denominator has no positive zero.
pub fn critical_times(alpha: f64, lambda: f64) -> Option<f64> {
    if !(lambda > 0.0) || !(alpha < -2.0) {
        return None;
    }
    Some((-1.0 / (alpha + 1.0)).atanh() / lambda)
}

/// Closed-form solution of a single mode.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralMode {
    pub mode: Mode,
    pub lambda: f64,
    pub b: f64,
    /// `None` when the mode is unsolvable.
    pub a: Option<f64>,
    /// `((alpha + 1) sinh(lambda T) + cosh(lambda T)) / e^{lambda T}`.
    pub scaled_denominator: f64,
    pub solvable: bool,
    alpha: f64,
    horizon: f64,
}

impl SpectralMode {
    fn new(alpha: f64, coeff: &ModeCoefficient, horizon: f64, tol_denom: f64) -> Self {
        let lambda = coeff.mode.lambda();
        let b = coeff.value;
        let decay = (-2.0 * lambda * horizon).exp();
        let s = 0.5 * ((alpha + 2.0) - alpha * decay);
        let num = 0.5 * ((alpha + 2.0) + alpha * decay);
        let (a, solvable) = if b == 0.0 {
            (Some(0.0), true)
        } else if s.abs() > tol_denom {
            (Some(-b * num / s), true)
        } else {
            (None, false)
        };
        Self { mode: coeff.mode.clone(), lambda, b, a, scaled_denominator: s, solvable, alpha, horizon }
    }

    fn parts(&self) -> Option<(f64, f64)> {
        // m(t) = grow e^{lambda (t - 2T)} + fall e^{-lambda t}
        let a = self.a?;
        if self.b == 0.0 {
            return Some((0.0, 0.0));
        }
        let grow = -self.alpha * self.b / (2.0 * self.scaled_denominator);
        Some((grow, 0.5 * (self.b - a)))
    }

    pub fn m(&self, t: f64) -> Option<f64> {
        let (grow, fall) = self.parts()?;
        let l = self.lambda;
        Some(grow * (l * (t - 2.0 * self.horizon)).exp() + fall * (-l * t).exp())
    }

    pub fn dm(&self, t: f64) -> Option<f64> {
        let (grow, fall) = self.parts()?;
        let l = self.lambda;
        Some(l * (grow * (l * (t - 2.0 * self.horizon)).exp() - fall * (-l * t).exp()))
    }

    pub fn d2m(&self, t: f64) -> Option<f64> {
        let (grow, fall) = self.parts()?;
        let l = self.lambda;
        Some(l * l * (grow * (l * (t - 2.0 * self.horizon)).exp() + fall * (-l * t).exp()))
    }

    /// `u_k(t) = alpha m_k(T) e^{lambda (t - T)}`.
    pub fn u(&self, t: f64) -> Option<f64> {
        Some(self.alpha * self.m(self.horizon)? * (self.lambda * (t - self.horizon)).exp())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralSolution {
    pub alpha: f64,
    pub horizon: f64,
    pub tol_denom: f64,
    pub modes: Vec<SpectralMode>,
}

impl SpectralSolution {
    /// False as soon as one mode with nonzero datum is unsolvable.
    pub fn is_solvable(&self) -> bool {
        self.modes.iter().all(|m| m.solvable)
    }

    pub fn m_at(&self, x: Point, t: f64) -> Option<f64> {
        self.modes.iter().map(|k| Some(k.m(t)? * k.mode.eval(x))).sum()
    }

    pub fn u_at(&self, x: Point, t: f64) -> Option<f64> {
        self.modes.iter().map(|k| Some(k.u(t)? * k.mode.eval(x))).sum()
    }
}

pub fn solve_spectral(
    alpha: f64,
    m0_coeffs: &[ModeCoefficient],
    horizon: f64,
    tol_denom: f64,
) -> Result<SpectralSolution> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    if !alpha.is_finite() || !(tol_denom >= 0.0) {
        return Err(Error::InvalidParameter("coupling or tolerance out of range".into()));
    }
    for (i, c) in m0_coeffs.iter().enumerate() {
        if m0_coeffs[..i].iter().any(|d| d.mode == c.mode) {
            return Err(Error::InvalidParameter(format!("mode {} listed twice", c.mode)));
        }
    }
    let modes = m0_coeffs.iter().map(|c| SpectralMode::new(alpha, c, horizon, tol_denom)).collect();
    Ok(SpectralSolution { alpha, horizon, tol_denom, modes })
}

/// Samples `(u, m)` on the grid; modes are summed in list order.
pub fn synthesize_fields(sol: &SpectralSolution, grid: TorusGrid) -> Result<(SpaceTimeField, SpaceTimeField)> {
    if !sol.is_solvable() {
        return Err(Error::InvalidParameter("spectral problem is not solvable at this horizon".into()));
    }
    if (grid.horizon() - sol.horizon).abs() > 1e-12 * sol.horizon {
        return Err(Error::InvalidGrid("grid horizon differs from the spectral horizon".into()));
    }
    check_dims(sol.modes.iter().map(|m| &m.mode), grid.dim())?;
    let u = SpaceTimeField::from_fn(grid, |x, t| sol.u_at(x, t).unwrap_or(f64::NAN));
    let m = SpaceTimeField::from_fn(grid, |x, t| sol.m_at(x, t).unwrap_or(f64::NAN));
    Ok((u, m))
}
