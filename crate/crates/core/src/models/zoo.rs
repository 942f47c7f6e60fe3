//! Ready-made models.

use std::sync::Arc;

use super::{
    build_congestion_coupling, build_mfg_coupling, final_cost_constant, ConvolutionCost, ConvolutionMethod,
    CongestionSpec, CouplingModel, DeltaKernel, DiffusionSpec, FinalCost, HamiltonianSpec, ModelConstants,
    PointArgs, ProjectedLinearCost, Profile, ScalarHamiltonian,
};
use crate::error::{Error, Result};
use crate::grid::{scaled, Field, Matrix, IDENTITY};

fn eye(dim: usize) -> Matrix {
    if dim == 1 {
        [[1.0, 0.0], [0.0, 0.0]]
    } else {
        IDENTITY
    }
}

fn trace(h: &Matrix, dim: usize) -> f64 {
    if dim == 1 {
        h[0][0]
    } else {
        h[0][0] + h[1][1]
    }
}

/// `F = G = 0`, `a = c = I`, `h = 0`.
pub fn decoupled_heat_model(m0: Field, delta: f64) -> Result<CouplingModel> {
    let space = m0.space();
    let constants = ModelConstants {
        lipschitz_f: Arc::new(|_| 0.0),
        lipschitz_g: Arc::new(|_| 0.0),
        delta,
        ellipticity: 1.0,
    };
    let id = IDENTITY;
    CouplingModel::new(
        "decoupled-heat",
        Arc::new(move |_, _| id),
        Arc::new(move |_, _| id),
        Arc::new(|_: &PointArgs| Ok(0.0)),
        Arc::new(|_: &PointArgs, _: &Matrix| Ok(0.0)),
        final_cost_constant(Field::zeros(space))?,
        m0,
        constants,
    )
}

/// Parameters of `H = (kappa/2)|p|^2 + v . p - c m - V0 cos(2 pi x_1)` with `A = nu I`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolynomialHamiltonian {
    pub kappa: f64,
    pub velocity: [f64; 2],
    pub coupling: f64,
    pub potential: f64,
    pub nu: f64,
}

impl Default for PolynomialHamiltonian {
    fn default() -> Self {
        Self { kappa: 1.0, velocity: [0.0; 2], coupling: 1.0, potential: 0.0, nu: 0.5 }
    }
}

impl PolynomialHamiltonian {
    pub fn spec(&self, dim: usize) -> Result<HamiltonianSpec> {
        let Self { kappa, velocity: v, coupling: c, potential: v0, nu } = *self;
        if !(kappa >= 0.0 && nu > 0.0) || ![kappa, v[0], v[1], c, v0, nu].iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter("Hamiltonian coefficients out of range".into()));
        }
        let v = if dim == 1 { [v[0], 0.0] } else { v };
        let vn = (v[0] * v[0] + v[1] * v[1]).sqrt();
        let e = eye(dim);
        HamiltonianSpec::builder()
            .name(if *self == Self::default() { "quadratic-mfg".to_string() } else { "custom".to_string() })
            .h(move |x, _, p, m| {
                0.5 * kappa * (p[0] * p[0] + p[1] * p[1]) + v[0] * p[0] + v[1] * p[1] - c * m
                    - v0 * (2.0 * std::f64::consts::PI * x[0]).cos()
            })
            .dp(move |_, _, p, _| [kappa * p[0] + v[0], kappa * p[1] + v[1]])
            .dxp(|_, _, _, _| 0.0)
            .dpp(move |_, _, _, _| scaled(&e, kappa))
            .dmp(|_, _, _, _| [0.0; 2])
            .diffusion(DiffusionSpec::constant(scaled(&e, nu), dim)?)
            .lipschitz(
                move |r| (0.5 * kappa * r * r + vn * r + c.abs() * r + v0.abs()).max(kappa * r + vn + c.abs()),
                move |r| ((kappa * r + vn) * r).max(2.0 * kappa * r).max(kappa * r + vn).max(2.0 * kappa),
            )
            .build()
    }
}

/// `H = |p|^2 / 2 - m`, `A = I / 2`.
pub fn quadratic_mfg_model(m0: Field, final_cost: Arc<dyn FinalCost>, delta: f64) -> Result<CouplingModel> {
    let spec = PolynomialHamiltonian::default().spec(m0.space().dim())?;
    build_mfg_coupling(&spec, m0, final_cost, delta)
}

pub fn custom_mfg_model(
    params: PolynomialHamiltonian,
    m0: Field,
    final_cost: Arc<dyn FinalCost>,
    delta: f64,
) -> Result<CouplingModel> {
    let mut model = build_mfg_coupling(&params.spec(m0.space().dim())?, m0, final_cost, delta)?;
    model.name = "custom".into();
    Ok(model)
}

/// Congestion model with `H1 = |q|^2 / 2`, `f = m`, `A = I / 2`.
pub fn congestion_model(alpha: f64, m0: Field, final_cost: Arc<dyn FinalCost>, delta: f64) -> Result<CouplingModel> {
    let dim = m0.space().dim();
    let spec = CongestionSpec {
        alpha,
        h1: ScalarHamiltonian::quadratic(dim),
        f: Arc::new(|_, _, m| m),
        diffusion: DiffusionSpec::constant(scaled(&eye(dim), 0.5), dim)?,
        // F = |p|^2 / (2 m^a) - m and its partials on |p| <= R, 1/R <= m <= R
        lipschitz_f: Arc::new(move |r: f64| {
            let r = r.max(1.0);
            (0.5 * r.powf(alpha + 2.0) + r).max(r.powf(alpha + 1.0)).max(0.5 * alpha * r.powf(alpha + 3.0) + 1.0)
        }),
        lipschitz_g: Arc::new(move |r: f64| (1.0 + alpha).powi(2) * (r.max(1.0) + 1.0).powf(alpha + 3.0) + 2.0),
    };
    build_congestion_coupling(&spec, m0, final_cost, delta)
}

/// Final coupling of the linear counterexample.
#[derive(Clone, Debug)]
pub enum CounterexampleCoupling {
    /// `h[m] = alpha m` exactly; not regularizing.
    Pointwise,
    /// `h[m] = alpha P m` with `P` the projection onto the given orthogonal fields.
    Projected(Vec<Field>),
}

/// `-u_t - Du = 0`, `m_t - Dm = Du` (`D` the Laplacian), `u(T) = h[m(T)]`.
pub fn linear_counterexample_model(
    alpha: f64,
    m0: Field,
    coupling: CounterexampleCoupling,
    delta: f64,
) -> Result<CouplingModel> {
    let space = m0.space();
    let dim = space.dim();
    let final_cost: Arc<dyn FinalCost> = match coupling {
        CounterexampleCoupling::Pointwise => Arc::new(ConvolutionCost::new(
            Profile::linear(alpha),
            DeltaKernel::field(space),
            ConvolutionMethod::Direct,
        )?),
        CounterexampleCoupling::Projected(basis) => Arc::new(ProjectedLinearCost::new(alpha, basis)?),
    };
    let constants = ModelConstants {
        lipschitz_f: Arc::new(|_| 0.0),
        lipschitz_g: Arc::new(move |_| (dim as f64).sqrt()),
        delta,
        ellipticity: 1.0,
    };
    let id = IDENTITY;
    CouplingModel::new(
        format!("linear-counterexample(alpha={alpha})"),
        Arc::new(move |_, _| id),
        Arc::new(move |_, _| id),
        Arc::new(|_: &PointArgs| Ok(0.0)),
        Arc::new(move |_: &PointArgs, h: &Matrix| Ok(-trace(h, dim))),
        final_cost,
        m0,
        constants,
    )
}
