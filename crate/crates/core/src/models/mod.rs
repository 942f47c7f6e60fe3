//! Coupling models for the backward-forward system
//!
//! ```text
//! -u_t - a_ij u_ij + F(u, m, Du, Dm, x, t) = 0
//!  m_t - c_ij m_ij + G(u, m, Du, Dm, D^2 u, x, t) = 0
//!  u(., T) = h[m(., T)],   m(., 0) = m0
//! ```
//!
//! A [`CouplingModel`] bundles the coefficients, the two couplings, the final
//! cost operator and the initial density together with the constants the
//! truncation and monitoring code needs.

mod final_cost;
mod hamiltonian;
mod validate;
mod zoo;

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Field, Matrix, Point, Vector};

pub use final_cost::{
    final_cost_constant, final_cost_convolution, periodic_gaussian_kernel, ConstantCost, ConvolutionCost,
    ConvolutionMethod, DeltaKernel, FinalCost, ProjectedLinearCost, Profile,
};
pub use hamiltonian::{
    build_congestion_coupling, build_mfg_coupling, CongestionSpec, DiffusionSpec, HamiltonianSpec,
    HamiltonianSpecBuilder, ScalarHamiltonian, FD_STEP, FD_TOL,
};
pub use validate::{validate_assumptions, AssumptionReport};
pub use zoo::{
    congestion_model, custom_mfg_model, decoupled_heat_model, linear_counterexample_model, quadratic_mfg_model,
    CounterexampleCoupling, PolynomialHamiltonian,
};

/// Arguments of the couplings at one space-time point.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PointArgs {
    pub x: Point,
    pub t: f64,
    pub u: f64,
    pub m: f64,
    pub du: Vector,
    pub dm: Vector,
}

pub type CoefficientFn = Arc<dyn Fn(Point, f64) -> Matrix + Send + Sync>;
pub type CouplingFn = Arc<dyn Fn(&PointArgs) -> Result<f64> + Send + Sync>;
pub type SecondOrderCouplingFn = Arc<dyn Fn(&PointArgs, &Matrix) -> Result<f64> + Send + Sync>;
pub type DriftFn = Arc<dyn Fn(&PointArgs) -> Result<Vector> + Send + Sync>;
/// Declared local constant as a function of the radius of the argument box.
pub type LipschitzFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Declared constants of a model.
///
/// `lipschitz_f(R)` must bound `|F|` and its Lipschitz ratio for all arguments
/// with `|u|, m, 1/m, |Du|, |Dm| <= R`; likewise `lipschitz_g` in the mixed
/// form `L (|da| + ...)(1 + |H1|) + L |H1 - H2|`.
#[derive(Clone)]
pub struct ModelConstants {
    pub lipschitz_f: LipschitzFn,
    pub lipschitz_g: LipschitzFn,
    pub delta: f64,
    pub ellipticity: f64,
}

/// Divergence-form drift of a Fokker-Planck equation `m_t - d_ij(c_ij m) - div(m b) = 0`.
#[derive(Clone)]
pub struct Transport {
    pub drift: DriftFn,
}

#[derive(Clone)]
pub struct CouplingModel {
    pub name: String,
    /// `a_ij` of the backward equation.
    pub hjb_diffusion: CoefficientFn,
    /// `c_ij` of the forward equation.
    pub fp_diffusion: CoefficientFn,
    pub f: CouplingFn,
    pub g: SecondOrderCouplingFn,
    pub final_cost: Arc<dyn FinalCost>,
    pub m0: Field,
    pub constants: ModelConstants,
    pub transport: Option<Transport>,
}

impl fmt::Debug for CouplingModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CouplingModel")
            .field("name", &self.name)
            .field("final_cost", &self.final_cost.describe())
            .field("delta", &self.constants.delta)
            .finish_non_exhaustive()
    }
}

/// Probe count and tolerance for the affinity-in-Hessian contract.
pub const AFFINITY_PROBES: usize = 100;
pub const AFFINITY_TOL: f64 = 1e-8;

impl CouplingModel {
    /// Assembles a model and checks the data contracts: `m0 >= delta > 0`,
    /// finite `m0`, and `G` affine in its Hessian slot.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        hjb_diffusion: CoefficientFn,
        fp_diffusion: CoefficientFn,
        f: CouplingFn,
        g: SecondOrderCouplingFn,
        final_cost: Arc<dyn FinalCost>,
        m0: Field,
        constants: ModelConstants,
    ) -> Result<Self> {
        let model = Self {
            name: name.into(),
            hjb_diffusion,
            fp_diffusion,
            f,
            g,
            final_cost,
            m0,
            constants,
            transport: None,
        };
        model.check_initial_density()?;
        let dev = model.hessian_affinity_deviation(AFFINITY_PROBES, 0x5eed)?;
        if dev > AFFINITY_TOL {
            return Err(Error::ModelContract(format!(
                "G is not affine in the Hessian slot (deviation {dev:e})"
            )));
        }
        Ok(model)
    }

    pub fn with_transport(mut self, drift: DriftFn) -> Self {
        self.transport = Some(Transport { drift });
        self
    }

    fn check_initial_density(&self) -> Result<()> {
        let delta = self.constants.delta;
        if !(delta > 0.0) {
            return Err(Error::InvalidParameter(format!("density floor must be positive, got {delta}")));
        }
        if !self.m0.is_finite() {
            return Err(Error::AssumptionViolated("initial density is not finite".into()));
        }
        if self.m0.min() < delta {
            return Err(Error::AssumptionViolated(format!(
                "initial density minimum {} is below the floor {delta}",
                self.m0.min()
            )));
        }
        Ok(())
    }

    /// `L_h` of the final cost operator.
    pub fn lipschitz_h(&self) -> f64 {
        self.final_cost.lipschitz()
    }

    /// `C0 = L_h |m0|^(1) + |h[m0]|^(2)`, so that `|h[m]|^(2) <= L_h |m|^(1) + C0`.
    pub fn c0(&self) -> Result<f64> {
        let hm0 = self.final_cost.apply(&self.m0)?;
        Ok(self.lipschitz_h() * self.m0.norm_c1() + hm0.norm_c2())
    }

    /// Largest relative change of the slope of `G` along a random Hessian
    /// direction when the base Hessian moves, over `probes` random argument
    /// sets with `|u|, |Du|, |Dm| <= 2`, `m in [0.5, 2]`.
    pub fn hessian_affinity_deviation(&self, probes: usize, seed: u64) -> Result<f64> {
        let dim = self.m0.space().dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..probes {
            let args = random_args(&mut rng, dim, 2.0);
            let dir = random_symmetric(&mut rng, dim, 1.0);
            let h1 = random_symmetric(&mut rng, dim, 5.0);
            let h2 = random_symmetric(&mut rng, dim, 5.0);
            let g = |h: &Matrix| (self.g)(&args, h);
            let shift = |h: &Matrix| -> Matrix {
                [[h[0][0] + dir[0][0], h[0][1] + dir[0][1]], [h[1][0] + dir[1][0], h[1][1] + dir[1][1]]]
            };
            let s1 = g(&shift(&h1))? - g(&h1)?;
            let s2 = g(&shift(&h2))? - g(&h2)?;
            worst = worst.max((s1 - s2).abs() / (1.0 + s1.abs()));
        }
        Ok(worst)
    }
}

pub(crate) fn random_args(rng: &mut ChaCha8Rng, dim: usize, r: f64) -> PointArgs {
    let vec = |rng: &mut ChaCha8Rng| -> Vector {
        let mut v = [0.0; 2];
        for c in v.iter_mut().take(dim) {
            *c = rng.gen_range(-r..r) / (dim as f64).sqrt();
        }
        v
    };
    let du = vec(rng);
    let dm = vec(rng);
    let mut x = [0.0; 2];
    for c in x.iter_mut().take(dim) {
        *c = rng.gen_range(0.0..1.0);
    }
    PointArgs { x, t: rng.gen_range(0.0..1.0), u: rng.gen_range(-r..r), m: rng.gen_range(1.0 / r..r), du, dm }
}

pub(crate) fn random_symmetric(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Matrix {
    let mut h = [[0.0; 2]; 2];
    h[0][0] = rng.gen_range(-scale..scale);
    if dim == 2 {
        h[1][1] = rng.gen_range(-scale..scale);
        let off = rng.gen_range(-scale..scale);
        h[0][1] = off;
        h[1][0] = off;
    }
    h
}
