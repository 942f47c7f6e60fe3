//! Mean-field-game couplings built from a Hamiltonian and a diffusion matrix.
//!
//! The backward equation is `-u_t - A_ij u_ij + H(x, t, Du, m) = 0` and the
//! density solves `m_t - d_ij(A_ij m) - div(m D_p H) = 0`. Expanding the
//! divergence form gives the nondivergence coupling
//!
//! ```text
//! G = -(d_ij A_ij) m - 2 (d_i A_ij) m_j - D_p H . Dm
//!     - m (H_{x_i p_i} + H_{p_i p_j} u_ij + H_{m p_i} m_i)
//! ```

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{random_args, CouplingModel, FinalCost, LipschitzFn, ModelConstants, PointArgs};
use crate::error::{Error, Result};
use crate::grid::{contract, dot, min_eigenvalue, Field, Matrix, Point, Vector};

pub type ScalarFn = Arc<dyn Fn(Point, f64, Vector, f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(Point, f64, Vector, f64) -> Vector + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(Point, f64, Vector, f64) -> Matrix + Send + Sync>;

/// Step and tolerance of the finite-difference cross-validation.
pub const FD_STEP: f64 = 1e-3;
pub const FD_TOL: f64 = 1e-4;
const FD_PROBES: usize = 64;

/// `A = (1/2) Sigma Sigma^T` with its first and second divergences.
#[derive(Clone)]
pub struct DiffusionSpec {
    pub a: Arc<dyn Fn(Point, f64) -> Matrix + Send + Sync>,
    /// `(sum_i d_i A_ij)_j`.
    pub div_a: Arc<dyn Fn(Point, f64) -> Vector + Send + Sync>,
    /// `sum_ij d_ij A_ij`.
    pub div2_a: Arc<dyn Fn(Point, f64) -> f64 + Send + Sync>,
    pub ellipticity: f64,
}

impl fmt::Debug for DiffusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DiffusionSpec(ellipticity={})", self.ellipticity)
    }
}

impl DiffusionSpec {
    pub fn constant(a: Matrix, dim: usize) -> Result<Self> {
        let ellipticity = min_eigenvalue(&a, dim);
        if !(ellipticity > 0.0) || a[0][1] != a[1][0] {
            return Err(Error::AssumptionViolated("diffusion matrix is not symmetric positive definite".into()));
        }
        Ok(Self {
            a: Arc::new(move |_, _| a),
            div_a: Arc::new(|_, _| [0.0; 2]),
            div2_a: Arc::new(|_, _| 0.0),
            ellipticity,
        })
    }

    fn max_fd_error(&self, dim: usize, rng: &mut ChaCha8Rng) -> f64 {
        let e = FD_STEP;
        let mut worst: f64 = 0.0;
        for _ in 0..FD_PROBES {
            let x = [rng.gen_range(0.0..1.0), if dim == 2 { rng.gen_range(0.0..1.0) } else { 0.0 }];
            let t = rng.gen_range(0.0..1.0);
            let shifted = |axis: usize, s: f64| {
                let mut y = x;
                y[axis] += s;
                y
            };
            let mut div = [0.0; 2];
            let mut div2 = 0.0;
            for i in 0..dim {
                let ap = (self.a)(shifted(i, e), t);
                let am = (self.a)(shifted(i, -e), t);
                let dp = (self.div_a)(shifted(i, e), t);
                let dm = (self.div_a)(shifted(i, -e), t);
                for j in 0..dim {
                    div[j] += (ap[i][j] - am[i][j]) / (2.0 * e);
                }
                div2 += (dp[i] - dm[i]) / (2.0 * e);
            }
            let d = (self.div_a)(x, t);
            for j in 0..dim {
                worst = worst.max(rel(div[j], d[j]));
            }
            worst = worst.max(rel(div2, (self.div2_a)(x, t)));
        }
        worst
    }
}

fn rel(approx: f64, exact: f64) -> f64 {
    (approx - exact).abs() / (1.0 + exact.abs())
}

/// Hamiltonian `H(x, t, p, m)` with the derivatives the coupling needs.
#[derive(Clone)]
pub struct HamiltonianSpec {
    pub name: String,
    pub h: ScalarFn,
    pub dp: VectorFn,
    /// Trace `sum_i H_{x_i p_i}`.
    pub dxp: ScalarFn,
    pub dpp: MatrixFn,
    pub dmp: VectorFn,
    pub diffusion: DiffusionSpec,
    pub lipschitz_f: LipschitzFn,
    pub lipschitz_g: LipschitzFn,
}

impl fmt::Debug for HamiltonianSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianSpec").field("name", &self.name).finish_non_exhaustive()
    }
}

/// Collects the callables of a [`HamiltonianSpec`]; `build` rejects missing pieces.
#[derive(Default)]
pub struct HamiltonianSpecBuilder {
    name: Option<String>,
    h: Option<ScalarFn>,
    dp: Option<VectorFn>,
    dxp: Option<ScalarFn>,
    dpp: Option<MatrixFn>,
    dmp: Option<VectorFn>,
    diffusion: Option<DiffusionSpec>,
    lipschitz_f: Option<LipschitzFn>,
    lipschitz_g: Option<LipschitzFn>,
}

impl HamiltonianSpecBuilder {
    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn h(mut self, f: impl Fn(Point, f64, Vector, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.h = Some(Arc::new(f));
        self
    }

    pub fn dp(mut self, f: impl Fn(Point, f64, Vector, f64) -> Vector + Send + Sync + 'static) -> Self {
        self.dp = Some(Arc::new(f));
        self
    }

    pub fn dxp(mut self, f: impl Fn(Point, f64, Vector, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.dxp = Some(Arc::new(f));
        self
    }

    pub fn dpp(mut self, f: impl Fn(Point, f64, Vector, f64) -> Matrix + Send + Sync + 'static) -> Self {
        self.dpp = Some(Arc::new(f));
        self
    }

    pub fn dmp(mut self, f: impl Fn(Point, f64, Vector, f64) -> Vector + Send + Sync + 'static) -> Self {
        self.dmp = Some(Arc::new(f));
        self
    }

    pub fn diffusion(mut self, d: DiffusionSpec) -> Self {
        self.diffusion = Some(d);
        self
    }

    pub fn lipschitz(
        mut self,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.lipschitz_f = Some(Arc::new(f));
        self.lipschitz_g = Some(Arc::new(g));
        self
    }

    pub fn build(self) -> Result<HamiltonianSpec> {
        fn need<T>(v: Option<T>, what: &str) -> Result<T> {
            v.ok_or_else(|| Error::ModelContract(format!("Hamiltonian spec is missing {what}")))
        }
        Ok(HamiltonianSpec {
            name: self.name.unwrap_or_else(|| "custom".into()),
            h: need(self.h, "H")?,
            dp: need(self.dp, "D_p H")?,
            dxp: need(self.dxp, "H_{x_i p_i}")?,
            dpp: need(self.dpp, "H_{pp}")?,
            dmp: need(self.dmp, "H_{mp}")?,
            diffusion: need(self.diffusion, "the diffusion matrix")?,
            lipschitz_f: need(self.lipschitz_f, "L_F")?,
            lipschitz_g: need(self.lipschitz_g, "L_G")?,
        })
    }
}

impl HamiltonianSpec {
    pub fn builder() -> HamiltonianSpecBuilder {
        HamiltonianSpecBuilder::default()
    }

    /// Worst relative disagreement between the derivative callables and
    /// central differences of `H` (and of the diffusion) on random probes.
    pub fn cross_validate(&self, dim: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = FD_STEP;
        let mut worst: f64 = 0.0;
        for _ in 0..FD_PROBES {
            let PointArgs { x, t, m, du: p, .. } = random_args(&mut rng, dim, 2.0);
            let bump = |v: Vector, axis: usize, s: f64| {
                let mut w = v;
                w[axis] += s;
                w
            };
            let dp = (self.dp)(x, t, p, m);
            let dpp = (self.dpp)(x, t, p, m);
            let dmp = (self.dmp)(x, t, p, m);
            let mut dxp = 0.0;
            for i in 0..dim {
                let fd = ((self.h)(x, t, bump(p, i, e), m) - (self.h)(x, t, bump(p, i, -e), m)) / (2.0 * e);
                worst = worst.max(rel(fd, dp[i]));
                let gp = (self.dp)(x, t, bump(p, i, e), m);
                let gm = (self.dp)(x, t, bump(p, i, -e), m);
                for j in 0..dim {
                    worst = worst.max(rel((gp[j] - gm[j]) / (2.0 * e), dpp[j][i]));
                }
                let fm = ((self.dp)(x, t, p, m + e)[i] - (self.dp)(x, t, p, m - e)[i]) / (2.0 * e);
                worst = worst.max(rel(fm, dmp[i]));
                dxp += ((self.dp)(bump(x, i, e), t, p, m)[i] - (self.dp)(bump(x, i, -e), t, p, m)[i]) / (2.0 * e);
            }
            worst = worst.max(rel(dxp, (self.dxp)(x, t, p, m)));
        }
        worst.max(self.diffusion.max_fd_error(dim, &mut rng))
    }
}

fn check_spec(spec: &HamiltonianSpec, dim: usize) -> Result<()> {
    let err = spec.cross_validate(dim, 0xfd);
    if !(err <= FD_TOL) {
        return Err(Error::ModelContract(format!(
            "derivatives of {} disagree with finite differences (relative error {err:e})",
            spec.name
        )));
    }
    Ok(())
}

fn diffusion_closures(d: &DiffusionSpec) -> (super::CoefficientFn, super::CoefficientFn) {
    (d.a.clone(), d.a.clone())
}

/// `F = H(x, t, Du, m)`, `G` as in the module docs, `a = c = A`.
pub fn build_mfg_coupling(
    spec: &HamiltonianSpec,
    m0: Field,
    final_cost: Arc<dyn FinalCost>,
    delta: f64,
) -> Result<CouplingModel> {
    let dim = m0.space().dim();
    check_spec(spec, dim)?;
    let h = spec.h.clone();
    let f = Arc::new(move |a: &PointArgs| Ok(h(a.x, a.t, a.du, a.m)));
    let (dp, dxp, dpp, dmp) = (spec.dp.clone(), spec.dxp.clone(), spec.dpp.clone(), spec.dmp.clone());
    let (div_a, div2_a) = (spec.diffusion.div_a.clone(), spec.diffusion.div2_a.clone());
    let g = Arc::new(move |a: &PointArgs, hess: &Matrix| {
        let b = dp(a.x, a.t, a.du, a.m);
        let inner = dxp(a.x, a.t, a.du, a.m) + contract(&dpp(a.x, a.t, a.du, a.m), hess) + dot(&dmp(a.x, a.t, a.du, a.m), &a.dm);
        Ok(-div2_a(a.x, a.t) * a.m - 2.0 * dot(&div_a(a.x, a.t), &a.dm) - dot(&b, &a.dm) - a.m * inner)
    });
    let (hjb, fp) = diffusion_closures(&spec.diffusion);
    let constants = ModelConstants {
        lipschitz_f: spec.lipschitz_f.clone(),
        lipschitz_g: spec.lipschitz_g.clone(),
        delta,
        ellipticity: spec.diffusion.ellipticity,
    };
    let drift = spec.dp.clone();
    Ok(CouplingModel::new(spec.name.clone(), hjb, fp, f, g, final_cost, m0, constants)?
        .with_transport(Arc::new(move |a: &PointArgs| Ok(drift(a.x, a.t, a.du, a.m)))))
}

/// A Hamiltonian `H1(q)` of the momentum alone.
#[derive(Clone)]
pub struct ScalarHamiltonian {
    pub name: String,
    pub value: Arc<dyn Fn(Vector) -> f64 + Send + Sync>,
    pub grad: Arc<dyn Fn(Vector) -> Vector + Send + Sync>,
    pub hess: Arc<dyn Fn(Vector) -> Matrix + Send + Sync>,
}

impl ScalarHamiltonian {
    /// `H1(q) = |q|^2 / 2`.
    pub fn quadratic(dim: usize) -> Self {
        let eye = if dim == 1 { [[1.0, 0.0], [0.0, 0.0]] } else { [[1.0, 0.0], [0.0, 1.0]] };
        Self {
            name: "|q|^2/2".into(),
            value: Arc::new(|q| 0.5 * dot(&q, &q)),
            grad: Arc::new(|q| q),
            hess: Arc::new(move |_| eye),
        }
    }
}

/// Data of the congestion model `H = m^alpha H1(p / m^alpha) - f(x, t, m)`.
#[derive(Clone)]
pub struct CongestionSpec {
    pub alpha: f64,
    pub h1: ScalarHamiltonian,
    pub f: Arc<dyn Fn(Point, f64, f64) -> f64 + Send + Sync>,
    pub diffusion: DiffusionSpec,
    pub lipschitz_f: LipschitzFn,
    pub lipschitz_g: LipschitzFn,
}

fn positive_density(m: f64) -> Result<f64> {
    if m > 0.0 && m.is_finite() {
        Ok(m)
    } else {
        Err(Error::ModelContract(format!("congestion coupling evaluated at density {m}")))
    }
}

/// `F = m^alpha H1(Du / m^alpha) - f`,
/// `G = -(d_ij A_ij) m - 2 (d_i A_ij) m_j - D H1(q) . Dm - m^(1-alpha) H1_pp : D^2 u
///      + alpha m^(-alpha) (H1_pp Du) . Dm` with `q = Du / m^alpha`.
pub fn build_congestion_coupling(
    spec: &CongestionSpec,
    m0: Field,
    final_cost: Arc<dyn FinalCost>,
    delta: f64,
) -> Result<CouplingModel> {
    let alpha = spec.alpha;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("congestion exponent must be positive, got {alpha}")));
    }
    let dim = m0.space().dim();
    {
        let mut rng = ChaCha8Rng::seed_from_u64(0xc0);
        if spec.diffusion.max_fd_error(dim, &mut rng) > FD_TOL {
            return Err(Error::ModelContract("diffusion derivatives disagree with finite differences".into()));
        }
    }
    let momentum = move |a: &PointArgs| -> Result<(f64, Vector)> {
        let ma = positive_density(a.m)?.powf(alpha);
        Ok((ma, [a.du[0] / ma, a.du[1] / ma]))
    };
    let (h1, fcost) = (spec.h1.value.clone(), spec.f.clone());
    let f = Arc::new(move |a: &PointArgs| {
        let (ma, q) = momentum(a)?;
        Ok(ma * h1(q) - fcost(a.x, a.t, a.m))
    });
    let (grad, hess1) = (spec.h1.grad.clone(), spec.h1.hess.clone());
    let (div_a, div2_a) = (spec.diffusion.div_a.clone(), spec.diffusion.div2_a.clone());
    let g = Arc::new(move |a: &PointArgs, hess: &Matrix| {
        let (ma, q) = momentum(a)?;
        let hpp = hess1(q);
        let hpp_du = [hpp[0][0] * a.du[0] + hpp[0][1] * a.du[1], hpp[1][0] * a.du[0] + hpp[1][1] * a.du[1]];
        Ok(-div2_a(a.x, a.t) * a.m - 2.0 * dot(&div_a(a.x, a.t), &a.dm) - dot(&grad(q), &a.dm)
            - a.m / ma * contract(&hpp, hess)
            + alpha / ma * dot(&hpp_du, &a.dm))
    });
    let (hjb, fp) = diffusion_closures(&spec.diffusion);
    let constants = ModelConstants {
        lipschitz_f: spec.lipschitz_f.clone(),
        lipschitz_g: spec.lipschitz_g.clone(),
        delta,
        ellipticity: spec.diffusion.ellipticity,
    };
    let name = format!("congestion(alpha={alpha}, H1={})", spec.h1.name);
    let grad = spec.h1.grad.clone();
    Ok(CouplingModel::new(name, hjb, fp, f, g, final_cost, m0, constants)?.with_transport(Arc::new(
        move |a: &PointArgs| {
            let (_, q) = momentum(a)?;
            Ok(grad(q))
        },
    )))
}
