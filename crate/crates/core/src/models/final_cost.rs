//! Final-cost operators `h: C^1(T^N) -> C^2(T^N)`.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::{euclidean, frobenius, Field, SpaceGrid};

/// Final condition `u(., T) = h[m(., T)]`.
pub trait FinalCost: Send + Sync {
    fn apply(&self, m: &Field) -> Result<Field>;
    /// `L_h` with `|h[m1] - h[m2]|^(2) <= L_h |m1 - m2|^(1)` in the discrete norms.
    fn lipschitz(&self) -> f64;
    /// Whether the operator gains two derivatives. Non-regularizing operators
    /// are accepted only for counterexample experiments.
    fn is_regularizing(&self) -> bool;
    fn describe(&self) -> String;
}

/// `h[m] = u_T` for a fixed field.
#[derive(Clone, Debug)]
pub struct ConstantCost {
    u_t: Field,
}

impl ConstantCost {
    pub fn new(u_t: Field) -> Result<Self> {
        if !u_t.is_finite() {
            return Err(Error::InvalidParameter("final datum is not finite".into()));
        }
        Ok(Self { u_t })
    }
}

pub fn final_cost_constant(u_t: Field) -> Result<Arc<dyn FinalCost>> {
    Ok(Arc::new(ConstantCost::new(u_t)?))
}

impl FinalCost for ConstantCost {
    fn apply(&self, m: &Field) -> Result<Field> {
        if m.space() != self.u_t.space() {
            return Err(Error::InvalidGrid("density and final datum grids differ".into()));
        }
        Ok(self.u_t.clone())
    }

    fn lipschitz(&self) -> f64 {
        0.0
    }

    fn is_regularizing(&self) -> bool {
        true
    }

    fn describe(&self) -> String {
        "constant".into()
    }
}

/// Scalar profile `h0` with bounds on its first three derivatives over `[-radius, radius]`.
#[derive(Clone)]
pub struct Profile {
    pub name: String,
    pub value: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    /// Range of densities over which the bounds hold; also bounds `|m|` in `L_h`.
    pub radius: f64,
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Profile({}, d1={}, d2={}, d3={}, R={})", self.name, self.d1, self.d2, self.d3, self.radius)
    }
}

impl Profile {
    pub fn identity() -> Self {
        Self::linear(1.0)
    }

    pub fn linear(a: f64) -> Self {
        Self {
            name: format!("{a}*s"),
            value: Arc::new(move |s| a * s),
            d1: a.abs(),
            d2: 0.0,
            d3: 0.0,
            radius: f64::INFINITY,
        }
    }

    /// `s^2` on `[-radius, radius]`.
    pub fn square(radius: f64) -> Self {
        Self {
            name: "s^2".into(),
            value: Arc::new(|s| s * s),
            d1: 2.0 * radius,
            d2: 2.0,
            d3: 0.0,
            radius,
        }
    }

    fn is_affine(&self) -> bool {
        self.d2 == 0.0 && self.d3 == 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ConvolutionMethod {
    #[default]
    Direct,
    Fft,
}

/// Discrete periodic Gaussian of width `sigma`, normalized so that `h^dim sum psi = 1`.
pub fn periodic_gaussian_kernel(space: SpaceGrid, sigma: f64) -> Result<Field> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("kernel width must be positive, got {sigma}")));
    }
    // images beyond this distance contribute below exp(-40)
    let images = (sigma * 80f64.sqrt()).ceil() as i64 + 1;
    let profile_1d = |x: f64| -> f64 {
        (-images..=images)
            .map(|z| {
                let d = x - z as f64;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .sum()
    };
    let raw = Field::from_fn(space, |p| {
        let mut v = profile_1d(p[0]);
        if space.dim() == 2 {
            v *= profile_1d(p[1]);
        }
        v
    });
    let mass = raw.integral();
    Ok(raw.map(|v| v / mass))
}

/// Discrete delta: `h[m] = h0(m)` pointwise. Not regularizing.
#[derive(Clone, Copy, Debug)]
pub struct DeltaKernel;

impl DeltaKernel {
    pub fn field(space: SpaceGrid) -> Field {
        let mut f = Field::zeros(space);
        f.values_mut()[0] = 1.0 / space.cell_volume();
        f
    }
}

/// `h[m] = h0(m * psi)` with a periodic kernel `psi`.
#[derive(Clone, Debug)]
pub struct ConvolutionCost {
    profile: Profile,
    kernel: Field,
    method: ConvolutionMethod,
    k1: f64,
    k2: f64,
}

pub fn final_cost_convolution(profile: Profile, kernel: Field) -> Result<Arc<dyn FinalCost>> {
    Ok(Arc::new(ConvolutionCost::new(profile, kernel, ConvolutionMethod::Direct)?))
}

impl ConvolutionCost {
    pub fn new(profile: Profile, kernel: Field, method: ConvolutionMethod) -> Result<Self> {
        if !kernel.is_finite() || kernel.min() < 0.0 {
            return Err(Error::InvalidParameter("kernel must be finite and nonnegative".into()));
        }
        let mass = kernel.integral();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("kernel mass is {mass}, expected 1")));
        }
        let space = kernel.space();
        let w = space.cell_volume();
        let vals = kernel.values();
        let k1 = (0..space.len()).map(|i| euclidean(&space.grad_at(vals, i))).sum::<f64>() * w;
        let k2 = (0..space.len()).map(|i| frobenius(&space.hess_at(vals, i))).sum::<f64>() * w;
        Ok(Self { profile, kernel, method, k1, k2 })
    }

    pub fn with_method(mut self, method: ConvolutionMethod) -> Self {
        self.method = method;
        self
    }

    pub fn kernel_norms(&self) -> (f64, f64) {
        (self.k1, self.k2)
    }

    /// `m * psi` on the grid.
    pub fn smooth(&self, m: &Field) -> Result<Field> {
        if m.space() != self.kernel.space() {
            return Err(Error::InvalidGrid("density and kernel grids differ".into()));
        }
        Ok(match self.method {
            ConvolutionMethod::Direct => convolve_direct(m, &self.kernel),
            ConvolutionMethod::Fft => convolve_fft(m, &self.kernel),
        })
    }
}

impl FinalCost for ConvolutionCost {
    fn apply(&self, m: &Field) -> Result<Field> {
        let smoothed = self.smooth(m)?;
        let out = smoothed.map(|s| (self.profile.value)(s));
        if !out.is_finite() {
            return Err(Error::ModelContract("final cost produced non-finite values".into()));
        }
        Ok(out)
    }

    /// `d1 (1 + k1 + k2) + d2 R (k1 + 2 k1^2 + k2) + d3 R^2 k1^2`, where `k1`,
    /// `k2` are the discrete `L^1` norms of `D psi` and `D^2 psi`. Exact for an
    /// affine profile; for curved profiles the discrete chain rule holds up to
    /// `O(h^2)`.
    fn lipschitz(&self) -> f64 {
        let p = &self.profile;
        let (k1, k2) = (self.k1, self.k2);
        let mut l = p.d1 * (1.0 + k1 + k2);
        if !p.is_affine() {
            l += p.d2 * p.radius * (k1 + 2.0 * k1 * k1 + k2) + p.d3 * p.radius * p.radius * k1 * k1;
        }
        l
    }

    fn is_regularizing(&self) -> bool {
        self.kernel.values().iter().filter(|v| **v != 0.0).count() > 1
    }

    fn describe(&self) -> String {
        let kind = if self.is_regularizing() { "kernel" } else { "delta" };
        format!("convolution({}, {kind})", self.profile.name)
    }
}

fn convolve_direct(m: &Field, kernel: &Field) -> Field {
    let space = m.space();
    let n = space.n();
    let w = space.cell_volume();
    let mv = m.values();
    let kv = kernel.values();
    let values = (0..space.len())
        .map(|i| {
            let [ix, iy] = space.split(i);
            let mut acc = 0.0;
            for (j, mj) in mv.iter().enumerate() {
                let [jx, jy] = space.split(j);
                let k = space.index((ix + n - jx) % n, (iy + n - jy) % n);
                acc += mj * kv[k];
            }
            acc * w
        })
        .collect();
    Field::from_values(space, values).expect("same grid")
}

fn convolve_fft(m: &Field, kernel: &Field) -> Field {
    let space = m.space();
    let w = space.cell_volume();
    let mut a: Vec<Complex<f64>> = m.values().iter().map(|v| Complex::new(*v, 0.0)).collect();
    let mut b: Vec<Complex<f64>> = kernel.values().iter().map(|v| Complex::new(*v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    fft_nd(&mut planner, &mut a, space, false);
    fft_nd(&mut planner, &mut b, space, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    fft_nd(&mut planner, &mut a, space, true);
    let scale = w / space.len() as f64;
    let values = a.iter().map(|c| c.re * scale).collect();
    Field::from_values(space, values).expect("same grid")
}

fn fft_nd(planner: &mut FftPlanner<f64>, data: &mut [Complex<f64>], space: SpaceGrid, inverse: bool) {
    let n = space.n();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    // first axis is contiguous
    fft.process(data);
    if space.dim() == 2 {
        let mut column = vec![Complex::new(0.0, 0.0); n];
        for ix in 0..n {
            for (iy, c) in column.iter_mut().enumerate() {
                *c = data[iy * n + ix];
            }
            fft.process(&mut column);
            for (iy, c) in column.iter().enumerate() {
                data[iy * n + ix] = *c;
            }
        }
    }
}

/// `h[m] = alpha P m`, where `P` is the discrete orthogonal projection onto
/// the span of a few mutually orthogonal basis fields.
#[derive(Clone, Debug)]
pub struct ProjectedLinearCost {
    alpha: f64,
    basis: Vec<Field>,
    lipschitz: f64,
}

impl ProjectedLinearCost {
    pub fn new(alpha: f64, basis: Vec<Field>) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::InvalidParameter("coupling coefficient is not finite".into()));
        }
        if basis.is_empty() {
            return Err(Error::InvalidParameter("projection basis is empty".into()));
        }
        let space = basis[0].space();
        let mut lipschitz = 0.0;
        for (i, phi) in basis.iter().enumerate() {
            if phi.space() != space {
                return Err(Error::InvalidGrid("basis fields live on different grids".into()));
            }
            let sq: f64 = phi.values().iter().map(|v| v * v).sum();
            if !(sq > 0.0) {
                return Err(Error::InvalidParameter("zero basis field".into()));
            }
            for other in &basis[..i] {
                let cross: f64 = phi.values().iter().zip(other.values()).map(|(a, b)| a * b).sum();
                if cross.abs() > 1e-9 * sq {
                    return Err(Error::InvalidParameter("basis fields are not orthogonal".into()));
                }
            }
            let l1: f64 = phi.values().iter().map(|v| v.abs()).sum();
            lipschitz += l1 / sq * phi.norm_c2();
        }
        Ok(Self { alpha, basis, lipschitz: alpha.abs() * lipschitz })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn project(&self, m: &Field) -> Result<Field> {
        let space = self.basis[0].space();
        if m.space() != space {
            return Err(Error::InvalidGrid("density and basis grids differ".into()));
        }
        let mut out = vec![0.0; space.len()];
        for phi in &self.basis {
            let pv = phi.values();
            let coeff = m.values().iter().zip(pv).map(|(a, b)| a * b).sum::<f64>()
                / pv.iter().map(|v| v * v).sum::<f64>();
            for (o, p) in out.iter_mut().zip(pv) {
                *o += coeff * p;
            }
        }
        Field::from_values(space, out)
    }
}

impl FinalCost for ProjectedLinearCost {
    fn apply(&self, m: &Field) -> Result<Field> {
        let alpha = self.alpha;
        Ok(self.project(m)?.map(|v| alpha * v))
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn is_regularizing(&self) -> bool {
        true
    }

    fn describe(&self) -> String {
        format!("projected-linear(alpha={}, modes={})", self.alpha, self.basis.len())
    }
}
