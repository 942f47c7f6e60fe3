//! Picard iteration of the decoupling operator.
//!
//! One sweep `(u^, m^) -> (u_bar, m_bar)` solves
//!
//! ```text
//!  m_t - c_ij m_ij + G^(u^, m^, Du^, Dm^, D^2 u^) = 0,   m(0) = m0
//! -u_t - a_ij u_ij + F^(u^, m_bar, Du^, Dm_bar) = 0,     u(T) = h[m_bar(T)]
//! ```
//!
//! in that order, with the truncated couplings. Successive iterates are
//! compared in `d = ||du||_{W^{2,1}_p} + |du|^(1) + |dm|^(1)`.

use std::time::Instant;

use log::{debug, warn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{contract, norm_c10, norm_w21p, Field, Matrix, SpaceTimeField, TorusGrid};
use crate::models::{CouplingModel, PointArgs};
use crate::stepper::{solve_backward, solve_forward, solve_fp_conservative, Coefficients, ParabolicProblem};
use crate::truncation::{wrap_model, TruncatedModel, TruncationParams};

/// Consecutive increases of `d` after which the iteration is declared divergent.
pub const DIVERGENCE_WINDOW: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct PicardOptions {
    /// Exponent of the Sobolev part of the metric; `None` means `dim + 3`.
    pub p: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of the new iterate; 1 is the plain iteration.
    pub relaxation: f64,
    /// Explicit cross-diffusion terms in 2D (monotone scheme).
    pub positivity: bool,
    pub krylov_tol: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { p: None, tol: 1e-8, max_iter: 200, relaxation: 1.0, positivity: false, krylov_tol: 1e-10 }
    }
}

impl PicardOptions {
    pub fn exponent(&self, dim: usize) -> f64 {
        self.p.unwrap_or(dim as f64 + 3.0)
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let p = self.exponent(dim);
        if !(p > dim as f64 + 2.0) {
            return Err(Error::InvalidParameter(format!("norm exponent must exceed dim + 2, got {p}")));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("tolerance must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::InvalidParameter(format!("relaxation must lie in (0, 1], got {}", self.relaxation)));
        }
        Ok(())
    }
}

/// The three parts of the metric, for an iterate or a difference of iterates.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Norms {
    pub u_w21p: f64,
    pub u_c10: f64,
    pub m_c10: f64,
}

impl Norms {
    pub fn of(u: &SpaceTimeField, m: &SpaceTimeField, p: f64) -> Self {
        let ((u_w21p, u_c10), m_c10) = rayon::join(|| rayon::join(|| norm_w21p(u, p), || norm_c10(u)), || norm_c10(m));
        Self { u_w21p, u_c10, m_c10 }
    }

    pub fn total(&self) -> f64 {
        self.u_w21p + self.u_c10 + self.m_c10
    }
}

/// Current iterate together with the ball it is measured against.
#[derive(Clone, Debug)]
pub struct IterateState {
    pub u_hat: SpaceTimeField,
    pub m_hat: SpaceTimeField,
    pub p: f64,
    pub radius: f64,
    pub norms: Norms,
}

impl IterateState {
    pub fn new(u_hat: SpaceTimeField, m_hat: SpaceTimeField, p: f64, radius: f64) -> Self {
        let norms = Norms::of(&u_hat, &m_hat, p);
        Self { u_hat, m_hat, p, radius, norms }
    }

    /// `u^ = 0`, `m^(t) = m0` for all `t`.
    pub fn initial(grid: TorusGrid, m0: &Field, p: f64, radius: f64) -> Self {
        Self::new(SpaceTimeField::zeros(grid), SpaceTimeField::constant_in_time(grid, m0), p, radius)
    }

    pub fn in_ball(&self) -> bool {
        self.norms.total() <= self.radius
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Converged,
    Diverged,
    MaxIterations,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::Diverged => "diverged",
            Status::MaxIterations => "max-iterations",
        }
    }
}

/// One row of the iteration history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub d: f64,
    /// `d_k / d_{k-1}`; absent for the first iteration.
    pub gamma: Option<f64>,
    pub diff: Norms,
    pub min_m: f64,
    pub max_du: f64,
    /// Whether the new iterate lies in the ball of radius `M1`.
    pub in_m1_ball: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Bounds {
    pub min_m: f64,
    pub max_m: f64,
    pub max_u: f64,
    pub max_du: f64,
    pub max_dm: f64,
}

impl Bounds {
    pub fn of(u: &SpaceTimeField, m: &SpaceTimeField) -> Self {
        Self { min_m: m.min(), max_m: m.max(), max_u: u.max_abs(), max_du: u.max_gradient(), max_dm: m.max_gradient() }
    }

    /// The fixed point lies where every clamp is the identity.
    pub fn within(&self, k: f64) -> bool {
        self.min_m >= 1.0 / k && self.max_m <= k && self.max_u <= k && self.max_du <= k && self.max_dm <= k
    }
}

/// Max-norm residuals of the untruncated equations at interior slices, with
/// centred time differences.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Residuals {
    pub hjb: f64,
    pub fp: f64,
}

#[derive(Clone, Debug)]
pub struct IterationReport {
    pub records: Vec<IterationRecord>,
    pub status: Status,
    pub converged: bool,
    pub residuals: Residuals,
    pub detrunc_ok: bool,
    pub bounds: Bounds,
    pub k: f64,
    pub m1: f64,
    /// Iterations whose iterate left the `M1` ball.
    pub m1_violations: usize,
    pub message: Option<String>,
}

impl IterationReport {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.d).collect()
    }

    /// `d_{k+1} / d_k`, one entry fewer than iterations.
    pub fn gamma_estimates(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.gamma).collect()
    }

    pub fn max_gamma(&self) -> Option<f64> {
        self.gamma_estimates().into_iter().reduce(f64::max)
    }

    pub fn final_d(&self) -> Option<f64> {
        self.records.last().map(|r| r.d)
    }
}

#[derive(Clone, Debug)]
pub struct PicardOutcome {
    pub u: SpaceTimeField,
    pub m: SpaceTimeField,
    pub report: IterationReport,
}

/// Grid data reused across sweeps.
struct Discretization<'a> {
    model: TruncatedModel<'a>,
    grid: TorusGrid,
    hjb: Coefficients,
    fp: Coefficients,
    opts: PicardOptions,
}

fn sample_coefficients(grid: TorusGrid, f: &(dyn Fn([f64; 2], f64) -> Matrix + Send + Sync)) -> Coefficients {
    let sampled = Coefficients::sample(grid, f);
    match &sampled {
        Coefficients::Sampled(v) if v.iter().all(|c| c == &v[0]) => Coefficients::Constant(v[0]),
        _ => sampled,
    }
}

impl<'a> Discretization<'a> {
    fn new(model: &'a CouplingModel, params: TruncationParams, grid: TorusGrid, opts: &PicardOptions) -> Result<Self> {
        if model.m0.space() != grid.space() {
            return Err(Error::InvalidGrid("initial density lives on a different grid".into()));
        }
        opts.validate(grid.dim())?;
        Ok(Self {
            model: wrap_model(model, params),
            grid,
            hjb: sample_coefficients(grid, model.hjb_diffusion.as_ref()),
            fp: sample_coefficients(grid, model.fp_diffusion.as_ref()),
            opts: opts.clone(),
        })
    }

    fn problem(&self, diffusion: Coefficients, datum: Field, source: SpaceTimeField) -> ParabolicProblem {
        ParabolicProblem::new(self.grid, diffusion, datum)
            .with_source(source)
            .with_positivity(self.opts.positivity)
            .with_krylov_tol(self.opts.krylov_tol)
    }

    fn apply(&self, u_hat: &SpaceTimeField, m_hat: &SpaceTimeField) -> Result<(SpaceTimeField, SpaceTimeField)> {
        let model = &self.model;
        let g = source(self.grid, u_hat, m_hat, |a, h| model.g(a, h))?;
        let m_bar = solve_forward(&self.problem(self.fp.clone(), model.model().m0.clone(), g))?;
        let f = source(self.grid, u_hat, &m_bar, |a, _| model.f(a))?;
        let final_slice = model.model().final_cost.apply(&m_bar.field(self.grid.nt())).map_err(|e| {
            Error::AssumptionViolated(format!("final cost operator failed: {e}"))
        })?;
        let u_bar = solve_backward(&self.problem(self.hjb.clone(), final_slice, f))?;
        Ok((u_bar, m_bar))
    }
}

/// Point arguments at grid point `i` of slice `j`.
fn point_args(grid: TorusGrid, u: &SpaceTimeField, m: &SpaceTimeField, j: usize, i: usize) -> (PointArgs, Matrix) {
    let space = grid.space();
    let (us, ms) = (u.slice(j), m.slice(j));
    let args = PointArgs {
        x: space.point(i),
        t: grid.time(j),
        u: us[i],
        m: ms[i],
        du: space.grad_at(us, i),
        dm: space.grad_at(ms, i),
    };
    (args, space.hess_at(us, i))
}

fn source(
    grid: TorusGrid,
    u: &SpaceTimeField,
    m: &SpaceTimeField,
    eval: impl Fn(&PointArgs, &Matrix) -> Result<f64> + Sync,
) -> Result<SpaceTimeField> {
    let len = grid.space().len();
    let slices = (0..grid.slices())
        .into_par_iter()
        .map(|j| {
            (0..len)
                .map(|i| {
                    let (args, hess) = point_args(grid, u, m, j, i);
                    eval(&args, &hess)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    SpaceTimeField::from_slices(grid, slices)
}

/// `T(u^, m^)` with the truncated couplings.
pub fn apply_t(
    state: &IterateState,
    model: &CouplingModel,
    params: TruncationParams,
    opts: &PicardOptions,
) -> Result<(SpaceTimeField, SpaceTimeField)> {
    let grid = state.u_hat.grid();
    if state.m_hat.grid() != grid {
        return Err(Error::InvalidGrid("iterate components live on different grids".into()));
    }
    if !(state.u_hat.is_finite() && state.m_hat.is_finite()) {
        return Err(Error::NonFinite { slice: 0 });
    }
    Discretization::new(model, params, grid, opts)?.apply(&state.u_hat, &state.m_hat)
}

/// `3 ((L_h + 1) |m0|^(1) + C0)`.
pub fn m1_radius(model: &CouplingModel, params: &TruncationParams) -> f64 {
    3.0 * ((params.lipschitz_h + 1.0) * model.m0.norm_c1() + params.c0)
}

pub fn picard_solve(
    model: &CouplingModel,
    grid: TorusGrid,
    params: TruncationParams,
    opts: &PicardOptions,
) -> Result<PicardOutcome> {
    let disc = Discretization::new(model, params, grid, opts)?;
    let p = opts.exponent(grid.dim());
    let m1 = m1_radius(model, &params);
    let start = IterateState::initial(grid, &model.m0, p, m1);
    let (mut u, mut m) = (start.u_hat, start.m_hat);
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut status = Status::MaxIterations;
    let mut message = None;
    let mut rising = 0;
    let mut m1_violations = 0;

    for k in 1..=opts.max_iter {
        let (ub, mb) = match disc.apply(&u, &m) {
            Ok(v) => v,
            Err(e @ (Error::NonFinite { .. } | Error::SolverFailure { .. })) => {
                status = Status::Diverged;
                message = Some(format!("iteration {k}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let (un, mn) = if opts.relaxation == 1.0 {
            (ub, mb)
        } else {
            (u.blend(&ub, opts.relaxation), m.blend(&mb, opts.relaxation))
        };
        let diff = Norms::of(&un.sub(&u), &mn.sub(&m), p);
        let d = diff.total();
        let gamma = records.last().map(|r| d / r.d);
        let in_m1_ball = Norms::of(&un, &mn, p).total() <= m1;
        if !in_m1_ball {
            m1_violations += 1;
            warn!("iteration {k}: iterate left the M1 = {m1:.3e} ball");
        }
        debug!("iteration {k}: d = {d:.6e}, gamma = {gamma:?}");
        let rose = records.last().is_some_and(|r| d > r.d);
        records.push(IterationRecord { k, d, gamma, diff, min_m: mn.min(), max_du: un.max_gradient(), in_m1_ball });
        u = un;
        m = mn;
        if !d.is_finite() {
            status = Status::Diverged;
            message = Some(format!("iteration {k}: non-finite distance"));
            break;
        }
        if d <= opts.tol {
            status = Status::Converged;
            break;
        }
        rising = if rose { rising + 1 } else { 0 };
        if rising >= DIVERGENCE_WINDOW {
            status = Status::Diverged;
            message = Some(format!("distance increased for {DIVERGENCE_WINDOW} consecutive iterations"));
            break;
        }
    }

    let bounds = Bounds::of(&u, &m);
    let finite = u.is_finite() && m.is_finite();
    let residuals = if finite { residuals(model, &u, &m)? } else { Residuals { hjb: f64::NAN, fp: f64::NAN } };
    let report = IterationReport {
        records,
        status,
        converged: status == Status::Converged,
        residuals,
        detrunc_ok: finite && bounds.within(params.k),
        bounds,
        k: params.k,
        m1,
        m1_violations,
        message,
    };
    Ok(PicardOutcome { u, m, report })
}

/// Residuals of the original system at the slices `1..nt`, evaluated with the
/// untruncated couplings. A coupling that cannot be evaluated gives `NaN`.
pub fn residuals(model: &CouplingModel, u: &SpaceTimeField, m: &SpaceTimeField) -> Result<Residuals> {
    let grid = u.grid();
    let space = grid.space();
    let half = 0.5 / grid.dt();
    let per_slice: Vec<(f64, f64)> = (1..grid.nt())
        .into_par_iter()
        .map(|j| {
            let mut worst = (0.0f64, 0.0f64);
            for i in 0..space.len() {
                let (args, hu) = point_args(grid, u, m, j, i);
                let hm = space.hess_at(m.slice(j), i);
                let ut = (u.slice(j + 1)[i] - u.slice(j - 1)[i]) * half;
                let mt = (m.slice(j + 1)[i] - m.slice(j - 1)[i]) * half;
                let a = (model.hjb_diffusion)(args.x, args.t);
                let c = (model.fp_diffusion)(args.x, args.t);
                let f = (model.f)(&args).unwrap_or(f64::NAN);
                let g = (model.g)(&args, &hu).unwrap_or(f64::NAN);
                let rh = -ut - contract(&a, &hu) + f;
                let rf = mt - contract(&c, &hm) + g;
                worst.0 = if rh.is_nan() { f64::NAN } else { worst.0.max(rh.abs()) };
                worst.1 = if rf.is_nan() { f64::NAN } else { worst.1.max(rf.abs()) };
            }
            worst
        })
        .collect();
    let fold = |sel: fn(&(f64, f64)) -> f64| {
        per_slice.iter().map(sel).fold(0.0, |acc: f64, v| if acc.is_nan() || v.is_nan() { f64::NAN } else { acc.max(v) })
    };
    Ok(Residuals { hjb: fold(|r| r.0), fp: fold(|r| r.1) })
}

/// Result of re-solving the density equation in divergence form with the
/// drift of the computed value function.
#[derive(Clone, Debug)]
pub struct ConservativeCheck {
    pub m: SpaceTimeField,
    /// Largest `|mass_j - mass_{j-1}| / mass_{j-1}` over the steps.
    pub max_step_mass_drift: f64,
    pub min_m: f64,
    /// `max |m_conservative - m|`.
    pub max_deviation: f64,
}

/// Solves `m_t - d_ij(c_ij m) - div(m b) = 0` with `b` the model transport
/// evaluated on the clamped arguments of `(u, m)`.
pub fn fp_conservative_check(
    model: &CouplingModel,
    params: TruncationParams,
    u: &SpaceTimeField,
    m: &SpaceTimeField,
    opts: &PicardOptions,
) -> Result<ConservativeCheck> {
    let transport = model
        .transport
        .as_ref()
        .ok_or_else(|| Error::ModelContract(format!("model {} has no divergence-form drift", model.name)))?;
    let grid = u.grid();
    let truncated = wrap_model(model, params);
    let len = grid.space().len();
    let drift = (0..grid.slices())
        .into_par_iter()
        .map(|j| {
            (0..len)
                .map(|i| (transport.drift)(&truncated.clamp_args(&point_args(grid, u, m, j, i).0)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    let problem = ParabolicProblem::new(grid, sample_coefficients(grid, model.fp_diffusion.as_ref()), model.m0.clone())
        .with_drift(drift)
        .with_positivity(opts.positivity)
        .with_krylov_tol(opts.krylov_tol);
    let mc = solve_fp_conservative(&problem)?;
    let mut drift_max: f64 = 0.0;
    let mut prev = mc.field(0).integral();
    for j in 1..grid.slices() {
        let mass = mc.field(j).integral();
        drift_max = drift_max.max((mass - prev).abs() / prev.abs());
        prev = mass;
    }
    let max_deviation = mc.sub(m).max_abs();
    Ok(ConservativeCheck { min_m: mc.min(), m: mc, max_step_mass_drift: drift_max, max_deviation })
}

/// One row of a horizon sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub horizon: f64,
    pub nt: usize,
    pub converged: bool,
    pub status: Option<Status>,
    pub iterations: usize,
    pub final_gamma: Option<f64>,
    pub max_gamma: Option<f64>,
    pub min_m: f64,
    pub detrunc_ok: bool,
    pub runtime_secs: f64,
    pub error: Option<String>,
}

/// Runs [`picard_solve`] for every horizon with the time step of `base`
/// (`nt = round(T / dt)`). Rows run concurrently and come back in input order;
/// a failing row is recorded and the sweep continues.
pub fn horizon_sweep(
    model: &CouplingModel,
    base: TorusGrid,
    params: TruncationParams,
    horizons: &[f64],
    opts: &PicardOptions,
) -> Result<Vec<SweepRow>> {
    if horizons.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("sweep horizons must be strictly increasing".into()));
    }
    if horizons.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidParameter("sweep horizons must be positive".into()));
    }
    let dt = base.dt();
    Ok(horizons
        .par_iter()
        .map(|&horizon| {
            let start = Instant::now();
            let nt = ((horizon / dt).round() as usize).max(2);
            let outcome = TorusGrid::from_space(base.space(), nt, horizon)
                .and_then(|grid| picard_solve(model, grid, params, opts));
            let runtime_secs = start.elapsed().as_secs_f64();
            match outcome {
                Ok(o) => SweepRow {
                    horizon,
                    nt,
                    converged: o.report.converged,
                    status: Some(o.report.status),
                    iterations: o.report.iterations(),
                    final_gamma: o.report.gamma_estimates().last().copied(),
                    max_gamma: o.report.max_gamma(),
                    min_m: o.report.bounds.min_m,
                    detrunc_ok: o.report.detrunc_ok,
                    runtime_secs,
                    error: o.report.message.clone(),
                },
                Err(e) => SweepRow {
                    horizon,
                    nt,
                    converged: false,
                    status: None,
                    iterations: 0,
                    final_gamma: None,
                    max_gamma: None,
                    min_m: f64::NAN,
                    detrunc_ok: false,
                    runtime_secs,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}
