//! Implicit (backward Euler) solvers for linear parabolic problems on the torus.
//!
//! Forward problems have the nondivergence form
//!
//! ```text
//! v_t - c_ij v_{x_i x_j} - b . Dv + r v + g = 0,   v(., 0) = datum
//! ```
//!
//! and each step solves `(I + dt L) v_j = v_{j-1} - dt g_j` with the
//! coefficients of slice `j`. Backward problems are handled by reversing time,
//! and Fokker-Planck problems use the conservative form
//! `m_t - d_ij(c_ij m) - div(m b) + r m + g = 0` with upwinded fluxes.
//!
//! First-order terms are upwinded and the diagonal second-order stencil is the
//! 3-point one, so for `dim = 1` (and for `dim = 2` with the cross terms on the
//! explicit side) the step matrix is an M-matrix.

use crate::error::{Error, Result};
use crate::grid::{min_eigenvalue, Field, Matrix, Point, SpaceTimeField, TorusGrid, Vector};
use crate::linalg::{bicgstab, solve_cyclic_tridiagonal, CsrMatrix};

const DIRECT_RESIDUAL_TOL: f64 = 1e-10;
const KRYLOV_MAX_ITER: usize = 2000;

/// Second-order coefficients `c_ij(x, t)` sampled on the space-time grid.
#[derive(Clone, Debug, PartialEq)]
pub enum Coefficients {
    Constant(Matrix),
    /// One matrix per point, slice-major (`slices * n^dim` entries).
    Sampled(Vec<Matrix>),
}

impl Coefficients {
    pub fn sample(grid: TorusGrid, f: impl Fn(Point, f64) -> Matrix) -> Self {
        let space = grid.space();
        let mut out = Vec::with_capacity(grid.slices() * space.len());
        for j in 0..grid.slices() {
            let t = grid.time(j);
            out.extend((0..space.len()).map(|i| f(space.point(i), t)));
        }
        Coefficients::Sampled(out)
    }

    fn at(&self, slice: usize, idx: usize, len: usize) -> Matrix {
        match self {
            Coefficients::Constant(m) => *m,
            Coefficients::Sampled(v) => v[slice * len + idx],
        }
    }

    fn time_reversed(&self, len: usize) -> Self {
        match self {
            Coefficients::Constant(m) => Coefficients::Constant(*m),
            Coefficients::Sampled(v) => Coefficients::Sampled(reverse_slices(v, len)),
        }
    }
}

fn reverse_slices<T: Copy>(v: &[T], len: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(v.len());
    for chunk in v.chunks(len).rev() {
        out.extend_from_slice(chunk);
    }
    out
}

/// Linear parabolic problem with periodic data.
///
/// `datum` is the initial slice for forward solves and the final slice for
/// [`solve_backward`]. Coefficients and sources are always indexed in forward
/// time.
#[derive(Clone, Debug)]
pub struct ParabolicProblem {
    pub grid: TorusGrid,
    pub diffusion: Coefficients,
    pub source: Option<SpaceTimeField>,
    pub datum: Field,
    /// First-order coefficients `b_i`, slice-major like [`Coefficients::Sampled`].
    pub drift: Option<Vec<Vector>>,
    pub reaction: Option<SpaceTimeField>,
    /// Lower bound required of the smallest eigenvalue of `c_ij`.
    pub ellipticity: f64,
    /// Keep cross-derivative terms explicit (and enforce the matching time-step
    /// restriction) so that the implicit matrix stays an M-matrix.
    pub positivity: bool,
    /// Relative residual target of the Krylov solver (`dim = 2`).
    pub krylov_tol: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Form {
    NonDivergence,
    Conservative,
}

impl ParabolicProblem {
    pub fn new(grid: TorusGrid, diffusion: Coefficients, datum: Field) -> Self {
        Self {
            grid,
            diffusion,
            source: None,
            datum,
            drift: None,
            reaction: None,
            ellipticity: 1e-12,
            positivity: false,
            krylov_tol: 1e-10,
        }
    }

    pub fn with_source(mut self, source: SpaceTimeField) -> Self {
        self.source = Some(source);
        self
    }

    pub fn with_drift(mut self, drift: Vec<Vector>) -> Self {
        self.drift = Some(drift);
        self
    }

    pub fn with_reaction(mut self, reaction: SpaceTimeField) -> Self {
        self.reaction = Some(reaction);
        self
    }

    pub fn with_ellipticity(mut self, eps: f64) -> Self {
        self.ellipticity = eps;
        self
    }

    pub fn with_positivity(mut self, on: bool) -> Self {
        self.positivity = on;
        self
    }

    pub fn with_krylov_tol(mut self, tol: f64) -> Self {
        self.krylov_tol = tol;
        self
    }

    /// The same problem under `t -> T - t`: every time-indexed input has its
    /// slice order reversed. The datum is kept.
    pub fn time_reversed(&self) -> Self {
        let len = self.grid.space().len();
        Self {
            grid: self.grid,
            diffusion: self.diffusion.time_reversed(len),
            source: self.source.as_ref().map(|s| s.time_reversed()),
            datum: self.datum.clone(),
            drift: self.drift.as_ref().map(|d| reverse_slices(d, len)),
            reaction: self.reaction.as_ref().map(|r| r.time_reversed()),
            ellipticity: self.ellipticity,
            positivity: self.positivity,
            krylov_tol: self.krylov_tol,
        }
    }

    fn validate(&self) -> Result<()> {
        let space = self.grid.space();
        let expected = self.grid.slices() * space.len();
        if self.datum.space() != space {
            return Err(Error::InvalidGrid("datum lives on a different spatial grid".into()));
        }
        if !self.datum.is_finite() {
            return Err(Error::NonFinite { slice: 0 });
        }
        if let Coefficients::Sampled(v) = &self.diffusion {
            if v.len() != expected {
                return Err(Error::InvalidGrid("diffusion samples do not match the grid".into()));
            }
        }
        for f in self.source.iter().chain(self.reaction.iter()) {
            if f.grid() != self.grid {
                return Err(Error::InvalidGrid("time-dependent input on a different grid".into()));
            }
        }
        if let Some(d) = &self.drift {
            if d.len() != expected {
                return Err(Error::InvalidGrid("drift samples do not match the grid".into()));
            }
            if d.iter().any(|b| !(b[0].is_finite() && b[1].is_finite())) {
                return Err(Error::InvalidParameter("drift is not finite".into()));
            }
        }
        if !(self.ellipticity > 0.0) {
            return Err(Error::InvalidParameter("ellipticity bound must be positive".into()));
        }
        Ok(())
    }
}

/// One backward Euler step of the nondivergence problem from `previous` (slice `j - 1`) to slice `j`.
pub fn step_implicit(problem: &ParabolicProblem, previous: &Field, j: usize) -> Result<Field> {
    if j == 0 || j > problem.grid.nt() {
        return Err(Error::InvalidParameter(format!("slice {j} is not a step target")));
    }
    let values = step(problem, Form::NonDivergence, previous.values(), j)?;
    Field::from_values(problem.grid.space(), values)
}

/// Marches the nondivergence problem from the datum at `t = 0` to `t = T`.
pub fn solve_forward(problem: &ParabolicProblem) -> Result<SpaceTimeField> {
    march(problem, Form::NonDivergence)
}

/// Solves `-v_t - c_ij v_{x_i x_j} - b . Dv + r v + g = 0` with `v(., T) = datum`.
pub fn solve_backward(problem: &ParabolicProblem) -> Result<SpaceTimeField> {
    Ok(march(&problem.time_reversed(), Form::NonDivergence)?.time_reversed())
}

/// Conservative Fokker-Planck march. Total mass `h^dim sum m` is preserved up
/// to the linear solver residual; for `dim = 2` the Krylov target is tightened
/// to `1e-13` so that the preservation holds to `1e-12` relative.
pub fn solve_fp_conservative(problem: &ParabolicProblem) -> Result<SpaceTimeField> {
    march(problem, Form::Conservative)
}

fn march(problem: &ParabolicProblem, form: Form) -> Result<SpaceTimeField> {
    problem.validate()?;
    let grid = problem.grid;
    let mut out = SpaceTimeField::zeros(grid);
    out.set_slice(0, problem.datum.values());
    let mut prev = problem.datum.values().to_vec();
    for j in 1..=grid.nt() {
        let next = step(problem, form, &prev, j)?;
        out.set_slice(j, &next);
        prev = next;
    }
    Ok(out)
}

fn step(problem: &ParabolicProblem, form: Form, prev: &[f64], j: usize) -> Result<Vec<f64>> {
    let grid = problem.grid;
    let space = grid.space();
    let len = space.len();
    let dim = space.dim();
    let dt = grid.dt();
    let n = space.n() as f64;
    let inv_h = n;
    let inv_h2 = n * n;

    let coef = |i: usize| problem.diffusion.at(j, i, len);
    let mut max_offdiag: f64 = 0.0;
    for i in 0..len {
        let c = coef(i);
        if !(c[0][0].is_finite() && c[1][1].is_finite() && c[0][1].is_finite()) {
            return Err(Error::NonFinite { slice: j });
        }
        if min_eigenvalue(&c, dim) < problem.ellipticity {
            return Err(Error::AssumptionViolated(format!(
                "diffusion not uniformly elliptic at slice {j}, point {i}"
            )));
        }
        if dim == 2 {
            max_offdiag = max_offdiag.max(c[0][1].abs());
        }
    }
    let explicit_cross = dim == 2 && problem.positivity && max_offdiag > 0.0;
    if explicit_cross {
        let limit = 1.0 / (8.0 * max_offdiag * inv_h2);
        if dt > limit {
            return Err(Error::TimeStepRestriction { dt, limit });
        }
    }

    // transport velocity w = -b
    let velocity = |i: usize, axis: usize| -> f64 {
        problem.drift.as_ref().map_or(0.0, |d| -d[j * len + i][axis])
    };

    let mut rhs: Vec<f64> = prev.to_vec();
    if let Some(g) = &problem.source {
        for (r, gi) in rhs.iter_mut().zip(g.slice(j)) {
            *r -= dt * gi;
        }
    }

    let mut a = CsrMatrix::with_capacity(len, len * if dim == 1 { 3 } else { 9 });
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(9);
    for i in 0..len {
        row.clear();
        let mut diag = 1.0;
        if let Some(r) = &problem.reaction {
            diag += dt * r.slice(j)[i];
        }
        for axis in 0..dim {
            let ip = space.shift(i, axis, 1);
            let im = space.shift(i, axis, -1);
            match form {
                Form::NonDivergence => {
                    let c = coef(i)[axis][axis];
                    diag += dt * 2.0 * c * inv_h2;
                    row.push((ip, -dt * c * inv_h2));
                    row.push((im, -dt * c * inv_h2));
                    let w = velocity(i, axis);
                    diag += dt * w.abs() * inv_h;
                    row.push((im, -dt * w.max(0.0) * inv_h));
                    row.push((ip, dt * w.min(0.0) * inv_h));
                }
                Form::Conservative => {
                    diag += dt * 2.0 * coef(i)[axis][axis] * inv_h2;
                    row.push((ip, -dt * coef(ip)[axis][axis] * inv_h2));
                    row.push((im, -dt * coef(im)[axis][axis] * inv_h2));
                    let w_right = 0.5 * (velocity(i, axis) + velocity(ip, axis));
                    let w_left = 0.5 * (velocity(im, axis) + velocity(i, axis));
                    diag += dt * (w_right.max(0.0) - w_left.min(0.0)) * inv_h;
                    row.push((ip, dt * w_right.min(0.0) * inv_h));
                    row.push((im, -dt * w_left.max(0.0) * inv_h));
                }
            }
        }
        if dim == 2 {
            let xp = space.shift(i, 0, 1);
            let xm = space.shift(i, 0, -1);
            let corners = [
                (space.shift(xp, 1, 1), 1.0),
                (space.shift(xp, 1, -1), -1.0),
                (space.shift(xm, 1, 1), -1.0),
                (space.shift(xm, 1, -1), 1.0),
            ];
            // cross term 2 c_01 D_01 with D_01 the 4-point stencil / (4 h^2)
            for (k, sign) in corners {
                let c01 = match form {
                    Form::NonDivergence => coef(i)[0][1],
                    Form::Conservative => coef(k)[0][1],
                };
                let w = 2.0 * c01 * sign * 0.25 * inv_h2;
                if explicit_cross {
                    rhs[i] += dt * w * prev[k];
                } else if w != 0.0 {
                    row.push((k, -dt * w));
                }
            }
        }
        row.push((i, diag));
        a.push_row(&row);
    }

    let x = if dim == 1 {
        let mut lower = vec![0.0; len];
        let mut diag = vec![0.0; len];
        let mut upper = vec![0.0; len];
        for i in 0..len {
            lower[i] = a.entry(i, space.shift(i, 0, -1));
            diag[i] = a.entry(i, i);
            upper[i] = a.entry(i, space.shift(i, 0, 1));
        }
        let x = solve_cyclic_tridiagonal(&lower, &diag, &upper, &rhs)
            .ok_or(Error::SolverFailure { slice: j, residual: f64::INFINITY })?;
        let res = a.relative_residual(&x, &rhs);
        if !res.is_finite() || res > DIRECT_RESIDUAL_TOL {
            return Err(if res.is_finite() {
                Error::SolverFailure { slice: j, residual: res }
            } else {
                Error::NonFinite { slice: j }
            });
        }
        x
    } else {
        let tol = match form {
            Form::NonDivergence => problem.krylov_tol,
            Form::Conservative => problem.krylov_tol.min(1e-13),
        };
        let out = bicgstab(&a, &rhs, prev, tol, KRYLOV_MAX_ITER);
        if !out.relative_residual.is_finite() {
            return Err(Error::NonFinite { slice: j });
        }
        if !out.converged {
            return Err(Error::SolverFailure { slice: j, residual: out.relative_residual });
        }
        out.x
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { slice: j });
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{SpaceGrid, IDENTITY};
    use std::f64::consts::PI;

    fn heat_problem(n: usize, nt: usize, t: f64, datum: impl Fn(Point) -> f64) -> ParabolicProblem {
        let grid = TorusGrid::new(1, n, nt, t).unwrap();
        let d = Field::from_fn(grid.space(), datum);
        ParabolicProblem::new(grid, Coefficients::Constant(IDENTITY), d)
    }

    #[test]
    fn constants_are_invariant() {
        let p = heat_problem(16, 10, 0.1, |_| 1.0);
        let v = solve_forward(&p).unwrap();
        assert!(v.values().iter().all(|x| (x - 1.0).abs() < 1e-14));
    }

    #[test]
    fn pure_source_integrates_linearly() {
        let grid = TorusGrid::new(1, 16, 8, 0.4).unwrap();
        let c = Coefficients::sample(grid, |x, t| [[1.0 + 0.5 * (2.0 * PI * x[0]).sin() + t, 0.0], [0.0, 1.0]]);
        let p = ParabolicProblem::new(grid, c, Field::zeros(grid.space()))
            .with_source(SpaceTimeField::from_fn(grid, |_, _| 1.0));
        let v = solve_forward(&p).unwrap();
        for j in 0..=grid.nt() {
            for x in v.slice(j) {
                assert!((x + grid.time(j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heat_kernel_decay() {
        let t = 0.1;
        let p = heat_problem(64, 400, t, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).cos());
        let v = solve_forward(&p).unwrap();
        let s = p.grid.space();
        let err = (0..s.len())
            .map(|i| {
                let x = s.point(i)[0];
                (v.slice(400)[i] - (1.0 + 0.5 * (-4.0 * PI * PI * t).exp() * (2.0 * PI * x).cos())).abs()
            })
            .fold(0.0, f64::max);
        let h = s.spacing();
        assert!(err < 1.0 * (h * h + p.grid.dt()), "{err}");
    }

    #[test]
    fn backward_heat_with_constant_final_datum() {
        let p = heat_problem(16, 10, 0.2, |_| 2.5);
        let v = solve_backward(&p).unwrap();
        assert!(v.values().iter().all(|x| (x - 2.5).abs() < 1e-14));
    }

    #[test]
    fn reversal_involution_is_exact() {
        let grid = TorusGrid::new(1, 16, 12, 0.3).unwrap();
        let c = Coefficients::sample(grid, |x, t| [[1.0 + 0.3 * (2.0 * PI * x[0]).cos() * t, 0.0], [0.0, 1.0]]);
        let datum = Field::from_fn(grid.space(), |x| (2.0 * PI * x[0]).sin());
        let fwd = ParabolicProblem::new(grid, c, datum)
            .with_source(SpaceTimeField::from_fn(grid, |x, t| x[0] * t));
        let forward = solve_forward(&fwd).unwrap();
        let backward = solve_backward(&fwd.time_reversed()).unwrap();
        assert_eq!(backward, forward.time_reversed());
    }

    #[test]
    fn maximum_principle_holds() {
        let grid = TorusGrid::new(1, 32, 20, 0.05).unwrap();
        let c = Coefficients::sample(grid, |x, _| [[0.2 + (2.0 * PI * x[0]).sin().powi(2), 0.0], [0.0, 1.0]]);
        let datum = Field::from_fn(grid.space(), |x| if x[0] < 0.3 { 2.0 } else { -1.0 });
        let v = solve_forward(&ParabolicProblem::new(grid, c, datum)).unwrap();
        assert!(v.max() <= 2.0 + 1e-12 && v.min() >= -1.0 - 1e-12);
    }

    #[test]
    fn ellipticity_violation_is_reported() {
        let grid = TorusGrid::new(1, 16, 4, 0.1).unwrap();
        let p = ParabolicProblem::new(grid, Coefficients::Constant([[0.0, 0.0], [0.0, 0.0]]), Field::zeros(grid.space()));
        assert!(matches!(solve_forward(&p), Err(Error::AssumptionViolated(_))));
    }

    #[test]
    fn conservative_mass_and_positivity() {
        let grid = TorusGrid::new(1, 32, 40, 0.1).unwrap();
        let space = grid.space();
        let drift: Vec<Vector> = (0..grid.slices())
            .flat_map(|j| {
                let t = grid.time(j);
                (0..space.len()).map(move |i| [3.0 * (2.0 * PI * i as f64 / 32.0).sin() + t, 0.0])
            })
            .collect();
        let datum = Field::from_fn(space, |x| if x[0] < 0.5 { 1.5 } else { 0.0 });
        let p = ParabolicProblem::new(grid, Coefficients::Constant(IDENTITY), datum.clone()).with_drift(drift);
        let m = solve_fp_conservative(&p).unwrap();
        let mass0 = datum.integral();
        for j in 0..=grid.nt() {
            let mass = m.field(j).integral();
            assert!(((mass - mass0) / mass0).abs() < 1e-12);
        }
        assert!(m.min() >= 0.0);
    }

    #[test]
    fn two_dimensional_heat_with_cross_diffusion() {
        // c = [[1, 0.3], [0.3, 1]] acting on cos(2 pi (x + y)) decays at rate 4 pi^2 (2 + 0.6)
        let t = 0.01;
        let mut errs = Vec::new();
        for (n, nt) in [(16, 20), (32, 80)] {
            let grid = TorusGrid::new(2, n, nt, t).unwrap();
            let datum = Field::from_fn(grid.space(), |x| (2.0 * PI * (x[0] + x[1])).cos());
            let c = Coefficients::Constant([[1.0, 0.3], [0.3, 1.0]]);
            let v = solve_forward(&ParabolicProblem::new(grid, c, datum)).unwrap();
            let decay = (-4.0 * PI * PI * 2.6 * t).exp();
            let s = grid.space();
            let err = (0..s.len())
                .map(|i| {
                    let x = s.point(i);
                    (v.slice(nt)[i] - decay * (2.0 * PI * (x[0] + x[1])).cos()).abs()
                })
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
    }

    #[test]
    fn positivity_flag_enforces_time_step_limit() {
        let grid = TorusGrid::new(2, 16, 2, 0.1).unwrap();
        let c = Coefficients::Constant([[1.0, 0.5], [0.5, 1.0]]);
        let p = ParabolicProblem::new(grid, c, Field::constant(SpaceGrid::new(2, 16).unwrap(), 1.0))
            .with_positivity(true);
        assert!(matches!(solve_forward(&p), Err(Error::TimeStepRestriction { .. })));
    }
}
