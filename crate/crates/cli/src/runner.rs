//! Executes a configuration and writes `series.csv`, the field slices and
//! `manifest.toml`, or `sweep.csv` for a list of horizons.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::info;
use serde::Serialize;
use sha2::{Digest, Sha256};

use fbmfg_core::fixed_point::{m1_radius, IterationReport};
use fbmfg_core::models::{
    congestion_model, custom_mfg_model, decoupled_heat_model, linear_counterexample_model, periodic_gaussian_kernel,
    quadratic_mfg_model, ConvolutionCost, ConvolutionMethod, CounterexampleCoupling, FinalCost, PolynomialHamiltonian,
    Profile,
};
use fbmfg_core::spectral::{critical_times, solve_spectral, trig_polynomial, ModeCoefficient, DEFAULT_TOL_DENOM};
use fbmfg_core::{
    horizon_sweep, picard_solve, select_k, CouplingModel, PicardOptions, SpaceGrid, SpaceTimeField, SweepRow,
    TorusGrid, TruncationParams,
};

use crate::config::{FinalCoupling, ModelKind, RunConfig};
use crate::error::CliError;

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_DETRUNC: i32 = 3;

/// Everything a run needs, resolved from a configuration.
pub struct Setup {
    pub model: CouplingModel,
    pub grid: TorusGrid,
    pub params: TruncationParams,
    pub opts: PicardOptions,
    pub modes: Vec<ModeCoefficient>,
}

fn smoothing_cost(config: &RunConfig, space: SpaceGrid) -> Result<Arc<dyn FinalCost>, CliError> {
    let sigma = config.params.sigma.unwrap_or(4.0 / config.grid.n as f64);
    let kernel = periodic_gaussian_kernel(space, sigma)?;
    Ok(Arc::new(ConvolutionCost::new(Profile::identity(), kernel, ConvolutionMethod::Fft)?))
}

pub fn setup(config: &RunConfig) -> Result<Setup, CliError> {
    config.validate()?;
    let g = &config.grid;
    let grid = TorusGrid::new(g.dim, g.n, g.nt, g.horizon)?;
    let space = grid.space();
    let modes = config.initial_modes()?;
    let m0 = trig_polynomial(space, &modes)?;
    let delta = config.truncation.delta;
    let p = &config.params;
    let model = match config.model {
        ModelKind::DecoupledHeat => decoupled_heat_model(m0, delta)?,
        ModelKind::QuadraticMfg => quadratic_mfg_model(m0, smoothing_cost(config, space)?, delta)?,
        ModelKind::Congestion => congestion_model(config.congestion_alpha(), m0, smoothing_cost(config, space)?, delta)?,
        ModelKind::LinearCounterexample => {
            let coupling = match config.final_coupling() {
                FinalCoupling::Projected => {
                    CounterexampleCoupling::Projected(modes.iter().map(|c| c.mode.field(space)).collect())
                }
                FinalCoupling::Pointwise => CounterexampleCoupling::Pointwise,
            };
            linear_counterexample_model(config.counterexample_alpha(), m0, coupling, delta)?
        }
        ModelKind::Custom => {
            let d = PolynomialHamiltonian::default();
            let velocity = match &p.velocity {
                Some(v) => [v[0], v.get(1).copied().unwrap_or(0.0)],
                None => d.velocity,
            };
            let ham = PolynomialHamiltonian {
                kappa: p.kappa.unwrap_or(d.kappa),
                velocity,
                coupling: p.coupling.unwrap_or(d.coupling),
                potential: p.potential.unwrap_or(d.potential),
                nu: p.nu.unwrap_or(d.nu),
            };
            custom_mfg_model(ham, m0, smoothing_cost(config, space)?, delta)?
        }
    };
    let (lh, c0) = (model.lipschitz_h(), model.c0()?);
    let params = match config.truncation.k {
        Some(k) => TruncationParams::new(k, &model.m0, lh, c0, delta)?,
        None => select_k(&model.m0, lh, c0, delta)?,
    };
    let it = &config.iteration;
    let opts = PicardOptions {
        p: it.p,
        tol: it.tol,
        max_iter: it.max_iter,
        relaxation: it.relaxation,
        positivity: it.positivity,
        ..Default::default()
    };
    Ok(Setup { model, grid, params, opts, modes })
}

pub fn exit_code(converged: bool, detrunc_ok: bool) -> i32 {
    match (converged, detrunc_ok) {
        (true, true) => EXIT_CONVERGED,
        (true, false) => EXIT_DETRUNC,
        (false, _) => EXIT_DIVERGED,
    }
}

/// Where a counterexample horizon sits relative to the nearest critical time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriticalNote {
    pub alpha: f64,
    pub horizon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critical_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_distance: Option<f64>,
    pub spectral_solvable: bool,
    pub note: String,
}

pub fn critical_note(alpha: f64, modes: &[ModeCoefficient], horizon: f64) -> CriticalNote {
    let nearest = modes
        .iter()
        .filter(|c| c.value != 0.0 && c.mode.lambda() > 0.0)
        .filter_map(|c| critical_times(alpha, c.mode.lambda()).map(|t| (t, c.mode.to_string())))
        .min_by(|a, b| (a.0 - horizon).abs().total_cmp(&(b.0 - horizon).abs()));
    let spectral_solvable =
        solve_spectral(alpha, modes, horizon, DEFAULT_TOL_DENOM).map(|s| s.is_solvable()).unwrap_or(false);
    let (critical_time, mode, relative_distance, note) = match nearest {
        Some((tk, mode)) => {
            let rel = (horizon - tk) / tk;
            let note = format!(
                "T = {horizon} is {:.4}% {} the critical time {tk:.10} of mode {mode}; spectral system {}",
                100.0 * rel.abs(),
                if rel < 0.0 { "below" } else { "above" },
                if spectral_solvable { "solvable" } else { "not solvable" },
            );
            (Some(tk), Some(mode), Some(rel), note)
        }
        None => (None, None, None, format!("no critical time for alpha = {alpha} and the given modes")),
    };
    CriticalNote { alpha, horizon, critical_time, mode, relative_distance, spectral_solvable, note }
}

#[derive(Clone, Debug, Serialize)]
pub struct Resolved {
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "M1")]
    pub m1: f64,
    #[serde(rename = "L_h")]
    pub lipschitz_h: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
    pub delta: f64,
    pub p: f64,
    pub h: f64,
    pub dt: f64,
    pub model: String,
    pub final_cost: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub status: String,
    pub converged: bool,
    pub detrunc_ok: bool,
    pub exit_code: i32,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_gamma: Option<f64>,
    pub residual_hjb: f64,
    pub residual_fp: f64,
    pub min_m: f64,
    pub max_m: f64,
    pub max_u: f64,
    pub max_du: f64,
    pub max_dm: f64,
    pub m1_violations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationRow {
    pub k: usize,
    pub d: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub norm_u_w21p: f64,
    pub norm_u_c10: f64,
    pub norm_m_c10: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub config: RunConfig,
    pub resolved: Resolved,
    pub result: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<CriticalNote>,
    pub iterations: Vec<IterationRow>,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest is always representable")
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn series_csv(report: &IterationReport) -> String {
    let mut s = String::from("iter,d,gamma,norm_u_w21p,norm_u_c10,norm_m_c10,min_m,max_Du\n");
    for r in &report.records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.k,
            num(r.d),
            opt_num(r.gamma),
            num(r.diff.u_w21p),
            num(r.diff.u_c10),
            num(r.diff.m_c10),
            num(r.min_m),
            num(r.max_du)
        );
    }
    s
}

pub fn field_csv(u: &SpaceTimeField, m: &SpaceTimeField, slice: usize) -> String {
    let space = u.grid().space();
    let mut s = String::from(if space.dim() == 1 { "x1,u,m\n" } else { "x1,x2,u,m\n" });
    let (us, ms) = (u.slice(slice), m.slice(slice));
    for i in 0..space.len() {
        let x = space.point(i);
        for c in &x[..space.dim()] {
            s.push_str(&num(*c));
            s.push(',');
        }
        let _ = writeln!(s, "{},{}", num(us[i]), num(ms[i]));
    }
    s
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_artifact(dir: &Path, name: &str, contents: &str, list: &mut Vec<Artifact>) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    list.push(Artifact { path: name.to_string(), sha256: sha256_hex(contents.as_bytes()) });
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Result of [`run`].
pub struct RunSummary {
    pub manifest: RunManifest,
    pub exit_code: i32,
    pub out_dir: PathBuf,
}

/// Solves the configured problem and writes the artifacts into `out`
/// (`config.output.dir` when `None`).
pub fn run(config: &RunConfig, out: Option<&Path>) -> Result<RunSummary, CliError> {
    let mut config = config.clone();
    if let Some(dir) = out {
        config.output.dir = dir.to_path_buf();
    }
    let setup = setup(&config)?;
    let dir = config.output.dir.clone();
    create_dir(&dir)?;
    info!("running {} on {}", setup.model.name, dir.display());

    let start = Instant::now();
    let outcome = picard_solve(&setup.model, setup.grid, setup.params, &setup.opts)?;
    let wall_clock_secs = start.elapsed().as_secs_f64();
    let report = &outcome.report;

    let mut artifacts = Vec::new();
    write_artifact(&dir, "series.csv", &series_csv(report), &mut artifacts)?;
    if config.output.fields {
        let nt = setup.grid.nt();
        for (name, j) in [("fields_t0.csv", 0), ("fields_thalf.csv", nt / 2), ("fields_tT.csv", nt)] {
            write_artifact(&dir, name, &field_csv(&outcome.u, &outcome.m, j), &mut artifacts)?;
        }
    }

    let code = exit_code(report.converged, report.detrunc_ok);
    let counterexample = (config.model == ModelKind::LinearCounterexample)
        .then(|| critical_note(config.counterexample_alpha(), &setup.modes, setup.grid.horizon()));
    let b = &report.bounds;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        resolved: Resolved {
            k: setup.params.k,
            m1: m1_radius(&setup.model, &setup.params),
            lipschitz_h: setup.params.lipschitz_h,
            c0: setup.params.c0,
            delta: setup.params.delta,
            p: setup.opts.exponent(setup.grid.dim()),
            h: setup.grid.spacing(),
            dt: setup.grid.dt(),
            model: setup.model.name.clone(),
            final_cost: setup.model.final_cost.describe(),
        },
        result: Outcome {
            status: report.status.as_str().to_string(),
            converged: report.converged,
            detrunc_ok: report.detrunc_ok,
            exit_code: code,
            iterations: report.iterations(),
            final_d: report.final_d(),
            max_gamma: report.max_gamma(),
            residual_hjb: report.residuals.hjb,
            residual_fp: report.residuals.fp,
            min_m: b.min_m,
            max_m: b.max_m,
            max_u: b.max_u,
            max_du: b.max_du,
            max_dm: b.max_dm,
            m1_violations: report.m1_violations,
            message: report.message.clone(),
            wall_clock_secs,
        },
        counterexample,
        iterations: report
            .records
            .iter()
            .map(|r| IterationRow {
                k: r.k,
                d: r.d,
                gamma: r.gamma,
                norm_u_w21p: r.diff.u_w21p,
                norm_u_c10: r.diff.u_c10,
                norm_m_c10: r.diff.m_c10,
            })
            .collect(),
        artifacts,
        config,
    };
    let path = dir.join("manifest.toml");
    fs::write(&path, manifest.to_toml()).map_err(|e| CliError::io(&path, e))?;
    info!("status {} after {} iterations", report.status.as_str(), report.iterations());
    Ok(RunSummary { manifest, exit_code: code, out_dir: dir })
}

/// Exit code a single run at this row's horizon would have produced.
pub fn row_exit_code(row: &SweepRow) -> i32 {
    if row.status.is_none() {
        EXIT_ERROR
    } else {
        exit_code(row.converged, row.detrunc_ok)
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("T,nt,converged,status,exit_code,iterations,max_gamma,min_m,detrunc_ok,runtime_secs\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{:.6}",
            num(r.horizon),
            r.nt,
            r.converged,
            r.status.map(|st| st.as_str()).unwrap_or("error"),
            row_exit_code(r),
            r.iterations,
            opt_num(r.max_gamma),
            num(r.min_m),
            r.detrunc_ok,
            r.runtime_secs
        );
    }
    s
}

#[derive(Clone, Debug, Serialize)]
struct SweepManifestRow {
    #[serde(rename = "T")]
    horizon: f64,
    nt: usize,
    status: String,
    exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    counterexample: Option<CriticalNote>,
}

#[derive(Clone, Debug, Serialize)]
struct SweepManifest {
    version: String,
    config: RunConfig,
    horizons: Vec<f64>,
    rows: Vec<SweepManifestRow>,
    artifacts: Vec<Artifact>,
}

/// Parses a comma-separated horizon list into increasing order.
pub fn parse_horizons(list: &str) -> Result<Vec<f64>, CliError> {
    let mut ts = list
        .split(',')
        .map(|s| {
            let t: f64 = s.trim().parse().map_err(|_| CliError::Config(format!("bad horizon {s:?}")))?;
            if t > 0.0 && t.is_finite() {
                Ok(t)
            } else {
                Err(CliError::Config(format!("horizon must be positive, got {t}")))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    ts.sort_by(f64::total_cmp);
    if ts.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Config("duplicate horizon in list".into()));
    }
    Ok(ts)
}

/// Runs the configured model at every horizon with the time step
/// `grid.T / grid.nt` of the configuration and writes `sweep.csv`.
pub fn sweep(config: &RunConfig, horizons: &[f64], out: Option<&Path>) -> Result<Vec<SweepRow>, CliError> {
    let mut config = config.clone();
    if let Some(dir) = out {
        config.output.dir = dir.to_path_buf();
    }
    let setup = setup(&config)?;
    let dir = config.output.dir.clone();
    create_dir(&dir)?;
    let rows = horizon_sweep(&setup.model, setup.grid, setup.params, horizons, &setup.opts)?;
    let mut artifacts = Vec::new();
    write_artifact(&dir, "sweep.csv", &sweep_csv(&rows), &mut artifacts)?;
    let manifest = SweepManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        horizons: horizons.to_vec(),
        rows: rows
            .iter()
            .map(|r| SweepManifestRow {
                horizon: r.horizon,
                nt: r.nt,
                status: r.status.map(|s| s.as_str()).unwrap_or("error").to_string(),
                exit_code: row_exit_code(r),
                error: r.error.clone(),
                counterexample: (config.model == ModelKind::LinearCounterexample)
                    .then(|| critical_note(config.counterexample_alpha(), &setup.modes, r.horizon)),
            })
            .collect(),
        artifacts,
        config,
    };
    let path = dir.join("manifest.toml");
    let text = toml::to_string(&manifest).expect("manifest is always representable");
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fbmfg_core::spectral::Mode;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(true, true), 0);
        assert_eq!(exit_code(true, false), 3);
        assert_eq!(exit_code(false, true), 2);
    }

    #[test]
    fn horizons_are_sorted_and_checked() {
        assert_eq!(parse_horizons("0.2, 0.05,0.1").unwrap(), vec![0.05, 0.1, 0.2]);
        assert!(parse_horizons("0.1,0.1").is_err());
        assert!(parse_horizons("0.1,-1").is_err());
        assert!(parse_horizons("0.1,x").is_err());
    }

    #[test]
    fn critical_note_points_at_first_mode() {
        let modes = vec![ModeCoefficient::new(Mode::constant(1), 1.0), ModeCoefficient::new(Mode::cos(1), 0.3)];
        let t1 = (3.0f64).ln() / (8.0 * std::f64::consts::PI.powi(2));
        let n = critical_note(-3.0, &modes, 0.0139);
        assert_eq!(n.mode.as_deref(), Some("c1"));
        assert!((n.critical_time.unwrap() - t1).abs() < 1e-15);
        assert!(n.relative_distance.unwrap() < 0.0 && n.spectral_solvable);
        assert!(!critical_note(-3.0, &modes, t1).spectral_solvable);
        assert!(critical_note(-1.0, &modes, 0.01).critical_time.is_none());
    }
}
