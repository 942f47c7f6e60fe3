//! Sampled audit of the declared growth and Lipschitz constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{random_args, random_symmetric, CouplingModel, PointArgs};
use crate::grid::{euclidean, frobenius, Matrix};

/// Worst observed ratios of actual to declared bounds; a ratio above 1 is a violation.
#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionReport {
    pub samples: usize,
    /// Radius of the probed argument box (`2K`).
    pub radius: f64,
    pub declared_lf: f64,
    pub declared_lg: f64,
    pub f_bound_ratio: f64,
    pub f_lipschitz_ratio: f64,
    pub g_bound_ratio: f64,
    pub g_lipschitz_ratio: f64,
    pub final_cost_regularizing: bool,
    pub violations: Vec<String>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn distance(a: &PointArgs, b: &PointArgs) -> f64 {
    (a.u - b.u).abs()
        + (a.m - b.m).abs()
        + euclidean(&[a.du[0] - b.du[0], a.du[1] - b.du[1]])
        + euclidean(&[a.dm[0] - b.dm[0], a.dm[1] - b.dm[1]])
}

fn ratio(actual: f64, bound: f64) -> f64 {
    if actual == 0.0 {
        0.0
    } else if bound > 0.0 {
        actual / bound
    } else {
        f64::INFINITY
    }
}

/// Probes `samples` random pairs in the box `|u|, |Du|, |Dm| <= 2K`,
/// `1/(2K) <= m <= 2K` against `L_F(2K)` and `L_G(2K)`. Half of the pairs are
/// close neighbours so that local slopes are exercised.
pub fn validate_assumptions(model: &CouplingModel, k: f64, samples: usize) -> AssumptionReport {
    let samples = samples.max(100);
    let radius = 2.0 * k;
    let dim = model.m0.space().dim();
    let lf = (model.constants.lipschitz_f)(radius);
    let lg = (model.constants.lipschitz_g)(radius);
    let mut rng = ChaCha8Rng::seed_from_u64(0xa55e);
    let mut report = AssumptionReport {
        samples,
        radius,
        declared_lf: lf,
        declared_lg: lg,
        f_bound_ratio: 0.0,
        f_lipschitz_ratio: 0.0,
        g_bound_ratio: 0.0,
        g_lipschitz_ratio: 0.0,
        final_cost_regularizing: model.final_cost.is_regularizing(),
        violations: Vec::new(),
    };
    for s in 0..samples {
        let a1 = random_args(&mut rng, dim, radius);
        let a2 = if s % 2 == 0 {
            random_args(&mut rng, dim, radius)
        } else {
            neighbour(&mut rng, &a1, dim, radius)
        };
        let h1 = random_symmetric(&mut rng, dim, radius);
        let h2 = if s % 2 == 0 { random_symmetric(&mut rng, dim, radius) } else { perturb(&mut rng, &h1, dim) };
        let evals = (|| -> crate::error::Result<_> {
            Ok(((model.f)(&a1)?, (model.f)(&a2)?, (model.g)(&a1, &h1)?, (model.g)(&a2, &h2)?))
        })();
        let (f1, f2, g1, g2) = match evals {
            Ok(v) => v,
            Err(e) => {
                report.violations.push(format!("evaluation failed: {e}"));
                continue;
            }
        };
        let d = distance(&a1, &a2);
        let nh1 = frobenius(&h1);
        let dh = frobenius(&[[h1[0][0] - h2[0][0], h1[0][1] - h2[0][1]], [h1[1][0] - h2[1][0], h1[1][1] - h2[1][1]]]);
        report.f_bound_ratio = report.f_bound_ratio.max(ratio(f1.abs(), lf));
        report.f_lipschitz_ratio = report.f_lipschitz_ratio.max(ratio((f1 - f2).abs(), lf * d));
        report.g_bound_ratio = report.g_bound_ratio.max(ratio(g1.abs(), lg * (1.0 + nh1)));
        report.g_lipschitz_ratio =
            report.g_lipschitz_ratio.max(ratio((g1 - g2).abs(), lg * d * (1.0 + nh1) + lg * dh));
    }
    // allow for rounding in the ratios themselves
    let slack = 1.0 + 1e-9;
    for (name, r) in [
        ("|F| <= L_F", report.f_bound_ratio),
        ("F Lipschitz", report.f_lipschitz_ratio),
        ("|G| <= L_G (1 + |H|)", report.g_bound_ratio),
        ("G Lipschitz", report.g_lipschitz_ratio),
    ] {
        if !(r <= slack) {
            report.violations.push(format!("{name}: observed ratio {r:.3e}"));
        }
    }
    if !report.final_cost_regularizing {
        report.violations.push(format!("final cost {} is not regularizing", model.final_cost.describe()));
    }
    report
}

fn neighbour(rng: &mut ChaCha8Rng, a: &PointArgs, dim: usize, radius: f64) -> PointArgs {
    let eps = 1e-3;
    let mut b = *a;
    b.u = (a.u + rng.gen_range(-eps..eps)).clamp(-radius, radius);
    b.m = (a.m + rng.gen_range(-eps..eps)).clamp(1.0 / radius, radius);
    for i in 0..dim {
        b.du[i] += rng.gen_range(-eps..eps);
        b.dm[i] += rng.gen_range(-eps..eps);
    }
    for v in [&mut b.du, &mut b.dm] {
        let n = euclidean(v);
        if n > radius {
            v[0] *= radius / n;
            v[1] *= radius / n;
        }
    }
    b
}

fn perturb(rng: &mut ChaCha8Rng, h: &Matrix, dim: usize) -> Matrix {
    let d = random_symmetric(rng, dim, 1e-3);
    [[h[0][0] + d[0][0], h[0][1] + d[0][1]], [h[1][0] + d[1][0], h[1][1] + d[1][1]]]
}
