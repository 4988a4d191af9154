//! Runtime oracle checks behind the `selftest` command.
//!
//! Each check compares library output against an independent computation
//! (dense linear algebra, finite differences, or a reference optimizer) on
//! seeded random inputs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::geometry::{
    induced_update_flat, induced_update_log, pullback_metric_dense, sherman_morrison_inverse,
    InverseMetric,
};
use crate::landscapes::{Landscape, LandscapeId};
use crate::nn::{self, Batch, MlpSpec};
use crate::numcore::{ParamVector, RngStream};
use crate::optim::{HyperParams, Optimizer, OptimizerConfig, OptimizerKind};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error against the threshold.
    pub detail: String,
}

fn check(name: &'static str, worst: f64, limit: f64) -> Check {
    Check {
        name,
        passed: worst < limit,
        detail: format!("max error {worst:.3e} (limit {limit:.0e})"),
    }
}

fn random_vec(rng: &mut RngStream, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn to_pv(v: Vec<f64>) -> ParamVector {
    ParamVector::new(v).expect("finite by construction")
}

/// Random diagonal SPD γ (as its diagonal) and gradient of size 1..=16.
fn random_pair(rng: &mut RngStream) -> (Vec<f64>, ParamVector) {
    let n = rng.random_range(1..=16);
    (random_vec(rng, n, 0.5, 2.0), to_pv(random_vec(rng, n, -2.0, 2.0)))
}

fn sherman_morrison(rng: &mut RngStream) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (diag, g) = random_pair(rng);
        let gamma = DMatrix::from_diagonal(&DVector::from_vec(diag.clone()));
        let gamma_inv = DMatrix::from_diagonal(&DVector::from_iterator(diag.len(), diag.iter().map(|d| 1.0 / d)));
        let inv = sherman_morrison_inverse(&gamma_inv, &g)?;
        let dense = pullback_metric_dense(&gamma, &g)?;
        let resid = &inv * &dense - DMatrix::identity(diag.len(), diag.len());
        worst = worst.max(resid.amax());
    }
    Ok(check("sherman-morrison inverse", worst, 1e-10))
}

fn dense_step(diag: &[f64], direction: &ParamVector, scale: f64) -> DVector<f64> {
    // Solves (γ + scale²·ddᵀ) x = d through LU on the explicit matrix.
    let d = DVector::from_column_slice(direction.as_slice());
    let m = DMatrix::from_diagonal(&DVector::from_column_slice(diag)) + (&d * d.transpose()) * (scale * scale);
    m.lu().solve(&d).expect("SPD matrix is invertible")
}

fn simplification(rng: &mut RngStream) -> Result<Vec<Check>> {
    let (mut flat, mut log): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let (diag, g) = random_pair(rng);
        let eta = rng.random_range(1e-3..1.0);
        let xi = rng.random_range(0.0..4.0);
        let loss = rng.random_range(0.1..10.0);
        let gi = InverseMetric::diagonal(to_pv(diag.iter().map(|d| 1.0 / d).collect()))?;

        let got = induced_update_flat(&g, &gi, eta, xi)?;
        let want = dense_step(&diag, &g, xi.sqrt()) * -eta;
        for (a, b) in got.iter().zip(want.iter()) {
            flat = flat.max((a - b).abs());
        }

        // Gradient of ln L is g / L.
        let got = induced_update_log(&g, loss, &gi, eta, xi)?;
        let g_log = g.scale(1.0 / loss);
        let want = dense_step(&diag, &g_log, xi.sqrt()) * -eta;
        for (a, b) in got.iter().zip(want.iter()) {
            log = log.max((a - b).abs());
        }
    }
    Ok(vec![
        check("flat update equals dense metric solve", flat, 1e-10),
        check("log update equals dense metric solve", log, 1e-10),
    ])
}

fn clipping_profile() -> Result<Check> {
    let mut worst: f64 = 0.0;
    let eta = 0.1;
    for k in -6..=6 {
        let xi = 10f64.powi(k);
        let l = 1.0 / xi.sqrt();
        let step = induced_update_flat(&to_pv(vec![l]), &InverseMetric::Euclidean, eta, xi)?[0].abs();
        let peak = eta / (2.0 * xi.sqrt());
        worst = worst.max((step - peak).abs() / peak);
        // Neighbours on either side must be smaller.
        for f in [0.5, 2.0] {
            let s = induced_update_flat(&to_pv(vec![l * f]), &InverseMetric::Euclidean, eta, xi)?[0].abs();
            if s > step {
                worst = f64::INFINITY;
            }
        }
    }
    Ok(check("flat update peaks at eta/(2 sqrt xi)", worst, 1e-6))
}

fn quadratic(rng: &mut RngStream, n: usize) -> (Vec<f64>, ParamVector) {
    (random_vec(rng, n, 0.1, 5.0), to_pv(random_vec(rng, n, -3.0, 3.0)))
}

fn quad_loss_grad(a: &[f64], theta: &ParamVector, scale: f64) -> (f64, ParamVector) {
    let loss = 0.5 * scale * a.iter().zip(theta).map(|(ai, t)| ai * t * t).sum::<f64>() + scale;
    let g = to_pv(a.iter().zip(theta).map(|(ai, t)| scale * ai * t).collect());
    (loss, g)
}

fn trajectory(kind: OptimizerKind, h: HyperParams, a: &[f64], start: &ParamVector, steps: usize, scale: f64) -> Result<Vec<ParamVector>> {
    let mut opt = Optimizer::new(OptimizerConfig { kind, hyper: h }, start.len())?;
    let mut theta = start.clone();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (loss, g) = quad_loss_grad(a, &theta, scale);
        theta = opt.step(&theta, &g, loss)?.0;
        out.push(theta.clone());
    }
    Ok(out)
}

fn max_gap(a: &[ParamVector], b: &[ParamVector]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn reductions(rng: &mut RngStream) -> Result<Vec<Check>> {
    let (a, start) = quadratic(rng, 8);
    let h = HyperParams {
        eta: 0.05,
        mu: 0.9,
        xi: 0.0,
        beta: 0.9,
        lambda: 1e-3,
        ..HyperParams::default()
    };
    let sgd = trajectory(OptimizerKind::Sgd, h, &a, &start, 100, 1.0)?;
    let im = trajectory(OptimizerKind::ImSgd, h, &a, &start, 100, 1.0)?;

    let adamw_h = HyperParams {
        lambda: h.lambda / h.eta,
        ..h
    };
    let adamw = trajectory(OptimizerKind::AdamW, adamw_h, &a, &start, 100, 1.0)?;
    let im_rms = trajectory(OptimizerKind::ImRms, h, &a, &start, 100, 1.0)?;
    Ok(vec![
        check("im-sgd with xi=0 reproduces sgd", max_gap(&sgd, &im), 1e-12),
        check("im-rms with xi=0 reproduces adam-w", max_gap(&adamw, &im_rms), 1e-9),
    ])
}

fn log_scale_invariance(rng: &mut RngStream) -> Result<Check> {
    let (a, start) = quadratic(rng, 6);
    let h = HyperParams {
        eta: 0.05,
        mu: 0.9,
        xi: 0.5,
        beta: 0.9,
        ..HyperParams::default()
    };
    let reference = trajectory(OptimizerKind::ImLogSgd, h, &a, &start, 200, 1.0)?;
    let mut worst: f64 = 0.0;
    for c in [1e-6, 1e6] {
        let scaled = trajectory(OptimizerKind::ImLogSgd, h, &a, &start, 200, c)?;
        worst = worst.max(max_gap(&reference, &scaled));
    }
    Ok(check("log optimizer ignores loss scale", worst, 1e-9))
}

/// Five-point stencil, O(h⁴) truncation error.
fn central_diff(f: impl Fn(&ParamVector) -> Result<f64>, theta: &ParamVector, i: usize, h: f64) -> Result<f64> {
    let at = |d: f64| {
        let mut p = theta.as_slice().to_vec();
        p[i] += d;
        f(&to_pv(p))
    };
    Ok((8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h))
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn mlp_gradients(rng: &mut RngStream) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut r = RngStream::new(seed).substream(11);
        let classify = seed % 2 == 1;
        let (spec, batch) = if classify {
            let spec = MlpSpec::classification(vec![3, 6, 5, 3])?;
            let inputs = random_vec(&mut r, 8 * 3, -1.0, 1.0);
            let labels = (0..8).map(|_| r.random_range(0..3)).collect();
            (spec, Batch::classification(inputs, 3, labels, 3)?)
        } else {
            let spec = MlpSpec::regression(vec![3, 7, 5, 2])?;
            let inputs = random_vec(&mut r, 8 * 3, -1.0, 1.0);
            let targets = random_vec(&mut r, 8 * 2, -1.0, 1.0);
            (spec, Batch::regression(inputs, 3, targets, 2)?)
        };
        let params = spec.init_params(rng);
        let (_, cache) = nn::forward(&spec, &params, &batch)?;
        let g = nn::backward(&spec, &params, &batch, &cache)?;
        let loss = |p: &ParamVector| nn::forward(&spec, p, &batch).map(|x| x.0);
        for i in 0..params.len() {
            let fd = central_diff(loss, &params, i, 1e-3)?;
            worst = worst.max(relative(g[i], fd));
        }
    }
    Ok(check("mlp backward matches finite differences", worst, 1e-5))
}

fn landscape_gradients(rng: &mut RngStream) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for id in LandscapeId::ALL {
        let l = Landscape::new(id);
        for _ in 0..20 {
            let theta = to_pv(random_vec(rng, 2, -2.0, 2.0));
            let g = l.grad(&theta)?;
            for i in 0..2 {
                let fd = central_diff(|p| l.eval(p), &theta, i, 1e-4)?;
                worst = worst.max(relative(g[i], fd));
            }
        }
    }
    Ok(check("landscape gradients match finite differences", worst, 1e-6))
}

/// Runs every check with a fixed seed.
pub fn run_all() -> Result<Vec<Check>> {
    let mut rng = RngStream::new(20_240_611);
    let mut checks = vec![sherman_morrison(&mut rng)?];
    checks.extend(simplification(&mut rng)?);
    checks.push(clipping_profile()?);
    checks.extend(reductions(&mut rng)?);
    checks.push(log_scale_invariance(&mut rng)?);
    checks.push(mlp_gradients(&mut rng)?);
    checks.push(landscape_gradients(&mut rng)?);
    Ok(checks)
}
