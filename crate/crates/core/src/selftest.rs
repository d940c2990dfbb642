//! Quick numerical self-checks, runnable from the command line without any
//! dataset: derivative oracles on a tiny network plus closed-form optimizer
//! and probe cases.

use ndarray::Array2;

use crate::autodiff::{Objective, Quadratic};
use crate::model::{init_mlp, LabeledBatch, MlpObjective};
use crate::optim::{step, OptimizerConfig};
use crate::probes::max_hessian_eigenvalue;
use crate::rng::rng_stream;
use crate::vecops::{dot, norm};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, error: f64, tol: f64) -> CheckResult {
    CheckResult {
        name,
        passed: error <= tol,
        detail: format!("error {error:.3e} (tolerance {tol:.0e})"),
    }
}

fn tiny_problem(seed: u64) -> Result<(Vec<usize>, Vec<f64>, LabeledBatch)> {
    let sizes = vec![5, 4, 4, 3];
    let params = init_mlp(&mut rng_stream(seed, "selftest-init", 0), &sizes)?.into_values();
    let mut rng = rng_stream(seed, "selftest-data", 0);
    let inputs = Array2::from_shape_fn((6, 5), |_| rng.uniform());
    let labels = (0..6).map(|_| rng.below(3) as usize).collect();
    Ok((sizes, params, LabeledBatch::new(inputs, labels)?))
}

fn central_gradient(obj: &impl Objective, w: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut probe = w.to_vec();
    let mut out = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        probe[i] = w[i] + h;
        let up = obj.loss(&probe)?;
        probe[i] = w[i] - h;
        let down = obj.loss(&probe)?;
        probe[i] = w[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

fn max_rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn vec_rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

/// Runs every check and returns one result per check.
pub fn run_all() -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    let (sizes, w, batch) = tiny_problem(7)?;
    let obj = MlpObjective::new(&sizes, &batch)?;

    let g = obj.gradient(&w)?;
    let fd = central_gradient(&obj, &w, 1e-6)?;
    results.push(check("mlp gradient vs central differences", max_rel_error(&g, &fd, 1e-4), 1e-4));

    let mut rng = rng_stream(7, "selftest-dir", 0);
    let v = rng.unit_vector(w.len());
    let u = rng.unit_vector(w.len());
    let hv = obj.hvp(&w, &v)?;
    let h = 1e-5;
    let plus: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a + h * b).collect();
    let minus: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a - h * b).collect();
    let gp = obj.gradient(&plus)?;
    let gm = obj.gradient(&minus)?;
    let hv_fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    results.push(check("mlp hvp vs gradient differences", vec_rel_error(&hv, &hv_fd), 1e-4));

    let hu = obj.hvp(&w, &u)?;
    let asym = (dot(&u, &hv) - dot(&v, &hu)).abs() / dot(&u, &hv).abs().max(dot(&v, &hu).abs()).max(1e-12);
    results.push(check("hvp symmetry", asym, 1e-8));

    let quad = Quadratic::diagonal(&[1.0])?;
    let mut x = vec![1.0];
    for _ in 0..10 {
        x = step(&quad, &x, &OptimizerConfig::sgd(0.1))?.params;
    }
    results.push(check("sgd on x²/2", (x[0] - 0.9f64.powi(10)).abs(), 1e-12));

    let quad2 = Quadratic::diagonal(&[1.0, 1.0])?;
    let sam = step(&quad2, &[1.0, 0.0], &OptimizerConfig::sam(0.1, 0.0, 0.1))?.params;
    results.push(check("sam closed form", (sam[0] - 0.89).abs() + sam[1].abs(), 1e-12));

    let diag = Quadratic::diagonal(&[2.0, 4.0])?;
    let r = max_hessian_eigenvalue(&diag, &[0.3, 0.1], 1e-3, 100, &mut rng_stream(1, "probe", 0))?;
    results.push(check("power iteration on diag(2, 4)", (r.lambda_max - 4.0).abs() / 4.0, 1e-3));

    Ok(results)
}
