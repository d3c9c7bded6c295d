//! WebAssembly bindings for the browser demo. Every export returns a JSON
//! string; failures come back as `{"error": "..."}`.

use dgdlocal::harness::{prepare, ExperimentConfig, InstanceSpec, Rho};
use dgdlocal::objective::{local_bounds, mf_denominator, stepsize_generic, stepsize_mf, window_eval, window_hess_bound};
use dgdlocal::solvers::{run, Engine, StepSize};
use dgdlocal::TopologyKind;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Hard cap so a page never freezes on a huge request.
pub const MAX_ITERS: usize = 50_000;
pub const MAX_SAMPLES: usize = 10_000;

fn respond<T: Serialize>(result: Result<T, String>) -> String {
    match result {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

#[derive(Serialize)]
struct Simulation {
    mu: f64,
    rho: f64,
    omega: f64,
    status: String,
    iter: Vec<usize>,
    f: Vec<f64>,
    g: Vec<f64>,
    consensus: Vec<f64>,
    opt_gap: Vec<f64>,
    z_norm: Vec<f64>,
}

/// Run DGD+LOCAL on a random rank-`r` instance and return the sampled
/// trace. `mu_scale` multiplies the automatic stepsize.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    n: usize,
    m: usize,
    r: usize,
    nodes: usize,
    topology: &str,
    seed: u64,
    iters: usize,
    stride: usize,
    lazy: bool,
    mu_scale: f64,
) -> String {
    respond(simulate_inner(n, m, r, nodes, topology, seed, iters, stride, lazy, mu_scale))
}

#[allow(clippy::too_many_arguments)]
fn simulate_inner(
    n: usize,
    m: usize,
    r: usize,
    nodes: usize,
    topology: &str,
    seed: u64,
    iters: usize,
    stride: usize,
    lazy: bool,
    mu_scale: f64,
) -> Result<Simulation, String> {
    if iters > MAX_ITERS {
        return Err(format!("at most {MAX_ITERS} iterations in the browser"));
    }
    if !(mu_scale > 0.0 && mu_scale.is_finite()) {
        return Err("stepsize scale must be positive".into());
    }
    let topology: TopologyKind = topology.parse().map_err(|e: dgdlocal::Error| e.to_string())?;
    let cfg = ExperimentConfig {
        instance: InstanceSpec {
            n,
            m,
            r,
            nodes,
            topology,
            seed,
            rho: Rho::Auto,
        },
        mu: StepSize::Auto,
        max_iters: iters,
        tol_grad: None,
        tol_consensus: 1e-6,
        tol_gap: 1e-4,
        trials: 1,
        output_dir: Default::default(),
        lazy,
        engine: Engine::DgdLocal,
        safety: 0.99,
        halt_on_leave: false,
        trace_stride: stride.max(1),
    };
    let mut prep = prepare(&cfg).map_err(|e| e.to_string())?;
    let mu = prep.mu().map_err(|e| e.to_string())? * mu_scale;
    prep.run.mu = StepSize::Fixed(mu);
    let z0 = prep.initial_point(seed).map_err(|e| e.to_string())?;
    let trace = run(Engine::DgdLocal, &z0, &prep.run, &prep.mixing, &prep.partition).map_err(|e| e.to_string())?;
    let col = |f: fn(&dgdlocal::solvers::TraceRecord) -> f64| trace.records.iter().map(f).collect::<Vec<_>>();
    Ok(Simulation {
        mu,
        rho: prep.rho,
        omega: prep.omega,
        status: trace.status.to_string(),
        iter: trace.records.iter().map(|r| r.iter).collect(),
        f: col(|r| r.f_central),
        g: col(|r| r.g_value),
        consensus: col(|r| r.consensus_err),
        opt_gap: col(|r| r.opt_gap),
        z_norm: col(|r| r.z_norm),
    })
}

#[derive(Serialize)]
struct WindowCurve {
    rho: f64,
    hess_bound: f64,
    radius: Vec<f64>,
    value: Vec<f64>,
    slope: Vec<f64>,
    hess_norm: Vec<f64>,
    all_within_bound: bool,
}

/// Sample the radial window on `[0, 2.5 rho]`.
#[wasm_bindgen]
pub fn window_curve(rho: f64, samples: usize) -> String {
    respond(window_curve_inner(rho, samples))
}

fn window_curve_inner(rho: f64, samples: usize) -> Result<WindowCurve, String> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err("rho must be positive".into());
    }
    if !(2..=MAX_SAMPLES).contains(&samples) {
        return Err(format!("samples must lie in 2..={MAX_SAMPLES}"));
    }
    let radius: Vec<f64> = (0..samples).map(|i| 2.5 * rho * i as f64 / (samples - 1) as f64).collect();
    let evals: Vec<_> = radius.iter().map(|&r| window_eval(r, rho)).collect();
    Ok(WindowCurve {
        rho,
        hess_bound: window_hess_bound(rho),
        value: evals.iter().map(|e| e.value).collect(),
        slope: evals.iter().map(|e| e.slope).collect(),
        hess_norm: evals.iter().map(|e| e.hess_norm).collect(),
        all_within_bound: evals.iter().all(|e| e.hess_bound_ok),
        radius,
    })
}

#[derive(Serialize)]
struct StepsizeTable {
    rho: f64,
    omega: f64,
    ynorm: f64,
    l0: f64,
    l1: f64,
    l2: f64,
    denominator: f64,
    mu_mf: f64,
    mu_generic: f64,
}

/// Per-block bound constants and both stepsize bounds for one block norm.
#[wasm_bindgen]
pub fn stepsize_table(rho: f64, omega: f64, ynorm: f64) -> String {
    respond(stepsize_table_inner(rho, omega, ynorm))
}

fn stepsize_table_inner(rho: f64, omega: f64, ynorm: f64) -> Result<StepsizeTable, String> {
    if !(ynorm >= 0.0 && ynorm.is_finite()) {
        return Err("block norm must be nonnegative".into());
    }
    let mu_mf = stepsize_mf(rho, omega, &[ynorm]).map_err(|e| e.to_string())?;
    let b = local_bounds(rho, ynorm);
    let mu_generic = stepsize_generic(b.l2, omega).map_err(|e| e.to_string())?;
    Ok(StepsizeTable {
        rho,
        omega,
        ynorm,
        l0: b.l0,
        l1: b.l1,
        l2: b.l2,
        denominator: mf_denominator(rho, ynorm),
        mu_mf,
        mu_generic,
    })
}
