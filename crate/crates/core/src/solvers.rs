//! Iteration engines (DGD+LOCAL, gradient descent on `g`, centralized
//! gradient descent) and the monitored run loop.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::geometry::{best_rank_residual, clip_gap, consensus_error};
use crate::matkit::DenseMatrix;
use crate::objective::{
    f_value, grad_f, grad_f_block, stepsize_mf, value_and_grad_g, with_safety, DataPartition,
    FactorPair, NetworkPoint, DEFAULT_SAFETY,
};
use crate::topology::{omega, to_gd_weights, GdWeights, MixingMatrix};

pub const DEFAULT_MAX_ITERS: usize = 200_000;
pub const DEFAULT_TOL_CONSENSUS: f64 = 1e-6;

/// Relative slack allowed in the monotone-descent check on `g`.
pub const DESCENT_SLACK: f64 = 1e-12;

pub const TRACE_HEADER: &str = "iter,f_central,g_value,grad_norm,consensus_err,opt_gap,z_norm,in_ball";

fn round_update(z: &NetworkPoint, d: &DataPartition, op: &'static str) -> Result<()> {
    if z.nodes() != d.nodes() {
        return Err(mismatch(op, d.nodes(), z.nodes()));
    }
    for j in 0..z.nodes() {
        if z.locals[j].rows() != d.widths()[j] || z.copies[j].rows() != d.y().rows() {
            return Err(mismatch(
                op,
                format!("node {j}: U {}xr, V {}xr", d.y().rows(), d.widths()[j]),
                format!("U {}x{}, V {}x{}", z.copies[j].rows(), z.copies[j].cols(), z.locals[j].rows(), z.locals[j].cols()),
            ));
        }
    }
    Ok(())
}

/// One synchronous DGD+LOCAL round:
/// `U^j <- sum_i w~_ji U^i - 2 mu R_j V_j`, `V_j <- V_j - 2 mu R_j^T U^j`,
/// every node reading only the previous iterate.
pub fn dgd_local_step(z: &NetworkPoint, m: &MixingMatrix, mu: f64, d: &DataPartition) -> Result<NetworkPoint> {
    round_update(z, d, "dgd_local_step")?;
    if m.nodes() != z.nodes() {
        return Err(mismatch("dgd_local_step", z.nodes(), m.nodes()));
    }
    let node = |j: usize| -> Result<(DenseMatrix, DenseMatrix)> {
        let (gu, gv) = grad_f_block(&z.copies[j], &z.locals[j], d.block(j))?;
        let mut u = DenseMatrix::zeros(z.copies[j].rows(), z.copies[j].cols());
        for (i, ui) in z.copies.iter().enumerate() {
            let wji = m.weight(j, i);
            if wji != 0.0 {
                u.axpy(wji, ui)?;
            }
        }
        u.axpy(-mu, &gu)?;
        let mut v = z.locals[j].clone();
        v.axpy(-mu, &gv)?;
        Ok((u, v))
    };
    let parts = map_nodes(z.nodes(), node)?;
    let (copies, locals) = parts.into_iter().unzip();
    Ok(NetworkPoint { copies, locals })
}

#[cfg(feature = "parallel")]
fn map_nodes<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    use rayon::prelude::*;
    // tiny blocks: threading only pays off for large nodes
    if n >= 16 {
        (0..n).into_par_iter().map(&f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn map_nodes<T>(n: usize, f: impl Fn(usize) -> Result<T>) -> Result<Vec<T>> {
    (0..n).map(f).collect()
}

/// `z - mu grad g(z)`
pub fn gd_g_step(z: &NetworkPoint, w: &GdWeights, mu: f64, d: &DataPartition) -> Result<NetworkPoint> {
    round_update(z, d, "gd_g_step")?;
    let (_, grad) = value_and_grad_g(z, w, d)?;
    let mut out = z.clone();
    out.axpy(-mu, &grad)?;
    Ok(out)
}

/// `(U, V) - mu grad f(U, V)`
pub fn gd_central_step(p: &FactorPair, mu: f64, y: &DenseMatrix) -> Result<FactorPair> {
    let g = grad_f(p, y)?;
    let mut out = p.clone();
    out.axpy(-mu, &g)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    DgdLocal,
    GdOnG,
    Central,
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dgd_local" => Ok(Self::DgdLocal),
            "gd_on_g" => Ok(Self::GdOnG),
            "central" => Ok(Self::Central),
            other => Err(Error::Config(format!(
                "unknown engine {other:?} (expected dgd_local, gd_on_g or central)"
            ))),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::DgdLocal => "dgd_local",
            Self::GdOnG => "gd_on_g",
            Self::Central => "central",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    /// `safety * stepsize_mf(rho, omega, block norms)`
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mu: StepSize,
    pub rho: f64,
    pub max_iters: usize,
    pub tol_grad: f64,
    pub tol_consensus: f64,
    pub seed: u64,
    pub safety: f64,
    /// Stop with `LeftBall` as soon as the z-norm reaches `rho`.
    pub halt_on_leave: bool,
    /// Keep every `trace_stride`-th record (plus the last one).
    pub trace_stride: usize,
}

impl RunConfig {
    pub fn new(rho: f64, tol_grad: f64) -> Self {
        Self {
            mu: StepSize::Auto,
            rho,
            max_iters: DEFAULT_MAX_ITERS,
            tol_grad,
            tol_consensus: DEFAULT_TOL_CONSENSUS,
            seed: 0,
            safety: DEFAULT_SAFETY,
            halt_on_leave: false,
            trace_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if !(self.tol_grad > 0.0) || !(self.tol_consensus > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return bad(format!("safety must lie in (0, 1], got {}", self.safety));
        }
        if self.trace_stride == 0 {
            return bad("trace_stride must be at least 1".into());
        }
        if let StepSize::Fixed(mu) = self.mu {
            if !(mu > 0.0 && mu.is_finite()) {
                return bad(format!("mu must be positive, got {mu}"));
            }
        }
        Ok(())
    }

    /// Concrete stepsize for this mixing matrix and partition.
    pub fn resolve_mu(&self, m: &MixingMatrix, d: &DataPartition) -> Result<f64> {
        match self.mu {
            StepSize::Fixed(mu) => Ok(mu),
            StepSize::Auto => auto_mu(self.rho, omega(m), &d.block_norms(), self.safety),
        }
    }
}

pub fn auto_mu(rho: f64, omega: f64, block_norms: &[f64], safety: f64) -> Result<f64> {
    with_safety(stepsize_mf(rho, omega, block_norms)?, safety)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    GradToleranceMet,
    MaxIters,
    LeftBall,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub f_central: f64,
    pub g_value: f64,
    pub grad_norm: f64,
    pub consensus_err: f64,
    pub opt_gap: f64,
    pub z_norm: f64,
    pub in_ball: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateTrace {
    pub engine: Engine,
    pub mu: f64,
    pub records: Vec<TraceRecord>,
    pub status: Status,
    /// Number of iterations performed (steps taken).
    pub iters: usize,
    pub left_ball_ever: bool,
    /// Steps where `g` increased by more than the descent slack.
    pub descent_violations: usize,
    pub final_point: NetworkPoint,
}

impl IterateTrace {
    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("a trace always holds the initial record")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                r.iter,
                r.f_central,
                r.g_value,
                r.grad_norm,
                r.consensus_err,
                r.opt_gap,
                r.z_norm,
                u8::from(r.in_ball)
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> RunSummary {
        let last = self.last();
        RunSummary {
            status: self.status,
            iters: self.iters,
            final_f: last.f_central,
            final_consensus_err: last.consensus_err,
            final_opt_gap: last.opt_gap,
            left_ball_ever: self.left_ball_ever,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: Status,
    pub iters: usize,
    pub final_f: f64,
    pub final_consensus_err: f64,
    pub final_opt_gap: f64,
    pub left_ball_ever: bool,
}

enum State {
    Network(NetworkPoint),
    Central(FactorPair),
}

/// Iterate `engine` from `z0` until the gradient norm drops to
/// `cfg.tol_grad`, `cfg.max_iters` steps are taken, or (when
/// `cfg.halt_on_leave`) the iterate leaves the ball.
///
/// The central engine starts from `z0.assemble()` and reports its records
/// on a single-node partition, so `g` equals `f` there.
pub fn run(
    engine: Engine,
    z0: &NetworkPoint,
    cfg: &RunConfig,
    m: &MixingMatrix,
    d: &DataPartition,
) -> Result<IterateTrace> {
    cfg.validate()?;
    round_update(z0, d, "run")?;
    if m.nodes() != d.nodes() {
        return Err(mismatch("run", d.nodes(), m.nodes()));
    }
    let mu = cfg.resolve_mu(m, d)?;
    let r = z0.copies[0].cols();
    let y = d.y();
    let y_norm_sq = y.frob_norm_sq();
    let f_min = best_rank_residual(y, r)?;

    let (mut state, w, local_d) = match engine {
        Engine::Central => {
            let single = DataPartition::new(y.clone(), vec![y.cols()])?;
            let w = GdWeights::new(DenseMatrix::zeros(1, 1), mu)?;
            (State::Central(z0.assemble()), w, Some(single))
        }
        _ => (State::Network(z0.clone()), to_gd_weights(m, mu)?, None),
    };
    let dd = local_d.as_ref().unwrap_or(d);

    let mut records = Vec::new();
    let mut left_ball_ever = false;
    let mut descent_violations = 0;
    let mut prev_g = f64::INFINITY;
    let mut k = 0;
    let status = loop {
        let z = match &state {
            State::Network(z) => z.clone(),
            State::Central(p) => NetworkPoint::consensus(p, dd)?,
        };
        let (g, grad) = value_and_grad_g(&z, &w, dd)?;
        let p = z.assemble();
        let f_central = f_value(&p, y)?;
        let z_norm = z.norm();
        let in_ball = z_norm < cfg.rho;
        left_ball_ever |= !in_ball;
        if g > prev_g + DESCENT_SLACK * prev_g.abs().max(1.0) {
            descent_violations += 1;
        }
        prev_g = g;
        let rec = TraceRecord {
            iter: k,
            f_central,
            g_value: g,
            grad_norm: grad.norm(),
            consensus_err: consensus_error(&z),
            opt_gap: clip_gap(f_central, f_min, y_norm_sq),
            z_norm,
            in_ball,
        };

        // a non-finite iterate lies outside every ball
        let status = if !rec.grad_norm.is_finite() || !g.is_finite() {
            Some(Status::LeftBall)
        } else if rec.grad_norm <= cfg.tol_grad {
            Some(Status::GradToleranceMet)
        } else if !in_ball && cfg.halt_on_leave {
            Some(Status::LeftBall)
        } else if k >= cfg.max_iters {
            Some(Status::MaxIters)
        } else {
            None
        };
        if status.is_some() || k % cfg.trace_stride == 0 {
            records.push(rec);
        }
        if let Some(s) = status {
            break s;
        }

        state = match state {
            State::Network(z) => State::Network(match engine {
                Engine::DgdLocal => dgd_local_step(&z, m, mu, d)?,
                _ => {
                    let mut next = z;
                    next.axpy(-mu, &grad)?;
                    next
                }
            }),
            State::Central(p) => State::Central(gd_central_step(&p, mu, y)?),
        };
        k += 1;
    };

    let final_point = match state {
        State::Network(z) => z,
        State::Central(p) => NetworkPoint::new(vec![p.u], vec![p.v])?,
    };
    Ok(IterateTrace {
        engine,
        mu,
        records,
        status,
        iters: k,
        left_ball_ever,
        descent_violations,
        final_point,
    })
}

/// Run DGD+LOCAL and gradient descent on `g` (weights `w~ / (4 mu)`) side
/// by side for `k` steps; return the largest relative distance between the
/// two iterates.
pub fn equivalence_check(z0: &NetworkPoint, m: &MixingMatrix, mu: f64, d: &DataPartition, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("equivalence check needs K >= 1".into()));
    }
    let w = to_gd_weights(m, mu)?;
    let mut a = z0.clone();
    let mut b = z0.clone();
    let mut worst = 0.0_f64;
    for _ in 0..k {
        a = dgd_local_step(&a, m, mu, d)?;
        b = gd_g_step(&b, &w, mu, d)?;
        let diff = a.sub(&b)?.norm();
        let scale = a.norm().max(b.norm());
        let dev = if diff == 0.0 { 0.0 } else { diff / scale };
        // NaN from blow-up counts as maximal deviation
        worst = if dev.is_nan() { f64::INFINITY } else { worst.max(dev) };
    }
    Ok(worst)
}
