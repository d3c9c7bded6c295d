//! Landscape tools: consensus and optimality metrics, a smallest-eigenvalue
//! estimate for Hessian quadratic forms, critical-point classification,
//! factor balancing and lifting of centralized directions to the network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::matkit::{reduced_svd, symmetric_eigen, DenseMatrix, DEFAULT_RANK_TOL};
use crate::objective::{f_value, grad_f, grad_f_block, quadform_f, DataPartition, FactorPair, NetworkPoint};

pub const DEFAULT_TOL_SADDLE: f64 = 1e-8;

/// Relative change of the smallest Ritz value below which the estimate is
/// considered stable.
pub const EIG_STABLE_TOL: f64 = 1e-9;

/// `1e-9 (1 + ||Y||_F)`
pub fn default_tol_grad(y: &DenseMatrix) -> f64 {
    1e-9 * (1.0 + y.frob_norm())
}

/// `max_j ||U^j - mean||_F`
pub fn consensus_error(z: &NetworkPoint) -> f64 {
    let mean = z.mean_copy();
    z.copies
        .iter()
        .map(|c| c.sub(&mean).expect("copies share a shape").frob_norm())
        .fold(0.0, f64::max)
}

/// Eckart-Young optimum `||Y - Y_r||_F^2`, the sum of the squared singular
/// values past the first `r`.
pub fn best_rank_residual(y: &DenseMatrix, r: usize) -> Result<f64> {
    let svd = reduced_svd(y, DEFAULT_RANK_TOL)?;
    Ok(svd.sigma.iter().skip(r).map(|s| s * s).sum())
}

/// `f - f_min`, snapped to zero when within `1e-12 (1 + ||Y||_F^2)` of it.
pub fn clip_gap(f: f64, f_min: f64, y_norm_sq: f64) -> f64 {
    let gap = f - f_min;
    if gap.abs() <= 1e-12 * (1.0 + y_norm_sq) {
        0.0
    } else {
        gap
    }
}

pub fn opt_gap(p: &FactorPair, y: &DenseMatrix) -> Result<f64> {
    let f = f_value(p, y)?;
    let f_min = best_rank_residual(y, p.rank())?;
    Ok(clip_gap(f, f_min, y.frob_norm_sq()))
}

/// Smallest-eigenvalue estimate of a quadratic form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenEstimate {
    /// Rayleigh quotient of `witness`, an upper bound on the true minimum.
    pub value: f64,
    /// Unit vector; first nonzero coordinate nonnegative.
    pub witness: Vec<f64>,
    pub iterations: usize,
    /// Iteration cap reached before the estimate settled.
    pub low_confidence: bool,
}

fn sign_fix(x: &mut [f64]) {
    let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if let Some(first) = x.iter().find(|v| v.abs() > 1e-12 * scale) {
        if *first < 0.0 {
            x.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Estimate `min_{||x|| = 1} q(x)` for a symmetric quadratic form given only
/// as a value oracle.
///
/// Matrix-vector products are recovered by polarization,
/// `(H x)_i = (q(x + e_i) - q(x - e_i)) / 4`, and fed to Lanczos with full
/// reorthogonalization started from a seeded Gaussian vector. At most
/// `min(iters, dim)` Lanczos steps are taken.
pub fn min_quadform_eig(
    q: impl Fn(&[f64]) -> f64,
    dim: usize,
    iters: usize,
    seed: u64,
) -> Result<EigenEstimate> {
    if dim == 0 || iters == 0 {
        return Err(Error::InvalidArgument("eigen estimate needs dim >= 1 and iters >= 1".into()));
    }
    let matvec = |x: &[f64]| -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..dim)
            .map(|i| {
                probe[i] = x[i] + 1.0;
                let plus = q(&probe);
                probe[i] = x[i] - 1.0;
                let minus = q(&probe);
                probe[i] = x[i];
                (plus - minus) / 4.0
            })
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let s = norm(&start);
    start.iter_mut().for_each(|v| *v /= s);

    let cap = iters.min(dim);
    let mut basis: Vec<Vec<f64>> = vec![start];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut scale = 0.0_f64;
    let mut prev_theta = f64::NAN;
    let mut last_change = f64::INFINITY;
    let mut theta_vec: Vec<f64> = vec![1.0];
    let mut exhausted = false;

    for k in 0..cap {
        let qk = &basis[k];
        let mut w = matvec(qk);
        let a = dot(qk, &w);
        alpha.push(a);
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                w.iter_mut().zip(b).for_each(|(wi, bi)| *wi -= c * bi);
            }
        }
        let bnorm = norm(&w);
        scale = scale.max(a.abs()).max(bnorm);

        let m = alpha.len();
        let t = DenseMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let (vals, vecs) = symmetric_eigen(&t)?;
        let theta = vals[0];
        theta_vec = (0..m).map(|i| vecs.get(i, 0)).collect();
        last_change = (theta - prev_theta).abs() / theta.abs().max(1e-300);
        prev_theta = theta;

        if bnorm <= 1e-12 * scale.max(1e-300) {
            exhausted = true;
            break;
        }
        if k + 1 < cap {
            beta.push(bnorm);
            basis.push(w.into_iter().map(|v| v / bnorm).collect());
        }
    }

    let mut witness = vec![0.0; dim];
    for (c, b) in theta_vec.iter().zip(&basis) {
        witness.iter_mut().zip(b).for_each(|(x, bi)| *x += c * bi);
    }
    let wn = norm(&witness);
    witness.iter_mut().for_each(|v| *v /= wn);
    sign_fix(&mut witness);
    let value = q(&witness);
    let complete = exhausted || alpha.len() == dim;
    Ok(EigenEstimate {
        value,
        witness,
        iterations: alpha.len(),
        low_confidence: !complete && last_change > EIG_STABLE_TOL,
    })
}

/// Smallest normalized Hessian quadratic form of `f` at `p`.
pub fn min_quadform_f(p: &FactorPair, y: &DenseMatrix, iters: usize, seed: u64) -> Result<(EigenEstimate, FactorPair)> {
    let (n, m, r) = (p.u.rows(), p.v.rows(), p.rank());
    if y.shape() != (n, m) {
        return Err(mismatch("min_quadform_f", format!("{n}x{m}"), format!("{}x{}", y.rows(), y.cols())));
    }
    let oracle = |x: &[f64]| {
        let dir = FactorPair::from_flat(n, m, r, x).expect("oracle dimension is fixed");
        quadform_f(p, &dir, y).expect("dimensions checked above")
    };
    let est = min_quadform_eig(oracle, (n + m) * r, iters, seed)?;
    let dir = FactorPair::from_flat(n, m, r, &est.witness)?;
    Ok((est, dir))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictKind {
    GlobalMin,
    StrictSaddle,
    NotCritical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalVerdict {
    pub kind: VerdictKind,
    pub grad_norm: f64,
    /// Smallest Hessian quadratic form over unit directions; `None` when
    /// the point is not critical.
    pub min_quadform: Option<f64>,
    pub opt_gap: Option<f64>,
    /// Direction achieving `min_quadform` (unit norm), for saddles.
    #[serde(skip)]
    pub witness: Option<FactorPair>,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    pub tol_grad: f64,
    pub tol_saddle: f64,
    pub eig_iters: usize,
    pub seed: u64,
}

impl ClassifyOptions {
    pub fn defaults_for(y: &DenseMatrix) -> Self {
        Self {
            tol_grad: default_tol_grad(y),
            tol_saddle: DEFAULT_TOL_SADDLE,
            eig_iters: usize::MAX,
            seed: 0,
        }
    }
}

/// Decide whether `p` is a global minimum, a strict saddle, or not critical.
///
/// A critical point that is neither is returned as
/// [`Error::ClassificationFailure`].
pub fn classify_critical(p: &FactorPair, y: &DenseMatrix, opts: &ClassifyOptions) -> Result<CriticalVerdict> {
    let grad_norm = grad_f(p, y)?.norm();
    if grad_norm > opts.tol_grad {
        return Ok(CriticalVerdict {
            kind: VerdictKind::NotCritical,
            grad_norm,
            min_quadform: None,
            opt_gap: None,
            witness: None,
            low_confidence: false,
        });
    }
    let gap = opt_gap(p, y)?;
    let (est, dir) = min_quadform_f(p, y, opts.eig_iters, opts.seed)?;
    if gap <= opts.tol_grad * (1.0 + y.frob_norm_sq()) {
        return Ok(CriticalVerdict {
            kind: VerdictKind::GlobalMin,
            grad_norm,
            min_quadform: Some(est.value),
            opt_gap: Some(gap),
            witness: None,
            low_confidence: est.low_confidence,
        });
    }
    if est.value < -opts.tol_saddle {
        return Ok(CriticalVerdict {
            kind: VerdictKind::StrictSaddle,
            grad_norm,
            min_quadform: Some(est.value),
            opt_gap: Some(gap),
            witness: Some(dir),
            low_confidence: est.low_confidence,
        });
    }
    Err(Error::ClassificationFailure {
        gap,
        min_quadform: est.value,
    })
}

/// Rebalance a non-degenerate pair so that `U^T U = V^T V` without changing
/// `U V^T`.
///
/// With `U V^T = P S Q^T` (reduced SVD), returns `(U D, V G)` where
/// `D = pinv(U) P S^{1/2}` and `G = pinv(V) Q S^{1/2}`; the pseudo-inverses
/// come from the reduced SVDs of `U` and `V`.
pub fn balance_factors(p: &FactorPair, rank_tol: f64) -> Result<FactorPair> {
    let r = p.rank();
    let prod = reduced_svd(&p.product(), rank_tol)?;
    if prod.rank() < r {
        return Err(Error::DegenerateFactors { rank: prod.rank(), r });
    }
    let root = DenseMatrix::diag(&prod.sigma.iter().map(|s| s.sqrt()).collect::<Vec<_>>());
    let target_u = prod.p.matmul(&root)?;
    let target_v = prod.q.matmul(&root)?;
    let u = p.u.matmul(&pinv(&p.u, rank_tol, r)?.matmul(&target_u)?)?;
    let v = p.v.matmul(&pinv(&p.v, rank_tol, r)?.matmul(&target_v)?)?;
    FactorPair::new(u, v)
}

/// Moore-Penrose inverse of a full-column-rank `a`.
fn pinv(a: &DenseMatrix, rank_tol: f64, r: usize) -> Result<DenseMatrix> {
    let svd = reduced_svd(a, rank_tol)?;
    if svd.rank() < r {
        return Err(Error::DegenerateFactors { rank: svd.rank(), r });
    }
    let inv = DenseMatrix::diag(&svd.sigma.iter().map(|s| 1.0 / s).collect::<Vec<_>>());
    svd.q.matmul(&inv)?.matmul_nt(&svd.p)
}

/// Network direction with every copy block equal to `q_x`.
pub fn lift_direction(q_x: &DenseMatrix, q_y: &[DenseMatrix], nodes: usize) -> Result<NetworkPoint> {
    if q_y.len() != nodes {
        return Err(mismatch("lift_direction", nodes, q_y.len()));
    }
    NetworkPoint::new(vec![q_x.clone(); nodes], q_y.to_vec())
}

/// Lift a centralized direction, splitting `dir.v` along the partition.
pub fn lift_pair(dir: &FactorPair, d: &DataPartition) -> Result<NetworkPoint> {
    lift_direction(&dir.u, &dir.split_v(d)?, d.nodes())
}

/// `|<grad_U f_j, U> - <grad_V f_j, V_j>| / (1 + |<grad_U f_j, U>|)`
pub fn symmetric_gradient_residual(u: &DenseMatrix, vj: &DenseMatrix, yj: &DenseMatrix) -> Result<f64> {
    let (gu, gv) = grad_f_block(u, vj, yj)?;
    let a = gu.dot(u)?;
    let b = gv.dot(vj)?;
    Ok((a - b).abs() / (1.0 + a.abs()))
}
