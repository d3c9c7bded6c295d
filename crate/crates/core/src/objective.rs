//! Centralized objective `f(U, V) = ||U V^T - Y||_F^2`, the consensus-penalized
//! network objective `g`, their gradients and Hessian quadratic forms, and the
//! Lipschitz and stepsize bounds that go with them.
//!
//! No factor of one half anywhere: every value here is the derivative of the
//! un-halved objective that the solvers evaluate.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::matkit::DenseMatrix;
use crate::topology::GdWeights;

/// Safety factor applied to the open stepsize bounds.
pub const DEFAULT_SAFETY: f64 = 0.99;

/// Column blocks `Y_1, ..., Y_J` of the data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPartition {
    y: DenseMatrix,
    widths: Vec<usize>,
    offsets: Vec<usize>,
    blocks: Vec<DenseMatrix>,
}

impl DataPartition {
    pub fn new(y: DenseMatrix, widths: Vec<usize>) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "block widths must be positive, got {widths:?}"
            )));
        }
        let total: usize = widths.iter().sum();
        if total != y.cols() {
            return Err(mismatch("DataPartition::new", y.cols(), total));
        }
        let mut offsets = Vec::with_capacity(widths.len());
        let mut blocks = Vec::with_capacity(widths.len());
        let mut start = 0;
        for &w in &widths {
            offsets.push(start);
            blocks.push(y.col_block(start, w)?);
            start += w;
        }
        Ok(Self {
            y,
            widths,
            offsets,
            blocks,
        })
    }

    /// Widths `floor(m / J)`, the first `m mod J` blocks one wider.
    pub fn even(y: DenseMatrix, nodes: usize) -> Result<Self> {
        Self::new(y.clone(), even_widths(y.cols(), nodes)?)
    }

    pub fn y(&self) -> &DenseMatrix {
        &self.y
    }

    pub fn nodes(&self) -> usize {
        self.widths.len()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn block(&self, j: usize) -> &DenseMatrix {
        &self.blocks[j]
    }

    pub fn blocks(&self) -> &[DenseMatrix] {
        &self.blocks
    }

    /// `||Y_j||_F` for each block.
    pub fn block_norms(&self) -> Vec<f64> {
        self.blocks.iter().map(DenseMatrix::frob_norm).collect()
    }

    pub fn reassemble(&self) -> DenseMatrix {
        DenseMatrix::hcat(&self.blocks).expect("blocks share row count")
    }
}

pub fn even_widths(m: usize, nodes: usize) -> Result<Vec<usize>> {
    if nodes == 0 || nodes > m {
        return Err(Error::InvalidArgument(format!(
            "cannot split {m} columns over {nodes} nodes with every node owning one"
        )));
    }
    let (base, extra) = (m / nodes, m % nodes);
    Ok((0..nodes).map(|j| base + usize::from(j < extra)).collect())
}

/// Factor pair `(U, V)` with `U: n x r`, `V: m x r`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub u: DenseMatrix,
    pub v: DenseMatrix,
}

impl FactorPair {
    pub fn new(u: DenseMatrix, v: DenseMatrix) -> Result<Self> {
        if u.cols() != v.cols() {
            return Err(mismatch("FactorPair::new", u.cols(), v.cols()));
        }
        Ok(Self { u, v })
    }

    pub fn zeros(n: usize, m: usize, r: usize) -> Self {
        Self {
            u: DenseMatrix::zeros(n, r),
            v: DenseMatrix::zeros(m, r),
        }
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn norm_sq(&self) -> f64 {
        self.u.frob_norm_sq() + self.v.frob_norm_sq()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn product(&self) -> DenseMatrix {
        self.u.matmul_nt(&self.v).expect("factor ranks agree")
    }

    /// `V_1, ..., V_J` following the partition widths.
    pub fn split_v(&self, d: &DataPartition) -> Result<Vec<DenseMatrix>> {
        if self.v.rows() != d.y().cols() {
            return Err(mismatch("FactorPair::split_v", d.y().cols(), self.v.rows()));
        }
        d.offsets()
            .iter()
            .zip(d.widths())
            .map(|(&o, &w)| self.v.row_block(o, w))
            .collect()
    }

    /// Concatenate `vec(U)` and `vec(V)` (row-major).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.u.as_slice().to_vec();
        out.extend_from_slice(self.v.as_slice());
        out
    }

    pub fn from_flat(n: usize, m: usize, r: usize, x: &[f64]) -> Result<Self> {
        if x.len() != (n + m) * r {
            return Err(mismatch("FactorPair::from_flat", (n + m) * r, x.len()));
        }
        Ok(Self {
            u: DenseMatrix::new(n, r, x[..n * r].to_vec())?,
            v: DenseMatrix::new(m, r, x[n * r..].to_vec())?,
        })
    }

    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.u.axpy(alpha, &other.u)?;
        self.v.axpy(alpha, &other.v)
    }
}

/// Shape of a network point: `J` copies of an `n x r` factor and local
/// blocks of heights `widths`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkDims {
    pub n: usize,
    pub r: usize,
    pub widths: Vec<usize>,
}

impl NetworkDims {
    pub fn of(d: &DataPartition, r: usize) -> Self {
        Self {
            n: d.y().rows(),
            r,
            widths: d.widths().to_vec(),
        }
    }

    pub fn nodes(&self) -> usize {
        self.widths.len()
    }

    /// Number of scalar coordinates.
    pub fn dim(&self) -> usize {
        self.nodes() * self.n * self.r + self.widths.iter().sum::<usize>() * self.r
    }
}

/// Stacked network variable `z = (U^1, ..., U^J, V_1, ..., V_J)`.
///
/// Also used for gradients and Hessian directions.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkPoint {
    pub copies: Vec<DenseMatrix>,
    pub locals: Vec<DenseMatrix>,
}

impl NetworkPoint {
    pub fn new(copies: Vec<DenseMatrix>, locals: Vec<DenseMatrix>) -> Result<Self> {
        if copies.len() != locals.len() || copies.is_empty() {
            return Err(mismatch("NetworkPoint::new", copies.len(), locals.len()));
        }
        let shape = copies[0].shape();
        let r = shape.1;
        if let Some(c) = copies.iter().find(|c| c.shape() != shape) {
            return Err(mismatch(
                "NetworkPoint::new",
                format!("{}x{}", shape.0, shape.1),
                format!("{}x{}", c.rows(), c.cols()),
            ));
        }
        if let Some(l) = locals.iter().find(|l| l.cols() != r) {
            return Err(mismatch("NetworkPoint::new", r, l.cols()));
        }
        Ok(Self { copies, locals })
    }

    pub fn zeros(dims: &NetworkDims) -> Self {
        Self {
            copies: vec![DenseMatrix::zeros(dims.n, dims.r); dims.nodes()],
            locals: dims
                .widths
                .iter()
                .map(|&w| DenseMatrix::zeros(w, dims.r))
                .collect(),
        }
    }

    /// Every copy set to `p.u`, locals split from `p.v`.
    pub fn consensus(p: &FactorPair, d: &DataPartition) -> Result<Self> {
        if p.u.rows() != d.y().rows() {
            return Err(mismatch("NetworkPoint::consensus", d.y().rows(), p.u.rows()));
        }
        let locals = p.split_v(d)?;
        Ok(Self {
            copies: vec![p.u.clone(); d.nodes()],
            locals,
        })
    }

    pub fn nodes(&self) -> usize {
        self.copies.len()
    }

    pub fn dims(&self) -> NetworkDims {
        NetworkDims {
            n: self.copies[0].rows(),
            r: self.copies[0].cols(),
            widths: self.locals.iter().map(DenseMatrix::rows).collect(),
        }
    }

    /// Entrywise mean of the copies. Exact when all copies are identical.
    pub fn mean_copy(&self) -> DenseMatrix {
        let first = &self.copies[0];
        if self.copies.iter().all(|c| c == first) {
            return first.clone();
        }
        let mut acc = DenseMatrix::zeros(first.rows(), first.cols());
        for c in &self.copies {
            acc.axpy(1.0, c).expect("copies share a shape");
        }
        acc.scale(1.0 / self.copies.len() as f64)
    }

    /// Centralized pair `(mean copy, stacked locals)`.
    pub fn assemble(&self) -> FactorPair {
        FactorPair {
            u: self.mean_copy(),
            v: DenseMatrix::vcat(&self.locals).expect("locals share a rank"),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.copies
            .iter()
            .chain(&self.locals)
            .map(DenseMatrix::frob_norm_sq)
            .sum()
    }

    /// z-norm: Frobenius norm of the concatenation.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    fn check_same_dims(&self, other: &Self, op: &'static str) -> Result<()> {
        let same = self.copies.len() == other.copies.len()
            && self.locals.len() == other.locals.len()
            && self
                .copies
                .iter()
                .chain(&self.locals)
                .zip(other.copies.iter().chain(&other.locals))
                .all(|(a, b)| a.shape() == b.shape());
        if same {
            Ok(())
        } else {
            Err(mismatch(op, format!("{:?}", self.dims()), format!("{:?}", other.dims())))
        }
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_same_dims(other, "NetworkPoint::dot")?;
        self.copies
            .iter()
            .chain(&self.locals)
            .zip(other.copies.iter().chain(&other.locals))
            .map(|(a, b)| a.dot(b))
            .sum()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.check_same_dims(other, "NetworkPoint::axpy")?;
        for (a, b) in self
            .copies
            .iter_mut()
            .chain(self.locals.iter_mut())
            .zip(other.copies.iter().chain(&other.locals))
        {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            copies: self.copies.iter().map(|c| c.scale(alpha)).collect(),
            locals: self.locals.iter().map(|l| l.scale(alpha)).collect(),
        }
    }

    /// Copies first, then locals, each row-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.copies
            .iter()
            .chain(&self.locals)
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    pub fn from_flat(dims: &NetworkDims, x: &[f64]) -> Result<Self> {
        if x.len() != dims.dim() {
            return Err(mismatch("NetworkPoint::from_flat", dims.dim(), x.len()));
        }
        let mut z = Self::zeros(dims);
        let mut at = 0;
        for m in z.copies.iter_mut().chain(z.locals.iter_mut()) {
            let len = m.rows() * m.cols();
            m.as_mut_slice().copy_from_slice(&x[at..at + len]);
            at += len;
        }
        Ok(z)
    }
}

fn check_block(u: &DenseMatrix, vj: &DenseMatrix, yj: &DenseMatrix, op: &'static str) -> Result<()> {
    if u.cols() != vj.cols() || u.rows() != yj.rows() || vj.rows() != yj.cols() {
        return Err(mismatch(
            op,
            format!("U: n x r, V_j: m_j x r, Y_j: n x m_j (Y_j is {}x{})", yj.rows(), yj.cols()),
            format!("U {}x{}, V_j {}x{}", u.rows(), u.cols(), vj.rows(), vj.cols()),
        ));
    }
    Ok(())
}

fn check_network(z: &NetworkPoint, w: Option<&GdWeights>, d: &DataPartition) -> Result<()> {
    if z.nodes() != d.nodes() {
        return Err(mismatch("network objective", d.nodes(), z.nodes()));
    }
    if let Some(w) = w {
        if w.nodes() != d.nodes() {
            return Err(mismatch("network weights", d.nodes(), w.nodes()));
        }
    }
    Ok(())
}

/// `U V_j^T - Y_j`
pub fn residual(u: &DenseMatrix, vj: &DenseMatrix, yj: &DenseMatrix) -> Result<DenseMatrix> {
    check_block(u, vj, yj, "residual")?;
    u.matmul_nt(vj)?.sub(yj)
}

/// `f_j(U, V_j) = ||U V_j^T - Y_j||_F^2`
pub fn f_block(u: &DenseMatrix, vj: &DenseMatrix, yj: &DenseMatrix) -> Result<f64> {
    Ok(residual(u, vj, yj)?.frob_norm_sq())
}

pub fn f_value(p: &FactorPair, y: &DenseMatrix) -> Result<f64> {
    f_block(&p.u, &p.v, y)
}

/// Per-node terms `f_j(U, V_j)`.
pub fn f_blocks(p: &FactorPair, d: &DataPartition) -> Result<Vec<f64>> {
    let vs = p.split_v(d)?;
    vs.iter()
        .zip(d.blocks())
        .map(|(vj, yj)| f_block(&p.u, vj, yj))
        .collect()
}

/// `f` evaluated both whole and as the sum of node terms; panics if the two
/// disagree beyond `1e-12` relative (they are the same sum regrouped).
pub fn f_value_partitioned(p: &FactorPair, d: &DataPartition) -> Result<f64> {
    let whole = f_value(p, d.y())?;
    let split: f64 = f_blocks(p, d)?.iter().sum();
    assert!(
        (whole - split).abs() <= 1e-12 * whole.abs().max(f64::MIN_POSITIVE) || whole == split,
        "f decomposition disagrees: {whole} vs {split}"
    );
    Ok(whole)
}

/// `sum_j sum_i w_ji ||U^j - U^i||_F^2`, over both ordered pairs.
pub fn consensus_penalty(z: &NetworkPoint, w: &GdWeights) -> Result<f64> {
    let jn = z.nodes();
    let mut total = 0.0;
    for j in 0..jn {
        for i in 0..jn {
            let wji = w.weight(j, i);
            if wji != 0.0 {
                total += wji * z.copies[j].sub(&z.copies[i])?.frob_norm_sq();
            }
        }
    }
    Ok(total)
}

pub fn g_value(z: &NetworkPoint, w: &GdWeights, d: &DataPartition) -> Result<f64> {
    check_network(z, Some(w), d)?;
    let data: f64 = (0..z.nodes())
        .map(|j| f_block(&z.copies[j], &z.locals[j], d.block(j)))
        .sum::<Result<f64>>()?;
    Ok(data + consensus_penalty(z, w)?)
}

/// `(2 R_j V_j, 2 R_j^T U)` with `R_j = U V_j^T - Y_j`.
pub fn grad_f_block(
    u: &DenseMatrix,
    vj: &DenseMatrix,
    yj: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let r = residual(u, vj, yj)?;
    let gu = r.matmul(vj)?.scale(2.0);
    let gv = r.matmul_tn(u)?.scale(2.0);
    Ok((gu, gv))
}

/// Gradient of `f`, returned as a pair shaped like `p`.
pub fn grad_f(p: &FactorPair, y: &DenseMatrix) -> Result<FactorPair> {
    let (u, v) = grad_f_block(&p.u, &p.v, y)?;
    Ok(FactorPair { u, v })
}

/// Gradient of `g`. Copy block `j` is `2 R_j V_j + 4 sum_i w_ji (U^j - U^i)`,
/// local block `j` is `2 R_j^T U^j`.
pub fn grad_g(z: &NetworkPoint, w: &GdWeights, d: &DataPartition) -> Result<NetworkPoint> {
    Ok(value_and_grad_g(z, w, d)?.1)
}

/// `(g(z), grad g(z))` sharing one residual per node.
pub fn value_and_grad_g(
    z: &NetworkPoint,
    w: &GdWeights,
    d: &DataPartition,
) -> Result<(f64, NetworkPoint)> {
    check_network(z, Some(w), d)?;
    let jn = z.nodes();
    let mut value = 0.0;
    let mut copies = Vec::with_capacity(jn);
    let mut locals = Vec::with_capacity(jn);
    for j in 0..jn {
        let (uj, vj) = (&z.copies[j], &z.locals[j]);
        let r = residual(uj, vj, d.block(j))?;
        value += r.frob_norm_sq();
        let mut gu = r.matmul(vj)?.scale(2.0);
        for i in 0..jn {
            let wji = w.weight(j, i);
            if wji != 0.0 {
                let diff = uj.sub(&z.copies[i])?;
                value += wji * diff.frob_norm_sq();
                gu.axpy(4.0 * wji, &diff)?;
            }
        }
        copies.push(gu);
        locals.push(r.matmul_tn(uj)?.scale(2.0));
    }
    Ok((value, NetworkPoint { copies, locals }))
}

/// Hessian quadratic form of `f_j` at `(U, V_j)` along `(dU, dV_j)`:
/// `2 ||dU V_j^T + U dV_j^T||^2 + 4 <U V_j^T - Y_j, dU dV_j^T>`.
pub fn quadform_f_block(
    u: &DenseMatrix,
    vj: &DenseMatrix,
    yj: &DenseMatrix,
    du: &DenseMatrix,
    dvj: &DenseMatrix,
) -> Result<f64> {
    if du.shape() != u.shape() || dvj.shape() != vj.shape() {
        return Err(mismatch(
            "quadform_f",
            format!("U {:?}, V {:?}", u.shape(), vj.shape()),
            format!("dU {:?}, dV {:?}", du.shape(), dvj.shape()),
        ));
    }
    let r = residual(u, vj, yj)?;
    let lin = du.matmul_nt(vj)?.add(&u.matmul_nt(dvj)?)?;
    let cross = du.matmul_nt(dvj)?;
    Ok(2.0 * lin.frob_norm_sq() + 4.0 * r.dot(&cross)?)
}

pub fn quadform_f(p: &FactorPair, dir: &FactorPair, y: &DenseMatrix) -> Result<f64> {
    quadform_f_block(&p.u, &p.v, y, &dir.u, &dir.v)
}

/// Hessian quadratic form of `g` at `z` along `q`.
pub fn quadform_g(
    z: &NetworkPoint,
    q: &NetworkPoint,
    w: &GdWeights,
    d: &DataPartition,
) -> Result<f64> {
    check_network(z, Some(w), d)?;
    z.check_same_dims(q, "quadform_g")?;
    let jn = z.nodes();
    let mut total = 0.0;
    for j in 0..jn {
        total += quadform_f_block(
            &z.copies[j],
            &z.locals[j],
            d.block(j),
            &q.copies[j],
            &q.locals[j],
        )?;
    }
    for j in 0..jn {
        for i in 0..jn {
            let wji = w.weight(j, i);
            if wji != 0.0 {
                total += 2.0 * wji * q.copies[j].sub(&q.copies[i])?.frob_norm_sq();
            }
        }
    }
    Ok(total)
}

/// Lipschitz constant of `grad g`: `L + 2 omega / mu`.
pub fn lipschitz_lg(l: f64, omega: f64, mu: f64) -> f64 {
    l + 2.0 * omega / mu
}

/// Bounds on `|f_j|`, `||grad f_j||` and `||hess f_j||` over the ball
/// `||U||^2 + ||V_j||^2 <= 4 rho^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsTriple {
    pub l0: f64,
    pub l1: f64,
    pub l2: f64,
    pub rho: f64,
}

pub fn local_bounds(rho: f64, ynorm: f64) -> BoundsTriple {
    BoundsTriple {
        l0: 32.0 * rho.powi(4) + 2.0 * ynorm * ynorm,
        l1: 32.0 * rho.powi(3) + 8.0 * rho * ynorm,
        l2: 20.0 * rho * rho + 2.0 * ynorm,
        rho,
    }
}

impl BoundsTriple {
    /// Lipschitz bound of the windowed `f_j`:
    /// `L2 + 4 L1 / rho + (2 + 2 pi) L0 / rho^2`.
    pub fn windowed_lipschitz(&self) -> f64 {
        let rho = self.rho;
        self.l2 + 4.0 * self.l1 / rho + (2.0 + 2.0 * PI) * self.l0 / (rho * rho)
    }
}

/// Closed form of the windowed Lipschitz bound for matrix factorization:
/// `(212 + 64 pi) rho^2 + 34 ||Y_j|| + (4 + 4 pi) ||Y_j||^2 / rho^2`.
pub fn mf_denominator(rho: f64, ynorm: f64) -> f64 {
    (212.0 + 64.0 * PI) * rho * rho + 34.0 * ynorm + (4.0 + 4.0 * PI) * ynorm * ynorm / (rho * rho)
}

fn check_omega(omega: f64) -> Result<()> {
    if !(omega >= 0.0) {
        return Err(Error::InvalidArgument(format!("omega must be nonnegative, got {omega}")));
    }
    if omega >= 0.5 {
        return Err(Error::OmegaTooLarge { omega });
    }
    Ok(())
}

/// Open bound `(1 - 2 omega) / L`; use a strictly smaller stepsize.
pub fn stepsize_generic(l: f64, omega: f64) -> Result<f64> {
    check_omega(omega)?;
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::InvalidArgument(format!("Lipschitz constant must be positive, got {l}")));
    }
    Ok((1.0 - 2.0 * omega) / l)
}

/// Open bound `(1 - 2 omega) / max_j mf_denominator(rho, ||Y_j||)`.
pub fn stepsize_mf(rho: f64, omega: f64, block_norms: &[f64]) -> Result<f64> {
    check_omega(omega)?;
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    if block_norms.is_empty() {
        return Err(Error::InvalidArgument("need at least one block norm".into()));
    }
    let mut denom = 0.0_f64;
    for &y in block_norms {
        let closed = mf_denominator(rho, y);
        let composed = local_bounds(rho, y).windowed_lipschitz();
        assert!(
            (closed - composed).abs() <= 1e-12 * closed,
            "stepsize denominator mismatch: {closed} vs {composed}"
        );
        denom = denom.max(closed);
    }
    Ok((1.0 - 2.0 * omega) / denom)
}

/// Multiply an open bound by a safety factor in `(0, 1]`.
pub fn with_safety(bound: f64, safety: f64) -> Result<f64> {
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::InvalidArgument(format!("safety must lie in (0, 1], got {safety}")));
    }
    Ok(bound * safety)
}

/// Radial window `w(||x||)`: one inside `rho`, zero beyond `2 rho`, a
/// `C^2` ramp in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowEval {
    pub value: f64,
    /// `||grad w||`, i.e. `(2 / rho) sin^2(pi r / rho)` on the ramp.
    pub slope: f64,
    /// Spectral norm of the Hessian of `x -> w(||x||)` at radius `r`.
    pub hess_norm: f64,
    /// `hess_norm <= (2 + 2 pi) / rho^2`.
    pub hess_bound_ok: bool,
}

pub fn window_hess_bound(rho: f64) -> f64 {
    (2.0 + 2.0 * PI) / (rho * rho)
}

pub fn window_eval(radius: f64, rho: f64) -> WindowEval {
    let bound = window_hess_bound(rho);
    if radius <= rho {
        return WindowEval {
            value: 1.0,
            slope: 0.0,
            hess_norm: 0.0,
            hess_bound_ok: true,
        };
    }
    if radius >= 2.0 * rho {
        return WindowEval {
            value: 0.0,
            slope: 0.0,
            hess_norm: 0.0,
            hess_bound_ok: true,
        };
    }
    let t = radius / rho;
    let value = 2.0 - t + (2.0 * PI * t).sin() / (2.0 * PI);
    let s = (PI * t).sin();
    let slope = 2.0 / rho * s * s;
    // radial second derivative, and first derivative over radius for the
    // tangential directions
    let second = 2.0 * PI / (rho * rho) * (2.0 * PI * t).sin();
    let hess_norm = second.abs().max(slope / radius);
    WindowEval {
        value,
        slope,
        hess_norm,
        hess_bound_ok: hess_norm <= bound * (1.0 + 1e-12),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn f_value_cases() {
        let p = FactorPair::new(m(&[&[1.0], &[0.0]]), m(&[&[1.0], &[0.0]])).unwrap();
        assert_eq!(f_value(&p, &DenseMatrix::identity(2)).unwrap(), 1.0);

        let y = m(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let zero = FactorPair::zeros(2, 3, 1);
        assert_eq!(f_value(&zero, &y).unwrap(), y.frob_norm_sq());

        let exact = FactorPair::new(m(&[&[1.0], &[2.0]]), m(&[&[3.0], &[1.0], &[-1.0]])).unwrap();
        assert_eq!(f_value(&exact, &exact.product()).unwrap(), 0.0);
    }

    #[test]
    fn f_value_rejects_mismatch() {
        let p = FactorPair::zeros(2, 3, 1);
        assert!(f_value(&p, &DenseMatrix::zeros(3, 3)).is_err());
        assert!(FactorPair::new(DenseMatrix::zeros(2, 1), DenseMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn f_partitioned_agrees() {
        let y = m(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let d = DataPartition::new(y.clone(), vec![2, 1]).unwrap();
        let p = FactorPair::new(m(&[&[0.5], &[-1.0]]), m(&[&[1.0], &[2.0], &[0.3]])).unwrap();
        let whole = f_value_partitioned(&p, &d).unwrap();
        assert!((whole - f_value(&p, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn grad_f_hand_case() {
        let p = FactorPair::new(m(&[&[1.0]]), m(&[&[2.0]])).unwrap();
        let g = grad_f(&p, &m(&[&[0.0]])).unwrap();
        assert_eq!(g.u.as_slice(), &[8.0]);
        assert_eq!(g.v.as_slice(), &[4.0]);

        let zero = FactorPair::zeros(2, 3, 2);
        let g = grad_f(&zero, &DenseMatrix::from_fn(2, 3, |i, j| (i + j) as f64)).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn quadform_origin_is_negative() {
        let p = FactorPair::zeros(1, 1, 1);
        let dir = FactorPair::new(m(&[&[1.0]]), m(&[&[1.0]])).unwrap();
        assert_eq!(quadform_f(&p, &dir, &m(&[&[1.0]])).unwrap(), -4.0);
        let zero_dir = FactorPair::zeros(1, 1, 1);
        assert_eq!(quadform_f(&p, &zero_dir, &m(&[&[1.0]])).unwrap(), 0.0);
    }

    #[test]
    fn bounds_closed_forms() {
        let b = local_bounds(1.0, 1.0);
        assert_eq!((b.l0, b.l1, b.l2), (34.0, 40.0, 22.0));
        let b = local_bounds(1.0, 0.0);
        assert_eq!((b.l0, b.l1, b.l2), (32.0, 32.0, 20.0));
    }

    #[test]
    fn lipschitz_lg_cases() {
        assert!((lipschitz_lg(10.0, 0.25, 0.01) - 60.0).abs() < 1e-12);
        assert_eq!(lipschitz_lg(7.0, 0.0, 0.3), 7.0);
    }

    #[test]
    fn stepsize_generic_cases() {
        assert!((stepsize_generic(10.0, 0.25).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(stepsize_generic(4.0, 0.0).unwrap(), 0.25);
        assert!(matches!(stepsize_generic(10.0, 0.5), Err(Error::OmegaTooLarge { .. })));
        let msg = stepsize_generic(10.0, 0.6).unwrap_err().to_string();
        assert!(msg.contains("lazy_fix"));
    }

    #[test]
    fn stepsize_mf_cases() {
        // denominators recomputed from the pieces, not hard-coded
        let denom = (212.0 + 64.0 * PI) + 34.0 + (4.0 + 4.0 * PI);
        let mu = stepsize_mf(1.0, 0.25, &[1.0, 1.0, 1.0]).unwrap();
        assert!((mu - 0.5 / denom).abs() <= 1e-15 * mu);
        assert!((mu - 1.0784e-3).abs() < 1e-7);

        let mu = stepsize_mf(1.0, 0.0, &[0.0, 0.0]).unwrap();
        assert!((mu - 1.0 / (212.0 + 64.0 * PI)).abs() < 1e-18);
        assert!((mu - 2.4210e-3).abs() < 1e-7);

        assert!(stepsize_mf(1.0, 0.5, &[1.0]).is_err());
        assert!(stepsize_mf(0.0, 0.1, &[1.0]).is_err());
    }

    #[test]
    fn stepsize_mf_takes_worst_block() {
        let mu = stepsize_mf(2.0, 0.1, &[0.5, 3.0, 1.0]).unwrap();
        assert_eq!(mu, 0.8 / mf_denominator(2.0, 3.0));
    }

    #[test]
    fn window_branches() {
        let rho = 1.7;
        let inner = window_eval(0.5 * rho, rho);
        assert_eq!((inner.value, inner.slope), (1.0, 0.0));
        let mid = window_eval(1.5 * rho, rho);
        assert!((mid.value - 0.5).abs() < 1e-15);
        assert!((mid.slope - 2.0 / rho).abs() < 1e-15);
        let outer = window_eval(2.5 * rho, rho);
        assert_eq!((outer.value, outer.slope), (0.0, 0.0));
        assert!(inner.hess_bound_ok && mid.hess_bound_ok && outer.hess_bound_ok);
    }

    #[test]
    fn even_partition_widths() {
        assert_eq!(even_widths(6, 3).unwrap(), vec![2, 2, 2]);
        assert_eq!(even_widths(7, 3).unwrap(), vec![3, 2, 2]);
        assert!(even_widths(2, 3).is_err());
    }

    #[test]
    fn partition_reassembles_exactly() {
        let y = DenseMatrix::from_fn(3, 7, |i, j| (i * 7 + j) as f64 * 0.1);
        let d = DataPartition::even(y.clone(), 3).unwrap();
        assert_eq!(d.widths(), &[3, 2, 2]);
        assert_eq!(d.reassemble(), y);
        assert!(DataPartition::new(y, vec![3, 3]).is_err());
    }

    #[test]
    fn network_point_flatten_round_trip() {
        let dims = NetworkDims {
            n: 2,
            r: 1,
            widths: vec![2, 1],
        };
        let x: Vec<f64> = (0..dims.dim()).map(|i| i as f64).collect();
        let z = NetworkPoint::from_flat(&dims, &x).unwrap();
        assert_eq!(z.flatten(), x);
        assert_eq!(z.dims(), dims);
    }
}
