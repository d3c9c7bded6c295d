//! Dense row-major matrices and the handful of kernels the rest of the crate
//! needs: products, Frobenius norms, block slicing, a one-sided Jacobi SVD and
//! a cyclic Jacobi eigensolver for small symmetric matrices.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};

/// Relative truncation threshold for singular values.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 80;

/// Real matrix stored row-major.
///
/// Entries are finite: constructors reject NaN/Inf. Empty shapes (`0 x k`)
/// are allowed so that rank-deficient factorizations have a representation.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(mismatch("DenseMatrix::new", rows * cols, data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("DenseMatrix::new"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(mismatch("DenseMatrix::from_rows", c, row.len()));
            }
            data.extend_from_slice(row);
        }
        Self::new(r, c, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(mismatch(
                op,
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| alpha * x).collect(),
        }
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &Self) -> Result<()> {
        self.check_same_shape(x, "axpy")?;
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += alpha * v;
        }
        Ok(())
    }

    /// Frobenius inner product `<self, other>`.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        frob_norm(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        matmul(self, other)
    }

    /// `self * other^T`
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(mismatch("matmul_nt", self.cols, other.cols));
        }
        let k = self.cols;
        let mut out = Self::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = &self.data[i * k..(i + 1) * k];
            for j in 0..other.rows {
                let b = &other.data[j * k..(j + 1) * k];
                out.data[i * other.rows + j] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        Ok(out)
    }

    /// `self^T * other`
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(mismatch("matmul_tn", self.rows, other.rows));
        }
        let (m, n) = (self.cols, other.cols);
        let mut out = Self::zeros(m, n);
        for k in 0..self.rows {
            let a = self.row(k);
            let b = other.row(k);
            for i in 0..m {
                let aik = a[i];
                if aik == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * n..(i + 1) * n];
                for (d, bj) in dst.iter_mut().zip(b) {
                    *d += aik * bj;
                }
            }
        }
        Ok(out)
    }

    /// Columns `start..start + width`.
    pub fn col_block(&self, start: usize, width: usize) -> Result<Self> {
        if start + width > self.cols {
            return Err(mismatch("col_block", self.cols, start + width));
        }
        Ok(Self::from_fn(self.rows, width, |i, j| self.get(i, start + j)))
    }

    /// Rows `start..start + height`.
    pub fn row_block(&self, start: usize, height: usize) -> Result<Self> {
        if start + height > self.rows {
            return Err(mismatch("row_block", self.rows, start + height));
        }
        Ok(Self {
            rows: height,
            cols: self.cols,
            data: self.data[start * self.cols..(start + height) * self.cols].to_vec(),
        })
    }

    /// Horizontal concatenation `[B_1 B_2 ... B_k]`.
    pub fn hcat(blocks: &[Self]) -> Result<Self> {
        let rows = blocks.first().map_or(0, |b| b.rows);
        if let Some(b) = blocks.iter().find(|b| b.rows != rows) {
            return Err(mismatch("hcat", rows, b.rows));
        }
        let cols: usize = blocks.iter().map(|b| b.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for b in blocks {
                data.extend_from_slice(b.row(i));
            }
        }
        Ok(Self { rows, cols, data })
    }

    /// Vertical concatenation `[B_1; B_2; ...; B_k]`.
    pub fn vcat(blocks: &[Self]) -> Result<Self> {
        let cols = blocks.first().map_or(0, |b| b.cols);
        if let Some(b) = blocks.iter().find(|b| b.cols != cols) {
            return Err(mismatch("vcat", cols, b.cols));
        }
        let rows = blocks.iter().map(|b| b.rows).sum();
        let data = blocks.iter().flat_map(|b| b.data.iter().copied()).collect();
        Ok(Self { rows, cols, data })
    }

    /// Write in the shared text format: `rows cols` then one line per row.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.rows, self.cols)?;
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|x| format!("{x:.16e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));

        let (lineno, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty input".into(),
        })?;
        let header = header?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("bad header '{header}': {e}"),
            })?;
        let [rows, cols] = dims[..] else {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("header must be 'rows cols', got '{header}'"),
            });
        };

        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (lineno, line) = lines.next().ok_or(Error::Parse {
                line: lineno + 1,
                msg: format!("expected {rows} rows"),
            })?;
            let line = line?;
            let before = data.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|e| Error::Parse {
                    line: lineno,
                    msg: format!("bad number '{tok}': {e}"),
                })?;
                data.push(v);
            }
            if data.len() - before != cols {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected {cols} values, got {}", data.len() - before),
                });
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn from_text(s: &str) -> Result<Self> {
        Self::read_text(s.as_bytes())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_text(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_text(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(mismatch(
            "matmul",
            format!("A.cols == B.rows ({})", a.cols),
            b.rows,
        ));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = DenseMatrix::zeros(m, n);
    for i in 0..m {
        let dst = &mut out.data[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            let brow = &b.data[p * n..(p + 1) * n];
            for (d, bv) in dst.iter_mut().zip(brow) {
                *d += aip * bv;
            }
        }
    }
    Ok(out)
}

pub fn frob_norm(a: &DenseMatrix) -> f64 {
    a.frob_norm_sq().sqrt()
}

/// Reduced singular value decomposition `A = P diag(sigma) Q^T`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// Left singular vectors, `rows(A) x k`.
    pub p: DenseMatrix,
    /// Singular values, descending.
    pub sigma: Vec<f64>,
    /// Right singular vectors, `cols(A) x k`.
    pub q: DenseMatrix,
}

impl Svd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let mut ps = self.p.clone();
        for i in 0..ps.rows {
            for (j, s) in self.sigma.iter().enumerate() {
                ps.data[i * ps.cols + j] *= s;
            }
        }
        ps.matmul_nt(&self.q).expect("factor shapes agree by construction")
    }

    /// Keep the leading `k` triplets.
    pub fn truncate(&self, k: usize) -> Svd {
        let k = k.min(self.rank());
        Svd {
            p: self.p.col_block(0, k).expect("k <= rank"),
            sigma: self.sigma[..k].to_vec(),
            q: self.q.col_block(0, k).expect("k <= rank"),
        }
    }
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Singular values below `rank_tol * sigma_max` are dropped. Each left
/// singular vector is signed so its first nonzero entry is nonnegative.
pub fn reduced_svd(a: &DenseMatrix, rank_tol: f64) -> Result<Svd> {
    if !(rank_tol >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rank_tol must be nonnegative, got {rank_tol}"
        )));
    }
    if a.rows < a.cols {
        let t = reduced_svd(&a.transpose(), rank_tol)?;
        let mut svd = Svd {
            p: t.q,
            sigma: t.sigma,
            q: t.p,
        };
        fix_signs(&mut svd);
        return Ok(svd);
    }

    let (m, n) = (a.rows, a.cols);
    // column-major working copies
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let eps = f64::EPSILON * m.max(1) as f64;
    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha: f64 = cols[p].iter().map(|x| x * x).sum();
                let beta: f64 = cols[q].iter().map(|x| x * x).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            sweeps: JACOBI_MAX_SWEEPS,
        });
    }

    let mut triplets: Vec<(f64, usize)> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| (c.iter().map(|x| x * x).sum::<f64>().sqrt(), j))
        .collect();
    triplets.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let smax = triplets.first().map_or(0.0, |t| t.0);
    let kept: Vec<(f64, usize)> = triplets
        .into_iter()
        .filter(|(s, _)| *s > 0.0 && *s > rank_tol * smax)
        .collect();

    let k = kept.len();
    let mut p = DenseMatrix::zeros(m, k);
    let mut q = DenseMatrix::zeros(n, k);
    let mut sigma = Vec::with_capacity(k);
    for (out, (s, j)) in kept.into_iter().enumerate() {
        sigma.push(s);
        for i in 0..m {
            p.set(i, out, cols[j][i] / s);
        }
        for i in 0..n {
            q.set(i, out, v[j][i]);
        }
    }
    let mut svd = Svd { p, sigma, q };
    fix_signs(&mut svd);
    Ok(svd)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

fn fix_signs(svd: &mut Svd) {
    for j in 0..svd.p.cols {
        let first = (0..svd.p.rows)
            .map(|i| svd.p.get(i, j))
            .find(|x| x.abs() > 1e-14);
        if matches!(first, Some(x) if x < 0.0) {
            for i in 0..svd.p.rows {
                let x = svd.p.get(i, j);
                svd.p.set(i, j, -x);
            }
            for i in 0..svd.q.rows {
                let x = svd.q.get(i, j);
                svd.q.set(i, j, -x);
            }
        }
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues ascending and the matching eigenvectors as columns.
pub fn symmetric_eigen(a: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    if a.rows != a.cols {
        return Err(mismatch("symmetric_eigen", "square", format!("{}x{}", a.rows, a.cols)));
    }
    let n = a.rows;
    let mut m = a.clone();
    let mut vecs = DenseMatrix::identity(n);
    let scale = a.frob_norm().max(f64::MIN_POSITIVE);
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m.get(k, p), m.get(k, q));
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let (mpk, mqk) = (m.get(p, k), m.get(q, k));
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (vecs.get(k, p), vecs.get(k, q));
                    vecs.set(k, p, c * vkp - s * vkq);
                    vecs.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            sweeps: JACOBI_MAX_SWEEPS,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(i, i).total_cmp(&m.get(j, j)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let sorted = DenseMatrix::from_fn(n, n, |i, j| vecs.get(i, order[j]));
    Ok((values, sorted))
}
