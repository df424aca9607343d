//! Dense row-major matrices and the operator norms consumed by every bound.
//!
//! Spectral norms come in two flavours. `NormMode::Fast` runs power iteration
//! and may under-approximate, which is acceptable for regularizer-style use.
//! `NormMode::Certified` diagonalizes the Gram matrix with cyclic Jacobi
//! rotations, takes a Gershgorin envelope of the rotated matrix and inflates
//! the square root by a relative margin so the result is a safe upper bound.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CertError, Result};

/// Relative inflation applied to certified spectral norms.
pub const CERTIFIED_MARGIN: f64 = 1e-9;
/// Off-diagonal tolerance (relative to the Frobenius norm) for the Jacobi solver.
pub const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 2000;

/// One of the three ℓ_p norms used throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormKind {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "inf")]
    Inf,
}

impl NormKind {
    /// Hölder conjugate: 1 ↔ ∞, 2 ↔ 2.
    pub fn dual(self) -> NormKind {
        match self {
            NormKind::One => NormKind::Inf,
            NormKind::Two => NormKind::Two,
            NormKind::Inf => NormKind::One,
        }
    }

    pub fn all() -> [NormKind; 3] {
        [NormKind::One, NormKind::Two, NormKind::Inf]
    }

    /// ‖v‖_p.
    pub fn vector_norm(self, v: &[f64]) -> f64 {
        match self {
            NormKind::One => v.iter().map(|x| x.abs()).sum(),
            NormKind::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            NormKind::Inf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::One => "1",
            NormKind::Two => "2",
            NormKind::Inf => "inf",
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormKind {
    type Err = CertError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "l1" | "one" => Ok(NormKind::One),
            "2" | "l2" | "two" => Ok(NormKind::Two),
            "inf" | "linf" | "infinity" | "∞" => Ok(NormKind::Inf),
            other => Err(CertError::InvalidInput(format!(
                "norm must be one of 1, 2, inf (got `{other}`)"
            ))),
        }
    }
}

/// How spectral norms are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Fast,
    Certified,
}

/// Dense real matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CertError::InvalidInput(format!(
                "matrix dimensions must be positive (got {rows}x{cols})"
            )));
        }
        if data.len() != rows * cols {
            return Err(CertError::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(CertError::NonFinite(format!(
                "matrix entry ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        if let Some(i) = rows.iter().position(|r| r.len() != n_cols) {
            return Err(CertError::DimensionMismatch(format!(
                "row {i} has {} entries, expected {n_cols}",
                rows[i].len()
            )));
        }
        Self::new(n_rows, n_cols, rows.concat())
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

    pub fn from_diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in d.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    /// A 1×n matrix holding `v`.
    pub fn row_vector(v: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
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

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(CertError::NonFinite(what.to_string()))
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(CertError::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(CertError::DimensionMismatch(format!(
                "{}x{} matrix applied to vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Aᵀx.
    pub fn tmatvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(CertError::DimensionMismatch(format!(
                "transpose of {}x{} matrix applied to vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, xi) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        Ok(out)
    }

    fn zip_with(&self, other: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> Result<DenseMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(CertError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    /// diag(d)·A.
    pub fn scale_rows(&self, d: &[f64]) -> Result<DenseMatrix> {
        if d.len() != self.rows {
            return Err(CertError::DimensionMismatch(format!(
                "row scaling of length {} for {} rows",
                d.len(),
                self.rows
            )));
        }
        let mut out = self.clone();
        for (i, s) in d.iter().enumerate() {
            for v in &mut out.data[i * self.cols..(i + 1) * self.cols] {
                *v *= s;
            }
        }
        Ok(out)
    }

    /// A·diag(d).
    pub fn scale_cols(&self, d: &[f64]) -> Result<DenseMatrix> {
        if d.len() != self.cols {
            return Err(CertError::DimensionMismatch(format!(
                "column scaling of length {} for {} columns",
                d.len(),
                self.cols
            )));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            for (v, s) in out.data[i * self.cols..(i + 1) * self.cols].iter_mut().zip(d) {
                *v *= s;
            }
        }
        Ok(out)
    }

    /// Column-major flattening, the `vec(·)` operator.
    pub fn vec_column_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.push(self.get(i, j));
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Smaller of AᵀA and AAᵀ.
    fn gram(&self) -> DenseMatrix {
        let (n, outer) = if self.cols <= self.rows {
            (self.cols, false)
        } else {
            (self.rows, true)
        };
        let mut g = DenseMatrix::zeros(n, n);
        if outer {
            for i in 0..n {
                for j in i..n {
                    let v: f64 = self.row(i).iter().zip(self.row(j)).map(|(a, b)| a * b).sum();
                    g.data[i * n + j] = v;
                    g.data[j * n + i] = v;
                }
            }
        } else {
            for r in 0..self.rows {
                let row = self.row(r);
                for i in 0..n {
                    let a = row[i];
                    if a == 0.0 {
                        continue;
                    }
                    for (gij, rj) in g.data[i * n + i..(i + 1) * n].iter_mut().zip(&row[i..]) {
                        *gij += a * rj;
                    }
                }
            }
            for i in 0..n {
                for j in 0..i {
                    g.data[i * n + j] = g.data[j * n + i];
                }
            }
        }
        g
    }
}

/// ‖A‖_p, the operator norm induced by ℓ_p on both sides.
pub fn operator_norm(a: &DenseMatrix, p: NormKind, mode: NormMode) -> Result<f64> {
    a.ensure_finite("operator_norm input")?;
    Ok(match p {
        NormKind::One => (0..a.cols)
            .map(|j| (0..a.rows).map(|i| a.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormKind::Inf => (0..a.rows)
            .map(|i| a.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormKind::Two => match mode {
            NormMode::Certified => certified_spectral_norm(a),
            NormMode::Fast => power_iteration_spectral_norm(a),
        },
    })
}

/// Shorthand for the certified operator norm.
pub fn norm(a: &DenseMatrix, p: NormKind) -> Result<f64> {
    operator_norm(a, p, NormMode::Certified)
}

/// ‖A‖_{p→∞}: the largest ℓ_{p*} norm of a row.
pub fn norm_p_to_inf(a: &DenseMatrix, p: NormKind) -> Result<f64> {
    a.ensure_finite("norm_p_to_inf input")?;
    let dual = p.dual();
    Ok((0..a.rows).map(|i| dual.vector_norm(a.row(i))).fold(0.0, f64::max))
}

/// ‖v‖_{p*}.
pub fn dual_vector_norm(v: &[f64], p: NormKind) -> f64 {
    p.dual().vector_norm(v)
}

/// A unit-ℓ_p vector δ with vᵀδ = ‖v‖_{p*}.
pub fn argmax_dual(v: &[f64], p: NormKind) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CertError::NonFinite("argmax_dual input".into()));
    }
    if v.iter().all(|x| *x == 0.0) {
        return Err(CertError::Degenerate(
            "argmax_dual of the zero vector is undefined".into(),
        ));
    }
    Ok(match p {
        NormKind::Two => {
            let n = NormKind::Two.vector_norm(v);
            v.iter().map(|x| x / n).collect()
        }
        NormKind::Inf => v
            .iter()
            .map(|x| {
                if *x > 0.0 {
                    1.0
                } else if *x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect(),
        NormKind::One => {
            let (idx, _) = v.iter().enumerate().fold(
                (0, -1.0),
                |(bi, bv), (i, x)| {
                    if x.abs() > bv {
                        (i, x.abs())
                    } else {
                        (bi, bv)
                    }
                },
            );
            let mut out = vec![0.0; v.len()];
            out[idx] = v[idx].signum();
            out
        }
    })
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns, per diagonal position of the final rotated matrix, the Gershgorin
/// upper envelope `a_ii + Σ_{j≠i} |a_ij|` together with the plain diagonal.
fn jacobi_eigen(mut m: DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows;
    let fro = m.frobenius_norm();
    if fro == 0.0 {
        return (vec![0.0; n], vec![0.0; n]);
    }
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * fro {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m.get(k, p);
                    let akq = m.get(k, q);
                    m.set(k, p, c * akp - s * akq);
                    m.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = m.get(p, k);
                    let aqk = m.get(q, k);
                    m.set(p, k, c * apk - s * aqk);
                    m.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    let diag: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    let envelope = (0..n)
        .map(|i| m.get(i, i) + (0..n).filter(|j| *j != i).map(|j| m.get(i, j).abs()).sum::<f64>())
        .collect();
    (envelope, diag)
}

/// Eigenvalues of a symmetric matrix (test and diagnostic use).
pub fn symmetric_eigenvalues(m: &DenseMatrix) -> Result<Vec<f64>> {
    if m.rows != m.cols {
        return Err(CertError::DimensionMismatch("eigenvalues need a square matrix".into()));
    }
    let (_, mut diag) = jacobi_eigen(m.clone());
    diag.sort_by(|a, b| a.total_cmp(b));
    Ok(diag)
}

fn certified_spectral_norm(a: &DenseMatrix) -> f64 {
    let (envelope, _) = jacobi_eigen(a.gram());
    let lambda = envelope.into_iter().fold(0.0, f64::max);
    lambda.sqrt() * (1.0 + CERTIFIED_MARGIN)
}

fn power_iteration_spectral_norm(a: &DenseMatrix) -> f64 {
    let n = a.cols;
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 1e-3 * i as f64).collect();
    let mut sigma = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let nv = NormKind::Two.vector_norm(&v);
        if nv == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        // dimensions agree by construction
        let av = a.matvec(&v).expect("shape");
        let next = NormKind::Two.vector_norm(&av);
        v = a.tmatvec(&av).expect("shape");
        if (next - sigma).abs() <= POWER_TOL * next.max(f64::MIN_POSITIVE) {
            return next;
        }
        sigma = next;
    }
    sigma
}
