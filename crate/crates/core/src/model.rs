//! Sequential residual networks `x^{k+1} = H^k x^k + G^k Φ(W^k x^k + b^k)`.
//!
//! A block without an activation is affine: `H x + G (W x + b)`. An absent `H`
//! is the zero matrix and an absent `G` is the identity, so `H = 0, G = I`
//! recovers a plain feedforward layer.

use crate::activations::ActivationSpec;
use crate::error::{CertError, Result};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub h: Option<DenseMatrix>,
    pub g: Option<DenseMatrix>,
    pub w: DenseMatrix,
    pub bias: Option<Vec<f64>>,
    pub activation: Option<ActivationSpec>,
}

impl ResidualBlock {
    pub fn new(
        h: Option<DenseMatrix>,
        g: Option<DenseMatrix>,
        w: DenseMatrix,
        bias: Option<Vec<f64>>,
        activation: Option<ActivationSpec>,
    ) -> Result<Self> {
        let block = Self {
            h,
            g,
            w,
            bias,
            activation,
        };
        block.validate()?;
        Ok(block)
    }

    /// `Φ(W x)` with `H = 0`, `G = I`.
    pub fn feedforward(w: DenseMatrix, activation: ActivationSpec) -> Result<Self> {
        Self::new(None, None, w, None, Some(activation))
    }

    /// `W x + b`.
    pub fn affine(w: DenseMatrix, bias: Option<Vec<f64>>) -> Result<Self> {
        Self::new(None, None, w, bias, None)
    }

    fn validate(&self) -> Result<()> {
        let (hidden, n_in) = (self.w.rows(), self.w.cols());
        let n_out = self.out_dim();
        if let Some(g) = &self.g {
            if g.cols() != hidden {
                return Err(CertError::DimensionMismatch(format!(
                    "G has {} columns but W has {} rows",
                    g.cols(),
                    hidden
                )));
            }
        }
        if let Some(h) = &self.h {
            if h.cols() != n_in || h.rows() != n_out {
                return Err(CertError::DimensionMismatch(format!(
                    "H is {}x{} but the block maps {} -> {}",
                    h.rows(),
                    h.cols(),
                    n_in,
                    n_out
                )));
            }
        }
        if let Some(b) = &self.bias {
            if b.len() != hidden {
                return Err(CertError::DimensionMismatch(format!(
                    "bias has length {} but W has {} rows",
                    b.len(),
                    hidden
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(CertError::NonFinite("bias".into()));
            }
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.g.as_ref().map_or(self.w.rows(), |g| g.rows())
    }

    pub fn is_affine(&self) -> bool {
        self.activation.is_none()
    }

    /// True unless `H = 0` and `G = I`.
    pub fn is_residual(&self) -> bool {
        let h_zero = self.h.as_ref().is_none_or(|h| h.data().iter().all(|v| *v == 0.0));
        let g_identity = self
            .g
            .as_ref()
            .is_none_or(|g| g.rows() == g.cols() && *g == DenseMatrix::identity(g.rows()));
        !(h_zero && g_identity)
    }

    pub fn h_dense(&self) -> DenseMatrix {
        self.h
            .clone()
            .unwrap_or_else(|| DenseMatrix::zeros(self.out_dim(), self.in_dim()))
    }

    pub fn g_dense(&self) -> DenseMatrix {
        self.g
            .clone()
            .unwrap_or_else(|| DenseMatrix::identity(self.hidden_dim()))
    }

    /// `W x + b`.
    pub fn pre_activation(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.w.matvec(x)?;
        if let Some(b) = &self.bias {
            z.iter_mut().zip(b).for_each(|(zi, bi)| *zi += bi);
        }
        Ok(z)
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.pre_activation(x)?;
        let phi: Vec<f64> = match &self.activation {
            Some(act) => z.iter().map(|v| act.eval(*v)).collect(),
            None => z,
        };
        let mut out = match &self.g {
            Some(g) => g.matvec(&phi)?,
            None => phi,
        };
        if let Some(h) = &self.h {
            out.iter_mut().zip(h.matvec(x)?).for_each(|(o, hx)| *o += hx);
        }
        Ok(out)
    }

    /// `H + G diag(Φ′(W x + b)) W`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DenseMatrix> {
        let inner = match &self.activation {
            Some(act) => {
                let d: Vec<f64> = self.pre_activation(x)?.iter().map(|z| act.deriv(*z)).collect();
                self.w.scale_rows(&d)?
            }
            None => self.w.clone(),
        };
        let mut jac = match &self.g {
            Some(g) => g.matmul(&inner)?,
            None => inner,
        };
        if let Some(h) = &self.h {
            jac = jac.add(h)?;
        }
        Ok(jac)
    }

    /// The linear part `H + G W` of an affine block.
    pub fn affine_weight(&self) -> Result<DenseMatrix> {
        let gw = match &self.g {
            Some(g) => g.matmul(&self.w)?,
            None => self.w.clone(),
        };
        match &self.h {
            Some(h) => gw.add(h),
            None => Ok(gw),
        }
    }
}

/// Factors `(b, A)` with `vec(Dh(x)) = b + A Φ′(W x + bias)` (column-major vec).
///
/// Row `m = j·n_out + i` of the flattening holds entry `(i, j)` of the
/// Jacobian, so `b_m = H_ij` and `A_ml = G_il W_lj`.
pub fn vectorized_jacobian_factors(block: &ResidualBlock) -> Result<(Vec<f64>, DenseMatrix)> {
    if block.is_affine() {
        return Err(CertError::NotApplicable(
            "vectorized Jacobian needs a block with an activation".into(),
        ));
    }
    let (n_out, n_in, hidden) = (block.out_dim(), block.in_dim(), block.hidden_dim());
    let b = block.h_dense().vec_column_major();
    let g = block.g_dense();
    let mut a = DenseMatrix::zeros(n_out * n_in, hidden);
    for j in 0..n_in {
        for i in 0..n_out {
            let m = j * n_out + i;
            for l in 0..hidden {
                a.set(m, l, g.get(i, l) * block.w.get(l, j));
            }
        }
    }
    Ok((b, a))
}

/// Ordered residual blocks mapping `x^0` to the logits `x^K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialNetwork {
    blocks: Vec<ResidualBlock>,
    pub name: String,
    pub n_classes: usize,
}

impl SequentialNetwork {
    pub fn new(blocks: Vec<ResidualBlock>, name: impl Into<String>, n_classes: usize) -> Result<Self> {
        if blocks.is_empty() {
            return Err(CertError::InvalidInput("network has no blocks".into()));
        }
        for (k, pair) in blocks.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(CertError::DimensionMismatch(format!(
                    "block {k} outputs {} values but block {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self {
            blocks,
            name: name.into(),
            n_classes,
        })
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn input_dim(&self) -> usize {
        self.blocks[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.blocks[self.blocks.len() - 1].out_dim()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(CertError::DimensionMismatch(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CertError::NonFinite("network input".into()));
        }
        Ok(())
    }

    /// All intermediate states `x^0, …, x^K`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut trace = Vec::with_capacity(self.blocks.len() + 1);
        trace.push(x.to_vec());
        for block in &self.blocks {
            let next = block.apply(trace.last().expect("non-empty"))?;
            trace.push(next);
        }
        Ok(trace)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.pop().expect("non-empty"))
    }

    /// Index of the largest logit (first one on ties).
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    /// End-to-end Jacobian `Df(x)` by the chain rule along the forward trace.
    pub fn jacobian(&self, x: &[f64]) -> Result<DenseMatrix> {
        let trace = self.forward(x)?;
        let mut jac = self.blocks[0].jacobian(&trace[0])?;
        for (block, xk) in self.blocks.iter().zip(&trace).skip(1) {
            jac = block.jacobian(xk)?.matmul(&jac)?;
        }
        Ok(jac)
    }

    /// Jacobians of every prefix map `x^0 ↦ x^k` for k = 0..K (the first is I).
    pub fn prefix_jacobians(&self, x: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<DenseMatrix>)> {
        let trace = self.forward(x)?;
        let mut jacs = Vec::with_capacity(self.blocks.len() + 1);
        jacs.push(DenseMatrix::identity(self.input_dim()));
        for (block, xk) in self.blocks.iter().zip(&trace) {
            let next = block.jacobian(xk)?.matmul(jacs.last().expect("non-empty"))?;
            jacs.push(next);
        }
        Ok((trace, jacs))
    }

    /// `(f_i(x) − f_y(x), ∇(f_i − f_y)(x))`.
    pub fn logit_gap_and_gradient(&self, x: &[f64], pair: LogitPair) -> Result<(f64, Vec<f64>)> {
        pair.check(self.output_dim())?;
        let logits = self.logits(x)?;
        let gap = logits[pair.i] - logits[pair.y];
        let jac = self.jacobian(x)?;
        let grad = jac.tmatvec(&pair.reduction(self.output_dim()))?;
        Ok((gap, grad))
    }

    /// The scalar network `x ↦ f_i(x) − f_y(x)`.
    ///
    /// A trailing affine block absorbs the reduction row; otherwise a 1-output
    /// affine block is appended.
    pub fn compose_scalar_head(&self, pair: LogitPair) -> Result<SequentialNetwork> {
        let n = self.output_dim();
        pair.check(n)?;
        let c = DenseMatrix::row_vector(&pair.reduction(n));
        let mut blocks = self.blocks.clone();
        let last = blocks.pop().expect("non-empty");
        if last.is_affine() {
            let merged = match (&last.h, &last.g) {
                (None, None) => {
                    let w = c.matmul(&last.w)?;
                    let bias = match &last.bias {
                        Some(b) => Some(vec![c.matvec(b)?[0]]),
                        None => None,
                    };
                    ResidualBlock::new(None, None, w, bias, None)?
                }
                (h, g) => {
                    let h = match h {
                        Some(h) => Some(c.matmul(h)?),
                        None => None,
                    };
                    let g = match g {
                        Some(g) => c.matmul(g)?,
                        None => c.clone(),
                    };
                    ResidualBlock::new(h, Some(g), last.w.clone(), last.bias.clone(), None)?
                }
            };
            blocks.push(merged);
        } else {
            blocks.push(last);
            blocks.push(ResidualBlock::affine(c, None)?);
        }
        SequentialNetwork::new(blocks, format!("{}[{}-{}]", self.name, pair.i, pair.y), 1)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, x)| {
                if *x > bv {
                    (i, *x)
                } else {
                    (bi, bv)
                }
            },
        )
        .0
}

/// The logit difference `f_i − f_y`, reduced by `c = e_i − e_y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogitPair {
    pub i: usize,
    pub y: usize,
}

impl LogitPair {
    pub fn new(i: usize, y: usize) -> Result<Self> {
        if i == y {
            return Err(CertError::InvalidInput(format!(
                "logit pair needs distinct classes (got {i} and {y})"
            )));
        }
        Ok(Self { i, y })
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.i == self.y {
            return Err(CertError::InvalidInput("logit pair needs distinct classes".into()));
        }
        if self.i >= n || self.y >= n {
            return Err(CertError::InvalidInput(format!(
                "class pair ({}, {}) out of range for {n} outputs",
                self.i, self.y
            )));
        }
        Ok(())
    }

    pub fn reduction(&self, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; n];
        c[self.i] = 1.0;
        c[self.y] = -1.0;
        c
    }

    /// The reversed pair `f_y − f_i`.
    pub fn flipped(&self) -> Self {
        Self { i: self.y, y: self.i }
    }
}
