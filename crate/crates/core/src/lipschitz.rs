//! Layer and cumulative Lipschitz bounds.
//!
//! Per layer: the naive bound `‖H‖ + β‖G‖‖W‖` and the loop-transformed bound
//! `‖H + ((α+β)/2) G W‖ + ((β−α)/2)‖G‖‖W‖`. Cumulatively: the product of layer
//! bounds, or the LipLT recursion obtained by unrolling the loop-transformed
//! network
//!
//! ```text
//! L_{k+1} = ‖Ĥ^k⋯Ĥ^0‖ + Σ_j ((β_j−α_j)/2) ‖Ĥ^k⋯Ĥ^{j+1} G^j‖ ‖W^j‖ L_j
//! ```
//!
//! Anchored variants replace β by per-neuron anchored constants at the actual
//! pre-activations and multiply layer bounds along the forward trace.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::activations::AnchorTarget;
use crate::error::{CertError, Result};
use crate::linalg::{norm, DenseMatrix, NormKind};
use crate::model::{ResidualBlock, SequentialNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LipschitzMethod {
    Naive,
    Lt,
    Liplt,
}

impl LipschitzMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            LipschitzMethod::Naive => "naive",
            LipschitzMethod::Lt => "lt",
            LipschitzMethod::Liplt => "liplt",
        }
    }
}

impl fmt::Display for LipschitzMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LipschitzMethod {
    type Err = CertError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(LipschitzMethod::Naive),
            "lt" => Ok(LipschitzMethod::Lt),
            "liplt" => Ok(LipschitzMethod::Liplt),
            other => Err(CertError::InvalidInput(format!(
                "lipschitz method must be naive, lt or liplt (got `{other}`)"
            ))),
        }
    }
}

/// Per-layer and cumulative Lipschitz constants of one network in one norm.
///
/// `cumulative[k]` bounds the prefix map `x^0 ↦ x^k`; `cumulative[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzSchedule {
    pub norm: NormKind,
    pub method: LipschitzMethod,
    pub layer: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub anchor: Option<Vec<f64>>,
}

impl LipschitzSchedule {
    /// Bound for the whole network.
    pub fn total(&self) -> f64 {
        *self.cumulative.last().expect("cumulative starts at 1")
    }
}

fn h_norm(block: &ResidualBlock, p: NormKind) -> Result<f64> {
    block.h.as_ref().map_or(Ok(0.0), |h| norm(h, p))
}

fn g_norm(block: &ResidualBlock, p: NormKind) -> Result<f64> {
    block.g.as_ref().map_or(Ok(1.0), |g| norm(g, p))
}

/// `‖H‖_p + β‖G‖_p‖W‖_p`; for an affine block, `‖H + GW‖_p`.
pub fn layer_lipschitz_naive(block: &ResidualBlock, p: NormKind) -> Result<f64> {
    match &block.activation {
        None => norm(&block.affine_weight()?, p),
        Some(act) => Ok(h_norm(block, p)? + act.lipschitz() * g_norm(block, p)? * norm(&block.w, p)?),
    }
}

/// `Ĥ = H + ((α+β)/2) G W`, and `(β−α)/2`; an affine block has `Ĥ = H + GW`, 0.
pub fn loop_transformed(block: &ResidualBlock) -> Result<(DenseMatrix, f64)> {
    match &block.activation {
        None => Ok((block.affine_weight()?, 0.0)),
        Some(act) => {
            let center = act.slope.midpoint();
            let gw = match &block.g {
                Some(g) => g.matmul(&block.w)?,
                None => block.w.clone(),
            };
            let mut hat = gw.scale(center);
            if let Some(h) = &block.h {
                hat = hat.add(h)?;
            }
            Ok((hat, 0.5 * act.slope.width()))
        }
    }
}

/// `‖H + ((α+β)/2) G W‖_p + ((β−α)/2)‖G‖_p‖W‖_p`.
pub fn layer_lipschitz_lt(block: &ResidualBlock, p: NormKind) -> Result<f64> {
    let (hat, radius) = loop_transformed(block)?;
    let spread = if radius == 0.0 {
        0.0
    } else {
        radius * g_norm(block, p)? * norm(&block.w, p)?
    };
    Ok(norm(&hat, p)? + spread)
}

/// Product of naive layer constants.
pub fn naive_schedule(net: &SequentialNetwork, p: NormKind) -> Result<LipschitzSchedule> {
    product_schedule(net, p, LipschitzMethod::Naive, layer_lipschitz_naive)
}

/// Product of loop-transformed layer constants.
pub fn lt_schedule(net: &SequentialNetwork, p: NormKind) -> Result<LipschitzSchedule> {
    product_schedule(net, p, LipschitzMethod::Lt, layer_lipschitz_lt)
}

fn product_schedule(
    net: &SequentialNetwork,
    p: NormKind,
    method: LipschitzMethod,
    layer_fn: fn(&ResidualBlock, NormKind) -> Result<f64>,
) -> Result<LipschitzSchedule> {
    let layer = net
        .blocks()
        .iter()
        .map(|b| layer_fn(b, p))
        .collect::<Result<Vec<_>>>()?;
    let cumulative = cumulative_product(&layer);
    Ok(LipschitzSchedule {
        norm: p,
        method,
        layer,
        cumulative,
        anchor: None,
    })
}

fn cumulative_product(layer: &[f64]) -> Vec<f64> {
    let mut cumulative = Vec::with_capacity(layer.len() + 1);
    cumulative.push(1.0);
    for l in layer {
        let prev = *cumulative.last().expect("non-empty");
        cumulative.push(prev * l);
    }
    cumulative
}

pub fn schedule(net: &SequentialNetwork, p: NormKind, method: LipschitzMethod) -> Result<LipschitzSchedule> {
    match method {
        LipschitzMethod::Naive => naive_schedule(net, p),
        LipschitzMethod::Lt => lt_schedule(net, p),
        LipschitzMethod::Liplt => liplt_schedule(net, p),
    }
}

/// LipLT cumulative constants in one norm.
pub fn liplt_schedule(net: &SequentialNetwork, p: NormKind) -> Result<LipschitzSchedule> {
    Ok(liplt_schedules(net, &[p])?.remove(0))
}

/// LipLT schedules for several norms sharing one pass over the cached
/// products `Ĥ^k⋯Ĥ^{j+1} G^j`.
pub fn liplt_schedules(net: &SequentialNetwork, norms: &[NormKind]) -> Result<Vec<LipschitzSchedule>> {
    let mut out: Vec<LipschitzSchedule> = norms
        .iter()
        .map(|&p| LipschitzSchedule {
            norm: p,
            method: LipschitzMethod::Liplt,
            layer: Vec::with_capacity(net.depth()),
            cumulative: vec![1.0],
            anchor: None,
        })
        .collect();

    let mut full: Option<DenseMatrix> = None;
    // (j, Ĥ^k⋯Ĥ^{j+1} G^j, (β_j−α_j)/2, ‖W^j‖ per norm); `None` is an identity G^j
    let mut tails: Vec<(usize, Option<DenseMatrix>, f64, Vec<f64>)> = Vec::new();

    for (k, block) in net.blocks().iter().enumerate() {
        let (hat, radius) = loop_transformed(block)?;
        full = Some(match full {
            None => hat.clone(),
            Some(prev) => hat.matmul(&prev)?,
        });
        for tail in tails.iter_mut() {
            tail.1 = Some(match &tail.1 {
                Some(prod) => hat.matmul(prod)?,
                None => hat.clone(),
            });
        }
        if radius > 0.0 {
            let w_norms = norms.iter().map(|&p| norm(&block.w, p)).collect::<Result<Vec<_>>>()?;
            tails.push((k, block.g.clone(), radius, w_norms));
        }

        let full_ref = full.as_ref().expect("set above");
        for (idx, sched) in out.iter_mut().enumerate() {
            let p = sched.norm;
            let mut next = norm(full_ref, p)?;
            for (j, prod, r, w_norms) in &tails {
                let prod_norm = prod.as_ref().map_or(Ok(1.0), |m| norm(m, p))?;
                next += r * prod_norm * w_norms[idx] * sched.cumulative[*j];
            }
            sched.layer.push(layer_lipschitz_lt(block, p)?);
            sched.cumulative.push(next);
        }
    }
    Ok(out)
}

/// Per-neuron anchored constants of φ at the block's pre-activations.
pub fn anchored_slopes(block: &ResidualBlock, x: &[f64]) -> Result<Option<Vec<f64>>> {
    match &block.activation {
        None => Ok(None),
        Some(act) => block
            .pre_activation(x)?
            .iter()
            .map(|z| act.anchored(AnchorTarget::Phi, *z))
            .collect::<Result<Vec<_>>>()
            .map(Some),
    }
}

/// `‖H‖_p + ‖G‖_p ‖diag(L_Φ(Wx + b)) W‖_p` at the anchor `x`, never above
/// the global naive bound.
pub fn anchored_layer_lipschitz(block: &ResidualBlock, p: NormKind, x: &[f64]) -> Result<f64> {
    let naive = layer_lipschitz_naive(block, p)?;
    match anchored_slopes(block, x)? {
        None => Ok(naive),
        Some(slopes) => {
            let local = h_norm(block, p)? + g_norm(block, p)? * norm(&block.w.scale_rows(&slopes)?, p)?;
            Ok(local.min(naive))
        }
    }
}

/// Products of anchored layer bounds along the forward trace from `x0`,
/// each prefix capped by its LipLT bound.
pub fn anchored_schedule(net: &SequentialNetwork, p: NormKind, x0: &[f64]) -> Result<LipschitzSchedule> {
    anchored_schedule_with(net, x0, &liplt_schedule(net, p)?)
}

/// As [`anchored_schedule`], capping by a precomputed global schedule
/// (whose norm is used).
pub fn anchored_schedule_with(
    net: &SequentialNetwork,
    x0: &[f64],
    global: &LipschitzSchedule,
) -> Result<LipschitzSchedule> {
    if global.cumulative.len() != net.depth() + 1 {
        return Err(CertError::InvalidInput(
            "global schedule does not match the network".into(),
        ));
    }
    let p = global.norm;
    let trace = net.forward(x0)?;
    let layer = net
        .blocks()
        .iter()
        .zip(&trace)
        .map(|(b, xk)| anchored_layer_lipschitz(b, p, xk))
        .collect::<Result<Vec<_>>>()?;
    let mut cumulative = Vec::with_capacity(layer.len() + 1);
    cumulative.push(1.0);
    for (k, l) in layer.iter().enumerate() {
        cumulative.push((l * cumulative[k]).min(global.cumulative[k + 1]));
    }
    Ok(LipschitzSchedule {
        norm: p,
        method: LipschitzMethod::Naive,
        cumulative,
        layer,
        anchor: Some(x0.to_vec()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::builtin;
    use approx::assert_relative_eq;

    fn tanh_block(w: DenseMatrix) -> ResidualBlock {
        ResidualBlock::feedforward(w, builtin("tanh").unwrap()).unwrap()
    }

    #[test]
    fn naive_examples() {
        let b = tanh_block(DenseMatrix::identity(3).scale(2.0));
        assert_relative_eq!(
            layer_lipschitz_naive(&b, NormKind::Two).unwrap(),
            2.0,
            max_relative = 1e-8
        );
        let skip = ResidualBlock::new(
            Some(DenseMatrix::identity(2)),
            Some(DenseMatrix::zeros(2, 2)),
            DenseMatrix::identity(2),
            None,
            Some(builtin("tanh").unwrap()),
        )
        .unwrap();
        assert_relative_eq!(
            layer_lipschitz_naive(&skip, NormKind::Two).unwrap(),
            1.0,
            max_relative = 1e-8
        );
    }

    #[test]
    fn lt_example_and_ordering() {
        let b = tanh_block(DenseMatrix::identity(3));
        let lt = layer_lipschitz_lt(&b, NormKind::Two).unwrap();
        assert_relative_eq!(lt, 1.0, max_relative = 1e-8);
        assert!(lt <= layer_lipschitz_naive(&b, NormKind::Two).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn single_block_liplt_equals_lt() {
        let w = DenseMatrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.3]]).unwrap();
        let net = SequentialNetwork::new(vec![tanh_block(w)], "one", 2).unwrap();
        for p in NormKind::all() {
            let s = liplt_schedule(&net, p).unwrap();
            assert_eq!(s.cumulative[0], 1.0);
            assert_relative_eq!(
                s.total(),
                layer_lipschitz_lt(&net.blocks()[0], p).unwrap(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn linear_net_liplt_is_product_norm() {
        let w0 = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0]]).unwrap();
        let w1 = DenseMatrix::from_rows(&[vec![1.0, -1.0], vec![0.0, 4.0]]).unwrap();
        let net = SequentialNetwork::new(
            vec![
                ResidualBlock::affine(w0.clone(), None).unwrap(),
                ResidualBlock::affine(w1.clone(), None).unwrap(),
            ],
            "lin",
            2,
        )
        .unwrap();
        for p in NormKind::all() {
            let s = liplt_schedule(&net, p).unwrap();
            assert_eq!(s.total(), norm(&w1.matmul(&w0).unwrap(), p).unwrap());
        }
    }

    #[test]
    fn anchored_at_zero_pre_activation_is_global() {
        let b = tanh_block(DenseMatrix::identity(3));
        let a = anchored_layer_lipschitz(&b, NormKind::Two, &[0.0; 3]).unwrap();
        assert_eq!(a, layer_lipschitz_naive(&b, NormKind::Two).unwrap());
    }

    #[test]
    fn anchored_at_two_uses_figure_constant() {
        let b = tanh_block(DenseMatrix::identity(3));
        let a = anchored_layer_lipschitz(&b, NormKind::Two, &[2.0, 2.0, 2.0]).unwrap();
        assert!(a <= 0.582 * (1.0 + 1e-8), "{a}");
    }

    #[test]
    fn method_parsing() {
        assert_eq!("liplt".parse::<LipschitzMethod>().unwrap(), LipschitzMethod::Liplt);
        assert!("sdp".parse::<LipschitzMethod>().is_err());
    }
}
