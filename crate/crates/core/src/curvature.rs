//! Jacobian-Lipschitz (curvature) bounds for residual blocks and their
//! composition along a sequential network.
//!
//! A curvature constant is measured in a pair of norms `(p, q)`:
//! `‖Df(x) − Df(y)‖_q ≤ L ‖x − y‖_p`, where the matrix norm is the operator
//! norm induced by ℓ_q. The usual pairing is `q = p*`. For a scalar-valued
//! map the induced `p` norm of the 1×n Jacobian is the dual norm of the
//! gradient, so certificates request `q = p` (see [`CurvatureNorms::gradient`]).
//!
//! The compositional recursion, starting from `L_{D_0} = 0` and `L_0 = 1`:
//!
//! ```text
//! L_{D_{k+1}} = L_{Dh^k} · L^p_k · L^q_k + L^q_{h^k} · L_{D_k}
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::activations::AnchorTarget;
use crate::error::{CertError, Result};
use crate::linalg::{norm, norm_p_to_inf, NormKind};
use crate::lipschitz::{anchored_schedule_with, layer_lipschitz_lt, liplt_schedules, LipschitzSchedule};
use crate::model::{vectorized_jacobian_factors, ResidualBlock, SequentialNetwork};

/// Input and output norms of a curvature constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurvatureNorms {
    pub input: NormKind,
    pub output: NormKind,
}

impl CurvatureNorms {
    /// `(p, p*)`.
    pub fn dual(p: NormKind) -> Self {
        Self {
            input: p,
            output: p.dual(),
        }
    }

    /// `(p, p)`: for scalar maps this bounds `‖∇f(x) − ∇f(y)‖_{p*}`.
    pub fn gradient(p: NormKind) -> Self {
        Self { input: p, output: p }
    }

    pub fn is_spectral(&self) -> bool {
        self.input == NormKind::Two && self.output == NormKind::Two
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerCurvatureMethod {
    Naive,
    Vectorized,
    Sdp,
    /// Per block, the smallest bound among the methods that apply.
    Tightest,
}

impl LayerCurvatureMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerCurvatureMethod::Naive => "naive",
            LayerCurvatureMethod::Vectorized => "vectorized",
            LayerCurvatureMethod::Sdp => "sdp",
            LayerCurvatureMethod::Tightest => "tightest",
        }
    }
}

impl fmt::Display for LayerCurvatureMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerCurvatureMethod {
    type Err = CertError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(LayerCurvatureMethod::Naive),
            "vectorized" => Ok(LayerCurvatureMethod::Vectorized),
            "sdp" => Ok(LayerCurvatureMethod::Sdp),
            "tightest" => Ok(LayerCurvatureMethod::Tightest),
            other => Err(CertError::InvalidInput(format!(
                "layer method must be naive, vectorized, sdp or tightest (got `{other}`)"
            ))),
        }
    }
}

/// Layer and cumulative curvature bounds for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureReport {
    pub norms: CurvatureNorms,
    pub layer_method: LayerCurvatureMethod,
    /// `L_{Dh^k}` per block.
    pub layer: Vec<f64>,
    /// `L^q_{h^k}` per block.
    pub layer_lipschitz_out: Vec<f64>,
    /// `L_{D_k}` for k = 0..K.
    pub cumulative: Vec<f64>,
    pub schedule_in: LipschitzSchedule,
    pub schedule_out: LipschitzSchedule,
    pub anchor: Option<Vec<f64>>,
}

impl CurvatureReport {
    pub fn total(&self) -> f64 {
        *self.cumulative.last().expect("cumulative starts at 0")
    }
}

fn g_norm(block: &ResidualBlock, p: NormKind) -> Result<f64> {
    block.g.as_ref().map_or(Ok(1.0), |g| norm(g, p))
}

fn require_spectral(norms: CurvatureNorms, what: &str) -> Result<()> {
    if norms.is_spectral() {
        Ok(())
    } else {
        Err(CertError::UnsupportedNorm(format!(
            "{what} is only defined for p = q = 2 (got p = {}, q = {})",
            norms.input, norms.output
        )))
    }
}

/// `L_φ′ ‖G‖_{p*} ‖W‖_{p*} ‖W‖_{p→∞}`; zero for an affine block.
pub fn layer_curvature_naive(block: &ResidualBlock, p: NormKind) -> Result<f64> {
    layer_curvature_naive_in(block, CurvatureNorms::dual(p))
}

/// `L_φ′ ‖G‖_q ‖W‖_q ‖W‖_{p→∞}` for arbitrary `(p, q)`.
pub fn layer_curvature_naive_in(block: &ResidualBlock, norms: CurvatureNorms) -> Result<f64> {
    match &block.activation {
        None => Ok(0.0),
        Some(act) => Ok(act.deriv_lipschitz()
            * g_norm(block, norms.output)?
            * norm(&block.w, norms.output)?
            * norm_p_to_inf(&block.w, norms.input)?),
    }
}

/// `L_φ′ ‖A‖₂ ‖W‖₂` with `A` the vectorized Jacobian factor, capped by the
/// naive bound so that certification margins cannot reverse the ordering.
pub fn layer_curvature_vectorized(block: &ResidualBlock) -> Result<f64> {
    match &block.activation {
        None => Ok(0.0),
        Some(act) => {
            let (_, a) = vectorized_jacobian_factors(block)?;
            let v = act.deriv_lipschitz() * norm(&a, NormKind::Two)? * norm(&block.w, NormKind::Two)?;
            Ok(v.min(layer_curvature_naive_in(
                block,
                CurvatureNorms::gradient(NormKind::Two),
            )?))
        }
    }
}

fn row_norms(block: &ResidualBlock) -> Vec<f64> {
    (0..block.w.rows())
        .map(|i| NormKind::Two.vector_norm(block.w.row(i)))
        .collect()
}

fn require_plain(block: &ResidualBlock, what: &str) -> Result<()> {
    if block.is_residual() {
        Err(CertError::NotApplicable(format!(
            "{what} needs a non-residual block (H = 0, G = I)"
        )))
    } else {
        Ok(())
    }
}

/// `L_φ′ ‖T W‖₂` with `T = diag(‖W_{i,:}‖₂)`; non-residual blocks only.
/// Capped by the vectorized bound.
pub fn layer_curvature_sdp(block: &ResidualBlock) -> Result<f64> {
    match &block.activation {
        None => Ok(0.0),
        Some(act) => {
            require_plain(block, "the analytic SDP bound")?;
            let tw = block.w.scale_rows(&row_norms(block))?;
            let v = act.deriv_lipschitz() * norm(&tw, NormKind::Two)?;
            Ok(v.min(layer_curvature_vectorized(block)?))
        }
    }
}

/// `‖D T W‖₂` with `D_ii` the anchored constant of φ′ at the pre-activation
/// `z_i`; non-residual blocks only, never above the global SDP bound.
pub fn anchored_layer_curvature(block: &ResidualBlock, z: &[f64]) -> Result<f64> {
    let act = match &block.activation {
        None => return Ok(0.0),
        Some(act) => act,
    };
    require_plain(block, "the anchored SDP bound")?;
    if z.len() != block.hidden_dim() {
        return Err(CertError::DimensionMismatch(format!(
            "{} pre-activations for a block with {} neurons",
            z.len(),
            block.hidden_dim()
        )));
    }
    let scale = z
        .iter()
        .zip(row_norms(block))
        .map(|(zi, t)| Ok(act.anchored(AnchorTarget::DPhi, *zi)? * t))
        .collect::<Result<Vec<_>>>()?;
    let local = norm(&block.w.scale_rows(&scale)?, NormKind::Two)?;
    Ok(local.min(layer_curvature_sdp(block)?))
}

/// Anchored form of the naive bound, valid for residual blocks and any
/// `(p, q)`: `‖G‖_q ‖W‖_q ‖diag(L_Φ′(z)) W‖_{p→∞}`. `H` drops out of the
/// Jacobian difference.
pub fn anchored_layer_curvature_naive(block: &ResidualBlock, norms: CurvatureNorms, z: &[f64]) -> Result<f64> {
    let act = match &block.activation {
        None => return Ok(0.0),
        Some(act) => act,
    };
    let slopes = z
        .iter()
        .map(|zi| act.anchored(AnchorTarget::DPhi, *zi))
        .collect::<Result<Vec<_>>>()?;
    let local = g_norm(block, norms.output)?
        * norm(&block.w, norms.output)?
        * norm_p_to_inf(&block.w.scale_rows(&slopes)?, norms.input)?;
    Ok(local.min(layer_curvature_naive_in(block, norms)?))
}

/// Layer bound for one block under the requested method.
pub fn layer_curvature(block: &ResidualBlock, norms: CurvatureNorms, method: LayerCurvatureMethod) -> Result<f64> {
    match method {
        LayerCurvatureMethod::Naive => layer_curvature_naive_in(block, norms),
        LayerCurvatureMethod::Vectorized => {
            require_spectral(norms, "the vectorized bound")?;
            layer_curvature_vectorized(block)
        }
        LayerCurvatureMethod::Sdp => {
            require_spectral(norms, "the analytic SDP bound")?;
            layer_curvature_sdp(block)
        }
        LayerCurvatureMethod::Tightest => {
            let mut best = layer_curvature_naive_in(block, norms)?;
            if norms.is_spectral() {
                best = best.min(layer_curvature_vectorized(block)?);
                if !block.is_residual() {
                    best = best.min(layer_curvature_sdp(block)?);
                }
            }
            Ok(best)
        }
    }
}

/// Compositional curvature bound of the whole network, using the given
/// Lipschitz schedules in `p` and `q` for the prefix maps.
pub fn compositional_curvature(
    net: &SequentialNetwork,
    norms: CurvatureNorms,
    method: LayerCurvatureMethod,
    schedule_in: &LipschitzSchedule,
    schedule_out: &LipschitzSchedule,
) -> Result<CurvatureReport> {
    let depth = net.depth();
    for (sched, want, label) in [
        (schedule_in, norms.input, "input"),
        (schedule_out, norms.output, "output"),
    ] {
        if sched.cumulative.len() != depth + 1 || sched.norm != want {
            return Err(CertError::InvalidInput(format!(
                "{label} schedule does not match the network (norm {}, {} entries for depth {depth})",
                sched.norm,
                sched.cumulative.len()
            )));
        }
    }
    let mut layer = Vec::with_capacity(depth);
    let mut layer_lipschitz_out = Vec::with_capacity(depth);
    let mut cumulative = Vec::with_capacity(depth + 1);
    cumulative.push(0.0);
    for (k, block) in net.blocks().iter().enumerate() {
        let lip_out = layer_lipschitz_lt(block, norms.output)?;
        let curv = layer_curvature(block, norms, method)?;
        let prev = cumulative[k];
        cumulative.push(curv * schedule_in.cumulative[k] * schedule_out.cumulative[k] + lip_out * prev);
        layer.push(curv);
        layer_lipschitz_out.push(lip_out);
    }
    Ok(CurvatureReport {
        norms,
        layer_method: method,
        layer,
        layer_lipschitz_out,
        cumulative,
        schedule_in: schedule_in.clone(),
        schedule_out: schedule_out.clone(),
        anchor: None,
    })
}

/// Algorithm entry point: LipLT schedules in `p` and `q`, then the recursion.
pub fn network_curvature(
    net: &SequentialNetwork,
    norms: CurvatureNorms,
    method: LayerCurvatureMethod,
) -> Result<CurvatureReport> {
    let mut scheds = liplt_schedules(net, &[norms.input, norms.output])?;
    let schedule_out = scheds.pop().expect("two schedules");
    let schedule_in = scheds.pop().expect("two schedules");
    compositional_curvature(net, norms, method, &schedule_in, &schedule_out)
}

/// Anchored curvature at `x0`, with `g` the prefix `x^0 ↦ x^k` and `f = h^k`:
///
/// ```text
/// L_{D_{k+1}}(x) ≤ L^q_{h^k} L_{D_k}(x) + ‖D_k(x)‖_q L_{Dh^k}(x^k) L^p_k(x)
/// ```
///
/// Each cumulative entry is capped by the global bound of the same prefix.
pub fn anchored_compositional_curvature(
    net: &SequentialNetwork,
    norms: CurvatureNorms,
    x0: &[f64],
) -> Result<CurvatureReport> {
    let global = network_curvature(net, norms, LayerCurvatureMethod::Tightest)?;
    anchored_compositional_curvature_with(net, &global, x0)
}

/// As [`anchored_compositional_curvature`], reusing a precomputed global
/// report (any layer method) for the caps and the `L^q_{h^k}` factors.
pub fn anchored_compositional_curvature_with(
    net: &SequentialNetwork,
    global: &CurvatureReport,
    x0: &[f64],
) -> Result<CurvatureReport> {
    let norms = global.norms;
    if global.layer.len() != net.depth() {
        return Err(CertError::InvalidInput(
            "global curvature report does not match the network".into(),
        ));
    }
    let (trace, prefix_jacs) = net.prefix_jacobians(x0)?;
    let anchored_lip = anchored_schedule_with(net, x0, &global.schedule_in)?;

    let mut layer = Vec::with_capacity(net.depth());
    let mut cumulative = Vec::with_capacity(net.depth() + 1);
    cumulative.push(0.0);
    for (k, block) in net.blocks().iter().enumerate() {
        let curv = if block.is_affine() {
            0.0
        } else {
            let z = block.pre_activation(&trace[k])?;
            let local = if norms.is_spectral() && !block.is_residual() {
                anchored_layer_curvature(block, &z)?
            } else {
                anchored_layer_curvature_naive(block, norms, &z)?
            };
            local.min(global.layer[k])
        };
        let jac_norm = norm(&prefix_jacs[k], norms.output)?.min(global.schedule_out.cumulative[k]);
        let lip_in = anchored_lip.cumulative[k].min(global.schedule_in.cumulative[k]);
        let next = global.layer_lipschitz_out[k] * cumulative[k] + jac_norm * curv * lip_in;
        cumulative.push(next.min(global.cumulative[k + 1]));
        layer.push(curv);
    }
    Ok(CurvatureReport {
        norms,
        layer_method: LayerCurvatureMethod::Tightest,
        layer,
        layer_lipschitz_out: global.layer_lipschitz_out.clone(),
        cumulative,
        schedule_in: anchored_lip,
        schedule_out: global.schedule_out.clone(),
        anchor: Some(x0.to_vec()),
    })
}

/// Curvature of a stack of 1-Lipschitz layers: the sum of layer bounds.
pub fn one_lipschitz_stack_curvature(layer_bounds: &[f64]) -> f64 {
    layer_bounds.iter().sum()
}
