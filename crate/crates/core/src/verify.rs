//! Dominance suite: every bound against its sampled lower bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curvature::{
    anchored_compositional_curvature, layer_curvature, network_curvature, CurvatureNorms, LayerCurvatureMethod,
};
use crate::error::{CertError, Result};
use crate::linalg::NormKind;
use crate::lipschitz::{anchored_schedule, layer_lipschitz_lt, layer_lipschitz_naive, schedule, LipschitzMethod};
use crate::model::SequentialNetwork;
use crate::oracle::{
    sampled_jacobian_lipschitz_lower_bounds, sampled_lipschitz_lower_bounds, QuotientSample, SamplingPlan,
};

/// Relative slack for floating-point rounding in the sampled quotients.
pub const DOMINANCE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub pairs: usize,
    pub norms: Vec<NormKind>,
    /// Inputs are sampled in `[−half_width, half_width]^n`.
    pub half_width: f64,
    /// Anchors for the anchored checks.
    pub anchors: usize,
    /// Multiplies every bound before comparison; 1 leaves them intact.
    pub corrupt: f64,
}

impl VerifyOptions {
    pub fn new(seed: u64, pairs: usize, norms: Vec<NormKind>) -> Self {
        Self {
            seed,
            pairs,
            norms,
            half_width: 2.0,
            anchors: 2,
            corrupt: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub quantity: String,
    pub bound: f64,
    pub sampled: f64,
    /// `sampled / bound`, the tightness of the bound.
    pub ratio: f64,
    pub pass: bool,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub model_name: String,
    pub seed: u64,
    pub pairs: usize,
    pub checks: Vec<Check>,
    pub violations: usize,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn check(quantity: String, bound: f64, sample: QuotientSample, corrupt: f64) -> Check {
    let bound = bound * corrupt;
    let ratio = if bound > 0.0 {
        sample.value / bound
    } else if sample.value > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Check {
        quantity,
        bound,
        sampled: sample.value,
        ratio,
        pass: sample.value <= bound * (1.0 + DOMINANCE_SLACK),
        x: sample.x,
        y: sample.y,
    }
}

fn plan(opts: &VerifyOptions, dim: usize, salt: u64) -> SamplingPlan {
    SamplingPlan::cube(
        opts.seed.wrapping_mul(0x9e37_79b9).wrapping_add(salt),
        opts.pairs,
        dim,
        opts.half_width,
        opts.norms[0],
    )
}

/// The usual `(p, p*)` pairing and the `(p, p)` pairing used by certificates.
fn curvature_norm_pairs(p: NormKind) -> [CurvatureNorms; 2] {
    [CurvatureNorms::dual(p), CurvatureNorms::gradient(p)]
}

fn label(n: CurvatureNorms) -> String {
    format!("({},{})", n.input, n.output)
}

/// Runs the full suite on one network.
pub fn run_verify(net: &SequentialNetwork, opts: &VerifyOptions) -> Result<VerifyReport> {
    if opts.norms.is_empty() {
        return Err(CertError::InvalidInput("verify needs at least one norm".into()));
    }
    if opts.pairs == 0 {
        return Err(CertError::InvalidInput("verify needs at least one pair".into()));
    }
    let mut checks = Vec::new();
    let mut all_norms: Vec<CurvatureNorms> = Vec::new();
    for n in opts.norms.iter().flat_map(|p| curvature_norm_pairs(*p)) {
        if !all_norms.contains(&n) {
            all_norms.push(n);
        }
    }
    let pq: Vec<(NormKind, NormKind)> = all_norms.iter().map(|n| (n.input, n.output)).collect();

    // per-block bounds
    for (k, block) in net.blocks().iter().enumerate() {
        let plan = plan(opts, block.in_dim(), 1 + k as u64);
        let lips = sampled_lipschitz_lower_bounds(|x| block.apply(x), &plan, &opts.norms)?;
        for (p, s) in opts.norms.iter().zip(lips) {
            checks.push(check(
                format!("block {k} lipschitz naive p={p}"),
                layer_lipschitz_naive(block, *p)?,
                s.clone(),
                opts.corrupt,
            ));
            checks.push(check(
                format!("block {k} lipschitz lt p={p}"),
                layer_lipschitz_lt(block, *p)?,
                s,
                opts.corrupt,
            ));
        }
        let jacs = sampled_jacobian_lipschitz_lower_bounds(|x| block.jacobian(x), &plan, &pq)?;
        for (norms, s) in all_norms.iter().zip(jacs) {
            for method in [
                LayerCurvatureMethod::Naive,
                LayerCurvatureMethod::Vectorized,
                LayerCurvatureMethod::Sdp,
            ] {
                match layer_curvature(block, *norms, method) {
                    Ok(bound) => checks.push(check(
                        format!("block {k} curvature {method} {}", label(*norms)),
                        bound,
                        s.clone(),
                        opts.corrupt,
                    )),
                    Err(CertError::UnsupportedNorm(_) | CertError::NotApplicable(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }

    // whole-network bounds
    let plan0 = plan(opts, net.input_dim(), 0);
    let lips = sampled_lipschitz_lower_bounds(|x| net.logits(x), &plan0, &opts.norms)?;
    for (p, s) in opts.norms.iter().zip(lips) {
        for method in [LipschitzMethod::Naive, LipschitzMethod::Lt, LipschitzMethod::Liplt] {
            checks.push(check(
                format!("network lipschitz {} p={p}", method.as_str()),
                schedule(net, *p, method)?.total(),
                s.clone(),
                opts.corrupt,
            ));
        }
    }
    let jacs = sampled_jacobian_lipschitz_lower_bounds(|x| net.jacobian(x), &plan0, &pq)?;
    for (norms, s) in all_norms.iter().zip(jacs) {
        for method in [
            LayerCurvatureMethod::Naive,
            LayerCurvatureMethod::Vectorized,
            LayerCurvatureMethod::Sdp,
            LayerCurvatureMethod::Tightest,
        ] {
            match network_curvature(net, *norms, method) {
                Ok(r) => checks.push(check(
                    format!("network curvature {method} {}", label(*norms)),
                    r.total(),
                    s.clone(),
                    opts.corrupt,
                )),
                Err(CertError::UnsupportedNorm(_) | CertError::NotApplicable(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }

    // anchored bounds
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xa5a5);
    for a in 0..opts.anchors {
        let x0: Vec<f64> = (0..net.input_dim())
            .map(|_| rng.gen_range(-opts.half_width..opts.half_width))
            .collect();
        let plan_a = plan(opts, net.input_dim(), 1000 + a as u64).with_anchor(x0.clone());
        let lips = sampled_lipschitz_lower_bounds(|x| net.logits(x), &plan_a, &opts.norms)?;
        for (p, s) in opts.norms.iter().zip(lips) {
            checks.push(check(
                format!("anchor {a} lipschitz p={p}"),
                anchored_schedule(net, *p, &x0)?.total(),
                s,
                opts.corrupt,
            ));
        }
        let jacs = sampled_jacobian_lipschitz_lower_bounds(|x| net.jacobian(x), &plan_a, &pq)?;
        for (norms, s) in all_norms.iter().zip(jacs) {
            checks.push(check(
                format!("anchor {a} curvature {}", label(*norms)),
                anchored_compositional_curvature(net, *norms, &x0)?.total(),
                s,
                opts.corrupt,
            ));
        }
    }

    let violations = checks.iter().filter(|c| !c.pass).count();
    Ok(VerifyReport {
        model_name: net.name.clone(),
        seed: opts.seed,
        pairs: opts.pairs,
        checks,
        violations,
    })
}
