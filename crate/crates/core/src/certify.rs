//! Closed-form robustness and attack certificates for classifiers.
//!
//! For a correctly classified sample with label `y` and margin functions
//! `f_iy = logit_i − logit_y < 0`, the zeroth-order radius uses a Lipschitz
//! constant per pair, the first-order radius adds the gradient and a
//! curvature constant, and the attack radius turns the quadratic upper bound
//! around into a guaranteed misclassification.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{
    anchored_compositional_curvature_with, network_curvature, CurvatureNorms, CurvatureReport, LayerCurvatureMethod,
};
use crate::error::{CertError, Result};
use crate::linalg::{argmax_dual, dual_vector_norm, NormKind};
use crate::lipschitz::{anchored_schedule_with, liplt_schedule};
use crate::model::{argmax, LogitPair, SequentialNetwork};

/// Below this curvature a pair with zero gradient is treated as flat.
pub const CURVATURE_FLOOR: f64 = 1e-12;

/// Default perturbation budgets.
pub const DEFAULT_BUDGETS: [f64; 3] = [36.0 / 255.0, 72.0 / 255.0, 108.0 / 255.0];

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(CertError::DimensionMismatch(format!("{got} {what} for {want} pairs")))
    }
}

fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(CertError::NonFinite(what.into()))
    }
}

/// Radius reached by one pair, with the index of the minimizing pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Radius {
    pub value: f64,
    pub index: usize,
}

fn min_radius(radii: impl Iterator<Item = f64>) -> Option<Radius> {
    radii
        .enumerate()
        .fold(None, |best: Option<Radius>, (index, value)| match best {
            Some(b) if b.value <= value => Some(b),
            _ => Some(Radius { value, index }),
        })
}

/// `−gap / L`; `+∞` when `L = 0`.
pub fn zeroth_order_pair_radius(gap: f64, lipschitz: f64) -> f64 {
    if lipschitz == 0.0 {
        f64::INFINITY
    } else {
        -gap / lipschitz
    }
}

/// Smallest `ε ≥ 0` with `(L/2)ε² + g ε + gap = 0`.
///
/// Evaluated as `2|gap| / (g + √(g² + 2L|gap|))`, the rationalized form of
/// `(−g + √(g² − 2L·gap)) / L`. It has no cancellation and reduces to the
/// linear limit `|gap| / g` at `L = 0`. Zero gradient with curvature below
/// [`CURVATURE_FLOOR`] gives `+∞`.
pub fn first_order_pair_radius(gap: f64, grad_dual: f64, curvature: f64) -> f64 {
    let c = -gap;
    if grad_dual == 0.0 && curvature < CURVATURE_FLOOR {
        return f64::INFINITY;
    }
    let disc = grad_dual * grad_dual + 2.0 * curvature * c;
    2.0 * c / (grad_dual + disc.sqrt())
}

/// Attack radius for one pair: smallest `ε` with
/// `f_yi − ‖∇f_yi‖ ε + (L/2) ε² ≤ 0`, or `None` when the pair is outside
/// `I = {2L·f_yi ≤ ‖∇f_yi‖²}` or has zero gradient.
pub fn attack_pair_radius(f_yi: f64, grad_dual: f64, curvature: f64) -> Option<f64> {
    let disc = grad_dual * grad_dual - 2.0 * curvature * f_yi;
    if disc < 0.0 || grad_dual == 0.0 {
        return None;
    }
    Some(2.0 * f_yi / (grad_dual + disc.sqrt()))
}

/// Zeroth-order radius `min_i −f_iy / L_{f_iy}`. `None` if any gap is `≥ 0`
/// (the sample is not correctly classified).
pub fn certify_zeroth(gaps: &[f64], lipschitz: &[f64]) -> Result<Option<Radius>> {
    check_len("Lipschitz constants", lipschitz.len(), gaps.len())?;
    check_finite("gaps", gaps)?;
    if lipschitz.iter().any(|l| !(*l >= 0.0) || l.is_infinite()) {
        return Err(CertError::InvalidInput(
            "Lipschitz constants must be finite and nonnegative".into(),
        ));
    }
    if gaps.is_empty() || gaps.iter().any(|g| *g >= 0.0) {
        return Ok(None);
    }
    Ok(min_radius(
        gaps.iter()
            .zip(lipschitz)
            .map(|(g, l)| zeroth_order_pair_radius(*g, *l)),
    ))
}

/// First-order radius, the minimum over pairs of [`first_order_pair_radius`].
pub fn certify_first(gaps: &[f64], grad_duals: &[f64], curvatures: &[f64]) -> Result<Option<Radius>> {
    check_len("gradient norms", grad_duals.len(), gaps.len())?;
    check_len("curvature constants", curvatures.len(), gaps.len())?;
    check_finite("gaps", gaps)?;
    check_finite("gradient norms", grad_duals)?;
    if curvatures.iter().any(|l| !(*l >= 0.0) || l.is_infinite()) {
        return Err(CertError::InvalidInput(
            "curvature constants must be finite and nonnegative".into(),
        ));
    }
    if gaps.is_empty() || gaps.iter().any(|g| *g >= 0.0) {
        return Ok(None);
    }
    Ok(min_radius(
        gaps.iter()
            .zip(grad_duals)
            .zip(curvatures)
            .map(|((g, d), l)| first_order_pair_radius(*g, *d, *l)),
    ))
}

/// `L ≤ −2(‖∇f‖ ε₀ + f) / ε₀²`: when true, the first-order radius of this
/// pair is at least `ε₀`.
pub fn first_order_dominance_condition(gap: f64, grad_dual: f64, curvature: f64, eps0: f64) -> bool {
    if !(eps0 > 0.0) || !eps0.is_finite() {
        return false;
    }
    curvature <= -2.0 * (grad_dual * eps0 + gap) / (eps0 * eps0)
}

/// Outcome of the attack certificate for one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackOutcome {
    Infeasible,
    Feasible {
        radius: f64,
        /// Index into the pair list.
        index: usize,
        /// `δ* = ε̄ · argmax_{‖v‖_p ≤ 1} ⟨∇f_{i*y}, v⟩`.
        delta: Vec<f64>,
    },
}

/// Attack certificate from `f_yi = −gap`, the dual gradient norms, the
/// curvature constants and the gradients `∇f_iy`.
pub fn attack_certificate(
    f_yi: &[f64],
    grad_duals: &[f64],
    curvatures: &[f64],
    gradients: &[Vec<f64>],
    p: NormKind,
) -> Result<AttackOutcome> {
    check_len("gradient norms", grad_duals.len(), f_yi.len())?;
    check_len("curvature constants", curvatures.len(), f_yi.len())?;
    check_len("gradients", gradients.len(), f_yi.len())?;
    check_finite("margins", f_yi)?;
    let best = min_radius(
        f_yi.iter()
            .zip(grad_duals)
            .zip(curvatures)
            .map(|((f, d), l)| attack_pair_radius(*f, *d, *l).unwrap_or(f64::INFINITY)),
    );
    match best {
        Some(r) if r.value.is_finite() => {
            let dir = argmax_dual(&gradients[r.index], p)?;
            Ok(AttackOutcome::Feasible {
                radius: r.value,
                index: r.index,
                delta: dir.iter().map(|v| v * r.value).collect(),
            })
        }
        _ => Ok(AttackOutcome::Infeasible),
    }
}

/// Where the per-pair constants come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstantSource {
    /// Composed scalar head per pair, anchored at the sample (default).
    Anchored,
    /// Composed scalar head per pair, global constants.
    Global,
    /// One network-level bound scaled by `‖e_i − e_y‖_{p*}`.
    Shared,
}

impl ConstantSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ConstantSource::Anchored => "anchored",
            ConstantSource::Global => "global",
            ConstantSource::Shared => "shared",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifyConfig {
    pub norm: NormKind,
    pub source: ConstantSource,
    pub layer_method: LayerCurvatureMethod,
}

impl CertifyConfig {
    pub fn new(norm: NormKind) -> Self {
        Self {
            norm,
            source: ConstantSource::Anchored,
            layer_method: LayerCurvatureMethod::Tightest,
        }
    }
}

struct PairHead {
    head: SequentialNetwork,
    lipschitz: f64,
    curvature: CurvatureReport,
}

/// Network-level artifacts shared by every sample.
pub struct Certifier<'a> {
    net: &'a SequentialNetwork,
    config: CertifyConfig,
    /// Indexed by `y * n + i`; `None` on the diagonal or in shared mode.
    heads: Vec<Option<PairHead>>,
    shared: Option<(f64, f64)>,
}

/// Constants for one ordered pair `(i, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub class: usize,
    /// `f_iy(x)`.
    pub gap: f64,
    /// `‖∇f_iy(x)‖_{p*}`.
    pub grad_dual: f64,
    /// Not computed for misclassified samples.
    pub lipschitz: Option<f64>,
    pub curvature: Option<f64>,
    /// `None` when unbounded or not computed.
    pub radius0: Option<f64>,
    pub radius1: Option<f64>,
    pub attack_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub radius: f64,
    pub class: usize,
    pub delta: Vec<f64>,
    /// Forward pass at `x + δ*` predicts a class other than the label.
    pub realized: bool,
}

/// Certificate for one sample. Radii are `None` for misclassified samples;
/// an infinite radius serializes as `null` with `unbounded` set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub sample: usize,
    pub label: usize,
    pub predicted: usize,
    pub correct: bool,
    pub norm: NormKind,
    pub pairs: Vec<PairRecord>,
    pub radius0: Option<f64>,
    pub radius0_class: Option<usize>,
    pub radius1: Option<f64>,
    pub radius1_class: Option<usize>,
    pub unbounded: bool,
    pub attack: Option<AttackRecord>,
    pub attack_infeasible: bool,
}

impl Certificate {
    /// Certified radius for the requested order (0 or 1), 0 when misclassified.
    pub fn radius(&self, order: u8) -> f64 {
        let r = if order == 0 { self.radius0 } else { self.radius1 };
        match r {
            Some(v) => v,
            None if self.correct => f64::INFINITY,
            None => 0.0,
        }
    }

    pub fn attack_radius(&self) -> Option<f64> {
        self.attack.as_ref().map(|a| a.radius)
    }
}

fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl<'a> Certifier<'a> {
    pub fn new(net: &'a SequentialNetwork, config: CertifyConfig) -> Result<Self> {
        let n = net.output_dim();
        if n < 2 {
            return Err(CertError::InvalidInput(
                "certification needs at least two classes".into(),
            ));
        }
        let p = config.norm;
        let norms = CurvatureNorms::gradient(p);
        let mut heads = Vec::with_capacity(n * n);
        let mut shared = None;
        match config.source {
            ConstantSource::Shared => {
                let scale = dual_vector_norm(&LogitPair::new(0, 1)?.reduction(n), p);
                let lip = liplt_schedule(net, p)?.total();
                let curv = network_curvature(net, norms, config.layer_method)?.total();
                shared = Some((scale * lip, scale * curv));
            }
            ConstantSource::Anchored | ConstantSource::Global => {
                for y in 0..n {
                    for i in 0..n {
                        if i == y {
                            heads.push(None);
                            continue;
                        }
                        let head = net.compose_scalar_head(LogitPair::new(i, y)?)?;
                        let curvature = network_curvature(&head, norms, config.layer_method)?;
                        let lipschitz = curvature.schedule_in.total();
                        heads.push(Some(PairHead {
                            head,
                            lipschitz,
                            curvature,
                        }));
                    }
                }
            }
        }
        Ok(Self {
            net,
            config,
            heads,
            shared,
        })
    }

    pub fn config(&self) -> CertifyConfig {
        self.config
    }

    fn pair_constants(&self, i: usize, y: usize, x: &[f64]) -> Result<(f64, f64)> {
        if let Some((l, c)) = self.shared {
            return Ok((l, c));
        }
        let n = self.net.output_dim();
        let head = self.heads[y * n + i].as_ref().expect("off-diagonal head");
        match self.config.source {
            ConstantSource::Global => Ok((head.lipschitz, head.curvature.total())),
            _ => {
                let lip = anchored_schedule_with(&head.head, x, &head.curvature.schedule_in)?.total();
                let curv = anchored_compositional_curvature_with(&head.head, &head.curvature, x)?.total();
                Ok((lip, curv))
            }
        }
    }

    /// Certificate for one labelled sample.
    pub fn certify(&self, sample: usize, x: &[f64], label: usize) -> Result<Certificate> {
        let n = self.net.output_dim();
        if label >= n {
            return Err(CertError::InvalidInput(format!(
                "label {label} out of range for {n} classes"
            )));
        }
        let p = self.config.norm;
        let logits = self.net.logits(x)?;
        let predicted = argmax(&logits);
        let jac = self.net.jacobian(x)?;
        let mut classes = Vec::with_capacity(n - 1);
        let mut gaps = Vec::with_capacity(n - 1);
        let mut grads = Vec::with_capacity(n - 1);
        let mut grad_duals = Vec::with_capacity(n - 1);
        for i in (0..n).filter(|&i| i != label) {
            let c = LogitPair::new(i, label)?.reduction(n);
            let grad = jac.tmatvec(&c)?;
            classes.push(i);
            gaps.push(logits[i] - logits[label]);
            grad_duals.push(dual_vector_norm(&grad, p));
            grads.push(grad);
        }
        let correct = gaps.iter().all(|g| *g < 0.0);
        let mut cert = Certificate {
            sample,
            label,
            predicted,
            correct,
            norm: p,
            pairs: Vec::new(),
            radius0: None,
            radius0_class: None,
            radius1: None,
            radius1_class: None,
            unbounded: false,
            attack: None,
            attack_infeasible: false,
        };
        if !correct {
            cert.pairs = classes
                .iter()
                .zip(&gaps)
                .zip(&grad_duals)
                .map(|((&class, &gap), &grad_dual)| PairRecord {
                    class,
                    gap,
                    grad_dual,
                    lipschitz: None,
                    curvature: None,
                    radius0: None,
                    radius1: None,
                    attack_radius: None,
                })
                .collect();
            return Ok(cert);
        }
        let (lips, curvs): (Vec<f64>, Vec<f64>) = classes
            .iter()
            .map(|&i| self.pair_constants(i, label, x))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        let r0 = certify_zeroth(&gaps, &lips)?.expect("correct sample");
        let r1 = certify_first(&gaps, &grad_duals, &curvs)?.expect("correct sample");
        cert.radius0 = finite_or_none(r0.value);
        cert.radius0_class = Some(classes[r0.index]);
        cert.radius1 = finite_or_none(r1.value);
        cert.radius1_class = Some(classes[r1.index]);
        cert.unbounded = !r0.value.is_finite() || !r1.value.is_finite();

        let f_yi: Vec<f64> = gaps.iter().map(|g| -g).collect();
        match attack_certificate(&f_yi, &grad_duals, &curvs, &grads, p)? {
            AttackOutcome::Infeasible => cert.attack_infeasible = true,
            AttackOutcome::Feasible { radius, index, delta } => {
                let moved: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + d).collect();
                let realized = self.net.predict(&moved)? != label;
                cert.attack = Some(AttackRecord {
                    radius,
                    class: classes[index],
                    delta,
                    realized,
                });
            }
        }
        cert.pairs = (0..classes.len())
            .map(|k| PairRecord {
                class: classes[k],
                gap: gaps[k],
                grad_dual: grad_duals[k],
                lipschitz: Some(lips[k]),
                curvature: Some(curvs[k]),
                radius0: finite_or_none(zeroth_order_pair_radius(gaps[k], lips[k])),
                radius1: finite_or_none(first_order_pair_radius(gaps[k], grad_duals[k], curvs[k])),
                attack_radius: attack_pair_radius(f_yi[k], grad_duals[k], curvs[k]),
            })
            .collect();
        Ok(cert)
    }

    /// Certificates for a dataset, processed in parallel and returned in
    /// sample order.
    pub fn certify_all(&self, xs: &[Vec<f64>], labels: &[usize]) -> Result<Vec<Certificate>> {
        check_len("labels", labels.len(), xs.len())?;
        xs.par_iter()
            .zip(labels.par_iter())
            .enumerate()
            .map(|(k, (x, &y))| self.certify(k, x, y))
            .collect()
    }
}

/// Counts at one budget. A correctly classified sample is safe when
/// `ε̲ > ε`, attackable when `ε̄ < ε`, and in the gap otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub budget: f64,
    pub total: usize,
    pub misclassified: usize,
    pub safe: usize,
    pub attackable: usize,
    pub gap: usize,
    pub safe_fraction: f64,
    pub attackable_fraction: f64,
    pub gap_fraction: f64,
}

/// Certification gap at budget `eps`, using first-order lower radii.
pub fn certification_gap(certs: &[Certificate], eps: f64) -> GapStats {
    let mut stats = GapStats {
        budget: eps,
        total: certs.len(),
        misclassified: 0,
        safe: 0,
        attackable: 0,
        gap: 0,
        safe_fraction: 0.0,
        attackable_fraction: 0.0,
        gap_fraction: 0.0,
    };
    for c in certs {
        if !c.correct {
            stats.misclassified += 1;
        } else if c.radius(1) > eps {
            stats.safe += 1;
        } else if c.attack_radius().is_some_and(|r| r < eps) {
            stats.attackable += 1;
        } else {
            stats.gap += 1;
        }
    }
    if stats.total > 0 {
        let t = stats.total as f64;
        stats.safe_fraction = stats.safe as f64 / t;
        stats.attackable_fraction = stats.attackable as f64 / t;
        stats.gap_fraction = stats.gap as f64 / t;
    }
    stats
}

/// Fraction of samples with certified radius of the given order above `eps`.
pub fn certified_accuracy(certs: &[Certificate], order: u8, eps: f64) -> f64 {
    if certs.is_empty() {
        return 0.0;
    }
    certs.iter().filter(|c| c.correct && c.radius(order) > eps).count() as f64 / certs.len() as f64
}

/// Clean accuracy minus the fraction of samples with `ε̄ ≤ eps`.
pub fn robust_accuracy_upper_bound(certs: &[Certificate], eps: f64) -> f64 {
    if certs.is_empty() {
        return 0.0;
    }
    let t = certs.len() as f64;
    let clean = certs.iter().filter(|c| c.correct).count() as f64 / t;
    let attackable = certs
        .iter()
        .filter(|c| c.correct && c.attack_radius().is_some_and(|r| r <= eps))
        .count() as f64
        / t;
    clean - attackable
}
