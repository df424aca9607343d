//! Brute-force verification machinery: finite differences, quotient
//! sampling, grid adversarial search and a finite-difference Hessian.
//!
//! Everything here produces lower bounds or direct evaluations. None of it
//! is used to compute a certificate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::activations::Interval;
use crate::error::{CertError, Result};
use crate::linalg::{argmax_dual, operator_norm, symmetric_eigenvalues, DenseMatrix, NormKind, NormMode};
use crate::model::{LogitPair, SequentialNetwork};

const BATCH: usize = 512;

/// How the second point of a pair is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairScale {
    /// Independent uniform point in the domain box.
    Box,
    /// `x + s·u` with `u` uniform in `[−1, 1]^n`.
    Local(f64),
}

/// A reproducible recipe for sampling point pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub seed: u64,
    pub n_pairs: usize,
    pub domain: Vec<Interval>,
    /// Input norm of every quotient.
    pub norm: NormKind,
    /// Pair `k` uses `scales[k % scales.len()]`.
    pub scales: Vec<PairScale>,
    /// When set, the first point of every pair is the anchor.
    pub anchor: Option<Vec<f64>>,
}

impl SamplingPlan {
    pub fn new(seed: u64, n_pairs: usize, domain: Vec<Interval>, norm: NormKind) -> Self {
        Self {
            seed,
            n_pairs,
            domain,
            norm,
            scales: vec![PairScale::Box, PairScale::Local(1e-1), PairScale::Local(1e-4)],
            anchor: None,
        }
    }

    /// Plan over the cube `[−half_width, half_width]^dim`.
    pub fn cube(seed: u64, n_pairs: usize, dim: usize, half_width: f64, norm: NormKind) -> Self {
        Self::new(seed, n_pairs, vec![Interval::new(-half_width, half_width); dim], norm)
    }

    pub fn with_anchor(mut self, anchor: Vec<f64>) -> Self {
        self.anchor = Some(anchor);
        self
    }

    pub fn with_scales(mut self, scales: Vec<PairScale>) -> Self {
        self.scales = scales;
        self
    }

    pub fn dim(&self) -> usize {
        self.domain.len()
    }

    fn validate(&self) -> Result<()> {
        if self.domain.is_empty() {
            return Err(CertError::InvalidInput("sampling domain is empty".into()));
        }
        if self.scales.is_empty() {
            return Err(CertError::InvalidInput("sampling plan has no pair scales".into()));
        }
        if self
            .domain
            .iter()
            .any(|iv| !(iv.lo <= iv.hi) || !iv.lo.is_finite() || !iv.hi.is_finite())
        {
            return Err(CertError::InvalidInput(
                "sampling domain has an invalid interval".into(),
            ));
        }
        if let Some(a) = &self.anchor {
            if a.len() != self.dim() {
                return Err(CertError::DimensionMismatch(format!(
                    "anchor has {} coordinates, domain has {}",
                    a.len(),
                    self.dim()
                )));
            }
        }
        Ok(())
    }

    fn uniform(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.domain
            .iter()
            .map(|iv| {
                if iv.lo == iv.hi {
                    iv.lo
                } else {
                    rng.gen_range(iv.lo..iv.hi)
                }
            })
            .collect()
    }

    fn batch(&self, b: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(b as u64);
        let start = b * BATCH;
        let end = (start + BATCH).min(self.n_pairs);
        (start..end)
            .map(|k| {
                let x = match &self.anchor {
                    Some(a) => a.clone(),
                    None => self.uniform(&mut rng),
                };
                let y = match self.scales[k % self.scales.len()] {
                    PairScale::Box => self.uniform(&mut rng),
                    PairScale::Local(s) => x.iter().map(|xi| xi + s * rng.gen_range(-1.0..1.0)).collect(),
                };
                (x, y)
            })
            .collect()
    }

    fn n_batches(&self) -> usize {
        self.n_pairs.div_ceil(BATCH)
    }

    /// Every pair of the plan, in order.
    pub fn pairs(&self) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        self.validate()?;
        Ok((0..self.n_batches()).flat_map(|b| self.batch(b)).collect())
    }

    /// Maxima of several quotients over the plan's pairs. Batches run in
    /// parallel; the reduction keeps the first maximal pair, so results do
    /// not depend on scheduling.
    fn max_quotients<Q>(&self, count: usize, quotient: Q) -> Result<Vec<QuotientSample>>
    where
        Q: Fn(&[f64], &[f64]) -> Result<Option<Vec<f64>>> + Sync,
    {
        self.validate()?;
        let per_batch: Vec<Vec<QuotientSample>> = (0..self.n_batches())
            .into_par_iter()
            .map(|b| {
                let mut best = vec![QuotientSample::default(); count];
                for (x, y) in self.batch(b) {
                    if let Some(values) = quotient(&x, &y)? {
                        for (slot, v) in best.iter_mut().zip(values) {
                            if v > slot.value {
                                *slot = QuotientSample {
                                    value: v,
                                    x: x.clone(),
                                    y: y.clone(),
                                };
                            }
                        }
                    }
                }
                Ok(best)
            })
            .collect::<Result<_>>()?;
        let mut out = vec![QuotientSample::default(); count];
        for batch in per_batch {
            for (slot, s) in out.iter_mut().zip(batch) {
                if s.value > slot.value {
                    *slot = s;
                }
            }
        }
        Ok(out)
    }
}

/// The largest sampled quotient and the pair that produced it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuotientSample {
    pub value: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

fn difference_norm(a: &[f64], b: &[f64], p: NormKind) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(u, v)| u - v).collect();
    p.vector_norm(&d)
}

/// Central-difference Jacobian of an arbitrary map.
pub fn finite_difference_jacobian_fn<F>(f: F, x: &[f64], h: f64) -> Result<DenseMatrix>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(h > 0.0) {
        return Err(CertError::InvalidInput(format!(
            "finite-difference step must be positive (got {h})"
        )));
    }
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut probe = x.to_vec();
    for j in 0..n {
        probe[j] = x[j] + h;
        let plus = f(&probe)?;
        probe[j] = x[j] - h;
        let minus = f(&probe)?;
        probe[j] = x[j];
        cols.push(
            plus.iter()
                .zip(&minus)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect::<Vec<_>>(),
        );
    }
    let m = cols.first().map_or(0, Vec::len);
    let mut jac = DenseMatrix::zeros(m.max(1), n.max(1));
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            jac.set(i, j, *v);
        }
    }
    Ok(jac)
}

/// Central-difference Jacobian of the network's logits.
pub fn finite_difference_jacobian(net: &SequentialNetwork, x: &[f64], h: f64) -> Result<DenseMatrix> {
    finite_difference_jacobian_fn(|v| net.logits(v), x, h)
}

/// `max ‖f(x) − f(y)‖_p / ‖x − y‖_p` over the plan's pairs, `p = plan.norm`.
pub fn sampled_lipschitz_lower_bound<F>(f: F, plan: &SamplingPlan) -> Result<QuotientSample>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    Ok(sampled_lipschitz_lower_bounds(f, plan, &[plan.norm])?.remove(0))
}

/// One Lipschitz quotient per norm, all from the same pairs.
pub fn sampled_lipschitz_lower_bounds<F>(f: F, plan: &SamplingPlan, norms: &[NormKind]) -> Result<Vec<QuotientSample>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    plan.max_quotients(norms.len(), |x, y| {
        if x == y {
            return Ok(None);
        }
        let (fx, fy) = (f(x)?, f(y)?);
        Ok(Some(
            norms
                .iter()
                .map(|p| difference_norm(&fx, &fy, *p) / difference_norm(x, y, *p))
                .collect(),
        ))
    })
}

/// A lower bound on the induced norm `‖M‖_{p→q}`.
///
/// Exact when `p = 1`, `q = ∞` or `p = q ∈ {1, ∞}`. For `p = q = 2` this is
/// power iteration, whose value is `‖Mv‖₂` for a unit `v`. Other pairs run an
/// alternating ascent from every row direction; each iterate is attained by a
/// feasible vector, so the result never exceeds the true norm.
pub fn induced_norm_lower_bound(m: &DenseMatrix, p: NormKind, q: NormKind) -> Result<f64> {
    if p == q {
        return operator_norm(m, p, NormMode::Fast);
    }
    if p == NormKind::One {
        return Ok((0..m.cols())
            .map(|j| q.vector_norm(&(0..m.rows()).map(|i| m.get(i, j)).collect::<Vec<_>>()))
            .fold(0.0, f64::max));
    }
    if q == NormKind::Inf {
        return Ok((0..m.rows())
            .map(|i| p.dual().vector_norm(m.row(i)))
            .fold(0.0, f64::max));
    }
    let mut best: f64 = 0.0;
    let mut starts: Vec<Vec<f64>> = (0..m.rows()).map(|i| m.row(i).to_vec()).collect();
    starts.push(vec![1.0; m.cols()]);
    for start in starts {
        if start.iter().all(|v| *v == 0.0) {
            continue;
        }
        let mut v = argmax_dual(&start, p)?;
        let mut value = q.vector_norm(&m.matvec(&v)?);
        for _ in 0..50 {
            let mv = m.matvec(&v)?;
            if mv.iter().all(|x| *x == 0.0) {
                break;
            }
            let u = argmax_dual(&mv, q.dual())?;
            let mtu = m.tmatvec(&u)?;
            if mtu.iter().all(|x| *x == 0.0) {
                break;
            }
            let next_v = argmax_dual(&mtu, p)?;
            let next = q.vector_norm(&m.matvec(&next_v)?);
            v = next_v;
            if next <= value * (1.0 + 1e-14) {
                value = value.max(next);
                break;
            }
            value = next;
        }
        best = best.max(value);
    }
    Ok(best)
}

/// `max ‖J(x) − J(y)‖_q / ‖x − y‖_p` for an arbitrary Jacobian map, with
/// `p = plan.norm` and `‖·‖_q` the induced `q → q` operator norm.
pub fn sampled_jacobian_lipschitz_lower_bound_fn<J>(jac: J, plan: &SamplingPlan, q: NormKind) -> Result<QuotientSample>
where
    J: Fn(&[f64]) -> Result<DenseMatrix> + Sync,
{
    Ok(sampled_jacobian_lipschitz_lower_bounds(jac, plan, &[(plan.norm, q)])?.remove(0))
}

/// One Jacobian quotient per `(p, q)`, all from the same pairs.
pub fn sampled_jacobian_lipschitz_lower_bounds<J>(
    jac: J,
    plan: &SamplingPlan,
    norms: &[(NormKind, NormKind)],
) -> Result<Vec<QuotientSample>>
where
    J: Fn(&[f64]) -> Result<DenseMatrix> + Sync,
{
    plan.max_quotients(norms.len(), |x, y| {
        if x == y {
            return Ok(None);
        }
        let diff = jac(x)?.sub(&jac(y)?)?;
        norms
            .iter()
            .map(|(p, q)| Ok(induced_norm_lower_bound(&diff, *q, *q)? / difference_norm(x, y, *p)))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    })
}

/// `max ‖Df(x) − Df(y)‖_q / ‖x − y‖_p` with analytic network Jacobians.
pub fn sampled_jacobian_lipschitz_lower_bound(
    net: &SequentialNetwork,
    plan: &SamplingPlan,
    q: NormKind,
) -> Result<QuotientSample> {
    sampled_jacobian_lipschitz_lower_bound_fn(|x| net.jacobian(x), plan, q)
}

/// Unit-ℓ_p directions for a grid search in 1, 2 or 3 dimensions.
pub fn sphere_directions(dim: usize, count: usize, p: NormKind) -> Result<Vec<Vec<f64>>> {
    let raw: Vec<Vec<f64>> = match dim {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count.max(4))
            .map(|j| {
                let t = std::f64::consts::TAU * j as f64 / count.max(4) as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        3 => {
            // Fibonacci lattice plus the coordinate axes
            let n = count.max(6);
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            let mut dirs: Vec<Vec<f64>> = (0..n)
                .map(|j| {
                    let z = 1.0 - 2.0 * (j as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let t = golden * j as f64;
                    vec![r * t.cos(), r * t.sin(), z]
                })
                .collect();
            for k in 0..3 {
                for s in [1.0, -1.0] {
                    let mut e = vec![0.0; 3];
                    e[k] = s;
                    dirs.push(e);
                }
            }
            dirs
        }
        _ => {
            return Err(CertError::Unsupported(format!(
                "grid search is limited to input dimension ≤ 3 (got {dim})"
            )))
        }
    };
    Ok(raw
        .into_iter()
        .map(|d| {
            let n = p.vector_norm(&d);
            d.into_iter().map(|v| v / n).collect()
        })
        .collect())
}

/// Grid parameters for [`grid_adversarial_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// Radial step as a fraction of the radius.
    pub resolution: f64,
    /// Directions on the unit sphere (ignored in 1-D).
    pub directions: usize,
    /// Extra directions scanned in addition to the lattice, e.g. an attack
    /// direction. They are rescaled to unit ℓ_p norm.
    pub extra: Vec<Vec<f64>>,
}

impl GridSpec {
    pub fn new(resolution: f64, directions: usize) -> Self {
        Self {
            resolution,
            directions,
            extra: Vec::new(),
        }
    }
}

/// A misclassifying grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridHit {
    pub delta: Vec<f64>,
    pub norm: f64,
    pub predicted: usize,
}

/// Scans the ℓ_p ball of the given radius around `x` shell by shell from
/// the inside, and returns the first (hence smallest-norm) grid point where
/// the prediction differs from `label`.
pub fn grid_adversarial_search(
    net: &SequentialNetwork,
    x: &[f64],
    label: usize,
    p: NormKind,
    radius: f64,
    grid: &GridSpec,
) -> Result<Option<GridHit>> {
    if !(grid.resolution > 0.0 && grid.resolution <= 1.0) {
        return Err(CertError::InvalidInput(format!(
            "grid resolution must lie in (0, 1] (got {})",
            grid.resolution
        )));
    }
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(CertError::InvalidInput(format!(
            "search radius must be finite and nonnegative (got {radius})"
        )));
    }
    let mut dirs = sphere_directions(x.len(), grid.directions, p)?;
    for e in &grid.extra {
        if e.len() != x.len() {
            return Err(CertError::DimensionMismatch(
                "extra direction has the wrong length".into(),
            ));
        }
        let n = p.vector_norm(e);
        if n > 0.0 {
            dirs.push(e.iter().map(|v| v / n).collect());
        }
    }
    let steps = (1.0 / grid.resolution).round().max(1.0) as usize;
    let mut probe = vec![0.0; x.len()];
    for k in 1..=steps {
        let r = radius * k as f64 / steps as f64;
        for d in &dirs {
            for ((pi, xi), di) in probe.iter_mut().zip(x).zip(d) {
                *pi = xi + r * di;
            }
            let predicted = net.predict(&probe)?;
            if predicted != label {
                return Ok(Some(GridHit {
                    delta: d.iter().map(|v| r * v).collect(),
                    norm: r,
                    predicted,
                }));
            }
        }
    }
    Ok(None)
}

/// Parameters for [`heuristic_adversarial_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeSpec {
    pub random_directions: usize,
    /// Radial steps along each ray.
    pub steps: usize,
    pub seed: u64,
}

/// Heuristic search for inputs of any dimension: rays along the dual
/// directions of every margin gradient plus seeded random directions.
/// Not a soundness oracle.
pub fn heuristic_adversarial_probe(
    net: &SequentialNetwork,
    x: &[f64],
    label: usize,
    p: NormKind,
    radius: f64,
    spec: &ProbeSpec,
) -> Result<Option<GridHit>> {
    let ProbeSpec {
        random_directions,
        steps,
        seed,
    } = *spec;
    let n = net.output_dim();
    let jac = net.jacobian(x)?;
    let mut dirs = Vec::new();
    for i in (0..n).filter(|&i| i != label) {
        let grad = jac.tmatvec(&LogitPair::new(i, label)?.reduction(n))?;
        if grad.iter().any(|g| *g != 0.0) {
            dirs.push(argmax_dual(&grad, p)?);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random_directions {
        let d: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = p.vector_norm(&d);
        if norm > 0.0 {
            dirs.push(d.into_iter().map(|v| v / norm).collect());
        }
    }
    let steps = steps.max(1);
    for k in 1..=steps {
        let r = radius * k as f64 / steps as f64;
        for d in &dirs {
            let probe: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + r * b).collect();
            let predicted = net.predict(&probe)?;
            if predicted != label {
                return Ok(Some(GridHit {
                    delta: d.iter().map(|v| r * v).collect(),
                    norm: r,
                    predicted,
                }));
            }
        }
    }
    Ok(None)
}

/// `‖D²f(x)‖₂` for a scalar network, from central differences of the
/// analytic gradient, symmetrized.
pub fn exact_hessian_norm_tiny(net: &SequentialNetwork, x: &[f64], h: f64) -> Result<f64> {
    if net.output_dim() != 1 {
        return Err(CertError::InvalidInput(format!(
            "Hessian oracle needs a scalar network (output dimension {})",
            net.output_dim()
        )));
    }
    if net.input_dim() > 8 {
        return Err(CertError::Unsupported(format!(
            "Hessian oracle is limited to input dimension ≤ 8 (got {})",
            net.input_dim()
        )));
    }
    if let Some(act) = net
        .blocks()
        .iter()
        .filter_map(|b| b.activation.as_ref())
        .find(|a| !a.has_second_derivative())
    {
        return Err(CertError::Unsupported(format!(
            "{} has no second derivative everywhere",
            act.name()
        )));
    }
    let grad = |v: &[f64]| -> Result<Vec<f64>> { Ok(net.jacobian(v)?.row(0).to_vec()) };
    let fd = finite_difference_jacobian_fn(grad, x, h)?;
    let sym = fd.add(&fd.transpose())?.scale(0.5);
    Ok(symmetric_eigenvalues(&sym)?
        .into_iter()
        .map(f64::abs)
        .fold(0.0, f64::max))
}
