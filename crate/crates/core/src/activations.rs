//! Scalar activations with slope intervals for φ and φ′, and anchored
//! Lipschitz constants.
//!
//! The anchored constant of a scalar map `g` at `x` is
//! `sup_{y≠x} |g(y) − g(x)| / |y − x|`. Its maximizer is a point whose tangent
//! passes through `(x, g(x))`, so the solver scans outward from the anchor on
//! both sides for sign changes of `g′(y) − Q(y)` (the numerator of `Q′`) and
//! bisects each bracket. The limit `|g′(x)|` and the tail slopes at ±∞ are
//! always candidates.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{CertError, Result};

/// Relative inflation applied to every solved anchored constant.
pub const ANCHOR_MARGIN: f64 = 1e-9;
const BISECTION_ITERS: usize = 80;
const SCAN_START: f64 = 1e-6;
const SCAN_SHELLS: usize = 52;
const SCAN_SUBSTEPS: usize = 8;
/// Inflation applied to closed-form global constants to absorb rounding.
const GLOBAL_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Tanh,
    Sigmoid,
    Softplus,
    /// ELU with α = 1.
    Elu,
}

impl ActivationKind {
    pub fn all() -> [ActivationKind; 4] {
        [
            ActivationKind::Tanh,
            ActivationKind::Sigmoid,
            ActivationKind::Softplus,
            ActivationKind::Elu,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Tanh => "tanh",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Softplus => "softplus",
            ActivationKind::Elu => "elu",
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = CertError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(ActivationKind::Tanh),
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            "softplus" => Ok(ActivationKind::Softplus),
            "elu" => Ok(ActivationKind::Elu),
            other => Err(CertError::UnknownActivation(other.to_string())),
        }
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn abs_max(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Which scalar map an anchored constant refers to: φ itself or φ′.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnchorTarget {
    Phi,
    DPhi,
}

impl AnchorTarget {
    fn index(self) -> usize {
        match self {
            AnchorTarget::Phi => 0,
            AnchorTarget::DPhi => 1,
        }
    }
}

/// A scalar activation with its slope-restriction data.
#[derive(Debug, Clone)]
pub struct ActivationSpec {
    kind: ActivationKind,
    /// φ is slope-restricted in this interval.
    pub slope: Interval,
    /// φ′ is slope-restricted in this interval.
    pub deriv_slope: Interval,
    tables: Option<Arc<[AnchoredTable; 2]>>,
}

impl PartialEq for ActivationSpec {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

/// Looks up a builtin activation by name.
pub fn builtin(name: &str) -> Result<ActivationSpec> {
    Ok(ActivationSpec::new(name.parse()?))
}

impl ActivationSpec {
    pub fn new(kind: ActivationKind) -> Self {
        let sqrt3 = 3f64.sqrt();
        let (slope, deriv_slope) = match kind {
            ActivationKind::Tanh => {
                let l = 4.0 / (3.0 * sqrt3) * (1.0 + GLOBAL_MARGIN);
                (Interval::new(0.0, 1.0), Interval::new(-l, l))
            }
            ActivationKind::Sigmoid => {
                let l = 1.0 / (6.0 * sqrt3) * (1.0 + GLOBAL_MARGIN);
                (Interval::new(0.0, 0.25), Interval::new(-l, l))
            }
            ActivationKind::Softplus => (Interval::new(0.0, 1.0), Interval::new(0.0, 0.25)),
            ActivationKind::Elu => (Interval::new(0.0, 1.0), Interval::new(0.0, 1.0)),
        };
        Self {
            kind,
            slope,
            deriv_slope,
            tables: None,
        }
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Global Lipschitz constant of φ (β for monotone activations).
    pub fn lipschitz(&self) -> f64 {
        self.slope.abs_max()
    }

    /// Global Lipschitz constant of φ′, `max(|α′|, |β′|)`.
    pub fn deriv_lipschitz(&self) -> f64 {
        self.deriv_slope.abs_max()
    }

    pub fn global_constant(&self, target: AnchorTarget) -> f64 {
        match target {
            AnchorTarget::Phi => self.lipschitz(),
            AnchorTarget::DPhi => self.deriv_lipschitz(),
        }
    }

    pub fn eval(&self, z: f64) -> f64 {
        match self.kind {
            ActivationKind::Tanh => z.tanh(),
            ActivationKind::Sigmoid => sigmoid(z),
            ActivationKind::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            ActivationKind::Elu => {
                if z >= 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
        }
    }

    pub fn deriv(&self, z: f64) -> f64 {
        match self.kind {
            ActivationKind::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            ActivationKind::Softplus => sigmoid(z),
            ActivationKind::Elu => {
                if z >= 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
        }
    }

    /// Second derivative where it exists. For ELU the value at the kink is the
    /// larger one-sided limit.
    pub fn deriv2(&self, z: f64) -> f64 {
        match self.kind {
            ActivationKind::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            ActivationKind::Softplus => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            ActivationKind::Elu => {
                if z > 0.0 {
                    0.0
                } else {
                    z.exp()
                }
            }
        }
    }

    pub fn has_second_derivative(&self) -> bool {
        self.kind != ActivationKind::Elu
    }

    fn target_eval(&self, target: AnchorTarget, z: f64) -> f64 {
        match target {
            AnchorTarget::Phi => self.eval(z),
            AnchorTarget::DPhi => self.deriv(z),
        }
    }

    fn target_slope(&self, target: AnchorTarget, z: f64) -> f64 {
        match target {
            AnchorTarget::Phi => self.deriv(z),
            AnchorTarget::DPhi => self.deriv2(z),
        }
    }

    /// Limits of the difference quotient as y → −∞ and y → +∞.
    fn tail_slopes(&self, target: AnchorTarget) -> (f64, f64) {
        match (self.kind, target) {
            (ActivationKind::Softplus | ActivationKind::Elu, AnchorTarget::Phi) => (0.0, 1.0),
            _ => (0.0, 0.0),
        }
    }

    /// Points where `|g′|` attains an interior local maximum.
    fn slope_peaks(&self, target: AnchorTarget) -> Vec<f64> {
        match (self.kind, target) {
            (ActivationKind::Tanh | ActivationKind::Sigmoid, AnchorTarget::Phi) => vec![0.0],
            (ActivationKind::Tanh, AnchorTarget::DPhi) => {
                let z = (1.0 / 3f64.sqrt()).atanh();
                vec![-z, z]
            }
            (ActivationKind::Sigmoid, AnchorTarget::DPhi) => {
                let z = (2.0 + 3f64.sqrt()).ln();
                vec![-z, z]
            }
            (ActivationKind::Softplus, AnchorTarget::Phi) => vec![],
            (ActivationKind::Softplus, AnchorTarget::DPhi) => vec![0.0],
            (ActivationKind::Elu, AnchorTarget::Phi) => vec![],
            (ActivationKind::Elu, AnchorTarget::DPhi) => vec![0.0],
        }
    }

    /// `sup_{z∈[a,b]} |g′(z)|`.
    fn slope_sup_on(&self, target: AnchorTarget, a: f64, b: f64) -> f64 {
        let mut m = self
            .target_slope(target, a)
            .abs()
            .max(self.target_slope(target, b).abs());
        for z in self.slope_peaks(target) {
            if z >= a && z <= b {
                m = m.max(self.target_slope(target, z).abs());
            }
        }
        m
    }

    /// Attaches precomputed anchored tables for φ and φ′ over `grid`.
    pub fn with_tables(mut self, grid: TableGrid) -> Result<Self> {
        let phi = build_anchored_table(&self, AnchorTarget::Phi, grid)?;
        let dphi = build_anchored_table(&self, AnchorTarget::DPhi, grid)?;
        self.tables = Some(Arc::new([phi, dphi]));
        Ok(self)
    }

    pub fn has_tables(&self) -> bool {
        self.tables.is_some()
    }

    /// Anchored constant at `x`, read from the attached table when present and
    /// solved directly otherwise.
    pub fn anchored(&self, target: AnchorTarget, x: f64) -> Result<f64> {
        match &self.tables {
            Some(t) => t[target.index()].lookup(x),
            None => anchored_lipschitz(self, target, x),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Upper bound on `sup_{y≠x} |g(y) − g(x)| / |y − x|` for `g ∈ {φ, φ′}`.
pub fn anchored_lipschitz(spec: &ActivationSpec, target: AnchorTarget, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(CertError::NonFinite("anchor point".into()));
    }
    let global = spec.global_constant(target);
    let gx = spec.target_eval(target, x);
    let quotient = |y: f64| (spec.target_eval(target, y) - gx) / (y - x);
    // sign of Q′(y) up to the sign of (y − x)
    let tangent_gap = |y: f64| spec.target_slope(target, y) - quotient(y);

    let (left_tail, right_tail) = spec.tail_slopes(target);
    let mut best = spec
        .target_slope(target, x)
        .abs()
        .max(left_tail.abs())
        .max(right_tail.abs());

    for side in [1.0, -1.0] {
        let mut prev_t = SCAN_START;
        let mut prev_f = tangent_gap(x + side * prev_t);
        best = best.max(quotient(x + side * prev_t).abs());
        let ratio = 2f64.powf(1.0 / SCAN_SUBSTEPS as f64);
        for _ in 0..SCAN_SHELLS * SCAN_SUBSTEPS {
            let t = prev_t * ratio;
            let y = x + side * t;
            let f = tangent_gap(y);
            best = best.max(quotient(y).abs());
            if prev_f == 0.0 || f == 0.0 || (prev_f < 0.0) != (f < 0.0) {
                best = best.max(bisect_tangent(&quotient, &tangent_gap, x, side, prev_t, t, prev_f));
            }
            prev_t = t;
            prev_f = f;
        }
    }
    Ok((best * (1.0 + ANCHOR_MARGIN)).min(global))
}

fn bisect_tangent(
    quotient: &impl Fn(f64) -> f64,
    tangent_gap: &impl Fn(f64) -> f64,
    x: f64,
    side: f64,
    mut lo: f64,
    mut hi: f64,
    f_lo: f64,
) -> f64 {
    let lo_negative = f_lo < 0.0;
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        let f_mid = tangent_gap(x + side * mid);
        if (f_mid < 0.0) == lo_negative {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    quotient(x + side * lo).abs().max(quotient(x + side * hi).abs())
}

/// Uniform anchor grid for table construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableGrid {
    pub lo: f64,
    pub hi: f64,
    pub n_points: usize,
}

impl Default for TableGrid {
    fn default() -> Self {
        Self {
            lo: -8.0,
            hi: 8.0,
            n_points: 1601,
        }
    }
}

/// Precomputed anchored constants at uniformly spaced anchors.
///
/// Between two nodes `a < b` the lookup returns
/// `max(L(a), L(b), sup_{[a,b]} |g′|)`, which bounds `L(x)` for every
/// `x ∈ [a, b]`: a chord from `x` to a point beyond `b` splits at `b` into a
/// piece inside the cell and a piece anchored at `b`.
#[derive(Debug, Clone)]
pub struct AnchoredTable {
    grid: TableGrid,
    step: f64,
    node_values: Vec<f64>,
    cell_bounds: Vec<f64>,
    global: f64,
}

pub fn build_anchored_table(spec: &ActivationSpec, target: AnchorTarget, grid: TableGrid) -> Result<AnchoredTable> {
    if !(grid.lo.is_finite() && grid.hi.is_finite()) || grid.lo >= grid.hi || grid.n_points < 2 {
        return Err(CertError::InvalidInput(format!(
            "anchored table grid needs lo < hi and at least 2 points (got [{}, {}] x {})",
            grid.lo, grid.hi, grid.n_points
        )));
    }
    let step = (grid.hi - grid.lo) / (grid.n_points - 1) as f64;
    let nodes: Vec<f64> = (0..grid.n_points).map(|i| grid.lo + step * i as f64).collect();
    let node_values = nodes
        .iter()
        .map(|&z| anchored_lipschitz(spec, target, z))
        .collect::<Result<Vec<_>>>()?;
    let global = spec.global_constant(target);
    let cell_bounds = nodes
        .windows(2)
        .zip(node_values.windows(2))
        .map(|(z, l)| {
            let inner = spec.slope_sup_on(target, z[0], z[1]) * (1.0 + ANCHOR_MARGIN);
            l[0].max(l[1]).max(inner).min(global)
        })
        .collect();
    Ok(AnchoredTable {
        grid,
        step,
        node_values,
        cell_bounds,
        global,
    })
}

impl AnchoredTable {
    pub fn grid(&self) -> TableGrid {
        self.grid
    }

    pub fn lookup(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(CertError::NonFinite("anchor point".into()));
        }
        if x < self.grid.lo || x > self.grid.hi {
            return Ok(self.global);
        }
        let pos = (x - self.grid.lo) / self.step;
        let idx = (pos.floor() as usize).min(self.grid.n_points - 1);
        let node = self.grid.lo + self.step * idx as f64;
        if node == x {
            return Ok(self.node_values[idx]);
        }
        let cell = idx.min(self.cell_bounds.len() - 1);
        Ok(self.cell_bounds[cell])
    }
}
