//! JSON reports for bounds, certificates and attack certificates.

use serde::{Deserialize, Serialize};

use crate::certify::{
    certification_gap, certified_accuracy, robust_accuracy_upper_bound, Certificate, ConstantSource, GapStats,
};
use crate::curvature::{CurvatureReport, LayerCurvatureMethod};
use crate::linalg::NormKind;
use crate::lipschitz::LipschitzSchedule;

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports always serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    Lipschitz,
    Curvature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub block: usize,
    /// `L̄_{h^k}` in the input norm.
    pub lipschitz: f64,
    /// `L̄_{Dh^k}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeRow {
    pub k: usize,
    /// `L̄_k`.
    pub lipschitz: f64,
    /// `L̄_{D_k}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: ReportKind,
    pub model_hash: String,
    pub model_name: String,
    pub norm: NormKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_norm: Option<NormKind>,
    pub lipschitz_method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_method: Option<LayerCurvatureMethod>,
    pub layers: Vec<LayerRow>,
    pub cumulative: Vec<CumulativeRow>,
    pub total: f64,
    pub anchored: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_index: Option<usize>,
    /// The global bound an anchored total is compared against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_total: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_seconds: Option<f64>,
}

fn anchored_note(total: f64, global: Option<f64>) -> Option<String> {
    global.map(|g| {
        if total <= g {
            format!("anchored {total} <= global {g}")
        } else {
            format!("anchored {total} exceeds global {g}")
        }
    })
}

impl BoundReport {
    pub fn lipschitz(
        model_hash: &str,
        model_name: &str,
        sched: &LipschitzSchedule,
        anchor_index: Option<usize>,
        global: Option<f64>,
    ) -> Self {
        let total = sched.total();
        Self {
            kind: ReportKind::Lipschitz,
            model_hash: model_hash.into(),
            model_name: model_name.into(),
            norm: sched.norm,
            output_norm: None,
            lipschitz_method: if sched.anchor.is_some() {
                "anchored".into()
            } else {
                sched.method.as_str().into()
            },
            layer_method: None,
            layers: sched
                .layer
                .iter()
                .enumerate()
                .map(|(block, l)| LayerRow {
                    block,
                    lipschitz: *l,
                    curvature: None,
                })
                .collect(),
            cumulative: sched
                .cumulative
                .iter()
                .enumerate()
                .map(|(k, l)| CumulativeRow {
                    k,
                    lipschitz: *l,
                    curvature: None,
                })
                .collect(),
            total,
            anchored: sched.anchor.is_some(),
            anchor_index,
            global_total: global,
            note: anchored_note(total, global),
            wall_time_seconds: None,
        }
    }

    pub fn curvature(
        model_hash: &str,
        model_name: &str,
        report: &CurvatureReport,
        anchor_index: Option<usize>,
        global: Option<f64>,
    ) -> Self {
        let total = report.total();
        let sched = &report.schedule_in;
        Self {
            kind: ReportKind::Curvature,
            model_hash: model_hash.into(),
            model_name: model_name.into(),
            norm: report.norms.input,
            output_norm: Some(report.norms.output),
            lipschitz_method: if sched.anchor.is_some() {
                "anchored".into()
            } else {
                sched.method.as_str().into()
            },
            layer_method: Some(report.layer_method),
            layers: report
                .layer
                .iter()
                .enumerate()
                .map(|(block, c)| LayerRow {
                    block,
                    lipschitz: sched.layer[block],
                    curvature: Some(*c),
                })
                .collect(),
            cumulative: report
                .cumulative
                .iter()
                .enumerate()
                .map(|(k, c)| CumulativeRow {
                    k,
                    lipschitz: sched.cumulative[k],
                    curvature: Some(*c),
                })
                .collect(),
            total,
            anchored: report.anchor.is_some(),
            anchor_index,
            global_total: global,
            note: anchored_note(total, global),
            wall_time_seconds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub budget: f64,
    pub certified_accuracy_order0: f64,
    pub certified_accuracy_order1: f64,
    pub gap: GapStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationSummary {
    pub clean_accuracy: f64,
    pub correct: usize,
    pub misclassified: usize,
    pub unbounded: usize,
    /// Mean radius of the requested order, misclassified samples counting
    /// as 0 and unbounded ones left out.
    pub mean_radius: f64,
    pub mean_radius0: f64,
    pub mean_radius1: f64,
    pub budgets: Vec<BudgetRow>,
}

fn mean_radius(certs: &[Certificate], order: u8) -> f64 {
    let finite: Vec<f64> = certs
        .iter()
        .map(|c| c.radius(order))
        .filter(|r| r.is_finite())
        .collect();
    if finite.is_empty() {
        0.0
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

impl CertificationSummary {
    pub fn new(certs: &[Certificate], order: u8, budgets: &[f64]) -> Self {
        let correct = certs.iter().filter(|c| c.correct).count();
        Self {
            clean_accuracy: if certs.is_empty() {
                0.0
            } else {
                correct as f64 / certs.len() as f64
            },
            correct,
            misclassified: certs.len() - correct,
            unbounded: certs.iter().filter(|c| c.unbounded).count(),
            mean_radius: mean_radius(certs, order),
            mean_radius0: mean_radius(certs, 0),
            mean_radius1: mean_radius(certs, 1),
            budgets: budgets
                .iter()
                .map(|&b| BudgetRow {
                    budget: b,
                    certified_accuracy_order0: certified_accuracy(certs, 0, b),
                    certified_accuracy_order1: certified_accuracy(certs, 1, b),
                    gap: certification_gap(certs, b),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub model_hash: String,
    pub model_name: String,
    pub norm: NormKind,
    pub order: u8,
    pub source: ConstantSource,
    pub layer_method: LayerCurvatureMethod,
    pub n_samples: usize,
    pub summary: CertificationSummary,
    pub certificates: Vec<Certificate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub sample: usize,
    pub label: usize,
    pub correct: bool,
    pub infeasible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realized: Option<bool>,
}

impl AttackRow {
    pub fn from_certificate(c: &Certificate) -> Self {
        Self {
            sample: c.sample,
            label: c.label,
            correct: c.correct,
            infeasible: c.attack_infeasible,
            radius: c.attack.as_ref().map(|a| a.radius),
            class: c.attack.as_ref().map(|a| a.class),
            delta: c.attack.as_ref().map(|a| a.delta.clone()),
            realized: c.attack.as_ref().map(|a| a.realized),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `[0, max]`.
    pub fn new(values: &[f64], bins: usize) -> Self {
        let max = values.iter().copied().fold(0.0, f64::max);
        if values.is_empty() || bins == 0 || max == 0.0 {
            return Self {
                edges: vec![0.0, max],
                counts: vec![values.len()],
            };
        }
        let edges: Vec<f64> = (0..=bins).map(|k| max * k as f64 / bins as f64).collect();
        let mut counts = vec![0; bins];
        for v in values {
            let k = ((v / max) * bins as f64).floor() as usize;
            counts[k.min(bins - 1)] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackBudgetRow {
    pub budget: f64,
    /// Fraction of all samples with an attack radius `≤ budget`.
    pub attackable_fraction: f64,
    /// Clean accuracy minus the attackable fraction.
    pub robust_accuracy_upper_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub clean_accuracy: f64,
    pub feasible: usize,
    pub infeasible: usize,
    pub realized: usize,
    pub mean_radius: f64,
    pub budgets: Vec<AttackBudgetRow>,
    pub histogram: Histogram,
}

impl AttackSummary {
    pub fn new(certs: &[Certificate], budgets: &[f64]) -> Self {
        let radii: Vec<f64> = certs.iter().filter_map(Certificate::attack_radius).collect();
        let t = certs.len().max(1) as f64;
        let clean = certs.iter().filter(|c| c.correct).count() as f64 / t;
        Self {
            clean_accuracy: clean,
            feasible: radii.len(),
            infeasible: certs.iter().filter(|c| c.attack_infeasible).count(),
            realized: certs
                .iter()
                .filter(|c| c.attack.as_ref().is_some_and(|a| a.realized))
                .count(),
            mean_radius: if radii.is_empty() {
                0.0
            } else {
                radii.iter().sum::<f64>() / radii.len() as f64
            },
            budgets: budgets
                .iter()
                .map(|&b| {
                    let ub = robust_accuracy_upper_bound(certs, b);
                    AttackBudgetRow {
                        budget: b,
                        attackable_fraction: clean - ub,
                        robust_accuracy_upper_bound: ub,
                    }
                })
                .collect(),
            histogram: Histogram::new(&radii, 20),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub model_hash: String,
    pub model_name: String,
    pub norm: NormKind,
    pub source: ConstantSource,
    pub n_samples: usize,
    pub summary: AttackSummary,
    pub records: Vec<AttackRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_seconds: Option<f64>,
}
