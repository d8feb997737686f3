//! MAE/MRE evaluation, overall, per class and per distance range.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kitti::KittiClass;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metric over an empty set is undefined")]
    EmptySet,
    #[error("lengths differ: {preds} predictions vs {truths} truths")]
    LengthMismatch { preds: usize, truths: usize },
    #[error("truth distance {0} is not strictly positive")]
    NonPositiveTruth(f64),
    #[error("pose angle {0} outside [0, 90] degrees")]
    PoseOutOfRange(f64),
}

fn check_lengths(preds: &[f64], truths: &[f64]) -> Result<(), EvalError> {
    if preds.is_empty() {
        return Err(EvalError::EmptySet);
    }
    if preds.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    Ok(())
}

/// Mean absolute error, meters.
pub fn mae(preds: &[f64], truths: &[f64]) -> Result<f64, EvalError> {
    check_lengths(preds, truths)?;
    let sum: f64 = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(sum / preds.len() as f64)
}

/// Mean relative error, a fraction; every truth must be > 0.
pub fn mre(preds: &[f64], truths: &[f64]) -> Result<f64, EvalError> {
    check_lengths(preds, truths)?;
    let mut sum = 0.0;
    for (p, t) in preds.iter().zip(truths) {
        if *t <= 0.0 {
            return Err(EvalError::NonPositiveTruth(*t));
        }
        sum += (p - t).abs() / t;
    }
    Ok(sum / preds.len() as f64)
}

/// Mean absolute orientation error in degrees over the folded [0, 90] range
/// (linear, no circular wrap).
pub fn pose_mae(pred_deg: &[f64], truth_deg: &[f64]) -> Result<f64, EvalError> {
    check_lengths(pred_deg, truth_deg)?;
    for &v in pred_deg.iter().chain(truth_deg) {
        if !(0.0..=90.0).contains(&v) {
            return Err(EvalError::PoseOutOfRange(v));
        }
    }
    mae(pred_deg, truth_deg)
}

/// Metric triple for one evaluation scope; metrics are `None` when the
/// scope is empty (for MRE: when no positive-truth samples exist).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeMetrics {
    pub count: usize,
    pub mae_m: Option<f64>,
    pub mre_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeBin {
    pub lo_m: f64,
    pub hi_m: f64,
    pub metrics: ScopeMetrics,
}

/// Per-class and per-range aggregates, the machine-readable counterpart of
/// the class-wise/range-wise evaluation figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: ScopeMetrics,
    pub per_class: Vec<(String, ScopeMetrics)>,
    /// Nine 10 m bins to 90 m, then a [90, 150] tail; bins half-open except
    /// the last.
    pub per_range: Vec<RangeBin>,
    pub pose_mae_deg: Option<f64>,
    /// Samples with truth distance exactly 0: kept for MAE, excluded from
    /// MRE.
    pub zero_truth_excluded_from_mre: usize,
}

/// Bin edges: [0,10), [10,20), ..., [80,90), [90,150].
pub fn range_bin_edges() -> Vec<(f64, f64)> {
    let mut edges: Vec<(f64, f64)> = (0..9).map(|i| (10.0 * i as f64, 10.0 * (i + 1) as f64)).collect();
    edges.push((90.0, 150.0));
    edges
}

fn bin_index(truth: f64) -> usize {
    if truth >= 90.0 {
        9
    } else {
        (truth / 10.0).floor() as usize
    }
}

fn scope_metrics(preds: &[f64], truths: &[f64]) -> ScopeMetrics {
    if preds.is_empty() {
        return ScopeMetrics {
            count: 0,
            mae_m: None,
            mre_fraction: None,
        };
    }
    let mae_m = mae(preds, truths).ok();
    let positive: (Vec<f64>, Vec<f64>) = preds
        .iter()
        .zip(truths)
        .filter(|(_, &t)| t > 0.0)
        .map(|(&p, &t)| (p, t))
        .unzip();
    let mre_fraction = if positive.0.is_empty() {
        None
    } else {
        mre(&positive.0, &positive.1).ok()
    };
    ScopeMetrics {
        count: preds.len(),
        mae_m,
        mre_fraction,
    }
}

/// Aggregates (prediction, truth, class) triples into the full report.
/// Truths must lie in [0, 150] (the preprocessing contract).
pub fn build_report(
    pairs: &[(f64, f64, KittiClass)],
    pose_pairs: Option<&[(f64, f64)]>,
) -> Result<EvalReport, EvalError> {
    let preds: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let truths: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let zero_truths = truths.iter().filter(|&&t| t == 0.0).count();

    let mut per_class = Vec::new();
    for class in crate::kitti::TRAIN_CLASSES {
        let (cp, ct): (Vec<f64>, Vec<f64>) = pairs
            .iter()
            .filter(|p| p.2 == class)
            .map(|p| (p.0, p.1))
            .unzip();
        per_class.push((class.name().to_string(), scope_metrics(&cp, &ct)));
    }

    let edges = range_bin_edges();
    let mut binned: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); edges.len()];
    for &(p, t, _) in pairs {
        let b = &mut binned[bin_index(t)];
        b.0.push(p);
        b.1.push(t);
    }
    let per_range = edges
        .iter()
        .zip(&binned)
        .map(|(&(lo_m, hi_m), (bp, bt))| RangeBin {
            lo_m,
            hi_m,
            metrics: scope_metrics(bp, bt),
        })
        .collect();

    let pose_mae_deg = match pose_pairs {
        Some(pp) if !pp.is_empty() => {
            let (p, t): (Vec<f64>, Vec<f64>) = pp.iter().copied().unzip();
            Some(pose_mae(&p, &t)?)
        }
        _ => None,
    };

    Ok(EvalReport {
        overall: scope_metrics(&preds, &truths),
        per_class,
        per_range,
        pose_mae_deg,
        zero_truth_excluded_from_mre: zero_truths,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Flat CSV `scope,key,count,mae_m,mre_pct` (empty metric cells for
    /// empty scopes).
    pub fn to_csv(&self) -> String {
        fn cell(v: Option<f64>, scale: f64) -> String {
            v.map(|x| format!("{:.6}", x * scale)).unwrap_or_default()
        }
        let mut out = String::from("scope,key,count,mae_m,mre_pct\n");
        out.push_str(&format!(
            "overall,all,{},{},{}\n",
            self.overall.count,
            cell(self.overall.mae_m, 1.0),
            cell(self.overall.mre_fraction, 100.0)
        ));
        for (name, m) in &self.per_class {
            out.push_str(&format!(
                "class,{},{},{},{}\n",
                name,
                m.count,
                cell(m.mae_m, 1.0),
                cell(m.mre_fraction, 100.0)
            ));
        }
        for bin in &self.per_range {
            out.push_str(&format!(
                "range,{}-{},{},{},{}\n",
                bin.lo_m,
                bin.hi_m,
                bin.metrics.count,
                cell(bin.metrics.mae_m, 1.0),
                cell(bin.metrics.mre_fraction, 100.0)
            ));
        }
        if let Some(p) = self.pose_mae_deg {
            out.push_str(&format!("pose,mae_deg,,{p:.6},\n"));
        }
        out
    }
}
