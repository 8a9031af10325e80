//! Selection performance metrics and the Φ_S feature-selection stability.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Selected and true covariate indicators of one repetition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    selected: Vec<bool>,
    truth: Vec<bool>,
}

impl SelectionOutcome {
    pub fn new(selected: Vec<bool>, truth: Vec<bool>) -> Result<Self> {
        if selected.len() != truth.len() {
            return Err(Error::InvalidArgument(format!(
                "selection has length {}, truth has length {}",
                selected.len(),
                truth.len()
            )));
        }
        Ok(Self { selected, truth })
    }

    /// Builds the indicators from index sets over `p` covariates.
    pub fn from_supports(selected: &[usize], truth: &[usize], p: usize) -> Result<Self> {
        let mask = |idx: &[usize]| -> Result<Vec<bool>> {
            let mut m = vec![false; p];
            for &i in idx {
                *m.get_mut(i).ok_or_else(|| {
                    Error::InvalidArgument(format!("index {i} out of range for p = {p}"))
                })? = true;
            }
            Ok(m)
        };
        Self::new(mask(selected)?, mask(truth)?)
    }

    pub fn selected(&self) -> &[bool] {
        &self.selected
    }

    pub fn truth(&self) -> &[bool] {
        &self.truth
    }

    pub fn p(&self) -> usize {
        self.truth.len()
    }

    pub fn n_selected(&self) -> usize {
        self.selected.iter().filter(|s| **s).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tpr: f64,
    pub fpr: f64,
    pub ppv: f64,
    pub f1: f64,
    /// Mean number of selected noise covariates.
    pub empirical_pfer: f64,
}

fn rep_confusion(o: &SelectionOutcome) -> Confusion {
    let (mut tp, mut fp, mut pos) = (0usize, 0usize, 0usize);
    for (&s, &t) in o.selected.iter().zip(&o.truth) {
        pos += t as usize;
        tp += (s && t) as usize;
        fp += (s && !t) as usize;
    }
    let neg = o.p() - pos;
    let sel = tp + fp;
    // Vacuous ratios: nothing to find counts as found, nothing to
    // mislabel counts as no false positives.
    let tpr = if pos == 0 { 1.0 } else { tp as f64 / pos as f64 };
    let fpr = if neg == 0 { 0.0 } else { fp as f64 / neg as f64 };
    let ppv = match (sel, pos) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        _ => tp as f64 / sel as f64,
    };
    let f1 = if tpr + ppv > 0.0 {
        2.0 * tpr * ppv / (tpr + ppv)
    } else {
        0.0
    };
    Confusion {
        tpr,
        fpr,
        ppv,
        f1,
        empirical_pfer: fp as f64,
    }
}

/// Per-repetition TPR, FPR, PPV, F1 and false-positive count, averaged.
///
/// An empty selection has PPV 0 (and hence F1 0) whenever there are true
/// covariates.
pub fn confusion_metrics(outcomes: &[SelectionOutcome]) -> Result<Confusion> {
    let first = outcomes
        .first()
        .ok_or_else(|| Error::InvalidArgument("no selection outcomes".into()))?;
    if outcomes.iter().any(|o| o.p() != first.p()) {
        return Err(Error::InvalidArgument("outcomes differ in length".into()));
    }
    let m = outcomes.len() as f64;
    let mut acc = Confusion {
        tpr: 0.0,
        fpr: 0.0,
        ppv: 0.0,
        f1: 0.0,
        empirical_pfer: 0.0,
    };
    for c in outcomes.iter().map(rep_confusion) {
        acc.tpr += c.tpr;
        acc.fpr += c.fpr;
        acc.ppv += c.ppv;
        acc.f1 += c.f1;
        acc.empirical_pfer += c.empirical_pfer;
    }
    Ok(Confusion {
        tpr: acc.tpr / m,
        fpr: acc.fpr / m,
        ppv: acc.ppv / m,
        f1: acc.f1 / m,
        empirical_pfer: acc.empirical_pfer / m,
    })
}

/// Stability `Φ_S = 1 − mean_f s_f² / ((k̄/p)(1 − k̄/p))` with
/// `s_f² = M/(M−1) p̂_f (1 − p̂_f)`.
///
/// `None` when fewer than two outcomes are given or the mean selection
/// size `k̄` is 0 or `p`.
pub fn phi_s(outcomes: &[SelectionOutcome]) -> Option<f64> {
    let m = outcomes.len();
    if m < 2 {
        return None;
    }
    let p = outcomes[0].p();
    if p == 0 || outcomes.iter().any(|o| o.p() != p) {
        return None;
    }
    let mf = m as f64;
    let mut freq = vec![0usize; p];
    for o in outcomes {
        for (c, &s) in freq.iter_mut().zip(&o.selected) {
            *c += s as usize;
        }
    }
    let k_bar = freq.iter().sum::<usize>() as f64 / mf;
    let r = k_bar / p as f64;
    let denom = r * (1.0 - r);
    if !(denom > 0.0) {
        return None;
    }
    let mean_var = freq
        .iter()
        .map(|&c| {
            let ph = c as f64 / mf;
            mf / (mf - 1.0) * ph * (1.0 - ph)
        })
        .sum::<f64>()
        / p as f64;
    Some(1.0 - mean_var / denom)
}

/// Monte Carlo summary of one experiment cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tpr: f64,
    pub fpr: f64,
    pub ppv: f64,
    pub f1: f64,
    pub phi_s: Option<f64>,
    pub empirical_pfer: f64,
    pub reps: usize,
}

impl MetricsReport {
    pub fn from_outcomes(outcomes: &[SelectionOutcome]) -> Result<Self> {
        let c = confusion_metrics(outcomes)?;
        Ok(Self {
            tpr: c.tpr,
            fpr: c.fpr,
            ppv: c.ppv,
            f1: c.f1,
            phi_s: phi_s(outcomes),
            empirical_pfer: c.empirical_pfer,
            reps: outcomes.len(),
        })
    }

    /// Unweighted mean of several reports; Φ_S averages the defined values.
    pub fn mean(reports: &[MetricsReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::InvalidArgument("no reports to average".into()));
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let phis: Vec<f64> = reports.iter().filter_map(|r| r.phi_s).collect();
        Ok(Self {
            tpr: avg(|r| r.tpr),
            fpr: avg(|r| r.fpr),
            ppv: avg(|r| r.ppv),
            f1: avg(|r| r.f1),
            phi_s: (!phis.is_empty()).then(|| phis.iter().sum::<f64>() / phis.len() as f64),
            empirical_pfer: avg(|r| r.empirical_pfer),
            reps: reports.iter().map(|r| r.reps).sum(),
        })
    }
}
