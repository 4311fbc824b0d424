//! Classification scores: balanced accuracy, Cohen's kappa, weighted F1,
//! AUROC and average precision, plus one-vs-rest averaging.
//!
//! Empty denominators (a class never predicted, no positives) give 0.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn check_labels(y_true: &[usize], y_pred: &[usize]) -> Result<usize> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::Data(format!(
            "need equal nonempty label vectors, got {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    Ok(y_true.iter().chain(y_pred).max().copied().unwrap_or(0) + 1)
}

/// `[true][pred]` counts.
fn confusion(y_true: &[usize], y_pred: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0usize; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        m[t][p] += 1;
    }
    m
}

/// Mean recall over the classes present in `y_true`.
pub fn balanced_accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    let k = check_labels(y_true, y_pred)?;
    let m = confusion(y_true, y_pred, k);
    let recalls: Vec<f64> = (0..k)
        .filter_map(|c| {
            let support: usize = m[c].iter().sum();
            (support > 0).then(|| m[c][c] as f64 / support as f64)
        })
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// `(p_o − p_e) / (1 − p_e)`; 0 when chance agreement is certain.
pub fn cohens_kappa(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    let k = check_labels(y_true, y_pred)?;
    let m = confusion(y_true, y_pred, k);
    let n = y_true.len() as f64;
    let p_o = (0..k).map(|c| m[c][c]).sum::<usize>() as f64 / n;
    let p_e: f64 = (0..k)
        .map(|c| {
            let row: usize = m[c].iter().sum();
            let col: usize = m.iter().map(|r| r[c]).sum();
            row as f64 * col as f64 / (n * n)
        })
        .sum();
    if p_e >= 1.0 {
        return Ok(0.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Support-weighted mean of per-class F1 over classes present in `y_true`.
pub fn weighted_f1(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    let k = check_labels(y_true, y_pred)?;
    let m = confusion(y_true, y_pred, k);
    let n = y_true.len() as f64;
    let mut total = 0.0;
    for c in 0..k {
        let support: usize = m[c].iter().sum();
        if support == 0 {
            continue;
        }
        let predicted: usize = m.iter().map(|r| r[c]).sum();
        let tp = m[c][c] as f64;
        let f1 = if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (support + predicted) as f64
        };
        total += support as f64 / n * f1;
    }
    Ok(total)
}

fn check_binary(y_true: &[bool], scores: &[f64]) -> Result<()> {
    if y_true.is_empty() || y_true.len() != scores.len() {
        return Err(Error::Data(format!(
            "need equal nonempty label/score vectors, got {} and {}",
            y_true.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Data("scores must be finite".into()));
    }
    Ok(())
}

/// Probability that a random positive outscores a random negative, ties
/// counted as one half. Computed from midranks. Undefined (data error) unless
/// both classes occur.
pub fn auroc(y_true: &[bool], scores: &[f64]) -> Result<f64> {
    check_binary(y_true, scores)?;
    let n_pos = y_true.iter().filter(|&&y| y).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data(
            "AUROC needs both positive and negative samples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&o| y_true[o]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Average precision `Σ (R_k − R_{k−1}) · P_k` over descending distinct score
/// thresholds. Undefined (data error) without positives.
pub fn auc_pr(y_true: &[bool], scores: &[f64]) -> Result<f64> {
    check_binary(y_true, scores)?;
    let n_pos = y_true.iter().filter(|&&y| y).count();
    if n_pos == 0 {
        return Err(Error::Data(
            "AUC-PR needs at least one positive sample".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut prev_recall, mut ap) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        tp += order[i..=j].iter().filter(|&&o| y_true[o]).count();
        seen += j - i + 1;
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev_recall) * tp as f64 / seen as f64;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingMetric {
    Auroc,
    AucPr,
}

/// Unweighted mean of one-vs-rest scores over classes present in `y_true`.
/// `scores` is row-major `[n, k]`.
pub fn multiclass_ovr(
    metric: RankingMetric,
    y_true: &[usize],
    scores: &[f64],
    k: usize,
) -> Result<f64> {
    if k == 0 || scores.len() != y_true.len() * k || y_true.iter().any(|&y| y >= k) {
        return Err(Error::Data(format!(
            "{} labels with {} scores for {k} classes",
            y_true.len(),
            scores.len()
        )));
    }
    let f = match metric {
        RankingMetric::Auroc => auroc,
        RankingMetric::AucPr => auc_pr,
    };
    let mut values = Vec::new();
    for c in 0..k {
        if !y_true.contains(&c) {
            continue;
        }
        let bin: Vec<bool> = y_true.iter().map(|&y| y == c).collect();
        let col: Vec<f64> = scores.iter().skip(c).step_by(k).copied().collect();
        values.push(f(&bin, &col)?);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    BalancedAccuracy,
    CohensKappa,
    WeightedF1,
    Auroc,
    AucPr,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::BalancedAccuracy,
        Metric::CohensKappa,
        Metric::WeightedF1,
        Metric::Auroc,
        Metric::AucPr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::BalancedAccuracy => "balanced_accuracy",
            Metric::CohensKappa => "cohens_kappa",
            Metric::WeightedF1 => "weighted_f1",
            Metric::Auroc => "auroc",
            Metric::AucPr => "auc_pr",
        }
    }

    pub fn parse(name: &str) -> Option<Metric> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    /// Scores predictions (`argmax` of `probs`) and probabilities `[n, k]`.
    /// Binary tasks use the class-1 column for ranking metrics; wider tasks
    /// average one-vs-rest.
    pub fn evaluate(self, y_true: &[usize], probs: &[f64], k: usize) -> Result<f64> {
        if k == 0 || probs.len() != y_true.len() * k {
            return Err(Error::Data(format!(
                "{} probabilities for {} samples of {k} classes",
                probs.len(),
                y_true.len()
            )));
        }
        let pred = argmax_rows(probs, k);
        let ranking = |m: RankingMetric| -> Result<f64> {
            if k == 2 {
                let bin: Vec<bool> = y_true.iter().map(|&y| y == 1).collect();
                let col: Vec<f64> = probs.iter().skip(1).step_by(2).copied().collect();
                match m {
                    RankingMetric::Auroc => auroc(&bin, &col),
                    RankingMetric::AucPr => auc_pr(&bin, &col),
                }
            } else {
                multiclass_ovr(m, y_true, probs, k)
            }
        };
        match self {
            Metric::BalancedAccuracy => balanced_accuracy(y_true, &pred),
            Metric::CohensKappa => cohens_kappa(y_true, &pred),
            Metric::WeightedF1 => weighted_f1(y_true, &pred),
            Metric::Auroc => ranking(RankingMetric::Auroc),
            Metric::AucPr => ranking(RankingMetric::AucPr),
        }
    }
}

/// Index of the first maximum of each row.
pub fn argmax_rows(values: &[f64], k: usize) -> Vec<usize> {
    values
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::parse(s).ok_or_else(|| {
            let names: Vec<&str> = Metric::ALL.iter().map(|m| m.name()).collect();
            Error::Config(format!("unknown metric {s:?}; expected one of {names:?}"))
        })
    }
}
