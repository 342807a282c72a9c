use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Percentage of matching labels.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(Error::invalid("accuracy needs equal, non-empty label vectors"));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(100.0 * hits as f64 / truth.len() as f64)
}

/// Rank-statistic AUC in `[0, 1]`; score ties earn half credit.
///
/// `None` when either the positive or the negative set is empty.
pub fn auc_binary(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average 1-based ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum_pos += order[i..j].iter().filter(|&&o| positive[o]).count() as f64 * avg_rank;
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroAuc {
    /// Macro average over the classes that could be scored, in percent.
    pub auc: f64,
    /// Per-class AUC in percent; `None` for skipped classes.
    pub per_class: Vec<Option<f64>>,
    pub skipped: Vec<usize>,
}

/// One-vs-rest AUC per class from an `n × C` score matrix, macro-averaged.
pub fn auc_macro(scores: &DMatrix<f64>, labels: &[usize]) -> Result<MacroAuc> {
    if scores.nrows() != labels.len() {
        return Err(Error::invalid(format!("{} score rows but {} labels", scores.nrows(), labels.len())));
    }
    let mut per_class = Vec::with_capacity(scores.ncols());
    let mut skipped = Vec::new();
    for c in 0..scores.ncols() {
        let col: Vec<f64> = scores.column(c).iter().copied().collect();
        let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        match auc_binary(&col, &pos) {
            Some(a) => per_class.push(Some(100.0 * a)),
            None => {
                per_class.push(None);
                skipped.push(c);
            }
        }
    }
    let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::invalid("no class has both positive and negative samples"));
    }
    Ok(MacroAuc {
        auc: valid.iter().sum::<f64>() / valid.len() as f64,
        per_class,
        skipped,
    })
}
