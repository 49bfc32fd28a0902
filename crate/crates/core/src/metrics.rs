//! Evaluation metrics geared to imbalanced data: per-class recall averages,
//! imbalance factor, rank-based AUC, forgetting, and effect size.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Mean per-class recall. Classes without any true example are excluded
/// from the mean and listed in `excluded_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtrScore {
    pub value: f64,
    pub per_class_recall: Vec<Option<f64>>,
    pub excluded_classes: Vec<usize>,
}

/// Computes long-tailed recognition accuracy: recall per class, averaged
/// over the classes that actually appear in `labels`.
pub fn ltr_accuracy(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<LtrScore> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("label set"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "got {} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().chain(predictions).find(|&&l| l >= num_classes) {
        return Err(Error::Invalid(format!(
            "class index {bad} out of range for {num_classes} classes"
        )));
    }
    let mut total = vec![0usize; num_classes];
    let mut correct = vec![0usize; num_classes];
    for (&pred, &label) in predictions.iter().zip(labels) {
        total[label] += 1;
        if pred == label {
            correct[label] += 1;
        }
    }
    let mut per_class = Vec::with_capacity(num_classes);
    let mut excluded = Vec::new();
    let mut sum = 0.0;
    let mut present = 0usize;
    for class in 0..num_classes {
        if total[class] == 0 {
            per_class.push(None);
            excluded.push(class);
        } else {
            let recall = correct[class] as f64 / total[class] as f64;
            per_class.push(Some(recall));
            sum += recall;
            present += 1;
        }
    }
    Ok(LtrScore {
        value: sum / present as f64,
        per_class_recall: per_class,
        excluded_classes: excluded,
    })
}

/// Ratio of the largest class count to the smallest. All classes must have
/// at least one record, otherwise the ratio is undefined.
pub fn imbalance_factor(class_counts: &[usize]) -> Result<f64> {
    if class_counts.is_empty() {
        return Err(Error::EmptyInput("class counts"));
    }
    let max = *class_counts.iter().max().unwrap();
    let min = *class_counts.iter().min().unwrap();
    if min == 0 {
        return Err(Error::Invalid(
            "imbalance factor undefined: a class has zero records".into(),
        ));
    }
    Ok(max as f64 / min as f64)
}

/// One-versus-rest AUC for a single class from the rank-sum statistic,
/// with midranks for tied scores. `None` when the class has no positives
/// or no negatives.
pub fn one_vs_rest_auc(scores: &[f64], labels: &[usize], class: usize) -> Option<f64> {
    let n = scores.len();
    let num_pos = labels.iter().filter(|&&l| l == class).count();
    let num_neg = n - num_pos;
    if num_pos == 0 || num_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Tied block [i, j] shares the average of ranks i+1..=j+1.
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        i = j + 1;
    }
    let positive_rank_sum: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&l, _)| l == class)
        .map(|(_, &r)| r)
        .sum();
    let u = positive_rank_sum - (num_pos * (num_pos + 1)) as f64 / 2.0;
    Some(u / (num_pos as f64 * num_neg as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroAuc {
    /// Mean over classes with both positives and negatives; `None` if no
    /// class qualifies.
    pub value: Option<f64>,
    pub per_class: Vec<Option<f64>>,
    pub excluded_classes: Vec<usize>,
}

/// Macro one-versus-rest AUC over score columns. Classes lacking positives
/// or negatives are excluded and flagged rather than polluting the mean.
pub fn auc_macro(scores: ArrayView2<f64>, labels: &[usize]) -> Result<MacroAuc> {
    let (n, num_classes) = scores.dim();
    if n == 0 {
        return Err(Error::EmptyInput("score matrix"));
    }
    if labels.len() != n {
        return Err(Error::Invalid(format!(
            "got {} labels for {} score rows",
            labels.len(),
            n
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Invalid(format!(
            "label {bad} out of range for {num_classes} score columns"
        )));
    }
    let mut per_class = Vec::with_capacity(num_classes);
    let mut excluded = Vec::new();
    let mut sum = 0.0;
    let mut counted = 0usize;
    for class in 0..num_classes {
        let column: Vec<f64> = scores.column(class).iter().copied().collect();
        match one_vs_rest_auc(&column, labels, class) {
            Some(auc) => {
                per_class.push(Some(auc));
                sum += auc;
                counted += 1;
            }
            None => {
                per_class.push(None);
                excluded.push(class);
            }
        }
    }
    Ok(MacroAuc {
        value: (counted > 0).then(|| sum / counted as f64),
        per_class,
        excluded_classes: excluded,
    })
}

/// Arithmetic mean over the tasks seen so far.
pub fn mean_over_seen(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("task metric row"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Per-task forgetting from a lower-triangular metric table: row `t` holds
/// the metric on test tasks 0..=t after training task t. Forgetting of task
/// `j` is its best score at or after task j minus its final score.
pub fn forgetting(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let num_tasks = rows.len();
    if num_tasks < 2 {
        return Err(Error::Invalid(format!(
            "forgetting needs at least 2 tasks, got {num_tasks}"
        )));
    }
    for (t, row) in rows.iter().enumerate() {
        if row.len() != t + 1 {
            return Err(Error::Invalid(format!(
                "row {t} has {} entries, expected {}",
                row.len(),
                t + 1
            )));
        }
    }
    let last = &rows[num_tasks - 1];
    let mut out = Vec::with_capacity(num_tasks);
    for j in 0..num_tasks {
        let best = rows[j..]
            .iter()
            .map(|row| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        out.push(best - last[j]);
    }
    Ok(out)
}

/// Cohen's d: (mean(a) - mean(b)) / pooled standard deviation, with the
/// usual n-1 weighting in the pooled variance.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Invalid(format!(
            "cohens_d needs at least 2 samples per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let sum_sq = |xs: &[f64], m: f64| xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    let (mean_a, mean_b) = (mean(a), mean(b));
    let pooled_var =
        (sum_sq(a, mean_a) + sum_sq(b, mean_b)) / (a.len() + b.len() - 2) as f64;
    if pooled_var == 0.0 {
        return Err(Error::Invalid(
            "cohens_d undefined: pooled variance is zero".into(),
        ));
    }
    Ok((mean_a - mean_b) / pooled_var.sqrt())
}

/// Everything we measure on one evaluation set with one set of scores.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub num_examples: usize,
    pub class_counts: Vec<usize>,
    pub per_class_correct: Vec<usize>,
    pub overall_accuracy: f64,
    pub ltr: f64,
    pub per_class_recall: Vec<Option<f64>>,
    pub excluded_classes: Vec<usize>,
    pub macro_auc: Option<f64>,
    pub per_class_auc: Vec<Option<f64>>,
}

impl EvalResult {
    /// Mean recall over present classes other than `skip`, or `None` when
    /// nothing else is present.
    pub fn ltr_excluding(&self, skip: usize) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (class, recall) in self.per_class_recall.iter().enumerate() {
            if class == skip {
                continue;
            }
            if let Some(r) = recall {
                sum += r;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Argmax per row; ties go to the lowest class index.
pub fn predictions_from_scores(scores: ArrayView2<f64>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Scores a model's per-class outputs against true labels in one pass.
pub fn evaluate(scores: ArrayView2<f64>, labels: &[usize]) -> Result<EvalResult> {
    let (n, num_classes) = scores.dim();
    if n == 0 {
        return Err(Error::EmptyInput("evaluation set"));
    }
    let predictions = predictions_from_scores(scores);
    let ltr = ltr_accuracy(&predictions, labels, num_classes)?;
    let mut class_counts = vec![0usize; num_classes];
    let mut per_class_correct = vec![0usize; num_classes];
    let mut correct = 0usize;
    for (&pred, &label) in predictions.iter().zip(labels) {
        class_counts[label] += 1;
        if pred == label {
            per_class_correct[label] += 1;
            correct += 1;
        }
    }
    let auc = auc_macro(scores, labels)?;
    Ok(EvalResult {
        num_examples: n,
        class_counts,
        per_class_correct,
        overall_accuracy: correct as f64 / n as f64,
        ltr: ltr.value,
        per_class_recall: ltr.per_class_recall,
        excluded_classes: ltr.excluded_classes,
        macro_auc: auc.value,
        per_class_auc: auc.per_class,
    })
}
