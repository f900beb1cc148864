//! Evaluation protocols: accuracy, per-song aggregation, thresholded
//! micro/macro precision-recall-F1, and per-tag ROC AUC.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    Accuracy,
    MultiLabelPrf,
    TagAuc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub label: String,
    pub values: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub task: EvalTask,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_label: Vec<LabelRow>,
    /// Labels left out of the averages (AUC tags lacking a positive or a negative).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded: Vec<String>,
}

impl EvalResult {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

/// Fraction of positions where `predicted == truth`.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} truths",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Empty("accuracy of zero examples".into()));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Index of the largest value; the first one on ties.
pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Element-wise mean of equal-length rows.
pub fn mean_rows<R: AsRef<[f32]>>(rows: &[R]) -> Vec<f64> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let mut acc = vec![0.0f64; first.as_ref().len()];
    for r in rows {
        for (a, &v) in acc.iter_mut().zip(r.as_ref()) {
            *a += f64::from(v);
        }
    }
    acc.iter().map(|a| a / rows.len() as f64).collect()
}

/// Averages per-excerpt outputs within each song. Songs come back in order
/// of first appearance.
pub fn aggregate_song<S: AsRef<str>, R: AsRef<[f32]>>(items: &[(S, R)]) -> Vec<(String, Vec<f64>)> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&[f32]>> = HashMap::new();
    for (song, row) in items {
        let song = song.as_ref();
        groups
            .entry(song)
            .or_insert_with(|| {
                order.push(song);
                Vec::new()
            })
            .push(row.as_ref());
    }
    order
        .into_iter()
        .map(|s| (s.to_owned(), mean_rows(&groups[s])))
        .collect()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn check_matrix<A, B>(scores: &[Vec<A>], truths: &[Vec<B>], labels: &[String]) -> Result<()> {
    if scores.len() != truths.len() {
        return Err(Error::shape(format!("{} score rows for {} truth rows", scores.len(), truths.len())));
    }
    for (s, t) in scores.iter().zip(truths) {
        if s.len() != labels.len() || t.len() != labels.len() {
            return Err(Error::shape(format!(
                "row widths {}/{} do not match {} labels",
                s.len(),
                t.len(),
                labels.len()
            )));
        }
    }
    Ok(())
}

/// Binarizes `scores` at `threshold` (a score at or above it is a positive)
/// and reports micro and macro precision, recall and F1.
///
/// Micro values pool TP/FP/FN over every item and label; macro values are
/// unweighted means of the per-label values. A zero denominator scores 0.
pub fn prf_multilabel(
    scores: &[Vec<f64>],
    truths: &[Vec<bool>],
    threshold: f64,
    labels: &[String],
) -> Result<EvalResult> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold {threshold} outside (0, 1)")));
    }
    check_matrix(scores, truths, labels)?;
    let mut counts = vec![[0usize; 3]; labels.len()];
    for (s, t) in scores.iter().zip(truths) {
        for (j, c) in counts.iter_mut().enumerate() {
            match (s[j] >= threshold, t[j]) {
                (true, true) => c[0] += 1,
                (true, false) => c[1] += 1,
                (false, true) => c[2] += 1,
                (false, false) => {}
            }
        }
    }
    let mut per_label = Vec::with_capacity(labels.len());
    let (mut sum_p, mut sum_r, mut sum_f) = (0.0, 0.0, 0.0);
    for (label, &[tp, fp, fn_]) in labels.iter().zip(&counts) {
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        let f = f1(p, r);
        sum_p += p;
        sum_r += r;
        sum_f += f;
        per_label.push(LabelRow {
            label: label.clone(),
            values: BTreeMap::from([
                ("precision".to_owned(), p),
                ("recall".to_owned(), r),
                ("f1".to_owned(), f),
                ("support".to_owned(), (tp + fn_) as f64),
            ]),
        });
    }
    let (tp, fp, fn_) = counts
        .iter()
        .fold((0, 0, 0), |(a, b, c), x| (a + x[0], b + x[1], c + x[2]));
    let micro_p = ratio(tp, tp + fp);
    let micro_r = ratio(tp, tp + fn_);
    let n = labels.len().max(1) as f64;
    let metrics = BTreeMap::from([
        ("precision_micro".to_owned(), micro_p),
        ("recall_micro".to_owned(), micro_r),
        ("f1_micro".to_owned(), f1(micro_p, micro_r)),
        ("precision_macro".to_owned(), sum_p / n),
        ("recall_macro".to_owned(), sum_r / n),
        ("f1_macro".to_owned(), sum_f / n),
    ]);
    Ok(EvalResult {
        task: EvalTask::MultiLabelPrf,
        metrics,
        per_label,
        excluded: Vec::new(),
    })
}

/// ROC AUC as the normalized Mann–Whitney statistic with average ranks for
/// ties. `None` when either class is absent.
pub fn auc(scores: &[f64], truths: &[bool]) -> Option<f64> {
    let n_pos = truths.iter().filter(|&&t| t).count();
    let n_neg = truths.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their average
        let rank = (i + j + 2) as f64 / 2.0;
        pos_rank_sum += rank * idx[i..=j].iter().filter(|&&k| truths[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Per-tag AUC over items (rows) and its unweighted mean over scoreable tags.
pub fn auc_per_tag(scores: &[Vec<f64>], truths: &[Vec<bool>], labels: &[String]) -> Result<EvalResult> {
    check_matrix(scores, truths, labels)?;
    let mut per_label = Vec::new();
    let mut excluded = Vec::new();
    for (j, label) in labels.iter().enumerate() {
        let s: Vec<f64> = scores.iter().map(|r| r[j]).collect();
        let t: Vec<bool> = truths.iter().map(|r| r[j]).collect();
        match auc(&s, &t) {
            Some(a) => per_label.push(LabelRow {
                label: label.clone(),
                values: BTreeMap::from([("auc".to_owned(), a)]),
            }),
            None => excluded.push(label.clone()),
        }
    }
    if per_label.is_empty() {
        return Err(Error::Empty("no tag has both a positive and a negative item".into()));
    }
    let mean = per_label.iter().map(|r| r.values["auc"]).sum::<f64>() / per_label.len() as f64;
    Ok(EvalResult {
        task: EvalTask::TagAuc,
        metrics: BTreeMap::from([
            ("auc_mean".to_owned(), mean),
            ("tags_scored".to_owned(), per_label.len() as f64),
        ]),
        per_label,
        excluded,
    })
}

/// Wraps a plain accuracy value.
pub fn accuracy_result(predicted: &[usize], truth: &[usize]) -> Result<EvalResult> {
    Ok(EvalResult {
        task: EvalTask::Accuracy,
        metrics: BTreeMap::from([("accuracy".to_owned(), accuracy(predicted, truth)?)]),
        per_label: Vec::new(),
        excluded: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn brute_auc(scores: &[f64], truths: &[bool]) -> f64 {
        let (mut num, mut pairs) = (0.0, 0.0);
        for (i, &ti) in truths.iter().enumerate() {
            for (j, &tj) in truths.iter().enumerate() {
                if ti && !tj {
                    pairs += 1.0;
                    num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Less => 0.0,
                    };
                }
            }
        }
        num / pairs
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("l{i}")).collect()
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0, 3, 0], &[1, 2, 3, 4]).unwrap(), 0.5);
        assert!(matches!(accuracy(&[], &[]), Err(Error::Empty(_))));
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn argmax_first_on_ties() {
        assert_eq!(argmax(&[0.1, 0.7, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[3.0f32]), 0);
    }

    #[test]
    fn song_means() {
        let items = vec![("a", vec![0.4f32]), ("b", vec![0.9]), ("a", vec![0.6])];
        let agg = aggregate_song(&items);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].0, "a");
        assert_abs_diff_eq!(agg[0].1[0], 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(agg[1].1[0], 0.9, epsilon = 1e-7);
    }

    #[test]
    fn perfect_prf() {
        let truths = vec![vec![true, false], vec![false, true], vec![true, true]];
        let scores: Vec<Vec<f64>> = truths
            .iter()
            .map(|r| r.iter().map(|&t| if t { 0.9 } else { 0.05 }).collect())
            .collect();
        let r = prf_multilabel(&scores, &truths, 0.2, &names(2)).unwrap();
        assert_eq!(r.metrics.len(), 6);
        assert!(r.metrics.values().all(|&v| v == 1.0), "{r:?}");
    }

    #[test]
    fn all_below_threshold_recall_zero() {
        let truths = vec![vec![true, false], vec![false, true]];
        let scores = vec![vec![0.1, 0.1], vec![0.19, 0.0]];
        let r = prf_multilabel(&scores, &truths, 0.2, &names(2)).unwrap();
        assert_eq!(r.metric("recall_micro"), Some(0.0));
        assert_eq!(r.metric("precision_micro"), Some(0.0));
        assert_eq!(r.metric("f1_macro"), Some(0.0));
    }

    #[test]
    fn hand_computed_macro() {
        // label A: TP 1, FN 1 → P 1, R 0.5. label B: TP 1, FP 1 → P 0.5, R 1.
        let truths = vec![vec![true, true], vec![true, false]];
        let scores = vec![vec![0.9, 0.9], vec![0.1, 0.9]];
        let r = prf_multilabel(&scores, &truths, 0.2, &names(2)).unwrap();
        assert_abs_diff_eq!(r.metric("precision_macro").unwrap(), 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(r.metric("recall_macro").unwrap(), 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(r.per_label[0].values["recall"], 0.5);
        assert_abs_diff_eq!(r.per_label[1].values["precision"], 0.5);
        // micro: TP 2, FP 1, FN 1
        assert_abs_diff_eq!(r.metric("precision_micro").unwrap(), 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.metric("f1_micro").unwrap(), 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn prf_rejects_bad_threshold() {
        assert!(prf_multilabel(&[], &[], 1.0, &[]).is_err());
        assert!(prf_multilabel(&[], &[], 0.0, &[]).is_err());
    }

    #[test]
    fn auc_cases() {
        assert_eq!(auc(&[0.9, 0.1], &[true, false]), Some(1.0));
        assert_eq!(auc(&[0.3; 5], &[true, false, true, false, false]), Some(0.5));
        assert_eq!(auc(&[0.1, 0.9], &[true, false]), Some(0.0));
        assert_eq!(auc(&[0.1, 0.9], &[true, true]), None);
    }

    #[test]
    fn degenerate_tags_excluded() {
        let scores = vec![vec![0.9, 0.2], vec![0.1, 0.3]];
        let truths = vec![vec![true, false], vec![false, false]];
        let r = auc_per_tag(&scores, &truths, &names(2)).unwrap();
        assert_eq!(r.excluded, ["l1"]);
        assert_eq!(r.metric("auc_mean"), Some(1.0));
        let truths = vec![vec![true, true], vec![true, true]];
        assert!(matches!(auc_per_tag(&scores, &truths, &names(2)), Err(Error::Empty(_))));
    }

    #[test]
    fn json_schema() {
        let r = auc_per_tag(&[vec![0.9], vec![0.1]], &[vec![true], vec![false]], &names(1)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["task"], "tag_auc");
        assert_eq!(v["per_label"][0]["values"]["auc"], 1.0);
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise(
            raw in prop::collection::vec((0u8..6, any::<bool>()), 2..60),
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| f64::from(*s) / 5.0).collect();
            let truths: Vec<bool> = raw.iter().map(|(_, t)| *t).collect();
            match auc(&scores, &truths) {
                Some(a) => prop_assert!((a - brute_auc(&scores, &truths)).abs() < 1e-9),
                None => prop_assert!(truths.iter().all(|&t| t) || truths.iter().all(|&t| !t)),
            }
        }

        #[test]
        fn auc_invariant_under_monotone_map(
            raw in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..40),
        ) {
            let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
            let truths: Vec<bool> = raw.iter().map(|r| r.1).collect();
            let mapped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(auc(&scores, &truths), auc(&mapped, &truths));
        }

        #[test]
        fn prf_bounds_and_harmonic_mean(
            rows in prop::collection::vec(prop::collection::vec((0.0f64..1.0, any::<bool>()), 3), 1..30),
        ) {
            let scores: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x.0).collect()).collect();
            let truths: Vec<Vec<bool>> = rows.iter().map(|r| r.iter().map(|x| x.1).collect()).collect();
            let r = prf_multilabel(&scores, &truths, 0.2, &names(3)).unwrap();
            prop_assert!(r.metrics.values().all(|v| (0.0..=1.0).contains(v)));
            let (p, rc) = (r.metrics["precision_micro"], r.metrics["recall_micro"]);
            if p > 0.0 && rc > 0.0 {
                prop_assert!((r.metrics["f1_micro"] - 2.0 * p * rc / (p + rc)).abs() < 1e-12);
            }
            let mean_p = r.per_label.iter().map(|l| l.values["precision"]).sum::<f64>() / 3.0;
            prop_assert!((mean_p - r.metrics["precision_macro"]).abs() < 1e-12);
        }

        #[test]
        fn aggregation_ignores_order(
            rows in prop::collection::vec((0u8..4, 0.0f32..1.0), 1..30),
            rot in 0usize..30,
        ) {
            let items: Vec<(String, Vec<f32>)> = rows.iter().map(|(s, v)| (format!("s{s}"), vec![*v])).collect();
            let mut rotated = items.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            let a: BTreeMap<String, Vec<f64>> = aggregate_song(&items).into_iter().collect();
            let b: BTreeMap<String, Vec<f64>> = aggregate_song(&rotated).into_iter().collect();
            for (song, va) in &a {
                prop_assert!((va[0] - b[song][0]).abs() < 1e-9);
                if (va[0] - 0.2).abs() > 1e-9 {
                    prop_assert_eq!(va[0] >= 0.2, b[song][0] >= 0.2);
                }
            }
        }
    }
}
