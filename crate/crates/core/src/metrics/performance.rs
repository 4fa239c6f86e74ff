use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::types::PredictionRecord;

/// One-vs-rest counts pooled over every class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionTotals {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    // zero denominator reported as 0
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionTotals {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `(N, accuracy)` for each requested N.
    pub top_n: Vec<(usize, f64)>,
    pub auc_micro: f64,
    pub totals: ConfusionTotals,
}

impl PerformanceReport {
    /// Flat `name -> value` view: precision, recall, f1, topN..., auc_micro.
    pub fn details(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::from([
            ("precision".to_string(), self.precision),
            ("recall".to_string(), self.recall),
            ("f1".to_string(), self.f1),
            ("auc_micro".to_string(), self.auc_micro),
        ]);
        for (n, acc) in &self.top_n {
            out.insert(format!("top{n}"), *acc);
        }
        out
    }
}

/// Classes ordered by descending probability, ties to the lower index.
fn ranking(probs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx
}

/// Area under the pooled ROC curve; tied scores contribute one half.
fn auc(scored: &mut [(f64, bool)]) -> Result<f64, MetricError> {
    let pos = scored.iter().filter(|s| s.1).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::DegenerateAuc);
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Mann-Whitney U with mid-ranks for ties
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            j += 1;
        }
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid_rank * scored[i..j].iter().filter(|s| s.1).count() as f64;
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

pub fn performance_metrics(
    preds: &[PredictionRecord],
    labels: &[usize],
    top_ns: &[usize],
) -> Result<PerformanceReport, MetricError> {
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    if preds.len() != labels.len() {
        return Err(MetricError::LengthMismatch(preds.len(), labels.len()));
    }
    let classes = preds[0].n_classes();
    if let Some(p) = preds.iter().find(|p| p.n_classes() != classes) {
        return Err(MetricError::Shape(format!("{} vs {} classes", p.n_classes(), classes)));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(MetricError::Label { label, classes });
    }
    let mut totals = ConfusionTotals::default();
    let mut hits = vec![0usize; top_ns.len()];
    let mut scored = Vec::with_capacity(preds.len() * classes);
    for (p, &label) in preds.iter().zip(labels) {
        for c in 0..classes {
            let predicted = c == p.top1_index;
            let actual = c == label;
            match (predicted, actual) {
                (true, true) => totals.tp += 1,
                (true, false) => totals.fp += 1,
                (false, true) => totals.fn_ += 1,
                (false, false) => totals.tn += 1,
            }
            scored.push((p.probs[c], actual));
        }
        let rank = ranking(&p.probs);
        let pos = rank.iter().position(|&c| c == label).expect("label in range");
        for (h, &n) in hits.iter_mut().zip(top_ns) {
            if pos < n {
                *h += 1;
            }
        }
    }
    let n = preds.len() as f64;
    Ok(PerformanceReport {
        precision: totals.precision(),
        recall: totals.recall(),
        f1: totals.f1(),
        top_n: top_ns.iter().zip(hits).map(|(&k, h)| (k, h as f64 / n)).collect(),
        auc_micro: auc(&mut scored)?,
        totals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded_rng, standard_normal, uniform01};

    fn rec(logits: &[f64]) -> PredictionRecord {
        PredictionRecord::from_logits(logits.to_vec()).unwrap()
    }

    fn auc_brute(scored: &[(f64, bool)]) -> f64 {
        let (mut s, mut n) = (0.0, 0.0);
        for a in scored.iter().filter(|x| x.1) {
            for b in scored.iter().filter(|x| !x.1) {
                s += if a.0 > b.0 { 1.0 } else if a.0 == b.0 { 0.5 } else { 0.0 };
                n += 1.0;
            }
        }
        s / n
    }

    #[test]
    fn perfect_predictions() {
        let preds = vec![rec(&[5.0, 0.0, 0.0]), rec(&[0.0, 5.0, 0.0]), rec(&[0.0, 0.0, 5.0])];
        let r = performance_metrics(&preds, &[0, 1, 2], &[1]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.auc_micro), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(r.top_n, vec![(1, 1.0)]);
    }

    #[test]
    fn pooled_counts_formula() {
        let t = ConfusionTotals {
            tp: 3,
            fp: 1,
            tn: 11,
            fn_: 1,
        };
        assert_eq!((t.precision(), t.recall(), t.f1()), (0.75, 0.75, 0.75));
    }

    #[test]
    fn top2_accuracy() {
        // true label ranked second in three of four samples
        let preds = vec![
            rec(&[3.0, 2.0, 0.0]),
            rec(&[2.0, 3.0, 0.0]),
            rec(&[0.0, 3.0, 2.0]),
            rec(&[0.0, 2.0, 3.0]),
        ];
        let r = performance_metrics(&preds, &[1, 0, 2, 0], &[1, 2]).unwrap();
        assert_eq!(r.top_n, vec![(1, 0.0), (2, 0.75)]);
    }

    #[test]
    fn ties_rank_lower_index_first() {
        let preds = vec![rec(&[1.0, 1.0, 0.0])];
        let r = performance_metrics(&preds, &[1], &[1, 2]).unwrap();
        assert_eq!(r.top_n, vec![(1, 0.0), (2, 1.0)]);
    }

    #[test]
    fn single_label_identity() {
        let mut rng = seeded_rng(21);
        let preds: Vec<PredictionRecord> = (0..50)
            .map(|_| rec(&(0..4).map(|_| standard_normal(&mut rng)).collect::<Vec<_>>()))
            .collect();
        let labels: Vec<usize> = (0..50).map(|_| (uniform01(&mut rng) * 4.0) as usize).collect();
        let r = performance_metrics(&preds, &labels, &[1]).unwrap();
        let acc = r.top_n[0].1;
        assert!((r.precision - acc).abs() < 1e-15);
        assert!((r.recall - acc).abs() < 1e-15);
        assert!((r.f1 - acc).abs() < 1e-15);
        assert_eq!(r.totals.total(), 200);
    }

    #[test]
    fn auc_matches_pairwise_count() {
        let mut rng = seeded_rng(8);
        let mut scored: Vec<(f64, bool)> = (0..120)
            .map(|_| ((uniform01(&mut rng) * 10.0).floor() / 10.0, uniform01(&mut rng) < 0.3))
            .collect();
        let expected = auc_brute(&scored);
        assert!((auc(&mut scored).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(performance_metrics(&[], &[], &[1]), Err(MetricError::Empty));
        let one_class = vec![rec(&[0.0])];
        assert_eq!(performance_metrics(&one_class, &[0], &[1]), Err(MetricError::DegenerateAuc));
        let p = vec![rec(&[0.0, 1.0])];
        assert!(matches!(performance_metrics(&p, &[2], &[1]), Err(MetricError::Label { .. })));
    }
}
