//! Held-out evaluation: confusion matrix, accuracy, ROC and AUC.
//!
//! Class order is (Good, Bad) and Bad is the positive class; ROC scores are
//! the model's P(Bad).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{model_forward, predicted_label, ModelParams};
use crate::pose::{Label, LabeledSequence};

/// Counts indexed `[actual][predicted]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn get(&self, actual: Label, predicted: Label) -> u64 {
        self.counts[actual.index()][predicted.index()]
    }

    pub fn true_positives(&self) -> u64 {
        self.get(Label::Bad, Label::Bad)
    }

    pub fn false_positives(&self) -> u64 {
        self.get(Label::Good, Label::Bad)
    }

    pub fn true_negatives(&self) -> u64 {
        self.get(Label::Good, Label::Good)
    }

    pub fn false_negatives(&self) -> u64 {
        self.get(Label::Bad, Label::Good)
    }
}

pub fn confusion_matrix(predicted: &[Label], actual: &[Label]) -> Result<ConfusionMatrix> {
    if predicted.len() != actual.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: actual.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let mut cm = ConfusionMatrix::default();
    for (p, a) in predicted.iter().zip(actual) {
        cm.counts[a.index()][p.index()] += 1;
    }
    Ok(cm)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let trace = cm.counts[0][0] + cm.counts[1][1];
    Ok(trace as f64 / total as f64)
}

/// ROC points from a descending threshold sweep, one point per distinct
/// score, starting at (0, 0) and ending at (1, 1).
pub fn roc_curve(scores: &[f64], actual: &[Label]) -> Result<Vec<(f64, f64)>> {
    if scores.len() != actual.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: actual.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedRoc("NaN score".into()));
    }
    let positives = actual.iter().filter(|&&a| a == Label::Bad).count();
    let negatives = actual.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedRoc("both classes must be present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (p, n) = (positives as f64, negatives as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let threshold = scores[order[k]];
        while k < order.len() && scores[order[k]] == threshold {
            match actual[order[k]] {
                Label::Bad => tp += 1,
                Label::Good => fp += 1,
            }
            k += 1;
        }
        points.push((fp as f64 / n, tp as f64 / p));
    }
    if points.last() != Some(&(1.0, 1.0)) {
        points.push((1.0, 1.0));
    }
    Ok(points)
}

/// Trapezoidal area under a ROC polyline.
pub fn auc(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub roc: Vec<(f64, f64)>,
    /// `None` when the evaluated set holds a single class.
    pub auc: Option<f64>,
}

impl EvalReport {
    pub fn from_predictions(predicted: &[Label], scores: &[f64], actual: &[Label]) -> Result<Self> {
        let confusion = confusion_matrix(predicted, actual)?;
        let accuracy = accuracy(&confusion)?;
        let (roc, auc_value) = match roc_curve(scores, actual) {
            Ok(points) => {
                let a = auc(&points);
                (points, Some(a))
            }
            Err(Error::UndefinedRoc(_)) => (Vec::new(), None),
            Err(e) => return Err(e),
        };
        Ok(Self {
            confusion,
            accuracy,
            roc,
            auc: auc_value,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    /// ROC points as `fpr,tpr` CSV.
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (f, t) in &self.roc {
            out.push_str(&format!("{f},{t}\n"));
        }
        out
    }
}

/// Runs the model over every sample and scores the predictions.
pub fn evaluate(model: &ModelParams, data: &[LabeledSequence]) -> Result<EvalReport> {
    let mut predicted = Vec::with_capacity(data.len());
    let mut scores = Vec::with_capacity(data.len());
    let mut actual = Vec::with_capacity(data.len());
    for s in data {
        let probs = model_forward(model, &s.window)?;
        predicted.push(predicted_label(&probs));
        scores.push(probs[Label::Bad.index()]);
        actual.push(s.label);
    }
    EvalReport::from_predictions(&predicted, &scores, &actual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Bad, Good};

    #[test]
    fn perfect_predictions() {
        let a = vec![Good; 5];
        let cm = confusion_matrix(&a, &a).unwrap();
        assert_eq!(cm.counts, [[5, 0], [0, 0]]);
        assert_eq!(accuracy(&cm).unwrap(), 1.0);
    }

    #[test]
    fn complement_predictions() {
        let a = [Good, Bad, Bad, Good];
        let p = [Bad, Good, Good, Bad];
        let cm = confusion_matrix(&p, &a).unwrap();
        assert_eq!(cm.counts[0][0] + cm.counts[1][1], 0);
        assert_eq!(accuracy(&cm).unwrap(), 0.0);
    }

    #[test]
    fn one_miss_in_sixteen() {
        let actual: Vec<Label> = (0..16).map(|i| if i < 8 { Good } else { Bad }).collect();
        let mut predicted = actual.clone();
        predicted[12] = Good;
        let cm = confusion_matrix(&predicted, &actual).unwrap();
        assert_eq!(cm.false_negatives() + cm.false_positives(), 1);
        assert_eq!(accuracy(&cm).unwrap(), 0.9375);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            confusion_matrix(&[Good], &[]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(confusion_matrix(&[], &[]), Err(Error::EmptyMatrix)));
        assert!(matches!(accuracy(&ConfusionMatrix::default()), Err(Error::EmptyMatrix)));
        assert!(matches!(
            roc_curve(&[0.1, 0.2], &[Good, Good]),
            Err(Error::UndefinedRoc(_))
        ));
    }

    #[test]
    fn separated_scores_give_unit_auc() {
        let pts = roc_curve(&[0.9, 0.8, 0.2, 0.1], &[Bad, Bad, Good, Good]).unwrap();
        assert_eq!(auc(&pts), 1.0);
    }

    #[test]
    fn tied_scores_collapse() {
        let pts = roc_curve(&[0.4; 6], &[Bad, Good, Bad, Good, Good, Bad]).unwrap();
        assert_eq!(pts, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(auc(&pts), 0.5);
    }

    #[test]
    fn hand_enumerated_case() {
        let pts = roc_curve(&[0.9, 0.8, 0.4, 0.3], &[Bad, Good, Bad, Good]).unwrap();
        assert_eq!(pts, vec![(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]);
        assert_eq!(auc(&pts), 0.75);
    }

    #[test]
    fn report_json_shape() {
        let r = EvalReport::from_predictions(&[Bad, Good], &[0.9, 0.1], &[Bad, Good]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["confusion"], serde_json::json!([[1, 0], [0, 1]]));
        assert_eq!(v["accuracy"], 1.0);
        assert_eq!(v["roc"][1], serde_json::json!([0.0, 1.0]));
        assert_eq!(v["auc"], 1.0);
        assert!(r.roc_csv().starts_with("fpr,tpr\n0,0\n"));
    }

    fn labelled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<Label>)> {
        prop::collection::vec((0.0..1.0f64, any::<bool>()), 2..60).prop_map(|v| {
            let mut v = v;
            v[0].1 = true;
            v[1].1 = false;
            v.into_iter().map(|(s, b)| (s, if b { Bad } else { Good })).unzip()
        })
    }

    proptest! {
        #[test]
        fn accuracy_is_mean_match(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..100)) {
            let p: Vec<Label> = pairs.iter().map(|x| if x.0 { Bad } else { Good }).collect();
            let a: Vec<Label> = pairs.iter().map(|x| if x.1 { Bad } else { Good }).collect();
            let hits = p.iter().zip(&a).filter(|(x, y)| x == y).count();
            prop_assert_eq!(accuracy(&confusion_matrix(&p, &a).unwrap()).unwrap(), hits as f64 / p.len() as f64);
        }

        #[test]
        fn roc_monotone_and_auc_bounded((scores, actual) in labelled_scores()) {
            let pts = roc_curve(&scores, &actual).unwrap();
            prop_assert_eq!(pts[0], (0.0, 0.0));
            prop_assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
            for w in pts.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
            let a = auc(&pts);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn auc_invariant_under_monotone_map((scores, actual) in labelled_scores()) {
            let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            let a = auc(&roc_curve(&scores, &actual).unwrap());
            let b = auc(&roc_curve(&mapped, &actual).unwrap());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn auc_symmetric_under_label_flip((scores, actual) in labelled_scores()) {
            let flipped: Vec<Label> = actual.iter().map(|l| if *l == Bad { Good } else { Bad }).collect();
            let inv: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
            let a = auc(&roc_curve(&scores, &actual).unwrap());
            let b = auc(&roc_curve(&inv, &flipped).unwrap());
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
