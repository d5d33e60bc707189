use serde::Serialize;

use super::data::Label;

/// Binary classification metrics with fake as the positive class.
/// Undefined ratios (zero denominators) are reported as 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
            tn,
        }
    }

    /// `(predicted, actual)` pairs.
    pub fn from_predictions(pairs: &[(Label, Label)]) -> Self {
        let count = |p: Label, a: Label| pairs.iter().filter(|&&x| x == (p, a)).count();
        Self::from_counts(
            count(Label::Fake, Label::Fake),
            count(Label::Fake, Label::Real),
            count(Label::Real, Label::Fake),
            count(Label::Real, Label::Real),
        )
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// One-line summary, as printed by the `eval` command.
    pub fn line(&self) -> String {
        format!(
            "acc={:.4} prec={:.4} rec={:.4} f1={:.4} tp={} fp={} fn={} tn={}",
            self.accuracy, self.precision, self.recall, self.f1, self.tp, self.fp, self.fn_, self.tn
        )
    }
}
