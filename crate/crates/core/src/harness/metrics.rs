//! Accuracy, mean per-class recall and confusion matrices.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub fold: usize,
    pub video_id: String,
    pub truth: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub predictions: Vec<Prediction>,
    /// Sorted labels indexing the confusion matrix.
    pub classes: Vec<usize>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    /// Overall accuracy in percent.
    pub acc: f64,
    /// Mean per-class recall in percent.
    pub macc: f64,
}

/// Score `(video_id, predicted)` pairs against `(video_id, truth)` pairs.
pub fn evaluate(predicted: &[(String, usize)], truth: &[(String, usize)]) -> Result<EvalReport> {
    let lookup: HashMap<&str, usize> = predicted.iter().map(|(id, p)| (id.as_str(), *p)).collect();
    let predictions = truth
        .iter()
        .map(|(id, t)| {
            lookup
                .get(id.as_str())
                .map(|&p| Prediction {
                    fold: 0,
                    video_id: id.clone(),
                    truth: *t,
                    predicted: p,
                })
                .ok_or_else(|| Error::MissingPrediction(id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(report_from(predictions))
}

/// Build the report from complete per-clip predictions.
pub fn report_from(predictions: Vec<Prediction>) -> EvalReport {
    let classes: Vec<usize> = predictions
        .iter()
        .flat_map(|p| [p.truth, p.predicted])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pos: HashMap<usize, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut confusion = vec![vec![0usize; classes.len()]; classes.len()];
    for p in &predictions {
        confusion[pos[&p.truth]][pos[&p.predicted]] += 1;
    }
    let total = predictions.len();
    let correct: usize = (0..classes.len()).map(|i| confusion[i][i]).sum();
    let acc = if total == 0 { 0.0 } else { 100.0 * correct as f64 / total as f64 };
    let recalls: Vec<f64> = confusion
        .iter()
        .enumerate()
        .filter_map(|(i, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| 100.0 * row[i] as f64 / n as f64)
        })
        .collect();
    let macc = if recalls.is_empty() {
        0.0
    } else {
        recalls.iter().sum::<f64>() / recalls.len() as f64
    };
    EvalReport {
        predictions,
        classes,
        confusion,
        acc,
        macc,
    }
}

impl EvalReport {
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for c in &self.classes {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            let _ = write!(s, "{c}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn predictions_csv(&self) -> String {
        let mut s = String::from("fold,video_id,truth,predicted\n");
        for p in &self.predictions {
            let _ = writeln!(s, "{},{},{},{}", p.fold, p.video_id, p.truth, p.predicted);
        }
        s
    }
}
