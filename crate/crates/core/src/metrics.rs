//! Frame-level accuracy, macro-F1 and confusion counts. Frames whose gold
//! label is `-1` are ignored everywhere.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, NUM_CLASSES};

/// How classes with neither gold support nor predictions enter the macro
/// average.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsentClassPolicy {
    /// Leave them out of the average.
    #[default]
    Exclude,
    /// Count them as F1 = 0.
    Include,
}

/// Counts indexed `[gold][predicted]`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|c| self.counts[c][c]).sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    /// F1 of one class; zero when its denominator is zero.
    pub fn f1(&self, class: usize) -> f64 {
        let tp = self.counts[class][class] as f64;
        let denom = (self.support(class) + self.predicted(class)) as f64;
        if denom == 0.0 {
            0.0
        } else {
            2.0 * tp / denom
        }
    }

    pub fn macro_f1(&self, policy: AbsentClassPolicy) -> f64 {
        let scored: Vec<f64> = (0..NUM_CLASSES)
            .filter(|&c| policy == AbsentClassPolicy::Include || self.support(c) + self.predicted(c) > 0)
            .map(|c| self.f1(c))
            .collect();
        if scored.is_empty() {
            0.0
        } else {
            scored.iter().sum::<f64>() / scored.len() as f64
        }
    }

    pub fn is_diagonal(&self) -> bool {
        (0..NUM_CLASSES).all(|g| (0..NUM_CLASSES).all(|p| g == p || self.counts[g][p] == 0))
    }
}

fn check(pred: &[u8], gold: &[i8]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::Length {
            what: "prediction/gold",
            left: pred.len(),
            right: gold.len(),
        });
    }
    if let Some(i) = pred.iter().position(|&p| p as usize >= NUM_CLASSES) {
        return Err(Error::Config(format!("prediction {} at frame {i} is not a class", pred[i])));
    }
    if !gold.iter().any(|&g| g >= 0) {
        return Err(Error::NoValidFrames);
    }
    Ok(())
}

pub fn confusion(pred: &[u8], gold: &[i8]) -> Result<ConfusionMatrix> {
    check(pred, gold)?;
    let mut cm = ConfusionMatrix::default();
    for (&p, &g) in pred.iter().zip(gold) {
        if g >= 0 {
            cm.counts[g as usize][p as usize] += 1;
        }
    }
    Ok(cm)
}

pub fn accuracy(pred: &[u8], gold: &[i8]) -> Result<f64> {
    let cm = confusion(pred, gold)?;
    Ok(cm.trace() as f64 / cm.total() as f64)
}

pub fn macro_f1(pred: &[u8], gold: &[i8]) -> Result<f64> {
    Ok(confusion(pred, gold)?.macro_f1(AbsentClassPolicy::Exclude))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: [f64; NUM_CLASSES],
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
    pub valid_frames: u64,
}

impl MetricReport {
    pub fn from_confusion(cm: &ConfusionMatrix, policy: AbsentClassPolicy) -> Self {
        Self {
            accuracy: if cm.total() == 0 { 0.0 } else { cm.trace() as f64 / cm.total() as f64 },
            macro_f1: cm.macro_f1(policy),
            per_class_f1: std::array::from_fn(|c| cm.f1(c)),
            confusion: cm.counts,
            valid_frames: cm.total(),
        }
    }
}

pub fn evaluate(pred: &[u8], gold: &[i8], policy: AbsentClassPolicy) -> Result<MetricReport> {
    Ok(MetricReport::from_confusion(&confusion(pred, gold)?, policy))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_accuracy() {
        let gold: Vec<i8> = (0..16).map(|i| (i % 8) as i8).collect();
        let pred: Vec<u8> = gold.iter().map(|&g| g as u8).collect();
        assert_eq!(accuracy(&pred, &gold).unwrap(), 1.0);
        assert_eq!(macro_f1(&pred, &gold).unwrap(), 1.0);
        assert!(confusion(&pred, &gold).unwrap().is_diagonal());
    }

    #[test]
    fn invalid_frames_are_skipped() {
        assert_eq!(accuracy(&[0, 5, 0], &[0, -1, 1]).unwrap(), 0.5);
    }

    #[test]
    fn no_valid_frames() {
        assert!(matches!(accuracy(&[0, 1], &[-1, -1]), Err(Error::NoValidFrames)));
        assert!(matches!(macro_f1(&[0], &[-1]), Err(Error::NoValidFrames)));
    }

    #[test]
    fn two_class_macro_f1() {
        let f1 = macro_f1(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap();
        assert!((f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
        assert!((f1 - 0.7333).abs() < 1e-4);
    }

    #[test]
    fn spurious_class_scores_zero() {
        // class 3 is predicted but never gold: included with F1 = 0
        let cm = confusion(&[0, 3], &[0, 0]).unwrap();
        assert_eq!(cm.f1(3), 0.0);
        assert!((cm.macro_f1(AbsentClassPolicy::Exclude) - (2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn include_policy_counts_absent_classes() {
        let cm = confusion(&[0, 1], &[0, 1]).unwrap();
        assert_eq!(cm.macro_f1(AbsentClassPolicy::Exclude), 1.0);
        assert_eq!(cm.macro_f1(AbsentClassPolicy::Include), 0.25);
    }
}
