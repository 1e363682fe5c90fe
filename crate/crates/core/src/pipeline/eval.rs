//! Test-set metrics and training-size sweeps.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShdlError};

use super::config::PipelineConfig;
use super::dataset::{subsample_balanced, Dataset};
use super::model::PipelineModel;
use super::train::train_pipeline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub name: String,
    pub support: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// The class had no training samples; its test samples always count as wrong.
    pub unseen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub overall_accuracy: f64,
    /// Mean over classes with at least one test sample.
    pub mean_per_class_accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Rows: true test class; columns: predicted model class.
    pub confusion: Vec<Vec<usize>>,
    pub predicted_classes: Vec<String>,
    pub unseen_classes: Vec<String>,
}

impl EvalReport {
    /// Scores predictions (model class indices) against test labels.
    pub fn from_predictions(
        predicted: &[usize],
        truth: &[usize],
        test_classes: &[String],
        model_classes: &[String],
        trained: &[usize],
    ) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(ShdlError::Dimension(format!(
                "{} predictions for {} labels",
                predicted.len(),
                truth.len()
            )));
        }
        let mapping: Vec<Option<usize>> = test_classes
            .iter()
            .map(|name| {
                model_classes
                    .iter()
                    .position(|m| m == name)
                    .filter(|idx| trained.contains(idx))
            })
            .collect();
        let mut confusion = vec![vec![0usize; model_classes.len()]; test_classes.len()];
        let mut support = vec![0usize; test_classes.len()];
        let mut correct = vec![0usize; test_classes.len()];
        for (&p, &t) in predicted.iter().zip(truth) {
            if t >= test_classes.len() || p >= model_classes.len() {
                return Err(ShdlError::Validation(format!("label {t} or prediction {p} out of range")));
            }
            support[t] += 1;
            confusion[t][p] += 1;
            if mapping[t] == Some(p) {
                correct[t] += 1;
            }
        }
        let per_class: Vec<ClassMetrics> = (0..test_classes.len())
            .map(|c| ClassMetrics {
                class: c,
                name: test_classes[c].clone(),
                support: support[c],
                correct: correct[c],
                accuracy: if support[c] == 0 { 0.0 } else { correct[c] as f64 / support[c] as f64 },
                unseen: mapping[c].is_none(),
            })
            .collect();
        let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
        let mean_per_class_accuracy = if present.is_empty() {
            0.0
        } else {
            present.iter().map(|m| m.accuracy).sum::<f64>() / present.len() as f64
        };
        let unseen_classes: Vec<String> = per_class
            .iter()
            .filter(|m| m.unseen && m.support > 0)
            .map(|m| m.name.clone())
            .collect();
        if !unseen_classes.is_empty() {
            log::warn!("classes unseen at training time: {}", unseen_classes.join(", "));
        }
        let total_correct: usize = correct.iter().sum();
        Ok(Self {
            samples: truth.len(),
            overall_accuracy: if truth.is_empty() { 0.0 } else { total_correct as f64 / truth.len() as f64 },
            mean_per_class_accuracy,
            per_class,
            confusion,
            predicted_classes: model_classes.to_vec(),
            unseen_classes,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per test class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,name,support,correct,accuracy,unseen\n");
        for m in &self.per_class {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{}",
                m.class, m.name, m.support, m.correct, m.accuracy, m.unseen
            );
        }
        let _ = writeln!(s, "all,overall,{},,{:.6},", self.samples, self.overall_accuracy);
        let _ = writeln!(s, "all,mean_per_class,{},,{:.6},", self.samples, self.mean_per_class_accuracy);
        s
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for name in &self.predicted_classes {
            let _ = write!(s, ",{name}");
        }
        s.push('\n');
        for (m, row) in self.per_class.iter().zip(&self.confusion) {
            s.push_str(&m.name);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Classifies `test` and scores it against its labels.
pub fn evaluate(model: &PipelineModel, test: &Dataset) -> Result<EvalReport> {
    test.validate()?;
    let predicted = model.predict(&test.images)?;
    EvalReport::from_predictions(
        &predicted,
        &test.labels,
        &test.class_names,
        &model.manifest.class_names,
        &model.svm.classes,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub size: usize,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub mean_per_class_accuracy: Option<f64>,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeAverage {
    pub size: usize,
    pub runs: usize,
    pub mean_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    pub averages: Vec<SizeAverage>,
    /// Seed-averaged accuracy is non-decreasing in training size.
    pub monotonic: bool,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("size,seed,accuracy,mean_per_class_accuracy,seconds,status\n");
        let f = |v: Option<f64>| v.map(|a| format!("{a:.6}")).unwrap_or_default();
        for c in &self.cells {
            let status = c.error.as_deref().map(|e| format!("FAILED: {}", e.replace(',', ";"))).unwrap_or("ok".into());
            let _ = writeln!(
                s,
                "{},{},{},{},{:.3},{}",
                c.size,
                c.seed,
                f(c.accuracy),
                f(c.mean_per_class_accuracy),
                c.seconds,
                status
            );
        }
        for a in &self.averages {
            let _ = writeln!(s, "{},mean,{},,,runs={}", a.size, f(a.mean_accuracy), a.runs);
        }
        let _ = writeln!(s, "monotonic,{}", self.monotonic);
        s
    }
}

/// Trains and evaluates one pipeline per (size, seed). A failing cell is
/// recorded and the sweep continues.
pub fn sweep_sizes(
    config: &PipelineConfig,
    train: &Dataset,
    test: &Dataset,
    sizes: &[usize],
    seeds: &[u64],
) -> Result<SweepReport> {
    if sizes.is_empty() || seeds.is_empty() {
        return Err(ShdlError::Config("sweep needs at least one size and one seed".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ShdlError::Config("sweep sizes must be strictly ascending".into()));
    }
    let classes = train.num_classes();
    if let Some(&big) = sizes.iter().find(|&&s| s > train.len()) {
        return Err(ShdlError::Protocol(format!(
            "sweep size {big} exceeds the {} training images",
            train.len()
        )));
    }
    let mut cells = Vec::new();
    for &size in sizes {
        for &seed in seeds {
            let start = Instant::now();
            let run = || -> Result<_> {
                if size % classes != 0 {
                    return Err(ShdlError::Protocol(format!("size {size} is not a multiple of {classes} classes")));
                }
                let subset = subsample_balanced(train, size / classes, seed)?;
                let mut cfg = config.clone();
                cfg.seed = seed;
                let (model, _) = train_pipeline(&cfg, &subset)?;
                evaluate(&model, test)
            };
            let result = run();
            let seconds = start.elapsed().as_secs_f64();
            cells.push(match result {
                Ok(r) => SweepCell {
                    size,
                    seed,
                    accuracy: Some(r.overall_accuracy),
                    mean_per_class_accuracy: Some(r.mean_per_class_accuracy),
                    seconds,
                    error: None,
                },
                Err(e) => {
                    log::warn!("sweep cell size={size} seed={seed} failed: {e}");
                    SweepCell {
                        size,
                        seed,
                        accuracy: None,
                        mean_per_class_accuracy: None,
                        seconds,
                        error: Some(e.to_string()),
                    }
                }
            });
        }
    }
    let averages: Vec<SizeAverage> = sizes
        .iter()
        .map(|&size| {
            let accs: Vec<f64> = cells.iter().filter(|c| c.size == size).filter_map(|c| c.accuracy).collect();
            SizeAverage {
                size,
                runs: accs.len(),
                mean_accuracy: (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64),
            }
        })
        .collect();
    let means: Vec<f64> = averages.iter().filter_map(|a| a.mean_accuracy).collect();
    let monotonic = means.windows(2).all(|w| w[1] >= w[0]);
    if !monotonic {
        log::warn!("sweep accuracy is not monotone in training size");
    }
    Ok(SweepReport {
        cells,
        averages,
        monotonic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn metrics_and_confusion() {
        let truth = vec![0, 0, 1, 1, 2, 2];
        let pred = vec![0, 1, 1, 1, 0, 2];
        let r = EvalReport::from_predictions(&pred, &truth, &names(3), &names(3), &[0, 1, 2]).unwrap();
        assert!((r.overall_accuracy - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(r.confusion, vec![vec![1, 1, 0], vec![0, 2, 0], vec![1, 0, 1]]);
        assert!((r.mean_per_class_accuracy - (0.5 + 1.0 + 0.5) / 3.0).abs() < 1e-12);
        assert!(r.unseen_classes.is_empty());
        assert!(r.to_csv().starts_with("class,name,support"));
        assert_eq!(r.confusion_csv().lines().count(), 4);
    }

    #[test]
    fn unseen_class_is_always_wrong() {
        let truth = vec![0, 1, 2];
        let pred = vec![0, 1, 1];
        let mut test_names = names(2);
        test_names.push("novel".into());
        let r = EvalReport::from_predictions(&pred, &truth, &test_names, &names(2), &[0, 1]).unwrap();
        assert_eq!(r.unseen_classes, vec!["novel".to_string()]);
        assert!(r.per_class[2].unseen);
        assert_eq!(r.per_class[2].correct, 0);
    }
}
