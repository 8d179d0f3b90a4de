//! Baseline plus feedback-configuration sweep under one training budget.

use std::collections::HashSet;

use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::multitask::FeedbackConfig;
use crate::network::{evaluate, InitConfig, MetricsReport, Mode, Model, ModelSpec};
use crate::trainer::{split_holdout, train, TrainConfig, TrainLog};

pub const BASELINE_LABEL: &str = "baseline";

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    entries: Vec<(String, FeedbackConfig)>,
}

impl SweepSpec {
    /// The 12 rows: info {r}, {r,p} crossed with targets i, f, o, g, ifo, ifog.
    pub fn default_grid() -> Self {
        Self::from_configs(FeedbackConfig::sweep_grid()).expect("grid labels are unique")
    }

    pub fn from_configs(configs: Vec<FeedbackConfig>) -> Result<Self> {
        let entries: Vec<_> = configs.into_iter().map(|c| (c.to_string(), c)).collect();
        Self::new(entries)
    }

    pub fn new(entries: Vec<(String, FeedbackConfig)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (label, _) in &entries {
            if label == BASELINE_LABEL || !seen.insert(label.as_str()) {
                return Err(Error::config(format!("duplicate sweep label '{label}'")));
            }
        }
        Ok(SweepSpec { entries })
    }

    pub fn entries(&self) -> &[(String, FeedbackConfig)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Everything shared by the runs of a sweep. `spec.mode` and
/// `spec.feedback` are overridden per run.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub spec: ModelSpec,
    pub init: InitConfig,
    pub train: TrainConfig,
    pub holdout_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub model: Model,
    pub log: TrainLog,
    pub report: MetricsReport,
}

/// Initialize and train one model; the holdout is the tail of `train_set`.
pub fn train_model(
    exp: &Experiment,
    mode: Mode,
    feedback: FeedbackConfig,
    train_set: &[Utterance],
) -> Result<(Model, TrainLog)> {
    let spec = ModelSpec {
        mode,
        feedback,
        ..exp.spec.clone()
    };
    let mut model = Model::init(spec, &exp.init)?;
    let (fit, holdout) = split_holdout(train_set, exp.holdout_fraction);
    let log = train(&mut model, fit, holdout, &exp.train)?;
    Ok((model, log))
}

/// Train, then evaluate on `test_set`.
pub fn run_one(
    exp: &Experiment,
    mode: Mode,
    feedback: FeedbackConfig,
    train_set: &[Utterance],
    test_set: &[Utterance],
    label: &str,
) -> Result<RunResult> {
    let (model, log) = train_model(exp, mode, feedback, train_set)?;
    let report = evaluate(&model, test_set, label)?;
    Ok(RunResult { model, log, report })
}

/// Baseline row first, then one row per sweep entry in order.
pub fn run_sweep(
    exp: &Experiment,
    sweep: &SweepSpec,
    train_set: &[Utterance],
    test_set: &[Utterance],
    mut progress: impl FnMut(&MetricsReport),
) -> Result<Vec<MetricsReport>> {
    let mut rows = Vec::with_capacity(sweep.len() + 1);
    let runs = std::iter::once((BASELINE_LABEL.to_string(), Mode::SingleBilingual, FeedbackConfig::none())).chain(
        sweep
            .entries()
            .iter()
            .map(|(l, c)| (l.clone(), Mode::Multitask, c.clone())),
    );
    for (label, mode, fb) in runs {
        let r = run_one(exp, mode, fb, train_set, test_set, &label)?.report;
        progress(&r);
        rows.push(r);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_labels() {
        let s = SweepSpec::default_grid();
        assert_eq!(s.len(), 12);
        let labels: Vec<&str> = s.entries().iter().map(|(l, _)| l.as_str()).collect();
        assert!(labels.contains(&"g:r"));
        assert!(labels.contains(&"ifog:r,p"));
    }

    #[test]
    fn duplicate_labels_rejected() {
        let c = FeedbackConfig::parse("g:r").unwrap();
        assert!(SweepSpec::from_configs(vec![c.clone(), c.clone()]).is_err());
        assert!(SweepSpec::new(vec![("baseline".into(), c)]).is_err());
    }
}
