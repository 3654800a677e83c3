//! Experiment configuration, sparse-label splits, the multi-trial runner and
//! its reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finetune::{
    evaluate, fit_baseline, fuse_sessions, run_session, session_seed, ConfidenceConfig, ModelConfig,
};
use crate::generation::GenerationConfig;
use crate::graph::{load_graph, sbm_generate, Dataset, LabelAssignment, SbmParams};
use crate::models::{ClassifierConfig, LinkConfig};
use crate::smoothing::SmoothingParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Sbm(SbmParams),
    Files {
        edges: PathBuf,
        features: PathBuf,
        labels: PathBuf,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        Self::Sbm(SbmParams::default())
    }
}

impl DatasetSource {
    /// Relative file paths are taken relative to `base`.
    pub fn load(&self, base: Option<&Path>) -> Result<Dataset> {
        match self {
            Self::Sbm(params) => sbm_generate(params),
            Self::Files {
                edges,
                features,
                labels,
            } => {
                let resolve = |p: &PathBuf| match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                load_graph(resolve(edges), resolve(features), resolve(labels))
            }
        }
    }
}

/// One JSON document; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Fraction of each class that is labeled.
    pub label_fraction: f64,
    pub trials: usize,
    /// Trial `t` runs with seed `seed + t`.
    pub seed: u64,
    /// Generation sessions fused per trial.
    pub sessions: usize,
    pub generation: GenerationConfig,
    pub smoothing: SmoothingParams,
    pub classifier: ClassifierConfig,
    pub link: LinkConfig,
    pub confidence: ConfidenceConfig,
    pub out_dir: Option<PathBuf>,
    /// Write wall-clock columns to `summary.csv`.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            label_fraction: 0.01,
            trials: 10,
            seed: 0,
            sessions: 3,
            generation: GenerationConfig::default(),
            smoothing: SmoothingParams::default(),
            classifier: ClassifierConfig::default(),
            link: LinkConfig::default(),
            confidence: ConfidenceConfig::default(),
            out_dir: None,
            record_timing: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return bad(format!("label_fraction must lie in (0, 1], got {}", self.label_fraction));
        }
        if self.sessions == 0 {
            return bad("sessions must be at least 1".into());
        }
        if !(self.confidence.quantile > 0.0 && self.confidence.quantile < 1.0) {
            return bad("confidence.quantile must lie in (0, 1)".into());
        }
        self.generation
            .validate()
            .and_then(|_| self.smoothing.validate())
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn models(&self) -> ModelConfig {
        ModelConfig {
            smoothing: self.smoothing,
            classifier: self.classifier,
            link: self.link,
            confidence: self.confidence,
        }
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: LabelAssignment,
    /// Labeled nodes held out for evaluation, ascending.
    pub test: Vec<usize>,
}

/// Stratified split: `max(1, round(fraction · n_c))` nodes of every class
/// `c` go to training, the rest of the labeled nodes to the test set.
pub fn split_labels(labels: &LabelAssignment, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::param(format!("label fraction must lie in (0, 1], got {fraction}")));
    }
    let mut by_class = vec![Vec::new(); labels.num_classes()];
    for (node, class) in labels.iter() {
        by_class[class].push(node);
    }
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(empty));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = std::collections::BTreeMap::new();
    let mut test = Vec::new();
    for (class, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        let take = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len());
        train.extend(members[..take].iter().map(|&n| (n, class)));
        test.extend_from_slice(&members[take..]);
    }
    test.sort_unstable();
    Ok(Split {
        train: LabelAssignment::new(labels.num_classes(), train)?,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub labeled: usize,
    pub tested: usize,
    pub baseline_acc: Option<f64>,
    pub augmented_acc: Option<f64>,
    pub n_generated: usize,
    pub seconds_baseline: f64,
    pub seconds_generation: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; `None` with fewer than two values.
    pub std: Option<f64>,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() > 1).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        });
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialRecord>,
    pub baseline: Option<MeanStd>,
    pub augmented: Option<MeanStd>,
    /// Generation time over total time, summed across completed trials.
    pub overhead_fraction: Option<f64>,
    pub failed_trials: usize,
}

impl Report {
    pub fn completed(&self) -> impl Iterator<Item = &TrialRecord> {
        self.trials.iter().filter(|t| t.error.is_none())
    }
}

/// Accuracy of the baseline and of the fused sessions for one trial.
pub fn run_trial(dataset: &Dataset, config: &ExperimentConfig, trial: usize) -> Result<TrialRecord> {
    let seed = config.trial_seed(trial);
    let split = split_labels(&dataset.labels, config.label_fraction, seed)?;
    let truth: Vec<usize> = (0..dataset.graph.node_count())
        .map(|i| dataset.labels.label(i).unwrap_or(usize::MAX))
        .collect();
    let models = config.models();

    let start = Instant::now();
    let baseline = fit_baseline(&dataset.graph, &dataset.features, &split.train, &models)?;
    let baseline_eval = evaluate(&baseline.predictions(), &truth, &split.test)?;
    let seconds_baseline = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let sessions = (0..config.sessions)
        .map(|k| {
            run_session(
                &dataset.graph,
                &dataset.features,
                &split.train,
                &baseline,
                &models,
                &config.generation,
                session_seed(seed, k),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let fused = fuse_sessions(&sessions)?;
    let augmented_eval = evaluate(&fused.predictions, &truth, &split.test)?;
    let seconds_generation = start.elapsed().as_secs_f64();

    Ok(TrialRecord {
        trial,
        seed,
        labeled: split.train.len(),
        tested: split.test.len(),
        baseline_acc: Some(baseline_eval.accuracy),
        augmented_acc: Some(augmented_eval.accuracy),
        n_generated: sessions.iter().map(|s| s.nodes.len()).sum(),
        seconds_baseline,
        seconds_generation,
        error: None,
    })
}

/// Runs every trial; a failing trial is recorded and the rest continue.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let dataset = config.dataset.load(None)?;
    Ok(run_experiment_on(&dataset, config))
}

pub fn run_experiment_on(dataset: &Dataset, config: &ExperimentConfig) -> Report {
    let trials: Vec<TrialRecord> = (0..config.trials)
        .map(|t| {
            run_trial(dataset, config, t).unwrap_or_else(|e| {
                log::warn!("trial {t} failed: {e}");
                TrialRecord {
                    trial: t,
                    seed: config.trial_seed(t),
                    labeled: 0,
                    tested: 0,
                    baseline_acc: None,
                    augmented_acc: None,
                    n_generated: 0,
                    seconds_baseline: 0.0,
                    seconds_generation: 0.0,
                    error: Some(e.to_string()),
                }
            })
        })
        .collect();
    let done: Vec<&TrialRecord> = trials.iter().filter(|t| t.error.is_none()).collect();
    let collect = |f: fn(&TrialRecord) -> Option<f64>| done.iter().filter_map(|t| f(t)).collect::<Vec<_>>();
    let generation: f64 = done.iter().map(|t| t.seconds_generation).sum();
    let total: f64 = done.iter().map(|t| t.seconds_baseline + t.seconds_generation).sum();
    Report {
        config: config.clone(),
        baseline: MeanStd::of(&collect(|t| t.baseline_acc)),
        augmented: MeanStd::of(&collect(|t| t.augmented_acc)),
        overhead_fraction: (total > 0.0).then(|| generation / total),
        failed_trials: trials.len() - done.len(),
        trials,
    }
}

/// `trial,baseline_acc,augmented_acc,n_generated,seconds_baseline,seconds_generation`;
/// missing values are left empty.
pub fn format_summary_csv(report: &Report, record_timing: bool) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out =
        String::from("trial,baseline_acc,augmented_acc,n_generated,seconds_baseline,seconds_generation\n");
    for t in &report.trials {
        let ok = t.error.is_none();
        let (sb, sg) = if record_timing && ok {
            (t.seconds_baseline.to_string(), t.seconds_generation.to_string())
        } else {
            (String::new(), String::new())
        };
        let n = if ok { t.n_generated.to_string() } else { String::new() };
        writeln!(
            out,
            "{},{},{},{},{},{}",
            t.trial,
            opt(t.baseline_acc),
            opt(t.augmented_acc),
            n,
            sb,
            sg
        )
        .expect("writing to a String");
    }
    out
}

/// Writes `report.json` and `summary.csv` into `dir`.
pub fn write_report(report: &Report, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("report.json");
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;
    let csv = dir.join("summary.csv");
    fs::write(&csv, format_summary_csv(report, report.config.record_timing)).map_err(|e| Error::io(&csv, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn two_classes(n: usize) -> LabelAssignment {
        LabelAssignment::new(2, (0..2 * n).map(|i| (i, i / n)).collect()).unwrap()
    }

    #[test]
    fn full_fraction_labels_everything() {
        let s = split_labels(&two_classes(10), 1.0, 0).unwrap();
        assert_eq!(s.train.len(), 20);
        assert!(s.test.is_empty());
    }

    #[test]
    fn one_percent_keeps_one_per_class() {
        let s = split_labels(&two_classes(100), 0.01, 3).unwrap();
        assert_eq!(s.train.len(), 2);
        let classes: Vec<usize> = s.train.iter().map(|(_, c)| c).collect();
        assert_eq!(classes, vec![0, 1]);
        assert_eq!(s.test.len(), 198);
        assert!(s.test.iter().all(|&n| !s.train.is_labeled(n)));
    }

    #[test]
    fn rounding_per_class() {
        // 0.05 · 30 = 1.5 rounds to 2
        let s = split_labels(&two_classes(30), 0.05, 1).unwrap();
        assert_eq!(s.train.len(), 4);
    }

    #[test]
    fn same_seed_same_split() {
        let l = two_classes(50);
        assert_eq!(split_labels(&l, 0.1, 9).unwrap(), split_labels(&l, 0.1, 9).unwrap());
        assert_ne!(split_labels(&l, 0.1, 9).unwrap(), split_labels(&l, 0.1, 10).unwrap());
    }

    #[test]
    fn empty_class_is_an_error() {
        let l = LabelAssignment::new(3, BTreeMap::from([(0, 0), (1, 2)])).unwrap();
        assert!(matches!(split_labels(&l, 0.5, 0), Err(Error::EmptyClass(1))));
    }

    #[test]
    fn bad_fraction_is_rejected() {
        assert!(split_labels(&two_classes(5), 0.0, 0).is_err());
        assert!(split_labels(&two_classes(5), 1.5, 0).is_err());
    }

    #[test]
    fn minimal_config_parses() {
        let c = ExperimentConfig::from_json(r#"{"dataset": {"sbm": {"blocks": 2}}}"#).unwrap();
        assert_eq!(c.trials, 10);
        match c.dataset {
            DatasetSource::Sbm(p) => {
                assert_eq!(p.blocks, 2);
                assert_eq!(p.nodes_per_block, 100);
            }
            other => panic!("unexpected dataset {other:?}"),
        }
    }

    #[test]
    fn config_typos_and_bad_values_are_config_errors() {
        for text in [
            r#"{"trails": 3}"#,
            r#"{"label_fraction": 0}"#,
            r#"{"generation": {"alpha": -1}}"#,
            r#"{"confidence": {"metric": "variance-of-logits"}}"#,
            r#"{"dataset": {"sbm": {"blockz": 2}}}"#,
            "not json",
        ] {
            assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = ExperimentConfig {
            trials: 2,
            generation: GenerationConfig {
                eta: Some(1.5),
                init_kind: crate::generation::InitKind::Perturbation { sigma: 0.2 },
                ..Default::default()
            },
            ..Default::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.std, Some(1.0));
        assert_eq!(MeanStd::of(&[4.0]).unwrap().std, None);
        assert!(MeanStd::of(&[]).is_none());
    }
}
