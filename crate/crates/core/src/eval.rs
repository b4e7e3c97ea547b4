//! Per-chart metrics and the baseline comparison experiment.
//!
//! Playable is the positive class. Metrics are computed per chart and then
//! averaged, so every chart weighs the same regardless of length.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::bms::{build_time_grid, BmsError, Chart, ObjectTiming, SampleId};
use crate::challenge::{chart_difficulty, ControlSource, DifficultyCurve, StrainConfig};
use crate::features::{build_features, FeatureError, FeatureVector, SummarySource};
use crate::instrument::InstrumentLabel;
use crate::selector::{
    self, baseline_all_playable, baseline_random, ChartData, FeatureSet, Partition, SelectorError, SelectorModel,
    SplitPlan, SummaryMode, TrainConfig, TrainingReport,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{predicted} predictions for {truth} objects")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("model artifact {path}: {source}")]
    MissingModel {
        path: String,
        #[source]
        source: SelectorError,
    },
    #[error("no charts in the test split")]
    EmptyTestSet,
    #[error("song `{0}` appears in more than one partition")]
    LeakedSong(String),
    #[error(transparent)]
    Bms(#[from] BmsError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
}

/// Confusion counts and derived scores of one chart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChartMetrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores predicted playability against the authored chart.
///
/// Precision is 0 when nothing is predicted playable, recall is 0 when
/// nothing is truly playable, and F1 is 0 when both are 0.
pub fn score_chart(predicted: &[bool], truth: &[bool]) -> Result<ChartMetrics, EvalError> {
    if predicted.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            predicted: predicted.len(),
            truth: truth.len(),
        });
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ChartMetrics {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        true_negatives: tn,
        precision,
        recall,
        f1,
    })
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        if values.is_empty() {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3}±{:.3}", self.mean, self.std)
    }
}

/// One line of the comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub f1: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
}

impl ReportRow {
    pub fn from_metrics(model: impl Into<String>, metrics: &[ChartMetrics]) -> ReportRow {
        let col = |f: fn(&ChartMetrics) -> f64| MeanStd::of(&metrics.iter().map(f).collect::<Vec<_>>());
        ReportRow {
            model: model.into(),
            f1: col(|m| m.f1),
            precision: col(|m| m.precision),
            recall: col(|m| m.recall),
        }
    }
}

impl std::fmt::Display for ReportRow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}\t{}\t{}\t{}", self.model, self.f1, self.precision, self.recall)
    }
}

/// A scored test chart.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartResult {
    pub name: String,
    pub song: String,
    pub difficulty: f64,
    pub metrics: ChartMetrics,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    /// Per-chart results of every variant, keyed by variant name.
    pub charts: BTreeMap<String, Vec<ChartResult>>,
    /// Training history of every model trained during the run.
    pub training: BTreeMap<String, TrainingReport>,
}

impl ExperimentReport {
    /// Tab-separated table, one row per variant, `mean±std` cells.
    pub fn table(&self) -> String {
        let mut out = String::from("model\tf1\tprecision\trecall\n");
        for row in &self.rows {
            writeln!(out, "{row}").unwrap();
        }
        out
    }

    pub fn row(&self, model: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// `chart<TAB>difficulty<TAB>f1` for one variant, sorted by ascending
    /// chart difficulty.
    pub fn difficulty_vs_f1(&self, model: &str) -> Option<String> {
        let mut results: Vec<&ChartResult> = self.charts.get(model)?.iter().collect();
        results.sort_by(|a, b| a.difficulty.total_cmp(&b.difficulty).then_with(|| a.name.cmp(&b.name)));
        let mut out = String::from("chart\tdifficulty\tf1\n");
        for r in results {
            writeln!(out, "{}\t{:.6}\t{:.6}", r.name, r.difficulty, r.metrics.f1).unwrap();
        }
        Some(out)
    }
}

/// A chart with everything the experiment needs precomputed.
#[derive(Clone, Debug)]
pub struct PreparedChart {
    pub data: ChartData,
    pub chart: Chart,
    pub timings: Vec<ObjectTiming>,
    pub curve: DifficultyCurve,
    pub labels: BTreeMap<SampleId, InstrumentLabel>,
}

/// Times the chart, computes its difficulty from the authored lanes and builds
/// ground-truth features.
pub fn prepare_chart(
    song: impl Into<String>,
    name: impl Into<String>,
    chart: Chart,
    labels: BTreeMap<SampleId, InstrumentLabel>,
    cfg: &StrainConfig,
) -> Result<PreparedChart, EvalError> {
    let grid = build_time_grid(&chart)?;
    let timings = grid.object_timings(&chart);
    let curve = chart_difficulty(&chart, &grid, ControlSource::for_chart(&chart), cfg);
    let features = build_features(&chart, &timings, &curve, &labels, SummarySource::GroundTruth)?;
    let truth = chart.objects().iter().map(|o| o.is_playable()).collect();
    Ok(PreparedChart {
        data: ChartData {
            song: song.into(),
            name: name.into(),
            features,
            truth,
            overall_difficulty: curve.overall,
        },
        chart,
        timings,
        curve,
        labels,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum VariantKind {
    /// Each object playable with probability `p`.
    Random {
        p: f64,
    },
    AllPlayable,
    /// A selector trained during the run on the given feature blocks.
    Selector {
        features: FeatureSet,
        mode: SummaryMode,
    },
    /// A selector loaded from disk.
    Pretrained {
        path: PathBuf,
        mode: SummaryMode,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub kind: VariantKind,
}

impl Variant {
    pub fn new(name: impl Into<String>, kind: VariantKind) -> Self {
        Variant {
            name: name.into(),
            kind,
        }
    }
}

/// Baselines plus the selector ablations: full features, self-summary,
/// no difficulty, and no summary (free generation).
pub fn standard_variants() -> Vec<Variant> {
    vec![
        Variant::new("random", VariantKind::Random { p: 0.3 }),
        Variant::new("all_playable", VariantKind::AllPlayable),
        Variant::new(
            "ff",
            VariantKind::Selector {
                features: FeatureSet::FULL,
                mode: SummaryMode::Truth,
            },
        ),
        Variant::new(
            "ff_self_summary",
            VariantKind::Selector {
                features: FeatureSet::FULL,
                mode: SummaryMode::SelfSummary,
            },
        ),
        Variant::new(
            "ff_no_difficulty",
            VariantKind::Selector {
                features: FeatureSet::NO_DIFFICULTY,
                mode: SummaryMode::Truth,
            },
        ),
        Variant::new(
            "ff_no_summary",
            VariantKind::Selector {
                features: FeatureSet::NO_SUMMARY,
                mode: SummaryMode::None,
            },
        ),
    ]
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    /// Seed of the random baseline; chart `i` uses `random_seed + i`.
    pub random_seed: u64,
}

fn predictions(model: &SelectorModel, c: &PreparedChart, mode: SummaryMode) -> Result<Vec<bool>, EvalError> {
    if mode == SummaryMode::Truth {
        // truth-mode features were built while preparing the chart
        model.features.check_mode(mode)?;
        return Ok(selector::predict_rows(model, &c.data.features)?);
    }
    Ok(selector::predict(
        model, &c.chart, &c.timings, &c.curve, &c.labels, mode,
    )?)
}

fn rows<'a>(charts: &[&'a PreparedChart]) -> Vec<(&'a FeatureVector, bool)> {
    charts
        .iter()
        .flat_map(|c| c.data.features.iter().zip(c.data.truth.iter().copied()))
        .collect()
}

fn check_split(corpus: &[PreparedChart], split: &SplitPlan) -> Result<(), EvalError> {
    let mut seen: BTreeMap<&str, Partition> = BTreeMap::new();
    for c in corpus {
        let part = split
            .partition_of(&c.data.song)
            .ok_or_else(|| SelectorError::UnassignedSong(c.data.song.clone()))?;
        if *seen.entry(&c.data.song).or_insert(part) != part {
            return Err(EvalError::LeakedSong(c.data.song.clone()));
        }
    }
    Ok(())
}

/// Trains or loads every variant, scores it on the test songs and collects
/// the comparison table and per-chart results.
///
/// Selector variants sharing a feature set share one trained model.
pub fn run_experiment(
    corpus: &[PreparedChart],
    variants: &[Variant],
    split: &SplitPlan,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport, EvalError> {
    check_split(corpus, split)?;
    let in_part = |part| {
        corpus
            .iter()
            .filter(move |c| split.partition_of(&c.data.song) == Some(part))
            .collect::<Vec<_>>()
    };
    let (train, validation, test) = (
        in_part(Partition::Train),
        in_part(Partition::Validation),
        in_part(Partition::Test),
    );
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let mut report = ExperimentReport::default();
    let mut trained: Vec<(FeatureSet, SelectorModel)> = Vec::new();
    for variant in variants {
        let model = match &variant.kind {
            VariantKind::Selector { features, .. } => {
                if let Some((_, m)) = trained.iter().find(|(f, _)| f == features) {
                    Some(m.clone())
                } else {
                    log::info!("training selector for {}", variant.name);
                    let (m, history) = selector::train_on(&rows(&train), &rows(&validation), *features, &cfg.train)?;
                    report.training.insert(variant.name.clone(), history);
                    trained.push((*features, m.clone()));
                    Some(m)
                }
            }
            VariantKind::Pretrained { path, .. } => {
                let load = || -> Result<SelectorModel, SelectorError> {
                    SelectorModel::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
                };
                Some(load().map_err(|source| EvalError::MissingModel {
                    path: path.display().to_string(),
                    source,
                })?)
            }
            _ => None,
        };

        let mut results = Vec::with_capacity(test.len());
        for (i, c) in test.iter().enumerate() {
            let n = c.data.truth.len();
            let predicted = match (&variant.kind, &model) {
                (VariantKind::Random { p }, _) => baseline_random(n, *p, cfg.random_seed.wrapping_add(i as u64)),
                (VariantKind::AllPlayable, _) => baseline_all_playable(n),
                (VariantKind::Selector { mode, .. } | VariantKind::Pretrained { mode, .. }, Some(m)) => {
                    predictions(m, c, *mode)?
                }
                _ => unreachable!("selector variants always carry a model"),
            };
            results.push(ChartResult {
                name: c.data.name.clone(),
                song: c.data.song.clone(),
                difficulty: c.data.overall_difficulty,
                metrics: score_chart(&predicted, &c.data.truth)?,
            });
        }
        let metrics: Vec<ChartMetrics> = results.iter().map(|r| r.metrics).collect();
        report.rows.push(ReportRow::from_metrics(&variant.name, &metrics));
        report.charts.insert(variant.name.clone(), results);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let t = [true, false, true, true];
        let m = score_chart(&t, &t).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn all_playable_on_thirty_percent() {
        let truth: Vec<bool> = (0..10).map(|i| i < 3).collect();
        let m = score_chart(&[true; 10], &truth).unwrap();
        assert_eq!(m.recall, 1.0);
        assert!((m.precision - 0.3).abs() < 1e-12);
        assert!((m.f1 - 0.6 / 1.3).abs() < 1e-12);
    }

    #[test]
    fn nothing_predicted_scores_zero() {
        let m = score_chart(&[false, false], &[true, false]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(matches!(
            score_chart(&[true], &[]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn row_format() {
        let m = score_chart(&[true, true], &[true, false]).unwrap();
        let row = ReportRow::from_metrics("all", &[m, m]);
        assert_eq!(row.to_string(), "all\t0.667±0.000\t0.500±0.000\t1.000±0.000");
    }

    #[test]
    fn population_std() {
        let s = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
    }
}
