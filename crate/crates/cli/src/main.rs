mod config;
mod corpus;

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use genmania::audio::{
    classify_sample, fingerprint, load_wave, train_classifier, write_label_manifest, ClassifierModel, ClassifierShape,
};
use genmania::bms::{build_time_grid, emit_bms, write_bms_file, SampleId};
use genmania::challenge::{chart_difficulty, ControlSource, DifficultyCurve, StrainConfig};
use genmania::eval::{prepare_chart, run_experiment, standard_variants, ExperimentConfig, Variant, VariantKind};
use genmania::features::{build_features, write_feature_dump, SummarySource};
use genmania::instrument::Dictionary;
use genmania::pipeline::{generate, GenerateError, GenerateOptions};
use genmania::placement::PlacementError;
use genmania::selector::{self, FeatureSet, SelectorError, SelectorModel, SplitPlan, SummaryMode};
use genmania::synth::{synth_corpus, write_chart_corpus, write_tone_corpus, SynthConfig};

use config::Settings;
use corpus::{load_chart, load_corpus, manifest_for, wav_files, CorpusChart};

/// Keysound chart generation toolkit.
#[derive(Parser)]
#[command(name = "genmania", version)]
struct Cli {
    /// Seed for every random choice (splits, initialization, shuffling, baselines).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Settings file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Truth,
    #[value(name = "self")]
    SelfSummary,
    None,
}

impl From<Mode> for SummaryMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Truth => SummaryMode::Truth,
            Mode::SelfSummary => SummaryMode::SelfSummary,
            Mode::None => SummaryMode::None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Blocks {
    Full,
    NoDifficulty,
    NoSummary,
}

impl From<Blocks> for FeatureSet {
    fn from(b: Blocks) -> Self {
        match b {
            Blocks::Full => FeatureSet::FULL,
            Blocks::NoDifficulty => FeatureSet::NO_DIFFICULTY,
            Blocks::NoSummary => FeatureSet::NO_SUMMARY,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Summarize a chart and list parser warnings.
    Parse { chart: PathBuf },
    /// Re-emit a chart in canonical form.
    Emit {
        chart: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Move every object to the background.
        #[arg(long)]
        score_only: bool,
    },
    /// Label WAV samples, with a trained classifier or from their file names.
    ClassifySamples {
        dir: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Windowed difficulty curve of a chart.
    Difficulty {
        chart: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Dump per-object feature vectors.
    Features {
        chart: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "truth")]
        summary_mode: Mode,
    },
    /// Train the sample classifier on labelled WAV files.
    TrainClassifier {
        dir: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Train the playable/non-playable selector on a chart corpus.
    TrainSelector {
        corpus: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "full")]
        features: Blocks,
        /// Write the per-epoch training report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate a playable chart from a score (BMS in, BMS out).
    Generate {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Window difficulties (`window<TAB>value` lines) to generate for.
        #[arg(long)]
        difficulty_curve: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "self")]
        summary_mode: Mode,
    },
    /// Compare selector variants and baselines on the test songs of a corpus.
    Evaluate {
        corpus: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Directory for the table and difficulty-vs-F1 files.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Pretrained selector as `name=path[:truth|self|none]`; replaces the
        /// default trained variants.
        #[arg(long = "model")]
        models: Vec<String>,
    },
    /// Write a synthetic chart corpus (and optionally tone recordings).
    SynthCorpus {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 150)]
        songs: usize,
        #[arg(long, default_value_t = 8)]
        measures: u32,
        /// Also write this many tone recordings per class under `tones/`.
        #[arg(long)]
        tones: Option<usize>,
    },
}

/// Bad flag combinations detected after argument parsing.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(SelectorError::ModeMismatch { .. }) = cause.downcast_ref::<SelectorError>() {
            return 1;
        }
        if let Some(PlacementError::TooManySimultaneous { .. }) = cause.downcast_ref::<PlacementError>() {
            return 3;
        }
        match cause.downcast_ref::<GenerateError>() {
            Some(GenerateError::Placement(PlacementError::TooManySimultaneous { .. })) => return 3,
            Some(GenerateError::Selector(SelectorError::ModeMismatch { .. })) => return 1,
            _ => {}
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut settings = Settings::new(cli.seed);
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        settings.apply(&text).with_context(|| path.display().to_string())?;
    }
    let dictionary = Dictionary::default();
    match cli.command {
        Command::Parse { chart } => cmd_parse(&chart),
        Command::Emit {
            chart,
            output,
            score_only,
        } => {
            let mut chart = load_chart(&chart)?;
            if score_only {
                chart = chart.score_only();
            }
            match output {
                Some(path) => write_bms_file(&chart, &path)?,
                None => print!("{}", emit_bms(&chart)?),
            }
            Ok(())
        }
        Command::ClassifySamples { dir, model, output } => {
            cmd_classify(&dir, model.as_deref(), output.as_deref(), &dictionary)
        }
        Command::Difficulty { chart, output } => {
            let chart = load_chart(&chart)?;
            let grid = build_time_grid(&chart)?;
            let curve = chart_difficulty(
                &chart,
                &grid,
                ControlSource::for_chart(&chart),
                &StrainConfig::default(),
            );
            let text = format!("# overall {}\n{}", curve.overall, curve.to_text());
            write_or_print(output.as_deref(), &text)
        }
        Command::Features {
            chart,
            output,
            labels,
            summary_mode,
        } => {
            let source = match summary_mode {
                Mode::Truth => SummarySource::GroundTruth,
                Mode::None => SummarySource::None,
                Mode::SelfSummary => {
                    return Err(UsageError("features supports --summary-mode truth or none".into()).into())
                }
            };
            let path = chart;
            let chart = load_chart(&path)?;
            let manifest = manifest_for(labels.as_deref(), parent(&path), &dictionary)?;
            let labels = genmania::instrument::label_chart_samples(&chart, &manifest, &dictionary);
            let grid = build_time_grid(&chart)?;
            let timings = grid.object_timings(&chart);
            let curve = chart_difficulty(
                &chart,
                &grid,
                ControlSource::for_chart(&chart),
                &StrainConfig::default(),
            );
            let rows = build_features(&chart, &timings, &curve, &labels, source)?;
            write_feature_dump(BufWriter::new(create(&output)?), &rows)?;
            println!(
                "{} objects x {} features",
                rows.len(),
                genmania::features::FEATURE_WIDTH
            );
            Ok(())
        }
        Command::TrainClassifier { dir, output, labels } => {
            cmd_train_classifier(&dir, &output, labels.as_deref(), &settings, &dictionary)
        }
        Command::TrainSelector {
            corpus,
            output,
            labels,
            features,
            report,
        } => cmd_train_selector(
            &corpus,
            &output,
            labels.as_deref(),
            features.into(),
            report.as_deref(),
            &settings,
            &dictionary,
        ),
        Command::Generate {
            input,
            output,
            model,
            labels,
            difficulty_curve,
            summary_mode,
        } => {
            let chart = load_chart(&input)?;
            let model = read_selector(&model)?;
            let manifest = manifest_for(labels.as_deref(), parent(&input), &dictionary)?;
            let labels = genmania::instrument::label_chart_samples(&chart, &manifest, &dictionary);
            let scratch: BTreeSet<SampleId> = labels
                .iter()
                .filter(|(_, l)| l.name == "scratch")
                .map(|(id, _)| *id)
                .collect();
            let curve_windows = difficulty_curve
                .as_deref()
                .map(DifficultyCurve::read_windows)
                .transpose()?;
            let opts = GenerateOptions {
                mode: summary_mode.into(),
                curve_windows,
                placement: settings.placement,
                ..GenerateOptions::default()
            };
            let generated = generate(&chart, &labels, &model, &scratch, &opts)?;
            write_bms_file(&generated.chart, &output)?;
            println!(
                "{} of {} objects playable",
                generated.chart.playable_count(),
                generated.chart.objects().len()
            );
            Ok(())
        }
        Command::Evaluate {
            corpus,
            labels,
            out,
            models,
        } => cmd_evaluate(
            &corpus,
            labels.as_deref(),
            out.as_deref(),
            &models,
            &settings,
            &dictionary,
        ),
        Command::SynthCorpus {
            out,
            songs,
            measures,
            tones,
        } => {
            let cfg = SynthConfig {
                songs,
                measures,
                seed: settings.seed,
                ..SynthConfig::default()
            };
            write_chart_corpus(&out, &synth_corpus(&cfg))?;
            if let Some(per_class) = tones {
                write_tone_corpus(&out.join("tones"), per_class, settings.seed)?;
            }
            println!("wrote {songs} songs to {}", out.display());
            Ok(())
        }
    }
}

fn parent(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_selector(path: &Path) -> Result<SelectorModel> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    SelectorModel::read_from(BufReader::new(file)).with_context(|| path.display().to_string())
}

fn cmd_parse(path: &Path) -> Result<()> {
    let (chart, warnings) = genmania::bms::read_bms_file(path)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let meta = &chart.metadata;
    println!("title\t{}", meta.title.as_deref().unwrap_or(""));
    println!("artist\t{}", meta.artist.as_deref().unwrap_or(""));
    println!("bpm\t{}", chart.initial_bpm());
    println!("tempo_changes\t{}", chart.bpm_events().len() - 1);
    println!("measures\t{}", chart.last_measure() + 1);
    println!("samples\t{}", chart.sample_table().len());
    println!("objects\t{}", chart.objects().len());
    println!("playable\t{}", chart.playable_count());
    Ok(())
}

fn cmd_classify(dir: &Path, model: Option<&Path>, output: Option<&Path>, dictionary: &Dictionary) -> Result<()> {
    let model = model
        .map(|p| -> Result<ClassifierModel> {
            let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Ok(ClassifierModel::read_from(BufReader::new(file))?)
        })
        .transpose()?;
    let other = dictionary.taxonomy().label(genmania::instrument::CATEGORY_COUNT - 1);
    let mut rows = Vec::new();
    for path in wav_files(dir)? {
        let rel = path.strip_prefix(dir).unwrap_or(&path).display().to_string();
        let label = match &model {
            Some(m) => classify_sample(m, &fingerprint(&load_wave(&path)?), dictionary.taxonomy())?,
            None => genmania::instrument::label_from_filename(&rel, dictionary).unwrap_or_else(|| other.clone()),
        };
        rows.push((rel, label.name));
    }
    match output {
        Some(p) => write_label_manifest(BufWriter::new(create(p)?), &rows)?,
        None => write_label_manifest(std::io::stdout().lock(), &rows)?,
    }
    Ok(())
}

fn cmd_train_classifier(
    dir: &Path,
    output: &Path,
    labels: Option<&Path>,
    settings: &Settings,
    dictionary: &Dictionary,
) -> Result<()> {
    let manifest = manifest_for(labels, dir, dictionary)?;
    if manifest.is_empty() {
        bail!("no labels: pass --labels or put labels.tsv in {}", dir.display());
    }
    let mut corpus = Vec::with_capacity(manifest.len());
    for (file, label) in &manifest {
        let wave = load_wave(&dir.join(file))?;
        corpus.push((fingerprint(&wave), label.clone()));
    }
    let trained = train_classifier(&corpus, ClassifierShape::default(), &settings.classifier)?;
    trained.model.write_to(BufWriter::new(create(output)?))?;
    println!("held-out accuracy\t{:.4}", trained.test_accuracy);
    Ok(())
}

fn load_labelled_corpus(dir: &Path, labels: Option<&Path>, dictionary: &Dictionary) -> Result<Vec<CorpusChart>> {
    let manifest = manifest_for(labels, dir, dictionary)?;
    load_corpus(dir, &manifest, dictionary)
}

fn split_for(charts: &[CorpusChart], seed: u64) -> Result<SplitPlan> {
    Ok(SplitPlan::by_song(charts.iter().map(|c| c.song.as_str()), seed)?)
}

fn cmd_train_selector(
    dir: &Path,
    output: &Path,
    labels: Option<&Path>,
    features: FeatureSet,
    report: Option<&Path>,
    settings: &Settings,
    dictionary: &Dictionary,
) -> Result<()> {
    let charts = load_labelled_corpus(dir, labels, dictionary)?;
    let split = split_for(&charts, settings.seed)?;
    let strain = StrainConfig::default();
    let mut data = Vec::with_capacity(charts.len());
    for c in charts {
        data.push(prepare_chart(c.song, c.name, c.chart, c.labels, &strain)?.data);
    }
    let (model, history) = selector::train(&data, &split, features, &settings.selector)?;
    model.write_to(BufWriter::new(create(output)?))?;
    if let Some(p) = report {
        fs::write(p, history.to_text()).with_context(|| format!("writing {}", p.display()))?;
    }
    let best = history.epochs.iter().find(|e| e.epoch == history.best_epoch);
    match best {
        Some(e) => println!(
            "best epoch {}\tval_loss {:.6}\tval_f1 {:.4}",
            e.epoch, e.val_loss, e.val_f1
        ),
        None => println!("validation loss never improved on the initial weights"),
    }
    Ok(())
}

fn parse_model_arg(arg: &str) -> Result<Variant> {
    let (name, rest) = arg
        .split_once('=')
        .ok_or_else(|| UsageError(format!("--model expects name=path[:mode], got `{arg}`")))?;
    let (path, mode) = match rest.rsplit_once(':') {
        Some((p, "truth")) => (p, SummaryMode::Truth),
        Some((p, "self")) => (p, SummaryMode::SelfSummary),
        Some((p, "none")) => (p, SummaryMode::None),
        _ => (rest, SummaryMode::Truth),
    };
    Ok(Variant::new(
        name,
        VariantKind::Pretrained {
            path: PathBuf::from(path),
            mode,
        },
    ))
}

fn cmd_evaluate(
    dir: &Path,
    labels: Option<&Path>,
    out: Option<&Path>,
    models: &[String],
    settings: &Settings,
    dictionary: &Dictionary,
) -> Result<()> {
    let extra = models.iter().map(|m| parse_model_arg(m)).collect::<Result<Vec<_>>>()?;
    let charts = load_labelled_corpus(dir, labels, dictionary)?;
    let split = split_for(&charts, settings.seed)?;
    let strain = StrainConfig::default();
    let mut prepared = Vec::with_capacity(charts.len());
    for c in charts {
        prepared.push(prepare_chart(c.song, c.name, c.chart, c.labels, &strain)?);
    }
    let mut variants: Vec<Variant> = standard_variants();
    for v in &mut variants {
        if let VariantKind::Random { p } = &mut v.kind {
            *p = settings.random_p;
        }
    }
    if !extra.is_empty() {
        variants.retain(|v| matches!(v.kind, VariantKind::Random { .. } | VariantKind::AllPlayable));
        variants.extend(extra);
    }
    let cfg = ExperimentConfig {
        train: settings.selector.clone(),
        random_seed: settings.seed,
    };
    let report = run_experiment(&prepared, &variants, &split, &cfg)?;
    print!("{}", report.table());
    if let Some(out) = out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        fs::write(out.join("table.tsv"), report.table())?;
        for v in &variants {
            if let Some(text) = report.difficulty_vs_f1(&v.name) {
                fs::write(out.join(format!("difficulty_f1_{}.tsv", v.name)), text)?;
            }
        }
        for (name, history) in &report.training {
            fs::write(out.join(format!("training_{name}.tsv")), history.to_text())?;
        }
        let mut note = BufWriter::new(create(&out.join("NOTES.txt"))?);
        writeln!(
            note,
            "Metrics are computed per chart and averaged; std is the population std over charts."
        )?;
        writeln!(note, "Precision is 0 for charts with no predicted playable objects.")?;
        note.flush()?;
    }
    Ok(())
}
