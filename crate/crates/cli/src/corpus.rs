//! Loading chart directories and label manifests.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use genmania::audio::read_label_manifest;
use genmania::bms::{read_bms_file, Chart, SampleId};
use genmania::instrument::{label_chart_samples, Dictionary, InstrumentLabel};
use walkdir::WalkDir;

pub struct CorpusChart {
    pub song: String,
    pub name: String,
    pub chart: Chart,
    pub labels: BTreeMap<SampleId, InstrumentLabel>,
}

/// Reads a `file<TAB>category` manifest; categories must exist in the taxonomy.
pub fn load_manifest(path: &Path, dictionary: &Dictionary) -> Result<BTreeMap<String, InstrumentLabel>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = read_label_manifest(BufReader::new(file)).with_context(|| path.display().to_string())?;
    rows.into_iter()
        .map(|(file, category)| {
            let label = dictionary
                .taxonomy()
                .label_named(&category)
                .ok_or_else(|| anyhow!("{}: unknown category `{category}` for {file}", path.display()))?;
            Ok((file, label))
        })
        .collect()
}

/// The manifest given explicitly, else `labels.tsv` next to the data, else none.
pub fn manifest_for(
    explicit: Option<&Path>,
    dir: &Path,
    dictionary: &Dictionary,
) -> Result<BTreeMap<String, InstrumentLabel>> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => dir.join("labels.tsv"),
    };
    if explicit.is_none() && !path.exists() {
        return Ok(BTreeMap::new());
    }
    load_manifest(&path, dictionary)
}

pub fn load_chart(path: &Path) -> Result<Chart> {
    let (chart, warnings) = read_bms_file(path)?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(chart)
}

fn files_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.with_context(|| format!("reading {}", dir.display()))?;
        let path = entry.path();
        if entry.file_type().is_file()
            && path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case(ext))
        {
            files.push(path.to_path_buf());
        }
    }
    Ok(files)
}

pub fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    files_with_extension(dir, "wav")
}

/// Every `.bms` file under `dir`. A chart's song is its first directory
/// below `dir`, or its file stem when it sits directly in `dir`.
pub fn load_corpus(
    dir: &Path,
    manifest: &BTreeMap<String, InstrumentLabel>,
    dictionary: &Dictionary,
) -> Result<Vec<CorpusChart>> {
    let files = files_with_extension(dir, "bms")?;
    if files.is_empty() {
        bail!("no .bms files under {}", dir.display());
    }
    files
        .into_iter()
        .map(|path| {
            let rel = path.strip_prefix(dir).unwrap_or(&path);
            let mut parts = rel.components();
            let first = parts.next().map(|c| c.as_os_str().to_string_lossy().into_owned());
            let song = if parts.next().is_some() {
                first.unwrap_or_default()
            } else {
                path.file_stem().unwrap_or_default().to_string_lossy().into_owned()
            };
            let chart = load_chart(&path)?;
            let labels = label_chart_samples(&chart, manifest, dictionary);
            Ok(CorpusChart {
                song,
                name: rel.display().to_string(),
                chart,
                labels,
            })
        })
        .collect()
}
