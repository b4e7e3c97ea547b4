//! Strain-based difficulty.
//!
//! Every playable object raises two accumulators: the strain of the control it
//! is played on, and an overall strain shared by all controls. Both decay
//! exponentially with elapsed time, so dense passages leave residual strain
//! that carries into the objects after them. The chart is then cut into fixed
//! windows; a window's difficulty is the largest strain inside it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::bms::{Chart, ObjectTiming, TimeGrid};

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("window {0} appears twice")]
    DuplicateWindow(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Constants of the strain recurrence. Decay rates are the fraction of strain
/// left after one second.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrainConfig {
    pub base_individual: f64,
    pub base_overall: f64,
    pub individual_decay: f64,
    pub overall_decay: f64,
    pub individual_weight: f64,
    pub overall_weight: f64,
    /// Geometric weight applied to the sorted window peaks.
    pub peak_weight: f64,
    pub window_seconds: f64,
}

impl Default for StrainConfig {
    fn default() -> Self {
        StrainConfig {
            base_individual: 2.0,
            base_overall: 1.0,
            individual_decay: 0.125,
            overall_decay: 0.30,
            individual_weight: 1.0,
            overall_weight: 1.0,
            peak_weight: 0.9,
            window_seconds: 0.4,
        }
    }
}

/// Which objects strain and what counts as a control.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControlSource {
    /// Playable objects on their authored lanes.
    Lanes,
    /// Every object, with each distinct sample id acting as its own control.
    /// Used when no lanes exist yet.
    SampleIds,
}

impl ControlSource {
    /// `Lanes` when the chart has any playable object, `SampleIds` otherwise.
    pub fn for_chart(chart: &Chart) -> Self {
        if chart.objects().iter().any(|o| o.is_playable()) {
            ControlSource::Lanes
        } else {
            ControlSource::SampleIds
        }
    }

    pub(crate) fn key(self, object: &crate::bms::TimedObject) -> Option<u32> {
        match self {
            ControlSource::Lanes => object.control().map(|c| c.index() as u32),
            ControlSource::SampleIds => Some(u32::from(object.sample.get())),
        }
    }
}

/// Both accumulators right after an object was applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectStrain {
    pub individual: f64,
    pub overall: f64,
}

impl ObjectStrain {
    pub fn combined(&self, cfg: &StrainConfig) -> f64 {
        cfg.individual_weight * self.individual + cfg.overall_weight * self.overall
    }
}

/// Running strain. Per-control entries hold `(strain, last event seconds)`.
#[derive(Clone, Debug, Default)]
pub struct StrainState {
    individual: BTreeMap<u32, (f64, f64)>,
    overall: f64,
    last_group: Option<f64>,
}

impl StrainState {
    /// Strain of `control` decayed to time `t`, without applying an event.
    pub fn individual_at(&self, control: u32, t: f64, cfg: &StrainConfig) -> f64 {
        match self.individual.get(&control) {
            Some(&(s, last)) => s * cfg.individual_decay.powf(t - last),
            None => 0.0,
        }
    }

    /// Applies a group of `k` simultaneous events at time `t` to the overall strain.
    pub fn apply_group(&mut self, t: f64, k: usize, cfg: &StrainConfig) -> f64 {
        let decayed = match self.last_group {
            Some(last) => self.overall * cfg.overall_decay.powf(t - last),
            None => 0.0,
        };
        self.overall = decayed + cfg.base_overall * (k as f64 - 1.0) + cfg.base_overall;
        self.last_group = Some(t);
        self.overall
    }

    /// Applies one event on `control` at time `t`.
    pub fn apply_individual(&mut self, control: u32, t: f64, cfg: &StrainConfig) -> f64 {
        let s = self.individual_at(control, t, cfg) + cfg.base_individual;
        self.individual.insert(control, (s, t));
        s
    }
}

/// Per-object strain; `None` for objects that do not strain (background
/// objects when lanes are used).
pub fn compute_strain(
    chart: &Chart,
    grid: &TimeGrid,
    source: ControlSource,
    cfg: &StrainConfig,
) -> Vec<Option<ObjectStrain>> {
    let timings = grid.object_timings(chart);
    strain_from_timings(chart, &timings, source, cfg)
}

pub fn strain_from_timings(
    chart: &Chart,
    timings: &[ObjectTiming],
    source: ControlSource,
    cfg: &StrainConfig,
) -> Vec<Option<ObjectStrain>> {
    let objects = chart.objects();
    let mut out = vec![None; objects.len()];
    let mut state = StrainState::default();
    for group in chart.timestep_groups() {
        let members: Vec<(usize, u32)> = group
            .clone()
            .filter_map(|i| source.key(&objects[i]).map(|k| (i, k)))
            .collect();
        if members.is_empty() {
            continue;
        }
        let t = timings[group.start].seconds;
        let overall = state.apply_group(t, members.len(), cfg);
        for (i, key) in members {
            let individual = state.apply_individual(key, t, cfg);
            out[i] = Some(ObjectStrain { individual, overall });
        }
    }
    out
}

/// Windowed difficulty over a chart.
#[derive(Clone, Debug, PartialEq)]
pub struct DifficultyCurve {
    pub window_seconds: f64,
    /// One value per window, window `w` covering `[w * len, (w + 1) * len)`.
    pub values: Vec<f64>,
    /// Difficulty of each object: the value of the window it falls in.
    pub object_difficulty: Vec<f64>,
    pub overall: f64,
}

/// Window containing time `t`. Times within 1e-9 windows of a boundary
/// snap onto it, so `t = 0.4` lands in window 1 despite float error.
pub fn window_index(t: f64, window_seconds: f64) -> usize {
    let q = t / window_seconds;
    let r = q.round();
    let w = if (q - r).abs() < 1e-9 { r } else { q.floor() };
    w.max(0.0) as usize
}

/// Builds the windowed curve from per-object strains.
pub fn difficulty_curve(
    timings: &[ObjectTiming],
    strains: &[Option<ObjectStrain>],
    cfg: &StrainConfig,
) -> DifficultyCurve {
    assert_eq!(timings.len(), strains.len());
    let windows = timings
        .iter()
        .map(|t| window_index(t.seconds, cfg.window_seconds) + 1)
        .max()
        .unwrap_or(0);
    let mut values = vec![0.0f64; windows];
    for (t, s) in timings.iter().zip(strains) {
        if let Some(s) = s {
            let w = window_index(t.seconds, cfg.window_seconds);
            values[w] = values[w].max(s.combined(cfg));
        }
    }
    DifficultyCurve::from_windows(values, timings, cfg)
}

/// Sum of window values sorted descending, the i-th weighted by `peak_weight^i`.
pub fn overall_difficulty(values: &[f64], peak_weight: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut weight = 1.0;
    let mut total = 0.0;
    for v in sorted {
        total += v * weight;
        weight *= peak_weight;
    }
    total
}

impl DifficultyCurve {
    /// Curve from explicit window values (e.g. a user-edited file), assigned
    /// onto the given objects. Objects past the last window get 0.
    pub fn from_windows(values: Vec<f64>, timings: &[ObjectTiming], cfg: &StrainConfig) -> Self {
        let object_difficulty = timings
            .iter()
            .map(|t| {
                values
                    .get(window_index(t.seconds, cfg.window_seconds))
                    .copied()
                    .unwrap_or(0.0)
            })
            .collect();
        DifficultyCurve {
            window_seconds: cfg.window_seconds,
            overall: overall_difficulty(&values, cfg.peak_weight),
            values,
            object_difficulty,
        }
    }

    /// `window_index<TAB>value` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{i}\t{v}").unwrap();
        }
        out
    }

    /// Parses window values. Blank lines and `#` comments are ignored;
    /// windows missing from the file are 0.
    pub fn parse_windows(text: &str) -> Result<Vec<f64>, CurveError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let malformed = |message: &str| CurveError::Malformed {
                line,
                message: message.to_string(),
            };
            let mut fields = trimmed.split_whitespace();
            let (Some(w), Some(v), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(malformed("expected `window_index<TAB>value`"));
            };
            let w: usize = w.parse().map_err(|_| malformed("window index is not an integer"))?;
            let v: f64 = v.parse().map_err(|_| malformed("value is not a number"))?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(malformed("difficulty must be finite and non-negative"));
            }
            if entries.insert(w, v).is_some() {
                return Err(CurveError::DuplicateWindow(w));
            }
        }
        let len = entries.keys().next_back().map_or(0, |w| w + 1);
        let mut values = vec![0.0; len];
        for (w, v) in entries {
            values[w] = v;
        }
        Ok(values)
    }

    pub fn read_windows(path: &Path) -> Result<Vec<f64>, CurveError> {
        let text = std::fs::read_to_string(path).map_err(|source| CurveError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_windows(&text)
    }
}

/// Convenience: strain and curve for a chart in one call.
pub fn chart_difficulty(chart: &Chart, grid: &TimeGrid, source: ControlSource, cfg: &StrainConfig) -> DifficultyCurve {
    let timings = grid.object_timings(chart);
    let strains = strain_from_timings(chart, &timings, source, cfg);
    difficulty_curve(&timings, &strains, cfg)
}
