//! Per-object selector input.
//!
//! Layout of the 299 values:
//!
//! | offset | width | content |
//! |-------:|------:|---------|
//! | 0      | 1     | difficulty of the object's window |
//! | 1      | 27    | instrument one-hot |
//! | 28     | 1     | sixteenth-of-a-beat alignment, 0..=15 |
//! | 29     | 270   | playability summary |
//!
//! The summary holds, for each trailing window of 2, 4, 8, 16 and 32 beats and
//! for each instrument, the fraction of that instrument's appearances in the
//! window that were playable and the fraction that were not. Windows are
//! major, instruments minor, and each `(playable, non-playable)` pair is
//! adjacent.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

use crate::bms::{Chart, ObjectTiming, SampleId};
use crate::challenge::DifficultyCurve;
use crate::instrument::{InstrumentLabel, CATEGORY_COUNT};

pub const SUMMARY_WINDOWS: [f64; 5] = [2.0, 4.0, 8.0, 16.0, 32.0];
pub const SUMMARY_WIDTH: usize = SUMMARY_WINDOWS.len() * CATEGORY_COUNT * 2;
pub const FEATURE_WIDTH: usize = 1 + CATEGORY_COUNT + 1 + SUMMARY_WIDTH;

pub const DIFFICULTY_OFFSET: usize = 0;
pub const INSTRUMENT_OFFSET: usize = 1;
pub const BEAT_OFFSET: usize = INSTRUMENT_OFFSET + CATEGORY_COUNT;
pub const SUMMARY_OFFSET: usize = BEAT_OFFSET + 1;

const DUMP_MAGIC: &[u8; 4] = b"GMFV";
const DUMP_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("object {index} uses sample {sample} which has no instrument label")]
    Unlabeled { index: usize, sample: String },
    #[error("difficulty curve covers {curve} objects but the chart has {chart}")]
    CurveMismatch { curve: usize, chart: usize },
    #[error("feature dump: {0}")]
    Dump(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn zeros() -> Self {
        FeatureVector {
            values: vec![0.0; FEATURE_WIDTH],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        assert_eq!(values.len(), FEATURE_WIDTH);
        FeatureVector { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn difficulty(&self) -> f64 {
        self.values[DIFFICULTY_OFFSET]
    }

    pub fn instrument_onehot(&self) -> &[f64] {
        &self.values[INSTRUMENT_OFFSET..BEAT_OFFSET]
    }

    pub fn instrument(&self) -> usize {
        self.instrument_onehot()
            .iter()
            .position(|&v| v == 1.0)
            .expect("one-hot block has a set entry")
    }

    pub fn beat_alignment(&self) -> u8 {
        self.values[BEAT_OFFSET] as u8
    }

    pub fn summary(&self) -> &[f64] {
        &self.values[SUMMARY_OFFSET..]
    }

    fn summary_mut(&mut self) -> &mut [f64] {
        &mut self.values[SUMMARY_OFFSET..]
    }
}

/// Which sixteenth of its beat a beat position falls in; 0 is on the beat.
pub fn beat_alignment(beat: f64) -> u8 {
    let scaled = beat.fract() * 16.0;
    let nearest = scaled.round();
    let snapped = if (scaled - nearest).abs() < 1e-6 {
        nearest
    } else {
        scaled.floor()
    };
    // a value a hair below the next beat snaps to 16
    (snapped as u32 % 16) as u8
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryEvent {
    pub beat: f64,
    pub instrument: usize,
    pub playable: bool,
}

/// Past decisions, sorted by beat.
#[derive(Clone, Debug, Default)]
pub struct PlayabilityHistory {
    events: Vec<HistoryEvent>,
}

impl PlayabilityHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an event; beats must not go backwards.
    pub fn push(&mut self, event: HistoryEvent) {
        if let Some(last) = self.events.last() {
            assert!(event.beat >= last.beat, "history must be appended in beat order");
        }
        self.events.push(event);
    }

    pub fn events(&self) -> &[HistoryEvent] {
        &self.events
    }
}

/// Playability summary at `now` from events strictly before it.
pub fn summarize(history: &PlayabilityHistory, now: f64) -> Vec<f64> {
    let mut out = vec![0.0; SUMMARY_WIDTH];
    write_summary(history, now, &mut out);
    out
}

fn write_summary(history: &PlayabilityHistory, now: f64, out: &mut [f64]) {
    let events = history.events();
    let widest = SUMMARY_WINDOWS[SUMMARY_WINDOWS.len() - 1];
    let end = events.partition_point(|e| e.beat < now);
    let start = events[..end].partition_point(|e| e.beat < now - widest);
    // counts[window][instrument] = (playable, non-playable)
    let mut counts = [[(0u32, 0u32); CATEGORY_COUNT]; SUMMARY_WINDOWS.len()];
    for e in &events[start..end] {
        for (w, &width) in SUMMARY_WINDOWS.iter().enumerate() {
            if e.beat >= now - width {
                let c = &mut counts[w][e.instrument];
                if e.playable {
                    c.0 += 1;
                } else {
                    c.1 += 1;
                }
            }
        }
    }
    for (w, per_window) in counts.iter().enumerate() {
        for (i, &(p, q)) in per_window.iter().enumerate() {
            let total = p + q;
            if total > 0 {
                let at = (w * CATEGORY_COUNT + i) * 2;
                out[at] = f64::from(p) / f64::from(total);
                out[at + 1] = f64::from(q) / f64::from(total);
            }
        }
    }
}

/// Where summary playability comes from.
pub enum SummarySource<'a> {
    /// The chart's authored playability.
    GroundTruth,
    /// Decisions made while generating. The hook receives each object's index
    /// and features in chart order and returns whether it is playable; that
    /// answer feeds the summaries of later objects.
    SelfSummary(&'a mut dyn FnMut(usize, &FeatureVector) -> bool),
    /// Summary block left at zero.
    None,
}

/// Instrument index of every object, looked up by sample.
pub fn object_instruments(
    chart: &Chart,
    labels: &BTreeMap<SampleId, InstrumentLabel>,
) -> Result<Vec<usize>, FeatureError> {
    chart
        .objects()
        .iter()
        .enumerate()
        .map(|(index, o)| {
            labels
                .get(&o.sample)
                .map(|l| l.index)
                .ok_or_else(|| FeatureError::Unlabeled {
                    index,
                    sample: o.sample.token(),
                })
        })
        .collect()
}

/// Features for every object of a chart, in chart order.
pub fn build_features(
    chart: &Chart,
    timings: &[ObjectTiming],
    curve: &DifficultyCurve,
    labels: &BTreeMap<SampleId, InstrumentLabel>,
    source: SummarySource<'_>,
) -> Result<Vec<FeatureVector>, FeatureError> {
    let objects = chart.objects();
    if curve.object_difficulty.len() != objects.len() {
        return Err(FeatureError::CurveMismatch {
            curve: curve.object_difficulty.len(),
            chart: objects.len(),
        });
    }
    assert_eq!(timings.len(), objects.len(), "one timing per object");
    let instruments = object_instruments(chart, labels)?;

    let mut history = PlayabilityHistory::new();
    let mut out = Vec::with_capacity(objects.len());
    let mut source = source;
    for (i, object) in objects.iter().enumerate() {
        let beat = timings[i].beat;
        let mut fv = FeatureVector::zeros();
        fv.values[DIFFICULTY_OFFSET] = curve.object_difficulty[i];
        fv.values[INSTRUMENT_OFFSET + instruments[i]] = 1.0;
        fv.values[BEAT_OFFSET] = f64::from(beat_alignment(beat));
        let playable = match &mut source {
            SummarySource::GroundTruth => {
                write_summary(&history, beat, fv.summary_mut());
                object.is_playable()
            }
            SummarySource::SelfSummary(decide) => {
                write_summary(&history, beat, fv.summary_mut());
                decide(i, &fv)
            }
            SummarySource::None => false,
        };
        if !matches!(source, SummarySource::None) {
            history.push(HistoryEvent {
                beat,
                instrument: instruments[i],
                playable,
            });
        }
        out.push(fv);
    }
    Ok(out)
}

/// Writes a feature matrix: magic `GMFV`, version, row count (u64), column
/// count (u32), then row-major little-endian `f32` values.
pub fn write_feature_dump<W: Write>(mut w: W, rows: &[FeatureVector]) -> Result<(), FeatureError> {
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&DUMP_VERSION.to_le_bytes())?;
    w.write_all(&(rows.len() as u64).to_le_bytes())?;
    w.write_all(&(FEATURE_WIDTH as u32).to_le_bytes())?;
    for row in rows {
        for &v in row.as_slice() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_feature_dump<R: Read>(mut r: R) -> Result<Vec<FeatureVector>, FeatureError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(FeatureError::Dump("bad magic".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    if u32::from_le_bytes(word) != DUMP_VERSION {
        return Err(FeatureError::Dump("unsupported version".into()));
    }
    let mut long = [0u8; 8];
    r.read_exact(&mut long)?;
    let rows = u64::from_le_bytes(long) as usize;
    r.read_exact(&mut word)?;
    if u32::from_le_bytes(word) as usize != FEATURE_WIDTH {
        return Err(FeatureError::Dump("unexpected column count".into()));
    }
    let mut out = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut values = Vec::with_capacity(FEATURE_WIDTH);
        for _ in 0..FEATURE_WIDTH {
            r.read_exact(&mut word)?;
            values.push(f64::from(f32::from_le_bytes(word)));
        }
        out.push(FeatureVector { values });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_widths() {
        assert_eq!(SUMMARY_WIDTH, 270);
        assert_eq!(FEATURE_WIDTH, 299);
        assert_eq!(SUMMARY_OFFSET, 29);
    }

    #[test]
    fn alignment_examples() {
        assert_eq!(beat_alignment(7.0), 0);
        assert_eq!(beat_alignment(3.5), 8);
        assert_eq!(beat_alignment(2.0625), 1);
        assert_eq!(beat_alignment(2.9375), 15);
        assert_eq!(beat_alignment(1.0 / 3.0), 5);
        // float drift just under a sixteenth boundary
        assert_eq!(beat_alignment(0.1875 - 1e-12), 3);
        assert_eq!(beat_alignment(4.0 - 1e-12), 0);
    }

    fn drum(beat: f64, playable: bool) -> HistoryEvent {
        HistoryEvent {
            beat,
            instrument: 0,
            playable,
        }
    }

    #[test]
    fn empty_history_summarizes_to_zero() {
        assert!(summarize(&PlayabilityHistory::new(), 10.0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_event_fills_all_windows() {
        let mut h = PlayabilityHistory::new();
        h.push(drum(9.0, true));
        let s = summarize(&h, 10.0);
        for w in 0..5 {
            let at = w * CATEGORY_COUNT * 2;
            assert_eq!((s[at], s[at + 1]), (1.0, 0.0));
        }
        assert_eq!(s.iter().filter(|&&v| v != 0.0).count(), 5);
    }

    #[test]
    fn two_events_split_by_window() {
        // counting oracle: window 2 sees only the beat-9 event, windows >= 4 see both
        let mut h = PlayabilityHistory::new();
        h.push(drum(7.0, false));
        h.push(drum(9.0, true));
        let s = summarize(&h, 10.0);
        assert_eq!((s[0], s[1]), (1.0, 0.0));
        for w in 1..5 {
            let at = w * CATEGORY_COUNT * 2;
            assert_eq!((s[at], s[at + 1]), (0.5, 0.5));
        }
    }

    #[test]
    fn simultaneous_events_are_excluded() {
        let mut h = PlayabilityHistory::new();
        h.push(drum(10.0, true));
        assert!(summarize(&h, 10.0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dump_round_trip() {
        let mut fv = FeatureVector::zeros();
        fv.values[0] = 3.25;
        fv.values[5] = 1.0;
        let mut buf = Vec::new();
        write_feature_dump(&mut buf, &[fv.clone(), FeatureVector::zeros()]).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 8 + 4 + 2 * 299 * 4);
        let back = read_feature_dump(buf.as_slice()).unwrap();
        assert_eq!(back, vec![fv, FeatureVector::zeros()]);
        assert!(read_feature_dump(&b"XXXX"[..]).is_err());
    }
}
