//! Be-Music Source charts: the object model, parsing, timing and emission.
//!
//! Only the single-player subset is modelled. Every object is an instant
//! keysound: it either sits on one of the eight controls (seven keys and the
//! turntable) and is played by the player, or it sits in the background and
//! plays automatically.

mod base36;
mod emit;
mod parse;
mod timing;

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;
use thiserror::Error;

pub use base36::{base36_decode, base36_encode};
pub use emit::{emit_bms, write_bms_file};
pub use parse::{decode_bms_bytes, parse_bms, parse_bms_with_warnings, read_bms_file, ParseWarning, WarningKind};
pub use timing::{build_time_grid, ObjectTiming, TimeGrid};

/// Exact position inside a measure, in `[0, 1)`.
pub type Position = Ratio<u64>;

/// Number of player controls: seven keys plus the turntable.
pub const CONTROL_COUNT: usize = 8;

#[derive(Debug, Error)]
pub enum BmsError {
    #[error("line {line}: invalid token `{token}`")]
    InvalidToken { token: String, line: usize },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("missing initial #BPM")]
    MissingBpm,
    #[error("BPM must be positive and finite, got {0}")]
    InvalidBpm(f64),
    #[error("line {line}: sample {token} has no #WAV definition")]
    UnknownSample { token: String, line: usize },
    #[error("object at measure {measure} uses sample {token} which is absent from the sample table")]
    MissingSample { measure: u32, token: String },
    #[error("two playable objects share measure {measure}, position {position} on {lane}")]
    Collision {
        measure: u32,
        position: Position,
        lane: Lane,
    },
    #[error("position {0} lies outside [0, 1)")]
    InvalidPosition(Position),
    #[error("measure {0} must have a positive length")]
    InvalidMeasureLength(u32),
    #[error("BPM events must start at measure 0, position 0")]
    MissingInitialBpmEvent,
    #[error("sample id {0} is outside 1..=1295")]
    InvalidSampleId(u16),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Reference into a chart's sample table (`#WAVxx`). Never the rest token `00`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SampleId(u16);

impl SampleId {
    pub const MAX: u16 = 36 * 36 - 1;

    pub fn new(id: u16) -> Result<Self, BmsError> {
        if id == 0 || id > Self::MAX {
            return Err(BmsError::InvalidSampleId(id));
        }
        Ok(SampleId(id))
    }

    pub fn get(self) -> u16 {
        self.0
    }

    pub fn token(self) -> String {
        base36_encode(self.0)
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.token())
    }
}

/// One of the eight player controls. Indices 0..=6 are keys 1..=7, index 7 is
/// the turntable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Control(u8);

impl Control {
    pub const TURNTABLE: Control = Control(7);

    pub fn new(index: usize) -> Option<Self> {
        (index < CONTROL_COUNT).then_some(Control(index as u8))
    }

    pub fn all() -> impl Iterator<Item = Control> {
        (0..CONTROL_COUNT as u8).map(Control)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_turntable(self) -> bool {
        self == Self::TURNTABLE
    }

    /// Player-1 channel number: keys 1-5 on 11-15, turntable on 16, keys 6-7 on 18-19.
    pub(crate) fn channel(self) -> u8 {
        match self.0 {
            0..=4 => 11 + self.0,
            5 => 18,
            6 => 19,
            _ => 16,
        }
    }

    pub(crate) fn from_channel(channel: u8) -> Option<Self> {
        match channel {
            11..=15 => Some(Control(channel - 11)),
            16 => Some(Self::TURNTABLE),
            18 => Some(Control(5)),
            19 => Some(Control(6)),
            _ => None,
        }
    }
}

impl fmt::Display for Control {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_turntable() {
            f.write_str("turntable")
        } else {
            write!(f, "key {}", self.0 + 1)
        }
    }
}

/// Where an object lives. Controls sort before the background.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Lane {
    Control(Control),
    Background,
}

impl fmt::Display for Lane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lane::Control(c) => c.fmt(f),
            Lane::Background => f.write_str("background"),
        }
    }
}

/// A single keysound event.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimedObject {
    pub measure: u32,
    pub position: Position,
    pub lane: Lane,
    pub sample: SampleId,
}

impl TimedObject {
    pub fn new(measure: u32, position: Position, sample: SampleId, lane: Lane) -> Self {
        TimedObject {
            measure,
            position,
            lane,
            sample,
        }
    }

    pub fn is_playable(&self) -> bool {
        self.lane != Lane::Background
    }

    pub fn control(&self) -> Option<Control> {
        match self.lane {
            Lane::Control(c) => Some(c),
            Lane::Background => None,
        }
    }

    /// Lexicographic time key; monotone in resolved seconds.
    pub fn time_key(&self) -> (u32, Position) {
        (self.measure, self.position)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BpmEvent {
    pub measure: u32,
    pub position: Position,
    pub bpm: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Metadata {
    pub title: Option<String>,
    pub artist: Option<String>,
    /// Author-declared difficulty label (`#PLAYLEVEL`).
    pub play_level: Option<String>,
}

/// A parsed or generated chart.
///
/// Objects are kept sorted by `(measure, position, lane, sample)`, which is
/// resolved-time order with ties broken by lane. The first BPM event is always
/// the initial tempo at the chart origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    objects: Vec<TimedObject>,
    sample_table: BTreeMap<SampleId, String>,
    bpm_events: Vec<BpmEvent>,
    measure_lengths: BTreeMap<u32, Position>,
    pub metadata: Metadata,
}

fn check_bpm(bpm: f64) -> Result<(), BmsError> {
    if bpm.is_finite() && bpm > 0.0 {
        Ok(())
    } else {
        Err(BmsError::InvalidBpm(bpm))
    }
}

fn check_position(position: Position) -> Result<(), BmsError> {
    if position < Position::from_integer(1) {
        Ok(())
    } else {
        Err(BmsError::InvalidPosition(position))
    }
}

impl Chart {
    pub fn new(initial_bpm: f64) -> Result<Self, BmsError> {
        check_bpm(initial_bpm)?;
        Ok(Chart {
            objects: Vec::new(),
            sample_table: BTreeMap::new(),
            bpm_events: vec![BpmEvent {
                measure: 0,
                position: Position::from_integer(0),
                bpm: initial_bpm,
            }],
            measure_lengths: BTreeMap::new(),
            metadata: Metadata::default(),
        })
    }

    pub fn objects(&self) -> &[TimedObject] {
        &self.objects
    }

    pub fn sample_table(&self) -> &BTreeMap<SampleId, String> {
        &self.sample_table
    }

    pub fn bpm_events(&self) -> &[BpmEvent] {
        &self.bpm_events
    }

    pub fn initial_bpm(&self) -> f64 {
        self.bpm_events[0].bpm
    }

    pub fn measure_lengths(&self) -> &BTreeMap<u32, Position> {
        &self.measure_lengths
    }

    /// Length of `measure` in whole notes (1 = four beats).
    pub fn measure_length(&self, measure: u32) -> Position {
        self.measure_lengths
            .get(&measure)
            .copied()
            .unwrap_or_else(|| Position::from_integer(1))
    }

    pub fn sample_name(&self, id: SampleId) -> Option<&str> {
        self.sample_table.get(&id).map(String::as_str)
    }

    /// Binds `id` to an audio file, replacing any earlier binding.
    pub fn set_sample(&mut self, id: SampleId, file_name: impl Into<String>) {
        self.sample_table.insert(id, file_name.into());
    }

    /// Adds or replaces the tempo at a point. A change at the origin replaces
    /// the initial tempo.
    pub fn set_bpm(&mut self, measure: u32, position: Position, bpm: f64) -> Result<(), BmsError> {
        check_bpm(bpm)?;
        check_position(position)?;
        let key = (measure, position);
        match self.bpm_events.binary_search_by(|e| (e.measure, e.position).cmp(&key)) {
            Ok(i) => self.bpm_events[i].bpm = bpm,
            Err(i) => self.bpm_events.insert(i, BpmEvent { measure, position, bpm }),
        }
        Ok(())
    }

    /// Sets the length of a measure. A length of exactly 1 restores the default.
    pub fn set_measure_length(&mut self, measure: u32, length: Position) -> Result<(), BmsError> {
        if length <= Position::from_integer(0) {
            return Err(BmsError::InvalidMeasureLength(measure));
        }
        if length == Position::from_integer(1) {
            self.measure_lengths.remove(&measure);
        } else {
            self.measure_lengths.insert(measure, length);
        }
        Ok(())
    }

    /// Inserts an object in sorted order.
    ///
    /// Fails when the sample is unbound or when a playable object already
    /// occupies the same time and control.
    pub fn add_object(&mut self, object: TimedObject) -> Result<(), BmsError> {
        check_position(object.position)?;
        if !self.sample_table.contains_key(&object.sample) {
            return Err(BmsError::MissingSample {
                measure: object.measure,
                token: object.sample.token(),
            });
        }
        if object.is_playable() && self.playable_at(object.time_key(), object.lane).is_some() {
            return Err(BmsError::Collision {
                measure: object.measure,
                position: object.position,
                lane: object.lane,
            });
        }
        let at = self.objects.partition_point(|o| o <= &object);
        self.objects.insert(at, object);
        Ok(())
    }

    /// Like [`Chart::add_object`] but a playable object replaces whatever
    /// already sits on its control at that time. Returns the replaced object.
    pub fn put_object(&mut self, object: TimedObject) -> Result<Option<TimedObject>, BmsError> {
        let mut replaced = None;
        if object.is_playable() {
            if let Some(i) = self.playable_at(object.time_key(), object.lane) {
                replaced = Some(self.objects.remove(i));
            }
        }
        self.add_object(object)?;
        Ok(replaced)
    }

    fn playable_at(&self, key: (u32, Position), lane: Lane) -> Option<usize> {
        let start = self.objects.partition_point(|o| o.time_key() < key);
        self.objects[start..]
            .iter()
            .take_while(|o| o.time_key() == key)
            .position(|o| o.lane == lane)
            .map(|i| start + i)
    }

    /// Returns a copy of this chart with every object's lane replaced.
    ///
    /// `lanes` is indexed like [`Chart::objects`].
    pub fn with_lanes(&self, lanes: &[Lane]) -> Result<Chart, BmsError> {
        assert_eq!(lanes.len(), self.objects.len(), "one lane per object");
        let mut out = Chart {
            objects: Vec::with_capacity(self.objects.len()),
            ..self.clone()
        };
        for (object, &lane) in self.objects.iter().zip(lanes) {
            out.add_object(TimedObject { lane, ..object.clone() })?;
        }
        Ok(out)
    }

    /// Copy with every object moved to the background.
    pub fn score_only(&self) -> Chart {
        let lanes = vec![Lane::Background; self.objects.len()];
        self.with_lanes(&lanes).expect("background objects never collide")
    }

    /// Number of playable objects.
    pub fn playable_count(&self) -> usize {
        self.objects.iter().filter(|o| o.is_playable()).count()
    }

    /// Indices of objects grouped by identical time, in time order.
    pub fn timestep_groups(&self) -> Vec<std::ops::Range<usize>> {
        let mut groups = Vec::new();
        let mut start = 0;
        for i in 1..=self.objects.len() {
            if i == self.objects.len() || self.objects[i].time_key() != self.objects[start].time_key() {
                if i > start {
                    groups.push(start..i);
                }
                start = i;
            }
        }
        groups
    }

    /// Highest measure referenced by anything in the chart.
    pub fn last_measure(&self) -> u32 {
        let objects = self.objects.iter().map(|o| o.measure);
        let bpms = self.bpm_events.iter().map(|e| e.measure);
        let lengths = self.measure_lengths.keys().copied();
        objects.chain(bpms).chain(lengths).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pos(n: u64, d: u64) -> Position {
        Position::new(n, d)
    }

    fn sid(v: u16) -> SampleId {
        SampleId::new(v).unwrap()
    }

    #[test]
    fn sample_id_rejects_rest_token() {
        assert!(SampleId::new(0).is_err());
        assert!(SampleId::new(1296).is_err());
        assert_eq!(SampleId::new(1295).unwrap().token(), "ZZ");
    }

    #[test]
    fn channel_mapping_is_bijective() {
        for c in Control::all() {
            assert_eq!(Control::from_channel(c.channel()), Some(c));
        }
        assert_eq!(Control::from_channel(16), Some(Control::TURNTABLE));
        assert_eq!(Control::from_channel(17), None);
    }

    #[test]
    fn objects_stay_sorted_with_lane_tie_break() {
        let mut chart = Chart::new(120.0).unwrap();
        chart.set_sample(sid(1), "a.wav");
        chart.set_sample(sid(2), "b.wav");
        let k2 = Lane::Control(Control::new(1).unwrap());
        let k1 = Lane::Control(Control::new(0).unwrap());
        chart
            .add_object(TimedObject::new(1, pos(1, 2), sid(1), Lane::Background))
            .unwrap();
        chart.add_object(TimedObject::new(1, pos(1, 2), sid(2), k2)).unwrap();
        chart.add_object(TimedObject::new(0, pos(3, 4), sid(1), k1)).unwrap();
        chart.add_object(TimedObject::new(1, pos(1, 2), sid(1), k1)).unwrap();
        let lanes: Vec<_> = chart.objects().iter().map(|o| (o.measure, o.lane)).collect();
        assert_eq!(lanes, vec![(0, k1), (1, k1), (1, k2), (1, Lane::Background)]);
        assert_eq!(chart.timestep_groups(), vec![0..1, 1..4]);
    }

    #[test]
    fn rejects_playable_collision_and_unknown_sample() {
        let mut chart = Chart::new(120.0).unwrap();
        chart.set_sample(sid(1), "a.wav");
        let k1 = Lane::Control(Control::new(0).unwrap());
        chart.add_object(TimedObject::new(0, pos(0, 1), sid(1), k1)).unwrap();
        assert!(matches!(
            chart.add_object(TimedObject::new(0, pos(0, 1), sid(1), k1)),
            Err(BmsError::Collision { .. })
        ));
        assert!(matches!(
            chart.add_object(TimedObject::new(0, pos(0, 1), sid(7), Lane::Background)),
            Err(BmsError::MissingSample { .. })
        ));
        // background objects may stack
        chart
            .add_object(TimedObject::new(0, pos(0, 1), sid(1), Lane::Background))
            .unwrap();
        chart
            .add_object(TimedObject::new(0, pos(0, 1), sid(1), Lane::Background))
            .unwrap();
        assert_eq!(chart.objects().len(), 3);
    }

    #[test]
    fn bpm_changes_replace_at_same_point() {
        let mut chart = Chart::new(120.0).unwrap();
        chart.set_bpm(0, pos(0, 1), 150.0).unwrap();
        chart.set_bpm(2, pos(1, 2), 90.0).unwrap();
        assert_eq!(chart.initial_bpm(), 150.0);
        assert_eq!(chart.bpm_events().len(), 2);
        assert!(chart.set_bpm(1, pos(0, 1), 0.0).is_err());
        assert!(Chart::new(-3.0).is_err());
    }

    #[test]
    fn unit_measure_length_is_default() {
        let mut chart = Chart::new(120.0).unwrap();
        chart.set_measure_length(3, pos(3, 4)).unwrap();
        chart.set_measure_length(4, pos(1, 1)).unwrap();
        assert_eq!(chart.measure_lengths().len(), 1);
        assert_eq!(chart.measure_length(4), pos(1, 1));
        assert!(chart.set_measure_length(5, pos(0, 1)).is_err());
    }
}
