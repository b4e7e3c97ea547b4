use num_traits::ToPrimitive;

use super::{BmsError, Chart, Position};

/// Beats per whole measure of length 1.
const BEATS_PER_MEASURE: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
struct TempoSegment {
    beat: f64,
    seconds: f64,
    bpm: f64,
}

/// Maps `(measure, position)` to beats and seconds for one chart.
///
/// Beat positions are exact until the final conversion to `f64`, so two
/// objects at the same notated time always resolve to bit-identical values.
#[derive(Clone, Debug)]
pub struct TimeGrid {
    /// Exact beat at which each measure starts, for measures `0..=last + 1`.
    measure_starts: Vec<Position>,
    /// Tempo segments sorted by beat; the first starts at beat 0.
    segments: Vec<TempoSegment>,
}

/// Resolved time of one object.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectTiming {
    pub seconds: f64,
    pub beat: f64,
}

/// Resolves a chart's tempo and measure structure into a [`TimeGrid`].
pub fn build_time_grid(chart: &Chart) -> Result<TimeGrid, BmsError> {
    let events = chart.bpm_events();
    let first = events.first().ok_or(BmsError::MissingBpm)?;
    if first.measure != 0 || first.position != Position::from_integer(0) {
        return Err(BmsError::MissingInitialBpmEvent);
    }
    if let Some(e) = events.iter().find(|e| !(e.bpm.is_finite() && e.bpm > 0.0)) {
        return Err(BmsError::InvalidBpm(e.bpm));
    }

    let last = chart.last_measure() as usize;
    let mut measure_starts = Vec::with_capacity(last + 2);
    let mut acc = Position::from_integer(0);
    for m in 0..=last + 1 {
        measure_starts.push(acc);
        let length = chart.measure_length(m as u32);
        if length <= Position::from_integer(0) {
            return Err(BmsError::InvalidMeasureLength(m as u32));
        }
        acc += length * BEATS_PER_MEASURE;
    }

    let mut grid = TimeGrid {
        measure_starts,
        segments: Vec::with_capacity(events.len()),
    };
    let mut seconds = 0.0;
    let mut prev: Option<TempoSegment> = None;
    for e in events {
        let beat = grid.beat_exact(e.measure, e.position).to_f64().unwrap();
        if let Some(p) = prev {
            seconds = p.seconds + (beat - p.beat) * 60.0 / p.bpm;
        }
        let seg = TempoSegment {
            beat,
            seconds,
            bpm: e.bpm,
        };
        grid.segments.push(seg);
        prev = Some(seg);
    }
    Ok(grid)
}

impl TimeGrid {
    fn length_of(&self, measure: u32) -> Position {
        let m = measure as usize;
        if m + 1 < self.measure_starts.len() {
            (self.measure_starts[m + 1] - self.measure_starts[m]) / BEATS_PER_MEASURE
        } else {
            Position::from_integer(1)
        }
    }

    /// Exact beat index of a notated time.
    pub fn beat_exact(&self, measure: u32, position: Position) -> Position {
        let m = measure as usize;
        if m < self.measure_starts.len() {
            self.measure_starts[m] + self.length_of(measure) * position * BEATS_PER_MEASURE
        } else {
            let last = self.measure_starts.len() - 1;
            let extra = (m - last) as u64 * BEATS_PER_MEASURE;
            self.measure_starts[last] + extra + position * BEATS_PER_MEASURE
        }
    }

    /// Real-valued beats since the chart start.
    pub fn beats(&self, measure: u32, position: Position) -> f64 {
        self.beat_exact(measure, position).to_f64().unwrap()
    }

    pub fn seconds(&self, measure: u32, position: Position) -> f64 {
        self.seconds_at_beat(self.beats(measure, position))
    }

    pub fn seconds_at_beat(&self, beat: f64) -> f64 {
        let i = self.segments.partition_point(|s| s.beat <= beat).max(1) - 1;
        let seg = &self.segments[i];
        seg.seconds + (beat - seg.beat) * 60.0 / seg.bpm
    }

    /// Timing of every object of `chart`, indexed like [`Chart::objects`].
    pub fn object_timings(&self, chart: &Chart) -> Vec<ObjectTiming> {
        chart
            .objects()
            .iter()
            .map(|o| {
                let beat = self.beats(o.measure, o.position);
                ObjectTiming {
                    seconds: self.seconds_at_beat(beat),
                    beat,
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pos(n: u64, d: u64) -> Position {
        Position::new(n, d)
    }

    #[test]
    fn origin_is_zero() {
        let grid = build_time_grid(&Chart::new(133.0).unwrap()).unwrap();
        assert_eq!(grid.seconds(0, pos(0, 1)), 0.0);
        assert_eq!(grid.beats(0, pos(0, 1)), 0.0);
    }

    #[test]
    fn full_measure_at_150_bpm() {
        // oracle: 4 beats * 60 / 150
        let grid = build_time_grid(&Chart::new(150.0).unwrap()).unwrap();
        assert!((grid.seconds(1, pos(0, 1)) - 4.0 * 60.0 / 150.0).abs() < 1e-12);
        assert!((grid.seconds(1, pos(0, 1)) - 1.6).abs() < 1e-12);
    }

    #[test]
    fn half_measure_at_120_bpm() {
        // oracle: 2 beats * 60 / 120
        let mut chart = Chart::new(120.0).unwrap();
        chart.set_measure_length(1, pos(1, 2)).unwrap();
        let grid = build_time_grid(&chart).unwrap();
        let span = grid.seconds(2, pos(0, 1)) - grid.seconds(1, pos(0, 1));
        assert!((span - 2.0 * 60.0 / 120.0).abs() < 1e-12);
        assert_eq!(grid.beats(2, pos(0, 1)), 6.0);
        assert_eq!(grid.beats(1, pos(1, 2)), 5.0);
    }

    #[test]
    fn continuous_across_tempo_change() {
        let mut chart = Chart::new(120.0).unwrap();
        chart.set_bpm(1, pos(1, 2), 240.0).unwrap();
        let grid = build_time_grid(&chart).unwrap();
        // 6 beats at 120 then 2 beats at 240
        assert!((grid.seconds(1, pos(1, 2)) - 3.0).abs() < 1e-12);
        assert!((grid.seconds(2, pos(0, 1)) - 3.5).abs() < 1e-12);
        // measures beyond anything referenced keep the last tempo
        assert!((grid.seconds(10, pos(0, 1)) - (3.5 + 32.0 * 0.25)).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_positive_tempo() {
        let mut chart = Chart::new(120.0).unwrap();
        chart.bpm_events[0].bpm = 0.0;
        assert!(matches!(build_time_grid(&chart), Err(BmsError::InvalidBpm(_))));
    }
}
