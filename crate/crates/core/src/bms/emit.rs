use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use num_integer::Integer;

use super::base36::{base36_encode, hex_encode};
use super::{BmsError, Chart, Lane, Position, TimedObject};

/// Renders a chart as BMS text.
///
/// Output is deterministic: headers in a fixed order, then one block per
/// measure with channels ascending. Each message uses the least common
/// multiple of its position denominators as its resolution.
pub fn emit_bms(chart: &Chart) -> Result<String, BmsError> {
    for o in chart.objects() {
        if chart.sample_name(o.sample).is_none() {
            return Err(BmsError::MissingSample {
                measure: o.measure,
                token: o.sample.token(),
            });
        }
    }

    let mut out = String::new();
    out.push_str("*---------------------- HEADER FIELD\n");
    out.push_str("#PLAYER 1\n");
    let meta = &chart.metadata;
    if let Some(title) = &meta.title {
        writeln!(out, "#TITLE {title}").unwrap();
    }
    if let Some(artist) = &meta.artist {
        writeln!(out, "#ARTIST {artist}").unwrap();
    }
    if let Some(level) = &meta.play_level {
        writeln!(out, "#PLAYLEVEL {level}").unwrap();
    }
    writeln!(out, "#BPM {}", chart.initial_bpm()).unwrap();
    for (id, name) in chart.sample_table() {
        writeln!(out, "#WAV{} {}", id.token(), name).unwrap();
    }

    // tempos the hex channel cannot carry get #BPMxx definitions
    let mut extended: Vec<f64> = Vec::new();
    for e in &chart.bpm_events()[1..] {
        if !is_hex_bpm(e.bpm) && !extended.iter().any(|b| b.to_bits() == e.bpm.to_bits()) {
            extended.push(e.bpm);
        }
    }
    for (i, bpm) in extended.iter().enumerate() {
        writeln!(out, "#BPM{} {}", base36_encode(i as u16 + 1), bpm).unwrap();
    }

    // (measure, channel) -> tracks of (position, token)
    type Track = Vec<(Position, String)>;
    let mut lines: BTreeMap<(u32, u8), Vec<Track>> = BTreeMap::new();
    let mut push = |measure: u32, channel: u8, position: Position, token: String, stack: bool| {
        let tracks = lines.entry((measure, channel)).or_default();
        let free = tracks
            .iter()
            .position(|t| stack && !t.iter().any(|(p, _)| *p == position));
        match free {
            Some(i) => tracks[i].push((position, token)),
            None if !stack && !tracks.is_empty() => tracks[0].push((position, token)),
            None => tracks.push(vec![(position, token)]),
        }
    };

    for e in &chart.bpm_events()[1..] {
        if is_hex_bpm(e.bpm) {
            push(e.measure, 3, e.position, hex_encode(e.bpm as u16), false);
        } else {
            let idx = extended.iter().position(|b| b.to_bits() == e.bpm.to_bits()).unwrap();
            push(e.measure, 8, e.position, base36_encode(idx as u16 + 1), false);
        }
    }
    for TimedObject {
        measure,
        position,
        lane,
        sample,
    } in chart.objects()
    {
        match lane {
            Lane::Background => push(*measure, 1, *position, sample.token(), true),
            Lane::Control(c) => push(*measure, c.channel(), *position, sample.token(), false),
        }
    }

    out.push_str("\n*---------------------- MAIN DATA FIELD\n");
    let mut measures: Vec<u32> = chart.measure_lengths().keys().copied().collect();
    measures.extend(lines.keys().map(|(m, _)| *m));
    measures.sort_unstable();
    measures.dedup();
    for measure in measures {
        if let Some(len) = chart.measure_lengths().get(&measure) {
            writeln!(out, "#{measure:03}02:{}", format_decimal(*len)).unwrap();
        }
        for ((_, channel), tracks) in lines.range((measure, 0)..=(measure, u8::MAX)) {
            for track in tracks {
                writeln!(out, "#{measure:03}{channel:02}:{}", render_track(track)).unwrap();
            }
        }
    }
    Ok(out)
}

fn is_hex_bpm(bpm: f64) -> bool {
    bpm.fract() == 0.0 && (1.0..=255.0).contains(&bpm)
}

fn render_track(track: &[(Position, String)]) -> String {
    let resolution = track.iter().fold(1u64, |acc, (p, _)| acc.lcm(p.denom()));
    let mut slots = vec!["00"; resolution as usize];
    for (position, token) in track {
        let slot = (position * resolution).to_integer() as usize;
        slots[slot] = token;
    }
    slots.concat()
}

/// Exact decimal when the denominator allows it, twelve places otherwise.
fn format_decimal(value: Position) -> String {
    let mut d = *value.denom();
    while d.is_multiple_of(2) {
        d /= 2;
    }
    while d.is_multiple_of(5) {
        d /= 5;
    }
    let float = *value.numer() as f64 / *value.denom() as f64;
    if d == 1 {
        format!("{float}")
    } else {
        let s = format!("{float:.12}");
        s.trim_end_matches('0').to_string()
    }
}

/// Writes emitted text as UTF-8 with a byte-order mark, so the file reads
/// back as UTF-8 rather than Shift-JIS.
pub fn write_bms_file(chart: &Chart, path: &Path) -> Result<(), BmsError> {
    let text = emit_bms(chart)?;
    let mut bytes = vec![0xEF, 0xBB, 0xBF];
    bytes.extend_from_slice(text.as_bytes());
    std::fs::write(path, bytes).map_err(|source| BmsError::Io {
        path: path.display().to_string(),
        source,
    })
}
