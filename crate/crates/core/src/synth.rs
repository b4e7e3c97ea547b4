//! Synthetic data: procedurally composed charts and tone recordings.
//!
//! Real keysound charts are not freely redistributable, so experiments and
//! tests run on generated material. Composed songs give each instrument a
//! repeating rhythm. Playability follows a corpus-wide rule by instrument
//! category (even category indices are playable) that half of the songs
//! invert. The instrument alone therefore predicts playability only half the
//! time; the recent playability of the other instruments reveals whether the
//! song is inverted.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{write_label_manifest, AudioError, Waveform, SAMPLE_RATE};
use crate::bms::{write_bms_file, BmsError, Chart, Control, Lane, SampleId, TimedObject};
use crate::instrument::{InstrumentLabel, Taxonomy, CATEGORY_COUNT};

/// A generated chart with the true instrument of every sample.
#[derive(Clone, Debug)]
pub struct SynthSong {
    pub name: String,
    pub chart: Chart,
    pub labels: BTreeMap<SampleId, InstrumentLabel>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub songs: usize,
    pub measures: u32,
    pub min_instruments: usize,
    pub max_instruments: usize,
    /// Categories instruments are drawn from; needs at least one even and one
    /// odd index.
    pub categories: Vec<usize>,
    /// Probability that an object follows its instrument's playability rule.
    /// At 1.0 playability is a pure function of song and instrument.
    pub regularity: f64,
    /// When set to `(k, n)`, every chart is truncated to a multiple of `n`
    /// objects and exactly `k/n` of them are made playable at random,
    /// replacing the instrument rule.
    pub playable_fraction: Option<(usize, usize)>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            songs: 60,
            measures: 16,
            min_instruments: 3,
            max_instruments: 6,
            categories: vec![0, 1, 7, 8, 9, 14, 16, 19],
            regularity: 1.0,
            playable_fraction: None,
            seed: 0,
        }
    }
}

struct Voice {
    label: InstrumentLabel,
    lane: Control,
    playable: bool,
    samples: Vec<SampleId>,
    pattern: [bool; 16],
}

/// Composes `cfg.songs` charts. Each song picks a tempo and a handful of
/// instruments; every instrument owns one key lane, a sixteenth-note pattern
/// with occasional variations, and a playability rule.
pub fn synth_corpus(cfg: &SynthConfig) -> Vec<SynthSong> {
    assert!(cfg.min_instruments >= 2 && cfg.min_instruments <= cfg.max_instruments && cfg.max_instruments <= 7);
    assert!(cfg.max_instruments <= cfg.categories.len(), "not enough categories");
    assert!(cfg.categories.iter().all(|&c| c < CATEGORY_COUNT));
    assert!(cfg.categories.iter().any(|c| c % 2 == 0) && cfg.categories.iter().any(|c| c % 2 == 1));
    let taxonomy = Taxonomy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.songs)
        .map(|i| synth_song(&mut rng, i, cfg, &taxonomy))
        .collect()
}

fn synth_song(rng: &mut ChaCha8Rng, index: usize, cfg: &SynthConfig, taxonomy: &Taxonomy) -> SynthSong {
    let name = format!("song{index:03}");
    let bpm = f64::from(rng.gen_range(100u32..=180));
    let mut chart = Chart::new(bpm).expect("tempo in range");
    chart.metadata.title = Some(name.clone());
    chart.metadata.artist = Some("synth".into());

    let count = rng.gen_range(cfg.min_instruments..=cfg.max_instruments);
    let mut even: Vec<usize> = cfg.categories.iter().copied().filter(|c| c % 2 == 0).collect();
    let mut odd: Vec<usize> = cfg.categories.iter().copied().filter(|c| c % 2 == 1).collect();
    even.shuffle(rng);
    odd.shuffle(rng);
    // one instrument of each parity, the rest drawn from what is left
    let mut classes = vec![even.pop().unwrap(), odd.pop().unwrap()];
    let mut rest: Vec<usize> = even.into_iter().chain(odd).collect();
    rest.shuffle(rng);
    classes.extend(rest.into_iter().take(count - 2));
    classes.shuffle(rng);
    let inverted = rng.gen_bool(0.5);
    let rules: Vec<bool> = classes.iter().map(|c| (c % 2 == 0) != inverted).collect();

    let mut next_id = 1u16;
    let mut voices = Vec::with_capacity(count);
    let mut labels = BTreeMap::new();
    for (slot, (&class, &playable)) in classes.iter().zip(&rules).enumerate() {
        let label = taxonomy.label(class);
        let samples: Vec<SampleId> = (0..rng.gen_range(1..=3))
            .map(|j| {
                let id = SampleId::new(next_id).expect("few samples per song");
                next_id += 1;
                chart.set_sample(id, format!("{}_{:02}.wav", label.name, j + 1));
                labels.insert(id, label.clone());
                id
            })
            .collect();
        let density = rng.gen_range(0.15..0.5);
        let mut pattern = [false; 16];
        for p in &mut pattern {
            *p = rng.gen_bool(density);
        }
        pattern[rng.gen_range(0..16)] = true;
        voices.push(Voice {
            label,
            lane: Control::new(slot).expect("at most seven voices"),
            playable,
            samples,
            pattern,
        });
    }

    let mut objects: Vec<(TimedObject, bool)> = Vec::new();
    for measure in 1..=cfg.measures {
        for step in 0..16u64 {
            for voice in &voices {
                let mut hit = voice.pattern[step as usize];
                if rng.gen_bool(0.08) {
                    hit = !hit;
                }
                if !hit {
                    continue;
                }
                let sample = voice.samples[rng.gen_range(0..voice.samples.len())];
                let playable = if rng.gen::<f64>() < cfg.regularity {
                    voice.playable
                } else {
                    !voice.playable
                };
                let object = TimedObject::new(measure, Ratio::new(step, 16), sample, Lane::Background);
                objects.push((object, playable));
            }
        }
    }
    if let Some((k, n)) = cfg.playable_fraction {
        objects.truncate(objects.len() / n * n);
        let mut order: Vec<usize> = (0..objects.len()).collect();
        order.shuffle(rng);
        let chosen = objects.len() / n * k;
        for (rank, &i) in order.iter().enumerate() {
            objects[i].1 = rank < chosen;
        }
    }
    let lane_of: BTreeMap<SampleId, Control> = voices
        .iter()
        .flat_map(|v| v.samples.iter().map(move |&s| (s, v.lane)))
        .collect();
    for (mut object, playable) in objects {
        if playable {
            object.lane = Lane::Control(lane_of[&object.sample]);
        }
        chart.add_object(object).expect("one object per voice and step");
    }
    debug_assert!(voices.iter().all(|v| !v.label.name.is_empty()));
    SynthSong { name, chart, labels }
}

/// Writes `dir/<song>/<song>.bms` for every song plus a `dir/labels.tsv`
/// manifest mapping sample files to categories.
pub fn write_chart_corpus(dir: &Path, songs: &[SynthSong]) -> Result<(), BmsError> {
    let io = |path: &Path, source| BmsError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut manifest: BTreeMap<String, String> = BTreeMap::new();
    for song in songs {
        let song_dir = dir.join(&song.name);
        fs::create_dir_all(&song_dir).map_err(|e| io(&song_dir, e))?;
        write_bms_file(&song.chart, &song_dir.join(format!("{}.bms", song.name)))?;
        for (id, label) in &song.labels {
            if let Some(file) = song.chart.sample_name(*id) {
                manifest.insert(file.to_string(), label.name.clone());
            }
        }
    }
    let path = dir.join("labels.tsv");
    let rows: Vec<(String, String)> = manifest.into_iter().collect();
    let mut buf = Vec::new();
    write_label_manifest(&mut buf, &rows).expect("writing to a vector cannot fail");
    fs::write(&path, buf).map_err(|e| io(&path, e))
}

/// Tone families of the tone corpus and the category each stands for.
pub const TONE_CLASSES: [(&str, &str); 3] = [("sine", "bell"), ("square", "lead"), ("noise", "noise")];

/// One synthetic recording of tone family `class` (an index into
/// [`TONE_CLASSES`]): 0.3 to 1.0 s long, 300 to 1200 Hz, with a short attack
/// and a random exponential decay.
pub fn tone(class: usize, rng: &mut impl Rng) -> Waveform {
    let len = rng.gen_range(0.3..1.0) * f64::from(SAMPLE_RATE);
    let freq = rng.gen_range(300.0..1200.0);
    let attack = rng.gen_range(0.005..0.03) * f64::from(SAMPLE_RATE);
    let decay = rng.gen_range(1.0..6.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let samples: Vec<f64> = (0..len as usize)
        .map(|i| {
            let t = i as f64 / f64::from(SAMPLE_RATE);
            let env = (i as f64 / attack).min(1.0) * (-decay * t).exp();
            let x = std::f64::consts::TAU * freq * t + phase;
            let v = match class {
                0 => x.sin(),
                1 => x.sin().signum(),
                _ => rng.gen_range(-1.0..1.0),
            };
            env * v
        })
        .collect();
    Waveform::from_samples(&samples, SAMPLE_RATE, "tone").expect("tones are never silent")
}

/// `per_class` recordings of each tone family, interleaved by class.
pub fn tone_corpus(per_class: usize, seed: u64) -> Vec<(Waveform, InstrumentLabel)> {
    let taxonomy = Taxonomy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * TONE_CLASSES.len());
    for _ in 0..per_class {
        for (class, (_, category)) in TONE_CLASSES.iter().enumerate() {
            let label = taxonomy
                .label_named(category)
                .expect("tone categories are in the taxonomy");
            out.push((tone(class, &mut rng), label));
        }
    }
    out
}

/// Writes the tone corpus as `dir/<family>_<n>.wav` plus `dir/labels.tsv`.
pub fn write_tone_corpus(dir: &Path, per_class: usize, seed: u64) -> Result<(), AudioError> {
    fs::create_dir_all(dir)?;
    let mut rows = Vec::new();
    let mut counters = [0usize; TONE_CLASSES.len()];
    for (wave, label) in tone_corpus(per_class, seed) {
        let class = TONE_CLASSES
            .iter()
            .position(|(_, c)| *c == label.name)
            .expect("known class");
        counters[class] += 1;
        let file = format!("{}_{:03}.wav", TONE_CLASSES[class].0, counters[class]);
        crate::audio::write_wave(&dir.join(&file), &wave)?;
        rows.push((file, label.name));
    }
    write_label_manifest(fs::File::create(dir.join("labels.tsv"))?, &rows)
}

const TICK_DENOMINATORS: [u64; 13] = [1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64, 192];
const MEASURE_LENGTHS: [(u64, u64); 5] = [(3, 4), (1, 2), (5, 4), (7, 8), (1, 3)];

/// An unstructured random chart exercising tempo changes, irregular measure
/// lengths, fine positions, stacked background objects and every control.
/// Playable objects never collide.
pub fn random_chart(seed: u64, max_objects: usize) -> Chart {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chart = Chart::new(f64::from(rng.gen_range(120u32..=600)) / 2.0).expect("tempo in range");
    let measures = rng.gen_range(1u32..=12);
    for m in 0..measures {
        if rng.gen_bool(0.15) {
            let (n, d) = MEASURE_LENGTHS[rng.gen_range(0..MEASURE_LENGTHS.len())];
            chart.set_measure_length(m, Ratio::new(n, d)).expect("positive length");
        }
        if rng.gen_bool(0.2) {
            let d = TICK_DENOMINATORS[rng.gen_range(0..6)];
            let bpm = if rng.gen_bool(0.5) {
                f64::from(rng.gen_range(1u32..=255))
            } else {
                f64::from(rng.gen_range(100u32..=2000)) / 4.0
            };
            chart
                .set_bpm(m, Ratio::new(rng.gen_range(0..d), d), bpm)
                .expect("valid tempo");
        }
    }
    let sample_count = rng.gen_range(1u16..=60);
    for id in 1..=sample_count {
        let id = SampleId::new(id * 21 % 1295 + 1).expect("in range");
        chart.set_sample(id, format!("k{}.wav", id.token()));
    }
    let ids: Vec<SampleId> = chart.sample_table().keys().copied().collect();
    let target = rng.gen_range(0..=max_objects);
    for _ in 0..target {
        let d = TICK_DENOMINATORS[rng.gen_range(0..TICK_DENOMINATORS.len())];
        let measure = rng.gen_range(0..measures);
        let length = chart.measure_length(measure);
        // keep positions inside shortened measures
        let ticks = (length * d).to_integer().max(1);
        let position = Ratio::new(rng.gen_range(0..ticks), d);
        if position >= length {
            continue;
        }
        let lane = match rng.gen_range(0..3) {
            0 => Lane::Background,
            _ => Lane::Control(Control::new(rng.gen_range(0..8)).expect("eight controls")),
        };
        let sample = ids[rng.gen_range(0..ids.len())];
        let _ = chart.add_object(TimedObject::new(measure, position, sample, lane));
    }
    chart
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_collision_free() {
        let cfg = SynthConfig {
            songs: 4,
            ..SynthConfig::default()
        };
        let a = synth_corpus(&cfg);
        let b = synth_corpus(&cfg);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.chart, y.chart);
            assert!(x.chart.playable_count() > 0);
            assert!(x.chart.playable_count() < x.chart.objects().len());
            assert_eq!(x.labels.len(), x.chart.sample_table().len());
        }
    }

    #[test]
    fn exact_playable_fraction() {
        let cfg = SynthConfig {
            songs: 3,
            playable_fraction: Some((3, 10)),
            ..SynthConfig::default()
        };
        for song in synth_corpus(&cfg) {
            let n = song.chart.objects().len();
            assert_eq!(n % 10, 0);
            assert_eq!(song.chart.playable_count() * 10, n * 3);
        }
    }

    #[test]
    fn tones_are_normalized() {
        let corpus = tone_corpus(2, 1);
        assert_eq!(corpus.len(), 6);
        for (w, _) in &corpus {
            let peak = w.samples().iter().fold(0.0f64, |m, s| m.max(s.abs()));
            assert!((peak - 1.0).abs() < 1e-12);
        }
        assert_eq!(corpus[2].1.name, "noise");
    }

    #[test]
    fn random_charts_vary() {
        let charts: Vec<Chart> = (0..20).map(|s| random_chart(s, 100)).collect();
        assert!(charts.iter().any(|c| !c.measure_lengths().is_empty()));
        assert!(charts.iter().any(|c| c.bpm_events().len() > 1));
        assert!(charts.iter().map(|c| c.objects().len()).sum::<usize>() > 200);
    }
}
