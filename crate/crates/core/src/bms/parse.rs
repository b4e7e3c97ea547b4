use std::collections::HashMap;
use std::path::Path;

use num_integer::Integer;
use num_traits::CheckedAdd;

use super::base36::{base36_decode, hex_decode};
use super::{BmsError, Chart, Control, Lane, Metadata, Position, SampleId, TimedObject};

/// Something the parser skipped instead of failing on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseWarning {
    pub line: usize,
    pub kind: WarningKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WarningKind {
    /// A channel with no meaning in this subset.
    UnknownChannel(String),
    /// A channel we know about but do not model (2P side, long notes, stops...).
    UnsupportedChannel {
        channel: String,
        reason: &'static str,
    },
    /// `#RANDOM` style control flow; the directive and any branch body are dropped.
    ControlFlow(String),
    UnknownDirective(String),
    /// A later message overwrote a playable object at the same time and control.
    ReplacedObject,
}

impl std::fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: ", self.line)?;
        match &self.kind {
            WarningKind::UnknownChannel(c) => write!(f, "unknown channel {c} skipped"),
            WarningKind::UnsupportedChannel { channel, reason } => write!(f, "channel {channel} skipped ({reason})"),
            WarningKind::ControlFlow(d) => write!(f, "control flow #{d} skipped with its body"),
            WarningKind::UnknownDirective(d) => write!(f, "unknown directive #{d} ignored"),
            WarningKind::ReplacedObject => f.write_str("object replaced an earlier one at the same time and control"),
        }
    }
}

// headers that carry nothing the pipeline uses
const IGNORED_HEADERS: &[&str] = &[
    "PLAYER",
    "GENRE",
    "SUBTITLE",
    "SUBARTIST",
    "RANK",
    "DEFEXRANK",
    "TOTAL",
    "VOLWAV",
    "STAGEFILE",
    "BANNER",
    "BACKBMP",
    "DIFFICULTY",
    "COMMENT",
    "LNTYPE",
    "LNOBJ",
    "PREVIEW",
    "MAKER",
    "EXTCHR",
    "BMP",
    "BGA",
    "STOP",
    "SCROLL",
    "SPEED",
    "EXBPM",
];

const CONTROL_FLOW: &[&str] = &[
    "RANDOM",
    "SETRANDOM",
    "ENDRANDOM",
    "IF",
    "ELSEIF",
    "ELSE",
    "ENDIF",
    "SWITCH",
    "SETSWITCH",
    "CASE",
    "SKIP",
    "DEF",
    "ENDSW",
];

/// Decodes raw file bytes: a UTF-8 byte-order mark selects UTF-8, anything
/// else is read as Shift-JIS.
pub fn decode_bms_bytes(bytes: &[u8]) -> String {
    if let Some(rest) = bytes.strip_prefix(&[0xEF, 0xBB, 0xBF]) {
        return String::from_utf8_lossy(rest).into_owned();
    }
    let (text, _, _) = encoding_rs::SHIFT_JIS.decode(bytes);
    text.into_owned()
}

/// Reads and parses a chart file, returning the chart and any warnings.
pub fn read_bms_file(path: &Path) -> Result<(Chart, Vec<ParseWarning>), BmsError> {
    let bytes = std::fs::read(path).map_err(|source| BmsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_bms_with_warnings(&decode_bms_bytes(&bytes))
}

/// Parses a chart, logging and discarding warnings.
pub fn parse_bms(text: &str) -> Result<Chart, BmsError> {
    let (chart, warnings) = parse_bms_with_warnings(text)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(chart)
}

struct Message<'a> {
    line: usize,
    measure: u32,
    channel: String,
    data: &'a str,
}

pub fn parse_bms_with_warnings(text: &str) -> Result<(Chart, Vec<ParseWarning>), BmsError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut warnings = Vec::new();
    let mut metadata = Metadata::default();
    let mut initial_bpm = None;
    let mut wav: HashMap<u16, String> = HashMap::new();
    let mut bpm_defs: HashMap<u16, f64> = HashMap::new();
    let mut messages = Vec::new();
    let mut branch_depth = 0usize;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        let Some(body) = trimmed.strip_prefix('#') else {
            continue;
        };
        let (key, value) = split_directive(body);
        let upper = key.to_ascii_uppercase();

        if CONTROL_FLOW.contains(&upper.as_str()) {
            match upper.as_str() {
                "IF" | "SWITCH" => branch_depth += 1,
                "ENDIF" | "ENDSW" => branch_depth = branch_depth.saturating_sub(1),
                _ => {}
            }
            warnings.push(ParseWarning {
                line,
                kind: WarningKind::ControlFlow(upper),
            });
            continue;
        }
        if branch_depth > 0 {
            warnings.push(ParseWarning {
                line,
                kind: WarningKind::ControlFlow(format!("branch body: {upper}")),
            });
            continue;
        }

        if let Some(msg) = parse_message_header(body, line)? {
            messages.push(msg);
            continue;
        }

        match upper.as_str() {
            "TITLE" => metadata.title = Some(value.to_string()),
            "ARTIST" => metadata.artist = Some(value.to_string()),
            "PLAYLEVEL" => metadata.play_level = Some(value.to_string()),
            "BPM" => initial_bpm = Some(parse_bpm(value, line)?),
            _ if upper.len() == 5 && upper.starts_with("WAV") => {
                let id = base36_decode(&upper[3..], line)?;
                if id == 0 {
                    return Err(malformed(line, "#WAV00 is reserved for rests"));
                }
                if value.is_empty() {
                    return Err(malformed(line, "#WAV definition without a file name"));
                }
                wav.insert(id, value.to_string());
            }
            _ if upper.len() == 5 && upper.starts_with("BPM") => {
                let id = base36_decode(&upper[3..], line)?;
                bpm_defs.insert(id, parse_bpm(value, line)?);
            }
            _ if IGNORED_HEADERS.iter().any(|h| upper.starts_with(h)) => {}
            _ => warnings.push(ParseWarning {
                line,
                kind: WarningKind::UnknownDirective(upper),
            }),
        }
    }

    let mut chart = Chart::new(initial_bpm.ok_or(BmsError::MissingBpm)?)?;
    chart.metadata = metadata;
    for (&id, name) in &wav {
        chart.set_sample(SampleId::new(id)?, name.clone());
    }

    for msg in &messages {
        apply_message(&mut chart, msg, &wav, &bpm_defs, &mut warnings)?;
    }
    warnings.sort_by_key(|w| w.line);
    Ok((chart, warnings))
}

fn split_directive(body: &str) -> (&str, &str) {
    match body.find(|c: char| c.is_whitespace()) {
        Some(i) => (&body[..i], body[i..].trim()),
        None => (body, ""),
    }
}

fn malformed(line: usize, message: impl Into<String>) -> BmsError {
    BmsError::Malformed {
        line,
        message: message.into(),
    }
}

fn parse_bpm(value: &str, line: usize) -> Result<f64, BmsError> {
    let bpm: f64 = value
        .parse()
        .map_err(|_| malformed(line, format!("invalid BPM `{value}`")))?;
    if !(bpm.is_finite() && bpm > 0.0) {
        return Err(malformed(line, format!("BPM must be positive, got `{value}`")));
    }
    Ok(bpm)
}

/// Recognises `mmmcc:data`. Returns `None` for ordinary headers.
fn parse_message_header(body: &str, line: usize) -> Result<Option<Message<'_>>, BmsError> {
    let bytes = body.as_bytes();
    if bytes.len() < 6 || !bytes[..3].iter().all(u8::is_ascii_digit) || bytes[5] != b':' {
        return Ok(None);
    }
    let channel = &body[3..5];
    if !channel.chars().all(|c| c.is_ascii_alphanumeric()) {
        return Err(malformed(line, format!("invalid channel `{channel}`")));
    }
    let measure = body[..3].parse().expect("three ascii digits");
    Ok(Some(Message {
        line,
        measure,
        channel: channel.to_ascii_uppercase(),
        data: body[6..].trim(),
    }))
}

fn split_tokens(msg: &Message<'_>) -> Result<Vec<String>, BmsError> {
    let compact: String = msg.data.chars().filter(|c| !c.is_whitespace()).collect();
    if compact.is_empty() || !compact.len().is_multiple_of(2) || !compact.is_ascii() {
        return Err(malformed(
            msg.line,
            format!("message data `{}` is not a sequence of two-character tokens", msg.data),
        ));
    }
    Ok(compact
        .as_bytes()
        .chunks(2)
        .map(|pair| String::from_utf8(pair.to_vec()).expect("ascii"))
        .collect())
}

fn unsupported(channel: &str) -> Option<&'static str> {
    let ch = channel.as_bytes();
    match (ch[0], ch[1]) {
        (b'0', b'4' | b'6' | b'7') => Some("BGA layer"),
        (b'0', b'9') => Some("stop sequence"),
        (b'1', b'7') => Some("free zone"),
        (b'2', _) => Some("player 2 side"),
        (b'3' | b'4', _) => Some("invisible object"),
        (b'5' | b'6', _) => Some("long note"),
        (b'D' | b'E', _) => Some("mine"),
        (b'S', b'C') | (b'S', b'P') => Some("scroll/speed"),
        _ => None,
    }
}

fn apply_message(
    chart: &mut Chart,
    msg: &Message<'_>,
    wav: &HashMap<u16, String>,
    bpm_defs: &HashMap<u16, f64>,
    warnings: &mut Vec<ParseWarning>,
) -> Result<(), BmsError> {
    let channel = msg.channel.as_str();
    if channel == "02" {
        let length = parse_decimal(msg.data)
            .filter(|l| *l > Position::from_integer(0))
            .ok_or_else(|| malformed(msg.line, format!("invalid measure length `{}`", msg.data)))?;
        return chart.set_measure_length(msg.measure, length);
    }

    let lane = match channel {
        "01" | "03" | "08" => None,
        _ => match channel.parse::<u8>().ok().and_then(Control::from_channel) {
            Some(control) => Some(Lane::Control(control)),
            None => {
                let kind = match unsupported(channel) {
                    Some(reason) => WarningKind::UnsupportedChannel {
                        channel: channel.to_string(),
                        reason,
                    },
                    None => WarningKind::UnknownChannel(channel.to_string()),
                };
                warnings.push(ParseWarning { line: msg.line, kind });
                return Ok(());
            }
        },
    };

    let tokens = split_tokens(msg)?;
    let count = tokens.len() as u64;
    for (i, token) in tokens.iter().enumerate() {
        let position = Position::new(i as u64, count);
        match channel {
            "03" => {
                let bpm = hex_decode(token, msg.line)?;
                if bpm != 0 {
                    chart.set_bpm(msg.measure, position, f64::from(bpm))?;
                }
            }
            "08" => {
                let id = base36_decode(token, msg.line)?;
                if id != 0 {
                    let bpm = bpm_defs.get(&id).copied().ok_or_else(|| {
                        malformed(msg.line, format!("BPM reference {token} has no #BPM{token} definition"))
                    })?;
                    chart.set_bpm(msg.measure, position, bpm)?;
                }
            }
            _ => {
                let id = base36_decode(token, msg.line)?;
                if id == 0 {
                    continue;
                }
                if !wav.contains_key(&id) {
                    return Err(BmsError::UnknownSample {
                        token: token.to_ascii_uppercase(),
                        line: msg.line,
                    });
                }
                let object = TimedObject::new(
                    msg.measure,
                    position,
                    SampleId::new(id)?,
                    lane.unwrap_or(Lane::Background),
                );
                if chart.put_object(object)?.is_some() {
                    warnings.push(ParseWarning {
                        line: msg.line,
                        kind: WarningKind::ReplacedObject,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Parses a plain decimal (`0.75`, `1`, `1.5e0` is rejected) into an exact
/// ratio. Non-terminating lengths written with many digits are snapped to the
/// nearest fraction with a small denominator.
pub(crate) fn parse_decimal(s: &str) -> Option<Position> {
    let s = s.trim();
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if (int.is_empty() && frac.is_empty())
        || !int.bytes().all(|b| b.is_ascii_digit())
        || !frac.bytes().all(|b| b.is_ascii_digit())
        || frac.len() > 18
    {
        return None;
    }
    let int: u64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let denom = 10u64.checked_pow(frac.len() as u32)?;
    let numer: u64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
    let value = Position::from_integer(int).checked_add(&Position::new(numer, denom))?;
    if *value.denom() > 10_000 {
        let snapped = nearest_simple_fraction(value, 1_000);
        let diff = (ratio_f64(snapped) - ratio_f64(value)).abs();
        if diff < 1e-9 {
            return Some(snapped);
        }
    }
    Some(value)
}

fn ratio_f64(r: Position) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

// best approximation with denominator <= max_denom
fn nearest_simple_fraction(value: Position, max_denom: u64) -> Position {
    let target = ratio_f64(value);
    let mut best = Position::from_integer(target.round() as u64);
    let mut best_err = (ratio_f64(best) - target).abs();
    for d in 1..=max_denom {
        let n = (target * d as f64).round() as u64;
        let err = (n as f64 / d as f64 - target).abs();
        if err < best_err {
            let g = n.gcd(&d).max(1);
            best = Position::new(n / g, d / g);
            best_err = err;
        }
    }
    best
}
