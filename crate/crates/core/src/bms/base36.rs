//! Two-character base-36 object tokens.

use super::BmsError;

fn digit_value(c: char) -> Option<u16> {
    match c {
        '0'..='9' => Some(c as u16 - '0' as u16),
        'A'..='Z' => Some(c as u16 - 'A' as u16 + 10),
        // lowercase tokens show up in hand-edited files
        'a'..='z' => Some(c as u16 - 'a' as u16 + 10),
        _ => None,
    }
}

/// Decodes a two-character base-36 token (`"00"` ..= `"ZZ"`).
///
/// `line` is only used for the error report.
pub fn base36_decode(token: &str, line: usize) -> Result<u16, BmsError> {
    let invalid = || BmsError::InvalidToken {
        token: token.to_string(),
        line,
    };
    let mut chars = token.chars();
    let (Some(hi), Some(lo), None) = (chars.next(), chars.next(), chars.next()) else {
        return Err(invalid());
    };
    let hi = digit_value(hi).ok_or_else(invalid)?;
    let lo = digit_value(lo).ok_or_else(invalid)?;
    Ok(hi * 36 + lo)
}

/// Encodes `value` (0..=1295) as an uppercase two-character token.
pub fn base36_encode(value: u16) -> String {
    assert!(value < 36 * 36, "base-36 token out of range: {value}");
    const DIGITS: &[u8; 36] = b"0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ";
    let hi = DIGITS[(value / 36) as usize] as char;
    let lo = DIGITS[(value % 36) as usize] as char;
    [hi, lo].iter().collect()
}

pub(crate) fn hex_decode(token: &str, line: usize) -> Result<u16, BmsError> {
    if token.len() != 2 {
        return Err(BmsError::InvalidToken {
            token: token.to_string(),
            line,
        });
    }
    u16::from_str_radix(token, 16).map_err(|_| BmsError::InvalidToken {
        token: token.to_string(),
        line,
    })
}

pub(crate) fn hex_encode(value: u16) -> String {
    format!("{value:02X}")
}
