//! JSON output with fixed 17-significant-digit floats.
//!
//! Every file this crate writes (bags, weights, strategies, scenarios) goes
//! through [`to_string`] / [`to_writer`] so that floats survive a text round
//! trip bit-for-bit and identical values always print identically.

use std::io;

use serde::Serialize;
use serde_json::ser::Formatter;

/// Formats a finite `f64` like C's `%.17g`, keeping a trailing `.0` on
/// integral values so they stay visibly floating-point.
pub fn format_f64(x: f64) -> String {
    if !x.is_finite() {
        return "null".to_string();
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0.0" } else { "0.0" }.to_string();
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let all_digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let digits = all_digits.trim_end_matches('0');
    let digits = if digits.is_empty() { "0" } else { digits };

    let mut out = String::with_capacity(24);
    if negative {
        out.push('-');
    }
    if !(-5..17).contains(&exp) {
        out.push_str(&digits[..1]);
        if digits.len() > 1 {
            out.push('.');
            out.push_str(&digits[1..]);
        }
        out.push('e');
        out.push_str(&exp.to_string());
    } else if exp >= 0 {
        let int_len = exp as usize + 1;
        if digits.len() <= int_len {
            out.push_str(digits);
            out.extend(std::iter::repeat_n('0', int_len - digits.len()));
            out.push_str(".0");
        } else {
            out.push_str(&digits[..int_len]);
            out.push('.');
            out.push_str(&digits[int_len..]);
        }
    } else {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
        out.push_str(digits);
    }
    out
}

/// `serde_json` formatter that routes floats through [`format_f64`].
#[derive(Debug, Default, Clone, Copy)]
pub struct G17Formatter;

impl Formatter for G17Formatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

pub fn to_writer<W: io::Write, T: ?Sized + Serialize>(writer: W, value: &T) -> serde_json::Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(writer, G17Formatter);
    value.serialize(&mut ser)
}

pub fn to_string<T: ?Sized + Serialize>(value: &T) -> serde_json::Result<String> {
    let mut buf = Vec::with_capacity(128);
    to_writer(&mut buf, value)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// Pretty-printed variant for human-facing files (weights, strategies).
pub fn to_string_pretty<T: ?Sized + Serialize>(value: &T) -> serde_json::Result<String> {
    // serde_json's pretty printer is a Formatter too; re-emit through a Value
    // so floats still use the fixed-width form.
    let value = serde_json::to_value(value)?;
    let mut buf = Vec::with_capacity(1024);
    write_pretty(&mut buf, &value, 0).map_err(serde_json::Error::io)?;
    Ok(String::from_utf8(buf).expect("UTF-8"))
}

fn write_pretty(out: &mut Vec<u8>, value: &serde_json::Value, indent: usize) -> io::Result<()> {
    use serde_json::Value;
    use std::io::Write;
    match value {
        Value::Array(items) if items.iter().all(|v| !v.is_array() && !v.is_object()) => {
            // leaf arrays stay on one line
            to_writer(&mut *out, value).map_err(io::Error::other)
        }
        Value::Array(items) => {
            out.write_all(b"[\n")?;
            for (i, item) in items.iter().enumerate() {
                out.write_all(" ".repeat(indent + 2).as_bytes())?;
                write_pretty(out, item, indent + 2)?;
                out.write_all(if i + 1 < items.len() { b",\n" } else { b"\n" })?;
            }
            out.write_all(" ".repeat(indent).as_bytes())?;
            out.write_all(b"]")
        }
        Value::Object(map) if !map.is_empty() => {
            out.write_all(b"{\n")?;
            let n = map.len();
            for (i, (k, v)) in map.iter().enumerate() {
                out.write_all(" ".repeat(indent + 2).as_bytes())?;
                to_writer(&mut *out, k).map_err(io::Error::other)?;
                out.write_all(b": ")?;
                write_pretty(out, v, indent + 2)?;
                out.write_all(if i + 1 < n { b",\n" } else { b"\n" })?;
            }
            out.write_all(" ".repeat(indent).as_bytes())?;
            out.write_all(b"}")
        }
        _ => to_writer(&mut *out, value).map_err(io::Error::other),
    }
}
