//! Fixed-format numeric output shared by the CSV writers.

use std::io::Write;

/// 17 significant digits in scientific notation, so that every `f64`
/// survives a text round trip bit for bit.
pub fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes one CSV row of preformatted fields.
pub fn row<W: Write>(out: &mut W, fields: &[String]) -> std::io::Result<()> {
    writeln!(out, "{}", fields.join(","))
}
