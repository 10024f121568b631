//! Shared output helpers.

use std::io::{self, Write};

use serde::Serialize;

/// Formats a double with 17 significant digits, locale-free.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_json<W: Write, T: Serialize + ?Sized>(w: W, value: &T) -> io::Result<()> {
    serde_json::to_writer_pretty(w, value).map_err(io::Error::other)
}
