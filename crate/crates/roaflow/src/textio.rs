//! Small helpers for deterministic text output and CSV parsing.

use crate::{Error, Result};

/// Formats a float with 17 significant digits, enough for a bit-exact
/// round trip through decimal text.
pub(crate) fn fmt_g17(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn parse_f64(token: &str, line: usize) -> Result<f64> {
    token.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        msg: format!("expected a number, got `{}`", token.trim()),
    })
}
