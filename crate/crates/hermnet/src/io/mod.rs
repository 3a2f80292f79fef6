//! Dataset file formats.
//!
//! Two text formats are supported: concatenated extended-XYZ frames and the
//! DeePMD raw directory layout. Floats are written with 17 significant
//! digits, so write -> parse round-trips reproduce every value bit-exactly.

mod deepmd;
mod extxyz;

pub use deepmd::{parse_deepmd_raw, write_deepmd_raw};
pub use extxyz::{parse_extxyz, write_extxyz};

use crate::error::Error;

/// Format a float with 17 significant digits (round-trip exact for f64).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn parse_err(file: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        msg: msg.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digit_floats_round_trip() {
        for &x in &[
            0.1,
            -31.0,
            1.0 / 3.0,
            std::f64::consts::PI,
            6.02214076e23,
            -2.2250738585072014e-308,
        ] {
            let t: f64 = fmt_f64(x).parse().unwrap();
            assert_eq!(t.to_bits(), x.to_bits());
        }
    }
}
