use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Decade bucket for the absolute deviation between an output and its target.
///
/// Interior bins are half-open `[lo, hi)`; the `[1e0, 1e1]` bin is closed on
/// both ends so that only values strictly above ten land in `GreaterThan10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PrecisionBin {
    #[serde(rename = "<1e-10")]
    LessThan1e10,
    #[serde(rename = "[1e-10,1e-8)")]
    From1e10To1e8,
    #[serde(rename = "[1e-8,1e-6)")]
    From1e8To1e6,
    #[serde(rename = "[1e-6,1e-4)")]
    From1e6To1e4,
    #[serde(rename = "[1e-4,1e-2)")]
    From1e4To1e2,
    #[serde(rename = "[1e-2,1e0)")]
    From1e2To1,
    #[serde(rename = "[1e0,1e1]")]
    From1To10,
    #[serde(rename = ">1e1")]
    GreaterThan10,
}

/// Interior edges, ascending. Bin `i` (for `i >= 1`) starts at `EDGES[i - 1]`.
pub const EDGES: [f64; 7] = [1e-10, 1e-8, 1e-6, 1e-4, 1e-2, 1e0, 1e1];

#[derive(Debug, Error, PartialEq)]
#[error("deviation must be finite and nonnegative, got {0}")]
pub struct DomainError(pub f64);

impl PrecisionBin {
    pub const ALL: [PrecisionBin; 8] = [
        PrecisionBin::LessThan1e10,
        PrecisionBin::From1e10To1e8,
        PrecisionBin::From1e8To1e6,
        PrecisionBin::From1e6To1e4,
        PrecisionBin::From1e4To1e2,
        PrecisionBin::From1e2To1,
        PrecisionBin::From1To10,
        PrecisionBin::GreaterThan10,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PrecisionBin::LessThan1e10 => "<1e-10",
            PrecisionBin::From1e10To1e8 => "[1e-10,1e-8)",
            PrecisionBin::From1e8To1e6 => "[1e-8,1e-6)",
            PrecisionBin::From1e6To1e4 => "[1e-6,1e-4)",
            PrecisionBin::From1e4To1e2 => "[1e-4,1e-2)",
            PrecisionBin::From1e2To1 => "[1e-2,1e0)",
            PrecisionBin::From1To10 => "[1e0,1e1]",
            PrecisionBin::GreaterThan10 => ">1e1",
        }
    }
}

impl fmt::Display for PrecisionBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub fn bin_deviation(d: f64) -> Result<PrecisionBin, DomainError> {
    if !d.is_finite() || d < 0.0 {
        return Err(DomainError(d));
    }
    if d > EDGES[6] {
        return Ok(PrecisionBin::GreaterThan10);
    }
    if d >= EDGES[5] {
        return Ok(PrecisionBin::From1To10);
    }
    // number of interior edges at or below d selects the bin
    let idx = EDGES[..5].iter().take_while(|&&edge| d >= edge).count();
    Ok(PrecisionBin::ALL[idx])
}
