use serde::{Deserialize, Serialize};

use super::ViewError;

/// Nanoseconds per minute; casting speed is given in m/min.
const NS_PER_MIN: f64 = 60.0e9;

/// Cumulative cast length at a timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthPoint {
    pub t: i64,
    /// Millimetres cast since strand start.
    pub length: i64,
}

/// Trapezoidal integration of casting speed (m/min) over time (ns).
///
/// The running total is kept unrounded; each output is rounded to whole millimetres.
pub fn cumulative_length(speed: &[(i64, f64)], l0: i64) -> Result<Vec<LengthPoint>, ViewError> {
    let mut out = Vec::with_capacity(speed.len());
    let mut acc = 0.0f64;
    for (i, &(t, v)) in speed.iter().enumerate() {
        if !(v >= 0.0) {
            return Err(ViewError::NegativeSpeed { t });
        }
        if i > 0 {
            let (tp, vp) = speed[i - 1];
            if t <= tp {
                return Err(ViewError::UnsortedInput { position: i });
            }
            acc += (v + vp) / 2.0 * ((t - tp) as f64 / NS_PER_MIN) * 1000.0;
        }
        out.push(LengthPoint { t, length: l0 + acc.round() as i64 });
    }
    Ok(out)
}

/// Timestamp at which the cast length reached `target`; the earliest one on plateaus.
pub fn invert_length(points: &[LengthPoint], target: i64) -> Result<i64, ViewError> {
    let (Some(first), Some(last)) = (points.first(), points.last()) else {
        return Err(ViewError::OutOfCoverage);
    };
    if target < first.length || target > last.length {
        return Err(ViewError::OutOfCoverage);
    }
    let i = points.partition_point(|p| p.length < target);
    let b = points[i];
    if b.length == target {
        return Ok(b.t);
    }
    let a = points[i - 1];
    let num = (target - a.length) as i128 * (b.t - a.t) as i128;
    let den = (b.length - a.length) as i128;
    Ok(a.t + div_round(num, den) as i64)
}

/// Length at time `t`, linearly interpolated; `None` outside the covered time span.
pub fn length_at(points: &[LengthPoint], t: i64) -> Option<f64> {
    let first = points.first()?;
    let last = points.last()?;
    if t < first.t || t > last.t {
        return None;
    }
    let i = points.partition_point(|p| p.t < t);
    let b = points[i];
    if b.t == t {
        return Some(b.length as f64);
    }
    let a = points[i - 1];
    let frac = (t - a.t) as f64 / (b.t - a.t) as f64;
    Some(a.length as f64 + frac * (b.length - a.length) as f64)
}

/// Round-half-away-from-zero integer division.
pub(crate) fn div_round(num: i128, den: i128) -> i128 {
    let q = num / den;
    let r = num % den;
    if 2 * r.abs() >= den.abs() {
        q + if (num < 0) != (den < 0) { -1 } else { 1 }
    } else {
        q
    }
}
