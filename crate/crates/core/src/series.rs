//! Piecewise-linear time series (hydrographs, rainfall rates, wind records).

use serde::{Deserialize, Serialize};

use crate::error::{FloodError, Result};

/// Samples `(t, value)` with strictly increasing `t`. Values are linearly
/// interpolated between samples and held constant outside the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct Series {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl Series {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(FloodError::config("time series needs at least one sample"));
        }
        for (k, w) in points.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(FloodError::config(format!(
                    "time series not strictly increasing at sample {} (t={} after t={})",
                    k + 1,
                    w[1].0,
                    w[0].0
                )));
            }
        }
        if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(FloodError::config("time series contains non-finite samples"));
        }
        let (times, values) = points.into_iter().unzip();
        Ok(Series { times, values })
    }

    pub fn constant(value: f64) -> Self {
        Series {
            times: vec![0.0],
            values: vec![value],
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        interpolate(&self.times, &self.values, t)
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.values.iter().copied())
    }
}

impl TryFrom<Vec<(f64, f64)>> for Series {
    type Error = FloodError;

    fn try_from(points: Vec<(f64, f64)>) -> Result<Self> {
        Series::new(points)
    }
}

impl From<Series> for Vec<(f64, f64)> {
    fn from(s: Series) -> Self {
        s.points().collect()
    }
}

pub(crate) fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    debug_assert_eq!(times.len(), values.len());
    let n = times.len();
    if t <= times[0] {
        return values[0];
    }
    if t >= times[n - 1] {
        return values[n - 1];
    }
    // first sample strictly after t
    let k = times.partition_point(|&s| s <= t);
    let (t0, t1) = (times[k - 1], times[k]);
    let w = (t - t0) / (t1 - t0);
    values[k - 1] + w * (values[k] - values[k - 1])
}
