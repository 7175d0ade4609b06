//! Robust scaling: center on the median, scale by the interquartile range.

use serde::{Deserialize, Serialize};

use crate::ingest::{Column, Dataset};
use crate::{Error, Result};

/// Quantile by linear interpolation between order statistics: the value at
/// fractional position p * (n - 1) of the ascending sample.
pub(crate) fn quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty() && (0.0..=1.0).contains(&p));
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Per-column median/IQR scaler: `scaled = (x - median) / (q75 - q25)`.
///
/// Fitted on VALID values only. Columns with zero IQR fall back to scale 1 so
/// the transform stays invertible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustScaler {
    pub columns: Vec<String>,
    pub median: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
    pub scale: Vec<f64>,
}

impl RobustScaler {
    /// Fit from named value samples (one entry per column).
    pub fn fit_named(samples: &[(String, Vec<f64>)]) -> Result<RobustScaler> {
        let mut scaler = RobustScaler {
            columns: Vec::with_capacity(samples.len()),
            median: Vec::with_capacity(samples.len()),
            q25: Vec::with_capacity(samples.len()),
            q75: Vec::with_capacity(samples.len()),
            scale: Vec::with_capacity(samples.len()),
        };
        for (name, values) in samples {
            if values.is_empty() {
                return Err(Error::EmptyColumn(name.clone()));
            }
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let q25 = quantile(&sorted, 0.25);
            let median = quantile(&sorted, 0.5);
            let q75 = quantile(&sorted, 0.75);
            let iqr = q75 - q25;
            scaler.columns.push(name.clone());
            scaler.median.push(median);
            scaler.q25.push(q25);
            scaler.q75.push(q75);
            scaler.scale.push(if iqr > 0.0 { iqr } else { 1.0 });
        }
        Ok(scaler)
    }

    /// Fit on the VALID values of the given dataset columns, optionally
    /// restricted to a subset of turbines (for per-cluster scalers).
    pub fn fit_dataset(
        ds: &Dataset,
        columns: &[Column],
        turbines: Option<&[usize]>,
    ) -> Result<RobustScaler> {
        let all: Vec<usize> = (0..ds.n_turbines()).collect();
        let turbines = turbines.unwrap_or(&all);
        let mut samples = Vec::with_capacity(columns.len());
        for &col in columns {
            let mut values = Vec::new();
            for &t in turbines {
                let series = ds.series(col, t);
                let validity = ds.validity_series(t);
                for s in 0..series.len() {
                    if validity[s].is_valid() {
                        values.push(series[s]);
                    }
                }
            }
            samples.push((col.name().to_string(), values));
        }
        RobustScaler::fit_named(&samples)
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::ColumnMismatch(format!("scaler has no column '{name}'")))
    }

    pub fn transform(&self, col: usize, x: f64) -> f64 {
        (x - self.median[col]) / self.scale[col]
    }

    pub fn inverse(&self, col: usize, x: f64) -> f64 {
        x * self.scale[col] + self.median[col]
    }

    pub fn transform_slice(&self, col: usize, xs: &mut [f64]) {
        for x in xs {
            *x = self.transform(col, *x);
        }
    }

    pub fn inverse_slice(&self, col: usize, xs: &mut [f64]) {
        for x in xs {
            *x = self.inverse(col, *x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Validity;

    fn fit_one(values: &[f64]) -> RobustScaler {
        RobustScaler::fit_named(&[("x".to_string(), values.to_vec())]).unwrap()
    }

    #[test]
    fn quartiles_of_one_to_five() {
        let s = fit_one(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(s.median[0], 3.0);
        assert_eq!(s.q25[0], 2.0);
        assert_eq!(s.q75[0], 4.0);
        assert_eq!(s.scale[0], 2.0);
    }

    #[test]
    fn quartiles_interpolate_between_order_statistics() {
        let s = fit_one(&[-2.0, 0.0, 2.0]);
        assert_eq!(s.median[0], 0.0);
        assert_eq!(s.q25[0], -1.0);
        assert_eq!(s.q75[0], 1.0);
    }

    #[test]
    fn constant_column_falls_back_to_unit_scale() {
        let s = fit_one(&[5.0, 5.0, 5.0]);
        assert_eq!(s.median[0], 5.0);
        assert_eq!(s.scale[0], 1.0);
        assert_eq!(s.transform(0, 5.0), 0.0);
        assert_eq!(s.inverse(0, 0.0), 5.0);
    }

    #[test]
    fn transform_matches_hand_computation() {
        let s = fit_one(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let mut xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        s.transform_slice(0, &mut xs);
        assert_eq!(xs, [-1.0, -0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn roundtrip_is_identity() {
        let values: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin() * 113.0 + 7.0).collect();
        let s = fit_one(&values);
        for &x in &values {
            let back = s.inverse(0, s.transform(0, x));
            assert!(
                (back - x).abs() <= 1e-12 * x.abs().max(1.0),
                "{x} round-tripped to {back}"
            );
        }
    }

    #[test]
    fn fit_uses_valid_values_only() {
        let mut ds = Dataset::new(1, 1);
        for s in 0..ds.n_steps() {
            let mut values = [0.0; Column::COUNT];
            values[Column::Patv.index()] = s as f64;
            let validity = if s >= 5 { Validity::Missing } else { Validity::Valid };
            ds.set_row(0, s, values, validity);
        }
        // Only steps 0..5 are valid, so the sample is [0,1,2,3,4].
        let scaler = RobustScaler::fit_dataset(&ds, &[Column::Patv], None).unwrap();
        assert_eq!(scaler.median[0], 2.0);
        assert_eq!(scaler.q25[0], 1.0);
        assert_eq!(scaler.q75[0], 3.0);
    }

    #[test]
    fn empty_column_is_an_error() {
        let ds = Dataset::new(1, 1);
        match RobustScaler::fit_dataset(&ds, &[Column::Patv], None) {
            Err(Error::EmptyColumn(name)) => assert_eq!(name, "Patv"),
            other => panic!("expected empty column error, got {other:?}"),
        }
    }

    #[test]
    fn scaled_valid_values_have_zero_median_unit_iqr() {
        let values: Vec<f64> = (0..257).map(|i| ((i * 7919) % 1000) as f64 / 3.0).collect();
        let s = fit_one(&values);
        let mut scaled = values.clone();
        s.transform_slice(0, &mut scaled);
        scaled.sort_by(f64::total_cmp);
        assert!(quantile(&scaled, 0.5).abs() < 1e-9);
        assert!((quantile(&scaled, 0.75) - quantile(&scaled, 0.25) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_column_is_a_mismatch() {
        let s = fit_one(&[1.0, 2.0]);
        assert!(s.column_index("x").is_ok());
        assert!(matches!(s.column_index("y"), Err(Error::ColumnMismatch(_))));
    }
}
