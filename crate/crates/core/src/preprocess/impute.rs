//! Two-step imputation: cluster-mean fill at the same timestamp, then
//! per-turbine linear interpolation with nearest-valid boundary fill.
//!
//! The validity mask is deliberately left untouched: downstream training and
//! evaluation must still know which positions carried real measurements.

use crate::cluster::ClusterModel;
use crate::ingest::{Column, Dataset};
use crate::{Error, Result};

/// Impute every non-VALID value of the dataset. VALID values are never
/// modified. Fails when some (turbine, field) series has no valid value
/// anywhere and no cluster peer is ever valid at any of its slots.
pub fn impute(ds: &Dataset, clusters: &ClusterModel) -> Result<Dataset> {
    clusters.validate(ds.n_turbines())?;
    let n_steps = ds.n_steps();
    let mut out = ds.clone();

    // available[t][s]: the output value at (t, s) is usable as an
    // interpolation anchor (originally valid, or filled in step 1).
    let mut available: Vec<Vec<bool>> = (0..ds.n_turbines())
        .map(|t| ds.validity_series(t).iter().map(|v| v.is_valid()).collect())
        .collect();

    // Step 1: cluster mean of the same field at the same timestamp.
    for cluster in 0..clusters.k {
        let members = clusters.members(cluster);
        for col in Column::ALL {
            for s in 0..n_steps {
                let mut sum = 0.0;
                let mut count = 0usize;
                for &t in &members {
                    if ds.validity(t, s).is_valid() {
                        sum += ds.value(col, t, s);
                        count += 1;
                    }
                }
                if count == 0 {
                    continue;
                }
                let mean = sum / count as f64;
                for &t in &members {
                    if !ds.validity(t, s).is_valid() {
                        out.set_value(col, t, s, mean);
                        available[t][s] = true;
                    }
                }
            }
        }
    }

    // Step 1 fills whole rows, so availability is per (turbine, step) and
    // identical across fields; step 2 interpolates what remains.
    for t in 0..ds.n_turbines() {
        let anchors: Vec<usize> = (0..n_steps).filter(|&s| available[t][s]).collect();
        if anchors.is_empty() {
            return Err(Error::FullyInvalidSeries {
                turbine: t as u32 + 1,
                field: Column::Patv.name().to_string(),
            });
        }
        if anchors.len() == n_steps {
            continue;
        }
        for col in Column::ALL {
            let series: Vec<f64> = out.series(col, t).to_vec();
            for s in 0..n_steps {
                if available[t][s] {
                    continue;
                }
                let prev = anchors.partition_point(|&a| a < s).checked_sub(1).map(|i| anchors[i]);
                let next = anchors.get(anchors.partition_point(|&a| a < s)).copied();
                let v = match (prev, next) {
                    (Some(p), Some(n)) => {
                        let frac = (s - p) as f64 / (n - p) as f64;
                        series[p] + frac * (series[n] - series[p])
                    }
                    (Some(p), None) => series[p],
                    (None, Some(n)) => series[n],
                    (None, None) => unreachable!("anchors checked non-empty"),
                };
                out.set_value(col, t, s, v);
            }
        }
    }

    out.mark_imputed();
    Ok(out)
}
