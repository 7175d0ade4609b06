//! Supervised window assembly for the recurrent model: fixed-length input
//! sequences with per-step decorations, and masked multi-step targets.

use serde::{Deserialize, Serialize};

use crate::ingest::{Column, Dataset, STEPS_PER_DAY};

/// One training/prediction window of one turbine.
///
/// `input` is row-major `[input_len x 10]` over the numeric columns in
/// [`Column::ALL`] order, unscaled. `target` holds the power at the
/// `output_len` steps after the input span; `target_mask` is true where the
/// target was an originally-VALID measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub turbine: usize,
    /// Step index of the first input element within the source series.
    pub origin: usize,
    pub input_len: usize,
    pub input: Vec<f64>,
    /// Slot-of-day index (0..144) per input step.
    pub time_of_day: Vec<u32>,
    pub target: Vec<f64>,
    pub target_mask: Vec<bool>,
}

impl WindowSample {
    pub fn output_len(&self) -> usize {
        self.target.len()
    }

    pub fn input_row(&self, step: usize) -> &[f64] {
        &self.input[step * Column::COUNT..(step + 1) * Column::COUNT]
    }
}

/// Origins o = 0, stride, 2*stride, ... with o + input_len + output_len <=
/// series_len. Empty when the series is too short.
pub fn window_origins(
    series_len: usize,
    input_len: usize,
    output_len: usize,
    stride: usize,
) -> Vec<usize> {
    assert!(stride >= 1, "stride must be >= 1");
    let need = input_len + output_len;
    if need > series_len {
        return Vec::new();
    }
    (0..=series_len - need).step_by(stride).collect()
}

/// Materialize the window starting at `origin`: inputs over
/// `[origin, origin + input_len)`, targets over the following `output_len`
/// steps. Caller must ensure the window fits the series.
pub fn extract_window(
    ds: &Dataset,
    turbine: usize,
    origin: usize,
    input_len: usize,
    output_len: usize,
) -> WindowSample {
    let n_steps = ds.n_steps();
    assert!(origin + input_len + output_len <= n_steps, "window exceeds series");
    let mut input = Vec::with_capacity(input_len * Column::COUNT);
    let mut time_of_day = Vec::with_capacity(input_len);
    for s in origin..origin + input_len {
        for col in Column::ALL {
            input.push(ds.value(col, turbine, s));
        }
        time_of_day.push((s % STEPS_PER_DAY) as u32);
    }
    let patv = ds.series(Column::Patv, turbine);
    let validity = ds.validity_series(turbine);
    let target_start = origin + input_len;
    let target = patv[target_start..target_start + output_len].to_vec();
    let target_mask = validity[target_start..target_start + output_len]
        .iter()
        .map(|v| v.is_valid())
        .collect();
    WindowSample {
        turbine,
        origin,
        input_len,
        input,
        time_of_day,
        target,
        target_mask,
    }
}

/// All windows of all turbines at the given stride, turbine-major then
/// origin-ascending. Materializes every window; intended for desk-scale
/// series (training iterates over [`window_origins`] lazily instead).
pub fn windowize(
    ds: &Dataset,
    input_len: usize,
    output_len: usize,
    stride: usize,
) -> Vec<WindowSample> {
    let origins = window_origins(ds.n_steps(), input_len, output_len, stride);
    let mut out = Vec::with_capacity(origins.len() * ds.n_turbines());
    for t in 0..ds.n_turbines() {
        for &o in &origins {
            out.push(extract_window(ds, t, o, input_len, output_len));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Validity;

    #[test]
    fn origin_counts_match_formula() {
        assert_eq!(window_origins(10, 3, 2, 1).len(), 6);
        assert_eq!(window_origins(4, 3, 2, 1).len(), 0);
        assert_eq!(window_origins(5, 3, 2, 1), vec![0]);
        // One turbine over 245 days: 35,280 steps, input 72, output 288.
        assert_eq!(window_origins(245 * STEPS_PER_DAY, 72, 288, 1).len(), 34_921);
    }

    #[test]
    fn stride_skips_origins() {
        assert_eq!(window_origins(10, 3, 2, 2), vec![0, 2, 4]);
        assert_eq!(window_origins(10, 3, 2, 5), vec![0, 5]);
    }

    fn toy_dataset() -> Dataset {
        let mut ds = Dataset::new(2, 1);
        for t in 0..2 {
            for s in 0..ds.n_steps() {
                let mut values = [0.0; Column::COUNT];
                values[Column::Wspd.index()] = s as f64;
                values[Column::Patv.index()] = (t * 1000 + s) as f64;
                let validity = if t == 0 && s == 100 {
                    Validity::Missing
                } else {
                    Validity::Valid
                };
                ds.set_row(t, s, values, validity);
            }
        }
        ds
    }

    #[test]
    fn windows_carry_inputs_targets_and_masks() {
        let ds = toy_dataset();
        let samples = windowize(&ds, 3, 2, 1);
        let per_turbine = STEPS_PER_DAY - 3 - 2 + 1;
        assert_eq!(samples.len(), 2 * per_turbine);

        let w = &samples[5];
        assert_eq!(w.turbine, 0);
        assert_eq!(w.origin, 5);
        assert_eq!(w.input_row(0)[Column::Wspd.index()], 5.0);
        assert_eq!(w.input_row(2)[Column::Wspd.index()], 7.0);
        assert_eq!(w.target, vec![8.0, 9.0]);
        assert_eq!(w.time_of_day, vec![5, 6, 7]);
        assert!(w.target_mask.iter().all(|&m| m));

        // The missing step 100 of turbine 0 shows up as a masked target.
        let masked = samples
            .iter()
            .find(|w| w.turbine == 0 && w.origin + 3 == 100)
            .unwrap();
        assert_eq!(masked.target_mask, vec![false, true]);
    }

    #[test]
    fn windows_touch_the_series_end() {
        let ds = toy_dataset();
        let samples = windowize(&ds, 3, 2, 1);
        let last_of_first = &samples[STEPS_PER_DAY - 3 - 2];
        assert_eq!(last_of_first.origin + 3 + 2, STEPS_PER_DAY);
        assert_eq!(
            last_of_first.target,
            vec![(STEPS_PER_DAY - 2) as f64, (STEPS_PER_DAY - 1) as f64]
        );
    }
}
