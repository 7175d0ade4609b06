//! Masked RMSE/MAE evaluation, the challenge score, horizon-bucketed scores,
//! and rolling-window test reconstruction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{Column, Dataset};
use crate::{Error, Result};

/// Challenge score: negative mean of RMSE and MAE, so larger (closer to
/// zero) is better.
pub fn score(rmse: f64, mae: f64) -> f64 {
    -(rmse + mae) / 2.0
}

/// Steps (1-based, inclusive) covered by the reporting buckets: first six
/// hours, first day, second day.
const BUCKET_6H: (usize, usize) = (1, 36);
const BUCKET_DAY1: (usize, usize) = (1, 144);
const BUCKET_DAY2: (usize, usize) = (145, 288);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    pub mae: f64,
    pub overall_score: f64,
    pub score_6h: f64,
    pub score_day1: f64,
    pub score_day2: f64,
    /// Evaluation windows contributing at least one unmasked pair.
    pub n_windows: usize,
    /// Target positions excluded by the validity mask.
    pub n_masked_targets: usize,
}

/// One (turbine, window) evaluation unit: prediction against truth with the
/// originally-VALID mask.
#[derive(Debug, Clone)]
pub struct EvalWindow {
    pub turbine: usize,
    /// Step index of the first predicted value.
    pub origin: usize,
    pub pred: Vec<f64>,
    pub truth: Vec<f64>,
    pub mask: Vec<bool>,
}

/// RMSE and MAE over the unmasked positions of `steps` (1-based inclusive
/// bounds into the horizon); `None` when every position is masked.
fn pair_errors(w: &EvalWindow, steps: (usize, usize)) -> Option<(f64, f64)> {
    let (lo, hi) = (steps.0 - 1, steps.1.min(w.pred.len()));
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut n = 0usize;
    for i in lo..hi {
        if w.mask[i] {
            let diff = w.pred[i] - w.truth[i];
            sq += diff * diff;
            abs += diff.abs();
            n += 1;
        }
    }
    if n == 0 {
        None
    } else {
        Some(((sq / n as f64).sqrt(), abs / n as f64))
    }
}

/// Full-horizon RMSE/MAE for one window; `None` when fully masked.
pub fn window_errors(w: &EvalWindow) -> Option<(f64, f64)> {
    pair_errors(w, (1, w.pred.len()))
}

/// Mean RMSE/MAE over the pairs that have unmasked data in the bucket.
fn bucket_score(windows: &[EvalWindow], steps: (usize, usize)) -> Option<f64> {
    let mut rmse_sum = 0.0;
    let mut mae_sum = 0.0;
    let mut n = 0usize;
    for w in windows {
        if let Some((rmse, mae)) = pair_errors(w, steps) {
            rmse_sum += rmse;
            mae_sum += mae;
            n += 1;
        }
    }
    if n == 0 {
        None
    } else {
        Some(score(rmse_sum / n as f64, mae_sum / n as f64))
    }
}

/// Pool errors per (turbine, window) pair, then average uniformly across
/// pairs. Pairs (or whole windows) without any unmasked target are excluded.
pub fn compute_metrics(windows: &[EvalWindow]) -> Result<EvalReport> {
    for w in windows {
        if w.pred.len() != w.truth.len() || w.truth.len() != w.mask.len() {
            return Err(Error::ShapeMismatch(format!(
                "evaluation window for turbine {} has inconsistent lengths",
                w.turbine
            )));
        }
    }
    let mut rmse_sum = 0.0;
    let mut mae_sum = 0.0;
    let mut n_pairs = 0usize;
    let mut n_masked = 0usize;
    let mut live_origins = std::collections::BTreeSet::new();
    for w in windows {
        n_masked += w.mask.iter().filter(|m| !**m).count();
        if let Some((rmse, mae)) = pair_errors(w, (1, w.pred.len())) {
            rmse_sum += rmse;
            mae_sum += mae;
            n_pairs += 1;
            live_origins.insert(w.origin);
        }
    }
    if n_pairs == 0 {
        return Err(Error::InvalidData(
            "no unmasked target positions to evaluate".into(),
        ));
    }
    let rmse = rmse_sum / n_pairs as f64;
    let mae = mae_sum / n_pairs as f64;
    Ok(EvalReport {
        rmse,
        mae,
        overall_score: score(rmse, mae),
        score_6h: bucket_score(windows, BUCKET_6H).unwrap_or(f64::NAN),
        score_day1: bucket_score(windows, BUCKET_DAY1).unwrap_or(f64::NAN),
        score_day2: bucket_score(windows, BUCKET_DAY2).unwrap_or(f64::NAN),
        n_windows: live_origins.len(),
        n_masked_targets: n_masked,
    })
}

/// Sample evaluation-window origins uniformly without replacement from the
/// valid range, ascending. An origin is the start of the input block; the
/// target block follows it.
pub fn reconstruct_test(
    n_steps: usize,
    n_windows: usize,
    input_len: usize,
    output_len: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if n_steps < input_len + output_len {
        return Err(Error::InvalidData(format!(
            "{n_steps} steps cannot fit input {input_len} + output {output_len}"
        )));
    }
    let n_valid = n_steps - input_len - output_len + 1;
    if n_windows > n_valid {
        return Err(Error::InvalidData(format!(
            "requested {n_windows} windows but only {n_valid} valid origins"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut origins: Vec<usize> = rand::seq::index::sample(&mut rng, n_valid, n_windows).into_vec();
    origins.sort_unstable();
    Ok(origins)
}

/// Persistence baseline: repeat the last originally-VALID power value before
/// the forecast origin across the whole horizon (zero when none exists).
pub fn persistence_forecast(ds: &Dataset, turbine: usize, origin: usize, horizon: usize) -> Vec<f64> {
    let patv = ds.series(Column::Patv, turbine);
    let validity = ds.validity_series(turbine);
    let last = (0..origin)
        .rev()
        .find(|&s| validity[s].is_valid())
        .map(|s| patv[s])
        .unwrap_or(0.0);
    vec![last; horizon]
}

/// Per-step aggregate curve over evaluation windows: for each horizon step,
/// the mean absolute error, mean prediction, and mean truth across unmasked
/// pairs. Rows with no unmasked pair at that step report NaN.
pub fn error_curve(windows: &[EvalWindow]) -> Vec<(f64, f64, f64)> {
    let horizon = windows.iter().map(|w| w.pred.len()).max().unwrap_or(0);
    let mut curve = Vec::with_capacity(horizon);
    for step in 0..horizon {
        let mut abs = 0.0;
        let mut pred = 0.0;
        let mut truth = 0.0;
        let mut n = 0usize;
        for w in windows {
            if step < w.pred.len() && w.mask[step] {
                abs += (w.pred[step] - w.truth[step]).abs();
                pred += w.pred[step];
                truth += w.truth[step];
                n += 1;
            }
        }
        if n == 0 {
            curve.push((f64::NAN, f64::NAN, f64::NAN));
        } else {
            let n = n as f64;
            curve.push((abs / n, pred / n, truth / n));
        }
    }
    curve
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(turbine: usize, origin: usize, pred: Vec<f64>, truth: Vec<f64>) -> EvalWindow {
        let mask = vec![true; pred.len()];
        EvalWindow { turbine, origin, pred, truth, mask }
    }

    #[test]
    fn score_matches_published_rows() {
        // Reference rows: (53.977, 45.600) -> -49.788 and (53.924, 45.670)
        // -> -49.797.
        let s1 = score(53.977, 45.600);
        assert!((s1 - (-49.7885)).abs() < 1e-12);
        assert!((s1 - (-49.788)).abs() < 1e-3);
        let s2 = score(53.924, 45.670);
        assert!((s2 - (-49.797)).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_scores_zero() {
        let w = window(0, 0, vec![5.0; 288], vec![5.0; 288]);
        let r = compute_metrics(&[w]).unwrap();
        assert_eq!(r.rmse, 0.0);
        assert_eq!(r.mae, 0.0);
        assert_eq!(r.overall_score, 0.0);
        assert_eq!(r.score_6h, 0.0);
        assert_eq!(r.n_windows, 1);
        assert_eq!(r.n_masked_targets, 0);
    }

    #[test]
    fn score_identity_holds_for_every_report() {
        let windows = vec![
            window(0, 0, vec![1.0, 2.0, 5.0], vec![0.0, 4.0, 5.0]),
            window(1, 0, vec![10.0, 0.0, 3.0], vec![2.0, 1.0, 3.0]),
            window(0, 7, vec![0.5, 0.5, 0.5], vec![1.0, 0.0, 2.0]),
        ];
        let r = compute_metrics(&windows).unwrap();
        assert!((r.overall_score + (r.rmse + r.mae) / 2.0).abs() < 1e-9);
        assert_eq!(r.n_windows, 2, "two distinct origins");
    }

    #[test]
    fn pairs_pool_before_uniform_averaging() {
        // Pair A: constant error 3 -> rmse = mae = 3. Pair B: constant error
        // 1 -> rmse = mae = 1. Uniform average: rmse = mae = 2.
        let a = window(0, 0, vec![3.0; 4], vec![0.0; 4]);
        let b = window(1, 0, vec![1.0; 4], vec![0.0; 4]);
        let r = compute_metrics(&[a, b]).unwrap();
        assert_eq!(r.rmse, 2.0);
        assert_eq!(r.mae, 2.0);
        assert_eq!(r.overall_score, -2.0);
    }

    #[test]
    fn masked_truth_values_never_influence_the_report() {
        let mut a = window(0, 0, vec![1.0; 6], vec![2.0; 6]);
        a.mask[2] = false;
        a.mask[5] = false;
        let mut b = a.clone();
        b.truth[2] = 9e9;
        b.truth[5] = f64::MAX;
        let ra = compute_metrics(&[a]).unwrap();
        let rb = compute_metrics(&[b]).unwrap();
        assert_eq!(ra.rmse, rb.rmse);
        assert_eq!(ra.mae, rb.mae);
        assert_eq!(ra.overall_score, rb.overall_score);
        assert_eq!(ra.n_masked_targets, 2);
    }

    #[test]
    fn fully_masked_window_is_excluded_and_counted_out() {
        let live = window(0, 0, vec![1.0; 3], vec![1.5; 3]);
        let mut dead = window(1, 9, vec![1.0; 3], vec![9.0; 3]);
        dead.mask = vec![false; 3];
        let r = compute_metrics(&[live.clone(), dead.clone()]).unwrap();
        assert_eq!(r.n_windows, 1);
        let solo = compute_metrics(&[live]).unwrap();
        assert_eq!(r.rmse, solo.rmse);
        assert!(compute_metrics(&[dead]).is_err());
    }

    #[test]
    fn bucket_scores_split_the_horizon() {
        // Error 2 in the first day, 6 in the second.
        let mut pred = vec![2.0; 288];
        for v in pred.iter_mut().skip(144) {
            *v = 6.0;
        }
        let w = window(0, 0, pred, vec![0.0; 288]);
        let r = compute_metrics(&[w]).unwrap();
        assert_eq!(r.score_6h, -2.0);
        assert_eq!(r.score_day1, -2.0);
        assert_eq!(r.score_day2, -6.0);
        assert!((r.overall_score - -4.0).abs() < 1e-9);
    }

    #[test]
    fn sixteen_day_reconstruction_yields_1729_origins() {
        let n_steps = 16 * 144;
        let origins = reconstruct_test(n_steps, 30, 288, 288, 88).unwrap();
        assert_eq!(origins.len(), 30);
        let max_origin = n_steps - 576;
        assert!(origins.iter().all(|&o| o <= max_origin));
        let mut unique = origins.clone();
        unique.dedup();
        assert_eq!(unique.len(), 30, "sampled without replacement");
        assert_eq!(origins, reconstruct_test(n_steps, 30, 288, 288, 88).unwrap());
        assert_ne!(origins, reconstruct_test(n_steps, 30, 288, 288, 89).unwrap());
        // 1729 valid origins exactly: requesting them all succeeds, one more
        // fails.
        assert_eq!(reconstruct_test(n_steps, 1729, 288, 288, 1).unwrap().len(), 1729);
        assert!(reconstruct_test(n_steps, 1730, 288, 288, 1).is_err());
    }

    #[test]
    fn degenerate_reconstruction_has_a_single_origin() {
        let origins = reconstruct_test(576, 1, 288, 288, 7).unwrap();
        assert_eq!(origins, vec![0]);
        assert!(reconstruct_test(576, 2, 288, 288, 7).is_err());
        assert!(reconstruct_test(575, 1, 288, 288, 7).is_err());
    }

    #[test]
    fn persistence_repeats_last_valid_value() {
        use crate::ingest::Validity;
        let mut ds = Dataset::new(1, 1);
        for s in 0..ds.n_steps() {
            ds.set_value(Column::Patv, 0, s, s as f64);
            ds.set_validity(0, s, Validity::Valid);
        }
        ds.set_validity(0, 99, Validity::Missing);
        let f = persistence_forecast(&ds, 0, 100, 5);
        assert_eq!(f, vec![98.0; 5], "skips the invalid step before the origin");
        assert_eq!(persistence_forecast(&ds, 0, 0, 3), vec![0.0; 3]);
    }

    #[test]
    fn error_curve_averages_per_step() {
        let a = window(0, 0, vec![1.0, 5.0], vec![0.0, 1.0]);
        let mut b = window(1, 0, vec![3.0, 2.0], vec![0.0, 0.0]);
        b.mask[1] = false;
        let curve = error_curve(&[a, b]);
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[0], (2.0, 2.0, 0.0));
        assert_eq!(curve[1], (4.0, 5.0, 1.0));
    }
}
