//! Forecast post-processing: ensemble averaging, curve smoothing, the convex
//! multiplicative drift adjustment, and range clipping. The pipeline applies
//! them in the fixed order ensemble -> smooth -> alpha -> clip, recorded in
//! the forecast provenance.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One 288-step power forecast for a turbine, with the processing history
/// that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    /// 1-based turbine id.
    pub turbine_id: u32,
    /// Step index of the first predicted value within the source series.
    pub origin: usize,
    /// Predicted power in kW.
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Model tags contributing to this forecast, in ensemble input order.
    pub models: Vec<String>,
    pub alpha: Option<f64>,
    pub smooth_window: Option<usize>,
    pub clip: Option<(f64, f64)>,
}

impl Forecast {
    pub fn new(turbine_id: u32, origin: usize, values: Vec<f64>, model: &str) -> Forecast {
        Forecast {
            turbine_id,
            origin,
            values,
            provenance: Provenance {
                models: vec![model.to_string()],
                ..Provenance::default()
            },
        }
    }

    pub fn horizon(&self) -> usize {
        self.values.len()
    }
}

/// Result of fitting the multiplicative adjustment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaAdjustment {
    pub alpha: f64,
    /// Loss at the optimum.
    pub loss: f64,
    /// Search interval the optimum was bracketed in.
    pub bracket: (f64, f64),
    /// Set when the loss is constant (all predictions zero); alpha
    /// defaults to 1.
    pub degenerate: bool,
}

/// Element-wise mean of forecasts for the same turbine and origin. Per-step
/// contributions are summed in sorted order, so the result is bit-identical
/// under permutation of the inputs.
pub fn ensemble_mean(forecasts: &[Forecast]) -> Result<Forecast> {
    let first = forecasts
        .first()
        .ok_or_else(|| Error::InvalidParam("ensemble of zero forecasts".into()))?;
    for f in forecasts {
        if f.turbine_id != first.turbine_id || f.origin != first.origin {
            return Err(Error::InvalidData(format!(
                "ensemble mixes turbine {} origin {} with turbine {} origin {}",
                first.turbine_id, first.origin, f.turbine_id, f.origin
            )));
        }
        if f.horizon() != first.horizon() {
            return Err(Error::ShapeMismatch(format!(
                "ensemble mixes horizons {} and {}",
                first.horizon(),
                f.horizon()
            )));
        }
    }
    let n = forecasts.len() as f64;
    let mut values = Vec::with_capacity(first.horizon());
    let mut contrib = Vec::with_capacity(forecasts.len());
    for i in 0..first.horizon() {
        contrib.clear();
        contrib.extend(forecasts.iter().map(|f| f.values[i]));
        contrib.sort_by(f64::total_cmp);
        values.push(contrib.iter().sum::<f64>() / n);
    }
    let mut models = Vec::new();
    for f in forecasts {
        models.extend(f.provenance.models.iter().cloned());
    }
    Ok(Forecast {
        turbine_id: first.turbine_id,
        origin: first.origin,
        values,
        provenance: Provenance {
            models,
            ..Provenance::default()
        },
    })
}

/// Limit forecast values to [lo, hi].
pub fn clip(f: &Forecast, lo: f64, hi: f64) -> Result<Forecast> {
    if !(lo <= hi) {
        return Err(Error::InvalidParam(format!("clip bounds inverted: [{lo}, {hi}]")));
    }
    let mut out = f.clone();
    for v in out.values.iter_mut() {
        *v = v.clamp(lo, hi);
    }
    out.provenance.clip = Some((lo, hi));
    Ok(out)
}

/// Centered moving average with edge windows truncated to available points.
/// Window width must be odd; width 1 is the identity.
pub fn smooth(f: &Forecast, window: usize) -> Result<Forecast> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::InvalidParam(format!(
            "smoothing window must be odd and positive, got {window}"
        )));
    }
    let mut out = f.clone();
    if window > 1 {
        let half = window / 2;
        let n = f.values.len();
        for i in 0..n {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let sum: f64 = f.values[lo..hi].iter().sum();
            out.values[i] = sum / (hi - lo) as f64;
        }
    }
    out.provenance.smooth_window = Some(window);
    Ok(out)
}

/// Adjustment loss: sum of squared plus absolute errors of alpha-scaled
/// predictions over unmasked pairs.
fn adjustment_loss(alpha: f64, pred: &[f64], truth: &[f64], mask: &[bool]) -> f64 {
    let mut loss = 0.0;
    for i in 0..pred.len() {
        if mask[i] {
            let diff = alpha * pred[i] - truth[i];
            loss += diff * diff + diff.abs();
        }
    }
    loss
}

/// Golden-section minimization of a convex function on [a, b]. The bracket
/// is contracted well below `tol` so the returned midpoint is accurate to
/// `tol` with margin.
fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let stop = (tol * 1e-3).max(f64::EPSILON * b.abs());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > stop {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Fit the multiplicative adjustment by golden-section search over
/// [alpha_min, alpha_max]. The loss is convex in alpha, so the search
/// converges to the global minimum.
pub fn fit_alpha(
    pred: &[f64],
    truth: &[f64],
    mask: &[bool],
    alpha_min: f64,
    alpha_max: f64,
    tol: f64,
) -> Result<AlphaAdjustment> {
    if pred.len() != truth.len() || truth.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "adjustment inputs disagree: {} predictions, {} truths, {} mask entries",
            pred.len(),
            truth.len(),
            mask.len()
        )));
    }
    if !(alpha_min > 0.0 && alpha_min < alpha_max) {
        return Err(Error::InvalidParam(format!(
            "alpha bounds inverted: [{alpha_min}, {alpha_max}]"
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::InvalidData("no unmasked pairs to fit alpha on".into()));
    }
    let all_zero = pred
        .iter()
        .zip(mask)
        .all(|(&p, &m)| !m || p == 0.0);
    if all_zero {
        return Ok(AlphaAdjustment {
            alpha: 1.0,
            loss: adjustment_loss(1.0, pred, truth, mask),
            bracket: (alpha_min, alpha_max),
            degenerate: true,
        });
    }
    let (alpha, loss) = golden_min(
        |a| adjustment_loss(a, pred, truth, mask),
        alpha_min,
        alpha_max,
        tol,
    );
    Ok(AlphaAdjustment {
        alpha,
        loss,
        bracket: (alpha_min, alpha_max),
        degenerate: false,
    })
}

/// Multiply forecast values by alpha; when the forecast already carries clip
/// bounds they are re-applied so the invariant holds.
pub fn apply_alpha(f: &Forecast, alpha: f64) -> Result<Forecast> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParam(format!("alpha must be positive, got {alpha}")));
    }
    let mut out = f.clone();
    for v in out.values.iter_mut() {
        *v *= alpha;
    }
    if let Some((lo, hi)) = out.provenance.clip {
        for v in out.values.iter_mut() {
            *v = v.clamp(lo, hi);
        }
    }
    out.provenance.alpha = Some(alpha);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fc(values: &[f64]) -> Forecast {
        Forecast::new(1, 0, values.to_vec(), "test")
    }

    #[test]
    fn mean_of_identical_forecasts_is_identity() {
        let f = fc(&[1.0, 2.5, -0.5]);
        let m = ensemble_mean(&[f.clone(), f.clone(), f.clone()]).unwrap();
        assert_eq!(m.values, f.values);
        assert_eq!(m.provenance.models.len(), 3);
    }

    #[test]
    fn mean_of_zero_and_two_is_one() {
        let a = fc(&[0.0; 4]);
        let b = fc(&[2.0; 4]);
        let m = ensemble_mean(&[a, b]).unwrap();
        assert_eq!(m.values, vec![1.0; 4]);
    }

    #[test]
    fn mean_is_bit_identical_under_permutation() {
        let a = fc(&[0.1, 1e16, -3.7]);
        let b = fc(&[0.2, 1.0, 2.2]);
        let c = fc(&[-0.3, -1e16, 0.9]);
        let abc = ensemble_mean(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let cba = ensemble_mean(&[c, b, a]).unwrap();
        assert_eq!(abc.values, cba.values);
    }

    #[test]
    fn mean_rejects_mismatched_origins_and_empty_input() {
        let a = fc(&[1.0]);
        let mut b = fc(&[1.0]);
        b.origin = 5;
        assert!(ensemble_mean(&[a.clone(), b]).is_err());
        let mut c = fc(&[1.0]);
        c.turbine_id = 2;
        assert!(ensemble_mean(&[a, c]).is_err());
        assert!(ensemble_mean(&[]).is_err());
    }

    #[test]
    fn clip_limits_and_is_idempotent() {
        let f = fc(&[-5.0, 2000.0, 700.0]);
        let c = clip(&f, 0.0, 1550.0).unwrap();
        assert_eq!(c.values, vec![0.0, 1550.0, 700.0]);
        let cc = clip(&c, 0.0, 1550.0).unwrap();
        assert_eq!(cc.values, c.values);
        assert_eq!(c.provenance.clip, Some((0.0, 1550.0)));
        assert!(clip(&f, 2.0, 1.0).is_err());
    }

    #[test]
    fn smooth_impulse_and_identity_cases() {
        let f = fc(&[0.0, 0.0, 1.0, 0.0, 0.0]);
        let s = smooth(&f, 3).unwrap();
        assert_eq!(s.values, vec![0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]);

        let c = fc(&[4.0; 7]);
        assert_eq!(smooth(&c, 5).unwrap().values, c.values);
        assert_eq!(smooth(&f, 1).unwrap().values, f.values);
        assert!(smooth(&f, 4).is_err());
    }

    #[test]
    fn smooth_truncates_edge_windows() {
        let f = fc(&[1.0, 2.0, 3.0, 4.0]);
        let s = smooth(&f, 3).unwrap();
        assert_eq!(s.values, vec![1.5, 2.0, 3.0, 3.5]);
    }

    #[test]
    fn alpha_recovers_exact_rescales() {
        let truth = [3.0, 1.0, 4.0, 1.5];
        let mask = [true; 4];
        let same = fit_alpha(&truth, &truth, &mask, 0.25, 4.0, 1e-6).unwrap();
        assert!((same.alpha - 1.0).abs() < 1e-6, "{}", same.alpha);
        assert!(same.loss < 1e-9);
        assert!(same.loss <= adjustment_loss(1.0, &truth, &truth, &mask) + 1e-12);

        let doubled: Vec<f64> = truth.iter().map(|v| v * 2.0).collect();
        let half = fit_alpha(&doubled, &truth, &mask, 0.25, 4.0, 1e-6).unwrap();
        assert!((half.alpha - 0.5).abs() < 1e-6, "{}", half.alpha);
    }

    #[test]
    fn alpha_balances_square_and_absolute_terms() {
        // pred [1, 1], truth [2, 0]: loss(a) = 2a^2 - 4a + 6, minimum at 1.
        let adj = fit_alpha(&[1.0, 1.0], &[2.0, 0.0], &[true, true], 0.25, 4.0, 1e-6).unwrap();
        assert!((adj.alpha - 1.0).abs() < 1e-6, "{}", adj.alpha);
        assert!((adj.loss - 4.0).abs() < 1e-9, "{}", adj.loss);
    }

    #[test]
    fn alpha_degenerate_and_error_cases() {
        let adj = fit_alpha(&[0.0, 0.0], &[1.0, 2.0], &[true, true], 0.25, 4.0, 1e-6).unwrap();
        assert!(adj.degenerate);
        assert_eq!(adj.alpha, 1.0);
        // loss at alpha=1: 1 + 4 + 1 + 2 = 8.
        assert_eq!(adj.loss, 8.0);

        assert!(fit_alpha(&[1.0], &[1.0], &[false], 0.25, 4.0, 1e-6).is_err());
        assert!(fit_alpha(&[1.0], &[1.0, 2.0], &[true, true], 0.25, 4.0, 1e-6).is_err());
        assert!(fit_alpha(&[1.0], &[1.0], &[true], 4.0, 0.25, 1e-6).is_err());
    }

    #[test]
    fn alpha_ignores_masked_positions() {
        let truth = [3.0, 100.0, 4.0];
        let mask = [true, false, true];
        let a = fit_alpha(&[6.0, 1.0, 8.0], &truth, &mask, 0.25, 4.0, 1e-6).unwrap();
        let b = fit_alpha(&[6.0, -55.0, 8.0], &truth, &mask, 0.25, 4.0, 1e-6).unwrap();
        assert_eq!(a.alpha, b.alpha);
        assert!((a.alpha - 0.5).abs() < 1e-6);
    }

    #[test]
    fn apply_alpha_scales_then_reclips() {
        let f = fc(&[100.0, 700.0]);
        let doubled = apply_alpha(&f, 2.0).unwrap();
        assert_eq!(doubled.values, vec![200.0, 1400.0]);
        assert_eq!(doubled.provenance.alpha, Some(2.0));
        assert_eq!(apply_alpha(&f, 1.0).unwrap().values, f.values);

        let clipped = clip(&f, 0.0, 1000.0).unwrap();
        let scaled = apply_alpha(&clipped, 2.0).unwrap();
        assert_eq!(scaled.values, vec![200.0, 1000.0]);
        assert!(apply_alpha(&f, 0.0).is_err());
        assert!(apply_alpha(&f, -1.0).is_err());
    }
}
