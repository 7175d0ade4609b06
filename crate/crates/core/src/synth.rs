//! Synthetic wind farm generator: a shared diurnal wind field with
//! spatially-correlated, temporally-persistent noise, a cubic power curve,
//! and exact bookkeeping of injected missing/abnormal records.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{format_timestamp, Column, Dataset, TurbineLayout, Validity, STEPS_PER_DAY};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticFarmSpec {
    pub n_turbines: usize,
    pub n_days: usize,
    pub seed: u64,
    /// Per-slot probability of blanking a record entirely.
    pub missing_rate: f64,
    /// Per-slot probability of corrupting a record so an abnormal rule fires.
    pub abnormal_rate: f64,
    /// Grid spacing between adjacent turbines, meters.
    pub spacing_m: f64,
    pub mean_wspd: f64,
    pub diurnal_amplitude: f64,
    /// Standard deviation of the stationary wind noise.
    pub noise_sigma: f64,
    /// AR(1) coefficient of the noise in time.
    pub noise_ar: f64,
    /// Length scale of spatial noise correlation, meters.
    pub corr_length_m: f64,
    pub cut_in_wspd: f64,
    pub rated_wspd: f64,
    pub capacity_kw: f64,
}

impl Default for SyntheticFarmSpec {
    fn default() -> Self {
        SyntheticFarmSpec {
            n_turbines: 10,
            n_days: 30,
            seed: 88,
            missing_rate: 0.02,
            abnormal_rate: 0.01,
            spacing_m: 250.0,
            mean_wspd: 6.5,
            diurnal_amplitude: 2.0,
            noise_sigma: 1.2,
            noise_ar: 0.9,
            corr_length_m: 400.0,
            cut_in_wspd: 2.5,
            rated_wspd: 11.0,
            capacity_kw: 1550.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionKind {
    Missing,
    NegativePower,
    ZeroPowerHighWind,
}

/// One corrupted grid cell, recorded so tests can reconcile ingest counts
/// against the ground truth exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub turbine_id: u32,
    pub day: u32,
    pub slot: u32,
    pub kind: InjectionKind,
}

#[derive(Debug, Clone)]
pub struct SyntheticFarm {
    /// Raw generated data: injected-missing rows are NaN with a Missing
    /// validity, everything else carries Valid (ingest re-flags abnormals).
    pub data: Dataset,
    pub layout: Vec<TurbineLayout>,
    pub injections: Vec<InjectionRecord>,
}

impl SyntheticFarm {
    pub fn injection_count(&self, kind: InjectionKind) -> usize {
        self.injections.iter().filter(|r| r.kind == kind).count()
    }
}

/// Cubic power curve: zero below cut-in, rises as the cube of the excess
/// speed, flat at capacity above rated speed.
pub fn power_curve(wspd: f64, cut_in: f64, rated: f64, capacity: f64) -> f64 {
    if wspd <= cut_in {
        0.0
    } else if wspd >= rated {
        capacity
    } else {
        let frac = (wspd - cut_in) / (rated - cut_in);
        capacity * frac * frac * frac
    }
}

/// Standard normal via Box-Muller on two uniform draws.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn validate_spec(spec: &SyntheticFarmSpec) -> Result<()> {
    if spec.n_turbines == 0 {
        return Err(Error::InvalidParam("synthetic farm needs at least one turbine".into()));
    }
    if spec.n_days < 5 {
        return Err(Error::InvalidParam(format!(
            "synthetic farm needs at least 5 days, got {}",
            spec.n_days
        )));
    }
    for (name, rate) in [("missing_rate", spec.missing_rate), ("abnormal_rate", spec.abnormal_rate)]
    {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidParam(format!("{name} must be in [0, 1), got {rate}")));
        }
    }
    if spec.missing_rate + spec.abnormal_rate >= 1.0 {
        return Err(Error::InvalidParam("injection rates must sum below 1".into()));
    }
    if !(spec.cut_in_wspd < spec.rated_wspd) || spec.capacity_kw <= 0.0 {
        return Err(Error::InvalidParam("power curve parameters inconsistent".into()));
    }
    if !(0.0..1.0).contains(&spec.noise_ar) {
        return Err(Error::InvalidParam("noise_ar must be in [0, 1)".into()));
    }
    Ok(())
}

/// Turbines on a near-square grid.
fn grid_layout(spec: &SyntheticFarmSpec) -> Vec<TurbineLayout> {
    let cols = (spec.n_turbines as f64).sqrt().ceil() as usize;
    (0..spec.n_turbines)
        .map(|i| TurbineLayout {
            turbine_id: i as u32 + 1,
            x: (i % cols) as f64 * spec.spacing_m,
            y: (i / cols) as f64 * spec.spacing_m,
        })
        .collect()
}

/// Row-normalized Gaussian kernel over turbine distances; mixing iid noise
/// through it makes nearby turbines move together.
fn spatial_mixing(layout: &[TurbineLayout], corr_length: f64) -> Vec<Vec<f64>> {
    let n = layout.len();
    let mut weights = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut total = 0.0;
        for j in 0..n {
            let dx = layout[i].x - layout[j].x;
            let dy = layout[i].y - layout[j].y;
            let d2 = dx * dx + dy * dy;
            let w = (-d2 / (corr_length * corr_length)).exp();
            weights[i][j] = w;
            total += w;
        }
        for w in weights[i].iter_mut() {
            *w /= total;
        }
    }
    weights
}

pub fn generate(spec: &SyntheticFarmSpec) -> Result<SyntheticFarm> {
    validate_spec(spec)?;
    let layout = grid_layout(spec);
    let mixing = spatial_mixing(&layout, spec.corr_length_m);
    let n = spec.n_turbines;
    let n_steps = spec.n_days * STEPS_PER_DAY as usize;
    let mut ds = Dataset::new(n, spec.n_days);

    // Wind field: one rng stream for the field, a separate one for
    // injection, so corruption rates never perturb the underlying weather.
    let mut field_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noise = vec![0.0; n];
    let mut iid = vec![0.0; n];
    let innovation_scale = (1.0 - spec.noise_ar * spec.noise_ar).sqrt();

    for s in 0..n_steps {
        let slot = (s % STEPS_PER_DAY as usize) as f64;
        let phase = slot / STEPS_PER_DAY as f64 * std::f64::consts::TAU;
        let diurnal = spec.diurnal_amplitude * phase.sin();
        let season = 0.8 * (s as f64 / (STEPS_PER_DAY as f64 * 7.0) * std::f64::consts::TAU).sin();
        for v in iid.iter_mut() {
            *v = gauss(&mut field_rng);
        }
        for (t, row) in mixing.iter().enumerate() {
            let mixed: f64 = row.iter().zip(&iid).map(|(w, e)| w * e).sum();
            noise[t] = spec.noise_ar * noise[t] + innovation_scale * mixed;
            let turbine_offset = 0.15 * (t % 4) as f64;
            let wspd =
                (spec.mean_wspd + diurnal + season + spec.noise_sigma * noise[t] + turbine_offset)
                    .max(0.0);
            let patv = power_curve(wspd, spec.cut_in_wspd, spec.rated_wspd, spec.capacity_kw);
            let etmp = 15.0 + 8.0 * (phase - 0.7).sin();
            let pab = ((wspd - spec.rated_wspd) * 8.0).clamp(0.0, 45.0);
            let mut values = [0.0; Column::COUNT];
            values[Column::Wspd.index()] = wspd;
            values[Column::Wdir.index()] = 12.0 * (phase + t as f64).sin();
            values[Column::Etmp.index()] = etmp;
            values[Column::Itmp.index()] = etmp + 6.0;
            values[Column::Ndir.index()] =
                55.0 * (s as f64 / (STEPS_PER_DAY as f64 * 3.0) * std::f64::consts::TAU).sin();
            values[Column::Pab1.index()] = pab;
            values[Column::Pab2.index()] = pab;
            values[Column::Pab3.index()] = pab;
            values[Column::Prtv.index()] = 0.05 * patv;
            values[Column::Patv.index()] = patv;
            ds.set_row(t, s, values, Validity::Valid);
        }
    }

    let mut inject_rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x5EED_1096));
    let mut injections = Vec::new();
    for t in 0..n {
        for s in 0..n_steps {
            let u: f64 = inject_rng.gen();
            let day = (s / STEPS_PER_DAY as usize) as u32 + 1;
            let slot = (s % STEPS_PER_DAY as usize) as u32;
            if u < spec.missing_rate {
                ds.set_row(t, s, [f64::NAN; Column::COUNT], Validity::Missing);
                injections.push(InjectionRecord {
                    turbine_id: t as u32 + 1,
                    day,
                    slot,
                    kind: InjectionKind::Missing,
                });
            } else if u < spec.missing_rate + spec.abnormal_rate {
                let kind = if inject_rng.gen::<bool>() {
                    let drop = inject_rng.gen_range(10.0..200.0);
                    ds.set_value(Column::Patv, t, s, -drop);
                    InjectionKind::NegativePower
                } else {
                    // Force wind clearly above the zero-power threshold so
                    // the rule is guaranteed to fire.
                    let wspd = 4.0 + inject_rng.gen_range(0.0..6.0);
                    ds.set_value(Column::Wspd, t, s, wspd);
                    ds.set_value(Column::Patv, t, s, 0.0);
                    InjectionKind::ZeroPowerHighWind
                };
                injections.push(InjectionRecord { turbine_id: t as u32 + 1, day, slot, kind });
            }
        }
    }
    Ok(SyntheticFarm { data: ds, layout, injections })
}

/// Raw farm CSV in the ingest schema (TurbID, Day, Tmstamp, ten sensor
/// columns); missing cells are written empty.
pub fn write_farm_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut header = vec!["TurbID".to_string(), "Day".to_string(), "Tmstamp".to_string()];
    header.extend(Column::ALL.iter().map(|c| c.name().to_string()));
    w.write_record(&header).map_err(|e| Error::Csv {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;
    for t in 0..ds.n_turbines() {
        for s in 0..ds.n_steps() {
            let day = s / STEPS_PER_DAY as usize + 1;
            let slot = (s % STEPS_PER_DAY as usize) as u32;
            let mut row = vec![
                (t + 1).to_string(),
                day.to_string(),
                format_timestamp(slot),
            ];
            for col in Column::ALL {
                let v = ds.value(col, t, s);
                row.push(if v.is_nan() { String::new() } else { v.to_string() });
            }
            w.write_record(&row).map_err(|e| Error::Csv {
                file: path.display().to_string(),
                message: e.to_string(),
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_layout_csv(layout: &[TurbineLayout], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;
    w.write_record(["TurbID", "x", "y"]).map_err(|e| Error::Csv {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;
    for l in layout {
        w.write_record([l.turbine_id.to_string(), l.x.to_string(), l.y.to_string()])
            .map_err(|e| Error::Csv {
                file: path.display().to_string(),
                message: e.to_string(),
            })?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}
