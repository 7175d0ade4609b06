//! Raw data ingestion: turbine time-series CSV parsing, layout parsing,
//! abnormality flagging and gap materialization.
//!
//! The canonical on-disk layout is one row per (turbine, timestamp) at
//! 10-minute resolution, 144 slots per day. Rows absent from the source file
//! are materialized as `MISSING` so every dataset is gap-free on the
//! (turbine, day, slot) grid.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of 10-minute slots per day.
pub const STEPS_PER_DAY: usize = 144;

/// Numeric columns of a turbine record, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Column {
    Wspd,
    Wdir,
    Etmp,
    Itmp,
    Ndir,
    Pab1,
    Pab2,
    Pab3,
    Prtv,
    Patv,
}

impl Column {
    pub const ALL: [Column; 10] = [
        Column::Wspd,
        Column::Wdir,
        Column::Etmp,
        Column::Itmp,
        Column::Ndir,
        Column::Pab1,
        Column::Pab2,
        Column::Pab3,
        Column::Prtv,
        Column::Patv,
    ];

    pub const COUNT: usize = 10;

    pub fn name(self) -> &'static str {
        match self {
            Column::Wspd => "Wspd",
            Column::Wdir => "Wdir",
            Column::Etmp => "Etmp",
            Column::Itmp => "Itmp",
            Column::Ndir => "Ndir",
            Column::Pab1 => "Pab1",
            Column::Pab2 => "Pab2",
            Column::Pab3 => "Pab3",
            Column::Prtv => "Prtv",
            Column::Patv => "Patv",
        }
    }

    pub fn from_name(name: &str) -> Option<Column> {
        Column::ALL.iter().copied().find(|c| c.name() == name)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Abnormality rules. Only the power/speed rules are on by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AbnormalRule {
    /// Active power is negative.
    NegativePower,
    /// Active power is zero while wind speed exceeds the configured threshold.
    ZeroPowerHighWind,
    /// Any pitch angle beyond 89 degrees.
    PitchOutOfRange,
    /// Wind or nacelle direction outside its physical range.
    DirectionOutOfRange,
}

impl AbnormalRule {
    pub fn name(self) -> &'static str {
        match self {
            AbnormalRule::NegativePower => "negative_power",
            AbnormalRule::ZeroPowerHighWind => "zero_power_high_wind",
            AbnormalRule::PitchOutOfRange => "pitch_out_of_range",
            AbnormalRule::DirectionOutOfRange => "direction_out_of_range",
        }
    }

    fn from_name(name: &str) -> Option<AbnormalRule> {
        [
            AbnormalRule::NegativePower,
            AbnormalRule::ZeroPowerHighWind,
            AbnormalRule::PitchOutOfRange,
            AbnormalRule::DirectionOutOfRange,
        ]
        .into_iter()
        .find(|r| r.name() == name)
    }
}

/// Validity of one record. `Abnormal` keeps the rule that fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Validity {
    Valid,
    Abnormal(AbnormalRule),
    Missing,
}

impl Validity {
    pub fn is_valid(self) -> bool {
        matches!(self, Validity::Valid)
    }

    pub fn is_missing(self) -> bool {
        matches!(self, Validity::Missing)
    }

    /// Stable text label used in the canonical CSV `validity` column.
    pub fn label(self) -> String {
        match self {
            Validity::Valid => "VALID".to_string(),
            Validity::Abnormal(rule) => format!("ABNORMAL:{}", rule.name()),
            Validity::Missing => "MISSING".to_string(),
        }
    }

    pub fn parse_label(s: &str) -> Option<Validity> {
        match s {
            "VALID" => Some(Validity::Valid),
            "MISSING" => Some(Validity::Missing),
            _ => s
                .strip_prefix("ABNORMAL:")
                .and_then(AbnormalRule::from_name)
                .map(Validity::Abnormal),
        }
    }
}

/// Configurable abnormality rules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbnormalRuleSet {
    /// Wind speed above which zero power is abnormal (m/s).
    pub zero_power_wspd_threshold: f64,
    pub enable_pitch_rule: bool,
    pub enable_direction_rule: bool,
}

impl Default for AbnormalRuleSet {
    fn default() -> Self {
        AbnormalRuleSet {
            zero_power_wspd_threshold: 2.5,
            enable_pitch_rule: false,
            enable_direction_rule: false,
        }
    }
}

impl AbnormalRuleSet {
    /// First rule that fires on a complete record, if any.
    pub fn check(&self, values: &[f64; Column::COUNT]) -> Option<AbnormalRule> {
        let patv = values[Column::Patv.index()];
        let wspd = values[Column::Wspd.index()];
        if patv < 0.0 {
            return Some(AbnormalRule::NegativePower);
        }
        if patv == 0.0 && wspd > self.zero_power_wspd_threshold {
            return Some(AbnormalRule::ZeroPowerHighWind);
        }
        if self.enable_pitch_rule {
            for col in [Column::Pab1, Column::Pab2, Column::Pab3] {
                if values[col.index()] > 89.0 {
                    return Some(AbnormalRule::PitchOutOfRange);
                }
            }
        }
        if self.enable_direction_rule {
            let wdir = values[Column::Wdir.index()];
            let ndir = values[Column::Ndir.index()];
            if !(-180.0..=180.0).contains(&wdir) || !(-720.0..=720.0).contains(&ndir) {
                return Some(AbnormalRule::DirectionOutOfRange);
            }
        }
        None
    }
}

/// Per-rule flag counts reported by [`flag_abnormal`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FlagSummary {
    pub negative_power: usize,
    pub zero_power_high_wind: usize,
    pub pitch_out_of_range: usize,
    pub direction_out_of_range: usize,
}

impl FlagSummary {
    pub fn total(&self) -> usize {
        self.negative_power
            + self.zero_power_high_wind
            + self.pitch_out_of_range
            + self.direction_out_of_range
    }

    fn bump(&mut self, rule: AbnormalRule) {
        match rule {
            AbnormalRule::NegativePower => self.negative_power += 1,
            AbnormalRule::ZeroPowerHighWind => self.zero_power_high_wind += 1,
            AbnormalRule::PitchOutOfRange => self.pitch_out_of_range += 1,
            AbnormalRule::DirectionOutOfRange => self.direction_out_of_range += 1,
        }
    }
}

/// One 10-minute observation of one turbine.
#[derive(Debug, Clone, PartialEq)]
pub struct TurbineRecord {
    /// 1-based turbine id.
    pub turbine_id: u32,
    /// 1-based day.
    pub day: u32,
    /// Slot index 0..143.
    pub time_of_day: u32,
    /// Values in [`Column::ALL`] order; NaN where the source cell was empty.
    pub values: [f64; Column::COUNT],
    pub validity: Validity,
}

/// Position of one turbine in farm coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurbineLayout {
    pub turbine_id: u32,
    pub x: f64,
    pub y: f64,
}

/// Column-name mapping for raw CSV files. Canonical names are the defaults;
/// `renames` maps a canonical name to the header actually present.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CsvSchema {
    #[serde(default)]
    pub renames: BTreeMap<String, String>,
    /// When set, rows with a turbine id above this are rejected.
    #[serde(default)]
    pub expected_turbines: Option<u32>,
}

impl CsvSchema {
    fn actual<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.renames.get(canonical).map(String::as_str).unwrap_or(canonical)
    }
}

/// Gap-free per-turbine time series over the (day, slot) grid.
///
/// Values are stored column-major: one contiguous series per (column,
/// turbine). Turbine ids 1..=n map to indices 0..n. Invalid positions keep
/// their parsed values (NaN when absent); `validity` is the parallel mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_turbines: usize,
    n_days: usize,
    /// `values[col][turbine * n_steps + step]`
    values: Vec<Vec<f64>>,
    /// `validity[turbine * n_steps + step]`
    validity: Vec<Validity>,
    imputed: bool,
}

impl Dataset {
    /// All-missing dataset of the given dimensions.
    pub fn new(n_turbines: usize, n_days: usize) -> Dataset {
        let n = n_turbines * n_days * STEPS_PER_DAY;
        Dataset {
            n_turbines,
            n_days,
            values: vec![vec![f64::NAN; n]; Column::COUNT],
            validity: vec![Validity::Missing; n],
            imputed: false,
        }
    }

    pub fn n_turbines(&self) -> usize {
        self.n_turbines
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    /// Steps per turbine (`n_days * 144`).
    pub fn n_steps(&self) -> usize {
        self.n_days * STEPS_PER_DAY
    }

    pub fn total_records(&self) -> usize {
        self.n_turbines * self.n_steps()
    }

    /// Whether [`crate::preprocess::impute`] has run on this dataset.
    pub fn is_imputed(&self) -> bool {
        self.imputed
    }

    pub(crate) fn mark_imputed(&mut self) {
        self.imputed = true;
    }

    fn idx(&self, turbine: usize, step: usize) -> usize {
        debug_assert!(turbine < self.n_turbines && step < self.n_steps());
        turbine * self.n_steps() + step
    }

    pub fn value(&self, col: Column, turbine: usize, step: usize) -> f64 {
        self.values[col.index()][self.idx(turbine, step)]
    }

    pub fn set_value(&mut self, col: Column, turbine: usize, step: usize, v: f64) {
        let i = self.idx(turbine, step);
        self.values[col.index()][i] = v;
    }

    pub fn validity(&self, turbine: usize, step: usize) -> Validity {
        self.validity[self.idx(turbine, step)]
    }

    pub fn set_validity(&mut self, turbine: usize, step: usize, v: Validity) {
        let i = self.idx(turbine, step);
        self.validity[i] = v;
    }

    /// Full series of one column for one turbine.
    pub fn series(&self, col: Column, turbine: usize) -> &[f64] {
        let n = self.n_steps();
        &self.values[col.index()][turbine * n..(turbine + 1) * n]
    }

    pub fn validity_series(&self, turbine: usize) -> &[Validity] {
        let n = self.n_steps();
        &self.validity[turbine * n..(turbine + 1) * n]
    }

    /// Set all ten values and the validity of one grid cell.
    pub fn set_row(
        &mut self,
        turbine: usize,
        step: usize,
        values: [f64; Column::COUNT],
        validity: Validity,
    ) {
        for col in Column::ALL {
            self.set_value(col, turbine, step, values[col.index()]);
        }
        self.set_validity(turbine, step, validity);
    }

    /// Record view of one grid cell.
    pub fn record(&self, turbine: usize, step: usize) -> TurbineRecord {
        let mut values = [f64::NAN; Column::COUNT];
        for col in Column::ALL {
            values[col.index()] = self.value(col, turbine, step);
        }
        TurbineRecord {
            turbine_id: turbine as u32 + 1,
            day: (step / STEPS_PER_DAY) as u32 + 1,
            time_of_day: (step % STEPS_PER_DAY) as u32,
            values,
            validity: self.validity(turbine, step),
        }
    }

    /// (valid, abnormal, missing) record counts.
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut valid = 0;
        let mut abnormal = 0;
        let mut missing = 0;
        for v in &self.validity {
            match v {
                Validity::Valid => valid += 1,
                Validity::Abnormal(_) => abnormal += 1,
                Validity::Missing => missing += 1,
            }
        }
        (valid, abnormal, missing)
    }

    /// Copy of an inclusive 1-based day range, days renumbered from 1.
    pub fn slice_days(&self, day_start: usize, day_end: usize) -> Result<Dataset> {
        if day_start < 1 || day_end > self.n_days || day_start > day_end {
            return Err(Error::InvalidParam(format!(
                "day range {day_start}..={day_end} outside 1..={}",
                self.n_days
            )));
        }
        let n_days = day_end - day_start + 1;
        let mut out = Dataset::new(self.n_turbines, n_days);
        out.imputed = self.imputed;
        let s0 = (day_start - 1) * STEPS_PER_DAY;
        let n = n_days * STEPS_PER_DAY;
        for t in 0..self.n_turbines {
            for s in 0..n {
                let src = self.idx(t, s0 + s);
                let dst = t * n + s;
                for col in Column::ALL {
                    out.values[col.index()][dst] = self.values[col.index()][src];
                }
                out.validity[dst] = self.validity[src];
            }
        }
        Ok(out)
    }

    /// Maximum VALID active power over the whole dataset, if any.
    pub fn max_valid_patv(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        let patv = &self.values[Column::Patv.index()];
        for (i, v) in self.validity.iter().enumerate() {
            if v.is_valid() {
                let p = patv[i];
                best = Some(best.map_or(p, |b: f64| b.max(p)));
            }
        }
        best
    }
}

/// Parse "HH:MM" into a slot index 0..143.
pub fn parse_timestamp(s: &str) -> Option<u32> {
    let (h, m) = s.split_once(':')?;
    let h: u32 = h.trim().parse().ok()?;
    let m: u32 = m.trim().parse().ok()?;
    if h < 24 && m < 60 && m % 10 == 0 {
        Some(h * 6 + m / 10)
    } else {
        None
    }
}

/// Render a slot index 0..143 as "HH:MM".
pub fn format_timestamp(slot: u32) -> String {
    format!("{:02}:{:02}", slot / 6, (slot % 6) * 10)
}

struct RawRow {
    turbine: u32,
    day: u32,
    slot: u32,
    values: [f64; Column::COUNT],
    any_absent: bool,
    validity: Option<Validity>,
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file))
}

fn header_index(headers: &csv::StringRecord, name: &str, file: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn {
            file: file.display().to_string(),
            column: name.to_string(),
        })
}

fn read_rows(path: &Path, schema: &CsvSchema, with_validity: bool) -> Result<Vec<RawRow>> {
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            file: path.display().to_string(),
            message: e.to_string(),
        })?
        .clone();

    let id_idx = header_index(&headers, schema.actual("TurbID"), path)?;
    let day_idx = header_index(&headers, schema.actual("Day"), path)?;
    let ts_idx = header_index(&headers, schema.actual("Tmstamp"), path)?;
    let mut col_idx = [0usize; Column::COUNT];
    for col in Column::ALL {
        col_idx[col.index()] = header_index(&headers, schema.actual(col.name()), path)?;
    }
    let validity_idx = if with_validity {
        Some(header_index(&headers, "validity", path)?)
    } else {
        None
    };

    let file_name = path.display().to_string();
    let mut rows = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            file: file_name.clone(),
            message: e.to_string(),
        })?;
        let bad = |message: String| Error::BadValue {
            file: file_name.clone(),
            row: row_no + 2,
            message,
        };
        let turbine: u32 = record
            .get(id_idx)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| bad("unparsable turbine id".into()))?;
        if turbine == 0 {
            return Err(bad("turbine id must be >= 1".into()));
        }
        if let Some(max) = schema.expected_turbines {
            if turbine > max {
                return Err(Error::UnknownTurbine { turbine, max });
            }
        }
        let day: u32 = record
            .get(day_idx)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| bad("unparsable day".into()))?;
        if day == 0 {
            return Err(bad("day must be >= 1".into()));
        }
        let ts = record.get(ts_idx).unwrap_or("").trim();
        let slot =
            parse_timestamp(ts).ok_or_else(|| bad(format!("unparsable timestamp '{ts}'")))?;

        let mut values = [f64::NAN; Column::COUNT];
        let mut any_absent = false;
        for col in Column::ALL {
            let cell = record.get(col_idx[col.index()]).unwrap_or("").trim();
            if cell.is_empty() {
                any_absent = true;
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| bad(format!("unparsable value '{cell}' in {}", col.name())))?;
                values[col.index()] = v;
            }
        }

        let validity = match validity_idx {
            Some(vi) => {
                let label = record.get(vi).unwrap_or("").trim();
                Some(Validity::parse_label(label).ok_or_else(|| {
                    bad(format!("unparsable validity label '{label}'"))
                })?)
            }
            None => None,
        };

        rows.push(RawRow {
            turbine,
            day,
            slot,
            values,
            any_absent,
            validity,
        });
    }
    Ok(rows)
}

fn assemble(rows: Vec<RawRow>, schema: &CsvSchema) -> Result<Dataset> {
    let n_turbines = schema
        .expected_turbines
        .map(|n| n as usize)
        .or_else(|| rows.iter().map(|r| r.turbine as usize).max())
        .unwrap_or(0);
    let n_days = rows.iter().map(|r| r.day as usize).max().unwrap_or(0);
    if n_turbines == 0 || n_days == 0 {
        return Err(Error::InvalidData("no data rows in file".into()));
    }

    let mut ds = Dataset::new(n_turbines, n_days);
    let mut filled = vec![false; ds.total_records()];
    for row in rows {
        let t = row.turbine as usize - 1;
        let step = (row.day as usize - 1) * STEPS_PER_DAY + row.slot as usize;
        let i = t * ds.n_steps() + step;
        if filled[i] {
            return Err(Error::DuplicateRecord {
                turbine: row.turbine,
                day: row.day,
                slot: row.slot,
            });
        }
        filled[i] = true;
        let validity = row.validity.unwrap_or(if row.any_absent {
            Validity::Missing
        } else {
            Validity::Valid
        });
        ds.set_row(t, step, row.values, validity);
    }
    Ok(ds)
}

/// Parse a raw turbine time-series CSV into a gap-free [`Dataset`].
///
/// Rows absent from the file appear as `MISSING`; rows with any empty numeric
/// cell are `MISSING`; everything else starts `VALID` (run [`flag_abnormal`]
/// to apply abnormality rules). Row order in the file does not affect the
/// result. Duplicate (turbine, day, slot) keys are rejected.
pub fn parse_turbine_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let rows = read_rows(path.as_ref(), schema, false)?;
    assemble(rows, schema)
}

/// Re-apply abnormality rules, returning the flagged dataset and per-rule
/// counts. `MISSING` records are untouched; every non-missing record becomes
/// either `ABNORMAL` (with the firing rule) or `VALID`, so applying the same
/// rules twice is a no-op.
pub fn flag_abnormal(mut ds: Dataset, rules: &AbnormalRuleSet) -> (Dataset, FlagSummary) {
    let mut summary = FlagSummary::default();
    let n_steps = ds.n_steps();
    for t in 0..ds.n_turbines() {
        for s in 0..n_steps {
            if ds.validity(t, s).is_missing() {
                continue;
            }
            let mut values = [0.0; Column::COUNT];
            for col in Column::ALL {
                values[col.index()] = ds.value(col, t, s);
            }
            match rules.check(&values) {
                Some(rule) => {
                    summary.bump(rule);
                    ds.set_validity(t, s, Validity::Abnormal(rule));
                }
                None => ds.set_validity(t, s, Validity::Valid),
            }
        }
    }
    (ds, summary)
}

/// Parse a turbine layout CSV with columns (TurbID|id, x, y).
pub fn parse_layout_csv(path: impl AsRef<Path>) -> Result<Vec<TurbineLayout>> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            file: path.display().to_string(),
            message: e.to_string(),
        })?
        .clone();
    let id_idx = headers
        .iter()
        .position(|h| {
            let h = h.trim().to_ascii_lowercase();
            h == "turbid" || h == "id"
        })
        .ok_or_else(|| Error::MissingColumn {
            file: path.display().to_string(),
            column: "TurbID".to_string(),
        })?;
    let x_idx = header_index(&headers, "x", path)?;
    let y_idx = header_index(&headers, "y", path)?;

    let file_name = path.display().to_string();
    let mut layouts: Vec<TurbineLayout> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            file: file_name.clone(),
            message: e.to_string(),
        })?;
        let bad = |message: String| Error::BadValue {
            file: file_name.clone(),
            row: row_no + 2,
            message,
        };
        let turbine_id: u32 = record
            .get(id_idx)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| bad("unparsable turbine id".into()))?;
        if !seen.insert(turbine_id) {
            return Err(Error::DuplicateLayout(turbine_id));
        }
        let coord = |idx: usize, name: &str| -> Result<f64> {
            let cell = record.get(idx).unwrap_or("").trim();
            if cell.is_empty() {
                return Err(bad(format!("missing coordinate {name}")));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| bad(format!("unparsable coordinate {name}")))?;
            if !v.is_finite() {
                return Err(bad(format!("non-finite coordinate {name}")));
            }
            Ok(v)
        };
        layouts.push(TurbineLayout {
            turbine_id,
            x: coord(x_idx, "x")?,
            y: coord(y_idx, "y")?,
        });
    }
    Ok(layouts)
}

/// Write the canonical dataset serialization: the raw CSV schema plus a
/// `validity` column, rows in (turbine, day, slot) order. Floats use the
/// shortest round-trip representation, so output is bit-stable across runs.
pub fn write_canonical_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let mut header: Vec<String> = vec!["TurbID".into(), "Day".into(), "Tmstamp".into()];
    header.extend(Column::ALL.iter().map(|c| c.name().to_string()));
    header.push("validity".into());
    w.write_record(&header).map_err(|e| Error::Csv {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;

    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for t in 0..ds.n_turbines() {
        for s in 0..ds.n_steps() {
            row.clear();
            row.push((t + 1).to_string());
            row.push((s / STEPS_PER_DAY + 1).to_string());
            row.push(format_timestamp((s % STEPS_PER_DAY) as u32));
            for col in Column::ALL {
                let v = ds.value(col, t, s);
                row.push(if v.is_nan() { String::new() } else { v.to_string() });
            }
            row.push(ds.validity(t, s).label());
            w.write_record(&row).map_err(|e| Error::Csv {
                file: path.display().to_string(),
                message: e.to_string(),
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Read a canonical dataset back, trusting its `validity` column.
pub fn read_canonical_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let schema = CsvSchema::default();
    let rows = read_rows(path.as_ref(), &schema, true)?;
    assemble(rows, &schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &tempfile::TempDir, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    fn full_csv(turbines: u32, days: u32, skip: Option<(u32, u32, u32)>) -> String {
        let mut s = String::from(
            "TurbID,Day,Tmstamp,Wspd,Wdir,Etmp,Itmp,Ndir,Pab1,Pab2,Pab3,Prtv,Patv\n",
        );
        for t in 1..=turbines {
            for d in 1..=days {
                for slot in 0..STEPS_PER_DAY as u32 {
                    if skip == Some((t, d, slot)) {
                        continue;
                    }
                    s.push_str(&format!(
                        "{t},{d},{},6.0,1.0,20.0,30.0,2.0,0.5,0.5,0.5,10.0,500.0\n",
                        format_timestamp(slot)
                    ));
                }
            }
        }
        s
    }

    #[test]
    fn complete_file_has_no_missing() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "farm.csv", &full_csv(2, 1, None));
        let ds = parse_turbine_csv(&path, &CsvSchema::default()).unwrap();
        assert_eq!(ds.total_records(), 288);
        let (valid, abnormal, missing) = ds.counts();
        assert_eq!((valid, abnormal, missing), (288, 0, 0));
    }

    #[test]
    fn deleted_row_materializes_as_missing() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "farm.csv", &full_csv(2, 1, Some((1, 1, 37))));
        let ds = parse_turbine_csv(&path, &CsvSchema::default()).unwrap();
        assert_eq!(ds.total_records(), 288);
        let (_, _, missing) = ds.counts();
        assert_eq!(missing, 1);
        assert_eq!(ds.validity(0, 37), Validity::Missing);
        assert!(ds.value(Column::Patv, 0, 37).is_nan());
    }

    #[test]
    fn training_scale_grid_is_materialized() {
        // Sparse file: the grid dimensions come from the max (turbine, day)
        // seen, so a handful of rows is enough to exercise full-scale
        // materialization: 134 turbines x 245 days x 144 slots.
        let dir = tempfile::tempdir().unwrap();
        let mut content = String::from(
            "TurbID,Day,Tmstamp,Wspd,Wdir,Etmp,Itmp,Ndir,Pab1,Pab2,Pab3,Prtv,Patv\n",
        );
        content.push_str("1,1,00:00,6.0,1.0,20.0,30.0,2.0,0.5,0.5,0.5,10.0,500.0\n");
        content.push_str("134,245,23:50,6.0,1.0,20.0,30.0,2.0,0.5,0.5,0.5,10.0,500.0\n");
        let path = write_file(&dir, "farm.csv", &content);
        let ds = parse_turbine_csv(&path, &CsvSchema::default()).unwrap();
        assert_eq!(ds.total_records(), 4_727_520);
    }

    #[test]
    fn row_order_does_not_matter() {
        let dir = tempfile::tempdir().unwrap();
        let forward = full_csv(2, 1, None);
        let mut lines: Vec<&str> = forward.lines().collect();
        let header = lines.remove(0);
        lines.reverse();
        let reversed = format!("{header}\n{}\n", lines.join("\n"));
        let p1 = write_file(&dir, "a.csv", &forward);
        let p2 = write_file(&dir, "b.csv", &reversed);
        let d1 = parse_turbine_csv(&p1, &CsvSchema::default()).unwrap();
        let d2 = parse_turbine_csv(&p2, &CsvSchema::default()).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn duplicate_key_rejected_with_key() {
        let dir = tempfile::tempdir().unwrap();
        let mut content = full_csv(1, 1, None);
        content.push_str("1,1,00:00,6.0,1.0,20.0,30.0,2.0,0.5,0.5,0.5,10.0,500.0\n");
        let path = write_file(&dir, "farm.csv", &content);
        match parse_turbine_csv(&path, &CsvSchema::default()) {
            Err(Error::DuplicateRecord { turbine: 1, day: 1, slot: 0 }) => {}
            other => panic!("expected duplicate record error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_turbine_rejected_when_bounded() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "farm.csv", &full_csv(3, 1, None));
        let schema = CsvSchema {
            expected_turbines: Some(2),
            ..CsvSchema::default()
        };
        match parse_turbine_csv(&path, &schema) {
            Err(Error::UnknownTurbine { turbine: 3, max: 2 }) => {}
            other => panic!("expected unknown turbine error, got {other:?}"),
        }
    }

    #[test]
    fn empty_cell_means_missing() {
        let dir = tempfile::tempdir().unwrap();
        let mut content = String::from(
            "TurbID,Day,Tmstamp,Wspd,Wdir,Etmp,Itmp,Ndir,Pab1,Pab2,Pab3,Prtv,Patv\n",
        );
        content.push_str("1,1,00:00,6.0,1.0,20.0,30.0,2.0,0.5,0.5,0.5,10.0,\n");
        let path = write_file(&dir, "farm.csv", &content);
        let ds = parse_turbine_csv(&path, &CsvSchema::default()).unwrap();
        assert_eq!(ds.validity(0, 0), Validity::Missing);
        // The present cells are still stored.
        assert_eq!(ds.value(Column::Wspd, 0, 0), 6.0);
    }

    #[test]
    fn abnormal_rules_fire_as_documented() {
        let rules = AbnormalRuleSet::default();
        let mut values = [0.0; Column::COUNT];
        values[Column::Wspd.index()] = 5.0;
        values[Column::Patv.index()] = -5.0;
        assert_eq!(rules.check(&values), Some(AbnormalRule::NegativePower));

        values[Column::Patv.index()] = 0.0;
        values[Column::Wspd.index()] = 6.0;
        assert_eq!(rules.check(&values), Some(AbnormalRule::ZeroPowerHighWind));

        values[Column::Patv.index()] = 120.5;
        values[Column::Wspd.index()] = 5.0;
        assert_eq!(rules.check(&values), None);
    }

    #[test]
    fn flagging_is_idempotent_and_conserves_counts() {
        let mut ds = Dataset::new(2, 1);
        let mut values = [1.0; Column::COUNT];
        for s in 0..ds.n_steps() {
            values[Column::Patv.index()] = if s % 7 == 0 { -1.0 } else { 100.0 };
            values[Column::Wspd.index()] = 5.0;
            ds.set_row(0, s, values, Validity::Valid);
            if s % 5 == 0 {
                ds.set_row(1, s, [f64::NAN; Column::COUNT], Validity::Missing);
            } else {
                values[Column::Patv.index()] = 0.0;
                values[Column::Wspd.index()] = if s % 3 == 0 { 6.0 } else { 1.0 };
                ds.set_row(1, s, values, Validity::Valid);
            }
        }
        let rules = AbnormalRuleSet::default();
        let (once, s1) = flag_abnormal(ds, &rules);
        let (twice, s2) = flag_abnormal(once.clone(), &rules);
        assert_eq!(once, twice);
        assert_eq!(s1.total(), s2.total());
        let (valid, abnormal, missing) = once.counts();
        assert_eq!(valid + abnormal + missing, once.total_records());
        assert_eq!(abnormal, s1.total());
    }

    #[test]
    fn layout_parses_and_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "layout.csv", "TurbID,x,y\n1,0.0,0.0\n2,10.0,5.0\n3,20.0,0.0\n");
        let layouts = parse_layout_csv(&path).unwrap();
        assert_eq!(layouts.len(), 3);
        assert_eq!(layouts[1].x, 10.0);

        let dup = write_file(&dir, "dup.csv", "id,x,y\n1,0.0,0.0\n1,10.0,5.0\n");
        match parse_layout_csv(&dup) {
            Err(Error::DuplicateLayout(1)) => {}
            other => panic!("expected duplicate layout error, got {other:?}"),
        }

        let missing = write_file(&dir, "missing.csv", "id,x,y\n1,0.0,\n");
        assert!(parse_layout_csv(&missing).is_err());
    }

    #[test]
    fn canonical_roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "farm.csv", &full_csv(2, 1, Some((2, 1, 100))));
        let ds = parse_turbine_csv(&path, &CsvSchema::default()).unwrap();
        let mut patched = ds.clone();
        patched.set_value(Column::Patv, 0, 3, -2.5);
        let (flagged, _) = flag_abnormal(patched, &AbnormalRuleSet::default());

        let out = dir.path().join("canonical.csv");
        write_canonical_csv(&flagged, &out).unwrap();
        let back = read_canonical_csv(&out).unwrap();
        assert_eq!(flagged, back);

        // Bit-stable: writing again yields identical bytes.
        let out2 = dir.path().join("canonical2.csv");
        write_canonical_csv(&back, &out2).unwrap();
        assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&out2).unwrap());
    }

    #[test]
    fn timestamps_parse_to_slots() {
        assert_eq!(parse_timestamp("00:00"), Some(0));
        assert_eq!(parse_timestamp("01:30"), Some(9));
        assert_eq!(parse_timestamp("23:50"), Some(143));
        assert_eq!(parse_timestamp("24:00"), None);
        assert_eq!(parse_timestamp("00:05"), None);
        assert_eq!(format_timestamp(9), "01:30");
    }

    #[test]
    fn slice_days_renumbers() {
        let mut ds = Dataset::new(1, 3);
        for s in 0..ds.n_steps() {
            ds.set_row(0, s, [s as f64; Column::COUNT], Validity::Valid);
        }
        let tail = ds.slice_days(2, 3).unwrap();
        assert_eq!(tail.n_days(), 2);
        assert_eq!(tail.value(Column::Wspd, 0, 0), 144.0);
        assert!(ds.slice_days(0, 1).is_err());
        assert!(ds.slice_days(2, 4).is_err());
    }
}
