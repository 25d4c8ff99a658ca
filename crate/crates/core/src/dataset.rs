//! Observational panel data model: ingestion from CSV, validation,
//! summary statistics and weekly aggregation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("row {row}: cannot parse `{value}` in column `{column}`: {reason}")]
    BadValue {
        row: usize,
        column: String,
        value: String,
        reason: String,
    },
    #[error("row {row}, column `{column}`: negative value {value}")]
    Negative {
        row: usize,
        column: String,
        value: f64,
    },
    #[error("duplicate date {date} at row {row}")]
    DuplicateDate { date: NaiveDate, row: usize },
    #[error("gap in dates: expected {expected} after {previous}")]
    DateGap {
        previous: NaiveDate,
        expected: NaiveDate,
    },
    #[error("dates are not uniformly spaced: step changes from {first_step} to {step} days at {date}")]
    IrregularSpacing {
        first_step: i64,
        step: i64,
        date: NaiveDate,
    },
    #[error("panel needs at least {min} rows, got {actual}")]
    TooShort { min: usize, actual: usize },
    #[error("series `{0}` has a different length than the date column")]
    LengthMismatch(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const MIN_ROWS: usize = 10;

/// Column-name mapping from panel roles to CSV headers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelSchema {
    pub date: String,
    pub y: String,
    pub x1: String,
    pub v1: String,
    pub v2: String,
    pub v3: String,
    /// Non-search channels: output name -> CSV column.
    #[serde(default)]
    pub x2: BTreeMap<String, String>,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            date: "date".into(),
            y: "sales".into(),
            x1: "spend".into(),
            v1: "v1".into(),
            v2: "v2".into(),
            v3: "v3".into(),
            x2: BTreeMap::new(),
        }
    }
}

/// Date-indexed observational panel: sales, search spend, optional
/// non-search spends, and the three query-volume series.
///
/// Immutable after load; all series share the same length, dates strictly
/// increase with a constant step, and no value is negative.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MmmPanel {
    pub dates: Vec<NaiveDate>,
    pub y: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: BTreeMap<String, Vec<f64>>,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub v3: Vec<f64>,
}

impl MmmPanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        y: Vec<f64>,
        x1: Vec<f64>,
        x2: BTreeMap<String, Vec<f64>>,
        v1: Vec<f64>,
        v2: Vec<f64>,
        v3: Vec<f64>,
    ) -> Result<Self, DatasetError> {
        let panel = Self {
            dates,
            y,
            x1,
            x2,
            v1,
            v2,
            v3,
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Category search volume v1 + v2 + v3, the demand proxy.
    pub fn category_volume(&self) -> Vec<f64> {
        (0..self.len())
            .map(|t| self.v1[t] + self.v2[t] + self.v3[t])
            .collect()
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let n = self.dates.len();
        if n < MIN_ROWS {
            return Err(DatasetError::TooShort {
                min: MIN_ROWS,
                actual: n,
            });
        }
        for (name, series) in self.named_series() {
            if series.len() != n {
                return Err(DatasetError::LengthMismatch(name.to_string()));
            }
            for (i, &v) in series.iter().enumerate() {
                if !v.is_finite() {
                    return Err(DatasetError::BadValue {
                        row: i + 2,
                        column: name.to_string(),
                        value: v.to_string(),
                        reason: "not finite".into(),
                    });
                }
                if v < 0.0 {
                    return Err(DatasetError::Negative {
                        row: i + 2,
                        column: name.to_string(),
                        value: v,
                    });
                }
            }
        }
        let step = self.dates[1] - self.dates[0];
        if step.num_days() <= 0 {
            if step.num_days() == 0 {
                return Err(DatasetError::DuplicateDate {
                    date: self.dates[0],
                    row: 3,
                });
            }
            return Err(DatasetError::IrregularSpacing {
                first_step: step.num_days(),
                step: step.num_days(),
                date: self.dates[1],
            });
        }
        for w in self.dates.windows(2) {
            let d = w[1] - w[0];
            if d.num_days() == 0 {
                return Err(DatasetError::DuplicateDate {
                    date: w[1],
                    row: 0,
                });
            }
            if d != step {
                // A single skipped period reads as a gap; report the date.
                return Err(DatasetError::DateGap {
                    previous: w[0],
                    expected: w[0] + step,
                });
            }
        }
        Ok(())
    }

    fn named_series(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("y".into(), &self.y),
            ("x1".into(), &self.x1),
            ("v1".into(), &self.v1),
            ("v2".into(), &self.v2),
            ("v3".into(), &self.v3),
        ];
        for (name, series) in &self.x2 {
            out.push((format!("x2:{name}"), series));
        }
        out
    }

    /// Loads and validates a panel from CSV, sorting rows by date first.
    pub fn load_csv(path: &Path, schema: &PanelSchema) -> Result<Self, DatasetError> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| -> Result<usize, DatasetError> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
        };
        let c_date = col(&schema.date)?;
        let c_y = col(&schema.y)?;
        let c_x1 = col(&schema.x1)?;
        let c_v1 = col(&schema.v1)?;
        let c_v2 = col(&schema.v2)?;
        let c_v3 = col(&schema.v3)?;
        let c_x2: Vec<(String, usize)> = schema
            .x2
            .iter()
            .map(|(name, column)| Ok((name.clone(), col(column)?)))
            .collect::<Result<_, DatasetError>>()?;

        struct Row {
            date: NaiveDate,
            y: f64,
            x1: f64,
            v: [f64; 3],
            x2: Vec<f64>,
            row: usize,
        }
        let mut rows: Vec<Row> = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let row = i + 2; // 1-based, after the header
            let field = |idx: usize, column: &str| -> Result<f64, DatasetError> {
                let raw = record.get(idx).unwrap_or("").trim();
                raw.parse::<f64>().map_err(|e| DatasetError::BadValue {
                    row,
                    column: column.to_string(),
                    value: raw.to_string(),
                    reason: e.to_string(),
                })
            };
            let raw_date = record.get(c_date).unwrap_or("").trim();
            let date =
                NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|e| {
                    DatasetError::BadValue {
                        row,
                        column: schema.date.clone(),
                        value: raw_date.to_string(),
                        reason: e.to_string(),
                    }
                })?;
            let x2 = c_x2
                .iter()
                .map(|(name, idx)| field(*idx, name))
                .collect::<Result<Vec<f64>, _>>()?;
            rows.push(Row {
                date,
                y: field(c_y, &schema.y)?,
                x1: field(c_x1, &schema.x1)?,
                v: [
                    field(c_v1, &schema.v1)?,
                    field(c_v2, &schema.v2)?,
                    field(c_v3, &schema.v3)?,
                ],
                x2,
                row,
            });
        }
        rows.sort_by_key(|r| r.date);
        for w in rows.windows(2) {
            if w[0].date == w[1].date {
                return Err(DatasetError::DuplicateDate {
                    date: w[1].date,
                    row: w[1].row,
                });
            }
        }
        // Negative values are reported with their CSV position before the
        // panel-level validation runs.
        for r in &rows {
            for (value, column) in [
                (r.y, &schema.y),
                (r.x1, &schema.x1),
                (r.v[0], &schema.v1),
                (r.v[1], &schema.v2),
                (r.v[2], &schema.v3),
            ] {
                if value < 0.0 {
                    return Err(DatasetError::Negative {
                        row: r.row,
                        column: column.clone(),
                        value,
                    });
                }
            }
            for ((name, _), &value) in c_x2.iter().zip(&r.x2) {
                if value < 0.0 {
                    return Err(DatasetError::Negative {
                        row: r.row,
                        column: name.clone(),
                        value,
                    });
                }
            }
        }
        let mut x2 = BTreeMap::new();
        for (slot, (name, _)) in c_x2.iter().enumerate() {
            x2.insert(name.clone(), rows.iter().map(|r| r.x2[slot]).collect());
        }
        Self::new(
            rows.iter().map(|r| r.date).collect(),
            rows.iter().map(|r| r.y).collect(),
            rows.iter().map(|r| r.x1).collect(),
            x2,
            rows.iter().map(|r| r.v[0]).collect(),
            rows.iter().map(|r| r.v[1]).collect(),
            rows.iter().map(|r| r.v[2]).collect(),
        )
    }

    /// Writes the panel as CSV with canonical column names
    /// (`date,sales,spend,v1,v2,v3[,channels...]`).
    pub fn save_csv(&self, path: &Path) -> Result<(), DatasetError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header = vec![
            "date".to_string(),
            "sales".to_string(),
            "spend".to_string(),
            "v1".to_string(),
            "v2".to_string(),
            "v3".to_string(),
        ];
        header.extend(self.x2.keys().cloned());
        writeln!(file, "{}", header.join(","))?;
        for t in 0..self.len() {
            let mut fields = vec![
                self.dates[t].format("%Y-%m-%d").to_string(),
                fmt_float(self.y[t]),
                fmt_float(self.x1[t]),
                fmt_float(self.v1[t]),
                fmt_float(self.v2[t]),
                fmt_float(self.v3[t]),
            ];
            for series in self.x2.values() {
                fields.push(fmt_float(series[t]));
            }
            writeln!(file, "{}", fields.join(","))?;
        }
        file.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("panel serializes")
    }

    /// Sums Y, X and V within ISO weeks; partial first/last weeks are
    /// dropped. Input must be daily.
    pub fn aggregate_weekly(&self) -> Result<MmmPanel, DatasetError> {
        let step = (self.dates[1] - self.dates[0]).num_days();
        if step != 1 {
            return Err(DatasetError::IrregularSpacing {
                first_step: 1,
                step,
                date: self.dates[1],
            });
        }
        let mut weeks: Vec<(NaiveDate, Vec<usize>)> = Vec::new();
        for (t, date) in self.dates.iter().enumerate() {
            let week_start = *date
                - chrono::Duration::days(date.weekday().num_days_from_monday() as i64);
            match weeks.last_mut() {
                Some((start, idx)) if *start == week_start => idx.push(t),
                _ => weeks.push((week_start, vec![t])),
            }
        }
        weeks.retain(|(_, idx)| idx.len() == 7);
        let sum = |series: &[f64], idx: &[usize]| idx.iter().map(|&t| series[t]).sum::<f64>();
        let mut x2 = BTreeMap::new();
        for (name, series) in &self.x2 {
            x2.insert(
                name.clone(),
                weeks.iter().map(|(_, idx)| sum(series, idx)).collect(),
            );
        }
        MmmPanel::new(
            weeks.iter().map(|(start, _)| *start).collect(),
            weeks.iter().map(|(_, idx)| sum(&self.y, idx)).collect(),
            weeks.iter().map(|(_, idx)| sum(&self.x1, idx)).collect(),
            x2,
            weeks.iter().map(|(_, idx)| sum(&self.v1, idx)).collect(),
            weeks.iter().map(|(_, idx)| sum(&self.v2, idx)).collect(),
            weeks.iter().map(|(_, idx)| sum(&self.v3, idx)).collect(),
        )
    }

    /// Splits the panel by calendar year, dropping years with fewer than
    /// the minimum row count.
    pub fn split_by_year(&self) -> Vec<(i32, MmmPanel)> {
        let mut years: Vec<(i32, Vec<usize>)> = Vec::new();
        for (t, date) in self.dates.iter().enumerate() {
            match years.last_mut() {
                Some((y, idx)) if *y == date.year() => idx.push(t),
                _ => years.push((date.year(), vec![t])),
            }
        }
        years
            .into_iter()
            .filter_map(|(year, idx)| {
                let take = |s: &[f64]| idx.iter().map(|&t| s[t]).collect::<Vec<f64>>();
                let mut x2 = BTreeMap::new();
                for (name, series) in &self.x2 {
                    x2.insert(name.clone(), take(series));
                }
                MmmPanel::new(
                    idx.iter().map(|&t| self.dates[t]).collect(),
                    take(&self.y),
                    take(&self.x1),
                    x2,
                    take(&self.v1),
                    take(&self.v2),
                    take(&self.v3),
                )
                .ok()
                .map(|p| (year, p))
            })
            .collect()
    }

    /// Per-series summary plus pairwise Pearson correlations.
    pub fn summarize(&self) -> PanelSummary {
        let mut names = vec![
            "y".to_string(),
            "x1".to_string(),
            "v1".to_string(),
            "v2".to_string(),
            "v3".to_string(),
        ];
        let mut series: Vec<&[f64]> = vec![&self.y, &self.x1, &self.v1, &self.v2, &self.v3];
        for (name, s) in &self.x2 {
            names.push(format!("x2:{name}"));
            series.push(s);
        }
        let stats = names
            .iter()
            .zip(&series)
            .map(|(name, s)| SeriesStats {
                name: name.clone(),
                median: median(s),
                mean: mean(s),
                sd: sd(s),
            })
            .collect();
        let k = series.len();
        let mut correlations = vec![vec![1.0; k]; k];
        let mut undefined = Vec::new();
        for i in 0..k {
            for j in (i + 1)..k {
                match pearson(series[i], series[j]) {
                    Some(r) => {
                        correlations[i][j] = r;
                        correlations[j][i] = r;
                    }
                    None => {
                        correlations[i][j] = f64::NAN;
                        correlations[j][i] = f64::NAN;
                        undefined.push((names[i].clone(), names[j].clone()));
                    }
                }
            }
        }
        PanelSummary {
            names,
            stats,
            correlations,
            undefined_pairs: undefined,
        }
    }

    /// Each series divided by its median, for plot emission.
    pub fn median_rescaled(&self) -> Vec<(String, Vec<f64>)> {
        let rescale = |s: &[f64]| {
            let m = median(s);
            let denom = if m == 0.0 { 1.0 } else { m };
            s.iter().map(|&v| v / denom).collect::<Vec<f64>>()
        };
        let mut out = vec![
            ("y".to_string(), rescale(&self.y)),
            ("x1".to_string(), rescale(&self.x1)),
            ("v1".to_string(), rescale(&self.v1)),
            ("v2".to_string(), rescale(&self.v2)),
            ("v3".to_string(), rescale(&self.v3)),
        ];
        for (name, s) in &self.x2 {
            out.push((format!("x2:{name}"), rescale(s)));
        }
        out
    }
}

fn fmt_float(v: f64) -> String {
    // Shortest representation that round-trips through f64.
    format!("{v}")
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesStats {
    pub name: String,
    pub median: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PanelSummary {
    pub names: Vec<String>,
    pub stats: Vec<SeriesStats>,
    /// Symmetric with unit diagonal; NaN marks undefined (zero-variance) pairs.
    pub correlations: Vec<Vec<f64>>,
    pub undefined_pairs: Vec<(String, String)>,
}

impl PanelSummary {
    pub fn correlation(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        Some(self.correlations[i][j])
    }
}

pub fn mean(s: &[f64]) -> f64 {
    if s.is_empty() {
        return f64::NAN;
    }
    s.iter().sum::<f64>() / s.len() as f64
}

pub fn sd(s: &[f64]) -> f64 {
    if s.len() < 2 {
        return f64::NAN;
    }
    let m = mean(s);
    (s.iter().map(|&v| (v - m).powi(2)).sum::<f64>() / (s.len() - 1) as f64).sqrt()
}

pub fn median(s: &[f64]) -> f64 {
    if s.is_empty() {
        return f64::NAN;
    }
    let mut sorted = s.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Product-moment correlation; `None` when either series has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    if n < 2 || n != b.len() {
        return None;
    }
    let (ma, mb) = (mean(a), mean(b));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for t in 0..n {
        let (da, db) = (a[t] - ma, b[t] - mb);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
