//! Time-series ingestion and preprocessing.
//!
//! CSV layout: a header of sensor names, one row per timestamp, and an
//! optional final `label` column with 0/1 anomaly marks. Empty cells are
//! missing readings, kept internally as NaN until imputation fills them.
//!
//! Preprocessing applies in a fixed order: head trim, median downsample,
//! mean imputation, then min-max scaling with statistics fitted on
//! training data only. Scaling never clips, so test readings outside the
//! training range land outside [0, 1] and stay informative.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A multivariate series: one row of `values` per sensor, one column per
/// timestamp. Missing readings are NaN. Labels, when present, mark each
/// timestamp 0 (normal) or 1 (anomalous).
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub sensor_names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub labels: Option<Vec<u8>>,
}

impl RawSeries {
    pub fn n_sensors(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.values.first().map(|v| v.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, sensor: usize, t: usize) -> bool {
        self.values[sensor][t].is_nan()
    }

    fn check_rectangular(&self) -> Result<()> {
        let t = self.len();
        if self.values.iter().any(|v| v.len() != t) {
            return Err(Error::Contract("sensors have unequal lengths".to_string()));
        }
        if let Some(l) = &self.labels {
            if l.len() != t {
                return Err(Error::Contract(format!(
                    "{} labels for {} timestamps",
                    l.len(),
                    t
                )));
            }
        }
        Ok(())
    }
}

/// Per-sensor min/max fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Sliding one-step-ahead pairs: `inputs[i]` holds columns
/// [t-w, t) for every sensor and `targets[i]` the readings at t, where
/// t = `timestamps[i]`.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    pub window: usize,
    pub inputs: Vec<Tensor>,
    pub targets: Vec<Vec<f64>>,
    pub labels: Option<Vec<u8>>,
    pub timestamps: Vec<usize>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_sensors(&self) -> usize {
        self.inputs
            .first()
            .map(|t| t.shape()[0])
            .unwrap_or(0)
    }
}

/// Knobs for the fixed-order preprocessing pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    /// Timestamps dropped from the start before anything else.
    pub trim_head: usize,
    /// Median downsampling factor; 1 keeps the original resolution.
    pub downsample: usize,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            trim_head: 0,
            downsample: 1,
        }
    }
}

/// Sidecar metadata written next to a processed CSV so later stages can
/// reproduce or reuse the exact transformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarMeta {
    pub options: PreprocessOptions,
    pub sensor_names: Vec<String>,
    pub stats: NormStats,
}

pub fn load_csv(path: &Path) -> Result<RawSeries> {
    let file = std::fs::File::open(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);

    let mut records = rdr.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(csv_err)?,
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing header row".to_string(),
            })
        }
    };
    let mut names: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    if names.is_empty() || names.iter().all(|n| n.is_empty()) {
        return Err(Error::Parse {
            line: 1,
            msg: "missing header row".to_string(),
        });
    }
    let has_labels = names.last().map(|n| n == "label").unwrap_or(false);
    if has_labels {
        names.pop();
    }
    if names.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no sensor columns before the label column".to_string(),
        });
    }
    let n = names.len();
    let width = n + usize::from(has_labels);

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut labels: Vec<u8> = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != width {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, got {}", width, rec.len()),
            });
        }
        for (i, cell) in rec.iter().take(n).enumerate() {
            if cell.is_empty() {
                values[i].push(f64::NAN);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("column {:?}: {:?} is not a number", names[i], cell),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("column {:?}: non-finite value {:?}", names[i], cell),
                });
            }
            values[i].push(v);
        }
        if has_labels {
            let cell = rec.get(n).unwrap_or("");
            match cell {
                "0" => labels.push(0),
                "1" => labels.push(1),
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("label must be 0 or 1, got {:?}", other),
                    })
                }
            }
        }
    }
    Ok(RawSeries {
        sensor_names: names,
        values,
        labels: if has_labels { Some(labels) } else { None },
    })
}

fn csv_err(e: csv::Error) -> Error {
    let line = match e.position() {
        Some(p) => p.line() as usize,
        None => 0,
    };
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}

/// Writes the series back as CSV. Missing readings become empty cells;
/// floats use shortest round-trip formatting, so save -> load is exact.
pub fn save_csv(series: &RawSeries, path: &Path) -> Result<()> {
    series.check_rectangular()?;
    let file = std::fs::File::create(path)?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = series.sensor_names.clone();
    if series.labels.is_some() {
        header.push("label".to_string());
    }
    w.write_record(&header).map_err(csv_write_err)?;
    for t in 0..series.len() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for s in 0..series.n_sensors() {
            let v = series.values[s][t];
            rec.push(if v.is_nan() { String::new() } else { v.to_string() });
        }
        if let Some(l) = &series.labels {
            rec.push(l[t].to_string());
        }
        w.write_record(&rec).map_err(csv_write_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_write_err(e: csv::Error) -> Error {
    Error::Data(format!("csv write failed: {}", e))
}

/// Drops the first `n` timestamps (and labels). `n` must leave at least
/// one timestamp.
pub fn trim_head(series: &RawSeries, n: usize) -> Result<RawSeries> {
    series.check_rectangular()?;
    if n >= series.len() {
        return Err(Error::Contract(format!(
            "cannot trim {} of {} timestamps",
            n,
            series.len()
        )));
    }
    Ok(RawSeries {
        sensor_names: series.sensor_names.clone(),
        values: series.values.iter().map(|v| v[n..].to_vec()).collect(),
        labels: series.labels.as_ref().map(|l| l[n..].to_vec()),
    })
}

/// Median of the observed entries of a block; None when all are missing.
fn block_median(block: &[f64]) -> Option<f64> {
    let mut seen: Vec<f64> = block.iter().copied().filter(|v| !v.is_nan()).collect();
    if seen.is_empty() {
        return None;
    }
    seen.sort_by(f64::total_cmp);
    let n = seen.len();
    Some(if n % 2 == 1 {
        seen[n / 2]
    } else {
        (seen[n / 2 - 1] + seen[n / 2]) / 2.0
    })
}

/// Collapses non-overlapping blocks of `factor` timestamps to their
/// per-sensor median (missing entries excluded; an all-missing block
/// stays missing). Labels take the block majority, ties resolving to 1.
/// A trailing partial block is processed like any other.
pub fn downsample_median(series: &RawSeries, factor: usize) -> Result<RawSeries> {
    series.check_rectangular()?;
    if factor == 0 {
        return Err(Error::Contract("downsample factor must be positive".to_string()));
    }
    if factor == 1 {
        return Ok(series.clone());
    }
    let t = series.len();
    let blocks = t.div_ceil(factor);
    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(blocks); series.n_sensors()];
    for (s, row) in series.values.iter().enumerate() {
        for b in 0..blocks {
            let lo = b * factor;
            let hi = ((b + 1) * factor).min(t);
            values[s].push(block_median(&row[lo..hi]).unwrap_or(f64::NAN));
        }
    }
    let labels = series.labels.as_ref().map(|l| {
        (0..blocks)
            .map(|b| {
                let lo = b * factor;
                let hi = ((b + 1) * factor).min(t);
                let ones = l[lo..hi].iter().filter(|&&x| x == 1).count();
                u8::from(2 * ones >= hi - lo)
            })
            .collect()
    });
    Ok(RawSeries {
        sensor_names: series.sensor_names.clone(),
        values,
        labels,
    })
}

/// Replaces missing readings with the sensor's mean over observed ones.
/// A sensor with no observed values at all is unrecoverable.
pub fn impute_mean(series: &RawSeries) -> Result<RawSeries> {
    series.check_rectangular()?;
    let mut values = series.values.clone();
    for (s, row) in values.iter_mut().enumerate() {
        let observed: Vec<f64> = row.iter().copied().filter(|v| !v.is_nan()).collect();
        if observed.is_empty() {
            return Err(Error::Data(format!(
                "sensor {:?} has no observed values to impute from",
                series.sensor_names[s]
            )));
        }
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        for v in row.iter_mut() {
            if v.is_nan() {
                *v = mean;
            }
        }
    }
    Ok(RawSeries {
        sensor_names: series.sensor_names.clone(),
        values,
        labels: series.labels.clone(),
    })
}

/// Per-sensor min/max over observed values.
pub fn fit_minmax(series: &RawSeries) -> Result<NormStats> {
    series.check_rectangular()?;
    let mut min = Vec::with_capacity(series.n_sensors());
    let mut max = Vec::with_capacity(series.n_sensors());
    for (s, row) in series.values.iter().enumerate() {
        let observed: Vec<f64> = row.iter().copied().filter(|v| !v.is_nan()).collect();
        if observed.is_empty() {
            return Err(Error::Data(format!(
                "sensor {:?} has no observed values to fit scaling on",
                series.sensor_names[s]
            )));
        }
        min.push(observed.iter().copied().fold(f64::INFINITY, f64::min));
        max.push(observed.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(NormStats { min, max })
}

/// (x - min) / (max - min) per sensor, without clipping. Sensors constant
/// in training (max == min) map to 0. Missing readings stay missing.
pub fn apply_minmax(series: &RawSeries, stats: &NormStats) -> Result<RawSeries> {
    series.check_rectangular()?;
    if stats.min.len() != series.n_sensors() || stats.max.len() != series.n_sensors() {
        return Err(Error::Dimension(format!(
            "scaling stats cover {} sensors, series has {}",
            stats.min.len(),
            series.n_sensors()
        )));
    }
    let mut values = series.values.clone();
    for (s, row) in values.iter_mut().enumerate() {
        let (lo, hi) = (stats.min[s], stats.max[s]);
        let span = hi - lo;
        for v in row.iter_mut() {
            if v.is_nan() {
                continue;
            }
            *v = if span == 0.0 { 0.0 } else { (*v - lo) / span };
        }
    }
    Ok(RawSeries {
        sensor_names: series.sensor_names.clone(),
        values,
        labels: series.labels.clone(),
    })
}

/// Runs the full pipeline in its fixed order. When `stats` is given
/// (test data) scaling reuses them; otherwise they are fitted here
/// (training data) and returned.
pub fn preprocess(
    series: &RawSeries,
    options: &PreprocessOptions,
    stats: Option<&NormStats>,
) -> Result<(RawSeries, NormStats)> {
    let trimmed = trim_head(series, options.trim_head)?;
    let coarse = downsample_median(&trimmed, options.downsample)?;
    let filled = impute_mean(&coarse)?;
    let stats = match stats {
        Some(s) => s.clone(),
        None => fit_minmax(&filled)?,
    };
    let scaled = apply_minmax(&filled, &stats)?;
    Ok((scaled, stats))
}

/// Cuts the series into one-step-ahead (window, target) pairs. The series
/// must already be imputed; missing values here are a contract violation.
pub fn make_windows(series: &RawSeries, w: usize) -> Result<WindowedDataset> {
    series.check_rectangular()?;
    let t = series.len();
    let n = series.n_sensors();
    if w == 0 {
        return Err(Error::Contract("window length must be positive".to_string()));
    }
    if w >= t {
        return Err(Error::Contract(format!(
            "window length {} needs more than {} timestamps",
            w, t
        )));
    }
    if series
        .values
        .iter()
        .any(|row| row.iter().any(|v| v.is_nan()))
    {
        return Err(Error::Contract(
            "windowing requires imputed data without missing values".to_string(),
        ));
    }
    let mut inputs = Vec::with_capacity(t - w);
    let mut targets = Vec::with_capacity(t - w);
    let mut timestamps = Vec::with_capacity(t - w);
    for end in w..t {
        let mut data = Vec::with_capacity(n * w);
        for row in &series.values {
            data.extend_from_slice(&row[end - w..end]);
        }
        inputs.push(Tensor::new(vec![n, w], data)?);
        targets.push(series.values.iter().map(|row| row[end]).collect());
        timestamps.push(end);
    }
    let labels = series.labels.as_ref().map(|l| l[w..].to_vec());
    Ok(WindowedDataset {
        window: w,
        inputs,
        targets,
        labels,
        timestamps,
    })
}

/// Chronological split: the last ceil(len * fraction) windows become the
/// validation side. Both sides must stay non-empty.
pub fn split_train_val(ds: &WindowedDataset, fraction: f64) -> Result<(WindowedDataset, WindowedDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Contract(format!(
            "validation fraction must be in (0, 1), got {}",
            fraction
        )));
    }
    let count = ds.len();
    let n_val = (count as f64 * fraction).ceil() as usize;
    if n_val == 0 || n_val >= count {
        return Err(Error::Contract(format!(
            "split of {} windows at fraction {} leaves an empty side",
            count, fraction
        )));
    }
    let cut = count - n_val;
    let slice = |lo: usize, hi: usize| WindowedDataset {
        window: ds.window,
        inputs: ds.inputs[lo..hi].to_vec(),
        targets: ds.targets[lo..hi].to_vec(),
        labels: ds.labels.as_ref().map(|l| l[lo..hi].to_vec()),
        timestamps: ds.timestamps[lo..hi].to_vec(),
    };
    Ok((slice(0, cut), slice(cut, count)))
}

pub fn write_sidecar(meta: &SidecarMeta, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::Data(format!("sidecar serialization failed: {}", e)))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<SidecarMeta> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: format!("sidecar: {}", e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: Vec<Vec<f64>>, labels: Option<Vec<u8>>) -> RawSeries {
        RawSeries {
            sensor_names: (0..values.len()).map(|i| format!("s{}", i)).collect(),
            values,
            labels,
        }
    }

    #[test]
    fn csv_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let orig = series(
            vec![
                vec![1.5, f64::NAN, -0.25],
                vec![0.1, 2.0, 1e-17],
            ],
            Some(vec![0, 1, 0]),
        );
        save_csv(&orig, &path).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back.sensor_names, orig.sensor_names);
        assert_eq!(back.labels, orig.labels);
        for s in 0..2 {
            for t in 0..3 {
                let (a, b) = (orig.values[s][t], back.values[s][t]);
                assert!(a.is_nan() == b.is_nan());
                if !a.is_nan() {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    #[test]
    fn load_rejects_ragged_rows_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b\n1,2\n3\n").unwrap();
        match load_csv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn load_rejects_non_numeric_cells_and_bad_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b\n1,x\n").unwrap();
        match load_csv(&path) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("\"b\""), "{}", msg);
            }
            other => panic!("expected parse error, got {:?}", other.map(|_| ())),
        }

        std::fs::write(&path, "a,label\n1,2\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn load_rejects_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_cells_become_missing_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "a,b\n1,\n,2\n").unwrap();
        let s = load_csv(&path).unwrap();
        assert!(!s.is_missing(0, 0));
        assert!(s.is_missing(1, 0));
        assert!(s.is_missing(0, 1));
        assert!(!s.is_missing(1, 1));
    }

    #[test]
    fn trim_drops_prefix_and_keeps_labels_aligned() {
        let s = series(
            vec![vec![0.0, 1.0, 2.0, 3.0], vec![10.0, 11.0, 12.0, 13.0]],
            Some(vec![1, 0, 0, 1]),
        );
        let t = trim_head(&s, 2).unwrap();
        assert_eq!(t.values[0], vec![2.0, 3.0]);
        assert_eq!(t.values[1], vec![12.0, 13.0]);
        assert_eq!(t.labels, Some(vec![0, 1]));

        let same = trim_head(&s, 0).unwrap();
        assert_eq!(same, s);
        assert!(matches!(trim_head(&s, 4), Err(Error::Contract(_))));
    }

    #[test]
    fn downsample_median_resists_spikes_and_handles_partial_blocks() {
        let s = series(
            vec![vec![1.0, 1.0, 9.0, 2.0, 4.0]],
            Some(vec![0, 0, 1, 1, 1]),
        );
        let d = downsample_median(&s, 3).unwrap();
        // Block [1,1,9] -> 1, trailing partial block [2,4] -> 3.
        assert_eq!(d.values[0], vec![1.0, 3.0]);
        // Labels: [0,0,1] majority 0; [1,1] majority 1.
        assert_eq!(d.labels, Some(vec![0, 1]));
    }

    #[test]
    fn downsample_label_ties_resolve_to_anomalous() {
        let s = series(vec![vec![0.0, 0.0, 0.0, 0.0]], Some(vec![0, 1, 1, 0]));
        let d = downsample_median(&s, 2).unwrap();
        assert_eq!(d.labels, Some(vec![1, 1]));
    }

    #[test]
    fn downsample_factor_one_is_identity_and_zero_rejected() {
        let s = series(vec![vec![1.0, 2.0]], None);
        assert_eq!(downsample_median(&s, 1).unwrap(), s);
        assert!(matches!(downsample_median(&s, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn downsample_keeps_all_missing_blocks_missing() {
        let s = series(vec![vec![f64::NAN, f64::NAN, 5.0, f64::NAN]], None);
        let d = downsample_median(&s, 2).unwrap();
        assert!(d.values[0][0].is_nan());
        assert_eq!(d.values[0][1], 5.0);
    }

    #[test]
    fn impute_fills_with_observed_mean_and_reports_dead_sensors() {
        let s = series(vec![vec![1.0, f64::NAN, 3.0]], None);
        let filled = impute_mean(&s).unwrap();
        assert_eq!(filled.values[0], vec![1.0, 2.0, 3.0]);

        let clean = series(vec![vec![1.0, 2.0]], None);
        assert_eq!(impute_mean(&clean).unwrap(), clean);

        let dead = series(vec![vec![f64::NAN, f64::NAN]], None);
        match impute_mean(&dead) {
            Err(Error::Data(msg)) => assert!(msg.contains("s0")),
            other => panic!("expected data error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn minmax_scales_to_unit_range_without_clipping() {
        let train = series(vec![vec![2.0, 4.0, 6.0], vec![5.0, 5.0, 5.0]], None);
        let stats = fit_minmax(&train).unwrap();
        let scaled = apply_minmax(&train, &stats).unwrap();
        assert_eq!(scaled.values[0], vec![0.0, 0.5, 1.0]);
        // Constant sensor maps to zero everywhere.
        assert_eq!(scaled.values[1], vec![0.0, 0.0, 0.0]);

        let test = series(vec![vec![8.0], vec![7.0]], None);
        let scaled_test = apply_minmax(&test, &stats).unwrap();
        assert!(scaled_test.values[0][0] > 1.0);
    }

    #[test]
    fn minmax_fit_ignores_missing_values() {
        let s = series(vec![vec![1.0, f64::NAN, 3.0]], None);
        let stats = fit_minmax(&s).unwrap();
        assert_eq!((stats.min[0], stats.max[0]), (1.0, 3.0));
    }

    #[test]
    fn windows_reconstruct_original_columns_exactly() {
        let s = series(
            vec![
                (0..10).map(|t| t as f64).collect(),
                (0..10).map(|t| 100.0 + t as f64).collect(),
            ],
            Some((0..10).map(|t| u8::from(t >= 8)).collect()),
        );
        let w = 3;
        let ds = make_windows(&s, w).unwrap();
        assert_eq!(ds.len(), 10 - w);
        for (i, t) in ds.timestamps.iter().copied().enumerate() {
            assert_eq!(t, w + i);
            // Slice oracle: input columns are exactly the original slices.
            for sensor in 0..2 {
                let got = ds.inputs[i].row(sensor).unwrap();
                assert_eq!(got, &s.values[sensor][t - w..t]);
            }
            assert_eq!(ds.targets[i][0], s.values[0][t]);
            assert_eq!(ds.targets[i][1], s.values[1][t]);
            assert_eq!(ds.labels.as_ref().unwrap()[i], s.labels.as_ref().unwrap()[t]);
        }
    }

    #[test]
    fn windows_validate_length_and_missing_values() {
        let s = series(vec![vec![1.0, 2.0, 3.0]], None);
        assert!(matches!(make_windows(&s, 0), Err(Error::Contract(_))));
        assert!(matches!(make_windows(&s, 3), Err(Error::Contract(_))));
        let holes = series(vec![vec![1.0, f64::NAN, 3.0]], None);
        assert!(matches!(make_windows(&holes, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn split_takes_ceil_from_the_end() {
        let s = series(vec![(0..13).map(|t| t as f64).collect()], None);
        let ds = make_windows(&s, 3).unwrap();
        assert_eq!(ds.len(), 10);
        let (train, val) = split_train_val(&ds, 0.25).unwrap();
        assert_eq!((train.len(), val.len()), (7, 3));
        // Chronological: every validation timestamp is after training.
        let t_max = train.timestamps.iter().max().unwrap();
        assert!(val.timestamps.iter().all(|t| t > t_max));

        assert!(matches!(split_train_val(&ds, 0.0), Err(Error::Contract(_))));
        assert!(matches!(split_train_val(&ds, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn pipeline_applies_stages_in_fixed_order() {
        // trim 1 -> [2,4,9,3] ; downsample 2 -> [3,6] wait: blocks [2,4] -> 3, [9,3] -> 6.
        let s = series(vec![vec![7.0, 2.0, 4.0, 9.0, 3.0]], None);
        let opts = PreprocessOptions {
            trim_head: 1,
            downsample: 2,
        };
        let (out, stats) = preprocess(&s, &opts, None).unwrap();
        assert_eq!((stats.min[0], stats.max[0]), (3.0, 6.0));
        assert_eq!(out.values[0], vec![0.0, 1.0]);

        // Reusing fitted stats must not refit.
        let test = series(vec![vec![0.0, 12.0, 12.0, 12.0, 12.0]], None);
        let (out2, stats2) = preprocess(&test, &opts, Some(&stats)).unwrap();
        assert_eq!(stats2, stats);
        assert_eq!(out2.values[0], vec![3.0, 3.0]);
    }

    #[test]
    fn sidecar_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("meta.json");
        let meta = SidecarMeta {
            options: PreprocessOptions {
                trim_head: 4,
                downsample: 2,
            },
            sensor_names: vec!["a".into(), "b".into()],
            stats: NormStats {
                min: vec![0.5, -1.0],
                max: vec![2.5, 3.0],
            },
        };
        write_sidecar(&meta, &path).unwrap();
        assert_eq!(read_sidecar(&path).unwrap(), meta);
    }
}
