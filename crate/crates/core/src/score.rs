//! Turning prediction errors into anomaly decisions.
//!
//! Per-sensor absolute errors are centered and scaled with median/IQR
//! statistics fitted on validation-period errors, so one noisy sensor
//! cannot dominate the rest. The maximum normalized deviation across
//! sensors is the anomaly score at each timestep; a trailing moving
//! average smooths it, and a threshold picked by grid search over best F1
//! makes the call. Scores are compared per timestep: no point adjustment,
//! no credit for detecting a segment late.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sensor center (median) and scale (IQR, floored away from zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustStats {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Everything produced while scoring a test stretch.
#[derive(Debug, Clone)]
pub struct ScoreSeries {
    /// |prediction - observation| per timestep, per sensor.
    pub err: Vec<Vec<f64>>,
    /// Errors after robust normalization.
    pub normalized: Vec<Vec<f64>>,
    /// Max normalized deviation per timestep.
    pub agg: Vec<f64>,
    /// Sensor attaining the max (lowest index on ties).
    pub argmax: Vec<usize>,
    /// Trailing moving average of `agg`.
    pub smooth: Vec<f64>,
}

/// Outcome of thresholding a score series against labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    /// Set when the labels could not support a meaningful search.
    pub warning: Option<String>,
}

/// Elementwise |pred - truth| over time-major rows.
pub fn abs_error(preds: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if preds.len() != truths.len() {
        return Err(Error::Dimension(format!(
            "{} prediction rows vs {} observation rows",
            preds.len(),
            truths.len()
        )));
    }
    preds
        .iter()
        .zip(truths)
        .enumerate()
        .map(|(t, (p, o))| {
            if p.len() != o.len() {
                return Err(Error::Dimension(format!(
                    "row {}: {} predictions vs {} observations",
                    t,
                    p.len(),
                    o.len()
                )));
            }
            Ok(p.iter().zip(o).map(|(a, b)| (a - b).abs()).collect())
        })
        .collect()
}

/// Linearly interpolated quantile of already sorted values.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fits per-sensor median and IQR over validation-period errors
/// (time-major rows). IQRs are floored at
/// max(0.01 * median of all sensor IQRs, 1e-8) so a sensor that was
/// near-perfect in validation cannot blow up its normalized deviations.
pub fn fit_robust_stats(errors: &[Vec<f64>]) -> Result<RobustStats> {
    if errors.len() < 4 {
        return Err(Error::Contract(format!(
            "robust statistics need at least 4 timesteps, got {}",
            errors.len()
        )));
    }
    let n = errors[0].len();
    if n == 0 || errors.iter().any(|row| row.len() != n) {
        return Err(Error::Dimension(
            "error rows must be non-empty and equally sized".to_string(),
        ));
    }
    let mut center = Vec::with_capacity(n);
    let mut iqr = Vec::with_capacity(n);
    for s in 0..n {
        let mut col: Vec<f64> = errors.iter().map(|row| row[s]).collect();
        col.sort_by(f64::total_cmp);
        center.push(quantile_sorted(&col, 0.5));
        iqr.push(quantile_sorted(&col, 0.75) - quantile_sorted(&col, 0.25));
    }
    let mut iqrs_sorted = iqr.clone();
    iqrs_sorted.sort_by(f64::total_cmp);
    let floor = (0.01 * quantile_sorted(&iqrs_sorted, 0.5)).max(1e-8);
    let scale = iqr.iter().map(|&v| v.max(floor)).collect();
    Ok(RobustStats { center, scale })
}

/// (err - center) / scale per sensor.
pub fn normalize(errors: &[Vec<f64>], stats: &RobustStats) -> Result<Vec<Vec<f64>>> {
    errors
        .iter()
        .enumerate()
        .map(|(t, row)| {
            if row.len() != stats.center.len() {
                return Err(Error::Dimension(format!(
                    "row {} has {} sensors, stats cover {}",
                    t,
                    row.len(),
                    stats.center.len()
                )));
            }
            Ok(row
                .iter()
                .zip(stats.center.iter().zip(&stats.scale))
                .map(|(e, (c, s))| (e - c) / s)
                .collect())
        })
        .collect()
}

/// Max deviation per timestep and the sensor attaining it; ties pick the
/// lowest sensor index.
pub fn aggregate_max(normalized: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut agg = Vec::with_capacity(normalized.len());
    let mut arg = Vec::with_capacity(normalized.len());
    for (t, row) in normalized.iter().enumerate() {
        if row.is_empty() {
            return Err(Error::Contract(format!("empty deviation row at {}", t)));
        }
        let mut best = row[0];
        let mut best_i = 0;
        for (i, &v) in row.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                best_i = i;
            }
        }
        agg.push(best);
        arg.push(best_i);
    }
    Ok((agg, arg))
}

/// Trailing moving average with prefix warm-up: position t averages the
/// last min(m, t+1) values.
pub fn sma(series: &[f64], m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::Contract("moving-average window must be positive".to_string()));
    }
    let mut out = Vec::with_capacity(series.len());
    for t in 0..series.len() {
        let lo = (t + 1).saturating_sub(m);
        let len = (t + 1 - lo) as f64;
        out.push(series[lo..=t].iter().sum::<f64>() / len);
    }
    Ok(out)
}

/// Precision/recall/F1 with the 0/0 -> 0 convention.
pub fn metrics(pred: &[u8], truth: &[u8]) -> Result<DetectionReport> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.iter().chain(truth).any(|&v| v > 1) {
        return Err(Error::Contract("labels and predictions must be 0 or 1".to_string()));
    }
    let mut tp = 0;
    let mut fp = 0;
    let mut fne = 0;
    let mut tn = 0;
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fne += 1,
            _ => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fne);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(DetectionReport {
        threshold: f64::NAN,
        precision,
        recall,
        f1,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fne,
        true_negatives: tn,
        warning: None,
    })
}

/// Flags timesteps whose score strictly exceeds the threshold.
pub fn apply_threshold(scores: &[f64], threshold: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s > threshold)).collect()
}

/// Scans thresholds for the best F1: an even grid over [min, max], plus
/// every distinct score when there are at most 10 * grid_size of them
/// (which makes the search exhaustive), plus one value below every score
/// so the all-flagged labelling is reachable. Ties return the lowest
/// threshold.
pub fn grid_search_threshold(
    scores: &[f64],
    labels: &[u8],
    grid_size: usize,
) -> Result<DetectionReport> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Contract("threshold search over an empty series".to_string()));
    }
    if grid_size < 2 {
        return Err(Error::Contract(format!(
            "grid size must be at least 2, got {}",
            grid_size
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Training("non-finite anomaly scores".to_string()));
    }

    let warning = if labels.iter().all(|&l| l == 0) {
        Some("labels contain no anomalous timesteps; F1 is degenerate".to_string())
    } else if labels.iter().all(|&l| l == 1) {
        Some("labels contain no normal timesteps; F1 is degenerate".to_string())
    } else {
        None
    };

    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut candidates: Vec<f64> = (0..grid_size)
        .map(|i| lo + (hi - lo) * i as f64 / (grid_size - 1) as f64)
        .collect();
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() <= 10 * grid_size {
        candidates.extend_from_slice(&distinct);
    }
    // A threshold strictly under the minimum flags every timestep; the
    // grid bottoms out at min(scores), which with a strict comparison
    // always leaves the minimum unflagged.
    candidates.push(lo - 1.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let mut best: Option<DetectionReport> = None;
    for &th in &candidates {
        let pred = apply_threshold(scores, th);
        let mut report = metrics(&pred, labels)?;
        report.threshold = th;
        // Ascending candidates and a strict comparison keep the lowest
        // threshold among F1 ties.
        if best.as_ref().map(|b| report.f1 > b.f1).unwrap_or(true) {
            best = Some(report);
        }
    }
    let mut report = best.expect("candidates are never empty");
    report.warning = warning;
    Ok(report)
}

/// Full scoring pass: errors, robust normalization, max-aggregation,
/// smoothing.
pub fn score_series(
    preds: &[Vec<f64>],
    truths: &[Vec<f64>],
    stats: &RobustStats,
    sma_window: usize,
) -> Result<ScoreSeries> {
    let err = abs_error(preds, truths)?;
    let normalized = normalize(&err, stats)?;
    let (agg, argmax) = aggregate_max(&normalized)?;
    let smooth = sma(&agg, sma_window)?;
    Ok(ScoreSeries {
        err,
        normalized,
        agg,
        argmax,
        smooth,
    })
}

/// Writes one row per scored timestep: raw and smoothed score, the
/// highest-deviation sensor, and optionally each sensor's normalized
/// deviation.
pub fn export_scores(
    series: &ScoreSeries,
    timestamps: &[usize],
    sensor_names: &[String],
    per_sensor: bool,
    path: &Path,
) -> Result<()> {
    if timestamps.len() != series.agg.len() {
        return Err(Error::Dimension(format!(
            "{} timestamps for {} scored steps",
            timestamps.len(),
            series.agg.len()
        )));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec![
        "time".to_string(),
        "score".to_string(),
        "score_smooth".to_string(),
        "argmax_sensor".to_string(),
    ];
    if per_sensor {
        header.extend(sensor_names.iter().map(|n| format!("dev_{}", n)));
    }
    writeln!(out, "{}", header.join(","))?;
    for (t, &ts) in timestamps.iter().enumerate() {
        let mut row = vec![
            ts.to_string(),
            series.agg[t].to_string(),
            series.smooth[t].to_string(),
            sensor_names[series.argmax[t]].clone(),
        ];
        if per_sensor {
            row.extend(series.normalized[t].iter().map(|v| v.to_string()));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
