//! Seeded synthetic datasets with known structure.
//!
//! Base sensors follow an AR(1) process pushed by a sinusoid; driven
//! sensors are lagged linear combinations of their drivers plus noise.
//! The dependency edges are returned as ground truth, so tests can ask
//! whether the learned graph and the relevance scores rediscover them.
//! Anomalies are injected only into the test stretch: an offset shifts
//! values, a freeze holds the last pre-segment value, and a swap makes
//! sensors report each other's measurements.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::RawSeries;
use crate::error::{Error, Result};

/// One planted dependency: `driven[t] += weight * driver[t - lag]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthEdge {
    pub driver: usize,
    pub driven: usize,
    pub lag: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InjectionKind {
    /// Adds `magnitude` to the affected sensors.
    Offset,
    /// Sensors report the value they had just before the segment.
    Freeze,
    /// Sensors report each other's values (rotated); a single affected
    /// sensor reports its next neighbor `(s + 1) % n_sensors`.
    Swap,
}

fn default_magnitude() -> f64 {
    1.0
}

/// One injected anomaly segment, in test-stream coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub start: usize,
    pub len: usize,
    pub sensors: Vec<usize>,
    pub kind: InjectionKind,
    /// Offset size; unused by the other kinds.
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_sensors: usize,
    pub t_train: usize,
    pub t_test: usize,
    pub edges: Vec<SynthEdge>,
    pub noise_sigma: f64,
    pub anomalies: Vec<Anomaly>,
    pub seed: u64,
}

impl SynthSpec {
    pub fn from_json_file(path: &Path) -> Result<SynthSpec> {
        let text = std::fs::read_to_string(path)?;
        let spec: SynthSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: 0,
            msg: format!("unreadable generator spec {}: {}", path.display(), e),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sensors < 2 {
            return Err(Error::Contract("need at least 2 sensors".to_string()));
        }
        if self.t_train == 0 || self.t_test == 0 {
            return Err(Error::Contract("t_train and t_test must be positive".to_string()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Contract("noise_sigma must be non-negative".to_string()));
        }
        for e in &self.edges {
            if e.driver >= self.n_sensors || e.driven >= self.n_sensors {
                return Err(Error::Contract(format!(
                    "edge {} -> {} references a missing sensor",
                    e.driver, e.driven
                )));
            }
            if e.lag == 0 {
                return Err(Error::Contract(format!(
                    "edge {} -> {} needs lag >= 1",
                    e.driver, e.driven
                )));
            }
            if !e.weight.is_finite() {
                return Err(Error::Contract("edge weights must be finite".to_string()));
            }
        }
        self.check_acyclic()?;
        for (i, a) in self.anomalies.iter().enumerate() {
            if a.len == 0 {
                return Err(Error::Contract(format!("anomaly {} has zero length", i)));
            }
            if a.start + a.len > self.t_test {
                return Err(Error::Contract(format!(
                    "anomaly {} runs to {} but the test stretch has {} steps",
                    i,
                    a.start + a.len,
                    self.t_test
                )));
            }
            if a.sensors.is_empty() || a.sensors.iter().any(|&s| s >= self.n_sensors) {
                return Err(Error::Contract(format!(
                    "anomaly {} names invalid sensors",
                    i
                )));
            }
            if !a.magnitude.is_finite() {
                return Err(Error::Contract(format!("anomaly {} magnitude not finite", i)));
            }
        }
        Ok(())
    }

    /// Kahn's algorithm over driver -> driven edges.
    fn check_acyclic(&self) -> Result<()> {
        let n = self.n_sensors;
        let mut out_edges = vec![Vec::new(); n];
        let mut in_degree = vec![0usize; n];
        for e in &self.edges {
            out_edges[e.driver].push(e.driven);
            in_degree[e.driven] += 1;
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| in_degree[i] == 0).collect();
        let mut seen = 0;
        while let Some(node) = queue.pop() {
            seen += 1;
            for &next in &out_edges[node] {
                in_degree[next] -= 1;
                if in_degree[next] == 0 {
                    queue.push(next);
                }
            }
        }
        if seen != n {
            return Err(Error::Contract(
                "dependency edges contain a cycle".to_string(),
            ));
        }
        Ok(())
    }
}

/// Generates one continuous stream, splits it into train and test, and
/// injects the anomalies into the test part only. Returns the two series
/// and the planted edges.
pub fn generate(spec: &SynthSpec) -> Result<(RawSeries, RawSeries, Vec<SynthEdge>)> {
    spec.validate()?;
    let n = spec.n_sensors;
    let total = spec.t_train + spec.t_test;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise_dist = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| Error::Contract(format!("invalid noise level: {}", e)))?;

    // Per-sensor oscillator parameters, then the full noise matrix, drawn
    // in a fixed order so the stream is independent of the anomaly list.
    // Each base sensor gets its own AR coefficient and sinusoid weight:
    // distinct dynamics force next-step prediction to be sensor-specific,
    // and a copied (driven) sensor shares its driver's dynamics.
    let params: Vec<[f64; 4]> = (0..n)
        .map(|_| {
            [
                rng.random_range(20.0..60.0),                       // period
                rng.random_range(0.0..std::f64::consts::TAU),       // phase
                rng.random_range(0.15..0.95),                       // AR coefficient
                rng.random_range(0.1..0.5),                         // sinusoid weight
            ]
        })
        .collect();
    let mut noise = vec![vec![0.0; total]; n];
    for t in 0..total {
        for sensor in noise.iter_mut() {
            sensor[t] = noise_dist.sample(&mut rng);
        }
    }

    let driven: Vec<bool> = {
        let mut d = vec![false; n];
        for e in &spec.edges {
            d[e.driven] = true;
        }
        d
    };

    // Lags are >= 1, so filling time-major only ever reads past columns.
    let mut values = vec![vec![0.0; total]; n];
    for t in 0..total {
        for s in 0..n {
            values[s][t] = if driven[s] {
                let combo: f64 = spec
                    .edges
                    .iter()
                    .filter(|e| e.driven == s)
                    .map(|e| e.weight * values[e.driver][t.saturating_sub(e.lag)])
                    .sum();
                combo + noise[s][t]
            } else {
                let [period, phase, ar, sin_w] = params[s];
                let prev = if t == 0 { 0.0 } else { values[s][t - 1] };
                ar * prev
                    + sin_w * (std::f64::consts::TAU * t as f64 / period + phase).sin()
                    + noise[s][t]
            };
        }
    }

    let names: Vec<String> = (0..n).map(|i| format!("s{}", i)).collect();
    let train = RawSeries {
        sensor_names: names.clone(),
        values: values.iter().map(|v| v[..spec.t_train].to_vec()).collect(),
        labels: None,
    };

    let mut test_values: Vec<Vec<f64>> =
        values.iter().map(|v| v[spec.t_train..].to_vec()).collect();
    let mut labels = vec![0u8; spec.t_test];
    for a in &spec.anomalies {
        match a.kind {
            InjectionKind::Offset => {
                for t in a.start..a.start + a.len {
                    for &s in &a.sensors {
                        test_values[s][t] += a.magnitude;
                    }
                }
            }
            InjectionKind::Freeze => {
                // Value just before the segment; for start 0 that is the
                // last training step, still inside the stream.
                let held: Vec<f64> = a
                    .sensors
                    .iter()
                    .map(|&s| {
                        if a.start == 0 {
                            values[s][spec.t_train - 1]
                        } else {
                            test_values[s][a.start - 1]
                        }
                    })
                    .collect();
                for t in a.start..a.start + a.len {
                    for (&s, &h) in a.sensors.iter().zip(&held) {
                        test_values[s][t] = h;
                    }
                }
            }
            InjectionKind::Swap => {
                let group: Vec<usize> = if a.sensors.len() == 1 {
                    vec![a.sensors[0], (a.sensors[0] + 1) % n]
                } else {
                    a.sensors.clone()
                };
                for t in a.start..a.start + a.len {
                    let snapshot: Vec<f64> = group.iter().map(|&s| test_values[s][t]).collect();
                    for (i, &s) in group.iter().enumerate() {
                        test_values[s][t] = snapshot[(i + 1) % group.len()];
                    }
                }
            }
        }
        for t in a.start..a.start + a.len {
            labels[t] = 1;
        }
    }

    let test = RawSeries {
        sensor_names: names,
        values: test_values,
        labels: Some(labels),
    };
    Ok((train, test, spec.edges.clone()))
}

/// Writes train.csv, test.csv, and truth_edges.txt under `dir`.
pub fn write_dataset(spec: &SynthSpec, dir: &Path) -> Result<()> {
    let (train, test, edges) = generate(spec)?;
    std::fs::create_dir_all(dir)?;
    crate::data::save_csv(&train, &dir.join("train.csv"))?;
    crate::data::save_csv(&test, &dir.join("test.csv"))?;
    let mut lines = String::from("# driven driver weight lag\n");
    for e in &edges {
        lines.push_str(&format!("{} {} {} {}\n", e.driven, e.driver, e.weight, e.lag));
    }
    std::fs::write(dir.join("truth_edges.txt"), lines)?;
    Ok(())
}
