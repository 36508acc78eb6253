//! Backward relevance propagation for anomaly localization.
//!
//! Starting from a 1.0 seed at one sensor's prediction, relevance flows
//! back through the readout, the message aggregation, and each live
//! edge's update network, landing on the post-encoder node
//! representations. Because the model conditions every layer on node
//! embeddings, the relevance mass captured by embedding inputs is folded
//! back into the corresponding node's feature relevance with the two
//! reassignment rules, so no mass silently disappears into the lookup
//! table. Per-node scores keep their sign: negative relevance marks
//! contributions that pulled the prediction down.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

/// Stabilizer added to every propagation denominator.
pub const LRP_EPSILON: f64 = 1e-6;

fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// One directed influence with its signed relevance weight.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRelevance {
    pub target: usize,
    pub source: usize,
    pub weight: f64,
}

/// Per-sensor relevance for one explained prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap {
    pub target_sensor: usize,
    pub timestamp: usize,
    /// Signed relevance per sensor, summed over its post-encoder
    /// representation after both reassignments.
    pub node_relevance: Vec<f64>,
    /// One entry per graph edge in adjacency order; edges not feeding the
    /// explained sensor carry weight zero.
    pub edges: Vec<EdgeRelevance>,
    /// True when a zero-sum feature relevance forced the uniform
    /// fallback during a reassignment.
    pub uniform_fallback: bool,
}

/// Redistributes output relevance of one linear layer onto its inputs:
/// R_in[j] = sum_k input[j] * w[j][k] / (s[k] + eps * sign(s[k])) * R_out[k]
/// where s[k] is the bias-free weighted sum. Bias stays out of the
/// denominator so the layer leaks only the epsilon share.
pub fn lrp_linear(input: &[f64], weight: &Tensor, r_out: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    let (d_in, d_out) = weight.dims2()?;
    if input.len() != d_in {
        return Err(Error::Dimension(format!(
            "{} inputs for a {}x{} layer",
            input.len(),
            d_in,
            d_out
        )));
    }
    if r_out.len() != d_out {
        return Err(Error::Dimension(format!(
            "{} output relevances for a {}x{} layer",
            r_out.len(),
            d_in,
            d_out
        )));
    }
    let w = weight.data();
    let mut factor = vec![0.0; d_out];
    for k in 0..d_out {
        let s: f64 = (0..d_in).map(|j| input[j] * w[j * d_out + k]).sum();
        let denom = s + epsilon * sign(s);
        factor[k] = if denom == 0.0 { 0.0 } else { r_out[k] / denom };
    }
    let mut r_in = vec![0.0; d_in];
    for (j, r) in r_in.iter_mut().enumerate() {
        *r = (0..d_out).map(|k| input[j] * w[j * d_out + k] * factor[k]).sum();
    }
    Ok(r_in)
}

/// Splits node-state relevance across the messages that summed into it,
/// proportionally to each message's share per component.
pub fn split_by_contribution(
    messages: &[Vec<f64>],
    total_pre: &[f64],
    r_state: &[f64],
    epsilon: f64,
) -> Result<Vec<Vec<f64>>> {
    let d = total_pre.len();
    if r_state.len() != d || messages.iter().any(|m| m.len() != d) {
        return Err(Error::Dimension(
            "message, sum, and relevance widths disagree".to_string(),
        ));
    }
    let mut out = Vec::with_capacity(messages.len());
    for msg in messages {
        let mut r = vec![0.0; d];
        for c in 0..d {
            let denom = total_pre[c] + epsilon * sign(total_pre[c]);
            if denom != 0.0 {
                r[c] = r_state[c] * msg[c] / denom;
            }
        }
        out.push(r);
    }
    Ok(out)
}

/// Folds the readout's embedding relevance mass back into the node-state
/// relevance: R̂ = (sum(R_v) / sum(R_x) + 1) * R_x. Conserves
/// sum(R̂) = sum(R_x) + sum(R_v). A zero feature sum falls back to
/// spreading the embedding mass uniformly; the bool reports that.
pub fn reassign_readout(r_x: &[f64], r_v: &[f64]) -> (Vec<f64>, bool) {
    let sx: f64 = r_x.iter().sum();
    let sv: f64 = r_v.iter().sum();
    if sx != 0.0 {
        let scale = sv / sx + 1.0;
        (r_x.iter().map(|r| r * scale).collect(), false)
    } else if sv == 0.0 {
        (r_x.to_vec(), false)
    } else {
        let share = sv / r_x.len() as f64;
        (r_x.iter().map(|r| r + share).collect(), true)
    }
}

/// Folds a node's edge-embedding relevance mass, normalized by its
/// closed neighborhood size, into its feature relevance:
/// R̂ = (mass / degree / sum(R_x) + 1) * R_x. Conserves
/// sum(R̂) = sum(R_x) + mass / degree.
pub fn reassign_ecnum(r_x: &[f64], edge_mass: f64, degree: usize) -> Result<(Vec<f64>, bool)> {
    if degree == 0 {
        return Err(Error::Contract(
            "embedding reassignment needs a positive neighborhood size".to_string(),
        ));
    }
    let m = edge_mass / degree as f64;
    let sx: f64 = r_x.iter().sum();
    if sx != 0.0 {
        let scale = m / sx + 1.0;
        Ok((r_x.iter().map(|r| r * scale).collect(), false))
    } else if m == 0.0 {
        Ok((r_x.to_vec(), false))
    } else {
        let share = m / r_x.len() as f64;
        Ok((r_x.iter().map(|r| r + share).collect(), true))
    }
}

/// Explains one prediction: walks relevance from the target sensor's
/// output back to every sensor's post-encoder representation and sums it
/// per node. Only edges feeding the target (plus its self-loop) carry
/// relevance; everything else is exactly zero.
pub fn explain_sensor(
    model: &Model,
    window: &Tensor,
    target: usize,
    timestamp: usize,
) -> Result<RelevanceMap> {
    let n = model.n_sensors();
    if target >= n {
        return Err(Error::Index(format!(
            "sensor {} out of range for {} sensors",
            target, n
        )));
    }
    let cfg = model.config();
    let (d_f, d_e) = (cfg.hidden_dim, cfg.embed_dim);
    let adjacency = model.adjacency()?;
    let trace = model.trace(std::slice::from_ref(window), &adjacency)?;
    let store = model.store();
    let tape = &trace.tape;
    let row = |data: &[f64], width: usize, r: usize| data[r * width..(r + 1) * width].to_vec();

    // Readout walk for the target row: projection, then hidden layers in
    // reverse. Inputs of layer l live in readout_inputs[l].
    let (proj_w, _) = model.readout_proj_ids();
    let mut r = lrp_linear(
        &row(tape.data(trace.proj_input), d_f, target),
        store.value(proj_w),
        &[1.0],
        LRP_EPSILON,
    )?;
    for (l, &(w_id, _)) in model.readout_layer_ids().iter().enumerate().rev() {
        let w = store.value(w_id);
        let (d_in, _) = w.dims2()?;
        let input = row(tape.data(trace.readout_inputs[l]), d_in, target);
        r = lrp_linear(&input, w, &r, LRP_EPSILON)?;
    }
    let (r_state, mut fallback) = reassign_readout(&r[..d_f], &r[d_f..]);

    // Aggregation: distribute node-state relevance across the messages
    // that fed the target's sum.
    let live: Vec<usize> = (0..trace.edge_targets.len())
        .filter(|&e| trace.edge_targets[e] == target)
        .collect();
    let message_data = tape.data(trace.messages);
    let msgs: Vec<Vec<f64>> = live.iter().map(|&e| row(message_data, d_f, e)).collect();
    let total_pre = row(tape.data(trace.agg_pre), d_f, target);
    let per_edge = split_by_contribution(&msgs, &total_pre, &r_state, LRP_EPSILON)?;

    // Per live edge: back through the update network to the conditioned
    // concat [z_source | v_target | v_source].
    let mut feature_rel = vec![vec![0.0; d_f]; n];
    let mut embed_mass = vec![0.0; n];
    let mut edge_totals: Vec<(usize, f64)> = Vec::new(); // (source, message mass)
    for (&e, r_msg) in live.iter().zip(&per_edge) {
        let source = trace.edge_sources[e];
        edge_totals.push((source, r_msg.iter().sum()));
        let mut r = r_msg.clone();
        for (l, &(w_id, _)) in model.update_layer_ids().iter().enumerate().rev() {
            let w = store.value(w_id);
            let (d_in, _) = w.dims2()?;
            let input = row(tape.data(trace.update_inputs[l]), d_in, e);
            r = lrp_linear(&input, w, &r, LRP_EPSILON)?;
        }
        for (acc, v) in feature_rel[source].iter_mut().zip(&r[..d_f]) {
            *acc += v;
        }
        embed_mass[target] += r[d_f..d_f + d_e].iter().sum::<f64>();
        embed_mass[source] += r[d_f + d_e..].iter().sum::<f64>();
    }

    let degree = cfg.top_k + 1;
    let mut node_relevance = vec![0.0; n];
    for i in 0..n {
        let (folded, fb) = reassign_ecnum(&feature_rel[i], embed_mass[i], degree)?;
        fallback |= fb;
        node_relevance[i] = folded.iter().sum();
    }

    let edges = adjacency
        .edges()
        .map(|(t, s)| {
            let weight = if t == target {
                edge_totals
                    .iter()
                    .find(|(src, _)| *src == s)
                    .map(|(_, w)| *w)
                    .unwrap_or(0.0)
            } else {
                0.0
            };
            EdgeRelevance {
                target: t,
                source: s,
                weight,
            }
        })
        .collect();

    Ok(RelevanceMap {
        target_sensor: target,
        timestamp,
        node_relevance,
        edges,
        uniform_fallback: fallback,
    })
}

/// Writes the map as an annotated edge list: a header comment, one
/// `node <id> <name> <relevance>` line per sensor, then one
/// `<target> <source> <weight>` line per graph edge.
pub fn export_relevance_graph(
    map: &RelevanceMap,
    sensor_names: &[String],
    path: &Path,
) -> Result<()> {
    if sensor_names.len() != map.node_relevance.len() {
        return Err(Error::Dimension(format!(
            "{} names for {} sensors",
            sensor_names.len(),
            map.node_relevance.len()
        )));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "# relevance for sensor {} ({}) at time {}",
        sensor_names[map.target_sensor], map.target_sensor, map.timestamp
    )?;
    for (i, rel) in map.node_relevance.iter().enumerate() {
        writeln!(out, "node {} {} {}", i, sensor_names[i], rel)?;
    }
    for e in &map.edges {
        writeln!(out, "{} {} {}", e.target, e.source, e.weight)?;
    }
    Ok(())
}

/// Reads a file written by `export_relevance_graph`.
pub fn parse_relevance_graph(path: &Path) -> Result<(Vec<f64>, Vec<EdgeRelevance>)> {
    let text = std::fs::read_to_string(path)?;
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = |what: &str| Error::Parse {
            line: ln + 1,
            msg: format!("unreadable {} entry: '{}'", what, line),
        };
        if parts.first() == Some(&"node") {
            if parts.len() != 4 {
                return Err(bad("node"));
            }
            nodes.push(parts[3].parse::<f64>().map_err(|_| bad("node"))?);
        } else {
            if parts.len() != 3 {
                return Err(bad("edge"));
            }
            edges.push(EdgeRelevance {
                target: parts[0].parse().map_err(|_| bad("edge"))?,
                source: parts[1].parse().map_err(|_| bad("edge"))?,
                weight: parts[2].parse().map_err(|_| bad("edge"))?,
            });
        }
    }
    Ok((nodes, edges))
}
