//! The prediction model: encoder, edge-conditional updates, readout.
//!
//! One window of readings per sensor is linearly encoded to a feature
//! vector. Each sensor then receives messages from its graph neighbors
//! (plus itself); every message is the neighbor's feature vector pushed
//! through one shared MLP whose input is conditioned on the (target,
//! source) embedding pair. That conditioning is what lets a single MLP
//! stand in for a full table of per-edge transformations: the table
//! variant needs a separate parameter set for every edge, the shared
//! variant amortizes one. Messages are summed per target, rectified, and
//! a second embedding-conditioned MLP reads out the predicted next value
//! of every sensor.
//!
//! Windows are batched by stacking the node dimension; results are
//! bit-identical to per-window processing because every kernel is
//! row-independent and per-segment summation order does not change.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, Adjacency};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input window length w.
    pub window: usize,
    /// Incoming neighbors kept per node.
    pub top_k: usize,
    /// Node embedding width d_e.
    pub embed_dim: usize,
    /// Feature width d_f of encoder output and hidden layers.
    pub hidden_dim: usize,
    /// Layers in the edge-conditional update MLP.
    pub n_update_layers: usize,
    /// Hidden layers in the readout MLP (a final 1-wide projection is
    /// always appended).
    pub n_readout_layers: usize,
}

impl ModelConfig {
    pub fn validate(&self, n_sensors: usize) -> Result<()> {
        if self.window == 0
            || self.embed_dim == 0
            || self.hidden_dim == 0
            || self.n_update_layers == 0
            || self.n_readout_layers == 0
        {
            return Err(Error::Config(format!(
                "model dimensions must be positive: {:?}",
                self
            )));
        }
        if n_sensors < 2 {
            return Err(Error::Config(format!(
                "need at least 2 sensors to build a graph, got {}",
                n_sensors
            )));
        }
        if self.top_k == 0 || self.top_k >= n_sensors {
            return Err(Error::Config(format!(
                "top_k must satisfy 1 <= k <= n-1, got k={} with n={}",
                self.top_k, n_sensors
            )));
        }
        Ok(())
    }
}

/// Closed-form parameter count of the shared model:
/// encoder (w*d_f + d_f), update MLP ((d_f+2*d_e)*d_f + d_f for the first
/// layer, d_f^2 + d_f for each further layer), readout MLP ((d_f+d_e)*d_f
/// + d_f first, d_f^2 + d_f further, d_f + 1 projection) and n*d_e
/// embeddings.
pub fn param_count(config: &ModelConfig, n_sensors: usize) -> usize {
    let (w, de, df) = (config.window, config.embed_dim, config.hidden_dim);
    let encoder = w * df + df;
    let readout = (df + de) * df + df + (config.n_readout_layers - 1) * (df * df + df);
    let proj = df + 1;
    let embeddings = n_sensors * de;
    encoder + update_param_count(config) + readout + proj + embeddings
}

/// Parameters of one update MLP. A per-edge variant of the model pays
/// this once per edge; the shared model pays it exactly once.
pub fn update_param_count(config: &ModelConfig) -> usize {
    let (de, df) = (config.embed_dim, config.hidden_dim);
    (df + 2 * de) * df + df + (config.n_update_layers - 1) * (df * df + df)
}

/// Model parameters plus the ids to find them in the store.
#[derive(Debug)]
pub struct Model {
    config: ModelConfig,
    n_sensors: usize,
    store: ParamStore,
    encoder: (ParamId, ParamId),
    update_layers: Vec<(ParamId, ParamId)>,
    readout_layers: Vec<(ParamId, ParamId)>,
    readout_proj: (ParamId, ParamId),
    embeddings: ParamId,
}

/// All tape nodes a relevance walk needs, in forward order.
pub struct ForwardTrace {
    pub tape: Tape,
    /// Stacked input windows, (batch*n) x w.
    pub x: Var,
    /// Encoder output, (batch*n) x d_f.
    pub encoded: Var,
    /// Global (target, source) ids per edge, self-edges included.
    pub edge_targets: Vec<usize>,
    pub edge_sources: Vec<usize>,
    /// Inputs to each update linear layer; [0] is the conditioned concat.
    pub update_inputs: Vec<Var>,
    /// Pre-activation of each update linear layer.
    pub update_pres: Vec<Var>,
    /// Final per-edge message, (batch*edges) x d_f.
    pub messages: Var,
    /// Per-node message sum before the nonlinearity.
    pub agg_pre: Var,
    /// Rectified node state.
    pub node_state: Var,
    pub readout_inputs: Vec<Var>,
    pub readout_pres: Vec<Var>,
    /// Input to the final projection.
    pub proj_input: Var,
    /// Predictions, (batch*n) x 1.
    pub output: Var,
    pub batch: usize,
}

impl Model {
    /// Fresh model with seeded initialization: embeddings from a standard
    /// normal (degenerate rows redrawn), weights uniform in
    /// +-1/sqrt(fan_in), biases zero.
    pub fn new(config: ModelConfig, n_sensors: usize, seed: u64) -> Result<Model> {
        config.validate(n_sensors)?;
        let (w, de, df) = (config.window, config.embed_dim, config.hidden_dim);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Embeddings consume the default stream; weights get their own.
        rng.set_stream(1);

        let linear = |store: &mut ParamStore,
                          name: &str,
                          fan_in: usize,
                          fan_out: usize,
                          rng: &mut ChaCha8Rng|
         -> Result<(ParamId, ParamId)> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let w = store.insert(&format!("{}.w", name), Tensor::new(vec![fan_in, fan_out], data)?)?;
            let b = store.insert(&format!("{}.b", name), Tensor::zeros(vec![fan_out]))?;
            Ok((w, b))
        };

        let encoder = linear(&mut store, "encoder", w, df, &mut rng)?;
        let mut update_layers = Vec::with_capacity(config.n_update_layers);
        for l in 0..config.n_update_layers {
            let fan_in = if l == 0 { df + 2 * de } else { df };
            update_layers.push(linear(&mut store, &format!("update.{}", l), fan_in, df, &mut rng)?);
        }
        let mut readout_layers = Vec::with_capacity(config.n_readout_layers);
        for l in 0..config.n_readout_layers {
            let fan_in = if l == 0 { df + de } else { df };
            readout_layers.push(linear(&mut store, &format!("readout.{}", l), fan_in, df, &mut rng)?);
        }
        let readout_proj = linear(&mut store, "readout.proj", df, 1, &mut rng)?;
        let embeddings = store.insert("embeddings", graph::init_embeddings(n_sensors, de, seed)?)?;

        Ok(Model {
            config,
            n_sensors,
            store,
            encoder,
            update_layers,
            readout_layers,
            readout_proj,
            embeddings,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn update_layer_ids(&self) -> &[(ParamId, ParamId)] {
        &self.update_layers
    }

    pub fn readout_layer_ids(&self) -> &[(ParamId, ParamId)] {
        &self.readout_layers
    }

    pub fn readout_proj_ids(&self) -> (ParamId, ParamId) {
        self.readout_proj
    }

    pub fn encoder_ids(&self) -> (ParamId, ParamId) {
        self.encoder
    }

    pub fn embeddings_id(&self) -> ParamId {
        self.embeddings
    }

    pub fn embeddings(&self) -> &Tensor {
        self.store.value(self.embeddings)
    }

    /// Overwrites one parameter by name; shapes must match exactly.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.store.id_by_name(name).ok_or_else(|| {
            Error::Checkpoint(format!("unknown parameter {:?}", name))
        })?;
        let current = self.store.value(id);
        if current.shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {:?} has shape {:?}, checkpoint provides {:?}",
                name,
                current.shape(),
                value.shape()
            )));
        }
        *self.store.value_mut(id) = value;
        Ok(())
    }

    /// Graph induced by the current embeddings.
    pub fn adjacency(&self) -> Result<Adjacency> {
        let sim = graph::cosine_matrix(self.embeddings())?;
        graph::topk_adjacency(&sim, self.config.top_k)
    }

    /// Runs the model over a batch of windows on a fresh tape. The
    /// adjacency is passed in so callers control when it is recomputed
    /// (every step) or frozen.
    pub fn trace(&self, windows: &[Tensor], adj: &Adjacency) -> Result<ForwardTrace> {
        if windows.is_empty() {
            return Err(Error::Contract("forward pass over zero windows".to_string()));
        }
        let n = self.n_sensors;
        let (w, df) = (self.config.window, self.config.hidden_dim);
        if adj.n_nodes() != n {
            return Err(Error::Dimension(format!(
                "adjacency over {} nodes, model has {} sensors",
                adj.n_nodes(),
                n
            )));
        }
        let batch = windows.len();
        let mut x_data = Vec::with_capacity(batch * n * w);
        for win in windows {
            if win.shape() != [n, w] {
                return Err(Error::Dimension(format!(
                    "window shape {:?}, expected [{}, {}]",
                    win.shape(),
                    n,
                    w
                )));
            }
            x_data.extend_from_slice(win.data());
        }

        let mut tape = Tape::new();
        let x = tape.input(&Tensor::new(vec![batch * n, w], x_data)?);
        let enc_w = tape.param(&self.store, self.encoder.0);
        let enc_b = tape.param(&self.store, self.encoder.1);
        let encoded = encode(&mut tape, x, enc_w, enc_b)?;

        // Canonical edge order per window: targets ascending, self first,
        // then neighbors ascending.
        let mut edge_targets = Vec::new();
        let mut edge_sources = Vec::new();
        let mut emb_targets = Vec::new();
        let mut emb_sources = Vec::new();
        for b in 0..batch {
            for i in 0..n {
                edge_targets.push(b * n + i);
                edge_sources.push(b * n + i);
                emb_targets.push(i);
                emb_sources.push(i);
                for &j in adj.neighbors(i) {
                    edge_targets.push(b * n + i);
                    edge_sources.push(b * n + j);
                    emb_targets.push(i);
                    emb_sources.push(j);
                }
            }
        }

        let emb = tape.param(&self.store, self.embeddings);
        let z_src = tape.gather_rows(encoded, &edge_sources)?;
        let v_tgt = tape.gather_rows(emb, &emb_targets)?;
        let v_src = tape.gather_rows(emb, &emb_sources)?;
        let update_in = tape.concat(&[z_src, v_tgt, v_src], 1)?;

        let update_vars: Vec<(Var, Var)> = self
            .update_layers
            .iter()
            .map(|&(wid, bid)| (tape.param(&self.store, wid), tape.param(&self.store, bid)))
            .collect();
        let update_mlp = mlp(&mut tape, update_in, &update_vars, false)?;
        let messages = update_mlp.out;

        let edges: Vec<(usize, usize)> = edge_targets
            .iter()
            .copied()
            .zip(edge_sources.iter().copied())
            .collect();
        let (agg_pre, node_state) = aggregate(&mut tape, messages, &edges, batch * n)?;

        let node_emb_ids: Vec<usize> = (0..batch * n).map(|g| g % n).collect();
        let node_emb = tape.gather_rows(emb, &node_emb_ids)?;
        let readout_in = tape.concat(&[node_state, node_emb], 1)?;

        let readout_vars: Vec<(Var, Var)> = self
            .readout_layers
            .iter()
            .map(|&(wid, bid)| (tape.param(&self.store, wid), tape.param(&self.store, bid)))
            .collect();
        let readout_mlp = mlp(&mut tape, readout_in, &readout_vars, true)?;

        let proj_w = tape.param(&self.store, self.readout_proj.0);
        let proj_b = tape.param(&self.store, self.readout_proj.1);
        let pre = tape.matmul(readout_mlp.out, proj_w)?;
        let output = tape.add_bias(pre, proj_b)?;
        debug_assert_eq!(tape.shape(output), &[batch * n, 1]);
        debug_assert_eq!(tape.shape(messages), &[edge_targets.len(), df]);

        Ok(ForwardTrace {
            tape,
            x,
            encoded,
            edge_targets,
            edge_sources,
            update_inputs: update_mlp.inputs,
            update_pres: update_mlp.pres,
            messages,
            agg_pre,
            node_state,
            readout_inputs: readout_mlp.inputs,
            readout_pres: readout_mlp.pres,
            proj_input: readout_mlp.out,
            output,
            batch,
        })
    }

    /// Predictions for one window, recomputing the graph from the current
    /// embeddings.
    pub fn forward(&self, window: &Tensor) -> Result<Vec<f64>> {
        let adj = self.adjacency()?;
        let trace = self.trace(std::slice::from_ref(window), &adj)?;
        Ok(trace.tape.data(trace.output).to_vec())
    }

    /// Predictions for many windows under a fixed adjacency; row `i` of
    /// the result is bit-identical to `trace(&[windows[i]], adj)`.
    pub fn forward_batch(&self, windows: &[Tensor], adj: &Adjacency) -> Result<Vec<Vec<f64>>> {
        let trace = self.trace(windows, adj)?;
        let flat = trace.tape.data(trace.output);
        Ok(flat
            .chunks(self.n_sensors)
            .map(|c| c.to_vec())
            .collect())
    }
}

/// Linear encoding of raw windows: x @ w + b.
pub fn encode(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let h = tape.matmul(x, w)?;
    tape.add_bias(h, b)
}

struct MlpTrace {
    inputs: Vec<Var>,
    pres: Vec<Var>,
    out: Var,
}

/// Dense stack with ReLU between layers. `relu_after_last` distinguishes
/// the readout MLP (rectified throughout, projection follows) from the
/// update MLP (identity output; the nonlinearity comes after message
/// aggregation instead).
fn mlp(tape: &mut Tape, input: Var, layers: &[(Var, Var)], relu_after_last: bool) -> Result<MlpTrace> {
    if layers.is_empty() {
        return Err(Error::Contract("mlp with zero layers".to_string()));
    }
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pres = Vec::with_capacity(layers.len());
    let mut h = input;
    for (l, &(w, b)) in layers.iter().enumerate() {
        inputs.push(h);
        let lin = tape.matmul(h, w)?;
        let pre = tape.add_bias(lin, b)?;
        pres.push(pre);
        let is_last = l + 1 == layers.len();
        h = if is_last && !relu_after_last {
            pre
        } else {
            tape.relu(pre)?
        };
    }
    Ok(MlpTrace {
        inputs,
        pres,
        out: h,
    })
}

/// One conditioned edge message: the update MLP applied to
/// [z_j, v_i, v_j] for target i and source j.
pub fn edge_update(
    tape: &mut Tape,
    z_j: Var,
    v_i: Var,
    v_j: Var,
    layers: &[(Var, Var)],
) -> Result<Var> {
    let joined = tape.concat(&[z_j, v_i, v_j], 1)?;
    Ok(mlp(tape, joined, layers, false)?.out)
}

/// Sums edge messages into their target nodes and rectifies. Every node
/// must appear with a self-edge: the model always sees its own state.
/// Returns (pre-activation sums, rectified node state).
pub fn aggregate(
    tape: &mut Tape,
    messages: Var,
    edges: &[(usize, usize)],
    n_nodes: usize,
) -> Result<(Var, Var)> {
    let mut has_self = vec![false; n_nodes];
    for &(t, s) in edges {
        if t == s {
            if t >= n_nodes {
                return Err(Error::Index(format!(
                    "edge target {} with {} nodes",
                    t, n_nodes
                )));
            }
            has_self[t] = true;
        }
    }
    if let Some(node) = has_self.iter().position(|&b| !b) {
        return Err(Error::Contract(format!(
            "node {} has no self-edge in the aggregation",
            node
        )));
    }
    let segments: Vec<usize> = edges.iter().map(|&(t, _)| t).collect();
    let pre = tape.segment_sum(messages, &segments, n_nodes)?;
    let out = tape.relu(pre)?;
    Ok((pre, out))
}

/// Conditional readout for node states: MLP on [z_i, v_i] ending in a
/// scalar projection per node.
pub fn readout(
    tape: &mut Tape,
    node_state: Var,
    node_emb: Var,
    hidden: &[(Var, Var)],
    proj: (Var, Var),
) -> Result<Var> {
    let joined = tape.concat(&[node_state, node_emb], 1)?;
    let h = mlp(tape, joined, hidden, true)?.out;
    let lin = tape.matmul(h, proj.0)?;
    tape.add_bias(lin, proj.1)
}
