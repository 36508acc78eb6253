//! Dense f64 tensors and a minimal reverse-mode differentiation tape.
//!
//! Everything is row-major. The [`Tape`] is an append-only record of
//! executed operations; [`Var`] handles index into it. Trainable tensors
//! live outside the tape in a [`ParamStore`] so gradients can accumulate
//! across backward passes until [`ParamStore::zero_grads`].
//!
//! Determinism is part of the contract. Every kernel fixes its reduction
//! order (row-major loops, ascending-index accumulation), and
//! [`Tape::segment_sum`] canonicalizes per-segment summation order by row
//! content, so repeated runs and shuffled inputs produce bit-identical
//! floats. None of the kernels are parallel; a tape is a single-threaded
//! context. A plain [`Tensor`] has no tape attachment and is an immutable
//! value, safe to share across threads.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use crate::error::{Error, Result};

/// Dense row-major f64 tensor. Scalars use an empty shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    /// Builds a rank-2 tensor from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Dimension(format!(
                    "row 0 has {} columns but row {} has {}",
                    cols,
                    i,
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// (rows, cols) of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Dimension(format!(
                "expected a rank-2 tensor, got shape {:?}",
                other
            ))),
        }
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> Result<&[f64]> {
        let (r, c) = self.dims2()?;
        if i >= r {
            return Err(Error::Index(format!("row {} of a {}x{} tensor", i, r, c)));
        }
        Ok(&self.data[i * c..(i + 1) * c])
    }

    pub fn get2(&self, i: usize, j: usize) -> Result<f64> {
        let (r, c) = self.dims2()?;
        if i >= r || j >= c {
            return Err(Error::Index(format!(
                "element ({},{}) of a {}x{} tensor",
                i, j, r, c
            )));
        }
        Ok(self.data[i * c + j])
    }
}

/// Handle to a named parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug)]
struct ParamEntry {
    name: String,
    value: Tensor,
    grad: Vec<f64>,
}

/// Owns trainable tensors and their accumulated gradients.
///
/// Gradients persist across tapes and accumulate on every backward pass;
/// call [`ParamStore::zero_grads`] between optimizer steps. Names are
/// unique and serve as stable keys for checkpoints.
#[derive(Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::Contract(format!(
                "parameter name {:?} already registered",
                name
            )));
        }
        let grad = vec![0.0; value.numel()];
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            grad,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].grad
    }

    /// Looks a parameter up by its registered name.
    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    fn accumulate_grad(&mut self, id: ParamId, contribution: &[f64]) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.grad.len() != contribution.len() {
            return Err(Error::Contract(format!(
                "gradient for {:?} has {} elements, parameter has {}",
                entry.name,
                contribution.len(),
                entry.grad.len()
            )));
        }
        for (g, c) in entry.grad.iter_mut().zip(contribution) {
            *g += c;
        }
        Ok(())
    }
}

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

enum Op {
    Input,
    Param(ParamId),
    Matmul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Concat { parts: Vec<Var>, axis: usize },
    GatherRows { table: Var, indices: Vec<usize> },
    SegmentSum { values: Var, segments: Vec<usize> },
    Mse(Var, Var),
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(0);

/// Append-only record of executed operations.
///
/// The node list is a topological order by construction, so the backward
/// sweep is a single reverse pass that visits each node exactly once.
/// Dropping or clearing the tape frees all intermediates; parameters live
/// in the [`ParamStore`] and persist.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, AtomicOrdering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all recorded nodes; the tape can be reused.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            shape,
            data,
            requires_grad,
            op,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Contract(
                "variable does not belong to this tape".to_string(),
            ));
        }
        Ok(())
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.idx]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.node(v).data
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor {
            shape: n.shape.clone(),
            data: n.data.clone(),
        }
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        match self.node(v).shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Dimension(format!(
                "expected a rank-2 tensor, got shape {:?}",
                other
            ))),
        }
    }

    /// Records a constant input; no gradient flows into it.
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), false, Op::Input)
    }

    /// Records a leaf for a stored parameter. Backward accumulates into the
    /// same store, which must be the one the id came from.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.value(id);
        self.push(t.shape.clone(), t.data.clone(), true, Op::Param(id))
    }

    /// `a @ b` for rank-2 tensors. Accumulation runs over the inner
    /// dimension in ascending order for every output element.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (m, ka) = self.dims2(a)?;
        let (kb, n) = self.dims2(b)?;
        if ka != kb {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions differ: {:?} vs {:?}",
                self.node(a).shape,
                self.node(b).shape
            )));
        }
        let mut out = vec![0.0; m * n];
        {
            let ad = &self.node(a).data;
            let bd = &self.node(b).data;
            matmul_into(ad, bd, m, ka, n, &mut out);
        }
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(vec![m, n], out, rg, Op::Matmul(a, b)))
    }

    /// Elementwise sum of two equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        if self.node(a).shape != self.node(b).shape {
            return Err(Error::Dimension(format!(
                "add of mismatched shapes {:?} and {:?}",
                self.node(a).shape,
                self.node(b).shape
            )));
        }
        let data: Vec<f64> = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        let shape = self.node(a).shape.clone();
        Ok(self.push(shape, data, rg, Op::Add(a, b)))
    }

    /// Adds a length-n bias to every row of an m x n tensor.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        self.check(a)?;
        self.check(bias)?;
        let (m, n) = self.dims2(a)?;
        let bshape = &self.node(bias).shape;
        if bshape.as_slice() != [n] {
            return Err(Error::Dimension(format!(
                "bias shape {:?} does not broadcast over rows of {:?}",
                bshape,
                self.node(a).shape
            )));
        }
        let mut data = self.node(a).data.clone();
        let bd = &self.node(bias).data;
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += bd[j];
            }
        }
        let rg = self.node(a).requires_grad || self.node(bias).requires_grad;
        Ok(self.push(vec![m, n], data, rg, Op::AddBias(a, bias)))
    }

    /// Elementwise max(0, x).
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let data: Vec<f64> = self
            .node(x)
            .data
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        let shape = self.node(x).shape.clone();
        let rg = self.node(x).requires_grad;
        Ok(self.push(shape, data, rg, Op::Relu(x)))
    }

    /// Concatenates rank-2 tensors along `axis` (0 or 1). All other
    /// dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".to_string()));
        }
        if axis > 1 {
            return Err(Error::Dimension(format!(
                "concat axis {} out of range for rank-2 tensors",
                axis
            )));
        }
        for &p in parts {
            self.check(p)?;
            self.dims2(p)?;
        }
        let (r0, c0) = self.dims2(parts[0])?;
        let mut rows = r0;
        let mut cols = c0;
        for &p in &parts[1..] {
            let (r, c) = self.dims2(p)?;
            if axis == 0 {
                if c != c0 {
                    return Err(Error::Dimension(format!(
                        "concat along axis 0 needs equal column counts, got {} and {}",
                        c0, c
                    )));
                }
                rows += r;
            } else {
                if r != r0 {
                    return Err(Error::Dimension(format!(
                        "concat along axis 1 needs equal row counts, got {} and {}",
                        r0, r
                    )));
                }
                cols += c;
            }
        }
        let mut data = vec![0.0; rows * cols];
        if axis == 0 {
            let mut off = 0;
            for &p in parts {
                let d = &self.node(p).data;
                data[off..off + d.len()].copy_from_slice(d);
                off += d.len();
            }
        } else {
            let mut col_off = 0;
            for &p in parts {
                let (_, c) = self.dims2(p)?;
                let d = &self.node(p).data;
                for i in 0..rows {
                    data[i * cols + col_off..i * cols + col_off + c]
                        .copy_from_slice(&d[i * c..(i + 1) * c]);
                }
                col_off += c;
            }
        }
        let rg = parts.iter().any(|&p| self.node(p).requires_grad);
        Ok(self.push(
            vec![rows, cols],
            data,
            rg,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Selects rows of a rank-2 table. Indices may repeat; an empty
    /// selection yields a 0 x cols tensor.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        self.check(table)?;
        let (rows, cols) = self.dims2(table)?;
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &ix in indices {
            if ix >= rows {
                return Err(Error::Index(format!(
                    "gather_rows index {} in a table of {} rows",
                    ix, rows
                )));
            }
            let d = &self.node(table).data;
            data.extend_from_slice(&d[ix * cols..(ix + 1) * cols]);
        }
        let rg = self.node(table).requires_grad;
        Ok(self.push(
            vec![indices.len(), cols],
            data,
            rg,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Sums rows of `values` into `n_segments` output rows keyed by
    /// `segments`. For each output row the contributing rows are added in
    /// a canonical order (sorted by row content under IEEE total order),
    /// so any permutation of the (row, segment) pairs produces
    /// bit-identical output. Segments with no contributions stay zero.
    pub fn segment_sum(&mut self, values: Var, segments: &[usize], n_segments: usize) -> Result<Var> {
        self.check(values)?;
        let (rows, cols) = self.dims2(values)?;
        if segments.len() != rows {
            return Err(Error::Dimension(format!(
                "{} segment ids for {} value rows",
                segments.len(),
                rows
            )));
        }
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_segments];
        for (r, &s) in segments.iter().enumerate() {
            if s >= n_segments {
                return Err(Error::Index(format!(
                    "segment id {} with {} segments",
                    s, n_segments
                )));
            }
            groups[s].push(r);
        }
        let d = &self.node(values).data;
        for g in &mut groups {
            g.sort_by(|&x, &y| row_cmp(&d[x * cols..(x + 1) * cols], &d[y * cols..(y + 1) * cols]));
        }
        let mut out = vec![0.0; n_segments * cols];
        for (s, g) in groups.iter().enumerate() {
            for &r in g {
                for c in 0..cols {
                    out[s * cols + c] += d[r * cols + c];
                }
            }
        }
        let rg = self.node(values).requires_grad;
        Ok(self.push(
            vec![n_segments, cols],
            out,
            rg,
            Op::SegmentSum {
                values,
                segments: segments.to_vec(),
            },
        ))
    }

    /// Mean of elementwise squared differences; returns a scalar node.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.check(pred)?;
        self.check(target)?;
        if self.node(pred).shape != self.node(target).shape {
            return Err(Error::Dimension(format!(
                "mse of mismatched shapes {:?} and {:?}",
                self.node(pred).shape,
                self.node(target).shape
            )));
        }
        let n = self.node(pred).data.len();
        if n == 0 {
            return Err(Error::Contract("mse of empty tensors".to_string()));
        }
        let mut acc = 0.0;
        for (p, t) in self.node(pred).data.iter().zip(&self.node(target).data) {
            let d = p - t;
            acc += d * d;
        }
        let rg = self.node(pred).requires_grad || self.node(target).requires_grad;
        Ok(self.push(vec![], vec![acc / n as f64], rg, Op::Mse(pred, target)))
    }

    /// Reverse sweep from a scalar loss. Visits each node at most once and
    /// accumulates (never overwrites) into the store's parameter
    /// gradients. Consumes the tape.
    pub fn backward(mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.check(loss)?;
        if self.node(loss).data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.idx] = Some(vec![1.0]);

        for idx in (0..=loss.idx).rev() {
            if !self.nodes[idx].requires_grad {
                grads[idx] = None;
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            // Split borrows: the op description is read-only while child
            // gradients are written.
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param(id) => {
                    store.accumulate_grad(*id, &g)?;
                }
                Op::Matmul(a, b) => {
                    let (m, k) = (self.nodes[a.idx].shape[0], self.nodes[a.idx].shape[1]);
                    let n = self.nodes[b.idx].shape[1];
                    if self.nodes[a.idx].requires_grad {
                        let bd = &self.nodes[b.idx].data;
                        let da = grads[a.idx].get_or_insert_with(|| vec![0.0; m * k]);
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[i * n + j] * bd[p * n + j];
                                }
                                da[i * k + p] += acc;
                            }
                        }
                    }
                    if self.nodes[b.idx].requires_grad {
                        let ad = &self.nodes[a.idx].data;
                        let db = grads[b.idx].get_or_insert_with(|| vec![0.0; k * n]);
                        for i in 0..m {
                            for p in 0..k {
                                let av = ad[i * k + p];
                                for j in 0..n {
                                    db[p * n + j] += av * g[i * n + j];
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for &side in &[*a, *b] {
                        if self.nodes[side.idx].requires_grad {
                            let d = grads[side.idx].get_or_insert_with(|| vec![0.0; g.len()]);
                            for (dst, src) in d.iter_mut().zip(&g) {
                                *dst += src;
                            }
                        }
                    }
                }
                Op::AddBias(a, bias) => {
                    let (m, n) = (self.nodes[a.idx].shape[0], self.nodes[a.idx].shape[1]);
                    if self.nodes[a.idx].requires_grad {
                        let d = grads[a.idx].get_or_insert_with(|| vec![0.0; g.len()]);
                        for (dst, src) in d.iter_mut().zip(&g) {
                            *dst += src;
                        }
                    }
                    if self.nodes[bias.idx].requires_grad {
                        let d = grads[bias.idx].get_or_insert_with(|| vec![0.0; n]);
                        for i in 0..m {
                            for j in 0..n {
                                d[j] += g[i * n + j];
                            }
                        }
                    }
                }
                Op::Relu(x) => {
                    if self.nodes[x.idx].requires_grad {
                        let xd = &self.nodes[x.idx].data;
                        let d = grads[x.idx].get_or_insert_with(|| vec![0.0; g.len()]);
                        for i in 0..g.len() {
                            if xd[i] > 0.0 {
                                d[i] += g[i];
                            }
                        }
                    }
                }
                Op::Concat { parts, axis } => {
                    let cols: usize = self.nodes[idx].shape[1];
                    let mut row_off = 0;
                    let mut col_off = 0;
                    for &p in parts {
                        let (pr, pc) =
                            (self.nodes[p.idx].shape[0], self.nodes[p.idx].shape[1]);
                        if self.nodes[p.idx].requires_grad {
                            let d = grads[p.idx].get_or_insert_with(|| vec![0.0; pr * pc]);
                            if *axis == 0 {
                                for i in 0..pr {
                                    for j in 0..pc {
                                        d[i * pc + j] += g[(row_off + i) * cols + j];
                                    }
                                }
                            } else {
                                for i in 0..pr {
                                    for j in 0..pc {
                                        d[i * pc + j] += g[i * cols + col_off + j];
                                    }
                                }
                            }
                        }
                        row_off += pr;
                        col_off += pc;
                    }
                }
                Op::GatherRows { table, indices } => {
                    if self.nodes[table.idx].requires_grad {
                        let (tr, tc) =
                            (self.nodes[table.idx].shape[0], self.nodes[table.idx].shape[1]);
                        let d = grads[table.idx].get_or_insert_with(|| vec![0.0; tr * tc]);
                        // Scatter-add in input order; duplicates accumulate.
                        for (r, &ix) in indices.iter().enumerate() {
                            for c in 0..tc {
                                d[ix * tc + c] += g[r * tc + c];
                            }
                        }
                    }
                }
                Op::SegmentSum { values, segments } => {
                    if self.nodes[values.idx].requires_grad {
                        let (vr, vc) =
                            (self.nodes[values.idx].shape[0], self.nodes[values.idx].shape[1]);
                        let d = grads[values.idx].get_or_insert_with(|| vec![0.0; vr * vc]);
                        for (r, &s) in segments.iter().enumerate() {
                            for c in 0..vc {
                                d[r * vc + c] += g[s * vc + c];
                            }
                        }
                    }
                }
                Op::Mse(pred, target) => {
                    let n = self.nodes[pred.idx].data.len() as f64;
                    let scale = 2.0 * g[0] / n;
                    let (pi, ti) = (pred.idx, target.idx);
                    if self.nodes[pi].requires_grad {
                        let diffs: Vec<f64> = self.nodes[pi]
                            .data
                            .iter()
                            .zip(&self.nodes[ti].data)
                            .map(|(p, t)| scale * (p - t))
                            .collect();
                        let d = grads[pi].get_or_insert_with(|| vec![0.0; diffs.len()]);
                        for (dst, src) in d.iter_mut().zip(&diffs) {
                            *dst += src;
                        }
                    }
                    if self.nodes[ti].requires_grad {
                        let diffs: Vec<f64> = self.nodes[pi]
                            .data
                            .iter()
                            .zip(&self.nodes[ti].data)
                            .map(|(p, t)| -scale * (p - t))
                            .collect();
                        let d = grads[ti].get_or_insert_with(|| vec![0.0; diffs.len()]);
                        for (dst, src) in d.iter_mut().zip(&diffs) {
                            *dst += src;
                        }
                    }
                }
            }
        }
        self.nodes.clear();
        Ok(())
    }
}

/// `out += a @ b` with a: m x k, b: k x n, out: m x n, all row-major.
/// Inner accumulation runs over k in ascending order for each element.
fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// Lexicographic IEEE total order on rows; rows that compare equal are
/// bitwise-identical up to NaN payload ordering, so their summation order
/// cannot change results.
fn row_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}
