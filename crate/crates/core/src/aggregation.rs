//! Homogeneous attention aggregation and degree-normalized heterogeneous
//! propagation.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::rng;
use crate::sparse::SparseMatrix;
use crate::tape::{Tape, TensorId};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

/// Square symmetric block adjacency over [side A | side B] with self-loops,
/// entries B'(i,j) / sqrt(deg(i) deg(j)).
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    pub matrix: SparseMatrix,
    pub n_a: usize,
    pub n_b: usize,
}

pub fn build_normalized_adjacency(graph: &HeteroGraph) -> Result<NormalizedAdjacency> {
    let n_a = graph.n_a();
    let n_b = graph.n_b();
    let n = n_a + n_b;
    let mut deg = vec![1.0f64; n]; // self-loop contributes 1 to every degree
    for &(a, b) in graph.edges() {
        deg[a] += 1.0;
        deg[n_a + b] += 1.0;
    }
    let mut entries = Vec::with_capacity(2 * graph.edges().len() + n);
    for i in 0..n {
        entries.push((i, i, 1.0 / deg[i]));
    }
    for &(a, b) in graph.edges() {
        let j = n_a + b;
        let v = 1.0 / (deg[a] * deg[j]).sqrt();
        entries.push((a, j, v));
        entries.push((j, a, v));
    }
    Ok(NormalizedAdjacency {
        matrix: SparseMatrix::new(n, n, entries)?,
        n_a,
        n_b,
    })
}

/// Attention aggregation over capped neighbor lists (Alg. step 1 style):
/// score each (i, j) pair through a learnable vector applied to the
/// concatenated embeddings, softmax per node, then residual-add the weighted
/// neighbor sum. Zero-neighbor nodes pass through unchanged.
pub fn homogeneous_aggregate(
    tape: &mut Tape,
    h: TensorId,
    relations: &[Vec<usize>],
    a_vec: TensorId,
    slope: f64,
) -> Result<TensorId> {
    let (n, d) = tape.shape(h);
    if relations.len() != n {
        return Err(Error::Dimension(format!(
            "{} neighbor lists for {n} rows",
            relations.len()
        )));
    }
    if tape.shape(a_vec) != (2 * d, 1) {
        return Err(Error::Dimension(format!(
            "attention vector shape {:?}, embedding dim {d}",
            tape.shape(a_vec)
        )));
    }

    let mut srcs = Vec::new();
    let mut dsts = Vec::new();
    let mut offsets = vec![0usize];
    let mut targets = Vec::new();
    for (i, neigh) in relations.iter().enumerate() {
        if neigh.is_empty() {
            continue;
        }
        if let Some(&bad) = neigh.iter().find(|&&j| j >= n) {
            return Err(Error::Contract(format!("neighbor {bad} >= {n}")));
        }
        srcs.extend(std::iter::repeat(i).take(neigh.len()));
        dsts.extend_from_slice(neigh);
        offsets.push(dsts.len());
        targets.push(i);
    }
    if targets.is_empty() {
        return Ok(h); // no neighbors anywhere: identity
    }

    let h_src = tape.gather_rows(h, srcs)?;
    let h_dst = tape.gather_rows(h, dsts)?;
    let cat = tape.concat_cols(h_src, h_dst)?;
    let scores = tape.matmul(cat, a_vec)?;
    let scores = tape.leaky_relu(scores, slope)?;
    let alpha = tape.grouped_softmax(scores, offsets.clone())?;
    let weighted = tape.mul_col_broadcast(h_dst, alpha)?;
    let agg = tape.segment_sum(weighted, offsets, targets, n)?;
    tape.add(h, agg)
}

/// Drop each off-diagonal entry with probability `rate` and rescale
/// survivors by 1/(1-rate). Diagonal (self-loop) entries are kept.
pub fn sparse_dropout(
    adj: &NormalizedAdjacency,
    rate: f64,
    seed: u64,
) -> Result<SparseMatrix> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} not in [0,1)")));
    }
    if rate == 0.0 {
        return Ok(adj.matrix.clone());
    }
    let mut rng = rng::derived_rng(seed, "aggregation/sparse-dropout");
    let keep = 1.0 / (1.0 - rate);
    let entries: Vec<(usize, usize, f64)> = adj
        .matrix
        .entries()
        .iter()
        .filter_map(|&(r, c, v)| {
            if r == c {
                Some((r, c, v))
            } else if rng.random::<f64>() < rate {
                None
            } else {
                Some((r, c, v * keep))
            }
        })
        .collect();
    SparseMatrix::new(adj.matrix.rows(), adj.matrix.cols(), entries)
}

/// One simultaneous exchange across the normalized block adjacency: each
/// side is updated from the other side's inputs plus its own self-loop term.
pub fn heterogeneous_propagate(
    tape: &mut Tape,
    adj: &NormalizedAdjacency,
    e_a0: TensorId,
    e_b0: TensorId,
    dropout_rate: f64,
    training: bool,
    seed: u64,
) -> Result<(TensorId, TensorId)> {
    let (ra, d) = tape.shape(e_a0);
    let (rb, db) = tape.shape(e_b0);
    if ra != adj.n_a || rb != adj.n_b || d != db {
        return Err(Error::Dimension(format!(
            "embeddings {ra}x{d} / {rb}x{db} for adjacency over {}+{}",
            adj.n_a, adj.n_b
        )));
    }
    let matrix = if training {
        Rc::new(sparse_dropout(adj, dropout_rate, seed)?)
    } else {
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!("dropout rate {dropout_rate} not in [0,1)")));
        }
        Rc::new(adj.matrix.clone())
    };
    let stacked = tape.concat_rows(e_a0, e_b0)?;
    let mixed = tape.spmm(matrix, stacked)?;
    let e_a = tape.slice_rows(mixed, 0, adj.n_a)?;
    let e_b = tape.slice_rows(mixed, adj.n_a, adj.n_b)?;
    Ok((e_a, e_b))
}
