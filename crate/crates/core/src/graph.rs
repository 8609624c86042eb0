//! Bipartite graph with two entity sides and labeled cross-edges.

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::error::{Error, Result};

/// Which side of the bipartite graph an id belongs to. Side A is the
/// conditioning side ("drugs"); side B is the target side ("genes", or
/// diseases in the tripartite composition).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, Default)]
pub struct IdMap {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.names.len();
        self.names.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Closest ids by shared-prefix length, for lookup-error suggestions.
    pub fn nearest(&self, query: &str, k: usize) -> Vec<String> {
        let mut scored: Vec<(usize, &String)> = self
            .names
            .iter()
            .map(|n| {
                let common = n
                    .bytes()
                    .zip(query.bytes())
                    .take_while(|(a, b)| a.eq_ignore_ascii_case(b))
                    .count();
                (common, n)
            })
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        scored.into_iter().take(k).map(|(_, n)| n.clone()).collect()
    }
}

/// Heterogeneous bipartite graph: side-A and side-B entities plus the
/// ground-truth cross association set.
#[derive(Debug, Clone, Default)]
pub struct HeteroGraph {
    ids_a: IdMap,
    ids_b: IdMap,
    edges: Vec<(usize, usize)>,
    edge_set: HashSet<(usize, usize)>,
}

impl HeteroGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from index pairs with explicit side sizes (ids become "a<i>",
    /// "b<j>"). Used by the synthetic generator and tests.
    pub fn from_indexed_edges(n_a: usize, n_b: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::new();
        for i in 0..n_a {
            g.ids_a.intern(&format!("a{i}"));
        }
        for j in 0..n_b {
            g.ids_b.intern(&format!("b{j}"));
        }
        for &(a, b) in edges {
            if a >= n_a || b >= n_b {
                return Err(Error::Contract(format!("edge ({a},{b}) out of range")));
            }
            g.push_edge(a, b);
        }
        Ok(g)
    }

    pub fn intern(&mut self, side: Side, id: &str) -> usize {
        match side {
            Side::A => self.ids_a.intern(id),
            Side::B => self.ids_b.intern(id),
        }
    }

    /// Insert an edge, ignoring duplicates. Returns true if it was new.
    pub fn push_edge(&mut self, a: usize, b: usize) -> bool {
        if self.edge_set.insert((a, b)) {
            self.edges.push((a, b));
            true
        } else {
            false
        }
    }

    pub fn n_a(&self) -> usize {
        self.ids_a.len()
    }

    pub fn n_b(&self) -> usize {
        self.ids_b.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edge_set.contains(&(a, b))
    }

    pub fn ids(&self, side: Side) -> &IdMap {
        match side {
            Side::A => &self.ids_a,
            Side::B => &self.ids_b,
        }
    }

    pub fn ids_mut(&mut self, side: Side) -> &mut IdMap {
        match side {
            Side::A => &mut self.ids_a,
            Side::B => &mut self.ids_b,
        }
    }

    /// Per side-A node, the sorted set of linked side-B nodes.
    pub fn adjacency_a(&self) -> Vec<BTreeSet<usize>> {
        let mut adj = vec![BTreeSet::new(); self.n_a()];
        for &(a, b) in &self.edges {
            adj[a].insert(b);
        }
        adj
    }

    /// Per side-B node, the sorted set of linked side-A nodes.
    pub fn adjacency_b(&self) -> Vec<BTreeSet<usize>> {
        let mut adj = vec![BTreeSet::new(); self.n_b()];
        for &(a, b) in &self.edges {
            adj[b].insert(a);
        }
        adj
    }

    /// Restrict to a subset of the edges, keeping the node sets intact.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Self {
        let mut g = self.clone();
        g.edges = edges.to_vec();
        g.edge_set = edges.iter().copied().collect();
        g
    }
}
