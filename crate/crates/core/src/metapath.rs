//! Length-2 meta-path construction: homogeneous neighbor lists built by
//! bridging through the opposite side, then capped to a fixed size.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::rng;

/// Capped homogeneous neighbor lists for both sides. Non-empty lists have
/// length exactly `tau`; nodes with no meta-path neighbor stay empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaPathRelations {
    pub neighbors_a: Vec<Vec<usize>>,
    pub neighbors_b: Vec<Vec<usize>>,
    pub tau: usize,
}

impl MetaPathRelations {
    pub fn stored_entries(&self) -> usize {
        self.neighbors_a.iter().map(Vec::len).sum::<usize>()
            + self.neighbors_b.iter().map(Vec::len).sum::<usize>()
    }
}

/// All ordered pairs of members co-listed under any bridge node, self-pairs
/// excluded, duplicates collapsed. Symmetric by construction.
pub fn build_pairs_via_bridge(bridge_members: &[Vec<usize>]) -> BTreeSet<(usize, usize)> {
    let mut pairs = BTreeSet::new();
    for members in bridge_members {
        for (k, &u) in members.iter().enumerate() {
            for &v in &members[k + 1..] {
                if u != v {
                    pairs.insert((u, v));
                    pairs.insert((v, u));
                }
            }
        }
    }
    pairs
}

/// Cap raw symmetric relations to per-node lists of exactly `tau` entries.
/// Nodes with more than `tau` neighbors are downsampled without replacement
/// using a per-node seed; nodes with fewer are padded by cyclic replication
/// over the ascending-sorted list.
pub fn enforce_threshold(
    raw: &BTreeSet<(usize, usize)>,
    n_nodes: usize,
    tau: usize,
    seed: u64,
    side_label: &str,
) -> Result<Vec<Vec<usize>>> {
    if tau == 0 {
        return Err(Error::Config("neighbor threshold tau must be >= 1".into()));
    }
    let mut adj = vec![Vec::new(); n_nodes];
    for &(u, v) in raw {
        if u >= n_nodes || v >= n_nodes {
            return Err(Error::Contract(format!(
                "relation ({u},{v}) out of range for {n_nodes} nodes"
            )));
        }
        if u == v {
            return Err(Error::Contract(format!("self relation on node {u}")));
        }
        adj[u].push(v); // BTreeSet iteration keeps each list ascending
    }

    let mut out = Vec::with_capacity(n_nodes);
    for (node, neighbors) in adj.into_iter().enumerate() {
        if neighbors.is_empty() {
            out.push(Vec::new());
        } else if neighbors.len() >= tau {
            let mut rng =
                rng::derived_rng(seed, &format!("metapath/{side_label}/node/{node}"));
            let mut pool = neighbors;
            pool.shuffle(&mut rng);
            let mut chosen: Vec<usize> = pool.into_iter().take(tau).collect();
            chosen.sort_unstable();
            out.push(chosen);
        } else {
            let mut list = Vec::with_capacity(tau);
            for i in 0..tau {
                list.push(neighbors[i % neighbors.len()]);
            }
            out.push(list);
        }
    }
    Ok(out)
}

/// Full construction for a bipartite graph: side-A pairs bridge through
/// side-B nodes and vice versa.
pub fn build_metapaths(graph: &HeteroGraph, tau: usize, seed: u64) -> Result<MetaPathRelations> {
    let bridges_for_a: Vec<Vec<usize>> = graph
        .adjacency_b()
        .into_iter()
        .map(|s| s.into_iter().collect())
        .collect();
    let bridges_for_b: Vec<Vec<usize>> = graph
        .adjacency_a()
        .into_iter()
        .map(|s| s.into_iter().collect())
        .collect();
    build_metapaths_from_bridges(graph.n_a(), graph.n_b(), &bridges_for_a, &bridges_for_b, tau, seed)
}

/// Construction from explicit bridge member lists, used directly by the
/// tripartite composition where a shared third node type is the bridge.
pub fn build_metapaths_from_bridges(
    n_a: usize,
    n_b: usize,
    bridges_for_a: &[Vec<usize>],
    bridges_for_b: &[Vec<usize>],
    tau: usize,
    seed: u64,
) -> Result<MetaPathRelations> {
    let raw_a = build_pairs_via_bridge(bridges_for_a);
    let raw_b = build_pairs_via_bridge(bridges_for_b);
    Ok(MetaPathRelations {
        neighbors_a: enforce_threshold(&raw_a, n_a, tau, seed, "a")?,
        neighbors_b: enforce_threshold(&raw_b, n_b, tau, seed, "b")?,
        tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_graph() -> HeteroGraph {
        // drugs {d1,d2}, genes {g1,g2,g3}, edges d1-g1 d1-g2 d2-g2 d2-g3
        HeteroGraph::from_indexed_edges(2, 3, &[(0, 0), (0, 1), (1, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn toy_pairs_match_enumeration() {
        let g = toy_graph();
        let gene_bridges: Vec<Vec<usize>> = g
            .adjacency_a()
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect();
        let gene_pairs = build_pairs_via_bridge(&gene_bridges);
        let want: BTreeSet<_> = [(0, 1), (1, 0), (1, 2), (2, 1)].into_iter().collect();
        assert_eq!(gene_pairs, want);

        let drug_bridges: Vec<Vec<usize>> = g
            .adjacency_b()
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect();
        let drug_pairs = build_pairs_via_bridge(&drug_bridges);
        let want: BTreeSet<_> = [(0, 1), (1, 0)].into_iter().collect();
        assert_eq!(drug_pairs, want);
    }

    #[test]
    fn single_membership_contributes_no_pairs() {
        assert!(build_pairs_via_bridge(&[vec![3]]).is_empty());
        assert!(build_pairs_via_bridge(&[vec![]]).is_empty());
    }

    #[test]
    fn star_graph_pair_count() {
        let k = 7;
        let members: Vec<usize> = (0..k).collect();
        let pairs = build_pairs_via_bridge(&[members]);
        assert_eq!(pairs.len(), k * (k - 1));
    }

    #[test]
    fn threshold_keeps_exact_lists() {
        let raw: BTreeSet<_> = [(0, 1), (1, 0), (0, 2), (2, 0)].into_iter().collect();
        let lists = enforce_threshold(&raw, 3, 2, 1, "t").unwrap();
        assert_eq!(lists[0], vec![1, 2]);
    }

    #[test]
    fn threshold_replicates_cyclically() {
        let raw: BTreeSet<_> = [(0, 5), (5, 0)].into_iter().collect();
        let lists = enforce_threshold(&raw, 6, 3, 1, "t").unwrap();
        assert_eq!(lists[0], vec![5, 5, 5]);
    }

    #[test]
    fn threshold_downsamples_distinct_and_reproducibly() {
        let mut raw = BTreeSet::new();
        for v in 1..=50usize {
            raw.insert((0, v));
            raw.insert((v, 0));
        }
        let a = enforce_threshold(&raw, 51, 30, 42, "t").unwrap();
        let b = enforce_threshold(&raw, 51, 30, 42, "t").unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].len(), 30);
        let distinct: BTreeSet<_> = a[0].iter().collect();
        assert_eq!(distinct.len(), 30);
        assert!(a[0].iter().all(|&v| (1..=50).contains(&v)));
        let c = enforce_threshold(&raw, 51, 30, 43, "t").unwrap();
        assert_ne!(a[0], c[0]);
    }

    #[test]
    fn zero_tau_is_config_error() {
        assert!(enforce_threshold(&BTreeSet::new(), 1, 0, 0, "t").is_err());
    }

    #[test]
    fn empty_edge_set_gives_empty_lists() {
        let g = HeteroGraph::from_indexed_edges(3, 3, &[]).unwrap();
        let rel = build_metapaths(&g, 4, 0).unwrap();
        assert!(rel.neighbors_a.iter().all(Vec::is_empty));
        assert!(rel.neighbors_b.iter().all(Vec::is_empty));
    }

    #[test]
    fn toy_metapaths_with_tau_two() {
        let g = toy_graph();
        let rel = build_metapaths(&g, 2, 9).unwrap();
        // g2 bridges to both g1 and g3
        let set: BTreeSet<_> = rel.neighbors_b[1].iter().collect();
        assert!(set.iter().all(|&&v| v == 0 || v == 2));
        assert_eq!(rel.neighbors_b[1].len(), 2);
        assert!(rel.stored_entries() <= (g.n_a() + g.n_b()) * 2);
    }
}
