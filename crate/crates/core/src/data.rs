//! Dataset ingestion (TSV edge lists, tripartite composition), synthetic
//! planted-block generation, and checkpoint persistence.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, Side};
use crate::params::ParamStore;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeRecord {
    pub source: String,
    pub target: String,
    pub relation: Option<String>,
}

/// Parse a TSV edge list: one `source<TAB>target[<TAB>relation]` record per
/// line, `#`-prefixed comment lines and blank lines skipped. Records are
/// returned in file order without deduplication.
pub fn parse_edge_records(path: &Path, expected_relation: Option<&str>) -> Result<Vec<EdgeRecord>> {
    let text = fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_num = lineno + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::Parse {
                path: path_str,
                line: line_num,
                msg: format!("expected 2 or 3 tab-separated fields, got {}", fields.len()),
            });
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                path: path_str,
                line: line_num,
                msg: "empty id".into(),
            });
        }
        let relation = fields.get(2).map(|s| s.to_string());
        if let (Some(expected), Some(found)) = (expected_relation, relation.as_deref()) {
            if expected != found {
                return Err(Error::Schema(format!(
                    "{path_str}:{line_num}: relation '{found}' does not match expected '{expected}'"
                )));
            }
        }
        records.push(EdgeRecord {
            source: fields[0].to_string(),
            target: fields[1].to_string(),
            relation,
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, Default)]
pub struct ParseStats {
    pub duplicates: usize,
}

/// Parse an edge file into a bipartite graph. Ids are interned in first-seen
/// order; duplicate edges collapse with a count in the stats.
pub fn parse_edge_file(
    path: &Path,
    expected_relation: Option<&str>,
) -> Result<(HeteroGraph, ParseStats)> {
    let records = parse_edge_records(path, expected_relation)?;
    let mut graph = HeteroGraph::new();
    let mut stats = ParseStats::default();
    for r in &records {
        let a = graph.intern(Side::A, &r.source);
        let b = graph.intern(Side::B, &r.target);
        if !graph.push_edge(a, b) {
            stats.duplicates += 1;
        }
    }
    Ok((graph, stats))
}

/// Canonical serialization: sorted by (source, target), deduplicated.
/// Parsing a canonical file and re-serializing it is the identity.
pub fn write_edge_file(graph: &HeteroGraph, relation: Option<&str>, path: &Path) -> Result<()> {
    let mut lines: Vec<String> = graph
        .edges()
        .iter()
        .map(|&(a, b)| {
            let s = graph.ids(Side::A).name(a);
            let t = graph.ids(Side::B).name(b);
            match relation {
                Some(r) => format!("{s}\t{t}\t{r}"),
                None => format!("{s}\t{t}"),
            }
        })
        .collect();
    lines.sort();
    lines.dedup();
    let mut body = lines.join("\n");
    body.push('\n');
    fs::write(path, body)?;
    Ok(())
}

/// Tripartite composition: drugs and diseases with cross labels, plus
/// homogeneous bridge member lists built from a shared third node type.
#[derive(Debug, Clone)]
pub struct Tripartite {
    pub graph: HeteroGraph,
    /// Per bridge node, the side-A members linked through it.
    pub bridges_for_a: Vec<Vec<usize>>,
    pub bridges_for_b: Vec<Vec<usize>>,
    /// Bridge ids appearing in only one of the two bridge files.
    pub orphan_bridges: usize,
}

/// Compose a drug-disease graph whose homogeneous relations run through a
/// shared bridge node type (e.g. go terms). `bridge_cap`, when set, truncates
/// each bridge's member list (ascending order) to bound pair enumeration.
pub fn compose_tripartite(
    a_bridge_edges: &[EdgeRecord],
    b_bridge_edges: &[EdgeRecord],
    cross_edges: &[EdgeRecord],
    bridge_cap: Option<usize>,
) -> Result<Tripartite> {
    if let Some(cap) = bridge_cap {
        if cap == 0 {
            return Err(Error::Config("bridge member cap must be >= 1".into()));
        }
    }
    let mut graph = HeteroGraph::new();
    for r in cross_edges {
        let a = graph.intern(Side::A, &r.source);
        let b = graph.intern(Side::B, &r.target);
        graph.push_edge(a, b);
    }
    // bridge files may introduce label-free nodes; intern them too so their
    // homogeneous relations are usable
    let mut members_a: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for r in a_bridge_edges {
        let a = graph.intern(Side::A, &r.source);
        members_a.entry(r.target.clone()).or_default().insert(a);
    }
    let mut members_b: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for r in b_bridge_edges {
        let b = graph.intern(Side::B, &r.source);
        members_b.entry(r.target.clone()).or_default().insert(b);
    }
    let orphan_bridges = members_a.keys().filter(|k| !members_b.contains_key(*k)).count()
        + members_b.keys().filter(|k| !members_a.contains_key(*k)).count();

    let collect = |members: BTreeMap<String, BTreeSet<usize>>| -> Vec<Vec<usize>> {
        members
            .into_values()
            .map(|s| {
                let mut v: Vec<usize> = s.into_iter().collect();
                if let Some(cap) = bridge_cap {
                    v.truncate(cap);
                }
                v
            })
            .collect()
    };
    Ok(Tripartite {
        graph,
        bridges_for_a: collect(members_a),
        bridges_for_b: collect(members_b),
        orphan_bridges,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_a: usize,
    pub n_b: usize,
    pub n_blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_a == 0 || self.n_b == 0 {
            return Err(Error::Config("synthetic sides must be non-empty".into()));
        }
        if self.n_blocks == 0 {
            return Err(Error::Config("n_blocks must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.p_out)
            || !(0.0..=1.0).contains(&self.p_in)
            || self.p_out >= self.p_in
        {
            return Err(Error::Config(format!(
                "need 0 <= p_out < p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        Ok(())
    }
}

/// Planted block model: node i sits in block i mod n_blocks on both sides;
/// a cross pair is an edge with probability p_in within a block, p_out
/// across. Returns the graph plus both sides' block labels.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(HeteroGraph, Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    let blocks_a: Vec<usize> = (0..spec.n_a).map(|i| i % spec.n_blocks).collect();
    let blocks_b: Vec<usize> = (0..spec.n_b).map(|j| j % spec.n_blocks).collect();
    let mut rng = rng::derived_rng(spec.seed, "data/synthetic");
    let mut edges = Vec::new();
    for i in 0..spec.n_a {
        for j in 0..spec.n_b {
            let p = if blocks_a[i] == blocks_b[j] {
                spec.p_in
            } else {
                spec.p_out
            };
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    let graph = HeteroGraph::from_indexed_edges(spec.n_a, spec.n_b, &edges)?;
    Ok((graph, blocks_a, blocks_b))
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlockMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    seed: u64,
    config: serde_json::Value,
    params: Vec<BlockMeta>,
}

/// Checkpoint layout: 8-byte little-endian manifest length, the JSON
/// manifest, then each parameter block as row-major little-endian f64 in
/// manifest order. Written atomically (temp file + rename).
pub fn save_checkpoint(
    params: &ParamStore,
    config: &serde_json::Value,
    seed: u64,
    path: &Path,
) -> Result<()> {
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        seed,
        config: config.clone(),
        params: params
            .iter()
            .map(|p| BlockMeta {
                name: p.name.clone(),
                rows: p.rows,
                cols: p.cols,
            })
            .collect(),
    };
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest encode: {e}")))?;
    let mut buf = Vec::with_capacity(8 + manifest_bytes.len() + params.total_values() * 8);
    buf.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&manifest_bytes);
    for p in params.iter() {
        for &v in &p.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Load a checkpoint back into a parameter store plus the echoed config and
/// seed. Version mismatch, truncation and payload-length disagreement are
/// reported as distinct checkpoint errors.
pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, serde_json::Value, u64)> {
    let mut f = fs::File::open(path)?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(Error::Checkpoint("truncated: missing manifest length".into()));
    }
    let manifest_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + manifest_len {
        return Err(Error::Checkpoint("truncated: manifest shorter than declared".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[8..8 + manifest_len])
        .map_err(|e| Error::Checkpoint(format!("manifest decode: {e}")))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version mismatch: file has {}, expected {CHECKPOINT_VERSION}",
            manifest.version
        )));
    }
    let expected: usize = manifest.params.iter().map(|b| b.rows * b.cols * 8).sum();
    let payload = &bytes[8 + manifest_len..];
    if payload.len() != expected {
        return Err(Error::Checkpoint(format!(
            "payload length disagreement: manifest declares {expected} bytes, file has {}",
            payload.len()
        )));
    }
    let mut params = ParamStore::new();
    let mut at = 0;
    for block in &manifest.params {
        let n = block.rows * block.cols;
        let values: Vec<f64> = payload[at..at + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        at += n * 8;
        params.add(&block.name, block.rows, block.cols, values)?;
    }
    Ok((params, manifest.config, manifest.seed))
}
