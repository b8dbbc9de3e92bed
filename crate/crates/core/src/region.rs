//! Hydrologic region graphs.
//!
//! A region is an inverted tree of basins: every basin drains into at most
//! one downstream basin and exactly one basin (the drain) has no downstream
//! neighbour. The model's computation graph is built by walking this tree
//! from the region sources towards the drain.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate basin id `{0}`")]
    DuplicateId(String),
    #[error("unknown basin id `{0}`")]
    UnknownBasin(String),
    #[error("region declares no basins")]
    EmptyRegion,
    #[error("basin id must be non-empty")]
    EmptyId,
    #[error("invalid region graph: {0}")]
    InvalidGraph(String),
    #[error("unknown target basin `{0}`")]
    UnknownTarget(String),
    #[error("depth must be at least 1")]
    ZeroDepth,
}

impl RegionError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            RegionError::Syntax { .. } => "syntax-error",
            RegionError::DuplicateId(_) => "duplicate-id",
            RegionError::UnknownBasin(_) => "unknown-basin",
            RegionError::EmptyRegion => "empty-region",
            RegionError::EmptyId => "empty-id",
            RegionError::InvalidGraph(_) => "invalid-graph",
            RegionError::UnknownTarget(_) => "unknown-target",
            RegionError::ZeroDepth => "zero-depth",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Basin {
    pub id: String,
    #[serde(default)]
    pub name: String,
    /// Static descriptors. Carried through the pipeline; the linear models never read them.
    #[serde(rename = "static", default, skip_serializing_if = "Option::is_none")]
    pub static_features: Option<Vec<f64>>,
}

impl Basin {
    pub fn new(id: impl Into<String>) -> Self {
        let id = id.into();
        Basin {
            name: id.clone(),
            id,
            static_features: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionFile {
    basins: Vec<Basin>,
    #[serde(default)]
    edges: Vec<(String, String)>,
}

/// Basins plus directed `source -> downstream` edges.
///
/// Construction checks ids only; tree-ness is checked by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGraph {
    basins: Vec<Basin>,
    edges: Vec<(usize, usize)>,
    index: HashMap<String, usize>,
    upstream: Vec<Vec<usize>>,
    downstream: Vec<Vec<usize>>,
}

impl RegionGraph {
    pub fn new(basins: Vec<Basin>, edges: Vec<(String, String)>) -> Result<Self, RegionError> {
        if basins.is_empty() {
            return Err(RegionError::EmptyRegion);
        }
        let mut index = HashMap::with_capacity(basins.len());
        for (i, b) in basins.iter().enumerate() {
            if b.id.is_empty() {
                return Err(RegionError::EmptyId);
            }
            if index.insert(b.id.clone(), i).is_some() {
                return Err(RegionError::DuplicateId(b.id.clone()));
            }
        }
        let mut resolved = Vec::with_capacity(edges.len());
        for (src, dst) in &edges {
            let s = *index
                .get(src)
                .ok_or_else(|| RegionError::UnknownBasin(src.clone()))?;
            let d = *index
                .get(dst)
                .ok_or_else(|| RegionError::UnknownBasin(dst.clone()))?;
            resolved.push((s, d));
        }
        let mut upstream = vec![Vec::new(); basins.len()];
        let mut downstream = vec![Vec::new(); basins.len()];
        for &(s, d) in &resolved {
            downstream[s].push(d);
            upstream[d].push(s);
        }
        for ups in &mut upstream {
            ups.sort_by(|&a, &b| basins[a].id.cmp(&basins[b].id));
        }
        Ok(RegionGraph {
            basins,
            edges: resolved,
            index,
            upstream,
            downstream,
        })
    }

    pub fn basins(&self) -> &[Basin] {
        &self.basins
    }

    pub fn len(&self) -> usize {
        self.basins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basins.is_empty()
    }

    pub fn basin_ids(&self) -> impl Iterator<Item = &str> {
        self.basins.iter().map(|b| b.id.as_str())
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.edges
            .iter()
            .map(|&(s, d)| (self.basins[s].id.as_str(), self.basins[d].id.as_str()))
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn id(&self, index: usize) -> &str {
        &self.basins[index].id
    }

    /// Upstream neighbours of a basin by index, sorted by id.
    pub fn upstream_indices(&self, index: usize) -> &[usize] {
        &self.upstream[index]
    }

    /// Downstream neighbour of a basin by index (first one if the graph is invalid).
    pub fn downstream_index(&self, index: usize) -> Option<usize> {
        self.downstream[index].first().copied()
    }

    /// The unique basin with out-degree zero, if there is exactly one.
    pub fn drain(&self) -> Option<&str> {
        let mut drains = (0..self.len()).filter(|&i| self.downstream[i].is_empty());
        match (drains.next(), drains.next()) {
            (Some(d), None) => Some(self.id(d)),
            _ => None,
        }
    }

    /// Region sources (basins with no upstream neighbours), sorted by id.
    pub fn region_sources(&self) -> Vec<&str> {
        let mut out: Vec<&str> = (0..self.len())
            .filter(|&i| self.upstream[i].is_empty())
            .map(|i| self.id(i))
            .collect();
        out.sort_unstable();
        out
    }

    /// Number of basins on the longest source-to-drain path.
    pub fn height(&self) -> Result<usize, RegionError> {
        let order = topological_order(self)?;
        let mut level = vec![1usize; self.len()];
        for id in &order {
            let i = self.index[id.as_str()];
            for &u in &self.upstream[i] {
                level[i] = level[i].max(level[u] + 1);
            }
        }
        Ok(level.into_iter().max().unwrap_or(0))
    }

    /// Content hash over sorted basin ids and sorted edges.
    pub fn fingerprint(&self) -> String {
        let mut ids: Vec<&str> = self.basin_ids().collect();
        ids.sort_unstable();
        let mut edges: Vec<(&str, &str)> = self.edges().collect();
        edges.sort_unstable();
        let mut hasher = Sha256::new();
        for id in ids {
            hasher.update(b"basin ");
            hasher.update(id.as_bytes());
            hasher.update(b"\n");
        }
        for (s, d) in edges {
            hasher.update(b"edge ");
            hasher.update(s.as_bytes());
            hasher.update(b" ");
            hasher.update(d.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    /// Serialize in the region file format.
    pub fn to_json(&self) -> String {
        let file = RegionFile {
            basins: self.basins.clone(),
            edges: self
                .edges()
                .map(|(s, d)| (s.to_string(), d.to_string()))
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("region serializes");
        text.push('\n');
        text
    }

    /// Induced subgraph on the named basins, in this graph's declaration order.
    pub fn subgraph<S: AsRef<str>>(&self, ids: &[S]) -> Result<RegionGraph, RegionError> {
        if ids.is_empty() {
            return Err(RegionError::EmptyRegion);
        }
        let mut keep = vec![false; self.len()];
        for id in ids {
            let i = self
                .index_of(id.as_ref())
                .ok_or_else(|| RegionError::UnknownBasin(id.as_ref().to_string()))?;
            keep[i] = true;
        }
        Ok(self.induced(&keep))
    }

    /// Induced subgraph on `keep`, preserving declaration order.
    fn induced(&self, keep: &[bool]) -> RegionGraph {
        let basins = self
            .basins
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(b, _)| b.clone())
            .collect();
        let edges = self
            .edges
            .iter()
            .filter(|&&(s, d)| keep[s] && keep[d])
            .map(|&(s, d)| (self.id(s).to_string(), self.id(d).to_string()))
            .collect();
        RegionGraph::new(basins, edges).expect("subgraph of a well-formed graph")
    }
}

/// Balanced inverted tree: `height` levels, every non-leaf basin has `branching` sources.
///
/// Basins are numbered breadth-first from the drain (`b01`), zero-padded so that
/// lexicographic and numeric order agree.
pub fn balanced_tree(branching: usize, height: usize) -> Result<RegionGraph, RegionError> {
    if height == 0 || branching == 0 {
        return Err(RegionError::EmptyRegion);
    }
    let mut n = 0usize;
    let mut width = 1usize;
    for _ in 0..height {
        n += width;
        width *= branching;
    }
    let digits = n.to_string().len().max(2);
    let id = |i: usize| format!("b{:0digits$}", i + 1);
    let basins = (0..n).map(|i| Basin::new(id(i))).collect();
    let edges = (1..n).map(|i| (id(i), id((i - 1) / branching))).collect();
    RegionGraph::new(basins, edges)
}

/// Parse the JSON region format. Checks ids, not tree structure.
pub fn parse_region(text: &str) -> Result<RegionGraph, RegionError> {
    let file: RegionFile = serde_json::from_str(text).map_err(|e| RegionError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut basins = file.basins;
    for b in &mut basins {
        if b.name.is_empty() {
            b.name = b.id.clone();
        }
    }
    RegionGraph::new(basins, file.edges)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationIssue {
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub errors: Vec<ValidationIssue>,
}

impl ValidationReport {
    fn from_errors(errors: Vec<ValidationIssue>) -> Self {
        ValidationReport {
            ok: errors.is_empty(),
            errors,
        }
    }

    pub fn has(&self, code: &str) -> bool {
        self.errors.iter().any(|e| e.code == code)
    }

    /// Single-error report for graphs that could not be constructed at all.
    pub fn from_region_error(err: &RegionError) -> Self {
        ValidationReport::from_errors(vec![ValidationIssue {
            code: err.code(),
            message: err.to_string(),
        }])
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            return writeln!(f, "ok");
        }
        for e in &self.errors {
            writeln!(f, "{}: {}", e.code, e.message)?;
        }
        Ok(())
    }
}

/// Check the inverted-tree invariants. Each violated invariant yields one entry.
pub fn validate(g: &RegionGraph) -> ValidationReport {
    let mut errors = Vec::new();
    let n = g.len();

    let branching: Vec<&str> = (0..n)
        .filter(|&i| g.downstream[i].len() > 1)
        .map(|i| g.id(i))
        .collect();
    if !branching.is_empty() {
        errors.push(ValidationIssue {
            code: "multiple-downstream",
            message: format!("basins with out-degree > 1: {}", branching.join(", ")),
        });
    }

    let drains: Vec<&str> = (0..n)
        .filter(|&i| g.downstream[i].is_empty())
        .map(|i| g.id(i))
        .collect();
    match drains.len() {
        0 => errors.push(ValidationIssue {
            code: "no-drain",
            message: "no basin has out-degree 0".to_string(),
        }),
        1 => {}
        _ => errors.push(ValidationIssue {
            code: "multiple-drains",
            message: format!("basins with out-degree 0: {}", drains.join(", ")),
        }),
    }

    // Kahn's algorithm; anything left unvisited sits on or behind a cycle.
    let mut indegree: Vec<usize> = g.upstream.iter().map(Vec::len).collect();
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut visited = 0;
    while let Some(i) = queue.pop_front() {
        visited += 1;
        for &d in &g.downstream[i] {
            indegree[d] -= 1;
            if indegree[d] == 0 {
                queue.push_back(d);
            }
        }
    }
    if visited < n {
        let mut stuck: Vec<&str> = (0..n).filter(|&i| indegree[i] > 0).map(|i| g.id(i)).collect();
        stuck.sort_unstable();
        errors.push(ValidationIssue {
            code: "cycle-detected",
            message: format!("cycle through basins: {}", stuck.join(", ")),
        });
    }

    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &j in g.upstream[i].iter().chain(&g.downstream[i]) {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    if seen.iter().any(|&s| !s) {
        errors.push(ValidationIssue {
            code: "disconnected",
            message: format!(
                "{} basin(s) not connected to `{}`",
                seen.iter().filter(|&&s| !s).count(),
                g.id(0)
            ),
        });
    }

    ValidationReport::from_errors(errors)
}

fn require_valid(g: &RegionGraph) -> Result<(), RegionError> {
    let report = validate(g);
    if report.ok {
        Ok(())
    } else {
        let codes: Vec<&str> = report.errors.iter().map(|e| e.code).collect();
        Err(RegionError::InvalidGraph(codes.join(", ")))
    }
}

/// Sources before their downstream basin; ties broken by ascending id.
pub fn topological_order(g: &RegionGraph) -> Result<Vec<String>, RegionError> {
    Ok(topological_indices(g)?
        .into_iter()
        .map(|i| g.id(i).to_string())
        .collect())
}

/// As [`topological_order`], returning basin indices.
pub fn topological_indices(g: &RegionGraph) -> Result<Vec<usize>, RegionError> {
    require_valid(g)?;
    let mut indegree: Vec<usize> = g.upstream.iter().map(Vec::len).collect();
    let mut ready: BTreeSet<(&str, usize)> = (0..g.len())
        .filter(|&i| indegree[i] == 0)
        .map(|i| (g.id(i), i))
        .collect();
    let mut order = Vec::with_capacity(g.len());
    while let Some((_, i)) = ready.pop_first() {
        order.push(i);
        for &d in &g.downstream[i] {
            indegree[d] -= 1;
            if indegree[d] == 0 {
                ready.insert((g.id(d), d));
            }
        }
    }
    Ok(order)
}

/// Subtree draining into `target` made of basins fewer than `depth` edges upstream of it.
pub fn prune_to_depth(g: &RegionGraph, target: &str, depth: usize) -> Result<RegionGraph, RegionError> {
    let t = g
        .index_of(target)
        .ok_or_else(|| RegionError::UnknownTarget(target.to_string()))?;
    if depth == 0 {
        return Err(RegionError::ZeroDepth);
    }
    let mut dist = vec![usize::MAX; g.len()];
    dist[t] = 0;
    let mut queue = VecDeque::from([t]);
    while let Some(i) = queue.pop_front() {
        if dist[i] + 1 >= depth {
            continue;
        }
        for &u in &g.upstream[i] {
            if dist[u] == usize::MAX {
                dist[u] = dist[i] + 1;
                queue.push_back(u);
            }
        }
    }
    let keep: Vec<bool> = dist.iter().map(|&d| d < depth).collect();
    Ok(g.induced(&keep))
}

/// Direct sources of `b`, sorted ascending by id.
pub fn sources_of(g: &RegionGraph, b: &str) -> Result<Vec<String>, RegionError> {
    let i = g
        .index_of(b)
        .ok_or_else(|| RegionError::UnknownBasin(b.to_string()))?;
    Ok(g.upstream[i].iter().map(|&u| g.id(u).to_string()).collect())
}
