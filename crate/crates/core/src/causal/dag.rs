use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CausalError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("duplicate edge `{parent} -> {child}`")]
    DuplicateEdge { parent: String, child: String },
    #[error("graph contains a cycle through `{0}`")]
    Cycle(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("{{{}}} does not satisfy the back-door criterion for `{treatment}` -> `{outcome}`", z.join(", "))]
    BackdoorViolation {
        treatment: String,
        outcome: String,
        z: Vec<String>,
    },
    #[error("degenerate support: Pr({cell}) = 0 while the conditioning set has positive probability")]
    DegenerateSupport { cell: String },
    #[error("joint state space of {cells} cells exceeds the {max}-cell enumeration cap")]
    StateSpaceTooLarge { cells: u128, max: u64 },
    #[error("invalid CPT for `{node}`: {reason}")]
    InvalidCpt { node: String, reason: String },
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Directed acyclic causal graph over named nodes.
///
/// Immutable after construction; all queries are pure functions.
#[derive(Debug, Clone)]
pub struct Dag {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
    children: Vec<Vec<usize>>,
    parents: Vec<Vec<usize>>,
    edge_tags: BTreeMap<(usize, usize), String>,
    notes: Vec<String>,
}

impl Dag {
    /// Builds a DAG from node names and `(parent, child)` edges, rejecting
    /// unknown endpoints, self-loops, duplicate edges and cycles.
    pub fn new<S: AsRef<str>>(nodes: &[S], edges: &[(S, S)]) -> Result<Self, CausalError> {
        let mut names = Vec::with_capacity(nodes.len());
        let mut index = BTreeMap::new();
        for n in nodes {
            let name = n.as_ref().to_string();
            if index.insert(name.clone(), names.len()).is_some() {
                return Err(CausalError::DuplicateNode(name));
            }
            names.push(name);
        }
        let mut children = vec![Vec::new(); names.len()];
        let mut parents = vec![Vec::new(); names.len()];
        let mut seen = BTreeSet::new();
        for (p, c) in edges {
            let (p, c) = (p.as_ref(), c.as_ref());
            let pi = *index
                .get(p)
                .ok_or_else(|| CausalError::UnknownNode(p.to_string()))?;
            let ci = *index
                .get(c)
                .ok_or_else(|| CausalError::UnknownNode(c.to_string()))?;
            if pi == ci {
                return Err(CausalError::SelfLoop(p.to_string()));
            }
            if !seen.insert((pi, ci)) {
                return Err(CausalError::DuplicateEdge {
                    parent: p.to_string(),
                    child: c.to_string(),
                });
            }
            children[pi].push(ci);
            parents[ci].push(pi);
        }
        for adj in children.iter_mut().chain(parents.iter_mut()) {
            adj.sort_unstable();
        }
        let dag = Self {
            names,
            index,
            children,
            parents,
            edge_tags: BTreeMap::new(),
            notes: Vec::new(),
        };
        if let Some(v) = dag.find_cycle_node() {
            return Err(CausalError::Cycle(dag.names[v].clone()));
        }
        Ok(dag)
    }

    /// Kahn's algorithm; returns a node left unprocessed if a cycle exists.
    fn find_cycle_node(&self) -> Option<usize> {
        let n = self.names.len();
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut queue: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut done = 0;
        while let Some(v) = queue.pop() {
            done += 1;
            for &c in &self.children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push(c);
                }
            }
        }
        if done == n {
            None
        } else {
            (0..n).find(|&v| indeg[v] > 0)
        }
    }

    /// Attaches a tag to an existing edge (e.g. a cannibalization marker).
    pub fn tag_edge(&mut self, parent: &str, child: &str, tag: &str) -> Result<(), CausalError> {
        let p = self.node_index(parent)?;
        let c = self.node_index(child)?;
        if !self.children[p].contains(&c) {
            return Err(CausalError::InvalidQuery(format!(
                "no edge `{parent} -> {child}` to tag"
            )));
        }
        self.edge_tags.insert((p, c), tag.to_string());
        Ok(())
    }

    pub fn edge_tag(&self, parent: &str, child: &str) -> Option<&str> {
        let p = *self.index.get(parent)?;
        let c = *self.index.get(child)?;
        self.edge_tags.get(&(p, c)).map(String::as_str)
    }

    /// Free-form graph-level annotations (e.g. edges deliberately omitted).
    pub fn add_note(&mut self, note: &str) {
        self.notes.push(note.to_string());
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    pub fn node_index(&self, name: &str) -> Result<usize, CausalError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| CausalError::UnknownNode(name.to_string()))
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn node_names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn children_of(&self, idx: usize) -> &[usize] {
        &self.children[idx]
    }

    pub fn parents_of(&self, idx: usize) -> &[usize] {
        &self.parents[idx]
    }

    /// Sorted `(parent, child)` name pairs.
    pub fn edges(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (p, cs) in self.children.iter().enumerate() {
            for &c in cs {
                out.push((self.names[p].clone(), self.names[c].clone()));
            }
        }
        out.sort();
        out
    }

    pub fn edge_count(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    /// Proper descendants of `idx` (excludes the node itself).
    pub fn descendants(&self, idx: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<usize> = self.children[idx].to_vec();
        while let Some(v) = stack.pop() {
            if out.insert(v) {
                stack.extend_from_slice(&self.children[v]);
            }
        }
        out
    }

    /// A copy of the graph with all edges out of `idx` removed.
    pub(crate) fn without_outgoing(&self, idx: usize) -> Dag {
        let mut g = self.clone();
        for &c in &g.children[idx].clone() {
            g.parents[c].retain(|&p| p != idx);
        }
        g.children[idx].clear();
        g.edge_tags.retain(|&(p, _), _| p != idx);
        g
    }

    /// Topological order of node indices.
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.names.len();
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut queue: std::collections::VecDeque<usize> =
            (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &c in &self.children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        debug_assert_eq!(order.len(), n);
        order
    }

    pub(crate) fn resolve_set(&self, names: &[&str]) -> Result<BTreeSet<usize>, CausalError> {
        names.iter().map(|n| self.node_index(n)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_cycles_and_malformed_edges() {
        let err = Dag::new(&["a", "b"], &[("a", "b"), ("b", "a")]).unwrap_err();
        assert!(matches!(err, CausalError::Cycle(_)));
        assert!(matches!(
            Dag::new(&["a"], &[("a", "a")]).unwrap_err(),
            CausalError::SelfLoop(_)
        ));
        assert!(matches!(
            Dag::new(&["a", "b"], &[("a", "b"), ("a", "b")]).unwrap_err(),
            CausalError::DuplicateEdge { .. }
        ));
        assert!(matches!(
            Dag::new(&["a"], &[("a", "b")]).unwrap_err(),
            CausalError::UnknownNode(_)
        ));
        assert!(matches!(
            Dag::new(&["a", "a"], &[]).unwrap_err(),
            CausalError::DuplicateNode(_)
        ));
    }

    #[test]
    fn descendants_and_topology() {
        let g = Dag::new(&["a", "b", "c", "d"], &[("a", "b"), ("b", "c"), ("a", "d")]).unwrap();
        let a = g.node_index("a").unwrap();
        let desc: Vec<&str> = g.descendants(a).iter().map(|&i| g.name(i)).collect();
        assert_eq!(desc, vec!["b", "c", "d"]);
        let order = g.topological_order();
        let pos = |n: &str| order.iter().position(|&v| v == g.node_index(n).unwrap());
        assert!(pos("a") < pos("b") && pos("b") < pos("c"));
    }

    #[test]
    fn edge_tags_round_trip() {
        let mut g = Dag::new(&["p", "o"], &[("p", "o")]).unwrap();
        g.tag_edge("p", "o", "cannibalization").unwrap();
        assert_eq!(g.edge_tag("p", "o"), Some("cannibalization"));
        assert!(g.tag_edge("o", "p", "x").is_err());
    }
}
