use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dag::{CausalError, Dag};

#[derive(Serialize, Deserialize)]
struct DagJson {
    nodes: Vec<String>,
    edges: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    edge_tags: Vec<(String, String, String)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    notes: Vec<String>,
}

impl Dag {
    /// Parses the edge-list format: one `parent -> child` per line, `#`
    /// starts a comment, blank lines ignored. A line holding a bare name
    /// declares an isolated node.
    pub fn from_edge_list(text: &str) -> Result<Self, CausalError> {
        let mut nodes: Vec<String> = Vec::new();
        let mut edges: Vec<(String, String)> = Vec::new();
        let declare = |name: &str, nodes: &mut Vec<String>| {
            if !nodes.iter().any(|n| n == name) {
                nodes.push(name.to_string());
            }
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once("->") {
                Some((p, c)) => {
                    let (p, c) = (p.trim(), c.trim());
                    if p.is_empty() || c.is_empty() {
                        return Err(CausalError::Parse {
                            line: lineno + 1,
                            reason: format!("malformed edge `{raw}`"),
                        });
                    }
                    declare(p, &mut nodes);
                    declare(c, &mut nodes);
                    edges.push((p.to_string(), c.to_string()));
                }
                None => {
                    if line.contains(char::is_whitespace) {
                        return Err(CausalError::Parse {
                            line: lineno + 1,
                            reason: format!("expected `parent -> child`, got `{raw}`"),
                        });
                    }
                    declare(line, &mut nodes);
                }
            }
        }
        Dag::new(&nodes, &edges)
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let mut connected = std::collections::BTreeSet::new();
        for (p, c) in self.edges() {
            connected.insert(p.clone());
            connected.insert(c.clone());
            out.push_str(&format!("{p} -> {c}\n"));
        }
        for name in self.node_names() {
            if !connected.contains(name) {
                out.push_str(name);
                out.push('\n');
            }
        }
        out
    }

    pub fn from_json(text: &str) -> Result<Self, CausalError> {
        let raw: DagJson = serde_json::from_str(text)?;
        let mut dag = Dag::new(&raw.nodes, &raw.edges)?;
        for (p, c, tag) in &raw.edge_tags {
            dag.tag_edge(p, c, tag)?;
        }
        for note in raw.notes {
            dag.add_note(&note);
        }
        Ok(dag)
    }

    pub fn to_json(&self) -> String {
        let edge_tags = self
            .edges()
            .into_iter()
            .filter_map(|(p, c)| {
                self.edge_tag(&p, &c)
                    .map(|t| (p.clone(), c.clone(), t.to_string()))
            })
            .collect();
        let doc = DagJson {
            nodes: self.node_names().to_vec(),
            edges: self.edges(),
            edge_tags,
            notes: self.notes().to_vec(),
        };
        serde_json::to_string_pretty(&doc).expect("DAG json is serializable")
    }

    pub fn load(path: &Path) -> Result<Self, CausalError> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Dag::from_json(&text)
        } else {
            Dag::from_edge_list(&text)
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CausalError> {
        let text = if path.extension().is_some_and(|e| e == "json") {
            self.to_json()
        } else {
            self.to_edge_list()
        };
        std::fs::write(path, text)?;
        Ok(())
    }
}
