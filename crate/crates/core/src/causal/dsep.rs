use std::collections::BTreeSet;

use super::dag::{CausalError, Dag};

/// How the ball arrived at a node during reachability.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Arrival {
    /// Along an edge parent -> node (travelling with the arrow).
    FromParent,
    /// Along an edge node -> child, reversed (travelling against the arrow).
    FromChild,
}

impl Dag {
    /// True iff `x` and `y` are d-separated given `z`: every undirected path
    /// between them is blocked under the chain/fork/collider rules.
    ///
    /// Uses ball-passing reachability over (node, arrival-direction) states,
    /// linear in the number of edges.
    pub fn is_d_separated(&self, x: &str, y: &str, z: &[&str]) -> Result<bool, CausalError> {
        let xi = self.node_index(x)?;
        let yi = self.node_index(y)?;
        let zi = self.resolve_set(z)?;
        if xi == yi {
            return Err(CausalError::InvalidQuery(format!(
                "x and y must differ, both are `{x}`"
            )));
        }
        if zi.contains(&xi) || zi.contains(&yi) {
            return Err(CausalError::InvalidQuery(
                "conditioning set must exclude x and y".into(),
            ));
        }
        Ok(!self.d_connected(xi, yi, &zi))
    }

    fn d_connected(&self, x: usize, y: usize, z: &BTreeSet<usize>) -> bool {
        // Nodes in z or with a descendant in z: these open colliders.
        let mut anc_of_z = z.clone();
        let mut stack: Vec<usize> = z.iter().copied().collect();
        while let Some(v) = stack.pop() {
            for &p in self.parents_of(v) {
                if anc_of_z.insert(p) {
                    stack.push(p);
                }
            }
        }

        let n = self.node_count();
        let mut visited = vec![[false; 2]; n];
        let mut frontier: Vec<(usize, Arrival)> = Vec::new();
        // The ball leaves the endpoint x in both directions.
        for &p in self.parents_of(x) {
            frontier.push((p, Arrival::FromChild));
        }
        for &c in self.children_of(x) {
            frontier.push((c, Arrival::FromParent));
        }
        while let Some((v, dir)) = frontier.pop() {
            let slot = match dir {
                Arrival::FromParent => 0,
                Arrival::FromChild => 1,
            };
            if visited[v][slot] {
                continue;
            }
            visited[v][slot] = true;
            if v == y {
                return true;
            }
            match dir {
                Arrival::FromParent => {
                    // Chain p -> v -> c passes iff v not conditioned on.
                    if !z.contains(&v) {
                        for &c in self.children_of(v) {
                            frontier.push((c, Arrival::FromParent));
                        }
                    }
                    // Collider p -> v <- p' passes iff v or a descendant is in z.
                    if anc_of_z.contains(&v) {
                        for &p in self.parents_of(v) {
                            frontier.push((p, Arrival::FromChild));
                        }
                    }
                }
                Arrival::FromChild => {
                    // Chain c <- v <- p and fork c <- v -> c' pass iff v not in z.
                    if !z.contains(&v) {
                        for &p in self.parents_of(v) {
                            frontier.push((p, Arrival::FromChild));
                        }
                        for &c in self.children_of(v) {
                            frontier.push((c, Arrival::FromParent));
                        }
                    }
                }
            }
        }
        false
    }

    /// The back-door criterion for `z` relative to `(treatment, outcome)`:
    /// no member of `z` is a descendant of the treatment, and `z` d-separates
    /// treatment and outcome once every edge out of the treatment is deleted.
    pub fn satisfies_backdoor(
        &self,
        treatment: &str,
        outcome: &str,
        z: &[&str],
    ) -> Result<bool, CausalError> {
        let ti = self.node_index(treatment)?;
        let oi = self.node_index(outcome)?;
        let zi = self.resolve_set(z)?;
        if ti == oi {
            return Err(CausalError::InvalidQuery(
                "treatment and outcome must differ".into(),
            ));
        }
        if zi.contains(&ti) || zi.contains(&oi) {
            return Err(CausalError::InvalidQuery(
                "conditioning set must exclude treatment and outcome".into(),
            ));
        }
        let desc = self.descendants(ti);
        if zi.iter().any(|v| desc.contains(v)) {
            return Ok(false);
        }
        let pruned = self.without_outgoing(ti);
        Ok(!pruned.d_connected(ti, oi, &zi))
    }
}

#[cfg(test)]
mod tests {
    use super::super::builtin_diagrams;
    use super::*;

    fn chain() -> Dag {
        Dag::new(&["a", "b", "c"], &[("a", "b"), ("b", "c")]).unwrap()
    }

    fn collider() -> Dag {
        Dag::new(&["a", "b", "c"], &[("a", "b"), ("c", "b")]).unwrap()
    }

    #[test]
    fn chain_blocked_by_middle_node() {
        let g = chain();
        assert!(g.is_d_separated("a", "c", &["b"]).unwrap());
        assert!(!g.is_d_separated("a", "c", &[]).unwrap());
    }

    #[test]
    fn collider_blocks_unless_conditioned() {
        let g = collider();
        assert!(g.is_d_separated("a", "c", &[]).unwrap());
        assert!(!g.is_d_separated("a", "c", &["b"]).unwrap());
    }

    #[test]
    fn conditioning_on_collider_descendant_opens_path() {
        let g = Dag::new(
            &["a", "b", "c", "d"],
            &[("a", "b"), ("c", "b"), ("b", "d")],
        )
        .unwrap();
        assert!(!g.is_d_separated("a", "c", &["d"]).unwrap());
    }

    #[test]
    fn query_validation_errors() {
        let g = chain();
        assert!(matches!(
            g.is_d_separated("a", "missing", &[]).unwrap_err(),
            CausalError::UnknownNode(_)
        ));
        assert!(matches!(
            g.is_d_separated("a", "a", &[]).unwrap_err(),
            CausalError::InvalidQuery(_)
        ));
        assert!(matches!(
            g.is_d_separated("a", "c", &["a"]).unwrap_err(),
            CausalError::InvalidQuery(_)
        ));
    }

    #[test]
    fn figure2_query_volume_blocks_all_backdoor_paths() {
        let g = &builtin_diagrams()["figure2"];
        // Back-door view: delete edges out of X, then {V} d-separates X and Y.
        let pruned = g.without_outgoing(g.node_index("X").unwrap());
        assert!(pruned.is_d_separated("X", "Y", &["V"]).unwrap());
        assert!(g.satisfies_backdoor("X", "Y", &["V"]).unwrap());
        // Without conditioning the confounding paths stay open.
        assert!(!g.satisfies_backdoor("X", "Y", &[]).unwrap());
    }

    #[test]
    fn figure3_backdoor_checks() {
        let g = &builtin_diagrams()["figure3"];
        assert!(g.satisfies_backdoor("X1", "Y", &["V", "X2"]).unwrap());
        assert!(!g.satisfies_backdoor("X2", "Y", &["X1", "V"]).unwrap());
    }

    #[test]
    fn figure4_query_volume_suffices() {
        let g = &builtin_diagrams()["figure4"];
        assert!(g.satisfies_backdoor("X1", "Y", &["V"]).unwrap());
    }

    #[test]
    fn descendant_in_z_violates_condition_one() {
        let g = chain();
        // c is a descendant of a.
        assert!(!g.satisfies_backdoor("a", "b", &["c"]).unwrap());
    }
}
