use super::dag::{CausalError, Dag};

const ROW_SUM_TOL: f64 = 1e-12;
const MAX_JOINT_CELLS: u64 = 1_000_000;

/// Conditional probability table for one node: one row per combination of
/// parent states (mixed-radix order, first parent slowest), one column per
/// own state.
#[derive(Debug, Clone)]
pub struct Cpt {
    pub rows: Vec<Vec<f64>>,
}

/// Discrete structural causal model: a DAG plus per-node CPTs.
///
/// Serves as an exact enumeration oracle for small state spaces, not as a
/// production estimator.
#[derive(Debug, Clone)]
pub struct DiscreteScm {
    dag: Dag,
    cardinalities: Vec<usize>,
    cpts: Vec<Cpt>,
}

impl DiscreteScm {
    /// `cardinalities[i]` and `cpts[i]` follow the DAG's node index order.
    pub fn new(dag: Dag, cardinalities: Vec<usize>, cpts: Vec<Cpt>) -> Result<Self, CausalError> {
        let n = dag.node_count();
        if cardinalities.len() != n || cpts.len() != n {
            return Err(CausalError::InvalidQuery(format!(
                "expected {n} cardinalities and CPTs, got {} and {}",
                cardinalities.len(),
                cpts.len()
            )));
        }
        for (v, cpt) in cpts.iter().enumerate() {
            let name = dag.name(v);
            let k = cardinalities[v];
            if k == 0 {
                return Err(CausalError::InvalidCpt {
                    node: name.to_string(),
                    reason: "cardinality must be positive".into(),
                });
            }
            let expected_rows: usize = dag
                .parents_of(v)
                .iter()
                .map(|&p| cardinalities[p])
                .product();
            if cpt.rows.len() != expected_rows {
                return Err(CausalError::InvalidCpt {
                    node: name.to_string(),
                    reason: format!(
                        "expected {expected_rows} rows (product of parent cardinalities), got {}",
                        cpt.rows.len()
                    ),
                });
            }
            for (r, row) in cpt.rows.iter().enumerate() {
                if row.len() != k {
                    return Err(CausalError::InvalidCpt {
                        node: name.to_string(),
                        reason: format!("row {r} has {} entries, expected {k}", row.len()),
                    });
                }
                if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                    return Err(CausalError::InvalidCpt {
                        node: name.to_string(),
                        reason: format!("row {r} has probabilities outside [0, 1]"),
                    });
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > ROW_SUM_TOL {
                    return Err(CausalError::InvalidCpt {
                        node: name.to_string(),
                        reason: format!("row {r} sums to {s}, not 1"),
                    });
                }
            }
        }
        Ok(Self {
            dag,
            cardinalities,
            cpts,
        })
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn cardinality(&self, node: &str) -> Result<usize, CausalError> {
        Ok(self.cardinalities[self.dag.node_index(node)?])
    }

    fn joint_cells(&self) -> Result<u64, CausalError> {
        let mut cells: u128 = 1;
        for &k in &self.cardinalities {
            cells = cells.saturating_mul(k as u128);
            if cells > MAX_JOINT_CELLS as u128 {
                return Err(CausalError::StateSpaceTooLarge {
                    cells,
                    max: MAX_JOINT_CELLS,
                });
            }
        }
        Ok(cells as u64)
    }

    /// CPT row index for node `v` under the full `assignment`.
    fn parent_row(&self, v: usize, assignment: &[usize]) -> usize {
        let mut row = 0;
        for &p in self.dag.parents_of(v) {
            row = row * self.cardinalities[p] + assignment[p];
        }
        row
    }

    /// Probability of a complete assignment under the observational model.
    pub fn joint_probability(&self, assignment: &[usize]) -> f64 {
        let mut p = 1.0;
        for v in 0..self.dag.node_count() {
            let row = self.parent_row(v, assignment);
            p *= self.cpts[v].rows[row][assignment[v]];
        }
        p
    }

    /// Iterates all complete assignments, calling `f(assignment, probability)`.
    pub fn for_each_joint<F: FnMut(&[usize], f64)>(&self, mut f: F) -> Result<(), CausalError> {
        self.joint_cells()?;
        let n = self.dag.node_count();
        let mut assignment = vec![0usize; n];
        loop {
            f(&assignment, self.joint_probability(&assignment));
            // Mixed-radix increment, last node fastest.
            let mut pos = n;
            loop {
                if pos == 0 {
                    return Ok(());
                }
                pos -= 1;
                assignment[pos] += 1;
                if assignment[pos] < self.cardinalities[pos] {
                    break;
                }
                assignment[pos] = 0;
            }
        }
    }

    /// Back-door adjustment: `sum_z Pr(outcome | x, z) Pr(z)` by exact
    /// enumeration. Requires `z` to satisfy the back-door criterion and the
    /// conditioning cells `(x, z)` to have positive probability wherever
    /// `Pr(z) > 0`.
    pub fn backdoor_adjust(
        &self,
        treatment: &str,
        treatment_value: usize,
        outcome: &str,
        z: &[&str],
    ) -> Result<Vec<f64>, CausalError> {
        if !self.dag.satisfies_backdoor(treatment, outcome, z)? {
            return Err(CausalError::BackdoorViolation {
                treatment: treatment.to_string(),
                outcome: outcome.to_string(),
                z: z.iter().map(|s| s.to_string()).collect(),
            });
        }
        let ti = self.dag.node_index(treatment)?;
        let oi = self.dag.node_index(outcome)?;
        if treatment_value >= self.cardinalities[ti] {
            return Err(CausalError::InvalidQuery(format!(
                "state {treatment_value} out of range for `{treatment}`"
            )));
        }
        let z_idx: Vec<usize> = z
            .iter()
            .map(|n| self.dag.node_index(n))
            .collect::<Result<_, _>>()?;
        let n_y = self.cardinalities[oi];
        let n_z_cells: usize = z_idx.iter().map(|&v| self.cardinalities[v]).product();

        let mut pr_z = vec![0.0; n_z_cells];
        let mut pr_xz = vec![0.0; n_z_cells];
        let mut pr_yxz = vec![vec![0.0; n_y]; n_z_cells];
        self.for_each_joint(|assignment, p| {
            let mut cell = 0;
            for &v in &z_idx {
                cell = cell * self.cardinalities[v] + assignment[v];
            }
            pr_z[cell] += p;
            if assignment[ti] == treatment_value {
                pr_xz[cell] += p;
                pr_yxz[cell][assignment[oi]] += p;
            }
        })?;

        let mut out = vec![0.0; n_y];
        for cell in 0..n_z_cells {
            if pr_z[cell] <= 0.0 {
                continue;
            }
            if pr_xz[cell] <= 0.0 {
                return Err(CausalError::DegenerateSupport {
                    cell: self.describe_cell(treatment, treatment_value, &z_idx, cell),
                });
            }
            for y in 0..n_y {
                out[y] += pr_yxz[cell][y] / pr_xz[cell] * pr_z[cell];
            }
        }
        Ok(out)
    }

    fn describe_cell(&self, treatment: &str, x: usize, z_idx: &[usize], mut cell: usize) -> String {
        let mut states = vec![0usize; z_idx.len()];
        for (slot, &v) in z_idx.iter().enumerate().rev() {
            states[slot] = cell % self.cardinalities[v];
            cell /= self.cardinalities[v];
        }
        let zs: Vec<String> = z_idx
            .iter()
            .zip(&states)
            .map(|(&v, &s)| format!("{}={}", self.dag.name(v), s))
            .collect();
        format!("{treatment}={x}, {}", zs.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Z -> X, Z -> Y, X -> Y with binary nodes.
    fn confounder_scm(x_effect: f64) -> DiscreteScm {
        let dag = Dag::new(&["Z", "X", "Y"], &[("Z", "X"), ("Z", "Y"), ("X", "Y")]).unwrap();
        let cpt_z = Cpt {
            rows: vec![vec![0.4, 0.6]],
        };
        let cpt_x = Cpt {
            rows: vec![vec![0.7, 0.3], vec![0.2, 0.8]],
        };
        // Rows ordered by (Z, X); bump Pr(Y=1) by x_effect when X=1.
        let base = [0.3, 0.6];
        let rows = [(0, 0), (0, 1), (1, 0), (1, 1)]
            .iter()
            .map(|&(z, x)| {
                let p1: f64 = base[z] + x_effect * x as f64;
                vec![1.0 - p1, p1]
            })
            .collect();
        let cpt_y = Cpt { rows };
        DiscreteScm::new(dag, vec![2, 2, 2], vec![cpt_z, cpt_x, cpt_y]).unwrap()
    }

    #[test]
    fn null_effect_adjustment_equals_marginal() {
        let scm = confounder_scm(0.0);
        let adj = scm.backdoor_adjust("X", 1, "Y", &["Z"]).unwrap();
        let mut marginal = vec![0.0; 2];
        scm.for_each_joint(|a, p| marginal[a[2]] += p).unwrap();
        for (a, m) in adj.iter().zip(&marginal) {
            assert!((a - m).abs() < 1e-12, "{a} vs {m}");
        }
    }

    #[test]
    fn adjustment_sums_to_one() {
        let scm = confounder_scm(0.25);
        for x in 0..2 {
            let adj = scm.backdoor_adjust("X", x, "Y", &["Z"]).unwrap();
            let total: f64 = adj.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backdoor_violation_is_an_error() {
        let scm = confounder_scm(0.25);
        let err = scm.backdoor_adjust("X", 1, "Y", &[]).unwrap_err();
        assert!(matches!(err, CausalError::BackdoorViolation { .. }));
    }

    #[test]
    fn degenerate_support_names_the_cell() {
        // Z deterministic into X: Pr(X=1 | Z=0) = 0, so the (X=1, Z=0) cell
        // is empty while Pr(Z=0) > 0.
        let dag = Dag::new(&["Z", "X", "Y"], &[("Z", "X"), ("Z", "Y"), ("X", "Y")]).unwrap();
        let cpt_z = Cpt {
            rows: vec![vec![0.5, 0.5]],
        };
        let cpt_x = Cpt {
            rows: vec![vec![1.0, 0.0], vec![0.3, 0.7]],
        };
        let cpt_y = Cpt {
            rows: vec![vec![0.5, 0.5]; 4],
        };
        let scm = DiscreteScm::new(dag, vec![2, 2, 2], vec![cpt_z, cpt_x, cpt_y]).unwrap();
        let err = scm.backdoor_adjust("X", 1, "Y", &["Z"]).unwrap_err();
        match err {
            CausalError::DegenerateSupport { cell } => {
                assert!(cell.contains("X=1") && cell.contains("Z=0"), "{cell}");
            }
            other => panic!("expected degenerate support, got {other}"),
        }
    }

    #[test]
    fn cpt_validation() {
        let dag = Dag::new(&["A"], &[]).unwrap();
        let bad = Cpt {
            rows: vec![vec![0.5, 0.6]],
        };
        assert!(matches!(
            DiscreteScm::new(dag, vec![2], vec![bad]).unwrap_err(),
            CausalError::InvalidCpt { .. }
        ));
    }

    #[test]
    fn state_space_cap() {
        let names: Vec<String> = (0..21).map(|i| format!("n{i}")).collect();
        let dag = Dag::new(&names, &[]).unwrap();
        let cpts = vec![
            Cpt {
                rows: vec![vec![0.5, 0.5]]
            };
            21
        ];
        let scm = DiscreteScm::new(dag, vec![2; 21], cpts).unwrap();
        assert!(matches!(
            scm.for_each_joint(|_, _| {}).unwrap_err(),
            CausalError::StateSpaceTooLarge { .. }
        ));
    }
}
