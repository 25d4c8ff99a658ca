use std::collections::BTreeMap;

use super::dag::Dag;

/// The built-in search-ad causal diagrams, keyed `figure1`, `figure2`,
/// `figure3`, `figure4`, `figure6`.
///
/// `figure1`: query-level mechanics (query, auction, organic results, paid
/// impression, sales). `figure2`: the simple scenario where the query-volume
/// summary V drives both spend and the organic/demand contributions to sales.
/// `figure3`/`figure4`: the complex scenario with a non-search channel X2;
/// figure4 is figure3 minus the budget -> X1 edge. `figure6`: a finer
/// query-level diagram in which the organic/paid click loop is broken in the
/// direction paid_clicks -> organic_clicks (tagged as the cannibalization
/// edge) and the delayed paid_clicks -> ad_rank feedback is recorded as a
/// note rather than drawn.
pub fn builtin_diagrams() -> BTreeMap<String, Dag> {
    let mut out = BTreeMap::new();

    let figure1 = Dag::new(
        &["Q", "A", "O", "P", "Y"],
        &[
            ("Q", "O"),
            ("Q", "P"),
            ("A", "P"),
            ("O", "Y"),
            ("P", "Y"),
        ],
    )
    .expect("figure1 is a valid DAG");
    out.insert("figure1".to_string(), figure1);

    let figure2 = Dag::new(
        &[
            "consumer_demand",
            "V",
            "auction",
            "organic_search",
            "X",
            "epsilon0",
            "epsilon1",
            "Y",
        ],
        &[
            ("consumer_demand", "V"),
            ("consumer_demand", "epsilon0"),
            ("V", "auction"),
            ("V", "X"),
            ("V", "organic_search"),
            ("auction", "X"),
            ("organic_search", "epsilon1"),
            ("epsilon0", "Y"),
            ("epsilon1", "Y"),
            ("X", "Y"),
        ],
    )
    .expect("figure2 is a valid DAG");
    out.insert("figure2".to_string(), figure2);

    let complex_nodes = [
        "consumer_demand",
        "V",
        "auction",
        "organic_search",
        "budget",
        "X1",
        "X2",
        "epsilon0",
        "epsilon1",
        "epsilon2",
        "Y",
    ];
    let mut complex_edges = vec![
        ("consumer_demand", "V"),
        ("consumer_demand", "epsilon0"),
        ("consumer_demand", "X2"),
        ("V", "auction"),
        ("V", "X1"),
        ("V", "organic_search"),
        ("auction", "X1"),
        ("organic_search", "epsilon1"),
        ("X2", "epsilon2"),
        ("epsilon0", "Y"),
        ("epsilon1", "Y"),
        ("epsilon2", "Y"),
        ("X1", "Y"),
    ];
    let figure4 = Dag::new(&complex_nodes, &complex_edges).expect("figure4 is a valid DAG");
    complex_edges.push(("budget", "X1"));
    let figure3 = Dag::new(&complex_nodes, &complex_edges).expect("figure3 is a valid DAG");
    out.insert("figure3".to_string(), figure3);
    out.insert("figure4".to_string(), figure4);

    let mut figure6 = Dag::new(
        &[
            "query",
            "bid",
            "budget",
            "ad_rank",
            "paid_clicks",
            "ad_spend",
            "organic_rank",
            "organic_clicks",
            "sales",
        ],
        &[
            ("query", "ad_rank"),
            ("bid", "ad_rank"),
            ("budget", "ad_rank"),
            ("ad_rank", "paid_clicks"),
            ("paid_clicks", "ad_spend"),
            ("query", "organic_clicks"),
            ("organic_rank", "organic_clicks"),
            ("paid_clicks", "organic_clicks"),
            ("paid_clicks", "sales"),
            ("organic_clicks", "sales"),
        ],
    )
    .expect("figure6 is a valid DAG");
    figure6
        .tag_edge("paid_clicks", "organic_clicks", "cannibalization")
        .expect("edge exists");
    figure6.add_note(
        "paid_clicks -> ad_rank exists at a later time step (click-through feedback); \
         the static graph omits it",
    );
    out.insert("figure6".to_string(), figure6);

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_has_five_diagrams_all_acyclic() {
        let cat = builtin_diagrams();
        let keys: Vec<&str> = cat.keys().map(String::as_str).collect();
        assert_eq!(keys, ["figure1", "figure2", "figure3", "figure4", "figure6"]);
        // Construction already rejects cycles; re-check via topological order.
        for dag in cat.values() {
            assert_eq!(dag.topological_order().len(), dag.node_count());
        }
    }

    #[test]
    fn figure2_query_volume_children() {
        let cat = builtin_diagrams();
        let g = &cat["figure2"];
        let v = g.node_index("V").unwrap();
        let children: Vec<&str> = g.children_of(v).iter().map(|&c| g.name(c)).collect();
        assert!(children.contains(&"X"));
        assert!(children.contains(&"organic_search"));
        assert!(children.contains(&"auction"));
    }

    #[test]
    fn figure4_is_figure3_minus_budget_edge() {
        let cat = builtin_diagrams();
        let mut e3 = cat["figure3"].edges();
        let e4 = cat["figure4"].edges();
        assert_eq!(e3.len(), e4.len() + 1);
        e3.retain(|(p, c)| !(p == "budget" && c == "X1"));
        assert_eq!(e3, e4);
    }

    #[test]
    fn figure6_cannibalization_edge_is_tagged() {
        let cat = builtin_diagrams();
        let g = &cat["figure6"];
        assert_eq!(
            g.edge_tag("paid_clicks", "organic_clicks"),
            Some("cannibalization")
        );
        assert!(!g.notes().is_empty());
    }

    #[test]
    fn figure1_query_meets_backdoor_for_paid_impression() {
        let cat = builtin_diagrams();
        let g = &cat["figure1"];
        assert!(g.satisfies_backdoor("P", "Y", &["Q"]).unwrap());
    }
}
