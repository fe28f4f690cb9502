use cafe_core::graph::{CausalGraph, VariableDecl};
use proptest::prelude::*;

/// Random DAG on `n` nodes where node `n-1` is the outcome and edges only
/// run from lower to higher index.
fn random_dag(n: usize, mask: &[bool]) -> CausalGraph {
    let name = |i: usize| {
        if i == n - 1 {
            "Y".to_string()
        } else {
            format!("X{i}")
        }
    };
    let nodes = (0..n)
        .map(|i| VariableDecl::continuous(name(i), -1.0, 1.0))
        .collect();
    let mut edges = Vec::new();
    let mut k = 0;
    for a in 0..n {
        for b in a + 1..n {
            if mask[k] {
                edges.push((name(a), name(b)));
            }
            k += 1;
        }
    }
    CausalGraph::new(nodes, edges, "Y").unwrap()
}

fn dag_strategy() -> impl Strategy<Value = CausalGraph> {
    (3usize..=8).prop_flat_map(|n| {
        prop::collection::vec(prop::bool::weighted(0.35), n * (n - 1) / 2)
            .prop_map(move |mask| random_dag(n, &mask))
    })
}

/// Path-enumeration d-separation: every simple path between x and y in the
/// skeleton must be blocked by z.
fn brute_d_separated(g: &CausalGraph, x: usize, y: usize, z: &[usize]) -> bool {
    let n = g.len();
    let mut path = vec![x];
    let mut on_path = vec![false; n];
    on_path[x] = true;
    !open_path_exists(g, y, z, &mut path, &mut on_path)
}

fn open_path_exists(g: &CausalGraph, y: usize, z: &[usize], path: &mut Vec<usize>, on: &mut [bool]) -> bool {
    let last = *path.last().unwrap();
    if last == y {
        return path_is_open(g, path, z);
    }
    let neighbours: Vec<usize> = g
        .parents_idx(last)
        .iter()
        .chain(g.children_idx(last))
        .copied()
        .collect();
    for v in neighbours {
        if on[v] {
            continue;
        }
        on[v] = true;
        path.push(v);
        let found = open_path_exists(g, y, z, path, on);
        path.pop();
        on[v] = false;
        if found {
            return true;
        }
    }
    false
}

fn path_is_open(g: &CausalGraph, path: &[usize], z: &[usize]) -> bool {
    for w in path.windows(3) {
        let (a, m, b) = (w[0], w[1], w[2]);
        let collider = g.has_edge(a, m) && g.has_edge(b, m);
        if collider {
            let activated = z.contains(&m) || g.descendants_idx(m).iter().any(|d| z.contains(d));
            if !activated {
                return false;
            }
        } else if z.contains(&m) {
            return false;
        }
    }
    true
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn topological_order_respects_edges(g in dag_strategy()) {
        let order = g.topo_order_idx();
        prop_assert_eq!(order.len(), g.len());
        let pos = |v: usize| order.iter().position(|&u| u == v).unwrap();
        for (a, b) in g.edges() {
            let (ia, ib) = (g.index_of(a).unwrap(), g.index_of(b).unwrap());
            prop_assert!(pos(ia) < pos(ib));
        }
    }

    #[test]
    fn parent_sets_are_valid_backdoor_sets(g in dag_strategy()) {
        for f in g.feature_nodes() {
            let z = g.backdoor_set_idx(f);
            prop_assert!(g.is_valid_backdoor_idx(f, &z), "Pa({}) rejected", g.name(f));
        }
    }

    #[test]
    fn d_separation_matches_path_enumeration(
        g in dag_strategy(),
        x in 0usize..8,
        y in 0usize..8,
        zmask in prop::collection::vec(any::<bool>(), 8),
    ) {
        let n = g.len();
        let (x, y) = (x % n, y % n);
        prop_assume!(x != y);
        let z: Vec<usize> = (0..n).filter(|&v| zmask[v] && v != x && v != y).collect();
        prop_assert_eq!(g.d_separated_idx(x, y, &z), brute_d_separated(&g, x, y, &z));
    }

    #[test]
    fn mediators_lie_on_directed_paths(g in dag_strategy()) {
        for f in g.feature_nodes() {
            let paths = g.directed_paths(g.name(f)).unwrap();
            let mut on_paths: Vec<String> = paths
                .paths
                .iter()
                .flat_map(|p| p[1..p.len() - 1].iter().cloned())
                .collect();
            on_paths.sort();
            on_paths.dedup();
            let mediators: Vec<String> = g.mediators(g.name(f)).unwrap().into_iter().collect();
            prop_assert_eq!(mediators, on_paths);
        }
    }
}
