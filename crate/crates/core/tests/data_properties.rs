use cafe_core::data::{Atom, CmpOp, Dataset, Literal, Predicate, Schema};
use cafe_core::graph::{CausalGraph, VariableDecl};
use proptest::prelude::*;

const OPS: [CmpOp; 6] = [CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge, CmpOp::Eq, CmpOp::Ne];

fn op() -> impl Strategy<Value = CmpOp> {
    (0usize..6).prop_map(|i| OPS[i])
}

fn literal() -> impl Strategy<Value = Literal> {
    prop_oneof![
        (-1e6f64..1e6).prop_map(Literal::Number),
        "[a-z][a-z0-9_]{0,4}".prop_map(Literal::Token),
    ]
}

fn predicate() -> impl Strategy<Value = Predicate> {
    prop::collection::vec(
        ("[a-zA-Z_][a-zA-Z0-9_]{0,6}", op(), literal()).prop_map(|(feature, op, literal)| Atom {
            feature,
            op,
            literal,
        }),
        0..4,
    )
    .prop_map(|atoms| Predicate { atoms })
}

fn graph() -> CausalGraph {
    CausalGraph::new(
        vec![
            VariableDecl::continuous("x", 0.0, 10.0),
            VariableDecl::categorical("c", ["lo", "mid", "hi"]),
            VariableDecl::categorical("k", ["1", "2", "5"]),
            VariableDecl::continuous("y", -100.0, 100.0),
        ],
        vec![
            ("x".into(), "y".into()),
            ("c".into(), "y".into()),
            ("k".into(), "y".into()),
        ],
        "y",
    )
    .unwrap()
}

fn dataset(rows: Vec<(f64, usize, usize, f64)>) -> Dataset {
    let g = graph();
    let schema = Schema::from_graph(&g);
    let ks = [1.0, 2.0, 5.0];
    let y = rows.iter().map(|r| r.3).collect();
    let rows = rows
        .into_iter()
        .map(|(x, c, k, _)| vec![x, c as f64, ks[k]])
        .collect();
    Dataset::from_rows(schema, rows, Some(y)).unwrap()
}

fn rows_strategy() -> impl Strategy<Value = Vec<(f64, usize, usize, f64)>> {
    prop::collection::vec((0.0f64..10.0, 0usize..3, 0usize..3, -100.0f64..100.0), 1..60)
}

/// Predicates over x (numeric), c (token equality) and k (numeric codes).
fn bindable_predicate() -> impl Strategy<Value = Predicate> {
    let x_atom = (op(), 0.0f64..10.0).prop_map(|(op, v)| Atom {
        feature: "x".into(),
        op,
        literal: Literal::Number((v * 4.0).round() / 4.0),
    });
    let c_atom = (prop::bool::ANY, 0usize..3).prop_map(|(eq, i)| Atom {
        feature: "c".into(),
        op: if eq { CmpOp::Eq } else { CmpOp::Ne },
        literal: Literal::Token(["lo", "mid", "hi"][i].into()),
    });
    let k_atom = (op(), 0usize..3).prop_map(|(op, i)| Atom {
        feature: "k".into(),
        op,
        literal: Literal::Number([1.0, 2.0, 5.0][i]),
    });
    prop::collection::vec(prop_oneof![x_atom, c_atom, k_atom], 0..4).prop_map(|atoms| Predicate { atoms })
}

fn compare(op: CmpOp, a: f64, b: f64) -> bool {
    match op {
        CmpOp::Lt => a < b,
        CmpOp::Le => a <= b,
        CmpOp::Gt => a > b,
        CmpOp::Ge => a >= b,
        CmpOp::Eq => a == b,
        CmpOp::Ne => a != b,
    }
}

fn naive_match(p: &Predicate, x: f64, c: usize, k: f64) -> bool {
    p.atoms.iter().all(|a| match (a.feature.as_str(), &a.literal) {
        ("x", Literal::Number(v)) => compare(a.op, x, *v),
        ("k", Literal::Number(v)) => compare(a.op, k, *v),
        ("c", Literal::Token(t)) => {
            let same = ["lo", "mid", "hi"][c] == t;
            if a.op == CmpOp::Eq {
                same
            } else {
                !same
            }
        }
        _ => unreachable!(),
    })
}

proptest! {
    #[test]
    fn predicate_text_round_trips(p in predicate()) {
        let text = p.to_string();
        let back: Predicate = text.parse().unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn select_matches_row_scan(rows in rows_strategy(), p in bindable_predicate()) {
        let ds = dataset(rows.clone());
        let bound = p.bind(ds.schema()).unwrap();
        let picked = ds.matching(&bound);
        let ks = [1.0, 2.0, 5.0];
        let naive: Vec<usize> = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| naive_match(&p, r.0, r.1, ks[r.2]))
            .map(|(i, _)| i)
            .collect();
        prop_assert_eq!(&picked, &naive);
        let sel = ds.select(&bound);
        prop_assert_eq!(sel.n_rows(), naive.len());
        for (j, &i) in naive.iter().enumerate() {
            prop_assert_eq!(sel.row(j), ds.row(i));
            prop_assert_eq!(sel.outcome_at(j), ds.outcome_at(i));
        }
    }

    #[test]
    fn csv_round_trip_is_exact(rows in rows_strategy()) {
        let ds = dataset(rows);
        let g = graph();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf, &g).unwrap();
        let back = Dataset::read_csv(buf.as_slice(), Schema::from_graph(&g)).unwrap();
        prop_assert_eq!(back.to_rows(), ds.to_rows());
        prop_assert_eq!(back.outcome().unwrap(), ds.outcome().unwrap());
    }
}

#[test]
fn malformed_predicates_report_their_position() {
    let err = "x > 5 & c ? lo".parse::<Predicate>().unwrap_err();
    assert_eq!(err.offset, 10);
    let err = "x > -".parse::<Predicate>().unwrap_err();
    assert_eq!(err.offset, 4);
}
