use std::collections::BTreeMap;

use oms_core::clustering::HashEmbedding;
use oms_core::evaluation::{
    average_reports, embed_similarity, normalize_table, rouge1, Aggregation, ColumnKind, EvalColumn, MethodResult,
};

const DESCRIPTION: &str = "The Zorba camera is a compact mirrorless camera with a fast lens.";

// Reference values from the rouge_score package (RougeScorer(["rouge1"]), no stemming).
#[test]
fn rouge1_matches_reference_implementation() {
    let cases: [(&[&str], &str, f64, f64); 4] = [
        (&["zorba camera", "compact camera", "fast lens"], DESCRIPTION, 0.6666666666666666, 0.2857142857142857),
        (&["red shoe", "blue shoe"], DESCRIPTION, 0.0, 0.0),
        (&["camera camera camera camera"], "camera lens", 0.3333333333333333, 0.3333333333333333),
        (&["Wi-Fi camera", "4K video"], "4k video camera with wi-fi", 0.9090909090909091, 0.5833333333333333),
    ];
    for (kws, reference, bag, per) in cases {
        assert!((rouge1(kws, reference, Aggregation::Bag) - bag).abs() < 1e-12, "{kws:?}");
        assert!((rouge1(kws, reference, Aggregation::PerKeywordMean) - per).abs() < 1e-12, "{kws:?}");
    }
}

#[test]
fn rouge1_empty_inputs() {
    assert_eq!(rouge1(&[], DESCRIPTION, Aggregation::Bag), 0.0);
    assert_eq!(rouge1(&["camera"], "", Aggregation::Bag), 0.0);
    assert_eq!(rouge1(&[], DESCRIPTION, Aggregation::PerKeywordMean), 0.0);
}

#[test]
fn embed_similarity_bounds() {
    let emb = HashEmbedding::new(1, 32);
    let same = embed_similarity(&["compact camera"], "compact camera", &emb, Aggregation::Bag).unwrap();
    assert!((same - 1.0).abs() < 1e-9);
    let other = embed_similarity(&["red shoe"], DESCRIPTION, &emb, Aggregation::Bag).unwrap();
    assert!(other < same);
    assert_eq!(embed_similarity(&[], DESCRIPTION, &emb, Aggregation::PerKeywordMean).unwrap(), 0.0);
}

fn method(name: &str, values: &[(&str, f64)]) -> MethodResult {
    MethodResult { method: name.into(), values: values.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
}

fn columns() -> Vec<EvalColumn> {
    vec![
        EvalColumn::new("clicks", ColumnKind::Benefit),
        EvalColumn::new("cpc", ColumnKind::Cost),
        EvalColumn::new("volume", ColumnKind::Benefit),
        EvalColumn::new("rouge1", ColumnKind::Raw),
    ]
}

#[test]
fn normalized_table_fixture() {
    let results = [
        method("oms", &[("clicks", 30.0), ("cpc", 50.0), ("volume", 7.0), ("rouge1", 0.4)]),
        method("baseline", &[("clicks", 10.0), ("cpc", 100.0), ("volume", 7.0), ("rouge1", 0.2)]),
        method("random", &[("clicks", 20.0), ("cpc", 50.0), ("volume", 7.0), ("rouge1", 0.1)]),
    ];
    let report = normalize_table(&results, &columns()).unwrap();
    let got: BTreeMap<&str, Vec<f64>> = report
        .rows
        .iter()
        .map(|r| (r.method.as_str(), columns().iter().map(|c| r.normalized[&c.name]).collect()))
        .collect();
    assert_eq!(got["oms"], vec![1.0, 1.0, 0.5, 0.4]);
    assert_eq!(got["baseline"], vec![0.0, 0.0, 0.5, 0.2]);
    assert_eq!(got["random"], vec![0.5, 1.0, 0.5, 0.1]);
    assert_eq!(report.rows.iter().map(|r| r.method.as_str()).collect::<Vec<_>>(), ["baseline", "oms", "random"]);
}

#[test]
fn normalized_table_errors() {
    let one = [method("oms", &[("clicks", 1.0), ("cpc", 1.0), ("volume", 1.0), ("rouge1", 0.0)])];
    assert!(normalize_table(&one, &columns()).is_err());
    let missing = [method("a", &[("clicks", 1.0)]), method("b", &[("clicks", 2.0)])];
    assert!(normalize_table(&missing, &columns()).is_err());
    let dup = [
        method("a", &[("clicks", 1.0), ("cpc", 1.0), ("volume", 1.0), ("rouge1", 0.0)]),
        method("a", &[("clicks", 2.0), ("cpc", 1.0), ("volume", 1.0), ("rouge1", 0.0)]),
    ];
    assert!(normalize_table(&dup, &columns()).is_err());
    assert!(average_reports(&[]).is_err());
}

#[test]
fn per_product_then_average() {
    let p1 = normalize_table(
        &[
            method("oms", &[("clicks", 10.0), ("cpc", 1.0), ("volume", 1.0), ("rouge1", 0.5)]),
            method("random", &[("clicks", 0.0), ("cpc", 2.0), ("volume", 3.0), ("rouge1", 0.1)]),
        ],
        &columns(),
    )
    .unwrap();
    let p2 = normalize_table(
        &[
            method("oms", &[("clicks", 1000.0), ("cpc", 5.0), ("volume", 1.0), ("rouge1", 0.3)]),
            method("random", &[("clicks", 2000.0), ("cpc", 4.0), ("volume", 2.0), ("rouge1", 0.3)]),
        ],
        &columns(),
    )
    .unwrap();
    let avg = average_reports(&[p1, p2]).unwrap();
    let oms = avg.rows.iter().find(|r| r.method == "oms").unwrap();
    assert_eq!(oms.normalized["clicks"], 0.5);
    assert_eq!(oms.normalized["cpc"], 0.5);
    assert_eq!(oms.normalized["volume"], 0.0);
    assert!((oms.normalized["rouge1"] - 0.4).abs() < 1e-12);
    assert_eq!(oms.raw["clicks"], 505.0);
    assert!(avg.provenance.contains("per product"));
    let csv = avg.to_csv();
    assert!(csv.starts_with("method,clicks,cpc,volume,rouge1,clicks_norm"));
}
