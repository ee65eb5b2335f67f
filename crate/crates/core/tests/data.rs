use std::collections::HashSet;
use std::io::Write;

use mambular::data::{
    generate_synthetic_ordering_dataset, kfold_split, load_csv, ColumnKind, FeatureValues,
    SchemaColumn, SchemaFile, Task, SYNTHETIC_ROWS,
};
use mambular::Error;
use proptest::prelude::*;

fn schema() -> SchemaFile {
    SchemaFile {
        columns: vec![
            SchemaColumn {
                name: "sex".into(),
                kind: ColumnKind::Categorical,
            },
            SchemaColumn {
                name: "length".into(),
                kind: ColumnKind::Numeric,
            },
        ],
        target: "rings".into(),
        task: Task::Regression,
    }
}

fn write_csv(body: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(body.as_bytes()).unwrap();
    f
}

#[test]
fn csv_columns_follow_schema_and_skip_extras() {
    let f = write_csv("rings,unused,sex,length\n7,x,M,0.45\n9,y,F,0.5\n");
    let ds = load_csv(f.path(), &schema()).unwrap();
    assert_eq!(ds.n_rows(), 2);
    assert_eq!(ds.target, vec![7.0, 9.0]);
    assert!(ds.feature("unused").is_none());
    match &ds.feature("sex").unwrap().values {
        FeatureValues::Categorical(v) => assert_eq!(v, &["M", "F"]),
        _ => panic!("sex should be categorical"),
    }
}

#[test]
fn missing_cells_drop_rows() {
    let f = write_csv("sex,length,rings\nM,0.4,7\n?,0.5,8\nF,NA,9\nI,0.3,\nI,0.2,10\n");
    let ds = load_csv(f.path(), &schema()).unwrap();
    assert_eq!(ds.target, vec![7.0, 10.0]);
}

#[test]
fn parse_error_names_the_line() {
    let f = write_csv("sex,length,rings\nM,0.4,7\nF,long,9\n");
    match load_csv(f.path(), &schema()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn schema_file_rejects_unknown_keys_and_duplicates() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    write!(
        f,
        r#"{{"columns":[{{"name":"a","kind":"numeric"}}],"target":"y","task":"regression","extra":1}}"#
    )
    .unwrap();
    assert!(SchemaFile::load(f.path()).is_err());

    let mut s = schema();
    s.columns.push(s.columns[0].clone());
    assert!(s.validate().is_err());
    let mut s = schema();
    s.target = "length".into();
    assert!(s.validate().is_err());
}

#[test]
fn binary_targets_are_checked() {
    let mut s = schema();
    s.task = Task::Binary;
    let f = write_csv("sex,length,rings\nM,0.4,1\nF,0.5,2\n");
    assert!(load_csv(f.path(), &s).is_err());
}

proptest! {
    #[test]
    fn folds_partition_rows(n in 10usize..400, k in 2usize..7, seed in 0u64..1000) {
        let plan = kfold_split(n, k, seed, 0.2).unwrap();
        let mut test_union = HashSet::new();
        for fold in plan.folds() {
            let t: HashSet<_> = fold.test.iter().copied().collect();
            let tr: HashSet<_> = fold.train.iter().copied().collect();
            let v: HashSet<_> = fold.val.iter().copied().collect();
            prop_assert!(t.is_disjoint(&tr) && t.is_disjoint(&v) && tr.is_disjoint(&v));
            prop_assert_eq!(t.len() + tr.len() + v.len(), n);
            prop_assert!(!fold.train.is_empty() && !fold.val.is_empty());
            for r in t {
                prop_assert!(test_union.insert(r));
            }
        }
        prop_assert_eq!(test_union.len(), n);
    }
}

#[test]
fn folds_are_seed_deterministic() {
    let a = kfold_split(100, 5, 3, 0.2).unwrap();
    let b = kfold_split(100, 5, 3, 0.2).unwrap();
    let c = kfold_split(100, 5, 4, 0.2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.assignments, c.assignments);
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn numeric<'a>(ds: &'a mambular::data::TabularDataset, name: &str) -> &'a [f64] {
    match &ds.feature(name).unwrap().values {
        FeatureValues::Numeric(v) => v,
        _ => panic!("{name} is not numeric"),
    }
}

#[test]
fn synthetic_dataset_shape_and_structure() {
    let (ds, truth) = generate_synthetic_ordering_dataset(0);
    assert_eq!(ds.n_rows(), SYNTHETIC_ROWS);
    assert_eq!(ds.n_features(), 10);
    assert_eq!(truth.interactions.len(), 3);
    // Sampling error of a correlation at n = 5000 is about 0.01.
    assert!((correlation(numeric(&ds, "x1"), numeric(&ds, "x2")) - 0.8).abs() < 0.03);
    assert!((correlation(numeric(&ds, "x4"), numeric(&ds, "x5")) - 0.6).abs() < 0.03);
    assert!(correlation(numeric(&ds, "x1"), numeric(&ds, "x3")).abs() < 0.05);
    let x1 = numeric(&ds, "x1");
    let mean = x1.iter().sum::<f64>() / x1.len() as f64;
    assert!(mean.abs() < 1e-12);
}

#[test]
fn synthetic_seeds_differ_and_repeat() {
    let (a, _) = generate_synthetic_ordering_dataset(1);
    let (b, _) = generate_synthetic_ordering_dataset(1);
    let (c, _) = generate_synthetic_ordering_dataset(2);
    assert_eq!(a, b);
    assert_ne!(a.target, c.target);
}

#[test]
fn csv_round_trip_of_synthetic_data() {
    let (ds, _) = generate_synthetic_ordering_dataset(5);
    let small = ds.subset(&(0..50).collect::<Vec<_>>());
    let f = tempfile::NamedTempFile::new().unwrap();
    small.write_csv(f.path()).unwrap();
    let back = load_csv(f.path(), &small.schema_file()).unwrap();
    assert_eq!(back, small);
}
