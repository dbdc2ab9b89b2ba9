use ndarray::Array2;
use proptest::prelude::*;
use stratx::data::ExperimentData;
use stratx::io::{ingest_reader, write_csv};

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn emit_then_ingest_is_bit_exact(
        rows in 4usize..12,
        values in proptest::collection::vec(finite(), 12 * 5),
        blocks in proptest::collection::vec(0usize..3, 12),
        z in proptest::collection::vec(0u8..2, 12),
    ) {
        let p = 3;
        let k = 1;
        let x = Array2::from_shape_fn((rows, p), |(i, j)| values[i * 5 + j]);
        let w = Array2::from_shape_fn((rows, k), |(i, _)| values[i * 5 + 3]);
        let y: Vec<f64> = (0..rows).map(|i| values[i * 5 + 4]).collect();
        // first-appearance order so block indices survive re-indexing
        let mut seen: Vec<usize> = Vec::new();
        let block_of: Vec<usize> = blocks[..rows]
            .iter()
            .map(|b| match seen.iter().position(|s| s == b) {
                Some(i) => i,
                None => { seen.push(*b); seen.len() - 1 }
            })
            .collect();
        let data = ExperimentData {
            x,
            x_names: vec!["x1".into(), "x2".into(), "x3".into()],
            w,
            w_names: vec!["w1".into()],
            block_names: seen.iter().map(|b| format!("blk{b}")).collect(),
            block_of,
            z: Some(z[..rows].to_vec()),
            y: Some(y),
        };
        let mut buf = Vec::new();
        let schema = write_csv(&data, &mut buf).unwrap();
        let back = ingest_reader(buf.as_slice(), &schema).unwrap();
        prop_assert_eq!(back, data);
    }
}
