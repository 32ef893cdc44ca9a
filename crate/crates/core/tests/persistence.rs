use proptest::prelude::*;
use refsearch::{classify, ClassifierConfig, Error, ReferenceIndex};

fn index_from(records: &[(Vec<f32>, u8, bool)]) -> ReferenceIndex {
    let mut index = ReferenceIndex::new();
    for (i, (v, label, has_source)) in records.iter().enumerate() {
        let source = format!("class{label}/{i:04}.png");
        index.add(v, &format!("class{label}"), has_source.then_some(source.as_str())).unwrap();
    }
    index
}

fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-100f32..100.0, dim).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn bytes_round_trip(records in prop::collection::vec((nonzero_vec(9), 0u8..5, any::<bool>()), 1..40)) {
        let index = index_from(&records);
        let bytes = index.to_bytes();
        let back = ReferenceIndex::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.len(), index.len());
        prop_assert_eq!(back.dim(), index.dim());
        for (a, b) in index.records().zip(back.records()) {
            prop_assert_eq!(a.label, b.label);
            prop_assert_eq!(a.source, b.source);
            prop_assert_eq!(a.vector, b.vector);
        }
        prop_assert_eq!(back.stats(), index.stats());
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn any_flipped_byte_is_rejected(pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let records: Vec<(Vec<f32>, u8, bool)> = (0..6).map(|i| (vec![i as f32 + 1.0, 2.0, -1.0], i % 2, i % 3 == 0)).collect();
        let mut bytes = index_from(&records).to_bytes();
        let i = pos.index(bytes.len());
        bytes[i] ^= 1 << bit;
        prop_assert!(ReferenceIndex::from_bytes(&bytes).is_err());
    }

    #[test]
    fn stored_vectors_are_unit(v in nonzero_vec(17)) {
        let mut index = ReferenceIndex::new();
        index.add(&v, "a", None).unwrap();
        let n: f64 = index.vector(0).iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-6);
    }
}

#[test]
fn truncation_at_every_length_is_rejected() {
    let records: Vec<(Vec<f32>, u8, bool)> = (0..4).map(|i| (vec![1.0, i as f32, 0.5], i, true)).collect();
    let bytes = index_from(&records).to_bytes();
    for len in 0..bytes.len() {
        assert!(ReferenceIndex::from_bytes(&bytes[..len]).is_err(), "accepted {len} of {} bytes", bytes.len());
    }
}

#[test]
fn file_round_trip_preserves_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("refs.rssi");
    let records: Vec<(Vec<f32>, u8, bool)> = (0..72)
        .map(|i| {
            let t = i as f32 * 0.37;
            (vec![t.sin(), t.cos(), (t * 0.5).sin() + 0.1, (i % 3) as f32], (i % 3) as u8, true)
        })
        .collect();
    let index = index_from(&records);
    index.save(&path).unwrap();
    let loaded = ReferenceIndex::load(&path).unwrap();
    let config = ClassifierConfig::new(5).unwrap();
    for j in 0..20 {
        let t = j as f32 * 0.91 + 0.2;
        let q = [t.cos(), t.sin(), 0.3, (j % 3) as f32 * 0.8];
        assert_eq!(classify(&q, &index, &config).unwrap(), classify(&q, &loaded, &config).unwrap());
    }
}

#[test]
fn load_reports_missing_file() {
    let err = ReferenceIndex::load("/nonexistent/dir/index.rssi").unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err:?}");
}
