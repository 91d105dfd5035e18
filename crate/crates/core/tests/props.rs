//! Property tests for the similarity functions, ingestion round-trip,
//! hashing determinism and the structural candidate bound.

use proptest::collection::vec;
use proptest::prelude::*;

use flash_core::doph::{doph_signature, HashParams};
use flash_core::query::{aggregate, count_frequencies, k_select, CandidateArray};
use flash_core::sparse::{cosine, jaccard, parse_libsvm, write_libsvm, Dataset, SparseVector};
use flash_core::{FlashIndex, IndexConfig};

fn sparse_vec(max_index: u32, max_len: usize) -> impl Strategy<Value = SparseVector> {
    vec(0..max_index, 0..max_len).prop_map(SparseVector::new)
}

proptest! {
    #[test]
    fn similarity_symmetric_and_bounded(
        x in sparse_vec(300, 40),
        y in sparse_vec(300, 40),
    ) {
        let j: f64 = jaccard(&x, &y);
        let c: f64 = cosine(&x, &y);
        prop_assert_eq!(j, jaccard::<f64>(&y, &x));
        prop_assert_eq!(c, cosine::<f64>(&y, &x));
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert!((0.0..=1.0).contains(&c));
        if !x.is_empty() {
            prop_assert!((jaccard::<f64>(&x, &x) - 1.0).abs() < 1e-12);
            prop_assert!((cosine::<f64>(&x, &x) - 1.0).abs() < 1e-12);
        }
        if x.intersection_size(&y) > 0 {
            prop_assert!(c >= j - 1e-12);
        }
    }

    #[test]
    fn libsvm_round_trip_preserves_index_sets(
        rows in vec(vec(0u32..10_000, 0..30), 0..20),
    ) {
        let data = Dataset::new(
            rows.into_iter().map(SparseVector::new).collect(),
            None,
        ).unwrap();
        let mut text = Vec::new();
        write_libsvm(&data, &mut text).unwrap();
        let back = parse_libsvm(text.as_slice(), None).unwrap();
        prop_assert_eq!(data, back);
    }

    #[test]
    fn k_select_matches_hashmap_oracle(
        entries in vec(0u32..50, 0..200),
        k in 1usize..10,
    ) {
        let a = CandidateArray { entries };
        // independent counting oracle
        let mut oracle = std::collections::HashMap::<u32, u32>::new();
        for &id in &a.entries {
            *oracle.entry(id).or_default() += 1;
        }
        let counted = count_frequencies(&a);
        prop_assert_eq!(counted.len(), oracle.len());
        for &(id, c) in &counted {
            prop_assert_eq!(oracle[&id], c);
        }
        let selected = k_select(&a, k);
        let mut expected: Vec<(u32, u32)> = oracle.into_iter().collect();
        expected.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
        expected.truncate(k);
        prop_assert_eq!(selected.neighbors, expected);
    }

    #[test]
    fn signature_deterministic_and_total(
        indices in vec(0u32..1_000_000, 1..60),
        k in 1u32..6,
        l in 1u32..10,
        seed in any::<u64>(),
    ) {
        let x = SparseVector::new(indices);
        let p = HashParams::new(k, l, 12, seed).unwrap();
        let s1 = doph_signature(&x, &p).unwrap();
        let s2 = doph_signature(&x, &p).unwrap();
        prop_assert_eq!(&s1, &s2);
        prop_assert_eq!(s1.hashes().len(), (k * l) as usize);
    }

    #[test]
    fn candidate_array_bounded_by_l_times_r(
        vectors in vec(vec(0u32..5_000, 1..20), 1..60),
        seed in any::<u64>(),
    ) {
        let l = 8u32;
        let r = 4u32;
        let hash = HashParams::new(2, l, 6, seed).unwrap();
        let config = IndexConfig::new(hash, r, 1.0).unwrap();
        let data = Dataset::new(
            vectors.into_iter().map(SparseVector::new).collect(),
            None,
        ).unwrap();
        let index = FlashIndex::build(&data, config, 1).unwrap();
        for (_, v) in data.iter() {
            let a = aggregate(&index, v).unwrap();
            prop_assert!(a.entries.len() <= (l * r) as usize);
        }
    }
}
