use proptest::prelude::*;
use ulkit::dedup::{cosine, dedup_indices, DedupConfig, KeepPolicy, Linkage};

fn embeddings() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..5).prop_flat_map(|dim| {
        prop::collection::vec(
            prop::collection::vec(-1.0f64..1.0, dim).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3)),
            0..10,
        )
    })
}

fn policy() -> impl Strategy<Value = KeepPolicy> {
    prop_oneof![Just(KeepPolicy::First), Just(KeepPolicy::Last)]
}

proptest! {
    #[test]
    fn invariants(e in embeddings(), t in 0.0f64..1.0, keep in policy()) {
        let config = DedupConfig { threshold: t, keep, linkage: Linkage::AnyEarlier };
        let out = dedup_indices(&e, &config).unwrap();
        // subsequence, partitioned with the drops
        prop_assert!(out.kept.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(out.kept.len() + out.dropped.len(), e.len());
        for (a, &i) in out.kept.iter().enumerate() {
            for &j in &out.kept[a + 1..] {
                prop_assert!(cosine(&e[i], &e[j]).unwrap() <= t);
            }
        }
        for d in &out.dropped {
            prop_assert!(d.similarity > t);
        }
        // idempotence
        let kept: Vec<Vec<f64>> = out.kept.iter().map(|&i| e[i].clone()).collect();
        let again = dedup_indices(&kept, &config).unwrap();
        prop_assert_eq!(again.kept, (0..kept.len()).collect::<Vec<_>>());
    }

    #[test]
    fn monotone_in_threshold(e in embeddings(), a in 0.0f64..1.0, b in 0.0f64..1.0, keep in policy()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let at = |t| dedup_indices(&e, &DedupConfig { threshold: t, keep, linkage: Linkage::AnyEarlier }).unwrap().kept;
        let (k_lo, k_hi) = (at(lo), at(hi));
        prop_assert!(k_lo.len() <= k_hi.len());
        // the kept set only shrinks
        prop_assert!(k_lo.iter().all(|i| k_hi.contains(i)));
    }

    #[test]
    fn greedy_keeps_no_similar_pair(e in embeddings(), t in 0.0f64..1.0) {
        let config = DedupConfig { threshold: t, keep: KeepPolicy::First, linkage: Linkage::Greedy };
        let out = dedup_indices(&e, &config).unwrap();
        for (a, &i) in out.kept.iter().enumerate() {
            for &j in &out.kept[a + 1..] {
                prop_assert!(cosine(&e[i], &e[j]).unwrap() <= t);
            }
        }
    }
}
