use gmmmap::query::{query_batch, query_chunked, query_single, BatchConfig, DEFAULT_PRIOR};
use gmmmap::{Gaussian3, GaussianMap, Kind, SymMat3, Vec3};
use proptest::prelude::*;

fn gaussian() -> impl Strategy<Value = Gaussian3> {
    (any::<bool>(), 0.5f64..20.0, prop::array::uniform3(0.0f64..4.0), prop::array::uniform3(0.005f64..0.3))
        .prop_map(|(occ, w, m, s)| {
            let kind = if occ { Kind::Occupied } else { Kind::Free };
            Gaussian3::new(kind, w, Vec3::from(m), SymMat3::diag(s[0] * s[0], s[1] * s[1], s[2] * s[2]))
        })
}

fn coord() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-0.5f64..4.5).prop_map(Vec3::from)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batch_equals_single(gs in prop::collection::vec(gaussian(), 1..300), coords in prop::collection::vec(coord(), 1..40)) {
        let mut map = GaussianMap::default();
        for g in &gs {
            map.insert(g);
        }
        let (batch, _) = query_batch(&map, &coords, DEFAULT_PRIOR);
        let (chunked, _) = query_chunked(&map, &coords, BatchConfig::new(7).unwrap(), DEFAULT_PRIOR);
        for ((x, b), c) in coords.iter().zip(&batch).zip(&chunked) {
            let (s, _) = query_single(&map, x, DEFAULT_PRIOR);
            prop_assert!(s.bit_eq(b));
            prop_assert!(s.bit_eq(c));
            prop_assert!((0.0..=1.0).contains(&s.probability));
        }
    }
}
