use gmmmap::map::DEFAULT_FUSE_TAU_H;
use gmmmap::quant::QuantConfig;
use gmmmap::{Gaussian3, GaussianMap, Kind, SymMat3, Vec3};
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn local(rng: &mut ChaCha8Rng) -> Gaussian3 {
    let kind = if rng.random_bool(0.6) { Kind::Occupied } else { Kind::Free };
    // Clustered means so that merges actually happen.
    let c = Vec3::new(rng.random_range(0..5) as f64, rng.random_range(0..5) as f64, 0.0);
    let mean = c + Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
    let l = Matrix3::from_fn(|_, _| rng.random_range(-0.2..0.2));
    let cov = SymMat3::from_matrix(&(l * l.transpose())).add_diag(1e-3);
    Gaussian3::new(kind, rng.random_range(1.0..100.0), mean, cov)
}

#[test]
fn fifty_frames_keep_the_map_consistent() {
    for quant in [QuantConfig::OFF, QuantConfig::ON] {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let mut map = GaussianMap::new(quant, 2.0);
        let mut local_weight = 0.0;
        let (mut inserted, mut merged) = (0, 0);
        for _ in 0..50 {
            let locals: Vec<Gaussian3> = (0..rng.random_range(5..40)).map(|_| local(&mut rng)).collect();
            local_weight += locals.iter().map(|g| g.weight).sum::<f64>();
            let before = map.len();
            let report = map.fuse_local(&locals, DEFAULT_FUSE_TAU_H);
            assert!(report.merges.iter().all(|m| m.global_kind == m.local_kind && m.hellinger_sq <= DEFAULT_FUSE_TAU_H));
            assert_eq!(map.len(), before + report.inserted as usize);
            assert_eq!(report.merged + report.inserted, locals.len() as u64);
            inserted += report.inserted;
            merged += report.merged;
            map.audit().unwrap();
        }
        assert!(merged > 0 && inserted > 0);
        assert_eq!(map.counters().gaussians_inserted, inserted);
        // Rounding to the storage format perturbs weights slightly.
        let rel = (map.total_weight() - local_weight).abs() / local_weight;
        assert!(rel < if quant.enabled { 2e-3 } else { 1e-5 }, "weight drift {rel}");
    }
}

#[test]
fn merging_never_lowers_a_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut map = GaussianMap::default();
    for _ in 0..30 {
        let before: Vec<f64> = map.iter().map(|g| g.weight).collect();
        let locals: Vec<Gaussian3> = (0..20).map(|_| local(&mut rng)).collect();
        map.fuse_local(&locals, DEFAULT_FUSE_TAU_H);
        for (id, w) in before.iter().enumerate() {
            let g = map.get(id as u64 + 1).unwrap();
            assert!(g.weight >= *w, "id {} lost weight", id + 1);
        }
    }
}
