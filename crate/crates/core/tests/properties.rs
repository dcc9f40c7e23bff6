use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use vore::clustering::{spatial_hkmeans, TreeShape};
use vore::encoder::{subspace_normalize, ProjectedDescriptor, Whitener};
use vore::eval::{average_precision, QueryRecord};
use vore::features::{FeatureSet, Keypoint};
use vore::pq::{pq_train_rows, quantize_values, reconstruct, sdc_similarity, PQCode, PQModel, PqTrainParams};
use vore::search::{fast_ve_search, global_max_score, phase2, Exact};
use vore::voronoi::{Cell, VoronoiIndex};

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// M = 8, Z' = 32 over 32-D whitened Gaussian rows.
fn model() -> &'static PQModel {
    static MODEL: OnceLock<PQModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Whitener::from_eigenvalues(&[1.0; 32], 8).unwrap();
        let rows: Vec<f64> = (0..600)
            .flat_map(|_| w.apply(&ProjectedDescriptor { values: gaussian(&mut rng, 32), empty: false }).unwrap().values)
            .collect();
        pq_train_rows(&rows, 32, &PqTrainParams::new(8, 32, 2)).unwrap()
    })
}

fn code() -> impl Strategy<Value = PQCode> {
    prop::collection::vec(0u8..32, 8).prop_map(|codes| PQCode { codes, empty: false })
}

fn feature_set() -> impl Strategy<Value = FeatureSet> {
    (1usize..6, 0usize..80).prop_flat_map(|(dim, n)| {
        (
            prop::collection::vec((0f32..640.0, 0f32..480.0), n),
            prop::collection::vec(-10f32..10.0, n * dim),
        )
            .prop_map(move |(kps, desc)| {
                let kps = kps.into_iter().map(|(x, y)| Keypoint::new(x, y)).collect();
                FeatureSet::new("img", 640, 480, dim, kps, desc).unwrap()
            })
    })
}

/// Random full tree of the given shape with random counts and descriptors.
fn random_index(seed: u64, levels: usize, branching: usize, d: usize) -> (Cell<ProjectedDescriptor>, VoronoiIndex) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = TreeShape::new(levels, branching).unwrap();
    let q = unit(gaussian(&mut rng, d));
    let cells = (0..shape.slot_count())
        .map(|s| {
            let pull = rng.random_range(0.0..2.0) * shape.level_of(s) as f64;
            let v: Vec<f64> = q.iter().zip(gaussian(&mut rng, d)).map(|(a, b)| pull * a + b).collect();
            Cell { descriptor: ProjectedDescriptor { values: unit(v), empty: false }, point_count: rng.random_range(1..500) }
        })
        .collect();
    let idx = VoronoiIndex { image_id: "x".into(), shape, absent: vec![false; shape.slot_count()], cells };
    let query = Cell { descriptor: ProjectedDescriptor { values: q, empty: false }, point_count: rng.random_range(1..500) };
    (query, idx)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn sdc_is_bounded_and_symmetric(a in code(), b in code()) {
        let m = model();
        let s = sdc_similarity(&a, &b, m);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
        prop_assert_eq!(s, sdc_similarity(&b, &a, m));
        prop_assert!(sdc_similarity(&a, &a, m) >= s - 1e-12);
        prop_assert!((sdc_similarity(&a, &a, m) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn quantizing_a_reconstruction_is_idempotent(a in code()) {
        let m = model();
        let back = quantize_values(&reconstruct(&a, m), false, m).unwrap();
        prop_assert_eq!(sdc_similarity(&a, &back, m), sdc_similarity(&a, &a, m));
    }

    #[test]
    fn subspace_normalized_blocks_have_unit_norm(v in prop::collection::vec(-5f64..5.0, 24), m in prop::sample::select(vec![1usize, 2, 3, 4, 6, 8])) {
        let w = subspace_normalize(&v, m).unwrap();
        for b in 0..m {
            let n: f64 = w.block(b).iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn phase_two_weights_form_a_distribution(
        v in prop::collection::vec(-100_000i64..100_000, 1..6),
        scale in prop::option::of(1e-3f64..1e6),
    ) {
        let scores: Vec<f64> = (0..v.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let p = phase2(&scores, &v, scale);
        prop_assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.weights.iter().all(|&w| w > 0.0));
        let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(p.score >= lo - 1e-12 && p.score <= hi + 1e-12);
    }

    #[test]
    fn fast_search_stays_within_the_access_bound(seed: u64, levels in 1usize..5, branching in 2usize..5) {
        let (q, idx) = random_index(seed, levels, branching, 16);
        let r = fast_ve_search(&q, &idx);
        prop_assert!(r.cells_accessed <= branching * (levels - 1) + 1);
        prop_assert!(r.l_ph1 < levels);
        prop_assert!(r.score <= global_max_score(&q, &idx, &Exact).score + 1e-12);
        prop_assert_eq!(r.per_level_best.len(), r.l_ph1 + 1);
    }

    #[test]
    fn feature_files_round_trip(fs in feature_set()) {
        let back = FeatureSet::from_bytes(&fs.to_bytes().unwrap()).unwrap();
        prop_assert_eq!(back, fs);
    }

    #[test]
    fn spatial_trees_partition_their_points(fs in feature_set(), levels in 1usize..4, branching in 2usize..4, seed: u64) {
        let tree = spatial_hkmeans(&fs, levels, branching, seed).unwrap();
        tree.check_invariants(fs.len()).unwrap();
        let again = spatial_hkmeans(&fs, levels, branching, seed).unwrap();
        prop_assert_eq!(tree.absent_bitmap(), again.absent_bitmap());
    }

    #[test]
    fn average_precision_is_a_fraction(order in Just((0..12).collect::<Vec<usize>>()).prop_shuffle(), good in 1usize..6) {
        let ranked: Vec<String> = order.iter().map(|i| format!("i{i}")).collect();
        let rec = QueryRecord {
            query_id: "q".into(),
            good: (0..good).map(|i| format!("i{i}")).collect(),
            ..Default::default()
        };
        let ap = average_precision(&ranked, &rec).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
        let mut sorted = ranked.clone();
        sorted.sort_by_key(|s| s[1..].parse::<usize>().unwrap());
        prop_assert_eq!(average_precision(&sorted, &rec).unwrap(), 1.0);
    }

    #[test]
    fn pq_model_bytes_round_trip(seed in 0u64..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = gaussian(&mut rng, 200 * 8);
        let m = pq_train_rows(&rows, 8, &PqTrainParams::new(2, 8, seed)).unwrap();
        prop_assert_eq!(PQModel::from_bytes(&m.to_bytes()).unwrap(), m);
    }
}
