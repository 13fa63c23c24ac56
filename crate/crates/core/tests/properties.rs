use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shiftscope_core::dre::{RatioModel, TrainConfig, TrainedModel};
use shiftscope_core::histogram::{build_side_by_side, Subject};
use shiftscope_core::neighborhood::{adaptive_neighborhood, knn, pairwise_distance};
use shiftscope_core::scoring::{ScoreMethod, ScoreTable};
use shiftscope_core::{AnalysisStore, InstanceRecord, LatentSpace, Split};

fn random_store(rng: &mut ChaCha8Rng, n: usize, dim: usize, grid: bool) -> AnalysisStore {
    let mut records = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        // Index 0 is always train and index 1 always test so both splits exist.
        let split = match i {
            0 => Split::Train,
            1 => Split::Test,
            _ if rng.random_bool(0.5) => Split::Train,
            _ => Split::Test,
        };
        records.push(InstanceRecord {
            id: format!("x{i}"),
            split,
            image_path: format!("{i}.png"),
            attributes: None,
        });
        for _ in 0..dim {
            // Grid coordinates produce many exact distance ties.
            let v = if grid {
                rng.random_range(-3i32..=3) as f32
            } else {
                rng.random_range(-10.0f32..10.0)
            };
            data.push(v);
        }
    }
    AnalysisStore::new(records, vec![LatentSpace::new("z", dim, data).unwrap()]).unwrap()
}

#[test]
fn neighborhood_completeness_and_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for round in 0..60 {
        let n = rng.random_range(2..=500);
        let dim = rng.random_range(1..=6);
        let store = random_store(&mut rng, n, dim, round % 2 == 0);
        let space = store.space("z").unwrap();
        let focus = rng.random_range(0..n);
        let min_count = rng.random_range(0..20);
        let mut previous: Option<(f64, usize, usize)> = None;
        for target in [1, 5, 20, 100, 600] {
            let hood = adaptive_neighborhood(&store, "z", focus, target, min_count).unwrap();
            let d = |i: usize| pairwise_distance(space.row(focus), space.row(i)).unwrap();
            for split in [Split::Train, Split::Test] {
                let members = match split {
                    Split::Train => hood.train_indices(),
                    Split::Test => hood.test_indices(),
                };
                let mut expected: Vec<usize> = store
                    .indices_of(split)
                    .iter()
                    .copied()
                    .filter(|&i| i != focus && d(i) <= hood.radius)
                    .collect();
                expected.sort_by(|&a, &b| d(a).total_cmp(&d(b)).then(a.cmp(&b)));
                assert_eq!(members, expected);
            }
            let tests = store.test_indices().iter().filter(|&&i| i != focus).count();
            let wanted = target.max(min_count).max(1);
            assert!(hood.test_members.len() >= wanted.min(tests));
            if let Some((r, tr, te)) = previous {
                assert!(hood.radius >= r);
                assert!(hood.train_members.len() >= tr && hood.test_members.len() >= te);
            }
            previous = Some((hood.radius, hood.train_members.len(), hood.test_members.len()));
        }
    }
}

#[test]
fn knn_is_a_prefix_of_the_full_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let store = random_store(&mut rng, 200, 3, true);
    let space = store.space("z").unwrap();
    for query in [0, 17, 199] {
        let mut all: Vec<usize> = (0..store.len()).filter(|&i| i != query).collect();
        let d = |i: usize| pairwise_distance(space.row(query), space.row(i)).unwrap();
        all.sort_by(|&a, &b| d(a).total_cmp(&d(b)).then(a.cmp(&b)));
        assert_eq!(knn(&store, "z", None, query, 15).unwrap(), all[..15]);
        let test: Vec<usize> = all.iter().copied().filter(|&i| store.split_of(i) == Split::Test).collect();
        assert_eq!(knn(&store, "z", Some(Split::Test), query, 1000).unwrap(), test);
    }
}

#[test]
fn neighborhood_histogram_matches_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let store = random_store(&mut rng, 300, 4, false);
    let raw: Vec<f64> = (0..store.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
    let scores = ScoreTable::from_raw(ScoreMethod::CenterDistance, "z", raw, None).unwrap();
    let hood = adaptive_neighborhood(&store, "z", 1, 40, 10).unwrap();
    let h = build_side_by_side(
        &hood.train_indices(),
        &hood.test_indices(),
        &scores,
        Subject::Instance(1),
        5,
    )
    .unwrap();
    let recount = |members: &[usize]| -> Vec<usize> {
        let mut counts = vec![0; 5];
        for &i in members {
            let s = scores.suspicion(i).unwrap();
            let bin = if s >= 1.0 { 4 } else { (s * 5.0) as usize };
            counts[4 - bin] += 1;
        }
        counts
    };
    assert_eq!(h.train_counts(), recount(&hood.train_indices()));
    assert_eq!(h.test_counts(), recount(&hood.test_indices()));
}

#[test]
fn monotone_transform_keeps_member_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let raw: Vec<f64> = (0..120).map(|_| rng.random_range(0.1..9.0)).collect();
    let cubed: Vec<f64> = raw.iter().map(|v: &f64| v.powi(3) + 2.0).collect();
    let a = ScoreTable::from_raw(ScoreMethod::CenterDistance, "z", raw, None).unwrap();
    let b = ScoreTable::from_raw(ScoreMethod::CenterDistance, "z", cubed, None).unwrap();
    let (train, test): (Vec<usize>, Vec<usize>) = (0..120).partition(|i| i % 3 == 0);
    let order = |t: &ScoreTable| -> (Vec<usize>, Vec<usize>) {
        let h = build_side_by_side(&train, &test, t, Subject::Cluster(0), 5).unwrap();
        (
            h.bins.iter().flat_map(|b| b.train.clone()).collect(),
            h.bins.iter().flat_map(|b| b.test.clone()).collect(),
        )
    };
    assert_eq!(order(&a), order(&b));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dsem_round_trip_is_bit_exact(
        dim in 1usize..9,
        rows in 0usize..20,
        bits in prop::collection::vec(any::<u32>(), 0..200),
    ) {
        let data: Vec<f32> = (0..dim * rows)
            .map(|k| {
                let v = f32::from_bits(bits.get(k).copied().unwrap_or(k as u32));
                if v.is_finite() { v } else { -0.0 }
            })
            .collect();
        let space = LatentSpace::new("s", dim, data).unwrap();
        let mut bytes = Vec::new();
        space.write_to(&mut bytes).unwrap();
        prop_assert_eq!(bytes.len(), 4 + 4 + 8 + 4 + 4 * dim * rows);
        let back = LatentSpace::read_from("s", bytes.as_slice(), rows, Some(dim)).unwrap();
        let a: Vec<u32> = space.as_slice().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.as_slice().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn model_json_round_trip_reproduces_forward(
        input_dim in 1usize..6,
        hidden in 1usize..8,
        seed in any::<u64>(),
        probe in prop::collection::vec(-10.0f32..10.0, 6),
    ) {
        let trained = TrainedModel {
            model: RatioModel::init(input_dim, hidden, seed),
            config: TrainConfig { hidden_dim: hidden, seed, ..TrainConfig::default() },
            history: vec![1.25, 0.5],
            space: "z".into(),
        };
        let back = TrainedModel::from_json(&trained.to_json()).unwrap();
        prop_assert_eq!(back.model.parameters(), trained.model.parameters());
        let z = &probe[..input_dim];
        let (f1, f2) = (trained.model.forward(z).unwrap(), back.model.forward(z).unwrap());
        prop_assert_eq!(f1.ratio.to_bits(), f2.ratio.to_bits());
        prop_assert_eq!(f1.logit.to_bits(), f2.logit.to_bits());
    }
}
