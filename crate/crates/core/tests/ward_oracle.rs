use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shiftscope_core::clustering::ward_cluster;

/// Merge cost recomputed from member lists on every step.
fn ward_increase(points: &[Vec<f32>], a: &[usize], b: &[usize]) -> f64 {
    let dim = points[0].len();
    let centroid = |m: &[usize]| -> Vec<f64> {
        (0..dim)
            .map(|d| m.iter().map(|&i| f64::from(points[i][d])).sum::<f64>() / m.len() as f64)
            .collect()
    };
    let (ca, cb) = (centroid(a), centroid(b));
    let sq: f64 = ca.iter().zip(&cb).map(|(x, y)| (x - y).powi(2)).sum();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    na * nb / (na + nb) * sq
}

/// Scans every pair at every step and merges the cheapest.
fn exhaustive_greedy(points: &[Vec<f32>], k: usize) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    while clusters.len() > k {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let c = ward_increase(points, &clusters[a], &clusters[b]);
                if c < best.0 {
                    best = (c, a, b);
                }
            }
        }
        let merged = clusters.remove(best.2);
        clusters[best.1].extend(merged);
        clusters[best.1].sort_unstable();
    }
    canonical(clusters)
}

fn partition(labels: &[usize]) -> Vec<Vec<usize>> {
    let n_labels = labels.iter().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); n_labels];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(i);
    }
    canonical(groups)
}

fn canonical(mut groups: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    groups.retain(|g| !g.is_empty());
    groups.sort();
    groups
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-5.0f32..5.0)).collect())
        .collect()
}

#[test]
fn matches_exhaustive_greedy_on_small_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.random_range(1..=8);
        let dim = rng.random_range(1..=4);
        let k = rng.random_range(1..=n);
        let points = random_points(&mut rng, n, dim);
        let refs: Vec<&[f32]> = points.iter().map(Vec::as_slice).collect();
        let labels = ward_cluster(&refs, k).unwrap();
        assert_eq!(partition(&labels), exhaustive_greedy(&points, k), "n={n} k={k}");
    }
}

#[test]
fn matches_exhaustive_greedy_on_larger_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for n in [30, 45, 60] {
        let points = random_points(&mut rng, n, 3);
        let refs: Vec<&[f32]> = points.iter().map(Vec::as_slice).collect();
        for k in [1, 5, 17] {
            let labels = ward_cluster(&refs, k).unwrap();
            assert_eq!(partition(&labels), exhaustive_greedy(&points, k));
        }
    }
}

#[test]
fn labels_follow_first_appearance() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let points = random_points(&mut rng, 40, 2);
    let refs: Vec<&[f32]> = points.iter().map(Vec::as_slice).collect();
    let labels = ward_cluster(&refs, 7).unwrap();
    let mut next = 0;
    for &l in &labels {
        assert!(l <= next);
        if l == next {
            next += 1;
        }
    }
    assert_eq!(next, 7);
}

#[test]
fn permuting_input_permutes_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let points = random_points(&mut rng, 50, 3);
    let mut perm: Vec<usize> = (0..points.len()).collect();
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let shuffled: Vec<Vec<f32>> = perm.iter().map(|&p| points[p].clone()).collect();
    let a = ward_cluster(&points.iter().map(Vec::as_slice).collect::<Vec<_>>(), 6).unwrap();
    let b = ward_cluster(&shuffled.iter().map(Vec::as_slice).collect::<Vec<_>>(), 6).unwrap();
    // Map the shuffled partition back to original indices.
    let back: Vec<Vec<usize>> = partition(&b)
        .into_iter()
        .map(|g| g.into_iter().map(|i| perm[i]).collect::<Vec<_>>())
        .map(|mut g| {
            g.sort_unstable();
            g
        })
        .collect();
    assert_eq!(partition(&a), canonical(back));
}
