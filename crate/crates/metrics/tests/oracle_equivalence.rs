use cdinet_metrics::measures::{self, THRESHOLD_COUNT};
use cdinet_metrics::reference::{self, Grid};
use cdinet_metrics::{mae, max_f_measure, s_measure, SaliencyPair, ALPHA, BETA2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_case(rng: &mut ChaCha8Rng, n: usize) -> (Grid, Grid, SaliencyPair) {
    let fg_rate = rng.random_range(0.05..0.7);
    let pred: Grid = (0..n).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
    let gt: Grid = (0..n)
        .map(|_| (0..n).map(|_| if rng.random_bool(fg_rate) { 1.0 } else { 0.0 }).collect())
        .collect();
    let pair = SaliencyPair::new(
        n,
        n,
        pred.iter().flatten().copied().collect(),
        gt.iter().flatten().map(|&g| g > 0.5).collect(),
    )
    .unwrap();
    (pred, gt, pair)
}

#[test]
fn hundred_random_pairs_match_loop_references() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let (pred, gt, pair) = random_case(&mut rng, 8);
        assert!((max_f_measure(&pair, BETA2) - reference::max_f(&pred, &gt, BETA2)).abs() < 1e-9);
        assert!((mae(&pair) - reference::mae(&pred, &gt)).abs() < 1e-9);
        assert!((s_measure(&pair, ALPHA) - reference::s_measure(&pred, &gt, ALPHA)).abs() < 1e-6);
        let curve = measures::pr_curve(&pair);
        for k in (0..THRESHOLD_COUNT).step_by(17) {
            let (p, r) = reference::precision_recall(&pred, &gt, k as f64 / 255.0);
            assert!((curve[k].0 - p).abs() < 1e-12 && (curve[k].1 - r).abs() < 1e-12);
        }
    }
}

#[test]
fn quantized_predictions_hit_grid_levels_exactly() {
    // 8-bit predictions land exactly on threshold levels; strict comparison must agree.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let (pred, gt, _) = random_case(&mut rng, 8);
        let pred: Grid = pred
            .iter()
            .map(|row| row.iter().map(|v| (v * 255.0).round() / 255.0).collect())
            .collect();
        let pair = SaliencyPair::new(
            8,
            8,
            pred.iter().flatten().copied().collect(),
            gt.iter().flatten().map(|&g| g > 0.5).collect(),
        )
        .unwrap();
        assert!((max_f_measure(&pair, BETA2) - reference::max_f(&pred, &gt, BETA2)).abs() < 1e-9);
    }
}

#[test]
fn s_measure_self_similarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let (_, gt, _) = random_case(&mut rng, 8);
        let flat: Vec<f64> = gt.iter().flatten().copied().collect();
        if flat.iter().all(|&g| g == 0.0) || flat.iter().all(|&g| g == 1.0) {
            continue;
        }
        let pair = SaliencyPair::from_real_gt(8, 8, flat.clone(), &flat).unwrap();
        assert!((s_measure(&pair, ALPHA) - 1.0).abs() < 1e-6);
    }
}

#[test]
fn worked_examples() {
    let pair = SaliencyPair::from_real_gt(2, 2, vec![1.0, 0.0, 0.5, 0.5], &[1.0, 0.0, 0.0, 1.0]).unwrap();
    assert_eq!(mae(&pair), 0.25);
    let pair = SaliencyPair::from_real_gt(2, 2, vec![0.9, 0.1, 0.6, 0.2], &[1.0, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(measures::precision_recall(&pair, 0.5), (0.5, 1.0));
}
