//! Boosting laws: beta range, group normalization, and the contribution
//! chain against a standalone reimplementation.

use attnboost_core::basemodel::FcnConfig;
use attnboost_core::boosting::{
    beta, correct_mask, init_contributions, multi_stage_forward, normalize_contributions,
    ForwardOptions, InitMode, StageStack, TrainingSample,
};
use attnboost_core::grid::{BinaryMap, ContributionMap};
use attnboost_core::{seeded_rng, Grid, Tensor};
use rand::Rng as _;

/// The chain as a plain loop over flat vectors, sharing no code with the crate.
fn oracle_chain(truth: &[u8], posteriors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = truth.len();
    let fg = truth.iter().filter(|&&y| y == 1).count();
    let bg = n - fg;
    let mut c: Vec<f64> = if fg == 0 || bg == 0 {
        vec![1.0 / n as f64; n]
    } else {
        truth
            .iter()
            .map(|&y| if y == 1 { 0.5 / fg as f64 } else { 0.5 / bg as f64 })
            .collect()
    };
    let mut prev = vec![0.5; n];
    let mut out = Vec::new();
    for post in posteriors {
        let ok: Vec<bool> = (0..n)
            .map(|p| if truth[p] == 1 { prev[p] > 0.5 } else { prev[p] < 0.5 })
            .collect();
        for p in 0..n {
            let m = (prev[p] - 0.5f64).abs();
            c[p] *= if ok[p] { 1.0 - m } else { 1.0 + m };
        }
        for group in [true, false] {
            let members: Vec<usize> = (0..n).filter(|&p| ok[p] == group).collect();
            let s: f64 = members.iter().map(|&p| c[p]).sum();
            for &p in &members {
                c[p] = if s == 0.0 { 1.0 / members.len() as f64 } else { c[p] / s };
            }
        }
        out.push(c.clone());
        prev = post.clone();
    }
    out
}

fn contributions_match_standalone_oracle() {
    for seed in 0..5u64 {
        let mut rng = seeded_rng(seed);
        let (w, h) = (8, 8);
        let image = Tensor::from_vec(&[3, h, w], (0..3 * h * w).map(|_| rng.random()).collect()).unwrap();
        let truth = Grid::from_fn(w, h, |x, y| u32::from((2..6).contains(&x) && (1..5).contains(&y)));
        let sample = TrainingSample::new(image, truth).unwrap();
        let stack = StageStack::new(
            4,
            FcnConfig {
                depth: 2,
                base_channels: 3,
                dropout_rate: 0.2,
                input_channels: 4,
                seed,
            },
        )
        .unwrap();
        let out = multi_stage_forward(&stack, &sample, &ForwardOptions::default(), &mut seeded_rng(seed)).unwrap();
        let posts: Vec<Vec<f64>> = out.posteriors.iter().map(|p| p.as_slice().to_vec()).collect();
        let expected = oracle_chain(sample.ground_truth.as_slice(), &posts);
        assert_eq!(out.contributions.len(), 4);
        for (got, want) in out.contributions.iter().zip(&expected) {
            for (a, b) in got.as_slice().iter().zip(want) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }
}

fn beta_range_over_dense_sweep() {
    let steps = 100_000;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for y in [0u8, 1] {
        for i in 0..=steps {
            let yh = i as f64 / steps as f64;
            let b = beta(y, yh);
            assert!((0.5..=1.5).contains(&b), "beta({y}, {yh}) = {b}");
            lo = lo.min(b);
            hi = hi.max(b);
        }
    }
    assert_eq!(lo, 0.5);
    assert_eq!(hi, 1.5);
    assert_eq!(beta(1, 1.0), 0.5);
    assert_eq!(beta(0, 0.0), 0.5);
    assert_eq!(beta(0, 1.0), 1.5);
    assert_eq!(beta(1, 0.0), 1.5);
}

fn group_sums(c: &ContributionMap, mask: &Grid<bool>) -> (Option<f64>, Option<f64>) {
    let mut sums = [None, None];
    for (&v, &m) in c.as_slice().iter().zip(mask.as_slice()) {
        let slot = &mut sums[usize::from(m)];
        *slot = Some(slot.unwrap_or(0.0) + v);
    }
    (sums[1], sums[0])
}

fn normalization_over_randomized_maps() {
    let mut rng = seeded_rng(99);
    for trial in 0..1000 {
        let (w, h) = (rng.random_range(1..12), rng.random_range(1..12));
        let n = w * h;
        let truth: BinaryMap = Grid::from_vec(w, h, (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect()).unwrap();
        let pred: Vec<f64> = match trial % 4 {
            // all correct
            0 => truth.as_slice().iter().map(|&y| if y == 1 { 0.9 } else { 0.1 }).collect(),
            // all incorrect
            1 => truth.as_slice().iter().map(|&y| if y == 1 { 0.2 } else { 0.7 }).collect(),
            _ => (0..n).map(|_| rng.random()).collect(),
        };
        let pred = Grid::from_vec(w, h, pred).unwrap();
        let mask = correct_mask(&truth, &pred).unwrap();
        let raw: Vec<f64> = if trial % 4 == 2 {
            // zero-sum groups
            vec![0.0; n]
        } else {
            (0..n).map(|_| rng.random_range(0.0..2.0)).collect()
        };
        let raw = Grid::from_vec(w, h, raw).unwrap();
        let c = normalize_contributions(&raw, &mask).unwrap();
        let (correct, incorrect) = group_sums(&c, &mask);
        for s in [correct, incorrect].into_iter().flatten() {
            assert!((s - 1.0).abs() <= 1e-9, "trial {trial}: group sum {s}");
        }
        let total: f64 = c.as_slice().iter().sum();
        let groups = usize::from(correct.is_some()) + usize::from(incorrect.is_some());
        assert!((total - groups as f64).abs() <= 1e-9);
        assert!(c.as_slice().iter().all(|&v| v >= 0.0));
    }
}

fn init_modes_sum_to_one() {
    let mut rng = seeded_rng(5);
    for _ in 0..200 {
        let (w, h) = (rng.random_range(1..10), rng.random_range(1..10));
        let truth: BinaryMap = Grid::from_vec(w, h, (0..w * h).map(|_| u8::from(rng.random_bool(0.3))).collect()).unwrap();
        for mode in [InitMode::Uniform, InitMode::ClassFrequency] {
            let c = init_contributions(&truth, mode);
            let s: f64 = c.map.as_slice().iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }
}

pub fn run() {
    contributions_match_standalone_oracle();
    beta_range_over_dense_sweep();
    normalization_over_randomized_maps();
    init_modes_sum_to_one();
}
