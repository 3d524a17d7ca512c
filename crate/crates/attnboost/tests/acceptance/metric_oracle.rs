//! Object-level metrics against a brute-force transcription over pixel sets.

use std::collections::{BTreeMap, HashSet};

use attnboost_core::grid::InstanceLabelMap;
use attnboost_core::metrics::{
    evaluate_maps, fscore, mistake_taxonomy, object_dice, object_hausdorff, EvalOptions, MistakeCounts,
    ObjectSet, Source,
};
use attnboost_core::{seeded_rng, Grid, Rng};
use rand::Rng as _;

const TOL: f64 = 1e-9;

type PixelSet = HashSet<(i64, i64)>;

struct Obj {
    image: usize,
    pixels: HashSet<(i64, i64)>,
}

/// Objects keyed and ordered by (image, row-major index of first pixel).
fn objects(maps: &[InstanceLabelMap]) -> Vec<Obj> {
    let mut by_key: BTreeMap<(usize, usize), (u32, PixelSet)> = BTreeMap::new();
    for (img, m) in maps.iter().enumerate() {
        let mut first: BTreeMap<u32, usize> = BTreeMap::new();
        for y in 0..m.height() {
            for x in 0..m.width() {
                let id = *m.get(x, y);
                if id != 0 {
                    first.entry(id).or_insert(y * m.width() + x);
                }
            }
        }
        for (&id, &f) in &first {
            let mut px = HashSet::new();
            for y in 0..m.height() {
                for x in 0..m.width() {
                    if *m.get(x, y) == id {
                        px.insert((x as i64, y as i64));
                    }
                }
            }
            by_key.insert((img, f), (id, px));
        }
    }
    by_key
        .into_iter()
        .map(|((image, _), (_, pixels))| Obj { image, pixels })
        .collect()
}

fn overlap(a: &Obj, b: &Obj) -> usize {
    if a.image != b.image {
        return 0;
    }
    a.pixels.intersection(&b.pixels).count()
}

fn half(ov: usize, of: &Obj) -> bool {
    2 * ov >= of.pixels.len()
}

fn hd(a: &Obj, b: &Obj) -> f64 {
    let directed = |p: &Obj, q: &Obj| {
        p.pixels
            .iter()
            .map(|&(x, y)| {
                q.pixels
                    .iter()
                    .map(|&(u, v)| (((x - u).pow(2) + (y - v).pow(2)) as f64).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

/// Maximal-overlap partner, first index on ties, `None` without overlap.
fn partner(o: &Obj, others: &[Obj]) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    for (j, c) in others.iter().enumerate() {
        let ov = overlap(o, c);
        if ov > 0 && best.is_none_or(|(_, b)| ov > b) {
            best = Some((j, ov));
        }
    }
    best.map(|(j, _)| j)
}

fn hd_partner(o: &Obj, others: &[Obj]) -> Option<usize> {
    partner(o, others).or_else(|| {
        let mut best: Option<(usize, f64)> = None;
        for (j, c) in others.iter().enumerate() {
            if c.image != o.image {
                continue;
            }
            let d = hd(o, c);
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((j, d));
            }
        }
        best.map(|(j, _)| j)
    })
}

fn oracle_f(s: &[Obj], g: &[Obj]) -> (usize, usize, usize, f64) {
    let tp = s.iter().filter(|si| g.iter().any(|gj| half(overlap(si, gj), gj))).count();
    let fp = s.len() - tp;
    let fn_ = g.iter().filter(|gj| !s.iter().any(|si| half(overlap(si, gj), gj))).count();
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (tp, fp, fn_, f)
}

fn oracle_dice(s: &[Obj], g: &[Obj]) -> f64 {
    if s.is_empty() && g.is_empty() {
        return 1.0;
    }
    let side = |a: &[Obj], b: &[Obj]| {
        let total: usize = a.iter().map(|o| o.pixels.len()).sum();
        a.iter()
            .map(|o| match partner(o, b) {
                Some(j) => {
                    let di = 2.0 * overlap(o, &b[j]) as f64 / (o.pixels.len() + b[j].pixels.len()) as f64;
                    o.pixels.len() as f64 / total as f64 * di
                }
                None => 0.0,
            })
            .sum::<f64>()
    };
    0.5 * (side(s, g) + side(g, s))
}

fn oracle_hd(s: &[Obj], g: &[Obj]) -> Option<f64> {
    if s.is_empty() || g.is_empty() {
        return None;
    }
    let side = |a: &[Obj], b: &[Obj]| -> Option<f64> {
        let total: usize = a.iter().map(|o| o.pixels.len()).sum();
        let mut acc = 0.0;
        for o in a {
            let j = hd_partner(o, b)?;
            acc += o.pixels.len() as f64 / total as f64 * hd(o, &b[j]);
        }
        Some(acc)
    };
    Some(0.5 * (side(s, g)? + side(g, s)?))
}

fn oracle_mistakes(s: &[Obj], g: &[Obj]) -> MistakeCounts {
    let undersegmented_gt = (0..g.len())
        .filter(|&j| {
            s.iter().any(|si| {
                half(overlap(si, &g[j]), &g[j])
                    && (0..g.len()).any(|k| k != j && half(overlap(si, &g[k]), &g[k]))
            })
        })
        .count();
    let mut false_segmented = 0;
    let mut small_oversegmented = 0;
    for si in s {
        if g.iter().any(|gj| half(overlap(si, gj), gj)) {
            continue;
        }
        if g.iter().any(|gj| half(overlap(si, gj), si)) {
            small_oversegmented += 1;
        } else {
            false_segmented += 1;
        }
    }
    let missing_gt = g.iter().filter(|gj| !s.iter().any(|si| half(overlap(si, gj), gj))).count();
    MistakeCounts {
        undersegmented_gt,
        false_segmented,
        small_oversegmented,
        missing_gt,
    }
}

fn random_truth(rng: &mut Rng, w: usize, h: usize) -> InstanceLabelMap {
    let mut m = Grid::filled(w, h, 0u32);
    let n = rng.random_range(0..6);
    for _ in 0..n {
        let id = rng.random_range(1..20);
        let (cx, cy) = (rng.random_range(0..w) as i64, rng.random_range(0..h) as i64);
        let (rx, ry) = (rng.random_range(1..8) as i64, rng.random_range(1..8) as i64);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as i64 - cx, y as i64 - cy);
                if dx * dx * ry * ry + dy * dy * rx * rx <= rx * rx * ry * ry {
                    m.set(x, y, id);
                }
            }
        }
    }
    m
}

/// A plausible prediction: the truth shifted, with ids merged or split,
/// objects dropped and spurious blobs added.
fn perturb(rng: &mut Rng, g: &InstanceLabelMap) -> InstanceLabelMap {
    let (w, h) = (g.width(), g.height());
    let (sx, sy) = (rng.random_range(-2i64..=2), rng.random_range(-2i64..=2));
    let merge = rng.random_bool(0.3);
    let split = rng.random_bool(0.3);
    let drop_id = rng.random_range(0..20u32);
    let mut m = Grid::from_fn(w, h, |x, y| {
        let (u, v) = (x as i64 - sx, y as i64 - sy);
        if u < 0 || v < 0 || u >= w as i64 || v >= h as i64 {
            return 0;
        }
        let mut id = *g.get(u as usize, v as usize);
        if id == drop_id {
            id = 0;
        }
        if merge && id > 0 {
            id = id / 3 + 1;
        }
        if split && id > 0 && x % 5 == 0 {
            id += 40;
        }
        id
    });
    let extra = random_truth(rng, w, h);
    for (a, &b) in m.as_mut_slice().iter_mut().zip(extra.as_slice()) {
        if b != 0 && rng.random_bool(0.5) {
            *a = b + 100;
        }
    }
    m
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

pub fn oracle_agreement() {
    let mut rng = seeded_rng(2024);
    let mut hd_defined = 0;
    for trial in 0..240 {
        let images = rng.random_range(1..=3);
        let mut truths = Vec::new();
        let mut preds = Vec::new();
        for _ in 0..images {
            let (w, h) = (rng.random_range(4..=32), rng.random_range(4..=32));
            let g = random_truth(&mut rng, w, h);
            preds.push(perturb(&mut rng, &g));
            truths.push(g);
        }
        let (so, go) = (objects(&preds), objects(&truths));
        let s = ObjectSet::from_label_maps(Source::Segmented, &preds);
        let g = ObjectSet::from_label_maps(Source::GroundTruth, &truths);

        let f = fscore(&s, &g).unwrap();
        let (tp, fp, fn_, fs) = oracle_f(&so, &go);
        assert_eq!((f.tp, f.fp, f.fn_), (tp, fp, fn_), "trial {trial}");
        assert!(close(f.fscore, fs), "trial {trial}: F {} vs {fs}", f.fscore);

        let d = object_dice(&s, &g).unwrap();
        let od = oracle_dice(&so, &go);
        assert!(close(d, od), "trial {trial}: Dice {d} vs {od}");

        let want_hd = oracle_hd(&so, &go);
        match (object_hausdorff(&s, &g).ok(), want_hd) {
            (Some(a), Some(b)) => {
                hd_defined += 1;
                assert!(close(a, b), "trial {trial}: HD {a} vs {b}");
            }
            (None, None) => {}
            (a, b) => panic!("trial {trial}: HD defined mismatch {a:?} vs {b:?}"),
        }

        let m = mistake_taxonomy(&s, &g).unwrap();
        assert_eq!(m, oracle_mistakes(&so, &go), "trial {trial}");
        assert_eq!(m.missing_gt, f.fn_);
        assert_eq!(f.tp + f.fp, s.len());
    }
    assert!(hd_defined >= 100, "only {hd_defined} trials exercised the Hausdorff oracle");
}

pub fn perfect_fixed_point() {
    let mut rng = seeded_rng(7);
    for _ in 0..50 {
        let g = random_truth(&mut rng, 32, 32);
        if g.as_slice().iter().all(|&v| v == 0) {
            continue;
        }
        let r = evaluate_maps(std::slice::from_ref(&g), std::slice::from_ref(&g), &EvalOptions::default()).unwrap();
        assert_eq!(r.fscore, 1.0);
        assert_eq!(r.object_dice, 1.0);
        assert_eq!(r.object_hausdorff, Some(0.0));
        assert_eq!(r.mistakes, MistakeCounts::default());
    }
}

pub fn run() {
    oracle_agreement();
    perfect_fixed_point();
}
