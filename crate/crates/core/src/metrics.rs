//! Object-level evaluation of instance segmentations.
//!
//! Objects are pooled over a list of images; an object only ever overlaps or
//! matches objects of the same image. Coverage tests of the form "at least
//! half of `x`" are evaluated exactly as `2 * overlap >= area(x)`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, InstanceLabelMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Segmented,
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Object {
    /// Position of the owning image in the list the set was built from.
    pub image: usize,
    /// `(x, y)` pixel coordinates in row-major order.
    pub pixels: Vec<(u32, u32)>,
}

impl Object {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

/// Disjoint objects pooled over one or more images. Objects are ordered by
/// image, then by their first pixel in row-major order, so the order does
/// not depend on the ids used in the label maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSet {
    source: Source,
    objects: Vec<Object>,
    /// Per image, `object index + 1` at each pixel, 0 for background.
    index_maps: Vec<Grid<u32>>,
}

impl ObjectSet {
    pub fn from_label_maps(source: Source, maps: &[InstanceLabelMap]) -> Self {
        let mut objects: Vec<Object> = Vec::new();
        let mut index_maps = Vec::with_capacity(maps.len());
        for (image, map) in maps.iter().enumerate() {
            let mut local: BTreeMap<u32, u32> = BTreeMap::new();
            let w = map.width();
            let index = Grid::from_fn(map.width(), map.height(), |x, y| {
                let id = map.as_slice()[y * w + x];
                if id == 0 {
                    return 0;
                }
                let slot = *local.entry(id).or_insert_with(|| {
                    objects.push(Object {
                        image,
                        pixels: Vec::new(),
                    });
                    objects.len() as u32
                });
                objects[slot as usize - 1].pixels.push((x as u32, y as u32));
                slot
            });
            index_maps.push(index);
        }
        Self {
            source,
            objects,
            index_maps,
        }
    }

    pub fn from_label_map(source: Source, map: &InstanceLabelMap) -> Self {
        Self::from_label_maps(source, core::slice::from_ref(map))
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn objects(&self) -> &[Object] {
        &self.objects
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn image_count(&self) -> usize {
        self.index_maps.len()
    }

    pub fn total_area(&self) -> usize {
        self.objects.iter().map(Object::area).sum()
    }

    fn check_compatible(&self, other: &ObjectSet) -> Result<()> {
        if self.index_maps.len() != other.index_maps.len() {
            return Err(invalid!(
                "object sets cover {} and {} images",
                self.index_maps.len(),
                other.index_maps.len()
            ));
        }
        for (i, (a, b)) in self.index_maps.iter().zip(&other.index_maps).enumerate() {
            if !a.same_shape(b) {
                return Err(invalid!("image {} differs in shape between the object sets", i));
            }
        }
        Ok(())
    }
}

/// Pairwise pixel overlaps between a segmented and a ground-truth set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Overlaps {
    /// For each segmented object, `(gt index, count)` with count > 0, by gt index.
    pub by_segmented: Vec<Vec<(usize, usize)>>,
    /// For each ground-truth object, `(seg index, count)` with count > 0, by seg index.
    pub by_truth: Vec<Vec<(usize, usize)>>,
}

impl Overlaps {
    pub fn compute(s: &ObjectSet, g: &ObjectSet) -> Result<Self> {
        s.check_compatible(g)?;
        let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (a, b) in s.index_maps.iter().zip(&g.index_maps) {
            for (&si, &gi) in a.as_slice().iter().zip(b.as_slice()) {
                if si != 0 && gi != 0 {
                    *counts.entry((si as usize - 1, gi as usize - 1)).or_insert(0) += 1;
                }
            }
        }
        let mut by_segmented = vec![Vec::new(); s.len()];
        let mut by_truth = vec![Vec::new(); g.len()];
        for (&(si, gi), &c) in &counts {
            by_segmented[si].push((gi, c));
            by_truth[gi].push((si, c));
        }
        for v in &mut by_truth {
            v.sort_unstable();
        }
        Ok(Self {
            by_segmented,
            by_truth,
        })
    }

    pub fn between(&self, seg: usize, truth: usize) -> usize {
        self.by_segmented[seg]
            .iter()
            .find(|&&(g, _)| g == truth)
            .map_or(0, |&(_, c)| c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    OverlapOnly,
    /// Objects without any overlap fall back to the Hausdorff-nearest
    /// counterpart in the same image.
    HausdorffFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMatching {
    /// Segmented object -> ground-truth object.
    pub gamma: Vec<Option<usize>>,
    /// Ground-truth object -> segmented object.
    pub sigma: Vec<Option<usize>>,
    pub overlaps: Overlaps,
}

fn best_overlap(list: &[(usize, usize)]) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    for &(idx, c) in list {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((idx, c));
        }
    }
    best.map(|(idx, _)| idx)
}

fn nearest(from: &Object, to: &ObjectSet) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, cand) in to.objects.iter().enumerate() {
        if cand.image != from.image {
            continue;
        }
        let d = hausdorff_unchecked(&from.pixels, &cand.pixels);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((j, d));
        }
    }
    best.map(|(j, _)| j).ok_or_else(|| {
        Error::NoMatch(alloc::format!(
            "image {} has no counterpart objects to match against",
            from.image
        ))
    })
}

pub fn match_objects(s: &ObjectSet, g: &ObjectSet, mode: MatchMode) -> Result<ObjectMatching> {
    let overlaps = Overlaps::compute(s, g)?;
    let mut gamma: Vec<Option<usize>> = overlaps.by_segmented.iter().map(|l| best_overlap(l)).collect();
    let mut sigma: Vec<Option<usize>> = overlaps.by_truth.iter().map(|l| best_overlap(l)).collect();
    if mode == MatchMode::HausdorffFallback {
        for (i, m) in gamma.iter_mut().enumerate() {
            if m.is_none() {
                *m = Some(nearest(&s.objects[i], g)?);
            }
        }
        for (j, m) in sigma.iter_mut().enumerate() {
            if m.is_none() {
                *m = Some(nearest(&g.objects[j], s)?);
            }
        }
    }
    Ok(ObjectMatching {
        gamma,
        sigma,
        overlaps,
    })
}

/// How a ground-truth object counts as detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CoverageMode {
    /// A single segmented object must cover at least half of it.
    #[default]
    PerObject,
    /// All segmented objects together must cover at least half of it.
    Union,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn half_covered(overlap: usize, area: usize) -> bool {
    2 * overlap >= area
}

fn is_true_positive(i: usize, ov: &Overlaps, g: &ObjectSet) -> bool {
    ov.by_segmented[i]
        .iter()
        .any(|&(j, c)| half_covered(c, g.objects[j].area()))
}

fn is_detected(j: usize, ov: &Overlaps, g: &ObjectSet, mode: CoverageMode) -> bool {
    let area = g.objects[j].area();
    match mode {
        CoverageMode::PerObject => ov.by_truth[j].iter().any(|&(_, c)| half_covered(c, area)),
        CoverageMode::Union => half_covered(ov.by_truth[j].iter().map(|&(_, c)| c).sum(), area),
    }
}

pub fn fscore(s: &ObjectSet, g: &ObjectSet) -> Result<FScore> {
    fscore_with(s, g, CoverageMode::PerObject)
}

pub fn fscore_with(s: &ObjectSet, g: &ObjectSet, mode: CoverageMode) -> Result<FScore> {
    let ov = Overlaps::compute(s, g)?;
    Ok(fscore_from(&ov, g, mode))
}

fn fscore_from(ov: &Overlaps, g: &ObjectSet, mode: CoverageMode) -> FScore {
    let tp = (0..ov.by_segmented.len())
        .filter(|&i| is_true_positive(i, ov, g))
        .count();
    let fp = ov.by_segmented.len() - tp;
    let fn_ = (0..g.len()).filter(|&j| !is_detected(j, ov, g, mode)).count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let fscore = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    FScore {
        precision,
        recall,
        fscore,
        tp,
        fp,
        fn_,
    }
}

fn dice_index(overlap: usize, a: usize, b: usize) -> f64 {
    2.0 * overlap as f64 / (a + b) as f64
}

/// Area-weighted Dice over matched pairs, averaged over both directions.
pub fn object_dice(s: &ObjectSet, g: &ObjectSet) -> Result<f64> {
    let m = match_objects(s, g, MatchMode::OverlapOnly)?;
    Ok(dice_from(s, g, &m))
}

fn dice_from(s: &ObjectSet, g: &ObjectSet, m: &ObjectMatching) -> f64 {
    if s.is_empty() && g.is_empty() {
        return 1.0;
    }
    let side = |own: &ObjectSet, other: &ObjectSet, matched: &[Option<usize>], seg_side: bool| {
        let total = own.total_area() as f64;
        let mut acc = 0.0;
        for (i, obj) in own.objects.iter().enumerate() {
            let Some(j) = matched[i] else { continue };
            let overlap = if seg_side {
                m.overlaps.between(i, j)
            } else {
                m.overlaps.between(j, i)
            };
            acc += obj.area() as f64 * dice_index(overlap, obj.area(), other.objects[j].area());
        }
        if total > 0.0 {
            acc / total
        } else {
            0.0
        }
    };
    0.5 * (side(s, g, &m.gamma, true) + side(g, s, &m.sigma, false))
}

fn hausdorff_unchecked(x: &[(u32, u32)], y: &[(u32, u32)]) -> f64 {
    let directed = |a: &[(u32, u32)], b: &[(u32, u32)]| {
        let mut worst = 0u64;
        for &(ax, ay) in a {
            let mut best = u64::MAX;
            for &(bx, by) in b {
                let dx = (ax as i64 - bx as i64).unsigned_abs();
                let dy = (ay as i64 - by as i64).unsigned_abs();
                best = best.min(dx * dx + dy * dy);
                if best == 0 {
                    break;
                }
            }
            worst = worst.max(best);
        }
        worst
    };
    libm::sqrt(directed(x, y).max(directed(y, x)) as f64)
}

/// Symmetric Hausdorff distance between two pixel sets, exact.
pub fn pair_hausdorff(x: &[(u32, u32)], y: &[(u32, u32)]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(invalid!("hausdorff distance of an empty pixel set"));
    }
    Ok(hausdorff_unchecked(x, y))
}

/// Area-weighted Hausdorff distance over matched pairs, averaged over both
/// directions, with nearest-object fallback for unmatched objects.
pub fn object_hausdorff(s: &ObjectSet, g: &ObjectSet) -> Result<f64> {
    if s.is_empty() || g.is_empty() {
        return Err(Error::NoMatch("object hausdorff needs objects on both sides".into()));
    }
    let m = match_objects(s, g, MatchMode::HausdorffFallback)?;
    let side = |own: &ObjectSet, other: &ObjectSet, matched: &[Option<usize>]| {
        let total = own.total_area() as f64;
        own.objects
            .iter()
            .zip(matched)
            .map(|(obj, j)| {
                let j = j.expect("fallback matching is total");
                obj.area() as f64 * hausdorff_unchecked(&obj.pixels, &other.objects[j].pixels)
            })
            .sum::<f64>()
            / total
    };
    Ok(0.5 * (side(s, g, &m.gamma) + side(g, s, &m.sigma)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MistakeCounts {
    pub undersegmented_gt: usize,
    pub false_segmented: usize,
    pub small_oversegmented: usize,
    pub missing_gt: usize,
}

pub fn mistake_taxonomy(s: &ObjectSet, g: &ObjectSet) -> Result<MistakeCounts> {
    mistake_taxonomy_with(s, g, CoverageMode::PerObject)
}

pub fn mistake_taxonomy_with(s: &ObjectSet, g: &ObjectSet, mode: CoverageMode) -> Result<MistakeCounts> {
    let ov = Overlaps::compute(s, g)?;
    Ok(mistakes_from(&ov, s, g, mode))
}

fn mistakes_from(ov: &Overlaps, s: &ObjectSet, g: &ObjectSet, mode: CoverageMode) -> MistakeCounts {
    let covers = |j: usize, c: usize| half_covered(c, g.objects[j].area());
    let undersegmented_gt = (0..g.len())
        .filter(|&j| {
            ov.by_truth[j].iter().any(|&(i, c)| {
                covers(j, c) && ov.by_segmented[i].iter().any(|&(k, ck)| k != j && covers(k, ck))
            })
        })
        .count();
    let mut false_segmented = 0;
    let mut small_oversegmented = 0;
    for i in 0..s.len() {
        if is_true_positive(i, ov, g) {
            continue;
        }
        let inside = ov.by_segmented[i]
            .iter()
            .any(|&(_, c)| half_covered(c, s.objects[i].area()));
        if inside {
            small_oversegmented += 1;
        } else {
            false_segmented += 1;
        }
    }
    let missing_gt = (0..g.len()).filter(|&j| !is_detected(j, ov, g, mode)).count();
    MistakeCounts {
        undersegmented_gt,
        false_segmented,
        small_oversegmented,
        missing_gt,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalOptions {
    pub coverage: CoverageMode,
}

/// Everything the evaluator reports for one segmented/ground-truth pairing.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    #[cfg_attr(feature = "serde", serde(rename = "fn"))]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub object_dice: f64,
    /// `None` when either side has no objects, or an image has objects on
    /// one side only.
    pub object_hausdorff: Option<f64>,
    pub mistakes: MistakeCounts,
}

pub fn evaluate(s: &ObjectSet, g: &ObjectSet, options: &EvalOptions) -> Result<MetricsReport> {
    let matching = match_objects(s, g, MatchMode::OverlapOnly)?;
    let f = fscore_from(&matching.overlaps, g, options.coverage);
    let object_dice = dice_from(s, g, &matching);
    let object_hausdorff = match object_hausdorff(s, g) {
        Ok(v) => Some(v),
        Err(Error::NoMatch(_)) => None,
        Err(e) => return Err(e),
    };
    let mistakes = mistakes_from(&matching.overlaps, s, g, options.coverage);
    Ok(MetricsReport {
        tp: f.tp,
        fp: f.fp,
        fn_: f.fn_,
        precision: f.precision,
        recall: f.recall,
        fscore: f.fscore,
        object_dice,
        object_hausdorff,
        mistakes,
    })
}

/// Convenience wrapper over per-image label maps.
pub fn evaluate_maps(
    segmented: &[InstanceLabelMap],
    truth: &[InstanceLabelMap],
    options: &EvalOptions,
) -> Result<MetricsReport> {
    let s = ObjectSet::from_label_maps(Source::Segmented, segmented);
    let g = ObjectSet::from_label_maps(Source::GroundTruth, truth);
    evaluate(&s, &g, options)
}
