//! From stage posteriors to an instance map.
//!
//! average -> three-way classification with margin `alpha` -> connected seed
//! extraction with an area threshold -> seeded region growing over the
//! uncertain pixels -> majority smoothing. All connectivity is 4-connectivity.

use alloc::collections::BinaryHeap;
use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{invalid, Result};
use crate::grid::{Grid, InstanceLabelMap, ProbabilityMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TriLabel {
    Background,
    Uncertain,
    Foreground,
}

pub type TriLabelMap = Grid<TriLabel>;

/// Whether background seeds compete with foreground seeds for uncertain pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GrowthMode {
    #[default]
    Competitive,
    /// Only foreground seeds grow; whatever they do not reach is background.
    ForegroundOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SegParams {
    pub alpha: f64,
    pub area_thr: usize,
    pub filter_size: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub growth: GrowthMode,
}

impl Default for SegParams {
    fn default() -> Self {
        Self {
            alpha: 0.15,
            area_thr: 250,
            filter_size: 15,
            growth: GrowthMode::Competitive,
        }
    }
}

impl SegParams {
    pub fn new(alpha: f64, area_thr: usize, filter_size: usize) -> Self {
        Self {
            alpha,
            area_thr,
            filter_size,
            growth: GrowthMode::Competitive,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        check_filter(self.filter_size)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..0.5).contains(&alpha) {
        return Err(invalid!("alpha must lie in [0, 0.5), got {}", alpha));
    }
    Ok(())
}

fn check_filter(size: usize) -> Result<()> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(invalid!("filter size must be odd and at least 1, got {}", size));
    }
    Ok(())
}

/// Pixel-wise mean of the stage posteriors.
pub fn average_maps(maps: &[ProbabilityMap]) -> Result<ProbabilityMap> {
    let Some(first) = maps.first() else {
        return Err(invalid!("cannot average an empty list of maps"));
    };
    if maps.iter().any(|m| !m.same_shape(first)) {
        return Err(invalid!("maps to average differ in shape"));
    }
    let n = maps.len() as f64;
    let mut data = vec![0.0; first.len()];
    for m in maps {
        for (a, v) in data.iter_mut().zip(m.as_slice()) {
            *a += v;
        }
    }
    for a in &mut data {
        *a /= n;
    }
    Grid::from_vec(first.width(), first.height(), data)
}

/// `>= 0.5 + alpha` is foreground, `<= 0.5 - alpha` background, the rest
/// uncertain. With `alpha = 0` a posterior of exactly 0.5 is foreground.
pub fn classify_pixels(avg: &ProbabilityMap, alpha: f64) -> Result<TriLabelMap> {
    check_alpha(alpha)?;
    let (hi, lo) = (0.5 + alpha, 0.5 - alpha);
    Ok(avg.map(|&p| {
        if p >= hi {
            TriLabel::Foreground
        } else if p <= lo {
            TriLabel::Background
        } else {
            TriLabel::Uncertain
        }
    }))
}

/// 4-connected components of the `true` pixels. Ids start at 1 and follow
/// row-major discovery order; `sizes[id - 1]` is the pixel count.
pub fn connected_components(mask: &Grid<bool>) -> (InstanceLabelMap, Vec<usize>) {
    let mut labels = Grid::filled(mask.width(), mask.height(), 0u32);
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask.as_slice()[start] || labels.as_slice()[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        let mut size = 0;
        labels.as_mut_slice()[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            size += 1;
            mask.for_each_neighbor4(p, |q| {
                if mask.as_slice()[q] && labels.as_slice()[q] == 0 {
                    labels.as_mut_slice()[q] = id;
                    queue.push_back(q);
                }
            });
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Surviving seed regions after the area threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Seeds {
    /// Foreground seeds, ids `1..=count` in row-major discovery order.
    pub foreground: InstanceLabelMap,
    pub count: usize,
    /// Pixels of surviving background seeds.
    pub background: Grid<bool>,
    /// Input labels with dissolved seeds turned uncertain.
    pub labels: TriLabelMap,
}

pub fn extract_seeds(labels: &TriLabelMap, area_thr: usize) -> Seeds {
    let mut updated = labels.clone();
    let mut keep_class = |class: TriLabel| -> InstanceLabelMap {
        let (comp, sizes) = connected_components(&labels.map(|&l| l == class));
        let mut remap = vec![0u32; sizes.len() + 1];
        let mut next = 0;
        for (i, &s) in sizes.iter().enumerate() {
            if s >= area_thr {
                next += 1;
                remap[i + 1] = next;
            }
        }
        for (p, &id) in comp.as_slice().iter().enumerate() {
            if id != 0 && remap[id as usize] == 0 {
                updated.as_mut_slice()[p] = TriLabel::Uncertain;
            }
        }
        comp.map(|&id| remap[id as usize])
    };
    let foreground = keep_class(TriLabel::Foreground);
    let background = keep_class(TriLabel::Background).map(|&id| id != 0);
    let count = foreground.as_slice().iter().copied().max().unwrap_or(0) as usize;
    Seeds {
        foreground,
        count,
        background,
        labels: updated,
    }
}

#[derive(Debug, Clone, Copy)]
struct Claim {
    confidence: f64,
    pixel: usize,
    /// 0 for background, k for foreground seed k.
    region: u32,
}

impl PartialEq for Claim {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Claim {}

impl PartialOrd for Claim {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Claim {
    /// Max-heap order: higher confidence, then earlier pixel, then lower region.
    fn cmp(&self, other: &Self) -> Ordering {
        self.confidence
            .total_cmp(&other.confidence)
            .then_with(|| other.pixel.cmp(&self.pixel))
            .then_with(|| other.region.cmp(&self.region))
    }
}

/// Grows seeds onto uncertain pixels, most confident claim first. A claim
/// by a foreground seed has confidence `avg(p)`, by background `1 - avg(p)`.
/// Uncertain pixels no seed reaches become background.
pub fn region_grow(seeds: &Seeds, avg: &ProbabilityMap, mode: GrowthMode) -> Result<InstanceLabelMap> {
    if !seeds.labels.same_shape(avg) {
        return Err(invalid!("seed and posterior maps differ in shape"));
    }
    const UNSET: u32 = u32::MAX;
    let n = avg.len();
    let mut out = vec![UNSET; n];
    let fgs = seeds.foreground.as_slice().iter();
    for ((o, &fg), &bg) in out.iter_mut().zip(fgs).zip(seeds.background.as_slice()) {
        if fg != 0 {
            *o = fg;
        } else if bg {
            *o = 0;
        }
    }
    let grows = |region: u32| region != 0 || mode == GrowthMode::Competitive;
    let confidence = |p: usize, region: u32| {
        let a = avg.as_slice()[p];
        if region == 0 {
            1.0 - a
        } else {
            a
        }
    };
    let uncertain = |p: usize| seeds.labels.as_slice()[p] == TriLabel::Uncertain;

    let mut heap = BinaryHeap::new();
    for p in 0..n {
        let region = out[p];
        if region == UNSET || !grows(region) {
            continue;
        }
        avg.for_each_neighbor4(p, |q| {
            if out[q] == UNSET && uncertain(q) {
                heap.push(Claim {
                    confidence: confidence(q, region),
                    pixel: q,
                    region,
                });
            }
        });
    }
    while let Some(Claim { pixel, region, .. }) = heap.pop() {
        if out[pixel] != UNSET {
            continue;
        }
        out[pixel] = region;
        avg.for_each_neighbor4(pixel, |q| {
            if out[q] == UNSET && uncertain(q) {
                heap.push(Claim {
                    confidence: confidence(q, region),
                    pixel: q,
                    region,
                });
            }
        });
    }
    for v in &mut out {
        if *v == UNSET {
            *v = 0;
        }
    }
    Grid::from_vec(avg.width(), avg.height(), out)
}

/// Modal label over a `filter_size` square window clipped at the borders.
/// Ties keep the current label when it is among the most frequent, else the
/// smallest tied label wins.
pub fn majority_smooth(instances: &InstanceLabelMap, filter_size: usize) -> Result<InstanceLabelMap> {
    check_filter(filter_size)?;
    if filter_size == 1 {
        return Ok(instances.clone());
    }
    let r = filter_size / 2;
    let (w, h) = (instances.width(), instances.height());
    let src = instances.as_slice();
    let mut counts: Vec<(u32, usize)> = Vec::new();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            counts.clear();
            for yy in y0..y1 {
                for &l in &src[yy * w + x0..yy * w + x1] {
                    match counts.iter_mut().find(|(k, _)| *k == l) {
                        Some((_, c)) => *c += 1,
                        None => counts.push((l, 1)),
                    }
                }
            }
            let current = src[y * w + x];
            let best = counts.iter().map(|&(_, c)| c).max().unwrap_or(0);
            let own = counts
                .iter()
                .find(|(k, _)| *k == current)
                .map_or(0, |&(_, c)| c);
            let label = if own == best {
                current
            } else {
                counts
                    .iter()
                    .filter(|&&(_, c)| c == best)
                    .map(|&(k, _)| k)
                    .min()
                    .unwrap_or(current)
            };
            out.push(label);
        }
    }
    Grid::from_vec(w, h, out)
}

/// Renumbers nonzero ids to `1..=K` in row-major order of first appearance.
pub fn relabel_sequential(instances: &InstanceLabelMap) -> InstanceLabelMap {
    let mut map: Vec<(u32, u32)> = Vec::new();
    instances.map(|&id| {
        if id == 0 {
            return 0;
        }
        match map.iter().find(|(k, _)| *k == id) {
            Some(&(_, v)) => v,
            None => {
                let v = map.len() as u32 + 1;
                map.push((id, v));
                v
            }
        }
    })
}

/// Everything after the stage posteriors, composed in order.
pub fn segment_pipeline(stage_maps: &[ProbabilityMap], params: &SegParams) -> Result<InstanceLabelMap> {
    params.validate()?;
    let avg = average_maps(stage_maps)?;
    let labels = classify_pixels(&avg, params.alpha)?;
    let seeds = extract_seeds(&labels, params.area_thr);
    let grown = region_grow(&seeds, &avg, params.growth)?;
    let smooth = majority_smooth(&grown, params.filter_size)?;
    Ok(relabel_sequential(&smooth))
}
