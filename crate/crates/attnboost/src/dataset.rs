//! On-disk synthetic datasets.
//!
//! ```text
//! <root>/manifest.json
//! <root>/<split>/images/scene_<index>.png   8-bit RGB
//! <root>/<split>/truth/scene_<index>.png    16-bit instance ids
//! ```
//!
//! Paths in the manifest are relative to `<root>` and use `/`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use attnboost_core::boosting::TrainingSample;
use attnboost_core::grid::InstanceLabelMap;
use attnboost_core::synthdata::{render_sample, SceneConfig, Split, SplitCounts};
use attnboost_core::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::access::FileAccess;
use crate::imageio;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scene: SceneConfig,
    pub counts: SplitCounts,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    pub index: u64,
    pub image: String,
    pub truth: String,
    pub instances: usize,
}

impl Manifest {
    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Absolute paths of every file belonging to `split`.
    pub fn files(&self, root: &Path, split: Split) -> Vec<PathBuf> {
        self.entries(split)
            .flat_map(|e| [root.join(&e.image), root.join(&e.truth)])
            .collect()
    }
}

/// A decoded image with its ground truth and file stem.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub name: String,
    pub image: Tensor,
    pub truth: InstanceLabelMap,
}

impl LoadedSample {
    pub fn training_sample(&self) -> Result<TrainingSample> {
        Ok(TrainingSample::new(self.image.clone(), self.truth.clone())?)
    }
}

fn file_name(index: u64) -> String {
    format!("scene_{index:04}.png")
}

/// Renders and writes every split, returning the manifest it also wrote.
/// Output bytes do not depend on thread scheduling.
pub fn generate_dataset(root: &Path, scene: &SceneConfig, counts: &SplitCounts) -> Result<Manifest> {
    scene.validate()?;
    counts.validate()?;
    for split in Split::ALL {
        for sub in ["images", "truth"] {
            std::fs::create_dir_all(root.join(split.name()).join(sub))?;
        }
    }
    let jobs: Vec<(Split, u64)> = Split::ALL
        .iter()
        .flat_map(|&s| counts.range(s).map(move |i| (s, i)))
        .collect();
    let entries = jobs
        .par_iter()
        .map(|&(split, index)| -> Result<ManifestEntry> {
            let sample = render_sample(scene, index)?;
            let name = file_name(index);
            let image = format!("{}/images/{name}", split.name());
            let truth = format!("{}/truth/{name}", split.name());
            std::fs::write(root.join(&image), imageio::encode_rgb(&sample.image)?)?;
            std::fs::write(root.join(&truth), imageio::encode_instances(&sample.instance_truth)?)?;
            Ok(ManifestEntry {
                split,
                index,
                image,
                truth,
                instances: sample.instance_count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        scene: scene.clone(),
        counts: *counts,
        entries,
    };
    std::fs::write(root.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

pub fn load_manifest(access: &dyn FileAccess, root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST);
    let bytes = access.read(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn stem(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn load_entry(access: &dyn FileAccess, root: &Path, entry: &ManifestEntry) -> Result<LoadedSample> {
    let read = |rel: &str| {
        let p = root.join(rel);
        access.read(&p).with_context(|| format!("reading {}", p.display()))
    };
    let image = imageio::decode_rgb(&read(&entry.image)?).with_context(|| entry.image.clone())?;
    let truth = imageio::decode_instances(&read(&entry.truth)?).with_context(|| entry.truth.clone())?;
    if image.shape()[1..] != [truth.height(), truth.width()] {
        bail!("{} and {} differ in size", entry.image, entry.truth);
    }
    Ok(LoadedSample {
        name: stem(&entry.image),
        image,
        truth,
    })
}

/// Loads one split in manifest order.
pub fn load_split(access: &dyn FileAccess, root: &Path, manifest: &Manifest, split: Split) -> Result<Vec<LoadedSample>> {
    manifest
        .entries(split)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|e| load_entry(access, root, e))
        .collect()
}

/// Sorted `*.png` files directly inside `dir`.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "png") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}
