//! The work behind each subcommand. Every command writes its outputs and
//! the resolved config into `cfg.out_dir`.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use attnboost_core::boosting::{
    multi_stage_forward, train_with_observer, EpochRecord, ForwardOptions, StageStack, TrainingReport,
};
use attnboost_core::gridsearch::{self, GridEntry, Score, SearchOutcome};
use attnboost_core::metrics::{evaluate_maps, MetricsReport};
use attnboost_core::segmentation::{average_maps, classify_pixels, segment_pipeline};
use attnboost_core::synthdata::Split;
use attnboost_core::seeded_rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::access::{Deny, Disk, FileAccess};
use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::dataset::{self, Manifest};
use crate::{imageio, pmap};

pub const RESOLVED_CONFIG: &str = "config.txt";
pub const CHECKPOINT: &str = "checkpoint.abfc";
pub const TRAINING_REPORT: &str = "training_report.json";
pub const METRICS_REPORT: &str = "metrics.json";
pub const GRID_REPORT: &str = "gridsearch.json";

fn prepare_out(cfg: &RunConfig) -> Result<&Path> {
    let out = cfg.out_dir.as_path();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join(RESOLVED_CONFIG), cfg.to_text())?;
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn read_checkpoint(access: &dyn FileAccess, path: &Path) -> Result<Checkpoint> {
    let bytes = access.read(path).with_context(|| format!("reading {}", path.display()))?;
    checkpoint::decode(&bytes).with_context(|| format!("decoding {}", path.display()))
}

pub fn generate(cfg: &RunConfig) -> Result<Manifest> {
    let out = prepare_out(cfg)?;
    dataset::generate_dataset(out, &cfg.scene(), &cfg.counts)
}

pub fn train(cfg: &RunConfig, observer: impl FnMut(&EpochRecord)) -> Result<(Checkpoint, TrainingReport)> {
    ensure!(cfg.stages >= 1, "stages must be at least 1");
    let root = cfg.data_dir.as_path();
    let manifest = dataset::load_manifest(&Disk, root)?;
    let load = |split| -> Result<Vec<_>> {
        dataset::load_split(&Disk, root, &manifest, split)?
            .iter()
            .map(|s| s.training_sample())
            .collect()
    };
    let (train_set, val_set) = (load(Split::Train)?, load(Split::Val)?);
    let out = prepare_out(cfg)?;
    let stack = StageStack::new(cfg.stages, cfg.model())?;
    let opts = cfg.train_options();
    let (stack, report) = train_with_observer(stack, &train_set, &val_set, &opts, observer)?;
    let ckpt = Checkpoint {
        stack,
        boost_enabled: opts.boost_enabled,
        init_mode: opts.init_mode,
        propagate_between_stages: opts.propagate_between_stages,
    };
    checkpoint::save(&out.join(CHECKPOINT), &ckpt)?;
    write_json(&out.join(TRAINING_REPORT), &report)?;
    Ok((ckpt, report))
}

/// Segments every PNG in `images`, writing one instance map per input under
/// the same file name. With `trilabels`, also writes the certainty maps to
/// `trilabels/`.
pub fn segment(cfg: &RunConfig, checkpoint_path: &Path, images: &Path, trilabels: bool) -> Result<Vec<PathBuf>> {
    cfg.seg.validate()?;
    let ckpt = read_checkpoint(&Disk, checkpoint_path)?;
    let inputs = dataset::list_pngs(images)?;
    ensure!(!inputs.is_empty(), "no PNG images in {}", images.display());
    let out = prepare_out(cfg)?;
    if trilabels {
        std::fs::create_dir_all(out.join("trilabels"))?;
    }
    inputs
        .par_iter()
        .map(|input| -> Result<PathBuf> {
            let image = imageio::decode_rgb(&std::fs::read(input)?).with_context(|| input.display().to_string())?;
            let maps = ckpt.stack.predict(&image)?;
            let instances = segment_pipeline(&maps, &cfg.seg)?;
            let name = input.file_name().expect("listed files have names");
            let dest = out.join(name);
            std::fs::write(&dest, imageio::encode_instances(&instances)?)?;
            if trilabels {
                let labels = classify_pixels(&average_maps(&maps)?, cfg.seg.alpha)?;
                std::fs::write(out.join("trilabels").join(name), imageio::encode_trilabels(&labels)?)?;
            }
            Ok(dest)
        })
        .collect()
}

/// Pairs every truth PNG with the prediction of the same name.
pub fn evaluate(cfg: &RunConfig, pred: &Path, truth: &Path) -> Result<MetricsReport> {
    let truth_files = dataset::list_pngs(truth)?;
    ensure!(!truth_files.is_empty(), "no PNG truth maps in {}", truth.display());
    let pairs = truth_files
        .par_iter()
        .map(|t| -> Result<_> {
            let p = pred.join(t.file_name().expect("listed files have names"));
            if !p.is_file() {
                bail!("missing prediction {} for {}", p.display(), t.display());
            }
            let g = imageio::decode_instances(&std::fs::read(t)?).with_context(|| t.display().to_string())?;
            let s = imageio::decode_instances(&std::fs::read(&p)?).with_context(|| p.display().to_string())?;
            ensure!(s.same_shape(&g), "{} and {} differ in size", p.display(), t.display());
            Ok((s, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let (segmented, truths): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let report = evaluate_maps(&segmented, &truths, &cfg.eval_options())?;
    let out = prepare_out(cfg)?;
    write_json(&out.join(METRICS_REPORT), &report)?;
    Ok(report)
}

/// Selects segmentation parameters on the training and validation splits.
/// Every read goes through `access`, wrapped so that files the manifest
/// assigns to the test split are refused.
pub fn gridsearch(cfg: &RunConfig, checkpoint_path: &Path, access: &dyn FileAccess) -> Result<SearchOutcome> {
    let root = cfg.data_dir.as_path();
    let manifest = dataset::load_manifest(access, root)?;
    let guard = Deny::new(
        access,
        manifest.files(root, Split::Test),
        "test split files take no part in parameter selection",
    );
    ensure!(
        !guard.is_denied(checkpoint_path),
        "checkpoint {} is listed as a test split file",
        checkpoint_path.display()
    );
    let ckpt = read_checkpoint(&guard, checkpoint_path)?;
    let mut samples = dataset::load_split(&guard, root, &manifest, Split::Train)?;
    samples.extend(dataset::load_split(&guard, root, &manifest, Split::Val)?);
    let maps = samples
        .par_iter()
        .map(|s| ckpt.stack.predict(&s.image))
        .collect::<Result<Vec<_>, _>>()?;
    let truths: Vec<_> = samples.into_iter().map(|s| s.truth).collect();
    let combos = cfg.grid.combinations()?;
    let eval = cfg.eval_options();
    let table = combos
        .into_par_iter()
        .map(|mut params| -> Result<GridEntry> {
            params.growth = cfg.seg.growth;
            let seg = maps
                .iter()
                .map(|m| segment_pipeline(m, &params))
                .collect::<Result<Vec<_>, _>>()?;
            let r = evaluate_maps(&seg, &truths, &eval)?;
            Ok(GridEntry {
                params,
                score: Score {
                    object_dice: r.object_dice,
                    fscore: r.fscore,
                    object_hausdorff: r.object_hausdorff,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let outcome = gridsearch::outcome(table)?;
    let out = prepare_out(cfg)?;
    write_json(&out.join(GRID_REPORT), &outcome)?;
    Ok(outcome)
}

/// Writes `<out>/<sample>/stage<n>_{posterior,contribution}.pmap` for the
/// first `limit` samples of `split`, stages numbered from 1.
pub fn dump_maps(cfg: &RunConfig, checkpoint_path: &Path, split: Split, limit: Option<usize>) -> Result<usize> {
    let ckpt = read_checkpoint(&Disk, checkpoint_path)?;
    let root = cfg.data_dir.as_path();
    let mut manifest = dataset::load_manifest(&Disk, root)?;
    manifest.entries.retain(|e| e.split == split);
    manifest.entries.truncate(limit.unwrap_or(usize::MAX));
    let samples = dataset::load_split(&Disk, root, &manifest, split)?;
    let out = prepare_out(cfg)?;
    let opts = ForwardOptions {
        boost: ckpt.boost_enabled,
        init_mode: ckpt.init_mode,
        propagate_between_stages: ckpt.propagate_between_stages,
        training: false,
    };
    let mut rng = seeded_rng(cfg.seed);
    for s in &samples {
        let outputs = multi_stage_forward(&ckpt.stack, &s.training_sample()?, &opts, &mut rng)?;
        let dir = out.join(&s.name);
        std::fs::create_dir_all(&dir)?;
        for (n, (post, contrib)) in outputs.posteriors.iter().zip(&outputs.contributions).enumerate() {
            pmap::save(&dir.join(format!("stage{}_posterior.pmap", n + 1)), post)?;
            pmap::save(&dir.join(format!("stage{}_contribution.pmap", n + 1)), contrib)?;
        }
    }
    Ok(samples.len())
}
