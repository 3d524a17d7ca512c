//! Boosted stack against the no-boost ablation on the synthetic benchmark,
//! driven through the command line.
//!
//! Models are trained at depth 2 with 8 base channels for 10 epochs, and
//! segmentation parameters come from a grid scaled to 64x64 scenes (the
//! default area thresholds exceed most glands at this size).

use std::path::Path;

use attnboost::commands::{CHECKPOINT, GRID_REPORT, METRICS_REPORT};
use attnboost_core::gridsearch::SearchOutcome;
use attnboost_core::metrics::MetricsReport;

use crate::{cli, path_str, report};

const SEEDS: [u64; 3] = [0, 1, 2];

const CONFIG: &str = "\
depth = 2
base_channels = 8
max_epochs = 10
patience = 100
grid_alphas = 0.05, 0.1, 0.15, 0.2, 0.25
grid_area_thrs = 5, 10, 20, 40
grid_filter_sizes = 1, 3, 5
";

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// train -> gridsearch -> segment (test split) -> evaluate.
fn run_variant(work: &Path, config: &Path, data: &Path, seed: u64, boost: bool) -> MetricsReport {
    let dir = work.join(if boost { "boost" } else { "noboost" });
    let (train, grid, seg, eval) = (dir.join("train"), dir.join("grid"), dir.join("seg"), dir.join("eval"));
    let seed = seed.to_string();
    let base = ["--config", path_str(config), "--data", path_str(data), "--seed", &seed];
    let mut args = vec!["train"];
    args.extend(base);
    args.extend(["--out", path_str(&train)]);
    if !boost {
        args.push("--no-boost");
    }
    cli(&args);

    let ckpt = train.join(CHECKPOINT);
    let mut args = vec!["gridsearch"];
    args.extend(base);
    args.extend(["--checkpoint", path_str(&ckpt), "--out", path_str(&grid)]);
    cli(&args);
    let best = read_json::<SearchOutcome>(&grid.join(GRID_REPORT)).best;

    let (alpha, area, filter) = (best.alpha.to_string(), best.area_thr.to_string(), best.filter_size.to_string());
    let mut args = vec!["segment"];
    args.extend(base);
    args.extend(["--checkpoint", path_str(&ckpt), "--out", path_str(&seg)]);
    args.extend(["--alpha", &alpha, "--area-thr", &area, "--filter-size", &filter]);
    cli(&args);

    let mut args = vec!["evaluate"];
    args.extend(base);
    args.extend(["--pred", path_str(&seg), "--out", path_str(&eval)]);
    cli(&args);
    let r: MetricsReport = read_json(&eval.join(METRICS_REPORT));
    report(&format!(
        "  seed {seed} {:>8}: dice {:.4}  F {:.4}  undersegmented {}  (alpha {alpha}, area_thr {area}, filter {filter})",
        if boost { "boost" } else { "no-boost" },
        r.object_dice,
        r.fscore,
        r.mistakes.undersegmented_gt
    ));
    r
}

pub fn run() {
    let work = tempfile::tempdir().unwrap();
    let config = work.path().join("e2e.conf");
    std::fs::write(&config, CONFIG).unwrap();
    let mut wins = 0;
    for seed in SEEDS {
        let dir = work.path().join(format!("seed{seed}"));
        let data = dir.join("data");
        cli(&["generate", "--config", path_str(&config), "--seed", &seed.to_string(), "--out", path_str(&data)]);
        let boosted = run_variant(&dir, &config, &data, seed, true);
        let ablation = run_variant(&dir, &config, &data, seed, false);
        let win = boosted.object_dice > ablation.object_dice
            && boosted.mistakes.undersegmented_gt < ablation.mistakes.undersegmented_gt;
        report(&format!("  seed {seed}: boosted {}", if win { "wins" } else { "does not win" }));
        wins += usize::from(win);
    }
    assert!(
        2 * wins > SEEDS.len(),
        "boosted model won on {wins} of {} seeds",
        SEEDS.len()
    );
}
