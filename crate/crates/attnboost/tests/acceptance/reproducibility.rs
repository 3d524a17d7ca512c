//! generate -> train -> segment -> evaluate twice from one config must give
//! byte-identical artifacts.

use std::path::Path;

use attnboost::commands::{CHECKPOINT, METRICS_REPORT, TRAINING_REPORT};
use attnboost::dataset::list_pngs;

use crate::{cli, path_str};

const CONFIG: &str = "\
seed = 5
train_count = 6
val_count = 2
test_count = 4
stages = 2
depth = 1
base_channels = 4
max_epochs = 2
alpha = 0.1
area_thr = 10
filter_size = 3
";

fn pipeline(root: &Path, config: &Path) {
    let (data, train, seg, eval) = (root.join("data"), root.join("train"), root.join("seg"), root.join("eval"));
    let c = path_str(config);
    cli(&["generate", "--config", c, "--out", path_str(&data)]);
    cli(&["train", "--config", c, "--data", path_str(&data), "--out", path_str(&train)]);
    let ckpt = train.join(CHECKPOINT);
    cli(&["segment", "--config", c, "--data", path_str(&data), "--checkpoint", path_str(&ckpt), "--out", path_str(&seg)]);
    cli(&["evaluate", "--config", c, "--data", path_str(&data), "--pred", path_str(&seg), "--out", path_str(&eval)]);
}

fn same_bytes(a: &Path, b: &Path) {
    let (x, y) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert!(x == y, "{} and {} differ", a.display(), b.display());
}

pub fn run() {
    let work = tempfile::tempdir().unwrap();
    let config = work.path().join("repro.conf");
    std::fs::write(&config, CONFIG).unwrap();
    let (a, b) = (work.path().join("a"), work.path().join("b"));
    pipeline(&a, &config);
    pipeline(&b, &config);

    same_bytes(&a.join("eval").join(METRICS_REPORT), &b.join("eval").join(METRICS_REPORT));
    same_bytes(&a.join("train").join(CHECKPOINT), &b.join("train").join(CHECKPOINT));
    same_bytes(&a.join("train").join(TRAINING_REPORT), &b.join("train").join(TRAINING_REPORT));
    let segs = list_pngs(&a.join("seg")).unwrap();
    assert_eq!(segs.len(), 4);
    for s in segs {
        same_bytes(&s, &b.join("seg").join(s.file_name().unwrap()));
    }
}
