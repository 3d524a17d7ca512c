//! Default grid size and test-split hygiene of the parameter search.

use std::collections::BTreeSet;
use std::path::PathBuf;

use attnboost::access::{Disk, Recorder};
use attnboost::commands::{self, CHECKPOINT};
use attnboost::config::RunConfig;
use attnboost::dataset::{self, MANIFEST};
use attnboost_core::gridsearch::SearchGrid;
use attnboost_core::synthdata::{Split, SplitCounts};

fn default_grid_has_80_combinations() {
    let combos = SearchGrid::default().combinations().unwrap();
    assert_eq!(combos.len(), 80);
    let got: BTreeSet<(u64, usize, usize)> = combos
        .iter()
        .map(|p| (p.alpha.to_bits(), p.area_thr, p.filter_size))
        .collect();
    let mut want = BTreeSet::new();
    for a in [0.05, 0.10, 0.15, 0.20, 0.25f64] {
        for t in [250, 500, 750, 1000] {
            for f in [5, 9, 15, 19] {
                want.insert((a.to_bits(), t, f));
            }
        }
    }
    assert_eq!(got, want);
}

fn canonical(paths: impl IntoIterator<Item = PathBuf>) -> BTreeSet<PathBuf> {
    paths.into_iter().map(|p| p.canonicalize().unwrap()).collect()
}

fn search_never_reads_test_files() {
    let work = tempfile::tempdir().unwrap();
    let data = work.path().join("data");
    let cfg = RunConfig {
        data_dir: data.clone(),
        out_dir: data.clone(),
        counts: SplitCounts { train: 5, val: 3, test: 4 },
        stages: 2,
        depth: 1,
        base_channels: 4,
        max_epochs: 1,
        ..RunConfig::default()
    };
    let manifest = commands::generate(&cfg).unwrap();
    let train_dir = work.path().join("train");
    commands::train(&RunConfig { out_dir: train_dir.clone(), ..cfg.clone() }, |_| {}).unwrap();

    let audit = Recorder::new(Disk);
    let grid_cfg = RunConfig { out_dir: work.path().join("grid"), ..cfg.clone() };
    let outcome = commands::gridsearch(&grid_cfg, &train_dir.join(CHECKPOINT), &audit).unwrap();
    assert_eq!(outcome.table.len(), 80);

    let read = canonical(audit.paths());
    let test = canonical(manifest.files(&data, Split::Test));
    assert!(read.is_disjoint(&test), "test split files were read");
    let mut expected = canonical(manifest.files(&data, Split::Train));
    expected.extend(canonical(manifest.files(&data, Split::Val)));
    expected.extend(canonical([data.join(MANIFEST), train_dir.join(CHECKPOINT)]));
    assert_eq!(read, expected);

    // A manifest that routes a training entry to a test file is refused
    // before the file is read.
    let mut tampered = manifest.clone();
    let test_image = tampered.entries(Split::Test).next().unwrap().image.clone();
    let victim = tampered.entries.iter_mut().find(|e| e.split == Split::Train).unwrap();
    victim.image = test_image.clone();
    std::fs::write(data.join(MANIFEST), serde_json::to_vec(&tampered).unwrap()).unwrap();
    let audit = Recorder::new(Disk);
    let err = commands::gridsearch(&grid_cfg, &train_dir.join(CHECKPOINT), &audit).unwrap_err();
    assert!(format!("{err:#}").contains("test split"), "{err:#}");
    assert!(!audit.paths().contains(&data.join(&test_image)));
    assert!(dataset::load_manifest(&Disk, &data).is_ok());
}

pub fn run() {
    default_grid_has_80_combinations();
    search_never_reads_test_files();
}
