//! Acceptance suite. Each criterion runs in turn under a time budget and
//! reports one PASS/FAIL line on stderr; the test fails if any criterion does.
//!
//! `ACCEPTANCE_ONLY=<substring>` restricts the run to matching criteria.

use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

mod boosting_laws;
mod end_to_end;
mod gradients;
mod grid_search;
mod metric_oracle;
mod reproducibility;

/// Runs the binary's entry point in-process and requires success.
pub fn cli(args: &[&str]) {
    let argv = std::iter::once("attnboost").chain(args.iter().copied());
    let status = attnboost::run_command(argv);
    assert_eq!(status, 0, "attnboost {} exited with {status}", args.join(" "));
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("temp paths are utf-8")
}

/// Unbuffered, uncaptured progress output.
pub fn report(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn(),
}

const MIN: u64 = 60;

const CRITERIA: &[Criterion] = &[
    Criterion {
        name: "gradient suite",
        budget: Duration::from_secs(2 * MIN),
        run: gradients::run,
    },
    Criterion {
        name: "boosting-law suite",
        budget: Duration::from_secs(MIN),
        run: boosting_laws::run,
    },
    Criterion {
        name: "metric oracle suite",
        budget: Duration::from_secs(2 * MIN),
        run: metric_oracle::run,
    },
    Criterion {
        name: "pipeline suite",
        budget: Duration::from_secs(MIN),
        run: pipeline::run,
    },
    Criterion {
        name: "grid search",
        budget: Duration::from_secs(5 * MIN),
        run: grid_search::run,
    },
    Criterion {
        name: "reproducibility",
        budget: Duration::from_secs(5 * MIN),
        run: reproducibility::run,
    },
    Criterion {
        name: "directional end-to-end",
        budget: Duration::from_secs(30 * MIN),
        run: end_to_end::run,
    },
];

#[test]
fn acceptance() {
    let only = std::env::var("ACCEPTANCE_ONLY").ok();
    let mut failed = Vec::new();
    for c in CRITERIA {
        if only.as_deref().is_some_and(|o| !c.name.contains(o)) {
            continue;
        }
        report(&format!("[acceptance] running {}", c.name));
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run));
        let took = start.elapsed();
        let verdict = match outcome {
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into());
                Err(msg)
            }
            Ok(()) if took > c.budget => Err(format!("over budget of {:?}", c.budget)),
            Ok(()) => Ok(()),
        };
        match verdict {
            Ok(()) => report(&format!("[acceptance] PASS {} ({:.1?})", c.name, took)),
            Err(why) => {
                report(&format!("[acceptance] FAIL {} ({:.1?}): {why}", c.name, took));
                failed.push(c.name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
