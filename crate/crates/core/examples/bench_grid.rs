//! A shorter run of the exact vs HLL++ comparison: two batch sizes, six
//! batches each, printed as the summary table plus the check lines.

use rtstream::bench::{check_report, run_experiment, summary_text, ExperimentConfig};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default_grid(dir.path());
    cfg.batch_sizes = vec![5000, 10000];
    cfg.batches = 6;
    let report = run_experiment(&cfg).unwrap();
    let checks = check_report(&report);
    print!("{}", summary_text(&report, &checks));
}
