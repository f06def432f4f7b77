//! Regenerates the committed fixtures under `fixtures/`. The outputs are
//! deterministic, so rerunning this program must leave the files unchanged:
//!
//! ```text
//! cargo run -p pimix --example make_fixtures
//! ```
//!
//! `reference_ehr.csv` is a synthetic stand-in for a registry cohort built
//! with colorectal-screening-like settings (visit gaps of a few years, high
//! baseline testing uptake, imperfect sensitivity). It serves as the donor
//! pool for schedule-resampling runs. `sim1_n500.csv` is one draw of the
//! benchmark design with its ground truth committed alongside.

use pimix::dist::AftFamily;
use pimix::io::{write_dataset, write_truth};
use pimix::simgen::{gen_sim1, CovariateDist, Sim1Config};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

fn write_cohort(dir: &Path, stem: &str, config: &Sim1Config, seed: u64) {
    let cohort = gen_sim1(config, seed).expect("valid config");
    let data = File::create(dir.join(format!("{stem}.csv"))).expect("create dataset");
    write_dataset(BufWriter::new(data), &cohort.dataset, None).expect("write dataset");
    let truth = File::create(dir.join(format!("{stem}_truth.csv"))).expect("create truth");
    write_truth(BufWriter::new(truth), &cohort.truth).expect("write truth");
    println!("{stem}: {} subjects", cohort.dataset.len());
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    std::fs::create_dir_all(&dir).expect("fixtures dir");

    let reference = Sim1Config {
        n: 600,
        family: AftFamily::Weibull,
        beta_x: vec![2.8, -0.1, -0.2],
        sigma: 0.75,
        theta: -0.65,
        beta_w_slopes: vec![0.1, 0.1],
        kappa: 0.8,
        p_baseline_test: 0.93,
        covariate_law: vec![CovariateDist::StdNormal; 2],
        gap: (1.5, 6.5),
        censor_mean: 6.0,
    };
    write_cohort(&dir, "reference_ehr", &reference, 2024);

    let benchmark = Sim1Config::benchmark(500, 0.22, 0.8, 1.0);
    write_cohort(&dir, "sim1_n500", &benchmark, 424_242);
}
