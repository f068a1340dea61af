// scratch probe: D1-analogue splits with candidate simulator defaults
use bfprint_core::chansim::{generate_dataset, sample_devices, ScenarioConfig};
use bfprint_core::dataset::{filter_beamformee, make_split, DatasetRecord, SplitSpec};
use bfprint_core::experiments::{
    device_classes, evaluate_subset, run_experiment, FeatureSelection,
};
use bfprint_core::net::{NetConfig, TrainOptions};
use std::time::Instant;

fn d1_toml(reflection: f64, snr: f64, amp: f64, phase: f64, bfee_y: f64) -> String {
    format!(
        r#"
mode = "static"
seed = 7
devices = 10
sounding_rate_hz = 1.5
duration_s = 20.0
noise_snr_db = {snr}

[room]
width_m = 6.0
depth_m = 5.0
reflection = {reflection}

[beamformer]
position = [3.0, 1.0]
antennas = 3

[[beamformees]]
id = "bfee1"
position = [2.8, {bfee_y}]
antennas = 2
streams = 2
step = [-0.1, 0.0]

[[beamformees]]
id = "bfee2"
position = [3.2, {bfee_y}]
antennas = 2
streams = 2
step = [0.1, 0.0]

[static]
positions = 9

[impairments]
ripple_amp_sigma = {amp}
ripple_phase_sigma = {phase}
"#
    )
}

fn subset_records(records: &[DatasetRecord], idx: &[usize]) -> Vec<DatasetRecord> {
    idx.iter().map(|&i| records[i].clone()).collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let reflection: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.65);
    let snr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(25.0);
    let amp: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.02);
    let phase: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let filters: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(32);
    let bfee_y: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(3.0);
    let quick: bool = args.get(7).map(|s| s == "quick").unwrap_or(false);

    let t0 = Instant::now();
    let cfg = ScenarioConfig::from_toml_str(&d1_toml(reflection, snr, amp, phase, bfee_y)).unwrap();
    let devices = sample_devices(&cfg, cfg.seed);
    let (header, records) = generate_dataset(&cfg, &devices, cfg.seed).unwrap();
    println!(
        "dataset: {} records in {:.1}s (reflection={reflection} snr={snr} amp={amp} phase={phase} filters={filters} bfee_y={bfee_y})",
        records.len(),
        t0.elapsed().as_secs_f64()
    );

    let bfee1 = subset_records(&records, &filter_beamformee(&records, "bfee1"));
    let bfee2 = subset_records(&records, &filter_beamformee(&records, "bfee2"));

    let mut template = NetConfig::with_defaults(0, (1, 1, 1));
    template.filters = filters;
    let opts = TrainOptions {
        max_epochs: 12,
        patience: 4,
        seed: 7,
        ..TrainOptions::default()
    };
    let sel = FeatureSelection::stream0(3);

    let mut outcomes = Vec::new();
    for spec in [SplitSpec::S1, SplitSpec::S2, SplitSpec::S3] {
        let t = Instant::now();
        let split = make_split(spec, &bfee1).unwrap();
        let outcome =
            run_experiment(&bfee1, &header.subcarriers, &split, &sel, &template, &opts).unwrap();
        println!(
            "{spec:?}: acc={:.4} (train {} test {} epochs {} in {:.1}s)",
            outcome.accuracy,
            split.train.len(),
            split.test.len(),
            outcome.history.len(),
            t.elapsed().as_secs_f64()
        );
        outcomes.push((spec, split, outcome));
    }

    // Swap beamformee: S1 model from bfee1 evaluated on bfee2's test rows.
    let (_, _, s1_outcome) = &outcomes[0];
    let split2 = make_split(SplitSpec::S1, &bfee2).unwrap();
    let classes = device_classes(&bfee2);
    assert_eq!(classes, s1_outcome.class_names);
    let report =
        evaluate_subset(s1_outcome, &bfee2, &split2.test, &header.subcarriers, &sel).unwrap();
    println!("swap-bfee: acc={:.4}", report.accuracy);

    if quick {
        println!("total {:.1}s", t0.elapsed().as_secs_f64());
        return;
    }

    // Cleaned S1.
    let cleaned_sel = FeatureSelection {
        cleaned: true,
        ..FeatureSelection::stream0(3)
    };
    let split = &outcomes[0].1;
    let outcome = run_experiment(
        &bfee1,
        &header.subcarriers,
        split,
        &cleaned_sel,
        &template,
        &opts,
    )
    .unwrap();
    println!("S1 cleaned: acc={:.4}", outcome.accuracy);

    // Stream-1 features on S1 and S2.
    let stream1_sel = FeatureSelection {
        streams: vec![1],
        ..FeatureSelection::stream0(3)
    };
    for (spec, split, _) in &outcomes[..2] {
        let outcome = run_experiment(
            &bfee1,
            &header.subcarriers,
            split,
            &stream1_sel,
            &template,
            &opts,
        )
        .unwrap();
        println!("{spec:?} stream1: acc={:.4}", outcome.accuracy);
    }

    // Bandwidth/antenna sweeps on S3.
    let (_, s3_split, s3_outcome) = &outcomes[2];
    println!("S3 234/3ant: acc={:.4}", s3_outcome.accuracy);
    for n_col in [110usize, 54] {
        let sub_sel = FeatureSelection {
            n_col: Some(n_col),
            ..FeatureSelection::stream0(3)
        };
        let outcome = run_experiment(
            &bfee1,
            &header.subcarriers,
            s3_split,
            &sub_sel,
            &template,
            &opts,
        )
        .unwrap();
        println!("S3 ncol={n_col}: acc={:.4}", outcome.accuracy);
    }
    for ants in [vec![0usize], vec![0, 1]] {
        let ant_sel = FeatureSelection {
            antennas: ants.clone(),
            ..FeatureSelection::stream0(3)
        };
        let outcome = run_experiment(
            &bfee1,
            &header.subcarriers,
            s3_split,
            &ant_sel,
            &template,
            &opts,
        )
        .unwrap();
        println!("S3 ants={ants:?}: acc={:.4}", outcome.accuracy);
    }

    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}
