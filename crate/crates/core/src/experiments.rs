//! Experiment harness: labeled feature sets from dataset records, split
//! experiments (train + evaluate), cross-evaluation against other record
//! subsets, and pcap export of simulated records.

use crate::chansim::mac_from_label;
use crate::dataset::{DatasetRecord, Split};
use crate::dot11::{
    ChannelWidth, FeedbackFrame, FeedbackType, Grouping, VhtMimoControl,
};
use crate::features;
use crate::net::{
    self, EvalReport, LabeledSet, ModelParams, NetConfig, TrainOptions, TrainResult,
};
use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("feature error: {0}")]
    Feature(#[from] crate::features::FeatureError),
    #[error("network error: {0}")]
    Net(#[from] crate::net::NetError),
    #[error("invalid experiment: {0}")]
    Invalid(String),
}

/// Which slice of the feedback matrix feeds the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSelection {
    pub streams: Vec<usize>,
    pub antennas: Vec<usize>,
    /// Keep only the lowest `n_col` sounded subcarriers; `None` keeps all.
    pub n_col: Option<usize>,
    /// Apply the offset-correction sanitizer before stacking.
    pub cleaned: bool,
}

impl FeatureSelection {
    /// Stream 0 over all antennas and subcarriers, raw.
    pub fn stream0(tx_antennas: usize) -> Self {
        Self {
            streams: vec![0],
            antennas: (0..tx_antennas).collect(),
            n_col: None,
            cleaned: false,
        }
    }
}

/// Sorted distinct device labels; the class index space.
pub fn device_classes(records: &[DatasetRecord]) -> Vec<String> {
    let mut names: Vec<String> = records
        .iter()
        .map(|r| r.device_id.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    names.sort();
    names
}

/// Build classifier inputs for the chosen record indices.
pub fn build_labeled_set(
    records: &[DatasetRecord],
    indices: &[usize],
    subcarriers: &[i16],
    sel: &FeatureSelection,
    class_names: &[String],
) -> Result<LabeledSet, ExperimentError> {
    if indices.is_empty() {
        return Ok(LabeledSet {
            class_names: class_names.to_vec(),
            ..LabeledSet::default()
        });
    }
    let k_total = subcarriers.len();
    let n_col = sel.n_col.unwrap_or(k_total);
    if n_col == 0 || n_col > k_total {
        return Err(ExperimentError::Invalid(format!(
            "n_col={n_col} outside 1..={k_total}"
        )));
    }
    let ksel: Vec<usize> = (0..n_col).collect();

    let built: Result<Vec<(ndarray::Array3<f64>, usize)>, ExperimentError> = indices
        .par_iter()
        .map(|&i| {
            let record = &records[i];
            let label = class_names
                .iter()
                .position(|c| *c == record.device_id)
                .ok_or_else(|| {
                    ExperimentError::Invalid(format!(
                        "device {} not in class table",
                        record.device_id
                    ))
                })?;
            let mut v = features::record_to_vmatrix(record, subcarriers)?;
            if sel.cleaned {
                v = features::clean_offsets(&v);
            }
            let tensor = features::build_features(&v, &sel.streams, &sel.antennas, &ksel)?;
            Ok((tensor.values, label))
        })
        .collect();
    let mut set = LabeledSet {
        class_names: class_names.to_vec(),
        ..LabeledSet::default()
    };
    for (sample, label) in built? {
        set.samples.push(sample);
        set.labels.push(label);
    }
    Ok(set)
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: NetConfig,
    pub params: ModelParams,
    pub class_names: Vec<String>,
    pub history: Vec<net::EpochStats>,
    pub best_epoch: usize,
    pub accuracy: f64,
    pub confusion: Array2<usize>,
}

/// Train on a split's train/val portions and evaluate on its test
/// portion. `net_template` supplies everything but the class count and
/// input shape, which are derived from the data and selection.
pub fn run_experiment(
    records: &[DatasetRecord],
    subcarriers: &[i16],
    split: &Split,
    sel: &FeatureSelection,
    net_template: &NetConfig,
    opts: &TrainOptions,
) -> Result<ExperimentOutcome, ExperimentError> {
    let class_names = device_classes(records);
    if class_names.len() < 2 {
        return Err(ExperimentError::Invalid(
            "need at least two devices to fingerprint".into(),
        ));
    }
    let train_set = build_labeled_set(records, &split.train, subcarriers, sel, &class_names)?;
    let val_set = build_labeled_set(records, &split.val, subcarriers, sel, &class_names)?;
    let test_set = build_labeled_set(records, &split.test, subcarriers, sel, &class_names)?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(ExperimentError::Invalid(
            "split produced an empty train or test set".into(),
        ));
    }

    let input_shape = train_set.samples[0].dim();
    let mut config = net_template.clone();
    config.n_classes = class_names.len();
    config.input_shape = input_shape;
    config.validate()?;

    let TrainResult {
        params,
        history,
        best_epoch,
        ..
    } = net::train(&config, &train_set, &val_set, opts)?;
    let report = net::evaluate(&params, &config, &test_set)?;
    Ok(ExperimentOutcome {
        config,
        params,
        class_names,
        history,
        best_epoch,
        accuracy: report.accuracy,
        confusion: report.confusion,
    })
}

/// Evaluate an already-trained model on some other record subset (for
/// example the other beamformee's feedback).
pub fn evaluate_subset(
    outcome: &ExperimentOutcome,
    records: &[DatasetRecord],
    indices: &[usize],
    subcarriers: &[i16],
    sel: &FeatureSelection,
) -> Result<EvalReport, ExperimentError> {
    let set = build_labeled_set(records, indices, subcarriers, sel, &outcome.class_names)?;
    if set.is_empty() {
        return Err(ExperimentError::Invalid("empty evaluation subset".into()));
    }
    Ok(net::evaluate(&outcome.params, &outcome.config, &set)?)
}

fn width_from_mhz(mhz: u16) -> Result<ChannelWidth, ExperimentError> {
    match mhz {
        20 => Ok(ChannelWidth::Mhz20),
        40 => Ok(ChannelWidth::Mhz40),
        80 => Ok(ChannelWidth::Mhz80),
        other => Err(ExperimentError::Invalid(format!(
            "bandwidth {other} MHz has no frame encoding"
        ))),
    }
}

/// Re-express a dataset record as an over-the-air feedback frame.
pub fn record_to_frame(
    record: &DatasetRecord,
    subcarriers: &[i16],
) -> Result<FeedbackFrame, ExperimentError> {
    let m = usize::from(record.control.m);
    let n_ss = usize::from(record.control.n_ss);
    let codebook_info = match record.control.b_phi {
        7 => 0,
        9 => 1,
        other => {
            return Err(ExperimentError::Invalid(format!(
                "b_phi={other} is not an over-the-air codebook"
            )))
        }
    };
    let control = VhtMimoControl {
        nc_index: (n_ss - 1) as u8,
        nr_index: (m - 1) as u8,
        channel_width: width_from_mhz(record.control.bandwidth_mhz)?,
        grouping_ng: Grouping::Ng1,
        codebook_info,
        feedback_type: FeedbackType::Mu,
        remaining_segments: 0,
        first_segment: true,
        sounding_dialog_token: 0,
    };
    let count = control.angles_per_subcarrier();
    if record.q_phi.len() != count * subcarriers.len() {
        return Err(ExperimentError::Invalid(format!(
            "record carries {} words, subcarrier table needs {}",
            record.q_phi.len(),
            count * subcarriers.len()
        )));
    }
    let (b_psi, b_phi) = control.angle_bits();
    let angles = (0..subcarriers.len())
        .map(|ki| crate::codec::QuantizedAngleSetSlice {
            q_phi: record.q_phi[ki * count..(ki + 1) * count].to_vec(),
            q_psi: record.q_psi[ki * count..(ki + 1) * count].to_vec(),
            b_phi,
            b_psi,
            m,
            n_ss,
        })
        .collect();
    Ok(FeedbackFrame {
        source_mac: mac_from_label(&record.beamformee_id),
        dest_mac: mac_from_label(&record.device_id),
        control,
        per_stream_snr: vec![100; n_ss],
        angles,
        subcarrier_indices: subcarriers.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chansim::{generate_dataset, sample_devices, ScenarioConfig};
    use crate::dataset::{make_split, SplitSpec};

    fn small_dataset() -> (Vec<i16>, Vec<DatasetRecord>) {
        let cfg = ScenarioConfig::from_toml_str(
            r#"
mode = "static"
devices = 2
sounding_rate_hz = 1.0
duration_s = 10.0
bandwidth_mhz = 20

[room]
width_m = 6.0
depth_m = 5.0
reflection = 0.65

[beamformer]
position = [3.0, 1.0]
antennas = 3

[[beamformees]]
id = "bfee1"
position = [2.8, 3.0]
antennas = 2
streams = 2
step = [-0.1, 0.0]

[static]
positions = 9
"#,
        )
        .unwrap();
        let devices = sample_devices(&cfg, 21);
        let (header, records) = generate_dataset(&cfg, &devices, 21).unwrap();
        (header.subcarriers, records)
    }

    #[test]
    fn class_table_is_sorted_and_distinct() {
        let (_, records) = small_dataset();
        let classes = device_classes(&records);
        assert_eq!(classes, vec!["dev00".to_string(), "dev01".to_string()]);
    }

    #[test]
    fn labeled_set_matches_selection_shape() {
        let (subs, records) = small_dataset();
        let classes = device_classes(&records);
        let sel = FeatureSelection::stream0(3);
        let idx: Vec<usize> = (0..6).collect();
        let set = build_labeled_set(&records, &idx, &subs, &sel, &classes).unwrap();
        assert_eq!(set.len(), 6);
        assert_eq!(set.samples[0].dim(), (1, 54, 5));

        let sel = FeatureSelection {
            streams: vec![0],
            antennas: vec![0, 1],
            n_col: Some(20),
            cleaned: false,
        };
        let set = build_labeled_set(&records, &idx, &subs, &sel, &classes).unwrap();
        assert_eq!(set.samples[0].dim(), (1, 20, 4));
    }

    #[test]
    fn split_experiment_runs_end_to_end() {
        let (subs, records) = small_dataset();
        let split = make_split(SplitSpec::S1, &records).unwrap();
        let sel = FeatureSelection::stream0(3);
        let mut template = NetConfig::with_defaults(0, (1, 1, 1));
        template.filters = 8;
        template.dense_sizes = vec![16, 8];
        let opts = TrainOptions {
            max_epochs: 3,
            batch_size: 16,
            seed: 5,
            ..TrainOptions::default()
        };
        let outcome = run_experiment(&records, &subs, &split, &sel, &template, &opts).unwrap();
        assert_eq!(outcome.class_names.len(), 2);
        assert_eq!(outcome.confusion.dim(), (2, 2));
        assert_eq!(outcome.history.len(), 3);
        let total: usize = outcome.confusion.iter().sum();
        assert_eq!(total, split.test.len());

        // Cross-evaluation over the training indices also works.
        let report =
            evaluate_subset(&outcome, &records, &split.train, &subs, &sel).unwrap();
        assert_eq!(report.confusion.iter().sum::<usize>(), split.train.len());
    }

    #[test]
    fn record_export_round_trips_through_the_frame_codec() {
        let (subs, records) = small_dataset();
        let frame = record_to_frame(&records[0], &subs).unwrap();
        let bytes = crate::dot11::encode_frame(&frame, crate::dot11::BitOrder::Lsb).unwrap();
        let back =
            crate::dot11::parse_frame(&bytes, &crate::dot11::ParseOptions::default()).unwrap();
        assert_eq!(back, frame);
        let flat: Vec<u16> = back
            .angles
            .iter()
            .flat_map(|q| q.q_phi.iter().copied())
            .collect();
        assert_eq!(flat, records[0].q_phi);
    }
}
