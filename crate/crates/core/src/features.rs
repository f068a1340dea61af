//! Classifier input construction.
//!
//! Angle records are dequantized and rebuilt into feedback matrices, then
//! selected entries are laid out as stacked I/Q planes. The real-only last
//! antenna row contributes a single plane. An optional offset sanitizer
//! removes the constant and linear phase terms per antenna row, the
//! baseline the raw pipeline is compared against.

use crate::codec::{self, QuantizedAngleSetSlice};
use crate::dataset::DatasetRecord;
use ndarray::Array3;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("records do not share one configuration: {0}")]
    MixedConfig(String),
    #[error("invalid selection: {0}")]
    BadSelection(String),
    #[error("no records")]
    Empty,
    #[error("codec failure: {0}")]
    Codec(#[from] codec::CodecError),
}

/// A reconstructed feedback matrix stack: (subcarrier, TX antenna, stream).
#[derive(Debug, Clone)]
pub struct VMatrix {
    pub values: Array3<Complex64>,
    pub subcarriers: Vec<i16>,
}

impl VMatrix {
    pub fn tx(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn streams(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Stacked I/Q planes ready for the classifier, shape
/// `(rows = streams, cols = subcarriers, channels)`.
#[derive(Debug, Clone)]
pub struct FeatureTensor {
    pub values: Array3<f64>,
    pub meta: FeatureMeta,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureMeta {
    pub device_id: Option<String>,
    pub beamformee_id: String,
    pub streams: Vec<usize>,
    pub antennas: Vec<usize>,
    /// Positional subcarrier selection (indices into the record's list).
    pub subcarriers: Vec<usize>,
    /// Total TX antennas in the source matrix, so the dropped-Q layout is
    /// reconstructible.
    pub total_antennas: usize,
}

/// Rebuild one record's feedback matrices from its quantized words.
pub fn record_to_vmatrix(
    record: &DatasetRecord,
    subcarriers: &[i16],
) -> Result<VMatrix, FeatureError> {
    let m = usize::from(record.control.m);
    let n_ss = usize::from(record.control.n_ss);
    let count = codec::AngleSetSlice::angle_count(m, n_ss);
    let k_len = subcarriers.len();
    if record.q_phi.len() != k_len * count || record.q_psi.len() != k_len * count {
        return Err(FeatureError::MixedConfig(format!(
            "record has {} phi words, expected {} ({} subcarriers x {})",
            record.q_phi.len(),
            k_len * count,
            k_len,
            count
        )));
    }
    let mut values = Array3::zeros((k_len, m, n_ss));
    for ki in 0..k_len {
        let q = QuantizedAngleSetSlice {
            q_phi: record.q_phi[ki * count..(ki + 1) * count].to_vec(),
            q_psi: record.q_psi[ki * count..(ki + 1) * count].to_vec(),
            b_phi: record.control.b_phi,
            b_psi: record.control.b_psi,
            m,
            n_ss,
        };
        let v = codec::reconstruct_v(&codec::dequantize_angles(&q))?;
        for r in 0..m {
            for c in 0..n_ss {
                values[(ki, r, c)] = v.entries[(r, c)];
            }
        }
    }
    Ok(VMatrix {
        values,
        subcarriers: subcarriers.to_vec(),
    })
}

/// Rebuild a batch of records sharing one configuration.
pub fn records_to_vmatrix(
    records: &[&DatasetRecord],
    subcarriers: &[i16],
) -> Result<Vec<VMatrix>, FeatureError> {
    let first = records.first().ok_or(FeatureError::Empty)?;
    for r in records.iter().skip(1) {
        if r.control != first.control {
            return Err(FeatureError::MixedConfig(format!(
                "{:?} vs {:?}",
                r.control, first.control
            )));
        }
    }
    records
        .iter()
        .map(|r| record_to_vmatrix(r, subcarriers))
        .collect()
}

fn check_selection(sel: &[usize], bound: usize, what: &str) -> Result<(), FeatureError> {
    if sel.is_empty() {
        return Err(FeatureError::BadSelection(format!("empty {what} selection")));
    }
    if sel.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FeatureError::BadSelection(format!(
            "{what} selection must be strictly ascending"
        )));
    }
    if *sel.last().unwrap() >= bound {
        return Err(FeatureError::BadSelection(format!(
            "{what} selection exceeds bound {bound}"
        )));
    }
    Ok(())
}

/// Number of channel planes for an antenna selection out of `total`
/// antennas: two per antenna, minus the dropped Q plane when the last
/// antenna is selected (its entries are real by construction).
pub fn channel_count(antennas: &[usize], total: usize) -> usize {
    let has_last = antennas.contains(&(total - 1));
    2 * antennas.len() - usize::from(has_last)
}

/// Stack the selected entries into I/Q planes, antenna-major
/// (I1, Q1, I2, Q2, I3 for three antennas with the last one selected).
pub fn build_features(
    v: &VMatrix,
    streams: &[usize],
    antennas: &[usize],
    subcarriers: &[usize],
) -> Result<FeatureTensor, FeatureError> {
    let m = v.tx();
    check_selection(streams, v.streams(), "stream")?;
    check_selection(antennas, m, "antenna")?;
    check_selection(subcarriers, v.subcarriers.len(), "subcarrier")?;

    let n_row = streams.len();
    let n_col = subcarriers.len();
    let n_ch = channel_count(antennas, m);
    let mut values = Array3::zeros((n_row, n_col, n_ch));
    for (ri, &s) in streams.iter().enumerate() {
        for (ci, &ksel) in subcarriers.iter().enumerate() {
            let mut ch = 0;
            for &a in antennas {
                let entry = v.values[(ksel, a, s)];
                values[(ri, ci, ch)] = entry.re;
                ch += 1;
                if a != m - 1 {
                    values[(ri, ci, ch)] = entry.im;
                    ch += 1;
                }
            }
        }
    }
    Ok(FeatureTensor {
        values,
        meta: FeatureMeta {
            device_id: None,
            beamformee_id: String::new(),
            streams: streams.to_vec(),
            antennas: antennas.to_vec(),
            subcarriers: subcarriers.to_vec(),
            total_antennas: m,
        },
    })
}

/// Invert [`build_features`] over its selection: re-interleave the planes
/// into complex entries (stream, col, antenna). The dropped Q plane comes
/// back as a zero imaginary part.
pub fn features_to_complex(t: &FeatureTensor) -> Array3<Complex64> {
    let n_row = t.values.shape()[0];
    let n_col = t.values.shape()[1];
    let ants = &t.meta.antennas;
    let mut out = Array3::zeros((n_row, n_col, ants.len()));
    for r in 0..n_row {
        for c in 0..n_col {
            let mut ch = 0;
            for (ai, &a) in ants.iter().enumerate() {
                let re = t.values[(r, c, ch)];
                ch += 1;
                let im = if a != t.meta.total_antennas - 1 {
                    let v = t.values[(r, c, ch)];
                    ch += 1;
                    v
                } else {
                    0.0
                };
                out[(r, c, ai)] = Complex64::new(re, im);
            }
        }
    }
    out
}

/// Sequentially unwrap phases with a pi jump threshold.
fn unwrap_phases(raw: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.len());
    let mut offset = 0.0;
    for (i, &p) in raw.iter().enumerate() {
        if i == 0 {
            out.push(p);
            continue;
        }
        let mut d = p - raw[i - 1];
        while d > std::f64::consts::PI {
            d -= std::f64::consts::TAU;
        }
        while d < -std::f64::consts::PI {
            d += std::f64::consts::TAU;
        }
        offset += d;
        out.push(raw[0] + offset);
    }
    out
}

/// Least-squares line fit through (x, y) points.
fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return (sy / n, 0.0);
    }
    let beta = (n * sxy - sx * sy) / denom;
    let alpha = (sy - beta * sx) / n;
    (alpha, beta)
}

/// Offset-correction baseline: per antenna row, fit a line to the
/// unwrapped phase of the stream-0 entries across subcarriers and rotate
/// the whole row by its negation. Removes the constant and linear terms
/// of the hardware phase offset; magnitudes are untouched.
pub fn clean_offsets(v: &VMatrix) -> VMatrix {
    let (k_len, m, n_ss) = {
        let s = v.values.shape();
        (s[0], s[1], s[2])
    };
    let xs: Vec<f64> = v.subcarriers.iter().map(|&k| f64::from(k)).collect();
    let mut values = v.values.clone();
    for a in 0..m {
        let raw: Vec<f64> = (0..k_len).map(|ki| v.values[(ki, a, 0)].arg()).collect();
        let unwrapped = unwrap_phases(&raw);
        let (alpha, beta) = fit_line(&xs, &unwrapped);
        for ki in 0..k_len {
            let rot = Complex64::from_polar(1.0, -(alpha + beta * xs[ki]));
            for s in 0..n_ss {
                values[(ki, a, s)] *= rot;
            }
        }
    }
    VMatrix {
        values,
        subcarriers: v.subcarriers.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{PositionTag, RecordControl};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn zero_record(k_len: usize) -> DatasetRecord {
        let count = codec::AngleSetSlice::angle_count(3, 2);
        DatasetRecord {
            device_id: "dev00".into(),
            beamformee_id: "bfee1".into(),
            trace_id: "pos1".into(),
            timestamp: 0.0,
            position_tag: PositionTag::Index(1),
            control: RecordControl {
                m: 3,
                n_ss: 2,
                b_phi: 9,
                b_psi: 7,
                bandwidth_mhz: 80,
            },
            q_phi: vec![0; k_len * count],
            q_psi: vec![0; k_len * count],
        }
    }

    fn random_record(rng: &mut impl Rng, k_len: usize) -> DatasetRecord {
        let mut r = zero_record(k_len);
        for w in &mut r.q_phi {
            *w = rng.gen_range(0..512);
        }
        for w in &mut r.q_psi {
            *w = rng.gen_range(0..128);
        }
        r
    }

    fn subcarrier_list(k_len: usize) -> Vec<i16> {
        (0..k_len).map(|i| i as i16 - (k_len / 2) as i16).collect()
    }

    #[test]
    fn zero_words_give_min_center_slices() {
        let subs = subcarrier_list(4);
        let record = zero_record(4);
        let v = record_to_vmatrix(&record, &subs).unwrap();
        let expect = codec::reconstruct_v(&codec::dequantize_angles(&QuantizedAngleSetSlice {
            q_phi: vec![0; 3],
            q_psi: vec![0; 3],
            b_phi: 9,
            b_psi: 7,
            m: 3,
            n_ss: 2,
        }))
        .unwrap();
        for ki in 0..4 {
            for r in 0..3 {
                for c in 0..2 {
                    assert!((v.values[(ki, r, c)] - expect.entries[(r, c)]).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn full_bandwidth_shape() {
        let subs = subcarrier_list(234);
        let v = record_to_vmatrix(&zero_record(234), &subs).unwrap();
        assert_eq!(v.values.shape(), &[234, 3, 2]);
    }

    #[test]
    fn mixed_configs_are_rejected() {
        let subs = subcarrier_list(4);
        let a = zero_record(4);
        let mut b = zero_record(4);
        b.control.b_phi = 7;
        b.control.b_psi = 5;
        assert!(matches!(
            records_to_vmatrix(&[&a, &b], &subs),
            Err(FeatureError::MixedConfig(_))
        ));
    }

    #[test]
    fn feature_shapes_match_selections() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let subs = subcarrier_list(234);
        let v = record_to_vmatrix(&random_record(&mut rng, 234), &subs).unwrap();
        let all_k: Vec<usize> = (0..234).collect();
        let t = build_features(&v, &[0], &[0, 1, 2], &all_k).unwrap();
        assert_eq!(t.values.shape(), &[1, 234, 5]);
        let t = build_features(&v, &[0], &[0, 1], &all_k).unwrap();
        assert_eq!(t.values.shape(), &[1, 234, 4]);
        let t = build_features(&v, &[0, 1], &[1, 2], &all_k).unwrap();
        assert_eq!(t.values.shape(), &[2, 234, 3]);
    }

    #[test]
    fn bad_selections_are_rejected() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let subs = subcarrier_list(8);
        let v = record_to_vmatrix(&random_record(&mut rng, 8), &subs).unwrap();
        assert!(build_features(&v, &[], &[0], &[0]).is_err());
        assert!(build_features(&v, &[0], &[0, 0], &[0]).is_err());
        assert!(build_features(&v, &[0], &[0], &[9]).is_err());
        assert!(build_features(&v, &[2], &[0], &[0]).is_err());
    }

    #[test]
    fn features_reinterleave_losslessly() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let subs = subcarrier_list(16);
        let v = record_to_vmatrix(&random_record(&mut rng, 16), &subs).unwrap();
        let streams = [0usize, 1];
        let antennas = [0usize, 2];
        let ksel: Vec<usize> = vec![1, 4, 5, 9];
        let t = build_features(&v, &streams, &antennas, &ksel).unwrap();
        let back = features_to_complex(&t);
        for (ri, &s) in streams.iter().enumerate() {
            for (ci, &k) in ksel.iter().enumerate() {
                for (ai, &a) in antennas.iter().enumerate() {
                    let orig = v.values[(k, a, s)];
                    let got = back[(ri, ci, ai)];
                    assert!(
                        (orig - got).norm() <= 1e-9,
                        "lossy reinterleave at ({ri},{ci},{ai})"
                    );
                }
            }
        }
    }

    #[test]
    fn last_antenna_row_is_real() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let subs = subcarrier_list(32);
        for _ in 0..5 {
            let v = record_to_vmatrix(&random_record(&mut rng, 32), &subs).unwrap();
            for ki in 0..32 {
                for s in 0..2 {
                    assert!(v.values[(ki, 2, s)].im.abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn subsetting_commutes_with_building() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let subs = subcarrier_list(32);
        let v = record_to_vmatrix(&random_record(&mut rng, 32), &subs).unwrap();
        let ksel: Vec<usize> = (4..20).collect();
        let direct = build_features(&v, &[0], &[0, 1, 2], &ksel).unwrap();
        let all: Vec<usize> = (0..32).collect();
        let full = build_features(&v, &[0], &[0, 1, 2], &all).unwrap();
        for (ci, &k) in ksel.iter().enumerate() {
            for ch in 0..5 {
                assert_eq!(direct.values[(0, ci, ch)], full.values[(0, k, ch)]);
            }
        }
    }

    #[test]
    fn clean_offsets_cancels_synthetic_linear_phase() {
        // Flat channel with a pure alpha + beta*k row phase comes out flat.
        let k_len = 64;
        let subs = subcarrier_list(k_len);
        let mut values = Array3::<Complex64>::zeros((k_len, 2, 1));
        let (alpha, beta) = (0.8, 0.02);
        for (ki, &k) in subs.iter().enumerate() {
            let phase = alpha + beta * f64::from(k);
            values[(ki, 0, 0)] = Complex64::from_polar(0.7, phase);
            values[(ki, 1, 0)] = Complex64::new(0.5, 0.0);
        }
        let cleaned = clean_offsets(&VMatrix {
            values,
            subcarriers: subs,
        });
        for ki in 0..k_len {
            assert!(cleaned.values[(ki, 0, 0)].arg().abs() < 1e-6);
            assert!((cleaned.values[(ki, 0, 0)].norm() - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn clean_offsets_is_identity_on_zero_phase_input() {
        let k_len = 16;
        let subs = subcarrier_list(k_len);
        let mut values = Array3::<Complex64>::zeros((k_len, 2, 1));
        for ki in 0..k_len {
            values[(ki, 0, 0)] = Complex64::new(0.9, 0.0);
            values[(ki, 1, 0)] = Complex64::new(0.3, 0.0);
        }
        let v = VMatrix {
            values: values.clone(),
            subcarriers: subs,
        };
        let cleaned = clean_offsets(&v);
        for (a, b) in values.iter().zip(cleaned.values.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn clean_offsets_preserves_magnitudes() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let subs = subcarrier_list(32);
        let v = record_to_vmatrix(&random_record(&mut rng, 32), &subs).unwrap();
        let cleaned = clean_offsets(&v);
        for (a, b) in v.values.iter().zip(cleaned.values.iter()) {
            assert!((a.norm() - b.norm()).abs() <= 1e-12);
        }
    }

    #[test]
    fn quantization_error_bounded_by_codec_sweep() {
        // Bound the record-level reconstruction error by the codec-level
        // worst case measured on random matrices with the same codebook.
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut codec_worst = 0.0f64;
        for _ in 0..2000 {
            let v = crate::codec::test_support::random_unitary_cols(&mut rng, 3, 2);
            let angles = codec::givens_decompose(&v).unwrap();
            let reference = codec::reconstruct_v(&angles).unwrap();
            let q = codec::quantize_angles(&angles, 9).unwrap();
            let rebuilt = codec::reconstruct_v(&codec::dequantize_angles(&q)).unwrap();
            for r in 0..3 {
                for c in 0..2 {
                    codec_worst = codec_worst
                        .max((rebuilt.entries[(r, c)] - reference.entries[(r, c)]).norm());
                }
            }
        }

        let cfg = crate::chansim::ScenarioConfig::from_toml_str(
            r#"
mode = "static"
devices = 2
sounding_rate_hz = 1.0
duration_s = 2.0
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

[static]
positions = 1
"#,
        )
        .unwrap();
        let devices = crate::chansim::sample_devices(&cfg, 5);
        let subs = crate::dot11::subcarriers_for(
            crate::dot11::ChannelWidth::Mhz20,
            crate::dot11::Grouping::Ng1,
        )
        .unwrap();
        let scenario_rng = &mut ChaCha12Rng::seed_from_u64(8);
        let scenario = crate::chansim::test_support::scenario_from_config(
            &cfg,
            &devices[0],
            &subs,
            scenario_rng,
        );
        let out = crate::chansim::sound_detailed(&scenario, 0.0, scenario_rng).unwrap();
        let s = &out.soundings[0];
        let truth = s.truth_v.as_ref().unwrap();

        let mut record = zero_record(subs.len());
        record.q_phi = s.q_phi.clone();
        record.q_psi = s.q_psi.clone();
        let v = record_to_vmatrix(&record, &subs).unwrap();
        let mut worst = 0.0f64;
        for ki in 0..subs.len() {
            for r in 0..3 {
                for c in 0..2 {
                    worst = worst.max((v.values[(ki, r, c)] - truth[(ki, r, c)]).norm());
                }
            }
        }
        assert!(
            worst <= codec_worst * 1.5 + 1e-6,
            "record error {worst} exceeds codec sweep bound {codec_worst}"
        );
    }

    #[test]
    fn stream_one_has_larger_quantization_jitter() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let subs = subcarrier_list(64);
        let mut err = [0.0f64; 2];
        for _ in 0..30 {
            // Ground truth: random unquantized matrices per subcarrier.
            let mut truth = Array3::<Complex64>::zeros((64, 3, 2));
            let count = codec::AngleSetSlice::angle_count(3, 2);
            let mut q_phi = Vec::new();
            let mut q_psi = Vec::new();
            for ki in 0..64 {
                let v = crate::codec::test_support::random_unitary_cols(&mut rng, 3, 2);
                let angles = codec::givens_decompose(&v).unwrap();
                let reference = codec::reconstruct_v(&angles).unwrap();
                for r in 0..3 {
                    for c in 0..2 {
                        truth[(ki, r, c)] = reference.entries[(r, c)];
                    }
                }
                let q = codec::quantize_angles(&angles, 9).unwrap();
                q_phi.extend_from_slice(&q.q_phi);
                q_psi.extend_from_slice(&q.q_psi);
                assert_eq!(q.q_phi.len(), count);
            }
            let mut record = zero_record(64);
            record.q_phi = q_phi;
            record.q_psi = q_psi;
            let v = record_to_vmatrix(&record, &subs).unwrap();
            for (si, e) in err.iter_mut().enumerate() {
                for ki in 0..64 {
                    for r in 0..3 {
                        *e += (v.values[(ki, r, si)] - truth[(ki, r, si)]).norm();
                    }
                }
            }
        }
        assert!(
            err[1] > err[0],
            "stream 1 jitter {} should exceed stream 0 jitter {}",
            err[1],
            err[0]
        );
    }
}
