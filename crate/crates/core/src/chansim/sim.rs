//! Channel synthesis, impairment application and dataset generation.

use super::config::{MobilityConfig, ScenarioConfig, ScenarioMode};
use super::geometry::{image_method_paths, ula_positions};
use super::{
    gaussian, mix_seed, BeamformeeProfile, CfrTensor, DeviceProfile, PathSet, Scenario, SimError,
    TrackPoint, SPEED_OF_LIGHT,
};
use crate::codec::{self, CfrSlice, CMat};
use crate::dataset::{DatasetHeader, DatasetRecord, PositionTag, RecordControl};
use crate::dot11::{
    subcarriers_for, ChannelWidth, FeedbackFrame, FeedbackType, Grouping, VhtMimoControl,
};
use ndarray::Array3;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use std::f64::consts::TAU;

/// Evaluate the multipath sum for every (subcarrier, TX, RX) triple:
/// each ray contributes `A * exp(-j*2*pi*(f_c + k/T)*tau)`.
pub fn synth_cfr(paths: &PathSet) -> Result<CfrTensor, SimError> {
    paths.validate()?;
    let (k_len, m, n) = (paths.subcarriers.len(), paths.tx(), paths.rx());
    let mut values = Array3::<Complex64>::zeros((k_len, m, n));
    for (ki, &k) in paths.subcarriers.iter().enumerate() {
        let freq = paths.f_c + f64::from(k) / paths.symbol_period;
        for mi in 0..m {
            for ni in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for p in &paths.paths[mi][ni] {
                    acc += Complex64::from_polar(p.amplitude, -TAU * freq * p.delay);
                }
                values[(ki, mi, ni)] = acc;
            }
        }
    }
    Ok(CfrTensor {
        values,
        subcarriers: paths.subcarriers.clone(),
        symbol_period: paths.symbol_period,
    })
}

/// Distort the estimated channel with the beamformer's hardware identity
/// and the per-sounding timing nuisances:
///
/// `H_hat[k,m,n] = H[k,m,n] * exp(j*(cfo - 2*pi*k*(sfo + pdd)/T + ppo_m
/// + pa_m)) * ripple_m(k)`
pub fn apply_impairments(
    h: &CfrTensor,
    dev: &DeviceProfile,
    bfee: &BeamformeeProfile,
) -> CfrTensor {
    let (m, n) = (h.tx(), h.rx());
    debug_assert_eq!(dev.antennas(), m);
    let mut values = h.values.clone();
    for (ki, &k) in h.subcarriers.iter().enumerate() {
        let timing = -TAU * f64::from(k) * (dev.sfo + bfee.pdd) / h.symbol_period;
        for mi in 0..m {
            let phase = dev.cfo + timing + dev.ppo[mi] + dev.pa[mi];
            let factor = Complex64::from_polar(1.0, phase) * dev.gain_ripple[mi].eval(k);
            for ni in 0..n {
                values[(ki, mi, ni)] *= factor;
            }
        }
    }
    CfrTensor {
        values,
        subcarriers: h.subcarriers.clone(),
        symbol_period: h.symbol_period,
    }
}

/// Add complex white Gaussian noise at the given SNR relative to the
/// tensor's mean power.
pub fn add_noise(h: &mut CfrTensor, snr_db: f64, rng: &mut impl Rng) {
    let n_entries = h.values.len() as f64;
    let power: f64 = h.values.iter().map(|c| c.norm_sqr()).sum::<f64>() / n_entries;
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt() / std::f64::consts::SQRT_2;
    for v in h.values.iter_mut() {
        *v += Complex64::new(gaussian(rng) * sigma, gaussian(rng) * sigma);
    }
}

/// What one beamformee reports for one sounding event.
#[derive(Debug, Clone)]
pub struct BeamformeeSounding {
    pub beamformee_id: String,
    pub n_antennas: usize,
    pub n_ss: usize,
    /// Flat quantized words, subcarrier-major, canonical order inside.
    pub q_phi: Vec<u16>,
    pub q_psi: Vec<u16>,
    /// Unquantized reconstructed feedback matrix (K x M x n_ss), when
    /// requested.
    pub truth_v: Option<Array3<Complex64>>,
    /// Per-sounding nuisance draws, for introspection.
    pub cfo: f64,
    pub pdd: f64,
}

/// All feedback produced by one sounding event.
#[derive(Debug, Clone)]
pub struct SoundingOutput {
    pub t: f64,
    pub soundings: Vec<BeamformeeSounding>,
}

fn element_spacing(f_c: f64) -> f64 {
    SPEED_OF_LIGHT / f_c / 2.0
}

fn sound_impl(
    scenario: &Scenario,
    t: f64,
    rng: &mut impl Rng,
    want_truth: bool,
) -> Result<SoundingOutput, SimError> {
    if !(0.0..=scenario.duration).contains(&t) {
        return Err(SimError::OutOfRange(t));
    }
    let spacing = element_spacing(scenario.f_c);
    let ap_pos = scenario.beamformer_position(t);
    let tx_elements = ula_positions(ap_pos, scenario.tx_antennas, spacing);
    let mut soundings = Vec::with_capacity(scenario.beamformees.len());

    for bfee in &scenario.beamformees {
        let rx_elements = ula_positions(bfee.position, bfee.n_antennas, spacing);
        let paths = image_method_paths(
            &scenario.room,
            &tx_elements,
            &rx_elements,
            scenario.f_c,
            scenario.symbol_period,
            &scenario.subcarriers,
        );
        let h = synth_cfr(&paths)?;

        let cfo = rng.gen::<f64>() * TAU;
        let pdd = rng.gen::<f64>() * scenario.impairments.pdd_max_s;
        let dev = scenario.beamformer.with_cfo(cfo);
        let bf = bfee.with_pdd(pdd);
        let mut distorted = apply_impairments(&h, &dev, &bf);
        if let Some(snr) = scenario.noise_snr_db {
            add_noise(&mut distorted, snr, rng);
        }

        let k_len = scenario.subcarriers.len();
        let m = scenario.tx_antennas;
        let count = codec::AngleSetSlice::angle_count(m, bfee.n_ss);
        let mut q_phi = Vec::with_capacity(k_len * count);
        let mut q_psi = Vec::with_capacity(k_len * count);
        let mut truth_v = want_truth.then(|| Array3::zeros((k_len, m, bfee.n_ss)));
        for ki in 0..k_len {
            let slice = CMat::from_fn(m, bfee.n_antennas, |r, c| distorted.values[(ki, r, c)]);
            let cfr = CfrSlice::new(slice, i32::from(scenario.subcarriers[ki]))
                .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
            let v = codec::svd_beamforming(&cfr, bfee.n_ss)
                .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
            let angles = codec::givens_decompose(&v)
                .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
            let q = codec::quantize_angles(&angles, scenario.b_phi)
                .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
            q_phi.extend_from_slice(&q.q_phi);
            q_psi.extend_from_slice(&q.q_psi);
            if let Some(truth) = truth_v.as_mut() {
                let vt = codec::reconstruct_v(&angles)
                    .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
                for r in 0..m {
                    for c in 0..bfee.n_ss {
                        truth[(ki, r, c)] = vt.entries[(r, c)];
                    }
                }
            }
        }
        soundings.push(BeamformeeSounding {
            beamformee_id: bfee.beamformee_id.clone(),
            n_antennas: bfee.n_antennas,
            n_ss: bfee.n_ss,
            q_phi,
            q_psi,
            truth_v,
            cfo,
            pdd,
        });
    }
    Ok(SoundingOutput { t, soundings })
}

/// One sounding event with ground-truth feedback matrices attached.
pub fn sound_detailed(
    scenario: &Scenario,
    t: f64,
    rng: &mut impl Rng,
) -> Result<SoundingOutput, SimError> {
    sound_impl(scenario, t, rng, true)
}

/// One sounding event as over-the-air feedback frames, one per beamformee.
pub fn sound(
    scenario: &Scenario,
    t: f64,
    rng: &mut impl Rng,
) -> Result<Vec<FeedbackFrame>, SimError> {
    let out = sound_impl(scenario, t, rng, false)?;
    out.soundings
        .iter()
        .map(|s| sounding_to_frame(scenario, s))
        .collect()
}

fn width_from_mhz(mhz: u16) -> Result<ChannelWidth, SimError> {
    match mhz {
        20 => Ok(ChannelWidth::Mhz20),
        40 => Ok(ChannelWidth::Mhz40),
        80 => Ok(ChannelWidth::Mhz80),
        other => Err(SimError::InvalidScenario(format!(
            "unsupported bandwidth {other} MHz"
        ))),
    }
}

fn codebook_info_for(b_phi: u8) -> Result<u8, SimError> {
    match b_phi {
        7 => Ok(0),
        9 => Ok(1),
        other => Err(SimError::InvalidScenario(format!(
            "b_phi={other} has no over-the-air codebook encoding"
        ))),
    }
}

/// Deterministic locally-administered MAC derived from a label.
pub fn mac_from_label(label: &str) -> [u8; 6] {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let h = hash.to_le_bytes();
    [0x02, h[0], h[1], h[2], h[3], h[4]]
}

fn sounding_to_frame(
    scenario: &Scenario,
    s: &BeamformeeSounding,
) -> Result<FeedbackFrame, SimError> {
    let m = scenario.tx_antennas;
    let control = VhtMimoControl {
        nc_index: (s.n_ss - 1) as u8,
        nr_index: (m - 1) as u8,
        channel_width: width_from_mhz(scenario.bandwidth_mhz)?,
        grouping_ng: Grouping::Ng1,
        codebook_info: codebook_info_for(scenario.b_phi)?,
        feedback_type: FeedbackType::Mu,
        remaining_segments: 0,
        first_segment: true,
        sounding_dialog_token: 0,
    };
    let (b_psi, b_phi) = control.angle_bits();
    let count = control.angles_per_subcarrier();
    let snr_db = scenario.noise_snr_db.unwrap_or(25.0);
    let snr_raw = (((snr_db + 10.0) * 4.0).round() as i32).clamp(-128, 127) as i8;
    let angles = scenario
        .subcarriers
        .iter()
        .enumerate()
        .map(|(ki, _)| crate::codec::QuantizedAngleSetSlice {
            q_phi: s.q_phi[ki * count..(ki + 1) * count].to_vec(),
            q_psi: s.q_psi[ki * count..(ki + 1) * count].to_vec(),
            b_phi,
            b_psi,
            m,
            n_ss: s.n_ss,
        })
        .collect();
    Ok(FeedbackFrame {
        source_mac: mac_from_label(&s.beamformee_id),
        dest_mac: mac_from_label(&scenario.beamformer.device_id),
        control,
        per_stream_snr: vec![snr_raw; s.n_ss],
        angles,
        subcarrier_indices: scenario.subcarriers.clone(),
    })
}

/// One planned trace: its label, record tag, beamformee placement and the
/// nominal beamformer route (jitter applied per device/trace at runtime).
#[derive(Debug, Clone)]
struct TracePlan {
    trace_id: String,
    position_index: Option<u8>,
    group: Option<String>,
    bfee_offsets: [f64; 2],
    mobile: bool,
}

fn plan_traces(cfg: &ScenarioConfig) -> Vec<TracePlan> {
    match cfg.mode {
        ScenarioMode::Static => {
            let positions = cfg.static_sweep.map_or(1, |s| s.positions);
            (1..=positions)
                .map(|p| TracePlan {
                    trace_id: format!("pos{p}"),
                    position_index: Some(p as u8),
                    group: None,
                    bfee_offsets: [(p as f64) - 1.0, 0.0],
                    mobile: false,
                })
                .collect()
        }
        ScenarioMode::Mobility => {
            let mob = cfg.mobility.as_ref().expect("validated");
            let mut traces = Vec::new();
            for (group, count, mobile) in [
                ("fix1", mob.fix1, false),
                ("fix2", mob.fix2, false),
                ("mob1", mob.mob1, true),
                ("mob2", mob.mob2, true),
            ] {
                for i in 0..count {
                    traces.push(TracePlan {
                        trace_id: format!("{group}-{i}"),
                        position_index: None,
                        group: Some(group.to_string()),
                        bfee_offsets: [0.0, 0.0],
                        mobile,
                    });
                }
            }
            traces
        }
    }
}

/// Route sampled at constant speed, with per-trace Gaussian waypoint
/// jitter.
fn jittered_track(
    mob: &MobilityConfig,
    duration: f64,
    rng: &mut impl Rng,
) -> Vec<TrackPoint> {
    let points: Vec<[f64; 2]> = mob
        .waypoints
        .iter()
        .map(|w| {
            [
                w[0] + gaussian(rng) * mob.jitter_m,
                w[1] + gaussian(rng) * mob.jitter_m,
            ]
        })
        .collect();
    let mut lengths = vec![0.0f64];
    for w in points.windows(2) {
        let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        lengths.push(lengths.last().unwrap() + d);
    }
    let total: f64 = *lengths.last().unwrap();
    points
        .iter()
        .zip(&lengths)
        .map(|(p, &l)| TrackPoint {
            t: if total > 0.0 { duration * l / total } else { 0.0 },
            position: *p,
        })
        .collect()
}

fn build_scenario(
    cfg: &ScenarioConfig,
    device: &DeviceProfile,
    plan: &TracePlan,
    subcarriers: &[i16],
    rng: &mut impl Rng,
) -> Scenario {
    let track = if plan.mobile {
        jittered_track(cfg.mobility.as_ref().expect("validated"), cfg.duration_s, rng)
    } else {
        vec![TrackPoint {
            t: 0.0,
            position: cfg.beamformer.position,
        }]
    };
    let beamformees = cfg
        .beamformees
        .iter()
        .map(|b| BeamformeeProfile {
            beamformee_id: b.id.clone(),
            pdd: 0.0,
            position: [
                b.position[0] + b.step[0] * plan.bfee_offsets[0],
                b.position[1] + b.step[1] * plan.bfee_offsets[0],
            ],
            n_antennas: b.antennas,
            n_ss: b.streams,
        })
        .collect();
    Scenario {
        room: cfg.room.room(),
        f_c: cfg.f_c_hz,
        symbol_period: cfg.symbol_period_s,
        subcarriers: subcarriers.to_vec(),
        bandwidth_mhz: cfg.bandwidth_mhz,
        b_phi: cfg.b_phi,
        beamformer: device.clone(),
        track,
        tx_antennas: cfg.beamformer.antennas,
        beamformees,
        sounding_rate: cfg.sounding_rate_hz,
        duration: cfg.duration_s,
        noise_snr_db: cfg.noise_snr_db,
        impairments: cfg.impairments,
    }
}

/// Sample one device identity per index from the master seed.
pub fn sample_devices(cfg: &ScenarioConfig, seed: u64) -> Vec<DeviceProfile> {
    (0..cfg.devices)
        .map(|i| {
            let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, 0xdec0de, i as u64));
            DeviceProfile::sample(
                &format!("dev{i:02}"),
                cfg.beamformer.antennas,
                &cfg.impairments,
                &mut rng,
            )
        })
        .collect()
}

/// Run the full labeled simulation: every device through every trace.
///
/// Work is parallel over (device, trace) pairs; each pair derives its own
/// RNG stream from the master seed, so the output is identical however
/// many threads run it.
pub fn generate_dataset(
    cfg: &ScenarioConfig,
    devices: &[DeviceProfile],
    seed: u64,
) -> Result<(DatasetHeader, Vec<DatasetRecord>), SimError> {
    cfg.validate()?;
    if devices.len() < 2 {
        return Err(SimError::InvalidScenario(
            "need at least 2 devices to fingerprint".into(),
        ));
    }
    let subcarriers = subcarriers_for(width_from_mhz(cfg.bandwidth_mhz)?, Grouping::Ng1)
        .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
    let traces = plan_traces(cfg);
    let steps = (cfg.duration_s * cfg.sounding_rate_hz).round() as usize;
    let b_psi = cfg.b_phi.saturating_sub(2);

    let jobs: Vec<(usize, usize)> = (0..devices.len())
        .flat_map(|d| (0..traces.len()).map(move |t| (d, t)))
        .collect();
    let chunks: Result<Vec<Vec<DatasetRecord>>, SimError> = jobs
        .par_iter()
        .map(|&(di, ti)| {
            let device = &devices[di];
            let plan = &traces[ti];
            let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, di as u64, ti as u64));
            let scenario = build_scenario(cfg, device, plan, &subcarriers, &mut rng);
            let mut out = Vec::with_capacity(steps * scenario.beamformees.len());
            for step in 0..steps {
                let t = step as f64 / cfg.sounding_rate_hz;
                let sounding = sound_impl(&scenario, t, &mut rng, false)?;
                for s in sounding.soundings {
                    let position_tag = match (&plan.position_index, &plan.group) {
                        (Some(p), _) => PositionTag::Index(*p),
                        (None, Some(g)) => PositionTag::Group {
                            name: g.clone(),
                            progress: if cfg.duration_s > 0.0 {
                                t / cfg.duration_s
                            } else {
                                0.0
                            },
                        },
                        _ => PositionTag::Index(1),
                    };
                    out.push(DatasetRecord {
                        device_id: device.device_id.clone(),
                        beamformee_id: s.beamformee_id,
                        trace_id: plan.trace_id.clone(),
                        timestamp: t,
                        position_tag,
                        control: RecordControl {
                            m: scenario.tx_antennas as u8,
                            n_ss: s.n_ss as u8,
                            b_phi: cfg.b_phi,
                            b_psi,
                            bandwidth_mhz: cfg.bandwidth_mhz,
                        },
                        q_phi: s.q_phi,
                        q_psi: s.q_psi,
                    });
                }
            }
            Ok(out)
        })
        .collect();

    let records: Vec<DatasetRecord> = chunks?.into_iter().flatten().collect();
    Ok((DatasetHeader { subcarriers }, records))
}


#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Scenario for the first planned trace of a config; test helper.
    pub(crate) fn scenario_from_config(
        cfg: &ScenarioConfig,
        device: &DeviceProfile,
        subcarriers: &[i16],
        rng: &mut impl Rng,
    ) -> Scenario {
        let plans = plan_traces(cfg);
        build_scenario(cfg, device, &plans[0], subcarriers, rng)
    }
}
