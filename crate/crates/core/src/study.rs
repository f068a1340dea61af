//! Quantization-error study.
//!
//! Draws random multipath channels, runs the full feedback chain
//! (decompose, quantize, dequantize, reconstruct) and reports the
//! absolute reconstruction error per TX antenna and spatial stream for
//! each codebook, on paired draws so codebooks are directly comparable.

use crate::chansim::{mix_seed, Path, PathSet};
use crate::codec;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("need at least 1000 draws, got {0}")]
    TooFewDraws(usize),
    #[error("simulation failure: {0}")]
    Sim(String),
}

#[derive(Debug, Clone)]
pub struct QuantStudyOptions {
    pub draws: usize,
    pub seed: u64,
    /// TX antennas of the simulated link.
    pub tx: usize,
    /// RX antennas of the simulated link.
    pub rx: usize,
    pub n_ss: usize,
    /// Phi bit widths to compare (psi is always two less).
    pub codebooks: Vec<u8>,
}

impl Default for QuantStudyOptions {
    fn default() -> Self {
        Self {
            draws: 100_000,
            seed: 0,
            tx: 3,
            rx: 2,
            n_ss: 2,
            codebooks: vec![7, 9],
        }
    }
}

/// Summary statistics of one (antenna, stream) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStats {
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

#[derive(Debug, Clone)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

pub const HIST_BINS: usize = 80;
pub const HIST_MAX: f64 = 0.8;

#[derive(Debug, Clone)]
pub struct CodebookReport {
    pub b_phi: u8,
    pub b_psi: u8,
    /// `cells[m][s]` for antenna m, stream s.
    pub cells: Vec<Vec<CellStats>>,
    pub histograms: Vec<Vec<Histogram>>,
}

#[derive(Debug, Clone)]
pub struct QuantStudyReport {
    pub draws: usize,
    pub tx: usize,
    pub n_ss: usize,
    pub codebooks: Vec<CodebookReport>,
}

impl QuantStudyReport {
    pub fn codebook(&self, b_phi: u8) -> Option<&CodebookReport> {
        self.codebooks.iter().find(|c| c.b_phi == b_phi)
    }
}

/// One random geometric channel slice: a handful of rays with random
/// gains and delays, evaluated at a random subcarrier.
fn random_channel_slice(
    rng: &mut impl Rng,
    tx: usize,
    rx: usize,
) -> Result<codec::CfrSlice, StudyError> {
    let k = loop {
        let k = rng.gen_range(-122i16..=122);
        if k != 0 {
            break k;
        }
    };
    let paths = (0..tx)
        .map(|_| {
            (0..rx)
                .map(|_| {
                    (0..5)
                        .map(|_| Path {
                            amplitude: rng.gen_range(0.05..1.0),
                            delay: rng.gen_range(0.0..200e-9),
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let ps = PathSet {
        paths,
        f_c: 5.21e9,
        symbol_period: 3.2e-6,
        subcarriers: vec![k],
    };
    let tensor = crate::chansim::synth_cfr(&ps).map_err(|e| StudyError::Sim(e.to_string()))?;
    let entries =
        codec::CMat::from_fn(tx, rx, |r, c| tensor.values[(0, r, c)]);
    codec::CfrSlice::new(entries, i32::from(k)).map_err(|e| StudyError::Sim(e.to_string()))
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[idx]
}

/// Run the study. Parallel over draw chunks; deterministic per seed.
pub fn quantstudy(opts: &QuantStudyOptions) -> Result<QuantStudyReport, StudyError> {
    if opts.draws < 1000 {
        return Err(StudyError::TooFewDraws(opts.draws));
    }
    let n_cells = opts.tx * opts.n_ss;
    let n_books = opts.codebooks.len();

    // errors[book][cell][draw] within each chunk
    type ChunkErrors = Vec<Vec<Vec<f64>>>;
    const CHUNK: usize = 1024;
    let n_chunks = opts.draws.div_ceil(CHUNK);
    let chunk_results: Result<Vec<ChunkErrors>, StudyError> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(opts.seed, 0x95, chunk as u64));
            let in_chunk = CHUNK.min(opts.draws - chunk * CHUNK);
            let mut errors: ChunkErrors =
                vec![vec![Vec::with_capacity(in_chunk); n_cells]; n_books];
            for _ in 0..in_chunk {
                let h = random_channel_slice(&mut rng, opts.tx, opts.rx)?;
                let v = codec::svd_beamforming(&h, opts.n_ss)
                    .map_err(|e| StudyError::Sim(e.to_string()))?;
                let angles =
                    codec::givens_decompose(&v).map_err(|e| StudyError::Sim(e.to_string()))?;
                let reference =
                    codec::reconstruct_v(&angles).map_err(|e| StudyError::Sim(e.to_string()))?;
                for (bi, &b_phi) in opts.codebooks.iter().enumerate() {
                    let q = codec::quantize_angles(&angles, b_phi)
                        .map_err(|e| StudyError::Sim(e.to_string()))?;
                    let rebuilt = codec::reconstruct_v(&codec::dequantize_angles(&q))
                        .map_err(|e| StudyError::Sim(e.to_string()))?;
                    for m in 0..opts.tx {
                        for s in 0..opts.n_ss {
                            let err = (rebuilt.entries[(m, s)] - reference.entries[(m, s)])
                                .norm();
                            errors[bi][m * opts.n_ss + s].push(err);
                        }
                    }
                }
            }
            Ok(errors)
        })
        .collect();
    let chunk_results = chunk_results?;

    let mut merged: Vec<Vec<Vec<f64>>> =
        vec![vec![Vec::with_capacity(opts.draws); n_cells]; n_books];
    for chunk in chunk_results {
        for (bi, cells) in chunk.into_iter().enumerate() {
            for (ci, vals) in cells.into_iter().enumerate() {
                merged[bi][ci].extend(vals);
            }
        }
    }

    let codebooks = opts
        .codebooks
        .iter()
        .enumerate()
        .map(|(bi, &b_phi)| {
            let mut cells = vec![Vec::with_capacity(opts.n_ss); opts.tx];
            let mut histograms = vec![Vec::with_capacity(opts.n_ss); opts.tx];
            for m in 0..opts.tx {
                for s in 0..opts.n_ss {
                    let vals = &merged[bi][m * opts.n_ss + s];
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    let mut sorted = vals.clone();
                    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    cells[m].push(CellStats {
                        mean,
                        p50: percentile(&sorted, 0.5),
                        p90: percentile(&sorted, 0.9),
                        p99: percentile(&sorted, 0.99),
                        max: *sorted.last().unwrap(),
                    });
                    let bin_width = HIST_MAX / HIST_BINS as f64;
                    let mut counts = vec![0u64; HIST_BINS];
                    for &v in vals {
                        let bin = ((v / bin_width) as usize).min(HIST_BINS - 1);
                        counts[bin] += 1;
                    }
                    histograms[m].push(Histogram { bin_width, counts });
                }
            }
            CodebookReport {
                b_phi,
                b_psi: b_phi - 2,
                cells,
                histograms,
            }
        })
        .collect();

    Ok(QuantStudyReport {
        draws: opts.draws,
        tx: opts.tx,
        n_ss: opts.n_ss,
        codebooks,
    })
}
