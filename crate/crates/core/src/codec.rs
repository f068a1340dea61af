//! Beamforming feedback codec.
//!
//! Converts between per-subcarrier channel matrices, beamforming matrices,
//! Givens angles and quantized angle words. The decomposition peels a
//! unitary-column matrix into a diagonal phase matrix `D` and a chain of
//! real Givens rotations `G`; the reconstruction multiplies the chain back
//! together. Quantization maps angles onto the uniform codebooks used by
//! the over-the-air feedback format.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::f64::consts::PI;
use thiserror::Error;

/// Complex matrix alias used throughout the codec.
pub type CMat = DMatrix<Complex64>;

const TWO_PI: f64 = 2.0 * PI;

/// Tolerance for pure-math identities (unitarity of freshly constructed
/// matrices, round-trip checks).
pub const EXACT_TOL: f64 = 1e-9;
/// Tolerance for preconditions on measured or quantized data.
pub const MEASURED_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix columns are not orthonormal (max deviation {0:.3e})")]
    NotOrthonormal(f64),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("angle {value} outside domain for {which}")]
    AngleOutOfRange { which: &'static str, value: f64 },
    #[error("unsupported bit width b_phi={0} (need 3..=15)")]
    UnsupportedBits(u8),
    #[error("non-finite entry in channel matrix at ({0}, {1})")]
    NonFinite(usize, usize),
}

/// One subcarrier of the channel frequency response: an `M x N` matrix of
/// complex gains (TX antennas by RX antennas).
#[derive(Debug, Clone)]
pub struct CfrSlice {
    pub entries: CMat,
    /// Subcarrier index; may be negative per OFDM indexing.
    pub k: i32,
}

impl CfrSlice {
    pub fn new(entries: CMat, k: i32) -> Result<Self, CodecError> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(CodecError::DimensionMismatch(
                "channel matrix must be at least 1x1".into(),
            ));
        }
        for r in 0..entries.nrows() {
            for c in 0..entries.ncols() {
                let e = entries[(r, c)];
                if !e.re.is_finite() || !e.im.is_finite() {
                    return Err(CodecError::NonFinite(r, c));
                }
            }
        }
        Ok(Self { entries, k })
    }

    /// TX antenna count.
    pub fn tx(&self) -> usize {
        self.entries.nrows()
    }

    /// RX antenna count.
    pub fn rx(&self) -> usize {
        self.entries.ncols()
    }
}

/// One subcarrier of a beamforming matrix: `M x N_ss` with orthonormal
/// columns. Holds either the raw SVD form or the reconstructed form whose
/// last row is real and non-negative.
#[derive(Debug, Clone)]
pub struct VMatrixSlice {
    pub entries: CMat,
    pub k: i32,
}

impl VMatrixSlice {
    pub fn tx(&self) -> usize {
        self.entries.nrows()
    }

    pub fn streams(&self) -> usize {
        self.entries.ncols()
    }

    /// Max elementwise deviation of `V^H V` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.entries.adjoint() * &self.entries;
        let n = gram.nrows();
        let mut worst = 0.0f64;
        for r in 0..n {
            for c in 0..n {
                let target = if r == c {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
                worst = worst.max((gram[(r, c)] - target).norm());
            }
        }
        worst
    }
}

/// Ordered Givens angles for one subcarrier.
///
/// Ordering is the decomposition iteration order: outer index `i`
/// ascending; within each `i` first the phi angles for rows `i..=m-1`,
/// then the psi angles for rows `i+1..=m` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSetSlice {
    /// Phases in `[0, 2*pi)`.
    pub phi: Vec<f64>,
    /// Rotation angles in `[0, pi/2]`.
    pub psi: Vec<f64>,
    /// TX antenna count.
    pub m: usize,
    /// Spatial stream count.
    pub n_ss: usize,
}

impl AngleSetSlice {
    /// Number of phi (equivalently psi) angles for an `m x n_ss` matrix.
    pub fn angle_count(m: usize, n_ss: usize) -> usize {
        (1..=n_ss.min(m.saturating_sub(1))).map(|i| m - i).sum()
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let want = Self::angle_count(self.m, self.n_ss);
        if self.phi.len() != want || self.psi.len() != want {
            return Err(CodecError::DimensionMismatch(format!(
                "expected {} phi/psi angles for m={} n_ss={}, got {}/{}",
                want,
                self.m,
                self.n_ss,
                self.phi.len(),
                self.psi.len()
            )));
        }
        Ok(())
    }
}

/// Quantized angle words plus the codebook they were quantized with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedAngleSetSlice {
    pub q_phi: Vec<u16>,
    pub q_psi: Vec<u16>,
    pub b_phi: u8,
    pub b_psi: u8,
    pub m: usize,
    pub n_ss: usize,
}

impl QuantizedAngleSetSlice {
    /// True for the two codebooks the MU feedback format defines.
    pub fn is_standard_codebook(&self) -> bool {
        matches!(self.b_phi, 7 | 9) && self.b_psi == self.b_phi - 2
    }
}

/// Beamforming matrix from the channel: the first `n_ss` columns of the
/// right factor of the SVD of `H^T`, with singular values in descending
/// order.
///
/// Each returned column is rotated so its last entry is real and
/// non-negative, making the result deterministic (SVD columns are unique
/// only up to a unit-modulus scalar).
pub fn svd_beamforming(h: &CfrSlice, n_ss: usize) -> Result<VMatrixSlice, CodecError> {
    let m = h.tx();
    let n = h.rx();
    if n_ss == 0 || n_ss > m.min(n) {
        return Err(CodecError::DimensionMismatch(format!(
            "n_ss={n_ss} outside 1..=min(M={m}, N={n})"
        )));
    }
    let ht = h.entries.transpose();
    // svd() sorts singular values in descending order.
    let svd = ht.svd(false, true);
    let v_t = svd
        .v_t
        .expect("right singular vectors requested");
    // Rows of v_t are the conjugated right singular vectors; Z = v_t^H.
    let z = v_t.adjoint();
    let mut v = z.columns(0, n_ss).into_owned();
    for c in 0..n_ss {
        let last = v[(m - 1, c)];
        if last.norm() > 0.0 {
            let rot = Complex64::from_polar(1.0, -last.arg());
            for r in 0..m {
                v[(r, c)] *= rot;
            }
        }
    }
    Ok(VMatrixSlice { entries: v, k: h.k })
}

/// Phase in `[0, 2*pi)`, with the phase of an exact zero defined as 0.
fn phase(c: Complex64) -> f64 {
    if c.re == 0.0 && c.im == 0.0 {
        return 0.0;
    }
    let a = c.arg();
    if a < 0.0 {
        a + TWO_PI
    } else {
        a
    }
}

/// Decompose a unitary-column matrix into its Givens angle set.
///
/// First strips the diagonal phase matrix built from the last row, then for
/// each column peels the phi phases with `D^H` and rotates the remaining
/// real entries onto the diagonal with Givens rotations `G`. The angles
/// come out in canonical ordering.
pub fn givens_decompose(v: &VMatrixSlice) -> Result<AngleSetSlice, CodecError> {
    let dev = v.orthonormality_error();
    if dev > MEASURED_TOL {
        return Err(CodecError::NotOrthonormal(dev));
    }
    let m = v.tx();
    let n_ss = v.streams();
    let mut omega = v.entries.clone();

    // Omega = V * Dtilde^H; scales column c by exp(-j * angle(V[m-1, c])).
    for c in 0..n_ss {
        let rot = Complex64::from_polar(1.0, -phase(omega[(m - 1, c)]));
        for r in 0..m {
            omega[(r, c)] *= rot;
        }
    }

    let mut phi = Vec::new();
    let mut psi = Vec::new();
    let p = n_ss.min(m - 1);
    for i in 1..=p {
        // Phi angles: phases of column i, rows i..=m-1 (1-based).
        let col = i - 1;
        let mut phis_i = Vec::with_capacity(m - i);
        for row in i..=(m - 1) {
            phis_i.push(phase(omega[(row - 1, col)]));
        }
        // Omega <- D_i^H * Omega scales rows i..=m-1 by exp(-j phi).
        for (offset, &ph) in phis_i.iter().enumerate() {
            let row = i - 1 + offset;
            let rot = Complex64::from_polar(1.0, -ph);
            for c in 0..n_ss {
                omega[(row, c)] *= rot;
            }
        }
        phi.extend_from_slice(&phis_i);

        // Psi angles: rotate rows i+1..=m onto the diagonal entry.
        for ell in (i + 1)..=m {
            let a = omega[(i - 1, col)].re;
            let b = omega[(ell - 1, col)].re;
            let r = (a * a + b * b).sqrt();
            let ps = if r == 0.0 {
                0.0
            } else {
                (a / r).clamp(0.0, 1.0).acos()
            };
            let (s, c_) = ps.sin_cos();
            // Omega <- G_{ell,i} * Omega mixes rows i and ell.
            for c in 0..n_ss {
                let top = omega[(i - 1, c)];
                let bot = omega[(ell - 1, c)];
                omega[(i - 1, c)] = top.scale(c_) + bot.scale(s);
                omega[(ell - 1, c)] = bot.scale(c_) - top.scale(s);
            }
            psi.push(ps);
        }
    }

    Ok(AngleSetSlice {
        phi,
        psi,
        m,
        n_ss,
    })
}

/// Diagonal phase matrix `D_i`: an identity block of size `i-1`, then
/// `exp(j phi)` for rows `i..=m-1`, then a trailing 1. `phis` holds the
/// `m - i` phases in row order; `i` is the 1-based loop index.
pub fn build_d_matrix(phis: &[f64], i: usize, m: usize) -> Result<CMat, CodecError> {
    if i < 1 || i > m.saturating_sub(1) {
        return Err(CodecError::IndexOutOfRange(format!(
            "loop index i={i} outside 1..={} for m={m}",
            m.saturating_sub(1)
        )));
    }
    if phis.len() != m - i {
        return Err(CodecError::DimensionMismatch(format!(
            "expected {} phases for i={i}, m={m}, got {}",
            m - i,
            phis.len()
        )));
    }
    let mut d = CMat::identity(m, m);
    for (offset, &ph) in phis.iter().enumerate() {
        let row = i - 1 + offset;
        d[(row, row)] = Complex64::from_polar(1.0, ph);
    }
    Ok(d)
}

/// Givens rotation `G_{ell,i}` acting on coordinates `(i, ell)` (1-based):
/// `cos psi` on both diagonal entries, `sin psi` at `(i, ell)` and
/// `-sin psi` at `(ell, i)`, identity elsewhere.
pub fn build_g_matrix(psi: f64, ell: usize, i: usize, m: usize) -> Result<DMatrix<f64>, CodecError> {
    if i < 1 || ell <= i || ell > m {
        return Err(CodecError::IndexOutOfRange(format!(
            "need 1 <= i < ell <= m, got i={i}, ell={ell}, m={m}"
        )));
    }
    let mut g = DMatrix::<f64>::identity(m, m);
    let (s, c) = psi.sin_cos();
    g[(i - 1, i - 1)] = c;
    g[(ell - 1, ell - 1)] = c;
    g[(i - 1, ell - 1)] = s;
    g[(ell - 1, i - 1)] = -s;
    Ok(g)
}

fn complexify(g: &DMatrix<f64>) -> CMat {
    CMat::from_fn(g.nrows(), g.ncols(), |r, c| Complex64::new(g[(r, c)], 0.0))
}

/// Rebuild the feedback matrix from an angle set: the product of the
/// `D_i` matrices and transposed Givens rotations applied to a truncated
/// identity. The result has orthonormal columns and a real, non-negative
/// last row.
pub fn reconstruct_v(angles: &AngleSetSlice) -> Result<VMatrixSlice, CodecError> {
    angles.validate()?;
    let m = angles.m;
    let n_ss = angles.n_ss;
    let p = n_ss.min(m - 1);

    let mut acc = CMat::identity(m, m);
    let mut phi_pos = 0usize;
    let mut psi_pos = 0usize;
    for i in 1..=p {
        let phis_i = &angles.phi[phi_pos..phi_pos + (m - i)];
        phi_pos += m - i;
        acc *= build_d_matrix(phis_i, i, m)?;
        for ell in (i + 1)..=m {
            let g = build_g_matrix(angles.psi[psi_pos], ell, i, m)?;
            psi_pos += 1;
            acc *= complexify(&g).transpose();
        }
    }

    let v = acc.columns(0, n_ss).into_owned();
    Ok(VMatrixSlice { entries: v, k: 0 })
}

fn check_bits(b_phi: u8) -> Result<(), CodecError> {
    if !(3..=15).contains(&b_phi) {
        return Err(CodecError::UnsupportedBits(b_phi));
    }
    Ok(())
}

/// Quantize an angle set onto the `(b_psi, b_phi) = (b_phi - 2, b_phi)`
/// codebook. Rounds half away from zero and clamps to the codebook range,
/// the inverse of [`dequantize_angles`].
pub fn quantize_angles(
    angles: &AngleSetSlice,
    b_phi: u8,
) -> Result<QuantizedAngleSetSlice, CodecError> {
    angles.validate()?;
    check_bits(b_phi)?;
    let b_psi = b_phi - 2;
    let phi_max = (1u32 << b_phi) - 1;
    let psi_max = (1u32 << b_psi) - 1;

    let mut q_phi = Vec::with_capacity(angles.phi.len());
    for &x in &angles.phi {
        if !(-MEASURED_TOL..TWO_PI + MEASURED_TOL).contains(&x) {
            return Err(CodecError::AngleOutOfRange {
                which: "phi",
                value: x,
            });
        }
        let raw = x * f64::from(1u32 << (b_phi - 1)) / PI - 0.5;
        q_phi.push(raw.round().clamp(0.0, f64::from(phi_max)) as u16);
    }
    let mut q_psi = Vec::with_capacity(angles.psi.len());
    for &x in &angles.psi {
        if !(-MEASURED_TOL..PI / 2.0 + MEASURED_TOL).contains(&x) {
            return Err(CodecError::AngleOutOfRange {
                which: "psi",
                value: x,
            });
        }
        let raw = x * f64::from(1u32 << (b_psi + 1)) / PI - 0.5;
        q_psi.push(raw.round().clamp(0.0, f64::from(psi_max)) as u16);
    }

    Ok(QuantizedAngleSetSlice {
        q_phi,
        q_psi,
        b_phi,
        b_psi,
        m: angles.m,
        n_ss: angles.n_ss,
    })
}

/// Map quantized words back onto reconstruction centers:
/// `phi = pi*(1/2^b_phi + q/2^(b_phi-1))`,
/// `psi = pi*(1/2^(b_psi+2) + q/2^(b_psi+1))`.
pub fn dequantize_angles(q: &QuantizedAngleSetSlice) -> AngleSetSlice {
    let b_phi = u32::from(q.b_phi);
    let b_psi = u32::from(q.b_psi);
    let phi = q
        .q_phi
        .iter()
        .map(|&w| PI * (exp2_inv(b_phi) + f64::from(w) * exp2_inv(b_phi - 1)))
        .collect();
    let psi = q
        .q_psi
        .iter()
        .map(|&w| PI * (exp2_inv(b_psi + 2) + f64::from(w) * exp2_inv(b_psi + 1)))
        .collect();
    AngleSetSlice {
        phi,
        psi,
        m: q.m,
        n_ss: q.n_ss,
    }
}

fn exp2_inv(b: u32) -> f64 {
    f64::from(1u32 << b).recip()
}
