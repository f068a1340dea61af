//! VHT compressed beamforming frame layout.
//!
//! A feedback frame is a management Action / Action-No-Ack frame:
//!
//! ```text
//! mac header (24 B) | category 21 | action 0 | VHT MIMO control (3 B)
//!   | per-stream SNR (Nc B) | packed angle words | zero pad to a byte
//! ```
//!
//! Angle words are packed per subcarrier in canonical decomposition order
//! (for each column index i: the phi words, then the psi words), with
//! subcarriers ascending and no padding between subcarriers.

use super::bits::{BitOrder, BitReader, BitWriter};
use super::FrameError;
use crate::codec::{AngleSetSlice, QuantizedAngleSetSlice};

/// Management frame category for VHT action frames.
pub const CATEGORY_VHT: u8 = 21;
/// Action code for a VHT compressed beamforming report.
pub const ACTION_VHT_COMPRESSED_BF: u8 = 0;

const MAC_HEADER_LEN: usize = 24;
/// Frame control for a management Action No Ack frame (type 0, subtype 14).
const FC_ACTION_NO_ACK: u8 = 0xe0;
const FC_ACTION: u8 = 0xd0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelWidth {
    Mhz20,
    Mhz40,
    Mhz80,
    Mhz160,
}

impl ChannelWidth {
    pub fn code(self) -> u16 {
        match self {
            Self::Mhz20 => 0,
            Self::Mhz40 => 1,
            Self::Mhz80 => 2,
            Self::Mhz160 => 3,
        }
    }

    pub fn from_code(code: u16) -> Self {
        match code & 0b11 {
            0 => Self::Mhz20,
            1 => Self::Mhz40,
            2 => Self::Mhz80,
            _ => Self::Mhz160,
        }
    }

    pub fn mhz(self) -> u32 {
        match self {
            Self::Mhz20 => 20,
            Self::Mhz40 => 40,
            Self::Mhz80 => 80,
            Self::Mhz160 => 160,
        }
    }
}

/// Subcarrier grouping: report every Ng-th subcarrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    Ng1,
    Ng2,
    Ng4,
}

impl Grouping {
    pub fn code(self) -> u16 {
        match self {
            Self::Ng1 => 0,
            Self::Ng2 => 1,
            Self::Ng4 => 2,
        }
    }

    pub fn from_code(code: u16) -> Result<Self, FrameError> {
        match code & 0b11 {
            0 => Ok(Self::Ng1),
            1 => Ok(Self::Ng2),
            2 => Ok(Self::Ng4),
            _ => Err(FrameError::InvalidField("grouping code 3 is reserved".into())),
        }
    }

    pub fn step(self) -> usize {
        match self {
            Self::Ng1 => 1,
            Self::Ng2 => 2,
            Self::Ng4 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackType {
    Su,
    Mu,
}

/// The 3-byte control field announcing the feedback geometry and codebook.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VhtMimoControl {
    /// Streams minus one (3 bits).
    pub nc_index: u8,
    /// TX antennas minus one (3 bits).
    pub nr_index: u8,
    pub channel_width: ChannelWidth,
    pub grouping_ng: Grouping,
    /// Selects the codebook; meaning depends on `feedback_type`.
    pub codebook_info: u8,
    pub feedback_type: FeedbackType,
    pub remaining_segments: u8,
    pub first_segment: bool,
    pub sounding_dialog_token: u8,
}

impl VhtMimoControl {
    pub fn streams(&self) -> usize {
        usize::from(self.nc_index) + 1
    }

    pub fn tx_antennas(&self) -> usize {
        usize::from(self.nr_index) + 1
    }

    /// Codebook bit widths `(b_psi, b_phi)`.
    pub fn angle_bits(&self) -> (u8, u8) {
        match (self.feedback_type, self.codebook_info) {
            (FeedbackType::Mu, 0) => (5, 7),
            (FeedbackType::Mu, _) => (7, 9),
            (FeedbackType::Su, 0) => (2, 4),
            (FeedbackType::Su, _) => (4, 6),
        }
    }

    /// Number of phi (= psi) angle words per reported subcarrier.
    pub fn angles_per_subcarrier(&self) -> usize {
        AngleSetSlice::angle_count(self.tx_antennas(), self.streams())
    }

    pub fn to_bytes(&self) -> [u8; 3] {
        let mut w = BitWriter::new(BitOrder::Lsb);
        w.write(u16::from(self.nc_index & 0x7), 3);
        w.write(u16::from(self.nr_index & 0x7), 3);
        w.write(self.channel_width.code(), 2);
        w.write(self.grouping_ng.code(), 2);
        w.write(u16::from(self.codebook_info & 1), 1);
        w.write(
            match self.feedback_type {
                FeedbackType::Su => 0,
                FeedbackType::Mu => 1,
            },
            1,
        );
        w.write(u16::from(self.remaining_segments & 0x7), 3);
        w.write(u16::from(self.first_segment), 1);
        w.write(0, 2); // reserved
        w.write(u16::from(self.sounding_dialog_token & 0x3f), 6);
        let bytes = w.into_bytes();
        [bytes[0], bytes[1], bytes[2]]
    }

    pub fn from_bytes(bytes: [u8; 3]) -> Result<Self, FrameError> {
        let mut r = BitReader::new(&bytes, BitOrder::Lsb);
        let nc_index = r.read(3).unwrap() as u8;
        let nr_index = r.read(3).unwrap() as u8;
        let channel_width = ChannelWidth::from_code(r.read(2).unwrap());
        let grouping_ng = Grouping::from_code(r.read(2).unwrap())?;
        let codebook_info = r.read(1).unwrap() as u8;
        let feedback_type = if r.read(1).unwrap() == 0 {
            FeedbackType::Su
        } else {
            FeedbackType::Mu
        };
        let remaining_segments = r.read(3).unwrap() as u8;
        let first_segment = r.read(1).unwrap() == 1;
        let _reserved = r.read(2).unwrap();
        let sounding_dialog_token = r.read(6).unwrap() as u8;
        Ok(Self {
            nc_index,
            nr_index,
            channel_width,
            grouping_ng,
            codebook_info,
            feedback_type,
            remaining_segments,
            first_segment,
            sounding_dialog_token,
        })
    }
}

/// A decoded compressed beamforming report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedbackFrame {
    /// Transmitter of the report (the beamformee).
    pub source_mac: [u8; 6],
    /// Receiver of the report (the beamformer).
    pub dest_mac: [u8; 6],
    pub control: VhtMimoControl,
    /// One signed byte per stream, 0.25 dB units with a -10 dB offset.
    pub per_stream_snr: Vec<i8>,
    /// One quantized angle set per reported subcarrier, ascending.
    pub angles: Vec<QuantizedAngleSetSlice>,
    pub subcarrier_indices: Vec<i16>,
}

impl FeedbackFrame {
    /// SNR in dB for a raw per-stream byte.
    pub fn snr_db(raw: i8) -> f64 {
        -10.0 + 0.25 * f64::from(raw)
    }

    /// Packed angle payload size in bytes for this frame's geometry.
    pub fn angle_payload_len(&self) -> usize {
        let (b_psi, b_phi) = self.control.angle_bits();
        let per_sc = self.control.angles_per_subcarrier()
            * (usize::from(b_phi) + usize::from(b_psi));
        (self.angles.len() * per_sc).div_ceil(8)
    }
}

/// Sounded subcarrier indices for a bandwidth/grouping pair.
///
/// For Ng = 1 the sets exclude the DC/control region and the pilot tones:
/// 234 indices at 80 MHz, 110 at 40 MHz and 54 at 20 MHz. Grouped feedback
/// (Ng > 1) walks the occupied range in steps of Ng without the pilot
/// exclusion, since grouping already skips most tones.
pub fn subcarriers_for(width: ChannelWidth, grouping: Grouping) -> Result<Vec<i16>, FrameError> {
    let (lo, hi, pilots): (i16, i16, &[i16]) = match width {
        ChannelWidth::Mhz20 => (2, 28, &[]),
        ChannelWidth::Mhz40 => (2, 58, &[11, 53]),
        ChannelWidth::Mhz80 => (2, 122, &[11, 39, 75, 103]),
        ChannelWidth::Mhz160 => {
            return Err(FrameError::Unsupported("160 MHz feedback".into()))
        }
    };
    let step = grouping.step() as i16;
    let mut idx = Vec::new();
    let mut k = lo;
    while k <= hi {
        let skip = grouping == Grouping::Ng1 && pilots.contains(&k);
        if !skip {
            idx.push(-k);
            idx.push(k);
        }
        k += step;
    }
    idx.sort_unstable();
    Ok(idx)
}

/// Serialize a feedback frame to raw 802.11 bytes.
pub fn encode_frame(frame: &FeedbackFrame, bit_order: BitOrder) -> Result<Vec<u8>, FrameError> {
    let control = &frame.control;
    let m = control.tx_antennas();
    let n_ss = control.streams();
    let (b_psi, b_phi) = control.angle_bits();
    let per_sc = control.angles_per_subcarrier();

    if frame.per_stream_snr.len() != n_ss {
        return Err(FrameError::InvalidField(format!(
            "expected {n_ss} SNR bytes, got {}",
            frame.per_stream_snr.len()
        )));
    }
    if frame.angles.len() != frame.subcarrier_indices.len() {
        return Err(FrameError::InvalidField(format!(
            "{} angle sets but {} subcarrier indices",
            frame.angles.len(),
            frame.subcarrier_indices.len()
        )));
    }
    for q in &frame.angles {
        if q.m != m || q.n_ss != n_ss || q.b_phi != b_phi || q.b_psi != b_psi {
            return Err(FrameError::InvalidField(
                "angle set geometry does not match the control field".into(),
            ));
        }
        if q.q_phi.len() != per_sc || q.q_psi.len() != per_sc {
            return Err(FrameError::InvalidField(
                "angle word count does not match the control field".into(),
            ));
        }
        if q.q_phi.iter().any(|&w| u32::from(w) >= 1u32 << b_phi)
            || q.q_psi.iter().any(|&w| u32::from(w) >= 1u32 << b_psi)
        {
            return Err(FrameError::InvalidField("angle word out of range".into()));
        }
    }

    let mut out = Vec::with_capacity(MAC_HEADER_LEN + 5 + n_ss + frame.angle_payload_len());
    out.push(FC_ACTION_NO_ACK);
    out.push(0x00);
    out.extend_from_slice(&[0x00, 0x00]); // duration
    out.extend_from_slice(&frame.dest_mac);
    out.extend_from_slice(&frame.source_mac);
    out.extend_from_slice(&frame.dest_mac); // bssid
    out.extend_from_slice(&[0x00, 0x00]); // sequence control
    out.push(CATEGORY_VHT);
    out.push(ACTION_VHT_COMPRESSED_BF);
    out.extend_from_slice(&control.to_bytes());
    for &snr in &frame.per_stream_snr {
        out.push(snr as u8);
    }

    let mut w = BitWriter::new(bit_order);
    for q in &frame.angles {
        write_subcarrier_angles(&mut w, q, m, n_ss, b_phi, b_psi);
    }
    out.extend_from_slice(&w.into_bytes());
    Ok(out)
}

/// Wire order per subcarrier: for each column i, the phi words then the
/// psi words. The flat `q_phi`/`q_psi` vectors already store blocks in
/// that column order, so this interleaves the two vectors blockwise.
fn write_subcarrier_angles(
    w: &mut BitWriter,
    q: &QuantizedAngleSetSlice,
    m: usize,
    n_ss: usize,
    b_phi: u8,
    b_psi: u8,
) {
    let p = n_ss.min(m - 1);
    let mut pos = 0;
    for i in 1..=p {
        for off in 0..(m - i) {
            w.write(q.q_phi[pos + off], b_phi);
        }
        for off in 0..(m - i) {
            w.write(q.q_psi[pos + off], b_psi);
        }
        pos += m - i;
    }
}

fn read_subcarrier_angles(
    r: &mut BitReader,
    m: usize,
    n_ss: usize,
    b_phi: u8,
    b_psi: u8,
) -> Option<(Vec<u16>, Vec<u16>)> {
    let count = AngleSetSlice::angle_count(m, n_ss);
    let mut q_phi = Vec::with_capacity(count);
    let mut q_psi = Vec::with_capacity(count);
    let p = n_ss.min(m.saturating_sub(1));
    for i in 1..=p {
        for _ in 0..(m - i) {
            q_phi.push(r.read(b_phi)?);
        }
        for _ in 0..(m - i) {
            q_psi.push(r.read(b_psi)?);
        }
    }
    Some((q_phi, q_psi))
}

/// Decode a feedback frame starting at its 802.11 MAC header.
pub fn parse_frame(bytes: &[u8], opts: &super::ParseOptions) -> Result<FeedbackFrame, FrameError> {
    let bytes = if opts.fcs_present {
        let len = bytes.len();
        if len < 4 {
            return Err(FrameError::Truncated("shorter than an FCS".into()));
        }
        &bytes[..len - 4]
    } else {
        bytes
    };

    let fc0 = *bytes
        .first()
        .ok_or_else(|| FrameError::Truncated("empty frame".into()))?;
    if fc0 != FC_ACTION_NO_ACK && fc0 != FC_ACTION {
        return Err(FrameError::NotFeedback("not an action frame"));
    }
    if bytes.len() < MAC_HEADER_LEN + 2 {
        return Err(FrameError::Truncated(format!(
            "{} bytes is too short for a mac header and action fields",
            bytes.len()
        )));
    }
    if bytes[MAC_HEADER_LEN] != CATEGORY_VHT {
        return Err(FrameError::NotFeedback("category is not VHT"));
    }
    if bytes[MAC_HEADER_LEN + 1] != ACTION_VHT_COMPRESSED_BF {
        return Err(FrameError::NotFeedback("not a compressed beamforming action"));
    }

    let mut dest_mac = [0u8; 6];
    dest_mac.copy_from_slice(&bytes[4..10]);
    let mut source_mac = [0u8; 6];
    source_mac.copy_from_slice(&bytes[10..16]);

    let ctrl_start = MAC_HEADER_LEN + 2;
    let ctrl_bytes: [u8; 3] = bytes
        .get(ctrl_start..ctrl_start + 3)
        .ok_or_else(|| FrameError::Truncated("control field cut off".into()))?
        .try_into()
        .unwrap();
    let control = VhtMimoControl::from_bytes(ctrl_bytes)?;

    let n_ss = control.streams();
    let m = control.tx_antennas();
    if m < 2 || n_ss > m {
        return Err(FrameError::InvalidField(format!(
            "implausible geometry m={m}, n_ss={n_ss}"
        )));
    }
    let snr_start = ctrl_start + 3;
    let per_stream_snr: Vec<i8> = bytes
        .get(snr_start..snr_start + n_ss)
        .ok_or_else(|| FrameError::Truncated("SNR bytes cut off".into()))?
        .iter()
        .map(|&b| b as i8)
        .collect();

    let subcarrier_indices = subcarriers_for(control.channel_width, control.grouping_ng)?;
    let (b_psi, b_phi) = control.angle_bits();
    let payload = &bytes[snr_start + n_ss..];
    let mut reader = BitReader::new(payload, opts.bit_order);
    let mut angles = Vec::with_capacity(subcarrier_indices.len());
    for _ in &subcarrier_indices {
        let (q_phi, q_psi) = read_subcarrier_angles(&mut reader, m, n_ss, b_phi, b_psi)
            .ok_or_else(|| {
                FrameError::Truncated(format!(
                    "angle payload ends after {} of {} subcarriers",
                    angles.len(),
                    subcarrier_indices.len()
                ))
            })?;
        angles.push(QuantizedAngleSetSlice {
            q_phi,
            q_psi,
            b_phi,
            b_psi,
            m,
            n_ss,
        });
    }

    Ok(FeedbackFrame {
        source_mac,
        dest_mac,
        control,
        per_stream_snr,
        angles,
        subcarrier_indices,
    })
}
