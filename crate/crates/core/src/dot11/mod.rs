//! Decoder and encoder for VHT compressed beamforming action frames
//! carried in classic pcap captures.
//!
//! The parser is streaming: it walks pcap records, skips radiotap headers
//! when present, silently ignores anything that is not a beamforming
//! feedback frame, and yields decoded frames (or per-frame errors for
//! feedback frames that fail mid-parse) in capture order.

mod bits;
mod frame;
mod pcap;

pub use bits::{BitOrder, BitReader, BitWriter};
pub use frame::{
    encode_frame, parse_frame, subcarriers_for, ChannelWidth, FeedbackFrame, FeedbackType,
    Grouping, VhtMimoControl, ACTION_VHT_COMPRESSED_BF, CATEGORY_VHT,
};
pub use pcap::{
    parse_pcap, CaptureIter, CapturedFeedback, PcapReader, PcapRecord, PcapWriter,
    LINKTYPE_IEEE802_11, LINKTYPE_RADIOTAP,
};

use thiserror::Error;

/// Errors that abort an entire capture.
#[derive(Debug, Error)]
pub enum PcapError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad pcap magic {0:#010x}")]
    BadMagic(u32),
    #[error("unsupported link type {0} (expected 105 or 127)")]
    UnsupportedLinkType(u32),
    #[error("truncated pcap header")]
    TruncatedHeader,
    #[error("pcap record of {0} bytes exceeds the sanity limit")]
    OversizedRecord(u32),
}

/// Per-frame errors; the capture iterator keeps going after these.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("not a beamforming feedback frame ({0})")]
    NotFeedback(&'static str),
    #[error("frame truncated: {0}")]
    Truncated(String),
    #[error("unsupported grouping/bandwidth combination: {0}")]
    Unsupported(String),
    #[error("invalid frame field: {0}")]
    InvalidField(String),
}

/// Options shared by the capture iterator and the frame parser.
#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// Bit order of the packed angle words.
    pub bit_order: BitOrder,
    /// Trim a 4-byte FCS from the end of every frame before parsing.
    pub fcs_present: bool,
    /// Keep only frames whose transmitter address matches.
    pub source_mac: Option<[u8; 6]>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            bit_order: BitOrder::Lsb,
            fcs_present: false,
            source_mac: None,
        }
    }
}
