//! Classic pcap container support.
//!
//! Only the classic format (magic `0xa1b2c3d4`, either endianness) is
//! handled, with link types 105 (raw 802.11) and 127 (radiotap). Radiotap
//! headers are skipped via their little-endian length field; their
//! contents are irrelevant here.

use super::frame::{parse_frame, FeedbackFrame};
use super::{FrameError, ParseOptions, PcapError};
use std::io::{Read, Write};

pub const LINKTYPE_IEEE802_11: u32 = 105;
pub const LINKTYPE_RADIOTAP: u32 = 127;

const PCAP_MAGIC: u32 = 0xa1b2_c3d4;
const PCAP_MAGIC_SWAPPED: u32 = 0xd4c3_b2a1;
/// Records larger than this are treated as corrupt rather than allocated.
const MAX_RECORD_LEN: u32 = 1 << 20;

/// One raw capture record.
#[derive(Debug, Clone)]
pub struct PcapRecord {
    pub ts_sec: u32,
    pub ts_usec: u32,
    pub data: Vec<u8>,
}

impl PcapRecord {
    pub fn timestamp(&self) -> f64 {
        f64::from(self.ts_sec) + f64::from(self.ts_usec) * 1e-6
    }
}

/// Streaming reader over the records of a classic pcap file.
pub struct PcapReader<R: Read> {
    inner: R,
    swapped: bool,
    pub link_type: u32,
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut inner: R) -> Result<Self, PcapError> {
        let mut header = [0u8; 24];
        inner
            .read_exact(&mut header)
            .map_err(|_| PcapError::TruncatedHeader)?;
        let magic = u32::from_le_bytes(header[0..4].try_into().unwrap());
        let swapped = match magic {
            PCAP_MAGIC => false,
            PCAP_MAGIC_SWAPPED => true,
            other => return Err(PcapError::BadMagic(other)),
        };
        let link_type = read_u32(&header[20..24], swapped);
        if link_type != LINKTYPE_IEEE802_11 && link_type != LINKTYPE_RADIOTAP {
            return Err(PcapError::UnsupportedLinkType(link_type));
        }
        Ok(Self {
            inner,
            swapped,
            link_type,
        })
    }

    /// Next record, or `None` at a clean end of file.
    pub fn next_record(&mut self) -> Option<Result<PcapRecord, PcapError>> {
        let mut rec_header = [0u8; 16];
        match self.inner.read_exact(&mut rec_header[..1]) {
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return None,
            Err(e) => return Some(Err(e.into())),
            Ok(()) => {}
        }
        if let Err(e) = self.inner.read_exact(&mut rec_header[1..]) {
            return Some(Err(e.into()));
        }
        let ts_sec = read_u32(&rec_header[0..4], self.swapped);
        let ts_usec = read_u32(&rec_header[4..8], self.swapped);
        let incl_len = read_u32(&rec_header[8..12], self.swapped);
        if incl_len > MAX_RECORD_LEN {
            return Some(Err(PcapError::OversizedRecord(incl_len)));
        }
        let mut data = vec![0u8; incl_len as usize];
        if let Err(e) = self.inner.read_exact(&mut data) {
            return Some(Err(e.into()));
        }
        Some(Ok(PcapRecord {
            ts_sec,
            ts_usec,
            data,
        }))
    }
}

fn read_u32(bytes: &[u8], swapped: bool) -> u32 {
    let arr: [u8; 4] = bytes.try_into().unwrap();
    if swapped {
        u32::from_be_bytes(arr)
    } else {
        u32::from_le_bytes(arr)
    }
}

/// Writes classic pcap files in native little-endian byte order.
pub struct PcapWriter<W: Write> {
    inner: W,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut inner: W, link_type: u32) -> std::io::Result<Self> {
        inner.write_all(&PCAP_MAGIC.to_le_bytes())?;
        inner.write_all(&2u16.to_le_bytes())?; // version major
        inner.write_all(&4u16.to_le_bytes())?; // version minor
        inner.write_all(&0i32.to_le_bytes())?; // thiszone
        inner.write_all(&0u32.to_le_bytes())?; // sigfigs
        inner.write_all(&65535u32.to_le_bytes())?; // snaplen
        inner.write_all(&link_type.to_le_bytes())?;
        Ok(Self { inner })
    }

    pub fn write_record(&mut self, ts_sec: u32, ts_usec: u32, data: &[u8]) -> std::io::Result<()> {
        self.inner.write_all(&ts_sec.to_le_bytes())?;
        self.inner.write_all(&ts_usec.to_le_bytes())?;
        self.inner.write_all(&(data.len() as u32).to_le_bytes())?;
        self.inner.write_all(&(data.len() as u32).to_le_bytes())?;
        self.inner.write_all(data)
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// A feedback frame together with its capture timestamp.
#[derive(Debug, Clone)]
pub struct CapturedFeedback {
    pub timestamp: f64,
    pub frame: FeedbackFrame,
}

/// Iterator over the feedback frames of a capture.
///
/// Records that are not beamforming feedback at all are skipped silently;
/// feedback frames that fail mid-parse come out as per-frame errors, and a
/// capture-level error (corrupt record header) ends the stream after being
/// reported once.
pub struct CaptureIter<R: Read> {
    reader: PcapReader<R>,
    opts: ParseOptions,
    done: bool,
}

/// Open a capture and iterate its feedback frames.
pub fn parse_pcap<R: Read>(source: R, opts: &ParseOptions) -> Result<CaptureIter<R>, PcapError> {
    Ok(CaptureIter {
        reader: PcapReader::new(source)?,
        opts: opts.clone(),
        done: false,
    })
}

impl<R: Read> CaptureIter<R> {
    fn frame_bytes<'a>(&self, record: &'a PcapRecord) -> Option<&'a [u8]> {
        match self.reader.link_type {
            LINKTYPE_RADIOTAP => {
                // Radiotap: u8 version, u8 pad, u16le length, then fields.
                let len = u16::from_le_bytes([*record.data.get(2)?, *record.data.get(3)?]);
                record.data.get(usize::from(len)..)
            }
            _ => Some(&record.data),
        }
    }
}

pub enum CaptureEvent {
    Frame(CapturedFeedback),
    FrameError(f64, FrameError),
    CaptureError(PcapError),
}

impl<R: Read> Iterator for CaptureIter<R> {
    type Item = CaptureEvent;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            let record = match self.reader.next_record()? {
                Ok(r) => r,
                Err(e) => {
                    self.done = true;
                    return Some(CaptureEvent::CaptureError(e));
                }
            };
            let Some(frame_bytes) = self.frame_bytes(&record) else {
                continue; // radiotap header itself truncated: nothing to parse
            };
            match parse_frame(frame_bytes, &self.opts) {
                Ok(frame) => {
                    if let Some(want) = self.opts.source_mac {
                        if frame.source_mac != want {
                            continue;
                        }
                    }
                    return Some(CaptureEvent::Frame(CapturedFeedback {
                        timestamp: record.timestamp(),
                        frame,
                    }));
                }
                Err(FrameError::NotFeedback(_)) => continue,
                Err(e) => return Some(CaptureEvent::FrameError(record.timestamp(), e)),
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dot11::frame::tests::random_frame;
    use crate::dot11::{encode_frame, BitOrder};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::io::Cursor;

    fn capture_with(frames: &[(u32, Vec<u8>)], link_type: u32) -> Vec<u8> {
        let mut w = PcapWriter::new(Vec::new(), link_type).unwrap();
        for (ts, data) in frames {
            w.write_record(*ts, 0, data).unwrap();
        }
        w.into_inner()
    }

    fn collect_frames(bytes: &[u8], opts: &ParseOptions) -> (Vec<CapturedFeedback>, usize) {
        let mut frames = Vec::new();
        let mut errors = 0;
        for ev in parse_pcap(Cursor::new(bytes), opts).unwrap() {
            match ev {
                CaptureEvent::Frame(f) => frames.push(f),
                CaptureEvent::FrameError(..) | CaptureEvent::CaptureError(_) => errors += 1,
            }
        }
        (frames, errors)
    }

    #[test]
    fn single_frame_capture_round_trips() {
        let mut rng = ChaCha12Rng::seed_from_u64(20);
        let frame = random_frame(&mut rng);
        let bytes = capture_with(
            &[(100, encode_frame(&frame, BitOrder::Lsb).unwrap())],
            LINKTYPE_IEEE802_11,
        );
        let (frames, errors) = collect_frames(&bytes, &ParseOptions::default());
        assert_eq!(errors, 0);
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].frame, frame);
        assert_eq!(frames[0].timestamp, 100.0);
    }

    #[test]
    fn empty_capture_yields_nothing() {
        let bytes = capture_with(&[], LINKTYPE_IEEE802_11);
        let (frames, errors) = collect_frames(&bytes, &ParseOptions::default());
        assert!(frames.is_empty());
        assert_eq!(errors, 0);
    }

    #[test]
    fn truncated_angle_payload_yields_one_error() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let frame = random_frame(&mut rng);
        let mut enc = encode_frame(&frame, BitOrder::Lsb).unwrap();
        enc.truncate(enc.len() - 40);
        let bytes = capture_with(&[(1, enc)], LINKTYPE_IEEE802_11);
        let (frames, errors) = collect_frames(&bytes, &ParseOptions::default());
        assert!(frames.is_empty());
        assert_eq!(errors, 1);
    }

    #[test]
    fn non_feedback_records_are_skipped() {
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        let frame = random_frame(&mut rng);
        let beacon = vec![0x80u8; 48];
        let bytes = capture_with(
            &[
                (1, beacon),
                (2, encode_frame(&frame, BitOrder::Lsb).unwrap()),
            ],
            LINKTYPE_IEEE802_11,
        );
        let (frames, errors) = collect_frames(&bytes, &ParseOptions::default());
        assert_eq!(errors, 0);
        assert_eq!(frames.len(), 1);
    }

    #[test]
    fn radiotap_header_is_skipped() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let frame = random_frame(&mut rng);
        let mut data = vec![0u8, 0u8];
        let rt_len = 12u16;
        data.extend_from_slice(&rt_len.to_le_bytes());
        data.extend_from_slice(&[0xaa; 8]); // fake radiotap fields
        data.extend_from_slice(&encode_frame(&frame, BitOrder::Lsb).unwrap());
        let bytes = capture_with(&[(5, data)], LINKTYPE_RADIOTAP);
        let (frames, errors) = collect_frames(&bytes, &ParseOptions::default());
        assert_eq!(errors, 0);
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].frame, frame);
    }

    #[test]
    fn bad_magic_is_fatal() {
        let bytes = vec![0u8; 24];
        assert!(matches!(
            parse_pcap(Cursor::new(bytes), &ParseOptions::default()),
            Err(PcapError::BadMagic(_))
        ));
    }

    #[test]
    fn big_endian_capture_is_readable() {
        // Build a byte-swapped capture by hand.
        let mut rng = ChaCha12Rng::seed_from_u64(24);
        let frame = random_frame(&mut rng);
        let payload = encode_frame(&frame, BitOrder::Lsb).unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&PCAP_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&2u16.to_be_bytes());
        bytes.extend_from_slice(&4u16.to_be_bytes());
        bytes.extend_from_slice(&0u32.to_be_bytes());
        bytes.extend_from_slice(&0u32.to_be_bytes());
        bytes.extend_from_slice(&65535u32.to_be_bytes());
        bytes.extend_from_slice(&LINKTYPE_IEEE802_11.to_be_bytes());
        bytes.extend_from_slice(&9u32.to_be_bytes());
        bytes.extend_from_slice(&0u32.to_be_bytes());
        bytes.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&payload);
        let (frames, errors) = collect_frames(&bytes, &ParseOptions::default());
        assert_eq!(errors, 0);
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].frame, frame);
    }

    #[test]
    fn source_filter_commutes_with_parsing() {
        let mut rng = ChaCha12Rng::seed_from_u64(25);
        let mut frames = Vec::new();
        for _ in 0..20 {
            let mut f = random_frame(&mut rng);
            f.source_mac = if rng.gen_bool(0.5) {
                [1, 1, 1, 1, 1, 1]
            } else {
                [2, 2, 2, 2, 2, 2]
            };
            frames.push(f);
        }
        let records: Vec<(u32, Vec<u8>)> = frames
            .iter()
            .enumerate()
            .map(|(i, f)| (i as u32, encode_frame(f, BitOrder::Lsb).unwrap()))
            .collect();
        let bytes = capture_with(&records, LINKTYPE_IEEE802_11);

        let filter = ParseOptions {
            source_mac: Some([1, 1, 1, 1, 1, 1]),
            ..ParseOptions::default()
        };
        let (filtered_then_parsed, _) = collect_frames(&bytes, &filter);
        let (parsed, _) = collect_frames(&bytes, &ParseOptions::default());
        let parsed_then_filtered: Vec<_> = parsed
            .into_iter()
            .filter(|c| c.frame.source_mac == [1, 1, 1, 1, 1, 1])
            .collect();
        assert_eq!(filtered_then_parsed.len(), parsed_then_filtered.len());
        for (a, b) in filtered_then_parsed.iter().zip(&parsed_then_filtered) {
            assert_eq!(a.frame, b.frame);
        }
    }

    #[test]
    fn fuzzed_captures_never_panic() {
        let mut rng = ChaCha12Rng::seed_from_u64(26);
        let frame = random_frame(&mut rng);
        let good = capture_with(
            &[(1, encode_frame(&frame, BitOrder::Lsb).unwrap())],
            LINKTYPE_IEEE802_11,
        );
        for _ in 0..2000 {
            let mut mutated = good.clone();
            mutated.truncate(rng.gen_range(0..=mutated.len()));
            for _ in 0..rng.gen_range(0..6) {
                if mutated.is_empty() {
                    break;
                }
                let at = rng.gen_range(0..mutated.len());
                mutated[at] = rng.gen();
            }
            if let Ok(iter) = parse_pcap(Cursor::new(mutated), &ParseOptions::default()) {
                for _ev in iter {}
            }
        }
    }
}
