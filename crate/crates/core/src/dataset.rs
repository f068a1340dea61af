//! Labeled sounding records: the on-disk store and the train/test split
//! rules used by the experiments.
//!
//! The store is a versioned binary file of length-prefixed records with a
//! human-readable JSON manifest written alongside it. Angle words are kept
//! quantized; feature construction happens downstream.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: [u8; 4] = *b"BFDS";
const VERSION: u16 = 1;
/// Upper bound on any length field, to fail fast on corrupt files.
const MAX_LEN: u32 = 1 << 24;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a dataset file (bad magic)")]
    BadMagic,
    #[error("unsupported dataset version {0}")]
    BadVersion(u16),
    #[error("corrupt dataset: {0}")]
    Corrupt(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("split needs positions/groups that the dataset lacks: {0:?}")]
    MissingGroups(Vec<String>),
    #[error("dataset is empty")]
    Empty,
    #[error("split {0:?} needs {1} tags, dataset has {2} tags")]
    WrongTagKind(SplitSpec, &'static str, &'static str),
}

/// Where a record was taken: a static position index (1-based) or a
/// mobility trace group plus progress along the path in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PositionTag {
    Index(u8),
    Group { name: String, progress: f64 },
}

impl PositionTag {
    pub fn label(&self) -> String {
        match self {
            Self::Index(i) => format!("pos{i}"),
            Self::Group { name, .. } => name.clone(),
        }
    }
}

/// Feedback geometry shared by the angle arrays of one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordControl {
    pub m: u8,
    pub n_ss: u8,
    pub b_phi: u8,
    pub b_psi: u8,
    pub bandwidth_mhz: u16,
}

/// One sounding event seen by one beamformee.
///
/// `q_phi`/`q_psi` are flat, subcarrier-major, with the canonical angle
/// order within each subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub device_id: String,
    pub beamformee_id: String,
    pub trace_id: String,
    pub timestamp: f64,
    pub position_tag: PositionTag,
    pub control: RecordControl,
    pub q_phi: Vec<u16>,
    pub q_psi: Vec<u16>,
}

/// Dataset-wide metadata stored in the file header.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub subcarriers: Vec<i16>,
}

/// Sidecar manifest; everything a human needs to audit the file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u16,
    pub records: usize,
    pub subcarrier_count: usize,
    pub devices: Vec<String>,
    pub beamformees: Vec<String>,
    pub traces: Vec<String>,
    pub position_tags: Vec<String>,
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn describe(header: &DatasetHeader, records: &[DatasetRecord]) -> Self {
        let mut devices = BTreeMap::new();
        let mut beamformees = BTreeMap::new();
        let mut traces = BTreeMap::new();
        let mut tags = BTreeMap::new();
        for r in records {
            devices.insert(r.device_id.clone(), ());
            beamformees.insert(r.beamformee_id.clone(), ());
            traces.insert(r.trace_id.clone(), ());
            tags.insert(r.position_tag.label(), ());
        }
        Self {
            version: VERSION,
            records: records.len(),
            subcarrier_count: header.subcarriers.len(),
            devices: devices.into_keys().collect(),
            beamformees: beamformees.into_keys().collect(),
            traces: traces.into_keys().collect(),
            position_tags: tags.into_keys().collect(),
            notes: vec![
                "split S2 trains on odd positions {1,3,5,7,9} and tests on even {2,4,6,8}"
                    .to_string(),
            ],
        }
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    let bytes = s.as_bytes();
    w.write_all(&(bytes.len() as u16).to_le_bytes())?;
    w.write_all(bytes)
}

fn read_str<R: Read>(r: &mut R) -> Result<String, DatasetError> {
    let mut len = [0u8; 2];
    r.read_exact(&mut len)?;
    let len = u16::from_le_bytes(len) as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| DatasetError::Corrupt("non-utf8 label".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, DatasetError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16_vec<R: Read>(r: &mut R) -> Result<Vec<u16>, DatasetError> {
    let n = read_u32(r)?;
    if n > MAX_LEN {
        return Err(DatasetError::Corrupt(format!("array of {n} words")));
    }
    let mut buf = vec![0u8; n as usize * 2];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect())
}

/// Serialize a dataset to a writer.
pub fn write_dataset<W: Write>(
    mut w: W,
    header: &DatasetHeader,
    records: &[DatasetRecord],
) -> Result<(), DatasetError> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&0u16.to_le_bytes())?;
    w.write_all(&(header.subcarriers.len() as u32).to_le_bytes())?;
    for &k in &header.subcarriers {
        w.write_all(&k.to_le_bytes())?;
    }
    for r in records {
        let mut body = Vec::new();
        write_str(&mut body, &r.device_id)?;
        write_str(&mut body, &r.beamformee_id)?;
        write_str(&mut body, &r.trace_id)?;
        body.write_all(&r.timestamp.to_le_bytes())?;
        match &r.position_tag {
            PositionTag::Index(i) => {
                body.push(0);
                body.push(*i);
            }
            PositionTag::Group { name, progress } => {
                body.push(1);
                write_str(&mut body, name)?;
                body.write_all(&progress.to_le_bytes())?;
            }
        }
        body.push(r.control.m);
        body.push(r.control.n_ss);
        body.push(r.control.b_phi);
        body.push(r.control.b_psi);
        body.write_all(&r.control.bandwidth_mhz.to_le_bytes())?;
        body.write_all(&(r.q_phi.len() as u32).to_le_bytes())?;
        for &q in &r.q_phi {
            body.write_all(&q.to_le_bytes())?;
        }
        body.write_all(&(r.q_psi.len() as u32).to_le_bytes())?;
        for &q in &r.q_psi {
            body.write_all(&q.to_le_bytes())?;
        }
        w.write_all(&(body.len() as u32).to_le_bytes())?;
        w.write_all(&body)?;
    }
    Ok(())
}

/// Read a dataset from a reader.
pub fn read_dataset<R: Read>(mut r: R) -> Result<(DatasetHeader, Vec<DatasetRecord>), DatasetError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v)?;
    let version = u16::from_le_bytes(v);
    if version != VERSION {
        return Err(DatasetError::BadVersion(version));
    }
    r.read_exact(&mut v)?; // flags
    let n_sc = read_u32(&mut r)?;
    if n_sc > MAX_LEN {
        return Err(DatasetError::Corrupt("oversized subcarrier table".into()));
    }
    let mut sc_bytes = vec![0u8; n_sc as usize * 2];
    r.read_exact(&mut sc_bytes)?;
    let subcarriers = sc_bytes
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();

    let mut records = Vec::new();
    loop {
        let mut len_buf = [0u8; 4];
        match r.read_exact(&mut len_buf[..1]) {
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
            Ok(()) => {}
        }
        r.read_exact(&mut len_buf[1..])?;
        let len = u32::from_le_bytes(len_buf);
        if len > MAX_LEN {
            return Err(DatasetError::Corrupt(format!("record of {len} bytes")));
        }
        let mut body = vec![0u8; len as usize];
        r.read_exact(&mut body)?;
        let mut cur = std::io::Cursor::new(body);
        let device_id = read_str(&mut cur)?;
        let beamformee_id = read_str(&mut cur)?;
        let trace_id = read_str(&mut cur)?;
        let mut f = [0u8; 8];
        cur.read_exact(&mut f)?;
        let timestamp = f64::from_le_bytes(f);
        let mut kind = [0u8; 1];
        cur.read_exact(&mut kind)?;
        let position_tag = match kind[0] {
            0 => {
                let mut i = [0u8; 1];
                cur.read_exact(&mut i)?;
                PositionTag::Index(i[0])
            }
            1 => {
                let name = read_str(&mut cur)?;
                cur.read_exact(&mut f)?;
                PositionTag::Group {
                    name,
                    progress: f64::from_le_bytes(f),
                }
            }
            other => {
                return Err(DatasetError::Corrupt(format!("position tag kind {other}")))
            }
        };
        let mut ctrl = [0u8; 6];
        cur.read_exact(&mut ctrl)?;
        let control = RecordControl {
            m: ctrl[0],
            n_ss: ctrl[1],
            b_phi: ctrl[2],
            b_psi: ctrl[3],
            bandwidth_mhz: u16::from_le_bytes([ctrl[4], ctrl[5]]),
        };
        let q_phi = read_u16_vec(&mut cur)?;
        let q_psi = read_u16_vec(&mut cur)?;
        records.push(DatasetRecord {
            device_id,
            beamformee_id,
            trace_id,
            timestamp,
            position_tag,
            control,
            q_phi,
            q_psi,
        });
    }
    Ok((DatasetHeader { subcarriers }, records))
}

/// Write the dataset plus its JSON manifest next to it.
pub fn save_dataset(
    path: &Path,
    header: &DatasetHeader,
    records: &[DatasetRecord],
) -> Result<(), DatasetError> {
    let f = std::fs::File::create(path)?;
    write_dataset(std::io::BufWriter::new(f), header, records)?;
    let manifest = Manifest::describe(header, records);
    let manifest_path = path.with_extension("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<(DatasetHeader, Vec<DatasetRecord>), DatasetError> {
    let f = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(f))
}

/// The train/test regimes over positions (static set) and trace groups
/// (mobility set). `S4Disjoint` is the sub-path variant of S4: train on
/// the first half of the route, test on the far excursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitSpec {
    S1,
    S2,
    S3,
    S4,
    S4Disjoint,
    S5,
    S6,
}

impl SplitSpec {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Some(Self::S1),
            "S2" => Some(Self::S2),
            "S3" => Some(Self::S3),
            "S4" => Some(Self::S4),
            "S4D" | "S4-DISJOINT" | "S4DISJOINT" => Some(Self::S4Disjoint),
            "S5" => Some(Self::S5),
            "S6" => Some(Self::S6),
            _ => None,
        }
    }

    fn uses_position_indices(self) -> bool {
        matches!(self, Self::S1 | Self::S2 | Self::S3)
    }
}

/// Record indices (into the input slice) for each role.
#[derive(Debug, Clone, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn position_index(r: &DatasetRecord) -> Option<u8> {
    match r.position_tag {
        PositionTag::Index(i) => Some(i),
        PositionTag::Group { .. } => None,
    }
}

fn group_name(r: &DatasetRecord) -> Option<&str> {
    match &r.position_tag {
        PositionTag::Index(_) => None,
        PositionTag::Group { name, .. } => Some(name),
    }
}

fn progress(r: &DatasetRecord) -> f64 {
    match &r.position_tag {
        PositionTag::Index(_) => 0.0,
        PositionTag::Group { progress, .. } => *progress,
    }
}

/// Slice a time-ordered trace into leading train, trailing-val and test
/// portions. `train_frac + val_frac <= 1`; the remainder is test.
fn temporal_slice(
    indices: &[usize],
    train_frac: f64,
    val_frac: f64,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let n = indices.len();
    let train_end = (n as f64 * train_frac).floor() as usize;
    let val_end = (n as f64 * (train_frac + val_frac)).floor() as usize;
    (
        indices[..train_end].to_vec(),
        indices[train_end..val_end].to_vec(),
        indices[val_end..].to_vec(),
    )
}

/// Group split, deterministic in the input order.
///
/// * `S1`: every position in train and test, per-trace 64/16/20 temporal.
/// * `S2`: odd positions train/val, even positions test.
/// * `S3`: positions 1-5 train/val, 6-9 test.
/// * `S4`: `mob1` train/val, `mob2` test.
/// * `S4Disjoint`: first-half route portion of `mob1` train/val, far
///   excursion portion of `mob2` test.
/// * `S5`: `fix1`+`fix2` train/val, `mob1`+`mob2` test.
/// * `S6`: `mob1`+`mob2` train/val, `fix1`+`fix2` test.
///
/// Validation data is always the trailing 20% of each training trace.
pub fn make_split(spec: SplitSpec, records: &[DatasetRecord]) -> Result<Split, SplitError> {
    if records.is_empty() {
        return Err(SplitError::Empty);
    }
    let has_indices = records.iter().any(|r| position_index(r).is_some());
    if spec.uses_position_indices() && !has_indices {
        return Err(SplitError::WrongTagKind(spec, "position-index", "group"));
    }
    if !spec.uses_position_indices() && has_indices {
        return Err(SplitError::WrongTagKind(spec, "trace-group", "position-index"));
    }

    // Group record indices per (device, trace), time-ordered.
    let mut traces: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        traces
            .entry((r.device_id.clone(), r.trace_id.clone()))
            .or_default()
            .push(i);
    }
    for idx in traces.values_mut() {
        idx.sort_by(|&a, &b| {
            records[a]
                .timestamp
                .partial_cmp(&records[b].timestamp)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
    }

    if spec.uses_position_indices() {
        let present: std::collections::BTreeSet<u8> =
            records.iter().filter_map(position_index).collect();
        let missing: Vec<String> = (1..=9)
            .filter(|p| !present.contains(p))
            .map(|p| format!("pos{p}"))
            .collect();
        if !missing.is_empty() {
            return Err(SplitError::MissingGroups(missing));
        }
    } else {
        let present: std::collections::BTreeSet<String> = records
            .iter()
            .filter_map(|r| group_name(r).map(str::to_string))
            .collect();
        let needed: &[&str] = match spec {
            SplitSpec::S4 | SplitSpec::S4Disjoint => &["mob1", "mob2"],
            _ => &["fix1", "fix2", "mob1", "mob2"],
        };
        let missing: Vec<String> = needed
            .iter()
            .filter(|g| !present.contains(**g))
            .map(|g| g.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(SplitError::MissingGroups(missing));
        }
    }

    let mut split = Split::default();
    for idx in traces.values() {
        let first = &records[idx[0]];
        match spec {
            SplitSpec::S1 => {
                let (tr, va, te) = temporal_slice(idx, 0.64, 0.16);
                split.train.extend(tr);
                split.val.extend(va);
                split.test.extend(te);
            }
            SplitSpec::S2 | SplitSpec::S3 => {
                let p = position_index(first).unwrap();
                let in_train = match spec {
                    SplitSpec::S2 => p % 2 == 1,
                    _ => (1..=5).contains(&p),
                };
                if in_train {
                    let (tr, va, _) = temporal_slice(idx, 0.8, 0.2);
                    split.train.extend(tr);
                    split.val.extend(va);
                } else {
                    split.test.extend(idx.iter().copied());
                }
            }
            SplitSpec::S4 | SplitSpec::S5 | SplitSpec::S6 => {
                let g = group_name(first).unwrap();
                let in_train = match spec {
                    SplitSpec::S4 => g == "mob1",
                    SplitSpec::S5 => g == "fix1" || g == "fix2",
                    _ => g == "mob1" || g == "mob2",
                };
                let in_test = match spec {
                    SplitSpec::S4 => g == "mob2",
                    SplitSpec::S5 => g == "mob1" || g == "mob2",
                    _ => g == "fix1" || g == "fix2",
                };
                if in_train {
                    let (tr, va, _) = temporal_slice(idx, 0.8, 0.2);
                    split.train.extend(tr);
                    split.val.extend(va);
                } else if in_test {
                    split.test.extend(idx.iter().copied());
                }
            }
            SplitSpec::S4Disjoint => {
                let g = group_name(first).unwrap();
                if g == "mob1" {
                    let sub: Vec<usize> = idx
                        .iter()
                        .copied()
                        .filter(|&i| progress(&records[i]) < 0.5)
                        .collect();
                    let (tr, va, _) = temporal_slice(&sub, 0.8, 0.2);
                    split.train.extend(tr);
                    split.val.extend(va);
                } else if g == "mob2" {
                    split.test.extend(idx.iter().copied().filter(|&i| {
                        let p = progress(&records[i]);
                        (0.5..5.0 / 6.0).contains(&p)
                    }));
                }
            }
        }
    }
    Ok(split)
}

/// Indices of the records seen by one beamformee.
pub fn filter_beamformee(records: &[DatasetRecord], beamformee_id: &str) -> Vec<usize> {
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.beamformee_id == beamformee_id)
        .map(|(i, _)| i)
        .collect()
}
