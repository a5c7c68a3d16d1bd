//! Binary interchange container: `"FAAR"`, u16 LE version, u32 LE header
//! length, a UTF-8 JSON header, then a row-major little-endian f32 payload.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{FaarError, Result};
use crate::model::{validate_epochs, EpochTensor, Recording};

pub const MAGIC: [u8; 4] = *b"FAAR";
pub const VERSION: u16 = 1;
pub const DTYPE: &str = "f32";
const PREAMBLE: usize = 4 + 2 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Recording,
    Epochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaarHeader {
    pub kind: Kind,
    pub shape: Vec<usize>,
    pub fs: f64,
    pub channel_names: Vec<String>,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch_ids: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    /// Per-epoch tags, present only when a batch mixes subjects.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_ids: Option<Vec<String>>,
}

/// Contents of a file, by header kind.
#[derive(Debug, Clone, PartialEq)]
pub enum FaarData {
    Recording(Recording),
    Epochs(EpochTensor),
}

impl FaarData {
    pub fn into_epochs(self) -> Result<EpochTensor> {
        match self {
            FaarData::Epochs(e) => Ok(e),
            FaarData::Recording(_) => Err(FaarError::HeaderMismatch("expected kind \"epochs\", found \"recording\"".into())),
        }
    }

    pub fn into_recording(self) -> Result<Recording> {
        match self {
            FaarData::Recording(r) => Ok(r),
            FaarData::Epochs(_) => Err(FaarError::HeaderMismatch("expected kind \"recording\", found \"epochs\"".into())),
        }
    }
}

fn uniform(tags: &[String]) -> Option<&String> {
    let first = tags.first()?;
    tags.iter().all(|t| t == first).then_some(first)
}

fn encode(header: &FaarHeader, values: impl Iterator<Item = f64>, n: usize) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let header_len = u32::try_from(json.len()).map_err(|_| FaarError::HeaderMismatch("header exceeds 4 GiB".into()))?;
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + n * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    for (i, v) in values.enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(FaarError::NonFinite(format!("payload element {i} ({v}) does not fit in f32")));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

/// Serializes an epoch batch. Samples are narrowed to f32.
pub fn epochs_to_bytes(e: &EpochTensor) -> Result<Vec<u8>> {
    let (n, c, t) = e.data.dim();
    let (subject_id, subject_ids) = match uniform(&e.subject_ids) {
        Some(s) => (Some(s.clone()), None),
        None => (None, Some(e.subject_ids.clone())),
    };
    let (session_id, session_ids) = match uniform(&e.session_ids) {
        Some(s) => (Some(s.clone()), None),
        None => (None, Some(e.session_ids.clone())),
    };
    let header = FaarHeader {
        kind: Kind::Epochs,
        shape: vec![n, c, t],
        fs: e.fs,
        channel_names: e.channel_names.clone(),
        dtype: DTYPE.into(),
        labels: e.labels.clone(),
        epoch_ids: Some(e.epoch_ids.clone()),
        subject_id,
        session_id,
        subject_ids,
        session_ids,
    };
    encode(&header, e.data.iter().copied(), e.data.len())
}

pub fn recording_to_bytes(r: &Recording) -> Result<Vec<u8>> {
    let (c, t) = r.data.dim();
    let header = FaarHeader {
        kind: Kind::Recording,
        shape: vec![c, t],
        fs: r.fs,
        channel_names: r.channel_names.clone(),
        dtype: DTYPE.into(),
        labels: None,
        epoch_ids: None,
        subject_id: Some(r.subject_id.clone()),
        session_id: Some(r.session_id.clone()),
        subject_ids: None,
        session_ids: None,
    };
    encode(&header, r.data.iter().copied(), r.data.len())
}

fn mismatch(msg: impl Into<String>) -> FaarError {
    FaarError::HeaderMismatch(msg.into())
}

/// Parses the preamble and header, returning the header and the payload slice.
pub fn parse_header(bytes: &[u8]) -> Result<(FaarHeader, &[u8])> {
    if bytes.len() < MAGIC.len() || bytes[..4] != MAGIC {
        return Err(FaarError::BadMagic);
    }
    if bytes.len() < PREAMBLE {
        return Err(FaarError::TruncatedPayload { expected: PREAMBLE, got: bytes.len() });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(FaarError::BadVersion(version));
    }
    let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let body = &bytes[PREAMBLE..];
    if body.len() < header_len {
        return Err(FaarError::TruncatedPayload { expected: PREAMBLE + header_len, got: bytes.len() });
    }
    let header: FaarHeader =
        serde_json::from_slice(&body[..header_len]).map_err(|e| mismatch(format!("header is not valid JSON: {e}")))?;
    check_header(&header)?;
    Ok((header, &body[header_len..]))
}

fn check_header(h: &FaarHeader) -> Result<()> {
    if h.dtype != DTYPE {
        return Err(mismatch(format!("dtype {:?}, only {DTYPE:?} is supported", h.dtype)));
    }
    let rank = match h.kind {
        Kind::Recording => 2,
        Kind::Epochs => 3,
    };
    if h.shape.len() != rank {
        return Err(mismatch(format!("{:?} needs a rank-{rank} shape, got {:?}", h.kind, h.shape)));
    }
    let channels = h.shape[rank - 2];
    if h.channel_names.len() != channels {
        return Err(mismatch(format!("{} channel names for {channels} channels", h.channel_names.len())));
    }
    if h.shape.iter().try_fold(4usize, |acc, d| acc.checked_mul(*d)).is_none() {
        return Err(mismatch(format!("shape {:?} overflows", h.shape)));
    }
    if h.kind == Kind::Epochs {
        let n = h.shape[0];
        let per_epoch = [
            ("labels", h.labels.as_ref().map(Vec::len)),
            ("epoch_ids", h.epoch_ids.as_ref().map(Vec::len)),
            ("subject_ids", h.subject_ids.as_ref().map(Vec::len)),
            ("session_ids", h.session_ids.as_ref().map(Vec::len)),
        ];
        for (name, len) in per_epoch {
            if let Some(len) = len.filter(|l| *l != n) {
                return Err(mismatch(format!("{len} {name} for {n} epochs")));
            }
        }
    } else if h.labels.is_some() || h.epoch_ids.is_some() {
        return Err(mismatch("a recording carries no labels or epoch ids"));
    }
    Ok(())
}

fn decode_payload(h: &FaarHeader, payload: &[u8]) -> Result<Vec<f64>> {
    let expected = h.shape.iter().product::<usize>() * 4;
    if payload.len() < expected {
        return Err(FaarError::TruncatedPayload { expected, got: payload.len() });
    }
    if payload.len() > expected {
        return Err(mismatch(format!("{} trailing bytes after the payload", payload.len() - expected)));
    }
    Ok(payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect())
}

pub fn from_bytes(bytes: &[u8]) -> Result<FaarData> {
    let (h, payload) = parse_header(bytes)?;
    let values = decode_payload(&h, payload)?;
    let reshape = |e: ndarray::ShapeError| mismatch(e.to_string());
    match h.kind {
        Kind::Recording => {
            let data = Array2::from_shape_vec((h.shape[0], h.shape[1]), values).map_err(reshape)?;
            let r = Recording::new(
                data,
                h.fs,
                h.channel_names,
                h.subject_id.unwrap_or_else(|| "S0".into()),
                h.session_id.unwrap_or_else(|| "0".into()),
            )?;
            Ok(FaarData::Recording(r))
        }
        Kind::Epochs => {
            let n = h.shape[0];
            let data = Array3::from_shape_vec((n, h.shape[1], h.shape[2]), values).map_err(reshape)?;
            let tags = |per: Option<Vec<String>>, one: Option<String>, default: &str| {
                per.unwrap_or_else(|| vec![one.unwrap_or_else(|| default.to_string()); n])
            };
            let e = EpochTensor {
                data,
                fs: h.fs,
                labels: h.labels,
                epoch_ids: h.epoch_ids.unwrap_or_else(|| (0..n as u64).collect()),
                channel_names: h.channel_names,
                subject_ids: tags(h.subject_ids, h.subject_id, "S0"),
                session_ids: tags(h.session_ids, h.session_id, "0"),
            };
            Ok(FaarData::Epochs(validate_epochs(e)?))
        }
    }
}

pub fn read_faar(path: impl AsRef<Path>) -> Result<FaarData> {
    from_bytes(&fs::read(path)?)
}

pub fn write_epochs(path: impl AsRef<Path>, e: &EpochTensor) -> Result<()> {
    Ok(fs::write(path, epochs_to_bytes(e)?)?)
}

pub fn write_recording(path: impl AsRef<Path>, r: &Recording) -> Result<()> {
    Ok(fs::write(path, recording_to_bytes(r)?)?)
}
