//! The `RSTK v1` container: one UTF-8 JSON header line followed by raw
//! little-endian samples in time, band, row, column order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GeoTransform, LabelMask, RasterStack, NODATA_CODE};
use crate::error::{Error, Result};

pub const MAGIC: &str = "RSTK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RstkHeader {
    pub magic: String,
    #[serde(rename = "T")]
    pub timesteps: usize,
    #[serde(rename = "B")]
    pub bands: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub dtype: String,
    pub nodata: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<GeoTransform>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestep_labels: Option<Vec<String>>,
}

impl RstkHeader {
    fn samples(&self) -> usize {
        self.timesteps * self.bands * self.height * self.width
    }
}

/// Decoded container contents.
#[derive(Debug, Clone, PartialEq)]
pub enum Rstk {
    F32(RasterStack),
    U8 { header: RstkHeader, codes: Vec<u8> },
}

fn non_empty(v: &[String]) -> Option<Vec<String>> {
    (!v.is_empty()).then(|| v.to_vec())
}

fn encode(header: &RstkHeader, payload: &[u8]) -> Vec<u8> {
    let mut out = serde_json::to_vec(header).expect("header serializes");
    out.push(b'\n');
    out.extend_from_slice(payload);
    out
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn stack_to_bytes(stack: &RasterStack) -> Vec<u8> {
    let header = RstkHeader {
        magic: MAGIC.into(),
        timesteps: stack.timesteps(),
        bands: stack.bands(),
        height: stack.height(),
        width: stack.width(),
        dtype: "f32le".into(),
        nodata: f64::from(stack.nodata),
        transform: stack.transform,
        band_names: non_empty(&stack.band_names),
        timestep_labels: non_empty(&stack.timestep_labels),
    };
    let mut payload = Vec::with_capacity(stack.values().len() * 4);
    for v in stack.values() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    encode(&header, &payload)
}

pub fn mask_to_bytes(mask: &LabelMask) -> Vec<u8> {
    let header = RstkHeader {
        magic: MAGIC.into(),
        timesteps: 1,
        bands: 1,
        height: mask.height(),
        width: mask.width(),
        dtype: "u8".into(),
        nodata: f64::from(NODATA_CODE),
        transform: mask.transform,
        band_names: None,
        timestep_labels: None,
    };
    encode(&header, mask.codes())
}

pub fn write_stack(path: impl AsRef<Path>, stack: &RasterStack) -> Result<()> {
    write_bytes(path.as_ref(), &stack_to_bytes(stack))
}

pub fn write_label_mask(path: impl AsRef<Path>, mask: &LabelMask) -> Result<()> {
    write_bytes(path.as_ref(), &mask_to_bytes(mask))
}

pub fn parse_rstk(path: &Path, bytes: &[u8]) -> Result<Rstk> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path, "missing header line"))?;
    let header: RstkHeader = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    if header.magic != MAGIC {
        return Err(Error::format(path, format!("bad magic {:?}", header.magic)));
    }
    let payload = &bytes[nl + 1..];
    let n = header.samples();
    match header.dtype.as_str() {
        "f32le" => {
            if payload.len() != n * 4 {
                return Err(Error::format(
                    path,
                    format!("payload has {} bytes, expected {}", payload.len(), n * 4),
                ));
            }
            let values = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let mut stack = RasterStack::new(
                header.timesteps,
                header.bands,
                header.height,
                header.width,
                values,
                header.nodata as f32,
            )
            .map_err(|e| Error::format(path, e.to_string()))?;
            stack.transform = header.transform;
            stack.band_names = header.band_names.unwrap_or_default();
            stack.timestep_labels = header.timestep_labels.unwrap_or_default();
            Ok(Rstk::F32(stack))
        }
        "u8" => {
            if payload.len() != n {
                return Err(Error::format(
                    path,
                    format!("payload has {} bytes, expected {n}", payload.len()),
                ));
            }
            Ok(Rstk::U8 {
                header,
                codes: payload.to_vec(),
            })
        }
        other => Err(Error::format(path, format!("unsupported dtype {other:?}"))),
    }
}

pub fn read_rstk(path: impl AsRef<Path>) -> Result<Rstk> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_rstk(path, &bytes)
}

pub fn read_stack(path: impl AsRef<Path>) -> Result<RasterStack> {
    let path = path.as_ref();
    match read_rstk(path)? {
        Rstk::F32(s) => Ok(s),
        Rstk::U8 { .. } => Err(Error::format(path, "expected dtype f32le, found u8")),
    }
}

pub fn read_label_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    match read_rstk(path)? {
        Rstk::U8 { header, codes } => {
            if header.timesteps != 1 || header.bands != 1 {
                return Err(Error::format(path, "label mask must have T = B = 1"));
            }
            let mut mask = LabelMask::new(header.height, header.width, codes)
                .map_err(|e| Error::format(path, e.to_string()))?;
            mask.transform = header.transform;
            Ok(mask)
        }
        Rstk::F32(_) => Err(Error::format(path, "expected dtype u8, found f32le")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_single_json_line_with_fixed_keys() {
        let mut s = RasterStack::new(1, 2, 1, 2, vec![0.0, 1.0, 2.0, 3.0], -1.0).unwrap();
        s.band_names = vec!["red".into(), "nir".into()];
        let bytes = stack_to_bytes(&s);
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let line = std::str::from_utf8(&bytes[..nl]).unwrap();
        assert_eq!(
            line,
            r#"{"magic":"RSTK1","T":1,"B":2,"H":1,"W":2,"dtype":"f32le","nodata":-1.0,"band_names":["red","nir"]}"#
        );
        assert_eq!(bytes.len(), nl + 1 + 16);
        assert_eq!(&bytes[nl + 1 + 4..nl + 1 + 8], &1.0f32.to_le_bytes());
    }

    #[test]
    fn mask_round_trip_and_dtype_check() {
        let m = LabelMask::new(2, 2, vec![0, 1, 2, 255]).unwrap();
        let bytes = mask_to_bytes(&m);
        let p = Path::new("mem");
        match parse_rstk(p, &bytes).unwrap() {
            Rstk::U8 { header, codes } => {
                assert_eq!(header.dtype, "u8");
                assert_eq!(codes, vec![0, 1, 2, 255]);
            }
            _ => panic!("wrong dtype"),
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let s = RasterStack::filled(1, 1, 2, 2, 0.5).unwrap();
        let mut bytes = stack_to_bytes(&s);
        bytes.pop();
        assert!(matches!(parse_rstk(Path::new("x"), &bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let bytes = b"{\"magic\":\"NOPE\",\"T\":1,\"B\":1,\"H\":1,\"W\":1,\"dtype\":\"u8\",\"nodata\":255}\n\x00";
        assert!(parse_rstk(Path::new("x"), bytes).is_err());
    }
}
