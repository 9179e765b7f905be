//! Volume file formats.
//!
//! * NIfTI-1 single-file `.nii`: little-endian, uncompressed, datatypes
//!   float32 and uint8, axis-aligned affine with positive spacing. Channels
//!   are stored in `dim[4]`.
//! * raw + sidecar: a flat little-endian payload (`.raw`) next to a JSON
//!   sidecar (`.json`) describing the grid. Supports float32, float64 and
//!   uint8 payloads.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Grid, Volume3D};
use crate::error::{Error, Result};

const NIFTI_HEADER_SIZE: usize = 348;
const NIFTI_VOX_OFFSET: usize = 352;
const DT_UINT8: i16 = 2;
const DT_FLOAT32: i16 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeFormat {
    Nifti1,
    RawSidecar,
}

impl VolumeFormat {
    /// `.nii` selects NIfTI-1; `.raw` or `.json` selects raw + sidecar.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("nii") => Ok(VolumeFormat::Nifti1),
            Some("raw") | Some("json") => Ok(VolumeFormat::RawSidecar),
            _ => Err(Error::UnsupportedFormat(format!(
                "cannot infer volume format from {}",
                path.display()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Float32,
    Float64,
    UInt8,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::Float32 => 4,
            DType::Float64 => 8,
            DType::UInt8 => 1,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    channels: usize,
    dtype: DType,
    byte_order: String,
}

pub fn read_volume(path: impl AsRef<Path>, format: VolumeFormat) -> Result<Volume3D> {
    let path = path.as_ref();
    match format {
        VolumeFormat::Nifti1 => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            parse_nifti(&bytes)
        }
        VolumeFormat::RawSidecar => read_raw(path),
    }
}

/// Write as float32.
pub fn write_volume(v: &Volume3D, path: impl AsRef<Path>, format: VolumeFormat) -> Result<()> {
    write_volume_as(v, path, format, DType::Float32)
}

pub fn write_volume_as(
    v: &Volume3D,
    path: impl AsRef<Path>,
    format: VolumeFormat,
    dtype: DType,
) -> Result<()> {
    let path = path.as_ref();
    if let Some(index) = v.data().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let payload = encode_payload(v.data(), dtype)?;
    match format {
        VolumeFormat::Nifti1 => {
            let code = match dtype {
                DType::Float32 => DT_FLOAT32,
                DType::UInt8 => DT_UINT8,
                DType::Float64 => {
                    return Err(Error::UnsupportedFormat(
                        "NIfTI writer supports float32 and uint8 only".into(),
                    ))
                }
            };
            let mut bytes = nifti_header(v, code, (dtype.size() * 8) as i16);
            bytes.extend_from_slice(&payload);
            fs::write(path, bytes).map_err(|e| Error::io(path, e))
        }
        VolumeFormat::RawSidecar => {
            let (raw, json) = raw_paths(path);
            let sidecar = Sidecar {
                dims: v.dims(),
                spacing: v.spacing(),
                origin: v.origin(),
                channels: v.channels(),
                dtype,
                byte_order: "little".into(),
            };
            fs::write(&raw, payload).map_err(|e| Error::io(&raw, e))?;
            let text = serde_json::to_string_pretty(&sidecar)?;
            fs::write(&json, text).map_err(|e| Error::io(&json, e))
        }
    }
}

fn encode_payload(data: &[f64], dtype: DType) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(data.len() * dtype.size());
    match dtype {
        DType::Float32 => data
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::Float64 => data.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
        DType::UInt8 => {
            for (i, &v) in data.iter().enumerate() {
                if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                    return Err(Error::Parameter(format!(
                        "value {v} at index {i} is not representable as uint8"
                    )));
                }
                out.push(v as u8);
            }
        }
    }
    Ok(out)
}

fn decode_payload(bytes: &[u8], dtype: DType, count: usize, base: usize) -> Result<Vec<f64>> {
    let need = count * dtype.size();
    if bytes.len() < need {
        return Err(Error::Parse {
            offset: base + bytes.len(),
            message: format!("payload truncated: need {need} bytes, have {}", bytes.len()),
        });
    }
    let bytes = &bytes[..need];
    Ok(match dtype {
        DType::Float32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        DType::Float64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        DType::UInt8 => bytes.iter().map(|&b| b as f64).collect(),
    })
}

fn raw_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("raw"), path.with_extension("json"))
}

fn read_raw(path: &Path) -> Result<Volume3D> {
    let (raw, json) = raw_paths(path);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
        offset: 0,
        message: format!("sidecar {}: {e}", json.display()),
    })?;
    if sidecar.byte_order != "little" {
        return Err(Error::UnsupportedFormat(format!(
            "byte order {:?}",
            sidecar.byte_order
        )));
    }
    let grid = Grid::new(sidecar.dims, sidecar.spacing, sidecar.origin)?;
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let count = grid.voxel_count() * sidecar.channels;
    if bytes.len() != count * sidecar.dtype.size() {
        return Err(Error::Parse {
            offset: bytes.len().min(count * sidecar.dtype.size()),
            message: format!(
                "payload has {} bytes, sidecar implies {}",
                bytes.len(),
                count * sidecar.dtype.size()
            ),
        });
    }
    let data = decode_payload(&bytes, sidecar.dtype, count, 0)?;
    Volume3D::new(grid, sidecar.channels, data)
}

fn put_i16(buf: &mut [u8], offset: usize, v: i16) {
    buf[offset..offset + 2].copy_from_slice(&v.to_le_bytes());
}

fn put_i32(buf: &mut [u8], offset: usize, v: i32) {
    buf[offset..offset + 4].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(buf: &mut [u8], offset: usize, v: f32) {
    buf[offset..offset + 4].copy_from_slice(&v.to_le_bytes());
}

fn nifti_header(v: &Volume3D, datatype: i16, bitpix: i16) -> Vec<u8> {
    let mut h = vec![0u8; NIFTI_VOX_OFFSET];
    let [nx, ny, nz] = v.dims();
    let spacing = v.spacing();
    let origin = v.origin();
    put_i32(&mut h, 0, NIFTI_HEADER_SIZE as i32);
    let ndim: i16 = if v.channels() > 1 { 4 } else { 3 };
    let dims = [ndim, nx as i16, ny as i16, nz as i16, v.channels() as i16, 1, 1, 1];
    for (k, d) in dims.iter().enumerate() {
        put_i16(&mut h, 40 + 2 * k, *d);
    }
    put_i16(&mut h, 70, datatype);
    put_i16(&mut h, 72, bitpix);
    let pixdim = [
        1.0,
        spacing[0] as f32,
        spacing[1] as f32,
        spacing[2] as f32,
        1.0,
        1.0,
        1.0,
        1.0,
    ];
    for (k, p) in pixdim.iter().enumerate() {
        put_f32(&mut h, 76 + 4 * k, *p);
    }
    put_f32(&mut h, 108, NIFTI_VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    // xyzt_units: mm
    h[123] = 2;
    put_i16(&mut h, 252, 1);
    put_i16(&mut h, 254, 1);
    put_f32(&mut h, 268, origin[0] as f32);
    put_f32(&mut h, 272, origin[1] as f32);
    put_f32(&mut h, 276, origin[2] as f32);
    for a in 0..3 {
        let mut row = [0.0f32; 4];
        row[a] = spacing[a] as f32;
        row[3] = origin[a] as f32;
        for (k, r) in row.iter().enumerate() {
            put_f32(&mut h, 280 + 16 * a + 4 * k, *r);
        }
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

fn get_i16(b: &[u8], o: usize) -> i16 {
    i16::from_le_bytes([b[o], b[o + 1]])
}

fn get_i32(b: &[u8], o: usize) -> i32 {
    i32::from_le_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]])
}

/// Header floats are widened through their shortest decimal representation,
/// so a spacing written as 3.6 reads back as 3.6 rather than 3.5999999.
fn get_f32(b: &[u8], o: usize) -> f64 {
    let v = f32::from_le_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]]);
    format!("{v}").parse().unwrap_or(v as f64)
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

fn parse_nifti(bytes: &[u8]) -> Result<Volume3D> {
    if bytes.len() < NIFTI_HEADER_SIZE {
        return Err(parse_err(
            bytes.len(),
            format!("file has {} bytes, NIfTI-1 header needs 348", bytes.len()),
        ));
    }
    let sizeof_hdr = get_i32(bytes, 0);
    if sizeof_hdr != NIFTI_HEADER_SIZE as i32 {
        if i32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) == NIFTI_HEADER_SIZE as i32 {
            return Err(Error::UnsupportedFormat("big-endian NIfTI".into()));
        }
        return Err(parse_err(0, format!("sizeof_hdr is {sizeof_hdr}, expected 348")));
    }
    match &bytes[344..348] {
        b"n+1\0" => {}
        b"ni1\0" => {
            return Err(Error::UnsupportedFormat(
                "two-file NIfTI (.hdr/.img) is not supported".into(),
            ))
        }
        _ => return Err(parse_err(344, "bad magic, expected \"n+1\\0\"")),
    }
    let ndim = get_i16(bytes, 40);
    if !(1..=7).contains(&ndim) {
        return Err(parse_err(40, format!("dim[0] = {ndim} out of range")));
    }
    let mut dim = [1usize; 8];
    for k in 1..=7 {
        let d = get_i16(bytes, 40 + 2 * k);
        if k <= ndim as usize {
            if d < 1 {
                return Err(parse_err(40 + 2 * k, format!("dim[{k}] = {d} must be >= 1")));
            }
            dim[k] = d as usize;
        }
    }
    // Channels live in dim[4]; a vector-valued file may instead use dim[5].
    let channels = match (dim[4], dim[5], dim[6], dim[7]) {
        (c, 1, 1, 1) => c,
        (1, c, 1, 1) => c,
        _ => {
            return Err(Error::UnsupportedFormat(format!(
                "dims {:?} beyond 3D + channels",
                &dim[1..=ndim as usize]
            )))
        }
    };
    let dtype = match get_i16(bytes, 70) {
        DT_FLOAT32 => DType::Float32,
        DT_UINT8 => DType::UInt8,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "NIfTI datatype code {other}; only float32 (16) and uint8 (2)"
            )))
        }
    };
    let mut spacing = [0.0; 3];
    for a in 0..3 {
        spacing[a] = get_f32(bytes, 76 + 4 * (a + 1));
        if !(spacing[a] > 0.0) {
            return Err(parse_err(
                76 + 4 * (a + 1),
                format!("pixdim[{}] = {} must be > 0", a + 1, spacing[a]),
            ));
        }
    }
    let vox_offset = get_f32(bytes, 108);
    if vox_offset < NIFTI_VOX_OFFSET as f64 || vox_offset.fract() != 0.0 {
        return Err(parse_err(108, format!("vox_offset {vox_offset} invalid")));
    }
    let slope = get_f32(bytes, 112);
    let inter = get_f32(bytes, 116);
    let qform_code = get_i16(bytes, 252);
    let sform_code = get_i16(bytes, 254);
    let mut origin = [0.0; 3];
    if sform_code > 0 {
        for a in 0..3 {
            for k in 0..3 {
                let o = 280 + 16 * a + 4 * k;
                let value = get_f32(bytes, o);
                if k != a && value != 0.0 {
                    return Err(Error::UnsupportedFormat(
                        "sform with rotation or shear".into(),
                    ));
                }
                if k == a && !(value > 0.0) {
                    return Err(Error::UnsupportedFormat(
                        "sform with non-positive axis scale".into(),
                    ));
                }
                if k == a {
                    spacing[a] = value;
                }
            }
            origin[a] = get_f32(bytes, 280 + 16 * a + 12);
        }
    } else if qform_code > 0 {
        let quatern = [get_f32(bytes, 256), get_f32(bytes, 260), get_f32(bytes, 264)];
        let qfac = get_f32(bytes, 76);
        if quatern.iter().any(|&q| q != 0.0) || qfac < 0.0 {
            return Err(Error::UnsupportedFormat("qform with rotation".into()));
        }
        origin = [get_f32(bytes, 268), get_f32(bytes, 272), get_f32(bytes, 276)];
    }
    let grid = Grid::new([dim[1], dim[2], dim[3]], spacing, origin)?;
    let count = grid.voxel_count() * channels;
    let start = vox_offset as usize;
    if bytes.len() < start {
        return Err(parse_err(bytes.len(), "file ends before vox_offset"));
    }
    let mut data = decode_payload(&bytes[start..], dtype, count, start)?;
    if (slope != 0.0 && slope != 1.0) || inter != 0.0 {
        let slope = if slope == 0.0 { 1.0 } else { slope };
        data.iter_mut().for_each(|v| *v = *v * slope + inter);
    }
    Volume3D::new(grid, channels, data)
}
