//! Minimal NIfTI-1 single-file (`.nii`, `.nii.gz`) reader and writer.
//!
//! Axes map as NIfTI `x → W`, `y → H`, `z → C`; spacing is returned in
//! volume order `(dy, dx, dz)`. Intensity scaling (`scl_slope`,
//! `scl_inter`) is applied on read.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Shape, Spacing, Volume4D};

const HEADER_LEN: usize = 348;
const VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_UINT16: i16 = 512;

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    if is_gz(path) {
        GzDecoder::new(file).read_to_end(&mut bytes)?;
    } else {
        let mut file = file;
        file.read_to_end(&mut bytes)?;
    }
    Ok(bytes)
}

/// Decoded image: dims `[H, W, C]`, voxels in volume order, spacing.
pub struct NiftiImage {
    pub dims: [usize; 3],
    pub spacing: Spacing,
    pub data: Vec<f32>,
}

fn decode<B: ByteOrder>(bytes: &[u8], path: &Path) -> Result<NiftiImage> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if &bytes[344..347] != b"n+1" {
        return Err(bad("missing n+1 magic (only single-file NIfTI-1 is supported)".into()));
    }
    let dim: Vec<i16> = (0..8).map(|i| B::read_i16(&bytes[40 + 2 * i..])).collect();
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(bad(format!("dim[0] = {ndim}")));
    }
    let extent = |i: usize| -> usize { if (i as i16) <= ndim { dim[i].max(1) as usize } else { 1 } };
    let (nx, ny, nz) = (extent(1), extent(2), extent(3));
    if (4..=7).any(|i| extent(i) > 1) {
        return Err(bad("only 3D volumes are supported".into()));
    }
    let datatype = B::read_i16(&bytes[70..]);
    let pixdim: Vec<f32> = (0..8).map(|i| B::read_f32(&bytes[76 + 4 * i..])).collect();
    let vox_offset = B::read_f32(&bytes[108..]).max(HEADER_LEN as f32) as usize;
    let slope = B::read_f32(&bytes[112..]);
    let inter = B::read_f32(&bytes[116..]);
    let n = nx * ny * nz;
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(bad(format!("unsupported datatype {other}"))),
    };
    let payload = bytes
        .get(vox_offset..vox_offset + n * width)
        .ok_or_else(|| bad(format!("expected {} voxel bytes", n * width)))?;
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let b = &payload[i * width..];
            match datatype {
                DT_UINT8 => b[0] as f64,
                DT_INT16 => B::read_i16(b) as f64,
                DT_UINT16 => B::read_u16(b) as f64,
                DT_INT32 => B::read_i32(b) as f64,
                DT_FLOAT32 => B::read_f32(b) as f64,
                _ => B::read_f64(b),
            }
        })
        .collect();
    let (slope, inter) = if slope != 0.0 && slope.is_finite() {
        (slope as f64, if inter.is_finite() { inter as f64 } else { 0.0 })
    } else {
        (1.0, 0.0)
    };
    let mut data = vec![0f32; n];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let v = raw[x + nx * (y + ny * z)] * slope + inter;
                data[(y * nx + x) * nz + z] = v as f32;
            }
        }
    }
    let sp = |i: usize| {
        let p = pixdim[i].abs() as f64;
        if p > 0.0 && p.is_finite() {
            p
        } else {
            1.0
        }
    };
    Ok(NiftiImage {
        dims: [ny, nx, nz],
        spacing: [sp(2), sp(1), sp(3)],
        data,
    })
}

/// Reads a NIfTI-1 volume of either byte order.
pub fn read_nifti(path: &Path) -> Result<NiftiImage> {
    let bytes = read_all(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "file shorter than a NIfTI-1 header".into(),
        });
    }
    if LittleEndian::read_i32(&bytes) == HEADER_LEN as i32 {
        decode::<LittleEndian>(&bytes, path)
    } else if BigEndian::read_i32(&bytes) == HEADER_LEN as i32 {
        decode::<BigEndian>(&bytes, path)
    } else {
        Err(Error::Format {
            path: path.to_path_buf(),
            reason: "sizeof_hdr is not 348".into(),
        })
    }
}

/// Reads a NIfTI file as an image volume with spacing.
pub fn read_image(path: &Path) -> Result<Volume4D> {
    let img = read_nifti(path)?;
    Volume4D::new(Shape::from_spatial(img.dims, 1), img.data)?.with_spacing(img.spacing)
}

/// Reads a NIfTI file as a label volume (values rounded, must lie in 0..=255).
pub fn read_labels(path: &Path) -> Result<LabelVolume> {
    let img = read_nifti(path)?;
    labels_from_f32(img.dims, &img.data, path)
}

pub(crate) fn labels_from_f32(dims: [usize; 3], data: &[f32], path: &Path) -> Result<LabelVolume> {
    let labels = data
        .iter()
        .map(|&v| {
            let r = v.round();
            if (0.0..=255.0).contains(&r) {
                Ok(r as u8)
            } else {
                Err(Error::Format {
                    path: path.to_path_buf(),
                    reason: format!("mask value {v} is not a label"),
                })
            }
        })
        .collect::<Result<Vec<u8>>>()?;
    LabelVolume::new(dims, labels)
}

fn encode(dims: [usize; 3], spacing: Spacing, datatype: i16, payload: &[u8]) -> Result<Vec<u8>> {
    let [h, w, c] = dims;
    if [h, w, c].iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::InvalidShape(format!("{dims:?} too large for NIfTI-1")));
    }
    let bitpix: i16 = match datatype {
        DT_UINT8 => 8,
        _ => 32,
    };
    let mut hdr = vec![0u8; VOX_OFFSET];
    LittleEndian::write_i32(&mut hdr[0..], HEADER_LEN as i32);
    let dim = [3i16, w as i16, h as i16, c as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut hdr[40 + 2 * i..], *d);
    }
    LittleEndian::write_i16(&mut hdr[70..], datatype);
    LittleEndian::write_i16(&mut hdr[72..], bitpix);
    let pixdim = [1.0f32, spacing[1] as f32, spacing[0] as f32, spacing[2] as f32, 0.0, 0.0, 0.0, 0.0];
    for (i, p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut hdr[76 + 4 * i..], *p);
    }
    LittleEndian::write_f32(&mut hdr[108..], VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut hdr[112..], 1.0);
    hdr[123] = 10; // xyzt_units: mm, s
    hdr[344..348].copy_from_slice(b"n+1\0");
    hdr.extend_from_slice(payload);
    Ok(hdr)
}

fn nifti_order<T: Copy>(dims: [usize; 3], data: &[T]) -> Vec<T> {
    let [h, w, c] = dims;
    let mut out = Vec::with_capacity(data.len());
    for z in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.push(data[(y * w + x) * c + z]);
            }
        }
    }
    out
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    if is_gz(path) {
        let mut gz = GzEncoder::new(file, Compression::default());
        gz.write_all(bytes)?;
        gz.finish()?.flush()?;
    } else {
        let mut file = file;
        file.write_all(bytes)?;
        file.flush()?;
    }
    Ok(())
}

/// Writes a single-channel volume as little-endian float32 NIfTI-1.
pub fn write_image(path: &Path, v: &Volume4D) -> Result<()> {
    if v.shape().k != 1 {
        return Err(Error::InvalidShape(format!("NIfTI export needs one channel, got {}", v.shape())));
    }
    let dims = v.shape().spatial();
    let mut payload = Vec::with_capacity(v.data().len() * 4);
    for x in nifti_order(dims, v.data()) {
        payload.write_f32::<LittleEndian>(x)?;
    }
    let spacing = v.spacing().unwrap_or([1.0; 3]);
    write_bytes(path, &encode(dims, spacing, DT_FLOAT32, &payload)?)
}

/// Writes labels as uint8 NIfTI-1.
pub fn write_labels(path: &Path, labels: &LabelVolume, spacing: Spacing) -> Result<()> {
    let payload = nifti_order(labels.dims(), labels.data());
    write_bytes(path, &encode(labels.dims(), spacing, DT_UINT8, &payload)?)
}
