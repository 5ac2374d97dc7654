//! Cases and dataset ingestion from NIfTI files or the raw fixture format.
//!
//! Raw format: `<stem>.raw` holds little-endian float32 voxels in volume
//! order (`((h·W + w)·C + c)`), and `<stem>.json` carries
//! `{"shape": [H, W, C], "spacing": [dy, dx, dz]}`. A mask for image `<stem>`
//! is stored under `<stem>_mask` in the same format as its image.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use super::nifti;
use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Shape, Spacing, Volume4D};

pub const MASK_SUFFIX: &str = "_mask";

#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub id: String,
    /// Single-channel image with spacing.
    pub image: Volume4D,
    pub mask: Option<LabelVolume>,
    pub source: PathBuf,
}

impl Case {
    pub fn new(id: impl Into<String>, image: Volume4D, mask: Option<LabelVolume>) -> Result<Self> {
        let id = id.into();
        if image.shape().k != 1 {
            return Err(Error::InvalidShape(format!("image must have one channel, got {}", image.shape())).in_case(id));
        }
        if let Some(m) = &mask {
            if m.dims() != image.shape().spatial() {
                return Err(Error::InvalidShape(format!(
                    "mask {:?} vs image {:?}",
                    m.dims(),
                    image.shape().spatial()
                ))
                .in_case(id));
            }
        }
        Ok(Case {
            id,
            image,
            mask,
            source: PathBuf::new(),
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.image.shape().spatial()
    }

    pub fn spacing(&self) -> Option<Spacing> {
        self.image.spacing()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub shape: [usize; 3],
    pub spacing: Option<Spacing>,
}

fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

fn read_raw_f32(path: &Path) -> Result<(RawSidecar, Vec<f32>)> {
    let meta: RawSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let bytes = fs::read(path)?;
    let n: usize = meta.shape.iter().product();
    if bytes.len() != n * 4 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("{} bytes for shape {:?}", bytes.len(), meta.shape),
        });
    }
    let mut data = vec![0f32; n];
    LittleEndian::read_f32_into(&bytes, &mut data);
    Ok((meta, data))
}

pub fn read_raw_image(path: &Path) -> Result<Volume4D> {
    let (meta, data) = read_raw_f32(path)?;
    let v = Volume4D::new(Shape::from_spatial(meta.shape, 1), data)?;
    match meta.spacing {
        Some(sp) => v.with_spacing(sp),
        None => Ok(v),
    }
}

pub fn read_raw_labels(path: &Path) -> Result<LabelVolume> {
    let (meta, data) = read_raw_f32(path)?;
    nifti::labels_from_f32(meta.shape, &data, path)
}

fn write_raw_f32(path: &Path, dims: [usize; 3], spacing: Option<Spacing>, data: &[f32]) -> Result<()> {
    let mut bytes = vec![0u8; data.len() * 4];
    LittleEndian::write_f32_into(data, &mut bytes);
    fs::write(path, bytes)?;
    let meta = RawSidecar { shape: dims, spacing };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn write_raw_image(path: &Path, v: &Volume4D) -> Result<()> {
    if v.shape().k != 1 {
        return Err(Error::InvalidShape(format!("raw export needs one channel, got {}", v.shape())));
    }
    write_raw_f32(path, v.shape().spatial(), v.spacing(), v.data())
}

pub fn write_raw_labels(path: &Path, labels: &LabelVolume, spacing: Option<Spacing>) -> Result<()> {
    let data: Vec<f32> = labels.data().iter().map(|&l| l as f32).collect();
    write_raw_f32(path, labels.dims(), spacing, &data)
}

/// On-disk volume format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Nifti,
    NiftiGz,
    Raw,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Nifti => "nii",
            Format::NiftiGz => "nii.gz",
            Format::Raw => "raw",
        }
    }

    /// Splits a file name into its stem and format.
    pub fn detect(path: &Path) -> Result<(String, Format)> {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::UnknownExtension(path.to_path_buf()))?;
        for (ext, fmt) in [(".nii.gz", Format::NiftiGz), (".nii", Format::Nifti), (".raw", Format::Raw)] {
            if let Some(stem) = name.strip_suffix(ext) {
                return Ok((stem.to_string(), fmt));
            }
        }
        Err(Error::UnknownExtension(path.to_path_buf()))
    }
}

fn read_image_any(path: &Path, fmt: Format) -> Result<Volume4D> {
    match fmt {
        Format::Raw => read_raw_image(path),
        _ => nifti::read_image(path),
    }
}

fn read_labels_any(path: &Path, fmt: Format) -> Result<LabelVolume> {
    match fmt {
        Format::Raw => read_raw_labels(path),
        _ => nifti::read_labels(path),
    }
}

/// Writes a case as `<dir>/<id>.<ext>` plus `<id>_mask.<ext>` when a mask is present.
pub fn write_case(dir: &Path, case: &Case, fmt: Format) -> Result<()> {
    fs::create_dir_all(dir)?;
    let img = dir.join(format!("{}.{}", case.id, fmt.extension()));
    let mask = dir.join(format!("{}{MASK_SUFFIX}.{}", case.id, fmt.extension()));
    match fmt {
        Format::Raw => {
            write_raw_image(&img, &case.image)?;
            if let Some(m) = &case.mask {
                write_raw_labels(&mask, m, case.spacing())?;
            }
        }
        _ => {
            nifti::write_image(&img, &case.image)?;
            if let Some(m) = &case.mask {
                nifti::write_labels(&mask, m, case.spacing().unwrap_or([1.0; 3]))?;
            }
        }
    }
    Ok(())
}

/// A case that could not be loaded.
#[derive(Debug)]
pub struct Rejected {
    pub id: String,
    pub error: Error,
}

#[derive(Debug, Default)]
pub struct Ingested {
    /// Cases sorted by id.
    pub cases: Vec<Case>,
    pub rejected: Vec<Rejected>,
}

fn load_case(id: &str, image: &(PathBuf, Format), mask: Option<&(PathBuf, Format)>) -> Result<Case> {
    let img = read_image_any(&image.0, image.1)?;
    let mask = mask.map(|(p, f)| read_labels_any(p, *f)).transpose()?;
    let mut case = Case::new(id, img, mask)?;
    case.source = image.0.clone();
    Ok(case)
}

/// Loads every case under `dir` (non-recursive). Images and masks pair by
/// stem; JSON sidecars are consumed with their raw files. Unreadable files,
/// orphan masks and shape mismatches are reported in `rejected` without
/// aborting the batch.
pub fn ingest(dir: &Path) -> Result<Ingested> {
    if !dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} is not a directory", dir.display()),
        )));
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    let mut images: BTreeMap<String, (PathBuf, Format)> = BTreeMap::new();
    let mut masks: BTreeMap<String, (PathBuf, Format)> = BTreeMap::new();
    let mut out = Ingested::default();
    for path in entries {
        if !path.is_file() {
            continue;
        }
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with('.') || name.ends_with(".json") {
            continue;
        }
        match Format::detect(&path) {
            Ok((stem, fmt)) => match stem.strip_suffix(MASK_SUFFIX) {
                Some(base) => {
                    masks.insert(base.to_string(), (path, fmt));
                }
                None => {
                    images.insert(stem, (path, fmt));
                }
            },
            Err(e) => out.rejected.push(Rejected {
                id: name.to_string(),
                error: e,
            }),
        }
    }
    for (id, mask) in &masks {
        if !images.contains_key(id) {
            out.rejected.push(Rejected {
                id: id.clone(),
                error: Error::InsufficientData(format!("mask {} has no image", mask.0.display())),
            });
        }
    }
    for (id, image) in &images {
        match load_case(id, image, masks.get(id)) {
            Ok(c) => out.cases.push(c),
            Err(e) => {
                log::warn!("rejecting case {id}: {e}");
                out.rejected.push(Rejected { id: id.clone(), error: e });
            }
        }
    }
    Ok(out)
}
