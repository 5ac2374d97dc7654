//! The trained segmentation model and its single-file container.
//!
//! Layout: 8 magic bytes, `u32` format version, `u64` header length, a JSON
//! header (configuration, shapes, energies, section sizes), then two
//! little-endian payload sections: Saab AC anchors as `f64`, and tree nodes
//! as `(i32 feature, f32 threshold, i32 left, i32 right, f32 value)`.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, Task};
use crate::classifier::{Tree, TreeEnsemble, TreeNode};
use crate::decoder::{DecoderConfig, DecoderModel, HopDecoder};
use crate::encoder::{EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::saab::{EnergyNode, SaabUnit, VoxelHopModel};
use crate::volume::NeighborhoodSpec;

pub const MAGIC: &[u8; 8] = b"PSHOPSEG";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationModel {
    pub version: u32,
    pub task: Task,
    pub seed: u64,
    pub config: PipelineConfig,
    pub encoder: EncoderModel,
    pub decoder: DecoderModel,
}

#[derive(Serialize, Deserialize)]
struct UnitHeader {
    n_in: usize,
    bias: f64,
    energies: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct HopHeader {
    hop: usize,
    spec: NeighborhoodSpec,
    energy_threshold: f64,
    parent_energies: Vec<f64>,
    units: Vec<UnitHeader>,
    nodes: Vec<EnergyNode>,
}

#[derive(Serialize, Deserialize)]
struct EnsembleHeader {
    n_classes: usize,
    n_features: usize,
    learning_rate: f64,
    base_score: Vec<f64>,
    /// Node count of every tree, rounds × classes.
    tree_sizes: Vec<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct DecoderHopHeader {
    hop: usize,
    main: EnsembleHeader,
    refine: Vec<EnsembleHeader>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    task: Task,
    seed: u64,
    config: PipelineConfig,
    encoder_config: EncoderConfig,
    encoder: Vec<HopHeader>,
    decoder_config: DecoderConfig,
    decoder: Vec<DecoderHopHeader>,
    /// Output channels per encoder hop.
    channels: Vec<usize>,
    anchor_values: u64,
    tree_nodes: u64,
}

fn ensemble_header(e: &TreeEnsemble) -> EnsembleHeader {
    EnsembleHeader {
        n_classes: e.n_classes,
        n_features: e.n_features,
        learning_rate: e.learning_rate,
        base_score: e.base_score.clone(),
        tree_sizes: e
            .trees
            .iter()
            .map(|r| r.iter().map(|t| t.nodes.len() as u32).collect())
            .collect(),
    }
}

const NODE_BYTES: u64 = 20;

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        path: "<model>".into(),
        reason: reason.into(),
    }
}

impl SegmentationModel {
    pub fn n_classes(&self) -> usize {
        self.decoder.config.n_classes
    }

    fn header(&self) -> Header {
        let encoder: Vec<HopHeader> = self
            .encoder
            .hops
            .iter()
            .map(|h| HopHeader {
                hop: h.hop,
                spec: h.spec,
                energy_threshold: h.energy_threshold,
                parent_energies: h.parent_energies.clone(),
                units: h
                    .units
                    .iter()
                    .map(|u| UnitHeader {
                        n_in: u.n_in(),
                        bias: u.bias(),
                        energies: u.energies().to_vec(),
                    })
                    .collect(),
                nodes: h.nodes.clone(),
            })
            .collect();
        let decoder = self
            .decoder
            .hops
            .iter()
            .map(|h| DecoderHopHeader {
                hop: h.hop,
                main: ensemble_header(&h.main),
                refine: h.refine.iter().map(ensemble_header).collect(),
            })
            .collect();
        let anchor_values = self
            .encoder
            .hops
            .iter()
            .flat_map(|h| &h.units)
            .map(|u| u.ac_anchors().len() as u64)
            .sum();
        let tree_nodes = self
            .decoder
            .ensembles()
            .flat_map(|e| e.all_trees())
            .map(|t| t.nodes.len() as u64)
            .sum();
        Header {
            task: self.task,
            seed: self.seed,
            config: self.config.clone(),
            encoder_config: self.encoder.config.clone(),
            encoder,
            decoder_config: self.decoder.config.clone(),
            decoder,
            channels: self.encoder.channels(),
            anchor_values,
            tree_nodes,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec_pretty(&self.header())?;
        let mut out = Vec::new();
        out.write_all(MAGIC)?;
        out.write_u32::<LittleEndian>(self.version)?;
        out.write_u64::<LittleEndian>(header.len() as u64)?;
        out.write_all(&header)?;
        for u in self.encoder.hops.iter().flat_map(|h| &h.units) {
            for &a in u.ac_anchors() {
                out.write_f64::<LittleEndian>(a)?;
            }
        }
        for t in self.decoder.ensembles().flat_map(|e| e.all_trees()) {
            for n in &t.nodes {
                out.write_i32::<LittleEndian>(n.feature)?;
                out.write_f32::<LittleEndian>(n.threshold)?;
                out.write_i32::<LittleEndian>(n.left)?;
                out.write_i32::<LittleEndian>(n.right)?;
                out.write_f32::<LittleEndian>(n.value)?;
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != MAGIC {
            return Err(bad("not a segmentation model (bad magic)"));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let hlen = r.read_u64::<LittleEndian>()? as usize;
        let start = r.position() as usize;
        let header_bytes = bytes.get(start..start + hlen).ok_or_else(|| bad("truncated header"))?;
        let h: Header = serde_json::from_slice(header_bytes)?;
        r.set_position((start + hlen) as u64);
        let expected = h.anchor_values * 8 + h.tree_nodes * NODE_BYTES;
        if (bytes.len() - start - hlen) as u64 != expected {
            return Err(bad(format!(
                "payload is {} bytes, header announces {expected}",
                bytes.len() - start - hlen
            )));
        }

        let mut hops = Vec::with_capacity(h.encoder.len());
        for hh in h.encoder {
            let mut units = Vec::with_capacity(hh.units.len());
            for u in hh.units {
                let n = u.n_in * u.energies.len().saturating_sub(1);
                let mut anchors = vec![0f64; n];
                r.read_f64_into::<LittleEndian>(&mut anchors)?;
                units.push(SaabUnit::from_raw(u.n_in, anchors, u.bias, u.energies)?);
            }
            hops.push(VoxelHopModel {
                hop: hh.hop,
                spec: hh.spec,
                energy_threshold: hh.energy_threshold,
                parent_energies: hh.parent_energies,
                units,
                nodes: hh.nodes,
            });
        }
        let read_ensemble = |r: &mut Cursor<&[u8]>, e: EnsembleHeader| -> Result<TreeEnsemble> {
            let mut trees = Vec::with_capacity(e.tree_sizes.len());
            for round in &e.tree_sizes {
                let mut rt = Vec::with_capacity(round.len());
                for &size in round {
                    let nodes = (0..size)
                        .map(|_| -> Result<TreeNode> {
                            Ok(TreeNode {
                                feature: r.read_i32::<LittleEndian>()?,
                                threshold: r.read_f32::<LittleEndian>()?,
                                left: r.read_i32::<LittleEndian>()?,
                                right: r.read_i32::<LittleEndian>()?,
                                value: r.read_f32::<LittleEndian>()?,
                            })
                        })
                        .collect::<Result<_>>()?;
                    rt.push(Tree { nodes });
                }
                trees.push(rt);
            }
            let ens = TreeEnsemble {
                n_classes: e.n_classes,
                n_features: e.n_features,
                learning_rate: e.learning_rate,
                base_score: e.base_score,
                trees,
            };
            ens.validate()?;
            Ok(ens)
        };
        let mut dhops = Vec::with_capacity(h.decoder.len());
        for dh in h.decoder {
            let main = read_ensemble(&mut r, dh.main)?;
            let refine = dh
                .refine
                .into_iter()
                .map(|e| read_ensemble(&mut r, e))
                .collect::<Result<_>>()?;
            dhops.push(HopDecoder { hop: dh.hop, main, refine });
        }
        let model = SegmentationModel {
            version,
            task: h.task,
            seed: h.seed,
            config: h.config,
            encoder: EncoderModel {
                config: h.encoder_config,
                hops,
            },
            decoder: DecoderModel {
                config: h.decoder_config,
                hops: dhops,
            },
        };
        if model.encoder.channels() != h.channels {
            return Err(bad("energy tree disagrees with recorded channel counts"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { reason, .. } => Error::Format {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }
}
