//! Binary model files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "QCNN"
//! 4       1     format version (1)
//! 5       4     header length H, little-endian u32
//! 9       H     JSON header: taxonomy, hyperparameters, tensor manifest
//! 9+H     8·P   parameters as little-endian f64, in manifest order
//! ```
//!
//! Each manifest entry carries the tensor name, shape and byte offset into
//! the payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::LabelTaxonomy;
use crate::error::{Error, Result};
use crate::hierarchy::{Tier, TwoTierClassifier};
use crate::network::{ModelConfig, QcnnModel};
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 4] = b"QCNN";
pub const VERSION: u8 = 1;
const PREAMBLE: usize = 4 + 1 + 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub tier: Tier,
    pub taxonomy: LabelTaxonomy,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub tensors: Vec<ManifestEntry>,
    pub payload_bytes: u64,
}

/// A model together with the metadata written alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelContainer {
    pub header: ContainerHeader,
    pub model: QcnnModel,
}

impl ModelContainer {
    pub fn new(
        model: QcnnModel,
        tier: Tier,
        taxonomy: LabelTaxonomy,
        training: TrainConfig,
    ) -> Self {
        let mut offset = 0u64;
        let tensors = model
            .tensor_specs()
            .into_iter()
            .map(|s| {
                let entry = ManifestEntry {
                    offset,
                    name: s.name,
                    shape: s.shape,
                };
                offset += 8 * entry.shape.iter().product::<usize>() as u64;
                entry
            })
            .collect();
        ModelContainer {
            header: ContainerHeader {
                tier,
                taxonomy,
                model: model.config().clone(),
                training,
                tensors,
                payload_bytes: offset,
            },
            model,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header is plain data");
        let mut out =
            Vec::with_capacity(PREAMBLE + header.len() + self.header.payload_bytes as usize);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.model.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: String| Err(Error::Container(m));
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return fail("bad magic".into());
        }
        if bytes.len() < PREAMBLE {
            return fail("truncated preamble".into());
        }
        if bytes[4] != VERSION {
            return fail(format!(
                "unsupported version {} (expected {VERSION})",
                bytes[4]
            ));
        }
        let header_len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
        let Some(header_bytes) = bytes.get(PREAMBLE..PREAMBLE + header_len) else {
            return fail(format!(
                "truncated header: expected {header_len} bytes, found {}",
                bytes.len() - PREAMBLE
            ));
        };
        let header: ContainerHeader = serde_json::from_slice(header_bytes)
            .map_err(|e| Error::Container(format!("unreadable header: {e}")))?;
        let payload = &bytes[PREAMBLE + header_len..];
        if payload.len() as u64 != header.payload_bytes {
            return fail(format!(
                "payload length mismatch: expected {} bytes, found {}",
                header.payload_bytes,
                payload.len()
            ));
        }

        let mut model = QcnnModel::zeros(header.model.clone())?;
        let specs = model.tensor_specs();
        let declared: u64 = header
            .tensors
            .iter()
            .map(|t| 8 * t.shape.iter().product::<usize>() as u64)
            .sum();
        if declared != header.payload_bytes {
            return fail(format!(
                "manifest describes {declared} bytes but header declares {}",
                header.payload_bytes
            ));
        }
        if specs.len() != header.tensors.len()
            || specs
                .iter()
                .zip(&header.tensors)
                .any(|(s, t)| s.name != t.name || s.shape != t.shape)
        {
            return fail("tensor manifest does not match the model configuration".into());
        }
        for (dst, entry) in model.tensors_mut().into_iter().zip(&header.tensors) {
            let start = entry.offset as usize;
            let src = payload.get(start..start + 8 * dst.len()).ok_or_else(|| {
                Error::Container(format!("tensor {} lies outside the payload", entry.name))
            })?;
            for (v, chunk) in dst.iter_mut().zip(src.chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
        }
        Ok(ModelContainer { header, model })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        ModelContainer::from_bytes(&bytes)
            .map_err(|e| Error::Container(format!("{}: {e}", path.display())))
    }
}

/// File name used for one tier inside a model directory.
pub fn tier_file_name(tier: Tier, taxonomy: &LabelTaxonomy) -> String {
    match tier {
        Tier::Coarse => "tier1.qcnn".to_string(),
        Tier::Fine(c) => format!(
            "tier2-{}.qcnn",
            taxonomy.coarse_name(c).to_ascii_lowercase()
        ),
    }
}

pub fn tier_path(dir: &Path, tier: Tier, taxonomy: &LabelTaxonomy) -> PathBuf {
    dir.join(tier_file_name(tier, taxonomy))
}

/// Writes all seven models of a classifier into `dir`.
pub fn save_classifier(
    dir: impl AsRef<Path>,
    classifier: &TwoTierClassifier,
    training: &TrainConfig,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let taxonomy = classifier.taxonomy();
    let tiers = std::iter::once(Tier::Coarse).chain((0..taxonomy.coarse_count()).map(Tier::Fine));
    for tier in tiers {
        let model = match tier {
            Tier::Coarse => classifier.tier1(),
            Tier::Fine(c) => classifier.tier2(c),
        };
        ModelContainer::new(model.clone(), tier, taxonomy.clone(), training.clone())
            .save(tier_path(dir, tier, taxonomy))?;
    }
    Ok(())
}

/// Reads the seven models written by [`save_classifier`], checking that they
/// agree on the taxonomy and on their roles.
pub fn load_classifier(dir: impl AsRef<Path>) -> Result<(TwoTierClassifier, TrainConfig)> {
    let dir = dir.as_ref();
    let first = ModelContainer::load(dir.join("tier1.qcnn"))?;
    if first.header.tier != Tier::Coarse {
        return Err(Error::Container(
            "tier1.qcnn does not hold a coarse model".into(),
        ));
    }
    let taxonomy = first.header.taxonomy.clone();
    let mut tier2 = Vec::with_capacity(taxonomy.coarse_count());
    for c in 0..taxonomy.coarse_count() {
        let path = tier_path(dir, Tier::Fine(c), &taxonomy);
        let fine = ModelContainer::load(&path)?;
        if fine.header.taxonomy != taxonomy {
            return Err(Error::TaxonomyMismatch(format!(
                "{} was trained with a different taxonomy",
                path.display()
            )));
        }
        if fine.header.tier != Tier::Fine(c) {
            return Err(Error::Container(format!(
                "{} holds {:?}",
                path.display(),
                fine.header.tier
            )));
        }
        tier2.push(fine.model);
    }
    let training = first.header.training.clone();
    let classifier = TwoTierClassifier::new(taxonomy, first.model, tier2, training.max_len)?;
    Ok((classifier, training))
}
