//! End-to-end inference: the temporal and SAR branches estimate the two
//! embeddings, the head fuses them pair by pair. Embeddings stay in memory.

use std::path::Path;

use crate::cgan::{generator_forward, Generator};
use crate::convlstm::{convlstm_forward, ConvLstm};
use crate::error::{shape, PlfmError, Result};
use crate::head::{fuse, HeadModel};
use crate::image::{concat_embeddings, OpticalImage, SarImage, TemporalSequence};

/// Dimensions the three branches must agree on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub width: usize,
    pub height: usize,
    pub seq_len: usize,
    pub classes: usize,
}

#[derive(Clone, Debug)]
pub struct PlfmModels {
    pub convlstm: ConvLstm,
    pub generator: Generator,
    pub head: HeadModel,
}

fn agree(what: &str, pairs: &[(&str, usize)]) -> Result<()> {
    let first = pairs[0].1;
    if pairs.iter().any(|&(_, v)| v != first) {
        let listed: Vec<String> = pairs.iter().map(|(n, v)| format!("{n} {v}")).collect();
        return Err(PlfmError::Incompatible(format!(
            "{what}: {}",
            listed.join(", ")
        )));
    }
    Ok(())
}

impl PlfmModels {
    pub fn new(convlstm: ConvLstm, generator: Generator, head: HeadModel) -> Result<Self> {
        let models = Self {
            convlstm,
            generator,
            head,
        };
        models.dims()?;
        Ok(models)
    }

    /// Shared dimensions, or an error naming the first one that differs.
    pub fn dims(&self) -> Result<ModelDims> {
        let (l, g, h) = (
            &self.convlstm.config,
            &self.generator.config,
            &self.head.config,
        );
        agree(
            "width",
            &[
                ("convlstm", l.width),
                ("generator", g.width),
                ("head", h.width),
            ],
        )?;
        agree(
            "height",
            &[
                ("convlstm", l.height),
                ("generator", g.height),
                ("head", h.height),
            ],
        )?;
        Ok(ModelDims {
            width: l.width,
            height: l.height,
            seq_len: l.seq_len,
            classes: h.classes,
        })
    }

    /// Loads `convlstm`, `generator` and `head` checkpoints from one directory
    /// each.
    pub fn load(convlstm: &Path, cgan: &Path, head: &Path) -> Result<Self> {
        Self::new(
            ConvLstm::load(convlstm)?,
            Generator::load(cgan)?,
            HeadModel::load(head)?,
        )
    }
}

/// The fused image together with the branch embeddings it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub fused: OpticalImage,
    /// Ŷ, the temporal branch's next-frame estimate.
    pub y_hat: OpticalImage,
    /// Ẑ, the SAR branch's optical rendering.
    pub z_hat: OpticalImage,
}

pub fn plfm_infer_detailed(
    seq: &TemporalSequence,
    sar: &SarImage,
    models: &PlfmModels,
) -> Result<Inference> {
    let dims = models.dims()?;
    if seq.len() != dims.seq_len {
        return Err(PlfmError::Incompatible(format!(
            "sequence length: input {}, convlstm {}",
            seq.len(),
            dims.seq_len
        )));
    }
    if (seq.width(), seq.height()) != (dims.width, dims.height)
        || (sar.width(), sar.height()) != (dims.width, dims.height)
    {
        return Err(shape(format!(
            "inputs must be {}x{} (sequence {}x{}, SAR {}x{})",
            dims.width,
            dims.height,
            seq.width(),
            seq.height(),
            sar.width(),
            sar.height()
        )));
    }
    let y_hat = convlstm_forward(seq, &models.convlstm)?;
    let z_hat = generator_forward(sar, &models.generator, false)?;
    let fused = fuse(&concat_embeddings(&z_hat, &y_hat)?, &models.head)?;
    Ok(Inference {
        fused,
        y_hat,
        z_hat,
    })
}

/// Î for one co-registered sequence and SAR acquisition.
pub fn plfm_infer(
    seq: &TemporalSequence,
    sar: &SarImage,
    models: &PlfmModels,
) -> Result<OpticalImage> {
    Ok(plfm_infer_detailed(seq, sar, models)?.fused)
}
