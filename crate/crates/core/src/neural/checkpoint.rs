//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic b"FBEXPRT\0"
//! 8       4     format version (u32)
//! 12      8     header length H in bytes (u64)
//! 20      H     UTF-8 JSON header
//! 20+H    8*N   tensor data, f64 little-endian, concatenated
//! ```
//!
//! The JSON header carries the configuration, hyperparameters, the optional
//! training state (epoch counter, Adam step count and constants, data-stream
//! and dropout RNG states, report so far) and a tensor index of
//! `{name, shape, offset, len}` entries where `offset` and `len` count f64
//! elements into the data section. Model tensors use the names from
//! [`Weights::layout`]; Adam moments are stored as `adam.m.<name>` and
//! `adam.v.<name>`.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, ExpertHyperParams, ExpertModel, NeuralError, TrainReport, Weights, INPUT_WIDTH};
use crate::datagen::SampleStream;
use crate::kinematics::TypeConfig;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"FBEXPRT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything besides the weights needed to resume training bit-exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    /// Epochs completed.
    pub epoch: usize,
    pub adam: Adam,
    pub stream: SampleStream,
    pub dropout_rng: ChaCha8Rng,
    pub report: TrainReport,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ExpertModel,
    pub train: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: u64,
}

#[derive(Serialize, Deserialize)]
struct TrainHeader {
    epoch: usize,
    adam: AdamHeader,
    stream: SampleStream,
    dropout_rng: ChaCha8Rng,
    report: TrainReport,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    cfg: TypeConfig,
    hyper: ExpertHyperParams,
    input_width: usize,
    train: Option<TrainHeader>,
    tensors: Vec<TensorEntry>,
}

fn bad(msg: impl Into<String>) -> NeuralError {
    NeuralError::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(mut out: W, ckpt: &Checkpoint) -> Result<(), NeuralError> {
    let model = &ckpt.model;
    let layout = model.weights.layout();
    let mut groups: Vec<(String, &Weights)> = vec![(String::new(), &model.weights)];
    if let Some(state) = &ckpt.train {
        groups.push(("adam.m.".into(), &state.adam.m));
        groups.push(("adam.v.".into(), &state.adam.v));
    }

    let mut tensors = Vec::new();
    let mut offset = 0;
    for (prefix, weights) in &groups {
        for ((name, shape), data) in layout.iter().zip(weights.slices()) {
            tensors.push(TensorEntry { name: format!("{prefix}{name}"), shape: shape.clone(), offset, len: data.len() });
            offset += data.len();
        }
    }
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        cfg: model.cfg,
        hyper: model.hyper.clone(),
        input_width: INPUT_WIDTH,
        train: ckpt.train.as_ref().map(|s| TrainHeader {
            epoch: s.epoch,
            adam: AdamHeader {
                beta1: s.adam.beta1,
                beta2: s.adam.beta2,
                eps: s.adam.eps,
                weight_decay: s.adam.weight_decay,
                t: s.adam.t,
            },
            stream: s.stream.clone(),
            dropout_rng: s.dropout_rng.clone(),
            report: s.report.clone(),
        }),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(&CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(offset * 8);
    for (_, weights) in &groups {
        for data in weights.slices() {
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint, NeuralError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad("not an expert checkpoint (bad magic)"));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let header_len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| bad("header too large"))?;
    let mut json = vec![0u8; header_len];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.input_width != INPUT_WIDTH {
        return Err(bad(format!("input width {} != {INPUT_WIDTH}", header.input_width)));
    }
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    if data.len() % 8 != 0 {
        return Err(bad("truncated tensor data"));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let hyper = header.hyper;
    let fill = |prefix: &str| -> Result<Weights, NeuralError> {
        let mut w = Weights::zeros(hyper.layers, hyper.hidden, INPUT_WIDTH);
        let layout = w.layout();
        for ((name, shape), dst) in layout.iter().zip(w.slices_mut()) {
            let full = format!("{prefix}{name}");
            let entry = header
                .tensors
                .iter()
                .find(|t| t.name == full)
                .ok_or_else(|| bad(format!("missing tensor {full}")))?;
            if &entry.shape != shape || entry.len != dst.len() {
                return Err(bad(format!("tensor {full} has shape {:?}, expected {shape:?}", entry.shape)));
            }
            let src = values
                .get(entry.offset..entry.offset + entry.len)
                .ok_or_else(|| bad(format!("tensor {full} runs past the data section")))?;
            dst.copy_from_slice(src);
        }
        Ok(w)
    };

    let weights = fill("")?;
    let train = match header.train {
        None => None,
        Some(t) => Some(TrainState {
            epoch: t.epoch,
            adam: Adam {
                beta1: t.adam.beta1,
                beta2: t.adam.beta2,
                eps: t.adam.eps,
                weight_decay: t.adam.weight_decay,
                t: t.adam.t,
                m: fill("adam.m.")?,
                v: fill("adam.v.")?,
            },
            stream: t.stream,
            dropout_rng: t.dropout_rng,
            report: t.report,
        }),
    };
    Ok(Checkpoint { model: ExpertModel { cfg: header.cfg, hyper, weights }, train })
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NeuralError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let file = std::fs::File::create(&tmp)?;
            write_checkpoint(std::io::BufWriter::new(file), self)?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NeuralError> {
        let file = std::fs::File::open(path)?;
        read_checkpoint(std::io::BufReader::new(file))
    }
}
