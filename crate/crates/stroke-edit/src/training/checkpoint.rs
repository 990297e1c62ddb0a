//! Checkpoint container: a JSON header (format version, config echo,
//! iteration, optimizer step counters, RNG seed, tensor index) followed by
//! raw little-endian f32 data for every parameter and its Adam moments.
//!
//! Checkpoint bytes are a pure function of the training state, so resumed
//! runs can be compared bit-for-bit. Wall-clock metadata lives in a
//! `.meta.json` sidecar, never in the checkpoint itself.

use std::io::Read;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::ModelConfig;
use crate::nn::ParamStore;
use crate::Elem;

use super::{TrainConfig, TrainState};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"STED";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    /// "editor" or "recognizer".
    pub kind: String,
    pub iteration: u64,
    pub rng_seed: u64,
    pub adam_gen_t: u64,
    pub adam_disc_t: u64,
    /// Present on editor checkpoints.
    pub train_config: Option<TrainConfig>,
    /// Present on recognizer checkpoints.
    pub model_config: Option<ModelConfig>,
    /// Gate accuracy recorded at recognizer pre-training time.
    pub recognizer_accuracy: Option<f64>,
    pub tensors: Vec<TensorEntry>,
}

fn err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

struct Writer<'a> {
    entries: Vec<TensorEntry>,
    data: Vec<f32>,
    _phantom: std::marker::PhantomData<&'a ()>,
}

impl Writer<'_> {
    fn new() -> Self {
        Writer {
            entries: Vec::new(),
            data: Vec::new(),
            _phantom: std::marker::PhantomData,
        }
    }

    fn push(&mut self, name: String, arr: &ArrayD<Elem>) {
        let offset = self.data.len() as u64;
        let std = arr.as_standard_layout();
        self.data.extend(std.iter().copied());
        self.entries.push(TensorEntry {
            name,
            shape: arr.shape().to_vec(),
            offset,
            len: arr.len() as u64,
        });
    }

    fn push_store(&mut self, prefix: &str, store: &ParamStore<Elem>) {
        for (_, slot) in store.slots() {
            self.push(format!("{prefix}/{}", slot.name), &slot.value);
            self.push(format!("{prefix}/{}.adam_m", slot.name), &slot.m);
            self.push(format!("{prefix}/{}.adam_v", slot.name), &slot.v);
        }
    }
}

fn write_file(path: &Path, header: &CheckpointHeader, data: &[f32]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let header_json = serde_json::to_vec(header).expect("header json");
    let mut buf: Vec<u8> =
        Vec::with_capacity(16 + header_json.len() + data.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(CHECKPOINT_FORMAT_VERSION).unwrap();
    buf.write_u64::<LittleEndian>(header_json.len() as u64).unwrap();
    buf.extend_from_slice(&header_json);
    for v in data {
        buf.write_f32::<LittleEndian>(*v).unwrap();
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))?;
    // wall-clock info stays out of the deterministic artifact
    let meta = serde_json::json!({
        "written_at_unix_ms": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0),
        "bytes": buf.len(),
    });
    let meta_path = path.with_extension("meta.json");
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).unwrap())
        .map_err(|e| Error::io(&meta_path, e))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<(CheckpointHeader, Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = std::io::Cursor::new(&bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic)
        .map_err(|_| err(path, "truncated header"))?;
    if &magic != MAGIC {
        return Err(err(path, "not a stroke-edit checkpoint (bad magic)"));
    }
    let version = cur
        .read_u32::<LittleEndian>()
        .map_err(|_| err(path, "truncated version"))?;
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(err(
            path,
            format!("unsupported format_version {version} (expected {CHECKPOINT_FORMAT_VERSION})"),
        ));
    }
    let hlen = cur
        .read_u64::<LittleEndian>()
        .map_err(|_| err(path, "truncated header length"))? as usize;
    let hstart = cur.position() as usize;
    if hstart + hlen > bytes.len() {
        return Err(err(path, "header extends past end of file"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[hstart..hstart + hlen])
        .map_err(|e| err(path, format!("corrupt header: {e}")))?;
    let mut data_cur = std::io::Cursor::new(&bytes[hstart + hlen..]);
    let n_floats = (bytes.len() - hstart - hlen) / 4;
    let mut data = vec![0f32; n_floats];
    data_cur
        .read_f32_into::<LittleEndian>(&mut data)
        .map_err(|_| err(path, "truncated tensor data"))?;
    Ok((header, data))
}

fn restore_store(
    path: &Path,
    prefix: &str,
    header: &CheckpointHeader,
    data: &[f32],
    store: &mut ParamStore<Elem>,
) -> Result<()> {
    use std::collections::HashMap;
    let index: HashMap<&str, &TensorEntry> = header
        .tensors
        .iter()
        .map(|e| (e.name.as_str(), e))
        .collect();
    let fetch = |name: &str, shape: &[usize]| -> Result<ArrayD<Elem>> {
        let entry = index
            .get(name)
            .ok_or_else(|| err(path, format!("missing tensor {name}")))?;
        if entry.shape != shape {
            return Err(err(
                path,
                format!(
                    "tensor {name}: shape {:?} does not match model {:?}",
                    entry.shape, shape
                ),
            ));
        }
        let start = entry.offset as usize;
        let end = start + entry.len as usize;
        if end > data.len() {
            return Err(err(path, format!("tensor {name} extends past data")));
        }
        ArrayD::from_shape_vec(IxDyn(&entry.shape), data[start..end].to_vec())
            .map_err(|e| err(path, format!("tensor {name}: {e}")))
    };
    let ids: Vec<_> = store.slots().map(|(id, s)| (id, s.name.clone(), s.value.shape().to_vec())).collect();
    for (id, name, shape) in ids {
        let value = fetch(&format!("{prefix}/{name}"), &shape)?;
        let m = fetch(&format!("{prefix}/{name}.adam_m"), &shape)?;
        let v = fetch(&format!("{prefix}/{name}.adam_v"), &shape)?;
        store.set_value(id, value);
        store.set_moments(id, m, v);
    }
    Ok(())
}

/// Serializes the full training state (generator, discriminators,
/// recognizer, optimizer moments, iteration, seed).
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.push_store("gen", &state.gen_store);
    w.push_store("disc", &state.disc_store);
    w.push_store("rec", &state.rec_store);
    let header = CheckpointHeader {
        format_version: CHECKPOINT_FORMAT_VERSION,
        kind: "editor".into(),
        iteration: state.iteration,
        rng_seed: state.config.seed,
        adam_gen_t: state.adam_gen.t,
        adam_disc_t: state.adam_disc.t,
        train_config: Some(state.config.clone()),
        model_config: None,
        recognizer_accuracy: state.recognizer_accuracy,
        tensors: w.entries.clone(),
    };
    write_file(path, &header, &w.data)
}

/// Rebuilds a [`TrainState`] from an editor checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let (header, data) = read_file(path)?;
    if header.kind != "editor" {
        return Err(err(path, format!("expected an editor checkpoint, got {}", header.kind)));
    }
    let config = header
        .train_config
        .clone()
        .ok_or_else(|| err(path, "editor checkpoint missing train_config"))?;
    let mut state = TrainState::new(config)?;
    restore_store(path, "gen", &header, &data, &mut state.gen_store)?;
    restore_store(path, "disc", &header, &data, &mut state.disc_store)?;
    restore_store(path, "rec", &header, &data, &mut state.rec_store)?;
    state.iteration = header.iteration;
    state.adam_gen.t = header.adam_gen_t;
    state.adam_disc.t = header.adam_disc_t;
    state.recognizer_accuracy = header.recognizer_accuracy;
    Ok(state)
}

/// Writes a standalone recognizer checkpoint (pre-training artifact).
pub fn save_recognizer_checkpoint(
    store: &ParamStore<Elem>,
    model: &ModelConfig,
    accuracy: f64,
    adam_t: u64,
    path: &Path,
) -> Result<()> {
    let mut w = Writer::new();
    w.push_store("rec", store);
    let header = CheckpointHeader {
        format_version: CHECKPOINT_FORMAT_VERSION,
        kind: "recognizer".into(),
        iteration: 0,
        rng_seed: 0,
        adam_gen_t: adam_t,
        adam_disc_t: 0,
        train_config: None,
        model_config: Some(model.clone()),
        recognizer_accuracy: Some(accuracy),
        tensors: w.entries.clone(),
    };
    write_file(path, &header, &w.data)
}

/// Loads recognizer parameters into `store`; the stored model config must
/// agree on every recognizer-relevant field.
pub fn load_recognizer_checkpoint(
    path: &Path,
    model: &ModelConfig,
    store: &mut ParamStore<Elem>,
) -> Result<f64> {
    let (header, data) = read_file(path)?;
    if header.kind != "recognizer" {
        return Err(err(
            path,
            format!("expected a recognizer checkpoint, got {}", header.kind),
        ));
    }
    let stored = header
        .model_config
        .clone()
        .ok_or_else(|| err(path, "recognizer checkpoint missing model_config"))?;
    let relevant = |m: &ModelConfig| {
        (
            m.vocab.clone(),
            m.max_text_len,
            m.rec_hidden,
            m.rec_embed,
            m.rec_attn,
            m.rec_use_rectifier,
        )
    };
    if relevant(&stored) != relevant(model) {
        return Err(err(
            path,
            "recognizer architecture in checkpoint does not match the model config",
        ));
    }
    restore_store(path, "rec", &header, &data, store)?;
    Ok(header.recognizer_accuracy.unwrap_or(f64::NAN))
}

/// Reads just the header (CLI inspection, report provenance).
pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    read_file(path).map(|(h, _)| h)
}
