//! File formats: whitespace-separated XYZ text and the `MSEQ` binary tensor
//! container used for sequence datasets, checkpoints and feature matrices.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! "MSEQ" | version: u32 | count: u32 | count × tensor
//! tensor = name_len: u32 | name: UTF-8 | dtype: u8 (0 f32, 1 f64, 2 i64)
//!        | rank: u32 | rank × dim: u64 | row-major payload
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::model::{ModelConfig, MortonNet};
use crate::nn::Parameters;
use crate::sequence::{SequenceFlags, SequenceGenConfig, SequenceSet, TrainingSample};
use crate::train::{AdamState, Checkpoint, EpochLog, LrSchedule, TrainConfig, TrainState};

pub const MAGIC: &[u8; 4] = b"MSEQ";
pub const VERSION: u32 = 1;

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

// ---------------------------------------------------------------- XYZ text

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parses `x y z [label]` lines; `#` lines and blank lines are skipped.
/// `path` only labels error messages.
pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut columns = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 3 or 4 columns, found {}", fields.len()),
            ));
        }
        match columns {
            None => columns = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("expected {c} columns like earlier lines, found {}", fields.len()),
                ));
            }
            _ => {}
        }
        let mut xyz = [0.0; 3];
        for (a, f) in fields[..3].iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("invalid number {f:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line_no, format!("non-finite coordinate {f:?}")));
            }
            xyz[a] = v;
        }
        points.push(Point3::from(xyz));
        if let Some(f) = fields.get(3) {
            labels.push(
                f.parse::<i64>()
                    .map_err(|_| parse_err(path, line_no, format!("invalid label {f:?}")))?,
            );
        }
    }
    if columns == Some(4) {
        PointCloud::with_labels(points, labels)
    } else {
        Ok(PointCloud::new(points))
    }
}

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    parse_xyz(&fs::read_to_string(path)?, path)
}

/// Coordinates use the shortest representation that parses back to the
/// same `f64`, so the round trip is exact.
pub fn format_xyz(cloud: &PointCloud, config_echo: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(c) = config_echo {
        let _ = writeln!(s, "# config: {c}");
    }
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(s, "{:?} {:?} {:?}", p.x, p.y, p.z);
        if let Some(l) = &cloud.labels {
            let _ = write!(s, " {}", l[i]);
        }
        s.push('\n');
    }
    s
}

pub fn write_xyz(path: &Path, cloud: &PointCloud, config_echo: Option<&str>) -> Result<()> {
    cloud.validate()?;
    atomic_write(path, format_xyz(cloud, config_echo).as_bytes())
}

// ---------------------------------------------------------- tensor container

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    fn tag(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::F64(_) => 1,
            TensorData::I64(_) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorContainer {
    pub tensors: Vec<NamedTensor>,
}

fn container_err(msg: impl Into<String>) -> Error {
    Error::Container(msg.into())
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, data: TensorData) -> Result<()> {
        let name = name.into();
        if dims.iter().product::<usize>() != data.len() {
            return Err(container_err(format!(
                "tensor {name}: dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        if self.get(&name).is_some() {
            return Err(container_err(format!("duplicate tensor name {name}")));
        }
        self.tensors.push(NamedTensor { name, dims, data });
        Ok(())
    }

    pub fn push_f64(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Result<()> {
        self.push(name, dims, TensorData::F64(data))
    }

    pub fn push_i64(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<i64>) -> Result<()> {
        self.push(name, dims, TensorData::I64(data))
    }

    /// Stores a string as one `i64` per UTF-8 byte.
    pub fn push_text(&mut self, name: impl Into<String>, text: &str) -> Result<()> {
        let bytes: Vec<i64> = text.bytes().map(i64::from).collect();
        self.push_i64(name, vec![bytes.len()], bytes)
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn require(&self, name: &str) -> Result<&NamedTensor> {
        self.get(name)
            .ok_or_else(|| container_err(format!("missing tensor {name}")))
    }

    pub fn f64s(&self, name: &str) -> Result<(&[usize], &[f64])> {
        let t = self.require(name)?;
        match &t.data {
            TensorData::F64(v) => Ok((&t.dims, v)),
            _ => Err(container_err(format!("tensor {name} is not f64"))),
        }
    }

    pub fn i64s(&self, name: &str) -> Result<(&[usize], &[i64])> {
        let t = self.require(name)?;
        match &t.data {
            TensorData::I64(v) => Ok((&t.dims, v)),
            _ => Err(container_err(format!("tensor {name} is not i64"))),
        }
    }

    pub fn text(&self, name: &str) -> Result<String> {
        let (_, v) = self.i64s(name)?;
        let bytes = v
            .iter()
            .map(|&b| u8::try_from(b).map_err(|_| container_err(format!("tensor {name} is not text"))))
            .collect::<Result<Vec<u8>>>()?;
        String::from_utf8(bytes).map_err(|_| container_err(format!("tensor {name} is not UTF-8")))
    }

    pub fn scalar_i64(&self, name: &str) -> Result<i64> {
        match self.i64s(name)?.1 {
            [v] => Ok(*v),
            _ => Err(container_err(format!("tensor {name} is not a scalar"))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.data.tag());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(container_err("bad magic: not an MSEQ container"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(container_err(format!(
                "unsupported container version {version} (expected {VERSION})"
            )));
        }
        let count = r.u32()?;
        let mut c = TensorContainer::new();
        let mut seen = HashSet::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| container_err("tensor name is not UTF-8"))?;
            if !seen.insert(name.clone()) {
                return Err(container_err(format!("duplicate tensor name {name}")));
            }
            let tag = r.u8()?;
            let rank = r.u32()? as usize;
            let mut dims = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                dims.push(usize::try_from(r.u64()?).map_err(|_| container_err("dimension overflow"))?);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| container_err(format!("tensor {name}: size overflow")))?;
            let width = match tag {
                0 => 4,
                1 | 2 => 8,
                t => return Err(container_err(format!("tensor {name}: unknown dtype tag {t}"))),
            };
            let payload = r.take(
                n.checked_mul(width)
                    .ok_or_else(|| container_err(format!("tensor {name}: size overflow")))?,
            )?;
            let data = match tag {
                0 => TensorData::F32(
                    payload
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                        .collect(),
                ),
                1 => TensorData::F64(
                    payload
                        .chunks_exact(8)
                        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                        .collect(),
                ),
                _ => TensorData::I64(
                    payload
                        .chunks_exact(8)
                        .map(|b| i64::from_le_bytes(b.try_into().expect("8 bytes")))
                        .collect(),
                ),
            };
            c.tensors.push(NamedTensor { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(container_err(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(c)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| container_err(format!("truncated container at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_container(path: &Path, c: &TensorContainer) -> Result<()> {
    atomic_write(path, &c.encode())
}

pub fn load_container(path: &Path) -> Result<TensorContainer> {
    TensorContainer::decode(&fs::read(path)?).map_err(|e| match e {
        Error::Container(m) => Error::Container(format!("{}: {m}", path.display())),
        e => e,
    })
}

// ------------------------------------------------------------- parameters

/// Config echo entry present in every artifact written by the pipeline.
pub const CONFIG_ECHO: &str = "config.json";

pub fn store_params<P: Parameters + ?Sized>(c: &mut TensorContainer, p: &P, prefix: &str) -> Result<()> {
    for t in p.tensors().into_iter().chain(p.buffers()) {
        c.push_f64(format!("{prefix}{}", t.name), t.shape.clone(), t.data.to_vec())?;
    }
    Ok(())
}

/// Overwrites every parameter and buffer of `p` from `{prefix}{name}`.
pub fn load_params<P: Parameters + ?Sized>(c: &TensorContainer, p: &mut P, prefix: &str) -> Result<()> {
    let names: Vec<(String, Vec<usize>)> = p
        .tensors()
        .into_iter()
        .chain(p.buffers())
        .map(|t| (t.name, t.shape))
        .collect();
    let n_params = p.tensors().len();
    let mut values = Vec::with_capacity(names.len());
    for (name, shape) in &names {
        let full = format!("{prefix}{name}");
        let (dims, data) = c.f64s(&full)?;
        if dims != shape.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "{full}: stored shape {dims:?}, model expects {shape:?}"
            )));
        }
        values.push(data);
    }
    for (dst, src) in p.tensors_mut().into_iter().zip(&values[..n_params]) {
        dst.copy_from_slice(src);
    }
    for (dst, src) in p.buffers_mut().into_iter().zip(&values[n_params..]) {
        dst.copy_from_slice(src);
    }
    Ok(())
}

fn from_json<T: serde::de::DeserializeOwned>(c: &TensorContainer, name: &str) -> Result<T> {
    Ok(serde_json::from_str(&c.text(name)?)?)
}

pub fn model_to_container(c: &mut TensorContainer, model: &MortonNet, prefix: &str) -> Result<()> {
    c.push_text(format!("{prefix}config"), &serde_json::to_string(&model.config)?)?;
    store_params(c, model, prefix)
}

pub fn model_from_container(c: &TensorContainer, prefix: &str) -> Result<MortonNet> {
    let config: ModelConfig = from_json(c, &format!("{prefix}config"))?;
    let mut model = MortonNet::new(config)?;
    load_params(c, &mut model, prefix)?;
    Ok(model)
}

/// A standalone model file (the best checkpoint).
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint, config_echo: &str) -> Result<()> {
    let mut c = TensorContainer::new();
    c.push_text(CONFIG_ECHO, config_echo)?;
    c.push_text("train.config", &serde_json::to_string(&ckpt.config)?)?;
    c.push_i64("checkpoint.epoch", vec![1], vec![ckpt.epoch as i64])?;
    c.push_f64("checkpoint.val_loss", vec![1], vec![ckpt.val_loss])?;
    c.push_i64("checkpoint.rng_seed", vec![1], vec![ckpt.rng_seed as i64])?;
    model_to_container(&mut c, &ckpt.model, "model.")?;
    save_container(path, &c)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let c = load_container(path)?;
    checkpoint_from_container(&c, "")
}

fn checkpoint_from_container(c: &TensorContainer, prefix: &str) -> Result<Checkpoint> {
    Ok(Checkpoint {
        model: model_from_container(c, &format!("{prefix}model."))?,
        epoch: c.scalar_i64(&format!("{prefix}checkpoint.epoch"))? as usize,
        val_loss: match c.f64s(&format!("{prefix}checkpoint.val_loss"))?.1 {
            [v] => *v,
            _ => return Err(container_err("val_loss is not a scalar")),
        },
        config: from_json(c, "train.config")?,
        rng_seed: c.scalar_i64(&format!("{prefix}checkpoint.rng_seed"))? as u64,
    })
}

/// Full resumable training state, including the best snapshot so far.
pub fn train_state_to_container(state: &TrainState, config_echo: &str) -> Result<TensorContainer> {
    let mut c = TensorContainer::new();
    c.push_text(CONFIG_ECHO, config_echo)?;
    c.push_text("train.config", &serde_json::to_string(&state.config)?)?;
    model_to_container(&mut c, &state.model, "model.")?;
    c.push_i64("adam.t", vec![1], vec![state.adam.t as i64])?;
    for (t, (m, v)) in state.model.tensors().iter().zip(state.adam.m.iter().zip(&state.adam.v)) {
        c.push_f64(format!("adam.m.{}", t.name), t.shape.clone(), m.clone())?;
        c.push_f64(format!("adam.v.{}", t.name), t.shape.clone(), v.clone())?;
    }
    let s = &state.schedule;
    c.push_f64("schedule", vec![3], vec![s.lr, s.best, s.since_best as f64])?;
    c.push_i64("epoch", vec![1], vec![state.epoch as i64])?;
    let log: Vec<f64> = state
        .log
        .iter()
        .flat_map(|e| [e.epoch as f64, e.train_loss, e.val_loss, e.lr, e.val_rho_acc])
        .collect();
    c.push_f64("log", vec![state.log.len(), 5], log)?;
    if let Some(b) = &state.best {
        c.push_i64("best.checkpoint.epoch", vec![1], vec![b.epoch as i64])?;
        c.push_f64("best.checkpoint.val_loss", vec![1], vec![b.val_loss])?;
        c.push_i64("best.checkpoint.rng_seed", vec![1], vec![b.rng_seed as i64])?;
        model_to_container(&mut c, &b.model, "best.model.")?;
    }
    Ok(c)
}

pub fn train_state_from_container(c: &TensorContainer) -> Result<TrainState> {
    let config: TrainConfig = from_json(c, "train.config")?;
    let model = model_from_container(c, "model.")?;
    let mut adam = AdamState::new(&model);
    adam.t = c.scalar_i64("adam.t")? as u64;
    for (i, t) in model.tensors().iter().enumerate() {
        adam.m[i] = c.f64s(&format!("adam.m.{}", t.name))?.1.to_vec();
        adam.v[i] = c.f64s(&format!("adam.v.{}", t.name))?.1.to_vec();
        if adam.m[i].len() != t.data.len() || adam.v[i].len() != t.data.len() {
            return Err(Error::ShapeMismatch(format!("optimizer moments for {}", t.name)));
        }
    }
    let schedule = match c.f64s("schedule")?.1 {
        [lr, best, since] => LrSchedule {
            lr: *lr,
            best: *best,
            since_best: *since as usize,
        },
        _ => return Err(container_err("schedule must hold 3 values")),
    };
    let (dims, raw) = c.f64s("log")?;
    if dims.len() != 2 || dims[1] != 5 {
        return Err(container_err("log must be an E × 5 matrix"));
    }
    let log = raw
        .chunks_exact(5)
        .map(|r| EpochLog {
            epoch: r[0] as usize,
            train_loss: r[1],
            val_loss: r[2],
            lr: r[3],
            val_rho_acc: r[4],
        })
        .collect();
    let best = if c.get("best.checkpoint.epoch").is_some() {
        Some(checkpoint_from_container(c, "best.")?)
    } else {
        None
    };
    Ok(TrainState {
        model,
        adam,
        schedule,
        epoch: c.scalar_i64("epoch")? as usize,
        log,
        best,
        config,
    })
}

pub fn save_train_state(path: &Path, state: &TrainState, config_echo: &str) -> Result<()> {
    save_container(path, &train_state_to_container(state, config_echo)?)
}

pub fn load_train_state(path: &Path) -> Result<TrainState> {
    train_state_from_container(&load_container(path)?)
}

// ------------------------------------------------------------ datasets

/// A generated sequence dataset: raw index sequences plus the normalized
/// samples a model trains on.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub config: SequenceGenConfig,
    pub set: SequenceSet,
    pub samples: Vec<TrainingSample>,
}

pub fn save_sequences(path: &Path, ds: &SequenceDataset, config_echo: &str) -> Result<()> {
    let k = ds.config.k;
    let s = ds.set.sequences.len();
    if ds.samples.len() != s {
        return Err(Error::ShapeMismatch("one sample per sequence required".into()));
    }
    let mut c = TensorContainer::new();
    c.push_text(CONFIG_ECHO, config_echo)?;
    c.push_text("seqgen.config", &serde_json::to_string(&ds.config)?)?;
    let mut indices = Vec::with_capacity(s * k);
    for q in &ds.set.sequences {
        if q.point_indices.len() != k {
            return Err(Error::ShapeMismatch("sequence length differs from k".into()));
        }
        indices.extend(q.point_indices.iter().map(|&i| i as i64));
    }
    c.push_i64("sequences.indices", vec![s, k], indices)?;
    c.push_i64(
        "sequences.flags",
        vec![s],
        ds.set.sequences.iter().map(|q| q.flags.bits()).collect(),
    )?;
    c.push_i64(
        "sequences.skipped",
        vec![ds.set.skipped.len()],
        ds.set.skipped.iter().map(|&i| i as i64).collect(),
    )?;
    let inputs: Vec<f64> = ds.samples.iter().flat_map(|x| x.inputs.iter().flatten().copied()).collect();
    c.push_f64("samples.inputs", vec![s, k - 1, 3], inputs)?;
    c.push_f64(
        "samples.targets",
        vec![s, 3],
        ds.samples.iter().flat_map(|x| x.target).collect(),
    )?;
    c.push_i64(
        "samples.centers",
        vec![s],
        ds.samples.iter().map(|x| x.center_index as i64).collect(),
    )?;
    save_container(path, &c)
}

pub fn load_sequences(path: &Path) -> Result<SequenceDataset> {
    let c = load_container(path)?;
    let config: SequenceGenConfig = from_json(&c, "seqgen.config")?;
    let k = config.k;
    let (idims, indices) = c.i64s("sequences.indices")?;
    let (_, flags) = c.i64s("sequences.flags")?;
    let (_, skipped) = c.i64s("sequences.skipped")?;
    let (_, inputs) = c.f64s("samples.inputs")?;
    let (_, targets) = c.f64s("samples.targets")?;
    let (_, centers) = c.i64s("samples.centers")?;
    let s = idims.first().copied().unwrap_or(0);
    if idims != [s, k] || flags.len() != s || inputs.len() != s * (k - 1) * 3 || targets.len() != s * 3 || centers.len() != s {
        return Err(container_err(format!("{}: inconsistent sequence dataset", path.display())));
    }
    let to_usize = |v: i64| usize::try_from(v).map_err(|_| container_err("negative index"));
    let mut set = SequenceSet::default();
    for i in 0..s {
        set.sequences.push(crate::sequence::ZSequence {
            point_indices: indices[i * k..(i + 1) * k]
                .iter()
                .map(|&v| to_usize(v))
                .collect::<Result<_>>()?,
            ordering: config.scheme,
            flags: SequenceFlags::from_bits(flags[i]),
        });
    }
    set.skipped = skipped.iter().map(|&v| to_usize(v)).collect::<Result<_>>()?;
    let samples = (0..s)
        .map(|i| {
            let base = i * (k - 1) * 3;
            Ok(TrainingSample {
                inputs: (0..k - 1)
                    .map(|t| {
                        let o = base + 3 * t;
                        [inputs[o], inputs[o + 1], inputs[o + 2]]
                    })
                    .collect(),
                target: [targets[3 * i], targets[3 * i + 1], targets[3 * i + 2]],
                center_index: to_usize(centers[i])?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SequenceDataset { config, set, samples })
}

pub fn save_features(
    path: &Path,
    features: &FeatureMatrix,
    labels: Option<&[i64]>,
    config_echo: &str,
) -> Result<()> {
    let mut c = TensorContainer::new();
    c.push_text(CONFIG_ECHO, config_echo)?;
    let (n, h) = features.data.dim();
    c.push_f64("features.data", vec![n, h], features.data.iter().copied().collect())?;
    c.push_i64(
        "features.valid",
        vec![n],
        features.valid.iter().map(|&v| i64::from(v)).collect(),
    )?;
    if let Some(l) = labels {
        c.push_i64("labels", vec![l.len()], l.to_vec())?;
    }
    save_container(path, &c)
}

pub fn load_features(path: &Path) -> Result<(FeatureMatrix, Option<Vec<i64>>)> {
    let c = load_container(path)?;
    let (dims, data) = c.f64s("features.data")?;
    let (_, valid) = c.i64s("features.valid")?;
    if dims.len() != 2 || valid.len() != dims[0] {
        return Err(container_err(format!("{}: inconsistent feature file", path.display())));
    }
    let fm = FeatureMatrix {
        data: ndarray::Array2::from_shape_vec((dims[0], dims[1]), data.to_vec())
            .map_err(|e| container_err(e.to_string()))?,
        valid: valid.iter().map(|&v| v != 0).collect(),
    };
    let labels = c.get("labels").map(|_| c.i64s("labels").map(|(_, l)| l.to_vec())).transpose()?;
    Ok((fm, labels))
}

/// Training log as CSV, preceded by a `# config:` line.
pub fn log_csv(log: &[EpochLog], config_echo: &str) -> String {
    let mut s = format!("# config: {config_echo}\nepoch,train_loss,val_loss,lr,val_rho_acc\n");
    for e in log {
        let _ = writeln!(
            s,
            "{},{:?},{:?},{:?},{:?}",
            e.epoch, e.train_loss, e.val_loss, e.lr, e.val_rho_acc
        );
    }
    s
}

/// `path` with its extension replaced, for sibling artifacts.
pub fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}
