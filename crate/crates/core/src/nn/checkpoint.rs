//! Binary checkpoint container.
//!
//! ```text
//! "QBYE" | version u32 | config: u32 len + UTF-8 text
//! tensor count u32
//!   name: u32 len + UTF-8 | rank u32 | dims u32 × rank | f32 LE × prod(dims)
//! optimizer flag u32 (0 = none, 1 = Adam)
//!   step u64 | lr f64 | beta1 f64 | beta2 f64 | eps f64
//!   moment count u32, then (m, v) tensor records per parameter
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use super::{AdamState, Tensor};

pub const MAGIC: &[u8; 4] = b"QBYE";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor<f32>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: String,
    pub tensors: Vec<NamedTensor>,
    pub adam: Option<AdamState<f32>>,
}

impl Checkpoint {
    pub fn new(config: impl Into<String>) -> Self {
        Self {
            config: config.into(),
            tensors: Vec::new(),
            adam: None,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<f32>) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            tensor,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.tensor)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<f32>, CheckpointError> {
        self.get(name).ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(VERSION)?;
        write_str(w, &self.config)?;
        w.write_u32::<LE>(self.tensors.len() as u32)?;
        for t in &self.tensors {
            write_tensor(w, &t.name, &t.tensor)?;
        }
        match &self.adam {
            None => w.write_u32::<LE>(0)?,
            Some(a) => {
                w.write_u32::<LE>(1)?;
                w.write_u64::<LE>(a.step)?;
                for x in [a.lr, a.beta1, a.beta2, a.eps] {
                    w.write_f64::<LE>(x)?;
                }
                w.write_u32::<LE>(a.m.len() as u32)?;
                for (i, (m, v)) in a.m.iter().zip(&a.v).enumerate() {
                    write_tensor(w, &format!("adam.m.{i}"), m)?;
                    write_tensor(w, &format!("adam.v.{i}"), v)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(eof_as_corrupt)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.read_u32::<LE>().map_err(eof_as_corrupt)?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let config = read_str(r)?;
        let count = r.read_u32::<LE>().map_err(eof_as_corrupt)?;
        let mut tensors = Vec::with_capacity(count.min(4096) as usize);
        for _ in 0..count {
            let (name, tensor) = read_tensor(r)?;
            tensors.push(NamedTensor { name, tensor });
        }
        let adam = match r.read_u32::<LE>().map_err(eof_as_corrupt)? {
            0 => None,
            1 => {
                let step = r.read_u64::<LE>().map_err(eof_as_corrupt)?;
                let mut f = [0f64; 4];
                for x in f.iter_mut() {
                    *x = r.read_f64::<LE>().map_err(eof_as_corrupt)?;
                }
                let n = r.read_u32::<LE>().map_err(eof_as_corrupt)?;
                let mut m = Vec::new();
                let mut v = Vec::new();
                for _ in 0..n {
                    m.push(read_tensor(r)?.1);
                    v.push(read_tensor(r)?.1);
                }
                Some(AdamState {
                    m,
                    v,
                    step,
                    lr: f[0],
                    beta1: f[1],
                    beta2: f[2],
                    eps: f[3],
                })
            }
            other => return Err(CheckpointError::Corrupt(format!("unknown optimizer flag {other}"))),
        };
        Ok(Self { config, tensors, adam })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, CheckpointError> {
        Self::read_from(&mut bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn eof_as_corrupt(e: io::Error) -> CheckpointError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        CheckpointError::Corrupt("truncated".into())
    } else {
        CheckpointError::Io(e)
    }
}

fn write_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str(r: &mut impl Read) -> Result<String, CheckpointError> {
    let n = r.read_u32::<LE>().map_err(eof_as_corrupt)? as usize;
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(CheckpointError::Corrupt("truncated string".into()));
    }
    String::from_utf8(buf).map_err(|_| CheckpointError::Corrupt("string is not UTF-8".into()))
}

pub(crate) fn write_tensor(w: &mut impl Write, name: &str, t: &Tensor<f32>) -> io::Result<()> {
    write_str(w, name)?;
    w.write_u32::<LE>(t.shape().len() as u32)?;
    for &d in t.shape() {
        w.write_u32::<LE>(d as u32)?;
    }
    for &x in t.data() {
        w.write_f32::<LE>(x)?;
    }
    Ok(())
}

fn read_tensor(r: &mut impl Read) -> Result<(String, Tensor<f32>), CheckpointError> {
    let name = read_str(r)?;
    let rank = r.read_u32::<LE>().map_err(eof_as_corrupt)? as usize;
    if rank > 8 {
        return Err(CheckpointError::Corrupt(format!("tensor `{name}` has rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.read_u32::<LE>().map_err(eof_as_corrupt)? as usize);
    }
    let n: usize = dims.iter().product();
    let mut data = vec![0f32; n];
    r.read_f32_into::<LE>(&mut data).map_err(eof_as_corrupt)?;
    let t = Tensor::from_vec(&dims, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    Ok((name, t))
}
