use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{RunningStats, Scalar, Tensor};

use super::{ModelConfig, ModelError};

/// Version written into model file headers.
pub const FORMAT_VERSION: u32 = 1;

const MAGIC: &[u8; 4] = b"TJM1";

/// Named trainable tensors plus batch-norm running statistics, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub config: ModelConfig,
    pub seed: u64,
    pub(crate) params: Vec<(String, Tensor<T>)>,
    pub(crate) running: Vec<(String, RunningStats<T>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum EntryKind {
    Param,
    RunningMean,
    RunningVar,
}

#[derive(Debug, Serialize, Deserialize)]
struct ShapeEntry {
    name: String,
    kind: EntryKind,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    seed: u64,
    tensors: Vec<ShapeEntry>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.params.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.params.iter_mut().map(|(_, t)| t)
    }

    pub fn running(&self) -> impl Iterator<Item = (&str, &RunningStats<T>)> {
        self.running.iter().map(|(n, r)| (n.as_str(), r))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Trainable scalar count.
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Same store in another precision.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            config: self.config.clone(),
            seed: self.seed,
            params: self.params.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
            running: self
                .running
                .iter()
                .map(|(n, r)| {
                    (
                        n.clone(),
                        RunningStats {
                            mean: r.mean.iter().map(|v| U::of(v.as_f64())).collect(),
                            var: r.var.iter().map(|v| U::of(v.as_f64())).collect(),
                        },
                    )
                })
                .collect(),
        }
    }

    fn shape_table(&self) -> Vec<ShapeEntry> {
        let mut out: Vec<ShapeEntry> = self
            .params
            .iter()
            .map(|(n, t)| ShapeEntry {
                name: n.clone(),
                kind: EntryKind::Param,
                shape: t.shape().to_vec(),
            })
            .collect();
        for (n, r) in &self.running {
            out.push(ShapeEntry {
                name: n.clone(),
                kind: EntryKind::RunningMean,
                shape: vec![r.mean.len()],
            });
            out.push(ShapeEntry {
                name: n.clone(),
                kind: EntryKind::RunningVar,
                shape: vec![r.var.len()],
            });
        }
        out
    }
}

impl ParamStore<f32> {
    /// Magic `TJM1`, little-endian u32 header length, JSON header, then every
    /// buffer as little-endian f32 in header order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            seed: self.seed,
            tensors: self.shape_table(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + json.len() + 4 * self.parameter_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |vals: &[f32]| {
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (_, t) in &self.params {
            put(t.data());
        }
        for (_, r) in &self.running {
            put(&r.mean);
            put(&r.var);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(ModelError::Format("bad magic bytes".into()));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let hend = 8usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| ModelError::Format("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[8..hend]).map_err(|e| ModelError::Format(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(ModelError::VersionMismatch {
                found: header.format_version,
                expected: FORMAT_VERSION,
            });
        }
        // The embedded config must reproduce the embedded shape table exactly.
        let (_, template) = super::ResNet1d::build::<f32>(header.config.clone(), header.seed)?;
        let expected = template.shape_table();
        if expected.len() != header.tensors.len()
            || expected
                .iter()
                .zip(&header.tensors)
                .any(|(a, b)| a.name != b.name || a.kind != b.kind || a.shape != b.shape)
        {
            return Err(ModelError::Format("shape table does not match the embedded config".into()));
        }
        let total: usize = header.tensors.iter().map(|e| e.shape.iter().product::<usize>()).sum();
        let payload = &bytes[hend..];
        if payload.len() != 4 * total {
            return Err(ModelError::Format(format!(
                "payload holds {} bytes, header describes {}",
                payload.len(),
                4 * total
            )));
        }
        let mut vals = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let mut take = |n: usize| -> Vec<f32> { vals.by_ref().take(n).collect() };
        let mut store = template;
        for (_, t) in &mut store.params {
            let n = t.numel();
            t.data_mut().copy_from_slice(&take(n));
        }
        for (_, r) in &mut store.running {
            r.mean = take(r.mean.len());
            r.var = take(r.var.len());
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
