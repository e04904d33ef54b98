use std::path::Path;

use serde_json::{json, Value};

use super::{FieldConfig, Generator};
use crate::autodiff::Tensor;
use crate::canonical_json;
use crate::error::{bad_data, Error, Result};

const MAGIC: &str = "humanfield-checkpoint";
const VERSION: i64 = 1;
pub const GEN_PREFIX: &str = "gen.";

/// Architecture metadata plus named tensors stored as little-endian f32.
///
/// The file is one line of canonical JSON (format tag, metadata and a manifest
/// of names, shapes and element offsets), a newline, then the raw tensor data
/// in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut manifest = Vec::with_capacity(self.tensors.len());
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            if let Some(x) = t.data().iter().find(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("parameter {name} holds {x}")));
            }
            manifest.push(json!({"name": name, "shape": [t.rows(), t.cols()], "offset": offset}));
            offset += t.len();
        }
        let header = json!({
            "format": MAGIC,
            "version": VERSION,
            "meta": self.meta,
            "params": manifest,
            "count": offset,
        });
        let mut out = canonical_json::to_string(&header).into_bytes();
        out.reserve(offset * 4);
        for (_, t) in &self.tensors {
            for &x in t.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let Some(nl) = bytes.iter().position(|&b| b == b'\n') else { bad_data!("checkpoint header is not terminated") };
        let header: Value = serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Data(format!("checkpoint header: {e}")))?;
        if header["format"] != MAGIC {
            bad_data!("not a checkpoint file");
        }
        if header["version"] != VERSION {
            bad_data!("unsupported checkpoint version {}", header["version"]);
        }
        let count = header["count"].as_u64().ok_or_else(|| Error::Data("checkpoint count missing".into()))? as usize;
        let blob = &bytes[nl + 1..];
        if blob.len() != count * 4 {
            bad_data!("checkpoint holds {} data bytes, header declares {}", blob.len(), count * 4);
        }
        let Some(params) = header["params"].as_array() else { bad_data!("checkpoint manifest missing") };
        let mut tensors = Vec::with_capacity(params.len());
        let mut expected = 0usize;
        for p in params {
            let name = p["name"].as_str().ok_or_else(|| Error::Data("parameter name missing".into()))?;
            let shape = p["shape"].as_array().filter(|s| s.len() == 2).and_then(|s| Some((s[0].as_u64()?, s[1].as_u64()?)));
            let Some((rows, cols)) = shape else { bad_data!("parameter {name} has a bad shape") };
            let offset = p["offset"].as_u64();
            if offset != Some(expected as u64) {
                bad_data!("parameter {name} has offset {offset:?}, expected {expected}");
            }
            let len = (rows * cols) as usize;
            if expected + len > count {
                bad_data!("parameter {name} overruns the data block");
            }
            let data = blob[expected * 4..(expected + len) * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect::<Vec<_>>();
            if data.iter().any(|x| !x.is_finite()) {
                bad_data!("parameter {name} holds non-finite values");
            }
            tensors.push((name.to_string(), Tensor::new(rows as usize, cols as usize, data)));
            expected += len;
        }
        if expected != count {
            bad_data!("manifest covers {expected} values, header declares {count}");
        }
        Ok(Self { meta: header["meta"].clone(), tensors })
    }
}

impl Checkpoint {
    /// Checkpoint holding only a generator.
    pub fn from_generator(gen: &Generator) -> Result<Self> {
        let mut c = Self { meta: json!({}), tensors: Vec::new() };
        c.add_generator(gen)?;
        Ok(c)
    }

    pub fn add_generator(&mut self, gen: &Generator) -> Result<()> {
        self.meta["generator"] = serde_json::to_value(&gen.config)?;
        self.tensors.extend(gen.params.iter().map(|(n, t)| (format!("{GEN_PREFIX}{n}"), t.clone())));
        Ok(())
    }

    pub fn generator(&self) -> Result<Generator> {
        let Some(cfg) = self.meta.get("generator") else { bad_data!("checkpoint has no generator") };
        let config: FieldConfig =
            serde_json::from_value(cfg.clone()).map_err(|e| Error::Data(format!("generator config: {e}")))?;
        config.validate().map_err(|e| Error::Data(e.to_string()))?;
        let tensors: Vec<(String, Tensor)> = self
            .tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(GEN_PREFIX).map(|n| (n.to_string(), t.clone())))
            .collect();
        let mut gen = Generator::new(config, 0)?;
        gen.params.assign(&tensors)?;
        Ok(gen)
    }

    /// Tensors under `prefix` with the prefix removed.
    pub fn section(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.tensors.iter().filter_map(|(n, t)| n.strip_prefix(prefix).map(|n| (n.to_string(), t.clone()))).collect()
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            meta: json!({"alpha": 0.1, "layers": [3, 2]}),
            tensors: vec![
                ("a".into(), Tensor::new(2, 2, vec![1.0, -0.5, 0.25, 3.0e-8f32 as f64])),
                ("b".into(), Tensor::new(1, 3, vec![0.1f32 as f64, 2.0, -7.0])),
            ],
        }
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let bytes = sample().to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.tensors, sample().tensors);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn truncated_data_is_rejected() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes.pop();
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Data(_))));
        assert!(Checkpoint::from_bytes(b"{}\n").is_err());
        assert!(Checkpoint::from_bytes(b"no header").is_err());
    }

    #[test]
    fn generator_round_trip_is_byte_identical() {
        let gen = Generator::new(FieldConfig::small(2), 11).unwrap();
        let bytes = Checkpoint::from_generator(&gen).unwrap().to_bytes().unwrap();
        let loaded = Checkpoint::from_bytes(&bytes).unwrap().generator().unwrap();
        assert_eq!(loaded, gen);
        assert_eq!(Checkpoint::from_generator(&loaded).unwrap().to_bytes().unwrap(), bytes);
    }

    #[test]
    fn nan_parameters_are_refused() {
        let mut c = sample();
        c.tensors[0].1.set(0, 0, f64::NAN);
        assert!(matches!(c.to_bytes(), Err(Error::Numeric(_))));
    }
}
