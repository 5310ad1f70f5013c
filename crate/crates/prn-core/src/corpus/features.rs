//! Precomputed image feature storage.
//!
//! Binary layout: magic `PRNFEAT1`, u64 count, u32 dim, u8 dtype tag
//! (1 = float32 little-endian), an id table of `u16 len + utf8 bytes`
//! entries, then the feature matrix row-major in id-table order.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{PrnError, Result};

const MAGIC: &[u8; 8] = b"PRNFEAT1";
const DTYPE_F32_LE: u8 = 1;

/// Default feature width for production corpora (penultimate-pool CNN
/// features). Synthetic worlds may use any uniform width.
pub const DEFAULT_FEATURE_DIM: usize = 2048;

#[derive(Clone, Debug, Default)]
pub struct ImageFeatureStore {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl ImageFeatureStore {
    pub fn new(dim: usize) -> Self {
        ImageFeatureStore {
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn insert(&mut self, id: &str, features: &[f32]) -> Result<()> {
        if features.len() != self.dim {
            return Err(PrnError::Dimension(format!(
                "image '{id}': feature length {} does not match store dim {}",
                features.len(),
                self.dim
            )));
        }
        if self.index.contains_key(id) {
            return Err(PrnError::Data(format!("image '{id}' inserted twice")));
        }
        self.index.insert(id.to_string(), self.ids.len());
        self.ids.push(id.to_string());
        self.data.extend_from_slice(features);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&[f32]> {
        match self.index.get(id) {
            Some(&i) => Ok(&self.data[i * self.dim..(i + 1) * self.dim]),
            None => Err(PrnError::Data(format!("unknown image '{id}'"))),
        }
    }

    pub fn get_f64(&self, id: &str) -> Result<Vec<f64>> {
        Ok(self.get(id)?.iter().map(|&x| x as f64).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file =
            std::fs::File::create(path).map_err(|e| PrnError::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e| PrnError::io(path.display().to_string(), e);
        w.write_all(MAGIC).map_err(io_err)?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())
            .map_err(io_err)?;
        w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&[DTYPE_F32_LE]).map_err(io_err)?;
        for id in &self.ids {
            let bytes = id.as_bytes();
            if bytes.len() > u16::MAX as usize {
                return Err(PrnError::Data(format!("image id too long: '{id}'")));
            }
            w.write_all(&(bytes.len() as u16).to_le_bytes())
                .map_err(io_err)?;
            w.write_all(bytes).map_err(io_err)?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file =
            std::fs::File::open(path).map_err(|e| PrnError::io(path.display().to_string(), e))?;
        let mut r = BufReader::new(file);
        let io_err = |e| PrnError::io(path.display().to_string(), e);

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(PrnError::Data(format!(
                "{}: not a feature file (bad magic)",
                path.display()
            )));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf).map_err(io_err)?;
        let count = u64::from_le_bytes(u64buf) as usize;
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf).map_err(io_err)?;
        let dim = u32::from_le_bytes(u32buf) as usize;
        let mut dtype = [0u8; 1];
        r.read_exact(&mut dtype).map_err(io_err)?;
        if dtype[0] != DTYPE_F32_LE {
            return Err(PrnError::Data(format!(
                "{}: unsupported dtype tag {}",
                path.display(),
                dtype[0]
            )));
        }

        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let mut lenbuf = [0u8; 2];
            r.read_exact(&mut lenbuf).map_err(io_err)?;
            let len = u16::from_le_bytes(lenbuf) as usize;
            let mut sbuf = vec![0u8; len];
            r.read_exact(&mut sbuf).map_err(io_err)?;
            let id = String::from_utf8(sbuf)
                .map_err(|_| PrnError::Data(format!("{}: non-utf8 image id", path.display())))?;
            ids.push(id);
        }

        let mut data = vec![0f32; count * dim];
        let mut fbuf = [0u8; 4];
        for v in data.iter_mut() {
            r.read_exact(&mut fbuf).map_err(io_err)?;
            *v = f32::from_le_bytes(fbuf);
        }

        let mut index = HashMap::with_capacity(count);
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(PrnError::Data(format!(
                    "{}: duplicate image id '{id}'",
                    path.display()
                )));
            }
        }
        Ok(ImageFeatureStore {
            dim,
            ids,
            index,
            data,
        })
    }
}

/// Loads a feature file, enforcing the uniform-dimension invariant.
pub fn load_features(path: &Path) -> Result<ImageFeatureStore> {
    ImageFeatureStore::load(path)
}
