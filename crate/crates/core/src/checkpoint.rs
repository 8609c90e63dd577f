//! Binary checkpoint format for trained populations.
//!
//! Layout (all integers little-endian, after the 4-byte magic):
//!
//! ```text
//! "EVNC"                magic
//! u8   version          currently 1
//! u8   flags            bit 0: per-individual mutation strengths present
//! u32  input height     u32 input width
//! u32  layer count      followed by that many u32 layer unit counts
//! u32  population size p
//! p × param_count  f32  genomes in flatten order (weights then biases per layer)
//! p ×              f32  mutation strengths, only when flag bit 0 is set
//! ```

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{ModelError, NetworkSpec, PopulationParams};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"EVNC";
pub const CHECKPOINT_VERSION: u8 = 1;

const FLAG_SIGMA_GENES: u8 = 0b0000_0001;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        found: [u8; 4],
        expected: [u8; 4],
    },
    #[error("{path}: unsupported version {found}, expected {expected}")]
    UnsupportedVersion {
        path: PathBuf,
        found: u8,
        expected: u8,
    },
    #[error("{path}: truncated: expected {expected} more bytes")]
    Truncated { path: PathBuf, expected: usize },
    #[error("{path}: trailing {extra} bytes after payload")]
    TrailingBytes { path: PathBuf, extra: usize },
    #[error("{path}: header describes an invalid network: {source}")]
    InvalidSpec {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Serializes a population (parameters in `f32`, regardless of `F`).
pub fn save_checkpoint<F: Scalar>(
    path: impl AsRef<Path>,
    params: &PopulationParams<F>,
) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let io_err = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };

    let spec = params.spec();
    let p = params.population_size();
    let mut bytes = Vec::with_capacity(32 + p * spec.param_count() * 4);
    bytes.extend_from_slice(&CHECKPOINT_MAGIC);
    bytes.push(CHECKPOINT_VERSION);
    let flags = if params.sigma_genes().is_some() {
        FLAG_SIGMA_GENES
    } else {
        0
    };
    bytes.push(flags);
    bytes.extend_from_slice(&(spec.input_hw().0 as u32).to_le_bytes());
    bytes.extend_from_slice(&(spec.input_hw().1 as u32).to_le_bytes());
    bytes.extend_from_slice(&(spec.num_layers() as u32).to_le_bytes());
    for &units in spec.layer_units() {
        bytes.extend_from_slice(&(units as u32).to_le_bytes());
    }
    bytes.extend_from_slice(&(p as u32).to_le_bytes());
    for k in 0..p {
        for v in params.flatten(k)? {
            bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    if let Some(genes) = params.sigma_genes() {
        for &g in genes {
            bytes.extend_from_slice(&(g.as_f64() as f32).to_le_bytes());
        }
    }

    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(&bytes).map_err(io_err)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.at + n > self.bytes.len() {
            return Err(CheckpointError::Truncated {
                path: self.path.to_path_buf(),
                expected: self.at + n - self.bytes.len(),
            });
        }
        let slice = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Result<f32, CheckpointError> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Loads a population checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<F: Scalar>(
    path: impl AsRef<Path>,
) -> Result<PopulationParams<F>, CheckpointError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;

    let mut r = Reader {
        bytes: &bytes,
        at: 0,
        path,
    };
    let magic = r.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic {
            path: path.to_path_buf(),
            found: [magic[0], magic[1], magic[2], magic[3]],
            expected: CHECKPOINT_MAGIC,
        });
    }
    let version = r.u8()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let flags = r.u8()?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    let mut units = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        units.push(r.u32()? as usize);
    }
    let p = r.u32()? as usize;

    let spec = NetworkSpec::new((h, w), units).map_err(|source| CheckpointError::InvalidSpec {
        path: path.to_path_buf(),
        source,
    })?;
    if p == 0 {
        return Err(CheckpointError::InvalidSpec {
            path: path.to_path_buf(),
            source: ModelError::EmptyPopulation,
        });
    }

    let mut params = PopulationParams::<F>::zeros(spec.clone(), p)?;
    let count = spec.param_count();
    let mut genome = vec![F::zero(); count];
    for k in 0..p {
        for slot in genome.iter_mut() {
            *slot = F::cast(f64::from(r.f32()?));
        }
        params.unflatten_into(k, &genome)?;
    }
    if flags & FLAG_SIGMA_GENES != 0 {
        params.set_uniform_sigma_genes(F::zero());
        for k in 0..p {
            let g = F::cast(f64::from(r.f32()?));
            params.set_sigma_gene(k, g)?;
        }
    }
    if r.at != bytes.len() {
        return Err(CheckpointError::TrailingBytes {
            path: path.to_path_buf(),
            extra: bytes.len() - r.at,
        });
    }
    Ok(params)
}
