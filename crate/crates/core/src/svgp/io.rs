//! Binary model files. Layout (all little-endian):
//!
//! ```text
//! magic   5 bytes  "SVGP1"
//! S       u32      number of inducing points
//! dim     u32      input dimension, always 2
//! flags   u32      reserved, 0
//! f64 ×4           log lengthscale, log signal variance, log noise variance, prior mean
//! u64              N (training-set size)
//! f64 ×2S          Z, row-major
//! f64 ×S           variational mean
//! f64 ×S²          variational Cholesky factor, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{InducingSet, SvgpModel, VariationalDistribution};
use crate::error::{Error, Result};
use crate::kernels::KernelParams;

pub const MODEL_MAGIC: &[u8; 5] = b"SVGP1";
const INPUT_DIM: u32 = 2;

pub fn encode_model(model: &SvgpModel) -> Vec<u8> {
    let s = model.num_inducing();
    let mut out = Vec::with_capacity(17 + 8 * (5 + 3 * s + s * s));
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(s as u32).to_le_bytes());
    out.extend_from_slice(&INPUT_DIM.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    put(model.kernel.log_lengthscale);
    put(model.kernel.log_signal_variance);
    put(model.log_noise_variance);
    put(model.mean_offset);
    out.extend_from_slice(&(model.n_total as u64).to_le_bytes());
    for z in &model.inducing.z {
        out.extend_from_slice(&z[0].to_le_bytes());
        out.extend_from_slice(&z[1].to_le_bytes());
    }
    for v in model.variational.mean.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let l = &model.variational.chol_cov;
    for i in 0..s {
        for j in 0..s {
            out.extend_from_slice(&l[(i, j)].to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let bytes = self.buf.get(self.pos..self.pos + N)?;
        self.pos += N;
        bytes.try_into().ok()
    }

    fn u32(&mut self) -> Option<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Option<u64> {
        self.take::<8>().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Option<f64> {
        self.take::<8>().map(f64::from_le_bytes)
    }
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<SvgpModel> {
    let bad = |reason: &str| Error::format("model", path, reason);
    let truncated = || bad("truncated");
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take::<5>().as_ref() != Some(MODEL_MAGIC) {
        return Err(bad("bad magic, expected SVGP1"));
    }
    let s = c.u32().ok_or_else(truncated)? as usize;
    let dim = c.u32().ok_or_else(truncated)?;
    let flags = c.u32().ok_or_else(truncated)?;
    if dim != INPUT_DIM {
        return Err(bad(&format!("unsupported input dimension {dim}")));
    }
    if flags != 0 {
        return Err(bad(&format!("unknown flags {flags:#x}")));
    }
    let expected = 17 + 8 * (5 + 3 * s + s * s);
    if bytes.len() != expected {
        return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let log_lengthscale = c.f64().ok_or_else(truncated)?;
    let log_signal_variance = c.f64().ok_or_else(truncated)?;
    let log_noise_variance = c.f64().ok_or_else(truncated)?;
    let mean_offset = c.f64().ok_or_else(truncated)?;
    let n_total = c.u64().ok_or_else(truncated)? as usize;
    let mut z = Vec::with_capacity(s);
    for _ in 0..s {
        z.push([c.f64().ok_or_else(truncated)?, c.f64().ok_or_else(truncated)?]);
    }
    let mut mean = DVector::zeros(s);
    for v in mean.iter_mut() {
        *v = c.f64().ok_or_else(truncated)?;
    }
    let mut chol = DMatrix::zeros(s, s);
    for i in 0..s {
        for j in 0..s {
            chol[(i, j)] = c.f64().ok_or_else(truncated)?;
        }
    }
    let model = SvgpModel {
        kernel: KernelParams {
            log_lengthscale,
            log_signal_variance,
        },
        inducing: InducingSet::new(z).map_err(|e| bad(&e.to_string()))?,
        variational: VariationalDistribution {
            mean,
            chol_cov: chol,
        },
        log_noise_variance,
        n_total,
        mean_offset,
    };
    model.check().map_err(|e| bad(&e.to_string()))?;
    Ok(model)
}

pub fn write_model(model: &SvgpModel, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<SvgpModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}
