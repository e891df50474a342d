//! Little-endian parameter file.
//!
//! Layout: magic, `u32` version, `u32` embed dim, `u32` layer count, one
//! `(u32 fan_in, u32 fan_out)` pair per layer, `u32` flags, three mask bytes
//! plus one pad byte, `u64` seed, `f64` ridge lambda, three `f64` logits, then
//! each layer's `W` (row-major) and `b` as `f64`. A SHA-256 of everything
//! before it closes the file.

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use super::{Architecture, DenseLayer, FusionModelParams, RidgeScope};
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: &[u8; 8] = b"NSFUSION";
pub const PARAMS_VERSION: u32 = 1;

const FLAG_L2: u32 = 1;
const FLAG_RIDGE_ALL: u32 = 2;
const MAX_WIDTH: u32 = 1 << 16;

pub fn save_params(params: &FusionModelParams) -> Result<Vec<u8>> {
    params.validate()?;
    let mut out = Vec::with_capacity(64 + 8 * params.parameter_count());
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.embed_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for l in &params.layers {
        let (i, o) = l.w.dim();
        out.extend_from_slice(&(i as u32).to_le_bytes());
        out.extend_from_slice(&(o as u32).to_le_bytes());
    }
    let mut flags = 0;
    if params.l2_normalize {
        flags |= FLAG_L2;
    }
    if params.ridge_scope == RidgeScope::AllLayers {
        flags |= FLAG_RIDGE_ALL;
    }
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend(params.modality_mask.map(u8::from));
    out.push(0);
    out.extend_from_slice(&params.seed.to_le_bytes());
    out.extend_from_slice(&params.ridge_lambda.to_le_bytes());
    for s in params.slices() {
        for v in s {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("parameter file truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn load_params(bytes: &[u8]) -> Result<FusionModelParams> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(PARAMS_MAGIC.len())? != PARAMS_MAGIC {
        return Err(Error::Format("not a fusion parameter file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != PARAMS_VERSION {
        return Err(Error::Version {
            expected: PARAMS_VERSION,
            found: version,
        });
    }
    if bytes.len() < 32 {
        return Err(Error::Format("parameter file truncated".into()));
    }
    let body_len = bytes.len() - 32;
    if Sha256::digest(&bytes[..body_len]).as_slice() != &bytes[body_len..] {
        return Err(Error::Format("parameter file digest mismatch (corrupt or truncated)".into()));
    }
    r.buf = &bytes[..body_len];

    let embed_dim = r.u32()?;
    let n_layers = r.u32()?;
    if !(1..=64).contains(&n_layers) {
        return Err(Error::Format(format!("implausible layer count {n_layers}")));
    }
    let mut shapes = Vec::with_capacity(n_layers as usize);
    for _ in 0..n_layers {
        let (i, o) = (r.u32()?, r.u32()?);
        if i == 0 || o == 0 || i > MAX_WIDTH || o > MAX_WIDTH {
            return Err(Error::Format(format!("implausible layer shape {i}x{o}")));
        }
        shapes.push((i as usize, o as usize));
    }
    let arch = Architecture {
        embed_dim: embed_dim as usize,
        hidden: shapes[..shapes.len() - 1].iter().map(|s| s.1).collect(),
    };
    if arch.layer_shapes() != shapes {
        return Err(Error::Format(format!("inconsistent layer shapes {shapes:?}")));
    }
    let flags = r.u32()?;
    let mask_bytes = r.take(4)?;
    let modality_mask = [mask_bytes[0] != 0, mask_bytes[1] != 0, mask_bytes[2] != 0];
    let seed = r.u64()?;
    let ridge_lambda = r.f64()?;
    let logits = r.f64s(3)?;
    let mut layers = Vec::with_capacity(shapes.len());
    for (i, o) in shapes {
        let w = Array2::from_shape_vec((i, o), r.f64s(i * o)?).map_err(|e| Error::Format(e.to_string()))?;
        let b = Array1::from(r.f64s(o)?);
        layers.push(DenseLayer { w, b });
    }
    if r.pos != r.buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes in parameter file",
            r.buf.len() - r.pos
        )));
    }
    let params = FusionModelParams {
        weight_logits: [logits[0], logits[1], logits[2]],
        modality_mask,
        layers,
        ridge_lambda,
        ridge_scope: if flags & FLAG_RIDGE_ALL != 0 {
            RidgeScope::AllLayers
        } else {
            RidgeScope::OutputLayer
        },
        l2_normalize: flags & FLAG_L2 != 0,
        seed,
        embed_dim: embed_dim as usize,
    };
    params
        .validate()
        .map_err(|e| Error::Format(format!("invalid parameters: {e}")))?;
    Ok(params)
}
