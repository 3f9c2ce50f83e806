//! `.hsfa` model files.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic      8 bytes  "SLOWHSFA"
//! version    u32      1
//! H, W, C    3 × u32  input shape
//! mean       H·W·C × f64
//! n_layers   u32      including the top node
//! per layer:
//!   rf_h, rf_w, stride_r, stride_c, in_h, in_w, in_c   7 × u32
//!   noise_std, clip_bound                              2 × f64
//!   reduce, extract                                    linear SFA blocks
//! linear SFA block:
//!   N, K, M    3 × u32
//!   mean       N × f64
//!   projection K×N × f64 (row-major)
//!   rotation   M×K × f64 (row-major)
//!   delta      M × f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use super::{HsfaLayer, HsfaNetwork, LayerGeometry};
use crate::error::{Error, Result};
use crate::numcore::WhiteningTransform;
use crate::sfa::{LinearSfaTransform, QuadraticSfaNode};

const MAGIC: &[u8; 8] = b"SLOWHSFA";
pub const HSFA_VERSION: u32 = 1;

/// Guards allocation sizes read from untrusted headers.
const MAX_DIM: usize = 1 << 20;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Config(format!("{v} does not fit the format")))?;
    w.write_u32::<LittleEndian>(v)?;
    Ok(())
}

fn get_dim<R: Read>(r: &mut R) -> Result<usize> {
    let v = r.read_u32::<LittleEndian>()? as usize;
    if v > MAX_DIM {
        return Err(Error::Corrupt(format!("implausible dimension {v}")));
    }
    Ok(v)
}

fn put_f64s<'a, W: Write>(w: &mut W, vals: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    for &v in vals {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut v)?;
    Ok(v)
}

fn write_linear<W: Write>(w: &mut W, t: &LinearSfaTransform) -> Result<()> {
    let wt = t.whitening();
    put_u32(w, t.input_dim())?;
    put_u32(w, wt.output_dim())?;
    put_u32(w, t.output_dim())?;
    put_f64s(w, wt.mean().iter())?;
    put_f64s(w, wt.projection().iter())?;
    put_f64s(w, t.rotation().iter())?;
    put_f64s(w, t.delta().iter())
}

fn read_linear<R: Read>(r: &mut R) -> Result<LinearSfaTransform> {
    let (n, k, m) = (get_dim(r)?, get_dim(r)?, get_dim(r)?);
    let mean = Array1::from(get_f64s(r, n)?);
    let proj = Array2::from_shape_vec((k, n), get_f64s(r, k * n)?)
        .map_err(|e| Error::Corrupt(e.to_string()))?;
    let rot = Array2::from_shape_vec((m, k), get_f64s(r, m * k)?)
        .map_err(|e| Error::Corrupt(e.to_string()))?;
    let delta = Array1::from(get_f64s(r, m)?);
    let whitening = WhiteningTransform::from_parts(mean, proj)?;
    LinearSfaTransform::from_parts(whitening, rot, delta)
}

impl HsfaNetwork {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(HSFA_VERSION)?;
        let (h, wd, c) = self.input_shape;
        for d in [h, wd, c] {
            put_u32(w, d)?;
        }
        put_f64s(w, self.mean_image.iter())?;
        put_u32(w, self.layers.len())?;
        for layer in &self.layers {
            let g = &layer.geometry;
            for d in [
                g.rf.0,
                g.rf.1,
                g.stride.0,
                g.stride.1,
                g.in_shape.0,
                g.in_shape.1,
                g.in_shape.2,
            ] {
                put_u32(w, d)?;
            }
            w.write_f64::<LittleEndian>(layer.node.noise_std())?;
            w.write_f64::<LittleEndian>(layer.node.clip_bound())?;
            write_linear(w, layer.node.reduce())?;
            write_linear(w, layer.node.extract())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Corrupt("not an hSFA model (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != HSFA_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: HSFA_VERSION,
            });
        }
        let shape = (get_dim(r)?, get_dim(r)?, get_dim(r)?);
        let mean = Array1::from(get_f64s(r, shape.0 * shape.1 * shape.2)?);
        let n_layers = get_dim(r)?;
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let mut d = [0usize; 7];
            for v in &mut d {
                *v = get_dim(r)?;
            }
            let geometry = LayerGeometry {
                rf: (d[0], d[1]),
                stride: (d[2], d[3]),
                in_shape: (d[4], d[5], d[6]),
            };
            let noise = r.read_f64::<LittleEndian>()?;
            let clip = r.read_f64::<LittleEndian>()?;
            let reduce = read_linear(r)?;
            let extract = read_linear(r)?;
            let node = QuadraticSfaNode::from_parts(reduce, extract, noise, clip)?;
            layers.push(HsfaLayer { geometry, node });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Corrupt("trailing bytes after model".into()));
        }
        HsfaNetwork::from_parts(shape, mean, layers).map_err(|e| match e {
            Error::Corrupt(_) => e,
            other => Error::Corrupt(other.to_string()),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to memory cannot fail");
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}
