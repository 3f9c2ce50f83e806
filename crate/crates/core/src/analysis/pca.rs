//! PCA baseline extractor over whole frames.
//!
//! A 14 400-dimensional image covariance is too large to form, so the leading
//! subspace is found by randomized subspace iteration streamed over the
//! frames, followed by a Rayleigh–Ritz step inside that subspace. Features
//! are plain projections (not whitened) of `pixel / 255 − mean`.
//!
//! `.pca` layout, little-endian: magic "SLOWPCA\0", u32 version, u32 N,
//! u32 k, f64 total variance, N×f64 mean, k×N×f64 components (row-major),
//! k×f64 component variances.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numcore::{eigh, fix_sign, orthonormalize_columns};

const MAGIC: &[u8; 8] = b"SLOWPCA\0";
pub const PCA_VERSION: u32 = 1;

const OVERSAMPLE: usize = 16;
const ITERATIONS: usize = 14;
const CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaExtractor {
    mean: Array1<f64>,
    /// k×N, orthonormal rows, by descending variance.
    components: Array2<f64>,
    /// Variance captured by each component.
    variances: Array1<f64>,
    total_variance: f64,
}

/// Rows `start..end` of the frame stack as centered `[0, 1]` pixels.
fn centered_chunk(
    frames: &[u8],
    n: usize,
    mean: &Array1<f64>,
    start: usize,
    end: usize,
) -> Array2<f64> {
    let mut x = Array2::zeros((end - start, n));
    for (t, mut row) in (start..end).zip(x.rows_mut()) {
        let px = &frames[t * n..(t + 1) * n];
        for ((o, &p), &m) in row.iter_mut().zip(px).zip(mean.iter()) {
            *o = p as f64 / 255.0 - m;
        }
    }
    x
}

/// Fits `k` components on `T` concatenated frames of `n` bytes each.
pub fn fit_pca_extractor(frames: &[u8], n: usize, k: usize, seed: u64) -> Result<PcaExtractor> {
    if n == 0 || frames.len() % n != 0 {
        return Err(Error::DimensionMismatch {
            what: "frame stack size",
            expected: n,
            found: frames.len(),
        });
    }
    let t = frames.len() / n;
    if t <= k {
        return Err(Error::TooFewSamples {
            needed: k + 1,
            found: t,
        });
    }
    if k == 0 || k > n {
        return Err(Error::Config(format!("component count {k} out of range")));
    }

    let mut mean = Array1::<f64>::zeros(n);
    for frame in frames.chunks_exact(n) {
        for (m, &p) in mean.iter_mut().zip(frame) {
            *m += p as f64;
        }
    }
    mean /= 255.0 * t as f64;

    let mut total = 0.0;
    for start in (0..t).step_by(CHUNK) {
        let x = centered_chunk(frames, n, &mean, start, (start + CHUNK).min(t));
        total += x.iter().map(|v| v * v).sum::<f64>();
    }
    total /= t as f64;
    if total <= 0.0 {
        return Err(Error::ConstantData);
    }

    // X^T X Q, streamed over chunks of frames.
    let gram_times = |q: &Array2<f64>| -> Array2<f64> {
        let mut z = Array2::zeros((n, q.ncols()));
        for start in (0..t).step_by(CHUNK) {
            let x = centered_chunk(frames, n, &mean, start, (start + CHUNK).min(t));
            let y = x.dot(q);
            general_mat_mul(1.0, &x.t(), &y, 1.0, &mut z);
        }
        z
    };

    let l = (k + OVERSAMPLE).min(n).min(t);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = Array2::from_shape_simple_fn((n, l), || StandardNormal.sample(&mut rng));
    orthonormalize_columns(&mut q);
    for _ in 0..ITERATIONS {
        q = gram_times(&q);
        orthonormalize_columns(&mut q);
    }

    // Rayleigh–Ritz: eigenproblem of Q^T C Q.
    let cq = gram_times(&q) / t as f64;
    let mut small = q.t().dot(&cq);
    let sym = (&small + &small.t()) * 0.5;
    small.assign(&sym);
    let eig = eigh(small.view())?;
    let mut components = Array2::zeros((k, n));
    let mut variances = Array1::zeros(k);
    for i in 0..k {
        let col = l - 1 - i;
        let mut v = q.dot(&eig.vectors.column(col));
        fix_sign(v.view_mut());
        components.row_mut(i).assign(&v);
        variances[i] = eig.values[col].max(0.0);
    }
    if variances[0] <= 0.0 {
        return Err(Error::ConstantData);
    }
    Ok(PcaExtractor {
        mean,
        components,
        variances,
        total_variance: total,
    })
}

impl PcaExtractor {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn components(&self) -> &Array2<f64> {
        &self.components
    }

    pub fn variances(&self) -> &Array1<f64> {
        &self.variances
    }

    pub fn explained_variance_ratio(&self) -> Array1<f64> {
        &self.variances / self.total_variance
    }

    pub fn cumulative_explained(&self) -> f64 {
        self.variances.sum() / self.total_variance
    }

    pub fn transform(&self, image: &[u8]) -> Result<Array1<f64>> {
        if image.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "image size",
                expected: self.input_dim(),
                found: image.len(),
            });
        }
        let x = Array1::from_iter(
            image
                .iter()
                .zip(self.mean.iter())
                .map(|(&p, &m)| p as f64 / 255.0 - m),
        );
        Ok(self.components.dot(&x))
    }

    pub fn transform_batch(&self, frames: &[u8]) -> Result<Array2<f64>> {
        let n = self.input_dim();
        if frames.len() % n != 0 {
            return Err(Error::DimensionMismatch {
                what: "frame stack size",
                expected: n,
                found: frames.len() % n,
            });
        }
        let t = frames.len() / n;
        let mut out = Array2::zeros((t, self.n_components()));
        for start in (0..t).step_by(CHUNK) {
            let end = (start + CHUNK).min(t);
            let x = centered_chunk(frames, n, &self.mean, start, end);
            out.slice_mut(s![start..end, ..])
                .assign(&x.dot(&self.components.t()));
        }
        Ok(out)
    }

    /// Maps features back to centered pixel space plus the mean.
    pub fn reconstruct(&self, features: ArrayView2<'_, f64>) -> Array2<f64> {
        features.dot(&self.components) + &self.mean.view().insert_axis(Axis(0))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(PCA_VERSION)?;
        w.write_u32::<LittleEndian>(self.input_dim() as u32)?;
        w.write_u32::<LittleEndian>(self.n_components() as u32)?;
        w.write_f64::<LittleEndian>(self.total_variance)?;
        for v in self
            .mean
            .iter()
            .chain(self.components.iter())
            .chain(self.variances.iter())
        {
            w.write_f64::<LittleEndian>(*v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Corrupt("not a PCA model (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != PCA_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: PCA_VERSION,
            });
        }
        let n = r.read_u32::<LittleEndian>()? as usize;
        let k = r.read_u32::<LittleEndian>()? as usize;
        if n > 1 << 24 || k > n {
            return Err(Error::Corrupt(format!("implausible PCA shape {k}x{n}")));
        }
        let total_variance = r.read_f64::<LittleEndian>()?;
        let mut read = |len: usize| -> Result<Vec<f64>> {
            let mut v = vec![0.0; len];
            r.read_f64_into::<LittleEndian>(&mut v)?;
            Ok(v)
        };
        let mean = Array1::from(read(n)?);
        let components = Array2::from_shape_vec((k, n), read(k * n)?)
            .map_err(|e| Error::Corrupt(e.to_string()))?;
        let variances = Array1::from(read(k)?);
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Corrupt("trailing bytes after model".into()));
        }
        Ok(Self {
            mean,
            components,
            variances,
            total_variance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::covariance;
    use rand::Rng;

    /// Frames mixing `r` random basis images with random coefficients.
    fn low_rank_frames(t: usize, n: usize, r: usize, seed: u64) -> Vec<u8> {
        // Small integer basis entries and coefficients keep every pixel an
        // exact byte without clipping.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis: Vec<Vec<i32>> = (0..r)
            .map(|_| (0..n).map(|_| rng.gen_range(-5..=5)).collect())
            .collect();
        let mut out = Vec::with_capacity(t * n);
        for _ in 0..t {
            let c: Vec<i32> = (0..r).map(|_| rng.gen_range(-3..=3)).collect();
            for j in 0..n {
                let v: i32 = 128 + c.iter().zip(&basis).map(|(&a, b)| a * b[j]).sum::<i32>();
                out.push(v as u8);
            }
        }
        out
    }

    #[test]
    fn low_rank_set_is_reconstructed_exactly() {
        let (t, n, r) = (300, 120, 5);
        let frames = low_rank_frames(t, n, r, 3);
        let pca = fit_pca_extractor(&frames, n, 8, 0).unwrap();
        let f = pca.transform_batch(&frames).unwrap();
        let rec = pca.reconstruct(f.view());
        for (i, &p) in frames.iter().enumerate() {
            let v = rec[[i / n, i % n]] * 255.0;
            assert!((v - p as f64).abs() < 1e-6, "pixel {i}: {v} vs {p}");
        }
        assert!((pca.cumulative_explained() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ratios_descend_and_features_decorrelate() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (t, n) = (400, 200);
        let frames: Vec<u8> = (0..t * n)
            .map(|i| {
                let row = i / n;
                let col = i % n;
                let s = ((row as f64 * 0.05).sin() * (col as f64 * 0.1).cos() * 60.0) as i32;
                (128 + s + rng.gen_range(-20..=20)) as u8
            })
            .collect();
        let pca = fit_pca_extractor(&frames, n, 10, 1).unwrap();
        let ratios = pca.explained_variance_ratio();
        for w in ratios.as_slice().unwrap().windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(ratios.sum() <= 1.0 + 1e-12);
        let gram = pca.components().dot(&pca.components().t());
        for i in 0..10 {
            for j in 0..10 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - e).abs() < 1e-10);
            }
        }
        let f = pca.transform_batch(&frames).unwrap();
        let (cov, _) = covariance(f.view(), None).unwrap();
        let scale = cov[[0, 0]];
        for i in 0..10 {
            for j in 0..10 {
                if i != j {
                    assert!(
                        cov[[i, j]].abs() <= 1e-6 * scale,
                        "{i},{j}: {}",
                        cov[[i, j]]
                    );
                }
            }
        }
    }

    #[test]
    fn round_trip_and_errors() {
        let frames = low_rank_frames(60, 50, 3, 5);
        let pca = fit_pca_extractor(&frames, 50, 4, 2).unwrap();
        let mut buf = Vec::new();
        pca.write_to(&mut buf).unwrap();
        assert_eq!(PcaExtractor::read_from(&mut buf.as_slice()).unwrap(), pca);
        assert!(PcaExtractor::read_from(&mut &buf[..buf.len() - 3]).is_err());
        assert!(matches!(
            fit_pca_extractor(&vec![9u8; 500], 50, 4, 0),
            Err(Error::ConstantData)
        ));
        assert!(fit_pca_extractor(&frames[..150], 50, 4, 0).is_err());
    }
}
