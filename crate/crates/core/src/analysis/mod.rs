//! Representation diagnostics: spatial feature maps, heading and location
//! decoding, and the PCA baseline extractor.

mod pca;

use std::f64::consts::{PI, TAU};
use std::io::{self, Write};

use ndarray::{s, Array1, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::numcore::{fit_linear_regression, LinearRegressor};
use crate::worldsim::geometry::{angular_distance, wrap_angle};
use crate::worldsim::{Pose, Vec2};

pub use pca::{fit_pca_extractor, PcaExtractor, PCA_VERSION};

/// Heading interval `[center − width/2, center + width/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadingSection {
    pub center: f64,
    pub width: f64,
}

impl HeadingSection {
    /// Half-open so adjacent sections partition the circle.
    pub fn contains(&self, heading: f64) -> bool {
        wrap_angle(heading - self.center + self.width / 2.0) < self.width
    }
}

/// `n` equal sections, the first centered on heading 0.
pub fn heading_sections(n: usize) -> Vec<HeadingSection> {
    let width = TAU / n as f64;
    (0..n)
        .map(|k| HeadingSection {
            center: k as f64 * width,
            width,
        })
        .collect()
}

/// Values of one feature at the positions where they were observed.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub index: usize,
    pub points: Vec<(f64, f64, f64)>,
    /// Symmetric color range `[-max_abs, max_abs]`.
    pub max_abs: f64,
}

pub fn feature_map(
    poses: &[Pose],
    features: ArrayView2<'_, f64>,
    index: usize,
    section: Option<HeadingSection>,
) -> Result<FeatureMap> {
    if features.nrows() != poses.len() {
        return Err(Error::DimensionMismatch {
            what: "features vs poses",
            expected: poses.len(),
            found: features.nrows(),
        });
    }
    if index >= features.ncols() {
        return Err(Error::DimensionMismatch {
            what: "feature index",
            expected: features.ncols(),
            found: index,
        });
    }
    let mut points = Vec::new();
    let mut max_abs = 0.0f64;
    for (p, v) in poses.iter().zip(features.column(index)) {
        if section.is_some_and(|s| !s.contains(p.heading)) {
            continue;
        }
        if !v.is_finite() {
            return Err(Error::NonFinite("feature value"));
        }
        max_abs = max_abs.max(v.abs());
        points.push((p.x, p.y, *v));
    }
    Ok(FeatureMap {
        index,
        points,
        max_abs,
    })
}

/// Red for positive, white for zero, blue for negative; `t ∈ [-1, 1]`.
pub fn diverging_color(t: f64) -> [u8; 3] {
    let t = t.clamp(-1.0, 1.0);
    let (deep, k) = if t >= 0.0 {
        ([165.0, 0.0, 38.0], t)
    } else {
        ([49.0, 54.0, 149.0], -t)
    };
    let mix = |d: f64| (255.0 + (d - 255.0) * k).round() as u8;
    [mix(deep[0]), mix(deep[1]), mix(deep[2])]
}

const EMPTY_PIXEL: [u8; 3] = [225, 225, 225];

impl FeatureMap {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,y,value")?;
        for (x, y, v) in &self.points {
            writeln!(w, "{x},{y},{v}")?;
        }
        Ok(())
    }

    /// `size × size` RGB raster over `bounds`; each pixel shows the mean of
    /// the points falling into it, north up.
    pub fn rasterize(&self, bounds: (Vec2, Vec2), size: usize) -> Vec<u8> {
        let (lo, hi) = bounds;
        let span = (hi.x - lo.x).max(hi.y - lo.y);
        let mut sum = vec![0.0f64; size * size];
        let mut count = vec![0u32; size * size];
        for &(x, y, v) in &self.points {
            let i = (((x - lo.x) / span * size as f64) as isize).clamp(0, size as isize - 1);
            let j = (((hi.y - y) / span * size as f64) as isize).clamp(0, size as isize - 1);
            let k = j as usize * size + i as usize;
            sum[k] += v;
            count[k] += 1;
        }
        let scale = if self.max_abs > 0.0 {
            self.max_abs
        } else {
            1.0
        };
        let mut out = Vec::with_capacity(size * size * 3);
        for (s, &c) in sum.iter().zip(&count) {
            let px = if c == 0 {
                EMPTY_PIXEL
            } else {
                diverging_color(s / c as f64 / scale)
            };
            out.extend_from_slice(&px);
        }
        out
    }

    pub fn write_ppm<W: Write>(&self, w: W, bounds: (Vec2, Vec2), size: usize) -> io::Result<()> {
        crate::worldsim::write_ppm(w, size, size, &self.rasterize(bounds, size))
    }
}

/// Two regressions onto `sin(φ − π)` and `cos(φ − π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadingModel {
    pub sin_reg: LinearRegressor,
    pub cos_reg: LinearRegressor,
}

impl HeadingModel {
    pub fn fit(features: ArrayView2<'_, f64>, headings: &[f64]) -> Result<Self> {
        let sin = Array1::from_iter(headings.iter().map(|h| (h - PI).sin()));
        let cos = Array1::from_iter(headings.iter().map(|h| (h - PI).cos()));
        Ok(Self {
            sin_reg: fit_linear_regression(features, sin.view())?,
            cos_reg: fit_linear_regression(features, cos.view())?,
        })
    }

    pub fn predict(&self, features: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let s = self.sin_reg.predict(features)?;
        let c = self.cos_reg.predict(features)?;
        Ok(s.iter()
            .zip(c.iter())
            .map(|(&s, &c)| invert(s, c))
            .collect())
    }

    pub fn predict_one(&self, features: ArrayView1<'_, f64>) -> f64 {
        invert(
            self.sin_reg.predict_one(features),
            self.cos_reg.predict_one(features),
        )
    }
}

fn invert(s: f64, c: f64) -> f64 {
    wrap_angle(s.atan2(c) + PI)
}

/// Mean circular distance, in radians.
pub fn mean_circular_error(truth: &[f64], pred: &[f64]) -> f64 {
    assert_eq!(truth.len(), pred.len(), "angle lists differ in length");
    if truth.is_empty() {
        return 0.0;
    }
    truth
        .iter()
        .zip(pred)
        .map(|(&a, &b)| angular_distance(a, b))
        .sum::<f64>()
        / truth.len() as f64
}

#[derive(Debug, Clone)]
pub struct HeadingEvaluation {
    pub model: HeadingModel,
    /// Radians, over the evaluation half.
    pub mean_error: f64,
    pub truth: Vec<f64>,
    pub predicted: Vec<f64>,
}

impl HeadingEvaluation {
    pub fn mean_error_deg(&self) -> f64 {
        self.mean_error.to_degrees()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "phi_true,phi_pred")?;
        for (a, b) in self.truth.iter().zip(&self.predicted) {
            writeln!(w, "{a},{b}")?;
        }
        Ok(())
    }
}

fn split_half(t: usize, dim: usize) -> Result<usize> {
    let half = t / 2;
    if half < dim + 2 || t - half < 1 {
        return Err(Error::TooFewSamples {
            needed: 2 * (dim + 2),
            found: t,
        });
    }
    Ok(half)
}

/// Fits on the first half in time and evaluates on the second half.
pub fn evaluate_heading(
    features: ArrayView2<'_, f64>,
    headings: &[f64],
) -> Result<HeadingEvaluation> {
    if features.nrows() != headings.len() {
        return Err(Error::DimensionMismatch {
            what: "features vs headings",
            expected: headings.len(),
            found: features.nrows(),
        });
    }
    let half = split_half(headings.len(), features.ncols())?;
    let model = HeadingModel::fit(features.slice(s![..half, ..]), &headings[..half])?;
    let predicted = model.predict(features.slice(s![half.., ..]))?;
    let truth = headings[half..].to_vec();
    Ok(HeadingEvaluation {
        mean_error: mean_circular_error(&truth, &predicted),
        model,
        truth,
        predicted,
    })
}

#[derive(Debug, Clone)]
pub struct LocationDecode {
    pub x_reg: LinearRegressor,
    pub y_reg: LinearRegressor,
    /// World units, over the evaluation half.
    pub rmse: f64,
    pub fraction_of_diameter: f64,
}

/// Linear decode of position, fitted on the first half in time and scored on
/// the second.
pub fn location_decode(
    features: ArrayView2<'_, f64>,
    poses: &[Pose],
    diameter: f64,
) -> Result<LocationDecode> {
    if features.nrows() != poses.len() {
        return Err(Error::DimensionMismatch {
            what: "features vs poses",
            expected: poses.len(),
            found: features.nrows(),
        });
    }
    let half = split_half(poses.len(), features.ncols())?;
    let xs = Array1::from_iter(poses.iter().map(|p| p.x));
    let ys = Array1::from_iter(poses.iter().map(|p| p.y));
    let train = features.slice(s![..half, ..]);
    let x_reg = fit_linear_regression(train, xs.slice(s![..half]))?;
    let y_reg = fit_linear_regression(train, ys.slice(s![..half]))?;
    let test = features.slice(s![half.., ..]);
    let px = x_reg.predict(test)?;
    let py = y_reg.predict(test)?;
    let n = poses.len() - half;
    let mut se = 0.0;
    for i in 0..n {
        se += (px[i] - xs[half + i]).powi(2) + (py[i] - ys[half + i]).powi(2);
    }
    let rmse = (se / n as f64).sqrt();
    Ok(LocationDecode {
        x_reg,
        y_reg,
        rmse,
        fraction_of_diameter: rmse / diameter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_poses(n: usize, seed: u64) -> Vec<Pose> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Pose::new(
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(0.0..TAU),
                )
            })
            .collect()
    }

    #[test]
    fn sections_partition_the_circle() {
        let poses = random_poses(5000, 1);
        let secs = heading_sections(6);
        for p in &poses {
            assert_eq!(secs.iter().filter(|s| s.contains(p.heading)).count(), 1);
        }
        let f = Array2::from_shape_fn((5000, 1), |(i, _)| i as f64);
        let total: usize = secs
            .iter()
            .map(|s| {
                feature_map(&poses, f.view(), 0, Some(*s))
                    .unwrap()
                    .points
                    .len()
            })
            .sum();
        assert_eq!(total, 5000);
    }

    #[test]
    fn constant_feature_gives_single_color() {
        let poses = random_poses(300, 2);
        let f = Array2::from_elem((300, 2), 0.7);
        let map = feature_map(&poses, f.view(), 1, None).unwrap();
        let img = map.rasterize((Vec2::new(-3.0, -3.0), Vec2::new(3.0, 3.0)), 50);
        let colors: std::collections::BTreeSet<[u8; 3]> = img
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .filter(|c| *c != EMPTY_PIXEL)
            .collect();
        assert_eq!(colors.len(), 1);
        assert!(feature_map(&poses, f.view(), 2, None).is_err());
    }

    #[test]
    fn sign_feature_splits_half_planes() {
        let poses = random_poses(4000, 3);
        let f = Array2::from_shape_fn((4000, 1), |(i, _)| poses[i].x.signum());
        let map = feature_map(&poses, f.view(), 0, None).unwrap();
        let size = 40;
        let img = map.rasterize((Vec2::new(-3.0, -3.0), Vec2::new(3.0, 3.0)), size);
        for j in 0..size {
            for i in 0..size {
                let px = &img[(j * size + i) * 3..(j * size + i) * 3 + 3];
                if px == EMPTY_PIXEL {
                    continue;
                }
                if i < size / 2 {
                    assert!(px[2] > px[0], "left half should be blue");
                } else {
                    assert!(px[0] > px[2], "right half should be red");
                }
            }
        }
    }

    #[test]
    fn palette_endpoints() {
        assert_eq!(diverging_color(0.0), [255, 255, 255]);
        assert_eq!(diverging_color(1.0), [165, 0, 38]);
        assert_eq!(diverging_color(-2.0), [49, 54, 149]);
    }

    #[test]
    fn heading_from_exact_features() {
        let poses = random_poses(2000, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h: Vec<f64> = poses.iter().map(|p| p.heading).collect();
        let f = Array2::from_shape_fn((2000, 6), |(i, j)| match j {
            0 => (h[i] - PI).sin(),
            1 => (h[i] - PI).cos(),
            _ => rng.gen_range(-1.0..1.0),
        });
        let ev = evaluate_heading(f.view(), &h).unwrap();
        assert!(ev.mean_error_deg() <= 1.0, "{}", ev.mean_error_deg());
    }

    #[test]
    fn heading_from_noise_is_near_ninety_degrees() {
        let poses = random_poses(20_000, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h: Vec<f64> = poses.iter().map(|p| p.heading).collect();
        let f = Array2::from_shape_fn((20_000, 8), |_| rng.gen_range(-1.0..1.0));
        let ev = evaluate_heading(f.view(), &h).unwrap();
        assert!(
            (ev.mean_error_deg() - 90.0).abs() <= 5.0,
            "{}",
            ev.mean_error_deg()
        );
        assert!(ev.truth.iter().all(|&e| (0.0..TAU).contains(&e)));
    }

    #[test]
    fn constant_features_still_report() {
        let poses = random_poses(500, 8);
        let h: Vec<f64> = poses.iter().map(|p| p.heading).collect();
        let f = Array2::from_elem((500, 3), 1.0);
        let ev = evaluate_heading(f.view(), &h).unwrap();
        assert!(ev.mean_error.is_finite());
        assert!(evaluate_heading(f.slice(s![..6, ..]), &h[..6]).is_err());
    }

    #[test]
    fn location_from_position_features() {
        let poses = random_poses(1000, 9);
        let f = Array2::from_shape_fn(
            (1000, 2),
            |(i, j)| if j == 0 { poses[i].x } else { poses[i].y },
        );
        let d = location_decode(f.view(), &poses, 6.0 * 2f64.sqrt()).unwrap();
        assert!(d.rmse < 1e-9);
    }

    #[test]
    fn location_from_noise_is_centroid_distance() {
        let poses = random_poses(20_000, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = Array2::from_shape_fn((20_000, 8), |_| rng.gen_range(-1.0..1.0));
        let d = location_decode(f.view(), &poses, 1.0).unwrap();
        // Uniform on a 6×6 square: E[x²+y²] = 2·36/12 = 6.
        let expected = 6f64.sqrt();
        assert!((d.rmse - expected).abs() < 0.05 * expected, "{}", d.rmse);
    }
}
