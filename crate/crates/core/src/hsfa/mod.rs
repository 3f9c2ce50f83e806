//! Hierarchical SFA: patch-wise quadratic nodes stacked into a network.
//!
//! Every layer scans its input grid with a receptive field and stride and
//! applies one shared node to each patch. For training, each patch position
//! is a separate time series, so temporal differences only ever pair the
//! same position at consecutive steps. The top node sees the whole last grid.
//!
//! Pixels enter as `value / 255` minus the dataset mean image.

mod io;

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::sfa::{
    fit_quadratic_node_stream, NodeFitReport, NodeParams, QuadraticSfaNode, SeriesSource,
    TimeStructure,
};

pub use io::HSFA_VERSION;

/// Receptive field and stride of one layer over an `(H, W, C)` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeometry {
    pub rf: (usize, usize),
    pub stride: (usize, usize),
    pub in_shape: (usize, usize, usize),
}

impl LayerGeometry {
    pub fn new(
        rf: (usize, usize),
        stride: (usize, usize),
        in_shape: (usize, usize, usize),
    ) -> Result<Self> {
        let g = Self {
            rf,
            stride,
            in_shape,
        };
        g.validate()?;
        Ok(g)
    }

    /// One patch covering the whole input.
    pub fn full(in_shape: (usize, usize, usize)) -> Self {
        Self {
            rf: (in_shape.0, in_shape.1),
            stride: (1, 1),
            in_shape,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.in_shape;
        if self.rf.0 == 0 || self.rf.1 == 0 || self.stride.0 == 0 || self.stride.1 == 0 || c == 0 {
            return Err(Error::Geometry(
                "receptive field, stride and channels must be positive".into(),
            ));
        }
        if self.rf.0 > h || self.rf.1 > w {
            return Err(Error::Geometry(format!(
                "receptive field {:?} larger than input {}x{}",
                self.rf, h, w
            )));
        }
        Ok(())
    }

    /// Output grid size `(H', W')`.
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.in_shape.0 - self.rf.0) / self.stride.0 + 1,
            (self.in_shape.1 - self.rf.1) / self.stride.1 + 1,
        )
    }

    pub fn patch_count(&self) -> usize {
        let (a, b) = self.out_hw();
        a * b
    }

    pub fn patch_dim(&self) -> usize {
        self.rf.0 * self.rf.1 * self.in_shape.2
    }

    pub fn in_len(&self) -> usize {
        self.in_shape.0 * self.in_shape.1 * self.in_shape.2
    }

    pub fn out_shape(&self, channels: usize) -> (usize, usize, usize) {
        let (a, b) = self.out_hw();
        (a, b, channels)
    }
}

/// Patch origins `(row, col)` in row-major order.
pub fn patch_grid(geom: &LayerGeometry) -> Result<Vec<(usize, usize)>> {
    geom.validate()?;
    let (oh, ow) = geom.out_hw();
    let mut v = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        for j in 0..ow {
            v.push((i * geom.stride.0, j * geom.stride.1));
        }
    }
    Ok(v)
}

/// Copies the patch at `origin` of one flattened `(H, W, C)` grid into `out`,
/// row-major within the patch with channels fastest.
fn copy_patch<T: Copy>(grid: &[T], geom: &LayerGeometry, origin: (usize, usize), out: &mut [T]) {
    let (_, w, c) = geom.in_shape;
    let run = geom.rf.1 * c;
    for dr in 0..geom.rf.0 {
        let src = ((origin.0 + dr) * w + origin.1) * c;
        out[dr * run..(dr + 1) * run].copy_from_slice(&grid[src..src + run]);
    }
}

/// All patches of `images` (one flattened grid per row). Rows are ordered
/// time-major: row `t·P + p` holds patch `p` of image `t`. The second value
/// is the time index of each row.
pub fn extract_patches(
    images: ArrayView2<'_, f64>,
    geom: &LayerGeometry,
) -> Result<(Array2<f64>, Vec<usize>)> {
    if images.ncols() != geom.in_len() {
        return Err(Error::DimensionMismatch {
            what: "image size",
            expected: geom.in_len(),
            found: images.ncols(),
        });
    }
    let origins = patch_grid(geom)?;
    let (p, d) = (origins.len(), geom.patch_dim());
    let mut out = Array2::zeros((images.nrows() * p, d));
    let mut times = Vec::with_capacity(images.nrows() * p);
    let mut buf = vec![0.0; geom.in_len()];
    for (t, img) in images.rows().into_iter().enumerate() {
        for (b, v) in buf.iter_mut().zip(img.iter()) {
            *b = *v;
        }
        for (k, &o) in origins.iter().enumerate() {
            let mut row = out.row_mut(t * p + k);
            copy_patch(&buf, geom, o, row.as_slice_mut().expect("standard layout"));
            times.push(t);
        }
    }
    Ok((out, times))
}

enum Cells<'a> {
    /// Raw frames; converted to `v / 255 − mean`.
    Pixels {
        bytes: &'a [u8],
        mean: &'a [f64],
    },
    Grid(&'a [f32]),
}

/// One time series per patch position over a stack of grids.
struct PatchSource<'a> {
    cells: Cells<'a>,
    len: usize,
    geom: LayerGeometry,
    origins: Vec<(usize, usize)>,
}

impl<'a> PatchSource<'a> {
    fn new(cells: Cells<'a>, len: usize, geom: LayerGeometry) -> Result<Self> {
        let have = match &cells {
            Cells::Pixels { bytes, .. } => bytes.len(),
            Cells::Grid(g) => g.len(),
        };
        if have != len * geom.in_len() {
            return Err(Error::DimensionMismatch {
                what: "grid stack",
                expected: len * geom.in_len(),
                found: have,
            });
        }
        let origins = patch_grid(&geom)?;
        Ok(Self {
            cells,
            len,
            geom,
            origins,
        })
    }
}

impl SeriesSource for PatchSource<'_> {
    fn dim(&self) -> usize {
        self.geom.patch_dim()
    }

    fn len(&self) -> usize {
        self.len
    }

    fn series_count(&self) -> usize {
        self.origins.len()
    }

    fn series(&self, index: usize) -> Result<Array2<f64>> {
        let origin = self.origins[index];
        let (d, n) = (self.geom.patch_dim(), self.geom.in_len());
        let mut out = Array2::zeros((self.len, d));
        match &self.cells {
            Cells::Pixels { bytes, mean } => {
                let mut px = vec![0u8; d];
                let mut mu = vec![0.0; d];
                copy_patch(mean, &self.geom, origin, &mut mu);
                for (t, mut row) in out.rows_mut().into_iter().enumerate() {
                    copy_patch(&bytes[t * n..(t + 1) * n], &self.geom, origin, &mut px);
                    for ((o, &p), &m) in row.iter_mut().zip(&px).zip(&mu) {
                        *o = p as f64 / 255.0 - m;
                    }
                }
            }
            Cells::Grid(grid) => {
                let mut buf = vec![0f32; d];
                for (t, mut row) in out.rows_mut().into_iter().enumerate() {
                    copy_patch(&grid[t * n..(t + 1) * n], &self.geom, origin, &mut buf);
                    for (o, &v) in row.iter_mut().zip(&buf) {
                        *o = v as f64;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Geometry and node parameters of one patch layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub rf: (usize, usize),
    pub stride: (usize, usize),
    pub node: NodeParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub top: NodeParams,
}

/// Reduction dim of the standard network's top node.
pub const TOP_MID_DIM: usize = 16;

impl NetworkConfig {
    /// Two patch layers, rf (10,10)/stride (5,5) then rf (3,3)/stride (2,3),
    /// and a fully connected top node; 32 output channels everywhere.
    /// The top node reduces to 16 dims before expanding: it sees one sample
    /// per frame, and a 560-dim expansion overfits desk-sized datasets.
    pub fn standard(seed: u64) -> Self {
        let node = |k: u64| NodeParams {
            seed: seed.wrapping_add(k),
            ..NodeParams::default()
        };
        Self {
            input_shape: (60, 80, 3),
            layers: vec![
                LayerSpec {
                    rf: (10, 10),
                    stride: (5, 5),
                    node: node(0),
                },
                LayerSpec {
                    rf: (3, 3),
                    stride: (2, 3),
                    node: node(1),
                },
            ],
            top: NodeParams {
                mid_dim: TOP_MID_DIM,
                ..node(2)
            },
        }
    }

    /// Layer geometries including the top, with output shapes.
    pub fn geometries(&self) -> Result<Vec<(LayerGeometry, (usize, usize, usize))>> {
        let mut shape = self.input_shape;
        let mut out = Vec::new();
        for spec in &self.layers {
            let g = LayerGeometry::new(spec.rf, spec.stride, shape)?;
            shape = g.out_shape(spec.node.out_dim);
            out.push((g, shape));
        }
        let g = LayerGeometry::full(shape);
        out.push((g, g.out_shape(self.top.out_dim)));
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HsfaLayer {
    pub geometry: LayerGeometry,
    pub node: QuadraticSfaNode,
}

impl HsfaLayer {
    pub fn out_shape(&self) -> (usize, usize, usize) {
        self.geometry.out_shape(self.node.output_dim())
    }
}

/// Fitted network. The last entry of the layer list is the fully connected
/// top node (its receptive field covers the whole grid).
#[derive(Debug, Clone, PartialEq)]
pub struct HsfaNetwork {
    input_shape: (usize, usize, usize),
    /// Mean of `pixel / 255` over the training frames.
    mean_image: Array1<f64>,
    layers: Vec<HsfaLayer>,
}

#[derive(Debug, Clone)]
pub struct NetworkFitReport {
    pub layers: Vec<NodeFitReport>,
    pub shapes: Vec<(usize, usize, usize)>,
}

impl HsfaNetwork {
    pub fn from_parts(
        input_shape: (usize, usize, usize),
        mean_image: Array1<f64>,
        layers: Vec<HsfaLayer>,
    ) -> Result<Self> {
        let n = input_shape.0 * input_shape.1 * input_shape.2;
        if mean_image.len() != n {
            return Err(Error::DimensionMismatch {
                what: "mean image",
                expected: n,
                found: mean_image.len(),
            });
        }
        if layers.is_empty() {
            return Err(Error::Geometry("network needs at least one layer".into()));
        }
        let mut shape = input_shape;
        for (i, layer) in layers.iter().enumerate() {
            layer.geometry.validate()?;
            if layer.geometry.in_shape != shape {
                return Err(Error::Geometry(format!(
                    "layer {i} expects input {:?}, previous layer gives {:?}",
                    layer.geometry.in_shape, shape
                )));
            }
            if layer.node.input_dim() != layer.geometry.patch_dim() {
                return Err(Error::DimensionMismatch {
                    what: "node input vs patch size",
                    expected: layer.geometry.patch_dim(),
                    found: layer.node.input_dim(),
                });
            }
            shape = layer.out_shape();
        }
        if shape.0 != 1 || shape.1 != 1 {
            return Err(Error::Geometry(format!(
                "top layer must reduce to a single position, got {shape:?}"
            )));
        }
        Ok(Self {
            input_shape,
            mean_image,
            layers,
        })
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.mean_image.len()
    }

    pub fn mean_image(&self) -> &Array1<f64> {
        &self.mean_image
    }

    /// All layers, top node last.
    pub fn layers(&self) -> &[HsfaLayer] {
        &self.layers
    }

    pub fn top(&self) -> &HsfaLayer {
        self.layers.last().expect("non-empty")
    }

    pub fn feature_dim(&self) -> usize {
        self.top().node.output_dim()
    }

    /// Output shape of every layer.
    pub fn shapes(&self) -> Vec<(usize, usize, usize)> {
        self.layers.iter().map(HsfaLayer::out_shape).collect()
    }

    /// Features of one image (`H·W·C` bytes).
    pub fn transform(&self, image: &[u8]) -> Result<Array1<f64>> {
        if image.len() != self.input_len() {
            return Err(Error::DimensionMismatch {
                what: "image size",
                expected: self.input_len(),
                found: image.len(),
            });
        }
        let pixels: Vec<f64> = image.iter().map(|&p| p as f64 / 255.0).collect();
        self.transform_pixels(&pixels)
    }

    /// Features of one image given as `[0, 1]`-scaled intensities.
    pub fn transform_pixels(&self, pixels: &[f64]) -> Result<Array1<f64>> {
        if pixels.len() != self.input_len() {
            return Err(Error::DimensionMismatch {
                what: "image size",
                expected: self.input_len(),
                found: pixels.len(),
            });
        }
        let mut grid: Vec<f64> = pixels
            .iter()
            .zip(self.mean_image.iter())
            .map(|(&p, &m)| p - m)
            .collect();
        for (i, layer) in self.layers.iter().enumerate() {
            let g = &layer.geometry;
            let origins = patch_grid(g)?;
            let mut patches = Array2::zeros((origins.len(), g.patch_dim()));
            for (k, &o) in origins.iter().enumerate() {
                let mut row = patches.row_mut(k);
                copy_patch(&grid, g, o, row.as_slice_mut().expect("standard layout"));
            }
            let y = layer.node.apply(patches.view())?;
            if i + 1 == self.layers.len() {
                return Ok(y.into_iter().collect());
            }
            // Intermediate grids are kept in single precision, as in training.
            grid = y.into_iter().map(|v| v as f32 as f64).collect();
        }
        Ok(Array1::from(grid))
    }

    /// Features of `T` concatenated images, one row per image.
    pub fn transform_batch(&self, frames: &[u8]) -> Result<Array2<f64>> {
        let n = self.input_len();
        if frames.len() % n != 0 {
            return Err(Error::DimensionMismatch {
                what: "frame stack size",
                expected: n,
                found: frames.len() % n,
            });
        }
        let t = frames.len() / n;
        let mut grid: Option<Vec<f32>> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let cells = match &grid {
                None => Cells::Pixels {
                    bytes: frames,
                    mean: self.mean_image.as_slice().expect("contiguous"),
                },
                Some(g) => Cells::Grid(g),
            };
            let source = PatchSource::new(cells, t, layer.geometry)?;
            if i + 1 == self.layers.len() {
                let x = source.series(0)?;
                return layer.node.apply(x.view());
            }
            grid = Some(layer_outputs(&source, &layer.node)?);
        }
        unreachable!("the last layer returns")
    }
}

/// Applies `node` at every position; returns the stacked output grids.
fn layer_outputs(source: &PatchSource<'_>, node: &QuadraticSfaNode) -> Result<Vec<f32>> {
    let p = source.series_count();
    let c = node.output_dim();
    let t = source.len();
    let mut out = vec![0f32; t * p * c];
    for k in 0..p {
        let y = node.apply(source.series(k)?.view())?;
        for (ti, row) in y.rows().into_iter().enumerate() {
            let dst = &mut out[(ti * p + k) * c..(ti * p + k + 1) * c];
            for (d, v) in dst.iter_mut().zip(row.iter()) {
                *d = *v as f32;
            }
        }
    }
    Ok(out)
}

/// Trains the network layer by layer on `T` concatenated frames. Each layer
/// is fitted on the clipped outputs of the one below.
pub fn fit_network(
    frames: &[u8],
    config: &NetworkConfig,
    timing: TimeStructure<'_>,
) -> Result<(HsfaNetwork, NetworkFitReport)> {
    let (h, w, c) = config.input_shape;
    let n = h * w * c;
    if frames.is_empty() || frames.len() % n != 0 {
        return Err(Error::DimensionMismatch {
            what: "frame stack size",
            expected: n,
            found: frames.len(),
        });
    }
    let t = frames.len() / n;
    if t < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            found: t,
        });
    }

    let mut mean = vec![0.0f64; n];
    for frame in frames.chunks_exact(n) {
        for (m, &p) in mean.iter_mut().zip(frame) {
            *m += p as f64;
        }
    }
    for m in &mut mean {
        *m /= 255.0 * t as f64;
    }

    let geoms = config.geometries()?;
    let params: Vec<NodeParams> = config
        .layers
        .iter()
        .map(|l| l.node)
        .chain(std::iter::once(config.top))
        .collect();

    let mut layers = Vec::with_capacity(geoms.len());
    let mut reports = Vec::with_capacity(geoms.len());
    let mut grid: Option<Vec<f32>> = None;
    for (i, ((geom, _), p)) in geoms.iter().zip(&params).enumerate() {
        let cells = match &grid {
            None => Cells::Pixels {
                bytes: frames,
                mean: &mean,
            },
            Some(g) => Cells::Grid(g),
        };
        let source = PatchSource::new(cells, t, *geom)?;
        let (node, report) = fit_quadratic_node_stream(&source, *p, timing)?;
        if i + 1 < geoms.len() {
            let next = layer_outputs(&source, &node)?;
            grid = Some(next);
        }
        layers.push(HsfaLayer {
            geometry: *geom,
            node,
        });
        reports.push(report);
    }
    let net = HsfaNetwork::from_parts(config.input_shape, Array1::from(mean), layers)?;
    let shapes = net.shapes();
    Ok((
        net,
        NetworkFitReport {
            layers: reports,
            shapes,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_counts() {
        let g = LayerGeometry::new((10, 10), (5, 5), (60, 80, 3)).unwrap();
        assert_eq!(g.out_hw(), (11, 15));
        assert_eq!(patch_grid(&g).unwrap().len(), 165);
        assert_eq!(g.patch_dim(), 300);
        let g = LayerGeometry::new((3, 3), (2, 3), (11, 15, 32)).unwrap();
        assert_eq!(g.out_hw(), (5, 5));
        assert_eq!(g.patch_dim(), 288);
        let g = LayerGeometry::new((4, 6), (3, 7), (4, 6, 2)).unwrap();
        assert_eq!(patch_grid(&g).unwrap(), vec![(0, 0)]);
        assert!(LayerGeometry::new((5, 5), (1, 1), (4, 8, 1)).is_err());
    }

    #[test]
    fn standard_shape_chain() {
        let shapes: Vec<_> = NetworkConfig::standard(0)
            .geometries()
            .unwrap()
            .into_iter()
            .map(|(_, s)| s)
            .collect();
        assert_eq!(shapes, vec![(11, 15, 32), (5, 5, 32), (1, 1, 32)]);
    }

    #[test]
    fn patch_rows_follow_pixel_offsets() {
        let geom = LayerGeometry::new((10, 10), (5, 5), (60, 80, 3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let imgs = Array2::from_shape_fn((2, 14400), |_| rng.gen_range(0.0..1.0));
        let (rows, times) = extract_patches(imgs.view(), &geom).unwrap();
        assert_eq!(rows.nrows(), 330);
        assert_eq!(times[164], 0);
        assert_eq!(times[165], 1);
        // patch 16 = grid (1, 1), origin (5, 5); entry (dr=2, dc=3, ch=1)
        let k = (2 * 10 + 3) * 3 + 1;
        let src = ((5 + 2) * 80 + (5 + 3)) * 3 + 1;
        assert_eq!(rows[[16, k]], imgs[[0, src]]);
        assert_eq!(rows[[165 + 16, k]], imgs[[1, src]]);
        // Same-position pairs across the two images: 165.
        let pairs = (0..165).filter(|&p| times[p] + 1 == times[165 + p]).count();
        assert_eq!(pairs, 165);
    }

    #[test]
    fn uniform_images_give_identical_rows() {
        let geom = LayerGeometry::new((10, 10), (5, 5), (60, 80, 3)).unwrap();
        let imgs = Array2::from_elem((3, 14400), 0.5);
        let (rows, _) = extract_patches(imgs.view(), &geom).unwrap();
        assert!(rows.iter().all(|&v| v == 0.5));
        assert!(extract_patches(Array2::zeros((1, 10)).view(), &geom).is_err());
    }
}
