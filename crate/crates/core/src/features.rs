//! Multi-scale luminance descriptors and PCA embeddings.
//!
//! Each pyramid level is the previous one blurred with a Gaussian and
//! decimated by 2x2 averaging. A level is split into square cells; every cell
//! carries a descriptor of
//!
//! ```text
//! [mean - mean_offset, std, h0 .. h7]
//! ```
//!
//! where `h*` is a gradient-magnitude weighted orientation histogram (8 bins of
//! 45 degrees) averaged over the cell. Emitted descriptors are L2-normalized;
//! the unnormalized values (with the raw mean) are kept alongside for
//! distance computations that need absolute scale.

use rayon::prelude::*;

use crate::color::Plane;
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, SquareMatrix};
use crate::scalar::{count, cst, Real};

pub const ORIENTATION_BINS: usize = 8;
pub const DESCRIPTOR_DIM: usize = 2 + ORIENTATION_BINS;
pub const MIN_IMAGE_SIDE: usize = 32;
pub const MIN_LEVELS: usize = 3;

/// One pyramid level worth of cell descriptors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureLevel<T> {
    /// Downsampling factor relative to the input (1, 2, 4, ...).
    pub scale: usize,
    pub grid_width: usize,
    pub grid_height: usize,
    pub dim: usize,
    /// Unit-norm descriptors, row-major over cells, `dim` values each.
    pub descriptors: Vec<T>,
    /// Descriptors before centering and normalization.
    pub raw: Vec<T>,
    /// Side of a cell in input pixels.
    pub cell_pixels: usize,
}

impl<T: Real> FeatureLevel<T> {
    pub fn cells(&self) -> usize {
        self.grid_width * self.grid_height
    }

    pub fn descriptor(&self, cell: usize) -> &[T] {
        &self.descriptors[cell * self.dim..(cell + 1) * self.dim]
    }

    pub fn raw_descriptor(&self, cell: usize) -> &[T] {
        &self.raw[cell * self.dim..(cell + 1) * self.dim]
    }
}

/// Levels ordered finest first.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    levels: Vec<FeatureLevel<T>>,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(levels: Vec<FeatureLevel<T>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Empty("feature map needs at least one level"));
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[FeatureLevel<T>] {
        &self.levels
    }

    pub fn coarsest(&self) -> &FeatureLevel<T> {
        self.levels.last().expect("nonempty")
    }

    /// Finest level whose grid fits within `max_side` x `max_side`.
    pub fn level_within(&self, max_side: usize) -> &FeatureLevel<T> {
        self.levels
            .iter()
            .find(|l| l.grid_width <= max_side && l.grid_height <= max_side)
            .unwrap_or_else(|| self.coarsest())
    }
}

/// Anything that can turn a single-channel plane into a feature pyramid.
pub trait FeatureExtractor<T: Real>: Sync {
    fn extract(&self, plane: &Plane<T>) -> Result<FeatureMap<T>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidExtractor {
    pub levels: usize,
    pub blur_sigma: f64,
    pub cell: usize,
    /// Subtracted from the mean component before normalization.
    pub mean_offset: f64,
}

impl Default for PyramidExtractor {
    fn default() -> Self {
        Self {
            levels: MIN_LEVELS,
            blur_sigma: 1.0,
            cell: 4,
            mean_offset: 50.0,
        }
    }
}

impl PyramidExtractor {
    pub fn with_levels(levels: usize) -> Self {
        Self {
            levels,
            ..Self::default()
        }
    }

    /// Extractor for chroma planes (centered at zero).
    pub fn for_chroma(levels: usize) -> Self {
        Self {
            levels,
            mean_offset: 0.0,
            ..Self::default()
        }
    }

    /// Smallest level count (at least `MIN_LEVELS`) whose coarsest grid is
    /// within `max_side` on both axes.
    pub fn levels_for_grid(width: usize, height: usize, cell: usize, max_side: usize) -> usize {
        let mut levels = 1;
        let (mut w, mut h) = (width, height);
        while (w / cell > max_side || h / cell > max_side) && w >= 2 * cell && h >= 2 * cell {
            w /= 2;
            h /= 2;
            levels += 1;
        }
        levels.max(MIN_LEVELS)
    }
}

impl<T: Real> FeatureExtractor<T> for PyramidExtractor {
    fn extract(&self, plane: &Plane<T>) -> Result<FeatureMap<T>> {
        if self.levels < MIN_LEVELS {
            return Err(Error::param(
                "levels",
                format!("need at least {MIN_LEVELS}, got {}", self.levels),
            ));
        }
        if self.cell == 0 {
            return Err(Error::param("cell", "must be positive"));
        }
        let (w, h) = plane.dims();
        let shrink = 1usize << (self.levels - 1);
        if w < MIN_IMAGE_SIDE
            || h < MIN_IMAGE_SIDE
            || w / shrink < self.cell
            || h / shrink < self.cell
        {
            return Err(Error::ImageTooSmall(format!(
                "{w}x{h} cannot hold {} levels of {}-pixel cells",
                self.levels, self.cell
            )));
        }
        let kernel = gaussian_kernel::<T>(self.blur_sigma);
        let mut level_img = plane.clone();
        let mut out = Vec::with_capacity(self.levels);
        for index in 0..self.levels {
            if index > 0 {
                level_img = downsample_with(&level_img, &kernel)?;
            }
            out.push(describe_level(
                &level_img,
                1 << index,
                self.cell,
                cst(self.mean_offset),
            ));
        }
        FeatureMap::new(out)
    }
}

/// Pyramid features with the default extractor settings.
pub fn extract_pyramid<T: Real>(gray: &Plane<T>, n_levels: usize) -> Result<FeatureMap<T>> {
    PyramidExtractor::with_levels(n_levels).extract(gray)
}

pub(crate) fn gaussian_kernel<T: Real>(sigma: f64) -> Vec<T> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| cst(v / total)).collect()
}

/// Separable blur with border clamping.
pub(crate) fn blur<T: Real>(plane: &Plane<T>, kernel: &[T]) -> Plane<T> {
    let (w, h) = plane.dims();
    let r = (kernel.len() / 2) as isize;
    let horizontal: Vec<T> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            (0..w).map(move |x| {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &kv)| plane.get_clamped(x as isize + k as isize - r, y as isize) * kv)
                    .sum::<T>()
            })
        })
        .collect();
    let tmp = Plane::new(w, h, horizontal).expect("same dims");
    let vertical: Vec<T> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let tmp = &tmp;
            (0..w).map(move |x| {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &kv)| tmp.get_clamped(x as isize, y as isize + k as isize - r) * kv)
                    .sum::<T>()
            })
        })
        .collect();
    Plane::new(w, h, vertical).expect("same dims")
}

fn downsample_with<T: Real>(plane: &Plane<T>, kernel: &[T]) -> Result<Plane<T>> {
    let blurred = blur(plane, kernel);
    let (w, h) = (plane.width() / 2, plane.height() / 2);
    if w == 0 || h == 0 {
        return Err(Error::ImageTooSmall(format!(
            "{}x{} cannot be halved",
            plane.width(),
            plane.height()
        )));
    }
    let quarter: T = cst(0.25);
    Plane::from_fn(w, h, |x, y| {
        (blurred.get(2 * x, 2 * y)
            + blurred.get(2 * x + 1, 2 * y)
            + blurred.get(2 * x, 2 * y + 1)
            + blurred.get(2 * x + 1, 2 * y + 1))
            * quarter
    })
}

/// Gaussian blur (sigma 1) followed by 2x2 average decimation.
pub fn gaussian_downsample<T: Real>(plane: &Plane<T>) -> Result<Plane<T>> {
    downsample_with(plane, &gaussian_kernel::<T>(1.0))
}

fn describe_level<T: Real>(
    img: &Plane<T>,
    scale: usize,
    cell: usize,
    mean_offset: T,
) -> FeatureLevel<T> {
    let (w, h) = img.dims();
    let gw = w / cell;
    let gh = h / cell;
    let n = count::<T>(cell * cell);
    let half: T = cst(0.5);
    let sector: T = cst(std::f64::consts::FRAC_PI_4);
    let full_turn: T = cst(std::f64::consts::TAU);

    let raw_cells: Vec<[T; DESCRIPTOR_DIM]> = (0..gw * gh)
        .into_par_iter()
        .map(|c| {
            let (cx, cy) = (c % gw, c / gw);
            let mut sum = T::zero();
            let mut hist = [T::zero(); ORIENTATION_BINS];
            for y in cy * cell..(cy + 1) * cell {
                for x in cx * cell..(cx + 1) * cell {
                    sum = sum + img.get(x, y);
                    let (xi, yi) = (x as isize, y as isize);
                    let dx = (img.get_clamped(xi + 1, yi) - img.get_clamped(xi - 1, yi)) * half;
                    let dy = (img.get_clamped(xi, yi + 1) - img.get_clamped(xi, yi - 1)) * half;
                    let mag = (dx * dx + dy * dy).sqrt();
                    if mag > T::zero() {
                        let mut angle = dy.atan2(dx);
                        if angle < T::zero() {
                            angle = angle + full_turn;
                        }
                        let bin =
                            (angle / sector).floor().to_usize().unwrap_or(0) % ORIENTATION_BINS;
                        hist[bin] = hist[bin] + mag;
                    }
                }
            }
            let mean = sum / n;
            let mut var = T::zero();
            for y in cy * cell..(cy + 1) * cell {
                for x in cx * cell..(cx + 1) * cell {
                    let d = img.get(x, y) - mean;
                    var = var + d * d;
                }
            }
            let mut out = [T::zero(); DESCRIPTOR_DIM];
            out[0] = mean;
            out[1] = (var / n).sqrt();
            for (slot, hv) in out[2..].iter_mut().zip(hist) {
                *slot = hv / n;
            }
            out
        })
        .collect();

    let mut raw = Vec::with_capacity(raw_cells.len() * DESCRIPTOR_DIM);
    let mut descriptors = Vec::with_capacity(raw_cells.len() * DESCRIPTOR_DIM);
    for cell_raw in &raw_cells {
        raw.extend_from_slice(cell_raw);
        let mut centered = *cell_raw;
        centered[0] = centered[0] - mean_offset;
        descriptors.extend(normalize(&centered));
    }
    FeatureLevel {
        scale,
        grid_width: gw,
        grid_height: gh,
        dim: DESCRIPTOR_DIM,
        descriptors,
        raw,
        cell_pixels: cell * scale,
    }
}

/// L2 normalization; a zero vector maps to the first basis vector.
fn normalize<T: Real>(v: &[T]) -> Vec<T> {
    let norm = v.iter().map(|x| *x * *x).sum::<T>().sqrt();
    if norm > T::min_positive_value().sqrt() {
        v.iter().map(|x| *x / norm).collect()
    } else {
        let mut e = vec![T::zero(); v.len()];
        e[0] = T::one();
        e
    }
}

/// The coarsest level's descriptors, concatenated in row-major cell order.
pub fn flatten_embedding<T: Real>(fm: &FeatureMap<T>) -> Vec<T> {
    fm.coarsest().descriptors.clone()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaBasis<T> {
    pub mean: Vec<T>,
    /// `n_components` rows of length `input_dim`, orthonormal.
    pub components: Vec<Vec<T>>,
    /// Fraction of total variance carried by each component, non-increasing.
    pub explained_fraction: Vec<T>,
}

impl<T: Real> PcaBasis<T> {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn project(&self, v: &[T]) -> Result<Vec<T>> {
        pca_project(self, v)
    }

    /// Maps a coefficient vector back into input space.
    pub fn reconstruct(&self, coeffs: &[T]) -> Result<Vec<T>> {
        if coeffs.len() != self.n_components() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} coefficients", self.n_components()),
                actual: format!("{} coefficients", coeffs.len()),
            });
        }
        let mut out = self.mean.clone();
        for (c, comp) in coeffs.iter().zip(&self.components) {
            for (o, x) in out.iter_mut().zip(comp) {
                *o = *o + *c * *x;
            }
        }
        Ok(out)
    }
}

/// Principal components from the eigendecomposition of the sample covariance.
pub fn pca_fit<T: Real>(samples: &[Vec<T>], n_components: usize) -> Result<PcaBasis<T>> {
    if n_components == 0 {
        return Err(Error::param("n_components", "must be positive"));
    }
    if samples.len() < n_components + 1 {
        return Err(Error::TooFewSamples {
            needed: n_components + 1,
            got: samples.len(),
        });
    }
    let dim = samples[0].len();
    if dim == 0 {
        return Err(Error::param("samples", "vectors must be nonempty"));
    }
    if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: format!("dim {dim}"),
            actual: format!("dim {}", bad.len()),
        });
    }
    if n_components > dim {
        return Err(Error::param(
            "n_components",
            format!("{n_components} exceeds input dim {dim}"),
        ));
    }
    let mean = mean_vector(samples);
    let cov = covariance(samples, &mean);
    let total = cov.trace();
    if total <= T::zero() {
        return Err(Error::ZeroVariance);
    }
    let eig = symmetric_eigen(&cov);
    let explained_fraction = eig.values[..n_components]
        .iter()
        .map(|v| v.max(T::zero()) / total)
        .collect();
    let components = eig.vectors.into_iter().take(n_components).collect();
    Ok(PcaBasis {
        mean,
        components,
        explained_fraction,
    })
}

/// `components · (v − mean)`
pub fn pca_project<T: Real>(basis: &PcaBasis<T>, v: &[T]) -> Result<Vec<T>> {
    if v.len() != basis.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: format!("dim {}", basis.input_dim()),
            actual: format!("dim {}", v.len()),
        });
    }
    Ok(basis
        .components
        .iter()
        .map(|comp| {
            comp.iter()
                .zip(v.iter().zip(&basis.mean))
                .map(|(c, (x, m))| *c * (*x - *m))
                .sum()
        })
        .collect())
}

pub(crate) fn mean_vector<T: Real>(samples: &[Vec<T>]) -> Vec<T> {
    let dim = samples[0].len();
    let mut mean = vec![T::zero(); dim];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m = *m + *x;
        }
    }
    let n = count::<T>(samples.len());
    mean.iter_mut().for_each(|m| *m = *m / n);
    mean
}

/// Unbiased sample covariance (`n − 1` denominator).
pub(crate) fn covariance<T: Real>(samples: &[Vec<T>], mean: &[T]) -> SquareMatrix<T> {
    let dim = mean.len();
    let rows: Vec<Vec<T>> = (0..dim)
        .into_par_iter()
        .map(|i| {
            (0..dim)
                .map(|j| {
                    if j < i {
                        return T::zero();
                    }
                    samples
                        .iter()
                        .map(|s| (s[i] - mean[i]) * (s[j] - mean[j]))
                        .sum::<T>()
                })
                .collect()
        })
        .collect();
    let denom = count::<T>(samples.len().saturating_sub(1).max(1));
    let mut cov = SquareMatrix::zeros(dim);
    for i in 0..dim {
        for j in i..dim {
            let v = rows[i][j] / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    cov
}
