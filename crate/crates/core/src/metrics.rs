//! Temporal consistency and image quality metrics.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::{
    channel_histogram, rgb_to_lab, Channel, ChannelHistogram, LabImage, Plane, RgbImage,
};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{
    covariance, mean_vector, FeatureExtractor, FeatureMap, PyramidExtractor, MIN_LEVELS,
};
use crate::flow::{estimate_flow, occlusion_mask, warp_chroma};
use crate::linalg::{clamped_roots, psd_sqrt, symmetric_eigen};
use crate::propagation::VideoSequence;
use crate::scalar::{count, cst, to_f64, Real};

/// Eigenvalue tolerance for the covariance square roots, relative to the largest eigenvalue.
pub const FRECHET_TOL: f64 = 1e-8;

fn kl_to_mixture<T: Real>(p: T, m: T) -> T {
    if p > T::zero() {
        p * (p / m).log2()
    } else {
        T::zero()
    }
}

/// Jensen-Shannon divergence in bits.
pub fn js_divergence<T: Real>(p: &ChannelHistogram<T>, q: &ChannelHistogram<T>) -> Result<T> {
    if p.bins() != q.bins() {
        return Err(Error::param(
            "bins",
            format!("histograms have {} and {} bins", p.bins(), q.bins()),
        ));
    }
    let half: T = cst(0.5);
    let (mut kp, mut kq) = (T::zero(), T::zero());
    for (&a, &b) in p.mass().iter().zip(q.mass()) {
        let m = (a + b) * half;
        kp = kp + kl_to_mixture(a, m);
        kq = kq + kl_to_mixture(b, m);
    }
    Ok((half * kp + half * kq).max(T::zero()).min(T::one()))
}

fn histograms(
    video: &VideoSequence<RgbImage>,
    bins: usize,
) -> Result<Vec<[ChannelHistogram<f64>; 3]>> {
    video
        .frames()
        .par_iter()
        .map(|f| {
            Ok([
                channel_histogram(f, Channel::R, bins)?,
                channel_histogram(f, Channel::G, bins)?,
                channel_histogram(f, Channel::B, bins)?,
            ])
        })
        .collect()
}

fn pair_divergence(a: &[ChannelHistogram<f64>; 3], b: &[ChannelHistogram<f64>; 3]) -> Result<f64> {
    let mut s = 0.0;
    for (p, q) in a.iter().zip(b) {
        s += js_divergence(p, q)?;
    }
    Ok(s / 3.0)
}

fn check_strides(len: usize, strides: &[usize]) -> Result<()> {
    if strides.is_empty() || strides.contains(&0) {
        return Err(Error::param(
            "strides",
            "need a nonempty set of positive strides",
        ));
    }
    let max = *strides.iter().max().expect("nonempty");
    if len < max + 1 {
        return Err(Error::TooFewSamples {
            needed: max + 1,
            got: len,
        });
    }
    Ok(())
}

/// Channel-averaged divergence of every pair `(i, i + stride)`.
pub fn cdc_pairs(video: &VideoSequence<RgbImage>, bins: usize, stride: usize) -> Result<Vec<f64>> {
    check_strides(video.len(), &[stride])?;
    let h = histograms(video, bins)?;
    (0..video.len() - stride)
        .map(|i| pair_divergence(&h[i], &h[i + stride]))
        .collect()
}

/// Color distribution consistency: JSD of RGB histograms between frames
/// `stride` apart, averaged over channels, pairs, then strides.
pub fn cdc(video: &VideoSequence<RgbImage>, bins: usize, strides: &[usize]) -> Result<f64> {
    check_strides(video.len(), strides)?;
    let h = histograms(video, bins)?;
    let mut total = 0.0;
    for &t in strides {
        let pairs = (0..video.len() - t)
            .map(|i| pair_divergence(&h[i], &h[i + t]))
            .collect::<Result<Vec<_>>>()?;
        total += pairs.iter().sum::<f64>() / pairs.len() as f64;
    }
    Ok(total / strides.len() as f64)
}

/// Mean chroma error between each frame and the flow-warped previous frame,
/// over pixels that pass the forward-backward check (all pixels if none do).
pub fn warp_error_pairs<T: Real>(
    video: &VideoSequence<LabImage<T>>,
    cfg: &PipelineConfig,
) -> Result<Vec<T>> {
    if video.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: video.len(),
        });
    }
    let frames = video.frames();
    (1..frames.len())
        .into_par_iter()
        .map(|n| {
            let (prev, next) = (&frames[n - 1], &frames[n]);
            let fwd = estimate_flow(next.l(), prev.l(), cfg.search_radius, cfg.flow_levels)?;
            let bwd = estimate_flow(prev.l(), next.l(), cfg.search_radius, cfg.flow_levels)?;
            let mask = occlusion_mask(&fwd, &bwd, cst(cfg.occlusion_tol))?;
            let moved = warp_chroma(prev.chroma(), &fwd)?;
            let all = mask.count() == mask.occluded.len();
            let (mut s, mut k) = (T::zero(), 0usize);
            for i in 0..mask.occluded.len() {
                if all || !mask.occluded[i] {
                    let da = moved.a.data()[i] - next.a().data()[i];
                    let db = moved.b.data()[i] - next.b().data()[i];
                    s = s + (da.abs() + db.abs()) * cst(0.5);
                    k += 1;
                }
            }
            Ok(s / count(k))
        })
        .collect()
}

pub fn warp_error<T: Real>(video: &VideoSequence<LabImage<T>>, cfg: &PipelineConfig) -> Result<T> {
    let pairs = warp_error_pairs(video, cfg)?;
    Ok(pairs.iter().copied().sum::<T>() / count(pairs.len()))
}

/// L, a and b pyramids with `MIN_LEVELS` levels.
fn lab_pyramids<T: Real>(img: &LabImage<T>) -> Result<[FeatureMap<T>; 3]> {
    Ok([
        PyramidExtractor::with_levels(MIN_LEVELS).extract(img.l())?,
        PyramidExtractor::for_chroma(MIN_LEVELS).extract(img.a())?,
        PyramidExtractor::for_chroma(MIN_LEVELS).extract(img.b())?,
    ])
}

/// Weighted sum over the three coarsest pyramid levels of the mean squared
/// difference of raw (unnormalized) L, a, b descriptors. `weights` run from
/// the finest of those levels to the coarsest.
pub fn perceptual_distance<T: Real>(
    a: &LabImage<T>,
    b: &LabImage<T>,
    weights: [f64; 3],
) -> Result<T> {
    if a.dims() != b.dims() {
        return Err(Error::dims(a.dims(), b.dims()));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::param("weights", "must be positive"));
    }
    let (pa, pb) = (lab_pyramids(a)?, lab_pyramids(b)?);
    let mut total = T::zero();
    let n_levels = pa[0].levels().len();
    for (slot, w) in weights.iter().enumerate() {
        let level = n_levels - 3 + slot;
        let (mut s, mut n) = (T::zero(), 0usize);
        for (fa, fb) in pa.iter().zip(&pb) {
            for (x, y) in fa.levels()[level].raw.iter().zip(&fb.levels()[level].raw) {
                s = s + (*x - *y) * (*x - *y);
                n += 1;
            }
        }
        total = total + cst::<T>(*w) * s / count(n);
    }
    Ok(total)
}

/// Fréchet distance between Gaussians fitted to two sample sets.
pub fn frechet_distance<T: Real>(feats_a: &[Vec<T>], feats_b: &[Vec<T>]) -> Result<T> {
    let dim = feats_a.first().map(|v| v.len()).unwrap_or(0);
    if dim == 0 {
        return Err(Error::Empty("feature set"));
    }
    for set in [feats_a, feats_b] {
        if set.len() < dim + 1 {
            return Err(Error::TooFewSamples {
                needed: dim + 1,
                got: set.len(),
            });
        }
        if let Some(v) = set.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: format!("dim {dim}"),
                actual: format!("dim {}", v.len()),
            });
        }
    }
    let (ma, mb) = (mean_vector(feats_a), mean_vector(feats_b));
    let (ca, cb) = (covariance(feats_a, &ma), covariance(feats_b, &mb));
    let tol: T = cst(FRECHET_TOL);
    let sa = psd_sqrt(&ca, tol)?;
    let inner = sa.matmul(&cb).matmul(&sa).symmetrized();
    let cross: T = clamped_roots(&symmetric_eigen(&inner).values, tol)?
        .into_iter()
        .sum();
    let dmu: T = ma.iter().zip(&mb).map(|(x, y)| (*x - *y) * (*x - *y)).sum();
    let d = dmu + ca.trace() + cb.trace() - cst::<T>(2.0) * cross;
    Ok(d.max(T::zero()))
}

/// Per-cell samples for the Fréchet distance: raw coarsest-level L, a and b
/// descriptors concatenated, over every frame.
pub fn frechet_samples<T: Real>(video: &VideoSequence<LabImage<T>>) -> Result<Vec<Vec<T>>> {
    let per_frame = video
        .frames()
        .par_iter()
        .map(|f| {
            let p = lab_pyramids(f)?;
            let levels: Vec<_> = p.iter().map(|m| m.coarsest()).collect();
            Ok((0..levels[0].cells())
                .map(|c| {
                    levels
                        .iter()
                        .flat_map(|l| l.raw_descriptor(c).iter().copied())
                        .collect()
                })
                .collect::<Vec<Vec<T>>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_frame.into_iter().flatten().collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerFrame {
    /// Divergence of each pair at the smallest stride.
    pub cdc: Vec<f64>,
    /// Warp error of each consecutive pair.
    pub warp_error: Vec<f64>,
}

/// Evaluation summary; metrics that cannot be computed are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cdc: Option<f64>,
    pub warp_error: Option<f64>,
    pub perceptual: Option<f64>,
    /// Fréchet distance over pyramid features.
    pub frechet: Option<f64>,
    pub chroma_l1: Option<f64>,
    pub combined: f64,
    pub per_frame: PerFrame,
    pub config: BTreeMap<String, String>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Fills every applicable metric. Ground-truth metrics stay `None` without
/// ground truth; temporal metrics stay `None` for videos too short for them.
pub fn evaluate_report(
    output: &VideoSequence<RgbImage>,
    ground_truth: Option<&VideoSequence<RgbImage>>,
    cfg: &PipelineConfig,
) -> Result<MetricsReport> {
    cfg.validate()?;
    if let Some(gt) = ground_truth {
        if gt.len() != output.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} frames", output.len()),
                actual: format!("{} frames", gt.len()),
            });
        }
        if gt.dims() != output.dims() {
            return Err(Error::dims(output.dims(), gt.dims()));
        }
    }
    let lab = output.map(rgb_to_lab::<f64>)?;
    let mut report = MetricsReport {
        config: cfg.snapshot(),
        ..MetricsReport::default()
    };
    let min_stride = *cfg.cdc_strides.iter().min().expect("validated");
    if output.len() > *cfg.cdc_strides.iter().max().expect("validated") {
        report.cdc = Some(cdc(output, cfg.histogram_bins, &cfg.cdc_strides)?);
        report.per_frame.cdc = cdc_pairs(output, cfg.histogram_bins, min_stride)?;
    }
    if output.len() >= 2 {
        report.per_frame.warp_error = warp_error_pairs(&lab, cfg)?;
        let w = &report.per_frame.warp_error;
        report.warp_error = Some(w.iter().sum::<f64>() / w.len() as f64);
    }
    if let Some(gt) = ground_truth {
        let gt_lab = gt.map(rgb_to_lab::<f64>)?;
        let pairs: Vec<(f64, f64)> = lab
            .frames()
            .par_iter()
            .zip(gt_lab.frames())
            .map(|(o, g)| {
                Ok((
                    perceptual_distance(o, g, cfg.perceptual_weights)?,
                    o.chroma().mean_abs_diff(g.chroma())?,
                ))
            })
            .collect::<Result<_>>()?;
        let n = pairs.len() as f64;
        report.perceptual = Some(pairs.iter().map(|p| p.0).sum::<f64>() / n);
        report.chroma_l1 = Some(pairs.iter().map(|p| p.1).sum::<f64>() / n);
        report.frechet = match frechet_distance(&frechet_samples(&lab)?, &frechet_samples(&gt_lab)?)
        {
            Ok(d) => Some(d),
            Err(Error::TooFewSamples { .. }) => None,
            Err(e) => return Err(e),
        };
    }
    report.combined = combined_score(&report, cfg);
    Ok(report)
}

/// `Σ λ · metric` over the metrics present in `report`.
pub fn combined_score(report: &MetricsReport, cfg: &PipelineConfig) -> f64 {
    let w = &cfg.metric_weights;
    [
        (w.perceptual, report.perceptual),
        (w.l1, report.chroma_l1),
        (w.temporal, report.warp_error),
        (w.cdc, report.cdc),
        (w.frechet, report.frechet),
    ]
    .iter()
    .filter_map(|(l, m)| m.map(|v| l * v))
    .sum()
}

/// Luminance of each Lab frame, for feeding the colorizer.
pub fn luminance_video<T: Real>(
    video: &VideoSequence<LabImage<T>>,
) -> Result<VideoSequence<Plane<T>>> {
    video.map(|f| f.l().clone())
}

/// Mean absolute chroma difference between two frames, as `f64`.
pub fn chroma_error<T: Real>(a: &LabImage<T>, b: &LabImage<T>) -> Result<f64> {
    Ok(to_f64(a.chroma().mean_abs_diff(b.chroma())?))
}
