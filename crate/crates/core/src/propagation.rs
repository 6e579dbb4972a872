//! Frame-by-frame colorization: reference correspondence fused with the
//! flow-warped previous frame.

use rayon::prelude::*;

use crate::color::{replace_chroma, ChromaPlanes, LabImage, Plane, RgbImage};
use crate::config::{Mode, PipelineConfig};
use crate::correspondence::{
    cell_chroma, correspond, resample_chroma, resample_chroma_planes, MAX_MATCH_GRID,
};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureLevel, PyramidExtractor};
use crate::flow::{estimate_flow, warp_chroma, warp_plane};
use crate::scalar::{count, cst, Real};

/// Anything with pixel dimensions.
pub trait Frame {
    fn frame_dims(&self) -> (usize, usize);
}

impl Frame for RgbImage {
    fn frame_dims(&self) -> (usize, usize) {
        self.dims()
    }
}

impl<T: Real> Frame for Plane<T> {
    fn frame_dims(&self) -> (usize, usize) {
        self.dims()
    }
}

impl<T: Real> Frame for LabImage<T> {
    fn frame_dims(&self) -> (usize, usize) {
        self.dims()
    }
}

/// Nonempty, uniformly sized frame list.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence<F> {
    frames: Vec<F>,
    pub frame_rate: Option<f64>,
}

impl<F: Frame> VideoSequence<F> {
    pub fn new(frames: Vec<F>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or(Error::Empty("video has no frames"))?
            .frame_dims();
        if let Some(bad) = frames.iter().find(|f| f.frame_dims() != first) {
            return Err(Error::dims(first, bad.frame_dims()));
        }
        Ok(Self {
            frames,
            frame_rate: None,
        })
    }

    pub fn with_frame_rate(mut self, fps: f64) -> Self {
        self.frame_rate = Some(fps);
        self
    }

    pub fn frames(&self) -> &[F] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<F> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].frame_dims()
    }

    pub fn map<G: Frame>(&self, f: impl Fn(&F) -> G) -> Result<VideoSequence<G>> {
        let mut out = VideoSequence::new(self.frames.iter().map(f).collect())?;
        out.frame_rate = self.frame_rate;
        Ok(out)
    }
}

/// Guided box filter on chroma: each pixel averages the window pixels whose
/// guide value is within `edge_threshold`, then mixes with the input by `strength`.
pub fn edge_aware_smooth<T: Real>(
    chroma: &ChromaPlanes<T>,
    guide: &Plane<T>,
    strength: T,
    radius: usize,
    edge_threshold: T,
) -> Result<ChromaPlanes<T>> {
    if chroma.dims() != guide.dims() {
        return Err(Error::dims(guide.dims(), chroma.dims()));
    }
    if !(strength >= T::zero() && strength <= T::one()) {
        return Err(Error::param("strength", "must be in [0, 1]"));
    }
    if strength == T::zero() || radius == 0 {
        return Ok(chroma.clone());
    }
    let (w, h) = guide.dims();
    let r = radius as isize;
    let pixels: Vec<(T, T)> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            (0..w).map(move |x| {
                let g = guide.get(x, y);
                let (mut sa, mut sb, mut n) = (T::zero(), T::zero(), T::zero());
                for yy in (y as isize - r).max(0)..(y as isize + r + 1).min(h as isize) {
                    for xx in (x as isize - r).max(0)..(x as isize + r + 1).min(w as isize) {
                        let (xx, yy) = (xx as usize, yy as usize);
                        if (guide.get(xx, yy) - g).abs() < edge_threshold {
                            sa = sa + chroma.a.get(xx, yy);
                            sb = sb + chroma.b.get(xx, yy);
                            n = n + T::one();
                        }
                    }
                }
                let (ca, cb) = (chroma.a.get(x, y), chroma.b.get(x, y));
                if n == T::zero() {
                    return (ca, cb);
                }
                let keep = T::one() - strength;
                (
                    keep * ca + strength * (sa / n),
                    keep * cb + strength * (sb / n),
                )
            })
        })
        .collect();
    let a = pixels.iter().map(|p| p.0).collect();
    let b = pixels.iter().map(|p| p.1).collect();
    ChromaPlanes::new(Plane::new(w, h, a)?, Plane::new(w, h, b)?)
}

fn smooth_with<T: Real>(
    chroma: &ChromaPlanes<T>,
    guide: &Plane<T>,
    cfg: &PipelineConfig,
) -> Result<ChromaPlanes<T>> {
    edge_aware_smooth(
        chroma,
        guide,
        cst(cfg.smooth_strength),
        cfg.smooth_radius,
        cst(cfg.smooth_edge_threshold),
    )
}

fn match_level<T: Real>(plane: &Plane<T>) -> Result<FeatureLevel<T>> {
    let ex = PyramidExtractor::default();
    let (w, h) = plane.dims();
    let levels = PyramidExtractor::levels_for_grid(w, h, ex.cell, MAX_MATCH_GRID);
    let fm = PyramidExtractor { levels, ..ex }.extract(plane)?;
    Ok(fm.level_within(MAX_MATCH_GRID).clone())
}

/// A reference image prepared for repeated correspondence queries.
#[derive(Clone, Debug)]
pub struct PreparedReference<T> {
    image: LabImage<T>,
    level: FeatureLevel<T>,
    cell_chroma: ChromaPlanes<T>,
}

impl<T: Real> PreparedReference<T> {
    pub fn new(image: LabImage<T>) -> Result<Self> {
        let level = match_level(image.l())?;
        let cell_chroma = cell_chroma(image.chroma(), &level)?;
        Ok(Self {
            image,
            level,
            cell_chroma,
        })
    }

    pub fn image(&self) -> &LabImage<T> {
        &self.image
    }
}

/// Reference-transfer term for one frame: smoothed chroma plus per-pixel
/// confidence. A frame whose luminance equals the reference's takes the
/// reference chroma directly with full confidence.
pub fn reference_term<T: Real>(
    gray: &Plane<T>,
    reference: &PreparedReference<T>,
    cfg: &PipelineConfig,
) -> Result<(ChromaPlanes<T>, Plane<T>)> {
    let (w, h) = gray.dims();
    if gray == reference.image.l() {
        return Ok((
            reference.image.chroma().clone(),
            Plane::filled(w, h, T::one())?,
        ));
    }
    let level = match_level(gray)?;
    let (grid, field) = correspond(
        &level,
        &reference.level,
        &reference.cell_chroma,
        cst(cfg.temperature),
        cfg.top_k,
    )?;
    let chroma = resample_chroma_planes(&grid, w, h)?;
    let confidence = resample_chroma(&field.confidence_plane(), w, h)?;
    Ok((smooth_with(&chroma, gray, cfg)?, confidence))
}

/// Per-pixel reference weight `β · max(c − τ, 0) / (1 − τ)`.
pub fn fusion_weight<T: Real>(confidence: &Plane<T>, cfg: &PipelineConfig) -> Plane<T> {
    let beta: T = cst(cfg.blend_bias);
    let tau: T = cst(cfg.confidence_floor);
    let span = T::one() - tau;
    confidence.map(|c| {
        if span <= T::zero() {
            T::zero()
        } else {
            (beta * (c - tau).max(T::zero()) / span).min(T::one())
        }
    })
}

/// Stage-1 reference for `gray0`: correspondence transfer from `reference`
/// placed on `gray0`'s luminance.
pub fn transfer_reference<T: Real>(
    gray0: &Plane<T>,
    reference: &LabImage<T>,
    cfg: &PipelineConfig,
) -> Result<LabImage<T>> {
    let prepared = PreparedReference::new(reference.clone())?;
    let (chroma, _) = reference_term(gray0, &prepared, cfg)?;
    replace_chroma(gray0, &chroma)
}

fn warped_prev<T: Real>(
    gray: &Plane<T>,
    prev: &LabImage<T>,
    cfg: &PipelineConfig,
) -> Result<Option<ChromaPlanes<T>>> {
    let flow = estimate_flow(gray, prev.l(), cfg.search_radius, cfg.flow_levels)?;
    if let Some(limit) = cfg.scene_cut_threshold {
        let moved = warp_plane(prev.l(), &flow)?;
        let err = moved
            .data()
            .iter()
            .zip(gray.data())
            .map(|(&p, &q)| (p - q).abs())
            .sum::<T>()
            / count(gray.data().len());
        if err > cst(limit) {
            return Ok(None);
        }
    }
    Ok(Some(warp_chroma(prev.chroma(), &flow)?))
}

/// One frame from an optional reference term and an optional previous frame.
fn fuse<T: Real>(
    gray: &Plane<T>,
    reference: Option<&PreparedReference<T>>,
    prev: Option<&LabImage<T>>,
    cfg: &PipelineConfig,
) -> Result<LabImage<T>> {
    if let Some(p) = prev {
        if p.dims() != gray.dims() {
            return Err(Error::dims(gray.dims(), p.dims()));
        }
    }
    let prev_term = match prev {
        Some(p) => warped_prev(gray, p, cfg)?,
        None => None,
    };
    let chroma = match (reference, prev_term) {
        (Some(r), Some(pc)) => {
            let (rc, conf) = reference_term(gray, r, cfg)?;
            rc.blend(&pc, &fusion_weight(&conf, cfg))?
        }
        (Some(r), None) => reference_term(gray, r, cfg)?.0,
        (None, Some(pc)) => pc,
        (None, None) => {
            return Err(Error::param(
                "colorize_frame",
                "needs a reference or a previous frame",
            ))
        }
    };
    replace_chroma(gray, &chroma)
}

/// Colorize one frame from the reference and the previous output frame.
pub fn colorize_frame<T: Real>(
    gray: &Plane<T>,
    reference: &LabImage<T>,
    prev: Option<&LabImage<T>>,
    cfg: &PipelineConfig,
) -> Result<LabImage<T>> {
    let prepared = PreparedReference::new(reference.clone())?;
    fuse(gray, Some(&prepared), prev, cfg)
}

/// Colorize a grayscale sequence in the mode set in `cfg`.
///
/// In `two_stage` mode a reference whose luminance differs from frame 0 is
/// first transferred onto frame 0 and that result guides every frame.
pub fn colorize_video<T: Real>(
    gray: &VideoSequence<Plane<T>>,
    reference: &LabImage<T>,
    cfg: &PipelineConfig,
) -> Result<VideoSequence<LabImage<T>>> {
    cfg.validate()?;
    let frames = gray.frames();
    let gray0 = &frames[0];
    let guide = match cfg.mode {
        Mode::TwoStage if reference.l() != gray0 => transfer_reference(gray0, reference, cfg)?,
        _ => reference.clone(),
    };
    let prepared = PreparedReference::new(guide)?;
    let mut out: Vec<LabImage<T>> = Vec::with_capacity(frames.len());
    out.push(fuse(gray0, Some(&prepared), None, cfg)?);
    for g in &frames[1..] {
        let reference = match cfg.mode {
            Mode::Markov => None,
            Mode::Exemplar | Mode::TwoStage => Some(&prepared),
        };
        let next = fuse(g, reference, out.last(), cfg)?;
        out.push(next);
    }
    let mut video = VideoSequence::new(out)?;
    video.frame_rate = gray.frame_rate;
    Ok(video)
}
