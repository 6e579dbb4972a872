//! Coarse-to-fine block-matching optical flow and backward warping.
//!
//! `estimate_flow(a, b)` returns a field `F` on the grid of `a` such that
//! `a(x) ≈ b(x + F(x))`; `warp(b, F)` therefore reconstructs `a`.

use rayon::prelude::*;

use crate::color::{ChromaPlanes, LabImage, Plane};
use crate::error::{Error, Result};
use crate::features::gaussian_downsample;
use crate::scalar::{count, cst, Real};

pub const BLOCK: usize = 8;
/// Blocks whose luminance std falls below this inherit the coarser vector.
pub const FLAT_BLOCK_STD: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct FlowField<T> {
    width: usize,
    height: usize,
    dx: Vec<T>,
    dy: Vec<T>,
}

impl<T: Real> FlowField<T> {
    pub fn new(width: usize, height: usize, dx: Vec<T>, dy: Vec<T>) -> Result<Self> {
        if dx.len() != width * height || dy.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} vectors", width * height),
                actual: format!("{}/{} components", dx.len(), dy.len()),
            });
        }
        Ok(Self {
            width,
            height,
            dx,
            dy,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            dx: vec![T::zero(); width * height],
            dy: vec![T::zero(); width * height],
        }
    }

    pub fn constant(width: usize, height: usize, dx: T, dy: T) -> Self {
        Self {
            width,
            height,
            dx: vec![dx; width * height],
            dy: vec![dy; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (T, T) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    pub fn dx(&self) -> &[T] {
        &self.dx
    }

    pub fn dy(&self) -> &[T] {
        &self.dy
    }

    pub fn is_zero(&self) -> bool {
        self.dx.iter().chain(&self.dy).all(|v| *v == T::zero())
    }
}

/// Upper bound on any component of a field from `estimate_flow`.
pub fn flow_bound(search_radius: usize, levels: usize) -> f64 {
    (search_radius << levels) as f64
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OcclusionMask {
    pub width: usize,
    pub height: usize,
    pub occluded: Vec<bool>,
}

impl OcclusionMask {
    pub fn count(&self) -> usize {
        self.occluded.iter().filter(|o| **o).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Disp {
    dx: isize,
    dy: isize,
}

impl Disp {
    const ZERO: Disp = Disp { dx: 0, dy: 0 };

    fn key(self) -> (isize, isize, isize) {
        (self.dx * self.dx + self.dy * self.dy, self.dx, self.dy)
    }
}

fn sad<T: Real>(
    a: &Plane<T>,
    b: &Plane<T>,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    d: Disp,
) -> T {
    let mut s = T::zero();
    for y in y0..y1 {
        for x in x0..x1 {
            let v = b.get_clamped(x as isize + d.dx, y as isize + d.dy);
            s = s + (a.get(x, y) - v).abs();
        }
    }
    s
}

fn block_std<T: Real>(p: &Plane<T>, x0: usize, y0: usize, x1: usize, y1: usize) -> T {
    let n = count::<T>((x1 - x0) * (y1 - y0));
    let mut sum = T::zero();
    for y in y0..y1 {
        for x in x0..x1 {
            sum = sum + p.get(x, y);
        }
    }
    let mean = sum / n;
    let mut var = T::zero();
    for y in y0..y1 {
        for x in x0..x1 {
            let d = p.get(x, y) - mean;
            var = var + d * d;
        }
    }
    (var / n).sqrt()
}

struct BlockGrid {
    cols: usize,
    rows: usize,
}

impl BlockGrid {
    fn new(w: usize, h: usize) -> Self {
        Self {
            cols: w.div_ceil(BLOCK),
            rows: h.div_ceil(BLOCK),
        }
    }
}

/// Coarse-to-fine block matching (8x8 blocks, SAD cost).
///
/// Each block searches a window around every distinct candidate: the
/// upsampled vectors of its coarse block and that block's four neighbors,
/// and zero.
pub fn estimate_flow<T: Real>(
    prev: &Plane<T>,
    next: &Plane<T>,
    search_radius: usize,
    levels: usize,
) -> Result<FlowField<T>> {
    if prev.dims() != next.dims() {
        return Err(Error::dims(prev.dims(), next.dims()));
    }
    if search_radius < 1 {
        return Err(Error::param("search_radius", "must be at least 1"));
    }
    if levels < 1 {
        return Err(Error::param("levels", "must be at least 1"));
    }
    let (w, h) = prev.dims();
    if w < BLOCK || h < BLOCK {
        return Err(Error::ImageTooSmall(format!(
            "{w}x{h} is smaller than one {BLOCK}x{BLOCK} block"
        )));
    }

    let mut pyr_a = vec![prev.clone()];
    let mut pyr_b = vec![next.clone()];
    while pyr_a.len() < levels {
        let last = pyr_a.last().expect("nonempty");
        if last.width() / 2 < BLOCK || last.height() / 2 < BLOCK {
            break;
        }
        let a = gaussian_downsample(last)?;
        let b = gaussian_downsample(pyr_b.last().expect("nonempty"))?;
        pyr_a.push(a);
        pyr_b.push(b);
    }

    let flat: T = cst(FLAT_BLOCK_STD);
    let r = search_radius as isize;
    let mut coarse: Option<(BlockGrid, Vec<Disp>)> = None;
    let mut finest: Option<(BlockGrid, Vec<Disp>, Vec<(T, T)>)> = None;

    for level in (0..pyr_a.len()).rev() {
        let (a, b) = (&pyr_a[level], &pyr_b[level]);
        let (lw, lh) = a.dims();
        let grid = BlockGrid::new(lw, lh);
        let vectors: Vec<(Disp, (T, T))> = (0..grid.rows * grid.cols)
            .into_par_iter()
            .map(|i| {
                let (bx, by) = (i % grid.cols, i / grid.cols);
                let (x0, y0) = (bx * BLOCK, by * BLOCK);
                let (x1, y1) = ((x0 + BLOCK).min(lw), (y0 + BLOCK).min(lh));
                let mut candidates = Vec::with_capacity(6);
                if let Some((cg, cv)) = &coarse {
                    let cx = ((x0 + x1) / 2 / 2 / BLOCK).min(cg.cols - 1);
                    let cy = ((y0 + y1) / 2 / 2 / BLOCK).min(cg.rows - 1);
                    let up = |x: usize, y: usize| {
                        let v = cv[y * cg.cols + x];
                        Disp {
                            dx: 2 * v.dx,
                            dy: 2 * v.dy,
                        }
                    };
                    candidates.push(up(cx, cy));
                    candidates.push(up(cx.saturating_sub(1), cy));
                    candidates.push(up((cx + 1).min(cg.cols - 1), cy));
                    candidates.push(up(cx, cy.saturating_sub(1)));
                    candidates.push(up(cx, (cy + 1).min(cg.rows - 1)));
                }
                candidates.push(Disp::ZERO);
                let predicted = candidates[0];
                if block_std(a, x0, y0, x1, y1) < flat {
                    return (predicted, (T::zero(), T::zero()));
                }
                let mut seen: Vec<Disp> = Vec::with_capacity(candidates.len());
                let mut best = predicted;
                let mut best_cost = sad(a, b, x0, y0, x1, y1, predicted);
                for &c in &candidates {
                    if seen.contains(&c) {
                        continue;
                    }
                    seen.push(c);
                    for oy in -r..=r {
                        for ox in -r..=r {
                            let d = Disp {
                                dx: c.dx + ox,
                                dy: c.dy + oy,
                            };
                            let cost = sad(a, b, x0, y0, x1, y1, d);
                            if cost < best_cost || (cost == best_cost && d.key() < best.key()) {
                                best = d;
                                best_cost = cost;
                            }
                        }
                    }
                }
                let sub = if level == 0 && best_cost > T::zero() {
                    let cost = |d: Disp| sad(a, b, x0, y0, x1, y1, d);
                    let fx = parabolic(
                        cost(Disp {
                            dx: best.dx - 1,
                            ..best
                        }),
                        best_cost,
                        cost(Disp {
                            dx: best.dx + 1,
                            ..best
                        }),
                    );
                    let fy = parabolic(
                        cost(Disp {
                            dy: best.dy - 1,
                            ..best
                        }),
                        best_cost,
                        cost(Disp {
                            dy: best.dy + 1,
                            ..best
                        }),
                    );
                    (fx, fy)
                } else {
                    (T::zero(), T::zero())
                };
                (best, sub)
            })
            .collect();
        let (disp, sub): (Vec<Disp>, Vec<(T, T)>) = vectors.into_iter().unzip();
        if level == 0 {
            finest = Some((grid, disp, sub));
        } else {
            coarse = Some((grid, disp));
        }
    }

    let (grid, disp, sub) = finest.expect("level 0 always processed");
    let block_dx: Vec<T> = disp
        .iter()
        .zip(&sub)
        .map(|(d, s)| count::<T>(d.dx.unsigned_abs()) * sign(d.dx) + s.0)
        .collect();
    let block_dy: Vec<T> = disp
        .iter()
        .zip(&sub)
        .map(|(d, s)| count::<T>(d.dy.unsigned_abs()) * sign(d.dy) + s.1)
        .collect();
    let bx_plane = Plane::new(grid.cols, grid.rows, block_dx)?;
    let by_plane = Plane::new(grid.cols, grid.rows, block_dy)?;
    let inv: T = cst(1.0 / BLOCK as f64);
    let center: T = cst((BLOCK as f64 - 1.0) / 2.0);
    let per_pixel: Vec<(T, T)> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let (bx_plane, by_plane) = (&bx_plane, &by_plane);
            let gy = (count::<T>(y) - center) * inv;
            (0..w).map(move |x| {
                let gx = (count::<T>(x) - center) * inv;
                (
                    bx_plane.sample_bilinear(gx, gy),
                    by_plane.sample_bilinear(gx, gy),
                )
            })
        })
        .collect();
    let (dx, dy) = per_pixel.into_iter().unzip();
    FlowField::new(w, h, dx, dy)
}

fn sign<T: Real>(v: isize) -> T {
    if v < 0 {
        -T::one()
    } else {
        T::one()
    }
}

/// Vertex offset of the parabola through three equally spaced costs.
fn parabolic<T: Real>(minus: T, center: T, plus: T) -> T {
    let denom = minus - center * cst(2.0) + plus;
    if denom <= T::zero() {
        return T::zero();
    }
    let half: T = cst(0.5);
    ((minus - plus) / (denom * cst(2.0))).max(-half).min(half)
}

/// Backward bilinear warp of one plane: `out(x) = p(x + F(x))`, border clamped.
pub fn warp_plane<T: Real>(p: &Plane<T>, flow: &FlowField<T>) -> Result<Plane<T>> {
    if p.dims() != flow.dims() {
        return Err(Error::dims(p.dims(), flow.dims()));
    }
    let (w, h) = p.dims();
    let data = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            (0..w).map(move |x| {
                let (dx, dy) = flow.get(x, y);
                p.sample_bilinear(count::<T>(x) + dx, count::<T>(y) + dy)
            })
        })
        .collect();
    Plane::new(w, h, data)
}

pub fn warp_chroma<T: Real>(c: &ChromaPlanes<T>, flow: &FlowField<T>) -> Result<ChromaPlanes<T>> {
    ChromaPlanes::new(warp_plane(&c.a, flow)?, warp_plane(&c.b, flow)?)
}

pub fn warp<T: Real>(img: &LabImage<T>, flow: &FlowField<T>) -> Result<LabImage<T>> {
    LabImage::from_planes(
        warp_plane(img.l(), flow)?,
        warp_plane(img.a(), flow)?,
        warp_plane(img.b(), flow)?,
    )
}

/// Forward-backward consistency: occluded iff `|F(x) + B(x + F(x))| > tol`.
pub fn occlusion_mask<T: Real>(
    forward: &FlowField<T>,
    backward: &FlowField<T>,
    tol: T,
) -> Result<OcclusionMask> {
    if forward.dims() != backward.dims() {
        return Err(Error::dims(forward.dims(), backward.dims()));
    }
    let (w, h) = forward.dims();
    let bx = Plane::new(w, h, backward.dx.clone())?;
    let by = Plane::new(w, h, backward.dy.clone())?;
    let occluded = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let (fx, fy) = forward.get(x, y);
            let px = count::<T>(x) + fx;
            let py = count::<T>(y) + fy;
            let ex = fx + bx.sample_bilinear(px, py);
            let ey = fy + by.sample_bilinear(px, py);
            (ex * ex + ey * ey).sqrt() > tol
        })
        .collect();
    Ok(OcclusionMask {
        width: w,
        height: h,
        occluded,
    })
}
