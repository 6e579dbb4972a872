//! Dense non-local matching between a query frame and a reference.
//!
//! Every query cell attends over all reference cells: cosine affinities are
//! computed, the `k` strongest are kept and softmax-weighted at a given
//! temperature, and the reference chroma is averaged with those weights.

use rayon::prelude::*;

use crate::color::{ChromaPlanes, Plane};
use crate::error::{Error, Result};
use crate::features::FeatureLevel;
use crate::scalar::{count, cst, Real};

/// Largest grid side correspondence runs at.
pub const MAX_MATCH_GRID: usize = 64;

/// Dense query x reference cosine similarities, row-major by query cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Affinity<T> {
    pub query_width: usize,
    pub query_height: usize,
    pub reference_cells: usize,
    pub data: Vec<T>,
}

impl<T: Real> Affinity<T> {
    pub fn row(&self, query_cell: usize) -> &[T] {
        &self.data[query_cell * self.reference_cells..(query_cell + 1) * self.reference_cells]
    }

    pub fn get(&self, query_cell: usize, reference_cell: usize) -> T {
        self.data[query_cell * self.reference_cells + reference_cell]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellMatch<T> {
    pub reference_cell: usize,
    pub weight: T,
}

/// Per query cell: up to `k` weighted reference matches plus a confidence.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceField<T> {
    pub grid_width: usize,
    pub grid_height: usize,
    /// Sorted by non-increasing weight; weights sum to one.
    pub matches: Vec<Vec<CellMatch<T>>>,
    /// Top-1 affinity mapped from [-1, 1] to [0, 1].
    pub confidence: Vec<T>,
}

impl<T: Real> CorrespondenceField<T> {
    pub fn confidence_plane(&self) -> Plane<T> {
        Plane::new(self.grid_width, self.grid_height, self.confidence.clone()).expect("grid dims")
    }
}

fn cosine<T: Real>(a: &[T], b: &[T]) -> T {
    let mut dot = T::zero();
    let mut na = T::zero();
    let mut nb = T::zero();
    for (x, y) in a.iter().zip(b) {
        dot = dot + *x * *y;
        na = na + *x * *x;
        nb = nb + *y * *y;
    }
    let denom = (na * nb).sqrt();
    if denom > T::zero() {
        (dot / denom).max(-T::one()).min(T::one())
    } else {
        T::zero()
    }
}

fn check_dims<T: Real>(query: &FeatureLevel<T>, reference: &FeatureLevel<T>) -> Result<()> {
    if query.dim != reference.dim {
        return Err(Error::DimensionMismatch {
            expected: format!("descriptor dim {}", query.dim),
            actual: format!("descriptor dim {}", reference.dim),
        });
    }
    if reference.cells() == 0 || query.cells() == 0 {
        return Err(Error::Empty("feature level has no cells"));
    }
    Ok(())
}

fn affinity_row<T: Real>(
    query: &FeatureLevel<T>,
    cell: usize,
    reference: &FeatureLevel<T>,
) -> Vec<T> {
    let q = query.descriptor(cell);
    (0..reference.cells())
        .map(|j| cosine(q, reference.descriptor(j)))
        .collect()
}

pub fn build_affinity<T: Real>(
    query: &FeatureLevel<T>,
    reference: &FeatureLevel<T>,
) -> Result<Affinity<T>> {
    check_dims(query, reference)?;
    let data = (0..query.cells())
        .into_par_iter()
        .flat_map_iter(|i| affinity_row(query, i, reference))
        .collect();
    Ok(Affinity {
        query_width: query.grid_width,
        query_height: query.grid_height,
        reference_cells: reference.cells(),
        data,
    })
}

fn check_attention<T: Real>(temperature: T, k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::param("k", "must be at least 1"));
    }
    if !(temperature > T::zero()) || !temperature.is_finite() {
        return Err(Error::param("temperature", "must be positive and finite"));
    }
    Ok(())
}

struct RowResult<T> {
    a: T,
    b: T,
    matches: Vec<CellMatch<T>>,
    confidence: T,
}

/// Top-k by (affinity desc, index asc).
fn top_k<T: Real>(row: &[T], k: usize) -> Vec<(usize, T)> {
    let k = k.min(row.len());
    let mut best: Vec<(usize, T)> = Vec::with_capacity(k + 1);
    for (j, &s) in row.iter().enumerate() {
        if best.len() == k && !(s > best[k - 1].1) {
            continue;
        }
        let pos = best.iter().position(|&(_, t)| s > t).unwrap_or(best.len());
        best.insert(pos, (j, s));
        best.truncate(k);
    }
    best
}

fn attend_row<T: Real>(
    row: &[T],
    chroma: &ChromaPlanes<T>,
    temperature: T,
    k: usize,
) -> RowResult<T> {
    let kept = top_k(row, k);
    let top = kept[0].1;
    let raw: Vec<T> = kept
        .iter()
        .map(|&(_, s)| ((s - top) / temperature).exp())
        .collect();
    let total: T = raw.iter().copied().sum();
    let matches: Vec<CellMatch<T>> = kept
        .iter()
        .zip(&raw)
        .map(|(&(j, _), &r)| CellMatch {
            reference_cell: j,
            weight: r / total,
        })
        .collect();
    let (a_ref, b_ref) = (chroma.a.data(), chroma.b.data());
    let mut a = T::zero();
    let mut b = T::zero();
    for m in &matches {
        a = a + m.weight * a_ref[m.reference_cell];
        b = b + m.weight * b_ref[m.reference_cell];
    }
    let half: T = cst(0.5);
    RowResult {
        a,
        b,
        matches,
        confidence: ((top + T::one()) * half).max(T::zero()).min(T::one()),
    }
}

fn assemble<T: Real>(
    grid_width: usize,
    grid_height: usize,
    rows: Vec<RowResult<T>>,
) -> Result<(ChromaPlanes<T>, CorrespondenceField<T>)> {
    let mut a = Vec::with_capacity(rows.len());
    let mut b = Vec::with_capacity(rows.len());
    let mut matches = Vec::with_capacity(rows.len());
    let mut confidence = Vec::with_capacity(rows.len());
    for r in rows {
        a.push(r.a);
        b.push(r.b);
        matches.push(r.matches);
        confidence.push(r.confidence);
    }
    let chroma = ChromaPlanes::new(
        Plane::new(grid_width, grid_height, a)?,
        Plane::new(grid_width, grid_height, b)?,
    )?;
    Ok((
        chroma,
        CorrespondenceField {
            grid_width,
            grid_height,
            matches,
            confidence,
        },
    ))
}

/// Attention-weighted chroma transfer over a precomputed affinity matrix.
///
/// `reference_chroma` holds one chroma value per reference cell (any grid
/// shape with `affinity.reference_cells` entries).
pub fn attend_chroma<T: Real>(
    affinity: &Affinity<T>,
    reference_chroma: &ChromaPlanes<T>,
    temperature: T,
    k: usize,
) -> Result<(ChromaPlanes<T>, CorrespondenceField<T>)> {
    check_attention(temperature, k)?;
    if affinity.reference_cells == 0 || affinity.data.is_empty() {
        return Err(Error::Empty("affinity rows"));
    }
    if reference_chroma.a.data().len() != affinity.reference_cells {
        return Err(Error::DimensionMismatch {
            expected: format!("{} reference cells", affinity.reference_cells),
            actual: format!("{} chroma cells", reference_chroma.a.data().len()),
        });
    }
    let rows = (0..affinity.query_width * affinity.query_height)
        .into_par_iter()
        .map(|i| attend_row(affinity.row(i), reference_chroma, temperature, k))
        .collect();
    assemble(affinity.query_width, affinity.query_height, rows)
}

/// Same result as `build_affinity` followed by `attend_chroma`, without
/// materializing the dense matrix.
pub fn correspond<T: Real>(
    query: &FeatureLevel<T>,
    reference: &FeatureLevel<T>,
    reference_chroma: &ChromaPlanes<T>,
    temperature: T,
    k: usize,
) -> Result<(ChromaPlanes<T>, CorrespondenceField<T>)> {
    check_dims(query, reference)?;
    check_attention(temperature, k)?;
    if reference_chroma.a.data().len() != reference.cells() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} reference cells", reference.cells()),
            actual: format!("{} chroma cells", reference_chroma.a.data().len()),
        });
    }
    let rows = (0..query.cells())
        .into_par_iter()
        .map(|i| {
            attend_row(
                &affinity_row(query, i, reference),
                reference_chroma,
                temperature,
                k,
            )
        })
        .collect();
    assemble(query.grid_width, query.grid_height, rows)
}

/// Average chroma over each cell's footprint in the full-resolution image.
pub fn cell_chroma<T: Real>(
    chroma: &ChromaPlanes<T>,
    level: &FeatureLevel<T>,
) -> Result<ChromaPlanes<T>> {
    let side = level.cell_pixels;
    let (w, h) = chroma.dims();
    if level.grid_width * side > w || level.grid_height * side > h {
        return Err(Error::DimensionMismatch {
            expected: format!(
                "at least {}x{}",
                level.grid_width * side,
                level.grid_height * side
            ),
            actual: format!("{w}x{h}"),
        });
    }
    let n = count::<T>(side * side);
    let avg = |p: &Plane<T>| {
        Plane::from_fn(level.grid_width, level.grid_height, |gx, gy| {
            let mut s = T::zero();
            for y in gy * side..(gy + 1) * side {
                for x in gx * side..(gx + 1) * side {
                    s = s + p.get(x, y);
                }
            }
            s / n
        })
    };
    ChromaPlanes::new(avg(&chroma.a)?, avg(&chroma.b)?)
}

/// Bilinear upsampling of a cell grid to frame resolution (cell-center aligned).
pub fn resample_chroma<T: Real>(
    grid: &Plane<T>,
    target_w: usize,
    target_h: usize,
) -> Result<Plane<T>> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::param("target", "dimensions must be positive"));
    }
    let sx: T = count::<T>(grid.width()) / count(target_w);
    let sy: T = count::<T>(grid.height()) / count(target_h);
    let half: T = cst(0.5);
    let data = (0..target_h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let gy = (count::<T>(y) + half) * sy - half;
            (0..target_w).map(move |x| {
                let gx = (count::<T>(x) + half) * sx - half;
                grid.sample_bilinear(gx, gy)
            })
        })
        .collect();
    Plane::new(target_w, target_h, data)
}

pub fn resample_chroma_planes<T: Real>(
    grid: &ChromaPlanes<T>,
    target_w: usize,
    target_h: usize,
) -> Result<ChromaPlanes<T>> {
    ChromaPlanes::new(
        resample_chroma(&grid.a, target_w, target_h)?,
        resample_chroma(&grid.b, target_w, target_h)?,
    )
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
        v.into_iter().map(|x| x / n).collect()
    }

    proptest! {
        #[test]
        fn weights_normalized_and_permutation_equivariant(
            q in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..6),
            r in prop::collection::vec((prop::collection::vec(-1.0f64..1.0, 4), -100.0f64..100.0, -100.0f64..100.0), 2..12),
            k in 1usize..6,
            temperature in 0.01f64..2.0,
            shift in 0usize..12,
        ) {
            let mk = |cells: Vec<Vec<f64>>| {
                let n = cells.len();
                let d: Vec<f64> = cells.into_iter().flat_map(unit).collect();
                FeatureLevel { scale: 1, grid_width: n, grid_height: 1, dim: 4, raw: d.clone(), descriptors: d, cell_pixels: 4 }
            };
            let chroma = |rows: &[(Vec<f64>, f64, f64)]| {
                let n = rows.len();
                ChromaPlanes::new(
                    Plane::new(n, 1, rows.iter().map(|r| r.1).collect()).unwrap(),
                    Plane::new(n, 1, rows.iter().map(|r| r.2).collect()).unwrap(),
                ).unwrap()
            };
            let query = mk(q);
            let (out, field) = correspond(&query, &mk(r.iter().map(|x| x.0.clone()).collect()), &chroma(&r), temperature, k).unwrap();
            for m in &field.matches {
                let s: f64 = m.iter().map(|c| c.weight).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
                prop_assert!(m.windows(2).all(|w| w[0].weight >= w[1].weight));
            }
            prop_assert!(field.confidence.iter().all(|c| (0.0..=1.0).contains(c)));

            // permute reference cells together with their chroma
            let mut perm = r.clone();
            perm.rotate_left(shift % r.len());
            perm.reverse();
            let (out2, _) = correspond(&query, &mk(perm.iter().map(|x| x.0.clone()).collect()), &chroma(&perm), temperature, k).unwrap();
            // ties at the k boundary can legitimately pick different cells, so
            // only compare when the kept set is unambiguous
            let aff = build_affinity(&query, &mk(r.iter().map(|x| x.0.clone()).collect())).unwrap();
            for i in 0..query.cells() {
                let mut row = aff.row(i).to_vec();
                row.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let kk = k.min(row.len());
                let ambiguous = kk < row.len() && (row[kk - 1] - row[kk]).abs() < 1e-12;
                if !ambiguous {
                    prop_assert!((out.a.data()[i] - out2.a.data()[i]).abs() < 1e-9);
                    prop_assert!((out.b.data()[i] - out2.b.data()[i]).abs() < 1e-9);
                }
            }
        }
    }
}
