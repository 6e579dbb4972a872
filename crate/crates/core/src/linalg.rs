//! Small dense symmetric eigensolver (cyclic Jacobi).

use crate::error::{Error, Result};
use crate::scalar::{cst, Real};

/// Row-major square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn from_rows(n: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: format!("{} entries", n * n),
                actual: format!("{} entries", data.len()),
            });
        }
        Ok(Self { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn trace(&self) -> T {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == T::zero() {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] = out.data[i * n + j] + a * other.get(k, j);
                }
            }
        }
        out
    }

    /// `(A + Aᵀ) / 2`
    pub fn symmetrized(&self) -> Self {
        let mut out = self.clone();
        let half: T = cst(0.5);
        for i in 0..self.n {
            for j in 0..self.n {
                out.set(i, j, (self.get(i, j) + self.get(j, i)) * half);
            }
        }
        out
    }
}

/// Eigenpairs sorted by descending eigenvalue.
#[derive(Clone, Debug)]
pub struct SymmetricEigen<T> {
    pub values: Vec<T>,
    /// `vectors[k]` is the unit eigenvector for `values[k]`.
    pub vectors: Vec<Vec<T>>,
}

/// Eigendecomposition of a symmetric matrix.
///
/// Each eigenvector is sign-normalized so that its largest-magnitude entry
/// (first one on ties) is positive. Equal eigenvalues are ordered by
/// lexicographic comparison of their eigenvectors.
pub fn symmetric_eigen<T: Real>(m: &SquareMatrix<T>) -> SymmetricEigen<T> {
    let n = m.size();
    let mut a = m.symmetrized();
    let mut v = SquareMatrix::zeros(n);
    for i in 0..n {
        v.set(i, i, T::one());
    }
    let scale = a.data.iter().fold(T::zero(), |acc, x| acc + *x * *x).sqrt();
    let tiny = T::epsilon() * T::epsilon() * scale * scale;

    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j) * a.get(i, j))
            .sum();
        if off <= tiny || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == T::zero() {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (apq * cst(2.0));
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut pairs: Vec<(T, Vec<T>)> = (0..n)
        .map(|k| {
            let mut vec: Vec<T> = (0..n).map(|i| v.get(i, k)).collect();
            let mut lead = 0;
            for i in 1..n {
                if vec[i].abs() > vec[lead].abs() {
                    lead = i;
                }
            }
            if n > 0 && vec[lead] < T::zero() {
                vec.iter_mut().for_each(|x| *x = -*x);
            }
            (a.get(k, k), vec)
        })
        .collect();
    pairs.sort_by(|x, y| {
        y.0.partial_cmp(&x.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| {
                x.1.iter()
                    .zip(&y.1)
                    .map(|(p, q)| p.partial_cmp(q).unwrap_or(std::cmp::Ordering::Equal))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    let (values, vectors) = pairs.into_iter().unzip();
    SymmetricEigen { values, vectors }
}

/// Principal square root of a symmetric PSD matrix.
///
/// Eigenvalues below `-tol * max(1, |λ|max)` are rejected; smaller negative
/// values are clamped to zero.
pub fn psd_sqrt<T: Real>(m: &SquareMatrix<T>, tol: T) -> Result<SquareMatrix<T>> {
    let eig = symmetric_eigen(m);
    let roots = clamped_roots(&eig.values, tol)?;
    let n = m.size();
    let mut out = SquareMatrix::zeros(n);
    for (root, vec) in roots.iter().zip(&eig.vectors) {
        if *root == T::zero() {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                out.data[i * n + j] = out.data[i * n + j] + *root * vec[i] * vec[j];
            }
        }
    }
    Ok(out)
}

pub(crate) fn clamped_roots<T: Real>(values: &[T], tol: T) -> Result<Vec<T>> {
    let largest = values.iter().fold(T::one(), |acc, v| acc.max(v.abs()));
    values
        .iter()
        .map(|&v| {
            if v < -tol * largest {
                Err(Error::NotPositiveSemiDefinite(
                    v.to_f64().unwrap_or(f64::NAN),
                ))
            } else {
                Ok(v.max(T::zero()).sqrt())
            }
        })
        .collect()
}
