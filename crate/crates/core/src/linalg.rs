//! Dense real-vector primitives: projection, Gram-Schmidt, cosine similarity,
//! normalization and a small covariance PCA built on cyclic Jacobi rotations.
//!
//! Vectors are plain `&[f64]` slices. Every reduction sums left to right over
//! storage order so reruns are bit-identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as zero when a direction is required.
pub const ZERO_NORM: f64 = 1e-300;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `y += s * x`
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn is_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Orthogonal projection of `v` onto the line spanned by `u`.
pub fn project(v: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    Error::check_dim(u.len(), v.len())?;
    let uu = dot(u, u);
    if uu.sqrt() <= ZERO_NORM {
        return Err(Error::DegenerateDirection);
    }
    Ok(scale(u, dot(v, u) / uu))
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    Error::check_dim(a.len(), b.len())?;
    let na = norm(a);
    let nb = norm(b);
    if na <= ZERO_NORM || nb <= ZERO_NORM {
        return Err(Error::DegenerateDirection);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n <= ZERO_NORM {
        return Err(Error::DegenerateDirection);
    }
    Ok(scale(v, 1.0 / n))
}

/// A set of mutually orthogonal unit vectors of a common dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthoBasis {
    vectors: Vec<Vec<f64>>,
}

impl OrthoBasis {
    /// Maximum |<b_i, b_j>| accepted for i != j.
    pub const ORTHO_TOL: f64 = 1e-9;
    /// Maximum |‖b_i‖ - 1| accepted.
    pub const UNIT_TOL: f64 = 1e-12;

    /// Wraps already-orthonormal vectors, checking the invariants.
    pub fn from_orthonormal(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let basis = OrthoBasis { vectors };
        basis.validate()?;
        Ok(basis)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.vectors.first() else {
            return Err(Error::EmptyBasis);
        };
        let d = first.len();
        for (i, v) in self.vectors.iter().enumerate() {
            Error::check_dim(d, v.len())?;
            let n = norm(v);
            if (n - 1.0).abs() > Self::UNIT_TOL {
                return Err(Error::Numerical(format!(
                    "basis vector {i} has norm {n}, expected 1"
                )));
            }
            for (j, w) in self.vectors.iter().enumerate().skip(i + 1) {
                let c = dot(v, w);
                if c.abs() > Self::ORTHO_TOL {
                    return Err(Error::Numerical(format!(
                        "basis vectors {i} and {j} have inner product {c}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    /// Coordinates `<w, b_k>` of `w` in the basis.
    pub fn coordinates(&self, w: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.dim(), w.len())?;
        Ok(self.vectors.iter().map(|b| dot(w, b)).collect())
    }

    /// Orthogonal projection of `w` onto the span, `Σ_k <w, b_k> b_k`.
    pub fn project(&self, w: &[f64]) -> Result<Vec<f64>> {
        let coords = self.coordinates(w)?;
        let mut out = vec![0.0; w.len()];
        for (c, b) in coords.iter().zip(&self.vectors) {
            axpy(&mut out, *c, b);
        }
        Ok(out)
    }
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
///
/// Inputs whose residual norm drops below `tol` after removing the already
/// accepted directions are skipped, so rank deficiency shrinks the basis
/// instead of failing. Input order fixes the output order.
pub fn gram_schmidt(vectors: &[Vec<f64>], tol: f64) -> Result<OrthoBasis> {
    let Some(first) = vectors.first() else {
        return Err(Error::EmptyBasis);
    };
    let d = first.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        Error::check_dim(d, v.len())?;
        let mut r = v.clone();
        for _pass in 0..2 {
            for b in &basis {
                let c = dot(&r, b);
                axpy(&mut r, -c, b);
            }
        }
        let n = norm(&r);
        if n < tol || n <= ZERO_NORM {
            continue;
        }
        basis.push(scale(&r, 1.0 / n));
    }
    if basis.is_empty() {
        return Err(Error::EmptyBasis);
    }
    Ok(OrthoBasis { vectors: basis })
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Error::check_dim(rows * cols, data.len())?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `M x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.cols, x.len())?;
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `Mᵀ y`
    pub fn matvec_t(&self, y: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.rows, y.len())?;
        let mut out = vec![0.0; self.cols];
        for (i, yi) in y.iter().enumerate() {
            axpy(&mut out, *yi, self.row(i));
        }
        Ok(out)
    }

    /// `M += s * u vᵀ`
    pub fn add_outer(&mut self, s: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (i, ui) in u.iter().enumerate() {
            let f = s * ui;
            if f == 0.0 {
                continue;
            }
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            axpy(row, f, v);
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Affine map `x -> W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Affine {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        Error::check_dim(weight.rows(), bias.len())?;
        Ok(Affine { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.weight.matvec(x)?;
        for (yi, bi) in y.iter_mut().zip(&self.bias) {
            *yi += bi;
        }
        Ok(y)
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit eigenvectors.
pub fn symmetric_eigen(m: &Matrix) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = m.rows();
    Error::check_dim(n, m.cols())?;
    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    let scale_ref: f64 = a
        .as_slice()
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off <= 1e-32 * scale_ref {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = order
        .iter()
        .map(|&j| (0..n).map(|k| v[(k, j)]).collect())
        .collect();
    Ok((values, vectors))
}

/// Flips `v` so that its largest-magnitude entry (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Principal components fitted on one set of rows, reusable for projecting others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    pub components: OrthoBasis,
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    /// Fits the top-`k` components of the sample covariance of `rows`.
    pub fn fit(rows: &[Vec<f64>], k: usize) -> Result<Self> {
        if rows.len() < k + 1 {
            return Err(Error::InsufficientData {
                needed: k + 1,
                got: rows.len(),
            });
        }
        let d = rows[0].len();
        if k == 0 || k > d {
            return Err(Error::Parameter(format!(
                "component count {k} must be in 1..={d}"
            )));
        }
        let mut mean = vec![0.0; d];
        for r in rows {
            Error::check_dim(d, r.len())?;
            axpy(&mut mean, 1.0, r);
        }
        let n = rows.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);

        let mut cov = Matrix::zeros(d, d);
        for r in rows {
            let c = sub(r, &mean);
            cov.add_outer(1.0, &c, &c);
        }
        cov.as_mut_slice().iter_mut().for_each(|x| *x /= n - 1.0);

        let (values, vectors) = symmetric_eigen(&cov)?;
        let mut components: Vec<Vec<f64>> = vectors.into_iter().take(k).collect();
        for c in &mut components {
            fix_sign(c);
        }
        Ok(Pca {
            mean,
            components: OrthoBasis {
                vectors: components,
            },
            eigenvalues: values.into_iter().take(k).collect(),
        })
    }

    /// Coordinates of a (non-centered) row in the fitted components.
    pub fn project(&self, row: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.mean.len(), row.len())?;
        self.components.coordinates(&sub(row, &self.mean))
    }
}

/// Fits PCA on `rows` and returns the components with the projected coordinates.
pub fn pca_project(rows: &[Vec<f64>], k: usize) -> Result<(OrthoBasis, Vec<Vec<f64>>)> {
    let pca = Pca::fit(rows, k)?;
    let coords = rows
        .iter()
        .map(|r| pca.project(r))
        .collect::<Result<Vec<_>>>()?;
    Ok((pca.components, coords))
}
