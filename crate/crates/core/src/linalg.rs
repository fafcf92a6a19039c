//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted descending.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(m.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest eigenvalue and a unit eigenvector of a symmetric matrix.
pub fn top_eigenpair(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let (vals, vecs) = sym_eigen_desc(m);
    (vals[0], vecs.column(0).into_owned())
}

/// Symmetric PSD square root; negative eigenvalues are clipped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen_desc(m);
    let roots = DVector::from_iterator(vals.len(), vals.iter().map(|&l| l.max(0.0).sqrt()));
    &vecs * DMatrix::from_diagonal(&roots) * vecs.transpose()
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    // The Gram matrix on the smaller side is cheaper and exact up to rounding.
    let g = if a.nrows() <= a.ncols() {
        a * a.transpose()
    } else {
        a.transpose() * a
    };
    let (vals, _) = sym_eigen_desc(&g);
    vals[0].max(0.0).sqrt()
}

/// Singular values in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Default relative rank tolerance used across the crate.
pub fn rank_tol(a: &DMatrix<f64>, s_max: f64) -> f64 {
    s_max * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON * 16.0
}

pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    let s = singular_values(a);
    match s.first() {
        None => 0,
        Some(&top) if top == 0.0 => 0,
        Some(&top) => {
            let tol = rank_tol(a, top);
            s.iter().filter(|&&x| x > tol).count()
        }
    }
}

/// Moore-Penrose pseudoinverse with the default rank tolerance.
pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = a.shape();
    if a.is_empty() {
        return DMatrix::zeros(c, r);
    }
    let svd = a.clone().svd(true, true);
    let top = svd.singular_values.max();
    if top == 0.0 {
        return DMatrix::zeros(c, r);
    }
    let tol = rank_tol(a, top);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut out = DMatrix::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            out += (vt.row(k).transpose() / s) * u.column(k).transpose();
        }
    }
    out
}

/// Columns of `x` indexed by `idx`, in order.
pub fn select_columns(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), idx.len(), |r, c| x[(r, idx[c])])
}

pub fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.ncols().max(1) as f64;
    x.column_sum() / n
}

/// Subtracts `center` from every column.
pub fn center_columns(x: &DMatrix<f64>, center: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        col -= center;
    }
    out
}

/// Thin factorization `m = left * right^T` compressed into an SVD.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    /// SVD of `left * right^T` without forming the product, via two QR factorizations.
    pub fn of_product(left: &DMatrix<f64>, right: &DMatrix<f64>) -> Self {
        assert_eq!(left.ncols(), right.ncols());
        let ql = left.clone().qr();
        let qr = right.clone().qr();
        let core = ql.r() * qr.r().transpose();
        let svd = core.svd(true, true);
        let u = ql.q() * svd.u.expect("u requested");
        let v = qr.q() * svd.v_t.expect("v_t requested").transpose();
        let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
        // nalgebra does not guarantee ordering
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
        let v = DMatrix::from_fn(v.nrows(), order.len(), |r, c| v[(r, order[c])]);
        s = order.iter().map(|&i| s[i]).collect();
        ThinSvd { u, s, v }
    }

    pub fn of_dense(m: &DMatrix<f64>) -> Self {
        let id = DMatrix::identity(m.ncols(), m.ncols());
        Self::of_product(m, &id)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let s = DMatrix::from_diagonal(&DVector::from_vec(self.s.clone()));
        &self.u * s * self.v.transpose()
    }
}
