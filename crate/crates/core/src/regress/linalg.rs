//! Householder QR with column pivoting.

use nalgebra::{DMatrix, DVector};

/// A column is treated as linearly dependent once the norm of its part
/// orthogonal to the already-chosen columns falls below this fraction of
/// its original norm.
pub const DEPENDENCE_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct PivotedQr {
    /// Thin orthonormal factor, `n × rank`.
    pub q: DMatrix<f64>,
    /// Upper-triangular factor for the independent columns, `rank × rank`.
    pub r: DMatrix<f64>,
    /// `perm[i]` is the original column index placed at position `i`.
    /// The first `rank` entries are the independent columns.
    pub perm: Vec<usize>,
    pub rank: usize,
}

impl PivotedQr {
    pub fn independent(&self) -> &[usize] {
        &self.perm[..self.rank]
    }

    pub fn dependent(&self) -> &[usize] {
        &self.perm[self.rank..]
    }

    /// Least-squares coefficients in original column order; dependent
    /// columns get zero.
    pub fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        let m = self.perm.len();
        let qty = self.q.transpose() * y;
        let z = back_substitute(&self.r, &qty);
        let mut beta = DVector::zeros(m);
        for (pos, &col) in self.independent().iter().enumerate() {
            beta[col] = z[pos];
        }
        beta
    }

    /// Diagonal of `(AᵀA)⁻¹` restricted to the independent columns, in
    /// pivoted order.
    pub fn inverse_gram_diagonal(&self) -> Vec<f64> {
        let k = self.rank;
        let rinv = upper_triangular_inverse(&self.r);
        (0..k)
            .map(|i| (i..k).map(|j| rinv[(i, j)] * rinv[(i, j)]).sum())
            .collect()
    }
}

pub fn pivoted_qr(a: &DMatrix<f64>) -> PivotedQr {
    let (n, m) = a.shape();
    let mut work = a.clone();
    let mut perm: Vec<usize> = (0..m).collect();
    let original: Vec<f64> = (0..m).map(|j| a.column(j).norm()).collect();
    let mut reflectors: Vec<(usize, DVector<f64>, f64)> = Vec::new();
    let mut rank = 0;

    for step in 0..m.min(n) {
        // pick the largest residual column among those still independent
        let mut best: Option<(usize, f64)> = None;
        for j in step..m {
            let resid = work.column(j).rows_range(step..).norm();
            let orig = original[perm[j]];
            if orig == 0.0 || resid <= DEPENDENCE_TOL * orig {
                continue;
            }
            match best {
                Some((_, b)) if resid <= b => {}
                _ => best = Some((j, resid)),
            }
        }
        let Some((pivot, _)) = best else { break };
        if pivot != step {
            work.swap_columns(step, pivot);
            perm.swap(step, pivot);
        }

        let x = work.column(step).rows_range(step..).clone_owned();
        let norm = x.norm();
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = DVector::from_iterator(n - step, x.iter().copied());
        v[0] -= alpha;
        let vtv = v.norm_squared();
        if vtv > 0.0 {
            let beta = 2.0 / vtv;
            for j in step..m {
                let mut col = work.column_mut(j);
                let mut col = col.rows_range_mut(step..);
                let dot = v.dot(&col);
                col.axpy(-beta * dot, &v, 1.0);
            }
            reflectors.push((step, v, beta));
        }
        rank += 1;
    }

    // dependent columns keep stable relative order after the independent ones
    let mut tail: Vec<usize> = perm[rank..].to_vec();
    tail.sort_unstable();
    perm.truncate(rank);
    perm.extend(tail);

    let r = DMatrix::from_fn(rank, rank, |i, j| if j >= i { work[(i, j)] } else { 0.0 });

    let mut q = DMatrix::zeros(n, rank);
    for i in 0..rank {
        q[(i, i)] = 1.0;
    }
    for (step, v, beta) in reflectors.iter().rev() {
        for j in 0..rank {
            let mut col = q.column_mut(j);
            let mut col = col.rows_range_mut(*step..);
            let dot = v.dot(&col);
            col.axpy(-beta * dot, v, 1.0);
        }
    }

    PivotedQr { q, r, perm, rank }
}

pub fn back_substitute(r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let k = r.nrows();
    let mut z = DVector::zeros(k);
    for i in (0..k).rev() {
        let mut s = b[i];
        for j in (i + 1)..k {
            s -= r[(i, j)] * z[j];
        }
        z[i] = s / r[(i, i)];
    }
    z
}

fn upper_triangular_inverse(r: &DMatrix<f64>) -> DMatrix<f64> {
    let k = r.nrows();
    let mut inv = DMatrix::zeros(k, k);
    for c in 0..k {
        let mut e = DVector::zeros(k);
        e[c] = 1.0;
        let col = back_substitute(r, &e);
        inv.set_column(c, &col);
    }
    inv
}

/// Column means.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

pub fn center_columns(x: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
