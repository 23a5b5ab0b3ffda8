//! Dense symmetric-matrix numerics.
//!
//! Everything here runs in `f64`. Dimensions are small (channel counts and
//! ensemble sizes), so the eigensolver is a plain cyclic Jacobi sweep.

use crate::error::{Error, Result};

/// Relative off-diagonal mass at which Jacobi sweeps stop.
const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Default power-iteration tolerance.
pub const POWER_TOL: f64 = 1e-10;
/// Default power-iteration budget.
pub const POWER_MAX_ITER: usize = 1000;

/// A square, exactly symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "SymMatrix dimension must be positive");
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = d;
        }
        m
    }

    /// Builds from row-major entries. Entries whose transposes disagree by
    /// more than a relative 1e-9 are rejected; small disagreements are
    /// averaged so the stored matrix is exactly symmetric.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("matrix dimension must be positive".into()));
        }
        if data.len() != dim * dim {
            return Err(Error::Shape(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        let scale = data.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
        let mut m = Self { dim, data };
        for i in 0..dim {
            for j in (i + 1)..dim {
                let a = m.data[i * dim + j];
                let b = m.data[j * dim + i];
                if (a - b).abs() > 1e-9 * scale {
                    return Err(Error::Numerical(format!(
                        "matrix not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
                let avg = 0.5 * (a + b);
                m.data[i * dim + j] = avg;
                m.data[j * dim + i] = avg;
            }
        }
        Ok(m)
    }

    /// `v vᵀ`.
    pub fn outer(v: &[f64]) -> Self {
        let mut m = Self::zeros(v.len());
        m.add_outer(v, 1.0);
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets `(i, j)` and `(j, i)` together.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
        self.data[j * self.dim + i] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += alpha · v vᵀ`.
    pub fn add_outer(&mut self, v: &[f64], alpha: f64) {
        assert_eq!(v.len(), self.dim);
        let n = self.dim;
        for i in 0..n {
            let vi = alpha * v[i];
            for j in i..n {
                let x = vi * v[j];
                self.data[i * n + j] += x;
                if i != j {
                    self.data[j * n + i] += x;
                }
            }
        }
    }

    /// `self += alpha · other`.
    pub fn add_scaled(&mut self, other: &SymMatrix, alpha: f64) {
        assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    /// Frobenius norm of `self − other`.
    pub fn distance(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim);
        (0..self.dim)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `v ᵀ A v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        self.mul_vec(v).iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// Dense product `self · other` (general, row-major `dim × dim`).
    pub fn matmul(&self, other: &SymMatrix) -> Vec<f64> {
        dense_matmul(&self.data, &other.data, self.dim)
    }

    /// `self · other · self`, which is symmetric whenever both operands are.
    pub fn sandwich(&self, other: &SymMatrix) -> SymMatrix {
        let n = self.dim;
        let left = self.matmul(other);
        let full = dense_matmul(&left, &self.data, n);
        let mut out = SymMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                out.set(i, j, 0.5 * (full[i * n + j] + full[j * n + i]));
            }
        }
        out
    }
}

fn dense_matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

/// Eigenvalues (descending) and matching orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct EigPair {
    pub values: Vec<f64>,
    /// Row-major `dim × dim`; column `j` is the eigenvector of `values[j]`.
    pub vectors: Vec<f64>,
}

impl EigPair {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, j: usize) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| self.vectors[i * n + j]).collect()
    }

    /// `V · diag(f(λ)) · Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.dim();
        let mapped: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = SymMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += self.vectors[i * n + k] * mapped[k] * self.vectors[j * n + k];
                }
                out.set(i, j, acc);
            }
        }
        out
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eig(a: &SymMatrix) -> Result<EigPair> {
    if !a.is_finite() {
        return Err(Error::Numerical("non-finite entry in eigensolver input".into()));
    }
    let n = a.dim();
    let mut m = a.data.clone();
    let mut v = SymMatrix::identity(n).data;
    let norm = a.frobenius_norm();
    let threshold = JACOBI_TOL * norm;

    let off_mass = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = norm == 0.0 || off_mass(&m) <= threshold;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::Convergence(sweeps));
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
        converged = off_mass(&m) <= threshold;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let values: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        // Largest-magnitude component positive, for reproducible output.
        let mut pivot = 0;
        for k in 0..n {
            if v[k * n + src].abs() > v[pivot * n + src].abs() {
                pivot = k;
            }
        }
        let sign = if v[pivot * n + src] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            vectors[k * n + dst] = sign * v[k * n + src];
        }
    }
    Ok(EigPair { values, vectors })
}

/// `R^{-1/2}` with eigenvalues clamped from below at `floor`.
pub fn inv_sqrt(r: &SymMatrix, floor: f64) -> Result<SymMatrix> {
    if !(floor > 0.0) || !floor.is_finite() {
        return Err(Error::Config(format!("eigenvalue floor must be positive, got {floor}")));
    }
    let eig = sym_eig(r)?;
    Ok(eig.reconstruct_with(|l| 1.0 / l.max(floor).sqrt()))
}

/// Eigenvalue floor relative to the mean eigenvalue: `rel · trace/dim`,
/// never below the smallest positive normal double.
pub fn relative_floor(r: &SymMatrix, rel: f64) -> f64 {
    (rel * r.trace() / r.dim() as f64).max(f64::MIN_POSITIVE)
}

/// Unit eigenvector of the algebraically largest eigenvalue.
///
/// Power iteration on the Gershgorin-shifted (hence PSD) matrix, accelerated
/// by repeated squaring, started from the normalized all-ones vector. The
/// sign is fixed so that the entries sum to a non-negative value.
pub fn principal_eigenvector(q: &SymMatrix, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    if !q.is_finite() {
        return Err(Error::Numerical("non-finite entry in power iteration input".into()));
    }
    if max_iter == 0 {
        return Err(Error::Config("max_iter must be at least 1".into()));
    }
    let n = q.dim();
    let ones = vec![1.0 / (n as f64).sqrt(); n];

    // Lower Gershgorin bound: q − shift·I is PSD, so its dominant
    // eigenvalue is q's algebraically largest one.
    let shift = (0..n)
        .map(|i| {
            let radius: f64 = (0..n).filter(|&j| j != i).map(|j| q.get(i, j).abs()).sum();
            q.get(i, i) - radius
        })
        .fold(f64::INFINITY, f64::min);
    let mut shifted = q.clone();
    for i in 0..n {
        shifted.data[i * n + i] -= shift;
    }
    if shifted.frobenius_norm() == 0.0 {
        // Scalar matrix: every vector is an eigenvector.
        return Ok(ones);
    }

    let residual = |v: &[f64]| -> (f64, f64) {
        let qv = q.mul_vec(v);
        let lambda: f64 = qv.iter().zip(v).map(|(a, b)| a * b).sum();
        let r = qv
            .iter()
            .zip(v)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        (r, lambda)
    };

    let mut power = shifted.data.clone();
    normalize_max(&mut power);
    let mut v = ones.clone();
    for _ in 0..max_iter {
        let next = dense_matmul(&power, &power, n);
        let mut next = symmetrized(next, n);
        normalize_max(&mut next);
        let delta = power
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        power = next;

        v = project_start(&power, &ones, n);
        let (r, lambda) = residual(&v);
        if r <= tol * lambda.abs() || delta == 0.0 {
            break;
        }
    }

    // Polish with plain shifted power steps.
    for _ in 0..max_iter {
        let (r, lambda) = residual(&v);
        if r <= tol * lambda.abs() {
            fix_sign(&mut v);
            return Ok(v);
        }
        let mut w = shifted.mul_vec(&v);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        w.iter_mut().for_each(|x| *x /= norm);
        v = w;
    }
    let (r, lambda) = residual(&v);
    if r <= tol * lambda.abs() {
        fix_sign(&mut v);
        return Ok(v);
    }
    Err(Error::Convergence(max_iter))
}

fn symmetrized(mut m: Vec<f64>, n: usize) -> Vec<f64> {
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = avg;
            m[j * n + i] = avg;
        }
    }
    m
}

fn normalize_max(m: &mut [f64]) {
    let max = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if max > 0.0 {
        m.iter_mut().for_each(|v| *v /= max);
    }
}

/// Normalized `P · start`, falling back to P's largest column when the
/// start vector is orthogonal to the dominant eigenspace.
fn project_start(p: &[f64], start: &[f64], n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| p[i * n + j] * start[j]).sum())
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let p_scale = p.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if norm > 1e-8 * p_scale {
        v.iter_mut().for_each(|x| *x /= norm);
        return v;
    }
    let mut best = 0;
    let mut best_norm = -1.0;
    for j in 0..n {
        let cn: f64 = (0..n).map(|i| p[i * n + j].powi(2)).sum();
        if cn > best_norm {
            best_norm = cn;
            best = j;
        }
    }
    let cn = best_norm.sqrt();
    (0..n).map(|i| p[i * n + best] / cn).collect()
}

fn fix_sign(v: &mut [f64]) {
    let sum: f64 = v.iter().sum();
    let flip = if sum != 0.0 {
        sum < 0.0
    } else {
        v.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0)
    };
    if flip {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    pub(crate) fn random_symmetric(rng: &mut impl Rng, n: usize) -> SymMatrix {
        let mut m = SymMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, rng.sample(StandardNormal));
            }
        }
        m
    }

    pub(crate) fn random_spd(rng: &mut impl Rng, n: usize) -> SymMatrix {
        let mut m = SymMatrix::identity(n).scaled(0.1);
        for _ in 0..(n + 3) {
            let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            m.add_outer(&v, 1.0);
        }
        m
    }

    fn orthonormality_error(e: &EigPair) -> f64 {
        let n = e.dim();
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = (0..n).map(|k| e.vectors[k * n + a] * e.vectors[k * n + b]).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    #[test]
    fn eig_identity() {
        let e = sym_eig(&SymMatrix::identity(3)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
        assert!(orthonormality_error(&e) < 1e-12);
    }

    #[test]
    fn eig_diagonal_is_sorted_and_axis_aligned() {
        let e = sym_eig(&SymMatrix::from_diag(&[1.0, 4.0])).unwrap();
        assert_eq!(e.values, vec![4.0, 1.0]);
        assert_eq!(e.vector(0), vec![0.0, 1.0]);
        assert_eq!(e.vector(1), vec![1.0, 0.0]);
    }

    #[test]
    fn eig_reconstructs_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random_spd(&mut rng, 5);
            let e = sym_eig(&a).unwrap();
            let rebuilt = e.reconstruct_with(|l| l);
            assert!(rebuilt.distance(&a) / a.frobenius_norm() <= 1e-8);
            assert!(orthonormality_error(&e) <= 1e-10);
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn eig_rejects_non_finite() {
        let mut a = SymMatrix::identity(2);
        a.set(0, 1, f64::NAN);
        assert!(matches!(sym_eig(&a), Err(Error::Numerical(_))));
        assert!(matches!(inv_sqrt(&a, 1e-12), Err(Error::Numerical(_))));
    }

    #[test]
    fn inv_sqrt_examples() {
        let i4 = SymMatrix::identity(4);
        assert!(inv_sqrt(&i4, 1e-12).unwrap().distance(&i4) < 1e-14);
        let s = inv_sqrt(&SymMatrix::from_diag(&[4.0, 1.0]), 1e-12).unwrap();
        assert!(s.distance(&SymMatrix::from_diag(&[0.5, 1.0])) < 1e-14);
    }

    #[test]
    fn inv_sqrt_defining_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..8 {
            let r = random_spd(&mut rng, n);
            let s = inv_sqrt(&r, 1e-12).unwrap();
            let srs = s.sandwich(&r);
            assert!(srs.distance(&SymMatrix::identity(n)) <= 1e-8, "n={n}");
        }
    }

    #[test]
    fn inv_sqrt_floors_singular_input() {
        let r = SymMatrix::outer(&[1.0, 2.0, 3.0]);
        let floor = relative_floor(&r, 1e-12);
        let s = inv_sqrt(&r, floor).unwrap();
        assert!(s.is_finite());
        let e = sym_eig(&s).unwrap();
        assert!(e.values.iter().all(|&l| l > 0.0));
    }

    #[test]
    fn inv_sqrt_rejects_bad_floor() {
        assert!(matches!(inv_sqrt(&SymMatrix::identity(2), 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn principal_rank_one() {
        let u = [0.6, 0.8, 0.0];
        let v = principal_eigenvector(&SymMatrix::outer(&u), POWER_TOL, POWER_MAX_ITER).unwrap();
        for (a, b) in u.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn principal_diagonal() {
        let v = principal_eigenvector(&SymMatrix::from_diag(&[3.0, 1.0]), POWER_TOL, POWER_MAX_ITER)
            .unwrap();
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
    }

    #[test]
    fn principal_prefers_largest_algebraic() {
        // |−5| dominates in magnitude; the algebraic top is 2.
        let v = principal_eigenvector(&SymMatrix::from_diag(&[-5.0, 2.0]), POWER_TOL, POWER_MAX_ITER)
            .unwrap();
        assert!(v[0].abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn principal_matches_full_eig() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let q = random_symmetric(&mut rng, 6);
            let v = principal_eigenvector(&q, POWER_TOL, POWER_MAX_ITER).unwrap();
            let top = sym_eig(&q).unwrap().vector(0);
            let dot: f64 = v.iter().zip(&top).map(|(a, b)| a * b).sum();
            let sign = dot.signum();
            for (a, b) in v.iter().zip(&top) {
                assert!((a - sign * b).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn principal_is_deterministic_and_sign_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_symmetric(&mut rng, 5);
        let a = principal_eigenvector(&q, POWER_TOL, POWER_MAX_ITER).unwrap();
        let b = principal_eigenvector(&q, POWER_TOL, POWER_MAX_ITER).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().sum::<f64>() >= 0.0);
    }

    #[test]
    fn principal_scalar_and_zero_matrices() {
        let v = principal_eigenvector(&SymMatrix::zeros(3), POWER_TOL, POWER_MAX_ITER).unwrap();
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        let v = principal_eigenvector(&SymMatrix::identity(3).scaled(2.0), POWER_TOL, 1).unwrap();
        assert!(v.iter().all(|x| (x - 1.0 / 3f64.sqrt()).abs() < 1e-12));
    }

    #[test]
    fn symmetric_construction() {
        assert!(SymMatrix::from_row_major(2, vec![1.0, 2.0, 2.5, 1.0]).is_err());
        assert!(SymMatrix::from_row_major(2, vec![1.0, 2.0]).is_err());
        let m = SymMatrix::from_row_major(2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert_eq!(m.get(0, 1), m.get(1, 0));
    }
}
