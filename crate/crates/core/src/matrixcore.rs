//! Complex Hermitian linear algebra: eigen-factorization, projection onto the
//! PSD cone, realification for real-valued conic solvers and covariance
//! factorization.

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::num::{czero, lit, to_f64, Real};

/// Relative asymmetry accepted (and symmetrized away) on construction.
pub const HERMITIAN_TOL: f64 = 1e-8;

/// Default relative threshold for numerical rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Dense complex Hermitian matrix.
///
/// Construction validates Hermitian symmetry up to [`HERMITIAN_TOL`] relative
/// to the Frobenius norm and stores the symmetrized `(H + Hᴴ)/2`, so every
/// value of this type is exactly Hermitian with a real diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix<T: Real> {
    inner: DMatrix<Complex<T>>,
}

impl<T: Real> HermitianMatrix<T> {
    /// Validates and symmetrizes `m`.
    pub fn new(m: DMatrix<Complex<T>>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidInput(format!(
                "Hermitian matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        let scale = to_f64(frobenius(&m));
        let asym = to_f64(max_asymmetry(&m));
        if asym > HERMITIAN_TOL * scale {
            return Err(Error::InvalidInput(format!(
                "matrix is not Hermitian: asymmetry {asym:e} exceeds {HERMITIAN_TOL:e} x norm {scale:e}"
            )));
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrizes without validation. Callers guarantee near-Hermitian input.
    pub(crate) fn symmetrized(m: DMatrix<Complex<T>>) -> Self {
        let half = lit::<T>(0.5);
        let n = m.nrows();
        let mut out = DMatrix::from_element(n, n, czero());
        for i in 0..n {
            out[(i, i)] = Complex::new(m[(i, i)].re, T::zero());
            for j in (i + 1)..n {
                let z = (m[(i, j)] + m[(j, i)].conj()) * half;
                out[(i, j)] = z;
                out[(j, i)] = z.conj();
            }
        }
        Self { inner: out }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            inner: DMatrix::from_element(n, n, czero()),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            inner: DMatrix::identity(n, n),
        }
    }

    /// Real diagonal matrix.
    pub fn from_diagonal(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.inner[(i, i)] = Complex::new(v, T::zero());
        }
        m
    }

    /// Rank-one `v vᴴ`.
    pub fn outer(v: &DVector<Complex<T>>) -> Self {
        Self::symmetrized(v * v.adjoint())
    }

    /// `W Wᴴ` for a factor with any number of columns.
    pub fn gram(w: &DMatrix<Complex<T>>) -> Self {
        Self::symmetrized(w * w.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<Complex<T>> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<Complex<T>> {
        self.inner
    }

    pub fn get(&self, i: usize, j: usize) -> Complex<T> {
        self.inner[(i, j)]
    }

    pub fn trace(&self) -> T {
        (0..self.dim()).fold(T::zero(), |acc, i| acc + self.inner[(i, i)].re)
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.dim()).map(|i| self.inner[(i, i)].re).collect()
    }

    pub fn frobenius_norm(&self) -> T {
        frobenius(&self.inner)
    }

    /// `hᴴ H h`, real for Hermitian `H`.
    pub fn quad_form(&self, h: &DVector<Complex<T>>) -> T {
        let hh = self.inner.clone() * h;
        h.iter()
            .zip(hh.iter())
            .fold(T::zero(), |acc, (a, b)| acc + (a.conj() * b).re)
    }

    /// Principal sub-block starting at `offset`.
    pub fn principal_block(&self, offset: usize, dim: usize) -> Self {
        Self {
            inner: self.inner.view((offset, offset), (dim, dim)).into_owned(),
        }
    }

    /// Arbitrary (not necessarily Hermitian) sub-block.
    pub fn block(&self, row: usize, col: usize, rows: usize, cols: usize) -> DMatrix<Complex<T>> {
        self.inner.view((row, col), (rows, cols)).into_owned()
    }

    /// Writes `b` as the principal block at `offset`.
    pub fn set_principal_block(&mut self, offset: usize, b: &HermitianMatrix<T>) {
        let d = b.dim();
        self.inner.view_mut((offset, offset), (d, d)).copy_from(&b.inner);
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            inner: self.inner.map(|z| z * s),
        }
    }

    /// Eigenvalues ascending and matching unit eigenvectors as columns.
    pub fn eigh(&self) -> (Vec<T>, DMatrix<Complex<T>>) {
        let n = self.dim();
        if n == 0 {
            return (Vec::new(), DMatrix::zeros(0, 0));
        }
        let eig = SymmetricEigen::new(self.inner.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[a]
                .partial_cmp(&eig.eigenvalues[b])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vecs = DMatrix::from_element(n, n, czero());
        for (dst, &src) in order.iter().enumerate() {
            vecs.set_column(dst, &eig.eigenvectors.column(src));
        }
        (values, vecs)
    }

    pub fn eigenvalues(&self) -> Vec<T> {
        self.eigh().0
    }

    pub fn min_eigenvalue(&self) -> T {
        self.eigenvalues().first().copied().unwrap_or_else(T::zero)
    }
}

impl<T: Real> Add for &HermitianMatrix<T> {
    type Output = HermitianMatrix<T>;
    fn add(self, rhs: Self) -> HermitianMatrix<T> {
        HermitianMatrix {
            inner: &self.inner + &rhs.inner,
        }
    }
}

impl<T: Real> Sub for &HermitianMatrix<T> {
    type Output = HermitianMatrix<T>;
    fn sub(self, rhs: Self) -> HermitianMatrix<T> {
        HermitianMatrix {
            inner: &self.inner - &rhs.inner,
        }
    }
}

impl<T: Real> Mul<T> for &HermitianMatrix<T> {
    type Output = HermitianMatrix<T>;
    fn mul(self, rhs: T) -> HermitianMatrix<T> {
        self.scale(rhs)
    }
}

fn frobenius<T: Real>(m: &DMatrix<Complex<T>>) -> T {
    m.iter()
        .fold(T::zero(), |acc, z| acc + z.norm_sqr())
        .sqrt()
}

fn max_asymmetry<T: Real>(m: &DMatrix<Complex<T>>) -> T {
    let n = m.nrows();
    let mut worst = T::zero();
    for i in 0..n {
        for j in i..n {
            let d = (m[(i, j)] - m[(j, i)].conj()).norm_sqr().sqrt();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Nearest PSD matrix in Frobenius norm: eigenvalues clamped at zero.
pub fn psd_project<T: Real>(h: &HermitianMatrix<T>) -> HermitianMatrix<T> {
    let (vals, vecs) = h.eigh();
    if vals.iter().all(|&v| v >= T::zero()) {
        return h.clone();
    }
    let n = h.dim();
    let mut out = DMatrix::from_element(n, n, czero());
    for (k, &lam) in vals.iter().enumerate() {
        if lam <= T::zero() {
            continue;
        }
        let v = vecs.column(k);
        out += (v * v.adjoint()) * Complex::new(lam, T::zero());
    }
    HermitianMatrix::symmetrized(out)
}

/// Frobenius distance between `h` and its PSD projection.
pub fn psd_projection_distance<T: Real>(h: &HermitianMatrix<T>) -> T {
    h.eigenvalues()
        .into_iter()
        .filter(|&v| v < T::zero())
        .fold(T::zero(), |acc, v| acc + v * v)
        .sqrt()
}

/// Factor `R ≈ W Wᴴ`, keeping eigen-directions above `rank_tol · trace(R)`.
///
/// Each column is phase-normalized so its largest-magnitude entry is real and
/// positive, which makes the factor a deterministic function of `R`.
pub fn factorize_psd<T: Real>(r: &HermitianMatrix<T>, rank_tol: T) -> Result<DMatrix<Complex<T>>> {
    let n = r.dim();
    let (vals, vecs) = r.eigh();
    let tr = r.trace().max(T::zero());
    let floor = rank_tol * tr;
    if let Some(&lo) = vals.first() {
        if lo < -floor {
            return Err(Error::NotPsd {
                min_eig: to_f64(lo),
                tol: to_f64(floor),
            });
        }
    }
    let keep: Vec<usize> = (0..n).rev().filter(|&k| vals[k] > floor).collect();
    let mut w = DMatrix::from_element(n, keep.len(), czero());
    for (col, &k) in keep.iter().enumerate() {
        let s = vals[k].sqrt();
        let v = vecs.column(k);
        let phase = unit_phase_of_peak(v.iter().copied());
        for i in 0..n {
            w[(i, col)] = v[i] * phase.conj() * s;
        }
    }
    Ok(w)
}

/// Unit-modulus phase of the largest-magnitude entry (1 for a zero vector).
pub(crate) fn unit_phase_of_peak<T: Real>(it: impl Iterator<Item = Complex<T>>) -> Complex<T> {
    let mut best = czero::<T>();
    let mut best_mag = T::zero();
    for z in it {
        let m = z.norm_sqr();
        if m > best_mag {
            best_mag = m;
            best = z;
        }
    }
    if best_mag > T::zero() {
        best / best_mag.sqrt()
    } else {
        Complex::new(T::one(), T::zero())
    }
}

/// Real symmetric embedding `[[Re H, −Im H], [Im H, Re H]]` of dimension `2n`.
///
/// The embedding is PSD iff `H` is, is linear in `H`, and doubles the trace.
pub fn realify_hermitian<T: Real>(h: &HermitianMatrix<T>) -> DMatrix<T> {
    let n = h.dim();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = h.get(i, j);
            out[(i, j)] = z.re;
            out[(n + i, n + j)] = z.re;
            out[(i, n + j)] = -z.im;
            out[(n + i, j)] = z.im;
        }
    }
    out
}

/// Inverse of [`realify_hermitian`] for a (possibly drifted) real embedding.
pub fn derealify<T: Real>(m: &DMatrix<T>) -> HermitianMatrix<T> {
    let n = m.nrows() / 2;
    let half = lit::<T>(0.5);
    let mut out = DMatrix::from_element(n, n, czero());
    for i in 0..n {
        for j in 0..n {
            let re = (m[(i, j)] + m[(n + i, n + j)]) * half;
            let im = (m[(n + i, j)] - m[(i, n + j)]) * half;
            out[(i, j)] = Complex::new(re, im);
        }
    }
    HermitianMatrix::symmetrized(out)
}

/// Smallest eigenvalue of a real symmetric matrix.
pub fn min_eigenvalue_sym<T: Real>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 {
        return T::zero();
    }
    let sym = (m + m.transpose()) * lit::<T>(0.5);
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(T::max_value().unwrap_or_else(T::one), |a, b| a.min(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{cj, cone};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> HermitianMatrix<f64> {
        let mut m = DMatrix::from_element(n, n, czero::<f64>());
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
        }
        HermitianMatrix::symmetrized(&m + m.adjoint())
    }

    fn random_psd(n: usize, rank: usize, rng: &mut ChaCha8Rng) -> HermitianMatrix<f64> {
        let mut w = DMatrix::from_element(n, rank, czero::<f64>());
        for z in w.iter_mut() {
            *z = Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        HermitianMatrix::gram(&w)
    }

    /// Brute-force projection through the real embedding: eigen-decompose the
    /// 2n x 2n real symmetric matrix, clamp, rebuild, map back.
    fn project_via_embedding(h: &HermitianMatrix<f64>) -> HermitianMatrix<f64> {
        let re = realify_hermitian(h);
        let eig = SymmetricEigen::new(re);
        let mut acc = DMatrix::<f64>::zeros(eig.eigenvectors.nrows(), eig.eigenvectors.nrows());
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > 0.0 {
                let v = eig.eigenvectors.column(k);
                acc += v * v.transpose() * lam;
            }
        }
        derealify(&acc)
    }

    fn dist(a: &HermitianMatrix<f64>, b: &HermitianMatrix<f64>) -> f64 {
        (a - b).frobenius_norm()
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = DMatrix::from_row_slice(2, 2, &[cone(), cone(), czero(), cone()]);
        assert!(matches!(HermitianMatrix::<f64>::new(m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn symmetrizes_small_drift() {
        let mut m = DMatrix::from_element(2, 2, cone::<f64>());
        m[(0, 1)] = Complex::new(1.0 + 1e-12, 0.0);
        let h = HermitianMatrix::new(m).unwrap();
        assert_eq!(h.get(0, 1), h.get(1, 0).conj());
    }

    #[test]
    fn project_identity_is_identity() {
        let i3 = HermitianMatrix::<f64>::identity(3);
        assert!(dist(&psd_project(&i3), &i3) < 1e-14);
    }

    #[test]
    fn project_clamps_negative_eigenvalue() {
        let h = HermitianMatrix::<f64>::from_diagonal(&[2.0, -3.0]);
        let p = psd_project(&h);
        assert!(dist(&p, &HermitianMatrix::from_diagonal(&[2.0, 0.0])) < 1e-14);
        assert!((psd_projection_distance(&h) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn project_matches_embedding_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 3, 5, 8] {
            let h = random_hermitian(n, &mut rng);
            let p = psd_project(&h);
            let q = project_via_embedding(&h);
            assert!(dist(&p, &q) < 1e-9, "n={n}: {}", dist(&p, &q));
            assert!(p.min_eigenvalue() >= -1e-10 * h.frobenius_norm());
        }
    }

    #[test]
    fn project_is_idempotent_and_fixes_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let h = random_hermitian(4, &mut rng);
            let p = psd_project(&h);
            assert!(dist(&psd_project(&p), &p) < 1e-10);
            let r = random_psd(4, 2, &mut rng);
            assert!(dist(&psd_project(&r), &r) < 1e-10);
        }
    }

    #[test]
    fn factorize_identity() {
        let w = factorize_psd(&HermitianMatrix::<f64>::identity(2), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(w.ncols(), 2);
        let r = HermitianMatrix::gram(&w);
        assert!(dist(&r, &HermitianMatrix::identity(2)) < 1e-14);
    }

    #[test]
    fn factorize_rank_one_recovers_vector_up_to_phase() {
        let v = DVector::from_vec(vec![
            Complex::new(1.0, 2.0),
            Complex::new(-0.5, 0.25),
            Complex::new(0.0, -1.0),
        ]);
        let w = factorize_psd(&HermitianMatrix::outer(&v), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(w.ncols(), 1);
        // w = v·e^{jφ}: |<w, v>| = |v|^2
        let ip: Complex<f64> = w.column(0).iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
        assert!((ip.norm() - v.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn factorize_random_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for (n, rank) in [(3, 3), (6, 2), (8, 8), (12, 5)] {
            let r = random_psd(n, rank, &mut rng);
            let w = factorize_psd(&r, DEFAULT_RANK_TOL).unwrap();
            assert_eq!(w.ncols(), rank);
            let err = dist(&HermitianMatrix::gram(&w), &r);
            assert!(err < 1e-8 * r.trace(), "n={n} err={err}");
        }
    }

    #[test]
    fn factorize_rejects_indefinite() {
        let h = HermitianMatrix::<f64>::from_diagonal(&[1.0, -0.5]);
        assert!(matches!(factorize_psd(&h, DEFAULT_RANK_TOL), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn realify_real_matrix_is_block_diagonal() {
        let h = HermitianMatrix::<f64>::new(DMatrix::from_row_slice(
            2,
            2,
            &[Complex::new(2.0, 0.0), Complex::new(1.0, 0.0), Complex::new(1.0, 0.0), Complex::new(3.0, 0.0)],
        ))
        .unwrap();
        let r = realify_hermitian(&h);
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[2.0, 1.0, 0.0, 0.0, 1.0, 3.0, 0.0, 0.0, 0.0, 0.0, 2.0, 1.0, 0.0, 0.0, 1.0, 3.0],
        );
        assert_eq!(r, expected);
    }

    #[test]
    fn realify_known_spectrum() {
        let h = HermitianMatrix::<f64>::new(DMatrix::from_row_slice(
            2,
            2,
            &[cone(), cj(), -cj::<f64>(), cone()],
        ))
        .unwrap();
        let r = realify_hermitian(&h);
        let mut ev: Vec<f64> = SymmetricEigen::new(r.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (got, want) in ev.iter().zip([0.0, 0.0, 2.0, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((r.trace() - 2.0 * h.trace()).abs() < 1e-14);
    }

    #[test]
    fn realify_preserves_psd_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for i in 0..50 {
            let h = if i % 2 == 0 {
                random_hermitian(3, &mut rng)
            } else {
                random_psd(3, 2, &mut rng)
            };
            let lam_c = h.min_eigenvalue();
            let lam_r = min_eigenvalue_sym(&realify_hermitian(&h));
            assert!((lam_c - lam_r).abs() < 1e-10, "{lam_c} vs {lam_r}");
        }
    }

    #[test]
    fn realify_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let a = random_hermitian(3, &mut rng);
        let b = random_hermitian(3, &mut rng);
        let (alpha, beta) = (0.75, -2.5);
        let lhs = realify_hermitian(&(&a.scale(alpha) + &b.scale(beta)));
        let rhs = realify_hermitian(&a) * alpha + realify_hermitian(&b) * beta;
        assert!((lhs - rhs).amax() < 1e-14);
    }

    #[test]
    fn works_in_single_precision() {
        let h = HermitianMatrix::<f32>::from_diagonal(&[2.0, -3.0, 0.5]);
        let p = psd_project(&h);
        assert!((p.trace() - 2.5).abs() < 1e-5);
        let w = factorize_psd(&p, 1e-6).unwrap();
        assert_eq!(w.ncols(), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn herm_strategy(n: usize) -> impl Strategy<Value = HermitianMatrix<f64>> {
            proptest::collection::vec(-5.0f64..5.0, 2 * n * n).prop_map(move |v| {
                let m = DMatrix::from_fn(n, n, |i, j| Complex::new(v[2 * (i * n + j)], v[2 * (i * n + j) + 1]));
                HermitianMatrix::symmetrized(&m + m.adjoint())
            })
        }

        proptest! {
            #[test]
            fn projection_idempotent(h in herm_strategy(4)) {
                let p = psd_project(&h);
                let pp = psd_project(&p);
                prop_assert!((&pp - &p).frobenius_norm() < 1e-10 * (1.0 + h.frobenius_norm()));
            }

            #[test]
            fn factor_then_gram_is_identity_on_psd(h in herm_strategy(4)) {
                let p = psd_project(&h);
                let w = factorize_psd(&p, DEFAULT_RANK_TOL).unwrap();
                let err = (&HermitianMatrix::gram(&w) - &p).frobenius_norm();
                prop_assert!(err <= 1e-8 * p.trace().max(1e-300) + 1e-12);
            }
        }
    }
}
