//! Dense row-major matrices and the Cholesky routines the GP engine is built on.
//!
//! Everything here works on full `n × n` storage; only the lower triangle of a factor is
//! meaningful. The O(n³) work is blocked so that it runs through the packed
//! matrix-multiply kernel in [`gemm`].

mod gemm;

use gemm::{gemm, Input, Operand, Packing, Update};

use crate::scalar::{dot, Scalar};

/// Block size of the factorization and inversion loops.
const NB: usize = 64;

/// Inverts the `bs × bs` lower-triangular block of `src` at `off` (leading dimension
/// `ld`) into `dst` at `doff` (leading dimension `dld`). Entries above the diagonal of the
/// destination are left untouched.
fn invert_lower_block<T: Scalar>(src: &[T], off: usize, ld: usize, bs: usize, dst: &mut [T], doff: usize, dld: usize) {
    for i in 0..bs {
        let li = &src[off + i * ld..off + i * ld + i + 1];
        dst[doff + i * dld + i] = T::one() / li[i];
        for j in 0..i {
            let mut s = T::zero();
            for (p, lip) in li.iter().enumerate().take(i).skip(j) {
                s = s + *lip * dst[doff + p * dld + j];
            }
            dst[doff + i * dld + j] = -s / li[i];
        }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    /// Builds a matrix from row-major data. Panics if the length does not match.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// Largest absolute difference between `self[i][j]` and `self[j][i]`.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Scratch buffers for the blocked factorization and inversion routines. Reusing one
/// across calls of the same size avoids reallocating (and re-faulting) large buffers.
#[derive(Debug, Clone, Default)]
pub struct Workspace<T> {
    pack: Packing<T>,
    block: Vec<T>,
    panel: Vec<T>,
    inv_factor: Matrix<T>,
}

impl<T> Default for Matrix<T> {
    fn default() -> Self {
        Self { rows: 0, cols: 0, data: Vec::new() }
    }
}

impl<T: Scalar> Matrix<T> {
    /// Reshapes to `rows × cols` of zeros, keeping the allocation when it is big enough.
    pub fn reset(&mut self, rows: usize, cols: usize) {
        self.rows = rows;
        self.cols = cols;
        self.data.clear();
        self.data.resize(rows * cols, T::zero());
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Scalar> Default for Cholesky<T> {
    fn default() -> Self {
        Self { l: Matrix::default() }
    }
}

impl<T: Scalar> Cholesky<T> {
    /// Factorizes the symmetric matrix whose lower triangle is stored in `a`.
    ///
    /// Returns `None` when a pivot is not strictly positive and finite.
    pub fn factor(a: &Matrix<T>) -> Option<Self> {
        let mut c = Self::default();
        c.refactor(a, &mut Workspace::default()).then_some(c)
    }

    /// Factorizes `a` into `self`, reusing its storage. On `false` (a pivot that is not
    /// strictly positive and finite) the contents of `self` are unspecified.
    pub fn refactor(&mut self, a: &Matrix<T>, ws: &mut Workspace<T>) -> bool {
        assert_eq!(a.rows, a.cols, "Cholesky needs a square matrix");
        let n = a.rows;
        self.l.reset(n, n);
        for i in 0..n {
            self.l.data[i * n..i * n + i + 1].copy_from_slice(&a.data[i * n..i * n + i + 1]);
        }
        let d = &mut self.l.data;
        for k0 in (0..n).step_by(NB) {
            let end = (k0 + NB).min(n);
            let kb = end - k0;
            // Left-looking update of the whole block column by the finished columns.
            // The strictly upper part of the diagonal block picks up junk and is cleared below.
            gemm(
                n - k0,
                kb,
                k0,
                Input::dst(Operand::rows(k0 * n, n)),
                Input::dst(Operand::transposed(k0 * n, n)),
                d,
                Operand::rows(k0 * n + k0, n),
                Update::Subtract,
                &mut ws.pack,
            );
            for r in k0..end {
                for c in k0..=r {
                    let s = d[r * n + c] - dot(&d[r * n + k0..r * n + c], &d[c * n + k0..c * n + c]);
                    if r == c {
                        if !(s > T::zero()) || !s.is_finite() {
                            return false;
                        }
                        d[r * n + c] = s.sqrt();
                    } else {
                        d[r * n + c] = s / d[c * n + c];
                    }
                }
                d[r * n + r + 1..r * n + end].fill(T::zero());
            }
            // Rows below the diagonal block: L21 = A21 · L11⁻ᵀ through the inverted block.
            if end < n {
                ws.block.clear();
                ws.block.resize(kb * kb, T::zero());
                invert_lower_block(d, k0 * n + k0, n, kb, &mut ws.block, 0, kb);
                ws.panel.clear();
                ws.panel.resize((n - end) * kb, T::zero());
                gemm(
                    n - end,
                    kb,
                    kb,
                    Input::of(&*d, Operand::rows(end * n + k0, n)),
                    Input::of(&ws.block, Operand::transposed(0, kb)),
                    &mut ws.panel,
                    Operand::rows(0, kb),
                    Update::Add,
                    &mut ws.pack,
                );
                for (row, src) in d[end * n..].chunks_exact_mut(n).zip(ws.panel.chunks_exact(kb)) {
                    row[k0..end].copy_from_slice(src);
                }
            }
        }
        true
    }

    pub fn dim(&self) -> usize {
        self.l.rows
    }

    pub fn factor_matrix(&self) -> &Matrix<T> {
        &self.l
    }

    /// Smallest diagonal entry of `L`; positive for every successfully built factor.
    pub fn min_diagonal(&self) -> T {
        (0..self.dim()).map(|i| self.l.get(i, i)).fold(T::infinity(), T::min)
    }

    /// `log |A| = 2 Σ log L_ii`.
    pub fn log_det(&self) -> T {
        let two = T::lit(2.0);
        two * (0..self.dim()).map(|i| self.l.get(i, i).ln()).sum::<T>()
    }

    /// Solves `L x = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [T]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        for i in 0..n {
            let row = &self.l.data[i * n..i * n + i];
            b[i] = (b[i] - dot(row, &b[..i])) / self.l.data[i * n + i];
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [T]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        for i in (0..n).rev() {
            let xi = b[i] / self.l.data[i * n + i];
            b[i] = xi;
            let row = &self.l.data[i * n..i * n + i];
            for (bk, &lik) in b[..i].iter_mut().zip(row) {
                *bk = *bk - lik * xi;
            }
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    /// `L⁻¹`, lower triangular, zero above the diagonal.
    pub fn inverse_factor(&self) -> Matrix<T> {
        let mut x = Matrix::default();
        self.inverse_factor_into(&mut x, &mut Workspace::default());
        x
    }

    fn inverse_factor_into(&self, x: &mut Matrix<T>, ws: &mut Workspace<T>) {
        let n = self.dim();
        let l = &self.l.data;
        x.reset(n, n);
        let xd = &mut x.data;
        let panel = &mut ws.panel;
        for i0 in (0..n).step_by(NB) {
            let i1 = (i0 + NB).min(n);
            let bs = i1 - i0;
            invert_lower_block(l, i0 * n + i0, n, bs, xd, i0 * n + i0, n);
            if i0 == 0 {
                continue;
            }
            // P = L[block, ..i0] · X[..i0, ..i0], one column block at a time so the
            // zero upper triangle of X is skipped.
            panel.clear();
            panel.resize(bs * i0, T::zero());
            for j0 in (0..i0).step_by(NB) {
                let j1 = (j0 + NB).min(i0);
                gemm(
                    bs,
                    j1 - j0,
                    i0 - j0,
                    Input::of(l, Operand::rows(i0 * n + j0, n)),
                    Input::of(xd, Operand::rows(j0 * n + j0, n)),
                    panel,
                    Operand::rows(j0, i0),
                    Update::Add,
                    &mut ws.pack,
                );
            }
            // X[block, ..i0] = −X[block, block] · P
            gemm(
                bs,
                i0,
                bs,
                Input::dst(Operand::rows(i0 * n + i0, n)),
                Input::of(panel, Operand::rows(0, i0)),
                xd,
                Operand::rows(i0 * n, n),
                Update::Subtract,
                &mut ws.pack,
            );
        }
    }

    /// Lower triangle (row-major, `j ≤ i`) of the inverse `A⁻¹ = L⁻ᵀ L⁻¹`.
    ///
    /// Entries above the diagonal are left at zero; see [`Cholesky::inverse`] for the full
    /// symmetric matrix.
    pub fn inverse_lower(&self) -> Matrix<T> {
        let mut inv = Matrix::default();
        self.inverse_lower_into(&mut inv, &mut Workspace::default());
        inv
    }

    /// [`Cholesky::inverse_lower`] into existing storage.
    pub fn inverse_lower_into(&self, inv: &mut Matrix<T>, ws: &mut Workspace<T>) {
        let n = self.dim();
        let mut x = std::mem::take(&mut ws.inv_factor);
        self.inverse_factor_into(&mut x, ws);
        inv.reset(n, n);
        for i0 in (0..n).step_by(NB) {
            let i1 = (i0 + NB).min(n);
            // rows of L⁻¹ above i0 vanish in columns ≥ i0
            gemm(
                i1 - i0,
                i1,
                n - i0,
                Input::of(&x.data, Operand::transposed(i0 * n + i0, n)),
                Input::of(&x.data, Operand::rows(i0 * n, n)),
                &mut inv.data,
                Operand::rows(i0 * n, n),
                Update::Add,
                &mut ws.pack,
            );
            for i in i0..i1 {
                inv.data[i * n + i + 1..i * n + i1].fill(T::zero());
            }
        }
        ws.inv_factor = x;
    }

    /// Full symmetric inverse `A⁻¹`.
    pub fn inverse(&self) -> Matrix<T> {
        let mut inv = self.inverse_lower();
        let n = self.dim();
        for i in 0..n {
            for j in 0..i {
                inv.data[j * n + i] = inv.data[i * n + j];
            }
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Matrix<f64> {
        // B Bᵀ + n I for a fixed B
        let b = Matrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4);
        Matrix::from_fn(n, n, |i, j| {
            let s: f64 = (0..n).map(|k| b.get(i, k) * b.get(j, k)).sum();
            s + if i == j { n as f64 } else { 0.0 }
        })
    }

    #[test]
    fn factor_reconstructs_input() {
        let a = spd(13);
        let c = Cholesky::factor(&a).unwrap();
        let l = c.factor_matrix();
        for i in 0..13 {
            for j in 0..13 {
                let s: f64 = (0..13).map(|k| l.get(i, k) * l.get(j, k)).sum();
                assert!((s - a.get(i, j)).abs() < 1e-12);
            }
        }
        assert!(c.min_diagonal() > 0.0);
    }

    #[test]
    fn solve_and_inverse_agree() {
        let a = spd(17);
        let c = Cholesky::factor(&a).unwrap();
        let b: Vec<f64> = (0..17).map(|i| (i as f64).sin()).collect();
        let x = c.solve(&b);
        let r = a.mul_vec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }
        let inv = c.inverse();
        let x2 = inv.mul_vec(&b);
        for (p, q) in x.iter().zip(&x2) {
            assert!((p - q).abs() < 1e-12);
        }
        assert_eq!(inv.asymmetry(), 0.0);
    }

    #[test]
    fn blocked_paths_cover_ragged_sizes() {
        for n in [1, 2, 3, 5, 31, 32, 33, 64, 70, 97] {
            let a = spd(n);
            let c = Cholesky::factor(&a).unwrap();
            let inv = c.inverse();
            for i in 0..n {
                for j in 0..n {
                    let s: f64 = (0..n).map(|k| a.get(i, k) * inv.get(k, j)).sum();
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((s - e).abs() < 1e-10, "n={n} ({i},{j}) {s}");
                }
            }
        }
    }

    #[test]
    fn log_det_of_diagonal() {
        let a = Matrix::from_fn(3, 3, |i, j| if i == j { (i + 1) as f64 } else { 0.0 });
        let c = Cholesky::factor(&a).unwrap();
        assert!((c.log_det() - 6f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rejects_indefinite() {
        let a = Matrix::from_row_major(2, 2, vec![1.0, 2.0, 2.0, 1.0]);
        assert!(Cholesky::factor(&a).is_none());
        let z = Matrix::<f32>::zeros(1, 1);
        assert!(Cholesky::factor(&z).is_none());
    }
}
