//! Packed matrix-multiply update `C ± A·B` on strided row-major storage.
//!
//! Operands are copied into panels of `MR` rows and `NR` columns so that the micro
//! kernel streams contiguous memory and keeps an `MR × NR` tile of `C` in registers.

use crate::scalar::{fmadd, Scalar};

// With AVX-512 there are 32 vector registers, enough for an 8 × 16 tile of f64.
#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
const MR: usize = 8;
#[cfg(not(all(target_arch = "x86_64", target_feature = "avx512f")))]
const MR: usize = 4;
const NR: usize = 16;
const KC: usize = 256;
const MC: usize = 64;

/// Element `(i, j)` of an operand lives at `off + i·rs + j·cs`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Operand {
    pub off: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Operand {
    pub fn rows(off: usize, ld: usize) -> Self {
        Self { off, rs: ld, cs: 1 }
    }

    /// The transpose of a row-major block.
    pub fn transposed(off: usize, ld: usize) -> Self {
        Self { off, rs: 1, cs: ld }
    }

    #[inline(always)]
    fn at(&self, i: usize, j: usize) -> usize {
        self.off + i * self.rs + j * self.cs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Update {
    Add,
    Subtract,
}

/// Packing buffers, kept between calls so repeated products do not allocate.
#[derive(Debug, Clone, Default)]
pub(crate) struct Packing<T> {
    a: Vec<T>,
    b: Vec<T>,
}

/// Packs rows `0..m`, columns `p0..p0 + kc` of `a` as consecutive `MR`-row panels, each
/// stored column by column and zero padded.
fn pack_a<T: Scalar>(src: &[T], a: Operand, m: usize, p0: usize, kc: usize, out: &mut Vec<T>) {
    out.clear();
    out.resize(m.div_ceil(MR) * MR * kc, T::zero());
    for (ip, panel) in out.chunks_exact_mut(MR * kc).enumerate() {
        let i0 = ip * MR;
        let mr = MR.min(m - i0);
        if a.rs == 1 {
            // column p of the panel is contiguous in the source
            for (p, dst) in panel.chunks_exact_mut(MR).enumerate() {
                let s = a.at(i0, p0 + p);
                dst[..mr].copy_from_slice(&src[s..s + mr]);
            }
        } else {
            for ii in 0..mr {
                let s = a.at(i0 + ii, p0);
                let row = (0..kc).map(|p| src[s + p * a.cs]);
                for (dst, v) in panel[ii..].iter_mut().step_by(MR).zip(row) {
                    *dst = v;
                }
            }
        }
    }
}

/// Packs rows `p0..p0 + kc`, columns `0..n` of `b` as consecutive `NR`-column panels,
/// each stored row by row and zero padded.
fn pack_b<T: Scalar>(src: &[T], b: Operand, n: usize, p0: usize, kc: usize, out: &mut Vec<T>) {
    out.clear();
    out.resize(n.div_ceil(NR) * NR * kc, T::zero());
    for (jp, panel) in out.chunks_exact_mut(NR * kc).enumerate() {
        let j0 = jp * NR;
        let nr = NR.min(n - j0);
        if b.cs == 1 {
            for (p, dst) in panel.chunks_exact_mut(NR).enumerate() {
                let s = b.at(p0 + p, j0);
                dst[..nr].copy_from_slice(&src[s..s + nr]);
            }
        } else {
            for jj in 0..nr {
                let s = b.at(p0, j0 + jj);
                let col = (0..kc).map(|p| src[s + p * b.rs]);
                for (dst, v) in panel[jj..].iter_mut().step_by(NR).zip(col) {
                    *dst = v;
                }
            }
        }
    }
}

#[inline(always)]
fn micro_kernel<T: Scalar>(pa: &[T], pb: &[T]) -> [[T; NR]; MR] {
    #[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
    if std::any::TypeId::of::<T>() == std::any::TypeId::of::<f64>() {
        // SAFETY: T is f64, so the slices and the returned array have f64 layout.
        unsafe {
            let pa = std::slice::from_raw_parts(pa.as_ptr().cast::<f64>(), pa.len());
            let pb = std::slice::from_raw_parts(pb.as_ptr().cast::<f64>(), pb.len());
            return std::mem::transmute_copy(&avx512::kernel_f64(pa, pb));
        }
    }
    let mut acc = [[T::zero(); NR]; MR];
    for (a, b) in pa.chunks_exact(MR).zip(pb.chunks_exact(NR)) {
        let b: &[T; NR] = b.try_into().unwrap();
        for i in 0..MR {
            let ai = a[i];
            for j in 0..NR {
                acc[i][j] = fmadd(ai, b[j], acc[i][j]);
            }
        }
    }
    acc
}

#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
mod avx512 {
    use std::arch::x86_64::*;

    use super::{MR, NR};

    /// The f64 tile with each row of `C` held in two 512-bit registers. Every element
    /// sees the same fused multiply-add sequence as the portable kernel.
    #[inline(always)]
    pub(super) fn kernel_f64(pa: &[f64], pb: &[f64]) -> [[f64; NR]; MR] {
        let mut out = [[0.0; NR]; MR];
        // SAFETY: avx512f is enabled at compile time, and every load or store covers
        // exactly eight elements of a chunk or row that holds at least eight.
        unsafe {
            let mut acc = [[_mm512_setzero_pd(); 2]; MR];
            for (a, b) in pa.chunks_exact(MR).zip(pb.chunks_exact(NR)) {
                let b0 = _mm512_loadu_pd(b.as_ptr());
                let b1 = _mm512_loadu_pd(b[8..].as_ptr());
                for (row, &ai) in acc.iter_mut().zip(a) {
                    let ai = _mm512_set1_pd(ai);
                    row[0] = _mm512_fmadd_pd(ai, b0, row[0]);
                    row[1] = _mm512_fmadd_pd(ai, b1, row[1]);
                }
            }
            for (dst, row) in out.iter_mut().zip(acc) {
                let (lo, hi) = dst.split_at_mut(8);
                _mm512_storeu_pd(lo.as_mut_ptr(), row[0]);
                _mm512_storeu_pd(hi.as_mut_ptr(), row[1]);
            }
        }
        out
    }
}

/// A multiplication operand: a strided block of `src`, or of the destination buffer when
/// `src` is `None`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Input<'a, T> {
    pub src: Option<&'a [T]>,
    pub op: Operand,
}

impl<'a, T> Input<'a, T> {
    pub fn of(src: &'a [T], op: Operand) -> Self {
        Self { src: Some(src), op }
    }

    /// Reads from the destination buffer; the `C` block must not overlap it.
    pub fn dst(op: Operand) -> Self {
        Self { src: None, op }
    }
}

/// `C ← C ± A·B` for an `m × k` operand `A` and a `k × n` operand `B`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    n: usize,
    k: usize,
    a: Input<'_, T>,
    b: Input<'_, T>,
    dst: &mut [T],
    c: Operand,
    update: Update,
    pack: &mut Packing<T>,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let Packing { a: pa, b: pb } = pack;
    for p0 in (0..k).step_by(KC) {
        let kc = KC.min(k - p0);
        pack_b(b.src.unwrap_or(&*dst), b.op, n, p0, kc, pb);
        // Blocks of MC rows of A stay in L2 while every panel of B streams past them.
        for m0 in (0..m).step_by(MC) {
            let mc = MC.min(m - m0);
            let a_block = Operand { off: a.op.at(m0, 0), ..a.op };
            pack_a(a.src.unwrap_or(&*dst), a_block, mc, p0, kc, pa);
            for (jp, panel_b) in pb.chunks_exact(NR * kc).enumerate() {
                let j0 = jp * NR;
                let nr = NR.min(n - j0);
                for (ip, panel_a) in pa.chunks_exact(MR * kc).enumerate() {
                    let i0 = m0 + ip * MR;
                    let mr = MR.min(m - i0);
                    let acc = micro_kernel(panel_a, panel_b);
                    for (ii, row) in acc.iter().enumerate().take(mr) {
                        let base = c.at(i0 + ii, j0);
                        for (jj, v) in row.iter().enumerate().take(nr) {
                            let d = &mut dst[base + jj * c.cs];
                            *d = match update {
                                Update::Add => *d + *v,
                                Update::Subtract => *d - *v,
                            };
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, n: usize, k: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn matches_naive_product_on_ragged_shapes() {
        for (m, n, k) in [(1, 1, 1), (5, 17, 3), (9, 33, 300), (4, 16, 256), (13, 2, 520)] {
            let a: Vec<f64> = (0..m * k).map(|i| ((i * 37) % 19) as f64 / 7.0 - 1.0).collect();
            let b: Vec<f64> = (0..k * n).map(|i| ((i * 11) % 23) as f64 / 5.0 - 2.0).collect();
            let want = naive(m, n, k, &a, &b);
            let mut c = vec![1.0; m * n];
            let (ao, bo, co) = (Operand::rows(0, k), Operand::rows(0, n), Operand::rows(0, n));
            gemm(m, n, k, Input::of(&a, ao), Input::of(&b, bo), &mut c, co, Update::Add, &mut Packing::default());
            for (x, w) in c.iter().zip(&want) {
                assert!((x - 1.0 - w).abs() < 1e-9 * (1.0 + w.abs()), "{m}x{n}x{k}");
            }
            // Bᵀ stored row-major and read through a transposed operand
            let bt: Vec<f64> = (0..n * k).map(|idx| b[(idx % k) * n + idx / k]).collect();
            let mut c2 = vec![0.0; m * n];
            let bt_op = Input::of(&bt, Operand::transposed(0, k));
            gemm(m, n, k, Input::of(&a, ao), bt_op, &mut c2, co, Update::Subtract, &mut Packing::default());
            for (x, w) in c2.iter().zip(&want) {
                assert!((x + w).abs() < 1e-9 * (1.0 + w.abs()));
            }
        }
    }
}
