//! Runtime-detected AVX-512 matrix-multiply path for `f64`.
//!
//! The orthogonalization step is a chain of dense products; on large
//! parameters (the 1024×1024 timing fixture) the portable loop leaves an
//! order of magnitude on the table, which would turn the benchmark suite
//! from minutes into hours. This module implements the classic packed-panel
//! GEBP scheme with an 8×24 register-tile microkernel.
//!
//! Determinism contract: every output element is accumulated in ascending-k
//! order (across K blocks and inside the microkernel), the same logical
//! order as the portable path, so results are bit-reproducible for a given
//! build on a given machine. FMA contraction means the two paths may differ
//! from each other in final ulps; nothing in the crate compares across
//! machines.

#![cfg(target_arch = "x86_64")]

use std::arch::x86_64::*;

const MR: usize = 8; // microkernel rows
const NR: usize = 24; // microkernel cols (three 8-lane f64 vectors)
const KC: usize = 320; // K block: panels stay cache-resident
const MC: usize = 160; // row block: A block reused across column panels

pub(crate) fn avx512_available() -> bool {
    is_x86_feature_detected!("avx512f")
}

/// C (m×n, row-major) = A (m×k, row-major) · B, overwriting C.
///
/// When `b_transposed` is false, B is k×n row-major; when true, the logical
/// B[k][j] is read from storage `b[j*k + kk]` (i.e. B is given as its n×k
/// transpose), which lets callers form X·Xᵀ without materializing Xᵀ.
/// When `symmetric_out` is true (m = n and the product is known symmetric),
/// only block tiles on or above the diagonal are computed and the strict
/// lower triangle is mirrored; the mirrored values are bit-identical to
/// what direct computation would produce because per-element products and
/// summation order are symmetric in (i, j).
///
/// # Safety
/// Caller must ensure AVX-512F is available (see [`avx512_available`]).
pub(crate) unsafe fn gemm_f64(
    m: usize,
    kdim: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    b_transposed: bool,
    symmetric_out: bool,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * kdim);
    debug_assert_eq!(b.len(), kdim * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if kdim == 0 {
        c.fill(0.0);
        return;
    }

    let mp = m.div_ceil(MR) * MR;
    let np = n.div_ceil(NR) * NR;
    let ldc = np;
    let mut cbuf = vec![0.0f64; mp * np];
    let mut b_pack = vec![0.0f64; np * KC.min(kdim)];
    let mut a_pack = vec![0.0f64; MC * KC.min(kdim)];

    let mut k0 = 0;
    let mut first_block = true;
    while k0 < kdim {
        let kc = KC.min(kdim - k0);
        // Pack B panels: b_pack[jp][kk*NR + q] = B[k0+kk][jp*NR + q], zero-padded.
        for jp in 0..np / NR {
            let base = jp * NR * kc;
            for kk in 0..kc {
                for q in 0..NR {
                    let j = jp * NR + q;
                    b_pack[base + kk * NR + q] = if j < n {
                        if b_transposed {
                            b[j * kdim + k0 + kk]
                        } else {
                            b[(k0 + kk) * n + j]
                        }
                    } else {
                        0.0
                    };
                }
            }
        }
        let mut i0 = 0;
        while i0 < mp {
            let mc = MC.min(mp - i0);
            // Pack A panels: a_pack[ir][kk*MR + r] = A[i0 + ir*MR + r][k0+kk].
            for ir in 0..mc / MR {
                let base = ir * MR * kc;
                for kk in 0..kc {
                    for r in 0..MR {
                        let i = i0 + ir * MR + r;
                        a_pack[base + kk * MR + r] =
                            if i < m { a[i * kdim + k0 + kk] } else { 0.0 };
                    }
                }
            }
            for jp in 0..np / NR {
                for ir in 0..mc / MR {
                    let row0 = i0 + ir * MR;
                    if symmetric_out && (jp + 1) * NR <= row0 {
                        continue; // tile strictly below the diagonal: mirrored later
                    }
                    kernel_8x24(
                        kc,
                        a_pack.as_ptr().add(ir * MR * kc),
                        b_pack.as_ptr().add(jp * NR * kc),
                        cbuf.as_mut_ptr().add(row0 * ldc + jp * NR),
                        ldc,
                        !first_block,
                    );
                }
            }
            i0 += mc;
        }
        first_block = false;
        k0 += kc;
    }

    if symmetric_out {
        for i in 1..m {
            for j in 0..i {
                cbuf[i * ldc + j] = cbuf[j * ldc + i];
            }
        }
    }
    for i in 0..m {
        c[i * n..(i + 1) * n].copy_from_slice(&cbuf[i * ldc..i * ldc + n]);
    }
}

/// 8×24 register-tile microkernel over one packed (A panel, B panel) pair.
///
/// Accumulators live in 24 zmm registers for the whole K loop; per k it
/// issues 3 B-vector loads, 8 A broadcasts and 24 FMAs.
#[target_feature(enable = "avx512f")]
unsafe fn kernel_8x24(
    kc: usize,
    a_panel: *const f64,
    b_panel: *const f64,
    c: *mut f64,
    ldc: usize,
    accumulate: bool,
) {
    let mut acc0: [__m512d; MR] = [_mm512_setzero_pd(); MR];
    let mut acc1: [__m512d; MR] = [_mm512_setzero_pd(); MR];
    let mut acc2: [__m512d; MR] = [_mm512_setzero_pd(); MR];
    let mut ap = a_panel;
    let mut bp = b_panel;
    for _ in 0..kc {
        _mm_prefetch::<_MM_HINT_T0>(bp.add(NR * 4) as *const i8);
        _mm_prefetch::<_MM_HINT_T0>(ap.add(MR * 8) as *const i8);
        let b0 = _mm512_loadu_pd(bp);
        let b1 = _mm512_loadu_pd(bp.add(8));
        let b2 = _mm512_loadu_pd(bp.add(16));
        for r in 0..MR {
            let av = _mm512_set1_pd(*ap.add(r));
            acc0[r] = _mm512_fmadd_pd(av, b0, acc0[r]);
            acc1[r] = _mm512_fmadd_pd(av, b1, acc1[r]);
            acc2[r] = _mm512_fmadd_pd(av, b2, acc2[r]);
        }
        ap = ap.add(MR);
        bp = bp.add(NR);
    }
    for r in 0..MR {
        let row = c.add(r * ldc);
        if accumulate {
            _mm512_storeu_pd(row, _mm512_add_pd(_mm512_loadu_pd(row), acc0[r]));
            _mm512_storeu_pd(row.add(8), _mm512_add_pd(_mm512_loadu_pd(row.add(8)), acc1[r]));
            _mm512_storeu_pd(row.add(16), _mm512_add_pd(_mm512_loadu_pd(row.add(16)), acc2[r]));
        } else {
            _mm512_storeu_pd(row, acc0[r]);
            _mm512_storeu_pd(row.add(8), acc1[r]);
            _mm512_storeu_pd(row.add(16), acc2[r]);
        }
    }
}
