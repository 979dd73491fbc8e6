//! GEMM-backed 3D convolution over a batch.
//!
//! Activations live in channel-major matrices of shape
//! `(channels, n_samples * dhw)`: column index = `sample * dhw + voxel`,
//! voxels z-major/x-fastest. A convolution lowers its input into a column
//! matrix (im2col) of shape `(in_channels * kz*ky*kx, n_samples * dhw)` and
//! multiplies by the flattened weight matrix, which keeps the hot loop
//! inside the gemm kernel.

use super::float::CnnFloat;
use crate::volume::Dims;

/// Geometry of one lowered convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub patch: Dims,
    pub kernel: Dims,
    pub n_samples: usize,
}

impl ConvGeom {
    pub fn dhw(&self) -> usize {
        self.patch.0 * self.patch.1 * self.patch.2
    }

    pub fn cols(&self) -> usize {
        self.n_samples * self.dhw()
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel.0 * self.kernel.1 * self.kernel.2
    }
}

/// Lowers `input` (in_channels x cols) into the im2col matrix
/// (in_channels * kernel_len x cols), zero padding outside the patch
/// ("same" convolution, odd kernels).
#[cfg(test)]
pub(crate) fn im2col<F: CnnFloat>(input: &[F], in_channels: usize, geom: &ConvGeom) -> Vec<F> {
    let mut out = Vec::new();
    im2col_into(input, in_channels, geom, &mut out);
    out
}

/// [`im2col`] writing into a reused buffer (resized and zeroed in place).
pub(crate) fn im2col_into<F: CnnFloat>(
    input: &[F],
    in_channels: usize,
    geom: &ConvGeom,
    out: &mut Vec<F>,
) {
    let (d, h, w) = geom.patch;
    let (kz, ky, kx) = geom.kernel;
    let (pz, py, px) = (kz / 2, ky / 2, kx / 2);
    let dhw = geom.dhw();
    let cols = geom.cols();
    out.clear();
    out.resize(in_channels * geom.kernel_len() * cols, F::ZERO);

    for c in 0..in_channels {
        let in_base = c * cols;
        for dz in 0..kz {
            let oz = dz as isize - pz as isize;
            for dy in 0..ky {
                let oy = dy as isize - py as isize;
                for dx in 0..kx {
                    let ox = dx as isize - px as isize;
                    let row = ((c * kz + dz) * ky + dy) * kx + dx;
                    let row_base = row * cols;
                    // Valid output coordinate ranges for this offset.
                    let z_lo = (-oz).max(0) as usize;
                    let z_hi = ((d as isize - oz).min(d as isize)) as usize;
                    let y_lo = (-oy).max(0) as usize;
                    let y_hi = ((h as isize - oy).min(h as isize)) as usize;
                    let x_lo = (-ox).max(0) as usize;
                    let x_hi = ((w as isize - ox).min(w as isize)) as usize;
                    if z_lo >= z_hi || y_lo >= y_hi || x_lo >= x_hi {
                        continue;
                    }
                    for s in 0..geom.n_samples {
                        let sample_base = s * dhw;
                        for z in z_lo..z_hi {
                            let src_z = (z as isize + oz) as usize;
                            for y in y_lo..y_hi {
                                let src_y = (y as isize + oy) as usize;
                                let dst = row_base + sample_base + (z * h + y) * w + x_lo;
                                let src = in_base
                                    + sample_base
                                    + (src_z * h + src_y) * w
                                    + (x_lo as isize + ox) as usize;
                                let len = x_hi - x_lo;
                                out[dst..dst + len].copy_from_slice(&input[src..src + len]);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Transpose of [`im2col`]: scatter-adds the column-matrix gradient back to
/// the input gradient (in_channels x cols).
#[cfg(test)]
pub(crate) fn col2im<F: CnnFloat>(d_cols: &[F], in_channels: usize, geom: &ConvGeom) -> Vec<F> {
    let mut out = Vec::new();
    col2im_into(d_cols, in_channels, geom, &mut out);
    out
}

/// [`col2im`] writing into a reused buffer.
pub(crate) fn col2im_into<F: CnnFloat>(
    d_cols: &[F],
    in_channels: usize,
    geom: &ConvGeom,
    out: &mut Vec<F>,
) {
    let (d, h, w) = geom.patch;
    let (kz, ky, kx) = geom.kernel;
    let (pz, py, px) = (kz / 2, ky / 2, kx / 2);
    let dhw = geom.dhw();
    let cols = geom.cols();
    out.clear();
    out.resize(in_channels * cols, F::ZERO);

    for c in 0..in_channels {
        let out_base = c * cols;
        for dz in 0..kz {
            let oz = dz as isize - pz as isize;
            for dy in 0..ky {
                let oy = dy as isize - py as isize;
                for dx in 0..kx {
                    let ox = dx as isize - px as isize;
                    let row = ((c * kz + dz) * ky + dy) * kx + dx;
                    let row_base = row * cols;
                    let z_lo = (-oz).max(0) as usize;
                    let z_hi = ((d as isize - oz).min(d as isize)) as usize;
                    let y_lo = (-oy).max(0) as usize;
                    let y_hi = ((h as isize - oy).min(h as isize)) as usize;
                    let x_lo = (-ox).max(0) as usize;
                    let x_hi = ((w as isize - ox).min(w as isize)) as usize;
                    if z_lo >= z_hi || y_lo >= y_hi || x_lo >= x_hi {
                        continue;
                    }
                    for s in 0..geom.n_samples {
                        let sample_base = s * dhw;
                        for z in z_lo..z_hi {
                            let src_z = (z as isize + oz) as usize;
                            for y in y_lo..y_hi {
                                let src_y = (y as isize + oy) as usize;
                                let src = row_base + sample_base + (z * h + y) * w + x_lo;
                                let dst = out_base
                                    + sample_base
                                    + (src_z * h + src_y) * w
                                    + (x_lo as isize + ox) as usize;
                                for i in 0..(x_hi - x_lo) {
                                    out[dst + i] += d_cols[src + i];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Column-block width: accumulator rows stay L1-resident.
const JB: usize = 512;

/// `c (m x n) += a (m x k) * b (k x n)`, row-major, blocked over n with
/// output rows processed in pairs so each b-row load feeds two
/// accumulators. Wins over the packed gemm when m is small (few output
/// channels) because packing the huge right-hand matrix never pays off.
fn block_gemm_acc<F: CnnFloat>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut acc = [[F::ZERO; JB]; 4];
    let mut j0 = 0;
    while j0 < n {
        let jl = JB.min(n - j0);
        let mut o = 0;
        while o + 4 <= m {
            gemm_row_block::<F, 4>(k, n, jl, j0, o, a, b, c, &mut acc);
            o += 4;
        }
        while o + 2 <= m {
            gemm_row_block::<F, 2>(k, n, jl, j0, o, a, b, c, &mut acc);
            o += 2;
        }
        if o < m {
            gemm_row_block::<F, 1>(k, n, jl, j0, o, a, b, c, &mut acc);
        }
        j0 += JB;
    }
}

/// One OB-row accumulator block: each b-row load feeds OB fused updates.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm_row_block<F: CnnFloat, const OB: usize>(
    k: usize,
    n: usize,
    jl: usize,
    j0: usize,
    o: usize,
    a: &[F],
    b: &[F],
    c: &mut [F],
    acc: &mut [[F; JB]; 4],
) {
    for ob in 0..OB {
        acc[ob][..jl].copy_from_slice(&c[(o + ob) * n + j0..(o + ob) * n + j0 + jl]);
    }
    for r in 0..k {
        let mut w = [F::ZERO; OB];
        for ob in 0..OB {
            w[ob] = a[(o + ob) * k + r];
        }
        let brow = &b[r * n + j0..r * n + j0 + jl];
        match OB {
            4 => {
                let [a0, a1, a2, a3] = acc;
                let (a0, a1, a2, a3) = (&mut a0[..jl], &mut a1[..jl], &mut a2[..jl], &mut a3[..jl]);
                for i in 0..jl {
                    let bv = brow[i];
                    a0[i] += w[0] * bv;
                    a1[i] += w[1] * bv;
                    a2[i] += w[2] * bv;
                    a3[i] += w[3] * bv;
                }
            }
            2 => {
                let (lo, hi) = acc.split_at_mut(1);
                let a0 = &mut lo[0][..jl];
                let a1 = &mut hi[0][..jl];
                for i in 0..jl {
                    let bv = brow[i];
                    a0[i] += w[0] * bv;
                    a1[i] += w[1] * bv;
                }
            }
            _ => {
                let a0 = &mut acc[0][..jl];
                for i in 0..jl {
                    a0[i] += w[0] * brow[i];
                }
            }
        }
    }
    for ob in 0..OB {
        c[(o + ob) * n + j0..(o + ob) * n + j0 + jl].copy_from_slice(&acc[ob][..jl]);
    }
}

/// `c (m x n) += a (m x k) * b^T` with `b` stored (n x k): blocked
/// lane-parallel dot products over the shared k dimension.
fn block_gemm_abt_acc<F: CnnFloat>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    const LANES: usize = 16;
    const KB: usize = 2048;
    let mut j0 = 0;
    while j0 < k {
        let jl = KB.min(k - j0);
        for r in 0..n {
            let brow = &b[r * k + j0..r * k + j0 + jl];
            for o in 0..m {
                let arow = &a[o * k + j0..o * k + j0 + jl];
                let mut lanes = [F::ZERO; LANES];
                let mut chunks_a = arow.chunks_exact(LANES);
                let mut chunks_b = brow.chunks_exact(LANES);
                for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
                    for l in 0..LANES {
                        lanes[l] += ca[l] * cb[l];
                    }
                }
                let mut sum = F::ZERO;
                for &v in &lanes {
                    sum += v;
                }
                for (&av, &bv) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
                    sum += av * bv;
                }
                c[o * n + r] += sum;
            }
        }
        j0 += KB;
    }
}

/// Shapes where the blocked in-cache kernel beats the packed gemm: the
/// streamed operand's row block must stay cache-resident across the few
/// accumulator rows.
fn prefer_block_kernel(m: usize, k: usize) -> bool {
    m <= 8 || k <= 16
}

/// `out = weights (out_ch x rows) * cols_mat (rows x cols)` plus bias per
/// output channel row.
pub(crate) fn conv_gemm_forward<F: CnnFloat>(
    weights: &[F],
    bias: &[F],
    cols_mat: &[F],
    out_channels: usize,
    rows: usize,
    cols: usize,
    out: &mut Vec<F>,
) {
    out.clear();
    out.reserve(out_channels * cols);
    for &b in bias {
        out.extend(std::iter::repeat(b).take(cols));
    }
    if prefer_block_kernel(out_channels, rows) {
        block_gemm_acc(out_channels, rows, cols, weights, cols_mat, out);
    } else {
        unsafe {
            F::gemm(
                out_channels,
                rows,
                cols,
                F::ONE,
                weights.as_ptr(),
                rows as isize,
                1,
                cols_mat.as_ptr(),
                cols as isize,
                1,
                F::ONE,
                out.as_mut_ptr(),
                cols as isize,
                1,
            );
        }
    }
}

/// Weight gradient `dW = dz (out_ch x cols) * cols_mat^T (cols x rows)`.
pub(crate) fn conv_gemm_dweights<F: CnnFloat>(
    dz: &[F],
    cols_mat: &[F],
    out_channels: usize,
    rows: usize,
    cols: usize,
) -> Vec<F> {
    let mut dw = vec![F::ZERO; out_channels * rows];
    if prefer_block_kernel(out_channels, rows) {
        block_gemm_abt_acc(out_channels, cols, rows, dz, cols_mat, &mut dw);
    } else {
        unsafe {
            F::gemm(
                out_channels,
                cols,
                rows,
                F::ONE,
                dz.as_ptr(),
                cols as isize,
                1,
                cols_mat.as_ptr(),
                1,
                cols as isize,
                F::ZERO,
                dw.as_mut_ptr(),
                rows as isize,
                1,
            );
        }
    }
    dw
}

/// Column gradient `dCols = W^T (rows x out_ch) * dz (out_ch x cols)`.
pub(crate) fn conv_gemm_dcols<F: CnnFloat>(
    weights: &[F],
    dz: &[F],
    out_channels: usize,
    rows: usize,
    cols: usize,
    dcols: &mut Vec<F>,
) {
    dcols.clear();
    dcols.resize(rows * cols, F::ZERO);
    if prefer_block_kernel(rows, out_channels) {
        // W^T is (rows x out_ch); materialize the small transpose so rows
        // are contiguous for the blocked kernel.
        let mut wt = vec![F::ZERO; rows * out_channels];
        for o in 0..out_channels {
            for r in 0..rows {
                wt[r * out_channels + o] = weights[o * rows + r];
            }
        }
        block_gemm_acc(rows, out_channels, cols, &wt, dz, dcols);
    } else {
        unsafe {
            F::gemm(
                rows,
                out_channels,
                cols,
                F::ONE,
                weights.as_ptr(),
                1,
                rows as isize,
                dz.as_ptr(),
                cols as isize,
                1,
                F::ZERO,
                dcols.as_mut_ptr(),
                cols as isize,
                1,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct triple-loop 3D convolution (same zero padding) as the oracle
    /// for the gemm lowering.
    fn direct_conv(
        input: &[f64],
        weights: &[f64],
        bias: &[f64],
        in_ch: usize,
        out_ch: usize,
        patch: Dims,
        kernel: Dims,
        n_samples: usize,
    ) -> Vec<f64> {
        let (d, h, w) = patch;
        let dhw = d * h * w;
        let (kz, ky, kx) = kernel;
        let (pz, py, px) = (kz as isize / 2, ky as isize / 2, kx as isize / 2);
        let klen = kz * ky * kx;
        let mut out = vec![0.0; out_ch * n_samples * dhw];
        for o in 0..out_ch {
            for s in 0..n_samples {
                for z in 0..d as isize {
                    for y in 0..h as isize {
                        for x in 0..w as isize {
                            let mut acc = bias[o];
                            for c in 0..in_ch {
                                for dz in 0..kz as isize {
                                    for dy in 0..ky as isize {
                                        for dx in 0..kx as isize {
                                            let zz = z + dz - pz;
                                            let yy = y + dy - py;
                                            let xx = x + dx - px;
                                            if zz < 0 || yy < 0 || xx < 0
                                                || zz >= d as isize || yy >= h as isize || xx >= w as isize
                                            {
                                                continue;
                                            }
                                            let wv = weights[o * in_ch * klen
                                                + ((c * kz + dz as usize) * ky + dy as usize) * kx
                                                + dx as usize];
                                            let iv = input[c * n_samples * dhw
                                                + s * dhw
                                                + ((zz as usize) * h + yy as usize) * w
                                                + xx as usize];
                                            acc += wv * iv;
                                        }
                                    }
                                }
                            }
                            out[o * n_samples * dhw + s * dhw
                                + ((z as usize) * h + y as usize) * w + x as usize] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn gemm_lowering_matches_direct_convolution() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let geom = ConvGeom {
            patch: (3, 4, 5),
            kernel: (3, 3, 3),
            n_samples: 2,
        };
        let (in_ch, out_ch) = (2, 3);
        let input: Vec<f64> = (0..in_ch * geom.cols()).map(|_| rng.gen::<f64>() - 0.5).collect();
        let rows = in_ch * geom.kernel_len();
        let weights: Vec<f64> = (0..out_ch * rows).map(|_| rng.gen::<f64>() - 0.5).collect();
        let bias: Vec<f64> = (0..out_ch).map(|_| rng.gen::<f64>() - 0.5).collect();

        let cols_mat = im2col(&input, in_ch, &geom);
        let mut got = Vec::new();
        conv_gemm_forward(&weights, &bias, &cols_mat, out_ch, rows, geom.cols(), &mut got);
        let want = direct_conv(
            &input, &weights, &bias, in_ch, out_ch, geom.patch, geom.kernel, geom.n_samples,
        );
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "{g} vs {w}");
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let geom = ConvGeom {
            patch: (3, 3, 4),
            kernel: (3, 3, 3),
            n_samples: 2,
        };
        let in_ch = 2;
        let x: Vec<f64> = (0..in_ch * geom.cols()).map(|_| rng.gen::<f64>()).collect();
        let rows = in_ch * geom.kernel_len();
        let y: Vec<f64> = (0..rows * geom.cols()).map(|_| rng.gen::<f64>()).collect();
        let kx = im2col(&x, in_ch, &geom);
        let ky = col2im(&y, in_ch, &geom);
        let lhs: f64 = kx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&ky).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }
}
