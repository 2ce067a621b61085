//! Loop kernels. Inner loops run over contiguous rows so they vectorize;
//! reductions keep 32 independent accumulators to hide FMA latency.

use super::tensor::Real;

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 32];
    let ca = a.chunks_exact(32);
    let cb = b.chunks_exact(32);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..32 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    let mut half = [T::zero(); 8];
    for (k, v) in acc.iter().enumerate() {
        half[k % 8] += *v;
    }
    ((half[0] + half[4]) + (half[1] + half[5])) + ((half[2] + half[6]) + (half[3] + half[7])) + tail
}

pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * *xv;
    }
}

pub fn sum<T: Real>(x: &[T]) -> T {
    let mut acc = T::zero();
    let chunks = x.chunks_exact(8);
    let rest = chunks.remainder();
    let mut lanes = [T::zero(); 8];
    for c in chunks {
        for k in 0..8 {
            lanes[k] += c[k];
        }
    }
    for v in rest {
        acc += *v;
    }
    lanes.iter().copied().sum::<T>() + acc
}

/// Valid output rows/columns for a tap offset `d` in {-1,0,1} on an extent `n`.
#[inline]
fn span(d: isize, n: usize) -> (usize, usize) {
    let lo = if d < 0 { 1 } else { 0 };
    let hi = if d > 0 { n - 1 } else { n };
    (lo, hi)
}

/// Unfolds same-padded 3×3 neighbourhoods into `[c·9, h·w]` rows.
fn im2col<T: Real>(input: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let plane = h * w;
    cols.fill(T::zero());
    for i in 0..c {
        let inp = &input[i * plane..(i + 1) * plane];
        for ky in 0..3 {
            let dy = ky as isize - 1;
            let (y0, y1) = span(dy, h);
            for kx in 0..3 {
                let dx = kx as isize - 1;
                let (x0, x1) = span(dx, w);
                let row = &mut cols[((i * 3 + ky) * 3 + kx) * plane..][..plane];
                let sx0 = (x0 as isize + dx) as usize;
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    row[y * w + x0..y * w + x1]
                        .copy_from_slice(&inp[sy * w + sx0..sy * w + sx0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input planes.
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, out: &mut [T]) {
    let plane = h * w;
    out.fill(T::zero());
    for i in 0..c {
        let dst = &mut out[i * plane..(i + 1) * plane];
        for ky in 0..3 {
            let dy = ky as isize - 1;
            let (y0, y1) = span(dy, h);
            for kx in 0..3 {
                let dx = kx as isize - 1;
                let (x0, x1) = span(dx, w);
                let row = &cols[((i * 3 + ky) * 3 + kx) * plane..][..plane];
                let sx0 = (x0 as isize + dx) as usize;
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let n = x1 - x0;
                    for (d, v) in dst[sy * w + sx0..sy * w + sx0 + n]
                        .iter_mut()
                        .zip(&row[y * w + x0..y * w + x1])
                    {
                        *d += *v;
                    }
                }
            }
        }
    }
}

const ROWS: usize = 4;
const LANES: usize = 16;

/// `c += a · b` for row-major `a: [m, k]`, `b: [k, n]`, `c: [m, n]`.
/// Blocks of 4 rows × 16 columns are accumulated in registers.
pub fn gemm_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let full_n = n - n % LANES;
    let mut i = 0;
    while i + ROWS <= m {
        for p in (0..full_n).step_by(LANES) {
            let mut acc = [[T::zero(); LANES]; ROWS];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&c[(i + r) * n + p..(i + r) * n + p + LANES]);
            }
            for kk in 0..k {
                let bv: &[T; LANES] = b[kk * n + p..kk * n + p + LANES]
                    .try_into()
                    .expect("lane block");
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * k + kk];
                    for l in 0..LANES {
                        row[l] += av * bv[l];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                c[(i + r) * n + p..(i + r) * n + p + LANES].copy_from_slice(row);
            }
        }
        for r in 0..ROWS {
            gemm_row_tail(a, b, c, i + r, k, n, full_n);
        }
        i += ROWS;
    }
    for row in i..m {
        gemm_row_tail(a, b, c, row, k, n, 0);
    }
}

fn gemm_row_tail<T: Real>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    row: usize,
    k: usize,
    n: usize,
    from: usize,
) {
    if from == n {
        return;
    }
    let c_row = &mut c[row * n + from..(row + 1) * n];
    for kk in 0..k {
        let av = a[row * k + kk];
        if av != T::zero() {
            axpy(av, &b[kk * n + from..(kk + 1) * n], c_row);
        }
    }
}

fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// Same-padded 3×3 convolution, `weight` as `[c_out, c_in, 3, 3]`.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_forward<T: Real>(
    input: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[T],
    bias: &[T],
    c_out: usize,
    out: &mut [T],
    cols: &mut Vec<T>,
) {
    let plane = h * w;
    let k = c_in * 9;
    cols.resize(k * plane, T::zero());
    im2col(input, c_in, h, w, cols);
    for o in 0..c_out {
        out[o * plane..(o + 1) * plane].fill(bias[o]);
    }
    gemm_acc(weight, cols, out, c_out, k, plane);
}

/// Accumulates weight and bias gradients, and writes the input gradient when
/// requested. `cols` is the unfolded input saved by [`conv3x3_forward`].
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward<T: Real>(
    cols: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[T],
    c_out: usize,
    dout: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    dinput: Option<&mut [T]>,
) {
    let plane = h * w;
    let k = c_in * 9;
    for o in 0..c_out {
        let g = &dout[o * plane..(o + 1) * plane];
        dbias[o] += sum(g);
        for j in 0..k {
            dweight[o * k + j] += dot(g, &cols[j * plane..(j + 1) * plane]);
        }
    }
    if let Some(di) = dinput {
        let wt = transpose(weight, c_out, k);
        let mut dcols = vec![T::zero(); k * plane];
        gemm_acc(&wt, dout, &mut dcols, k, c_out, plane);
        col2im(&dcols, c_in, h, w, di);
    }
}

pub fn relu_in_place<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries whose activation was clamped.
pub fn relu_backward<T: Real>(activation: &[T], grad: &mut [T]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2×2 stride-2 max pool; records the flat source index of each winner
/// (first maximum in raster order within the window).
pub fn maxpool2_forward<T: Real>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    out: &mut [T],
    argmax: &mut [u32],
) {
    let (oh, ow) = (h / 2, w / 2);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                let o = ch * oh * ow + oy * ow + ox;
                out[o] = input[best];
                argmax[o] = best as u32;
            }
        }
    }
}

pub fn maxpool2_backward<T: Real>(dout: &[T], argmax: &[u32], dinput: &mut [T]) {
    dinput.fill(T::zero());
    for (g, &src) in dout.iter().zip(argmax) {
        dinput[src as usize] += *g;
    }
}

/// `y = W x + b` with `W` as `[out, in]`.
pub fn dense_forward<T: Real>(weight: &[T], bias: &[T], x: &[T], y: &mut [T]) {
    let n_in = x.len();
    for (o, yv) in y.iter_mut().enumerate() {
        *yv = bias[o] + dot(&weight[o * n_in..(o + 1) * n_in], x);
    }
}

pub fn dense_backward<T: Real>(
    weight: &[T],
    x: &[T],
    dy: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    let n_in = x.len();
    if let Some(d) = dx.as_deref_mut() {
        d.fill(T::zero());
    }
    for (o, &g) in dy.iter().enumerate() {
        dbias[o] += g;
        if g == T::zero() {
            continue;
        }
        axpy(g, x, &mut dweight[o * n_in..(o + 1) * n_in]);
        if let Some(d) = dx.as_deref_mut() {
            axpy(g, &weight[o * n_in..(o + 1) * n_in], d);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(
        input: &[f64],
        ci: usize,
        h: usize,
        w: usize,
        wt: &[f64],
        b: &[f64],
        co: usize,
    ) -> Vec<f64> {
        let mut out = vec![0.0; co * h * w];
        for o in 0..co {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut s = b[o];
                    for i in 0..ci {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, x + kx - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                s += wt[((o * ci + i) * 3 + ky as usize) * 3 + kx as usize]
                                    * input[i * h * w + sy as usize * w + sx as usize];
                            }
                        }
                    }
                    out[o * h * w + y as usize * w + x as usize] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        let (ci, co, h, w) = (2, 3, 5, 7);
        let input: Vec<f64> = (0..ci * h * w)
            .map(|i| ((i * 37) % 11) as f64 - 5.0)
            .collect();
        let wt: Vec<f64> = (0..co * ci * 9)
            .map(|i| ((i * 13) % 7) as f64 * 0.25 - 0.7)
            .collect();
        let b = vec![0.5, -1.0, 2.0];
        let mut out = vec![0.0; co * h * w];
        conv3x3_forward(&input, ci, h, w, &wt, &b, co, &mut out, &mut Vec::new());
        let want = naive_conv(&input, ci, h, w, &wt, &b, co);
        for (a, e) in out.iter().zip(&want) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn gemm_matches_naive() {
        for (m, k, n) in [(5, 3, 37), (8, 9, 64), (1, 1, 1), (4, 2, 16)] {
            let a: Vec<f64> = (0..m * k).map(|i| (i % 7) as f64 - 3.0).collect();
            let b: Vec<f64> = (0..k * n).map(|i| (i % 5) as f64 * 0.5).collect();
            let mut c: Vec<f64> = (0..m * n).map(|i| i as f64).collect();
            let mut want = c.clone();
            for i in 0..m {
                for j in 0..n {
                    for kk in 0..k {
                        want[i * n + j] += a[i * k + kk] * b[kk * n + j];
                    }
                }
            }
            gemm_acc(&a, &b, &mut c, m, k, n);
            assert_eq!(c, want);
        }
    }

    #[test]
    fn dot_handles_remainders() {
        let a: Vec<f64> = (0..19).map(f64::from).collect();
        assert_eq!(dot(&a, &a), (0..19).map(|i| (i * i) as f64).sum::<f64>());
        assert_eq!(sum(&a), 171.0);
    }

    #[test]
    fn pool_picks_first_max() {
        let input = [1.0f32, 1.0, 0.0, 0.0];
        let mut out = [0.0];
        let mut arg = [0];
        maxpool2_forward(&input, 1, 2, 2, &mut out, &mut arg);
        assert_eq!((out[0], arg[0]), (1.0, 0));
    }
}
