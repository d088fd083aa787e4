//! Forward and backward kernels on row-major slices.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

fn view(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("matrix shape")
}

fn view_mut(data: &mut [f64], rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("matrix shape")
}

/// `A [m, k] * B[n, k]^T -> [m, n]`
pub(crate) fn matmul_nt(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    general_mat_mul(
        1.0,
        &view(a, m, k),
        &view(b, n, k).t(),
        0.0,
        &mut view_mut(&mut out, m, n),
    );
    out
}

/// `A [m, k] * B [k, n] -> [m, n]`
pub(crate) fn matmul_nn(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    general_mat_mul(
        1.0,
        &view(a, m, k),
        &view(b, k, n),
        0.0,
        &mut view_mut(&mut out, m, n),
    );
    out
}

/// `out [m, n] += A [k, m]^T * B [k, n]`
pub(crate) fn matmul_tn_acc(a: &[f64], k: usize, m: usize, b: &[f64], n: usize, out: &mut [f64]) {
    general_mat_mul(
        1.0,
        &view(a, k, m).t(),
        &view(b, k, n),
        1.0,
        &mut view_mut(out, m, n),
    );
}

/// `out [n] += column sums of A [m, n]`
pub(crate) fn col_sum_acc(a: &[f64], n: usize, out: &mut [f64]) {
    for row in a.chunks_exact(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Output length of a "same"-padded strided axis.
pub(crate) fn same_len(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

/// Geometry of a 2-D convolution over `[time, freq, channels]` maps.
///
/// Padding is `(k - 1) / 2` cells before each axis regardless of input
/// length; output position `o` reads input `o * stride + j - pad`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvShape {
    pub t_in: usize,
    pub f_in: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kt: usize,
    pub kf: usize,
    pub st: usize,
    pub sf: usize,
}

impl ConvShape {
    pub fn t_out(&self) -> usize {
        same_len(self.t_in, self.st)
    }

    pub fn f_out(&self) -> usize {
        same_len(self.f_in, self.sf)
    }

    fn patch_len(&self) -> usize {
        self.kt * self.kf * self.c_in
    }

    /// Visits every (row, column, input offset) of the im2col matrix whose
    /// input cell is inside the map.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (pt, pf) = ((self.kt - 1) / 2, (self.kf - 1) / 2);
        let f_out = self.f_out();
        let p = self.patch_len();
        for ot in 0..self.t_out() {
            for of in 0..f_out {
                let row = (ot * f_out + of) * p;
                for jt in 0..self.kt {
                    let it = (ot * self.st + jt) as isize - pt as isize;
                    if it < 0 || it as usize >= self.t_in {
                        continue;
                    }
                    for jf in 0..self.kf {
                        let iff = (of * self.sf + jf) as isize - pf as isize;
                        if iff < 0 || iff as usize >= self.f_in {
                            continue;
                        }
                        let col = (jt * self.kf + jf) * self.c_in;
                        let src = (it as usize * self.f_in + iff as usize) * self.c_in;
                        f(row + col, src, self.c_in);
                    }
                }
            }
        }
    }

    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.t_out() * self.f_out() * self.patch_len()];
        self.for_each_tap(|dst, src, n| cols[dst..dst + n].copy_from_slice(&input[src..src + n]));
        cols
    }

    fn col2im_acc(&self, cols: &[f64], d_input: &mut [f64]) {
        self.for_each_tap(|dst, src, n| {
            for (d, c) in d_input[src..src + n].iter_mut().zip(&cols[dst..dst + n]) {
                *d += c;
            }
        });
    }

    /// Pre-activation output `[t_out, f_out, c_out]`.
    pub fn forward(&self, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
        let rows = self.t_out() * self.f_out();
        let cols = self.im2col(input);
        let mut out = matmul_nt(&cols, rows, self.patch_len(), kernel, self.c_out);
        for row in out.chunks_exact_mut(self.c_out) {
            for (o, b) in row.iter_mut().zip(bias) {
                *o += b;
            }
        }
        out
    }

    /// Accumulates kernel and bias gradients; returns the input gradient
    /// when `want_input` is set.
    pub fn backward(
        &self,
        input: &[f64],
        kernel: &[f64],
        d_out: &[f64],
        d_kernel: &mut [f64],
        d_bias: &mut [f64],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let rows = self.t_out() * self.f_out();
        let p = self.patch_len();
        let cols = self.im2col(input);
        matmul_tn_acc(d_out, rows, self.c_out, &cols, p, d_kernel);
        col_sum_acc(d_out, self.c_out, d_bias);
        want_input.then(|| {
            let d_cols = matmul_nn(d_out, rows, self.c_out, kernel, p);
            let mut d_input = vec![0.0; self.t_in * self.f_in * self.c_in];
            self.col2im_acc(&d_cols, &mut d_input);
            d_input
        })
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out [rows] = M [rows, cols] * v [cols]` over a row block of `M`.
#[inline]
fn matvec(m: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

/// Activations of one GRU direction, indexed by time (not processing order).
#[derive(Debug, Clone)]
pub(crate) struct GruTrace {
    update: Vec<f64>,
    reset: Vec<f64>,
    candidate: Vec<f64>,
    h_prev: Vec<f64>,
    reset_h: Vec<f64>,
    pub output: Vec<f64>,
}

/// Gated recurrent unit:
///
/// ```text
/// z = sigmoid(Wz x + Uz h + bz)
/// r = sigmoid(Wr x + Ur h + br)
/// n = tanh(Wn x + Un (r * h) + bn)
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone, Copy)]
pub(crate) struct Gru {
    pub input: usize,
    pub units: usize,
    pub reverse: bool,
}

impl Gru {
    fn order(&self, len: usize) -> Box<dyn Iterator<Item = usize>> {
        if self.reverse {
            Box::new((0..len).rev())
        } else {
            Box::new(0..len)
        }
    }

    pub fn forward(
        &self,
        x: &[f64],
        len: usize,
        w_in: &[f64],
        w_h: &[f64],
        bias: &[f64],
    ) -> GruTrace {
        let h = self.units;
        let mut xw = matmul_nt(x, len, self.input, w_in, 3 * h);
        for row in xw.chunks_exact_mut(3 * h) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        let mut tr = GruTrace {
            update: vec![0.0; len * h],
            reset: vec![0.0; len * h],
            candidate: vec![0.0; len * h],
            h_prev: vec![0.0; len * h],
            reset_h: vec![0.0; len * h],
            output: vec![0.0; len * h],
        };
        let mut state = vec![0.0; h];
        let mut rec = vec![0.0; 2 * h];
        let mut rec_n = vec![0.0; h];
        for t in self.order(len) {
            let s = t * h..(t + 1) * h;
            let xw_t = &xw[t * 3 * h..(t + 1) * 3 * h];
            matvec(&w_h[..2 * h * h], h, &state, &mut rec);
            for j in 0..h {
                tr.update[s.start + j] = sigmoid(xw_t[j] + rec[j]);
                tr.reset[s.start + j] = sigmoid(xw_t[h + j] + rec[h + j]);
                tr.reset_h[s.start + j] = tr.reset[s.start + j] * state[j];
            }
            matvec(&w_h[2 * h * h..], h, &tr.reset_h[s.clone()], &mut rec_n);
            tr.h_prev[s.clone()].copy_from_slice(&state);
            for j in 0..h {
                let n = (xw_t[2 * h + j] + rec_n[j]).tanh();
                let z = tr.update[s.start + j];
                tr.candidate[s.start + j] = n;
                state[j] = (1.0 - z) * n + z * state[j];
            }
            tr.output[s].copy_from_slice(&state);
        }
        tr
    }

    /// Backpropagates `d_out [len, H]` (gradient w.r.t. every output state),
    /// accumulating weight gradients and returning the input gradient.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        x: &[f64],
        len: usize,
        tr: &GruTrace,
        w_in: &[f64],
        w_h: &[f64],
        d_out: &[f64],
        d_w_in: &mut [f64],
        d_w_h: &mut [f64],
        d_bias: &mut [f64],
    ) -> Vec<f64> {
        let h = self.units;
        let mut d_xw = vec![0.0; len * 3 * h];
        let mut carry = vec![0.0; h];
        let mut d_prev = vec![0.0; h];
        let (u_zr, u_n) = w_h.split_at(2 * h * h);
        let (du_zr, du_n) = d_w_h.split_at_mut(2 * h * h);
        for t in self.order(len).collect::<Vec<_>>().into_iter().rev() {
            let base = t * h;
            let d_pre = &mut d_xw[t * 3 * h..(t + 1) * 3 * h];
            for j in 0..h {
                let dh = d_out[base + j] + carry[j];
                let (z, n, hp) = (
                    tr.update[base + j],
                    tr.candidate[base + j],
                    tr.h_prev[base + j],
                );
                d_pre[j] = dh * (hp - n) * z * (1.0 - z);
                d_pre[2 * h + j] = dh * (1.0 - z) * (1.0 - n * n);
                d_prev[j] = dh * z;
            }
            // candidate path: Un (r * h_prev)
            let rh = &tr.reset_h[base..base + h];
            for i in 0..h {
                let g = d_pre[2 * h + i];
                if g != 0.0 {
                    let row = &mut du_n[i * h..(i + 1) * h];
                    for (d, v) in row.iter_mut().zip(rh) {
                        *d += g * v;
                    }
                }
            }
            for j in 0..h {
                let mut d_rh = 0.0;
                for i in 0..h {
                    d_rh += u_n[i * h + j] * d_pre[2 * h + i];
                }
                let (r, hp) = (tr.reset[base + j], tr.h_prev[base + j]);
                d_pre[h + j] = d_rh * hp * r * (1.0 - r);
                d_prev[j] += d_rh * r;
            }
            // update and reset paths: U_zr h_prev
            let hp = &tr.h_prev[base..base + h];
            for i in 0..2 * h {
                let g = d_pre[i];
                if g != 0.0 {
                    let row = &mut du_zr[i * h..(i + 1) * h];
                    for (d, v) in row.iter_mut().zip(hp) {
                        *d += g * v;
                    }
                }
            }
            for j in 0..h {
                let mut acc = 0.0;
                for i in 0..2 * h {
                    acc += u_zr[i * h + j] * d_pre[i];
                }
                carry[j] = d_prev[j] + acc;
            }
        }
        matmul_tn_acc(&d_xw, len, 3 * h, x, self.input, d_w_in);
        col_sum_acc(&d_xw, 3 * h, d_bias);
        matmul_nn(&d_xw, len, 3 * h, w_in, self.input)
    }
}

/// Affine map `y = x W^T + b` applied to each row of `x [len, inputs]`.
pub(crate) fn dense_forward(
    x: &[f64],
    len: usize,
    inputs: usize,
    w: &[f64],
    b: &[f64],
    outputs: usize,
) -> Vec<f64> {
    let mut y = matmul_nt(x, len, inputs, w, outputs);
    for row in y.chunks_exact_mut(outputs) {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    x: &[f64],
    len: usize,
    inputs: usize,
    w: &[f64],
    outputs: usize,
    d_y: &[f64],
    d_w: &mut [f64],
    d_b: &mut [f64],
) -> Vec<f64> {
    matmul_tn_acc(d_y, len, outputs, x, inputs, d_w);
    col_sum_acc(d_y, outputs, d_b);
    matmul_nn(d_y, len, outputs, w, inputs)
}
