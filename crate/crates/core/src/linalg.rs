//! Thin, bounds-checked wrapper over `matrixmultiply::dgemm` plus a few
//! row-wise kernels shared by the model layers.
//!
//! All matrices are dense `f64` slices addressed by (row stride, column
//! stride), which lets attention heads be read as strided column blocks of a
//! token matrix without copying.

/// Read-only strided matrix view.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    /// Row-major `rows × cols`.
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self { data, offset: 0, rows, cols, rs: cols, cs: 1 }
    }

    /// Column block `[col0, col0 + cols)` of a row-major matrix with `ld` columns.
    pub fn cols_of(data: &'a [f64], rows: usize, ld: usize, col0: usize, cols: usize) -> Self {
        Self { data, offset: col0, rows, cols, rs: ld, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    fn check(&self) {
        if self.rows == 0 || self.cols == 0 {
            return;
        }
        let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
        assert!(last < self.data.len(), "matrix view out of bounds");
    }
}

/// Mutable strided matrix view.
#[derive(Debug)]
pub struct MatMut<'a> {
    pub data: &'a mut [f64],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatMut<'a> {
    pub fn new(data: &'a mut [f64], rows: usize, cols: usize) -> Self {
        Self { data, offset: 0, rows, cols, rs: cols, cs: 1 }
    }

    pub fn cols_of(data: &'a mut [f64], rows: usize, ld: usize, col0: usize, cols: usize) -> Self {
        Self { data, offset: col0, rows, cols, rs: ld, cs: 1 }
    }

    fn check(&self) {
        if self.rows == 0 || self.cols == 0 {
            return;
        }
        let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
        assert!(last < self.data.len(), "matrix view out of bounds");
    }
}

/// `c ← alpha·a·b + beta·c`.
pub fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: MatMut<'_>) {
    assert_eq!(a.cols, b.rows, "inner dimension mismatch");
    assert_eq!(a.rows, c.rows, "row mismatch");
    assert_eq!(b.cols, c.cols, "column mismatch");
    a.check();
    b.check();
    c.check();
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        // dgemm with k = 0 still scales c by beta; keep that contract explicit.
        for i in 0..m {
            for j in 0..n {
                let idx = c.offset + i * c.rs + j * c.cs;
                c.data[idx] *= beta;
            }
        }
        return;
    }
    // SAFETY: every element addressed by (offset, rows, cols, rs, cs) was
    // bounds-checked above, and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

/// Row-major `a (m×k) · b (k×n)` into a fresh buffer.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(1.0, MatRef::new(a, m, k), MatRef::new(b, k, n), 0.0, MatMut::new(&mut c, m, n));
    c
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

pub const LN_EPS: f64 = 1e-6;

/// Affine-free layer norm over rows of width `d`. Returns (normalized, rstd).
pub fn layer_norm(x: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() / d;
    let mut out = vec![0.0; x.len()];
    let mut rstd = vec![0.0; n];
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for (o, v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
            *o = (v - mean) * rs;
        }
    }
    (out, rstd)
}

/// Backward of [`layer_norm`]: given normalized rows, their rstd, and the
/// gradient w.r.t. the normalized rows, accumulate the input gradient.
pub fn layer_norm_backward(xn: &[f64], rstd: &[f64], dxn: &[f64], d: usize, dx: &mut [f64]) {
    let n = xn.len() / d;
    for r in 0..n {
        let xr = &xn[r * d..(r + 1) * d];
        let gr = &dxn[r * d..(r + 1) * d];
        let mean_g = gr.iter().sum::<f64>() / d as f64;
        let mean_gx = gr.iter().zip(xr).map(|(g, x)| g * x).sum::<f64>() / d as f64;
        for ((o, g), x) in dx[r * d..(r + 1) * d].iter_mut().zip(gr).zip(xr) {
            *o += rstd[r] * (g - mean_g - x * mean_gx);
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    c[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_product() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        assert!(max_abs_diff(&matmul(&a, &b, m, k, n), &naive(&a, &b, m, k, n)) < 1e-12);
    }

    #[test]
    fn transposed_and_column_block_views() {
        // a is stored k×m; use its transpose.
        let (m, k, n) = (4, 3, 2);
        let at: Vec<f64> = (0..k * m).map(|i| i as f64 - 3.0).collect();
        let mut a = vec![0.0; m * k];
        for i in 0..m {
            for l in 0..k {
                a[i * k + l] = at[l * m + i];
            }
        }
        let b: Vec<f64> = (0..k * n).map(|i| 0.5 * i as f64).collect();
        let mut c = vec![0.0; m * n];
        gemm(1.0, MatRef::new(&at, k, m).t(), MatRef::new(&b, k, n), 0.0, MatMut::new(&mut c, m, n));
        assert!(max_abs_diff(&c, &naive(&a, &b, m, k, n)) < 1e-12);

        // Column block of a wider matrix.
        let wide: Vec<f64> = (0..m * 6).map(|i| i as f64).collect();
        let mut block = vec![0.0; m * k];
        for i in 0..m {
            for l in 0..k {
                block[i * k + l] = wide[i * 6 + 2 + l];
            }
        }
        let mut c2 = vec![0.0; m * n];
        gemm(1.0, MatRef::cols_of(&wide, m, 6, 2, k), MatRef::new(&b, k, n), 0.0, MatMut::new(&mut c2, m, n));
        assert!(max_abs_diff(&c2, &naive(&block, &b, m, k, n)) < 1e-12);
    }

    #[test]
    fn activation_derivatives_match_central_differences() {
        let h = 1e-6;
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-7);
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-7);
        }
    }

    #[test]
    fn layer_norm_backward_matches_central_differences() {
        let d = 6;
        let x: Vec<f64> = (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3 + i as f64 * 0.01).collect();
        let w: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let loss = |x: &[f64]| -> f64 { layer_norm(x, d).0.iter().zip(&w).map(|(a, b)| a * b).sum() };
        let (xn, rstd) = layer_norm(&x, d);
        let mut dx = vec![0.0; 12];
        layer_norm_backward(&xn, &rstd, &w, d, &mut dx);
        for i in 0..12 {
            let mut p = x.clone();
            p[i] += 1e-6;
            let mut m = x.clone();
            m[i] -= 1e-6;
            let fd = (loss(&p) - loss(&m)) / 2e-6;
            assert!((fd - dx[i]).abs() < 1e-6, "{i}: {fd} vs {}", dx[i]);
        }
    }
}
