//! Raw numeric kernels behind the graph ops. Everything is row-major `f64`.

/// `c = a · b + beta · c` for an `m × k` by `k × n` product, with arbitrary
/// strides on the operands so transposes cost nothing. `c` is dense `m × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n, "gemm: output too small");
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: lhs out of bounds");
    assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: rhs out of bounds");
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    fn cols_rows(&self) -> usize {
        self.c_in * self.kernel
    }

    /// Output positions `t` whose input index `t * stride + off` lies in
    /// `0..len_in`.
    fn valid_range(&self, off: isize) -> std::ops::Range<usize> {
        let s = self.stride as isize;
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = (self.len_in as isize - off + s - 1).div_euclid(s).max(0);
        let hi = (hi as usize).min(self.len_out);
        (lo as usize).min(hi)..hi
    }

    fn offset(&self, k: usize) -> isize {
        (self.kernel - 1 - k) as isize - self.padding as isize
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let lo = self.len_out;
        for ci in 0..self.c_in {
            let xrow = &x[ci * self.len_in..(ci + 1) * self.len_in];
            for k in 0..self.kernel {
                let row = &mut cols[(ci * self.kernel + k) * lo..(ci * self.kernel + k + 1) * lo];
                let off = self.offset(k);
                let range = self.valid_range(off);
                row[..range.start].fill(0.0);
                row[range.end..].fill(0.0);
                if range.is_empty() {
                    continue;
                }
                if self.stride == 1 {
                    let src = (range.start as isize + off) as usize;
                    row[range.clone()].copy_from_slice(&xrow[src..src + range.len()]);
                } else {
                    for t in range {
                        row[t] = xrow[(t as isize * self.stride as isize + off) as usize];
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let lo = self.len_out;
        for ci in 0..self.c_in {
            let dxrow = &mut dx[ci * self.len_in..(ci + 1) * self.len_in];
            for k in 0..self.kernel {
                let row = &cols[(ci * self.kernel + k) * lo..(ci * self.kernel + k + 1) * lo];
                let off = self.offset(k);
                let range = self.valid_range(off);
                if range.is_empty() {
                    continue;
                }
                if self.stride == 1 {
                    let dst = (range.start as isize + off) as usize;
                    for (d, v) in dxrow[dst..dst + range.len()].iter_mut().zip(&row[range]) {
                        *d += v;
                    }
                } else {
                    for t in range {
                        dxrow[(t as isize * self.stride as isize + off) as usize] += row[t];
                    }
                }
            }
        }
    }

    /// Discrete convolution (kernel flipped), zero padding on both ends.
    pub fn forward(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let rows = self.cols_rows();
        let mut cols = vec![0.0; rows * self.len_out];
        let mut out = vec![0.0; self.batch * self.c_out * self.len_out];
        for b in 0..self.batch {
            self.im2col(&x[b * self.c_in * self.len_in..(b + 1) * self.c_in * self.len_in], &mut cols);
            let ob = &mut out[b * self.c_out * self.len_out..(b + 1) * self.c_out * self.len_out];
            gemm(
                self.c_out,
                rows,
                self.len_out,
                w,
                (rows, 1),
                &cols,
                (self.len_out, 1),
                0.0,
                ob,
            );
        }
        out
    }

    /// Returns `(dx, dw)`, each only when requested.
    pub fn backward(
        &self,
        dout: &[f64],
        x: &[f64],
        w: &[f64],
        want_dx: bool,
        want_dw: bool,
    ) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
        let rows = self.cols_rows();
        let lo = self.len_out;
        let mut cols = vec![0.0; rows * lo];
        let mut dcols = vec![0.0; rows * lo];
        let mut dx = want_dx.then(|| vec![0.0; x.len()]);
        let mut dw = want_dw.then(|| vec![0.0; w.len()]);
        for b in 0..self.batch {
            let xb = &x[b * self.c_in * self.len_in..(b + 1) * self.c_in * self.len_in];
            let db = &dout[b * self.c_out * lo..(b + 1) * self.c_out * lo];
            if let Some(dw) = dw.as_mut() {
                self.im2col(xb, &mut cols);
                // dw[co, r] += sum_t dout[co, t] * cols[r, t]
                gemm(self.c_out, lo, rows, db, (lo, 1), &cols, (1, lo), 1.0, dw);
            }
            if let Some(dx) = dx.as_mut() {
                // dcols[r, t] = sum_co w[co, r] * dout[co, t]
                gemm(rows, self.c_out, lo, w, (1, rows), db, (lo, 1), 0.0, &mut dcols);
                self.col2im(
                    &dcols,
                    &mut dx[b * self.c_in * self.len_in..(b + 1) * self.c_in * self.len_in],
                );
            }
        }
        (dx, dw)
    }
}
