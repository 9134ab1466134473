//! Dense kernels shared by the graph operations. One-dimensional
//! convolutions and pools run through the 2-D code with a unit height.

/// `c (+)= op(a) * op(b)` for row-major contiguous matrices; `op(a)` is
/// `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a windowed operation over `[batch, channels, height, width]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Window2d {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl Window2d {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.ph - self.kh) / self.sh + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.pw - self.kw) / self.sw + 1
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn out_plane(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Input coordinate under output `(oy, ox)` and tap `(i, j)`, if not padding.
    #[inline]
    fn source(&self, oy: usize, ox: usize, i: usize, j: usize) -> Option<(usize, usize)> {
        let y = (oy * self.sh + i).checked_sub(self.ph)?;
        let x = (ox * self.sw + j).checked_sub(self.pw)?;
        (y < self.height && x < self.width).then_some((y, x))
    }

    /// Unfolds one batch item `[channels, h, w]` into `[channels*kh*kw, oh*ow]`.
    pub fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let n = oh * ow;
        for c in 0..self.channels {
            let plane = &x[c * self.plane()..(c + 1) * self.plane()];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * n;
                    let dst = &mut cols[row..row + n];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            dst[oy * ow + ox] = match self.source(oy, ox, i, j) {
                                Some((y, x)) => plane[y * self.width + x],
                                None => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `im2col`: scatters column gradients back onto the input.
    pub fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let n = oh * ow;
        for c in 0..self.channels {
            let plane = &mut dx[c * self.plane()..(c + 1) * self.plane()];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * n;
                    let src = &cols[row..row + n];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            if let Some((y, x)) = self.source(oy, ox, i, j) {
                                plane[y * self.width + x] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Windowed maximum with implicit `-inf` padding; returns values and the
    /// flat input index of each winner (first maximum in scan order).
    pub fn max_pool(&self, x: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let planes = self.batch * self.channels;
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut arg = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * self.plane();
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for i in 0..self.kh {
                        for j in 0..self.kw {
                            if let Some((y, xx)) = self.source(oy, ox, i, j) {
                                let idx = base + y * self.width + xx;
                                if best_idx == usize::MAX || x[idx] > best {
                                    best = x[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_idx);
                }
            }
        }
        (out, arg)
    }
}
