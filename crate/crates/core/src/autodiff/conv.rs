//! 2-D cross-correlation via im2col with reflect padding.

use super::real::{matmul, Real};

/// Static description of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Mirror an out-of-range index back into `0..n` without repeating the edge.
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r as usize
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn maps(&self) -> (Vec<usize>, Vec<usize>) {
        let (oh, ow, k) = (self.out_h(), self.out_w(), self.k);
        let mut ys = Vec::with_capacity(k * oh);
        for ky in 0..k {
            for oy in 0..oh {
                ys.push(reflect((oy * self.stride + ky) as isize - self.pad as isize, self.h));
            }
        }
        let mut xs = Vec::with_capacity(k * ow);
        for kx in 0..k {
            for ox in 0..ow {
                xs.push(reflect((ox * self.stride + kx) as isize - self.pad as isize, self.w));
            }
        }
        (ys, xs)
    }

    /// Unfold one image (`c_in × h × w`) into `patch_len × (out_h · out_w)`.
    pub fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let (oh, ow, k) = (self.out_h(), self.out_w(), self.k);
        let (ys, xs) = self.maps();
        let plane = self.h * self.w;
        let mut dst = cols.chunks_exact_mut(oh * ow);
        for ci in 0..self.c_in {
            let src = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let row = dst.next().expect("cols sized by patch_len");
                    let xm = &xs[kx * ow..(kx + 1) * ow];
                    for oy in 0..oh {
                        let line = &src[ys[ky * oh + oy] * self.w..];
                        let out = &mut row[oy * ow..(oy + 1) * ow];
                        for (o, &ix) in out.iter_mut().zip(xm) {
                            *o = line[ix];
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatter-add columns back into `dx`.
    pub fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let (oh, ow, k) = (self.out_h(), self.out_w(), self.k);
        let (ys, xs) = self.maps();
        let plane = self.h * self.w;
        let mut src = cols.chunks_exact(oh * ow);
        for ci in 0..self.c_in {
            let dst = &mut dx[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let row = src.next().expect("cols sized by patch_len");
                    let xm = &xs[kx * ow..(kx + 1) * ow];
                    for oy in 0..oh {
                        let base = ys[ky * oh + oy] * self.w;
                        for (&g, &ix) in row[oy * ow..(oy + 1) * ow].iter().zip(xm) {
                            dst[base + ix] += g;
                        }
                    }
                }
            }
        }
    }

    /// Forward pass for one image; returns the unfolded columns for reuse.
    pub fn forward<T: Real>(&self, x: &[T], weight: &[T], bias: &[T], out: &mut [T]) -> Vec<T> {
        let p = self.out_h() * self.out_w();
        let mut cols = vec![T::zero(); self.patch_len() * p];
        self.im2col(x, &mut cols);
        for (row, &b) in out.chunks_exact_mut(p).zip(bias) {
            row.fill(b);
        }
        matmul(self.c_out, self.patch_len(), p, weight, false, &cols, false, T::one(), out);
        cols
    }

    /// Backward pass for one image, accumulating into `dw`, `db` and `dx`.
    pub fn backward<T: Real>(
        &self,
        cols: &[T],
        weight: &[T],
        dout: &[T],
        dw: &mut [T],
        db: &mut [T],
        dx: Option<&mut [T]>,
    ) {
        let p = self.out_h() * self.out_w();
        let kk = self.patch_len();
        matmul(self.c_out, p, kk, dout, false, cols, true, T::one(), dw);
        for (d, row) in db.iter_mut().zip(dout.chunks_exact(p)) {
            *d += row.iter().copied().sum();
        }
        if let Some(dx) = dx {
            let mut dcols = vec![T::zero(); kk * p];
            matmul(kk, self.c_out, p, weight, true, dout, false, T::zero(), &mut dcols);
            self.col2im(&dcols, dx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(3, 5), 3);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom { c_in: 2, c_out: 1, h: 5, w: 6, k: 3, stride: 1, pad: 1 };
        let x: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
        let c: Vec<f64> = (0..g.patch_len() * 30).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; c.len()];
        g.im2col(&x, &mut cols);
        let mut back = vec![0.0; 60];
        g.col2im(&c, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn direct_convolution_agrees() {
        let g = ConvGeom { c_in: 2, c_out: 3, h: 6, w: 5, k: 3, stride: 2, pad: 1 };
        let x: Vec<f64> = (0..60).map(|i| (i as f64 * 0.41).sin()).collect();
        let w: Vec<f64> = (0..3 * 18).map(|i| (i as f64 * 0.29).cos()).collect();
        let b = [0.1, -0.2, 0.3];
        let (oh, ow) = (g.out_h(), g.out_w());
        let mut out = vec![0.0; 3 * oh * ow];
        g.forward(&x, &w, &b, &mut out);
        for co in 0..3 {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = b[co];
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = reflect((oy * 2 + ky) as isize - 1, 6);
                                let ix = reflect((ox * 2 + kx) as isize - 1, 5);
                                s += w[((co * 2 + ci) * 3 + ky) * 3 + kx] * x[ci * 30 + iy * 5 + ix];
                            }
                        }
                    }
                    assert!((out[(co * oh + oy) * ow + ox] - s).abs() < 1e-12);
                }
            }
        }
    }
}
