//! Direct 3D convolution kernels over `[C, X, Y, Z]` volumes.
//!
//! Weights are `[C_out, C_in, kx, ky, kz]`. A transposed convolution reuses
//! the same weight layout: its forward pass is [`backward_input`] and its
//! input gradient is [`forward`].

use crate::error::{shape_err, Result};
use crate::parallel;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub dilation: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeom {
    /// Cubic kernel `k`, stride `s`, "same" padding for odd kernels.
    pub fn cube(k: usize, s: usize) -> Self {
        ConvGeom {
            kernel: [k; 3],
            stride: [s; 3],
            dilation: [1; 3],
            padding: [k / 2; 3],
        }
    }

    /// 1D kernel of size 3 along `axis` with dilation `d` and stride `s`;
    /// the stride applies to that axis only.
    pub fn axis(axis: usize, d: usize, s: usize) -> Self {
        let mut g = ConvGeom {
            kernel: [1; 3],
            stride: [1; 3],
            dilation: [1; 3],
            padding: [0; 3],
        };
        g.kernel[axis] = 3;
        g.dilation[axis] = d;
        g.padding[axis] = d;
        g.stride[axis] = s;
        g
    }

    pub fn pointwise(s: usize) -> Self {
        ConvGeom {
            kernel: [1; 3],
            stride: [s; 3],
            dilation: [1; 3],
            padding: [0; 3],
        }
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn out_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let span = self.dilation[a] * (self.kernel[a] - 1) + 1;
            let padded = input[a] + 2 * self.padding[a];
            if padded < span {
                return Err(shape_err(format!(
                    "input extent {} too small for kernel span {span}",
                    input[a]
                )));
            }
            out[a] = (padded - span) / self.stride[a] + 1;
        }
        Ok(out)
    }

    /// Output dims of the transposed convolution for a given input.
    pub fn transposed_out_dims(&self, input: [usize; 3]) -> [usize; 3] {
        let mut out = [0; 3];
        for a in 0..3 {
            let span = self.dilation[a] * (self.kernel[a] - 1) + 1;
            out[a] = (input[a] - 1) * self.stride[a] + span - 2 * self.padding[a];
        }
        out
    }
}

/// Output indices `o` in `[lo, hi)` with `0 <= o*s + off < n_in`.
fn valid(off: isize, s: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let s = s as isize;
    let lo = if off < 0 { (-off + s - 1) / s } else { 0 };
    let last = n_in as isize - 1 - off;
    let hi = if last < 0 { 0 } else { last / s + 1 };
    let lo = lo.min(n_out as isize) as usize;
    let hi = hi.min(n_out as isize).max(lo as isize) as usize;
    (lo, hi)
}

struct Plan {
    cin: usize,
    cout: usize,
    din: [usize; 3],
    dout: [usize; 3],
    g: ConvGeom,
}

impl Plan {
    fn in_size(&self) -> usize {
        self.din.iter().product()
    }
    fn out_size(&self) -> usize {
        self.dout.iter().product()
    }

    /// Visits every (tap, output row) pair: `f(tap, out_offset, in_offset, len)`
    /// where the row covers `len` z-positions starting at the given offsets,
    /// stepping 1 in the output and `stride_z` in the input.
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let g = &self.g;
        let [_, yi, zi] = self.din;
        let [xo, yo, zo] = self.dout;
        let mut tap = 0;
        for kx in 0..g.kernel[0] {
            let offx = (kx * g.dilation[0]) as isize - g.padding[0] as isize;
            let (x0, x1) = valid(offx, g.stride[0], self.din[0], xo);
            for ky in 0..g.kernel[1] {
                let offy = (ky * g.dilation[1]) as isize - g.padding[1] as isize;
                let (y0, y1) = valid(offy, g.stride[1], yi, yo);
                for kz in 0..g.kernel[2] {
                    let offz = (kz * g.dilation[2]) as isize - g.padding[2] as isize;
                    let (z0, z1) = valid(offz, g.stride[2], zi, zo);
                    if z1 > z0 {
                        for ox in x0..x1 {
                            let ix = (ox as isize * g.stride[0] as isize + offx) as usize;
                            for oy in y0..y1 {
                                let iy = (oy as isize * g.stride[1] as isize + offy) as usize;
                                let iz = (z0 as isize * g.stride[2] as isize + offz) as usize;
                                f(tap, (ox * yo + oy) * zo + z0, (ix * yi + iy) * zi + iz, z1 - z0);
                            }
                        }
                    }
                    tap += 1;
                }
            }
        }
    }
}

fn plan(input_shape: &[usize], weight_shape: &[usize], g: ConvGeom) -> Result<Plan> {
    if input_shape.len() != 4 || weight_shape.len() != 5 {
        return Err(shape_err(format!(
            "conv expects [C,X,Y,Z] input and 5D weight, got {input_shape:?} / {weight_shape:?}"
        )));
    }
    if weight_shape[1] != input_shape[0] || weight_shape[2..] != g.kernel {
        return Err(shape_err(format!(
            "weight {weight_shape:?} incompatible with input {input_shape:?} / kernel {:?}",
            g.kernel
        )));
    }
    let din = [input_shape[1], input_shape[2], input_shape[3]];
    Ok(Plan {
        cin: input_shape[0],
        cout: weight_shape[0],
        din,
        dout: g.out_dims(din)?,
        g,
    })
}

/// Rows of a fixed-size block of the output matrix handled per task. Fixed
/// independently of the thread count so results never depend on it.
fn row_block(m: usize) -> usize {
    m.div_ceil(8).max(4)
}

/// `c = a * b + beta * c` for an `m x k` by `k x n` product with arbitrary
/// strides on `a` and `b`; `c` is row-major and split by rows across tasks.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_strides: (usize, usize), b: &[f64], b_strides: (usize, usize), beta: f64, c: &mut [f64]) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let rows = row_block(m);
    let (rsa, csa) = a_strides;
    parallel::for_each_chunk(c, rows * n, |blk, cc| {
        let r0 = blk * rows;
        let mm = cc.len() / n;
        if k == 0 {
            cc.iter_mut().for_each(|v| *v *= beta);
            return;
        }
        // SAFETY: every index touched lies inside the slices: rows r0..r0+mm
        // of `a` and all of `b` as described by their strides, and `cc` is
        // exactly mm x n row-major.
        unsafe {
            matrixmultiply::dgemm(
                mm,
                k,
                n,
                1.0,
                a.as_ptr().add(r0 * rsa),
                rsa as isize,
                csa as isize,
                b.as_ptr(),
                b_strides.0 as isize,
                b_strides.1 as isize,
                beta,
                cc.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
}

/// Unfolds `x` into a `[C_in * taps, out_size]` matrix.
fn im2col(p: &Plan, x: &[f64]) -> Vec<f64> {
    let (osz, isz, taps) = (p.out_size(), p.in_size(), p.g.taps());
    let sz = p.g.stride[2];
    let mut cols = vec![0.0; p.cin * taps * osz];
    parallel::for_each_chunk(&mut cols, taps * osz, |ci, block| {
        let xc = &x[ci * isz..(ci + 1) * isz];
        p.for_each_row(|t, o, i, n| {
            let row = &mut block[t * osz..(t + 1) * osz];
            if sz == 1 {
                row[o..o + n].copy_from_slice(&xc[i..i + n]);
            } else {
                for k in 0..n {
                    row[o + k] = xc[i + k * sz];
                }
            }
        });
    });
    cols
}

fn is_identity_layout(g: &ConvGeom) -> bool {
    g.kernel == [1; 3] && g.stride == [1; 3] && g.padding == [0; 3]
}

/// `y = conv(x, w) + b`.
pub fn forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, g: ConvGeom) -> Result<Tensor> {
    let p = plan(x.shape(), w.shape(), g)?;
    if let Some(b) = b {
        if b.len() != p.cout {
            return Err(shape_err("bias length != output channels"));
        }
    }
    let osz = p.out_size();
    let k = p.cin * g.taps();
    let mut out = Tensor::zeros(&[p.cout, p.dout[0], p.dout[1], p.dout[2]]);
    if let Some(b) = b {
        for (co, oc) in out.data_mut().chunks_mut(osz).enumerate() {
            oc.fill(b.data()[co]);
        }
    }
    let owned;
    let cols: &[f64] = if is_identity_layout(&g) {
        x.data()
    } else {
        owned = im2col(&p, x.data());
        &owned
    };
    gemm(p.cout, k, osz, w.data(), (k, 1), cols, (osz, 1), 1.0, out.data_mut());
    Ok(out)
}

/// Gradient of `conv(x, w)` with respect to `x`, given the output gradient.
/// `in_dims` fixes the spatial extent of `x` (several inputs can map to the
/// same output size under striding).
pub fn backward_input(gy: &Tensor, w: &Tensor, g: ConvGeom, in_dims: [usize; 3]) -> Result<Tensor> {
    let cin = w.shape()[1];
    let p = plan(&[cin, in_dims[0], in_dims[1], in_dims[2]], w.shape(), g)?;
    if gy.shape() != [p.cout, p.dout[0], p.dout[1], p.dout[2]] {
        return Err(shape_err(format!(
            "output gradient {:?} does not match conv output {:?}",
            gy.shape(),
            p.dout
        )));
    }
    let (osz, isz, taps) = (p.out_size(), p.in_size(), g.taps());
    let k = cin * taps;
    let mut gx = Tensor::zeros(&[cin, in_dims[0], in_dims[1], in_dims[2]]);
    if is_identity_layout(&g) {
        gemm(k, p.cout, osz, w.data(), (1, k), gy.data(), (osz, 1), 0.0, gx.data_mut());
        return Ok(gx);
    }
    let mut gcols = vec![0.0; k * osz];
    gemm(k, p.cout, osz, w.data(), (1, k), gy.data(), (osz, 1), 0.0, &mut gcols);
    let sz = g.stride[2];
    parallel::for_each_chunk(gx.data_mut(), isz, |ci, gc| {
        let block = &gcols[ci * taps * osz..(ci + 1) * taps * osz];
        p.for_each_row(|t, o, i, n| {
            let row = &block[t * osz..(t + 1) * osz];
            if sz == 1 {
                for (a, &v) in gc[i..i + n].iter_mut().zip(&row[o..o + n]) {
                    *a += v;
                }
            } else {
                for kk in 0..n {
                    gc[i + kk * sz] += row[o + kk];
                }
            }
        });
    });
    Ok(gx)
}

/// Gradient with respect to the weight (and the bias, summed per channel).
pub fn backward_weight(gy: &Tensor, x: &Tensor, w_shape: &[usize], g: ConvGeom) -> Result<(Tensor, Tensor)> {
    let p = plan(x.shape(), w_shape, g)?;
    let osz = p.out_size();
    if gy.shape() != [p.cout, p.dout[0], p.dout[1], p.dout[2]] {
        return Err(shape_err("output gradient does not match conv output"));
    }
    let k = p.cin * g.taps();
    let mut gw = Tensor::zeros(w_shape);
    let owned;
    let cols: &[f64] = if is_identity_layout(&g) {
        x.data()
    } else {
        owned = im2col(&p, x.data());
        &owned
    };
    gemm(p.cout, osz, k, gy.data(), (osz, 1), cols, (1, osz), 0.0, gw.data_mut());
    let gyd = gy.data();
    let gb: Vec<f64> = (0..p.cout)
        .map(|co| gyd[co * osz..(co + 1) * osz].iter().sum())
        .collect();
    let gb = Tensor::from_vec(&[p.cout], gb)?;
    Ok((gw, gb))
}
