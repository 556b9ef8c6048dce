//! im2col convolution kernels (no padding, NCHW layout).

use std::cell::RefCell;

use crate::error::{Result, TensorError};
use crate::linalg::{gemm, MatRef};

/// Upper bound on im2col buffer size (in floats) before the batch is chunked.
const COL_BUDGET: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(x_shape: &[usize], w_shape: &[usize], stride: (usize, usize)) -> Result<Self> {
        if x_shape.len() != 4 || w_shape.len() != 4 {
            return Err(TensorError::Shape(format!(
                "conv2d expects 4-d input and kernel, got {x_shape:?} and {w_shape:?}"
            )));
        }
        let (batch, in_channels, height, width) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
        let (out_channels, kc, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
        if kc != in_channels {
            return Err(TensorError::Shape(format!(
                "conv2d kernel expects {kc} input channels, input has {in_channels}"
            )));
        }
        if height < kh || width < kw || stride.0 == 0 || stride.1 == 0 {
            return Err(TensorError::Shape(format!(
                "conv2d kernel {kh}x{kw} stride {stride:?} does not fit input {height}x{width}"
            )));
        }
        Ok(Self {
            batch,
            in_channels,
            height,
            width,
            out_channels,
            kernel: (kh, kw),
            stride,
            out_height: (height - kh) / stride.0 + 1,
            out_width: (width - kw) / stride.1 + 1,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [
            self.batch,
            self.out_channels,
            self.out_height,
            self.out_width,
        ]
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    fn out_plane(&self) -> usize {
        self.out_height * self.out_width
    }

    fn in_plane(&self) -> usize {
        self.height * self.width
    }

    fn chunk(&self) -> usize {
        let per_sample = self.patch() * self.out_plane();
        (COL_BUDGET / per_sample.max(1)).clamp(1, self.batch.max(1))
    }

    fn im2col(&self, x: &[f32], b0: usize, nb: usize, col: &mut [f32]) {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let plane = self.out_plane();
        let ncols = nb * plane;
        for c in 0..self.in_channels {
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (c * kh + ki) * kw + kj;
                    let dst_row = &mut col[row * ncols..(row + 1) * ncols];
                    for b in 0..nb {
                        let src = &x[((b0 + b) * self.in_channels + c) * self.in_plane()..];
                        for oi in 0..self.out_height {
                            let src_row = &src[(oi * sh + ki) * self.width + kj..];
                            let dst =
                                &mut dst_row[b * plane + oi * self.out_width..][..self.out_width];
                            if sw == 1 {
                                dst.copy_from_slice(&src_row[..self.out_width]);
                            } else {
                                for (oj, d) in dst.iter_mut().enumerate() {
                                    *d = src_row[oj * sw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(&self, col: &[f32], b0: usize, nb: usize, dx: &mut [f32]) {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let plane = self.out_plane();
        let ncols = nb * plane;
        for c in 0..self.in_channels {
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (c * kh + ki) * kw + kj;
                    let src_row = &col[row * ncols..(row + 1) * ncols];
                    for b in 0..nb {
                        let base = ((b0 + b) * self.in_channels + c) * self.in_plane();
                        for oi in 0..self.out_height {
                            let dst = &mut dx[base + (oi * sh + ki) * self.width + kj..];
                            let src = &src_row[b * plane + oi * self.out_width..][..self.out_width];
                            for (oj, s) in src.iter().enumerate() {
                                dst[oj * sw] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

thread_local! {
    static SCRATCH: RefCell<[Vec<f32>; 2]> = const { RefCell::new([Vec::new(), Vec::new()]) };
}

/// Two reusable scratch buffers of at least the given lengths. Contents are
/// stale; callers overwrite before reading.
fn with_scratch<R>(a: usize, b: usize, f: impl FnOnce(&mut [f32], &mut [f32]) -> R) -> R {
    SCRATCH.with(|s| {
        let mut s = s.borrow_mut();
        let [x, y] = &mut *s;
        if x.len() < a {
            x.resize(a, 0.0);
        }
        if y.len() < b {
            y.resize(b, 0.0);
        }
        f(&mut x[..a], &mut y[..b])
    })
}

/// Forward pass. Returns the `[B, O, OH, OW]` output buffer.
pub fn conv2d_forward(geom: &ConvGeometry, x: &[f32], w: &[f32], bias: Option<&[f32]>) -> Vec<f32> {
    let plane = geom.out_plane();
    let patch = geom.patch();
    let chunk = geom.chunk();
    let mut out = vec![0.0f32; geom.batch * geom.out_channels * plane];
    with_scratch(
        patch * chunk * plane,
        geom.out_channels * chunk * plane,
        |col, tmp| {
            let wm = MatRef::row_major(w, geom.out_channels, patch);
            let mut b0 = 0;
            while b0 < geom.batch {
                let nb = chunk.min(geom.batch - b0);
                let ncols = nb * plane;
                let col = &mut col[..patch * ncols];
                let tmp = &mut tmp[..geom.out_channels * ncols];
                geom.im2col(x, b0, nb, col);
                gemm(wm, MatRef::row_major(col, patch, ncols), 0.0, tmp);
                for b in 0..nb {
                    for o in 0..geom.out_channels {
                        let dst = &mut out[((b0 + b) * geom.out_channels + o) * plane..][..plane];
                        let src = &tmp[o * ncols + b * plane..][..plane];
                        let bo = bias.map_or(0.0, |bias| bias[o]);
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d = s + bo;
                        }
                    }
                }
                b0 += nb;
            }
        },
    );
    out
}

pub struct ConvGrads {
    pub dx: Option<Vec<f32>>,
    pub dw: Option<Vec<f32>>,
    pub db: Option<Vec<f32>>,
}

/// Backward pass given the upstream gradient `dy` laid out like the output.
pub fn conv2d_backward(
    geom: &ConvGeometry,
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    need: (bool, bool, bool),
) -> ConvGrads {
    let (need_dx, need_dw, need_db) = need;
    let plane = geom.out_plane();
    let patch = geom.patch();
    let chunk = geom.chunk();
    let mut dx = need_dx.then(|| vec![0.0f32; x.len()]);
    let mut dw = need_dw.then(|| vec![0.0f32; w.len()]);
    let db = need_db.then(|| {
        let mut db = vec![0.0f32; geom.out_channels];
        for b in 0..geom.batch {
            for (o, acc) in db.iter_mut().enumerate() {
                *acc += dy[(b * geom.out_channels + o) * plane..][..plane]
                    .iter()
                    .sum::<f32>();
            }
        }
        db
    });
    if need_dx || need_dw {
        with_scratch(
            patch * chunk * plane,
            geom.out_channels * chunk * plane,
            |col, dyc| {
                let wm = MatRef::row_major(w, geom.out_channels, patch);
                let mut b0 = 0;
                while b0 < geom.batch {
                    let nb = chunk.min(geom.batch - b0);
                    let ncols = nb * plane;
                    for b in 0..nb {
                        for o in 0..geom.out_channels {
                            dyc[o * ncols + b * plane..][..plane].copy_from_slice(
                                &dy[((b0 + b) * geom.out_channels + o) * plane..][..plane],
                            );
                        }
                    }
                    let dym = MatRef::row_major(
                        &dyc[..geom.out_channels * ncols],
                        geom.out_channels,
                        ncols,
                    );
                    let col = &mut col[..patch * ncols];
                    if let Some(dw) = dw.as_mut() {
                        geom.im2col(x, b0, nb, col);
                        gemm(dym, MatRef::row_major(col, patch, ncols).t(), 1.0, dw);
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(wm.t(), dym, 0.0, col);
                        geom.col2im_add(col, b0, nb, dx);
                    }
                    b0 += nb;
                }
            },
        );
    }
    ConvGrads { dx, dw, db }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(geom: &ConvGeometry, x: &[f32], w: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; geom.batch * geom.out_channels * geom.out_height * geom.out_width];
        for b in 0..geom.batch {
            for o in 0..geom.out_channels {
                for oi in 0..geom.out_height {
                    for oj in 0..geom.out_width {
                        let mut acc = 0.0;
                        for c in 0..geom.in_channels {
                            for ki in 0..geom.kernel.0 {
                                for kj in 0..geom.kernel.1 {
                                    let xi = oi * geom.stride.0 + ki;
                                    let xj = oj * geom.stride.1 + kj;
                                    acc += x[((b * geom.in_channels + c) * geom.height + xi)
                                        * geom.width
                                        + xj]
                                        * w[((o * geom.in_channels + c) * geom.kernel.0 + ki)
                                            * geom.kernel.1
                                            + kj];
                                }
                            }
                        }
                        out[((b * geom.out_channels + o) * geom.out_height + oi)
                            * geom.out_width
                            + oj] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_direct_loops() {
        for stride in [(1, 1), (2, 2), (1, 2)] {
            let geom = ConvGeometry::new(&[2, 3, 9, 8], &[4, 3, 3, 2], stride).unwrap();
            let x: Vec<f32> = (0..2 * 3 * 9 * 8)
                .map(|i| ((i * 37 % 17) as f32) * 0.1 - 0.8)
                .collect();
            let w: Vec<f32> = (0..4 * 3 * 3 * 2)
                .map(|i| ((i * 11 % 7) as f32) * 0.2 - 0.6)
                .collect();
            let got = conv2d_forward(&geom, &x, &w, None);
            let want = naive(&geom, &x, &w);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-4, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn geometry_output_size() {
        let g = ConvGeometry::new(&[1, 9, 256, 256], &[32, 9, 3, 3], (2, 2)).unwrap();
        assert_eq!((g.out_height, g.out_width), (127, 127));
        assert!(ConvGeometry::new(&[1, 3, 8, 8], &[4, 2, 3, 3], (1, 1)).is_err());
    }
}
