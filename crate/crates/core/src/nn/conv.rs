//! 2-D cross-correlation with zero padding and channel groups.

use rayon::prelude::*;

use super::params::{Init, ParamId, ParamKind, ParamLayout};
use super::session::Session;
use crate::error::{Error, Result};
use crate::tensor::{gemm, BackwardCtx, Operation, Scalar, Shape, Tape, Tensor, Trans, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvParams {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        let p = ConvParams {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups,
        };
        p.validate()?;
        Ok(p)
    }

    /// Dense convolution, `groups = 1`.
    pub fn dense(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        Self::new(in_channels, out_channels, kernel, stride, padding, 1)
    }

    /// `1×1` projection, no padding.
    pub fn pointwise(in_channels: usize, out_channels: usize, stride: usize) -> Result<Self> {
        Self::new(in_channels, out_channels, 1, stride, 0, 1)
    }

    /// `k×k` depthwise with `floor(k/2)` padding, so stride 1 keeps the map size.
    pub fn depthwise(channels: usize, kernel: usize, stride: usize) -> Result<Self> {
        Self::new(channels, channels, kernel, stride, kernel / 2, channels)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::shape("conv2d", m));
        if self.in_channels == 0
            || self.out_channels == 0
            || self.kernel == 0
            || self.stride == 0
            || self.groups == 0
        {
            return bad(format!("zero-sized parameter in {self:?}"));
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return bad(format!(
                "channels {}→{} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            ));
        }
        Ok(())
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    fn is_plain_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel,
            self.kernel,
        )
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels / self.groups * self.kernel * self.kernel
    }

    /// `floor((H + 2p - k) / s) + 1` per spatial axis; must be positive.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |d: usize| {
            let padded = d + 2 * self.padding;
            if padded < self.kernel {
                Err(Error::shape(
                    "conv2d",
                    format!("kernel {} exceeds padded input {padded}", self.kernel),
                ))
            } else {
                Ok((padded - self.kernel) / self.stride + 1)
            }
        };
        Ok((axis(h)?, axis(w)?))
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.c() != self.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input {input} has {} channels, expected {}",
                    input.c(),
                    self.in_channels
                ),
            ));
        }
        let (ho, wo) = self.output_hw(input.h(), input.w())?;
        Ok(Shape::new(input.n(), self.out_channels, ho, wo))
    }

    /// Multiply-accumulates for one forward pass over `input`.
    pub fn macs(&self, input: Shape) -> Result<u64> {
        let out = self.output_shape(input)?;
        Ok(out.numel() as u64 * self.fan_in() as u64)
    }
}

struct Geometry {
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

fn im2col<T: Scalar>(
    x: &[T],
    channels: usize,
    p: &ConvParams,
    g: &Geometry,
    cols: &mut [T],
    ld: usize,
) {
    let k = p.kernel;
    let pad = p.padding as isize;
    let plane = g.ho * g.wo;
    if p.is_plain_pointwise() {
        for c in 0..channels {
            cols[c * ld..][..plane].copy_from_slice(&x[c * plane..][..plane]);
        }
        return;
    }
    for c in 0..channels {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * ld..][..plane];
                for oy in 0..g.ho {
                    let iy = (oy * p.stride) as isize + ky as isize - pad;
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * p.stride) as isize + kx as isize - pad;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(
    cols: &[T],
    channels: usize,
    p: &ConvParams,
    g: &Geometry,
    dx: &mut [T],
    ld: usize,
) {
    let k = p.kernel;
    let pad = p.padding as isize;
    let plane = g.ho * g.wo;
    if p.is_plain_pointwise() {
        for c in 0..channels {
            for (d, &v) in dx[c * plane..][..plane]
                .iter_mut()
                .zip(&cols[c * ld..][..plane])
            {
                *d = *d + v;
            }
        }
        return;
    }
    for c in 0..channels {
        let dxc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * ld..][..plane];
                for oy in 0..g.ho {
                    let iy = (oy * p.stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dxc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * p.stride) as isize + kx as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + row[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Copy one channel plane into a zero-bordered buffer of `(h + 2p) × (w + 2p)`.
fn pad_plane<T: Scalar>(src: &[T], g: &Geometry, pad: usize, dst: &mut [T]) {
    let pw = g.w + 2 * pad;
    dst.fill(T::zero());
    for (y, row) in src.chunks(g.w).enumerate() {
        dst[(y + pad) * pw + pad..][..g.w].copy_from_slice(row);
    }
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y = *y + a * x;
    }
}

/// Dot product with eight independent partial sums so it vectorizes.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    let mut s = acc.iter().fold(T::zero(), |s, &v| s + v);
    for (&x, &y) in ar.iter().zip(br) {
        s = s + x * y;
    }
    s
}

// Stride 1 works on "wide" rows: outputs are computed on an `ho × pw` grid
// laid over the padded plane, so each kernel tap is one long contiguous axpy
// or dot product. The `pw - wo` extra columns per row are discarded (or held
// at zero on the gradient side). Larger strides fall back to per-row loops.
fn depthwise_forward<T: Scalar>(x: &[T], w: &[T], p: &ConvParams, g: &Geometry, out: &mut [T]) {
    let (k, s) = (p.kernel, p.stride);
    let pw = g.w + 2 * p.padding;
    let plen = (g.h + 2 * p.padding) * pw;
    let mut xp = vec![T::zero(); plen + k];
    let mut wide = vec![T::zero(); if s == 1 { g.ho * pw } else { 0 }];
    for (c, oc) in out.chunks_mut(g.ho * g.wo).enumerate() {
        pad_plane(
            &x[c * g.h * g.w..(c + 1) * g.h * g.w],
            g,
            p.padding,
            &mut xp[..plen],
        );
        let wc = &w[c * k * k..(c + 1) * k * k];
        if s == 1 {
            wide.fill(T::zero());
            for (tap, &wv) in wc.iter().enumerate() {
                axpy(&mut wide, wv, &xp[(tap / k) * pw + tap % k..][..g.ho * pw]);
            }
            for (oy, orow) in oc.chunks_mut(g.wo).enumerate() {
                orow.copy_from_slice(&wide[oy * pw..][..g.wo]);
            }
            continue;
        }
        oc.fill(T::zero());
        for (oy, orow) in oc.chunks_mut(g.wo).enumerate() {
            for ky in 0..k {
                let src = &xp[(oy * s + ky) * pw..][..pw];
                for kx in 0..k {
                    let wv = wc[ky * k + kx];
                    for (o, &v) in orow.iter_mut().zip(src[kx..].iter().step_by(s)) {
                        *o = *o + wv * v;
                    }
                }
            }
        }
    }
}

fn depthwise_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gy: &[T],
    p: &ConvParams,
    g: &Geometry,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let (k, s, pad) = (p.kernel, p.stride, p.padding);
    let pw = g.w + 2 * pad;
    let plen = (g.h + 2 * pad) * pw;
    let mut xp = vec![T::zero(); plen + k];
    let mut dxp = vec![T::zero(); plen + k];
    let mut gw = vec![T::zero(); if s == 1 { g.ho * pw } else { 0 }];
    for c in 0..p.in_channels {
        let gc = &gy[c * g.ho * g.wo..(c + 1) * g.ho * g.wo];
        let wc = &w[c * k * k..(c + 1) * k * k];
        if s == 1 {
            for (oy, grow) in gc.chunks(g.wo).enumerate() {
                gw[oy * pw..][..g.wo].copy_from_slice(grow);
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            pad_plane(
                &x[c * g.h * g.w..(c + 1) * g.h * g.w],
                g,
                pad,
                &mut xp[..plen],
            );
            let dwc = &mut dw[c * k * k..(c + 1) * k * k];
            for (tap, d) in dwc.iter_mut().enumerate() {
                let (ky, kx) = (tap / k, tap % k);
                let acc = if s == 1 {
                    dot(&gw, &xp[ky * pw + kx..][..g.ho * pw])
                } else {
                    let mut acc = T::zero();
                    for (oy, grow) in gc.chunks(g.wo).enumerate() {
                        let src = &xp[(oy * s + ky) * pw + kx..];
                        for (&gv, &v) in grow.iter().zip(src.iter().step_by(s)) {
                            acc = acc + gv * v;
                        }
                    }
                    acc
                };
                *d = *d + acc;
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            dxp.fill(T::zero());
            for (tap, &wv) in wc.iter().enumerate() {
                let (ky, kx) = (tap / k, tap % k);
                if s == 1 {
                    axpy(&mut dxp[ky * pw + kx..][..g.ho * pw], wv, &gw);
                    continue;
                }
                for (oy, grow) in gc.chunks(g.wo).enumerate() {
                    let dst = &mut dxp[(oy * s + ky) * pw + kx..];
                    for (d, &gv) in dst.iter_mut().step_by(s).zip(grow) {
                        *d = *d + wv * gv;
                    }
                }
            }
            let dxc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
            for (y, row) in dxc.chunks_mut(g.w).enumerate() {
                row.copy_from_slice(&dxp[(y + pad) * pw + pad..][..g.w]);
            }
        }
    }
}

/// Upper bound on the im2col buffer, in elements, for the batched dense path.
const COLS_BUDGET: usize = 1 << 24;

fn samples_per_chunk(rows: usize, plane: usize, n: usize) -> usize {
    (COLS_BUDGET / (rows * plane).max(1)).clamp(1, n.max(1))
}

// groups = 1: a chunk of samples is laid side by side as one (rows, m·plane)
// matrix so each layer is a single large GEMM instead of N thin ones.
fn dense_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    p: &ConvParams,
    g: &Geometry,
    n: usize,
    out: &mut [T],
) {
    let (cin, cout, kc) = (p.in_channels, p.out_channels, p.fan_in());
    let plane = g.ho * g.wo;
    let (in_len, out_len) = (cin * g.h * g.w, cout * plane);
    let nb = samples_per_chunk(kc.max(cout), plane, n);
    let mut cols = vec![T::zero(); kc * nb * plane];
    let mut y = vec![T::zero(); cout * nb * plane];
    for start in (0..n).step_by(nb) {
        let m = nb.min(n - start);
        let ld = m * plane;
        for i in 0..m {
            im2col(
                &x[(start + i) * in_len..][..in_len],
                cin,
                p,
                g,
                &mut cols[i * plane..],
                ld,
            );
        }
        gemm(
            cout,
            kc,
            ld,
            T::one(),
            w,
            Trans::No,
            &cols,
            Trans::No,
            T::zero(),
            &mut y,
        );
        for o in 0..cout {
            for i in 0..m {
                out[(start + i) * out_len + o * plane..][..plane]
                    .copy_from_slice(&y[o * ld + i * plane..][..plane]);
            }
        }
    }
}

fn dense_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gy: &[T],
    p: &ConvParams,
    g: &Geometry,
    n: usize,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let (cin, cout, kc) = (p.in_channels, p.out_channels, p.fan_in());
    let plane = g.ho * g.wo;
    let (in_len, out_len) = (cin * g.h * g.w, cout * plane);
    let nb = samples_per_chunk(kc.max(cout), plane, n);
    let mut cols = vec![T::zero(); kc * nb * plane];
    let mut gmat = vec![T::zero(); cout * nb * plane];
    for start in (0..n).step_by(nb) {
        let m = nb.min(n - start);
        let ld = m * plane;
        for o in 0..cout {
            for i in 0..m {
                gmat[o * ld + i * plane..][..plane]
                    .copy_from_slice(&gy[(start + i) * out_len + o * plane..][..plane]);
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            gemm(
                kc,
                cout,
                ld,
                T::one(),
                w,
                Trans::Yes,
                &gmat,
                Trans::No,
                T::zero(),
                &mut cols,
            );
            for i in 0..m {
                col2im(
                    &cols[i * plane..],
                    cin,
                    p,
                    g,
                    &mut dx[(start + i) * in_len..][..in_len],
                    ld,
                );
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            for i in 0..m {
                im2col(
                    &x[(start + i) * in_len..][..in_len],
                    cin,
                    p,
                    g,
                    &mut cols[i * plane..],
                    ld,
                );
            }
            // Chunks run in a fixed order, so the reduction is deterministic.
            gemm(
                cout,
                ld,
                kc,
                T::one(),
                &gmat,
                Trans::No,
                &cols,
                Trans::Yes,
                T::one(),
                dw,
            );
        }
    }
}

fn forward_sample<T: Scalar>(x: &[T], w: &[T], p: &ConvParams, g: &Geometry, out: &mut [T]) {
    if p.is_depthwise() {
        depthwise_forward(x, w, p, g, out);
        return;
    }
    let cin = p.in_channels / p.groups;
    let cout = p.out_channels / p.groups;
    let kc = cin * p.kernel * p.kernel;
    let plane = g.ho * g.wo;
    let mut cols = if p.is_plain_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kc * plane]
    };
    for grp in 0..p.groups {
        let xg = &x[grp * cin * g.h * g.w..(grp + 1) * cin * g.h * g.w];
        let wg = &w[grp * cout * kc..(grp + 1) * cout * kc];
        let og = &mut out[grp * cout * plane..(grp + 1) * cout * plane];
        let b: &[T] = if p.is_plain_pointwise() {
            xg
        } else {
            im2col(xg, cin, p, g, &mut cols, plane);
            &cols
        };
        gemm(
            cout,
            kc,
            plane,
            T::one(),
            wg,
            Trans::No,
            b,
            Trans::No,
            T::zero(),
            og,
        );
    }
}

fn input_grad_sample<T: Scalar>(w: &[T], gy: &[T], p: &ConvParams, g: &Geometry, dx: &mut [T]) {
    let cin = p.in_channels / p.groups;
    let cout = p.out_channels / p.groups;
    let kc = cin * p.kernel * p.kernel;
    let plane = g.ho * g.wo;
    let mut cols = if p.is_plain_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kc * plane]
    };
    for grp in 0..p.groups {
        let wg = &w[grp * cout * kc..(grp + 1) * cout * kc];
        let gg = &gy[grp * cout * plane..(grp + 1) * cout * plane];
        let dxg = &mut dx[grp * cin * g.h * g.w..(grp + 1) * cin * g.h * g.w];
        if p.is_plain_pointwise() {
            gemm(
                kc,
                cout,
                plane,
                T::one(),
                wg,
                Trans::Yes,
                gg,
                Trans::No,
                T::zero(),
                dxg,
            );
        } else {
            gemm(
                kc,
                cout,
                plane,
                T::one(),
                wg,
                Trans::Yes,
                gg,
                Trans::No,
                T::zero(),
                &mut cols,
            );
            col2im(&cols, cin, p, g, dxg, plane);
        }
    }
}

fn weight_grad_sample<T: Scalar>(
    x: &[T],
    gy: &[T],
    p: &ConvParams,
    g: &Geometry,
    cols: &mut [T],
    dw: &mut [T],
) {
    let cin = p.in_channels / p.groups;
    let cout = p.out_channels / p.groups;
    let kc = cin * p.kernel * p.kernel;
    let plane = g.ho * g.wo;
    for grp in 0..p.groups {
        let xg = &x[grp * cin * g.h * g.w..(grp + 1) * cin * g.h * g.w];
        let gg = &gy[grp * cout * plane..(grp + 1) * cout * plane];
        let dwg = &mut dw[grp * cout * kc..(grp + 1) * cout * kc];
        let b: &[T] = if p.is_plain_pointwise() {
            xg
        } else {
            im2col(xg, cin, p, g, cols, plane);
            cols
        };
        gemm(
            cout,
            plane,
            kc,
            T::one(),
            gg,
            Trans::No,
            b,
            Trans::Yes,
            T::one(),
            dwg,
        );
    }
}

struct Conv2dOp {
    x: Var,
    w: Var,
    params: ConvParams,
}

impl<T: Scalar> Operation<T> for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.w]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, gy: &[T]) -> Vec<Option<Vec<T>>> {
        let x = ctx.value(self.x);
        let w = ctx.value(self.w);
        let p = &self.params;
        let s = x.shape();
        let out = ctx.output().shape();
        let g = Geometry {
            h: s.h(),
            w: s.w(),
            ho: out.h(),
            wo: out.w(),
        };
        let in_len = s.sample_len();
        let out_len = out.sample_len();

        if p.is_depthwise() {
            let mut dx = ctx.needs(0).then(|| vec![T::zero(); x.len()]);
            let mut dw = ctx.needs(1).then(|| vec![T::zero(); w.len()]);
            for n in 0..s.n() {
                depthwise_backward(
                    x.sample(n),
                    w.data(),
                    &gy[n * out_len..(n + 1) * out_len],
                    p,
                    &g,
                    dx.as_deref_mut()
                        .map(|d| &mut d[n * in_len..(n + 1) * in_len]),
                    dw.as_deref_mut(),
                );
            }
            return vec![dx, dw];
        }

        if p.groups == 1 {
            let mut dx = ctx.needs(0).then(|| vec![T::zero(); x.len()]);
            let mut dw = ctx.needs(1).then(|| vec![T::zero(); w.len()]);
            dense_backward(
                x.data(),
                w.data(),
                gy,
                p,
                &g,
                s.n(),
                dx.as_deref_mut(),
                dw.as_deref_mut(),
            );
            return vec![dx, dw];
        }

        let dx = ctx.needs(0).then(|| {
            let mut dx = vec![T::zero(); x.len()];
            dx.par_chunks_mut(in_len)
                .zip(gy.par_chunks(out_len))
                .for_each(|(dxn, gyn)| input_grad_sample(w.data(), gyn, p, &g, dxn));
            dx
        });
        let dw = ctx.needs(1).then(|| {
            // Fixed sample order keeps the reduction deterministic.
            let mut dw = vec![T::zero(); w.len()];
            let kc = p.fan_in();
            let mut cols = vec![
                T::zero();
                if p.is_plain_pointwise() {
                    0
                } else {
                    kc * g.ho * g.wo
                }
            ];
            for n in 0..s.n() {
                weight_grad_sample(
                    x.sample(n),
                    &gy[n * out_len..(n + 1) * out_len],
                    p,
                    &g,
                    &mut cols,
                    &mut dw,
                );
            }
            dw
        });
        vec![dx, dw]
    }
}

impl<T: Scalar> Tape<T> {
    /// Cross-correlation of `x (N,Cin,H,W)` with `w (Cout,Cin/g,k,k)`.
    pub fn conv2d(&mut self, x: Var, w: Var, params: &ConvParams) -> Result<Var> {
        params.validate()?;
        let xs = self.shape(x);
        let ws = self.shape(w);
        if ws != params.weight_shape() {
            return Err(Error::shape(
                "conv2d",
                format!("weight {ws}, expected {}", params.weight_shape()),
            ));
        }
        let out_shape = params.output_shape(xs)?;
        let g = Geometry {
            h: xs.h(),
            w: xs.w(),
            ho: out_shape.h(),
            wo: out_shape.w(),
        };
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out = vec![T::zero(); out_shape.numel()];
        if params.groups == 1 {
            dense_forward(xv.data(), wv.data(), params, &g, xs.n(), &mut out);
        } else {
            out.par_chunks_mut(out_shape.sample_len())
                .zip(xv.data().par_chunks(xs.sample_len()))
                .for_each(|(on, xn)| forward_sample(xn, wv.data(), params, &g, on));
        }
        let out = Tensor::from_vec(out_shape, out)?;
        self.record(
            out,
            Box::new(Conv2dOp {
                x,
                w,
                params: *params,
            }),
        )
    }
}

/// Convolution layer owning its weight (and optional per-channel bias).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub params: ConvParams,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv2d {
    pub fn new(
        layout: &mut ParamLayout,
        name: impl Into<String>,
        params: ConvParams,
        bias: bool,
    ) -> Self {
        let name = name.into();
        let weight = layout.push(
            format!("{name}.weight"),
            params.weight_shape(),
            Init::KaimingUniform {
                fan_in: params.fan_in(),
            },
            ParamKind::Weight { decay: true },
        );
        let bias = bias.then(|| {
            layout.push(
                format!("{name}.bias"),
                Shape::new(1, params.out_channels, 1, 1),
                Init::Zeros,
                ParamKind::Weight { decay: false },
            )
        });
        Conv2d {
            name,
            params,
            weight,
            bias,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let y = s.tape.conv2d(x, w, &self.params)?;
        match self.bias {
            Some(b) => {
                let b = s.param(b);
                s.tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}
