use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::tensor::{BackwardCtx, Operation, Scalar, Shape, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoolParams {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolParams {
    /// The ResNet stem pool: 3×3, stride 2, padding 1.
    pub const STEM: PoolParams = PoolParams {
        kernel: 3,
        stride: 2,
        padding: 1,
    };

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::shape("max_pool2d", "zero kernel or stride"));
        }
        if self.padding * 2 > self.kernel {
            return Err(Error::shape(
                "max_pool2d",
                "padding exceeds half the window",
            ));
        }
        let axis = |d: usize| {
            let padded = d + 2 * self.padding;
            if padded < self.kernel {
                Err(Error::shape(
                    "max_pool2d",
                    format!("window {} larger than padded input {padded}", self.kernel),
                ))
            } else {
                Ok((padded - self.kernel) / self.stride + 1)
            }
        };
        Ok(Shape::new(
            input.n(),
            input.c(),
            axis(input.h())?,
            axis(input.w())?,
        ))
    }
}

struct MaxPoolOp {
    x: Var,
    argmax: Vec<usize>,
}

impl<T: Scalar> Operation<T> for MaxPoolOp {
    fn name(&self) -> &'static str {
        "max_pool2d"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let mut dx = vec![T::zero(); ctx.value(self.x).len()];
        for (&src, &gi) in self.argmax.iter().zip(g) {
            dx[src] = dx[src] + gi;
        }
        vec![Some(dx)]
    }

    fn branch_key(&self, _output: &Tensor<T>) -> Option<u64> {
        let mut h = DefaultHasher::new();
        self.argmax.hash(&mut h);
        Some(h.finish())
    }
}

struct GlobalAvgPoolOp {
    x: Var,
}

impl<T: Scalar> Operation<T> for GlobalAvgPoolOp {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let s = ctx.value(self.x).shape();
        let plane = s.plane();
        let inv = T::one() / T::from_usize(plane).unwrap();
        let mut dx = vec![T::zero(); s.numel()];
        for (i, chunk) in dx.chunks_mut(plane).enumerate() {
            chunk.fill(g[i] * inv);
        }
        vec![Some(dx)]
    }
}

impl<T: Scalar> Tape<T> {
    /// Max pooling; padded positions never win.
    pub fn max_pool2d(&mut self, x: Var, p: PoolParams) -> Result<Var> {
        let s = self.shape(x);
        let out_shape = p.output_shape(s)?;
        let xv = self.value(x);
        let (ho, wo) = (out_shape.h(), out_shape.w());
        let mut out = Vec::with_capacity(out_shape.numel());
        let mut argmax = Vec::with_capacity(out_shape.numel());
        for plane_idx in 0..s.n() * s.c() {
            let base = plane_idx * s.plane();
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best: Option<(T, usize)> = None;
                    for ky in 0..p.kernel {
                        let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                        if iy < 0 || iy >= s.h() as isize {
                            continue;
                        }
                        for kx in 0..p.kernel {
                            let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                            if ix < 0 || ix >= s.w() as isize {
                                continue;
                            }
                            let idx = base + iy as usize * s.w() + ix as usize;
                            let v = xv.data()[idx];
                            if best.map_or(true, |(b, _)| v > b) {
                                best = Some((v, idx));
                            }
                        }
                    }
                    let (v, idx) = best.expect("padding below half the window leaves a real pixel");
                    out.push(v);
                    argmax.push(idx);
                }
            }
        }
        let out = Tensor::from_vec(out_shape, out)?;
        self.record(out, Box::new(MaxPoolOp { x, argmax }))
    }

    /// Mean over `H×W`, giving `(N,C,1,1)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let xv = self.value(x);
        let inv = T::one() / T::from_usize(s.plane()).unwrap();
        let data = xv
            .data()
            .chunks(s.plane())
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::from_vec(Shape::new(s.n(), s.c(), 1, 1), data)?;
        self.record(out, Box::new(GlobalAvgPoolOp { x }))
    }
}
