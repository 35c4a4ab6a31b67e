use super::params::{Init, ParamId, ParamKind, ParamLayout};
use super::session::Session;
use crate::error::{Error, Result};
use crate::tensor::{gemm, BackwardCtx, Operation, Scalar, Shape, Tape, Tensor, Trans, Var};

struct LinearOp {
    x: Var,
    w: Var,
    b: Var,
}

impl<T: Scalar> Operation<T> for LinearOp {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.w, self.b]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let x = ctx.value(self.x);
        let w = ctx.value(self.w);
        let (n, cin, cout) = (x.shape().n(), x.shape().c(), w.shape().n());
        let dx = ctx.needs(0).then(|| {
            let mut dx = vec![T::zero(); n * cin];
            gemm(
                n,
                cout,
                cin,
                T::one(),
                g,
                Trans::No,
                w.data(),
                Trans::No,
                T::zero(),
                &mut dx,
            );
            dx
        });
        let dw = ctx.needs(1).then(|| {
            let mut dw = vec![T::zero(); cout * cin];
            gemm(
                cout,
                n,
                cin,
                T::one(),
                g,
                Trans::Yes,
                x.data(),
                Trans::No,
                T::zero(),
                &mut dw,
            );
            dw
        });
        let db = ctx.needs(2).then(|| {
            let mut db = vec![T::zero(); cout];
            for row in g.chunks(cout) {
                db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
            }
            db
        });
        vec![dx, dw, db]
    }
}

impl<T: Scalar> Tape<T> {
    /// `x (N,Cin,1,1) · Wᵀ + b` with `W (Cout,Cin,1,1)` and `b (1,Cout,1,1)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.plane() != 1
            || ws.plane() != 1
            || ws.c() != xs.c()
            || bs != Shape::new(1, ws.n(), 1, 1)
        {
            return Err(Error::shape("linear", format!("x {xs}, w {ws}, b {bs}")));
        }
        let (n, cin, cout) = (xs.n(), xs.c(), ws.n());
        let mut out: Vec<T> = (0..n)
            .flat_map(|_| self.value(b).data().iter().copied())
            .collect();
        gemm(
            n,
            cin,
            cout,
            T::one(),
            self.value(x).data(),
            Trans::No,
            self.value(w).data(),
            Trans::Yes,
            T::one(),
            &mut out,
        );
        let out = Tensor::from_vec(Shape::new(n, cout, 1, 1), out)?;
        self.record(out, Box::new(LinearOp { x, w, b }))
    }
}

/// Classifier head applied after global pooling.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(
        layout: &mut ParamLayout,
        name: impl Into<String>,
        in_features: usize,
        out_features: usize,
    ) -> Self {
        let name = name.into();
        Linear {
            weight: layout.push(
                format!("{name}.weight"),
                Shape::new(out_features, in_features, 1, 1),
                Init::KaimingUniform {
                    fan_in: in_features,
                },
                ParamKind::Weight { decay: true },
            ),
            bias: layout.push(
                format!("{name}.bias"),
                Shape::new(1, out_features, 1, 1),
                Init::Zeros,
                ParamKind::Weight { decay: false },
            ),
            name,
            in_features,
            out_features,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        s.tape.linear(x, w, b)
    }
}
