//! Whole networks: stem, four stages of residual blocks, pooled linear head.

pub mod checkpoint;
pub mod presets;
pub mod spec;
pub mod tune;

use rand_chacha::ChaCha8Rng;

use crate::blocks::{build_block, Block, BlockSpec};
use crate::error::{Error, Result};
use crate::nn::{
    ActKind, BatchNorm2d, Conv2d, ConvParams, LayerDesc, Linear, Mode, ParamLayout, ParamStore,
    PoolParams, Session, TracedLayer, Tracer,
};
use crate::tensor::{Scalar, Shape, Tape, Tensor, Var};

pub use presets::{preset, preset_names, Preset};
pub use spec::{ModelSpec, StemKind};
pub use tune::{tune_stage3_depth, TuneResult};

#[derive(Debug, Clone)]
enum Unit {
    Conv(Conv2d),
    Norm(BatchNorm2d),
    Act(String, ActKind),
    MaxPool(String, PoolParams),
}

impl Unit {
    fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        match self {
            Unit::Conv(c) => c.forward(s, x),
            Unit::Norm(n) => n.forward(s, x),
            Unit::Act(_, k) => s.tape.activation(*k, x),
            Unit::MaxPool(_, p) => s.tape.max_pool2d(x, *p),
        }
    }

    fn trace(&self, t: &mut Tracer, x: Shape) -> Result<Shape> {
        match self {
            Unit::Conv(c) => t.push(c.name.clone(), LayerDesc::Conv(c.params), x),
            Unit::Norm(n) => t.push(
                n.name.clone(),
                LayerDesc::BatchNorm {
                    channels: n.channels,
                },
                x,
            ),
            Unit::Act(name, k) => t.push(name.clone(), LayerDesc::Act(*k), x),
            Unit::MaxPool(name, p) => t.push(name.clone(), LayerDesc::MaxPool(*p), x),
        }
    }
}

fn build_stem(layout: &mut ParamLayout, spec: &ModelSpec) -> Result<Vec<Unit>> {
    let w0 = spec.widths[0];
    let act = spec.activation;
    let mut units = Vec::new();
    match spec.stem {
        StemKind::ResNetStyle => {
            units.push(Unit::Conv(Conv2d::new(
                layout,
                "stem.conv",
                ConvParams::dense(3, w0, 7, 2, 3)?,
                false,
            )));
            units.push(Unit::Norm(BatchNorm2d::new(layout, "stem.bn", w0)));
            units.push(Unit::Act("stem.act".into(), act));
            units.push(Unit::MaxPool("stem.pool".into(), PoolParams::STEM));
        }
        StemKind::Patchify(p) => {
            let conv = ConvParams::dense(3, w0, p, p, 0)?;
            units.push(Unit::Conv(Conv2d::new(
                layout,
                "stem.conv",
                conv,
                !spec.stem_norm,
            )));
            if spec.stem_norm {
                units.push(Unit::Norm(BatchNorm2d::new(layout, "stem.bn", w0)));
            }
        }
        StemKind::ConvStem => {
            let mut cin = 3;
            for (i, cout) in [w0 / 8, w0 / 4, w0 / 2, w0].into_iter().enumerate() {
                let conv = ConvParams::dense(cin, cout, 3, 2, 1)?;
                units.push(Unit::Conv(Conv2d::new(
                    layout,
                    format!("stem.conv{}", i + 1),
                    conv,
                    false,
                )));
                units.push(Unit::Norm(BatchNorm2d::new(
                    layout,
                    format!("stem.bn{}", i + 1),
                    cout,
                )));
                units.push(Unit::Act(format!("stem.act{}", i + 1), act));
                cin = cout;
            }
        }
    }
    Ok(units)
}

/// Linear from 0 in the first block to `rate` in the last.
fn ramp(rate: f64, index: usize, total: usize) -> f64 {
    if total > 1 {
        rate * index as f64 / (total - 1) as f64
    } else {
        rate
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    layout: ParamLayout,
    stem: Vec<Unit>,
    pub blocks: Vec<Block>,
    pub head: Linear,
}

impl Model {
    /// Lay out every parameter. No tensors are allocated until
    /// [`Model::init_params`].
    pub fn build(spec: &ModelSpec) -> Result<Model> {
        spec.validate()?;
        let mut layout = ParamLayout::new();
        let stem = build_stem(&mut layout, spec)?;
        let plan = spec.stride_plan();
        let total: usize = spec.depths.iter().sum();
        let mut blocks = Vec::with_capacity(total);
        let mut cin = spec.widths[0];
        for stage in 0..4 {
            for j in 0..spec.depths[stage] {
                let index = blocks.len();
                let rate = ramp(spec.drop_path, index, total);
                let bspec = BlockSpec {
                    kind: spec.block_kind,
                    in_channels: cin,
                    width: spec.widths[stage],
                    kernel: spec.kernel,
                    stride: if j == 0 { plan[stage] } else { 1 },
                    placement: spec.placement,
                    drop_path: rate,
                    activation: spec.activation,
                };
                let block = build_block(
                    &mut layout,
                    format!("stage{}.block{}", stage + 1, j + 1),
                    bspec,
                )?;
                cin = block.out_channels();
                blocks.push(block);
            }
        }
        let head = Linear::new(&mut layout, "head.fc", cin, spec.num_classes);
        Ok(Model {
            spec: spec.clone(),
            layout,
            stem,
            blocks,
            head,
        })
    }

    /// Re-ramp stochastic depth to end at `rate` in the last block.
    pub fn set_drop_path(&mut self, rate: f64) -> Result<()> {
        crate::nn::drop_path::validate_rate(rate)?;
        self.spec.drop_path = rate;
        let total = self.blocks.len();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.spec.drop_path = ramp(rate, i, total);
        }
        Ok(())
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn input_shape(&self, batch: usize) -> Shape {
        Shape::new(
            batch,
            3,
            self.spec.input_resolution,
            self.spec.input_resolution,
        )
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        ParamStore::initialize(&self.layout, seed)
    }

    /// Declare the default running statistics (mean 0, variance 1) usable so
    /// an untrained model can run in eval mode.
    pub fn initialize_running_stats<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let ids: Vec<_> = store
            .ids()
            .filter(|&id| store.name(id).ends_with(".num_batches_tracked"))
            .collect();
        for id in ids {
            if store.get(id).data()[0] == T::zero() {
                store.set(id, Tensor::scalar(T::one()))?;
            }
        }
        Ok(())
    }

    /// Logits `(N, num_classes, 1, 1)`.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let shape = s.tape.shape(x);
        if shape.c() != 3
            || shape.h() != self.spec.input_resolution
            || shape.w() != self.spec.input_resolution
        {
            return Err(Error::shape(
                "model",
                format!("input {shape}, expected {}", self.input_shape(shape.n())),
            ));
        }
        let mut h = x;
        for u in &self.stem {
            h = u.forward(s, h)?;
        }
        for b in &self.blocks {
            h = b.forward(s, h)?;
        }
        let pooled = s.tape.global_avg_pool(h)?;
        self.head.forward(s, pooled)
    }

    /// Symbolic shape propagation over every layer.
    pub fn trace(&self, input: Shape) -> Result<Vec<TracedLayer>> {
        let mut t = Tracer::default();
        let mut h = input;
        for u in &self.stem {
            h = u.trace(&mut t, h)?;
        }
        for b in &self.blocks {
            h = b.trace(&mut t, h)?;
        }
        let pooled = t.push("head.pool", LayerDesc::GlobalAvgPool, h)?;
        t.push(
            "head.fc",
            LayerDesc::Linear {
                in_features: self.head.in_features,
                out_features: self.head.out_features,
            },
            pooled,
        )?;
        Ok(t.layers)
    }

    /// Shape entering the global pool.
    pub fn feature_shape(&self, input: Shape) -> Result<Shape> {
        let layers = self.trace(input)?;
        Ok(layers
            .iter()
            .find(|l| l.path == "head.pool")
            .expect("head pool traced")
            .input)
    }

    /// Eval-mode logits without recording gradients.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        use rand::SeedableRng;
        let mut tape = Tape::new();
        let mut s = Session::new(&mut tape, store, Mode::Eval, ChaCha8Rng::seed_from_u64(0))
            .without_grads();
        let v = s.tape.constant(x.clone());
        let y = self.forward(&mut s, v)?;
        Ok(tape.value(y).clone())
    }
}
