use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robustcnn::blocks::{build_block, Block, BlockKind, BlockSpec, NormActPlacement};
use robustcnn::nn::{ActKind, Mode, ParamLayout, ParamStore, Session, Tracer};
use robustcnn::tensor::{grad_check, GradCheckReport};
use robustcnn::{Result, Scalar, Shape, Tape, Tensor, Var};

fn setup(spec: BlockSpec, seed: u64) -> (Block, ParamLayout) {
    let mut layout = ParamLayout::new();
    let block = build_block(&mut layout, "blk", spec).unwrap();
    let _ = seed;
    (block, layout)
}

fn forward<T: Scalar>(
    block: &Block,
    store: &ParamStore<T>,
    mode: Mode,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let mut s = Session::new(&mut tape, store, mode, ChaCha8Rng::seed_from_u64(0));
    let v = s.tape.constant(x.clone());
    let y = block.forward(&mut s, v)?;
    Ok(tape.value(y).clone())
}

fn project<T: Scalar>(t: &mut Tape<T>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = t.constant(Tensor::randn(t.shape(y), &mut rng));
    let p = t.mul(y, r)?;
    t.sum(p)
}

#[test]
fn up_inverted_keeps_shape() {
    let spec = BlockSpec::new(BlockKind::UpInvertedDw, 96, 7, 1, NormActPlacement::FULL);
    let (block, layout) = setup(spec, 0);
    assert!(block.shortcut.is_none());
    let mut tracer = Tracer::default();
    assert_eq!(
        block.trace(&mut tracer, Shape::new(1, 96, 56, 56)).unwrap(),
        Shape::new(1, 96, 56, 56)
    );
    let store = ParamStore::<f32>::initialize(&layout, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::<f32>::randn(Shape::new(1, 96, 56, 56), &mut rng);
    assert_eq!(
        forward(&block, &store, Mode::Train, &x).unwrap().shape(),
        Shape::new(1, 96, 56, 56)
    );
}

#[test]
fn dw_stride_two_projects() {
    let spec = BlockSpec::new(BlockKind::Dw, 96, 3, 2, NormActPlacement::FULL);
    assert_eq!(spec.in_channels, 384);
    let (block, layout) = setup(spec, 0);
    assert!(block.shortcut.is_some());
    let store = ParamStore::<f32>::initialize(&layout, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::<f32>::randn(Shape::new(1, 384, 56, 56), &mut rng);
    assert_eq!(
        forward(&block, &store, Mode::Train, &x).unwrap().shape(),
        Shape::new(1, 384, 28, 28)
    );
}

#[test]
fn stride_lands_on_expected_conv() {
    for (kind, idx) in [
        (BlockKind::Dw, 1),
        (BlockKind::InvertedDw, 1),
        (BlockKind::UpInvertedDw, 0),
        (BlockKind::DownInvertedDw, 0),
        (BlockKind::Bottleneck, 1),
    ] {
        let (block, _) = setup(BlockSpec::new(kind, 8, 5, 2, NormActPlacement::FULL), 0);
        let strides: Vec<usize> = block.convs.iter().map(|c| c.params.stride).collect();
        let mut want = vec![1; 3];
        want[idx] = 2;
        assert_eq!(strides, want, "{kind}");
    }
}

#[test]
fn depthwise_channel_counts() {
    for (kind, ch) in [
        (BlockKind::Dw, 8),
        (BlockKind::InvertedDw, 32),
        (BlockKind::DownInvertedDw, 8),
        (BlockKind::UpInvertedDw, 8),
    ] {
        let (block, _) = setup(BlockSpec::new(kind, 8, 3, 1, NormActPlacement::FULL), 0);
        let dw = &block.convs[kind.depthwise_index().unwrap()].params;
        assert!(dw.is_depthwise());
        assert_eq!(dw.in_channels, ch, "{kind}");
    }
}

#[test]
fn zero_branch_is_exact_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for kind in BlockKind::ALL {
        for placement in [NormActPlacement::FULL, kind.optimal_placement()] {
            let spec = BlockSpec::new(kind, 4, 3, 1, placement);
            let (block, layout) = setup(spec, 0);
            let mut store = ParamStore::<f32>::initialize(&layout, 3);
            block.zero_last_conv(&mut store).unwrap();
            let x = Tensor::<f32>::randn(Shape::new(2, spec.out_channels(), 5, 5), &mut rng);
            assert_eq!(
                forward(&block, &store, Mode::Train, &x).unwrap(),
                x,
                "{kind} {placement}"
            );
        }
    }
}

#[test]
fn bad_specs_rejected() {
    let mut layout = ParamLayout::new();
    assert!(build_block(
        &mut layout,
        "x",
        BlockSpec::new(BlockKind::Dw, 8, 4, 1, NormActPlacement::FULL)
    )
    .is_err());
    assert!(build_block(
        &mut layout,
        "x",
        BlockSpec::new(BlockKind::Dw, 8, 3, 3, NormActPlacement::FULL)
    )
    .is_err());
}

/// Full block (all three convs, norms, acts, shortcut) against central
/// differences in f64, in both modes, over every kind.
fn block_check(kind: BlockKind, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let placement = if rng.gen_bool(0.5) {
        NormActPlacement::FULL
    } else {
        kind.optimal_placement()
    };
    let mode = if rng.gen_bool(0.5) {
        Mode::Train
    } else {
        Mode::Eval
    };
    let w = 2;
    let hw = [4, 6][rng.gen_range(0..2)];
    let stride = rng.gen_range(1..3);
    let mut spec = BlockSpec::new(kind, w, 3, stride, placement);
    spec.activation = if rng.gen_bool(0.5) {
        ActKind::Relu
    } else {
        ActKind::Gelu
    };
    let cin = if stride == 2 {
        kind.out_channels(w) + 1
    } else {
        kind.out_channels(w)
    };
    let spec = spec.with_in_channels(cin);
    let (block, layout) = setup(spec, seed);
    let mut store = ParamStore::<f64>::initialize(&layout, seed);
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_string();
        let shape = store.get(id).shape();
        let value = if name.ends_with("running_mean") {
            Tensor::uniform(shape, -0.5, 0.5, &mut rng)
        } else if name.ends_with("running_var") {
            Tensor::uniform(shape, 0.5, 2.0, &mut rng)
        } else if name.ends_with("num_batches_tracked") {
            Tensor::ones(shape)
        } else {
            continue;
        };
        store.set(id, value).unwrap();
    }
    let x = Tensor::<f64>::randn(Shape::new(2, cin, hw, hw), &mut rng);
    let f = |t: &mut Tape<f64>, v: Var| {
        let mut s = Session::new(t, &store, mode, ChaCha8Rng::seed_from_u64(seed));
        let y = block.forward(&mut s, v)?;
        project(s.tape, y, seed)
    };
    grad_check(f, &x, 1e-3, 1e-6).unwrap()
}

#[test]
fn blocks_match_finite_differences() {
    for kind in BlockKind::ALL {
        for seed in 0..4 {
            let r = block_check(kind, seed);
            assert!(r.passed, "{kind} seed {seed}: {r:?}");
            assert!(
                r.checked > r.skipped,
                "{kind} seed {seed}: too many kink crossings {r:?}"
            );
        }
    }
}

#[test]
fn parameter_gradients_match_finite_differences() {
    // Route one weight of each conv through the checked variable.
    for kind in BlockKind::ALL {
        let spec = BlockSpec::new(kind, 2, 3, 1, kind.optimal_placement());
        let (block, layout) = setup(spec, 0);
        let store = ParamStore::<f64>::initialize(&layout, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::randn(Shape::new(2, kind.out_channels(2), 5, 5), &mut rng);
        for conv in &block.convs {
            let id = conv.weight;
            let f = |t: &mut Tape<f64>, v: Var| {
                let mut s = Session::new(t, &store, Mode::Train, ChaCha8Rng::seed_from_u64(0));
                s.bind(id, v);
                let xv = s.tape.constant(x.clone());
                let y = block.forward(&mut s, xv)?;
                project(s.tape, y, 9)
            };
            let r = grad_check(f, store.get(id), 1e-3, 1e-6).unwrap();
            assert!(r.passed, "{kind} {}: {r:?}", store.name(id));
        }
    }
}
