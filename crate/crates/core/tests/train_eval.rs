use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robustcnn::blocks::{BlockKind, NormActPlacement};
use robustcnn::model::{Model, ModelSpec, StemKind};
use robustcnn::nn::{one_hot, Mode, Session};
use robustcnn::train::*;
use robustcnn::{Error, Result, Shape, Tape, Tensor};

fn tiny_spec(classes: usize) -> ModelSpec {
    ModelSpec {
        stem: StemKind::Patchify(2),
        widths: [8, 8, 8, 8],
        depths: [1, 1, 1, 1],
        strides: Some([1, 1, 1, 2]),
        block_kind: BlockKind::UpInvertedDw,
        kernel: 3,
        placement: NormActPlacement::new(1, 2).unwrap(),
        num_classes: classes,
        input_resolution: 8,
        ..ModelSpec::default()
    }
}

fn images(seed: u64) -> Tensor<f64> {
    // Smooth gradient plus texture, so blur and compression have work to do.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(Shape::new(2, 3, 32, 32), |[n, c, y, x]| {
        let base = 0.2 + 0.6 * ((x + y + c * 5 + n * 3) % 32) as f64 / 32.0;
        (base + rng.gen_range(-0.15..0.15)).clamp(0.0, 1.0)
    })
}

fn mse(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64
}

#[test]
fn distortion_grows_with_severity_for_every_family() {
    let x = images(1);
    for family in CorruptionFamily::ALL {
        let errs: Vec<f64> = (1..=5)
            .map(|s| {
                mse(
                    &x,
                    &corrupt(&x, &CorruptionSpec::new(family, s, 7)).unwrap(),
                )
            })
            .collect();
        for w in errs.windows(2) {
            assert!(w[1] > w[0], "{family}: {errs:?}");
        }
    }
}

#[test]
fn severity_zero_and_determinism() {
    let x = images(2);
    for family in CorruptionFamily::ALL {
        assert_eq!(
            corrupt(&x, &CorruptionSpec::new(family, 0, 3))
                .unwrap()
                .data(),
            x.data()
        );
        let a = corrupt(&x, &CorruptionSpec::new(family, 3, 3)).unwrap();
        let b = corrupt(&x, &CorruptionSpec::new(family, 3, 3)).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

struct Oracle(Vec<(Vec<u32>, usize)>);

impl Classifier for Oracle {
    fn predict(&self, x: &Tensor<f32>) -> Result<Vec<usize>> {
        let n = x.shape().n();
        Ok((0..n)
            .map(|i| {
                let key: Vec<u32> = x.sample(i).iter().map(|v| v.to_bits()).collect();
                self.0.iter().find(|(k, _)| *k == key).map_or(0, |e| e.1)
            })
            .collect())
    }
}

struct Coin(u64);

impl Classifier for Coin {
    fn predict(&self, x: &Tensor<f32>) -> Result<Vec<usize>> {
        let first = x.sample(0)[0].to_bits() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.0 ^ first);
        Ok((0..x.shape().n()).map(|_| rng.gen_range(0..10)).collect())
    }
}

#[test]
fn perfect_and_random_predictors() {
    let ds = synthetic(200, 10, 4, 0.2, 5).unwrap();
    let table = (0..ds.len())
        .map(|i| {
            (
                ds.images.sample(i).iter().map(|v| v.to_bits()).collect(),
                ds.labels[i],
            )
        })
        .collect();
    let r = evaluate(&Oracle(table), &ds, &[], &[], 0, 16).unwrap();
    assert_eq!(r.clean_error, 0.0);

    let big = synthetic(4000, 10, 2, 0.3, 6).unwrap();
    let e = top1_error(&Coin(1), &big, 1).unwrap();
    assert!((e - 90.0).abs() <= 3.0, "{e}");
}

#[test]
fn report_mean_recomputes_exactly() {
    let ds = synthetic(60, 3, 8, 0.2, 8).unwrap();
    let model = Model::build(&tiny_spec(3)).unwrap();
    let mut store = model.init_params::<f32>(1);
    model.initialize_running_stats(&mut store).unwrap();
    let clf = ModelClassifier {
        model: &model,
        store: &store,
    };
    let r = evaluate(&clf, &ds, &CorruptionFamily::ALL, &[1, 3, 5], 2, 16).unwrap();
    assert_eq!(r.entries.len(), 24);
    let mut fam = 0.0;
    for f in CorruptionFamily::ALL {
        fam += (r.entries[&(f, 1)] + r.entries[&(f, 3)] + r.entries[&(f, 5)]) / 3.0;
    }
    assert_eq!(r.mean_corruption_error().unwrap(), fam / 8.0);
    assert!(r.entries.values().all(|e| (0.0..=100.0).contains(e)));
}

#[test]
fn teacher_parameters_get_no_gradient() {
    let spec = tiny_spec(3);
    let teacher = Model::build(&spec).unwrap();
    let tstore = teacher.init_params::<f64>(1);
    let student = Model::build(&spec).unwrap();
    let sstore = student.init_params::<f64>(2);
    let x = Tensor::<f64>::uniform(
        Shape::new(4, 3, 8, 8),
        0.0,
        1.0,
        &mut ChaCha8Rng::seed_from_u64(0),
    );

    let mut tape = Tape::new();
    // The teacher runs on the same tape with gradients enabled, so any leak
    // would show up in its bindings.
    let mut ts = Session::new(
        &mut tape,
        &tstore,
        Mode::Train,
        ChaCha8Rng::seed_from_u64(0),
    );
    let xv = ts.tape.constant(x.clone());
    let tl = teacher.forward(&mut ts, xv).unwrap();
    let tout = ts.finish();
    let teacher_logits = tape.value(tl).clone();
    let mut ss = Session::new(
        &mut tape,
        &sstore,
        Mode::Train,
        ChaCha8Rng::seed_from_u64(0),
    );
    let xv = ss.tape.constant(x);
    let sl = student.forward(&mut ss, xv).unwrap();
    let target = one_hot::<f64>(&[0, 1, 2, 0], 3, 0.1).unwrap();
    let loss = kd_loss(
        ss.tape,
        sl,
        &teacher_logits,
        &target,
        &DistillConfig::default(),
    )
    .unwrap();
    let sout = ss.finish();
    let mut grads = tape.backward(loss).unwrap();
    assert!(tout
        .param_grads(&mut grads)
        .iter()
        .all(|(_, g)| g.data().iter().all(|&v| v == 0.0)));
    assert!(sout
        .param_grads(&mut grads)
        .iter()
        .any(|(_, g)| g.data().iter().any(|&v| v != 0.0)));
}

#[test]
fn lambda_zero_is_plain_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = Tensor::<f32>::randn(Shape::new(8, 10, 1, 1), &mut rng);
    let t = Tensor::<f32>::randn(Shape::new(8, 10, 1, 1), &mut rng);
    let y = one_hot::<f32>(&[0, 1, 2, 3, 4, 5, 6, 7], 10, 0.0).unwrap();
    let mut tape = Tape::new();
    let sv = tape.constant(s);
    let kd = kd_loss(
        &mut tape,
        sv,
        &t,
        &y,
        &DistillConfig {
            temperature: 4.0,
            weight: 0.0,
        },
    )
    .unwrap();
    let ce = tape.soft_cross_entropy(sv, &y).unwrap();
    assert!((tape.value(kd).data()[0] - tape.value(ce).data()[0]).abs() <= 1e-7);
}

fn quick_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        warmup_epochs: 1,
        seed: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_change_nothing() {
    let ds = synthetic(16, 3, 8, 0.2, 1).unwrap();
    let mut model = Model::build(&tiny_spec(3)).unwrap();
    let mut store = model.init_params::<f32>(0);
    let before = store.clone();
    let logs = train(
        &mut model,
        &mut store,
        &ds,
        None,
        &quick_cfg(0),
        None,
        &mut |_| {},
    )
    .unwrap();
    assert!(logs.is_empty());
    for ((n, a), (_, b)) in store.iter().zip(before.iter()) {
        assert_eq!(a.data(), b.data(), "{n}");
    }
}

#[test]
fn same_seed_same_first_epoch() {
    let ds = synthetic(24, 3, 8, 0.2, 1).unwrap();
    let run = || {
        let mut model = Model::build(&tiny_spec(3)).unwrap();
        let mut store = model.init_params::<f32>(0);
        train(
            &mut model,
            &mut store,
            &ds,
            Some(&ds),
            &quick_cfg(1),
            None,
            &mut |_| {},
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a[0].train_loss.to_bits(), b[0].train_loss.to_bits());
    assert_eq!(a, b);
    assert!(a[0].val_acc.is_some());
}

#[test]
fn divergence_reports_the_step() {
    let ds = synthetic(16, 3, 8, 0.2, 1).unwrap();
    let mut model = Model::build(&tiny_spec(3)).unwrap();
    let mut store = model.init_params::<f32>(0);
    let id = store.find("head.fc.weight").unwrap();
    let shape = store.get(id).shape();
    store.set(id, Tensor::full(shape, f32::MAX)).unwrap();
    let err = train(
        &mut model,
        &mut store,
        &ds,
        None,
        &quick_cfg(1),
        None,
        &mut |_| {},
    )
    .unwrap_err();
    assert!(
        matches!(err, Error::Divergence { step: 1, .. } | Error::NonFinite(_)),
        "{err}"
    );
}

#[test]
fn mismatched_dataset_rejected() {
    let ds = synthetic(16, 4, 8, 0.2, 1).unwrap();
    let mut model = Model::build(&tiny_spec(3)).unwrap();
    let mut store = model.init_params::<f32>(0);
    assert!(train(
        &mut model,
        &mut store,
        &ds,
        None,
        &quick_cfg(1),
        None,
        &mut |_| {}
    )
    .unwrap_err()
    .is_config_error());
}

#[test]
fn distillation_run_is_deterministic() {
    let ds = synthetic(16, 3, 8, 0.2, 2).unwrap();
    let teacher = Model::build(&tiny_spec(3)).unwrap();
    let mut tstore = teacher.init_params::<f32>(9);
    teacher.initialize_running_stats(&mut tstore).unwrap();
    let t = Teacher {
        model: &teacher,
        store: &tstore,
        cfg: DistillConfig::default(),
    };
    let run = || {
        let mut model = Model::build(&tiny_spec(3)).unwrap();
        let mut store = model.init_params::<f32>(0);
        train(
            &mut model,
            &mut store,
            &ds,
            None,
            &quick_cfg(2),
            Some(&t),
            &mut |_| {},
        )
        .unwrap()
    };
    assert_eq!(run(), run());
}
