//! Sampled central-difference checks through the whole CIFAR-scale model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robustcnn::model::{preset, Model};
use robustcnn::nn::{ActKind, Mode, ParamStore, Session};
use robustcnn::tensor::{grad_check_sampled, GradCheckReport};
use robustcnn::{Result, Shape, Tape, Tensor, Var};

const TOL: f64 = 1e-6;

fn setup(mode: Mode, seed: u64) -> (Model, ParamStore<f64>) {
    // With ReLU nearly every input coordinate flips some unit under a 1e-3 step.
    let mut spec = preset("cifar-robust").unwrap().spec;
    spec.activation = ActKind::Gelu;
    let model = Model::build(&spec).unwrap();
    let mut store = model.init_params::<f64>(seed);
    if mode == Mode::Eval {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.name(id).to_string();
            let shape = store.get(id).shape();
            let value = if name.ends_with("running_mean") {
                Tensor::uniform(shape, -0.3, 0.3, &mut rng)
            } else if name.ends_with("running_var") {
                Tensor::uniform(shape, 0.5, 2.0, &mut rng)
            } else if name.ends_with("num_batches_tracked") {
                Tensor::ones(shape)
            } else {
                continue;
            };
            store.set(id, value).unwrap();
        }
    }
    (model, store)
}

fn project(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let r = t.constant(Tensor::randn(t.shape(y), &mut rng));
    let p = t.mul(y, r)?;
    t.sum(p)
}

fn input_check(mode: Mode, seed: u64) -> GradCheckReport {
    let (model, store) = setup(mode, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
    let x = Tensor::<f64>::uniform(Shape::new(2, 3, 32, 32), 0.0, 1.0, &mut rng);
    let f = |t: &mut Tape<f64>, v: Var| {
        let mut s = Session::new(t, &store, mode, ChaCha8Rng::seed_from_u64(seed));
        let y = model.forward(&mut s, v)?;
        project(s.tape, y, seed)
    };
    grad_check_sampled(f, &x, 3e-4, TOL, 24, &mut rng).unwrap()
}

#[test]
fn model_input_gradients() {
    for (mode, seed) in [(Mode::Train, 0), (Mode::Eval, 1)] {
        let r = input_check(mode, seed);
        assert!(r.passed, "{mode:?}: {r:?}");
        assert!(r.checked >= 12, "{r:?}");
    }
}

#[test]
fn model_parameter_gradients() {
    let (model, store) = setup(Mode::Train, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::<f64>::uniform(Shape::new(2, 3, 32, 32), 0.0, 1.0, &mut rng);
    let names = [
        "stem.conv.weight",
        "stage1.block1.conv1.weight",
        "stage3.block2.conv2.weight",
        "head.fc.weight",
    ];
    for name in names {
        let id = store.find(name).unwrap();
        let f = |t: &mut Tape<f64>, v: Var| {
            let mut s = Session::new(t, &store, Mode::Train, ChaCha8Rng::seed_from_u64(3));
            s.bind(id, v);
            let xv = s.tape.constant(x.clone());
            let y = model.forward(&mut s, xv)?;
            project(s.tape, y, 3)
        };
        let r = grad_check_sampled(f, store.get(id), 3e-4, TOL, 8, &mut rng).unwrap();
        assert!(r.passed, "{name}: {r:?}");
    }
}
