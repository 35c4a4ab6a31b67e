use proptest::prelude::*;
use robustcnn::blocks::{BlockKind, NormActPlacement};
use robustcnn::flops::{count_flops, layer_macs};
use robustcnn::model::presets::{untuned, BASE_BUDGET, SMALL_BUDGET};
use robustcnn::model::tune::total_macs;
use robustcnn::model::{preset, preset_names, tune_stage3_depth, Model, ModelSpec, StemKind};
use robustcnn::nn::ParamStore;
use robustcnn::{Error, Shape, Tensor};

const STEMS: [StemKind; 5] = [
    StemKind::ResNetStyle,
    StemKind::Patchify(4),
    StemKind::Patchify(8),
    StemKind::Patchify(16),
    StemKind::ConvStem,
];

#[test]
fn resnet50_anchor() {
    let p = preset("resnet50").unwrap();
    let m = Model::build(&p.spec).unwrap();
    let r = count_flops(&m, m.input_shape(1)).unwrap();
    assert!((r.total as f64 / 4.1e9 - 1.0).abs() <= 0.02, "{}", r.total);
}

#[test]
fn every_stem_reaches_seven_by_seven() {
    for stem in STEMS {
        let m = Model::build(&ModelSpec {
            stem,
            ..ModelSpec::default()
        })
        .unwrap();
        let f = m.feature_shape(m.input_shape(1)).unwrap();
        assert_eq!((f.h(), f.w()), (7, 7), "{stem}");
    }
}

#[test]
fn stem_output_sizes() {
    for (stem, side) in [
        (StemKind::Patchify(16), 14),
        (StemKind::Patchify(8), 28),
        (StemKind::ResNetStyle, 56),
        (StemKind::Patchify(4), 56),
    ] {
        let m = Model::build(&ModelSpec {
            stem,
            ..ModelSpec::default()
        })
        .unwrap();
        let layers = m.trace(m.input_shape(1)).unwrap();
        let first_block = layers
            .iter()
            .position(|l| l.path.starts_with("stage1"))
            .unwrap();
        assert_eq!(layers[first_block].input.h(), side, "{stem}");
    }
}

#[test]
fn table_presets_meet_budget() {
    for (prefix, budget) in [("robust-", SMALL_BUDGET), ("robust-base-", BASE_BUDGET)] {
        for kind in ["dw", "inverted-dw", "up-inverted-dw", "down-inverted-dw"] {
            let (spec, _, _) = untuned(&format!("{prefix}{kind}")).unwrap();
            let r = tune_stage3_depth(&spec, budget, 0.05).unwrap();
            assert!((r.macs as f64 - budget).abs() <= 0.05 * budget);
            assert_eq!(total_macs(&spec.with_depth3(r.depth)).unwrap(), r.macs);
            if r.depth > 1 {
                let below = total_macs(&spec.with_depth3(r.depth - 1)).unwrap() as f64;
                assert!(
                    below < budget * 0.95,
                    "{prefix}{kind}: depth {} is not the smallest",
                    r.depth
                );
            }
        }
    }
}

#[test]
fn infeasible_budget_reports_neighbours() {
    let (spec, _, _) = untuned("robust-dw").unwrap();
    match tune_stage3_depth(&spec, 1e8, 0.05) {
        Err(Error::BudgetUnreachable {
            below: None,
            above: Some((1, _)),
            ..
        }) => {}
        other => panic!("{other:?}"),
    }
    // A band narrower than one block step.
    let d = total_macs(&spec.with_depth3(10)).unwrap() as f64;
    let next = total_macs(&spec.with_depth3(11)).unwrap() as f64;
    match tune_stage3_depth(&spec, (d + next) / 2.0, 1e-6) {
        Err(Error::BudgetUnreachable {
            below: Some((10, _)),
            above: Some((11, _)),
            ..
        }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn macs_grow_with_stage3_depth() {
    for kind in BlockKind::ALL {
        let spec = ModelSpec {
            block_kind: kind,
            ..ModelSpec::default()
        };
        let totals: Vec<u64> = (1..8)
            .map(|d| total_macs(&spec.with_depth3(d)).unwrap())
            .collect();
        assert!(totals.windows(2).all(|w| w[0] < w[1]), "{kind}");
    }
}

#[test]
fn report_is_consistent() {
    let m = Model::build(&preset("robust-up-inverted-dw").unwrap().spec).unwrap();
    let layers = m.trace(m.input_shape(1)).unwrap();
    let r = count_flops(&m, m.input_shape(1)).unwrap();
    let independent: u64 = layers
        .iter()
        .map(|l| layer_macs(&l.desc, l.input).unwrap())
        .sum();
    assert_eq!(r.total, independent);
    assert_eq!(r.total, r.entries.iter().map(|e| e.macs).sum::<u64>());
    // Each conv, norm and linear shows up exactly once.
    let params: std::collections::BTreeSet<String> = m
        .layout()
        .iter()
        .filter(|(_, s)| s.name.ends_with(".weight") || s.name.ends_with(".gamma"))
        .map(|(_, s)| s.name.rsplit_once('.').unwrap().0.to_string())
        .collect();
    let entries: Vec<&str> = r.entries.iter().map(|e| e.path.as_str()).collect();
    assert_eq!(entries.len(), params.len());
    assert!(entries.iter().all(|e| params.contains(*e)));
    assert!(r.to_tsv().lines().all(|l| l.split('\t').count() == 3));
}

#[test]
fn doubling_resolution_quadruples_convs() {
    let spec = ModelSpec {
        stem: StemKind::Patchify(16),
        block_kind: BlockKind::InvertedDw,
        ..ModelSpec::default()
    };
    let m = Model::build(&spec).unwrap();
    let big = ModelSpec {
        input_resolution: 448,
        ..spec
    };
    let mb = Model::build(&big).unwrap();
    let a = count_flops(&m, m.input_shape(1)).unwrap();
    let b = count_flops(&mb, mb.input_shape(1)).unwrap();
    for (x, y) in a.entries.iter().zip(&b.entries) {
        if x.kind.ends_with("conv") {
            assert_eq!(y.macs, 4 * x.macs, "{}", x.path);
        }
    }
}

#[test]
fn report_ignores_weights() {
    // The count depends only on the layout; two differently seeded stores
    // share one model, and the report is computed from shapes alone.
    let m = Model::build(&preset("cifar-robust").unwrap().spec).unwrap();
    let a = count_flops(&m, m.input_shape(1)).unwrap();
    let _s1: ParamStore<f32> = m.init_params(1);
    let _s2: ParamStore<f32> = m.init_params(2);
    assert_eq!(a, count_flops(&m, m.input_shape(1)).unwrap());
}

#[test]
fn kernel_cost_law() {
    for kind in ["dw", "inverted-dw", "up-inverted-dw", "down-inverted-dw"] {
        let p = preset(&format!("resnet-{kind}")).unwrap();
        let k3 = total_macs(&p.spec).unwrap() as f64;
        let k13 = total_macs(&ModelSpec {
            kernel: 13,
            ..p.spec.clone()
        })
        .unwrap() as f64;
        let delta = k13 - k3;
        if kind == "inverted-dw" {
            assert!((delta - 1.4e9).abs() <= 0.15 * 1.4e9, "{kind}: {delta}");
        } else {
            assert!((delta - 0.3e9).abs() <= 0.3 * 0.3e9, "{kind}: {delta}");
        }
    }
}

#[test]
fn presets_build_and_round_trip() {
    for name in preset_names() {
        let p = preset(name).unwrap();
        assert_eq!(
            p.spec.to_config().parse::<ModelSpec>().unwrap(),
            p.spec,
            "{name}"
        );
        Model::build(&p.spec).unwrap();
    }
}

#[test]
fn full_size_forwards_give_logits() {
    for name in ["resnet50", "robust-up-inverted-dw"] {
        let m = Model::build(&preset(name).unwrap().spec).unwrap();
        let mut store = m.init_params::<f32>(0);
        m.initialize_running_stats(&mut store).unwrap();
        let y = m.predict(&store, &Tensor::zeros(m.input_shape(1))).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1000, 1, 1), "{name}");
    }
}

#[test]
fn reduced_presets_have_one_norm_and_act_per_block() {
    for kind in ["dw", "inverted-dw", "up-inverted-dw", "down-inverted-dw"] {
        let m = Model::build(&preset(&format!("robust-{kind}")).unwrap().spec).unwrap();
        assert!(m
            .blocks
            .iter()
            .all(|b| b.norm_count() == 1 && b.act_count() == 1));
        let full = Model::build(&preset(&format!("resnet-{kind}")).unwrap().spec).unwrap();
        assert!(full
            .blocks
            .iter()
            .all(|b| b.norm_count() == 3 && b.act_count() == 3));
        assert_eq!(m.spec.placement, m.spec.block_kind.optimal_placement());
        let _ = NormActPlacement::FULL;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn patchify_divides_resolution(p in prop::sample::select(vec![2usize, 4, 8, 16]), mult in 1usize..4) {
        let res = 32 * mult;
        let spec = ModelSpec { stem: StemKind::Patchify(p), input_resolution: res, widths: [8, 8, 8, 8], depths: [1, 1, 1, 1], ..ModelSpec::default() };
        let m = Model::build(&spec).unwrap();
        let layers = m.trace(m.input_shape(1)).unwrap();
        prop_assert_eq!(layers[0].output.h(), res / p);
    }
}
