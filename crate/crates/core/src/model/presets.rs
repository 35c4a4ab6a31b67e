//! Named architectures. Budgeted presets have their stage-3 depth tuned on
//! construction.

use super::spec::{ModelSpec, StemKind};
use super::tune::tune_stage3_depth;
use crate::blocks::{BlockKind, NormActPlacement};
use crate::error::{Error, Result};

/// Single-image MACs of the small and base transformer references.
pub const SMALL_BUDGET: f64 = 4.6e9;
pub const BASE_BUDGET: f64 = 17.6e9;
pub const BUDGET_TOL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub description: String,
    pub spec: ModelSpec,
    pub budget: Option<f64>,
}

const KINDS: [(&str, BlockKind); 4] = [
    ("dw", BlockKind::Dw),
    ("inverted-dw", BlockKind::InvertedDw),
    ("up-inverted-dw", BlockKind::UpInvertedDw),
    ("down-inverted-dw", BlockKind::DownInvertedDw),
];

const NAMES: [&str; 14] = [
    "resnet50",
    "resnet-dw",
    "resnet-inverted-dw",
    "resnet-up-inverted-dw",
    "resnet-down-inverted-dw",
    "robust-dw",
    "robust-inverted-dw",
    "robust-up-inverted-dw",
    "robust-down-inverted-dw",
    "robust-base-dw",
    "robust-base-inverted-dw",
    "robust-base-up-inverted-dw",
    "robust-base-down-inverted-dw",
    "cifar-robust",
];

pub fn preset_names() -> &'static [&'static str] {
    &NAMES
}

/// Large-kernel size used by the robust variant of each block kind.
pub fn robust_kernel(kind: BlockKind) -> usize {
    match kind {
        BlockKind::InvertedDw => 7,
        _ => 11,
    }
}

/// Spec of a preset before any depth tuning.
pub fn untuned(name: &str) -> Result<(ModelSpec, Option<f64>, String)> {
    let unknown = || {
        Error::config(format!(
            "unknown preset `{name}`; try one of {}",
            NAMES.join(", ")
        ))
    };
    if name == "resnet50" {
        let spec = ModelSpec {
            widths: [64, 128, 256, 512],
            block_kind: BlockKind::Bottleneck,
            ..ModelSpec::default()
        };
        return Ok((spec, None, "ResNet-50 with dense 3x3 bottlenecks".into()));
    }
    if name == "cifar-robust" {
        let kind = BlockKind::UpInvertedDw;
        let spec = ModelSpec {
            stem: StemKind::Patchify(4),
            widths: [32, 64, 128, 256],
            depths: [2, 2, 4, 2],
            strides: Some([1, 1, 1, 2]),
            block_kind: kind,
            kernel: 7,
            placement: kind.optimal_placement(),
            num_classes: 10,
            input_resolution: 32,
            ..ModelSpec::default()
        };
        return Ok((
            spec,
            None,
            "32px Up-Inverted-DW, P4 + K7 + Norm1Act2".into(),
        ));
    }
    let (family, suffix) = if let Some(s) = name.strip_prefix("robust-base-") {
        ("base", s)
    } else if let Some(s) = name.strip_prefix("robust-") {
        ("robust", s)
    } else if let Some(s) = name.strip_prefix("resnet-") {
        ("resnet", s)
    } else {
        return Err(unknown());
    };
    let kind = KINDS
        .iter()
        .find(|(n, _)| *n == suffix)
        .map(|&(_, k)| k)
        .ok_or_else(unknown)?;
    let label = match kind {
        BlockKind::Dw => "DW",
        BlockKind::InvertedDw => "Inverted-DW",
        BlockKind::UpInvertedDw => "Up-Inverted-DW",
        _ => "Down-Inverted-DW",
    };
    let base = ModelSpec {
        block_kind: kind,
        ..ModelSpec::default()
    };
    Ok(match family {
        "resnet" => (base, Some(SMALL_BUDGET), format!("ResNet-{label} baseline")),
        _ => {
            let k = robust_kernel(kind);
            let placement: NormActPlacement = kind.optimal_placement();
            let mut spec = ModelSpec {
                stem: StemKind::Patchify(16),
                kernel: k,
                placement,
                ..base
            };
            let (budget, prefix) = if family == "base" {
                spec.widths = [128, 256, 512, 1024];
                (BASE_BUDGET, "Robust-ResNet-Base")
            } else {
                (SMALL_BUDGET, "Robust-ResNet")
            };
            (
                spec,
                Some(budget),
                format!("{prefix}-{label}: P16 + K{k} + {placement}"),
            )
        }
    })
}

/// Look up a preset, tuning its stage-3 depth against its budget.
pub fn preset(name: &str) -> Result<Preset> {
    let (mut spec, budget, description) = untuned(name)?;
    if let Some(b) = budget {
        spec.depths[2] = tune_stage3_depth(&spec, b, BUDGET_TOL)?.depth;
    }
    let name = NAMES
        .iter()
        .copied()
        .find(|n| *n == name)
        .expect("known preset");
    Ok(Preset {
        name,
        description,
        spec,
        budget,
    })
}
