use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::blocks::{BlockKind, NormActPlacement, Position};
use crate::error::{Error, Result};
use crate::nn::ActKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StemKind {
    /// `7×7` stride-2 conv, norm, act, `3×3` stride-2 max pool.
    ResNetStyle,
    /// One `p×p` conv with stride `p`.
    Patchify(usize),
    /// Four `3×3` stride-2 convs, each with norm and act.
    ConvStem,
}

impl StemKind {
    pub fn total_stride(self) -> usize {
        match self {
            StemKind::ResNetStyle => 4,
            StemKind::Patchify(p) => p,
            StemKind::ConvStem => 16,
        }
    }

    /// First-block stride of each stage.
    pub fn stride_plan(self) -> [usize; 4] {
        match self {
            StemKind::ResNetStyle | StemKind::Patchify(4) => [1, 2, 2, 2],
            StemKind::Patchify(8) => [1, 1, 2, 2],
            StemKind::Patchify(16) | StemKind::ConvStem => [1, 1, 1, 2],
            // Other patch sizes keep the remaining downsampling at 32 / p when possible.
            StemKind::Patchify(p) => {
                let mut plan = [1, 1, 1, 2];
                let mut remaining = 32 / p.clamp(1, 32);
                remaining /= 2;
                for s in plan[1..3].iter_mut().rev() {
                    if remaining >= 2 {
                        *s = 2;
                        remaining /= 2;
                    }
                }
                plan
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            StemKind::ResNetStyle => "resnet",
            StemKind::Patchify(_) => "patchify",
            StemKind::ConvStem => "convstem",
        }
    }
}

impl fmt::Display for StemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StemKind::Patchify(p) => write!(f, "P{p}"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub stem: StemKind,
    /// Norm after the patchify conv; ignored by the other stems.
    pub stem_norm: bool,
    pub widths: [usize; 4],
    pub depths: [usize; 4],
    /// Overrides [`StemKind::stride_plan`].
    pub strides: Option<[usize; 4]>,
    pub block_kind: BlockKind,
    pub kernel: usize,
    pub placement: NormActPlacement,
    pub activation: ActKind,
    /// Largest drop-path rate; blocks ramp linearly from 0 up to it.
    pub drop_path: f64,
    pub num_classes: usize,
    pub input_resolution: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            stem: StemKind::ResNetStyle,
            stem_norm: false,
            widths: [96, 192, 384, 768],
            depths: [3, 4, 6, 3],
            strides: None,
            block_kind: BlockKind::Dw,
            kernel: 3,
            placement: NormActPlacement::FULL,
            activation: ActKind::Relu,
            drop_path: 0.1,
            num_classes: 1000,
            input_resolution: 224,
        }
    }
}

fn parse_list(key: &str, v: &str) -> Result<[usize; 4]> {
    let items: Vec<usize> = v
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| {
            Error::config(format!(
                "`{key}` expects four comma-separated counts, got `{v}`"
            ))
        })?;
    items
        .try_into()
        .map_err(|_| Error::config(format!("`{key}` expects exactly four entries, got `{v}`")))
}

fn join(v: &[usize; 4]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl ModelSpec {
    pub fn stride_plan(&self) -> [usize; 4] {
        self.strides.unwrap_or_else(|| self.stem.stride_plan())
    }

    pub fn validate(&self) -> Result<()> {
        if self.depths.iter().any(|&d| d == 0) {
            return Err(Error::config("every stage needs at least one block"));
        }
        if self.widths.iter().any(|&w| w == 0)
            || self.num_classes == 0
            || self.input_resolution == 0
        {
            return Err(Error::config(
                "widths, num_classes and input_resolution must be positive",
            ));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config(format!(
                "kernel must be odd, got {}",
                self.kernel
            )));
        }
        if let StemKind::Patchify(p) = self.stem {
            if p == 0 {
                return Err(Error::config("patch size must be positive"));
            }
        }
        if self.stem == StemKind::ConvStem && self.widths[0] % 8 != 0 {
            return Err(Error::config(
                "conv stem needs a stage-1 width divisible by 8",
            ));
        }
        if self.stride_plan().iter().any(|&s| s != 1 && s != 2) {
            return Err(Error::config("stage strides must be 1 or 2"));
        }
        crate::nn::drop_path::validate_rate(self.drop_path)?;
        self.final_map().map(|_| ())
    }

    /// Side of the pre-pooling feature map; errors when a downsampling step
    /// would not divide the map evenly.
    pub fn final_map(&self) -> Result<usize> {
        let mut side = self.input_resolution;
        let steps = std::iter::once(self.stem.total_stride()).chain(self.stride_plan());
        for s in steps {
            if side % s != 0 {
                return Err(Error::config(format!(
                    "stride plan {:?} with stem {} does not divide a {}px input evenly",
                    self.stride_plan(),
                    self.stem,
                    self.input_resolution
                )));
            }
            side /= s;
        }
        Ok(side)
    }

    pub fn with_depth3(&self, depth: usize) -> Self {
        let mut s = self.clone();
        s.depths[2] = depth;
        s
    }

    /// `key = value` text understood by [`ModelSpec::from_str`].
    pub fn to_config(&self) -> String {
        let mut out = String::new();
        let pos = |p: Position| p.to_string();
        let _ = writeln!(out, "stem = {}", self.stem.name());
        if let StemKind::Patchify(p) = self.stem {
            let _ = writeln!(out, "patch_size = {p}");
            let _ = writeln!(out, "stem_norm = {}", self.stem_norm);
        }
        let _ = writeln!(out, "block_kind = {}", self.block_kind);
        let _ = writeln!(out, "kernel = {}", self.kernel);
        let _ = writeln!(out, "norm_at = {}", pos(self.placement.norm));
        let _ = writeln!(out, "act_at = {}", pos(self.placement.act));
        let _ = writeln!(out, "widths = {}", join(&self.widths));
        let _ = writeln!(out, "depths = {}", join(&self.depths));
        if let Some(s) = &self.strides {
            let _ = writeln!(out, "strides = {}", join(s));
        }
        let _ = writeln!(out, "activation = {}", self.activation);
        let _ = writeln!(out, "drop_path = {}", self.drop_path);
        let _ = writeln!(out, "num_classes = {}", self.num_classes);
        let _ = writeln!(out, "input_resolution = {}", self.input_resolution);
        out
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut spec = ModelSpec::default();
        let mut stem_name = None;
        let mut patch = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| {
                    Error::config(format!("line {}: expected `key = value`", lineno + 1))
                })?;
            let count = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::config(format!("`{key}`: `{v}` is not a count")))
            };
            match key {
                "stem" => stem_name = Some(value.to_ascii_lowercase()),
                "patch_size" => patch = Some(count(value)?),
                "stem_norm" => {
                    spec.stem_norm = value
                        .parse()
                        .map_err(|_| Error::config(format!("stem_norm: `{value}`")))?
                }
                "block_kind" => spec.block_kind = value.parse()?,
                "kernel" => spec.kernel = count(value)?,
                "norm_at" => spec.placement.norm = value.parse()?,
                "act_at" => spec.placement.act = value.parse()?,
                "widths" => spec.widths = parse_list(key, value)?,
                "depths" => spec.depths = parse_list(key, value)?,
                "strides" => spec.strides = Some(parse_list(key, value)?),
                "activation" => spec.activation = value.parse()?,
                "drop_path" => {
                    spec.drop_path = value
                        .parse()
                        .map_err(|_| Error::config(format!("drop_path: `{value}`")))?
                }
                "num_classes" => spec.num_classes = count(value)?,
                "input_resolution" => spec.input_resolution = count(value)?,
                other => return Err(Error::config(format!("unknown config key `{other}`"))),
            }
        }
        spec.stem = match (stem_name.as_deref(), patch) {
            (None | Some("resnet"), None) => StemKind::ResNetStyle,
            (Some("patchify"), Some(p)) => StemKind::Patchify(p),
            (Some("patchify"), None) => {
                return Err(Error::config("patchify stem needs `patch_size`"))
            }
            (Some("convstem"), None) => StemKind::ConvStem,
            // Shorthand such as `P16`.
            (Some(short), None)
                if short
                    .strip_prefix('p')
                    .is_some_and(|n| n.parse::<usize>().is_ok()) =>
            {
                StemKind::Patchify(short[1..].parse().unwrap())
            }
            (Some(other), None) => return Err(Error::config(format!("unknown stem `{other}`"))),
            (_, Some(_)) => {
                return Err(Error::config(
                    "`patch_size` only applies to the patchify stem",
                ))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_plans() {
        assert_eq!(StemKind::ResNetStyle.stride_plan(), [1, 2, 2, 2]);
        assert_eq!(StemKind::Patchify(4).stride_plan(), [1, 2, 2, 2]);
        assert_eq!(StemKind::Patchify(8).stride_plan(), [1, 1, 2, 2]);
        assert_eq!(StemKind::Patchify(16).stride_plan(), [1, 1, 1, 2]);
        assert_eq!(StemKind::ConvStem.stride_plan(), [1, 1, 1, 2]);
    }

    #[test]
    fn every_stem_ends_at_seven() {
        for stem in [
            StemKind::ResNetStyle,
            StemKind::Patchify(4),
            StemKind::Patchify(8),
            StemKind::Patchify(16),
            StemKind::ConvStem,
        ] {
            let spec = ModelSpec {
                stem,
                ..ModelSpec::default()
            };
            assert_eq!(spec.final_map().unwrap(), 7, "{stem}");
        }
    }

    #[test]
    fn indivisible_resolution_rejected() {
        let spec = ModelSpec {
            stem: StemKind::Patchify(16),
            input_resolution: 200,
            ..ModelSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn config_round_trip() {
        let spec = ModelSpec {
            stem: StemKind::Patchify(16),
            block_kind: BlockKind::UpInvertedDw,
            kernel: 11,
            placement: NormActPlacement::new(1, 2).unwrap(),
            depths: [3, 4, 15, 3],
            strides: Some([1, 1, 1, 2]),
            ..ModelSpec::default()
        };
        let text = spec.to_config();
        assert_eq!(text.parse::<ModelSpec>().unwrap(), spec);
    }

    #[test]
    fn config_comments_and_errors() {
        let text = "# a model\nstem = convstem  # four convs\nkernel = 5\n";
        let spec: ModelSpec = text.parse().unwrap();
        assert_eq!(spec.stem, StemKind::ConvStem);
        assert_eq!(spec.kernel, 5);
        assert!("bogus = 1".parse::<ModelSpec>().is_err());
        assert!("widths = 1,2,3".parse::<ModelSpec>().is_err());
        assert!("stem = patchify".parse::<ModelSpec>().is_err());
        assert!("depths = 3,0,6,3".parse::<ModelSpec>().is_err());
    }
}
