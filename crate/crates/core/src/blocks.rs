//! Residual blocks built from three convolutions plus a shortcut.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{
    stochastic_depth, ActKind, BatchNorm2d, Conv2d, ConvParams, LayerDesc, ParamLayout, ParamStore,
    Session, Tracer,
};
use crate::tensor::{Scalar, Shape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    /// `1×1 cin→w`, `k×k` depthwise on `w`, `1×1 w→4w`.
    Dw,
    /// `1×1 cin→4w`, `k×k` depthwise on `4w`, `1×1 4w→w`.
    InvertedDw,
    /// `k×k` depthwise on `cin`, `1×1 cin→4w`, `1×1 4w→w`.
    UpInvertedDw,
    /// `1×1 cin→4w`, `1×1 4w→w`, `k×k` depthwise on `w`.
    DownInvertedDw,
    /// Classic bottleneck with a dense `k×k` middle conv.
    Bottleneck,
}

impl BlockKind {
    pub const ALL: [BlockKind; 5] = [
        BlockKind::Dw,
        BlockKind::InvertedDw,
        BlockKind::UpInvertedDw,
        BlockKind::DownInvertedDw,
        BlockKind::Bottleneck,
    ];

    pub fn out_channels(self, width: usize) -> usize {
        match self {
            BlockKind::Dw | BlockKind::Bottleneck => 4 * width,
            _ => width,
        }
    }

    /// 1-based index of the conv whose output is wider than its input.
    pub fn expansion_conv_index(self) -> u8 {
        match self {
            BlockKind::Dw | BlockKind::Bottleneck => 3,
            BlockKind::InvertedDw | BlockKind::DownInvertedDw => 1,
            BlockKind::UpInvertedDw => 2,
        }
    }

    pub fn optimal_placement(self) -> NormActPlacement {
        NormActPlacement {
            norm: Position::At(1),
            act: Position::At(self.expansion_conv_index()),
        }
    }

    /// Which of the three convs is depthwise (0-based), if any.
    pub fn depthwise_index(self) -> Option<usize> {
        match self {
            BlockKind::Dw | BlockKind::InvertedDw => Some(1),
            BlockKind::UpInvertedDw => Some(0),
            BlockKind::DownInvertedDw => Some(2),
            BlockKind::Bottleneck => None,
        }
    }

    fn convs(self, cin: usize, w: usize, k: usize, stride: usize) -> Result<[ConvParams; 3]> {
        let pw = ConvParams::pointwise;
        let dw = ConvParams::depthwise;
        Ok(match self {
            BlockKind::Dw => [pw(cin, w, 1)?, dw(w, k, stride)?, pw(w, 4 * w, 1)?],
            BlockKind::InvertedDw => [pw(cin, 4 * w, 1)?, dw(4 * w, k, stride)?, pw(4 * w, w, 1)?],
            BlockKind::UpInvertedDw => [dw(cin, k, stride)?, pw(cin, 4 * w, 1)?, pw(4 * w, w, 1)?],
            BlockKind::DownInvertedDw => [pw(cin, 4 * w, stride)?, pw(4 * w, w, 1)?, dw(w, k, 1)?],
            BlockKind::Bottleneck => [
                pw(cin, w, 1)?,
                ConvParams::dense(w, w, k, stride, k / 2)?,
                pw(w, 4 * w, 1)?,
            ],
        })
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockKind::Dw => "dw",
            BlockKind::InvertedDw => "inverted-dw",
            BlockKind::UpInvertedDw => "up-inverted-dw",
            BlockKind::DownInvertedDw => "down-inverted-dw",
            BlockKind::Bottleneck => "bottleneck",
        })
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        BlockKind::ALL
            .into_iter()
            .find(|k| k.to_string() == norm)
            .ok_or_else(|| Error::config(format!("unknown block kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Position {
    /// After the i-th conv, 1-based.
    At(u8),
    /// After every conv.
    All,
}

impl Position {
    fn covers(self, conv: usize) -> bool {
        match self {
            Position::All => true,
            Position::At(i) => i as usize == conv + 1,
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            Position::At(1..=3) | Position::All => Ok(()),
            Position::At(i) => Err(Error::config(format!("placement index {i} outside 1..=3"))),
        }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Position::At(i) => write!(f, "{i}"),
            Position::All => f.write_str("all"),
        }
    }
}

impl FromStr for Position {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let p = if s.eq_ignore_ascii_case("all") {
            Position::All
        } else {
            Position::At(
                s.parse()
                    .map_err(|_| Error::config(format!("bad placement index `{s}`")))?,
            )
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NormActPlacement {
    pub norm: Position,
    pub act: Position,
}

impl NormActPlacement {
    pub const FULL: NormActPlacement = NormActPlacement {
        norm: Position::All,
        act: Position::All,
    };

    pub fn new(norm: u8, act: u8) -> Result<Self> {
        let p = NormActPlacement {
            norm: Position::At(norm),
            act: Position::At(act),
        };
        p.norm.validate()?;
        p.act.validate()?;
        Ok(p)
    }
}

impl Default for NormActPlacement {
    fn default() -> Self {
        Self::FULL
    }
}

/// `Norm1Act2`, `NormAllActAll`.
impl fmt::Display for NormActPlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let part = |p: Position| match p {
            Position::At(i) => i.to_string(),
            Position::All => "All".into(),
        };
        write!(f, "Norm{}Act{}", part(self.norm), part(self.act))
    }
}

impl FromStr for NormActPlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let bad = || Error::config(format!("bad placement `{s}`, expected e.g. Norm1Act2"));
        let rest = lower.strip_prefix("norm").ok_or_else(bad)?;
        let (norm, act) = rest.split_once("act").ok_or_else(bad)?;
        Ok(NormActPlacement {
            norm: norm.parse()?,
            act: act.parse()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub placement: NormActPlacement,
    pub drop_path: f64,
    pub activation: ActKind,
}

impl BlockSpec {
    pub const DEFAULT_DROP_PATH: f64 = 0.1;

    /// Identity-shaped block (`in_channels` equals the output width).
    pub fn new(
        kind: BlockKind,
        width: usize,
        kernel: usize,
        stride: usize,
        placement: NormActPlacement,
    ) -> Self {
        BlockSpec {
            kind,
            in_channels: kind.out_channels(width),
            width,
            kernel,
            stride,
            placement,
            drop_path: Self::DEFAULT_DROP_PATH,
            activation: ActKind::Relu,
        }
    }

    pub fn with_in_channels(mut self, c: usize) -> Self {
        self.in_channels = c;
        self
    }

    pub fn out_channels(&self) -> usize {
        self.kind.out_channels(self.width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(Error::config(format!(
                "kernel must be odd, got {}",
                self.kernel
            )));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::config(format!(
                "stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        if self.width == 0 || self.in_channels == 0 {
            return Err(Error::config("block widths must be positive"));
        }
        self.placement.norm.validate()?;
        self.placement.act.validate()?;
        crate::nn::drop_path::validate_rate(self.drop_path)
    }

    fn needs_projection(&self) -> bool {
        self.stride != 1 || self.in_channels != self.out_channels()
    }
}

/// `<kind>:w<width>:k<kernel>:s<stride>:norm<idx|all>:act<idx|all>` with
/// optional trailing `:in<channels>`, `:dp<rate>` and `:gelu`.
impl fmt::Display for BlockSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:w{}:k{}:s{}:norm{}:act{}",
            self.kind,
            self.width,
            self.kernel,
            self.stride,
            self.placement.norm,
            self.placement.act
        )?;
        if self.in_channels != self.out_channels() {
            write!(f, ":in{}", self.in_channels)?;
        }
        if self.drop_path != Self::DEFAULT_DROP_PATH {
            write!(f, ":dp{}", self.drop_path)?;
        }
        if self.activation != ActKind::Relu {
            write!(f, ":{}", self.activation)?;
        }
        Ok(())
    }
}

impl FromStr for BlockSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |what: &str| Error::config(format!("block descriptor `{s}`: {what}"));
        let mut parts = s.trim().split(':');
        let kind: BlockKind = parts.next().ok_or_else(|| bad("empty"))?.parse()?;
        let mut field = |prefix: &str| -> Result<&str> {
            parts
                .next()
                .and_then(|p| p.strip_prefix(prefix))
                .ok_or_else(|| bad(&format!("expected `{prefix}…`")))
        };
        let num = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| bad(&format!("`{v}` is not a count")))
        };
        let width = num(field("w")?)?;
        let kernel = num(field("k")?)?;
        let stride = num(field("s")?)?;
        let norm = field("norm")?.parse()?;
        let act = field("act")?.parse()?;
        let mut spec = BlockSpec::new(kind, width, kernel, stride, NormActPlacement { norm, act });
        for extra in parts {
            if let Some(v) = extra.strip_prefix("in") {
                spec.in_channels = num(v)?;
            } else if let Some(v) = extra.strip_prefix("dp") {
                spec.drop_path = v.parse().map_err(|_| bad(&format!("bad rate `{v}`")))?;
            } else {
                spec.activation = extra
                    .parse()
                    .map_err(|_| bad(&format!("unknown suffix `{extra}`")))?;
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub name: String,
    pub spec: BlockSpec,
    pub convs: [Conv2d; 3],
    pub norms: [Option<BatchNorm2d>; 3],
    pub acts: [Option<ActKind>; 3],
    pub shortcut: Option<(Conv2d, BatchNorm2d)>,
}

/// Register a block's parameters under `name` and return it.
pub fn build_block(
    layout: &mut ParamLayout,
    name: impl Into<String>,
    spec: BlockSpec,
) -> Result<Block> {
    spec.validate()?;
    let name = name.into();
    let params = spec
        .kind
        .convs(spec.in_channels, spec.width, spec.kernel, spec.stride)?;
    let mut convs = Vec::with_capacity(3);
    let mut norms: [Option<BatchNorm2d>; 3] = Default::default();
    let mut acts = [None; 3];
    for (i, p) in params.into_iter().enumerate() {
        let normed = spec.placement.norm.covers(i);
        // A bias right before a norm would be cancelled by the mean subtraction.
        convs.push(Conv2d::new(
            layout,
            format!("{name}.conv{}", i + 1),
            p,
            !normed,
        ));
        if normed {
            norms[i] = Some(BatchNorm2d::new(
                layout,
                format!("{name}.bn{}", i + 1),
                p.out_channels,
            ));
        }
        if spec.placement.act.covers(i) {
            acts[i] = Some(spec.activation);
        }
    }
    let shortcut = spec.needs_projection().then(|| {
        let p = ConvParams {
            in_channels: spec.in_channels,
            out_channels: spec.out_channels(),
            kernel: 1,
            stride: spec.stride,
            padding: 0,
            groups: 1,
        };
        let conv = Conv2d::new(layout, format!("{name}.shortcut.conv"), p, false);
        let bn = BatchNorm2d::new(layout, format!("{name}.shortcut.bn"), spec.out_channels());
        (conv, bn)
    });
    let convs: [Conv2d; 3] = convs.try_into().expect("three convs");
    Ok(Block {
        name,
        spec,
        convs,
        norms,
        acts,
        shortcut,
    })
}

impl Block {
    pub fn out_channels(&self) -> usize {
        self.spec.out_channels()
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..3 {
            h = self.convs[i].forward(s, h)?;
            if let Some(bn) = &self.norms[i] {
                h = bn.forward(s, h)?;
            }
            if let Some(kind) = self.acts[i] {
                h = s.tape.activation(kind, h)?;
            }
        }
        let h = stochastic_depth(s, h, self.spec.drop_path)?;
        let short = match &self.shortcut {
            Some((conv, bn)) => {
                let p = conv.forward(s, x)?;
                bn.forward(s, p)?
            }
            None => x,
        };
        s.tape.add(short, h)
    }

    /// Append this block's layers to `tracer`, returning the output shape.
    pub fn trace(&self, tracer: &mut Tracer, input: Shape) -> Result<Shape> {
        let mut h = input;
        for i in 0..3 {
            h = tracer.push(
                self.convs[i].name.clone(),
                LayerDesc::Conv(self.convs[i].params),
                h,
            )?;
            if let Some(bn) = &self.norms[i] {
                h = tracer.push(
                    bn.name.clone(),
                    LayerDesc::BatchNorm {
                        channels: bn.channels,
                    },
                    h,
                )?;
            }
            if let Some(kind) = self.acts[i] {
                h = tracer.push(
                    format!("{}.act{}", self.name, i + 1),
                    LayerDesc::Act(kind),
                    h,
                )?;
            }
        }
        let short = match &self.shortcut {
            Some((conv, bn)) => {
                let p = tracer.push(conv.name.clone(), LayerDesc::Conv(conv.params), input)?;
                tracer.push(
                    bn.name.clone(),
                    LayerDesc::BatchNorm {
                        channels: bn.channels,
                    },
                    p,
                )?
            }
            None => input,
        };
        if short != h {
            return Err(Error::shape(
                "residual",
                format!("shortcut {short} vs branch {h}"),
            ));
        }
        tracer.push(format!("{}.add", self.name), LayerDesc::Add, h)
    }

    pub fn norm_count(&self) -> usize {
        self.norms.iter().flatten().count()
    }

    pub fn act_count(&self) -> usize {
        self.acts.iter().flatten().count()
    }

    /// Zero the last conv (and its bias) so the branch starts as exactly zero.
    pub fn zero_last_conv<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let last = &self.convs[2];
        store.set(last.weight, Tensor::zeros(last.params.weight_shape()))?;
        if let Some(b) = last.bias {
            store.set(
                b,
                Tensor::zeros(Shape::new(1, last.params.out_channels, 1, 1)),
            )?;
        }
        Ok(())
    }
}
