//! Static multiply-accumulate counts from a shape trace.

use std::fmt::Write as _;

use crate::error::Result;
use crate::model::Model;
use crate::nn::{LayerDesc, TracedLayer};
use crate::tensor::Shape;

/// MACs of one layer on `input`: convs count `Hout·Wout·Cout·(Cin/g)·k²`,
/// linear maps `Cin·Cout` per sample, everything else zero.
pub fn layer_macs(desc: &LayerDesc, input: Shape) -> Result<u64> {
    desc.macs(input)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopsEntry {
    pub path: String,
    pub kind: &'static str,
    pub output: Shape,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopsReport {
    /// One entry per parameterized layer, in forward order.
    pub entries: Vec<FlopsEntry>,
    pub total: u64,
    /// Norm, activation, pooling and residual-sum operations, not in `total`.
    pub elementwise: u64,
}

fn parameterized(desc: &LayerDesc) -> bool {
    matches!(
        desc,
        LayerDesc::Conv(_) | LayerDesc::BatchNorm { .. } | LayerDesc::Linear { .. }
    )
}

impl FlopsReport {
    pub fn from_trace(layers: &[TracedLayer]) -> Result<Self> {
        let mut entries = Vec::new();
        let mut total = 0u64;
        let mut elementwise = 0u64;
        for l in layers {
            elementwise += l.desc.elementwise_ops(l.input)?;
            if parameterized(&l.desc) {
                let macs = layer_macs(&l.desc, l.input)?;
                total += macs;
                entries.push(FlopsEntry {
                    path: l.path.clone(),
                    kind: l.desc.kind(),
                    output: l.output,
                    macs,
                });
            }
        }
        Ok(FlopsReport {
            entries,
            total,
            elementwise,
        })
    }

    /// Set when counting elementwise work would move the total by over 1%.
    pub fn sensitivity_note(&self) -> Option<String> {
        let share = self.elementwise as f64 / self.total.max(1) as f64;
        (share > 0.01).then(|| {
            format!(
                "note: norm/act/pool/add ops ({:.3}G) would add {:.1}% if counted",
                self.elementwise as f64 / 1e9,
                share * 100.0
            )
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}", e.path, e.output, e.macs);
        }
        let _ = writeln!(out, "total\t-\t{}", self.total);
        out
    }

    pub fn to_table(&self) -> String {
        let pw = self
            .entries
            .iter()
            .map(|e| e.path.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let sw = self
            .entries
            .iter()
            .map(|e| e.output.to_string().len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<pw$}  {:<6}  {:<sw$}  {:>14}",
            "layer", "kind", "output", "MACs"
        );
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:<pw$}  {:<6}  {:<sw$}  {:>14}",
                e.path,
                e.kind,
                e.output.to_string(),
                e.macs
            );
        }
        let _ = writeln!(
            out,
            "{:<pw$}  {:<6}  {:<sw$}  {:>14}",
            "total", "", "", self.total
        );
        let _ = writeln!(out, "total: {:.3}G MACs", self.total as f64 / 1e9);
        if let Some(note) = self.sensitivity_note() {
            let _ = writeln!(out, "{note}");
        }
        out
    }
}

pub fn count_flops(model: &Model, input: Shape) -> Result<FlopsReport> {
    FlopsReport::from_trace(&model.trace(input)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ConvParams;

    #[test]
    fn formula_instances() {
        let pw = LayerDesc::Conv(ConvParams::pointwise(16, 16, 1).unwrap());
        assert_eq!(
            layer_macs(&pw, Shape::new(1, 16, 7, 5)).unwrap(),
            7 * 5 * 16 * 16
        );
        let dw = LayerDesc::Conv(ConvParams::depthwise(16, 7, 1).unwrap());
        assert_eq!(
            layer_macs(&dw, Shape::new(1, 16, 7, 5)).unwrap(),
            7 * 5 * 16 * 49
        );
    }
}
