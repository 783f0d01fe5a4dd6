//! Fully convolutional segmentation networks over a width-reduced VGG-style
//! backbone.
//!
//! A [`ModelGraph`] is an ordered list of [`Layer`]s that read and write named
//! activations. The input is always named `data`; the last layer's output is
//! the network output. Skip fusion is expressed with [`LayerKind::Add`]
//! junctions, so the topology of each variant is visible in the layer list.

mod build;
mod checkpoint;
mod surgery;

pub use build::{build_classifier, build_model};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use surgery::{surgery_replace_fc, transfer_weights};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mask::SegmentationMask;
use crate::tensor::{Tape, Tensor, Var};

/// Named parameter tensors, iterated in name order.
pub type ParamStore = BTreeMap<String, Tensor>;

/// Smallest spatial extent that survives five stride-2 pooling stages.
pub const MIN_INPUT_SIZE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Fcn32s,
    Fcn16s,
    Fcn8s,
    FcnAlexnet,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Fcn32s, Variant::Fcn16s, Variant::Fcn8s, Variant::FcnAlexnet];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Fcn32s => "fcn32s",
            Variant::Fcn16s => "fcn16s",
            Variant::Fcn8s => "fcn8s",
            Variant::FcnAlexnet => "fcn_alexnet",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "fcn32s" | "fcn_32s" => Ok(Variant::Fcn32s),
            "fcn16s" | "fcn_16s" => Ok(Variant::Fcn16s),
            "fcn8s" | "fcn_8s" => Ok(Variant::Fcn8s),
            "fcn_alexnet" | "fcnalexnet" | "alexnet" => Ok(Variant::FcnAlexnet),
            other => Err(Error::invalid(format!(
                "unknown model variant `{other}` (expected fcn32s, fcn16s, fcn8s or fcn_alexnet)"
            ))),
        }
    }
}

/// Channel widths of the five conv/pool stages and of the convolutionized
/// fully connected head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneSpec {
    pub widths: [usize; 5],
    pub convs_per_stage: usize,
    pub fc_width: usize,
}

impl BackboneSpec {
    /// Desk-scale default: VGG's layout at roughly 1/8 of its width.
    pub fn small() -> Self {
        BackboneSpec { widths: [8, 16, 32, 64, 64], convs_per_stage: 1, fc_width: 64 }
    }

    /// Widths no larger than 8, for full-graph gradient checks.
    pub fn tiny() -> Self {
        BackboneSpec { widths: [4, 6, 8, 8, 8], convs_per_stage: 1, fc_width: 8 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.iter().any(|&w| w == 0) || self.fc_width == 0 || self.convs_per_stage == 0 {
            return Err(Error::invalid(format!("backbone widths must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn widths_string(&self) -> String {
        self.widths.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }

    pub fn parse_widths(s: &str) -> Result<[usize; 5]> {
        let parsed: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("bad backbone widths `{s}`: {e}")))?;
        parsed
            .try_into()
            .map_err(|v: Vec<usize>| Error::invalid(format!("backbone needs exactly 5 stage widths, got {}", v.len())))
    }
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec::small()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv { weight: String, bias: Option<String>, stride: usize, padding: usize },
    Relu,
    MaxPool { k: usize, stride: usize },
    /// Transposed convolution (no bias).
    Upsample { weight: String, stride: usize },
    /// Centre crop of `inputs[0]` to the spatial size of `inputs[1]`.
    CropTo,
    /// Elementwise sum: a skip-fusion junction.
    Add,
    Flatten,
    /// Fully connected layer over a flattened `(c, h, w)` activation.
    Dense { weight: String, bias: Option<String>, input_chw: (usize, usize, usize) },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
    pub output: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphKind {
    Segmentation(Variant),
    /// Image classifier ending in dense layers; only accepts its native input size.
    Classifier { input_hw: (usize, usize) },
    /// Classifier after dense-to-convolution surgery; emits a coarse score map.
    Convolutionized,
}

#[derive(Clone, Debug)]
pub struct ModelGraph {
    pub kind: GraphKind,
    pub backbone: BackboneSpec,
    pub num_classes: usize,
    pub seed: u64,
    pub layers: Vec<Layer>,
    pub params: ParamStore,
    /// Parameters excluded from training (the fixed final upsampler).
    pub frozen: BTreeSet<String>,
}

impl ModelGraph {
    pub fn variant(&self) -> Option<Variant> {
        match self.kind {
            GraphKind::Segmentation(v) => Some(v),
            _ => None,
        }
    }

    /// Number of skip-fusion junctions.
    pub fn fusion_junctions(&self) -> usize {
        self.layers.iter().filter(|l| l.kind == LayerKind::Add).count()
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &String> {
        self.params.keys().filter(|k| !self.frozen.contains(*k))
    }

    /// Count of trainable scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.trainable_names().map(|k| self.params[k].len()).sum()
    }

    pub fn has_dense_layers(&self) -> bool {
        self.layers.iter().any(|l| matches!(l.kind, LayerKind::Dense { .. }))
    }

    /// Puts every parameter on `tape`; frozen ones as constants.
    pub fn bind(&self, tape: &mut Tape) -> BTreeMap<String, Var> {
        self.params
            .iter()
            .map(|(name, t)| {
                let var = tape.leaf(t.clone(), !self.frozen.contains(name));
                (name.clone(), var)
            })
            .collect()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let [_, c, h, w] = input.dims4()?;
        if c != 3 {
            return Err(Error::shape("forward", format!("expected 3 input channels, got {c}")));
        }
        if matches!(self.kind, GraphKind::Segmentation(_) | GraphKind::Convolutionized)
            && (h < MIN_INPUT_SIZE || w < MIN_INPUT_SIZE)
        {
            return Err(Error::shape(
                "forward",
                format!("input is {h}x{w}; the minimum spatial size is {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE}"),
            ));
        }
        Ok(())
    }

    /// Records the forward pass on `tape` given bound parameters.
    pub fn forward_on_tape(&self, tape: &mut Tape, input: Var, params: &BTreeMap<String, Var>) -> Result<Var> {
        self.check_input(tape.value(input))?;
        let mut acts: BTreeMap<&str, Var> = BTreeMap::new();
        acts.insert("data", input);
        let mut last = input;
        let param = |name: &str| {
            params.get(name).copied().ok_or_else(|| Error::invalid(format!("parameter `{name}` is not bound")))
        };
        for layer in &self.layers {
            let arg = |i: usize| -> Result<Var> {
                let key = layer.inputs.get(i).ok_or_else(|| {
                    Error::invalid(format!("layer `{}` is missing input #{i}", layer.name))
                })?;
                acts.get(key.as_str())
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("layer `{}` reads undefined activation `{key}`", layer.name)))
            };
            let out = match &layer.kind {
                LayerKind::Conv { weight, bias, stride, padding } => {
                    let b = bias.as_deref().map(param).transpose()?;
                    tape.conv2d(arg(0)?, param(weight)?, b, *stride, *padding)?
                }
                LayerKind::Relu => tape.relu(arg(0)?),
                LayerKind::MaxPool { k, stride } => tape.max_pool2d(arg(0)?, *k, *stride)?,
                LayerKind::Upsample { weight, stride } => tape.transposed_conv2d(arg(0)?, param(weight)?, *stride)?,
                LayerKind::CropTo => {
                    let [_, _, h, w] = tape.value(arg(1)?).dims4()?;
                    tape.center_crop(arg(0)?, h, w)?
                }
                LayerKind::Add => tape.add(arg(0)?, arg(1)?)?,
                LayerKind::Flatten => tape.flatten(arg(0)?)?,
                LayerKind::Dense { weight, bias, input_chw: (c, h, w) } => {
                    let x = arg(0)?;
                    let width = tape.value(x).shape()[1];
                    if width != c * h * w {
                        return Err(Error::shape(
                            "dense",
                            format!(
                                "layer `{}` expects a flattened {c}x{h}x{w} activation ({} values) but got {width}; \
                                 dense graphs only accept their native input size",
                                layer.name,
                                c * h * w
                            ),
                        ));
                    }
                    let b = bias.as_deref().map(param).transpose()?;
                    tape.dense(x, param(weight)?, b)?
                }
            };
            acts.insert(layer.output.as_str(), out);
            last = out;
        }
        Ok(last)
    }

    /// Per-pixel class logits `[N, K, H, W]` for a `[N, 3, H, W]` batch.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params: BTreeMap<String, Var> =
            self.params.iter().map(|(n, t)| (n.clone(), tape.constant(t.clone()))).collect();
        let x = tape.constant(batch.clone());
        let out = self.forward_on_tape(&mut tape, x, &params)?;
        Ok(tape.value(out).clone())
    }

    /// Argmax segmentation of a single `[1, 3, H, W]` image.
    pub fn predict_mask(&self, image: &Tensor) -> Result<SegmentationMask> {
        let [n, _, _, _] = image.dims4()?;
        if n != 1 {
            return Err(Error::shape("predict_mask", format!("expected a single image, got batch of {n}")));
        }
        if !image.is_finite() {
            return Err(Error::invalid("input image contains non-finite values"));
        }
        let logits = self.forward(image)?;
        argmax_mask(&logits)
    }
}

/// Per-pixel argmax over the class axis of `[1, 2, H, W]` logits; ties go to
/// the lower class index.
pub fn argmax_mask(logits: &Tensor) -> Result<SegmentationMask> {
    let [n, k, h, w] = logits.dims4()?;
    if n != 1 || k != 2 {
        return Err(Error::shape("argmax_mask", format!("expected [1, 2, H, W] logits, got {:?}", logits.shape())));
    }
    let plane = h * w;
    let d = logits.data();
    let labels = (0..plane).map(|p| u8::from(d[plane + p] > d[p])).collect();
    SegmentationMask::new(w, h, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_tags_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("fcn4s".parse::<Variant>().is_err());
    }

    #[test]
    fn widths_parse() {
        assert_eq!(BackboneSpec::parse_widths("8,16,32,64,64").unwrap(), [8, 16, 32, 64, 64]);
        assert!(BackboneSpec::parse_widths("8,16").is_err());
        assert!(BackboneSpec::parse_widths("8,x,1,1,1").is_err());
    }

    #[test]
    fn argmax_tie_goes_to_background() {
        let logits = Tensor::new(vec![1, 2, 1, 3], vec![0.0, 1.0, 2.0, 0.0, 1.5, 1.0]).unwrap();
        assert_eq!(argmax_mask(&logits).unwrap().labels(), &[0, 1, 0]);
    }
}
