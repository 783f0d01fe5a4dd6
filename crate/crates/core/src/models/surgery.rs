use std::collections::BTreeMap;

use super::{GraphKind, LayerKind, ModelGraph};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Converts every dense layer of a classifier into an equivalent convolution
/// so the network accepts arbitrary input sizes.
///
/// The first dense layer, which reads a flattened `c x h x w` activation,
/// becomes an `h x w` convolution over `c` channels; later dense layers
/// become `1 x 1` convolutions. Weights are reshaped, not copied through any
/// arithmetic, so they stay bit-identical. When `num_classes` differs from
/// the classifier's output width, the last layer is replaced by a
/// zero-initialized score layer of the requested width.
pub fn surgery_replace_fc(classifier: &ModelGraph, num_classes: usize) -> Result<ModelGraph> {
    if !classifier.has_dense_layers() {
        return Err(Error::invalid("surgery needs a graph with dense layers; none found"));
    }
    if num_classes < 2 {
        return Err(Error::invalid(format!("num_classes must be at least 2, got {num_classes}")));
    }
    let last_dense = classifier
        .layers
        .iter()
        .rposition(|l| matches!(l.kind, LayerKind::Dense { .. }))
        .expect("checked above");

    let mut out = classifier.clone();
    out.layers.clear();
    let mut alias: BTreeMap<String, String> = BTreeMap::new();
    let resolve = |alias: &BTreeMap<String, String>, name: &String| alias.get(name).cloned().unwrap_or_else(|| name.clone());

    for (i, layer) in classifier.layers.iter().enumerate() {
        let mut layer = layer.clone();
        layer.inputs = layer.inputs.iter().map(|n| resolve(&alias, n)).collect();
        match &layer.kind {
            LayerKind::Flatten => {
                alias.insert(layer.output.clone(), layer.inputs[0].clone());
                continue;
            }
            LayerKind::Dense { weight, bias, input_chw: (c, h, w) } => {
                let dense_w = &classifier.params[weight];
                let dout = dense_w.shape()[0];
                if i == last_dense && dout != num_classes {
                    out.params.insert(weight.clone(), Tensor::zeros(&[num_classes, *c, *h, *w]));
                    if let Some(b) = bias {
                        out.params.insert(b.clone(), Tensor::zeros(&[num_classes]));
                    }
                } else {
                    out.params.insert(weight.clone(), dense_w.reshape(&[dout, *c, *h, *w])?);
                }
                layer.kind = LayerKind::Conv { weight: weight.clone(), bias: bias.clone(), stride: 1, padding: 0 };
            }
            _ => {}
        }
        out.layers.push(layer);
    }
    out.kind = GraphKind::Convolutionized;
    out.num_classes = num_classes;
    Ok(out)
}

/// Copies every parameter of `src` into `dst` whose name and shape match.
/// Returns the names that were transferred.
pub fn transfer_weights(src: &ModelGraph, dst: &mut ModelGraph) -> Vec<String> {
    let mut copied = Vec::new();
    for (name, tensor) in &src.params {
        if let Some(target) = dst.params.get_mut(name) {
            if target.shape() == tensor.shape() {
                *target = tensor.clone();
                copied.push(name.clone());
            }
        }
    }
    copied
}
