use std::collections::BTreeSet;

use super::{BackboneSpec, GraphKind, Layer, LayerKind, ModelGraph, ParamStore, Variant};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::tensor::{bilinear_kernel, Tensor};

/// Accumulates layers and their initial parameters.
struct Builder {
    seed: u64,
    layers: Vec<Layer>,
    params: ParamStore,
    frozen: BTreeSet<String>,
}

#[derive(Clone, Copy)]
enum Init {
    /// He-normal, std = sqrt(2 / fan_in); bias zero.
    He,
    Zero,
}

impl Builder {
    fn new(seed: u64) -> Self {
        Builder { seed, layers: Vec::new(), params: ParamStore::new(), frozen: BTreeSet::new() }
    }

    fn layer(&mut self, name: &str, kind: LayerKind, inputs: &[&str]) -> String {
        let output = name.to_string();
        self.layers.push(Layer {
            name: name.to_string(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            output: output.clone(),
        });
        output
    }

    /// Weight init depends only on (seed, parameter name), so layers shared
    /// between variants start from identical tensors.
    fn init(&mut self, name: &str, shape: &[usize], fan_in: usize, init: Init) -> String {
        let key = format!("{name}.weight");
        let t = match init {
            Init::He => {
                let mut rng = rng_for(self.seed, &format!("init/{key}"));
                Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), &mut rng)
            }
            Init::Zero => Tensor::zeros(shape),
        };
        self.params.insert(key.clone(), t);
        key
    }

    fn bias(&mut self, name: &str, n: usize) -> String {
        let key = format!("{name}.bias");
        self.params.insert(key.clone(), Tensor::zeros(&[n]));
        key
    }

    fn conv(&mut self, name: &str, input: &str, cin: usize, cout: usize, k: usize, pad: usize, init: Init) -> String {
        let weight = self.init(name, &[cout, cin, k, k], cin * k * k, init);
        let bias = Some(self.bias(name, cout));
        self.layer(name, LayerKind::Conv { weight, bias, stride: 1, padding: pad }, &[input])
    }

    fn conv_relu(&mut self, name: &str, input: &str, cin: usize, cout: usize, k: usize, pad: usize) -> String {
        let c = self.conv(name, input, cin, cout, k, pad, Init::He);
        self.layer(&format!("relu_{name}"), LayerKind::Relu, &[&c])
    }

    fn upsample(&mut self, name: &str, input: &str, channels: usize, factor: usize, trainable: bool) -> String {
        let key = format!("{name}.weight");
        self.params.insert(key.clone(), bilinear_kernel(channels, 2 * factor));
        if !trainable {
            self.frozen.insert(key.clone());
        }
        self.layer(name, LayerKind::Upsample { weight: key, stride: factor }, &[input])
    }

    fn crop_to(&mut self, name: &str, input: &str, reference: &str) -> String {
        self.layer(name, LayerKind::CropTo, &[input, reference])
    }

    /// Five conv/pool stages. Returns the outputs of pool3, pool4, pool5.
    fn backbone(&mut self, spec: &BackboneSpec, first_kernel: usize) -> [String; 3] {
        let mut x = "data".to_string();
        let mut cin = 3;
        let mut pools = Vec::new();
        for (stage, &width) in spec.widths.iter().enumerate() {
            let s = stage + 1;
            for j in 1..=spec.convs_per_stage {
                let k = if s == 1 && j == 1 { first_kernel } else { 3 };
                x = self.conv_relu(&format!("conv{s}_{j}"), &x, cin, width, k, k / 2);
                cin = width;
            }
            x = self.layer(&format!("pool{s}"), LayerKind::MaxPool { k: 2, stride: 2 }, &[&x]);
            pools.push(x.clone());
        }
        [pools[2].clone(), pools[3].clone(), pools[4].clone()]
    }

    fn finish(self, kind: GraphKind, backbone: &BackboneSpec, num_classes: usize) -> ModelGraph {
        ModelGraph {
            kind,
            backbone: backbone.clone(),
            num_classes,
            seed: self.seed,
            layers: self.layers,
            params: self.params,
            frozen: self.frozen,
        }
    }
}

/// Builds and initializes an FCN variant.
///
/// Convolutions are He-normal with zero bias; score layers (`score_*`) are
/// zero-initialized; every upsampler starts as a bilinear interpolator. The
/// final upsampler of each variant is frozen, the intermediate 2x upsamplers
/// of the skip paths are trainable.
///
/// Fusion for FCN-8s: `score_fr` is upsampled 2x and added to `score_pool4`,
/// that sum is upsampled 2x and added to `score_pool3`, and the result is
/// upsampled 8x and centre-cropped to the input size.
pub fn build_model(variant: Variant, backbone: &BackboneSpec, num_classes: usize, seed: u64) -> Result<ModelGraph> {
    if num_classes < 2 {
        return Err(Error::invalid(format!("num_classes must be at least 2, got {num_classes}")));
    }
    backbone.validate()?;
    let k = num_classes;
    let mut b = Builder::new(seed);
    let first_kernel = if variant == Variant::FcnAlexnet { 5 } else { 3 };
    let [pool3, pool4, pool5] = b.backbone(backbone, first_kernel);
    let [_, _, w3, w4, w5] = backbone.widths;
    let fw = backbone.fc_width;

    let fc6 = b.conv_relu("fc6", &pool5, w5, fw, 3, 1);
    let fc7 = b.conv_relu("fc7", &fc6, fw, fw, 1, 0);
    let score_fr = b.conv("score_fr", &fc7, fw, k, 1, 0, Init::Zero);

    match variant {
        Variant::Fcn32s | Variant::FcnAlexnet => {
            let up = b.upsample("upscore", &score_fr, k, 32, false);
            b.crop_to("score", &up, "data");
        }
        Variant::Fcn16s => {
            let up2 = b.upsample("upscore2", &score_fr, k, 2, true);
            let sp4 = b.conv("score_pool4", &pool4, w4, k, 1, 0, Init::Zero);
            let up2c = b.crop_to("upscore2_crop", &up2, &sp4);
            let fuse = b.layer("fuse_pool4", LayerKind::Add, &[&up2c, &sp4]);
            let up16 = b.upsample("upscore16", &fuse, k, 16, false);
            b.crop_to("score", &up16, "data");
        }
        Variant::Fcn8s => {
            let up2 = b.upsample("upscore2", &score_fr, k, 2, true);
            let sp4 = b.conv("score_pool4", &pool4, w4, k, 1, 0, Init::Zero);
            let up2c = b.crop_to("upscore2_crop", &up2, &sp4);
            let fuse4 = b.layer("fuse_pool4", LayerKind::Add, &[&up2c, &sp4]);
            let up4 = b.upsample("upscore_pool4", &fuse4, k, 2, true);
            let sp3 = b.conv("score_pool3", &pool3, w3, k, 1, 0, Init::Zero);
            let up4c = b.crop_to("upscore_pool4_crop", &up4, &sp3);
            let fuse3 = b.layer("fuse_pool3", LayerKind::Add, &[&up4c, &sp3]);
            let up8 = b.upsample("upscore8", &fuse3, k, 8, false);
            b.crop_to("score", &up8, "data");
        }
    }
    Ok(b.finish(GraphKind::Segmentation(variant), backbone, num_classes))
}

/// Builds an image classifier with the same conv stages followed by three
/// dense layers (`fc6`, `fc7`, `fc8`). It only accepts `input_hw` inputs.
pub fn build_classifier(
    backbone: &BackboneSpec,
    num_classes: usize,
    input_hw: (usize, usize),
    seed: u64,
) -> Result<ModelGraph> {
    if num_classes < 2 {
        return Err(Error::invalid(format!("num_classes must be at least 2, got {num_classes}")));
    }
    backbone.validate()?;
    let (h5, w5) = (input_hw.0 >> 5, input_hw.1 >> 5);
    if h5 == 0 || w5 == 0 {
        return Err(Error::invalid(format!("classifier input {input_hw:?} is smaller than 32x32")));
    }
    let mut b = Builder::new(seed);
    let [_, _, pool5] = b.backbone(backbone, 3);
    let c5 = backbone.widths[4];
    let fw = backbone.fc_width;
    let flat = b.layer("flatten", LayerKind::Flatten, &[&pool5]);

    let mut x = flat;
    let mut chw = (c5, h5, w5);
    let mut din = c5 * h5 * w5;
    for (name, dout, relu) in [("fc6", fw, true), ("fc7", fw, true), ("fc8", num_classes, false)] {
        let weight = b.init(name, &[dout, din], din, Init::He);
        let bias = Some(b.bias(name, dout));
        x = b.layer(name, LayerKind::Dense { weight, bias, input_chw: chw }, &[&x]);
        if relu {
            x = b.layer(&format!("relu_{name}"), LayerKind::Relu, &[&x]);
        }
        chw = (dout, 1, 1);
        din = dout;
    }
    Ok(b.finish(GraphKind::Classifier { input_hw }, backbone, num_classes))
}
