//! Zip-archived checkpoints: `manifest.txt` (key=value) plus one
//! `params/<name>.fcnt` tensor blob per parameter.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use zip::write::SimpleFileOptions;
use zip::{ZipArchive, ZipWriter};

use super::{build_model, BackboneSpec, GraphKind, ModelGraph, Variant};
use crate::error::{Error, Result};
use crate::kv;
use crate::tensor::{read_tensor, write_tensor};

const MANIFEST: &str = "manifest.txt";

fn zip_err(e: zip::result::ZipError) -> Error {
    Error::format("checkpoint archive", e.to_string())
}

pub fn save_checkpoint(model: &ModelGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let GraphKind::Segmentation(variant) = model.kind else {
        return Err(Error::invalid("only segmentation models can be checkpointed"));
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut zip = ZipWriter::new(file);
    let opts = SimpleFileOptions::default();

    let manifest = kv::render([
        ("variant", variant.to_string()),
        ("widths", model.backbone.widths_string()),
        ("convs_per_stage", model.backbone.convs_per_stage.to_string()),
        ("fc_width", model.backbone.fc_width.to_string()),
        ("num_classes", model.num_classes.to_string()),
        ("seed", model.seed.to_string()),
    ]);
    zip.start_file(MANIFEST, opts).map_err(zip_err)?;
    zip.write_all(manifest.as_bytes()).map_err(|e| Error::io(path, e))?;

    for (name, tensor) in &model.params {
        zip.start_file(format!("params/{name}.fcnt"), opts).map_err(zip_err)?;
        let mut buf = Vec::new();
        write_tensor(tensor, &mut buf).map_err(|e| Error::io(path, e))?;
        zip.write_all(&buf).map_err(|e| Error::io(path, e))?;
    }
    zip.finish().map_err(zip_err)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelGraph> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut zip = ZipArchive::new(file).map_err(zip_err)?;

    let mut text = String::new();
    zip.by_name(MANIFEST)
        .map_err(zip_err)?
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path, e))?;
    let m = kv::parse(&text, "checkpoint manifest")?;
    let what = "checkpoint manifest";
    let variant: Variant = kv::require(&m, "variant", what)?.parse()?;
    let backbone = BackboneSpec {
        widths: BackboneSpec::parse_widths(kv::require(&m, "widths", what)?)?,
        convs_per_stage: kv::parse_value(kv::require(&m, "convs_per_stage", what)?, "convs_per_stage", what)?,
        fc_width: kv::parse_value(kv::require(&m, "fc_width", what)?, "fc_width", what)?,
    };
    let num_classes = kv::parse_value(kv::require(&m, "num_classes", what)?, "num_classes", what)?;
    let seed = kv::parse_value(kv::require(&m, "seed", what)?, "seed", what)?;

    let mut model = build_model(variant, &backbone, num_classes, seed)?;
    let names: Vec<String> = model.params.keys().cloned().collect();
    for name in names {
        let mut blob = Vec::new();
        zip.by_name(&format!("params/{name}.fcnt"))
            .map_err(zip_err)?
            .read_to_end(&mut blob)
            .map_err(|e| Error::io(path, e))?;
        let tensor = read_tensor(&blob[..])?;
        let slot = model.params.get_mut(&name).expect("name taken from the same map");
        if slot.shape() != tensor.shape() {
            return Err(Error::format(
                "checkpoint",
                format!("parameter `{name}` has shape {:?}, expected {:?}", tensor.shape(), slot.shape()),
            ));
        }
        *slot = tensor;
    }
    Ok(model)
}
