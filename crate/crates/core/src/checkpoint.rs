//! Checkpoint directories.
//!
//! ```text
//! <dir>/backbone/backbone.json  <dir>/backbone/NNNN.ftr ...
//! <dir>/peft/peft.json          <dir>/peft/NNNN.ftr ...
//! <dir>/head/head.json          <dir>/head/NNNN.ftr ...
//! ```
//!
//! Each manifest records the component config, the tensor file of every
//! named parameter, and the store checksum, which is verified on load.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::head::{HeadConfig, HeadState};
use crate::model::Model;
use crate::params::ParamStore;
use crate::peft::{PeftConfig, PeftState};
use crate::tensor::{read_tensor, write_tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    file: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest<C> {
    config: C,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    geometry: Option<BackboneConfig>,
    #[serde(default)]
    frozen: bool,
    checksum: String,
    tensors: Vec<TensorEntry>,
}

fn write_component<C: Serialize>(
    dir: &Path,
    manifest_name: &str,
    config: &C,
    geometry: Option<BackboneConfig>,
    frozen: bool,
    store: &ParamStore,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = Vec::with_capacity(store.len());
    for (i, p) in store.iter().enumerate() {
        let file = format!("{i:04}.ftr");
        write_tensor(&dir.join(&file), &p.tensor)?;
        tensors.push(TensorEntry {
            name: p.name.clone(),
            file,
            shape: p.tensor.shape().to_vec(),
        });
    }
    let manifest = Manifest {
        config,
        geometry,
        frozen,
        checksum: store.checksum(),
        tensors,
    };
    let path = dir.join(manifest_name);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

fn read_manifest<C: DeserializeOwned>(dir: &Path, manifest_name: &str) -> Result<Manifest<C>> {
    let path = dir.join(manifest_name);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Overwrites `store` values from the manifest's tensors and checks the result.
fn load_into<C>(dir: &Path, manifest: &Manifest<C>, store: &mut ParamStore) -> Result<()> {
    let mut loaded = ParamStore::new();
    for t in &manifest.tensors {
        let tensor = read_tensor(&dir.join(&t.file))?;
        if tensor.shape() != t.shape.as_slice() {
            return Err(Error::Data(format!("{}: shape differs from manifest", t.file)));
        }
        loaded.add(t.name.clone(), tensor);
    }
    if loaded.len() != store.len() {
        return Err(Error::Data(format!(
            "{}: {} tensors, expected {}",
            dir.display(),
            loaded.len(),
            store.len()
        )));
    }
    store.load_values_from(&loaded)?;
    if store.checksum() != manifest.checksum {
        return Err(Error::Data(format!("{}: checksum mismatch", dir.display())));
    }
    Ok(())
}

pub fn save_backbone(dir: &Path, backbone: &Backbone) -> Result<()> {
    write_component(
        dir,
        "backbone.json",
        backbone.config(),
        None,
        backbone.is_frozen(),
        backbone.params(),
    )
}

pub fn load_backbone(dir: &Path) -> Result<Backbone> {
    let m: Manifest<BackboneConfig> = read_manifest(dir, "backbone.json")?;
    let mut bb = Backbone::build(m.config, 0)?;
    load_into(dir, &m, bb.params_mut())?;
    if m.frozen {
        bb.freeze();
    }
    Ok(bb)
}

pub fn save_peft(dir: &Path, peft: &PeftState) -> Result<()> {
    write_component(
        dir,
        "peft.json",
        peft.config(),
        Some(*peft.geometry()),
        false,
        peft.params(),
    )
}

pub fn load_peft(dir: &Path) -> Result<PeftState> {
    let m: Manifest<PeftConfig> = read_manifest(dir, "peft.json")?;
    let geometry = m
        .geometry
        .ok_or_else(|| Error::Data(format!("{}: peft manifest lacks geometry", dir.display())))?;
    let mut peft = PeftState::new(&geometry, &m.config, 0)?;
    load_into(dir, &m, peft.params_mut())?;
    Ok(peft)
}

pub fn save_head(dir: &Path, head: &HeadState) -> Result<()> {
    write_component(dir, "head.json", head.config(), None, false, head.params())
}

pub fn load_head(dir: &Path) -> Result<HeadState> {
    let m: Manifest<HeadConfig> = read_manifest(dir, "head.json")?;
    let mut head = HeadState::new(m.config, 0)?;
    load_into(dir, &m, head.params_mut())?;
    Ok(head)
}

pub fn save_model(dir: &Path, model: &Model) -> Result<()> {
    save_backbone(&dir.join("backbone"), &model.backbone)?;
    save_peft(&dir.join("peft"), &model.peft)?;
    save_head(&dir.join("head"), &model.head)
}

pub fn load_model(dir: &Path) -> Result<Model> {
    Ok(Model::from_parts(
        load_backbone(&dir.join("backbone"))?,
        load_peft(&dir.join("peft"))?,
        load_head(&dir.join("head"))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::peft::PeftKind;
    use crate::tensor::Tensor;

    #[test]
    fn round_trip_preserves_predictions_bit_for_bit() {
        let bb = BackboneConfig::toy();
        for kind in PeftKind::ALL {
            let mut model = Model::new(
                bb,
                PeftConfig::new(kind),
                HeadConfig::for_backbone(&bb).with_conv_dim(8),
                3,
            )
            .unwrap();
            for p in model.peft.params_mut().iter_mut() {
                p.tensor
                    .data_mut()
                    .iter_mut()
                    .enumerate()
                    .for_each(|(i, v)| *v += 0.01 * i as f64);
            }
            let dir = tempfile::tempdir().unwrap();
            save_model(dir.path(), &model).unwrap();
            let back = load_model(dir.path()).unwrap();
            assert_eq!(back.backbone.checksum(), model.backbone.checksum());
            assert_eq!(back.peft.params().checksum(), model.peft.params().checksum());
            assert_eq!(back.head.params().checksum(), model.head.params().checksum());
            assert!(back.backbone.is_frozen());
            let x = Tensor::full(&[5, 16], 0.3);
            let a: Vec<u64> = model.predict_logits(&x).unwrap().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.predict_logits(&x).unwrap().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "{kind}");
        }
    }

    #[test]
    fn tampered_tensor_is_detected() {
        let bb = BackboneConfig::toy();
        let model = Model::new(
            bb,
            PeftConfig::default(),
            HeadConfig::for_backbone(&bb).with_conv_dim(8),
            0,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model(dir.path(), &model).unwrap();
        let f = dir.path().join("head").join("0000.ftr");
        let mut t = read_tensor(&f).unwrap();
        t.data_mut()[0] = 1.0;
        write_tensor(&f, &t).unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::Data(_))));
    }
}
