//! Bundle directory layout:
//! `manifest.json` (config, config hash, shapes, normalizers),
//! `scalar_encoders.json`, and one `.hqnn` file per network.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ColumnModel, EncoderBundle, EncoderConfig, PredictorTarget, ScalarEncoder};
use crate::error::{Error, Result};
use crate::nn::{load_net, save_net, FeedForwardNet, Standardizer};

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config_hash: String,
    config: EncoderConfig,
    vector_dims: Vec<usize>,
    scalar_names: Vec<String>,
    targets: Vec<PredictorTarget>,
    input_norms: Vec<Standardizer>,
    predictors_trained: bool,
    autoencoders: Vec<bool>,
}

fn net_path(dir: &Path, column: usize, name: &str) -> std::path::PathBuf {
    dir.join(format!("col{column}_{name}.hqnn"))
}

fn write_net(net: &FeedForwardNet, path: &Path) -> Result<()> {
    save_net(net, BufWriter::new(File::create(path)?))
}

fn read_net(path: &Path) -> Result<FeedForwardNet> {
    load_net(BufReader::new(File::open(path)?))
}

pub fn save_bundle(bundle: &EncoderBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config_hash: bundle.config.hash(),
        config: bundle.config.clone(),
        vector_dims: bundle.vector_dims.clone(),
        scalar_names: bundle.scalar_names.clone(),
        targets: bundle.targets.clone(),
        input_norms: bundle.columns.iter().map(|c| c.input_norm.clone()).collect(),
        predictors_trained: bundle.predictors_trained,
        autoencoders: bundle.columns.iter().map(|c| c.autoencoder.is_some()).collect(),
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("manifest.json"))?), &manifest)?;
    serde_json::to_writer_pretty(
        BufWriter::new(File::create(dir.join("scalar_encoders.json"))?),
        &bundle.scalar_encoders,
    )?;
    for (i, c) in bundle.columns.iter().enumerate() {
        for (j, net) in c.frozen.iter().enumerate() {
            write_net(net, &net_path(dir, i, &format!("frozen{j}")))?;
        }
        write_net(&c.trainable, &net_path(dir, i, "trainable"))?;
        if let Some(ae) = &c.autoencoder {
            write_net(ae, &net_path(dir, i, "autoencoder"))?;
        }
    }
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<EncoderBundle> {
    let manifest: Manifest = serde_json::from_reader(BufReader::new(File::open(dir.join("manifest.json"))?))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::format(format!(
            "unsupported encoder bundle version {}",
            manifest.format_version
        )));
    }
    if manifest.config.hash() != manifest.config_hash {
        return Err(Error::format("encoder manifest config hash mismatch"));
    }
    let scalar_encoders: Vec<ScalarEncoder> =
        serde_json::from_reader(BufReader::new(File::open(dir.join("scalar_encoders.json"))?))?;
    let n = manifest.vector_dims.len();
    if manifest.input_norms.len() != n
        || manifest.autoencoders.len() != n
        || scalar_encoders.len() != manifest.scalar_names.len()
        || manifest.targets.len() != manifest.scalar_names.len()
    {
        return Err(Error::format("encoder manifest shape mismatch"));
    }
    let mut columns = Vec::with_capacity(n);
    for (i, input_norm) in manifest.input_norms.into_iter().enumerate() {
        let frozen = (0..manifest.targets.len())
            .map(|j| read_net(&net_path(dir, i, &format!("frozen{j}"))))
            .collect::<Result<Vec<_>>>()?;
        if frozen.iter().any(|f| f.input_size() != manifest.vector_dims[i]) {
            return Err(Error::format(format!("frozen predictor input width mismatch for column {i}")));
        }
        let trainable = read_net(&net_path(dir, i, "trainable"))?;
        let autoencoder = if manifest.autoencoders[i] {
            Some(read_net(&net_path(dir, i, "autoencoder"))?)
        } else {
            None
        };
        columns.push(ColumnModel {
            input_norm,
            frozen,
            trainable,
            autoencoder,
        });
    }
    let bundle = EncoderBundle {
        config: manifest.config,
        vector_dims: manifest.vector_dims,
        scalar_names: manifest.scalar_names,
        scalar_encoders,
        targets: manifest.targets,
        columns,
        predictors_trained: manifest.predictors_trained,
    };
    for i in 0..n {
        if let Some(ae) = &bundle.columns[i].autoencoder {
            let w = bundle.vector_width(i) + bundle.scalar_width();
            if ae.input_size() != w || ae.output_size() != w {
                return Err(Error::LayoutMismatch(format!(
                    "autoencoder {i} expects width {}, encoder produces {w}",
                    ae.input_size()
                )));
            }
        }
    }
    Ok(bundle)
}
