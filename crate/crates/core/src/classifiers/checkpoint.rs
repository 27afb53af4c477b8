use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{ClassifierError, FusionModel, FusionModelConfig, TrainConfig, TrainHistory};
use crate::nn::Module;

const MAGIC: &[u8; 8] = b"TRIAGECK";
const VERSION: u32 = 1;

/// Everything needed to rebuild a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: FusionModelConfig,
    pub train: TrainConfig,
    pub history: TrainHistory,
    pub param_shapes: Vec<(String, usize, usize)>,
}

/// Magic, version, JSON header length and header, then every parameter as
/// little-endian f64 in [`Module::params`] order.
pub fn save_checkpoint(
    path: &Path,
    model: &FusionModel,
    train: &TrainConfig,
    history: &TrainHistory,
) -> Result<(), ClassifierError> {
    let header = Checkpoint {
        model: model.config.clone(),
        train: train.clone(),
        history: history.clone(),
        param_shapes: model.param_shapes(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ClassifierError::Checkpoint(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u64::<LittleEndian>(json.len() as u64)?;
    w.write_all(&json)?;
    for v in model.flat_params() {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(FusionModel, Checkpoint), ClassifierError> {
    let bad = |m: &str| ClassifierError::Checkpoint(format!("{}: {m}", path.display()));
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    if r.read_u32::<LittleEndian>()? != VERSION {
        return Err(bad("unsupported version"));
    }
    let mut json = vec![0u8; r.read_u64::<LittleEndian>()? as usize];
    r.read_exact(&mut json)?;
    let header: Checkpoint = serde_json::from_slice(&json).map_err(|e| bad(&e.to_string()))?;
    // Initial values are overwritten; the generator only fixes the layout.
    let mut model = FusionModel::new(header.model.clone(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
    if model.param_shapes() != header.param_shapes {
        return Err(bad("parameter layout does not match the stored config"));
    }
    let values = (0..model.num_params())
        .map(|_| r.read_f64::<LittleEndian>())
        .collect::<Result<Vec<_>, _>>()?;
    if r.read(&mut [0u8])? != 0 {
        return Err(bad("trailing bytes"));
    }
    model.load_flat(&values)?;
    Ok((model, header))
}
