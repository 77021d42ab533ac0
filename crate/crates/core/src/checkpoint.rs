//! `PNETW01` weight checkpoints.
//!
//! Layout: 8-byte magic, `u64` LE length + JSON config, `u64` LE parameter count,
//! then per parameter (sorted by name) a `u64` LE name length, the UTF-8 name and
//! the tensor in `PTNSR01` form.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::PredNetConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PNETW01\n";

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_len(r: &mut impl Read, what: &str) -> Result<usize> {
    let n = read_u64(r)?;
    if n > (1 << 32) {
        return Err(Error::Format(format!("implausible {what} length {n}")));
    }
    Ok(n as usize)
}

pub fn write_checkpoint(model: &Model<f32>, out: &mut impl Write) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    let json = serde_json::to_vec(model.config())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let mut order: Vec<usize> = (0..model.params().len()).collect();
    order.sort_by(|&a, &b| model.param_names()[a].cmp(&model.param_names()[b]));
    out.write_all(&(order.len() as u64).to_le_bytes())?;
    for i in order {
        let name = model.param_names()[i].as_bytes();
        out.write_all(&(name.len() as u64).to_le_bytes())?;
        out.write_all(name)?;
        model.params()[i].write_to(out)?;
    }
    Ok(())
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<Model<f32>> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a PNETW01 checkpoint".into()));
    }
    let len = read_len(input, "config")?;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let config: PredNetConfig = serde_json::from_slice(&json)?;
    config.validate()?;
    let template = Model::<f32>::zeroed(config.clone())?;
    let count = read_len(input, "parameter count")?;
    if count != template.params().len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, config implies {}",
            template.params().len()
        )));
    }
    let mut params: Vec<Option<Tensor<f32>>> = vec![None; count];
    for _ in 0..count {
        let nlen = read_len(input, "name")?;
        let mut name = vec![0u8; nlen];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let id = template
            .param_id(&name)
            .ok_or_else(|| Error::Format(format!("unexpected parameter `{name}`")))?;
        params[id.0] = Some(Tensor::read_from(input)?);
    }
    let params = params
        .into_iter()
        .zip(template.param_names())
        .map(|(p, n)| p.ok_or_else(|| Error::Format(format!("missing parameter `{n}`"))))
        .collect::<Result<Vec<_>>>()?;
    Model::from_params(config, params)
}

pub fn save(model: &Model<f32>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model<f32>> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
