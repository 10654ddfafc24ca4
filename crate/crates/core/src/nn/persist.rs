//! `"HQNN" u32:version u8:frozen u32:layers`, then per layer
//! `u32:inputs u32:outputs u8:activation` followed by the row-major weights
//! and the bias as little-endian f64.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Activation, Dense, FeedForwardNet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HQNN";
const VERSION: u32 = 1;

pub fn save_net<W: Write>(net: &FeedForwardNet, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u8(net.frozen as u8)?;
    w.write_u32::<LittleEndian>(net.layers.len() as u32)?;
    for l in &net.layers {
        w.write_u32::<LittleEndian>(l.inputs as u32)?;
        w.write_u32::<LittleEndian>(l.outputs as u32)?;
        w.write_u8(match l.activation {
            Activation::Relu => 0,
            Activation::Identity => 1,
        })?;
        for x in l.weights.iter().chain(&l.bias) {
            w.write_f64::<LittleEndian>(*x)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_net<R: Read>(mut r: R) -> Result<FeedForwardNet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("not a model file"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported model version {version}")));
    }
    let frozen = r.read_u8()? != 0;
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let inputs = r.read_u32::<LittleEndian>()? as usize;
        let outputs = r.read_u32::<LittleEndian>()? as usize;
        let activation = match r.read_u8()? {
            0 => Activation::Relu,
            1 => Activation::Identity,
            a => return Err(Error::format(format!("unknown activation tag {a}"))),
        };
        let mut weights = vec![0.0; inputs * outputs];
        r.read_f64_into::<LittleEndian>(&mut weights)?;
        let mut bias = vec![0.0; outputs];
        r.read_f64_into::<LittleEndian>(&mut bias)?;
        layers.push(Dense {
            inputs,
            outputs,
            weights,
            bias,
            activation,
        });
    }
    let mut net = FeedForwardNet::from_layers(layers)?;
    net.frozen = frozen;
    Ok(net)
}
