//! Versioned binary index file:
//!
//! ```text
//! "HQGX" u32:version u8:metric u32:dim u32:m u32:ef_construction
//! f64:level_factor u64:seed u64:count u64:entry (u64::MAX when empty)
//! count × { u64:id u8:layers layers × { u32:degree degree × u32:node } }
//! count × dim × f32
//! ```
//! All integers and floats little-endian.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{BuildParams, GraphIndex};
use crate::error::{Error, Result};
use crate::store::Metric;

const MAGIC: &[u8; 4] = b"HQGX";
const VERSION: u32 = 1;

pub fn save_index<W: Write>(index: &GraphIndex, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u8(match index.metric {
        Metric::L2 => 0,
        Metric::InnerProduct => 1,
    })?;
    w.write_u32::<LittleEndian>(index.dim as u32)?;
    w.write_u32::<LittleEndian>(index.params.m as u32)?;
    w.write_u32::<LittleEndian>(index.params.ef_construction as u32)?;
    w.write_f64::<LittleEndian>(index.params.level_factor)?;
    w.write_u64::<LittleEndian>(index.params.seed)?;
    w.write_u64::<LittleEndian>(index.len() as u64)?;
    w.write_u64::<LittleEndian>(index.entry.map_or(u64::MAX, |e| e as u64))?;
    for (id, layers) in index.ids.iter().zip(&index.links) {
        w.write_u64::<LittleEndian>(*id)?;
        w.write_u8(layers.len() as u8)?;
        for list in layers {
            w.write_u32::<LittleEndian>(list.len() as u32)?;
            for &n in list {
                w.write_u32::<LittleEndian>(n)?;
            }
        }
    }
    for x in &index.data {
        w.write_f32::<LittleEndian>(*x)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads and validates an index, including layer-0 reachability.
pub fn load_index<R: Read>(mut r: R) -> Result<GraphIndex> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("not an index file"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported index version {version}")));
    }
    let metric = match r.read_u8()? {
        0 => Metric::L2,
        1 => Metric::InnerProduct,
        m => return Err(Error::format(format!("unknown metric tag {m}"))),
    };
    let dim = r.read_u32::<LittleEndian>()? as usize;
    let params = BuildParams {
        m: r.read_u32::<LittleEndian>()? as usize,
        ef_construction: r.read_u32::<LittleEndian>()? as usize,
        level_factor: r.read_f64::<LittleEndian>()?,
        seed: r.read_u64::<LittleEndian>()?,
    };
    let n = r.read_u64::<LittleEndian>()? as usize;
    let entry = match r.read_u64::<LittleEndian>()? {
        u64::MAX => None,
        e if (e as usize) < n => Some(e as u32),
        e => return Err(Error::format(format!("entry point {e} out of range"))),
    };
    let mut index = GraphIndex::new(dim, metric, params)?;
    index.entry = entry;
    let mut seen = std::collections::HashSet::with_capacity(n);
    for _ in 0..n {
        let id = r.read_u64::<LittleEndian>()?;
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id));
        }
        let layers = r.read_u8()? as usize;
        let mut links = Vec::with_capacity(layers);
        for _ in 0..layers {
            let deg = r.read_u32::<LittleEndian>()? as usize;
            if deg > 2 * params.m {
                return Err(Error::format("degree exceeds bound"));
            }
            let mut list = vec![0u32; deg];
            r.read_u32_into::<LittleEndian>(&mut list)?;
            links.push(list);
        }
        index.ids.push(id);
        index.links.push(links);
    }
    index.data = vec![0f32; n * dim];
    r.read_f32_into::<LittleEndian>(&mut index.data)?;
    index.check_invariants()?;
    Ok(index)
}
