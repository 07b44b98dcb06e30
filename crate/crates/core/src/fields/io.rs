//! Field snapshots: a flat binary layout and a JSON form for small grids.
//!
//! Binary layout (little endian): header u32 rank, u32 active_dims, u32 n;
//! payload: node-major, row-major 64-bit reals.

use std::io::{Read, Write};

use crate::error::{Result, SpinError};
use crate::fields::GridField;
use crate::tensor::MultiTensor;

pub fn write_binary<W: Write>(field: &GridField, mut w: W) -> Result<()> {
    w.write_all(&(field.rank() as u32).to_le_bytes())?;
    w.write_all(&(field.active_dims() as u32).to_le_bytes())?;
    w.write_all(&(field.n() as u32).to_le_bytes())?;
    for node in field.nodes() {
        for v in node.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<GridField> {
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let rank = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf)?;
    let active_dims = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf)?;
    let n = u32::from_le_bytes(u32buf) as usize;
    if rank > crate::tensor::MAX_RANK {
        return Err(SpinError::RankOverflow(rank));
    }
    let count = n
        .checked_pow(active_dims as u32)
        .ok_or_else(|| SpinError::InvalidArgument("grid size overflow".into()))?;
    let comp = crate::algebra::component_count(rank);
    let mut values = Vec::with_capacity(count);
    let mut f64buf = [0u8; 8];
    for _ in 0..count {
        let mut data = Vec::with_capacity(comp);
        for _ in 0..comp {
            r.read_exact(&mut f64buf)?;
            data.push(f64::from_le_bytes(f64buf));
        }
        values.push(MultiTensor::from_data(rank, data)?);
    }
    GridField::from_values(active_dims, n, values)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct JsonField {
    rank: usize,
    active_dims: usize,
    n: usize,
    values: Vec<Vec<f64>>,
}

/// JSON form, intended for small grids only.
pub fn to_json(field: &GridField) -> Result<String> {
    let jf = JsonField {
        rank: field.rank(),
        active_dims: field.active_dims(),
        n: field.n(),
        values: field.nodes().iter().map(|t| t.data().to_vec()).collect(),
    };
    Ok(serde_json::to_string(&jf)?)
}

pub fn from_json(s: &str) -> Result<GridField> {
    let jf: JsonField = serde_json::from_str(s)?;
    let values = jf
        .values
        .into_iter()
        .map(|d| MultiTensor::from_data(jf.rank, d))
        .collect::<Result<Vec<_>>>()?;
    GridField::from_values(jf.active_dims, jf.n, values)
}
