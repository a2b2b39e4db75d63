//! Flat binary tensor layout: `b"PEMPT1"`, `u32` rank, `u64` dims, then
//! little-endian `f64` payload in row-major order.

use std::io::{Read, Write};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 6] = b"PEMPT1";

const MAX_RANK: u32 = 16;

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:?}")));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let rank = u32::from_le_bytes(u32buf);
    if rank > MAX_RANK {
        return Err(TensorError::Format(format!("rank {rank} too large")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut u64buf = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut u64buf)?;
        let d = usize::try_from(u64::from_le_bytes(u64buf))
            .map_err(|_| TensorError::Format("dimension overflows usize".into()))?;
        shape.push(d);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TensorError::Format("element count overflows".into()))?;
    let mut bytes = vec![
        0u8;
        numel
            .checked_mul(8)
            .ok_or_else(|| TensorError::Format("payload overflows".into()))?
    ];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Tensor::new(&shape, data).map_err(|e| TensorError::Format(e.to_string()))
}

impl Tensor {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 4 + 8 * self.rank() + 8 * self.numel());
        write_tensor(&mut out, self).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Tensor> {
        let t = read_tensor(&mut bytes)?;
        if !bytes.is_empty() {
            return Err(TensorError::Format(format!("{} trailing bytes", bytes.len())));
        }
        Ok(t)
    }
}
