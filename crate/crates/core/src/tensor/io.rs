//! Little-endian binary tensor format.
//!
//! Layout: `b"PEFT"`, `u32` rank, `rank × u32` dims, then the row-major
//! `f64` payload. Feature files use the same layout with rank 2 (`T`, `dim`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"PEFT";

pub fn write_tensor_to<W: Write>(mut w: W, tensor: &Tensor) -> std::io::Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(tensor.rank() as u32).to_le_bytes())?;
    for &d in tensor.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in tensor.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_tensor_from<R: Read>(mut r: R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Data(format!("bad tensor magic {magic:?}")));
    }
    let rank = read_u32(&mut r)? as usize;
    if rank > 8 {
        return Err(Error::Data(format!("implausible tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(&mut r)? as usize);
    }
    let numel: usize = shape.iter().product();
    let mut bytes = vec![0u8; numel * 8];
    read_exact(&mut r, &mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(Error::Data("trailing bytes after tensor payload".into())),
        Err(e) => return Err(Error::Data(format!("tensor read failed: {e}"))),
    }
    Tensor::new(shape, data)
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_tensor_to(BufWriter::new(file), tensor).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tensor_from(BufReader::new(file)).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Data(format!("truncated tensor file: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}
