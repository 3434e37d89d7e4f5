//! Flat binary checkpoint of a [`CellParams`].
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! offset  size  field
//! 0       6     magic "SLSTM1"
//! 6       1     variant tag (0 = LSTM, 1..=5 = LSTM1..LSTM5)
//! 7       4     input_dim  (u32)
//! 11      4     hidden_dim (u32)
//! 15      8·N   parameters as f64
//! ```
//!
//! Parameters follow the [`ParamSet`] order of `CellParams`: input gate,
//! forget gate, output gate (each `W, U, u, b`, absent terms skipped), then
//! `W_c, U_c, b_c`. Matrices are row-major. `N` is fully determined by the
//! header, and trailing bytes are rejected.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::cells::{CellParams, Variant};
use crate::error::{Error, Result};
use crate::params::ParamSet;

pub const MAGIC: &[u8; 6] = b"SLSTM1";

pub fn write_cell<W: Write>(params: &CellParams, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[params.variant.tag()])?;
    w.write_all(&dim_u32(params.input_dim)?.to_le_bytes())?;
    w.write_all(&dim_u32(params.hidden_dim)?.to_le_bytes())?;
    for s in params.slices() {
        for v in s {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_cell<R: Read>(mut r: R) -> Result<CellParams> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Snapshot("missing header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Snapshot(format!("bad magic {magic:?}")));
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)
        .map_err(|_| Error::Snapshot("missing variant tag".into()))?;
    let variant = Variant::from_tag(tag[0])
        .ok_or_else(|| Error::Snapshot(format!("unknown variant tag {}", tag[0])))?;
    let input_dim = read_u32(&mut r)? as usize;
    let hidden_dim = read_u32(&mut r)? as usize;
    if input_dim == 0 || hidden_dim == 0 {
        return Err(Error::Snapshot("zero dimension in header".into()));
    }

    let mut params = CellParams::zeros(variant, input_dim, hidden_dim);
    let mut buf = [0u8; 8];
    for s in params.slices_mut() {
        for v in s.iter_mut() {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Snapshot("parameter payload truncated".into()))?;
            *v = f64::from_le_bytes(buf);
        }
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Snapshot("trailing bytes after payload".into()));
    }
    Ok(params)
}

pub fn save_cell(params: &CellParams, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_cell(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_cell(path: impl AsRef<Path>) -> Result<CellParams> {
    read_cell(BufReader::new(File::open(path)?))
}

fn dim_u32(d: usize) -> Result<u32> {
    u32::try_from(d).map_err(|_| Error::Snapshot(format!("dimension {d} does not fit in u32")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Snapshot("header truncated".into()))?;
    Ok(u32::from_le_bytes(b))
}
