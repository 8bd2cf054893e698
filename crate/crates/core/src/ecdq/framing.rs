//! On-disk framing for coded bitstreams.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ECDQ"            4-byte magic
//! u32 steps         number of time steps T
//! u32 sensors       number of sensors M
//! T*M frames        row-major in (t, sensor): u32 bit length, then ceil(len/8) bytes
//! ```
//!
//! A zero bit length marks a sensor that sent nothing at that step.

use std::io::{Read, Write};

use super::bits::Codeword;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ECDQ";

/// `frames[t][i]` is sensor i's codeword at step t, if any.
pub fn write_bitstream<W: Write>(mut out: W, frames: &[Vec<Option<Codeword>>]) -> Result<()> {
    let sensors = frames.first().map_or(0, Vec::len);
    if frames.iter().any(|row| row.len() != sensors) {
        return Err(Error::InvalidArgument("every step must list the same number of sensors".into()));
    }
    out.write_all(MAGIC)?;
    out.write_all(&u32_of(frames.len())?.to_le_bytes())?;
    out.write_all(&u32_of(sensors)?.to_le_bytes())?;
    for row in frames {
        for word in row {
            match word {
                Some(cw) => {
                    out.write_all(&u32_of(cw.len())?.to_le_bytes())?;
                    out.write_all(cw.bytes())?;
                }
                None => out.write_all(&0u32.to_le_bytes())?,
            }
        }
    }
    Ok(())
}

pub fn read_bitstream<R: Read>(mut input: R) -> Result<Vec<Vec<Option<Codeword>>>> {
    let mut magic = [0u8; 4];
    read_exact(&mut input, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Decode("missing ECDQ magic".into()));
    }
    let steps = read_u32(&mut input)? as usize;
    let sensors = read_u32(&mut input)? as usize;
    let mut frames = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut row = Vec::with_capacity(sensors);
        for _ in 0..sensors {
            let len = read_u32(&mut input)? as usize;
            if len == 0 {
                row.push(None);
                continue;
            }
            let mut bytes = vec![0u8; len.div_ceil(8)];
            read_exact(&mut input, &mut bytes)?;
            row.push(Some(Codeword::from_bytes(bytes, len)?));
        }
        frames.push(row);
    }
    Ok(frames)
}

fn u32_of(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit the u32 frame header")))
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Decode("bitstream truncated".into()),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b)?;
    Ok(u32::from_le_bytes(b))
}
