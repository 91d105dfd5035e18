//! Self-describing binary index persistence. Little-endian throughout;
//! `load(save(index))` reproduces the index bit-exactly (re-saving yields
//! identical bytes).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{FlashError, Result};
use crate::index::{FlashIndex, IndexConfig, Reservoir};
use crate::doph::HashParams;

const MAGIC: &[u8; 4] = b"FLIX";
const VERSION: u32 = 1;

fn w32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn r32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn r64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn save<W: Write>(index: &FlashIndex, mut w: W) -> Result<()> {
    let (config, tables, local_next, pool, count) = index.snapshot_parts();
    w.write_all(MAGIC)?;
    w32(&mut w, VERSION)?;
    w32(&mut w, config.hash.k)?;
    w32(&mut w, config.hash.l)?;
    w32(&mut w, config.hash.range_bits)?;
    w64(&mut w, config.hash.seed)?;
    w32(&mut w, config.reservoir_size)?;
    w64(&mut w, config.fraction.to_bits())?;
    w64(&mut w, count)?;
    w64(&mut w, tables.len() as u64)?;
    for cell in tables {
        w32(&mut w, cell)?;
    }
    for next in local_next {
        w32(&mut w, next)?;
    }
    w64(&mut w, pool.len() as u64)?;
    for r in pool {
        w64(&mut w, r.counter())?;
        w32(&mut w, r.occupied() as u32)?;
        for &id in r.slots() {
            w32(&mut w, id)?;
        }
    }
    Ok(())
}

pub fn load<R: Read>(mut r: R) -> Result<FlashIndex> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FlashError::Format("bad magic; not an index file".into()));
    }
    let version = r32(&mut r)?;
    if version != VERSION {
        return Err(FlashError::Format(format!(
            "unsupported index format version {version}"
        )));
    }
    let k = r32(&mut r)?;
    let l = r32(&mut r)?;
    let range_bits = r32(&mut r)?;
    let seed = r64(&mut r)?;
    let reservoir_size = r32(&mut r)?;
    let fraction = f64::from_bits(r64(&mut r)?);
    let hash = HashParams::new(k, l, range_bits, seed)?;
    let config = IndexConfig::new(hash, reservoir_size, fraction)?;
    let count = r64(&mut r)?;
    let cells = r64(&mut r)? as usize;
    if cells != l as usize * config.hash.table_range() {
        return Err(FlashError::Format("table cell count mismatch".into()));
    }
    let mut tables = Vec::with_capacity(cells);
    for _ in 0..cells {
        tables.push(r32(&mut r)?);
    }
    let mut local_next = Vec::with_capacity(l as usize);
    for _ in 0..l {
        local_next.push(r32(&mut r)?);
    }
    let pool_len = r64(&mut r)? as usize;
    let mut pool = Vec::with_capacity(pool_len);
    for _ in 0..pool_len {
        let counter = r64(&mut r)?;
        let occupied = r32(&mut r)? as usize;
        if occupied > reservoir_size as usize {
            return Err(FlashError::Format("reservoir overflows its capacity".into()));
        }
        let mut slots = Vec::with_capacity(occupied);
        for _ in 0..occupied {
            slots.push(r32(&mut r)?);
        }
        pool.push(Reservoir::from_parts(slots, counter));
    }
    FlashIndex::from_parts(config, tables, local_next, pool, count)
}

pub fn save_to_path<P: AsRef<Path>>(index: &FlashIndex, path: P) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut buf = std::io::BufWriter::new(file);
    save(index, &mut buf)?;
    buf.flush()?;
    Ok(())
}

pub fn load_from_path<P: AsRef<Path>>(path: P) -> Result<FlashIndex> {
    let file = std::fs::File::open(path)?;
    load(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthParams};

    #[test]
    fn round_trip_is_bit_exact() {
        let data = generate(&SynthParams {
            n: 300,
            dimension: 20_000,
            nnz: 15,
            clusters: 6,
            overlap: 0.5,
            seed: 21,
        })
        .unwrap();
        let config = IndexConfig::new(HashParams::new(2, 8, 9, 22).unwrap(), 8, 0.5).unwrap();
        let index = FlashIndex::build(&data, config, 2).unwrap();
        let mut bytes = Vec::new();
        save(&index, &mut bytes).unwrap();
        let loaded = load(bytes.as_slice()).unwrap();
        let mut bytes2 = Vec::new();
        save(&loaded, &mut bytes2).unwrap();
        assert_eq!(bytes, bytes2);
        assert_eq!(index.len(), loaded.len());
    }

    #[test]
    fn rejects_garbage() {
        assert!(load(&b"NOPE"[..]).is_err());
        assert!(load(&b"FLIX\x09\x00\x00\x00"[..]).is_err());
    }
}
