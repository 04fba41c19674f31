//! Binary cache of the adjoint field.
//!
//! Layout (little endian): `ADJG`, format version `u32`, SHA-256 fingerprint
//! of the inputs (32 bytes), level count `u64`, vertex count `u64`, `dt`
//! as `f64`, then the nodal values level by level.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use stackelberg_traffic::dispersion::ScalarFieldSeries;
use stackelberg_traffic::scenario::Scenario;

const MAGIC: &[u8; 4] = b"ADJG";
const VERSION: u32 = 1;

/// Hash of everything the adjoint depends on: mesh, wind, `mu`, `kappa` and
/// the time grid. Road data and initial fields do not enter.
pub fn fingerprint(s: &Scenario) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in s.mesh.vertices() {
        h.update(v[0].to_le_bytes());
        h.update(v[1].to_le_bytes());
    }
    for t in s.mesh.triangles() {
        for &i in t {
            h.update((i as u64).to_le_bytes());
        }
    }
    h.update(serde_json::to_vec(&s.wind).expect("wind serializes"));
    h.update(s.pollution.mu.to_le_bytes());
    h.update(s.pollution.kappa.to_le_bytes());
    let grid = s.time_grid();
    h.update(grid.dt.to_le_bytes());
    h.update((grid.steps as u64).to_le_bytes());
    h.update((grid.substeps as u64).to_le_bytes());
    h.finalize().into()
}

pub fn write(path: &Path, key: &[u8; 32], g: &ScalarFieldSeries) -> std::io::Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(key)?;
    let nv = g.values.first().map_or(0, Vec::len);
    w.write_all(&(g.values.len() as u64).to_le_bytes())?;
    w.write_all(&(nv as u64).to_le_bytes())?;
    w.write_all(&g.dt.to_le_bytes())?;
    for level in &g.values {
        for v in level {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

/// Outcome of looking for a cached field.
pub enum Lookup {
    Hit(ScalarFieldSeries),
    Missing,
    Stale,
}

pub fn read(path: &Path, key: &[u8; 32]) -> std::io::Result<Lookup> {
    let file = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Lookup::Missing),
        Err(e) => return Err(e),
    };
    let mut r = BufReader::new(file);
    let mut head = [0u8; 4 + 4 + 32];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "not an adjoint cache"));
    }
    if u32::from_le_bytes(head[4..8].try_into().unwrap()) != VERSION || head[8..] != key[..] {
        return Ok(Lookup::Stale);
    }
    let levels = read_u64(&mut r)? as usize;
    let nv = read_u64(&mut r)? as usize;
    let dt = f64::from_le_bytes(read_8(&mut r)?);
    let mut values = Vec::with_capacity(levels);
    let mut buf = vec![0u8; 8 * nv];
    for _ in 0..levels {
        r.read_exact(&mut buf)?;
        values.push(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
    }
    Ok(Lookup::Hit(ScalarFieldSeries { dt, values }))
}

fn read_8(r: &mut impl Read) -> std::io::Result<[u8; 8]> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    read_8(r).map(u64::from_le_bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_stale_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.bin");
        let g = ScalarFieldSeries {
            dt: 0.25,
            values: vec![vec![1.0, -2.5, 3.0e-300], vec![0.0, f64::MIN_POSITIVE, 7.0]],
        };
        write(&path, &[7; 32], &g).unwrap();
        match read(&path, &[7; 32]).unwrap() {
            Lookup::Hit(back) => assert_eq!(back, g),
            _ => panic!("expected a hit"),
        }
        assert!(matches!(read(&path, &[8; 32]).unwrap(), Lookup::Stale));
        assert!(matches!(read(&dir.path().join("none"), &[7; 32]).unwrap(), Lookup::Missing));
    }

    #[test]
    fn foreign_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.bin");
        std::fs::write(&path, vec![0u8; 64]).unwrap();
        assert!(read(&path, &[0; 32]).is_err());
    }
}
