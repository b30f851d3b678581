//! Binary mesh files and CSV export of assembled outputs.
//!
//! Mesh layout (little-endian): `"AFM1"`, `u64` element count, `u64` point
//! count, connectivity as `num_elements * 4` `u32`, then `coord` and `veloc`
//! as `3 * num_points` `f64` each, dimension-major.

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use super::{GlobalOutputs, Mesh, MeshError, NODES_PER_ELEM, NUM_DIMS};
use crate::scalar::Real;

const MAGIC: &[u8; 4] = b"AFM1";
const HEADER_LEN: u64 = 4 + 8 + 8;

pub const OUTPUTS_CSV_HEADER: &str = "point,rhsid_x,rhsid_y,rhsid_z,dt_rho,mass_rho";

pub fn encode_mesh<T: Real>(mesh: &Mesh<T>) -> Vec<u8> {
    let ne = mesh.num_elements();
    let np = mesh.num_points();
    let mut buf = Vec::with_capacity(HEADER_LEN as usize + ne * 16 + np * 48);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(ne as u64).to_le_bytes());
    buf.extend_from_slice(&(np as u64).to_le_bytes());
    for nodes in mesh.lnods() {
        for n in nodes {
            buf.extend_from_slice(&n.to_le_bytes());
        }
    }
    for field in [mesh.coord(), mesh.veloc()] {
        for dim in field.iter() {
            for v in dim {
                buf.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.bytes[self.pos..self.pos + N].try_into().expect("length checked");
        self.pos += N;
        out
    }
}

pub fn decode_mesh<T: Real>(bytes: &[u8]) -> Result<Mesh<T>, MeshError> {
    let actual = bytes.len() as u64;
    if actual < 4 {
        return Err(MeshError::Truncated { expected: HEADER_LEN, actual });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(MeshError::BadMagic(magic));
    }
    if actual < HEADER_LEN {
        return Err(MeshError::Truncated { expected: HEADER_LEN, actual });
    }
    let mut r = Reader { bytes, pos: 4 };
    let ne = u64::from_le_bytes(r.take());
    let np = u64::from_le_bytes(r.take());
    let expected = ne
        .checked_mul(16)
        .and_then(|l| np.checked_mul(48).and_then(|f| l.checked_add(f)))
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or(MeshError::Truncated { expected: u64::MAX, actual })?;
    if actual < expected {
        return Err(MeshError::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(MeshError::TrailingBytes(actual - expected));
    }
    let (ne, np) = (ne as usize, np as usize);
    let mut lnods = Vec::with_capacity(ne);
    for _ in 0..ne {
        let mut nodes = [0u32; NODES_PER_ELEM];
        for n in nodes.iter_mut() {
            *n = u32::from_le_bytes(r.take());
        }
        lnods.push(nodes);
    }
    let mut read_field = || -> [Vec<T>; NUM_DIMS] {
        std::array::from_fn(|_| (0..np).map(|_| T::lit(f64::from_le_bytes(r.take()))).collect())
    };
    let coord = read_field();
    let veloc = read_field();
    Mesh::new(lnods, coord, veloc)
}

pub fn save_mesh<T: Real>(mesh: &Mesh<T>, path: impl AsRef<Path>) -> Result<(), MeshError> {
    fs::write(path, encode_mesh(mesh))?;
    Ok(())
}

pub fn load_mesh<T: Real>(path: impl AsRef<Path>) -> Result<Mesh<T>, MeshError> {
    decode_mesh(&fs::read(path)?)
}

/// Writes one row per point. Values use the shortest round-trip decimal form.
pub fn write_outputs_csv<T: Real, W: Write>(mut w: W, outputs: &GlobalOutputs<T>) -> std::io::Result<()> {
    writeln!(w, "{OUTPUTS_CSV_HEADER}")?;
    for p in 0..outputs.num_points() {
        writeln!(
            w,
            "{p},{},{},{},{},{}",
            outputs.rhsid[0][p].as_f64(),
            outputs.rhsid[1][p].as_f64(),
            outputs.rhsid[2][p].as_f64(),
            outputs.dt_rho_nsi[p].as_f64(),
            outputs.mass_rho_nsi[p].as_f64()
        )?;
    }
    Ok(())
}

pub fn read_outputs_csv<R: BufRead>(r: R) -> Result<GlobalOutputs<f64>, MeshError> {
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == OUTPUTS_CSV_HEADER => {}
        Some(Ok(h)) => return Err(MeshError::Csv(format!("unexpected header {h:?}"))),
        Some(Err(e)) => return Err(e.into()),
        None => return Err(MeshError::Csv("empty file".into())),
    }
    let mut cols: [Vec<f64>; 5] = Default::default();
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(MeshError::Csv(format!("row {row}: expected 6 fields, found {}", fields.len())));
        }
        if fields[0].parse::<usize>().ok() != Some(row) {
            return Err(MeshError::Csv(format!("row {row}: point index {:?} out of sequence", fields[0])));
        }
        for (c, f) in cols.iter_mut().zip(&fields[1..]) {
            c.push(f.parse().map_err(|e| MeshError::Csv(format!("row {row}: {e}")))?);
        }
    }
    let [x, y, z, dt, mass] = cols;
    Ok(GlobalOutputs { rhsid: [x, y, z], dt_rho_nsi: dt, mass_rho_nsi: mass })
}
