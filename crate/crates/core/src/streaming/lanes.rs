//! Wide-word lane packing of per-element inputs.
//!
//! Each 12-value variable is flattened node-major (`k = node * 3 + dim`) and
//! split across two banks: bank 0 holds values 0..6, bank 1 values 6..12,
//! each followed by two zero pad slots to fill an 8-slot line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::Serialize;

use crate::mesh::{ElementInput, Mesh, NODES_PER_ELEM, NUM_DIMS};
use crate::reference::NodalVec;
use crate::scalar::Real;

pub const LANE_SLOTS: usize = 8;
pub const VALUES_PER_BANK: usize = 6;
pub const LANE_BYTES: usize = LANE_SLOTS * 8;

pub type Lane<T> = [T; LANE_SLOTS];

/// Packed inputs of a contiguous element range.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedLanes<T> {
    pub elem_begin: usize,
    /// `elvel[bank][local element]`.
    pub elvel: [Vec<Lane<T>>; 2],
    pub elcod: [Vec<Lane<T>>; 2],
}

fn pack_var<T: Real>(var: &NodalVec<T>) -> [Lane<T>; 2] {
    let mut banks = [[T::zero(); LANE_SLOTS]; 2];
    for i in 0..NODES_PER_ELEM {
        for j in 0..NUM_DIMS {
            let k = i * NUM_DIMS + j;
            banks[k / VALUES_PER_BANK][k % VALUES_PER_BANK] = var[j][i];
        }
    }
    banks
}

fn unpack_var<T: Real>(bank0: &Lane<T>, bank1: &Lane<T>) -> NodalVec<T> {
    let mut var = [[T::zero(); NODES_PER_ELEM]; NUM_DIMS];
    for i in 0..NODES_PER_ELEM {
        for j in 0..NUM_DIMS {
            let k = i * NUM_DIMS + j;
            let bank = if k < VALUES_PER_BANK { bank0 } else { bank1 };
            var[j][i] = bank[k % VALUES_PER_BANK];
        }
    }
    var
}

impl<T: Real> PackedLanes<T> {
    pub fn len(&self) -> usize {
        self.elvel[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn elem_range(&self) -> Range<usize> {
        self.elem_begin..self.elem_begin + self.len()
    }

    /// Mutable access to every pad slot, for fuzzing.
    pub fn pads_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.elvel
            .iter_mut()
            .chain(self.elcod.iter_mut())
            .flat_map(|bank| bank.iter_mut())
            .flat_map(|lane| lane[VALUES_PER_BANK..].iter_mut())
    }
}

/// Gathers and packs elements `range` of `mesh`.
pub fn pack_chunk<T: Real>(mesh: &Mesh<T>, range: Range<usize>) -> PackedLanes<T> {
    let n = range.len();
    let mut p = PackedLanes {
        elem_begin: range.start,
        elvel: [Vec::with_capacity(n), Vec::with_capacity(n)],
        elcod: [Vec::with_capacity(n), Vec::with_capacity(n)],
    };
    for e in range {
        let input = mesh.gather_element(e);
        let [v0, v1] = pack_var(&input.elvel);
        let [c0, c1] = pack_var(&input.elcod);
        p.elvel[0].push(v0);
        p.elvel[1].push(v1);
        p.elcod[0].push(c0);
        p.elcod[1].push(c1);
    }
    p
}

/// Reconstructs element `local` of a packed chunk; pad slots are ignored.
pub fn unpack_element<T: Real>(packed: &PackedLanes<T>, local: usize) -> ElementInput<T> {
    ElementInput {
        elem_id: packed.elem_begin + local,
        elvel: unpack_var(&packed.elvel[0][local], &packed.elvel[1][local]),
        elcod: unpack_var(&packed.elcod[0][local], &packed.elcod[1][local]),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LaneDumpEntry {
    pub chunk_id: usize,
    pub elem_begin: usize,
    pub elem_end: usize,
    pub variable: &'static str,
    /// Byte offset of this variable's bank 0 in the binary file.
    pub offset: u64,
    /// Lanes per bank.
    pub lanes: usize,
}

/// Serializes lanes as little-endian `f64`: for each variable, bank 0 lanes
/// then bank 1 lanes, 64 bytes per lane.
pub fn lane_dump_bytes<T: Real>(packed: &PackedLanes<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(packed.len() * LANE_BYTES * 4);
    for var in [&packed.elvel, &packed.elcod] {
        for bank in var.iter() {
            for lane in bank {
                for v in lane {
                    out.extend_from_slice(&v.as_f64().to_le_bytes());
                }
            }
        }
    }
    out
}

/// Writes `<stem>.bin` and `<stem>.json` (manifest) into `dir`.
pub fn write_lane_dump<T: Real>(
    dir: impl AsRef<Path>,
    stem: &str,
    chunk_id: usize,
    packed: &PackedLanes<T>,
) -> std::io::Result<Vec<LaneDumpEntry>> {
    let dir = dir.as_ref();
    let mut bin = BufWriter::new(File::create(dir.join(format!("{stem}.bin")))?);
    bin.write_all(&lane_dump_bytes(packed))?;
    bin.flush()?;
    let var_bytes = (packed.len() * LANE_BYTES * 2) as u64;
    let entries: Vec<LaneDumpEntry> = ["elvel", "elcod"]
        .iter()
        .enumerate()
        .map(|(i, &variable)| LaneDumpEntry {
            chunk_id,
            elem_begin: packed.elem_begin,
            elem_end: packed.elem_begin + packed.len(),
            variable,
            offset: i as u64 * var_bytes,
            lanes: packed.len(),
        })
        .collect();
    let manifest = File::create(dir.join(format!("{stem}.json")))?;
    serde_json::to_writer_pretty(manifest, &entries)?;
    Ok(entries)
}
