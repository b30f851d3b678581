use std::io::{Read, Write};

use flowforge_core::streaming::AccumulationMode;
use serde::{Deserialize, Serialize};

use crate::args::Mode;

pub const BENCH_HEADER: &str = "benchmark,mode,engines,chunk_size,accum,offload,repeats,mean_seconds,gflops,max_rel_dev";

/// One benchmark CSV row. Columns that do not apply to a mode are empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub benchmark: String,
    pub mode: Mode,
    pub engines: Option<usize>,
    pub chunk_size: Option<usize>,
    pub accum: Option<AccumulationMode>,
    pub offload: bool,
    pub repeats: usize,
    pub mean_seconds: f64,
    pub gflops: f64,
    pub max_rel_dev: f64,
}

pub fn write_rows<W: Write>(w: W, rows: &[BenchRow]) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wr.write_record(BENCH_HEADER.split(','))?;
    }
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(r: R) -> csv::Result<Vec<BenchRow>> {
    csv::Reader::from_reader(r).deserialize().collect()
}
