//! Distribution dump files (`TSDD`): conditionals exported from an external
//! model, one record per context.
//!
//! Layout, little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `TSDD` |
//! | 2 | version (u16, currently 1) |
//! | 4 | vocab_size (u32) |
//! | 4 | record_count (u32) |
//! | 2 | flags (u16, reserved, 0) |
//!
//! followed by `record_count` records of `context_id: u32` and
//! `vocab_size` f32 probabilities.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::bytes::{put_f32, put_u16, put_u32, ByteReader};
use crate::dist::Dist;
use crate::error::{Error, Result};

pub const DUMP_MAGIC: [u8; 4] = *b"TSDD";
pub const DUMP_VERSION: u16 = 1;
pub const DUMP_HEADER_LEN: u64 = 16;
/// Stored probabilities must sum to one within this before renormalization.
pub const DUMP_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DumpHeader {
    pub version: u16,
    pub vocab_size: u32,
    pub record_count: u32,
    pub flags: u16,
}

impl DumpHeader {
    pub fn record_len(&self) -> u64 {
        4 + 4 * self.vocab_size as u64
    }

    pub fn file_len(&self) -> u64 {
        DUMP_HEADER_LEN + self.record_count as u64 * self.record_len()
    }
}

pub fn write_dump<W: Write>(mut w: W, vocab_size: usize, records: &[(u32, Dist)]) -> Result<()> {
    if vocab_size == 0 || vocab_size > u32::MAX as usize {
        return Err(Error::param(format!("vocab size {vocab_size} not representable")));
    }
    let count = u32::try_from(records.len()).map_err(|_| Error::param("too many records"))?;
    w.write_all(&DUMP_MAGIC)?;
    put_u16(&mut w, DUMP_VERSION)?;
    put_u32(&mut w, vocab_size as u32)?;
    put_u32(&mut w, count)?;
    put_u16(&mut w, 0)?;
    for (i, (ctx, d)) in records.iter().enumerate() {
        if d.len() != vocab_size {
            return Err(Error::param(format!(
                "record {i} has {} entries, expected {vocab_size}",
                d.len()
            )));
        }
        put_u32(&mut w, *ctx)?;
        for &p in d.probs() {
            put_f32(&mut w, p as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_dump(path: &Path, vocab_size: usize, records: &[(u32, Dist)]) -> Result<()> {
    write_dump(BufWriter::new(File::create(path)?), vocab_size, records)
}

/// Streams records in file order.
pub struct DumpReader<R> {
    reader: ByteReader<R>,
    header: DumpHeader,
    next: u32,
    failed: bool,
}

impl<R: Read> DumpReader<R> {
    pub fn new(inner: R) -> Result<Self> {
        let mut reader = ByteReader::new(inner);
        let magic: [u8; 4] = reader.array("magic")?;
        if magic != DUMP_MAGIC {
            return Err(Error::format(0, format!("bad magic {magic:?}, expected TSDD")));
        }
        let version = reader.u16("version")?;
        if version != DUMP_VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let vocab_size = reader.u32("vocab_size")?;
        if vocab_size == 0 {
            return Err(Error::format(6, "vocab_size is zero"));
        }
        let record_count = reader.u32("record_count")?;
        let flags = reader.u16("flags")?;
        Ok(DumpReader {
            reader,
            header: DumpHeader {
                version,
                vocab_size,
                record_count,
                flags,
            },
            next: 0,
            failed: false,
        })
    }

    pub fn header(&self) -> &DumpHeader {
        &self.header
    }

    fn read_record(&mut self) -> Result<(u32, Dist)> {
        let index = self.next;
        let start = self.reader.offset();
        let truncated = |e: Error| match e {
            Error::Format { offset, .. } => Error::format(offset, format!("record {index} is truncated")),
            other => other,
        };
        let ctx = self.reader.u32("context id").map_err(truncated)?;
        let v = self.header.vocab_size as usize;
        let mut buf = vec![0u8; 4 * v];
        self.reader.read_exact(&mut buf, "probabilities").map_err(truncated)?;
        let mut probs = Vec::with_capacity(v);
        for (j, chunk) in buf.chunks_exact(4).enumerate() {
            let p = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64;
            if !p.is_finite() || p < 0.0 {
                return Err(Error::format(
                    start + 4 + 4 * j as u64,
                    format!("record {index} entry {j} is {p}"),
                ));
            }
            probs.push(p);
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DUMP_SUM_TOLERANCE {
            return Err(Error::format(start, format!("record {index} sums to {sum}")));
        }
        Ok((ctx, Dist::from_weights(probs)?))
    }
}

impl<R: Read> Iterator for DumpReader<R> {
    type Item = Result<(u32, Dist)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        if self.next >= self.header.record_count {
            return match self.reader.at_eof() {
                Ok(true) => None,
                Ok(false) => {
                    self.failed = true;
                    Some(Err(Error::format(
                        self.reader.offset(),
                        "trailing bytes after last record",
                    )))
                }
                Err(e) => {
                    self.failed = true;
                    Some(Err(e))
                }
            };
        }
        let item = self.read_record();
        self.failed = item.is_err();
        self.next += 1;
        Some(item)
    }
}

/// Opens a dump, checking the file length against the header first.
pub fn open_dump(path: &Path) -> Result<DumpReader<BufReader<File>>> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    let reader = DumpReader::new(BufReader::new(file))?;
    let header = *reader.header();
    if len < header.file_len() {
        let whole = (len.saturating_sub(DUMP_HEADER_LEN)) / header.record_len();
        return Err(Error::format(
            DUMP_HEADER_LEN + whole * header.record_len(),
            format!(
                "record {whole} is truncated: file has {len} bytes, header implies {}",
                header.file_len()
            ),
        ));
    }
    Ok(reader)
}

pub fn load_dump(path: &Path) -> Result<Vec<(u32, Dist)>> {
    open_dump(path)?.collect()
}
