//! Trained n-gram model files (`NGMD`).
//!
//! Layout, little-endian:
//!
//! ```text
//! magic "NGMD" | version u16 | order u16 | uniform_weight f64
//! vocab block:   token_count u32, then per token: byte_len u32, UTF-8 bytes
//! context block: context_count u64, then per context:
//!                (order - 1) x u32 ids (BOS = 0xFFFFFFFF),
//!                entry_count u32, entry_count x (token u32, count u32)
//! ```
//!
//! Contexts are written in ascending order, so saving the same model twice
//! gives identical bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::bytes::{put_f64, put_u16, put_u32, put_u64, ByteReader};
use crate::dist::Vocab;
use crate::error::{Error, Result};
use crate::ngram::NGramModel;

pub const MODEL_MAGIC: [u8; 4] = *b"NGMD";
pub const MODEL_VERSION: u16 = 1;

pub fn write_model<W: Write>(mut w: W, model: &NGramModel) -> Result<()> {
    let order = u16::try_from(model.order()).map_err(|_| Error::param("order too large to store"))?;
    w.write_all(&MODEL_MAGIC)?;
    put_u16(&mut w, MODEL_VERSION)?;
    put_u16(&mut w, order)?;
    put_f64(&mut w, model.uniform_weight())?;
    put_u32(&mut w, model.vocab_size() as u32)?;
    for tok in model.vocab().tokens() {
        put_u32(&mut w, tok.len() as u32)?;
        w.write_all(tok.as_bytes())?;
    }
    put_u64(&mut w, model.num_contexts() as u64)?;
    for e in model.entries() {
        for &id in e.context {
            put_u32(&mut w, id)?;
        }
        put_u32(&mut w, e.next_ids.len() as u32)?;
        for (&id, &c) in e.next_ids.iter().zip(e.counts) {
            put_u32(&mut w, id)?;
            put_u32(&mut w, c)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_model(path: &Path, model: &NGramModel) -> Result<()> {
    write_model(BufWriter::new(File::create(path)?), model)
}

pub fn read_model<R: Read>(inner: R) -> Result<NGramModel> {
    let mut r = ByteReader::new(inner);
    let magic: [u8; 4] = r.array("magic")?;
    if magic != MODEL_MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected NGMD")));
    }
    let version = r.u16("version")?;
    if version != MODEL_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let order = r.u16("order")? as usize;
    if order == 0 {
        return Err(Error::format(6, "order is zero"));
    }
    let weight_at = r.offset();
    let uniform_weight = r.f64("uniform weight")?;
    if !(0.0..1.0).contains(&uniform_weight) {
        return Err(Error::format(
            weight_at,
            format!("uniform weight {uniform_weight} outside [0, 1)"),
        ));
    }

    let token_count = r.u32("token count")?;
    let mut vocab = Vocab::default();
    for i in 0..token_count {
        let len = r.u32("token length")? as usize;
        let at = r.offset();
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf, "token bytes")?;
        let tok = String::from_utf8(buf).map_err(|_| Error::format(at, format!("token {i} is not UTF-8")))?;
        if vocab.id(&tok).is_some() {
            return Err(Error::format(at, format!("token {i} ({tok:?}) is duplicated")));
        }
        vocab.intern(&tok);
    }
    if vocab.is_empty() {
        return Err(Error::format(r.offset(), "empty vocabulary"));
    }

    let context_count = r.u64("context count")?;
    let mut entries = Vec::new();
    for _ in 0..context_count {
        let mut ctx = Vec::with_capacity(order - 1);
        for _ in 0..order - 1 {
            ctx.push(r.u32("context id")?);
        }
        let n = r.u32("entry count")?;
        let mut next = Vec::with_capacity(n as usize);
        for _ in 0..n {
            next.push((r.u32("entry token")?, r.u32("entry count")?));
        }
        entries.push((ctx, next));
    }
    let end = r.offset();
    if !r.at_eof()? {
        return Err(Error::format(end, "trailing bytes after context block"));
    }
    NGramModel::from_entries(order, vocab, uniform_weight, entries)
        .map_err(|e| Error::format(end, format!("inconsistent model: {e}")))
}

pub fn load_model(path: &Path) -> Result<NGramModel> {
    read_model(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::tokenize;

    fn sample_model() -> NGramModel {
        let (vocab, ids) = tokenize("the cat sat on the mat and the cat ran");
        NGramModel::train(vocab, &ids, 3, 0.25).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = sample_model();
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        assert_eq!(&buf[..4], b"NGMD");
        assert_eq!(&buf[4..8], &[1, 0, 3, 0]);
        assert_eq!(read_model(&buf[..]).unwrap(), m);

        let mut again = Vec::new();
        write_model(&mut again, &read_model(&buf[..]).unwrap()).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn corrupt_files_are_rejected_with_offsets() {
        let mut buf = Vec::new();
        write_model(&mut buf, &sample_model()).unwrap();

        let mut bad = buf.clone();
        bad[1] = b'X';
        assert!(matches!(read_model(&bad[..]), Err(Error::Format { offset: 0, .. })));

        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(read_model(&bad[..]), Err(Error::Format { offset: 4, .. })));

        for cut in [3, 9, 20, buf.len() - 1] {
            assert!(
                matches!(read_model(&buf[..cut]), Err(Error::Format { .. })),
                "cut at {cut}"
            );
        }

        let mut bad = buf.clone();
        bad.push(0);
        assert!(matches!(read_model(&bad[..]), Err(Error::Format { .. })));
    }
}
