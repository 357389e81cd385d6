//! LSEQ1 sequence files.
//!
//! ```text
//! LSEQ1 coeff=<D> audio=<A> id=<I> fps=<fps> attitude=<label> length=<n> listener=<id>\n
//! identity      f64 × I
//! frame 0..n:   speaker f64 × D, audio f64 × A, listener f64 × D
//! ```
//!
//! Floats are little-endian IEEE-754 binary64.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Attitude, DialoguePair};
use crate::error::{Error, Result};
use crate::nn::NumArray;

pub const LSEQ_VERSION: u32 = 1;
const MAX_HEADER: usize = 1024;

pub fn sequence_to_bytes(pair: &DialoguePair) -> Result<Vec<u8>> {
    pair.validate()?;
    let (n, d, a, i) = (pair.len(), pair.speaker.cols(), pair.audio.cols(), pair.identity.len());
    let header = format!(
        "LSEQ{LSEQ_VERSION} coeff={d} audio={a} id={i} fps={} attitude={} length={n} listener={}\n",
        pair.fps, pair.attitude, pair.listener_id
    );
    let mut out = Vec::with_capacity(header.len() + 8 * (i + n * (2 * d + a)));
    out.extend_from_slice(header.as_bytes());
    let mut put = |xs: &[f64]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    put(pair.identity.data());
    for k in 0..n {
        put(pair.speaker.row(k));
        put(pair.audio.row(k));
        put(pair.listener.row(k));
    }
    Ok(out)
}

pub fn write_sequence(path: &Path, pair: &DialoguePair) -> Result<()> {
    let bytes = sequence_to_bytes(pair)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_sequence(path: &Path) -> Result<DialoguePair> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    sequence_from_bytes(&bytes)
}

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        msg: msg.into(),
    }
}

pub fn sequence_from_bytes(bytes: &[u8]) -> Result<DialoguePair> {
    if !bytes.starts_with(b"LSEQ") {
        return Err(Error::NotSequenceFile);
    }
    let end = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| parse_err(0, "header line not terminated"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| parse_err(0, "header is not UTF-8"))?;
    let mut tokens = header.split(' ');
    let magic = tokens.next().unwrap_or_default();
    let version: u32 = magic[4..]
        .parse()
        .map_err(|_| parse_err(4, format!("bad version in magic `{magic}`")))?;
    if version != LSEQ_VERSION {
        return Err(Error::Version {
            found: version,
            expected: LSEQ_VERSION,
        });
    }

    let mut fields = HashMap::new();
    let mut offset = magic.len() + 1;
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| parse_err(offset, format!("malformed header field `{tok}`")))?;
        fields.insert(k, (v, offset));
        offset += tok.len() + 1;
    }
    let num = |key: &str| -> Result<usize> {
        let (v, at) = fields
            .get(key)
            .ok_or_else(|| parse_err(end, format!("header lacks `{key}`")))?;
        v.parse()
            .map_err(|_| parse_err(*at, format!("header field `{key}` is not a count: `{v}`")))
    };
    let (d, a, i, n) = (num("coeff")?, num("audio")?, num("id")?, num("length")?);
    let fps = num("fps")? as u32;
    let listener_id = num("listener")? as u32;
    let (att, at) = fields
        .get("attitude")
        .ok_or_else(|| parse_err(end, "header lacks `attitude`"))?;
    let attitude: Attitude = att
        .parse()
        .map_err(|_| parse_err(*at, format!("unknown attitude `{att}`")))?;
    if d == 0 || a == 0 || i == 0 || n == 0 {
        return Err(parse_err(0, "header declares a zero dimension"));
    }

    let mut pos = end + 1;
    let mut read = |count: usize, what: &dyn Fn() -> String| -> Result<Vec<f64>> {
        if bytes.len() - pos < count * 8 {
            return Err(parse_err(bytes.len(), format!("file truncated in {}", what())));
        }
        let v = bytes[pos..pos + count * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += count * 8;
        Ok(v)
    };
    let identity = read(i, &|| "identity block".into())?;
    // header counts are untrusted; grow as frames arrive
    let (mut spk, mut aud, mut lis) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..n {
        let what = || format!("frame {k}");
        spk.extend(read(d, &what)?);
        aud.extend(read(a, &what)?);
        lis.extend(read(d, &what)?);
    }
    if pos != bytes.len() {
        return Err(parse_err(pos, "trailing bytes after last frame"));
    }
    let pair = DialoguePair {
        speaker: NumArray::new(vec![n, d], spk)?,
        audio: NumArray::new(vec![n, a], aud)?,
        listener: NumArray::new(vec![n, d], lis)?,
        identity: NumArray::vector(identity),
        attitude,
        listener_id,
        fps,
    };
    pair.validate()?;
    Ok(pair)
}

/// Listener and speaker coefficients as CSV, one row per frame (inspection only).
pub fn write_csv(path: &Path, pair: &DialoguePair) -> Result<()> {
    let d = pair.speaker.cols();
    let mut s = String::from("frame");
    for c in 0..d {
        write!(s, ",speaker_{c}").unwrap();
    }
    for c in 0..d {
        write!(s, ",listener_{c}").unwrap();
    }
    s.push_str(",energy\n");
    for k in 0..pair.len() {
        write!(s, "{k}").unwrap();
        for v in pair.speaker.row(k).iter().chain(pair.listener.row(k)) {
            write!(s, ",{v}").unwrap();
        }
        writeln!(s, ",{}", pair.audio.get(k, 0)).unwrap();
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
