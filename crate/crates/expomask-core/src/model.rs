//! Versioned model file container.
//!
//! Layout: the magic line `EXPOMASK1`, a text manifest of
//! `<name> <d0>x<d1>x... <offset>` lines bracketed by `tensors <count>`
//! and `end`, then the raw payloads as little-endian IEEE-754 f64 in
//! manifest order. Offsets are bytes from the start of the payload
//! section. Loading validates every name and shape against the configured
//! architecture.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::unet::{UNetConfig, UNetParams};

pub const MODEL_MAGIC: &str = "EXPOMASK1";

pub fn save_model(params: &UNetParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let tensors = params.tensors();

    let io_err = |e: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };

    writeln!(w, "{MODEL_MAGIC}").map_err(io_err)?;
    writeln!(w, "tensors {}", tensors.len()).map_err(io_err)?;
    let mut offset = 0usize;
    for (name, tensor) in &tensors {
        let dims: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
        writeln!(w, "{name} {} {offset}", dims.join("x")).map_err(io_err)?;
        offset += tensor.len() * 8;
    }
    writeln!(w, "end").map_err(io_err)?;
    for (_, tensor) in &tensors {
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn load_model(path: impl AsRef<Path>, config: &UNetConfig) -> Result<UNetParams> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut contents = Vec::new();
    r.read_to_end(&mut contents)
        .map_err(|e| Error::io(path, e))?;

    // Split header from payload at the `end` line.
    let mut pos = 0usize;
    let mut next_line = |contents: &[u8]| -> Result<String> {
        let start = pos;
        while pos < contents.len() && contents[pos] != b'\n' {
            pos += 1;
        }
        if pos >= contents.len() {
            return Err(Error::ModelFormat("truncated header".into()));
        }
        let line = std::str::from_utf8(&contents[start..pos])
            .map_err(|_| Error::ModelFormat("header is not valid UTF-8".into()))?
            .to_string();
        pos += 1;
        Ok(line)
    };

    if next_line(&contents)? != MODEL_MAGIC {
        return Err(Error::ModelFormat(format!(
            "bad magic, expected {MODEL_MAGIC}"
        )));
    }
    let count_line = next_line(&contents)?;
    let count: usize = count_line
        .strip_prefix("tensors ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::ModelFormat(format!("bad tensor count line '{count_line}'")))?;

    struct ManifestEntry {
        name: String,
        shape: Vec<usize>,
        offset: usize,
    }
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next_line(&contents)?;
        let mut parts = line.split(' ');
        let (name, dims, offset) = match (parts.next(), parts.next(), parts.next(), parts.next())
        {
            (Some(n), Some(d), Some(o), None) => (n, d, o),
            _ => return Err(Error::ModelFormat(format!("bad manifest line '{line}'"))),
        };
        let shape: Vec<usize> = dims
            .split('x')
            .map(|d| {
                d.parse()
                    .map_err(|_| Error::ModelFormat(format!("bad shape '{dims}'")))
            })
            .collect::<Result<_>>()?;
        let offset: usize = offset
            .parse()
            .map_err(|_| Error::ModelFormat(format!("bad offset in '{line}'")))?;
        manifest.push(ManifestEntry {
            name: name.to_string(),
            shape,
            offset,
        });
    }
    if next_line(&contents)? != "end" {
        return Err(Error::ModelFormat("missing manifest terminator".into()));
    }
    let payload = &contents[pos..];

    let mut params = UNetParams::zeros(config)?;
    let expected = params.tensors_mut();
    if expected.len() != manifest.len() {
        return Err(Error::ModelFormat(format!(
            "model holds {} tensors, architecture expects {}",
            manifest.len(),
            expected.len()
        )));
    }
    for ((name, tensor), entry) in expected.into_iter().zip(manifest.iter()) {
        if name != entry.name {
            return Err(Error::ModelFormat(format!(
                "tensor '{}' does not match expected '{name}'",
                entry.name
            )));
        }
        if tensor.shape() != entry.shape.as_slice() {
            return Err(Error::ModelFormat(format!(
                "tensor '{name}' has shape {:?}, architecture expects {:?}",
                entry.shape,
                tensor.shape()
            )));
        }
        let bytes = tensor.len() * 8;
        let end = entry.offset + bytes;
        if end > payload.len() {
            return Err(Error::ModelFormat(format!(
                "payload for '{name}' extends past end of file"
            )));
        }
        for (v, chunk) in tensor
            .data_mut()
            .iter_mut()
            .zip(payload[entry.offset..end].chunks_exact(8))
        {
            *v = f64::from_le_bytes(chunk.try_into().expect("chunks are 8 bytes"));
        }
        if !tensor.all_finite() {
            return Err(Error::ModelFormat(format!(
                "tensor '{name}' contains non-finite values"
            )));
        }
    }
    Ok(params)
}
