//! Parameter checkpoints.
//!
//! Layout, byte for byte:
//!
//! ```text
//! miniens-params 1 <count>\n
//! <name> <shape>\n            (repeated <count> times)
//! <payload>
//! ```
//!
//! `<shape>` is the dimensions joined with `,` (`-` for a scalar). Names
//! contain no whitespace. The payload is every parameter's values, in header
//! order, as consecutive little-endian IEEE-754 `f64`s with no padding.

use std::io::{self, BufRead, Write};

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "miniens-params";
const VERSION: u32 = 1;

pub type NamedTensor = (String, Tensor);

pub fn write_checkpoint<W: Write>(out: &mut W, params: &[NamedTensor]) -> Result<()> {
    let mut header = format!("{MAGIC} {VERSION} {}\n", params.len());
    for (name, t) in params {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Checkpoint(format!("invalid parameter name `{name}`")));
        }
        let shape = if t.shape().is_empty() {
            "-".to_string()
        } else {
            t.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
        };
        header.push_str(&format!("{name} {shape}\n"));
    }
    out.write_all(header.as_bytes())?;
    for (_, t) in params {
        let mut buf = Vec::with_capacity(t.numel() * 8);
        for v in t.data().iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn read_line<R: BufRead>(input: &mut R) -> Result<String> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 || !line.ends_with('\n') {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    line.pop();
    Ok(line)
}

/// Reads every `(name, shape, values)` entry in file order.
pub fn read_checkpoint<R: BufRead>(input: &mut R) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>> {
    let first = read_line(input)?;
    let fields: Vec<&str> = first.split(' ').collect();
    if fields.len() != 3 || fields[0] != MAGIC {
        return Err(Error::Checkpoint("bad magic line".into()));
    }
    if fields[1] != VERSION.to_string() {
        return Err(Error::Checkpoint(format!("unsupported version {}", fields[1])));
    }
    let count: usize = fields[2]
        .parse()
        .map_err(|_| Error::Checkpoint("bad parameter count".into()))?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let line = read_line(input)?;
        let (name, shape) = line
            .split_once(' ')
            .ok_or_else(|| Error::Checkpoint(format!("bad header line `{line}`")))?;
        let shape: Vec<usize> = if shape == "-" {
            vec![]
        } else {
            shape
                .split(',')
                .map(|d| d.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Checkpoint(format!("bad shape in `{line}`")))?
        };
        entries.push((name.to_string(), shape));
    }
    let mut out = Vec::with_capacity(count);
    for (name, shape) in entries {
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        input.read_exact(&mut bytes).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::Checkpoint(format!("payload truncated at `{name}`")),
            _ => Error::Io(e),
        })?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, shape, values));
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok(out)
}
