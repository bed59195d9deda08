//! NPY (format version 1.0) reader and writer for `uint8` and `int64` arrays.

use std::io::Write;
use std::path::Path;

use super::DataError;

const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NpyData {
    U8(Vec<u8>),
    I64(Vec<i64>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn u8(shape: Vec<usize>, data: Vec<u8>) -> Self {
        Self {
            shape,
            data: NpyData::U8(data),
        }
    }

    pub fn i64(shape: Vec<usize>, data: Vec<i64>) -> Self {
        Self {
            shape,
            data: NpyData::I64(data),
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            NpyData::U8(v) => v.len(),
            NpyData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn descr(&self) -> &'static str {
        match self.data {
            NpyData::U8(_) => "|u1",
            NpyData::I64(_) => "<i8",
        }
    }

    /// Values widened to `i64`.
    pub fn to_i64(&self) -> Vec<i64> {
        match &self.data {
            NpyData::U8(v) => v.iter().map(|x| i64::from(*x)).collect(),
            NpyData::I64(v) => v.clone(),
        }
    }
}

/// Value of `'key':` in a header dict, up to the next top-level comma or brace.
fn header_field<'a>(header: &'a str, key: &str) -> Result<&'a str, DataError> {
    let pat = format!("'{key}':");
    let start = header
        .find(&pat)
        .ok_or_else(|| DataError::BadHeader(format!("missing '{key}'")))?
        + pat.len();
    let rest = header[start..].trim_start();
    let mut depth = 0i32;
    for (i, ch) in rest.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return Ok(&rest[..=i]);
                }
            }
            ',' | '}' if depth == 0 => return Ok(rest[..i].trim()),
            _ => {}
        }
    }
    Err(DataError::BadHeader(format!("unterminated '{key}'")))
}

fn parse_shape(s: &str) -> Result<Vec<usize>, DataError> {
    let inner = s
        .strip_prefix('(')
        .and_then(|x| x.strip_suffix(')'))
        .ok_or_else(|| DataError::BadHeader(format!("shape {s}")))?;
    inner
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| DataError::BadHeader(format!("shape entry {p}")))
        })
        .collect()
}

pub fn parse_npy(bytes: &[u8]) -> Result<NpyArray, DataError> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(DataError::BadMagic);
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(DataError::UnsupportedVersion { major, minor });
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let body_start = 10 + header_len;
    if bytes.len() < body_start {
        return Err(DataError::Truncated {
            expected: body_start,
            got: bytes.len(),
        });
    }
    let header = std::str::from_utf8(&bytes[10..body_start]).map_err(|_| DataError::BadHeader("not ASCII".into()))?;
    let descr = header_field(header, "descr")?.trim_matches(|c| c == '\'' || c == '"');
    match header_field(header, "fortran_order")? {
        "False" => {}
        "True" => return Err(DataError::UnsupportedOrder),
        other => return Err(DataError::BadHeader(format!("fortran_order {other}"))),
    }
    let shape = parse_shape(header_field(header, "shape")?)?;
    let count: usize = shape.iter().product();
    let body = &bytes[body_start..];
    let data = match descr {
        "|u1" | "<u1" | "u1" => {
            if body.len() < count {
                return Err(DataError::Truncated {
                    expected: body_start + count,
                    got: bytes.len(),
                });
            }
            NpyData::U8(body[..count].to_vec())
        }
        "<i8" => {
            if body.len() < count * 8 {
                return Err(DataError::Truncated {
                    expected: body_start + count * 8,
                    got: bytes.len(),
                });
            }
            NpyData::I64(
                body.chunks_exact(8)
                    .take(count)
                    .map(|c| i64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            )
        }
        other => return Err(DataError::UnsupportedDtype(other.to_string())),
    };
    Ok(NpyArray { shape, data })
}

pub fn load_npy(path: &Path) -> Result<NpyArray, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    parse_npy(&bytes)
}

/// Serializes as NPY 1.0 with the header padded to a 64-byte boundary.
pub fn encode_npy(array: &NpyArray) -> Vec<u8> {
    let shape = match array.shape.as_slice() {
        [one] => format!("({one},)"),
        dims => format!("({})", dims.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {shape}, }}",
        array.descr()
    );
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + array.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match &array.data {
        NpyData::U8(v) => out.extend_from_slice(v),
        NpyData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

pub fn save_npy(path: &Path, array: &NpyArray) -> Result<(), DataError> {
    let mut f = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    f.write_all(&encode_npy(array)).map_err(|e| DataError::io(path, e))
}
