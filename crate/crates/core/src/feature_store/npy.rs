//! NPY v1.0 reader/writer for 2-D little-endian float matrices.
//!
//! Only the subset used for exported encoder features is accepted:
//! `descr` of `<f4` or `<f8`, `fortran_order: False`, and a 2-tuple shape.
//! Everything else is rejected with a typed error, and a failed parse never
//! yields a partially filled matrix.

use super::{FeatureMatrix, StoreError};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, PartialEq)]
enum Literal {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

/// Parses an NPY v1.0 byte buffer into a [`FeatureMatrix`].
pub fn parse_npy(bytes: &[u8]) -> Result<FeatureMatrix, StoreError> {
    if bytes.len() < PREAMBLE_LEN || &bytes[..6] != MAGIC {
        return Err(StoreError::MalformedHeader("missing NPY magic string".into()));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(StoreError::MalformedHeader(format!(
            "unsupported NPY version {}.{}",
            bytes[6], bytes[7]
        )));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = PREAMBLE_LEN + header_len;
    if bytes.len() < data_start {
        return Err(StoreError::MalformedHeader(format!(
            "header declares {header_len} bytes but only {} follow the preamble",
            bytes.len() - PREAMBLE_LEN
        )));
    }
    let header = std::str::from_utf8(&bytes[PREAMBLE_LEN..data_start])
        .map_err(|_| StoreError::MalformedHeader("header is not valid ASCII".into()))?;
    let fields = parse_header_dict(header)?;

    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    for (key, value) in fields {
        match (key.as_str(), value) {
            ("descr", Literal::Str(s)) => descr = Some(s),
            ("fortran_order", Literal::Bool(b)) => fortran = Some(b),
            ("shape", Literal::Tuple(t)) => shape = Some(t),
            (k, v) => {
                return Err(StoreError::MalformedHeader(format!(
                    "unexpected header entry {k:?}: {v:?}"
                )))
            }
        }
    }
    let descr = descr.ok_or_else(|| StoreError::MalformedHeader("missing 'descr'".into()))?;
    let fortran =
        fortran.ok_or_else(|| StoreError::MalformedHeader("missing 'fortran_order'".into()))?;
    let shape = shape.ok_or_else(|| StoreError::MalformedHeader("missing 'shape'".into()))?;

    let dtype = match descr.as_str() {
        "<f4" => Dtype::F32,
        "<f8" => Dtype::F64,
        other => return Err(StoreError::UnsupportedDtype(other.to_string())),
    };
    if fortran {
        return Err(StoreError::ShapeMismatch(
            "fortran-ordered arrays are not supported".into(),
        ));
    }
    let (rows, dim) = match shape.as_slice() {
        [r, c] => (*r, *c),
        other => {
            return Err(StoreError::ShapeMismatch(format!(
                "expected a 2-D array, header shape has {} dimensions",
                other.len()
            )))
        }
    };

    let payload = &bytes[data_start..];
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(dtype.width()))
        .ok_or_else(|| StoreError::ShapeMismatch(format!("shape ({rows}, {dim}) overflows")))?;
    if payload.len() != expected {
        return Err(StoreError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }

    let values: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    };
    FeatureMatrix::new(rows, dim, values)
}

/// Serializes a matrix as NPY v1.0 with `<f8` payload.
pub fn write_npy(matrix: &FeatureMatrix) -> Vec<u8> {
    let mut out = npy_header("<f8", matrix.rows(), matrix.dim());
    out.reserve(matrix.values().len() * 8);
    for v in matrix.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Serializes a matrix as NPY v1.0 with `<f4` payload (values are narrowed).
pub fn write_npy_f32(matrix: &FeatureMatrix) -> Vec<u8> {
    let mut out = npy_header("<f4", matrix.rows(), matrix.dim());
    out.reserve(matrix.values().len() * 4);
    for v in matrix.values() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn npy_header(descr: &str, rows: usize, dim: usize) -> Vec<u8> {
    let mut dict =
        format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': ({rows}, {dim}), }}");
    // Preamble plus header (including the trailing newline) is padded to 64 bytes.
    let unpadded = PREAMBLE_LEN + dict.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');

    let mut out = Vec::with_capacity(PREAMBLE_LEN + dict.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

/// Parses the Python dict literal that makes up an NPY header.
fn parse_header_dict(header: &str) -> Result<Vec<(String, Literal)>, StoreError> {
    let malformed = |msg: &str| StoreError::MalformedHeader(format!("{msg} in header {header:?}"));
    let mut cur = Cursor {
        chars: header.trim_end().chars().collect(),
        pos: 0,
    };
    cur.skip_ws();
    if !cur.eat('{') {
        return Err(malformed("expected '{'"));
    }
    let mut fields = Vec::new();
    loop {
        cur.skip_ws();
        if cur.eat('}') {
            break;
        }
        let key = cur.string().ok_or_else(|| malformed("expected quoted key"))?;
        cur.skip_ws();
        if !cur.eat(':') {
            return Err(malformed("expected ':'"));
        }
        cur.skip_ws();
        let value = cur.literal().ok_or_else(|| malformed("unparseable value"))?;
        fields.push((key, value));
        cur.skip_ws();
        if cur.eat(',') {
            continue;
        }
        cur.skip_ws();
        if cur.eat('}') {
            break;
        }
        return Err(malformed("expected ',' or '}'"));
    }
    cur.skip_ws();
    if !cur.at_end() {
        return Err(malformed("trailing characters"));
    }
    Ok(fields)
}

struct Cursor {
    chars: Vec<char>,
    pos: usize,
}

impl Cursor {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn at_end(&self) -> bool {
        self.pos >= self.chars.len()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn string(&mut self) -> Option<String> {
        let quote = self.peek().filter(|c| *c == '\'' || *c == '"')?;
        self.pos += 1;
        let start = self.pos;
        while self.peek()? != quote {
            self.pos += 1;
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        self.pos += 1;
        Some(s)
    }

    fn word(&mut self) -> String {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric()) {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn literal(&mut self) -> Option<Literal> {
        match self.peek()? {
            '\'' | '"' => self.string().map(Literal::Str),
            '(' => {
                self.pos += 1;
                let mut dims = Vec::new();
                loop {
                    self.skip_ws();
                    if self.eat(')') {
                        break;
                    }
                    let digits = self.word();
                    // Python 2 era writers emitted `3L` for long ints.
                    let digits = digits.strip_suffix('L').unwrap_or(&digits);
                    dims.push(digits.parse::<usize>().ok()?);
                    self.skip_ws();
                    if self.eat(',') {
                        continue;
                    }
                    self.skip_ws();
                    if self.eat(')') {
                        break;
                    }
                    return None;
                }
                Some(Literal::Tuple(dims))
            }
            _ => match self.word().as_str() {
                "True" => Some(Literal::Bool(true)),
                "False" => Some(Literal::Bool(false)),
                _ => None,
            },
        }
    }
}
