//! Protocol-buffer wire format: varints, tags and length-delimited fields.

use crate::{OnnxError, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) enum Value<'a> {
    Varint(u64),
    Fixed64(u64),
    Bytes(&'a [u8]),
    Fixed32(u32),
}

impl<'a> Value<'a> {
    pub(crate) fn varint(self, field: &str) -> Result<u64> {
        match self {
            Value::Varint(v) => Ok(v),
            _ => Err(wrong_type(field)),
        }
    }

    pub(crate) fn bytes(self, field: &str) -> Result<&'a [u8]> {
        match self {
            Value::Bytes(b) => Ok(b),
            _ => Err(wrong_type(field)),
        }
    }

    pub(crate) fn string(self, field: &str) -> Result<String> {
        String::from_utf8(self.bytes(field)?.to_vec())
            .map_err(|_| OnnxError::Decode(format!("{field} is not valid UTF-8")))
    }

    pub(crate) fn f32(self, field: &str) -> Result<f32> {
        match self {
            Value::Fixed32(bits) => Ok(f32::from_bits(bits)),
            _ => Err(wrong_type(field)),
        }
    }

    /// A repeated varint field, packed or not.
    pub(crate) fn push_varints(self, field: &str, out: &mut Vec<i64>) -> Result<()> {
        match self {
            Value::Varint(v) => out.push(v as i64),
            Value::Bytes(mut b) => {
                while !b.is_empty() {
                    out.push(read_varint(&mut b)? as i64);
                }
            }
            _ => return Err(wrong_type(field)),
        }
        Ok(())
    }

    /// A repeated float field, packed or not.
    pub(crate) fn push_f32s(self, field: &str, out: &mut Vec<f32>) -> Result<()> {
        match self {
            Value::Fixed32(bits) => out.push(f32::from_bits(bits)),
            Value::Bytes(b) => {
                if b.len() % 4 != 0 {
                    return Err(OnnxError::Decode(format!("packed {field} length {} not a multiple of 4", b.len())));
                }
                out.extend(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))));
            }
            _ => return Err(wrong_type(field)),
        }
        Ok(())
    }

    /// A repeated double field, packed or not, narrowed to f32.
    pub(crate) fn push_f64s(self, field: &str, out: &mut Vec<f32>) -> Result<()> {
        match self {
            Value::Fixed64(bits) => out.push(f64::from_bits(bits) as f32),
            Value::Bytes(b) => {
                if b.len() % 8 != 0 {
                    return Err(OnnxError::Decode(format!("packed {field} length {} not a multiple of 8", b.len())));
                }
                out.extend(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as f32));
            }
            _ => return Err(wrong_type(field)),
        }
        Ok(())
    }
}

fn wrong_type(field: &str) -> OnnxError {
    OnnxError::Decode(format!("unexpected wire type for {field}"))
}

fn read_varint(buf: &mut &[u8]) -> Result<u64> {
    let mut value = 0u64;
    for shift in (0..64).step_by(7) {
        let (&byte, rest) = buf
            .split_first()
            .ok_or_else(|| OnnxError::Decode("truncated varint".into()))?;
        *buf = rest;
        value |= u64::from(byte & 0x7f) << shift;
        if byte & 0x80 == 0 {
            return Ok(value);
        }
    }
    Err(OnnxError::Decode("varint longer than 10 bytes".into()))
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(OnnxError::Decode(format!("field needs {n} bytes, {} left", buf.len())));
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

/// Iterates the `(field number, value)` pairs of one message.
pub(crate) struct Fields<'a> {
    buf: &'a [u8],
}

impl<'a> Fields<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    fn read(&mut self) -> Result<(u32, Value<'a>)> {
        let key = read_varint(&mut self.buf)?;
        let field = (key >> 3) as u32;
        let value = match key & 7 {
            0 => Value::Varint(read_varint(&mut self.buf)?),
            1 => Value::Fixed64(u64::from_le_bytes(take(&mut self.buf, 8)?.try_into().expect("8 bytes"))),
            2 => {
                let len = usize::try_from(read_varint(&mut self.buf)?)
                    .map_err(|_| OnnxError::Decode("length overflows usize".into()))?;
                Value::Bytes(take(&mut self.buf, len)?)
            }
            5 => Value::Fixed32(u32::from_le_bytes(take(&mut self.buf, 4)?.try_into().expect("4 bytes"))),
            other => return Err(OnnxError::Decode(format!("unsupported wire type {other} on field {field}"))),
        };
        if field == 0 {
            return Err(OnnxError::Decode("field number 0".into()));
        }
        Ok((field, value))
    }
}

impl<'a> Iterator for Fields<'a> {
    type Item = Result<(u32, Value<'a>)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.buf.is_empty() {
            return None;
        }
        let item = self.read();
        if item.is_err() {
            // Stop after the first malformed field.
            self.buf = &[];
        }
        Some(item)
    }
}
