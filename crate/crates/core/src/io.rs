//! Binary tensor (`PMT1`) and embedding (`PME1`) files.
//!
//! Both start with a one-line JSON header terminated by `\n`, followed
//! directly by little-endian `f64` payload values. Small tensors can also be
//! stored as nested JSON arrays.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::embedding::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, TensorShape};

pub const TENSOR_MAGIC: &str = "PMT1";
pub const EMBEDDING_MAGIC: &str = "PME1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    magic: String,
    k: usize,
    n: usize,
    dtype: String,
    order: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingHeader {
    magic: String,
    k: usize,
    n: usize,
    d: usize,
    dtype: String,
}

fn header_err(format: &'static str, reason: impl Into<String>) -> Error {
    Error::Header {
        format,
        reason: reason.into(),
    }
}

fn read_header_line<R: BufRead>(reader: &mut R, format: &'static str) -> Result<Vec<u8>> {
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(header_err(format, "missing newline after header"));
    }
    line.pop();
    Ok(line)
}

fn read_payload<R: Read>(reader: &mut R, count: usize, format: &'static str) -> Result<Vec<f64>> {
    let mut bytes = Vec::with_capacity(count * 8);
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(header_err(
            format,
            format!("payload has {} bytes, header implies {}", bytes.len(), count * 8),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn write_payload<W: Write>(writer: &mut W, values: impl Iterator<Item = f64>) -> Result<()> {
    for v in values {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_tensor<W: Write>(writer: &mut W, tensor: &DenseTensor) -> Result<()> {
    let s = tensor.shape();
    let header = TensorHeader {
        magic: TENSOR_MAGIC.into(),
        k: s.k(),
        n: s.n(),
        dtype: "f64".into(),
        order: "row-major".into(),
    };
    serde_json::to_writer(&mut *writer, &header)?;
    writer.write_all(b"\n")?;
    write_payload(writer, tensor.values().iter().copied())
}

pub fn read_tensor<R: BufRead>(reader: &mut R) -> Result<DenseTensor> {
    let line = read_header_line(reader, TENSOR_MAGIC)?;
    let header: TensorHeader = serde_json::from_slice(&line)
        .map_err(|e| header_err(TENSOR_MAGIC, format!("invalid JSON header: {e}")))?;
    if header.magic != TENSOR_MAGIC {
        return Err(header_err(
            TENSOR_MAGIC,
            format!("field `magic` is {:?}, expected {TENSOR_MAGIC:?}", header.magic),
        ));
    }
    if header.dtype != "f64" {
        return Err(header_err(TENSOR_MAGIC, format!("field `dtype` is {:?}, expected \"f64\"", header.dtype)));
    }
    if header.order != "row-major" {
        return Err(header_err(
            TENSOR_MAGIC,
            format!("field `order` is {:?}, expected \"row-major\"", header.order),
        ));
    }
    let shape = TensorShape::new(header.k, header.n)?;
    let values = read_payload(reader, shape.len(), TENSOR_MAGIC)?;
    DenseTensor::from_vec(shape, values)
}

pub fn write_embeddings<W: Write>(writer: &mut W, x: &Array3<f64>) -> Result<()> {
    let (k, n, d) = x.dim();
    let header = EmbeddingHeader {
        magic: EMBEDDING_MAGIC.into(),
        k,
        n,
        d,
        dtype: "f64".into(),
    };
    serde_json::to_writer(&mut *writer, &header)?;
    writer.write_all(b"\n")?;
    write_payload(writer, x.iter().copied())
}

/// Reads the raw `k × n × d` array without the unit-norm check.
pub fn read_embedding_array<R: BufRead>(reader: &mut R) -> Result<Array3<f64>> {
    let line = read_header_line(reader, EMBEDDING_MAGIC)?;
    let header: EmbeddingHeader = serde_json::from_slice(&line)
        .map_err(|e| header_err(EMBEDDING_MAGIC, format!("invalid JSON header: {e}")))?;
    if header.magic != EMBEDDING_MAGIC {
        return Err(header_err(
            EMBEDDING_MAGIC,
            format!("field `magic` is {:?}, expected {EMBEDDING_MAGIC:?}", header.magic),
        ));
    }
    if header.dtype != "f64" {
        return Err(header_err(
            EMBEDDING_MAGIC,
            format!("field `dtype` is {:?}, expected \"f64\"", header.dtype),
        ));
    }
    let count = header
        .k
        .checked_mul(header.n)
        .and_then(|c| c.checked_mul(header.d))
        .ok_or_else(|| header_err(EMBEDDING_MAGIC, "fields `k`, `n`, `d` overflow"))?;
    let values = read_payload(reader, count, EMBEDDING_MAGIC)?;
    Array3::from_shape_vec((header.k, header.n, header.d), values)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))
}

pub fn read_embeddings<R: BufRead>(reader: &mut R) -> Result<EmbeddingBatch> {
    EmbeddingBatch::new(read_embedding_array(reader)?)
}

/// Nested JSON arrays, outermost level = first axis.
pub fn tensor_to_json(tensor: &DenseTensor) -> Value {
    fn build(values: &[f64], k: usize, n: usize) -> Value {
        if k == 1 {
            return Value::from(values.to_vec());
        }
        let chunk = values.len() / n;
        Value::Array(values.chunks(chunk).map(|c| build(c, k - 1, n)).collect())
    }
    let s = tensor.shape();
    build(tensor.values(), s.k(), s.n())
}

pub fn tensor_from_json(value: &Value) -> Result<DenseTensor> {
    fn depth_and_side(v: &Value) -> Result<(usize, usize)> {
        match v {
            Value::Array(items) if !items.is_empty() => {
                let (depth, _) = match &items[0] {
                    Value::Array(_) => depth_and_side(&items[0])?,
                    _ => (0, 0),
                };
                Ok((depth + 1, items.len()))
            }
            _ => Err(Error::Shape("nested tensor must be a non-empty array".into())),
        }
    }
    fn flatten(v: &Value, k: usize, n: usize, out: &mut Vec<f64>) -> Result<()> {
        let items = v
            .as_array()
            .filter(|a| a.len() == n)
            .ok_or_else(|| Error::Shape(format!("every level must have {n} entries")))?;
        for item in items {
            if k == 1 {
                out.push(item.as_f64().ok_or_else(|| Error::Shape("non-numeric entry".into()))?);
            } else {
                flatten(item, k - 1, n, out)?;
            }
        }
        Ok(())
    }
    let (k, n) = depth_and_side(value)?;
    let shape = TensorShape::new(k, n)?;
    let mut values = Vec::with_capacity(shape.len());
    flatten(value, k, n, &mut values)?;
    DenseTensor::from_vec(shape, values)
}

/// Reads either a `PMT1` file or a nested JSON array (detected by a leading `[`).
pub fn load_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let starts_with_bracket = reader.fill_buf()?.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'[');
    if starts_with_bracket {
        let value: Value = serde_json::from_reader(reader)?;
        tensor_from_json(&value)
    } else {
        read_tensor(&mut reader)
    }
}

pub fn save_tensor(path: impl AsRef<Path>, tensor: &DenseTensor) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    write_tensor(&mut w, tensor)?;
    w.flush()?;
    Ok(())
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingBatch> {
    read_embeddings(&mut BufReader::new(fs::File::open(path)?))
}

pub fn save_embeddings(path: impl AsRef<Path>, x: &Array3<f64>) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    write_embeddings(&mut w, x)?;
    w.flush()?;
    Ok(())
}
