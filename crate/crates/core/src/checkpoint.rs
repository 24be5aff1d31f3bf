//! Named, group-tagged tensor collections and the `MQE1` container format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset 0   b"MQE1"
//! offset 4   u32  format version (1)
//! offset 8   u64  index length L
//! offset 16  L bytes of UTF-8 index text
//!            zero padding up to the next 64-byte boundary  <- data section start
//!            data blocks, each starting 64-byte aligned relative to the data start
//! ```
//!
//! The index holds one tab-separated record per line:
//!
//! ```text
//! meta    <key>  <value>
//! tensor  <name> <group> <dtype> <bits> <granularity> <shape> <data_off> <data_len> <scale_off> <scale_len>
//! ```
//!
//! `dtype` is one of `f32`, `f16`, `q-lin`, `q-log`; `bits` is 32, 16 or the
//! code width; `granularity` is `channel`, `tensor` or `none`; `shape` joins
//! the dimensions with `x`. Offsets are relative to the data section start.
//! Floats are stored as little-endian IEEE-754, quantized codes in the packed
//! layout of [`crate::bitpack`], and scales as binary16 in a separate block
//! following the codes. Float tensors record `0 0` for the scale block.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use half::f16;

use crate::bitpack::{self, Bits};
use crate::error::{Error, Result};
use crate::quant::{Granularity, QuantizedTensor, Scheme};
use crate::tensor::{HalfTensor, LayerGroup, Tensor};

pub const MAGIC: &[u8; 4] = b"MQE1";
pub const FORMAT_VERSION: u32 = 1;
pub const ALIGN: u64 = 64;
const HEADER_LEN: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F16,
    QLin,
    QLog,
}

impl DType {
    pub fn tag(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F16 => "f16",
            DType::QLin => "q-lin",
            DType::QLog => "q-log",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "f32" => DType::F32,
            "f16" => DType::F16,
            "q-lin" => DType::QLin,
            "q-log" => DType::QLog,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Tensor),
    F16(HalfTensor),
    Quantized(QuantizedTensor),
}

impl Payload {
    pub fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::F16(_) => DType::F16,
            Payload::Quantized(q) => match q.scheme() {
                Scheme::LinearAbsMax => DType::QLin,
                Scheme::LogScale => DType::QLog,
            },
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self {
            Payload::F32(t) => t.shape().to_vec(),
            Payload::F16(t) => t.shape().to_vec(),
            Payload::Quantized(q) => q.shape().to_vec(),
        }
    }

    pub fn numel(&self) -> usize {
        match self {
            Payload::F32(t) => t.numel(),
            Payload::F16(t) => t.numel(),
            Payload::Quantized(q) => q.numel(),
        }
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, Payload::Quantized(_))
    }

    /// Bytes the weights occupy in memory.
    pub fn resident_bytes(&self) -> usize {
        match self {
            Payload::F32(t) => 4 * t.numel(),
            Payload::F16(t) => 2 * t.numel(),
            Payload::Quantized(q) => q.resident_bytes(),
        }
    }

    /// Float view of the payload (dequantized or widened as needed).
    pub fn to_tensor(&self) -> Tensor {
        match self {
            Payload::F32(t) => t.clone(),
            Payload::F16(t) => t.to_tensor(),
            Payload::Quantized(q) => crate::quant::dequantize(q),
        }
    }

    /// Number of columns when viewed as a matrix (1-D tensors are one row).
    pub fn row_len(&self) -> usize {
        *self
            .shape()
            .last()
            .expect("tensors have at least one dimension")
    }

    /// Decodes rows `start..start + out.len() / row_len` into `out`.
    pub fn decode_rows(&self, start: usize, out: &mut [f32]) {
        let n = self.row_len();
        match self {
            Payload::F32(t) => out.copy_from_slice(&t.data()[start * n..start * n + out.len()]),
            Payload::F16(t) => {
                for (o, h) in out.iter_mut().zip(&t.data()[start * n..]) {
                    *o = h.to_f32();
                }
            }
            Payload::Quantized(q) => q.dequantize_rows(start, out),
        }
    }

    fn storage(&self) -> Storage {
        match self {
            Payload::F32(t) => Storage::float(DType::F32, t.shape().to_vec()),
            Payload::F16(t) => Storage::float(DType::F16, t.shape().to_vec()),
            Payload::Quantized(q) => {
                Storage::quantized(q.scheme(), q.bits(), q.granularity(), q.shape().to_vec())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub group: LayerGroup,
    pub payload: Payload,
}

/// Ordered collection of uniquely named tensors plus free-form metadata.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    entries: Vec<Entry>,
    by_name: HashMap<String, usize>,
    meta: BTreeMap<String, String>,
}

impl PartialEq for Checkpoint {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.meta == other.meta
    }
}

fn check_name(s: &str) -> Result<()> {
    if s.is_empty() || s.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidName(s.to_string()));
    }
    Ok(())
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        group: LayerGroup,
        payload: Payload,
    ) -> Result<()> {
        let name = name.into();
        check_name(&name)?;
        if self.by_name.contains_key(&name) {
            return Err(Error::DuplicateName(name));
        }
        self.by_name.insert(name.clone(), self.entries.len());
        self.entries.push(Entry {
            name,
            group,
            payload,
        });
        Ok(())
    }

    pub fn push_f32(
        &mut self,
        name: impl Into<String>,
        group: LayerGroup,
        t: Tensor,
    ) -> Result<()> {
        self.push(name, group, Payload::F32(t))
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.by_name.get(name).map(|&i| &self.entries[i])
    }

    pub fn payload(&self, name: &str) -> Result<&Payload> {
        self.get(name)
            .map(|e| &e.payload)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    /// Swaps the payload of an existing entry, keeping name, group and order.
    pub fn replace_payload(&mut self, name: &str, payload: Payload) -> Result<Payload> {
        let i = *self
            .by_name
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        Ok(std::mem::replace(&mut self.entries[i].payload, payload))
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) -> Result<()> {
        let (key, value) = (key.into(), value.into());
        check_name(&key)?;
        if value.contains(['\t', '\n', '\r']) {
            return Err(Error::InvalidName(value));
        }
        self.meta.insert(key, value);
        Ok(())
    }

    pub fn resident_bytes(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.payload.resident_bytes())
            .sum()
    }

    pub fn storage(&self) -> Vec<TensorStorage> {
        self.entries
            .iter()
            .map(|e| TensorStorage {
                name: e.name.clone(),
                group: e.group,
                storage: e.payload.storage(),
            })
            .collect()
    }
}

/// How one tensor is encoded, independent of its values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Storage {
    pub dtype: DType,
    pub bits: u8,
    pub granularity: Option<Granularity>,
    pub shape: Vec<usize>,
}

impl Storage {
    pub fn float(dtype: DType, shape: Vec<usize>) -> Self {
        let bits = match dtype {
            DType::F32 => 32,
            DType::F16 => 16,
            _ => panic!("float storage needs a float dtype"),
        };
        Self {
            dtype,
            bits,
            granularity: None,
            shape,
        }
    }

    pub fn quantized(
        scheme: Scheme,
        bits: Bits,
        granularity: Granularity,
        shape: Vec<usize>,
    ) -> Self {
        Self {
            dtype: match scheme {
                Scheme::LinearAbsMax => DType::QLin,
                Scheme::LogScale => DType::QLog,
            },
            bits: bits.get(),
            granularity: Some(granularity),
            shape,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn data_len(&self) -> u64 {
        let n = self.numel();
        match self.dtype {
            DType::F32 => 4 * n as u64,
            DType::F16 => 2 * n as u64,
            DType::QLin | DType::QLog => {
                bitpack::packed_len(Bits::new(self.bits as u32).expect("validated"), n) as u64
            }
        }
    }

    pub fn scale_count(&self) -> usize {
        match self.granularity {
            None => 0,
            Some(Granularity::PerTensor) => 1,
            Some(Granularity::PerChannel) => *self.shape.last().unwrap_or(&0),
        }
    }

    pub fn scale_len(&self) -> u64 {
        2 * self.scale_count() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorStorage {
    pub name: String,
    pub group: LayerGroup,
    pub storage: Storage,
}

/// One parsed `tensor` index record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexRecord {
    pub name: String,
    pub group: LayerGroup,
    pub storage: Storage,
    pub data_offset: u64,
    pub data_len: u64,
    pub scale_offset: u64,
    pub scale_len: u64,
}

fn align(x: u64) -> u64 {
    x.div_ceil(ALIGN) * ALIGN
}

/// Assigns aligned offsets to every tensor in order.
fn lay_out(tensors: &[TensorStorage]) -> Vec<IndexRecord> {
    let mut cursor = 0u64;
    tensors
        .iter()
        .map(|t| {
            let data_offset = align(cursor);
            let data_len = t.storage.data_len();
            cursor = data_offset + data_len;
            let scale_len = t.storage.scale_len();
            let scale_offset = if scale_len > 0 {
                let off = align(cursor);
                cursor = off + scale_len;
                off
            } else {
                0
            };
            IndexRecord {
                name: t.name.clone(),
                group: t.group,
                storage: t.storage.clone(),
                data_offset,
                data_len,
                scale_offset,
                scale_len,
            }
        })
        .collect()
}

fn index_text(meta: &BTreeMap<String, String>, records: &[IndexRecord]) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    for (k, v) in meta {
        let _ = writeln!(s, "meta\t{k}\t{v}");
    }
    for r in records {
        let shape = r
            .storage
            .shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        let gran = match r.storage.granularity {
            None => "none".to_string(),
            Some(g) => g.to_string(),
        };
        let _ = writeln!(
            s,
            "tensor\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.name,
            r.group,
            r.storage.dtype.tag(),
            r.storage.bits,
            gran,
            shape,
            r.data_offset,
            r.data_len,
            r.scale_offset,
            r.scale_len
        );
    }
    s
}

fn data_start(index_len: u64) -> u64 {
    align(HEADER_LEN + index_len)
}

fn data_end(records: &[IndexRecord]) -> u64 {
    records
        .iter()
        .map(|r| (r.data_offset + r.data_len).max(r.scale_offset + r.scale_len))
        .max()
        .unwrap_or(0)
}

/// Exact byte size of the container holding `tensors` with `meta`.
pub fn container_len(meta: &BTreeMap<String, String>, tensors: &[TensorStorage]) -> u64 {
    let records = lay_out(tensors);
    let index = index_text(meta, &records);
    data_start(index.len() as u64) + data_end(&records)
}

/// Serializes `ckpt`; returns the number of bytes written.
pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, sink: &mut W) -> Result<u64> {
    for e in &ckpt.entries {
        if let Payload::F32(t) = &e.payload {
            t.ensure_finite(&e.name)?;
        }
        if e.payload.shape().contains(&0) {
            return Err(Error::Shape(format!("{}: zero dimension", e.name)));
        }
    }
    let records = lay_out(&ckpt.storage());
    let index = index_text(&ckpt.meta, &records);
    let start = data_start(index.len() as u64);

    let mut out: Vec<u8> = Vec::with_capacity((start + data_end(&records)) as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    out.extend_from_slice(index.as_bytes());
    out.resize(start as usize, 0);

    for (e, r) in ckpt.entries.iter().zip(&records) {
        out.resize((start + r.data_offset) as usize, 0);
        match &e.payload {
            Payload::F32(t) => t
                .data()
                .iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Payload::F16(t) => t
                .data()
                .iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Payload::Quantized(q) => {
                out.extend_from_slice(q.packed_codes());
                out.resize((start + r.scale_offset) as usize, 0);
                q.scales()
                    .iter()
                    .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
        }
    }
    sink.write_all(&out)?;
    Ok(out.len() as u64)
}

/// Parsed header and index of a container.
#[derive(Debug, Clone)]
pub struct ContainerIndex {
    pub meta: BTreeMap<String, String>,
    pub records: Vec<IndexRecord>,
    pub data_start: u64,
    pub index_len: u64,
}

fn malformed(line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedIndex {
        line,
        reason: reason.into(),
    }
}

fn inconsistent(tensor: &str, reason: impl Into<String>) -> Error {
    Error::IndexInconsistent {
        tensor: tensor.to_string(),
        reason: reason.into(),
    }
}

fn parse_u64(field: &str, line: usize) -> Result<u64> {
    field
        .parse()
        .map_err(|_| malformed(line, format!("expected an integer, got {field:?}")))
}

fn parse_record(fields: &[&str], line: usize) -> Result<IndexRecord> {
    if fields.len() != 11 {
        return Err(malformed(
            line,
            format!("tensor record has {} fields, expected 11", fields.len()),
        ));
    }
    let name = fields[1].to_string();
    let group: LayerGroup = fields[2]
        .parse()
        .map_err(|_| malformed(line, format!("unknown group {:?}", fields[2])))?;
    let dtype = DType::parse(fields[3])
        .ok_or_else(|| malformed(line, format!("unknown dtype {:?}", fields[3])))?;
    let bits = parse_u64(fields[4], line)?;
    let granularity = match fields[5] {
        "none" => None,
        g => Some(
            g.parse::<Granularity>()
                .map_err(|_| malformed(line, format!("unknown granularity {g:?}")))?,
        ),
    };
    let shape = fields[6]
        .split('x')
        .map(|d| parse_u64(d, line).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    if shape.contains(&0) {
        return Err(inconsistent(&name, "zero dimension"));
    }
    let ok = match (dtype, bits, granularity) {
        (DType::F32, 32, None) | (DType::F16, 16, None) => true,
        (DType::QLin | DType::QLog, 2 | 3 | 4 | 8, Some(_)) => shape.len() == 2,
        _ => false,
    };
    if !ok {
        return Err(inconsistent(
            &name,
            format!("invalid dtype/bits/granularity/shape combination in line {line}"),
        ));
    }
    let storage = Storage {
        dtype,
        bits: bits as u8,
        granularity,
        shape,
    };
    let rec = IndexRecord {
        name,
        group,
        data_offset: parse_u64(fields[7], line)?,
        data_len: parse_u64(fields[8], line)?,
        scale_offset: parse_u64(fields[9], line)?,
        scale_len: parse_u64(fields[10], line)?,
        storage,
    };
    if rec.data_len != rec.storage.data_len() {
        return Err(inconsistent(
            &rec.name,
            format!(
                "data length {} but shape needs {}",
                rec.data_len,
                rec.storage.data_len()
            ),
        ));
    }
    if rec.scale_len != rec.storage.scale_len() {
        return Err(inconsistent(
            &rec.name,
            format!(
                "scale length {} but {} expected",
                rec.scale_len,
                rec.storage.scale_len()
            ),
        ));
    }
    if rec.data_offset % ALIGN != 0 || (rec.scale_len > 0 && rec.scale_offset % ALIGN != 0) {
        return Err(inconsistent(&rec.name, "block not 64-byte aligned"));
    }
    Ok(rec)
}

fn parse_header(bytes: &[u8]) -> Result<ContainerIndex> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN as usize {
        return Err(Error::Truncated("header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let index_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let index_end = HEADER_LEN
        .checked_add(index_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| Error::Truncated("index".into()))?;
    let text = std::str::from_utf8(&bytes[HEADER_LEN as usize..index_end as usize])
        .map_err(|e| malformed(0, format!("index is not UTF-8: {e}")))?;

    let mut meta = BTreeMap::new();
    let mut records: Vec<IndexRecord> = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        match fields[0] {
            "meta" if fields.len() == 3 => {
                meta.insert(fields[1].to_string(), fields[2].to_string());
            }
            "meta" => return Err(malformed(lineno, "meta record needs key and value")),
            "tensor" => {
                let rec = parse_record(&fields, lineno)?;
                if seen.insert(rec.name.clone(), ()).is_some() {
                    return Err(Error::DuplicateName(rec.name));
                }
                records.push(rec);
            }
            other => return Err(malformed(lineno, format!("unknown record kind {other:?}"))),
        }
    }

    // Blocks must appear in order without overlapping.
    let mut cursor = 0u64;
    for r in &records {
        if r.data_offset < cursor {
            return Err(inconsistent(
                &r.name,
                "data block overlaps a previous block",
            ));
        }
        cursor = r.data_offset + r.data_len;
        if r.scale_len > 0 {
            if r.scale_offset < cursor {
                return Err(inconsistent(&r.name, "scale block overlaps its data block"));
            }
            cursor = r.scale_offset + r.scale_len;
        }
    }

    Ok(ContainerIndex {
        meta,
        records,
        data_start: data_start(index_len),
        index_len,
    })
}

/// Parses only the header and index of a serialized container.
///
/// Reads no further than the end of the index.
pub fn read_index<R: Read>(source: &mut R) -> Result<ContainerIndex> {
    let mut bytes = Vec::with_capacity(HEADER_LEN as usize);
    source.take(HEADER_LEN).read_to_end(&mut bytes)?;
    if bytes.len() == HEADER_LEN as usize && &bytes[..4] == MAGIC {
        let index_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        source.take(index_len).read_to_end(&mut bytes)?;
    }
    parse_header(&bytes)
}

pub fn read_checkpoint<R: Read>(source: &mut R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let index = parse_header(bytes)?;
    let start = index.data_start;
    let block = |name: &str, off: u64, len: u64| -> Result<&[u8]> {
        let lo = start + off;
        let hi = lo + len;
        if hi > bytes.len() as u64 {
            return Err(Error::Truncated(name.to_string()));
        }
        Ok(&bytes[lo as usize..hi as usize])
    };

    let mut ckpt = Checkpoint::new();
    ckpt.meta = index.meta.clone();
    for r in &index.records {
        let data = block(&r.name, r.data_offset, r.data_len)?;
        let shape = r.storage.shape.clone();
        let payload = match r.storage.dtype {
            DType::F32 => {
                let v: Vec<f32> = data
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                let t = Tensor::new(shape, v)?;
                t.ensure_finite(&r.name)?;
                Payload::F32(t)
            }
            DType::F16 => {
                let v: Vec<f16> = data
                    .chunks_exact(2)
                    .map(|c| f16::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                if v.iter().any(|h| !h.is_finite()) {
                    return Err(Error::NonFinite(r.name.clone()));
                }
                Payload::F16(HalfTensor::from_raw(shape, v))
            }
            DType::QLin | DType::QLog => {
                let scales: Vec<f16> = block(&r.name, r.scale_offset, r.scale_len)?
                    .chunks_exact(2)
                    .map(|c| f16::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                let scheme = if r.storage.dtype == DType::QLin {
                    Scheme::LinearAbsMax
                } else {
                    Scheme::LogScale
                };
                let q = QuantizedTensor::from_parts(
                    scheme,
                    Bits::new(r.storage.bits as u32)?,
                    r.storage.granularity.expect("validated"),
                    &shape,
                    data.to_vec(),
                    scales,
                )
                .map_err(|e| inconsistent(&r.name, e.to_string()))?;
                Payload::Quantized(q)
            }
        };
        ckpt.push(r.name.clone(), r.group, payload)?;
    }
    let end = start + data_end(&index.records);
    match (bytes.len() as u64).cmp(&end) {
        std::cmp::Ordering::Less => return Err(Error::Truncated("data section padding".into())),
        std::cmp::Ordering::Greater => {
            return Err(inconsistent(
                "<container>",
                format!("{} trailing bytes", bytes.len() as u64 - end),
            ))
        }
        std::cmp::Ordering::Equal => {}
    }
    Ok(ckpt)
}

pub fn save(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<u64> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    let n = write_checkpoint(ckpt, &mut f)?;
    f.flush()?;
    Ok(n)
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}

/// Best-effort group for a tensor name following this crate's naming scheme.
pub fn infer_group(name: &str) -> LayerGroup {
    if name.contains(".expert.") {
        LayerGroup::ExpertFFN
    } else if name.contains(".router.") {
        LayerGroup::Router
    } else if name.contains(".ffn.") {
        LayerGroup::DenseFFN
    } else if name.contains(".self_attn.") {
        LayerGroup::SelfAttention
    } else if name.contains(".cross_attn.") {
        LayerGroup::CrossAttention
    } else if name.starts_with("embed") {
        LayerGroup::Embedding
    } else {
        LayerGroup::Other
    }
}

/// Ingests a directory of raw little-endian `f32` tensors.
///
/// Each tensor `<name>` has a `<name>.bin` payload and a `<name>.shape`
/// sidecar whose first line lists the dimensions separated by whitespace. An
/// optional `group=<tag>` line overrides the group inferred from the name. An
/// optional `meta.txt` holds `key=value` metadata lines. Tensors are ordered
/// by name.
pub fn read_raw_dir(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension()? == "shape").then(|| p.file_stem()?.to_str().map(str::to_string))?
        })
        .collect();
    names.sort();

    let mut ckpt = Checkpoint::new();
    let meta_path = dir.join("meta.txt");
    if meta_path.exists() {
        for line in fs::read_to_string(meta_path)?.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("meta.txt: expected key=value, got {line:?}"))
            })?;
            ckpt.set_meta(k.trim(), v.trim())?;
        }
    }
    for name in names {
        let sidecar = fs::read_to_string(dir.join(format!("{name}.shape")))?;
        let mut lines = sidecar.lines();
        let shape = lines
            .next()
            .unwrap_or("")
            .split_whitespace()
            .map(|d| {
                d.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("{name}.shape: bad dimension {d:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut group = infer_group(&name);
        for l in lines {
            if let Some(tag) = l.trim().strip_prefix("group=") {
                group = tag.trim().parse()?;
            }
        }
        let raw = fs::read(dir.join(format!("{name}.bin")))?;
        let numel: usize = shape.iter().product();
        if raw.len() != 4 * numel {
            return Err(Error::Truncated(format!(
                "{name}.bin: {} bytes, expected {}",
                raw.len(),
                4 * numel
            )));
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data)?;
        t.ensure_finite(&name)?;
        ckpt.push_f32(name, group, t)?;
    }
    Ok(ckpt)
}

/// Writes the float view of every tensor in the raw-directory layout read by
/// [`read_raw_dir`].
pub fn write_raw_dir(ckpt: &Checkpoint, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for e in ckpt.entries() {
        if e.name.contains(['/', '\\']) {
            return Err(Error::InvalidName(e.name.clone()));
        }
        let t = e.payload.to_tensor();
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        fs::write(
            dir.join(format!("{}.shape", e.name)),
            format!("{}\ngroup={}\n", dims.join(" "), e.group),
        )?;
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(format!("{}.bin", e.name)), bytes)?;
    }
    if !ckpt.meta().is_empty() {
        let text: String = ckpt
            .meta()
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        fs::write(dir.join("meta.txt"), text)?;
    }
    Ok(())
}
