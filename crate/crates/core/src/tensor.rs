//! Dense row-major tensors, binary16 rounding, and the layer-group tags
//! carried by every checkpoint entry.

use std::fmt;
use std::str::FromStr;

use half::f16;

use crate::error::{Error, Result};

/// Dense row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero dimension in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn from_rows(rows: &[&[f32]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Shape(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let cols = *self.shape.last().unwrap_or(&1);
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }
}

/// Tensor whose values live in memory as IEEE-754 binary16.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfTensor {
    shape: Vec<usize>,
    data: Vec<f16>,
}

impl HalfTensor {
    /// Rounds every value of `t` to the nearest binary16.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let data = t
            .data()
            .iter()
            .map(|&v| to_f16(v))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            shape: t.shape().to_vec(),
            data,
        })
    }

    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f16>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f16] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|h| h.to_f32()).collect(),
        }
    }
}

pub(crate) fn to_f16(x: f32) -> Result<f16> {
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("value {x}")));
    }
    let h = f16::from_f32(x);
    if h.is_infinite() {
        return Err(Error::Binary16Overflow(x));
    }
    Ok(h)
}

/// Nearest binary16 value of `x` (round-to-nearest-even), widened back to
/// `f32`. Values that round to binary16 infinity are rejected.
pub fn round_to_binary16(x: f32) -> Result<f32> {
    to_f16(x).map(f16::to_f32)
}

/// Smallest binary16 value strictly greater than the non-negative,
/// binary16-representable `x`.
pub(crate) fn next_up_binary16(x: f32) -> Result<f32> {
    let h = to_f16(x)?;
    debug_assert!(h.to_f32() == x && x >= 0.0);
    let up = f16::from_bits(h.to_bits() + 1);
    if up.is_infinite() {
        return Err(Error::Binary16Overflow(x));
    }
    Ok(up.to_f32())
}

/// Which part of the network a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LayerGroup {
    ExpertFFN,
    DenseFFN,
    SelfAttention,
    CrossAttention,
    Embedding,
    Router,
    Other,
}

impl LayerGroup {
    pub const ALL: [LayerGroup; 7] = [
        LayerGroup::ExpertFFN,
        LayerGroup::DenseFFN,
        LayerGroup::SelfAttention,
        LayerGroup::CrossAttention,
        LayerGroup::Embedding,
        LayerGroup::Router,
        LayerGroup::Other,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            LayerGroup::ExpertFFN => "expert_ffn",
            LayerGroup::DenseFFN => "dense_ffn",
            LayerGroup::SelfAttention => "self_attn",
            LayerGroup::CrossAttention => "cross_attn",
            LayerGroup::Embedding => "embedding",
            LayerGroup::Router => "router",
            LayerGroup::Other => "other",
        }
    }
}

impl fmt::Display for LayerGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for LayerGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LayerGroup::ALL
            .into_iter()
            .find(|g| g.tag() == s)
            .ok_or_else(|| Error::Parse(format!("unknown layer group {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary16_examples() {
        assert_eq!(round_to_binary16(1.0).unwrap(), 1.0);
        assert_eq!(round_to_binary16(0.1).unwrap(), 0.0999755859375);
        assert_eq!(round_to_binary16(65504.0).unwrap(), 65504.0);
        assert!(matches!(
            round_to_binary16(65520.0),
            Err(Error::Binary16Overflow(_))
        ));
        assert!(round_to_binary16(f32::NAN).is_err());
    }

    #[test]
    fn binary16_oracle_by_enumeration() {
        // Independent oracle: nearest of all finite binary16 values, ties to
        // the even significand.
        let table: Vec<f64> = (0u16..0x7c00).map(|b| f16::from_bits(b).to_f64()).collect();
        let oracle = |x: f32| -> f64 {
            let ax = (x as f64).abs();
            let i = table.partition_point(|&v| v < ax);
            let cand = if i == 0 {
                table[0]
            } else if i == table.len() {
                table[i - 1]
            } else {
                let (lo, hi) = (table[i - 1], table[i]);
                match (ax - lo).partial_cmp(&(hi - ax)).unwrap() {
                    std::cmp::Ordering::Less => lo,
                    std::cmp::Ordering::Greater => hi,
                    std::cmp::Ordering::Equal => {
                        if (i - 1) % 2 == 0 {
                            lo
                        } else {
                            hi
                        }
                    }
                }
            };
            cand.copysign(x as f64)
        };
        for x in [
            0.1f32,
            0.3,
            2.0 / 3.0,
            1e-5,
            3.0e-8,
            1234.567,
            -7.77,
            65503.0,
        ] {
            assert_eq!(round_to_binary16(x).unwrap() as f64, oracle(x), "x = {x}");
        }
    }

    #[test]
    fn binary16_idempotent_and_monotone() {
        let mut prev = f32::NEG_INFINITY;
        for i in -2000..2000 {
            let x = i as f32 * 0.0137;
            let r = round_to_binary16(x).unwrap();
            assert_eq!(round_to_binary16(r).unwrap(), r);
            assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn next_up_steps_one_ulp() {
        assert_eq!(next_up_binary16(1.0).unwrap(), 1.0009765625);
        assert_eq!(next_up_binary16(0.0).unwrap(), f16::from_bits(1).to_f32());
        assert!(next_up_binary16(65504.0).is_err());
    }

    #[test]
    fn tensor_rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::new(vec![2, 3], (0..6).map(|v| v as f32).collect()).unwrap();
        assert_eq!(t.row(1), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn group_tags_round_trip() {
        for g in LayerGroup::ALL {
            assert_eq!(g.tag().parse::<LayerGroup>().unwrap(), g);
        }
    }
}
