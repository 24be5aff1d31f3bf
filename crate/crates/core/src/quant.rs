//! Linear (abs-max) and log-scale weight quantization with per-channel or
//! per-tensor scales.
//!
//! A channel is a column `A[:, j]` of the matrix as stored. Scales are always
//! binary16 values, so an in-memory tensor and its serialized form dequantize
//! to identical floats.

use std::fmt;
use std::str::FromStr;

use half::f16;

use crate::bitpack::{self, Bits, CodeArray};
use crate::error::{Error, Result};
use crate::tensor::{next_up_binary16, round_to_binary16, to_f16, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    LinearAbsMax,
    LogScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Granularity {
    PerChannel,
    PerTensor,
}

/// How the log-scale quantizer picks its scale `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LogScaleMode {
    AbsMax,
    #[default]
    MseOptimal,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::LinearAbsMax => "linear",
            Scheme::LogScale => "log",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Scheme::LinearAbsMax),
            "log" => Ok(Scheme::LogScale),
            _ => Err(Error::Parse(format!("unknown scheme {s:?}"))),
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::PerChannel => "channel",
            Granularity::PerTensor => "tensor",
        })
    }
}

impl FromStr for Granularity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channel" => Ok(Granularity::PerChannel),
            "tensor" => Ok(Granularity::PerTensor),
            _ => Err(Error::Parse(format!("unknown granularity {s:?}"))),
        }
    }
}

impl fmt::Display for LogScaleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogScaleMode::AbsMax => "absmax",
            LogScaleMode::MseOptimal => "mse",
        })
    }
}

impl FromStr for LogScaleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absmax" => Ok(LogScaleMode::AbsMax),
            "mse" => Ok(LogScaleMode::MseOptimal),
            _ => Err(Error::Parse(format!("unknown log scale mode {s:?}"))),
        }
    }
}

/// Packed integer codes plus binary16 scales for one weight matrix.
///
/// Linear codes are the signed integers `q`. Log codes hold a sign bit and an
/// exponent index `k` in the remaining `b-1` bits; the offset-binary field is
/// `u = (negative << (b-1)) | k` and the stored signed code is `u - 2^(b-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    scheme: Scheme,
    bits: Bits,
    granularity: Granularity,
    rows: usize,
    cols: usize,
    packed: Vec<u8>,
    scales: Vec<f16>,
}

impl QuantizedTensor {
    /// Reassembles a tensor from its serialized parts, checking every
    /// invariant.
    pub fn from_parts(
        scheme: Scheme,
        bits: Bits,
        granularity: Granularity,
        shape: &[usize],
        packed: Vec<u8>,
        scales: Vec<f16>,
    ) -> Result<Self> {
        let (rows, cols) = match *shape {
            [r, c] if r > 0 && c > 0 => (r, c),
            _ => {
                return Err(Error::Shape(format!(
                    "quantized tensors are 2-D, got {shape:?}"
                )))
            }
        };
        let expected = bitpack::packed_len(bits, rows * cols);
        if packed.len() != expected {
            return Err(Error::PackedLength {
                expected,
                actual: packed.len(),
                count: rows * cols,
            });
        }
        let n_scales = match granularity {
            Granularity::PerChannel => cols,
            Granularity::PerTensor => 1,
        };
        if scales.len() != n_scales {
            return Err(Error::Shape(format!(
                "expected {n_scales} scales, got {}",
                scales.len()
            )));
        }
        if scales
            .iter()
            .any(|s| !s.is_finite() || s.to_f32() < 0.0 || s.is_sign_negative())
        {
            return Err(Error::NonFinite(
                "scale (must be finite and non-negative)".into(),
            ));
        }
        Ok(Self {
            scheme,
            bits,
            granularity,
            rows,
            cols,
            packed,
            scales,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn bits(&self) -> Bits {
        self.bits
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn numel(&self) -> usize {
        self.rows * self.cols
    }

    pub fn packed_codes(&self) -> &[u8] {
        &self.packed
    }

    pub fn scales(&self) -> &[f16] {
        &self.scales
    }

    pub fn scales_f32(&self) -> Vec<f32> {
        self.scales.iter().map(|s| s.to_f32()).collect()
    }

    /// Scale applying to column `j`.
    pub fn scale_for(&self, j: usize) -> f32 {
        match self.granularity {
            Granularity::PerChannel => self.scales[j].to_f32(),
            Granularity::PerTensor => self.scales[0].to_f32(),
        }
    }

    pub fn codes(&self) -> CodeArray {
        bitpack::unpack(&self.packed, self.bits, self.numel())
            .expect("packed length checked at construction")
    }

    /// `(negative, k)` for every element of a log-scale tensor.
    pub fn log_fields(&self) -> Vec<(bool, u32)> {
        let half = 1i32 << (self.bits.get() - 1);
        self.codes()
            .codes()
            .iter()
            .map(|&q| {
                let u = q as i32 + half;
                (u >= half, (u & (half - 1)) as u32)
            })
            .collect()
    }

    /// Bytes occupied by codes and binary16 scales.
    pub fn resident_bytes(&self) -> usize {
        self.packed.len() + 2 * self.scales.len()
    }

    /// Dequantizes rows `start..start + out.len() / cols` into `out`.
    pub fn dequantize_rows(&self, start: usize, out: &mut [f32]) {
        let n = out.len();
        debug_assert_eq!(n % self.cols, 0);
        let mut codes = vec![0i8; n];
        bitpack::unpack_range(&self.packed, self.bits, start * self.cols, &mut codes);
        let scales: Vec<f32> = (0..self.cols).map(|j| self.scale_for(j)).collect();
        match self.scheme {
            Scheme::LinearAbsMax => {
                for (row_out, row_codes) in out.chunks_mut(self.cols).zip(codes.chunks(self.cols)) {
                    for ((o, &q), &s) in row_out.iter_mut().zip(row_codes).zip(&scales) {
                        *o = q as f32 * s;
                    }
                }
            }
            Scheme::LogScale => {
                let half = 1i32 << (self.bits.get() - 1);
                for (row_out, row_codes) in out.chunks_mut(self.cols).zip(codes.chunks(self.cols)) {
                    for ((o, &q), &s) in row_out.iter_mut().zip(row_codes).zip(&scales) {
                        let u = q as i32 + half;
                        *o = log_value(u >= half, (u & (half - 1)) as u32, s);
                    }
                }
            }
        }
    }
}

#[inline]
fn log_value(negative: bool, k: u32, s: f32) -> f32 {
    let v = (s as f64 * (-(k as f64)).exp2()) as f32;
    if negative {
        -v
    } else {
        v
    }
}

/// Per-column (or global) positive and negative magnitudes.
struct Extremes {
    pos: Vec<f32>,
    neg: Vec<f32>,
}

fn extremes(a: &Tensor, granularity: Granularity) -> Result<Extremes> {
    let (rows, cols) = a.dims2()?;
    a.ensure_finite("quantization input")?;
    let n = match granularity {
        Granularity::PerChannel => cols,
        Granularity::PerTensor => 1,
    };
    let mut pos = vec![0f32; n];
    let mut neg = vec![0f32; n];
    for i in 0..rows {
        for (j, &v) in a.row(i).iter().enumerate() {
            let c = if n == 1 { 0 } else { j };
            if v > 0.0 {
                pos[c] = pos[c].max(v);
            } else {
                neg[c] = neg[c].max(-v);
            }
        }
    }
    Ok(Extremes { pos, neg })
}

fn linear_scale(pos: f32, neg: f32, bits: Bits) -> Result<f32> {
    let max_abs = pos.max(neg) as f64;
    if max_abs == 0.0 {
        return Ok(0.0);
    }
    let levels = ((1u32 << bits.get()) - 1) as f64;
    let raw = 2.0 * max_abs / levels;
    let h = f16::from_f64(raw);
    if h.is_infinite() {
        return Err(Error::Binary16Overflow(raw as f32));
    }
    let s = h.to_f32();
    // Nearest rounding may leave the positive extreme (or, for tiny values,
    // either extreme) more than half a step beyond the last code.
    let half_levels = (1u32 << (bits.get() - 1)) as f64;
    let covers =
        |s: f64| s * (half_levels - 0.5) >= pos as f64 && s * (half_levels + 0.5) >= neg as f64;
    if covers(s as f64) {
        Ok(s)
    } else {
        next_up_binary16(s)
    }
}

/// Abs-max linear scales `s_j = 2 max|A[:, j]| / (2^b - 1)`, rounded to
/// binary16. One scale per column, or one total for `PerTensor`.
pub fn linear_scales(a: &Tensor, bits: Bits, granularity: Granularity) -> Result<Vec<f32>> {
    let ex = extremes(a, granularity)?;
    ex.pos
        .iter()
        .zip(&ex.neg)
        .map(|(&p, &n)| linear_scale(p, n, bits))
        .collect()
}

#[inline]
fn linear_code(a: f32, s: f32, bits: Bits) -> i8 {
    if s == 0.0 {
        return 0;
    }
    let q = (a as f64 / s as f64).round_ties_even();
    q.clamp(bits.min_code() as f64, bits.max_code() as f64) as i8
}

pub fn quantize_linear(
    a: &Tensor,
    bits: Bits,
    granularity: Granularity,
) -> Result<QuantizedTensor> {
    let scales = linear_scales(a, bits, granularity)?;
    let (rows, cols) = a.dims2()?;
    let per_tensor = granularity == Granularity::PerTensor;
    let mut codes = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for (j, &v) in a.row(i).iter().enumerate() {
            codes.push(linear_code(v, scales[if per_tensor { 0 } else { j }], bits));
        }
    }
    let codes = CodeArray::new(bits, codes)?;
    finish(
        Scheme::LinearAbsMax,
        bits,
        granularity,
        rows,
        cols,
        &codes,
        &scales,
    )
}

/// Exponent index `k = -ceil(log2(2t/3))` for `t = clip(|a|/s, 2^(1-m), 1)`,
/// `m = 2^(b-1)`.
///
/// `ceil(log2(2t/3))` is the smallest integer `q` with `t <= 1.5 * 2^q`; the
/// search is done with that exact comparison so powers of two and midpoints
/// land deterministically.
pub fn log_exponent(abs_a: f32, s: f32, bits: Bits) -> u32 {
    let m = 1i32 << (bits.get() - 1);
    let lo = 1 - m;
    if s == 0.0 {
        return (m - 1) as u32;
    }
    let t = (abs_a as f64 / s as f64).clamp((lo as f64).exp2(), 1.0);
    let step = |q: i32| 1.5 * (q as f64).exp2();
    let mut q = ((t / 1.5).log2().ceil() as i32).clamp(lo, 0);
    while q > lo && t <= step(q - 1) {
        q -= 1;
    }
    while q < 0 && t > step(q) {
        q += 1;
    }
    (-q) as u32
}

fn log_code(a: f32, s: f32, bits: Bits) -> (i8, f32) {
    let half = 1i32 << (bits.get() - 1);
    let negative = a.is_sign_negative() && a != 0.0;
    let k = log_exponent(a.abs(), s, bits);
    let u = ((negative as i32) << (bits.get() - 1)) | k as i32;
    ((u - half) as i8, log_value(negative, k, s))
}

/// Sum of squared reconstruction errors of `column` under log-scale `s`.
fn log_sse(column: &[f32], s: f32, bits: Bits) -> f64 {
    column
        .iter()
        .map(|&a| {
            let (_, r) = log_code(a, s, bits);
            let e = a as f64 - r as f64;
            e * e
        })
        .sum()
}

/// MSE-optimal log scale for one group of values.
///
/// For a fixed assignment of exponents the squared error is a quadratic in
/// `s` whose minimizer is the least-squares scale `sum(a d) / sum(d^2)` with
/// `d = sign(a) 2^-k`. The assignment only changes where `|a| / s` crosses
/// `1.5 * 2^-j`, so sweeping those breakpoints in order and minimizing each
/// quadratic on its interval yields the global minimizer. The result is
/// rounded to binary16 (checking both neighbours and the rounded abs-max
/// scale), so it is never worse than abs-max.
pub fn fit_log_scale(column: &[f32], bits: Bits) -> Result<f32> {
    if column.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log scale input".into()));
    }
    let max_abs = column.iter().fold(0f32, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Err(Error::ZeroColumn);
    }
    let s = sweep_log_scale(column, bits);

    let abs_max = round_to_binary16(max_abs)?;
    let mut best = (abs_max, log_sse(column, abs_max, bits));
    let mut try_near = |s: f64| {
        let h = f16::from_f64(s);
        if !(h.is_finite() && h.to_f32() > 0.0) {
            return;
        }
        for c in [
            h,
            f16::from_bits(h.to_bits() - 1),
            f16::from_bits(h.to_bits() + 1),
        ] {
            let c = c.to_f32();
            if c.is_finite() && c > 0.0 {
                let e = log_sse(column, c, bits);
                if e < best.1 {
                    best = (c, e);
                }
            }
        }
    };
    // Below the normal binary16 range scales lose relative precision, and
    // doubling the scale while shifting every exponent by one can round
    // closer; try those shifts until the scale is normal.
    let m = 1u32 << (bits.get() - 1);
    for j in 0..m {
        let shifted = s * (j as f64).exp2();
        try_near(shifted);
        if shifted >= f16::MIN_POSITIVE.to_f64() {
            break;
        }
    }
    // Prefer the smallest of scales that differ by powers of two and give
    // the same error.
    while best.0 > max_abs {
        let half = best.0 * 0.5;
        let e = log_sse(column, half, bits);
        if e > best.1 || f16::from_f32(half).to_f32() != half {
            break;
        }
        best = (half, e);
    }
    Ok(best.0)
}

/// Unrounded global minimizer of the log-scale squared error.
fn sweep_log_scale(column: &[f32], bits: Bits) -> f64 {
    let m = 1usize << (bits.get() - 1);
    // Past a few times abs-max every nonzero exponent is at least two, and
    // halving the scale reproduces the same levels, so the sweep stops
    // there. This also keeps the running sums away from cancellation.
    let cap = 8.0 * column.iter().fold(0f64, |m, v| m.max(v.abs() as f64));
    // Exponent of element a is #{j in 1..m : s >= |a| 2^j / 1.5}; zeros sit
    // at k = m - 1 for every s > 0.
    let mut events: Vec<(f64, usize)> = Vec::new();
    let (mut num, mut den, mut total) = (0f64, 0f64, 0f64);
    for (i, &a) in column.iter().enumerate() {
        let x = a.abs() as f64;
        total += x * x;
        if x == 0.0 {
            let d = (-((m - 1) as f64)).exp2();
            den += d * d;
            continue;
        }
        num += x;
        den += 1.0;
        for j in 1..m {
            let at = x * (j as f64).exp2() / 1.5;
            if at > cap {
                break;
            }
            events.push((at, i));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut exps = vec![0usize; column.len()];
    let mut best = (f64::INFINITY, 0f64);
    let mut consider = |num: f64, den: f64, lo: f64, hi: f64| {
        let free = num / den;
        let s = free.clamp(lo, hi);
        let sse = (total - num * free).max(0.0) + den * (s - free) * (s - free);
        if s > 0.0 && sse < best.0 {
            best = (sse, s);
        }
    };
    let mut lo = 0f64;
    let mut idx = 0;
    while idx < events.len() {
        let hi = events[idx].0;
        consider(num, den, lo, hi);
        // Apply every event at this breakpoint.
        while idx < events.len() && events[idx].0 == hi {
            let i = events[idx].1;
            let x = column[i].abs() as f64;
            let old = (-(exps[i] as f64)).exp2();
            let new = old * 0.5;
            exps[i] += 1;
            num += x * (new - old);
            den += new * new - old * old;
            idx += 1;
        }
        lo = hi;
    }
    consider(num, den, lo, cap.max(lo));
    best.1
}

pub fn quantize_log(
    a: &Tensor,
    bits: Bits,
    granularity: Granularity,
    mode: LogScaleMode,
) -> Result<QuantizedTensor> {
    let (rows, cols) = a.dims2()?;
    let ex = extremes(a, granularity)?;
    let groups: Vec<Vec<f32>> = match granularity {
        Granularity::PerTensor => vec![a.data().to_vec()],
        Granularity::PerChannel => (0..cols)
            .map(|j| (0..rows).map(|i| a.data()[i * cols + j]).collect())
            .collect(),
    };
    let scales = groups
        .iter()
        .zip(ex.pos.iter().zip(&ex.neg))
        .map(|(g, (&p, &n))| {
            let max_abs = p.max(n);
            if max_abs == 0.0 {
                return Ok(0.0);
            }
            match mode {
                LogScaleMode::AbsMax => round_to_binary16(max_abs),
                LogScaleMode::MseOptimal => fit_log_scale(g, bits),
            }
        })
        .collect::<Result<Vec<f32>>>()?;

    let per_tensor = granularity == Granularity::PerTensor;
    let mut codes = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for (j, &v) in a.row(i).iter().enumerate() {
            codes.push(log_code(v, scales[if per_tensor { 0 } else { j }], bits).0);
        }
    }
    let codes = CodeArray::new(bits, codes)?;
    finish(
        Scheme::LogScale,
        bits,
        granularity,
        rows,
        cols,
        &codes,
        &scales,
    )
}

/// Dispatches on `scheme`; `mode` only affects the log scheme.
pub fn quantize(
    a: &Tensor,
    scheme: Scheme,
    bits: Bits,
    granularity: Granularity,
    mode: LogScaleMode,
) -> Result<QuantizedTensor> {
    match scheme {
        Scheme::LinearAbsMax => quantize_linear(a, bits, granularity),
        Scheme::LogScale => quantize_log(a, bits, granularity, mode),
    }
}

fn finish(
    scheme: Scheme,
    bits: Bits,
    granularity: Granularity,
    rows: usize,
    cols: usize,
    codes: &CodeArray,
    scales: &[f32],
) -> Result<QuantizedTensor> {
    let scales = scales
        .iter()
        .map(|&s| to_f16(s))
        .collect::<Result<Vec<_>>>()?;
    QuantizedTensor::from_parts(
        scheme,
        bits,
        granularity,
        &[rows, cols],
        bitpack::pack(codes),
        scales,
    )
}

pub fn dequantize(qt: &QuantizedTensor) -> Tensor {
    let mut data = vec![0f32; qt.numel()];
    qt.dequantize_rows(0, &mut data);
    Tensor::new(vec![qt.rows, qt.cols], data).expect("shape checked at construction")
}

/// Reconstruction error between a tensor and a dequantized approximation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorReport {
    pub max_abs_err: f64,
    pub mse: f64,
    pub relative_frobenius_err: f64,
}

impl ErrorReport {
    pub fn between(original: &[f32], approx: &[f32]) -> Result<Self> {
        if original.len() != approx.len() {
            return Err(Error::Shape(format!(
                "{} values vs {}",
                original.len(),
                approx.len()
            )));
        }
        let mut acc = ErrorAccumulator::default();
        acc.add(original, approx);
        Ok(acc.finish())
    }
}

/// Streams element pairs into an aggregate [`ErrorReport`].
#[derive(Debug, Clone, Default)]
pub struct ErrorAccumulator {
    max_abs: f64,
    sum_sq_err: f64,
    sum_sq_ref: f64,
    count: usize,
}

impl ErrorAccumulator {
    pub fn add(&mut self, original: &[f32], approx: &[f32]) {
        for (&a, &b) in original.iter().zip(approx) {
            let e = a as f64 - b as f64;
            self.max_abs = self.max_abs.max(e.abs());
            self.sum_sq_err += e * e;
            self.sum_sq_ref += a as f64 * a as f64;
        }
        self.count += original.len().min(approx.len());
    }

    pub fn finish(&self) -> ErrorReport {
        if self.count == 0 {
            return ErrorReport::default();
        }
        ErrorReport {
            max_abs_err: self.max_abs,
            mse: self.sum_sq_err / self.count as f64,
            relative_frobenius_err: if self.sum_sq_ref == 0.0 {
                0.0
            } else {
                (self.sum_sq_err / self.sum_sq_ref).sqrt()
            },
        }
    }
}

pub fn quant_error(a: &Tensor, qt: &QuantizedTensor) -> Result<ErrorReport> {
    if a.shape() != qt.shape() {
        return Err(Error::Shape(format!(
            "tensor {:?} vs quantized {:?}",
            a.shape(),
            qt.shape()
        )));
    }
    ErrorReport::between(a.data(), dequantize(qt).data())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f32]) -> Tensor {
        Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn linear_scale_examples() {
        let s = linear_scales(&col(&[0.5, -1.0, 0.25]), Bits::B2, Granularity::PerChannel).unwrap();
        assert_eq!(s, vec![0.66650390625]);
        let s = linear_scales(&col(&[0.0, 0.0]), Bits::B4, Granularity::PerChannel).unwrap();
        assert_eq!(s, vec![0.0]);
        let s = linear_scales(&col(&[7.5]), Bits::B4, Granularity::PerChannel).unwrap();
        assert_eq!(s, vec![1.0]);
    }

    #[test]
    fn linear_codes_examples() {
        let qt =
            quantize_linear(&col(&[0.5, -1.0, 0.25]), Bits::B2, Granularity::PerChannel).unwrap();
        assert_eq!(qt.codes().codes(), &[1, -2, 0]);
        assert_eq!(dequantize(&qt).data(), &[0.66650390625, -1.3330078125, 0.0]);

        let z = quantize_linear(
            &Tensor::zeros(vec![3, 4]),
            Bits::B3,
            Granularity::PerChannel,
        )
        .unwrap();
        assert!(z.codes().codes().iter().all(|&c| c == 0));
        assert!(dequantize(&z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn positive_extreme_keeps_half_step_bound() {
        // 2/15 rounds down to 1092 * 2^-13, which would leave +1.0 clamped at
        // code 7 more than half a step away; the scale moves up one ulp.
        let qt = quantize_linear(&col(&[1.0, -1.0]), Bits::B4, Granularity::PerChannel).unwrap();
        let s = qt.scale_for(0);
        assert_eq!(s, 1093.0 * (-13f32).exp2());
        assert_eq!(qt.codes().codes(), &[7, -7]);
        let back = dequantize(&qt);
        for (a, r) in [1.0f32, -1.0].iter().zip(back.data()) {
            assert!((a - r).abs() <= s / 2.0);
        }
    }

    #[test]
    fn log_examples() {
        // a = 0.3, s = 1, b = 3: (2/3) 0.3 = 0.2, ceil(log2 0.2) = -2.
        assert_eq!(log_exponent(0.3, 1.0, Bits::B3), 2);
        assert_eq!(log_code(0.3, 1.0, Bits::B3).1, 0.25);
        // Top of the range.
        assert_eq!(log_exponent(1.0, 1.0, Bits::B3), 0);
        assert_eq!(log_code(-1.0, 1.0, Bits::B3).1, -1.0);
        // Clip branch.
        assert_eq!(log_exponent(0.001, 1.0, Bits::B3), 3);
        assert_eq!(log_code(0.001, 1.0, Bits::B3).1, 0.125);
        // Dequantize p = +1, s = 1, k = 2.
        assert_eq!(log_value(false, 2, 1.0), 0.25);
    }

    #[test]
    fn log_midpoints_pick_lower_value() {
        assert_eq!(log_exponent(0.75, 1.0, Bits::B4), 1);
        assert_eq!(log_exponent(0.375, 1.0, Bits::B4), 2);
    }

    #[test]
    fn log_zero_column_and_signs() {
        let qt = quantize_log(
            &Tensor::new(vec![2, 2], vec![0.0, 0.5, 0.0, -0.25]).unwrap(),
            Bits::B3,
            Granularity::PerChannel,
            LogScaleMode::AbsMax,
        )
        .unwrap();
        assert_eq!(qt.scale_for(0), 0.0);
        let back = dequantize(&qt);
        assert_eq!(back.data(), &[0.0, 0.5, 0.0, -0.25]);
        let fields = qt.log_fields();
        assert_eq!(fields[0], (false, 3));
        assert_eq!(fields[3], (true, 1));
    }

    #[test]
    fn fit_log_scale_examples() {
        assert_eq!(
            fit_log_scale(&[-0.7], Bits::B3).unwrap(),
            round_to_binary16(0.7).unwrap()
        );
        assert_eq!(
            fit_log_scale(&[1.0, 0.5, 0.25, 0.125], Bits::B4).unwrap(),
            1.0
        );
        assert!(matches!(
            fit_log_scale(&[0.0, 0.0], Bits::B4),
            Err(Error::ZeroColumn)
        ));
    }

    #[test]
    fn quant_error_examples() {
        let z = Tensor::zeros(vec![4, 4]);
        let qt = quantize_linear(&z, Bits::B8, Granularity::PerChannel).unwrap();
        assert_eq!(quant_error(&z, &qt).unwrap(), ErrorReport::default());

        // Signed powers of two below the abs-max sit exactly on the log grid.
        let grid = col(&[1.0, -0.5, 0.25, -0.125]);
        let qt = quantize_log(
            &grid,
            Bits::B8,
            Granularity::PerTensor,
            LogScaleMode::AbsMax,
        )
        .unwrap();
        assert_eq!(quant_error(&grid, &qt).unwrap().mse, 0.0);

        assert!(quant_error(&Tensor::zeros(vec![2, 2]), &qt).is_err());
    }

    #[test]
    fn rejects_non_finite_and_overflow() {
        assert!(matches!(
            quantize_linear(&col(&[f32::NAN]), Bits::B4, Granularity::PerTensor),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            quantize_linear(&col(&[1e9]), Bits::B2, Granularity::PerTensor),
            Err(Error::Binary16Overflow(_))
        ));
        assert!(quantize_log(
            &col(&[1e6]),
            Bits::B4,
            Granularity::PerTensor,
            LogScaleMode::AbsMax
        )
        .is_err());
    }
}
