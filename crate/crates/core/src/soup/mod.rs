//! Checkpoint tensors and weighted parameter averaging.
//!
//! Averaging accumulates in f64 regardless of the storage dtype and rounds
//! once, to nearest-even, into the common input dtype.

mod container;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use container::{from_bytes, load_checkpoint, save_checkpoint, to_bytes};

/// Tolerance on the weight sum passed to [`soup`].
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Metadata key holding the weights a soup was built with.
pub const WEIGHTS_METADATA_KEY: &str = "soup.weights";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DType {
    F16,
    BF16,
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F16 | DType::BF16 => 2,
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F16 => "F16",
            DType::BF16 => "BF16",
            DType::F32 => "F32",
            DType::F64 => "F64",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "F16" => Ok(DType::F16),
            "BF16" => Ok(DType::BF16),
            "F32" => Ok(DType::F32),
            "F64" => Ok(DType::F64),
            other => Err(Error::UnsupportedDtype(other.to_string())),
        }
    }

    fn read(self, bytes: &[u8], idx: usize) -> f64 {
        let at = idx * self.size();
        match self {
            DType::F16 => {
                half::f16::from_bits(u16::from_le_bytes([bytes[at], bytes[at + 1]])).to_f64()
            }
            DType::BF16 => {
                half::bf16::from_bits(u16::from_le_bytes([bytes[at], bytes[at + 1]])).to_f64()
            }
            DType::F32 => f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64,
            DType::F64 => f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()),
        }
    }

    /// Rounds `v` to nearest-even in this dtype and appends its bytes.
    fn write(self, v: f64, out: &mut Vec<u8>) {
        match self {
            DType::F16 => {
                let r = round_to_precision(v, 10, -14, 65504.0);
                out.extend_from_slice(&half::f16::from_f64(r).to_bits().to_le_bytes());
            }
            DType::BF16 => {
                let r = round_to_precision(v, 7, -126, 3.389_531_389_251_535e38);
                out.extend_from_slice(&half::bf16::from_f64(r).to_bits().to_le_bytes());
            }
            DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

/// Correct round-to-nearest-even of an f64 into a binary format with
/// `mant_bits` stored mantissa bits, minimum normal exponent `min_exp` and
/// largest finite value `max_finite`. The result is exactly representable in
/// that format, so narrowing its bits afterwards is lossless.
fn round_to_precision(v: f64, mant_bits: i32, min_exp: i32, max_finite: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    let biased = ((v.to_bits() >> 52) & 0x7ff) as i32;
    let exp = if biased == 0 { -1023 } else { biased - 1023 };
    let quantum = 2f64.powi(exp.max(min_exp) - mant_bits);
    let r = (v / quantum).round_ties_even() * quantum;
    if r.abs() > max_finite {
        f64::INFINITY.copysign(v)
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    dtype: DType,
    shape: Vec<usize>,
    data: Vec<u8>,
}

impl Tensor {
    pub fn new(dtype: DType, shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        let expected = shape.iter().product::<usize>() * dtype.size();
        if data.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "tensor of shape {shape:?} {} needs {expected} bytes, got {}",
                dtype.name(),
                data.len()
            )));
        }
        Ok(Self { dtype, shape, data })
    }

    /// Stores `values` in `dtype`, rounding to nearest-even.
    pub fn from_f64(dtype: DType, shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        let mut data = Vec::with_capacity(values.len() * dtype.size());
        for &v in values {
            dtype.write(v, &mut data);
        }
        Self::new(dtype, shape, data)
    }

    pub fn from_f32(shape: Vec<usize>, values: &[f32]) -> Result<Self> {
        let data = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self::new(DType::F32, shape, data)
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.dtype.read(&self.data, idx)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.numel()).map(|i| self.get(i)).collect()
    }
}

/// Named tensors plus string metadata; iteration is sorted by name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TensorMap {
    tensors: BTreeMap<String, Tensor>,
    metadata: BTreeMap<String, String>,
}

impl TensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.metadata
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MismatchKind {
    Missing,
    Shape,
    Dtype,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub tensor: String,
    pub kind: MismatchKind,
    pub details: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub compatible: bool,
    pub mismatches: Vec<Mismatch>,
}

impl CompatibilityReport {
    /// Aligned plain-text table of the mismatches.
    pub fn render_table(&self) -> String {
        let width = self
            .mismatches
            .iter()
            .map(|m| m.tensor.len())
            .max()
            .unwrap_or(0)
            .max("tensor".len());
        let mut out = format!("{:<width$}  {:<7}  details\n", "tensor", "kind");
        for m in &self.mismatches {
            let kind = match m.kind {
                MismatchKind::Missing => "missing",
                MismatchKind::Shape => "shape",
                MismatchKind::Dtype => "dtype",
            };
            out.push_str(&format!("{:<width$}  {:<7}  {}\n", m.tensor, kind, m.details));
        }
        out
    }
}

/// Reports every tensor not present in all models and every shape or dtype
/// disagreement against the first model holding that tensor.
pub fn check_compatible(models: &[TensorMap]) -> CompatibilityReport {
    let mut names: Vec<&String> = models.iter().flat_map(|m| m.tensors.keys()).collect();
    names.sort();
    names.dedup();

    let mut mismatches = Vec::new();
    for name in names {
        let absent: Vec<usize> = (0..models.len())
            .filter(|&i| !models[i].tensors.contains_key(name))
            .collect();
        if !absent.is_empty() {
            mismatches.push(Mismatch {
                tensor: name.clone(),
                kind: MismatchKind::Missing,
                details: format!("absent from model(s) {absent:?}"),
            });
            continue;
        }
        let reference = &models[0].tensors[name];
        for (i, m) in models.iter().enumerate().skip(1) {
            let t = &m.tensors[name];
            if t.shape != reference.shape {
                mismatches.push(Mismatch {
                    tensor: name.clone(),
                    kind: MismatchKind::Shape,
                    details: format!("model 0 {:?} vs model {i} {:?}", reference.shape, t.shape),
                });
            }
            if t.dtype != reference.dtype {
                mismatches.push(Mismatch {
                    tensor: name.clone(),
                    kind: MismatchKind::Dtype,
                    details: format!(
                        "model 0 {} vs model {i} {}",
                        reference.dtype.name(),
                        t.dtype.name()
                    ),
                });
            }
        }
    }
    CompatibilityReport {
        compatible: mismatches.is_empty(),
        mismatches,
    }
}

/// Elementwise weighted average `sum_i w_i * x_i`.
///
/// Products are formed in f64, summed in a canonical order (sorted by value,
/// compensated), and rounded once into the storage dtype. The canonical order
/// makes the result independent of model order and of thread scheduling.
pub fn soup(models: &[TensorMap], weights: &[f64]) -> Result<TensorMap> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("soup of zero models".into()));
    }
    if weights.len() != models.len() {
        return Err(Error::InvalidArgument(format!(
            "{} models but {} weights",
            models.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "soup weight {w} must be finite and nonnegative"
        )));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "soup weights sum to {total}, expected 1"
        )));
    }
    let report = check_compatible(models);
    if !report.compatible {
        return Err(Error::Incompatible(report));
    }

    let names: Vec<&String> = models[0].tensors.keys().collect();
    let averaged: Vec<(String, Tensor)> = names
        .par_iter()
        .map(|name| {
            let inputs: Vec<&Tensor> = models.iter().map(|m| &m.tensors[*name]).collect();
            ((*name).clone(), average_tensor(&inputs, weights))
        })
        .collect();

    let mut out = TensorMap::new();
    out.tensors.extend(averaged);
    out.metadata.insert(
        WEIGHTS_METADATA_KEY.to_string(),
        serde_json::to_string(weights).expect("f64 slice serializes"),
    );
    Ok(out)
}

fn average_tensor(inputs: &[&Tensor], weights: &[f64]) -> Tensor {
    let first = inputs[0];
    let dtype = first.dtype;
    let n = first.numel();
    let mut data = Vec::with_capacity(n * dtype.size());
    let mut terms = Vec::with_capacity(inputs.len());
    for idx in 0..n {
        terms.clear();
        terms.extend(inputs.iter().zip(weights).map(|(t, w)| w * t.get(idx)));
        dtype.write(canonical_sum(&mut terms), &mut data);
    }
    Tensor {
        dtype,
        shape: first.shape.clone(),
        data,
    }
}

/// Neumaier-compensated sum over the terms sorted by value.
fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_by(f64::total_cmp);
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &t in terms.iter() {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - s) + t;
        } else {
            comp += (t - s) + sum;
        }
        sum = s;
    }
    sum + comp
}
