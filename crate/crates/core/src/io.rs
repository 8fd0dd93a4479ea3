//! Binary model files and activation files.
//!
//! Model file, all integers little-endian:
//!
//! ```text
//! "SSNN1" u16 version u32 layer_count
//! per layer: u8 tag, u32 C, u32 k, u32 d, payload
//!   tag 0 linear      C = outputs, k = inputs, d = 0; f32 W[C·k], f32 b[C]
//!   tag 1 float       f32 W[C·k], f32 γ[C], β[C], μ[C], σ²[C], f32 ε
//!   tag 2 quantized   i8 sign[C·k], i8 exponent[C·k], f32 b_f[C]
//! ```
//!
//! Activation file: one text header line
//! `SSNA1 shape=T,N,C[,S..] layout=<layout> dtype=<f32|f64>` followed by the
//! raw little-endian buffer in the layout's physical order.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::network::{InferenceModel, LinearLayer, ModelLayer};
use crate::neuron::ThresholdParams;
use crate::quant::ShiftWeights;
use crate::tensor::{Dims, Layout, Matrix, TemporalTensor, MAX_SPATIAL_AXES};

pub const MODEL_MAGIC: &[u8; 5] = b"SSNN1";
pub const MODEL_VERSION: u16 = 1;
pub const ACTIVATION_MAGIC: &str = "SSNA1";

const TAG_LINEAR: u8 = 0;
const TAG_FLOAT: u8 = 1;
const TAG_QUANTIZED: u8 = 2;

/// Largest extent accepted from a file, to reject garbage before allocating.
const MAX_EXTENT: u32 = 1 << 24;

fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("extent {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_model(model: &InferenceModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    put_u32(&mut out, model.layers.len())?;
    for layer in &model.layers {
        match layer {
            ModelLayer::Linear(l) => {
                out.push(TAG_LINEAR);
                put_u32(&mut out, l.out_features())?;
                put_u32(&mut out, l.in_features())?;
                put_u32(&mut out, 0)?;
                put_f32s(&mut out, l.weight.data());
                put_f32s(&mut out, &l.bias);
            }
            ModelLayer::NeuronFloat { dilation, weights, threshold } => {
                out.push(TAG_FLOAT);
                put_u32(&mut out, weights.rows())?;
                put_u32(&mut out, weights.cols())?;
                put_u32(&mut out, *dilation)?;
                put_f32s(&mut out, weights.data());
                for v in [&threshold.gamma, &threshold.beta, &threshold.running_mean, &threshold.running_var] {
                    put_f32s(&mut out, v);
                }
                put_f32s(&mut out, &[threshold.eps]);
            }
            ModelLayer::NeuronQuantized { order, dilation, weights, bias } => {
                out.push(TAG_QUANTIZED);
                put_u32(&mut out, weights.rows())?;
                put_u32(&mut out, *order)?;
                put_u32(&mut out, *dilation)?;
                out.extend(weights.signs().iter().map(|&s| s as u8));
                out.extend(weights.exponents().iter().map(|&e| e as u8));
                put_f32s(&mut out, bias);
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn extent(&mut self) -> Result<usize> {
        let v = u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes"));
        if v > MAX_EXTENT {
            return Err(Error::Format(format!("extent {v} is implausibly large")));
        }
        Ok(v as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 4)?;
        let values: Vec<f64> =
            raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(values)
    }

    fn i8s(&mut self, n: usize) -> Result<Vec<i8>> {
        Ok(self.take(n)?.iter().map(|&b| b as i8).collect())
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<InferenceModel> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(MODEL_MAGIC.len())? != MODEL_MAGIC {
        return Err(Error::Format("bad magic, not a model file".into()));
    }
    let version = cur.u16()?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = cur.extent()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for index in 0..count {
        let tag = cur.u8()?;
        let (c, k, d) = (cur.extent()?, cur.extent()?, cur.extent()?);
        if c == 0 || k == 0 {
            return Err(Error::Format(format!("layer {index} has an empty dimension")));
        }
        let layer = match tag {
            TAG_LINEAR => {
                let weight = Matrix::from_vec(c, k, cur.f32s(c * k)?)?;
                ModelLayer::Linear(LinearLayer::new(weight, cur.f32s(c)?)?)
            }
            TAG_FLOAT | TAG_QUANTIZED if d == 0 => {
                return Err(Error::Format(format!("layer {index} has dilation 0")));
            }
            TAG_FLOAT => {
                let weights = Matrix::from_vec(c, k, cur.f32s(c * k)?)?;
                let mut threshold = ThresholdParams::new(c);
                threshold.gamma = cur.f32s(c)?;
                threshold.beta = cur.f32s(c)?;
                threshold.running_mean = cur.f32s(c)?;
                threshold.running_var = cur.f32s(c)?;
                threshold.eps = cur.f32s(1)?[0];
                threshold.validate().map_err(|e| Error::Format(format!("layer {index}: {e}")))?;
                ModelLayer::NeuronFloat { dilation: d, weights, threshold }
            }
            TAG_QUANTIZED => {
                let sign = cur.i8s(c * k)?;
                let exponent = cur.i8s(c * k)?;
                let weights = ShiftWeights::from_parts(c, k, sign, exponent)?;
                ModelLayer::NeuronQuantized { order: k, dilation: d, weights, bias: cur.f32s(c)? }
            }
            other => return Err(Error::Format(format!("layer {index} has unknown tag {other}"))),
        };
        layers.push(layer);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    InferenceModel::new(layers)
}

pub fn save_model(model: &InferenceModel, w: &mut impl Write) -> Result<()> {
    w.write_all(&encode_model(model)?)?;
    Ok(())
}

pub fn load_model(r: &mut impl Read) -> Result<InferenceModel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_model(&bytes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

pub fn write_activations(x: &TemporalTensor<f64>, dtype: Dtype, w: &mut impl Write) -> Result<()> {
    let d = x.dims();
    let mut shape = vec![d.t, d.n, d.c];
    shape.extend_from_slice(&d.spatial);
    let shape: Vec<String> = shape.iter().map(usize::to_string).collect();
    writeln!(w, "{ACTIVATION_MAGIC} shape={} layout={} dtype={}", shape.join(","), x.layout(), dtype.name())?;
    let mut buf = Vec::with_capacity(x.len() * dtype.width());
    for &v in x.data() {
        match dtype {
            Dtype::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => buf.extend_from_slice(&v.to_le_bytes()),
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_activations(r: &mut impl BufRead) -> Result<TemporalTensor<f64>> {
    let mut header = String::new();
    r.read_line(&mut header)?;
    let mut fields = header.trim_end().split(' ');
    if fields.next() != Some(ACTIVATION_MAGIC) {
        return Err(Error::Format("not an activation file".into()));
    }
    let (mut shape, mut layout, mut dtype) = (None, None, None);
    for field in fields {
        let (key, value) = field.split_once('=').ok_or_else(|| Error::Format(format!("bad header field `{field}`")))?;
        match key {
            "shape" => {
                let dims = value
                    .split(',')
                    .map(|s| s.parse::<usize>().map_err(|_| Error::Format(format!("bad extent `{s}`"))))
                    .collect::<Result<Vec<_>>>()?;
                shape = Some(dims);
            }
            "layout" => layout = Some(Layout::parse(value).ok_or_else(|| Error::Format(format!("bad layout `{value}`")))?),
            "dtype" => {
                dtype = Some(match value {
                    "f32" => Dtype::F32,
                    "f64" => Dtype::F64,
                    other => return Err(Error::Format(format!("unsupported dtype `{other}`"))),
                })
            }
            other => return Err(Error::Format(format!("unknown header key `{other}`"))),
        }
    }
    let shape = shape.ok_or_else(|| Error::Format("header lacks shape".into()))?;
    let layout = layout.unwrap_or(Layout::TimeFirst);
    let dtype = dtype.unwrap_or(Dtype::F32);
    if shape.len() < 3 || shape.len() > 3 + MAX_SPATIAL_AXES {
        return Err(Error::Format(format!("shape needs T,N,C and at most {MAX_SPATIAL_AXES} spatial axes")));
    }
    let dims = Dims::with_spatial(shape[0], shape[1], shape[2], &shape[3..]);
    dims.validate()?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != dims.numel() * dtype.width() {
        return Err(Error::ShapeMismatch(format!(
            "header promises {} values, body holds {} bytes",
            dims.numel(),
            raw.len()
        )));
    }
    let data: Vec<f64> = match dtype {
        Dtype::F32 => raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))).collect(),
        Dtype::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
    };
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("activation file contains NaN or infinity".into()));
    }
    TemporalTensor::from_vec(dims, layout, data)
}
