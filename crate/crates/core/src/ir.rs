//! Model description consumed by the compiler, the cycle estimator and the
//! reference oracle.
//!
//! A model is a linear chain of layers. Shapes are NHWC for convolutions and
//! `[N, K]` for matrix layers; convolution kernels are `[C_o, C_i, F_H, F_W]`
//! and matrix kernels `[rows, cols]` with `rows` outputs.

use serde::{Deserialize, Serialize};

use crate::bitserial::Precision;
use crate::error::{Error, Result};
use crate::rng;

pub const IR_VERSION: u32 = 1;
pub const DEFAULT_CLOCK_HZ: f64 = 250e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv2d,
    Gemm,
    Gemv,
    Maxpool,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomWeights {
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Values(Vec<i64>),
    Random { random: RandomWeights },
}

fn default_version() -> u32 {
    IR_VERSION
}

fn default_clock() -> f64 {
    DEFAULT_CLOCK_HZ
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerIR {
    pub name: String,
    pub kind: LayerKind,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    #[serde(default)]
    pub kernel: Vec<usize>,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    pub prec_a: Precision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prec_w: Option<Precision>,
    pub prec_out: Precision,
    /// Position of the least significant output bit in the 32-bit result.
    #[serde(default)]
    pub quant_shift: u32,
    /// Max-pooling window, `k` by `k` with stride `k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<usize>,
    #[serde(default)]
    pub relu: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelIR {
    #[serde(default = "default_version")]
    pub version: u32,
    pub name: String,
    #[serde(default = "default_clock")]
    pub clock_hz: f64,
    pub layers: Vec<LayerIR>,
}

/// Logical activation extent seen by a layer: `rows x cols x channels`.
///
/// Convolutions use `(H, W, C)`. Matrix layers use `(N, pixels, C)`, where a
/// flattened convolution output keeps its pixel and channel split so the
/// flattened index is `pixel * C + c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

impl Dims {
    pub fn numel(&self) -> usize {
        self.rows * self.cols * self.channels
    }
}

/// A validated layer with integer weights and pipeline parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub input: Dims,
    /// Dimensions before pooling.
    pub conv_out: Dims,
    pub output: Dims,
    pub output_shape: Vec<usize>,
    pub f_h: usize,
    pub f_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub pool: usize,
    pub relu: bool,
    pub prec_a: Precision,
    pub prec_w: Precision,
    pub prec_out: Precision,
    pub quant_shift: u32,
    /// Conv: `[C_o][C_i][F_H][F_W]`; matrix: `[C_o][K]`.
    pub weights: Vec<i64>,
    /// Per-output-channel scaler operands, present when the scaler is used.
    pub scale: Option<Vec<u16>>,
    pub bias: Option<Vec<i32>>,
}

impl Layer {
    pub fn scaler_enabled(&self) -> bool {
        self.scale.is_some() || self.bias.is_some()
    }

    pub fn c_out(&self) -> usize {
        self.conv_out.channels
    }

    pub fn scale_of(&self, c: usize) -> u16 {
        self.scale.as_ref().map_or(1, |s| s[c])
    }

    pub fn bias_of(&self, c: usize) -> i32 {
        self.bias.as_ref().map_or(0, |b| b[c])
    }

    pub fn is_matrix(&self) -> bool {
        matches!(self.kind, LayerKind::Gemm | LayerKind::Gemv)
    }

    /// Reduction length of one output element.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv2d => self.input.channels * self.f_h * self.f_w,
            LayerKind::Gemm | LayerKind::Gemv => self.input.cols * self.input.channels,
            _ => 0,
        }
    }

    pub fn weight(&self, co: usize, ci: usize, fh: usize, fw: usize) -> i64 {
        let c_in = self.input.channels;
        self.weights[((co * c_in + ci) * self.f_h + fh) * self.f_w + fw]
    }

    pub fn num_weights(&self) -> usize {
        match self.kind {
            LayerKind::Conv2d | LayerKind::Gemm | LayerKind::Gemv => self.c_out() * self.fan_in(),
            _ => 0,
        }
    }
}

/// A validated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub name: String,
    pub clock_hz: f64,
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

impl Model {
    pub fn input_precision(&self) -> Option<Precision> {
        self.layers.first().map(|l| l.prec_a)
    }

    pub fn output_precision(&self) -> Option<Precision> {
        self.layers.last().map(|l| l.prec_out)
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.layers.last().map_or_else(|| self.input_shape.clone(), |l| l.output_shape.clone())
    }
}

fn invalid(layer: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidModel(format!("layer `{layer}`: {msg}"))
}

fn check_rank(l: &LayerIR, shape: &[usize], what: &str) -> Result<()> {
    if shape.len() != 2 && shape.len() != 4 {
        return Err(Error::UnsupportedShape(format!(
            "layer `{}`: {what} has rank {}, expected 2 or 4",
            l.name,
            shape.len()
        )));
    }
    if shape.contains(&0) {
        return Err(Error::UnsupportedShape(format!("layer `{}`: {what} has a zero dimension", l.name)));
    }
    Ok(())
}

fn quantize_scale(l: &str, v: &[f64], n: usize) -> Result<Vec<u16>> {
    if v.len() != n {
        return Err(invalid(l, format!("scale has {} entries, expected {n}", v.len())));
    }
    v.iter()
        .map(|&x| {
            let r = x.round_ties_even();
            if r.is_finite() && (0.0..=u16::MAX as f64).contains(&r) {
                Ok(r as u16)
            } else {
                Err(invalid(l, format!("scale {x} does not round into 0..=65535")))
            }
        })
        .collect()
}

fn quantize_bias(l: &str, v: &[f64], n: usize) -> Result<Vec<i32>> {
    if v.len() != n {
        return Err(invalid(l, format!("bias has {} entries, expected {n}", v.len())));
    }
    v.iter()
        .map(|&x| {
            let r = x.round_ties_even();
            if r.is_finite() && (i32::MIN as f64..=i32::MAX as f64).contains(&r) {
                Ok(r as i32)
            } else {
                Err(invalid(l, format!("bias {x} does not round into the 32-bit range")))
            }
        })
        .collect()
}

fn materialize_weights(l: &LayerIR, prec: Precision, n: usize) -> Result<Vec<i64>> {
    let w = match &l.weights {
        Some(WeightSpec::Values(v)) => v.clone(),
        Some(WeightSpec::Random { random }) => rng::values_in(&mut rng::seeded(random.seed), prec, n),
        None => return Err(invalid(&l.name, "weights missing")),
    };
    if w.len() != n {
        return Err(invalid(&l.name, format!("{} weights given, expected {n}", w.len())));
    }
    for &v in &w {
        prec.check(v)?;
    }
    Ok(w)
}

fn pooled(l: &LayerIR, d: Dims) -> Result<(Dims, usize)> {
    let k = l.pool.unwrap_or(1);
    if k == 0 || !d.rows.is_multiple_of(k) || !d.cols.is_multiple_of(k) {
        return Err(Error::UnsupportedShape(format!(
            "layer `{}`: pool window {k} does not tile {}x{}",
            l.name, d.rows, d.cols
        )));
    }
    Ok((Dims { rows: d.rows / k, cols: d.cols / k, channels: d.channels }, k))
}

impl LayerIR {
    /// Validates the layer and produces integer parameters.
    pub fn materialize(&self) -> Result<Layer> {
        check_rank(self, &self.input_shape, "input_shape")?;
        check_rank(self, &self.output_shape, "output_shape")?;
        let name = &self.name;
        let quant_end = self.quant_shift + self.prec_out.bits();
        if quant_end > 32 {
            return Err(Error::BadQuantWindow { msb: quant_end - 1, bits: self.prec_out.bits() });
        }
        if self.stride == 0 {
            return Err(invalid(name, "stride must be positive"));
        }
        let mut layer = Layer {
            name: name.clone(),
            kind: self.kind,
            input: Dims { rows: 0, cols: 0, channels: 0 },
            conv_out: Dims { rows: 0, cols: 0, channels: 0 },
            output: Dims { rows: 0, cols: 0, channels: 0 },
            output_shape: self.output_shape.clone(),
            f_h: 1,
            f_w: 1,
            stride: self.stride,
            padding: self.padding,
            pool: 1,
            relu: self.relu,
            prec_a: self.prec_a,
            prec_w: self.prec_w.unwrap_or(self.prec_a),
            prec_out: self.prec_out,
            quant_shift: self.quant_shift,
            weights: vec![],
            scale: None,
            bias: None,
        };
        let in_dims = |s: &[usize]| -> Dims {
            if s.len() == 4 {
                Dims { rows: s[1], cols: s[2], channels: s[3] }
            } else {
                Dims { rows: s[0], cols: 1, channels: s[1] }
            }
        };
        match self.kind {
            LayerKind::Conv2d => {
                if self.input_shape.len() != 4 || self.input_shape[0] != 1 {
                    return Err(Error::UnsupportedShape(format!(
                        "layer `{name}`: convolution input must be [1, H, W, C], got {:?}",
                        self.input_shape
                    )));
                }
                if self.kernel.len() != 4 {
                    return Err(invalid(name, "convolution kernel must be [C_o, C_i, F_H, F_W]"));
                }
                let [c_o, c_i, f_h, f_w] = [self.kernel[0], self.kernel[1], self.kernel[2], self.kernel[3]];
                let input = in_dims(&self.input_shape);
                if c_i != input.channels || c_o == 0 || f_h == 0 || f_w == 0 {
                    return Err(Error::ShapeMismatch(format!(
                        "layer `{name}`: kernel {:?} does not match input channels {}",
                        self.kernel, input.channels
                    )));
                }
                let (hp, wp) = (input.rows + 2 * self.padding, input.cols + 2 * self.padding);
                if f_h > hp || f_w > wp {
                    return Err(Error::UnsupportedShape(format!(
                        "layer `{name}`: {f_h}x{f_w} kernel larger than padded {hp}x{wp} input"
                    )));
                }
                let conv_out =
                    Dims { rows: (hp - f_h) / self.stride + 1, cols: (wp - f_w) / self.stride + 1, channels: c_o };
                let (output, k) = pooled(self, conv_out)?;
                let expect = vec![1, output.rows, output.cols, output.channels];
                if self.output_shape != expect {
                    return Err(Error::ShapeMismatch(format!(
                        "layer `{name}`: output_shape {:?}, geometry gives {expect:?}",
                        self.output_shape
                    )));
                }
                layer.input = input;
                layer.conv_out = conv_out;
                layer.output = output;
                layer.pool = k;
                layer.f_h = f_h;
                layer.f_w = f_w;
            }
            LayerKind::Gemm | LayerKind::Gemv => {
                let s = &self.input_shape;
                let input = if s.len() == 4 {
                    if s[0] != 1 {
                        return Err(Error::UnsupportedShape(format!(
                            "layer `{name}`: flattened input must have batch 1"
                        )));
                    }
                    Dims { rows: 1, cols: s[1] * s[2], channels: s[3] }
                } else {
                    in_dims(s)
                };
                if self.kind == LayerKind::Gemv && input.rows != 1 {
                    return Err(Error::UnsupportedShape(format!(
                        "layer `{name}`: gemv takes one input vector, got batch {}",
                        input.rows
                    )));
                }
                if self.pool.is_some() || self.padding != 0 || self.stride != 1 {
                    return Err(invalid(name, "matrix layers take no pool, padding or stride"));
                }
                let k = input.cols * input.channels;
                if self.kernel.len() != 2 || self.kernel[1] != k || self.kernel[0] == 0 {
                    return Err(Error::ShapeMismatch(format!(
                        "layer `{name}`: kernel {:?} does not match {k} input features",
                        self.kernel
                    )));
                }
                let output = Dims { rows: input.rows, cols: 1, channels: self.kernel[0] };
                if self.output_shape != vec![input.rows, self.kernel[0]] {
                    return Err(Error::ShapeMismatch(format!(
                        "layer `{name}`: output_shape {:?}, expected {:?}",
                        self.output_shape,
                        [input.rows, self.kernel[0]]
                    )));
                }
                layer.input = input;
                layer.conv_out = output;
                layer.output = output;
            }
            LayerKind::Maxpool | LayerKind::Relu => {
                if self.input_shape.len() != 4 || self.input_shape[0] != 1 {
                    return Err(Error::UnsupportedShape(format!(
                        "layer `{name}`: {:?} expects [1, H, W, C] input",
                        self.kind
                    )));
                }
                let input = in_dims(&self.input_shape);
                let (output, k) = if self.kind == LayerKind::Maxpool {
                    if self.pool.is_none() {
                        return Err(invalid(name, "maxpool needs a pool window"));
                    }
                    pooled(self, input)?
                } else {
                    (input, 1)
                };
                if self.output_shape != vec![1, output.rows, output.cols, output.channels] {
                    return Err(Error::ShapeMismatch(format!(
                        "layer `{name}`: output_shape {:?} does not follow from the input",
                        self.output_shape
                    )));
                }
                if self.prec_out != self.prec_a {
                    return Err(Error::PrecisionMismatch(format!(
                        "layer `{name}`: {:?} keeps its input precision",
                        self.kind
                    )));
                }
                layer.input = input;
                layer.conv_out = input;
                layer.output = output;
                layer.pool = k;
                layer.relu = self.kind == LayerKind::Relu;
                return Ok(layer);
            }
        }
        if self.prec_w.is_none() {
            return Err(invalid(name, "prec_w missing"));
        }
        let c_o = layer.c_out();
        layer.weights = materialize_weights(self, layer.prec_w, layer.num_weights())?;
        layer.scale = self.scale.as_deref().map(|s| quantize_scale(name, s, c_o)).transpose()?;
        layer.bias = self.bias.as_deref().map(|b| quantize_bias(name, b, c_o)).transpose()?;
        Ok(layer)
    }
}

impl ModelIR {
    pub fn from_json(text: &str) -> Result<ModelIR> {
        let m: ModelIR = serde_json::from_str(text)?;
        if m.version != IR_VERSION {
            return Err(Error::InvalidModel(format!("unsupported IR version {}", m.version)));
        }
        Ok(m)
    }

    pub fn load(path: &std::path::Path) -> Result<ModelIR> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    /// Validates every layer and the chain between them.
    pub fn materialize(&self) -> Result<Model> {
        if !(self.clock_hz.is_finite() && self.clock_hz > 0.0) {
            return Err(Error::InvalidModel(format!("clock_hz {} is not positive", self.clock_hz)));
        }
        let layers = self.layers.iter().map(LayerIR::materialize).collect::<Result<Vec<_>>>()?;
        for (i, pair) in layers.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            let (sa, sb) = (&self.layers[i].output_shape, &self.layers[i + 1].input_shape);
            let same =
                if sa.len() == sb.len() { sa == sb } else { b.is_matrix() && a.output.numel() == b.input.numel() };
            if !same {
                return Err(Error::ShapeMismatch(format!(
                    "`{}` produces {sa:?} but `{}` expects {sb:?}",
                    a.name, b.name
                )));
            }
            if a.prec_out != b.prec_a {
                return Err(Error::PrecisionMismatch(format!(
                    "`{}` produces {} but `{}` expects {}",
                    a.name, a.prec_out, b.name, b.prec_a
                )));
            }
        }
        let mut layers = layers;
        // A matrix layer fed by a convolution keeps the pixel/channel split.
        for i in 1..layers.len() {
            if layers[i].is_matrix() && layers[i - 1].kind != LayerKind::Gemm && layers[i - 1].kind != LayerKind::Gemv {
                let prev = layers[i - 1].output;
                let cur = &mut layers[i];
                if cur.input.rows == 1 && prev.numel() == cur.input.numel() {
                    cur.input = Dims { rows: 1, cols: prev.rows * prev.cols, channels: prev.channels };
                }
            }
        }
        Ok(Model {
            name: self.name.clone(),
            clock_hz: self.clock_hz,
            input_shape: self.layers.first().map_or_else(Vec::new, |l| l.input_shape.clone()),
            layers,
        })
    }

    /// Sets every layer's activation and weight widths, keeping signedness.
    /// Explicit weights must still fit.
    pub fn with_precision(&self, bits_a: u32, bits_w: u32) -> Result<ModelIR> {
        let mut m = self.clone();
        for l in &mut m.layers {
            l.prec_a = Precision::new(bits_a, l.prec_a.is_signed())?;
            l.prec_out = Precision::new(bits_a, l.prec_out.is_signed())?;
            if let Some(w) = l.prec_w.as_mut() {
                *w = Precision::new(bits_w, w.is_signed())?;
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_json(extra: &str) -> String {
        format!(
            r#"{{"name":"t","layers":[{{"name":"c","kind":"conv2d","input_shape":[1,8,8,3],
            "output_shape":[1,4,4,16],"kernel":[16,3,3,3],"stride":1,"padding":1,"pool":2,
            "prec_a":{{"bits":2,"signed":false}},"prec_w":{{"bits":2,"signed":true}},
            "prec_out":{{"bits":2,"signed":false}},"weights":{{"random":{{"seed":3}}}}{extra}}}]}}"#
        )
    }

    #[test]
    fn conv_geometry() {
        let m = ModelIR::from_json(&conv_json("")).unwrap().materialize().unwrap();
        let l = &m.layers[0];
        assert_eq!(l.conv_out, Dims { rows: 8, cols: 8, channels: 16 });
        assert_eq!(l.output, Dims { rows: 4, cols: 4, channels: 16 });
        assert_eq!(l.weights.len(), 16 * 27);
        assert!(l.weights.iter().all(|&w| (-2..=1).contains(&w)));
        assert!(!l.scaler_enabled());
    }

    #[test]
    fn scale_rounds_half_even() {
        let s: Vec<String> = (0..16).map(|i| format!("{}", i as f64 + 0.5)).collect();
        let m =
            ModelIR::from_json(&conv_json(&format!(",\"scale\":[{}]", s.join(",")))).unwrap().materialize().unwrap();
        assert_eq!(&m.layers[0].scale.as_ref().unwrap()[..4], &[0, 2, 2, 4]);
    }

    #[test]
    fn five_d_rejected() {
        let j = conv_json("").replace("[1,8,8,3]", "[1,1,8,8,3]");
        let e = ModelIR::from_json(&j).unwrap().materialize().unwrap_err();
        assert_eq!(e.code(), "UnsupportedShape");
    }

    #[test]
    fn bad_output_shape() {
        let j = conv_json("").replace("[1,4,4,16]", "[1,8,8,16]");
        assert_eq!(ModelIR::from_json(&j).unwrap().materialize().unwrap_err().code(), "ShapeMismatch");
    }
}
