//! Reference inference with plain integer loops.
//!
//! Works on logical NHWC values and shares no code with the bit-serial
//! datapath, the layouts or the compiler, so it can check all three.

use crate::bitserial::Precision;
use crate::error::{Error, Result};
use crate::ir::{Layer, LayerKind, Model};

const SCALER_INPUT_BITS: u32 = 27;

fn scale_and_bias(layer: &Layer, acc: i64, co: usize) -> Result<i64> {
    if !layer.scaler_enabled() {
        return Ok(acc);
    }
    let lim = 1i64 << (SCALER_INPUT_BITS - 1);
    if acc < -lim || acc >= lim {
        return Err(Error::MvpOverflow(acc));
    }
    Ok(acc * layer.scale_of(co) as i64 + layer.bias_of(co) as i64)
}

/// Keeps bits `shift .. shift + bits` of `v` and reads them in `out`.
fn requantize(v: i64, shift: u32, out: Precision) -> Result<i64> {
    let v32 = i32::try_from(v).map_err(|_| Error::QuantOverflow(v))?;
    let field = ((v32 >> shift) as u32) & ((1u32 << out.bits()) - 1);
    let top = 1i64 << (out.bits() - 1);
    let f = field as i64;
    Ok(if out.is_signed() && f >= top { f - 2 * top } else { f })
}

fn conv(layer: &Layer, x: &[i64]) -> Result<Vec<i64>> {
    let (h, w, c_in) = (layer.input.rows as i64, layer.input.cols as i64, layer.input.channels);
    let (ho, wo, c_out) = (layer.conv_out.rows, layer.conv_out.cols, layer.conv_out.channels);
    let (s, p) = (layer.stride as i64, layer.padding as i64);
    let mut y = vec![0i64; ho * wo * c_out];
    for oy in 0..ho {
        for ox in 0..wo {
            for co in 0..c_out {
                let mut acc = 0i64;
                for fh in 0..layer.f_h {
                    let iy = oy as i64 * s - p + fh as i64;
                    if !(0..h).contains(&iy) {
                        continue;
                    }
                    for fw in 0..layer.f_w {
                        let ix = ox as i64 * s - p + fw as i64;
                        if !(0..w).contains(&ix) {
                            continue;
                        }
                        for ci in 0..c_in {
                            acc += layer.weight(co, ci, fh, fw) * x[((iy * w + ix) as usize) * c_in + ci];
                        }
                    }
                }
                y[(oy * wo + ox) * c_out + co] = scale_and_bias(layer, acc, co)?;
            }
        }
    }
    Ok(y)
}

fn matrix(layer: &Layer, x: &[i64]) -> Result<Vec<i64>> {
    let k = layer.fan_in();
    let n = layer.input.rows;
    let c_out = layer.c_out();
    let mut y = vec![0i64; n * c_out];
    for r in 0..n {
        for co in 0..c_out {
            let acc: i64 = (0..k).map(|i| layer.weights[co * k + i] * x[r * k + i]).sum();
            y[r * c_out + co] = scale_and_bias(layer, acc, co)?;
        }
    }
    Ok(y)
}

/// `k x k` max pooling with stride `k`; with `relu` the maximum starts at 0.
fn pool(x: &[i64], h: usize, w: usize, c: usize, k: usize, relu: bool) -> Vec<i64> {
    let (ho, wo) = (h / k, w / k);
    let mut y = vec![0i64; ho * wo * c];
    for oy in 0..ho {
        for ox in 0..wo {
            for ch in 0..c {
                let mut m = if relu { 0 } else { i64::MIN };
                for dy in 0..k {
                    for dx in 0..k {
                        m = m.max(x[((oy * k + dy) * w + ox * k + dx) * c + ch]);
                    }
                }
                y[(oy * wo + ox) * c + ch] = m;
            }
        }
    }
    y
}

/// Output of one layer for input `x`.
pub fn layer_forward(layer: &Layer, x: &[i64]) -> Result<Vec<i64>> {
    if x.len() != layer.input.numel() {
        return Err(Error::ShapeMismatch(format!(
            "layer `{}` expects {} values, got {}",
            layer.name,
            layer.input.numel(),
            x.len()
        )));
    }
    let d = layer.input;
    match layer.kind {
        LayerKind::Maxpool => Ok(pool(x, d.rows, d.cols, d.channels, layer.pool, false)),
        LayerKind::Relu => Ok(x.iter().map(|&v| v.max(0)).collect()),
        LayerKind::Conv2d | LayerKind::Gemm | LayerKind::Gemv => {
            let acc = if layer.kind == LayerKind::Conv2d { conv(layer, x)? } else { matrix(layer, x)? };
            let c = layer.conv_out;
            let pooled = pool(&acc, c.rows, c.cols, c.channels, layer.pool, layer.relu);
            pooled.into_iter().map(|v| requantize(v, layer.quant_shift, layer.prec_out)).collect()
        }
    }
}

/// Runs every layer of `model` on `input`.
pub fn infer(model: &Model, input: &[i64]) -> Result<Vec<i64>> {
    let mut x = input.to_vec();
    for layer in &model.layers {
        x = layer_forward(layer, &x)?;
    }
    Ok(x)
}
