//! Activation and weight RAM layouts.
//!
//! Activations are stored pixel by pixel: every pixel holds its channel
//! blocks, and every block holds `bits` plane words, MSB plane first.
//! Horizontal zero padding is stored explicitly; vertical padding is not.
//!
//! Weight rows are ordered output-channel set, kernel row, kernel column,
//! channel block, then plane. Word `r` of a row belongs to output channel
//! `64 * cos + r`, bit `l` to input lane `l` of the channel block.

use serde::{Deserialize, Serialize};

use crate::bitserial::{transpose, untranspose, BitTransposedTensor, Precision, LANES};
use crate::error::{Error, Result};
use crate::ir::{Dims, Layer, LayerKind};
use crate::mvu::{BiasRow, ScalerRow, WeightRow};
use crate::perf::blocks;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActLayout {
    pub base: u32,
    pub rows: u32,
    pub cols: u32,
    /// Zero columns stored on each side of a row.
    pub pad: u32,
    pub blocks: u32,
    pub bits: u32,
}

impl ActLayout {
    pub fn new(base: u32, dims: Dims, pad: usize, bits: u32) -> Self {
        ActLayout {
            base,
            rows: dims.rows as u32,
            cols: dims.cols as u32,
            pad: pad as u32,
            blocks: blocks(dims.channels) as u32,
            bits,
        }
    }

    pub fn pixel_pitch(&self) -> u32 {
        self.blocks * self.bits
    }

    pub fn row_pitch(&self) -> u32 {
        (self.cols + 2 * self.pad) * self.pixel_pitch()
    }

    pub fn len(&self) -> u32 {
        self.rows * self.row_pitch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn end(&self) -> u32 {
        self.base + self.len()
    }

    /// Address of plane `plane` of block `blk` at logical column `col`.
    pub fn addr(&self, row: u32, col: u32, blk: u32, plane: u32) -> u32 {
        self.base + row * self.row_pitch() + (col + self.pad) * self.pixel_pitch() + blk * self.bits + plane
    }
}

/// Plane words for the channels of one pixel, one block at a time.
pub fn pack_pixel(values: &[i64], prec: Precision) -> Result<Vec<u64>> {
    let mut padded = values.to_vec();
    padded.resize(blocks(values.len()) * LANES, 0);
    Ok(transpose(&padded, prec, LANES)?.planes)
}

pub fn unpack_pixel(words: &[u64], channels: usize, prec: Precision) -> Result<Vec<i64>> {
    let t = BitTransposedTensor {
        shape: vec![words.len() / prec.bits() as usize * LANES],
        precision: prec,
        block_width: LANES,
        planes: words.to_vec(),
    };
    let mut v = untranspose(&t)?;
    v.truncate(channels);
    Ok(v)
}

/// Writes a `rows x cols x channels` tensor into `ram` under `layout`.
pub fn write_tensor(ram: &mut [u64], layout: &ActLayout, dims: Dims, values: &[i64], prec: Precision) -> Result<()> {
    write_rows(ram, layout, dims, values, prec, 0..dims.rows)
}

/// Writes rows `rows` of a full tensor `values`.
pub fn write_rows(
    ram: &mut [u64],
    layout: &ActLayout,
    dims: Dims,
    values: &[i64],
    prec: Precision,
    rows: std::ops::Range<usize>,
) -> Result<()> {
    if values.len() != dims.numel() {
        return Err(Error::ShapeMismatch(format!("{} values for {:?}", values.len(), dims)));
    }
    check_fits(ram, layout)?;
    let c = dims.channels;
    for r in rows {
        for x in 0..dims.cols {
            let i = (r * dims.cols + x) * c;
            let words = pack_pixel(&values[i..i + c], prec)?;
            let a = layout.addr(r as u32, x as u32, 0, 0) as usize;
            ram[a..a + words.len()].copy_from_slice(&words);
        }
    }
    Ok(())
}

pub fn read_tensor(ram: &[u64], layout: &ActLayout, dims: Dims, prec: Precision) -> Result<Vec<i64>> {
    check_fits(ram, layout)?;
    let pp = layout.pixel_pitch() as usize;
    let mut out = Vec::with_capacity(dims.numel());
    for r in 0..dims.rows {
        for x in 0..dims.cols {
            let a = layout.addr(r as u32, x as u32, 0, 0) as usize;
            out.extend(unpack_pixel(&ram[a..a + pp], dims.channels, prec)?);
        }
    }
    Ok(out)
}

fn check_fits(ram: &[u64], layout: &ActLayout) -> Result<()> {
    if layout.end() as usize > ram.len() {
        return Err(Error::AddressOutOfRange { addr: layout.end() as i64, depth: ram.len() });
    }
    Ok(())
}

/// How a layer's weights are cut into 64x64 tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub c_out: usize,
    /// Logical input channels per pixel.
    pub channels: usize,
    /// Input pixels folded into the reduction (matrix layers fed by a
    /// convolution); 1 otherwise.
    pub pixels: usize,
    pub f_h: usize,
    pub f_w: usize,
    /// Output-channel sets.
    pub cos: usize,
    /// Channel blocks per kernel position.
    pub cb: usize,
    pub prec_w: Precision,
}

impl TilePlan {
    pub fn bits(&self) -> usize {
        self.prec_w.bits() as usize
    }

    pub fn rows(&self) -> usize {
        self.cos * self.f_h * self.f_w * self.cb * self.bits()
    }

    /// Rows of one output-channel set.
    pub fn rows_per_set(&self) -> usize {
        self.f_h * self.f_w * self.cb * self.bits()
    }

    pub fn row_index(&self, cos: usize, fh: usize, fw: usize, cb: usize, plane: usize) -> usize {
        (((cos * self.f_h + fh) * self.f_w + fw) * self.cb + cb) * self.bits() + plane
    }

    pub fn fan_in(&self) -> usize {
        self.pixels * self.channels * self.f_h * self.f_w
    }

    /// Index into the logical weight array for output channel `co` and lane
    /// `l` of channel block `cb` at kernel position `(fh, fw)`, or `None` for
    /// padding.
    pub fn logical_index(&self, co: usize, cb: usize, lane: usize, fh: usize, fw: usize) -> Option<usize> {
        if co >= self.c_out {
            return None;
        }
        if self.pixels == 1 {
            let ci = cb * LANES + lane;
            return (ci < self.channels).then(|| ((co * self.channels + ci) * self.f_h + fh) * self.f_w + fw);
        }
        let per_pixel = blocks(self.channels) * LANES;
        let k = cb * LANES + lane;
        let (pix, c) = (k / per_pixel, k % per_pixel);
        (c < self.channels).then(|| co * self.fan_in() + pix * self.channels + c)
    }
}

/// Tiling of a convolution or matrix layer, padding channels up to whole
/// 64-lane blocks.
pub fn tile_and_pad(layer: &Layer) -> Result<TilePlan> {
    match layer.kind {
        LayerKind::Conv2d => Ok(TilePlan {
            c_out: layer.c_out(),
            channels: layer.input.channels,
            pixels: 1,
            f_h: layer.f_h,
            f_w: layer.f_w,
            cos: blocks(layer.c_out()),
            cb: blocks(layer.input.channels),
            prec_w: layer.prec_w,
        }),
        LayerKind::Gemm | LayerKind::Gemv => Ok(TilePlan {
            c_out: layer.c_out(),
            channels: layer.input.channels,
            pixels: layer.input.cols,
            f_h: 1,
            f_w: 1,
            cos: blocks(layer.c_out()),
            cb: layer.input.cols * blocks(layer.input.channels),
            prec_w: layer.prec_w,
        }),
        k => Err(Error::UnsupportedOp(format!("{k:?} layer `{}` has no weights", layer.name))),
    }
}

/// Weight RAM image of a layer.
#[allow(clippy::needless_range_loop)]
pub fn export_weights(plan: &TilePlan, weights: &[i64]) -> Result<Vec<WeightRow>> {
    if weights.len() != plan.c_out * plan.fan_in() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for a {}x{} layer",
            weights.len(),
            plan.c_out,
            plan.fan_in()
        )));
    }
    let b = plan.bits();
    let mut rows = vec![[0u64; LANES]; plan.rows()];
    for cos in 0..plan.cos {
        for fh in 0..plan.f_h {
            for fw in 0..plan.f_w {
                for cb in 0..plan.cb {
                    for r in 0..LANES {
                        for l in 0..LANES {
                            let Some(i) = plan.logical_index(cos * LANES + r, cb, l, fh, fw) else {
                                continue;
                            };
                            let v = weights[i];
                            plan.prec_w.check(v)?;
                            let raw = plan.prec_w.encode(v);
                            for p in 0..b {
                                if raw >> (b - 1 - p) & 1 == 1 {
                                    rows[plan.row_index(cos, fh, fw, cb, p)][r] |= 1 << l;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Inverse of [`export_weights`].
#[allow(clippy::needless_range_loop)]
pub fn import_weights(plan: &TilePlan, rows: &[WeightRow]) -> Result<Vec<i64>> {
    if rows.len() < plan.rows() {
        return Err(Error::ShapeMismatch(format!("{} weight rows, plan needs {}", rows.len(), plan.rows())));
    }
    let b = plan.bits();
    let mut w = vec![0i64; plan.c_out * plan.fan_in()];
    for cos in 0..plan.cos {
        for fh in 0..plan.f_h {
            for fw in 0..plan.f_w {
                for cb in 0..plan.cb {
                    for r in 0..LANES {
                        for l in 0..LANES {
                            let Some(i) = plan.logical_index(cos * LANES + r, cb, l, fh, fw) else {
                                continue;
                            };
                            let mut raw = 0u32;
                            for p in 0..b {
                                raw = raw << 1 | (rows[plan.row_index(cos, fh, fw, cb, p)][r] >> l & 1) as u32;
                            }
                            w[i] = plan.prec_w.decode(raw);
                        }
                    }
                }
            }
        }
    }
    Ok(w)
}

pub fn export_scaler(c_out: usize, scale: impl Fn(usize) -> u16) -> Vec<ScalerRow> {
    (0..blocks(c_out))
        .map(|cos| std::array::from_fn(|r| if cos * LANES + r < c_out { scale(cos * LANES + r) } else { 0 }))
        .collect()
}

pub fn export_bias(c_out: usize, bias: impl Fn(usize) -> i32) -> Vec<BiasRow> {
    (0..blocks(c_out))
        .map(|cos| std::array::from_fn(|r| if cos * LANES + r < c_out { bias(cos * LANES + r) } else { 0 }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn conv_plan(c_out: usize, c_in: usize, f: usize, prec: Precision) -> TilePlan {
        TilePlan {
            c_out,
            channels: c_in,
            pixels: 1,
            f_h: f,
            f_w: f,
            cos: blocks(c_out),
            cb: blocks(c_in),
            prec_w: prec,
        }
    }

    #[test]
    fn tile_counts() {
        let p = Precision::unsigned(1).unwrap();
        let plan = conv_plan(128, 256, 1, p);
        assert_eq!((plan.cb, plan.cos), (4, 2));
        let plan = conv_plan(64, 64, 3, Precision::signed(2).unwrap());
        assert_eq!(plan.rows(), 18);
    }

    #[test]
    fn identity_tile_matches_transpose() {
        let p = Precision::unsigned(1).unwrap();
        let plan = TilePlan { pixels: 1, ..conv_plan(64, 64, 1, p) };
        let w: Vec<i64> = (0..64 * 64).map(|i| (i / 64 == i % 64) as i64).collect();
        let rows = export_weights(&plan, &w).unwrap();
        assert_eq!(rows.len(), 1);
        for (r, &word) in rows[0].iter().enumerate() {
            assert_eq!(word, 1u64 << r);
        }
    }

    /// Enumerates (cos, fh, fw, cb, plane) lexicographically and checks each
    /// row holds exactly that slice of the kernel.
    #[test]
    fn row_order_is_lexicographic() {
        let p = Precision::signed(2).unwrap();
        let plan = conv_plan(64, 64, 3, p);
        let w = rng::values_in(&mut rng::seeded(5), p, 64 * 64 * 9);
        let rows = export_weights(&plan, &w).unwrap();
        let mut n = 0;
        for fh in 0..3 {
            for fw in 0..3 {
                for plane in 0..2 {
                    for co in 0..64 {
                        for ci in 0..64 {
                            let v = w[((co * 64 + ci) * 3 + fh) * 3 + fw];
                            let bit = (p.encode(v) >> (1 - plane)) & 1;
                            assert_eq!(rows[n][co] >> ci & 1, bit as u64);
                        }
                    }
                    n += 1;
                }
            }
        }
        assert_eq!(n, 18);
    }

    #[test]
    fn flattened_columns() {
        // 2 pixels of 3 channels: physical lanes 0..3 and 64..67
        let p = Precision::signed(4).unwrap();
        let plan = TilePlan { c_out: 2, channels: 3, pixels: 2, f_h: 1, f_w: 1, cos: 1, cb: 2, prec_w: p };
        let w: Vec<i64> = (0..12).map(|i| i - 6).collect();
        let rows = export_weights(&plan, &w).unwrap();
        assert_eq!(import_weights(&plan, &rows).unwrap(), w);
        assert_eq!(plan.logical_index(1, 1, 2, 0, 0), Some(6 + 3 + 2));
        assert_eq!(plan.logical_index(1, 1, 3, 0, 0), None);
    }

    #[test]
    fn activation_round_trip() {
        let p = Precision::signed(3).unwrap();
        let dims = Dims { rows: 3, cols: 5, channels: 70 };
        let layout = ActLayout::new(7, dims, 1, 3);
        let v = rng::values_in(&mut rng::seeded(1), p, dims.numel());
        let mut ram = vec![0u64; layout.end() as usize];
        write_tensor(&mut ram, &layout, dims, &v, p).unwrap();
        assert_eq!(read_tensor(&ram, &layout, dims, p).unwrap(), v);
        // padding columns stay zero
        for r in 0..3 {
            for side in [layout.addr(r, 0, 0, 0) - layout.pixel_pitch(), layout.addr(r, 5, 0, 0)] {
                assert!(ram[side as usize..(side + layout.pixel_pitch()) as usize].iter().all(|&w| w == 0));
            }
        }
    }
}
