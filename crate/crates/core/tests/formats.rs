mod common;

use common::*;
use mvusim_core::bitserial::{transpose, untranspose, Precision};
use mvusim_core::codegen::layout::{export_weights, import_weights, TilePlan};
use mvusim_core::codegen::{compile, CompiledProgram, Mode};
use mvusim_core::controller::{assemble, disassemble, Program};
use mvusim_core::ir::ModelIR;
use mvusim_core::tensor_io::TensorFile;
use proptest::prelude::*;

fn precision() -> impl Strategy<Value = Precision> {
    (1u32..=16, any::<bool>()).prop_map(|(b, s)| Precision::new(b, s).unwrap())
}

fn values(p: Precision, n: usize) -> impl Strategy<Value = Vec<i64>> {
    prop::collection::vec(p.min_value()..=p.max_value(), n)
}

/// Two's complement field of `v` in `bits` bits.
fn raw(v: i64, bits: u32) -> u64 {
    (v as u64) & ((1u64 << bits) - 1)
}

fn tensor_case() -> impl Strategy<Value = (Precision, usize, Vec<i64>)> {
    (precision(), 1usize..=150, 1usize..=4)
        .prop_flat_map(|(p, width, blocks)| (Just(p), Just(width), values(p, width * blocks)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn transpose_round_trip((p, width, v) in tensor_case()) {
        let t = transpose(&v, p, width).unwrap();
        let bits = p.bits() as usize;
        let wpp = width.div_ceil(64);
        for (i, &x) in v.iter().enumerate() {
            let (blk, lane) = (i / width, i % width);
            for plane in 0..bits {
                let word = t.planes[(blk * bits + plane) * wpp + lane / 64];
                let expect = raw(x, p.bits()) >> (bits - 1 - plane) & 1;
                prop_assert_eq!(word >> (lane % 64) & 1, expect);
            }
        }
        prop_assert_eq!(untranspose(&t).unwrap(), v);
    }
}

fn conv_plan() -> impl Strategy<Value = (TilePlan, Vec<i64>)> {
    (1usize..=100, 1usize..=100, 1usize..=3, 1usize..=3, 1u32..=4, any::<bool>()).prop_flat_map(
        |(c_out, c_in, f_h, f_w, bits, signed)| {
            let p = Precision::new(bits, signed).unwrap();
            let plan = TilePlan {
                c_out,
                channels: c_in,
                pixels: 1,
                f_h,
                f_w,
                cos: c_out.div_ceil(64),
                cb: c_in.div_ceil(64),
                prec_w: p,
            };
            (Just(plan), values(p, c_out * c_in * f_h * f_w))
        },
    )
}

fn matrix_plan() -> impl Strategy<Value = (TilePlan, Vec<i64>)> {
    (1usize..=90, 1usize..=90, 1usize..=4, 1u32..=4, any::<bool>()).prop_flat_map(
        |(c_out, c_in, pixels, bits, signed)| {
            let p = Precision::new(bits, signed).unwrap();
            let plan = TilePlan {
                c_out,
                channels: c_in,
                pixels,
                f_h: 1,
                f_w: 1,
                cos: c_out.div_ceil(64),
                cb: pixels * c_in.div_ceil(64),
                prec_w: p,
            };
            (Just(plan), values(p, c_out * pixels * c_in))
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn conv_weight_export_round_trip((plan, w) in conv_plan()) {
        let rows = export_weights(&plan, &w).unwrap();
        prop_assert_eq!(rows.len(), plan.cos * plan.f_h * plan.f_w * plan.cb * plan.bits());
        let b = plan.bits();
        // row (set, fh, fw, block, plane), word = channel in set, bit = lane
        for co in 0..plan.c_out {
            for ci in 0..plan.channels {
                for fh in 0..plan.f_h {
                    for fw in 0..plan.f_w {
                        let x = w[((co * plan.channels + ci) * plan.f_h + fh) * plan.f_w + fw];
                        for plane in 0..b {
                            let row = (((co / 64 * plan.f_h + fh) * plan.f_w + fw) * plan.cb + ci / 64) * b + plane;
                            let bit = rows[row][co % 64] >> (ci % 64) & 1;
                            prop_assert_eq!(bit, raw(x, b as u32) >> (b - 1 - plane) & 1);
                        }
                    }
                }
            }
        }
        prop_assert_eq!(import_weights(&plan, &rows).unwrap(), w);
    }

    #[test]
    fn matrix_weight_export_round_trip((plan, w) in matrix_plan()) {
        let rows = export_weights(&plan, &w).unwrap();
        let b = plan.bits();
        let per_pixel = plan.channels.div_ceil(64);
        let k = plan.pixels * plan.channels;
        for co in 0..plan.c_out {
            for i in 0..k {
                let (pix, c) = (i / plan.channels, i % plan.channels);
                let blk = pix * per_pixel + c / 64;
                for plane in 0..b {
                    let row = ((co / 64) * plan.cb + blk) * b + plane;
                    let bit = rows[row][co % 64] >> (c % 64) & 1;
                    prop_assert_eq!(bit, raw(w[co * k + i], b as u32) >> (b - 1 - plane) & 1);
                }
            }
        }
        prop_assert_eq!(import_weights(&plan, &rows).unwrap(), w);
    }
}

fn instruction() -> impl Strategy<Value = u32> {
    let reg = 0u32..32;
    let csr = prop::sample::select(vec![0x300u32, 0x304, 0x305, 0x340, 0x341, 0x342, 0x800, 0x80b, 0x842, 0x845]);
    prop_oneof![
        (reg.clone(), reg.clone(), reg.clone(), 0u32..8, any::<bool>()).prop_map(|(rd, a, b, f3, alt)| {
            let f7 = if alt && (f3 == 0 || f3 == 5) { 0x20 } else { 0 };
            r_type(f7, b, a, f3, rd, 0x33)
        }),
        (reg.clone(), reg.clone(), -2048i32..2048, 0u32..8).prop_map(|(rd, rs, imm, f3)| {
            let imm = match f3 {
                1 => imm & 31,
                5 => (imm & 31) | (imm & 0x400),
                _ => imm,
            };
            i_type(imm, rs, f3, rd, 0x13)
        }),
        (reg.clone(), reg.clone(), -2048i32..2048, prop::sample::select(vec![0u32, 1, 2, 4, 5]))
            .prop_map(|(rd, rs, imm, f3)| i_type(imm, rs, f3, rd, 0x03)),
        (reg.clone(), reg.clone(), -2048i32..2048, 0u32..3).prop_map(|(a, b, imm, f3)| s_type(imm, b, a, f3)),
        (reg.clone(), reg.clone(), -2048i32..2048, prop::sample::select(vec![0u32, 1, 4, 5, 6, 7]))
            .prop_map(|(a, b, off, f3)| b_type(off * 2, b, a, f3)),
        (reg.clone(), any::<u32>(), any::<bool>()).prop_map(|(rd, imm, pc_rel)| u_type(
            imm,
            rd,
            if pc_rel { 0x17 } else { 0x37 }
        )),
        (reg.clone(), -(1i32 << 19)..(1 << 19)).prop_map(|(rd, off)| j_type(off * 2, rd)),
        (reg.clone(), reg.clone(), -2048i32..2048).prop_map(|(rd, rs, imm)| i_type(imm, rs, 0, rd, 0x67)),
        (reg.clone(), reg, csr, 1u32..8).prop_filter_map("csr funct3", |(rd, src, csr, f3)| {
            (f3 != 4).then(|| i_type(csr as i32, src, f3, rd, 0x73))
        }),
        prop::sample::select(vec![0x0000_0073u32, 0x0010_0073, 0x3020_0073, 0x1050_0073]),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn disassembly_reassembles(word in instruction()) {
        let text = disassemble(word);
        let p = assemble(&text).map_err(|e| TestCaseError::fail(format!("{text}: {e}")))?;
        prop_assert_eq!(p.segments[0][0], word, "{}", text);
    }

    #[test]
    fn tensor_file_round_trip((p, _, v) in tensor_case()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        let t = TensorFile::new(vec![v.len()], p, v).unwrap();
        t.write(&path).unwrap();
        prop_assert_eq!(TensorFile::read(&path).unwrap(), t);
    }
}

#[test]
fn program_image_round_trip() {
    let p = assemble(".segment 0\nli a0, 0x12345678\necall\n.segment 1\n.hart 7\nnop\n").unwrap();
    let back = Program::from_bytes(&p.to_bytes()).unwrap();
    assert_eq!(back.segments, p.segments);
    assert!(Program::from_bytes(&[0; 12]).is_err());
}

#[test]
fn compiled_directory_round_trip() {
    for (name, mode) in
        [("cnn_pipeline", Mode::Pipelined), ("gemm_batch", Mode::Distributed), ("deep10", Mode::Pipelined)]
    {
        let m = ModelIR::load(&models_dir().join(format!("{name}.json"))).unwrap().materialize().unwrap();
        let p = compile(&m, mode).unwrap();
        let dir = tempfile::tempdir().unwrap();
        p.write_dir(dir.path()).unwrap();
        assert_eq!(CompiledProgram::read_dir(dir.path()).unwrap(), p);
    }
}

#[test]
fn model_ir_json_round_trip() {
    for entry in std::fs::read_dir(models_dir()).unwrap() {
        let path = entry.unwrap().path();
        let ir = ModelIR::load(&path).unwrap();
        assert_eq!(ModelIR::from_json(&ir.to_json()).unwrap(), ir, "{}", path.display());
    }
}

#[test]
fn shipped_schemas_match_types() {
    use mvusim_core::codegen::MANIFEST_FORMAT;
    use mvusim_core::ir::LayerKind;
    let dir = models_dir().join("../schemas");
    let load = |n: &str| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(dir.join(n)).unwrap()).unwrap()
    };
    let ir = load("model_ir.schema.json");
    let kinds: Vec<String> = ir["$defs"]["layer"]["properties"]["kind"]["enum"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    for k in [LayerKind::Conv2d, LayerKind::Gemm, LayerKind::Gemv, LayerKind::Maxpool, LayerKind::Relu] {
        let name = serde_json::to_value(k).unwrap();
        assert!(kinds.contains(&name.as_str().unwrap().to_string()), "{name}");
    }
    assert_eq!(kinds.len(), 5);
    let manifest = load("manifest.schema.json");
    assert_eq!(manifest["properties"]["format"]["const"], MANIFEST_FORMAT);
    for n in ["tensor.schema.json", "cycle_report.schema.json"] {
        assert!(load(n)["required"].is_array());
    }
}
