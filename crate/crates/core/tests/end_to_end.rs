use std::path::PathBuf;

use mvusim_core::codegen::{compile, Mode};
use mvusim_core::ir::{Model, ModelIR};
use mvusim_core::perf::estimate_layer_cycles;
use mvusim_core::sim::simulate;
use mvusim_core::verify::{verify, VerifyOptions};
use mvusim_core::{oracle, rng};

fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn load(name: &str) -> Model {
    ModelIR::load(&models_dir().join(format!("{name}.json"))).unwrap().materialize().unwrap()
}

const SMALL: &[&str] = &[
    "gemv64",
    "gemv_wide",
    "gemm_batch",
    "conv_single",
    "conv_stride2",
    "conv_pool_relu_quant",
    "conv_1x1",
    "conv_5x5_valid",
    "mlp3",
    "cnn_pipeline",
    "deep10",
    "signed_net",
    "conv_pool3",
];

#[test]
fn small_models_match_oracle_in_both_modes() {
    for name in SMALL {
        let m = load(name);
        for mode in [Mode::Pipelined, Mode::Distributed] {
            let r = verify(&m, &VerifyOptions { seed: 11, trials: 2, mode, ..Default::default() }).unwrap();
            assert!(r.all_passed(), "{}", r.summary());
        }
    }
}

#[test]
fn simulated_cycles_equal_estimates() {
    for name in SMALL {
        let m = load(name);
        let p = compile(&m, Mode::Pipelined).unwrap();
        let x = rng::values_in(&mut rng::seeded(1), m.layers[0].prec_a, m.layers[0].input.numel());
        let r = simulate(&p, &x).unwrap();
        for (l, got) in m.layers.iter().zip(&r.report.per_layer) {
            assert_eq!(got.cycles, estimate_layer_cycles(l).unwrap(), "{name}/{}", l.name);
        }
    }
}

#[test]
fn modes_agree() {
    let m = load("cnn_pipeline");
    let x = rng::values_in(&mut rng::seeded(5), m.layers[0].prec_a, m.layers[0].input.numel());
    let a = simulate(&compile(&m, Mode::Pipelined).unwrap(), &x).unwrap();
    let b = simulate(&compile(&m, Mode::Distributed).unwrap(), &x).unwrap();
    assert_eq!(a.output, b.output);
    assert_eq!(a.output, oracle::infer(&m, &x).unwrap());
}

#[test]
fn corrupted_weights_are_caught() {
    let m = load("conv_single");
    let x = rng::values_in(&mut rng::seeded(3), m.layers[0].prec_a, m.layers[0].input.numel());
    let mut p = compile(&m, Mode::Pipelined).unwrap();
    // flip the sign plane of one weight of output channel 5
    p.weights[0][0][5] ^= 1;
    let out = simulate(&p, &x).unwrap().output;
    assert_ne!(out, oracle::infer(&m, &x).unwrap());
}

fn single_conv(json_extra: &str, input: [usize; 3], out: [usize; 3], kernel: [usize; 4]) -> Model {
    let j = format!(
        r#"{{"name":"t","layers":[{{"name":"c","kind":"conv2d","input_shape":[1,{},{},{}],
        "output_shape":[1,{},{},{}],"kernel":{kernel:?},"prec_a":{{"bits":4,"signed":false}},
        "prec_w":{{"bits":4,"signed":true}},"prec_out":{{"bits":8,"signed":true}}{json_extra}}}]}}"#,
        input[0], input[1], input[2], out[0], out[1], out[2]
    );
    ModelIR::from_json(&j).unwrap().materialize().unwrap()
}

#[test]
fn identity_conv_passes_input_through() {
    let w: Vec<String> =
        (0..4).flat_map(|o| (0..4).map(move |i| if o == i { "1" } else { "0" })).map(String::from).collect();
    let m = single_conv(
        &format!(r#","weights":[{}],"scale":[1,1,1,1],"bias":[0,0,0,0]"#, w.join(",")),
        [3, 3, 4],
        [3, 3, 4],
        [4, 4, 1, 1],
    );
    let x: Vec<i64> = (0..36).map(|i| i % 16).collect();
    assert_eq!(oracle::infer(&m, &x).unwrap(), x);
    for mode in [Mode::Pipelined, Mode::Distributed] {
        assert_eq!(simulate(&compile(&m, mode).unwrap(), &x).unwrap().output, x);
    }
}

#[test]
fn hand_computed_three_by_three() {
    // input 1..16 row-major on a 4x4 grid, kernel with a +1 centre and -1 top-left
    let mut k = ["0"; 9];
    k[4] = "1";
    k[0] = "-1";
    let m = single_conv(&format!(r#","padding":1,"weights":[{}]"#, k.join(",")), [4, 4, 1], [4, 4, 1], [1, 1, 3, 3]);
    let x: Vec<i64> = (1..=16).map(|v| v % 16).collect();
    // out(y, x) = in(y, x) - in(y-1, x-1), zero outside; in(3, 3) = 16 % 16 = 0
    let hand = vec![1, 2, 3, 4, 5, 5, 5, 5, 9, 5, 5, 5, 13, 5, 5, -11];
    assert_eq!(oracle::infer(&m, &x).unwrap(), hand);
    assert_eq!(simulate(&compile(&m, Mode::Pipelined).unwrap(), &x).unwrap().output, hand);
}

#[test]
fn ten_layers_take_two_laps() {
    let m = load("deep10");
    let p = compile(&m, Mode::Pipelined).unwrap();
    let laps: Vec<usize> = p.manifest.segments.iter().map(|s| s.phases.len()).collect();
    assert_eq!(laps, vec![8, 2]);
    let mvus: Vec<u8> = p.manifest.layers.iter().map(|l| l.work[0].mvu).collect();
    assert_eq!(mvus, vec![0, 1, 2, 3, 4, 5, 6, 7, 0, 1]);
}

#[test]
fn resnet9_estimates() {
    let ir = ModelIR::load(&models_dir().join("resnet9.json")).unwrap();
    let m = ir.with_precision(1, 1).unwrap().materialize().unwrap();
    assert_eq!(mvusim_core::perf::estimate_model(&m, 250e6).unwrap().total_cycles, 48672);
    let p = compile(&load("resnet9"), Mode::Pipelined).unwrap();
    assert_eq!(p.manifest.segments.len(), 1);
    let big = ir.with_precision(8, 8).unwrap().materialize().unwrap();
    assert_eq!(compile(&big, Mode::Pipelined).unwrap_err().code(), "CapacityExceeded");
}

#[test]
fn resnet9_matches_oracle() {
    let m = load("resnet9");
    let x = rng::values_in(&mut rng::seeded(2), m.layers[0].prec_a, m.layers[0].input.numel());
    let r = simulate(&compile(&m, Mode::Pipelined).unwrap(), &x).unwrap();
    let o = oracle::infer(&m, &x).unwrap();
    assert!(o.iter().any(|&v| v != 0));
    assert_eq!(r.output, o);
}

#[test]
fn standalone_pool_is_rejected_by_compiler() {
    let j = r#"{"name":"p","layers":[{"name":"pool","kind":"maxpool","input_shape":[1,4,4,8],
        "output_shape":[1,2,2,8],"pool":2,"prec_a":{"bits":2,"signed":false},"prec_out":{"bits":2,"signed":false}}]}"#;
    let m = ModelIR::from_json(j).unwrap().materialize().unwrap();
    assert_eq!(compile(&m, Mode::Pipelined).unwrap_err().code(), "UnsupportedOp");
    let x: Vec<i64> = (0..128).map(|i| i % 4).collect();
    assert_eq!(oracle::infer(&m, &x).unwrap().len(), 32);
}

#[test]
fn compile_is_deterministic() {
    for name in SMALL {
        let m = load(name);
        for mode in [Mode::Pipelined, Mode::Distributed] {
            assert_eq!(compile(&m, mode).unwrap(), compile(&m, mode).unwrap());
        }
    }
}
