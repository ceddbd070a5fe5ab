use obliv1d::model_io::gen_random_model;
use obliv1d::qnn::oracle;
use obliv1d::qnn::secure::{simulate, LocalConfig};
use obliv1d::scheme::{SchemeId, TruncMode};
use obliv1d::sim::SimOptions;
use obliv1d::transport::Role;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn inputs(n: usize, len: usize, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..len).map(|_| rng.gen()).collect()).collect()
}

#[test]
fn secure_layers_match_oracle_exactly() {
    let model = gen_random_model("in:12,conv:3x3,pool:2,conv:2x3:trailing,pool:3:public,flatten,dense:4", 21)
        .unwrap();
    let xs = inputs(2, 12, 1);
    for sid in SchemeId::all_supported(TruncMode::Det) {
        for public_shift in [false, true] {
            let cfg = LocalConfig {
                public_shift,
                trace: true,
                reveal_to: Role::Alice,
            };
            let out = simulate(sid, SimOptions::seed(5), &model, &xs, cfg).unwrap();
            for (i, x) in xs.iter().enumerate() {
                let t = oracle::run(&model, x).unwrap();
                assert_eq!(out.traces[i], t.outputs, "{sid} shift public={public_shift}");
                assert_eq!(out.classes[i], t.class);
            }
        }
    }
}

#[test]
fn class_reaches_each_recipient() {
    let model = gen_random_model("in:6,conv:2x3,dense:3", 2).unwrap();
    let xs = inputs(1, 6, 2);
    let want = oracle::classify(&model, &xs[0]).unwrap();
    for sid in [SchemeId::all_supported(TruncMode::Det)[0], SchemeId::all_supported(TruncMode::Det)[2]] {
        for role in [Role::Alice, Role::Bob, Role::ThirdParty] {
            let cfg = LocalConfig {
                reveal_to: role,
                ..LocalConfig::default()
            };
            let out = simulate(sid, SimOptions::seed(1), &model, &xs, cfg).unwrap();
            assert_eq!(out.classes, vec![want], "{sid} to {role}");
        }
    }
}

#[test]
fn probabilistic_truncation_stays_within_one_unit() {
    let model = gen_random_model("in:16,conv:4x3,pool:2,conv:4x3,flatten,dense:5", 8).unwrap();
    let xs = inputs(3, 16, 3);
    let cfg = LocalConfig {
        trace: true,
        ..LocalConfig::default()
    };
    for sid in SchemeId::all_supported(TruncMode::Prob) {
        let out = simulate(sid, SimOptions::seed(9), &model, &xs, cfg).unwrap();
        for tr in &out.traces {
            let zps = model.input_zero_points();
            let shapes = model.shapes().unwrap();
            let mut shape = (1, model.input_len);
            let mut prev: Vec<i64> = Vec::new();
            for (i, got) in tr.iter().enumerate() {
                if i > 0 {
                    // Re-apply the layer to the secure layer input.
                    let want = oracle::apply_layer(&model, i, &prev, shape, zps[i]);
                    if i + 1 < tr.len() {
                        for (a, b) in got.iter().zip(&want) {
                            assert!((a - b).abs() <= 1, "{sid} layer {i}: {a} vs {b}");
                        }
                    }
                }
                shape = shapes[i];
                prev = got.clone();
            }
        }
    }
}
