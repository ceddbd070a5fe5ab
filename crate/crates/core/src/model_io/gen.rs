//! Seeded random models for desk-scale testing.
//!
//! Shape grammar, comma separated:
//!
//! ```text
//! in:N                      input length (default 40, first if present)
//! conv:FxL[:same|:trailing][:linear]
//! pool:P[:public|:secret]   secret divisor unless stated
//! flatten
//! dense:O[:relu]
//! argmax                    appended when missing
//! ```

use super::{validate, ModelError};
use crate::qnn::{
    flatten, oracle, Conv, Dense, Divisor, Layer, Model, Padding, Pool, QuantParams, Requant,
    ACC_BOUND,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ShapeToken {
    Input(usize),
    Conv {
        filters: usize,
        width: usize,
        padding: Padding,
        relu: bool,
    },
    Pool {
        window: usize,
        divisor: Divisor,
    },
    Flatten,
    Dense {
        outputs: usize,
        relu: bool,
    },
    ArgMax,
}

fn num(tok: &str, s: &str) -> Result<usize, ModelError> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(ModelError::Spec(format!("'{tok}': '{s}' is not a positive integer"))),
    }
}

pub fn parse_shape_spec(spec: &str) -> Result<Vec<ShapeToken>, ModelError> {
    let mut out = Vec::new();
    for tok in spec.split(',').map(str::trim) {
        let mut parts = tok.split(':');
        let head = parts.next().unwrap_or("");
        let opts: Vec<&str> = parts.collect();
        let bad_opt = |o: &str| ModelError::Spec(format!("'{tok}': unknown option '{o}'"));
        let t = match head {
            "in" => match opts.as_slice() {
                [n] => ShapeToken::Input(num(tok, n)?),
                _ => return Err(ModelError::Spec(format!("'{tok}': expected in:N"))),
            },
            "conv" => {
                let Some((fl, rest)) = opts.split_first() else {
                    return Err(ModelError::Spec(format!("'{tok}': expected conv:FxL")));
                };
                let (f, l) = fl
                    .split_once('x')
                    .ok_or_else(|| ModelError::Spec(format!("'{tok}': expected conv:FxL")))?;
                let (mut padding, mut relu) = (Padding::SameCentered, true);
                for o in rest {
                    match *o {
                        "same" => padding = Padding::SameCentered,
                        "trailing" => padding = Padding::Trailing,
                        "linear" => relu = false,
                        "relu" => relu = true,
                        o => return Err(bad_opt(o)),
                    }
                }
                ShapeToken::Conv {
                    filters: num(tok, f)?,
                    width: num(tok, l)?,
                    padding,
                    relu,
                }
            }
            "pool" => {
                let Some((p, rest)) = opts.split_first() else {
                    return Err(ModelError::Spec(format!("'{tok}': expected pool:P")));
                };
                let mut divisor = Divisor::Secret;
                for o in rest {
                    divisor = o.parse().map_err(|_| bad_opt(o))?;
                }
                ShapeToken::Pool {
                    window: num(tok, p)?,
                    divisor,
                }
            }
            "flatten" if opts.is_empty() => ShapeToken::Flatten,
            "argmax" if opts.is_empty() => ShapeToken::ArgMax,
            "dense" => {
                let Some((o, rest)) = opts.split_first() else {
                    return Err(ModelError::Spec(format!("'{tok}': expected dense:O")));
                };
                let mut relu = false;
                for r in rest {
                    match *r {
                        "relu" => relu = true,
                        "linear" => relu = false,
                        r => return Err(bad_opt(r)),
                    }
                }
                ShapeToken::Dense {
                    outputs: num(tok, o)?,
                    relu,
                }
            }
            _ => return Err(ModelError::Spec(format!("unknown token '{tok}'"))),
        };
        if matches!(t, ShapeToken::Input(_)) && !out.is_empty() {
            return Err(ModelError::Spec("in:N must come first".into()));
        }
        out.push(t);
    }
    Ok(out)
}

fn log_uniform(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
    2f64.powf(rng.gen_range(lo..=hi))
}

struct Params {
    bias: Vec<i64>,
    weight_qp: QuantParams,
    out_qp: QuantParams,
    requant: Requant,
}

const BIAS_CAP: i64 = 1 << 20;
/// Inputs pushed through the model while generating, to set ranges the way
/// post-training calibration would.
const CALIBRATION: usize = 16;

/// Int8 weights for `outputs` accumulators of `fan_in` terms, small enough
/// that no accumulator can leave the bound.
fn draw_weights(
    rng: &mut ChaCha20Rng,
    fan_in: usize,
    outputs: usize,
    what: &str,
) -> Result<Vec<i64>, ModelError> {
    let room = (ACC_BOUND - 1 - BIAS_CAP) / (fan_in as i64 * 255);
    let wmax = room.min(127);
    if wmax < 1 {
        return Err(ModelError::Spec(format!(
            "{what}: fan-in {fan_in} cannot meet the accumulator bound"
        )));
    }
    Ok((0..fan_in * outputs)
        .map(|_| rng.gen_range(-wmax..=wmax))
        .collect())
}

/// Bias and quantization from calibration accumulators, `accs[o]` holding
/// every value seen for output `o`.
fn calibrate(
    rng: &mut ChaCha20Rng,
    accs: &[Vec<i64>],
    s_in: f64,
    relu: bool,
    what: &str,
) -> Result<Params, ModelError> {
    let stats = |v: &[i64]| {
        let n = v.len().max(1) as f64;
        let mean = v.iter().sum::<i64>() as f64 / n;
        let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let bias: Vec<i64> = accs
        .iter()
        .map(|v| {
            let (mean, sd) = stats(v);
            let jitter = rng.gen_range(-0.5..=0.5) * sd;
            ((-mean + jitter).round() as i64).clamp(-BIAS_CAP, BIAS_CAP)
        })
        .collect();
    let centred: Vec<i64> = accs
        .iter()
        .zip(&bias)
        .flat_map(|(v, &b)| v.iter().map(move |&x| x + b))
        .collect();
    let sd = stats(&centred).1.max(1.0);
    let s_w = log_uniform(rng, -8.0, 0.0);
    let m = (rng.gen_range(24.0..64.0) / sd).clamp(2f64.powf(-12.9), 0.9);
    let s_out = s_in * s_w / m;
    let requant = Requant::from_real(s_in * s_w / s_out)
        .ok_or_else(|| ModelError::Spec(format!("{what}: multiplier out of range")))?;
    let z_out = if relu {
        rng.gen_range(0..=32)
    } else {
        rng.gen_range(96..=160)
    };
    Ok(Params {
        bias,
        weight_qp: QuantParams::new(s_w, 0),
        out_qp: QuantParams::new(s_out, z_out),
        requant,
    })
}

/// A validated random model with the given shape. Same `(spec, seed)`,
/// same model.
pub fn gen_random_model(spec: &str, seed: u64) -> Result<Model, ModelError> {
    let mut toks = parse_shape_spec(spec)?;
    let input_len = match toks.first() {
        Some(ShapeToken::Input(n)) => {
            let n = *n;
            toks.remove(0);
            n
        }
        _ => 40,
    };
    if toks.last() != Some(&ShapeToken::ArgMax) {
        toks.push(ShapeToken::ArgMax);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let input_qp = QuantParams::new(log_uniform(&mut rng, -8.0, 0.0), rng.gen_range(0..=255));
    let mut shape = (1usize, input_len);
    let mut scale = input_qp.scale;
    let mut z_in = input_qp.zero_point;
    let mut cal: Vec<Vec<i64>> = (0..CALIBRATION)
        .map(|_| (0..input_len).map(|_| rng.gen_range(0..=255)).collect())
        .collect();
    let mut layers = Vec::new();
    for (i, t) in toks.iter().enumerate() {
        let what = format!("layer {i}");
        let centred: Vec<Vec<i64>> = cal
            .iter()
            .map(|x| x.iter().map(|&v| v - z_in).collect())
            .collect();
        let layer = match *t {
            ShapeToken::Input(_) => unreachable!("parser keeps in:N first"),
            ShapeToken::Conv {
                filters,
                width,
                padding,
                relu,
            } => {
                let depth = shape.0;
                let weights = draw_weights(&mut rng, depth * width, filters, &what)?;
                let zeros = vec![0; filters];
                let mut accs = vec![Vec::new(); filters];
                for x in &centred {
                    let z = oracle::conv_acc(x, shape, &weights, filters, width, &zeros, padding);
                    for (f, chunk) in z.chunks(shape.1).enumerate() {
                        accs[f].extend_from_slice(chunk);
                    }
                }
                let p = calibrate(&mut rng, &accs, scale, relu, &what)?;
                Layer::Conv(Conv {
                    filters,
                    width,
                    depth,
                    padding,
                    relu,
                    weights,
                    bias: p.bias,
                    weight_qp: p.weight_qp,
                    out_qp: p.out_qp,
                    requant: p.requant,
                })
            }
            ShapeToken::Pool { window, divisor } => {
                if window > shape.1 {
                    return Err(ModelError::Spec(format!(
                        "{what}: pool:{window} on width {}",
                        shape.1
                    )));
                }
                Layer::Pool(Pool { window, divisor })
            }
            ShapeToken::Flatten => Layer::Flatten,
            ShapeToken::Dense { outputs, relu } => {
                let inputs = shape.0 * shape.1;
                let per_out = draw_weights(&mut rng, inputs, outputs, &what)?;
                // Drawn per output; stored inputs x outputs.
                let mut weights = vec![0; inputs * outputs];
                for o in 0..outputs {
                    for k in 0..inputs {
                        weights[k * outputs + o] = per_out[o * inputs + k];
                    }
                }
                let zeros = vec![0; outputs];
                let mut accs = vec![Vec::new(); outputs];
                for x in &centred {
                    let flat = flatten(x, shape);
                    for (o, a) in oracle::dense_acc(&flat, &weights, outputs, &zeros).into_iter().enumerate() {
                        accs[o].push(a);
                    }
                }
                let p = calibrate(&mut rng, &accs, scale, relu, &what)?;
                Layer::Dense(Dense {
                    inputs,
                    outputs,
                    relu,
                    weights,
                    bias: p.bias,
                    weight_qp: p.weight_qp,
                    out_qp: p.out_qp,
                    requant: p.requant,
                })
            }
            ShapeToken::ArgMax => Layer::ArgMax,
        };
        // Push the calibration batch through the finished layer.
        let single = Model {
            name: String::new(),
            version: 0,
            labels: Vec::new(),
            input_len,
            input_qp,
            layers: vec![layer],
        };
        cal = cal
            .iter()
            .map(|x| oracle::apply_layer(&single, 0, x, shape, z_in))
            .collect();
        let layer = single.layers.into_iter().next().expect("one layer");
        shape = match &layer {
            Layer::Conv(c) => (c.filters, shape.1),
            Layer::Pool(p) => (shape.0, shape.1 / p.window),
            Layer::Flatten => (shape.0 * shape.1, 1),
            Layer::Dense(d) => (d.outputs, 1),
            Layer::ArgMax => (1, 1),
        };
        match &layer {
            Layer::Conv(c) => (scale, z_in) = (c.out_qp.scale, c.out_qp.zero_point),
            Layer::Dense(d) => (scale, z_in) = (d.out_qp.scale, d.out_qp.zero_point),
            _ => {}
        }
        layers.push(layer);
    }
    let model = Model {
        name: format!("random-{seed}"),
        version: 1,
        labels: Vec::new(),
        input_len,
        input_qp,
        layers,
    };
    validate(&model)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::{parse_model, write_model};

    #[test]
    fn deterministic_in_seed() {
        let a = gen_random_model("conv:8x3,pool:2,conv:8x3,dense:4", 11).unwrap();
        let b = gen_random_model("conv:8x3,pool:2,conv:8x3,dense:4", 11).unwrap();
        assert_eq!(write_model(&a), write_model(&b));
        let c = gen_random_model("conv:8x3,pool:2,conv:8x3,dense:4", 12).unwrap();
        assert_ne!(write_model(&a), write_model(&c));
    }

    #[test]
    fn single_dense_layer() {
        let m = gen_random_model("in:4,dense:3", 1).unwrap();
        assert_eq!(m.layers.len(), 2);
        assert_eq!(m.shapes().unwrap()[0], (3, 1));
        assert_eq!(m.classes(), 3);
    }

    #[test]
    fn generated_models_validate() {
        let specs = [
            "in:16,conv:4x3,pool:2,flatten,dense:5",
            "in:9,conv:2x5:trailing:linear,pool:3:public,dense:3:relu,dense:2",
            "conv:8x3,pool:4,conv:8x5,flatten,dense:8",
        ];
        for seed in 0..100 {
            let m = gen_random_model(specs[seed as usize % specs.len()], seed).unwrap();
            let back = parse_model(&write_model(&m)).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn grammar_errors() {
        for bad in ["conv:8", "pool", "dense:0", "conv:4x3,in:5", "lstm:3", "pool:2:maybe"] {
            assert!(matches!(gen_random_model(bad, 0), Err(ModelError::Spec(_))), "{bad}");
        }
        assert!(gen_random_model("in:4,pool:8", 0).is_err());
        // 1280 x 8 dense fits; a fan-in this large cannot.
        assert!(gen_random_model("in:300000,dense:2", 0).is_err());
    }
}
