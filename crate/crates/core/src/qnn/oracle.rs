//! Integer-only reference evaluation. This defines the semantics the secure
//! engine must reproduce.

use super::{flatten, Layer, Model, Padding, Requant, Shape};
use crate::model_io::ModelError;

/// `Z[f][j] = bias[f] + sum_{d,l} w[f][d][l] * x[d][j + l - left]`, with
/// zeros outside `x`. Output width equals input width.
pub fn conv_acc(
    x: &[i64],
    (d, m): Shape,
    w: &[i64],
    filters: usize,
    width: usize,
    bias: &[i64],
    padding: Padding,
) -> Vec<i64> {
    let left = padding.left(width) as isize;
    let mut out = vec![0i64; filters * m];
    for f in 0..filters {
        for j in 0..m {
            let mut acc = bias[f];
            for c in 0..d {
                for l in 0..width {
                    let pos = j as isize + l as isize - left;
                    if pos >= 0 && (pos as usize) < m {
                        acc += w[(f * d + c) * width + l] * x[c * m + pos as usize];
                    }
                }
            }
            out[f * m + j] = acc;
        }
    }
    out
}

/// `y = W^T x + b` for `W` of `inputs x outputs`.
pub fn dense_acc(x: &[i64], w: &[i64], outputs: usize, bias: &[i64]) -> Vec<i64> {
    (0..outputs)
        .map(|o| bias[o] + x.iter().enumerate().map(|(i, &v)| v * w[i * outputs + o]).sum::<i64>())
        .collect()
}

/// `clamp(z_out + round(acc * M), lo, 255)` with `lo = z_out` under RELU,
/// else 0. Rounding is half-up on the reduced multiplier.
pub fn requantize(acc: i64, rq: Requant, z_out: i64, relu: bool) -> i64 {
    let s = rq.shift();
    let y = acc * rq.reduced() + (1i64 << (s - 1));
    let v = (y >> s) + z_out;
    let lo = if relu { z_out } else { 0 };
    v.clamp(lo, 255)
}

/// Rounded block averages over non-overlapping windows; a partial block at
/// the end is dropped.
pub fn avg_pool(x: &[i64], (d, m): Shape, p: usize) -> Vec<i64> {
    let mo = m / p;
    let mut out = Vec::with_capacity(d * mo);
    for c in 0..d {
        for j in 0..mo {
            let s: i64 = x[c * m + j * p..c * m + (j + 1) * p].iter().sum();
            out.push((s + (p as i64) / 2).div_euclid(p as i64));
        }
    }
    out
}

/// Lowest index of the maximum.
pub fn argmax(v: &[i64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Every layer's output plus the predicted class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    /// One entry per layer; the argmax layer's entry is the class index.
    pub outputs: Vec<Vec<i64>>,
    pub class: usize,
}

/// Apply layer `i` to `x` (the layer's input tensor, with zero-point `z_in`).
pub fn apply_layer(model: &Model, i: usize, x: &[i64], in_shape: Shape, z_in: i64) -> Vec<i64> {
    match &model.layers[i] {
        Layer::Conv(c) => {
            let xs: Vec<i64> = x.iter().map(|&v| v - z_in).collect();
            let acc = conv_acc(&xs, in_shape, &c.weights, c.filters, c.width, &c.bias, c.padding);
            acc.into_iter()
                .map(|a| requantize(a, c.requant, c.out_qp.zero_point, c.relu))
                .collect()
        }
        Layer::Pool(p) => avg_pool(x, in_shape, p.window),
        Layer::Flatten => flatten(x, in_shape),
        Layer::Dense(d) => {
            let xs: Vec<i64> = flatten(x, in_shape).iter().map(|&v| v - z_in).collect();
            dense_acc(&xs, &d.weights, d.outputs, &d.bias)
                .into_iter()
                .map(|a| requantize(a, d.requant, d.out_qp.zero_point, d.relu))
                .collect()
        }
        Layer::ArgMax => vec![argmax(x) as i64],
    }
}

pub fn run(model: &Model, input: &[u8]) -> Result<Trace, ModelError> {
    if input.len() != model.input_len {
        return Err(ModelError::Length {
            got: input.len(),
            want: model.input_len,
        });
    }
    let shapes = model.shapes()?;
    let zps = model.input_zero_points();
    let mut x: Vec<i64> = input.iter().map(|&v| v as i64).collect();
    let mut shape = (1, model.input_len);
    let mut outputs = Vec::with_capacity(model.layers.len());
    for i in 0..model.layers.len() {
        x = apply_layer(model, i, &x, shape, zps[i]);
        shape = shapes[i];
        outputs.push(x.clone());
    }
    let class = match model.layers.last() {
        Some(Layer::ArgMax) => x[0] as usize,
        _ => argmax(&x),
    };
    Ok(Trace { outputs, class })
}

pub fn classify(model: &Model, input: &[u8]) -> Result<usize, ModelError> {
    run(model, input).map(|t| t.class)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn worked_example() -> (Vec<i64>, Vec<i64>) {
        let x = vec![
            2, 4, 3, 0, 1, 2, //
            3, 1, 6, 8, 1, 3, //
            1, 0, 2, 5, 7, 4, //
            2, 7, 1, 2, 3, 1,
        ];
        let w = vec![
            1, 2, 0, //
            -1, 0, 1, //
            0, -3, -1, //
            3, -2, -4,
        ];
        (x, w)
    }

    #[test]
    fn worked_example_convolution() {
        let (x, w) = worked_example();
        let z = conv_acc(&x, (4, 6), &w, 1, 3, &[2], Padding::Trailing);
        assert_eq!(z, vec![1, 19, -35, -30, 1, 4]);
        let relu: Vec<i64> = z.iter().map(|&v| v.max(0)).collect();
        assert_eq!(relu, vec![1, 19, 0, 0, 1, 4]);
        // Exact averages as halves: [10, 0, 2.5].
        let sums: Vec<i64> = relu.chunks(2).map(|c| c.iter().sum()).collect();
        let avg: Vec<f64> = sums.iter().map(|&s| s as f64 / 2.0).collect();
        assert_eq!(avg, vec![10.0, 0.0, 2.5]);
    }

    #[test]
    fn conv_matches_naive_padded_loop() {
        // Explicitly padded input, then a valid convolution.
        let (x, w) = worked_example();
        for pad in [Padding::Trailing, Padding::SameCentered] {
            let left = pad.left(3);
            let mut xp = vec![vec![0i64; 6 + 2]; 4];
            for c in 0..4 {
                for j in 0..6 {
                    xp[c][j + left] = x[c * 6 + j];
                }
            }
            let want: Vec<i64> = (0..6)
                .map(|j| {
                    let mut a = 2;
                    for c in 0..4 {
                        for l in 0..3 {
                            a += w[c * 3 + l] * xp[c][j + l];
                        }
                    }
                    a
                })
                .collect();
            assert_eq!(conv_acc(&x, (4, 6), &w, 1, 3, &[2], pad), want);
        }
    }

    #[test]
    fn requantize_examples() {
        let half = Requant { m0: 1 << 30, n: 0 };
        assert_eq!(requantize(512, half, 3, false), 255);
        assert_eq!(requantize(0, half, 3, false), 3);
        assert_eq!(requantize(-100, half, 3, true), 3);
        assert_eq!(requantize(-100, half, 3, false), 0);
    }

    #[test]
    fn requantize_tracks_real_multiplier() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        for _ in 0..20000 {
            let m = 2f64.powf(rng.gen_range(-13.0..-0.01));
            let rq = Requant::from_real(m).unwrap();
            let z = rng.gen_range(0..=255);
            let acc = rng.gen_range(-(1i64 << 25)..(1 << 25));
            let reference = (z as f64 + acc as f64 * m).round().clamp(0.0, 255.0);
            let got = requantize(acc, rq, z, false);
            assert!((got as f64 - reference).abs() <= 1.0, "acc={acc} m={m}");
        }
    }

    #[test]
    fn pooling_rounds_to_nearest() {
        assert_eq!(avg_pool(&[1, 2, 3, 4, 5], (1, 5), 2), vec![2, 4]);
        assert_eq!(avg_pool(&[1, 19, 0, 0, 1, 4], (1, 6), 2), vec![10, 0, 3]);
        assert_eq!(avg_pool(&[7, 8, 9], (1, 3), 1), vec![7, 8, 9]);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[3, 9, 9, 1]), 1);
        assert_eq!(argmax(&[5]), 0);
    }
}
