//! Quantized 1-D CNNs: model types, the integer-only plaintext oracle, and
//! the secure engine that evaluates the same graph over shares.
//!
//! Tensors are stored channel-major (`D x M`, element `d * M + j`). Flatten
//! reorders position-major (`j * D + d`), as a channels-last framework would.

pub mod oracle;
pub mod secure;

use crate::model_io::ModelError;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Largest requantization shift `n`; `M = m0 2^(-31-n)` is then at least
/// `2^-13`.
pub const MAX_SHIFT: u32 = 12;
/// Bits kept of the 31-bit multiplier `m0`.
pub const MULT_BITS: u32 = 12;
/// Accumulators must stay below this in magnitude.
pub const ACC_BOUND: i64 = 1 << 26;
/// Largest pooling window.
pub const MAX_WINDOW: usize = 64;

/// Per-tensor affine quantization: `real = scale * (q - zero_point)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i64,
}

impl QuantParams {
    pub fn new(scale: f64, zero_point: i64) -> QuantParams {
        QuantParams { scale, zero_point }
    }

    /// Nearest representable value, ties to the smaller one; out-of-domain
    /// inputs saturate.
    pub fn quantize(&self, alpha: f64) -> u8 {
        let q = (alpha / self.scale - 0.5).ceil() + self.zero_point as f64;
        q.clamp(0.0, 255.0) as u8
    }

    pub fn dequantize(&self, a: u8) -> f64 {
        self.scale * (a as i64 - self.zero_point) as f64
    }
}

/// Requantization multiplier `m0 2^(-31-n)` with `m0` in `[2^30, 2^31)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requant {
    pub m0: u32,
    pub n: u32,
}

impl Requant {
    /// Decompose a positive real multiplier.
    pub fn from_real(m: f64) -> Option<Requant> {
        if !(m > 0.0 && m < 1.0) {
            return None;
        }
        let mut n = 0u32;
        let mut v = m;
        while v < 0.5 {
            v *= 2.0;
            n += 1;
            if n > 64 {
                return None;
            }
        }
        let mut m0 = (v * 2f64.powi(31)).round() as u64;
        if m0 == 1 << 31 {
            if n == 0 {
                return None;
            }
            m0 = 1 << 30;
            n -= 1;
        }
        Some(Requant { m0: m0 as u32, n })
    }

    pub fn real(&self) -> f64 {
        self.m0 as f64 * 2f64.powi(-31 - self.n as i32)
    }

    /// The multiplier rounded to [`MULT_BITS`] bits, in `[2^11, 2^12]`.
    pub fn reduced(&self) -> i64 {
        let drop = 31 - MULT_BITS;
        ((self.m0 as i64) + (1 << (drop - 1))) >> drop
    }

    /// Total right shift applied after multiplying by [`Requant::reduced`].
    pub fn shift(&self) -> u32 {
        MULT_BITS + self.n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// `floor((L-1)/2)` on the left, the rest on the right.
    SameCentered,
    /// `L-1` columns appended on the right.
    Trailing,
}

impl Padding {
    pub fn left(self, width: usize) -> usize {
        match self {
            Padding::SameCentered => (width - 1) / 2,
            Padding::Trailing => 0,
        }
    }
}

impl fmt::Display for Padding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Padding::SameCentered => "same_centered",
            Padding::Trailing => "trailing",
        })
    }
}

impl FromStr for Padding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "same_centered" => Ok(Padding::SameCentered),
            "trailing" => Ok(Padding::Trailing),
            _ => Err(format!("unknown padding '{s}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divisor {
    Public,
    Secret,
}

impl fmt::Display for Divisor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Divisor::Public => "public",
            Divisor::Secret => "secret",
        })
    }
}

impl FromStr for Divisor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "public" => Ok(Divisor::Public),
            "secret" => Ok(Divisor::Secret),
            _ => Err(format!("unknown divisor visibility '{s}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub filters: usize,
    pub width: usize,
    pub depth: usize,
    pub padding: Padding,
    pub relu: bool,
    /// `F x D x L`, row-major.
    pub weights: Vec<i64>,
    pub bias: Vec<i64>,
    pub weight_qp: QuantParams,
    pub out_qp: QuantParams,
    pub requant: Requant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pool {
    pub window: usize,
    pub divisor: Divisor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub relu: bool,
    /// `inputs x outputs`, row-major.
    pub weights: Vec<i64>,
    pub bias: Vec<i64>,
    pub weight_qp: QuantParams,
    pub out_qp: QuantParams,
    pub requant: Requant,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(Conv),
    Pool(Pool),
    Flatten,
    Dense(Dense),
    ArgMax,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Pool(_) => "pool",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
            Layer::ArgMax => "argmax",
        }
    }
}

/// `(channels, width)`.
pub type Shape = (usize, usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub name: String,
    pub version: u32,
    pub labels: Vec<String>,
    pub input_len: usize,
    pub input_qp: QuantParams,
    pub layers: Vec<Layer>,
}

impl Model {
    /// Output shape of every layer, checking that each one composes.
    pub fn shapes(&self) -> Result<Vec<Shape>, ModelError> {
        let mut cur: Shape = (1, self.input_len);
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let err = |field: &str, msg: String| ModelError::layer(i, l.kind(), field, msg);
            cur = match l {
                Layer::Conv(c) => {
                    if c.depth != cur.0 {
                        return Err(err(
                            "depth",
                            format!("is {} but the input has {} channels", c.depth, cur.0),
                        ));
                    }
                    (c.filters, cur.1)
                }
                Layer::Pool(p) => {
                    if p.window == 0 || p.window > cur.1 {
                        return Err(err(
                            "window",
                            format!("{} does not fit width {}", p.window, cur.1),
                        ));
                    }
                    (cur.0, cur.1 / p.window)
                }
                Layer::Flatten => (cur.0 * cur.1, 1),
                Layer::Dense(d) => {
                    if d.inputs != cur.0 * cur.1 {
                        return Err(err(
                            "inputs",
                            format!("is {} but the input has {} values", d.inputs, cur.0 * cur.1),
                        ));
                    }
                    (d.outputs, 1)
                }
                Layer::ArgMax => {
                    if cur.0 * cur.1 == 0 {
                        return Err(err("input", "is empty".into()));
                    }
                    (1, 1)
                }
            };
            out.push(cur);
        }
        Ok(out)
    }

    /// Zero-point of each layer's input.
    pub fn input_zero_points(&self) -> Vec<i64> {
        let mut z = self.input_qp.zero_point;
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            out.push(z);
            match l {
                Layer::Conv(c) => z = c.out_qp.zero_point,
                Layer::Dense(d) => z = d.out_qp.zero_point,
                _ => {}
            }
        }
        out
    }

    /// Scale of each layer's input.
    pub fn input_scales(&self) -> Vec<f64> {
        let mut s = self.input_qp.scale;
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            out.push(s);
            match l {
                Layer::Conv(c) => s = c.out_qp.scale,
                Layer::Dense(d) => s = d.out_qp.scale,
                _ => {}
            }
        }
        out
    }

    pub fn classes(&self) -> usize {
        let shapes = self.shapes().unwrap_or_default();
        let n = self.layers.len();
        if n >= 2 {
            let (c, w) = shapes[n - 2];
            c * w
        } else {
            0
        }
    }

    /// Public architecture: everything the computing parties need to lay out
    /// the computation, and nothing about parameter values. With
    /// `public_shift`, requantization shifts are disclosed too.
    pub fn arch(&self, public_shift: bool) -> Arch {
        Arch {
            input_len: self.input_len,
            input_zero_point: self.input_qp.zero_point,
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Conv(c) => ArchLayer::Conv {
                        filters: c.filters,
                        width: c.width,
                        depth: c.depth,
                        padding: c.padding,
                        relu: c.relu,
                        shift: public_shift.then_some(c.requant.n),
                    },
                    Layer::Pool(p) => ArchLayer::Pool {
                        window: p.window,
                        divisor: p.divisor,
                    },
                    Layer::Flatten => ArchLayer::Flatten,
                    Layer::Dense(d) => ArchLayer::Dense {
                        inputs: d.inputs,
                        outputs: d.outputs,
                        relu: d.relu,
                        shift: public_shift.then_some(d.requant.n),
                    },
                    Layer::ArgMax => ArchLayer::ArgMax,
                })
                .collect(),
        }
    }
}

/// Public description of a model, sent by its owner at session start.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub input_len: usize,
    pub input_zero_point: i64,
    pub layers: Vec<ArchLayer>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ArchLayer {
    Conv {
        filters: usize,
        width: usize,
        depth: usize,
        padding: Padding,
        relu: bool,
        shift: Option<u32>,
    },
    Pool {
        window: usize,
        divisor: Divisor,
    },
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
        relu: bool,
        shift: Option<u32>,
    },
    ArgMax,
}

impl Arch {
    pub fn shapes(&self) -> Vec<Shape> {
        let mut cur = (1, self.input_len);
        self.layers
            .iter()
            .map(|l| {
                cur = match *l {
                    ArchLayer::Conv { filters, .. } => (filters, cur.1),
                    ArchLayer::Pool { window, .. } => (cur.0, cur.1 / window.max(1)),
                    ArchLayer::Flatten => (cur.0 * cur.1, 1),
                    ArchLayer::Dense { outputs, .. } => (outputs, 1),
                    ArchLayer::ArgMax => (1, 1),
                };
                cur
            })
            .collect()
    }
}

/// Channel-major to position-major.
pub fn flatten<T: Copy>(x: &[T], (d, m): Shape) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for j in 0..m {
        for i in 0..d {
            out.push(x[i * m + j]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_examples() {
        let qp = QuantParams::new(0.5, 10);
        assert_eq!(qp.quantize(2.0), 14);
        // Equidistant between 14 and 15: the smaller real wins.
        assert_eq!(qp.quantize(2.25), 14);
        assert_eq!(qp.quantize(2.26), 15);
        assert_eq!(qp.dequantize(14), 2.0);
        assert_eq!(qp.quantize(-100.0), 0);
        assert_eq!(qp.quantize(1e9), 255);
    }

    #[test]
    fn quantize_is_nearest_against_brute_force() {
        let qp = QuantParams::new(0.037, 101);
        for k in -5000..5000 {
            let alpha = k as f64 * 0.00123;
            let best = (0..=255u8)
                .min_by(|&a, &b| {
                    let da = (qp.dequantize(a) - alpha).abs();
                    let db = (qp.dequantize(b) - alpha).abs();
                    da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                })
                .unwrap();
            assert_eq!(qp.quantize(alpha), best, "alpha={alpha}");
        }
    }

    #[test]
    fn requant_decomposition() {
        let r = Requant::from_real(0.5).unwrap();
        assert_eq!(r, Requant { m0: 1 << 30, n: 0 });
        for &m in &[0.9999, 0.3, 0.0123, 2f64.powi(-13), 1e-3] {
            let r = Requant::from_real(m).unwrap();
            assert!((1u32 << 30..1u32 << 31).contains(&r.m0));
            assert!(((r.real() - m) / m).abs() < 2f64.powi(-30));
        }
        assert!(Requant::from_real(1.0).is_none());
    }
}
