//! Text formats for models (`.qmodel`), inputs (`.qvec`) and golden test
//! vectors (`.qtest`). The grammar is documented in `docs/formats.md`.
//!
//! Files are line-oriented. A model's checksum is the SHA-256 of its
//! canonical serialization (everything before the `checksum` line), so a
//! loaded model writes back byte for byte.

mod gen;
mod vectors;

pub use gen::{gen_random_model, parse_shape_spec, ShapeToken};
pub use vectors::{
    load_input, load_test_vectors, parse_input, parse_test_vectors, save_input,
    save_test_vectors, write_input, write_test_vectors, TestCase, TestVectors,
};

use crate::qnn::{
    Conv, Dense, Divisor, Layer, Model, Padding, Pool, QuantParams, Requant, ACC_BOUND, MAX_SHIFT,
    MAX_WINDOW,
};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

pub const MODEL_MAGIC: &str = "obliv1d-qmodel";
pub const FORMAT_VERSION: u32 = 1;
/// Relative tolerance between the stored multiplier and the one implied by
/// the scales.
pub const REQUANT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unsupported format version {0}")]
    Version(String),
    #[error("checksum mismatch: file says {stored}, contents hash to {computed}")]
    Checksum { stored: String, computed: String },
    #[error("layer {layer} ({kind}): {field} {msg}")]
    Layer {
        layer: usize,
        kind: String,
        field: String,
        msg: String,
    },
    #[error("{field}: {msg}")]
    Field { field: String, msg: String },
    #[error("length mismatch: got {got} values, expected {want}")]
    Length { got: usize, want: usize },
    #[error("test vectors are bound to model {found}, not {expected}")]
    Binding { expected: String, found: String },
    #[error("shape spec: {0}")]
    Spec(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

impl ModelError {
    pub fn layer(layer: usize, kind: &str, field: &str, msg: impl Into<String>) -> ModelError {
        ModelError::Layer {
            layer,
            kind: kind.into(),
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub fn field(field: &str, msg: impl Into<String>) -> ModelError {
        ModelError::Field {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn syntax(line: usize, msg: impl Into<String>) -> ModelError {
        ModelError::Syntax {
            line,
            msg: msg.into(),
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String, ModelError> {
    std::fs::read_to_string(path).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), ModelError> {
    std::fs::write(path, text).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

// ---- serialization ----

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn qp_line(out: &mut String, key: &str, qp: &QuantParams) {
    let _ = writeln!(out, "{key} scale={} zero_point={}", qp.scale, qp.zero_point);
}

fn body(model: &Model) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MODEL_MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(s, "model name={} version={}", model.name, model.version);
    if model.labels.is_empty() {
        s.push_str("labels\n");
    } else {
        let _ = writeln!(s, "labels {}", model.labels.join(" "));
    }
    let _ = writeln!(
        s,
        "input length={} scale={} zero_point={}",
        model.input_len, model.input_qp.scale, model.input_qp.zero_point
    );
    for l in &model.layers {
        match l {
            Layer::Conv(c) => {
                let _ = writeln!(
                    s,
                    "layer conv filters={} width={} depth={} padding={} relu={}",
                    c.filters, c.width, c.depth, c.padding, c.relu
                );
                qp_line(&mut s, "weight_qp", &c.weight_qp);
                qp_line(&mut s, "out_qp", &c.out_qp);
                let _ = writeln!(s, "requant m0={} n={}", c.requant.m0, c.requant.n);
                let _ = writeln!(
                    s,
                    "weights {}x{}x{} {}",
                    c.filters,
                    c.depth,
                    c.width,
                    join(&c.weights)
                );
                let _ = writeln!(s, "bias {} {}", c.bias.len(), join(&c.bias));
            }
            Layer::Pool(p) => {
                let _ = writeln!(s, "layer pool window={} divisor={}", p.window, p.divisor);
            }
            Layer::Flatten => s.push_str("layer flatten\n"),
            Layer::Dense(d) => {
                let _ = writeln!(
                    s,
                    "layer dense inputs={} outputs={} relu={}",
                    d.inputs, d.outputs, d.relu
                );
                qp_line(&mut s, "weight_qp", &d.weight_qp);
                qp_line(&mut s, "out_qp", &d.out_qp);
                let _ = writeln!(s, "requant m0={} n={}", d.requant.m0, d.requant.n);
                let _ = writeln!(
                    s,
                    "weights {}x{} {}",
                    d.inputs,
                    d.outputs,
                    join(&d.weights)
                );
                let _ = writeln!(s, "bias {} {}", d.bias.len(), join(&d.bias));
            }
            Layer::ArgMax => s.push_str("layer argmax\n"),
        }
    }
    s
}

/// Hex SHA-256 of the canonical serialization.
pub fn checksum(model: &Model) -> String {
    hex::encode(Sha256::digest(body(model).as_bytes()))
}

/// Canonical text of a model, checksum line included.
pub fn write_model(model: &Model) -> String {
    let b = body(model);
    let sum = hex::encode(Sha256::digest(b.as_bytes()));
    format!("{b}checksum {sum}\n")
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<(), ModelError> {
    validate(model)?;
    write_file(path.as_ref(), &write_model(model))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model, ModelError> {
    parse_model(&read_file(path.as_ref())?)
}

// ---- parsing ----

#[derive(Clone)]
struct Line<'a> {
    no: usize,
    key: &'a str,
    rest: Vec<&'a str>,
}

fn lines(text: &str) -> Vec<Line<'_>> {
    text.lines()
        .enumerate()
        .filter_map(|(i, l)| {
            let l = l.trim();
            if l.is_empty() || l.starts_with('#') {
                return None;
            }
            let mut it = l.split_whitespace();
            let key = it.next()?;
            Some(Line {
                no: i + 1,
                key,
                rest: it.collect(),
            })
        })
        .collect()
}

/// `key=value` pairs with every key required exactly once.
struct Kv<'a> {
    line: usize,
    map: BTreeMap<&'a str, &'a str>,
}

impl<'a> Kv<'a> {
    fn new(l: &Line<'a>, keys: &[&str]) -> Result<Kv<'a>, ModelError> {
        let mut map = BTreeMap::new();
        for tok in &l.rest {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| ModelError::syntax(l.no, format!("expected key=value, got '{tok}'")))?;
            if !keys.contains(&k) {
                return Err(ModelError::syntax(l.no, format!("unknown key '{k}' in {}", l.key)));
            }
            if map.insert(k, v).is_some() {
                return Err(ModelError::syntax(l.no, format!("duplicate key '{k}'")));
            }
        }
        for k in keys {
            if !map.contains_key(k) {
                return Err(ModelError::syntax(l.no, format!("{} is missing '{k}'", l.key)));
            }
        }
        Ok(Kv { line: l.no, map })
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T, ModelError> {
        let v = self.map[key];
        v.parse()
            .map_err(|_| ModelError::syntax(self.line, format!("bad value '{v}' for '{key}'")))
    }

    fn str(&self, key: &str) -> &'a str {
        self.map[key]
    }
}

fn parse_qp(l: &Line<'_>, key: &str) -> Result<QuantParams, ModelError> {
    if l.key != key {
        return Err(ModelError::syntax(l.no, format!("expected '{key}', got '{}'", l.key)));
    }
    let kv = Kv::new(l, &["scale", "zero_point"])?;
    Ok(QuantParams::new(kv.get("scale")?, kv.get("zero_point")?))
}

fn parse_requant(l: &Line<'_>) -> Result<Requant, ModelError> {
    if l.key != "requant" {
        return Err(ModelError::syntax(l.no, format!("expected 'requant', got '{}'", l.key)));
    }
    let kv = Kv::new(l, &["m0", "n"])?;
    Ok(Requant {
        m0: kv.get("m0")?,
        n: kv.get("n")?,
    })
}

/// `key DIMS v v v ...` where DIMS is `a`, `axb` or `axbxc`.
fn parse_tensor(l: &Line<'_>, key: &str, dims: &[usize]) -> Result<Vec<i64>, ModelError> {
    if l.key != key {
        return Err(ModelError::syntax(l.no, format!("expected '{key}', got '{}'", l.key)));
    }
    let Some((d, vals)) = l.rest.split_first() else {
        return Err(ModelError::syntax(l.no, format!("{key} needs dimensions")));
    };
    let got: Result<Vec<usize>, _> = d.split('x').map(str::parse).collect();
    let got = got.map_err(|_| ModelError::syntax(l.no, format!("bad dimensions '{d}'")))?;
    if got != dims {
        let want = dims.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("x");
        return Err(ModelError::syntax(l.no, format!("{key} has dimensions {d}, expected {want}")));
    }
    let n = dims.iter().try_fold(1usize, |a, &b| a.checked_mul(b));
    if n != Some(vals.len()) {
        return Err(ModelError::syntax(
            l.no,
            format!("{key} has {} values, dimensions {d} need {}", vals.len(), n.unwrap_or(0)),
        ));
    }
    vals.iter()
        .map(|v| {
            v.parse::<i64>()
                .map_err(|_| ModelError::syntax(l.no, format!("bad integer '{v}' in {key}")))
        })
        .collect()
}

struct Cursor<'a> {
    lines: Vec<Line<'a>>,
    at: usize,
    last: usize,
}

impl<'a> Cursor<'a> {
    fn next(&mut self, what: &str) -> Result<Line<'a>, ModelError> {
        let l = self
            .lines
            .get(self.at)
            .ok_or_else(|| ModelError::syntax(self.last + 1, format!("unexpected end of file, expected {what}")))?;
        self.at += 1;
        Ok(l.clone())
    }

    fn peek(&self) -> Option<&Line<'a>> {
        self.lines.get(self.at)
    }
}

fn parse_body(text: &str) -> Result<(Model, Option<(usize, String)>), ModelError> {
    let ls = lines(text);
    let last = text.lines().count();
    let mut c = Cursor {
        lines: ls,
        at: 0,
        last,
    };
    let head = c.next("header")?;
    if head.key != MODEL_MAGIC {
        return Err(ModelError::syntax(head.no, format!("not a model file (expected '{MODEL_MAGIC}')")));
    }
    match head.rest.as_slice() {
        [v] if *v == FORMAT_VERSION.to_string() => {}
        [v] => return Err(ModelError::Version(v.to_string())),
        _ => return Err(ModelError::syntax(head.no, "header needs one version number")),
    }
    let l = c.next("model line")?;
    if l.key != "model" {
        return Err(ModelError::syntax(l.no, "expected 'model'"));
    }
    let kv = Kv::new(&l, &["name", "version"])?;
    let name = kv.str("name").to_string();
    let version = kv.get("version")?;
    let l = c.next("labels line")?;
    if l.key != "labels" {
        return Err(ModelError::syntax(l.no, "expected 'labels'"));
    }
    let labels: Vec<String> = l.rest.iter().map(|s| s.to_string()).collect();
    let l = c.next("input line")?;
    if l.key != "input" {
        return Err(ModelError::syntax(l.no, "expected 'input'"));
    }
    let kv = Kv::new(&l, &["length", "scale", "zero_point"])?;
    let input_len = kv.get("length")?;
    let input_qp = QuantParams::new(kv.get("scale")?, kv.get("zero_point")?);
    let mut layers = Vec::new();
    let mut checksum = None;
    while let Some(l) = c.peek() {
        let no = l.no;
        match l.key {
            "checksum" => {
                let sum = match l.rest.as_slice() {
                    [s] => s.to_string(),
                    _ => return Err(ModelError::syntax(no, "checksum needs one hex digest")),
                };
                checksum = Some((no, sum));
                c.at += 1;
                if let Some(extra) = c.peek() {
                    return Err(ModelError::syntax(extra.no, "content after checksum"));
                }
                break;
            }
            "layer" => {}
            k => return Err(ModelError::syntax(no, format!("expected 'layer' or 'checksum', got '{k}'"))),
        }
        let l = c.next("layer")?;
        let Some((kind, rest)) = l.rest.split_first() else {
            return Err(ModelError::syntax(l.no, "layer needs a kind"));
        };
        let hdr = Line {
            no: l.no,
            key: *kind,
            rest: rest.to_vec(),
        };
        let layer = match *kind {
            "conv" => {
                let kv = Kv::new(&hdr, &["filters", "width", "depth", "padding", "relu"])?;
                let filters: usize = kv.get("filters")?;
                let width: usize = kv.get("width")?;
                let depth: usize = kv.get("depth")?;
                let padding: Padding = kv.get("padding")?;
                let relu: bool = kv.get("relu")?;
                let weight_qp = parse_qp(&c.next("weight_qp")?, "weight_qp")?;
                let out_qp = parse_qp(&c.next("out_qp")?, "out_qp")?;
                let requant = parse_requant(&c.next("requant")?)?;
                let weights = parse_tensor(&c.next("weights")?, "weights", &[filters, depth, width])?;
                let bias = parse_tensor(&c.next("bias")?, "bias", &[filters])?;
                Layer::Conv(Conv {
                    filters,
                    width,
                    depth,
                    padding,
                    relu,
                    weights,
                    bias,
                    weight_qp,
                    out_qp,
                    requant,
                })
            }
            "pool" => {
                let kv = Kv::new(&hdr, &["window", "divisor"])?;
                let divisor: Divisor = kv.get("divisor")?;
                Layer::Pool(Pool {
                    window: kv.get("window")?,
                    divisor,
                })
            }
            "flatten" => {
                Kv::new(&hdr, &[])?;
                Layer::Flatten
            }
            "dense" => {
                let kv = Kv::new(&hdr, &["inputs", "outputs", "relu"])?;
                let inputs: usize = kv.get("inputs")?;
                let outputs: usize = kv.get("outputs")?;
                let relu: bool = kv.get("relu")?;
                let weight_qp = parse_qp(&c.next("weight_qp")?, "weight_qp")?;
                let out_qp = parse_qp(&c.next("out_qp")?, "out_qp")?;
                let requant = parse_requant(&c.next("requant")?)?;
                let weights = parse_tensor(&c.next("weights")?, "weights", &[inputs, outputs])?;
                let bias = parse_tensor(&c.next("bias")?, "bias", &[outputs])?;
                Layer::Dense(Dense {
                    inputs,
                    outputs,
                    relu,
                    weights,
                    bias,
                    weight_qp,
                    out_qp,
                    requant,
                })
            }
            "argmax" => {
                Kv::new(&hdr, &[])?;
                Layer::ArgMax
            }
            k => return Err(ModelError::syntax(l.no, format!("unknown layer kind '{k}'"))),
        };
        layers.push(layer);
    }
    let model = Model {
        name,
        version,
        labels,
        input_len,
        input_qp,
        layers,
    };
    Ok((model, checksum))
}

/// Parse and validate a model. The checksum line is mandatory.
pub fn parse_model(text: &str) -> Result<Model, ModelError> {
    let (model, sum) = parse_body(text)?;
    let Some((_, stored)) = sum else {
        return Err(ModelError::syntax(text.lines().count() + 1, "missing checksum line"));
    };
    validate(&model)?;
    let computed = checksum(&model);
    if stored != computed {
        return Err(ModelError::Checksum { stored, computed });
    }
    Ok(model)
}

// ---- validation ----

fn check_qp(qp: &QuantParams, err: impl Fn(&str, String) -> ModelError) -> Result<(), ModelError> {
    if !(qp.scale.is_finite() && qp.scale > 0.0) {
        return Err(err("scale", format!("{} must be positive and finite", qp.scale)));
    }
    if !(0..=255).contains(&qp.zero_point) {
        return Err(err("zero_point", format!("{} is outside 0..=255", qp.zero_point)));
    }
    Ok(())
}

fn is_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || c == '=' || c == '#')
}

struct Params<'a> {
    weights: &'a [i64],
    bias: &'a [i64],
    weight_qp: &'a QuantParams,
    out_qp: &'a QuantParams,
    requant: &'a Requant,
    /// Accumulator terms per output.
    fan_in: usize,
    outputs: usize,
}

fn check_params(
    p: Params<'_>,
    in_scale: f64,
    err: &dyn Fn(&str, String) -> ModelError,
) -> Result<(), ModelError> {
    check_qp(p.weight_qp, |f, m| err(&format!("weight_qp.{f}"), m))?;
    check_qp(p.out_qp, |f, m| err(&format!("out_qp.{f}"), m))?;
    if p.weight_qp.zero_point != 0 {
        return Err(err(
            "weight_qp.zero_point",
            format!("is {}; weights must be symmetric (zero-point 0)", p.weight_qp.zero_point),
        ));
    }
    if let Some((i, w)) = p.weights.iter().enumerate().find(|(_, w)| !(-128..=127).contains(*w)) {
        return Err(err("weights", format!("value {w} at index {i} is outside int8")));
    }
    let (lo, hi) = (i32::MIN as i64, i32::MAX as i64);
    if let Some((i, b)) = p.bias.iter().enumerate().find(|(_, b)| !(lo..=hi).contains(*b)) {
        return Err(err("bias", format!("value {b} at index {i} is outside int32")));
    }
    if p.weights.len() != p.outputs * p.fan_in || p.bias.len() != p.outputs {
        return Err(err(
            "weights",
            format!(
                "hold {} values and bias {}, expected {} and {}",
                p.weights.len(),
                p.bias.len(),
                p.outputs * p.fan_in,
                p.outputs
            ),
        ));
    }
    let rq = p.requant;
    if !(1u32 << 30..1u32 << 31).contains(&rq.m0) {
        return Err(err("requant.m0", format!("{} is outside [2^30, 2^31)", rq.m0)));
    }
    if rq.n > MAX_SHIFT {
        return Err(err("requant.n", format!("{} exceeds {MAX_SHIFT}", rq.n)));
    }
    let want = in_scale * p.weight_qp.scale / p.out_qp.scale;
    let rel = ((rq.real() - want) / want).abs();
    if !(rel <= REQUANT_TOLERANCE) {
        return Err(err(
            "requant",
            format!("encodes {:e} but the scales imply {want:e}", rq.real()),
        ));
    }
    // Inputs minus their zero-point lie in [-255, 255].
    for o in 0..p.outputs {
        let mut bound = p.bias[o].unsigned_abs();
        for k in 0..p.fan_in {
            bound += p.weights[o * p.fan_in + k].unsigned_abs() * 255;
        }
        if bound >= ACC_BOUND as u64 {
            return Err(err(
                "weights",
                format!("output {o} can reach {bound}, beyond the accumulator bound 2^26"),
            ));
        }
    }
    Ok(())
}

/// Check shapes, ranges and the accumulator bound.
pub fn validate(model: &Model) -> Result<(), ModelError> {
    if !is_token(&model.name) {
        return Err(ModelError::field("name", "must be one non-empty token"));
    }
    if let Some(l) = model.labels.iter().find(|l| !is_token(l)) {
        return Err(ModelError::field("labels", format!("'{l}' is not a single token")));
    }
    if model.input_len == 0 {
        return Err(ModelError::field("input.length", "must be positive"));
    }
    check_qp(&model.input_qp, |f, m| ModelError::field(&format!("input.{f}"), m))?;
    let shapes = model.shapes()?;
    let scales = model.input_scales();
    let n = model.layers.len();
    for (i, l) in model.layers.iter().enumerate() {
        let kind = l.kind();
        let err = |f: &str, m: String| ModelError::layer(i, kind, f, m);
        let in_shape = if i == 0 { (1, model.input_len) } else { shapes[i - 1] };
        match l {
            Layer::Conv(c) => {
                if c.filters == 0 || c.width == 0 {
                    return Err(err("filters", "and width must be positive".into()));
                }
                check_params(
                    Params {
                        weights: &c.weights,
                        bias: &c.bias,
                        weight_qp: &c.weight_qp,
                        out_qp: &c.out_qp,
                        requant: &c.requant,
                        fan_in: c.depth * c.width,
                        outputs: c.filters,
                    },
                    scales[i],
                    &err,
                )?;
            }
            Layer::Pool(p) => {
                if p.window > MAX_WINDOW {
                    return Err(err("window", format!("{} exceeds {MAX_WINDOW}", p.window)));
                }
            }
            Layer::Dense(d) => {
                if d.outputs == 0 {
                    return Err(err("outputs", "must be positive".into()));
                }
                if d.weights.len() != d.inputs * d.outputs {
                    return Err(err("weights", format!("hold {} values", d.weights.len())));
                }
                // Weights are stored inputs x outputs; regroup per output.
                let per_out: Vec<i64> = (0..d.outputs)
                    .flat_map(|o| (0..d.inputs).map(move |k| (o, k)))
                    .map(|(o, k)| d.weights[k * d.outputs + o])
                    .collect();
                check_params(
                    Params {
                        weights: &per_out,
                        bias: &d.bias,
                        weight_qp: &d.weight_qp,
                        out_qp: &d.out_qp,
                        requant: &d.requant,
                        fan_in: d.inputs,
                        outputs: d.outputs,
                    },
                    scales[i],
                    &err,
                )?;
            }
            Layer::ArgMax => {
                if i + 1 != n {
                    return Err(err("position", "argmax must be the last layer".into()));
                }
                if in_shape.1 != 1 && in_shape.0 != 1 {
                    return Err(err(
                        "input",
                        format!("is {}x{}; flatten or dense first", in_shape.0, in_shape.1),
                    ));
                }
            }
            Layer::Flatten => {}
        }
    }
    if !matches!(model.layers.last(), Some(Layer::ArgMax)) {
        return Err(ModelError::field("layers", "the last layer must be argmax"));
    }
    let classes = model.classes();
    if !model.labels.is_empty() && model.labels.len() != classes {
        return Err(ModelError::field(
            "labels",
            format!("{} names for {classes} classes", model.labels.len()),
        ));
    }
    Ok(())
}
