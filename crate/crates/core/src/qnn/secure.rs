//! Secure evaluation of a quantized model.
//!
//! The model owner sends the public [`Arch`] and input-shares every parameter
//! once; the resulting [`SecretModel`] is reused across inferences. Each
//! inference input-shares the data owner's vector, runs the layers on the
//! computing parties and releases only the class index to one recipient.

use super::{flatten, Arch, ArchLayer, Divisor, Layer, Model, Padding, Shape, MAX_SHIFT, MULT_BITS};
use crate::error::{Error, Result};
use crate::protocols::Party;
use crate::sharing::Share;
use crate::scheme::SchemeId;
use crate::sim::{self, SimOptions, SimRun};
use crate::transport::{MsgType, Role, Topology};

/// Dividends in pooling stay below `2^POOL_BITS` (64 bytes of 255).
const POOL_BITS: u32 = 15;
/// Requantized values before clamping stay below `2^CLAMP_BITS` in
/// magnitude.
const CLAMP_BITS: u32 = 28;
/// Differences of two bytes.
const BYTE_DIFF_BITS: u32 = 9;

#[derive(Clone, Debug)]
struct RequantShares {
    mult: Share,
    half: Share,
    z_out: Share,
    /// `2^(MAX_SHIFT - n)` when the shift is secret.
    pow: Option<Share>,
}

#[derive(Clone, Debug)]
enum LayerShares {
    Conv {
        w: Vec<Share>,
        bias: Vec<Share>,
        rq: RequantShares,
    },
    Pool {
        /// Divisor, `floor(P/2)` and reciprocal of `P`, when secret.
        secret: Option<(Share, Share, Share)>,
    },
    Flatten,
    Dense {
        w: Vec<Share>,
        bias: Vec<Share>,
        rq: RequantShares,
    },
    ArgMax,
}

/// A computing party's shares of a model.
#[derive(Clone, Debug)]
pub struct SecretModel {
    pub arch: Arch,
    layers: Vec<LayerShares>,
    /// Zero-point of each layer's input.
    z_in: Vec<Share>,
}

#[derive(Clone, Debug, Default)]
pub struct InferOutcome {
    /// The class index, at the recipient only.
    pub class: Option<usize>,
    /// Opened per-layer outputs (computing parties, trace mode only).
    pub trace: Vec<Vec<i64>>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct InferOptions {
    /// Open every layer's output to the computing parties. Leaks
    /// intermediates; for testing only.
    pub trace: bool,
}

/// Values the owner contributes for one layer, in sharing order.
fn layer_values(l: &Layer, public_shift: bool) -> Vec<i64> {
    let rq = |v: &mut Vec<i64>, r: &super::Requant, z: i64| {
        v.push(r.reduced());
        if !public_shift {
            v.push(r.n as i64);
        }
        v.push(1i64 << (r.shift() - 1));
        v.push(z);
    };
    match l {
        Layer::Conv(c) => {
            let mut v = c.weights.clone();
            v.extend(&c.bias);
            rq(&mut v, &c.requant, c.out_qp.zero_point);
            v
        }
        Layer::Dense(d) => {
            let mut v = d.weights.clone();
            v.extend(&d.bias);
            rq(&mut v, &d.requant, d.out_qp.zero_point);
            v
        }
        Layer::Pool(p) if p.divisor == Divisor::Secret => {
            vec![p.window as i64, (p.window / 2) as i64]
        }
        _ => Vec::new(),
    }
}

fn layer_count(l: &ArchLayer) -> usize {
    let rq = |shift: &Option<u32>| if shift.is_some() { 3 } else { 4 };
    match l {
        ArchLayer::Conv {
            filters,
            width,
            depth,
            shift,
            ..
        } => filters * width * depth + filters + rq(shift),
        ArchLayer::Dense {
            inputs,
            outputs,
            shift,
            ..
        } => inputs * outputs + outputs + rq(shift),
        ArchLayer::Pool {
            divisor: Divisor::Secret,
            ..
        } => 2,
        _ => 0,
    }
}

/// Distribute the owner's model. The owner passes the model; other parties
/// pass `None`. Computing parties get `Some`, clients `None`.
pub fn share_model(
    p: &mut Party,
    owner: usize,
    model: Option<&Model>,
    public_shift: bool,
) -> Result<Option<SecretModel>> {
    let computing = p.computing();
    let arch = if let Some(m) = model {
        if p.me != owner {
            return Err(Error::Invalid("only the model owner holds the model".into()));
        }
        let arch = m.arch(public_shift);
        let bytes = serde_json::to_vec(&arch).map_err(|e| Error::Invalid(e.to_string()))?;
        let sends = computing
            .iter()
            .filter(|&&c| c != p.me)
            .map(|&c| (c, bytes.clone()))
            .collect();
        p.net.exchange(MsgType::Arch, sends, &[])?;
        Some(arch)
    } else if p.is_computing() {
        let bytes = p.net.exchange(MsgType::Arch, vec![], &[owner])?.pop().expect("one peer");
        let arch: Arch = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Protocol(format!("bad architecture from party {owner}: {e}")))?;
        Some(arch)
    } else {
        None
    };
    let Some(arch) = arch else {
        return Ok(None);
    };
    check_arch(&arch)?;
    let counts: Vec<usize> = arch.layers.iter().map(layer_count).collect();
    let total: usize = counts.iter().sum();
    let ring = p.ring;
    let values: Option<Vec<u128>> = model.map(|m| {
        m.layers
            .iter()
            .flat_map(|l| layer_values(l, public_shift))
            .map(|v| ring.from_i64(v))
            .collect()
    });
    if let Some(v) = &values {
        if v.len() != total {
            return Err(Error::Invalid("model does not match its architecture".into()));
        }
    }
    let shares = p.input(owner, values.as_deref(), total)?;
    if !p.is_computing() {
        return Ok(None);
    }
    let mut layers = Vec::with_capacity(arch.layers.len());
    let mut ns = Vec::new();
    let mut dens = Vec::new();
    let mut at = 0;
    for (l, &c) in arch.layers.iter().zip(&counts) {
        let s = &shares[at..at + c];
        at += c;
        let rq = |s: &[Share], shift: &Option<u32>, ns: &mut Vec<Share>| {
            let k = s.len();
            if shift.is_some() {
                RequantShares {
                    mult: s[k - 3],
                    half: s[k - 2],
                    z_out: s[k - 1],
                    pow: None,
                }
            } else {
                ns.push(s[k - 3]);
                RequantShares {
                    mult: s[k - 4],
                    half: s[k - 2],
                    z_out: s[k - 1],
                    pow: None,
                }
            }
        };
        layers.push(match l {
            ArchLayer::Conv {
                filters,
                width,
                depth,
                shift,
                ..
            } => {
                let nw = filters * width * depth;
                LayerShares::Conv {
                    w: s[..nw].to_vec(),
                    bias: s[nw..nw + filters].to_vec(),
                    rq: rq(s, shift, &mut ns),
                }
            }
            ArchLayer::Dense {
                inputs,
                outputs,
                shift,
                ..
            } => {
                let nw = inputs * outputs;
                LayerShares::Dense {
                    w: s[..nw].to_vec(),
                    bias: s[nw..nw + outputs].to_vec(),
                    rq: rq(s, shift, &mut ns),
                }
            }
            ArchLayer::Pool { divisor, .. } => {
                if *divisor == Divisor::Secret {
                    dens.push(s[0]);
                    LayerShares::Pool {
                        secret: Some((s[0], s[1], Share::default())),
                    }
                } else {
                    LayerShares::Pool { secret: None }
                }
            }
            ArchLayer::Flatten => LayerShares::Flatten,
            ArchLayer::ArgMax => LayerShares::ArgMax,
        });
    }
    // Per-model precomputation, cached for every later inference.
    let pows = p.secret_pow2_many(&ns, MAX_SHIFT)?;
    let f = ring.frac_bits();
    let recips = p.reciprocal(&dens, f)?;
    let (mut pi, mut ri) = (pows.into_iter(), recips.into_iter());
    for (l, al) in layers.iter_mut().zip(&arch.layers) {
        let secret_shift = matches!(
            al,
            ArchLayer::Conv { shift: None, .. } | ArchLayer::Dense { shift: None, .. }
        );
        match l {
            LayerShares::Conv { rq, .. } | LayerShares::Dense { rq, .. } if secret_shift => {
                rq.pow = pi.next();
            }
            LayerShares::Pool {
                secret: Some((_, _, r)),
            } => *r = ri.next().expect("one reciprocal per secret pool"),
            _ => {}
        }
    }
    let mut z_in = Vec::with_capacity(layers.len());
    let mut z = p.constant_i(arch.input_zero_point as i128);
    for l in &layers {
        z_in.push(z);
        match l {
            LayerShares::Conv { rq, .. } | LayerShares::Dense { rq, .. } => z = rq.z_out,
            _ => {}
        }
    }
    Ok(Some(SecretModel { arch, layers, z_in }))
}

fn check_arch(arch: &Arch) -> Result<()> {
    let bad = |m: String| Err(Error::Protocol(format!("architecture rejected: {m}")));
    if arch.layers.last() != Some(&ArchLayer::ArgMax) {
        return bad("last layer is not argmax".into());
    }
    let mut cur: Shape = (1, arch.input_len);
    for l in &arch.layers {
        match *l {
            ArchLayer::Conv { depth, width, shift, .. } => {
                if depth != cur.0 || width == 0 {
                    return bad(format!("conv depth {depth} on {} channels", cur.0));
                }
                if shift.is_some_and(|s| s > MAX_SHIFT) {
                    return bad("shift out of range".into());
                }
            }
            ArchLayer::Pool { window, .. } => {
                if window == 0 || window > cur.1 || window > super::MAX_WINDOW {
                    return bad(format!("pool window {window} on width {}", cur.1));
                }
            }
            ArchLayer::Dense { inputs, shift, .. } => {
                if inputs != cur.0 * cur.1 {
                    return bad(format!("dense of {inputs} inputs on {} values", cur.0 * cur.1));
                }
                if shift.is_some_and(|s| s > MAX_SHIFT) {
                    return bad("shift out of range".into());
                }
            }
            _ => {}
        }
        cur = match *l {
            ArchLayer::Conv { filters, .. } => (filters, cur.1),
            ArchLayer::Pool { window, .. } => (cur.0, cur.1 / window),
            ArchLayer::Flatten => (cur.0 * cur.1, 1),
            ArchLayer::Dense { outputs, .. } => (outputs, 1),
            ArchLayer::ArgMax => (1, 1),
        };
    }
    Ok(())
}

/// Shared accumulators of a convolution: `x` is the (already offset) input,
/// zero outside its width.
#[allow(clippy::too_many_arguments)]
pub fn conv_acc(
    p: &mut Party,
    x: &[Share],
    (d, m): Shape,
    w: &[Share],
    filters: usize,
    width: usize,
    bias: &[Share],
    padding: Padding,
) -> Result<Vec<Share>> {
    let left = padding.left(width) as isize;
    let k = d * width;
    let mut cols = vec![Share::default(); k * m];
    for c in 0..d {
        for l in 0..width {
            for j in 0..m {
                let pos = j as isize + l as isize - left;
                if pos >= 0 && (pos as usize) < m {
                    cols[(c * width + l) * m + j] = x[c * m + pos as usize];
                }
            }
        }
    }
    let z = p.matmul(w, &cols, filters, k, m)?;
    Ok(z.iter()
        .enumerate()
        .map(|(i, &s)| p.loc.add(s, bias[i / m]))
        .collect())
}

/// Window sums over non-overlapping blocks of `window`, dropping the tail.
pub fn pool_sums(p: &Party, x: &[Share], (d, m): Shape, window: usize) -> Vec<Share> {
    let mo = m / window;
    let mut out = Vec::with_capacity(d * mo);
    for c in 0..d {
        for j in 0..mo {
            let mut s = Share::default();
            for t in 0..window {
                s = p.loc.add(s, x[c * m + j * window + t]);
            }
            out.push(s);
        }
    }
    out
}

fn requantize(
    p: &mut Party,
    acc: &[Share],
    rq: &RequantShares,
    relu: bool,
    shift: Option<u32>,
) -> Result<Vec<Share>> {
    let n = acc.len();
    let y = p.mul(acc, &vec![rq.mult; n])?;
    let y: Vec<Share> = y.iter().map(|&s| p.loc.add(s, rq.half)).collect();
    let w = match (shift, rq.pow) {
        (Some(sh), _) => p.trunc_session(&y, MULT_BITS + sh)?,
        (None, Some(pow)) => {
            // floor(floor(y / 2^12) * 2^(12-n) / 2^12) = floor(y / 2^(12+n)).
            let t = p.trunc_det(&y, MULT_BITS)?;
            let u = p.mul(&t, &vec![pow; n])?;
            p.trunc_session(&u, MAX_SHIFT)?
        }
        (None, None) => return Err(Error::Protocol("requantization shift missing".into())),
    };
    let v: Vec<Share> = w.iter().map(|&s| p.loc.add(s, rq.z_out)).collect();
    let lo = if relu { rq.z_out } else { Share::default() };
    clamp(p, &v, lo)
}

/// `clamp(v, lo, 255)` for shared `lo` in `[0, 255]`.
fn clamp(p: &mut Party, v: &[Share], lo: Share) -> Result<Vec<Share>> {
    let ring = p.ring;
    let n = v.len();
    let top = ring.from_i64(255);
    let mut probes: Vec<Share> = v.iter().map(|&s| p.loc.sub(s, lo)).collect();
    probes.extend(v.iter().map(|&s| p.loc.add_const(s, ring.neg(top))));
    let b = p.ltz_bounded(&probes, CLAMP_BITS)?;
    let mut d: Vec<Share> = v.iter().map(|&s| p.loc.sub(lo, s)).collect();
    d.extend(v.iter().map(|&s| p.loc.add_const(s, ring.neg(top))));
    let prod = p.mul(&b, &d)?;
    Ok((0..n)
        .map(|i| {
            let s = p.loc.add(prod[i], prod[n + i]);
            p.loc.add_const(s, top)
        })
        .collect())
}

fn avg_pool(
    p: &mut Party,
    x: &[Share],
    shape: Shape,
    window: usize,
    secret: &Option<(Share, Share, Share)>,
) -> Result<Vec<Share>> {
    let sums = pool_sums(p, x, shape, window);
    match secret {
        None => {
            let a = p.add_const(&sums, (window / 2) as u128);
            p.div_public_floor(&a, window as u64, POOL_BITS)
        }
        Some((den, half, recip)) => {
            let n = sums.len();
            let a: Vec<Share> = sums.iter().map(|&s| p.loc.add(s, *half)).collect();
            let f = p.ring.frac_bits();
            p.div_floor(&a, &vec![*den; n], &vec![*recip; n], f, POOL_BITS)
        }
    }
}

fn open_signed(p: &mut Party, xs: &[Share]) -> Result<Vec<i64>> {
    let v = p.reveal_all(xs)?;
    Ok(v.into_iter().map(|x| p.ring.lift(x) as i64).collect())
}

/// Run the layers on a computing party. Returns the shared class index.
pub fn evaluate(
    p: &mut Party,
    sm: &SecretModel,
    input: Vec<Share>,
    opts: InferOptions,
    trace: &mut Vec<Vec<i64>>,
) -> Result<Share> {
    let mut x = input;
    let mut shape: Shape = (1, sm.arch.input_len);
    let shapes = sm.arch.shapes();
    let mut class = None;
    for (i, (al, ls)) in sm.arch.layers.iter().zip(&sm.layers).enumerate() {
        let z_in = sm.z_in[i];
        x = match (al, ls) {
            (
                ArchLayer::Conv {
                    filters,
                    width,
                    padding,
                    relu,
                    shift,
                    ..
                },
                LayerShares::Conv { w, bias, rq },
            ) => {
                let xs: Vec<Share> = x.iter().map(|&s| p.loc.sub(s, z_in)).collect();
                let acc = conv_acc(p, &xs, shape, w, *filters, *width, bias, *padding)?;
                requantize(p, &acc, rq, *relu, *shift)?
            }
            (ArchLayer::Pool { window, .. }, LayerShares::Pool { secret }) => {
                avg_pool(p, &x, shape, *window, secret)?
            }
            (ArchLayer::Flatten, LayerShares::Flatten) => flatten(&x, shape),
            (
                ArchLayer::Dense {
                    inputs,
                    outputs,
                    relu,
                    shift,
                },
                LayerShares::Dense { w, bias, rq },
            ) => {
                let xs: Vec<Share> = flatten(&x, shape)
                    .iter()
                    .map(|&s| p.loc.sub(s, z_in))
                    .collect();
                let acc = p.matmul(&xs, w, 1, *inputs, *outputs)?;
                let acc = p.add(&acc, bias);
                requantize(p, &acc, rq, *relu, *shift)?
            }
            (ArchLayer::ArgMax, LayerShares::ArgMax) => {
                let (idx, _) = p.argmax_bounded(&x, BYTE_DIFF_BITS)?;
                class = Some(idx);
                vec![idx]
            }
            _ => return Err(Error::Protocol("model shares do not match the architecture".into())),
        };
        shape = shapes[i];
        if opts.trace {
            trace.push(open_signed(p, &x)?);
        }
    }
    class.ok_or_else(|| Error::Protocol("model has no argmax layer".into()))
}

/// One private inference. The data owner passes its quantized input;
/// computing parties pass the shared model. The class goes to `recipient`.
pub fn infer(
    p: &mut Party,
    sm: Option<&SecretModel>,
    data_owner: usize,
    input: Option<&[u8]>,
    recipient: usize,
    opts: InferOptions,
) -> Result<InferOutcome> {
    let ring = p.ring;
    let n = match (sm, input) {
        (Some(sm), _) => sm.arch.input_len,
        (None, Some(x)) => x.len(),
        (None, None) => 0,
    };
    if let (Some(sm), Some(x)) = (sm, input) {
        if x.len() != sm.arch.input_len {
            return Err(Error::Invalid(format!(
                "input has {} values, model expects {}",
                x.len(),
                sm.arch.input_len
            )));
        }
    }
    let vals: Option<Vec<u128>> = input.map(|x| x.iter().map(|&v| v as u128).collect());
    let xs = p.input(data_owner, vals.as_deref(), n)?;
    let mut out = InferOutcome::default();
    let shared = if p.is_computing() {
        let sm = sm.ok_or_else(|| Error::Invalid("computing party without model shares".into()))?;
        vec![evaluate(p, sm, xs, opts, &mut out.trace)?]
    } else {
        Vec::new()
    };
    if let Some(v) = p.output(recipient, &shared, 1)? {
        let c = ring.lift(v[0]);
        if c < 0 {
            return Err(Error::Protocol(format!("class index {c} out of range")));
        }
        out.class = Some(c as usize);
    }
    Ok(out)
}

/// How [`simulate`] runs a session.
#[derive(Clone, Copy, Debug)]
pub struct LocalConfig {
    pub public_shift: bool,
    pub trace: bool,
    pub reveal_to: Role,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig {
            public_shift: false,
            trace: false,
            reveal_to: Role::Alice,
        }
    }
}

pub struct LocalOutcome {
    /// Class per input, as received by the recipient.
    pub classes: Vec<usize>,
    /// Per input, every layer's opened output (trace mode only).
    pub traces: Vec<Vec<Vec<i64>>>,
    pub run: SimRun<Vec<InferOutcome>>,
}

/// Run a whole deployment in-process: Bob shares `model` once, then Alice
/// submits each input in turn.
pub fn simulate(
    sid: SchemeId,
    opts: SimOptions,
    model: &Model,
    inputs: &[Vec<u8>],
    cfg: LocalConfig,
) -> Result<LocalOutcome> {
    let topo = Topology::for_scheme(sid.scheme);
    let alice = topo.id(Role::Alice)?.index;
    let bob = topo.id(Role::Bob)?.index;
    let recipient = topo.id(cfg.reveal_to)?.index;
    let iopts = InferOptions { trace: cfg.trace };
    let run: SimRun<Vec<InferOutcome>> = sim::run(sid, opts, |p| {
        let sm = share_model(p, bob, (p.me == bob).then_some(model), cfg.public_shift)?;
        inputs
            .iter()
            .map(|x| infer(p, sm.as_ref(), alice, (p.me == alice).then_some(x), recipient, iopts))
            .collect()
    });
    // An abort anywhere outranks the knock-on transport errors it causes.
    let errs: Vec<&Error> = run.parties.iter().filter_map(|p| p.result.as_ref().err()).collect();
    if let Some(e) = errs.iter().find(|e| e.is_abort()).or(errs.first()) {
        return Err(match e {
            Error::Abort(m) => Error::Abort(m.clone()),
            e => Error::Protocol(e.to_string()),
        });
    }
    let outs = run.get(recipient).result.as_ref().expect("checked above");
    let classes = outs
        .iter()
        .map(|o| o.class.ok_or_else(|| Error::Protocol("recipient got no class".into())))
        .collect::<Result<Vec<_>>>()?;
    let traces = run.get(0).result.as_ref().expect("checked above").iter().map(|o| o.trace.clone()).collect();
    Ok(LocalOutcome {
        classes,
        traces,
        run,
    })
}

/// A model with `arch`'s shape and placeholder parameters. The protocols
/// are data-oblivious, so running it consumes exactly what the real model
/// would.
pub fn placeholder_model(arch: &Arch) -> Model {
    use super::{Conv, Dense, Pool, QuantParams, Requant};
    let qp = QuantParams::new(1.0, 0);
    let rq = |shift: &Option<u32>| Requant {
        m0: 1 << 30,
        n: shift.unwrap_or(0),
    };
    let layers = arch
        .layers
        .iter()
        .map(|l| match *l {
            ArchLayer::Conv {
                filters,
                width,
                depth,
                padding,
                relu,
                shift,
            } => Layer::Conv(Conv {
                filters,
                width,
                depth,
                padding,
                relu,
                weights: vec![0; filters * width * depth],
                bias: vec![0; filters],
                weight_qp: qp,
                out_qp: qp,
                requant: rq(&shift),
            }),
            ArchLayer::Pool { window, divisor } => Layer::Pool(Pool { window, divisor }),
            ArchLayer::Flatten => Layer::Flatten,
            ArchLayer::Dense {
                inputs,
                outputs,
                relu,
                shift,
            } => Layer::Dense(Dense {
                inputs,
                outputs,
                relu,
                weights: vec![0; inputs * outputs],
                bias: vec![0; outputs],
                weight_qp: qp,
                out_qp: qp,
                requant: rq(&shift),
            }),
            ArchLayer::ArgMax => Layer::ArgMax,
        })
        .collect();
    Model {
        name: "placeholder".into(),
        version: 0,
        labels: Vec::new(),
        input_len: arch.input_len,
        input_qp: QuantParams::new(1.0, arch.input_zero_point),
        layers,
    }
}

/// Preprocessing each party draws for one model share plus `inferences`
/// inferences, indexed by party.
pub fn plan_for(
    sid: SchemeId,
    arch: &Arch,
    inferences: usize,
    reveal_to: Role,
) -> Result<Vec<crate::dealer::Plan>> {
    check_arch(arch)?;
    let model = placeholder_model(arch);
    let public_shift = arch.layers.iter().any(|l| {
        matches!(
            l,
            ArchLayer::Conv { shift: Some(_), .. } | ArchLayer::Dense { shift: Some(_), .. }
        )
    });
    let inputs = vec![vec![0u8; arch.input_len]; inferences];
    let cfg = LocalConfig {
        public_shift,
        trace: false,
        reveal_to,
    };
    let out = simulate(sid, SimOptions::seed(0), &model, &inputs, cfg)?;
    let n = Topology::for_scheme(sid.scheme).party_count();
    Ok((0..n).map(|i| out.run.get(i).consumed.clone()).collect())
}
