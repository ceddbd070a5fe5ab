use crate::Failure;
use clap::{Args, Subcommand};
use obliv1d::dealer::{produce, read_store, write_party_file, Generator, Plan};
use obliv1d::model_io::{
    self, checksum, gen_random_model, load_input, load_model, load_test_vectors, save_model,
    save_test_vectors,
    TestCase, TestVectors,
};
use obliv1d::protocols::Party;
use obliv1d::qnn::secure::{infer, plan_for, share_model, simulate, InferOptions, LocalConfig};
use obliv1d::qnn::{oracle, Arch, Model};
use obliv1d::scheme::{parse_ring, ring_name, Scheme, SchemeId, TruncMode};
use obliv1d::sim::SimOptions;
use obliv1d::transport::tcp::{TcpConfig, TcpLink};
use obliv1d::transport::{Hello, MsgType, Network, Role, Topology, PROTOCOL_VERSION};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::json;
use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

type Res<T = ()> = Result<T, Failure>;

fn usage(m: impl Into<String>) -> Failure {
    Failure::Usage(m.into())
}

fn op(m: impl Into<String>) -> Failure {
    Failure::Operational(m.into())
}

#[derive(Args, Clone, Debug)]
pub struct SchemeArgs {
    /// semi-2pc, active-2pc, semi-3pc or active-3pc.
    #[arg(long, default_value = "semi-2pc")]
    scheme: String,
    /// prime64 or mod2k.
    #[arg(long, default_value = "prime64")]
    ring: String,
    /// det or prob.
    #[arg(long, default_value = "det")]
    trunc: String,
}

impl SchemeArgs {
    fn sid(&self) -> Res<SchemeId> {
        let scheme: Scheme = self.scheme.parse().map_err(|e: obliv1d::Error| usage(e.to_string()))?;
        let ring = parse_ring(&self.ring).map_err(|e| usage(e.to_string()))?;
        let trunc: TruncMode = self.trunc.parse().map_err(|e: obliv1d::Error| usage(e.to_string()))?;
        SchemeId::new(scheme, ring, trunc).map_err(|e| usage(e.to_string()))
    }
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate preprocessing files for every party of a session.
    Dealer {
        #[command(flatten)]
        scheme: SchemeArgs,
        /// Public architecture (from `obliv1d arch`).
        #[arg(long)]
        arch: PathBuf,
        /// Inferences to provision for.
        #[arg(long, default_value_t = 1)]
        inferences: usize,
        #[arg(long, default_value = "alice")]
        reveal_to: String,
        /// Output directory; one `<role>.obpp` per party plus `plan.json`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one party of a networked session.
    Party {
        #[command(flatten)]
        scheme: SchemeArgs,
        /// alice, bob, s1, s2, s3 or third-party.
        #[arg(long)]
        role: String,
        /// Listen addresses of all participants: `alice=host:port,bob=...`.
        #[arg(long)]
        peers: String,
        /// This party's preprocessing file.
        #[arg(long)]
        preproc: PathBuf,
        /// Model file (Bob only).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Input vectors, one inference each (Alice only).
        #[arg(long)]
        input: Vec<PathBuf>,
        /// Number of inferences (parties other than Alice).
        #[arg(long)]
        count: Option<usize>,
        /// alice, bob or third-party[:host:port].
        #[arg(long, default_value = "alice")]
        reveal_to: String,
        /// Disclose requantization shifts (Bob only).
        #[arg(long)]
        public_shift: bool,
        #[arg(long, default_value_t = 1)]
        session: u64,
        #[arg(long, default_value_t = 30)]
        connect_timeout: u64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate every party in-process.
    LocalSim {
        #[command(flatten)]
        scheme: SchemeArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long, default_value = "alice")]
        reveal_to: String,
        #[arg(long)]
        public_shift: bool,
        /// Open and print every layer's output (leaks intermediates).
        #[arg(long)]
        trace: bool,
        /// Print a JSON cost summary.
        #[arg(long)]
        stats: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Test hook: party 1 corrupts its first message of this type
        /// (open, beaver, sacrifice, reshare, output).
        #[arg(long, hide = true)]
        cheat: Option<String>,
    },
    /// Plaintext integer reference.
    Oracle {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        trace: bool,
    },
    /// Check golden vectors against the plaintext reference.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vectors: PathBuf,
    },
    /// Repeat a simulated inference and report its costs.
    Bench {
        #[command(flatten)]
        scheme: SchemeArgs,
        #[arg(long, conflicts_with = "shape")]
        model: Option<PathBuf>,
        /// Random model shape, e.g. `in:40,conv:128x5,pool:4,conv:128x5,flatten,dense:8`.
        #[arg(long)]
        shape: Option<String>,
        #[arg(long, default_value_t = 3)]
        repeat: usize,
        #[arg(long, default_value_t = 1)]
        inferences: usize,
        #[arg(long)]
        public_shift: bool,
        #[arg(long, default_value = "alice")]
        reveal_to: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a seeded random model.
    GenModel {
        #[arg(long)]
        shape: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        name: Option<String>,
        /// Comma-separated class names.
        #[arg(long)]
        labels: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write golden test vectors for random inputs.
    GenVectors {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a model's public architecture as JSON.
    Arch {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        public_shift: bool,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Dealer { .. } => "dealer",
            Command::Party { .. } => "party",
            Command::LocalSim { .. } => "local-sim",
            Command::Oracle { .. } => "oracle",
            Command::Verify { .. } => "verify",
            Command::Bench { .. } => "bench",
            Command::GenModel { .. } => "gen-model",
            Command::GenVectors { .. } => "gen-vectors",
            Command::Arch { .. } => "arch",
        }
    }
}

/// `--seed`, else `OBLIV1D_SEED`, else `fallback`, else fresh entropy.
fn seed(flag: Option<u64>, fallback: Option<u64>) -> Res<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Ok(v) = std::env::var("OBLIV1D_SEED") {
        return v
            .parse()
            .map_err(|_| usage(format!("OBLIV1D_SEED must be an integer, got '{v}'")));
    }
    Ok(fallback.unwrap_or_else(|| rand::thread_rng().gen()))
}

/// `alice`, `bob`, `third-party` or `third-party:<addr>`.
fn reveal(s: &str) -> Res<(Role, Option<SocketAddr>)> {
    if let Some(addr) = s.strip_prefix("third-party:") {
        let a = addr
            .parse()
            .map_err(|_| usage(format!("bad third-party address '{addr}'")))?;
        return Ok((Role::ThirdParty, Some(a)));
    }
    match s {
        "alice" => Ok((Role::Alice, None)),
        "bob" => Ok((Role::Bob, None)),
        "third-party" => Ok((Role::ThirdParty, None)),
        _ => Err(usage(format!("--reveal-to must be alice, bob or third-party[:addr], got '{s}'"))),
    }
}

fn load_inputs(paths: &[PathBuf], model: Option<&Model>) -> Res<Vec<Vec<u8>>> {
    paths
        .iter()
        .map(|p| load_input(p, model).map_err(Failure::from))
        .collect()
}

fn write_json(value: &serde_json::Value) {
    println!("{value}");
}

pub fn run(cmd: Command) -> Res {
    match cmd {
        Command::Oracle {
            model,
            input,
            trace,
        } => {
            let m = load_model(&model)?;
            for x in load_inputs(&input, Some(&m))? {
                let t = oracle::run(&m, &x)?;
                if trace {
                    write_json(&json!({ "class": t.class, "layers": t.outputs }));
                } else {
                    println!("{}", t.class);
                }
            }
            Ok(())
        }
        Command::Verify { model, vectors } => {
            let m = load_model(&model)?;
            let tv = load_test_vectors(&vectors, &m)?;
            let (mut classes, mut layers, mut first_bad) = (0, 0, None);
            for (i, c) in tv.cases.iter().enumerate() {
                let t = oracle::run(&m, &c.input)?;
                classes += (t.class == c.class) as usize;
                if t.outputs == c.outputs {
                    layers += 1;
                } else if first_bad.is_none() {
                    first_bad = Some(i);
                }
            }
            let n = tv.cases.len();
            write_json(&json!({ "cases": n, "classes_match": classes, "layers_match": layers }));
            match first_bad {
                None if classes == n => Ok(()),
                Some(i) => Err(op(format!("case {i}: layer outputs differ from the reference"))),
                None => Err(op("classes differ from the reference")),
            }
        }
        Command::GenModel {
            shape,
            seed,
            name,
            labels,
            out,
        } => {
            let mut m = gen_random_model(&shape, seed).map_err(|e| usage(e.to_string()))?;
            if let Some(n) = name {
                m.name = n;
            }
            if let Some(l) = labels {
                m.labels = l.split(',').map(|s| s.trim().to_string()).collect();
            }
            save_model(&out, &m)?;
            log::info!(target: "obliv1d", "event=model_written path={:?} checksum={}", out, checksum(&m));
            Ok(())
        }
        Command::GenVectors {
            model,
            count,
            seed,
            out,
        } => {
            let m = load_model(&model)?;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let cases = (0..count)
                .map(|_| {
                    let input: Vec<u8> = (0..m.input_len).map(|_| rng.gen()).collect();
                    let t = oracle::run(&m, &input)?;
                    Ok(TestCase {
                        input,
                        class: t.class,
                        outputs: t.outputs,
                    })
                })
                .collect::<Result<Vec<_>, model_io::ModelError>>()?;
            save_test_vectors(
                &out,
                &TestVectors {
                    model: checksum(&m),
                    cases,
                },
            )?;
            Ok(())
        }
        Command::Arch {
            model,
            public_shift,
        } => {
            let m = load_model(&model)?;
            let arch = m.arch(public_shift);
            println!("{}", serde_json::to_string_pretty(&arch).map_err(|e| op(e.to_string()))?);
            Ok(())
        }
        Command::Dealer {
            scheme,
            arch,
            inferences,
            reveal_to,
            out,
            seed: s,
        } => dealer(scheme.sid()?, &arch, inferences, &reveal_to, &out, seed(s, None)?),
        Command::LocalSim {
            scheme,
            model,
            input,
            reveal_to,
            public_shift,
            trace,
            stats,
            seed: s,
            cheat,
        } => {
            let sid = scheme.sid()?;
            let (role, _) = reveal(&reveal_to)?;
            let m = load_model(&model)?;
            let xs = load_inputs(&input, Some(&m))?;
            let cfg = LocalConfig {
                public_shift,
                trace,
                reveal_to: role,
            };
            let mut opts = SimOptions::seed(seed(s, Some(1))?);
            if let Some(c) = cheat {
                let victim = match c.as_str() {
                    "open" => MsgType::Open,
                    "beaver" => MsgType::Beaver,
                    "sacrifice" => MsgType::Sacrifice,
                    "reshare" => MsgType::Reshare,
                    "output" => MsgType::Output,
                    _ => return Err(usage(format!("unknown message type '{c}'"))),
                };
                let mut armed = true;
                opts.tamper.insert(
                    1,
                    Box::new(move |ty, _to, payload: &mut Vec<u8>| {
                        if ty == victim && armed && !payload.is_empty() {
                            payload[0] ^= 1;
                            armed = false;
                        }
                    }),
                );
            }
            let t = Instant::now();
            let out = simulate(sid, opts, &m, &xs, cfg)?;
            for (i, c) in out.classes.iter().enumerate() {
                if trace {
                    write_json(&json!({ "class": c, "layers": out.traces[i] }));
                } else {
                    println!("{c}");
                }
            }
            if stats {
                write_json(&report(sid, &out.run, t.elapsed()));
            }
            Ok(())
        }
        Command::Bench {
            scheme,
            model,
            shape,
            repeat,
            inferences,
            public_shift,
            reveal_to,
            seed: s,
        } => {
            let sid = scheme.sid()?;
            let (role, _) = reveal(&reveal_to)?;
            let base = seed(s, Some(1))?;
            let m = match (model, shape) {
                (Some(p), None) => load_model(&p)?,
                (None, Some(sh)) => gen_random_model(&sh, base).map_err(|e| usage(e.to_string()))?,
                _ => return Err(usage("bench needs exactly one of --model or --shape")),
            };
            if repeat == 0 || inferences == 0 {
                return Err(usage("--repeat and --inferences must be positive"));
            }
            let mut rng = ChaCha20Rng::seed_from_u64(base);
            let xs: Vec<Vec<u8>> = (0..inferences)
                .map(|_| (0..m.input_len).map(|_| rng.gen()).collect())
                .collect();
            let cfg = LocalConfig {
                public_shift,
                trace: false,
                reveal_to: role,
            };
            let mut seen: Vec<(u64, u64)> = Vec::new();
            for r in 0..repeat {
                let t = Instant::now();
                let out = simulate(sid, SimOptions::seed(base + r as u64), &m, &xs, cfg)?;
                let mut rep = report(sid, &out.run, t.elapsed());
                rep["repeat"] = json!(r);
                seen.push((out.run.rounds_online(), total_bytes(&out.run)));
                write_json(&rep);
            }
            let stable = seen.windows(2).all(|w| w[0] == w[1]);
            write_json(&json!({
                "summary": true,
                "scheme": sid.to_string(),
                "repeats": repeat,
                "rounds_and_bytes_identical": stable,
            }));
            Ok(())
        }
        Command::Party {
            scheme,
            role,
            peers,
            preproc,
            model,
            input,
            count,
            reveal_to,
            public_shift,
            session,
            connect_timeout,
            seed: s,
        } => {
            let args = PartyArgs {
                sid: scheme.sid()?,
                role: role.parse().map_err(|e: obliv1d::Error| usage(e.to_string()))?,
                peers,
                preproc,
                model,
                input,
                count,
                reveal_to,
                public_shift,
                session,
                connect_timeout: Duration::from_secs(connect_timeout),
                seed: seed(s, None)?,
            };
            party(args)
        }
    }
}

fn total_bytes<T>(run: &obliv1d::sim::SimRun<T>) -> u64 {
    run.parties.iter().map(|p| p.stats.bytes_sent()).sum()
}

fn report<T>(sid: SchemeId, run: &obliv1d::sim::SimRun<T>, wall: Duration) -> serde_json::Value {
    let topo = Topology::for_scheme(sid.scheme);
    let mut bytes = BTreeMap::new();
    let mut pre = BTreeMap::new();
    let mut elements = 0;
    for p in &run.parties {
        let role = topo.roles()[p.index].to_string();
        bytes.insert(role.clone(), p.stats.bytes_sent());
        if !p.consumed.is_empty() {
            elements += p.consumed.elements(sid.scheme);
            pre.insert(role, serde_json::to_value(&p.consumed).unwrap_or_default());
        }
    }
    json!({
        "scheme": sid.to_string(),
        "wall_ms": wall.as_secs_f64() * 1e3,
        "rounds_online": run.rounds_online(),
        "rounds_offline": run.parties.iter().map(|p| p.stats.rounds_offline).max().unwrap_or(0),
        "bytes_total": total_bytes(run),
        "bytes_sent": bytes,
        "preproc_consumed": pre,
        "preproc_elements": elements,
        "ops": serde_json::to_value(&run.parties[0].ops).unwrap_or_default(),
    })
}

fn dealer(sid: SchemeId, arch: &Path, inferences: usize, reveal_to: &str, out: &Path, seed: u64) -> Res {
    let (role, _) = reveal(reveal_to)?;
    let text = std::fs::read_to_string(arch).map_err(|e| op(format!("{}: {e}", arch.display())))?;
    let arch: Arch = serde_json::from_str(&text).map_err(|e| op(format!("{}: {e}", arch.display())))?;
    let plans = plan_for(sid, &arch, inferences, role)?;
    // Every recipient of a kind draws the same amount of it.
    let mut merged = Plan::default();
    for p in &plans {
        for (&k, &n) in &p.0 {
            let e = merged.0.entry(k).or_default();
            *e = (*e).max(n);
        }
    }
    let mut gen = Generator::new(sid.ring, sid.scheme, seed);
    let files = produce(&mut gen, &merged)?;
    std::fs::create_dir_all(out)?;
    let topo = Topology::for_scheme(sid.scheme);
    let parties = topo.party_count();
    let mut listing = BTreeMap::new();
    for (i, bytes) in files.into_iter().enumerate() {
        let role = topo.roles()[i];
        let bytes = if bytes.is_empty() {
            write_party_file(&sid.ring, sid.scheme, i, parties, &gen.setup(i), &[])
        } else {
            bytes
        };
        let path = out.join(format!("{role}.obpp"));
        std::fs::write(&path, &bytes)?;
        log::info!(target: "obliv1d", "event=preproc_written role={role} path={:?} bytes={}", path, bytes.len());
        listing.insert(role.to_string(), serde_json::to_value(&plans[i]).unwrap_or_default());
    }
    let plan = json!({
        "scheme": sid.to_string(),
        "inferences": inferences,
        "reveal_to": role.to_string(),
        "parties": listing,
    });
    std::fs::write(out.join("plan.json"), serde_json::to_string_pretty(&plan).unwrap_or_default())?;
    Ok(())
}

struct PartyArgs {
    sid: SchemeId,
    role: Role,
    peers: String,
    preproc: PathBuf,
    model: Option<PathBuf>,
    input: Vec<PathBuf>,
    count: Option<usize>,
    reveal_to: String,
    public_shift: bool,
    session: u64,
    connect_timeout: Duration,
    seed: u64,
}

fn party(a: PartyArgs) -> Res {
    let topo = Topology::for_scheme(a.sid.scheme);
    let me = topo
        .index_of(a.role)
        .ok_or_else(|| usage(format!("role {} does not exist under {}", a.role, a.sid.scheme)))?;
    let alice = topo.index_of(Role::Alice).expect("every topology has alice");
    let bob = topo.index_of(Role::Bob).expect("every topology has bob");
    if a.model.is_some() != (a.role == Role::Bob) {
        return Err(usage("--model is required for bob and only for bob"));
    }
    if a.public_shift && a.role != Role::Bob {
        return Err(usage("--public-shift is chosen by the model owner (bob)"));
    }
    if (a.role == Role::Alice) == a.input.is_empty() {
        return Err(usage("--input is required for alice and only for alice"));
    }
    let count = match (a.role == Role::Alice, a.count) {
        (true, Some(c)) if c != a.input.len() => {
            return Err(usage(format!("--count {c} conflicts with {} --input files", a.input.len())))
        }
        (true, _) => a.input.len(),
        (false, c) => c.unwrap_or(1),
    };
    let (reveal_role, reveal_addr) = reveal(&a.reveal_to)?;
    let recipient = topo.index_of(reveal_role).expect("recipient role exists");

    let mut addrs: HashMap<usize, SocketAddr> = HashMap::new();
    for entry in a.peers.split(',').map(str::trim).filter(|e| !e.is_empty()) {
        let (r, addr) = entry
            .split_once('=')
            .ok_or_else(|| usage(format!("peer entry '{entry}' is not role=host:port")))?;
        let r: Role = r.parse().map_err(|e: obliv1d::Error| usage(e.to_string()))?;
        let i = topo
            .index_of(r)
            .ok_or_else(|| usage(format!("role {r} does not exist under {}", a.sid.scheme)))?;
        let addr: SocketAddr = addr.parse().map_err(|_| usage(format!("bad address '{addr}'")))?;
        if addrs.insert(i, addr).is_some() {
            return Err(usage(format!("role {r} listed twice in --peers")));
        }
    }
    if let Some(addr) = reveal_addr {
        if let Some(prev) = addrs.insert(recipient, addr) {
            if prev != addr {
                return Err(usage("third-party address differs between --peers and --reveal-to"));
            }
        }
    }
    let mut needed: Vec<usize> = (0..topo.computing()).collect();
    needed.extend([alice, bob, recipient, me]);
    for i in needed {
        if !addrs.contains_key(&i) {
            return Err(usage(format!("--peers lacks an address for {}", topo.roles()[i])));
        }
    }
    let mut present: Vec<usize> = addrs.keys().copied().collect();
    present.sort_unstable();

    let bytes = std::fs::read(&a.preproc).map_err(|e| op(format!("{}: {e}", a.preproc.display())))?;
    let store = read_store(&bytes)?;
    if store.scheme != a.sid.scheme || ring_name(&store.ring) != ring_name(&a.sid.ring) || store.party != me {
        return Err(op(format!(
            "{} was made for party {} of {}/{}, not {} of {}",
            a.preproc.display(),
            store.party,
            store.scheme,
            ring_name(&store.ring),
            a.role,
            a.sid
        )));
    }
    let m = a.model.as_ref().map(load_model).transpose()?;
    let xs = load_inputs(&a.input, None)?;

    let cfg = TcpConfig {
        me,
        addrs,
        peers: topo.peers_of(me, &present),
        connect_timeout: a.connect_timeout,
        read_timeout: Some(Duration::from_secs(300)),
    };
    log::info!(target: "obliv1d", "event=connecting role={} scheme={} peers={:?}", a.role, a.sid, cfg.peers);
    let link = TcpLink::connect(&cfg)?;
    let net = Network::new(me, a.session, cfg.peers.clone(), Box::new(link));
    let mut p = Party::new(a.sid, me, net, Box::new(store), a.seed);
    p.net.handshake(&Hello {
        version: PROTOCOL_VERSION,
        scheme: a.sid.scheme,
        trunc: a.sid.trunc,
        ring: a.sid.ring,
        session: a.session,
    })?;
    log::info!(target: "obliv1d", "event=handshake_ok role={}", a.role);
    let t = Instant::now();
    let sm = share_model(&mut p, bob, m.as_ref(), a.public_shift)?;
    for k in 0..count {
        let x = (me == alice).then(|| xs[k].as_slice());
        let res = infer(&mut p, sm.as_ref(), alice, x, recipient, InferOptions::default())?;
        if let Some(c) = res.class {
            println!("{c}");
        }
        log::info!(target: "obliv1d", "event=inference_done role={} index={k}", a.role);
    }
    let st = p.net.stats();
    log::info!(
        target: "obliv1d",
        "event=session_done role={} wall_ms={} rounds_online={} bytes_sent={} bytes_received={}",
        a.role,
        t.elapsed().as_millis(),
        st.rounds_online,
        st.bytes_sent(),
        st.bytes_received()
    );
    Ok(())
}
