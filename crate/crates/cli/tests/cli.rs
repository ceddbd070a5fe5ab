use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_obliv1d"));
    c.current_dir(root()).env_remove("OBLIV1D_SEED").env_remove("OBLIV1D_LOG");
    c
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_string()
}

const MODEL: &str = "models/tiny.qmodel";
const INPUT: &str = "testdata/tiny-0.qvec";

#[test]
fn oracle_and_local_sim_agree() {
    let o = run(&["oracle", "--model", MODEL, "--input", INPUT]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "4");
    let s = run(&[
        "local-sim", "--scheme", "semi-3pc", "--ring", "mod2k", "--model", MODEL, "--input", INPUT,
    ]);
    assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
    assert_eq!(stdout(&s), "4");
}

#[test]
fn exit_codes() {
    let o = run(&[
        "local-sim", "--scheme", "active-2pc", "--ring", "mod2k", "--model", MODEL, "--input", INPUT,
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run(&["local-sim", "--bogus"]).status.code(), Some(2));
    let o = run(&["oracle", "--model", "missing.qmodel", "--input", INPUT]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("event=failed") && err.contains("class=operational"), "{err}");
    for (scheme, msg) in [("active-2pc", "open"), ("active-2pc", "beaver"), ("active-3pc", "sacrifice")] {
        let o = run(&[
            "local-sim", "--scheme", scheme, "--model", MODEL, "--input", INPUT, "--cheat", msg,
        ]);
        assert_eq!(o.status.code(), Some(4), "{scheme} {msg}");
        assert!(stdout(&o).is_empty());
    }
}

fn without_wall(line: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
    v.as_object_mut().unwrap().remove("wall_ms");
    v
}

#[test]
fn local_sim_is_reproducible() {
    let args = [
        "local-sim", "--scheme", "active-3pc", "--model", MODEL, "--input", INPUT, "--stats",
        "--seed", "7",
    ];
    let a = stdout(&run(&args));
    let b = stdout(&run(&args));
    let (a, b): (Vec<_>, Vec<_>) = (a.lines().collect(), b.lines().collect());
    assert_eq!(a[0], b[0]);
    assert_eq!(without_wall(a[1]), without_wall(b[1]));
}

#[test]
fn bench_costs_are_stable() {
    let o = run(&["bench", "--shape", "in:16,conv:2x3,dense:3", "--repeat", "3", "--scheme", "active-2pc"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let lines: Vec<_> = out.lines().collect();
    assert_eq!(lines.len(), 4);
    let first = without_wall(lines[0]);
    assert!(first["rounds_online"].as_u64().unwrap() > 0);
    let summary: serde_json::Value = serde_json::from_str(lines[3]).unwrap();
    assert_eq!(summary["rounds_and_bytes_identical"], true);
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn networked_two_party_session() {
    let dir = std::env::temp_dir().join(format!("obliv1d-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let arch = dir.join("arch.json");
    let o = run(&["arch", "--model", MODEL]);
    assert!(o.status.success());
    std::fs::write(&arch, &o.stdout).unwrap();
    let pp = dir.join("pp");
    let o = bin()
        .args(["dealer", "--scheme", "active-2pc", "--seed", "3", "--inferences", "1", "--arch"])
        .arg(&arch)
        .arg("--out")
        .arg(&pp)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let peers = format!(
        "alice=127.0.0.1:{},bob=127.0.0.1:{},third-party=127.0.0.1:{}",
        free_port(),
        free_port(),
        free_port()
    );
    let party = |role: &str, extra: &[&str]| {
        bin()
            .args(["party", "--scheme", "active-2pc", "--role", role, "--peers", &peers])
            .arg("--preproc")
            .arg(pp.join(format!("{role}.obpp")))
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap()
    };
    let bob = party("bob", &["--model", MODEL, "--count", "1"]);
    let third = party("third-party", &["--count", "1"]);
    let alice = party("alice", &["--input", INPUT]);
    let a = alice.wait_with_output().unwrap();
    let b = bob.wait_with_output().unwrap();
    let t = third.wait_with_output().unwrap();
    assert!(t.status.success(), "{}", String::from_utf8_lossy(&t.stderr));
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(b.status.success(), "{}", String::from_utf8_lossy(&b.stderr));
    assert_eq!(stdout(&a), "4");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn verify_checks_golden_vectors() {
    let o = run(&["verify", "--model", MODEL, "--vectors", "testdata/tiny.qtest"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["layers_match"], 200);

    // Change one value of the first layer output of case 0.
    let text = std::fs::read_to_string(root().join("testdata/tiny.qtest")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let at = lines.iter().position(|l| l.starts_with("output ")).unwrap();
    let mut toks: Vec<String> = lines[at].split(' ').map(String::from).collect();
    toks[2] = (toks[2].parse::<i64>().unwrap() ^ 1).to_string();
    lines[at] = toks.join(" ");
    let path = std::env::temp_dir().join(format!("obliv1d-verify-{}.qtest", std::process::id()));
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let o = bin()
        .args(["verify", "--model", MODEL, "--vectors"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    std::fs::remove_file(&path).unwrap();
}
