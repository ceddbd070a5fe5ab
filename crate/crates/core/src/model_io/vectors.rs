//! `.qvec` inputs and `.qtest` golden vectors.

use super::{checksum, read_file, write_file, ModelError};
use crate::qnn::Model;
use std::fmt::Write as _;
use std::path::Path;

pub const INPUT_MAGIC: &str = "obliv1d-qvec";
pub const TEST_MAGIC: &str = "obliv1d-qtest";

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Non-blank, non-comment lines with their 1-based numbers.
fn content(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        (!l.is_empty() && !l.starts_with('#')).then(|| (i + 1, l.split_whitespace().collect()))
    })
}

fn check_header(line: Option<(usize, Vec<&str>)>, magic: &str) -> Result<(), ModelError> {
    match line {
        Some((_, t)) if t.len() == 2 && t[0] == magic => {
            if t[1] == "1" {
                Ok(())
            } else {
                Err(ModelError::Version(t[1].to_string()))
            }
        }
        Some((no, _)) => Err(ModelError::syntax(no, format!("expected '{magic} 1'"))),
        None => Err(ModelError::syntax(1, "empty file")),
    }
}

/// `key N v1 .. vN`.
fn counted<T: std::str::FromStr>(
    no: usize,
    t: &[&str],
    key: &str,
) -> Result<Vec<T>, ModelError> {
    if t.first() != Some(&key) || t.len() < 2 {
        return Err(ModelError::syntax(no, format!("expected '{key} N values...'")));
    }
    let n: usize = t[1]
        .parse()
        .map_err(|_| ModelError::syntax(no, format!("bad count '{}'", t[1])))?;
    let vals = &t[2..];
    if vals.len() != n {
        return Err(ModelError::Length {
            got: vals.len(),
            want: n,
        });
    }
    vals.iter()
        .map(|v| {
            v.parse()
                .map_err(|_| ModelError::syntax(no, format!("bad value '{v}' in {key}")))
        })
        .collect()
}

pub fn write_input(x: &[u8]) -> String {
    format!("{INPUT_MAGIC} 1\nvalues {} {}\n", x.len(), join(x))
}

pub fn parse_input(text: &str) -> Result<Vec<u8>, ModelError> {
    let mut it = content(text);
    check_header(it.next(), INPUT_MAGIC)?;
    let (no, t) = it
        .next()
        .ok_or_else(|| ModelError::syntax(2, "missing values line"))?;
    let v = counted::<u8>(no, &t, "values")?;
    if let Some((no, _)) = it.next() {
        return Err(ModelError::syntax(no, "unexpected content after values"));
    }
    Ok(v)
}

/// Load an input vector; with a model, its length is checked too.
pub fn load_input(path: impl AsRef<Path>, model: Option<&Model>) -> Result<Vec<u8>, ModelError> {
    let x = parse_input(&read_file(path.as_ref())?)?;
    if let Some(m) = model {
        if x.len() != m.input_len {
            return Err(ModelError::Length {
                got: x.len(),
                want: m.input_len,
            });
        }
    }
    Ok(x)
}

pub fn save_input(path: impl AsRef<Path>, x: &[u8]) -> Result<(), ModelError> {
    write_file(path.as_ref(), &write_input(x))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestCase {
    pub input: Vec<u8>,
    pub class: usize,
    /// Every layer's quantized output, as the oracle computes it.
    pub outputs: Vec<Vec<i64>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestVectors {
    /// Checksum of the model these were computed with.
    pub model: String,
    pub cases: Vec<TestCase>,
}

pub fn write_test_vectors(tv: &TestVectors) -> String {
    let mut s = format!("{TEST_MAGIC} 1\nmodel {}\ncases {}\n", tv.model, tv.cases.len());
    for (i, c) in tv.cases.iter().enumerate() {
        let _ = writeln!(s, "case {i} class {} layers {}", c.class, c.outputs.len());
        let _ = writeln!(s, "input {} {}", c.input.len(), join(&c.input));
        for o in &c.outputs {
            let _ = writeln!(s, "output {} {}", o.len(), join(o));
        }
    }
    s
}

pub fn parse_test_vectors(text: &str) -> Result<TestVectors, ModelError> {
    let mut it = content(text);
    check_header(it.next(), TEST_MAGIC)?;
    let model = match it.next() {
        Some((_, t)) if t.len() == 2 && t[0] == "model" => t[1].to_string(),
        Some((no, _)) => return Err(ModelError::syntax(no, "expected 'model CHECKSUM'")),
        None => return Err(ModelError::syntax(2, "missing model line")),
    };
    let count: usize = match it.next() {
        Some((no, t)) if t.len() == 2 && t[0] == "cases" => t[1]
            .parse()
            .map_err(|_| ModelError::syntax(no, "bad case count"))?,
        Some((no, _)) => return Err(ModelError::syntax(no, "expected 'cases N'")),
        None => return Err(ModelError::syntax(3, "missing cases line")),
    };
    let mut cases = Vec::new();
    while let Some((no, t)) = it.next() {
        let hdr = match t.as_slice() {
            ["case", i, "class", c, "layers", l] => (i.parse::<usize>(), c.parse(), l.parse()),
            _ => return Err(ModelError::syntax(no, "expected 'case I class C layers L'")),
        };
        let (Ok(i), Ok(class), Ok(layers)) = hdr else {
            return Err(ModelError::syntax(no, "bad number in case header"));
        };
        if i != cases.len() {
            return Err(ModelError::syntax(no, format!("case {i} out of order")));
        }
        let (no, t) = it
            .next()
            .ok_or_else(|| ModelError::syntax(no + 1, "missing input line"))?;
        let input = counted::<u8>(no, &t, "input")?;
        let mut outputs: Vec<Vec<i64>> = Vec::new();
        for _ in 0..layers {
            let (no, t) = it
                .next()
                .ok_or_else(|| ModelError::syntax(no + 1, "missing output line"))?;
            outputs.push(counted(no, &t, "output")?);
        }
        cases.push(TestCase {
            input,
            class,
            outputs,
        });
    }
    if cases.len() != count {
        return Err(ModelError::Length {
            got: cases.len(),
            want: count,
        });
    }
    Ok(TestVectors { model, cases })
}

/// Load golden vectors, refusing them if they belong to another model.
pub fn load_test_vectors(path: impl AsRef<Path>, model: &Model) -> Result<TestVectors, ModelError> {
    let tv = parse_test_vectors(&read_file(path.as_ref())?)?;
    let expected = checksum(model);
    if tv.model != expected {
        return Err(ModelError::Binding {
            expected,
            found: tv.model,
        });
    }
    for c in &tv.cases {
        if c.input.len() != model.input_len {
            return Err(ModelError::Length {
                got: c.input.len(),
                want: model.input_len,
            });
        }
    }
    Ok(tv)
}

pub fn save_test_vectors(path: impl AsRef<Path>, tv: &TestVectors) -> Result<(), ModelError> {
    write_file(path.as_ref(), &write_test_vectors(tv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::gen_random_model;
    use crate::qnn::oracle;

    #[test]
    fn input_roundtrip_and_length() {
        let x: Vec<u8> = (0..40).map(|i| (i * 6) as u8).collect();
        assert_eq!(parse_input(&write_input(&x)).unwrap(), x);
        let dir = std::env::temp_dir().join(format!("obliv1d-qvec-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let m = gen_random_model("in:40,dense:2", 0).unwrap();
        let p = dir.join("x.qvec");
        save_input(&p, &x).unwrap();
        assert_eq!(load_input(&p, Some(&m)).unwrap(), x);
        save_input(&p, &x[..39]).unwrap();
        assert_eq!(
            load_input(&p, Some(&m)),
            Err(ModelError::Length { got: 39, want: 40 })
        );
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn bad_inputs() {
        assert!(parse_input("obliv1d-qvec 1\nvalues 3 1 2\n").is_err());
        assert!(parse_input("obliv1d-qvec 1\nvalues 1 256\n").is_err());
        assert!(parse_input("obliv1d-qvec 2\nvalues 1 2\n").is_err());
        assert!(parse_input("").is_err());
    }

    #[test]
    fn test_vectors_bind_to_their_model() {
        let m = gen_random_model("in:8,conv:2x3,pool:2,dense:3", 4).unwrap();
        let other = gen_random_model("in:8,conv:2x3,pool:2,dense:3", 5).unwrap();
        let cases: Vec<TestCase> = (0..3u8)
            .map(|k| {
                let input: Vec<u8> = (0..8).map(|i| i * 30 + k).collect();
                let t = oracle::run(&m, &input).unwrap();
                TestCase {
                    input,
                    class: t.class,
                    outputs: t.outputs,
                }
            })
            .collect();
        let tv = TestVectors {
            model: checksum(&m),
            cases,
        };
        let text = write_test_vectors(&tv);
        assert_eq!(parse_test_vectors(&text).unwrap(), tv);
        let dir = std::env::temp_dir().join(format!("obliv1d-qtest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("v.qtest");
        save_test_vectors(&p, &tv).unwrap();
        assert_eq!(load_test_vectors(&p, &m).unwrap(), tv);
        assert!(matches!(
            load_test_vectors(&p, &other),
            Err(ModelError::Binding { .. })
        ));
        std::fs::remove_dir_all(&dir).unwrap();
        let empty = TestVectors {
            model: checksum(&m),
            cases: vec![],
        };
        assert_eq!(parse_test_vectors(&write_test_vectors(&empty)).unwrap(), empty);
    }
}
