//! Delimited-text formats for datasets and anchors.
//!
//! Dataset files:
//!
//! ```text
//! #dataset dim=4 domains=3 seed=0
//! #config synth.noise=0.5
//! sample_id,domain,label,v0,v1,v2,v3
//! 0,0,live,0.93,1.2,-0.1,0.4
//! ```
//!
//! Lines starting with `#` are comments; the `#dataset` line and the column
//! header are optional, which keeps the format open to embeddings produced
//! elsewhere. Labels are `live`/`spoof` or `0`/`1`. Floats are written with
//! the shortest representation that parses back to the same value.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fod::TextAnchors;
use crate::groups::{ClassLabel, DomainId, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub dim: usize,
    pub domains: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: Option<DatasetHeader>,
    /// Free-form `#config` lines, without the prefix.
    pub config: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn dim(&self) -> Option<usize> {
        self.header
            .map(|h| h.dim)
            .or_else(|| self.samples.first().map(|s| s.embedding.len()))
    }
}

fn label_name(label: ClassLabel) -> &'static str {
    match label {
        ClassLabel::Live => "live",
        ClassLabel::Spoof => "spoof",
    }
}

fn parse_label(s: &str) -> Option<ClassLabel> {
    match s {
        "live" | "0" => Some(ClassLabel::Live),
        "spoof" | "1" => Some(ClassLabel::Spoof),
        _ => None,
    }
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

pub fn format_dataset(samples: &[Sample], seed: Option<u64>, config: &[String]) -> Result<String> {
    let dim = samples.first().map_or(0, |s| s.embedding.len());
    let domains = crate::groups::distinct_domains(samples);
    let mut out = String::new();
    write!(out, "#dataset dim={dim} domains={domains}").expect("string write");
    if let Some(seed) = seed {
        write!(out, " seed={seed}").expect("string write");
    }
    out.push('\n');
    for line in config {
        writeln!(out, "#config {line}").expect("string write");
    }
    out.push_str("sample_id,domain,label");
    for i in 0..dim {
        write!(out, ",v{i}").expect("string write");
    }
    out.push('\n');
    for s in samples {
        Error::check_dim(dim, s.embedding.len())?;
        write!(
            out,
            "{},{},{}",
            s.sample_id,
            s.domain.0,
            label_name(s.label)
        )
        .expect("string write");
        for x in &s.embedding {
            if !x.is_finite() {
                return Err(Error::Numerical(format!(
                    "sample {} has non-finite value {x}",
                    s.sample_id
                )));
            }
            write!(out, ",{x}").expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}

fn parse_header(line: usize, rest: &str) -> Result<DatasetHeader> {
    let (mut dim, mut domains, mut seed) = (None, None, None);
    for tok in rest.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| {
            parse_err(
                line,
                1,
                format!("expected key=value in header, got '{tok}'"),
            )
        })?;
        let bad = || parse_err(line, 1, format!("bad header value '{tok}'"));
        match k {
            "dim" => dim = Some(v.parse().map_err(|_| bad())?),
            "domains" => domains = Some(v.parse().map_err(|_| bad())?),
            "seed" => seed = Some(v.parse().map_err(|_| bad())?),
            _ => return Err(parse_err(line, 1, format!("unknown header key '{k}'"))),
        }
    }
    Ok(DatasetHeader {
        dim: dim.ok_or_else(|| parse_err(line, 1, "header lacks dim"))?,
        domains: domains.ok_or_else(|| parse_err(line, 1, "header lacks domains"))?,
        seed,
    })
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut header = None;
    let mut config = Vec::new();
    let mut samples = Vec::new();
    let mut dim: Option<usize> = None;
    let mut seen_ids = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim_start();
            if let Some(h) = rest.strip_prefix("dataset") {
                let h = parse_header(line_no, h)?;
                dim = Some(h.dim);
                header = Some(h);
            } else if let Some(c) = rest.strip_prefix("config") {
                config.push(c.trim().to_string());
            }
            continue;
        }
        if line.starts_with("sample_id") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let expected = dim.unwrap_or_else(|| fields.len().saturating_sub(3));
        if fields.len() != expected + 3 {
            return Err(parse_err(
                line_no,
                fields.len().min(expected + 3) + 1,
                format!("expected {} fields, got {}", expected + 3, fields.len()),
            ));
        }
        if expected == 0 {
            return Err(parse_err(line_no, 4, "row has no embedding values"));
        }
        dim = Some(expected);
        let sample_id: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, 1, format!("bad sample_id '{}'", fields[0])))?;
        if !seen_ids.insert(sample_id) {
            return Err(parse_err(
                line_no,
                1,
                format!("duplicate sample_id {sample_id}"),
            ));
        }
        let domain: u32 = fields[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, 2, format!("bad domain '{}'", fields[1])))?;
        let label = parse_label(fields[2].trim())
            .ok_or_else(|| parse_err(line_no, 3, format!("bad label '{}'", fields[2])))?;
        let mut embedding = Vec::with_capacity(expected);
        for (j, f) in fields[3..].iter().enumerate() {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| parse_err(line_no, j + 4, format!("bad number '{f}'")))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, j + 4, format!("non-finite value '{f}'")));
            }
            embedding.push(v);
        }
        samples.push(Sample {
            sample_id,
            domain: DomainId(domain),
            label,
            embedding,
        });
    }
    Ok(Dataset {
        header,
        config,
        samples,
    })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Two rows, `live` then `spoof`, each followed by the anchor values.
pub fn format_anchors(anchors: &TextAnchors) -> String {
    let mut out = String::new();
    for (i, a) in anchors.as_array().iter().enumerate() {
        out.push_str(if i == 0 { "live" } else { "spoof" });
        for x in a {
            write!(out, ",{x}").expect("string write");
        }
        out.push('\n');
    }
    out
}

pub fn parse_anchors(text: &str) -> Result<TextAnchors> {
    let mut rows: [Option<Vec<f64>>; 2] = [None, None];
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',');
        let name = fields.next().unwrap_or_default().trim();
        let label = parse_label(name)
            .ok_or_else(|| parse_err(line_no, 1, format!("bad anchor label '{name}'")))?;
        let values = fields
            .enumerate()
            .map(|(j, f)| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line_no, j + 2, format!("bad number '{f}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        if rows[label.index()].replace(values).is_some() {
            return Err(parse_err(line_no, 1, format!("duplicate anchor '{name}'")));
        }
    }
    match rows {
        [Some(live), Some(spoof)] => TextAnchors::new(live, spoof),
        _ => Err(parse_err(
            0,
            0,
            "anchors file needs one live and one spoof row",
        )),
    }
}

pub fn read_anchors(path: &Path) -> Result<TextAnchors> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_anchors(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples() -> Vec<Sample> {
        vec![
            Sample {
                sample_id: 0,
                domain: DomainId(0),
                label: ClassLabel::Live,
                embedding: vec![0.1, -2.5e-17, 3.0],
            },
            Sample {
                sample_id: 7,
                domain: DomainId(2),
                label: ClassLabel::Spoof,
                embedding: vec![1.0 / 3.0, 1e300, -0.0],
            },
        ]
    }

    #[test]
    fn round_trip_is_exact() {
        let text = format_dataset(&samples(), Some(4), &["synth.dim=3".into()]).unwrap();
        let ds = parse_dataset(&text).unwrap();
        assert_eq!(ds.samples, samples());
        assert_eq!(
            ds.header,
            Some(DatasetHeader {
                dim: 3,
                domains: 2,
                seed: Some(4)
            })
        );
        assert_eq!(ds.config, vec!["synth.dim=3".to_string()]);
    }

    #[test]
    fn headerless_rows_parse() {
        let ds = parse_dataset("1,0,0,0.5,0.5\n2,1,spoof,1,2\n").unwrap();
        assert_eq!(ds.samples.len(), 2);
        assert_eq!(ds.dim(), Some(2));
    }

    #[test]
    fn errors_name_line_and_column() {
        let err = parse_dataset("#dataset dim=2 domains=1\n0,0,live,1.0,abc\n").unwrap_err();
        assert!(
            matches!(
                err,
                Error::Parse {
                    line: 2,
                    column: 5,
                    ..
                }
            ),
            "{err}"
        );
        let err = parse_dataset("0,0,live,1.0,2.0\n1,0,live,1.0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_dataset("0,0,maybe,1.0\n").unwrap_err();
        assert!(matches!(
            err,
            Error::Parse {
                line: 1,
                column: 3,
                ..
            }
        ));
        let err = parse_dataset("0,0,live,1.0\n0,0,live,1.0\n").unwrap_err();
        assert!(matches!(
            err,
            Error::Parse {
                line: 2,
                column: 1,
                ..
            }
        ));
    }

    #[test]
    fn anchors_round_trip() {
        let a = TextAnchors::new(vec![1.0, 0.0, 0.0], vec![-1.0, 0.05, 0.0]).unwrap();
        let b = parse_anchors(&format_anchors(&a)).unwrap();
        for c in 0..2 {
            for (x, y) in a.get(c).iter().zip(b.get(c)) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        assert!(parse_anchors("live,1,0\n").is_err());
    }
}
