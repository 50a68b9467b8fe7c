//! Plain-text observation sequences.
//!
//! One observation per line, optionally preceded by a header
//! `# hmm-seq v1 discrete` or `# hmm-seq v1 continuous`. Other lines starting
//! with `#` and blank lines are ignored.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Observations, OutputModel};

const HEADER: &str = "# hmm-seq v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceKind {
    Discrete,
    Continuous,
}

impl SequenceKind {
    pub fn of(outputs: &OutputModel) -> Self {
        match outputs {
            OutputModel::Discrete(_) => SequenceKind::Discrete,
            OutputModel::Gaussian(_) => SequenceKind::Continuous,
        }
    }

    fn name(self) -> &'static str {
        match self {
            SequenceKind::Discrete => "discrete",
            SequenceKind::Continuous => "continuous",
        }
    }
}

/// Parses a sequence; the header wins over `expected` when both are present.
pub fn parse_observations(text: &str, expected: Option<SequenceKind>) -> Result<Observations> {
    let mut kind = expected;
    let mut body = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix(HEADER) {
            let declared = match rest.trim() {
                "discrete" => SequenceKind::Discrete,
                "continuous" => SequenceKind::Continuous,
                other => {
                    return Err(Error::Parse(format!(
                        "line {}: unknown sequence type {other:?}",
                        lineno + 1
                    )))
                }
            };
            if let Some(want) = expected {
                if want != declared {
                    return Err(Error::Parse(format!(
                        "file holds a {} sequence, expected {}",
                        declared.name(),
                        want.name()
                    )));
                }
            }
            kind = Some(declared);
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        body.push((lineno + 1, line));
    }
    let kind = kind.ok_or_else(|| {
        Error::Parse("sequence type unknown: add a header or supply an output model".into())
    })?;
    match kind {
        SequenceKind::Discrete => body
            .into_iter()
            .map(|(n, l)| {
                l.parse::<usize>()
                    .map_err(|e| Error::Parse(format!("line {n}: {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Observations::Discrete),
        SequenceKind::Continuous => body
            .into_iter()
            .map(|(n, l)| {
                l.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {n}: {e}")))
                    .and_then(|v| {
                        if v.is_finite() {
                            Ok(v)
                        } else {
                            Err(Error::Parse(format!("line {n}: non-finite value")))
                        }
                    })
            })
            .collect::<Result<Vec<_>>>()
            .map(Observations::Continuous),
    }
}

pub fn read_observations(path: &Path, expected: Option<SequenceKind>) -> Result<Observations> {
    parse_observations(&fs::read_to_string(path)?, expected)
}

/// Writes the header followed by one value per line; floats round-trip exactly.
pub fn write_observations<W: Write>(out: W, y: &Observations) -> Result<()> {
    let mut w = BufWriter::new(out);
    match y {
        Observations::Discrete(v) => {
            writeln!(w, "{HEADER} discrete")?;
            for s in v {
                writeln!(w, "{s}")?;
            }
        }
        Observations::Continuous(v) => {
            writeln!(w, "{HEADER} continuous")?;
            for s in v {
                writeln!(w, "{s:?}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_observations(path: &Path, y: &Observations) -> Result<()> {
    write_observations(fs::File::create(path)?, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(y: &Observations) -> Observations {
        let mut buf = Vec::new();
        write_observations(&mut buf, y).unwrap();
        parse_observations(std::str::from_utf8(&buf).unwrap(), None).unwrap()
    }

    #[test]
    fn continuous_values_roundtrip_exactly() {
        let y = Observations::Continuous(vec![0.1, -3.0e-300, 1.0 / 3.0, 12345.678]);
        assert_eq!(roundtrip(&y), y);
    }

    #[test]
    fn discrete_roundtrip() {
        let y = Observations::Discrete(vec![0, 5, 2, 2]);
        assert_eq!(roundtrip(&y), y);
    }

    #[test]
    fn headerless_needs_a_hint() {
        assert!(parse_observations("1\n2\n", None).is_err());
        assert_eq!(
            parse_observations("1\n\n# note\n2\n", Some(SequenceKind::Discrete)).unwrap(),
            Observations::Discrete(vec![1, 2])
        );
    }

    #[test]
    fn header_conflict_and_bad_lines() {
        let text = "# hmm-seq v1 continuous\n1.5\n";
        assert!(parse_observations(text, Some(SequenceKind::Discrete)).is_err());
        assert!(parse_observations("# hmm-seq v1 discrete\n1.5\n", None).is_err());
        assert!(parse_observations("# hmm-seq v1 continuous\nNaN\n", None).is_err());
    }
}
