//! Kernel file format: one term per line, `A gamma omega` as decimal
//! literals separated by whitespace or commas. `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;

use super::{KernelTerm, MemoryKernel};
use crate::error::{Error, Result};

pub fn parse_kernel(text: &str, origin: &str) -> Result<MemoryKernel> {
    let mut terms = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 3 {
            return Err(err(format!(
                "expected 3 fields (A gamma omega), found {}",
                fields.len()
            )));
        }
        let mut vals = [0.0; 3];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f
                .parse::<f64>()
                .map_err(|e| err(format!("bad number {f:?}: {e}")))?;
        }
        let term = KernelTerm::new(vals[0], vals[1], vals[2]).map_err(|e| err(e.to_string()))?;
        terms.push(term);
    }
    if terms.is_empty() {
        return Err(Error::Parse {
            path: origin.to_string(),
            line: 0,
            message: "kernel file has no terms".into(),
        });
    }
    Ok(MemoryKernel { terms })
}

pub fn read_kernel_file(path: impl AsRef<Path>) -> Result<MemoryKernel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kernel(&text, &path.display().to_string())
}

/// Serialize with shortest round-trip float formatting.
pub fn write_kernel(kernel: &MemoryKernel) -> String {
    let mut out = String::from("# A gamma omega\n");
    for t in &kernel.terms {
        let _ = writeln!(out, "{:?} {:?} {:?}", t.amplitude, t.decay, t.frequency);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_table_parses() {
        let text = include_str!("../../data/mg24_kernel");
        let k = parse_kernel(text, "mg24_kernel").unwrap();
        assert_eq!(k, MemoryKernel::mg24());
    }

    #[test]
    fn round_trip() {
        let k = MemoryKernel::mg24();
        assert_eq!(parse_kernel(&write_kernel(&k), "mem").unwrap(), k);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "# header\n1.0 0.1 0.0\n2.0 oops 0.3\n";
        match parse_kernel(text, "k.txt") {
            Err(Error::Parse { line, path, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(path, "k.txt");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_kernel("1 2\n", "k"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_kernel("-1 2 0\n", "k"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(parse_kernel("# nothing\n", "k").is_err());
    }

    #[test]
    fn commas_accepted() {
        let k = parse_kernel("1.5, 0.2, -0.1\n", "k").unwrap();
        assert_eq!(k.terms[0], KernelTerm::new(1.5, 0.2, -0.1).unwrap());
    }
}
