//! Line-oriented `key: value` documents shared by problem, point, summary
//! and report files.
//!
//! ```text
//! saddlekit-problem v1
//! # comment
//! n: 2
//! objective.c: [1.0000000000000000e0, -2.5000000000000000e-1]
//! objective.Q: [(0, 0, 1.0000000000000000e0)]
//! ```
//!
//! The first non-blank, non-comment line is the header. Every other line is
//! `key: value`; keys are unique. Reals are written with 17 significant
//! digits so every `f64` round-trips exactly. Vectors are `[v, v, ...]`,
//! sparse matrices are coordinate triplets `[(i, j, v), ...]` with 0-based
//! indices.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FormatError>;

#[derive(Clone, Debug)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
    /// 1-based column where the value starts.
    pub col: usize,
}

impl Entry {
    fn err(&self, offset: usize, msg: impl Into<String>) -> FormatError {
        FormatError::Parse {
            line: self.line,
            col: self.col + offset,
            msg: msg.into(),
        }
    }

    pub fn real(&self) -> Result<f64> {
        parse_real(self.value.trim()).ok_or_else(|| self.err(0, format!("expected a real number, found `{}`", self.value)))
    }

    pub fn usize(&self) -> Result<usize> {
        self.value
            .trim()
            .parse()
            .map_err(|_| self.err(0, format!("expected a non-negative integer, found `{}`", self.value)))
    }

    pub fn u64(&self) -> Result<u64> {
        self.value
            .trim()
            .parse()
            .map_err(|_| self.err(0, format!("expected a non-negative integer, found `{}`", self.value)))
    }

    pub fn bool(&self) -> Result<bool> {
        match self.value.trim() {
            "true" => Ok(true),
            "false" => Ok(false),
            v => Err(self.err(0, format!("expected true or false, found `{v}`"))),
        }
    }

    pub fn text(&self) -> &str {
        self.value.trim()
    }

    fn list_items(&self) -> Result<Vec<(usize, &str)>> {
        let v = self.value.as_str();
        let start = v.find('[').filter(|i| v[..*i].trim().is_empty());
        let end = v.rfind(']').filter(|i| v[i + 1..].trim().is_empty());
        let (start, end) = match (start, end) {
            (Some(s), Some(e)) if s < e => (s, e),
            _ => return Err(self.err(0, "expected a bracketed list `[...]`")),
        };
        let inner = &v[start + 1..end];
        if inner.trim().is_empty() {
            return Ok(Vec::new());
        }
        let mut items = Vec::new();
        let mut depth = 0i32;
        let mut item_start = 0usize;
        for (i, ch) in inner.char_indices() {
            match ch {
                '(' => depth += 1,
                ')' => depth -= 1,
                ',' if depth == 0 => {
                    items.push((start + 1 + item_start, &inner[item_start..i]));
                    item_start = i + 1;
                }
                _ => {}
            }
            if depth < 0 {
                return Err(self.err(start + 1 + i, "unbalanced `)`"));
            }
        }
        if depth != 0 {
            return Err(self.err(end, "unbalanced `(`"));
        }
        items.push((start + 1 + item_start, &inner[item_start..]));
        Ok(items)
    }

    pub fn reals(&self) -> Result<Vec<f64>> {
        self.list_items()?
            .into_iter()
            .map(|(off, s)| {
                let lead = s.len() - s.trim_start().len();
                parse_real(s.trim()).ok_or_else(|| self.err(off + lead, format!("expected a real number, found `{}`", s.trim())))
            })
            .collect()
    }

    pub fn indices(&self) -> Result<Vec<usize>> {
        self.list_items()?
            .into_iter()
            .map(|(off, s)| {
                let lead = s.len() - s.trim_start().len();
                s.trim()
                    .parse()
                    .map_err(|_| self.err(off + lead, format!("expected an index, found `{}`", s.trim())))
            })
            .collect()
    }

    pub fn triplets(&self) -> Result<Vec<(usize, usize, f64)>> {
        let mut out = Vec::new();
        for (off, s) in self.list_items()? {
            let lead = s.len() - s.trim_start().len();
            let t = s.trim();
            let off = off + lead;
            if !(t.starts_with('(') && t.ends_with(')')) {
                return Err(self.err(off, format!("expected a triplet `(i, j, v)`, found `{t}`")));
            }
            let parts: Vec<&str> = t[1..t.len() - 1].split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(self.err(off, format!("expected 3 fields in triplet, found {}", parts.len())));
            }
            let i = parts[0].parse().map_err(|_| self.err(off, format!("bad row index `{}`", parts[0])))?;
            let j = parts[1].parse().map_err(|_| self.err(off, format!("bad column index `{}`", parts[1])))?;
            let v = parse_real(parts[2]).ok_or_else(|| self.err(off, format!("bad value `{}`", parts[2])))?;
            out.push((i, j, v));
        }
        Ok(out)
    }
}

fn parse_real(s: &str) -> Option<f64> {
    match s {
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        "nan" => Some(f64::NAN),
        _ if s.chars().any(|c| c.is_ascii_alphabetic() && c != 'e' && c != 'E') => None,
        _ => s.parse().ok(),
    }
}

#[derive(Clone, Debug)]
pub struct Document {
    pub header: String,
    pub header_line: usize,
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl Document {
    pub fn parse(text: &str) -> Result<Document> {
        let mut header: Option<(String, usize)> = None;
        let mut entries: Vec<Entry> = Vec::new();
        let mut index = HashMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = ln + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            if header.is_none() {
                header = Some((t.to_string(), line));
                continue;
            }
            let Some(colon) = raw.find(':') else {
                return Err(FormatError::Parse {
                    line,
                    col: 1,
                    msg: "expected `key: value`".into(),
                });
            };
            let key = raw[..colon].trim().to_string();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || "_.[]-".contains(c)) {
                return Err(FormatError::Parse {
                    line,
                    col: 1,
                    msg: format!("invalid key `{key}`"),
                });
            }
            if index.contains_key(&key) {
                return Err(FormatError::Parse {
                    line,
                    col: 1,
                    msg: format!("duplicate key `{key}`"),
                });
            }
            index.insert(key.clone(), entries.len());
            entries.push(Entry {
                key,
                value: raw[colon + 1..].to_string(),
                line,
                col: colon + 2,
            });
        }
        let (header, header_line) = header.ok_or(FormatError::Parse {
            line: 1,
            col: 1,
            msg: "empty document".into(),
        })?;
        Ok(Document {
            header,
            header_line,
            entries,
            index,
        })
    }

    pub fn expect_header(&self, expected: &str) -> Result<()> {
        if self.header != expected {
            return Err(FormatError::Parse {
                line: self.header_line,
                col: 1,
                msg: format!("expected header `{expected}`, found `{}`", self.header),
            });
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.index.get(key).map(|i| &self.entries[*i])
    }

    pub fn require(&self, key: &str) -> Result<&Entry> {
        self.get(key).ok_or_else(|| FormatError::MissingKey(key.to_string()))
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }
}

/// 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

pub fn fmt_reals(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| fmt_real(*x)).collect();
    format!("[{}]", items.join(", "))
}

pub fn fmt_indices(v: &[usize]) -> String {
    let items: Vec<String> = v.iter().map(usize::to_string).collect();
    format!("[{}]", items.join(", "))
}

pub fn fmt_triplets(t: &[(usize, usize, f64)]) -> String {
    let items: Vec<String> = t.iter().map(|(i, j, v)| format!("({i}, {j}, {})", fmt_real(*v))).collect();
    format!("[{}]", items.join(", "))
}

/// Accumulates a document in memory.
#[derive(Debug, Default)]
pub struct Writer {
    buf: String,
}

impl Writer {
    pub fn new(header: &str) -> Self {
        Writer {
            buf: format!("{header}\n"),
        }
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        let _ = writeln!(self.buf, "# {text}");
        self
    }

    pub fn kv(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.buf, "{key}: {value}");
        self
    }

    pub fn real(&mut self, key: &str, v: f64) -> &mut Self {
        self.kv(key, fmt_real(v))
    }

    pub fn reals(&mut self, key: &str, v: &[f64]) -> &mut Self {
        self.kv(key, fmt_reals(v))
    }

    pub fn finish(&self) -> String {
        self.buf.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_lists_and_triplets() {
        let doc = Document::parse("hdr v1\n# c\nv: [1, -2.5e-3, inf]\nt: [(0, 1, 2.0), (3,4,-1)]\ne: []\n").unwrap();
        doc.expect_header("hdr v1").unwrap();
        assert_eq!(doc.require("v").unwrap().reals().unwrap(), vec![1.0, -2.5e-3, f64::INFINITY]);
        assert_eq!(doc.require("t").unwrap().triplets().unwrap(), vec![(0, 1, 2.0), (3, 4, -1.0)]);
        assert!(doc.require("e").unwrap().reals().unwrap().is_empty());
    }

    #[test]
    fn errors_carry_positions() {
        let err = Document::parse("hdr\nv: [1, x2]\n").unwrap().require("v").unwrap().reals().unwrap_err();
        match err {
            FormatError::Parse { line, col, .. } => {
                assert_eq!(line, 2);
                assert_eq!(col, 8);
            }
            e => panic!("{e}"),
        }
        assert!(matches!(Document::parse("hdr\na: 1\na: 2\n"), Err(FormatError::Parse { line: 3, .. })));
        assert!(matches!(Document::parse("hdr\nnocolon\n"), Err(FormatError::Parse { line: 2, .. })));
        assert!(Document::parse("hdr\n").unwrap().expect_header("other").is_err());
    }

    proptest! {
        #[test]
        fn reals_round_trip(v in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 0..20)) {
            let text = Writer::new("h").reals("v", &v).finish();
            let back = Document::parse(&text).unwrap().require("v").unwrap().reals().unwrap();
            prop_assert_eq!(back, v);
        }
    }
}
