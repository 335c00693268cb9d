//! Line-oriented helpers for the `# tag key=value` block formats used by
//! head and model files.

use thiserror::Error;

use crate::fmt::format_sig;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct TextFormatError {
    pub line: usize,
    pub message: String,
}

/// Numbered, non-empty lines of a text document.
pub struct BlockReader<'a> {
    lines: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last_line: usize,
}

impl<'a> BlockReader<'a> {
    pub fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> =
            Box::new(text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end())).filter(|(_, l)| !l.is_empty()));
        Self { lines: it.peekable(), last_line: 0 }
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str), TextFormatError> {
        match self.lines.next() {
            Some((n, l)) => {
                self.last_line = n;
                Ok((n, l))
            }
            None => Err(TextFormatError {
                line: self.last_line + 1,
                message: format!("unexpected end of input, expected {what}"),
            }),
        }
    }

    /// Reads `# <tag> k1=v1 k2=v2 ...` and returns the values in `keys` order.
    pub fn header(&mut self, tag: &str, keys: &[&str]) -> Result<Vec<usize>, TextFormatError> {
        let (line, text) = self.next_line(&format!("`# {tag}` header"))?;
        let err = |message: String| TextFormatError { line, message };
        let rest = text
            .strip_prefix('#')
            .map(str::trim_start)
            .and_then(|r| r.strip_prefix(tag))
            .ok_or_else(|| err(format!("expected `# {tag} ...`, got `{text}`")))?;
        let mut values = vec![None; keys.len()];
        for tok in rest.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| err(format!("malformed field `{tok}`")))?;
            let slot = keys.iter().position(|key| *key == k).ok_or_else(|| err(format!("unknown field `{k}`")))?;
            values[slot] = Some(v.parse::<usize>().map_err(|e| err(format!("field `{tok}`: {e}")))?);
        }
        keys.iter().zip(values).map(|(k, v)| v.ok_or_else(|| err(format!("missing field `{k}=`")))).collect()
    }

    /// Reads one tab-separated row of exactly `len` finite floats.
    pub fn row(&mut self, len: usize) -> Result<Vec<f64>, TextFormatError> {
        let (line, text) = self.next_line(&format!("a row of {len} values"))?;
        let err = |message: String| TextFormatError { line, message };
        let values = text
            .split('\t')
            .map(|t| match t.trim().parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(err(format!("bad float `{t}`"))),
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != len {
            return Err(err(format!("expected {len} values, found {}", values.len())));
        }
        Ok(values)
    }

    pub fn expect_end(&mut self) -> Result<(), TextFormatError> {
        match self.lines.next() {
            Some((line, text)) => {
                Err(TextFormatError { line, message: format!("unexpected trailing content `{text}`") })
            }
            None => Ok(()),
        }
    }
}

/// Tab-joined floats at 17 significant digits, newline-terminated.
pub fn write_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push('\t');
        }
        first = false;
        out.push_str(&format_sig(v, 17));
    }
    out.push('\n');
}
