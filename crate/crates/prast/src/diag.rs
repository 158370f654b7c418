//! Diagnostics with source positions.
//!
//! Every error the front end, checker, or runtime reports carries the byte
//! span of the construct at fault and, where one applies, the name of the
//! typing or stepping rule that rejected it.

use std::fmt;

/// Half-open byte range into the source text of one file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Span {
    pub start: u32,
    pub end: u32,
}

impl Span {
    pub fn new(start: u32, end: u32) -> Self {
        Span { start, end }
    }

    pub fn join(self, other: Span) -> Span {
        Span { start: self.start.min(other.start), end: self.end.max(other.end) }
    }
}

/// One reported problem, tied to a span and (optionally) a rule name.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub message: String,
    pub span: Option<Span>,
    /// Name of the typing/stepping rule or check that failed, e.g. "psend",
    /// "split:+L", "preservation".
    pub rule: Option<&'static str>,
}

impl Diagnostic {
    pub fn new(message: impl Into<String>) -> Self {
        Diagnostic { message: message.into(), span: None, rule: None }
    }

    pub fn at(message: impl Into<String>, span: Span) -> Self {
        Diagnostic { message: message.into(), span: Some(span), rule: None }
    }

    pub fn with_rule(mut self, rule: &'static str) -> Self {
        self.rule = Some(rule);
        self
    }
}

/// Source file contents plus the display name used in diagnostics.
pub struct SourceFile {
    pub name: String,
    pub text: String,
    line_starts: Vec<u32>,
}

impl SourceFile {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let mut line_starts = vec![0u32];
        for (i, b) in text.bytes().enumerate() {
            if b == b'\n' {
                line_starts.push(i as u32 + 1);
            }
        }
        SourceFile { name: name.into(), text, line_starts }
    }

    /// 1-based (line, column) of a byte offset.
    pub fn line_col(&self, offset: u32) -> (u32, u32) {
        let line = match self.line_starts.binary_search(&offset) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        (line as u32 + 1, offset - self.line_starts[line] + 1)
    }

    /// Render a diagnostic as `file:line:col: message [rule]`.
    pub fn render(&self, d: &Diagnostic) -> String {
        let loc = match d.span {
            Some(sp) => {
                let (l, c) = self.line_col(sp.start);
                format!("{}:{}:{}", self.name, l, c)
            }
            None => self.name.clone(),
        };
        match d.rule {
            Some(rule) => format!("{}: {} [{}]", loc, d.message, rule),
            None => format!("{}: {}", loc, d.message),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)?;
        if let Some(rule) = self.rule {
            write!(f, " [{}]", rule)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_col_mapping() {
        let f = SourceFile::new("t.prast", "abc\ndef\n\nx");
        assert_eq!(f.line_col(0), (1, 1));
        assert_eq!(f.line_col(2), (1, 3));
        assert_eq!(f.line_col(4), (2, 1));
        assert_eq!(f.line_col(8), (3, 1)); // the empty line
        assert_eq!(f.line_col(9), (4, 1));
        let d = Diagnostic::at("bad label", Span::new(4, 5)).with_rule("&R");
        assert_eq!(f.render(&d), "t.prast:2:1: bad label [&R]");
    }
}
