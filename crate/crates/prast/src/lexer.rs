//! Tokenizer for the surface syntax.
//!
//! Numbers are lexed as exact rationals: `0.6`, `1/3`, and `2` are all one
//! `Number` token. `%` starts a comment that runs to end of line. There is
//! no `/` operator, so `digits/digits` is unambiguous as a fraction.

use crate::diag::{Diagnostic, Span};
use crate::rational::Rational;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Number(Rational),
    // keywords
    KwType,
    KwDecl,
    KwProc,
    KwCase,
    KwPCase,
    KwFlip,
    KwSend,
    KwRecv,
    KwClose,
    KwWait,
    KwPay,
    KwGet,
    KwWork,
    // punctuation and operators
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Semi,
    Eq,
    FatArrow,  // =>
    Plus,      // +
    Amp,       // &
    Pipe,      // |
    PayHead,   // |>
    GetHead,   // <|
    TurnstileZero, // |-
    TurnstileOpen, // |{   (closed by  } - )
    Minus,     // -
    Lolli,     // -o
    LArrow,    // <-
    FwdArrow,  // <->
    Dot,       // .
    DotDot,    // ..
    Caret,     // ^
    Star,      // *
    Eof,
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Tok::Ident(name) => return write!(f, "identifier {}", name),
            Tok::Number(r) => return write!(f, "number {}", r),
            Tok::KwType => "type",
            Tok::KwDecl => "decl",
            Tok::KwProc => "proc",
            Tok::KwCase => "case",
            Tok::KwPCase => "pcase",
            Tok::KwFlip => "flip",
            Tok::KwSend => "send",
            Tok::KwRecv => "recv",
            Tok::KwClose => "close",
            Tok::KwWait => "wait",
            Tok::KwPay => "pay",
            Tok::KwGet => "get",
            Tok::KwWork => "work",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::Comma => ",",
            Tok::Colon => ":",
            Tok::Semi => ";",
            Tok::Eq => "=",
            Tok::FatArrow => "=>",
            Tok::Plus => "+",
            Tok::Amp => "&",
            Tok::Pipe => "|",
            Tok::PayHead => "|>",
            Tok::GetHead => "<|",
            Tok::TurnstileZero => "|-",
            Tok::TurnstileOpen => "|{",
            Tok::Minus => "-",
            Tok::Lolli => "-o",
            Tok::LArrow => "<-",
            Tok::FwdArrow => "<->",
            Tok::Dot => ".",
            Tok::DotDot => "..",
            Tok::Caret => "^",
            Tok::Star => "*",
            Tok::Eof => "end of input",
        };
        write!(f, "{}", s)
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_ident_continue(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'\''
}

/// Tokenize a whole file. On malformed input, returns a diagnostic at the
/// offending byte.
pub fn tokenize(src: &str) -> Result<Vec<Token>, Diagnostic> {
    let bytes = src.as_bytes();
    let mut i = 0usize;
    let mut out = Vec::new();
    macro_rules! push {
        ($tok:expr, $start:expr, $end:expr) => {
            out.push(Token { tok: $tok, span: Span::new($start as u32, $end as u32) })
        };
    }
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'%' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'(' => {
                push!(Tok::LParen, i, i + 1);
                i += 1;
            }
            b')' => {
                push!(Tok::RParen, i, i + 1);
                i += 1;
            }
            b'{' => {
                push!(Tok::LBrace, i, i + 1);
                i += 1;
            }
            b'}' => {
                push!(Tok::RBrace, i, i + 1);
                i += 1;
            }
            b',' => {
                push!(Tok::Comma, i, i + 1);
                i += 1;
            }
            b':' => {
                push!(Tok::Colon, i, i + 1);
                i += 1;
            }
            b';' => {
                push!(Tok::Semi, i, i + 1);
                i += 1;
            }
            b'^' => {
                push!(Tok::Caret, i, i + 1);
                i += 1;
            }
            b'*' => {
                push!(Tok::Star, i, i + 1);
                i += 1;
            }
            b'+' => {
                push!(Tok::Plus, i, i + 1);
                i += 1;
            }
            b'&' => {
                push!(Tok::Amp, i, i + 1);
                i += 1;
            }
            b'=' => {
                if bytes.get(i + 1) == Some(&b'>') {
                    push!(Tok::FatArrow, i, i + 2);
                    i += 2;
                } else {
                    push!(Tok::Eq, i, i + 1);
                    i += 1;
                }
            }
            b'|' => match bytes.get(i + 1) {
                Some(b'>') => {
                    push!(Tok::PayHead, i, i + 2);
                    i += 2;
                }
                Some(b'-') => {
                    push!(Tok::TurnstileZero, i, i + 2);
                    i += 2;
                }
                Some(b'{') => {
                    push!(Tok::TurnstileOpen, i, i + 2);
                    i += 2;
                }
                _ => {
                    push!(Tok::Pipe, i, i + 1);
                    i += 1;
                }
            },
            b'<' => match (bytes.get(i + 1), bytes.get(i + 2)) {
                (Some(b'-'), Some(b'>')) => {
                    push!(Tok::FwdArrow, i, i + 3);
                    i += 3;
                }
                (Some(b'-'), _) => {
                    push!(Tok::LArrow, i, i + 2);
                    i += 2;
                }
                (Some(b'|'), _) => {
                    push!(Tok::GetHead, i, i + 2);
                    i += 2;
                }
                _ => {
                    return Err(Diagnostic::at(
                        "stray '<'",
                        Span::new(i as u32, i as u32 + 1),
                    ))
                }
            },
            b'-' => {
                // `-o` is the lolli arrow when not part of an identifier.
                if bytes.get(i + 1) == Some(&b'o')
                    && bytes.get(i + 2).map_or(true, |&c| !is_ident_continue(c))
                {
                    push!(Tok::Lolli, i, i + 2);
                    i += 2;
                } else {
                    push!(Tok::Minus, i, i + 1);
                    i += 1;
                }
            }
            b'.' => {
                if bytes.get(i + 1) == Some(&b'.') {
                    push!(Tok::DotDot, i, i + 2);
                    i += 2;
                } else {
                    push!(Tok::Dot, i, i + 1);
                    i += 1;
                }
            }
            b'0'..=b'9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                // fraction or decimal tail
                if i < bytes.len()
                    && (bytes[i] == b'/' || bytes[i] == b'.')
                    && bytes.get(i + 1).is_some_and(|c| c.is_ascii_digit())
                {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let text = &src[start..i];
                match Rational::parse_literal(text) {
                    Some(r) => push!(Tok::Number(r), start, i),
                    None => {
                        return Err(Diagnostic::at(
                            format!("malformed number literal {}", text),
                            Span::new(start as u32, i as u32),
                        ))
                    }
                }
            }
            _ if is_ident_start(b) => {
                let start = i;
                while i < bytes.len() && is_ident_continue(bytes[i]) {
                    i += 1;
                }
                let text = &src[start..i];
                let tok = match text {
                    "type" => Tok::KwType,
                    "decl" => Tok::KwDecl,
                    "proc" => Tok::KwProc,
                    "case" => Tok::KwCase,
                    "pcase" => Tok::KwPCase,
                    "flip" => Tok::KwFlip,
                    "send" => Tok::KwSend,
                    "recv" => Tok::KwRecv,
                    "close" => Tok::KwClose,
                    "wait" => Tok::KwWait,
                    "pay" => Tok::KwPay,
                    "get" => Tok::KwGet,
                    "work" => Tok::KwWork,
                    _ => Tok::Ident(text.to_string()),
                };
                push!(tok, start, i);
            }
            _ => {
                return Err(Diagnostic::at(
                    format!("unexpected byte {:?}", b as char),
                    Span::new(i as u32, i as u32 + 1),
                ))
            }
        }
    }
    out.push(Token { tok: Tok::Eof, span: Span::new(bytes.len() as u32, bytes.len() as u32) });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(src: &str) -> Vec<Tok> {
        tokenize(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn numbers_and_dots() {
        assert_eq!(
            toks("b.true b..H 0.6 1/3 2"),
            vec![
                Tok::Ident("b".into()),
                Tok::Dot,
                Tok::Ident("true".into()),
                Tok::Ident("b".into()),
                Tok::DotDot,
                Tok::Ident("H".into()),
                Tok::Number(Rational::new(3, 5)),
                Tok::Number(Rational::new(1, 3)),
                Tok::Number(Rational::from_int(2)),
                Tok::Eof,
            ]
        );
    }

    #[test]
    fn operators() {
        assert_eq!(
            toks("|- |{ |> <| <-> <- -o | => = ^ * % comment\n&"),
            vec![
                Tok::TurnstileZero,
                Tok::TurnstileOpen,
                Tok::PayHead,
                Tok::GetHead,
                Tok::FwdArrow,
                Tok::LArrow,
                Tok::Lolli,
                Tok::Pipe,
                Tok::FatArrow,
                Tok::Eq,
                Tok::Caret,
                Tok::Star,
                Tok::Amp,
                Tok::Eof,
            ]
        );
    }

    #[test]
    fn keywords_and_primed_idents() {
        assert_eq!(
            toks("proc bad' work"),
            vec![Tok::KwProc, Tok::Ident("bad'".into()), Tok::KwWork, Tok::Eof]
        );
    }

    #[test]
    fn lolli_vs_ident() {
        assert_eq!(
            toks("a -o out"),
            vec![Tok::Ident("a".into()), Tok::Lolli, Tok::Ident("out".into()), Tok::Eof]
        );
    }
}
