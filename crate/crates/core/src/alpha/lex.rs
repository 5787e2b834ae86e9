//! Tokenizer for alpha expressions. Every token carries its byte offset so
//! parse errors can point into the source.

use super::AlphaError;

#[derive(Debug, Clone, PartialEq)]
pub enum TokKind {
    Number(f64),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    Ne,
    Question,
    Colon,
    Eof,
}

impl TokKind {
    pub fn describe(&self) -> String {
        match self {
            TokKind::Number(v) => format!("number `{v}`"),
            TokKind::Ident(s) => format!("`{s}`"),
            TokKind::Eof => "end of input".into(),
            TokKind::LParen => "`(`".into(),
            TokKind::RParen => "`)`".into(),
            TokKind::Comma => "`,`".into(),
            TokKind::Plus => "`+`".into(),
            TokKind::Minus => "`-`".into(),
            TokKind::Star => "`*`".into(),
            TokKind::Slash => "`/`".into(),
            TokKind::Caret => "`^`".into(),
            TokKind::Lt => "`<`".into(),
            TokKind::Le => "`<=`".into(),
            TokKind::Gt => "`>`".into(),
            TokKind::Ge => "`>=`".into(),
            TokKind::EqEq => "`==`".into(),
            TokKind::Ne => "`!=`".into(),
            TokKind::Question => "`?`".into(),
            TokKind::Colon => "`:`".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tok {
    pub kind: TokKind,
    pub offset: usize,
}

pub fn lex(src: &str) -> Result<Vec<Tok>, AlphaError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let start = i;
        let kind = match b {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'(' => TokKind::LParen,
            b')' => TokKind::RParen,
            b',' => TokKind::Comma,
            b'+' => TokKind::Plus,
            b'-' => TokKind::Minus,
            b'*' => TokKind::Star,
            b'/' => TokKind::Slash,
            b'^' => TokKind::Caret,
            b'?' => TokKind::Question,
            b':' => TokKind::Colon,
            b'<' if bytes.get(i + 1) == Some(&b'=') => {
                i += 1;
                TokKind::Le
            }
            b'<' => TokKind::Lt,
            b'>' if bytes.get(i + 1) == Some(&b'=') => {
                i += 1;
                TokKind::Ge
            }
            b'>' => TokKind::Gt,
            b'=' if bytes.get(i + 1) == Some(&b'=') => {
                i += 1;
                TokKind::EqEq
            }
            b'!' if bytes.get(i + 1) == Some(&b'=') => {
                i += 1;
                TokKind::Ne
            }
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && matches!(bytes[i], b'0'..=b'9' | b'.') {
                    i += 1;
                }
                // Exponent suffix: 1e-3, 2.5E+10.
                if i < bytes.len()
                    && matches!(bytes[i], b'e' | b'E')
                    && bytes
                        .get(i + 1 + matches!(bytes.get(i + 1), Some(b'+') | Some(b'-')) as usize)
                        .is_some_and(u8::is_ascii_digit)
                {
                    i += 2;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| AlphaError::Syntax {
                    offset: start,
                    found: format!("`{text}`"),
                    expected: "a number".into(),
                })?;
                toks.push(Tok {
                    kind: TokKind::Number(value),
                    offset: start,
                });
                continue;
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while i < bytes.len() && matches!(bytes[i], b'a'..=b'z' | b'A'..=b'Z' | b'0'..=b'9' | b'_')
                {
                    i += 1;
                }
                toks.push(Tok {
                    kind: TokKind::Ident(src[start..i].to_string()),
                    offset: start,
                });
                continue;
            }
            _ => {
                let ch = src[start..].chars().next().unwrap();
                return Err(AlphaError::Syntax {
                    offset: start,
                    found: format!("`{ch}`"),
                    expected: "an operator, number, or identifier".into(),
                });
            }
        };
        i += 1;
        toks.push(Tok { kind, offset: start });
    }
    toks.push(Tok {
        kind: TokKind::Eof,
        offset: src.len(),
    });
    Ok(toks)
}
