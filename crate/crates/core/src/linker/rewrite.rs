//! Token-level rewriting of C sources against an address map.
//!
//! Every call to a mapped name becomes a call through a cast function
//! address: `strcmp(a, b)` → `((int (*)())0x7f1e438179a0ULL)(a, b)`. The
//! unprototyped pointer type accepts the call-site arguments unchanged.
//!
//! A mapped identifier is left alone when it
//! - sits inside a comment, string or character literal, or a preprocessor line;
//! - is not followed by `(` (taking a function's address is not rewritten);
//! - follows `.` or `->` (member access);
//! - names a function declared or defined at file scope (the token after a
//!   type at brace depth 0);
//! - names a function the source defines itself, which shadows the map.

use std::collections::HashSet;

use super::address_map::AddressMap;
use super::LinkError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Space,
    Comment,
    Directive,
    Ident,
    Number,
    Str,
    Char,
    Punct,
}

#[derive(Debug, Clone, Copy)]
struct Token {
    kind: Kind,
    start: usize,
    end: usize,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    at_line_start: bool,
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_ident_continue(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

impl<'a> Lexer<'a> {
    fn new(src: &'a [u8]) -> Self {
        Self {
            src,
            pos: 0,
            line: 1,
            at_line_start: true,
        }
    }

    fn peek(&self, ahead: usize) -> Option<u8> {
        self.src.get(self.pos + ahead).copied()
    }

    fn bump(&mut self) -> u8 {
        let b = self.src[self.pos];
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
        }
        b
    }

    fn unbalanced(&self, what: &str, line: usize) -> LinkError {
        LinkError::UnbalancedSource {
            line,
            what: what.to_string(),
        }
    }

    fn tokens(mut self) -> Result<Vec<Token>, LinkError> {
        let mut out = Vec::new();
        while self.pos < self.src.len() {
            let start = self.pos;
            let line = self.line;
            let b = self.src[self.pos];
            let kind = match b {
                b' ' | b'\t' | b'\r' | b'\n' | 0x0b | 0x0c => {
                    while matches!(self.peek(0), Some(b' ' | b'\t' | b'\r' | b'\n' | 0x0b | 0x0c)) {
                        if self.bump() == b'\n' {
                            self.at_line_start = true;
                        }
                    }
                    out.push(Token {
                        kind: Kind::Space,
                        start,
                        end: self.pos,
                    });
                    continue;
                }
                b'/' if self.peek(1) == Some(b'/') => {
                    while self.peek(0).is_some_and(|c| c != b'\n') {
                        self.bump();
                    }
                    Kind::Comment
                }
                b'/' if self.peek(1) == Some(b'*') => {
                    self.pos += 2;
                    loop {
                        match self.peek(0) {
                            None => return Err(self.unbalanced("unterminated block comment", line)),
                            Some(b'*') if self.peek(1) == Some(b'/') => {
                                self.pos += 2;
                                break;
                            }
                            Some(_) => {
                                self.bump();
                            }
                        }
                    }
                    Kind::Comment
                }
                b'#' if self.at_line_start => {
                    // directive runs to the first newline without a backslash continuation
                    while let Some(c) = self.peek(0) {
                        if c == b'\n' {
                            break;
                        }
                        if c == b'\\' && self.peek(1) == Some(b'\n') {
                            self.bump();
                        }
                        self.bump();
                    }
                    Kind::Directive
                }
                b'"' | b'\'' => {
                    self.bump();
                    loop {
                        match self.peek(0) {
                            None | Some(b'\n') => {
                                let what = if b == b'"' {
                                    "unterminated string literal"
                                } else {
                                    "unterminated character literal"
                                };
                                return Err(self.unbalanced(what, line));
                            }
                            Some(b'\\') => {
                                self.bump();
                                if self.peek(0).is_some() {
                                    self.bump();
                                }
                            }
                            Some(c) => {
                                self.bump();
                                if c == b {
                                    break;
                                }
                            }
                        }
                    }
                    if b == b'"' {
                        Kind::Str
                    } else {
                        Kind::Char
                    }
                }
                c if c.is_ascii_digit() || (c == b'.' && self.peek(1).is_some_and(|d| d.is_ascii_digit())) => {
                    // preprocessing number: digits, letters, '.', '_' and signed exponents
                    self.bump();
                    while let Some(c) = self.peek(0) {
                        let signed_exponent =
                            matches!(c, b'+' | b'-') && matches!(self.src[self.pos - 1], b'e' | b'E' | b'p' | b'P');
                        if !(signed_exponent || is_ident_continue(c) || c == b'.') {
                            break;
                        }
                        self.bump();
                    }
                    Kind::Number
                }
                c if is_ident_start(c) => {
                    while self.peek(0).is_some_and(is_ident_continue) {
                        self.bump();
                    }
                    Kind::Ident
                }
                b'-' if self.peek(1) == Some(b'>') => {
                    self.pos += 2;
                    Kind::Punct
                }
                _ => {
                    self.bump();
                    Kind::Punct
                }
            };
            self.at_line_start = false;
            out.push(Token {
                kind,
                start,
                end: self.pos,
            });
        }
        Ok(out)
    }
}

fn significant(t: &Token) -> bool {
    !matches!(t.kind, Kind::Space | Kind::Comment | Kind::Directive)
}

/// Token index of the next significant token after `i`.
fn next_significant(tokens: &[Token], i: usize) -> Option<usize> {
    (i + 1..tokens.len()).find(|&j| significant(&tokens[j]))
}

/// Replacement text for a call through `address` returning `return_type`.
pub fn call_expression(return_type: &str, address: u64) -> String {
    format!("(({return_type} (*)())0x{address:x}ULL)")
}

/// Names of functions defined (with a body) at file scope.
fn local_definitions(src: &[u8], tokens: &[Token]) -> HashSet<Vec<u8>> {
    let mut defs = HashSet::new();
    let mut depth = 0usize;
    let mut prev: Option<usize> = None;
    for (i, t) in tokens.iter().enumerate() {
        if !significant(t) {
            continue;
        }
        let text = &src[t.start..t.end];
        if t.kind == Kind::Punct {
            match text {
                b"{" => depth += 1,
                b"}" => depth = depth.saturating_sub(1),
                _ => {}
            }
        }
        if t.kind == Kind::Ident && depth == 0 && prev.is_some_and(|p| looks_like_type(src, &tokens[p])) {
            if let Some(open) = next_significant(tokens, i).filter(|&j| &src[tokens[j].start..tokens[j].end] == b"(") {
                if let Some(close) = matching_paren(src, tokens, open) {
                    if next_significant(tokens, close).is_some_and(|j| &src[tokens[j].start..tokens[j].end] == b"{") {
                        defs.insert(text.to_vec());
                    }
                }
            }
        }
        prev = Some(i);
    }
    defs
}

fn matching_paren(src: &[u8], tokens: &[Token], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (j, t) in tokens.iter().enumerate().skip(open) {
        if t.kind != Kind::Punct {
            continue;
        }
        match &src[t.start..t.end] {
            b"(" => depth += 1,
            b")" => {
                depth -= 1;
                if depth == 0 {
                    return Some(j);
                }
            }
            _ => {}
        }
    }
    None
}

fn looks_like_type(src: &[u8], t: &Token) -> bool {
    t.kind == Kind::Ident || (t.kind == Kind::Punct && &src[t.start..t.end] == b"*")
}

pub fn rewrite_source(src: &[u8], map: &AddressMap) -> Result<Vec<u8>, LinkError> {
    let tokens = Lexer::new(src).tokens()?;
    let shadowed = local_definitions(src, &tokens);

    let mut out = Vec::with_capacity(src.len());
    let mut depth = 0usize;
    let mut prev: Option<usize> = None;
    for (i, t) in tokens.iter().enumerate() {
        let text = &src[t.start..t.end];
        if t.kind == Kind::Punct {
            match text {
                b"{" => depth += 1,
                b"}" => depth = depth.saturating_sub(1),
                _ => {}
            }
        }
        let replacement = (t.kind == Kind::Ident)
            .then(|| std::str::from_utf8(text).ok())
            .flatten()
            .and_then(|name| map.get(name))
            .filter(|_| !shadowed.contains(text))
            .filter(|_| next_significant(&tokens, i).is_some_and(|j| &src[tokens[j].start..tokens[j].end] == b"("))
            .filter(|_| {
                let Some(p) = prev else { return true };
                let ptext = &src[tokens[p].start..tokens[p].end];
                let member = ptext == b"." || ptext == b"->";
                let declaration = depth == 0 && looks_like_type(src, &tokens[p]);
                !member && !declaration
            });
        match replacement {
            Some(entry) => out.extend_from_slice(call_expression(&entry.return_type, entry.address).as_bytes()),
            None => out.extend_from_slice(text),
        }
        if significant(t) {
            prev = Some(i);
        }
    }
    Ok(out)
}
