//! Signature descriptors: `ret(args)` strings that say how to marshal a call.
//!
//! | code | position | meaning                                         | words |
//! |------|----------|-------------------------------------------------|-------|
//! | `i`  | ret/arg  | signed 64-bit word                              | 1     |
//! | `v`  | ret      | no return value                                 | -     |
//! | `s`  | arg      | NUL-terminated byte string, passed by address   | 1     |
//! | `b`  | arg      | byte buffer, passed as (address, length)        | 2     |

use std::fmt;
use std::str::FromStr;

use crate::native::CALL_WORDS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReturnKind {
    Word,
    Void,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArgKind {
    Word,
    Str,
    Buf,
}

impl ArgKind {
    pub fn code(self) -> char {
        match self {
            ArgKind::Word => 'i',
            ArgKind::Str => 's',
            ArgKind::Buf => 'b',
        }
    }

    pub fn words(self) -> usize {
        match self {
            ArgKind::Word | ArgKind::Str => 1,
            ArgKind::Buf => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignatureDescriptor {
    ret: ReturnKind,
    args: Vec<ArgKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad signature descriptor {text:?}: {reason}")]
pub struct DescriptorError {
    pub text: String,
    pub reason: String,
}

impl SignatureDescriptor {
    pub fn new(ret: ReturnKind, args: Vec<ArgKind>) -> Result<Self, DescriptorError> {
        let d = Self { ret, args };
        if d.word_count() > CALL_WORDS {
            return Err(DescriptorError {
                text: d.to_string(),
                reason: format!("{} argument words exceed the limit of {CALL_WORDS}", d.word_count()),
            });
        }
        Ok(d)
    }

    pub fn ret(&self) -> ReturnKind {
        self.ret
    }

    pub fn args(&self) -> &[ArgKind] {
        &self.args
    }

    pub fn word_count(&self) -> usize {
        self.args.iter().map(|a| a.words()).sum()
    }

    /// C spelling of the return type, as published in address maps.
    pub fn c_return_type(&self) -> &'static str {
        match self.ret {
            ReturnKind::Word => "long",
            ReturnKind::Void => "void",
        }
    }

    pub fn arg_codes(&self) -> String {
        self.args.iter().map(|a| a.code()).collect()
    }
}

impl fmt::Display for SignatureDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ret = match self.ret {
            ReturnKind::Word => 'i',
            ReturnKind::Void => 'v',
        };
        write!(f, "{ret}({})", self.arg_codes())
    }
}

impl FromStr for SignatureDescriptor {
    type Err = DescriptorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| DescriptorError {
            text: s.to_string(),
            reason: reason.to_string(),
        };
        let mut chars = s.chars();
        let ret = match chars.next() {
            Some('i') => ReturnKind::Word,
            Some('v') => ReturnKind::Void,
            Some(_) => return Err(err("return kind must be 'i' or 'v'")),
            None => return Err(err("empty descriptor")),
        };
        if chars.next() != Some('(') {
            return Err(err("expected '(' after return kind"));
        }
        let rest: &str = chars.as_str();
        let inner = rest.strip_suffix(')').ok_or_else(|| err("expected trailing ')'"))?;
        let args = inner
            .chars()
            .map(|c| match c {
                'i' => Ok(ArgKind::Word),
                's' => Ok(ArgKind::Str),
                'b' => Ok(ArgKind::Buf),
                _ => Err(err(&format!("unknown argument kind {c:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        SignatureDescriptor::new(ret, args).map_err(|e| DescriptorError {
            text: s.to_string(),
            ..e
        })
    }
}

/// One call argument as supplied by a client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArgValue {
    Int(i64),
    Str(Vec<u8>),
    Buf(Vec<u8>),
}

impl ArgValue {
    pub fn str(s: &str) -> Self {
        ArgValue::Str(s.as_bytes().to_vec())
    }

    pub fn kind(&self) -> ArgKind {
        match self {
            ArgValue::Int(_) => ArgKind::Word,
            ArgValue::Str(_) => ArgKind::Str,
            ArgValue::Buf(_) => ArgKind::Buf,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_sum_signature() {
        let d: SignatureDescriptor = "i(ii)".parse().unwrap();
        assert_eq!(d.ret(), ReturnKind::Word);
        assert_eq!(d.args(), &[ArgKind::Word, ArgKind::Word]);
        assert_eq!(d.word_count(), 2);
        assert_eq!(d.to_string(), "i(ii)");
    }

    #[test]
    fn buffers_count_two_words() {
        let d: SignatureDescriptor = "v(bb)".parse().unwrap();
        assert_eq!(d.word_count(), 4);
        assert!("v(bbi)".parse::<SignatureDescriptor>().is_err());
        assert!("i(iiiii)".parse::<SignatureDescriptor>().is_err());
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["", "i", "x(i)", "i(", "i(i", "i)i(", "i(f)", "v(s)x", "s(i)"] {
            assert!(bad.parse::<SignatureDescriptor>().is_err(), "{bad}");
        }
        assert!("v()".parse::<SignatureDescriptor>().is_ok());
    }

    proptest! {
        #[test]
        fn display_parse_roundtrip(ret in prop_oneof![Just('i'), Just('v')],
                                   args in "[isb]{0,4}") {
            let text = format!("{ret}({args})");
            match text.parse::<SignatureDescriptor>() {
                Ok(d) => {
                    prop_assert!(d.word_count() <= CALL_WORDS);
                    prop_assert_eq!(d.to_string(), text);
                }
                Err(_) => {
                    let words: usize = args.chars().map(|c| if c == 'b' { 2 } else { 1 }).sum();
                    prop_assert!(words > CALL_WORDS);
                }
            }
        }
    }
}
