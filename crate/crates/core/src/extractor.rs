//! Function-level extraction from Solidity source.
//!
//! A lexical pre-pass marks which bytes are live code (outside `//` and
//! `/* */` comments and outside `'..'` / `".."` literals with backslash
//! escapes). Brace matching and keyword detection then only look at live
//! bytes. A unit starts at one of `function`, `constructor`, `fallback`,
//! `receive`, `modifier` and runs through the brace that closes its body;
//! header-only declarations ending in `;` are skipped. Inline `assembly`
//! blocks are ordinary brace groups inside a body.

use serde::{Deserialize, Serialize};

use crate::dataset::SourceContract;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionUnit {
    /// Empty for constructors, fallback and receive functions.
    pub name: String,
    pub code: String,
    pub ordinal: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct ExtractOptions {
    pub include_modifiers: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            include_modifiers: true,
        }
    }
}

const KEYWORDS: [&str; 5] = ["function", "constructor", "fallback", "receive", "modifier"];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Lex {
    Code,
    LineComment,
    BlockComment,
    Str(u8),
}

/// `live[i]` is true when byte `i` is code rather than comment or literal
/// contents. Quote characters themselves count as non-live.
fn live_mask(src: &[u8]) -> Vec<bool> {
    let mut live = vec![false; src.len()];
    let mut state = Lex::Code;
    let mut i = 0;
    while i < src.len() {
        let b = src[i];
        match state {
            Lex::Code => match b {
                b'/' if src.get(i + 1) == Some(&b'/') => {
                    state = Lex::LineComment;
                    i += 1;
                }
                b'/' if src.get(i + 1) == Some(&b'*') => {
                    state = Lex::BlockComment;
                    i += 1;
                }
                b'"' | b'\'' => state = Lex::Str(b),
                _ => live[i] = true,
            },
            Lex::LineComment => {
                if b == b'\n' {
                    state = Lex::Code;
                    live[i] = true;
                }
            }
            Lex::BlockComment => {
                if b == b'*' && src.get(i + 1) == Some(&b'/') {
                    state = Lex::Code;
                    i += 1;
                }
            }
            Lex::Str(q) => {
                if b == b'\\' {
                    i += 1;
                } else if b == q {
                    state = Lex::Code;
                }
            }
        }
        i += 1;
    }
    live
}

/// Maps each live `{` to the offset of its matching `}`.
fn match_braces(src: &[u8], live: &[bool]) -> Result<Vec<Option<usize>>> {
    let mut partner = vec![None; src.len()];
    let mut stack = Vec::new();
    for (i, &b) in src.iter().enumerate() {
        if !live[i] {
            continue;
        }
        match b {
            b'{' => stack.push(i),
            b'}' => {
                let open = stack.pop().ok_or(Error::UnmatchedCloseBrace { offset: i })?;
                partner[open] = Some(i);
            }
            _ => {}
        }
    }
    match stack.pop() {
        Some(offset) => Err(Error::UnclosedBrace { offset }),
        None => Ok(partner),
    }
}

fn is_ident(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$'
}

fn keyword_at(src: &[u8], live: &[bool], i: usize, opts: ExtractOptions) -> Option<&'static str> {
    if !live[i] || (i > 0 && live[i - 1] && is_ident(src[i - 1])) {
        return None;
    }
    KEYWORDS.into_iter().find(|kw| {
        let end = i + kw.len();
        (opts.include_modifiers || *kw != "modifier")
            && src.get(i..end) == Some(kw.as_bytes())
            && live[i..end].iter().all(|&l| l)
            && !src.get(end).is_some_and(|&b| is_ident(b))
    })
}

fn read_name(src: &[u8], live: &[bool], mut j: usize) -> String {
    while j < src.len() && (!live[j] || src[j].is_ascii_whitespace()) {
        j += 1;
    }
    let start = j;
    while j < src.len() && live[j] && is_ident(src[j]) {
        j += 1;
    }
    String::from_utf8_lossy(&src[start..j]).into_owned()
}

pub fn extract_functions(source: &str) -> Result<Vec<FunctionUnit>> {
    extract_functions_with(source, ExtractOptions::default())
}

pub fn extract_functions_with(source: &str, opts: ExtractOptions) -> Result<Vec<FunctionUnit>> {
    let src = source.as_bytes();
    let live = live_mask(src);
    let partner = match_braces(src, &live)?;
    let mut units = Vec::new();
    let mut i = 0;
    while i < src.len() {
        let Some(kw) = keyword_at(src, &live, i, opts) else {
            i += 1;
            continue;
        };
        let header = i + kw.len();
        let mut depth = 0i64;
        let mut j = header;
        let mut next = header;
        while j < src.len() {
            if live[j] {
                match src[j] {
                    b'(' => depth += 1,
                    b')' => depth -= 1,
                    b';' if depth <= 0 => {
                        next = j + 1;
                        break;
                    }
                    b'{' if depth <= 0 => {
                        let close = partner[j].expect("braces verified balanced");
                        let name = match kw {
                            "function" | "modifier" => read_name(src, &live, header),
                            _ => String::new(),
                        };
                        units.push(FunctionUnit {
                            name,
                            code: source[i..=close].to_owned(),
                            ordinal: units.len(),
                        });
                        next = close + 1;
                        break;
                    }
                    // Header ran into the end of an enclosing block.
                    b'}' if depth <= 0 => break,
                    _ => {}
                }
            }
            j += 1;
        }
        i = next.max(header);
    }
    Ok(units)
}

/// Function units for a contract; a source without any function becomes a
/// single unnamed unit holding the whole text.
pub fn contract_to_units(contract: &SourceContract) -> Result<Vec<FunctionUnit>> {
    contract_to_units_with(contract, ExtractOptions::default())
}

pub fn contract_to_units_with(contract: &SourceContract, opts: ExtractOptions) -> Result<Vec<FunctionUnit>> {
    let units = extract_functions_with(&contract.source, opts)?;
    if units.is_empty() {
        return Ok(vec![FunctionUnit {
            name: String::new(),
            code: contract.source.clone(),
            ordinal: 0,
        }]);
    }
    Ok(units)
}

/// Counts live `{` and `}` in `code`, with the same lexical rules the
/// extractor applies.
pub fn live_brace_counts(code: &str) -> (usize, usize) {
    let src = code.as_bytes();
    let live = live_mask(src);
    let open = src.iter().zip(&live).filter(|(b, l)| **l && **b == b'{').count();
    let close = src.iter().zip(&live).filter(|(b, l)| **l && **b == b'}').count();
    (open, close)
}
