//! Hand-checked extraction corpus: braces and keywords hidden in comments
//! and string literals must not change the unit boundaries. The corpus lives
//! in `fixtures/parser_corpus.json` as `{"source", "units"}` records, where
//! `units` lists the expected unit names in order.

use serde::Deserialize;
use sinn_core::extractor::{extract_functions, extract_functions_with, live_brace_counts, ExtractOptions};

#[derive(Deserialize)]
struct Case {
    source: String,
    units: Vec<String>,
}

fn corpus() -> Vec<Case> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/parser_corpus.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn corpus_has_fifty_snippets() {
    let c = corpus();
    assert_eq!(c.len(), 50);
    assert_eq!(c.iter().map(|k| k.units.len()).sum::<usize>(), 62);
    assert_eq!(c.iter().filter(|k| k.units.is_empty()).count(), 1);
}

#[test]
fn corpus_unit_names() {
    for (i, case) in corpus().iter().enumerate() {
        let units = extract_functions(&case.source).unwrap_or_else(|e| panic!("snippet {i}: {e}"));
        let names: Vec<&str> = units.iter().map(|u| u.name.as_str()).collect();
        assert_eq!(names, case.units, "snippet {i}: {}", case.source);
    }
}

#[test]
fn corpus_units_are_brace_balanced() {
    for (i, case) in corpus().iter().enumerate() {
        for u in extract_functions(&case.source).unwrap() {
            let (open, close) = live_brace_counts(&u.code);
            assert!(open >= 1 && open == close, "snippet {i} unit {:?}: {open} vs {close}", u.name);
            assert!(u.code.ends_with('}'));
            assert!(case.source.contains(&u.code));
        }
    }
}

#[test]
fn modifiers_can_be_excluded() {
    let src = "contract A { modifier m { _; } function f() public m {} }";
    let opts = ExtractOptions { include_modifiers: false };
    let names: Vec<String> = extract_functions_with(src, opts).unwrap().into_iter().map(|u| u.name).collect();
    assert_eq!(names, ["f"]);
}

#[test]
fn unbalanced_sources_are_errors() {
    assert!(extract_functions("contract A { function f() public { }").is_err());
    assert!(extract_functions("contract A { function f() public { } } }").is_err());
    assert!(extract_functions("contract A { function f() public { \"}\" }").is_err());
}
