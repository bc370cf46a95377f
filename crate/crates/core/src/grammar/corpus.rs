//! Bundled hand-written queries over a handful of small schemas.

use std::collections::BTreeMap;

use crate::schema::{Schema, SchemaError};

const SCHEMAS: &str = include_str!("../../data/corpus_schemas.jsonl");
const QUERIES: &str = include_str!("../../data/corpus.tsv");
const ALIASES: &str = include_str!("../../data/alias_corpus.tsv");

pub fn schemas() -> Result<BTreeMap<String, Schema>, SchemaError> {
    SCHEMAS
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Schema::from_json(l).map(|s| (s.db_id.clone(), s)))
        .collect()
}

fn rows(text: &'static str) -> impl Iterator<Item = Vec<&'static str>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| l.split('\t').collect())
}

/// `(db_id, query)` pairs, all inside the grammar.
pub fn queries() -> Vec<(&'static str, &'static str)> {
    rows(QUERIES).map(|r| (r[0], r[1])).collect()
}

/// `(db_id, raw query with aliases or bare columns, expected canonical form)`.
pub fn alias_cases() -> Vec<(&'static str, &'static str, &'static str)> {
    rows(ALIASES).map(|r| (r[0], r[1], r[2])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_files_load() {
        let s = schemas().unwrap();
        assert_eq!(s.len(), 9);
        assert!(queries().len() >= 50);
        for (db, _) in queries() {
            assert!(s.contains_key(db), "{db}");
        }
        for (db, _, _) in alias_cases() {
            assert!(s.contains_key(db), "{db}");
        }
    }
}
