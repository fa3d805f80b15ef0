//! Dataset parsing: SNAP edge lists into posting-list updates, and the
//! s-gram splitter used for fuzzy name search.

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {reason}: {content:?}")]
    MalformedLine { line: usize, content: String, reason: String },
    #[error("name {0:?} is too short for the gram length")]
    NameTooShort(String),
    #[error("pattern {0:?} is shorter than the gram length")]
    PatternTooShort(String),
    #[error("gram length must be at least 2, got {0}")]
    InvalidGramLength(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// Relationship type of a dataset's edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeType {
    Friendship,
    Exchange,
    Share,
}

impl EdgeType {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::Friendship => "friendship",
            EdgeType::Exchange => "exchange",
            EdgeType::Share => "share",
        }
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EdgeType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "friendship" => Ok(EdgeType::Friendship),
            "exchange" => Ok(EdgeType::Exchange),
            "share" => Ok(EdgeType::Share),
            other => Err(format!("unknown edge type {other:?}")),
        }
    }
}

/// Posting-list keyword of a vertex's outgoing edges of one type.
pub fn edge_keyword(id_out: u64, edge_type: EdgeType) -> String {
    format!("{id_out}:{edge_type}")
}

/// One posting entry: `id_in` with `weight` under `id_out:type`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeTriple {
    pub keyword: String,
    pub id_in: u64,
    pub weight: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weights {
    /// Every edge weighs 1.
    Unit,
    /// Weights in `1..=10`, a function of the seed and the unordered pair,
    /// so both directions of an undirected edge agree.
    Seeded(u64),
}

impl Weights {
    pub fn weight(self, a: u64, b: u64) -> u32 {
        match self {
            Weights::Unit => 1,
            Weights::Seeded(seed) => {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let mut buf = [0u8; 24];
                buf[..8].copy_from_slice(&seed.to_be_bytes());
                buf[8..16].copy_from_slice(&lo.to_be_bytes());
                buf[16..].copy_from_slice(&hi.to_be_bytes());
                crypto::hash_h1(&buf) % 10 + 1
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnapOptions {
    pub edge_type: EdgeType,
    pub directed: bool,
    pub weights: Weights,
}

impl Default for SnapOptions {
    fn default() -> Self {
        SnapOptions {
            edge_type: EdgeType::Friendship,
            directed: false,
            weights: Weights::Unit,
        }
    }
}

/// Parsed edge list plus the dataset shape.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SnapGraph {
    pub triples: Vec<EdgeTriple>,
    pub vertices: usize,
    /// Distinct edges as the file defines them: unordered pairs for
    /// undirected data.
    pub edges: usize,
}

fn malformed(line: usize, content: &str, reason: &str) -> IngestError {
    IngestError::MalformedLine {
        line,
        content: content.to_owned(),
        reason: reason.to_owned(),
    }
}

/// Parses whitespace-separated `from to` pairs, skipping blank lines and
/// `#` comments. Undirected data emits both directions; repeated edges are
/// emitted once.
pub fn parse_snap(reader: impl BufRead, opts: SnapOptions) -> Result<SnapGraph> {
    let mut seen_directed: HashSet<(u64, u64)> = HashSet::new();
    let mut edges: HashSet<(u64, u64)> = HashSet::new();
    let mut vertices: HashSet<u64> = HashSet::new();
    let mut triples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(malformed(lineno, &line, "expected two vertex ids"));
        };
        let a: u64 = a.parse().map_err(|_| malformed(lineno, &line, "vertex id is not an unsigned integer"))?;
        let b: u64 = b.parse().map_err(|_| malformed(lineno, &line, "vertex id is not an unsigned integer"))?;
        vertices.insert(a);
        vertices.insert(b);
        edges.insert(if opts.directed || a <= b { (a, b) } else { (b, a) });
        let weight = opts.weights.weight(a, b);
        let mut emit = |out: u64, inn: u64| {
            if seen_directed.insert((out, inn)) {
                triples.push(EdgeTriple {
                    keyword: edge_keyword(out, opts.edge_type),
                    id_in: inn,
                    weight,
                });
            }
        };
        emit(a, b);
        if !opts.directed {
            emit(b, a);
        }
    }
    Ok(SnapGraph {
        triples,
        vertices: vertices.len(),
        edges: edges.len(),
    })
}

pub fn parse_snap_file(path: impl AsRef<Path>, opts: SnapOptions) -> Result<SnapGraph> {
    let file = std::fs::File::open(path)?;
    parse_snap(std::io::BufReader::new(file), opts)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameRecord {
    pub id: u64,
    pub name: String,
}

/// One `id<TAB>name` per line; blank lines and `#` comments are skipped.
pub fn parse_names(reader: impl BufRead) -> Result<Vec<NameRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (id, name) = line
            .split_once('\t')
            .ok_or_else(|| malformed(lineno, &line, "expected id<TAB>name"))?;
        let id: u64 = id
            .trim()
            .parse()
            .map_err(|_| malformed(lineno, &line, "vertex id is not an unsigned integer"))?;
        let name = name.trim();
        if fold(name).is_empty() {
            return Err(malformed(lineno, &line, "empty name"));
        }
        out.push(NameRecord { id, name: name.to_owned() });
    }
    Ok(out)
}

pub fn parse_names_file(path: impl AsRef<Path>) -> Result<Vec<NameRecord>> {
    let file = std::fs::File::open(path)?;
    parse_names(std::io::BufReader::new(file))
}

/// A fixed-length substring and its 1-based position.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SGram {
    pub sub: String,
    pub pos: u32,
}

/// Case folding applied to stored names and to query patterns.
pub fn fold(s: &str) -> String {
    s.to_lowercase()
}

fn windows(chars: &[char], s: usize) -> impl Iterator<Item = String> + '_ {
    chars.windows(s).map(|w| w.iter().collect())
}

/// Folds the name, wraps it in `#`...`$` and emits every length-`s`
/// window with its 1-based position.
pub fn split_name(name: &str, s: usize) -> Result<Vec<SGram>> {
    if s < 2 {
        return Err(IngestError::InvalidGramLength(s));
    }
    let folded = fold(name);
    let chars: Vec<char> = std::iter::once('#').chain(folded.chars()).chain(std::iter::once('$')).collect();
    if folded.is_empty() || chars.len() < s {
        return Err(IngestError::NameTooShort(name.to_owned()));
    }
    Ok(windows(&chars, s)
        .zip(1u32..)
        .map(|(sub, pos)| SGram { sub, pos })
        .collect())
}

/// Grams of a query pattern: the first window anchors, every later window
/// is paired with its offset from the anchor. Patterns get no sentinels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GramQuery {
    pub anchor: String,
    pub companions: Vec<(String, i32)>,
}

pub fn query_grams(pattern: &str, s: usize) -> Result<GramQuery> {
    if s < 2 {
        return Err(IngestError::InvalidGramLength(s));
    }
    let chars: Vec<char> = fold(pattern).chars().collect();
    if chars.len() < s {
        return Err(IngestError::PatternTooShort(pattern.to_owned()));
    }
    let mut grams = windows(&chars, s);
    let anchor = grams.next().expect("at least one window");
    Ok(GramQuery {
        anchor,
        companions: grams.zip(1i32..).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str, opts: SnapOptions) -> Result<SnapGraph> {
        parse_snap(text.as_bytes(), opts)
    }

    fn triple(w: &str, id: u64, weight: u32) -> EdgeTriple {
        EdgeTriple {
            keyword: w.into(),
            id_in: id,
            weight,
        }
    }

    #[test]
    fn undirected_line_emits_both_directions() {
        let g = parse("1 2\n", SnapOptions::default()).unwrap();
        assert_eq!(g.triples, vec![triple("1:friendship", 2, 1), triple("2:friendship", 1, 1)]);
        assert_eq!((g.vertices, g.edges), (2, 1));
    }

    #[test]
    fn directed_and_typed() {
        let opts = SnapOptions {
            edge_type: EdgeType::Exchange,
            directed: true,
            ..Default::default()
        };
        let g = parse("# header\n1\t2\n2 1\n1 2\n", opts).unwrap();
        assert_eq!(g.triples, vec![triple("1:exchange", 2, 1), triple("2:exchange", 1, 1)]);
        assert_eq!(g.edges, 2);
    }

    #[test]
    fn repeated_undirected_edges_are_deduplicated() {
        let g = parse("1 2\n2 1\n", SnapOptions::default()).unwrap();
        assert_eq!(g.triples.len(), 2);
        assert_eq!(g.edges, 1);
    }

    #[test]
    fn comment_only_file_is_empty() {
        let g = parse("# a\n# b\n\n", SnapOptions::default()).unwrap();
        assert!(g.triples.is_empty());
    }

    #[test]
    fn malformed_lines_report_their_number() {
        for bad in ["1 2\n1 x\n", "1 2\n3\n", "1 2\n1 2 3\n", "1 2\n-1 2\n"] {
            match parse(bad, SnapOptions::default()) {
                Err(IngestError::MalformedLine { line, .. }) => assert_eq!(line, 2),
                other => panic!("{bad:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn seeded_weights_are_symmetric_and_bounded() {
        let opts = SnapOptions {
            weights: Weights::Seeded(7),
            ..Default::default()
        };
        let text: String = (0..200).map(|i| format!("{i} {}\n", i * 7 + 1)).collect();
        let g = parse(&text, opts).unwrap();
        for pair in g.triples.chunks(2) {
            assert_eq!(pair[0].weight, pair[1].weight);
            assert!((1..=10).contains(&pair[0].weight));
        }
        let distinct: HashSet<u32> = g.triples.iter().map(|t| t.weight).collect();
        assert_eq!(distinct.len(), 10);
        assert_eq!(parse(&text, opts).unwrap(), g);
    }

    #[test]
    fn names_file() {
        let names = parse_names("1\tHarry\n# c\n5\tSasha Braus\n".as_bytes()).unwrap();
        assert_eq!(names[1], NameRecord { id: 5, name: "Sasha Braus".into() });
        assert!(matches!(
            parse_names("1 Harry\n".as_bytes()),
            Err(IngestError::MalformedLine { line: 1, .. })
        ));
        assert!(parse_names("1\t  \n".as_bytes()).is_err());
    }

    fn grams(v: &[(&str, u32)]) -> Vec<SGram> {
        v.iter().map(|(s, p)| SGram { sub: s.to_string(), pos: *p }).collect()
    }

    #[test]
    fn split_harry() {
        assert_eq!(
            split_name("Harry", 2).unwrap(),
            grams(&[("#h", 1), ("ha", 2), ("ar", 3), ("rr", 4), ("ry", 5), ("y$", 6)])
        );
    }

    #[test]
    fn split_edge_cases() {
        assert_eq!(split_name("ab", 4).unwrap(), grams(&[("#ab$", 1)]));
        assert!(matches!(split_name("", 2), Err(IngestError::NameTooShort(_))));
        assert!(matches!(split_name("ab", 5), Err(IngestError::NameTooShort(_))));
        assert!(matches!(split_name("ab", 1), Err(IngestError::InvalidGramLength(1))));
    }

    #[test]
    fn query_gram_offsets() {
        let q = query_grams("Harry", 2).unwrap();
        assert_eq!(q.anchor, "ha");
        assert_eq!(
            q.companions,
            vec![("ar".to_string(), 1), ("rr".to_string(), 2), ("ry".to_string(), 3)]
        );
        assert!(query_grams("ha", 2).unwrap().companions.is_empty());
        assert!(matches!(query_grams("h", 2), Err(IngestError::PatternTooShort(_))));
    }

    proptest! {
        #[test]
        fn gram_count_and_positions(name in "[a-zA-Zé ]{1,20}", s in 2usize..5) {
            let folded_len = fold(&name).chars().count();
            match split_name(&name, s) {
                Ok(g) => {
                    prop_assert_eq!(g.len(), folded_len + 2 - s + 1);
                    for (i, gram) in g.iter().enumerate() {
                        prop_assert_eq!(gram.pos as usize, i + 1);
                        prop_assert_eq!(gram.sub.chars().count(), s);
                    }
                }
                Err(_) => prop_assert!(folded_len + 2 < s),
            }
        }
    }
}
