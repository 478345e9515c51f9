//! Dataset ingestion: TSV parsing, the joint label-vector encoding, the
//! training-split conflict filter, and split management.
//!
//! Dataset files are UTF-8 TSV with three columns:
//! `id ⟨TAB⟩ text ⟨TAB⟩ labels`, where `labels` is a semicolon-separated
//! list of `Aspect:polarity` pairs and may be empty.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{fnv1a64, tokenize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown aspect {name:?}")]
    UnknownAspect { name: String },
    #[error("label-vector entry {value} at index {index} is out of range (0..=3)")]
    ClassOutOfRange { index: usize, value: u8 },
    #[error("document {id:?} has conflicting labels for aspect {aspect:?}")]
    Conflict { id: String, aspect: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

// ── aspects and polarities ────────────────────────────────────────────────

/// Sentiment polarity of an expressed opinion. In the joint label encoding,
/// class index 0 is reserved for N/A (aspect absent); the polarities map to
/// 1, 2 and 3 in the order below.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral];

    /// Joint-encoding class index (1, 2 or 3; 0 means N/A).
    pub fn class_index(self) -> u8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => 2,
            Polarity::Neutral => 3,
        }
    }

    pub fn from_class_index(index: u8) -> Option<Option<Polarity>> {
        match index {
            0 => Some(None),
            1 => Some(Some(Polarity::Positive)),
            2 => Some(Some(Polarity::Negative)),
            3 => Some(Some(Polarity::Neutral)),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Polarity> {
        match s.to_lowercase().as_str() {
            "positive" => Some(Polarity::Positive),
            "negative" => Some(Polarity::Negative),
            "neutral" => Some(Polarity::Neutral),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered list of aspect category names; the position of a name is the
/// model head index for that aspect and is fixed for a model's lifetime.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectCatalog {
    names: Vec<String>,
}

/// Placeholder catalog shipped as the default: 20 categories with
/// "Allgemein" at index 0.
pub const DEFAULT_ASPECTS: [&str; 20] = [
    "Allgemein",
    "Ticketkauf",
    "Service",
    "Puenktlichkeit",
    "Verbindung",
    "Komfort",
    "Sicherheit",
    "Sauberkeit",
    "Personal",
    "Information",
    "Preis",
    "App",
    "Website",
    "Barrierefreiheit",
    "Gastronomie",
    "Gepaeck",
    "WLAN",
    "Lautsprecher",
    "Toiletten",
    "Sonstiges",
];

impl AspectCatalog {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(CorpusError::Parse {
                    line: i + 1,
                    message: "empty aspect name".into(),
                });
            }
            if !seen.insert(name.clone()) {
                return Err(CorpusError::Parse {
                    line: i + 1,
                    message: format!("duplicate aspect name {name:?}"),
                });
            }
        }
        Ok(Self { names })
    }

    /// The default 20-category placeholder catalog.
    pub fn default_catalog() -> Self {
        Self {
            names: DEFAULT_ASPECTS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Loads a catalog file: one aspect name per line, blank lines ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path)?;
        let names = content
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        Self::new(names)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Stable fingerprint of the ordered names, used to refuse loading a
    /// model against a different catalog.
    pub fn hash(&self) -> u64 {
        fnv1a64(self.names.join("\n").as_bytes())
    }
}

// ── documents ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Dev,
    TestSyn,
    TestDia,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "dev" => Some(Split::Dev),
            "test-syn" => Some(Split::TestSyn),
            "test-dia" => Some(Split::TestDia),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::TestSyn => "test-syn",
            Split::TestDia => "test-dia",
        }
    }
}

/// One annotated document. `labels` keeps, per aspect index, the distinct
/// polarities in file order (identical duplicates are dropped at parse
/// time); more than one entry per aspect marks an annotation conflict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub labels: BTreeMap<usize, Vec<Polarity>>,
    pub split: Split,
}

impl Document {
    pub fn new(
        id: String,
        text: String,
        labels: BTreeMap<usize, Vec<Polarity>>,
        split: Split,
    ) -> Self {
        let tokens = tokenize(&text);
        Self {
            id,
            text,
            tokens,
            labels,
            split,
        }
    }

    pub fn has_conflict(&self) -> bool {
        self.labels.values().any(|ps| ps.len() > 1)
    }

    /// Conflict-free label map; a conflicting aspect is an error.
    pub fn label_map(&self, catalog: &AspectCatalog) -> Result<BTreeMap<usize, Polarity>> {
        let mut out = BTreeMap::new();
        for (&aspect, ps) in &self.labels {
            if ps.len() > 1 {
                return Err(CorpusError::Conflict {
                    id: self.id.clone(),
                    aspect: catalog.name(aspect).to_string(),
                });
            }
            out.insert(aspect, ps[0]);
        }
        Ok(out)
    }

    /// Label map that resolves conflicts by keeping the first-listed
    /// polarity. Returns whether any conflict was resolved.
    pub fn label_map_first_listed(&self) -> (BTreeMap<usize, Polarity>, bool) {
        let mut resolved = false;
        let mut out = BTreeMap::new();
        for (&aspect, ps) in &self.labels {
            if ps.len() > 1 {
                resolved = true;
            }
            out.insert(aspect, ps[0]);
        }
        (out, resolved)
    }
}

// ── label vector ──────────────────────────────────────────────────────────

/// The joint target: one class index in {0,1,2,3} per catalog aspect, with
/// 0 meaning the aspect is absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector(pub Vec<u8>);

impl LabelVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Encodes a conflict-free label map: z[idx(a)] = 0 when absent, otherwise
/// the polarity's class index.
pub fn to_label_vector(
    labels: &BTreeMap<usize, Polarity>,
    catalog: &AspectCatalog,
) -> Result<LabelVector> {
    let mut z = vec![0u8; catalog.len()];
    for (&aspect, polarity) in labels {
        if aspect >= catalog.len() {
            return Err(CorpusError::UnknownAspect {
                name: format!("#{aspect}"),
            });
        }
        z[aspect] = polarity.class_index();
    }
    Ok(LabelVector(z))
}

/// Exact inverse of [`to_label_vector`].
pub fn from_label_vector(
    z: &LabelVector,
    catalog: &AspectCatalog,
) -> Result<BTreeMap<usize, Polarity>> {
    let mut out = BTreeMap::new();
    for (index, &value) in z.0.iter().enumerate() {
        if index >= catalog.len() {
            return Err(CorpusError::UnknownAspect {
                name: format!("#{index}"),
            });
        }
        match Polarity::from_class_index(value) {
            None => return Err(CorpusError::ClassOutOfRange { index, value }),
            Some(None) => {}
            Some(Some(p)) => {
                out.insert(index, p);
            }
        }
    }
    Ok(out)
}

// ── parsing and serialization ─────────────────────────────────────────────

fn parse_label_field(
    field: &str,
    catalog: &AspectCatalog,
    lineno: usize,
) -> Result<BTreeMap<usize, Vec<Polarity>>> {
    let mut labels: BTreeMap<usize, Vec<Polarity>> = BTreeMap::new();
    if field.trim().is_empty() {
        return Ok(labels);
    }
    for pair in field.split(';') {
        let pair = pair.trim();
        if pair.is_empty() {
            continue;
        }
        let Some((aspect_name, polarity_name)) = pair.split_once(':') else {
            return Err(CorpusError::Parse {
                line: lineno,
                message: format!("label pair {pair:?} is not Aspect:polarity"),
            });
        };
        let Some(aspect) = catalog.index_of(aspect_name.trim()) else {
            return Err(CorpusError::Parse {
                line: lineno,
                message: format!("unknown aspect {:?}", aspect_name.trim()),
            });
        };
        let Some(polarity) = Polarity::parse(polarity_name.trim()) else {
            return Err(CorpusError::Parse {
                line: lineno,
                message: format!("unknown polarity {:?}", polarity_name.trim()),
            });
        };
        // Identical duplicates are dropped silently; distinct polarities for
        // one aspect are kept in file order for the conflict filter.
        let entry = labels.entry(aspect).or_default();
        if !entry.contains(&polarity) {
            entry.push(polarity);
        }
    }
    Ok(labels)
}

/// Parses a dataset TSV file; every document gets the given split tag.
pub fn parse_dataset(path: &Path, catalog: &AspectCatalog, split: Split) -> Result<Vec<Document>> {
    let content = fs::read_to_string(path)?;
    parse_dataset_str(&content, catalog, split)
}

/// Parses dataset TSV content (see module docs for the format).
pub fn parse_dataset_str(
    content: &str,
    catalog: &AspectCatalog,
    split: Split,
) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let columns: Vec<&str> = line.split('\t').collect();
        if columns.len() != 3 {
            return Err(CorpusError::Parse {
                line: lineno,
                message: format!("expected 3 tab-separated columns, found {}", columns.len()),
            });
        }
        let labels = parse_label_field(columns[2], catalog, lineno)?;
        docs.push(Document::new(
            columns[0].to_string(),
            columns[1].to_string(),
            labels,
            split,
        ));
    }
    Ok(docs)
}

/// Serializes documents back to the TSV format (labels in aspect-index
/// order, so a parse → write cycle reproduces a file up to pair ordering).
pub fn write_dataset(docs: &[Document], catalog: &AspectCatalog) -> String {
    let mut out = String::new();
    for doc in docs {
        let pairs: Vec<String> = doc
            .labels
            .iter()
            .flat_map(|(&aspect, ps)| {
                ps.iter()
                    .map(move |p| format!("{}:{}", catalog.name(aspect), p))
            })
            .collect();
        out.push_str(&format!("{}\t{}\t{}\n", doc.id, doc.text, pairs.join(";")));
    }
    out
}

// ── conflict filter ───────────────────────────────────────────────────────

/// Outcome of [`filter_conflicts`], serialized as JSON for audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConflictReport {
    pub input_count: usize,
    pub dropped: usize,
    /// Aspect name → number of dropped documents in which that aspect
    /// carried two or more distinct polarities.
    pub per_aspect: BTreeMap<String, usize>,
}

/// Drops every *training* document in which some aspect carries two or more
/// distinct polarities. Documents from other splits pass through untouched,
/// guarded by their split tag.
pub fn filter_conflicts(
    docs: Vec<Document>,
    catalog: &AspectCatalog,
) -> (Vec<Document>, ConflictReport) {
    let input_count = docs.len();
    let mut per_aspect: BTreeMap<String, usize> = BTreeMap::new();
    let mut retained = Vec::with_capacity(docs.len());
    let mut dropped = 0;
    for doc in docs {
        if doc.split == Split::Train && doc.has_conflict() {
            for (&aspect, ps) in &doc.labels {
                if ps.len() > 1 {
                    *per_aspect
                        .entry(catalog.name(aspect).to_string())
                        .or_insert(0) += 1;
                }
            }
            dropped += 1;
        } else {
            retained.push(doc);
        }
    }
    (
        retained,
        ConflictReport {
            input_count,
            dropped,
            per_aspect,
        },
    )
}
