//! Corpora: vocabulary, sparse per-document counts and an aligned covariate
//! table, plus the line-delimited document and CSV covariate file formats.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(terms: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary term '{t}'")));
            }
        }
        if terms.is_empty() {
            return Err(Error::Data("empty vocabulary".into()));
        }
        Ok(Vocabulary { terms, index })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term(&self, i: usize) -> &str {
        &self.terms[i]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn get(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }
}

/// A bag of words: `(term index, count)` pairs sorted by term index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    counts: Vec<(usize, u32)>,
    total: u64,
}

impl Document {
    pub fn new(id: impl Into<String>, counts: impl IntoIterator<Item = (usize, u32)>) -> Result<Self> {
        let id = id.into();
        let mut merged: Vec<(usize, u32)> = Vec::new();
        let mut sorted: Vec<(usize, u32)> = counts.into_iter().filter(|&(_, c)| c > 0).collect();
        sorted.sort_unstable_by_key(|&(v, _)| v);
        for (v, c) in sorted {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => merged.push((v, c)),
            }
        }
        let total = merged.iter().map(|&(_, c)| c as u64).sum();
        if total == 0 {
            return Err(Error::Data(format!("empty document '{id}'")));
        }
        Ok(Document { id, counts: merged, total })
    }

    pub fn counts(&self) -> &[(usize, u32)] {
        &self.counts
    }

    pub fn total_tokens(&self) -> u64 {
        self.total
    }

    /// Term indices repeated by count, in ascending term order.
    pub fn tokens(&self) -> impl Iterator<Item = usize> + '_ {
        self.counts
            .iter()
            .flat_map(|&(v, c)| std::iter::repeat_n(v, c as usize))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    /// Levels are kept sorted; `codes[d]` indexes into `levels`.
    Categorical { levels: Vec<String>, codes: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        Column { name: name.into(), data: ColumnData::Numeric(values) }
    }

    pub fn categorical(name: impl Into<String>, values: &[&str]) -> Self {
        let levels: Vec<String> = values
            .iter()
            .map(|s| s.to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let codes = values
            .iter()
            .map(|v| levels.iter().position(|l| l == v).unwrap())
            .collect();
        Column { name: name.into(), data: ColumnData::Categorical { levels, codes } }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cell(&self, row: usize) -> String {
        match &self.data {
            ColumnData::Numeric(v) => v[row].to_string(),
            ColumnData::Categorical { levels, codes } => levels[codes[row]].clone(),
        }
    }
}

/// A single covariate value, used when evaluating designs at new points.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateValue {
    Numeric(f64),
    Level(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    rows: usize,
    columns: Vec<Column>,
}

impl CovariateTable {
    pub fn new(rows: usize, columns: Vec<Column>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &columns {
            if c.name == "id" {
                return Err(Error::Data("covariate column may not be named 'id'".into()));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Data(format!("duplicate covariate column '{}'", c.name)));
            }
            if c.len() != rows {
                return Err(Error::Data(format!(
                    "covariate column '{}' has {} rows, expected {rows}",
                    c.name,
                    c.len()
                )));
            }
            if let ColumnData::Numeric(v) = &c.data {
                if let Some(d) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::Data(format!("non-finite value in column '{}' row {d}", c.name)));
                }
            }
        }
        Ok(CovariateTable { rows, columns })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn value(&self, column: &Column, row: usize) -> CovariateValue {
        match &column.data {
            ColumnData::Numeric(v) => CovariateValue::Numeric(v[row]),
            ColumnData::Categorical { levels, codes } => CovariateValue::Level(levels[codes[row]].clone()),
        }
    }

    /// Row subset in the given order.
    pub fn select(&self, rows: &[usize]) -> CovariateTable {
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                data: match &c.data {
                    ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
                    ColumnData::Categorical { levels, codes } => ColumnData::Categorical {
                        levels: levels.clone(),
                        codes: rows.iter().map(|&r| codes[r]).collect(),
                    },
                },
            })
            .collect();
        CovariateTable { rows: rows.len(), columns }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocabulary: Vocabulary,
    pub documents: Vec<Document>,
    /// Row `d` belongs to `documents[d]`.
    pub covariates: CovariateTable,
}

impl Corpus {
    pub fn new(vocabulary: Vocabulary, documents: Vec<Document>, covariates: CovariateTable) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::Data("corpus has no documents".into()));
        }
        if covariates.rows() != documents.len() {
            return Err(Error::Data(format!(
                "{} covariate rows for {} documents",
                covariates.rows(),
                documents.len()
            )));
        }
        let v = vocabulary.len();
        let mut ids = HashSet::new();
        for doc in &documents {
            if !ids.insert(doc.id.as_str()) {
                return Err(Error::Data(format!("duplicate document id '{}'", doc.id)));
            }
            if let Some(&(bad, _)) = doc.counts.iter().find(|&&(t, _)| t >= v) {
                return Err(Error::Data(format!(
                    "document '{}' uses term index {bad} outside vocabulary of size {v}",
                    doc.id
                )));
            }
        }
        Ok(Corpus { vocabulary, documents, covariates })
    }

    pub fn num_documents(&self) -> usize {
        self.documents.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn total_tokens(&self) -> u64 {
        self.documents.iter().map(Document::total_tokens).sum()
    }

    pub fn doc_ids(&self) -> Vec<String> {
        self.documents.iter().map(|d| d.id.clone()).collect()
    }

    /// Document subset (with aligned covariates) sharing this vocabulary.
    pub fn select(&self, rows: &[usize]) -> Corpus {
        Corpus {
            vocabulary: self.vocabulary.clone(),
            documents: rows.iter().map(|&r| self.documents[r].clone()).collect(),
            covariates: self.covariates.select(rows),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocumentRecord {
    id: String,
    tokens: Vec<String>,
}

/// Load a corpus, building the vocabulary from the documents (sorted terms).
pub fn load_corpus(documents_path: &Path, covariates_path: &Path) -> Result<Corpus> {
    let records = read_document_records(documents_path)?;
    let terms: BTreeSet<&str> = records
        .iter()
        .flat_map(|(_, r)| r.tokens.iter().map(String::as_str))
        .collect();
    let vocabulary = if terms.is_empty() {
        // every document is empty; report the first one below
        None
    } else {
        Some(Vocabulary::new(terms.into_iter().map(str::to_owned).collect())?)
    };
    match vocabulary {
        Some(vocab) => assemble(records, vocab, documents_path, covariates_path),
        None => {
            let (line, rec) = &records[0];
            Err(Error::Parse {
                path: documents_path.to_owned(),
                line: *line,
                message: format!("empty document '{}'", rec.id),
            })
        }
    }
}

/// Load a corpus against a fixed vocabulary (e.g. the one stored in a model
/// checkpoint). Unknown terms are an error.
pub fn load_corpus_with_vocabulary(
    documents_path: &Path,
    covariates_path: &Path,
    vocabulary: Vocabulary,
) -> Result<Corpus> {
    let records = read_document_records(documents_path)?;
    assemble(records, vocabulary, documents_path, covariates_path)
}

fn assemble(
    records: Vec<(usize, DocumentRecord)>,
    vocabulary: Vocabulary,
    documents_path: &Path,
    covariates_path: &Path,
) -> Result<Corpus> {
    let mut documents = Vec::with_capacity(records.len());
    let mut position = HashMap::new();
    for (line, rec) in records {
        let parse_err = |message: String| Error::Parse { path: documents_path.to_owned(), line, message };
        if position.insert(rec.id.clone(), documents.len()).is_some() {
            return Err(parse_err(format!("duplicate document id '{}'", rec.id)));
        }
        let mut counts = Vec::with_capacity(rec.tokens.len());
        for t in &rec.tokens {
            let v = vocabulary.get(t).ok_or_else(|| {
                parse_err(format!("document '{}': term '{t}' is not in the vocabulary", rec.id))
            })?;
            counts.push((v, 1u32));
        }
        let doc = Document::new(rec.id.clone(), counts).map_err(|_| parse_err(format!("empty document '{}'", rec.id)))?;
        documents.push(doc);
    }
    let covariates = read_covariates(covariates_path, &position)?;
    Corpus::new(vocabulary, documents, covariates)
}

fn read_document_records(path: &Path) -> Result<Vec<(usize, DocumentRecord)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocumentRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no documents", path.display())));
    }
    Ok(out)
}

/// Read the covariate CSV and reorder its rows to the document order given
/// by `position` (document id → row index).
fn read_covariates(path: &Path, position: &HashMap<String, usize>) -> Result<CovariateTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.get(0) != Some("id") {
        return Err(Error::Parse {
            path: path.to_owned(),
            line: 1,
            message: "first column must be 'id'".into(),
        });
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let d = position.len();
    let mut cells: Vec<Vec<Option<String>>> = vec![vec![None; d]; names.len()];
    let mut seen = vec![false; d];
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let parse_err = |message: String| Error::Parse { path: path.to_owned(), line, message };
        let id = rec.get(0).unwrap_or_default();
        let &row = position
            .get(id)
            .ok_or_else(|| parse_err(format!("covariate row for unknown document id '{id}'")))?;
        if seen[row] {
            return Err(parse_err(format!("duplicate covariate row for document id '{id}'")));
        }
        seen[row] = true;
        if rec.len() != names.len() + 1 {
            return Err(parse_err(format!("expected {} fields, found {}", names.len() + 1, rec.len())));
        }
        for (j, name) in names.iter().enumerate() {
            let value = rec.get(j + 1).unwrap_or_default().trim();
            if value.is_empty() || value == "NA" {
                return Err(parse_err(format!("missing value for '{name}' in document id '{id}'")));
            }
            cells[j][row] = Some(value.to_owned());
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        let id = position.iter().find(|&(_, &r)| r == missing).map(|(k, _)| k.as_str()).unwrap_or("?");
        return Err(Error::Data(format!(
            "{}: no covariate row for document id '{id}'",
            path.display()
        )));
    }
    let columns = names
        .into_iter()
        .zip(cells)
        .map(|(name, col)| {
            let col: Vec<String> = col.into_iter().map(Option::unwrap).collect();
            let parsed: Option<Vec<f64>> = col
                .iter()
                .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect();
            match parsed {
                Some(values) => Column::numeric(name, values),
                None => {
                    let refs: Vec<&str> = col.iter().map(String::as_str).collect();
                    Column::categorical(name, &refs)
                }
            }
        })
        .collect();
    CovariateTable::new(d, columns)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse { path: path.to_owned(), line, message: e.to_string() }
}

/// Write the documents and covariates files; byte-identical for identical input.
pub fn write_corpus(corpus: &Corpus, documents_path: &Path, covariates_path: &Path) -> Result<()> {
    let file = File::create(documents_path).map_err(|e| Error::io(documents_path, e))?;
    let mut w = BufWriter::new(file);
    for doc in &corpus.documents {
        let rec = DocumentRecord {
            id: doc.id.clone(),
            tokens: doc.tokens().map(|v| corpus.vocabulary.term(v).to_owned()).collect(),
        };
        let line = serde_json::to_string(&rec).expect("document record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(documents_path, e))?;
    }
    w.flush().map_err(|e| Error::io(documents_path, e))?;

    let mut cw = csv::Writer::from_path(covariates_path).map_err(|e| csv_error(covariates_path, e))?;
    let cols = corpus.covariates.columns();
    let header: Vec<&str> = std::iter::once("id").chain(cols.iter().map(|c| c.name.as_str())).collect();
    cw.write_record(&header).map_err(|e| csv_error(covariates_path, e))?;
    for (d, doc) in corpus.documents.iter().enumerate() {
        let row: Vec<String> = std::iter::once(doc.id.clone()).chain(cols.iter().map(|c| c.cell(d))).collect();
        cw.write_record(&row).map_err(|e| csv_error(covariates_path, e))?;
    }
    cw.flush().map_err(|e| Error::io(covariates_path, e))?;
    Ok(())
}
