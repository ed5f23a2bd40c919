//! Notebook parsing, community metadata loading and the per-competition corpus join.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Read};

use chrono::NaiveDate;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Markdown,
    Code,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub kind: CellKind,
    pub source: String,
    pub ordinal: usize,
}

/// Community metadata attached to a notebook post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotebookMeta {
    pub notebook_id: String,
    pub url: String,
    pub title: String,
    pub author_name: String,
    #[serde(default)]
    pub author_avatar_url: String,
    pub vote_count: u64,
    pub view_count: u64,
    pub comment_count: u64,
    pub publish_date: NaiveDate,
    pub competition_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notebook {
    pub notebook_id: String,
    pub cells: Vec<Cell>,
    pub language: String,
}

impl Notebook {
    pub fn count_cells(&self, kind: CellKind) -> usize {
        self.cells.iter().filter(|c| c.kind == kind).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub competition_id: String,
    pub competition_title: String,
    pub competition_description: String,
    /// Sorted by `notebook_id`.
    pub notebooks: Vec<Notebook>,
    pub metadata: BTreeMap<String, NotebookMeta>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("malformed notebook document: {0}")]
    MalformedDocument(String),
    #[error("notebook has no non-empty markdown or code cells")]
    EmptyNotebook,
    #[error("unsupported notebook language `{0}`")]
    UnsupportedLanguage(String),
}

impl ParseError {
    /// Stable short name used in ingest reports.
    pub fn class(&self) -> &'static str {
        match self {
            ParseError::MalformedDocument(_) => "malformed",
            ParseError::EmptyNotebook => "empty",
            ParseError::UnsupportedLanguage(_) => "unsupported_language",
        }
    }
}

// Cell magics that switch a code cell to another interpreter.
const FOREIGN_CELL_MAGICS: &[&str] = &[
    "r", "bash", "sh", "script", "javascript", "js", "html", "latex", "perl", "ruby", "sql",
    "svg", "markdown", "scala", "julia",
];

fn is_foreign_magic(source: &str) -> bool {
    let first = source.trim_start().lines().next().unwrap_or("");
    let Some(rest) = first.strip_prefix("%%") else {
        return false;
    };
    let name = rest.split_whitespace().next().unwrap_or("").to_ascii_lowercase();
    FOREIGN_CELL_MAGICS.contains(&name.as_str())
}

fn source_text(value: Option<&Value>) -> Result<String, ParseError> {
    match value {
        None | Some(Value::Null) => Ok(String::new()),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Array(lines)) => lines
            .iter()
            .map(|l| {
                l.as_str()
                    .ok_or_else(|| ParseError::MalformedDocument("non-string source line".into()))
            })
            .collect(),
        Some(_) => Err(ParseError::MalformedDocument("cell source is not text".into())),
    }
}

fn declared_language(doc: &Value) -> Option<String> {
    let meta = doc.get("metadata")?;
    let from_info = meta
        .get("language_info")
        .and_then(|i| i.get("name"))
        .and_then(Value::as_str);
    let from_kernel = meta
        .get("kernelspec")
        .and_then(|k| k.get("language"))
        .and_then(Value::as_str);
    from_info
        .or(from_kernel)
        .map(|l| l.trim().to_ascii_lowercase())
        .filter(|l| !l.is_empty())
}

/// Parses an nbformat-4 notebook, keeping only non-blank markdown and code cells.
pub fn parse_notebook(raw: &[u8], notebook_id: &str) -> Result<Notebook, ParseError> {
    let doc: Value =
        serde_json::from_slice(raw).map_err(|e| ParseError::MalformedDocument(e.to_string()))?;
    let cells = doc
        .get("cells")
        .and_then(Value::as_array)
        .ok_or_else(|| ParseError::MalformedDocument("missing top-level `cells` list".into()))?;

    let declared = declared_language(&doc);
    if let Some(lang) = &declared {
        if lang != "python" {
            return Err(ParseError::UnsupportedLanguage(lang.clone()));
        }
    }

    let mut retained = Vec::new();
    for (position, cell) in cells.iter().enumerate() {
        let kind = match cell.get("cell_type").and_then(Value::as_str) {
            Some("markdown") => CellKind::Markdown,
            Some("code") => CellKind::Code,
            Some(_) => continue,
            None => {
                return Err(ParseError::MalformedDocument(format!(
                    "cell {position} has no cell_type"
                )))
            }
        };
        let source = source_text(cell.get("source"))?;
        if source.trim().is_empty() {
            continue;
        }
        retained.push(Cell {
            kind,
            source,
            ordinal: position,
        });
    }

    if retained.is_empty() {
        return Err(ParseError::EmptyNotebook);
    }
    if declared.is_none() {
        let pythonish = retained
            .iter()
            .any(|c| c.kind == CellKind::Code && !is_foreign_magic(&c.source));
        if !pythonish {
            return Err(ParseError::UnsupportedLanguage("unknown".into()));
        }
    }

    Ok(Notebook {
        notebook_id: notebook_id.to_string(),
        cells: retained,
        language: "python".into(),
    })
}

/// Fields of [`NotebookMeta`] that a column map must cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetaField {
    NotebookId,
    Url,
    Title,
    AuthorName,
    AuthorAvatarUrl,
    VoteCount,
    ViewCount,
    CommentCount,
    PublishDate,
    CompetitionId,
}

impl MetaField {
    pub const REQUIRED: [MetaField; 9] = [
        MetaField::NotebookId,
        MetaField::Url,
        MetaField::Title,
        MetaField::AuthorName,
        MetaField::VoteCount,
        MetaField::ViewCount,
        MetaField::CommentCount,
        MetaField::PublishDate,
        MetaField::CompetitionId,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetaField::NotebookId => "notebook_id",
            MetaField::Url => "url",
            MetaField::Title => "title",
            MetaField::AuthorName => "author_name",
            MetaField::AuthorAvatarUrl => "author_avatar_url",
            MetaField::VoteCount => "vote_count",
            MetaField::ViewCount => "view_count",
            MetaField::CommentCount => "comment_count",
            MetaField::PublishDate => "publish_date",
            MetaField::CompetitionId => "competition_id",
        }
    }
}

impl fmt::Display for MetaField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Maps each metadata field to the name of the source column holding it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMap {
    pub notebook_id: Option<String>,
    pub url: Option<String>,
    pub title: Option<String>,
    pub author_name: Option<String>,
    pub author_avatar_url: Option<String>,
    pub vote_count: Option<String>,
    pub view_count: Option<String>,
    pub comment_count: Option<String>,
    pub publish_date: Option<String>,
    pub competition_id: Option<String>,
}

impl ColumnMap {
    /// A map whose column names equal the field names.
    pub fn identity() -> Self {
        let name = |f: MetaField| Some(f.name().to_string());
        ColumnMap {
            notebook_id: name(MetaField::NotebookId),
            url: name(MetaField::Url),
            title: name(MetaField::Title),
            author_name: name(MetaField::AuthorName),
            author_avatar_url: name(MetaField::AuthorAvatarUrl),
            vote_count: name(MetaField::VoteCount),
            view_count: name(MetaField::ViewCount),
            comment_count: name(MetaField::CommentCount),
            publish_date: name(MetaField::PublishDate),
            competition_id: name(MetaField::CompetitionId),
        }
    }

    pub fn column(&self, field: MetaField) -> Option<&str> {
        let col = match field {
            MetaField::NotebookId => &self.notebook_id,
            MetaField::Url => &self.url,
            MetaField::Title => &self.title,
            MetaField::AuthorName => &self.author_name,
            MetaField::AuthorAvatarUrl => &self.author_avatar_url,
            MetaField::VoteCount => &self.vote_count,
            MetaField::ViewCount => &self.view_count,
            MetaField::CommentCount => &self.comment_count,
            MetaField::PublishDate => &self.publish_date,
            MetaField::CompetitionId => &self.competition_id,
        };
        col.as_deref().filter(|c| !c.is_empty())
    }

    pub fn validate(&self) -> Result<(), MetadataError> {
        match MetaField::REQUIRED.iter().find(|f| self.column(**f).is_none()) {
            Some(f) => Err(MetadataError::MissingMapping(*f)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum MetadataError {
    #[error("no column mapped for required field `{0}`")]
    MissingMapping(MetaField),
    #[error("mapped column `{column}` for field `{field}` is not in the CSV header")]
    MissingColumn { field: MetaField, column: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("jsonl line {line}: {message}")]
    Jsonl { line: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One source record, keyed by column name.
pub type MetaRow = BTreeMap<String, String>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetadataLoad {
    /// In order of first appearance of each notebook id.
    pub metas: Vec<NotebookMeta>,
    pub skipped_rows: usize,
    pub duplicate_ids: Vec<String>,
}

#[derive(Debug)]
enum RowProblem {
    MissingId,
    BadCount(MetaField),
    BadDate,
}

impl fmt::Display for RowProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowProblem::MissingId => f.write_str("missing notebook id"),
            RowProblem::BadCount(field) => write!(f, "`{field}` is not a non-negative integer"),
            RowProblem::BadDate => f.write_str("unparseable publish date"),
        }
    }
}

fn parse_count(row: &MetaRow, map: &ColumnMap, field: MetaField) -> Result<u64, RowProblem> {
    let raw = map
        .column(field)
        .and_then(|c| row.get(c))
        .ok_or(RowProblem::BadCount(field))?;
    // Some exports write counts as floats ("12.0"); accept integral values only.
    let trimmed = raw.trim();
    let value: i64 = match trimmed.parse::<i64>() {
        Ok(v) => v,
        Err(_) => {
            let f: f64 = trimmed.parse().map_err(|_| RowProblem::BadCount(field))?;
            if f.fract() != 0.0 || !f.is_finite() {
                return Err(RowProblem::BadCount(field));
            }
            f as i64
        }
    };
    u64::try_from(value).map_err(|_| RowProblem::BadCount(field))
}

pub fn parse_publish_date(raw: &str) -> Option<NaiveDate> {
    let raw = raw.trim();
    if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        return Some(d);
    }
    // Timestamps: keep the calendar date part.
    let head = raw.get(..10)?;
    let sep = raw.as_bytes().get(10).copied();
    if matches!(sep, Some(b'T') | Some(b' ')) {
        NaiveDate::parse_from_str(head, "%Y-%m-%d").ok()
    } else {
        None
    }
}

fn meta_from_row(row: &MetaRow, map: &ColumnMap) -> Result<NotebookMeta, RowProblem> {
    let text = |field: MetaField| -> String {
        map.column(field)
            .and_then(|c| row.get(c))
            .cloned()
            .unwrap_or_default()
    };
    let notebook_id = text(MetaField::NotebookId);
    if notebook_id.trim().is_empty() {
        return Err(RowProblem::MissingId);
    }
    let publish_date =
        parse_publish_date(&text(MetaField::PublishDate)).ok_or(RowProblem::BadDate)?;
    Ok(NotebookMeta {
        notebook_id,
        url: text(MetaField::Url),
        title: text(MetaField::Title),
        author_name: text(MetaField::AuthorName),
        author_avatar_url: text(MetaField::AuthorAvatarUrl),
        vote_count: parse_count(row, map, MetaField::VoteCount)?,
        view_count: parse_count(row, map, MetaField::ViewCount)?,
        comment_count: parse_count(row, map, MetaField::CommentCount)?,
        publish_date,
        competition_id: text(MetaField::CompetitionId),
    })
}

/// Converts raw rows into metadata records.
///
/// Rows without a notebook id, with negative or non-numeric counts, or with an
/// unparseable date are skipped and counted. A repeated notebook id replaces the
/// earlier row.
pub fn load_metadata<I>(rows: I, map: &ColumnMap) -> Result<MetadataLoad, MetadataError>
where
    I: IntoIterator<Item = MetaRow>,
{
    map.validate()?;
    let mut by_id: IndexMap<String, NotebookMeta> = IndexMap::new();
    let mut out = MetadataLoad::default();
    for (i, row) in rows.into_iter().enumerate() {
        match meta_from_row(&row, map) {
            Ok(meta) => {
                if by_id.contains_key(&meta.notebook_id) {
                    log::warn!(
                        "duplicate metadata row for notebook `{}` (row {i}); keeping the later row",
                        meta.notebook_id
                    );
                    out.duplicate_ids.push(meta.notebook_id.clone());
                }
                by_id.insert(meta.notebook_id.clone(), meta);
            }
            Err(problem) => {
                log::debug!("skipping metadata row {i}: {problem}");
                out.skipped_rows += 1;
            }
        }
    }
    out.metas = by_id.into_values().collect();
    Ok(out)
}

/// Reads CSV rows (with header) and loads them through `map`.
pub fn load_metadata_csv<R: Read>(reader: R, map: &ColumnMap) -> Result<MetadataLoad, MetadataError> {
    map.validate()?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    for field in MetaField::REQUIRED {
        let column = map.column(field).unwrap_or_default();
        if !header.iter().any(|h| h == column) {
            return Err(MetadataError::MissingColumn {
                field,
                column: column.to_string(),
            });
        }
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let row: MetaRow = header
            .iter()
            .zip(record.iter())
            .map(|(h, v)| (h.clone(), v.to_string()))
            .collect();
        rows.push(row);
    }
    load_metadata(rows, map)
}

/// Reads JSON-lines objects and loads them through `map`. Non-string scalar
/// values are stringified before field conversion.
pub fn load_metadata_jsonl<R: BufRead>(
    reader: R,
    map: &ColumnMap,
) -> Result<MetadataLoad, MetadataError> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| MetadataError::Jsonl {
            line: i + 1,
            message: e.to_string(),
        })?;
        let Value::Object(obj) = value else {
            return Err(MetadataError::Jsonl {
                line: i + 1,
                message: "expected a JSON object".into(),
            });
        };
        let row: MetaRow = obj
            .into_iter()
            .filter_map(|(k, v)| {
                let s = match v {
                    Value::String(s) => s,
                    Value::Null => return None,
                    other => other.to_string(),
                };
                Some((k, s))
            })
            .collect();
        rows.push(row);
    }
    load_metadata(rows, map)
}

/// Admission counts produced when building a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub admitted: usize,
    /// Notebooks with no metadata row for this competition.
    pub rejected_missing_metadata: usize,
    /// Notebooks whose metadata names another competition.
    pub rejected_other_competition: usize,
    /// Repeated notebook ids among the inputs (later copies dropped).
    pub rejected_duplicate: usize,
    pub markdown_cells: usize,
    pub code_cells: usize,
    pub rejected_ids: Vec<String>,
}

impl CorpusReport {
    pub fn rejected(&self) -> usize {
        self.rejected_missing_metadata + self.rejected_other_competition + self.rejected_duplicate
    }
}

/// Joins parsed notebooks with their metadata for one competition.
pub fn build_corpus(
    notebooks: Vec<Notebook>,
    metas: Vec<NotebookMeta>,
    competition_id: &str,
    competition_title: &str,
    competition_description: &str,
) -> (Corpus, CorpusReport) {
    let metas: HashMap<String, NotebookMeta> = metas
        .into_iter()
        .map(|m| (m.notebook_id.clone(), m))
        .collect();
    let mut report = CorpusReport::default();
    let mut admitted: BTreeMap<String, Notebook> = BTreeMap::new();
    let mut metadata = BTreeMap::new();

    for nb in notebooks {
        let Some(meta) = metas.get(&nb.notebook_id) else {
            log::warn!("notebook `{}` has no metadata row; rejected", nb.notebook_id);
            report.rejected_missing_metadata += 1;
            report.rejected_ids.push(nb.notebook_id);
            continue;
        };
        if meta.competition_id != competition_id {
            report.rejected_other_competition += 1;
            report.rejected_ids.push(nb.notebook_id);
            continue;
        }
        if admitted.contains_key(&nb.notebook_id) {
            report.rejected_duplicate += 1;
            report.rejected_ids.push(nb.notebook_id);
            continue;
        }
        metadata.insert(nb.notebook_id.clone(), meta.clone());
        admitted.insert(nb.notebook_id.clone(), nb);
    }

    let notebooks: Vec<Notebook> = admitted.into_values().collect();
    report.admitted = notebooks.len();
    report.markdown_cells = notebooks.iter().map(|n| n.count_cells(CellKind::Markdown)).sum();
    report.code_cells = notebooks.iter().map(|n| n.count_cells(CellKind::Code)).sum();
    report.rejected_ids.sort();

    let corpus = Corpus {
        competition_id: competition_id.to_string(),
        competition_title: competition_title.to_string(),
        competition_description: competition_description.to_string(),
        notebooks,
        metadata,
    };
    (corpus, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn nb_json(cells: Value, metadata: Value) -> Vec<u8> {
        serde_json::to_vec(&json!({"cells": cells, "metadata": metadata, "nbformat": 4})).unwrap()
    }

    fn py_meta() -> Value {
        json!({"kernelspec": {"language": "python", "name": "python3"}})
    }

    #[test]
    fn parses_markdown_and_code_in_order() {
        let raw = nb_json(
            json!([
                {"cell_type": "markdown", "source": "intro"},
                {"cell_type": "code", "source": ["x", "=1"]}
            ]),
            py_meta(),
        );
        let nb = parse_notebook(&raw, "nb1").unwrap();
        assert_eq!(nb.cells.len(), 2);
        assert_eq!(nb.cells[0].kind, CellKind::Markdown);
        assert_eq!(nb.cells[1].source, "x=1");
        assert_eq!(
            nb.cells.iter().map(|c| c.ordinal).collect::<Vec<_>>(),
            vec![0, 1]
        );
    }

    #[test]
    fn whitespace_only_notebook_is_empty() {
        let raw = nb_json(json!([{"cell_type": "code", "source": "   \n  "}]), json!({}));
        assert_eq!(parse_notebook(&raw, "x"), Err(ParseError::EmptyNotebook));
    }

    #[test]
    fn r_language_rejected() {
        let raw = nb_json(
            json!([{"cell_type": "code", "source": "x <- 1"}]),
            json!({"kernelspec": {"language": "R"}}),
        );
        assert_eq!(
            parse_notebook(&raw, "x"),
            Err(ParseError::UnsupportedLanguage("r".into()))
        );
    }

    #[test]
    fn language_info_takes_precedence() {
        let raw = nb_json(
            json!([{"cell_type": "code", "source": "1"}]),
            json!({"language_info": {"name": "julia"}, "kernelspec": {"language": "python"}}),
        );
        assert!(matches!(
            parse_notebook(&raw, "x"),
            Err(ParseError::UnsupportedLanguage(l)) if l == "julia"
        ));
    }

    #[test]
    fn missing_language_defaults_to_python_with_code() {
        let raw = nb_json(json!([{"cell_type": "code", "source": "print(1)"}]), json!({}));
        assert_eq!(parse_notebook(&raw, "x").unwrap().language, "python");
    }

    #[test]
    fn missing_language_with_only_foreign_magic_rejected() {
        let raw = nb_json(
            json!([{"cell_type": "code", "source": "%%R\nx <- 1"}, {"cell_type": "markdown", "source": "m"}]),
            json!({}),
        );
        assert!(matches!(
            parse_notebook(&raw, "x"),
            Err(ParseError::UnsupportedLanguage(_))
        ));
    }

    #[test]
    fn missing_language_markdown_only_rejected() {
        let raw = nb_json(json!([{"cell_type": "markdown", "source": "notes"}]), json!({}));
        assert!(matches!(
            parse_notebook(&raw, "x"),
            Err(ParseError::UnsupportedLanguage(_))
        ));
    }

    #[test]
    fn raw_cells_dropped_and_ordinals_keep_positions() {
        let raw = nb_json(
            json!([
                {"cell_type": "raw", "source": "raw"},
                {"cell_type": "code", "source": ""},
                {"cell_type": "code", "source": "a=1"}
            ]),
            py_meta(),
        );
        let nb = parse_notebook(&raw, "x").unwrap();
        assert_eq!(nb.cells.len(), 1);
        assert_eq!(nb.cells[0].ordinal, 2);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(
            parse_notebook(b"{not json", "x"),
            Err(ParseError::MalformedDocument(_))
        ));
        assert!(matches!(
            parse_notebook(b"{\"worksheets\": []}", "x"),
            Err(ParseError::MalformedDocument(_))
        ));
        let raw = nb_json(json!([{"source": "x"}]), py_meta());
        assert!(matches!(
            parse_notebook(&raw, "x"),
            Err(ParseError::MalformedDocument(_))
        ));
    }

    fn row(pairs: &[(&str, &str)]) -> MetaRow {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn full_row(id: &str, votes: &str) -> MetaRow {
        row(&[
            ("notebook_id", id),
            ("url", "https://example.org/code/a/b"),
            ("title", "T"),
            ("author_name", "A"),
            ("vote_count", votes),
            ("view_count", "798"),
            ("comment_count", "3"),
            ("publish_date", "2021-04-01"),
            ("competition_id", "c"),
        ])
    }

    #[test]
    fn copies_counts() {
        let load = load_metadata(vec![full_row("nb1", "12")], &ColumnMap::identity()).unwrap();
        let m = &load.metas[0];
        assert_eq!((m.vote_count, m.view_count, m.comment_count), (12, 798, 3));
        assert_eq!(m.author_avatar_url, "");
        assert_eq!(load.skipped_rows, 0);
    }

    #[test]
    fn negative_count_skipped() {
        let load = load_metadata(
            vec![full_row("nb1", "-1"), full_row("nb2", "1")],
            &ColumnMap::identity(),
        )
        .unwrap();
        assert_eq!(load.skipped_rows, 1);
        assert_eq!(load.metas.len(), 1);
    }

    #[test]
    fn missing_id_and_bad_date_skipped() {
        let mut no_id = full_row("", "1");
        no_id.remove("notebook_id");
        let mut bad_date = full_row("nb3", "1");
        bad_date.insert("publish_date".into(), "yesterday".into());
        let load = load_metadata(vec![no_id, bad_date], &ColumnMap::identity()).unwrap();
        assert_eq!(load.skipped_rows, 2);
    }

    #[test]
    fn duplicate_id_last_wins() {
        let load = load_metadata(
            vec![full_row("nb1", "1"), full_row("nb1", "5")],
            &ColumnMap::identity(),
        )
        .unwrap();
        assert_eq!(load.metas.len(), 1);
        assert_eq!(load.metas[0].vote_count, 5);
        assert_eq!(load.duplicate_ids, vec!["nb1".to_string()]);
    }

    #[test]
    fn unmapped_required_field() {
        let mut map = ColumnMap::identity();
        map.view_count = None;
        let err = load_metadata(Vec::new(), &map).unwrap_err();
        assert!(matches!(err, MetadataError::MissingMapping(MetaField::ViewCount)));
        // avatar is optional
        let mut map = ColumnMap::identity();
        map.author_avatar_url = None;
        assert!(map.validate().is_ok());
    }

    #[test]
    fn csv_with_renamed_columns() {
        let csv_text = "Id,Votes,Views,Comments,Title,Url,Author,Date,Comp\n\
                        nb1,12,798,3,\"Hello, world\",https://x/y,Ann,2020-01-02 10:00:00,c\n";
        let map = ColumnMap {
            notebook_id: Some("Id".into()),
            vote_count: Some("Votes".into()),
            view_count: Some("Views".into()),
            comment_count: Some("Comments".into()),
            title: Some("Title".into()),
            url: Some("Url".into()),
            author_name: Some("Author".into()),
            publish_date: Some("Date".into()),
            competition_id: Some("Comp".into()),
            author_avatar_url: None,
        };
        let load = load_metadata_csv(csv_text.as_bytes(), &map).unwrap();
        assert_eq!(load.metas[0].title, "Hello, world");
        assert_eq!(
            load.metas[0].publish_date,
            NaiveDate::from_ymd_opt(2020, 1, 2).unwrap()
        );
    }

    #[test]
    fn csv_missing_header_column() {
        let csv_text = "notebook_id,url\nnb1,u\n";
        let err = load_metadata_csv(csv_text.as_bytes(), &ColumnMap::identity()).unwrap_err();
        assert!(matches!(err, MetadataError::MissingColumn { .. }));
    }

    #[test]
    fn jsonl_numbers_accepted() {
        let text = r#"{"notebook_id":"nb1","url":"u","title":"t","author_name":"a","vote_count":4,"view_count":5.0,"comment_count":"0","publish_date":"2022-12-31","competition_id":"c"}

{"notebook_id":"nb2","vote_count":"x"}"#;
        let load = load_metadata_jsonl(text.as_bytes(), &ColumnMap::identity()).unwrap();
        assert_eq!(load.metas.len(), 1);
        assert_eq!(load.metas[0].view_count, 5);
        assert_eq!(load.skipped_rows, 1);
    }

    fn simple_nb(id: &str) -> Notebook {
        Notebook {
            notebook_id: id.into(),
            cells: vec![
                Cell { kind: CellKind::Markdown, source: "m".into(), ordinal: 0 },
                Cell { kind: CellKind::Code, source: "c".into(), ordinal: 1 },
            ],
            language: "python".into(),
        }
    }

    fn meta(id: &str, comp: &str) -> NotebookMeta {
        let mut load = load_metadata(vec![full_row(id, "1")], &ColumnMap::identity()).unwrap();
        let mut m = load.metas.remove(0);
        m.competition_id = comp.into();
        m
    }

    #[test]
    fn join_rejects_missing_metadata() {
        let (corpus, report) = build_corpus(
            vec![simple_nb("b"), simple_nb("a"), simple_nb("z")],
            vec![meta("a", "c"), meta("b", "c")],
            "c",
            "Title",
            "Desc",
        );
        assert_eq!(corpus.notebooks.len(), 2);
        assert_eq!(corpus.notebooks[0].notebook_id, "a");
        assert_eq!(report.rejected(), 1);
        assert_eq!(report.rejected_ids, vec!["z".to_string()]);
        assert_eq!((report.markdown_cells, report.code_cells), (2, 2));
    }

    #[test]
    fn join_filters_competition() {
        let (corpus, report) = build_corpus(
            vec![simple_nb("a"), simple_nb("b")],
            vec![meta("a", "c"), meta("b", "other")],
            "c",
            "",
            "",
        );
        assert_eq!(corpus.notebooks.len(), 1);
        assert_eq!(report.rejected_other_competition, 1);
    }

    #[test]
    fn empty_join() {
        let (corpus, report) = build_corpus(Vec::new(), Vec::new(), "c", "", "");
        assert!(corpus.notebooks.is_empty());
        assert_eq!(report, CorpusReport::default());
    }
}
