//! Splits notebooks into retrieval chunks.
//!
//! A chunk is a run of consecutive markdown cells followed by the run of code
//! cells that immediately follows it. A new chunk starts at the notebook start
//! and at every markdown cell that follows a code cell, so a notebook opening
//! with code yields a markdown-less first chunk and trailing markdown yields a
//! code-less last chunk.

use serde::{Deserialize, Serialize};

use crate::corpus::{Cell, CellKind, Notebook};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub notebook_id: String,
    pub chunk_ordinal: usize,
    pub markdown_cells: Vec<Cell>,
    pub code_cells: Vec<Cell>,
    pub rendered_text: String,
}

impl Chunk {
    pub fn make_id(notebook_id: &str, chunk_ordinal: usize) -> String {
        format!("{notebook_id}#{chunk_ordinal}")
    }

    /// Cells in notebook order (markdown run, then code run).
    pub fn cells(&self) -> impl Iterator<Item = &Cell> {
        self.markdown_cells.iter().chain(&self.code_cells)
    }

    pub fn cell_count(&self) -> usize {
        self.markdown_cells.len() + self.code_cells.len()
    }
}

pub fn chunk_notebook(nb: &Notebook) -> Vec<Chunk> {
    let mut groups: Vec<(Vec<Cell>, Vec<Cell>)> = Vec::new();
    for cell in &nb.cells {
        let starts_new = match (groups.last(), cell.kind) {
            (None, _) => true,
            (Some((_, code)), CellKind::Markdown) => !code.is_empty(),
            (Some(_), CellKind::Code) => false,
        };
        if starts_new {
            groups.push((Vec::new(), Vec::new()));
        }
        let (md, code) = groups.last_mut().expect("group pushed above");
        match cell.kind {
            CellKind::Markdown => md.push(cell.clone()),
            CellKind::Code => code.push(cell.clone()),
        }
    }

    groups
        .into_iter()
        .enumerate()
        .map(|(ordinal, (markdown_cells, code_cells))| {
            let rendered_text = render_cells(&markdown_cells, &code_cells);
            Chunk {
                chunk_id: Chunk::make_id(&nb.notebook_id, ordinal),
                notebook_id: nb.notebook_id.clone(),
                chunk_ordinal: ordinal,
                markdown_cells,
                code_cells,
                rendered_text,
            }
        })
        .collect()
}

/// Markdown sources separated by blank lines, then each code cell as a
/// ```` ```python ```` fenced block. Trailing whitespace of each cell is dropped.
pub fn render_chunk_text(chunk: &Chunk) -> String {
    render_cells(&chunk.markdown_cells, &chunk.code_cells)
}

fn render_cells(markdown: &[Cell], code: &[Cell]) -> String {
    let blocks: Vec<String> = markdown
        .iter()
        .map(|c| c.source.trim_end().to_string())
        .chain(
            code.iter()
                .map(|c| format!("```python\n{}\n```", c.source.trim_end())),
        )
        .collect();
    let mut out = blocks.join("\n\n");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nb(kinds: &[CellKind]) -> Notebook {
        Notebook {
            notebook_id: "nb".into(),
            cells: kinds
                .iter()
                .enumerate()
                .map(|(i, k)| Cell {
                    kind: *k,
                    source: format!("cell{i}"),
                    ordinal: i,
                })
                .collect(),
            language: "python".into(),
        }
    }

    fn shape(chunks: &[Chunk]) -> Vec<(Vec<usize>, Vec<usize>)> {
        chunks
            .iter()
            .map(|c| {
                (
                    c.markdown_cells.iter().map(|x| x.ordinal).collect(),
                    c.code_cells.iter().map(|x| x.ordinal).collect(),
                )
            })
            .collect()
    }

    use CellKind::{Code as C, Markdown as M};

    #[test]
    fn smallest_unit() {
        assert_eq!(shape(&chunk_notebook(&nb(&[M, C]))), vec![(vec![0], vec![1])]);
    }

    #[test]
    fn two_groups() {
        assert_eq!(
            shape(&chunk_notebook(&nb(&[M, M, C, C, M, C]))),
            vec![(vec![0, 1], vec![2, 3]), (vec![4], vec![5])]
        );
    }

    #[test]
    fn leading_code_and_trailing_markdown() {
        let chunks = chunk_notebook(&nb(&[C, M, C, M]));
        assert_eq!(
            shape(&chunks),
            vec![(vec![], vec![0]), (vec![1], vec![2]), (vec![3], vec![])]
        );
        assert_eq!(chunks[2].chunk_id, "nb#2");
    }

    fn chunk_of(md: &[&str], code: &[&str]) -> Chunk {
        let cell = |kind, s: &&str| Cell { kind, source: s.to_string(), ordinal: 0 };
        Chunk {
            chunk_id: "x#0".into(),
            notebook_id: "x".into(),
            chunk_ordinal: 0,
            markdown_cells: md.iter().map(|s| cell(M, s)).collect(),
            code_cells: code.iter().map(|s| cell(C, s)).collect(),
            rendered_text: String::new(),
        }
    }

    #[test]
    fn render_markdown_and_code() {
        assert_eq!(
            render_chunk_text(&chunk_of(&["# Load data"], &["import pandas as pd"])),
            "# Load data\n\n```python\nimport pandas as pd\n```\n"
        );
    }

    #[test]
    fn render_code_only() {
        assert_eq!(render_chunk_text(&chunk_of(&[], &["x=1"])), "```python\nx=1\n```\n");
    }

    #[test]
    fn render_markdown_only() {
        assert_eq!(
            render_chunk_text(&chunk_of(&["See below", "and here"], &[])),
            "See below\n\nand here\n"
        );
    }

    #[test]
    fn render_multiple_code_blocks_strips_trailing_newlines() {
        assert_eq!(
            render_chunk_text(&chunk_of(&["a\n"], &["x=1\n", "y=2"])),
            "a\n\n```python\nx=1\n```\n\n```python\ny=2\n```\n"
        );
    }
}
