//! Minimal CSV writer with lossless number formatting.

/// Formats with 17 significant digits (`d.dddddddddddddddde±x`), which
/// round-trips every finite double.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Row-oriented table rendered with `\n` line endings and no quoting
/// (all cells are numbers or plain identifiers).
#[derive(Debug, Clone, Default)]
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> CsvTable {
        CsvTable {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::with_capacity(32 * (self.rows.len() + 1) * self.header.len().max(1));
        out.push_str(&self.header.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}
