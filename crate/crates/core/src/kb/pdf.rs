//! PDF text extraction.

use std::panic::{catch_unwind, AssertUnwindSafe};

/// Text of one PDF, page by page.
#[derive(Debug, Clone, PartialEq)]
pub struct PdfText {
    pub pages: Vec<String>,
    /// Fraction of characters that decoded cleanly.
    pub coverage: f64,
}

impl PdfText {
    /// Pages joined by blank lines; chunk spans refer to this text.
    pub fn joined(&self) -> String {
        self.pages.join("\n\n")
    }
}

/// Replaces undecodable glyphs and control characters by spaces and returns
/// the cleaned text with the number of replacements.
pub fn sanitize(text: &str) -> (String, usize) {
    let mut bad = 0;
    let cleaned = text
        .chars()
        .map(|c| {
            if c == '\u{FFFD}' || (c.is_control() && c != '\n' && c != '\t') {
                bad += 1;
                ' '
            } else {
                c
            }
        })
        .collect();
    (cleaned, bad)
}

pub fn extract(bytes: &[u8]) -> Result<PdfText, String> {
    // the extractor panics on some malformed inputs
    let result = catch_unwind(AssertUnwindSafe(|| pdf_extract::extract_text_from_mem_by_pages(bytes)));
    let raw_pages = match result {
        Ok(Ok(pages)) => pages,
        Ok(Err(e)) => return Err(e.to_string()),
        Err(_) => return Err("PDF extractor panicked".into()),
    };
    let mut total = 0usize;
    let mut bad = 0usize;
    let pages = raw_pages
        .iter()
        .map(|p| {
            total += p.chars().count();
            let (clean, n) = sanitize(p);
            bad += n;
            clean
        })
        .collect();
    let coverage = if total == 0 {
        1.0
    } else {
        1.0 - bad as f64 / total as f64
    };
    Ok(PdfText { pages, coverage })
}
