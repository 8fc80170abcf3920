//! Per-user knowledge base.
//!
//! A knowledge base is a directory of Markdown, PDF and PNG/JPG files:
//!
//! ```text
//! <kb>/rules.md                 parameter rules
//! <kb>/params.md                parameter notes and the question list
//! <kb>/script_template.md       reconstruction script template (fenced block)
//! <kb>/prompts/*.md             agent prompt templates
//! <kb>/docs/*.pdf               reference documents, chunked for retrieval
//! <kb>/images/*.{png,jpg}       captioned example images
//! <kb>/images/x.png.caption.md  caption sidecar
//! ```
//!
//! Markdown is embedded into prompts verbatim, PDFs are chunked and indexed
//! for hybrid retrieval, and images become few-shot vision examples.

pub mod chunk;
pub mod embed;
pub mod images;
pub mod pdf;
pub mod retrieve;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::types::ChatMessage;
use crate::rulebook::{RuleParseError, RuleSet};
use chunk::{chunk_with, KnowledgeChunk, DEFAULT_CHUNK_SIZE, DEFAULT_OVERLAP};
use embed::{Embedder, HashingEmbedder};
use images::{assemble_fewshot_image_prompt, media_type_for, ImageExample, ImagePayload, OversizeError};
use retrieve::{Corpus, RetrievalHit, DEFAULT_ALPHA};

pub const ADMITTED_EXTENSIONS: [&str; 4] = ["md", "pdf", "png", "jpg"];
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("knowledge base {0} contains no admissible files")]
    Empty(PathBuf),
    #[error("knowledge base is missing {0}")]
    MissingDoc(String),
    #[error("{doc}: {message}")]
    BadDoc { doc: String, message: String },
    #[error(transparent)]
    Rules(#[from] RuleParseError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkdownDoc {
    /// Path relative to the KB root, with `/` separators.
    pub path: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdfSource {
    pub path: String,
    pub pages: usize,
    pub coverage: f64,
}

#[derive(Clone)]
pub struct LoadOptions {
    pub chunk_size: usize,
    pub overlap: usize,
    pub alpha: f64,
    pub payload_limit: usize,
    /// Where to keep the PDF index cache; no caching when None.
    pub cache_dir: Option<PathBuf>,
    pub embedder: Arc<dyn Embedder>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            chunk_size: DEFAULT_CHUNK_SIZE,
            overlap: DEFAULT_OVERLAP,
            alpha: DEFAULT_ALPHA,
            payload_limit: images::DEFAULT_PAYLOAD_LIMIT,
            cache_dir: None,
            embedder: Arc::new(HashingEmbedder::default()),
        }
    }
}

pub struct KnowledgeBase {
    pub name: String,
    pub root: Option<PathBuf>,
    pub markdown_docs: Vec<MarkdownDoc>,
    pub pdf_sources: Vec<PdfSource>,
    pub corpus: Corpus,
    pub image_examples: Vec<ImageExample>,
    pub warnings: Vec<String>,
    pub payload_limit: usize,
    embedder: Arc<dyn Embedder>,
}

impl fmt::Debug for KnowledgeBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KnowledgeBase")
            .field("name", &self.name)
            .field("root", &self.root)
            .field("markdown_docs", &self.markdown_docs.len())
            .field("pdf_chunks", &self.corpus.len())
            .field("image_examples", &self.image_examples.len())
            .finish()
    }
}

fn extension(path: &str) -> Option<String> {
    Path::new(path)
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
}

fn is_caption_sidecar(path: &str) -> bool {
    path.ends_with(".caption.md")
}

fn caption_for(image_path: &str, files: &[(String, Vec<u8>)]) -> Option<String> {
    let stem = image_path.rsplit_once('.').map(|(s, _)| s).unwrap_or(image_path);
    let candidates = [format!("{image_path}.caption.md"), format!("{stem}.caption.md")];
    candidates.iter().find_map(|c| {
        files
            .iter()
            .find(|(p, _)| p == c)
            .map(|(_, bytes)| String::from_utf8_lossy(bytes).trim().to_string())
    })
}

fn file_name(path: &str) -> String {
    path.rsplit('/').next().unwrap_or(path).to_string()
}

#[derive(Serialize, Deserialize)]
struct IndexCache {
    version: u32,
    content_hash: String,
    sources: Vec<PdfSource>,
    chunks: Vec<KnowledgeChunk>,
}

fn pdf_content_hash(pdfs: &[&(String, Vec<u8>)], opts: &LoadOptions) -> String {
    let mut h = Sha256::new();
    h.update(CACHE_VERSION.to_le_bytes());
    h.update((opts.chunk_size as u64).to_le_bytes());
    h.update((opts.overlap as u64).to_le_bytes());
    h.update((opts.embedder.dim() as u64).to_le_bytes());
    for (path, bytes) in pdfs {
        h.update(path.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    format!("{:x}", h.finalize())
}

/// Recursively lists regular files below `root`, sorted, skipping hidden entries.
fn walk(root: &Path, warnings: &mut Vec<String>) -> Result<Vec<PathBuf>, KbError> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(|source| KbError::Io {
            path: dir.clone(),
            source,
        })?;
        for entry in entries {
            let entry = match entry {
                Ok(e) => e,
                Err(e) => {
                    warnings.push(format!("{}: {e}", dir.display()));
                    continue;
                }
            };
            let path = entry.path();
            if entry.file_name().to_string_lossy().starts_with('.') {
                continue;
            }
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Loads a knowledge base directory.
pub fn load_kb(dir: &Path) -> Result<KnowledgeBase, KbError> {
    load_kb_with(dir, &LoadOptions::default())
}

pub fn load_kb_with(dir: &Path, opts: &LoadOptions) -> Result<KnowledgeBase, KbError> {
    let mut warnings = Vec::new();
    let mut files = Vec::new();
    for path in walk(dir, &mut warnings)? {
        let rel = path
            .strip_prefix(dir)
            .unwrap_or(&path)
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        match extension(&rel) {
            Some(ext) if ADMITTED_EXTENSIONS.contains(&ext.as_str()) => {}
            _ => {
                let msg = format!("skipping {rel}: unsupported file type");
                tracing::warn!("{msg}");
                warnings.push(msg);
                continue;
            }
        }
        match fs::read(&path) {
            Ok(bytes) => files.push((rel, bytes)),
            Err(e) => {
                let msg = format!("skipping {rel}: {e}");
                tracing::warn!("{msg}");
                warnings.push(msg);
            }
        }
    }
    if files.is_empty() {
        return Err(KbError::Empty(dir.to_path_buf()));
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "kb".into());
    let mut kb = KnowledgeBase::from_files(&name, files, opts)?;
    kb.root = Some(dir.to_path_buf());
    warnings.append(&mut kb.warnings);
    kb.warnings = warnings;
    Ok(kb)
}

impl KnowledgeBase {
    /// Builds a knowledge base from `(relative path, bytes)` pairs.
    pub fn from_files(name: &str, mut files: Vec<(String, Vec<u8>)>, opts: &LoadOptions) -> Result<Self, KbError> {
        files.sort_by(|a, b| a.0.cmp(&b.0));
        let mut warnings = Vec::new();
        let mut markdown_docs = Vec::new();
        let mut image_examples = Vec::new();
        let mut pdfs = Vec::new();

        for entry in &files {
            let (path, bytes) = entry;
            match extension(path).as_deref() {
                Some("md") if is_caption_sidecar(path) => {}
                Some("md") => match String::from_utf8(bytes.clone()) {
                    Ok(text) => markdown_docs.push(MarkdownDoc {
                        path: path.clone(),
                        text,
                    }),
                    Err(_) => warnings.push(format!("skipping {path}: not UTF-8")),
                },
                Some(ext @ ("png" | "jpg")) => {
                    let caption = caption_for(path, &files).unwrap_or_else(|| file_name(path));
                    image_examples.push(ImageExample {
                        path: PathBuf::from(path),
                        image: ImagePayload::from_bytes(media_type_for(ext), bytes),
                        caption,
                    });
                }
                Some("pdf") => pdfs.push(entry),
                _ => warnings.push(format!("skipping {path}: unsupported file type")),
            }
        }

        let (pdf_sources, chunks) = index_pdfs(name, &pdfs, opts, &mut warnings);
        if markdown_docs.is_empty() && image_examples.is_empty() && pdf_sources.is_empty() {
            return Err(KbError::Empty(PathBuf::from(name)));
        }
        for w in &warnings {
            tracing::warn!("{w}");
        }
        Ok(Self {
            name: name.to_string(),
            root: None,
            markdown_docs,
            pdf_sources,
            corpus: Corpus::new(chunks).with_alpha(opts.alpha),
            image_examples,
            warnings,
            payload_limit: opts.payload_limit,
            embedder: opts.embedder.clone(),
        })
    }

    /// The bundled demo knowledge base.
    pub fn demo() -> Self {
        Self::demo_named("demo")
    }

    pub fn demo_named(name: &str) -> Self {
        Self::from_files(name, demo_files(), &LoadOptions::default()).expect("demo knowledge base loads")
    }

    pub fn doc(&self, path: &str) -> Option<&str> {
        self.markdown_docs
            .iter()
            .find(|d| d.path == path)
            .map(|d| d.text.as_str())
    }

    pub fn require_doc(&self, path: &str) -> Result<&str, KbError> {
        self.doc(path).ok_or_else(|| KbError::MissingDoc(path.to_string()))
    }

    pub fn rules(&self) -> Result<RuleSet, KbError> {
        Ok(RuleSet::parse(self.require_doc("rules.md")?)?)
    }

    /// Prompt template `prompts/<name>.md`.
    pub fn prompt(&self, name: &str) -> Option<&str> {
        self.doc(&format!("prompts/{name}.md"))
    }

    /// Body of the first fenced code block of `script_template.md`, or the
    /// whole file when it has no fence.
    pub fn script_template(&self) -> Result<String, KbError> {
        let text = self.require_doc("script_template.md")?;
        Ok(first_fenced_block(text).unwrap_or_else(|| text.to_string()))
    }

    pub fn embed_query(&self, text: &str) -> Vec<f64> {
        self.embedder
            .embed(text)
            .unwrap_or_else(|_| HashingEmbedder::default().embed_local(text))
    }

    pub fn retrieve(&self, query: &str, k: usize) -> Vec<RetrievalHit> {
        let q = self.embed_query(query);
        self.corpus.retrieve(query, &q, k)
    }

    /// Text of the top `k` chunks, each prefixed with its source.
    pub fn retrieved_context(&self, query: &str, k: usize) -> String {
        self.retrieve(query, k)
            .iter()
            .filter_map(|h| self.corpus.chunk(h.chunk_id))
            .map(|c| format!("[{}] {}", c.source.display(), c.text.trim()))
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn fewshot_prompt(&self, new_image: &ImagePayload, instruction: &str) -> Result<Vec<ChatMessage>, OversizeError> {
        assemble_fewshot_image_prompt(&self.image_examples, new_image, instruction, self.payload_limit)
    }
}

fn first_fenced_block(text: &str) -> Option<String> {
    let mut lines = text.lines();
    lines.by_ref().find(|l| l.trim_start().starts_with("```"))?;
    let mut body = Vec::new();
    for line in lines {
        if line.trim_start().starts_with("```") {
            let mut out = body.join("\n");
            out.push('\n');
            return Some(out);
        }
        body.push(line);
    }
    None
}

fn index_pdfs(
    kb_name: &str,
    pdfs: &[&(String, Vec<u8>)],
    opts: &LoadOptions,
    warnings: &mut Vec<String>,
) -> (Vec<PdfSource>, Vec<KnowledgeChunk>) {
    if pdfs.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let hash = pdf_content_hash(pdfs, opts);
    let cache_path = opts
        .cache_dir
        .as_ref()
        .map(|d| d.join(format!("{kb_name}.index.json")));
    if let Some(path) = &cache_path {
        if let Some(cache) = fs::read(path)
            .ok()
            .and_then(|b| serde_json::from_slice::<IndexCache>(&b).ok())
        {
            if cache.version == CACHE_VERSION && cache.content_hash == hash {
                return (cache.sources, cache.chunks);
            }
        }
    }

    let mut sources = Vec::new();
    let mut chunks = Vec::new();
    for (path, bytes) in pdfs {
        match pdf::extract(bytes) {
            Ok(text) => {
                let joined = text.joined();
                let mut new = chunk_with(
                    &joined,
                    opts.chunk_size,
                    opts.overlap,
                    PathBuf::from(path),
                    chunks.len(),
                    opts.embedder.as_ref(),
                );
                sources.push(PdfSource {
                    path: path.clone(),
                    pages: text.pages.len(),
                    coverage: text.coverage,
                });
                chunks.append(&mut new);
            }
            Err(e) => warnings.push(format!("skipping {path}: {e}")),
        }
    }

    if let Some(path) = &cache_path {
        let cache = IndexCache {
            version: CACHE_VERSION,
            content_hash: hash,
            sources: sources.clone(),
            chunks: chunks.clone(),
        };
        let written = fs::create_dir_all(path.parent().unwrap_or(Path::new(".")))
            .and_then(|_| fs::write(path, serde_json::to_vec(&cache).expect("cache serializes")));
        if let Err(e) = written {
            warnings.push(format!("index cache not written to {}: {e}", path.display()));
        }
    }
    (sources, chunks)
}

// ---------------------------------------------------------------------------
// Demo knowledge base

const DEMO_TEXT_FILES: [(&str, &str); 11] = [
    ("rules.md", include_str!("../../kb/demo/rules.md")),
    ("params.md", include_str!("../../kb/demo/params.md")),
    ("script_template.md", include_str!("../../kb/demo/script_template.md")),
    ("prompts/params_collector.md", include_str!("../../kb/demo/prompts/params_collector.md")),
    ("prompts/params_recommender.md", include_str!("../../kb/demo/prompts/params_recommender.md")),
    ("prompts/params_confirmer.md", include_str!("../../kb/demo/prompts/params_confirmer.md")),
    ("prompts/conversation_summarizer.md", include_str!("../../kb/demo/prompts/conversation_summarizer.md")),
    ("prompts/quality_collector.md", include_str!("../../kb/demo/prompts/quality_collector.md")),
    ("prompts/updates_recommender.md", include_str!("../../kb/demo/prompts/updates_recommender.md")),
    ("prompts/quality_assessor.md", include_str!("../../kb/demo/prompts/quality_assessor.md")),
    ("prompts/single_agent.md", include_str!("../../kb/demo/prompts/single_agent.md")),
];

/// Files of the demo knowledge base, including rendered example images.
pub fn demo_files() -> Vec<(String, Vec<u8>)> {
    use crate::executor::mock::{render_flags_png, MockFlags};

    let mut files: Vec<(String, Vec<u8>)> = DEMO_TEXT_FILES
        .iter()
        .map(|(p, t)| (p.to_string(), t.as_bytes().to_vec()))
        .collect();
    let examples = [
        ("clean", MockFlags::default()),
        (
            "probe_structures",
            MockFlags {
                last_probe_mode_structures: true,
                ..MockFlags::default()
            },
        ),
        (
            "blurred_layers",
            MockFlags {
                per_layer_random_features: true,
                atoms_blurred: true,
                ..MockFlags::default()
            },
        ),
    ];
    for (name, flags) in examples {
        files.push((format!("images/{name}.png"), render_flags_png(&flags)));
        files.push((
            format!("images/{name}.png.caption.md"),
            flags.caption().into_bytes(),
        ));
    }
    files
}

/// Writes the demo knowledge base into `dir`.
pub fn write_demo(dir: &Path) -> Result<(), KbError> {
    for (rel, bytes) in demo_files() {
        let path = dir.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| KbError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        fs::write(&path, bytes).map_err(|source| KbError::Io { path, source })?;
    }
    Ok(())
}
