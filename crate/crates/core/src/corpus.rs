//! Corpus ingestion and page registry.
//!
//! A corpus is a set of documents, each a contiguous run of pages numbered
//! from 1. Ingestion reads a JSON manifest, validates page images, OCR
//! chunks and per-modality embeddings against each other, normalizes every
//! vector to unit length, and persists the whole thing into a single index
//! directory with an atomic swap. After ingest the corpus handle is
//! immutable and can be shared freely across threads.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Opaque page key, `"<doc_id>#<page_number>"` for manifest-derived pages.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PageId(pub String);

impl PageId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PageId {
    fn from(s: &str) -> Self {
        PageId(s.to_string())
    }
}

/// Opaque OCR-chunk key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChunkId(pub String);

impl fmt::Display for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Retrieval pipeline modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Textual,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Visual, Modality::Textual];

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Textual => "textual",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "visual" => Ok(Modality::Visual),
            "textual" => Ok(Modality::Textual),
            other => Err(CorpusError::Schema(format!("unknown modality `{other}`"))),
        }
    }
}

/// One OCR text chunk on a page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub chunk_id: ChunkId,
    pub page_id: PageId,
    pub text: String,
}

/// One page of one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageRecord {
    pub page_id: PageId,
    pub doc_id: String,
    /// Ingestion order of the owning document, starting at 0.
    pub doc_ordinal: usize,
    /// Position within the document, starting at 1.
    pub page_number: u32,
    pub image_path: PathBuf,
    pub ocr_chunks: Vec<ChunkRecord>,
}

/// Per-modality map from unit id (page id or chunk id) to a unit vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub modality: Modality,
    pub dimension: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(modality: Modality, dimension: usize) -> Self {
        EmbeddingTable {
            modality,
            dimension,
            entries: BTreeMap::new(),
        }
    }

    /// Normalizes and stores one vector. Rejects wrong lengths and
    /// (near-)zero vectors, which cannot be normalized.
    pub fn insert(&mut self, unit_id: &str, vector: Vec<f64>) -> Result<(), CorpusError> {
        if vector.len() != self.dimension {
            return Err(CorpusError::DimensionMismatch {
                modality: self.modality,
                unit_id: unit_id.to_string(),
                expected: self.dimension,
                got: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::Schema(format!(
                "non-finite component in vector for unit `{unit_id}`"
            )));
        }
        let normalized = normalize(&vector).ok_or_else(|| CorpusError::ZeroVector {
            unit_id: unit_id.to_string(),
        })?;
        if self
            .entries
            .insert(unit_id.to_string(), normalized)
            .is_some()
        {
            return Err(CorpusError::DuplicateEmbedding {
                modality: self.modality,
                unit_id: unit_id.to_string(),
            });
        }
        Ok(())
    }

    pub fn get(&self, unit_id: &str) -> Option<&[f64]> {
        self.entries.get(unit_id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.entries.iter()
    }
}

/// Scales a vector to Euclidean norm 1. `None` for norms below 1e-12.
pub fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return None;
    }
    Some(v.iter().map(|x| x / norm).collect())
}

/// One annotated benchmark query, validated against the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub uid: String,
    pub query: String,
    pub reference_answer: String,
    pub file_name: String,
    pub reference_page: Vec<u32>,
    pub source_type: String,
    pub query_type: String,
    /// `reference_page` entries resolved to page ids at load time.
    pub reference_page_ids: Vec<PageId>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("duplicate page {page_number} in document `{doc_id}`")]
    DuplicatePage { doc_id: String, page_number: u32 },
    #[error("pages of document `{doc_id}` are not a contiguous range starting at 1 (got {got:?})")]
    NonContiguousPages { doc_id: String, got: Vec<u32> },
    #[error(
        "{modality} vector for unit `{unit_id}` has length {got}, declared dimension is {expected}"
    )]
    DimensionMismatch {
        modality: Modality,
        unit_id: String,
        expected: usize,
        got: usize,
    },
    #[error("chunk `{chunk_id}` references unknown page `{page_id}`")]
    DanglingChunk { chunk_id: String, page_id: String },
    #[error("duplicate chunk id `{0}`")]
    DuplicateChunk(String),
    #[error("{modality} embedding references unknown unit `{unit_id}`")]
    UnknownEmbeddingUnit { modality: Modality, unit_id: String },
    #[error("duplicate {modality} embedding for unit `{unit_id}`")]
    DuplicateEmbedding { modality: Modality, unit_id: String },
    #[error("vector for unit `{unit_id}` has zero norm")]
    ZeroVector { unit_id: String },
    #[error("unknown page `{0}`")]
    UnknownPage(PageId),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("query `{uid}` references page {page} of `{file_name}`, which is not in the corpus")]
    UnresolvedReference {
        uid: String,
        file_name: String,
        page: u32,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    documents: Vec<ManifestDocument>,
    #[serde(default)]
    embeddings: BTreeMap<Modality, EmbeddingSpec>,
    #[serde(default)]
    chunks: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestDocument {
    doc_id: String,
    pages: Vec<ManifestPage>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestPage {
    page_number: u32,
    image_path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbeddingSpec {
    path: PathBuf,
    dimension: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Registry {
    schema_version: u32,
    pages: Vec<PageRecord>,
    embeddings: Vec<RegistryEmbedding>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RegistryEmbedding {
    modality: Modality,
    dimension: usize,
    file: String,
}

const REGISTRY_FILE: &str = "registry.json";
const MANIFEST_SNAPSHOT: &str = "manifest.json";
const SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Corpus handle
// ---------------------------------------------------------------------------

/// Immutable, share-everywhere view of an ingested corpus.
#[derive(Debug)]
pub struct CorpusHandle {
    /// All pages in canonical `(doc_ordinal, page_number)` order.
    pages: Vec<PageRecord>,
    rank_by_id: HashMap<PageId, usize>,
    id_by_doc_page: HashMap<(String, u32), PageId>,
    tables: BTreeMap<Modality, EmbeddingTable>,
    doc_count: usize,
    chunk_count: usize,
}

impl CorpusHandle {
    fn build(
        pages: Vec<PageRecord>,
        tables: BTreeMap<Modality, EmbeddingTable>,
    ) -> Result<Self, CorpusError> {
        let mut rank_by_id = HashMap::with_capacity(pages.len());
        let mut id_by_doc_page = HashMap::with_capacity(pages.len());
        let mut docs = HashSet::new();
        let mut chunk_count = 0;
        for (rank, page) in pages.iter().enumerate() {
            rank_by_id.insert(page.page_id.clone(), rank);
            id_by_doc_page.insert(
                (page.doc_id.clone(), page.page_number),
                page.page_id.clone(),
            );
            docs.insert(page.doc_id.clone());
            chunk_count += page.ocr_chunks.len();
        }
        // Every embedding unit must exist in the registry.
        let chunk_ids: HashSet<&str> = pages
            .iter()
            .flat_map(|p| p.ocr_chunks.iter().map(|c| c.chunk_id.0.as_str()))
            .collect();
        for table in tables.values() {
            for (unit_id, _) in table.iter() {
                let known = match table.modality {
                    Modality::Visual => rank_by_id.contains_key(&PageId(unit_id.clone())),
                    Modality::Textual => chunk_ids.contains(unit_id.as_str()),
                };
                if !known {
                    return Err(CorpusError::UnknownEmbeddingUnit {
                        modality: table.modality,
                        unit_id: unit_id.clone(),
                    });
                }
            }
        }
        Ok(CorpusHandle {
            doc_count: docs.len(),
            chunk_count,
            pages,
            rank_by_id,
            id_by_doc_page,
            tables,
        })
    }

    pub fn page_count(&self) -> usize {
        self.pages.len()
    }

    pub fn document_count(&self) -> usize {
        self.doc_count
    }

    pub fn chunk_count(&self) -> usize {
        self.chunk_count
    }

    /// Pages in canonical order.
    pub fn pages(&self) -> &[PageRecord] {
        &self.pages
    }

    pub fn page(&self, id: &PageId) -> Option<&PageRecord> {
        self.rank_by_id.get(id).map(|&rank| &self.pages[rank])
    }

    /// Position of a page in the canonical order.
    pub fn canonical_rank(&self, id: &PageId) -> Option<usize> {
        self.rank_by_id.get(id).copied()
    }

    pub fn resolve(&self, doc_id: &str, page_number: u32) -> Option<&PageId> {
        self.id_by_doc_page.get(&(doc_id.to_string(), page_number))
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.tables.keys().copied().collect()
    }

    pub fn table(&self, modality: Modality) -> Option<&EmbeddingTable> {
        self.tables.get(&modality)
    }

    /// Deduplicates and sorts page ids ascending by `(doc_ordinal, page_number)`.
    pub fn canonical_order<I>(&self, page_ids: I) -> Result<Vec<PageId>, CorpusError>
    where
        I: IntoIterator,
        I::Item: std::borrow::Borrow<PageId>,
    {
        let mut ranks = BTreeSet::new();
        for id in page_ids {
            let id = id.borrow();
            let rank = self
                .canonical_rank(id)
                .ok_or_else(|| CorpusError::UnknownPage(id.clone()))?;
            ranks.insert(rank);
        }
        Ok(ranks
            .into_iter()
            .map(|r| self.pages[r].page_id.clone())
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Ingest
// ---------------------------------------------------------------------------

/// What `ingest_corpus` did to the on-disk index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Created,
    Replaced,
    Unchanged,
}

/// Ingests a manifest into `index_dir` (atomic replace) and returns the handle.
pub fn ingest_corpus(manifest_path: &Path, index_dir: &Path) -> Result<CorpusHandle, CorpusError> {
    ingest_corpus_with_outcome(manifest_path, index_dir).map(|(handle, _)| handle)
}

/// Like [`ingest_corpus`] but also reports whether the persisted index changed.
pub fn ingest_corpus_with_outcome(
    manifest_path: &Path,
    index_dir: &Path,
) -> Result<(CorpusHandle, IngestOutcome), CorpusError> {
    if !manifest_path.is_file() {
        return Err(CorpusError::MissingFile(manifest_path.to_path_buf()));
    }
    let raw = fs::read_to_string(manifest_path).map_err(|e| io_err(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&raw).map_err(|e| CorpusError::Parse {
        path: manifest_path.to_path_buf(),
        source: e,
    })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    // Pages, in manifest order per document, validated for contiguity.
    let mut pages = Vec::new();
    for (ordinal, doc) in manifest.documents.iter().enumerate() {
        let mut doc_pages = doc.pages.clone();
        let mut seen = HashSet::new();
        for page in &doc_pages {
            if !seen.insert(page.page_number) {
                return Err(CorpusError::DuplicatePage {
                    doc_id: doc.doc_id.clone(),
                    page_number: page.page_number,
                });
            }
        }
        doc_pages.sort_by_key(|p| p.page_number);
        let numbers: Vec<u32> = doc_pages.iter().map(|p| p.page_number).collect();
        if numbers
            .iter()
            .enumerate()
            .any(|(i, &n)| n != (i + 1) as u32)
        {
            return Err(CorpusError::NonContiguousPages {
                doc_id: doc.doc_id.clone(),
                got: numbers,
            });
        }
        for page in doc_pages {
            let image_path = resolve_path(base, &page.image_path);
            if !image_path.is_file() {
                return Err(CorpusError::MissingFile(image_path));
            }
            pages.push(PageRecord {
                page_id: PageId(format!("{}#{}", doc.doc_id, page.page_number)),
                doc_id: doc.doc_id.clone(),
                doc_ordinal: ordinal,
                page_number: page.page_number,
                image_path,
                ocr_chunks: Vec::new(),
            });
        }
    }
    pages.sort_by_key(|a| (a.doc_ordinal, a.page_number));

    // Chunks.
    let mut page_index: HashMap<PageId, usize> = pages
        .iter()
        .enumerate()
        .map(|(i, p)| (p.page_id.clone(), i))
        .collect();
    if let Some(chunks_path) = &manifest.chunks {
        let chunks_path = resolve_path(base, chunks_path);
        let mut seen_chunks = HashSet::new();
        for chunk in read_jsonl::<ChunkRecord>(&chunks_path)? {
            let chunk = chunk?;
            if chunk.text.trim().is_empty() {
                return Err(CorpusError::Schema(format!(
                    "chunk `{}` has empty text",
                    chunk.chunk_id
                )));
            }
            if !seen_chunks.insert(chunk.chunk_id.0.clone()) {
                return Err(CorpusError::DuplicateChunk(chunk.chunk_id.0.clone()));
            }
            match page_index.get(&chunk.page_id) {
                Some(&i) => pages[i].ocr_chunks.push(chunk),
                None => {
                    return Err(CorpusError::DanglingChunk {
                        chunk_id: chunk.chunk_id.0.clone(),
                        page_id: chunk.page_id.0.clone(),
                    })
                }
            }
        }
    }
    page_index.clear();

    // Embeddings.
    let mut tables = BTreeMap::new();
    for (&modality, spec) in &manifest.embeddings {
        let path = resolve_path(base, &spec.path);
        let mut table = EmbeddingTable::new(modality, spec.dimension);
        for line in read_jsonl::<EmbeddingLine>(&path)? {
            let line = line?;
            table.insert(&line.unit_id, line.vector)?;
        }
        tables.insert(modality, table);
    }

    let handle = CorpusHandle::build(pages, tables)?;
    let outcome = persist(&handle, &manifest, index_dir)?;
    Ok((handle, outcome))
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingLine {
    unit_id: String,
    vector: Vec<f64>,
}

fn resolve_path(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(
    path: &Path,
) -> Result<impl Iterator<Item = Result<T, CorpusError>> + '_, CorpusError> {
    if !path.is_file() {
        return Err(CorpusError::MissingFile(path.to_path_buf()));
    }
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let path = path.to_path_buf();
    Ok(BufReader::new(file)
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(move |line| {
            let line = line.map_err(|e| io_err(&path, e))?;
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                path: path.clone(),
                source: e,
            })
        }))
}

/// Serializes the corpus into a temp directory next to `index_dir`, then
/// swaps it in. Returns `Unchanged` when the bytes already match.
fn persist(
    handle: &CorpusHandle,
    manifest: &Manifest,
    index_dir: &Path,
) -> Result<IngestOutcome, CorpusError> {
    let parent = index_dir.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    let tmp = parent.join(format!(
        ".{}.tmp-{}",
        index_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "index".to_string()),
        std::process::id()
    ));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| io_err(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| io_err(&tmp, e))?;

    let mut embeddings_meta = Vec::new();
    for table in handle.tables.values() {
        let file = format!("embeddings_{}.jsonl", table.modality);
        let mut out = String::new();
        for (unit_id, vector) in table.iter() {
            let line = serde_json::to_string(&EmbeddingLine {
                unit_id: unit_id.clone(),
                vector: vector.clone(),
            })
            .expect("embedding line serializes");
            out.push_str(&line);
            out.push('\n');
        }
        fs::write(tmp.join(&file), out).map_err(|e| io_err(&tmp, e))?;
        embeddings_meta.push(RegistryEmbedding {
            modality: table.modality,
            dimension: table.dimension,
            file,
        });
    }
    let registry = Registry {
        schema_version: SCHEMA_VERSION,
        pages: handle.pages.clone(),
        embeddings: embeddings_meta,
    };
    write_pretty_json(&tmp.join(REGISTRY_FILE), &registry)?;
    write_pretty_json(&tmp.join(MANIFEST_SNAPSHOT), manifest)?;

    if index_dir.exists() && dirs_identical(&tmp, index_dir)? {
        fs::remove_dir_all(&tmp).map_err(|e| io_err(&tmp, e))?;
        return Ok(IngestOutcome::Unchanged);
    }
    let outcome = if index_dir.exists() {
        let old = tmp.with_extension("old");
        if old.exists() {
            fs::remove_dir_all(&old).map_err(|e| io_err(&old, e))?;
        }
        fs::rename(index_dir, &old).map_err(|e| io_err(index_dir, e))?;
        fs::rename(&tmp, index_dir).map_err(|e| io_err(&tmp, e))?;
        fs::remove_dir_all(&old).map_err(|e| io_err(&old, e))?;
        IngestOutcome::Replaced
    } else {
        fs::rename(&tmp, index_dir).map_err(|e| io_err(&tmp, e))?;
        IngestOutcome::Created
    };
    Ok(outcome)
}

fn write_pretty_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CorpusError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn dirs_identical(a: &Path, b: &Path) -> Result<bool, CorpusError> {
    let list = |dir: &Path| -> Result<BTreeMap<String, PathBuf>, CorpusError> {
        let mut out = BTreeMap::new();
        for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
            let entry = entry.map_err(|e| io_err(dir, e))?;
            if entry.path().is_file() {
                out.insert(
                    entry.file_name().to_string_lossy().into_owned(),
                    entry.path(),
                );
            }
        }
        Ok(out)
    };
    let (fa, fb) = (list(a)?, list(b)?);
    if fa.keys().collect::<Vec<_>>() != fb.keys().collect::<Vec<_>>() {
        return Ok(false);
    }
    for (name, pa) in &fa {
        let pb = &fb[name];
        let ba = fs::read(pa).map_err(|e| io_err(pa, e))?;
        let bb = fs::read(pb).map_err(|e| io_err(pb, e))?;
        if ba != bb {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Opens a previously ingested index directory.
pub fn open_corpus(index_dir: &Path) -> Result<CorpusHandle, CorpusError> {
    let registry_path = index_dir.join(REGISTRY_FILE);
    if !registry_path.is_file() {
        return Err(CorpusError::MissingFile(registry_path));
    }
    let raw = fs::read_to_string(&registry_path).map_err(|e| io_err(&registry_path, e))?;
    let registry: Registry = serde_json::from_str(&raw).map_err(|e| CorpusError::Parse {
        path: registry_path.clone(),
        source: e,
    })?;
    if registry.schema_version != SCHEMA_VERSION {
        return Err(CorpusError::Schema(format!(
            "index schema version {} is not supported (expected {})",
            registry.schema_version, SCHEMA_VERSION
        )));
    }
    let mut tables = BTreeMap::new();
    for meta in &registry.embeddings {
        let path = index_dir.join(&meta.file);
        let mut table = EmbeddingTable::new(meta.modality, meta.dimension);
        for line in read_jsonl::<EmbeddingLine>(&path)? {
            let line = line?;
            table.insert(&line.unit_id, line.vector)?;
        }
        tables.insert(meta.modality, table);
    }
    CorpusHandle::build(registry.pages, tables)
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct RawQuery {
    uid: String,
    query: String,
    reference_answer: String,
    meta_info: RawMeta,
}

#[derive(Debug, Deserialize)]
struct RawMeta {
    file_name: String,
    reference_page: Vec<u32>,
    source_type: String,
    query_type: String,
}

/// Loads an annotated query dataset (JSON array or JSONL) and resolves every
/// reference page against the corpus.
pub fn load_dataset(path: &Path, corpus: &CorpusHandle) -> Result<Vec<QueryRecord>, CorpusError> {
    if !path.is_file() {
        return Err(CorpusError::MissingFile(path.to_path_buf()));
    }
    let raw = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let records: Vec<RawQuery> = if raw.trim_start().starts_with('[') {
        serde_json::from_str(&raw).map_err(|e| CorpusError::Schema(e.to_string()))?
    } else {
        raw.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| CorpusError::Schema(e.to_string())))
            .collect::<Result<_, _>>()?
    };

    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        if rec.meta_info.reference_page.is_empty() {
            return Err(CorpusError::Schema(format!(
                "query `{}` has an empty reference_page list",
                rec.uid
            )));
        }
        let mut page_ids = Vec::with_capacity(rec.meta_info.reference_page.len());
        for &page in &rec.meta_info.reference_page {
            let id = corpus
                .resolve(&rec.meta_info.file_name, page)
                .ok_or_else(|| CorpusError::UnresolvedReference {
                    uid: rec.uid.clone(),
                    file_name: rec.meta_info.file_name.clone(),
                    page,
                })?;
            page_ids.push(id.clone());
        }
        out.push(QueryRecord {
            uid: rec.uid,
            query: rec.query,
            reference_answer: rec.reference_answer,
            file_name: rec.meta_info.file_name,
            reference_page: rec.meta_info.reference_page,
            source_type: rec.meta_info.source_type,
            query_type: rec.meta_info.query_type,
            reference_page_ids: page_ids,
        });
    }
    Ok(out)
}

/// Loads a sidecar of query vectors, JSONL `{"unit_id": ..., "vector": [...]}`
/// keyed by query uid.
pub fn load_query_vectors(path: &Path) -> Result<HashMap<String, Vec<f64>>, CorpusError> {
    let mut out = HashMap::new();
    for line in read_jsonl::<EmbeddingLine>(path)? {
        let line = line?;
        out.insert(line.unit_id, line.vector);
    }
    Ok(out)
}

/// Per-modality query vector sidecars, keyed by query uid.
#[derive(Debug, Clone, Default)]
pub struct QueryVectorTable {
    tables: BTreeMap<Modality, HashMap<String, Vec<f64>>>,
}

impl QueryVectorTable {
    pub fn load(paths: &BTreeMap<Modality, PathBuf>) -> Result<Self, CorpusError> {
        let mut tables = BTreeMap::new();
        for (&modality, path) in paths {
            tables.insert(modality, load_query_vectors(path)?);
        }
        Ok(QueryVectorTable { tables })
    }

    pub fn insert(&mut self, modality: Modality, vectors: HashMap<String, Vec<f64>>) {
        self.tables.insert(modality, vectors);
    }

    /// Every modality vector available for a query uid.
    pub fn vectors_for(&self, uid: &str) -> BTreeMap<Modality, Vec<f64>> {
        self.tables
            .iter()
            .filter_map(|(&modality, table)| table.get(uid).map(|v| (modality, v.clone())))
            .collect()
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.tables.keys().copied().collect()
    }
}

// ---------------------------------------------------------------------------
