//! Regenerates the bundled smoke fixture under `fixtures/smoke/`.
//!
//! Run explicitly after changing the corpus layout, the transcript format
//! or the agent protocol:
//!
//! ```text
//! cargo test -p docrag-core --test fixture_gen -- --ignored
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

const DIM: usize = 12;
const DOC_A: &str = "aurora-handbook.pdf";
const DOC_B: &str = "tidal-survey.pdf";

fn smoke_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/smoke")
}

/// Page index (0..12) to (doc, page_number): doc A pages 1..=6, doc B 1..=6.
fn page_doc(idx: usize) -> (&'static str, u32) {
    if idx < 6 {
        (DOC_A, idx as u32 + 1)
    } else {
        (DOC_B, idx as u32 - 5)
    }
}

fn write(path: &Path, contents: &str) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, contents).unwrap();
}

fn jsonl(lines: &[serde_json::Value]) -> String {
    let mut out = String::new();
    for line in lines {
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

/// Base low-score weight for a page not targeted by a query; distinct per
/// page so rankings never tie.
fn visual_low(idx: usize) -> f64 {
    0.05 + 0.005 * idx as f64
}

fn textual_low(idx: usize) -> f64 {
    0.04 + 0.004 * idx as f64
}

fn weights(overrides: &[(usize, f64)], low: fn(usize) -> f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..DIM).map(low).collect();
    for &(idx, value) in overrides {
        w[idx] = value;
    }
    w
}

struct Query {
    uid: &'static str,
    query: &'static str,
    answer: &'static str,
    file_name: &'static str,
    reference_page: Vec<u32>,
    source_type: &'static str,
    query_type: &'static str,
    visual: Vec<f64>,
    textual: Vec<f64>,
}

fn queries() -> Vec<Query> {
    vec![
        Query {
            uid: "q-aurora-altitude",
            query:
                "At what altitude does the aurora handbook place the peak auroral emission layer?",
            answer: "around 110 km",
            file_name: DOC_A,
            reference_page: vec![2],
            source_type: "chart",
            query_type: "Single-Hop",
            visual: weights(&[(1, 0.9)], visual_low),
            textual: weights(&[(1, 0.88)], textual_low),
        },
        Query {
            uid: "q-tidal-gauge",
            query:
                "Which gauge station records the largest spring tidal range in the tidal survey?",
            answer: "Station Delta",
            file_name: DOC_B,
            reference_page: vec![4],
            source_type: "table",
            query_type: "Single-Hop",
            visual: weights(&[(9, 0.9)], visual_low),
            textual: weights(&[(9, 0.88)], textual_low),
        },
        Query {
            uid: "q-aurora-spectra",
            query:
                "Which two wavelengths dominate the aurora handbook's emission spectra comparison?",
            answer: "557.7 nm and 630.0 nm",
            file_name: DOC_A,
            reference_page: vec![3, 5],
            source_type: "2d_layout",
            query_type: "Multi-Hop",
            visual: weights(
                &[
                    (0, 0.78),
                    (1, 0.77),
                    (2, 0.90),
                    (3, 0.76),
                    (4, 0.88),
                    (5, 0.75),
                ],
                visual_low,
            ),
            textual: weights(&[(4, 0.90), (2, 0.84)], textual_low),
        },
    ]
}

fn seeker(reason: &str, summary: &str, choice: &[usize]) -> String {
    json!({"reason": reason, "summary": summary, "choice": choice}).to_string()
}

fn inspector_answer(reason: &str, answer: &str, reference: &[usize]) -> String {
    json!({"reason": reason, "answer": answer, "reference": reference}).to_string()
}

fn inspector_feedback(reason: &str, information: &str, choice: &[usize]) -> String {
    json!({"reason": reason, "information": information, "choice": choice}).to_string()
}

fn entry(agent: &str, step: u32, response: &str) -> serde_json::Value {
    json!({"match": {"agent": agent, "step": step}, "response": response})
}

#[test]
#[ignore = "regenerates the committed smoke fixture"]
fn regenerate_smoke_fixture() {
    let root = smoke_dir();

    // Page images: small distinct-color PNGs.
    for idx in 0..DIM {
        let (doc, page) = page_doc(idx);
        let dir = root.join("images").join(doc.trim_end_matches(".pdf"));
        fs::create_dir_all(&dir).unwrap();
        let shade = (idx * 20) as u8;
        image::RgbImage::from_pixel(8, 8, image::Rgb([shade, 128, 255 - shade]))
            .save(dir.join(format!("p{page}.png")))
            .unwrap();
    }

    // Manifest: two 6-page documents, both embedding tables, one chunk per page.
    let documents = [DOC_A, DOC_B].map(|doc| {
        json!({
            "doc_id": doc,
            "pages": (1..=6).map(|n| json!({
                "page_number": n,
                "image_path": format!("images/{}/p{n}.png", doc.trim_end_matches(".pdf")),
            })).collect::<Vec<_>>(),
        })
    });
    write(
        &root.join("manifest.json"),
        &serde_json::to_string_pretty(&json!({
            "documents": documents,
            "embeddings": {
                "visual": {"path": "embeddings/visual.jsonl", "dimension": DIM},
                "textual": {"path": "embeddings/textual.jsonl", "dimension": DIM},
            },
            "chunks": "chunks.jsonl",
        }))
        .unwrap(),
    );

    // Orthonormal page/chunk embeddings: page j and chunk j sit on axis j,
    // so a query vector's components are exactly the intended scores.
    let axis =
        |j: usize| -> Vec<f64> { (0..DIM).map(|i| if i == j { 1.0 } else { 0.0 }).collect() };
    let visual_lines: Vec<_> = (0..DIM)
        .map(|j| {
            let (doc, page) = page_doc(j);
            json!({"unit_id": format!("{doc}#{page}"), "vector": axis(j)})
        })
        .collect();
    write(&root.join("embeddings/visual.jsonl"), &jsonl(&visual_lines));

    let chunk_lines: Vec<_> = (0..DIM)
        .map(|j| {
            let (doc, page) = page_doc(j);
            json!({
                "chunk_id": format!("chunk-{j}"),
                "page_id": format!("{doc}#{page}"),
                "text": format!("OCR text of {doc} page {page}"),
            })
        })
        .collect();
    write(&root.join("chunks.jsonl"), &jsonl(&chunk_lines));
    let textual_lines: Vec<_> = (0..DIM)
        .map(|j| json!({"unit_id": format!("chunk-{j}"), "vector": axis(j)}))
        .collect();
    write(
        &root.join("embeddings/textual.jsonl"),
        &jsonl(&textual_lines),
    );

    // Dataset and query-vector sidecars.
    let qs = queries();
    let dataset: Vec<_> = qs
        .iter()
        .map(|q| {
            json!({
                "uid": q.uid,
                "query": q.query,
                "reference_answer": q.answer,
                "meta_info": {
                    "file_name": q.file_name,
                    "reference_page": q.reference_page,
                    "source_type": q.source_type,
                    "query_type": q.query_type,
                },
            })
        })
        .collect();
    write(
        &root.join("dataset.json"),
        &serde_json::to_string_pretty(&dataset).unwrap(),
    );
    let sidecar = |pick: fn(&Query) -> &Vec<f64>| -> Vec<serde_json::Value> {
        qs.iter()
            .map(|q| json!({"unit_id": q.uid, "vector": pick(q)}))
            .collect()
    };
    write(
        &root.join("query_embeddings/visual.jsonl"),
        &jsonl(&sidecar(|q| &q.visual)),
    );
    write(
        &root.join("query_embeddings/textual.jsonl"),
        &jsonl(&sidecar(|q| &q.textual)),
    );

    // Scripted transcripts. Generation and judge share one session per
    // query run; choices are positional in the candidate list, so they are
    // written to stay in range under every retrieval mode.
    let transcripts = root.join("transcripts");
    fs::create_dir_all(&transcripts).unwrap();

    // q-aurora-altitude, multi-agent: one round, draft covers the whole
    // inspection set, no answer-agent call.
    write(
        &transcripts.join("q-aurora-altitude.multi-agent.jsonl"),
        &jsonl(&[
            entry("seeker", 0, &seeker(
                "Image 0 is the altitude chart of the emission layers; the others are prose pages without altitude data.",
                "The altitude chart marks the peak emission layer near 110 km.",
                &[0],
            )),
            entry("inspector", 0, &inspector_answer(
                "The chart axis labels the peak auroral emission layer at roughly 110 km.",
                "around 110 km",
                &[0],
            )),
            entry("judge", 0, "5"),
        ]),
    );

    // q-tidal-gauge, multi-agent: feedback round with a retained page, then
    // a draft covering both shown pages.
    write(
        &transcripts.join("q-tidal-gauge.multi-agent.jsonl"),
        &jsonl(&[
            entry("seeker", 0, &seeker(
                "Images 0 and 1 contain gauge tables; the rest are maps without range figures.",
                "Gauge tables list spring ranges per station.",
                &[0, 1],
            )),
            entry("inspector", 0, &inspector_feedback(
                "The tables list stations but the spring range totals column is cut off on image 0.",
                "The page with the full spring range totals column.",
                &[1],
            )),
            entry("seeker", 1, &seeker(
                "Image 0 shows the totals column continuation.",
                "The totals column continues with Station Delta at the top.",
                &[0],
            )),
            entry("inspector", 1, &inspector_answer(
                "Across both pages Station Delta holds the largest spring range.",
                "Station Delta",
                &[0, 1],
            )),
            entry("judge", 0, "4"),
        ]),
    );

    // q-aurora-spectra, multi-agent: draft references a proper subset, so
    // the answer agent makes exactly one consistency call.
    write(
        &transcripts.join("q-aurora-spectra.multi-agent.jsonl"),
        &jsonl(&[
            entry("seeker", 0, &seeker(
                "Images 0 to 2 are spectra pages; image 0 carries the comparison panel.",
                "The comparison panel overlays the two dominant emission lines.",
                &[0, 1, 2],
            )),
            entry("inspector", 0, &inspector_answer(
                "The comparison panel on image 0 labels the dominant lines; the other pages repeat them.",
                "557.7 nm and 630.0 nm",
                &[0],
            )),
            entry("answer", 0, &inspector_answer(
                "The panel confirms the green 557.7 nm line and the red 630.0 nm line dominate.",
                "557.7 nm and 630.0 nm",
                &[0],
            )),
            entry("judge", 0, "5"),
        ]),
    );

    // Naive-generation transcripts: one call plus the judge. The naive
    // baseline misses the multi-hop query, mirroring the accuracy gap.
    let naive_cases = [
        ("q-aurora-altitude", "around 110 km", "4"),
        ("q-tidal-gauge", "Station Echo", "3"),
        ("q-aurora-spectra", "557.7 nm and 630.0 nm", "4"),
    ];
    for (uid, answer, score) in naive_cases {
        write(
            &transcripts.join(format!("{uid}.naive.jsonl")),
            &jsonl(&[
                entry(
                    "naive",
                    0,
                    &inspector_answer("Read directly from the retrieved pages.", answer, &[0]),
                ),
                entry("judge", 0, score),
            ]),
        );
    }

    // Engine config wired to the scripted backend.
    write(
        &root.join("engine.toml"),
        r#"# Engine configuration for the bundled smoke corpus.
index_dir = "index"
dataset = "dataset.json"
default_generation = "replay"
default_judge = "replay"

[query_embeddings]
visual = "query_embeddings/visual.jsonl"
textual = "query_embeddings/textual.jsonl"

[backends.replay]
kind = "scripted"
transcript_dir = "transcripts"
"#,
    );

    println!("smoke fixture regenerated at {}", root.display());
}
