//! Generators and oracles shared by the acceptance and property suites.
#![allow(dead_code)]

use rand::Rng;

use pear_core::kb::chunk::KnowledgeChunk;
use pear_core::kb::embed::{tokenize, HashingEmbedder};
use pear_core::kb::retrieve::Corpus;
use pear_core::params::ReconstructionParams;

const PATH_CHARS: &[char] = &['a', 'Z', '0', '/', '_', '.', ' ', '"', '\\', 'é', '-', '\''];

fn path(rng: &mut impl Rng, allow_empty: bool) -> String {
    let lo = if allow_empty { 0 } else { 1 };
    let n = rng.gen_range(lo..=24);
    let mut s: String = (0..n).map(|_| PATH_CHARS[rng.gen_range(0..PATH_CHARS.len())]).collect();
    if !allow_empty {
        // a required path needs more than whitespace
        s.insert(0, '/');
    }
    s
}

/// A real with a random mantissa, sometimes a short decimal.
fn real(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if rng.gen_bool(0.3) {
        (rng.gen_range(lo..hi) * 100.0).round() / 100.0
    } else {
        rng.gen_range(lo..hi)
    }
}

/// A record that satisfies every validation invariant.
pub fn random_valid(rng: &mut impl Rng) -> ReconstructionParams {
    let nx = rng.gen_range(1..=512u64);
    let ny = rng.gen_range(1..=512u64);
    let multislice = rng.gen_bool(0.5);
    let use_external_probe = rng.gen_bool(0.5);
    let use_external_object = rng.gen_bool(0.5);
    let use_external_positions = rng.gen_bool(0.3);
    let mut p = ReconstructionParams::default();
    p.data_directory = path(rng, true);
    p.scan_number = rng.gen_range(1..=1_000_000);
    p.beam_energy = real(rng, 1.0, 500.0).max(0.01);
    p.radius_bright_field = real(rng, 1.0, 100.0);
    p.convergence_angle = real(rng, 1.0, 60.0);
    p.size_of_diffraction_patterns = rng.gen_range(1..=1024);
    p.use_external_object = use_external_object;
    p.initial_object_path = path(rng, !use_external_object);
    p.use_external_probe = use_external_probe;
    p.initial_probe_file = path(rng, !use_external_probe);
    p.defocus = real(rng, -500.0, 500.0);
    p.use_external_positions = use_external_positions;
    p.initial_position_file = path(rng, !use_external_positions);
    p.grid_scan_positions = !use_external_positions && rng.gen_bool(0.8);
    p.scan_step_size_x = real(rng, 0.01, 2.0);
    p.scan_step_size_y = real(rng, 0.01, 2.0);
    p.number_scan_points_x = nx;
    p.number_scan_points_y = ny;
    p.number_of_iterations = rng.gen_range(1..=5000);
    p.update_batch_size = rng.gen_range(1..=nx * ny);
    p.number_of_probe_modes = rng.gen_range(1..=20);
    p.position_correction = rng.gen_bool(0.5);
    p.multislice_ptycho = multislice;
    p.object_thickness = if rng.gen_bool(0.2) { 0.0 } else { real(rng, 0.0, 400.0) };
    if multislice {
        p.number_of_layers = rng.gen_range(1..=60);
        p.layer_regularization_coefficient = real(rng, 0.0, 1.0);
    } else {
        p.number_of_layers = 1;
        p.layer_regularization_coefficient = 0.0;
    }
    p.diff_pattern_blur = real(rng, 0.0, 4.0);
    p.gpu_id = rng.gen_range(0..=7);
    p
}

// ---------------------------------------------------------------------------
// Retrieval

pub const VOCAB: [&str; 24] = [
    "probe", "mode", "layer", "blur", "detector", "gaussian", "kernel", "scan", "position", "drift", "grid", "batch",
    "iteration", "object", "thickness", "slice", "energy", "beam", "angle", "disk", "pixel", "regularization",
    "artifact", "converge",
];

pub fn random_corpus(rng: &mut impl Rng) -> Vec<String> {
    let n = rng.gen_range(1..=100);
    let mut texts: Vec<String> = Vec::with_capacity(n);
    for _ in 0..n {
        if !texts.is_empty() && rng.gen_bool(0.15) {
            // duplicates force exact ties
            let i = rng.gen_range(0..texts.len());
            texts.push(texts[i].clone());
            continue;
        }
        let len = rng.gen_range(0..=25);
        let words: Vec<&str> = (0..len).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect();
        texts.push(words.join(if rng.gen_bool(0.5) { " " } else { ", " }));
    }
    texts
}

pub fn random_query(rng: &mut impl Rng) -> String {
    let len = rng.gen_range(1..=6);
    let mut words: Vec<&str> = (0..len).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect();
    if rng.gen_bool(0.2) {
        words.push("zebra");
    }
    words.join(" ")
}

pub fn corpus(texts: &[String]) -> Corpus {
    let e = HashingEmbedder::default();
    Corpus::new(
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| KnowledgeChunk::new(i, "corpus.pdf".into(), (0, t.chars().count()), t.clone(), &e))
            .collect(),
    )
}

/// Scores every chunk from its raw text and returns all (id, score) pairs,
/// best first, ties to the lower id.
pub fn brute_force(texts: &[String], query: &str, alpha: f64) -> Vec<(usize, f64)> {
    let (k1, b) = (1.2, 0.75);
    let e = HashingEmbedder::default();
    let docs: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
    let n = docs.len() as f64;
    let mut total = 0.0;
    for d in &docs {
        total += d.len() as f64;
    }
    let avgdl = total / n;
    let mut terms: Vec<String> = Vec::new();
    for t in tokenize(query) {
        if !terms.contains(&t) {
            terms.push(t);
        }
    }

    let mut bm25 = vec![0.0; docs.len()];
    for term in &terms {
        let df = docs.iter().filter(|d| d.contains(term)).count() as f64;
        if df == 0.0 {
            continue;
        }
        let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
        for (i, d) in docs.iter().enumerate() {
            let tf = d.iter().filter(|w| *w == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let dl = d.len() as f64;
            let norm = if avgdl > 0.0 { dl / avgdl } else { 0.0 };
            bm25[i] += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm));
        }
    }

    let q = e.embed_local(query);
    let cos: Vec<f64> = texts
        .iter()
        .map(|t| {
            let v = e.embed_local(t);
            let dot: f64 = v.iter().zip(&q).map(|(x, y)| x * y).sum();
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nq = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (nv * nq)
        })
        .collect();

    let scale = |xs: &[f64]| -> Vec<f64> {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        xs.iter().map(|x| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 }).collect()
    };
    let (kw, sim) = (scale(&bm25), scale(&cos));
    let mut all: Vec<(usize, f64)> = (0..texts.len()).map(|i| (i, alpha * sim[i] + (1.0 - alpha) * kw[i])).collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all
}

/// Largest r with r * r <= n, by bisection in integers.
pub fn isqrt_oracle(n: u64) -> u64 {
    let (mut lo, mut hi) = (0u64, n.min(1 << 32) + 1);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if mid * mid <= n {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}
