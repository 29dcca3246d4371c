//! Transcript → word chain graph with cosine edge weights and its Laplacian eigenbasis.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{sym_eig, EigenDecomposition, Matrix};

pub const DEFAULT_EMBEDDING_DIM: usize = 100;

/// Lowercases, strips punctuation, splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Word vectors with a total lookup: unknown words get a deterministic unit vector.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Unit-norm Gaussian direction seeded by a hash of the word.
pub fn oov_vector(word: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(word.as_bytes()));
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

impl EmbeddingTable {
    /// Table with no known words; every lookup falls back to the hash vector.
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn from_vectors(dim: usize, vectors: HashMap<String, Vec<f64>>) -> Result<Self> {
        if let Some((w, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::invalid(format!(
                "vector for {w:?} has {} entries, expected {dim}",
                v.len()
            )));
        }
        Ok(Self { dim, vectors })
    }

    /// Parses GloVe text: `word v1 ... v_dim` per line. The first line fixes `dim`.
    pub fn parse_glove(text: &str) -> Result<Self> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ctx = || format!("embedding file line {}", i + 1);
            let mut parts = line.split(' ').filter(|p| !p.is_empty());
            let word = parts.next().expect("non-empty line has a first token");
            let values: Vec<f64> = parts
                .map(|p| {
                    p.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::parse(ctx(), format!("bad value {p:?}")))
                })
                .collect::<Result<_>>()?;
            let expected = *dim.get_or_insert(values.len());
            if values.is_empty() || values.len() != expected {
                return Err(Error::parse(
                    ctx(),
                    format!("expected {expected} values, found {}", values.len()),
                ));
            }
            vectors.insert(word.to_string(), values);
        }
        let dim = dim.ok_or_else(|| Error::parse("embedding file", "no vectors"))?;
        Ok(Self { dim, vectors })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_glove(&text)
    }

    /// Writes GloVe text with words sorted.
    pub fn to_glove(&self) -> String {
        let mut words: Vec<&String> = self.vectors.keys().collect();
        words.sort();
        let mut out = String::new();
        for w in words {
            out.push_str(w);
            for v in &self.vectors[w] {
                out.push(' ');
                out.push_str(&format!("{v:.6}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vectors.contains_key(word)
    }

    pub fn lookup(&self, word: &str) -> Vec<f64> {
        match self.vectors.get(word) {
            Some(v) => v.clone(),
            None => oov_vector(word, self.dim),
        }
    }
}

/// Node feature matrix, one row per token.
pub fn embed(tokens: &[String], table: &EmbeddingTable) -> Result<Matrix> {
    if tokens.is_empty() {
        return Err(Error::invalid("empty sentence"));
    }
    let rows: Vec<Vec<f64>> = tokens.iter().map(|t| table.lookup(t)).collect();
    Matrix::from_rows(&rows)
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// `(1 + cos) / 2`, mapping [-1, 1] onto [0, 1] monotonically.
pub fn edge_weight(cos: f64) -> f64 {
    (1.0 + cos) / 2.0
}

#[derive(Debug, Clone)]
pub struct TextGraph {
    /// `n × dim` node features.
    pub features: Matrix,
    /// Symmetric weighted adjacency with unit self-loops.
    pub adjacency: Matrix,
    /// `I − D^{-1/2} A D^{-1/2}`.
    pub laplacian: Matrix,
    pub basis: EigenDecomposition,
}

impl TextGraph {
    pub fn n(&self) -> usize {
        self.features.rows()
    }

    /// `Σ θ_m L^m` in the vertex domain.
    pub fn polynomial_filter(&self, theta: &[f64]) -> Matrix {
        let n = self.n();
        let mut out = Matrix::zeros(n, n);
        let mut power = Matrix::identity(n);
        for (m, &t) in theta.iter().enumerate() {
            if m > 0 {
                power = power.matmul(&self.laplacian).expect("square");
            }
            out.axpy(t, &power).expect("same shape");
        }
        out
    }

    /// `U · diag(Σ θ_m λ^m) · Uᵀ`, the same filter through the eigenbasis.
    pub fn spectral_filter(&self, theta: &[f64]) -> Matrix {
        self.basis.spectral_map(|l| {
            theta
                .iter()
                .enumerate()
                .map(|(m, t)| t * l.powi(m as i32))
                .sum()
        })
    }
}

/// Chain graph over consecutive rows of `features`, plus Laplacian and eigenbasis.
pub fn build_chain_graph(features: Matrix) -> Result<TextGraph> {
    let n = features.rows();
    if n == 0 {
        return Err(Error::invalid("empty sentence"));
    }
    features.ensure_finite("node features")?;
    let mut adjacency = Matrix::identity(n);
    for i in 0..n.saturating_sub(1) {
        let w = edge_weight(cosine(features.row(i), features.row(i + 1)));
        adjacency[(i, i + 1)] = w;
        adjacency[(i + 1, i)] = w;
    }
    let inv_sqrt_deg: Vec<f64> = adjacency
        .iter_rows()
        .map(|r| 1.0 / r.iter().sum::<f64>().sqrt())
        .collect();
    let mut laplacian = Matrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            let a = adjacency[(i, j)];
            if a != 0.0 {
                laplacian[(i, j)] -= inv_sqrt_deg[i] * a * inv_sqrt_deg[j];
            }
        }
    }
    let basis = sym_eig(&laplacian)?;
    Ok(TextGraph {
        features,
        adjacency,
        laplacian,
        basis,
    })
}

/// Tokenize, embed and build the chain graph for one transcript.
pub fn sentence_graph(text: &str, table: &EmbeddingTable) -> Result<TextGraph> {
    let tokens = tokenize(text);
    build_chain_graph(embed(&tokens, table)?)
}
