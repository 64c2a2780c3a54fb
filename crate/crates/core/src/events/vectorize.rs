//! Sparse tf-idf vectors and cosine similarity.
//!
//! tf is the raw term count, idf is `ln((1 + N) / (1 + df)) + 1`, and every
//! vector is L2-normalized. Terms are indexed in sorted order so the same
//! corpus always produces bit-identical vectors.

use std::collections::{BTreeMap, BTreeSet};

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "again", "against", "all", "also", "am", "an", "and", "any", "are", "as",
    "at", "be", "because", "been", "before", "being", "between", "both", "but", "by", "can", "could",
    "did", "do", "does", "doing", "down", "during", "each", "few", "for", "from", "further", "had",
    "has", "have", "having", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how",
    "i", "if", "in", "into", "is", "it", "its", "itself", "just", "me", "more", "most", "my",
    "myself", "no", "nor", "not", "now", "of", "off", "on", "once", "only", "or", "other", "our",
    "ours", "ourselves", "out", "over", "own", "said", "same", "says", "she", "should", "so", "some",
    "such", "than", "that", "the", "their", "theirs", "them", "themselves", "then", "there",
    "these", "they", "this", "those", "through", "to", "too", "under", "until", "up", "very",
    "was", "we", "were", "what", "when", "where", "which", "while", "who", "whom", "why", "will",
    "with", "would", "you", "your", "yours", "yourself", "yourselves",
];

/// Lowercased alphanumeric tokens of length two or more, stopwords removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .filter(|t| STOPWORDS.binary_search(&t.as_str()).is_err())
        .collect()
}

/// Sorted `(term index, weight)` pairs.
pub type SparseVec = Vec<(u32, f64)>;

pub fn tfidf(docs: &[Vec<String>]) -> Vec<SparseVec> {
    let vocab: BTreeSet<&str> = docs.iter().flatten().map(String::as_str).collect();
    let index: BTreeMap<&str, u32> = vocab.iter().enumerate().map(|(i, t)| (*t, i as u32)).collect();
    let mut df = vec![0u32; index.len()];
    let counts: Vec<BTreeMap<u32, u32>> = docs
        .iter()
        .map(|d| {
            let mut c = BTreeMap::new();
            for t in d {
                *c.entry(index[t.as_str()]).or_insert(0) += 1;
            }
            for k in c.keys() {
                df[*k as usize] += 1;
            }
            c
        })
        .collect();
    let n = docs.len() as f64;
    let idf: Vec<f64> = df.iter().map(|&d| ((1.0 + n) / (1.0 + f64::from(d))).ln() + 1.0).collect();
    counts
        .into_iter()
        .map(|c| {
            let mut v: SparseVec = c
                .into_iter()
                .map(|(k, tf)| (k, f64::from(tf) * idf[k as usize]))
                .collect();
            let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            if norm > 0.0 {
                for (_, w) in &mut v {
                    *w /= norm;
                }
            }
            v
        })
        .collect()
}

/// Dot product of two normalized sparse vectors; 0 when either is empty.
pub fn cosine(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut dot = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    dot
}

/// Disjoint-set forest; roots are always the smallest index of a set.
pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut c = x;
        while self.parent[c] != r {
            let next = self.parent[c];
            self.parent[c] = r;
            c = next;
        }
        r
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    /// Sets in order of their smallest member; members ascending.
    pub fn groups(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..self.parent.len() {
            let r = self.find(i);
            by_root.entry(r).or_default().push(i);
        }
        by_root.into_values().collect()
    }
}

/// Similarity matrix (upper triangle used) and threshold components.
pub(crate) struct SimilarityGraph {
    pub sims: Vec<Vec<f64>>,
    pub degree: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
}

pub(crate) fn similarity_graph(vectors: &[SparseVec], threshold: f64) -> SimilarityGraph {
    let n = vectors.len();
    let mut sims = vec![vec![0.0; n]; n];
    let mut degree = vec![0; n];
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        sims[i][i] = 1.0;
        for j in (i + 1)..n {
            let s = cosine(&vectors[i], &vectors[j]);
            sims[i][j] = s;
            sims[j][i] = s;
            if s >= threshold {
                degree[i] += 1;
                degree[j] += 1;
                uf.union(i, j);
            }
        }
    }
    SimilarityGraph {
        sims,
        degree,
        groups: uf.groups(),
    }
}
