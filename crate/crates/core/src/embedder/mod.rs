//! Text embeddings for profiles and items.

mod cache;
mod http;
mod stub;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Catalog, ItemRecord};
use crate::error::{check_dim, Error, Result};
use crate::profiler::TemporalProfiles;
use crate::util::{bounded_map, content_hash, RetryPolicy};

pub use cache::{VectorCache, VectorRecord};
pub use http::{EncodeRequest, EncodeResponse, HttpEncoder};
pub use stub::{fnv1a64, stub_encode, StubEncoder};

pub const DEFAULT_DIM: usize = 384;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Componentwise mean of `vectors`, which must be nonempty and share a dim.
    pub fn mean<'a>(vectors: impl IntoIterator<Item = &'a EmbeddingVector>) -> Result<Self> {
        let mut iter = vectors.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::invalid("mean of no vectors"))?;
        let mut acc = first.0.clone();
        let mut n = 1usize;
        for v in iter {
            check_dim(acc.len(), v.dim())?;
            for (a, x) in acc.iter_mut().zip(&v.0) {
                *a += x;
            }
            n += 1;
        }
        acc.iter_mut().for_each(|a| *a /= n as f64);
        Ok(EmbeddingVector(acc))
    }
}

impl From<Vec<f64>> for EmbeddingVector {
    fn from(v: Vec<f64>) -> Self {
        EmbeddingVector(v)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Sentence encoder backend. The same text must map to the same vector for
/// the lifetime of a run, and every vector must have length [`dim`](Self::dim).
pub trait EncoderProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn encode_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;
}

/// Cache key of a text.
pub fn text_key(text: &str) -> String {
    content_hash(&[text])
}

/// Encoder front end: deduplication, cache, batching, bounded concurrency
/// and retries.
pub struct Embedder {
    provider: Arc<dyn EncoderProvider>,
    cache: Option<VectorCache>,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    pub batch_size: usize,
    provider_calls: AtomicUsize,
}

impl Embedder {
    pub fn new(provider: Arc<dyn EncoderProvider>) -> Self {
        Embedder {
            provider,
            cache: None,
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            batch_size: 64,
            provider_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, cache: VectorCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn dim(&self) -> usize {
        self.provider.dim()
    }

    /// Number of batch requests sent to the provider so far.
    pub fn provider_calls(&self) -> usize {
        self.provider_calls.load(Ordering::Relaxed)
    }

    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let dim = self.dim();
        let keys: Vec<String> = texts.iter().map(|t| text_key(t)).collect();
        let mut found: BTreeMap<&str, EmbeddingVector> = BTreeMap::new();
        let mut missing: Vec<(&str, &String)> = Vec::new();
        for (key, text) in keys.iter().zip(texts) {
            if found.contains_key(key.as_str()) || missing.iter().any(|(k, _)| k == key) {
                continue;
            }
            match self.cache.as_ref().and_then(|c| c.get(key)) {
                Some(v) if v.dim() == dim => {
                    found.insert(key, v);
                }
                _ => missing.push((key, text)),
            }
        }

        let chunks: Vec<&[(&str, &String)]> = missing.chunks(self.batch_size.max(1)).collect();
        let results = bounded_map(&chunks, self.max_in_flight, |chunk| {
            let batch: Vec<String> = chunk.iter().map(|(_, t)| (*t).clone()).collect();
            self.provider_calls.fetch_add(1, Ordering::Relaxed);
            let vectors = self.retry.run(|| self.provider.encode_batch(&batch))?;
            if vectors.len() != batch.len() {
                return Err(Error::Encoder(format!(
                    "asked for {} vectors, got {}",
                    batch.len(),
                    vectors.len()
                )));
            }
            for v in &vectors {
                check_dim(dim, v.dim())?;
                if !v.is_finite() {
                    return Err(Error::Encoder("non-finite vector component".into()));
                }
            }
            Ok(vectors)
        });
        for (chunk, result) in chunks.iter().zip(results) {
            for ((key, _), vector) in chunk.iter().zip(result?) {
                if let Some(cache) = &self.cache {
                    cache.put(key, &vector)?;
                }
                found.insert(key, vector);
            }
        }
        Ok(keys.iter().map(|k| found[k.as_str()].clone()).collect())
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self.embed_texts(&[text.to_string()])?.remove(0))
    }

    /// `(r_short, r_long)` for one user.
    pub fn embed_profiles(
        &self,
        profiles: &TemporalProfiles,
    ) -> Result<(EmbeddingVector, EmbeddingVector)> {
        let mut v = self.embed_texts(&[profiles.short_text.clone(), profiles.long_text.clone()])?;
        let long = v.pop().expect("two vectors");
        let short = v.pop().expect("two vectors");
        Ok((short, long))
    }

    pub fn embed_item(&self, item: &ItemRecord) -> Result<EmbeddingVector> {
        self.embed_text(&item.embedding_text())
    }

    /// Embeds every catalog item and every profile text in one pass.
    pub fn embed_corpus(
        &self,
        catalog: &Catalog,
        profiles: &BTreeMap<String, TemporalProfiles>,
    ) -> Result<EmbeddingTable> {
        let texts = corpus_texts(catalog, profiles);
        let table = VectorCache::in_memory();
        for (text, v) in texts.iter().zip(self.embed_texts(&texts)?) {
            table.put(&text_key(text), &v)?;
        }
        EmbeddingTable::resolve(&table, catalog, profiles)
    }
}

fn corpus_texts(catalog: &Catalog, profiles: &BTreeMap<String, TemporalProfiles>) -> Vec<String> {
    let mut texts: Vec<String> = catalog
        .items
        .values()
        .map(ItemRecord::embedding_text)
        .collect();
    for p in profiles.values() {
        texts.push(p.short_text.clone());
        texts.push(p.long_text.clone());
        if let Some(g) = &p.general_text {
            texts.push(g.clone());
        }
    }
    texts
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileVectors {
    pub short: EmbeddingVector,
    pub long: EmbeddingVector,
    pub general: Option<EmbeddingVector>,
}

/// Every vector a run needs, keyed by item id and user id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub items: BTreeMap<String, EmbeddingVector>,
    pub profiles: BTreeMap<String, ProfileVectors>,
}

impl EmbeddingTable {
    /// Looks every item and profile text up in `cache`; any miss is an error.
    pub fn resolve(
        cache: &VectorCache,
        catalog: &Catalog,
        profiles: &BTreeMap<String, TemporalProfiles>,
    ) -> Result<Self> {
        let lookup = |what: String, text: &str| {
            cache
                .get(&text_key(text))
                .ok_or(Error::MissingEmbedding(what))
        };
        let mut dim = None;
        let mut check = |v: &EmbeddingVector| match dim {
            None => {
                dim = Some(v.dim());
                Ok(())
            }
            Some(d) => check_dim(d, v.dim()),
        };
        let mut items = BTreeMap::new();
        for item in catalog.items.values() {
            let v = lookup(format!("item {}", item.item_id), &item.embedding_text())?;
            check(&v)?;
            items.insert(item.item_id.clone(), v);
        }
        let mut vectors = BTreeMap::new();
        for (user, p) in profiles {
            let short = lookup(format!("short profile of {user}"), &p.short_text)?;
            let long = lookup(format!("long profile of {user}"), &p.long_text)?;
            check(&short)?;
            check(&long)?;
            let general = match &p.general_text {
                Some(g) => {
                    let v = lookup(format!("general profile of {user}"), g)?;
                    check(&v)?;
                    Some(v)
                }
                None => None,
            };
            vectors.insert(
                user.clone(),
                ProfileVectors {
                    short,
                    long,
                    general,
                },
            );
        }
        Ok(EmbeddingTable {
            dim: dim.unwrap_or(0),
            items,
            profiles: vectors,
        })
    }

    pub fn item(&self, item_id: &str) -> Result<&EmbeddingVector> {
        self.items
            .get(item_id)
            .ok_or_else(|| Error::MissingEmbedding(format!("item {item_id}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Counting {
        inner: StubEncoder,
        batches: Mutex<usize>,
    }

    impl EncoderProvider for Counting {
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn encode_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
            *self.batches.lock().unwrap() += 1;
            self.inner.encode_batch(texts)
        }
    }

    fn counting(dim: usize) -> Arc<Counting> {
        Arc::new(Counting {
            inner: StubEncoder::new(dim),
            batches: Mutex::new(0),
        })
    }

    fn profiles(short: &str, long: &str) -> TemporalProfiles {
        TemporalProfiles {
            user_id: "u".into(),
            prompt_fingerprint: "f".into(),
            short_text: short.into(),
            long_text: long.into(),
            general_text: None,
            source: crate::profiler::ProfileSource::Stub,
        }
    }

    #[test]
    fn equal_texts_give_equal_vectors() {
        let e = Embedder::new(counting(32));
        let (s, l) = e
            .embed_profiles(&profiles("same words", "same words"))
            .unwrap();
        assert_eq!(s, l);
        assert_eq!(s.dim(), 32);
    }

    #[test]
    fn cache_hit_means_no_provider_calls() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vectors.jsonl");
        let p = profiles("recent heist films", "enduring crime noir");
        let first = Embedder::new(counting(16)).with_cache(VectorCache::open(&path).unwrap());
        let (s1, l1) = first.embed_profiles(&p).unwrap();
        assert_eq!(first.provider_calls(), 1);

        let provider = counting(16);
        let second = Embedder::new(provider.clone()).with_cache(VectorCache::open(&path).unwrap());
        let (s2, l2) = second.embed_profiles(&p).unwrap();
        assert_eq!((s1, l1), (s2, l2));
        assert_eq!(second.provider_calls(), 0);
        assert_eq!(*provider.batches.lock().unwrap(), 0);
    }

    #[test]
    fn identical_items_identical_vectors() {
        let e = Embedder::new(counting(64));
        let a = ItemRecord::new("a", "Heat", "A crime saga");
        let b = ItemRecord::new("b", "Heat", "A crime saga");
        assert_eq!(e.embed_item(&a).unwrap(), e.embed_item(&b).unwrap());
        assert_eq!(e.embed_item(&a).unwrap().dim(), 64);
    }

    struct WrongDim;

    impl EncoderProvider for WrongDim {
        fn dim(&self) -> usize {
            8
        }
        fn encode_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
            Ok(texts.iter().map(|_| EmbeddingVector::zeros(4)).collect())
        }
    }

    #[test]
    fn provider_dim_is_checked() {
        let mut e = Embedder::new(Arc::new(WrongDim));
        e.retry.retries = 0;
        assert!(matches!(
            e.embed_text("x"),
            Err(Error::DimensionMismatch {
                expected: 8,
                actual: 4
            })
        ));
    }

    #[test]
    fn batching_preserves_order() {
        let mut e = Embedder::new(counting(16));
        e.batch_size = 3;
        let texts: Vec<String> = (0..10).map(|i| format!("text number {i}")).collect();
        let out = e.embed_texts(&texts).unwrap();
        for (t, v) in texts.iter().zip(&out) {
            assert_eq!(v, &stub_encode(t, 16));
        }
        assert_eq!(e.provider_calls(), 4);
    }

    #[test]
    fn mean_of_vectors() {
        let a = EmbeddingVector(vec![1.0, 0.0]);
        let b = EmbeddingVector(vec![0.0, 1.0]);
        assert_eq!(EmbeddingVector::mean([&a, &b]).unwrap().0, vec![0.5, 0.5]);
        assert!(EmbeddingVector::mean(std::iter::empty()).is_err());
    }
}
