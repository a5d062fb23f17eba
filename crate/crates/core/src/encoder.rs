//! 768-dimensional sentence embeddings: a deterministic built-in encoder
//! over the caption grammar, or rows of a precomputed embedding file.

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::caption::{parse_caption, tokenize, Attribute, AttributeVector, NUM_ATTRIBUTES};
use crate::error::{Error, Result};
use crate::io::{read_vectors, write_vectors, VectorTable};
use crate::rng::substream;

pub const EMBEDDING_DIM: usize = 768;
pub const DEFAULT_ENCODER_SEED: u64 = 0x5e17_e1ce;

/// Weights relative to one attribute direction.
const WORDING_WEIGHT: f64 = 0.15;
const OFFSET_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    Builtin,
    File,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    source: EmbeddingSource,
}

impl Embedding {
    pub fn new(values: Vec<f64>, source: EmbeddingSource) -> Result<Self> {
        if values.len() != EMBEDDING_DIM {
            return Err(Error::invalid(
                "embedding",
                format!("expected {EMBEDDING_DIM} values, found {}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding", "non-finite value"));
        }
        Ok(Self { values, source })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        dot / (norm(&self.values) * norm(&other.values))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn direction(seed: u64, tag: &str) -> Vec<f64> {
    let mut rng = substream(seed, tag);
    let scale = (EMBEDDING_DIM as f64).sqrt().recip();
    (0..EMBEDDING_DIM)
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut rng);
            x * scale
        })
        .collect()
}

/// Stand-in sentence encoder: a sum of seeded attribute directions, signed
/// gender and age offsets, and a small bag of hashed token directions for
/// wording the attributes do not capture; the result has unit norm.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    seed: u64,
    attributes: Vec<Vec<f64>>,
    gender: Vec<f64>,
    age: Vec<f64>,
}

impl Default for TextEncoder {
    fn default() -> Self {
        Self::new(DEFAULT_ENCODER_SEED)
    }
}

impl TextEncoder {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            attributes: (0..NUM_ATTRIBUTES)
                .map(|i| direction(seed, &format!("attr/{i}")))
                .collect(),
            gender: direction(seed, "gender"),
            age: direction(seed, "age"),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn encode(&self, text: &str) -> Result<Embedding> {
        let attrs = parse_caption(text)?.attrs;
        Ok(self.encode_parts(&attrs, &tokenize(text)))
    }

    fn encode_parts(&self, attrs: &AttributeVector, tokens: &[String]) -> Embedding {
        let mut v = vec![0.0; EMBEDDING_DIM];
        let mut add = |d: &[f64], c: f64| {
            for (x, y) in v.iter_mut().zip(d) {
                *x += c * y;
            }
        };
        for a in attrs.iter_set() {
            add(&self.attributes[a.index()], 1.0);
        }
        let sign = |on: bool| if on { OFFSET_WEIGHT } else { -OFFSET_WEIGHT };
        add(&self.gender, sign(attrs.get(Attribute::Male)));
        add(&self.age, sign(attrs.get(Attribute::Young)));
        if !tokens.is_empty() {
            let c = WORDING_WEIGHT / (tokens.len() as f64).sqrt();
            for t in tokens {
                add(&direction(self.seed, &format!("token/{t}")), c);
            }
        }
        let n = norm(&v);
        Embedding {
            values: v.into_iter().map(|x| x / n).collect(),
            source: EmbeddingSource::Builtin,
        }
    }
}

/// Reads `id<TAB>768 floats` rows.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Vec<(String, Embedding)>> {
    read_vectors(path, Some(EMBEDDING_DIM))?
        .iter()
        .map(|(id, v)| Ok((id.to_string(), Embedding::new(v.to_vec(), EmbeddingSource::File)?)))
        .collect()
}

pub fn write_embeddings<'a>(
    path: impl AsRef<Path>,
    rows: impl IntoIterator<Item = (&'a str, &'a Embedding)>,
) -> Result<()> {
    let mut table = VectorTable::new();
    for (id, e) in rows {
        table.insert(id, e.values.clone())?;
    }
    write_vectors(path, &table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption::{flip_attribute, render_caption};
    use crate::rng::seeded;
    use rand::seq::index::sample;

    const MAN: &str = "The man has a chubby face. He sports a goatee with sideburns.";

    #[test]
    fn deterministic_unit_vectors_of_768() {
        let enc = TextEncoder::default();
        let a = enc.encode(MAN).unwrap();
        assert_eq!(a, TextEncoder::default().encode(MAN).unwrap());
        assert_eq!(a.values().len(), 768);
        assert!((norm(a.values()) - 1.0).abs() < 1e-9);
        assert_eq!(a.source(), EmbeddingSource::Builtin);
    }

    #[test]
    fn unparseable_text_propagates() {
        assert!(matches!(
            TextEncoder::default().encode("Lorem ipsum."),
            Err(Error::CaptionParse(_))
        ));
    }

    #[test]
    fn one_attribute_apart_is_closer_than_five() {
        let enc = TextEncoder::default();
        let mut rng = seeded(11);
        for _ in 0..100 {
            let base = AttributeVector::random(&mut rng);
            let flip = |v: AttributeVector, k: usize, rng: &mut crate::rng::Rng| {
                let mut out = v;
                for i in sample(rng, NUM_ATTRIBUTES, k) {
                    let a = Attribute::all().nth(i).unwrap();
                    out.set(a, !v.get(a));
                }
                out
            };
            let (one, five) = loop {
                let one = flip(base, 1, &mut rng);
                let five = flip(base, 5, &mut rng);
                if one.validate().is_ok() && five.validate().is_ok() {
                    break (one, five);
                }
            };
            let e = |v: &AttributeVector| enc.encode(render_caption(v).unwrap().text()).unwrap();
            let b = e(&base);
            let (c1, c5) = (e(&one).cosine(&b), e(&five).cosine(&b));
            assert!(c1 < 1.0 && c1 > c5, "{c1} vs {c5}");
        }
    }

    #[test]
    fn flipping_an_attribute_moves_the_embedding() {
        let enc = TextEncoder::default();
        let attrs = parse_caption(MAN).unwrap().attrs;
        let flipped = flip_attribute(attrs, "Eyeglasses", true).unwrap();
        let a = enc.encode(render_caption(&attrs).unwrap().text()).unwrap();
        let b = enc.encode(render_caption(&flipped).unwrap().text()).unwrap();
        let dist: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(dist > 1e-3);
    }

    #[test]
    fn embedding_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.tsv");
        std::fs::write(&p, format!("zero\t{}\n", vec!["0"; 768].join(" "))).unwrap();
        let rows = load_embeddings(&p).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].1.values().iter().all(|&v| v == 0.0));
        assert_eq!(rows[0].1.source(), EmbeddingSource::File);

        std::fs::write(&p, format!("short\t{}\n", vec!["0"; 767].join(" "))).unwrap();
        match load_embeddings(&p) {
            Err(Error::Dimension { line: 1, found: 767, .. }) => {}
            other => panic!("{other:?}"),
        }

        let enc = TextEncoder::default();
        let table = [
            ("a".to_string(), enc.encode(MAN).unwrap()),
            ("b".to_string(), enc.encode("She has wavy hair.").unwrap()),
        ];
        write_embeddings(&p, table.iter().map(|(id, e)| (id.as_str(), e))).unwrap();
        let back = load_embeddings(&p).unwrap();
        assert_eq!(back.len(), 2);
        for ((ia, ea), (ib, eb)) in table.iter().zip(&back) {
            assert_eq!(ia, ib);
            assert_eq!(ea.values(), eb.values());
        }
    }
}
