//! Caption/image manifests and the synthetic oracle dataset.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};

use crate::caption::{render_caption, AttributeVector, NUM_ATTRIBUTES};
use crate::error::{Error, Result};
use crate::generator::GeneratorParams;
use crate::io::{bytes_to_image, image_to_bytes, read_image, write_image, write_vectors, VectorTable};
use crate::kernels;
use crate::rng::substream;
use crate::tensor::Tensor;
use crate::text2latent::{LatentCode, LatentSpace, LATENT_DIM};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const LATENTS_FILE: &str = "latents.tsv";
pub const ORACLE_JITTER: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub id: String,
    /// As written in the manifest; relative paths resolve against its directory.
    pub image: PathBuf,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<Record>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn image_path(&self, r: &Record) -> PathBuf {
        if r.image.is_absolute() {
            r.image.clone()
        } else {
            self.base_dir.join(&r.image)
        }
    }
}

/// Reads `id<TAB>image path<TAB>caption` lines; `#` starts a comment line.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(id), Some(image), Some(caption)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::format(path, format!("line {}: expected id, image path and caption separated by tabs", i + 1)));
        };
        if caption.contains('\t') {
            return Err(Error::format(path, format!("line {}: tab inside caption", i + 1)));
        }
        if id.is_empty() || caption.trim().is_empty() {
            return Err(Error::format(path, format!("line {}: empty id or caption", i + 1)));
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        records.push(Record {
            id: id.to_string(),
            image: PathBuf::from(image),
            caption: caption.trim().to_string(),
        });
    }
    if records.is_empty() {
        return Err(Error::format(path, "no records"));
    }
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Manifest { records, base_dir })
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        if r.caption.contains(['\t', '\n']) || r.id.contains(['\t', '\n']) {
            return Err(Error::invalid("write_manifest", format!("record {:?} contains a tab or newline", r.id)));
        }
        out.push_str(&format!("{}\t{}\t{}\n", r.id, r.image.display(), r.caption));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One caption with its decoded `[3, R, R]` image in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub caption: String,
    pub image: Tensor,
}

/// Decodes every image of a manifest, resized to `resolution` with bilinear
/// interpolation when its size differs.
pub fn load_dataset(manifest: impl AsRef<Path>, resolution: usize) -> Result<Vec<Sample>> {
    let m = read_manifest(manifest)?;
    m.records
        .iter()
        .map(|r| {
            let raw = bytes_to_image(&read_image(m.image_path(r))?);
            let image = if raw.shape()[1..] == [resolution, resolution] {
                raw
            } else {
                let (h, w) = (raw.shape()[1], raw.shape()[2]);
                Tensor::new(
                    vec![3, resolution, resolution],
                    kernels::bilinear_resize(raw.data(), 3, h, w, resolution, resolution),
                )?
            };
            Ok(Sample {
                id: r.id.clone(),
                caption: r.caption.clone(),
                image,
            })
        })
        .collect()
}

/// Splits off the last `fraction` of samples (rounded, and at least two when
/// the fraction is positive and enough samples exist) as a held-out set.
pub fn holdout_split(samples: &[Sample], fraction: f64) -> (&[Sample], &[Sample]) {
    let n = samples.len();
    let mut held = (n as f64 * fraction).round() as usize;
    if fraction > 0.0 && n >= 3 {
        held = held.max(2);
    }
    let held = held.min(n.saturating_sub(1));
    samples.split_at(n - held)
}

/// Hidden latent of an oracle sample: the unit-RMS direction of the sum of
/// an always-on base direction and one seeded direction per set attribute,
/// plus Gaussian jitter of standard deviation 0.05 per component.
pub struct OracleLatents {
    base: Vec<f64>,
    attributes: Vec<Vec<f64>>,
    seed: u64,
}

fn normal_vec(seed: u64, tag: &str) -> Vec<f64> {
    let mut rng = substream(seed, tag);
    (0..LATENT_DIM)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        })
        .collect()
}

impl OracleLatents {
    pub fn new(seed: u64) -> Self {
        Self {
            base: normal_vec(seed, "oracle/base"),
            attributes: (0..NUM_ATTRIBUTES)
                .map(|i| normal_vec(seed, &format!("oracle/attr/{i}")))
                .collect(),
            seed,
        }
    }

    pub fn latent(&self, attrs: &AttributeVector, sample: usize) -> LatentCode {
        let mut u = self.base.clone();
        for a in attrs.iter_set() {
            for (x, d) in u.iter_mut().zip(&self.attributes[a.index()]) {
                *x += d;
            }
        }
        let rms = (u.iter().map(|v| v * v).sum::<f64>() / LATENT_DIM as f64).sqrt();
        let jitter = normal_vec(self.seed, &format!("oracle/jitter/{sample}"));
        let z = u.iter().zip(&jitter).map(|(x, j)| x / rms + ORACLE_JITTER * j).collect();
        LatentCode::new(z, LatentSpace::Z).expect("finite oracle latent")
    }
}

/// A synthesized dataset: samples carry the 8-bit-quantized images exactly
/// as stored on disk.
pub struct OracleDataset {
    pub samples: Vec<Sample>,
    pub attributes: Vec<AttributeVector>,
    pub latents: Vec<LatentCode>,
}

pub fn oracle_id(i: usize) -> String {
    format!("s{i:05}")
}

/// Builds `n` caption/image pairs whose images the frozen generator renders
/// from hidden attribute-determined latents.
pub fn synthesize_oracle(n: usize, seed: u64, gen: &GeneratorParams) -> Result<OracleDataset> {
    if n == 0 {
        return Err(Error::invalid("synthesize_dataset", "n must be at least 1"));
    }
    let dirs = OracleLatents::new(seed);
    let mut out = OracleDataset {
        samples: Vec::with_capacity(n),
        attributes: Vec::with_capacity(n),
        latents: Vec::with_capacity(n),
    };
    for i in 0..n {
        let attrs = AttributeVector::random(&mut substream(seed, &format!("oracle/attrs/{i}")));
        let caption = render_caption(&attrs)?;
        let z = dirs.latent(&attrs, i);
        let image = gen.generate(&z)?;
        out.samples.push(Sample {
            id: oracle_id(i),
            caption: caption.text().to_string(),
            image: bytes_to_image(&image_to_bytes(&image)?),
        });
        out.attributes.push(attrs);
        out.latents.push(z);
    }
    Ok(out)
}

/// Writes `manifest.tsv`, `images/<id>.ppm` and the `latents.tsv` sidecar.
pub fn write_oracle(dir: impl AsRef<Path>, data: &OracleDataset) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut records = Vec::with_capacity(data.samples.len());
    let mut latents = VectorTable::new();
    for (s, z) in data.samples.iter().zip(&data.latents) {
        let rel = PathBuf::from("images").join(format!("{}.ppm", s.id));
        write_image(dir.join(&rel), &image_to_bytes(&s.image)?)?;
        records.push(Record {
            id: s.id.clone(),
            image: rel,
            caption: s.caption.clone(),
        });
        latents.insert(s.id.clone(), z.values().to_vec())?;
    }
    let manifest = dir.join(MANIFEST_FILE);
    write_manifest(&manifest, &records)?;
    write_vectors(dir.join(LATENTS_FILE), &latents)?;
    Ok(manifest)
}

/// Synthesizes and writes an oracle dataset; returns the manifest path.
pub fn synthesize_dataset(n: usize, seed: u64, gen: &GeneratorParams, dir: impl AsRef<Path>) -> Result<PathBuf> {
    write_oracle(dir, &synthesize_oracle(n, seed, gen)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption::parse_caption;
    use crate::io::read_vectors;

    #[test]
    fn empty_and_malformed_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        std::fs::write(&p, "# nothing\n").unwrap();
        assert!(read_manifest(&p).unwrap_err().to_string().contains("no records"));
        std::fs::write(&p, "a\timg.ppm\n").unwrap();
        assert!(read_manifest(&p).is_err());
        std::fs::write(&p, "a\tx.ppm\tHe is bald.\na\ty.ppm\tShe has bangs.\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn three_records_in_order_with_resizing() {
        let dir = tempfile::tempdir().unwrap();
        let gen = GeneratorParams::init(1, 8).unwrap();
        let data = synthesize_oracle(3, 4, &gen).unwrap();
        let manifest = write_oracle(dir.path(), &data).unwrap();
        let loaded = load_dataset(&manifest, 8).unwrap();
        let ids: Vec<_> = loaded.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["s00000", "s00001", "s00002"]);
        assert_eq!(loaded, data.samples);
        let big = load_dataset(&manifest, 16).unwrap();
        assert_eq!(big[0].image.shape(), &[3, 16, 16]);
        std::fs::remove_file(dir.path().join("images/s00001.ppm")).unwrap();
        assert!(matches!(load_dataset(&manifest, 8), Err(Error::Io { .. })));
    }

    #[test]
    fn synthesis_is_deterministic_with_unique_ids() {
        let gen = GeneratorParams::init(2, 8).unwrap();
        let a = synthesize_oracle(64, 9, &gen).unwrap();
        let b = synthesize_oracle(64, 9, &gen).unwrap();
        assert_eq!(a.samples, b.samples);
        let ids: HashSet<_> = a.samples.iter().map(|s| &s.id).collect();
        assert_eq!(ids.len(), 64);
        for (s, attrs) in a.samples.iter().zip(&a.attributes) {
            assert_eq!(parse_caption(&s.caption).unwrap().attrs, *attrs);
        }
    }

    #[test]
    fn sidecar_latents_regenerate_the_images() {
        let dir = tempfile::tempdir().unwrap();
        let gen = GeneratorParams::init(3, 8).unwrap();
        let manifest = synthesize_dataset(6, 1, &gen, dir.path()).unwrap();
        let samples = load_dataset(&manifest, 8).unwrap();
        let latents = read_vectors(dir.path().join(LATENTS_FILE), Some(LATENT_DIM)).unwrap();
        for s in &samples {
            let z = LatentCode::new(latents.get(&s.id).unwrap().to_vec(), LatentSpace::Z).unwrap();
            let regenerated = bytes_to_image(&image_to_bytes(&gen.generate(&z).unwrap()).unwrap());
            assert_eq!(regenerated, s.image);
        }
    }

    #[test]
    fn holdout_takes_the_tail() {
        let gen = GeneratorParams::init(3, 8).unwrap();
        let data = synthesize_oracle(10, 1, &gen).unwrap().samples;
        let (train, held) = holdout_split(&data, 0.2);
        assert_eq!((train.len(), held.len()), (8, 2));
        assert_eq!(held[0].id, "s00008");
        assert_eq!(holdout_split(&data, 0.0).1.len(), 0);
        assert_eq!(holdout_split(&data[..3], 0.2).1.len(), 2);
    }

    #[test]
    fn oracle_latents_have_unit_rms_direction() {
        let o = OracleLatents::new(5);
        let z = o.latent(&AttributeVector::empty(), 0);
        let rms = (z.values().iter().map(|v| v * v).sum::<f64>() / 512.0).sqrt();
        assert!((rms - 1.0).abs() < 0.1, "{rms}");
    }
}
