//! Latent-space image search, hash and histogram search baselines, Gaussian
//! blur and blur removal through the encoder/generator pair.
//!
//! Index file layout (little-endian):
//!
//! ```text
//! magic        7 bytes  "AEGIDX1"
//! count        u32
//! latent_dim   u32
//! fingerprint  32 bytes encoder fingerprint
//! records      count × (u32 id length, id bytes, latent_dim × f32)
//! ```

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Attributes, ATTRIBUTE_COUNT};
use crate::error::{Error, Result};
use crate::image_io;
use crate::inversion::reconstruct;
use crate::metrics::{
    color_histogram, dhash, hash_similarity, histogram_intersection, image_dims, phash, resize_area,
    HashCode, HistogramDescriptor, DEFAULT_HISTOGRAM_BINS,
};
use crate::models::{hex_string, NetKind, Network};
use crate::tensor::Tensor;

pub const INDEX_MAGIC: &[u8; 7] = b"AEGIDX1";

/// Embedding of one corpus image.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexRecord {
    pub id: String,
    pub z: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentIndex {
    pub latent_dim: usize,
    pub fingerprint: [u8; 32],
    pub records: Vec<IndexRecord>,
}

/// Ranking direction of a result list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Smaller is closer.
    Distance,
    /// Larger is closer.
    Similarity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub k: usize,
    pub kind: ScoreKind,
    pub hits: Vec<Hit>,
}

impl QueryResult {
    /// `rank,id,<distance|similarity>` rows, ranks from 1.
    pub fn to_csv(&self) -> String {
        let label = match self.kind {
            ScoreKind::Distance => "distance",
            ScoreKind::Similarity => "similarity",
        };
        let mut out = format!("rank,id,{label}\n");
        for (i, h) in self.hits.iter().enumerate() {
            writeln!(out, "{},{},{}", i + 1, h.id, h.score).unwrap();
        }
        out
    }
}

/// Sorts by score (ascending distance or descending similarity), then by id,
/// and keeps the first `k`. Asking for more than exist returns everything.
pub fn rank(mut hits: Vec<Hit>, kind: ScoreKind, k: usize) -> Result<QueryResult> {
    if k == 0 {
        return Err(Error::validation("k must be at least 1"));
    }
    if k > hits.len() {
        log::warn!("k = {k} exceeds the {} indexed images; returning all", hits.len());
    }
    hits.sort_by(|a, b| {
        let by_score = match kind {
            ScoreKind::Distance => a.score.total_cmp(&b.score),
            ScoreKind::Similarity => b.score.total_cmp(&a.score),
        };
        by_score.then_with(|| a.id.cmp(&b.id))
    });
    hits.truncate(k);
    Ok(QueryResult { k, kind, hits })
}

/// Resamples an image to `size × size` (area averaging) and clamps to `[0, 1]`.
pub fn fit_to_resolution(image: &Tensor, size: usize) -> Result<Tensor> {
    let (h, w, c) = image_dims(image)?;
    let clamped = |t: Tensor| t.map(|v| v.clamp(0.0, 1.0));
    if h == size && w == size {
        return Ok(clamped(image.clone().squeeze_batch()));
    }
    let mut out = vec![0.0f32; size * size * c];
    for ch in 0..c {
        let plane: Vec<f64> = image.data().iter().skip(ch).step_by(c).map(|&v| v as f64).collect();
        for (i, v) in resize_area(&plane, h, w, size, size).into_iter().enumerate() {
            out[i * c + ch] = v as f32;
        }
    }
    Ok(clamped(Tensor::new(vec![size, size, c], out)?))
}

fn check_encoder(encoder: &Network) -> Result<()> {
    encoder.expect_kind(NetKind::InverseGenerator)
}

/// `z′` of one image at the encoder's resolution.
pub fn embed(encoder: &Network, image: &Tensor) -> Result<Vec<f32>> {
    check_encoder(encoder)?;
    let x = fit_to_resolution(image, encoder.config.image_size)?.unsqueeze_batch();
    Ok(encoder.infer(&x)?.into_data())
}

/// Exact Euclidean distance, accumulated in 64 bits.
pub fn latent_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

impl LatentIndex {
    /// Embeds every image; each is encoded on its own, so a record depends
    /// only on its image.
    pub fn build(encoder: &Network, ids: &[String], images: &[Tensor]) -> Result<Self> {
        check_encoder(encoder)?;
        if ids.len() != images.len() {
            return Err(Error::validation("ids and images differ in length"));
        }
        let records = ids
            .par_iter()
            .zip(images.par_iter())
            .map(|(id, image)| {
                Ok(IndexRecord {
                    id: id.clone(),
                    z: embed(encoder, image)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LatentIndex {
            latent_dim: encoder.config.latent_dim,
            fingerprint: encoder.fingerprint(),
            records,
        })
    }

    /// Builds from image files; unreadable files are skipped with a warning.
    /// Returns the index and the number of skipped files.
    pub fn build_from_files(encoder: &Network, paths: &[PathBuf]) -> Result<(Self, usize)> {
        let loaded: Vec<Option<(String, Tensor)>> = paths
            .iter()
            .map(|p| match image_io::load_image(p) {
                Ok(img) => Some((image_id(p), img)),
                Err(e) => {
                    log::warn!("skipping {}: {e}", p.display());
                    None
                }
            })
            .collect();
        let skipped = loaded.iter().filter(|l| l.is_none()).count();
        if skipped > 0 {
            log::warn!("skipped {skipped} of {} files while building the index", paths.len());
        }
        let (ids, images): (Vec<String>, Vec<Tensor>) = loaded.into_iter().flatten().unzip();
        Ok((LatentIndex::build(encoder, &ids, &images)?, skipped))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn check_model(&self, encoder: &Network) -> Result<()> {
        let fp = encoder.fingerprint();
        if fp != self.fingerprint {
            return Err(Error::validation(format!(
                "index was built with encoder {} but the query encoder is {}",
                hex_string(&self.fingerprint),
                hex_string(&fp)
            )));
        }
        Ok(())
    }

    /// Exact k nearest neighbours of `z` by linear scan.
    pub fn search_latent(&self, z: &[f32], k: usize) -> Result<QueryResult> {
        if z.len() != self.latent_dim {
            return Err(Error::validation(format!(
                "query latent has length {}, index expects {}",
                z.len(),
                self.latent_dim
            )));
        }
        let hits = self
            .records
            .iter()
            .map(|r| Hit {
                id: r.id.clone(),
                score: latent_distance(&r.z, z),
            })
            .collect();
        rank(hits, ScoreKind::Distance, k)
    }

    /// Embeds `query` with `encoder` (which must match the index) and searches.
    pub fn search(&self, encoder: &Network, query: &Tensor, k: usize) -> Result<QueryResult> {
        self.check_model(encoder)?;
        self.search_latent(&embed(encoder, query)?, k)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.latent_dim as u32).to_le_bytes());
        out.extend_from_slice(&self.fingerprint);
        for r in &self.records {
            out.extend_from_slice(&(r.id.len() as u32).to_le_bytes());
            out.extend_from_slice(r.id.as_bytes());
            for v in &r.z {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, (u64, String)> {
        let mut pos = 0usize;
        let mut take = |n: usize, what: &str| -> std::result::Result<&[u8], (u64, String)> {
            if bytes.len() - pos < n {
                return Err((pos as u64, format!("truncated while reading {what}")));
            }
            pos += n;
            Ok(&bytes[pos - n..pos])
        };
        if take(7, "magic")? != INDEX_MAGIC {
            return Err((0, "not an index file (bad magic)".into()));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap()) as usize;
        let count = u32_at(take(4, "count")?);
        let latent_dim = u32_at(take(4, "latent_dim")?);
        let fingerprint: [u8; 32] = take(32, "fingerprint")?.try_into().unwrap();
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let len = u32_at(take(4, "id length")?);
            let id = std::str::from_utf8(take(len, "id")?)
                .map_err(|e| (0, format!("id is not UTF-8: {e}")))?
                .to_string();
            let z = take(latent_dim * 4, "latent")?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            records.push(IndexRecord { id, z });
        }
        if pos != bytes.len() {
            return Err((pos as u64, "trailing bytes after the last record".into()));
        }
        Ok(LatentIndex {
            latent_dim,
            fingerprint,
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        LatentIndex::from_bytes(&bytes).map_err(|(offset, message)| Error::Parse {
            path: path.to_path_buf(),
            offset,
            message,
        })
    }
}

/// Identifier of an image file: its file name.
pub fn image_id(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Dhash,
    Phash,
    Histogram,
}

/// Precomputed descriptors for the baseline searches.
#[derive(Debug, Clone)]
pub struct BaselineCorpus {
    pub ids: Vec<String>,
    pub dhashes: Vec<HashCode>,
    pub phashes: Vec<HashCode>,
    pub histograms: Vec<HistogramDescriptor>,
}

impl BaselineCorpus {
    pub fn build(ids: &[String], images: &[Tensor]) -> Result<Self> {
        if ids.len() != images.len() {
            return Err(Error::validation("ids and images differ in length"));
        }
        let described = images
            .par_iter()
            .map(|img| Ok((dhash(img)?, phash(img)?, color_histogram(img, DEFAULT_HISTOGRAM_BINS)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut corpus = BaselineCorpus {
            ids: ids.to_vec(),
            dhashes: Vec::with_capacity(ids.len()),
            phashes: Vec::with_capacity(ids.len()),
            histograms: Vec::with_capacity(ids.len()),
        };
        for (d, p, h) in described {
            corpus.dhashes.push(d);
            corpus.phashes.push(p);
            corpus.histograms.push(h);
        }
        Ok(corpus)
    }

    pub fn search(&self, query: &Tensor, k: usize, method: BaselineMethod) -> Result<QueryResult> {
        let scores: Vec<f64> = match method {
            BaselineMethod::Dhash => {
                let q = dhash(query)?;
                self.dhashes.iter().map(|&h| hash_similarity(q, h)).collect()
            }
            BaselineMethod::Phash => {
                let q = phash(query)?;
                self.phashes.iter().map(|&h| hash_similarity(q, h)).collect()
            }
            BaselineMethod::Histogram => {
                let q = color_histogram(query, DEFAULT_HISTOGRAM_BINS)?;
                self.histograms
                    .iter()
                    .map(|h| histogram_intersection(&q, h))
                    .collect::<Result<_>>()?
            }
        };
        let hits = self
            .ids
            .iter()
            .zip(scores)
            .map(|(id, score)| Hit { id: id.clone(), score })
            .collect();
        rank(hits, ScoreKind::Similarity, k)
    }
}

/// Ranks `corpus` against `query` with one of the baseline descriptors.
pub fn search_baselines(
    ids: &[String],
    corpus: &[Tensor],
    query: &Tensor,
    k: usize,
    method: BaselineMethod,
) -> Result<QueryResult> {
    BaselineCorpus::build(ids, corpus)?.search(query, k, method)
}

/// Normalized 1-D Gaussian taps for offsets `−r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f32) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::validation(format!("blur sigma must be positive, got {sigma}")));
    }
    let s = sigma as f64;
    let r = (3.0 * s).ceil() as i64;
    let taps: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * s * s)).exp()).collect();
    let total: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / total).collect())
}

/// Separable Gaussian blur with clamp-to-edge borders, per channel.
/// Accepts `[H, W, C]` or `[N, H, W, C]`.
pub fn gaussian_blur(image: &Tensor, sigma: f32) -> Result<Tensor> {
    let taps = gaussian_kernel(sigma)?;
    let r = (taps.len() / 2) as i64;
    let shape = image.shape().to_vec();
    let (n, h, w, c) = match shape.as_slice() {
        [h, w, c] => (1, *h, *w, *c),
        [n, h, w, c] => (*n, *h, *w, *c),
        _ => {
            return Err(Error::validation(format!(
                "blur expects [H, W, C] or [N, H, W, C], got {shape:?}"
            )))
        }
    };
    let src = image.data();
    let mut out = vec![0.0f32; src.len()];
    let plane = h * w * c;
    for b in 0..n {
        let img = &src[b * plane..(b + 1) * plane];
        let mut tmp = vec![0.0f64; plane];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for (t, &wt) in taps.iter().enumerate() {
                        let xx = (x as i64 + t as i64 - r).clamp(0, w as i64 - 1) as usize;
                        acc += wt * img[(y * w + xx) * c + ch] as f64;
                    }
                    tmp[(y * w + x) * c + ch] = acc;
                }
            }
        }
        let dst = &mut out[b * plane..(b + 1) * plane];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for (t, &wt) in taps.iter().enumerate() {
                        let yy = (y as i64 + t as i64 - r).clamp(0, h as i64 - 1) as usize;
                        acc += wt * tmp[(yy * w + x) * c + ch];
                    }
                    dst[(y * w + x) * c + ch] = acc as f32;
                }
            }
        }
    }
    Tensor::new(shape, out)
}

/// `G(IG(degraded))`: projects a degraded image onto the generator's outputs.
pub fn super_resolve(generator: &Network, encoder: &Network, degraded: &Tensor) -> Result<Tensor> {
    Ok(reconstruct(generator, encoder, degraded)?.1)
}

/// Fraction of equal bits between two attribute vectors.
pub fn attribute_agreement(a: &Attributes, b: &Attributes) -> f64 {
    let (x, y) = (a.bits(), b.bits());
    x.iter().zip(&y).filter(|(p, q)| p == q).count() as f64 / ATTRIBUTE_COUNT as f64
}

/// Mean attribute agreement between each query and each of its retrieved
/// images, averaged over queries.
///
/// `queries[i]` holds the query's attributes and result list; `lookup` maps
/// a retrieved id to its attributes.
pub fn label_similarity<'a>(
    queries: &[(Attributes, &QueryResult)],
    lookup: impl Fn(&str) -> Option<&'a Attributes>,
) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::validation("label similarity needs at least one query"));
    }
    let mut total = 0.0;
    for (attrs, result) in queries {
        if result.hits.is_empty() {
            return Err(Error::validation("query returned no results"));
        }
        let mut per = 0.0;
        for hit in &result.hits {
            let other = lookup(&hit.id)
                .ok_or_else(|| Error::validation(format!("no attributes for image {:?}", hit.id)))?;
            per += attribute_agreement(attrs, other);
        }
        total += per / result.hits.len() as f64;
    }
    Ok(total / queries.len() as f64)
}

/// Query perturbations standing in for real-world edits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// Adds `delta` to every channel, clamped to `[0, 1]`.
    Brightness(f32),
    /// Output channel `i` takes input channel `perm[i]`.
    ChannelSwap([usize; 3]),
    /// Fills a `height × width` rectangle at `(top, left)` with `value`.
    Occlusion {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
        value: f32,
    },
}

pub fn perturb(image: &Tensor, p: Perturbation) -> Result<Tensor> {
    let (h, w, c) = image_dims(image)?;
    let shape = image.shape().to_vec();
    match p {
        Perturbation::Brightness(delta) => Ok(image.map(|v| (v + delta).clamp(0.0, 1.0))),
        Perturbation::ChannelSwap(perm) => {
            if c != 3 || perm.iter().any(|&i| i >= 3) {
                return Err(Error::validation(format!("invalid channel permutation {perm:?}")));
            }
            let mut out = image.data().to_vec();
            for (dst, src) in out.chunks_mut(3).zip(image.data().chunks(3)) {
                for i in 0..3 {
                    dst[i] = src[perm[i]];
                }
            }
            Tensor::new(shape, out)
        }
        Perturbation::Occlusion {
            top,
            left,
            height,
            width,
            value,
        } => {
            let mut out = image.data().to_vec();
            for y in top.min(h)..(top + height).min(h) {
                for x in left.min(w)..(left + width).min(w) {
                    for ch in 0..c {
                        out[(y * w + x) * c + ch] = value.clamp(0.0, 1.0);
                    }
                }
            }
            Tensor::new(shape, out)
        }
    }
}

/// Brute-force ranking used to cross-check [`rank`]: repeatedly extracts the
/// best remaining element.
pub fn oracle_rank(scores: &[(String, f64)], kind: ScoreKind, k: usize) -> Vec<Hit> {
    let mut remaining: Vec<(String, f64)> = scores.to_vec();
    let better = |a: &(String, f64), b: &(String, f64)| -> bool {
        let ord = match kind {
            ScoreKind::Distance => a.1.partial_cmp(&b.1),
            ScoreKind::Similarity => b.1.partial_cmp(&a.1),
        };
        match ord {
            Some(Ordering::Less) => true,
            Some(Ordering::Equal) => a.0 < b.0,
            _ => false,
        }
    };
    let mut out = Vec::new();
    while out.len() < k && !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            if better(&remaining[i], &remaining[best]) {
                best = i;
            }
        }
        let (id, score) = remaining.swap_remove(best);
        out.push(Hit { id, score });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_inverse_generator, ArchitectureConfig};
    use crate::rng::SeededRng;

    fn random_images(n: usize, size: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = SeededRng::new(seed);
        (0..n)
            .map(|_| Tensor::from_fn(&[size, size, 3], |_| rng.uniform(0.0, 1.0)))
            .collect()
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img_{i:04}")).collect()
    }

    #[test]
    fn index_search_is_exact_and_round_trips() {
        let enc = build_inverse_generator(&ArchitectureConfig::new(8, 16, 3, 4), &mut SeededRng::new(1)).unwrap();
        let images = random_images(30, 16, 2);
        let index = LatentIndex::build(&enc, &ids(30), &images).unwrap();
        assert_eq!(index.len(), 30);
        let again = LatentIndex::build(&enc, &ids(30), &images).unwrap();
        assert_eq!(index.to_bytes(), again.to_bytes());
        assert_eq!(LatentIndex::from_bytes(&index.to_bytes()).unwrap(), index);
        for r in &index.records {
            assert!(r.z.iter().all(|v| *v > -1.0 && *v < 1.0));
        }

        let res = index.search(&enc, &images[7], 5).unwrap();
        assert_eq!(res.hits[0].id, "img_0007");
        assert_eq!(res.hits[0].score, 0.0);
        let q = embed(&enc, &images[7]).unwrap();
        let scores: Vec<(String, f64)> = index
            .records
            .iter()
            .map(|r| (r.id.clone(), latent_distance(&r.z, &q)))
            .collect();
        for k in [1, 5, 20] {
            assert_eq!(index.search(&enc, &images[7], k).unwrap().hits, oracle_rank(&scores, ScoreKind::Distance, k));
        }
        let all = index.search(&enc, &images[0], 100).unwrap();
        assert_eq!(all.hits.len(), 30);
        assert!(all.hits.windows(2).all(|w| w[0].score <= w[1].score));
        assert!(index.search(&enc, &images[0], 0).is_err());

        let other = build_inverse_generator(&enc.config, &mut SeededRng::new(9)).unwrap();
        assert!(index.search(&other, &images[0], 1).is_err());
    }

    #[test]
    fn index_file_errors() {
        let enc = build_inverse_generator(&ArchitectureConfig::new(8, 16, 3, 4), &mut SeededRng::new(1)).unwrap();
        let index = LatentIndex::build(&enc, &ids(3), &random_images(3, 16, 1)).unwrap();
        let bytes = index.to_bytes();
        assert!(LatentIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert_eq!(LatentIndex::from_bytes(b"BADIDX1").unwrap_err().0, 0);
        assert!(matches!(LatentIndex::load(Path::new("/no/such/index")), Err(Error::Io { .. })));
    }

    #[test]
    fn ties_break_by_id() {
        let hits = vec![
            Hit { id: "b".into(), score: 1.0 },
            Hit { id: "a".into(), score: 1.0 },
            Hit { id: "c".into(), score: 0.5 },
        ];
        let r = rank(hits.clone(), ScoreKind::Distance, 3).unwrap();
        let order: Vec<&str> = r.hits.iter().map(|h| h.id.as_str()).collect();
        assert_eq!(order, ["c", "a", "b"]);
        let r = rank(hits, ScoreKind::Similarity, 2).unwrap();
        let order: Vec<&str> = r.hits.iter().map(|h| h.id.as_str()).collect();
        assert_eq!(order, ["a", "b"]);
        assert_eq!(r.to_csv(), "rank,id,similarity\n1,a,1\n2,b,1\n");
    }

    #[test]
    fn baselines_rank_members_first() {
        let images = random_images(20, 16, 5);
        let corpus = BaselineCorpus::build(&ids(20), &images).unwrap();
        for method in [BaselineMethod::Dhash, BaselineMethod::Phash, BaselineMethod::Histogram] {
            let res = corpus.search(&images[3], 3, method).unwrap();
            assert_eq!(res.hits[0].id, "img_0003", "{method:?}");
            assert!((res.hits[0].score - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_properties() {
        for sigma in [0.5, 1.0, 2.3] {
            let k = gaussian_kernel(sigma).unwrap();
            assert_eq!(k.len(), 2 * (3.0 * sigma as f64).ceil() as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(gaussian_blur(&Tensor::zeros(&[4, 4, 3]), 0.0).is_err());
        let c = Tensor::full(&[9, 7, 3], 0.3);
        let b = gaussian_blur(&c, 1.0).unwrap();
        assert!(b.data().iter().all(|v| (v - 0.3).abs() < 1e-6));

        let mut impulse = Tensor::zeros(&[11, 11, 1]);
        impulse.data_mut()[5 * 11 + 5] = 1.0;
        let k = gaussian_kernel(1.0).unwrap();
        let out = gaussian_blur(&impulse, 1.0).unwrap();
        for dy in 0..7 {
            for dx in 0..7 {
                let v = out.data()[(2 + dy) * 11 + 2 + dx] as f64;
                assert!((v - k[dy] * k[dx]).abs() < 1e-7);
            }
        }

        let img = random_images(1, 16, 3).pop().unwrap();
        let blurred = gaussian_blur(&img, 1.0).unwrap();
        let var = |t: &Tensor| {
            let m = t.mean() as f64;
            t.data().iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / t.len() as f64
        };
        assert!(var(&blurred) < var(&img));
        assert!((blurred.mean() - img.mean()).abs() < 1e-3);
    }

    #[test]
    fn label_similarity_matches_hand_sum() {
        let a = Attributes { shape: 0, color: 0, size: 0, quadrant: 0 };
        let b = Attributes { shape: 1, color: 0, size: 0, quadrant: 0 };
        let c = Attributes { shape: 1, color: 2, size: 1, quadrant: 3 };
        let table = [("a", a), ("b", b), ("c", c)];
        let lookup = |id: &str| table.iter().find(|(k, _)| *k == id).map(|(_, v)| v);
        let res = QueryResult {
            k: 2,
            kind: ScoreKind::Distance,
            hits: vec![Hit { id: "a".into(), score: 0.0 }, Hit { id: "c".into(), score: 1.0 }],
        };
        // a vs a: 13/13; a vs c: 5 bits unchanged (13 − 8) → 5/13
        let expected = (1.0 + 5.0 / 13.0) / 2.0;
        assert!((label_similarity(&[(a, &res)], lookup).unwrap() - expected).abs() < 1e-12);
        assert!((attribute_agreement(&a, &b) - 11.0 / 13.0).abs() < 1e-12);
        let missing = QueryResult {
            hits: vec![Hit { id: "zz".into(), score: 0.0 }],
            ..res
        };
        assert!(label_similarity(&[(a, &missing)], lookup).is_err());
    }

    #[test]
    fn perturbations_and_resizing() {
        let img = random_images(1, 8, 1).pop().unwrap();
        let bright = perturb(&img, Perturbation::Brightness(2.0)).unwrap();
        assert!(bright.data().iter().all(|&v| v == 1.0));
        let swapped = perturb(&img, Perturbation::ChannelSwap([2, 1, 0])).unwrap();
        assert_eq!(swapped.data()[0], img.data()[2]);
        let occ = perturb(
            &img,
            Perturbation::Occlusion { top: 6, left: 6, height: 5, width: 5, value: 0.0 },
        )
        .unwrap();
        assert_eq!(occ.data()[(7 * 8 + 7) * 3], 0.0);
        assert_eq!(occ.data()[0], img.data()[0]);

        let big = Tensor::full(&[32, 24, 3], 0.25);
        assert_eq!(fit_to_resolution(&big, 16).unwrap(), Tensor::full(&[16, 16, 3], 0.25));
    }
}
