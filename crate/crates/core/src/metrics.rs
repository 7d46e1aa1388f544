//! Perceptual image fingerprints and similarity scores: difference hash,
//! DCT perceptual hash and color-histogram intersection.
//!
//! Fixed variant choices, so hashes are bit-reproducible:
//! - grayscale is Rec. 601 luma, `0.299 R + 0.587 G + 0.114 B`;
//! - every downscale is an area-averaging box filter computed exactly in fixed point;
//! - dHash: 9×8 thumbnail, bit `(r, c) = p(r, c) > p(r, c+1)`;
//! - pHash: 32×32 thumbnail, unnormalized 2-D DCT-II, the 8×8 block of rows
//!   0–7 × columns 0–7 (DC included), bit = coefficient > median of the 64.
//!
//! Bits are packed row-major with the first bit in the most significant
//! position, so the 16-digit hex rendering reads in scan order.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct HashCode(pub u64);

impl HashCode {
    pub fn hamming(self, other: HashCode) -> u32 {
        (self.0 ^ other.0).count_ones()
    }

    pub fn similarity(self, other: HashCode) -> f64 {
        hash_similarity(self, other)
    }

    fn from_bits(bits: impl IntoIterator<Item = bool>) -> HashCode {
        let mut v = 0u64;
        let mut n = 0;
        for b in bits {
            v = (v << 1) | b as u64;
            n += 1;
        }
        debug_assert_eq!(n, 64);
        HashCode(v)
    }
}

impl fmt::Display for HashCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for HashCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() != 16 {
            return Err(Error::validation(format!("hash code must be 16 hex digits: {s:?}")));
        }
        u64::from_str_radix(s, 16)
            .map(HashCode)
            .map_err(|e| Error::validation(format!("bad hash code {s:?}: {e}")))
    }
}

/// `1 − hamming(a, b) / 64`.
pub fn hash_similarity(a: HashCode, b: HashCode) -> f64 {
    1.0 - a.hamming(b) as f64 / 64.0
}

/// Height, width and channels of an `(H, W, C)` or `(1, H, W, C)` image.
pub fn image_dims(image: &Tensor) -> Result<(usize, usize, usize)> {
    match image.shape() {
        [h, w, c] => Ok((*h, *w, *c)),
        [1, h, w, c] => Ok((*h, *w, *c)),
        other => Err(Error::validation(format!(
            "expected an (H, W, C) image, got shape {other:?}"
        ))),
    }
}

/// Row-major luma plane in double precision.
pub fn grayscale(image: &Tensor) -> Result<(Vec<f64>, usize, usize)> {
    let (h, w, c) = image_dims(image)?;
    if h * w == 0 {
        return Err(Error::validation("empty image"));
    }
    let gray = match c {
        1 => image.data().iter().map(|&v| v as f64).collect(),
        3 | 4 => image
            .data()
            .chunks(c)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect(),
        _ => {
            return Err(Error::validation(format!(
                "grayscale needs 1, 3 or 4 channels, got {c}"
            )))
        }
    };
    Ok((gray, h, w))
}

const FIXED_ONE: f64 = (1u64 << 32) as f64;

/// Area-averaging resample along one axis in exact integer arithmetic.
///
/// `outer` independent lines of `len` samples; sample `i` of line `o` sits at
/// `o·len + i` when `stride == 1`, otherwise at `o + i·stride`. Source sample
/// `i` spans `[i·new_len, (i+1)·new_len)` and output `j` spans
/// `[j·len, (j+1)·len)` on a common integer grid, so overlaps are integers.
/// Outputs are left scaled by `len`.
fn resize_axis(src: &[i128], outer: usize, len: usize, stride: usize, new_len: usize) -> Vec<i128> {
    let mut out = vec![0i128; outer * new_len];
    for o in 0..outer {
        for j in 0..new_len {
            let (lo, hi) = (j * len, (j + 1) * len);
            let mut acc = 0i128;
            for i in lo / new_len..hi.div_ceil(new_len).min(len) {
                let overlap = hi.min((i + 1) * new_len) - lo.max(i * new_len);
                let idx = if stride == 1 { o * len + i } else { o + i * stride };
                acc += overlap as i128 * src[idx];
            }
            let dst = if stride == 1 { o * new_len + j } else { j * outer + o };
            out[dst] = acc;
        }
    }
    out
}

/// Box-filter resize of an `h × w` plane to `nh × nw`.
///
/// Inputs are quantized to 2⁻³² and averaged exactly, so equal source regions
/// give bit-equal outputs (a constant image stays exactly constant).
pub fn resize_area(plane: &[f64], h: usize, w: usize, nh: usize, nw: usize) -> Vec<f64> {
    let fixed: Vec<i128> = plane.iter().map(|&v| (v * FIXED_ONE).round() as i128).collect();
    let rows = resize_axis(&fixed, h, w, 1, nw); // h × nw, scaled by w
    let both = resize_axis(&rows, nw, h, nw, nh); // nh × nw, scaled by w·h
    let denom = FIXED_ONE * (w * h) as f64;
    both.into_iter().map(|v| v as f64 / denom).collect()
}

pub fn dhash(image: &Tensor) -> Result<HashCode> {
    let (gray, h, w) = grayscale(image)?;
    let thumb = resize_area(&gray, h, w, 8, 9);
    Ok(HashCode::from_bits((0..8).flat_map(|r| {
        let row = &thumb[r * 9..(r + 1) * 9];
        (0..8).map(move |c| row[c] > row[c + 1])
    })))
}

fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        for i in 0..n {
            m[k * n + i] = (std::f64::consts::PI / n as f64 * (i as f64 + 0.5) * k as f64).cos();
        }
    }
    m
}

/// Unnormalized 2-D DCT-II of an `n × n` plane, returned row-major.
pub fn dct2(plane: &[f64], n: usize) -> Vec<f64> {
    let m = dct_matrix(n);
    let mut tmp = vec![0.0; n * n];
    for r in 0..n {
        for k in 0..n {
            tmp[r * n + k] = (0..n).map(|i| m[k * n + i] * plane[r * n + i]).sum();
        }
    }
    let mut out = vec![0.0; n * n];
    for k in 0..n {
        for c in 0..n {
            out[k * n + c] = (0..n).map(|i| m[k * n + i] * tmp[i * n + c]).sum();
        }
    }
    out
}

pub fn phash(image: &Tensor) -> Result<HashCode> {
    let (gray, h, w) = grayscale(image)?;
    let thumb = resize_area(&gray, h, w, 32, 32);
    let coeffs = dct2(&thumb, 32);
    let block: Vec<f64> = (0..8)
        .flat_map(|r| coeffs[r * 32..r * 32 + 8].to_vec())
        .collect();
    let mut sorted = block.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = 0.5 * (sorted[31] + sorted[32]);
    Ok(HashCode::from_bits(block.into_iter().map(|v| v > median)))
}

/// Joint color histogram normalized to unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramDescriptor {
    pub bins_per_channel: usize,
    pub weights: Vec<f64>,
}

pub const DEFAULT_HISTOGRAM_BINS: usize = 8;

fn bin_of(v: f32, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) * bins as f32) as usize).min(bins - 1)
}

pub fn color_histogram(image: &Tensor, bins_per_channel: usize) -> Result<HistogramDescriptor> {
    let (h, w, c) = image_dims(image)?;
    if h * w == 0 {
        return Err(Error::validation("histogram of a zero-pixel image"));
    }
    if bins_per_channel == 0 {
        return Err(Error::validation("bins_per_channel must be positive"));
    }
    let b = bins_per_channel;
    let mut weights = vec![0.0; b * b * b];
    for px in image.data().chunks(c) {
        let (r, g, bl) = match c {
            1 => (px[0], px[0], px[0]),
            _ if c >= 3 => (px[0], px[1], px[2]),
            _ => return Err(Error::validation(format!("unsupported channel count {c}"))),
        };
        weights[(bin_of(r, b) * b + bin_of(g, b)) * b + bin_of(bl, b)] += 1.0;
    }
    let n = (h * w) as f64;
    for v in &mut weights {
        *v /= n;
    }
    Ok(HistogramDescriptor {
        bins_per_channel,
        weights,
    })
}

/// `Σ min(h1ᵢ, h2ᵢ)`.
pub fn histogram_intersection(a: &HistogramDescriptor, b: &HistogramDescriptor) -> Result<f64> {
    if a.bins_per_channel != b.bins_per_channel {
        return Err(Error::validation(format!(
            "histogram bins differ: {} vs {}",
            a.bins_per_channel, b.bins_per_channel
        )));
    }
    Ok(a.weights
        .iter()
        .zip(&b.weights)
        .map(|(x, y)| x.min(*y))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray_image(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> Tensor {
        Tensor::from_fn(&[h, w, 3], |i| {
            let p = i / 3;
            f(p / w, p % w)
        })
    }

    #[test]
    fn constant_image_hashes_to_zero() {
        let img = Tensor::full(&[17, 23, 3], 0.4);
        assert_eq!(dhash(&img).unwrap(), HashCode(0));
        assert_eq!(dhash(&img).unwrap().to_string(), "0000000000000000");
    }

    #[test]
    fn monotone_rows_give_extreme_hashes() {
        let inc = gray_image(8, 9, |_, c| c as f32 / 10.0);
        assert_eq!(dhash(&inc).unwrap(), HashCode(0));
        let dec = gray_image(8, 9, |_, c| 1.0 - c as f32 / 10.0);
        assert_eq!(dhash(&dec).unwrap(), HashCode(u64::MAX));
        let dec_big = gray_image(32, 36, |_, c| 1.0 - c as f32 / 40.0);
        assert_eq!(dhash(&dec_big).unwrap(), HashCode(u64::MAX));
    }

    #[test]
    fn empty_image_is_rejected() {
        let img = Tensor::zeros(&[1, 2, 3]).reshape(&[2, 1, 3]).unwrap();
        assert!(dhash(&img).is_ok());
        assert!(image_dims(&Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn hash_similarity_extremes() {
        let a = HashCode(0x0123_4567_89ab_cdef);
        assert_eq!(hash_similarity(a, a), 1.0);
        assert_eq!(hash_similarity(a, HashCode(!a.0)), 0.0);
        let b = HashCode(a.0 ^ 0b111_1111_1111);
        assert!((hash_similarity(a, b) - (1.0 - 11.0 / 64.0)).abs() < 1e-12);
    }

    #[test]
    fn hex_round_trip() {
        let a = HashCode(0xdead_beef_0000_0001);
        assert_eq!(a.to_string().parse::<HashCode>().unwrap(), a);
        assert!("xyz".parse::<HashCode>().is_err());
    }

    #[test]
    fn area_resize_of_block_upsample_is_identity() {
        let src: Vec<f64> = (0..12).map(|i| (i * 7 % 5) as f64).collect(); // 3×4
        let mut up = Vec::new();
        for r in 0..6 {
            for c in 0..12 {
                up.push(src[(r / 2) * 4 + c / 3]);
            }
        }
        let back = resize_area(&up, 6, 12, 3, 4);
        for (a, b) in back.iter().zip(&src) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn phash_splits_at_median() {
        let img = gray_image(64, 64, |r, c| ((r * 31 + c * 17) % 29) as f32 / 29.0);
        let h = phash(&img).unwrap();
        assert_eq!(h.0.count_ones(), 32);
        assert_eq!(phash(&img).unwrap(), h);
    }

    #[test]
    fn histogram_identity_and_disjoint() {
        let red = Tensor::from_fn(&[4, 4, 3], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
        let blue = Tensor::from_fn(&[4, 4, 3], |i| if i % 3 == 2 { 1.0 } else { 0.0 });
        let hr = color_histogram(&red, 8).unwrap();
        let hb = color_histogram(&blue, 8).unwrap();
        assert!((hr.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(histogram_intersection(&hr, &hr).unwrap(), 1.0);
        assert_eq!(histogram_intersection(&hr, &hb).unwrap(), 0.0);
        let h4 = color_histogram(&red, 4).unwrap();
        assert!(histogram_intersection(&hr, &h4).is_err());
    }
}
