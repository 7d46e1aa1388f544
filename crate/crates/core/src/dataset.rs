//! Synthetic shapes dataset with binary attribute labels.
//!
//! Each sample is a single filled circle, square or triangle on a dark
//! background. Four attribute groups are drawn independently per sample and
//! encoded one-hot into 13 bits: shape (3), fill color (4), size (2) and the
//! image quadrant holding the shape's center (4). Sample `i` of a dataset
//! with seed `s` is rendered from `SeededRng::derive(s, i)` alone, so
//! datasets are identical regardless of thread count.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_io;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const SHAPES: [&str; 3] = ["circle", "square", "triangle"];
pub const COLORS: [&str; 4] = ["red", "green", "blue", "yellow"];
pub const SIZES: [&str; 2] = ["small", "large"];
pub const QUADRANTS: [&str; 4] = ["top_left", "top_right", "bottom_left", "bottom_right"];
pub const ATTRIBUTE_COUNT: usize = 13;

/// Value ranges of unlit and lit color channels; backgrounds are unlit.
const DIM: (f32, f32) = (0.0, 0.03);
const LIT: (f32, f32) = (0.97, 1.0);

/// Sub-pixel samples per axis used for anti-aliasing.
const SUPERSAMPLE: usize = 4;

const COLOR_CHANNELS: [[bool; 3]; 4] = [
    [true, false, false],
    [false, true, false],
    [false, false, true],
    [true, true, false],
];

/// Column names of the attribute table, in bit order.
pub fn attribute_names() -> Vec<String> {
    let groups: [(&str, &[&str]); 4] = [
        ("shape", &SHAPES),
        ("color", &COLORS),
        ("size", &SIZES),
        ("quadrant", &QUADRANTS),
    ];
    groups
        .iter()
        .flat_map(|(g, names)| names.iter().map(move |n| format!("{g}_{n}")))
        .collect()
}

/// Relative sampling weights of each attribute group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeDistribution {
    pub shape: [f64; 3],
    pub color: [f64; 4],
    pub size: [f64; 2],
    pub quadrant: [f64; 4],
}

impl Default for AttributeDistribution {
    fn default() -> Self {
        AttributeDistribution {
            shape: [1.0; 3],
            color: [1.0; 4],
            size: [1.0; 2],
            quadrant: [1.0; 4],
        }
    }
}

impl AttributeDistribution {
    pub fn validate(&self) -> Result<()> {
        let groups: [&[f64]; 4] = [&self.shape, &self.color, &self.size, &self.quadrant];
        for g in groups {
            if g.iter().any(|w| !w.is_finite() || *w < 0.0) || g.iter().sum::<f64>() <= 0.0 {
                return Err(Error::validation(format!(
                    "attribute weights must be non-negative with a positive sum, got {g:?}"
                )));
            }
        }
        Ok(())
    }

    /// Probability of each of the 13 bits being set.
    pub fn marginals(&self) -> Vec<f64> {
        let groups: [&[f64]; 4] = [&self.shape, &self.color, &self.size, &self.quadrant];
        groups
            .iter()
            .flat_map(|g| {
                let total: f64 = g.iter().sum();
                g.iter().map(move |w| w / total)
            })
            .collect()
    }
}

/// Attribute indices of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attributes {
    pub shape: usize,
    pub color: usize,
    pub size: usize,
    pub quadrant: usize,
}

impl Attributes {
    pub fn bits(&self) -> [u8; ATTRIBUTE_COUNT] {
        let mut bits = [0u8; ATTRIBUTE_COUNT];
        bits[self.shape] = 1;
        bits[3 + self.color] = 1;
        bits[7 + self.size] = 1;
        bits[9 + self.quadrant] = 1;
        bits
    }

    /// Inverse of [`Attributes::bits`]; fails unless every group has exactly one bit set.
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        if bits.len() != ATTRIBUTE_COUNT {
            return Err(Error::validation(format!(
                "expected {ATTRIBUTE_COUNT} attribute bits, got {}",
                bits.len()
            )));
        }
        let group = |lo: usize, hi: usize| -> Result<usize> {
            let set: Vec<usize> = (lo..hi).filter(|&i| bits[i] != 0).collect();
            match set.as_slice() {
                [i] if bits[*i] == 1 => Ok(i - lo),
                _ => Err(Error::validation(format!(
                    "attribute bits {lo}..{hi} must be one-hot, got {:?}",
                    &bits[lo..hi]
                ))),
            }
        };
        Ok(Attributes {
            shape: group(0, 3)?,
            color: group(3, 7)?,
            size: group(7, 9)?,
            quadrant: group(9, 13)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticSample {
    pub image: Tensor,
    pub attributes: Attributes,
}

struct Geometry {
    cx: f32,
    cy: f32,
    radius: f32,
}

fn covers(shape: usize, g: &Geometry, x: f32, y: f32) -> bool {
    let (dx, dy) = (x - g.cx, y - g.cy);
    match shape {
        0 => dx * dx + dy * dy <= g.radius * g.radius,
        1 => {
            let half = g.radius * 0.886;
            dx.abs() <= half && dy.abs() <= half
        }
        _ => {
            // upright equilateral triangle inscribed in the circle
            let r = g.radius;
            let bottom = g.cy + 0.5 * r;
            if y < g.cy - r || y > bottom {
                return false;
            }
            let half_width = (y - (g.cy - r)) / (1.5 * r) * (r * 0.866);
            dx.abs() <= half_width
        }
    }
}

/// Renders one sample of a `size`×`size` image from its own random stream.
pub fn render_sample(size: usize, dist: &AttributeDistribution, rng: &mut SeededRng) -> SyntheticSample {
    let attributes = Attributes {
        shape: rng.weighted(&dist.shape),
        color: rng.weighted(&dist.color),
        size: rng.weighted(&dist.size),
        quadrant: rng.weighted(&dist.quadrant),
    };
    let s = size as f32;
    let fill_mask = COLOR_CHANNELS[attributes.color];
    let level = |lit: bool| if lit { LIT } else { DIM };
    let background: [f32; 3] = std::array::from_fn(|_| rng.uniform(DIM.0, DIM.1));
    let fill: [f32; 3] = std::array::from_fn(|c| {
        let (lo, hi) = level(fill_mask[c]);
        rng.uniform(lo, hi)
    });
    let radius = if attributes.size == 0 {
        rng.uniform(0.16, 0.2)
    } else {
        rng.uniform(0.26, 0.3)
    } * s;
    let (qx, qy) = ((attributes.quadrant % 2) as f32, (attributes.quadrant / 2) as f32);
    let geometry = Geometry {
        cx: (0.25 + 0.5 * qx + rng.uniform(-0.04, 0.04)) * s,
        cy: (0.25 + 0.5 * qy + rng.uniform(-0.04, 0.04)) * s,
        radius,
    };

    let step = 1.0 / SUPERSAMPLE as f32;
    let total = (SUPERSAMPLE * SUPERSAMPLE) as f32;
    let image = {
        let mut data = Vec::with_capacity(size * size * 3);
        for py in 0..size {
            for px in 0..size {
                let mut hits = 0usize;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let x = px as f32 + (sx as f32 + 0.5) * step;
                        let y = py as f32 + (sy as f32 + 0.5) * step;
                        hits += covers(attributes.shape, &geometry, x, y) as usize;
                    }
                }
                let a = hits as f32 / total;
                for c in 0..3 {
                    data.push(background[c] * (1.0 - a) + fill[c] * a);
                }
            }
        }
        Tensor::new(vec![size, size, 3], data).expect("rendered buffer matches its shape")
    };
    SyntheticSample { image, attributes }
}

/// A batch of images with optional attribute labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    /// `[N, H, W, 3]` in `[0, 1]`.
    pub images: Tensor,
    pub attributes: Option<Vec<Attributes>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image_size(&self) -> usize {
        self.images.shape()[1]
    }

    /// Gathers the images at `indices` into a new batch.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let per = self.images.len() / self.len();
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Tensor::new(shape, data).expect("gathered batch matches its shape")
    }

    /// Attribute table: header `index,<13 names>` then one row of bits per sample.
    pub fn attribute_csv(&self) -> Option<String> {
        let attrs = self.attributes.as_ref()?;
        let mut out = String::from("index");
        for name in attribute_names() {
            out.push(',');
            out.push_str(&name);
        }
        out.push('\n');
        for (i, a) in attrs.iter().enumerate() {
            write!(out, "{i}").unwrap();
            for b in a.bits() {
                write!(out, ",{b}").unwrap();
            }
            out.push('\n');
        }
        Some(out)
    }

    /// Writes `img_00000.png`… plus `attributes.csv` when labels are present.
    pub fn save(&self, dir: &Path) -> Result<()> {
        image_io::save_batch(dir, "img", image_io::ImageFormat::Png, &self.images)?;
        if let Some(csv) = self.attribute_csv() {
            let path = dir.join("attributes.csv");
            std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Loads every image of a directory; `attributes.csv` is read if present.
    pub fn load(dir: &Path) -> Result<Self> {
        let (_, images) = image_io::load_image_dir(dir)?;
        let csv_path = dir.join("attributes.csv");
        let attributes = if csv_path.exists() {
            let text = std::fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
            let attrs = parse_attribute_csv(&text).map_err(|(line, message)| Error::Parse {
                path: csv_path.clone(),
                offset: line,
                message,
            })?;
            if attrs.len() != images.batch() {
                return Err(Error::validation(format!(
                    "{}: {} attribute rows for {} images",
                    csv_path.display(),
                    attrs.len(),
                    images.batch()
                )));
            }
            Some(attrs)
        } else {
            None
        };
        Ok(Dataset { images, attributes })
    }
}

/// Parses an attribute table; errors carry the byte offset of the failing line.
fn parse_attribute_csv(text: &str) -> std::result::Result<Vec<Attributes>, (u64, String)> {
    let mut offset = 0u64;
    let mut attrs = Vec::new();
    for (n, line) in text.split_inclusive('\n').enumerate() {
        let row = line.trim_end();
        if n > 0 && !row.is_empty() {
            let bits: std::result::Result<Vec<u8>, _> =
                row.split(',').skip(1).map(|f| f.trim().parse::<u8>()).collect();
            let bits = bits.map_err(|e| (offset, e.to_string()))?;
            attrs.push(Attributes::from_bits(&bits).map_err(|e| (offset, e.to_string()))?);
        }
        offset += line.len() as u64;
    }
    Ok(attrs)
}

/// Renders `n` samples of `image_size`² pixels.
pub fn generate_dataset(n: usize, image_size: usize, seed: u64, dist: &AttributeDistribution) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::validation("dataset size must be at least 1"));
    }
    if image_size == 0 {
        return Err(Error::validation("image size must be positive"));
    }
    dist.validate()?;
    let samples: Vec<SyntheticSample> = (0..n)
        .into_par_iter()
        .map(|i| render_sample(image_size, dist, &mut SeededRng::derive(seed, i as u64)))
        .collect();
    let attributes = samples.iter().map(|s| s.attributes).collect();
    let images: Vec<Tensor> = samples.into_iter().map(|s| s.image).collect();
    Ok(Dataset {
        images: Tensor::stack(&images)?,
        attributes: Some(attributes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_one_hot() {
        let dist = AttributeDistribution::default();
        let a = generate_dataset(50, 16, 9, &dist).unwrap();
        let b = generate_dataset(50, 16, 9, &dist).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.attributes, b.attributes);
        let c = generate_dataset(50, 16, 10, &dist).unwrap();
        assert_ne!(a.images, c.images);
        for attr in a.attributes.unwrap() {
            let bits = attr.bits();
            assert_eq!(bits.iter().map(|&b| b as usize).sum::<usize>(), 4);
            assert_eq!(Attributes::from_bits(&bits).unwrap(), attr);
        }
        assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let dist = AttributeDistribution::default();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = pool.install(|| generate_dataset(20, 8, 1, &dist).unwrap());
        let b = generate_dataset(20, 8, 1, &dist).unwrap();
        assert_eq!(a.images, b.images);
    }

    #[test]
    fn marginals_match_configuration() {
        let dist = AttributeDistribution {
            shape: [1.0, 2.0, 1.0],
            color: [1.0, 1.0, 1.0, 1.0],
            size: [7.0, 3.0],
            quadrant: [1.0, 1.0, 2.0, 4.0],
        };
        let n = 10_000;
        let data = generate_dataset(n, 4, 5, &dist).unwrap();
        let mut counts = [0usize; ATTRIBUTE_COUNT];
        for a in data.attributes.unwrap() {
            for (c, b) in counts.iter_mut().zip(a.bits()) {
                *c += b as usize;
            }
        }
        for (i, (c, p)) in counts.iter().zip(dist.marginals()).enumerate() {
            let empirical = *c as f64 / n as f64;
            assert!((empirical - p).abs() <= 0.05, "bit {i}: {empirical} vs {p}");
        }
    }

    #[test]
    fn fill_dominates_shape_interior() {
        let mut rng = SeededRng::new(2);
        let s = render_sample(32, &AttributeDistribution::default(), &mut rng);
        let q = s.attributes.quadrant;
        let (cx, cy) = (8 + 16 * (q % 2), 8 + 16 * (q / 2));
        let px = &s.image.data()[(cy * 32 + cx) * 3..(cy * 32 + cx) * 3 + 3];
        let on = COLOR_CHANNELS[s.attributes.color];
        for c in 0..3 {
            assert_eq!(px[c] >= 0.9, on[c], "{px:?} {:?}", s.attributes);
        }
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_dataset(6, 8, 3, &AttributeDistribution::default()).unwrap();
        data.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.attributes, data.attributes);
        let worst = back
            .images
            .data()
            .iter()
            .zip(data.images.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst <= 0.5 / 255.0 + 1e-7);
        assert_eq!(data.gather(&[2, 0]).batch_item(1), data.images.batch_item(0));
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(parse_attribute_csv("h\n0,1,1,0,1,0,0,0,1,0,1,0,0,0\n").is_err());
        assert!(generate_dataset(0, 8, 0, &AttributeDistribution::default()).is_err());
    }
}
