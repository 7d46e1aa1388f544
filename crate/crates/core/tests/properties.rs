use aegan::checkpoint::{decode, encode};
use aegan::dataset::{generate_dataset, AttributeDistribution, Attributes};
use aegan::image_io::{self, ImageFormat};
use aegan::metrics::{color_histogram, dhash, hash_similarity, histogram_intersection, phash, HashCode};
use aegan::models::{build_generator, sample_prior, ArchitectureConfig};
use aegan::rng::SeededRng;
use aegan::search::{gaussian_blur, gaussian_kernel, oracle_rank, rank, Hit, IndexRecord, LatentIndex, ScoreKind};
use aegan::Tensor;
use proptest::prelude::*;

fn image_from(seed: u64, h: usize, w: usize) -> Tensor {
    let mut rng = SeededRng::new(seed);
    Tensor::from_fn(&[h, w, 3], |_| rng.uniform(0.0, 1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constant_images_hash_to_zero(h in 1usize..40, w in 1usize..40, v in 0.0f32..=1.0) {
        prop_assert_eq!(dhash(&Tensor::full(&[h, w, 3], v)).unwrap(), HashCode(0));
    }

    #[test]
    fn hash_similarity_is_a_bounded_symmetric_metric(a: u64, b: u64, c: u64) {
        let (a, b, c) = (HashCode(a), HashCode(b), HashCode(c));
        let s = hash_similarity(a, b);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s, hash_similarity(b, a));
        prop_assert_eq!(s == 1.0, a == b);
        prop_assert_eq!(hash_similarity(a, HashCode(!a.0)), 0.0);
        let d = |x: HashCode, y: HashCode| 1.0 - hash_similarity(x, y);
        prop_assert!(d(a, c) <= d(a, b) + d(b, c) + 1e-12);
    }

    #[test]
    fn histograms_are_distributions_and_intersection_is_bounded(
        seed: u64, other: u64, h in 1usize..9, w in 1usize..9, bins in 1usize..9,
    ) {
        let (x, y) = (image_from(seed, h, w), image_from(other, h, w));
        let (hx, hy) = (color_histogram(&x, bins).unwrap(), color_histogram(&y, bins).unwrap());
        prop_assert!(hx.weights.iter().all(|&v| v >= 0.0));
        prop_assert!((hx.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let s = histogram_intersection(&hx, &hy).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
        prop_assert_eq!(s, histogram_intersection(&hy, &hx).unwrap());
        prop_assert!((histogram_intersection(&hx, &hx).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blur_kernel_is_normalized_and_symmetric(sigma in 0.05f32..6.0) {
        let k = gaussian_kernel(sigma).unwrap();
        prop_assert_eq!(k.len(), 2 * (3.0 * sigma as f64).ceil() as usize + 1);
        prop_assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..k.len() / 2 {
            prop_assert_eq!(k[i], k[k.len() - 1 - i]);
        }
    }

    #[test]
    fn blur_preserves_constants_and_commutes_with_offsets(
        seed: u64, h in 1usize..12, w in 1usize..12, sigma in 0.3f32..3.0, offset in -0.5f32..0.5,
    ) {
        let x = image_from(seed, h, w);
        let lhs = gaussian_blur(&x.map(|v| v + offset), sigma).unwrap();
        let rhs = gaussian_blur(&x, sigma).unwrap().map(|v| v + offset);
        for (a, b) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((a - b).abs() < 1e-5);
        }
        let flat = gaussian_blur(&Tensor::full(&[h, w, 3], 0.3), sigma).unwrap();
        prop_assert!(flat.data().iter().all(|v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn hashes_ignore_stored_resolution(seed: u64, scale in 1usize..5) {
        let src = image_from(seed, 8, 9);
        let up = Tensor::from_fn(&[8 * scale, 9 * scale, 3], |i| {
            let (p, c) = (i / 3, i % 3);
            let (r, col) = (p / (9 * scale), p % (9 * scale));
            src.data()[((r / scale) * 9 + col / scale) * 3 + c]
        });
        prop_assert_eq!(dhash(&src).unwrap(), dhash(&up).unwrap());
    }

    #[test]
    fn ranking_matches_the_selection_oracle(scores in proptest::collection::vec(0u8..6, 1..40), k in 1usize..45) {
        // few distinct values force many ties
        let scored: Vec<(String, f64)> =
            scores.iter().enumerate().map(|(i, &s)| (format!("id{i:03}"), s as f64)).collect();
        for kind in [ScoreKind::Distance, ScoreKind::Similarity] {
            let hits = scored.iter().map(|(id, s)| Hit { id: id.clone(), score: *s }).collect();
            prop_assert_eq!(rank(hits, kind, k).unwrap().hits, oracle_rank(&scored, kind, k));
        }
    }

    #[test]
    fn index_bytes_round_trip(seed: u64, n in 0usize..20, dim in 1usize..12) {
        let mut rng = SeededRng::new(seed);
        let index = LatentIndex {
            latent_dim: dim,
            fingerprint: std::array::from_fn(|_| rng.below(256) as u8),
            records: (0..n)
                .map(|i| IndexRecord { id: format!("img_{i}.png"), z: (0..dim).map(|_| rng.symmetric_unit()).collect() })
                .collect(),
        };
        prop_assert_eq!(LatentIndex::from_bytes(&index.to_bytes()).unwrap(), index);
    }

    #[test]
    fn png_and_ppm_round_trips_agree(seed: u64, h in 1usize..10, w in 1usize..10) {
        let x = image_from(seed, h, w);
        let png = image_io::decode(ImageFormat::Png, &image_io::encode(ImageFormat::Png, &x).unwrap()).unwrap();
        let ppm = image_io::decode(ImageFormat::Ppm, &image_io::encode(ImageFormat::Ppm, &x).unwrap()).unwrap();
        prop_assert_eq!(&png, &ppm);
        for (a, b) in x.data().iter().zip(png.data()) {
            prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-7);
        }
    }

    #[test]
    fn attribute_bits_are_one_hot_per_group(seed: u64) {
        let data = generate_dataset(8, 16, seed, &AttributeDistribution::default()).unwrap();
        for a in data.attributes.unwrap() {
            let bits = a.bits();
            for (lo, hi) in [(0, 3), (3, 7), (7, 9), (9, 13)] {
                prop_assert_eq!(bits[lo..hi].iter().map(|&b| b as u32).sum::<u32>(), 1);
            }
            prop_assert_eq!(Attributes::from_bits(&bits).unwrap(), a);
        }
    }
}

#[test]
fn phash_is_stable_across_upsampled_resolutions() {
    let base = image_from(3, 16, 16);
    let upsample = |s: usize| {
        Tensor::from_fn(&[16 * s, 16 * s, 3], |i| {
            let (p, c) = (i / 3, i % 3);
            let (r, col) = (p / (16 * s), p % (16 * s));
            base.data()[((r / s) * 16 + col / s) * 3 + c]
        })
    };
    let (a, b) = (phash(&upsample(4)).unwrap(), phash(&upsample(8)).unwrap());
    assert!(a.hamming(b) <= 6, "{a} vs {b}");
}

#[test]
fn checkpoint_bytes_detect_single_bit_corruption() {
    let cfg = ArchitectureConfig::new(8, 16, 3, 4);
    let g = build_generator(&cfg, &mut SeededRng::new(4)).unwrap();
    let bytes = encode(&g, None);
    let back = decode(&bytes).unwrap();
    let z = sample_prior(&mut SeededRng::new(5), 3, 8);
    assert_eq!(back.network.infer(&z).unwrap(), g.infer(&z).unwrap());
    let mut rng = SeededRng::new(6);
    for _ in 0..64 {
        let mut bad = bytes.clone();
        let i = rng.below(bad.len());
        bad[i] ^= 1 << rng.below(8);
        assert!(decode(&bad).is_err(), "flip at byte {i} went unnoticed");
    }
}
