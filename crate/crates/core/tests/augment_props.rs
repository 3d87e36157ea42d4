use image::{Rgb, RgbImage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtmdet::augment::{
    augment_stream, cached_mosaic, draw_mosaic, mosaic, sample_rng, AugmentConfig, CacheConfig, CachePolicy,
    PipelineId, Sample, SampleCache,
};
use rtmdet::{AABox, AnyBox};

fn noise_sample(seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (rng.random_range(16..48), rng.random_range(16..48));
    let img = RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]));
    let n = rng.random_range(0..4);
    let boxes: Vec<AnyBox> = (0..n)
        .map(|_| {
            let x = rng.random_range(0.0..(w as f64 - 4.0));
            let y = rng.random_range(0.0..(h as f64 - 4.0));
            AnyBox::Axis(AABox::new(x, y, (x + rng.random_range(2.0..20.0)).min(w as f64), (y + rng.random_range(2.0..20.0)).min(h as f64)))
        })
        .collect();
    let classes = (0..n).map(|i| i % 3).collect();
    Sample::new(img, boxes, classes).unwrap()
}

#[test]
fn cached_equals_uncached() {
    let corpus: Vec<Sample> = (0..12).map(noise_sample).collect();
    for trial in 0..50u64 {
        let mut cache = SampleCache::new(corpus.len(), CachePolicy::Fifo, trial);
        for s in &corpus {
            assert!(cache.put(s.clone()).is_none());
        }
        let current = &corpus[(trial % 12) as usize];
        let out = (32, 32);
        let mut a = sample_rng(trial, 0);
        let cached = cached_mosaic(current, &cache, &mut a, (0.5, 2.0), out);
        let mut b = sample_rng(trial, 0);
        let draw = draw_mosaic(corpus.len(), &mut b, (0.5, 2.0), out);
        let [i, j, k] = draw.indices;
        let plain = mosaic([current, &corpus[i], &corpus[j], &corpus[k]], &draw, out);
        assert_eq!(cached.image.as_raw(), plain.image.as_raw());
        assert_eq!(cached, plain);
    }
}

#[test]
fn output_independent_of_thread_count() {
    let samples: Vec<Sample> = (0..16).map(|i| noise_sample(100 + i)).collect();
    let cfg = AugmentConfig {
        seed: 9,
        out_size: (32, 32),
        mosaic_cache: CacheConfig { capacity: 5, policy: CachePolicy::Random },
        mixup_cache: CacheConfig { capacity: 3, policy: CachePolicy::Random },
        ..Default::default()
    };
    for p in [PipelineId::MosaicMixUp, PipelineId::LsjFlip] {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| augment_stream(&samples, p, &cfg).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn boxes_stay_on_canvas(seed in any::<u64>()) {
        let samples: Vec<Sample> = (0..6).map(|i| noise_sample(seed.wrapping_add(i))).collect();
        let cfg = AugmentConfig { seed, out_size: (40, 24), ..Default::default() };
        for p in [PipelineId::MosaicMixUp, PipelineId::LsjFlip] {
            for s in augment_stream(&samples, p, &cfg).unwrap() {
                prop_assert_eq!(s.dims(), (40, 24));
                prop_assert_eq!(s.boxes.len(), s.classes.len());
                for b in &s.boxes {
                    let r = b.bounds();
                    prop_assert!(r.x1 >= -1e-9 && r.y1 >= -1e-9 && r.x2 <= 40.0 + 1e-9 && r.y2 <= 24.0 + 1e-9);
                    prop_assert!(b.area() >= 1.0 - 1e-9);
                }
            }
        }
    }

    #[test]
    fn cache_never_exceeds_capacity(cap in 1usize..12, n in 0usize..60, random in any::<bool>(), seed in any::<u64>()) {
        let policy = if random { CachePolicy::Random } else { CachePolicy::Fifo };
        let mut c = SampleCache::new(cap, policy, seed);
        for i in 0..n {
            c.put(i);
            prop_assert!(c.len() <= cap);
        }
        prop_assert_eq!(c.evictions(), n.saturating_sub(cap) as u64);
        if !random {
            let expect: Vec<usize> = (n.saturating_sub(cap)..n).collect();
            prop_assert_eq!(c.items(), &expect[..]);
        }
    }
}
