use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use slidebench::extractor::{Extractor, FeatureExtractor};
use slidebench::metrics::MetricSelection;
use slidebench::par;
use slidebench::ratecontrol::{evaluate_at_quality, SweepInput, SweepOptions};
use slidebench::refcodec::RefCodec;
use slidebench::{synth, Codec, Exec};

const MODES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn refcodec_batch(c: &mut Criterion) {
    let tiles = synth::corpus(1, 32, 224);
    let codec = RefCodec::default();
    let mut group = c.benchmark_group("refcodec_round_trip_32x224");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::try_map(exec, &tiles, |t| codec.round_trip(t, 80.0)).unwrap())
        });
    }
    group.finish();
}

fn extractor_batch(c: &mut Criterion) {
    let tiles = synth::corpus(2, 8, 224);
    let x = Extractor::seeded(1);
    let mut group = c.benchmark_group("extractor_8x224");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::try_map(exec, &tiles, |t| x.extract(t)).unwrap())
        });
    }
    group.finish();
}

fn sweep_point(c: &mut Criterion) {
    let tiles = synth::corpus(3, 16, 224);
    let codec = RefCodec::default();
    let input = SweepInput::new(&tiles);
    let mut group = c.benchmark_group("evaluate_16x224_psnr_ms_ssim");
    group.sample_size(10);
    for (name, exec) in MODES {
        let opts = SweepOptions {
            selection: MetricSelection {
                deep_distance: false,
                cosine: false,
                ..MetricSelection::default()
            },
            exec,
            ..SweepOptions::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate_at_quality(&codec, &input, 50.0, &opts, None).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, refcodec_batch, extractor_batch, sweep_point);
criterion_main!(benches);
