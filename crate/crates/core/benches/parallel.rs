//! Parallel (default rayon pool) versus single-thread pool on the hot paths.
//! Build with `--no-default-features` for the fully sequential code path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mwslc::beamform::{separate, BeamformConfig};
use mwslc::coding::{encode_mwslc, SpatialGrid};
use mwslc::conditioning::theta_sweep;
use mwslc::pipeline::{demo_scene, prepare};
use mwslc::scene::{steering_matrix, ArrayGeometry};
use mwslc::stft::{analyze, StftConfig};

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    let all = rayon::ThreadPoolBuilder::new().build().expect("pool");
    vec![("sequential", one), ("parallel", all)]
}

fn bench(c: &mut Criterion) {
    let geometry = ArrayGeometry::default();
    let stft = StftConfig::default();
    let spec = demo_scene(&[60.0, 200.0], 2.0, 1, 16_000).expect("scene");
    let scene = prepare(&spec, &geometry, &stft, -35.0).expect("render");
    let grid = SpatialGrid::new(720, 360.0).expect("grid");
    let steering: Vec<_> = scene
        .truth
        .azimuths()
        .iter()
        .map(|&a| steering_matrix(&geometry, a, &stft))
        .collect();

    let mut g = c.benchmark_group("hot_paths");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new("analyze", name), |b| {
            b.iter(|| pool.install(|| analyze(&scene.rendered.mixture, &stft).expect("stft")))
        });
        g.bench_function(BenchmarkId::new("encode_mwslc", name), |b| {
            b.iter(|| pool.install(|| encode_mwslc(&scene.masks, &scene.truth, &grid, 6.0).expect("encode")))
        });
        g.bench_function(BenchmarkId::new("theta_sweep", name), |b| {
            b.iter(|| {
                pool.install(|| {
                    theta_sweep(&scene.masks, &scene.truth, 6.0, 360.0, &[90, 180, 360, 720, 1440]).expect("sweep")
                })
            })
        });
        g.bench_function(BenchmarkId::new("mvdr", name), |b| {
            b.iter(|| {
                pool.install(|| {
                    separate(&scene.mixture, &steering, &scene.masks, &BeamformConfig::default()).expect("mvdr")
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
