use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssc_core::autodiff::conv::{self, ConvGeom};
use ssc_core::generator::{FusionMode, GenInputs, Generator, GeneratorConfig, ModSites};
use ssc_core::nn::Ctx;
use ssc_core::parallel;
use ssc_core::voxel_data::{gen_synthetic_scene, SceneSpec};
use ssc_core::Tensor;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn modes() -> [(&'static str, bool); 2] {
    [("parallel", true), ("sequential", false)]
}

fn conv3d(c: &mut Criterion) {
    let x = random(&[16, 40, 24, 40], 1);
    let w = random(&[16, 16, 3, 3, 3], 2);
    let mut group = c.benchmark_group("conv3d_16x40x24x40");
    for (name, on) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            parallel::set_enabled(on);
            b.iter(|| conv::forward(&x, &w, None, ConvGeom::cube(3, 1)).unwrap());
        });
    }
    parallel::set_enabled(true);
    group.finish();
}

fn generator_step(c: &mut Criterion) {
    let scene = gen_synthetic_scene(0, &SceneSpec::desk(11)).unwrap();
    let g = Generator::new(GeneratorConfig::desk(11, FusionMode::Modulation, ModSites::ALL)).unwrap();
    let params = g.init_params(3).unwrap();
    let inputs = GenInputs::from_scene(&scene).unwrap();
    let mut group = c.benchmark_group("generator_forward_backward");
    group.sample_size(10);
    for (name, on) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            parallel::set_enabled(on);
            b.iter(|| {
                let mut ctx = Ctx::new(&params);
                let out = g.forward(&mut ctx, &inputs).unwrap();
                let seed = Tensor::full(ctx.value(out.logits).shape(), 1.0);
                let grads = ctx.graph.backward_with(out.logits, seed).unwrap();
                ctx.param_grads(&grads)
            });
        });
    }
    parallel::set_enabled(true);
    group.finish();
}

criterion_group!(benches, conv3d, generator_step);
criterion_main!(benches);
