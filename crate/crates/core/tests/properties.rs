use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssc_core::autodiff::{Graph, ModGrad};
use ssc_core::discriminator::{labels_to_simplex, Discriminator};
use ssc_core::generator::{FusionMode, GenInputs, Generator, GeneratorConfig, ModSites};
use ssc_core::metrics::argmax_labels;
use ssc_core::nn::{Ctx, ParamStore};
use ssc_core::perturbation::{perturb_geometric, perturb_semantic, PerturbConfig};
use ssc_core::training::data::{Augment, Sample};
use ssc_core::training::optim::cosine_lr;
use ssc_core::voxel_data::{gen_synthetic_scene, LabelGrid, SceneSpec, EMPTY, IGNORE};
use ssc_core::Tensor;

fn rand_tensor(r: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.gen_range(-scale..scale)).collect()).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn labels(seed: u64, dims: [usize; 3], classes: u8) -> LabelGrid {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    let data = (0..n)
        .map(|_| match r.gen_range(0..10) {
            0 => IGNORE,
            1..=4 => EMPTY,
            _ => r.gen_range(1..=classes),
        })
        .collect();
    LabelGrid::new(dims, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn scenes_are_pure_with_bounded_tsdf_and_partitioned_masks(seed in any::<u64>()) {
        let spec = SceneSpec::desk(11);
        let a = gen_synthetic_scene(seed, &spec).unwrap();
        prop_assert_eq!(&a, &gen_synthetic_scene(seed, &spec).unwrap());
        prop_assert!(a.tsdf.values.iter().all(|t| (-1.0..=1.0).contains(t)));
        let c = a.mask.counts();
        prop_assert_eq!(c.visible + c.occluded + c.outside, a.grid.len());
    }

    #[test]
    fn projection_scatter_and_gather_are_adjoint(seed in any::<u64>(), channels in 1usize..4) {
        let scene = gen_synthetic_scene(seed, &SceneSpec::desk(11)).unwrap();
        let map = GenInputs::from_scene(&scene).unwrap().proj;
        let [x, y, z] = scene.grid.dims;
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let feat = rand_tensor(&mut r, &[channels, 1, 1, map.in_len], 1.0);
        let g = rand_tensor(&mut r, &[channels, x, y, z], 1.0);
        let lhs = dot(&map.apply(&feat, &[channels, x, y, z]).unwrap(), &g);
        let rhs = dot(&feat, &map.apply_transpose(&g, feat.shape()));
        prop_assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(rhs.abs()).max(1e-12), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn modulation_gradient_into_v_r_is_scaled_upstream(seed in any::<u64>(), c in 1usize..4, n in 1usize..6) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let shape = [c, n, 1, 2];
        let (v, s, b, up) = (
            rand_tensor(&mut r, &shape, 3.0),
            rand_tensor(&mut r, &shape, 5.0),
            rand_tensor(&mut r, &shape, 1.0),
            rand_tensor(&mut r, &shape, 1.0),
        );
        let mut g = Graph::new();
        let (vv, sv, bv) = (g.param(v), g.constant(s.clone()), g.constant(b));
        let y = g.modulate(vv, sv, bv, ModGrad::Exact).unwrap();
        let grads = g.backward_with(y, up.clone()).unwrap();
        for ((&got, &u), &m) in grads.get(vv).unwrap().data().iter().zip(up.data()).zip(s.data()) {
            let want = u * (1.0 + sigmoid(m));
            prop_assert!((got - want).abs() <= 1e-8 * want.abs().max(1e-12));
        }
    }

    #[test]
    fn addition_passes_upstream_gradient_unchanged(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let shape = [2, 3, 2, 2];
        let (v_r, v_t, up) = (rand_tensor(&mut r, &shape, 2.0), rand_tensor(&mut r, &shape, 2.0), rand_tensor(&mut r, &shape, 1.0));
        let mut g = Graph::new();
        let (a, b) = (g.param(v_r), g.param(v_t));
        let y = g.add(a, b).unwrap();
        let grads = g.backward_with(y, up.clone()).unwrap();
        prop_assert_eq!(grads.get(a).unwrap().data(), up.data());
    }

    #[test]
    fn zero_parameters_give_zero_logits(seed in any::<u64>()) {
        let cfg = GeneratorConfig::desk(11, FusionMode::Modulation, ModSites::ALL);
        let g = Generator::new(cfg).unwrap();
        let mut params = g.init_params(seed % 4).unwrap();
        params.zero_all();
        let scene = gen_synthetic_scene(seed, &SceneSpec::desk(11)).unwrap();
        let mut ctx = Ctx::new(&params);
        let out = g.forward(&mut ctx, &GenInputs::from_scene(&scene).unwrap()).unwrap();
        prop_assert!(ctx.value(out.logits).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn discriminator_scores_lie_strictly_inside_unit_interval(seed in any::<u64>()) {
        let disc = Discriminator::new(3, [8, 8, 8]).unwrap();
        let params: ParamStore = disc.init_params(seed % 8).unwrap();
        let y = labels(seed, [8, 8, 8], 3);
        let p = disc.score(&params, &labels_to_simplex(&y, 3).unwrap()).unwrap().p;
        prop_assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn geometric_fakes_only_erase(seed in any::<u64>(), pg in 0.0f64..=1.0) {
        let y = labels(seed, [6, 5, 7], 11);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (out, _) = perturb_geometric(&y, pg, &mut r).unwrap();
        let mut r2 = ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(&out, &perturb_geometric(&y, pg, &mut r2).unwrap().0);
        for (&a, &b) in y.labels.iter().zip(&out.labels) {
            prop_assert!(b == a || (b == EMPTY && a != IGNORE));
        }
    }

    #[test]
    fn semantic_fakes_keep_occupancy(seed in any::<u64>()) {
        let y = labels(seed, [6, 5, 7], 11);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (out, rec) = perturb_semantic(&y, &PerturbConfig::default(), 11, &mut r).unwrap();
        for (&a, &b) in y.labels.iter().zip(&out.labels) {
            prop_assert_eq!(a == EMPTY, b == EMPTY);
            prop_assert_eq!(a == IGNORE, b == IGNORE);
            if a != b {
                prop_assert!(rec.pairs.contains(&(a, b)));
            }
        }
    }

    #[test]
    fn cosine_schedule_hits_endpoints_and_never_rises(epochs in 2usize..200, init in 1e-4f64..1e-1, min_frac in 0.0f64..0.5) {
        let min = init * min_frac;
        prop_assert_eq!(cosine_lr(0, epochs, init, min), init);
        prop_assert!((cosine_lr(epochs - 1, epochs, init, min) - min).abs() <= 1e-9);
        for e in 1..epochs {
            prop_assert!(cosine_lr(e, epochs, init, min) <= cosine_lr(e - 1, epochs, init, min));
        }
    }

    #[test]
    fn augmentation_moves_gt_and_tsdf_together(seed in any::<u64>(), bits in 0u8..16) {
        let scene = gen_synthetic_scene(seed, &SceneSpec::desk(11)).unwrap();
        let s = Sample::from_scene(&scene).unwrap();
        let aug = Augment { flip_x: bits & 1 != 0, flip_z: bits & 2 != 0, swap_xz: false, flip_2d: bits & 4 != 0 };
        let t = aug.apply(&s).unwrap();
        for i in 0..s.gt.labels.len() {
            let j = aug.map_voxel(s.gt.dims, i);
            prop_assert_eq!(t.gt.labels[j], s.gt.labels[i]);
            prop_assert_eq!(t.inputs.tsdf.data()[j], s.inputs.tsdf.data()[i]);
        }
    }

    #[test]
    fn argmax_ties_go_to_the_lowest_class(seed in any::<u64>(), k in 2usize..6) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n = 10;
        let data: Vec<f64> = (0..k * n).map(|_| r.gen_range(0..3) as f64).collect();
        let scores = Tensor::from_vec(&[k, n, 1, 1], data.clone()).unwrap();
        let got = argmax_labels(&scores).unwrap();
        for p in 0..n {
            let best = (0..k).map(|c| data[c * n + p]).fold(f64::NEG_INFINITY, f64::max);
            let first = (0..k).find(|&c| data[c * n + p] == best).unwrap();
            prop_assert_eq!(got.labels[p] as usize, first);
        }
    }
}
