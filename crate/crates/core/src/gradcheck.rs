//! Central finite differences for checking analytic gradients.
//!
//! These helpers only ever evaluate the scalar function; they never look at
//! the tape, so they stay an independent reference for [`crate::autodiff`].

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ConvGeom, Graph, ModGrad, SparseMap, Var};
use crate::discriminator::Discriminator;
use crate::error::{Result, SscError};
use crate::generator::{Branches, FusionMode, GenInputs, Generator, GeneratorConfig, ModSites};
use crate::nn::{Ctx, ParamStore};
use crate::rng::{indexed, Stream};
use crate::tensor::Tensor;

/// Step used by the network-level checks (double precision).
pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor for [`rel_err`]; keeps near-zero gradients from turning
/// round-off into large relative errors.
pub const REL_FLOOR: f64 = 1e-4;

/// Central difference of `f` with respect to each coordinate in `indices`.
pub fn central_diff<F>(point: &[f64], indices: &[usize], step: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    indices
        .iter()
        .map(|&i| {
            let orig = x[i];
            x[i] = orig + step;
            let fp = f(&x);
            x[i] = orig - step;
            let fm = f(&x);
            x[i] = orig;
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err_floor(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    rel_err_floor(a, b, REL_FLOOR)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y)).fold(0.0, f64::max)
}

/// One row of a gradient-check report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    pub fn new(name: &str, cases: usize, max_rel_err: f64, tolerance: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            cases,
            max_rel_err,
            tolerance,
            passed: max_rel_err.is_finite() && max_rel_err < tolerance,
        }
    }
}

/// Tolerance used by [`run_suite`].
pub const SUITE_TOL: f64 = 1e-4;

type OpFn = fn(&mut Graph, &[Var]) -> Result<Var>;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

fn op_cases(name: &str, shapes: &[&[usize]], op: OpFn, seed: u64, cases: usize) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let mut rng = indexed(seed, Stream::Eval, case as u64);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(s, &mut rng)).collect();
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let y = op(&mut g, &vars)?;
        let r = rand_tensor(g.value(y).shape(), &mut rng);
        let grads = g.backward_with(y, r.clone())?;
        for (j, t) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[j], t);
            let idx: Vec<usize> = (0..4.min(t.len())).map(|_| rng.gen_range(0..t.len())).collect();
            let numeric = central_diff(t.data(), &idx, 1e-6, |pt| {
                let mut g = Graph::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(k, u)| {
                        if k == j {
                            g.constant(Tensor::from_vec(u.shape(), pt.to_vec()).expect("shape"))
                        } else {
                            g.constant(u.clone())
                        }
                    })
                    .collect();
                let y = op(&mut g, &vs).expect("forward");
                g.value(y).dot(&r)
            });
            let a: Vec<f64> = idx.iter().map(|&i| analytic.data()[i]).collect();
            worst = worst.max(max_rel_err(&a, &numeric));
        }
    }
    Ok(CheckResult::new(name, cases, worst, SUITE_TOL))
}

fn param_cases<F>(name: &str, store: &ParamStore, names: &[&str], seed: u64, cases: usize, loss: F) -> Result<CheckResult>
where
    F: Fn(&ParamStore, u64, bool) -> Result<(f64, BTreeMap<String, Tensor>)>,
{
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let mut rng = indexed(seed, Stream::Eval, 1000 + case as u64);
        let (_, grads) = loss(store, case as u64, true)?;
        for &pname in names {
            let base = store.get(pname).ok_or_else(|| SscError::MissingParameter(pname.into()))?;
            let idx: Vec<usize> = (0..2).map(|_| rng.gen_range(0..base.len())).collect();
            let numeric = central_diff(base.data(), &idx, 1e-6, |pt| {
                let mut q = store.clone();
                *q.get_mut(pname).expect("present") = Tensor::from_vec(base.shape(), pt.to_vec()).expect("shape");
                loss(&q, case as u64, false).expect("forward").0
            });
            let a: Vec<f64> = idx.iter().map(|&i| grads[pname].data()[i]).collect();
            worst = worst.max(max_rel_err(&a, &numeric));
        }
    }
    Ok(CheckResult::new(name, cases, worst, SUITE_TOL))
}

/// Finite-difference checks of every differentiable tape operation and of
/// parameter slices of small generator and discriminator networks.
pub fn run_suite(seed: u64, cases: usize) -> Result<Vec<CheckResult>> {
    let ops: Vec<(&str, Vec<&[usize]>, OpFn)> = vec![
        ("conv3d", vec![&[2, 5, 4, 6], &[3, 2, 3, 3, 3], &[3]], |g, v| g.conv(v[0], v[1], Some(v[2]), ConvGeom::cube(3, 2))),
        ("conv_axis_dilated", vec![&[2, 4, 7, 3], &[2, 2, 1, 3, 1]], |g, v| {
            g.conv(v[0], v[1], None, ConvGeom::axis(1, 2, 1))
        }),
        ("conv_transpose", vec![&[3, 2, 3, 2], &[3, 2, 2, 2, 2], &[2]], |g, v| {
            g.conv_transpose(v[0], v[1], Some(v[2]), ConvGeom { kernel: [2; 3], stride: [2; 3], dilation: [1; 3], padding: [0; 3] })
        }),
        ("modulate", vec![&[2, 3, 3, 3], &[2, 3, 3, 3], &[2, 3, 3, 3]], |g, v| g.modulate(v[0], v[1], v[2], ModGrad::Exact)),
        ("add", vec![&[2, 3, 2, 2], &[2, 3, 2, 2]], |g, v| g.add(v[0], v[1])),
        ("relu_sigmoid_scale", vec![&[3, 2, 2, 2]], |g, v| {
            let a = g.relu(v[0]);
            let b = g.sigmoid(a);
            Ok(g.scale(b, -1.7))
        }),
        ("softmax", vec![&[4, 2, 3, 2]], |g, v| Ok(g.softmax(v[0]))),
        ("sparse", vec![&[2, 1, 3, 4]], |g, v| {
            let map = SparseMap {
                in_len: 12,
                out_len: 8,
                triplets: vec![(0, 3, 1.0), (2, 5, 0.5), (2, 6, 0.5), (5, 11, 1.0), (7, 0, 1.0)],
            };
            g.sparse(v[0], Arc::new(map), &[2, 2, 2, 2])
        }),
        ("linear", vec![&[2, 2, 3], &[4, 12], &[4]], |g, v| g.linear(v[0], v[1], v[2])),
        ("smooth_ce", vec![&[4, 2, 2, 2]], |g, v| {
            let t = Arc::new(vec![(0, 1), (1, 0), (3, 3), (4, 2), (6, 1), (7, 0)]);
            g.smooth_ce(v[0], t, 0.1)
        }),
        ("neg_log_sigmoid", vec![&[1]], |g, v| {
            let a = g.neg_log_sigmoid(v[0], true)?;
            let b = g.neg_log_sigmoid(v[0], false)?;
            g.weighted_sum(&[(a, 0.3), (b, 0.9)])
        }),
    ];
    let mut out = Vec::new();
    for (name, shapes, op) in ops {
        out.push(op_cases(name, &shapes, op, seed, cases)?);
    }

    let gcfg = GeneratorConfig {
        channels: 4,
        dims: [8, 8, 8],
        num_classes: 3,
        image: [16, 16],
        fusion_mode: FusionMode::Modulation,
        sites: ModSites::ALL,
        branches: Branches::Both,
    };
    let gen = Generator::new(gcfg)?;
    let gparams = gen.init_params(seed)?;
    let gen_loss = |p: &ParamStore, case: u64, want: bool| -> Result<(f64, BTreeMap<String, Tensor>)> {
        let mut rng = indexed(seed, Stream::Eval, 2000 + case);
        let cells = 16;
        let triplets = (0..512).filter_map(|v| rng.gen_bool(0.2).then(|| (v, rng.gen_range(0..cells), 1.0))).collect();
        let inputs = GenInputs {
            rgb: rand_tensor(&[3, 1, 16, 16], &mut rng),
            tsdf: rand_tensor(&[1, 8, 8, 8], &mut rng),
            proj: Arc::new(SparseMap { in_len: cells, out_len: 512, triplets }),
        };
        let targets = Arc::new((0..512).map(|i| (i, rng.gen_range(0..4u8))).collect::<Vec<_>>());
        let mut ctx = Ctx::new(p);
        let o = gen.forward(&mut ctx, &inputs)?;
        let l = ctx.graph.smooth_ce(o.logits, targets, 0.1)?;
        let v = ctx.value(l).item();
        if !want {
            return Ok((v, BTreeMap::new()));
        }
        let g = ctx.graph.backward(l)?;
        Ok((v, ctx.param_grads(&g)))
    };
    out.push(param_cases(
        "generator_params",
        &gparams,
        &["gen/rgb/down0.w", "gen/tsdf/conv1.w", "gen/mod1/scale.w", "gen/dec/ddr1.y.w", "gen/mod3/bias.b", "gen/dec/score.w"],
        seed,
        cases,
        gen_loss,
    )?);

    let disc = Discriminator::new(3, [8, 8, 8])?;
    let dparams = disc.init_params(seed)?;
    let disc_loss = |p: &ParamStore, case: u64, want: bool| -> Result<(f64, BTreeMap<String, Tensor>)> {
        let mut rng = indexed(seed, Stream::Eval, 3000 + case);
        let logits = rand_tensor(&[4, 8, 8, 8], &mut rng);
        let mut ctx = Ctx::new(p);
        let x = ctx.constant(crate::autodiff::softmax_channels(&logits));
        let l = disc.discriminate(&mut ctx, x)?;
        let v = ctx.value(l).item();
        if !want {
            return Ok((v, BTreeMap::new()));
        }
        let g = ctx.graph.backward(l)?;
        Ok((v, ctx.param_grads(&g)))
    };
    out.push(param_cases(
        "discriminator_params",
        &dparams,
        &["disc/ddr0.reduce.w", "disc/ddr1.z.w", "disc/ddr1.short.w", "disc/fc0.w", "disc/fc1.b"],
        seed,
        cases,
        disc_loss,
    )?);
    Ok(out)
}
