//! Voxel discriminator: four DDR layers, flatten, two linear layers.
//!
//! Parameters live under `disc/`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Var};
use crate::error::{shape_err, Result, SscError};
use crate::nn::{Ctx, ParamStore};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;
use crate::voxel_data::{LabelGrid, EMPTY, IGNORE};

/// Maximum deviation of a channel sum from 1 accepted as a simplex.
pub const SIMPLEX_TOL: f64 = 1e-4;

const WIDTHS: [usize; 4] = [32, 32, 32, 32];
const STRIDES: [usize; 4] = [2, 2, 3, 1];
const HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    RealGt,
    FakeGen,
    FakeGeo,
    FakeSem,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscScore {
    pub p: f64,
    pub logit: f64,
}

impl DiscScore {
    pub fn from_logit(logit: f64) -> Self {
        DiscScore { p: sigmoid(logit), logit }
    }
}

/// One-hot `[C+1, X, Y, Z]` encoding; IGNORE voxels count as empty.
pub fn labels_to_simplex(y: &LabelGrid, num_classes: usize) -> Result<Tensor> {
    let n = y.labels.len();
    let k = num_classes + 1;
    let mut data = vec![0.0; k * n];
    for (p, &l) in y.labels.iter().enumerate() {
        let c = if l == IGNORE { EMPTY } else { l } as usize;
        if c >= k {
            return Err(SscError::InvalidInput(format!("label {l} outside 0..={num_classes}")));
        }
        data[c * n + p] = 1.0;
    }
    Tensor::from_vec(&[k, y.dims[0], y.dims[1], y.dims[2]], data)
}

/// Errors unless every voxel's channel vector is non-negative and sums to 1
/// within [`SIMPLEX_TOL`].
pub fn check_simplex(x: &Tensor) -> Result<()> {
    let (k, n) = x.channels();
    let d = x.data();
    for p in 0..n {
        let mut s = 0.0;
        for c in 0..k {
            let v = d[c * n + p];
            if v < -SIMPLEX_TOL {
                return Err(SscError::InvalidInput(format!("negative mass {v} at voxel {p}")));
            }
            s += v;
        }
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(SscError::InvalidInput(format!("channel sum {s} at voxel {p}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub num_classes: usize,
    pub dims: [usize; 3],
    /// Strides actually used per DDR layer.
    pub strides: [usize; 4],
    /// True where a stride of 3 was replaced by 1 for indivisible dims.
    pub replaced: [bool; 4],
    pub flatten_len: usize,
}

impl Discriminator {
    pub fn new(num_classes: usize, dims: [usize; 3]) -> Result<Self> {
        let mut cur = dims;
        let mut strides = STRIDES;
        let mut replaced = [false; 4];
        for (i, s) in strides.iter_mut().enumerate() {
            if cur.iter().any(|&d| d % *s != 0) {
                if *s == 3 {
                    *s = 1;
                    replaced[i] = true;
                } else {
                    return Err(shape_err(format!("dims {dims:?} incompatible with stride chain {STRIDES:?}")));
                }
            }
            cur = cur.map(|d| d / *s);
        }
        Ok(Discriminator {
            num_classes,
            dims,
            strides,
            replaced,
            flatten_len: WIDTHS[3] * cur.iter().product::<usize>(),
        })
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = stream(seed, Stream::Init);
        rng.set_word_pos(1 << 40);
        let mut ctx = Ctx::initializing(rng);
        let [x, y, z] = self.dims;
        let mut zero = Tensor::zeros(&[self.num_classes + 1, x, y, z]);
        zero.data_mut()[..x * y * z].iter_mut().for_each(|v| *v = 1.0);
        let v = ctx.constant(zero);
        self.discriminate(&mut ctx, v)?;
        Ok(ctx.into_store())
    }

    /// Logit node for a `[C+1, X, Y, Z]` simplex volume.
    pub fn discriminate(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let [gx, gy, gz] = self.dims;
        if ctx.value(x).shape() != [self.num_classes + 1, gx, gy, gz] {
            return Err(shape_err(format!("discriminator input {:?}", ctx.value(x).shape())));
        }
        if cfg!(debug_assertions) {
            check_simplex(ctx.value(x))?;
        }
        let mut h = x;
        for (i, (&w, &s)) in WIDTHS.iter().zip(&self.strides).enumerate() {
            h = ctx.ddr(&format!("disc/ddr{i}"), h, w, 1, [s; 3])?;
        }
        let h = ctx.linear("disc/fc0", h, HIDDEN)?;
        let h = ctx.graph.relu(h);
        ctx.linear("disc/fc1", h, 1)
    }

    pub fn score(&self, params: &ParamStore, x: &Tensor) -> Result<DiscScore> {
        let mut ctx = Ctx::new(params);
        let v = ctx.constant(x.clone());
        let l = self.discriminate(&mut ctx, v)?;
        Ok(DiscScore::from_logit(ctx.value(l).item()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, max_rel_err};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_labels(seed: u64, dims: [usize; 3], c: u8) -> LabelGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.iter().product();
        LabelGrid::new(dims, (0..n).map(|_| if rng.gen_bool(0.1) { IGNORE } else { rng.gen_range(0..=c) }).collect())
            .unwrap()
    }

    #[test]
    fn simplex_encoding() {
        let e = labels_to_simplex(&LabelGrid::empty([4, 4, 4]), 3).unwrap();
        assert!(e.data()[..64].iter().all(|&v| v == 1.0));
        assert!(e.data()[64..].iter().all(|&v| v == 0.0));
        let y = random_labels(1, [5, 4, 3], 6);
        let t = labels_to_simplex(&y, 6).unwrap();
        check_simplex(&t).unwrap();
        let back = crate::metrics::argmax_labels(&t).unwrap();
        for (&a, &b) in back.labels.iter().zip(&y.labels) {
            assert_eq!(a, if b == IGNORE { 0 } else { b });
        }
        assert!(labels_to_simplex(&y, 5).is_err() || !y.labels.contains(&6));
    }

    #[test]
    fn desk_stride_chain_replaces_three() {
        let d = Discriminator::new(11, [20, 12, 20]).unwrap();
        assert_eq!(d.strides, [2, 2, 1, 1]);
        assert_eq!(d.replaced, [false, false, true, false]);
        assert_eq!(d.flatten_len, 32 * 5 * 3 * 5);
        let p = Discriminator::new(11, [60, 36, 60]).unwrap();
        assert_eq!(p.strides, [2, 2, 3, 1]);
        assert!(Discriminator::new(11, [10, 12, 20]).is_err());
    }

    #[test]
    fn zero_parameters_score_half() {
        let d = Discriminator::new(3, [8, 8, 8]).unwrap();
        let mut p = d.init_params(0).unwrap();
        p.zero_all();
        let x = labels_to_simplex(&random_labels(2, [8, 8, 8], 3), 3).unwrap();
        let s = d.score(&p, &x).unwrap();
        assert_eq!((s.logit, s.p), (0.0, 0.5));
    }

    #[test]
    fn non_simplex_input_rejected() {
        let d = Discriminator::new(3, [8, 8, 8]).unwrap();
        let p = d.init_params(0).unwrap();
        assert!(d.score(&p, &Tensor::full(&[4, 8, 8, 8], 0.3)).is_err());
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let d = Discriminator::new(3, [8, 8, 8]).unwrap();
        let mut p = d.init_params(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let names: Vec<String> = p.names().filter(|n| n.ends_with(".b")).cloned().collect();
        for n in &names {
            p.get_mut(n).unwrap().data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
        let x = labels_to_simplex(&random_labels(4, [8, 8, 8], 3), 3).unwrap();
        for name in ["disc/ddr0.x.w", "disc/ddr3.expand.w", "disc/fc0.w"] {
            let mut ctx = Ctx::new(&p);
            let v = ctx.constant(x.clone());
            let l = d.discriminate(&mut ctx, v).unwrap();
            let g = ctx.graph.backward(l).unwrap();
            let analytic = ctx.param_grads(&g).remove(name).unwrap();
            let base = p.get(name).unwrap().clone();
            let idx: Vec<usize> = (0..10).collect();
            let numeric = central_diff(base.data(), &idx, 1e-6, |pt| {
                let mut q = p.clone();
                *q.get_mut(name).unwrap() = Tensor::from_vec(base.shape(), pt.to_vec()).unwrap();
                d.score(&q, &x).unwrap().logit
            });
            let a: Vec<f64> = idx.iter().map(|&i| analytic.data()[i]).collect();
            let e = max_rel_err(&a, &numeric);
            assert!(e < 1e-4, "{name}: {e}");
        }
    }

    #[test]
    fn scores_stay_inside_unit_interval() {
        let d = Discriminator::new(3, [8, 8, 8]).unwrap();
        let p = d.init_params(2).unwrap();
        for s in 0..5 {
            let x = labels_to_simplex(&random_labels(s, [8, 8, 8], 3), 3).unwrap();
            let sc = d.score(&p, &x).unwrap();
            assert!(sc.p > 0.0 && sc.p < 1.0);
        }
    }
}
