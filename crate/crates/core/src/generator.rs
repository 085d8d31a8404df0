//! The voxel predictor: a 2D RGB encoder with a segmentation head, a 3D TSDF
//! encoder, and a 3D decoder, joined by addition or cross-modal modulation.
//!
//! Parameter names are namespaced `gen/rgb/`, `gen/tsdf/`, `gen/dec/` and
//! `gen/mod1/` .. `gen/mod3/`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ConvGeom, Graph, ModGrad, SparseMap, Var};
use crate::error::{shape_err, Result, SscError};
use crate::nn::{geom2d, geom_k2s2, Ctx, ParamStore};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;
use crate::voxel_data::{build_projection_map, Scene};

pub use crate::autodiff::modulation_grad as modulation_grad_identity;

/// How RGB features `V_r` and TSDF features `V_t` are joined after the
/// encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// `V_r * (1 + sigmoid(M_s)) + M_b`.
    Modulation,
    /// `V_r + V_t`.
    Addition,
    /// Modulation forward; `V_r` receives the upstream gradient unchanged.
    ModulationDetached,
    /// Addition forward; `V_r` receives the modulation gradient.
    AdditionModulatedGrad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModSites {
    pub m1: bool,
    pub m2: bool,
    pub m3: bool,
}

impl ModSites {
    pub const NONE: ModSites = ModSites { m1: false, m2: false, m3: false };
    pub const ALL: ModSites = ModSites { m1: true, m2: true, m3: true };

    pub fn any(&self) -> bool {
        self.m1 || self.m2 || self.m3
    }
}

/// Which input branches exist. Single-branch networks are used by the
/// encoder probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branches {
    Both,
    RgbOnly,
    TsdfOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub channels: usize,
    pub dims: [usize; 3],
    pub num_classes: usize,
    pub image: [usize; 2],
    pub fusion_mode: FusionMode,
    pub sites: ModSites,
    pub branches: Branches,
}

impl GeneratorConfig {
    pub fn desk(num_classes: usize, fusion_mode: FusionMode, sites: ModSites) -> Self {
        GeneratorConfig {
            channels: 16,
            dims: [20, 12, 20],
            num_classes,
            image: [64, 48],
            fusion_mode,
            sites,
            branches: Branches::Both,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(SscError::Config("channels must be positive".into()));
        }
        if self.dims.iter().any(|&d| d < 4 || d % 4 != 0) {
            return Err(SscError::Config(format!("grid dims {:?} must be multiples of 4", self.dims)));
        }
        if self.image.iter().any(|&d| d < 4 || d % 4 != 0) {
            return Err(SscError::Config(format!("image size {:?} must be multiples of 4", self.image)));
        }
        if !(2..255).contains(&self.num_classes) {
            return Err(SscError::Config(format!("class count {} out of range", self.num_classes)));
        }
        let modulated = self.fusion_mode != FusionMode::Addition;
        if self.branches != Branches::Both {
            if self.sites.any() {
                return Err(SscError::Config("single-branch networks cannot modulate".into()));
            }
        } else if modulated != self.sites.m1 {
            return Err(SscError::Config(format!(
                "fusion mode {:?} is inconsistent with site M1 = {}",
                self.fusion_mode, self.sites.m1
            )));
        } else if !modulated && self.sites.any() {
            return Err(SscError::Config("addition fusion excludes decoder modulation".into()));
        }
        Ok(())
    }

    pub fn has_rgb(&self) -> bool {
        self.branches != Branches::TsdfOnly
    }

    pub fn has_tsdf(&self) -> bool {
        self.branches != Branches::RgbOnly
    }

    fn grid_len(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Network inputs prepared from a scene.
#[derive(Debug, Clone)]
pub struct GenInputs {
    /// `[3, 1, H, W]`.
    pub rgb: Tensor,
    /// `[1, X, Y, Z]`.
    pub tsdf: Tensor,
    /// Quarter-resolution feature map to voxel grid.
    pub proj: Arc<SparseMap>,
}

impl GenInputs {
    pub fn from_scene(scene: &Scene) -> Result<Self> {
        let (w, h) = (scene.rgb.width, scene.rgb.height);
        let mut rgb = vec![0.0; 3 * h * w];
        for v in 0..h {
            for u in 0..w {
                for c in 0..3 {
                    rgb[(c * h + v) * w + u] = scene.rgb.values[(v * w + u) * 3 + c] as f64;
                }
            }
        }
        let [x, y, z] = scene.grid.dims;
        let tsdf = scene.tsdf.values.iter().map(|&t| t as f64).collect();
        Ok(GenInputs {
            rgb: Tensor::from_vec(&[3, 1, h, w], rgb)?,
            tsdf: Tensor::from_vec(&[1, x, y, z], tsdf)?,
            proj: Arc::new(build_projection_map(&scene.depth, &scene.intrinsics, &scene.grid, 4)?),
        })
    }

    /// All-zero inputs with an empty projection.
    pub fn zeros(cfg: &GeneratorConfig) -> Self {
        let [w, h] = cfg.image;
        let [x, y, z] = cfg.dims;
        GenInputs {
            rgb: Tensor::zeros(&[3, 1, h, w]),
            tsdf: Tensor::zeros(&[1, x, y, z]),
            proj: Arc::new(SparseMap { in_len: (h / 4) * (w / 4), out_len: x * y * z, triplets: vec![] }),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GenOutputs {
    /// `[C+1, X, Y, Z]`.
    pub logits: Var,
    /// `[C+1, 1, H/4, W/4]`, present with the RGB branch.
    pub logits2d: Option<Var>,
    pub v_r: Option<Var>,
    pub v_t: Option<Var>,
    pub fused: Var,
}

/// Modulation projections: two 1x1x1 convolutions producing `M_s` and `M_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationParams {
    pub scale_w: Tensor,
    pub scale_b: Tensor,
    pub bias_w: Tensor,
    pub bias_b: Tensor,
}

impl ModulationParams {
    pub fn zeros(d: usize) -> Self {
        ModulationParams {
            scale_w: Tensor::zeros(&[d, d, 1, 1, 1]),
            scale_b: Tensor::zeros(&[d]),
            bias_w: Tensor::zeros(&[d, d, 1, 1, 1]),
            bias_b: Tensor::zeros(&[d]),
        }
    }
}

/// `M_s` and `M_b` from the conditioning volume.
pub fn modulation_maps(v_cond: &Tensor, p: &ModulationParams) -> Result<(Tensor, Tensor)> {
    let g = ConvGeom::pointwise(1);
    Ok((
        crate::autodiff::conv::forward(v_cond, &p.scale_w, Some(&p.scale_b), g)?,
        crate::autodiff::conv::forward(v_cond, &p.bias_w, Some(&p.bias_b), g)?,
    ))
}

/// `V_r * (1 + sigmoid(M_s)) + M_b` with the maps computed from `v_cond`.
pub fn modulate(v_r: &Tensor, v_cond: &Tensor, p: &ModulationParams) -> Result<Tensor> {
    if v_r.shape() != v_cond.shape() {
        return Err(shape_err(format!("modulate: {:?} vs {:?}", v_r.shape(), v_cond.shape())));
    }
    let (ms, mb) = modulation_maps(v_cond, p)?;
    let mut g = Graph::new();
    let (v, s, b) = (g.constant(v_r.clone()), g.constant(ms), g.constant(mb));
    let y = g.modulate(v, s, b, ModGrad::Exact)?;
    Ok(g.value(y).clone())
}

pub fn fuse_add(v_r: &Tensor, v_t: &Tensor) -> Result<Tensor> {
    v_r.zip_map(v_t, |a, b| a + b)
}

pub struct Generator {
    pub cfg: GeneratorConfig,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Generator { cfg })
    }

    /// Fresh parameters drawn from the `init` substream of `seed`.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut ctx = Ctx::initializing(stream(seed, Stream::Init));
        self.forward(&mut ctx, &GenInputs::zeros(&self.cfg))?;
        Ok(ctx.into_store())
    }

    fn check_inputs(&self, inputs: &GenInputs) -> Result<()> {
        let [w, h] = self.cfg.image;
        let [x, y, z] = self.cfg.dims;
        if inputs.rgb.shape() != [3, 1, h, w] {
            return Err(shape_err(format!("rgb {:?}, expected [3,1,{h},{w}]", inputs.rgb.shape())));
        }
        if inputs.tsdf.shape() != [1, x, y, z] {
            return Err(shape_err(format!("tsdf {:?}, expected [1,{x},{y},{z}]", inputs.tsdf.shape())));
        }
        if inputs.proj.in_len != (h / 4) * (w / 4) || inputs.proj.out_len != self.cfg.grid_len() {
            return Err(shape_err("projection map does not match the configured sizes"));
        }
        Ok(())
    }

    pub fn forward(&self, ctx: &mut Ctx, inputs: &GenInputs) -> Result<GenOutputs> {
        self.check_inputs(inputs)?;
        let d = self.cfg.channels;
        let [x, y, z] = self.cfg.dims;
        let (mut v_r, mut logits2d, mut v_t) = (None, None, None);
        if self.cfg.has_rgb() {
            let rgb = ctx.constant(inputs.rgb.clone());
            let (feat, seg) = self.rgb_encode(ctx, rgb)?;
            v_r = Some(ctx.graph.sparse(feat, inputs.proj.clone(), &[d, x, y, z])?);
            logits2d = Some(seg);
        }
        if self.cfg.has_tsdf() {
            let t = ctx.constant(inputs.tsdf.clone());
            v_t = Some(self.tsdf_encode(ctx, t)?);
        }
        let fused = match (v_r, v_t) {
            (Some(r), Some(t)) => self.fuse(ctx, r, t)?,
            (Some(r), None) => r,
            (None, Some(t)) => t,
            (None, None) => unreachable!("validated"),
        };
        let logits = self.decode(ctx, fused, v_t)?;
        Ok(GenOutputs { logits, logits2d, v_r, v_t, fused })
    }

    /// Returns the quarter-resolution feature map `[D, 1, H/4, W/4]` and the
    /// 2D segmentation logits `[C+1, 1, H/4, W/4]`.
    pub fn rgb_encode(&self, ctx: &mut Ctx, rgb: Var) -> Result<(Var, Var)> {
        let d = self.cfg.channels;
        let mut h = rgb;
        for b in 0..2 {
            h = ctx.conv_relu(&format!("gen/rgb/down{b}"), h, d, geom2d(3, 2))?;
            h = ctx.conv_relu(&format!("gen/rgb/refine{b}"), h, d, geom2d(3, 1))?;
        }
        for l in 0..4 {
            h = ctx.conv_relu(&format!("gen/rgb/head{l}"), h, d, ConvGeom::pointwise(1))?;
        }
        let seg = ctx.conv("gen/rgb/seg", h, self.cfg.num_classes + 1, ConvGeom::pointwise(1))?;
        Ok((h, seg))
    }

    pub fn tsdf_encode(&self, ctx: &mut Ctx, tsdf: Var) -> Result<Var> {
        let d = self.cfg.channels;
        let t1 = ctx.conv_relu("gen/tsdf/conv0", tsdf, d, ConvGeom::cube(3, 1))?;
        let t2 = ctx.conv_relu("gen/tsdf/conv1", t1, d, ConvGeom::cube(3, 2))?;
        let t3 = ctx.conv_relu("gen/tsdf/conv2", t2, d, ConvGeom::cube(3, 2))?;
        let t3 = ctx.ddr("gen/tsdf/ddr0", t3, d, 1, [1; 3])?;
        let t3 = ctx.ddr("gen/tsdf/ddr1", t3, d, 2, [1; 3])?;
        let u1 = ctx.deconv("gen/tsdf/up0", t3, d, geom_k2s2())?;
        let u1 = ctx.graph.relu(u1);
        let u1 = ctx.graph.add(u1, t2)?;
        let u2 = ctx.deconv("gen/tsdf/up1", u1, d, geom_k2s2())?;
        let u2 = ctx.graph.relu(u2);
        ctx.graph.add(u2, t1)
    }

    /// `M_s` and `M_b` for site `site` from conditioning volume `cond`.
    fn maps(&self, ctx: &mut Ctx, site: &str, cond: Var) -> Result<(Var, Var)> {
        let d = self.cfg.channels;
        let s = ctx.conv(&format!("gen/{site}/scale"), cond, d, ConvGeom::pointwise(1))?;
        let b = ctx.conv(&format!("gen/{site}/bias"), cond, d, ConvGeom::pointwise(1))?;
        Ok((s, b))
    }

    pub fn fuse(&self, ctx: &mut Ctx, v_r: Var, v_t: Var) -> Result<Var> {
        match self.cfg.fusion_mode {
            FusionMode::Addition => ctx.graph.add(v_r, v_t),
            FusionMode::Modulation | FusionMode::ModulationDetached => {
                let (s, b) = self.maps(ctx, "mod1", v_t)?;
                let mode = if self.cfg.fusion_mode == FusionMode::Modulation { ModGrad::Exact } else { ModGrad::Detached };
                ctx.graph.modulate(v_r, s, b, mode)
            }
            FusionMode::AdditionModulatedGrad => {
                let d = self.cfg.channels;
                let s = ctx.conv("gen/mod1/scale", v_t, d, ConvGeom::pointwise(1))?;
                ctx.graph.add_with_modulated_grad(v_r, v_t, s)
            }
        }
    }

    pub fn decode(&self, ctx: &mut Ctx, fused: Var, v_t: Option<Var>) -> Result<Var> {
        let d = self.cfg.channels;
        let sites = self.cfg.sites;
        let d1 = ctx.conv_relu("gen/dec/down", fused, d, ConvGeom::cube(3, 2))?;
        let d2 = ctx.ddr("gen/dec/ddr0", d1, d, 1, [1; 3])?;
        let d3 = ctx.ddr("gen/dec/ddr1", d2, d, 2, [1; 3])?;
        let d4 = ctx.conv_relu("gen/dec/mid", d3, d, ConvGeom::cube(3, 1))?;
        let mut d4 = ctx.graph.add(d4, d1)?;
        let v_t_half = match v_t {
            Some(t) if sites.m2 || sites.m3 => {
                let h = ctx.conv("gen/dec/tdown", t, d, geom_k2s2())?;
                Some(ctx.graph.relu(h))
            }
            _ => None,
        };
        if let (true, Some(c)) = (sites.m2, v_t_half) {
            let (s, b) = self.maps(ctx, "mod2", c)?;
            d4 = ctx.graph.modulate(d4, s, b, ModGrad::Exact)?;
        }
        let d5 = ctx.deconv("gen/dec/up", d4, d, geom_k2s2())?;
        let mut d5 = ctx.graph.relu(d5);
        if let (true, Some(c)) = (sites.m3, v_t_half) {
            let up = ctx.deconv("gen/dec/tup", c, d, geom_k2s2())?;
            let up = ctx.graph.relu(up);
            let (s, b) = self.maps(ctx, "mod3", up)?;
            d5 = ctx.graph.modulate(d5, s, b, ModGrad::Exact)?;
        }
        ctx.conv("gen/dec/score", d5, self.cfg.num_classes + 1, ConvGeom::pointwise(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, max_rel_err};
    use crate::voxel_data::{gen_synthetic_scene, SceneSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(fusion: FusionMode, sites: ModSites) -> GeneratorConfig {
        GeneratorConfig {
            channels: 4,
            dims: [8, 8, 8],
            num_classes: 3,
            image: [16, 16],
            fusion_mode: fusion,
            sites,
            branches: Branches::Both,
        }
    }

    fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_inputs(cfg: &GeneratorConfig, seed: u64) -> GenInputs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [w, h] = cfg.image;
        let [x, y, z] = cfg.dims;
        let cells = (h / 4) * (w / 4);
        let triplets = (0..x * y * z)
            .filter_map(|v| rng.gen_bool(0.2).then(|| (v, rng.gen_range(0..cells), 1.0)))
            .collect();
        GenInputs {
            rgb: rand_t(&[3, 1, h, w], &mut rng),
            tsdf: rand_t(&[1, x, y, z], &mut rng),
            proj: Arc::new(SparseMap { in_len: cells, out_len: x * y * z, triplets }),
        }
    }

    #[test]
    fn config_consistency_rules() {
        assert!(small(FusionMode::Addition, ModSites::NONE).validate().is_ok());
        assert!(small(FusionMode::Addition, ModSites::ALL).validate().is_err());
        assert!(small(FusionMode::Modulation, ModSites::NONE).validate().is_err());
        assert!(small(FusionMode::Modulation, ModSites { m1: true, m2: false, m3: true }).validate().is_ok());
        let mut c = small(FusionMode::Addition, ModSites::NONE);
        c.dims = [10, 8, 8];
        assert!(c.validate().is_err());
    }

    #[test]
    fn output_shapes() {
        let cfg = small(FusionMode::Modulation, ModSites::ALL);
        let g = Generator::new(cfg).unwrap();
        let p = g.init_params(0).unwrap();
        let mut ctx = Ctx::new(&p);
        let out = g.forward(&mut ctx, &random_inputs(&cfg, 1)).unwrap();
        assert_eq!(ctx.value(out.logits).shape(), &[4, 8, 8, 8]);
        assert_eq!(ctx.value(out.logits2d.unwrap()).shape(), &[4, 1, 4, 4]);
        assert_eq!(ctx.value(out.v_t.unwrap()).shape(), &[4, 8, 8, 8]);
    }

    #[test]
    fn desk_scene_forward_is_deterministic() {
        let scene = gen_synthetic_scene(0, &SceneSpec::desk(11)).unwrap();
        let g = Generator::new(GeneratorConfig::desk(11, FusionMode::Modulation, ModSites::ALL)).unwrap();
        let p = g.init_params(3).unwrap();
        let inp = GenInputs::from_scene(&scene).unwrap();
        let run = || {
            let mut ctx = Ctx::new(&p);
            let o = g.forward(&mut ctx, &inp).unwrap();
            ctx.value(o.logits).clone()
        };
        let a = run();
        assert_eq!(a.shape(), &[12, 20, 12, 20]);
        assert_eq!(a, run());
        assert!(a.is_finite());
    }

    #[test]
    fn zero_parameters_give_zero_logits() {
        for (f, s) in [(FusionMode::Modulation, ModSites::ALL), (FusionMode::Addition, ModSites::NONE)] {
            let cfg = small(f, s);
            let g = Generator::new(cfg).unwrap();
            let mut p = g.init_params(0).unwrap();
            p.zero_all();
            let mut ctx = Ctx::new(&p);
            let out = g.forward(&mut ctx, &random_inputs(&cfg, 2)).unwrap();
            assert!(ctx.value(out.logits).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn tsdf_encoder_zero_params() {
        let cfg = small(FusionMode::Addition, ModSites::NONE);
        let g = Generator::new(cfg).unwrap();
        let mut p = g.init_params(0).unwrap();
        p.zero_all();
        let mut ctx = Ctx::new(&p);
        let t = ctx.constant(random_inputs(&cfg, 3).tsdf);
        let v = g.tsdf_encode(&mut ctx, t).unwrap();
        assert!(ctx.value(v).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rgb_encoder_zero_image_and_stride() {
        let mut cfg = small(FusionMode::Addition, ModSites::NONE);
        cfg.image = [64, 64];
        let g = Generator::new(cfg).unwrap();
        let p = g.init_params(0).unwrap();
        let mut ctx = Ctx::new(&p);
        let x = ctx.constant(Tensor::zeros(&[3, 1, 64, 64]));
        let (f, s) = g.rgb_encode(&mut ctx, x).unwrap();
        assert_eq!(ctx.value(f).shape(), &[4, 1, 16, 16]);
        assert_eq!(ctx.value(s).shape(), &[4, 1, 16, 16]);
        assert!(ctx.value(f).data().iter().all(|&v| v == 0.0));
    }

    /// Central-difference check of `sum(w * node)` w.r.t. a slice of one
    /// named parameter.
    fn param_fd(cfg: GeneratorConfig, name: &str, count: usize) -> f64 {
        let g = Generator::new(cfg).unwrap();
        let mut p = g.init_params(5).unwrap();
        // nonzero biases make ReLU kinks unlikely at the probe points
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let names: Vec<String> = p.names().cloned().collect();
        for n in names.iter().filter(|n| n.ends_with(".b")) {
            for v in p.get_mut(n).unwrap().data_mut() {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
        let inp = random_inputs(&cfg, 4);
        let eval = |p: &ParamStore| -> (f64, Option<Tensor>) {
            let mut ctx = Ctx::new(p);
            let out = g.forward(&mut ctx, &inp).unwrap();
            let v = ctx.value(out.logits).sum();
            let grads = ctx.graph.backward_with(out.logits, Tensor::full(ctx.value(out.logits).shape(), 1.0)).unwrap();
            (v, ctx.param_grads(&grads).remove(name))
        };
        let analytic = eval(&p).1.unwrap();
        let base = p.get(name).unwrap().clone();
        let idx: Vec<usize> = (0..count.min(base.len())).collect();
        let numeric = central_diff(base.data(), &idx, 1e-6, |pt| {
            let mut q = p.clone();
            *q.get_mut(name).unwrap() = Tensor::from_vec(base.shape(), pt.to_vec()).unwrap();
            eval(&q).0
        });
        let a: Vec<f64> = idx.iter().map(|&i| analytic.data()[i]).collect();
        p.insert(name, base);
        max_rel_err(&a, &numeric)
    }

    #[test]
    fn decoder_parameter_gradients_match_finite_differences() {
        let cfg = small(FusionMode::Modulation, ModSites::ALL);
        for name in ["gen/dec/mid.w", "gen/mod3/scale.w", "gen/mod1/bias.w", "gen/tsdf/conv1.w", "gen/rgb/down0.w"] {
            let e = param_fd(cfg, name, 10);
            assert!(e < 1e-4, "{name}: {e}");
        }
    }

    #[test]
    fn modulate_closed_form_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v_r = rand_t(&[2, 3, 3, 3], &mut rng);
        let v_c = rand_t(&[2, 3, 3, 3], &mut rng);
        let z = ModulationParams::zeros(2);
        let out = modulate(&v_r, &v_c, &z).unwrap();
        assert_eq!(out, v_r.scale(1.5));
        let zero = Tensor::zeros(&[2, 3, 3, 3]);
        let p = ModulationParams {
            scale_w: rand_t(&[2, 2, 1, 1, 1], &mut rng),
            scale_b: rand_t(&[2], &mut rng),
            bias_w: rand_t(&[2, 2, 1, 1, 1], &mut rng),
            bias_b: rand_t(&[2], &mut rng),
        };
        let (_, mb) = modulation_maps(&v_c, &p).unwrap();
        assert_eq!(modulate(&zero, &v_c, &p).unwrap(), mb);
        assert!(modulate(&v_r, &Tensor::zeros(&[2, 3, 3, 2]), &p).is_err());
    }

    #[test]
    fn fuse_add_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_t(&[2, 3, 3, 3], &mut rng);
        assert_eq!(fuse_add(&a, &Tensor::zeros(a.shape())).unwrap(), a);
        assert!(fuse_add(&a, &a.scale(-1.0)).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
