//! The encoder-decoder: residual blocks, optional multi-scale blocks,
//! transposed-conv upsampling and skip concatenation.

use nuclick_core::synth::ObjectKind;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, NetError, Result};
use crate::float::Float;
use crate::kernels::{ConvGeom, BN_MOMENTUM};
use crate::tape::{BatchStats, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub base_width: usize,
    /// Number of down/up stages.
    pub depth: usize,
    /// Levels (0 = full resolution) that carry a multi-scale block in both
    /// the encoder and the decoder.
    pub ms_block_levels: Vec<usize>,
    pub ms_dilations: Vec<usize>,
    pub patch_size: usize,
    pub kind: ObjectKind,
    /// When false the exclusion channel is fed as zeros.
    pub use_exclusion: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_channels: 5,
            base_width: 8,
            depth: 3,
            ms_block_levels: vec![0, 1, 2],
            ms_dilations: vec![1, 3, 6],
            patch_size: 64,
            kind: ObjectKind::Nucleus,
            use_exclusion: true,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetError::InvalidConfig(m));
        if self.input_channels != 5 {
            return bad(format!("input_channels must be 5, got {}", self.input_channels));
        }
        if self.base_width == 0 || self.depth == 0 || self.depth > 8 {
            return bad("base_width must be positive and depth in 1..=8".into());
        }
        let mut levels = self.ms_block_levels.clone();
        levels.sort_unstable();
        levels.dedup();
        if levels.len() != self.ms_block_levels.len() || levels.iter().any(|&l| l >= self.depth) {
            return bad(format!("ms_block_levels {:?} must be distinct and below depth {}", self.ms_block_levels, self.depth));
        }
        if !levels.is_empty() && (self.ms_dilations.is_empty() || self.ms_dilations.contains(&0)) {
            return bad("ms_dilations must be non-empty and positive".into());
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(1 << self.depth) {
            return bad(format!("patch_size {} not divisible by 2^{}", self.patch_size, self.depth));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_width << level
    }

    pub fn has_ms(&self, level: usize) -> bool {
        self.ms_block_levels.contains(&level)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    He(usize),
    Zeros,
    Ones,
}

/// Name, shape and role of one stored tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: [usize; 4],
    /// False for batch-norm running statistics.
    pub trainable: bool,
    init: Init,
}

#[derive(Clone, Debug)]
struct Conv {
    w: usize,
    b: Option<usize>,
    geom: ConvGeom,
}

#[derive(Clone, Debug)]
struct Bn {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Clone, Debug)]
struct ConvBn {
    conv: Conv,
    bn: Bn,
}

#[derive(Clone, Debug)]
struct Residual {
    a: ConvBn,
    b: ConvBn,
    proj: Option<ConvBn>,
}

#[derive(Clone, Debug)]
struct MultiScale {
    branches: Vec<ConvBn>,
    fuse: ConvBn,
}

#[derive(Clone, Debug)]
struct Stage {
    res: Residual,
    ms: Option<MultiScale>,
}

#[derive(Clone, Debug)]
struct Up {
    w: usize,
    b: usize,
}

#[derive(Clone, Debug)]
struct Plan {
    specs: Vec<ParamSpec>,
    stem: ConvBn,
    encoder: Vec<Stage>,
    bottleneck: Residual,
    /// Decoder stages from the deepest level up to level 0.
    decoder: Vec<(Up, Stage)>,
    head: Conv,
}

struct PlanBuilder {
    specs: Vec<ParamSpec>,
}

impl PlanBuilder {
    fn add(&mut self, name: String, shape: [usize; 4], trainable: bool, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, trainable, init });
        self.specs.len() - 1
    }

    fn conv(&mut self, name: &str, ci: usize, co: usize, geom: ConvGeom, bias: bool) -> Conv {
        let w = self.add(format!("{name}.w"), [co, ci, geom.k, geom.k], true, Init::He(ci * geom.k * geom.k));
        let b = bias.then(|| self.add(format!("{name}.b"), [co, 1, 1, 1], true, Init::Zeros));
        Conv { w, b, geom }
    }

    fn bn(&mut self, name: &str, c: usize) -> Bn {
        Bn {
            gamma: self.add(format!("{name}.gamma"), [c, 1, 1, 1], true, Init::Ones),
            beta: self.add(format!("{name}.beta"), [c, 1, 1, 1], true, Init::Zeros),
            mean: self.add(format!("{name}.running_mean"), [c, 1, 1, 1], false, Init::Zeros),
            var: self.add(format!("{name}.running_var"), [c, 1, 1, 1], false, Init::Ones),
        }
    }

    fn conv_bn(&mut self, name: &str, ci: usize, co: usize, geom: ConvGeom) -> ConvBn {
        ConvBn {
            conv: self.conv(&format!("{name}.conv"), ci, co, geom, false),
            bn: self.bn(&format!("{name}.bn"), co),
        }
    }

    fn residual(&mut self, name: &str, ci: usize, co: usize) -> Residual {
        Residual {
            a: self.conv_bn(&format!("{name}.a"), ci, co, ConvGeom::same(3, 1)),
            b: self.conv_bn(&format!("{name}.b"), co, co, ConvGeom::same(3, 1)),
            proj: (ci != co).then(|| self.conv_bn(&format!("{name}.proj"), ci, co, ConvGeom::same(1, 1))),
        }
    }

    fn multi_scale(&mut self, name: &str, c: usize, dilations: &[usize]) -> MultiScale {
        let branches = dilations
            .iter()
            .map(|&d| self.conv_bn(&format!("{name}.d{d}"), c, c, ConvGeom::same(3, d)))
            .collect();
        MultiScale {
            branches,
            fuse: self.conv_bn(&format!("{name}.fuse"), c * dilations.len(), c, ConvGeom::same(1, 1)),
        }
    }
}

impl Plan {
    fn new(cfg: &NetworkConfig) -> Self {
        let mut pb = PlanBuilder { specs: Vec::new() };
        let w = cfg.base_width;
        let stem = pb.conv_bn("stem", cfg.input_channels, w, ConvGeom::same(3, 1));
        let mut encoder = Vec::new();
        for l in 0..cfg.depth {
            let ci = if l == 0 { w } else { cfg.channels(l - 1) };
            let c = cfg.channels(l);
            let res = pb.residual(&format!("enc{l}.res"), ci, c);
            let ms = cfg.has_ms(l).then(|| pb.multi_scale(&format!("enc{l}.ms"), c, &cfg.ms_dilations));
            encoder.push(Stage { res, ms });
        }
        let bottleneck = pb.residual("bottleneck", cfg.channels(cfg.depth - 1), cfg.channels(cfg.depth));
        let mut decoder = Vec::new();
        for l in (0..cfg.depth).rev() {
            let c = cfg.channels(l);
            let up = Up {
                w: pb.add(format!("dec{l}.up.w"), [2 * c, c, 2, 2], true, Init::He(2 * c)),
                b: pb.add(format!("dec{l}.up.b"), [c, 1, 1, 1], true, Init::Zeros),
            };
            let res = pb.residual(&format!("dec{l}.res"), 2 * c, c);
            let ms = cfg.has_ms(l).then(|| pb.multi_scale(&format!("dec{l}.ms"), c, &cfg.ms_dilations));
            decoder.push((up, Stage { res, ms }));
        }
        let head = pb.conv("head", w, 1, ConvGeom::same(1, 1), true);
        Plan {
            specs: pb.specs,
            stem,
            encoder,
            bottleneck,
            decoder,
            head,
        }
    }
}

/// Training mode uses batch statistics and reports them; eval mode uses the
/// stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A recorded forward pass.
pub struct Forward<F> {
    pub tape: Tape<F>,
    pub input: Var,
    pub output: Var,
    /// Batch statistics keyed by (running mean slot, running var slot).
    pub stats: Vec<(usize, usize, BatchStats<F>)>,
}

#[derive(Clone, Debug)]
pub struct Network<F = f32> {
    config: NetworkConfig,
    plan: Plan,
    tensors: Vec<Tensor<F>>,
}

impl<F: Float> Network<F> {
    /// Fresh parameters: He-normal conv weights, zero biases, unit BN scale.
    pub fn build<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let plan = Plan::new(&config);
        let tensors = plan
            .specs
            .iter()
            .map(|s| match s.init {
                Init::Zeros => Tensor::zeros(s.shape),
                Init::Ones => Tensor::filled(s.shape, F::ONE),
                Init::He(fan_in) => {
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                    let mut t = Tensor::zeros(s.shape);
                    for v in t.data_mut() {
                        *v = F::from_f64(normal.sample(rng));
                    }
                    t
                }
            })
            .collect();
        Ok(Self { config, plan, tensors })
    }

    /// Reassembles a network from stored tensors, checking them against the
    /// layout implied by `config`.
    pub fn from_tensors(config: NetworkConfig, named: Vec<(String, Tensor<F>)>) -> Result<Self> {
        config.validate()?;
        let plan = Plan::new(&config);
        if named.len() != plan.specs.len() {
            return Err(invalid(format!("expected {} tensors, got {}", plan.specs.len(), named.len())));
        }
        let mut tensors = Vec::with_capacity(named.len());
        for (spec, (name, t)) in plan.specs.iter().zip(named) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(invalid(format!("tensor {name} {:?} where {} {:?} was expected", t.shape(), spec.name, spec.shape)));
            }
            tensors.push(t);
        }
        Ok(Self { config, plan, tensors })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.plan.specs
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.plan.specs.iter().filter(|s| s.trainable).map(|s| s.shape.iter().product::<usize>()).sum()
    }

    pub fn cast<G: Float>(&self) -> Network<G> {
        Network {
            config: self.config.clone(),
            plan: self.plan.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let [n, c, h, w] = shape;
        let unit = 1 << self.config.depth;
        if n == 0 || c != self.config.input_channels {
            return Err(invalid(format!("input shape {shape:?} needs a batch of {}-channel patches", self.config.input_channels)));
        }
        if h == 0 || w == 0 || h % unit != 0 || w % unit != 0 {
            return Err(invalid(format!("patch {h}×{w} is not divisible by {unit}")));
        }
        Ok(())
    }

    /// Records a forward pass. Every trainable tensor becomes a tape parameter
    /// whose slot is its index in [`Network::tensors`].
    pub fn forward(&self, x: Tensor<F>, mode: Mode, input_grad: bool) -> Result<Forward<F>> {
        self.check_input(x.shape())?;
        let mut tape = Tape::new();
        let mut vars = Vec::with_capacity(self.tensors.len());
        for (i, (spec, t)) in self.plan.specs.iter().zip(&self.tensors).enumerate() {
            vars.push(spec.trainable.then(|| tape.param(t.clone(), i)));
        }
        let input = tape.input(x, input_grad);
        let mut f = Fwd {
            net: self,
            tape,
            vars,
            mode,
            stats: Vec::new(),
        };
        let plan = &self.plan;
        let mut h = f.conv_bn(&plan.stem, input, true)?;
        let mut skips = Vec::new();
        for stage in &plan.encoder {
            h = f.stage(stage, h)?;
            skips.push(h);
            h = f.tape.maxpool2(h)?;
        }
        h = f.residual(&plan.bottleneck, h)?;
        for (up, stage) in &plan.decoder {
            h = f.tape.up2(h, f.var(up.w), Some(f.var(up.b)))?;
            let skip = skips.pop().expect("one skip per level");
            h = f.tape.concat(&[h, skip])?;
            h = f.stage(stage, h)?;
        }
        let logits = f.conv(&plan.head, h)?;
        let output = f.tape.sigmoid(logits);
        Ok(Forward {
            tape: f.tape,
            input,
            output,
            stats: f.stats,
        })
    }

    /// Eval-mode probabilities, shape [N, 1, H, W].
    pub fn predict(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let fwd = self.forward(x.clone(), Mode::Eval, false)?;
        Ok(fwd.tape.value(fwd.output).clone())
    }

    /// Folds batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[(usize, usize, BatchStats<F>)]) {
        let m = F::from_f64(BN_MOMENTUM);
        for (mi, vi, s) in stats {
            for (r, &b) in self.tensors[*mi].data_mut().iter_mut().zip(&s.mean) {
                *r = (F::ONE - m) * *r + m * b;
            }
            for (r, &b) in self.tensors[*vi].data_mut().iter_mut().zip(&s.var) {
                *r = (F::ONE - m) * *r + m * b;
            }
        }
    }
}

struct Fwd<'a, F> {
    net: &'a Network<F>,
    tape: Tape<F>,
    vars: Vec<Option<Var>>,
    mode: Mode,
    stats: Vec<(usize, usize, BatchStats<F>)>,
}

impl<F: Float> Fwd<'_, F> {
    fn var(&self, slot: usize) -> Var {
        self.vars[slot].expect("trainable slot")
    }

    fn conv(&mut self, c: &Conv, x: Var) -> Result<Var> {
        let (w, b) = (self.var(c.w), c.b.map(|b| self.var(b)));
        self.tape.conv(x, w, b, c.geom)
    }

    fn conv_bn(&mut self, cb: &ConvBn, x: Var, relu: bool) -> Result<Var> {
        let y = self.conv(&cb.conv, x)?;
        let (g, b) = (self.var(cb.bn.gamma), self.var(cb.bn.beta));
        let y = match self.mode {
            Mode::Train => {
                let (y, s) = self.tape.batchnorm_train(y, g, b)?;
                self.stats.push((cb.bn.mean, cb.bn.var, s));
                y
            }
            Mode::Eval => {
                let t = &self.net.tensors;
                self.tape.batchnorm_eval(y, g, b, t[cb.bn.mean].data(), t[cb.bn.var].data())?
            }
        };
        Ok(if relu { self.tape.relu(y) } else { y })
    }

    fn residual(&mut self, r: &Residual, x: Var) -> Result<Var> {
        let h = self.conv_bn(&r.a, x, true)?;
        let h = self.conv_bn(&r.b, h, false)?;
        let short = match &r.proj {
            Some(p) => self.conv_bn(p, x, false)?,
            None => x,
        };
        let s = self.tape.add(h, short)?;
        Ok(self.tape.relu(s))
    }

    fn multi_scale(&mut self, m: &MultiScale, x: Var) -> Result<Var> {
        let mut parts = Vec::with_capacity(m.branches.len());
        for b in &m.branches {
            parts.push(self.conv_bn(b, x, true)?);
        }
        let cat = self.tape.concat(&parts)?;
        self.conv_bn(&m.fuse, cat, true)
    }

    fn stage(&mut self, s: &Stage, x: Var) -> Result<Var> {
        let h = self.residual(&s.res, x)?;
        match &s.ms {
            Some(m) => self.multi_scale(m, h),
            None => Ok(h),
        }
    }
}
