//! Parameter registry, layers and the staged linear-attention classifier.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use super::kernels::PadMode;
use super::tape::{BatchStats, Tape, Var};
use super::NnError;
use crate::math;
use crate::rng::{substream, uniform, Domain};
use crate::tensor::{Tensor, TensorError};

/// Weight of the newest batch in running batch-norm statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Pixels per side of the square input.
    pub input_size: usize,
    pub stage_channels: [usize; 4],
    /// Blocks per stage, counting the downsampling block that opens it.
    pub stage_depths: [usize; 4],
    /// Per-head query/key/value width.
    pub attention_dim: usize,
    pub attention_heads: usize,
    pub multiscale_kernel: usize,
    pub num_classes: usize,
    /// Hidden width multiplier of MBConv blocks.
    pub expand_ratio: usize,
    /// Width of the fused P2/P3/P4 head.
    pub head_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            stage_channels: [16, 32, 64, 128],
            stage_depths: [1, 1, 2, 2],
            attention_dim: 16,
            attention_heads: 4,
            multiscale_kernel: 5,
            num_classes: 10,
            expand_ratio: 4,
            head_channels: 32,
        }
    }
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_usize(key: &str, v: &str) -> Result<usize, NnError> {
    v.trim()
        .parse()
        .map_err(|_| NnError::InvalidConfig(format!("{key}: '{v}' is not a non-negative integer")))
}

fn parse_four(key: &str, v: &str) -> Result<[usize; 4], NnError> {
    let parts: Vec<usize> = v.split(',').map(|p| parse_usize(key, p)).collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| NnError::InvalidConfig(format!("{key}: expected 4 comma-separated values")))
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::InvalidConfig(m));
        let scalars = [
            ("input_size", self.input_size),
            ("attention_dim", self.attention_dim),
            ("attention_heads", self.attention_heads),
            ("multiscale_kernel", self.multiscale_kernel),
            ("num_classes", self.num_classes),
            ("expand_ratio", self.expand_ratio),
            ("head_channels", self.head_channels),
        ];
        if let Some((k, _)) = scalars.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{k} must be positive"));
        }
        if self.stage_channels.contains(&0) || self.stage_depths.contains(&0) {
            return bad("stage channels and depths must be positive".into());
        }
        if self.multiscale_kernel % 2 == 0 {
            return bad(format!("multiscale_kernel {} must be odd", self.multiscale_kernel));
        }
        if let Some(c) = self.stage_channels.iter().find(|&&c| c % self.attention_heads != 0) {
            return bad(format!("{c} channels not divisible by {} heads", self.attention_heads));
        }
        Ok(())
    }

    /// Spatial side length after the stem and after each stage.
    pub fn spatial_sizes(&self) -> [usize; 5] {
        let mut s = [0; 5];
        let mut cur = self.input_size;
        for slot in s.iter_mut() {
            cur = cur.div_ceil(2);
            *slot = cur;
        }
        s
    }

    /// Multi-scale kernel actually used in a stage: the configured kernel,
    /// shrunk to the largest odd size that fits the stage's feature map.
    pub fn effective_kernel(&self, stage: usize) -> usize {
        let side = self.spatial_sizes()[stage + 1];
        let fit = if side % 2 == 1 { side } else { side - 1 };
        self.multiscale_kernel.min(fit.max(1))
    }

    /// Canonical `key=value` lines; the inverse of [`ModelConfig::from_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "input_size={}", self.input_size);
        let _ = writeln!(s, "stage_channels={}", join(&self.stage_channels));
        let _ = writeln!(s, "stage_depths={}", join(&self.stage_depths));
        let _ = writeln!(s, "attention_dim={}", self.attention_dim);
        let _ = writeln!(s, "attention_heads={}", self.attention_heads);
        let _ = writeln!(s, "multiscale_kernel={}", self.multiscale_kernel);
        let _ = writeln!(s, "num_classes={}", self.num_classes);
        let _ = writeln!(s, "expand_ratio={}", self.expand_ratio);
        let _ = writeln!(s, "head_channels={}", self.head_channels);
        s
    }

    pub fn from_text(text: &str) -> Result<Self, NnError> {
        let mut cfg = ModelConfig::default();
        let mut seen = 0u32;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| NnError::InvalidConfig(format!("malformed line '{line}'")))?;
            let bit = match k.trim() {
                "input_size" => {
                    cfg.input_size = parse_usize(k, v)?;
                    0
                }
                "stage_channels" => {
                    cfg.stage_channels = parse_four(k, v)?;
                    1
                }
                "stage_depths" => {
                    cfg.stage_depths = parse_four(k, v)?;
                    2
                }
                "attention_dim" => {
                    cfg.attention_dim = parse_usize(k, v)?;
                    3
                }
                "attention_heads" => {
                    cfg.attention_heads = parse_usize(k, v)?;
                    4
                }
                "multiscale_kernel" => {
                    cfg.multiscale_kernel = parse_usize(k, v)?;
                    5
                }
                "num_classes" => {
                    cfg.num_classes = parse_usize(k, v)?;
                    6
                }
                "expand_ratio" => {
                    cfg.expand_ratio = parse_usize(k, v)?;
                    7
                }
                "head_channels" => {
                    cfg.head_channels = parse_usize(k, v)?;
                    8
                }
                other => return Err(NnError::InvalidConfig(format!("unknown key '{other}'"))),
            };
            seen |= 1 << bit;
        }
        if seen != (1 << 9) - 1 {
            return Err(NnError::InvalidConfig("missing keys".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Excluded from updates and from the trainable count.
    Frozen,
    /// Non-gradient state such as running statistics.
    Buffer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Uniform(f64),
    Const(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
    init: Init,
}

/// Flat registry of every tensor a model owns, in construction order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn add(&mut self, name: String, shape: &[usize], kind: ParamKind, init: Init) -> usize {
        self.entries.push(ParamEntry {
            name,
            kind,
            value: Tensor::zeros(shape),
            init,
        });
        self.entries.len() - 1
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, i: usize) -> &Tensor {
        &self.entries[i].value
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].value
    }

    pub fn kind(&self, i: usize) -> ParamKind {
        self.entries[i].kind
    }

    pub fn set_kind(&mut self, i: usize, kind: ParamKind) {
        self.entries[i].kind = kind;
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    /// Number of trainable scalars.
    pub fn count_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.len())
            .sum()
    }

    /// Freeze every trainable entry whose name starts with `prefix`;
    /// returns how many entries changed.
    pub fn freeze(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for e in &mut self.entries {
            if e.kind == ParamKind::Trainable && e.name.starts_with(prefix) {
                e.kind = ParamKind::Frozen;
                n += 1;
            }
        }
        n
    }

    /// Seeded fan-in initialization; every entry draws from its own stream.
    pub fn initialize(&mut self, seed: u64) {
        for (i, e) in self.entries.iter_mut().enumerate() {
            match e.init {
                Init::Const(c) => e.value.data_mut().iter_mut().for_each(|v| *v = c),
                Init::Uniform(bound) => {
                    let mut rng = substream(seed, Domain::Init, i as u64, 0);
                    for v in e.value.data_mut() {
                        *v = math::to_f32_grid(uniform(&mut rng, -bound, bound));
                    }
                }
            }
        }
    }

    /// Round every value to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for e in &mut self.entries {
            e.value.data_mut().iter_mut().for_each(|v| *v = math::to_f32_grid(*v));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers.
    Train,
    /// Running statistics in normalization layers.
    Eval,
}

/// Batch statistics to be folded into a layer's running buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate {
    pub mean_buffer: usize,
    pub var_buffer: usize,
    pub stats: BatchStats,
}

/// Records layer forwards onto a tape, creating parameter leaves lazily.
pub struct Recorder<'a> {
    pub tape: &'a mut Tape,
    store: &'a ParamStore,
    vars: Vec<Option<Var>>,
    mode: Mode,
    updates: Vec<BnUpdate>,
}

impl<'a> Recorder<'a> {
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore, mode: Mode) -> Self {
        Self {
            tape,
            store,
            vars: vec![None; store.len()],
            mode,
            updates: Vec::new(),
        }
    }

    fn param(&mut self, i: usize) -> Var {
        if let Some(v) = self.vars[i] {
            return v;
        }
        let v = self.tape.leaf(self.store.value(i).clone());
        self.vars[i] = Some(v);
        v
    }

    /// Parameter leaves by store index, and pending normalization updates.
    pub fn finish(self) -> (Vec<Option<Var>>, Vec<BnUpdate>) {
        (self.vars, self.updates)
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    weight: usize,
    bias: Option<usize>,
    stride: usize,
    groups: usize,
    pad: PadMode,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        depthwise: bool,
        bias: bool,
        pad: PadMode,
    ) -> Self {
        let (groups, cin_g) = if depthwise { (cin, 1) } else { (1, cin) };
        let fan_in = cin_g * k * k;
        let bound = math::sqrt(3.0 / fan_in as f64);
        let weight = store.add(
            format!("{name}.weight"),
            &[cout, cin_g, k, k],
            ParamKind::Trainable,
            Init::Uniform(bound),
        );
        let bias = bias.then(|| {
            store.add(
                format!("{name}.bias"),
                &[cout],
                ParamKind::Trainable,
                Init::Uniform(1.0 / math::sqrt(fan_in as f64)),
            )
        });
        Self {
            weight,
            bias,
            stride,
            groups,
            pad,
        }
    }

    fn forward(&self, r: &mut Recorder, x: Var) -> Result<Var, NnError> {
        let w = r.param(self.weight);
        let b = self.bias.map(|i| r.param(i));
        r.tape.conv2d(x, w, b, self.stride, self.groups, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct Bn {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

impl Bn {
    fn new(store: &mut ParamStore, name: &str, c: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), &[c], ParamKind::Trainable, Init::Const(1.0)),
            beta: store.add(format!("{name}.beta"), &[c], ParamKind::Trainable, Init::Const(0.0)),
            mean: store.add(format!("{name}.running_mean"), &[c], ParamKind::Buffer, Init::Const(0.0)),
            var: store.add(format!("{name}.running_var"), &[c], ParamKind::Buffer, Init::Const(1.0)),
        }
    }

    fn forward(&self, r: &mut Recorder, x: Var) -> Result<Var, NnError> {
        let g = r.param(self.gamma);
        let b = r.param(self.beta);
        match r.mode {
            Mode::Train => {
                let (y, stats) = r.tape.batch_norm_train(x, g, b)?;
                r.updates.push(BnUpdate {
                    mean_buffer: self.mean,
                    var_buffer: self.var,
                    stats,
                });
                Ok(y)
            }
            Mode::Eval => {
                let (m, v) = (r.store.value(self.mean).data(), r.store.value(self.var).data());
                r.tape.batch_norm_eval(x, g, b, m, v)
            }
        }
    }
}

/// Inverted bottleneck: 1x1 expand, 3x3 depthwise (carrying the stride),
/// 1x1 project, with a residual when shapes allow.
#[derive(Debug, Clone)]
pub struct MbConv {
    expand: Conv,
    bn1: Bn,
    dw: Conv,
    bn2: Bn,
    project: Conv,
    bn3: Bn,
    residual: bool,
}

impl MbConv {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, stride: usize, expand: usize) -> Self {
        let mid = cin * expand;
        Self {
            expand: Conv::new(store, &format!("{name}.expand"), cin, mid, 1, 1, false, false, PadMode::Zero),
            bn1: Bn::new(store, &format!("{name}.expand_bn"), mid),
            dw: Conv::new(store, &format!("{name}.dw"), mid, mid, 3, stride, true, false, PadMode::Zero),
            bn2: Bn::new(store, &format!("{name}.dw_bn"), mid),
            project: Conv::new(store, &format!("{name}.project"), mid, cout, 1, 1, false, false, PadMode::Zero),
            bn3: Bn::new(store, &format!("{name}.project_bn"), cout),
            residual: stride == 1 && cin == cout,
        }
    }

    pub fn forward(&self, r: &mut Recorder, x: Var) -> Result<Var, NnError> {
        let h = self.expand.forward(r, x)?;
        let h = self.bn1.forward(r, h)?;
        let h = r.tape.gelu(h);
        let h = self.dw.forward(r, h)?;
        let h = self.bn2.forward(r, h)?;
        let h = r.tape.gelu(h);
        let h = self.project.forward(r, h)?;
        let h = self.bn3.forward(r, h)?;
        if self.residual {
            r.tape.add(x, h)
        } else {
            Ok(h)
        }
    }

    /// Store index of the projection weight.
    pub fn project_weight(&self) -> usize {
        self.project.weight
    }
}

/// Multi-scale ReLU linear attention followed by an MBConv feed-forward.
#[derive(Debug, Clone)]
pub struct VitBlock {
    aggregate: Conv,
    q: Conv,
    k: Conv,
    v: Conv,
    proj: Conv,
    proj_bn: Bn,
    heads: usize,
    ffn: MbConv,
}

impl VitBlock {
    fn new(store: &mut ParamStore, name: &str, c: usize, cfg: &ModelConfig, kernel: usize) -> Self {
        let inner = cfg.attention_heads * cfg.attention_dim;
        let pw = |store: &mut ParamStore, part: &str, cin: usize, cout: usize| {
            Conv::new(store, &format!("{name}.attn.{part}"), cin, cout, 1, 1, false, false, PadMode::Zero)
        };
        Self {
            aggregate: Conv::new(
                store,
                &format!("{name}.attn.aggregate"),
                c,
                c,
                kernel,
                1,
                true,
                false,
                PadMode::Replicate,
            ),
            q: pw(store, "q", 2 * c, inner),
            k: pw(store, "k", 2 * c, inner),
            v: pw(store, "v", 2 * c, inner),
            proj: pw(store, "proj", inner, c),
            proj_bn: Bn::new(store, &format!("{name}.attn.proj_bn"), c),
            heads: cfg.attention_heads,
            ffn: MbConv::new(store, &format!("{name}.ffn"), c, c, 1, cfg.expand_ratio),
        }
    }

    fn forward(&self, r: &mut Recorder, x: Var) -> Result<Var, NnError> {
        let local = self.aggregate.forward(r, x)?;
        let tokens = r.tape.concat_channels(x, local)?;
        let q = self.q.forward(r, tokens)?;
        let k = self.k.forward(r, tokens)?;
        let v = self.v.forward(r, tokens)?;
        let a = r.tape.linear_attention(q, k, v, self.heads)?;
        let o = self.proj.forward(r, a)?;
        let o = self.proj_bn.forward(r, o)?;
        let x = r.tape.add(x, o)?;
        self.ffn.forward(r, x)
    }
}

#[derive(Debug, Clone)]
pub enum Block {
    MbConv(MbConv),
    Vit(VitBlock),
}

impl Block {
    fn forward(&self, r: &mut Recorder, x: Var) -> Result<Var, NnError> {
        match self {
            Block::MbConv(b) => b.forward(r, x),
            Block::Vit(b) => b.forward(r, x),
        }
    }
}

/// Intermediate feature maps exposed by a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureTap {
    Stem,
    Stage1,
    Stage2,
    Stage3,
    Stage4,
}

impl FeatureTap {
    pub const ALL: [FeatureTap; 5] = [
        FeatureTap::Stem,
        FeatureTap::Stage1,
        FeatureTap::Stage2,
        FeatureTap::Stage3,
        FeatureTap::Stage4,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["stem", "stage1", "stage2", "stage3", "stage4"][self.index()]
    }
}

pub struct ForwardPass {
    pub logits: Var,
    /// Outputs of the stem and each stage, indexed by [`FeatureTap::index`].
    pub taps: [Var; 5],
    /// Leaf of every store entry that took part, by store index.
    pub param_vars: Vec<Option<Var>>,
    pub bn_updates: Vec<BnUpdate>,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    stem: Conv,
    stem_bn: Bn,
    stages: Vec<Vec<Block>>,
    head: [Conv; 3],
    classifier_w: usize,
    classifier_b: usize,
    initialized: bool,
}

impl Model {
    /// Build the architecture with all-zero, uninitialized parameters.
    pub fn new(config: ModelConfig) -> Result<Self, NnError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let c = config.stage_channels;
        let stem = Conv::new(&mut store, "stem.conv", 3, c[0], 3, 2, false, false, PadMode::Zero);
        let stem_bn = Bn::new(&mut store, "stem.bn", c[0]);
        let mut stages = Vec::with_capacity(4);
        let mut cin = c[0];
        for s in 0..4 {
            let mut blocks = Vec::with_capacity(config.stage_depths[s]);
            let kernel = config.effective_kernel(s);
            for b in 0..config.stage_depths[s] {
                let name = format!("stages.{s}.{b}");
                let block = if b == 0 {
                    Block::MbConv(MbConv::new(&mut store, &name, cin, c[s], 2, config.expand_ratio))
                } else if s < 2 {
                    Block::MbConv(MbConv::new(&mut store, &name, c[s], c[s], 1, config.expand_ratio))
                } else {
                    Block::Vit(VitBlock::new(&mut store, &name, c[s], &config, kernel))
                };
                blocks.push(block);
            }
            stages.push(blocks);
            cin = c[s];
        }
        let hc = config.head_channels;
        let head = [1, 2, 3].map(|s| {
            Conv::new(&mut store, &format!("head.p{}", s + 1), c[s], hc, 1, 1, false, true, PadMode::Zero)
        });
        let fan = hc as f64;
        let classifier_w = store.add(
            "classifier.weight".into(),
            &[config.num_classes, hc],
            ParamKind::Trainable,
            Init::Uniform(math::sqrt(3.0 / fan)),
        );
        let classifier_b = store.add(
            "classifier.bias".into(),
            &[config.num_classes],
            ParamKind::Trainable,
            Init::Uniform(1.0 / math::sqrt(fan)),
        );
        Ok(Self {
            config,
            store,
            stem,
            stem_bn,
            stages,
            head,
            classifier_w,
            classifier_b,
            initialized: false,
        })
    }

    /// Build and initialize from `seed`.
    pub fn seeded(config: ModelConfig, seed: u64) -> Result<Self, NnError> {
        let mut m = Self::new(config)?;
        m.initialize(seed);
        Ok(m)
    }

    pub fn initialize(&mut self, seed: u64) {
        self.store.initialize(seed);
        self.initialized = true;
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Declare externally loaded parameters as initialized.
    pub fn mark_initialized(&mut self) {
        self.initialized = true;
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn count_params(&self) -> usize {
        self.store.count_trainable()
    }

    pub fn freeze(&mut self, prefix: &str) -> usize {
        self.store.freeze(prefix)
    }

    pub fn stages(&self) -> &[Vec<Block>] {
        &self.stages
    }

    /// Record a forward pass of the `(batch, 3, S, S)` tensor behind `input`.
    pub fn forward_pass(&self, tape: &mut Tape, input: Var, mode: Mode) -> Result<ForwardPass, NnError> {
        let s = self.config.input_size;
        match *tape.shape(input) {
            [_, 3, h, w] if h == s && w == s => {}
            ref other => {
                return Err(NnError::Shape(TensorError::ShapeMismatch {
                    op: "forward",
                    left: vec![0, 3, s, s],
                    right: other.to_vec(),
                }))
            }
        }
        let mut r = Recorder::new(tape, &self.store, mode);
        let x = self.stem.forward(&mut r, input)?;
        let x = self.stem_bn.forward(&mut r, x)?;
        let mut x = r.tape.gelu(x);
        let mut taps = [x; 5];
        for (si, blocks) in self.stages.iter().enumerate() {
            for b in blocks {
                x = b.forward(&mut r, x)?;
            }
            taps[si + 1] = x;
        }
        let p2 = self.head[0].forward(&mut r, taps[2])?;
        let (h2, w2) = (r.tape.shape(p2)[2], r.tape.shape(p2)[3]);
        let p3 = self.head[1].forward(&mut r, taps[3])?;
        let p3 = r.tape.upsample(p3, h2, w2)?;
        let p4 = self.head[2].forward(&mut r, taps[4])?;
        let p4 = r.tape.upsample(p4, h2, w2)?;
        let fused = r.tape.add(p2, p3)?;
        let fused = r.tape.add(fused, p4)?;
        let fused = r.tape.gelu(fused);
        let pooled = r.tape.global_avg_pool(fused)?;
        let w = r.param(self.classifier_w);
        let b = r.param(self.classifier_b);
        let logits = r.tape.linear(pooled, w, Some(b))?;
        if !r.tape.value(logits).all_finite() {
            return Err(NnError::NonFinite("forward"));
        }
        let (param_vars, bn_updates) = r.finish();
        Ok(ForwardPass {
            logits,
            taps,
            param_vars,
            bn_updates,
        })
    }

    /// Eval-mode logits `(batch, num_classes)`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor, NnError> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let fp = self.forward_pass(&mut tape, x, Mode::Eval)?;
        Ok(tape.value(fp.logits).clone())
    }

    /// Fold batch statistics into the running buffers.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        for u in updates {
            for (buf, new) in [(u.mean_buffer, &u.stats.mean), (u.var_buffer, &u.stats.var)] {
                for (r, &b) in self.store.value_mut(buf).data_mut().iter_mut().zip(new) {
                    *r = math::to_f32_grid((1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe_batch(b: usize, s: usize, seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = substream(seed, Domain::Probe, 9, 0);
        Tensor::from_fn(&[b, 3, s, s], |_| rng.gen_range(0.0..1.0))
    }

    fn small() -> ModelConfig {
        ModelConfig {
            input_size: 32,
            stage_channels: [8, 8, 16, 16],
            stage_depths: [1, 2, 2, 1],
            attention_dim: 4,
            attention_heads: 2,
            expand_ratio: 2,
            head_channels: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn config_text_round_trip() {
        let c = small();
        assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
        assert!(ModelConfig::from_text("input_size=64\n").is_err());
        assert!(ModelConfig::from_text(&c.to_text().replace("multiscale_kernel=5", "multiscale_kernel=4")).is_err());
        assert!(ModelConfig::from_text(&(c.to_text() + "bogus=1\n")).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default();
        assert!(c.validate().is_ok());
        c.attention_heads = 3;
        assert!(c.validate().is_err());
        let c = ModelConfig {
            multiscale_kernel: 4,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn spatial_sizes_halve_with_ceiling() {
        let c = ModelConfig::default();
        assert_eq!(c.spatial_sizes(), [32, 16, 8, 4, 2]);
        assert_eq!(c.effective_kernel(2), 3);
        assert_eq!(c.effective_kernel(3), 1);
        let c = ModelConfig {
            input_size: 50,
            ..ModelConfig::default()
        };
        assert_eq!(c.spatial_sizes(), [25, 13, 7, 4, 2]);
        assert_eq!(c.effective_kernel(0), 5);
        assert_eq!(c.effective_kernel(1), 5);
    }

    #[test]
    fn single_pointwise_conv_count() {
        let mut store = ParamStore::new();
        Conv::new(&mut store, "c", 4, 8, 1, 1, false, true, PadMode::Zero);
        assert_eq!(store.count_trainable(), 40);
        assert_eq!(store.freeze("c"), 2);
        assert_eq!(store.count_trainable(), 0);
    }

    #[test]
    fn mbconv_count_is_closed_form() {
        let (cin, cout, e) = (6, 10, 3);
        let mut store = ParamStore::new();
        MbConv::new(&mut store, "m", cin, cout, 2, e);
        let mid = cin * e;
        let convs = cin * mid + mid * 9 + mid * cout;
        let norms = 2 * mid + 2 * mid + 2 * cout;
        assert_eq!(store.count_trainable(), convs + norms);
    }

    fn run_block(block: &MbConv, store: &ParamStore, x: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let mut r = Recorder::new(&mut tape, store, Mode::Eval);
        let y = block.forward(&mut r, xv).unwrap();
        drop(r);
        tape.value(y).clone()
    }

    #[test]
    fn mbconv_stride_two_halves() {
        let mut store = ParamStore::new();
        let b = MbConv::new(&mut store, "m", 3, 5, 2, 2);
        store.initialize(1);
        let y = run_block(&b, &store, &probe_batch(1, 32, 1));
        assert_eq!(y.shape(), &[1, 5, 16, 16]);
    }

    #[test]
    fn mbconv_zero_projection_is_identity() {
        let mut store = ParamStore::new();
        let b = MbConv::new(&mut store, "m", 3, 3, 1, 4);
        store.initialize(2);
        store.value_mut(b.project_weight()).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let x = probe_batch(2, 9, 2);
        assert_eq!(run_block(&b, &store, &x), x);
    }

    #[test]
    fn default_param_count_matches_per_layer_sum() {
        let c = ModelConfig::default();
        let m = Model::new(c.clone()).unwrap();
        let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k;
        let bn = |ch: usize| 2 * ch;
        let mb = |cin: usize, cout: usize| {
            let mid = cin * c.expand_ratio;
            conv(cin, mid, 1) + bn(mid) + mid * 9 + bn(mid) + conv(mid, cout, 1) + bn(cout)
        };
        let inner = c.attention_heads * c.attention_dim;
        let vit = |ch: usize, k: usize| ch * k * k + 3 * conv(2 * ch, inner, 1) + conv(inner, ch, 1) + bn(ch) + mb(ch, ch);
        let ch = c.stage_channels;
        let mut expected = conv(3, ch[0], 3) + bn(ch[0]);
        expected += mb(ch[0], ch[0]);
        expected += mb(ch[0], ch[1]);
        expected += mb(ch[1], ch[2]) + vit(ch[2], 3);
        expected += mb(ch[2], ch[3]) + vit(ch[3], 1);
        for s in 1..4 {
            expected += ch[s] * c.head_channels + c.head_channels;
        }
        expected += c.head_channels * c.num_classes + c.num_classes;
        assert_eq!(m.count_params(), expected);
    }

    #[test]
    fn forward_shapes_and_finiteness() {
        let m = Model::seeded(small(), 3).unwrap();
        let logits = m.forward(&probe_batch(3, 32, 3)).unwrap();
        assert_eq!(logits.shape(), &[3, 10]);
        assert!(logits.all_finite());
        assert!(m.forward(&probe_batch(1, 16, 3)).is_err());
    }

    #[test]
    fn eval_forward_is_batch_independent() {
        let m = Model::seeded(small(), 4).unwrap();
        let a = probe_batch(1, 32, 10);
        let b = probe_batch(1, 32, 11);
        let ab = Tensor::stack(&[a.clone().reshape(&[3, 32, 32]).unwrap(), b.clone().reshape(&[3, 32, 32]).unwrap()])
            .unwrap();
        let ba = Tensor::stack(&[b.reshape(&[3, 32, 32]).unwrap(), a.reshape(&[3, 32, 32]).unwrap()]).unwrap();
        let la = m.forward(&ab).unwrap();
        let lb = m.forward(&ba).unwrap();
        assert_eq!(la.row(0), lb.row(1));
        assert_eq!(la.row(1), lb.row(0));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::seeded(small(), 5).unwrap();
        let b = Model::seeded(small(), 5).unwrap();
        let c = Model::seeded(small(), 6).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
        assert!(a
            .params()
            .entries()
            .iter()
            .all(|e| e.value.data().iter().all(|&v| v == v as f32 as f64)));
    }

    #[test]
    fn running_stats_update() {
        let mut m = Model::seeded(small(), 7).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(probe_batch(2, 32, 7));
        let fp = m.forward_pass(&mut tape, x, Mode::Train).unwrap();
        assert!(!fp.bn_updates.is_empty());
        let u = fp.bn_updates[0].clone();
        m.apply_bn_updates(&fp.bn_updates);
        let got = m.params().value(u.mean_buffer).data()[0];
        assert_eq!(got, (BN_MOMENTUM * u.stats.mean[0]) as f32 as f64);
    }
}
