//! Video prediction model builders: a plain U-Net that consumes four stacked
//! frames, and split variants where each frame gets its own quarter-width
//! pathway, optionally exchanging feature slices between neighboring
//! pathways after every block ("shift").
//!
//! Models are built as an explicit layer graph with named parameter tensors;
//! forward passes replay that graph onto an autograd tape.

use crate::error::{Error, Result};
use crate::tensor::graph::{Graph, Var};
use crate::tensor::{Element, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Exact rational, used for the shift slice width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fraction {
    pub num: u32,
    pub den: u32,
}

impl Fraction {
    pub const QUARTER: Fraction = Fraction { num: 1, den: 4 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if den == 0 || num > den {
            return Err(Error::Config(format!("fraction {num}/{den} must lie in [0, 1]")));
        }
        Ok(Fraction { num, den })
    }

    /// Per-direction slice width for a channel count: `c·num/den` must be an
    /// even integer; half of it moves each way. Zero means "no shift".
    pub fn slice_for(&self, channels: usize) -> Result<usize> {
        let q = channels * self.num as usize;
        if q % self.den as usize != 0 {
            return Err(Error::Config(format!(
                "shift fraction {}/{} of {channels} channels is not integral",
                self.num, self.den
            )));
        }
        let moved = q / self.den as usize;
        if moved == 0 {
            return Ok(0);
        }
        if moved % 2 != 0 {
            return Err(Error::Config(format!(
                "shift fraction {}/{} of {channels} channels moves {moved} channels, \
                 which cannot be halved per direction",
                self.num, self.den
            )));
        }
        Ok(moved / 2)
    }
}

impl std::fmt::Display for Fraction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNetConfig {
    pub in_channels_per_frame: usize,
    pub n_frames: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub out_channels: usize,
    pub input_h: usize,
    pub input_w: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            in_channels_per_frame: 3,
            n_frames: 4,
            base_channels: 32,
            depth: 3,
            out_channels: 3,
            input_h: 64,
            input_w: 64,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels_per_frame == 0 || self.out_channels == 0 || self.n_frames == 0 {
            return Err(Error::Config("channel and frame counts must be positive".into()));
        }
        if self.depth < 2 {
            return Err(Error::Config(format!("depth {} must be at least 2", self.depth)));
        }
        if self.base_channels % (2 * self.n_frames) != 0 {
            return Err(Error::Config(format!(
                "base_channels {} must be divisible by 2*n_frames = {}",
                self.base_channels,
                2 * self.n_frames
            )));
        }
        let div = 1usize << self.depth;
        if self.input_h % div != 0 || self.input_w % div != 0 {
            return Err(Error::Config(format!(
                "input {}x{} not divisible by 2^depth = {div}",
                self.input_h, self.input_w
            )));
        }
        if self.input_h / div == 0 || self.input_w / div == 0 {
            return Err(Error::Config(format!(
                "input {}x{} collapses at depth {}",
                self.input_h, self.input_w, self.depth
            )));
        }
        Ok(())
    }

    /// Stacked input channels consumed by the unsplit network.
    pub fn stacked_channels(&self) -> usize {
        self.in_channels_per_frame * self.n_frames
    }

    /// Full width at encoder level `l`.
    fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Per-pathway width at encoder level `l`.
    fn path_width(&self, level: usize) -> usize {
        self.width(level) / self.n_frames
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CPNetConfig {
    pub base: UNetConfig,
    pub split_encoder: bool,
    pub split_decoder: bool,
    pub shift_enabled: bool,
    pub shift_fraction: Fraction,
}

impl CPNetConfig {
    pub fn encoder_split(base: UNetConfig) -> Self {
        CPNetConfig {
            base,
            split_encoder: true,
            split_decoder: false,
            shift_enabled: false,
            shift_fraction: Fraction::QUARTER,
        }
    }

    pub fn full_split(base: UNetConfig) -> Self {
        CPNetConfig { split_decoder: true, ..Self::encoder_split(base) }
    }

    pub fn with_shift(mut self) -> Self {
        self.shift_enabled = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.split_decoder && !self.split_encoder {
            return Err(Error::Config(
                "split_decoder requires split_encoder; a split decoder cannot consume \
                 an unsplit bottleneck"
                    .into(),
            ));
        }
        if !self.split_encoder {
            return Err(Error::Config(
                "at least the encoder must be split; use the baseline builder otherwise".into(),
            ));
        }
        if self.shift_enabled {
            // Every shifted layer must yield an integral per-direction slice.
            for level in 0..=self.base.depth {
                let c = self.base.path_width(level);
                let s = self.shift_fraction.slice_for(c)?;
                if s == 0 {
                    return Err(Error::Config(format!(
                        "shift fraction {} of {c} per-path channels at level {level} \
                         leaves nothing to move",
                        self.shift_fraction
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    EncoderSplit,
    FullSplit,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::EncoderSplit => "encoder-split",
            Variant::FullSplit => "full-split",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "encoder-split" => Ok(Variant::EncoderSplit),
            "full-split" => Ok(Variant::FullSplit),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Everything needed to rebuild a model's architecture (not its weights).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelDesc {
    pub variant: Variant,
    pub cfg: UNetConfig,
    pub shift_enabled: bool,
    pub shift_fraction: Fraction,
}

/// Rebuilds a freshly initialized model matching a description.
pub fn build_from_desc<T: Element>(desc: &ModelDesc, seed: u64) -> Result<ModelGraph<T>> {
    match desc.variant {
        Variant::Baseline => {
            if desc.shift_enabled {
                return Err(Error::Config("baseline model cannot carry shift modules".into()));
            }
            build_baseline_unet(&desc.cfg, seed)
        }
        Variant::EncoderSplit | Variant::FullSplit => build_cpnet(
            &CPNetConfig {
                base: desc.cfg.clone(),
                split_encoder: true,
                split_decoder: desc.variant == Variant::FullSplit,
                shift_enabled: desc.shift_enabled,
                shift_fraction: desc.shift_fraction,
            },
            seed,
        ),
    }
}

/// Cost bucket for the analytical accountant. Interior layers obey the pure
/// per-path quartering law; boundary layers (frame entry convs, fusion head)
/// cannot; shared layers run at full width in partially split variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostClass {
    Interior,
    Boundary,
    Shared,
}

impl CostClass {
    pub fn name(&self) -> &'static str {
        match self {
            CostClass::Interior => "interior",
            CostClass::Boundary => "boundary",
            CostClass::Shared => "shared",
        }
    }
}

#[derive(Clone, Debug)]
pub enum LayerKind {
    /// Clip frame `frame` enters here.
    Input { frame: usize },
    Conv { w: usize, b: usize, stride: usize, pad: usize },
    ConvT { w: usize, b: usize, stride: usize, pad: usize },
    Relu,
    Tanh,
    MaxPool2,
    Concat,
    /// Output of the shift exchange for pathway `path`; inputs hold all
    /// pathway activations of the layer, in pathway order.
    Shift { path: usize, slice: usize },
}

#[derive(Clone, Debug)]
pub struct LayerNode {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<usize>,
    pub class: CostClass,
}

#[derive(Clone, Debug)]
pub struct NamedParam<T: Element> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ModelGraph<T: Element> {
    pub variant: Variant,
    pub cfg: UNetConfig,
    pub shift_enabled: bool,
    pub shift_fraction: Fraction,
    pub nodes: Vec<LayerNode>,
    pub params: Vec<NamedParam<T>>,
    pub output: usize,
}

struct Builder<T: Element> {
    nodes: Vec<LayerNode>,
    params: Vec<NamedParam<T>>,
    rng: ChaCha8Rng,
}

impl<T: Element> Builder<T> {
    fn new(seed: u64) -> Self {
        Builder { nodes: Vec::new(), params: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn push(&mut self, name: String, kind: LayerKind, inputs: Vec<usize>, class: CostClass) -> usize {
        self.nodes.push(LayerNode { name, kind, inputs, class });
        self.nodes.len() - 1
    }

    fn input(&mut self, frame: usize) -> usize {
        self.push(format!("input.frame{frame}"), LayerKind::Input { frame }, vec![], CostClass::Shared)
    }

    /// Fan-in scaled normal weights, zero bias. Sampled in f64 so every
    /// precision sees the same initialization.
    fn conv_params(&mut self, name: &str, wdims: [usize; 4], fan_in: usize, cout: usize) -> (usize, usize) {
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        let w = Tensor::from_fn(&wdims, |_| T::from64(dist.sample(&mut self.rng)));
        self.params.push(NamedParam { name: format!("{name}.w"), value: w });
        let wi = self.params.len() - 1;
        self.params.push(NamedParam { name: format!("{name}.b"), value: Tensor::zeros(&[cout]) });
        (wi, self.params.len() - 1)
    }

    fn conv(
        &mut self,
        name: &str,
        input: usize,
        cin: usize,
        cout: usize,
        k: usize,
        class: CostClass,
    ) -> usize {
        let (w, b) = self.conv_params(name, [cout, cin, k, k], cin * k * k, cout);
        self.push(name.to_string(), LayerKind::Conv { w, b, stride: 1, pad: k / 2 }, vec![input], class)
    }

    fn conv_relu(&mut self, name: &str, input: usize, cin: usize, cout: usize, class: CostClass) -> usize {
        let c = self.conv(name, input, cin, cout, 3, class);
        self.push(format!("{name}.relu"), LayerKind::Relu, vec![c], class)
    }

    /// Stride-2 kernel-2 transpose conv: exact 2x upsampling.
    fn upconv(&mut self, name: &str, input: usize, cin: usize, cout: usize, class: CostClass) -> usize {
        let (w, b) = self.conv_params(name, [cin, cout, 2, 2], cin * 4, cout);
        self.push(name.to_string(), LayerKind::ConvT { w, b, stride: 2, pad: 0 }, vec![input], class)
    }

    fn pool(&mut self, name: String, input: usize, class: CostClass) -> usize {
        self.push(name, LayerKind::MaxPool2, vec![input], class)
    }

    fn concat(&mut self, name: String, inputs: Vec<usize>, class: CostClass) -> usize {
        self.push(name, LayerKind::Concat, inputs, class)
    }

    /// Two-conv block; returns the final activation node.
    fn block(&mut self, prefix: &str, input: usize, cin: usize, mid: usize, out: usize, class: CostClass) -> usize {
        let a = self.conv_relu(&format!("{prefix}.conv1"), input, cin, mid, class);
        self.conv_relu(&format!("{prefix}.conv2"), a, mid, out, class)
    }

    /// Inserts a shift barrier across pathway activations; returns the
    /// per-pathway shifted nodes.
    fn shift(&mut self, prefix: &str, paths: &[usize], slice: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(paths.len());
        for p in 0..paths.len() {
            out.push(self.push(
                format!("path{p}.{prefix}.shift"),
                LayerKind::Shift { path: p, slice },
                paths.to_vec(),
                CostClass::Interior,
            ));
        }
        out
    }
}

/// Unsplit reference network: stacked frames in, two 3x3 convs per level,
/// maxpool down, transpose-conv up with skip concatenation, tanh head.
pub fn build_baseline_unet<T: Element>(cfg: &UNetConfig, seed: u64) -> Result<ModelGraph<T>> {
    cfg.validate()?;
    let mut b = Builder::new(seed);

    let frames: Vec<usize> = (0..cfg.n_frames).map(|f| b.input(f)).collect();
    let mut x = b.concat("input.stack".into(), frames, CostClass::Shared);

    let mut skips = Vec::new();
    for l in 0..cfg.depth {
        let cin = if l == 0 { cfg.stacked_channels() } else { cfg.width(l - 1) };
        let class = if l == 0 { CostClass::Boundary } else { CostClass::Interior };
        let act = b.block(&format!("enc{l}"), x, cin, cfg.width(l), cfg.width(l), class);
        skips.push(act);
        x = b.pool(format!("enc{l}.pool"), act, class);
    }
    x = b.block("bot", x, cfg.width(cfg.depth - 1), cfg.width(cfg.depth), cfg.width(cfg.depth), CostClass::Interior);

    for l in (0..cfg.depth).rev() {
        let up = b.upconv(&format!("dec{l}.up"), x, cfg.width(l + 1), cfg.width(l), CostClass::Interior);
        let cat = b.concat(format!("dec{l}.cat"), vec![up, skips[l]], CostClass::Interior);
        x = b.block(&format!("dec{l}"), cat, 2 * cfg.width(l), cfg.width(l), cfg.width(l), CostClass::Interior);
    }

    let head = b.conv("head.conv", x, cfg.base_channels, cfg.out_channels, 3, CostClass::Boundary);
    let out = b.push("head.tanh".into(), LayerKind::Tanh, vec![head], CostClass::Boundary);

    Ok(ModelGraph {
        variant: Variant::Baseline,
        cfg: cfg.clone(),
        shift_enabled: false,
        shift_fraction: Fraction::QUARTER,
        nodes: b.nodes,
        params: b.params,
        output: out,
    })
}

/// Split variant: one quarter-width pathway per frame. Encoder-only split
/// concatenates pathway features at the bottleneck and runs a full-width
/// decoder; full split keeps pathways separate to the end and fuses with a
/// single conv head. Entry convs keep full base width so each pathway sees a
/// rich first feature bank; every other pathway layer is quartered.
pub fn build_cpnet<T: Element>(cfg: &CPNetConfig, seed: u64) -> Result<ModelGraph<T>> {
    cfg.validate()?;
    let u = &cfg.base;
    let n = u.n_frames;
    let mut b = Builder::new(seed);

    let mut paths: Vec<usize> = (0..n).map(|f| b.input(f)).collect();
    let mut skips: Vec<Vec<usize>> = vec![Vec::new(); n]; // skips[path][level]

    let shift_here = |b: &mut Builder<T>, prefix: &str, acts: &[usize], width: usize| -> Result<Vec<usize>> {
        if !cfg.shift_enabled {
            return Ok(acts.to_vec());
        }
        let s = cfg.shift_fraction.slice_for(width)?;
        Ok(b.shift(prefix, acts, s))
    };

    // Per-pathway encoder.
    for l in 0..u.depth {
        let mut acts = Vec::with_capacity(n);
        for (p, &x) in paths.iter().enumerate() {
            let prefix = format!("path{p}.enc{l}");
            let act = if l == 0 {
                b.block(&prefix, x, u.in_channels_per_frame, u.base_channels, u.path_width(0), CostClass::Boundary)
            } else {
                b.block(&prefix, x, u.path_width(l - 1), u.path_width(l), u.path_width(l), CostClass::Interior)
            };
            acts.push(act);
        }
        let acts = shift_here(&mut b, &format!("enc{l}"), &acts, u.path_width(l))?;
        for (p, &act) in acts.iter().enumerate() {
            skips[p].push(act);
        }
        paths = acts
            .iter()
            .enumerate()
            .map(|(p, &act)| b.pool(format!("path{p}.enc{l}.pool"), act, CostClass::Interior))
            .collect();
    }

    // Per-pathway bottleneck.
    let mut acts = Vec::with_capacity(n);
    for (p, &x) in paths.iter().enumerate() {
        let prefix = format!("path{p}.bot");
        acts.push(b.block(&prefix, x, u.path_width(u.depth - 1), u.path_width(u.depth), u.path_width(u.depth), CostClass::Interior));
    }
    paths = shift_here(&mut b, "bot", &acts, u.path_width(u.depth))?;

    let (variant, out) = if cfg.split_decoder {
        // Per-pathway decoder, fused by one conv head.
        for l in (0..u.depth).rev() {
            let mut acts = Vec::with_capacity(n);
            for (p, &x) in paths.iter().enumerate() {
                let up = b.upconv(&format!("path{p}.dec{l}.up"), x, u.path_width(l + 1), u.path_width(l), CostClass::Interior);
                let cat = b.concat(format!("path{p}.dec{l}.cat"), vec![up, skips[p][l]], CostClass::Interior);
                acts.push(b.block(&format!("path{p}.dec{l}"), cat, 2 * u.path_width(l), u.path_width(l), u.path_width(l), CostClass::Interior));
            }
            paths = shift_here(&mut b, &format!("dec{l}"), &acts, u.path_width(l))?;
        }
        let fused = b.concat("head.cat".into(), paths.clone(), CostClass::Boundary);
        let head = b.conv("head.conv", fused, u.base_channels, u.out_channels, 3, CostClass::Boundary);
        (Variant::FullSplit, b.push("head.tanh".into(), LayerKind::Tanh, vec![head], CostClass::Boundary))
    } else {
        // Concatenate pathway features; decode at full width.
        let mut x = b.concat("bot.cat".into(), paths.clone(), CostClass::Shared);
        for l in (0..u.depth).rev() {
            let up = b.upconv(&format!("dec{l}.up"), x, u.width(l + 1), u.width(l), CostClass::Shared);
            let skip = b.concat(format!("dec{l}.skip"), skips.iter().map(|s| s[l]).collect(), CostClass::Shared);
            let cat = b.concat(format!("dec{l}.cat"), vec![up, skip], CostClass::Shared);
            x = b.block(&format!("dec{l}"), cat, 2 * u.width(l), u.width(l), u.width(l), CostClass::Shared);
        }
        let head = b.conv("head.conv", x, u.base_channels, u.out_channels, 3, CostClass::Boundary);
        (Variant::EncoderSplit, b.push("head.tanh".into(), LayerKind::Tanh, vec![head], CostClass::Boundary))
    };

    Ok(ModelGraph {
        variant,
        cfg: u.clone(),
        shift_enabled: cfg.shift_enabled,
        shift_fraction: cfg.shift_fraction,
        nodes: b.nodes,
        params: b.params,
        output: out,
    })
}

impl<T: Element> ModelGraph<T> {
    pub fn describe(&self) -> ModelDesc {
        ModelDesc {
            variant: self.variant,
            cfg: self.cfg.clone(),
            shift_enabled: self.shift_enabled,
            shift_fraction: self.shift_fraction,
        }
    }

    pub fn param_count(&self) -> u64 {
        self.params.iter().map(|p| p.value.numel() as u64).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    /// Replaces a parameter; dims must match exactly.
    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("no parameter named {name}")))?;
        if p.value.dims() != value.dims() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has dims {:?}, replacement has {:?}",
                p.value.dims(),
                value.dims()
            )));
        }
        p.value = value;
        Ok(())
    }

    /// Output (channels, h, w) of every node for a given input resolution.
    pub fn infer_dims(&self, in_h: usize, in_w: usize) -> Result<Vec<(usize, usize, usize)>> {
        let mut dims: Vec<(usize, usize, usize)> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let d = match &node.kind {
                LayerKind::Input { .. } => (self.cfg.in_channels_per_frame, in_h, in_w),
                LayerKind::Conv { w, stride, pad, .. } => {
                    let wd = self.params[*w].value.dims();
                    let (_, h, wid) = dims[node.inputs[0]];
                    let k = wd[2];
                    if (h + 2 * pad).checked_sub(k).map_or(true, |v| v % stride != 0) {
                        return Err(Error::Shape(format!(
                            "layer {}: input {h}x{wid} incompatible with k={k} stride={stride} pad={pad}",
                            node.name
                        )));
                    }
                    ((wd[0]), (h + 2 * pad - k) / stride + 1, (wid + 2 * pad - k) / stride + 1)
                }
                LayerKind::ConvT { w, stride, pad, .. } => {
                    let wd = self.params[*w].value.dims();
                    let (_, h, wid) = dims[node.inputs[0]];
                    let k = wd[2];
                    (wd[1], (h - 1) * stride + k - 2 * pad, (wid - 1) * stride + k - 2 * pad)
                }
                LayerKind::Relu | LayerKind::Tanh => dims[node.inputs[0]],
                LayerKind::MaxPool2 => {
                    let (c, h, w) = dims[node.inputs[0]];
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(Error::Shape(format!(
                            "layer {}: pooling odd dims {h}x{w}",
                            node.name
                        )));
                    }
                    (c, h / 2, w / 2)
                }
                LayerKind::Concat => {
                    let (_, h, w) = dims[node.inputs[0]];
                    (node.inputs.iter().map(|&i| dims[i].0).sum(), h, w)
                }
                LayerKind::Shift { path, .. } => dims[node.inputs[*path]],
            };
            dims.push(d);
        }
        Ok(dims)
    }

    /// Replays the layer graph onto a tape, with frames and parameters
    /// already recorded as vars (params ordered as `self.params`).
    pub fn forward_nodes(&self, g: &mut Graph<T>, frames: &[Var], params: &[Var]) -> Result<Var> {
        if frames.len() != self.cfg.n_frames {
            return Err(Error::Shape(format!(
                "clip has {} frames, model wants {}",
                frames.len(),
                self.cfg.n_frames
            )));
        }
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "got {} parameter vars, model has {}",
                params.len(),
                self.params.len()
            )));
        }
        let mut vals: Vec<Var> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let ins = &node.inputs;
            let v = match &node.kind {
                LayerKind::Input { frame } => frames[*frame],
                LayerKind::Conv { w, b, stride, pad } => {
                    g.conv2d(vals[ins[0]], params[*w], params[*b], *stride, *pad)?
                }
                LayerKind::ConvT { w, b, stride, pad } => {
                    g.conv_transpose2d(vals[ins[0]], params[*w], params[*b], *stride, *pad)?
                }
                LayerKind::Relu => g.relu(vals[ins[0]])?,
                LayerKind::Tanh => g.tanh(vals[ins[0]])?,
                LayerKind::MaxPool2 => g.maxpool2(vals[ins[0]])?,
                LayerKind::Concat => {
                    let parts: Vec<Var> = ins.iter().map(|&i| vals[i]).collect();
                    g.concat_channels(&parts)?
                }
                LayerKind::Shift { path, slice } => {
                    let n = ins.len();
                    let p = *path;
                    let s = *slice;
                    let cur = vals[ins[p]];
                    if s == 0 {
                        cur
                    } else {
                        let (bsz, c, h, w) = g.value(cur).dims4()?;
                        let zero = |g: &mut Graph<T>| g.constant(Tensor::zeros(&[bsz, s, h, w]));
                        let left = if p > 0 {
                            g.narrow_channels(vals[ins[p - 1]], 0, s)?
                        } else {
                            zero(g)?
                        };
                        let right = if p + 1 < n {
                            g.narrow_channels(vals[ins[p + 1]], s, s)?
                        } else {
                            zero(g)?
                        };
                        let mut parts = vec![left, right];
                        if c > 2 * s {
                            parts.push(g.narrow_channels(cur, 2 * s, c - 2 * s)?);
                        }
                        g.concat_channels(&parts)?
                    }
                }
            };
            vals.push(v);
        }
        Ok(vals[self.output])
    }

    /// Records frames as constants and parameters as leaves
    /// (differentiable when `train`); returns output and parameter vars.
    pub fn forward(&self, g: &mut Graph<T>, clip: &[Tensor<T>], train: bool) -> Result<(Var, Vec<Var>)> {
        self.check_clip(clip)?;
        let frames: Vec<Var> =
            clip.iter().map(|f| g.constant(f.clone())).collect::<Result<_>>()?;
        let params: Vec<Var> =
            self.params.iter().map(|p| g.leaf(p.value.clone(), train)).collect::<Result<_>>()?;
        let out = self.forward_nodes(g, &frames, &params)?;
        Ok((out, params))
    }

    /// One inference pass; returns the predicted frame.
    pub fn forward_predict(&self, clip: &[Tensor<T>]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let (out, _) = self.forward(&mut g, clip, false)?;
        Ok(g.value(out).clone())
    }

    fn check_clip(&self, clip: &[Tensor<T>]) -> Result<()> {
        if clip.len() != self.cfg.n_frames {
            return Err(Error::Shape(format!(
                "clip has {} frames, model wants {}",
                clip.len(),
                self.cfg.n_frames
            )));
        }
        let (b0, _, h0, w0) = clip[0].dims4()?;
        for f in clip {
            let (b, c, h, w) = f.dims4()?;
            if c != self.cfg.in_channels_per_frame {
                return Err(Error::Shape(format!(
                    "frame has {c} channels, model wants {}",
                    self.cfg.in_channels_per_frame
                )));
            }
            if (b, h, w) != (b0, h0, w0) {
                return Err(Error::Shape("clip frames disagree on batch or size".into()));
            }
        }
        let div = 1usize << self.cfg.depth;
        if h0 % div != 0 || w0 % div != 0 || h0 / div == 0 || w0 / div == 0 {
            return Err(Error::Shape(format!(
                "frame size {h0}x{w0} not divisible by 2^depth = {div}"
            )));
        }
        Ok(())
    }
}

/// Exchanges feature slices between neighboring pathways: pathway `p`
/// receives channels [0,s) from pathway p-1 and [s,2s) from pathway p+1
/// (zeros where no neighbor exists); channels [2s,C) pass through.
pub fn shift_features<T: Element>(paths: &[Tensor<T>], fraction: Fraction) -> Result<Vec<Tensor<T>>> {
    if paths.is_empty() {
        return Err(Error::Shape("shift_features on zero pathways".into()));
    }
    let (b0, c, h, w) = paths[0].dims4()?;
    for p in paths {
        if p.dims() != paths[0].dims() {
            return Err(Error::Shape(format!(
                "pathway dims differ: {:?} vs {:?}",
                p.dims(),
                paths[0].dims()
            )));
        }
    }
    let s = fraction.slice_for(c)?;
    if s == 0 {
        return Ok(paths.to_vec());
    }
    let plane = h * w;
    let n = paths.len();
    let mut out = Vec::with_capacity(n);
    for p in 0..n {
        let mut t = paths[p].clone();
        let td = t.data_mut();
        for bi in 0..b0 {
            let base = bi * c * plane;
            // [0,s) from the previous pathway, or zeros at the boundary.
            match p.checked_sub(1) {
                Some(prev) => td[base..base + s * plane]
                    .copy_from_slice(&paths[prev].data()[base..base + s * plane]),
                None => td[base..base + s * plane].fill(T::zero()),
            }
            // [s,2s) from the next pathway, or zeros at the boundary.
            let lo = base + s * plane;
            let hi = base + 2 * s * plane;
            if p + 1 < n {
                td[lo..hi].copy_from_slice(&paths[p + 1].data()[lo..hi]);
            } else {
                td[lo..hi].fill(T::zero());
            }
        }
        out.push(t);
    }
    Ok(out)
}
