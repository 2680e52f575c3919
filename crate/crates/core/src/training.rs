//! Clip sampling, squared-error prediction loss, Adam with a per-epoch
//! cosine schedule, and a training loop that is a pure function of
//! (initial state, dataset, config): identical inputs give bit-identical
//! checkpoints, including across a save/resume boundary.

use crate::error::{Error, Result};
use crate::mix_seed;
use crate::models::{ModelDesc, ModelGraph, NamedParam, Variant};
use crate::tensor::graph::{Graph, Var};
use crate::tensor::{read_tensor, write_tensor, Dtype, Element, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{BufReader, BufWriter, Read, Write as IoWrite};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(&self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Mean-reduce the loss instead of the plain element sum.
    pub loss_mean: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch: 4,
            epochs: 10,
            seed: 0,
            precision: Precision::F32,
            loss_mean: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 {} must be positive", self.lr0)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} {b} must lie in [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::Config("batch and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// One training example: input frames [start, start+window), target frame
/// at `target` (= start + window).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipRef {
    pub start: usize,
    pub target: usize,
}

/// Sliding stride-1 windows over a video of `video_len` frames. Too-short
/// videos yield no clips.
pub fn make_clips(video_len: usize, window: usize) -> Vec<ClipRef> {
    if window == 0 || video_len < window + 1 {
        return Vec::new();
    }
    (0..=video_len - window - 1)
        .map(|start| ClipRef { start, target: start + window })
        .collect()
}

/// Squared-error between prediction and target: element sum by default,
/// mean when `mean` is set.
pub fn loss_l2<T: Element>(g: &mut Graph<T>, pred: Var, target: Var, mean: bool) -> Result<Var> {
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    if mean {
        g.mean(sq)
    } else {
        g.sum(sq)
    }
}

/// Per-epoch cosine annealing from lr0 down to 0.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::Config(format!(
            "epoch {epoch} out of range for {} epochs",
            cfg.epochs
        )));
    }
    Ok(cfg.lr0 * (1.0 + (std::f64::consts::PI * epoch as f64 / cfg.epochs as f64).cos()) / 2.0)
}

/// Adam first/second moment state, one pair of tensors per parameter.
#[derive(Clone, Debug)]
pub struct AdamState<T: Element> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Element> AdamState<T> {
    pub fn new(params: &[NamedParam<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.value.dims())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.dims())).collect(),
            step: 0,
        }
    }

    /// One bias-corrected update across all parameters. Rejects non-finite
    /// gradients before touching any state.
    pub fn step(
        &mut self,
        params: &mut [NamedParam<T>],
        grads: &[Tensor<T>],
        lr: f64,
        cfg: &TrainConfig,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam_step: {} params, {} grads, {} moment pairs",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.dims() != g.dims() {
                return Err(Error::Shape(format!(
                    "gradient for {} has dims {:?}, parameter has {:?}",
                    p.name,
                    g.dims(),
                    p.value.dims()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient for {} is not finite", p.name)));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from64(cfg.beta1);
        let b2 = T::from64(cfg.beta2);
        let one_m_b1 = T::from64(1.0 - cfg.beta1);
        let one_m_b2 = T::from64(1.0 - cfg.beta2);
        let bc1 = T::from64(1.0 - cfg.beta1.powi(t));
        let bc2 = T::from64(1.0 - cfg.beta2.powi(t));
        let lr_t = T::from64(lr);
        let eps = T::from64(cfg.adam_eps);

        for i in 0..params.len() {
            let gd = grads[i].data();
            let md = self.m[i].data_mut();
            let vd = self.v[i].data_mut();
            let pd = params[i].value.data_mut();
            for j in 0..gd.len() {
                let g = gd[j];
                md[j] = b1 * md[j] + one_m_b1 * g;
                vd[j] = b2 * vd[j] + one_m_b2 * g * g;
                let mhat = md[j] / bc1;
                let vhat = vd[j] / bc2;
                pd[j] = pd[j] - lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Per-epoch record passed to the progress callback and kept in history.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub steps: u64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T: Element> {
    pub desc: ModelDesc,
    pub train: TrainConfig,
    /// Epochs completed; resuming starts here.
    pub epoch: usize,
    pub step: u64,
    pub loss_history: Vec<f64>,
    pub params: Vec<NamedParam<T>>,
    pub adam_m: Vec<NamedParam<T>>,
    pub adam_v: Vec<NamedParam<T>>,
}

/// State carried across a save/load boundary to continue a run.
pub struct Resume<T: Element> {
    pub adam: AdamState<T>,
    pub start_epoch: usize,
    pub loss_history: Vec<f64>,
}

impl<T: Element> Checkpoint<T> {
    /// Applies stored weights to a freshly built model and reconstructs the
    /// optimizer state.
    pub fn restore(&self, model: &mut ModelGraph<T>) -> Result<Resume<T>> {
        if model.params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "model has {} parameters, checkpoint has {}",
                model.params.len(),
                self.params.len()
            )));
        }
        for p in &self.params {
            model.set_param(&p.name, p.value.clone())?;
        }
        let mut adam = AdamState::new(&model.params);
        adam.step = self.step;
        for (i, (m, v)) in self.adam_m.iter().zip(&self.adam_v).enumerate() {
            if m.name != model.params[i].name || v.name != model.params[i].name {
                return Err(Error::Checkpoint(format!(
                    "optimizer moments misaligned at {} (got {} / {})",
                    model.params[i].name, m.name, v.name
                )));
            }
            adam.m[i] = m.value.clone();
            adam.v[i] = v.value.clone();
        }
        Ok(Resume { adam, start_epoch: self.epoch, loss_history: self.loss_history.clone() })
    }
}

/// Stacks per-video frames [3,H,W] into a batch tensor [B,3,H,W].
/// Stacks same-shaped [C,H,W] frames into one [B,C,H,W] batch.
pub fn stack_frames<T: Element>(frames: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let d0 = frames[0].dims();
    if d0.len() != 3 {
        return Err(Error::Shape(format!("expected [C,H,W] frames, got {d0:?}")));
    }
    for f in frames {
        if f.dims() != d0 {
            return Err(Error::Shape("batch frames disagree on dims".into()));
        }
    }
    let plane = frames[0].numel();
    let mut out = Tensor::zeros(&[frames.len(), d0[0], d0[1], d0[2]]);
    for (i, f) in frames.iter().enumerate() {
        out.data_mut()[i * plane..(i + 1) * plane].copy_from_slice(f.data());
    }
    Ok(out)
}

/// Trains in place, returning the final checkpoint. Batches are shuffled
/// with a per-epoch seed derived from the config seed, so a resumed run
/// sees exactly the order an uninterrupted run would have.
pub fn train<T: Element>(
    model: &mut ModelGraph<T>,
    videos: &[Vec<Tensor<T>>],
    cfg: &TrainConfig,
    resume: Option<Resume<T>>,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<Checkpoint<T>> {
    train_until(model, videos, cfg, resume, cfg.epochs, on_epoch)
}

/// Like [`train`] but stops after `end_epoch` epochs while keeping the full
/// `cfg.epochs` learning-rate schedule — this is what an interrupted run
/// looks like, and why resuming from its checkpoint reproduces an
/// uninterrupted run bit for bit.
pub fn train_until<T: Element>(
    model: &mut ModelGraph<T>,
    videos: &[Vec<Tensor<T>>],
    cfg: &TrainConfig,
    resume: Option<Resume<T>>,
    end_epoch: usize,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Checkpoint<T>> {
    cfg.validate()?;
    if end_epoch > cfg.epochs {
        return Err(Error::Config(format!(
            "end epoch {end_epoch} beyond configured {} epochs",
            cfg.epochs
        )));
    }
    let window = model.cfg.n_frames;
    let mut clips: Vec<(usize, ClipRef)> = Vec::new();
    for (vi, video) in videos.iter().enumerate() {
        for c in make_clips(video.len(), window) {
            clips.push((vi, c));
        }
    }
    if clips.is_empty() {
        return Err(Error::Data(format!(
            "no training clips: every video is shorter than {} frames",
            window + 1
        )));
    }

    let (mut adam, start_epoch, mut history) = match resume {
        Some(r) => {
            if r.start_epoch > end_epoch {
                return Err(Error::Config(format!(
                    "resume epoch {} beyond end epoch {end_epoch}",
                    r.start_epoch
                )));
            }
            (r.adam, r.start_epoch, r.loss_history)
        }
        None => (AdamState::new(&model.params), 0, Vec::new()),
    };

    for epoch in start_epoch..end_epoch {
        let lr = cosine_lr(epoch, cfg)?;
        let mut order = clips.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut steps_this_epoch = 0u64;
        for batch in order.chunks(cfg.batch) {
            let mut inputs = Vec::with_capacity(window);
            for f in 0..window {
                let frames: Vec<&Tensor<T>> =
                    batch.iter().map(|&(vi, c)| &videos[vi][c.start + f]).collect();
                inputs.push(stack_frames(&frames)?);
            }
            let targets: Vec<&Tensor<T>> =
                batch.iter().map(|&(vi, c)| &videos[vi][c.target]).collect();
            let target = stack_frames(&targets)?;

            let mut g = Graph::new();
            let (pred, pvars) = model.forward(&mut g, &inputs, true)?;
            let tvar = g.constant(target)?;
            let loss = loss_l2(&mut g, pred, tvar, cfg.loss_mean)?;
            let lval = g.value(loss).data()[0].into64();
            if !lval.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss diverged at epoch {epoch} step {} (lr {lr:.3e})",
                    adam.step + 1
                )));
            }
            g.backward(loss)?;
            let grads: Vec<Tensor<T>> = pvars
                .iter()
                .zip(&model.params)
                .map(|(&v, p)| {
                    g.grad(v).cloned().ok_or_else(|| {
                        Error::Graph(format!("parameter {} received no gradient", p.name))
                    })
                })
                .collect::<Result<_>>()?;
            adam.step(&mut model.params, &grads, lr, cfg)?;
            loss_sum += lval;
            steps_this_epoch += 1;
        }

        let log = EpochLog {
            epoch,
            lr,
            mean_loss: loss_sum / steps_this_epoch as f64,
            steps: steps_this_epoch,
        };
        history.push(log.mean_loss);
        on_epoch(&log);
    }

    Ok(Checkpoint {
        desc: model.describe(),
        train: cfg.clone(),
        epoch: end_epoch,
        step: adam.step,
        loss_history: history,
        params: model.params.clone(),
        adam_m: model
            .params
            .iter()
            .zip(&adam.m)
            .map(|(p, m)| NamedParam { name: p.name.clone(), value: m.clone() })
            .collect(),
        adam_v: model
            .params
            .iter()
            .zip(&adam.v)
            .map(|(p, v)| NamedParam { name: p.name.clone(), value: v.clone() })
            .collect(),
    })
}

const CKPT_MAGIC: &[u8; 4] = b"CPNT";
const CKPT_VERSION: u32 = 1;

fn config_block<T: Element>(c: &Checkpoint<T>) -> String {
    let d = &c.desc;
    let t = &c.train;
    format!(
        "variant={}\nin_channels={}\nn_frames={}\nbase_channels={}\ndepth={}\n\
         out_channels={}\ninput_h={}\ninput_w={}\nshift_enabled={}\nshift_fraction={}\n\
         lr0={}\nbeta1={}\nbeta2={}\nadam_eps={}\nbatch={}\nepochs={}\nseed={}\n\
         precision={}\nloss_mean={}\n",
        d.variant.name(),
        d.cfg.in_channels_per_frame,
        d.cfg.n_frames,
        d.cfg.base_channels,
        d.cfg.depth,
        d.cfg.out_channels,
        d.cfg.input_h,
        d.cfg.input_w,
        d.shift_enabled as u8,
        d.shift_fraction,
        t.lr0,
        t.beta1,
        t.beta2,
        t.adam_eps,
        t.batch,
        t.epochs,
        t.seed,
        t.precision.name(),
        t.loss_mean as u8,
    )
}

fn parse_config_block(text: &str) -> Result<(ModelDesc, TrainConfig)> {
    let mut map = std::collections::BTreeMap::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("malformed config line {line:?}")))?;
        map.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| -> Result<&String> {
        map.get(k).ok_or_else(|| Error::Checkpoint(format!("config block missing key {k}")))
    };
    fn num<N: std::str::FromStr>(v: &str, k: &str) -> Result<N> {
        v.parse().map_err(|_| Error::Checkpoint(format!("bad value {v:?} for {k}")))
    }

    let frac = get("shift_fraction")?;
    let (fnum, fden) = frac
        .split_once('/')
        .ok_or_else(|| Error::Checkpoint(format!("bad shift_fraction {frac:?}")))?;
    let desc = ModelDesc {
        variant: Variant::parse(get("variant")?)?,
        cfg: crate::models::UNetConfig {
            in_channels_per_frame: num(get("in_channels")?, "in_channels")?,
            n_frames: num(get("n_frames")?, "n_frames")?,
            base_channels: num(get("base_channels")?, "base_channels")?,
            depth: num(get("depth")?, "depth")?,
            out_channels: num(get("out_channels")?, "out_channels")?,
            input_h: num(get("input_h")?, "input_h")?,
            input_w: num(get("input_w")?, "input_w")?,
        },
        shift_enabled: get("shift_enabled")? == "1",
        shift_fraction: crate::models::Fraction::new(
            num(fnum, "shift_fraction")?,
            num(fden, "shift_fraction")?,
        )?,
    };
    let train = TrainConfig {
        lr0: num(get("lr0")?, "lr0")?,
        beta1: num(get("beta1")?, "beta1")?,
        beta2: num(get("beta2")?, "beta2")?,
        adam_eps: num(get("adam_eps")?, "adam_eps")?,
        batch: num(get("batch")?, "batch")?,
        epochs: num(get("epochs")?, "epochs")?,
        seed: num(get("seed")?, "seed")?,
        precision: Precision::parse(get("precision")?)?,
        loss_mean: get("loss_mean")? == "1",
    };
    Ok((desc, train))
}

pub fn save_checkpoint<T: Element>(path: &Path, c: &Checkpoint<T>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    w.write_all(&[match T::DTYPE {
        Dtype::F32 => 0u8,
        Dtype::F64 => 1u8,
    }])?;
    let cfg = config_block(c);
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(cfg.as_bytes())?;
    w.write_all(&(c.epoch as u64).to_le_bytes())?;
    w.write_all(&c.step.to_le_bytes())?;
    w.write_all(&(c.loss_history.len() as u32).to_le_bytes())?;
    for l in &c.loss_history {
        w.write_all(&l.to_le_bytes())?;
    }
    for section in [&c.params, &c.adam_m, &c.adam_v] {
        w.write_all(&(section.len() as u32).to_le_bytes())?;
        for p in section.iter() {
            write_tensor(&mut w, &p.name, &p.value)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads just enough of a checkpoint to learn which dtype it stores, so a
/// caller can pick the right `load_checkpoint::<T>` instantiation.
pub fn checkpoint_dtype(path: &Path) -> Result<Dtype> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut head = [0u8; 9];
    r.read_exact(&mut head)?;
    if &head[..4] != CKPT_MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    match head[8] {
        0 => Ok(Dtype::F32),
        1 => Ok(Dtype::F64),
        other => Err(Error::Checkpoint(format!("unknown dtype tag {other}"))),
    }
}

pub fn load_checkpoint<T: Element>(path: &Path) -> Result<Checkpoint<T>> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b)?;
    let version = u32::from_le_bytes(u32b);
    if version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let mut dt = [0u8; 1];
    r.read_exact(&mut dt)?;
    let dtype = match dt[0] {
        0 => Dtype::F32,
        1 => Dtype::F64,
        other => return Err(Error::Checkpoint(format!("unknown dtype tag {other}"))),
    };
    if dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint stores {} values, expected {}",
            dtype.name(),
            T::DTYPE.name()
        )));
    }
    r.read_exact(&mut u32b)?;
    let mut cfg_bytes = vec![0u8; u32::from_le_bytes(u32b) as usize];
    r.read_exact(&mut cfg_bytes)?;
    let cfg_text = String::from_utf8(cfg_bytes)
        .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
    let (desc, train) = parse_config_block(&cfg_text)?;

    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b)?;
    let epoch = u64::from_le_bytes(u64b) as usize;
    r.read_exact(&mut u64b)?;
    let step = u64::from_le_bytes(u64b);
    r.read_exact(&mut u32b)?;
    let n_losses = u32::from_le_bytes(u32b) as usize;
    let mut loss_history = Vec::with_capacity(n_losses);
    for _ in 0..n_losses {
        r.read_exact(&mut u64b)?;
        loss_history.push(f64::from_le_bytes(u64b));
    }

    let mut sections: Vec<Vec<NamedParam<T>>> = Vec::with_capacity(3);
    for _ in 0..3 {
        r.read_exact(&mut u32b)?;
        let n = u32::from_le_bytes(u32b) as usize;
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let (name, value) = read_tensor(&mut r)?;
            v.push(NamedParam { name, value });
        }
        sections.push(v);
    }
    let adam_v = sections.pop().unwrap();
    let adam_m = sections.pop().unwrap();
    let params = sections.pop().unwrap();
    if adam_m.len() != params.len() || adam_v.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} params but {}/{} moment tensors",
            params.len(),
            adam_m.len(),
            adam_v.len()
        )));
    }
    Ok(Checkpoint { desc, train, epoch, step, loss_history, params, adam_m, adam_v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_cpnet, CPNetConfig, UNetConfig};
    use crate::tensor::gradcheck::gradcheck;
    use rand::Rng;

    fn tiny_model(seed: u64) -> ModelGraph<f64> {
        let cfg = UNetConfig { base_channels: 8, depth: 2, input_h: 16, input_w: 16, ..UNetConfig::default() };
        build_cpnet(&CPNetConfig::full_split(cfg), seed).unwrap()
    }

    fn rand_video(frames: usize, seed: u64) -> Vec<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..frames)
            .map(|_| Tensor::from_fn(&[3, 16, 16], |_| rng.gen_range(-0.9..0.9)))
            .collect()
    }

    fn f64_cfg(epochs: usize, batch: usize, seed: u64) -> TrainConfig {
        TrainConfig { epochs, batch, seed, precision: Precision::F64, ..TrainConfig::default() }
    }

    #[test]
    fn clip_windows_slide_by_one() {
        let c = make_clips(5, 4);
        assert_eq!(c, vec![ClipRef { start: 0, target: 4 }]);
        assert_eq!(make_clips(10, 4).len(), 6);
        assert_eq!(make_clips(10, 4)[5], ClipRef { start: 5, target: 9 });
        assert!(make_clips(4, 4).is_empty());
        assert!(make_clips(0, 4).is_empty());
    }

    #[test]
    fn l2_loss_values_and_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::full(&[300], 0.6), false).unwrap();
        let b = g.constant(Tensor::full(&[300], 0.5)).unwrap();
        let s = loss_l2(&mut g, a, b, false).unwrap();
        assert!((g.value(s).data()[0] - 3.0).abs() < 1e-12);
        let m = loss_l2(&mut g, a, b, true).unwrap();
        assert!((g.value(m).data()[0] - 0.01).abs() < 1e-14);

        let same = g.constant(Tensor::full(&[300], 0.5)).unwrap();
        let z = loss_l2(&mut g, b, same, false).unwrap();
        assert_eq!(g.value(z).data()[0], 0.0);

        // d/dpred sum((pred-target)^2) = 2(pred-target)
        let target = Tensor::from_fn(&[6], |i| i as f64 / 10.0);
        let t2 = target.clone();
        let rep = gradcheck(
            move |g, x| {
                let t = g.constant(t2.clone())?;
                loss_l2(g, x, t, false)
            },
            &Tensor::from_fn(&[6], |i| 0.3 - i as f64 / 7.0),
            1e-5,
            1e-8,
            None,
        )
        .unwrap();
        assert!(rep.pass);

        let mut g2 = Graph::<f64>::new();
        let a = g2.leaf(Tensor::zeros(&[2]), false).unwrap();
        let c = g2.leaf(Tensor::zeros(&[3]), false).unwrap();
        assert!(loss_l2(&mut g2, a, c, false).is_err());
    }

    #[test]
    fn cosine_schedule_endpoints_and_monotonicity() {
        let cfg = TrainConfig { epochs: 60, ..TrainConfig::default() };
        assert_eq!(cosine_lr(0, &cfg).unwrap(), 2e-4);
        assert!((cosine_lr(30, &cfg).unwrap() - 1e-4).abs() < 1e-18);
        let tail = cosine_lr(59, &cfg).unwrap();
        assert!(tail > 0.0 && tail < 0.01 * cfg.lr0);
        assert!(cosine_lr(60, &cfg).is_err());
        let mut prev = f64::INFINITY;
        for e in 0..60 {
            let lr = cosine_lr(e, &cfg).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn adam_matches_scalar_reference_rollout() {
        // independent recurrence in plain f64 scalars
        let cfg = TrainConfig::default();
        let (b1, b2, eps, lr) = (cfg.beta1, cfg.beta2, cfg.adam_eps, 1e-3);
        let grads = [0.4, -0.2, 0.9, 0.05, -0.6];
        let mut rp = 1.5;
        let (mut rm, mut rv) = (0.0, 0.0);
        for (t, g) in grads.iter().enumerate() {
            rm = b1 * rm + (1.0 - b1) * g;
            rv = b2 * rv + (1.0 - b2) * g * g;
            let mhat = rm / (1.0 - b1.powi(t as i32 + 1));
            let vhat = rv / (1.0 - b2.powi(t as i32 + 1));
            rp -= lr * mhat / (vhat.sqrt() + eps);
        }

        let mut params = vec![NamedParam { name: "p".into(), value: Tensor::scalar(1.5f64) }];
        let mut adam = AdamState::new(&params);
        for g in grads {
            adam.step(&mut params, &[Tensor::scalar(g)], lr, &cfg).unwrap();
        }
        assert!((params[0].value.data()[0] - rp).abs() < 1e-12);
        assert_eq!(adam.step, 5);
    }

    #[test]
    fn first_adam_step_has_learning_rate_magnitude() {
        let cfg = TrainConfig::default();
        let lr = 1e-3;
        let mut params = vec![NamedParam { name: "p".into(), value: Tensor::scalar(0.0f64) }];
        let mut adam = AdamState::new(&params);
        adam.step(&mut params, &[Tensor::scalar(0.5)], lr, &cfg).unwrap();
        let delta = params[0].value.data()[0].abs();
        assert!((delta - lr).abs() < 1e-6 * lr, "delta {delta}");
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let cfg = TrainConfig::default();
        let mut params = vec![NamedParam { name: "p".into(), value: Tensor::full(&[4], 2.0f64) }];
        let before = params[0].value.clone();
        let mut adam = AdamState::new(&params);
        adam.step(&mut params, &[Tensor::zeros(&[4])], 1e-3, &cfg).unwrap();
        assert_eq!(params[0].value, before);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let cfg = TrainConfig::default();
        let mut params = vec![NamedParam { name: "w".into(), value: Tensor::scalar(1.0f64) }];
        let mut adam = AdamState::new(&params);
        let err = adam.step(&mut params, &[Tensor::scalar(f64::NAN)], 1e-3, &cfg).unwrap_err();
        assert!(err.to_string().contains("not finite"));
        // state untouched by the failed step
        assert_eq!(adam.step, 0);
        assert_eq!(params[0].value.data()[0], 1.0);
    }

    #[test]
    fn eight_clips_batch_four_is_two_steps_per_epoch() {
        let mut model = tiny_model(1);
        let video = rand_video(12, 2); // 12 frames -> 8 clips
        let mut logs = Vec::new();
        let ckpt = train(&mut model, &[video], &f64_cfg(1, 4, 3), None, |l| logs.push(l.clone()))
            .unwrap();
        assert_eq!(logs.len(), 1);
        assert_eq!(logs[0].steps, 2);
        assert_eq!(ckpt.step, 2);
        assert_eq!(ckpt.epoch, 1);
        assert_eq!(ckpt.loss_history.len(), 1);
    }

    #[test]
    fn same_seed_gives_bit_identical_training() {
        let videos = vec![rand_video(10, 4), rand_video(9, 5)];
        let run = || {
            let mut model = tiny_model(7);
            let ckpt = train(&mut model, &videos, &f64_cfg(2, 3, 11), None, |_| {}).unwrap();
            (ckpt.loss_history.clone(), ckpt.params)
        };
        let (h1, p1) = run();
        let (h2, p2) = run();
        assert_eq!(h1, h2);
        for (a, b) in p1.iter().zip(&p2) {
            assert_eq!(a.value, b.value, "{}", a.name);
        }
    }

    #[test]
    fn zero_residual_clips_do_not_perturb_the_update() {
        // Batching a clip whose target equals the model's own prediction
        // must leave the shared update bit-identical: its residual is zero,
        // so its gradient contribution is exactly zero.
        let model0 = tiny_model(13);
        let real = rand_video(5, 14); // exactly one clip
        let clip: Vec<Tensor<f64>> = real[0..4].to_vec();
        let clip_batched: Vec<Tensor<f64>> =
            clip.iter().map(|f| stack_frames(&[f]).unwrap()).collect();
        let pred = model0.forward_predict(&clip_batched).unwrap();
        // self-predicted video: same inputs, target = model output
        let mut ghost = clip.clone();
        ghost.push(Tensor::new(vec![3, 16, 16], pred.data().to_vec()).unwrap());

        let cfg = f64_cfg(1, 2, 15);
        let mut solo = model0.clone();
        train(&mut solo, &[real.clone()], &cfg, None, |_| {}).unwrap();
        let mut paired = model0.clone();
        train(&mut paired, &[real, ghost], &cfg, None, |_| {}).unwrap();
        for (a, b) in solo.params.iter().zip(&paired.params) {
            assert_eq!(a.value, b.value, "{}", a.name);
        }
    }

    #[test]
    fn loss_decreases_on_a_static_scene() {
        // constant video: the model should quickly learn to reproduce it
        let frame = Tensor::from_fn(&[3, 16, 16], |i| ((i % 7) as f64 - 3.0) / 5.0);
        let video: Vec<Tensor<f64>> = (0..10).map(|_| frame.clone()).collect();
        let mut model = tiny_model(17);
        let cfg = TrainConfig { lr0: 5e-3, ..f64_cfg(6, 2, 18) };
        let ckpt = train(&mut model, &[video], &cfg, None, |_| {}).unwrap();
        let h = &ckpt.loss_history;
        assert!(h[5] < 0.5 * h[0], "loss history {h:?}");
    }

    #[test]
    fn checkpoint_round_trips_and_validates_dtype() {
        let mut model = tiny_model(19);
        let videos = vec![rand_video(8, 20)];
        let cfg = f64_cfg(2, 2, 21);
        let ckpt = train(&mut model, &videos, &cfg, None, |_| {}).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &ckpt).unwrap();
        let back: Checkpoint<f64> = load_checkpoint(&path).unwrap();
        assert_eq!(back.desc, ckpt.desc);
        assert_eq!(back.train, cfg);
        assert_eq!(back.epoch, 2);
        assert_eq!(back.step, ckpt.step);
        assert_eq!(back.loss_history, ckpt.loss_history);
        for (a, b) in back.params.iter().zip(&ckpt.params) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
        for (a, b) in back.adam_v.iter().zip(&ckpt.adam_v) {
            assert_eq!(a.value, b.value);
        }

        let err = load_checkpoint::<f32>(&path).unwrap_err();
        assert!(err.to_string().contains("f64"), "{err}");

        std::fs::write(dir.path().join("junk.ckpt"), b"PNTC").unwrap();
        assert!(load_checkpoint::<f64>(&dir.path().join("junk.ckpt")).is_err());
    }

    #[test]
    fn resumed_training_is_bit_identical_to_uninterrupted() {
        let videos = vec![rand_video(10, 22), rand_video(8, 23)];
        let cfg = f64_cfg(4, 3, 24);

        let mut straight = tiny_model(25);
        let full = train(&mut straight, &videos, &cfg, None, |_| {}).unwrap();

        // stop after 2 epochs, save, reload into a fresh model, continue
        let mut first = tiny_model(25);
        let half = train_until(&mut first, &videos, &cfg, None, 2, |_| {}).unwrap();
        assert_eq!(half.epoch, 2);
        assert_eq!(half.train.epochs, 4); // schedule length survives the stop
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.ckpt");
        save_checkpoint(&path, &half).unwrap();

        let loaded: Checkpoint<f64> = load_checkpoint(&path).unwrap();
        let mut second = crate::models::build_from_desc::<f64>(&loaded.desc, 999).unwrap();
        let resume = loaded.restore(&mut second).unwrap();
        assert_eq!(resume.start_epoch, 2);
        let resumed = train(&mut second, &videos, &cfg, Some(resume), |_| {}).unwrap();

        assert_eq!(resumed.loss_history, full.loss_history);
        for (a, b) in resumed.params.iter().zip(&full.params) {
            assert_eq!(a.value, b.value, "{}", a.name);
        }
        // the resumed second half never jumps: epoch-3 loss stays in the
        // regime the uninterrupted run established
        assert!((resumed.loss_history[2] - full.loss_history[2]).abs() == 0.0);
    }

    #[test]
    fn train_rejects_empty_dataset_and_bad_config() {
        let mut model = tiny_model(26);
        let short = vec![rand_video(4, 27)]; // window+1 = 5 needed
        assert!(train(&mut model, &short, &f64_cfg(1, 2, 0), None, |_| {}).is_err());
        let bad = TrainConfig { lr0: 0.0, ..TrainConfig::default() };
        assert!(train(&mut model, &[rand_video(6, 28)], &bad, None, |_| {}).is_err());
    }
}
