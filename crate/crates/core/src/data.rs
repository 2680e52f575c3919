//! Deterministic synthetic video: soft-edged sprites moving at constant
//! velocity with border reflection, plus four injectable anomaly kinds
//! (speed burst, direction reversal, intruder, teleport). Also reads frame
//! directories of PNG images with optional sidecar labels, so real footage
//! can stand in for the generator.
//!
//! All randomness flows from per-video seeds; anomaly parameters draw from
//! a separate derived stream, which is why the pre-onset prefix of an
//! anomalous video is bit-identical to its normal twin.

use crate::error::{Error, Result};
use crate::mix_seed;
use crate::tensor::{Element, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

/// Salt for the anomaly parameter stream, kept apart from sprite placement.
const ANOMALY_SALT: u64 = 0xA11;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpriteKind {
    Square,
    Disc,
    /// Reserved for intruder anomalies: a shape normal videos never contain.
    Cross,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Background {
    Constant,
    /// Gentle horizontal luminance ramp.
    Gradient,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSpec {
    pub width: usize,
    pub height: usize,
    pub length: usize,
    pub n_sprites: usize,
    pub kinds: Vec<SpriteKind>,
    pub speed_min: f64,
    pub speed_max: f64,
    pub background: Background,
    pub seed: u64,
}

impl Default for VideoSpec {
    fn default() -> Self {
        VideoSpec {
            width: 64,
            height: 64,
            length: 150,
            n_sprites: 3,
            kinds: vec![SpriteKind::Square, SpriteKind::Disc],
            speed_min: 0.8,
            speed_max: 2.2,
            background: Background::Constant,
            seed: 0,
        }
    }
}

/// Largest radius a normal sprite can be dealt.
const SPRITE_R_MIN: f64 = 3.0;
const SPRITE_R_MAX: f64 = 6.5;
const INTRUDER_R: f64 = 11.0;

impl VideoSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(Error::Config(format!(
                "frame {}x{} too small: sprites need at least 32x32",
                self.width, self.height
            )));
        }
        if self.length == 0 {
            return Err(Error::Config("video length must be positive".into()));
        }
        if self.n_sprites > 0 && self.kinds.is_empty() {
            return Err(Error::Config("sprite kinds list is empty".into()));
        }
        if self.kinds.contains(&SpriteKind::Cross) {
            return Err(Error::Config(
                "the cross kind is reserved for intruder anomalies".into(),
            ));
        }
        if !(self.speed_min > 0.0 && self.speed_max >= self.speed_min) {
            return Err(Error::Config(format!(
                "speed range [{}, {}] must be positive and ordered",
                self.speed_min, self.speed_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnomalyKind {
    /// Velocities multiplied by `factor` inside the window (4 is the
    /// corpus default; ≥ 3 reads as clearly abnormal motion).
    SpeedBurst { factor: f64 },
    DirectionReversal,
    /// A large never-seen sprite kind crosses the scene.
    Intruder,
    /// Sprites jump to fresh random positions every frame of the window.
    Teleport,
}

impl AnomalyKind {
    pub fn name(&self) -> &'static str {
        match self {
            AnomalyKind::SpeedBurst { .. } => "speed_burst",
            AnomalyKind::DirectionReversal => "direction_reversal",
            AnomalyKind::Intruder => "intruder",
            AnomalyKind::Teleport => "teleport",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub onset: usize,
    pub duration: usize,
}

impl AnomalySpec {
    pub fn validate(&self, video_length: usize) -> Result<()> {
        if self.onset + self.duration > video_length {
            return Err(Error::Config(format!(
                "anomaly window [{}, {}) exceeds video length {}",
                self.onset,
                self.onset + self.duration,
                video_length
            )));
        }
        if let AnomalyKind::SpeedBurst { factor } = self.kind {
            if !(factor > 0.0 && factor.is_finite()) {
                return Err(Error::Config(format!("speed burst factor {factor} must be positive")));
            }
        }
        Ok(())
    }
}

/// A decoded or generated video: frames [3,H,W] in [-1,1] with per-frame
/// labels (0 normal, 1 abnormal) and a provenance note.
#[derive(Clone, Debug)]
pub struct FrameSequence<T: Element> {
    pub frames: Vec<Tensor<T>>,
    pub labels: Vec<u8>,
    pub provenance: String,
}

impl<T: Element> FrameSequence<T> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Clone, Debug)]
struct Sprite {
    kind: SpriteKind,
    radius: f64,
    color: [f64; 3],
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
}

struct Scene {
    w: usize,
    h: usize,
    background: Background,
    sprites: Vec<Sprite>,
}

fn fit_bounds(extent: usize, radius: f64) -> (f64, f64) {
    (radius + 1.5, (extent - 1) as f64 - radius - 1.5)
}

fn reflect(p: &mut f64, v: &mut f64, lo: f64, hi: f64) {
    // billiard bounce; the loop absorbs overshoot from bursts
    loop {
        if *p < lo {
            *p = 2.0 * lo - *p;
            *v = -*v;
        } else if *p > hi {
            *p = 2.0 * hi - *p;
            *v = -*v;
        } else {
            break;
        }
    }
}

fn random_sprite(rng: &mut ChaCha8Rng, spec: &VideoSpec) -> Sprite {
    let kind = spec.kinds[rng.gen_range(0..spec.kinds.len())];
    let radius = rng.gen_range(SPRITE_R_MIN..SPRITE_R_MAX);
    let color = [
        rng.gen_range(-0.1..1.0),
        rng.gen_range(-0.1..1.0),
        rng.gen_range(-0.1..1.0),
    ];
    let (xlo, xhi) = fit_bounds(spec.width, radius);
    let (ylo, yhi) = fit_bounds(spec.height, radius);
    let x = rng.gen_range(xlo..xhi);
    let y = rng.gen_range(ylo..yhi);
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let speed = rng.gen_range(spec.speed_min..=spec.speed_max);
    Sprite { kind, radius, color, x, y, vx: speed * theta.cos(), vy: speed * theta.sin() }
}

impl Scene {
    fn seeded(spec: &VideoSpec) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let sprites = (0..spec.n_sprites).map(|_| random_sprite(&mut rng, spec)).collect();
        Scene { w: spec.width, h: spec.height, background: spec.background, sprites }
    }

    fn advance(&mut self, factor: f64) {
        for s in &mut self.sprites {
            s.x += s.vx * factor;
            s.y += s.vy * factor;
            let (xlo, xhi) = fit_bounds(self.w, s.radius);
            let (ylo, yhi) = fit_bounds(self.h, s.radius);
            reflect(&mut s.x, &mut s.vx, xlo, xhi);
            reflect(&mut s.y, &mut s.vy, ylo, yhi);
        }
    }

    fn background_at(&self, x: usize) -> f64 {
        match self.background {
            Background::Constant => -0.65,
            Background::Gradient => -0.85 + 0.4 * x as f64 / (self.w - 1) as f64,
        }
    }

    fn render<T: Element>(&self) -> Tensor<T> {
        let (w, h) = (self.w, self.h);
        let mut px = vec![0.0f64; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                let b = self.background_at(x);
                for c in 0..3 {
                    px[c * h * w + y * w + x] = b;
                }
            }
        }
        // painter's order: later sprites draw over earlier ones
        for s in &self.sprites {
            let x0 = ((s.x - s.radius - 1.0).floor().max(0.0)) as usize;
            let x1 = ((s.x + s.radius + 1.0).ceil().min((w - 1) as f64)) as usize;
            let y0 = ((s.y - s.radius - 1.0).floor().max(0.0)) as usize;
            let y1 = ((s.y + s.radius + 1.0).ceil().min((h - 1) as f64)) as usize;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let dx = x as f64 - s.x;
                    let dy = y as f64 - s.y;
                    let d = match s.kind {
                        SpriteKind::Square => dx.abs().max(dy.abs()) - s.radius,
                        SpriteKind::Disc => (dx * dx + dy * dy).sqrt() - s.radius,
                        SpriteKind::Cross => {
                            let arm = s.radius / 3.0;
                            let horiz = (dx.abs() - s.radius).max(dy.abs() - arm);
                            let vert = (dx.abs() - arm).max(dy.abs() - s.radius);
                            horiz.min(vert)
                        }
                    };
                    // soft one-pixel edge falloff
                    let a = (0.5 - d).clamp(0.0, 1.0);
                    if a > 0.0 {
                        for c in 0..3 {
                            let i = c * h * w + y * w + x;
                            px[i] = a * s.color[c] + (1.0 - a) * px[i];
                        }
                    }
                }
            }
        }
        Tensor::new(vec![3, h, w], px.into_iter().map(T::from64).collect()).unwrap()
    }
}

pub fn generate_normal<T: Element>(spec: &VideoSpec) -> Result<FrameSequence<T>> {
    spec.validate()?;
    let mut scene = Scene::seeded(spec);
    let mut frames = Vec::with_capacity(spec.length);
    for _ in 0..spec.length {
        frames.push(scene.render());
        scene.advance(1.0);
    }
    Ok(FrameSequence {
        labels: vec![0; spec.length],
        frames,
        provenance: format!("synthetic seed {}", spec.seed),
    })
}

pub fn generate_anomalous<T: Element>(
    spec: &VideoSpec,
    anomaly: &AnomalySpec,
) -> Result<FrameSequence<T>> {
    spec.validate()?;
    anomaly.validate(spec.length)?;
    let mut scene = Scene::seeded(spec);
    let mut arng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, ANOMALY_SALT));
    let window = anomaly.onset..anomaly.onset + anomaly.duration;

    let mut frames = Vec::with_capacity(spec.length);
    let mut labels = vec![0u8; spec.length];
    for l in &mut labels[window.clone()] {
        *l = 1;
    }

    for t in 0..spec.length {
        frames.push(scene.render());
        // the step below produces frame t+1; it is anomalous when that
        // frame falls inside the window, keeping frames [0, onset)
        // untouched
        let next = t + 1;
        if next == window.start && !window.is_empty() {
            match anomaly.kind {
                AnomalyKind::DirectionReversal => {
                    for s in &mut scene.sprites {
                        s.vx = -s.vx;
                        s.vy = -s.vy;
                    }
                }
                AnomalyKind::Intruder => {
                    let intruder_spec = VideoSpec {
                        kinds: vec![SpriteKind::Cross],
                        speed_min: spec.speed_max,
                        speed_max: spec.speed_max * 1.5,
                        ..spec.clone()
                    };
                    let mut s = random_sprite(&mut arng, &intruder_spec);
                    s.radius = INTRUDER_R;
                    s.color = [1.0, 1.0, rng_bright(&mut arng)];
                    // re-place for the larger radius so it fits
                    let (xlo, xhi) = fit_bounds(spec.width, s.radius);
                    let (ylo, yhi) = fit_bounds(spec.height, s.radius);
                    s.x = arng.gen_range(xlo..xhi);
                    s.y = arng.gen_range(ylo..yhi);
                    scene.sprites.push(s);
                }
                _ => {}
            }
        }
        if next == window.end && !window.is_empty() {
            match anomaly.kind {
                AnomalyKind::DirectionReversal => {
                    for s in &mut scene.sprites {
                        s.vx = -s.vx;
                        s.vy = -s.vy;
                    }
                }
                AnomalyKind::Intruder => {
                    scene.sprites.pop();
                }
                _ => {}
            }
        }
        let in_window = window.contains(&next);
        match anomaly.kind {
            AnomalyKind::SpeedBurst { factor } if in_window => scene.advance(factor),
            AnomalyKind::Teleport if in_window => {
                for s in &mut scene.sprites {
                    let (xlo, xhi) = fit_bounds(scene.w, s.radius);
                    let (ylo, yhi) = fit_bounds(scene.h, s.radius);
                    s.x = arng.gen_range(xlo..xhi);
                    s.y = arng.gen_range(ylo..yhi);
                }
            }
            _ => scene.advance(1.0),
        }
    }
    Ok(FrameSequence {
        frames,
        labels,
        provenance: format!("synthetic seed {} anomaly {}", spec.seed, anomaly.kind.name()),
    })
}

fn rng_bright(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(0.4..1.0)
}

const LABEL_FILE: &str = "labels.txt";

/// Writes frames as 8-bit `frame_NNNNNN.png` files, plus a `labels.txt`
/// sidecar (one 0/1 per line) when requested.
pub fn write_frames<T: Element>(
    dir: &Path,
    seq: &FrameSequence<T>,
    with_labels: bool,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (t, f) in seq.frames.iter().enumerate() {
        let d = f.dims();
        if d.len() != 3 || d[0] != 3 {
            return Err(Error::Shape(format!("frame {t} has dims {d:?}, expected [3,H,W]")));
        }
        let (h, w) = (d[1], d[2]);
        let mut img = image::RgbImage::new(w as u32, h as u32);
        let data = f.data();
        for y in 0..h {
            for x in 0..w {
                let mut rgb = [0u8; 3];
                for (c, v) in rgb.iter_mut().enumerate() {
                    let f64v = data[c * h * w + y * w + x].into64();
                    *v = (((f64v + 1.0) / 2.0) * 255.0).round().clamp(0.0, 255.0) as u8;
                }
                img.put_pixel(x as u32, y as u32, image::Rgb(rgb));
            }
        }
        img.save(dir.join(format!("frame_{t:06}.png")))?;
    }
    if with_labels {
        let mut out = String::new();
        for l in &seq.labels {
            out.push_str(&format!("{l}\n"));
        }
        std::fs::write(dir.join(LABEL_FILE), out)?;
    }
    Ok(())
}

/// Loads a directory of PNG frames in lexicographic filename order,
/// bilinearly resized to `(height, width)` and mapped to [-1,1]. Labels
/// come from `labels.txt` when present, else all zero.
pub fn load_frame_dir<T: Element>(
    dir: &Path,
    height: usize,
    width: usize,
) -> Result<FrameSequence<T>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no frames in {}", dir.display())));
    }

    let mut frames = Vec::with_capacity(files.len());
    for path in &files {
        let img = image::open(path)?.into_rgb8();
        let img = if (img.width(), img.height()) == (width as u32, height as u32) {
            img
        } else {
            image::imageops::resize(
                &img,
                width as u32,
                height as u32,
                image::imageops::FilterType::Triangle,
            )
        };
        let mut t = Tensor::<T>::zeros(&[3, height, width]);
        {
            let data = t.data_mut();
            for (x, y, p) in img.enumerate_pixels() {
                for c in 0..3 {
                    data[c * height * width + y as usize * width + x as usize] =
                        T::from64(p.0[c] as f64 / 255.0 * 2.0 - 1.0);
                }
            }
        }
        frames.push(t);
    }

    let label_path = dir.join(LABEL_FILE);
    let labels = if label_path.exists() {
        let text = std::fs::read_to_string(&label_path)?;
        let parsed: Vec<u8> = text
            .lines()
            .map(|l| match l.trim() {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(Error::Data(format!(
                    "bad label {other:?} in {}",
                    label_path.display()
                ))),
            })
            .collect::<Result<_>>()?;
        if parsed.len() != frames.len() {
            return Err(Error::Data(format!(
                "{} labels for {} frames in {}",
                parsed.len(),
                frames.len(),
                dir.display()
            )));
        }
        parsed
    } else {
        vec![0; frames.len()]
    };

    Ok(FrameSequence { frames, labels, provenance: dir.display().to_string() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

impl Role {
    pub fn name(&self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "test" => Ok(Role::Test),
            other => Err(Error::Data(format!("unknown role {other:?} in manifest"))),
        }
    }
}

/// One corpus video: directory and label file are relative to the manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub role: Role,
    pub dir: String,
    pub labels: Option<String>,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# video corpus manifest v1: role<TAB>dir<TAB>labels-or-dash")?;
    for e in entries {
        writeln!(f, "{}\t{}\t{}", e.role.name(), e.dir, e.labels.as_deref().unwrap_or("-"))?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for line in text.lines() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(Error::Data(format!("malformed manifest line {line:?}")));
        }
        entries.push(ManifestEntry {
            role: Role::parse(parts[0])?,
            dir: parts[1].to_string(),
            labels: match parts[2] {
                "-" => None,
                p => Some(p.to_string()),
            },
        });
    }
    if entries.is_empty() {
        return Err(Error::Data(format!("manifest {} lists no videos", path.display())));
    }
    Ok(entries)
}

/// Desk-scale corpus shape: normal training videos plus test videos that
/// each carry one anomaly window.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub width: usize,
    pub height: usize,
    pub train_videos: usize,
    pub train_length: usize,
    pub test_videos: usize,
    pub test_length: usize,
    pub n_sprites: usize,
    pub speed_min: f64,
    pub speed_max: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            width: 64,
            height: 64,
            train_videos: 16,
            train_length: 150,
            test_videos: 8,
            test_length: 100,
            n_sprites: 3,
            speed_min: 0.8,
            speed_max: 2.2,
            seed: 7,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_videos == 0 || self.test_videos == 0 {
            return Err(Error::Config("corpus needs at least one video per role".into()));
        }
        if self.test_length < 20 {
            return Err(Error::Config(format!(
                "test videos of {} frames leave no room for an anomaly window",
                self.test_length
            )));
        }
        self.video_spec(0).validate()
    }

    fn video_spec(&self, seed: u64) -> VideoSpec {
        VideoSpec {
            width: self.width,
            height: self.height,
            length: self.train_length,
            n_sprites: self.n_sprites,
            kinds: vec![SpriteKind::Square, SpriteKind::Disc],
            speed_min: self.speed_min,
            speed_max: self.speed_max,
            background: Background::Constant,
            seed,
        }
    }
}

/// The deterministic plan behind [`generate_corpus`]: per-video specs with
/// seeds derived from the corpus seed, and one anomaly per test video
/// cycling through all four kinds.
pub fn corpus_plan(cfg: &CorpusConfig) -> Result<(Vec<VideoSpec>, Vec<(VideoSpec, AnomalySpec)>)> {
    cfg.validate()?;
    let train = (0..cfg.train_videos)
        .map(|i| cfg.video_spec(mix_seed(cfg.seed, i as u64)))
        .collect();

    let kinds = [
        AnomalyKind::SpeedBurst { factor: 4.0 },
        AnomalyKind::DirectionReversal,
        AnomalyKind::Intruder,
        AnomalyKind::Teleport,
    ];
    let mut test = Vec::with_capacity(cfg.test_videos);
    for i in 0..cfg.test_videos {
        let mut spec = cfg.video_spec(mix_seed(cfg.seed, 1000 + i as u64));
        spec.length = cfg.test_length;
        let mut wrng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 2000 + i as u64));
        let len = cfg.test_length as f64;
        let onset = wrng.gen_range((0.3 * len) as usize..=(0.5 * len) as usize);
        let duration = wrng.gen_range((0.2 * len) as usize..=(0.3 * len) as usize);
        let anomaly = AnomalySpec { kind: kinds[i % kinds.len()], onset, duration };
        anomaly.validate(spec.length)?;
        test.push((spec, anomaly));
    }
    Ok((train, test))
}

/// Renders the corpus under `dir` as `train/video_NN` and `test/video_NN`
/// PNG directories with a manifest at `dir/manifest.txt`, and returns the
/// manifest entries. Rerunning with the same config reproduces every byte.
pub fn generate_corpus(dir: &Path, cfg: &CorpusConfig) -> Result<Vec<ManifestEntry>> {
    let (train, test) = corpus_plan(cfg)?;
    let mut entries = Vec::new();
    for (i, spec) in train.iter().enumerate() {
        let rel = format!("train/video_{i:02}");
        let seq = generate_normal::<f64>(spec)?;
        write_frames(&dir.join(&rel), &seq, false)?;
        entries.push(ManifestEntry { role: Role::Train, dir: rel, labels: None });
    }
    for (i, (spec, anomaly)) in test.iter().enumerate() {
        let rel = format!("test/video_{i:02}");
        let seq = generate_anomalous::<f64>(spec, anomaly)?;
        write_frames(&dir.join(&rel), &seq, true)?;
        entries.push(ManifestEntry {
            role: Role::Test,
            dir: rel.clone(),
            labels: Some(format!("{rel}/{LABEL_FILE}")),
        });
    }
    write_manifest(&dir.join("manifest.txt"), &entries)?;
    Ok(entries)
}
