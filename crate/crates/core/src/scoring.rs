//! Frame-level evaluation: prediction-error PSNR, per-video min-max score
//! normalization, threshold decisions, normal/abnormal margin statistics,
//! and ROC/AUC over all scored frames.
//!
//! PSNR accumulates in f64 regardless of the model precision, and every
//! derived quantity here is f64, so evaluation output is identical for f32
//! and f64 checkpoints of the same weights.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Results are clamped to ±this many dB; exact-zero error reports the cap.
pub const PSNR_CAP_DB: f64 = 300.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsnrMode {
    /// 10·log10(peak²/MSE), peak 1.0 on the rescaled [0,1] range.
    Standard,
    /// 10·log10(max(prediction)/SSE): the frame max over the plain squared
    /// error sum, which makes the value resolution-dependent.
    Literal,
}

impl PsnrMode {
    pub fn name(&self) -> &'static str {
        match self {
            PsnrMode::Standard => "standard",
            PsnrMode::Literal => "literal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(PsnrMode::Standard),
            "literal" => Ok(PsnrMode::Literal),
            other => Err(Error::Config(format!("unknown psnr mode {other:?}"))),
        }
    }
}

/// PSNR in dB between a predicted frame and its ground truth, both in model
/// range [-1,1] and rescaled to [0,1] before measuring.
pub fn psnr<T: Element>(pred: &Tensor<T>, gt: &Tensor<T>, mode: PsnrMode) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(Error::Shape(format!(
            "psnr dims mismatch: {:?} vs {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    if pred.numel() == 0 {
        return Err(Error::Shape("psnr of an empty tensor".into()));
    }
    let mut sse = 0.0f64;
    let mut maxv = f64::NEG_INFINITY;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let p = (p.into64() + 1.0) / 2.0;
        let g = (g.into64() + 1.0) / 2.0;
        let d = p - g;
        sse += d * d;
        maxv = maxv.max(p);
    }
    if sse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    let db = match mode {
        PsnrMode::Standard => {
            let mse = sse / pred.numel() as f64;
            10.0 * (1.0 / mse).log10()
        }
        // maxv can reach 0.0 for an all-black prediction; the clamp below
        // turns the resulting -inf into the floor instead of poisoning
        // downstream normalization.
        PsnrMode::Literal => 10.0 * (maxv / sse).log10(),
    };
    Ok(db.clamp(-PSNR_CAP_DB, PSNR_CAP_DB))
}

/// Per-video min-max normalization of a PSNR series to scores in [0,1].
/// A constant series (single frame included) maps to all 0.5.
pub fn normalize_scores(psnr_db: &[f64]) -> Result<Vec<f64>> {
    if psnr_db.is_empty() {
        return Err(Error::Data("cannot normalize an empty score series".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &p in psnr_db {
        if !p.is_finite() {
            return Err(Error::NonFinite(format!("psnr value {p} in series")));
        }
        lo = lo.min(p);
        hi = hi.max(p);
    }
    if lo == hi {
        return Ok(vec![0.5; psnr_db.len()]);
    }
    Ok(psnr_db.iter().map(|&p| (p - lo) / (hi - lo)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Polarity {
    /// Low score ⇒ abnormal (low PSNR means the model failed to predict).
    #[default]
    LowScoreAbnormal,
    /// The alternate reading with the inequality reversed.
    HighScoreAbnormal,
}

impl Polarity {
    pub fn name(&self) -> &'static str {
        match self {
            Polarity::LowScoreAbnormal => "low-score-abnormal",
            Polarity::HighScoreAbnormal => "high-score-abnormal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "low-score-abnormal" => Ok(Polarity::LowScoreAbnormal),
            "high-score-abnormal" => Ok(Polarity::HighScoreAbnormal),
            other => Err(Error::Config(format!("unknown polarity {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecisionConfig {
    pub gamma: f64,
    pub polarity: Polarity,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        DecisionConfig { gamma: 0.5, polarity: Polarity::LowScoreAbnormal }
    }
}

impl DecisionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "gamma {} must lie strictly inside (0, 1)",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Thresholds a normalized score into 0 (normal) / 1 (abnormal). Both
/// polarities use a strict inequality, so a score equal to gamma is normal.
pub fn decide(score: f64, cfg: &DecisionConfig) -> u8 {
    let abnormal = match cfg.polarity {
        Polarity::LowScoreAbnormal => score < cfg.gamma,
        Polarity::HighScoreAbnormal => score > cfg.gamma,
    };
    abnormal as u8
}

/// Scored frames of one video. Frames before `first_frame` have no
/// prediction and are excluded; entry `i` describes frame `first_frame + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSeries {
    pub video_id: String,
    pub first_frame: usize,
    pub psnr_db: Vec<f64>,
    pub score: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoreSeries {
    /// Builds a series from raw per-frame PSNR and the matching labels,
    /// normalizing scores within this video.
    pub fn new(
        video_id: impl Into<String>,
        first_frame: usize,
        psnr_db: Vec<f64>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        if psnr_db.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} psnr values but {} labels",
                psnr_db.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Data(format!("label {l} is not 0 or 1")));
        }
        let score = normalize_scores(&psnr_db)?;
        Ok(ScoreSeries { video_id: video_id.into(), first_frame, psnr_db, score, labels })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocResult {
    pub auc: f64,
    pub curve: Vec<RocPoint>,
}

/// Frame-level ROC over anomaly scores (higher = more anomalous). The AUC
/// is the tie-aware Mann–Whitney statistic P(abnormal > normal) + ½P(tie);
/// the returned curve, swept over every distinct score, integrates to the
/// same value by trapezoid.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data(format!(
            "roc needs both classes, got {n_pos} abnormal and {n_neg} normal frames"
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {s} in roc input")));
    }

    // tie-averaged ranks
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j averaged across the tie group
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            if labels[k] == 1 {
                rank_sum_pos += avg;
            }
        }
        i = j;
    }
    let auc = (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64);

    // threshold sweep, one point per distinct score, descending
    let mut curve = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = order.len();
    while i > 0 {
        let mut j = i;
        while j > 0 && scores[order[j - 1]] == scores[order[i - 1]] {
            match labels[order[j - 1]] {
                1 => tp += 1,
                _ => fp += 1,
            }
            j -= 1;
        }
        curve.push(RocPoint {
            threshold: scores[order[i - 1]],
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
        i = j;
    }

    let mut trapezoid = 0.0;
    for w in curve.windows(2) {
        trapezoid += (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0;
    }
    debug_assert!(
        (trapezoid - auc).abs() <= 1e-12,
        "curve integral {trapezoid} disagrees with rank statistic {auc}"
    );

    Ok(RocResult { auc, curve })
}

/// Concatenates per-video series (in the order given) into one flat list of
/// anomaly scores 1−S with labels, ready for [`roc_auc`].
pub fn anomaly_scores(series: &[ScoreSeries]) -> (Vec<f64>, Vec<u8>) {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for s in series {
        scores.extend(s.score.iter().map(|&v| 1.0 - v));
        labels.extend_from_slice(&s.labels);
    }
    (scores, labels)
}

/// Frame-level AUC across all videos, sorted by video id for a stable
/// concatenation order.
pub fn eval_auc(series: &[ScoreSeries]) -> Result<RocResult> {
    let mut sorted: Vec<&ScoreSeries> = series.iter().collect();
    sorted.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let owned: Vec<ScoreSeries> = sorted.into_iter().cloned().collect();
    let (scores, labels) = anomaly_scores(&owned);
    roc_auc(&scores, &labels)
}

/// Class-conditional means of PSNR and score, with normal-minus-abnormal
/// margins.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginReport {
    pub psnr_normal: f64,
    pub psnr_abnormal: f64,
    pub score_normal: f64,
    pub score_abnormal: f64,
    pub psnr_margin: f64,
    pub score_margin: f64,
    pub n_normal: usize,
    pub n_abnormal: usize,
}

pub fn margin_report(series: &[ScoreSeries]) -> Result<MarginReport> {
    let (mut pn, mut pa, mut sn, mut sa) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut nn, mut na) = (0usize, 0usize);
    for s in series {
        for i in 0..s.labels.len() {
            if s.labels[i] == 1 {
                pa += s.psnr_db[i];
                sa += s.score[i];
                na += 1;
            } else {
                pn += s.psnr_db[i];
                sn += s.score[i];
                nn += 1;
            }
        }
    }
    if nn == 0 || na == 0 {
        return Err(Error::Data(format!(
            "margin needs both classes, got {na} abnormal and {nn} normal frames"
        )));
    }
    let (pn, pa) = (pn / nn as f64, pa / na as f64);
    let (sn, sa) = (sn / nn as f64, sa / na as f64);
    Ok(MarginReport {
        psnr_normal: pn,
        psnr_abnormal: pa,
        score_normal: sn,
        score_abnormal: sa,
        psnr_margin: pn - pa,
        score_margin: sn - sa,
        n_normal: nn,
        n_abnormal: na,
    })
}

/// Per-frame CSV: `video_id,frame_index,psnr_db,score,label,decision`.
pub fn render_scores_csv(series: &[ScoreSeries], cfg: &DecisionConfig) -> String {
    let mut out = String::from("video_id,frame_index,psnr_db,score,label,decision\n");
    for s in series {
        for i in 0..s.psnr_db.len() {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{},{}\n",
                s.video_id,
                s.first_frame + i,
                s.psnr_db[i],
                s.score[i],
                s.labels[i],
                decide(s.score[i], cfg),
            ));
        }
    }
    out
}

/// ROC curve CSV: `threshold,fpr,tpr`, one row per sweep point.
pub fn render_roc_csv(roc: &RocResult) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in &roc.curve {
        out.push_str(&format!("{:.6},{:.6},{:.6}\n", p.threshold, p.fpr, p.tpr));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(v: f64) -> Tensor<f64> {
        Tensor::full(&[3, 4, 5], v)
    }

    #[test]
    fn zero_error_hits_the_cap_in_both_modes() {
        let a = Tensor::from_fn(&[3, 4, 4], |i| (i as f64 / 48.0) * 2.0 - 1.0);
        assert_eq!(psnr(&a, &a.clone(), PsnrMode::Standard).unwrap(), 300.0);
        assert_eq!(psnr(&a, &a.clone(), PsnrMode::Literal).unwrap(), 300.0);
    }

    #[test]
    fn uniform_error_of_a_tenth_is_twenty_db() {
        // gt -1 ↦ 0.0, pred -0.8 ↦ 0.1 on the [0,1] scale
        let db = psnr(&frame(-0.8), &frame(-1.0), PsnrMode::Standard).unwrap();
        assert!((db - 20.0).abs() < 1e-12, "{db}");
    }

    #[test]
    fn psnr_is_strictly_decreasing_in_mse() {
        let gt = frame(-1.0);
        let mut prev = f64::INFINITY;
        for step in 1..=8 {
            let db = psnr(&frame(-1.0 + 0.2 * step as f64), &gt, PsnrMode::Standard).unwrap();
            assert!(db < prev, "step {step}: {db} !< {prev}");
            prev = db;
        }
    }

    #[test]
    fn mode_difference_identity_on_uniform_error() {
        // standard − literal = 10·log10(N·peak²/max(pred)), peak = 1
        let n = 60.0f64;
        let pred = frame(-0.2); // rescaled max 0.4
        let gt = frame(-0.4);
        let s = psnr(&pred, &gt, PsnrMode::Standard).unwrap();
        let l = psnr(&pred, &gt, PsnrMode::Literal).unwrap();
        assert!((s - l - 10.0 * (n / 0.4).log10()).abs() < 1e-10);

        // when the prediction peaks at exactly 1.0 the gap reduces to
        // 10·log10(N) + 20·log10(peak/max) with both terms' max at 1
        let mut top = frame(-0.2);
        top.data_mut()[0] = 1.0;
        let s = psnr(&top, &gt, PsnrMode::Standard).unwrap();
        let l = psnr(&top, &gt, PsnrMode::Literal).unwrap();
        let printed_form = 10.0 * n.log10() + 20.0 * (1.0f64 / 1.0).log10();
        assert!((s - l - printed_form).abs() < 1e-10);
    }

    #[test]
    fn literal_mode_of_an_all_black_prediction_is_floored() {
        let db = psnr(&frame(-1.0), &frame(0.0), PsnrMode::Literal).unwrap();
        assert_eq!(db, -300.0);
    }

    #[test]
    fn psnr_rejects_mismatched_shapes() {
        let err = psnr(&frame(0.0), &Tensor::full(&[3, 5, 4], 0.0), PsnrMode::Standard);
        assert!(err.is_err());
    }

    #[test]
    fn min_max_normalization_examples() {
        assert_eq!(normalize_scores(&[30.0, 40.0, 50.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_scores(&[37.0, 37.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(normalize_scores(&[42.0]).unwrap(), vec![0.5]);
        assert!(normalize_scores(&[]).is_err());
        assert!(normalize_scores(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn normalization_ignores_positive_affine_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let p: Vec<f64> = (0..25).map(|_| rng.gen_range(20.0..50.0)).collect();
        let base = normalize_scores(&p).unwrap();
        let moved: Vec<f64> = p.iter().map(|&x| 3.5 * x - 11.0).collect();
        for (a, b) in base.iter().zip(normalize_scores(&moved).unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn decision_polarity_and_tie_rule() {
        let cfg = DecisionConfig::default();
        assert_eq!(decide(0.2, &cfg), 1);
        assert_eq!(decide(0.9, &cfg), 0);
        assert_eq!(decide(0.5, &cfg), 0); // tie → normal

        let flipped = DecisionConfig { polarity: Polarity::HighScoreAbnormal, gamma: 0.5 };
        assert_eq!(decide(0.9, &flipped), 1);
        assert_eq!(decide(0.2, &flipped), 0);
        assert_eq!(decide(0.5, &flipped), 0);

        assert!(DecisionConfig { gamma: 0.0, ..cfg }.validate().is_err());
        assert!(DecisionConfig { gamma: 1.0, ..cfg }.validate().is_err());
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn roc_separation_ties_and_single_class() {
        let perfect = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(perfect.auc, 1.0);
        let ties = roc_auc(&[0.4; 6], &[1, 0, 1, 0, 0, 1]).unwrap();
        assert_eq!(ties.auc, 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(roc_auc(&[0.1, 0.2], &[0, 0]).is_err());
        assert!(roc_auc(&[0.1], &[0, 1]).is_err());
    }

    fn pair_count_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut wins, mut ties, mut pairs) = (0u64, 0u64, 0u64);
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] != 1 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1;
                if si > sj {
                    wins += 1;
                } else if si == sj {
                    ties += 1;
                }
            }
        }
        (wins as f64 + ties as f64 / 2.0) / pairs as f64
    }

    #[test]
    fn auc_matches_exhaustive_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for case in 0..50 {
            let n = 20;
            // quantized scores force tie groups
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.gen_range(0.0..1.0f64) * 10.0).round() / 10.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            labels[0] = 1;
            labels[1] = 0;
            let r = roc_auc(&scores, &labels).unwrap();
            let oracle = pair_count_auc(&scores, &labels);
            assert!((r.auc - oracle).abs() <= 1e-12, "case {case}: {} vs {oracle}", r.auc);

            let mut trap = 0.0;
            for w in r.curve.windows(2) {
                trap += (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0;
            }
            assert!((trap - r.auc).abs() <= 1e-12, "case {case}: curve {trap} vs auc {}", r.auc);
        }
    }

    #[test]
    fn roc_curve_is_monotone_from_origin_to_one_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let scores: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut labels: Vec<u8> = (0..30).map(|_| rng.gen_range(0..2) as u8).collect();
        labels[0] = 1;
        labels[1] = 0;
        let r = roc_auc(&scores, &labels).unwrap();
        assert_eq!((r.curve[0].fpr, r.curve[0].tpr), (0.0, 0.0));
        let last = r.curve.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in r.curve.windows(2) {
            assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            assert!(w[1].threshold < w[0].threshold);
        }
    }

    #[test]
    fn auc_is_invariant_under_increasing_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let scores: Vec<f64> =
            (0..24).map(|_| (rng.gen_range(0.0..1.0f64) * 8.0).round() / 8.0).collect();
        let mut labels: Vec<u8> = (0..24).map(|_| rng.gen_range(0..2) as u8).collect();
        labels[0] = 1;
        labels[1] = 0;
        let base = roc_auc(&scores, &labels).unwrap().auc;
        let warped: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp()).collect();
        assert!((roc_auc(&warped, &labels).unwrap().auc - base).abs() < 1e-12);
    }

    #[test]
    fn flipping_scores_and_roles_mirrors_the_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let scores: Vec<f64> =
            (0..20).map(|_| (rng.gen_range(0.0..1.0f64) * 5.0).round() / 5.0).collect();
        let mut labels: Vec<u8> = (0..20).map(|_| rng.gen_range(0..2) as u8).collect();
        labels[0] = 1;
        labels[1] = 0;
        let anomaly: Vec<f64> = scores.iter().map(|&s| 1.0 - s).collect();
        let flipped: Vec<u8> = labels.iter().map(|&l| 1 - l).collect();
        let a = roc_auc(&anomaly, &labels).unwrap().auc;
        // negating the score complements the AUC...
        assert!((a - (1.0 - roc_auc(&scores, &labels).unwrap().auc)).abs() < 1e-12);
        // ...and so does swapping the class roles, so doing both cancels
        assert!((a - roc_auc(&scores, &flipped).unwrap().auc).abs() < 1e-12);
    }

    #[test]
    fn series_constructor_normalizes_and_validates() {
        let s = ScoreSeries::new("v1", 4, vec![30.0, 40.0, 50.0], vec![0, 1, 0]).unwrap();
        assert_eq!(s.score, vec![0.0, 0.5, 1.0]);
        assert_eq!(s.first_frame, 4);
        assert!(ScoreSeries::new("v", 4, vec![1.0], vec![0, 1]).is_err());
        assert!(ScoreSeries::new("v", 4, vec![1.0], vec![2]).is_err());
        assert!(ScoreSeries::new("v", 4, vec![], vec![]).is_err());
    }

    #[test]
    fn margins_on_a_hand_built_fixture() {
        // video A: psnr [40, 30], labels [0, 1]; video B: [44, 36], [0, 1]
        let a = ScoreSeries::new("a", 4, vec![40.0, 30.0], vec![0, 1]).unwrap();
        let b = ScoreSeries::new("b", 4, vec![44.0, 36.0], vec![0, 1]).unwrap();
        let m = margin_report(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(m.psnr_normal, 42.0);
        assert_eq!(m.psnr_abnormal, 33.0);
        assert_eq!(m.psnr_margin, 9.0);
        // both two-point videos normalize to [1, 0]
        assert_eq!(m.score_normal, 1.0);
        assert_eq!(m.score_abnormal, 0.0);
        assert_eq!(m.score_margin, 1.0);
        assert_eq!((m.n_normal, m.n_abnormal), (2, 2));

        assert!(margin_report(&[ScoreSeries::new("c", 4, vec![40.0, 41.0], vec![0, 0]).unwrap()])
            .is_err());
    }

    #[test]
    fn separated_classes_give_positive_margin_and_unit_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let mut series = Vec::new();
        for v in 0..4 {
            let psnr: Vec<f64> = (0..20)
                .map(|i| if i >= 12 { rng.gen_range(25.0..30.0) } else { rng.gen_range(38.0..45.0) })
                .collect();
            let labels: Vec<u8> = (0..20).map(|i| (i >= 12) as u8).collect();
            series.push(ScoreSeries::new(format!("v{v}"), 4, psnr, labels).unwrap());
        }
        let m = margin_report(&series).unwrap();
        assert!(m.psnr_margin > 0.0 && m.score_margin > 0.0);
        let roc = eval_auc(&series).unwrap();
        assert_eq!(roc.auc, 1.0);
    }

    #[test]
    fn csv_renderings_are_stable() {
        let s = ScoreSeries::new("video_03", 4, vec![30.0, 40.0, 50.0], vec![0, 1, 0]).unwrap();
        let csv = render_scores_csv(&[s], &DecisionConfig::default());
        let expect = "video_id,frame_index,psnr_db,score,label,decision\n\
                      video_03,4,30.000000,0.000000,0,1\n\
                      video_03,5,40.000000,0.500000,1,0\n\
                      video_03,6,50.000000,1.000000,0,0\n";
        assert_eq!(csv, expect);

        let roc = roc_auc(&[0.9, 0.1], &[1, 0]).unwrap();
        let csv = render_roc_csv(&roc);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "threshold,fpr,tpr");
        assert_eq!(lines.len(), 1 + roc.curve.len());
        assert_eq!(lines[1], "inf,0.000000,0.000000");
        assert_eq!(lines.last().unwrap(), &"0.100000,1.000000,1.000000");
    }
}
