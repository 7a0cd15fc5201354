//! Mask-quality measures: KL consistency, binary cross-entropy, dice, and
//! Hungarian-matched IoU against reference masks.
//!
//! These are evaluation functions only. Smoothing constants are fixed: `1e-8`
//! floors inside logarithms, `1.0` additive smoothing for dice.

use serde::Serialize;

use crate::assignment::max_weight_assignment;
use crate::clusterer::{MaskStack, NORMALIZATION_TOL};
use crate::grid::Location;

pub const LOG_EPS: f64 = 1e-8;
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("masks sum to {sum} at location {location}, expected 1")]
    NotNormalized { location: Location, sum: f64 },
    #[error("pairing is invalid: {0}")]
    PairingSizeMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no masks to evaluate")]
    EmptyInput,
}

/// Reference object masks, `n × h × w` mask-major, summing to one per location.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMasks {
    pi: Vec<f64>,
    n: usize,
    h: usize,
    w: usize,
    pub labels: Option<Vec<String>>,
}

impl ReferenceMasks {
    pub fn new(pi: Vec<f64>, n: usize, h: usize, w: usize) -> Result<Self, MetricsError> {
        if n == 0 || h * w == 0 {
            return Err(MetricsError::EmptyInput);
        }
        if pi.len() != n * h * w {
            return Err(MetricsError::ShapeMismatch(format!("{} values for {n}x{h}x{w}", pi.len())));
        }
        let masks = Self { pi, n, h, w, labels: None };
        for loc in 0..h * w {
            let sum: f64 = (0..n).map(|m| masks.value(m, loc)).sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(MetricsError::NotNormalized { location: Location::from_raster(loc, w), sum });
            }
        }
        Ok(masks)
    }

    /// One-hot masks from a per-location label map with labels `0..n`.
    pub fn from_labels(labels: &[usize], n: usize, h: usize, w: usize) -> Result<Self, MetricsError> {
        if labels.len() != h * w {
            return Err(MetricsError::ShapeMismatch(format!("{} labels for {h}x{w}", labels.len())));
        }
        let mut pi = vec![0.0; n * h * w];
        for (loc, &l) in labels.iter().enumerate() {
            if l >= n {
                return Err(MetricsError::ShapeMismatch(format!("label {l} out of range for {n} masks")));
            }
            pi[l * h * w + loc] = 1.0;
        }
        Self::new(pi, n, h, w)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.pi
    }

    pub fn mask(&self, m: usize) -> &[f64] {
        let hw = self.h * self.w;
        &self.pi[m * hw..(m + 1) * hw]
    }

    pub fn value(&self, m: usize, loc: usize) -> f64 {
        self.pi[m * self.h * self.w + loc]
    }

    /// Argmax label per location, lowest index on ties.
    pub fn labels_map(&self) -> Vec<usize> {
        (0..self.h * self.w)
            .map(|loc| {
                let mut best = 0;
                for m in 1..self.n {
                    if self.value(m, loc) > self.value(best, loc) {
                        best = m;
                    }
                }
                best
            })
            .collect()
    }

    /// Binary mask `m` of the hardened reference.
    pub fn hard_mask(&self, m: usize) -> Vec<f64> {
        self.labels_map().into_iter().map(|l| if l == m { 1.0 } else { 0.0 }).collect()
    }
}

fn check_pairing(pairing: &[(usize, usize)], k: usize, n: usize) -> Result<(), MetricsError> {
    let mut seen_pred = vec![false; k];
    let mut seen_ref = vec![false; n];
    for &(a, b) in pairing {
        if a >= k || b >= n {
            return Err(MetricsError::PairingSizeMismatch(format!("pair ({a}, {b}) out of range for {k} x {n} masks")));
        }
        if std::mem::replace(&mut seen_pred[a], true) || std::mem::replace(&mut seen_ref[b], true) {
            return Err(MetricsError::PairingSizeMismatch(format!("pair ({a}, {b}) reuses a mask")));
        }
    }
    Ok(())
}

/// Mean over locations of `Σ_pairs p · ln(p / q)`, where `p` and `q` are the
/// paired predicted and reference values renormalized over the pairs.
/// Locations where either side has no paired mass contribute nothing.
pub fn kl_mask_consistency(
    pred: &MaskStack,
    reference: &ReferenceMasks,
    pairing: &[(usize, usize)],
) -> Result<f64, MetricsError> {
    if pred.h() != reference.h || pred.w() != reference.w {
        return Err(MetricsError::ShapeMismatch(format!(
            "prediction is {}x{}, reference is {}x{}",
            pred.h(),
            pred.w(),
            reference.h,
            reference.w
        )));
    }
    for (loc, sum) in pred.location_sums().into_iter().enumerate() {
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(MetricsError::NotNormalized { location: Location::from_raster(loc, pred.w()), sum });
        }
    }
    check_pairing(pairing, pred.k(), reference.n)?;
    if pairing.is_empty() {
        return Err(MetricsError::PairingSizeMismatch("pairing is empty".into()));
    }
    let hw = pred.h() * pred.w();
    let mut total = 0.0;
    for loc in 0..hw {
        let p_mass: f64 = pairing.iter().map(|&(a, _)| pred.value(a, loc)).sum();
        let q_mass: f64 = pairing.iter().map(|&(_, b)| reference.value(b, loc)).sum();
        if p_mass <= 0.0 || q_mass <= 0.0 {
            continue;
        }
        for &(a, b) in pairing {
            let p = pred.value(a, loc) / p_mass;
            if p > 0.0 {
                let q = reference.value(b, loc) / q_mass;
                total += p * (p.max(LOG_EPS) / q.max(LOG_EPS)).ln();
            }
        }
    }
    Ok((total / hw as f64).max(0.0))
}

fn check_same_len(a: &[f64], b: &[f64]) -> Result<(), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(())
}

/// Mean binary cross-entropy with predictions clamped to `[ε, 1 - ε]`.
pub fn bce_mask(pred: &[f64], target: &[f64]) -> Result<f64, MetricsError> {
    check_same_len(pred, target)?;
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(&m, &t)| {
            let m = m.clamp(LOG_EPS, 1.0 - LOG_EPS);
            -(t * m.ln() + (1.0 - t) * (1.0 - m).ln())
        })
        .sum();
    Ok(total / pred.len() as f64)
}

/// `1 - (2 Σ m·t + 1) / (Σ m + Σ t + 1)`.
pub fn dice_loss(pred: &[f64], target: &[f64]) -> Result<f64, MetricsError> {
    check_same_len(pred, target)?;
    let inter: f64 = pred.iter().zip(target).map(|(m, t)| m * t).sum();
    let pm: f64 = pred.iter().sum();
    let tm: f64 = target.iter().sum();
    Ok(1.0 - (2.0 * inter + DICE_SMOOTH) / (pm + tm + DICE_SMOOTH))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    /// `(predicted mask, reference mask)` pairs.
    pub pairing: Vec<(usize, usize)>,
    /// Sum of paired IoUs over `max(k_pred, k_ref)`; unpaired masks count as zero.
    pub mean_iou: f64,
    /// Total paired intersection over total paired union.
    pub ciou: f64,
}

/// IoU-maximising one-to-one matching between hardened predictions and
/// hardened references.
pub fn match_and_miou(pred: &MaskStack, reference: &ReferenceMasks) -> Result<MatchResult, MetricsError> {
    if pred.k() == 0 || reference.n == 0 {
        return Err(MetricsError::EmptyInput);
    }
    if pred.h() != reference.h || pred.w() != reference.w {
        return Err(MetricsError::ShapeMismatch(format!(
            "prediction is {}x{}, reference is {}x{}",
            pred.h(),
            pred.w(),
            reference.h,
            reference.w
        )));
    }
    Ok(match_label_maps(&pred.labels(), pred.k(), &reference.labels_map(), reference.n))
}

/// Matching on two label maps of equal length.
pub fn match_label_maps(pred: &[usize], k: usize, reference: &[usize], n: usize) -> MatchResult {
    let mut inter = vec![0usize; k * n];
    let mut pred_area = vec![0usize; k];
    let mut ref_area = vec![0usize; n];
    for (&p, &r) in pred.iter().zip(reference) {
        inter[p * n + r] += 1;
        pred_area[p] += 1;
        ref_area[r] += 1;
    }
    let union = |a: usize, b: usize| pred_area[a] + ref_area[b] - inter[a * n + b];
    let iou: Vec<f64> = (0..k * n)
        .map(|idx| {
            let (a, b) = (idx / n, idx % n);
            let u = union(a, b);
            if u == 0 {
                0.0
            } else {
                inter[idx] as f64 / u as f64
            }
        })
        .collect();
    let pairing = max_weight_assignment(&iou, k, n);
    let sum_iou: f64 = pairing.iter().map(|&(a, b)| iou[a * n + b]).sum();
    let (i_sum, u_sum) =
        pairing.iter().fold((0usize, 0usize), |(i, u), &(a, b)| (i + inter[a * n + b], u + union(a, b)));
    MatchResult {
        pairing,
        mean_iou: sum_iou / k.max(n) as f64,
        ciou: if u_sum == 0 { 0.0 } else { i_sum as f64 / u_sum as f64 },
    }
}

/// All metrics for one prediction/reference pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub kl: f64,
    pub bce: f64,
    pub dice: f64,
    pub miou: f64,
    pub ciou: f64,
    pub k_pred: usize,
    pub k_ref: usize,
}

/// Matches masks by IoU, then averages BCE and dice over the pairs and
/// computes KL under the same pairing.
pub fn evaluate(pred: &MaskStack, reference: &ReferenceMasks) -> Result<MetricsReport, MetricsError> {
    let matched = match_and_miou(pred, reference)?;
    let kl = kl_mask_consistency(pred, reference, &matched.pairing)?;
    let mut bce = 0.0;
    let mut dice = 0.0;
    for &(a, b) in &matched.pairing {
        let target = reference.hard_mask(b);
        bce += bce_mask(pred.mask(a), &target)?;
        dice += dice_loss(pred.mask(a), &target)?;
    }
    let pairs = matched.pairing.len() as f64;
    Ok(MetricsReport {
        kl,
        bce: bce / pairs,
        dice: dice / pairs,
        miou: matched.mean_iou,
        ciou: matched.ciou,
        k_pred: pred.k(),
        k_ref: reference.n,
    })
}
