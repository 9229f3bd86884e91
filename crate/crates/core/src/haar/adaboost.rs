//! Discrete AdaBoost over decision stumps, on a precomputed
//! feature-by-sample value matrix.

use super::features::{inverse_sigma, HaarFeature, WINDOW};
use super::integral::IntegralImage;
use super::HaarError;
use crate::imageio::Image;

pub const ERROR_FLOOR: f64 = 1e-10;

/// Decision stump on one feature: votes face when
/// `polarity·value ≥ polarity·threshold` (strictly below for polarity −1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stump {
    pub feature: HaarFeature,
    pub threshold: f32,
    pub polarity: i8,
    pub alpha: f32,
}

impl Stump {
    #[inline]
    pub fn votes_face(&self, value: f32) -> bool {
        if self.polarity >= 0 {
            value >= self.threshold
        } else {
            value < self.threshold
        }
    }
}

/// `alpha = ½·ln((1 − ε)/ε)` with ε floored at [`ERROR_FLOOR`].
pub fn stump_alpha(error: f64) -> f64 {
    let e = error.clamp(ERROR_FLOOR, 1.0 - ERROR_FLOOR);
    0.5 * ((1.0 - e) / e).ln()
}

/// Column-major feature values with per-feature ascending sample order.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    samples: usize,
    features: usize,
    values: Vec<f32>,
    order: Vec<u32>,
}

impl FeatureMatrix {
    /// `values[f·samples + i]` is feature `f` on sample `i`.
    pub fn from_values(values: Vec<f32>, samples: usize) -> Self {
        assert!(samples > 0 && values.len() % samples == 0, "value matrix is not samples × features");
        let features = values.len() / samples;
        let mut order = Vec::with_capacity(values.len());
        let mut idx: Vec<u32> = Vec::with_capacity(samples);
        for f in 0..features {
            let col = &values[f * samples..(f + 1) * samples];
            idx.clear();
            idx.extend(0..samples as u32);
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            order.extend_from_slice(&idx);
        }
        FeatureMatrix {
            samples,
            features,
            values,
            order,
        }
    }

    /// Variance-normalized values of `pool` on 24×24 grayscale windows.
    pub fn from_windows(windows: &[Image], pool: &[HaarFeature]) -> Self {
        let iis: Vec<IntegralImage> = windows.iter().map(IntegralImage::new).collect();
        let inv: Vec<f32> = iis.iter().map(|ii| inverse_sigma(ii, 0, 0, WINDOW)).collect();
        let mut values = Vec::with_capacity(pool.len() * windows.len());
        for f in pool {
            let s = f.scaled(1.0);
            for (ii, &iv) in iis.iter().zip(&inv) {
                values.push(s.value(ii, 0, 0, iv));
            }
        }
        FeatureMatrix::from_values(values, windows.len())
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn value(&self, feature: usize, sample: usize) -> f32 {
        self.values[feature * self.samples + sample]
    }

    fn column(&self, f: usize) -> (&[f32], &[u32]) {
        let r = f * self.samples..(f + 1) * self.samples;
        (&self.values[r.clone()], &self.order[r])
    }
}

/// Best stump on feature column `f`: (weighted error, threshold, polarity).
fn best_split(values: &[f32], order: &[u32], labels: &[bool], weights: &[f64], total_pos: f64, total_neg: f64) -> (f64, f32, i8) {
    let mut below_pos = 0.0;
    let mut below_neg = 0.0;
    let first = values[order[0] as usize];
    // cut before everything: all vote face (+1) or none (−1)
    let (mut best_err, mut best_thr, mut best_pol) = if total_neg <= total_pos {
        (total_neg, first - 1.0, 1i8)
    } else {
        (total_pos, first - 1.0, -1i8)
    };
    for k in 0..order.len() {
        let i = order[k] as usize;
        if labels[i] {
            below_pos += weights[i];
        } else {
            below_neg += weights[i];
        }
        let v = values[i];
        let next = order.get(k + 1).map(|&j| values[j as usize]);
        if next == Some(v) {
            continue;
        }
        let thr = match next {
            // a midpoint that rounds onto `v` would put `v` above the cut
            Some(n) => Some(v + (n - v) * 0.5).filter(|&m| m > v).unwrap_or(n),
            None => v + 1.0,
        };
        let err_up = (below_pos + (total_neg - below_neg)).max(0.0);
        let err_down = (below_neg + (total_pos - below_pos)).max(0.0);
        if err_up < best_err {
            (best_err, best_thr, best_pol) = (err_up, thr, 1);
        }
        if err_down < best_err {
            (best_err, best_thr, best_pol) = (err_down, thr, -1);
        }
    }
    (best_err, best_thr, best_pol)
}

/// Incremental AdaBoost state over a fixed sample.
#[derive(Debug, Clone)]
pub struct Booster<'a> {
    matrix: &'a FeatureMatrix,
    pool: &'a [HaarFeature],
    labels: &'a [bool],
    weights: Vec<f64>,
}

/// Result of one boosting round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Round {
    pub stump: Stump,
    pub feature_index: usize,
    pub error: f64,
}

impl<'a> Booster<'a> {
    /// Initial weights are split evenly between the classes.
    pub fn new(matrix: &'a FeatureMatrix, pool: &'a [HaarFeature], labels: &'a [bool]) -> Result<Self, HaarError> {
        if labels.len() != matrix.samples() || pool.len() != matrix.features() {
            return Err(HaarError::Training("label/feature counts do not match the value matrix".into()));
        }
        let pos = labels.iter().filter(|&&l| l).count();
        let neg = labels.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(HaarError::Training("both classes must be present".into()));
        }
        let weights = labels
            .iter()
            .map(|&l| if l { 0.5 / pos as f64 } else { 0.5 / neg as f64 })
            .collect();
        Ok(Booster {
            matrix,
            pool,
            labels,
            weights,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Picks the lowest-error stump (first feature wins ties), reweights and
    /// renormalizes. `None` once the best error reaches 0.5.
    pub fn round(&mut self) -> Option<Round> {
        let total_pos: f64 = self.labels.iter().zip(&self.weights).filter(|(l, _)| **l).map(|(_, w)| w).sum();
        let total_neg: f64 = self.weights.iter().sum::<f64>() - total_pos;
        let mut best: Option<(f64, f32, i8, usize)> = None;
        for f in 0..self.matrix.features() {
            let (values, order) = self.matrix.column(f);
            let (err, thr, pol) = best_split(values, order, self.labels, &self.weights, total_pos, total_neg);
            if best.map_or(true, |b| err < b.0) {
                best = Some((err, thr, pol, f));
            }
        }
        let (err, thr, pol, f) = best?;
        if err >= 0.5 {
            return None;
        }
        let alpha = stump_alpha(err);
        let stump = Stump {
            feature: self.pool[f],
            threshold: thr,
            polarity: pol,
            alpha: alpha as f32,
        };
        let (values, _) = self.matrix.column(f);
        for (i, w) in self.weights.iter_mut().enumerate() {
            let correct = stump.votes_face(values[i]) == self.labels[i];
            *w *= if correct { (-alpha).exp() } else { alpha.exp() };
        }
        let z: f64 = self.weights.iter().sum();
        self.weights.iter_mut().for_each(|w| *w /= z);
        Some(Round {
            stump,
            feature_index: f,
            error: err,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaBoostOutcome {
    pub stumps: Vec<Stump>,
    /// Set when a round's best error reached 0.5 before `rounds` stumps.
    pub stopped_early: bool,
}

/// `rounds` rounds of discrete AdaBoost.
pub fn train_adaboost(
    matrix: &FeatureMatrix,
    pool: &[HaarFeature],
    labels: &[bool],
    rounds: usize,
) -> Result<AdaBoostOutcome, HaarError> {
    let mut booster = Booster::new(matrix, pool, labels)?;
    let mut stumps = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        match booster.round() {
            Some(r) => stumps.push(r.stump),
            None => {
                return Ok(AdaBoostOutcome {
                    stumps,
                    stopped_early: true,
                })
            }
        }
    }
    Ok(AdaBoostOutcome {
        stumps,
        stopped_early: false,
    })
}

/// Fraction of training samples the strong classifier `Σα·h ≥ ½·Σα`
/// misclassifies, given each stump's feature column in `matrix`.
pub fn strong_error(matrix: &FeatureMatrix, columns: &[usize], stumps: &[Stump], labels: &[bool]) -> f64 {
    let half: f32 = stumps.iter().map(|s| s.alpha).sum::<f32>() * 0.5;
    let wrong = (0..labels.len())
        .filter(|&i| {
            let score: f32 = stumps
                .iter()
                .zip(columns)
                .filter(|(s, &f)| s.votes_face(matrix.value(f, i)))
                .map(|(s, _)| s.alpha)
                .sum();
            (score >= half) != labels[i]
        })
        .count();
    wrong as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar::FeatureKind;

    fn dummy_pool(n: usize) -> Vec<HaarFeature> {
        (0..n)
            .map(|i| HaarFeature::new(FeatureKind::TwoRectH, 2 * (i % 10), 0, 2, 2).unwrap())
            .collect()
    }

    #[test]
    fn alpha_formula() {
        assert!((stump_alpha(0.1) - 0.5 * 9f64.ln()).abs() < 1e-12);
        assert!((stump_alpha(0.1) - 1.09861).abs() < 1e-5);
        assert!(stump_alpha(0.0).is_finite());
    }

    #[test]
    fn separable_one_dimensional_data() {
        // faces have value ≥ 5, non-faces below
        let values = vec![1.0, 2.0, 3.0, 6.0, 7.0, 9.0];
        let labels = [false, false, false, true, true, true];
        let m = FeatureMatrix::from_values(values, 6);
        let pool = dummy_pool(1);
        let mut b = Booster::new(&m, &pool, &labels).unwrap();
        let r = b.round().unwrap();
        assert_eq!(r.error, 0.0);
        assert_eq!((r.stump.threshold, r.stump.polarity), (4.5, 1));
        assert_eq!(strong_error(&m, &[0], &[r.stump], &labels), 0.0);
        assert!((b.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reversed_polarity() {
        let m = FeatureMatrix::from_values(vec![9.0, 8.0, 1.0, 0.5], 4);
        let pool = dummy_pool(1);
        let labels = [false, false, true, true];
        let r = Booster::new(&m, &pool, &labels).unwrap().round().unwrap();
        assert_eq!(r.stump.polarity, -1);
        assert!(r.stump.votes_face(1.0) && !r.stump.votes_face(8.0));
    }

    #[test]
    fn weights_normalized_and_error_non_increasing() {
        // three noisy 1-D features, none separable alone
        let n = 60;
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let mut values = Vec::new();
        for f in 0..3u32 {
            for i in 0..n as u32 {
                let noise = ((i * 7919 + f * 104729) % 97) as f32 / 97.0;
                let signal = if labels[i as usize] { 0.6 } else { 0.0 };
                values.push(signal + noise);
            }
        }
        let m = FeatureMatrix::from_values(values, n);
        let pool = dummy_pool(3);
        let mut b = Booster::new(&m, &pool, &labels).unwrap();
        let mut stumps = Vec::new();
        let mut cols = Vec::new();
        let mut errs = Vec::new();
        for _ in 0..8 {
            let Some(r) = b.round() else { break };
            assert!((b.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(r.stump.alpha >= 0.0);
            stumps.push(r.stump);
            cols.push(r.feature_index);
            errs.push(strong_error(&m, &cols, &stumps, &labels));
        }
        assert!(errs.len() >= 3);
        for w in errs.windows(2) {
            assert!(w[1] <= w[0], "{errs:?}");
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let m = FeatureMatrix::from_values(vec![1.0, 2.0], 2);
        let pool = dummy_pool(1);
        assert!(Booster::new(&m, &pool, &[true, true]).is_err());
    }

    #[test]
    fn unlearnable_data_stops_early() {
        let m = FeatureMatrix::from_values(vec![1.0, 1.0, 1.0, 1.0], 4);
        let pool = dummy_pool(1);
        let out = train_adaboost(&m, &pool, &[true, false, true, false], 3).unwrap();
        assert!(out.stopped_early && out.stumps.is_empty());
    }
}
