//! Classification losses with hand-derived gradients with respect to the
//! `C+1` logits.
//!
//! Log-sigmoid terms go through `softplus`, so nothing overflows for large
//! `|z|`: `-log(sigmoid(z)) = softplus(-z)` and `-log(1 - sigmoid(z)) =
//! softplus(z)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Label;

/// Indicator values are floored here before entering the margin log-ratio.
pub const INDICATOR_FLOOR: f64 = 1e-12;
/// Margins are clipped to `[-MARGIN_CLIP, MARGIN_CLIP]`.
pub const MARGIN_CLIP: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossResult {
    pub loss: f64,
    /// `dL/dz`, one entry per logit channel.
    pub grad_z: Vec<f64>,
}

/// Pairwise margins for one ground-truth class `i`; entry `j` holds
/// `delta_ij` and entry `i` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginRow(pub Vec<f64>);

impl MarginRow {
    pub fn zeros(num_classes: usize) -> Self {
        MarginRow(vec![0.0; num_classes])
    }
}

/// Binary weights for the non-ground-truth foreground terms; entry `i` is
/// unused and kept `false`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightRow(pub Vec<bool>);

impl WeightRow {
    /// All non-ground-truth terms switched on.
    pub fn ones(num_classes: usize, gt: usize) -> Self {
        WeightRow((0..num_classes).map(|j| j != gt).collect())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn check_channel(z: &[f64], channel: usize) -> Result<()> {
    if channel < z.len() {
        Ok(())
    } else {
        Err(Error::InvalidLabel(format!(
            "channel {channel} outside 0..{}",
            z.len()
        )))
    }
}

/// Softmax cross-entropy over all `C+1` channels with target `channel`.
pub fn softmax_ce(z: &[f64], channel: usize) -> Result<LossResult> {
    check_channel(z, channel)?;
    let loss = log_sum_exp(z) - z[channel];
    let mut grad_z = softmax(z);
    grad_z[channel] -= 1.0;
    Ok(LossResult { loss, grad_z })
}

/// Per-channel sigmoid BCE with the objectness channel as the background
/// positive: a foreground label `i` sets only `y_i = 1`, a background
/// sample sets only `y_C = 1`.
pub fn bce_objectness(z: &[f64], label: Label) -> Result<LossResult> {
    let target = label.channel(z.len() - 1);
    check_channel(z, target)?;
    let mut loss = 0.0;
    let grad_z = z
        .iter()
        .enumerate()
        .map(|(k, &zk)| {
            if k == target {
                loss += softplus(-zk);
                sigmoid(zk) - 1.0
            } else {
                loss += softplus(zk);
                sigmoid(zk)
            }
        })
        .collect();
    Ok(LossResult { loss, grad_z })
}

/// Combined inference probabilities: foreground sigmoids gated by the
/// complement of objectness, followed by objectness itself. The first `C`
/// entries double as the short-term indicators.
pub fn inference_probs(z: &[f64]) -> Vec<f64> {
    let c = z.len() - 1;
    let obj = sigmoid(z[c]);
    z.iter()
        .enumerate()
        .map(|(k, &zk)| if k == c { obj } else { (1.0 - obj) * sigmoid(zk) })
        .collect()
}

/// `alpha * log(l_j / l_i)` with both indicators floored at
/// [`INDICATOR_FLOOR`] and the result clipped to `±MARGIN_CLIP`.
pub fn pairwise_margin(l_i: f64, l_j: f64, alpha: f64) -> Result<f64> {
    for (class, v) in [(0, l_i), (1, l_j)] {
        if v.is_nan() || v < 0.0 || v.is_infinite() {
            return Err(Error::BadIndicator { class, value: v });
        }
    }
    let l_i = l_i.max(INDICATOR_FLOOR);
    let l_j = l_j.max(INDICATOR_FLOOR);
    // difference of logs keeps the swap antisymmetry exact
    Ok((alpha * (l_j.ln() - l_i.ln())).clamp(-MARGIN_CLIP, MARGIN_CLIP))
}

pub fn adjusted_prob(z_j: f64, delta: f64) -> f64 {
    sigmoid(z_j + delta)
}

/// Weight row for ground truth `gt` from the short-term indicators
/// `p_tilde` (the full `C+1` inference vector; the objectness entry is
/// ignored). A non-ground-truth class counts when it scores at least as high
/// as the ground truth or reaches `p_thresh`.
pub fn weight_terms(p_tilde: &[f64], gt: usize, p_thresh: f64) -> WeightRow {
    let c = p_tilde.len() - 1;
    let pi = p_tilde[gt];
    WeightRow(
        (0..c)
            .map(|j| j != gt && (p_tilde[j] >= pi || p_tilde[j] >= p_thresh))
            .collect(),
    )
}

/// Foreground classification balance loss for a foreground sample of class
/// `gt`:
///
/// `-log p_gt - log(1 - p_obj) - sum_{j != gt} w_j log(1 - sigmoid(z_j + delta_j))`.
///
/// The objectness channel never carries a margin or a weight.
pub fn fcbl(z: &[f64], gt: Label, margins: &MarginRow, weights: &WeightRow) -> Result<LossResult> {
    let c = z.len() - 1;
    let i = gt.foreground().ok_or_else(|| {
        Error::InvalidLabel("background sample passed to the foreground balance loss".into())
    })?;
    check_channel(&z[..c], i)?;
    for (ctx, len) in [("margin row", margins.0.len()), ("weight row", weights.0.len())] {
        if len != c {
            return Err(Error::Shape {
                context: ctx,
                expected: c,
                actual: len,
            });
        }
    }

    let mut grad_z = vec![0.0; c + 1];
    let mut loss = softplus(-z[i]) + softplus(z[c]);
    grad_z[i] = sigmoid(z[i]) - 1.0;
    grad_z[c] = sigmoid(z[c]);
    for j in (0..c).filter(|&j| j != i && weights.0[j]) {
        let shifted = z[j] + margins.0[j];
        loss += softplus(shifted);
        grad_z[j] = sigmoid(shifted);
    }
    Ok(LossResult { loss, grad_z })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    // Naive reference losses, written straight from the formulas without the
    // softplus rewrite. Only used on moderate logits.
    fn naive_sig(z: f64) -> f64 {
        1.0 / (1.0 + (-z).exp())
    }

    fn naive_softmax_ce(z: &[f64], i: usize) -> f64 {
        let s: f64 = z.iter().map(|v| v.exp()).sum();
        -(z[i].exp() / s).ln()
    }

    fn naive_bce(z: &[f64], target: usize) -> f64 {
        z.iter()
            .enumerate()
            .map(|(k, &v)| {
                let p = naive_sig(v);
                if k == target {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum()
    }

    fn naive_fcbl(z: &[f64], i: usize, delta: &[f64], w: &[bool]) -> f64 {
        let c = z.len() - 1;
        let mut l = -naive_sig(z[i]).ln() - (1.0 - naive_sig(z[c])).ln();
        for j in 0..c {
            if j != i && w[j] {
                l -= (1.0 - naive_sig(z[j] + delta[j])).ln();
            }
        }
        l
    }

    fn central_diff(f: impl Fn(&[f64]) -> f64, z: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        (0..z.len())
            .map(|k| {
                let mut a = z.to_vec();
                let mut b = z.to_vec();
                a[k] += h;
                b[k] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(b.iter().map(|x| x * x).sum::<f64>().sqrt())
            .max(1e-12);
        diff / scale
    }

    fn random_logits(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-6.0..6.0)).collect()
    }

    #[test]
    fn sigmoid_basics() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((1.0 - sigmoid(40.0)).abs() < 1e-15);
        assert!(sigmoid(-700.0) > 0.0 || sigmoid(-700.0) == 0.0);
        assert!(sigmoid(700.0).is_finite() && sigmoid(-700.0).is_finite());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let z: f64 = rng.random_range(-50.0..50.0);
            assert!((sigmoid(z) + sigmoid(-z) - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
    }

    #[test]
    fn softmax_ce_uniform_logits() {
        let r = softmax_ce(&[0.0; 4], 2).unwrap();
        assert!((r.loss - 4f64.ln()).abs() < 1e-15);
        assert_eq!(r.grad_z, vec![0.25, 0.25, -0.75, 0.25]);
    }

    #[test]
    fn softmax_ce_gradient_sums_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let z = random_logits(&mut rng, 6);
            let i = rng.random_range(0..6);
            let r = softmax_ce(&z, i).unwrap();
            assert!(r.grad_z.iter().sum::<f64>().abs() < 1e-14);
        }
    }

    #[test]
    fn softmax_ce_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let len = rng.random_range(2..12);
            let z = random_logits(&mut rng, len);
            let i = rng.random_range(0..len);
            let r = softmax_ce(&z, i).unwrap();
            assert!((r.loss - naive_softmax_ce(&z, i)).abs() < 1e-10);
            let num = central_diff(|x| naive_softmax_ce(x, i), &z);
            assert!(rel_err(&r.grad_z, &num) <= 1e-7);
        }
    }

    #[test]
    fn bce_hand_evaluated_cases() {
        // C = 2, all logits zero, foreground label 0
        let r = bce_objectness(&[0.0; 3], Label::Foreground(0)).unwrap();
        assert!((r.loss - 3.0 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(r.grad_z, vec![-0.5, 0.5, 0.5]);
        let r = bce_objectness(&[0.0; 3], Label::Background).unwrap();
        assert_eq!(r.grad_z, vec![0.5, 0.5, -0.5]);
    }

    #[test]
    fn bce_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let len = rng.random_range(3..12);
            let z = random_logits(&mut rng, len);
            let t = rng.random_range(0..len);
            let label = Label::from_channel(t, len - 1).unwrap();
            let r = bce_objectness(&z, label).unwrap();
            assert!((r.loss - naive_bce(&z, t)).abs() < 1e-10);
            let num = central_diff(|x| naive_bce(x, t), &z);
            assert!(rel_err(&r.grad_z, &num) <= 1e-7);
        }
    }

    #[test]
    fn inference_probs_cases() {
        let p = inference_probs(&[0.3, -1.2, -40.0]);
        assert!((p[0] - sigmoid(0.3)).abs() < 1e-15);
        assert!((p[1] - sigmoid(-1.2)).abs() < 1e-15);
        let p = inference_probs(&[0.3, -1.2, 0.0]);
        assert_eq!(p[0], 0.5 * sigmoid(0.3));
        assert_eq!(p[2], 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let z = random_logits(&mut rng, 5);
            let p = inference_probs(&z);
            for k in 0..4 {
                assert!(p[k] > 0.0 && p[k] < 1.0);
                assert!(p[k] <= sigmoid(z[k]));
            }
        }
    }

    #[test]
    fn margin_cases() {
        assert_eq!(pairwise_margin(0.3, 0.3, 0.85).unwrap(), 0.0);
        let d = pairwise_margin(1.0, std::f64::consts::E, 0.85).unwrap();
        assert!((d - 0.85).abs() < 1e-15);
        let a = pairwise_margin(0.2, 0.7, 0.85).unwrap();
        let b = pairwise_margin(0.7, 0.2, 0.85).unwrap();
        assert_eq!(a, -b);
        assert_eq!(pairwise_margin(0.0, 1.0, 0.85).unwrap(), MARGIN_CLIP);
        assert_eq!(pairwise_margin(0.0, 0.0, 0.85).unwrap(), 0.0);
        assert!(pairwise_margin(f64::NAN, 1.0, 0.85).is_err());
        assert!(pairwise_margin(-1.0, 1.0, 0.85).is_err());
    }

    #[test]
    fn adjusted_prob_behaviour() {
        assert_eq!(adjusted_prob(0.7, 0.0), sigmoid(0.7));
        assert!(adjusted_prob(0.0, 30.0) > 1.0 - 1e-12);
        let mut last = 0.0;
        for k in -100..=100 {
            let p = adjusted_prob(0.2, k as f64 * 0.1);
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn weight_term_branches() {
        let w = weight_terms(&[0.6, 0.65, 0.1], 0, 0.7);
        assert_eq!(w.0, vec![false, true]);
        let w = weight_terms(&[0.9, 0.75, 0.1], 0, 0.7);
        assert_eq!(w.0, vec![false, true]);
        let w = weight_terms(&[0.9, 0.3, 0.1], 0, 0.7);
        assert_eq!(w.0, vec![false, false]);
    }

    #[test]
    fn fcbl_hand_evaluated_case() {
        let r = fcbl(
            &[0.0; 3],
            Label::Foreground(0),
            &MarginRow::zeros(2),
            &WeightRow(vec![false, false]),
        )
        .unwrap();
        assert!((r.loss - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(r.grad_z, vec![-0.5, 0.0, 0.5]);
    }

    #[test]
    fn fcbl_rejects_background_and_bad_shapes() {
        let z = [0.0; 4];
        assert!(fcbl(&z, Label::Background, &MarginRow::zeros(3), &WeightRow::ones(3, 0)).is_err());
        assert!(fcbl(&z, Label::Foreground(0), &MarginRow::zeros(2), &WeightRow::ones(3, 0)).is_err());
        assert!(fcbl(&z, Label::Foreground(3), &MarginRow::zeros(3), &WeightRow::ones(3, 0)).is_err());
    }

    #[test]
    fn fcbl_with_unit_weights_and_no_margin_is_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let z = random_logits(&mut rng, 7);
            let i = rng.random_range(0..6);
            let a = fcbl(&z, Label::Foreground(i), &MarginRow::zeros(6), &WeightRow::ones(6, i)).unwrap();
            let b = bce_objectness(&z, Label::Foreground(i)).unwrap();
            assert!((a.loss - b.loss).abs() <= 1e-12);
            assert_eq!(a.grad_z, b.grad_z);
        }
    }

    #[test]
    fn fcbl_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let len = rng.random_range(3..12);
            let c = len - 1;
            let z = random_logits(&mut rng, len);
            let i = rng.random_range(0..c);
            let delta: Vec<f64> = (0..c)
                .map(|j| if j == i { 0.0 } else { rng.random_range(-3.0..3.0) })
                .collect();
            let w: Vec<bool> = (0..c).map(|j| j != i && rng.random_bool(0.5)).collect();
            let r = fcbl(&z, Label::Foreground(i), &MarginRow(delta.clone()), &WeightRow(w.clone())).unwrap();
            assert!((r.loss - naive_fcbl(&z, i, &delta, &w)).abs() < 1e-10);
            let num = central_diff(|x| naive_fcbl(x, i, &delta, &w), &z);
            assert!(rel_err(&r.grad_z, &num) <= 1e-6);
            for j in 0..c {
                if j != i && !w[j] {
                    assert_eq!(r.grad_z[j], 0.0);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn suppression_gradient_increases_with_margin(
            z in prop::collection::vec(-10.0f64..10.0, 5),
            d1 in -5.0f64..5.0,
            step in 1e-3f64..5.0,
        ) {
            let run = |d: f64| {
                let mut m = MarginRow::zeros(4);
                m.0[2] = d;
                fcbl(&z, Label::Foreground(0), &m, &WeightRow::ones(4, 0)).unwrap().grad_z[2]
            };
            prop_assert!(run(d1 + step) > run(d1));
        }

        #[test]
        fn margin_is_antisymmetric(a in 1e-6f64..10.0, b in 1e-6f64..10.0, alpha in 0.0f64..2.0) {
            prop_assert_eq!(
                pairwise_margin(a, b, alpha).unwrap(),
                -pairwise_margin(b, a, alpha).unwrap()
            );
        }
    }
}
