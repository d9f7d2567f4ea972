//! The virtual ensemble teacher: fixed weight strategies, learnable
//! self-attention weighting over snapshots, and the convex fusion of
//! teacher soft targets.
//!
//! Attention scores one teacher per sample as the inner product of two
//! linear embeddings, `score(n, i) = (W_s' v_n) . (W_t' u_in)`, normalized
//! across teachers by softmax. A single `W_t` is shared by all teachers.

use crate::error::{EekdError, Result};
use crate::loss::softmax_tau;
use crate::optim::{sgd_update_tensor, SgdConfig};
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Tolerance for accepting an externally supplied weight row as a
/// probability vector.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// How snapshot weights are produced. Fixed kinds give one global vector;
/// attention gives a per-sample weight row driven by features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightStrategy {
    Mean,
    LinearIncrease,
    LinearDecrease,
    Attention { embed_dim: usize },
}

impl WeightStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            WeightStrategy::Mean => "mean",
            WeightStrategy::LinearIncrease => "linear_increase",
            WeightStrategy::LinearDecrease => "linear_decrease",
            WeightStrategy::Attention { .. } => "attention",
        }
    }

    pub fn is_attention(&self) -> bool {
        matches!(self, WeightStrategy::Attention { .. })
    }
}

/// Global weight vector for the non-learnable strategies:
/// mean `1/M`, linear increase `i / sum(1..=M)`, linear decrease
/// `(M + 1 - i) / sum(1..=M)` for `i = 1..=M`.
pub fn fixed_weights(strategy: WeightStrategy, m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(EekdError::InvalidConfig(
            "ensemble size must be positive".into(),
        ));
    }
    let total = (m * (m + 1) / 2) as f64;
    match strategy {
        WeightStrategy::Mean => Ok(vec![1.0 / m as f64; m]),
        WeightStrategy::LinearIncrease => Ok((1..=m).map(|i| i as f64 / total).collect()),
        WeightStrategy::LinearDecrease => Ok((1..=m).map(|i| (m + 1 - i) as f64 / total).collect()),
        WeightStrategy::Attention { .. } => Err(EekdError::Contract(
            "attention weights come from attention_weights, not fixed_weights".into(),
        )),
    }
}

/// Learnable projections: `w_s` embeds student features, `w_t` embeds
/// teacher features, both into the same `embed_dim` columns. Velocity
/// buffers make the pair a first-class SGD target.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_s: Tensor,
    pub w_t: Tensor,
    pub vel_s: Tensor,
    pub vel_t: Tensor,
}

impl AttentionParams {
    /// Fan-based uniform initialization matching the network layers:
    /// `w_s` draws first (row-major), then `w_t`, from `Rng::new(seed)`.
    pub fn init(
        student_feature_dim: usize,
        teacher_feature_dim: usize,
        embed_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if student_feature_dim == 0 || teacher_feature_dim == 0 || embed_dim == 0 {
            return Err(EekdError::InvalidConfig(
                "attention dimensions must be positive".into(),
            ));
        }
        let mut rng = Rng::new(seed);
        let mut w_s = Tensor::zeros(vec![student_feature_dim, embed_dim]);
        let bound = (6.0 / (student_feature_dim + embed_dim) as f64).sqrt();
        for v in w_s.data_mut() {
            *v = rng.next_symmetric(bound);
        }
        let mut w_t = Tensor::zeros(vec![teacher_feature_dim, embed_dim]);
        let bound = (6.0 / (teacher_feature_dim + embed_dim) as f64).sqrt();
        for v in w_t.data_mut() {
            *v = rng.next_symmetric(bound);
        }
        let vel_s = Tensor::zeros(vec![student_feature_dim, embed_dim]);
        let vel_t = Tensor::zeros(vec![teacher_feature_dim, embed_dim]);
        Ok(AttentionParams {
            w_s,
            w_t,
            vel_s,
            vel_t,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.w_s.cols()
    }

    pub fn sgd_step(&mut self, grads: &AttentionGrads, lr: f64, cfg: &SgdConfig) -> Result<()> {
        sgd_update_tensor(&mut self.w_s, &mut self.vel_s, &grads.w_s, lr, cfg)?;
        sgd_update_tensor(&mut self.w_t, &mut self.vel_t, &grads.w_t, lr, cfg)
    }
}

/// Raw bilinear scores, one row per sample and one column per teacher.
pub fn attention_scores(v: &Tensor, u: &[Tensor], attn: &AttentionParams) -> Result<Tensor> {
    if u.is_empty() {
        return Err(EekdError::InvalidConfig(
            "attention needs at least one teacher feature batch".into(),
        ));
    }
    if attn.w_s.cols() != attn.w_t.cols() {
        return Err(EekdError::DimensionMismatch {
            axis: "embedding columns",
            expected: attn.w_s.cols(),
            found: attn.w_t.cols(),
        });
    }
    let batch = v.rows();
    for features in u {
        if features.rows() != batch {
            return Err(EekdError::DimensionMismatch {
                axis: "feature batch rows",
                expected: batch,
                found: features.rows(),
            });
        }
    }

    let student_embed = v.matmul(&attn.w_s)?;
    let mut scores = Tensor::zeros(vec![batch, u.len()]);
    for (i, features) in u.iter().enumerate() {
        let teacher_embed = features.matmul(&attn.w_t)?;
        for n in 0..batch {
            let dot: f64 = student_embed
                .row(n)
                .iter()
                .zip(teacher_embed.row(n))
                .map(|(&a, &b)| a * b)
                .sum();
            scores.set(n, i, dot);
        }
    }
    scores.ensure_finite("attention scores")?;
    Ok(scores)
}

/// Per-sample weight rows: softmax across teachers of the bilinear scores.
/// Rows land on the open simplex (interior for more than one teacher).
pub fn attention_weights(v: &Tensor, u: &[Tensor], attn: &AttentionParams) -> Result<Tensor> {
    softmax_tau(&attention_scores(v, u, attn)?, 1.0)
}

/// Snapshot weights for one batch: one shared row, or one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleWeights {
    Global(Vec<f64>),
    PerSample(Tensor),
}

impl EnsembleWeights {
    fn weight(&self, sample: usize, teacher: usize) -> f64 {
        match self {
            EnsembleWeights::Global(w) => w[teacher],
            EnsembleWeights::PerSample(w) => w.at(sample, teacher),
        }
    }

    fn check(&self, batch: usize, m: usize) -> Result<()> {
        match self {
            EnsembleWeights::Global(w) => {
                if w.len() != m {
                    return Err(EekdError::DimensionMismatch {
                        axis: "weight count vs teachers",
                        expected: m,
                        found: w.len(),
                    });
                }
                check_simplex_row(0, w)
            }
            EnsembleWeights::PerSample(w) => {
                if w.rows() != batch || w.cols() != m {
                    return Err(EekdError::DimensionMismatch {
                        axis: "per-sample weight shape",
                        expected: batch * m,
                        found: w.len(),
                    });
                }
                for row in 0..batch {
                    check_simplex_row(row, w.row(row))?;
                }
                Ok(())
            }
        }
    }
}

fn check_simplex_row(row: usize, weights: &[f64]) -> Result<()> {
    let sum: f64 = weights.iter().sum();
    if !sum.is_finite()
        || (sum - 1.0).abs() > SIMPLEX_TOLERANCE
        || weights
            .iter()
            .any(|&w| !(0.0..=1.0 + SIMPLEX_TOLERANCE).contains(&w))
    {
        return Err(EekdError::SimplexViolation { row, sum });
    }
    Ok(())
}

/// Convex combination of the teacher soft targets,
/// `target[n][k] = sum_i w_i(n) p_i[n][k]`. Weight rows are validated
/// against the simplex before use; the output is row-stochastic to within
/// accumulation error.
pub fn ensemble_target(targets: &[Tensor], weights: &EnsembleWeights) -> Result<Tensor> {
    let first = targets.first().ok_or_else(|| {
        EekdError::InvalidConfig("ensemble needs at least one teacher target".into())
    })?;
    for t in targets {
        if t.shape() != first.shape() {
            return Err(EekdError::DimensionMismatch {
                axis: "teacher target shapes",
                expected: first.len(),
                found: t.len(),
            });
        }
    }
    let (batch, classes) = (first.rows(), first.cols());
    weights.check(batch, targets.len())?;

    let mut out = Tensor::zeros(vec![batch, classes]);
    for n in 0..batch {
        for k in 0..classes {
            let mut acc = 0.0;
            for (i, t) in targets.iter().enumerate() {
                acc += weights.weight(n, i) * t.at(n, k);
            }
            out.set(n, k, acc);
        }
    }
    Ok(out)
}

/// Gradients of the distillation loss with respect to the attention
/// projections, and optionally the student features.
#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub w_s: Tensor,
    pub w_t: Tensor,
    /// Gradient with respect to `v`; populated only when gradient flow
    /// through the student features is requested.
    pub v: Option<Tensor>,
}

/// Chain the upstream target gradient through the convex combination and
/// the score softmax into `w_s` and `w_t`. Teacher features are always
/// constants; the student features are too unless `grad_through_v` is set,
/// in which case the gradient with respect to `v` is also returned.
///
/// With `c[n][i] = sum_k upstream[n][k] p_i[n][k]`, the score gradient is
/// `d[n][j] = w[n][j] sum_i w[n][i] (c[n][j] - c[n][i])`, which vanishes
/// identically when all teachers emit the same targets.
pub fn attention_grads(
    upstream: &Tensor,
    targets: &[Tensor],
    v: &Tensor,
    u: &[Tensor],
    attn: &AttentionParams,
    grad_through_v: bool,
) -> Result<AttentionGrads> {
    if targets.len() != u.len() {
        return Err(EekdError::DimensionMismatch {
            axis: "teacher targets vs features",
            expected: u.len(),
            found: targets.len(),
        });
    }
    let m = u.len();
    let batch = v.rows();
    for t in targets {
        if t.shape() != upstream.shape() {
            return Err(EekdError::DimensionMismatch {
                axis: "upstream vs target shapes",
                expected: upstream.len(),
                found: t.len(),
            });
        }
    }

    let weights = attention_weights(v, u, attn)?;
    let student_embed = v.matmul(&attn.w_s)?;
    let teacher_embeds: Vec<Tensor> = u
        .iter()
        .map(|features| features.matmul(&attn.w_t))
        .collect::<Result<_>>()?;

    // c[n][i]: sensitivity of the loss to teacher i's weight at sample n.
    let mut c = Tensor::zeros(vec![batch, m]);
    for (i, t) in targets.iter().enumerate() {
        for n in 0..batch {
            let dot: f64 = upstream
                .row(n)
                .iter()
                .zip(t.row(n))
                .map(|(&g, &p)| g * p)
                .sum();
            c.set(n, i, dot);
        }
    }

    // Softmax backward, written as pairwise differences so identical
    // sensitivities give exactly zero.
    let mut d = Tensor::zeros(vec![batch, m]);
    for n in 0..batch {
        for j in 0..m {
            let mut acc = 0.0;
            for i in 0..m {
                acc += weights.at(n, i) * (c.at(n, j) - c.at(n, i));
            }
            d.set(n, j, weights.at(n, j) * acc);
        }
    }

    let embed_dim = attn.embed_dim();
    let mut grad_ws = Tensor::zeros(vec![attn.w_s.rows(), embed_dim]);
    let mut grad_wt = Tensor::zeros(vec![attn.w_t.rows(), embed_dim]);
    let mut grad_v = grad_through_v.then(|| Tensor::zeros(vec![batch, v.cols()]));
    for n in 0..batch {
        for j in 0..m {
            let scale = d.at(n, j);
            if scale == 0.0 {
                continue;
            }
            let teacher_embed = teacher_embeds[j].row(n);
            // score = (v W_s) . (u W_t): d score / d W_s = v (x) (u W_t).
            for (a, &va) in v.row(n).iter().enumerate() {
                for (b, &fb) in teacher_embed.iter().enumerate() {
                    let g = grad_ws.at(a, b) + scale * va * fb;
                    grad_ws.set(a, b, g);
                }
            }
            // d score / d W_t = u (x) (v W_s).
            let student_row = student_embed.row(n);
            for (a, &ua) in u[j].row(n).iter().enumerate() {
                for (b, &eb) in student_row.iter().enumerate() {
                    let g = grad_wt.at(a, b) + scale * ua * eb;
                    grad_wt.set(a, b, g);
                }
            }
            // d score / d v = W_s (u W_t).
            if let Some(gv) = grad_v.as_mut() {
                for a in 0..v.cols() {
                    let mut acc = 0.0;
                    for (b, &fb) in teacher_embed.iter().enumerate() {
                        acc += attn.w_s.at(a, b) * fb;
                    }
                    let g = gv.at(n, a) + scale * acc;
                    gv.set(n, a, g);
                }
            }
        }
    }

    Ok(AttentionGrads {
        w_s: grad_ws,
        w_t: grad_wt,
        v: grad_v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{kd_loss, kl_upstream_grad, LossParams};
    use crate::rng::Rng;

    fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
        let data = (0..rows * cols)
            .map(|_| rng.next_symmetric(scale))
            .collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    fn random_prob_rows(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
        let mut data = vec![0.0; rows * cols];
        for row in 0..rows {
            let slice = &mut data[row * cols..(row + 1) * cols];
            let mut sum = 0.0;
            for v in slice.iter_mut() {
                *v = rng.next_f64() + 0.05;
                sum += *v;
            }
            for v in slice.iter_mut() {
                *v /= sum;
            }
        }
        Tensor::matrix(rows, cols, data).unwrap()
    }

    #[test]
    fn fixed_weight_known_cases() {
        assert_eq!(
            fixed_weights(WeightStrategy::Mean, 5).unwrap(),
            vec![0.2; 5]
        );
        let inc = fixed_weights(WeightStrategy::LinearIncrease, 3).unwrap();
        assert_eq!(inc, vec![1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]);
        let dec = fixed_weights(WeightStrategy::LinearDecrease, 2).unwrap();
        assert_eq!(dec, vec![2.0 / 3.0, 1.0 / 3.0]);
        assert!(fixed_weights(WeightStrategy::Attention { embed_dim: 4 }, 3).is_err());
        assert!(fixed_weights(WeightStrategy::Mean, 0).is_err());
    }

    #[test]
    fn fixed_weights_stay_on_the_simplex() {
        for strategy in [
            WeightStrategy::Mean,
            WeightStrategy::LinearIncrease,
            WeightStrategy::LinearDecrease,
        ] {
            for m in 1..=10 {
                let w = fixed_weights(strategy, m).unwrap();
                let sum: f64 = w.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "{strategy:?} m={m}");
                assert!(w.iter().all(|&x| x > 0.0 && x <= 1.0));
                if m > 1 {
                    assert!(w.iter().all(|&x| x < 1.0));
                }
            }
        }
    }

    #[test]
    fn zero_projections_give_exact_uniform_weights() {
        let mut rng = Rng::new(2);
        let v = random_matrix(&mut rng, 3, 5, 1.0);
        let u: Vec<Tensor> = (0..4).map(|_| random_matrix(&mut rng, 3, 6, 1.0)).collect();
        let mut attn = AttentionParams::init(5, 6, 4, 11).unwrap();
        attn.w_s.data_mut().fill(0.0);
        let w = attention_weights(&v, &u, &attn).unwrap();
        for n in 0..3 {
            for i in 0..4 {
                assert_eq!(w.at(n, i), 0.25);
            }
        }
    }

    #[test]
    fn single_teacher_weight_is_exactly_one() {
        let mut rng = Rng::new(3);
        let v = random_matrix(&mut rng, 2, 4, 1.0);
        let u = vec![random_matrix(&mut rng, 2, 4, 1.0)];
        let attn = AttentionParams::init(4, 4, 3, 5).unwrap();
        let w = attention_weights(&v, &u, &attn).unwrap();
        assert!(w.data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn weights_ignore_per_sample_score_shifts() {
        let mut rng = Rng::new(4);
        let v = random_matrix(&mut rng, 3, 4, 1.0);
        let u: Vec<Tensor> = (0..3).map(|_| random_matrix(&mut rng, 3, 4, 1.0)).collect();
        let attn = AttentionParams::init(4, 4, 4, 6).unwrap();
        let scores = attention_scores(&v, &u, &attn).unwrap();
        let mut shifted = scores.clone();
        for n in 0..3 {
            let c = 10.0 * (n as f64 + 1.0);
            for x in shifted.row_mut(n) {
                *x += c;
            }
        }
        let a = softmax_tau(&scores, 1.0).unwrap();
        let b = softmax_tau(&shifted, 1.0).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn attention_weights_match_scalar_oracle() {
        // Loop re-derivation: embed both sides, dot, exp, normalize.
        let mut rng = Rng::new(8);
        let v = random_matrix(&mut rng, 2, 3, 1.0);
        let u: Vec<Tensor> = (0..3).map(|_| random_matrix(&mut rng, 2, 5, 1.0)).collect();
        let attn = AttentionParams::init(3, 5, 4, 13).unwrap();
        let w = attention_weights(&v, &u, &attn).unwrap();

        for n in 0..2 {
            let mut e = [0.0f64; 4];
            for b in 0..4 {
                for a in 0..3 {
                    e[b] += v.at(n, a) * attn.w_s.at(a, b);
                }
            }
            let mut scores = [0.0f64; 3];
            for (i, features) in u.iter().enumerate() {
                let mut f = [0.0f64; 4];
                for b in 0..4 {
                    for a in 0..5 {
                        f[b] += features.at(n, a) * attn.w_t.at(a, b);
                    }
                }
                scores[i] = e.iter().zip(&f).map(|(&x, &y)| x * y).sum();
            }
            let total: f64 = scores.iter().map(|&s| s.exp()).sum();
            for i in 0..3 {
                let expected = scores[i].exp() / total;
                assert!((w.at(n, i) - expected).abs() < 1e-12, "n={n} i={i}");
            }
        }
    }

    #[test]
    fn attention_rows_are_interior_simplex_points() {
        let mut rng = Rng::new(12);
        for _ in 0..100 {
            let m = 2 + rng.next_index(5);
            let v = random_matrix(&mut rng, 3, 4, 2.0);
            let u: Vec<Tensor> = (0..m).map(|_| random_matrix(&mut rng, 3, 4, 2.0)).collect();
            let attn = AttentionParams::init(4, 4, 3, rng.next_u64()).unwrap();
            let w = attention_weights(&v, &u, &attn).unwrap();
            for n in 0..3 {
                let sum: f64 = w.row(n).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(w.row(n).iter().all(|&x| x > 0.0 && x < 1.0));
            }
        }
    }

    #[test]
    fn single_target_passes_through_unchanged() {
        let mut rng = Rng::new(1);
        let t = random_prob_rows(&mut rng, 3, 4);
        let out = ensemble_target(
            std::slice::from_ref(&t),
            &EnsembleWeights::Global(vec![1.0]),
        )
        .unwrap();
        assert_eq!(out.data(), t.data());
    }

    #[test]
    fn mean_of_opposite_onehots_is_even() {
        let a = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let b = Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap();
        let out = ensemble_target(&[a, b], &EnsembleWeights::Global(vec![0.5, 0.5])).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5]);
    }

    #[test]
    fn fusion_matches_loop_oracle_and_stays_in_hull() {
        let mut rng = Rng::new(19);
        let targets: Vec<Tensor> = (0..3).map(|_| random_prob_rows(&mut rng, 4, 5)).collect();
        let w = vec![0.5, 0.3, 0.2];
        let out = ensemble_target(&targets, &EnsembleWeights::Global(w.clone())).unwrap();
        for n in 0..4 {
            let mut row_sum = 0.0;
            for k in 0..5 {
                let expected: f64 = (0..3).map(|i| w[i] * targets[i].at(n, k)).sum();
                assert!((out.at(n, k) - expected).abs() < 1e-12);
                let lo = (0..3).map(|i| targets[i].at(n, k)).fold(f64::MAX, f64::min);
                let hi = (0..3).map(|i| targets[i].at(n, k)).fold(f64::MIN, f64::max);
                assert!(out.at(n, k) >= lo - 1e-12 && out.at(n, k) <= hi + 1e-12);
                row_sum += out.at(n, k);
            }
            assert!((row_sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn per_sample_weights_select_rows() {
        let a = Tensor::matrix(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let b = Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let w = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.25, 0.75]).unwrap();
        let out = ensemble_target(&[a, b], &EnsembleWeights::PerSample(w)).unwrap();
        assert_eq!(out.row(0), &[1.0, 0.0]);
        assert_eq!(out.row(1), &[0.25, 0.75]);
    }

    #[test]
    fn off_simplex_weights_are_rejected() {
        let mut rng = Rng::new(23);
        let targets: Vec<Tensor> = (0..2).map(|_| random_prob_rows(&mut rng, 2, 3)).collect();
        let err = ensemble_target(&targets, &EnsembleWeights::Global(vec![0.5, 0.4])).unwrap_err();
        assert!(matches!(err, EekdError::SimplexViolation { row: 0, .. }));
        let err = ensemble_target(&targets, &EnsembleWeights::Global(vec![1.2, -0.2])).unwrap_err();
        assert!(matches!(err, EekdError::SimplexViolation { .. }));
        let bad_rows = Tensor::matrix(2, 2, vec![0.5, 0.5, 0.9, 0.2]).unwrap();
        let err = ensemble_target(&targets, &EnsembleWeights::PerSample(bad_rows)).unwrap_err();
        assert!(matches!(err, EekdError::SimplexViolation { row: 1, .. }));
    }

    #[test]
    fn identical_teacher_targets_give_exactly_zero_grads() {
        let mut rng = Rng::new(31);
        let shared = random_prob_rows(&mut rng, 3, 4);
        let targets = vec![shared.clone(), shared.clone(), shared];
        let v = random_matrix(&mut rng, 3, 5, 1.0);
        let u: Vec<Tensor> = (0..3).map(|_| random_matrix(&mut rng, 3, 6, 1.0)).collect();
        let attn = AttentionParams::init(5, 6, 4, 7).unwrap();
        let upstream = random_matrix(&mut rng, 3, 4, 0.3);
        let grads = attention_grads(&upstream, &targets, &v, &u, &attn, true).unwrap();
        assert!(grads.w_s.data().iter().all(|&g| g == 0.0));
        assert!(grads.w_t.data().iter().all(|&g| g == 0.0));
        assert!(grads.v.unwrap().data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_teacher_grads_are_exactly_zero() {
        let mut rng = Rng::new(37);
        let targets = vec![random_prob_rows(&mut rng, 2, 3)];
        let v = random_matrix(&mut rng, 2, 4, 1.0);
        let u = vec![random_matrix(&mut rng, 2, 4, 1.0)];
        let attn = AttentionParams::init(4, 4, 2, 9).unwrap();
        let upstream = random_matrix(&mut rng, 2, 3, 0.5);
        let grads = attention_grads(&upstream, &targets, &v, &u, &attn, false).unwrap();
        assert!(grads.w_s.data().iter().all(|&g| g == 0.0));
        assert!(grads.w_t.data().iter().all(|&g| g == 0.0));
        assert!(grads.v.is_none());
    }

    #[test]
    fn projection_grads_match_finite_differences() {
        // The loss functional here is the full composite loss as a function
        // of the attention projections, with student logits and all
        // features held fixed.
        let mut rng = Rng::new(41);
        let (batch, classes, m) = (3, 4, 3);
        let logits = random_matrix(&mut rng, batch, classes, 1.5);
        let mut onehot = Tensor::zeros(vec![batch, classes]);
        for n in 0..batch {
            let k = rng.next_index(classes);
            onehot.set(n, k, 1.0);
        }
        let targets: Vec<Tensor> = (0..m)
            .map(|_| random_prob_rows(&mut rng, batch, classes))
            .collect();
        let v = random_matrix(&mut rng, batch, 5, 1.0);
        let u: Vec<Tensor> = (0..m)
            .map(|_| random_matrix(&mut rng, batch, 6, 1.0))
            .collect();
        let attn = AttentionParams::init(5, 6, 4, 43).unwrap();
        let lp = LossParams::new(0.5, 5.0).unwrap();

        let base_weights = attention_weights(&v, &u, &attn).unwrap();
        let base_target =
            ensemble_target(&targets, &EnsembleWeights::PerSample(base_weights)).unwrap();
        let upstream = kl_upstream_grad(&logits, &base_target, &lp).unwrap();
        let grads = attention_grads(&upstream, &targets, &v, &u, &attn, false).unwrap();

        let eval = |w_s: &Tensor, w_t: &Tensor| {
            let candidate = AttentionParams {
                w_s: w_s.clone(),
                w_t: w_t.clone(),
                vel_s: attn.vel_s.clone(),
                vel_t: attn.vel_t.clone(),
            };
            let w = attention_weights(&v, &u, &candidate).unwrap();
            let target = ensemble_target(&targets, &EnsembleWeights::PerSample(w)).unwrap();
            kd_loss(&logits, &target, &onehot, &lp).unwrap()
        };

        let fd_ws = crate::loss::finite_diff_grad(attn.w_s.data(), 1e-5, |point| {
            let w_s = Tensor::new(attn.w_s.shape().to_vec(), point.to_vec()).unwrap();
            eval(&w_s, &attn.w_t)
        });
        for (a, f) in grads.w_s.data().iter().zip(&fd_ws) {
            assert!((a - f).abs() < 1e-7, "w_s {a} vs {f}");
        }
        let fd_wt = crate::loss::finite_diff_grad(attn.w_t.data(), 1e-5, |point| {
            let w_t = Tensor::new(attn.w_t.shape().to_vec(), point.to_vec()).unwrap();
            eval(&attn.w_s, &w_t)
        });
        for (a, f) in grads.w_t.data().iter().zip(&fd_wt) {
            assert!((a - f).abs() < 1e-7, "w_t {a} vs {f}");
        }
    }

    #[test]
    fn feature_grads_match_finite_differences_when_enabled() {
        let mut rng = Rng::new(53);
        let (batch, classes, m) = (2, 3, 3);
        let logits = random_matrix(&mut rng, batch, classes, 1.0);
        let mut onehot = Tensor::zeros(vec![batch, classes]);
        for n in 0..batch {
            let k = rng.next_index(classes);
            onehot.set(n, k, 1.0);
        }
        let targets: Vec<Tensor> = (0..m)
            .map(|_| random_prob_rows(&mut rng, batch, classes))
            .collect();
        let v = random_matrix(&mut rng, batch, 4, 1.0);
        let u: Vec<Tensor> = (0..m)
            .map(|_| random_matrix(&mut rng, batch, 4, 1.0))
            .collect();
        let attn = AttentionParams::init(4, 4, 3, 59).unwrap();
        let lp = LossParams::new(0.4, 4.0).unwrap();

        let base_weights = attention_weights(&v, &u, &attn).unwrap();
        let base_target =
            ensemble_target(&targets, &EnsembleWeights::PerSample(base_weights)).unwrap();
        let upstream = kl_upstream_grad(&logits, &base_target, &lp).unwrap();
        let grads = attention_grads(&upstream, &targets, &v, &u, &attn, true).unwrap();
        let grad_v = grads.v.unwrap();

        let fd_v = crate::loss::finite_diff_grad(v.data(), 1e-5, |point| {
            let v2 = Tensor::new(v.shape().to_vec(), point.to_vec()).unwrap();
            let w = attention_weights(&v2, &u, &attn).unwrap();
            let target = ensemble_target(&targets, &EnsembleWeights::PerSample(w)).unwrap();
            kd_loss(&logits, &target, &onehot, &lp).unwrap()
        });
        for (a, f) in grad_v.data().iter().zip(&fd_v) {
            assert!((a - f).abs() < 1e-7, "{a} vs {f}");
        }
    }

    #[test]
    fn mismatched_batches_are_rejected() {
        let mut rng = Rng::new(61);
        let v = random_matrix(&mut rng, 3, 4, 1.0);
        let u = vec![random_matrix(&mut rng, 2, 4, 1.0)];
        let attn = AttentionParams::init(4, 4, 2, 1).unwrap();
        assert!(matches!(
            attention_weights(&v, &u, &attn),
            Err(EekdError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn attention_step_moves_projections() {
        let mut attn = AttentionParams::init(3, 3, 2, 71).unwrap();
        let before = attn.clone();
        let grads = AttentionGrads {
            w_s: Tensor::new(vec![3, 2], vec![0.1; 6]).unwrap(),
            w_t: Tensor::new(vec![3, 2], vec![-0.1; 6]).unwrap(),
            v: None,
        };
        let cfg = SgdConfig::new(0.9, 0.0).unwrap();
        attn.sgd_step(&grads, 0.5, &cfg).unwrap();
        for (a, b) in attn.w_s.data().iter().zip(before.w_s.data()) {
            assert!((a - (b - 0.05)).abs() < 1e-15);
        }
        for (a, b) in attn.w_t.data().iter().zip(before.w_t.data()) {
            assert!((a - (b + 0.05)).abs() < 1e-15);
        }
    }
}
