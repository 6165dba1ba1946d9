//! The frequency discriminator and the adversarial loss.
//!
//! The discriminator maps an embedding row to a confidence in (0, 1). Its
//! loss over a popular batch `P` and a rare batch `R` is
//!
//! ```text
//! L_D = (1/|P|) sum_{w in P} log f(e_w) + (1/|R|) sum_{w in R} log(1 - f(e_w))
//! ```
//!
//! The discriminator descends `L_D` (it ascends `-lambda * L_D`) and the
//! embeddings descend `-lambda * L_D`, i.e. they ascend `L_D`. Log
//! arguments are clamped to `[1e-12, 1 - 1e-12]`; inside the clamped
//! region the loss is constant and its gradient is zero.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::FrequencyPartition;
use crate::linalg::{axpy, dot, sigmoid, Matrix, SparseRows};
use crate::sgns::{Embeddings, LOG_FLOOR};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscriminatorKind {
    /// `s(w . x + b)`
    Logistic,
    /// `s(w2 . tanh(W1 x + b1) + b2)` with `round(1.5 * d)` hidden units.
    Mlp1,
}

impl std::str::FromStr for DiscriminatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(DiscriminatorKind::Logistic),
            "mlp1" => Ok(DiscriminatorKind::Mlp1),
            other => Err(Error::invalid(format!("unknown discriminator kind {other:?}"))),
        }
    }
}

/// Discriminator parameters, stored flat.
///
/// Logistic layout: `[w (d), b]`. Mlp1 layout:
/// `[W1 (h x d, row-major), b1 (h), w2 (h), b2]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    kind: DiscriminatorKind,
    dim: usize,
    hidden: usize,
    params: Vec<f64>,
}

pub fn hidden_size(dim: usize) -> usize {
    (1.5 * dim as f64).round() as usize
}

impl Discriminator {
    /// All-zero parameters; outputs 0.5 everywhere.
    pub fn zeros(kind: DiscriminatorKind, dim: usize) -> Self {
        let hidden = match kind {
            DiscriminatorKind::Logistic => 0,
            DiscriminatorKind::Mlp1 => hidden_size(dim),
        };
        let n = match kind {
            DiscriminatorKind::Logistic => dim + 1,
            DiscriminatorKind::Mlp1 => hidden * dim + 2 * hidden + 1,
        };
        Discriminator {
            kind,
            dim,
            hidden,
            params: vec![0.0; n],
        }
    }

    /// Logistic weights start at zero. For mlp1 the first layer is drawn
    /// uniformly from `[-1/sqrt(d), 1/sqrt(d)]` and the rest is zero, so the
    /// initial output is still 0.5.
    pub fn init<R: Rng + ?Sized>(kind: DiscriminatorKind, dim: usize, rng: &mut R) -> Self {
        let mut d = Discriminator::zeros(kind, dim);
        if kind == DiscriminatorKind::Mlp1 {
            let bound = 1.0 / (dim as f64).sqrt();
            let n = d.hidden * dim;
            for p in &mut d.params[..n] {
                *p = rng.gen_range(-bound..=bound);
            }
        }
        d
    }

    pub fn logistic(weights: Vec<f64>, bias: f64) -> Self {
        let dim = weights.len();
        let mut params = weights;
        params.push(bias);
        Discriminator {
            kind: DiscriminatorKind::Logistic,
            dim,
            hidden: 0,
            params,
        }
    }

    pub fn kind(&self) -> DiscriminatorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Pre-sigmoid score. `hidden_out` receives the tanh activations for mlp1.
    fn logit_with(&self, x: &[f64], hidden_out: &mut Vec<f64>) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let d = self.dim;
        match self.kind {
            DiscriminatorKind::Logistic => dot(&self.params[..d], x) + self.params[d],
            DiscriminatorKind::Mlp1 => {
                let h = self.hidden;
                let (w1, rest) = self.params.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h);
                hidden_out.clear();
                hidden_out.extend(
                    w1.chunks_exact(d)
                        .zip(b1)
                        .map(|(row, b)| (dot(row, x) + b).tanh()),
                );
                dot(w2, hidden_out) + b2[0]
            }
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.logit_with(x, &mut Vec::new())
    }

    /// Back-propagates `dz` (derivative with respect to the logit) to the
    /// parameters and/or the input, accumulating into the given buffers.
    fn backward(
        &self,
        x: &[f64],
        hidden_act: &[f64],
        dz: f64,
        param_grad: Option<&mut [f64]>,
        input_grad: Option<&mut [f64]>,
    ) {
        let d = self.dim;
        match self.kind {
            DiscriminatorKind::Logistic => {
                if let Some(pg) = param_grad {
                    axpy(dz, x, &mut pg[..d]);
                    pg[d] += dz;
                }
                if let Some(ig) = input_grad {
                    axpy(dz, &self.params[..d], ig);
                }
            }
            DiscriminatorKind::Mlp1 => {
                let h = self.hidden;
                let w1 = &self.params[..h * d];
                let w2 = &self.params[h * d + h..h * d + 2 * h];
                let mut param_grad = param_grad;
                let mut input_grad = input_grad;
                for j in 0..h {
                    let a = hidden_act[j];
                    let dpre = dz * w2[j] * (1.0 - a * a);
                    if let Some(pg) = param_grad.as_deref_mut() {
                        axpy(dpre, x, &mut pg[j * d..(j + 1) * d]);
                        pg[h * d + j] += dpre;
                        pg[h * d + h + j] += dz * a;
                    }
                    if let Some(ig) = input_grad.as_deref_mut() {
                        axpy(dpre, &w1[j * d..(j + 1) * d], ig);
                    }
                }
                if let Some(pg) = param_grad {
                    pg[h * d + 2 * h] += dz;
                }
            }
        }
    }
}

/// Discriminator output for one embedding row.
pub fn discriminate(disc: &Discriminator, row: &[f64]) -> f64 {
    sigmoid(disc.logit(row))
}

fn check_batches(pop: &[usize], rare: &[usize]) -> Result<()> {
    if pop.is_empty() || rare.is_empty() {
        return Err(Error::EmptyClassBatch);
    }
    Ok(())
}

#[inline]
fn clamp_log(p: f64) -> f64 {
    p.clamp(LOG_FLOOR, 1.0 - LOG_FLOOR).ln()
}

/// Derivative of the clamped `log f` (popular) or `log(1 - f)` (rare)
/// term with respect to the logit.
#[inline]
fn term_slope(f: f64, popular: bool) -> f64 {
    if f <= LOG_FLOOR || f >= 1.0 - LOG_FLOOR {
        return 0.0;
    }
    if popular {
        1.0 - f
    } else {
        -f
    }
}

/// Adversarial loss `L_D` over the two class batches. Always `<= 0`.
pub fn discriminator_loss(
    disc: &Discriminator,
    emb: &Matrix,
    pop_batch: &[usize],
    rare_batch: &[usize],
) -> Result<f64> {
    check_batches(pop_batch, rare_batch)?;
    let mut hidden = Vec::new();
    let mut pop = 0.0;
    for &w in pop_batch {
        pop += clamp_log(sigmoid(disc.logit_with(emb.row(w), &mut hidden)));
    }
    let mut rare = 0.0;
    for &w in rare_batch {
        rare += clamp_log(1.0 - sigmoid(disc.logit_with(emb.row(w), &mut hidden)));
    }
    Ok(pop / pop_batch.len() as f64 + rare / rare_batch.len() as f64)
}

/// Gradient of `L_D` with respect to the discriminator parameters.
pub fn discriminator_gradient(
    disc: &Discriminator,
    emb: &Matrix,
    pop_batch: &[usize],
    rare_batch: &[usize],
) -> Result<Vec<f64>> {
    check_batches(pop_batch, rare_batch)?;
    let mut grad = vec![0.0; disc.params.len()];
    let mut hidden = Vec::new();
    for (batch, popular) in [(pop_batch, true), (rare_batch, false)] {
        let norm = 1.0 / batch.len() as f64;
        for &w in batch {
            let x = emb.row(w);
            let f = sigmoid(disc.logit_with(x, &mut hidden));
            let dz = norm * term_slope(f, popular);
            if dz != 0.0 {
                disc.backward(x, &hidden, dz, Some(&mut grad), None);
            }
        }
    }
    Ok(grad)
}

/// One ascent step on `-lambda * L_D`:
/// `theta_D <- theta_D - lr * lambda * grad L_D`.
pub fn discriminator_step(
    disc: &mut Discriminator,
    emb: &Matrix,
    pop_batch: &[usize],
    rare_batch: &[usize],
    lr: f64,
    lambda: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::invalid("discriminator learning rate must be positive"));
    }
    if lambda == 0.0 {
        check_batches(pop_batch, rare_batch)?;
        return Ok(());
    }
    let grad = discriminator_gradient(disc, emb, pop_batch, rare_batch)?;
    axpy(-lr * lambda, &grad, &mut disc.params);
    Ok(())
}

/// Gradient of `-lambda * L_D` with respect to the embedding rows in the
/// two batches. Descending it moves popular rows toward higher `f` and
/// rare rows toward lower `f`.
pub fn fooling_gradients(
    disc: &Discriminator,
    emb: &Matrix,
    pop_batch: &[usize],
    rare_batch: &[usize],
    lambda: f64,
) -> Result<SparseRows> {
    let mut out = SparseRows::new(emb.rows(), emb.cols());
    accumulate_fooling(disc, emb, pop_batch, rare_batch, lambda, &mut out)?;
    Ok(out)
}

pub(crate) fn accumulate_fooling(
    disc: &Discriminator,
    emb: &Matrix,
    pop_batch: &[usize],
    rare_batch: &[usize],
    lambda: f64,
    out: &mut SparseRows,
) -> Result<()> {
    if lambda < 0.0 {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    check_batches(pop_batch, rare_batch)?;
    let mut hidden = Vec::new();
    for (batch, popular) in [(pop_batch, true), (rare_batch, false)] {
        let norm = 1.0 / batch.len() as f64;
        for &w in batch {
            let x = emb.row(w);
            let f = sigmoid(disc.logit_with(x, &mut hidden));
            let dz = -lambda * norm * term_slope(f, popular);
            let row = out.row_mut(w);
            if dz != 0.0 {
                disc.backward(x, &hidden, dz, None, Some(row));
            }
        }
    }
    Ok(())
}

/// Settings for the frequency probe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// L2 penalty on the weights (not the bias).
    pub l2: f64,
    /// Stop once the loss changes by less than this between iterations.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Gradient step as a multiple of `1/L`, where `L` bounds the curvature
    /// of the loss.
    pub step_scale: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2: 1e-4,
            tolerance: 1e-6,
            max_iter: 3000,
            step_scale: 1.0,
        }
    }
}

/// Balanced holdout accuracy of a freshly trained logistic classifier that
/// predicts popular vs. rare from embedding rows.
pub fn probe_accuracy<R: Rng + ?Sized>(
    features: &Matrix,
    partition: &FrequencyPartition,
    holdout_fraction: f64,
    rng: &mut R,
) -> Result<f64> {
    probe_accuracy_with(features, partition, holdout_fraction, &ProbeConfig::default(), rng)
}

pub fn probe_accuracy_with<R: Rng + ?Sized>(
    features: &Matrix,
    partition: &FrequencyPartition,
    holdout_fraction: f64,
    config: &ProbeConfig,
    rng: &mut R,
) -> Result<f64> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::invalid("holdout fraction must lie in (0, 1)"));
    }
    if features.rows() != partition.len() {
        return Err(Error::invalid("feature rows do not match the partition"));
    }

    // stratified split: each class contributes the same holdout fraction
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [partition.popular(), partition.rare()] {
        if class.len() < 2 {
            return Err(Error::DegeneratePartition {
                popular: partition.popular().len(),
                rare: partition.rare().len(),
            });
        }
        let mut idx = class.to_vec();
        idx.shuffle(rng);
        let n_test = ((holdout_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();

    let model = LogisticProbe::fit(features, partition, &train, config);
    Ok(model.balanced_accuracy(features, partition, &test))
}

/// L2-regularized logistic regression on standardized features, trained by
/// full-batch gradient descent with class-balanced sample weights. The
/// label is 1 for rare words.
struct LogisticProbe {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
}

impl LogisticProbe {
    fn fit(x: &Matrix, partition: &FrequencyPartition, rows: &[usize], config: &ProbeConfig) -> Self {
        let d = x.cols();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for &r in rows {
            axpy(1.0 / n, x.row(r), &mut mean);
        }
        let mut var = vec![0.0; d];
        for &r in rows {
            for ((v, xi), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *v += (xi - m) * (xi - m) / n;
            }
        }
        let inv_std: Vec<f64> = var
            .iter()
            .map(|&v| if v > 1e-24 { 1.0 / v.sqrt() } else { 0.0 })
            .collect();
        let z: Vec<Vec<f64>> = rows
            .iter()
            .map(|&r| {
                x.row(r)
                    .iter()
                    .zip(&mean)
                    .zip(&inv_std)
                    .map(|((xi, m), s)| (xi - m) * s)
                    .collect()
            })
            .collect();
        let labels: Vec<f64> = rows
            .iter()
            .map(|&r| if partition.is_rare(r) { 1.0 } else { 0.0 })
            .collect();
        let n_rare = labels.iter().sum::<f64>();
        let n_pop = n - n_rare;
        let sample_w: Vec<f64> = labels
            .iter()
            .map(|&y| if y == 1.0 { 0.5 / n_rare } else { 0.5 / n_pop })
            .collect();

        // logistic curvature is at most 0.25 * lambda_max of the weighted
        // second-moment matrix of [z, 1]
        let lr = config.step_scale / (0.25 * top_eigenvalue(&z, &sample_w) + config.l2);

        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut prev = f64::INFINITY;
        let mut grad = vec![0.0; d];
        for _ in 0..config.max_iter {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            let mut loss = 0.0;
            for ((zi, &y), &sw) in z.iter().zip(&labels).zip(&sample_w) {
                let s = dot(&w, zi) + b;
                let p = sigmoid(s);
                // numerically stable binary cross-entropy
                loss += sw * (s.max(0.0) - s * y + (-s.abs()).exp().ln_1p());
                let r = sw * (p - y);
                axpy(r, zi, &mut grad);
                gb += r;
            }
            loss += 0.5 * config.l2 * dot(&w, &w);
            axpy(config.l2, &w.clone(), &mut grad);
            axpy(-lr, &grad, &mut w);
            b -= lr * gb;
            if (prev - loss).abs() < config.tolerance {
                break;
            }
            prev = loss;
        }
        LogisticProbe {
            mean,
            inv_std,
            weights: w,
            bias: b,
        }
    }

    fn predicts_rare(&self, row: &[f64]) -> bool {
        let mut s = self.bias;
        for (((xi, m), is), w) in row.iter().zip(&self.mean).zip(&self.inv_std).zip(&self.weights) {
            s += (xi - m) * is * w;
        }
        s > 0.0
    }

    fn balanced_accuracy(&self, x: &Matrix, partition: &FrequencyPartition, rows: &[usize]) -> f64 {
        let (mut pop_hit, mut pop_n, mut rare_hit, mut rare_n) = (0usize, 0usize, 0usize, 0usize);
        for &r in rows {
            let rare_pred = self.predicts_rare(x.row(r));
            if partition.is_rare(r) {
                rare_n += 1;
                rare_hit += rare_pred as usize;
            } else {
                pop_n += 1;
                pop_hit += (!rare_pred) as usize;
            }
        }
        0.5 * (pop_hit as f64 / pop_n as f64 + rare_hit as f64 / rare_n as f64)
    }
}

/// Largest eigenvalue of `sum_i w_i [z_i, 1][z_i, 1]^T` by power iteration,
/// inflated slightly so that it stays an upper bound.
fn top_eigenvalue(z: &[Vec<f64>], weights: &[f64]) -> f64 {
    let d = z.first().map_or(0, Vec::len);
    let mut v = vec![1.0 / ((d + 1) as f64).sqrt(); d + 1];
    let mut lambda = 1.0;
    for _ in 0..50 {
        let mut out = vec![0.0; d + 1];
        for (zi, &wi) in z.iter().zip(weights) {
            let proj = wi * (dot(zi, &v[..d]) + v[d]);
            axpy(proj, zi, &mut out[..d]);
            out[d] += proj;
        }
        let n = dot(&out, &out).sqrt();
        if n == 0.0 {
            return 1.0;
        }
        lambda = n;
        v = out.into_iter().map(|x| x / n).collect();
    }
    1.05 * lambda
}

/// Convenience wrapper taking the input matrix of an [`Embeddings`].
pub fn embedding_probe_accuracy<R: Rng + ?Sized>(
    emb: &Embeddings,
    partition: &FrequencyPartition,
    holdout_fraction: f64,
    rng: &mut R,
) -> Result<f64> {
    // the probe never shares state with the trainer's discriminator
    let snapshot = emb.input().clone();
    probe_accuracy(&snapshot, partition, holdout_fraction, rng)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn zero_logistic_outputs_half() {
        let d = Discriminator::zeros(DiscriminatorKind::Logistic, 3);
        assert_eq!(discriminate(&d, &[1.0, -4.0, 9.0]), 0.5);
    }

    #[test]
    fn logistic_direct_evaluation() {
        let d = Discriminator::logistic(vec![1.0, 0.0], 0.0);
        assert!((discriminate(&d, &[2.0, 5.0]) - 0.880_797_077_977_882_3).abs() < 1e-12);
    }

    #[test]
    fn zero_mlp_outputs_half() {
        let d = Discriminator::zeros(DiscriminatorKind::Mlp1, 4);
        assert_eq!(d.hidden(), 6);
        assert_eq!(d.params().len(), 6 * 4 + 6 + 6 + 1);
        assert_eq!(discriminate(&d, &[1.0, 2.0, 3.0, 4.0]), 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Discriminator::init(DiscriminatorKind::Mlp1, 4, &mut rng);
        assert_eq!(discriminate(&d, &[1.0, 2.0, 3.0, 4.0]), 0.5);
    }

    #[test]
    fn hidden_size_rounds() {
        assert_eq!(hidden_size(300), 450);
        assert_eq!(hidden_size(3), 5);
        assert_eq!(hidden_size(1), 2);
    }

    #[test]
    fn loss_with_constant_half() {
        let d = Discriminator::zeros(DiscriminatorKind::Logistic, 2);
        let emb = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let l = discriminator_loss(&d, &emb, &[0], &[1, 2]).unwrap();
        assert!((l + 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_direct_evaluation() {
        // f = s(x) on one-dimensional rows; pick rows with f = 0.8 and 0.3
        let d = Discriminator::logistic(vec![1.0], 0.0);
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let emb = Matrix::from_rows(&[[logit(0.8)], [logit(0.3)]]);
        let l = discriminator_loss(&d, &emb, &[0], &[1]).unwrap();
        assert!((l - (0.8f64.ln() + 0.7f64.ln())).abs() < 1e-12);
        assert!((l + 0.5798).abs() < 1e-4);
    }

    #[test]
    fn loss_saturates_at_clamp() {
        let d = Discriminator::logistic(vec![1.0], 0.0);
        let emb = Matrix::from_rows(&[[-100.0], [100.0]]);
        let l = discriminator_loss(&d, &emb, &[0], &[1]).unwrap();
        assert!((l - 2.0 * LOG_FLOOR.ln()).abs() < 1e-9);
        let g = discriminator_gradient(&d, &emb, &[0], &[1]).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn empty_batches_rejected() {
        let d = Discriminator::zeros(DiscriminatorKind::Logistic, 1);
        let emb = Matrix::zeros(2, 1);
        let err = discriminator_loss(&d, &emb, &[], &[1]).unwrap_err();
        assert_eq!(err.to_string(), "empty class batch");
        assert!(fooling_gradients(&d, &emb, &[0], &[], 0.1).is_err());
    }

    #[test]
    fn lambda_zero_step_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = Discriminator::init(DiscriminatorKind::Mlp1, 3, &mut rng);
        let before = d.clone();
        let emb = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        discriminator_step(&mut d, &emb, &[0], &[1], 0.5, 0.0).unwrap();
        assert_eq!(d, before);
    }

    #[test]
    fn zero_logistic_fooling_is_zero() {
        let d = Discriminator::zeros(DiscriminatorKind::Logistic, 2);
        let emb = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let g = fooling_gradients(&d, &emb, &[0], &[1], 0.1).unwrap();
        assert_eq!(g.len(), 2);
        assert!(g.iter().all(|(_, r)| r.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn step_decreases_loss_on_separated_clusters() {
        let emb = Matrix::from_rows(&[[2.0, 1.0], [2.5, 0.5], [-2.0, -1.0], [-1.5, -2.0]]);
        let mut d = Discriminator::zeros(DiscriminatorKind::Logistic, 2);
        let before = discriminator_loss(&d, &emb, &[0, 1], &[2, 3]).unwrap();
        discriminator_step(&mut d, &emb, &[0, 1], &[2, 3], 0.1, 0.1).unwrap();
        let after = discriminator_loss(&d, &emb, &[0, 1], &[2, 3]).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn probe_separates_clusters_and_rejects_bad_holdout() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<[f64; 2]> = (0..100)
            .map(|i| {
                let c = if i < 20 { 5.0 } else { -5.0 };
                [c + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
            })
            .collect();
        let x = Matrix::from_rows(&rows);
        let p = FrequencyPartition::from_mask((0..100).map(|i| i < 20).collect(), 0.2).unwrap();
        let acc = probe_accuracy(&x, &p, 0.3, &mut rng).unwrap();
        assert!(acc >= 0.99, "{acc}");
        assert!(probe_accuracy(&x, &p, 0.0, &mut rng).is_err());
        assert!(probe_accuracy(&x, &p, 1.0, &mut rng).is_err());
    }
}
