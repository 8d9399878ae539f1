//! The binary discriminator: a d → h → h → 1 feed-forward network with
//! LeakyReLU activations, dropout on the input layer only, and a logistic
//! output squashed into (0, 1). Forward and backward passes are written out
//! by hand; gradients are validated against finite differences in tests.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// Probabilities are clamped to this bound inside logs for loss stability.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct DiscriminatorParams {
    w1: Array2<f64>, // h × d
    b1: Array1<f64>,
    w2: Array2<f64>, // h × h
    b2: Array1<f64>,
    w3: Array2<f64>, // 1 × h
    b3: Array1<f64>,
    pub input_dropout: f64,
    pub leaky_slope: f64,
    pub label_smoothing: f64,
}

/// Gradients with the same shapes as the parameters.
#[derive(Debug, Clone)]
pub struct DiscriminatorGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

/// Activations cached by a batched forward pass.
struct ForwardCache {
    input: Array2<f64>, // post-dropout input actually fed to layer 1
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    a2: Array2<f64>,
    probs: Array1<f64>,
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl DiscriminatorParams {
    /// Uniform `±1/√fan_in` initialization of all layers.
    pub fn init<R: Rng>(
        dim: usize,
        hidden: usize,
        input_dropout: f64,
        leaky_slope: f64,
        label_smoothing: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::invalid("discriminator hidden size must be positive"));
        }
        if !(0.0..0.5).contains(&label_smoothing) {
            return Err(Error::invalid("label smoothing must lie in [0, 0.5)"));
        }
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
        };
        Ok(DiscriminatorParams {
            w1: uniform(hidden, dim),
            b1: Array1::zeros(hidden),
            w2: uniform(hidden, hidden),
            b2: Array1::zeros(hidden),
            w3: uniform(1, hidden),
            b3: Array1::zeros(1),
            input_dropout,
            leaky_slope,
            label_smoothing,
        })
    }

    /// Build from explicit weights (used by tests with hand-picked values).
    #[allow(clippy::too_many_arguments)]
    pub fn from_weights(
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
        w3: Array2<f64>,
        b3: Array1<f64>,
        input_dropout: f64,
        leaky_slope: f64,
        label_smoothing: f64,
    ) -> Self {
        DiscriminatorParams {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            input_dropout,
            leaky_slope,
            label_smoothing,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    fn leaky(&self, z: f64) -> f64 {
        if z > 0.0 {
            z
        } else {
            self.leaky_slope * z
        }
    }

    fn leaky_grad(&self, z: f64) -> f64 {
        if z > 0.0 {
            1.0
        } else {
            self.leaky_slope
        }
    }

    fn forward_cached(&self, input: Array2<f64>) -> ForwardCache {
        let z1 = input.dot(&self.w1.t()) + &self.b1;
        let a1 = z1.mapv(|z| self.leaky(z));
        let z2 = a1.dot(&self.w2.t()) + &self.b2;
        let a2 = z2.mapv(|z| self.leaky(z));
        let z3 = a2.dot(&self.w3.t()) + &self.b3;
        let probs = z3.column(0).mapv(logistic);
        ForwardCache { input, z1, a1, z2, a2, probs }
    }

    /// Probability that `v` is a genuine target embedding. Deterministic:
    /// dropout is a training-time effect, applied in [`Self::forward_train`].
    pub fn forward(&self, v: ArrayView1<'_, f64>) -> f64 {
        let input = v.to_owned().insert_axis(Axis(0));
        self.forward_cached(input).probs[0]
    }

    /// Forward pass with inverted input-layer dropout. Each input coordinate
    /// is zeroed with probability `input_dropout` and survivors are scaled by
    /// `1/(1-p)`, so the expected activation matches eval mode.
    pub fn forward_train<R: Rng>(&self, v: ArrayView1<'_, f64>, rng: &mut R) -> f64 {
        let mut input = v.to_owned();
        self.apply_dropout(&mut input, rng);
        self.forward_cached(input.insert_axis(Axis(0))).probs[0]
    }

    fn apply_dropout<R: Rng>(&self, v: &mut Array1<f64>, rng: &mut R) {
        let p = self.input_dropout;
        if p <= 0.0 {
            return;
        }
        let keep = 1.0 - p;
        for x in v.iter_mut() {
            if rng.random::<f64>() < p {
                *x = 0.0;
            } else {
                *x /= keep;
            }
        }
    }

    /// Batched eval-mode probabilities, one row of `inputs` each.
    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Array1<f64> {
        self.forward_cached(inputs.to_owned()).probs
    }

    /// Backward pass from `d loss / d z3` (pre-logistic), returning parameter
    /// gradients and the gradient w.r.t. the layer-1 input.
    fn backward(&self, cache: &ForwardCache, delta_z3: &Array1<f64>) -> (DiscriminatorGrads, Array2<f64>) {
        let d3 = delta_z3.view().insert_axis(Axis(1)); // B × 1
        let grad_w3 = d3.t().dot(&cache.a2);
        let grad_b3 = d3.sum_axis(Axis(0));
        let delta_a2 = d3.dot(&self.w3); // B × h
        let delta_z2 = &delta_a2 * &cache.z2.mapv(|z| self.leaky_grad(z));
        let grad_w2 = delta_z2.t().dot(&cache.a1);
        let grad_b2 = delta_z2.sum_axis(Axis(0));
        let delta_a1 = delta_z2.dot(&self.w2);
        let delta_z1 = &delta_a1 * &cache.z1.mapv(|z| self.leaky_grad(z));
        let grad_w1 = delta_z1.t().dot(&cache.input);
        let grad_b1 = delta_z1.sum_axis(Axis(0));
        let grad_input = delta_z1.dot(&self.w1);
        (
            DiscriminatorGrads {
                w1: grad_w1,
                b1: grad_b1,
                w2: grad_w2,
                b2: grad_b2,
                w3: grad_w3,
                b3: grad_b3,
            },
            grad_input,
        )
    }

    pub fn sgd_step(&mut self, grads: &DiscriminatorGrads, lr: f64) {
        self.w1.scaled_add(-lr, &grads.w1);
        self.b1.scaled_add(-lr, &grads.b1);
        self.w2.scaled_add(-lr, &grads.w2);
        self.b2.scaled_add(-lr, &grads.b2);
        self.w3.scaled_add(-lr, &grads.w3);
        self.b3.scaled_add(-lr, &grads.b3);
    }
}

fn clamped_log(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
}

/// Binary cross-entropy of a batch against a smoothed label, plus the
/// per-sample `d loss_total / d z3` scaled by `1/B`.
fn bce_with_label(probs: &Array1<f64>, label: f64) -> (f64, Array1<f64>) {
    let n = probs.len() as f64;
    let mut loss = 0.0;
    let mut delta = Array1::zeros(probs.len());
    for (i, &p) in probs.iter().enumerate() {
        loss -= label * clamped_log(p) + (1.0 - label) * clamped_log(1.0 - p);
        delta[i] = (p - label) / n;
    }
    (loss / n, delta)
}

/// Discriminator loss on a batch of mapped source rows and genuine target
/// rows: mapped rows carry the smoothed label `ε`, genuine rows `1 − ε`.
/// Returns the loss and parameter gradients. Dropout is applied to inputs
/// when `rng` is given (training mode).
pub fn loss_discriminator<R: Rng>(
    params: &DiscriminatorParams,
    mapped_src: ArrayView2<'_, f64>,
    tgt: ArrayView2<'_, f64>,
    rng: Option<&mut R>,
) -> Result<(f64, DiscriminatorGrads)> {
    if mapped_src.nrows() == 0 || tgt.nrows() == 0 {
        return Err(Error::empty("discriminator loss over an empty batch"));
    }
    let eps = params.label_smoothing;
    let mut src_input = mapped_src.to_owned();
    let mut tgt_input = tgt.to_owned();
    if let Some(rng) = rng {
        for mut row in src_input.rows_mut() {
            let mut v = row.to_owned();
            params.apply_dropout(&mut v, rng);
            row.assign(&v);
        }
        for mut row in tgt_input.rows_mut() {
            let mut v = row.to_owned();
            params.apply_dropout(&mut v, rng);
            row.assign(&v);
        }
    }
    let src_cache = params.forward_cached(src_input);
    let tgt_cache = params.forward_cached(tgt_input);
    let (loss_src, delta_src) = bce_with_label(&src_cache.probs, eps);
    let (loss_tgt, delta_tgt) = bce_with_label(&tgt_cache.probs, 1.0 - eps);
    let (mut grads, _) = params.backward(&src_cache, &delta_src);
    let (g_tgt, _) = params.backward(&tgt_cache, &delta_tgt);
    grads.w1 += &g_tgt.w1;
    grads.b1 += &g_tgt.b1;
    grads.w2 += &g_tgt.w2;
    grads.b2 += &g_tgt.b2;
    grads.w3 += &g_tgt.w3;
    grads.b3 += &g_tgt.b3;
    Ok((loss_src + loss_tgt, grads))
}

/// Loss value only, for callers that do not update the discriminator.
pub fn loss_discriminator_value(
    params: &DiscriminatorParams,
    mapped_src: ArrayView2<'_, f64>,
    tgt: ArrayView2<'_, f64>,
) -> Result<f64> {
    let (loss, _) = loss_discriminator::<rand::rngs::ThreadRng>(params, mapped_src, tgt, None)?;
    Ok(loss)
}

/// Adversarial mapping loss `−mean log D(Wx)` over a batch of raw source
/// rows, with the gradient w.r.t. the mapping `W`. The discriminator runs in
/// eval mode (no dropout) during mapping updates.
pub fn loss_generator_adv(
    params: &DiscriminatorParams,
    w: &crate::alignment::MappingMatrix,
    src_batch: ArrayView2<'_, f64>,
) -> Result<(f64, Array2<f64>)> {
    if src_batch.nrows() == 0 {
        return Err(Error::empty("generator loss over an empty batch"));
    }
    let mapped = w.map_rows(src_batch);
    let cache = params.forward_cached(mapped);
    let n = src_batch.nrows() as f64;
    let mut loss = 0.0;
    let mut delta = Array1::zeros(cache.probs.len());
    for (i, &p) in cache.probs.iter().enumerate() {
        loss -= clamped_log(p);
        delta[i] = (p - 1.0) / n; // label 1: fool the discriminator
    }
    let (_, grad_input) = params.backward(&cache, &delta);
    // Rows of `grad_input` are ∂L/∂(Wxᵢ); ∂L/∂W = Σᵢ ∂L/∂(Wxᵢ) · xᵢᵀ.
    let grad_w = grad_input.t().dot(&src_batch);
    Ok((loss / n, grad_w))
}
