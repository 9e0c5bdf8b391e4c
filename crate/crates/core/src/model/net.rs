//! Parameter container, forward pass, and backpropagation.

#![allow(clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::activations::{
    erf, localize_gradients, peak_backward, peak_forward, step_backward, step_forward, InitConfig,
    PeakParams, StepLadderParams, TWO_OVER_SQRT_PI,
};
use crate::features::{FeatureId, FeatureVector};

use super::optim::{adamw_update, AdamWConfig};
use super::spec::{ActivationKind, ModelSpec};
use super::train::TrainSample;
use super::ModelError;

/// Trainable activation attached to one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActivationParams {
    Identity,
    ScaledErf { k: f64 },
    ShiftedErf { x0: f64 },
    Step(StepLadderParams),
    Peak(PeakParams),
}

impl ActivationParams {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ActivationParams::Identity => x,
            ActivationParams::ScaledErf { k } => erf(k * x),
            ActivationParams::ShiftedErf { x0 } => erf(x - x0),
            ActivationParams::Step(p) => step_forward(x, p),
            ActivationParams::Peak(p) => peak_forward(x, p),
        }
    }

    fn zero_grads(&self) -> ActivationGrads {
        match self {
            ActivationParams::Identity => ActivationGrads::Identity,
            ActivationParams::ScaledErf { .. } => ActivationGrads::ScaledErf { dk: 0.0 },
            ActivationParams::ShiftedErf { .. } => ActivationGrads::ShiftedErf { dx0: 0.0 },
            ActivationParams::Step(p) => {
                ActivationGrads::Step { dk: vec![0.0; p.n()], dx0: vec![0.0; p.n()] }
            }
            ActivationParams::Peak(p) => {
                ActivationGrads::Peak { dw: vec![0.0; p.n()], dx0: vec![0.0; p.n()] }
            }
        }
    }

    /// Accumulate parameter gradients for one evaluation at `x` with the given
    /// upstream gradient.
    fn accumulate(&self, x: f64, upstream: f64, into: &mut ActivationGrads) {
        match (self, into) {
            (ActivationParams::Identity, ActivationGrads::Identity) => {}
            (ActivationParams::ScaledErf { k }, ActivationGrads::ScaledErf { dk }) => {
                let u = k * x;
                *dk += upstream * TWO_OVER_SQRT_PI * (-u * u).exp() * x;
            }
            (ActivationParams::ShiftedErf { x0 }, ActivationGrads::ShiftedErf { dx0 }) => {
                let u = x - x0;
                *dx0 -= upstream * TWO_OVER_SQRT_PI * (-u * u).exp();
            }
            (ActivationParams::Step(p), ActivationGrads::Step { dk, dx0 }) => {
                let g = step_backward(x, p, upstream);
                for i in 0..p.n() {
                    dk[i] += g.dk[i];
                    dx0[i] += g.dx0[i];
                }
            }
            (ActivationParams::Peak(p), ActivationGrads::Peak { dw, dx0 }) => {
                let g = peak_backward(x, p, upstream);
                for i in 0..p.n() {
                    dw[i] += g.dw[i];
                    dx0[i] += g.dx0[i];
                }
            }
            _ => unreachable!("activation/grad variant mismatch"),
        }
    }
}

/// Gradients of one activation, same shape as its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ActivationGrads {
    Identity,
    ScaledErf { dk: f64 },
    ShiftedErf { dx0: f64 },
    Step { dk: Vec<f64>, dx0: Vec<f64> },
    Peak { dw: Vec<f64>, dx0: Vec<f64> },
}

/// Dense layer, weights row-major `[out_dim x in_dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha20Rng) -> Self {
        // symmetric uniform scaled by fan-in
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        Linear { weights, bias: vec![0.0; out_dim], in_dim, out_dim }
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.out_dim {
            let row = &self.weights[r * self.in_dim..(r + 1) * self.in_dim];
            let mut acc = self.bias[r];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out.push(acc);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

/// One protocol sub-network: optional hidden layers (ReLU) and a classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// Hidden layers followed by the classifier layer.
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchGrads {
    pub layers: Vec<LinearGrads>,
}

/// Adam moment buffers for one tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentPair {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Optimizer state: step counter plus first/second moments for every tensor
/// in enumeration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub slots: Vec<MomentPair>,
}

/// Every trainable tensor of a model plus its optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub spec: ModelSpec,
    /// One activation per spec input, in input order.
    pub activations: Vec<ActivationParams>,
    /// One sub-network per branch (TCP, UDP, OTHER when masked).
    pub branches: Vec<Branch>,
    pub opt: OptimizerState,
}

/// Gradients for every trainable tensor, mirroring [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub activations: Vec<ActivationGrads>,
    pub branches: Vec<BranchGrads>,
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        ModelGrads {
            activations: params.activations.iter().map(|a| a.zero_grads()).collect(),
            branches: params
                .branches
                .iter()
                .map(|b| BranchGrads {
                    layers: b
                        .layers
                        .iter()
                        .map(|l| LinearGrads { dw: vec![0.0; l.weights.len()], db: vec![0.0; l.bias.len()] })
                        .collect(),
                })
                .collect(),
        }
    }

    fn scale(&mut self, factor: f64) {
        for a in &mut self.activations {
            match a {
                ActivationGrads::Identity => {}
                ActivationGrads::ScaledErf { dk } => *dk *= factor,
                ActivationGrads::ShiftedErf { dx0 } => *dx0 *= factor,
                ActivationGrads::Step { dk, dx0 } => {
                    dk.iter_mut().chain(dx0.iter_mut()).for_each(|g| *g *= factor);
                }
                ActivationGrads::Peak { dw, dx0 } => {
                    dw.iter_mut().chain(dx0.iter_mut()).for_each(|g| *g *= factor);
                }
            }
        }
        for b in &mut self.branches {
            for l in &mut b.layers {
                l.dw.iter_mut().chain(l.db.iter_mut()).for_each(|g| *g *= factor);
            }
        }
    }

    /// Apply localized learning: within each multi-unit activation only the
    /// unit with the least absolute accumulated position gradient keeps its
    /// gradient pair.
    pub fn localize(&mut self) {
        for a in &mut self.activations {
            match a {
                ActivationGrads::Step { dk, dx0 } => localize_gradients(dk, dx0),
                ActivationGrads::Peak { dw, dx0 } => localize_gradients(dw, dx0),
                _ => {}
            }
        }
    }
}

impl ModelParams {
    /// Initialize a model. Weights draw from a symmetric fan-in-scaled uniform
    /// distribution under `seed`; activation parameters come from per-input
    /// feature samples when provided, otherwise from the spec defaults.
    /// Identical `(spec, seed, init_samples)` give bit-identical parameters.
    pub fn build(
        spec: &ModelSpec,
        seed: u64,
        init_samples: Option<&[Vec<f64>]>,
    ) -> Result<Self, ModelError> {
        spec.validate()?;
        if let Some(columns) = init_samples {
            if columns.len() != spec.inputs.len() {
                return Err(ModelError::ShapeMismatch(format!(
                    "init samples cover {} inputs, spec has {}",
                    columns.len(),
                    spec.inputs.len()
                )));
            }
        }
        let init_cfg = InitConfig::default();
        // Inputs listed twice with a shifted-erf activation get staggered
        // positions: copy r of m uses the (r+1)/(m+1) quantile.
        let shifted_groups = shifted_erf_groups(spec);

        let mut activations = Vec::with_capacity(spec.inputs.len());
        for (j, input) in spec.inputs.iter().enumerate() {
            let samples = init_samples.map(|c| c[j].as_slice());
            let act = match input.activation {
                ActivationKind::None => ActivationParams::Identity,
                ActivationKind::ScaledErf => ActivationParams::ScaledErf { k: 1.0 },
                ActivationKind::ShiftedErf => {
                    let (rank, group_size) = shifted_groups[j].expect("shifted input has group info");
                    let q = (rank + 1) as f64 / (group_size + 1) as f64;
                    let x0 = match samples {
                        Some(s) if !s.is_empty() => {
                            let mut sorted = s.to_vec();
                            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
                            crate::activations::empirical_quantile(&sorted, q)
                        }
                        _ => -1.0 + 2.0 * q,
                    };
                    ActivationParams::ShiftedErf { x0 }
                }
                ActivationKind::Step { n } => {
                    let p = match samples {
                        Some(s) if s.len() >= n => StepLadderParams::from_data(s, n, &init_cfg)?,
                        _ => StepLadderParams::default_for(n)?,
                    };
                    ActivationParams::Step(p)
                }
                ActivationKind::Peak { n } => {
                    let p = match samples {
                        Some(s) if s.len() >= n => PeakParams::from_data(s, n, &init_cfg)?,
                        _ => PeakParams::default_for(n)?,
                    };
                    ActivationParams::Peak(p)
                }
            };
            activations.push(act);
        }

        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut branches = Vec::with_capacity(spec.branch_count());
        for _ in 0..spec.branch_count() {
            let mut layers = Vec::new();
            let mut dim = spec.input_dim();
            for &h in &spec.hidden {
                layers.push(Linear::init(dim, h, &mut rng));
                dim = h;
            }
            layers.push(Linear::init(dim, spec.class_count, &mut rng));
            branches.push(Branch { layers });
        }

        let mut params = ModelParams { spec: spec.clone(), activations, branches, opt: OptimizerState { step: 0, slots: vec![] } };
        params.opt.slots = params.zero_slots();
        Ok(params)
    }

    fn zero_slots(&self) -> Vec<MomentPair> {
        let mut slots = Vec::new();
        let mut push = |len: usize| slots.push(MomentPair { m: vec![0.0; len], v: vec![0.0; len] });
        for a in &self.activations {
            match a {
                ActivationParams::Identity => {}
                ActivationParams::ScaledErf { .. } | ActivationParams::ShiftedErf { .. } => push(1),
                ActivationParams::Step(p) => {
                    push(p.n());
                    push(p.n());
                }
                ActivationParams::Peak(p) => {
                    push(p.n());
                    push(p.n());
                }
            }
        }
        for b in &self.branches {
            for l in &b.layers {
                push(l.weights.len());
                push(l.bias.len());
            }
        }
        slots
    }

    /// Raw selected inputs and branch index for one feature vector.
    pub fn prepare(&self, features: &FeatureVector) -> (Vec<f64>, usize) {
        let inputs = crate::features::select_features(features, &self.spec.input_ids());
        let branch = if self.spec.protocol_masked { features.protocol.index() } else { 0 };
        (inputs, branch)
    }

    fn activated(&self, inputs: &[f64]) -> Vec<f64> {
        self.activations.iter().zip(inputs).map(|(a, &x)| a.eval(x)).collect()
    }

    /// Reference forward pass: every branch is evaluated and scaled by its
    /// mask bit, then summed. Equivalent to evaluating only the active branch.
    pub fn forward_masked(&self, inputs: &[f64], mask: [f64; 3]) -> Vec<f64> {
        let a = self.activated(inputs);
        let mut scores = vec![0.0; self.spec.class_count];
        for (b, branch) in self.branches.iter().enumerate() {
            let bit = if self.spec.protocol_masked { mask[b] } else { 1.0 };
            let out = branch_scores(branch, &a);
            for (s, o) in scores.iter_mut().zip(&out) {
                *s += bit * o;
            }
        }
        scores
    }

    /// Hot-path forward pass evaluating only the given branch.
    pub fn forward_active(&self, inputs: &[f64], branch: usize) -> Vec<f64> {
        let a = self.activated(inputs);
        branch_scores(&self.branches[branch], &a)
    }

    /// Pre-softmax class scores for a batch of feature vectors.
    pub fn forward_batch(&self, features: &[FeatureVector]) -> Vec<Vec<f64>> {
        features
            .iter()
            .map(|f| {
                let (inputs, _) = self.prepare(f);
                self.forward_masked(&inputs, f.mask())
            })
            .collect()
    }

    /// Predicted class index (argmax, ties to the lowest index).
    pub fn predict(&self, sample: &TrainSample) -> usize {
        argmax(&self.forward_active(&sample.inputs, sample.branch))
    }

    /// One AdamW update over every tensor. Weight decay applies to the linear
    /// layers only, never to activation parameters. Peak widths are clamped
    /// back to their floor afterwards.
    pub fn adamw_step(&mut self, grads: &ModelGrads, cfg: &AdamWConfig) -> Result<(), ModelError> {
        if grads.activations.len() != self.activations.len() || grads.branches.len() != self.branches.len() {
            return Err(ModelError::ShapeMismatch("gradient structure differs from parameters".into()));
        }
        let ModelParams { activations, branches, opt, .. } = self;
        opt.step += 1;
        let step = opt.step;
        let mut slots = opt.slots.iter_mut();
        // Activation tensors freeze zero-gradient entries so that units masked
        // by localized learning stay exactly where they are.
        let mut apply = |theta: &mut [f64], g: &[f64], decay: bool, freeze: bool| -> Result<(), ModelError> {
            let slot = slots
                .next()
                .ok_or_else(|| ModelError::ShapeMismatch("optimizer state exhausted".into()))?;
            if theta.len() != g.len() || slot.m.len() != theta.len() {
                return Err(ModelError::ShapeMismatch("tensor/gradient/moment length mismatch".into()));
            }
            adamw_update(theta, g, &mut slot.m, &mut slot.v, step, cfg, decay, freeze);
            Ok(())
        };

        for (act, ag) in activations.iter_mut().zip(&grads.activations) {
            match (act, ag) {
                (ActivationParams::Identity, ActivationGrads::Identity) => {}
                (ActivationParams::ScaledErf { k }, ActivationGrads::ScaledErf { dk }) => {
                    apply(std::slice::from_mut(k), std::slice::from_ref(dk), false, true)?;
                }
                (ActivationParams::ShiftedErf { x0 }, ActivationGrads::ShiftedErf { dx0 }) => {
                    apply(std::slice::from_mut(x0), std::slice::from_ref(dx0), false, true)?;
                }
                (ActivationParams::Step(p), ActivationGrads::Step { dk, dx0 }) => {
                    apply(&mut p.k, dk, false, true)?;
                    apply(&mut p.x0, dx0, false, true)?;
                }
                (ActivationParams::Peak(p), ActivationGrads::Peak { dw, dx0 }) => {
                    apply(&mut p.w, dw, false, true)?;
                    apply(&mut p.x0, dx0, false, true)?;
                    p.clamp_widths();
                }
                _ => return Err(ModelError::ShapeMismatch("activation gradient kind mismatch".into())),
            }
        }
        for (branch, bg) in branches.iter_mut().zip(&grads.branches) {
            if branch.layers.len() != bg.layers.len() {
                return Err(ModelError::ShapeMismatch("branch layer count mismatch".into()));
            }
            for (layer, lg) in branch.layers.iter_mut().zip(&bg.layers) {
                apply(&mut layer.weights, &lg.dw, true, false)?;
                apply(&mut layer.bias, &lg.db, true, false)?;
            }
        }
        Ok(())
    }

    /// Structural consistency of tensors against the spec.
    pub fn shape_check(&self) -> Result<(), ModelError> {
        self.spec.validate()?;
        if self.activations.len() != self.spec.inputs.len() {
            return Err(ModelError::ShapeMismatch("activation count differs from spec inputs".into()));
        }
        for (a, input) in self.activations.iter().zip(&self.spec.inputs) {
            let ok = matches!(
                (a, input.activation),
                (ActivationParams::Identity, ActivationKind::None)
                    | (ActivationParams::ScaledErf { .. }, ActivationKind::ScaledErf)
                    | (ActivationParams::ShiftedErf { .. }, ActivationKind::ShiftedErf)
            ) || match (a, input.activation) {
                (ActivationParams::Step(p), ActivationKind::Step { n }) => p.n() == n,
                (ActivationParams::Peak(p), ActivationKind::Peak { n }) => p.n() == n,
                _ => false,
            };
            if !ok {
                return Err(ModelError::ShapeMismatch("activation kind differs from spec".into()));
            }
        }
        if self.branches.len() != self.spec.branch_count() {
            return Err(ModelError::ShapeMismatch("branch count differs from spec".into()));
        }
        let mut dims = vec![self.spec.input_dim()];
        dims.extend(&self.spec.hidden);
        dims.push(self.spec.class_count);
        for branch in &self.branches {
            if branch.layers.len() != dims.len() - 1 {
                return Err(ModelError::ShapeMismatch("layer count differs from spec".into()));
            }
            for (l, (in_dim, out_dim)) in branch.layers.iter().zip(dims.windows(2).map(|w| (w[0], w[1]))) {
                if l.in_dim != in_dim
                    || l.out_dim != out_dim
                    || l.weights.len() != in_dim * out_dim
                    || l.bias.len() != out_dim
                {
                    return Err(ModelError::ShapeMismatch("layer dims differ from spec".into()));
                }
            }
        }
        let finite = self.activations.iter().all(|a| match a {
            ActivationParams::Identity => true,
            ActivationParams::ScaledErf { k } => k.is_finite(),
            ActivationParams::ShiftedErf { x0 } => x0.is_finite(),
            ActivationParams::Step(p) => p.k.iter().chain(&p.x0).all(|v| v.is_finite()),
            ActivationParams::Peak(p) => p.w.iter().chain(&p.x0).all(|v| v.is_finite()),
        }) && self
            .branches
            .iter()
            .flat_map(|b| &b.layers)
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()));
        if !finite {
            return Err(ModelError::ShapeMismatch("non-finite parameter".into()));
        }
        Ok(())
    }
}

fn shifted_erf_groups(spec: &ModelSpec) -> Vec<Option<(usize, usize)>> {
    let mut groups: std::collections::HashMap<FeatureId, Vec<usize>> = std::collections::HashMap::new();
    for (j, input) in spec.inputs.iter().enumerate() {
        if input.activation == ActivationKind::ShiftedErf {
            groups.entry(input.feature).or_default().push(j);
        }
    }
    let mut out = vec![None; spec.inputs.len()];
    for members in groups.values() {
        for (rank, &j) in members.iter().enumerate() {
            out[j] = Some((rank, members.len()));
        }
    }
    out
}

fn branch_scores(branch: &Branch, activated: &[f64]) -> Vec<f64> {
    let mut cur = activated.to_vec();
    let mut next = Vec::new();
    let last = branch.layers.len() - 1;
    for (i, layer) in branch.layers.iter().enumerate() {
        layer.apply(&cur, &mut next);
        if i < last {
            for v in &mut next {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

pub(super) fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in scores.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Numerically stable softmax cross-entropy pieces: (loss, probabilities).
fn softmax_ce(scores: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    let lse = max + sum.ln();
    for p in &mut probs {
        *p /= sum;
    }
    (lse - scores[label], probs)
}

/// Mean cross-entropy loss and gradients over a batch, with localized-learning
/// masking applied to every multi-unit activation.
pub fn loss_and_gradients(
    params: &ModelParams,
    batch: &[TrainSample],
) -> Result<(f64, ModelGrads), ModelError> {
    let (loss, mut grads) = raw_loss_and_gradients(params, batch, None)?;
    grads.localize();
    Ok((loss, grads))
}

/// Like [`loss_and_gradients`] with per-class weights: the reduction becomes
/// `Σ w[y_i]·loss_i / Σ w[y_i]`. Unit weights reproduce the plain mean.
pub fn loss_and_gradients_weighted(
    params: &ModelParams,
    batch: &[TrainSample],
    class_weights: Option<&[f64]>,
) -> Result<(f64, ModelGrads), ModelError> {
    let (loss, mut grads) = raw_loss_and_gradients(params, batch, class_weights)?;
    grads.localize();
    Ok((loss, grads))
}

/// Mean cross-entropy loss and the unmasked (mathematical) gradients.
/// Gradient-verification harnesses compare these against finite differences.
pub fn loss_and_gradients_unmasked(
    params: &ModelParams,
    batch: &[TrainSample],
) -> Result<(f64, ModelGrads), ModelError> {
    raw_loss_and_gradients(params, batch, None)
}

fn raw_loss_and_gradients(
    params: &ModelParams,
    batch: &[TrainSample],
    class_weights: Option<&[f64]>,
) -> Result<(f64, ModelGrads), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if let Some(weights) = class_weights {
        if weights.len() != params.spec.class_count {
            return Err(ModelError::ShapeMismatch(format!(
                "{} class weights for {} classes",
                weights.len(),
                params.spec.class_count
            )));
        }
        if weights.iter().any(|w| w.is_nan() || *w <= 0.0 || !w.is_finite()) {
            return Err(ModelError::InvalidSpec("class weights must be positive".into()));
        }
    }
    let n_in = params.spec.input_dim();
    let class_count = params.spec.class_count;
    let mut grads = ModelGrads::zeros_like(params);
    let mut total_loss = 0.0;

    let hidden_count = params.spec.hidden.len();
    let mut pre: Vec<Vec<f64>> = vec![Vec::new(); hidden_count];
    let mut post: Vec<Vec<f64>> = vec![Vec::new(); hidden_count];
    let mut activated = vec![0.0; n_in];
    let mut d_input = vec![0.0; n_in];
    let mut total_weight = 0.0;

    for sample in batch {
        if sample.inputs.len() != n_in {
            return Err(ModelError::ShapeMismatch(format!(
                "sample has {} inputs, spec expects {n_in}",
                sample.inputs.len()
            )));
        }
        if sample.label >= class_count {
            return Err(ModelError::UnknownLabel(sample.label.to_string()));
        }
        if sample.branch >= params.branches.len() {
            return Err(ModelError::ShapeMismatch(format!("branch index {} out of range", sample.branch)));
        }

        for (a, (act, &x)) in activated.iter_mut().zip(params.activations.iter().zip(&sample.inputs)) {
            *a = act.eval(x);
        }

        // Gradients flow only through the active branch; inactive branches
        // contribute zero because their mask bit is zero.
        let branch = &params.branches[sample.branch];
        let bg = &mut grads.branches[sample.branch];
        let last = branch.layers.len() - 1;

        // forward with caches
        let scores = {
            let mut cur = activated.clone();
            for (i, layer) in branch.layers.iter().enumerate() {
                let mut out = vec![0.0; layer.out_dim];
                for r in 0..layer.out_dim {
                    let row = &layer.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
                    let mut acc = layer.bias[r];
                    for (w, x) in row.iter().zip(cur.iter()) {
                        acc += w * x;
                    }
                    out[r] = acc;
                }
                if i < last {
                    pre[i].clear();
                    pre[i].extend_from_slice(&out);
                    for v in &mut out {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                    post[i].clear();
                    post[i].extend_from_slice(&out);
                }
                cur = out;
            }
            cur
        };

        let weight = class_weights.map_or(1.0, |w| w[sample.label]);
        total_weight += weight;
        let (loss, probs) = softmax_ce(&scores, sample.label);
        total_loss += weight * loss;

        // dL/dscores = weight * (softmax - onehot)
        let mut delta = probs;
        delta[sample.label] -= 1.0;
        if weight != 1.0 {
            for d in &mut delta {
                *d *= weight;
            }
        }

        // walk layers backwards
        for i in (0..branch.layers.len()).rev() {
            let layer = &branch.layers[i];
            let input: &[f64] = if i == 0 { &activated } else { &post[i - 1] };
            let lg = &mut bg.layers[i];
            for r in 0..layer.out_dim {
                let d = delta[r];
                lg.db[r] += d;
                let row = &mut lg.dw[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            // propagate to the layer input
            let d_prev_len = layer.in_dim;
            let mut d_prev = vec![0.0; d_prev_len];
            for r in 0..layer.out_dim {
                let d = delta[r];
                let row = &layer.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (dp, w) in d_prev.iter_mut().zip(row) {
                    *dp += d * w;
                }
            }
            if i > 0 {
                // through the ReLU of hidden layer i-1
                for (dp, z) in d_prev.iter_mut().zip(&pre[i - 1]) {
                    if *z <= 0.0 {
                        *dp = 0.0;
                    }
                }
            }
            delta = d_prev;
        }
        d_input.copy_from_slice(&delta);

        for ((act, ag), (&x, &up)) in params
            .activations
            .iter()
            .zip(grads.activations.iter_mut())
            .zip(sample.inputs.iter().zip(&d_input))
        {
            act.accumulate(x, up, ag);
        }
    }

    let scale = 1.0 / total_weight;
    grads.scale(scale);
    Ok((total_loss * scale, grads))
}
