//! Trainable activation functions used in place of feature normalization.
//!
//! Two families are provided:
//!
//! * a "ladder" of soft steps, `y = (1/n) Σ erf(k_i (x - x_i))`, whose slopes
//!   `k_i` and positions `x_i` are trainable;
//! * a sum of Gaussian peaks, `y = Σ exp(-(x - x_i)² / w_i)`, whose widths
//!   `w_i` and positions `x_i` are trainable.
//!
//! Both come with analytic gradients, localized-learning gradient masking
//! (only the unit with the smallest accumulated position gradient moves per
//! update), and data-driven initialization that places positions at empirical
//! quantiles of a feature's training distribution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 2/sqrt(pi), the derivative of erf at 0.
pub const TWO_OVER_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Guaranteed absolute accuracy of [`erf`]. The bound is part of the
/// contract; the backing implementation is considerably more accurate.
pub const ERF_MAX_ABS_ERROR: f64 = 1.5e-7;

/// Floor applied to peak widths after every update so the division in the
/// peak function stays well-defined.
pub const WIDTH_FLOOR: f64 = 1e-6;

/// Error function.
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

#[derive(Debug, Error)]
pub enum ActivationError {
    #[error("activation needs at least one unit")]
    ZeroUnits,
    #[error("non-finite activation parameter")]
    NonFiniteParameter,
    #[error("non-finite input {0}")]
    NonFiniteInput(f64),
    #[error("initialization needs at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
}

// ── Step ladder ───────────────────────────────────────────────────────────────

/// Parameters of a ladder of `n` soft steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLadderParams {
    /// Slope of each step.
    pub k: Vec<f64>,
    /// Position of each step.
    pub x0: Vec<f64>,
}

impl StepLadderParams {
    pub fn new(k: Vec<f64>, x0: Vec<f64>) -> Result<Self, ActivationError> {
        if k.is_empty() || k.len() != x0.len() {
            return Err(ActivationError::ZeroUnits);
        }
        if k.iter().chain(x0.iter()).any(|v| !v.is_finite()) {
            return Err(ActivationError::NonFiniteParameter);
        }
        Ok(Self { k, x0 })
    }

    /// Unit slopes, positions evenly spaced inside (-1, 1).
    pub fn default_for(n: usize) -> Result<Self, ActivationError> {
        Self::new(vec![1.0; n], even_positions(n)?)
    }

    /// Positions at evenly spaced empirical quantiles of `samples`; slopes
    /// scaled to the inter-quantile gap.
    pub fn from_data(samples: &[f64], n: usize, cfg: &InitConfig) -> Result<Self, ActivationError> {
        let (x0, gap) = quantile_positions(samples, n, cfg)?;
        let k = match gap {
            Some(g) => vec![cfg.slope_scale / g; n],
            None => vec![1.0; n],
        };
        Self::new(k, x0)
    }

    pub fn n(&self) -> usize {
        self.k.len()
    }
}

/// `y = (1/n) Σ erf(k_i (x - x_i))`. Strictly inside (-1, 1) in exact
/// arithmetic; deep in the tails f64 rounding can land exactly on the bound.
pub fn step_forward(x: f64, params: &StepLadderParams) -> f64 {
    let n = params.n() as f64;
    let mut sum = 0.0;
    for (&k, &x0) in params.k.iter().zip(&params.x0) {
        sum += erf(k * (x - x0));
    }
    sum / n
}

/// Gradients of the step ladder with respect to the input and both parameter
/// vectors, scaled by `upstream`.
#[derive(Debug, Clone)]
pub struct StepGrads {
    pub dx: f64,
    pub dk: Vec<f64>,
    pub dx0: Vec<f64>,
}

pub fn step_backward(x: f64, params: &StepLadderParams, upstream: f64) -> StepGrads {
    let n = params.n();
    let inv_n = 1.0 / n as f64;
    let mut dx = 0.0;
    let mut dk = Vec::with_capacity(n);
    let mut dx0 = Vec::with_capacity(n);
    for (&k, &x0) in params.k.iter().zip(&params.x0) {
        let u = k * (x - x0);
        // d/du erf(u) = 2/sqrt(pi) * exp(-u^2)
        let g = upstream * inv_n * TWO_OVER_SQRT_PI * (-u * u).exp();
        dk.push(g * (x - x0));
        dx0.push(g * (-k));
        dx += g * k;
    }
    StepGrads { dx, dk, dx0 }
}

// ── Peak sum ──────────────────────────────────────────────────────────────────

/// Parameters of a sum of `n` Gaussian peaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakParams {
    /// Width of each peak; kept `>= WIDTH_FLOOR`.
    pub w: Vec<f64>,
    /// Position of each peak.
    pub x0: Vec<f64>,
}

impl PeakParams {
    pub fn new(w: Vec<f64>, x0: Vec<f64>) -> Result<Self, ActivationError> {
        if w.is_empty() || w.len() != x0.len() {
            return Err(ActivationError::ZeroUnits);
        }
        if w.iter().chain(x0.iter()).any(|v| !v.is_finite()) {
            return Err(ActivationError::NonFiniteParameter);
        }
        let mut p = Self { w, x0 };
        p.clamp_widths();
        Ok(p)
    }

    /// Unit widths, positions evenly spaced inside (-1, 1).
    pub fn default_for(n: usize) -> Result<Self, ActivationError> {
        Self::new(vec![1.0; n], even_positions(n)?)
    }

    /// Positions at evenly spaced empirical quantiles; widths set to the
    /// squared inter-quantile gap.
    pub fn from_data(samples: &[f64], n: usize, cfg: &InitConfig) -> Result<Self, ActivationError> {
        let (x0, gap) = quantile_positions(samples, n, cfg)?;
        let w = match gap {
            Some(g) => vec![(g * g).max(WIDTH_FLOOR); n],
            None => vec![1.0; n],
        };
        Self::new(w, x0)
    }

    pub fn n(&self) -> usize {
        self.w.len()
    }

    /// Re-apply the width floor. Call after every parameter update.
    pub fn clamp_widths(&mut self) {
        for w in &mut self.w {
            if *w < WIDTH_FLOOR {
                *w = WIDTH_FLOOR;
            }
        }
    }
}

/// `y = Σ exp(-(x - x_i)² / w_i)`. Positive, bounded by `n`, and may exceed 1
/// when peaks overlap.
pub fn peak_forward(x: f64, params: &PeakParams) -> f64 {
    let mut sum = 0.0;
    for (&w, &x0) in params.w.iter().zip(&params.x0) {
        let d = x - x0;
        sum += (-d * d / w).exp();
    }
    sum
}

/// Gradients of the peak sum, scaled by `upstream`.
#[derive(Debug, Clone)]
pub struct PeakGrads {
    pub dx: f64,
    pub dw: Vec<f64>,
    pub dx0: Vec<f64>,
}

pub fn peak_backward(x: f64, params: &PeakParams, upstream: f64) -> PeakGrads {
    let n = params.n();
    let mut dx = 0.0;
    let mut dw = Vec::with_capacity(n);
    let mut dx0 = Vec::with_capacity(n);
    for (&w, &x0) in params.w.iter().zip(&params.x0) {
        let d = x - x0;
        let e = (-d * d / w).exp();
        let g_x0 = upstream * e * 2.0 * d / w;
        dx0.push(g_x0);
        dw.push(upstream * e * d * d / (w * w));
        dx -= g_x0;
    }
    PeakGrads { dx, dw, dx0 }
}

// ── Localized learning ────────────────────────────────────────────────────────

/// Index of the unit allowed to move under localized learning: the one whose
/// accumulated position gradient has the least absolute value. Ties break to
/// the lowest index.
pub fn localized_keep_index(position_grads: &[f64]) -> usize {
    let mut best = 0;
    let mut best_abs = f64::INFINITY;
    for (i, g) in position_grads.iter().enumerate() {
        let a = g.abs();
        if a < best_abs {
            best_abs = a;
            best = i;
        }
    }
    best
}

/// Zero every (slope-or-width, position) gradient pair except the kept one.
/// With a single unit this is the identity.
pub fn localize_gradients(paired: &mut [f64], positions: &mut [f64]) {
    debug_assert_eq!(paired.len(), positions.len());
    if positions.len() <= 1 {
        return;
    }
    let keep = localized_keep_index(positions);
    for i in 0..positions.len() {
        if i != keep {
            paired[i] = 0.0;
            positions[i] = 0.0;
        }
    }
}

// ── Data-driven initialization ────────────────────────────────────────────────

/// Knobs for quantile-based initialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitConfig {
    /// Numerator of the slope rule `k = slope_scale / gap`.
    pub slope_scale: f64,
    /// Smallest inter-quantile gap treated as non-degenerate.
    pub min_gap: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { slope_scale: 1.0, min_gap: 1e-9 }
    }
}

/// Empirical quantile by sorted-order linear interpolation, `q` in [0, 1].
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let t = pos - lo as f64;
        sorted[lo] * (1.0 - t) + sorted[hi] * t
    }
}

/// Positions at quantiles (i+1)/(n+1) and the gap used to scale slopes and
/// widths. Returns `gap = None` for a degenerate (constant) feature, in which
/// case all positions collapse onto the constant value.
fn quantile_positions(
    samples: &[f64],
    n: usize,
    cfg: &InitConfig,
) -> Result<(Vec<f64>, Option<f64>), ActivationError> {
    if n == 0 {
        return Err(ActivationError::ZeroUnits);
    }
    if samples.len() < n {
        return Err(ActivationError::TooFewSamples { needed: n, got: samples.len() });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(ActivationError::NonFiniteParameter);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let x0: Vec<f64> = (0..n)
        .map(|i| empirical_quantile(&sorted, (i + 1) as f64 / (n + 1) as f64))
        .collect();
    // Spread measured over the bulk of the distribution, shared by all units.
    let span = empirical_quantile(&sorted, 0.9) - empirical_quantile(&sorted, 0.1);
    let gap = span / n as f64;
    if gap < cfg.min_gap {
        let c = empirical_quantile(&sorted, 0.5);
        Ok((vec![c; n], None))
    } else {
        Ok((x0, Some(gap)))
    }
}

fn even_positions(n: usize) -> Result<Vec<f64>, ActivationError> {
    if n == 0 {
        return Err(ActivationError::ZeroUnits);
    }
    Ok((0..n).map(|i| -1.0 + 2.0 * (i + 1) as f64 / (n + 1) as f64).collect())
}

/// Sample an activation on a uniform grid, for plotting dumps.
pub fn curve(eval: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> Vec<(f64, f64)> {
    assert!(points >= 2 && hi > lo);
    (0..points)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            (x, eval(x))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference erf values, 16 significant digits.
    const ERF_REFERENCE: &[(f64, f64)] = &[
        (0.0, 0.0),
        (0.1, 0.1124629160182849),
        (0.5, 0.5204998778130465),
        (1.0, 0.8427007929497149),
        (1.5, 0.9661051464753107),
        (2.0, 0.9953222650189527),
        (3.0, 0.9999779095030014),
        (4.0, 0.9999999845827421),
    ];

    #[test]
    fn erf_meets_accuracy_contract() {
        for &(x, want) in ERF_REFERENCE {
            assert!((erf(x) - want).abs() <= ERF_MAX_ABS_ERROR, "erf({x})");
            assert!((erf(-x) + want).abs() <= ERF_MAX_ABS_ERROR, "erf(-{x})");
        }
    }

    #[test]
    fn step_at_center_is_zero() {
        let p = StepLadderParams::new(vec![2.0], vec![0.7]).unwrap();
        assert_eq!(step_forward(0.7, &p), 0.0);
    }

    #[test]
    fn step_saturates_toward_one() {
        let p = StepLadderParams::new(vec![1.5], vec![0.0]).unwrap();
        assert!((step_forward(1e6, &p) - 1.0).abs() < 1e-12);
        assert!(step_forward(1e6, &p) <= 1.0);
        // strictly below 1 while erf has not rounded to 1 yet
        assert!(step_forward(3.0, &p) < 1.0);
    }

    #[test]
    fn step_two_units_matches_reference() {
        // (erf(0) + erf(-2)) / 2 = -erf(2)/2
        let p = StepLadderParams::new(vec![1.0, 1.0], vec![0.0, 2.0]).unwrap();
        let want = -0.9953222650189527 / 2.0;
        assert!((step_forward(0.0, &p) - want).abs() < 1e-12);
    }

    #[test]
    fn step_output_stays_inside_unit_interval() {
        let p = StepLadderParams::new(vec![5.0, 0.3, 1.0], vec![-2.0, 0.0, 2.0]).unwrap();
        for i in -100..=100 {
            let y = step_forward(i as f64 * 0.037, &p);
            assert!(y > -1.0 && y < 1.0);
        }
        // far in the tails the sum may round onto the bound, never past it
        for x in [-1e9, 1e9] {
            let y = step_forward(x, &p);
            assert!((-1.0..=1.0).contains(&y));
        }
    }

    #[test]
    fn step_monotone_for_nonnegative_slopes() {
        let p = StepLadderParams::new(vec![0.5, 2.0, 0.0], vec![-1.0, 0.5, 3.0]).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..400 {
            let y = step_forward(-4.0 + i as f64 * 0.02, &p);
            assert!(y >= prev);
            prev = y;
        }
    }

    #[test]
    fn peak_center_is_one() {
        let p = PeakParams::new(vec![0.5], vec![1.2]).unwrap();
        assert_eq!(peak_forward(1.2, &p), 1.0);
    }

    #[test]
    fn overlapping_peaks_exceed_one() {
        let p = PeakParams::new(vec![1.0, 2.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(peak_forward(0.0, &p), 2.0);
    }

    #[test]
    fn peak_unit_offset_value() {
        let p = PeakParams::new(vec![1.0], vec![0.0]).unwrap();
        assert!((peak_forward(1.0, &p) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn peak_positive_and_bounded() {
        let p = PeakParams::new(vec![0.3, 1.0, 2.0], vec![-1.0, 0.0, 1.0]).unwrap();
        for i in -80..=80 {
            let y = peak_forward(i as f64 * 0.1, &p);
            assert!(y > 0.0 && y <= 3.0);
        }
    }

    #[test]
    fn step_gradient_peaks_at_center() {
        let p = StepLadderParams::new(vec![1.7], vec![0.3]).unwrap();
        let g = step_backward(0.3, &p, 1.0);
        assert!((g.dx0[0].abs() - TWO_OVER_SQRT_PI * 1.7).abs() < 1e-12);
        assert_eq!(g.dk[0], 0.0); // x - x0 = 0
    }

    #[test]
    fn step_gradient_decays_far_away() {
        let p = StepLadderParams::new(vec![2.0], vec![0.0]).unwrap();
        let g = step_backward(30.0, &p, 1.0);
        assert!(g.dk[0].abs() < 1e-300);
        assert!(g.dx0[0].abs() < 1e-300);
    }

    #[test]
    fn peak_gradients_vanish_at_center() {
        let p = PeakParams::new(vec![0.8], vec![-0.4]).unwrap();
        let g = peak_backward(-0.4, &p, 1.0);
        assert_eq!(g.dw[0], 0.0);
        assert_eq!(g.dx0[0], 0.0);
    }

    fn central_diff(mut f: impl FnMut(f64) -> f64, at: f64) -> f64 {
        let h = 1e-5 * at.abs().max(1.0);
        (f(at + h) - f(at - h)) / (2.0 * h)
    }

    fn assert_grad_close(analytic: f64, numeric: f64) {
        let err = (analytic - numeric).abs();
        let tol = 1e-4 * analytic.abs().max(numeric.abs()) + 1e-8;
        assert!(err <= tol, "analytic {analytic} vs numeric {numeric}");
    }

    #[test]
    fn step_backward_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        for _ in 0..400 {
            let n = rng.random_range(1..=4);
            let k: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..2.5)).collect();
            let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = StepLadderParams::new(k, x0).unwrap();
            let x = rng.random_range(-2.5..2.5);
            let up = rng.random_range(0.5..2.0);
            let g = step_backward(x, &p, up);
            assert_grad_close(g.dx, up * central_diff(|v| step_forward(v, &p), x));
            for i in 0..n {
                let mut pk = p.clone();
                let fd_k = central_diff(
                    |v| {
                        pk.k[i] = v;
                        step_forward(x, &pk)
                    },
                    p.k[i],
                );
                assert_grad_close(g.dk[i], up * fd_k);
                let mut px = p.clone();
                let fd_x0 = central_diff(
                    |v| {
                        px.x0[i] = v;
                        step_forward(x, &px)
                    },
                    p.x0[i],
                );
                assert_grad_close(g.dx0[i], up * fd_x0);
            }
        }
    }

    #[test]
    fn peak_backward_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(12);
        for _ in 0..400 {
            let n = rng.random_range(1..=4);
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..4.0)).collect();
            let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = PeakParams::new(w, x0).unwrap();
            let x = rng.random_range(-2.5..2.5);
            let up = rng.random_range(0.5..2.0);
            let g = peak_backward(x, &p, up);
            assert_grad_close(g.dx, up * central_diff(|v| peak_forward(v, &p), x));
            for i in 0..n {
                let mut pw = p.clone();
                let fd_w = central_diff(
                    |v| {
                        pw.w[i] = v;
                        peak_forward(x, &pw)
                    },
                    p.w[i],
                );
                assert_grad_close(g.dw[i], up * fd_w);
                let mut px = p.clone();
                let fd_x0 = central_diff(
                    |v| {
                        px.x0[i] = v;
                        peak_forward(x, &px)
                    },
                    p.x0[i],
                );
                assert_grad_close(g.dx0[i], up * fd_x0);
            }
        }
    }

    #[test]
    fn peak_width_doubling_scales_gradients_consistently() {
        // At fixed offset d: dw ∝ exp(-d²/w)/w², dx0 ∝ exp(-d²/w)/w.
        let d = 0.9f64;
        let w = 0.7f64;
        let p1 = PeakParams::new(vec![w], vec![0.0]).unwrap();
        let p2 = PeakParams::new(vec![2.0 * w], vec![0.0]).unwrap();
        let g1 = peak_backward(d, &p1, 1.0);
        let g2 = peak_backward(d, &p2, 1.0);
        let ratio_w = (-d * d / (2.0 * w)).exp() / (4.0 * w * w) / ((-d * d / w).exp() / (w * w));
        let ratio_x0 = (-d * d / (2.0 * w)).exp() / (2.0 * w) / ((-d * d / w).exp() / w);
        assert!((g2.dw[0] / g1.dw[0] - ratio_w).abs() < 1e-12);
        assert!((g2.dx0[0] / g1.dx0[0] - ratio_x0).abs() < 1e-12);
    }

    #[test]
    fn localization_single_unit_is_identity() {
        let mut a = vec![0.7];
        let mut p = vec![-0.3];
        localize_gradients(&mut a, &mut p);
        assert_eq!(a, vec![0.7]);
        assert_eq!(p, vec![-0.3]);
    }

    #[test]
    fn localization_keeps_least_absolute_gradient() {
        let mut a = vec![1.0, 2.0, 3.0];
        let mut p = vec![0.5, -0.1, 0.9];
        localize_gradients(&mut a, &mut p);
        assert_eq!(a, vec![0.0, 2.0, 0.0]);
        assert_eq!(p, vec![0.0, -0.1, 0.0]);
    }

    #[test]
    fn localization_tie_breaks_to_lowest_index() {
        let mut a = vec![1.0, 1.0];
        let mut p = vec![0.2, -0.2];
        localize_gradients(&mut a, &mut p);
        assert_eq!(p, vec![0.2, 0.0]);
    }

    #[test]
    fn init_uniform_samples_median() {
        let samples: Vec<f64> = (0..1001).map(|i| i as f64 / 1000.0).collect();
        let p = StepLadderParams::from_data(&samples, 1, &InitConfig::default()).unwrap();
        assert!((p.x0[0] - 0.5).abs() < 1e-3);
        // span(q10..q90) = 0.8 → k = 1/0.8
        assert!((p.k[0] - 1.25).abs() < 1e-2);
    }

    #[test]
    fn init_two_units_hits_thirds() {
        let samples: Vec<f64> = (0..999).map(|i| i as f64 / 998.0).collect();
        let p = StepLadderParams::from_data(&samples, 2, &InitConfig::default()).unwrap();
        assert!((p.x0[0] - 1.0 / 3.0).abs() < 2e-3);
        assert!((p.x0[1] - 2.0 / 3.0).abs() < 2e-3);
    }

    #[test]
    fn init_constant_samples_fall_back() {
        let samples = vec![3.0; 64];
        let s = StepLadderParams::from_data(&samples, 2, &InitConfig::default()).unwrap();
        assert_eq!(s.x0, vec![3.0, 3.0]);
        assert_eq!(s.k, vec![1.0, 1.0]);
        let p = PeakParams::from_data(&samples, 2, &InitConfig::default()).unwrap();
        assert_eq!(p.x0, vec![3.0, 3.0]);
        assert_eq!(p.w, vec![1.0, 1.0]);
    }

    #[test]
    fn init_bimodal_peaks_land_on_modes() {
        let mut samples = vec![0.0; 500];
        samples.extend(vec![10.0; 500]);
        let p = PeakParams::from_data(&samples, 2, &InitConfig::default()).unwrap();
        assert!((p.x0[0] - 0.0).abs() < 0.2);
        assert!((p.x0[1] - 10.0).abs() < 0.2);
    }

    #[test]
    fn init_too_few_samples_errors() {
        let err = StepLadderParams::from_data(&[1.0], 3, &InitConfig::default()).unwrap_err();
        assert!(matches!(err, ActivationError::TooFewSamples { needed: 3, got: 1 }));
    }

    #[test]
    fn width_floor_enforced() {
        let p = PeakParams::new(vec![1e-12], vec![0.0]).unwrap();
        assert_eq!(p.w[0], WIDTH_FLOOR);
    }
}
