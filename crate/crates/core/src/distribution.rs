//! Per-linkage-set Gaussian models.
//!
//! Each [`SamplingModel`] keeps a mean and covariance over all variables its
//! element involves (sampled and conditioned-on), a distribution multiplier,
//! and an anticipated mean shift over the sampled variables. Parameters are
//! either re-estimated from the selection every generation or blended with
//! the previous generation's values at a learning rate.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linkage::FosElement;

pub const MULTIPLIER_INCREASE: f64 = 1.0 / 0.9;
pub const CLASSIC_MULTIPLIER_DECREASE: f64 = 0.9;
pub const ASYMMETRIC_MULTIPLIER_DECREASE: f64 = 0.95;
pub const SDR_THRESHOLD: f64 = 1.0;
/// Step length of the anticipated mean shift, in multiples of the shift.
pub const AMS_DELTA: f64 = 2.0;
/// Pivots at or below this value count as a failed factorization.
pub const PIVOT_FLOOR: f64 = 1e-300;

/// Parameters `(a0, a1, a2)` of the learning-rate function
/// `1 - exp(a0 * |S|^a1 / kappa^a2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alphas {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Alphas {
    pub const fn new(a0: f64, a1: f64, a2: f64) -> Self {
        Self { a0, a1, a2 }
    }

    /// Regressed covariance learning-rate parameters.
    pub const COVARIANCE: Alphas = Alphas::new(-1.01, 1.32, 1.94);
    /// Regressed AMS learning-rate parameters.
    pub const AMS: Alphas = Alphas::new(-2.95, 0.47, 0.87);

    pub fn as_array(&self) -> [f64; 3] {
        [self.a0, self.a1, self.a2]
    }
}

/// Learning rate for a selection of `selection_size` solutions and a linkage
/// set spanning `kappa` variables, clamped to `[0, 1]`.
pub fn learning_rate(alphas: Alphas, selection_size: usize, kappa: usize) -> f64 {
    let s = selection_size as f64;
    let k = kappa as f64;
    let eta = 1.0 - (alphas.a0 * s.powf(alphas.a1) / k.powf(alphas.a2)).exp();
    if eta.is_nan() {
        return 0.0;
    }
    eta.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub eta_cov: f64,
    pub eta_ams: f64,
}

impl LearningRates {
    pub fn new(eta_cov: f64, eta_ams: f64) -> Self {
        assert!((0.0..=1.0).contains(&eta_cov) && (0.0..=1.0).contains(&eta_ams), "learning rates must lie in [0, 1]");
        Self { eta_cov, eta_ams }
    }

    /// Rates that reduce incremental learning to full re-estimation.
    pub fn full() -> Self {
        Self::new(1.0, 1.0)
    }

    pub fn regressed(cov: Alphas, ams: Alphas, selection_size: usize, kappa: usize) -> Self {
        Self::new(learning_rate(cov, selection_size, kappa), learning_rate(ams, selection_size, kappa))
    }
}

/// Maximum-likelihood mean and covariance (normalized by `|S|`) of the
/// selection restricted to `involved`.
pub fn ml_estimate(selection: &[&[f64]], involved: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let k = involved.len();
    let n = selection.len() as f64;
    let mut mean = DVector::zeros(k);
    for x in selection {
        for (a, &v) in involved.iter().enumerate() {
            mean[a] += x[v];
        }
    }
    mean /= n;
    let mut cov = DMatrix::zeros(k, k);
    let mut d = vec![0.0; k];
    for x in selection {
        for (a, &v) in involved.iter().enumerate() {
            d[a] = x[v] - mean[a];
        }
        for a in 0..k {
            for b in a..k {
                cov[(a, b)] += d[a] * d[b];
            }
        }
    }
    for a in 0..k {
        for b in a..k {
            let c = cov[(a, b)] / n;
            cov[(a, b)] = c;
            cov[(b, a)] = c;
        }
    }
    (mean, cov)
}

fn ml_variance(selection: &[&[f64]], v: usize) -> f64 {
    let n = selection.len() as f64;
    let mean = selection.iter().map(|x| x[v]).sum::<f64>() / n;
    selection.iter().map(|x| (x[v] - mean) * (x[v] - mean)).sum::<f64>() / n
}

/// `(1 - eta) * prev + eta * fresh`, elementwise.
pub fn incremental_update(prev: &[f64], fresh: &[f64], eta: f64) -> Vec<f64> {
    assert_eq!(prev.len(), fresh.len(), "shape mismatch");
    prev.iter().zip(fresh).map(|(p, f)| (1.0 - eta) * p + eta * f).collect()
}

pub fn incremental_update_matrix(prev: &DMatrix<f64>, fresh: &DMatrix<f64>, eta: f64) -> DMatrix<f64> {
    assert_eq!(prev.shape(), fresh.shape(), "shape mismatch");
    DMatrix::from_vec(prev.nrows(), prev.ncols(), incremental_update(prev.as_slice(), fresh.as_slice(), eta))
}

/// Lower-triangular Cholesky factor, or `None` when a pivot is not above
/// [`PIVOT_FLOOR`].
pub fn cholesky(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d.is_nan() || d <= PIVOT_FLOOR {
            return None;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

/// Solves `L y = b` for lower-triangular `L`.
fn forward_substitute(l: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Solves `L^T y = b` for lower-triangular `L`.
fn backward_substitute(l: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

#[derive(Debug, Clone, PartialEq)]
enum Factor {
    Stale,
    /// Factor of `c_mult` times the (conditional) covariance of the sampled
    /// variables, and the regression of the sampled on the conditioning
    /// variables when the element is conditional.
    Cholesky {
        lower: DMatrix<f64>,
        regression: Option<DMatrix<f64>>,
    },
    /// Independent normals with these standard deviations.
    Univariate { std: DVector<f64> },
}

/// Gaussian state of one linkage set.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingModel {
    element: FosElement,
    involved: Vec<usize>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub c_mult: f64,
    /// Anticipated mean shift over the sampled variables.
    pub ams_shift: DVector<f64>,
    /// Selection mean over the sampled variables from the previous update.
    pub previous_mean: Option<DVector<f64>>,
    factor: Factor,
}

impl SamplingModel {
    /// A model with the given parameters and a current factorization.
    pub fn new(element: FosElement, mean: DVector<f64>, cov: DMatrix<f64>, c_mult: f64) -> Self {
        let involved = element.involved();
        assert_eq!(mean.len(), involved.len());
        assert_eq!(cov.shape(), (involved.len(), involved.len()));
        let n0 = element.sampled().len();
        let mut m = Self {
            element,
            involved,
            mean,
            cov,
            c_mult,
            ams_shift: DVector::zeros(n0),
            previous_mean: None,
            factor: Factor::Stale,
        };
        m.refresh_factor();
        m
    }

    /// A model that has not seen any selection yet.
    pub fn unfitted(element: FosElement) -> Self {
        let involved = element.involved();
        let k = involved.len();
        let n0 = element.sampled().len();
        Self {
            element,
            involved,
            mean: DVector::zeros(k),
            cov: DMatrix::zeros(k, k),
            c_mult: 1.0,
            ams_shift: DVector::zeros(n0),
            previous_mean: None,
            factor: Factor::Stale,
        }
    }

    pub fn element(&self) -> &FosElement {
        &self.element
    }

    /// Sampled variables followed by conditioning variables.
    pub fn involved(&self) -> &[usize] {
        &self.involved
    }

    pub fn sampled_len(&self) -> usize {
        self.element.sampled().len()
    }

    pub fn is_univariate_fallback(&self) -> bool {
        matches!(self.factor, Factor::Univariate { .. })
    }

    /// Recomputes the sampling factor for `c_mult * cov`. Returns `true` when
    /// the factorization failed and the model fell back to independent
    /// per-variable sampling.
    pub fn refresh_factor(&mut self) -> bool {
        let n0 = self.sampled_len();
        let k = self.involved.len();
        let s00 = self.cov.view((0, 0), (n0, n0)).clone_owned();
        let attempt = if n0 == k {
            cholesky(&(&s00 * self.c_mult)).map(|lower| Factor::Cholesky { lower, regression: None })
        } else {
            let n1 = k - n0;
            let s11 = self.cov.view((n0, n0), (n1, n1)).clone_owned();
            let s10 = self.cov.view((n0, 0), (n1, n0)).clone_owned();
            cholesky(&s11).and_then(|l11| {
                // B^T = S11^{-1} S10, column by column
                let mut bt = DMatrix::zeros(n1, n0);
                for c in 0..n0 {
                    let col: Vec<f64> = s10.column(c).iter().copied().collect();
                    let y = backward_substitute(&l11, &forward_substitute(&l11, &col));
                    for r in 0..n1 {
                        bt[(r, c)] = y[r];
                    }
                }
                let b = bt.transpose();
                let mut cond = &s00 - &b * &s10;
                for i in 0..n0 {
                    for j in (i + 1)..n0 {
                        let avg = 0.5 * (cond[(i, j)] + cond[(j, i)]);
                        cond[(i, j)] = avg;
                        cond[(j, i)] = avg;
                    }
                }
                cholesky(&(cond * self.c_mult)).map(|lower| Factor::Cholesky { lower, regression: Some(b) })
            })
        };
        match attempt {
            Some(f) => {
                self.factor = f;
                false
            }
            None => {
                let std = DVector::from_iterator(n0, (0..n0).map(|i| (self.c_mult * s00[(i, i)].max(0.0)).sqrt()));
                self.factor = Factor::Univariate { std };
                true
            }
        }
    }

    /// Mean of the sampled variables given the conditioning values. Absent
    /// values (or a univariate fallback) give the marginal mean.
    pub fn conditional_mean(&self, conditioning: Option<&[f64]>) -> DVector<f64> {
        let n0 = self.sampled_len();
        let mut m = self.mean.rows(0, n0).clone_owned();
        if let (Factor::Cholesky { regression: Some(b), .. }, Some(v)) = (&self.factor, conditioning) {
            let n1 = self.involved.len() - n0;
            let innovation = DVector::from_iterator(n1, (0..n1).map(|j| v[j] - self.mean[n0 + j]));
            m += b * innovation;
        }
        m
    }

    /// Draws values for the sampled variables.
    pub fn sample<R: Rng + ?Sized>(&self, conditioning: Option<&[f64]>, rng: &mut R) -> DVector<f64> {
        let n0 = self.sampled_len();
        let mut x = self.conditional_mean(conditioning);
        let z: Vec<f64> = (0..n0).map(|_| rng.sample(StandardNormal)).collect();
        match &self.factor {
            Factor::Stale => panic!("sampling factor is not current"),
            Factor::Cholesky { lower, .. } => {
                for i in 0..n0 {
                    let mut s = 0.0;
                    for (j, zj) in z.iter().enumerate().take(i + 1) {
                        s += lower[(i, j)] * zj;
                    }
                    x[i] += s;
                }
            }
            Factor::Univariate { std } => {
                for i in 0..n0 {
                    x[i] += std[i] * z[i];
                }
            }
        }
        x
    }

    /// Largest absolute coordinate of `avg_offset` along the principal axes of
    /// the sampling distribution (multiplier included), i.e. `max |L^-1 d|`
    /// with `L L^T = c_mult * cov`.
    pub fn standard_deviation_ratio(&self, avg_offset: &[f64]) -> f64 {
        let z: Vec<f64> = match &self.factor {
            Factor::Stale => panic!("sampling factor is not current"),
            Factor::Cholesky { lower, .. } => forward_substitute(lower, avg_offset),
            Factor::Univariate { std } => avg_offset
                .iter()
                .zip(std.iter())
                .map(|(&d, &s)| {
                    if s > 0.0 {
                        d / s
                    } else if d == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                })
                .collect(),
        };
        z.into_iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Whether parameters changed since the last [`SamplingModel::refresh_factor`].
    pub fn is_stale(&self) -> bool {
        matches!(self.factor, Factor::Stale)
    }

    fn mark_stale(&mut self) {
        self.factor = Factor::Stale;
    }
}

fn same_variables(a: &[usize], b: &[usize]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    a == b
}

/// Seed covariance for `element` built from the previous generation's models.
///
/// A previous model over exactly the same variables is reused as is.
/// Otherwise the largest previous models that fit inside the not-yet-covered
/// variables are copied in greedily (ties broken with `rng`); variables left
/// uncovered get their ML variance from `selection` and zero covariances.
pub fn transfer_covariance<R: Rng + ?Sized>(
    prev_models: &[SamplingModel],
    element: &FosElement,
    selection: &[&[f64]],
    rng: &mut R,
) -> DMatrix<f64> {
    let involved = element.involved();
    let k = involved.len();
    let pos: HashMap<usize, usize> = involved.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut seed = DMatrix::zeros(k, k);
    let copy_from = |seed: &mut DMatrix<f64>, m: &SamplingModel| {
        for (a, va) in m.involved().iter().enumerate() {
            for (b, vb) in m.involved().iter().enumerate() {
                seed[(pos[va], pos[vb])] = m.cov[(a, b)];
            }
        }
    };

    if let Some(m) = prev_models.iter().find(|m| same_variables(m.involved(), &involved)) {
        copy_from(&mut seed, m);
        return seed;
    }

    let mut remaining = vec![false; k];
    for r in remaining.iter_mut() {
        *r = true;
    }
    let mut left = k;
    let mut pool: Vec<&SamplingModel> = prev_models.iter().collect();
    while left > 0 {
        let fits = |m: &SamplingModel| m.involved().iter().all(|v| pos.get(v).is_some_and(|&p| remaining[p]));
        let candidates: Vec<usize> = (0..pool.len()).filter(|&i| fits(pool[i])).collect();
        let Some(largest) = candidates.iter().map(|&i| pool[i].involved().len()).max() else {
            break;
        };
        let ties: Vec<usize> = candidates
            .into_iter()
            .filter(|&i| pool[i].involved().len() == largest)
            .collect();
        let pick = ties[if ties.len() > 1 { rng.random_range(0..ties.len()) } else { 0 }];
        let chosen = pool.remove(pick);
        copy_from(&mut seed, chosen);
        for v in chosen.involved() {
            remaining[pos[v]] = false;
            left -= 1;
        }
    }
    for (p, &v) in involved.iter().enumerate() {
        if remaining[p] {
            seed[(p, p)] = ml_variance(selection, v);
        }
    }
    seed
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    /// Blend with the seed covariance and previous AMS at the given rates.
    Incremental,
    /// Replace everything with fresh maximum-likelihood estimates.
    FullReestimate,
}

/// Refits `model` to `selection`. `seed` is the covariance carried over from
/// the previous generation (see [`transfer_covariance`]); it is ignored in
/// [`UpdateMode::FullReestimate`]. Returns `true` when sampling fell back to
/// independent variables.
pub fn update_model(
    model: &mut SamplingModel,
    selection: &[&[f64]],
    seed: &DMatrix<f64>,
    rates: LearningRates,
    mode: UpdateMode,
) -> bool {
    assert!(!selection.is_empty(), "selection must not be empty");
    let (mean, ml_cov) = ml_estimate(selection, &model.involved);
    let n0 = model.sampled_len();
    let sampled_mean = mean.rows(0, n0).clone_owned();
    let target_shift = match &model.previous_mean {
        Some(prev) => &sampled_mean - prev,
        None => DVector::zeros(n0),
    };
    match mode {
        UpdateMode::FullReestimate => {
            model.cov = ml_cov;
            model.ams_shift = target_shift;
        }
        UpdateMode::Incremental => {
            model.cov = incremental_update_matrix(seed, &ml_cov, rates.eta_cov);
            model.ams_shift = DVector::from_vec(incremental_update(
                model.ams_shift.as_slice(),
                target_shift.as_slice(),
                rates.eta_ams,
            ));
        }
    }
    model.mean = mean;
    model.previous_mean = Some(sampled_mean);
    model.refresh_factor()
}

/// Outcome of one element's variation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImprovementStats {
    pub improved: bool,
    /// Standard-deviation ratio of the improvements; ignored without any.
    pub sdr: f64,
}

/// Adaptive variance scaling step. `nis` is the current no-improvement
/// stretch; below `nis_max` the multiplier never drops under 1.
pub fn update_multiplier(model: &mut SamplingModel, stats: ImprovementStats, nis: usize, nis_max: usize, decrease: f64) {
    if stats.improved {
        model.c_mult = model.c_mult.max(1.0);
        if stats.sdr > SDR_THRESHOLD {
            model.c_mult *= MULTIPLIER_INCREASE;
        }
    } else {
        let before = model.c_mult;
        model.c_mult *= decrease;
        // the floor of 1 only stops a shrink, it never lifts a multiplier
        // that already went below 1 during an earlier stagnation phase
        if nis < nis_max {
            model.c_mult = model.c_mult.max(before.min(1.0));
        }
    }
    model.mark_stale();
}

/// Number of solutions that receive the mean shift per linkage set.
pub fn ams_count(tau: f64, population_size: usize) -> usize {
    (0.5 * tau * (population_size as f64 - 1.0)).floor().max(0.0) as usize
}

/// Shifts freshly sampled values by `delta * c_mult * ams_shift`.
pub fn apply_ams(sampled: &mut [f64], model: &SamplingModel, delta: f64) {
    for (v, s) in sampled.iter_mut().zip(model.ams_shift.iter()) {
        *v += delta * model.c_mult * s;
    }
}
