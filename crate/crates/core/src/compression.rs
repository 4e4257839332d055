//! Quantization planning: UQN noise levels, transform-coding rate allocation,
//! quantization-noise covariance models and a fixed-rate Lloyd-Max quantizer.
//!
//! With perfect CSI each receiver solves
//! `R = sum_i log2(1 + (rho*gamma_i + 1)/Delta)` for its uniform quantization
//! noise level `Delta` and splits the fronthaul rate across the decorrelated
//! components exactly. With estimated CSI the closed-form approximate
//! allocation is used instead; components whose allocation goes negative are
//! clamped to zero rate, which represents the component as *erased*
//! (reconstructed as its zero mean, i.e. infinite effective noise) rather
//! than as a finite-noise channel.

use crate::dimred::ReducedChannelSet;
use crate::numerics::{bisect_monotone, hermitian_part, BISECT_DEFAULT_TOL};
use crate::{C64, CMat, CVec, Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Auto-widening cap for the UQN bisection bracket.
const BRACKET_WIDEN_STEPS: usize = 64;

/// Fronthaul rate consumed by a set of components at noise level `delta`:
/// `sum_i log2(1 + (rho*gamma_i + 1)/delta)`.
pub fn uqn_rate(gammas: &[f64], rho: f64, delta: f64) -> f64 {
    gammas
        .iter()
        .map(|&g| (1.0 + (rho * g + 1.0) / delta).log2())
        .sum()
}

/// Solve the UQN level `Delta_l` for receiver `l` at per-receiver rate `r`.
///
/// Bisection on a monotone-decreasing rate function; the initial bracket
/// `[1e-12, sum_i (rho*gamma_i + 1) * 2^r]` is widened by doubling/halving
/// until valid. The residual meets [`BISECT_DEFAULT_TOL`] bpcu.
pub fn solve_uqn_delta(rcs: &ReducedChannelSet, l: usize, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidInput(format!(
            "fronthaul rate must be positive, got {r}"
        )));
    }
    let gammas: Vec<f64> = rcs.eig[l].values.iter().cloned().collect();
    let rho = rcs.rho;
    let f = |d: f64| uqn_rate(&gammas, rho, d);

    let mut lo = 1e-12;
    let mut hi = gammas.iter().map(|&g| rho * g + 1.0).sum::<f64>() * 2f64.powf(r);
    let mut steps = 0;
    while f(lo) < r {
        lo /= 2.0;
        steps += 1;
        if steps > BRACKET_WIDEN_STEPS {
            return Err(Error::Bracket("could not bracket UQN level from below".into()));
        }
    }
    steps = 0;
    while f(hi) > r {
        hi *= 2.0;
        steps += 1;
        if steps > BRACKET_WIDEN_STEPS {
            return Err(Error::Bracket("could not bracket UQN level from above".into()));
        }
    }
    bisect_monotone(f, r, lo, hi, BISECT_DEFAULT_TOL)
}

/// High-rate / high-SNR approximation of the UQN level,
/// `rho * gamma_bar * 2^(-R/N)`.
pub fn approx_uqn_delta(gamma_bar: f64, rho: f64, r: f64, n: usize) -> f64 {
    rho * gamma_bar * 2f64.powf(-r / n as f64)
}

/// Exact per-component rates for a solved UQN level:
/// `r_i = log2(1 + (rho*gamma_i + 1)/delta)`.
pub fn exact_rate_allocation(rcs: &ReducedChannelSet, l: usize, delta: f64) -> Vec<f64> {
    rcs.eig[l]
        .values
        .iter()
        .map(|&g| (1.0 + (rcs.rho * g + 1.0) / delta).log2())
        .collect()
}

/// Closed-form approximate rate allocation
/// `r_i = R/N + log2(gamma_i) - mean_j log2(gamma_j)`, re-applied over the
/// active set until no component is negative (clamped components get rate 0).
///
/// Returns the rates and whether clamping occurred.
pub fn approx_rate_allocation(gammas: &[f64], r: f64) -> (Vec<f64>, bool) {
    let n = gammas.len();
    let mut rates = vec![0.0; n];
    let mut active: Vec<usize> = (0..n).filter(|&i| gammas[i] > 0.0).collect();
    let mut clamped = active.len() < n;
    while !active.is_empty() {
        let share = r / active.len() as f64;
        let mean_log =
            active.iter().map(|&i| gammas[i].log2()).sum::<f64>() / active.len() as f64;
        let mut any_negative = false;
        for &i in &active {
            rates[i] = share + gammas[i].log2() - mean_log;
            if rates[i] < 0.0 {
                any_negative = true;
            }
        }
        if !any_negative {
            break;
        }
        clamped = true;
        for i in 0..n {
            if rates[i] < 0.0 {
                rates[i] = 0.0;
            }
        }
        active.retain(|&i| rates[i] > 0.0);
    }
    (rates, clamped)
}

/// Factored quantization-noise covariance `Phi = basis * diag(var) * basis†`.
///
/// Variances may be `+inf` for erased (zero-rate) components; the factored
/// form keeps `(I + Phi)^{-1}` well defined in that case.
#[derive(Debug, Clone)]
pub struct QuantNoise {
    /// Unitary component basis (the decorrelating transform).
    pub basis: CMat,
    /// Per-component noise variances, possibly infinite.
    pub var: Vec<f64>,
}

impl QuantNoise {
    pub fn isotropic(delta: f64, n: usize) -> Self {
        Self {
            basis: CMat::identity(n, n),
            var: vec![delta; n],
        }
    }

    /// Dense covariance matrix; `None` if any component is erased.
    pub fn matrix(&self) -> Option<CMat> {
        if self.var.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let d = CMat::from_fn(self.var.len(), self.var.len(), |i, j| {
            if i == j {
                C64::new(self.var[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        Some(hermitian_part(&(&self.basis * d * self.basis.adjoint())))
    }

    /// `(I + Phi)^{-1}`, with erased components contributing zero.
    pub fn inv_eye_plus(&self) -> CMat {
        let n = self.var.len();
        let d = CMat::from_fn(n, n, |i, j| {
            if i == j {
                let v = self.var[i];
                let inv = if v.is_finite() { 1.0 / (1.0 + v) } else { 0.0 };
                C64::new(inv, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        hermitian_part(&(&self.basis * d * self.basis.adjoint()))
    }
}

/// Quantization-noise covariance for transform coding at the given rates:
/// `Phi = V diag(sigma2_i / (2^{r_i} - 1)) V†` in factored form.
pub fn imperfect_quant_covariance(v: &CMat, rates: &[f64], sigma2: &[f64]) -> QuantNoise {
    let var = rates
        .iter()
        .zip(sigma2)
        .map(|(&r, &s2)| {
            if r > 0.0 {
                s2 / (2f64.powf(r) - 1.0)
            } else {
                f64::INFINITY
            }
        })
        .collect();
    QuantNoise {
        basis: v.clone(),
        var,
    }
}

/// Per-receiver compression description.
#[derive(Debug, Clone)]
pub struct ReceiverPlan {
    /// UQN noise level (exact plans) or its closed-form approximation
    /// (heuristic plans built from estimated eigenvalues).
    pub delta: f64,
    /// Decorrelating transform, N x N unitary.
    pub v: CMat,
    /// Per-component rates in bpcu, non-negative.
    pub rates: Vec<f64>,
    /// Variances of the transformed components seen by the quantizer.
    pub sigma2: Vec<f64>,
    /// Whether any rate was clamped to zero (component erased).
    pub clamped: bool,
}

impl ReceiverPlan {
    /// Factored quantization-noise covariance for this receiver.
    pub fn quant_noise(&self) -> QuantNoise {
        imperfect_quant_covariance(&self.v, &self.rates, &self.sigma2)
    }
}

/// Compression plans for all receivers at a common fronthaul rate.
#[derive(Debug, Clone)]
pub struct CompressionPlan {
    /// Per-receiver fronthaul rate in bpcu.
    pub r_fronthaul: f64,
    pub receivers: Vec<ReceiverPlan>,
}

impl CompressionPlan {
    pub fn deltas(&self) -> Vec<f64> {
        self.receivers.iter().map(|p| p.delta).collect()
    }
}

/// Exact UQN compression plan for a reduced channel set (perfect CSI):
/// solved noise level, eigenvector transform and exact rate allocation.
pub fn uqn_plan(rcs: &ReducedChannelSet, r: f64) -> Result<CompressionPlan> {
    let receivers = (0..rcs.g.len())
        .map(|l| {
            let delta = solve_uqn_delta(rcs, l, r)?;
            let rates = exact_rate_allocation(rcs, l, delta);
            let sigma2 = rcs.eig[l]
                .values
                .iter()
                .map(|&g| rcs.rho * g + 1.0)
                .collect();
            Ok(ReceiverPlan {
                delta,
                v: rcs.eig[l].vectors.clone(),
                rates,
                sigma2,
                clamped: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompressionPlan {
        r_fronthaul: r,
        receivers,
    })
}

/// Simulate the Gaussian forward test channel for one receiver: transform to
/// the component basis, add independent complex Gaussian noise of variance
/// `sigma2_i / (2^{r_i} - 1)` per component (zero-rate components are erased,
/// i.e. replaced by their zero mean), and transform back.
pub fn quantize_gaussian_model<R: Rng + ?Sized>(
    z: &CVec,
    plan: &CompressionPlan,
    l: usize,
    rng: &mut R,
) -> CVec {
    let p = &plan.receivers[l];
    let mut zv = p.v.adjoint() * z;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..zv.len() {
        if p.rates[i] > 0.0 {
            let var = p.sigma2[i] / (2f64.powf(p.rates[i]) - 1.0);
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            zv[i] += C64::new(re * s, im * s) * var.sqrt();
        } else {
            zv[i] = C64::new(0.0, 0.0);
        }
    }
    &p.v * zv
}

/// Fixed-rate MMSE (Lloyd-Max) scalar quantizer for a real Gaussian source.
#[derive(Debug, Clone)]
pub struct LloydMaxCodebook {
    /// Reconstruction levels, ascending.
    pub levels: Vec<f64>,
    /// Decision thresholds between adjacent levels (len = levels - 1).
    pub thresholds: Vec<f64>,
    /// Mean squared error at the fixed point (analytic).
    pub mse: f64,
    pub bits: u32,
    pub variance: f64,
}

impl LloydMaxCodebook {
    /// Quantize one real sample.
    pub fn quantize(&self, x: f64) -> f64 {
        let idx = self.thresholds.partition_point(|&t| t < x);
        self.levels[idx]
    }

    /// Quantize a complex sample per real/imaginary half. The codebook must
    /// have been built at half the complex variance.
    pub fn quantize_complex(&self, z: C64) -> C64 {
        C64::new(self.quantize(z.re), self.quantize(z.im))
    }
}

/// Gaussian cell statistics over standard-normal interval `[a, b]`:
/// (probability mass, first moment, second moment).
fn gaussian_cell_moments(std_normal: &Normal, a: f64, b: f64) -> (f64, f64, f64) {
    let cdf = |x: f64| {
        if x == f64::NEG_INFINITY {
            0.0
        } else if x == f64::INFINITY {
            1.0
        } else {
            std_normal.cdf(x)
        }
    };
    let pdf = |x: f64| {
        if x.is_finite() {
            std_normal.pdf(x)
        } else {
            0.0
        }
    };
    let xpdf = |x: f64| if x.is_finite() { x * pdf(x) } else { 0.0 };
    let m0 = cdf(b) - cdf(a);
    let m1 = pdf(a) - pdf(b);
    let m2 = m0 + xpdf(a) - xpdf(b);
    (m0, m1, m2)
}

/// Build a Lloyd-Max codebook for a real Gaussian of the given variance.
///
/// Levels are initialized at uniform quantiles of the Gaussian CDF and
/// iterated (thresholds = midpoints, levels = cell conditional means) until
/// the relative MSE change drops below 1e-10.
pub fn lloyd_max_codebook(rate_bits: u32, variance: f64) -> Result<LloydMaxCodebook> {
    if !(1..=8).contains(&rate_bits) {
        return Err(Error::InvalidInput(format!(
            "rate_bits must be in 1..=8, got {rate_bits}"
        )));
    }
    if !(variance > 0.0) {
        return Err(Error::InvalidInput(format!(
            "variance must be positive, got {variance}"
        )));
    }
    let n = 1usize << rate_bits;
    let sigma = variance.sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut levels: Vec<f64> = (0..n)
        .map(|i| sigma * std_normal.inverse_cdf((i as f64 + 0.5) / n as f64))
        .collect();
    let mut thresholds = vec![0.0; n - 1];
    let mut prev_mse = f64::INFINITY;
    let mut mse = 0.0;

    for _ in 0..10_000 {
        for i in 0..n - 1 {
            thresholds[i] = 0.5 * (levels[i] + levels[i + 1]);
        }
        // centroid update and analytic MSE in one pass over the cells
        mse = 0.0;
        for i in 0..n {
            let a = if i == 0 {
                f64::NEG_INFINITY
            } else {
                thresholds[i - 1] / sigma
            };
            let b = if i == n - 1 {
                f64::INFINITY
            } else {
                thresholds[i] / sigma
            };
            let (m0, m1, m2) = gaussian_cell_moments(&std_normal, a, b);
            if m0 > 0.0 {
                levels[i] = sigma * m1 / m0;
            }
            let l = levels[i];
            mse += sigma * sigma * m2 - 2.0 * l * sigma * m1 + l * l * m0;
        }
        if (prev_mse - mse).abs() < 1e-10 * mse.max(f64::MIN_POSITIVE) {
            break;
        }
        prev_mse = mse;
    }

    Ok(LloydMaxCodebook {
        levels,
        thresholds,
        mse,
        bits: rate_bits,
        variance,
    })
}
