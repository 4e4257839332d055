//! Runtime invariant suites behind the `selftest` CLI command.
//!
//! Each suite replays a batch of randomized instances through two independent
//! algebraic routes (or against a closed form) and counts agreement failures.
//! A fresh checkout passing `selftest` means the numerical core behaves on
//! this machine exactly as the test suite assumes.

use crate::dimred::{conditional_mi, joint_mi, tcklt_bca, tklt_bank_design};
use crate::numerics::{
    complex_gaussian_matrix, hermitian_eig, log2_det_eye_plus, orthonormalize,
    principal_subspace,
};
use crate::scenario::streams::{trial_rng, StreamPurpose};
use crate::scenario::ChannelSet;
use crate::{CMat, Result};

/// Outcome of one invariant suite.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: usize,
    pub failed: usize,
    /// First failure description, when any.
    pub first_failure: Option<String>,
}

impl SuiteResult {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            passed: 0,
            failed: 0,
            first_failure: None,
        }
    }

    fn record(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(detail());
            }
        }
    }

    pub fn ok(&self) -> bool {
        self.failed == 0
    }
}

/// Eigendecomposition reconstruction and unitarity on random Hermitian input.
pub fn suite_eigendecomposition(instances: usize, seed: u64) -> Result<SuiteResult> {
    let mut res = SuiteResult::new("hermitian-eig reconstruction");
    for i in 0..instances {
        let mut rng = trial_rng(seed, i as u64, StreamPurpose::Placement);
        let x = complex_gaussian_matrix(5, 5, &mut rng);
        let a = crate::numerics::hermitian_part(&x);
        let eig = hermitian_eig(&a)?;
        let d = CMat::from_fn(5, 5, |r, c| {
            if r == c {
                nalgebra::Complex::new(eig.values[r], 0.0)
            } else {
                nalgebra::Complex::new(0.0, 0.0)
            }
        });
        let rec = &eig.vectors * d * eig.vectors.adjoint();
        let rel = (&rec - &a).norm() / a.norm();
        let unit = (eig.vectors.adjoint() * &eig.vectors - CMat::identity(5, 5)).norm();
        res.record(rel < 1e-10 && unit < 1e-10, || {
            format!("instance {i}: reconstruction {rel:.2e}, unitarity {unit:.2e}")
        });
    }
    Ok(res)
}

/// Poincaré separation: no random orthonormal subspace beats the principal
/// one, and the principal subspace attains the eigenvalue-product bound.
pub fn suite_poincare(instances: usize, seed: u64) -> Result<SuiteResult> {
    let mut res = SuiteResult::new("poincare separation / T-KLT optimality");
    for i in 0..instances {
        let mut rng = trial_rng(seed, i as u64, StreamPurpose::Fading);
        let x = complex_gaussian_matrix(5, 5, &mut rng);
        let a = &x * x.adjoint();
        let eig = hermitian_eig(&a)?;
        let k = 2;
        let bound: f64 = (0..k).map(|j| (1.0 + eig.values[j]).log2()).sum();
        let w = orthonormalize(&complex_gaussian_matrix(5, k, &mut rng))?;
        let val = log2_det_eye_plus(&(w.adjoint() * &a * &w))?;
        let w_star = principal_subspace(&a, k)?;
        let best = log2_det_eye_plus(&(w_star.adjoint() * &a * &w_star))?;
        res.record(
            val <= bound + 1e-9 && (best - bound).abs() <= 1e-9 * bound.max(1.0),
            || format!("instance {i}: random {val}, principal {best}, bound {bound}"),
        );
    }
    Ok(res)
}

/// Chain-rule decomposition of the joint MI against the conditional-MI form.
pub fn suite_chain_rule(instances: usize, seed: u64) -> Result<SuiteResult> {
    let mut res = SuiteResult::new("conditional-MI chain rule");
    for i in 0..instances {
        let mut rng = trial_rng(seed, i as u64, StreamPurpose::Fading);
        let cs = ChannelSet {
            h: (0..3)
                .map(|_| complex_gaussian_matrix(4, 5, &mut rng))
                .collect(),
            rho: 15.0,
        };
        let run = tcklt_bca(&cs, 2, 2, 0.0)?;
        let joint = joint_mi(&cs, &run.bank)?;
        let mut ok = true;
        let mut detail = String::new();
        for l in 0..3 {
            let cond = conditional_mi(l, &cs, &run.bank)?;
            let mut others = run.bank.clone();
            others.w.remove(l);
            let mut h = cs.h.clone();
            h.remove(l);
            let rest = crate::dimred::joint_mi_channels(&h, cs.rho, &others)?;
            let err = (joint - cond - rest).abs() / joint.max(1.0);
            if err > 1e-9 {
                ok = false;
                detail = format!("instance {i} receiver {l}: relative error {err:.2e}");
                break;
            }
        }
        res.record(ok, || detail);
    }
    Ok(res)
}

/// UQN solver residual on random eigenvalue profiles.
pub fn suite_uqn_residual(instances: usize, seed: u64) -> Result<SuiteResult> {
    use rand::Rng;
    let mut res = SuiteResult::new("UQN level residual");
    for i in 0..instances {
        let mut rng = trial_rng(seed, i as u64, StreamPurpose::Quantization);
        let n = 1 + (rng.random::<u32>() % 6) as usize;
        let rho = 10f64.powf(rng.random::<f64>() * 3.0);
        let gammas: Vec<f64> = (0..n)
            .map(|_| 10f64.powf(rng.random::<f64>() * 4.0 - 2.0))
            .collect();
        let r = 0.5 + rng.random::<f64>() * 30.0;
        let mut g = CMat::zeros(n, n);
        for (j, &gam) in gammas.iter().enumerate() {
            g[(j, j)] = nalgebra::Complex::new(gam.sqrt(), 0.0);
        }
        let rcs = crate::dimred::reduce_channels(
            &[g],
            rho,
            &crate::dimred::FilterBank::identity(n, 1),
        )?;
        let delta = crate::compression::solve_uqn_delta(&rcs, 0, r)?;
        let sorted: Vec<f64> = rcs.eig[0].values.iter().cloned().collect();
        let resid = (crate::compression::uqn_rate(&sorted, rho, delta) - r).abs();
        res.record(resid <= 1e-9, || {
            format!("instance {i}: residual {resid:.2e} at R={r}")
        });
    }
    Ok(res)
}

/// Lloyd-Max fixed points against closed forms and the rate-distortion bound.
pub fn suite_lloyd_max() -> Result<SuiteResult> {
    let mut res = SuiteResult::new("Lloyd-Max fixed points");
    let cb = crate::compression::lloyd_max_codebook(1, 1.0)?;
    let level = (2.0 / std::f64::consts::PI).sqrt();
    res.record(
        (cb.levels[1] - level).abs() < 1e-9
            && (cb.mse - (1.0 - 2.0 / std::f64::consts::PI)).abs() < 1e-6,
        || format!("1-bit: levels {:?}, mse {}", cb.levels, cb.mse),
    );
    for bits in 1..=8 {
        let cb = crate::compression::lloyd_max_codebook(bits, 1.0)?;
        let rd = 2f64.powi(-2 * bits as i32);
        res.record(cb.mse >= rd && cb.mse < 1.0, || {
            format!("{bits} bits: mse {} vs RD bound {rd}", cb.mse)
        });
    }
    Ok(res)
}

/// BCA monotonicity and dominance over the T-KLT initialization.
pub fn suite_bca_monotonicity(instances: usize, seed: u64) -> Result<SuiteResult> {
    let mut res = SuiteResult::new("BCA monotone ascent");
    for i in 0..instances {
        let mut rng = trial_rng(seed, i as u64, StreamPurpose::Fading);
        let cs = ChannelSet {
            h: (0..4)
                .map(|_| complex_gaussian_matrix(4, 6, &mut rng))
                .collect(),
            rho: 31.6,
        };
        let run = tcklt_bca(&cs, 2, 4, 0.0)?;
        let monotone = run.objective.windows(2).all(|w| w[1] >= w[0] - 1e-9);
        let tklt = joint_mi(&cs, &tklt_bank_design(&cs, 2)?)?;
        let beats = *run.objective.last().expect("non-empty") >= tklt - 1e-9;
        res.record(monotone && beats, || {
            format!("instance {i}: monotone={monotone}, beats T-KLT={beats}")
        });
    }
    Ok(res)
}

/// Run every suite with default sizes.
pub fn run_all(seed: u64) -> Result<Vec<SuiteResult>> {
    Ok(vec![
        suite_eigendecomposition(200, seed)?,
        suite_poincare(1000, seed)?,
        suite_chain_rule(1000, seed)?,
        suite_uqn_residual(500, seed)?,
        suite_lloyd_max()?,
        suite_bca_monotonicity(100, seed)?,
    ])
}
