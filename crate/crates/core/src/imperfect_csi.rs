//! Estimated-CSI pipeline: error-covariance whitening, filter design on the
//! whitened estimated channels, heuristic transform-coding plans, the
//! capacity lower bound and a genie evaluation against the true channels.
//!
//! With MMSE channel estimates the unknown signal component plus receiver
//! noise has covariance `Omega_l = I + rho C_l`. Applying `Omega_l^{-1/2}`
//! whitens that equivalent noise, after which the perfect-CSI machinery runs
//! on `H_check_l = Omega_l^{-1/2} H_hat_l` unchanged. A scalar `C_l = c I`
//! therefore acts as a pure SNR rescale `rho -> rho/(1 + rho c)`, leaving the
//! filter directions untouched.

use crate::compression::{
    approx_rate_allocation, approx_uqn_delta, CompressionPlan, ReceiverPlan,
};
use crate::dimred::{
    joint_mi_channels, reduce_channels, tcklt_bca, BcaRun, FilterBank, ReducedChannelSet,
};
use crate::numerics::{hermitian_eig, hermitian_part, log2_det_eye_plus};
use crate::scenario::{ChannelSet, EstimatedChannelSet};
use crate::{C64, CMat, Error, Result};

/// Whitened estimated channels with their whitening factors.
#[derive(Debug, Clone)]
pub struct WhitenedChannelSet {
    /// `H_check_l = Omega_l^{-1/2} H_hat_l`.
    pub h_check: Vec<CMat>,
    /// Hermitian PSD `Omega_l^{-1/2}` factors.
    pub omega_inv_sqrt: Vec<CMat>,
    /// The estimates (and retained truth) this was built from.
    pub est: EstimatedChannelSet,
    /// Linear transmit SNR.
    pub rho: f64,
}

/// Hermitian inverse square root via eigendecomposition.
fn inv_sqrt_psd(a: &CMat) -> Result<CMat> {
    let eig = hermitian_eig(a)?;
    let n = a.nrows();
    let d = CMat::from_fn(n, n, |i, j| {
        if i == j {
            if eig.values[i] <= 0.0 {
                return C64::new(0.0, 0.0);
            }
            C64::new(1.0 / eig.values[i].sqrt(), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    Ok(hermitian_part(&(&eig.vectors * d * eig.vectors.adjoint())))
}

/// Whiten the channel-estimation-error-plus-noise covariance:
/// `Omega_l = I + rho C_l`, `H_check_l = Omega_l^{-1/2} H_hat_l`.
pub fn whitening(est: EstimatedChannelSet, rho: f64) -> Result<WhitenedChannelSet> {
    let mut h_check = Vec::with_capacity(est.h_hat.len());
    let mut omega_inv_sqrt = Vec::with_capacity(est.h_hat.len());
    for (h_hat, c) in est.h_hat.iter().zip(&est.c) {
        let m = c.nrows();
        let omega = CMat::identity(m, m) + hermitian_part(c).scale(rho);
        let w = inv_sqrt_psd(&omega)?;
        h_check.push(&w * h_hat);
        omega_inv_sqrt.push(w);
    }
    Ok(WhitenedChannelSet {
        h_check,
        omega_inv_sqrt,
        est,
        rho,
    })
}

/// T-CKLT BCA on the whitened estimated channels.
pub fn design_filters_imperfect(
    wcs: &WhitenedChannelSet,
    n: usize,
    j_max: usize,
    rel_tol: f64,
) -> Result<BcaRun> {
    let cs = ChannelSet {
        h: wcs.h_check.clone(),
        rho: wcs.rho,
    };
    tcklt_bca(&cs, n, j_max, rel_tol)
}

/// Estimated reduced channels `G_hat_l = W_l† H_check_l`.
pub fn reduced_channel_imperfect(
    wcs: &WhitenedChannelSet,
    fb: &FilterBank,
) -> Result<ReducedChannelSet> {
    reduce_channels(&wcs.h_check, wcs.rho, fb)
}

/// Lower bound on the expected joint mutual information for one realization:
/// `log2 det(I_K + rho sum_l H_check_l† W_l W_l† H_check_l)`.
pub fn mi_lower_bound(wcs: &WhitenedChannelSet, fb: &FilterBank) -> Result<f64> {
    joint_mi_channels(&wcs.h_check, wcs.rho, fb)
}

/// SNR-independent cap on the lower bound:
/// `log2 det(I_K + sum_l H_hat_l† C_l^{-1/2} W_l W_l† C_l^{-1/2} H_hat_l)`.
///
/// Infinite when some `C_l` is singular (perfect estimation of a subspace).
pub fn mi_rho_independent_cap(est: &EstimatedChannelSet, fb: &FilterBank) -> Result<f64> {
    let k = est.h_hat[0].ncols();
    let mut s = CMat::zeros(k, k);
    for ((h_hat, c), wl) in est.h_hat.iter().zip(&est.c).zip(&fb.w) {
        let eig = hermitian_eig(c)?;
        if eig.values[eig.values.len() - 1] <= 0.0 {
            return Ok(f64::INFINITY);
        }
        let cis = inv_sqrt_psd(c)?;
        let x = wl.adjoint() * cis * h_hat;
        s += hermitian_part(&(x.adjoint() * x));
    }
    log2_det_eye_plus(&s)
}

/// Heuristic transform-coding plan from estimated eigenvalues: approximate
/// rate allocation over `gamma_hat_{l,i}`, quantizer input variances either
/// assumed from the estimate (`rho*gamma_hat + 1`) or supplied externally
/// (genie mode with true component variances).
pub fn heuristic_plan(
    rcs_hat: &ReducedChannelSet,
    r: f64,
    true_sigma2: Option<&[Vec<f64>]>,
) -> Result<CompressionPlan> {
    if !(r > 0.0) {
        return Err(Error::InvalidInput(format!(
            "fronthaul rate must be positive, got {r}"
        )));
    }
    let n = rcs_hat.g[0].nrows();
    let receivers = (0..rcs_hat.g.len())
        .map(|l| {
            let gammas: Vec<f64> = rcs_hat.eig[l].values.iter().cloned().collect();
            let (rates, clamped) = approx_rate_allocation(&gammas, r);
            let sigma2 = match true_sigma2 {
                Some(s) => s[l].clone(),
                None => gammas.iter().map(|&g| rcs_hat.rho * g + 1.0).collect(),
            };
            ReceiverPlan {
                delta: approx_uqn_delta(rcs_hat.gamma_bar[l], rcs_hat.rho, r, n),
                v: rcs_hat.eig[l].vectors.clone(),
                rates,
                sigma2,
                clamped,
            }
        })
        .collect();
    Ok(CompressionPlan {
        r_fronthaul: r,
        receivers,
    })
}

/// Capacity lower bound under the heuristic plan (quantization included):
/// `log2 det(I_K + rho sum_l G_hat_l† (I + Phi_l)^{-1} G_hat_l)`.
pub fn bound_capacity(rcs_hat: &ReducedChannelSet, plan: &CompressionPlan) -> Result<f64> {
    let quant: Vec<_> = plan.receivers.iter().map(|p| p.quant_noise()).collect();
    crate::capacity::sum_capacity_imperfect(rcs_hat, &quant)
}

/// True variances of the transformed components for genie mode:
/// `sigma2_{l,i} = [V_hat† (rho G_true G_true† + W† Omega^{-1} W) V_hat]_ii`
/// with `G_true_l = W_l† Omega_l^{-1/2} H_true_l`.
pub fn genie_component_variances(
    wcs: &WhitenedChannelSet,
    fb: &FilterBank,
    rcs_hat: &ReducedChannelSet,
) -> Vec<Vec<f64>> {
    let rho = wcs.rho;
    wcs.est
        .truth
        .h
        .iter()
        .zip(&wcs.omega_inv_sqrt)
        .zip(&fb.w)
        .zip(&rcs_hat.eig)
        .map(|(((h_true, ois), wl), eig)| {
            let filt = wl.adjoint() * ois;
            let g_true = &filt * h_true;
            let noise = &filt * filt.adjoint();
            let cov = (&g_true * g_true.adjoint()).scale(rho) + noise;
            let v = &eig.vectors;
            let proj = v.adjoint() * cov * v;
            (0..proj.nrows()).map(|i| proj[(i, i)].re).collect()
        })
        .collect()
}

/// Genie evaluation: realized mutual information through the *true* channels
/// with the imperfect-CSI filters and compression plan in place.
///
/// Components erased by the plan are projected out of both signal and noise;
/// the filtered receiver noise `W† Omega^{-1} W` is kept at its exact
/// (non-white) covariance.
pub fn genie_capacity(
    wcs: &WhitenedChannelSet,
    fb: &FilterBank,
    plan: &CompressionPlan,
) -> Result<f64> {
    let rho = wcs.rho;
    let k = wcs.est.truth.h[0].ncols();
    let mut s = CMat::zeros(k, k);
    for ((h_true, ois), (wl, p)) in wcs
        .est
        .truth
        .h
        .iter()
        .zip(&wcs.omega_inv_sqrt)
        .zip(fb.w.iter().zip(&plan.receivers))
    {
        let active: Vec<usize> = (0..p.rates.len()).filter(|&i| p.rates[i] > 0.0).collect();
        if active.is_empty() {
            continue;
        }
        let filt = wl.adjoint() * ois;
        let g_true = &filt * h_true;
        let noise = &filt * filt.adjoint();

        let mut v_act = CMat::zeros(p.v.nrows(), active.len());
        for (j, &i) in active.iter().enumerate() {
            v_act.set_column(j, &p.v.column(i));
        }
        let g_a = v_act.adjoint() * &g_true;
        let mut n_a = hermitian_part(&(v_act.adjoint() * &noise * &v_act));
        for (j, &i) in active.iter().enumerate() {
            let qv = p.sigma2[i] / (2f64.powf(p.rates[i]) - 1.0);
            n_a[(j, j)] += C64::new(qv, 0.0);
        }
        let chol = nalgebra::Cholesky::new(n_a).ok_or_else(|| {
            Error::RankDeficient("projected noise covariance must be positive definite".into())
        })?;
        let x = chol.solve(&g_a);
        s += hermitian_part(&(g_a.adjoint() * x));
    }
    log2_det_eye_plus(&s.scale(rho))
}
