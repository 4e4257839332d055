//! Achievable-rate formulas: SIC sum capacity, fronthaul-limited
//! approximations, LMMSE detection with per-user SQINR capacities, the
//! cut-set reference bound, and the estimated-CSI capacity lower bound.
//!
//! Everything is evaluated in `K x K` Gram form (`sum_l G_l† G_l`), which has
//! the same determinant as the per-receiver `N x N` forms and stays valid
//! when `K < N L`. Log-determinants of `I + PSD` go through Cholesky.

use crate::compression::QuantNoise;
use crate::dimred::ReducedChannelSet;
use crate::numerics::{hermitian_eig, hermitian_part, log2_det_eye_plus, log2_det_psd};
use crate::scenario::ChannelSet;
use crate::{CMat, Error, Result};

/// Capacity figures for one realization (or trial-averaged by the harness).
#[derive(Debug, Clone)]
pub struct CapacityReport {
    pub sum_capacity_sic: f64,
    pub user_capacities: Vec<f64>,
    pub sqinr: Vec<f64>,
    /// Fronthaul-limited affine approximation of the sum capacity.
    pub approx_sum: f64,
    pub cutset: f64,
    /// Unquantized, unreduced `I(y; x)`.
    pub full_mi: f64,
    /// Unquantized `I(z; x)` after dimension reduction.
    pub joint_mi_reduced: f64,
}

/// Quantization-scaled Gram sum `sum_l G_l† G_l / (1 + Delta_l)`.
///
/// Infinite `Delta_l` simply removes receiver `l` from the sum.
fn scaled_gram_sum(rcs: &ReducedChannelSet, deltas: &[f64]) -> CMat {
    let k = rcs.g[0].ncols();
    let mut s = CMat::zeros(k, k);
    for (gl, &d) in rcs.g.iter().zip(deltas) {
        let w = 1.0 / (1.0 + d);
        if w > 0.0 {
            s += hermitian_part(&(gl.adjoint() * gl)).scale(w);
        }
    }
    s
}

/// Sum capacity under optimal successive interference cancellation:
/// `log2 det(I_K + rho * sum_l G_l† G_l / (1 + Delta_l))`.
pub fn sum_capacity_sic(rcs: &ReducedChannelSet, deltas: &[f64]) -> Result<f64> {
    if deltas.len() != rcs.g.len() {
        return Err(Error::InvalidInput(format!(
            "{} deltas for {} receivers",
            deltas.len(),
            rcs.g.len()
        )));
    }
    log2_det_eye_plus(&scaled_gram_sum(rcs, deltas).scale(rcs.rho))
}

/// Fronthaul-limited approximation of the sum capacity,
/// `R*K/N + log2 det(sum_l G_l† G_l / gamma_bar_l)`.
///
/// Returns `-inf` when any `gamma_bar_l` vanishes or the Gram sum is rank
/// deficient (the affine approximation does not exist there).
pub fn fronthaul_limited_approx(rcs: &ReducedChannelSet, r: f64) -> f64 {
    let k = rcs.g[0].ncols();
    let n = rcs.g[0].nrows();
    if rcs.gamma_bar.iter().any(|&g| g <= 0.0) {
        return f64::NEG_INFINITY;
    }
    let mut s = CMat::zeros(k, k);
    for (gl, &gb) in rcs.g.iter().zip(&rcs.gamma_bar) {
        s += hermitian_part(&(gl.adjoint() * gl)).scale(1.0 / gb);
    }
    match log2_det_psd(&s) {
        Ok(Some(ld)) => r * k as f64 / n as f64 + ld,
        _ => f64::NEG_INFINITY,
    }
}

/// Inverse of `I_K + rho * sum_l G_l† G_l / (1 + Delta_l)` via Cholesky.
fn mmse_matrix(rcs: &ReducedChannelSet, deltas: &[f64]) -> Result<CMat> {
    let k = rcs.g[0].ncols();
    let a = CMat::identity(k, k) + scaled_gram_sum(rcs, deltas).scale(rcs.rho);
    let chol = nalgebra::Cholesky::new(a)
        .ok_or_else(|| Error::RankDeficient("I + rho*S must be positive definite".into()))?;
    Ok(chol.inverse())
}

/// LMMSE detection matrices
/// `B_l = rho * (I_K + rho * sum_i G_i† G_i/(1+Delta_i))^{-1} G_l†/(1+Delta_l)`.
pub fn lmmse_detectors(rcs: &ReducedChannelSet, deltas: &[f64]) -> Result<Vec<CMat>> {
    let t = mmse_matrix(rcs, deltas)?;
    Ok(rcs
        .g
        .iter()
        .zip(deltas)
        .map(|(gl, &d)| (&t * gl.adjoint()).scale(rcs.rho / (1.0 + d)))
        .collect())
}

/// Per-user SQINR and achievable LMMSE rates:
/// `SQINR_k = 1/[ (I_K + rho*sum G†G/(1+Delta))^{-1} ]_kk - 1`.
pub fn user_capacities_lmmse(
    rcs: &ReducedChannelSet,
    deltas: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = mmse_matrix(rcs, deltas)?;
    let k = t.nrows();
    let mut sqinr = Vec::with_capacity(k);
    let mut caps = Vec::with_capacity(k);
    for i in 0..k {
        // diagonal of a Hermitian inverse is real and in (0, 1]
        let s = (1.0 / t[(i, i)].re - 1.0).max(0.0);
        sqinr.push(s);
        caps.push((1.0 + s).log2());
    }
    Ok((sqinr, caps))
}

/// Cut-set reference: `min(L*R, I(y; x))`.
pub fn cutset_bound(r: f64, cs: &ChannelSet) -> Result<f64> {
    Ok((cs.h.len() as f64 * r).min(crate::dimred::full_mi(cs)?))
}

/// Sum-capacity lower bound with estimated CSI:
/// `log2 det(I_K + rho * sum_l G_hat_l† (I + Phi_l)^{-1} G_hat_l)`.
///
/// `quant[l]` carries the factored quantization-noise covariance; erased
/// (zero-rate) components contribute nothing.
pub fn sum_capacity_imperfect(rcs_hat: &ReducedChannelSet, quant: &[QuantNoise]) -> Result<f64> {
    if quant.len() != rcs_hat.g.len() {
        return Err(Error::InvalidInput(format!(
            "{} noise models for {} receivers",
            quant.len(),
            rcs_hat.g.len()
        )));
    }
    let k = rcs_hat.g[0].ncols();
    let mut s = CMat::zeros(k, k);
    for (gl, qn) in rcs_hat.g.iter().zip(quant) {
        s += hermitian_part(&(gl.adjoint() * qn.inv_eye_plus() * gl));
    }
    log2_det_eye_plus(&s.scale(rcs_hat.rho))
}

/// Fronthaul-limited approximation of the per-user LMMSE capacities:
/// `C_k ~= R/N - log2([ (sum_l G_l† G_l / gamma_bar_l)^{-1} ]_kk)`.
///
/// Returns all `-inf` when the weighted Gram sum is rank deficient.
pub fn lmmse_user_rate_approx(rcs: &ReducedChannelSet, r: f64) -> Vec<f64> {
    let k = rcs.g[0].ncols();
    let n = rcs.g[0].nrows();
    let sentinel = vec![f64::NEG_INFINITY; k];
    if rcs.gamma_bar.iter().any(|&g| g <= 0.0) {
        return sentinel;
    }
    let mut s = CMat::zeros(k, k);
    for (gl, &gb) in rcs.g.iter().zip(&rcs.gamma_bar) {
        s += hermitian_part(&(gl.adjoint() * gl)).scale(1.0 / gb);
    }
    let eig = match hermitian_eig(&s) {
        Ok(e) => e,
        Err(_) => return sentinel,
    };
    if eig.values[k - 1] <= 1e-12 * eig.values[0].max(0.0) {
        return sentinel;
    }
    let chol = match nalgebra::Cholesky::new(s) {
        Some(c) => c,
        None => return sentinel,
    };
    let inv = chol.inverse();
    (0..k)
        .map(|i| r / n as f64 - inv[(i, i)].re.log2())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::{solve_uqn_delta, uqn_plan};
    use crate::dimred::{reduce_channels, tcklt_bca, FilterBank};
    use crate::numerics::complex_gaussian_matrix;
    use crate::C64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_reduced(
        l: usize,
        m: usize,
        k: usize,
        n: usize,
        rho: f64,
        rng: &mut ChaCha8Rng,
    ) -> (ChannelSet, ReducedChannelSet) {
        let cs = ChannelSet {
            h: (0..l).map(|_| complex_gaussian_matrix(m, k, rng)).collect(),
            rho,
        };
        let fb = tcklt_bca(&cs, n, 2, 0.0).unwrap().bank;
        let rcs = crate::dimred::reduce(&cs, &fb).unwrap();
        (cs, rcs)
    }

    #[test]
    fn sic_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // L = 1, G = I_K, Delta = 0 -> K log2(1 + rho)
        let rho = 9.0;
        let g = CMat::identity(3, 3);
        let rcs = reduce_channels(&[g], rho, &FilterBank::identity(3, 1)).unwrap();
        let c = sum_capacity_sic(&rcs, &[0.0]).unwrap();
        assert!((c - 3.0 * (10.0f64).log2()).abs() < 1e-12);
        // Delta -> infinity kills everything
        let c = sum_capacity_sic(&rcs, &[f64::INFINITY]).unwrap();
        assert!(c.abs() < 1e-12);
        // Delta = 0 equals the filter bank's joint MI
        let (cs, rcs) = random_reduced(3, 4, 5, 2, 12.0, &mut rng);
        let fb = tcklt_bca(&cs, 2, 2, 0.0).unwrap().bank;
        let joint = crate::dimred::joint_mi(&cs, &fb).unwrap();
        let c = sum_capacity_sic(&rcs, &[0.0; 3]).unwrap();
        assert!((c - joint).abs() < 1e-9, "{c} vs {joint}");
    }

    #[test]
    fn fronthaul_approx_slope_is_k_over_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, rcs) = random_reduced(3, 4, 6, 2, 15.0, &mut rng);
        let n = 2.0;
        let k = 6.0;
        let v1 = fronthaul_limited_approx(&rcs, 10.0);
        let v2 = fronthaul_limited_approx(&rcs, 10.0 + n);
        assert!(((v2 - v1) - k).abs() < 1e-9, "slope {}", v2 - v1);
    }

    #[test]
    fn fronthaul_approx_matches_sic_in_regime() {
        // strong eigenvalues and deep quantization: rho*gamma > 100, Delta > 10
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let scale = 40.0;
            let h: Vec<CMat> = (0..3)
                .map(|_| complex_gaussian_matrix(4, 4, &mut rng).scale(scale))
                .collect();
            let cs = ChannelSet { h, rho: 10.0 };
            let fb = tcklt_bca(&cs, 2, 2, 0.0).unwrap().bank;
            let rcs = crate::dimred::reduce(&cs, &fb).unwrap();
            let r = 6.0;
            let deltas: Vec<f64> = (0..3)
                .map(|l| solve_uqn_delta(&rcs, l, r).unwrap())
                .collect();
            let min_rg = rcs
                .eig
                .iter()
                .flat_map(|e| e.values.iter())
                .fold(f64::INFINITY, |a, &b| a.min(rcs.rho * b));
            if deltas.iter().all(|&d| d > 10.0) && min_rg > 100.0 {
                let sic = sum_capacity_sic(&rcs, &deltas).unwrap();
                let approx = fronthaul_limited_approx(&rcs, r);
                assert!(
                    (sic - approx).abs() <= 0.5 * 4.0,
                    "sic {sic} vs approx {approx}"
                );
            }
        }
    }

    #[test]
    fn fronthaul_approx_rank_deficient_sentinel() {
        // single receiver, N < K: Gram sum cannot be full rank
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cs = ChannelSet {
            h: vec![complex_gaussian_matrix(4, 4, &mut rng)],
            rho: 10.0,
        };
        let fb = crate::dimred::tklt_bank_design(&cs, 4).unwrap();
        let mut rcs = crate::dimred::reduce(&cs, &fb).unwrap();
        // truncate to a 2 x K channel to force rank deficiency
        rcs.g[0] = rcs.g[0].rows(0, 2).into_owned();
        let v = fronthaul_limited_approx(&rcs, 8.0);
        assert!(v == f64::NEG_INFINITY);
    }

    #[test]
    fn lmmse_scalar_wiener() {
        // single receiver, scalar channel: B = rho g* / (1 + rho |g|^2)
        let g = C64::new(0.8, -0.4);
        let mut gm = CMat::zeros(1, 1);
        gm[(0, 0)] = g;
        let rho = 5.0;
        let rcs = reduce_channels(&[gm], rho, &FilterBank::identity(1, 1)).unwrap();
        let b = lmmse_detectors(&rcs, &[0.0]).unwrap();
        let expect = g.conj() * rho / (1.0 + rho * g.norm_sqr());
        assert!((b[0][(0, 0)] - expect).norm() < 1e-12);
    }

    #[test]
    fn lmmse_vanishes_at_zero_snr() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, mut rcs) = random_reduced(2, 4, 4, 2, 10.0, &mut rng);
        rcs.rho = 1e-12;
        let b = lmmse_detectors(&rcs, &[0.5, 0.5]).unwrap();
        for bl in &b {
            assert!(bl.norm() < 1e-11);
        }
    }

    #[test]
    fn lmmse_unbiased_in_high_snr_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (_, mut rcs) = random_reduced(3, 4, 4, 2, 10.0, &mut rng);
        rcs.rho = 1e6;
        let b = lmmse_detectors(&rcs, &[0.0; 3]).unwrap();
        let k = 4;
        let mut acc = CMat::zeros(k, k);
        for (bl, gl) in b.iter().zip(&rcs.g) {
            acc += bl * gl;
        }
        let dev = (&acc - CMat::identity(k, k)).norm();
        assert!(dev < 1e-3, "sum B_l G_l deviates from identity by {dev}");
    }

    #[test]
    fn user_capacities_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // K = 1: no interference, LMMSE achieves the SIC sum capacity
        let cs = ChannelSet {
            h: vec![complex_gaussian_matrix(3, 1, &mut rng)],
            rho: 8.0,
        };
        let fb = crate::dimred::tklt_bank_design(&cs, 1).unwrap();
        let rcs = crate::dimred::reduce(&cs, &fb).unwrap();
        let delta = [0.7];
        let sic = sum_capacity_sic(&rcs, &delta).unwrap();
        let (_, caps) = user_capacities_lmmse(&rcs, &delta).unwrap();
        assert!((caps[0] - sic).abs() < 1e-12);

        // Delta -> infinity: SQINR and capacity vanish
        let (sqinr, caps) = user_capacities_lmmse(&rcs, &[f64::INFINITY]).unwrap();
        assert!(sqinr[0].abs() < 1e-12 && caps[0].abs() < 1e-12);
    }

    #[test]
    fn lmmse_sum_never_beats_sic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let (_, rcs) = random_reduced(2, 3, 4, 2, 12.0, &mut rng);
            let deltas = [0.3, 2.5];
            let sic = sum_capacity_sic(&rcs, &deltas).unwrap();
            let (_, caps) = user_capacities_lmmse(&rcs, &deltas).unwrap();
            let total: f64 = caps.iter().sum();
            assert!(total <= sic + 1e-9, "LMMSE sum {total} > SIC {sic}");
        }
    }

    #[test]
    fn cutset_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cs = ChannelSet {
            h: (0..3).map(|_| complex_gaussian_matrix(3, 4, &mut rng)).collect(),
            rho: 15.0,
        };
        let full = crate::dimred::full_mi(&cs).unwrap();
        // huge fronthaul: the wireless side binds
        assert!((cutset_bound(1e9, &cs).unwrap() - full).abs() < 1e-9);
        // tiny fronthaul: the links bind
        assert!((cutset_bound(0.5, &cs).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn sic_below_cutset_with_uqn_plan() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let cs = ChannelSet {
                h: (0..3).map(|_| complex_gaussian_matrix(4, 4, &mut rng)).collect(),
                rho: 31.6,
            };
            let fb = tcklt_bca(&cs, 2, 2, 0.0).unwrap().bank;
            let rcs = crate::dimred::reduce(&cs, &fb).unwrap();
            for r in [2.0, 6.0, 12.0, 30.0] {
                let plan = uqn_plan(&rcs, r).unwrap();
                let sic = sum_capacity_sic(&rcs, &plan.deltas()).unwrap();
                let bound = cutset_bound(r, &cs).unwrap();
                assert!(sic <= bound + 1e-9, "sic {sic} above cutset {bound} at R={r}");
            }
        }
    }

    #[test]
    fn imperfect_bound_reduces_to_sic_and_decreases_in_phi() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (_, rcs) = random_reduced(2, 4, 4, 2, 10.0, &mut rng);
            let zero = vec![QuantNoise::isotropic(0.0, 2); 2];
            let a = sum_capacity_imperfect(&rcs, &zero).unwrap();
            let b = sum_capacity_sic(&rcs, &[0.0, 0.0]).unwrap();
            assert!((a - b).abs() < 1e-9);

            let phi1 = vec![QuantNoise::isotropic(0.8, 2); 2];
            let phi2 = vec![QuantNoise::isotropic(1.6, 2); 2];
            let c1 = sum_capacity_imperfect(&rcs, &phi1).unwrap();
            let c2 = sum_capacity_imperfect(&rcs, &phi2).unwrap();
            assert!(c2 < c1, "doubling Phi must reduce the bound");
        }
    }

    #[test]
    fn user_rate_approx_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (_, rcs) = random_reduced(3, 4, 4, 2, 15.0, &mut rng);
        let n = 2.0;
        let a = lmmse_user_rate_approx(&rcs, 10.0);
        let b = lmmse_user_rate_approx(&rcs, 10.0 + n);
        for (x, y) in a.iter().zip(&b) {
            assert!(((y - x) - 1.0).abs() < 1e-9, "per-user slope {}", y - x);
        }

        // symmetric two-user toy: orthogonal equal-norm columns
        let mut g = CMat::zeros(2, 2);
        g[(0, 0)] = C64::new(2.0, 0.0);
        g[(1, 1)] = C64::new(2.0, 0.0);
        let rcs = reduce_channels(&[g], 10.0, &FilterBank::identity(2, 1)).unwrap();
        let caps = lmmse_user_rate_approx(&rcs, 8.0);
        assert!((caps[0] - caps[1]).abs() < 1e-12);

        // rank deficiency -> sentinel
        let mut g = CMat::zeros(2, 2);
        g[(0, 0)] = C64::new(1.0, 0.0);
        g[(0, 1)] = C64::new(1.0, 0.0);
        let rcs = reduce_channels(&[g], 10.0, &FilterBank::identity(2, 1)).unwrap();
        let caps = lmmse_user_rate_approx(&rcs, 8.0);
        assert!(caps.iter().all(|c| *c == f64::NEG_INFINITY));
    }

    #[test]
    fn user_rate_approx_matches_exact_in_deep_regime() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let scale = 40.0;
        let h: Vec<CMat> = (0..3)
            .map(|_| complex_gaussian_matrix(4, 4, &mut rng).scale(scale))
            .collect();
        let cs = ChannelSet { h, rho: 10.0 };
        let fb = tcklt_bca(&cs, 2, 2, 0.0).unwrap().bank;
        let rcs = crate::dimred::reduce(&cs, &fb).unwrap();
        let r = 6.0;
        let deltas: Vec<f64> = (0..3)
            .map(|l| solve_uqn_delta(&rcs, l, r).unwrap())
            .collect();
        assert!(deltas.iter().all(|&d| d > 10.0), "not in regime: {deltas:?}");
        let (_, exact) = user_capacities_lmmse(&rcs, &deltas).unwrap();
        let approx = lmmse_user_rate_approx(&rcs, r);
        for (e, a) in exact.iter().zip(&approx) {
            assert!((e - a).abs() <= 0.5, "exact {e} vs approx {a}");
        }
    }
}
