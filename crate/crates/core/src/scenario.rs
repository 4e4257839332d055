//! Simulation environment: node placement, large-scale gains, power control,
//! Rayleigh fading draws and pilot-based MMSE channel estimation.
//!
//! Users and receivers are dropped uniformly in a square area at fixed
//! heights. Link gains follow a log-distance path loss model with log-normal
//! shadowing (reference distance 1 m, distances clamped below at 1 m so
//! colocated nodes cannot produce unbounded gain). Power control equalizes
//! each user's network-wide average received power.
//!
//! Every random quantity is drawn from an explicit RNG, and [`streams`]
//! derives independent ChaCha streams keyed by `(seed, trial, purpose)` so any
//! trial of a parallel run can be reproduced in isolation.

use crate::numerics::complex_gaussian_matrix;
use crate::{CMat, Error, RMat, RVec, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Reference distance for the path loss model, meters.
pub const REF_DISTANCE_M: f64 = 1.0;

/// Static description of the simulated deployment.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Number of single-antenna users.
    #[serde(rename = "K")]
    pub k: usize,
    /// Number of distributed receivers.
    #[serde(rename = "L")]
    pub l: usize,
    /// Antennas per receiver.
    #[serde(rename = "M")]
    pub m: usize,
    /// Side of the square deployment area, meters.
    pub area_side: f64,
    /// User antenna height, meters.
    pub user_height: f64,
    /// Receiver antenna height, meters.
    pub rx_height: f64,
    pub pathloss_exponent: f64,
    /// Log-normal shadowing standard deviation, dB.
    pub shadow_sigma_db: f64,
    /// Transmit SNR, dB.
    pub rho_db: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            k: 8,
            l: 4,
            m: 8,
            area_side: 200.0,
            user_height: 1.0,
            rx_height: 6.0,
            pathloss_exponent: 2.9,
            shadow_sigma_db: 5.7,
            rho_db: 15.0,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.l == 0 || self.m == 0 {
            return Err(Error::Config("K, L and M must all be at least 1".into()));
        }
        if !(self.area_side > 0.0) {
            return Err(Error::Config(format!(
                "area_side must be positive, got {}",
                self.area_side
            )));
        }
        if !(self.shadow_sigma_db >= 0.0) {
            return Err(Error::Config("shadow_sigma_db must be non-negative".into()));
        }
        Ok(())
    }

    /// Non-fatal configuration concerns, e.g. no overall excess of antennas.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.m * self.l < self.k {
            w.push(format!(
                "M*L = {} < K = {}: fewer receive antennas than users; the \
                 reduced-dimension constraint N >= K/L cannot hold",
                self.m * self.l,
                self.k
            ));
        }
        w
    }

    pub fn rho_linear(&self) -> f64 {
        10f64.powf(self.rho_db / 10.0)
    }
}

/// One placement realization: positions, large-scale gains and power control.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub user_positions: Vec<[f64; 3]>,
    pub rx_positions: Vec<[f64; 3]>,
    /// `beta[(l, k)]`: linear large-scale gain of the user-k -> receiver-l link.
    pub beta: RMat,
    /// Power-control coefficients, one per user.
    pub p: RVec,
}

/// The L power-control-adjusted channel matrices of one fading realization.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    /// `h[l]` is M x K; column k has per-antenna variance `p[k] * beta[(l,k)]`.
    pub h: Vec<CMat>,
    /// Linear transmit SNR.
    pub rho: f64,
}

/// MMSE channel estimates with their aggregate error covariances.
#[derive(Debug, Clone)]
pub struct EstimatedChannelSet {
    pub h_hat: Vec<CMat>,
    /// Aggregate estimation-error covariance per receiver (here scalar * I,
    /// stored as a full M x M matrix).
    pub c: Vec<CMat>,
    /// Linear pilot SNR.
    pub rho_pl: f64,
    /// The realized true channels, retained for genie evaluation.
    pub truth: ChannelSet,
}

/// Path loss in dB at 3-D distance `distance_m`, excluding shadowing.
/// Distances below the reference distance are clamped.
pub fn pathloss_db(distance_m: f64, cfg: &ScenarioConfig) -> f64 {
    let d = distance_m.max(REF_DISTANCE_M);
    -10.0 * cfg.pathloss_exponent * (d / REF_DISTANCE_M).log10()
}

/// Power control that equalizes average total received power per user:
/// `p_k = L / sum_l beta[(l,k)]`.
pub fn power_control(beta: &RMat) -> RVec {
    let l = beta.nrows() as f64;
    RVec::from_fn(beta.ncols(), |k, _| l / beta.column(k).sum())
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Draw one deployment: uniform placements, shadowed path loss, power control.
pub fn generate_scenario<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<Scenario> {
    cfg.validate()?;
    let user_positions: Vec<[f64; 3]> = (0..cfg.k)
        .map(|_| {
            [
                rng.random_range(0.0..cfg.area_side),
                rng.random_range(0.0..cfg.area_side),
                cfg.user_height,
            ]
        })
        .collect();
    let rx_positions: Vec<[f64; 3]> = (0..cfg.l)
        .map(|_| {
            [
                rng.random_range(0.0..cfg.area_side),
                rng.random_range(0.0..cfg.area_side),
                cfg.rx_height,
            ]
        })
        .collect();

    let mut beta = RMat::zeros(cfg.l, cfg.k);
    for l in 0..cfg.l {
        for k in 0..cfg.k {
            let pl_db = pathloss_db(dist3(rx_positions[l], user_positions[k]), cfg);
            let shadow_db: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.shadow_sigma_db;
            beta[(l, k)] = 10f64.powf((pl_db + shadow_db) / 10.0);
        }
    }
    let p = power_control(&beta);
    Ok(Scenario {
        user_positions,
        rx_positions,
        beta,
        p,
    })
}

/// One i.i.d. Rayleigh fading realization of all L channel matrices.
pub fn draw_channels<R: Rng + ?Sized>(
    sc: &Scenario,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> ChannelSet {
    let h = (0..cfg.l)
        .map(|l| {
            let mut hl = complex_gaussian_matrix(cfg.m, cfg.k, rng);
            for k in 0..cfg.k {
                let scale = (sc.p[k] * sc.beta[(l, k)]).sqrt();
                for i in 0..cfg.m {
                    hl[(i, k)] *= scale;
                }
            }
            hl
        })
        .collect();
    ChannelSet {
        h,
        rho: cfg.rho_linear(),
    }
}

/// Per-antenna scalar MMSE channel estimation from orthogonal pilots at
/// linear pilot SNR `rho_pl`.
///
/// For each propagation coefficient `h ~ CN(0, beta)` the pilot observation is
/// `y_p = sqrt(rho_pl) h + n` with unit-variance noise, and the MMSE estimate
/// is `h_hat = sqrt(rho_pl) beta / (1 + rho_pl beta) * y_p`. Estimate columns
/// carry the same power-control scaling as the true channel; the per-link
/// error covariance is `p_k beta / (1 + rho_pl beta) * I`.
pub fn estimate_channels<R: Rng + ?Sized>(
    cs: &ChannelSet,
    sc: &Scenario,
    rho_pl: f64,
    rng: &mut R,
) -> Result<EstimatedChannelSet> {
    if !(rho_pl > 0.0) {
        return Err(Error::InvalidInput(format!(
            "pilot SNR must be positive, got {rho_pl}"
        )));
    }
    let l_count = cs.h.len();
    let mut h_hat = Vec::with_capacity(l_count);
    let mut c = Vec::with_capacity(l_count);
    for l in 0..l_count {
        let hl = &cs.h[l];
        let (m, k_count) = hl.shape();
        let noise = complex_gaussian_matrix(m, k_count, rng);
        let mut est = CMat::zeros(m, k_count);
        let mut err_var_sum = 0.0;
        for k in 0..k_count {
            let beta = sc.beta[(l, k)];
            let pk = sc.p[k];
            let gain = rho_pl.sqrt() * beta / (1.0 + rho_pl * beta);
            for i in 0..m {
                // pilot observation of the unscaled propagation coefficient
                let y_p = rho_pl.sqrt() * hl[(i, k)] / pk.sqrt() + noise[(i, k)];
                est[(i, k)] = pk.sqrt() * gain * y_p;
            }
            err_var_sum += pk * beta / (1.0 + rho_pl * beta);
        }
        h_hat.push(est);
        c.push(CMat::identity(m, m).scale(err_var_sum));
    }
    Ok(EstimatedChannelSet {
        h_hat,
        c,
        rho_pl,
        truth: cs.clone(),
    })
}

/// Reproducible per-trial RNG streams.
///
/// Streams are keyed by `(seed, trial, purpose)` through a SplitMix64 hash
/// chain that expands into a full ChaCha seed, so workers can draw for any
/// trial independently and in any order.
pub mod streams {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// What a stream is consumed for; part of the stream key.
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum StreamPurpose {
        Placement,
        Fading,
        Pilot,
        Quantization,
    }

    impl StreamPurpose {
        fn tag(self) -> u64 {
            match self {
                StreamPurpose::Placement => 0x706c6163,
                StreamPurpose::Fading => 0x66616465,
                StreamPurpose::Pilot => 0x70696c74,
                StreamPurpose::Quantization => 0x7175616e,
            }
        }
    }

    fn mix(x: u64) -> u64 {
        let mut z = x.wrapping_add(0x9E3779B97F4A7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Independent ChaCha stream for `(seed, trial, purpose)`.
    pub fn trial_rng(seed: u64, trial: u64, purpose: StreamPurpose) -> ChaCha8Rng {
        let mut state = mix(seed ^ 0x5D58_7269_616C_u64);
        state = mix(state ^ trial);
        state = mix(state ^ purpose.tag());
        let mut bytes = [0u8; 32];
        for (i, chunk) in bytes.chunks_mut(8).enumerate() {
            state = mix(state.wrapping_add(i as u64));
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::streams::{trial_rng, StreamPurpose};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg_small() -> ScenarioConfig {
        ScenarioConfig {
            k: 2,
            l: 2,
            m: 4,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn power_control_examples() {
        // all-equal gains
        let beta = RMat::from_element(4, 3, 1.0);
        let p = power_control(&beta);
        for k in 0..3 {
            assert!((p[k] - 1.0).abs() < 1e-15);
        }
        // beta column [2,1,1,0] sums to L = 4
        let beta = RMat::from_column_slice(4, 1, &[2.0, 1.0, 1.0, 0.0]);
        let p = power_control(&beta);
        assert!((p[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn power_control_invariant_random_scenarios() {
        let cfg = ScenarioConfig::default();
        for trial in 0..1000u64 {
            let mut rng = trial_rng(42, trial, StreamPurpose::Placement);
            let sc = generate_scenario(&cfg, &mut rng).unwrap();
            for k in 0..cfg.k {
                let avg = sc.p[k] * sc.beta.column(k).sum() / cfg.l as f64;
                assert!((avg - 1.0).abs() < 1e-12, "trial {trial} user {k}: {avg}");
            }
            assert!(sc.beta.iter().all(|&b| b > 0.0));
        }
    }

    #[test]
    fn pathloss_reference_points() {
        let cfg = ScenarioConfig::default();
        assert_eq!(pathloss_db(1.0, &cfg), 0.0);
        assert!((pathloss_db(10.0, &cfg) + 29.0).abs() < 1e-12);
        assert!((pathloss_db(100.0, &cfg) + 58.0).abs() < 1e-12);
        // below the reference distance: clamped, no error
        assert_eq!(pathloss_db(0.01, &cfg), 0.0);
    }

    #[test]
    fn config_validation() {
        let cfg = ScenarioConfig {
            k: 0,
            ..ScenarioConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ScenarioConfig {
            area_side: -5.0,
            ..ScenarioConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ScenarioConfig {
            k: 40,
            l: 2,
            m: 4,
            ..ScenarioConfig::default()
        };
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.warnings().len(), 1);
    }

    /// Forced-beta scenario for moment checks.
    fn fixed_scenario(l: usize, k: usize, beta_val: f64) -> Scenario {
        let beta = RMat::from_element(l, k, beta_val);
        let p = power_control(&beta);
        Scenario {
            user_positions: vec![[0.0, 0.0, 1.0]; k],
            rx_positions: vec![[0.0, 0.0, 6.0]; l],
            beta,
            p,
        }
    }

    #[test]
    fn channel_moments() {
        let cfg = cfg_small();
        let sc = fixed_scenario(cfg.l, cfg.k, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let redraws = 25_000; // 4 antennas -> 1e5 samples pooled per (l,k) entry
        let mut sum = nalgebra::Complex::new(0.0, 0.0);
        let mut sum_sq = 0.0;
        let mut cross = nalgebra::Complex::new(0.0, 0.0);
        let mut n_samples = 0usize;
        for _ in 0..redraws {
            let cs = draw_channels(&sc, &cfg, &mut rng);
            let h0 = &cs.h[0];
            for i in 0..cfg.m {
                let z = h0[(i, 0)];
                sum += z;
                sum_sq += z.norm_sqr();
                cross += z * h0[(i, 1)].conj();
                n_samples += 1;
            }
        }
        let n = n_samples as f64;
        let expect_var = sc.p[0] * sc.beta[(0, 0)];
        let var = sum_sq / n;
        assert!(
            (var - expect_var).abs() < 0.02 * expect_var,
            "variance {var} vs {expect_var}"
        );
        // zero mean and cross-user decorrelation within 3 standard errors
        let se_mean = (expect_var / (2.0 * n)).sqrt();
        assert!(sum.re.abs() / n < 3.0 * se_mean);
        assert!(sum.im.abs() / n < 3.0 * se_mean);
        let se_cross = expect_var / n.sqrt();
        assert!(cross.norm() / n < 3.0 * se_cross);
    }

    #[test]
    fn fading_energy_matches_beta() {
        let cfg = cfg_small();
        let sc = fixed_scenario(cfg.l, cfg.k, 1.3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let redraws = 20_000;
        let mut energy = 0.0;
        for _ in 0..redraws {
            let cs = draw_channels(&sc, &cfg, &mut rng);
            // unscale power control to isolate E||h||^2 = M beta
            energy += cs.h[1].column(1).norm_squared() / sc.p[1];
        }
        let mean = energy / redraws as f64;
        let expect = cfg.m as f64 * sc.beta[(1, 1)];
        assert!((mean - expect).abs() < 0.02 * expect, "{mean} vs {expect}");
    }

    #[test]
    fn estimation_perfect_pilot_limit() {
        // Normalized gains: the residual error scales with p_k / rho_pl, so
        // links with extreme power control would dominate an unnormalized
        // check of "perfect pilots" behaviour.
        let cfg = cfg_small();
        let sc = fixed_scenario(cfg.l, cfg.k, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cs = draw_channels(&sc, &cfg, &mut rng);
        let est = estimate_channels(&cs, &sc, 1e12, &mut rng).unwrap();
        for l in 0..cfg.l {
            let rel = (&est.h_hat[l] - &cs.h[l]).norm() / cs.h[l].norm();
            assert!(rel < 1e-4, "receiver {l}: {rel}");
        }
    }

    #[test]
    fn estimation_error_stats() {
        // beta = 1, p = 1, rho_pl = 1 -> per-entry error variance 1/2
        let cfg = cfg_small();
        let sc = fixed_scenario(cfg.l, cfg.k, 1.0);
        assert!((sc.p[0] - 1.0).abs() < 1e-15);
        let expected_entry_var = sc.p[0] * sc.beta[(0, 0)] / (1.0 + 1.0 * sc.beta[(0, 0)]);
        assert!((expected_entry_var - 0.5).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let redraws = 25_000;
        let mut err_energy = 0.0;
        let mut corr = nalgebra::Complex::new(0.0, 0.0);
        let mut n_samples = 0usize;
        for _ in 0..redraws {
            let cs = draw_channels(&sc, &cfg, &mut rng);
            let est = estimate_channels(&cs, &sc, 1.0, &mut rng).unwrap();
            for i in 0..cfg.m {
                let e = cs.h[0][(i, 0)] - est.h_hat[0][(i, 0)];
                err_energy += e.norm_sqr();
                corr += est.h_hat[0][(i, 0)] * e.conj();
                n_samples += 1;
            }
        }
        let n = n_samples as f64;
        let var = err_energy / n;
        assert!((var - 0.5).abs() < 0.02 * 0.5, "error variance {var}");
        // orthogonality principle: estimate uncorrelated with error
        let se = 0.5 / n.sqrt();
        assert!(corr.norm() / n < 3.0 * se, "corr {}", corr.norm() / n);
        // aggregate covariance bookkeeping: C_l = sum_k per-link scalars * I
        let cs = draw_channels(&sc, &cfg, &mut rng);
        let est = estimate_channels(&cs, &sc, 1.0, &mut rng).unwrap();
        let expect_c = cfg.k as f64 * 0.5;
        assert!((est.c[0][(0, 0)].re - expect_c).abs() < 1e-12);
    }

    #[test]
    fn estimation_rejects_bad_pilot_snr() {
        let cfg = cfg_small();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sc = generate_scenario(&cfg, &mut rng).unwrap();
        let cs = draw_channels(&sc, &cfg, &mut rng);
        assert!(estimate_channels(&cs, &sc, 0.0, &mut rng).is_err());
        assert!(estimate_channels(&cs, &sc, -1.0, &mut rng).is_err());
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        use rand::RngCore;
        let mut a = trial_rng(1, 0, StreamPurpose::Fading);
        let mut b = trial_rng(1, 0, StreamPurpose::Fading);
        assert_eq!(a.next_u64(), b.next_u64());
        let mut c = trial_rng(1, 1, StreamPurpose::Fading);
        let mut d = trial_rng(1, 0, StreamPurpose::Pilot);
        let x = trial_rng(1, 0, StreamPurpose::Fading).next_u64();
        assert_ne!(x, c.next_u64());
        assert_ne!(x, d.next_u64());
        assert_ne!(x, trial_rng(2, 0, StreamPurpose::Fading).next_u64());
    }
}
