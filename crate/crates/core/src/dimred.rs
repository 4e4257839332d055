//! Dimension-reduction filter design and mutual-information diagnostics.
//!
//! Each receiver applies an `M x N` filter with orthonormal columns to its
//! received signal before compression. The designs implemented here:
//!
//! * [`tklt`] — local principal subspace of `H_l H_l†` (truncated KLT);
//! * [`tcklt_bca`] — block coordinate ascent on the joint mutual information,
//!   updating each receiver's filter to the principal subspace of its signal
//!   covariance *conditioned on the other receivers' reduced observations*
//!   (truncated conditional KLT). Initialized at the T-KLT; the objective is
//!   recorded after every inner update and is non-decreasing by construction;
//! * [`antenna_selection`] / [`antenna_reduce`] — baseline schemes whose
//!   filter columns are standard basis vectors.
//!
//! All joint/conditional mutual informations are log-determinants of
//! `I + rho * Gram` forms evaluated through Cholesky factorizations.

use crate::numerics::{
    hermitian_eig, hermitian_part, log2_det_eye_plus, log2_det_psd, orthonormal_complement,
    principal_subspace, HermitianEig, ORTHONORMALITY_TOL,
};
use crate::scenario::ChannelSet;
use crate::{C64, CMat, Error, Result};

/// Default relative sweep-improvement threshold for stopping the BCA early.
pub const BCA_DEFAULT_REL_TOL: f64 = 1e-6;

/// Which design produced a filter bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrMethod {
    Tcklt,
    Tklt,
    AntennaSelect,
    AntennaReduce,
    /// No dimension reduction: the filter is the full identity.
    None,
}

impl DrMethod {
    pub fn label(self) -> &'static str {
        match self {
            DrMethod::Tcklt => "tcklt",
            DrMethod::Tklt => "tklt",
            DrMethod::AntennaSelect => "antenna_select",
            DrMethod::AntennaReduce => "antenna_reduce",
            DrMethod::None => "none",
        }
    }
}

/// One `M x N` dimension-reduction filter per receiver, orthonormal columns.
#[derive(Debug, Clone)]
pub struct FilterBank {
    pub w: Vec<CMat>,
    pub n_red: usize,
    pub method: DrMethod,
}

impl FilterBank {
    /// Wrap filters after checking orthonormality of every `W_l`.
    pub fn new(w: Vec<CMat>, method: DrMethod) -> Result<Self> {
        let n_red = w
            .first()
            .ok_or_else(|| Error::InvalidInput("empty filter bank".into()))?
            .ncols();
        for (l, wl) in w.iter().enumerate() {
            if wl.ncols() != n_red {
                return Err(Error::InvalidInput(format!(
                    "filter {l} has {} columns, expected {n_red}",
                    wl.ncols()
                )));
            }
            let gram = wl.adjoint() * wl;
            let dev = (gram - CMat::identity(n_red, n_red)).norm();
            if dev > ORTHONORMALITY_TOL * (n_red as f64).sqrt().max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "filter {l} columns are not orthonormal (deviation {dev:.3e})"
                )));
            }
        }
        Ok(Self { w, n_red, method })
    }

    /// Identity filters (no dimension reduction), one per receiver.
    pub fn identity(m: usize, receivers: usize) -> Self {
        Self {
            w: vec![CMat::identity(m, m); receivers],
            n_red: m,
            method: DrMethod::None,
        }
    }
}

/// Check `ceil(K/L) <= n <= min(M,K)` for a reduced dimension.
pub fn validate_reduced_dim(n: usize, m: usize, k: usize, l: usize) -> Result<()> {
    let lo = k.div_ceil(l);
    let hi = m.min(k);
    if n < lo || n > hi {
        return Err(Error::InvalidInput(format!(
            "reduced dimension {n} outside [{lo}, {hi}] for M={m}, K={k}, L={l}"
        )));
    }
    Ok(())
}

/// Reduced-dimension equivalent channels `G_l = W_l† H_l` with their local
/// eigendecompositions.
#[derive(Debug, Clone)]
pub struct ReducedChannelSet {
    pub g: Vec<CMat>,
    /// Eigendecomposition of `G_l G_l†` (eigenvalues `gamma_{l,i}` descending,
    /// clamped at zero).
    pub eig: Vec<HermitianEig>,
    /// Geometric mean of the `gamma_{l,i}` per receiver; zero if any vanish.
    pub gamma_bar: Vec<f64>,
    pub rho: f64,
}

/// Apply a filter bank to a channel set.
pub fn reduce(cs: &ChannelSet, fb: &FilterBank) -> Result<ReducedChannelSet> {
    reduce_channels(&cs.h, cs.rho, fb)
}

/// As [`reduce`], for a raw list of channel matrices.
pub fn reduce_channels(h: &[CMat], rho: f64, fb: &FilterBank) -> Result<ReducedChannelSet> {
    if h.len() != fb.w.len() {
        return Err(Error::InvalidInput(format!(
            "{} channels vs {} filters",
            h.len(),
            fb.w.len()
        )));
    }
    let mut g = Vec::with_capacity(h.len());
    let mut eig = Vec::with_capacity(h.len());
    let mut gamma_bar = Vec::with_capacity(h.len());
    for (hl, wl) in h.iter().zip(&fb.w) {
        let gl = wl.adjoint() * hl;
        let e = hermitian_eig(&(&gl * gl.adjoint()))?;
        let mut vals = e.values.clone();
        for v in vals.iter_mut() {
            *v = v.max(0.0);
        }
        let gb = if vals.iter().all(|&v| v > 0.0) {
            (vals.iter().map(|v| v.ln()).sum::<f64>() / vals.len() as f64).exp()
        } else {
            0.0
        };
        eig.push(HermitianEig {
            values: vals,
            vectors: e.vectors,
        });
        gamma_bar.push(gb);
        g.push(gl);
    }
    Ok(ReducedChannelSet {
        g,
        eig,
        gamma_bar,
        rho,
    })
}

/// T-KLT filter for one receiver: the `n` principal eigenvectors of `H_l H_l†`.
pub fn tklt(h_l: &CMat, n: usize) -> Result<CMat> {
    principal_subspace(&(h_l * h_l.adjoint()), n)
}

fn tklt_filters(h: &[CMat], n: usize) -> Result<Vec<CMat>> {
    h.iter().map(|hl| tklt(hl, n)).collect()
}

/// Gram contribution of one filtered receiver, `H_l† W_l W_l† H_l`.
fn gram_term(h_l: &CMat, w_l: &CMat) -> CMat {
    let g = w_l.adjoint() * h_l;
    hermitian_part(&(g.adjoint() * g))
}

/// Joint mutual information `I(z_1,...,z_L; x)` in bpcu for a filter bank.
pub fn joint_mi(cs: &ChannelSet, fb: &FilterBank) -> Result<f64> {
    joint_mi_channels(&cs.h, cs.rho, fb)
}

/// As [`joint_mi`], for a raw list of channel matrices.
pub fn joint_mi_channels(h: &[CMat], rho: f64, fb: &FilterBank) -> Result<f64> {
    let k = h[0].ncols();
    let mut s = CMat::zeros(k, k);
    for (hl, wl) in h.iter().zip(&fb.w) {
        s += gram_term(hl, wl);
    }
    log2_det_eye_plus(&s.scale(rho))
}

/// Unfiltered mutual information `I(y_1,...,y_L; x)` in bpcu.
pub fn full_mi(cs: &ChannelSet) -> Result<f64> {
    let k = cs.h[0].ncols();
    let mut s = CMat::zeros(k, k);
    for hl in &cs.h {
        s += hermitian_part(&(hl.adjoint() * hl));
    }
    log2_det_eye_plus(&s.scale(cs.rho))
}

/// Result of a block-coordinate-ascent filter design.
#[derive(Debug, Clone)]
pub struct BcaRun {
    pub bank: FilterBank,
    /// Joint MI at initialization and after every inner update, in order.
    pub objective: Vec<f64>,
    /// Number of completed outer sweeps.
    pub sweeps: usize,
}

impl BcaRun {
    /// Objective after `j` full sweeps (index 0 is the T-KLT initialization).
    pub fn objective_after_sweep(&self, j: usize) -> f64 {
        let l = self.bank.w.len();
        let idx = (j * l).min(self.objective.len() - 1);
        self.objective[idx]
    }
}

/// T-CKLT filter design by block coordinate ascent on the joint MI.
///
/// Filters start at the T-KLT. Each inner step replaces `W_l` with the `n`
/// principal eigenvectors of `H_l A_l H_l†`, where
/// `A_l = (I_K + rho * sum_{i != l} H_i† W_i W_i† H_i)^{-1}`. Stops after
/// `j_max` sweeps, or earlier once the relative objective increase over a
/// sweep drops below `rel_tol`.
///
/// The running Gram sum is maintained incrementally, so cost per sweep is
/// linear in the number of receivers.
pub fn tcklt_bca(cs: &ChannelSet, n: usize, j_max: usize, rel_tol: f64) -> Result<BcaRun> {
    let h = &cs.h;
    let rho = cs.rho;
    let l_count = h.len();
    let (m, k) = h[0].shape();
    validate_reduced_dim(n, m, k, l_count)?;
    if j_max == 0 {
        return Err(Error::InvalidInput("j_max must be at least 1".into()));
    }
    for hl in h {
        if !hl.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::InvalidInput(
                "channel contains non-finite entries".into(),
            ));
        }
    }

    let mut w = tklt_filters(h, n)?;
    let mut terms: Vec<CMat> = h.iter().zip(&w).map(|(hl, wl)| gram_term(hl, wl)).collect();
    let mut s = CMat::zeros(k, k);
    for t in &terms {
        s += t;
    }
    let mut objective = vec![log2_det_eye_plus(&s.scale(rho))?];
    let mut sweeps = 0;

    for _ in 0..j_max {
        let start = *objective.last().expect("non-empty");
        for l in 0..l_count {
            let s_others = &s - &terms[l];
            // (I + rho*S_others) is Hermitian positive definite for rho >= 0
            let a_inv = CMat::identity(k, k) + hermitian_part(&s_others).scale(rho);
            let chol = nalgebra::Cholesky::new(a_inv).ok_or_else(|| {
                Error::RankDeficient("I + rho*S must be positive definite".into())
            })?;
            let x = chol.solve(&h[l].adjoint());
            let b = hermitian_part(&(&h[l] * x));
            w[l] = principal_subspace(&b, n)?;
            terms[l] = gram_term(&h[l], &w[l]);
            s = &s_others + &terms[l];
            objective.push(log2_det_eye_plus(&s.scale(rho))?);
        }
        sweeps += 1;
        let end = *objective.last().expect("non-empty");
        if end - start < rel_tol * start.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }

    Ok(BcaRun {
        bank: FilterBank::new(w, DrMethod::Tcklt)?,
        objective,
        sweeps,
    })
}

/// T-KLT bank for every receiver (local design, no coordination).
pub fn tklt_bank_design(cs: &ChannelSet, n: usize) -> Result<FilterBank> {
    let (m, k) = cs.h[0].shape();
    validate_reduced_dim(n, m, k, cs.h.len())?;
    FilterBank::new(tklt_filters(&cs.h, n)?, DrMethod::Tklt)
}

/// Conditional mutual information `I(z_l; x | z_l^c)` in bpcu.
pub fn conditional_mi(l: usize, cs: &ChannelSet, fb: &FilterBank) -> Result<f64> {
    let h = &cs.h;
    let rho = cs.rho;
    let k = h[0].ncols();
    let mut s_others = CMat::zeros(k, k);
    for (i, (hl, wl)) in h.iter().zip(&fb.w).enumerate() {
        if i != l {
            s_others += gram_term(hl, wl);
        }
    }
    let a_inv = CMat::identity(k, k) + s_others.scale(rho);
    let chol = nalgebra::Cholesky::new(a_inv)
        .ok_or_else(|| Error::RankDeficient("I + rho*S must be positive definite".into()))?;
    let x = chol.solve(&h[l].adjoint());
    let b = hermitian_part(&(&h[l] * x));
    let proj = fb.w[l].adjoint() * b * &fb.w[l];
    log2_det_eye_plus(&proj.scale(rho))
}

/// Information lost to dimension reduction, with its SNR-independent cap.
#[derive(Debug, Clone, Copy)]
pub struct InfoLoss {
    /// `I(y; x | z)` in bpcu at the operating SNR.
    pub loss: f64,
    /// Upper bound independent of SNR; `None` when the reduced global channel
    /// is rank deficient (the bound requires a full-rank equivalent channel).
    pub rho_independent_bound: Option<f64>,
}

/// Total information lost by a filter bank, `I(y_1..y_L; x | z_1..z_L)`.
///
/// Complement filters spanning the discarded subspace are constructed
/// internally. Also evaluates the SNR-independent upper bound on the loss.
pub fn info_loss(cs: &ChannelSet, fb: &FilterBank) -> Result<InfoLoss> {
    let h = &cs.h;
    let rho = cs.rho;
    let k = h[0].ncols();
    let mut s_kept = CMat::zeros(k, k);
    let mut s_lost = CMat::zeros(k, k);
    for (hl, wl) in h.iter().zip(&fb.w) {
        s_kept += gram_term(hl, wl);
        if wl.ncols() < wl.nrows() {
            let wc = orthonormal_complement(wl)?;
            s_lost += gram_term(hl, &wc);
        }
    }
    // det(I + B A^{-1}) = det(A + B) / det(A) with A = I + rho*S_kept
    let loss = log2_det_eye_plus(&(&s_kept + &s_lost).scale(rho))?
        - log2_det_eye_plus(&s_kept.scale(rho))?;
    let bound = match log2_det_psd(&s_kept)? {
        Some(ld_kept) => log2_det_psd(&(&s_kept + &s_lost))?.map(|ld_all| ld_all - ld_kept),
        None => None,
    };
    Ok(InfoLoss {
        loss: loss.max(0.0),
        rho_independent_bound: bound,
    })
}

/// Greedy antenna selection: round-robin over receivers, each step adding the
/// standard-basis column that maximizes joint MI; ties go to the lowest index.
pub fn antenna_selection(cs: &ChannelSet, n: usize) -> Result<FilterBank> {
    let h = &cs.h;
    let rho = cs.rho;
    let l_count = h.len();
    let (m, k) = h[0].shape();
    validate_reduced_dim(n, m, k, l_count)?;

    // rank-one Gram contribution of antenna a at receiver l
    let row_gram = |l: usize, a: usize| -> CMat {
        let row = h[l].row(a); // 1 x K
        hermitian_part(&(row.adjoint() * row))
    };

    let mut selected: Vec<Vec<usize>> = vec![Vec::new(); l_count];
    let mut s = CMat::zeros(k, k);
    for _ in 0..n {
        for (l, sel) in selected.iter_mut().enumerate() {
            let mut best: Option<(usize, f64, CMat)> = None;
            for a in 0..m {
                if sel.contains(&a) {
                    continue;
                }
                let cand = row_gram(l, a);
                let val = log2_det_eye_plus(&(&s + &cand).scale(rho))?;
                if best.as_ref().is_none_or(|(_, bv, _)| val > *bv) {
                    best = Some((a, val, cand));
                }
            }
            let (a, _, cand) = best.expect("n <= m guarantees a free antenna");
            sel.push(a);
            s += cand;
        }
    }

    let w = selected
        .iter()
        .map(|sel| {
            let mut sorted = sel.clone();
            sorted.sort_unstable();
            let mut wl = CMat::zeros(m, n);
            for (j, &a) in sorted.iter().enumerate() {
                wl[(a, j)] = C64::new(1.0, 0.0);
            }
            wl
        })
        .collect();
    FilterBank::new(w, DrMethod::AntennaSelect)
}

/// Keep the first `n` antennas at every receiver.
pub fn antenna_reduce(cs: &ChannelSet, n: usize) -> Result<FilterBank> {
    let (m, k) = cs.h[0].shape();
    validate_reduced_dim(n, m, k, cs.h.len())?;
    let mut wl = CMat::zeros(m, n);
    for j in 0..n {
        wl[(j, j)] = C64::new(1.0, 0.0);
    }
    FilterBank::new(vec![wl; cs.h.len()], DrMethod::AntennaReduce)
}

/// High-SNR limit of the BCA update matrix for receiver `l`:
/// `H_l (sum_{i != l} H_i† W_i W_i† H_i)^{-1} H_l†`.
///
/// Power control cancels inside this expression, so it may be fed either the
/// power-adjusted or the raw propagation channels.
pub fn high_snr_update_matrix(h: &[CMat], fb: &FilterBank, l: usize) -> Result<CMat> {
    let k = h[0].ncols();
    let mut s_others = CMat::zeros(k, k);
    for (i, (hl, wl)) in h.iter().zip(&fb.w).enumerate() {
        if i != l {
            s_others += gram_term(hl, wl);
        }
    }
    // Cholesky alone can slip past a numerically singular PSD sum, so gate on
    // the spectrum explicitly.
    let eig = hermitian_eig(&s_others)?;
    let max = eig.values[0].max(0.0);
    if max <= 0.0 || eig.values[k - 1] <= 1e-12 * max {
        return Err(Error::RankDeficient(
            "conditioning observations span fewer than K dimensions".into(),
        ));
    }
    let chol = nalgebra::Cholesky::new(hermitian_part(&s_others)).ok_or_else(|| {
        Error::RankDeficient("conditioning observations span fewer than K dimensions".into())
    })?;
    let x = chol.solve(&h[l].adjoint());
    Ok(hermitian_part(&(&h[l] * x)))
}
