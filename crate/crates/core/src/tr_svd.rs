//! TR-SVD at a fixed circular shift and first rank, and the exhaustive
//! search over every (shift, R1) pair for the minimum-storage result.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::svd::{thin_svd, truncate_to, truncated_svd, truncation_rank, Matrix, TruncatedSvd};
use crate::tensor::DenseTensor;
use crate::tr_model::TrCores;

/// Kernels are 4-way: `T x C x D1 x D2`.
pub const KERNEL_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionConfig {
    /// Prescribed relative error `ε_p ∈ [0, 1)`.
    pub eps_p: f64,
    /// Circular left shift applied before decomposing.
    pub shift: usize,
    /// First TR rank; must divide the truncated rank of the first unfolding.
    pub r1: usize,
}

impl DecompositionConfig {
    pub fn new(eps_p: f64, shift: usize, r1: usize) -> Result<Self> {
        check_eps(eps_p)?;
        if r1 == 0 {
            return Err(Error::InvalidParameter("r1 must be >= 1".into()));
        }
        Ok(Self { eps_p, shift, r1 })
    }
}

pub(crate) fn check_eps(eps_p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eps_p) {
        return Err(Error::InvalidParameter(format!(
            "relative error must lie in [0, 1), got {eps_p}"
        )));
    }
    Ok(())
}

/// Per-step truncation thresholds `(δ_1, .., δ_{N-1})`.
///
/// The first SVD gets weight `2/N` of the squared error budget and every
/// later one `1/N`, so `Σ δ_k² = (ε_p ‖W‖)²`.
pub fn delta_schedule(eps_p: f64, fro_norm: f64, order: usize) -> Result<Vec<f64>> {
    if order < 3 {
        return Err(Error::InvalidParameter(format!(
            "the schedule needs order >= 3, got {order}"
        )));
    }
    if eps_p.is_nan() || eps_p < 0.0 || fro_norm.is_nan() || fro_norm < 0.0 {
        return Err(Error::InvalidParameter(
            "relative error and norm must be non-negative".into(),
        ));
    }
    let budget = eps_p * fro_norm;
    let n = order as f64;
    let mut deltas = vec![(1.0 / n).sqrt() * budget; order - 1];
    deltas[0] = (2.0 / n).sqrt() * budget;
    Ok(deltas)
}

/// All divisors of `r`, ascending.
pub fn divisors(r: usize) -> Vec<usize> {
    assert!(r >= 1, "divisors of zero are undefined");
    let mut low = Vec::new();
    let mut high = Vec::new();
    let mut d = 1;
    while d * d <= r {
        if r.is_multiple_of(d) {
            low.push(d);
            if d * d != r {
                high.push(r / d);
            }
        }
        d += 1;
    }
    low.extend(high.into_iter().rev());
    low
}

fn check_kernel(w: &DenseTensor<f64>) -> Result<()> {
    if w.ndim() != KERNEL_ORDER {
        return Err(Error::Order {
            expected: KERNEL_ORDER,
            actual: w.ndim(),
        });
    }
    Ok(())
}

/// Output of the first sequential step for one shift: the truncated SVD of
/// the mode-1 unfolding of the shifted kernel. Shared by every R1 candidate.
#[derive(Debug, Clone)]
struct FirstStage {
    shift: usize,
    shifted_dims: Vec<usize>,
    svd: TruncatedSvd,
    deltas: Vec<f64>,
}

impl FirstStage {
    fn compute(w: &DenseTensor<f64>, eps_p: f64, shift: usize) -> Result<Self> {
        let shifted = w.circular_shift(shift)?;
        let deltas = delta_schedule(eps_p, w.frobenius_norm(), w.ndim())?;
        let rows = shifted.dims()[0];
        let cols = shifted.len() / rows;
        let unfolding = Matrix::new(rows, cols, shifted.data().to_vec())?;
        let full = thin_svd(&unfolding)?;
        let r = truncation_rank(&full.s, deltas[0], rows, cols);
        Ok(Self {
            shift,
            shifted_dims: shifted.dims().to_vec(),
            svd: truncate_to(full, r),
            deltas,
        })
    }

    fn rank(&self) -> usize {
        self.svd.rank()
    }

    /// Remaining sequential steps for a given `R1`.
    fn finish(&self, r1: usize) -> Result<TrCores<f64>> {
        let rank = self.rank();
        if r1 == 0 || !rank.is_multiple_of(r1) {
            return Err(Error::RankNotDivisible { r1, rank });
        }
        let r2 = rank / r1;
        let dims = &self.shifted_dims;
        let order = dims.len();

        // G1[a, i, b] = U[i, a·R2 + b]
        let u = DenseTensor::new(vec![dims[0], r1, r2], self.svd.u.data.clone())?;
        let mut cores = vec![u.permute(&[1, 0, 2])?];

        // remainder (R1, R2, I2..IN) -> (R2, I2..IN, R1)
        let mut rem_dims = vec![r1, r2];
        rem_dims.extend_from_slice(&dims[1..]);
        let rem = DenseTensor::new(rem_dims, self.svd.s_vt().data)?;
        let mut axes: Vec<usize> = (1..=order).collect();
        axes.push(0);
        let mut rem = rem.permute(&axes)?.into_data();

        let mut left = r2;
        for (step, &delta) in self.deltas.iter().enumerate().skip(1) {
            let mode = dims[step];
            let rows = left * mode;
            let cols = rem.len() / rows;
            let t = truncated_svd(&Matrix::new(rows, cols, rem)?, delta)?;
            let right = t.rank();
            cores.push(DenseTensor::new(vec![left, mode, right], t.u.data.clone())?);
            rem = t.s_vt().data;
            left = right;
        }
        cores.push(DenseTensor::new(vec![left, dims[order - 1], r1], rem)?);
        TrCores::new(cores, self.shift)
    }
}

/// Truncated rank of the mode-1 unfolding of `w` shifted by `shift`, at the
/// first-step threshold for `eps_p`.
pub fn first_rank(w: &DenseTensor<f64>, eps_p: f64, shift: usize) -> Result<usize> {
    check_kernel(w)?;
    check_eps(eps_p)?;
    Ok(FirstStage::compute(w, eps_p, shift)?.rank())
}

/// Sequential TR-SVD of a 4-way kernel under `cfg.shift` with first rank `cfg.r1`.
pub fn tr_svd(w: &DenseTensor<f64>, cfg: &DecompositionConfig) -> Result<TrCores<f64>> {
    check_kernel(w)?;
    check_eps(cfg.eps_p)?;
    if cfg.shift >= KERNEL_ORDER {
        return Err(Error::ModeOutOfRange {
            mode: cfg.shift,
            order: KERNEL_ORDER,
        });
    }
    FirstStage::compute(w, cfg.eps_p, cfg.shift)?.finish(cfg.r1)
}

/// `‖W - TR(cores)‖_F / ‖W‖_F`, with the cores mapped back to W's orientation.
pub fn relative_error(w: &DenseTensor<f64>, cores: &TrCores<f64>) -> Result<f64> {
    let norm = w.frobenius_norm();
    let diff = cores.reconstruct_original().distance(w)?;
    Ok(if norm > 0.0 { diff / norm } else { diff })
}

/// One evaluated (shift, R1) combination.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub shift: usize,
    pub r1: usize,
    pub storage: usize,
    pub cores: TrCores<f64>,
}

impl Candidate {
    fn key(&self) -> (usize, usize, usize) {
        (self.storage, self.shift, self.r1)
    }
}

/// Minimum storage, ties broken by smaller shift and then smaller R1. The
/// choice does not depend on the order of `candidates`.
pub fn select_best(candidates: &[Candidate]) -> Option<&Candidate> {
    candidates.iter().min_by_key(|c| c.key())
}

/// Every admissible `(shift, R1)` pair for `w` at `eps_p`.
pub fn candidate_keys(w: &DenseTensor<f64>, eps_p: f64) -> Result<Vec<(usize, usize)>> {
    let mut keys = Vec::new();
    for shift in 0..KERNEL_ORDER {
        let r = first_rank(w, eps_p, shift)?;
        keys.extend(divisors(r).into_iter().map(|r1| (shift, r1)));
    }
    Ok(keys)
}

/// Runs [`tr_svd`] for each key, sequentially and in the given order.
pub fn evaluate_candidates(
    w: &DenseTensor<f64>,
    eps_p: f64,
    keys: &[(usize, usize)],
) -> Result<Vec<Candidate>> {
    keys.iter()
        .map(|&(shift, r1)| {
            let cores = tr_svd(w, &DecompositionConfig::new(eps_p, shift, r1)?)?;
            Ok(Candidate {
                shift,
                r1,
                storage: cores.param_count(),
                cores,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub cores: TrCores<f64>,
    pub shift: usize,
    pub r1: usize,
    pub storage: usize,
    pub achieved_rel_error: f64,
    pub candidates_evaluated: usize,
}

/// Summary of a search without the core payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub shift: usize,
    pub r1: usize,
    pub ranks: Vec<usize>,
    pub storage: usize,
    pub achieved_rel_error: f64,
    pub candidates_evaluated: usize,
}

impl SearchResult {
    pub fn summary(&self) -> SearchSummary {
        SearchSummary {
            shift: self.shift,
            r1: self.r1,
            ranks: self.cores.ranks(),
            storage: self.storage,
            achieved_rel_error: self.achieved_rel_error,
            candidates_evaluated: self.candidates_evaluated,
        }
    }
}

/// Exhaustive minimum-storage search over all circular shifts and all
/// divisors R1 of the truncated first-unfolding rank.
///
/// Candidates run in parallel; the selection is order independent, so the
/// result does not depend on scheduling.
pub fn rsdtr_search(w: &DenseTensor<f64>, eps_p: f64) -> Result<SearchResult> {
    check_kernel(w)?;
    check_eps(eps_p)?;
    let stages: Vec<FirstStage> = (0..KERNEL_ORDER)
        .into_par_iter()
        .map(|shift| FirstStage::compute(w, eps_p, shift))
        .collect::<Result<_>>()?;
    let jobs: Vec<(&FirstStage, usize)> = stages
        .iter()
        .flat_map(|st| divisors(st.rank()).into_iter().map(move |r1| (st, r1)))
        .collect();
    let candidates: Vec<Candidate> = jobs
        .par_iter()
        .map(|&(st, r1)| {
            let cores = st.finish(r1)?;
            Ok(Candidate {
                shift: st.shift,
                r1,
                storage: cores.param_count(),
                cores,
            })
        })
        .collect::<Result<_>>()?;
    let best = select_best(&candidates).expect("R1 = 1 is always admissible");
    Ok(SearchResult {
        achieved_rel_error: relative_error(w, &best.cores)?,
        cores: best.cores.clone(),
        shift: best.shift,
        r1: best.r1,
        storage: best.storage,
        candidates_evaluated: candidates.len(),
    })
}
