//! Posterior summarization, convergence diagnostics, entry selection, and
//! prediction over retained chain draws.
//!
//! Credible intervals are equal-tailed empirical quantiles with type-7
//! linear interpolation; an entry is selected when its interval excludes
//! zero. Summaries pool the retained draws of all supplied chains; the
//! potential scale reduction factor compares the unpooled chains and is
//! reported for a fixed monitored set (mu, delta, tau2, and a deterministic
//! stratified subsample of at most 32 coefficient entries).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SofterError};
use crate::model::{ChainSamples, Dataset};
use crate::tensor::{frobenius_inner, index_from_offset, DenseTensor};

/// Largest number of coefficient entries monitored for convergence.
pub const MONITORED_B_ENTRIES: usize = 32;

/// Posterior mean and equal-tailed credible interval of one scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarSummary {
    pub mean: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// Potential scale reduction factor of one monitored parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsrfEntry {
    pub name: String,
    pub psrf: f64,
}

/// Posterior summary of a fit: entrywise coefficient means, intervals, and
/// selection flags, plus the scalar blocks and convergence diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub posterior_mean_b: DenseTensor,
    pub ci_lower_b: DenseTensor,
    pub ci_upper_b: DenseTensor,
    /// Entry offsets in canonical order; true when the interval excludes 0.
    pub selected: Vec<bool>,
    pub mu: ScalarSummary,
    pub delta: Vec<ScalarSummary>,
    pub tau2: ScalarSummary,
    /// Empty when fewer than two chains were supplied.
    pub psrf: Vec<PsrfEntry>,
    pub level: f64,
    /// Pooled retained draws behind every summary.
    pub draws: usize,
}

/// Type-7 empirical quantile of `sorted` at probability `p`.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Two-or-more-chain potential scale reduction factor,
/// sqrt(((n-1)/n W + B/n) / W) with within-chain variance W and
/// between-chain variance B.
pub fn psrf(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len();
    if m < 2 {
        return Err(SofterError::Invalid(
            "scale reduction needs at least two chains".into(),
        ));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(SofterError::Invalid("chains have unequal lengths".into()));
    }
    if n < 10 {
        return Err(SofterError::Invalid(format!(
            "chains of length {n} are too short for a scale reduction factor"
        )));
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b = n as f64 * sample_var(&means);
    let w = chains.iter().map(|c| sample_var(c)).sum::<f64>() / m as f64;
    if w <= 0.0 {
        // constant chains: agreement collapses the factor to 1,
        // disagreement blows it up
        return Ok(if b <= 0.0 { 1.0 } else { f64::INFINITY });
    }
    let vhat = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    Ok((vhat / w).sqrt())
}

/// Split-halves variant: each chain is cut in two and the halves enter the
/// standard factor as separate chains, exposing within-chain drift.
pub fn split_psrf(chains: &[Vec<f64>]) -> Result<f64> {
    let mut halves = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let h = c.len() / 2;
        // drop the middle draw of an odd-length chain so halves match
        halves.push(c[..h].to_vec());
        halves.push(c[c.len() - h..].to_vec());
    }
    psrf(&halves)
}

/// Offsets of the monitored coefficient entries: one per equal-width
/// stratum of the canonical order, at most [`MONITORED_B_ENTRIES`] of them.
pub fn monitored_b_offsets(len: usize) -> Vec<usize> {
    let m = len.min(MONITORED_B_ENTRIES);
    (0..m).map(|i| i * len / m).collect()
}

fn check_same_shape(samples: &[ChainSamples]) -> Result<(Vec<usize>, usize)> {
    let first = samples
        .first()
        .ok_or_else(|| SofterError::Invalid("no chains supplied".into()))?;
    let rec = first
        .records
        .first()
        .ok_or_else(|| SofterError::Invalid("chains hold no retained draws".into()))?;
    let dims = rec.b.dims().to_vec();
    let p = rec.delta.len();
    for s in samples {
        if s.config_hash != first.config_hash {
            return Err(SofterError::VersionMismatch(
                "chains were drawn under different configurations".into(),
            ));
        }
        for r in &s.records {
            if r.b.dims() != dims.as_slice() || r.delta.len() != p {
                return Err(SofterError::Shape("chain records disagree on shape".into()));
            }
        }
    }
    Ok((dims, p))
}

fn scalar_summary(draws: &mut Vec<f64>, p_lo: f64, p_hi: f64) -> ScalarSummary {
    let m = mean(draws);
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ScalarSummary {
        mean: m,
        ci_lower: quantile_sorted(draws, p_lo),
        ci_upper: quantile_sorted(draws, p_hi),
    }
}

fn offset_name(dims: &[usize], off: usize) -> String {
    let idx: Vec<String> =
        index_from_offset(dims, off).iter().map(|i| i.to_string()).collect();
    format!("b[{}]", idx.join(","))
}

/// Pools the retained draws of all chains into entrywise means, equal-tailed
/// credible intervals at `level`, and selection flags; computes the scale
/// reduction factor over the monitored set when two or more chains are
/// present.
pub fn summarize(samples: &[ChainSamples], level: f64) -> Result<FitSummary> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(SofterError::Invalid(format!(
            "credible level must lie in (0, 1], got {level}"
        )));
    }
    let (dims, p) = check_same_shape(samples)?;
    let total: usize = samples.iter().map(|s| s.records.len()).sum();
    if total < 50 {
        return Err(SofterError::Invalid(format!(
            "{total} retained draws are too few to summarize (need 50)"
        )));
    }
    let p_lo = (1.0 - level) / 2.0;
    let p_hi = 1.0 - p_lo;
    let len: usize = dims.iter().product();

    let entry = |off: usize| {
        let mut draws: Vec<f64> = samples
            .iter()
            .flat_map(|s| s.records.iter().map(move |r| r.b.values()[off]))
            .collect();
        let m = mean(&draws);
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (m, quantile_sorted(&draws, p_lo), quantile_sorted(&draws, p_hi))
    };
    let per_entry: Vec<(f64, f64, f64)> = (0..len).into_par_iter().map(entry).collect();
    let mut mean_b = Vec::with_capacity(len);
    let mut lo_b = Vec::with_capacity(len);
    let mut hi_b = Vec::with_capacity(len);
    let mut selected = Vec::with_capacity(len);
    for &(m, lo, hi) in &per_entry {
        mean_b.push(m);
        lo_b.push(lo);
        hi_b.push(hi);
        selected.push(lo > 0.0 || hi < 0.0);
    }

    let mut mu_draws: Vec<f64> = samples
        .iter()
        .flat_map(|s| s.records.iter().map(|r| r.mu))
        .collect();
    let mut tau2_draws: Vec<f64> = samples
        .iter()
        .flat_map(|s| s.records.iter().map(|r| r.tau2))
        .collect();
    let delta: Vec<ScalarSummary> = (0..p)
        .map(|j| {
            let mut d: Vec<f64> = samples
                .iter()
                .flat_map(|s| s.records.iter().map(move |r| r.delta[j]))
                .collect();
            scalar_summary(&mut d, p_lo, p_hi)
        })
        .collect();

    let mut psrf_entries = Vec::new();
    if samples.len() >= 2 {
        let trace = |f: &dyn Fn(&crate::model::ChainRecord) -> f64| -> Vec<Vec<f64>> {
            samples
                .iter()
                .map(|s| s.records.iter().map(|r| f(r)).collect())
                .collect()
        };
        psrf_entries.push(PsrfEntry {
            name: "mu".into(),
            psrf: psrf(&trace(&|r| r.mu))?,
        });
        for j in 0..p {
            psrf_entries.push(PsrfEntry {
                name: format!("delta[{}]", j + 1),
                psrf: psrf(&trace(&|r| r.delta[j]))?,
            });
        }
        psrf_entries.push(PsrfEntry {
            name: "tau2".into(),
            psrf: psrf(&trace(&|r| r.tau2))?,
        });
        for off in monitored_b_offsets(len) {
            psrf_entries.push(PsrfEntry {
                name: offset_name(&dims, off),
                psrf: psrf(&trace(&|r| r.b.values()[off]))?,
            });
        }
    }

    Ok(FitSummary {
        posterior_mean_b: DenseTensor::new(dims.clone(), mean_b)?,
        ci_lower_b: DenseTensor::new(dims.clone(), lo_b)?,
        ci_upper_b: DenseTensor::new(dims, hi_b)?,
        selected,
        mu: scalar_summary(&mut mu_draws, p_lo, p_hi),
        delta,
        tau2: scalar_summary(&mut tau2_draws, p_lo, p_hi),
        psrf: psrf_entries,
        level,
        draws: total,
    })
}

/// Per-unit posterior predictive means: the average over pooled draws of
/// mu + C'delta + <X, B>.
pub fn predict(samples: &[ChainSamples], new_dataset: &Dataset) -> Result<Vec<f64>> {
    let (dims, p) = check_same_shape(samples)?;
    if let Some(nd) = new_dataset.dims() {
        if nd != dims.as_slice() {
            return Err(SofterError::Shape(format!(
                "prediction tensors have dims {nd:?} but the fit used {dims:?}"
            )));
        }
    }
    if new_dataset.p() != p {
        return Err(SofterError::Shape(format!(
            "prediction units carry {} covariates but the fit used {}",
            new_dataset.p(),
            p
        )));
    }
    let total: usize = samples.iter().map(|s| s.records.len()).sum();
    let mut out = vec![0.0; new_dataset.n()];
    for s in samples {
        for r in &s.records {
            for i in 0..new_dataset.n() {
                let cov: f64 = new_dataset.covariates()[i]
                    .iter()
                    .zip(&r.delta)
                    .map(|(c, d)| c * d)
                    .sum();
                out[i] += r.mu + cov + frobenius_inner(&new_dataset.predictors()[i], &r.b)?;
            }
        }
    }
    for v in &mut out {
        *v /= total as f64;
    }
    Ok(out)
}

/// Mean squared difference between outcomes and predictive means.
pub fn predictive_mse(samples: &[ChainSamples], holdout: &Dataset) -> Result<f64> {
    let preds = predict(samples, holdout)?;
    let n = holdout.n();
    if n == 0 {
        return Err(SofterError::Invalid("empty holdout".into()));
    }
    Ok(preds
        .iter()
        .zip(holdout.y())
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / n as f64)
}
