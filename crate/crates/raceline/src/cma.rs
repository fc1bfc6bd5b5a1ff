//! Covariance matrix adaptation evolution strategy: derivative-free search
//! used for the global raceline optimization. Standard update rules
//! (weighted recombination, rank-one + rank-mu covariance update,
//! cumulative step-size adaptation) on top of the in-crate eigen solver.

use rayon::prelude::*;

use crate::linalg::{jacobi_eigen_sym, Matrix};
use crate::rng::{standard_normal, Prng};
use crate::{Error, Real, Result};

/// Default population size for dimension d.
pub fn default_population(dim: usize) -> usize {
    4 + (3.0 * (dim as f64).ln()).floor() as usize
}

#[derive(Clone, Debug)]
pub struct CmaState<T: Real = f64> {
    pub mean: Vec<T>,
    pub sigma: T,
    cov: Matrix<T>,
    /// Eigenvectors of cov (columns).
    eig_b: Matrix<T>,
    /// Sqrt of the (floored) eigenvalues.
    eig_d: Vec<T>,
    p_sigma: Vec<T>,
    p_c: Vec<T>,
    pub generation: usize,
    pub lambda: usize,
    mu: usize,
    weights: Vec<T>,
    mu_eff: T,
    c_sigma: T,
    d_sigma: T,
    c_c: T,
    c_1: T,
    c_mu: T,
    chi_n: T,
    /// Number of times eigenvalue flooring had to repair the covariance.
    pub repairs: usize,
}

impl<T: Real> CmaState<T> {
    pub fn new(mean: Vec<T>, sigma: T, lambda: Option<usize>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::Invalid("empty search space".into()));
        }
        if !(sigma > T::zero()) {
            return Err(Error::Invalid("initial step size must be positive".into()));
        }
        let lambda = lambda.unwrap_or_else(|| default_population(d));
        if lambda < 4 {
            return Err(Error::Invalid("population must be >= 4".into()));
        }
        let mu = lambda / 2;
        // Log-rank recombination weights, normalized.
        let mut weights: Vec<T> = (0..mu)
            .map(|i| {
                T::of((mu as f64 + 0.5).ln()) - T::of(((i + 1) as f64).ln())
            })
            .collect();
        let sum: T = weights.iter().copied().sum();
        for w in weights.iter_mut() {
            *w = *w / sum;
        }
        let sum_sq: T = weights.iter().map(|w| *w * *w).sum();
        let mu_eff = T::one() / sum_sq;
        let dim = T::from_usize_exact(d);
        let c_sigma = (mu_eff + T::of(2.0)) / (dim + mu_eff + T::of(5.0));
        let d_sigma = T::one()
            + T::of(2.0)
                * (((mu_eff - T::one()) / (dim + T::one())).sqrt() - T::one()).max(T::zero())
            + c_sigma;
        let c_c = (T::of(4.0) + mu_eff / dim) / (dim + T::of(4.0) + T::of(2.0) * mu_eff / dim);
        let c_1 = T::of(2.0) / ((dim + T::of(1.3)) * (dim + T::of(1.3)) + mu_eff);
        let c_mu = (T::one() - c_1).min(
            T::of(2.0) * (mu_eff - T::of(2.0) + T::one() / mu_eff)
                / ((dim + T::of(2.0)) * (dim + T::of(2.0)) + mu_eff),
        );
        let chi_n = dim.sqrt()
            * (T::one() - T::one() / (T::of(4.0) * dim)
                + T::one() / (T::of(21.0) * dim * dim));
        Ok(CmaState {
            mean,
            sigma,
            cov: Matrix::identity(d),
            eig_b: Matrix::identity(d),
            eig_d: vec![T::one(); d],
            p_sigma: vec![T::zero(); d],
            p_c: vec![T::zero(); d],
            generation: 0,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            repairs: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sample one generation of candidates: x = mean + sigma * B D z.
    pub fn ask(&self, rng: &mut Prng) -> Vec<Vec<T>> {
        let d = self.dim();
        let mut out = Vec::with_capacity(self.lambda);
        for _ in 0..self.lambda {
            let z: Vec<T> = (0..d).map(|_| T::of(standard_normal(rng))).collect();
            let mut x = self.mean.clone();
            for (j, zj) in z.iter().enumerate() {
                let dz = self.eig_d[j] * *zj;
                for i in 0..d {
                    x[i] += self.sigma * self.eig_b[(i, j)] * dz;
                }
            }
            out.push(x);
        }
        out
    }

    /// Rank the generation and update mean, evolution paths, covariance and
    /// step size. Ranking ties are broken by candidate index so the update
    /// never depends on evaluation order. If every candidate has the same
    /// cost there is no ranking information at all and the update is
    /// skipped entirely (the state only advances its generation counter).
    pub fn tell(&mut self, candidates: &[Vec<T>], costs: &[T]) -> Result<()> {
        if candidates.len() != self.lambda || costs.len() != self.lambda {
            return Err(Error::Invalid(format!(
                "expected {} candidates/costs, got {}/{}",
                self.lambda,
                candidates.len(),
                costs.len()
            )));
        }
        if costs.iter().any(|c| c.is_nan()) {
            return Err(Error::Invalid("NaN cost in generation".into()));
        }
        self.generation += 1;
        let all_tie = costs.iter().all(|c| *c == costs[0]);
        if all_tie {
            return Ok(());
        }
        let d = self.dim();
        let mut order: Vec<usize> = (0..self.lambda).collect();
        order.sort_by(|&a, &b| costs[a].partial_cmp(&costs[b]).expect("no NaN").then(a.cmp(&b)));

        let old_mean = self.mean.clone();
        let mut new_mean = vec![T::zero(); d];
        for (rank, &idx) in order.iter().take(self.mu).enumerate() {
            let w = self.weights[rank];
            for i in 0..d {
                new_mean[i] += w * candidates[idx][i];
            }
        }
        // Mean shift in sigma-normalized coordinates.
        let shift: Vec<T> = (0..d)
            .map(|i| (new_mean[i] - old_mean[i]) / self.sigma)
            .collect();
        // C^{-1/2} shift = B D^{-1} B^T shift.
        let mut bt_shift = vec![T::zero(); d];
        for j in 0..d {
            let mut s = T::zero();
            for i in 0..d {
                s += self.eig_b[(i, j)] * shift[i];
            }
            bt_shift[j] = s / self.eig_d[j];
        }
        let mut c_inv_shift = vec![T::zero(); d];
        for i in 0..d {
            let mut s = T::zero();
            for j in 0..d {
                s += self.eig_b[(i, j)] * bt_shift[j];
            }
            c_inv_shift[i] = s;
        }
        let cs = self.c_sigma;
        let coef_s = (cs * (T::of(2.0) - cs) * self.mu_eff).sqrt();
        for i in 0..d {
            self.p_sigma[i] = (T::one() - cs) * self.p_sigma[i] + coef_s * c_inv_shift[i];
        }
        let ps_norm: T = self.p_sigma.iter().map(|x| *x * *x).sum::<T>().sqrt();
        let gen_t = T::from_usize_exact(self.generation);
        let decay = T::one() - (T::one() - cs).powf(T::of(2.0) * gen_t);
        let h_sigma = ps_norm / decay.sqrt()
            < (T::of(1.4) + T::of(2.0) / (T::from_usize_exact(d) + T::one())) * self.chi_n;
        let cc = self.c_c;
        let coef_c = (cc * (T::of(2.0) - cc) * self.mu_eff).sqrt();
        for i in 0..d {
            self.p_c[i] = (T::one() - cc) * self.p_c[i]
                + if h_sigma { coef_c * shift[i] } else { T::zero() };
        }

        // Covariance: decay + rank-one + rank-mu.
        let one = T::one();
        let c1 = self.c_1;
        let cmu = self.c_mu;
        let delta_h = if h_sigma {
            T::zero()
        } else {
            c1 * cc * (T::of(2.0) - cc)
        };
        let base = one - c1 - cmu + delta_h;
        for r in 0..d {
            for c in 0..d {
                let mut v = base * self.cov[(r, c)] + c1 * self.p_c[r] * self.p_c[c];
                for (rank, &idx) in order.iter().take(self.mu).enumerate() {
                    let yr = (candidates[idx][r] - old_mean[r]) / self.sigma;
                    let yc = (candidates[idx][c] - old_mean[c]) / self.sigma;
                    v += cmu * self.weights[rank] * yr * yc;
                }
                self.cov[(r, c)] = v;
            }
        }

        self.mean = new_mean;
        self.sigma = self.sigma * ((cs / self.d_sigma) * (ps_norm / self.chi_n - one)).exp();

        self.refresh_eigen();
        Ok(())
    }

    /// Eigendecomposition with conditioning repair: eigenvalues below a
    /// floor relative to the largest are raised to it and the covariance is
    /// rebuilt, keeping the sampler full-rank.
    fn refresh_eigen(&mut self) {
        let d = self.dim();
        let (mut vals, vecs) = jacobi_eigen_sym(&self.cov);
        let max_val = vals.iter().fold(T::of(1e-300), |a, b| a.max(*b));
        let floor = max_val * T::of(1e-14);
        let mut repaired = false;
        for v in vals.iter_mut() {
            if *v < floor {
                *v = floor;
                repaired = true;
            }
        }
        if repaired {
            self.repairs += 1;
            for r in 0..d {
                for c in 0..d {
                    let mut s = T::zero();
                    for j in 0..d {
                        s += vecs[(r, j)] * vals[j] * vecs[(c, j)];
                    }
                    self.cov[(r, c)] = s;
                }
            }
        }
        self.eig_b = vecs;
        self.eig_d = vals.into_iter().map(|v| v.sqrt()).collect();
    }
}

/// One history row per generation; the data behind a convergence plot.
#[derive(Clone, Copy, Debug)]
pub struct GenerationRecord<T: Real = f64> {
    pub generation: usize,
    pub evaluations: usize,
    pub best_cost: T,
    pub mean_cost: T,
    pub sigma: T,
}

#[derive(Clone, Debug)]
pub struct OptimizeOutcome<T: Real = f64> {
    pub best: Vec<T>,
    pub best_cost: T,
    pub evaluations: usize,
    pub history: Vec<GenerationRecord<T>>,
    pub state: CmaState<T>,
}

/// Budgeted CMA-ES run. The initial point (or the warm state's mean) is
/// evaluated first so even a minimal budget returns a valid best; each
/// generation then costs lambda evaluations and only runs if it fits in the
/// remaining budget. Candidate evaluations run in parallel; ranking uses
/// the sampling order, so results are reproducible regardless of thread
/// scheduling.
pub fn optimize<T, F>(
    objective: F,
    initial: &[T],
    sigma_init: T,
    budget: usize,
    rng: &mut Prng,
    warm: Option<CmaState<T>>,
) -> Result<OptimizeOutcome<T>>
where
    T: Real,
    F: Fn(&[T]) -> T + Sync,
{
    let mut state = match warm {
        Some(mut s) => {
            if s.dim() != initial.len() {
                return Err(Error::Invalid("warm state dimension mismatch".into()));
            }
            // A fresh search phase wants renewed exploration around the
            // carried-over distribution, but the inflation must not compound
            // across many short phases or the sampler eventually escapes the
            // basin it is meant to refine. Never exceed the cold-start scale.
            s.sigma = (s.sigma * T::of(2.0)).min(sigma_init);
            s
        }
        None => CmaState::new(initial.to_vec(), sigma_init, None)?,
    };
    if budget == 0 {
        return Err(Error::Invalid("optimization budget must be > 0".into()));
    }
    let mut evaluations = 0usize;
    let start = state.mean.clone();
    let start_cost = objective(&start);
    evaluations += 1;
    let mut best = start;
    let mut best_cost = start_cost;
    let mut history = Vec::new();
    while evaluations + state.lambda <= budget {
        let candidates = state.ask(rng);
        let costs: Vec<T> = candidates.par_iter().map(|c| objective(c)).collect();
        evaluations += candidates.len();
        for (c, cost) in candidates.iter().zip(&costs) {
            if *cost < best_cost {
                best_cost = *cost;
                best = c.clone();
            }
        }
        state.tell(&candidates, &costs)?;
        let mean_cost = costs.iter().copied().sum::<T>() / T::from_usize_exact(costs.len());
        history.push(GenerationRecord {
            generation: state.generation,
            evaluations,
            best_cost,
            mean_cost,
            sigma: state.sigma,
        });
    }
    Ok(OptimizeOutcome {
        best,
        best_cost,
        evaluations,
        history,
        state,
    })
}
