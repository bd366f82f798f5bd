//! Genetic search for measurement modes that maximize EPR squeezing.
//!
//! A candidate basis is a real gene matrix `A` (grid points × modes) whose
//! thin QR factor `Q` supplies the modes `Φ_k = Q_k / sqrt(dω)`. Modes are
//! found one column at a time: while column `k'` evolves, columns before it
//! stay frozen, which leaves `Φ_1 … Φ_{k'-1}` untouched. The same modes are
//! used for signal and idler.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::assemble_covariance;
use crate::error::{Error, Result};
use crate::filtering::{Filter, Projector};
use crate::linalg::{CMatrix, C64};
use crate::metrics::mode_squeezing_db;
use crate::spectral::{FrequencyGrid, SchmidtData};

const MODULE: &str = "global_opt";

/// `|R_jj|` below this fraction of the column norm counts as rank loss.
const RANK_RTOL: f64 = 1e-10;

/// How the two parents of each child are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ParentSelection {
    /// Both parents uniformly from the whole population.
    Uniform,
    /// Each parent is the fitter of `size` uniformly drawn individuals.
    Tournament { size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaParams {
    pub population: usize,
    pub mutation_prob: f64,
    pub mutation_sigma: f64,
    pub convergence_tol: f64,
    /// Generations over which the best fitness must improve by at least
    /// `convergence_tol`.
    pub convergence_window: usize,
    pub max_generations: usize,
    pub selection: ParentSelection,
    pub rng_seed: u64,
}

impl Default for GaParams {
    fn default() -> Self {
        GaParams {
            population: 256,
            mutation_prob: 0.02,
            mutation_sigma: 0.1,
            convergence_tol: 1e-4,
            convergence_window: 50,
            max_generations: 10_000,
            selection: ParentSelection::Tournament { size: 2 },
            rng_seed: 0,
        }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(MODULE, msg));
        if self.population < 4 || self.population % 2 != 0 {
            return bad(format!("population must be even and at least 4, got {}", self.population));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return bad(format!("mutation_prob must lie in [0, 1], got {}", self.mutation_prob));
        }
        if !(self.mutation_sigma >= 0.0 && self.mutation_sigma.is_finite()) {
            return bad(format!("mutation_sigma must be non-negative, got {}", self.mutation_sigma));
        }
        if !(self.convergence_tol > 0.0) {
            return bad(format!("convergence_tol must be positive, got {}", self.convergence_tol));
        }
        if self.convergence_window == 0 || self.max_generations == 0 {
            return bad("convergence_window and max_generations must be positive".into());
        }
        if let ParentSelection::Tournament { size } = self.selection {
            if size == 0 || size > self.population {
                return bad(format!("tournament size {size} must lie in 1..=population"));
            }
        }
        Ok(())
    }
}

/// Thin QR factorization with non-negative diagonal in `R`.
pub fn qr_orthonormalize(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, k) = a.shape();
    if k == 0 || k > n {
        return Err(Error::config(
            MODULE,
            format!("gene matrix must be tall with at least one column, got {n}x{k}"),
        ));
    }
    let qr = a.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
            r.row_mut(j).neg_mut();
        }
        let col_norm = a.column(j).norm();
        if !(r[(j, j)] > RANK_RTOL * col_norm) || !r[(j, j)].is_finite() {
            return Err(Error::numerical(
                MODULE,
                format!("gene matrix is rank deficient at column {j} (R_jj = {:.3e})", r[(j, j)]),
            ));
        }
    }
    Ok((q, r))
}

#[derive(Debug, Clone)]
pub struct BasisCandidate {
    pub genes: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub fitness: f64,
}

/// The filtered state against which bases are scored.
#[derive(Debug, Clone)]
pub struct StateContext {
    projector: Projector,
    n_retained: usize,
}

impl StateContext {
    pub fn new(schmidt: &SchmidtData, filter_a: &Filter, filter_b: &Filter) -> Result<Self> {
        Ok(StateContext {
            projector: Projector::new(schmidt, filter_a, filter_b)?,
            n_retained: schmidt.n_retained(),
        })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        self.projector.grid()
    }

    pub fn n_retained(&self) -> usize {
        self.n_retained
    }

    /// Squeezing of a single real measurement mode used on both arms.
    fn mode_squeezing(&self, mode: &[f64]) -> Result<f64> {
        let col = CMatrix::from_iterator(mode.len(), 1, mode.iter().map(|&x| C64::new(x, 0.0)));
        let p = self.projector.project_unchecked(&col, &col);
        let cov = assemble_covariance(&p, 1)?;
        Ok(mode_squeezing_db(&cov, 0)?.squeezing_db)
    }
}

/// Largest deviation of `Φ^T Φ dω` from the identity.
fn real_orthonormality_error(phi: &DMatrix<f64>, d_omega: f64) -> f64 {
    let gram = phi.transpose() * phi * d_omega;
    let id = DMatrix::<f64>::identity(gram.nrows(), gram.ncols());
    (gram - id).amax()
}

/// Squeezing in dB of mode `k_prime` (zero-based) when the columns of `phi`
/// are measured on both arms.
pub fn objective_squeezing(ctx: &StateContext, phi: &DMatrix<f64>, k_prime: usize) -> Result<f64> {
    let n = ctx.grid().n_points();
    if phi.nrows() != n || k_prime >= phi.ncols() {
        return Err(Error::config(
            MODULE,
            format!("mode {k_prime} requested from a {}x{} basis on {n} points", phi.nrows(), phi.ncols()),
        ));
    }
    let err = real_orthonormality_error(phi, ctx.grid().d_omega());
    if err > 1e-10 {
        return Err(Error::contract(
            MODULE,
            format!("basis is not orthonormal (max deviation {err:.3e})"),
        ));
    }
    ctx.mode_squeezing(phi.column(k_prime).as_slice())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationRecord {
    /// Zero-based mode being optimized.
    pub mode: usize,
    pub generation: usize,
    pub best_db: f64,
    pub mean_db: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizedBasis {
    /// Real modes `Φ_k` as columns, orthonormal under the grid quadrature.
    pub modes: DMatrix<f64>,
    pub per_mode_squeezing_db: Vec<f64>,
    pub generations_used: Vec<usize>,
    pub converged: Vec<bool>,
    /// The final gene matrix and its factors.
    pub candidate: BasisCandidate,
    pub log: Vec<GenerationRecord>,
}

impl OptimizedBasis {
    pub fn modes_complex(&self) -> CMatrix {
        self.modes.map(|x| C64::new(x, 0.0))
    }

    pub fn log_csv(&self) -> String {
        let mut out = String::from("mode,generation,best_db,mean_db\n");
        for r in &self.log {
            out.push_str(&format!(
                "{},{},{:.16e},{:.16e}\n",
                r.mode + 1,
                r.generation,
                r.best_db,
                r.mean_db
            ));
        }
        out
    }
}

struct Individual {
    genes: DVector<f64>,
    /// Column `k'` of `Q`, already divided by `sqrt(dω)`.
    mode: Vec<f64>,
    fitness: f64,
}

/// Orthonormalizes `genes` against the frozen prefix; `None` on rank loss.
fn realize(frozen: &DMatrix<f64>, genes: &DVector<f64>, inv_sqrt_d: f64) -> Option<Vec<f64>> {
    let mut a = frozen.clone().insert_column(frozen.ncols(), 0.0);
    let k = frozen.ncols();
    a.set_column(k, genes);
    let (q, _) = qr_orthonormalize(&a).ok()?;
    Some(q.column(k).iter().map(|x| x * inv_sqrt_d).collect())
}

fn random_individual(
    rng: &mut ChaCha8Rng,
    frozen: &DMatrix<f64>,
    n: usize,
    inv_sqrt_d: f64,
) -> (DVector<f64>, Vec<f64>) {
    loop {
        let genes = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        if let Some(mode) = realize(frozen, &genes, inv_sqrt_d) {
            return (genes, mode);
        }
    }
}

fn pick_parent(rng: &mut ChaCha8Rng, pop: &[Individual], selection: ParentSelection) -> usize {
    match selection {
        ParentSelection::Uniform => rng.random_range(0..pop.len()),
        ParentSelection::Tournament { size } => {
            let mut best = rng.random_range(0..pop.len());
            for _ in 1..size {
                let c = rng.random_range(0..pop.len());
                if pop[c].fitness > pop[best].fitness {
                    best = c;
                }
            }
            best
        }
    }
}

fn best_index(pop: &[Individual]) -> usize {
    let mut best = 0;
    for (i, ind) in pop.iter().enumerate() {
        if ind.fitness > pop[best].fitness {
            best = i;
        }
    }
    best
}

fn evaluate(ctx: &StateContext, modes: &[Vec<f64>]) -> Vec<f64> {
    modes
        .par_iter()
        .map(|m| ctx.mode_squeezing(m).unwrap_or(f64::NEG_INFINITY))
        .collect()
}

/// Optimizes modes `0..k_max` in succession.
///
/// Each run stops once the best fitness has improved by less than
/// `convergence_tol` over the last `convergence_window` generations, or at
/// `max_generations` with `converged` left false.
pub fn ga_optimize_basis(ctx: &StateContext, k_max: usize, params: &GaParams) -> Result<OptimizedBasis> {
    params.validate()?;
    let n = ctx.grid().n_points();
    if k_max == 0 || k_max > ctx.n_retained() || k_max > n {
        return Err(Error::config(
            MODULE,
            format!("k_max must lie in 1..={}, got {k_max}", ctx.n_retained().min(n)),
        ));
    }
    let d = ctx.grid().d_omega();
    let inv_sqrt_d = 1.0 / d.sqrt();
    let mutation = Normal::new(0.0, params.mutation_sigma)
        .map_err(|e| Error::config(MODULE, format!("mutation distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);

    let mut genes = DMatrix::<f64>::zeros(n, 0);
    let mut frozen_q = DMatrix::<f64>::zeros(n, 0);
    let mut per_mode = Vec::with_capacity(k_max);
    let mut generations_used = Vec::with_capacity(k_max);
    let mut converged = Vec::with_capacity(k_max);
    let mut log = Vec::new();

    for k in 0..k_max {
        let mut pop: Vec<Individual> = (0..params.population)
            .map(|_| {
                let (g, m) = random_individual(&mut rng, &frozen_q, n, inv_sqrt_d);
                Individual { genes: g, mode: m, fitness: 0.0 }
            })
            .collect();
        let modes: Vec<Vec<f64>> = pop.iter().map(|i| i.mode.clone()).collect();
        for (ind, f) in pop.iter_mut().zip(evaluate(ctx, &modes)) {
            ind.fitness = f;
        }

        let mut history: Vec<f64> = Vec::new();
        let mut done = false;
        let mut generation = 0;
        loop {
            let best = best_index(&pop);
            let best_db = pop[best].fitness;
            let finite: Vec<f64> = pop.iter().map(|i| i.fitness).filter(|f| f.is_finite()).collect();
            let mean_db = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
            log.push(GenerationRecord { mode: k, generation, best_db, mean_db });
            history.push(best_db);
            let w = params.convergence_window;
            if history.len() > w && history[history.len() - 1] - history[history.len() - 1 - w] < params.convergence_tol {
                done = true;
                break;
            }
            if generation >= params.max_generations {
                break;
            }
            generation += 1;

            let mut next_genes: Vec<DVector<f64>> = Vec::with_capacity(params.population);
            while next_genes.len() < params.population - 1 {
                let pa = pick_parent(&mut rng, &pop, params.selection);
                let pb = pick_parent(&mut rng, &pop, params.selection);
                let cut = rng.random_range(1..n.max(2));
                let (a, b) = (&pop[pa].genes, &pop[pb].genes);
                let mut c1 = a.clone();
                let mut c2 = b.clone();
                for j in cut.min(n)..n {
                    c1[j] = b[j];
                    c2[j] = a[j];
                }
                for child in [c1, c2] {
                    if next_genes.len() == params.population - 1 {
                        break;
                    }
                    let mut child = child;
                    for g in child.iter_mut() {
                        if rng.random::<f64>() < params.mutation_prob {
                            *g += mutation.sample(&mut rng);
                        }
                    }
                    next_genes.push(child);
                }
            }
            let mut children: Vec<(DVector<f64>, Vec<f64>)> = Vec::with_capacity(next_genes.len());
            for g in next_genes {
                match realize(&frozen_q, &g, inv_sqrt_d) {
                    Some(m) => children.push((g, m)),
                    None => children.push(random_individual(&mut rng, &frozen_q, n, inv_sqrt_d)),
                }
            }
            let modes: Vec<Vec<f64>> = children.iter().map(|(_, m)| m.clone()).collect();
            let fitness = evaluate(ctx, &modes);
            let elite = pop.swap_remove(best);
            pop = std::iter::once(elite)
                .chain(
                    children
                        .into_iter()
                        .zip(fitness)
                        .map(|((g, m), f)| Individual { genes: g, mode: m, fitness: f }),
                )
                .collect();
        }

        let best = best_index(&pop);
        let winner = &pop[best];
        genes = genes.insert_column(k, 0.0);
        genes.set_column(k, &winner.genes);
        let (q, _) = qr_orthonormalize(&genes)?;
        frozen_q = q;
        per_mode.push(winner.fitness);
        generations_used.push(generation);
        converged.push(done);
    }

    let (q, r) = qr_orthonormalize(&genes)?;
    let modes = &q * inv_sqrt_d;
    Ok(OptimizedBasis {
        modes,
        per_mode_squeezing_db: per_mode.clone(),
        generations_used,
        converged,
        candidate: BasisCandidate {
            genes,
            q,
            r,
            fitness: per_mode.last().copied().unwrap_or(f64::NAN),
        },
        log,
    })
}
