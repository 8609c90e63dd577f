//! Limited-evaluation evolutionary training loop.
//!
//! Each generation draws one fresh data batch and evaluates the entire
//! population on it in a single batched tensor computation. The population
//! is sorted by adjusted fitness; the top slice survives unchanged (elites,
//! re-evaluated every generation so stale scores cannot entrench), and the
//! rest is rebuilt by crossover and mutation over parents drawn uniformly
//! from the truncation pool. Offspring may inherit a blend of their parents'
//! adjusted fitness, controlled by `alpha`.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::Batch;
use crate::fitness::{cross_entropy_fitness, FitnessError};
use crate::model::{ModelError, PopulationParams};
use crate::rng::{Purpose, RunRng};
use crate::scalar::Scalar;

/// Lower bound for self-adapted mutation strengths.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// Offspring genomes built concurrently per scatter pass; bounds peak memory
/// at roughly `CHILD_CHUNK × param_count` extra floats.
const CHILD_CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum EvoError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(
        "offspring counts for lambda={lambda}: elites {n_elite} + crossover {n_crossover} exceed lambda"
    )]
    NegativeMutationCount {
        lambda: usize,
        n_elite: usize,
        n_crossover: usize,
    },
    #[error("genome length mismatch: {left} vs {right}")]
    GenomeLength { left: usize, right: usize },
    #[error("population size {actual} does not match configured lambda {expected}")]
    PopulationSize { expected: usize, actual: usize },
    #[error("self-adaptive mutation requires per-individual mutation strengths on the population")]
    MissingSigmaGenes,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fitness(#[from] FitnessError),
}

/// How the mutation strength evolves over generations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaMode {
    /// `sigma` for the whole run.
    Constant,
    /// `sigma · 0.99^(generation / k)` with a real-valued exponent.
    ExpDecay { k: f64 },
    /// One strategy parameter per individual, multiplied by `exp(tau · N(0,1))`
    /// before each mutation and floored at [`SIGMA_FLOOR`].
    SelfAdaptive { tau: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossoverOp {
    /// Each gene copied from either parent with probability ½.
    Uniform,
    /// Elementwise parent mean.
    Arithmetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvoConfig {
    /// Population size λ.
    pub lambda: usize,
    /// Fraction of the population surviving unchanged each generation.
    pub p_elite: f64,
    /// Fraction rebuilt by crossover.
    pub p_crossover: f64,
    /// Fraction rebuilt by mutation.
    pub p_mutation: f64,
    /// Truncation fraction: parents come from the top `ceil(rho · lambda)`.
    pub rho: f64,
    /// Weight of fresh fitness in the adjusted fitness; 1 disables
    /// inheritance entirely.
    pub alpha: f64,
    /// Base mutation strength σ.
    pub sigma: f64,
    pub sigma_mode: SigmaMode,
    pub crossover: CrossoverOp,
    /// Examples drawn per generation.
    pub batch_size: usize,
    /// Generation budget for a run.
    pub generations: usize,
    /// Draw batches with replacement instead of without.
    pub batch_replacement: bool,
}

impl Default for EvoConfig {
    fn default() -> Self {
        Self {
            lambda: 1000,
            p_elite: 0.05,
            p_crossover: 0.50,
            p_mutation: 0.45,
            rho: 0.50,
            alpha: 1.00,
            sigma: 0.001,
            sigma_mode: SigmaMode::Constant,
            crossover: CrossoverOp::Uniform,
            batch_size: 512,
            generations: 10_000,
            batch_replacement: false,
        }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<(), EvoError> {
        let err = |what: String| Err(EvoError::Config(what));
        if self.lambda < 2 {
            return err(format!("lambda {} must be at least 2", self.lambda));
        }
        for (name, v) in [
            ("p_elite", self.p_elite),
            ("p_crossover", self.p_crossover),
            ("p_mutation", self.p_mutation),
        ] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return err(format!("{name} {v} must lie in [0, 1]"));
            }
        }
        let sum = self.p_elite + self.p_crossover + self.p_mutation;
        if (sum - 1.0).abs() > 1e-9 {
            return err(format!(
                "p_elite + p_crossover + p_mutation = {sum}, must equal 1 within 1e-9"
            ));
        }
        if !self.rho.is_finite() || self.rho <= 0.0 || self.rho > 1.0 {
            return err(format!("rho {} must lie in (0, 1]", self.rho));
        }
        if !self.alpha.is_finite() || !(0.0..=1.0).contains(&self.alpha) {
            return err(format!("alpha {} must lie in [0, 1]", self.alpha));
        }
        // σ = 0 is degenerate but legal: mutation becomes the identity and
        // the search is stationary, which the stationarity property relies on.
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return err(format!("sigma {} must be non-negative", self.sigma));
        }
        match self.sigma_mode {
            SigmaMode::ExpDecay { k } if !k.is_finite() || k <= 0.0 => {
                return err(format!("decay constant k {k} must be positive"));
            }
            SigmaMode::SelfAdaptive { tau } if !tau.is_finite() || tau <= 0.0 => {
                return err(format!("tau {tau} must be positive"));
            }
            _ => {}
        }
        if self.batch_size == 0 {
            return err("batch_size must be at least 1".into());
        }
        Ok(())
    }

    /// Rounds the population fractions into integer counts
    /// `(elites, crossover offspring, mutation offspring)` that sum to λ:
    /// elite and crossover counts round to nearest, mutation takes the rest.
    pub fn offspring_counts(&self) -> Result<(usize, usize, usize), EvoError> {
        self.validate()?;
        let n_elite = (self.p_elite * self.lambda as f64).round() as usize;
        let n_crossover = (self.p_crossover * self.lambda as f64).round() as usize;
        let used = n_elite + n_crossover;
        if used > self.lambda {
            return Err(EvoError::NegativeMutationCount {
                lambda: self.lambda,
                n_elite,
                n_crossover,
            });
        }
        Ok((n_elite, n_crossover, self.lambda - used))
    }

    /// Size of the truncation pool `ceil(rho · lambda)`, clamped to
    /// `[1, lambda]`. The product is nudged before ceiling so binary
    /// representation error in `rho` cannot inflate an exact integer.
    pub fn parent_pool_size(&self) -> usize {
        let exact = (self.rho * self.lambda as f64 - 1e-9).ceil();
        (exact.max(1.0) as usize).min(self.lambda)
    }

    /// Mutation strength for a generation under the scheduled modes;
    /// `None` when strengths are self-adapted per individual.
    pub fn scheduled_sigma(&self, generation: usize) -> Option<f64> {
        match self.sigma_mode {
            SigmaMode::Constant => Some(self.sigma),
            SigmaMode::ExpDecay { k } => Some(self.sigma * 0.99f64.powf(generation as f64 / k)),
            SigmaMode::SelfAdaptive { .. } => None,
        }
    }
}

/// Indices that sort `values` in descending order; ties keep the lower
/// index first.
pub fn rank_descending<F: PartialOrd>(values: &[F]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

/// Draws `count` parent indices uniformly (with replacement) from the top
/// `pool` ranks.
pub fn truncation_select<R: Rng + ?Sized>(pool: usize, count: usize, rng: &mut R) -> Vec<usize> {
    assert!(pool > 0, "selection pool must be non-empty");
    (0..count).map(|_| rng.random_range(0..pool)).collect()
}

/// Draws `count` parent pairs uniformly with replacement; a pair may contain
/// the same parent twice. Each pair draws its first member, then its second.
pub fn truncation_select_pairs<R: Rng + ?Sized>(
    pool: usize,
    count: usize,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    assert!(pool > 0, "selection pool must be non-empty");
    (0..count)
        .map(|_| (rng.random_range(0..pool), rng.random_range(0..pool)))
        .collect()
}

/// Each gene comes from parent `a` or parent `b` with probability ½.
pub fn uniform_crossover<F: Scalar, R: Rng + ?Sized>(
    a: &[F],
    b: &[F],
    rng: &mut R,
) -> Result<Vec<F>, EvoError> {
    if a.len() != b.len() {
        return Err(EvoError::GenomeLength {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| if rng.random::<bool>() { x } else { y })
        .collect())
}

/// Elementwise parent mean.
pub fn arithmetic_crossover<F: Scalar>(a: &[F], b: &[F]) -> Result<Vec<F>, EvoError> {
    if a.len() != b.len() {
        return Err(EvoError::GenomeLength {
            left: a.len(),
            right: b.len(),
        });
    }
    let half = F::cast(0.5);
    Ok(a.iter().zip(b).map(|(&x, &y)| (x + y) * half).collect())
}

/// Adds `sigma · N(0, 1)` noise to every gene.
pub fn mutate<F: Scalar, R: Rng + ?Sized>(genome: &[F], sigma: F, rng: &mut R) -> Vec<F> {
    genome
        .iter()
        .map(|&g| g + sigma * F::standard_normal(rng))
        .collect()
}

/// Log-normal strategy-parameter update `sigma · exp(tau · N(0, 1))`,
/// floored at [`SIGMA_FLOOR`] so a strength can always recover.
pub fn self_adapt_sigma<F: Scalar, R: Rng + ?Sized>(sigma: F, tau: F, rng: &mut R) -> F {
    let updated = sigma * (tau * F::standard_normal(rng)).exp();
    updated.max(F::cast(SIGMA_FLOOR))
}

/// Blend of inherited and freshly measured fitness:
/// `(1 - alpha) · inherited + alpha · fresh`.
pub fn adjusted_fitness<F: Scalar>(inherited: F, fresh: F, alpha: F) -> F {
    (F::one() - alpha) * inherited + alpha * fresh
}

/// Mean of the parents' adjusted fitness (one parent for mutation and
/// elites, two for crossover).
pub fn inherited_fitness<F: Scalar>(parent_fitness: &[F]) -> F {
    match parent_fitness {
        [f] => *f,
        [f1, f2] => (*f1 + *f2) * F::cast(0.5),
        other => panic!("inherited_fitness takes 1 or 2 parents, got {}", other.len()),
    }
}

/// Population plus the adjusted fitness it was last scored with.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalState<F> {
    pub params: PopulationParams<F>,
    pub f_adj: Vec<F>,
    /// Completed generations; 0 for a freshly initialized population.
    pub generation: usize,
}

impl<F: Scalar> EvalState<F> {
    /// Scores an initial population on its first batch. With no ancestry to
    /// inherit from, adjusted fitness is the raw batch fitness.
    pub fn new(params: PopulationParams<F>, batch: &Batch<F>) -> Result<Self, EvoError> {
        let probs = params.forward(&batch.images)?;
        let f_adj = cross_entropy_fitness(&probs, &batch.onehot)?;
        Ok(Self {
            params,
            f_adj,
            generation: 0,
        })
    }

    /// Index of the best individual by adjusted fitness (ties: lowest index).
    pub fn best_index(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.f_adj.iter().enumerate().skip(1) {
            if *v > self.f_adj[best] {
                best = i;
            }
        }
        best
    }
}

enum ChildSource {
    Crossover { a: usize, b: usize, draw: u64 },
    Mutation { parent: usize, draw: u64 },
}

struct ChildPlan {
    slot: usize,
    source: ChildSource,
}

struct BuiltChild<F> {
    slot: usize,
    genome: Vec<F>,
    sigma_gene: Option<F>,
    inherited: F,
}

/// Advances the population by one generation on one fresh batch:
/// sort by adjusted fitness, keep elites, rebuild the rest from the
/// truncation pool, then evaluate all λ individuals on `batch` and blend
/// inherited with fresh fitness.
pub fn step<F: Scalar>(
    state: &EvalState<F>,
    batch: &Batch<F>,
    cfg: &EvoConfig,
    rng: &RunRng,
) -> Result<EvalState<F>, EvoError> {
    let (n_elite, n_crossover, n_mutation) = cfg.offspring_counts()?;
    let lambda = cfg.lambda;
    if state.params.population_size() != lambda {
        return Err(EvoError::PopulationSize {
            expected: lambda,
            actual: state.params.population_size(),
        });
    }
    let self_adaptive = matches!(cfg.sigma_mode, SigmaMode::SelfAdaptive { .. });
    if self_adaptive && state.params.sigma_genes().is_none() {
        return Err(EvoError::MissingSigmaGenes);
    }

    let generation = state.generation as u64;
    let order = rank_descending(&state.f_adj);
    let pool = cfg.parent_pool_size();

    // Selection draws: crossover pairs first, then mutation parents.
    let mut sel_rng = rng.stream(Purpose::Selection, generation, 0);
    let pairs = truncation_select_pairs(pool, n_crossover, &mut sel_rng);
    let singles = truncation_select(pool, n_mutation, &mut sel_rng);

    // Flatten the parent pool once; offspring construction reads these.
    let pool_genomes: Vec<Vec<F>> = (0..pool)
        .map(|r| state.params.flatten(order[r]))
        .collect::<Result<_, _>>()?;
    let pool_sigma: Option<Vec<F>> = state
        .params
        .sigma_genes()
        .map(|genes| (0..pool).map(|r| genes[order[r]]).collect());
    let pool_fitness: Vec<F> = (0..pool).map(|r| state.f_adj[order[r]]).collect();

    let mut next = PopulationParams::zeros(state.params.spec().clone(), lambda)?;
    if self_adaptive {
        next.set_uniform_sigma_genes(F::zero());
    }
    let mut inherited = vec![F::zero(); lambda];

    // Elites survive bit-for-bit and inherit their own previous score.
    for slot in 0..n_elite {
        next.copy_individual_from(slot, &state.params, order[slot])?;
        inherited[slot] = state.f_adj[order[slot]];
    }

    let plans: Vec<ChildPlan> = pairs
        .iter()
        .enumerate()
        .map(|(j, &(a, b))| ChildPlan {
            slot: n_elite + j,
            source: ChildSource::Crossover {
                a,
                b,
                draw: j as u64,
            },
        })
        .chain(singles.iter().enumerate().map(|(j, &parent)| ChildPlan {
            slot: n_elite + n_crossover + j,
            source: ChildSource::Mutation {
                parent,
                draw: j as u64,
            },
        }))
        .collect();

    let scheduled_sigma = cfg.scheduled_sigma(state.generation);
    let tau = match cfg.sigma_mode {
        SigmaMode::SelfAdaptive { tau } => tau,
        _ => 0.0,
    };

    let build = |plan: &ChildPlan| -> Result<BuiltChild<F>, EvoError> {
        match plan.source {
            ChildSource::Crossover { a, b, draw } => {
                let mut crng = rng.stream(Purpose::Crossover, generation, draw);
                let genome = match cfg.crossover {
                    CrossoverOp::Uniform => {
                        uniform_crossover(&pool_genomes[a], &pool_genomes[b], &mut crng)?
                    }
                    CrossoverOp::Arithmetic => {
                        arithmetic_crossover(&pool_genomes[a], &pool_genomes[b])?
                    }
                };
                let sigma_gene = pool_sigma
                    .as_ref()
                    .map(|ps| inherited_fitness(&[ps[a], ps[b]]));
                Ok(BuiltChild {
                    slot: plan.slot,
                    genome,
                    sigma_gene,
                    inherited: inherited_fitness(&[pool_fitness[a], pool_fitness[b]]),
                })
            }
            ChildSource::Mutation { parent, draw } => {
                // Self-adaptation updates the strategy parameter first; the
                // genome is then mutated with the updated strength.
                let (sigma_eff, sigma_gene) = match pool_sigma.as_ref() {
                    Some(ps) if self_adaptive => {
                        let mut srng = rng.stream(Purpose::SigmaAdapt, generation, draw);
                        let updated = self_adapt_sigma(ps[parent], F::cast(tau), &mut srng);
                        (updated, Some(updated))
                    }
                    _ => (
                        F::cast(scheduled_sigma.expect("scheduled modes have a sigma")),
                        pool_sigma.as_ref().map(|ps| ps[parent]),
                    ),
                };
                let mut mrng = rng.stream(Purpose::Mutation, generation, draw);
                let genome = mutate(&pool_genomes[parent], sigma_eff, &mut mrng);
                Ok(BuiltChild {
                    slot: plan.slot,
                    genome,
                    sigma_gene,
                    inherited: pool_fitness[parent],
                })
            }
        }
    };

    // Build offspring in bounded parallel chunks and scatter sequentially;
    // every child's randomness comes from its own derived stream, so the
    // thread schedule cannot change results.
    for chunk in plans.chunks(CHILD_CHUNK) {
        let built: Vec<BuiltChild<F>> = chunk
            .par_iter()
            .map(build)
            .collect::<Result<Vec<_>, EvoError>>()?;
        for child in built {
            next.unflatten_into(child.slot, &child.genome)?;
            if let Some(gene) = child.sigma_gene {
                next.set_sigma_gene(child.slot, gene)?;
            }
            inherited[child.slot] = child.inherited;
        }
    }

    // One batched evaluation of the whole new population.
    let probs = next.forward(&batch.images)?;
    let fresh = cross_entropy_fitness(&probs, &batch.onehot)?;
    let alpha = F::cast(cfg.alpha);
    let f_adj: Vec<F> = inherited
        .iter()
        .zip(&fresh)
        .map(|(&inh, &raw)| adjusted_fitness(inh, raw, alpha))
        .collect();

    Ok(EvalState {
        params: next,
        f_adj,
        generation: state.generation + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_blobs;
    use crate::model::NetworkSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn base_cfg() -> EvoConfig {
        EvoConfig::default()
    }

    #[test]
    fn default_config_is_valid() {
        base_cfg().validate().unwrap();
    }

    #[test]
    fn validate_rejects_bad_fields() {
        let mut c = base_cfg();
        c.lambda = 1;
        assert!(c.validate().is_err());

        let mut c = base_cfg();
        c.p_elite = 0.06; // fractions now sum to 1.01
        assert!(c.validate().is_err());

        let mut c = base_cfg();
        c.rho = 0.0;
        assert!(c.validate().is_err());
        c.rho = 1.5;
        assert!(c.validate().is_err());

        let mut c = base_cfg();
        c.alpha = -0.1;
        assert!(c.validate().is_err());

        let mut c = base_cfg();
        c.sigma = -0.001;
        assert!(c.validate().is_err());
        c.sigma = 0.0; // degenerate but legal: stationary search
        assert!(c.validate().is_ok());

        let mut c = base_cfg();
        c.sigma_mode = SigmaMode::ExpDecay { k: 0.0 };
        assert!(c.validate().is_err());

        let mut c = base_cfg();
        c.sigma_mode = SigmaMode::SelfAdaptive { tau: -1.0 };
        assert!(c.validate().is_err());
    }

    #[test]
    fn fraction_sum_tolerance_is_tight() {
        let mut c = base_cfg();
        c.p_elite = 0.05 + 5e-10; // within 1e-9 of exact
        c.validate().unwrap();
        c.p_elite = 0.05 + 1e-8;
        assert!(c.validate().is_err());
    }

    #[test]
    fn offspring_counts_reference_cases() {
        let mut c = base_cfg();
        c.lambda = 1000;
        assert_eq!(c.offspring_counts().unwrap(), (50, 500, 450));

        c.lambda = 2000;
        c.p_crossover = 0.75;
        c.p_mutation = 0.20;
        assert_eq!(c.offspring_counts().unwrap(), (100, 1500, 400));

        c.lambda = 10;
        c.p_elite = 0.33;
        c.p_crossover = 0.33;
        c.p_mutation = 0.34;
        assert_eq!(c.offspring_counts().unwrap(), (3, 3, 4));
    }

    #[test]
    fn offspring_counts_always_sum_to_lambda() {
        let mut c = base_cfg();
        for lambda in 2..400 {
            c.lambda = lambda;
            let (e, x, m) = c.offspring_counts().unwrap();
            assert_eq!(e + x + m, lambda, "lambda {lambda}");
        }
    }

    #[test]
    fn parent_pool_size_is_exact_on_integer_products() {
        let mut c = base_cfg();
        c.lambda = 100;
        c.rho = 0.1; // 0.1 · 100 is 10 despite binary representation error
        assert_eq!(c.parent_pool_size(), 10);
        c.rho = 0.2;
        assert_eq!(c.parent_pool_size(), 20);
        c.rho = 0.15;
        assert_eq!(c.parent_pool_size(), 15);
        c.lambda = 7;
        c.rho = 0.5;
        assert_eq!(c.parent_pool_size(), 4); // ceil(3.5)
        c.rho = 1.0;
        assert_eq!(c.parent_pool_size(), 7);
        c.rho = 0.001;
        assert_eq!(c.parent_pool_size(), 1);
    }

    #[test]
    fn truncation_selection_is_roughly_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let draws = truncation_select(10, 10_000, &mut rng);
        let mut counts = [0usize; 10];
        for d in draws {
            counts[d] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (700..=1300).contains(&c),
                "index {i} drawn {c} times out of 10000"
            );
        }
    }

    #[test]
    fn pair_selection_allows_self_pairing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs = truncation_select_pairs(3, 200, &mut rng);
        assert!(pairs.iter().any(|&(a, b)| a == b));
        assert!(pairs.iter().all(|&(a, b)| a < 3 && b < 3));
    }

    #[test]
    fn uniform_crossover_gene_membership_and_balance() {
        let n = 10_000;
        let a: Vec<f32> = (0..n).map(|i| i as f32).collect();
        let b: Vec<f32> = (0..n).map(|i| -(i as f32) - 1.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let child = uniform_crossover(&a, &b, &mut rng).unwrap();
        let mut from_a = 0usize;
        for (i, &g) in child.iter().enumerate() {
            assert!(g == a[i] || g == b[i], "gene {i} from neither parent");
            if g == a[i] {
                from_a += 1;
            }
        }
        let frac = from_a as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.03, "fraction from first parent {frac}");
    }

    #[test]
    fn crossover_rejects_length_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        assert!(matches!(
            uniform_crossover::<f32, _>(&[1.0, 2.0], &[1.0], &mut rng).unwrap_err(),
            EvoError::GenomeLength { left: 2, right: 1 }
        ));
        assert!(arithmetic_crossover::<f32>(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn arithmetic_crossover_is_exact_mean() {
        let child = arithmetic_crossover::<f64>(&[1.0, 3.0], &[2.0, 5.0]).unwrap();
        assert_eq!(child, vec![1.5, 4.0]);
        // Identical parents reproduce exactly.
        let same = arithmetic_crossover::<f32>(&[0.25, -1.5], &[0.25, -1.5]).unwrap();
        assert_eq!(same, vec![0.25, -1.5]);
    }

    #[test]
    fn mutate_with_zero_sigma_is_identity() {
        let genome = vec![0.5f32, -0.25, 3.0];
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let child = mutate(&genome, 0.0, &mut rng);
        assert_eq!(child, genome);
    }

    #[test]
    fn mutate_noise_statistics() {
        let n = 20_000;
        let genome = vec![0.0f64; n];
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let child = mutate(&genome, 0.5, &mut rng);
        let mean = child.iter().sum::<f64>() / n as f64;
        let var = child.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 0.5).abs() < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn self_adapt_respects_floor_and_is_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        // Floor: starting at the floor, downward updates cannot escape it.
        for _ in 0..200 {
            let s = self_adapt_sigma(SIGMA_FLOOR as f32, 0.5, &mut rng);
            assert!(s >= SIGMA_FLOOR as f32);
        }
        // Median multiplier is 1 (log-normal with zero log-mean).
        let mut ups = 0usize;
        let trials = 10_000;
        for _ in 0..trials {
            if self_adapt_sigma(1.0f64, 0.1, &mut rng) > 1.0 {
                ups += 1;
            }
        }
        let frac = ups as f64 / trials as f64;
        assert!((frac - 0.5).abs() < 0.02, "fraction increased {frac}");
    }

    #[test]
    fn sigma_schedule_values() {
        let mut c = base_cfg();
        c.sigma = 0.1;
        c.sigma_mode = SigmaMode::Constant;
        assert_eq!(c.scheduled_sigma(0), Some(0.1));
        assert_eq!(c.scheduled_sigma(9999), Some(0.1));

        c.sigma_mode = SigmaMode::ExpDecay { k: 100.0 };
        assert_eq!(c.scheduled_sigma(0), Some(0.1));
        let g100 = c.scheduled_sigma(100).unwrap();
        assert!((g100 - 0.099).abs() < 1e-12, "{g100}");
        let g230 = c.scheduled_sigma(230).unwrap();
        assert!((g230 - 0.1 * 0.99f64.powf(2.3)).abs() < 1e-15);
        assert!((g230 - 0.097_714_9).abs() < 1e-6, "{g230}");

        c.sigma_mode = SigmaMode::SelfAdaptive { tau: 0.1 };
        assert_eq!(c.scheduled_sigma(5), None);
    }

    #[test]
    fn adjusted_and_inherited_fitness_examples() {
        assert!((adjusted_fitness(-0.2f64, -0.6, 0.25) - (-0.3)).abs() < 1e-12);
        // alpha = 1 passes fresh fitness through bit-exactly.
        let fresh = -0.123456789f64;
        assert_eq!(adjusted_fitness(-0.99, fresh, 1.0), fresh);
        // alpha = 0 keeps the inherited value bit-exactly.
        assert_eq!(adjusted_fitness(-0.2f64, -0.6, 0.0), -0.2);

        assert!((inherited_fitness(&[-0.2f64, -0.4]) - (-0.3)).abs() < 1e-12);
        assert_eq!(inherited_fitness(&[-0.4f64]), -0.4);
    }

    #[test]
    fn rank_descending_breaks_ties_by_index() {
        let order = rank_descending(&[1.0f32, 3.0, 3.0, 0.5]);
        assert_eq!(order, vec![1, 2, 0, 3]);
    }

    fn tiny_state(lambda: usize, cfg: &EvoConfig, seed: u64) -> (EvalState<f32>, Batch<f32>, RunRng) {
        let spec = NetworkSpec::new((4, 4), vec![6, 3]).unwrap();
        let rng = RunRng::new(seed);
        let mut init = rng.stream(Purpose::Init, 0, 0);
        let mut params = PopulationParams::glorot_uniform_init(spec, lambda, &mut init).unwrap();
        if matches!(cfg.sigma_mode, SigmaMode::SelfAdaptive { .. }) {
            params.set_uniform_sigma_genes(cfg.sigma as f32);
        }
        let ds = synthetic_blobs::<f32>(3, (4, 4), 30, 4.0, 21).unwrap();
        let mut batch_rng = rng.stream(Purpose::Batch, 0, 0);
        let batch = ds.sample_batch(8, &mut batch_rng, false).unwrap();
        let state = EvalState::new(params, &batch).unwrap();
        (state, batch, rng)
    }

    #[test]
    fn step_keeps_size_and_increments_generation() {
        let mut cfg = base_cfg();
        cfg.lambda = 10;
        cfg.batch_size = 8;
        let (state, batch, rng) = tiny_state(10, &cfg, 31);
        let next = step(&state, &batch, &cfg, &rng).unwrap();
        assert_eq!(next.params.population_size(), 10);
        assert_eq!(next.f_adj.len(), 10);
        assert_eq!(next.generation, 1);
        assert!(next.f_adj.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn step_is_deterministic() {
        let mut cfg = base_cfg();
        cfg.lambda = 12;
        let (state, batch, rng) = tiny_state(12, &cfg, 32);
        let a = step(&state, &batch, &cfg, &rng).unwrap();
        let b = step(&state, &batch, &cfg, &rng).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.f_adj, b.f_adj);
    }

    #[test]
    fn elites_survive_bit_for_bit_and_are_rescored() {
        let mut cfg = base_cfg();
        cfg.lambda = 10;
        cfg.p_elite = 0.2;
        cfg.p_crossover = 0.4;
        cfg.p_mutation = 0.4;
        cfg.alpha = 1.0;
        let (state, batch, rng) = tiny_state(10, &cfg, 33);
        let next = step(&state, &batch, &cfg, &rng).unwrap();

        let order = rank_descending(&state.f_adj);
        for slot in 0..2 {
            assert_eq!(
                next.params.flatten(slot).unwrap(),
                state.params.flatten(order[slot]).unwrap(),
                "elite slot {slot} changed"
            );
        }
        // alpha = 1: every score equals the fresh batch fitness.
        let probs = next.params.forward(&batch.images).unwrap();
        let fresh = cross_entropy_fitness(&probs, &batch.onehot).unwrap();
        assert_eq!(next.f_adj, fresh);
    }

    #[test]
    fn zero_alpha_propagates_inherited_fitness_exactly() {
        let mut cfg = base_cfg();
        cfg.lambda = 10;
        cfg.alpha = 0.0;
        cfg.p_elite = 0.2;
        cfg.p_crossover = 0.4;
        cfg.p_mutation = 0.4;
        let (state, batch, rng) = tiny_state(10, &cfg, 34);
        let next = step(&state, &batch, &cfg, &rng).unwrap();

        // Reproduce the selection draws to know each child's parents.
        let order = rank_descending(&state.f_adj);
        let pool = cfg.parent_pool_size();
        let mut sel = rng.stream(Purpose::Selection, 0, 0);
        let pairs = truncation_select_pairs(pool, 4, &mut sel);
        let singles = truncation_select(pool, 4, &mut sel);

        for slot in 0..2 {
            assert_eq!(next.f_adj[slot], state.f_adj[order[slot]]);
        }
        for (j, &(a, b)) in pairs.iter().enumerate() {
            let want = inherited_fitness(&[state.f_adj[order[a]], state.f_adj[order[b]]]);
            assert_eq!(next.f_adj[2 + j], want);
        }
        for (j, &parent) in singles.iter().enumerate() {
            assert_eq!(next.f_adj[2 + 4 + j], state.f_adj[order[parent]]);
        }
    }

    #[test]
    fn mutation_children_match_parents_when_sigma_is_negligible() {
        // A constant sigma of ~0 makes mutation the identity on f32 genomes,
        // letting us verify which parent each child came from.
        let mut cfg = base_cfg();
        cfg.lambda = 10;
        cfg.p_elite = 0.2;
        cfg.p_crossover = 0.0;
        cfg.p_mutation = 0.8;
        cfg.sigma = 1e-30;
        let (state, batch, rng) = tiny_state(10, &cfg, 35);
        let next = step(&state, &batch, &cfg, &rng).unwrap();

        let order = rank_descending(&state.f_adj);
        let pool = cfg.parent_pool_size();
        let mut sel = rng.stream(Purpose::Selection, 0, 0);
        let _pairs = truncation_select_pairs(pool, 0, &mut sel);
        let singles = truncation_select(pool, 8, &mut sel);
        for (j, &parent) in singles.iter().enumerate() {
            let child = next.params.flatten(2 + j).unwrap();
            let src = state.params.flatten(order[parent]).unwrap();
            for (c, s) in child.iter().zip(&src) {
                assert!((c - s).abs() <= 1e-25, "sigma ~0 must reproduce the parent");
            }
        }
    }

    #[test]
    fn uniform_crossover_children_take_genes_from_their_parents() {
        let mut cfg = base_cfg();
        cfg.lambda = 10;
        cfg.p_elite = 0.2;
        cfg.p_crossover = 0.8;
        cfg.p_mutation = 0.0;
        let (state, batch, rng) = tiny_state(10, &cfg, 36);
        let next = step(&state, &batch, &cfg, &rng).unwrap();

        let order = rank_descending(&state.f_adj);
        let pool = cfg.parent_pool_size();
        let mut sel = rng.stream(Purpose::Selection, 0, 0);
        let pairs = truncation_select_pairs(pool, 8, &mut sel);
        for (j, &(a, b)) in pairs.iter().enumerate() {
            let child = next.params.flatten(2 + j).unwrap();
            let pa = state.params.flatten(order[a]).unwrap();
            let pb = state.params.flatten(order[b]).unwrap();
            for (i, &g) in child.iter().enumerate() {
                assert!(
                    g == pa[i] || g == pb[i],
                    "child {j} gene {i} from neither parent"
                );
            }
        }
    }

    #[test]
    fn self_adaptive_step_updates_sigma_genes() {
        let mut cfg = base_cfg();
        cfg.lambda = 10;
        cfg.p_elite = 0.2;
        cfg.p_crossover = 0.3;
        cfg.p_mutation = 0.5;
        cfg.sigma = 0.05;
        cfg.sigma_mode = SigmaMode::SelfAdaptive { tau: 0.5 };
        let (state, batch, rng) = tiny_state(10, &cfg, 37);
        assert!(state.params.sigma_genes().is_some());
        let next = step(&state, &batch, &cfg, &rng).unwrap();
        let genes = next.params.sigma_genes().unwrap();
        assert_eq!(genes.len(), 10);
        assert!(genes.iter().all(|&g| g >= SIGMA_FLOOR as f32));
        // Elites keep their gene; mutation children moved theirs.
        assert_eq!(genes[0], 0.05);
        let mutated = &genes[2 + 3..];
        assert!(
            mutated.iter().any(|&g| (g - 0.05).abs() > 1e-6),
            "tau 0.5 should move most strengths"
        );
    }

    #[test]
    fn self_adaptive_without_genes_errors() {
        let mut cfg = base_cfg();
        cfg.lambda = 10;
        let (state, batch, rng) = tiny_state(10, &cfg, 38);
        cfg.sigma_mode = SigmaMode::SelfAdaptive { tau: 0.1 };
        assert!(matches!(
            step(&state, &batch, &cfg, &rng).unwrap_err(),
            EvoError::MissingSigmaGenes
        ));
    }

    #[test]
    fn step_rejects_population_size_mismatch() {
        let mut cfg = base_cfg();
        cfg.lambda = 10;
        let (state, batch, rng) = tiny_state(10, &cfg, 39);
        cfg.lambda = 12;
        cfg.batch_size = 8;
        assert!(matches!(
            step(&state, &batch, &cfg, &rng).unwrap_err(),
            EvoError::PopulationSize {
                expected: 12,
                actual: 10
            }
        ));
    }
}
