//! Genetic refinement of a binary mask, window by window.
//!
//! The image is tiled into non-overlapping square windows (8x8 by default,
//! ragged at the right/bottom edges). Inside each window a small genetic
//! algorithm searches over bit-vector labelings for a minimum of
//! [`window_energy`](crate::energy::window_energy), with the rest of the mask
//! frozen. Parents are drawn uniformly at random — selection pressure comes
//! entirely from elitism — and the best labeling is written back only if it
//! is no worse than the incumbent, so refinement can never raise the total
//! energy.
//!
//! Population scheme: 100 chromosomes, 5 elites copied verbatim each
//! generation, single-point crossover with probability 0.2 per pair,
//! independent per-bit mutation at 0.02, for 100 generations per window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{
    apply_window_bits, extract_window_bits, window_energy, EnergyError, EnergyParams, Rect,
};
use crate::imaging::{GrayImage, LabelMask};
use crate::indrnn::ProbMap;
use crate::rng::derive_seed;

#[derive(Debug, Error)]
pub enum GaError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("chromosome length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

/// One candidate window labeling with its cached energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Chromosome {
    pub bits: Vec<u8>,
    /// `window_energy` of `bits`; `None` until evaluated.
    pub fitness: Option<f64>,
}

impl Chromosome {
    pub fn new(bits: Vec<u8>) -> Self {
        Self {
            bits,
            fitness: None,
        }
    }
}

/// Hyperparameters of the window GA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GaConfig {
    pub population_size: usize,
    /// Lowest-energy chromosomes copied verbatim into the next generation.
    pub elite_count: usize,
    /// Probability that a parent pair undergoes single-point crossover.
    pub crossover_rate: f64,
    /// Independent flip probability per bit.
    pub mutation_rate: f64,
    /// Generations per window.
    pub iterations: usize,
    /// Side length of the square refinement windows.
    pub window_size: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 100,
            elite_count: 5,
            crossover_rate: 0.2,
            mutation_rate: 0.02,
            iterations: 100,
            window_size: 8,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), GaError> {
        if self.population_size < 2 {
            return Err(GaError::InvalidConfig(format!(
                "population size must be >= 2, got {}",
                self.population_size
            )));
        }
        if self.elite_count == 0 || self.elite_count >= self.population_size {
            return Err(GaError::InvalidConfig(format!(
                "elite count must be in [1, population size), got {}",
                self.elite_count
            )));
        }
        for (name, rate) in [
            ("crossover rate", self.crossover_rate),
            ("mutation rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(GaError::InvalidConfig(format!(
                    "{name} must be in [0, 1], got {rate}"
                )));
            }
        }
        if self.window_size == 0 {
            return Err(GaError::InvalidConfig(
                "window size must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Seed a window's population: the incumbent labeling verbatim, the
/// probability map thresholded at 0.5, and noisy incumbent copies with each
/// bit flipped at probability 0.1.
pub fn init_population(
    incumbent: &[u8],
    window_probs: &[f64],
    config: &GaConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Chromosome>, GaError> {
    if config.population_size < 2 {
        return Err(GaError::InvalidConfig(format!(
            "population size must be >= 2, got {}",
            config.population_size
        )));
    }
    if incumbent.len() != window_probs.len() {
        return Err(GaError::LengthMismatch(
            incumbent.len(),
            window_probs.len(),
        ));
    }
    let mut population = Vec::with_capacity(config.population_size);
    population.push(Chromosome::new(incumbent.to_vec()));
    population.push(Chromosome::new(
        window_probs.iter().map(|&p| u8::from(p >= 0.5)).collect(),
    ));
    while population.len() < config.population_size {
        let bits = incumbent
            .iter()
            .map(|&b| if rng.random_bool(0.1) { 1 - b } else { b })
            .collect();
        population.push(Chromosome::new(bits));
    }
    Ok(population)
}

/// Uniform random parent choice over the whole population, with no fitness
/// bias; selection pressure comes entirely from elitism.
pub fn select_parent(population: &[Chromosome], rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(0..population.len())
}

/// With probability `crossover_rate`, single-point crossover at a uniform
/// cut in `[1, len - 1]`; otherwise the children are verbatim copies.
/// Length-1 chromosomes have no interior cut and always copy through.
pub fn crossover(
    parent_a: &[u8],
    parent_b: &[u8],
    crossover_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<u8>, Vec<u8>), GaError> {
    if parent_a.len() != parent_b.len() {
        return Err(GaError::LengthMismatch(parent_a.len(), parent_b.len()));
    }
    let len = parent_a.len();
    if rng.random_bool(crossover_rate) && len >= 2 {
        let cut = rng.random_range(1..len);
        let mut child_a = parent_a[..cut].to_vec();
        child_a.extend_from_slice(&parent_b[cut..]);
        let mut child_b = parent_b[..cut].to_vec();
        child_b.extend_from_slice(&parent_a[cut..]);
        Ok((child_a, child_b))
    } else {
        Ok((parent_a.to_vec(), parent_b.to_vec()))
    }
}

/// Flip each bit independently with probability `mutation_rate`.
pub fn mutate(bits: &[u8], mutation_rate: f64, rng: &mut ChaCha8Rng) -> Vec<u8> {
    bits.iter()
        .map(|&b| if rng.random_bool(mutation_rate) { 1 - b } else { b })
        .collect()
}

fn ensure_evaluated(population: &mut [Chromosome], fitness: &mut impl FnMut(&[u8]) -> f64) {
    for chrom in population.iter_mut() {
        if chrom.fitness.is_none() {
            chrom.fitness = Some(fitness(&chrom.bits));
        }
    }
}

fn best_fitness(population: &[Chromosome]) -> f64 {
    population
        .iter()
        .map(|c| c.fitness.expect("population is evaluated"))
        .fold(f64::INFINITY, f64::min)
}

/// One generation: keep the `elite_count` lowest-energy chromosomes
/// verbatim, then fill the remaining slots with select → crossover → mutate
/// offspring. Population size is preserved and, because the best chromosome
/// survives untouched, best fitness never increases.
pub fn evolve_generation(
    mut population: Vec<Chromosome>,
    fitness: &mut impl FnMut(&[u8]) -> f64,
    config: &GaConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Chromosome> {
    ensure_evaluated(&mut population, fitness);
    // stable sort: equal energies keep their generation order
    population.sort_by(|a, b| {
        a.fitness
            .expect("evaluated")
            .total_cmp(&b.fitness.expect("evaluated"))
    });

    let mut next: Vec<Chromosome> = population[..config.elite_count.min(population.len())].to_vec();
    while next.len() < population.len() {
        let a = select_parent(&population, rng);
        let b = select_parent(&population, rng);
        let (child_a, child_b) = crossover(
            &population[a].bits,
            &population[b].bits,
            config.crossover_rate,
            rng,
        )
        .expect("population chromosomes share one length");
        let mut offspring = |bits: Vec<u8>, next: &mut Vec<Chromosome>| {
            let bits = mutate(&bits, config.mutation_rate, rng);
            let mut chrom = Chromosome::new(bits);
            chrom.fitness = Some(fitness(&chrom.bits));
            next.push(chrom);
        };
        offspring(child_a, &mut next);
        if next.len() < population.len() {
            offspring(child_b, &mut next);
        }
    }
    next
}

/// Result of running the GA inside one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutcome {
    /// Best labeling found, row-major within the window.
    pub bits: Vec<u8>,
    /// Its window energy.
    pub energy: f64,
    /// Best energy after each generation; entry 0 is the initial population,
    /// so the vector has `iterations + 1` entries and never increases.
    pub best_trace: Vec<f64>,
}

/// Run the GA for `config.iterations` generations on one window, with the
/// rest of the mask frozen. Does not modify the mask.
pub fn optimize_window(
    mask: &LabelMask,
    window: Rect,
    probmap: &ProbMap,
    image: &GrayImage,
    params: &EnergyParams,
    config: &GaConfig,
    rng: &mut ChaCha8Rng,
) -> Result<WindowOutcome, GaError> {
    config.validate()?;
    // validates dimensions, bounds, and params once; the closure below can
    // then evaluate without failing
    window_energy(mask, window, probmap, image, params)?;

    let incumbent = extract_window_bits(mask, window);
    let window_probs: Vec<f64> = {
        let mut probs = Vec::with_capacity(window.area());
        for wy in window.y..window.y + window.height {
            for wx in window.x..window.x + window.width {
                probs.push(probmap.get(wx, wy));
            }
        }
        probs
    };

    let mut scratch = mask.clone();
    let mut fitness = |bits: &[u8]| {
        apply_window_bits(&mut scratch, window, bits);
        window_energy(&scratch, window, probmap, image, params).expect("inputs validated above")
    };

    let mut population = init_population(&incumbent, &window_probs, config, rng)?;
    ensure_evaluated(&mut population, &mut fitness);
    let mut best_trace = Vec::with_capacity(config.iterations + 1);
    best_trace.push(best_fitness(&population));
    for _ in 0..config.iterations {
        population = evolve_generation(population, &mut fitness, config, rng);
        best_trace.push(best_fitness(&population));
    }

    let best = population
        .iter()
        .min_by(|a, b| a.fitness.expect("evaluated").total_cmp(&b.fitness.expect("evaluated")))
        .expect("population is non-empty");
    Ok(WindowOutcome {
        bits: best.bits.clone(),
        energy: best.fitness.expect("evaluated"),
        best_trace,
    })
}

/// One row of the refinement trace: best window energy per generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub window_index: usize,
    pub generation: usize,
    pub best_energy: f64,
}

/// A refined mask plus the per-window best-energy trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub mask: LabelMask,
    pub trace: Vec<TraceRow>,
}

/// Refine a mask by tiling it into `window_size` squares in raster order
/// (ragged right/bottom edges get smaller windows) and running the GA in
/// each. A window's best labeling is written back only when its energy is
/// no worse than the incumbent's, so the total energy never increases.
/// Windows draw their randomness from seeds derived per window index, and
/// are processed sequentially so each sees its predecessors' results in the
/// frozen boundary terms.
pub fn refine_mask(
    mask: &LabelMask,
    probmap: &ProbMap,
    image: &GrayImage,
    params: &EnergyParams,
    config: &GaConfig,
) -> Result<RefineOutcome, GaError> {
    config.validate()?;
    let mut refined = mask.clone();
    let mut trace = Vec::new();
    if config.iterations == 0 {
        return Ok(RefineOutcome {
            mask: refined,
            trace,
        });
    }

    let mut window_index = 0usize;
    for wy in (0..mask.height()).step_by(config.window_size) {
        for wx in (0..mask.width()).step_by(config.window_size) {
            let window = Rect::new(
                wx,
                wy,
                config.window_size.min(mask.width() - wx),
                config.window_size.min(mask.height() - wy),
            );
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(config.seed, window_index as u64));
            let incumbent_energy = window_energy(&refined, window, probmap, image, params)?;
            let outcome =
                optimize_window(&refined, window, probmap, image, params, config, &mut rng)?;
            for (generation, &best_energy) in outcome.best_trace.iter().enumerate() {
                trace.push(TraceRow {
                    window_index,
                    generation,
                    best_energy,
                });
            }
            let incumbent_bits = extract_window_bits(&refined, window);
            if outcome.energy <= incumbent_energy && outcome.bits != incumbent_bits {
                apply_window_bits(&mut refined, window, &outcome.bits);
            }
            window_index += 1;
        }
    }
    Ok(RefineOutcome {
        mask: refined,
        trace,
    })
}
