//! Genetic search over bit-string encodings of configurations.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Evaluator, SearchResult, Session, Task};
use crate::error::{Error, Result};
use crate::quant::QuantConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct GaParams {
    pub population: usize,
    pub elitism: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
}

impl Default for GaParams {
    fn default() -> Self {
        Self { population: 8, elitism: 1, crossover_rate: 0.8, mutation_rate: 0.1 }
    }
}

fn dims(c: &QuantConfig) -> [usize; 6] {
    [c.cache as usize, c.scheme as usize, c.clipping as usize, c.granularity as usize, c.mixed as usize, c.fusion as usize]
}

/// Fixed-width binary code per dimension; widths come from the values
/// present in the space, so a singleton dimension takes no bits.
#[derive(Debug, Clone)]
pub struct Genome {
    /// Per dimension, the values seen in the space in ascending order.
    values: Vec<Vec<usize>>,
    bits: Vec<usize>,
    lookup: HashMap<[usize; 6], usize>,
    codes: Vec<Vec<bool>>,
}

impl Genome {
    pub fn new(space: &[QuantConfig]) -> Self {
        let mut values = vec![Vec::new(); 6];
        for c in space {
            for (d, v) in dims(c).into_iter().enumerate() {
                if !values[d].contains(&v) {
                    values[d].push(v);
                }
            }
        }
        values.iter_mut().for_each(|v| v.sort_unstable());
        let bits = values.iter().map(|v| (usize::BITS - (v.len() - 1).leading_zeros()) as usize).collect();
        let lookup = space.iter().enumerate().map(|(i, c)| (dims(c), i)).collect();
        let mut g = Self { values, bits, lookup, codes: Vec::new() };
        g.codes = space.iter().map(|c| g.encode(c)).collect();
        g
    }

    pub fn len(&self) -> usize {
        self.bits.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode(&self, c: &QuantConfig) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.len());
        for (d, v) in dims(c).into_iter().enumerate() {
            let code = self.values[d].iter().position(|&x| x == v).unwrap_or(0);
            out.extend((0..self.bits[d]).rev().map(|b| code >> b & 1 == 1));
        }
        out
    }

    /// Space index of a bit string; codes past a dimension's last value map to that value.
    pub fn decode(&self, bits: &[bool]) -> Option<usize> {
        let mut key = [0usize; 6];
        let mut pos = 0;
        for d in 0..6 {
            let code = bits[pos..pos + self.bits[d]].iter().fold(0usize, |a, &b| a << 1 | b as usize);
            pos += self.bits[d];
            key[d] = self.values[d][code.min(self.values[d].len() - 1)];
        }
        self.lookup.get(&key).copied()
    }

    pub fn code(&self, idx: usize) -> &[bool] {
        &self.codes[idx]
    }

    /// Decoded index if it is allowed, otherwise the allowed configuration at
    /// the smallest Hamming distance (ties by enumeration order).
    fn repair(&self, bits: &[bool], allowed: impl Fn(usize) -> bool) -> Option<usize> {
        if let Some(i) = self.decode(bits).filter(|&i| allowed(i)) {
            return Some(i);
        }
        (0..self.codes.len())
            .filter(|&i| allowed(i))
            .min_by_key(|&i| (self.codes[i].iter().zip(bits).filter(|(a, b)| a != b).count(), i))
    }
}

/// Produces `n` offspring by linear-rank selection, one-point crossover and
/// bit-flip mutation. `pop` holds (genome, fitness) pairs.
pub fn breed(pop: &[(Vec<bool>, f64)], n: usize, ga: &GaParams, rng: &mut impl Rng) -> Vec<Vec<bool>> {
    assert!(!pop.is_empty(), "population must be non-empty");
    // Rank 1 is the least fit; selection weight equals rank.
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&a, &b| pop[a].1.total_cmp(&pop[b].1).then(b.cmp(&a)));
    let total = pop.len() * (pop.len() + 1) / 2;
    let pick = |rng: &mut dyn rand::RngCore| {
        let mut t = rng.random_range(0..total);
        for (r, &i) in order.iter().enumerate() {
            if t < r + 1 {
                return i;
            }
            t -= r + 1;
        }
        unreachable!()
    };
    let len = pop[0].0.len();
    (0..n)
        .map(|_| {
            let a = &pop[pick(rng)].0;
            let b = &pop[pick(rng)].0;
            let mut child = a.clone();
            if len > 1 && rng.random_bool(ga.crossover_rate) {
                let cut = rng.random_range(1..len);
                child[cut..].copy_from_slice(&b[cut..]);
            }
            for bit in child.iter_mut() {
                if rng.random_bool(ga.mutation_rate) {
                    *bit = !*bit;
                }
            }
            child
        })
        .collect()
}

/// Evolves a population; every offspring is repaired to a distinct,
/// not-yet-evaluated configuration so the budget is never spent twice.
pub fn tune_genetic(
    task: &Task,
    eval: &dyn Evaluator,
    budget: usize,
    ga: &GaParams,
    seed: u64,
    workers: usize,
) -> Result<SearchResult> {
    if ga.population == 0 || ga.elitism >= ga.population {
        return Err(Error::InvalidArgument("population must exceed elitism".into()));
    }
    if !(0.0..=1.0).contains(&ga.crossover_rate) || !(0.0..=1.0).contains(&ga.mutation_rate) {
        return Err(Error::InvalidArgument("rates must lie in [0, 1]".into()));
    }
    let mut s = Session::new(task, eval, budget, workers)?;
    let genome = Genome::new(&task.space);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut init: Vec<usize> = (0..task.space.len()).collect();
    init.shuffle(&mut rng);
    init.truncate(ga.population.min(budget));
    let fit = s.run(&init);
    let mut pop: Vec<(usize, f64)> = init.into_iter().zip(fit).collect();

    while s.remaining() > 0 {
        pop.sort_by(super::by_score_desc);
        let coded: Vec<(Vec<bool>, f64)> = pop.iter().map(|&(i, f)| (genome.code(i).to_vec(), f)).collect();
        let n = (ga.population - ga.elitism).min(s.remaining());
        let mut children = Vec::with_capacity(n);
        for bits in breed(&coded, n, ga, &mut rng) {
            match genome.repair(&bits, |i| !s.explored[i] && !children.contains(&i)) {
                Some(i) => children.push(i),
                None => break,
            }
        }
        if children.is_empty() {
            break;
        }
        let fit = s.run(&children);
        pop.truncate(ga.elitism);
        pop.extend(children.into_iter().zip(fit));
    }
    Ok(s.finish("genetic", Some(seed)))
}
