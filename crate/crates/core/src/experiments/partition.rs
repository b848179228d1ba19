//! Random partition of the population by successive epidemics.
//!
//! Pick a uniform individual among those not yet assigned, infect it in
//! stage 1 with every assigned individual already removed, and run the
//! epidemic to extinction; the individuals it infected form the next block.
//! Individuals are exchangeable, so which unassigned labels join the block is
//! a uniform draw of the right size.

use rand::Rng;
use serde::Serialize;

use crate::ctmc::{simulate_with_rng, Recording, StopRule};
use crate::error::{contract, Result};
use crate::model::{ModelParams, PopulationState};
use crate::rng::{RngSeed, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    pub sizes: Vec<u64>,
    /// `counters[s][k-1]`: individuals ever in stage `k` during the epidemic of block `s`.
    pub counters: Vec<Vec<u64>>,
}

impl Partition {
    pub fn largest(&self) -> u64 {
        self.sizes.iter().copied().max().unwrap_or(0)
    }

    /// `sum |block|^2 / n`, the mean size of the block holding a uniform individual.
    pub fn size_biased_mean(&self) -> f64 {
        let n: u64 = self.sizes.iter().sum();
        self.sizes.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / n as f64
    }
}

pub fn random_partition(params: &ModelParams, seed: RngSeed) -> Result<Partition> {
    Ok(run(params, seed, false)?.0)
}

/// As [`random_partition`], also returning the labels `0..n` of each block.
pub fn random_partition_blocks(params: &ModelParams, seed: RngSeed) -> Result<(Partition, Vec<Vec<u32>>)> {
    run(params, seed, true)
}

fn run(params: &ModelParams, seed: RngSeed, keep_labels: bool) -> Result<(Partition, Vec<Vec<u32>>)> {
    params.validate()?;
    let n = params.n;
    if n > u32::MAX as u64 {
        return Err(contract("partition labels are limited to 32 bits"));
    }
    let k = params.stages;
    let mut rng: SimRng = seed.rng();
    let mut pool: Vec<u32> = (0..n as u32).collect();
    let mut part = Partition { sizes: Vec::new(), counters: Vec::new() };
    let mut blocks = Vec::new();
    while !pool.is_empty() {
        let free = pool.len() as u64;
        let mut counts = vec![0u64; k + 2];
        counts[0] = free - 1;
        counts[1] = 1;
        counts[k + 1] = n - free;
        let init = PopulationState::new(counts);
        let tr = simulate_with_rng(params, &init, StopRule::Absorption, seed, Recording::FinalOnly, &mut rng)?;
        let size = tr.final_state.removed() - (n - free);
        let mut block = Vec::new();
        let first = rng.random_range(0..pool.len());
        let v = pool.swap_remove(first);
        if keep_labels {
            block.push(v);
        }
        for _ in 1..size {
            let j = rng.random_range(0..pool.len());
            let u = pool.swap_remove(j);
            if keep_labels {
                block.push(u);
            }
        }
        part.sizes.push(size);
        part.counters.push(tr.infection_counters.clone());
        if keep_labels {
            blocks.push(block);
        }
    }
    Ok((part, blocks))
}
