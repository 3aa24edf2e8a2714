//! Seeded random hyperparameter search over the supported tuning space,
//! one search per (model kind, corruption rate).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec};

/// Sampling bounds, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub filters: (usize, usize),
    pub kernel: (usize, usize),
    /// Sampled log-uniformly.
    pub learning_rate: (f64, f64),
    pub batch_size: (usize, usize),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            filters: (5, 200),
            kernel: (1, 10),
            learning_rate: (1e-4, 1e-1),
            batch_size: (32, 256),
        }
    }
}

impl SearchSpace {
    pub fn sample(&self, kind: ModelKind, rng: &mut impl Rng) -> ModelSpec {
        ModelSpec {
            kind,
            filters_external: rng.gen_range(self.filters.0..=self.filters.1),
            filters_internal: rng.gen_range(self.filters.0..=self.filters.1),
            kernel: rng.gen_range(self.kernel.0..=self.kernel.1),
            learning_rate: (rng
                .gen_range(self.learning_rate.0.ln()..=self.learning_rate.1.ln()))
            .exp(),
            batch_size: rng.gen_range(self.batch_size.0..=self.batch_size.1),
        }
    }

    pub fn contains(&self, spec: &ModelSpec) -> bool {
        (self.filters.0..=self.filters.1).contains(&spec.filters_external)
            && (self.filters.0..=self.filters.1).contains(&spec.filters_internal)
            && (self.kernel.0..=self.kernel.1).contains(&spec.kernel)
            && (self.learning_rate.0..=self.learning_rate.1).contains(&spec.learning_rate)
            && (self.batch_size.0..=self.batch_size.1).contains(&spec.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub spec: ModelSpec,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: ModelSpec,
    pub best_objective: f64,
    pub trials: Vec<Trial>,
}

/// Draw `budget` specs and keep the one with the smallest objective.
/// Ties break in favor of the earlier trial; the log keeps trial order.
pub fn random_search<F>(
    kind: ModelKind,
    space: &SearchSpace,
    budget: usize,
    mut objective: F,
    seed: u64,
) -> Result<SearchResult>
where
    F: FnMut(&ModelSpec) -> Result<f64>,
{
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(budget);
    for index in 0..budget {
        let spec = space.sample(kind, &mut rng);
        let value = objective(&spec)?;
        trials.push(Trial {
            index,
            spec,
            objective: value,
        });
    }
    let best = trials
        .iter()
        .min_by(|a, b| a.objective.partial_cmp(&b.objective).unwrap())
        .expect("budget >= 1");
    Ok(SearchResult {
        best: best.spec,
        best_objective: best.objective,
        trials: trials.clone(),
    })
}

/// Trial log as delimited text.
pub fn write_trial_log(out: &mut impl Write, result: &SearchResult) -> Result<()> {
    writeln!(
        out,
        "trial,filters_external,filters_internal,kernel,learning_rate,batch_size,objective"
    )?;
    for t in &result.trials {
        writeln!(
            out,
            "{},{},{},{},{:.8e},{},{:.10}",
            t.index,
            t.spec.filters_external,
            t.spec.filters_internal,
            t.spec.kernel,
            t.spec.learning_rate,
            t.spec.batch_size,
            t.objective
        )?;
    }
    Ok(())
}
