use crate::error::{Error, Result};
use crate::space::{Genome, SpaceSpec};

/// Deterministic reward keyed on one decision of the genome: `high` when
/// decision `position` takes `best`, `low` otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedTask {
    pub spec: SpaceSpec,
    pub position: usize,
    pub best: usize,
    pub high: f64,
    pub low: f64,
}

impl PlantedTask {
    pub fn new(spec: SpaceSpec, position: usize, best: usize, high: f64, low: f64) -> Result<Self> {
        let decisions = spec.decisions();
        let d = decisions
            .get(position)
            .ok_or_else(|| Error::InvalidArgument(format!("no decision {position} in a space of {}", decisions.len())))?;
        if best >= d.choices {
            return Err(Error::InvalidArgument(format!("choice {best} of decision {position} with {} choices", d.choices)));
        }
        if high <= low {
            return Err(Error::InvalidArgument("planted reward needs high > low".into()));
        }
        Ok(PlantedTask {
            spec,
            position,
            best,
            high,
            low,
        })
    }

    pub fn reward(&self, genome: &Genome) -> Result<f64> {
        genome.validate(&self.spec)?;
        let d = genome.to_decisions();
        Ok(if d[self.position] == self.best { self.high } else { self.low })
    }
}
