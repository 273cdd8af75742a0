//! Dense (agents × steps) trajectory container used by the sampler.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::CoreError;
use crate::geom::Vec2;

/// Per-agent waypoint grid, agent-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet {
    agents: usize,
    steps: usize,
    data: Vec<Vec2>,
}

impl TrajectorySet {
    pub fn zeros(agents: usize, steps: usize) -> Self {
        TrajectorySet {
            agents,
            steps,
            data: vec![Vec2::ZERO; agents * steps],
        }
    }

    pub fn from_rows(rows: Vec<Vec<Vec2>>) -> Result<Self, CoreError> {
        let agents = rows.len();
        let steps = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != steps) {
            return Err(CoreError::ShapeMismatch("ragged trajectory rows".into()));
        }
        Ok(TrajectorySet {
            agents,
            steps,
            data: rows.into_iter().flatten().collect(),
        })
    }

    /// Unit-Gaussian sample of the given shape; coordinates are drawn in
    /// agent-major, x-before-y order.
    pub fn sample_normal<R: Rng>(agents: usize, steps: usize, rng: &mut R) -> Self {
        let data = (0..agents * steps)
            .map(|_| {
                let x: f64 = rng.sample(StandardNormal);
                let y: f64 = rng.sample(StandardNormal);
                Vec2::new(x, y)
            })
            .collect();
        TrajectorySet {
            agents,
            steps,
            data,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.agents, self.steps)
    }

    pub fn num_agents(&self) -> usize {
        self.agents
    }

    pub fn num_steps(&self) -> usize {
        self.steps
    }

    pub fn agent(&self, a: usize) -> &[Vec2] {
        &self.data[a * self.steps..(a + 1) * self.steps]
    }

    pub fn agent_mut(&mut self, a: usize) -> &mut [Vec2] {
        &mut self.data[a * self.steps..(a + 1) * self.steps]
    }

    pub fn get(&self, a: usize, t: usize) -> Vec2 {
        self.data[a * self.steps + t]
    }

    pub fn set(&mut self, a: usize, t: usize, v: Vec2) {
        self.data[a * self.steps + t] = v;
    }

    /// Element-wise combination of two equally-shaped sets.
    pub fn zip_map(&self, other: &TrajectorySet, f: impl Fn(Vec2, Vec2) -> Vec2) -> Result<TrajectorySet, CoreError> {
        if self.shape() != other.shape() {
            return Err(CoreError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(TrajectorySet {
            agents: self.agents,
            steps: self.steps,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec2> {
        self.data.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn row_layout() {
        let mut t = TrajectorySet::zeros(2, 3);
        t.set(1, 2, Vec2::new(5.0, 6.0));
        assert_eq!(t.agent(1)[2], Vec2::new(5.0, 6.0));
        assert_eq!(t.agent(0)[2], Vec2::ZERO);
    }

    #[test]
    fn ragged_rows_rejected() {
        let rows = vec![vec![Vec2::ZERO; 3], vec![Vec2::ZERO; 2]];
        assert!(TrajectorySet::from_rows(rows).is_err());
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(
            TrajectorySet::sample_normal(3, 4, &mut a),
            TrajectorySet::sample_normal(3, 4, &mut b)
        );
    }
}
