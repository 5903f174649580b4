use serde::{Deserialize, Serialize};

use crate::error::ParamError;

/// Resolution used when a caller does not pick one: steps per unit horizon.
pub const DEFAULT_STEPS_PER_UNIT: f64 = 2000.0;

/// Uniform time grid `0 = t_0 < t_1 < ... < t_n = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self, ParamError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(ParamError::NonPositive("T"));
        }
        if n_steps == 0 {
            return Err(ParamError::NonPositive("n_steps"));
        }
        Ok(Self { horizon, n_steps })
    }

    /// Grid with [`DEFAULT_STEPS_PER_UNIT`] steps per unit of time.
    pub fn with_default_resolution(horizon: f64) -> Result<Self, ParamError> {
        let n = (DEFAULT_STEPS_PER_UNIT * horizon).ceil().max(1.0) as usize;
        Self::new(horizon, n)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of nodes, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Time of node `k`. The last node is exactly `T`.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(move |k| self.time(k))
    }

    /// Refined grid with `factor` times as many steps.
    pub fn refine(&self, factor: usize) -> Self {
        Self {
            horizon: self.horizon,
            n_steps: self.n_steps * factor.max(1),
        }
    }

    /// Locates `t` on the grid: returns the left node index and the
    /// fractional position in `[0, 1]` inside that cell.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let s = (t / self.dt()).clamp(0.0, self.n_steps as f64);
        let k = (s.floor() as usize).min(self.n_steps - 1);
        (k, (s - k as f64).clamp(0.0, 1.0))
    }

    /// Linear interpolation of node values at time `t`.
    pub fn interpolate(&self, values: &[f64], t: f64) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let (k, w) = self.locate(t);
        if w == 0.0 {
            values[k]
        } else if w == 1.0 {
            values[k + 1]
        } else {
            values[k] + w * (values[k + 1] - values[k])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_are_uniform_and_end_at_horizon() {
        let g = TimeGrid::new(0.7, 7).unwrap();
        let nodes: Vec<f64> = g.nodes().collect();
        assert_eq!(nodes.len(), 8);
        assert_eq!(nodes[0], 0.0);
        assert_eq!(nodes[7], 0.7);
        for w in nodes.windows(2) {
            assert!(w[1] > w[0]);
            assert!((w[1] - w[0] - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(f64::NAN, 10).is_err());
    }

    #[test]
    fn default_resolution() {
        assert_eq!(TimeGrid::with_default_resolution(1.5).unwrap().n_steps(), 3000);
    }

    #[test]
    fn interpolation_hits_nodes_and_midpoints() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let v = [0.0, 1.0, 4.0, 9.0, 16.0];
        assert_eq!(g.interpolate(&v, 0.5), 4.0);
        assert_eq!(g.interpolate(&v, 1.0), 16.0);
        assert!((g.interpolate(&v, 0.375) - 2.5).abs() < 1e-15);
    }
}
