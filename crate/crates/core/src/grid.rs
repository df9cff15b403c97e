//! Time meshes: uniform grids of diameter h and nonuniform grids for the
//! adaptive-step experiments.

use crate::error::{Error, Result};

/// Uniform mesh with N intervals on [t0, tf]; N+1 nodes, step h = (tf-t0)/N.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct UniformGrid {
    t0: f64,
    tf: f64,
    n_intervals: usize,
    h: f64,
}

impl UniformGrid {
    pub fn new(t0: f64, tf: f64, n_intervals: usize) -> Result<Self> {
        if n_intervals == 0 {
            return Err(Error::InvalidGrid("need at least one interval".into()));
        }
        if !(tf > t0) {
            return Err(Error::InvalidGrid(format!(
                "tf must exceed t0 (got t0={t0}, tf={tf})"
            )));
        }
        let h = (tf - t0) / n_intervals as f64;
        Ok(Self {
            t0,
            tf,
            n_intervals,
            h,
        })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn tf(&self) -> f64 {
        self.tf
    }

    pub fn n_intervals(&self) -> usize {
        self.n_intervals
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Node t_k = t0 + k*h, k in 0..=N.
    pub fn node(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.h
    }
}

/// Strictly increasing mesh t_0 < t_1 < ... < t_N.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct NonuniformGrid {
    nodes: Vec<f64>,
}

impl NonuniformGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidGrid("need at least two nodes".into()));
        }
        for (k, pair) in nodes.windows(2).enumerate() {
            if !(pair[1] > pair[0]) {
                return Err(Error::DegenerateGrid { index: k });
            }
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Step h_k = t_{k+1} - t_k.
    pub fn step(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }
}

/// Either mesh; the forward/backward sweeps are generic over this.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub enum Grid {
    Uniform(UniformGrid),
    Nonuniform(NonuniformGrid),
}

impl Grid {
    pub fn n_intervals(&self) -> usize {
        match self {
            Grid::Uniform(g) => g.n_intervals(),
            Grid::Nonuniform(g) => g.n_intervals(),
        }
    }

    pub fn step(&self, k: usize) -> f64 {
        match self {
            Grid::Uniform(g) => g.h(),
            Grid::Nonuniform(g) => g.step(k),
        }
    }

    pub fn node(&self, k: usize) -> f64 {
        match self {
            Grid::Uniform(g) => g.node(k),
            Grid::Nonuniform(g) => g.nodes()[k],
        }
    }

    pub fn t0(&self) -> f64 {
        self.node(0)
    }

    pub fn tf(&self) -> f64 {
        self.node(self.n_intervals())
    }
}

impl From<UniformGrid> for Grid {
    fn from(g: UniformGrid) -> Self {
        Grid::Uniform(g)
    }
}

impl From<NonuniformGrid> for Grid {
    fn from(g: NonuniformGrid) -> Self {
        Grid::Nonuniform(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_nodes_and_step() {
        let g = UniformGrid::new(0.0, 1.0, 4).unwrap();
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(4), 1.0);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(UniformGrid::new(0.0, 1.0, 0).is_err());
        assert!(UniformGrid::new(1.0, 0.0, 4).is_err());
        assert!(NonuniformGrid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(NonuniformGrid::new(vec![0.0]).is_err());
    }

    #[test]
    fn nonuniform_steps() {
        let g = NonuniformGrid::new(vec![0.0, 0.1, 0.4, 1.0]).unwrap();
        assert_eq!(g.n_intervals(), 3);
        assert!((g.step(1) - 0.3).abs() < 1e-15);
    }
}
