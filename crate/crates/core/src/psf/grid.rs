//! Quadrature grids and grid-sampled amplitude functions.
//!
//! All overlap integrals in the crate are trapezoid sums on a shared
//! [`Grid`]. Uniform symmetric grids keep the parity operator an exact
//! node map, which the parity-sector measurements rely on.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Quadrature nodes and weights.
#[derive(Debug, Clone)]
pub struct Grid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// True when the node set is uniform and symmetric about `center`,
    /// so that reflection is the exact index map `i <-> n-1-i`.
    symmetric: bool,
    center: f64,
}

impl Grid {
    /// Uniform grid of `n` nodes on `[center - half_width, center + half_width]`
    /// with trapezoid weights.
    pub fn uniform(center: f64, half_width: f64, n: usize) -> Arc<Grid> {
        assert!(n >= 2, "grid needs at least two nodes");
        assert!(half_width > 0.0, "half_width must be positive");
        let h = 2.0 * half_width / (n - 1) as f64;
        let mid = (n - 1) as f64 / 2.0;
        let nodes: Vec<f64> = (0..n).map(|i| center + (i as f64 - mid) * h).collect();
        let mut weights = vec![h; n];
        weights[0] = h / 2.0;
        weights[n - 1] = h / 2.0;
        Arc::new(Grid {
            nodes,
            weights,
            symmetric: true,
            center,
        })
    }

    /// Grid from explicit nodes (strictly increasing) and positive weights.
    pub fn from_nodes_weights(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Arc<Grid>> {
        if nodes.len() != weights.len() || nodes.len() < 2 {
            return Err(Error::InvalidInput(
                "nodes/weights must have equal length >= 2".into(),
            ));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("nodes must be strictly increasing".into()));
        }
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::InvalidInput("weights must be positive".into()));
        }
        let center = (nodes[0] + nodes[nodes.len() - 1]) / 2.0;
        Ok(Arc::new(Grid {
            nodes,
            weights,
            symmetric: false,
            center,
        }))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    /// Node spacing of a uniform grid (minimum spacing otherwise).
    pub fn spacing(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Errors unless reflection about `center` is an exact node map.
    pub fn require_symmetric(&self) -> Result<()> {
        if self.symmetric {
            Ok(())
        } else {
            Err(Error::AsymmetricGrid(self.center))
        }
    }

    fn same_as(&self, other: &Grid) -> bool {
        self.nodes.len() == other.nodes.len()
            && self.nodes.first() == other.nodes.first()
            && self.nodes.last() == other.nodes.last()
    }
}

/// A complex amplitude sampled on a [`Grid`].
#[derive(Debug, Clone)]
pub struct GridFn {
    grid: Arc<Grid>,
    values: Vec<Complex64>,
}

impl GridFn {
    pub fn new(grid: Arc<Grid>, values: Vec<Complex64>) -> Self {
        assert_eq!(grid.len(), values.len());
        GridFn { grid, values }
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64) -> Complex64) -> Self {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        GridFn {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn from_real_fn(grid: &Arc<Grid>, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(grid, |x| Complex64::new(f(x), 0.0))
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn scale(&mut self, c: Complex64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    /// `self += c * other` (same grid required).
    pub fn axpy(&mut self, c: Complex64, other: &GridFn) -> Result<()> {
        check_grids(self, other)?;
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += c * o;
        }
        Ok(())
    }

    /// Reflection `f(x) -> f(2c - x)` about the grid center, exact on
    /// symmetric grids.
    pub fn reflected(&self) -> Result<GridFn> {
        self.grid.require_symmetric()?;
        let mut values = self.values.clone();
        values.reverse();
        Ok(GridFn {
            grid: Arc::clone(&self.grid),
            values,
        })
    }

    pub fn norm(&self) -> f64 {
        inner_product(self, self)
            .expect("same grid")
            .re
            .max(0.0)
            .sqrt()
    }
}

fn check_grids(f: &GridFn, g: &GridFn) -> Result<()> {
    if Arc::ptr_eq(&f.grid, &g.grid) || f.grid.same_as(&g.grid) {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// Quadrature inner product `sum_i w_i conj(f_i) g_i`, conjugate-linear in
/// the first argument.
pub fn inner_product(f: &GridFn, g: &GridFn) -> Result<Complex64> {
    check_grids(f, g)?;
    let mut acc = Complex64::new(0.0, 0.0);
    for ((w, a), b) in f
        .grid
        .weights()
        .iter()
        .zip(f.values.iter())
        .zip(g.values.iter())
    {
        acc += w * a.conj() * b;
    }
    Ok(acc)
}

/// Inner product restricted to the window `[lo, hi)`, with each node
/// weighted by the overlap of its quadrature cell with the window (cell
/// edges at node midpoints). Pixel bins therefore partition the full
/// integral exactly and boundary error is second order in the spacing.
pub fn inner_product_window(f: &GridFn, g: &GridFn, lo: f64, hi: f64) -> Result<Complex64> {
    check_grids(f, g)?;
    let nodes = f.grid.nodes();
    let n = nodes.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        let cell_lo = if i == 0 {
            nodes[0]
        } else {
            0.5 * (nodes[i - 1] + nodes[i])
        };
        let cell_hi = if i + 1 == n {
            nodes[n - 1]
        } else {
            0.5 * (nodes[i] + nodes[i + 1])
        };
        let w = (cell_hi.min(hi) - cell_lo.max(lo)).max(0.0);
        if w > 0.0 {
            acc += w * f.values[i].conj() * g.values[i];
        }
    }
    Ok(acc)
}
