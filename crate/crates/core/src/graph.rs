//! Communication topology of the fleet.
//!
//! `adjacency[(i, j)] = a_ij > 0` means vehicle `i` receives the position of
//! vehicle `j`. Degrees are row sums, so `L = D - A` has zero row sums and the
//! stacked consensus error is `(L + B)(eta - 1 (x) eta_d) - offsets`.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::consensus::ReferenceSample;
use crate::{Error, Result};

/// Minimum eigenvalue of `sym(L + B)` must exceed this to be called
/// positive definite.
pub const PD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FleetTopology {
    adjacency: DMatrix<f64>,
    pinning: DVector<f64>,
}

impl FleetTopology {
    pub fn new(adjacency: DMatrix<f64>, pinning: DVector<f64>) -> Result<Self> {
        let n = adjacency.nrows();
        if n == 0 {
            return Err(Error::InvalidTopology(
                "fleet must contain at least one vehicle".into(),
            ));
        }
        if adjacency.ncols() != n || pinning.len() != n {
            return Err(Error::InvalidTopology(format!(
                "adjacency is {}x{} and pinning has {} entries; expected {n}x{n} and {n}",
                adjacency.nrows(),
                adjacency.ncols(),
                pinning.len()
            )));
        }
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::InvalidTopology(format!(
                    "self-loop weight a_{i}{i} must be zero"
                )));
            }
        }
        if adjacency
            .iter()
            .chain(pinning.iter())
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return Err(Error::InvalidTopology(
                "weights must be finite and non-negative".into(),
            ));
        }
        Ok(Self { adjacency, pinning })
    }

    pub fn from_rows(adjacency: &[Vec<f64>], pinning: &[f64]) -> Result<Self> {
        let n = adjacency.len();
        if adjacency.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidTopology(
                "adjacency matrix must be square".into(),
            ));
        }
        let flat: Vec<f64> = adjacency.iter().flatten().copied().collect();
        Self::new(
            DMatrix::from_row_slice(n, n, &flat),
            DVector::from_column_slice(pinning),
        )
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[(i, j)]
    }

    pub fn pinning(&self) -> &DVector<f64> {
        &self.pinning
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.adjacency.row(i).sum()
    }

    pub fn degree_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_fn(self.n(), |i, _| self.degree(i)))
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        self.degree_matrix() - &self.adjacency
    }

    pub fn laplacian_plus_pinning(&self) -> DMatrix<f64> {
        self.laplacian() + DMatrix::from_diagonal(&self.pinning)
    }

    /// Indices `j` with `a_ij > 0`, ascending.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(move |&j| self.adjacency[(i, j)] > 0.0)
    }

    fn reachable_from_zero(&self, edge: impl Fn(usize, usize) -> bool) -> bool {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(k) = stack.pop() {
            for m in 0..n {
                if !seen[m] && edge(k, m) {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Connectivity of the undirected support of `A`.
    pub fn is_connected(&self) -> bool {
        self.reachable_from_zero(|k, m| {
            self.adjacency[(k, m)] > 0.0 || self.adjacency[(m, k)] > 0.0
        })
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.reachable_from_zero(|k, m| self.adjacency[(k, m)] > 0.0)
            && self.reachable_from_zero(|k, m| self.adjacency[(m, k)] > 0.0)
    }

    /// Smallest eigenvalue of the symmetric part of `L + B`.
    pub fn min_sym_eigenvalue(&self) -> f64 {
        let m = self.laplacian_plus_pinning();
        let sym = (&m + m.transpose()) * 0.5;
        sym.symmetric_eigenvalues().min()
    }

    /// Full diagnostic report; never fails.
    pub fn report(&self) -> ValidationReport {
        let min_eig = self.min_sym_eigenvalue();
        ValidationReport {
            connected: self.is_connected(),
            strongly_connected: self.is_strongly_connected(),
            pinned: (0..self.n()).filter(|&i| self.pinning[i] > 0.0).collect(),
            min_sym_eigenvalue: min_eig,
            positive_definite: min_eig > PD_TOLERANCE,
        }
    }

    /// Check the connectivity and pinning assumptions; a failure of either
    /// rejects the scenario.
    pub fn validate(&self) -> Result<ValidationReport> {
        let report = self.report();
        if !report.connected {
            return Err(Error::DisconnectedGraph);
        }
        if report.pinned.is_empty() {
            return Err(Error::NoPinnedVehicle);
        }
        if !report.strongly_connected {
            log::warn!("communication digraph is connected but not strongly connected");
        }
        Ok(report)
    }

    /// Everything vehicle `i` may see at one tick: its neighbours'
    /// positions and, if pinned, the reference.
    pub fn neighbor_view(
        &self,
        i: usize,
        positions: &[Vector3<f64>],
        reference: &ReferenceSample,
    ) -> Result<NeighborSnapshot> {
        let n = self.n();
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        if positions.len() != n {
            return Err(Error::InvalidTopology(format!(
                "snapshot has {} positions for a fleet of {n}",
                positions.len()
            )));
        }
        let neighbors = self
            .neighbors(i)
            .map(|j| Neighbor {
                index: j,
                weight: self.adjacency[(i, j)],
                eta1: positions[j],
            })
            .collect();
        let pinning = self.pinning[i];
        Ok(NeighborSnapshot {
            vehicle: i,
            neighbors,
            pinning,
            reference: (pinning > 0.0).then_some(*reference),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub connected: bool,
    pub strongly_connected: bool,
    pub pinned: Vec<usize>,
    pub min_sym_eigenvalue: f64,
    pub positive_definite: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub weight: f64,
    pub eta1: Vector3<f64>,
}

/// Local information available to one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSnapshot {
    pub vehicle: usize,
    pub neighbors: Vec<Neighbor>,
    pub pinning: f64,
    pub reference: Option<ReferenceSample>,
}
