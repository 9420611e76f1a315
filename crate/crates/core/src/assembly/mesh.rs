use std::sync::Arc;

use crate::graph::{MetricGraph, Side};
use crate::{Error, Result};

/// Per-edge uniform grid. Node 0 sits at the first endpoint, node `n_cells` at the second.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGrid {
    pub n_cells: usize,
    pub length: f64,
    /// Global DOF of node 1; interior nodes are numbered contiguously from here.
    pub first_interior: usize,
    pub first_vertex: usize,
    pub second_vertex: usize,
}

impl EdgeGrid {
    pub fn width(&self) -> f64 {
        self.length / self.n_cells as f64
    }

    pub fn n_interior(&self) -> usize {
        self.n_cells - 1
    }

    pub fn x(&self, node: usize) -> f64 {
        if node == self.n_cells {
            self.length
        } else {
            self.length * node as f64 / self.n_cells as f64
        }
    }

    pub fn dof(&self, node: usize) -> usize {
        if node == 0 {
            self.first_vertex
        } else if node == self.n_cells {
            self.second_vertex
        } else {
            self.first_interior + node - 1
        }
    }

    pub fn node_at(&self, side: Side) -> usize {
        match side {
            Side::Left => 0,
            Side::Right => self.n_cells,
        }
    }
}

/// Where a global DOF lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofSite {
    Vertex(usize),
    Interior { edge: usize, node: usize },
}

/// Conforming mesh of a metric graph.
///
/// Vertex DOFs come first (`0..n`), so every edge end at a vertex shares that
/// vertex's DOF and continuity holds by construction. Interior nodes follow,
/// edge by edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    n_vertices: usize,
    edges: Vec<EdgeGrid>,
    n_dofs: usize,
    lumped_mass: Vec<f64>,
    /// `(edge, side)` pairs per vertex, mirroring the graph's incidence lists.
    incidence: Vec<Vec<(usize, Side)>>,
}

impl Mesh {
    /// Uniform mesh with `N_e = max(2, ceil(ℓ_e / target_h))` cells per edge.
    pub fn build(g: &MetricGraph, target_h: f64) -> Result<Arc<Mesh>> {
        if !(target_h > 0.0) || !target_h.is_finite() {
            return Err(Error::invalid(format!("target_h must be positive, got {target_h}")));
        }
        let cells: Vec<usize> = g
            .edges
            .iter()
            .map(|e| {
                let raw = e.length / target_h;
                // absorb round-off like 3.0 / 0.1 = 30.000000000000004
                let n = (raw - 1e-9 * raw.max(1.0)).ceil();
                (n as usize).max(2)
            })
            .collect();
        Self::with_cells(g, &cells)
    }

    pub fn with_cells(g: &MetricGraph, cells: &[usize]) -> Result<Arc<Mesh>> {
        if cells.len() != g.n_edges() {
            return Err(Error::invalid("one cell count per edge required"));
        }
        if let Some(&c) = cells.iter().find(|&&c| c < 2) {
            return Err(Error::invalid(format!("each edge needs at least 2 cells, got {c}")));
        }
        let n = g.n_vertices();
        let mut next = n;
        let mut edges = Vec::with_capacity(cells.len());
        for (e, &n_cells) in g.edges.iter().zip(cells) {
            if e.endpoints.0 >= n || e.endpoints.1 >= n {
                return Err(Error::invalid(format!("edge `{}` has an unknown endpoint", e.id)));
            }
            edges.push(EdgeGrid {
                n_cells,
                length: e.length,
                first_interior: next,
                first_vertex: e.endpoints.0,
                second_vertex: e.endpoints.1,
            });
            next += n_cells - 1;
        }
        let n_dofs = next;
        let mut lumped_mass = vec![0.0; n_dofs];
        let mut incidence = vec![Vec::new(); n];
        for (ei, eg) in edges.iter().enumerate() {
            let h = eg.width();
            lumped_mass[eg.first_vertex] += 0.5 * h;
            lumped_mass[eg.second_vertex] += 0.5 * h;
            for node in 1..eg.n_cells {
                lumped_mass[eg.dof(node)] = h;
            }
            incidence[eg.first_vertex].push((ei, Side::Left));
            incidence[eg.second_vertex].push((ei, Side::Right));
        }
        Ok(Arc::new(Mesh {
            n_vertices: n,
            edges,
            n_dofs,
            lumped_mass,
            incidence,
        }))
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[EdgeGrid] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &EdgeGrid {
        &self.edges[e]
    }

    /// Maximum cell width.
    pub fn resolution(&self) -> f64 {
        self.edges.iter().map(EdgeGrid::width).fold(0.0, f64::max)
    }

    /// Row sums of the consistent mass matrix.
    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped_mass
    }

    pub fn incidence(&self, v: usize) -> &[(usize, Side)] {
        &self.incidence[v]
    }

    pub fn site(&self, dof: usize) -> DofSite {
        if dof < self.n_vertices {
            return DofSite::Vertex(dof);
        }
        let edge = self
            .edges
            .partition_point(|eg| eg.first_interior <= dof)
            .saturating_sub(1);
        DofSite::Interior {
            edge,
            node: dof - self.edges[edge].first_interior + 1,
        }
    }

    /// DOF of the grid node on `edge` closest to local coordinate `x`.
    pub fn nearest_dof(&self, edge: usize, x: f64) -> usize {
        let eg = &self.edges[edge];
        let node = (x / eg.width()).round().clamp(0.0, eg.n_cells as f64) as usize;
        eg.dof(node)
    }

    /// Lumped-mass weights `m_{v,e} / m_v` of a vertex's incident edge ends.
    pub fn vertex_shares(&self, v: usize) -> impl Iterator<Item = (usize, Side, f64)> + '_ {
        let total = self.lumped_mass[v];
        self.incidence[v]
            .iter()
            .map(move |&(e, side)| (e, side, 0.5 * self.edges[e].width() / total))
    }

    /// Per DOF, the `(edge, x, weight)` contributions it averages; interior DOFs have one.
    pub fn dof_contributions(&self) -> Vec<Vec<(usize, f64, f64)>> {
        let mut out = vec![Vec::new(); self.n_dofs];
        for v in 0..self.n_vertices {
            for (e, side, w) in self.vertex_shares(v) {
                let eg = &self.edges[e];
                out[v].push((e, eg.x(eg.node_at(side)), w));
            }
        }
        for (e, eg) in self.edges.iter().enumerate() {
            for node in 1..eg.n_cells {
                out[eg.dof(node)].push((e, eg.x(node), 1.0));
            }
        }
        out
    }
}

/// A field on the graph: one value per global DOF.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(mesh: &Arc<Mesh>) -> Self {
        GridFunction {
            mesh: Arc::clone(mesh),
            values: vec![0.0; mesh.n_dofs()],
        }
    }

    pub fn constant(mesh: &Arc<Mesh>, value: f64) -> Self {
        GridFunction {
            mesh: Arc::clone(mesh),
            values: vec![value; mesh.n_dofs()],
        }
    }

    pub fn from_values(mesh: &Arc<Mesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.n_dofs() {
            return Err(Error::MeshMismatch);
        }
        Ok(GridFunction {
            mesh: Arc::clone(mesh),
            values,
        })
    }

    /// Samples `f(edge, x)` at every node. Vertex values use the first incident edge,
    /// so `f` should be continuous on the graph.
    pub fn from_fn(mesh: &Arc<Mesh>, f: impl Fn(usize, f64) -> f64) -> Self {
        let mut values = vec![0.0; mesh.n_dofs()];
        for v in 0..mesh.n_vertices() {
            if let Some(&(e, side)) = mesh.incidence(v).first() {
                let eg = mesh.edge(e);
                values[v] = f(e, eg.x(eg.node_at(side)));
            }
        }
        for (e, eg) in mesh.edges().iter().enumerate() {
            for node in 1..eg.n_cells {
                values[eg.dof(node)] = f(e, eg.x(node));
            }
        }
        GridFunction {
            mesh: Arc::clone(mesh),
            values,
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn conforms_to(&self, mesh: &Arc<Mesh>) -> bool {
        Arc::ptr_eq(&self.mesh, mesh) || *self.mesh == **mesh
    }

    /// Values along one edge, node 0 to node `N_e`.
    pub fn edge_trace(&self, edge: usize) -> Vec<f64> {
        let eg = self.mesh.edge(edge);
        (0..=eg.n_cells).map(|k| self.values[eg.dof(k)]).collect()
    }

    pub fn vertex_value(&self, v: usize) -> f64 {
        self.values[v]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::CouplingMatrix;

    #[test]
    fn single_edge_quarter_width() {
        let g = MetricGraph::single_edge(1.0, CouplingMatrix::diagonal(&[-1.0, -1.0]));
        let m = Mesh::build(&g, 0.25).unwrap();
        assert_eq!(m.edge(0).n_cells, 4);
        assert_eq!(m.n_dofs(), 5);
    }

    #[test]
    fn path_shares_middle_vertex() {
        let g = MetricGraph::path(&[1.0, 1.0], CouplingMatrix::diagonal(&[-1.0; 3]));
        let m = Mesh::build(&g, 0.5).unwrap();
        assert_eq!(m.n_dofs(), 5);
        assert_eq!(m.edge(0).dof(2), 1);
        assert_eq!(m.edge(1).dof(0), 1);
    }

    #[test]
    fn star_with_unequal_lengths() {
        let g = MetricGraph::star(&[1.0, 2.0, 3.0], CouplingMatrix::diagonal(&[-1.0; 4]));
        let m = Mesh::build(&g, 0.5).unwrap();
        let cells: Vec<usize> = m.edges().iter().map(|e| e.n_cells).collect();
        assert_eq!(cells, vec![2, 4, 6]);
        assert_eq!(m.n_dofs(), 13);
    }

    #[test]
    fn short_edges_get_two_cells_and_no_roundoff_extra_cell() {
        let g = MetricGraph::path(&[0.05, 3.0], CouplingMatrix::diagonal(&[-1.0; 3]));
        let m = Mesh::build(&g, 0.1).unwrap();
        assert_eq!(m.edge(0).n_cells, 2);
        assert_eq!(m.edge(1).n_cells, 30);
    }

    #[test]
    fn rejects_nonpositive_width() {
        let g = MetricGraph::single_edge(1.0, CouplingMatrix::diagonal(&[-1.0, -1.0]));
        assert!(Mesh::build(&g, 0.0).is_err());
        assert!(Mesh::build(&g, -0.1).is_err());
    }

    #[test]
    fn sites_and_lumped_mass() {
        let g = MetricGraph::star(&[1.0, 2.0, 3.0], CouplingMatrix::diagonal(&[-1.0; 4]));
        let m = Mesh::build(&g, 0.5).unwrap();
        let total: f64 = m.lumped_mass().iter().sum();
        assert!((total - 6.0).abs() < 1e-12);
        for dof in 0..m.n_dofs() {
            match m.site(dof) {
                DofSite::Vertex(v) => assert_eq!(v, dof),
                DofSite::Interior { edge, node } => assert_eq!(m.edge(edge).dof(node), dof),
            }
        }
        let shares: f64 = m.vertex_shares(0).map(|(_, _, w)| w).sum();
        assert!((shares - 1.0).abs() < 1e-15);
    }
}
