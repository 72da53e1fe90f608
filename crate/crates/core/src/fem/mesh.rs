use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::FemError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Bottom => "bottom",
            Side::Top => "top",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Side {
    type Err = FemError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Side::ALL
            .into_iter()
            .find(|side| side.name() == s)
            .ok_or_else(|| FemError::UnknownSide(s.to_string()))
    }
}

/// Which sides of the rectangle carry the Dirichlet condition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SideSet {
    pub left: bool,
    pub right: bool,
    pub bottom: bool,
    pub top: bool,
}

impl SideSet {
    pub fn all() -> Self {
        Self { left: true, right: true, bottom: true, top: true }
    }

    pub fn only(side: Side) -> Self {
        let mut s = Self::default();
        s.insert(side);
        s
    }

    pub fn insert(&mut self, side: Side) {
        match side {
            Side::Left => self.left = true,
            Side::Right => self.right = true,
            Side::Bottom => self.bottom = true,
            Side::Top => self.top = true,
        }
    }

    pub fn contains(&self, side: Side) -> bool {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
            Side::Bottom => self.bottom,
            Side::Top => self.top,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.left || self.right || self.bottom || self.top)
    }
}

impl FromIterator<Side> for SideSet {
    fn from_iter<I: IntoIterator<Item = Side>>(iter: I) -> Self {
        let mut s = SideSet::default();
        for side in iter {
            s.insert(side);
        }
        s
    }
}

/// Boundary part: `Gamma1` carries `v = 0`, `Gamma2` the zero traction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryTag {
    Gamma1,
    Gamma2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub a: usize,
    pub b: usize,
    pub tag: BoundaryTag,
}

/// Triangle mesh with tagged boundary.
#[derive(Clone, Debug)]
pub struct Mesh2D {
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    areas: Vec<f64>,
    /// `grads[e][k]` is the constant gradient of the hat function of local node `k`.
    grads: Vec<[[f64; 2]; 3]>,
    on_gamma1: Vec<bool>,
}

fn signed_area(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

impl Mesh2D {
    /// Validates and caches geometry. Triangles must be counterclockwise, the
    /// tagged edges must be exactly the boundary, and `Gamma1` must be nonempty.
    pub fn new(nodes: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>, boundary_edges: Vec<BoundaryEdge>) -> Result<Self, FemError> {
        let mut areas = Vec::with_capacity(triangles.len());
        let mut grads = Vec::with_capacity(triangles.len());
        let mut edge_count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (e, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= nodes.len()) {
                return Err(FemError::BadNodeIndex { element: e });
            }
            let [p, q, r] = tri.map(|i| nodes[i]);
            let area = signed_area(p, q, r);
            if !(area > 0.0) {
                return Err(FemError::NonPositiveArea { element: e, area });
            }
            let pts = [p, q, r];
            let mut g = [[0.0; 2]; 3];
            for k in 0..3 {
                let a = pts[(k + 1) % 3];
                let b = pts[(k + 2) % 3];
                g[k] = [(a[1] - b[1]) / (2.0 * area), (b[0] - a[0]) / (2.0 * area)];
            }
            areas.push(area);
            grads.push(g);
            for k in 0..3 {
                let (i, j) = (tri[k], tri[(k + 1) % 3]);
                *edge_count.entry((i.min(j), i.max(j))).or_insert(0) += 1;
            }
        }

        let mut tagged: BTreeMap<(usize, usize), BoundaryTag> = BTreeMap::new();
        for be in &boundary_edges {
            let key = (be.a.min(be.b), be.a.max(be.b));
            if edge_count.get(&key) != Some(&1) || tagged.insert(key, be.tag).is_some() {
                return Err(FemError::BadBoundary(format!("edge ({}, {}) is not a distinct boundary edge", be.a, be.b)));
            }
        }
        let n_boundary = edge_count.values().filter(|&&c| c == 1).count();
        if n_boundary != tagged.len() {
            return Err(FemError::BadBoundary(format!(
                "{} boundary edges but {} tagged",
                n_boundary,
                tagged.len()
            )));
        }

        let mut on_gamma1 = vec![false; nodes.len()];
        for be in boundary_edges.iter().filter(|e| e.tag == BoundaryTag::Gamma1) {
            on_gamma1[be.a] = true;
            on_gamma1[be.b] = true;
        }
        if !on_gamma1.iter().any(|&c| c) {
            return Err(FemError::EmptyGamma1);
        }
        Ok(Self { nodes, triangles, boundary_edges, areas, grads, on_gamma1 })
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn grads(&self, element: usize) -> &[[f64; 2]; 3] {
        &self.grads[element]
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.triangles.len()
    }

    /// Two velocity components per node, interleaved: dof `2 * node + c`.
    pub fn n_dofs(&self) -> usize {
        2 * self.nodes.len()
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn centroid(&self, element: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[element].map(|i| self.nodes[i]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn node_on_gamma1(&self, node: usize) -> bool {
        self.on_gamma1[node]
    }

    /// Per-dof Dirichlet mask.
    pub fn constrained_dofs(&self) -> Vec<bool> {
        self.on_gamma1.iter().flat_map(|&c| [c, c]).collect()
    }

    pub fn n_free_dofs(&self) -> usize {
        2 * self.on_gamma1.iter().filter(|&&c| !c).count()
    }
}

/// Structured `nx x ny` rectangle on `[0, lx] x [0, ly]`, each cell split
/// along its lower-left to upper-right diagonal.
pub fn build_rect_mesh(nx: usize, ny: usize, lx: f64, ly: f64, gamma1: SideSet) -> Result<Mesh2D, FemError> {
    if nx == 0 || ny == 0 {
        return Err(FemError::BadMeshSize { nx, ny });
    }
    if !(lx > 0.0 && ly > 0.0) {
        return Err(FemError::BadExtent { lx, ly });
    }
    if gamma1.is_empty() {
        return Err(FemError::EmptyGamma1);
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([lx * i as f64 / nx as f64, ly * j as f64 / ny as f64]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (n00, n10, n01, n11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            triangles.push([n00, n10, n11]);
            triangles.push([n00, n11, n01]);
        }
    }
    let tag = |side: Side| if gamma1.contains(side) { BoundaryTag::Gamma1 } else { BoundaryTag::Gamma2 };
    let mut edges = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        edges.push(BoundaryEdge { a: id(i, 0), b: id(i + 1, 0), tag: tag(Side::Bottom) });
        edges.push(BoundaryEdge { a: id(i + 1, ny), b: id(i, ny), tag: tag(Side::Top) });
    }
    for j in 0..ny {
        edges.push(BoundaryEdge { a: id(nx, j), b: id(nx, j + 1), tag: tag(Side::Right) });
        edges.push(BoundaryEdge { a: id(0, j + 1), b: id(0, j), tag: tag(Side::Left) });
    }
    Mesh2D::new(nodes, triangles, edges)
}
