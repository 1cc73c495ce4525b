//! Simplicial meshes of closed manifolds and P1 finite-element assembly.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::sparse::CsrMatrix;

/// Upper bound on generated cell counts.
pub const MAX_CELLS: usize = 4_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("unsupported dimension {0}; only 2 and 3 are available")]
    UnsupportedDimension(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("cell {cell} has a singular metric (volume {volume:e})")]
    SingularCell { cell: usize, volume: f64 },
    #[error("mesh is not closed: facet {facet:?} is shared by {count} cells")]
    NotClosed { facet: Vec<usize>, count: usize },
    #[error("refinement level {level} exceeds the cell limit {limit}")]
    TooLarge { level: usize, limit: usize },
    #[error("density: {0}")]
    Density(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Closed simplicial `m`-manifold with per-cell constant metric.
///
/// For flat tori the vertex coordinates live in a periodic box and edge
/// vectors are taken as minimal images; for spheres the metric of each cell is
/// the one induced by its straight embedding.
#[derive(Debug, Clone)]
pub struct SimplicialMesh {
    dim: usize,
    vertices: Vec<Vec<f64>>,
    cells: Vec<Vec<usize>>,
    period: Option<Vec<f64>>,
    cell_volume: Vec<f64>,
    cell_metric: Vec<DMatrix<f64>>,
    cell_metric_inv: Vec<DMatrix<f64>>,
}

impl SimplicialMesh {
    /// Validates the cells and computes per-cell metric data.
    pub fn new(
        dim: usize,
        vertices: Vec<Vec<f64>>,
        cells: Vec<Vec<usize>>,
        period: Option<Vec<f64>>,
    ) -> Result<Self, MeshError> {
        if dim < 2 {
            return Err(MeshError::InvalidParameter(format!("dimension {dim} < 2")));
        }
        let ambient = vertices.first().map(Vec::len).unwrap_or(0);
        if ambient < dim || vertices.iter().any(|v| v.len() != ambient) {
            return Err(MeshError::InvalidParameter(
                "vertex coordinates must share an ambient dimension of at least dim".into(),
            ));
        }
        if let Some(p) = &period {
            if p.len() != ambient || p.iter().any(|&l| !(l > 0.0)) {
                return Err(MeshError::InvalidParameter("bad periodic box".into()));
            }
        }
        if cells.is_empty() {
            return Err(MeshError::InvalidParameter("mesh has no cells".into()));
        }
        for (c, cell) in cells.iter().enumerate() {
            if cell.len() != dim + 1 || cell.iter().any(|&v| v >= vertices.len()) {
                return Err(MeshError::InvalidParameter(format!("cell {c} is malformed")));
            }
        }

        let factorial: f64 = (1..=dim).map(|i| i as f64).product();
        let mut cell_volume = Vec::with_capacity(cells.len());
        let mut cell_metric = Vec::with_capacity(cells.len());
        let mut cell_metric_inv = Vec::with_capacity(cells.len());
        for (c, cell) in cells.iter().enumerate() {
            let edges: Vec<Vec<f64>> = cell[1..]
                .iter()
                .map(|&v| edge_vector(&vertices[cell[0]], &vertices[v], period.as_deref()))
                .collect();
            let g = DMatrix::from_fn(dim, dim, |i, j| {
                edges[i].iter().zip(&edges[j]).map(|(a, b)| a * b).sum::<f64>()
            });
            let det = g.determinant();
            let scale = (0..dim).map(|i| g[(i, i)]).product::<f64>();
            let volume = det.max(0.0).sqrt() / factorial;
            if !(det > 1e-12 * scale) {
                return Err(MeshError::SingularCell { cell: c, volume });
            }
            let inv = g
                .clone()
                .try_inverse()
                .ok_or(MeshError::SingularCell { cell: c, volume })?;
            cell_volume.push(volume);
            cell_metric.push(g);
            cell_metric_inv.push(inv);
        }

        let mesh = Self { dim, vertices, cells, period, cell_volume, cell_metric, cell_metric_inv };
        mesh.check_closed()?;
        Ok(mesh)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn cells(&self) -> &[Vec<usize>] {
        &self.cells
    }

    pub fn period(&self) -> Option<&[f64]> {
        self.period.as_deref()
    }

    pub fn cell_volumes(&self) -> &[f64] {
        &self.cell_volume
    }

    /// Gram matrix of the edge vectors `x_i - x_0` of a cell.
    pub fn cell_metric(&self, cell: usize) -> &DMatrix<f64> {
        &self.cell_metric[cell]
    }

    pub fn total_volume(&self) -> f64 {
        self.cell_volume.iter().sum()
    }

    /// Ambient-space centroid of a cell (unwrapped across periodic faces).
    pub fn cell_centroid(&self, cell: usize) -> Vec<f64> {
        let verts = &self.cells[cell];
        let base = &self.vertices[verts[0]];
        let mut acc = base.clone();
        for &v in &verts[1..] {
            let e = edge_vector(base, &self.vertices[v], self.period.as_deref());
            for (a, d) in acc.iter_mut().zip(&e) {
                *a += d / (self.dim + 1) as f64;
            }
        }
        acc
    }

    /// Squared gradient norm of a P1 function on one cell.
    pub fn cell_gradient_sq(&self, cell: usize, u: &[f64]) -> f64 {
        let verts = &self.cells[cell];
        let d: Vec<f64> = verts[1..].iter().map(|&v| u[v] - u[verts[0]]).collect();
        let inv = &self.cell_metric_inv[cell];
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += d[i] * inv[(i, j)] * d[j];
            }
        }
        s
    }

    /// Every codimension-one face must bound exactly two cells.
    pub fn check_closed(&self) -> Result<(), MeshError> {
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for cell in &self.cells {
            for skip in 0..cell.len() {
                let mut facet: Vec<usize> = cell
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != skip)
                    .map(|(_, &v)| v)
                    .collect();
                facet.sort_unstable();
                *counts.entry(facet).or_default() += 1;
            }
        }
        let mut bad: Vec<_> = counts.into_iter().filter(|(_, n)| *n != 2).collect();
        bad.sort();
        match bad.into_iter().next() {
            Some((facet, count)) => Err(MeshError::NotClosed { facet, count }),
            None => Ok(()),
        }
    }

    /// P1 stiffness matrix of the Dirichlet form.
    pub fn assemble_stiffness(&self) -> CsrMatrix {
        let m = self.dim;
        let mut trip = Vec::with_capacity(self.cells.len() * (m + 1) * (m + 1));
        for (c, cell) in self.cells.iter().enumerate() {
            let inv = &self.cell_metric_inv[c];
            let vol = self.cell_volume[c];
            // gradients of the barycentric coordinates λ_1..λ_m have Gram inv;
            // λ_0 = 1 - Σ λ_i
            let mut local = DMatrix::<f64>::zeros(m + 1, m + 1);
            for i in 0..m {
                for j in 0..m {
                    local[(i + 1, j + 1)] = vol * inv[(i, j)];
                }
            }
            for i in 1..=m {
                let s: f64 = (1..=m).map(|j| local[(i, j)]).sum();
                local[(i, 0)] = -s;
                local[(0, i)] = -s;
            }
            local[(0, 0)] = -(1..=m).map(|i| local[(0, i)]).sum::<f64>();
            for a in 0..=m {
                for b in 0..=m {
                    trip.push((cell[a], cell[b], local[(a, b)]));
                }
            }
        }
        CsrMatrix::from_triplets(self.num_vertices(), &trip).expect("cell indices validated")
    }

    /// P1 mass matrix of the measure with cellwise constant density.
    pub fn assemble_mass(&self, density: &Density) -> Result<CsrMatrix, MeshError> {
        self.check_density_len(density.values())?;
        Ok(self.mass_from_weights(density.values()))
    }

    pub(crate) fn mass_from_weights(&self, weights: &[f64]) -> CsrMatrix {
        let m = self.dim;
        let denom = ((m + 1) * (m + 2)) as f64;
        let mut trip = Vec::with_capacity(self.cells.len() * (m + 1) * (m + 1));
        for (c, cell) in self.cells.iter().enumerate() {
            let s = self.cell_volume[c] * weights[c] / denom;
            for (a, &va) in cell.iter().enumerate() {
                for (b, &vb) in cell.iter().enumerate() {
                    trip.push((va, vb, if a == b { 2.0 * s } else { s }));
                }
            }
        }
        CsrMatrix::from_triplets(self.num_vertices(), &trip).expect("cell indices validated")
    }

    /// Cell average of `u²` for a P1 function.
    pub fn cell_mean_square(&self, cell: usize, u: &[f64]) -> f64 {
        let verts = &self.cells[cell];
        let m = self.dim;
        let (sum, sq) = verts.iter().fold((0.0, 0.0), |(s, q), &v| (s + u[v], q + u[v] * u[v]));
        (sq + sum * sum) / ((m + 1) * (m + 2)) as f64
    }

    pub(crate) fn check_density_len(&self, values: &[f64]) -> Result<(), MeshError> {
        if values.len() != self.num_cells() {
            return Err(MeshError::Density(format!(
                "{} values for {} cells",
                values.len(),
                self.num_cells()
            )));
        }
        Ok(())
    }

    /// Plain-text serialization; see the crate README for the layout.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "DIM {}", self.dim).unwrap();
        if let Some(p) = &self.period {
            let parts: Vec<String> = p.iter().map(|x| format!("{x:.16e}")).collect();
            writeln!(out, "PERIODIC {}", parts.join(" ")).unwrap();
        }
        let ambient = self.vertices[0].len();
        writeln!(out, "VERTICES {} {}", self.vertices.len(), ambient).unwrap();
        for v in &self.vertices {
            let parts: Vec<String> = v.iter().map(|x| format!("{x:.16e}")).collect();
            writeln!(out, "{}", parts.join(" ")).unwrap();
        }
        writeln!(out, "CELLS {}", self.cells.len()).unwrap();
        for c in &self.cells {
            let parts: Vec<String> = c.iter().map(|i| i.to_string()).collect();
            writeln!(out, "{}", parts.join(" ")).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, MeshError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let perr = |line: usize, msg: &str| MeshError::Parse { line, msg: msg.to_string() };

        let (ln, header) = lines.next().ok_or_else(|| perr(0, "empty input"))?;
        let dim: usize = header
            .strip_prefix("DIM")
            .and_then(|r| r.trim().parse().ok())
            .ok_or_else(|| perr(ln, "expected `DIM m`"))?;

        let (mut ln, mut line) = lines.next().ok_or_else(|| perr(ln, "missing vertex block"))?;
        let mut period = None;
        if let Some(rest) = line.strip_prefix("PERIODIC") {
            let p: Result<Vec<f64>, _> = rest.split_whitespace().map(str::parse).collect();
            period = Some(p.map_err(|_| perr(ln, "bad PERIODIC lengths"))?);
            (ln, line) = lines.next().ok_or_else(|| perr(ln, "missing vertex block"))?;
        }
        let counts: Vec<usize> = line
            .strip_prefix("VERTICES")
            .map(|r| r.split_whitespace().filter_map(|x| x.parse().ok()).collect())
            .unwrap_or_default();
        let [nv, ambient] = counts[..] else {
            return Err(perr(ln, "expected `VERTICES count ambient_dim`"));
        };
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, l) = lines.next().ok_or_else(|| perr(ln, "truncated vertex block"))?;
            let v: Vec<f64> = l
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| perr(ln, "bad coordinate"))?;
            if v.len() != ambient {
                return Err(perr(ln, "wrong coordinate count"));
            }
            vertices.push(v);
        }
        let (ln, line) = lines.next().ok_or_else(|| perr(ln, "missing cell block"))?;
        let nc: usize = line
            .strip_prefix("CELLS")
            .and_then(|r| r.trim().parse().ok())
            .ok_or_else(|| perr(ln, "expected `CELLS count`"))?;
        let mut cells = Vec::with_capacity(nc);
        for _ in 0..nc {
            let (ln, l) = lines.next().ok_or_else(|| perr(ln, "truncated cell block"))?;
            let c: Vec<usize> = l
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| perr(ln, "bad vertex index"))?;
            cells.push(c);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(perr(ln, "trailing content"));
        }
        Self::new(dim, vertices, cells, period)
    }
}

fn edge_vector(from: &[f64], to: &[f64], period: Option<&[f64]>) -> Vec<f64> {
    from.iter()
        .zip(to)
        .enumerate()
        .map(|(i, (a, b))| {
            let d = b - a;
            match period {
                Some(p) => d - p[i] * (d / p[i]).round(),
                None => d,
            }
        })
        .collect()
}

/// Cellwise constant density with an upper cap.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    values: Vec<f64>,
    cap: f64,
}

impl Density {
    pub fn new(values: Vec<f64>, cap: f64) -> Result<Self, MeshError> {
        if !(cap > 0.0) {
            return Err(MeshError::Density(format!("cap {cap} must be positive")));
        }
        if let Some((c, v)) = values
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v >= 0.0) || !v.is_finite())
        {
            return Err(MeshError::Density(format!("cell {c} has invalid value {v}")));
        }
        if let Some((c, v)) = values.iter().enumerate().find(|(_, &v)| v > cap) {
            return Err(MeshError::Density(format!("cell {c} value {v} exceeds cap {cap}")));
        }
        Ok(Self { values, cap })
    }

    /// Density without an effective cap.
    pub fn uncapped(values: Vec<f64>) -> Result<Self, MeshError> {
        Self::new(values, f64::INFINITY)
    }

    pub fn uniform(mesh: &SimplicialMesh, value: f64) -> Result<Self, MeshError> {
        Self::uncapped(vec![value; mesh.num_cells()])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn mass(&self, mesh: &SimplicialMesh) -> f64 {
        self.values.iter().zip(mesh.cell_volumes()).map(|(r, v)| r * v).sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, MeshError> {
        Self::new(self.values.iter().map(|v| v * factor).collect(), self.cap * factor)
    }
}

/// Kuhn triangulation of the flat torus `(R / side Z)^m`.
pub fn build_flat_torus(m: usize, n_per_axis: usize, side: f64) -> Result<SimplicialMesh, MeshError> {
    if m != 2 && m != 3 {
        return Err(MeshError::UnsupportedDimension(m));
    }
    if n_per_axis < 3 {
        return Err(MeshError::InvalidParameter(format!("n_per_axis {n_per_axis} < 3")));
    }
    if !(side > 0.0) || !side.is_finite() {
        return Err(MeshError::InvalidParameter(format!("side {side} must be positive")));
    }
    let n = n_per_axis;
    if n.pow(m as u32) * if m == 2 { 2 } else { 6 } > MAX_CELLS {
        return Err(MeshError::TooLarge { level: n, limit: MAX_CELLS });
    }
    let h = side / n as f64;
    let index = |ijk: &[usize]| ijk.iter().rev().fold(0, |acc, &i| acc * n + (i % n));

    let mut vertices = Vec::with_capacity(n.pow(m as u32));
    let mut coord = vec![0usize; m];
    for _ in 0..n.pow(m as u32) {
        vertices.push(coord.iter().map(|&i| i as f64 * h).collect());
        for c in coord.iter_mut() {
            *c += 1;
            if *c < n {
                break;
            }
            *c = 0;
        }
    }

    let perms = permutations(m);
    let mut cells = Vec::with_capacity(n.pow(m as u32) * perms.len());
    let mut base = vec![0usize; m];
    for _ in 0..n.pow(m as u32) {
        for perm in &perms {
            let mut corner = base.clone();
            let mut cell = vec![index(&corner)];
            for &axis in perm {
                corner[axis] += 1;
                cell.push(index(&corner));
            }
            cells.push(cell);
        }
        for c in base.iter_mut() {
            *c += 1;
            if *c < n {
                break;
            }
            *c = 0;
        }
    }
    SimplicialMesh::new(m, vertices, cells, Some(vec![side; m]))
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, m - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// Subdivided icosahedron (m = 2) or subdivided 16-cell boundary (m = 3),
/// with vertices projected to the unit sphere.
pub fn build_round_sphere(m: usize, level: usize) -> Result<SimplicialMesh, MeshError> {
    let (mut vertices, mut cells) = match m {
        2 => icosahedron(),
        3 => cross_polytope_boundary(),
        _ => return Err(MeshError::UnsupportedDimension(m)),
    };
    let growth = 1usize << m;
    let projected = cells.len().checked_mul(growth.checked_pow(level as u32).unwrap_or(usize::MAX));
    if projected.is_none_or(|c| c > MAX_CELLS) {
        return Err(MeshError::TooLarge { level, limit: MAX_CELLS });
    }
    for _ in 0..level {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let p: Vec<f64> = vertices[a].iter().zip(&vertices[b]).map(|(x, y)| x + y).collect();
                vertices.push(normalize(p));
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(cells.len() * growth);
        for c in &cells {
            if m == 2 {
                let (a, b, d) = (c[0], c[1], c[2]);
                let ab = mid(a, b, &mut vertices);
                let bd = mid(b, d, &mut vertices);
                let da = mid(d, a, &mut vertices);
                next.extend([vec![a, ab, da], vec![ab, b, bd], vec![da, bd, d], vec![ab, bd, da]]);
            } else {
                let x = [c[0], c[1], c[2], c[3]];
                let mut e = [[0usize; 4]; 4];
                for i in 0..4 {
                    for j in i + 1..4 {
                        let v = mid(x[i], x[j], &mut vertices);
                        e[i][j] = v;
                        e[j][i] = v;
                    }
                }
                // red refinement: four corner tets, then the inner octahedron
                // split along its shortest diagonal
                next.extend([
                    vec![x[0], e[0][1], e[0][2], e[0][3]],
                    vec![e[0][1], x[1], e[1][2], e[1][3]],
                    vec![e[0][2], e[1][2], x[2], e[2][3]],
                    vec![e[0][3], e[1][3], e[2][3], x[3]],
                ]);
                let options = [
                    ((e[0][2], e[1][3]), [e[0][1], e[1][2], e[2][3], e[0][3]]),
                    ((e[0][1], e[2][3]), [e[0][2], e[1][2], e[1][3], e[0][3]]),
                    ((e[0][3], e[1][2]), [e[0][1], e[1][3], e[2][3], e[0][2]]),
                ];
                let length = |(p, q): (usize, usize)| -> f64 {
                    vertices[p].iter().zip(&vertices[q]).map(|(a, b)| (a - b) * (a - b)).sum()
                };
                let ((p, q), ring) = options
                    .into_iter()
                    .min_by(|a, b| length(a.0).total_cmp(&length(b.0)))
                    .unwrap();
                for i in 0..4 {
                    next.push(vec![p, q, ring[i], ring[(i + 1) % 4]]);
                }
            }
        }
        cells = next;
    }
    SimplicialMesh::new(m, vertices, cells, None)
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / r).collect()
}

fn icosahedron() -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let vertices = raw.iter().map(|p| normalize(p.to_vec())).collect();
    let faces = [
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (vertices, faces.iter().map(|f| f.to_vec()).collect())
}

fn cross_polytope_boundary() -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    // vertex 2i is +e_i, 2i+1 is -e_i
    let mut vertices = Vec::with_capacity(8);
    for i in 0..4 {
        for s in [1.0, -1.0] {
            let mut v = vec![0.0; 4];
            v[i] = s;
            vertices.push(v);
        }
    }
    let cells = (0..16u32)
        .map(|signs| (0..4).map(|i| 2 * i + ((signs >> i) & 1) as usize).collect())
        .collect();
    (vertices, cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torus_has_exact_volume() {
        let mesh = build_flat_torus(2, 8, 2.0 * std::f64::consts::PI).unwrap();
        let v = mesh.total_volume();
        assert!((v - 4.0 * std::f64::consts::PI.powi(2)).abs() < 1e-12);
        assert_eq!(mesh.num_cells(), 128);
    }

    #[test]
    fn cube_torus_closed() {
        let mesh = build_flat_torus(3, 6, 1.0).unwrap();
        assert_eq!(mesh.num_cells(), 6 * 216);
        assert!((mesh.total_volume() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(build_flat_torus(4, 8, 1.0), Err(MeshError::UnsupportedDimension(4))));
        assert!(build_flat_torus(2, 8, 0.0).is_err());
        assert!(build_flat_torus(2, 2, 1.0).is_err());
        assert!(matches!(build_round_sphere(5, 0), Err(MeshError::UnsupportedDimension(5))));
        assert!(matches!(build_round_sphere(2, 40), Err(MeshError::TooLarge { .. })));
    }

    #[test]
    fn open_surface_is_rejected() {
        let vertices = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let err = SimplicialMesh::new(2, vertices, vec![vec![0, 1, 2]], None).unwrap_err();
        assert!(matches!(err, MeshError::NotClosed { count: 1, .. }));
    }

    #[test]
    fn degenerate_cell_reported_by_index() {
        let (mut v, c) = icosahedron();
        // collapse vertex 5 onto vertex 0
        v[5] = v[0].clone();
        let err = SimplicialMesh::new(2, v, c, None).unwrap_err();
        assert!(matches!(err, MeshError::SingularCell { cell: 0, .. }));
    }

    #[test]
    fn stiffness_kills_constants() {
        let mesh = build_round_sphere(2, 2).unwrap();
        let k = mesh.assemble_stiffness();
        let r = k.mul_vec(&vec![1.0; mesh.num_vertices()]);
        assert!(r.iter().all(|x| x.abs() < 1e-12));
        assert!(k.asymmetry() < 1e-14);
    }

    #[test]
    fn mass_totals_density_mass() {
        let mesh = build_round_sphere(3, 1).unwrap();
        let rho = Density::uniform(&mesh, 0.7).unwrap();
        let m = mesh.assemble_mass(&rho).unwrap();
        let ones = vec![1.0; mesh.num_vertices()];
        let total = m.bilinear(&ones, &ones);
        assert!((total - rho.mass(&mesh)).abs() < 1e-13);
    }

    #[test]
    fn density_validation() {
        assert!(Density::new(vec![1.0, -0.1], 2.0).is_err());
        assert!(Density::new(vec![1.0, 3.0], 2.0).is_err());
        assert!(Density::new(vec![1.0], 0.0).is_err());
        assert!(Density::new(vec![0.0, 2.0], 2.0).is_ok());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mesh = build_flat_torus(2, 4, 3.0).unwrap();
        let text = mesh.to_text();
        let back = SimplicialMesh::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back.cell_volumes(), mesh.cell_volumes());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = SimplicialMesh::from_text("DIM 2\nVERTICES 1 2\n0 x\n").unwrap_err();
        assert_eq!(err, MeshError::Parse { line: 3, msg: "bad coordinate".into() });
    }
}
