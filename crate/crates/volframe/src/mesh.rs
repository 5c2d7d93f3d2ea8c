//! Tetrahedral meshes: ingestion, boundary geometry, linear FEM operators,
//! and built-in cube meshes.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sparse::{self, Csr};

/// Default dihedral threshold for crease detection, in degrees.
pub const DEFAULT_CREASE_DEG: f64 = 45.0;

/// A tetrahedral mesh with its boundary surface.
#[derive(Debug, Clone)]
pub struct TetMesh {
    pub vertices: Vec<Vector3<f64>>,
    /// Positively oriented tetrahedra.
    pub tets: Vec<[usize; 4]>,
    /// Boundary triangles, oriented with outward normals.
    pub boundary_faces: Vec<[usize; 3]>,
    /// Sorted boundary vertex indices.
    pub boundary_vertices: Vec<usize>,
    /// Position of each vertex in `boundary_vertices`, if on the boundary.
    pub boundary_slot: Vec<Option<usize>>,
    /// Unit normal per boundary vertex (parallel to `boundary_vertices`).
    pub normals: Vec<Vector3<f64>>,
    /// Crease flag per boundary vertex.
    pub crease: Vec<bool>,
    pub crease_deg: f64,
    /// Boundary edges not shared by exactly two boundary faces.
    pub nonmanifold_edges: usize,
}

/// Mesh file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Medit,
    Tetgen,
}

impl std::str::FromStr for MeshFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "medit" | "mesh" => Ok(MeshFormat::Medit),
            "tetgen" | "node" | "ele" => Ok(MeshFormat::Tetgen),
            _ => Err(Error::InvalidInput(format!("unknown mesh format '{s}'"))),
        }
    }
}

fn signed_volume(v: &[Vector3<f64>], t: &[usize; 4]) -> f64 {
    let a = v[t[0]];
    Matrix3::from_columns(&[v[t[1]] - a, v[t[2]] - a, v[t[3]] - a]).determinant() / 6.0
}

impl TetMesh {
    /// Builds a mesh, fixing inverted tetrahedra and extracting the boundary.
    pub fn new(vertices: Vec<Vector3<f64>>, mut tets: Vec<[usize; 4]>) -> Result<Self> {
        if tets.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let nv = vertices.len();
        for (k, t) in tets.iter().enumerate() {
            if t.iter().any(|&i| i >= nv) {
                return Err(Error::InvalidInput(format!("tetrahedron {k} references a missing vertex")));
            }
        }
        let (lo, hi) = vertices.iter().fold(
            (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
            |(lo, hi), p| (lo.inf(p), hi.sup(p)),
        );
        let diag = (hi - lo).max();
        for (k, t) in tets.iter_mut().enumerate() {
            let vol = signed_volume(&vertices, t);
            if vol.abs() < 1e-14 * diag.powi(3) {
                return Err(Error::DegenerateTet { index: k, volume: vol });
            }
            if vol < 0.0 {
                t.swap(2, 3);
            }
        }
        let mut faces: HashMap<[usize; 3], (usize, [usize; 3])> = HashMap::new();
        let mut order: Vec<[usize; 3]> = Vec::new();
        for t in &tets {
            let [a, b, c, d] = *t;
            for f in [[b, c, d], [a, d, c], [a, b, d], [a, c, b]] {
                let mut key = f;
                key.sort_unstable();
                let e = faces.entry(key).or_insert_with(|| {
                    order.push(key);
                    (0, f)
                });
                e.0 += 1;
            }
        }
        let boundary_faces: Vec<[usize; 3]> =
            order.iter().filter_map(|k| faces.get(k).filter(|e| e.0 == 1).map(|e| e.1)).collect();
        let mut on_b = vec![false; nv];
        for f in &boundary_faces {
            for &i in f {
                on_b[i] = true;
            }
        }
        let boundary_vertices: Vec<usize> = (0..nv).filter(|&i| on_b[i]).collect();
        let mut boundary_slot = vec![None; nv];
        for (k, &i) in boundary_vertices.iter().enumerate() {
            boundary_slot[i] = Some(k);
        }
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &boundary_faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let nonmanifold_edges = edges.values().filter(|&&c| c != 2).count();
        if nonmanifold_edges > 0 {
            log::warn!("boundary has {nonmanifold_edges} non-manifold edges");
        }
        let mut mesh = TetMesh {
            vertices,
            tets,
            boundary_faces,
            boundary_vertices,
            boundary_slot,
            normals: Vec::new(),
            crease: Vec::new(),
            crease_deg: DEFAULT_CREASE_DEG,
            nonmanifold_edges,
        };
        mesh.compute_normals(DEFAULT_CREASE_DEG);
        Ok(mesh)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary_slot[i].is_some()
    }

    /// Area-weighted vertex normals and crease flags for the given threshold.
    pub fn compute_normals(&mut self, crease_deg: f64) {
        let nb = self.boundary_vertices.len();
        let mut sum = vec![Vector3::zeros(); nb];
        let mut incident: Vec<Vec<Vector3<f64>>> = vec![Vec::new(); nb];
        for f in &self.boundary_faces {
            let (a, b, c) = (self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]);
            let n = (b - a).cross(&(c - a));
            let unit = n.normalize();
            for &i in f {
                let k = self.boundary_slot[i].unwrap();
                sum[k] += n;
                incident[k].push(unit);
            }
        }
        let cos_thr = crease_deg.to_radians().cos();
        self.crease = vec![false; nb];
        self.normals = vec![Vector3::z(); nb];
        for k in 0..nb {
            let len = sum[k].norm();
            if len < 1e-300 {
                log::warn!("zero normal at boundary vertex {}; flagged as crease", self.boundary_vertices[k]);
                self.crease[k] = true;
                continue;
            }
            self.normals[k] = sum[k] / len;
            let fs = &incident[k];
            'pairs: for i in 0..fs.len() {
                for j in i + 1..fs.len() {
                    // strict: a dihedral of exactly the threshold is not a crease
                    if fs[i].dot(&fs[j]) < cos_thr - 1e-12 {
                        self.crease[k] = true;
                        break 'pairs;
                    }
                }
            }
        }
        self.crease_deg = crease_deg;
    }

    pub fn tet_volume(&self, k: usize) -> f64 {
        signed_volume(&self.vertices, &self.tets[k])
    }

    pub fn volume(&self) -> f64 {
        (0..self.tets.len()).map(|k| self.tet_volume(k)).sum()
    }

    /// Normal of a non-crease boundary vertex, `None` for interior or crease vertices.
    pub fn alignment_normal(&self, i: usize) -> Option<Vector3<f64>> {
        let k = self.boundary_slot[i]?;
        (!self.crease[k]).then(|| self.normals[k])
    }

    /// Euler characteristic `V − E + F` of the boundary surface.
    pub fn boundary_euler(&self) -> i64 {
        let mut edges = std::collections::HashSet::new();
        for f in &self.boundary_faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        self.boundary_vertices.len() as i64 - edges.len() as i64 + self.boundary_faces.len() as i64
    }

    /// Connected components of the vertex graph (by tetrahedra); label per vertex.
    pub fn components(&self) -> (usize, Vec<usize>) {
        let n = self.vertices.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for t in &self.tets {
            for k in 1..4 {
                let (a, b) = (find(&mut parent, t[0]), find(&mut parent, t[k]));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut label = vec![usize::MAX; n];
        let mut roots = HashMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            let next = roots.len();
            label[i] = *roots.entry(r).or_insert(next);
        }
        (roots.len(), label)
    }

    /// Content hash of geometry and connectivity.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.vertices {
            for c in v.iter() {
                h.update(c.to_le_bytes());
            }
        }
        for t in &self.tets {
            for &i in t {
                h.update((i as u64).to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Uniformly scaled copy.
    pub fn scaled(&self, c: f64) -> Result<TetMesh> {
        let mut m = TetMesh::new(self.vertices.iter().map(|v| v * c).collect(), self.tets.clone())?;
        m.compute_normals(self.crease_deg);
        Ok(m)
    }
}

/// Unit cube with `n³` cells, each split into 6 tetrahedra along the main diagonal.
pub fn generate_cube_mesh(n: usize) -> Result<TetMesh> {
    if n == 0 {
        return Err(Error::InvalidInput("cube subdivision must be at least 1".into()));
    }
    grid_mesh(n, |_, _| true, |p| p)
}

/// Unit cube with a vertical cylindrical through-hole.
///
/// The cube is divided into `3n` cells per side, the central `n×n` column of
/// cells is removed, and the square hole is warped onto a circle of radius
/// `1/6` with a blend that leaves the outer faces fixed.
pub fn generate_holed_cube_mesh(n: usize) -> Result<TetMesh> {
    if n < 2 {
        return Err(Error::InvalidInput("holed cube needs n ≥ 2 to resolve the hole".into()));
    }
    let big = 3 * n;
    let keep = move |i: usize, j: usize| !((n..2 * n).contains(&i) && (n..2 * n).contains(&j));
    let h = 1.0 / 6.0;
    let outer = 0.5;
    let radius = 1.0 / 6.0;
    grid_mesh(big, keep, move |p| {
        let d = nalgebra::Vector2::new(p.x - 0.5, p.y - 0.5);
        let s = d.x.abs().max(d.y.abs());
        if s < h - 1e-12 {
            return p;
        }
        let w = (outer - s) / (outer - h);
        let rho = radius + (s - h) * (outer - radius) / (outer - h);
        let warped = d / d.norm() * rho;
        let q = d * (1.0 - w) + warped * w;
        Vector3::new(q.x + 0.5, q.y + 0.5, p.z)
    })
}

/// Kuhn-subdivided grid on `[0,1]³` with `n` cells per side, keeping the
/// vertical cell columns selected by `keep(i, j)` and mapping vertices by `warp`.
fn grid_mesh(
    n: usize,
    keep: impl Fn(usize, usize) -> bool,
    warp: impl Fn(Vector3<f64>) -> Vector3<f64>,
) -> Result<TetMesh> {
    let idx = |i: usize, j: usize, k: usize| (k * (n + 1) + j) * (n + 1) + i;
    let mut used = vec![false; (n + 1).pow(3)];
    let mut cells = Vec::new();
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                if keep(i, j) {
                    cells.push((i, j, k));
                    for (a, b, c) in corner_offsets() {
                        used[idx(i + a, j + b, k + c)] = true;
                    }
                }
            }
        }
    }
    let mut map = vec![usize::MAX; used.len()];
    let mut vertices = Vec::new();
    for k in 0..=n {
        for j in 0..=n {
            for i in 0..=n {
                let g = idx(i, j, k);
                if used[g] {
                    map[g] = vertices.len();
                    let p = Vector3::new(i as f64, j as f64, k as f64) / n as f64;
                    vertices.push(warp(p));
                }
            }
        }
    }
    // the 6 monotone lattice paths from (0,0,0) to (1,1,1)
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * cells.len());
    for (i, j, k) in cells {
        for perm in PERMS {
            let mut c = [i, j, k];
            let mut t = [0usize; 4];
            t[0] = map[idx(c[0], c[1], c[2])];
            for (s, &axis) in perm.iter().enumerate() {
                c[axis] += 1;
                t[s + 1] = map[idx(c[0], c[1], c[2])];
            }
            tets.push(t);
        }
    }
    TetMesh::new(vertices, tets)
}

fn corner_offsets() -> impl Iterator<Item = (usize, usize, usize)> {
    (0..8).map(|m| (m & 1, (m >> 1) & 1, (m >> 2) & 1))
}

/// Stiffness and lumped mass of linear finite elements.
#[derive(Debug, Clone)]
pub struct FemOperators {
    /// PSD stiffness `S`, `S_ij = ∫∇φ_i·∇φ_j`.
    pub stiffness: Csr,
    /// Lumped mass diagonal (volume/4 per corner).
    pub mass: Vec<f64>,
}

/// Gradients of the four barycentric coordinates of a tetrahedron.
pub fn shape_gradients(p: [Vector3<f64>; 4]) -> Option<[Vector3<f64>; 4]> {
    let j = Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]);
    let inv = j.try_inverse()?;
    let g1 = inv.row(0).transpose();
    let g2 = inv.row(1).transpose();
    let g3 = inv.row(2).transpose();
    Some([-(g1 + g2 + g3), g1, g2, g3])
}

/// Element stiffness `vol·GᵀG`.
pub fn element_stiffness(p: [Vector3<f64>; 4]) -> Option<[[f64; 4]; 4]> {
    let g = shape_gradients(p)?;
    let vol = Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]).determinant().abs() / 6.0;
    let mut k = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            k[a][b] = vol * g[a].dot(&g[b]);
        }
    }
    Some(k)
}

fn tet_points(mesh: &TetMesh, t: &[usize; 4]) -> [Vector3<f64>; 4] {
    [mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]], mesh.vertices[t[3]]]
}

/// Assembles the stiffness and lumped mass matrices.
pub fn fem_operators(mesh: &TetMesh) -> Result<FemOperators> {
    let n = mesh.num_vertices();
    let mut trips = Vec::with_capacity(16 * mesh.tets.len());
    let mut mass = vec![0.0; n];
    for (k, t) in mesh.tets.iter().enumerate() {
        let vol = mesh.tet_volume(k);
        let ke = element_stiffness(tet_points(mesh, t)).ok_or(Error::DegenerateTet { index: k, volume: vol })?;
        for a in 0..4 {
            mass[t[a]] += vol / 4.0;
            for b in 0..4 {
                trips.push((t[a], t[b], ke[a][b]));
            }
        }
    }
    Ok(FemOperators { stiffness: Csr::from_triplets(n, trips), mass })
}

impl FemOperators {
    pub fn n(&self) -> usize {
        self.mass.len()
    }

    /// `½ tr(q S qᵀ)` for a `d×n` field.
    pub fn dirichlet_energy(&self, q: &DMatrix<f64>) -> f64 {
        0.5 * q.dot(&self.stiffness.apply_field(q))
    }

    /// `tr(a M bᵀ)`.
    pub fn mass_inner(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (0..self.n()).map(|i| self.mass[i] * a.column(i).dot(&b.column(i))).sum()
    }
}

/// Per-tetrahedron energies `½ Σ_r q_rᵀ S_t q_r` of a field.
pub fn tet_energies(mesh: &TetMesh, q: &DMatrix<f64>) -> Vec<f64> {
    mesh.tets
        .iter()
        .map(|t| {
            let ke = element_stiffness(tet_points(mesh, t)).unwrap_or([[0.0; 4]; 4]);
            let mut e = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    e += ke[a][b] * q.column(t[a]).dot(&q.column(t[b]));
                }
            }
            0.5 * e
        })
        .collect()
}

/// Smallest nonzero generalized eigenvalue of `S u = λ M u`.
///
/// With `boundary_reduced`, boundary vertices are removed (Dirichlet pencil);
/// otherwise the constant mode of every connected component is deflated.
pub fn smallest_nonzero_stiffness_eigenvalue(mesh: &TetMesh, ops: &FemOperators, boundary_reduced: bool) -> Result<f64> {
    let (s, m, kernel): (Csr, Vec<f64>, Vec<Vec<f64>>) = if boundary_reduced {
        let keep: Vec<usize> = (0..mesh.num_vertices()).filter(|&i| !mesh.is_boundary(i)).collect();
        if keep.is_empty() {
            return Err(Error::InvalidInput("mesh has no interior vertices".into()));
        }
        let m = keep.iter().map(|&i| ops.mass[i]).collect();
        (ops.stiffness.submatrix(&keep), m, Vec::new())
    } else {
        let (count, label) = mesh.components();
        if count > 1 {
            log::warn!("mesh has {count} components: {count} zero modes deflated");
        }
        let kernel = (0..count).map(|c| label.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect()).collect();
        (ops.stiffness.clone(), ops.mass.clone(), kernel)
    };
    let n = m.len();
    let deflate = |u: &mut [f64]| {
        for k in &kernel {
            let c = (0..n).map(|i| k[i] * m[i] * u[i]).sum::<f64>() / (0..n).map(|i| k[i] * m[i]).sum::<f64>();
            for i in 0..n {
                u[i] -= c * k[i];
            }
        }
    };
    let inv_diag: Vec<f64> = s.diagonal().iter().map(|d| 1.0 / d).collect();
    // subspace iteration with Rayleigh–Ritz: robust to clustered low eigenvalues
    let p = EIG_BLOCK.min(n.saturating_sub(kernel.len())).max(1);
    let mut x = start_block(mesh, boundary_reduced, n, p);
    for col in x.iter_mut() {
        deflate(col);
    }
    for _ in 0..500 {
        let mut y = Vec::with_capacity(p);
        for col in &x {
            let b: Vec<f64> = (0..n).map(|i| m[i] * col[i]).collect();
            let mut sol = col.clone();
            sparse::pcg(|v, out| s.mul_vec(v, out), &inv_diag, &b, &mut sol, 1e-12, 20 * n + 100)?;
            deflate(&mut sol);
            y.push(sol);
        }
        let sy: Vec<Vec<f64>> = y
            .iter()
            .map(|c| {
                let mut out = vec![0.0; n];
                s.mul_vec(c, &mut out);
                out
            })
            .collect();
        let a = DMatrix::from_fn(p, p, |i, j| sparse::dot(&y[i], &sy[j]));
        let bm = DMatrix::from_fn(p, p, |i, j| (0..n).map(|k| m[k] * y[i][k] * y[j][k]).sum::<f64>());
        let a = (&a + a.transpose()) * 0.5;
        let bm = (&bm + bm.transpose()) * 0.5;
        let chol = bm.cholesky().ok_or_else(|| Error::NoConvergence("Ritz basis lost independence".into()))?;
        let linv = chol.l().try_inverse().ok_or_else(|| Error::NoConvergence("Ritz basis singular".into()))?;
        let red = &linv * a * linv.transpose();
        let eig = red.symmetric_eigen();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
        let coef = linv.transpose() * &eig.eigenvectors;
        x = order
            .iter()
            .map(|&c| (0..n).map(|k| (0..p).map(|r| y[r][k] * coef[(r, c)]).sum()).collect())
            .collect();
        let lambda = eig.eigenvalues[order[0]];
        let x0 = &x[0];
        let sx0: Vec<f64> = (0..n).map(|k| (0..p).map(|r| sy[r][k] * coef[(r, order[0])]).sum()).collect();
        let res: f64 = (0..n).map(|k| (sx0[k] - lambda * m[k] * x0[k]).powi(2) / m[k]).sum::<f64>().sqrt();
        let xnorm: f64 = (0..n).map(|k| m[k] * x0[k] * x0[k]).sum::<f64>().sqrt();
        if res <= EIG_TOL * lambda.abs() * xnorm {
            return Ok(lambda);
        }
    }
    Err(Error::NoConvergence("inverse iteration for the smallest eigenvalue".into()))
}

/// Block size of the subspace iteration.
const EIG_BLOCK: usize = 6;
/// Relative residual `‖Su − λMu‖_{M⁻¹} / (λ‖u‖_M)` at convergence.
const EIG_TOL: f64 = 1e-8;

/// Deterministic smooth start vectors (low-order polynomials of the coordinates).
fn start_block(mesh: &TetMesh, boundary_reduced: bool, n: usize, p: usize) -> Vec<Vec<f64>> {
    let pts: Vec<&Vector3<f64>> = if boundary_reduced {
        (0..mesh.num_vertices()).filter(|&i| !mesh.is_boundary(i)).map(|i| &mesh.vertices[i]).collect()
    } else {
        mesh.vertices.iter().collect()
    };
    debug_assert_eq!(pts.len(), n);
    let fns: [fn(&Vector3<f64>) -> f64; 8] = [
        |q| q.x + 0.31 * q.y + 0.17 * q.z + 1.0,
        |q| q.y - 0.23 * q.z + 0.5,
        |q| q.z + 0.11 * q.x,
        |q| q.x * q.y + 0.3,
        |q| q.y * q.z - 0.2 * q.x,
        |q| q.z * q.x + q.x * q.x,
        |q| q.y * q.y - q.z * q.z + 0.1,
        |q| q.x * q.y * q.z,
    ];
    (0..p).map(|k| pts.iter().map(|q| fns[k % fns.len()](q) * (1.0 + 0.01 * (k / fns.len()) as f64)).collect()).collect()
}

// ---------------------------------------------------------------------------
// File formats

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut items = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("");
            for tok in line.split_whitespace() {
                items.push((ln + 1, tok));
            }
        }
        Tokens { items, pos: 0 }
    }

    fn line(&self) -> usize {
        self.items.get(self.pos).or(self.items.last()).map_or(0, |t| t.0)
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let t = self.items.get(self.pos).copied();
        self.pos += 1;
        t
    }

    fn expect<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let line = self.line();
        let (line, tok) = self.next().ok_or(Error::Parse { line, msg: format!("unexpected end of file, expected {what}") })?;
        tok.parse().map_err(|_| Error::Parse { line, msg: format!("expected {what}, found '{tok}'") })
    }

    fn peek_line(&self) -> Option<usize> {
        self.items.get(self.pos).map(|t| t.0)
    }
}

/// Parses a MEDIT `.mesh` file (keywords `Vertices`, `Tetrahedra`; others skipped).
pub fn parse_medit(text: &str) -> Result<TetMesh> {
    let mut tk = Tokens::new(text);
    let mut vertices = Vec::new();
    let mut tets = Vec::new();
    while let Some((line, kw)) = tk.next() {
        match kw {
            "MeshVersionFormatted" | "Dimension" => {
                let v: i64 = tk.expect("integer")?;
                if kw == "Dimension" && v != 3 {
                    return Err(Error::Parse { line, msg: format!("unsupported dimension {v}") });
                }
            }
            "Vertices" => {
                let count: usize = tk.expect("vertex count")?;
                for _ in 0..count {
                    let x = tk.expect("coordinate")?;
                    let y = tk.expect("coordinate")?;
                    let z = tk.expect("coordinate")?;
                    let _r: i64 = tk.expect("reference")?;
                    vertices.push(Vector3::new(x, y, z));
                }
            }
            "Tetrahedra" => {
                let count: usize = tk.expect("tetrahedron count")?;
                for _ in 0..count {
                    let l = tk.line();
                    let mut t = [0usize; 4];
                    for s in t.iter_mut() {
                        let i: usize = tk.expect("vertex index")?;
                        if i == 0 {
                            return Err(Error::Parse { line: l, msg: "MEDIT indices are 1-based".into() });
                        }
                        *s = i - 1;
                    }
                    let _r: i64 = tk.expect("reference")?;
                    tets.push(t);
                }
            }
            "Triangles" | "Edges" | "Corners" | "Ridges" | "RequiredVertices" | "Quadrilaterals" | "Hexahedra" => {
                // tokens per entry: vertex indices plus a reference
                let per = match kw {
                    "Triangles" => 4,
                    "Edges" => 3,
                    "Quadrilaterals" => 5,
                    "Hexahedra" => 9,
                    _ => 1,
                };
                let count: usize = tk.expect("element count")?;
                for _ in 0..count * per {
                    tk.next().ok_or(Error::Parse { line, msg: format!("truncated {kw} block") })?;
                }
            }
            "End" => break,
            _ => return Err(Error::Parse { line, msg: format!("unknown keyword '{kw}'") }),
        }
    }
    if tets.is_empty() {
        return Err(Error::EmptyMesh);
    }
    TetMesh::new(vertices, tets)
}

/// Writes a MEDIT `.mesh` file including boundary triangles.
pub fn to_medit(mesh: &TetMesh) -> String {
    let mut s = String::from("MeshVersionFormatted 2\nDimension 3\n");
    let _ = writeln!(s, "Vertices\n{}", mesh.vertices.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{:?} {:?} {:?} 0", v.x, v.y, v.z);
    }
    let _ = writeln!(s, "Tetrahedra\n{}", mesh.tets.len());
    for t in &mesh.tets {
        let _ = writeln!(s, "{} {} {} {} 0", t[0] + 1, t[1] + 1, t[2] + 1, t[3] + 1);
    }
    let _ = writeln!(s, "Triangles\n{}", mesh.boundary_faces.len());
    for f in &mesh.boundary_faces {
        let _ = writeln!(s, "{} {} {} 0", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s.push_str("End\n");
    s
}

/// Parses a TetGen `.node`/`.ele` pair (0- or 1-based numbering).
pub fn parse_tetgen(node: &str, ele: &str) -> Result<TetMesh> {
    let mut tk = Tokens::new(node);
    let count: usize = tk.expect("point count")?;
    let line = tk.line();
    let dim: usize = tk.expect("dimension")?;
    if dim != 3 {
        return Err(Error::Parse { line, msg: format!("unsupported dimension {dim}") });
    }
    let attrs: usize = tk.expect("attribute count")?;
    let markers: usize = tk.expect("boundary marker flag")?;
    let mut base = None;
    let mut vertices = Vec::with_capacity(count);
    for k in 0..count {
        let line = tk.line();
        let id: usize = tk.expect("point index")?;
        let b = *base.get_or_insert(id);
        if id != b + k {
            return Err(Error::Parse { line, msg: format!("point index {id} out of sequence") });
        }
        let x = tk.expect("coordinate")?;
        let y = tk.expect("coordinate")?;
        let z = tk.expect("coordinate")?;
        for _ in 0..attrs + markers.min(1) {
            let _: f64 = tk.expect("attribute")?;
        }
        vertices.push(Vector3::new(x, y, z));
    }
    let base = base.unwrap_or(0);
    let mut tk = Tokens::new(ele);
    let count: usize = tk.expect("tetrahedron count")?;
    let line = tk.line();
    let per: usize = tk.expect("nodes per tetrahedron")?;
    if per != 4 && per != 10 {
        return Err(Error::Parse { line, msg: format!("unsupported nodes per tetrahedron {per}") });
    }
    let attrs: usize = tk.expect("attribute count")?;
    let mut tets = Vec::with_capacity(count);
    for _ in 0..count {
        let _id: usize = tk.expect("tetrahedron index")?;
        let line = tk.line();
        let mut t = [0usize; 4];
        for k in 0..per {
            let i: usize = tk.expect("vertex index")?;
            if k < 4 {
                t[k] = i.checked_sub(base).ok_or(Error::Parse { line, msg: format!("vertex index {i} below base {base}") })?;
            }
        }
        for _ in 0..attrs {
            let _: f64 = tk.expect("attribute")?;
        }
        tets.push(t);
    }
    if tk.peek_line().is_some() {
        log::warn!("trailing tokens in .ele input ignored");
    }
    if tets.is_empty() {
        return Err(Error::EmptyMesh);
    }
    TetMesh::new(vertices, tets)
}

/// Writes TetGen `.node` and `.ele` contents (1-based).
pub fn to_tetgen(mesh: &TetMesh) -> (String, String) {
    let mut node = format!("{} 3 0 0\n", mesh.vertices.len());
    for (i, v) in mesh.vertices.iter().enumerate() {
        let _ = writeln!(node, "{} {:?} {:?} {:?}", i + 1, v.x, v.y, v.z);
    }
    let mut ele = format!("{} 4 0\n", mesh.tets.len());
    for (k, t) in mesh.tets.iter().enumerate() {
        let _ = writeln!(ele, "{} {} {} {} {}", k + 1, t[0] + 1, t[1] + 1, t[2] + 1, t[3] + 1);
    }
    (node, ele)
}

/// Loads a mesh; for TetGen, `path` may name the `.node`, the `.ele`, or the common stem.
pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TetMesh> {
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", p.display())))
    };
    match format {
        MeshFormat::Medit => parse_medit(&read(path)?),
        MeshFormat::Tetgen => {
            let stem = match path.extension().and_then(|e| e.to_str()) {
                Some("node") | Some("ele") => path.with_extension(""),
                _ => path.to_path_buf(),
            };
            let node = read(&stem.with_extension("node"))?;
            let ele = read(&stem.with_extension("ele"))?;
            parse_tetgen(&node, &ele)
        }
    }
}

/// Guesses the format from the file extension.
pub fn format_from_path(path: &Path) -> MeshFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("node") | Some("ele") => MeshFormat::Tetgen,
        _ => MeshFormat::Medit,
    }
}

/// Per-vertex frame data for VTK output.
pub struct VtkFrameData<'a> {
    pub coeffs: &'a DMatrix<f64>,
    /// Three axis vectors per vertex, scaled by their weights.
    pub axes: &'a [[Vector3<f64>; 3]],
    pub scalars: &'a [(&'a str, Vec<f64>)],
}

/// Legacy ASCII VTK unstructured grid with frame coefficients and axes.
pub fn to_vtk(mesh: &TetMesh, title: &str, data: Option<&VtkFrameData<'_>>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0\n{}\nASCII\nDATASET UNSTRUCTURED_GRID", title.replace('\n', " "));
    let _ = writeln!(s, "POINTS {} double", mesh.vertices.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{:?} {:?} {:?}", v.x, v.y, v.z);
    }
    let _ = writeln!(s, "CELLS {} {}", mesh.tets.len(), 5 * mesh.tets.len());
    for t in &mesh.tets {
        let _ = writeln!(s, "4 {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    let _ = writeln!(s, "CELL_TYPES {}", mesh.tets.len());
    for _ in &mesh.tets {
        s.push_str("10\n");
    }
    if let Some(d) = data {
        let n = mesh.vertices.len();
        let _ = writeln!(s, "POINT_DATA {n}");
        for (k, name) in ["axis0", "axis1", "axis2"].iter().enumerate() {
            let _ = writeln!(s, "VECTORS {name} double");
            for a in d.axes {
                let v = a[k];
                let _ = writeln!(s, "{:?} {:?} {:?}", v.x, v.y, v.z);
            }
        }
        let _ = writeln!(s, "FIELD FieldData {}", 1 + d.scalars.len());
        let _ = writeln!(s, "coeffs {} {n} double", d.coeffs.nrows());
        for c in d.coeffs.column_iter() {
            let row: Vec<String> = c.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        for (name, vals) in d.scalars {
            let _ = writeln!(s, "{name} 1 {n} double");
            for v in vals {
                let _ = writeln!(s, "{v:?}");
            }
        }
    }
    s
}
