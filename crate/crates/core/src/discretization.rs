//! Rotated-cube finite-difference lattices, boundary masks and the
//! regularised jump datum.
//!
//! A grid over `Q^ν_ρ(x) = R_ν Q_ρ(0) + x` is a tensor lattice in *local*
//! coordinates `l ∈ [-ρ/2, ρ/2]^n`; the last local axis is the direction
//! `R_ν e_n = ν`, so `(y - x)·ν` is exactly the last local coordinate of
//! `y = R_ν l + x`. Nodes are numbered `i_0 + N_0 i_1`.

use serde::{Deserialize, Serialize};

use crate::error::{config, invalid, Result};

/// Tolerance used when comparing lengths that should agree exactly.
const GEOM_TOL: f64 = 1e-12;

/// Orthogonal `n×n` matrix with `R e_n = ν` and determinant one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    n: usize,
    m: [[f64; 2]; 2],
}

impl Rotation {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.m[row][col]
    }

    /// Rows of the matrix.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|r| self.m[r][..self.n].to_vec()).collect()
    }

    pub fn apply(&self, l: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (r, o) in out.iter_mut().enumerate().take(self.n) {
            *o = (0..self.n).map(|c| self.m[r][c] * l[c]).sum();
        }
        out
    }

    pub fn determinant(&self) -> f64 {
        match self.n {
            1 => self.m[0][0],
            _ => self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0],
        }
    }
}

/// `R_ν` for `n ∈ {1, 2}`; in two dimensions `R = [[ν₂, ν₁], [-ν₁, ν₂]]`.
pub fn rotation_matrix(nu: &[f64]) -> Result<Rotation> {
    if nu.iter().any(|c| !c.is_finite()) {
        return invalid("direction has non-finite entries");
    }
    let norm = nu.iter().map(|c| c * c).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return invalid(format!("direction must be a unit vector, |nu| = {norm}"));
    }
    match nu {
        [a] => Ok(Rotation {
            n: 1,
            m: [[*a, 0.0], [0.0, 0.0]],
        }),
        [a, b] => Ok(Rotation {
            n: 2,
            m: [[*b, *a], [-*a, *b]],
        }),
        _ => invalid(format!(
            "dimension {} not supported (n must be 1 or 2)",
            nu.len()
        )),
    }
}

/// Which boundary nodes carry the datum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// Datum on the whole boundary layer.
    Dirichlet,
    /// Datum on the boundary layer except where `|(y - x)·ν| ≤ ε`.
    Mixed,
}

impl std::str::FromStr for BoundaryMode {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dirichlet" => Ok(BoundaryMode::Dirichlet),
            "mixed" => Ok(BoundaryMode::Mixed),
            other => invalid(format!("unknown boundary mode '{other}' (dirichlet|mixed)")),
        }
    }
}

/// Tensor lattice on a rotated box.
#[derive(Debug, Clone)]
pub struct Grid {
    n: usize,
    center: Vec<f64>,
    extents: Vec<f64>,
    nu: Vec<f64>,
    rotation: Rotation,
    h: f64,
    counts: Vec<usize>,
}

impl Grid {
    /// Lattice on `R_ν (Π [-L_k/2, L_k/2]) + x`. Each extent must be an
    /// integer multiple of the spacing; for a single extent the spacing is
    /// adjusted to `L / round(L / h)`.
    pub fn new(center: &[f64], extents: &[f64], nu: &[f64], h: f64) -> Result<Self> {
        let rotation = rotation_matrix(nu)?;
        let n = rotation.dim();
        if center.len() != n || extents.len() != n {
            return invalid("center, extents and direction must share the dimension");
        }
        if center.iter().chain(extents).any(|c| !c.is_finite()) || !h.is_finite() {
            return invalid("non-finite grid parameter");
        }
        if h <= 0.0 || extents.iter().any(|&l| l <= 0.0) {
            return invalid("spacing and extents must be positive");
        }
        let counts: Vec<usize> = extents
            .iter()
            .map(|&l| (l / h).round() as usize + 1)
            .collect();
        if counts.iter().any(|&c| c < 2) {
            return config("spacing larger than the box");
        }
        let h_eff = extents[n - 1] / (counts[n - 1] - 1) as f64;
        for (l, c) in extents.iter().zip(&counts) {
            if (h_eff * (*c - 1) as f64 - l).abs() > GEOM_TOL * l.max(1.0) {
                return config(format!(
                    "box extents {extents:?} are not multiples of a common spacing near {h}"
                ));
            }
        }
        Ok(Self {
            n,
            center: center.to_vec(),
            extents: extents.to_vec(),
            nu: nu.to_vec(),
            rotation,
            h: h_eff,
            counts,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn spacing(&self) -> f64 {
        self.h
    }
    pub fn center(&self) -> &[f64] {
        &self.center
    }
    pub fn extents(&self) -> &[f64] {
        &self.extents
    }
    pub fn direction(&self) -> &[f64] {
        &self.nu
    }
    pub fn rotation(&self) -> &Rotation {
        &self.rotation
    }
    /// Nodes per local axis.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
    pub fn node_count(&self) -> usize {
        self.counts.iter().product()
    }
    pub fn cell_count(&self) -> usize {
        self.counts.iter().map(|c| c - 1).product()
    }
    /// `h^n`, the volume of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.n as i32)
    }
    /// Corners per cell, `2^n`.
    pub fn corners_per_cell(&self) -> usize {
        1 << self.n
    }

    /// Lattice multi-index of a node.
    pub fn node_multi_index(&self, node: usize) -> [usize; 2] {
        match self.n {
            1 => [node, 0],
            _ => [node % self.counts[0], node / self.counts[0]],
        }
    }

    pub fn node_index(&self, idx: [usize; 2]) -> usize {
        match self.n {
            1 => idx[0],
            _ => idx[0] + self.counts[0] * idx[1],
        }
    }

    pub fn node_local(&self, node: usize) -> [f64; 2] {
        let idx = self.node_multi_index(node);
        let mut l = [0.0; 2];
        for (k, lk) in l.iter_mut().enumerate().take(self.n) {
            *lk = idx[k] as f64 * self.h - 0.5 * self.extents[k];
        }
        l
    }

    /// Physical position `R_ν l + x` of a node.
    pub fn node_position(&self, node: usize) -> Vec<f64> {
        self.to_physical(&self.node_local(node))
    }

    fn to_physical(&self, l: &[f64; 2]) -> Vec<f64> {
        let r = self.rotation.apply(l);
        (0..self.n).map(|k| r[k] + self.center[k]).collect()
    }

    /// `(y - x)·ν` for node `y`, the last local coordinate.
    pub fn normal_coordinate(&self, node: usize) -> f64 {
        self.node_local(node)[self.n - 1]
    }

    /// Corner nodes of a cell, in bit order (bit `d` set means `+1` along
    /// local axis `d`).
    pub fn cell_corners(&self, cell: usize) -> [usize; 4] {
        match self.n {
            1 => [cell, cell + 1, 0, 0],
            _ => {
                let cx = self.counts[0] - 1;
                let (i, j) = (cell % cx, cell / cx);
                let c0 = i + self.counts[0] * j;
                [c0, c0 + 1, c0 + self.counts[0], c0 + self.counts[0] + 1]
            }
        }
    }

    /// Physical coordinates of every cell center.
    pub fn cell_centers(&self) -> Vec<Vec<f64>> {
        (0..self.cell_count())
            .map(|c| {
                let corner = self.node_local(self.cell_corners(c)[0]);
                let mut l = corner;
                for lk in l.iter_mut().take(self.n) {
                    *lk += 0.5 * self.h;
                }
                self.to_physical(&l)
            })
            .collect()
    }

    /// Whether a node lies in the outermost layer.
    pub fn is_boundary(&self, node: usize) -> bool {
        let idx = self.node_multi_index(node);
        (0..self.n).any(|k| idx[k] == 0 || idx[k] + 1 == self.counts[k])
    }
}

/// Boundary layer of a grid and the part of it released in mixed mode.
#[derive(Debug, Clone)]
pub struct BoundaryMask {
    pub mode: BoundaryMode,
    /// Outermost node layer (one node ring).
    pub dirichlet: Vec<bool>,
    /// Boundary nodes with `|(y - x)·ν| ≤ ε`.
    pub mixed_exempt: Vec<bool>,
}

impl BoundaryMask {
    pub fn build(grid: &Grid, eps: Option<f64>, mode: BoundaryMode) -> Self {
        let nodes = grid.node_count();
        let dirichlet: Vec<bool> = (0..nodes).map(|i| grid.is_boundary(i)).collect();
        let band = eps.unwrap_or(0.0) * (1.0 + GEOM_TOL) + GEOM_TOL;
        let mixed_exempt = (0..nodes)
            .map(|i| dirichlet[i] && eps.is_some() && grid.normal_coordinate(i).abs() <= band)
            .collect();
        Self {
            mode,
            dirichlet,
            mixed_exempt,
        }
    }

    /// Nodes whose values are prescribed in the mask's mode.
    pub fn fixed(&self) -> Vec<bool> {
        match self.mode {
            BoundaryMode::Dirichlet => self.dirichlet.clone(),
            BoundaryMode::Mixed => self
                .dirichlet
                .iter()
                .zip(&self.mixed_exempt)
                .map(|(d, e)| *d && !*e)
                .collect(),
        }
    }

    pub fn dirichlet_nodes(&self) -> Vec<usize> {
        indices(&self.dirichlet)
    }

    pub fn mixed_exempt_nodes(&self) -> Vec<usize> {
        indices(&self.mixed_exempt)
    }
}

fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter(|(_, b)| **b)
        .map(|(i, _)| i)
        .collect()
}

/// Nodal pair `(u, v)`: `m` displacement components and one phase value per
/// node. `u` is stored node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseFieldState {
    pub m: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhaseFieldState {
    pub fn new(m: usize, nodes: usize) -> Self {
        Self {
            m,
            u: vec![0.0; m * nodes],
            v: vec![1.0; nodes],
        }
    }

    pub fn node_count(&self) -> usize {
        self.v.len()
    }

    pub fn check_size(&self, grid: &Grid) -> Result<()> {
        let nodes = grid.node_count();
        if self.m == 0 || self.v.len() != nodes || self.u.len() != self.m * nodes {
            return invalid(format!(
                "state sized for {} nodes (m = {}), grid has {nodes}",
                self.v.len(),
                self.m
            ));
        }
        Ok(())
    }

    /// Projects `v` onto `[0, 1]`.
    pub fn clamp_v(&mut self) {
        self.v.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
}

/// Box resolution rule `h <= rho/8`.
pub fn check_box_resolution(grid: &Grid) -> Result<()> {
    let h = grid.spacing();
    let shortest = grid.extents().iter().cloned().fold(f64::INFINITY, f64::min);
    if h > shortest / 8.0 * (1.0 + GEOM_TOL) {
        return config(format!(
            "resolution rule h <= rho/8 violated (h = {h}, rho = {shortest})"
        ));
    }
    Ok(())
}

/// Transition-layer resolution rule `h <= eps/4`, required wherever the
/// phase field is an unknown.
pub fn check_layer_resolution(h: f64, eps: f64) -> Result<()> {
    if !(eps.is_finite() && eps > 0.0) {
        return invalid("eps must be positive");
    }
    if h > eps / 4.0 * (1.0 + GEOM_TOL) {
        return config(format!(
            "resolution rule h <= eps/4 violated (h = {h}, eps = {eps})"
        ));
    }
    Ok(())
}

/// Grid and boundary mask for `Q^ν_ρ(x)`. `eps` sets the width of the
/// mixed-mode exemption band; the layer rule `h <= eps/4` is checked by the
/// surface solvers, not here.
pub fn build_cube_grid(
    x: &[f64],
    rho: f64,
    nu: &[f64],
    h: f64,
    eps: Option<f64>,
    mode: BoundaryMode,
) -> Result<(Grid, BoundaryMask)> {
    build_box_grid(x, &vec![rho; nu.len()], nu, h, eps, mode)
}

/// As [`build_cube_grid`] for a rotated rectangle with per-axis extents
/// (the last extent is measured along `ν`).
pub fn build_box_grid(
    x: &[f64],
    extents: &[f64],
    nu: &[f64],
    h: f64,
    eps: Option<f64>,
    mode: BoundaryMode,
) -> Result<(Grid, BoundaryMask)> {
    let grid = Grid::new(x, extents, nu, h)?;
    check_box_resolution(&grid)?;
    if let Some(eps) = eps {
        if !(eps.is_finite() && eps > 0.0) {
            return invalid("eps must be positive");
        }
    }
    let mask = BoundaryMask::build(&grid, eps, mode);
    Ok((grid, mask))
}

/// Forward-difference gradient per cell, mapped to physical axes.
///
/// Differences along each local axis are averaged over the `2^{n-1}`
/// parallel edges of the cell. Output is cell-major, `components × n`
/// entries per cell (row `c` of the `m×n` matrix holds component `c`).
pub fn apply_gradient(grid: &Grid, field: &[f64], components: usize) -> Result<Vec<f64>> {
    let nodes = grid.node_count();
    if components == 0 || field.len() != components * nodes {
        return invalid(format!(
            "field has {} entries, expected {components} x {nodes}",
            field.len()
        ));
    }
    let n = grid.dim();
    let h = grid.spacing();
    let rot = grid.rotation();
    let k = grid.corners_per_cell();
    let edges = (k / 2) as f64;
    let mut out = Vec::with_capacity(grid.cell_count() * components * n);
    for cell in 0..grid.cell_count() {
        let corners = grid.cell_corners(cell);
        for comp in 0..components {
            let mut local = [0.0; 2];
            for (axis, l) in local.iter_mut().enumerate().take(n) {
                let bit = 1 << axis;
                let mut acc = 0.0;
                for c in (0..k).filter(|c| c & bit == 0) {
                    acc += field[corners[c | bit] * components + comp]
                        - field[corners[c] * components + comp];
                }
                *l = acc / (edges * h);
            }
            let phys = rot.apply(&local);
            out.extend_from_slice(&phys[..n]);
        }
    }
    Ok(out)
}

/// Regularised jump pair `(ū^ν_{x,ζ,ε}, v̄^ν_{x,ε})` sampled at the nodes.
///
/// With `t = (y - x)·ν / ε` the profiles are `u = clamp(t + 1/2, 0, 1) ζ`
/// and `v = clamp(2|t| - 1, 0, 1)`: `v` vanishes wherever `u` varies and the
/// pair equals `(χ_{t>0} ζ, 1)` for `|t| ≥ 1`.
pub fn jump_datum(
    grid: &Grid,
    x: &[f64],
    nu: &[f64],
    eps: f64,
    zeta: &[f64],
) -> Result<PhaseFieldState> {
    if zeta.is_empty() || zeta.iter().all(|z| *z == 0.0) {
        return invalid("jump amplitude zeta must be non-zero");
    }
    if zeta.iter().any(|z| !z.is_finite()) || !(eps.is_finite() && eps > 0.0) {
        return invalid("jump datum parameters must be finite with eps > 0");
    }
    let n = grid.dim();
    if x.len() != n || nu.len() != n {
        return invalid("point and direction must match the grid dimension");
    }
    let aligned = x == grid.center() && nu == grid.direction();
    let m = zeta.len();
    let mut state = PhaseFieldState::new(m, grid.node_count());
    for node in 0..grid.node_count() {
        let s = if aligned {
            grid.normal_coordinate(node)
        } else {
            let y = grid.node_position(node);
            (0..n).map(|k| (y[k] - x[k]) * nu[k]).sum()
        };
        let t = s / eps;
        let profile = (t + 0.5).clamp(0.0, 1.0);
        for c in 0..m {
            state.u[node * m + c] = profile * zeta[c];
        }
        state.v[node] = (2.0 * t.abs() - 1.0).clamp(0.0, 1.0);
    }
    Ok(state)
}

/// Affine datum `u_ξ(y) = ξ y` (flattened `m×n` matrix `ξ`) with `v ≡ 1`.
pub fn affine_datum(grid: &Grid, xi: &[f64], m: usize) -> Result<PhaseFieldState> {
    let n = grid.dim();
    if xi.len() != m * n || m == 0 {
        return invalid(format!("xi must have m*n = {} entries", m * n));
    }
    if xi.iter().any(|e| !e.is_finite()) {
        return invalid("xi has non-finite entries");
    }
    let mut state = PhaseFieldState::new(m, grid.node_count());
    for node in 0..grid.node_count() {
        let y = grid.node_position(node);
        for c in 0..m {
            state.u[node * m + c] = (0..n).map(|k| xi[c * n + k] * y[k]).sum();
        }
    }
    Ok(state)
}
