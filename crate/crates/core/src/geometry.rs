//! Boundary meshes, region tags, the uniform time grid and DOF layouts.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Density and wave speeds of a homogeneous isotropic medium.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub rho: f64,
    pub c_p: f64,
    pub c_s: f64,
}

impl Material {
    pub fn new(rho: f64, c_p: f64, c_s: f64) -> Result<Self> {
        let m = Material { rho, c_p, c_s };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.c_s > 0.0 && self.c_p > self.c_s) {
            return Err(Error::Config(format!(
                "material requires rho > 0 and c_p > c_s > 0, got rho={} c_p={} c_s={}",
                self.rho, self.c_p, self.c_s
            )));
        }
        Ok(())
    }

    pub fn mu(&self) -> f64 {
        self.rho * self.c_s * self.c_s
    }

    pub fn lambda(&self) -> f64 {
        self.rho * (self.c_p * self.c_p - 2.0 * self.c_s * self.c_s)
    }

    /// λ + 2μ.
    pub fn p_modulus(&self) -> f64 {
        self.rho * self.c_p * self.c_p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_final: f64,
    pub n_steps: usize,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 || !(t_final > 0.0) {
            return Err(Error::Config(format!("invalid time grid T={t_final} N={n_steps}")));
        }
        Ok(TimeGrid { t_final, n_steps, dt: t_final / n_steps as f64 })
    }

    /// Grid with step `dt`; `t_final` must be an integer multiple of it.
    pub fn from_dt(t_final: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("invalid time step {dt}")));
        }
        let n = (t_final / dt).round();
        if n < 1.0 || (n * dt - t_final).abs() > 1e-9 * t_final {
            return Err(Error::Config(format!("T={t_final} is not a multiple of dt={dt}")));
        }
        Self::new(t_final, n as usize)
    }

    pub fn t(&self, l: usize) -> f64 {
        l as f64 * self.dt
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Dirichlet,
    Neumann,
    Contact,
}

impl Region {
    pub fn name(self) -> &'static str {
        match self {
            Region::Dirichlet => "dirichlet",
            Region::Neumann => "neumann",
            Region::Contact => "contact",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dirichlet" | "d" => Ok(Region::Dirichlet),
            "neumann" | "n" => Ok(Region::Neumann),
            "contact" | "c" => Ok(Region::Contact),
            other => Err(Error::Config(format!("unknown region tag '{other}'"))),
        }
    }

    /// Part of Γ_Σ, where the displacement is unknown.
    pub fn carries_displacement(self) -> bool {
        self != Region::Dirichlet
    }
}

/// A straight boundary segment seen from outside the mesh.
#[derive(Clone, Copy, Debug)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
    pub len: f64,
    pub t: Point,
    pub n: Point,
}

impl Segment {
    pub fn new(a: Point, b: Point) -> Self {
        let d = [b[0] - a[0], b[1] - a[1]];
        let len = d[0].hypot(d[1]);
        let t = [d[0] / len, d[1] / len];
        Segment { a, b, len, t, n: [t[1], -t[0]] }
    }

    pub fn at(&self, xi: f64) -> Point {
        [self.a[0] + xi * (self.b[0] - self.a[0]), self.a[1] + xi * (self.b[1] - self.a[1])]
    }
}

/// Segments of Γ with region tags.
///
/// Normals are `(t₂, −t₁)` for the element direction `t`, so a counterclockwise
/// polygon gets outward normals. `contact_dirs` holds the direction along which
/// the unilateral constraint acts (pointing into the body, away from the obstacle).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMesh {
    pub vertices: Vec<Point>,
    pub elements: Vec<[usize; 2]>,
    pub regions: Vec<Region>,
    pub contact_dirs: Vec<Point>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideTag {
    Dirichlet,
    Neumann,
    Contact,
}

impl From<SideTag> for Region {
    fn from(s: SideTag) -> Region {
        match s {
            SideTag::Dirichlet => Region::Dirichlet,
            SideTag::Neumann => Region::Neumann,
            SideTag::Contact => Region::Contact,
        }
    }
}

/// Preset geometries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "lowercase")]
pub enum MeshSpec {
    /// Segment `[x0, x1] × {0}`, Contact on `[c0, c1]`, Dirichlet elsewhere.
    Slit { h: f64, x0: f64, x1: f64, c0: f64, c1: f64 },
    /// Axis-aligned square of side `side` centered at the origin.
    /// Tags are listed bottom, right, top, left.
    Square { h: f64, side: f64, tags: [SideTag; 4] },
    /// Inscribed polygon of a circle centered at the origin, all Contact.
    Circle { h: f64, radius: f64 },
    /// Mesh read from a CSV file written by [`BoundaryMesh::to_csv`].
    File { path: String },
}

fn divisions(len: f64, h: f64) -> usize {
    (len / h - 1e-9).ceil().max(1.0) as usize
}

fn aligned(len: f64, h: f64) -> bool {
    let q = len / h;
    (q - q.round()).abs() < 1e-8
}

impl BoundaryMesh {
    pub fn from_spec(spec: &MeshSpec) -> Result<Self> {
        match spec {
            MeshSpec::Slit { h, x0, x1, c0, c1 } => Self::slit(*h, *x0, *x1, *c0, *c1),
            MeshSpec::Square { h, side, tags } => Self::square(*h, *side, *tags),
            MeshSpec::Circle { h, radius } => Self::circle(*h, *radius),
            MeshSpec::File { path } => Self::read_csv(Path::new(path)),
        }
    }

    pub fn slit(h: f64, x0: f64, x1: f64, c0: f64, c1: f64) -> Result<Self> {
        if !(h > 0.0 && x1 > x0 && c1 > c0 && c0 >= x0 && c1 <= x1) {
            return Err(Error::Config("invalid slit parameters".into()));
        }
        if h > c1 - c0 {
            return Err(Error::Config(format!("h={h} exceeds the contact region length {}", c1 - c0)));
        }
        if !(aligned(x1 - x0, h) && aligned(c0 - x0, h) && aligned(c1 - c0, h)) {
            return Err(Error::Config(format!("h={h} does not align with the slit breakpoints")));
        }
        let n = (((x1 - x0) / h).round()) as usize;
        let vertices: Vec<Point> =
            (0..=n).map(|i| [x0 + (x1 - x0) * i as f64 / n as f64, 0.0]).collect();
        let elements: Vec<[usize; 2]> = (0..n).map(|i| [i, i + 1]).collect();
        let regions = (0..n)
            .map(|i| {
                let mid = 0.5 * (vertices[i][0] + vertices[i + 1][0]);
                if mid > c0 && mid < c1 {
                    Region::Contact
                } else {
                    Region::Dirichlet
                }
            })
            .collect();
        let mesh = BoundaryMesh { vertices, elements, regions, contact_dirs: vec![[0.0, 1.0]; n] };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn square(h: f64, side: f64, tags: [SideTag; 4]) -> Result<Self> {
        if !(h > 0.0 && side > 0.0) {
            return Err(Error::Config("invalid square parameters".into()));
        }
        if h > side {
            return Err(Error::Config(format!("h={h} exceeds the side length {side}")));
        }
        let n = divisions(side, h);
        let s = 0.5 * side;
        let corners = [[-s, -s], [s, -s], [s, s], [-s, s]];
        let mut vertices = Vec::with_capacity(4 * n);
        let mut regions = Vec::with_capacity(4 * n);
        let mut contact_dirs = Vec::with_capacity(4 * n);
        for k in 0..4 {
            let (p, q) = (corners[k], corners[(k + 1) % 4]);
            let seg = Segment::new(p, q);
            for i in 0..n {
                let xi = i as f64 / n as f64;
                vertices.push([p[0] + xi * (q[0] - p[0]), p[1] + xi * (q[1] - p[1])]);
                regions.push(Region::from(tags[k]));
                contact_dirs.push([-seg.n[0], -seg.n[1]]);
            }
        }
        let m = vertices.len();
        let elements = (0..m).map(|i| [i, (i + 1) % m]).collect();
        let mesh = BoundaryMesh { vertices, elements, regions, contact_dirs };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Inscribed polygon with uniform angular spacing, first vertex at the bottom.
    /// The contact direction is vertical for every element (a horizontal obstacle).
    pub fn circle(h: f64, radius: f64) -> Result<Self> {
        if !(h > 0.0 && radius > 0.0) {
            return Err(Error::Config("invalid circle parameters".into()));
        }
        if h >= 2.0 * radius {
            return Err(Error::Config(format!("h={h} too large for radius {radius}")));
        }
        let n = ((std::f64::consts::PI / (h / (2.0 * radius)).asin()) - 1e-9).ceil().max(3.0) as usize;
        let vertices: Vec<Point> = (0..n)
            .map(|i| {
                let th = -std::f64::consts::FRAC_PI_2 + 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                [radius * th.cos(), radius * th.sin()]
            })
            .collect();
        let elements = (0..n).map(|i| [i, (i + 1) % n]).collect();
        let mesh = BoundaryMesh {
            vertices,
            elements,
            regions: vec![Region::Contact; n],
            contact_dirs: vec![[0.0, 1.0]; n],
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn segment(&self, e: usize) -> Segment {
        let [a, b] = self.elements[e];
        Segment::new(self.vertices[a], self.vertices[b])
    }

    pub fn normal(&self, e: usize) -> Point {
        self.segment(e).n
    }

    pub fn h_max(&self) -> f64 {
        (0..self.n_elements()).map(|e| self.segment(e).len).fold(0.0, f64::max)
    }

    pub fn perimeter(&self) -> f64 {
        (0..self.n_elements()).map(|e| self.segment(e).len).sum()
    }

    /// Number of elements touching each vertex.
    pub fn vertex_degree(&self) -> Vec<usize> {
        let mut deg = vec![0; self.vertices.len()];
        for el in &self.elements {
            deg[el[0]] += 1;
            deg[el[1]] += 1;
        }
        deg
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.elements.len();
        if m == 0 || self.regions.len() != m || self.contact_dirs.len() != m {
            return Err(Error::Config("mesh arrays have inconsistent lengths".into()));
        }
        for (e, el) in self.elements.iter().enumerate() {
            if el[0] >= self.vertices.len() || el[1] >= self.vertices.len() || el[0] == el[1] {
                return Err(Error::Config(format!("element {e} has invalid vertices")));
            }
            let s = self.segment(e);
            if !(s.len > 0.0) || !s.len.is_finite() {
                return Err(Error::Config(format!("element {e} is degenerate")));
            }
        }
        if self.vertex_degree().iter().any(|&d| d > 2) {
            return Err(Error::Config("mesh has a vertex shared by more than two elements".into()));
        }
        Ok(())
    }

    /// Cheap structural hash used as a cache key for assembled blocks.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            h ^= x;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for v in &self.vertices {
            eat(v[0].to_bits());
            eat(v[1].to_bits());
        }
        for (e, el) in self.elements.iter().enumerate() {
            eat(el[0] as u64);
            eat(el[1] as u64);
            eat(self.regions[e] as u64);
            eat(self.contact_dirs[e][0].to_bits());
            eat(self.contact_dirs[e][1].to_bits());
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("# v,x,y | e,a,b,region,dir_x,dir_y\n");
        for v in &self.vertices {
            let _ = writeln!(s, "v,{:.16e},{:.16e}", v[0], v[1]);
        }
        for (e, el) in self.elements.iter().enumerate() {
            let d = self.contact_dirs[e];
            let _ = writeln!(
                s,
                "e,{},{},{},{:.16e},{:.16e}",
                el[0],
                el[1],
                self.regions[e].name(),
                d[0],
                d[1]
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut elements = Vec::new();
        let mut regions = Vec::new();
        let mut contact_dirs = Vec::new();
        let num = |s: &str, line: usize| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| Error::Config(format!("mesh csv line {line}: bad number '{s}'")))
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            match f[0].trim() {
                "v" if f.len() == 3 => vertices.push([num(f[1], i + 1)?, num(f[2], i + 1)?]),
                "e" if f.len() == 6 => {
                    let a = num(f[1], i + 1)? as usize;
                    let b = num(f[2], i + 1)? as usize;
                    elements.push([a, b]);
                    regions.push(Region::parse(f[3])?);
                    contact_dirs.push([num(f[4], i + 1)?, num(f[5], i + 1)?]);
                }
                _ => return Err(Error::Config(format!("mesh csv line {}: unrecognized row", i + 1))),
            }
        }
        let mesh = BoundaryMesh { vertices, elements, regions, contact_dirs };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv(&text)
    }
}

/// Index bookkeeping for ψ, u and λ.
///
/// Per time step the unknown vector is `[ψ₁, ψ₂, u₁, u₂]`, with ψ ordered by
/// (element, local end) and u by displacement node. Multipliers are stored per
/// step as `[λ_⊥ (contact elements), λ_∥ (contact elements)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DofLayout {
    pub n_elements: usize,
    /// Scalar ψ basis functions, two per element.
    pub n_psi: usize,
    /// Scalar hat functions on Γ_Σ.
    pub n_u: usize,
    /// Contact elements.
    pub n_lambda: usize,
    pub n_steps: usize,
    /// Vertex index of each u node.
    pub u_vertices: Vec<usize>,
    /// u node of each vertex, if any.
    pub u_of_vertex: Vec<Option<usize>>,
    /// Element index of each multiplier.
    pub contact_elements: Vec<usize>,
    pub normal_idx: Vec<usize>,
    pub tangent_idx: Vec<usize>,
}

impl DofLayout {
    pub fn new(mesh: &BoundaryMesh, grid: &TimeGrid) -> Self {
        let nv = mesh.vertices.len();
        let deg = mesh.vertex_degree();
        let mut in_sigma = vec![false; nv];
        let mut touches_dirichlet = vec![false; nv];
        for (e, el) in mesh.elements.iter().enumerate() {
            for &v in el {
                if mesh.regions[e].carries_displacement() {
                    in_sigma[v] = true;
                } else {
                    touches_dirichlet[v] = true;
                }
            }
        }
        let mut u_vertices = Vec::new();
        let mut u_of_vertex = vec![None; nv];
        for v in 0..nv {
            if in_sigma[v] && !touches_dirichlet[v] && deg[v] == 2 {
                u_of_vertex[v] = Some(u_vertices.len());
                u_vertices.push(v);
            }
        }
        let contact_elements: Vec<usize> =
            (0..mesh.n_elements()).filter(|&e| mesh.regions[e] == Region::Contact).collect();
        let nl = contact_elements.len();
        let mut normal_idx = Vec::with_capacity(grid.n_steps * nl);
        let mut tangent_idx = Vec::with_capacity(grid.n_steps * nl);
        for l in 0..grid.n_steps {
            for j in 0..nl {
                normal_idx.push(l * 2 * nl + j);
                tangent_idx.push(l * 2 * nl + nl + j);
            }
        }
        DofLayout {
            n_elements: mesh.n_elements(),
            n_psi: 2 * mesh.n_elements(),
            n_u: u_vertices.len(),
            n_lambda: nl,
            n_steps: grid.n_steps,
            u_vertices,
            u_of_vertex,
            contact_elements,
            normal_idx,
            tangent_idx,
        }
    }

    /// Unknowns per time step.
    pub fn block_size(&self) -> usize {
        2 * self.n_psi + 2 * self.n_u
    }

    pub fn psi_dof(&self, comp: usize, elem: usize, local: usize) -> usize {
        comp * self.n_psi + 2 * elem + local
    }

    pub fn u_dof(&self, comp: usize, node: usize) -> usize {
        2 * self.n_psi + comp * self.n_u + node
    }

    /// u nodes at the two ends of an element (None where the trace is pinned).
    pub fn element_u_nodes(&self, mesh: &BoundaryMesh, e: usize) -> [Option<usize>; 2] {
        if !mesh.regions[e].carries_displacement() {
            return [None, None];
        }
        let [a, b] = mesh.elements[e];
        [self.u_of_vertex[a], self.u_of_vertex[b]]
    }

    /// Multiplier entries per time step.
    pub fn lambda_block(&self) -> usize {
        2 * self.n_lambda
    }

    pub fn lambda_len(&self) -> usize {
        self.n_steps * self.lambda_block()
    }
}
