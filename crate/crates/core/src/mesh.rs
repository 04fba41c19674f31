//! Unstructured triangulations of the city domain and their text formats.
//!
//! Two readers are provided: a plain node/element format
//!
//! ```text
//! # comment lines start with '#'
//! <n_vertices> <n_triangles> <n_boundary_edges>
//! x y                  (n_vertices lines)
//! a b c                (n_triangles lines, 0-based vertex ids)
//! a b                  (n_boundary_edges lines, may be 0)
//! ```
//!
//! and an importer for Gmsh MSH 2.2 ASCII files (triangles = element type 2).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Edge on the domain boundary, oriented with the domain on its left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub a: usize,
    pub b: usize,
    /// Outward unit normal.
    pub normal: [f64; 2],
    pub length: f64,
}

impl BoundaryEdge {
    pub fn midpoint(&self, vertices: &[[f64; 2]]) -> [f64; 2] {
        let (p, q) = (vertices[self.a], vertices[self.b]);
        [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]
    }
}

/// Conforming triangulation with counter-clockwise triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    areas: Vec<f64>,
    lumped_mass: Vec<f64>,
    domain_area: f64,
}

/// Barycentric location of a point inside a mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLocation {
    pub triangle: usize,
    pub vertices: [usize; 3],
    pub weights: [f64; 3],
}

impl PointLocation {
    pub fn interpolate(&self, nodal: &[f64]) -> f64 {
        (0..3).map(|k| self.weights[k] * nodal[self.vertices[k]]).sum()
    }
}

const LOCATE_TOL: f64 = 1e-9;

impl TriMesh {
    /// Builds the mesh, orienting triangles counter-clockwise and deriving
    /// the boundary from edges used by a single triangle.
    pub fn new(vertices: Vec<[f64; 2]>, mut triangles: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        if triangles.is_empty() {
            return Err(Error::Config("mesh has no triangles".into()));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Config("mesh has non-finite vertex coordinates".into()));
        }
        let mut areas = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter_mut().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::Config(format!("triangle {t} references a missing vertex")));
            }
            let a = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if a < 0.0 {
                tri.swap(1, 2);
            }
            if a.abs() <= 0.0 || !a.is_finite() {
                return Err(Error::Config(format!("triangle {t} has zero area")));
            }
            areas.push(a.abs());
        }

        let mut edge_use: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
        for &tri in &triangles {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                edge_use.entry((a.min(b), a.max(b))).or_default().push((a, b));
            }
        }
        let mut boundary_edges = Vec::new();
        for (key, uses) in &edge_use {
            match uses.as_slice() {
                [(a, b)] => {
                    let (p, q) = (vertices[*a], vertices[*b]);
                    let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
                    let length = dx.hypot(dy);
                    boundary_edges.push(BoundaryEdge {
                        a: *a,
                        b: *b,
                        normal: [dy / length, -dx / length],
                        length,
                    });
                }
                [(a0, b0), (a1, b1)] => {
                    if (a0, b0) != (b1, a1) {
                        return Err(Error::Config(format!(
                            "edge {key:?} is shared by inconsistently oriented triangles"
                        )));
                    }
                }
                _ => {
                    return Err(Error::Config(format!(
                        "edge {key:?} is shared by {} triangles (non-conforming mesh)",
                        uses.len()
                    )))
                }
            }
        }
        boundary_edges.sort_by_key(|e| (e.a, e.b));
        let mut degree = vec![0usize; nv];
        for e in &boundary_edges {
            degree[e.a] += 1;
            degree[e.b] += 1;
        }
        if let Some(v) = degree.iter().position(|&d| d != 0 && d != 2) {
            return Err(Error::Config(format!(
                "boundary is not a union of closed loops at vertex {v}"
            )));
        }

        let mut lumped_mass = vec![0.0; nv];
        for (tri, area) in triangles.iter().zip(&areas) {
            for &v in tri {
                lumped_mass[v] += area / 3.0;
            }
        }
        if let Some(v) = lumped_mass.iter().position(|&m| m == 0.0) {
            return Err(Error::Config(format!("vertex {v} belongs to no triangle")));
        }
        let domain_area = areas.iter().sum();
        Ok(TriMesh {
            vertices,
            triangles,
            boundary_edges,
            areas,
            lumped_mass,
            domain_area,
        })
    }

    /// Structured mesh of `[x0, x0 + width] x [y0, y0 + height]` with `nx * ny`
    /// cells, each split into two triangles.
    pub fn rectangle(origin: [f64; 2], width: f64, height: f64, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Config("rectangle mesh needs at least one cell per side".into()));
        }
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([
                    origin[0] + width * i as f64 / nx as f64,
                    origin[1] + height * j as f64 / ny as f64,
                ]);
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                if (i + j) % 2 == 0 {
                    triangles.push([a, b, c]);
                    triangles.push([a, c, d]);
                } else {
                    triangles.push([a, b, d]);
                    triangles.push([b, c, d]);
                }
            }
        }
        TriMesh::new(vertices, triangles)
    }

    /// Uniform refinement: every triangle split into four.
    pub fn refined(&self) -> Result<Self> {
        let mut vertices = self.vertices.clone();
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<[f64; 2]>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let (p, q) = (vertices[a], vertices[b]);
                vertices.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            triangles.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        TriMesh::new(vertices, triangles)
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
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

    /// One third of the areas of the triangles around each vertex.
    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped_mass
    }

    pub fn domain_area(&self) -> f64 {
        self.domain_area
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Vertices lying on the boundary, ascending.
    pub fn boundary_vertices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.boundary_edges.iter().flat_map(|e| [e.a, e.b]).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Gradients of the three P1 basis functions on triangle `t`.
    pub(crate) fn basis_gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        let (p0, p1, p2) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let two_area = 2.0 * self.areas[t];
        [
            [(p1[1] - p2[1]) / two_area, (p2[0] - p1[0]) / two_area],
            [(p2[1] - p0[1]) / two_area, (p0[0] - p2[0]) / two_area],
            [(p0[1] - p1[1]) / two_area, (p1[0] - p0[0]) / two_area],
        ]
    }

    /// Locates `p` with a signed-area test (tolerance 1e-9 relative to the
    /// triangle area); the lowest-index containing triangle wins. Weights
    /// within tolerance of zero are clipped and renormalized.
    pub fn locate(&self, p: [f64; 2]) -> Option<PointLocation> {
        for (t, tri) in self.triangles.iter().enumerate() {
            let [a, b, c] = *tri;
            let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
            let xs = [pa[0], pb[0], pc[0]];
            let ys = [pa[1], pb[1], pc[1]];
            let slack = LOCATE_TOL * self.areas[t].sqrt();
            if p[0] < min3(xs) - slack || p[0] > max3(xs) + slack || p[1] < min3(ys) - slack || p[1] > max3(ys) + slack {
                continue;
            }
            let area = self.areas[t];
            let w = [
                signed_area(p, pb, pc) / area,
                signed_area(pa, p, pc) / area,
                signed_area(pa, pb, p) / area,
            ];
            if w.iter().all(|&x| x >= -LOCATE_TOL) {
                let clipped = w.map(|x| x.max(0.0));
                let sum: f64 = clipped.iter().sum();
                return Some(PointLocation {
                    triangle: t,
                    vertices: *tri,
                    weights: clipped.map(|x| x / sum),
                });
            }
        }
        None
    }

    /// Boundary vertex closest to `p` (lowest index on ties).
    pub fn nearest_boundary_vertex(&self, p: [f64; 2]) -> Option<usize> {
        self.boundary_vertices().into_iter().min_by(|&a, &b| {
            let da = sq_dist(self.vertices[a], p);
            let db = sq_dist(self.vertices[b], p);
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        })
    }

    /// Checks a user-supplied boundary edge list against the derived one.
    pub fn check_boundary_edges(&self, edges: &[[usize; 2]]) -> Result<()> {
        let mut given: Vec<(usize, usize)> = edges.iter().map(|e| (e[0].min(e[1]), e[0].max(e[1]))).collect();
        let mut derived: Vec<(usize, usize)> = self.boundary_edges.iter().map(|e| (e.a.min(e.b), e.a.max(e.b))).collect();
        given.sort_unstable();
        derived.sort_unstable();
        if given != derived {
            return Err(Error::Config(format!(
                "listed boundary edges ({}) do not match the triangulation boundary ({})",
                given.len(),
                derived.len()
            )));
        }
        Ok(())
    }

    /// Serializes to the plain node/element format.
    pub fn to_plain_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# vertices triangles boundary_edges");
        let _ = writeln!(
            s,
            "{} {} {}",
            self.vertices.len(),
            self.triangles.len(),
            self.boundary_edges.len()
        );
        for v in &self.vertices {
            let _ = writeln!(s, "{:.17e} {:.17e}", v[0], v[1]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        for e in &self.boundary_edges {
            let _ = writeln!(s, "{} {}", e.a, e.b);
        }
        s
    }
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn min3(x: [f64; 3]) -> f64 {
    x[0].min(x[1]).min(x[2])
}

fn max3(x: [f64; 3]) -> f64 {
    x[0].max(x[1]).max(x[2])
}

/// Reads a mesh, choosing the format from the extension (`.msh` = Gmsh).
pub fn read_mesh(path: &Path) -> Result<TriMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "msh") {
        parse_gmsh(&text, path)
    } else {
        parse_plain(&text, path)
    }
}

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    path: &'a Path,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str, path: &'a Path, skip_comments: bool) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)>> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(move |(_, l)| !l.is_empty() && !(skip_comments && l.starts_with('#'))),
        );
        Lines {
            inner: it.peekable(),
            path,
        }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some(l) => Ok(l),
            None => Err(self.err(0, format!("unexpected end of file, expected {what}"))),
        }
    }

    fn numbers<T: std::str::FromStr>(&mut self, what: &str, count: usize) -> Result<(usize, Vec<T>)> {
        let (line, text) = self.next_line(what)?;
        let values = text
            .split_whitespace()
            .map(|t| t.parse::<T>())
            .collect::<std::result::Result<Vec<T>, _>>()
            .map_err(|_| self.err(line, format!("cannot parse {what}: '{text}'")))?;
        if values.len() < count {
            return Err(self.err(line, format!("expected {count} values for {what}, found {}", values.len())));
        }
        Ok((line, values))
    }
}

/// Parses the plain node/element format.
pub fn parse_plain(text: &str, path: &Path) -> Result<TriMesh> {
    let mut lines = Lines::new(text, path, true);
    let (_, header) = lines.numbers::<usize>("header counts", 2)?;
    let (nv, nt) = (header[0], header[1]);
    let nb = header.get(2).copied().unwrap_or(0);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (_, v) = lines.numbers::<f64>("vertex", 2)?;
        vertices.push([v[0], v[1]]);
    }
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (line, t) = lines.numbers::<usize>("triangle", 3)?;
        if t[..3].iter().any(|&i| i >= nv) {
            return Err(lines.err(line, "triangle references a missing vertex"));
        }
        triangles.push([t[0], t[1], t[2]]);
    }
    let mut edges = Vec::with_capacity(nb);
    for _ in 0..nb {
        let (_, e) = lines.numbers::<usize>("boundary edge", 2)?;
        edges.push([e[0], e[1]]);
    }
    let mesh = TriMesh::new(vertices, triangles)?;
    if nb > 0 {
        mesh.check_boundary_edges(&edges)?;
    }
    Ok(mesh)
}

/// Imports a Gmsh MSH 2.2 ASCII file. Only nodes and triangles are used;
/// unused nodes (e.g. geometry points) are dropped and the rest renumbered.
pub fn parse_gmsh(text: &str, path: &Path) -> Result<TriMesh> {
    let mut lines = Lines::new(text, path, false);
    let mut nodes: HashMap<usize, [f64; 2]> = HashMap::new();
    let mut node_order = Vec::new();
    let mut raw_triangles = Vec::new();
    let mut saw_format = false;
    while let Some((line, section)) = lines.inner.next() {
        match section {
            "$MeshFormat" => {
                let (l, fmt) = lines.next_line("mesh format")?;
                let mut parts = fmt.split_whitespace();
                let version = parts.next().unwrap_or("");
                let file_type = parts.next().unwrap_or("");
                if !version.starts_with("2.") || file_type != "0" {
                    return Err(lines.err(l, format!("unsupported MSH format '{fmt}' (need 2.x ASCII)")));
                }
                saw_format = true;
                expect_end(&mut lines, "$EndMeshFormat")?;
            }
            "$Nodes" => {
                let (_, count) = lines.numbers::<usize>("node count", 1)?;
                for _ in 0..count[0] {
                    let (l, parts) = lines.next_line("node")?;
                    let v: Vec<&str> = parts.split_whitespace().collect();
                    if v.len() < 3 {
                        return Err(lines.err(l, "node line needs id x y"));
                    }
                    let parse = |s: &str| s.parse::<f64>().map_err(|_| lines.err(l, format!("bad number '{s}'")));
                    let id = v[0].parse::<usize>().map_err(|_| lines.err(l, "bad node id"))?;
                    nodes.insert(id, [parse(v[1])?, parse(v[2])?]);
                    node_order.push(id);
                }
                expect_end(&mut lines, "$EndNodes")?;
            }
            "$Elements" => {
                let (_, count) = lines.numbers::<usize>("element count", 1)?;
                for _ in 0..count[0] {
                    let (l, e) = lines.numbers::<usize>("element", 3)?;
                    let (kind, ntags) = (e[1], e[2]);
                    if kind == 2 {
                        let ids = e.get(3 + ntags..6 + ntags).ok_or_else(|| lines.err(l, "short triangle line"))?;
                        raw_triangles.push((l, [ids[0], ids[1], ids[2]]));
                    }
                }
                expect_end(&mut lines, "$EndElements")?;
            }
            other if other.starts_with('$') && !other.starts_with("$End") => {
                let end = format!("$End{}", &other[1..]);
                loop {
                    let (_, l) = lines.next_line(&end)?;
                    if l == end {
                        break;
                    }
                }
            }
            other => return Err(lines.err(line, format!("unexpected line '{other}'"))),
        }
    }
    if !saw_format {
        return Err(lines.err(1, "missing $MeshFormat section"));
    }
    let mut used: Vec<usize> = raw_triangles.iter().flat_map(|(_, t)| *t).collect();
    used.sort_unstable();
    used.dedup();
    let mut index = HashMap::with_capacity(used.len());
    let mut vertices = Vec::with_capacity(used.len());
    for id in node_order.iter().filter(|id| used.binary_search(id).is_ok()) {
        if !index.contains_key(id) {
            index.insert(*id, vertices.len());
            vertices.push(nodes[id]);
        }
    }
    let mut triangles = Vec::with_capacity(raw_triangles.len());
    for (l, t) in raw_triangles {
        let mut tri = [0; 3];
        for (k, id) in t.iter().enumerate() {
            tri[k] = *index
                .get(id)
                .ok_or_else(|| lines.err(l, format!("triangle references unknown node {id}")))?;
        }
        triangles.push(tri);
    }
    TriMesh::new(vertices, triangles)
}

fn expect_end(lines: &mut Lines<'_>, end: &str) -> Result<()> {
    let (l, text) = lines.next_line(end)?;
    if text != end {
        return Err(lines.err(l, format!("expected {end}, found '{text}'")));
    }
    Ok(())
}
