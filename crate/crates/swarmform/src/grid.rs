//! Voxel occupancy maps, obstacle primitives, and Euclidean signed distance
//! fields with trilinear distance/gradient queries.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Clamp for distances in obstacle-free regions, meters.
pub const DEFAULT_D_FREE_MAX: f64 = 10.0;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("invalid obstacle primitive: {0}")]
    InvalidPrimitive(String),
    #[error("invalid map parameters: {0}")]
    InvalidParams(String),
}

/// Axis-aligned obstacle primitives. Cylinders are vertical (z axis),
/// `center` at the volumetric centroid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    Cylinder {
        center: Vector3<f64>,
        radius: f64,
        height: f64,
    },
    Aabb {
        min: Vector3<f64>,
        max: Vector3<f64>,
    },
}

impl Primitive {
    pub fn validate(&self) -> Result<(), MapError> {
        match self {
            Primitive::Sphere { radius, .. } if *radius <= 0.0 => {
                Err(MapError::InvalidPrimitive("sphere radius must be > 0".into()))
            }
            Primitive::Cylinder { radius, height, .. } if *radius <= 0.0 || *height <= 0.0 => Err(
                MapError::InvalidPrimitive("cylinder radius and height must be > 0".into()),
            ),
            Primitive::Aabb { min, max } if (0..3).any(|k| max[k] <= min[k]) => {
                Err(MapError::InvalidPrimitive("degenerate box".into()))
            }
            _ => Ok(()),
        }
    }

    /// Exact signed distance to the primitive surface (negative inside).
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Primitive::Sphere { center, radius } => (p - center).norm() - radius,
            Primitive::Cylinder {
                center,
                radius,
                height,
            } => {
                let dr = ((p.x - center.x).powi(2) + (p.y - center.y).powi(2)).sqrt() - radius;
                let dz = (p.z - center.z).abs() - height / 2.0;
                let outside = Vector3::new(dr.max(0.0), dz.max(0.0), 0.0).norm();
                outside + dr.max(dz).min(0.0)
            }
            Primitive::Aabb { min, max } => {
                let c = (min + max) / 2.0;
                let half = (max - min) / 2.0;
                let q = (p - c).abs() - half;
                let outside = q.map(|v| v.max(0.0)).norm();
                outside + q.max().min(0.0)
            }
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ObstacleSet {
    pub primitives: Vec<Primitive>,
}

impl ObstacleSet {
    pub fn validate(&self) -> Result<(), MapError> {
        self.primitives.iter().try_for_each(Primitive::validate)
    }

    /// Ground-truth signed distance to the nearest obstacle surface.
    /// Returns `f64::INFINITY` when the set is empty.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.primitives
            .iter()
            .map(|pr| pr.signed_distance(p))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Voxelized boolean occupancy grid.
#[derive(Debug, Clone)]
pub struct GridMap {
    pub origin: Vector3<f64>,
    pub resolution: f64,
    pub dims: [usize; 3],
    occupancy: Vec<bool>,
}

impl GridMap {
    pub fn new(origin: Vector3<f64>, resolution: f64, dims: [usize; 3]) -> Result<Self, MapError> {
        if resolution <= 0.0 {
            return Err(MapError::InvalidParams("resolution must be > 0".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(MapError::InvalidParams("dims must be >= 1".into()));
        }
        Ok(Self {
            origin,
            resolution,
            dims,
            occupancy: vec![false; dims[0] * dims[1] * dims[2]],
        })
    }

    #[inline]
    pub fn index(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    pub fn cell_count(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_occupied(&self, c: [usize; 3]) -> bool {
        self.occupancy[self.index(c)]
    }

    pub fn set_occupied(&mut self, c: [usize; 3], v: bool) {
        let i = self.index(c);
        self.occupancy[i] = v;
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    pub fn cell_center(&self, c: [usize; 3]) -> Vector3<f64> {
        Vector3::new(
            self.origin.x + (c[0] as f64 + 0.5) * self.resolution,
            self.origin.y + (c[1] as f64 + 0.5) * self.resolution,
            self.origin.z + (c[2] as f64 + 0.5) * self.resolution,
        )
    }

    /// Cell containing a world position, or `None` outside the grid.
    pub fn world_to_cell(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let mut c = [0usize; 3];
        for k in 0..3 {
            let u = (p[k] - self.origin[k]) / self.resolution;
            if u < 0.0 || u >= self.dims[k] as f64 {
                return None;
            }
            c[k] = u as usize;
        }
        Some(c)
    }

    /// Raw dump: dims header plus a row-major cell stream (`1` occupied).
    pub fn dump(&self) -> String {
        let mut s = format!("{} {} {}\n", self.dims[0], self.dims[1], self.dims[2]);
        for &o in &self.occupancy {
            s.push(if o { '1' } else { '0' });
        }
        s.push('\n');
        s
    }
}

/// Rasterize obstacle primitives into an occupancy grid. A cell is occupied
/// iff its center lies within `inflation` of (or inside) a primitive.
pub fn rasterize(
    obstacles: &ObstacleSet,
    origin: Vector3<f64>,
    resolution: f64,
    dims: [usize; 3],
    inflation: f64,
) -> Result<GridMap, MapError> {
    obstacles.validate()?;
    let mut map = GridMap::new(origin, resolution, dims)?;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = map.cell_center([x, y, z]);
                if obstacles.signed_distance(&p) <= inflation {
                    map.set_occupied([x, y, z], true);
                }
            }
        }
    }
    Ok(map)
}

/// Euclidean signed distance field over a grid; negative inside obstacles.
#[derive(Debug, Clone)]
pub struct Esdf {
    pub origin: Vector3<f64>,
    pub resolution: f64,
    pub dims: [usize; 3],
    pub d_free_max: f64,
    distance: Vec<f64>,
}

/// Felzenszwalb-Huttenlocher 1D squared distance transform. `v` and `z` are
/// caller-provided scratch buffers so hot loops avoid per-line allocation.
fn dt1d(f: &[f64], d: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    if n == 1 {
        d[0] = f[0];
        return;
    }
    v.clear();
    v.resize(n, 0);
    z.clear();
    z.resize(n + 1, 0.0);
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q] == f64::INFINITY && f[v[k]] == f64::INFINITY {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
}

/// Separable 3D squared distance transform of `seed` (cells with value 0).
/// Each axis pass runs its independent lines in parallel; the z pass works
/// on a z-major transposed copy so its lines are contiguous too.
fn edt3d(dims: [usize; 3], seeded: impl Fn([usize; 3]) -> bool + Sync) -> Vec<f64> {
    use rayon::prelude::*;

    let [nx, ny, nz] = dims;
    let mut g = vec![f64::INFINITY; nx * ny * nz];
    g.par_chunks_mut(nx).enumerate().for_each(|(row, line)| {
        let (z, y) = (row / ny, row % ny);
        for (x, cell) in line.iter_mut().enumerate() {
            if seeded([x, y, z]) {
                *cell = 0.0;
            }
        }
    });

    // x pass: lines are contiguous in memory.
    g.par_chunks_mut(nx).for_each_init(
        || (vec![0.0; nx], Vec::new(), Vec::new()),
        |(fin, v, z), line| {
            fin.copy_from_slice(line);
            dt1d(fin, line, v, z);
        },
    );

    // y pass: parallel over z slabs, strided gather/scatter within a slab.
    g.par_chunks_mut(nx * ny).for_each_init(
        || (vec![0.0; ny], vec![0.0; ny], Vec::new(), Vec::new()),
        |(fin, out, v, z), slab| {
            for x in 0..nx {
                for y in 0..ny {
                    fin[y] = slab[y * nx + x];
                }
                dt1d(fin, out, v, z);
                for y in 0..ny {
                    slab[y * nx + x] = out[y];
                }
            }
        },
    );

    // z pass: gather each z line into a transposed buffer, transform, and
    // scatter back.
    let mut t = vec![0.0f64; nx * ny * nz];
    {
        let g_ref = &g;
        t.par_chunks_mut(nz).enumerate().for_each_init(
            || (vec![0.0; nz], Vec::new(), Vec::new()),
            |(fin, v, zbuf), (line_id, line)| {
                let (y, x) = (line_id / nx, line_id % nx);
                for z in 0..nz {
                    fin[z] = g_ref[(z * ny + y) * nx + x];
                }
                dt1d(fin, line, v, zbuf);
            },
        );
    }
    {
        let t_ref = &t;
        g.par_chunks_mut(nx).enumerate().for_each(|(row, line)| {
            let (z, y) = (row / ny, row % ny);
            for (x, cell) in line.iter_mut().enumerate() {
                *cell = t_ref[(y * nx + x) * nz + z];
            }
        });
    }
    g
}

/// Build the signed distance field of a grid map. Free cells carry the
/// distance (cell-center to cell-center) to the nearest occupied cell,
/// clamped at `d_free_max`; occupied cells carry the negated distance to the
/// nearest free cell.
pub fn build_esdf(map: &GridMap, d_free_max: f64) -> Esdf {
    let dims = map.dims;
    let r = map.resolution;
    let to_occ = edt3d(dims, |c| map.is_occupied(c));
    let to_free = edt3d(dims, |c| !map.is_occupied(c));
    let mut distance = vec![0.0; map.cell_count()];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let i = map.index([x, y, z]);
                distance[i] = if map.is_occupied([x, y, z]) {
                    -(to_free[i].sqrt() * r).min(d_free_max)
                } else {
                    (to_occ[i].sqrt() * r).min(d_free_max)
                };
            }
        }
    }
    Esdf {
        origin: map.origin,
        resolution: r,
        dims,
        d_free_max,
        distance,
    }
}

impl Esdf {
    #[inline]
    fn cell(&self, c: [usize; 3]) -> f64 {
        self.distance[(c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]]
    }

    pub fn cell_distance(&self, c: [usize; 3]) -> f64 {
        self.cell(c)
    }

    /// Trilinearly interpolated distance and the analytic gradient of the
    /// interpolant. Positions outside the interpolation region are clamped
    /// to its border (border replication), so leaving the mapped volume
    /// never looks more attractive than the mapped border itself; clamped
    /// axes report a zero gradient component.
    pub fn query(&self, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut clamped = [false; 3];
        for k in 0..3 {
            let mut u = (p[k] - self.origin[k]) / self.resolution - 0.5;
            if !u.is_finite() {
                return (self.d_free_max, Vector3::zeros());
            }
            let max_u = (self.dims[k] - 1) as f64;
            if u <= 0.0 {
                u = 0.0;
                clamped[k] = true;
            } else if u >= max_u {
                u = max_u;
                clamped[k] = true;
            }
            let i = u.floor() as usize;
            base[k] = i.min(self.dims[k] - 2);
            frac[k] = u - base[k] as f64;
        }
        let mut corner = [[[0.0f64; 2]; 2]; 2];
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    corner[dz][dy][dx] =
                        self.cell([base[0] + dx, base[1] + dy, base[2] + dz]);
                }
            }
        }
        let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
        // Collapse z, then y, tracking the partials of the interpolant.
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(corner[0][0][0], corner[1][0][0], fz);
        let c01 = lerp(corner[0][0][1], corner[1][0][1], fz);
        let c10 = lerp(corner[0][1][0], corner[1][1][0], fz);
        let c11 = lerp(corner[0][1][1], corner[1][1][1], fz);
        let c0 = lerp(c00, c10, fy);
        let c1 = lerp(c01, c11, fy);
        let d = lerp(c0, c1, fx);

        let ddx = (c1 - c0) / self.resolution;
        let dz00 = corner[1][0][0] - corner[0][0][0];
        let dz01 = corner[1][0][1] - corner[0][0][1];
        let dz10 = corner[1][1][0] - corner[0][1][0];
        let dz11 = corner[1][1][1] - corner[0][1][1];
        let ddz = lerp(lerp(dz00, dz10, fy), lerp(dz01, dz11, fy), fx) / self.resolution;
        let dy0 = c10 - c00;
        let dy1 = c11 - c01;
        let ddy = lerp(dy0, dy1, fx) / self.resolution;

        let mut grad = Vector3::new(ddx, ddy, ddz);
        for k in 0..3 {
            if clamped[k] {
                grad[k] = 0.0;
            }
        }
        (d, grad)
    }
}

/// Brute-force O(n²) signed distance transform; the exhaustive oracle for
/// small grids.
pub fn brute_force_esdf(map: &GridMap, d_free_max: f64) -> Vec<f64> {
    let dims = map.dims;
    let r = map.resolution;
    let mut occupied = Vec::new();
    let mut free = Vec::new();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if map.is_occupied([x, y, z]) {
                    occupied.push([x, y, z]);
                } else {
                    free.push([x, y, z]);
                }
            }
        }
    }
    let dist = |a: [usize; 3], set: &[[usize; 3]]| -> f64 {
        set.iter()
            .map(|b| {
                let dx = a[0] as f64 - b[0] as f64;
                let dy = a[1] as f64 - b[1] as f64;
                let dz = a[2] as f64 - b[2] as f64;
                (dx * dx + dy * dy + dz * dz).sqrt() * r
            })
            .fold(f64::INFINITY, f64::min)
    };
    let mut out = vec![0.0; map.cell_count()];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let c = [x, y, z];
                let i = map.index(c);
                out[i] = if map.is_occupied(c) {
                    -dist(c, &free).min(d_free_max)
                } else {
                    dist(c, &occupied).min(d_free_max)
                };
            }
        }
    }
    out
}
