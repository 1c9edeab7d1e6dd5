//! Triangulated disk mesh for P1 finite elements.
//!
//! The mesh covers the extended disk `M1` with concentric rings of nodes so
//! that both boundary circles (of `M` and of `M1`) are exact node rings. The
//! boundary nodes of `M` are uniformly spaced in angle, which lets boundary
//! Sobolev norms be evaluated by Fourier multipliers.

use crate::geometry::{Metric, Point};

#[derive(Debug, Clone)]
pub struct Triangle {
    pub v: [usize; 3],
    /// Euclidean area (orientation-normalized positive).
    pub area: f64,
    /// Barycentric gradients: `grad[k]` is the Cartesian gradient of the hat
    /// function of vertex `k` on this triangle.
    pub grad: [[f64; 2]; 3],
    /// sqrt(det g) at the centroid.
    pub sqrt_det_g: f64,
    /// Inverse metric at the centroid.
    pub g_inv: [[f64; 2]; 2],
    pub centroid: Point,
    /// True if all three vertices lie in the closed inner disk `M`.
    pub in_m: bool,
}

impl Triangle {
    /// Riemannian area element integrated over the triangle (1-point rule).
    pub fn riemannian_area(&self) -> f64 {
        self.area * self.sqrt_det_g
    }
}

#[derive(Debug, Clone)]
pub struct DiskMesh {
    pub nodes: Vec<Point>,
    pub triangles: Vec<Triangle>,
    /// Ring index of each node (0 = center).
    pub ring_of: Vec<usize>,
    /// Ring spacing.
    pub dr: f64,
    /// Index of the ring that is the boundary of `M`.
    pub ring_m: usize,
    /// Number of rings (outermost ring index; boundary of `M1`).
    pub ring_m1: usize,
    /// Boundary nodes of `M`, ordered by increasing angle.
    pub boundary_m: Vec<usize>,
    /// Boundary nodes of `M1`, ordered by increasing angle.
    pub boundary_m1: Vec<usize>,
    /// Nodes with ring < ring_m (strict interior of `M`).
    pub interior_m: Vec<usize>,
    /// Nodes with ring <= ring_m (closed `M`).
    pub nodes_m: Vec<usize>,
    /// Lumped Riemannian mass per node over the full mesh (M1).
    pub lumped_m1: Vec<f64>,
    /// Lumped Riemannian mass per node over `M` only.
    pub lumped_m: Vec<f64>,
    /// Riemannian arc-length weight per boundary node of `M` (1D lumped mass).
    pub boundary_weight_m: Vec<f64>,
    /// Same for the boundary of `M1`.
    pub boundary_weight_m1: Vec<f64>,
    /// Map node -> position in `interior_m` (usize::MAX if not interior).
    pub interior_index: Vec<usize>,
    /// Map node -> position in `boundary_m` (usize::MAX otherwise).
    pub boundary_index: Vec<usize>,
    /// Radii of the rings.
    pub radius_m: f64,
    pub radius_m1: f64,
    bins: Bins,
}

#[derive(Debug, Clone)]
struct Bins {
    n: usize,
    half_extent: f64,
    cells: Vec<Vec<u32>>,
}

impl Bins {
    fn cell_of(&self, x: Point) -> Option<usize> {
        let u = ((x[0] + self.half_extent) / (2.0 * self.half_extent) * self.n as f64).floor();
        let v = ((x[1] + self.half_extent) / (2.0 * self.half_extent) * self.n as f64).floor();
        if u < 0.0 || v < 0.0 || u >= self.n as f64 || v >= self.n as f64 {
            return None;
        }
        Some(v as usize * self.n + u as usize)
    }
}

impl DiskMesh {
    /// Build the standard mesh with `n_rings` rings out to `radius_m1`.
    /// `n_rings * radius_m / radius_m1` must be an integer (the ring of the
    /// inner boundary).
    pub fn standard(n_rings: usize, metric: &Metric) -> Self {
        let r1 = metric.radius_m1;
        let rm = metric.radius_m;
        let dr = r1 / n_rings as f64;
        let ring_m_f = rm / dr;
        let ring_m = ring_m_f.round() as usize;
        assert!(
            (ring_m_f - ring_m as f64).abs() < 1e-9,
            "n_rings must place a node ring exactly on the boundary of M"
        );

        let mut nodes: Vec<Point> = vec![[0.0, 0.0]];
        let mut ring_of = vec![0usize];
        let mut ring_start = vec![0usize; n_rings + 1];
        for i in 1..=n_rings {
            ring_start[i] = nodes.len();
            let count = 6 * i;
            let r = i as f64 * dr;
            for k in 0..count {
                let phi = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                nodes.push([r * phi.cos(), r * phi.sin()]);
                ring_of.push(i);
            }
        }

        let mut tri_indices: Vec<[usize; 3]> = Vec::new();
        // Center fan.
        for k in 0..6 {
            tri_indices.push([0, ring_start[1] + k, ring_start[1] + (k + 1) % 6]);
        }
        // Annuli: merge-by-angle triangulation between ring i and i+1.
        for i in 1..n_rings {
            let n0 = 6 * i;
            let n1 = 6 * (i + 1);
            let s0 = ring_start[i];
            let s1 = ring_start[i + 1];
            let mut a = 0usize;
            let mut b = 0usize;
            while a < n0 || b < n1 {
                let next_a = (a + 1) as f64 / n0 as f64;
                let next_b = (b + 1) as f64 / n1 as f64;
                if a < n0 && (b == n1 || next_a <= next_b) {
                    tri_indices.push([s0 + a % n0, s1 + b % n1, s0 + (a + 1) % n0]);
                    a += 1;
                } else {
                    tri_indices.push([s0 + a % n0, s1 + b % n1, s1 + (b + 1) % n1]);
                    b += 1;
                }
            }
        }

        let mut triangles = Vec::with_capacity(tri_indices.len());
        for mut v in tri_indices {
            let signed = signed_area(&nodes[v[0]], &nodes[v[1]], &nodes[v[2]]);
            if signed < 0.0 {
                v.swap(1, 2);
            }
            let p = [nodes[v[0]], nodes[v[1]], nodes[v[2]]];
            let area = signed.abs();
            let centroid = [
                (p[0][0] + p[1][0] + p[2][0]) / 3.0,
                (p[0][1] + p[1][1] + p[2][1]) / 3.0,
            ];
            // Hat gradients: grad N_k = rot(edge opposite k) / (2 area).
            let mut grad = [[0.0; 2]; 3];
            for k in 0..3 {
                let pa = p[(k + 1) % 3];
                let pb = p[(k + 2) % 3];
                grad[k] = [(pa[1] - pb[1]) / (2.0 * area), (pb[0] - pa[0]) / (2.0 * area)];
            }
            let in_m = v
                .iter()
                .all(|&idx| ring_of[idx] <= ring_m);
            triangles.push(Triangle {
                v,
                area,
                grad,
                sqrt_det_g: metric.sqrt_det_g(centroid),
                g_inv: metric.g_inv(centroid),
                centroid,
                in_m,
            });
        }

        let n = nodes.len();
        let mut lumped_m1 = vec![0.0; n];
        let mut lumped_m = vec![0.0; n];
        for t in &triangles {
            let w = t.riemannian_area() / 3.0;
            for &idx in &t.v {
                lumped_m1[idx] += w;
                if t.in_m {
                    lumped_m[idx] += w;
                }
            }
        }

        let boundary_m: Vec<usize> =
            (ring_start[ring_m]..ring_start[ring_m] + 6 * ring_m).collect();
        let boundary_m1: Vec<usize> = (ring_start[n_rings]..ring_start[n_rings] + 6 * n_rings)
            .collect();
        let interior_m: Vec<usize> = (0..n).filter(|&i| ring_of[i] < ring_m).collect();
        let nodes_m: Vec<usize> = (0..n).filter(|&i| ring_of[i] <= ring_m).collect();

        let boundary_weight = |ring_nodes: &[usize]| -> Vec<f64> {
            let nb = ring_nodes.len();
            let mut w = vec![0.0; nb];
            for k in 0..nb {
                let a = nodes[ring_nodes[k]];
                let b = nodes[ring_nodes[(k + 1) % nb]];
                let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
                let dx = [b[0] - a[0], b[1] - a[1]];
                let len = metric.inner(mid, dx, dx).sqrt();
                w[k] += 0.5 * len;
                w[(k + 1) % nb] += 0.5 * len;
            }
            w
        };
        let boundary_weight_m = boundary_weight(&boundary_m);
        let boundary_weight_m1 = boundary_weight(&boundary_m1);

        let mut interior_index = vec![usize::MAX; n];
        for (k, &i) in interior_m.iter().enumerate() {
            interior_index[i] = k;
        }
        let mut boundary_index = vec![usize::MAX; n];
        for (k, &i) in boundary_m.iter().enumerate() {
            boundary_index[i] = k;
        }

        // Spatial bins for point location.
        let nb = (2 * n_rings).max(8);
        let half_extent = r1 * 1.0001;
        let mut cells = vec![Vec::new(); nb * nb];
        let bins = Bins {
            n: nb,
            half_extent,
            cells: Vec::new(),
        };
        for (ti, t) in triangles.iter().enumerate() {
            let xs = [nodes[t.v[0]], nodes[t.v[1]], nodes[t.v[2]]];
            let min_x = xs.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let max_x = xs.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            let min_y = xs.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
            let max_y = xs.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
            let to_cell = |x: f64| {
                (((x + half_extent) / (2.0 * half_extent) * nb as f64).floor() as i64)
                    .clamp(0, nb as i64 - 1) as usize
            };
            for cy in to_cell(min_y)..=to_cell(max_y) {
                for cx in to_cell(min_x)..=to_cell(max_x) {
                    cells[cy * nb + cx].push(ti as u32);
                }
            }
        }
        let bins = Bins { cells, ..bins };

        DiskMesh {
            nodes,
            triangles,
            ring_of,
            dr,
            ring_m,
            ring_m1: n_rings,
            boundary_m,
            boundary_m1,
            interior_m,
            nodes_m,
            lumped_m1,
            lumped_m,
            boundary_weight_m,
            boundary_weight_m1,
            interior_index,
            boundary_index,
            radius_m: rm,
            radius_m1: r1,
            bins,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Typical element size.
    pub fn h(&self) -> f64 {
        self.dr
    }

    /// Angle of boundary node `k` of `M` (they are uniform in angle).
    pub fn boundary_angle_m(&self, k: usize) -> f64 {
        2.0 * std::f64::consts::PI * k as f64 / self.boundary_m.len() as f64
    }

    /// Locate the triangle containing `x`; returns (triangle index,
    /// barycentric coordinates). Points slightly outside snap to the nearest
    /// triangle edge if within `1e-9`.
    pub fn locate(&self, x: Point) -> Option<(usize, [f64; 3])> {
        let cell = self.bins.cell_of(x)?;
        let mut best: Option<(usize, [f64; 3])> = None;
        let mut best_neg = f64::NEG_INFINITY;
        for &ti in &self.bins.cells[cell] {
            let t = &self.triangles[ti as usize];
            let b = self.barycentric(ti as usize, x);
            let min_b = b[0].min(b[1]).min(b[2]);
            if min_b >= -1e-12 {
                return Some((ti as usize, b));
            }
            if min_b > best_neg {
                best_neg = min_b;
                best = Some((ti as usize, b));
            }
            let _ = t;
        }
        if best_neg > -1e-9 {
            return best.map(|(ti, b)| {
                let mut b = b;
                for v in &mut b {
                    *v = v.max(0.0);
                }
                let s: f64 = b.iter().sum();
                for v in &mut b {
                    *v /= s;
                }
                (ti, b)
            });
        }
        None
    }

    pub fn barycentric(&self, tri: usize, x: Point) -> [f64; 3] {
        let t = &self.triangles[tri];
        let p = [
            self.nodes[t.v[0]],
            self.nodes[t.v[1]],
            self.nodes[t.v[2]],
        ];
        let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
            - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        let l1 = ((p[1][0] - x[0]) * (p[2][1] - x[1]) - (p[2][0] - x[0]) * (p[1][1] - x[1])) / det;
        let l2 = ((p[2][0] - x[0]) * (p[0][1] - x[1]) - (p[0][0] - x[0]) * (p[2][1] - x[1])) / det;
        [l1, l2, 1.0 - l1 - l2]
    }

    /// P1 interpolation of nodal values at `x`; `None` outside the mesh.
    pub fn interp(&self, values: &[f64], x: Point) -> Option<f64> {
        let (ti, b) = self.locate(x)?;
        let t = &self.triangles[ti];
        Some(b[0] * values[t.v[0]] + b[1] * values[t.v[1]] + b[2] * values[t.v[2]])
    }
}

fn signed_area(a: &Point, b: &Point, c: &Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}
