//! Delaunay triangulation of small point sets, barycentric coordinates, projection onto the
//! convex hull, and piecewise-linear interpolation.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::demos;

/// Barycentric coordinates down to `-LOCATE_TOLERANCE` count as inside.
pub const LOCATE_TOLERANCE: f64 = 1e-9;
/// Relative tolerance under which a point is treated as lying on a circumsphere.
const SPHERE_TOLERANCE: f64 = 1e-10;
/// Smallest accepted singular value of an edge matrix, relative to the largest.
const DEGENERACY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriangulationKind {
    Delaunay,
    UserSupplied,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simplex {
    pub vertex_indices: Vec<usize>,
    pub circumcenter: DVector<f64>,
    pub circumradius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triangulation {
    pub points: Vec<DVector<f64>>,
    pub simplices: Vec<Simplex>,
    pub kind: TriangulationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangulationFile {
    pub points: Vec<Vec<f64>>,
    pub simplices: Vec<Vec<usize>>,
    pub kind: TriangulationKind,
}

fn edge_matrix(vertices: &[&DVector<f64>]) -> DMatrix<f64> {
    let n = vertices[0].len();
    let mut e = DMatrix::zeros(n, vertices.len() - 1);
    for (j, v) in vertices[1..].iter().enumerate() {
        e.set_column(j, &(*v - vertices[0]));
    }
    e
}

fn is_degenerate(e: &DMatrix<f64>) -> bool {
    if e.ncols() == 0 {
        return false;
    }
    let s = e.clone().svd(false, false).singular_values;
    let (hi, lo) = (s.max(), s.min());
    !(lo > DEGENERACY_TOLERANCE * hi)
}

fn check_simplex(vertices: &[&DVector<f64>]) -> Result<DMatrix<f64>> {
    let n = vertices.first().map_or(0, |v| v.len());
    if n == 0 || vertices.len() != n + 1 || vertices.iter().any(|v| v.len() != n) {
        return Err(Error::InvalidDimension(format!(
            "{} vertices do not form a simplex in R^{n}",
            vertices.len()
        )));
    }
    let e = edge_matrix(vertices);
    if is_degenerate(&e) {
        return Err(Error::Degenerate("simplex vertices are affinely dependent".into()));
    }
    Ok(e)
}

/// Center and radius of the sphere through `n + 1` affinely independent points of `R^n`.
pub fn circumsphere(vertices: &[&DVector<f64>]) -> Result<(DVector<f64>, f64)> {
    let e = check_simplex(vertices)?;
    // 2 (x_i - x_0) . (c - x_0) = |x_i - x_0|^2
    let rhs = DVector::from_iterator(e.ncols(), e.column_iter().map(|c| c.norm_squared()));
    let y = (e.transpose() * 2.0)
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Degenerate("singular circumsphere system".into()))?;
    let radius = y.norm();
    Ok((vertices[0] + y, radius))
}

/// Affine coordinates of `xi`: `sum theta = 1`, `sum theta_i x_i = xi`. Entries may be
/// negative outside the simplex.
pub fn barycentric(vertices: &[&DVector<f64>], xi: &DVector<f64>) -> Result<DVector<f64>> {
    let e = check_simplex(vertices)?;
    let lambda = e
        .lu()
        .solve(&(xi - vertices[0]))
        .ok_or_else(|| Error::Degenerate("singular barycentric system".into()))?;
    let mut theta = DVector::zeros(lambda.len() + 1);
    theta[0] = 1.0 - lambda.sum();
    theta.rows_mut(1, lambda.len()).copy_from(&lambda);
    Ok(theta)
}

fn combinations(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > m {
        return out;
    }
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        out.push(c.clone());
        let Some(i) = (0..k).rev().find(|&i| c[i] != i + m - k) else {
            return out;
        };
        c[i] += 1;
        for j in i + 1..k {
            c[j] = c[j - 1] + 1;
        }
    }
}

/// Whether `q` lies inside the circumsphere of `simplex` after an infinitesimal lowering of the
/// lifted heights `|p_i|^2 - d_i` with `d_0 >> d_1 >> ...`. Exact ties are decided by the
/// lowest index among `q` and the simplex vertices with a nonzero coefficient, which yields a
/// valid (regular) triangulation and prefers low-index vertices.
fn in_perturbed_sphere(
    points: &[DVector<f64>],
    simplex: &[usize],
    center: &DVector<f64>,
    radius: f64,
    q: usize,
) -> Result<bool> {
    let d = (&points[q] - center).norm_squared() - radius * radius;
    let scale = radius * radius + (&points[q] - center).norm_squared();
    if d < -SPHERE_TOLERANCE * scale {
        return Ok(true);
    }
    if d > SPHERE_TOLERANCE * scale {
        return Ok(false);
    }
    let verts: Vec<&DVector<f64>> = simplex.iter().map(|&i| &points[i]).collect();
    let beta = barycentric(&verts, &points[q])?;
    let mut coeffs: Vec<(usize, f64)> = simplex
        .iter()
        .zip(beta.iter())
        .map(|(&i, &b)| (i, -b))
        .collect();
    coeffs.push((q, 1.0));
    coeffs.sort_by_key(|&(i, _)| i);
    let decisive = coeffs
        .iter()
        .find(|(_, c)| c.abs() > 1e-12)
        .map_or(0.0, |&(_, c)| c);
    Ok(decisive > 0.0)
}

fn check_points(points: &[DVector<f64>]) -> Result<usize> {
    let n = points.first().map_or(0, |p| p.len());
    if n == 0 || points.iter().any(|p| p.len() != n) {
        return Err(Error::InvalidDimension("points must share a positive dimension".into()));
    }
    if points.len() < n + 1 {
        return Err(Error::Degenerate(format!(
            "{} points cannot span R^{n}",
            points.len()
        )));
    }
    if points.iter().any(|p| p.iter().any(|c| !c.is_finite())) {
        return Err(Error::Degenerate("non-finite coordinates".into()));
    }
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if (&points[i] - &points[j]).norm() == 0.0 {
                return Err(Error::Degenerate(format!("points {i} and {j} coincide")));
            }
        }
    }
    let refs: Vec<&DVector<f64>> = points.iter().collect();
    let e = edge_matrix(&refs);
    let s = e.svd(false, false).singular_values;
    let mut sorted: Vec<f64> = s.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted.len() < n || !(sorted[n - 1] > DEGENERACY_TOLERANCE * sorted[0]) {
        return Err(Error::Degenerate("points lie on a common hyperplane".into()));
    }
    Ok(n)
}

/// Brute-force Delaunay triangulation: every `(n + 1)`-subset whose circumsphere contains no
/// other point is kept. Cost is `C(M, n + 1) * M` sphere tests.
pub fn delaunay(points: &[DVector<f64>]) -> Result<Triangulation> {
    let n = check_points(points)?;
    let mut simplices = Vec::new();
    for subset in combinations(points.len(), n + 1) {
        let verts: Vec<&DVector<f64>> = subset.iter().map(|&i| &points[i]).collect();
        let Ok((center, radius)) = circumsphere(&verts) else {
            continue;
        };
        let mut empty = true;
        for q in (0..points.len()).filter(|q| !subset.contains(q)) {
            if in_perturbed_sphere(points, &subset, &center, radius, q)? {
                empty = false;
                break;
            }
        }
        if empty {
            simplices.push(Simplex {
                vertex_indices: subset,
                circumcenter: center,
                circumradius: radius,
            });
        }
    }
    let tri = Triangulation {
        points: points.to_vec(),
        simplices,
        kind: TriangulationKind::Delaunay,
    };
    tri.check_tiling()?;
    Ok(tri)
}

/// Euclidean projection onto the convex hull of a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct HullProjection {
    pub point: DVector<f64>,
    /// Convex weights over all input points.
    pub weights: DVector<f64>,
}

/// Minimum-norm point of `conv{p_i - xi}` by Wolfe's active-set method, shifted back by `xi`
/// and certified by `(xi - xi*)^T (y - xi*) <= tol` at every point `y`.
pub fn project_to_hull(points: &[DVector<f64>], xi: &DVector<f64>) -> Result<HullProjection> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no points to project onto".into()));
    }
    if points.iter().any(|p| p.len() != xi.len()) {
        return Err(Error::InvalidDimension("point dimensions disagree".into()));
    }
    let p: Vec<DVector<f64>> = points.iter().map(|q| q - xi).collect();
    let scale = p.iter().map(|q| q.norm_squared()).fold(0.0, f64::max).max(1e-300);
    let tol = 1e-12 * scale;

    let start = (0..p.len())
        .min_by(|&a, &b| p[a].norm_squared().total_cmp(&p[b].norm_squared()))
        .unwrap();
    let mut active = vec![start];
    let mut lambda = vec![1.0];
    let mut x = p[start].clone();

    for _ in 0..(50 * p.len() + 100) {
        let (j, best) = (0..p.len())
            .map(|i| (i, x.dot(&p[i])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if best >= x.norm_squared() - tol || active.contains(&j) {
            break;
        }
        active.push(j);
        lambda.push(0.0);
        loop {
            let mu = affine_min_norm(&p, &active)?;
            if mu.iter().all(|&m| m > 1e-14) {
                lambda = mu;
                break;
            }
            let mut step = 1.0_f64;
            for (l, m) in lambda.iter().zip(&mu) {
                if *m <= 1e-14 && l - m > 0.0 {
                    step = step.min(l / (l - m));
                }
            }
            for (l, m) in lambda.iter_mut().zip(&mu) {
                *l = (1.0 - step) * *l + step * m;
            }
            let keep: Vec<bool> = lambda.iter().map(|&l| l > 1e-14).collect();
            active = active.iter().zip(&keep).filter(|(_, k)| **k).map(|(i, _)| *i).collect();
            lambda = lambda.iter().zip(&keep).filter(|(_, k)| **k).map(|(l, _)| *l).collect();
            let total: f64 = lambda.iter().sum();
            lambda.iter_mut().for_each(|l| *l /= total);
            if active.len() <= 1 {
                break;
            }
        }
        x = active
            .iter()
            .zip(&lambda)
            .fold(DVector::zeros(xi.len()), |acc, (&i, &l)| acc + &p[i] * l);
    }

    let mut weights = DVector::zeros(points.len());
    for (&i, &l) in active.iter().zip(&lambda) {
        weights[i] = l;
    }
    let point = xi + &x;
    let violation = p
        .iter()
        .map(|q| -x.dot(&(q - &x)))
        .fold(f64::NEG_INFINITY, f64::max);
    if violation > 1e-9 * scale.sqrt() * (1.0 + x.norm()) {
        return Err(Error::Numerical(format!(
            "hull projection failed its optimality check by {violation:e}"
        )));
    }
    Ok(HullProjection { point, weights })
}

/// Affine minimizer of `|sum mu_i p_i|` over `sum mu_i = 1` on the active set, as the least
/// squares problem `min |p_0 + D c|` with `D = [p_i - p_0]` and `mu = (1 - sum c, c)`.
fn affine_min_norm(p: &[DVector<f64>], active: &[usize]) -> Result<Vec<f64>> {
    let k = active.len();
    let base = &p[active[0]];
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let d = DMatrix::from_columns(&active[1..].iter().map(|&i| &p[i] - base).collect::<Vec<_>>());
    let svd = d.svd(true, true);
    let cutoff = 1e-12 * svd.singular_values.max();
    let c = svd.solve(&-base, cutoff).map_err(|e| Error::Numerical(e.into()))?;
    let mut mu = Vec::with_capacity(k);
    mu.push(1.0 - c.sum());
    mu.extend(c.iter().copied());
    Ok(mu)
}

impl Triangulation {
    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Accepts an explicit simplex list (for comparisons against other triangulations).
    pub fn from_simplices(points: &[DVector<f64>], simplices: &[Vec<usize>]) -> Result<Self> {
        let n = check_points(points)?;
        let mut out = Vec::with_capacity(simplices.len());
        for s in simplices {
            if s.len() != n + 1 || s.iter().any(|&i| i >= points.len()) {
                return Err(Error::InvalidArgument(format!("bad simplex {s:?}")));
            }
            let verts: Vec<&DVector<f64>> = s.iter().map(|&i| &points[i]).collect();
            let (c, r) = circumsphere(&verts)?;
            out.push(Simplex {
                vertex_indices: s.clone(),
                circumcenter: c,
                circumradius: r,
            });
        }
        Ok(Self {
            points: points.to_vec(),
            simplices: out,
            kind: TriangulationKind::UserSupplied,
        })
    }

    pub fn vertices(&self, simplex: usize) -> Vec<&DVector<f64>> {
        self.simplices[simplex]
            .vertex_indices
            .iter()
            .map(|&i| &self.points[i])
            .collect()
    }

    /// Every facet is either shared by exactly two simplices lying on opposite sides, or is a
    /// hull facet with all points on one side.
    pub fn check_tiling(&self) -> Result<()> {
        if self.simplices.is_empty() {
            return Err(Error::Degenerate("no simplices".into()));
        }
        let mut facets: HashMap<Vec<usize>, Vec<(usize, usize)>> = HashMap::new();
        for (s, simplex) in self.simplices.iter().enumerate() {
            for (drop, &opposite) in simplex.vertex_indices.iter().enumerate() {
                let mut f = simplex.vertex_indices.clone();
                f.remove(drop);
                facets.entry(f).or_default().push((s, opposite));
            }
        }
        for (facet, owners) in &facets {
            let side = |q: usize| self.facet_side(facet, owners[0].1, q);
            match owners.as_slice() {
                [(_, _)] => {
                    if (0..self.points.len()).any(|q| side(q) < -1e-9) {
                        return Err(Error::Numerical(format!(
                            "facet {facet:?} is neither shared nor on the hull"
                        )));
                    }
                }
                [(_, _), (_, b)] => {
                    if side(*b) >= -1e-12 {
                        return Err(Error::Numerical(format!(
                            "simplices on facet {facet:?} overlap"
                        )));
                    }
                }
                _ => {
                    return Err(Error::Numerical(format!(
                        "facet {facet:?} is shared by {} simplices",
                        owners.len()
                    )))
                }
            }
        }
        Ok(())
    }

    /// Signed position of point `q` relative to the hyperplane of `facet`, positive on the side
    /// of `reference`.
    fn facet_side(&self, facet: &[usize], reference: usize, q: usize) -> f64 {
        let mut verts: Vec<&DVector<f64>> = facet.iter().map(|&i| &self.points[i]).collect();
        verts.push(&self.points[reference]);
        match barycentric(&verts, &self.points[q]) {
            Ok(theta) => theta[theta.len() - 1],
            Err(_) => 0.0,
        }
    }

    /// First simplex whose barycentric coordinates of `xi` are all `>= -1e-9`.
    pub fn locate(&self, xi: &DVector<f64>) -> Option<usize> {
        (0..self.simplices.len()).find(|&s| {
            barycentric(&self.vertices(s), xi)
                .map(|theta| theta.iter().all(|&t| t >= -LOCATE_TOLERANCE))
                .unwrap_or(false)
        })
    }

    /// Barycentric coordinates of `xi` in simplex `s`.
    pub fn barycentric_in(&self, s: usize, xi: &DVector<f64>) -> Result<DVector<f64>> {
        barycentric(&self.vertices(s), xi)
    }

    pub fn to_file(&self) -> TriangulationFile {
        TriangulationFile {
            points: demos::vectors_to_rows(&self.points),
            simplices: self.simplices.iter().map(|s| s.vertex_indices.clone()).collect(),
            kind: self.kind,
        }
    }

    pub fn from_file(file: &TriangulationFile) -> Result<Self> {
        let points = demos::rows_to_vectors(&file.points);
        let mut tri = Self::from_simplices(&points, &file.simplices)?;
        tri.kind = file.kind;
        Ok(tri)
    }
}

/// `sum theta_i y_i` over the simplex containing `x`.
pub fn pl_interpolate(
    tri: &Triangulation,
    values: &[DVector<f64>],
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    if values.len() != tri.points.len() {
        return Err(Error::InvalidDimension(format!(
            "{} values for {} points",
            values.len(),
            tri.points.len()
        )));
    }
    let s = tri.locate(x).ok_or(Error::NotInHull)?;
    let theta = tri.barycentric_in(s, x)?;
    let mut out = DVector::zeros(values[0].len());
    for (&i, &t) in tri.simplices[s].vertex_indices.iter().zip(theta.iter()) {
        out += &values[i] * t;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn square() -> Vec<DVector<f64>> {
        vec![v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[0.9, 0.9])]
    }

    fn sorted(tri: &Triangulation) -> Vec<Vec<usize>> {
        let mut s: Vec<Vec<usize>> = tri.simplices.iter().map(|s| s.vertex_indices.clone()).collect();
        s.sort();
        s
    }

    #[test]
    fn right_triangle_circumsphere() {
        let pts = [v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        let (c, r) = circumsphere(&pts.iter().collect::<Vec<_>>()).unwrap();
        assert!((c - v(&[0.5, 0.5])).norm() < 1e-15);
        assert!((r - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn segment_circumsphere_is_midpoint() {
        let pts = [v(&[0.0]), v(&[2.0])];
        let (c, r) = circumsphere(&pts.iter().collect::<Vec<_>>()).unwrap();
        assert_eq!(c[0], 1.0);
        assert_eq!(r, 1.0);
    }

    #[test]
    fn regular_simplex_is_centered() {
        let s3 = 3f64.sqrt();
        let pts = [v(&[1.0, 0.0]), v(&[-0.5, s3 / 2.0]), v(&[-0.5, -s3 / 2.0])];
        let (c, r) = circumsphere(&pts.iter().collect::<Vec<_>>()).unwrap();
        assert!(c.norm() < 1e-15);
        assert!((r - 1.0).abs() < 1e-15);
        let collinear = [v(&[0.0, 0.0]), v(&[1.0, 1.0]), v(&[2.0, 2.0])];
        assert!(circumsphere(&collinear.iter().collect::<Vec<_>>()).is_err());
    }

    #[test]
    fn barycentric_examples() {
        let pts = [v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        let refs: Vec<&DVector<f64>> = pts.iter().collect();
        let theta = barycentric(&refs, &v(&[0.25, 0.25])).unwrap();
        assert!((theta - v(&[0.5, 0.25, 0.25])).norm() < 1e-15);
        assert_eq!(barycentric(&refs, &pts[1]).unwrap(), v(&[0.0, 1.0, 0.0]));
        let centroid = v(&[1.0 / 3.0, 1.0 / 3.0]);
        let theta = barycentric(&refs, &centroid).unwrap();
        assert!(theta.iter().all(|t| (t - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn single_simplex_from_minimal_sets() {
        let tri = delaunay(&[v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.3, 2.0])]).unwrap();
        assert_eq!(tri.simplices.len(), 1);
        let pts: Vec<DVector<f64>> = (0..5)
            .map(|i| DVector::from_fn(4, |j, _| if j + 1 == i { 1.0 } else { 0.0 }))
            .collect();
        assert_eq!(delaunay(&pts).unwrap().simplices.len(), 1);
    }

    #[test]
    fn square_fixture_uses_the_short_diagonal() {
        let tri = delaunay(&square()).unwrap();
        assert_eq!(sorted(&tri), vec![vec![0, 1, 3], vec![0, 2, 3]]);
    }

    #[test]
    fn cospherical_square_is_tiled_deterministically() {
        let pts = vec![v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[1.0, 1.0]), v(&[0.0, 1.0])];
        let tri = delaunay(&pts).unwrap();
        assert_eq!(sorted(&tri), vec![vec![0, 1, 2], vec![0, 2, 3]]);
        let cube: Vec<DVector<f64>> = (0..8)
            .map(|i| v(&[(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]))
            .collect();
        let tri = delaunay(&cube).unwrap();
        let vol: f64 = (0..tri.simplices.len())
            .map(|s| edge_matrix(&tri.vertices(s)).determinant().abs() / 6.0)
            .sum();
        assert!((vol - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts = vec![v(&[0.0, 0.0]), v(&[1.0, 1.0]), v(&[2.0, 2.0]), v(&[3.0, 3.0])];
        assert!(matches!(delaunay(&pts), Err(Error::Degenerate(_))));
    }

    #[test]
    fn locate_examples() {
        let tri = delaunay(&square()).unwrap();
        let s = tri.locate(&v(&[0.5, 0.1])).unwrap();
        let mut verts = tri.simplices[s].vertex_indices.clone();
        verts.sort();
        assert_eq!(verts, vec![0, 1, 3]);
        assert_eq!(tri.locate(&v(&[2.0, 2.0])), None);
        for (i, p) in tri.points.iter().enumerate() {
            let s = tri.locate(p).unwrap();
            assert!(tri.simplices[s].vertex_indices.contains(&i));
            let first = (0..tri.simplices.len())
                .find(|&k| tri.simplices[k].vertex_indices.contains(&i))
                .unwrap();
            assert_eq!(s, first);
        }
    }

    #[test]
    fn projection_examples() {
        let tri = [v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        let p = project_to_hull(&tri, &v(&[1.0, 1.0])).unwrap();
        assert!((p.point - v(&[0.5, 0.5])).norm() < 1e-12);
        let inside = v(&[0.2, 0.3]);
        let p = project_to_hull(&tri, &inside).unwrap();
        assert!((p.point - &inside).norm() < 1e-12);
        assert!((p.weights.sum() - 1.0).abs() < 1e-12);
        let single = [v(&[3.0, -1.0])];
        assert_eq!(project_to_hull(&single, &v(&[9.0, 9.0])).unwrap().point, single[0]);
        let p = project_to_hull(&square(), &v(&[2.0, 2.0])).unwrap();
        assert!((p.point - v(&[0.9, 0.9])).norm() < 1e-12);
    }

    #[test]
    fn projection_just_outside_an_edge() {
        let tri = [v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        for xi in [v(&[0.5285012921061689, -0.006135359625857539]), v(&[0.5150739468880681, -0.00982197947295127])] {
            let p = project_to_hull(&tri, &xi).unwrap();
            assert!((p.point - v(&[xi[0], 0.0])).norm() < 1e-14);
        }
    }

    #[test]
    fn pl_interpolation_examples() {
        let tri = delaunay(&square()).unwrap();
        let affine = |p: &DVector<f64>| v(&[2.0 * p[0] + 3.0 * p[1] + 1.0]);
        let values: Vec<DVector<f64>> = tri.points.iter().map(affine).collect();
        for x in [v(&[0.3, 0.3]), v(&[0.1, 0.8]), v(&[0.9, 0.9])] {
            let y = pl_interpolate(&tri, &values, &x).unwrap();
            assert!((y - affine(&x)).norm() < 1e-12);
        }
        assert!(matches!(
            pl_interpolate(&tri, &values, &v(&[2.0, 2.0])),
            Err(Error::NotInHull)
        ));
        // |x|^2 at (0.45, 0.45) from triangle {(0,0), (1,0), (0.9,0.9)}:
        // theta = (0.5, 0, 0.5) gives 0.5 * 1.62 = 0.81.
        let sq: Vec<DVector<f64>> = tri.points.iter().map(|p| v(&[p.norm_squared()])).collect();
        let y = pl_interpolate(&tri, &sq, &v(&[0.45, 0.45])).unwrap();
        assert!((y[0] - 0.81).abs() < 1e-12);
    }

    #[test]
    fn triangulation_file_round_trip() {
        let tri = delaunay(&square()).unwrap();
        let back = Triangulation::from_file(&tri.to_file()).unwrap();
        assert_eq!(back, tri);
    }
}
