//! Uniform ground grids, discrete measures on them and density decompositions.

use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Relative mass below which a grid point is treated as outside the support.
pub const SUPPORT_THRESHOLD: f64 = 1e-15;

/// A point of the ambient box. One-dimensional points keep the second
/// coordinate at zero, so Euclidean distance needs no dimension argument.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point(pub [f64; 2]);

impl Point {
    pub fn d1(x: f64) -> Self {
        Point([x, 0.0])
    }

    pub fn d2(x: f64, y: f64) -> Self {
        Point([x, y])
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn dist(&self, other: &Point) -> f64 {
        let dx = self.0[0] - other.0[0];
        let dy = self.0[1] - other.0[1];
        dx.hypot(dy)
    }
}

/// Closed interval `[lo, hi]` of one grid axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }
}

/// Tensor grid with `n` equispaced points per axis, endpoints included.
/// Points are ordered with the first axis slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundGrid {
    dim: usize,
    bounds: Vec<Interval>,
    n: usize,
    points: Vec<Point>,
}

fn axis_coords(iv: Interval, n: usize) -> Vec<f64> {
    let h = (iv.hi - iv.lo) / (n - 1) as f64;
    (0..n)
        .map(|k| if k + 1 == n { iv.hi } else { iv.lo + k as f64 * h })
        .collect()
}

impl GroundGrid {
    /// Builds the uniform grid with `n` points per axis over `bounds`.
    pub fn new(dim: usize, bounds: &[Interval], n: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{1, 2}}")));
        }
        if bounds.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "{} bounds given for dimension {dim}",
                bounds.len()
            )));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 points per axis, got {n}")));
        }
        for iv in bounds {
            if !(iv.lo.is_finite() && iv.hi.is_finite() && iv.hi > iv.lo) {
                return Err(Error::InvalidGrid(format!(
                    "degenerate interval [{}, {}]",
                    iv.lo, iv.hi
                )));
            }
        }
        let xs = axis_coords(bounds[0], n);
        let points = if dim == 1 {
            xs.iter().map(|&x| Point::d1(x)).collect()
        } else {
            let ys = axis_coords(bounds[1], n);
            xs.iter()
                .flat_map(|&x| ys.iter().map(move |&y| Point::d2(x, y)))
                .collect()
        };
        Ok(GroundGrid {
            dim,
            bounds: bounds.to_vec(),
            n,
            points,
        })
    }

    /// One-dimensional shorthand for `GroundGrid::new(1, &[[lo, hi]], n)`.
    pub fn line(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(1, &[Interval::new(lo, hi)], n)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounds(&self) -> &[Interval] {
        &self.bounds
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Point {
        self.points[index]
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|iv| (iv.hi - iv.lo) / (self.n - 1) as f64)
            .collect()
    }

    fn nearest_axis(&self, axis: usize, coord: f64) -> (usize, f64) {
        let iv = self.bounds[axis];
        let h = (iv.hi - iv.lo) / (self.n - 1) as f64;
        // ties go to the lower index
        let pos = (((coord - iv.lo) / h).clamp(0.0, (self.n - 1) as f64) - 0.5)
            .ceil()
            .max(0.0) as usize;
        let snapped = if pos + 1 == self.n { iv.hi } else { iv.lo + pos as f64 * h };
        (pos, (coord - snapped).abs())
    }

    /// Nearest grid index and the per-axis snap distance (the largest over axes,
    /// in units of that axis' spacing).
    pub fn nearest(&self, p: Point) -> (usize, f64) {
        let h = self.spacing();
        let (ix, dx) = self.nearest_axis(0, p.x());
        if self.dim == 1 {
            return (ix, dx / h[0]);
        }
        let (iy, dy) = self.nearest_axis(1, p.y());
        (ix * self.n + iy, (dx / h[0]).max(dy / h[1]))
    }

    /// Clamps a point into the bounding box.
    pub fn clamp(&self, p: Point) -> Point {
        let mut c = p.0;
        for (axis, iv) in self.bounds.iter().enumerate() {
            c[axis] = c[axis].clamp(iv.lo, iv.hi);
        }
        Point(c)
    }
}

/// Nonnegative masses attached to the points of a shared grid (dense storage).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    grid: Arc<GroundGrid>,
    masses: Vec<f64>,
}

fn check_mass(m: f64) -> Result<()> {
    if m.is_finite() && m >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidMass(m))
    }
}

impl DiscreteMeasure {
    pub fn zero(grid: Arc<GroundGrid>) -> Self {
        let masses = vec![0.0; grid.len()];
        DiscreteMeasure { grid, masses }
    }

    pub fn from_dense(grid: Arc<GroundGrid>, masses: Vec<f64>) -> Result<Self> {
        if masses.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "{} masses for a grid of {} points",
                masses.len(),
                grid.len()
            )));
        }
        for &m in &masses {
            check_mass(m)?;
        }
        Ok(DiscreteMeasure { grid, masses })
    }

    /// Builds a measure from `(grid index, mass)` atoms. Indices must be distinct.
    pub fn from_atoms(grid: Arc<GroundGrid>, atoms: &[(usize, f64)]) -> Result<Self> {
        let mut masses = vec![0.0; grid.len()];
        let mut seen = vec![false; grid.len()];
        for &(i, m) in atoms {
            check_mass(m)?;
            if i >= grid.len() {
                return Err(Error::InvalidGrid(format!("atom index {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidGrid(format!("duplicate atom index {i}")));
            }
            masses[i] = m;
        }
        Ok(DiscreteMeasure { grid, masses })
    }

    /// Mass `m` at the grid point nearest to `p`.
    pub fn dirac(grid: Arc<GroundGrid>, p: Point, m: f64) -> Result<Self> {
        let (i, _) = grid.nearest(p);
        Self::from_atoms(grid, &[(i, m)])
    }

    /// Samples a Gaussian density on the grid and normalizes it to `mass`.
    pub fn gaussian(grid: Arc<GroundGrid>, mean: Point, std: f64, mass: f64) -> Result<Self> {
        if !(std > 0.0) {
            return Err(Error::InvalidMass(std));
        }
        check_mass(mass)?;
        let raw: Vec<f64> = grid
            .points()
            .iter()
            .map(|p| {
                let r = p.dist(&mean) / std;
                (-0.5 * r * r).exp()
            })
            .collect();
        let z: f64 = raw.iter().sum();
        let masses = raw.into_iter().map(|v| mass * v / z).collect();
        Ok(DiscreteMeasure { grid, masses })
    }

    pub fn grid(&self) -> &Arc<GroundGrid> {
        &self.grid
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mass_at(&self, index: usize) -> f64 {
        self.masses[index]
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.masses.iter().all(|&m| m == 0.0)
    }

    /// Grid indices carrying more than `SUPPORT_THRESHOLD` of the total mass.
    pub fn support(&self) -> Vec<usize> {
        let cut = SUPPORT_THRESHOLD * self.total_mass();
        (0..self.masses.len())
            .filter(|&i| self.masses[i] > cut)
            .collect()
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        if !(k >= 0.0) || !k.is_finite() {
            return Err(Error::NegativeScale(k));
        }
        Ok(DiscreteMeasure {
            grid: self.grid.clone(),
            masses: self.masses.iter().map(|m| m * k).collect(),
        })
    }

    /// Grid index of the largest mass (lowest index on ties); `None` for the zero measure.
    pub fn mode(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &m) in self.masses.iter().enumerate() {
            if m > 0.0 && best.is_none_or(|b| m > self.masses[b]) {
                best = Some(i);
            }
        }
        best
    }

    pub fn same_grid(&self, other: &DiscreteMeasure) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    /// Reads a measure CSV (`x,mass` or `x,y,mass`), snapping atoms onto `grid`.
    /// Atoms snapping to the same grid point are summed.
    pub fn read_csv<R: Read>(grid: Arc<GroundGrid>, reader: R) -> Result<Self> {
        let atoms = read_atoms(reader)?;
        if atoms.dim != grid.dim() {
            return Err(Error::Csv(format!(
                "{}-dimensional csv for a {}-dimensional grid",
                atoms.dim,
                grid.dim()
            )));
        }
        Self::from_points(grid, &atoms.atoms)
    }

    /// Snaps `(point, mass)` atoms to their nearest grid points, summing
    /// collisions. Points more than half a spacing away are rejected.
    pub fn from_points(grid: Arc<GroundGrid>, atoms: &[(Point, f64)]) -> Result<Self> {
        let mut masses = vec![0.0; grid.len()];
        for (row, &(p, m)) in atoms.iter().enumerate() {
            check_mass(m)?;
            let (i, snap) = grid.nearest(p);
            if snap > 0.5 + 1e-9 {
                return Err(Error::Csv(format!(
                    "row {}: point {:?} is {snap:.3} grid spacings from the nearest grid point",
                    row + 1,
                    p.0
                )));
            }
            masses[i] += m;
        }
        Ok(DiscreteMeasure { grid, masses })
    }

    /// Writes every atom with positive mass as a CSV row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Csv(e.to_string());
        if self.grid.dim() == 1 {
            w.write_record(["x", "mass"]).map_err(io)?;
        } else {
            w.write_record(["x", "y", "mass"]).map_err(io)?;
        }
        for (i, &m) in self.masses.iter().enumerate() {
            if m <= 0.0 {
                continue;
            }
            let p = self.grid.point(i);
            if self.grid.dim() == 1 {
                w.write_record([p.x().to_string(), m.to_string()]).map_err(io)?;
            } else {
                w.write_record([p.x().to_string(), p.y().to_string(), m.to_string()])
                    .map_err(io)?;
            }
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))
    }
}

/// Raw atoms of a measure CSV before snapping.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvAtoms {
    pub dim: usize,
    pub atoms: Vec<(Point, f64)>,
}

/// Parses a measure CSV with header `x,mass` or `x,y,mass`.
pub fn read_atoms<R: Read>(reader: R) -> Result<CsvAtoms> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let dim = match names.as_slice() {
        ["x", "mass"] => 1,
        ["x", "y", "mass"] => 2,
        _ => {
            return Err(Error::Csv(format!(
                "header {names:?} is neither [\"x\", \"mass\"] nor [\"x\", \"y\", \"mass\"]"
            )))
        }
    };
    let mut atoms = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let vals = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Csv(format!("row {}: {f:?}: {e}", row + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Csv(format!("row {}: non-finite value", row + 1)));
        }
        let p = if dim == 1 { Point::d1(vals[0]) } else { Point::d2(vals[0], vals[1]) };
        atoms.push((p, vals[dim]));
    }
    Ok(CsvAtoms { dim, atoms })
}

/// Pointwise Lebesgue decomposition of `marginal` against `reference`:
/// `marginal = sigma * reference + gamma_perp` and `reference = rho * marginal + mu_perp`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityDecomposition {
    /// `marginal / reference` where the reference is in its support.
    pub sigma: Vec<Option<f64>>,
    /// `reference / marginal` where the marginal is in its support.
    pub rho: Vec<Option<f64>>,
    pub gamma_perp: Vec<f64>,
    pub mu_perp: Vec<f64>,
    pub gamma_perp_mass: f64,
    pub mu_perp_mass: f64,
}

pub fn density_ratios(
    marginal: &DiscreteMeasure,
    reference: &DiscreteMeasure,
) -> Result<DensityDecomposition> {
    if !marginal.same_grid(reference) {
        return Err(Error::GridMismatch);
    }
    let n = marginal.masses.len();
    let cut_g = SUPPORT_THRESHOLD * marginal.total_mass();
    let cut_m = SUPPORT_THRESHOLD * reference.total_mass();
    let mut dec = DensityDecomposition {
        sigma: vec![None; n],
        rho: vec![None; n],
        gamma_perp: vec![0.0; n],
        mu_perp: vec![0.0; n],
        gamma_perp_mass: 0.0,
        mu_perp_mass: 0.0,
    };
    for i in 0..n {
        let g = marginal.masses[i];
        let m = reference.masses[i];
        let g_in = g > cut_g;
        let m_in = m > cut_m;
        if m_in {
            dec.sigma[i] = Some(g / m);
        } else {
            dec.gamma_perp[i] = g;
        }
        if g_in {
            dec.rho[i] = Some(m / g);
        } else {
            dec.mu_perp[i] = m;
        }
    }
    dec.gamma_perp_mass = dec.gamma_perp.iter().sum();
    dec.mu_perp_mass = dec.mu_perp.iter().sum();
    Ok(dec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit() -> Arc<GroundGrid> {
        Arc::new(GroundGrid::line(0.0, 1.0, 11).unwrap())
    }

    #[test]
    fn grid_endpoints_and_spacing() {
        let g = GroundGrid::line(0.0, 1.0, 2).unwrap();
        assert_eq!(g.points(), &[Point::d1(0.0), Point::d1(1.0)]);
        let g = GroundGrid::line(0.0, 1.0, 200).unwrap();
        assert_eq!(g.len(), 200);
        assert_abs_diff_eq!(g.spacing()[0], 1.0 / 199.0, epsilon = 1e-15);
        for w in g.points().windows(2) {
            assert!(w[1].x() > w[0].x());
            assert!(((w[1].x() - w[0].x()) * 199.0 - 1.0).abs() < 1e-12);
        }
        assert_eq!(g.point(199).x(), 1.0);
    }

    #[test]
    fn lattice_2d() {
        let iv = Interval::new(0.0, 1.0);
        let g = GroundGrid::new(2, &[iv, iv], 3).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g.point(5), Point::d2(0.5, 1.0));
        assert_eq!(g.nearest(Point::d2(0.49, 0.9)).0, 5);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(GroundGrid::line(0.0, 1.0, 1).is_err());
        assert!(GroundGrid::line(1.0, 1.0, 5).is_err());
        assert!(GroundGrid::new(3, &[Interval::new(0.0, 1.0); 3], 5).is_err());
    }

    #[test]
    fn masses_and_scaling() {
        let g = unit();
        assert_eq!(DiscreteMeasure::zero(g.clone()).total_mass(), 0.0);
        let d = DiscreteMeasure::dirac(g.clone(), Point::d1(0.3), 1.0).unwrap();
        assert_eq!(d.total_mass(), 1.0);
        assert_eq!(d.scaled(3.0).unwrap().total_mass(), 3.0);
        assert!(d.scaled(0.0).unwrap().is_zero());
        assert_eq!(d.scaled(1.0).unwrap(), d);
        assert!(d.scaled(-1.0).is_err());
        let grid = Arc::new(GroundGrid::line(0.0, 1.0, 200).unwrap());
        let gm = DiscreteMeasure::gaussian(grid, Point::d1(0.8), 0.08, 2.0).unwrap();
        assert_abs_diff_eq!(gm.total_mass(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn atoms_validation() {
        let g = unit();
        assert!(DiscreteMeasure::from_atoms(g.clone(), &[(1, 1.0), (1, 2.0)]).is_err());
        assert!(DiscreteMeasure::from_atoms(g.clone(), &[(11, 1.0)]).is_err());
        assert!(DiscreteMeasure::from_atoms(g, &[(1, -1.0)]).is_err());
    }

    #[test]
    fn decomposition_examples() {
        let g = unit();
        let mu = DiscreteMeasure::from_atoms(g.clone(), &[(2, 0.5), (5, 1.5)]).unwrap();
        let d = density_ratios(&mu, &mu).unwrap();
        for i in mu.support() {
            assert_eq!(d.sigma[i], Some(1.0));
            assert_eq!(d.rho[i], Some(1.0));
        }
        assert_eq!((d.gamma_perp_mass, d.mu_perp_mass), (0.0, 0.0));

        let d = density_ratios(&mu.scaled(2.0).unwrap(), &mu).unwrap();
        for i in mu.support() {
            assert_eq!(d.sigma[i], Some(2.0));
            assert_eq!(d.rho[i], Some(0.5));
        }

        let a = DiscreteMeasure::dirac(g.clone(), Point::d1(0.0), 1.0).unwrap();
        let b = DiscreteMeasure::dirac(g, Point::d1(1.0), 1.0).unwrap();
        let d = density_ratios(&a, &b).unwrap();
        assert_eq!((d.gamma_perp_mass, d.mu_perp_mass), (1.0, 1.0));
    }

    #[test]
    fn decomposition_grid_mismatch() {
        let a = DiscreteMeasure::zero(unit());
        let b = DiscreteMeasure::zero(Arc::new(GroundGrid::line(0.0, 2.0, 11).unwrap()));
        assert_eq!(density_ratios(&a, &b), Err(Error::GridMismatch));
    }

    #[test]
    fn csv_roundtrip_and_snapping() {
        let g = Arc::new(GroundGrid::line(0.0, 1.0, 101).unwrap());
        let mu = DiscreteMeasure::gaussian(g.clone(), Point::d1(0.4), 0.1, 1.7).unwrap();
        let mut buf = Vec::new();
        mu.write_csv(&mut buf).unwrap();
        let back = DiscreteMeasure::read_csv(g.clone(), buf.as_slice()).unwrap();
        assert_eq!(back, mu);

        let snapped = DiscreteMeasure::read_csv(g.clone(), "x,mass\n0.304,2\n".as_bytes()).unwrap();
        assert_eq!(snapped.mass_at(30), 2.0);
        assert!(DiscreteMeasure::read_csv(g.clone(), "x,mass\n1.2,1\n".as_bytes()).is_err());
        assert!(DiscreteMeasure::read_csv(g, "x,y,mass\n0,0,1\n".as_bytes()).is_err());
    }
}
