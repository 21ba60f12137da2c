//! Finite atomic measures on R^d, closed axis-parallel cubes and the basic
//! growth and doubling diagnostics.

use std::io::Read;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supremum-norm distance.
#[inline]
pub fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Euclidean distance.
#[inline]
pub fn euclid_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A finite sum of weighted Dirac masses with a declared growth exponent `n`.
///
/// Points are stored row-major in one flat buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureFile", into = "MeasureFile")]
pub struct DiscreteMeasure {
    dim: usize,
    n: f64,
    coords: Vec<f64>,
    weights: Vec<f64>,
    resolution: f64,
    label: String,
}

/// On-disk JSON layout of a measure.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasureFile {
    pub dim: usize,
    pub n: f64,
    pub resolution: f64,
    pub label: String,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl TryFrom<MeasureFile> for DiscreteMeasure {
    type Error = Error;
    fn try_from(f: MeasureFile) -> Result<Self> {
        DiscreteMeasure::new(f.dim, f.n, f.points, f.weights, Some(f.resolution), f.label)
    }
}

impl From<DiscreteMeasure> for MeasureFile {
    fn from(m: DiscreteMeasure) -> Self {
        MeasureFile {
            dim: m.dim,
            n: m.n,
            resolution: m.resolution,
            label: m.label.clone(),
            points: (0..m.len()).map(|i| m.point(i).to_vec()).collect(),
            weights: m.weights,
        }
    }
}

/// Smallest pairwise Euclidean distance, `inf` for fewer than two points.
fn min_pairwise(dim: usize, coords: &[f64]) -> f64 {
    let n = coords.len() / dim.max(1);
    let mut best = f64::INFINITY;
    for i in 0..n {
        let a = &coords[i * dim..(i + 1) * dim];
        for j in (i + 1)..n {
            let b = &coords[j * dim..(j + 1) * dim];
            best = best.min(euclid_dist(a, b));
        }
    }
    best
}

impl DiscreteMeasure {
    /// Builds and validates a measure. When `resolution` is `None` the
    /// minimum pairwise distance is used.
    pub fn new(
        dim: usize,
        n: f64,
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
        resolution: Option<f64>,
        label: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be positive".into()));
        }
        if !(n > 0.0 && n <= dim as f64) {
            return Err(Error::InvalidMeasure(format!(
                "growth exponent {n} must lie in (0, {dim}]"
            )));
        }
        if points.is_empty() {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::InvalidMeasure(format!(
                    "point {i} has {} coordinates, expected {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidMeasure(format!("point {i} is not finite")));
            }
            coords.extend_from_slice(p);
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidMeasure(format!(
                "weight {i} must be positive and finite"
            )));
        }
        let min_d = min_pairwise(dim, &coords);
        if min_d == 0.0 {
            return Err(Error::InvalidMeasure("duplicate atoms".into()));
        }
        let resolution = match resolution {
            Some(r) => {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(Error::InvalidMeasure("resolution must be positive".into()));
                }
                if r > min_d * (1.0 + 1e-12) {
                    return Err(Error::InvalidMeasure(format!(
                        "resolution {r} exceeds minimum pairwise distance {min_d}"
                    )));
                }
                r
            }
            None if min_d.is_finite() => min_d,
            None => 1.0,
        };
        Ok(DiscreteMeasure {
            dim,
            n,
            coords,
            weights,
            resolution,
            label: label.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Growth exponent.
    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Largest Euclidean distance between two atoms.
    pub fn diameter(&self) -> f64 {
        let mut d = 0.0_f64;
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                d = d.max(euclid_dist(self.point(i), self.point(j)));
            }
        }
        d
    }

    /// Index of the atom located exactly at `x`.
    pub fn atom_at(&self, x: &[f64]) -> Option<usize> {
        (0..self.len()).find(|&i| self.point(i) == x)
    }

    /// Mass of the closed Euclidean ball `B(x, r)`.
    pub fn ball_mass(&self, x: &[f64], r: f64) -> f64 {
        (0..self.len())
            .filter(|&i| euclid_dist(self.point(i), x) <= r)
            .map(|i| self.weights[i])
            .sum()
    }

    /// Mass of a closed cube.
    pub fn cube_mass(&self, q: &Cube) -> f64 {
        match q {
            Cube::Whole => self.total_mass(),
            _ => (0..self.len())
                .filter(|&i| q.contains_point(self.point(i)))
                .map(|i| self.weights[i])
                .sum(),
        }
    }

    /// Reads a CSV file with columns `x1..xd,w`. A non-numeric first line is
    /// treated as a header.
    pub fn from_csv<R: Read>(
        reader: R,
        n: f64,
        resolution: Option<f64>,
        label: &str,
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::InvalidMeasure(e.to_string()))?;
            let vals: std::result::Result<Vec<f64>, _> =
                rec.iter().map(f64::from_str).collect();
            let vals = match vals {
                Ok(v) => v,
                Err(_) if line == 0 => continue,
                Err(e) => {
                    return Err(Error::InvalidMeasure(format!("line {}: {e}", line + 1)));
                }
            };
            if vals.len() < 2 {
                return Err(Error::InvalidMeasure(format!(
                    "line {}: need at least one coordinate and a weight",
                    line + 1
                )));
            }
            let (w, p) = vals.split_last().unwrap();
            points.push(p.to_vec());
            weights.push(*w);
        }
        let dim = points.first().map_or(0, Vec::len);
        DiscreteMeasure::new(dim, n, points, weights, resolution, label)
    }
}

/// Closed axis-parallel cube, possibly degenerate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cube {
    Standard { center: Vec<f64>, side: f64 },
    /// A single point, side length zero.
    Point { center: Vec<f64> },
    /// All of R^d, side length infinity.
    Whole,
}

impl Cube {
    pub fn standard(center: Vec<f64>, side: f64) -> Result<Cube> {
        if !(side > 0.0 && side.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cube side {side} must be positive and finite"
            )));
        }
        Ok(Cube::Standard { center, side })
    }

    /// Cube with the given center and side; zero gives a point and infinity the whole space.
    pub fn with_side(center: &[f64], side: f64) -> Cube {
        if side == 0.0 {
            Cube::Point {
                center: center.to_vec(),
            }
        } else if side.is_infinite() {
            Cube::Whole
        } else {
            Cube::Standard {
                center: center.to_vec(),
                side,
            }
        }
    }

    pub fn side(&self) -> f64 {
        match self {
            Cube::Standard { side, .. } => *side,
            Cube::Point { .. } => 0.0,
            Cube::Whole => f64::INFINITY,
        }
    }

    pub fn half_side(&self) -> f64 {
        self.side() / 2.0
    }

    pub fn center(&self) -> Option<&[f64]> {
        match self {
            Cube::Standard { center, .. } | Cube::Point { center } => Some(center),
            Cube::Whole => None,
        }
    }

    pub fn is_whole(&self) -> bool {
        matches!(self, Cube::Whole)
    }

    pub fn is_point(&self) -> bool {
        matches!(self, Cube::Point { .. })
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        match self {
            Cube::Whole => true,
            Cube::Point { center } => center.as_slice() == x,
            Cube::Standard { center, side } => sup_dist(center, x) <= side / 2.0,
        }
    }

    /// Concentric dilation `rho * Q`.
    pub fn dilate(&self, rho: f64) -> Cube {
        match self {
            Cube::Standard { center, side } => Cube::with_side(center, side * rho),
            other => other.clone(),
        }
    }

    /// `self ⊂ other`, with a relative slack of `1e-12` on the sides.
    pub fn is_subset_of(&self, other: &Cube) -> bool {
        match (self, other) {
            (_, Cube::Whole) => true,
            (Cube::Whole, _) => false,
            (a, b) => {
                let (ca, cb) = (a.center().unwrap(), b.center().unwrap());
                let reach = sup_dist(ca, cb) + a.half_side();
                reach <= b.half_side() * (1.0 + 1e-12) + 1e-300
            }
        }
    }

    pub fn intersects(&self, other: &Cube) -> bool {
        match (self.center(), other.center()) {
            (Some(a), Some(b)) => {
                sup_dist(a, b) <= (self.half_side() + other.half_side()) * (1.0 + 1e-12)
            }
            _ => true,
        }
    }
}

/// Growth constant together with the configuration realizing it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthConstant {
    pub c0: f64,
    pub witness_atom: usize,
    pub witness_radius: f64,
    /// `"ball"` or `"cube"`.
    pub witness_form: String,
}

/// Measured growth constant: the largest of `mu(B(x,r))/r^n` and
/// `mu(Q(x,2r))/(2r)^n` over support points and radii `r >= resolution`.
///
/// Both mass profiles are step functions of `r`, so the supremum is attained
/// at `r = resolution` or at one of the pairwise distances. A geometric grid
/// up to the diameter is scanned as well.
pub fn growth_constant(mu: &DiscreteMeasure) -> Result<GrowthConstant> {
    if mu.len() < 2 {
        return Err(Error::DegenerateMeasure);
    }
    let n = mu.n();
    let res = mu.resolution();
    let diam = mu.diameter();
    let mut grid = Vec::new();
    let mut r = res;
    while r <= diam * 2.0 {
        grid.push(r);
        r *= 2f64.powf(0.25);
    }
    let per_point: Vec<(f64, f64, bool)> = {
        use rayon::prelude::*;
        (0..mu.len())
            .into_par_iter()
            .map(|i| {
                let x = mu.point(i);
                let mut eu: Vec<(f64, f64)> = Vec::with_capacity(mu.len());
                let mut su: Vec<(f64, f64)> = Vec::with_capacity(mu.len());
                for j in 0..mu.len() {
                    eu.push((euclid_dist(x, mu.point(j)), mu.weight(j)));
                    su.push((sup_dist(x, mu.point(j)), mu.weight(j)));
                }
                let prof_e = MassProfile::new(eu);
                let prof_s = MassProfile::new(su);
                let mut best = (0.0, res, true);
                let mut consider = |r: f64| {
                    if r < res {
                        return;
                    }
                    let b = prof_e.mass_within(r) / r.powf(n);
                    let c = prof_s.mass_within(r) / (2.0 * r).powf(n);
                    if b > best.0 {
                        best = (b, r, true);
                    }
                    if c > best.0 {
                        best = (c, r, false);
                    }
                };
                for &d in prof_e.dist.iter().chain(&prof_s.dist).chain(&grid) {
                    consider(d);
                }
                best
            })
            .collect()
    };
    let (witness_atom, &(c0, radius, ball)) = per_point
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(b.0.cmp(&a.0)))
        .unwrap();
    Ok(GrowthConstant {
        c0,
        witness_atom,
        witness_radius: radius,
        witness_form: if ball { "ball" } else { "cube" }.into(),
    })
}

/// Sorted distances with cumulative mass.
struct MassProfile {
    dist: Vec<f64>,
    cum: Vec<f64>,
}

impl MassProfile {
    fn new(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        let mut dist = Vec::with_capacity(pairs.len());
        let mut cum = Vec::with_capacity(pairs.len());
        for (d, w) in pairs {
            acc += w;
            dist.push(d);
            cum.push(acc);
        }
        MassProfile { dist, cum }
    }

    fn mass_within(&self, r: f64) -> f64 {
        let k = self.dist.partition_point(|&d| d <= r);
        if k == 0 {
            0.0
        } else {
            self.cum[k - 1]
        }
    }
}

/// `mu(alpha Q) <= beta mu(Q)`.
///
/// A standard or point cube of zero mass is an error; the whole space is
/// always doubling.
pub fn is_doubling(mu: &DiscreteMeasure, q: &Cube, alpha: f64, beta: f64) -> Result<bool> {
    if !(alpha > 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} must exceed 1")));
    }
    if !(beta > alpha.powf(mu.dim() as f64)) {
        return Err(Error::InvalidArgument(format!(
            "beta {beta} must exceed alpha^d"
        )));
    }
    match q {
        Cube::Whole => Ok(true),
        Cube::Point { .. } => {
            if mu.cube_mass(q) > 0.0 {
                Ok(true)
            } else {
                Err(Error::ZeroMassCube)
            }
        }
        Cube::Standard { .. } => {
            let m = mu.cube_mass(q);
            if m == 0.0 {
                return Err(Error::ZeroMassCube);
            }
            Ok(mu.cube_mass(&q.dilate(alpha)) <= beta * m)
        }
    }
}

/// Default doubling parameters `(2, 2^{d+1})`.
pub fn default_doubling(dim: usize) -> (f64, f64) {
    (2.0, 2f64.powi(dim as i32 + 1))
}

/// A cube centered at an atom where `mu(2Q)/mu(Q)` is largest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DoublingWitness {
    pub cube: Cube,
    pub mass: f64,
    pub dilated_mass: f64,
    pub ratio: f64,
    /// Whether the ratio exceeds `2^{d+1}`.
    pub violates: bool,
}

/// Scans cubes centered at atoms and returns the largest doubling ratio.
pub fn worst_doubling_ratio(mu: &DiscreteMeasure) -> DoublingWitness {
    use rayon::prelude::*;
    let beta = default_doubling(mu.dim()).1;
    let best = (0..mu.len())
        .into_par_iter()
        .map(|i| {
            let x = mu.point(i);
            let prof = MassProfile::new(
                (0..mu.len())
                    .map(|j| (sup_dist(x, mu.point(j)), mu.weight(j)))
                    .collect(),
            );
            let mut best = (0.0_f64, 0.0_f64, 0.0, 0.0);
            // just below each jump of the profile, so Q is as large as possible
            // without absorbing the next shell
            for k in 1..prof.dist.len() {
                let next = prof.dist[k];
                if next == prof.dist[k - 1] {
                    continue;
                }
                let h = prof.dist[k - 1].max(next * (1.0 - 1e-9));
                if h <= 0.0 {
                    continue;
                }
                let m = prof.mass_within(h);
                let m2 = prof.mass_within(2.0 * h);
                let ratio = m2 / m;
                if ratio > best.0 {
                    best = (ratio, h, m, m2);
                }
            }
            (i, best)
        })
        .reduce(
            || (usize::MAX, (0.0, 0.0, 0.0, 0.0)),
            |a, b| {
                if b.1 .0 > a.1 .0 || (b.1 .0 == a.1 .0 && b.0 < a.0) {
                    b
                } else {
                    a
                }
            },
        );
    let (i, (ratio, h, m, m2)) = best;
    let cube = if i == usize::MAX {
        Cube::Whole
    } else {
        Cube::with_side(mu.point(i), 2.0 * h)
    };
    DoublingWitness {
        cube,
        mass: m,
        dilated_mass: m2,
        ratio,
        violates: ratio > beta,
    }
}

/// Built-in reference measures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExampleKind {
    /// Equal atoms at the midpoints of `atoms` equal subintervals of `[0,1]`, total mass one.
    UniformInterval { atoms: usize },
    /// `per_side^2` equal atoms on a grid in the unit square, total mass one.
    UniformSquare { per_side: usize },
    /// Four-corner Cantor set of ratio 1/4 in the plane, `4^level` atoms.
    CantorQuarterPlanar { level: u32 },
    /// Equally spaced equal atoms in segments of geometrically shrinking
    /// length, each followed by a gap as long as the segment.
    Comb {
        levels: u32,
        ratio: f64,
        first_level_atoms: usize,
    },
    /// Arclength measure on the graph of a random piecewise-linear 1-Lipschitz function.
    LipschitzGraphArclength { atoms: usize, seed: u64 },
}

impl ExampleKind {
    /// Builds a kind from a name and an approximate atom budget.
    pub fn from_name(name: &str, atoms: usize, seed: u64) -> Result<ExampleKind> {
        let atoms = atoms.max(4);
        Ok(match name {
            "uniform_interval" => ExampleKind::UniformInterval { atoms },
            "uniform_square" => ExampleKind::UniformSquare {
                per_side: ((atoms as f64).sqrt().round() as usize).max(2),
            },
            "cantor_quarter_planar" => ExampleKind::CantorQuarterPlanar {
                level: (((atoms as f64).ln() / 4f64.ln()).round() as u32).max(1),
            },
            "comb" => {
                // about 3/4 of the budget in the first segment, as many
                // levels as leave at least one atom in the last
                let first = ((atoms as f64 * 0.75).ceil() as usize).max(2);
                let levels = ((first as f64).ln() / 4f64.ln()).floor() as u32 + 1;
                ExampleKind::Comb {
                    levels: levels.max(2),
                    ratio: 0.25,
                    first_level_atoms: first,
                }
            }
            "lipschitz_graph_arclength" => ExampleKind::LipschitzGraphArclength { atoms, seed },
            other => return Err(Error::UnknownExample(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExampleKind::UniformInterval { .. } => "uniform_interval",
            ExampleKind::UniformSquare { .. } => "uniform_square",
            ExampleKind::CantorQuarterPlanar { .. } => "cantor_quarter_planar",
            ExampleKind::Comb { .. } => "comb",
            ExampleKind::LipschitzGraphArclength { .. } => "lipschitz_graph_arclength",
        }
    }
}

/// All reference example names.
pub const EXAMPLE_NAMES: [&str; 5] = [
    "uniform_interval",
    "uniform_square",
    "cantor_quarter_planar",
    "comb",
    "lipschitz_graph_arclength",
];

/// A generated measure and, for the non-doubling kinds, a doubling witness.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratedExample {
    pub measure: DiscreteMeasure,
    pub witness: Option<DoublingWitness>,
}

pub fn generate_example(kind: &ExampleKind) -> Result<GeneratedExample> {
    let label = kind.name();
    match *kind {
        ExampleKind::UniformInterval { atoms } => {
            if atoms < 2 {
                return Err(Error::InvalidArgument("need at least two atoms".into()));
            }
            let h = 1.0 / atoms as f64;
            let pts = (0..atoms).map(|i| vec![(i as f64 + 0.5) * h]).collect();
            let mu = DiscreteMeasure::new(1, 1.0, pts, vec![h; atoms], Some(h), label)?;
            Ok(GeneratedExample {
                measure: mu,
                witness: None,
            })
        }
        ExampleKind::UniformSquare { per_side } => {
            if per_side < 2 {
                return Err(Error::InvalidArgument("need at least two atoms per side".into()));
            }
            let h = 1.0 / per_side as f64;
            let mut pts = Vec::with_capacity(per_side * per_side);
            for i in 0..per_side {
                for j in 0..per_side {
                    pts.push(vec![(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
                }
            }
            let m = pts.len();
            let mu = DiscreteMeasure::new(2, 2.0, pts, vec![h * h; m], Some(h), label)?;
            Ok(GeneratedExample {
                measure: mu,
                witness: None,
            })
        }
        ExampleKind::CantorQuarterPlanar { level } => {
            if level == 0 || level > 6 {
                return Err(Error::InvalidArgument("level must be in 1..=6".into()));
            }
            // each square keeps its four corner subsquares of a quarter the side
            let mut squares: Vec<([f64; 2], f64)> = vec![([0.0, 0.0], 1.0)];
            for _ in 0..level {
                let mut next = Vec::with_capacity(squares.len() * 4);
                for (o, s) in squares {
                    let t = s / 4.0;
                    for (a, b) in [(0.0, 0.0), (3.0, 0.0), (0.0, 3.0), (3.0, 3.0)] {
                        next.push(([o[0] + a * t, o[1] + b * t], t));
                    }
                }
                squares = next;
            }
            let side = squares[0].1;
            let pts: Vec<Vec<f64>> = squares
                .iter()
                .map(|(o, s)| vec![o[0] + s / 2.0, o[1] + s / 2.0])
                .collect();
            let m = pts.len();
            let mu = DiscreteMeasure::new(
                2,
                1.0,
                pts,
                vec![1.0 / m as f64; m],
                Some(3.0 * side),
                label,
            )?;
            let w = worst_doubling_ratio(&mu);
            Ok(GeneratedExample {
                measure: mu,
                witness: Some(w),
            })
        }
        ExampleKind::Comb {
            levels,
            ratio,
            first_level_atoms,
        } => {
            if levels < 2 || !(ratio > 0.0 && ratio < 1.0) || first_level_atoms < 2 {
                return Err(Error::InvalidArgument(
                    "comb needs levels >= 2, ratio in (0,1), first_level_atoms >= 2".into(),
                ));
            }
            // equal atoms on a common spacing; segment j holds about
            // first_level_atoms * ratio^j atoms and is followed by a gap as long
            // as itself, so a cube on the next segment doubles into all of it
            let counts: Vec<usize> = (0..levels)
                .map(|j| ((first_level_atoms as f64 * ratio.powi(j as i32)).round() as usize).max(1))
                .collect();
            let total: usize = counts.iter().sum();
            let sp = 1.0 / total as f64;
            let mut pts = Vec::with_capacity(total);
            let mut start = 0.0;
            for (j, &c) in counts.iter().enumerate() {
                if j > 0 {
                    start += counts[j - 1] as f64 * sp;
                }
                for i in 0..c {
                    pts.push(vec![start + i as f64 * sp]);
                }
                start += (c - 1) as f64 * sp;
            }
            let mu = DiscreteMeasure::new(1, 1.0, pts, vec![sp; total], Some(sp), label)?;
            let w = worst_doubling_ratio(&mu);
            Ok(GeneratedExample {
                measure: mu,
                witness: Some(w),
            })
        }
        ExampleKind::LipschitzGraphArclength { atoms, seed } => {
            if atoms < 2 {
                return Err(Error::InvalidArgument("need at least two atoms".into()));
            }
            let pieces = 8;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let slopes: Vec<f64> = (0..pieces).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dt = 1.0 / pieces as f64;
            let piece_len: Vec<f64> = slopes.iter().map(|s| dt * (1.0 + s * s).sqrt()).collect();
            let total_len: f64 = piece_len.iter().sum();
            let h = total_len / atoms as f64;
            let mut pts = Vec::with_capacity(atoms);
            for i in 0..atoms {
                let mut s = (i as f64 + 0.5) * h;
                let (mut t, mut y) = (0.0, 0.0);
                for p in 0..pieces {
                    if s <= piece_len[p] || p == pieces - 1 {
                        let frac = s / piece_len[p];
                        t += frac * dt;
                        y += frac * dt * slopes[p];
                        break;
                    }
                    s -= piece_len[p];
                    t += dt;
                    y += dt * slopes[p];
                }
                pts.push(vec![t, y]);
            }
            let mu = DiscreteMeasure::new(2, 1.0, pts, vec![h; atoms], None, label)?;
            Ok(GeneratedExample {
                measure: mu,
                witness: None,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_atoms() -> DiscreteMeasure {
        DiscreteMeasure::new(
            1,
            1.0,
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![1.0; 3],
            Some(1.0),
            "three",
        )
        .unwrap()
    }

    #[test]
    fn ball_mass_closed() {
        let mu = three_atoms();
        assert_eq!(mu.ball_mass(&[0.0], 1.5), 2.0);
        assert_eq!(mu.ball_mass(&[1.0], 1.0), 3.0);
    }

    #[test]
    fn cube_mass_variants() {
        let mu = three_atoms();
        assert_eq!(mu.cube_mass(&Cube::Whole), 3.0);
        assert_eq!(mu.cube_mass(&Cube::with_side(&[1.0], 0.0)), 1.0);
        assert_eq!(mu.cube_mass(&Cube::with_side(&[0.5], 0.0)), 0.0);
        // boundary is inclusive
        assert_eq!(mu.cube_mass(&Cube::with_side(&[0.0], 2.0)), 2.0);
    }

    #[test]
    fn growth_constant_at_least_three() {
        let g = growth_constant(&three_atoms()).unwrap();
        assert!(g.c0 >= 3.0 - 1e-12);
    }

    #[test]
    fn single_atom_is_degenerate() {
        let mu = DiscreteMeasure::new(1, 1.0, vec![vec![0.0]], vec![1.0], None, "one").unwrap();
        assert!(matches!(growth_constant(&mu), Err(Error::DegenerateMeasure)));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(DiscreteMeasure::new(1, 1.0, vec![vec![0.0]], vec![0.0], None, "").is_err());
        assert!(DiscreteMeasure::new(1, 2.0, vec![vec![0.0]], vec![1.0], None, "").is_err());
        assert!(
            DiscreteMeasure::new(1, 1.0, vec![vec![0.0], vec![0.0]], vec![1.0; 2], None, "")
                .is_err()
        );
        assert!(DiscreteMeasure::new(
            1,
            1.0,
            vec![vec![0.0], vec![0.5]],
            vec![1.0; 2],
            Some(0.6),
            ""
        )
        .is_err());
    }

    #[test]
    fn doubling_edge_cases() {
        let mu = three_atoms();
        assert!(is_doubling(&mu, &Cube::Whole, 2.0, 4.0).unwrap());
        assert!(is_doubling(&mu, &Cube::with_side(&[1.0], 0.0), 2.0, 4.0).unwrap());
        assert!(matches!(
            is_doubling(&mu, &Cube::with_side(&[0.5], 0.2), 2.0, 4.0),
            Err(Error::ZeroMassCube)
        ));
        assert!(is_doubling(&mu, &Cube::with_side(&[1.0], 0.5), 2.0, 1.5).is_err());
    }

    #[test]
    fn uniform_interval_layout() {
        let g = generate_example(&ExampleKind::UniformInterval { atoms: 100 }).unwrap();
        let mu = g.measure;
        assert_eq!(mu.len(), 100);
        assert!((mu.total_mass() - 1.0).abs() < 1e-12);
        assert!((mu.point(1)[0] - mu.point(0)[0] - 0.01).abs() < 1e-12);
        assert_eq!(mu.n(), 1.0);
    }

    #[test]
    fn cantor_atoms_and_weights() {
        let g = generate_example(&ExampleKind::CantorQuarterPlanar { level: 3 }).unwrap();
        assert_eq!(g.measure.len(), 64);
        assert!(g.measure.weights().iter().all(|&w| (w - 1.0 / 64.0).abs() < 1e-15));
        assert_eq!(g.measure.dim(), 2);
        assert_eq!(g.measure.n(), 1.0);
    }

    #[test]
    fn comb_is_not_doubling() {
        let g = generate_example(&ExampleKind::Comb {
            levels: 5,
            ratio: 0.25,
            first_level_atoms: 256,
        })
        .unwrap();
        assert_eq!(g.measure.len(), 256 + 64 + 16 + 4 + 1);
        // equal atoms on a common spacing keep the growth constant small
        assert!(growth_constant(&g.measure).unwrap().c0 <= 3.0 + 1e-9);
        let w = g.witness.unwrap();
        assert!(w.violates);
        // recompute the witness ratio directly
        let m = g.measure.cube_mass(&w.cube);
        let m2 = g.measure.cube_mass(&w.cube.dilate(2.0));
        assert!(m2 / m > 4.0);
        assert!(!is_doubling(&g.measure, &w.cube, 2.0, 4.0).unwrap());
    }

    #[test]
    fn json_round_trip() {
        let mu = three_atoms();
        let s = serde_json::to_string(&mu).unwrap();
        let back: DiscreteMeasure = serde_json::from_str(&s).unwrap();
        assert_eq!(mu, back);
        assert!(s.contains("\"points\""));
    }

    #[test]
    fn csv_import_with_header() {
        let data = "x1,x2,w\n0,0,1\n1,0,2\n";
        let mu = DiscreteMeasure::from_csv(data.as_bytes(), 1.0, None, "csv").unwrap();
        assert_eq!(mu.len(), 2);
        assert_eq!(mu.dim(), 2);
        assert_eq!(mu.weight(1), 2.0);
    }
}
