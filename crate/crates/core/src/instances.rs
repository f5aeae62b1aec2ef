//! Multiobjective TSP instances: generation, file formats, and objective
//! evaluation.
//!
//! Each node carries a feature vector of `2·m` coordinates. Objective `j`
//! measures Euclidean distance between the `j`-th coordinate pairs of two
//! nodes, so a bi-objective instance is two independent point clouds sharing
//! node identities.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::decomposition::WeightVector;
use crate::error::{Error, Result};
use crate::rng;

/// Rule that maps feature slices to per-objective edge costs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostSpec {
    /// Objective `j` is the Euclidean distance between features `2j, 2j+1`.
    EuclideanSlices,
}

/// Affine map applied to one TSPLIB file's coordinates before use as model
/// features: `scaled = (raw - offset) / scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordScaling {
    pub name: String,
    pub offset: [f64; 2],
    pub scale: f64,
    pub raw: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotspInstance {
    n: usize,
    m: usize,
    dx: usize,
    features: Vec<f64>,
    cost: CostSpec,
    scaling: Option<Vec<CoordScaling>>,
}

/// A closed tour, stored as a permutation of `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Tour(Vec<usize>);

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveVector(pub Vec<f64>);

impl Tour {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &i in &order {
            if i >= n || seen[i] {
                return Err(Error::contract(format!("not a permutation of 0..{n}: {order:?}")));
            }
            seen[i] = true;
        }
        Ok(Self(order))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn order(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Dash-separated node indices, e.g. `0-3-1-2`.
    pub fn to_dashed(&self) -> String {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        parts.join("-")
    }

    pub fn parse_dashed(s: &str) -> Result<Self> {
        let order = s
            .split('-')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::contract(format!("bad tour index {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(order)
    }
}

impl ObjectiveVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl fmt::Display for ObjectiveVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

impl MotspInstance {
    /// Builds an instance from a row-major `n × 2m` feature matrix.
    pub fn from_features(n: usize, m: usize, features: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::contract(format!("instance needs n >= 2 nodes, got {n}")));
        }
        if m == 0 {
            return Err(Error::contract("instance needs at least one objective"));
        }
        let dx = 2 * m;
        if features.len() != n * dx {
            return Err(Error::Shape {
                op: "instance features",
                lhs: vec![n, dx],
                rhs: vec![features.len()],
            });
        }
        if let Some(bad) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite feature {bad}")));
        }
        Ok(Self {
            n,
            m,
            dx,
            features,
            cost: CostSpec::EuclideanSlices,
            scaling: None,
        })
    }

    /// Uniform features in `[0,1]^4` from a seeded ChaCha8 stream.
    pub fn generate_random(n: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::contract(format!("instance needs n >= 2 nodes, got {n}")));
        }
        let mut rng = rng::seeded(seed);
        Self::sample(n, &mut rng)
    }

    /// Draws a bi-objective unit-square instance from an existing stream.
    pub fn sample(n: usize, rng: &mut rng::Rng) -> Result<Self> {
        let features = (0..n * 4).map(|_| rng.gen::<f64>()).collect();
        Self::from_features(n, 2, features)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dx(&self) -> usize {
        self.dx
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature(&self, node: usize) -> &[f64] {
        &self.features[node * self.dx..(node + 1) * self.dx]
    }

    pub fn cost_spec(&self) -> CostSpec {
        self.cost
    }

    pub fn scaling(&self) -> Option<&[CoordScaling]> {
        self.scaling.as_deref()
    }

    /// Edge cost of objective `j` between nodes `a` and `b`.
    pub fn cost(&self, j: usize, a: usize, b: usize) -> f64 {
        let (fa, fb) = (self.feature(a), self.feature(b));
        let (dx, dy) = (fa[2 * j] - fb[2 * j], fa[2 * j + 1] - fb[2 * j + 1]);
        dx.hypot(dy)
    }

    fn check_tour(&self, tour: &Tour) -> Result<()> {
        if tour.len() != self.n {
            return Err(Error::contract(format!(
                "tour visits {} nodes, instance has {}",
                tour.len(),
                self.n
            )));
        }
        Ok(())
    }

    /// Closed-tour cost per objective, including the return edge.
    pub fn evaluate_objectives(&self, tour: &Tour) -> Result<ObjectiveVector> {
        self.check_tour(tour)?;
        let order = tour.order();
        let values = (0..self.m)
            .map(|j| {
                let mut total = 0.0;
                for w in order.windows(2) {
                    total += self.cost(j, w[0], w[1]);
                }
                total + self.cost(j, order[self.n - 1], order[0])
            })
            .collect();
        Ok(ObjectiveVector(values))
    }

    /// Objective values in the original TSPLIB units, when the instance came
    /// from TSPLIB files. Costs are not rounded to integers.
    pub fn raw_objectives(&self, tour: &Tour) -> Result<Option<ObjectiveVector>> {
        self.check_tour(tour)?;
        let Some(scaling) = &self.scaling else {
            return Ok(None);
        };
        let order = tour.order();
        let values = scaling
            .iter()
            .map(|s| {
                let d = |a: usize, b: usize| {
                    let (p, q) = (s.raw[a], s.raw[b]);
                    (p[0] - q[0]).hypot(p[1] - q[1])
                };
                let mut total: f64 = order.windows(2).map(|w| d(w[0], w[1])).sum();
                total += d(order[self.n - 1], order[0]);
                total
            })
            .collect();
        Ok(Some(ObjectiveVector(values)))
    }

    /// Renders the native text format: a header line followed by one line of
    /// features per node, each printed with 17 significant digits.
    pub fn to_native(&self) -> String {
        let mut out = format!("MOTSP v1 n={} m={} dx={}\n", self.n, self.m, self.dx);
        for row in self.features.chunks(self.dx) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse_native(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "empty file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "MOTSP" || fields[1] != "v1" {
            return Err(Error::parse(origin, 1, "expected `MOTSP v1 n=<n> m=<m> dx=<dx>`"));
        }
        let field = |idx: usize, key: &str| -> Result<usize> {
            fields[idx]
                .strip_prefix(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::parse(origin, 1, format!("bad header field {:?}", fields[idx])))
        };
        let (n, m, dx) = (field(2, "n=")?, field(3, "m=")?, field(4, "dx=")?);
        if dx != 2 * m {
            return Err(Error::parse(origin, 1, format!("dx={dx} must equal 2*m={}", 2 * m)));
        }
        let mut features = Vec::with_capacity(n * dx);
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(origin, idx + 1, e.to_string()))?;
            if row.len() != dx {
                return Err(Error::parse(
                    origin,
                    idx + 1,
                    format!("expected {dx} features, found {}", row.len()),
                ));
            }
            features.extend(row);
        }
        if features.len() != n * dx {
            return Err(Error::parse(
                origin,
                n + 1,
                format!("expected {n} feature rows, found {}", features.len() / dx),
            ));
        }
        Self::from_features(n, m, features).map_err(|e| Error::parse(origin, 1, e.to_string()))
    }

    pub fn write_native(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_native()).map_err(|e| Error::io(path, e))
    }

    pub fn read_native(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_native(&text, path)
    }

    /// Pairs two TSPLIB EUC_2D files into a bi-objective instance: objective 1
    /// from `file_a`, objective 2 from `file_b`. Coordinates are shifted to the
    /// origin and divided by the larger axis range of their file, which keeps
    /// each file's geometry and places it in the unit square.
    pub fn load_tsplib_pair(file_a: &Path, file_b: &Path) -> Result<Self> {
        let a = TsplibFile::read(file_a)?;
        let b = TsplibFile::read(file_b)?;
        if a.coords.len() != b.coords.len() {
            return Err(Error::parse(
                file_b,
                b.dimension_line,
                format!(
                    "DIMENSION {} does not match {} in {}",
                    b.coords.len(),
                    a.coords.len(),
                    file_a.display()
                ),
            ));
        }
        let n = a.coords.len();
        let sa = a.scaling(file_a)?;
        let sb = b.scaling(file_b)?;
        let mut features = Vec::with_capacity(n * 4);
        for i in 0..n {
            for s in [&sa, &sb] {
                let p = s.raw[i];
                features.push((p[0] - s.offset[0]) / s.scale);
                features.push((p[1] - s.offset[1]) / s.scale);
            }
        }
        let mut inst = Self::from_features(n, 2, features)?;
        inst.scaling = Some(vec![sa, sb]);
        Ok(inst)
    }
}

/// Weighted-sum scalarization `Σ_j w_j f_j`.
pub fn weighted_sum(obj: &ObjectiveVector, w: &WeightVector) -> Result<f64> {
    if obj.dim() != w.dim() {
        return Err(Error::contract(format!(
            "objective dimension {} does not match weight dimension {}",
            obj.dim(),
            w.dim()
        )));
    }
    Ok(obj.0.iter().zip(w.values()).map(|(f, l)| f * l).sum())
}

struct TsplibFile {
    name: String,
    dimension_line: usize,
    coords: Vec<[f64; 2]>,
}

impl TsplibFile {
    fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut name = String::new();
        let mut dimension: Option<(usize, usize)> = None;
        let mut kind_ok = false;
        let mut weight_ok = false;
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut in_coords = false;
        for (no, line) in lines.by_ref() {
            if line.is_empty() {
                continue;
            }
            if line == "NODE_COORD_SECTION" {
                in_coords = true;
                break;
            }
            if line == "EOF" {
                break;
            }
            let (key, value) = line
                .split_once(':')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::parse(path, no, format!("unexpected line {line:?}")))?;
            match key {
                "NAME" => name = value.to_string(),
                "COMMENT" => {}
                "TYPE" => {
                    if value != "TSP" {
                        return Err(Error::parse(path, no, format!("unsupported TYPE {value}")));
                    }
                    kind_ok = true;
                }
                "DIMENSION" => {
                    let d = value
                        .parse()
                        .map_err(|_| Error::parse(path, no, format!("bad DIMENSION {value:?}")))?;
                    dimension = Some((d, no));
                }
                "EDGE_WEIGHT_TYPE" => {
                    if value != "EUC_2D" {
                        return Err(Error::parse(
                            path,
                            no,
                            format!("unsupported EDGE_WEIGHT_TYPE {value}"),
                        ));
                    }
                    weight_ok = true;
                }
                other => {
                    return Err(Error::parse(path, no, format!("unsupported keyword {other}")));
                }
            }
        }
        let last = text.lines().count();
        if !in_coords {
            return Err(Error::parse(path, last, "missing NODE_COORD_SECTION"));
        }
        let (dim, dimension_line) =
            dimension.ok_or_else(|| Error::parse(path, last, "missing DIMENSION"))?;
        if !kind_ok {
            return Err(Error::parse(path, last, "missing TYPE: TSP"));
        }
        if !weight_ok {
            return Err(Error::parse(path, last, "missing EDGE_WEIGHT_TYPE: EUC_2D"));
        }
        let mut coords = vec![None; dim];
        for (no, line) in lines {
            if line.is_empty() {
                continue;
            }
            if line == "EOF" {
                break;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::parse(path, no, format!("expected `id x y`, got {line:?}")));
            }
            let id: usize = parts[0]
                .parse()
                .map_err(|_| Error::parse(path, no, format!("bad node id {:?}", parts[0])))?;
            let x: f64 = parts[1]
                .parse()
                .map_err(|_| Error::parse(path, no, format!("bad coordinate {:?}", parts[1])))?;
            let y: f64 = parts[2]
                .parse()
                .map_err(|_| Error::parse(path, no, format!("bad coordinate {:?}", parts[2])))?;
            if id == 0 || id > dim {
                return Err(Error::parse(path, no, format!("node id {id} outside 1..={dim}")));
            }
            if coords[id - 1].replace([x, y]).is_some() {
                return Err(Error::parse(path, no, format!("duplicate node id {id}")));
            }
        }
        let coords = coords
            .into_iter()
            .enumerate()
            .map(|(i, c)| c.ok_or_else(|| Error::parse(path, last, format!("node {} missing", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name,
            dimension_line,
            coords,
        })
    }

    fn scaling(&self, path: &Path) -> Result<CoordScaling> {
        let min = |k: usize| self.coords.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min);
        let max = |k: usize| self.coords.iter().map(|c| c[k]).fold(f64::NEG_INFINITY, f64::max);
        let offset = [min(0), min(1)];
        let scale = (max(0) - offset[0]).max(max(1) - offset[1]);
        if scale <= 0.0 {
            return Err(Error::parse(path, self.dimension_line, "all coordinates coincide"));
        }
        Ok(CoordScaling {
            name: self.name.clone(),
            offset,
            scale,
            raw: self.coords.clone(),
        })
    }
}
