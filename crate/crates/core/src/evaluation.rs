//! Pareto dominance, nondominated filtering, normalization and the
//! bi-objective hypervolume.

use std::path::Path;

use crate::decomposition::WeightVector;
use crate::error::{Error, Result};
use crate::instances::{MotspInstance, ObjectiveVector, Tour};
use crate::model::ActorParameters;

/// Default hypervolume reference point in normalized objective space.
pub const DEFAULT_REFERENCE: [f64; 2] = [1.2, 1.2];

fn check_dims(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::contract(format!(
            "objective dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    Ok(())
}

/// `u` is no worse than `v` everywhere and strictly better somewhere.
pub fn dominates(u: &ObjectiveVector, v: &ObjectiveVector) -> Result<bool> {
    check_dims(u.values(), v.values())?;
    Ok(dominates_unchecked(u.values(), v.values()))
}

fn dominates_unchecked(u: &[f64], v: &[f64]) -> bool {
    let mut strict = false;
    for (a, b) in u.iter().zip(v) {
        if a > b {
            return false;
        }
        strict |= a < b;
    }
    strict
}

/// Indices of the nondominated points in first-occurrence order; exact
/// duplicates keep their first representative.
pub fn nondominated_indices(points: &[ObjectiveVector]) -> Result<Vec<usize>> {
    let first = points
        .first()
        .ok_or_else(|| Error::contract("cannot filter an empty point set"))?;
    for p in points {
        check_dims(first.values(), p.values())?;
    }
    let mut keep = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let dominated = points.iter().any(|q| dominates_unchecked(q.values(), p.values()));
        let duplicate = points[..i].iter().any(|q| q == p);
        if !dominated && !duplicate {
            keep.push(i);
        }
    }
    Ok(keep)
}

pub fn pareto_filter(points: &[ObjectiveVector]) -> Result<Vec<ObjectiveVector>> {
    Ok(nondominated_indices(points)?
        .into_iter()
        .map(|i| points[i].clone())
        .collect())
}

fn check_bounds(ideal: &[f64], nadir: &[f64]) -> Result<()> {
    check_dims(ideal, nadir)?;
    if ideal.iter().zip(nadir).any(|(i, n)| !(n > i) || !i.is_finite() || !n.is_finite()) {
        return Err(Error::contract(format!(
            "degenerate normalization bounds: ideal {ideal:?}, nadir {nadir:?}"
        )));
    }
    Ok(())
}

/// Maps each point to `(p − ideal) / (nadir − ideal)` per objective.
pub fn normalize(points: &[ObjectiveVector], ideal: &[f64], nadir: &[f64]) -> Result<Vec<ObjectiveVector>> {
    check_bounds(ideal, nadir)?;
    points
        .iter()
        .map(|p| {
            check_dims(p.values(), ideal)?;
            Ok(ObjectiveVector(
                p.values()
                    .iter()
                    .zip(ideal.iter().zip(nadir))
                    .map(|(x, (lo, hi))| (x - lo) / (hi - lo))
                    .collect(),
            ))
        })
        .collect()
}

pub fn denormalize(points: &[ObjectiveVector], ideal: &[f64], nadir: &[f64]) -> Result<Vec<ObjectiveVector>> {
    check_bounds(ideal, nadir)?;
    points
        .iter()
        .map(|p| {
            check_dims(p.values(), ideal)?;
            Ok(ObjectiveVector(
                p.values()
                    .iter()
                    .zip(ideal.iter().zip(nadir))
                    .map(|(x, (lo, hi))| lo + x * (hi - lo))
                    .collect(),
            ))
        })
        .collect()
}

/// Area dominated by `points` and bounded by `reference`.
///
/// Points not strictly better than the reference in both objectives are
/// dropped with a warning; dominated points contribute nothing.
pub fn hypervolume_2d(points: &[ObjectiveVector], reference: [f64; 2]) -> Result<f64> {
    let mut inside: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for p in points {
        if p.dim() != 2 {
            return Err(Error::contract(format!("hypervolume_2d needs 2 objectives, got {}", p.dim())));
        }
        let (x, y) = (p.0[0], p.0[1]);
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::NonFinite(format!("objective vector ({x}, {y})")));
        }
        if x < reference[0] && y < reference[1] {
            inside.push((x, y));
        } else {
            log::warn!(
                "point ({x}, {y}) is not inside the reference box ({}, {}); dropped",
                reference[0],
                reference[1]
            );
        }
    }
    if inside.is_empty() {
        log::warn!("no point inside the reference box; hypervolume is 0");
        return Ok(0.0);
    }
    inside.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    // staircase: keep points whose y improves on everything to their left
    let mut front: Vec<(f64, f64)> = Vec::with_capacity(inside.len());
    for p in inside {
        if front.last().is_none_or(|q| p.1 < q.1) {
            front.push(p);
        }
    }
    let mut area = 0.0;
    for (k, &(x, y)) in front.iter().enumerate() {
        let next_x = front.get(k + 1).map_or(reference[0], |q| q.0);
        area += (next_x - x) * (reference[1] - y);
    }
    Ok(area)
}

/// One nondominated solution and the subproblem whose model produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveEntry {
    pub tour: Tour,
    pub objectives: ObjectiveVector,
    pub source: usize,
}

/// Mutually nondominated solutions with distinct objective vectors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParetoArchive {
    entries: Vec<ArchiveEntry>,
}

impl ParetoArchive {
    /// Keeps the nondominated candidates, in first-occurrence order.
    pub fn from_candidates(candidates: Vec<ArchiveEntry>) -> Result<Self> {
        if candidates.is_empty() {
            return Ok(Self::default());
        }
        let objectives: Vec<ObjectiveVector> = candidates.iter().map(|c| c.objectives.clone()).collect();
        let keep = nondominated_indices(&objectives)?;
        let mut slots: Vec<Option<ArchiveEntry>> = candidates.into_iter().map(Some).collect();
        let entries = keep.into_iter().map(|i| slots[i].take().expect("unique index")).collect();
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn objectives(&self) -> Vec<ObjectiveVector> {
        self.entries.iter().map(|e| e.objectives.clone()).collect()
    }
}

/// Greedy-decodes `inst` with every model and keeps the nondominated tours.
/// Entry `source` is the model's position in `models`.
pub fn approximate_pf(inst: &MotspInstance, models: &[ActorParameters]) -> Result<ParetoArchive> {
    let mut candidates = Vec::with_capacity(models.len());
    for (source, model) in models.iter().enumerate() {
        let tour = model.greedy_tours(std::slice::from_ref(inst))?.remove(0);
        let objectives = inst.evaluate_objectives(&tour)?;
        candidates.push(ArchiveEntry {
            tour,
            objectives,
            source,
        });
    }
    ParetoArchive::from_candidates(candidates)
}

/// Shared-bounds hypervolume settings.
#[derive(Clone, Debug, PartialEq)]
pub struct HvConfig {
    pub reference: [f64; 2],
    /// Normalize every front by the ideal/nadir of their union first.
    pub normalize: bool,
}

impl Default for HvConfig {
    fn default() -> Self {
        Self {
            reference: DEFAULT_REFERENCE,
            normalize: true,
        }
    }
}

/// Per-objective minimum and maximum over every point of every front.
pub fn union_bounds(fronts: &[Vec<ObjectiveVector>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut points = fronts.iter().flatten();
    let first = points
        .next()
        .ok_or_else(|| Error::contract("no points to take bounds over"))?;
    let mut ideal = first.0.clone();
    let mut nadir = first.0.clone();
    for p in points {
        check_dims(&ideal, p.values())?;
        for (j, &x) in p.values().iter().enumerate() {
            ideal[j] = ideal[j].min(x);
            nadir[j] = nadir[j].max(x);
        }
    }
    Ok((ideal, nadir))
}

/// Hypervolume of each front under one shared normalization.
pub fn compute_hv_protocol(fronts: &[Vec<ObjectiveVector>], cfg: &HvConfig) -> Result<Vec<f64>> {
    if fronts.is_empty() {
        return Err(Error::contract("hypervolume protocol needs at least one front"));
    }
    if !cfg.normalize {
        return fronts.iter().map(|f| hypervolume_2d(f, cfg.reference)).collect();
    }
    let (ideal, nadir) = union_bounds(fronts)?;
    fronts
        .iter()
        .map(|f| hypervolume_2d(&normalize(f, &ideal, &nadir)?, cfg.reference))
        .collect()
}

pub const PF_HEADER: &str = "subproblem,lambda1,lambda2,f1,f2,tour";
pub const HV_HEADER: &str = "instance,method,hv,n_points";

/// One row of a Pareto-front CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct PfRow {
    pub subproblem: usize,
    pub lambda: [f64; 2],
    pub objectives: [f64; 2],
    pub tour: Tour,
}

/// Rows for an archive; `weights[e.source]` supplies each row's λ.
pub fn pf_rows(archive: &ParetoArchive, weights: &[WeightVector]) -> Result<Vec<PfRow>> {
    archive
        .entries()
        .iter()
        .map(|e| {
            let w = weights
                .get(e.source)
                .ok_or(Error::OutOfBounds {
                    op: "pf_rows",
                    index: e.source,
                    extent: weights.len(),
                })?
                .values();
            if w.len() != 2 || e.objectives.dim() != 2 {
                return Err(Error::contract("PF CSV holds bi-objective rows only"));
            }
            Ok(PfRow {
                subproblem: e.source,
                lambda: [w[0], w[1]],
                objectives: [e.objectives.0[0], e.objectives.0[1]],
                tour: e.tour.clone(),
            })
        })
        .collect()
}

pub fn pf_to_csv(rows: &[PfRow]) -> String {
    let mut out = format!("{PF_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.subproblem,
            r.lambda[0],
            r.lambda[1],
            r.objectives[0],
            r.objectives[1],
            r.tour.to_dashed()
        ));
    }
    out
}

pub fn parse_pf_csv(text: &str, origin: &Path) -> Result<Vec<PfRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == PF_HEADER => {}
        _ => return Err(Error::parse(origin, 1, format!("expected header `{PF_HEADER}`"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 6 {
            return Err(Error::parse(origin, lineno, format!("expected 6 columns, got {}", cols.len())));
        }
        let real = |k: usize| -> Result<f64> {
            cols[k]
                .parse()
                .map_err(|_| Error::parse(origin, lineno, format!("bad number {:?}", cols[k])))
        };
        let subproblem = cols[0]
            .parse()
            .map_err(|_| Error::parse(origin, lineno, format!("bad subproblem {:?}", cols[0])))?;
        let tour = Tour::parse_dashed(cols[5]).map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        rows.push(PfRow {
            subproblem,
            lambda: [real(1)?, real(2)?],
            objectives: [real(3)?, real(4)?],
            tour,
        });
    }
    Ok(rows)
}

pub fn write_pf_csv(rows: &[PfRow], path: &Path) -> Result<()> {
    std::fs::write(path, pf_to_csv(rows)).map_err(|e| Error::io(path, e))
}

pub fn read_pf_csv(path: &Path) -> Result<Vec<PfRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pf_csv(&text, path)
}

/// One line of a hypervolume report.
#[derive(Clone, Debug, PartialEq)]
pub struct HvRecord {
    pub instance: String,
    pub method: String,
    pub hv: f64,
    pub n_points: usize,
}

pub fn hv_report_csv(records: &[HvRecord]) -> String {
    let mut out = format!("{HV_HEADER}\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.instance, r.method, r.hv, r.n_points));
    }
    out
}
