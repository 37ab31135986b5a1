//! Reference-solution grids, the binary dataset format, and the seeded
//! samplers that turn grids and domain boxes into condition point sets.
//!
//! Coordinate convention: axis 0 is time, remaining axes are space; point
//! clouds store coordinates column-per-axis in the same order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::error::{Error, Result};
use crate::network::DomainBounds;

/// One named coordinate axis; values strictly increase.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub name: String,
    pub values: Vec<f64>,
}

/// A dense reference solution over the product of its axes. Variables are
/// stored row-major with the first axis slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDataset {
    pub problem: String,
    pub axes: Vec<GridAxis>,
    pub variables: Vec<(String, Vec<f64>)>,
    pub meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct HeaderAxis {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct HeaderVar {
    name: String,
    dtype: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    problem: String,
    axes: Vec<HeaderAxis>,
    variables: Vec<HeaderVar>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

const MAGIC: &[u8; 4] = b"PGD1";

impl GridDataset {
    pub fn new(
        problem: impl Into<String>,
        axes: Vec<GridAxis>,
        variables: Vec<(String, Vec<f64>)>,
    ) -> Result<Self> {
        let ds = Self {
            problem: problem.into(),
            axes,
            variables,
            meta: BTreeMap::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::CorruptDataset("dataset has no axes".into()));
        }
        for ax in &self.axes {
            if ax.values.is_empty() {
                return Err(Error::BadAxis(format!("axis '{}' is empty", ax.name)));
            }
            if ax.values.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::BadAxis(format!(
                    "axis '{}' is not strictly increasing",
                    ax.name
                )));
            }
            if ax.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::BadAxis(format!("axis '{}' has non-finite values", ax.name)));
            }
        }
        let cells = self.cell_count();
        for (name, vals) in &self.variables {
            if vals.len() != cells {
                return Err(Error::CorruptDataset(format!(
                    "variable '{name}' has {} values, axes imply {cells}",
                    vals.len()
                )));
            }
        }
        Ok(())
    }

    /// Product of all axis lengths.
    pub fn cell_count(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn axis(&self, name: &str) -> Result<&GridAxis> {
        self.axes
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::BadAxis(format!("no axis named '{name}'")))
    }

    pub fn var(&self, name: &str) -> Result<&[f64]> {
        self.variables
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::CorruptDataset(format!("no variable named '{name}'")))
    }

    /// Coordinates of a flat (first-axis-slowest) cell index.
    pub fn coords_of(&self, mut flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.axes.len()];
        for (i, ax) in self.axes.iter().enumerate().rev() {
            let len = ax.values.len();
            out[i] = ax.values[flat % len];
            flat /= len;
        }
        out
    }

    /// Tight bounding box of the axes.
    pub fn bounds(&self) -> Result<DomainBounds> {
        DomainBounds::new(
            self.axes.iter().map(|a| a.values[0]).collect(),
            self.axes.iter().map(|a| *a.values.last().unwrap()).collect(),
        )
    }

    /// Writes magic, u32-LE length-prefixed JSON header, then little-endian
    /// f64 axis arrays and row-major variable arrays in declared order.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let header = Header {
            problem: self.problem.clone(),
            axes: self
                .axes
                .iter()
                .map(|a| HeaderAxis {
                    name: a.name.clone(),
                    len: a.values.len(),
                })
                .collect(),
            variables: self
                .variables
                .iter()
                .map(|(n, _)| HeaderVar {
                    name: n.clone(),
                    dtype: "f64".into(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(MAGIC)?;
        f.write_all(&(json.len() as u32).to_le_bytes())?;
        f.write_all(&json)?;
        for ax in &self.axes {
            for v in &ax.values {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        for (_, vals) in &self.variables {
            for v in vals {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)
            .map_err(|_| Error::CorruptDataset("file shorter than magic".into()))?;
        if &magic != MAGIC {
            return Err(Error::CorruptDataset(format!(
                "bad magic {:?}, expected \"PGD1\"",
                String::from_utf8_lossy(&magic)
            )));
        }
        let mut len4 = [0u8; 4];
        f.read_exact(&mut len4)
            .map_err(|_| Error::CorruptDataset("missing header length".into()))?;
        let hlen = u32::from_le_bytes(len4) as usize;
        let mut hbytes = vec![0u8; hlen];
        f.read_exact(&mut hbytes)
            .map_err(|_| Error::CorruptDataset("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&hbytes)
            .map_err(|e| Error::CorruptDataset(format!("header is not valid JSON: {e}")))?;

        let mut read_f64s = |n: usize, what: &str| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; n * 8];
            f.read_exact(&mut bytes)
                .map_err(|_| Error::CorruptDataset(format!("truncated while reading {what}")))?;
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };

        let mut axes = Vec::new();
        for ha in &header.axes {
            axes.push(GridAxis {
                name: ha.name.clone(),
                values: read_f64s(ha.len, &format!("axis '{}'", ha.name))?,
            });
        }
        let cells: usize = axes.iter().map(|a| a.values.len()).product();
        let mut variables = Vec::new();
        for hv in &header.variables {
            if hv.dtype != "f64" {
                return Err(Error::CorruptDataset(format!(
                    "variable '{}' has unsupported dtype '{}'",
                    hv.name, hv.dtype
                )));
            }
            variables.push((
                hv.name.clone(),
                read_f64s(cells, &format!("variable '{}'", hv.name))?,
            ));
        }
        let mut trailing = [0u8; 1];
        if f.read(&mut trailing)? != 0 {
            return Err(Error::CorruptDataset("trailing bytes after variables".into()));
        }
        let ds = Self {
            problem: header.problem,
            axes,
            variables,
            meta: header.meta,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Imports a rank-2 grid from CSV with header `axis0,axis1,var...`; rows
    /// must enumerate the full product in row-major order (axis 0 slowest).
    pub fn import_csv(path: &Path, problem: impl Into<String>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::CorruptDataset("empty csv".into()))?;
        let names: Vec<&str> = header.split(',').map(str::trim).collect();
        if names.len() < 3 {
            return Err(Error::CorruptDataset(
                "rank-2 csv needs two coordinate columns and at least one variable".into(),
            ));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in lines.enumerate() {
            let vals: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| {
                Error::CorruptDataset(format!("csv row {}: {e}", i + 2))
            })?;
            if vals.len() != names.len() {
                return Err(Error::CorruptDataset(format!(
                    "csv row {} has {} fields, header has {}",
                    i + 2,
                    vals.len(),
                    names.len()
                )));
            }
            rows.push(vals);
        }
        // Axis 1 repeats within each axis-0 block; recover it from the first block.
        let a0_first = rows
            .first()
            .ok_or_else(|| Error::CorruptDataset("csv has no data rows".into()))?[0];
        let n1 = rows.iter().take_while(|r| r[0] == a0_first).count();
        if n1 == 0 || rows.len() % n1 != 0 {
            return Err(Error::CorruptDataset(format!(
                "csv rows ({}) are not a multiple of the inferred inner axis length {n1}",
                rows.len()
            )));
        }
        let n0 = rows.len() / n1;
        let axis0: Vec<f64> = (0..n0).map(|i| rows[i * n1][0]).collect();
        let axis1: Vec<f64> = (0..n1).map(|j| rows[j][1]).collect();
        for (i, row) in rows.iter().enumerate() {
            if row[0] != axis0[i / n1] || row[1] != axis1[i % n1] {
                return Err(Error::CorruptDataset(format!(
                    "csv row {} breaks row-major product order",
                    i + 2
                )));
            }
        }
        let variables = names[2..]
            .iter()
            .enumerate()
            .map(|(k, n)| (n.to_string(), rows.iter().map(|r| r[2 + k]).collect()))
            .collect();
        Self::new(
            problem,
            vec![
                GridAxis {
                    name: names[0].to_string(),
                    values: axis0,
                },
                GridAxis {
                    name: names[1].to_string(),
                    values: axis1,
                },
            ],
            variables,
        )
    }
}

/// What a point set feeds: its loss term shape and target expectations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointRole {
    Initial,
    Boundary,
    Collocation,
    Observation,
}

/// A batch of sample points: coordinates [N, D] plus optional observed
/// targets [N, K].
#[derive(Debug, Clone)]
pub struct PointSet {
    pub coords: Array<f64>,
    pub targets: Option<Array<f64>>,
    pub role: PointRole,
}

impl PointSet {
    pub fn new(coords: Array<f64>, targets: Option<Array<f64>>, role: PointRole) -> Result<Self> {
        if !coords.all_finite() {
            return Err(Error::NonFiniteInput);
        }
        if let Some(t) = &targets {
            if t.rows() != coords.rows() {
                return Err(Error::ShapeMismatch {
                    op: "point_set",
                    lhs: coords.shape(),
                    rhs: t.shape(),
                });
            }
            if !t.all_finite() {
                return Err(Error::NonFiniteInput);
            }
        }
        Ok(Self {
            coords,
            targets,
            role,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.coords.cols()
    }

    /// Verifies every coordinate lies inside `bounds` up to a 1e-9 slack.
    pub fn check_bounds(&self, bounds: &DomainBounds) -> Result<()> {
        if self.dim() != bounds.dim() {
            return Err(Error::ShapeMismatch {
                op: "check_bounds",
                lhs: self.coords.shape(),
                rhs: (1, bounds.dim()),
            });
        }
        for i in 0..self.len() {
            for j in 0..self.dim() {
                let v = self.coords.get(i, j);
                if v < bounds.lb[j] - 1e-9 || v > bounds.ub[j] + 1e-9 {
                    return Err(Error::InvalidShape {
                        op: "check_bounds",
                        message: format!(
                            "point {i} coordinate {j} = {v} outside [{}, {}]",
                            bounds.lb[j], bounds.ub[j]
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    fn gather(&self, idx: &[usize]) -> Self {
        let d = self.dim();
        let coords = Array::from_fn(idx.len(), d, |i, j| self.coords.get(idx[i], j));
        let targets = self.targets.as_ref().map(|t| {
            Array::from_fn(idx.len(), t.cols(), |i, j| t.get(idx[i], j))
        });
        Self {
            coords,
            targets,
            role: self.role,
        }
    }
}

/// Latin hypercube sample of `n` collocation points in the box: per axis, a
/// seeded permutation of `n` equal bins with one uniform draw inside each.
pub fn sample_collocation(bounds: &DomainBounds, n: usize, seed: u64) -> Result<PointSet> {
    if n == 0 {
        return Err(Error::InvalidShape {
            op: "sample_collocation",
            message: "need at least one point".into(),
        });
    }
    let d = bounds.dim();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut coords = Array::zeros(n, d);
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..d {
        perm.shuffle(&mut rng);
        let (lb, ub) = (bounds.lb[j], bounds.ub[j]);
        for i in 0..n {
            let u: f64 = rng.gen();
            let frac = (perm[i] as f64 + u) / n as f64;
            coords.set(i, j, lb + (ub - lb) * frac);
        }
    }
    PointSet::new(coords, None, PointRole::Collocation)
}

/// Which grid points a [`sample_from_grid`] call draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridSelector {
    /// Points at the first time value.
    Initial,
    /// Points at a given time index; `TimeSlice(0)` equals `Initial` except
    /// for the resulting role.
    TimeSlice(usize),
    /// Points with any spatial coordinate at its first or last value.
    Boundary,
    /// Every grid point.
    Interior,
}

fn matching_indices(ds: &GridDataset, selector: GridSelector) -> Result<Vec<usize>> {
    let dims: Vec<usize> = ds.axes.iter().map(|a| a.values.len()).collect();
    if let GridSelector::TimeSlice(k) = selector {
        if k >= dims[0] {
            return Err(Error::BadAxis(format!(
                "time index {k} outside axis of length {}",
                dims[0]
            )));
        }
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; dims.len()];
    for flat in 0..ds.cell_count() {
        let mut rem = flat;
        for (i, &len) in dims.iter().enumerate().rev() {
            idx[i] = rem % len;
            rem /= len;
        }
        let keep = match selector {
            GridSelector::Initial => idx[0] == 0,
            GridSelector::TimeSlice(k) => idx[0] == k,
            GridSelector::Boundary => idx
                .iter()
                .enumerate()
                .skip(1)
                .any(|(a, &i)| i == 0 || i == dims[a] - 1),
            GridSelector::Interior => true,
        };
        if keep {
            out.push(flat);
        }
    }
    Ok(out)
}

/// Uniform subset without replacement of the grid points a selector matches,
/// with targets gathered from the named variables.
pub fn sample_from_grid(
    ds: &GridDataset,
    selector: GridSelector,
    n: usize,
    seed: u64,
    variables: &[&str],
) -> Result<PointSet> {
    let pool = matching_indices(ds, selector)?;
    if n > pool.len() {
        return Err(Error::Oversample {
            requested: n,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, pool.len(), n);

    let d = ds.axes.len();
    let mut coords = Array::zeros(n, d);
    let mut targets = Array::zeros(n, variables.len());
    let vars: Vec<&[f64]> = variables
        .iter()
        .map(|name| ds.var(name))
        .collect::<Result<_>>()?;
    for (row, pick) in chosen.iter().enumerate() {
        let flat = pool[pick];
        for (j, c) in ds.coords_of(flat).into_iter().enumerate() {
            coords.set(row, j, c);
        }
        for (k, v) in vars.iter().enumerate() {
            targets.set(row, k, v[flat]);
        }
    }
    let role = match selector {
        GridSelector::Initial => PointRole::Initial,
        GridSelector::Boundary => PointRole::Boundary,
        GridSelector::TimeSlice(_) | GridSelector::Interior => PointRole::Observation,
    };
    let targets = if variables.is_empty() { None } else { Some(targets) };
    PointSet::new(coords, targets, role)
}

/// Endless epoch-reshuffled iterator over fixed-size minibatches of a point
/// cloud; partial trailing batches are dropped so every batch has the same
/// shape. Single consumer.
#[derive(Debug)]
pub struct MinibatchStream {
    points: PointSet,
    rng: ChaCha20Rng,
    perm: Vec<usize>,
    cursor: usize,
    batch: usize,
}

pub fn minibatch_stream(points: PointSet, batch: usize, seed: u64) -> Result<MinibatchStream> {
    if batch == 0 || batch > points.len() {
        return Err(Error::BatchTooLarge {
            batch,
            size: points.len(),
        });
    }
    Ok(MinibatchStream {
        perm: (0..points.len()).collect(),
        // Cursor at the end forces a reshuffle on the first next().
        cursor: points.len(),
        rng: ChaCha20Rng::seed_from_u64(seed),
        points,
        batch,
    })
}

impl Iterator for MinibatchStream {
    type Item = PointSet;

    fn next(&mut self) -> Option<PointSet> {
        if self.cursor + self.batch > self.perm.len() {
            self.perm.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let idx = &self.perm[self.cursor..self.cursor + self.batch];
        self.cursor += self.batch;
        Some(self.points.gather(idx))
    }
}

impl MinibatchStream {
    /// Full batches per epoch.
    pub fn batches_per_epoch(&self) -> usize {
        self.perm.len() / self.batch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_grid() -> GridDataset {
        GridDataset::new(
            "toy",
            vec![
                GridAxis {
                    name: "t".into(),
                    values: vec![0.0, 1.0],
                },
                GridAxis {
                    name: "x".into(),
                    values: vec![-1.0, 1.0],
                },
            ],
            vec![("u".into(), vec![1.0, 2.0, 3.0, 4.0])],
        )
        .unwrap()
    }

    #[test]
    fn dataset_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.pgd");
        let mut ds = toy_grid();
        ds.meta.insert("nu".into(), "0.0031830988618".into());
        ds.save(&path).unwrap();
        let back = GridDataset::load(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.pgd");
        toy_grid().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        match GridDataset::load(&path) {
            Err(Error::CorruptDataset(_)) => {}
            other => panic!("expected CorruptDataset, got {other:?}"),
        }
    }

    #[test]
    fn extent_mismatch_is_corrupt() {
        let err = GridDataset::new(
            "bad",
            vec![GridAxis {
                name: "x".into(),
                values: vec![0.0, 1.0, 2.0],
            }],
            vec![("u".into(), vec![1.0, 2.0])],
        )
        .unwrap_err();
        assert!(matches!(err, Error::CorruptDataset(_)));
    }

    #[test]
    fn non_monotone_axis_is_rejected() {
        let err = GridDataset::new(
            "bad",
            vec![GridAxis {
                name: "x".into(),
                values: vec![0.0, 2.0, 1.0],
            }],
            vec![("u".into(), vec![1.0, 2.0, 3.0])],
        )
        .unwrap_err();
        assert!(matches!(err, Error::BadAxis(_)));
    }

    #[test]
    fn lhs_stratifies_each_axis() {
        let bounds = DomainBounds::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let n = 1000;
        let ps = sample_collocation(&bounds, n, 9).unwrap();
        for j in 0..2 {
            let mut counts = vec![0usize; n];
            for i in 0..n {
                let bin = (ps.coords.get(i, j) * n as f64).floor() as usize;
                counts[bin.min(n - 1)] += 1;
            }
            assert!(counts.iter().all(|&c| c == 1), "axis {j} not stratified");
        }
    }

    #[test]
    fn lhs_is_deterministic_and_in_box() {
        let bounds = DomainBounds::new(vec![-2.0], vec![3.0]).unwrap();
        let a = sample_collocation(&bounds, 1, 4).unwrap();
        let b = sample_collocation(&bounds, 1, 4).unwrap();
        assert_eq!(a.coords.as_slice(), b.coords.as_slice());
        a.check_bounds(&bounds).unwrap();
        assert_eq!(a.role, PointRole::Collocation);
        assert!(a.targets.is_none());
    }

    #[test]
    fn initial_selector_pins_time_and_gathers_targets() {
        let ds = toy_grid();
        let ps = sample_from_grid(&ds, GridSelector::Initial, 2, 1, &["u"]).unwrap();
        for i in 0..2 {
            assert_eq!(ps.coords.get(i, 0), 0.0);
            let want = if ps.coords.get(i, 1) == -1.0 { 1.0 } else { 2.0 };
            assert_eq!(ps.targets.as_ref().unwrap().get(i, 0), want);
        }
        assert_eq!(ps.role, PointRole::Initial);
    }

    #[test]
    fn boundary_selector_keeps_spatial_edges_only() {
        let ds = GridDataset::new(
            "b",
            vec![
                GridAxis {
                    name: "t".into(),
                    values: vec![0.0, 0.5, 1.0],
                },
                GridAxis {
                    name: "x".into(),
                    values: vec![-1.0, 0.0, 1.0],
                },
            ],
            vec![("u".into(), (0..9).map(|i| i as f64).collect())],
        )
        .unwrap();
        let ps = sample_from_grid(&ds, GridSelector::Boundary, 6, 2, &["u"]).unwrap();
        for i in 0..ps.len() {
            let x = ps.coords.get(i, 1);
            assert!(x == -1.0 || x == 1.0);
        }
    }

    #[test]
    fn full_count_is_a_permutation_and_oversample_errors() {
        let ds = toy_grid();
        let ps = sample_from_grid(&ds, GridSelector::Interior, 4, 3, &["u"]).unwrap();
        let mut got: Vec<f64> = (0..4).map(|i| ps.targets.as_ref().unwrap().get(i, 0)).collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![1.0, 2.0, 3.0, 4.0]);
        match sample_from_grid(&ds, GridSelector::Initial, 3, 0, &["u"]) {
            Err(Error::Oversample {
                requested: 3,
                available: 2,
            }) => {}
            other => panic!("expected Oversample, got {other:?}"),
        }
    }

    #[test]
    fn minibatches_cover_each_epoch_and_reshuffle() {
        let coords = Array::from_fn(10, 1, |i, _| i as f64);
        let ps = PointSet::new(coords, None, PointRole::Observation).unwrap();
        let mut stream = minibatch_stream(ps.clone(), 5, 6).unwrap();
        assert_eq!(stream.batches_per_epoch(), 2);
        let e1: Vec<f64> = (0..2)
            .flat_map(|_| stream.next().unwrap().coords.as_slice().to_vec())
            .collect();
        let e2: Vec<f64> = (0..2)
            .flat_map(|_| stream.next().unwrap().coords.as_slice().to_vec())
            .collect();
        let mut s1 = e1.clone();
        let mut s2 = e2.clone();
        s1.sort_by(f64::total_cmp);
        s2.sort_by(f64::total_cmp);
        let all: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(s1, all);
        assert_eq!(s2, all);
        assert_ne!(e1, e2, "epochs should reshuffle");

        // Same seed reproduces the whole stream.
        let mut again = minibatch_stream(ps.clone(), 5, 6).unwrap();
        let r1: Vec<f64> = (0..2)
            .flat_map(|_| again.next().unwrap().coords.as_slice().to_vec())
            .collect();
        assert_eq!(e1, r1);

        match minibatch_stream(ps, 11, 0) {
            Err(Error::BatchTooLarge { batch: 11, size: 10 }) => {}
            other => panic!("expected BatchTooLarge, got {other:?}"),
        }
    }

    #[test]
    fn drop_last_keeps_batches_full() {
        let coords = Array::from_fn(10, 2, |i, j| (i * 2 + j) as f64);
        let ps = PointSet::new(coords, None, PointRole::Collocation).unwrap();
        let mut stream = minibatch_stream(ps, 4, 1).unwrap();
        for _ in 0..6 {
            assert_eq!(stream.next().unwrap().coords.shape(), (4, 2));
        }
        assert_eq!(stream.batches_per_epoch(), 2);
    }

    #[test]
    fn csv_import_matches_in_memory_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        std::fs::write(
            &path,
            "t,x,u\n0,-1,1\n0,1,2\n1,-1,3\n1,1,4\n",
        )
        .unwrap();
        let ds = GridDataset::import_csv(&path, "toy").unwrap();
        assert_eq!(ds, toy_grid());

        std::fs::write(&path, "t,x,u\n0,-1,1\n0,1,2\n1,-1,3\n").unwrap();
        assert!(matches!(
            GridDataset::import_csv(&path, "toy"),
            Err(Error::CorruptDataset(_))
        ));
    }
}
