//! Synthetic class-conditional point sets with known mode centers, plus the
//! class/sample subsetting used for limited-data sweeps.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Radius of class 0's ring; class `k` sits at `RING_BASE + k * RING_GAP`.
pub const RING_BASE: f64 = 1.0;
pub const RING_GAP: f64 = 0.5;
pub const GRID_SPACING: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Modes evenly spaced on a circle whose radius grows with the class id.
    Ring,
    /// Class `k` occupies row `k` of a square lattice.
    Grid,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(Self::Ring),
            "grid" => Ok(Self::Grid),
            other => Err(Error::contract(format!("unknown layout '{other}'"))),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ring => "ring",
            Self::Grid => "grid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub modes_per_class: usize,
    pub mode_sigma: f64,
    pub layout: Layout,
    pub seed: u64,
    pub dim: usize,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.samples_per_class == 0 || self.modes_per_class == 0 {
            return Err(Error::Config("dataset counts must be positive".into()));
        }
        if !(self.mode_sigma > 0.0 && self.mode_sigma.is_finite()) {
            return Err(Error::Config(format!("mode_sigma must be > 0, got {}", self.mode_sigma)));
        }
        if self.dim < 2 {
            return Err(Error::Config("data dimension must be at least 2".into()));
        }
        Ok(())
    }
}

/// Labeled points with the ground-truth mode layout they were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassConditionalDataset {
    dim: usize,
    points: Vec<f64>,
    labels: Vec<usize>,
    source_modes: Vec<usize>,
    mode_centers: Vec<Vec<Vec<f64>>>,
    mode_sigma: f64,
}

fn mode_center(layout: Layout, class: usize, mode: usize, num_classes: usize, modes: usize, dim: usize) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    match layout {
        Layout::Ring => {
            let radius = RING_BASE + RING_GAP * class as f64;
            // stagger neighbouring rings so their modes do not line up
            let angle = std::f64::consts::TAU * (mode as f64 + class as f64 / num_classes as f64) / modes as f64;
            c[0] = radius * angle.cos();
            c[1] = radius * angle.sin();
        }
        Layout::Grid => {
            c[0] = GRID_SPACING * mode as f64;
            c[1] = GRID_SPACING * class as f64;
        }
    }
    c
}

/// Draws the dataset described by `spec`. Point `i` of a class uses that
/// class's mode `i % modes_per_class`; offsets longer than `6σ` are shrunk
/// radially onto the `6σ` sphere.
pub fn make_dataset(spec: &DatasetSpec) -> Result<ClassConditionalDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (nc, m, d) = (spec.num_classes, spec.modes_per_class, spec.dim);
    let mode_centers: Vec<Vec<Vec<f64>>> = (0..nc)
        .map(|k| (0..m).map(|j| mode_center(spec.layout, k, j, nc, m, d)).collect())
        .collect();

    let n = nc * spec.samples_per_class;
    let mut points = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut source_modes = Vec::with_capacity(n);
    let limit = 6.0 * spec.mode_sigma;
    for (k, centers) in mode_centers.iter().enumerate() {
        for i in 0..spec.samples_per_class {
            let mode = i % m;
            let mut offset: Vec<f64> = (0..d)
                .map(|_| spec.mode_sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            let norm = offset.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > limit {
                offset.iter_mut().for_each(|v| *v *= limit / norm);
            }
            points.extend(centers[mode].iter().zip(&offset).map(|(c, o)| c + o));
            labels.push(k);
            source_modes.push(mode);
        }
    }
    Ok(ClassConditionalDataset {
        dim: d,
        points,
        labels,
        source_modes,
        mode_centers,
        mode_sigma: spec.mode_sigma,
    })
}

impl ClassConditionalDataset {
    /// Assembles a dataset from parts, checking label and dimension consistency.
    pub fn from_parts(
        dim: usize,
        points: Vec<f64>,
        labels: Vec<usize>,
        mode_centers: Vec<Vec<Vec<f64>>>,
        mode_sigma: f64,
    ) -> Result<Self> {
        if dim == 0 || points.len() != labels.len() * dim {
            return Err(Error::contract("points and labels disagree in length"));
        }
        let nc = mode_centers.len();
        if nc == 0 {
            return Err(Error::contract("dataset needs at least one class"));
        }
        if mode_centers.iter().flatten().any(|c| c.len() != dim) || mode_centers.iter().any(Vec::is_empty) {
            return Err(Error::contract("every class needs mode centers of the data dimension"));
        }
        let mut counts = vec![0usize; nc];
        for &l in &labels {
            if l >= nc {
                return Err(Error::Index {
                    what: "label",
                    index: l,
                    len: nc,
                });
            }
            counts[l] += 1;
        }
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(Error::contract(format!("class {k} has no points")));
        }
        let source_modes = (0..labels.len())
            .map(|i| {
                let p = &points[i * dim..(i + 1) * dim];
                nearest(p, &mode_centers[labels[i]])
            })
            .collect();
        Ok(Self {
            dim,
            points,
            labels,
            source_modes,
            mode_centers,
            mode_sigma,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.mode_centers.len()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn source_modes(&self) -> &[usize] {
        &self.source_modes
    }

    pub fn mode_centers(&self) -> &[Vec<Vec<f64>>] {
        &self.mode_centers
    }

    pub fn mode_sigma(&self) -> f64 {
        self.mode_sigma
    }

    pub fn total_modes(&self) -> usize {
        self.mode_centers.iter().map(Vec::len).sum()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Indices of the points carrying `label`, in storage order.
    pub fn class_indices(&self, label: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == label).collect()
    }

    pub fn as_tensor(&self) -> Result<Tensor> {
        Tensor::matrix(self.len(), self.dim, self.points.clone())
    }

    /// Keeps a uniform random set of classes and, within each, a uniform
    /// random set of points. Kept classes and points stay in their original
    /// order and labels are re-indexed densely from 0.
    pub fn subset(&self, num_classes: usize, samples_per_class: usize, seed: u64) -> Result<Self> {
        let min_class = self.class_counts().into_iter().min().unwrap_or(0);
        if num_classes == 0 || num_classes > self.num_classes() {
            return Err(Error::contract(format!(
                "cannot keep {num_classes} of {} classes",
                self.num_classes()
            )));
        }
        if samples_per_class == 0 || samples_per_class > min_class {
            return Err(Error::contract(format!(
                "cannot keep {samples_per_class} samples per class, smallest class has {min_class}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut classes = index::sample(&mut rng, self.num_classes(), num_classes).into_vec();
        classes.sort_unstable();

        let mut points = Vec::with_capacity(num_classes * samples_per_class * self.dim);
        let mut labels = Vec::new();
        let mut source_modes = Vec::new();
        for (new_label, &old) in classes.iter().enumerate() {
            let members = self.class_indices(old);
            let mut picks = index::sample(&mut rng, members.len(), samples_per_class).into_vec();
            picks.sort_unstable();
            for p in picks {
                let i = members[p];
                points.extend_from_slice(self.point(i));
                labels.push(new_label);
                source_modes.push(self.source_modes[i]);
            }
        }
        Ok(Self {
            dim: self.dim,
            points,
            labels,
            source_modes,
            mode_centers: classes.iter().map(|&c| self.mode_centers[c].clone()).collect(),
            mode_sigma: self.mode_sigma,
        })
    }

    /// Uniform with-replacement minibatch as a `batch × dim` tensor plus labels.
    pub fn minibatch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<(Tensor, Vec<usize>)> {
        if batch_size == 0 {
            return Err(Error::contract("batch_size must be >= 1"));
        }
        let mut pts = Vec::with_capacity(batch_size * self.dim);
        let mut labels = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let i = rng.random_range(0..self.len());
            pts.extend_from_slice(self.point(i));
            labels.push(self.labels[i]);
        }
        Ok((Tensor::matrix(batch_size, self.dim, pts)?, labels))
    }

    pub fn write_points_csv<W: Write>(&self, out: W) -> Result<()> {
        write_points_csv(out, self.dim, &self.points, &self.labels)
    }

    /// Writes `label,mode_index,c0,...` rows.
    pub fn write_centers_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let cols: Vec<String> = (0..self.dim).map(|i| format!("c{i}")).collect();
        writeln!(out, "label,mode_index,{}", cols.join(","))?;
        for (k, centers) in self.mode_centers.iter().enumerate() {
            for (j, c) in centers.iter().enumerate() {
                let coords: Vec<String> = c.iter().map(f64::to_string).collect();
                writeln!(out, "{k},{j},{}", coords.join(","))?;
            }
        }
        Ok(())
    }

    pub fn save(&self, points_path: &Path, centers_path: &Path) -> Result<()> {
        self.write_points_csv(std::io::BufWriter::new(std::fs::File::create(points_path)?))?;
        self.write_centers_csv(std::io::BufWriter::new(std::fs::File::create(centers_path)?))?;
        Ok(())
    }

    pub fn load(points_path: &Path, centers_path: &Path, mode_sigma: f64) -> Result<Self> {
        let (dim, points, labels) = read_points_csv(std::fs::File::open(points_path)?)?;
        let centers = read_centers_csv(std::fs::File::open(centers_path)?)?;
        Self::from_parts(dim, points, labels, centers, mode_sigma)
    }
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> usize {
    let dist = |c: &Vec<f64>| c.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    (0..centers.len())
        .min_by(|&a, &b| dist(&centers[a]).total_cmp(&dist(&centers[b])))
        .unwrap_or(0)
}

/// Writes `label,x0,...,x{d-1}` rows.
pub fn write_points_csv<W: Write>(mut out: W, dim: usize, points: &[f64], labels: &[usize]) -> Result<()> {
    let cols: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    writeln!(out, "label,{}", cols.join(","))?;
    for (i, l) in labels.iter().enumerate() {
        let coords: Vec<String> = points[i * dim..(i + 1) * dim].iter().map(f64::to_string).collect();
        writeln!(out, "{l},{}", coords.join(","))?;
    }
    Ok(())
}

/// Reads a `label,x0,...` file into `(dim, flat points, labels)`.
pub fn read_points_csv<R: Read>(input: R) -> Result<(usize, Vec<f64>, Vec<usize>)> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("label") || headers.len() < 2 {
        return Err(Error::Format("points CSV must start with a 'label' column".into()));
    }
    let dim = headers.len() - 1;
    for (i, h) in headers.iter().skip(1).enumerate() {
        if h != format!("x{i}") {
            return Err(Error::Format(format!("unexpected column '{h}', expected 'x{i}'")));
        }
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        labels.push(parse_field::<usize>(&rec, 0)?);
        for j in 1..=dim {
            points.push(parse_field::<f64>(&rec, j)?);
        }
    }
    Ok((dim, points, labels))
}

/// Reads `label,mode_index,c0,...` rows into per-class center lists.
pub fn read_centers_csv<R: Read>(input: R) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("label") || headers.get(1) != Some("mode_index") || headers.len() < 3 {
        return Err(Error::Format("centers CSV must start with 'label,mode_index'".into()));
    }
    let dim = headers.len() - 2;
    let mut centers: Vec<Vec<Vec<f64>>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let label = parse_field::<usize>(&rec, 0)?;
        let mode = parse_field::<usize>(&rec, 1)?;
        let c = (2..2 + dim).map(|j| parse_field::<f64>(&rec, j)).collect::<Result<Vec<_>>>()?;
        if centers.len() <= label {
            centers.resize(label + 1, Vec::new());
        }
        if centers[label].len() != mode {
            return Err(Error::Format(format!("mode indices of class {label} must be consecutive")));
        }
        centers[label].push(c);
    }
    Ok(centers)
}

fn parse_field<T: FromStr>(rec: &csv::StringRecord, j: usize) -> Result<T> {
    let raw = rec
        .get(j)
        .ok_or_else(|| Error::Format(format!("missing column {j}")))?;
    raw.trim()
        .parse()
        .map_err(|_| Error::Format(format!("cannot parse '{raw}' in column {j}")))
}
