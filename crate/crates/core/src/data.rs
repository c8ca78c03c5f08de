//! Dataset ingestion, standardization, synthetic generators and splits.
//!
//! Two on-disk formats are understood: a headed CSV table and the `HSCUBE01`
//! hyperspectral cube container (band-interleaved-by-pixel payload with an
//! optional 16-bit label plane). Cube label 0 marks unlabelled background.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param, shape, Error, Result};
use crate::scalar::Scalar;

/// Magic bytes opening every cube file.
pub const CUBE_MAGIC: &[u8; 8] = b"HSCUBE01";

/// Image geometry of a dataset whose rows are pixels in row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples-by-features table with optional labels and image geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix<T> {
    values: Array2<T>,
    labels: Option<Vec<Option<usize>>>,
    class_names: Vec<String>,
    grid: Option<Grid>,
    feature_means: Vec<T>,
    feature_stds: Vec<T>,
    manifold_coord: Option<Vec<T>>,
}

impl<T: Scalar> DataMatrix<T> {
    /// Wraps an unlabelled value matrix.
    pub fn new(values: Array2<T>) -> Result<Self> {
        let d = values.ncols();
        if values.nrows() == 0 || d == 0 {
            return Err(shape("data matrix needs at least one row and one column"));
        }
        Ok(Self {
            values,
            labels: None,
            class_names: Vec::new(),
            grid: None,
            feature_means: vec![T::zero(); d],
            feature_stds: vec![T::one(); d],
            manifold_coord: None,
        })
    }

    /// Attaches labels. `None` entries are unlabelled samples. Class ids must
    /// form the contiguous range `0..C` with every id used.
    pub fn with_labels(mut self, labels: Vec<Option<usize>>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(shape(format!(
                "{} labels for {} samples",
                labels.len(),
                self.n()
            )));
        }
        let classes = labels.iter().flatten().map(|&c| c + 1).max().unwrap_or(0);
        let mut seen = vec![false; classes];
        for &c in labels.iter().flatten() {
            seen[c] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Schema(format!(
                "class id {missing} unused; ids must be contiguous"
            )));
        }
        if self.class_names.len() != classes {
            self.class_names = (0..classes).map(|c| c.to_string()).collect();
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Replaces the human-readable class names (one per class id).
    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_classes() {
            return Err(shape(format!(
                "{} class names for {} classes",
                names.len(),
                self.num_classes()
            )));
        }
        self.class_names = names;
        Ok(self)
    }

    pub fn with_grid(mut self, grid: Grid) -> Result<Self> {
        if grid.len() != self.n() {
            return Err(shape(format!(
                "grid {}x{} does not cover {} samples",
                grid.height,
                grid.width,
                self.n()
            )));
        }
        self.grid = Some(grid);
        Ok(self)
    }

    pub fn with_manifold_coord(mut self, coord: Vec<T>) -> Result<Self> {
        if coord.len() != self.n() {
            return Err(shape("manifold coordinate length differs from sample count"));
        }
        self.manifold_coord = Some(coord);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn labels(&self) -> Option<&[Option<usize>]> {
        self.labels.as_deref()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .map(|l| l.iter().flatten().map(|&c| c + 1).max().unwrap_or(0))
            .unwrap_or(0)
    }

    pub fn grid(&self) -> Option<Grid> {
        self.grid
    }

    pub fn feature_means(&self) -> &[T] {
        &self.feature_means
    }

    pub fn feature_stds(&self) -> &[T] {
        &self.feature_stds
    }

    /// Unrolled generative coordinate for manifold fixtures (swiss roll `t`).
    pub fn manifold_coord(&self) -> Option<&[T]> {
        self.manifold_coord.as_deref()
    }

    /// Indices of samples carrying a label, ascending.
    pub fn labelled_indices(&self) -> Vec<usize> {
        match &self.labels {
            Some(l) => (0..l.len()).filter(|&i| l[i].is_some()).collect(),
            None => Vec::new(),
        }
    }

    /// Copy with the labels of `hidden` samples removed (used to keep test
    /// samples out of supervised training).
    pub fn hide_labels(&self, hidden: &[usize]) -> Self {
        let mut out = self.clone();
        if let Some(labels) = out.labels.as_mut() {
            for &i in hidden {
                labels[i] = None;
            }
        }
        out
    }

    /// Column-wise z-scores with population standard deviation.
    ///
    /// Constant columns (standard deviation below `1e-12` relative to the
    /// column magnitude) become all-zero with a recorded std of 1.
    pub fn standardize(&self) -> Result<Self> {
        let n = self.n();
        if n < 2 {
            return Err(param("standardization needs at least 2 samples"));
        }
        let nf = T::from_count(n);
        let mut values = self.values.clone();
        let mut means = Vec::with_capacity(self.d());
        let mut stds = Vec::with_capacity(self.d());
        for mut col in values.axis_iter_mut(Axis(1)) {
            let mean = col.iter().copied().sum::<T>() / nf;
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let mut std = var.sqrt();
            let constant = std <= T::lit(1e-12) * mean.abs().max(T::one());
            if constant {
                std = T::one();
                col.fill(T::zero());
            } else {
                col.mapv_inplace(|v| (v - mean) / std);
            }
            means.push(mean);
            stds.push(std);
        }
        let mut out = self.clone();
        out.values = values;
        out.feature_means = means;
        out.feature_stds = stds;
        Ok(out)
    }

    /// Subset of rows in the given order. Grid geometry is dropped.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let values = self.values.select(Axis(0), idx);
        Self {
            values,
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            class_names: self.class_names.clone(),
            grid: None,
            feature_means: self.feature_means.clone(),
            feature_stds: self.feature_stds.clone(),
            manifold_coord: self
                .manifold_coord
                .as_ref()
                .map(|c| idx.iter().map(|&i| c[i]).collect()),
        }
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Remaps raw label strings to contiguous ids in sorted order. Numeric labels
/// sort numerically, anything else lexicographically. Empty cells stay
/// unlabelled.
fn remap_labels(raw: &[String]) -> (Vec<Option<usize>>, Vec<String>) {
    let mut uniq: Vec<&str> = raw.iter().map(String::as_str).filter(|s| !s.is_empty()).collect();
    let numeric = uniq.iter().all(|s| s.parse::<f64>().is_ok());
    if numeric {
        uniq.sort_by(|a, b| {
            let (x, y) = (a.parse::<f64>().unwrap(), b.parse::<f64>().unwrap());
            x.total_cmp(&y).then_with(|| a.cmp(b))
        });
    } else {
        uniq.sort_unstable();
    }
    uniq.dedup();
    let index: BTreeMap<&str, usize> = uniq.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let ids = raw
        .iter()
        .map(|s| index.get(s.as_str()).copied())
        .collect();
    (ids, uniq.into_iter().map(str::to_owned).collect())
}

/// Reads a headed CSV table. Every column except `label_column` is a feature.
pub fn load_tabular<T: Scalar>(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<DataMatrix<T>> {
    let file = File::open(path.as_ref())?;
    read_tabular(file, label_column)
}

/// [`load_tabular`] over any reader.
pub fn read_tabular<T: Scalar, R: Read>(reader: R, label_column: Option<&str>) -> Result<DataMatrix<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let label_idx = match label_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Schema(format!("label column `{name}` not found")))?,
        ),
        None => None,
    };
    let d = headers.len() - usize::from(label_idx.is_some());
    if d == 0 {
        return Err(Error::Schema("no feature columns".into()));
    }

    let mut flat = Vec::new();
    let mut raw_labels = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => parse_err(
                line,
                format!("expected {expected_len} fields, found {len}"),
            ),
            _ => parse_err(line, e.to_string()),
        })?;
        for (col, cell) in rec.iter().enumerate() {
            if Some(col) == label_idx {
                raw_labels.push(cell.to_owned());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                parse_err(line, format!("non-numeric value `{cell}` in column `{}`", &headers[col]))
            })?;
            flat.push(T::lit(v));
        }
    }
    let n = flat.len() / d;
    if n < 2 {
        return Err(Error::Schema("fewer than 2 samples".into()));
    }
    let values = Array2::from_shape_vec((n, d), flat).map_err(|e| shape(e.to_string()))?;
    let data = DataMatrix::new(values)?;
    match label_idx {
        Some(_) => {
            let (ids, names) = remap_labels(&raw_labels);
            data.with_labels(ids)?.with_class_names(names)
        }
        None => Ok(data),
    }
}

/// Formats a number with 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes features as `x0..x{d-1}` plus a `label` column when labels exist.
pub fn write_tabular<T: Scalar>(data: &DataMatrix<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    let mut header: Vec<String> = (0..data.d()).map(|j| format!("x{j}")).collect();
    if data.labels().is_some() {
        header.push("label".into());
    }
    writeln!(w, "{}", header.join(","))?;
    for i in 0..data.n() {
        let mut cells: Vec<String> = data.values.row(i).iter().map(|v| fmt_num(v.as_f64())).collect();
        if let Some(labels) = data.labels() {
            cells.push(labels[i].map(|c| data.class_names[c].clone()).unwrap_or_default());
        }
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Header line of a cube file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperCubeHeader {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub dtype: CubeDtype,
    pub has_labels: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CubeDtype {
    F32,
    F64,
}

impl CubeDtype {
    fn width(self) -> usize {
        match self {
            CubeDtype::F32 => 4,
            CubeDtype::F64 => 8,
        }
    }
}

impl HyperCubeHeader {
    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(Error::Format(format!(
                "zero dimension in cube header {}x{}x{}",
                self.height, self.width, self.bands
            )));
        }
        Ok(())
    }

    /// Expected byte count after the header line.
    pub fn payload_len(&self) -> usize {
        let pixels = self.height * self.width;
        pixels * self.bands * self.dtype.width() + if self.has_labels { pixels * 2 } else { 0 }
    }
}

/// Reads an `HSCUBE01` cube. Samples are pixels in row-major order; label 0
/// becomes "unlabelled", remaining ids are remapped to `0..C` in ascending
/// order with the original ids kept as class names.
pub fn load_cube<T: Scalar>(path: impl AsRef<Path>) -> Result<DataMatrix<T>> {
    read_cube(BufReader::new(File::open(path.as_ref())?))
}

pub fn read_cube<T: Scalar, R: BufRead>(mut reader: R) -> Result<DataMatrix<T>> {
    let mut magic = [0u8; 8];
    reader
        .read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated magic".into()))?;
    if &magic != CUBE_MAGIC {
        return Err(Error::Format("bad magic, expected HSCUBE01".into()));
    }
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Format("unterminated header line".into()));
    }
    let header: HyperCubeHeader = serde_json::from_slice(&line[..line.len() - 1])
        .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    header.validate()?;

    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() != header.payload_len() {
        return Err(Error::Format(format!(
            "payload is {} bytes, header implies {}",
            payload.len(),
            header.payload_len()
        )));
    }

    let pixels = header.height * header.width;
    let count = pixels * header.bands;
    let width = header.dtype.width();
    let (values_raw, label_raw) = payload.split_at(count * width);
    let flat: Vec<T> = match header.dtype {
        CubeDtype::F32 => values_raw
            .chunks_exact(4)
            .map(|c| T::lit(f64::from(f32::from_le_bytes(c.try_into().unwrap()))))
            .collect(),
        CubeDtype::F64 => values_raw
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect(),
    };
    let values = Array2::from_shape_vec((pixels, header.bands), flat).map_err(|e| shape(e.to_string()))?;
    let data = DataMatrix::new(values)?.with_grid(Grid {
        height: header.height,
        width: header.width,
    })?;
    if !header.has_labels {
        return Ok(data);
    }
    let raw: Vec<u16> = label_raw
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    let mut classes: Vec<u16> = raw.iter().copied().filter(|&v| v != 0).collect();
    classes.sort_unstable();
    classes.dedup();
    let ids = raw
        .iter()
        .map(|&v| if v == 0 { None } else { classes.binary_search(&v).ok() })
        .collect();
    data.with_labels(ids)?
        .with_class_names(classes.iter().map(u16::to_string).collect())
}

/// Writes a grid-shaped dataset as a cube. Labels are written back under their
/// original ids when those are ascending non-zero 16-bit integers, otherwise
/// as `class + 1`.
pub fn write_cube<T: Scalar>(data: &DataMatrix<T>, dtype: CubeDtype, path: impl AsRef<Path>) -> Result<()> {
    let grid = data
        .grid()
        .ok_or_else(|| Error::Schema("dataset has no image grid".into()))?;
    let header = HyperCubeHeader {
        height: grid.height,
        width: grid.width,
        bands: data.d(),
        dtype,
        has_labels: data.labels().is_some(),
    };
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(CUBE_MAGIC)?;
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for &v in data.values.iter() {
        match dtype {
            CubeDtype::F32 => w.write_all(&(v.as_f64() as f32).to_le_bytes())?,
            CubeDtype::F64 => w.write_all(&v.as_f64().to_le_bytes())?,
        }
    }
    if let Some(labels) = data.labels() {
        if data.num_classes() >= usize::from(u16::MAX) {
            return Err(Error::Format("too many classes for 16-bit cube labels".into()));
        }
        let original: Option<Vec<u16>> = (0..data.num_classes())
            .map(|c| data.class_names[c].parse::<u16>().ok().filter(|&v| v != 0))
            .collect();
        let ids = match original {
            Some(ids) if ids.windows(2).all(|w| w[0] < w[1]) => ids,
            _ => (1..=data.num_classes() as u16).collect(),
        };
        for l in labels {
            let v = l.map(|c| ids[c]).unwrap_or(0);
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Isotropic Gaussian clusters. Centers are uniform in `[-10, 10]^d`; samples
/// are stored class by class.
pub fn make_blobs<T: Scalar>(
    n_per_class: usize,
    classes: usize,
    d: usize,
    spread: f64,
    seed: u64,
) -> Result<DataMatrix<T>> {
    if n_per_class == 0 || classes == 0 || d == 0 {
        return Err(param("blob counts and dimension must be at least 1"));
    }
    if !(spread > 0.0) {
        return Err(param("blob spread must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect())
        .collect();
    let n = n_per_class * classes;
    let mut flat = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            for &mu in center {
                let z: f64 = rng.sample(StandardNormal);
                flat.push(T::lit(mu + spread * z));
            }
            labels.push(Some(c));
        }
    }
    DataMatrix::new(Array2::from_shape_vec((n, d), flat).map_err(|e| shape(e.to_string()))?)?
        .with_labels(labels)
}

/// Swiss roll in 3-D: `x = t cos t`, `y = h`, `z = t sin t` with
/// `t ~ U(1.5π, 4.5π)` and `h ~ U(0, 21)`, plus isotropic Gaussian noise.
/// The generative `t` is kept as the manifold coordinate.
pub fn make_swiss_roll<T: Scalar>(n: usize, noise: f64, seed: u64) -> Result<DataMatrix<T>> {
    if n < 10 {
        return Err(param("swiss roll needs at least 10 samples"));
    }
    if noise < 0.0 {
        return Err(param("noise must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = Vec::with_capacity(n * 3);
    let mut coord = Vec::with_capacity(n);
    for _ in 0..n {
        let t = 1.5 * std::f64::consts::PI * (1.0 + 2.0 * rng.gen::<f64>());
        let h = 21.0 * rng.gen::<f64>();
        let mut p = [t * t.cos(), h, t * t.sin()];
        if noise > 0.0 {
            for v in &mut p {
                let z: f64 = rng.sample(StandardNormal);
                *v += noise * z;
            }
        }
        flat.extend(p.iter().map(|&v| T::lit(v)));
        coord.push(T::lit(t));
    }
    DataMatrix::new(Array2::from_shape_vec((n, 3), flat).map_err(|e| shape(e.to_string()))?)?
        .with_manifold_coord(coord)
}

/// Square image split into four quadrant blocks, one class each. Each class
/// has a random spectral signature (standard normal per band) and pixels add
/// Gaussian noise of standard deviation `noise`.
pub fn make_quadrant_cube<T: Scalar>(side: usize, bands: usize, noise: f64, seed: u64) -> Result<DataMatrix<T>> {
    if side < 2 || bands == 0 {
        return Err(param("quadrant cube needs side >= 2 and at least one band"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signatures: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..bands).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let half = side / 2;
    let mut flat = Vec::with_capacity(side * side * bands);
    let mut labels = Vec::with_capacity(side * side);
    for r in 0..side {
        for c in 0..side {
            let class = 2 * usize::from(r >= half) + usize::from(c >= half);
            for &mu in &signatures[class] {
                let z: f64 = rng.sample(StandardNormal);
                flat.push(T::lit(mu + noise * z));
            }
            labels.push(Some(class));
        }
    }
    DataMatrix::new(Array2::from_shape_vec((side * side, bands), flat).map_err(|e| shape(e.to_string()))?)?
        .with_grid(Grid {
            height: side,
            width: side,
        })?
        .with_labels(labels)
}

/// Train/test partition of sample indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class seeded split over the labelled samples. Each class contributes
/// `round(fraction * count)` training samples, clamped so both sides get at
/// least one. Unlabelled samples are in neither side.
pub fn stratified_split(labels: &[Option<usize>], train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(param("train fraction must lie in (0, 1)"));
    }
    let classes = labels.iter().flatten().map(|&c| c + 1).max().unwrap_or(0);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            members[*c].push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (c, mut idx) in members.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(param(format!("class {c} has fewer than 2 samples; cannot stratify")));
        }
        idx.shuffle(&mut rng);
        let k = ((train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        split.train.extend_from_slice(&idx[..k]);
        split.test.extend_from_slice(&idx[k..]);
    }
    split.train.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn csv<T: Scalar>(text: &str, label: Option<&str>) -> Result<DataMatrix<T>> {
        read_tabular(text.as_bytes(), label)
    }

    #[test]
    fn string_labels_map_in_sorted_order() {
        let d: DataMatrix<f64> = csv("f1,f2,cls\n1,2,a\n3,4,a\n5,6,b\n", Some("cls")).unwrap();
        assert_eq!(d.labels().unwrap(), &[Some(0), Some(0), Some(1)]);
        assert_eq!(d.values(), &array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
    }

    #[test]
    fn numeric_labels_remap_contiguously() {
        let d: DataMatrix<f64> = csv("x,y\n0,5\n1,9\n2,5\n", Some("y")).unwrap();
        assert_eq!(d.labels().unwrap(), &[Some(0), Some(1), Some(0)]);
        // 10 must sort after 9
        let d: DataMatrix<f64> = csv("x,y\n0,10\n1,9\n", Some("y")).unwrap();
        assert_eq!(d.labels().unwrap(), &[Some(1), Some(0)]);
    }

    #[test]
    fn tabular_errors() {
        let e = csv::<f64>("a,b\n1,2\n", None).unwrap_err();
        assert!(e.to_string().contains("fewer than 2 samples"), "{e}");
        let e = csv::<f64>("a,b\n1,2\n3\n", None).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = csv::<f64>("a,b\n1,2\n3,x\n", None).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = csv::<f64>("a,b\n1,2\n3,4\n", Some("label")).unwrap_err();
        assert!(matches!(e, Error::Schema(_)), "{e}");
    }

    #[test]
    fn standardize_examples() {
        let d = DataMatrix::new(array![[0.0, 3.0, 1.0], [2.0, 3.0, 2.0], [1.0, 3.0, 3.0]]).unwrap();
        let s = d.standardize().unwrap();
        let r = (1.5f64).sqrt();
        assert_abs_diff_eq!(s.values()[[0, 2]], -r, epsilon = 1e-12);
        assert_abs_diff_eq!(s.values()[[1, 2]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.values()[[2, 2]], r, epsilon = 1e-12);
        assert!(s.values().column(1).iter().all(|&v| v == 0.0));
        assert_eq!(s.feature_stds()[1], 1.0);

        let two = DataMatrix::new(array![[0.0], [2.0]]).unwrap().standardize().unwrap();
        assert_eq!(two.values(), &array![[-1.0], [1.0]]);

        let one = DataMatrix::new(array![[1.0]]).unwrap();
        assert!(one.standardize().is_err());
    }

    #[test]
    fn blobs_shape_and_determinism() {
        let a: DataMatrix<f64> = make_blobs(50, 3, 10, 1.0, 7).unwrap();
        let b: DataMatrix<f64> = make_blobs(50, 3, 10, 1.0, 7).unwrap();
        assert_eq!(a.values().dim(), (150, 10));
        assert_eq!(a, b);
        for c in 0..3 {
            assert_eq!(a.labels().unwrap().iter().filter(|l| **l == Some(c)).count(), 50);
        }
        assert!(make_blobs::<f64>(0, 3, 10, 1.0, 7).is_err());
        assert!(make_blobs::<f64>(5, 3, 10, 0.0, 7).is_err());
    }

    #[test]
    fn swiss_roll_on_surface_without_noise() {
        let d: DataMatrix<f64> = make_swiss_roll(500, 0.0, 1).unwrap();
        assert_eq!(d.values().dim(), (500, 3));
        let t = d.manifold_coord().unwrap();
        for (row, &t) in d.values().rows().into_iter().zip(t) {
            assert!((row[0] - t * t.cos()).abs() < 1e-9);
            assert!((row[2] - t * t.sin()).abs() < 1e-9);
        }
        assert_eq!(make_swiss_roll::<f64>(10, 0.1, 1).unwrap().n(), 10);
        assert!(make_swiss_roll::<f64>(9, 0.1, 1).is_err());
    }

    #[test]
    fn cube_round_trip_and_shapes() {
        let dir = std::env::temp_dir().join(format!("letsne-data-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let values = Array2::from_shape_fn((5, 2), |(i, j)| (i * 2 + j) as f64 * 0.1);
        let d = DataMatrix::new(values)
            .unwrap()
            .with_grid(Grid { height: 1, width: 5 })
            .unwrap();
        let p = dir.join("a.hsc");
        write_cube(&d, CubeDtype::F64, &p).unwrap();
        let back: DataMatrix<f64> = load_cube(&p).unwrap();
        assert_eq!(back.grid(), Some(Grid { height: 1, width: 5 }));
        assert_eq!(back.values(), d.values());

        // all-zero label plane: labels present, nothing supervised
        let q = make_quadrant_cube::<f64>(2, 3, 0.1, 1).unwrap().hide_labels(&[0, 1, 2, 3]);
        let p = dir.join("b.hsc");
        write_cube(&q, CubeDtype::F32, &p).unwrap();
        let back: DataMatrix<f64> = load_cube(&p).unwrap();
        assert_eq!(back.values().dim(), (4, 3));
        assert_eq!(back.labels().unwrap(), &[None, None, None, None]);
        assert!(back.labelled_indices().is_empty());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn cube_format_errors() {
        let mut bytes = CUBE_MAGIC.to_vec();
        bytes.extend_from_slice(br#"{"height":2,"width":2,"bands":1,"dtype":"f64","has_labels":false}"#);
        bytes.push(b'\n');
        bytes.extend_from_slice(&[0u8; 24]);
        let e = read_cube::<f64, _>(&bytes[..]).unwrap_err();
        assert!(matches!(e, Error::Format(_)), "{e}");

        let mut bytes = CUBE_MAGIC.to_vec();
        bytes.extend_from_slice(br#"{"height":0,"width":2,"bands":1,"dtype":"f64","has_labels":false}"#);
        bytes.push(b'\n');
        let e = read_cube::<f64, _>(&bytes[..]).unwrap_err();
        assert!(matches!(e, Error::Format(_)), "{e}");
    }

    #[test]
    fn stratified_split_keeps_both_sides() {
        let labels: Vec<Option<usize>> = (0..20).map(|i| Some(i % 2)).chain([None]).collect();
        let s = stratified_split(&labels, 0.7, 3).unwrap();
        assert_eq!(s.train.len(), 14);
        assert_eq!(s.test.len(), 6);
        assert!(!s.train.contains(&20) && !s.test.contains(&20));
        assert!(stratified_split(&[Some(0), Some(1), Some(1)], 0.5, 0).is_err());
    }
}
