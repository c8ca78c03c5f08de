//! Image partitioning for the unlabelled mode: SLIC superpixels, greedy
//! region merging, and region-map CSV import/export.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{param, shape, Error, Result};
use crate::scalar::Scalar;

/// Multi-channel image, pixels row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(param("image dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(shape(format!(
                "{} values for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel(&self, idx: usize) -> &[T] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    /// Per-channel min-max scaling to `[0, 1]`; flat channels become 0.
    pub fn normalized(&self) -> Self {
        let c = self.channels;
        let mut lo = vec![T::infinity(); c];
        let mut hi = vec![T::neg_infinity(); c];
        for px in self.data.chunks_exact(c) {
            for k in 0..c {
                lo[k] = lo[k].min(px[k]);
                hi[k] = hi[k].max(px[k]);
            }
        }
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let k = i % c;
                let range = hi[k] - lo[k];
                if range > T::zero() {
                    (v - lo[k]) / range
                } else {
                    T::zero()
                }
            })
            .collect();
        Self { data, ..self.clone() }
    }
}

/// Partition of an image grid into disjoint, 4-connected regions with ids
/// `0..R`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMap {
    height: usize,
    width: usize,
    ids: Vec<usize>,
    count: usize,
}

impl RegionMap {
    /// Validates and relabels `ids` so they are contiguous in ascending order
    /// of the given values. Regions that are not 4-connected are rejected.
    pub fn new(height: usize, width: usize, ids: Vec<usize>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(param("region map dimensions must be positive"));
        }
        if ids.len() != height * width {
            return Err(shape(format!(
                "{} region ids for a {height}x{width} grid",
                ids.len()
            )));
        }
        let uniq: BTreeSet<usize> = ids.iter().copied().collect();
        let remap: BTreeMap<usize, usize> = uniq.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let dense: Vec<usize> = ids.iter().map(|v| remap[v]).collect();
        let comps = components(height, width, &dense);
        let mut seen = vec![None; uniq.len()];
        let mut broken: Option<usize> = None;
        for (px, &comp) in comps.iter().enumerate() {
            let region = dense[px];
            match seen[region] {
                None => seen[region] = Some(comp),
                Some(c) if c != comp => broken = Some(broken.map_or(ids[px], |b: usize| b.min(ids[px]))),
                _ => {}
            }
        }
        if let Some(original) = broken {
            return Err(Error::Format(format!("region {original} is not 4-connected")));
        }
        Ok(Self {
            height,
            width,
            ids: dense,
            count: uniq.len(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of regions.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.count];
        for &r in &self.ids {
            s[r] += 1;
        }
        s
    }
}

/// 4-connected components of equal-label pixels, numbered in scan order.
fn components(height: usize, width: usize, labels: &[usize]) -> Vec<usize> {
    let mut comp = vec![usize::MAX; labels.len()];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..labels.len() {
        if comp[start] != usize::MAX {
            continue;
        }
        comp[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            for q in neighbors4(height, width, p) {
                if comp[q] == usize::MAX && labels[q] == labels[start] {
                    comp[q] = next;
                    stack.push(q);
                }
            }
        }
        next += 1;
    }
    comp
}

fn neighbors4(height: usize, width: usize, p: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (p / width, p % width);
    let up = (r > 0).then(|| p - width);
    let down = (r + 1 < height).then(|| p + width);
    let left = (c > 0).then(|| p - 1);
    let right = (c + 1 < width).then(|| p + 1);
    [up, down, left, right].into_iter().flatten()
}

/// Renumbers labels by first appearance in row-major order.
fn relabel_scan_order(labels: &mut [usize]) -> usize {
    let mut map = BTreeMap::new();
    for l in labels.iter_mut() {
        let next = map.len();
        *l = *map.entry(*l).or_insert(next);
    }
    map.len()
}

/// Absorbs every fragment that is not the largest piece of its label into the
/// largest adjacent component, until each label is 4-connected.
fn enforce_connectivity(height: usize, width: usize, labels: &mut [usize]) {
    loop {
        let comps = components(height, width, labels);
        let ncomp = comps.iter().copied().max().map_or(0, |m| m + 1);
        let mut size = vec![0usize; ncomp];
        let mut comp_label = vec![0usize; ncomp];
        for (p, &c) in comps.iter().enumerate() {
            size[c] += 1;
            comp_label[c] = labels[p];
        }
        // primary component per label: largest, earliest on ties
        let mut primary: BTreeMap<usize, usize> = BTreeMap::new();
        for c in 0..ncomp {
            let e = primary.entry(comp_label[c]).or_insert(c);
            if size[c] > size[*e] {
                *e = c;
            }
        }
        let mut orphans: Vec<usize> = (0..ncomp).filter(|&c| primary[&comp_label[c]] != c).collect();
        if orphans.is_empty() {
            return;
        }
        orphans.sort_by_key(|&c| (size[c], c));
        // absorb the smallest orphan, then recompute
        let target = orphans[0];
        let mut best: Option<usize> = None;
        for (p, &c) in comps.iter().enumerate() {
            if c != target {
                continue;
            }
            for q in neighbors4(height, width, p) {
                let qc = comps[q];
                if qc != target && best.is_none_or(|b| (size[qc], std::cmp::Reverse(qc)) > (size[b], std::cmp::Reverse(b))) {
                    best = Some(qc);
                }
            }
        }
        let into = comp_label[best.expect("orphan fragment has a neighbor")];
        for (p, &c) in comps.iter().enumerate() {
            if c == target {
                labels[p] = into;
            }
        }
    }
}

/// SLIC superpixels: k-means in joint color/position space with a local
/// `2S × 2S` search window, `S = √(hw / target_regions)`, distance
/// `d_color + (compactness / S) · d_xy`, followed by a connectivity pass.
///
/// Seeds sit on a regular grid with `min(⌈√(K·w/h)⌉, K)` columns and
/// `round(K / columns)` rows. Pixel positions are
/// taken at pixel centers. Equal distances prefer the spatially nearer seed,
/// then the lower seed index.
pub fn slic<T: Scalar>(image: &Image<T>, target_regions: usize, compactness: f64, iters: usize) -> Result<RegionMap> {
    let (h, w, ch) = (image.height, image.width, image.channels);
    if target_regions < 1 {
        return Err(param("target region count must be at least 1"));
    }
    if target_regions > h * w {
        return Err(param("more target regions than pixels"));
    }
    if !(compactness >= 0.0) {
        return Err(param("compactness must be non-negative"));
    }
    let n = h * w;
    let step = ((n as f64) / target_regions as f64).sqrt();
    let nx = ((target_regions as f64 * w as f64 / h as f64).sqrt().ceil() as usize).clamp(1, w.min(target_regions));
    let ny = ((target_regions as f64 / nx as f64).round() as usize).clamp(1, h);

    struct Center {
        r: f64,
        c: f64,
        color: Vec<f64>,
    }
    let color_of = |p: usize| -> Vec<f64> { image.pixel(p).iter().map(|v| v.as_f64()).collect() };
    let mut centers: Vec<Center> = Vec::with_capacity(nx * ny);
    for i in 0..ny {
        for j in 0..nx {
            let r = (i as f64 + 0.5) * h as f64 / ny as f64;
            let c = (j as f64 + 0.5) * w as f64 / nx as f64;
            let p = (r.floor() as usize).min(h - 1) * w + (c.floor() as usize).min(w - 1);
            centers.push(Center { r, c, color: color_of(p) });
        }
    }

    let spatial_weight = compactness / step;
    let radius = step.ceil() as isize;
    let mut labels = vec![usize::MAX; n];
    let dist_to = |center: &Center, p: usize| -> (f64, f64) {
        let (r, c) = ((p / w) as f64 + 0.5, (p % w) as f64 + 0.5);
        let dxy = ((r - center.r).powi(2) + (c - center.c).powi(2)).sqrt();
        let dc = image
            .pixel(p)
            .iter()
            .zip(&center.color)
            .map(|(v, m)| (v.as_f64() - m).powi(2))
            .sum::<f64>()
            .sqrt();
        (dc + spatial_weight * dxy, dxy)
    };

    for _ in 0..iters.max(1) {
        let mut best = vec![(f64::INFINITY, f64::INFINITY); n];
        labels.fill(usize::MAX);
        for (k, center) in centers.iter().enumerate() {
            let (cr, cc) = (center.r.floor() as isize, center.c.floor() as isize);
            let r0 = (cr - radius).max(0) as usize;
            let r1 = ((cr + radius).min(h as isize - 1)) as usize;
            let c0 = (cc - radius).max(0) as usize;
            let c1 = ((cc + radius).min(w as isize - 1)) as usize;
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let p = r * w + c;
                    let d = dist_to(center, p);
                    if d < best[p] {
                        best[p] = d;
                        labels[p] = k;
                    }
                }
            }
        }
        for p in 0..n {
            if labels[p] == usize::MAX {
                let (k, _) = centers
                    .iter()
                    .enumerate()
                    .map(|(k, c)| (k, dist_to(c, p)))
                    .fold((0, (f64::INFINITY, f64::INFINITY)), |acc, x| if x.1 < acc.1 { x } else { acc });
                labels[p] = k;
            }
        }
        let mut sums = vec![(0.0, 0.0, vec![0.0; ch], 0usize); centers.len()];
        for p in 0..n {
            let s = &mut sums[labels[p]];
            s.0 += (p / w) as f64 + 0.5;
            s.1 += (p % w) as f64 + 0.5;
            for (acc, v) in s.2.iter_mut().zip(image.pixel(p)) {
                *acc += v.as_f64();
            }
            s.3 += 1;
        }
        for (center, (sr, sc, scol, cnt)) in centers.iter_mut().zip(sums) {
            if cnt > 0 {
                let k = cnt as f64;
                center.r = sr / k;
                center.c = sc / k;
                center.color = scol.into_iter().map(|v| v / k).collect();
            }
        }
    }

    enforce_connectivity(h, w, &mut labels);
    relabel_scan_order(&mut labels);
    RegionMap::new(h, w, labels)
}

/// Greedy agglomeration: repeatedly merges the adjacent region pair with the
/// smallest distance between mean pixel features while that distance is
/// below `threshold`. Ties go to the lexicographically smallest pair.
pub fn merge_regions<T: Scalar>(regions: &RegionMap, image: &Image<T>, threshold: f64) -> Result<RegionMap> {
    if !(threshold >= 0.0) {
        return Err(param("merge threshold must be non-negative"));
    }
    if image.height != regions.height || image.width != regions.width {
        return Err(shape("image and region map sizes differ"));
    }
    let (h, w, ch) = (regions.height, regions.width, image.channels);
    let r = regions.count;
    let mut sum = vec![vec![0.0; ch]; r];
    let mut size = vec![0usize; r];
    for (p, &id) in regions.ids.iter().enumerate() {
        size[id] += 1;
        for (acc, v) in sum[id].iter_mut().zip(image.pixel(p)) {
            *acc += v.as_f64();
        }
    }
    let mut adjacent: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); r];
    for p in 0..h * w {
        for q in neighbors4(h, w, p) {
            let (a, b) = (regions.ids[p], regions.ids[q]);
            if a != b {
                adjacent[a].insert(b);
            }
        }
    }
    // union-find parent; merged regions point at their survivor
    let mut parent: Vec<usize> = (0..r).collect();
    let mut alive = vec![true; r];
    let dist = |a: usize, b: usize, sum: &[Vec<f64>], size: &[usize]| -> f64 {
        sum[a]
            .iter()
            .zip(&sum[b])
            .map(|(x, y)| (x / size[a] as f64 - y / size[b] as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in (0..r).filter(|&a| alive[a]) {
            for &b in adjacent[a].iter().filter(|&&b| b > a) {
                let d = dist(a, b, &sum, &size);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        match best {
            Some((d, a, b)) if d < threshold => {
                alive[b] = false;
                parent[b] = a;
                size[a] += size[b];
                let sb = std::mem::take(&mut sum[b]);
                for (x, y) in sum[a].iter_mut().zip(sb) {
                    *x += y;
                }
                let nb = std::mem::take(&mut adjacent[b]);
                for c in nb {
                    adjacent[c].remove(&b);
                    if c != a {
                        adjacent[c].insert(a);
                        adjacent[a].insert(c);
                    }
                }
                adjacent[a].remove(&b);
            }
            _ => break,
        }
    }
    let find = |mut x: usize| {
        while parent[x] != x {
            x = parent[x];
        }
        x
    };
    let mut labels: Vec<usize> = regions.ids.iter().map(|&id| find(id)).collect();
    relabel_scan_order(&mut labels);
    RegionMap::new(h, w, labels)
}

/// Reads a headerless CSV grid of non-negative integer region ids.
pub fn load_region_map(path: impl AsRef<Path>) -> Result<RegionMap> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut ids = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<usize>().map_err(|_| {
                    Error::Format(format!("line {}: `{}` is not a region id", no + 1, cell.trim()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(wd) if wd != row.len() => {
                return Err(Error::Format(format!(
                    "line {}: ragged row with {} cells, expected {wd}",
                    no + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        ids.extend(row);
        height += 1;
    }
    let width = width.ok_or_else(|| Error::Format("empty region map".into()))?;
    RegionMap::new(height, width, ids)
}

pub fn save_region_map(regions: &RegionMap, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    for row in regions.ids.chunks(regions.width) {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn halves(h: usize, w: usize) -> Image<f64> {
        let data = (0..h * w).map(|p| if p % w < w / 2 { 0.0 } else { 1.0 }).collect();
        Image::new(h, w, 1, data).unwrap()
    }

    #[test]
    fn uniform_image_splits_into_quadrants() {
        let img = Image::new(8, 8, 1, vec![0.5; 64]).unwrap();
        for compactness in [0.0, 1.0, 10.0, 100.0] {
            let r = slic(&img, 4, compactness, 10).unwrap();
            assert_eq!(r.count(), 4);
            assert_eq!(r.region_sizes(), vec![16; 4]);
            // top-left quadrant is one region
            let tl = r.ids()[0];
            for p in 0..64 {
                assert_eq!(r.ids()[p] == tl, p / 8 < 4 && p % 8 < 4);
            }
        }
    }

    #[test]
    fn single_target_gives_one_region() {
        let img = halves(6, 9);
        assert_eq!(slic(&img, 1, 10.0, 5).unwrap().count(), 1);
        assert!(slic(&img, 0, 10.0, 5).is_err());
    }

    #[test]
    fn boundary_follows_color_edge() {
        let img = halves(8, 8);
        let r = slic(&img, 2, 1.0, 10).unwrap();
        assert_eq!(r.count(), 2);
        for p in 0..64 {
            assert_eq!(r.ids()[p], usize::from(p % 8 >= 4));
        }
    }

    #[test]
    fn merge_examples() {
        let img = halves(8, 8);
        let quarters = slic(&Image::new(8, 8, 1, vec![0.0; 64]).unwrap(), 4, 10.0, 5).unwrap();
        assert_eq!(merge_regions(&quarters, &img, 0.0).unwrap(), quarters);
        assert_eq!(merge_regions(&quarters, &img, f64::INFINITY).unwrap().count(), 1);
        // intra-half distance 0, inter-half 1
        let two = merge_regions(&quarters, &img, 0.5).unwrap();
        assert_eq!(two.count(), 2);
        for p in 0..64 {
            assert_eq!(two.ids()[p], usize::from(p % 8 >= 4));
        }
    }

    #[test]
    fn region_map_validation() {
        let r = RegionMap::new(2, 2, vec![0, 0, 1, 1]).unwrap();
        assert_eq!(r.count(), 2);
        let e = RegionMap::new(2, 2, vec![0, 1, 1, 0]).unwrap_err();
        assert!(e.to_string().contains("region 0"), "{e}");
        let sparse = RegionMap::new(1, 3, vec![7, 3, 3]).unwrap();
        assert_eq!(sparse.ids(), &[1, 0, 0]);
    }

    #[test]
    fn region_csv_round_trip_and_errors() {
        let dir = std::env::temp_dir().join(format!("letsne-seg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let r = slic(&halves(6, 6), 4, 5.0, 5).unwrap();
        let p = dir.join("r.csv");
        save_region_map(&r, &p).unwrap();
        assert_eq!(load_region_map(&p).unwrap(), r);

        std::fs::write(&p, "0,0\n1,1\n").unwrap();
        assert_eq!(load_region_map(&p).unwrap().count(), 2);
        std::fs::write(&p, "0,1\n1,0\n").unwrap();
        assert!(load_region_map(&p).unwrap_err().to_string().contains("region 0"));
        std::fs::write(&p, "0,1\n1\n").unwrap();
        assert!(load_region_map(&p).unwrap_err().to_string().contains("ragged"));
        std::fs::write(&p, "0,a\n1,1\n").unwrap();
        assert!(matches!(load_region_map(&p), Err(Error::Format(_))));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn connectivity_pass_absorbs_fragments() {
        let mut labels = vec![0, 1, 0, 0, 0, 0, 1, 0, 0];
        enforce_connectivity(3, 3, &mut labels);
        let n = relabel_scan_order(&mut labels);
        assert!(RegionMap::new(3, 3, labels).is_ok());
        assert!(n >= 1);
    }
}
