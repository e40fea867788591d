//! Dataset ingestion (IDX, CSV), synthetic generators, image rotation and
//! subsampling.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Targets;
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Full,
}

/// Train-split statistics used to standardize both splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

/// Features with standard deviation below this are divided by it instead.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub inputs: Tensor,
    pub targets: Targets,
    pub split: Split,
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(inputs: Tensor, targets: Targets, split: Split) -> Result<Self> {
        if inputs.shape().first().copied().unwrap_or(0) != targets.len() {
            return Err(Error::shape(format!(
                "{} inputs but {} targets",
                inputs.shape().first().copied().unwrap_or(0),
                targets.len()
            )));
        }
        Ok(Self { inputs, targets, split, standardization: None })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes(c) => Some(c),
            Targets::Values(_) => None,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.labels().map(|l| l.iter().max().map_or(0, |m| m + 1))
    }

    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            inputs: self.inputs.select_rows(rows)?,
            targets: self.targets.select(rows)?,
            split: self.split,
            standardization: self.standardization.clone(),
        })
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }
}

// ---------------------------------------------------------------------------
// IDX

/// Raw contents of an IDX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxFile {
    pub type_code: u8,
    pub dims: Vec<u32>,
    pub payload: Vec<u8>,
}

fn idx_width(type_code: u8) -> Option<usize> {
    match type_code {
        0x08 | 0x09 => Some(1),
        0x0B => Some(2),
        0x0C | 0x0D => Some(4),
        0x0E => Some(8),
        _ => None,
    }
}

impl IdxFile {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let fmt = |offset: usize, msg: String| Error::Format { offset: offset as u64, msg };
        if bytes.len() < 4 {
            return Err(fmt(bytes.len(), "truncated magic number".into()));
        }
        if bytes[0] != 0 || bytes[1] != 0 {
            return Err(fmt(0, format!("bad magic {:02x}{:02x}", bytes[0], bytes[1])));
        }
        let type_code = bytes[2];
        let width = idx_width(type_code).ok_or_else(|| fmt(2, format!("unknown type code 0x{type_code:02x}")))?;
        let rank = bytes[3] as usize;
        let header = 4 + 4 * rank;
        let mut dims = Vec::with_capacity(rank);
        for d in 0..rank {
            let off = 4 + 4 * d;
            if bytes.len() < off + 4 {
                return Err(fmt(bytes.len(), format!("truncated dimension {d} (needs bytes {off}..{})", off + 4)));
            }
            dims.push(u32::from_be_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]));
        }
        let count: usize = dims.iter().map(|&d| d as usize).product();
        let need = header + count * width;
        if bytes.len() < need {
            return Err(fmt(bytes.len(), format!("truncated payload: expected {need} bytes in total")));
        }
        if bytes.len() > need {
            return Err(fmt(need, format!("{} trailing bytes", bytes.len() - need)));
        }
        Ok(Self { type_code, dims, payload: bytes[header..].to_vec() })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.payload.len());
        out.extend_from_slice(&[0, 0, self.type_code, self.dims.len() as u8]);
        for d in &self.dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Values as reals. Unsigned-byte arrays of rank >= 2 are treated as images
    /// and scaled to `[0, 1]`; everything else is returned as stored.
    pub fn to_tensor(&self) -> Tensor {
        let width = idx_width(self.type_code).expect("validated");
        let vals: Vec<f64> = self
            .payload
            .chunks_exact(width)
            .map(|c| match self.type_code {
                0x08 => c[0] as f64,
                0x09 => c[0] as i8 as f64,
                0x0B => i16::from_be_bytes([c[0], c[1]]) as f64,
                0x0C => i32::from_be_bytes([c[0], c[1], c[2], c[3]]) as f64,
                0x0D => f32::from_be_bytes([c[0], c[1], c[2], c[3]]) as f64,
                _ => f64::from_be_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]),
            })
            .collect();
        let scale = self.type_code == 0x08 && self.dims.len() >= 2;
        let vals = if scale { vals.into_iter().map(|v| v / 255.0).collect() } else { vals };
        Tensor::from_parts(self.dims.iter().map(|&d| d as usize).collect(), vals)
    }
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<Tensor> {
    Ok(IdxFile::read(path)?.to_tensor())
}

/// Images and labels IDX pair as a classification dataset.
pub fn load_idx_dataset(images: impl AsRef<Path>, labels: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let x = load_idx(images)?;
    let y = load_idx(labels)?;
    if y.rank() != 1 {
        return Err(Error::Format { offset: 3, msg: format!("labels must be rank 1, got {:?}", y.shape()) });
    }
    let labels = y.data().iter().map(|&v| v as usize).collect();
    Dataset::new(x, Targets::Classes(labels), split)
}

// ---------------------------------------------------------------------------
// CSV

/// Numeric CSV with one target column, split and standardized by train
/// statistics. `target_column` may be negative to count from the end.
pub fn load_uci_csv(
    path: impl AsRef<Path>,
    target_column: isize,
    split_seed: u64,
    split_fraction: f64,
    has_header: bool,
) -> Result<(Dataset, Dataset)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse { row: 0, column: 0, msg: e.to_string() })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let row_no = r + 1 + has_header as usize;
        let rec = rec.map_err(|e| Error::Parse { row: row_no, column: 0, msg: e.to_string() })?;
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>().map_err(|_| Error::Parse {
                    row: row_no,
                    column: c + 1,
                    msg: format!("non-numeric cell {cell:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != vals.len() {
                return Err(Error::Parse {
                    row: row_no,
                    column: vals.len(),
                    msg: format!("expected {} columns", first.len()),
                });
            }
        }
        rows.push(vals);
    }
    if rows.len() < 2 {
        return Err(Error::Parse { row: rows.len(), column: 0, msg: "need at least two rows".into() });
    }
    let ncol = rows[0].len();
    let tc = if target_column < 0 { ncol as isize + target_column } else { target_column };
    if tc < 0 || tc as usize >= ncol {
        return Err(Error::contract(format!("target column {target_column} outside {ncol} columns")));
    }
    let tc = tc as usize;
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(Error::contract(format!("split fraction must be in (0,1), got {split_fraction}")));
    }
    let n = rows.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(split_seed));
    let n_train = ((n as f64 * split_fraction).round() as usize).clamp(1, n - 1);
    let (train_idx, test_idx) = order.split_at(n_train);

    let nf = ncol - 1;
    let features = |r: &[f64]| -> Vec<f64> { r.iter().enumerate().filter(|&(c, _)| c != tc).map(|(_, &v)| v).collect() };
    let mut fmean = vec![0.0; nf];
    let mut tmean = 0.0;
    for &i in train_idx {
        for (m, v) in fmean.iter_mut().zip(features(&rows[i])) {
            *m += v;
        }
        tmean += rows[i][tc];
    }
    let nt = train_idx.len() as f64;
    fmean.iter_mut().for_each(|m| *m /= nt);
    tmean /= nt;
    let mut fstd = vec![0.0; nf];
    let mut tstd = 0.0;
    for &i in train_idx {
        for ((s, v), m) in fstd.iter_mut().zip(features(&rows[i])).zip(&fmean) {
            *s += (v - m).powi(2);
        }
        tstd += (rows[i][tc] - tmean).powi(2);
    }
    let fstd: Vec<f64> = fstd.into_iter().map(|s| (s / nt).sqrt().max(STD_FLOOR)).collect();
    let tstd = (tstd / nt).sqrt().max(STD_FLOOR);
    let stats = Standardization { feature_mean: fmean, feature_std: fstd, target_mean: tmean, target_std: tstd };

    let build = |idx: &[usize], split| -> Result<Dataset> {
        let mut x = Vec::with_capacity(idx.len() * nf);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            for ((v, m), s) in features(&rows[i]).into_iter().zip(&stats.feature_mean).zip(&stats.feature_std) {
                x.push((v - m) / s);
            }
            y.push((rows[i][tc] - stats.target_mean) / stats.target_std);
        }
        let mut d = Dataset::new(
            Tensor::new(vec![idx.len(), nf], x)?,
            Targets::Values(Tensor::new(vec![idx.len(), 1], y)?),
            split,
        )?;
        d.standardization = Some(stats.clone());
        Ok(d)
    };
    Ok((build(train_idx, Split::Train)?, build(test_idx, Split::Test)?))
}

// ---------------------------------------------------------------------------
// Synthetic

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Classes alternate; class `c` is `N((2c-1, 0), noise² I)` in 2-D.
    TwoGaussians,
    /// `t ~ U(0, π)`; class 0 at `(cos t, sin t)`, class 1 at
    /// `(1 - cos t, 1/2 - sin t)`, plus `noise · N(0, I)`.
    TwoMoons,
    /// `x ~ U(-2, 2)`, `y = x² + noise · N(0, 1)`.
    QuadraticRegression,
}

pub fn make_synthetic(kind: SyntheticKind, n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::contract("synthetic datasets need n >= 2"));
    }
    let mut rng = rng_from_seed(seed);
    let gauss = |rng: &mut crate::rng::ChainRng| -> f64 { noise * rng.sample::<f64, _>(StandardNormal) };
    match kind {
        SyntheticKind::TwoGaussians | SyntheticKind::TwoMoons => {
            let mut x = Vec::with_capacity(2 * n);
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let c = i % 2;
                let (a, b) = if kind == SyntheticKind::TwoGaussians {
                    (2.0 * c as f64 - 1.0, 0.0)
                } else {
                    let t: f64 = rng.random::<f64>() * std::f64::consts::PI;
                    if c == 0 {
                        (t.cos(), t.sin())
                    } else {
                        (1.0 - t.cos(), 0.5 - t.sin())
                    }
                };
                x.push(a + gauss(&mut rng));
                x.push(b + gauss(&mut rng));
                y.push(c);
            }
            Dataset::new(Tensor::new(vec![n, 2], x)?, Targets::Classes(y), Split::Full)
        }
        SyntheticKind::QuadraticRegression => {
            let mut x = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let xi: f64 = rng.random::<f64>() * 4.0 - 2.0;
                x.push(xi);
                y.push(xi * xi + gauss(&mut rng));
            }
            Dataset::new(Tensor::new(vec![n, 1], x)?, Targets::Values(Tensor::new(vec![n, 1], y)?), Split::Full)
        }
    }
}

// ---------------------------------------------------------------------------
// Rotation

fn image_geometry(images: &Tensor) -> Result<(usize, usize)> {
    let s = images.shape();
    let (h, w) = match s.len() {
        3 => (s[1], s[2]),
        4 if s[1] == 1 => (s[2], s[3]),
        _ => return Err(Error::shape(format!("expected [n,H,W] or [n,1,H,W] images, got {s:?}"))),
    };
    if h != w {
        return Err(Error::contract(format!("rotation needs square images, got {h}x{w}")));
    }
    Ok((s[0], h))
}

/// Counter-clockwise (as displayed, rows downward) rotation about the image
/// center. Multiples of 90° are exact pixel permutations; other angles use
/// bilinear interpolation with zeros outside the image.
pub fn rotate_images(images: &Tensor, angle_degrees: f64) -> Result<Tensor> {
    let (n, side) = image_geometry(images)?;
    let plane = side * side;
    let quarter = angle_degrees / 90.0;
    let mut out = images.clone();
    if quarter == quarter.round() {
        let turns = (quarter as i64).rem_euclid(4);
        for _ in 0..turns {
            let src = out.clone();
            for k in 0..n {
                let s = &src.data()[k * plane..(k + 1) * plane];
                let d = &mut out.data_mut()[k * plane..(k + 1) * plane];
                for r in 0..side {
                    for c in 0..side {
                        // (r, c) moves to (side-1-c, r)
                        d[(side - 1 - c) * side + r] = s[r * side + c];
                    }
                }
            }
        }
        return Ok(out);
    }
    let theta = angle_degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let center = (side as f64 - 1.0) / 2.0;
    for k in 0..n {
        let s = &images.data()[k * plane..(k + 1) * plane];
        let d = &mut out.data_mut()[k * plane..(k + 1) * plane];
        let pixel = |r: isize, c: isize| -> f64 {
            if r < 0 || c < 0 || r >= side as isize || c >= side as isize {
                0.0
            } else {
                s[r as usize * side + c as usize]
            }
        };
        for r in 0..side {
            for c in 0..side {
                let yo = r as f64 - center;
                let xo = c as f64 - center;
                let sx = xo * cos - yo * sin + center;
                let sy = xo * sin + yo * cos + center;
                let (r0, c0) = (sy.floor(), sx.floor());
                let (fr, fc) = (sy - r0, sx - c0);
                let (r0, c0) = (r0 as isize, c0 as isize);
                d[r * side + c] = (1.0 - fr) * (1.0 - fc) * pixel(r0, c0)
                    + (1.0 - fr) * fc * pixel(r0, c0 + 1)
                    + fr * (1.0 - fc) * pixel(r0 + 1, c0)
                    + fr * fc * pixel(r0 + 1, c0 + 1);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Subsampling

/// Row indices of a size-`n` subset, ascending. Stratified selection keeps
/// each class within one of its proportional share.
pub fn subsample_indices(dataset: &Dataset, n: usize, seed: u64, stratified: bool) -> Result<Vec<usize>> {
    let size = dataset.len();
    if n > size {
        return Err(Error::contract(format!("cannot take {n} rows from {size}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut chosen = match (stratified, dataset.labels()) {
        (true, Some(labels)) => {
            let k = dataset.num_classes().unwrap_or(0);
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
            for (i, &c) in labels.iter().enumerate() {
                by_class[c].push(i);
            }
            let exact: Vec<f64> = by_class.iter().map(|v| n as f64 * v.len() as f64 / size as f64).collect();
            let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
            let mut remaining = n - quota.iter().sum::<usize>();
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
            for &c in order.iter().cycle() {
                if remaining == 0 {
                    break;
                }
                if quota[c] < by_class[c].len() {
                    quota[c] += 1;
                    remaining -= 1;
                }
            }
            let mut out = Vec::with_capacity(n);
            for (c, members) in by_class.iter_mut().enumerate() {
                members.shuffle(&mut rng);
                out.extend_from_slice(&members[..quota[c]]);
            }
            out
        }
        _ => {
            let mut all: Vec<usize> = (0..size).collect();
            all.shuffle(&mut rng);
            all.truncate(n);
            all
        }
    };
    chosen.sort_unstable();
    Ok(chosen)
}

pub fn subsample(dataset: &Dataset, n: usize, seed: u64, stratified: bool) -> Result<Dataset> {
    dataset.select(&subsample_indices(dataset, n, seed, stratified)?)
}

/// Disjoint train/test subsets drawn from one pool.
pub fn split_pool(pool: &Dataset, n_train: usize, n_test: usize, seed: u64, stratified: bool) -> Result<(Dataset, Dataset)> {
    if n_train + n_test > pool.len() {
        return Err(Error::contract(format!("cannot take {} rows from {}", n_train + n_test, pool.len())));
    }
    let both = subsample_indices(pool, n_train + n_test, seed, stratified)?;
    let union = pool.select(&both)?;
    let train_rows = subsample_indices(&union, n_train, crate::rng::derive_seed(seed, 1), stratified)?;
    let mut in_train = vec![false; union.len()];
    for &r in &train_rows {
        in_train[r] = true;
    }
    let test_rows: Vec<usize> = (0..union.len()).filter(|&r| !in_train[r]).collect();
    Ok((union.select(&train_rows)?.with_split(Split::Train), union.select(&test_rows)?.with_split(Split::Test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_header_and_truncation() {
        let f = IdxFile { type_code: 0x08, dims: vec![2, 2, 3], payload: (0..12).collect() };
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        let back = IdxFile::parse(&bytes).unwrap();
        assert_eq!(back, f);
        let t = back.to_tensor();
        assert_eq!(t.shape(), &[2, 2, 3]);
        assert!((t.data()[11] - 11.0 / 255.0).abs() < 1e-15);

        match IdxFile::parse(&bytes[..20]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("{other:?}"),
        }
        match IdxFile::parse(&bytes[..6]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("{other:?}"),
        }
        assert!(IdxFile::parse(&[1, 0, 8, 1]).is_err());
    }

    #[test]
    fn idx_labels_are_not_scaled() {
        let f = IdxFile { type_code: 0x08, dims: vec![3], payload: vec![0, 7, 9] };
        assert_eq!(f.to_tensor().data(), &[0.0, 7.0, 9.0]);
    }

    fn digits(n: usize) -> Dataset {
        let x = Tensor::zeros(&[n, 4, 4]);
        Dataset::new(x, Targets::Classes((0..n).map(|i| i % 10).collect()), Split::Full).unwrap()
    }

    #[test]
    fn stratified_subsample_is_balanced() {
        let d = digits(1000);
        let s = subsample(&d, 100, 3, true).unwrap();
        let mut counts = [0; 10];
        for &c in s.labels().unwrap() {
            counts[c] += 1;
        }
        assert!(counts.iter().all(|&c| c == 10));
        assert_eq!(subsample_indices(&d, 100, 3, true).unwrap(), subsample_indices(&d, 100, 3, true).unwrap());
        assert_eq!(subsample_indices(&d, 1000, 9, false).unwrap(), (0..1000).collect::<Vec<_>>());
        assert!(subsample(&d, 1001, 0, false).is_err());
    }

    #[test]
    fn split_pool_is_disjoint() {
        let mut d = digits(200);
        d.inputs = Tensor::new(vec![200, 1], (0..200).map(f64::from).collect()).unwrap();
        let (tr, te) = split_pool(&d, 100, 50, 1, true).unwrap();
        let a: std::collections::HashSet<u64> = tr.inputs.data().iter().map(|&v| v as u64).collect();
        assert!(te.inputs.data().iter().all(|&v| !a.contains(&(v as u64))));
        assert_eq!((tr.len(), te.len()), (100, 50));
    }

    #[test]
    fn quarter_turn_moves_single_pixel() {
        let mut img = Tensor::zeros(&[1, 5, 5]);
        img.data_mut()[1 * 5 + 3] = 1.0; // (r=1, c=3)
        let rot = rotate_images(&img, 90.0).unwrap();
        // (1, 3) -> (5-1-3, 1) = (1, 1)
        assert_eq!(rot.data()[1 * 5 + 1], 1.0);
        assert_eq!(rot.sum(), 1.0);
        assert_eq!(rotate_images(&img, 0.0).unwrap(), img);
        assert_eq!(rotate_images(&img, 360.0).unwrap(), img);
    }

    #[test]
    fn interpolated_rotation_agrees_with_exact_path_near_quarter_turn() {
        let img = Tensor::new(vec![1, 6, 6], (0..36).map(|i| (i as f64 * 0.37).sin().abs()).collect()).unwrap();
        let exact = rotate_images(&img, 90.0).unwrap();
        let near = rotate_images(&img, 90.0 + 1e-9).unwrap();
        assert!(exact.max_abs_diff(&near) < 1e-6);
    }

    #[test]
    fn synthetic_noise_free_shapes() {
        let m = make_synthetic(SyntheticKind::TwoMoons, 50, 0.0, 1).unwrap();
        for (i, p) in m.inputs.data().chunks(2).enumerate() {
            let (x, y) = (p[0], p[1]);
            let r = if i % 2 == 0 { (x * x + y * y).sqrt() } else { ((1.0 - x).powi(2) + (0.5 - y).powi(2)).sqrt() };
            assert!((r - 1.0).abs() < 1e-12);
        }
        let q = make_synthetic(SyntheticKind::QuadraticRegression, 20, 0.0, 2).unwrap();
        let Targets::Values(y) = &q.targets else { panic!() };
        for (x, y) in q.inputs.data().iter().zip(y.data()) {
            assert!((x * x - y).abs() < 1e-12);
        }
        let g = make_synthetic(SyntheticKind::TwoGaussians, 20, 0.0, 3).unwrap();
        for (p, &c) in g.inputs.data().chunks(2).zip(g.labels().unwrap()) {
            assert_eq!(p[0] > 0.0, c == 1);
        }
    }
}
