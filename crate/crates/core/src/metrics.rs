//! Overlap and surface-distance metrics on binary masks, histogram NMI, and
//! corpus-level aggregation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::case::MapKind;
use crate::io::raw;
use crate::tensor::{Spacing, Volume3D};

pub const DEFAULT_THRESHOLD: f32 = 0.5;
pub const DEFAULT_BINS: usize = 64;

/// A binary volume in `(z, y, x)` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    dims: [usize; 3],
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(dims: [usize; 3], bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "{} mask values for dims {dims:?}",
                bits.len()
            )));
        }
        Ok(Self { dims, bits })
    }

    /// Nonzero voxels.
    pub fn from_volume(v: &Volume3D) -> Self {
        Self {
            dims: v.dims(),
            bits: v.data().iter().map(|&x| x != 0.0).collect(),
        }
    }

    pub fn from_points(dims: [usize; 3], points: &[[usize; 3]]) -> Result<Self> {
        let mut m = Self::new(dims, vec![false; dims.iter().product()])?;
        for p in points {
            if p.iter().zip(&dims).any(|(a, b)| a >= b) {
                return Err(Error::Shape(format!("point {p:?} outside {dims:?}")));
            }
            let i = m.index(*p);
            m.bits[i] = true;
        }
        Ok(m)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.contains(&true)
    }

    fn index(&self, [z, y, x]: [usize; 3]) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    pub fn get(&self, p: [usize; 3]) -> bool {
        self.bits[self.index(p)]
    }

    /// Mask voxels with a 6-neighbour outside the mask. Neighbours beyond
    /// the volume border count as outside.
    pub fn surface(&self) -> Mask {
        let [nz, ny, nx] = self.dims;
        let mut out = vec![false; self.bits.len()];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if !self.get([z, y, x]) {
                        continue;
                    }
                    let outside = |dz: isize, dy: isize, dx: isize| {
                        let (zz, yy, xx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                        if zz < 0
                            || yy < 0
                            || xx < 0
                            || zz >= nz as isize
                            || yy >= ny as isize
                            || xx >= nx as isize
                        {
                            return true;
                        }
                        !self.get([zz as usize, yy as usize, xx as usize])
                    };
                    out[self.index([z, y, x])] = outside(-1, 0, 0)
                        || outside(1, 0, 0)
                        || outside(0, -1, 0)
                        || outside(0, 1, 0)
                        || outside(0, 0, -1)
                        || outside(0, 0, 1);
                }
            }
        }
        Mask {
            dims: self.dims,
            bits: out,
        }
    }

    pub fn points(&self) -> Vec<[usize; 3]> {
        let [_, ny, nx] = self.dims;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| [i / (ny * nx), (i / nx) % ny, i % nx])
            .collect()
    }

    pub fn to_volume(&self, spacing: Spacing) -> Volume3D {
        let [nz, ny, nx] = self.dims;
        Volume3D::from_fn([nz, ny, nx], spacing, |z, y, x| {
            self.get([z, y, x]) as u8 as f32
        })
        .expect("mask dims are valid")
    }
}

/// Voxels strictly above `threshold`.
pub fn binarize(prob: &Volume3D, threshold: f32) -> Mask {
    Mask {
        dims: prob.dims(),
        bits: prob.data().iter().map(|&v| v > threshold).collect(),
    }
}

fn check_dims(a: &Mask, b: &Mask) -> Result<()> {
    if a.dims != b.dims {
        return Err(Error::Shape(format!(
            "mask dims {:?} vs {:?}",
            a.dims, b.dims
        )));
    }
    Ok(())
}

fn overlap(a: &Mask, b: &Mask) -> Result<(usize, usize, usize)> {
    check_dims(a, b)?;
    let inter = a.bits.iter().zip(&b.bits).filter(|(&x, &y)| x && y).count();
    Ok((inter, a.count(), b.count()))
}

fn ratio(num: usize, den: usize, both_empty: bool) -> f64 {
    if den == 0 {
        if both_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

/// `2|a∩b| / (|a|+|b|)`; two empty masks score 1.
pub fn dice_binary(a: &Mask, b: &Mask) -> Result<f64> {
    let (i, na, nb) = overlap(a, b)?;
    Ok(ratio(2 * i, na + nb, true))
}

/// `|a∩b| / |a|` with `a` the prediction.
pub fn precision(pred: &Mask, truth: &Mask) -> Result<f64> {
    let (i, na, nb) = overlap(pred, truth)?;
    Ok(ratio(i, na, na == 0 && nb == 0))
}

/// `|a∩b| / |b|` with `b` the ground truth.
pub fn recall(pred: &Mask, truth: &Mask) -> Result<f64> {
    let (i, na, nb) = overlap(pred, truth)?;
    Ok(ratio(i, nb, na == 0 && nb == 0))
}

/// Squared distance transform of a sampled function along one line,
/// `d(p) = min_q (p − q)² w² + f(q)`, by the lower envelope of parabolas.
/// Infinite samples never enter the envelope.
fn edt_line(f: &[f64], w2: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    let key = |q: usize| f[q] + (q * q) as f64 * w2;
    for q in (0..f.len()).filter(|&q| f[q].is_finite()) {
        loop {
            let Some(&last) = v.last() else {
                v.push(q);
                z.push(f64::NEG_INFINITY);
                break;
            };
            let s = (key(q) - key(last)) / (2.0 * w2 * (q - last) as f64);
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < p as f64 {
            k += 1;
        }
        let d = p as f64 - v[k] as f64;
        *o = d * d * w2 + f[v[k]];
    }
}

/// Exact squared Euclidean distance (in spacing units) from every voxel to
/// the nearest set voxel of `mask`; infinite when `mask` is empty.
pub fn squared_distance_transform(mask: &Mask, spacing: Spacing) -> Vec<f64> {
    let [nz, ny, nx] = mask.dims;
    let mut d: Vec<f64> = mask
        .bits
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    let n_max = nz.max(ny).max(nx);
    let (mut line, mut out) = (vec![0.0; n_max], vec![0.0; n_max]);
    let (mut v, mut z) = (Vec::with_capacity(n_max), Vec::with_capacity(n_max));
    let strides = [ny * nx, nx, 1];
    for axis in 0..3 {
        let len = mask.dims[axis];
        let w2 = spacing[axis] * spacing[axis];
        let stride = strides[axis];
        for start in 0..d.len() {
            // visit each line once, from its first element
            if (start / stride) % len != 0 {
                continue;
            }
            for i in 0..len {
                line[i] = d[start + i * stride];
            }
            edt_line(&line[..len], w2, &mut out[..len], &mut v, &mut z);
            for i in 0..len {
                d[start + i * stride] = out[i];
            }
        }
    }
    d
}

/// Hausdorff distance and ASSD between mask surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDistances {
    pub hausdorff: f64,
    pub assd: f64,
}

pub fn surface_distances(a: &Mask, b: &Mask, spacing: Spacing) -> Result<SurfaceDistances> {
    check_dims(a, b)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedDistance(
            "surface distance needs two nonempty masks".into(),
        ));
    }
    let (sa, sb) = (a.surface(), b.surface());
    let (da, db) = (
        squared_distance_transform(&sa, spacing),
        squared_distance_transform(&sb, spacing),
    );
    let mut max = 0.0f64;
    let mut total = 0.0;
    let mut n = 0usize;
    for (from, to) in [(&sa, &db), (&sb, &da)] {
        for (i, _) in from.bits.iter().enumerate().filter(|(_, &s)| s) {
            let d = to[i].sqrt();
            max = max.max(d);
            total += d;
            n += 1;
        }
    }
    Ok(SurfaceDistances {
        hausdorff: max,
        assd: total / n as f64,
    })
}

pub fn hausdorff(a: &Mask, b: &Mask, spacing: Spacing) -> Result<f64> {
    Ok(surface_distances(a, b, spacing)?.hausdorff)
}

pub fn assd(a: &Mask, b: &Mask, spacing: Spacing) -> Result<f64> {
    Ok(surface_distances(a, b, spacing)?.assd)
}

fn bin_indices(v: &[f64], bins: usize) -> Vec<usize> {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| {
            (l.min(x), h.max(x))
        });
    let range = hi - lo;
    v.iter()
        .map(|&x| {
            if range > 0.0 {
                (((x - lo) / range * bins as f64) as usize).min(bins - 1)
            } else {
                0
            }
        })
        .collect()
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `2 I(X;Y) / (H(X) + H(Y))` from an equal-width joint histogram over each
/// variable's observed range, clamped to `[0, 1]`; 0 when both entropies vanish.
pub fn nmi(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "NMI samples of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::Data("NMI of empty samples".into()));
    }
    if bins == 0 {
        return Err(Error::Parameter("NMI needs at least one bin".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Data("NMI samples must be finite".into()));
    }
    let (bx, by) = (bin_indices(x, bins), bin_indices(y, bins));
    let mut joint = vec![0usize; bins * bins];
    let (mut cx, mut cy) = (vec![0usize; bins], vec![0usize; bins]);
    for (&i, &j) in bx.iter().zip(&by) {
        joint[i * bins + j] += 1;
        cx[i] += 1;
        cy[j] += 1;
    }
    let n = x.len() as f64;
    let (hx, hy, hxy) = (entropy(&cx, n), entropy(&cy, n), entropy(&joint, n));
    let denom = hx + hy;
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((2.0 * (hx + hy - hxy) / denom).clamp(0.0, 1.0))
}

/// NMI of each feature (rows) against each standard map (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmiMatrix {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// Row-major `rows × columns`.
    pub values: Vec<f64>,
    pub bins: usize,
}

impl NmiMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.columns.len() + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("feature");
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for (r, name) in self.rows.iter().enumerate() {
            s.push_str(name);
            for c in 0..self.columns.len() {
                s.push_str(&format!(",{:.6}", self.get(r, c)));
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty NMI table".into()))?;
        let columns: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
        let (mut rows, mut values) = (Vec::new(), Vec::new());
        for line in lines {
            let mut cells = line.split(',');
            rows.push(cells.next().unwrap_or_default().to_string());
            let vals: Vec<f64> = cells
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad NMI value {c:?}")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != columns.len() {
                return Err(Error::Format("ragged NMI table".into()));
            }
            values.extend(vals);
        }
        Ok(Self {
            rows,
            columns,
            values,
            bins: 0,
        })
    }
}

/// NMI of named feature samples against named map samples, all drawn from
/// the same voxels.
pub fn nmi_matrix(
    features: &[(String, Vec<f64>)],
    maps: &[(String, Vec<f64>)],
    bins: usize,
) -> Result<NmiMatrix> {
    let mut values = Vec::with_capacity(features.len() * maps.len());
    for (_, f) in features {
        for (_, m) in maps {
            values.push(nmi(f, m, bins)?);
        }
    }
    Ok(NmiMatrix {
        rows: features.iter().map(|(n, _)| n.clone()).collect(),
        columns: maps.iter().map(|(n, _)| n.clone()).collect(),
        values,
        bins,
    })
}

/// Brain-masked samples of the six maps, labelled.
pub fn map_samples(
    maps: &crate::io::case::PerfusionMaps,
    brain: &Volume3D,
) -> Vec<(String, Vec<f64>)> {
    MapKind::ALL
        .iter()
        .map(|&k| {
            let v = maps
                .get(k)
                .data()
                .iter()
                .zip(brain.data())
                .filter(|(_, &b)| b > 0.0)
                .map(|(&x, _)| x as f64)
                .collect();
            (k.label().to_string(), v)
        })
        .collect()
}

/// Per-case evaluation row. Distances are `None` when undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub dice: f64,
    pub hausdorff_mm: Option<f64>,
    pub assd_mm: Option<f64>,
    pub precision: f64,
    pub recall: f64,
}

pub fn evaluate_case(
    case_id: &str,
    pred: &Mask,
    truth: &Mask,
    spacing: Spacing,
) -> Result<CaseMetrics> {
    let dist = match surface_distances(pred, truth, spacing) {
        Ok(d) => Some(d),
        Err(Error::UndefinedDistance(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(CaseMetrics {
        case_id: case_id.to_string(),
        dice: dice_binary(pred, truth)?,
        hausdorff_mm: dist.map(|d| d.hausdorff),
        assd_mm: dist.map(|d| d.assd),
        precision: precision(pred, truth)?,
        recall: recall(pred, truth)?,
    })
}

/// Mean and sample standard deviation of one column; `None` where fewer
/// values than needed are defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
}

pub fn summarize(values: impl IntoIterator<Item = f64>) -> Summary {
    let v: Vec<f64> = values.into_iter().collect();
    let n = v.len();
    if n == 0 {
        return Summary {
            mean: None,
            sd: None,
            n,
        };
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let sd = (n > 1)
        .then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    Summary {
        mean: Some(mean),
        sd,
        n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<CaseMetrics>,
    pub dice: Summary,
    pub hausdorff_mm: Summary,
    pub assd_mm: Summary,
    pub precision: Summary,
    pub recall: Summary,
    /// Cases left out of the distance aggregates.
    pub undefined_distance: Vec<String>,
}

impl MetricsReport {
    pub fn from_rows(mut rows: Vec<CaseMetrics>) -> Self {
        rows.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        Self {
            dice: summarize(rows.iter().map(|r| r.dice)),
            hausdorff_mm: summarize(rows.iter().filter_map(|r| r.hausdorff_mm)),
            assd_mm: summarize(rows.iter().filter_map(|r| r.assd_mm)),
            precision: summarize(rows.iter().map(|r| r.precision)),
            recall: summarize(rows.iter().map(|r| r.recall)),
            undefined_distance: rows
                .iter()
                .filter(|r| r.hausdorff_mm.is_none())
                .map(|r| r.case_id.clone())
                .collect(),
            rows,
        }
    }

    /// `case_id,dice,hd,assd,precision,recall` with trailing `mean` and `sd`
    /// rows; undefined values are written as `NA`.
    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        let mut s = String::from("case_id,dice,hd,assd,precision,recall\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.case_id,
                f(Some(r.dice)),
                f(r.hausdorff_mm),
                f(r.assd_mm),
                f(Some(r.precision)),
                f(Some(r.recall))
            ));
        }
        let cols = [
            &self.dice,
            &self.hausdorff_mm,
            &self.assd_mm,
            &self.precision,
            &self.recall,
        ];
        s.push_str("mean");
        for c in cols {
            s.push_str(&format!(",{}", f(c.mean)));
        }
        s.push_str("\nsd");
        for c in cols {
            s.push_str(&format!(",{}", f(c.sd)));
        }
        s.push('\n');
        s
    }
}

/// Per-case rows parsed back from a metrics table, skipping the summary rows.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<CaseMetrics>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty metrics table".into()))?;
    if header.trim() != "case_id,dice,hd,assd,precision,recall" {
        return Err(Error::Format(format!(
            "unexpected metrics header {header:?}"
        )));
    }
    let num = |c: &str| -> Result<Option<f64>> {
        match c.trim() {
            "NA" => Ok(None),
            t => t
                .parse()
                .map(Some)
                .map_err(|_| Error::Format(format!("bad metric value {t:?}"))),
        }
    };
    let mut rows = Vec::new();
    for line in lines {
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 6 {
            return Err(Error::Format(format!("metrics row has {} cells", c.len())));
        }
        if c[0] == "mean" || c[0] == "sd" {
            continue;
        }
        let req = |v: Option<f64>| v.ok_or_else(|| Error::Format("missing overlap metric".into()));
        rows.push(CaseMetrics {
            case_id: c[0].to_string(),
            dice: req(num(c[1])?)?,
            hausdorff_mm: num(c[2])?,
            assd_mm: num(c[3])?,
            precision: req(num(c[4])?)?,
            recall: req(num(c[5])?)?,
        });
    }
    Ok(rows)
}

/// Matches `<pred_dir>/<id>.pwt` against `<gt_dir>/<id>/gt.pwt` (or
/// `<gt_dir>/<id>.pwt`). Every ground-truth case needs a prediction and
/// vice versa. Predictions are binarized at `threshold`.
pub fn evaluate_corpus(pred_dir: &Path, gt_dir: &Path, threshold: f32) -> Result<MetricsReport> {
    let pred = list_predictions(pred_dir)?;
    let gt = list_ground_truth(gt_dir)?;
    if pred.is_empty() && gt.is_empty() {
        return Err(Error::Data(format!("no cases under {}", gt_dir.display())));
    }
    for id in gt.keys() {
        if !pred.contains_key(id) {
            return Err(Error::Data(format!("no prediction for case {id}")));
        }
    }
    for id in pred.keys() {
        if !gt.contains_key(id) {
            return Err(Error::Data(format!("prediction {id} has no ground truth")));
        }
    }
    use rayon::prelude::*;
    let ids: Vec<&String> = gt.keys().collect();
    let rows = ids
        .par_iter()
        .map(|id| {
            let p = raw::load_volume3d(&pred[*id])?;
            let g = raw::load_volume3d(&gt[*id])?;
            if p.dims() != g.dims() {
                return Err(Error::Shape(format!(
                    "{id}: prediction dims {:?} differ from ground truth {:?}",
                    p.dims(),
                    g.dims()
                )));
            }
            evaluate_case(
                id,
                &binarize(&p, threshold),
                &Mask::from_volume(&g),
                g.spacing(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_rows(rows))
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    v.sort();
    Ok(v)
}

fn list_predictions(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>> {
    let mut out = BTreeMap::new();
    for p in read_dir_sorted(dir)? {
        if p.is_file() && p.extension().is_some_and(|e| e == "pwt") {
            let id = p.file_stem().unwrap().to_string_lossy().into_owned();
            out.insert(id, p);
        }
    }
    Ok(out)
}

fn list_ground_truth(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>> {
    let mut out = BTreeMap::new();
    for p in read_dir_sorted(dir)? {
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        if p.is_dir() && p.join("gt.pwt").is_file() {
            out.insert(name, p.join("gt.pwt"));
        } else if p.is_file() && p.extension().is_some_and(|e| e == "pwt") {
            let id = p.file_stem().unwrap().to_string_lossy().into_owned();
            out.insert(id, p);
        }
    }
    Ok(out)
}
