//! Automatic selection of the contrast-peak time window.
//!
//! Each time slice of the PWI series is summarised by the brain-masked mean
//! and standard deviation of its signal. The resulting `(mean, std)` points,
//! standardised per feature, are split into two clusters with k-means; the
//! bolus cluster is the one reaching the lowest mean signal, and the peak is
//! its lowest-mean member. A fixed-length window centred on the peak (and
//! clamped to the acquisition) is then cut out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Tensor, Volume3D, Volume4D};

/// Default temporal window length, in acquisitions.
pub const WINDOW_LENGTH: usize = 26;

/// Per-time-slice statistics over the brain mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceStats {
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
}

impl SliceStats {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

pub fn slice_stats(pwi: &Volume4D, brain_mask: &Volume3D) -> Result<SliceStats> {
    if brain_mask.dims() != pwi.spatial_dims() {
        return Err(Error::Shape(format!(
            "mask dims {:?} differ from PWI spatial dims {:?}",
            brain_mask.dims(),
            pwi.spatial_dims()
        )));
    }
    let idx: Vec<usize> = brain_mask
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0.0)
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Err(Error::Mask("brain mask is empty".into()));
    }
    let n = idx.len() as f64;
    let mut mean = Vec::with_capacity(pwi.n_times());
    let mut std = Vec::with_capacity(pwi.n_times());
    for t in 0..pwi.n_times() {
        let frame = pwi.frame(t);
        let m = idx.iter().map(|&i| frame[i] as f64).sum::<f64>() / n;
        let var = idx
            .iter()
            .map(|&i| (frame[i] as f64 - m).powi(2))
            .sum::<f64>()
            / n;
        mean.push(m);
        std.push(var.sqrt());
    }
    Ok(SliceStats { mean, std })
}

/// Result of Lloyd's algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<[f64; 2]>,
    pub iterations: usize,
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: &[f64; 2], centroids: &[[f64; 2]]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < bd {
            bd = d;
            best = j;
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations until the assignment is a
/// fixpoint or `max_iter` is reached. An emptied cluster is reseeded at the
/// point farthest from its current centroid.
pub fn kmeans(
    points: &[[f64; 2]],
    k: usize,
    rng: &mut SeededRng,
    max_iter: usize,
) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if points.len() < k {
        return Err(Error::Parameter(format!(
            "k-means with k = {k} needs at least {k} points, got {}",
            points.len()
        )));
    }
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.below(points.len())]);
    while centroids.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .map(|c| dist2(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.uniform() * total;
            let mut pick = points.len() - 1;
            for (i, &di) in d.iter().enumerate() {
                if u < di {
                    pick = i;
                    break;
                }
                u -= di;
            }
            pick
        } else {
            rng.below(points.len())
        };
        centroids.push(points[next]);
    }

    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![[0.0f64; 2]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = [sums[j][0] / counts[j] as f64, sums[j][1] / counts[j] as f64];
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, dist2(p, &centroids[assignments[i]])))
                    .fold(
                        (0, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    )
                    .0;
                centroids[j] = points[far];
                assignments[far] = j;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    Ok(KMeans {
        assignments,
        centroids,
        iterations,
    })
}

fn standardise(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        values.iter().map(|v| (v - m) / sd).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Default iteration cap for [`kmeans`].
pub const KMEANS_MAX_ITER: usize = 100;

/// Index of the contrast peak: the lowest-mean member of the bolus cluster.
pub fn detect_peak(stats: &SliceStats, rng: &mut SeededRng) -> Result<usize> {
    let n = stats.len();
    if n < 4 {
        return Err(Error::Parameter(format!(
            "peak detection needs at least 4 time slices, got {n}"
        )));
    }
    let flat = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if flat(&stats.mean) && flat(&stats.std) {
        return Err(Error::DegenerateSignal(
            "all time slices have identical statistics".into(),
        ));
    }
    let zm = standardise(&stats.mean);
    let zs = standardise(&stats.std);
    let points: Vec<[f64; 2]> = zm.iter().zip(&zs).map(|(&a, &b)| [a, b]).collect();
    let km = kmeans(&points, 2, rng, KMEANS_MAX_ITER)?;

    // (cluster minimum mean, index of that minimum) per cluster
    let mut best: Vec<Option<(f64, usize)>> = vec![None; 2];
    for (t, (&m, &a)) in stats.mean.iter().zip(&km.assignments).enumerate() {
        match best[a] {
            Some((bm, _)) if bm <= m => {}
            _ => best[a] = Some((m, t)),
        }
    }
    let bolus = best
        .into_iter()
        .flatten()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("at least one non-empty cluster");
    Ok(bolus.1)
}

/// A fixed-length run of acquisitions around the contrast peak.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalWindow {
    pub source_dims: [usize; 4],
    pub peak_index: usize,
    pub start: usize,
    pub length: usize,
    pub data: Volume4D,
}

/// JSON sidecar written next to a windowed series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowInfo {
    pub peak_index: usize,
    pub start: usize,
    pub length: usize,
}

impl TemporalWindow {
    pub fn info(&self) -> WindowInfo {
        WindowInfo {
            peak_index: self.peak_index,
            start: self.start,
            length: self.length,
        }
    }
}

/// Window start for a peak: centred, then clamped into `[0, T - length]`.
pub fn window_start(n_times: usize, peak_index: usize, length: usize) -> usize {
    let centred = peak_index as isize - (length / 2) as isize;
    centred.clamp(0, (n_times - length) as isize) as usize
}

pub fn extract_window(pwi: &Volume4D, peak_index: usize, length: usize) -> Result<TemporalWindow> {
    let nt = pwi.n_times();
    if length == 0 || nt < length {
        return Err(Error::InsufficientAcquisitions {
            needed: length.max(1),
            available: nt,
        });
    }
    if peak_index >= nt {
        return Err(Error::Parameter(format!(
            "peak index {peak_index} outside {nt} acquisitions"
        )));
    }
    if length < 2 {
        return Err(Error::Parameter("window length must be at least 2".into()));
    }
    let start = window_start(nt, peak_index, length);
    let n: usize = pwi.spatial_dims().iter().product();
    let data = pwi.data()[start * n..(start + length) * n].to_vec();
    let [_, z, y, x] = pwi.dims();
    let tensor = Tensor::from_vec(&[length, z, y, x], data)?;
    Ok(TemporalWindow {
        source_dims: pwi.dims(),
        peak_index,
        start,
        length,
        data: Volume4D::new(tensor, pwi.spacing(), pwi.dt())?,
    })
}

/// Stats, peak detection and extraction in one call.
pub fn select_window(
    pwi: &Volume4D,
    brain_mask: &Volume3D,
    length: usize,
    rng: &mut SeededRng,
) -> Result<TemporalWindow> {
    let stats = slice_stats(pwi, brain_mask)?;
    let peak = detect_peak(&stats, rng)?;
    extract_window(pwi, peak, length)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(values: &[Vec<f32>], spatial: [usize; 3]) -> Volume4D {
        let data: Vec<f32> = values.iter().flatten().copied().collect();
        let [z, y, x] = spatial;
        Volume4D::new(
            Tensor::from_vec(&[values.len(), z, y, x], data).unwrap(),
            [1.0; 3],
            1.0,
        )
        .unwrap()
    }

    fn ones_mask(spatial: [usize; 3]) -> Volume3D {
        Volume3D::new(Tensor::full(&spatial, 1.0), [1.0; 3]).unwrap()
    }

    #[test]
    fn stats_constant_and_two_voxel() {
        let pwi = series(&vec![vec![3.0; 4]; 5], [1, 2, 2]);
        let s = slice_stats(&pwi, &ones_mask([1, 2, 2])).unwrap();
        assert!(s.mean.iter().all(|&m| m == 3.0));
        assert!(s.std.iter().all(|&d| d == 0.0));

        let pwi = series(&vec![vec![1.0, 3.0]; 3], [1, 1, 2]);
        let s = slice_stats(&pwi, &ones_mask([1, 1, 2])).unwrap();
        assert_eq!(s.mean, vec![2.0; 3]);
        assert_eq!(s.std, vec![1.0; 3]);

        let empty = Volume3D::new(Tensor::zeros(&[1, 1, 2]), [1.0; 3]).unwrap();
        assert!(matches!(slice_stats(&pwi, &empty), Err(Error::Mask(_))));
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let pts = [[1.0, 2.0], [3.0, 4.0], [5.0, 0.0]];
        let km = kmeans(&pts, 1, &mut SeededRng::new(1), 100).unwrap();
        assert_eq!(km.centroids, vec![[3.0, 2.0]]);
    }

    /// Sum of squared distances for the optimal 2-partition, by enumeration.
    fn brute_force_2means(points: &[[f64; 2]]) -> f64 {
        let n = points.len();
        let mut best = f64::INFINITY;
        for mask in 1..(1u32 << n) - 1 {
            let mut cost = 0.0;
            for side in [true, false] {
                let members: Vec<&[f64; 2]> = (0..n)
                    .filter(|&i| ((mask >> i) & 1 == 1) == side)
                    .map(|i| &points[i])
                    .collect();
                let c = [
                    members.iter().map(|p| p[0]).sum::<f64>() / members.len() as f64,
                    members.iter().map(|p| p[1]).sum::<f64>() / members.len() as f64,
                ];
                cost += members.iter().map(|p| dist2(p, &c)).sum::<f64>();
            }
            best = best.min(cost);
        }
        best
    }

    #[test]
    fn kmeans_four_points_reaches_global_optimum() {
        let pts = [[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
        let opt = brute_force_2means(&pts);
        assert_eq!(opt, 1.0);
        for seed in 0..20 {
            let km = kmeans(&pts, 2, &mut SeededRng::new(seed), 100).unwrap();
            let mut c = km.centroids.clone();
            c.sort_by(|a, b| a[0].total_cmp(&b[0]));
            assert_eq!(c, vec![[0.0, 0.5], [10.0, 0.5]]);
        }
    }

    #[test]
    fn kmeans_too_few_points() {
        let pts = [[0.0, 0.0]; 3];
        assert!(matches!(
            kmeans(&pts, 5, &mut SeededRng::new(0), 100),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn v_curve_peak() {
        let mean: Vec<f64> = (0..20).map(|t| (t as f64 - 7.0).abs() + 1.0).collect();
        let std = vec![0.5; 20];
        let stats = SliceStats { mean, std };
        assert_eq!(detect_peak(&stats, &mut SeededRng::new(3)).unwrap(), 7);
    }

    #[test]
    fn flat_signal_is_degenerate() {
        let stats = SliceStats {
            mean: vec![5.0; 10],
            std: vec![1.0; 10],
        };
        assert!(matches!(
            detect_peak(&stats, &mut SeededRng::new(0)),
            Err(Error::DegenerateSignal(_))
        ));
        let short = SliceStats {
            mean: vec![1.0, 0.0, 1.0],
            std: vec![0.0; 3],
        };
        assert!(detect_peak(&short, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn window_arithmetic() {
        assert_eq!(window_start(40, 15, 26), 2);
        assert_eq!(window_start(26, 25, 26), 0);
        assert_eq!(window_start(40, 39, 26), 14);
        let pwi = series(&vec![vec![0.0; 1]; 20], [1, 1, 1]);
        assert!(matches!(
            extract_window(&pwi, 5, 26),
            Err(Error::InsufficientAcquisitions {
                needed: 26,
                available: 20
            })
        ));
    }

    #[test]
    fn window_copies_slices() {
        let values: Vec<Vec<f32>> = (0..40).map(|t| vec![t as f32; 2]).collect();
        let pwi = series(&values, [1, 1, 2]);
        let w = extract_window(&pwi, 15, 26).unwrap();
        assert_eq!(w.start, 2);
        assert_eq!(w.data.n_times(), 26);
        assert_eq!(w.data.frame(0), &[2.0, 2.0]);
        assert_eq!(w.data.frame(25), &[27.0, 27.0]);
    }

    proptest! {
        #[test]
        fn window_contains_peak(nt in 26usize..80, peak_frac in 0.0f64..1.0, len in 2usize..27) {
            let peak = ((nt - 1) as f64 * peak_frac) as usize;
            let s = window_start(nt, peak, len);
            prop_assert!(s + len <= nt);
            prop_assert!(s <= peak && peak < s + len);
        }

        #[test]
        fn peak_invariant_under_affine_rescale(
            a in 0.1f64..10.0,
            b in -50.0f64..50.0,
            noise in proptest::collection::vec(-0.05f64..0.05, 30),
            seed in 0u64..100,
        ) {
            let mean: Vec<f64> = (0..30).map(|t| 10.0 - 4.0 * (-((t as f64 - 11.0) / 3.0).powi(2)).exp() + noise[t]).collect();
            let std: Vec<f64> = (0..30).map(|t| 1.0 + 2.0 * (-((t as f64 - 11.0) / 3.0).powi(2)).exp()).collect();
            let base = detect_peak(&SliceStats { mean: mean.clone(), std: std.clone() }, &mut SeededRng::new(seed)).unwrap();
            let scaled = SliceStats {
                mean: mean.iter().map(|m| a * m + b).collect(),
                std: std.iter().map(|s| a * s).collect(),
            };
            prop_assert_eq!(base, detect_peak(&scaled, &mut SeededRng::new(seed)).unwrap());
        }
    }
}
