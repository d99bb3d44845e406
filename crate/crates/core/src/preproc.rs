//! Resizing, clipping, intensity scaling, brain masking and 2D patch sampling.
//!
//! The chain applied by [`preprocess_case`] is: resize every image to the
//! target grid, clip Tmax and ADC to their physiological ranges, then scale
//! each map (and the PWI window as a whole) linearly onto `[0, 255]` using
//! the min/max observed inside the brain mask. Background is set to zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::case::{CaseBundle, MapKind, PerfusionMaps};
use crate::rng::SeededRng;
use crate::tensor::{Tensor, Volume3D, Volume4D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocConfig {
    /// `(Z, Y, X)`.
    pub target_dims: [usize; 3],
    pub tmax_clip: [f32; 2],
    pub adc_clip: [f32; 2],
    pub scale_range: [f32; 2],
    pub patch_size: usize,
    pub patches_per_case: usize,
    /// Probability that a patch is centred on a lesion voxel rather than any
    /// brain voxel. Falls back to brain sampling when the case has no lesion.
    pub lesion_fraction: f64,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl PreprocConfig {
    pub fn desk() -> Self {
        Self {
            target_dims: [8, 64, 64],
            tmax_clip: [0.0, 20.0],
            adc_clip: [0.0, 2600.0],
            scale_range: [0.0, 255.0],
            patch_size: 32,
            patches_per_case: 64,
            lesion_fraction: 0.0,
        }
    }

    pub fn published() -> Self {
        Self {
            target_dims: [32, 256, 256],
            patch_size: 88,
            patches_per_case: 550,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("tmax_clip", self.tmax_clip),
            ("adc_clip", self.adc_clip),
            ("scale_range", self.scale_range),
        ] {
            if !(r[0] < r[1]) {
                return Err(Error::Config(format!(
                    "{name} must satisfy lo < hi, got {r:?}"
                )));
            }
        }
        if self.target_dims.contains(&0) {
            return Err(Error::Config("target_dims must be positive".into()));
        }
        let [_, y, x] = self.target_dims;
        if self.patch_size == 0 || self.patch_size > y.min(x) {
            return Err(Error::Config(format!(
                "patch_size {} must be in 1..={}",
                self.patch_size,
                y.min(x)
            )));
        }
        if !(0.0..=1.0).contains(&self.lesion_fraction) {
            return Err(Error::Config("lesion_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn clip_map(volume: &Volume3D, lo: f32, hi: f32) -> Result<Volume3D> {
    if !(lo < hi) {
        return Err(Error::Parameter(format!(
            "clip range [{lo}, {hi}] is empty"
        )));
    }
    Ok(volume.map(|v| v.clamp(lo, hi)))
}

fn masked_range(values: &[f32], mask: &[f32]) -> Result<(f32, f32)> {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for (&v, &m) in values.iter().zip(mask) {
        if m > 0.0 {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo > hi {
        return Err(Error::Mask("brain mask is empty".into()));
    }
    if lo == hi {
        return Err(Error::DegenerateRange(format!(
            "constant value {lo} inside the mask"
        )));
    }
    Ok((lo, hi))
}

fn apply_scale(values: &mut [f32], mask: &[f32], (lo, hi): (f32, f32), out: [f32; 2]) {
    let s = ((out[1] - out[0]) as f64) / ((hi - lo) as f64);
    for (v, &m) in values.iter_mut().zip(mask.iter().cycle()) {
        *v = if m > 0.0 {
            (out[0] as f64 + (*v - lo) as f64 * s) as f32
        } else {
            out[0]
        };
    }
}

/// Affine map of the masked `[min, max]` onto `out`; voxels outside the mask
/// become `out[0]`.
pub fn scale_linear(volume: &Volume3D, mask: &Volume3D, out: [f32; 2]) -> Result<Volume3D> {
    if mask.dims() != volume.dims() {
        return Err(Error::Shape("mask and volume dims differ".into()));
    }
    let range = masked_range(volume.data(), mask.data())?;
    let mut v = volume.clone();
    apply_scale(v.data_mut(), mask.data(), range, out);
    Ok(v)
}

/// [`scale_linear`] over all frames jointly, so relative timing is kept.
pub fn scale_linear_4d(series: &Volume4D, mask: &Volume3D, out: [f32; 2]) -> Result<Volume4D> {
    if mask.dims() != series.spatial_dims() {
        return Err(Error::Shape("mask and series dims differ".into()));
    }
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for t in 0..series.n_times() {
        for (&v, &m) in series.frame(t).iter().zip(mask.data()) {
            if m > 0.0 {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if lo > hi {
        return Err(Error::Mask("brain mask is empty".into()));
    }
    if lo == hi {
        return Err(Error::DegenerateRange(format!(
            "constant series value {lo}"
        )));
    }
    let mut data = series.data().to_vec();
    apply_scale(&mut data, mask.data(), (lo, hi), out);
    Volume4D::new(
        Tensor::from_vec(&series.dims(), data)?,
        series.spacing(),
        series.dt(),
    )
}

/// Sample positions and left weights for corner-aligned 1D interpolation.
fn axis_weights(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            let pos = if n_out == 1 {
                (n_in - 1) as f64 / 2.0
            } else {
                i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
            };
            let i0 = (pos.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

fn resize_data(src: &[f32], dims: [usize; 3], target: [usize; 3]) -> Vec<f32> {
    let [z0, y0, x0] = dims;
    let wz = axis_weights(z0, target[0]);
    let wy = axis_weights(y0, target[1]);
    let wx = axis_weights(x0, target[2]);
    let at = |z: usize, y: usize, x: usize| src[(z * y0 + y) * x0 + x] as f64;
    let mut out = Vec::with_capacity(target.iter().product());
    for &(za, zb, fz) in &wz {
        for &(ya, yb, fy) in &wy {
            for &(xa, xb, fx) in &wx {
                let lerp = |a: f64, b: f64, f: f64| if f == 0.0 { a } else { a + (b - a) * f };
                let plane = |z| {
                    lerp(
                        lerp(at(z, ya, xa), at(z, ya, xb), fx),
                        lerp(at(z, yb, xa), at(z, yb, xb), fx),
                        fy,
                    )
                };
                out.push(lerp(plane(za), plane(zb), fz) as f32);
            }
        }
    }
    out
}

fn resized_spacing(spacing: [f64; 3], dims: [usize; 3], target: [usize; 3]) -> [f64; 3] {
    std::array::from_fn(|a| spacing[a] * dims[a] as f64 / target[a] as f64)
}

pub fn resize_trilinear(volume: &Volume3D, target: [usize; 3]) -> Result<Volume3D> {
    if target.contains(&0) {
        return Err(Error::Parameter(format!(
            "target dims {target:?} must be positive"
        )));
    }
    let dims = volume.dims();
    if dims == target {
        return Ok(volume.clone());
    }
    let data = resize_data(volume.data(), dims, target);
    Volume3D::new(
        Tensor::from_vec(&target, data)?,
        resized_spacing(volume.spacing(), dims, target),
    )
}

/// Per-frame [`resize_trilinear`].
pub fn resize_trilinear_4d(series: &Volume4D, target: [usize; 3]) -> Result<Volume4D> {
    if target.contains(&0) {
        return Err(Error::Parameter(format!(
            "target dims {target:?} must be positive"
        )));
    }
    let dims = series.spatial_dims();
    if dims == target {
        return Ok(series.clone());
    }
    let mut data = Vec::with_capacity(series.n_times() * target.iter().product::<usize>());
    for t in 0..series.n_times() {
        data.extend(resize_data(series.frame(t), dims, target));
    }
    Volume4D::new(
        Tensor::from_vec(&[series.n_times(), target[0], target[1], target[2]], data)?,
        resized_spacing(series.spacing(), dims, target),
        series.dt(),
    )
}

/// Binary mask of voxels with positive ADC.
pub fn brain_mask(maps: &PerfusionMaps) -> Result<Volume3D> {
    let m = maps
        .get(MapKind::Adc)
        .map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    if m.data().iter().all(|&v| v == 0.0) {
        return Err(Error::Mask("no voxel with positive ADC".into()));
    }
    Ok(m)
}

/// A case after resizing, clipping and scaling; PWI is the temporal window.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedCase {
    pub case_id: String,
    pub pwi: Volume4D,
    pub maps: PerfusionMaps,
    pub gt: Option<Volume3D>,
    pub brain: Volume3D,
    /// Maps replaced by zeros because they were constant inside the brain.
    pub degenerate: Vec<MapKind>,
}

impl PreprocessedCase {
    pub fn n_channels(&self) -> usize {
        self.pwi.n_times() + MapKind::ALL.len()
    }

    pub fn channel_names(&self) -> Vec<String> {
        channel_names(self.pwi.n_times())
    }
}

/// `pwi_00 .. pwi_{T-1}` followed by the map labels.
pub fn channel_names(n_pwi: usize) -> Vec<String> {
    (0..n_pwi)
        .map(|t| format!("pwi_{t:02}"))
        .chain(MapKind::ALL.iter().map(|k| k.label().to_string()))
        .collect()
}

/// Runs the full chain on a case whose PWI has already been windowed.
pub fn preprocess_case(bundle: &CaseBundle, config: &PreprocConfig) -> Result<PreprocessedCase> {
    config.validate()?;
    let target = config.target_dims;
    if bundle.pwi.spatial_dims() != bundle.maps.dims() {
        return Err(Error::Shape(format!(
            "PWI spatial dims {:?} differ from map dims {:?}",
            bundle.pwi.spatial_dims(),
            bundle.maps.dims()
        )));
    }
    let resized = bundle.maps.map_all(|_, v| resize_trilinear(v, target))?;
    let clipped = resized.map_all(|k, v| match k {
        MapKind::Tmax => clip_map(v, config.tmax_clip[0], config.tmax_clip[1]),
        MapKind::Adc => clip_map(v, config.adc_clip[0], config.adc_clip[1]),
        _ => Ok(v.clone()),
    })?;
    let brain = brain_mask(&clipped)?;
    let mut degenerate = Vec::new();
    let maps = clipped.map_all(|k, v| match scale_linear(v, &brain, config.scale_range) {
        Err(Error::DegenerateRange(_)) => {
            degenerate.push(k);
            Ok(v.map(|_| 0.0))
        }
        other => other,
    })?;
    let pwi = scale_linear_4d(
        &resize_trilinear_4d(&bundle.pwi, target)?,
        &brain,
        config.scale_range,
    )?;
    let gt = match &bundle.lesion_gt {
        Some(g) => Some(resize_trilinear(g, target)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 })),
        None => None,
    };
    Ok(PreprocessedCase {
        case_id: bundle.case_id.clone(),
        pwi,
        maps,
        gt,
        brain,
        degenerate,
    })
}

/// A 2D multi-channel training sample cut from one axial slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// `[C, P, P]`.
    pub channels: Tensor<f32>,
    /// `[P, P]`, binary; all zeros when the case has no ground truth.
    pub gt: Tensor<f32>,
    pub case_id: String,
    pub z: usize,
    pub origin: [usize; 2],
}

/// Location record for the patch index file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchLocation {
    pub case_id: String,
    pub z: usize,
    pub origin: [usize; 2],
}

impl Patch {
    pub fn location(&self) -> PatchLocation {
        PatchLocation {
            case_id: self.case_id.clone(),
            z: self.z,
            origin: self.origin,
        }
    }
}

/// Valid `(z, y0, x0)` origins whose patch centre lies where `mask` is set.
fn candidate_origins(mask: &Volume3D, p: usize) -> Vec<Vec<[usize; 2]>> {
    let [nz, ny, nx] = mask.dims();
    let c = p / 2;
    (0..nz)
        .map(|z| {
            let s = mask.slice_z(z);
            let mut v = Vec::new();
            for y0 in 0..=ny - p {
                for x0 in 0..=nx - p {
                    if s[(y0 + c) * nx + x0 + c] > 0.0 {
                        v.push([y0, x0]);
                    }
                }
            }
            v
        })
        .collect()
}

/// Cuts the `[C, P, P]` block at a given slice and origin.
pub fn cut_patch(case: &PreprocessedCase, p: usize, z: usize, origin: [usize; 2]) -> Patch {
    let [_, ny, nx] = case.brain.dims();
    let nt = case.pwi.n_times();
    let mut data = Vec::with_capacity(case.n_channels() * p * p);
    let plane_off = z * ny * nx;
    let copy = |src: &[f32], out: &mut Vec<f32>| {
        for y in origin[0]..origin[0] + p {
            let row = plane_off + y * nx;
            out.extend_from_slice(&src[row + origin[1]..row + origin[1] + p]);
        }
    };
    for t in 0..nt {
        copy(case.pwi.frame(t), &mut data);
    }
    for (_, m) in case.maps.iter() {
        copy(m.data(), &mut data);
    }
    let mut gt = Vec::with_capacity(p * p);
    match &case.gt {
        Some(g) => copy(g.data(), &mut gt),
        None => gt.resize(p * p, 0.0),
    }
    Patch {
        channels: Tensor::from_vec(&[case.n_channels(), p, p], data).expect("patch dims"),
        gt: Tensor::from_vec(&[p, p], gt).expect("patch dims"),
        case_id: case.case_id.clone(),
        z,
        origin,
    }
}

fn draw(cands: &[Vec<[usize; 2]>], rng: &mut SeededRng) -> Option<(usize, [usize; 2])> {
    let slices: Vec<usize> = (0..cands.len()).filter(|&z| !cands[z].is_empty()).collect();
    if slices.is_empty() {
        return None;
    }
    let z = slices[rng.below(slices.len())];
    Some((z, cands[z][rng.below(cands[z].len())]))
}

/// Draws `patches_per_case` patches; patch `i` uses `rng.split_index(i)`.
pub fn extract_patches(
    case: &PreprocessedCase,
    config: &PreprocConfig,
    rng: &SeededRng,
) -> Result<Vec<Patch>> {
    let p = config.patch_size;
    let [_, ny, nx] = case.brain.dims();
    if p == 0 || p > ny.min(nx) {
        return Err(Error::Sampling(format!(
            "patch size {p} does not fit a {ny}x{nx} slice"
        )));
    }
    let brain = candidate_origins(&case.brain, p);
    if brain.iter().all(Vec::is_empty) {
        return Err(Error::Sampling(format!(
            "no {p}x{p} patch of case {} is centred inside the brain",
            case.case_id
        )));
    }
    let lesion = match (&case.gt, config.lesion_fraction > 0.0) {
        (Some(g), true) => {
            Some(candidate_origins(g, p)).filter(|c| c.iter().any(|v| !v.is_empty()))
        }
        _ => None,
    };
    (0..config.patches_per_case)
        .map(|i| {
            let mut r = rng.split_index(i as u64);
            let pool = match &lesion {
                Some(l) if r.uniform() < config.lesion_fraction => l,
                _ => &brain,
            };
            let (z, origin) = draw(pool, &mut r).expect("nonempty candidate pool");
            Ok(cut_patch(case, p, z, origin))
        })
        .collect()
}

/// Stacks patches as `[N, C + 1, P, P]`, ground truth in the last channel.
pub fn stack_patches(patches: &[Patch]) -> Result<Tensor<f32>> {
    let first = patches
        .first()
        .ok_or_else(|| Error::Sampling("no patches to stack".into()))?;
    let [c, p, _] = <[usize; 3]>::try_from(first.channels.dims()).expect("rank 3");
    let mut data = Vec::with_capacity(patches.len() * (c + 1) * p * p);
    for pt in patches {
        if pt.channels.dims() != first.channels.dims() {
            return Err(Error::Shape("patches differ in shape".into()));
        }
        data.extend_from_slice(pt.channels.data());
        data.extend_from_slice(pt.gt.data());
    }
    Tensor::from_vec(&[patches.len(), c + 1, p, p], data)
}

/// Inverse of [`stack_patches`].
pub fn unstack_patches(stacked: &Tensor<f32>, locations: &[PatchLocation]) -> Result<Vec<Patch>> {
    let d = stacked.dims();
    if d.len() != 4 || d[0] != locations.len() || d[1] < 2 {
        return Err(Error::Shape(format!(
            "stacked patches {d:?} do not match {} locations",
            locations.len()
        )));
    }
    let (c, p) = (d[1] - 1, d[2]);
    let per = (c + 1) * p * p;
    Ok(locations
        .iter()
        .enumerate()
        .map(|(i, loc)| {
            let block = &stacked.data()[i * per..(i + 1) * per];
            Patch {
                channels: Tensor::from_vec(&[c, p, p], block[..c * p * p].to_vec()).expect("dims"),
                gt: Tensor::from_vec(&[p, p], block[c * p * p..].to_vec()).expect("dims"),
                case_id: loc.case_id.clone(),
                z: loc.z,
                origin: loc.origin,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{synth_case, PhantomConfig};
    use crate::temporal::{extract_window, WINDOW_LENGTH};
    use proptest::prelude::*;

    fn vol(dims: [usize; 3], data: Vec<f32>) -> Volume3D {
        Volume3D::new(Tensor::from_vec(&dims, data).unwrap(), [1.0; 3]).unwrap()
    }

    #[test]
    fn clip_examples() {
        let v = vol([1, 1, 3], vec![35.0, 7.0, -5.0]);
        assert_eq!(clip_map(&v, 0.0, 20.0).unwrap().data(), &[20.0, 7.0, 0.0]);
        assert!(clip_map(&v, 1.0, 1.0).is_err());
    }

    #[test]
    fn scale_examples() {
        let ones = vol([1, 1, 3], vec![1.0; 3]);
        let v = vol([1, 1, 3], vec![0.0, 5.0, 10.0]);
        assert_eq!(
            scale_linear(&v, &ones, [0.0, 255.0]).unwrap().data(),
            &[0.0, 127.5, 255.0]
        );
        assert!(matches!(
            scale_linear(&ones, &ones, [0.0, 255.0]),
            Err(Error::DegenerateRange(_))
        ));
        let half = vol([1, 1, 3], vec![0.0, 1.0, 1.0]);
        let s = scale_linear(&vol([1, 1, 3], vec![99.0, 2.0, 4.0]), &half, [0.0, 255.0]).unwrap();
        assert_eq!(s.data(), &[0.0, 0.0, 255.0]);
    }

    #[test]
    fn resize_examples() {
        let ramp = vol([1, 1, 2], vec![0.0, 1.0]);
        assert_eq!(
            resize_trilinear(&ramp, [1, 1, 3]).unwrap().data(),
            &[0.0, 0.5, 1.0]
        );
        let ones = vol([2, 2, 2], vec![1.0; 8]);
        let r = resize_trilinear(&ones, [3, 5, 7]).unwrap();
        assert!(r.data().iter().all(|&v| v == 1.0));
        assert_eq!(r.spacing(), [2.0 / 3.0, 0.4, 2.0 / 7.0]);
        let v = vol([2, 2, 2], (0..8).map(|i| i as f32).collect());
        assert_eq!(resize_trilinear(&v, [2, 2, 2]).unwrap(), v);
        assert_eq!(resize_trilinear(&ramp, [1, 1, 1]).unwrap().data(), &[0.5]);
    }

    proptest! {
        #[test]
        fn resize_reproduces_linear_ramps(
            dims in proptest::array::uniform3(2usize..6),
            target in proptest::array::uniform3(1usize..9),
            c in proptest::array::uniform4(-3.0f64..3.0),
        ) {
            let f = |z: f64, y: f64, x: f64| c[0] + c[1] * z + c[2] * y + c[3] * x;
            let v = Volume3D::from_fn(dims, [1.0; 3], |z, y, x| f(z as f64, y as f64, x as f64) as f32).unwrap();
            let r = resize_trilinear(&v, target).unwrap();
            let pos = |i: usize, a: usize| if target[a] == 1 {
                (dims[a] - 1) as f64 / 2.0
            } else {
                i as f64 * (dims[a] - 1) as f64 / (target[a] - 1) as f64
            };
            for z in 0..target[0] {
                for y in 0..target[1] {
                    for x in 0..target[2] {
                        let want = f(pos(z, 0), pos(y, 1), pos(x, 2));
                        let got = r.get(z, y, x) as f64;
                        prop_assert!((got - want).abs() <= 1e-5 * want.abs().max(1.0));
                    }
                }
            }
        }

        #[test]
        fn clip_then_scale_is_monotone(vals in proptest::collection::vec(-100.0f32..3000.0, 2..40)) {
            let n = vals.len();
            let v = vol([1, 1, n], vals.clone());
            let ones = vol([1, 1, n], vec![1.0; n]);
            let c = clip_map(&v, 0.0, 2600.0).unwrap();
            if let Ok(s) = scale_linear(&c, &ones, [0.0, 255.0]) {
                for i in 0..n {
                    for j in 0..n {
                        if vals[i] <= vals[j] {
                            prop_assert!(s.data()[i] <= s.data()[j]);
                        }
                    }
                }
            }
        }
    }

    fn phantom_pre(cfg: &PreprocConfig) -> (crate::phantom::PhantomCase, PreprocessedCase) {
        let ph = synth_case(&PhantomConfig::default(), "p0").unwrap();
        let mut b = ph.bundle.clone();
        b.pwi = extract_window(&b.pwi, ph.true_peak_index, WINDOW_LENGTH)
            .unwrap()
            .data;
        let pre = preprocess_case(&b, cfg).unwrap();
        (ph, pre)
    }

    #[test]
    fn brain_mask_matches_phantom() {
        let ph = synth_case(&PhantomConfig::default(), "p0").unwrap();
        assert_eq!(brain_mask(&ph.bundle.maps).unwrap(), ph.brain_mask);
        let mut maps = ph.bundle.maps.clone();
        maps.get_mut(MapKind::Adc).data_mut().fill(0.0);
        assert!(matches!(brain_mask(&maps), Err(Error::Mask(_))));
        maps.get_mut(MapKind::Adc).data_mut()[7] = 3.0;
        assert_eq!(brain_mask(&maps).unwrap().data().iter().sum::<f32>(), 1.0);
    }

    #[test]
    fn patches_on_phantom() {
        let cfg = PreprocConfig::desk();
        let (_, pre) = phantom_pre(&cfg);
        assert!(pre.degenerate.is_empty());
        let rng = SeededRng::new(4);
        let a = extract_patches(&pre, &cfg, &rng).unwrap();
        let b = extract_patches(&pre, &cfg, &rng).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        let c = cfg.patch_size;
        for p in &a {
            assert_eq!(p.channels.dims(), &[32, 32, 32]);
            assert!(p.origin[0] + c <= 64 && p.origin[1] + c <= 64);
            assert_eq!(
                pre.brain.get(p.z, p.origin[0] + c / 2, p.origin[1] + c / 2),
                1.0
            );
        }
        let back = unstack_patches(
            &stack_patches(&a).unwrap(),
            &a.iter().map(Patch::location).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn full_width_patch_and_lesion_bias() {
        let mut cfg = PreprocConfig::desk();
        cfg.patch_size = 64;
        cfg.patches_per_case = 5;
        let (_, pre) = phantom_pre(&cfg);
        for p in extract_patches(&pre, &cfg, &SeededRng::new(0)).unwrap() {
            assert_eq!(p.origin, [0, 0]);
        }
        let mut cfg = PreprocConfig::desk();
        cfg.lesion_fraction = 1.0;
        let (_, pre) = phantom_pre(&cfg);
        for p in extract_patches(&pre, &cfg, &SeededRng::new(0)).unwrap() {
            assert_eq!(p.gt.get(&[16, 16]), 1.0);
        }
    }

    #[test]
    fn scaled_ranges() {
        let (_, pre) = phantom_pre(&PreprocConfig::desk());
        for (_, m) in pre.maps.iter() {
            assert_eq!(m.tensor().max_value(), 255.0);
            assert_eq!(m.tensor().min_value(), 0.0);
        }
        assert_eq!(pre.pwi.tensor().max_value(), 255.0);
        assert_eq!(pre.n_channels(), 32);
        assert_eq!(pre.channel_names()[26], "rCBF");
    }

    #[test]
    fn config_validation() {
        assert!(PreprocConfig::desk().validate().is_ok());
        assert!(PreprocConfig::published().validate().is_ok());
        let mut c = PreprocConfig::desk();
        c.patch_size = 65;
        assert!(c.validate().is_err());
        let mut c = PreprocConfig::desk();
        c.adc_clip = [5.0, 5.0];
        assert!(c.validate().is_err());
    }
}
