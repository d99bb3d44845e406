//! Whole-volume inference by overlapping patch tiles, slice by slice.
//!
//! Tiles of side `P` are placed at stride `P / 2`, with a final tile flush
//! against the far edge. Overlapping outputs are averaged.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{map_samples, nmi_matrix, NmiMatrix};
use crate::model::{Inputs, Model, ModelKind, Trunk};
use crate::preproc::{cut_patch, PreprocessedCase};
use crate::tensor::{Tensor, Volume3D};
use crate::train::batch_inputs;

/// Tiles evaluated per forward pass.
pub const TILE_BATCH: usize = 8;

/// Tile origins covering `0..n` with side `p` and stride `p / 2`.
pub fn tile_origins(n: usize, p: usize) -> Result<Vec<usize>> {
    if p == 0 || p > n {
        return Err(Error::Shape(format!(
            "tile size {p} does not fit extent {n}"
        )));
    }
    let stride = (p / 2).max(1);
    let mut v: Vec<usize> = (0..=n - p).step_by(stride).collect();
    if *v.last().unwrap() != n - p {
        v.push(n - p);
    }
    Ok(v)
}

fn check_patch(model: &Model<f32>, case: &PreprocessedCase, p: usize) -> Result<()> {
    let m = model.config.spatial_multiple();
    if !p.is_multiple_of(m) {
        return Err(Error::Parameter(format!(
            "tile size {p} must be a multiple of {m}"
        )));
    }
    let need = model.config.pwi_channels;
    if model.kind.uses_pwi() && case.pwi.n_times() != need {
        return Err(Error::Shape(format!(
            "case has {} PWI frames, model expects {need}",
            case.pwi.n_times()
        )));
    }
    Ok(())
}

/// Averages the `[B, K, P, P]` outputs of `run` over all tiles of every slice.
fn tiled<F>(
    model: &Model<f32>,
    case: &PreprocessedCase,
    p: usize,
    k: usize,
    run: F,
) -> Result<Vec<Volume3D>>
where
    F: Fn(&Inputs<f32>) -> Result<Tensor<f32>> + Sync,
{
    check_patch(model, case, p)?;
    let [nz, ny, nx] = case.brain.dims();
    let ys = tile_origins(ny, p)?;
    let xs = tile_origins(nx, p)?;
    let origins: Vec<[usize; 2]> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| [y, x]))
        .collect();
    let cfg = &model.config;
    let slices = (0..nz)
        .into_par_iter()
        .map(|z| {
            let mut sum = vec![0f32; k * ny * nx];
            let mut count = vec![0u32; ny * nx];
            for chunk in origins.chunks(TILE_BATCH) {
                let patches: Vec<_> = chunk.iter().map(|&o| cut_patch(case, p, z, o)).collect();
                let refs: Vec<_> = patches.iter().collect();
                let (inputs, _) = batch_inputs(&refs, cfg.pwi_channels, cfg.map_channels)?;
                let out = run(&inputs)?;
                let od = out.dims();
                if od[1] != k {
                    return Err(Error::Shape(format!(
                        "tile output has {} channels, expected {k}",
                        od[1]
                    )));
                }
                for (b, o) in chunk.iter().enumerate() {
                    for c in 0..k {
                        let base = (b * k + c) * p * p;
                        for yy in 0..p {
                            let row = &out.data()[base + yy * p..base + (yy + 1) * p];
                            let dst = c * ny * nx + (o[0] + yy) * nx + o[1];
                            for (d, &v) in sum[dst..dst + p].iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                    }
                    for yy in 0..p {
                        for c in &mut count[(o[0] + yy) * nx + o[1]..(o[0] + yy) * nx + o[1] + p] {
                            *c += 1;
                        }
                    }
                }
            }
            for c in 0..k {
                for (v, &n) in sum[c * ny * nx..(c + 1) * ny * nx].iter_mut().zip(&count) {
                    *v /= n as f32;
                }
            }
            Ok(sum)
        })
        .collect::<Result<Vec<_>>>()?;
    (0..k)
        .map(|c| {
            Volume3D::from_fn([nz, ny, nx], case.brain.spacing(), |z, y, x| {
                slices[z][c * ny * nx + y * nx + x]
            })
        })
        .collect()
}

/// Lesion-outcome probability for every voxel of a preprocessed case.
pub fn predict_case(model: &Model<f32>, case: &PreprocessedCase, patch: usize) -> Result<Volume3D> {
    let mut v = tiled(model, case, patch, 1, |inp| model.forward(inp))?;
    Ok(v.remove(0))
}

/// Post-GRU features of one trunk as volumes, named as in
/// [`Model::extract_features`].
pub fn case_features(
    model: &Model<f32>,
    case: &PreprocessedCase,
    trunk: Trunk,
    patch: usize,
) -> Result<Vec<(String, Volume3D)>> {
    if !model.has_trunk(trunk) {
        return Err(Error::ModelKind(format!(
            "{} model has no {trunk:?} trunk",
            model.kind
        )));
    }
    let vols = tiled(model, case, patch, model.features_width(), |inp| {
        Ok(model.extract_features(inp, trunk)?.maps)
    })?;
    Ok(vols
        .into_iter()
        .enumerate()
        .map(|(i, v)| (format!("feature_{i}"), v))
        .collect())
}

/// NMI between each learned PWI-branch feature of a branched model and
/// each preprocessed standard map, over the brain mask.
pub fn nmi_report(
    model: &Model<f32>,
    case: &PreprocessedCase,
    bins: usize,
    patch: usize,
) -> Result<NmiMatrix> {
    if model.kind != ModelKind::Branched {
        return Err(Error::ModelKind(format!(
            "NMI analysis needs a branched model, got {}",
            model.kind
        )));
    }
    let feats = case_features(model, case, Trunk::Pwi, patch)?;
    let samples: Vec<(String, Vec<f64>)> = feats
        .into_iter()
        .map(|(n, v)| {
            let s = v
                .data()
                .iter()
                .zip(case.brain.data())
                .filter(|(_, &b)| b > 0.0)
                .map(|(&x, _)| x as f64)
                .collect();
            (n, s)
        })
        .collect();
    nmi_matrix(&samples, &map_samples(&case.maps, &case.brain), bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::case::MapKind;
    use crate::model::ArchConfig;
    use crate::phantom::synth_corpus;
    use crate::preproc::{preprocess_case, PreprocConfig};
    use crate::temporal::{extract_window, WINDOW_LENGTH};

    fn case() -> PreprocessedCase {
        let ph = synth_corpus(1, 9).unwrap().remove(0);
        let mut b = ph.bundle;
        b.pwi = extract_window(&b.pwi, ph.true_peak_index, WINDOW_LENGTH)
            .unwrap()
            .data;
        let cfg = PreprocConfig {
            target_dims: [2, 16, 24],
            patch_size: 8,
            ..PreprocConfig::desk()
        };
        preprocess_case(&b, &cfg).unwrap()
    }

    fn tiny() -> ArchConfig {
        ArchConfig {
            unet_levels: 2,
            base_filters: 2,
            gru_hidden: 3,
            merge_filters: 2,
            ..ArchConfig::default()
        }
    }

    #[test]
    fn origins_cover_extent() {
        assert_eq!(tile_origins(64, 32).unwrap(), vec![0, 16, 32]);
        assert_eq!(tile_origins(40, 16).unwrap(), vec![0, 8, 16, 24]);
        assert_eq!(tile_origins(41, 16).unwrap(), vec![0, 8, 16, 24, 25]);
        assert_eq!(tile_origins(16, 16).unwrap(), vec![0]);
        assert!(tile_origins(8, 16).is_err());
    }

    #[test]
    fn tiled_prediction_matches_tile_forward() {
        let c = case();
        let m = Model::<f32>::build(ModelKind::Branched, tiny(), 1).unwrap();
        let prob = predict_case(&m, &c, 8).unwrap();
        assert_eq!(prob.dims(), [2, 16, 24]);
        assert!(prob.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // the (0, 0) corner is covered by one tile only
        let pt = cut_patch(&c, 8, 1, [0, 0]);
        let (inp, _) = batch_inputs(&[&pt], 26, 6).unwrap();
        let direct = m.forward(&inp).unwrap();
        assert_eq!(prob.get(1, 0, 0), direct.data()[0]);
        assert_eq!(prob.get(1, 3, 2), direct.data()[3 * 8 + 2]);
        assert!(matches!(predict_case(&m, &c, 6), Err(Error::Parameter(_))));
    }

    #[test]
    fn nmi_report_shape_and_kind() {
        let c = case();
        let m = Model::<f32>::build(ModelKind::Branched, tiny(), 2).unwrap();
        let r = nmi_report(&m, &c, 16, 8).unwrap();
        assert_eq!((r.rows.len(), r.columns.len()), (3, 6));
        assert_eq!(r.columns[4], MapKind::Tmax.label());
        assert!(r.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let s = Model::<f32>::build(ModelKind::Standard, tiny(), 2).unwrap();
        assert!(matches!(
            nmi_report(&s, &c, 16, 8),
            Err(Error::ModelKind(_))
        ));
    }
}
