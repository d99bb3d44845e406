//! Built-in verification suite run by `pwtk selftest` and the acceptance
//! harness: finite-difference gradient checks on every kernel, the soft-Dice
//! gradient audit, and reference oracles for the evaluation metrics.

use serde::Serialize;

use crate::autodiff::{
    add_gru_params, four_dir_gru, grad_check, grad_check_with_params, gru_params, soft_dice,
    Direction, GradCheckOptions, Graph, GruCombine, GruParams, NodeId, ParamStore,
};
use crate::error::Result;
use crate::metrics::{dice_binary, nmi, precision, recall, surface_distances, Mask};
use crate::model::{ArchConfig, Model, ModelKind};
use crate::rng::SeededRng;
use crate::tensor::{Spacing, Tensor};

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

pub const KERNEL_TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-4;

fn randn(rng: &mut SeededRng, dims: &[usize], scale: f64) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| scale * rng.normal()).collect()).unwrap()
}

/// Values bounded away from zero, for kinked kernels.
fn away_from_zero(rng: &mut SeededRng, dims: &[usize]) -> Tensor<f64> {
    let n = dims.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.uniform_range(0.05, 1.5);
            if rng.uniform() < 0.5 {
                -m
            } else {
                m
            }
        })
        .collect();
    Tensor::from_vec(dims, v).unwrap()
}

/// A shuffled grid of well-separated values, so pooling has no near ties.
fn distinct(rng: &mut SeededRng, dims: &[usize]) -> Tensor<f64> {
    let n: usize = dims.iter().product();
    let mut v: Vec<f64> = (0..n)
        .map(|i| 0.1 * i as f64 - 0.05 * n as f64 + 0.01 * rng.uniform())
        .collect();
    rng.shuffle(&mut v);
    Tensor::from_vec(dims, v).unwrap()
}

type Builder = Box<dyn Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>>;

fn kernel_instance(kernel: &str, rng: &mut SeededRng) -> (Vec<Tensor<f64>>, Builder) {
    let b = 1 + rng.below(2);
    let h = 2 + 2 * rng.below(3);
    let w = 2 + 2 * rng.below(3);
    let c = 1 + rng.below(3);
    match kernel {
        "conv2d" => {
            let k = [1, 3, 5][rng.below(3)];
            let co = 1 + rng.below(3);
            let pad = if rng.uniform() < 0.7 { k / 2 } else { 0 };
            let (h, w) = (h.max(k), w.max(k));
            let stride = 1 + rng.below(2);
            (
                vec![
                    randn(rng, &[b, c, h, w], 1.0),
                    randn(rng, &[co, c, k, k], 0.5),
                    randn(rng, &[co], 0.5),
                ],
                Box::new(move |g, ids| g.conv2d(ids[0], ids[1], ids[2], stride, pad)),
            )
        }
        "relu" => (
            vec![away_from_zero(rng, &[b, c, h, w])],
            Box::new(|g, ids| Ok(g.relu(ids[0]))),
        ),
        "sigmoid" => (
            vec![randn(rng, &[b, c, h, w], 2.0)],
            Box::new(|g, ids| Ok(g.sigmoid(ids[0]))),
        ),
        "maxpool2" => (
            vec![distinct(rng, &[b, c, h, w])],
            Box::new(|g, ids| g.maxpool2(ids[0])),
        ),
        "upsample2" => (
            vec![randn(rng, &[b, c, h, w], 1.0)],
            Box::new(|g, ids| g.upsample2(ids[0])),
        ),
        "concat" => {
            let c2 = 1 + rng.below(3);
            (
                vec![
                    randn(rng, &[b, c, h, w], 1.0),
                    randn(rng, &[b, c2, h, w], 1.0),
                ],
                Box::new(|g, ids| g.concat(&[ids[0], ids[1]])),
            )
        }
        "soft_dice" => {
            let p = Tensor::from_vec(
                &[b, 1, h, w],
                (0..b * h * w)
                    .map(|_| rng.uniform_range(0.02, 0.98))
                    .collect(),
            )
            .unwrap();
            let labels = Tensor::from_vec(
                &[b, 1, h, w],
                (0..b * h * w)
                    .map(|_| (rng.uniform() < 0.4) as u8 as f64)
                    .collect(),
            )
            .unwrap();
            (
                vec![p],
                Box::new(move |g, ids| g.soft_dice_loss(ids[0], &labels, 1e-6)),
            )
        }
        tag => {
            let dir: Direction = tag
                .trim_start_matches("gru2d ")
                .parse()
                .expect("direction tag");
            let hid = 1 + rng.below(3);
            (
                vec![
                    randn(rng, &[b, c, h, w], 1.0),
                    randn(rng, &[3 * hid, c], 0.7),
                    randn(rng, &[3 * hid, hid], 0.7),
                    randn(rng, &[3 * hid], 0.3),
                ],
                Box::new(move |g, ids| {
                    g.gru2d(
                        ids[0],
                        GruParams {
                            w: ids[1],
                            u: ids[2],
                            b: ids[3],
                        },
                        dir,
                    )
                }),
            )
        }
    }
}

fn four_dir_instance(rng: &mut SeededRng, combine: GruCombine) -> Result<f64> {
    let (c, hid) = (1 + rng.below(2), 1 + rng.below(2));
    let mut store = ParamStore::<f64>::new();
    let init = rng.split("init");
    for d in Direction::ALL {
        add_gru_params(&mut store, d.tag(), c, hid, &init)?;
    }
    for (name, t) in store.iter_mut() {
        let mut r = init.split(name);
        t.data_mut().iter_mut().for_each(|v| *v = 0.6 * r.normal());
    }
    let (h, w) = (2 + rng.below(3), 2 + rng.below(3));
    let x = randn(rng, &[1, c, h, w], 1.0);
    let r = grad_check_with_params(&store, &[x], GradCheckOptions::default(), |g, s, ids| {
        let ps: Vec<GruParams> = Direction::ALL
            .iter()
            .map(|d| gru_params(g, s, d.tag()))
            .collect::<Result<_>>()?;
        four_dir_gru(g, ids[0], &ps.try_into().expect("four"), combine)
    })?;
    Ok(r.max_rel_error)
}

pub const KERNELS: [&str; 11] = [
    "conv2d",
    "relu",
    "sigmoid",
    "maxpool2",
    "upsample2",
    "concat",
    "gru2d si",
    "gru2d is",
    "gru2d ap",
    "gru2d pa",
    "soft_dice",
];

/// Worst relative error of every kernel over `instances` random cases, plus
/// `four_dir_gru` in both combine modes.
pub fn kernel_gradients(instances: usize, seed: u64) -> Result<Vec<Check>> {
    let root = SeededRng::new(seed).split("kernels");
    let mut out = Vec::new();
    for kernel in KERNELS {
        let mut worst = 0.0f64;
        for i in 0..instances {
            let mut rng = root.split(kernel).split_index(i as u64);
            let (inputs, build) = kernel_instance(kernel, &mut rng);
            let r = grad_check(&inputs, GradCheckOptions::default(), |g, ids| build(g, ids))?;
            worst = worst.max(r.max_rel_error);
        }
        out.push(Check::new(
            format!("grad {kernel}"),
            worst < KERNEL_TOLERANCE,
            format!("max rel error {worst:.2e} over {instances} instances"),
        ));
    }
    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut rng = root.split("four_dir_gru").split_index(i as u64);
        let combine = if i % 2 == 0 {
            GruCombine::Sum
        } else {
            GruCombine::Concat
        };
        worst = worst.max(four_dir_instance(&mut rng, combine)?);
    }
    out.push(Check::new(
        "grad four_dir_gru",
        worst < KERNEL_TOLERANCE,
        format!("max rel error {worst:.2e} over {instances} instances"),
    ));
    Ok(out)
}

/// Input and parameter gradients of a small branched model in `f64`.
pub fn model_gradient(seed: u64) -> Result<Check> {
    let cfg = ArchConfig {
        unet_levels: 1,
        base_filters: 2,
        gru_hidden: 2,
        merge_filters: 2,
        post_fusion_gru: true,
        ..ArchConfig::default()
    };
    let m = Model::<f64>::build(ModelKind::Branched, cfg.clone(), seed)?;
    let mut rng = SeededRng::new(seed).split("model-inputs");
    let mut img = |c: usize| {
        Tensor::from_vec(
            &[1, c, 2, 2],
            (0..4 * c).map(|_| rng.uniform_range(0.0, 1.0)).collect(),
        )
        .unwrap()
    };
    let inputs = vec![img(cfg.pwi_channels), img(cfg.map_channels)];
    let r = grad_check_with_params(
        &m.params,
        &inputs,
        GradCheckOptions::default(),
        |g, store, ids| {
            let model = Model {
                kind: ModelKind::Branched,
                config: cfg.clone(),
                params: store.clone(),
            };
            Ok(model.forward_nodes(g, Some(ids[0]), Some(ids[1]))?.prob)
        },
    )?;
    Ok(Check::new(
        "grad branched model",
        r.max_rel_error < MODEL_TOLERANCE,
        format!(
            "max rel error {:.2e} over {} scalars",
            r.max_rel_error, r.checked
        ),
    ))
}

/// The gradient expression as usually printed, without the leading 2.
pub fn printed_dice_gradient(p: &[f64], g: &[f64]) -> Vec<f64> {
    let s: f64 = p.iter().map(|v| v * v).sum::<f64>() + g.iter().map(|v| v * v).sum::<f64>();
    let i: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    p.iter()
        .zip(g)
        .map(|(&pj, &gj)| (gj * s - 2.0 * pj * i) / (s * s))
        .collect()
}

/// Backward of the training loss node, negated back to `∂Dice/∂p`.
fn node_dice_gradient(p: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    let n = p.len();
    let mut graph = Graph::new();
    let pid = graph.leaf(Tensor::from_vec(&[1, 1, 1, n], p.to_vec())?);
    let loss = graph.soft_dice_loss(pid, &Tensor::from_vec(&[1, 1, 1, n], g.to_vec())?, 0.0)?;
    let grads = graph.backward(loss)?;
    Ok(grads
        .get(pid)
        .expect("leaf gradient")
        .iter()
        .map(|v| -v)
        .collect())
}

/// Soft-Dice gradient audit over `instances` random `(p, g)` pairs.
pub fn dice_audit(instances: usize, seed: u64) -> Result<Vec<Check>> {
    let root = SeededRng::new(seed).split("dice-audit");
    let (mut worst_ratio, mut worst_fd) = (0.0f64, 0.0f64);
    for i in 0..instances {
        let mut rng = root.split_index(i as u64);
        let n = 1 + rng.below(40);
        let p: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.0, 1.0)).collect();
        let mut g: Vec<f64> = (0..n).map(|_| (rng.uniform() < 0.5) as u8 as f64).collect();
        if g.iter().all(|&v| v == 0.0) {
            g[rng.below(n)] = 1.0;
        }
        let ours = node_dice_gradient(&p, &g)?;
        let printed = printed_dice_gradient(&p, &g);
        for ((a, e), j) in ours.iter().zip(&printed).zip(0..) {
            worst_ratio = worst_ratio.max((a - 2.0 * e).abs() / a.abs().max(1.0));
            let h = 1e-6;
            let (mut pp, mut pm) = (p.clone(), p.clone());
            pp[j] += h;
            pm[j] -= h;
            let fd = (soft_dice(&pp, &g, 0.0)? - soft_dice(&pm, &g, 0.0)?) / (2.0 * h);
            worst_fd = worst_fd.max((a - fd).abs() / a.abs().max(fd.abs()).max(1.0));
        }
    }
    let d = soft_dice(&[0.5], &[1.0], 0.0)?;
    let dd = node_dice_gradient(&[0.5], &[1.0])?[0];
    Ok(vec![
        Check::new(
            "dice gradient = 2 x printed form",
            worst_ratio <= 1e-12,
            format!("max deviation {worst_ratio:.2e} over {instances} instances"),
        ),
        Check::new(
            "dice gradient vs finite differences",
            worst_fd < 1e-8,
            format!("max rel error {worst_fd:.2e}"),
        ),
        Check::new(
            "dice N=1 p=0.5 g=1",
            (d - 0.8).abs() < 1e-15 && (dd - 0.96).abs() < 1e-12,
            format!("Dice {d}, derivative {dd}"),
        ),
    ])
}

/// `(hausdorff, assd)` by comparing every surface voxel pair.
pub fn brute_force_distances(a: &Mask, b: &Mask, s: Spacing) -> (f64, f64) {
    let (pa, pb) = (a.surface().points(), b.surface().points());
    let dist = |p: &[usize; 3], q: &[usize; 3]| {
        (0..3)
            .map(|i| ((p[i] as f64 - q[i] as f64) * s[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let nearest = |p: &[usize; 3], set: &[[usize; 3]]| {
        set.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min)
    };
    let da: Vec<f64> = pa.iter().map(|p| nearest(p, &pb)).collect();
    let db: Vec<f64> = pb.iter().map(|p| nearest(p, &pa)).collect();
    let hd = da.iter().chain(&db).copied().fold(0.0, f64::max);
    let assd = (da.iter().sum::<f64>() + db.iter().sum::<f64>()) / (da.len() + db.len()) as f64;
    (hd, assd)
}

fn random_mask(rng: &mut SeededRng, dims: [usize; 3]) -> Mask {
    let p = rng.uniform_range(0.02, 0.8);
    let n = dims.iter().product();
    let mut bits: Vec<bool> = (0..n).map(|_| rng.uniform() < p).collect();
    if !bits.contains(&true) {
        bits[rng.below(n)] = true;
    }
    Mask::new(dims, bits).unwrap()
}

/// Overlap metrics against counting and surface distances against the
/// all-pairs reference on `pairs` random masks of side at most 8.
pub fn metric_oracles(pairs: usize, seed: u64) -> Result<Vec<Check>> {
    let root = SeededRng::new(seed).split("metric-oracles");
    let (mut overlap_ok, mut worst, mut ordered) = (true, 0.0f64, true);
    for i in 0..pairs {
        let mut rng = root.split_index(i as u64);
        let dims = [1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(8)];
        let s = [
            rng.uniform_range(0.5, 4.0),
            rng.uniform_range(0.5, 2.0),
            rng.uniform_range(0.5, 2.0),
        ];
        let a = random_mask(&mut rng, dims);
        let b = random_mask(&mut rng, dims);
        let inter = a
            .bits()
            .iter()
            .zip(b.bits())
            .filter(|(x, y)| **x && **y)
            .count();
        let (na, nb) = (a.count(), b.count());
        overlap_ok &= dice_binary(&a, &b)? == 2.0 * inter as f64 / (na + nb) as f64
            && precision(&a, &b)? == inter as f64 / na as f64
            && recall(&a, &b)? == inter as f64 / nb as f64;
        let d = surface_distances(&a, &b, s)?;
        let (hd, asd) = brute_force_distances(&a, &b, s);
        worst = worst
            .max((d.hausdorff - hd).abs())
            .max((d.assd - asd).abs());
        ordered &= d.hausdorff >= d.assd;
    }
    let a = Mask::from_points([1, 4, 5], &[[0, 0, 0]])?;
    let b = Mask::from_points([1, 4, 5], &[[0, 3, 4]])?;
    let single = surface_distances(&a, &b, [1.0; 3])?;
    Ok(vec![
        Check::new(
            "overlap metrics vs counts",
            overlap_ok,
            format!("{pairs} pairs, exact equality"),
        ),
        Check::new(
            "surface distances vs all pairs",
            worst <= 1e-9,
            format!("max abs deviation {worst:.2e} over {pairs} pairs"),
        ),
        Check::new("hausdorff >= assd", ordered, format!("{pairs} pairs")),
        Check::new(
            "single voxel (0,0,0) vs (0,3,4)",
            single.hausdorff == 5.0 && single.assd == 5.0,
            format!("hausdorff {}, assd {}", single.hausdorff, single.assd),
        ),
    ])
}

/// Self-information, independence and identity oracles for [`nmi`].
pub fn nmi_oracles(seed: u64) -> Result<Vec<Check>> {
    let mut rng = SeededRng::new(seed).split("nmi-oracles");
    let x: Vec<f64> = (0..20_000).map(|_| rng.normal()).collect();
    let self_nmi = nmi(&x, &x, 64)?;
    let u: Vec<f64> = (0..100_000).map(|_| rng.uniform()).collect();
    let v: Vec<f64> = (0..100_000).map(|_| rng.uniform()).collect();
    let indep = nmi(&u, &v, 64)?;
    Ok(vec![
        Check::new(
            "nmi(x, x) = 1",
            (self_nmi - 1.0).abs() <= 1e-9,
            format!("{self_nmi}"),
        ),
        Check::new(
            "nmi independent uniforms < 0.05",
            indep < 0.05,
            format!("{indep:.4}"),
        ),
    ])
}

/// Everything `pwtk selftest` runs.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    let mut v = kernel_gradients(20, seed)?;
    v.push(model_gradient(seed)?);
    v.extend(dice_audit(1000, seed)?);
    v.extend(metric_oracles(200, seed)?);
    v.extend(nmi_oracles(seed)?);
    Ok(v)
}
