//! Reverse-mode differentiation over a small set of image kernels.
//!
//! A [`Graph`] records every operation as it is evaluated; [`Graph::backward`]
//! sweeps the tape in reverse. The same code runs in `f32` for training and in
//! `f64` for finite-difference verification.

pub mod dice;
pub mod gradcheck;
pub mod graph;
pub mod gru;
pub mod kernels;
pub mod linalg;
pub mod params;

use serde::{Deserialize, Serialize};

pub use dice::{soft_dice, soft_dice_grad, DICE_EPS};
pub use gradcheck::{grad_check, grad_check_with_params, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, GruParams, NodeId};
pub use gru::Direction;
pub use params::{Init, ParamStore};

use crate::error::Result;
use crate::tensor::Scalar;

/// How the four directional GRU outputs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GruCombine {
    #[default]
    Sum,
    Concat,
}

/// Runs [`Graph::gru2d`] in every [`Direction::ALL`] direction and combines
/// the outputs. `params[i]` belongs to `Direction::ALL[i]`; passing the same
/// ids twice ties directions together.
pub fn four_dir_gru<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    params: &[GruParams; 4],
    combine: GruCombine,
) -> Result<NodeId> {
    let outs = Direction::ALL
        .iter()
        .zip(params)
        .map(|(&d, &p)| g.gru2d(x, p, d))
        .collect::<Result<Vec<_>>>()?;
    match combine {
        GruCombine::Sum => {
            let mut acc = outs[0];
            for &o in &outs[1..] {
                acc = g.add(acc, o)?;
            }
            Ok(acc)
        }
        GruCombine::Concat => g.concat(&outs),
    }
}

/// Declares `W`, `U`, `b` for one direction under `prefix`.
pub fn add_gru_params<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    in_channels: usize,
    hidden: usize,
    rng: &crate::rng::SeededRng,
) -> Result<()> {
    let limit = 1.0 / (hidden as f64).sqrt();
    store.add(
        &format!("{prefix}.w"),
        &[3 * hidden, in_channels],
        Init::Uniform { limit },
        rng,
    )?;
    store.add(
        &format!("{prefix}.u"),
        &[3 * hidden, hidden],
        Init::Uniform { limit },
        rng,
    )?;
    store.add(&format!("{prefix}.b"), &[3 * hidden], Init::Zeros, rng)
}

pub fn gru_params<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
) -> Result<GruParams> {
    Ok(GruParams {
        w: g.param(store, &format!("{prefix}.w"))?,
        u: g.param(store, &format!("{prefix}.u"))?,
        b: g.param(store, &format!("{prefix}.b"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::tensor::Tensor;

    fn randn(dims: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
        let n = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    fn rotate180(t: &Tensor<f64>) -> Tensor<f64> {
        let d = t.dims().to_vec();
        let hw = d[2] * d[3];
        let mut out = t.clone();
        for plane in 0..d[0] * d[1] {
            let src = &t.data()[plane * hw..(plane + 1) * hw];
            for (i, v) in out.data_mut()[plane * hw..(plane + 1) * hw]
                .iter_mut()
                .enumerate()
            {
                *v = src[hw - 1 - i];
            }
        }
        out
    }

    #[test]
    fn tied_four_dir_gru_is_rotation_equivariant() {
        let mut rng = SeededRng::new(21);
        let mut store = ParamStore::<f64>::new();
        add_gru_params(&mut store, "v", 3, 4, &rng).unwrap();
        add_gru_params(&mut store, "h", 3, 4, &rng).unwrap();
        for name in ["v.b", "h.b"] {
            let b = rng.split(name);
            let t = store.get_mut(name).unwrap();
            let mut r = b;
            t.data_mut().iter_mut().for_each(|v| *v = 0.3 * r.normal());
        }
        let x = randn(&[1, 3, 5, 6], &mut rng);
        let run = |x: Tensor<f64>| {
            let mut g = Graph::new();
            let xi = g.input(x);
            let v = gru_params(&mut g, &store, "v").unwrap();
            let h = gru_params(&mut g, &store, "h").unwrap();
            let o = four_dir_gru(&mut g, xi, &[v, v, h, h], GruCombine::Sum).unwrap();
            g.value(o).clone()
        };
        let a = rotate180(&run(x.clone()));
        let b = run(rotate180(&x));
        assert_eq!(a.dims(), &[1, 4, 5, 6]);
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_params_zero_output_and_concat_width() {
        let rng = SeededRng::new(0);
        let mut store = ParamStore::<f64>::new();
        for d in Direction::ALL {
            store
                .insert(
                    &format!("{}.w", d.tag()),
                    Tensor::zeros(&[6, 5]),
                    Init::Zeros,
                )
                .unwrap();
            store
                .insert(
                    &format!("{}.u", d.tag()),
                    Tensor::zeros(&[6, 2]),
                    Init::Zeros,
                )
                .unwrap();
            store
                .insert(&format!("{}.b", d.tag()), Tensor::zeros(&[6]), Init::Zeros)
                .unwrap();
        }
        let mut r = rng.split("x");
        let mut g = Graph::new();
        let x = g.input(randn(&[2, 5, 3, 4], &mut r));
        let ps: Vec<GruParams> = Direction::ALL
            .iter()
            .map(|d| gru_params(&mut g, &store, d.tag()).unwrap())
            .collect();
        let ps: [GruParams; 4] = ps.try_into().unwrap();
        let o = four_dir_gru(&mut g, x, &ps, GruCombine::Sum).unwrap();
        assert_eq!(g.value(o).dims(), &[2, 2, 3, 4]);
        assert!(g.value(o).data().iter().all(|&v| v == 0.0));
        let c = four_dir_gru(&mut g, x, &ps, GruCombine::Concat).unwrap();
        assert_eq!(g.value(c).dims(), &[2, 8, 3, 4]);
    }

    #[test]
    fn conv_and_gru_gradients() {
        let mut rng = SeededRng::new(3);
        let x = randn(&[2, 3, 5, 4], &mut rng);
        let w = randn(&[4, 3, 3, 3], &mut rng);
        let b = randn(&[4], &mut rng);
        let r = grad_check(&[x, w, b], GradCheckOptions::default(), |g, ids| {
            g.conv2d(ids[0], ids[1], ids[2], 1, 1)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");

        for d in Direction::ALL {
            let x = randn(&[1, 2, 4, 6], &mut rng);
            let w = randn(&[9, 2], &mut rng);
            let u = randn(&[9, 3], &mut rng);
            let b = randn(&[9], &mut rng);
            let r = grad_check(&[x, w, u, b], GradCheckOptions::default(), |g, ids| {
                g.gru2d(
                    ids[0],
                    GruParams {
                        w: ids[1],
                        u: ids[2],
                        b: ids[3],
                    },
                    d,
                )
            })
            .unwrap();
            assert!(r.max_rel_error < 1e-5, "{d}: {r:?}");
        }
    }

    #[test]
    fn soft_dice_node_gradient() {
        let mut rng = SeededRng::new(8);
        let p = Tensor::from_vec(
            &[2, 1, 3, 3],
            (0..18).map(|_| rng.uniform_range(0.05, 0.95)).collect(),
        )
        .unwrap();
        let labels = Tensor::from_vec(
            &[2, 1, 3, 3],
            (0..18)
                .map(|_| (rng.uniform() < 0.4) as u8 as f64)
                .collect(),
        )
        .unwrap();
        let r = grad_check(&[p], GradCheckOptions::default(), |g, ids| {
            g.soft_dice_loss(ids[0], &labels, DICE_EPS)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
