//! Soft Dice overlap on probabilities and its exact gradient.
//!
//! With `I = Σ pᵢgᵢ`, `S = Σ pᵢ² + Σ gᵢ²`:
//!
//! ```text
//! Dice     = (2I + ε) / (S + ε)
//! ∂Dice/∂pⱼ = 2 · [gⱼ (S + ε) − pⱼ (2I + ε)] / (S + ε)²
//! ```
//!
//! At `ε = 0` the gradient reduces to `2 · [gⱼ S − 2pⱼ I] / S²`.

use crate::error::{Error, Result};

/// Smoothing used by the training loss.
pub const DICE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiceSums {
    pub intersection: f64,
    pub denominator: f64,
}

pub fn dice_sums(p: &[f64], g: &[f64]) -> Result<DiceSums> {
    if p.len() != g.len() || p.is_empty() {
        return Err(Error::Shape(format!(
            "soft dice needs equal nonempty lengths, got {} and {}",
            p.len(),
            g.len()
        )));
    }
    let mut i = 0.0;
    let mut s = 0.0;
    for (&pv, &gv) in p.iter().zip(g) {
        i += pv * gv;
        s += pv * pv + gv * gv;
    }
    Ok(DiceSums {
        intersection: i,
        denominator: s,
    })
}

pub fn soft_dice(p: &[f64], g: &[f64], eps: f64) -> Result<f64> {
    let s = dice_sums(p, g)?;
    Ok((2.0 * s.intersection + eps) / (s.denominator + eps))
}

pub fn soft_dice_grad(p: &[f64], g: &[f64], eps: f64) -> Result<Vec<f64>> {
    let s = dice_sums(p, g)?;
    let num = 2.0 * s.intersection + eps;
    let den = s.denominator + eps;
    let inv = 2.0 / (den * den);
    Ok(p.iter()
        .zip(g)
        .map(|(&pj, &gj)| inv * (gj * den - pj * num))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_voxel() {
        assert!((soft_dice(&[0.5], &[1.0], 0.0).unwrap() - 0.8).abs() < 1e-15);
        assert!((soft_dice_grad(&[0.5], &[1.0], 0.0).unwrap()[0] - 0.96).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_empty() {
        let g = [1.0, 0.0, 1.0, 1.0];
        assert_eq!(soft_dice(&g, &g, 0.0).unwrap(), 1.0);
        assert!(soft_dice_grad(&g, &g, 0.0)
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1e-15));
        assert_eq!(soft_dice(&[0.0; 3], &[0.0; 3], DICE_EPS).unwrap(), 1.0);
        assert!(soft_dice(&[0.0; 3], &[0.0; 2], DICE_EPS).is_err());
    }
}
