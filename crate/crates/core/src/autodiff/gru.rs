//! Spatial GRU scan over one axis of a `[B, C, H, W]` feature map.
//!
//! The core scans rows: step `l` reads row `l` of every column and carries a
//! hidden state per column. Column directions transpose H and W around the
//! core; reverse directions flip the scan axis. Gates follow
//!
//! ```text
//! z = σ(Wz x + Uz h + bz)
//! r = σ(Wr x + Ur h + br)
//! n = tanh(Wn x + r ⊙ (Un h) + bn)
//! h' = (1 − z) ⊙ h + z ⊙ n
//! ```
//!
//! with `W` stored `[3·Hid, C]`, `U` stored `[3·Hid, Hid]` and `b` `[3·Hid]`,
//! gate blocks in the order z, r, n.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::linalg::{gemm, gemm_nt, transpose};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Scan direction. Superior→inferior walks rows in increasing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    SupInf,
    InfSup,
    AntPost,
    PostAnt,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::SupInf,
        Direction::InfSup,
        Direction::AntPost,
        Direction::PostAnt,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Direction::SupInf => "si",
            Direction::InfSup => "is",
            Direction::AntPost => "ap",
            Direction::PostAnt => "pa",
        }
    }

    fn along_columns(self) -> bool {
        matches!(self, Direction::AntPost | Direction::PostAnt)
    }

    fn reversed(self) -> bool {
        matches!(self, Direction::InfSup | Direction::PostAnt)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::SupInf => "S->I",
            Direction::InfSup => "I->S",
            Direction::AntPost => "A->P",
            Direction::PostAnt => "P->A",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('>', "").as_str() {
            "S-I" | "SI" => Ok(Direction::SupInf),
            "I-S" | "IS" => Ok(Direction::InfSup),
            "A-P" | "AP" => Ok(Direction::AntPost),
            "P-A" | "PA" => Ok(Direction::PostAnt),
            _ => Err(Error::Parameter(format!("unknown GRU direction {s:?}"))),
        }
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Permutes one `[C, H, W]` plane stack into the core's `[C, L, M]` layout.
fn to_core<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, dir: Direction) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        if dir.along_columns() {
            let t = transpose(h, w, plane);
            push_rows(&mut out, &t, w, h, dir.reversed());
        } else {
            push_rows(&mut out, plane, h, w, dir.reversed());
        }
    }
    out
}

fn push_rows<T: Scalar>(out: &mut Vec<T>, plane: &[T], l: usize, m: usize, rev: bool) {
    for s in 0..l {
        let row = if rev { l - 1 - s } else { s };
        out.extend_from_slice(&plane[row * m..(row + 1) * m]);
    }
}

/// Inverse of [`to_core`], added into `dst`.
fn from_core_add<T: Scalar>(
    core: &[T],
    c: usize,
    h: usize,
    w: usize,
    dir: Direction,
    dst: &mut [T],
) {
    let (l, m) = if dir.along_columns() { (w, h) } else { (h, w) };
    for ci in 0..c {
        let plane = &core[ci * l * m..(ci + 1) * l * m];
        let mut unflipped = Vec::with_capacity(l * m);
        push_rows(&mut unflipped, plane, l, m, dir.reversed());
        let out = &mut dst[ci * h * w..(ci + 1) * h * w];
        let src = if dir.along_columns() {
            transpose(l, m, &unflipped)
        } else {
            unflipped
        };
        for (o, v) in out.iter_mut().zip(src) {
            *o += v;
        }
    }
}

/// Per-sample state saved for the backward pass.
#[derive(Debug, Clone)]
pub struct GruCache<T> {
    /// Core-layout input `[C, L, M]`.
    xc: Vec<T>,
    /// Core-layout output `[Hid, L, M]`.
    hc: Vec<T>,
    /// `[L][Hid·M]` each.
    z: Vec<T>,
    r: Vec<T>,
    n: Vec<T>,
    ghn: Vec<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct GruShape {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub hidden: usize,
}

impl GruShape {
    pub fn new(x: &[usize], w: &[usize], u: &[usize], b: &[usize]) -> Result<Self> {
        if x.len() != 4 {
            return Err(Error::Shape(format!("gru2d expects x[B,C,H,W], got {x:?}")));
        }
        let hid3 = w.first().copied().unwrap_or(0);
        if hid3 == 0 || hid3 % 3 != 0 {
            return Err(Error::Shape(format!(
                "GRU input weights {w:?} must be [3·Hid, C]"
            )));
        }
        let hid = hid3 / 3;
        if w != [hid3, x[1]] || u != [hid3, hid] || b != [hid3] {
            return Err(Error::Shape(format!(
                "GRU params W{w:?} U{u:?} b{b:?} inconsistent with input {x:?}"
            )));
        }
        Ok(Self {
            batch: x[0],
            in_channels: x[1],
            height: x[2],
            width: x[3],
            hidden: hid,
        })
    }

    fn lm(&self, dir: Direction) -> (usize, usize) {
        if dir.along_columns() {
            (self.width, self.height)
        } else {
            (self.height, self.width)
        }
    }
}

pub fn gru2d_forward<T: Scalar>(
    sh: &GruShape,
    dir: Direction,
    x: &[T],
    w: &[T],
    u: &[T],
    b: &[T],
) -> (Vec<T>, Vec<GruCache<T>>) {
    let (c, h, wd, hid) = (sh.in_channels, sh.height, sh.width, sh.hidden);
    let (l, m) = sh.lm(dir);
    let hm = hid * m;
    let mut out = vec![T::default(); sh.batch * hid * h * wd];
    let mut caches = Vec::with_capacity(sh.batch);
    for bi in 0..sh.batch {
        let xc = to_core(&x[bi * c * h * wd..(bi + 1) * c * h * wd], c, h, wd, dir);
        // input projections for all steps at once: [3Hid, L·M]
        let mut gx = vec![T::default(); 3 * hid * l * m];
        for g in 0..3 * hid {
            gx[g * l * m..(g + 1) * l * m].fill(b[g]);
        }
        gemm(3 * hid, l * m, c, w, &xc, &mut gx);

        let mut hc = vec![T::default(); hid * l * m];
        let mut cz = vec![T::default(); l * hm];
        let mut cr = vec![T::default(); l * hm];
        let mut cn = vec![T::default(); l * hm];
        let mut cghn = vec![T::default(); l * hm];
        let mut hprev = vec![T::default(); hm];
        let mut gh = vec![T::default(); 3 * hm];
        for s in 0..l {
            gh.fill(T::default());
            gemm(3 * hid, m, hid, u, &hprev, &mut gh);
            let mut hnext = vec![T::default(); hm];
            for j in 0..hid {
                for col in 0..m {
                    let q = j * m + col;
                    let at = |g: usize| gx[(g * hid + j) * l * m + s * m + col];
                    let zv = sigmoid(at(0) + gh[q]);
                    let rv = sigmoid(at(1) + gh[hm + q]);
                    let ghn = gh[2 * hm + q];
                    let nv = (at(2) + rv * ghn).tanh();
                    hnext[q] = (T::one() - zv) * hprev[q] + zv * nv;
                    cz[s * hm + q] = zv;
                    cr[s * hm + q] = rv;
                    cn[s * hm + q] = nv;
                    cghn[s * hm + q] = ghn;
                }
            }
            for j in 0..hid {
                hc[j * l * m + s * m..j * l * m + (s + 1) * m]
                    .copy_from_slice(&hnext[j * m..(j + 1) * m]);
            }
            hprev = hnext;
        }
        from_core_add(
            &hc,
            hid,
            h,
            wd,
            dir,
            &mut out[bi * hid * h * wd..(bi + 1) * hid * h * wd],
        );
        caches.push(GruCache {
            xc,
            hc,
            z: cz,
            r: cr,
            n: cn,
            ghn: cghn,
        });
    }
    (out, caches)
}

pub struct GruGrads<'a, T> {
    pub dx: Option<&'a mut [T]>,
    pub dw: Option<&'a mut [T]>,
    pub du: Option<&'a mut [T]>,
    pub db: Option<&'a mut [T]>,
}

pub fn gru2d_backward<T: Scalar>(
    sh: &GruShape,
    dir: Direction,
    w: &[T],
    u: &[T],
    caches: &[GruCache<T>],
    dout: &[T],
    mut grads: GruGrads<'_, T>,
) {
    let (c, h, wd, hid) = (sh.in_channels, sh.height, sh.width, sh.hidden);
    let (l, m) = sh.lm(dir);
    let hm = hid * m;
    let ut = transpose(3 * hid, hid, u);
    let wt = transpose(3 * hid, c, w);
    for (bi, cache) in caches.iter().enumerate() {
        let dh_core = to_core(
            &dout[bi * hid * h * wd..(bi + 1) * hid * h * wd],
            hid,
            h,
            wd,
            dir,
        );
        let mut dgx = vec![T::default(); 3 * hid * l * m];
        let mut dnext = vec![T::default(); hm];
        let mut dgh = vec![T::default(); 3 * hm];
        let mut hprev = vec![T::default(); hm];
        for s in (0..l).rev() {
            if s > 0 {
                for j in 0..hid {
                    hprev[j * m..(j + 1) * m]
                        .copy_from_slice(&cache.hc[j * l * m + (s - 1) * m..j * l * m + s * m]);
                }
            } else {
                hprev.fill(T::default());
            }
            let mut dprev = vec![T::default(); hm];
            for j in 0..hid {
                for col in 0..m {
                    let q = j * m + col;
                    let dh = dh_core[j * l * m + s * m + col] + dnext[q];
                    let (zv, rv, nv, ghn) = (
                        cache.z[s * hm + q],
                        cache.r[s * hm + q],
                        cache.n[s * hm + q],
                        cache.ghn[s * hm + q],
                    );
                    let dn = dh * zv;
                    let dz = dh * (nv - hprev[q]);
                    dprev[q] = dh * (T::one() - zv);
                    let da_n = dn * (T::one() - nv * nv);
                    let dr = da_n * ghn;
                    let da_z = dz * zv * (T::one() - zv);
                    let da_r = dr * rv * (T::one() - rv);
                    dgh[q] = da_z;
                    dgh[hm + q] = da_r;
                    dgh[2 * hm + q] = da_n * rv;
                    let base = s * m + col;
                    dgx[j * l * m + base] = da_z;
                    dgx[(hid + j) * l * m + base] = da_r;
                    dgx[(2 * hid + j) * l * m + base] = da_n;
                }
            }
            if let Some(du) = grads.du.as_deref_mut() {
                gemm_nt(3 * hid, hid, m, &dgh, &hprev, du);
            }
            gemm(hid, m, 3 * hid, &ut, &dgh, &mut dprev);
            dnext = dprev;
        }
        if let Some(db) = grads.db.as_deref_mut() {
            for g in 0..3 * hid {
                db[g] += super::linalg::sum(&dgx[g * l * m..(g + 1) * l * m]);
            }
        }
        if let Some(dw) = grads.dw.as_deref_mut() {
            gemm_nt(3 * hid, c, l * m, &dgx, &cache.xc, dw);
        }
        if let Some(dx) = grads.dx.as_deref_mut() {
            let mut dxc = vec![T::default(); c * l * m];
            gemm(c, l * m, 3 * hid, &wt, &dgx, &mut dxc);
            from_core_add(
                &dxc,
                c,
                h,
                wd,
                dir,
                &mut dx[bi * c * h * wd..(bi + 1) * c * h * wd],
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn direction_parsing() {
        for d in Direction::ALL {
            assert_eq!(d.to_string().parse::<Direction>().unwrap(), d);
        }
        assert!(matches!(
            "X->Y".parse::<Direction>(),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn layout_round_trip() {
        let x: Vec<f64> = (0..2 * 3 * 4).map(f64::from).collect();
        for d in Direction::ALL {
            let core = to_core(&x, 2, 3, 4, d);
            let mut back = vec![0.0; x.len()];
            from_core_add(&core, 2, 3, 4, d, &mut back);
            assert_eq!(back, x, "{d}");
        }
        // I->S visits the last row first
        assert_eq!(
            &to_core(&x, 1, 3, 4, Direction::InfSup)[..4],
            &[8.0, 9.0, 10.0, 11.0]
        );
        // A->P visits column 0 first
        assert_eq!(
            &to_core(&x, 1, 3, 4, Direction::AntPost)[..3],
            &[0.0, 4.0, 8.0]
        );
    }

    #[test]
    fn zero_everything_is_fixpoint() {
        let sh = GruShape::new(&[1, 2, 3, 4], &[6, 2], &[6, 2], &[6]).unwrap();
        let (out, _) = gru2d_forward(
            &sh,
            Direction::SupInf,
            &[0.0f64; 24],
            &[0.0; 12],
            &[0.0; 12],
            &[0.0; 6],
        );
        assert!(out.iter().all(|&v| v == 0.0));
    }

    /// One cell step written out from the gate equations.
    fn cell(x: &[f64], h: &[f64], w: &[f64], u: &[f64], b: &[f64], hid: usize) -> Vec<f64> {
        let c = x.len();
        let pre = |g: usize, j: usize| -> (f64, f64) {
            let row = g * hid + j;
            let wx: f64 = (0..c).map(|i| w[row * c + i] * x[i]).sum::<f64>() + b[row];
            let uh: f64 = (0..hid).map(|i| u[row * hid + i] * h[i]).sum();
            (wx, uh)
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        (0..hid)
            .map(|j| {
                let (zx, zh) = pre(0, j);
                let (rx, rh) = pre(1, j);
                let (nx, nh) = pre(2, j);
                let z = sig(zx + zh);
                let r = sig(rx + rh);
                let n = (nx + r * nh).tanh();
                (1.0 - z) * h[j] + z * n
            })
            .collect()
    }

    #[test]
    fn single_row_is_one_cell_application() {
        let mut rng = SeededRng::new(9);
        let (c, wd, hid) = (3, 5, 2);
        let x: Vec<f64> = (0..c * wd).map(|_| rng.normal()).collect();
        let w: Vec<f64> = (0..3 * hid * c).map(|_| rng.normal()).collect();
        let u: Vec<f64> = (0..3 * hid * hid).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..3 * hid).map(|_| rng.normal()).collect();
        let sh = GruShape::new(&[1, c, 1, wd], &[3 * hid, c], &[3 * hid, hid], &[3 * hid]).unwrap();
        let (out, _) = gru2d_forward(&sh, Direction::SupInf, &x, &w, &u, &b);
        for col in 0..wd {
            let xi: Vec<f64> = (0..c).map(|ci| x[ci * wd + col]).collect();
            let want = cell(&xi, &[0.0; 2], &w, &u, &b, hid);
            for j in 0..hid {
                assert!((out[j * wd + col] - want[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn scan_matches_iterated_cell() {
        let mut rng = SeededRng::new(10);
        let (c, h, wd, hid) = (2, 4, 3, 3);
        let x: Vec<f64> = (0..c * h * wd).map(|_| rng.normal()).collect();
        let w: Vec<f64> = (0..3 * hid * c).map(|_| rng.normal()).collect();
        let u: Vec<f64> = (0..3 * hid * hid).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..3 * hid).map(|_| rng.normal()).collect();
        let sh = GruShape::new(&[1, c, h, wd], &[3 * hid, c], &[3 * hid, hid], &[3 * hid]).unwrap();
        let (out, _) = gru2d_forward(&sh, Direction::PostAnt, &x, &w, &u, &b);
        // P->A: scan columns from the last to the first, one state per row
        for y in 0..h {
            let mut state = vec![0.0; hid];
            for xcol in (0..wd).rev() {
                let xi: Vec<f64> = (0..c).map(|ci| x[(ci * h + y) * wd + xcol]).collect();
                state = cell(&xi, &state, &w, &u, &b, hid);
                for j in 0..hid {
                    assert!((out[(j * h + y) * wd + xcol] - state[j]).abs() < 1e-13);
                }
            }
        }
    }
}
