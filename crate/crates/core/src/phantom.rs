//! Synthetic perfusion cases with known ground truth.
//!
//! Contrast concentration follows a gamma-variate bolus normalised to a unit
//! peak, and the measured signal follows exponential transduction,
//!
//! ```text
//! S(t) = S0 * exp(-kappa * lambda * C(t - delta)) + noise
//! ```
//!
//! inside an ellipsoidal brain (zero outside). Lesions are ellipsoids with
//! their own attenuation `lambda` and arrival delay `delta`. A lesion whose
//! attenuation falls below the core threshold is ischemic core; it is
//! surrounded by a penumbra shell (the core ellipsoid scaled by the growth
//! factor) whose bolus is dispersed: shape `alpha / rho`, scale `beta * rho`.
//! The product `alpha * beta` and the unit peak are preserved, so time to
//! peak, peak drop and the transit-time proxy are unchanged there and the
//! shell is visible only in the raw time series. The follow-up mask is core
//! plus shell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::case::{CaseBundle, PerfusionMaps};
use crate::rng::SeededRng;
use crate::tensor::{Tensor, Volume3D, Volume4D};

/// Unit-peak gamma-variate bolus concentration.
///
/// Zero for `t <= t0`; otherwise `K (t - t0)^alpha exp(-(t - t0) / beta)` with
/// `K = (alpha beta)^-alpha e^alpha`, so the maximum is exactly 1 at
/// `t0 + alpha beta`.
pub fn gamma_variate(t: f64, t0: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::Parameter(format!(
            "gamma variate needs alpha, beta > 0 (got {alpha}, {beta})"
        )));
    }
    Ok(gamma_unchecked(t, t0, alpha, beta))
}

fn gamma_unchecked(t: f64, t0: f64, alpha: f64, beta: f64) -> f64 {
    let s = t - t0;
    if s <= 0.0 {
        return 0.0;
    }
    let u = s / (alpha * beta);
    (alpha * (u.ln() + 1.0) - s / beta).exp()
}

/// An ellipsoidal lesion in voxel coordinates `(z, y, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lesion {
    pub center: [f64; 3],
    pub radii: [f64; 3],
    /// Fraction of healthy contrast uptake, in `[0, 1]`.
    pub attenuation: f64,
    /// Bolus arrival delay in seconds.
    pub delay: f64,
}

impl Lesion {
    fn contains_scaled(&self, z: f64, y: f64, x: f64, scale: f64) -> bool {
        let p = [z, y, x];
        let r: f64 = (0..3)
            .map(|i| ((p[i] - self.center[i]) / (self.radii[i] * scale)).powi(2))
            .sum();
        r <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    /// `[T, Z, Y, X]`
    pub dims: [usize; 4],
    /// Seconds between acquisitions.
    pub dt: f64,
    /// Voxel spacing in mm, `(z, y, x)`.
    pub spacing: [f64; 3],
    /// Bolus arrival time in seconds.
    pub t0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub s0: f64,
    pub kappa: f64,
    pub lesions: Vec<Lesion>,
    /// Radius scale of the follow-up region around each core lesion.
    pub penumbra_growth: f64,
    /// Bolus dispersion factor inside the penumbra shell.
    pub penumbra_dispersion: f64,
    /// Attenuation below which a lesion counts as core.
    pub core_threshold: f64,
    /// Brain semi-axes as fractions of `(Z, Y, X)`.
    pub brain_radii: [f64; 3],
    pub adc_healthy: f64,
    pub adc_core: f64,
    /// Upper bound of the transit-time proxy, seconds.
    pub mtt_cap: f64,
    /// Additive Gaussian noise standard deviation, signal units.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [40, 8, 64, 64],
            dt: 1.0,
            spacing: [5.0, 3.5, 3.5],
            t0: 8.0,
            alpha: 2.0,
            beta: 2.0,
            s0: 100.0,
            kappa: 1.0,
            lesions: vec![Lesion {
                center: [3.5, 36.0, 26.0],
                radii: [2.0, 6.0, 6.0],
                attenuation: 0.0,
                delay: 2.0,
            }],
            penumbra_growth: 1.5,
            penumbra_dispersion: 1.75,
            core_threshold: 0.3,
            brain_radii: [0.65, 0.42, 0.40],
            adc_healthy: 800.0,
            adc_core: 400.0,
            mtt_cap: 24.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        let [t, z, y, x] = self.dims;
        if t < 2 || z == 0 || y == 0 || x == 0 {
            return bad(format!("invalid phantom dims {:?}", self.dims));
        }
        if !(self.dt > 0.0) || self.spacing.iter().any(|&s| !(s > 0.0)) {
            return bad("dt and spacing must be positive".into());
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return bad("alpha and beta must be positive".into());
        }
        if !(self.s0 > 0.0 && self.kappa > 0.0) {
            return bad("S0 and kappa must be positive".into());
        }
        if !(self.t0 + self.alpha * self.beta < t as f64 * self.dt) {
            return bad(format!(
                "bolus peak at {}s falls outside the {}s acquisition",
                self.t0 + self.alpha * self.beta,
                t as f64 * self.dt
            ));
        }
        if !(self.penumbra_growth >= 1.0) || !(self.penumbra_dispersion >= 1.0) {
            return bad("penumbra growth and dispersion must be >= 1".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise sigma must be >= 0".into());
        }
        if !(self.mtt_cap > 0.0) {
            return bad("mtt cap must be positive".into());
        }
        for (i, l) in self.lesions.iter().enumerate() {
            if !(0.0..=1.0).contains(&l.attenuation) {
                return bad(format!("lesion {i}: attenuation outside [0, 1]"));
            }
            if !(l.delay >= 0.0) {
                return bad(format!("lesion {i}: negative delay"));
            }
            if l.radii.iter().any(|&r| !(r > 0.0)) {
                return bad(format!("lesion {i}: radii must be positive"));
            }
        }
        Ok(())
    }

    /// Time of the healthy-tissue bolus peak, seconds.
    pub fn peak_time(&self) -> f64 {
        self.t0 + self.alpha * self.beta
    }
}

/// A synthetic case with its constructed ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCase {
    pub bundle: CaseBundle,
    pub config: PhantomConfig,
    /// Argmin over time of the noise-free brain-mean signal.
    pub true_peak_index: usize,
    pub brain_mask: Volume3D,
    pub core_mask: Volume3D,
    pub follow_up_mask: Volume3D,
}

#[derive(Clone, Copy, PartialEq)]
struct Tissue {
    attenuation: f64,
    delay: f64,
    alpha: f64,
    beta: f64,
}

enum Voxel {
    Background,
    Brain {
        tissue: Tissue,
        core: bool,
        follow_up: bool,
    },
}

fn classify(cfg: &PhantomConfig, z: usize, y: usize, x: usize) -> Voxel {
    let [_, nz, ny, nx] = cfg.dims;
    let (zf, yf, xf) = (z as f64, y as f64, x as f64);
    let c = [
        (nz as f64 - 1.0) / 2.0,
        (ny as f64 - 1.0) / 2.0,
        (nx as f64 - 1.0) / 2.0,
    ];
    let r = [
        cfg.brain_radii[0] * nz as f64,
        cfg.brain_radii[1] * ny as f64,
        cfg.brain_radii[2] * nx as f64,
    ];
    let inside: f64 = [zf, yf, xf]
        .iter()
        .enumerate()
        .map(|(i, &p)| ((p - c[i]) / r[i]).powi(2))
        .sum();
    if inside > 1.0 {
        return Voxel::Background;
    }
    let healthy = Tissue {
        attenuation: 1.0,
        delay: 0.0,
        alpha: cfg.alpha,
        beta: cfg.beta,
    };
    // the most attenuated containing lesion wins
    let lesion = cfg
        .lesions
        .iter()
        .filter(|l| l.contains_scaled(zf, yf, xf, 1.0))
        .min_by(|a, b| a.attenuation.total_cmp(&b.attenuation));
    let in_shell = cfg.lesions.iter().any(|l| {
        l.attenuation < cfg.core_threshold && l.contains_scaled(zf, yf, xf, cfg.penumbra_growth)
    });
    match lesion {
        Some(l) => {
            let core = l.attenuation < cfg.core_threshold;
            Voxel::Brain {
                tissue: Tissue {
                    attenuation: l.attenuation,
                    delay: l.delay,
                    ..healthy
                },
                core,
                follow_up: core || in_shell,
            }
        }
        None if in_shell => Voxel::Brain {
            tissue: Tissue {
                alpha: cfg.alpha / cfg.penumbra_dispersion,
                beta: cfg.beta * cfg.penumbra_dispersion,
                ..healthy
            },
            core: false,
            follow_up: true,
        },
        None => Voxel::Brain {
            tissue: healthy,
            core: false,
            follow_up: false,
        },
    }
}

fn clean_curve(cfg: &PhantomConfig, tissue: &Tissue, out: &mut [f64]) {
    for (t, s) in out.iter_mut().enumerate() {
        let c = gamma_unchecked(
            t as f64 * cfg.dt,
            cfg.t0 + tissue.delay,
            tissue.alpha,
            tissue.beta,
        );
        *s = cfg.s0 * (-cfg.kappa * tissue.attenuation * c).exp();
    }
}

/// Builds one synthetic case from a validated configuration.
pub fn synth_case(config: &PhantomConfig, case_id: &str) -> Result<PhantomCase> {
    config.validate()?;
    let [nt, nz, ny, nx] = config.dims;
    let nvox = nz * ny * nx;
    let mut pwi = vec![0f32; nt * nvox];
    let mut maps: [Vec<f32>; 6] = std::array::from_fn(|_| vec![0f32; nvox]);
    let mut brain = vec![0f32; nvox];
    let mut core = vec![0f32; nvox];
    let mut follow = vec![0f32; nvox];
    let mut mean_signal = vec![0f64; nt];
    let mut n_brain = 0usize;
    let mut noise_rng = SeededRng::new(config.seed).split("noise");
    let mut curve = vec![0f64; nt];

    let sentinel = nt as f64 * config.dt;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let v = (z * ny + y) * nx + x;
                let Voxel::Brain {
                    tissue,
                    core: is_core,
                    follow_up,
                } = classify(config, z, y, x)
                else {
                    continue;
                };
                n_brain += 1;
                brain[v] = 1.0;
                core[v] = is_core as u8 as f32;
                follow[v] = follow_up as u8 as f32;
                clean_curve(config, &tissue, &mut curve);
                let (mut tmin, mut smin, mut smax) = (0usize, f64::INFINITY, f64::NEG_INFINITY);
                for (t, &s) in curve.iter().enumerate() {
                    mean_signal[t] += s;
                    if s < smin {
                        smin = s;
                        tmin = t;
                    }
                    smax = smax.max(s);
                    let noisy = if config.noise_sigma > 0.0 {
                        s + config.noise_sigma * noise_rng.normal()
                    } else {
                        s
                    };
                    pwi[t * nvox + v] = noisy as f32;
                }
                let ttp = if smax > smin {
                    tmin as f64 * config.dt
                } else {
                    sentinel
                };
                let tmax = (ttp - config.t0).max(0.0);
                let rcbv = config.s0 - smin;
                let ab = tissue.alpha * tissue.beta;
                let mtt = if tissue.attenuation > 0.0 {
                    (ab / tissue.attenuation).min(config.mtt_cap)
                } else {
                    config.mtt_cap
                };
                let rcbf = rcbv / mtt;
                let adc = if is_core {
                    config.adc_core
                } else {
                    config.adc_healthy
                };
                for (m, val) in maps.iter_mut().zip([rcbf, rcbv, mtt, ttp, tmax, adc]) {
                    m[v] = val as f32;
                }
            }
        }
    }
    if n_brain == 0 {
        return Err(Error::Parameter(
            "brain ellipsoid contains no voxels".into(),
        ));
    }
    // earliest index among equal minima
    let true_peak_index = mean_signal
        .iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) },
        )
        .0;

    let sp = config.spacing;
    let vol = |data: Vec<f32>| Volume3D::new(Tensor::from_vec(&[nz, ny, nx], data)?, sp);
    let pwi = Volume4D::new(Tensor::from_vec(&[nt, nz, ny, nx], pwi)?, sp, config.dt)?;
    let [m0, m1, m2, m3, m4, m5] = maps;
    let maps = PerfusionMaps::new([vol(m0)?, vol(m1)?, vol(m2)?, vol(m3)?, vol(m4)?, vol(m5)?])?;
    let follow_up_mask = vol(follow)?;
    let bundle = CaseBundle::new(case_id, pwi, maps, Some(follow_up_mask.clone()))?;
    Ok(PhantomCase {
        bundle,
        config: config.clone(),
        true_peak_index,
        brain_mask: vol(brain)?,
        core_mask: vol(core)?,
        follow_up_mask,
    })
}

/// Parameter ranges for randomized corpora. Every drawn quantity is uniform
/// over its `[lo, hi]` range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub dims: [usize; 4],
    pub dt: f64,
    pub spacing: [f64; 3],
    pub t0: [f64; 2],
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub s0: [f64; 2],
    pub kappa: [f64; 2],
    /// Noise standard deviation as a fraction of S0.
    pub noise_frac: [f64; 2],
    pub core_attenuation: [f64; 2],
    pub core_delay: [f64; 2],
    /// In-plane lesion semi-axis, voxels.
    pub lesion_radius_xy: [f64; 2],
    /// Through-plane lesion semi-axis, voxels.
    pub lesion_radius_z: [f64; 2],
    pub penumbra_growth: [f64; 2],
    pub penumbra_dispersion: [f64; 2],
    /// Probability of an extra hypoperfused, non-infarcting lesion.
    pub oligemia_probability: f64,
    pub oligemia_attenuation: [f64; 2],
    pub oligemia_delay: [f64; 2],
    /// Cap on follow-up volume as a fraction of brain volume.
    pub max_lesion_fraction: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            dims: [40, 8, 64, 64],
            dt: 1.0,
            spacing: [5.0, 3.5, 3.5],
            t0: [6.0, 10.0],
            alpha: [2.5, 3.5],
            beta: [1.0, 1.5],
            s0: [80.0, 120.0],
            kappa: [0.7, 1.2],
            noise_frac: [0.0, 0.02],
            core_attenuation: [0.0, 0.15],
            core_delay: [1.0, 4.0],
            lesion_radius_xy: [4.0, 8.0],
            lesion_radius_z: [1.5, 3.0],
            penumbra_growth: [1.3, 1.9],
            penumbra_dispersion: [1.6, 2.4],
            oligemia_probability: 0.5,
            oligemia_attenuation: [0.45, 0.75],
            oligemia_delay: [1.0, 3.0],
            max_lesion_fraction: 0.3,
        }
    }
}

fn draw(rng: &mut SeededRng, range: [f64; 2]) -> f64 {
    rng.uniform_range(range[0], range[1])
}

fn draw_lesion(
    rng: &mut SeededRng,
    cc: &CorpusConfig,
    base: &PhantomConfig,
    attenuation: [f64; 2],
    delay: [f64; 2],
) -> Lesion {
    let [_, nz, ny, nx] = cc.dims;
    // centre drawn inside the inner half of the brain in-plane
    let ang = rng.uniform() * std::f64::consts::TAU;
    let rad = 0.55 * rng.uniform().sqrt();
    let cy = (ny as f64 - 1.0) / 2.0 + rad * ang.sin() * base.brain_radii[1] * ny as f64;
    let cx = (nx as f64 - 1.0) / 2.0 + rad * ang.cos() * base.brain_radii[2] * nx as f64;
    let cz = rng.uniform_range(0.25 * (nz as f64 - 1.0), 0.75 * (nz as f64 - 1.0));
    Lesion {
        center: [cz, cy, cx],
        radii: [
            draw(rng, cc.lesion_radius_z),
            draw(rng, cc.lesion_radius_xy),
            draw(rng, cc.lesion_radius_xy),
        ],
        attenuation: draw(rng, attenuation),
        delay: draw(rng, delay),
    }
}

/// Draws the phantom configuration of one corpus case.
pub fn draw_case_config(cc: &CorpusConfig, rng: &SeededRng) -> PhantomConfig {
    let mut rng = rng.clone();
    let s0 = draw(&mut rng, cc.s0);
    let mut cfg = PhantomConfig {
        dims: cc.dims,
        dt: cc.dt,
        spacing: cc.spacing,
        t0: draw(&mut rng, cc.t0),
        alpha: draw(&mut rng, cc.alpha),
        beta: draw(&mut rng, cc.beta),
        s0,
        kappa: draw(&mut rng, cc.kappa),
        lesions: Vec::new(),
        penumbra_growth: draw(&mut rng, cc.penumbra_growth),
        penumbra_dispersion: draw(&mut rng, cc.penumbra_dispersion),
        noise_sigma: draw(&mut rng, cc.noise_frac) * s0,
        seed: rand::RngCore::next_u64(&mut rng),
        ..PhantomConfig::default()
    };
    let core = draw_lesion(&mut rng, cc, &cfg, cc.core_attenuation, cc.core_delay);
    cfg.lesions.push(core);
    if rng.uniform() < cc.oligemia_probability {
        let olig = draw_lesion(
            &mut rng,
            cc,
            &cfg,
            cc.oligemia_attenuation,
            cc.oligemia_delay,
        );
        cfg.lesions.push(olig);
    }
    cfg
}

fn volume_fraction(mask: &Volume3D, brain: &Volume3D) -> f64 {
    let m: f64 = mask.data().iter().map(|&v| v as f64).sum();
    let b: f64 = brain.data().iter().map(|&v| v as f64).sum();
    m / b
}

/// Case id of the `i`-th corpus member.
pub fn case_id(i: usize) -> String {
    format!("case_{i:03}")
}

/// Synthesizes one corpus member; deterministic in `(base_seed, i)`.
pub fn synth_corpus_case(cc: &CorpusConfig, base_seed: u64, i: usize) -> Result<PhantomCase> {
    let id = case_id(i);
    let stream = SeededRng::new(base_seed).split(&id);
    for attempt in 0..64u64 {
        let mut cfg = draw_case_config(cc, &stream.split_index(attempt));
        // shrink until the follow-up volume respects the cap
        loop {
            let case = synth_case(&cfg, &id)?;
            if volume_fraction(&case.follow_up_mask, &case.brain_mask) < cc.max_lesion_fraction {
                if case.follow_up_mask.data().iter().any(|&v| v > 0.0) {
                    return Ok(case);
                }
                break;
            }
            for l in &mut cfg.lesions {
                for r in &mut l.radii {
                    *r *= 0.85;
                }
            }
        }
    }
    Err(Error::Sampling(format!(
        "{id}: no admissible lesion geometry"
    )))
}

/// `n` randomized cases; each case draws from its own split stream, so the
/// corpus is identical whatever order or thread count is used.
pub fn synth_corpus(n: usize, base_seed: u64) -> Result<Vec<PhantomCase>> {
    synth_corpus_with(&CorpusConfig::default(), n, base_seed)
}

pub fn synth_corpus_with(cc: &CorpusConfig, n: usize, base_seed: u64) -> Result<Vec<PhantomCase>> {
    use rayon::prelude::*;
    if n == 0 {
        return Err(Error::Parameter("corpus size must be at least 1".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|i| synth_corpus_case(cc, base_seed, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::case::MapKind;

    #[test]
    fn gamma_variate_values() {
        assert_eq!(gamma_variate(9.0, 10.0, 2.0, 1.5).unwrap(), 0.0);
        assert_eq!(gamma_variate(10.0, 10.0, 2.0, 1.5).unwrap(), 0.0);
        assert!((gamma_variate(13.0, 10.0, 2.0, 1.5).unwrap() - 1.0).abs() < 1e-15);
        // (1.5/3)^2 e^1
        let expect = 0.25 * std::f64::consts::E;
        assert!((gamma_variate(11.5, 10.0, 2.0, 1.5).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.6796).abs() < 1e-4);
        assert!(gamma_variate(1.0, 0.0, 0.0, 1.0).is_err());
        assert!(gamma_variate(1.0, 0.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn gamma_variate_peak_is_maximum() {
        let (t0, a, b) = (3.0, 2.7, 1.3);
        let peak = t0 + a * b;
        for k in 1..200 {
            let t = t0 + k as f64 * 0.05;
            assert!(gamma_variate(t, t0, a, b).unwrap() <= 1.0 + 1e-12);
        }
        assert!((gamma_variate(peak, t0, a, b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn default_peak_index() {
        let case = synth_case(&PhantomConfig::default(), "d").unwrap();
        assert_eq!(case.true_peak_index, 12);
    }

    #[test]
    fn lesion_free_case() {
        let cfg = PhantomConfig {
            lesions: vec![],
            ..PhantomConfig::default()
        };
        let case = synth_case(&cfg, "h").unwrap();
        assert!(case.follow_up_mask.data().iter().all(|&v| v == 0.0));
        let ttp = case.bundle.maps.get(MapKind::Ttp);
        for (t, b) in ttp.data().iter().zip(case.brain_mask.data()) {
            if *b > 0.0 {
                assert_eq!(*t, 12.0);
            }
        }
    }

    #[test]
    fn core_signal_is_flat_with_sentinel_ttp() {
        let cfg = PhantomConfig::default();
        let case = synth_case(&cfg, "c").unwrap();
        let pwi = &case.bundle.pwi;
        let [nt, ..] = pwi.dims();
        let n = pwi.spatial_dims().iter().product::<usize>();
        let ttp = case.bundle.maps.get(MapKind::Ttp);
        let mut seen = 0;
        for v in 0..n {
            if case.core_mask.data()[v] > 0.0 {
                seen += 1;
                let s0 = pwi.data()[v];
                for t in 0..nt {
                    assert_eq!(pwi.data()[t * n + v], s0);
                }
                assert_eq!(s0, 100.0);
                assert_eq!(ttp.data()[v], nt as f32);
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn healthy_curve_unimodal() {
        let cfg = PhantomConfig::default();
        let case = synth_case(&cfg, "u").unwrap();
        let pwi = &case.bundle.pwi;
        let n: usize = pwi.spatial_dims().iter().product();
        let nt = pwi.n_times();
        for v in (0..n).step_by(97) {
            if case.brain_mask.data()[v] == 0.0 || case.core_mask.data()[v] > 0.0 {
                continue;
            }
            let s: Vec<f32> = (0..nt).map(|t| pwi.data()[t * n + v]).collect();
            let minima = (1..nt - 1)
                .filter(|&t| s[t] < s[t - 1] && s[t] <= s[t + 1])
                .count();
            assert_eq!(minima, 1, "voxel {v}: {s:?}");
        }
    }

    #[test]
    fn penumbra_invisible_in_maps() {
        let cfg = PhantomConfig::default();
        let case = synth_case(&cfg, "p").unwrap();
        let maps = &case.bundle.maps;
        let n = case.brain_mask.data().len();
        let healthy = (0..n)
            .find(|&v| case.brain_mask.data()[v] > 0.0 && case.follow_up_mask.data()[v] == 0.0)
            .unwrap();
        let shell = (0..n)
            .find(|&v| case.follow_up_mask.data()[v] > 0.0 && case.core_mask.data()[v] == 0.0)
            .unwrap();
        for kind in MapKind::ALL {
            let m = maps.get(kind).data();
            assert!((m[healthy] - m[shell]).abs() < 1e-3, "{kind:?}");
        }
        let pwi = &case.bundle.pwi;
        let diff: f32 = (0..pwi.n_times())
            .map(|t| (pwi.frame(t)[healthy] - pwi.frame(t)[shell]).abs())
            .sum();
        assert!(diff > 1.0);
    }

    #[test]
    fn validation() {
        let cfg = PhantomConfig {
            t0: 38.0,
            ..Default::default()
        };
        assert!(matches!(synth_case(&cfg, "x"), Err(Error::Parameter(_))));
        let mut cfg = PhantomConfig::default();
        cfg.lesions[0].attenuation = 1.5;
        assert!(synth_case(&cfg, "x").is_err());
        assert!(matches!(synth_corpus(0, 1), Err(Error::Parameter(_))));
    }

    #[test]
    fn corpus_deterministic() {
        let a = synth_corpus(3, 7).unwrap();
        let b = synth_corpus(3, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].bundle.pwi, a[1].bundle.pwi);
    }
}
