//! The four segmentation networks: a U-Net trunk followed by a four-direction
//! spatial GRU, fed by the standard maps, the raw PWI window, both stacked,
//! or both in separate trunks fused by a small merge network.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{
    add_gru_params, four_dir_gru, gru_params, Direction, Graph, GruCombine, GruParams, Init,
    NodeId, ParamStore,
};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub unet_levels: usize,
    pub base_filters: usize,
    pub kernel: usize,
    pub gru_hidden: usize,
    pub pwi_channels: usize,
    pub map_channels: usize,
    pub expansion_factor: usize,
    pub merge_filters: usize,
    pub gru_combine: GruCombine,
    /// Adds a third four-direction GRU after the merge convolutions.
    pub post_fusion_gru: bool,
    /// Multiplies every input before the first layer.
    pub input_scale: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            unet_levels: 3,
            base_filters: 8,
            kernel: 3,
            gru_hidden: 16,
            pwi_channels: 26,
            map_channels: 6,
            expansion_factor: 4,
            merge_filters: 16,
            gru_combine: GruCombine::Sum,
            post_fusion_gru: false,
            input_scale: 1.0 / 255.0,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("unet_levels", self.unet_levels),
            ("base_filters", self.base_filters),
            ("gru_hidden", self.gru_hidden),
            ("pwi_channels", self.pwi_channels),
            ("map_channels", self.map_channels),
            ("expansion_factor", self.expansion_factor),
            ("merge_filters", self.merge_filters),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel must be odd, got {}",
                self.kernel
            )));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(Error::Config("input_scale must be positive".into()));
        }
        Ok(())
    }

    /// Spatial extents must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.unet_levels
    }

    fn gru_out(&self) -> usize {
        match self.gru_combine {
            GruCombine::Sum => self.gru_hidden,
            GruCombine::Concat => 4 * self.gru_hidden,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Standard,
    DataDriven,
    Single,
    Branched,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Standard,
        ModelKind::DataDriven,
        ModelKind::Single,
        ModelKind::Branched,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Standard => "standard",
            ModelKind::DataDriven => "data-driven",
            ModelKind::Single => "single",
            ModelKind::Branched => "branched",
        }
    }

    pub fn uses_pwi(self) -> bool {
        self != ModelKind::Standard
    }

    pub fn uses_maps(self) -> bool {
        self != ModelKind::DataDriven
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "standard" => Ok(ModelKind::Standard),
            "data-driven" => Ok(ModelKind::DataDriven),
            "single" => Ok(ModelKind::Single),
            "branched" => Ok(ModelKind::Branched),
            _ => Err(Error::Parameter(format!(
                "unknown architecture {s:?}; expected standard, data-driven, single or branched"
            ))),
        }
    }
}

/// Which trunk's post-GRU features to return.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trunk {
    /// The trunk fed by the PWI window (or the joint trunk of `single`).
    Pwi,
    /// The trunk fed by the standard maps.
    Maps,
}

/// Network inputs; `[B, C, H, W]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs<T: Scalar = f32> {
    pub pwi: Option<Tensor<T>>,
    pub maps: Option<Tensor<T>>,
}

impl<T: Scalar> Inputs<T> {
    /// Splits a `[B, C, H, W]` stack whose first `n_pwi` channels are PWI and
    /// the following `n_maps` are maps; further channels are ignored.
    pub fn split_channels(stack: &Tensor<T>, n_pwi: usize, n_maps: usize) -> Result<Self> {
        let d = stack.dims();
        if d.len() != 4 || d[1] < n_pwi + n_maps {
            return Err(Error::Shape(format!(
                "input stack {d:?} has fewer than {} channels",
                n_pwi + n_maps
            )));
        }
        let hw = d[2] * d[3];
        let take = |from: usize, n: usize| {
            let mut data = Vec::with_capacity(d[0] * n * hw);
            for b in 0..d[0] {
                let start = (b * d[1] + from) * hw;
                data.extend_from_slice(&stack.data()[start..start + n * hw]);
            }
            Tensor::from_vec(&[d[0], n, d[2], d[3]], data).expect("dims")
        };
        Ok(Self {
            pwi: Some(take(0, n_pwi)),
            maps: Some(take(n_pwi, n_maps)),
        })
    }

    pub fn cast<U: Scalar>(&self) -> Inputs<U> {
        Inputs {
            pwi: self.pwi.as_ref().map(Tensor::cast),
            maps: self.maps.as_ref().map(Tensor::cast),
        }
    }
}

/// Node handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// `[B, 1, H, W]` probabilities.
    pub prob: NodeId,
    pub pwi_features: Option<NodeId>,
    pub map_features: Option<NodeId>,
}

/// Post-GRU feature maps with their names.
#[derive(Debug, Clone, PartialEq)]
pub struct Features<T: Scalar = f32> {
    pub names: Vec<String>,
    /// `[B, K, H, W]`.
    pub maps: Tensor<T>,
}

/// An architecture together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar = f32> {
    pub kind: ModelKind,
    pub config: ArchConfig,
    pub params: ParamStore<T>,
}

fn declare_conv<T: Scalar>(
    s: &mut ParamStore<T>,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    rng: &SeededRng,
) -> Result<()> {
    s.add(
        &format!("{name}.w"),
        &[cout, cin, k, k],
        Init::fan_in(cin * k * k),
        rng,
    )?;
    s.add(&format!("{name}.b"), &[cout], Init::Zeros, rng)
}

fn declare_gru<T: Scalar>(
    s: &mut ParamStore<T>,
    prefix: &str,
    cin: usize,
    hid: usize,
    rng: &SeededRng,
) -> Result<()> {
    for d in Direction::ALL {
        add_gru_params(s, &format!("{prefix}.{}", d.tag()), cin, hid, rng)?;
    }
    Ok(())
}

fn declare_unet<T: Scalar>(
    s: &mut ParamStore<T>,
    p: &str,
    cin: usize,
    cfg: &ArchConfig,
    rng: &SeededRng,
) -> Result<usize> {
    let k = cfg.kernel;
    let width = |i: usize| cfg.base_filters << i;
    let mut c = cin;
    for i in 0..cfg.unet_levels {
        declare_conv(s, &format!("{p}.enc{i}.conv0"), c, width(i), k, rng)?;
        declare_conv(s, &format!("{p}.enc{i}.conv1"), width(i), width(i), k, rng)?;
        c = width(i);
    }
    let mid = width(cfg.unet_levels - 1);
    declare_conv(s, &format!("{p}.mid.conv0"), c, mid, k, rng)?;
    declare_conv(s, &format!("{p}.mid.conv1"), mid, mid, k, rng)?;
    c = mid;
    for i in (0..cfg.unet_levels).rev() {
        declare_conv(
            s,
            &format!("{p}.dec{i}.conv0"),
            c + width(i),
            width(i),
            k,
            rng,
        )?;
        declare_conv(s, &format!("{p}.dec{i}.conv1"), width(i), width(i), k, rng)?;
        c = width(i);
    }
    Ok(c)
}

/// Declares a trunk (optional expansion, U-Net, GRU) and returns its width.
fn declare_trunk<T: Scalar>(
    s: &mut ParamStore<T>,
    p: &str,
    cin: usize,
    expand: bool,
    cfg: &ArchConfig,
    rng: &SeededRng,
) -> Result<usize> {
    if expand {
        let wide = cin * cfg.expansion_factor;
        declare_conv(s, &format!("{p}.expand"), cin, wide, 1, rng)?;
        declare_conv(s, &format!("{p}.reduce"), wide, cin, 1, rng)?;
    }
    let c = declare_unet(s, &format!("{p}.unet"), cin, cfg, rng)?;
    declare_gru(s, &format!("{p}.gru"), c, cfg.gru_hidden, rng)?;
    Ok(cfg.gru_out())
}

impl<T: Scalar> Model<T> {
    pub fn build(kind: ModelKind, config: ArchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = SeededRng::new(seed).split("init");
        let mut s = ParamStore::new();
        let cfg = &config;
        match kind {
            ModelKind::Standard => {
                let c = declare_trunk(&mut s, "maps", cfg.map_channels, false, cfg, &rng)?;
                declare_conv(&mut s, "head", c, 1, 1, &rng)?;
            }
            ModelKind::DataDriven => {
                let c = declare_trunk(&mut s, "pwi", cfg.pwi_channels, true, cfg, &rng)?;
                declare_conv(&mut s, "head", c, 1, 1, &rng)?;
            }
            ModelKind::Single => {
                let c = declare_trunk(
                    &mut s,
                    "joint",
                    cfg.pwi_channels + cfg.map_channels,
                    false,
                    cfg,
                    &rng,
                )?;
                declare_conv(&mut s, "head", c, 1, 1, &rng)?;
            }
            ModelKind::Branched => {
                let a = declare_trunk(&mut s, "pwi", cfg.pwi_channels, true, cfg, &rng)?;
                let b = declare_trunk(&mut s, "maps", cfg.map_channels, false, cfg, &rng)?;
                let m = cfg.merge_filters;
                declare_conv(&mut s, "merge.conv0", a + b, m, cfg.kernel, &rng)?;
                declare_conv(&mut s, "merge.conv1", m, m, cfg.kernel, &rng)?;
                let c = if cfg.post_fusion_gru {
                    declare_gru(&mut s, "merge.gru", m, cfg.gru_hidden, &rng)?;
                    cfg.gru_out()
                } else {
                    m
                };
                declare_conv(&mut s, "head", c, 1, 1, &rng)?;
            }
        }
        Ok(Self {
            kind,
            config,
            params: s,
        })
    }

    /// Checks that `params` has exactly the layout this kind and config declare.
    pub fn from_params(kind: ModelKind, config: ArchConfig, params: ParamStore<T>) -> Result<Self> {
        let expected = Model::<T>::build(kind, config.clone(), 0)?.params.layout();
        let found = params.layout();
        if expected != found {
            let diff = expected
                .iter()
                .zip(&found)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("expected {} {:?}, found {} {:?}", a.0, a.1, b.0, b.1))
                .unwrap_or_else(|| {
                    format!("expected {} tensors, found {}", expected.len(), found.len())
                });
            return Err(Error::IncompatibleCheckpoint(format!(
                "parameters do not fit a {kind} model: {diff}"
            )));
        }
        Ok(Self {
            kind,
            config,
            params,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            kind: self.kind,
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    fn conv(&self, g: &mut Graph<T>, x: NodeId, name: &str, relu: bool) -> Result<NodeId> {
        let w = g.param(&self.params, &format!("{name}.w"))?;
        let b = g.param(&self.params, &format!("{name}.b"))?;
        let k = g.value(w).dims()[2];
        let y = g.conv2d(x, w, b, 1, k / 2)?;
        Ok(if relu { g.relu(y) } else { y })
    }

    fn unet(&self, g: &mut Graph<T>, x: NodeId, p: &str) -> Result<NodeId> {
        let levels = self.config.unet_levels;
        let mut skips = Vec::with_capacity(levels);
        let mut h = x;
        for i in 0..levels {
            h = self.conv(g, h, &format!("{p}.enc{i}.conv0"), true)?;
            h = self.conv(g, h, &format!("{p}.enc{i}.conv1"), true)?;
            skips.push(h);
            h = g.maxpool2(h)?;
        }
        h = self.conv(g, h, &format!("{p}.mid.conv0"), true)?;
        h = self.conv(g, h, &format!("{p}.mid.conv1"), true)?;
        for i in (0..levels).rev() {
            let up = g.upsample2(h)?;
            h = g.concat(&[up, skips[i]])?;
            h = self.conv(g, h, &format!("{p}.dec{i}.conv0"), true)?;
            h = self.conv(g, h, &format!("{p}.dec{i}.conv1"), true)?;
        }
        Ok(h)
    }

    fn gru(&self, g: &mut Graph<T>, x: NodeId, prefix: &str) -> Result<NodeId> {
        let ps: Vec<GruParams> = Direction::ALL
            .iter()
            .map(|d| gru_params(g, &self.params, &format!("{prefix}.{}", d.tag())))
            .collect::<Result<_>>()?;
        let ps: [GruParams; 4] = ps.try_into().expect("four directions");
        four_dir_gru(g, x, &ps, self.config.gru_combine)
    }

    fn trunk(&self, g: &mut Graph<T>, x: NodeId, p: &str, expand: bool) -> Result<NodeId> {
        let mut h = x;
        if expand {
            h = self.conv(g, h, &format!("{p}.expand"), true)?;
            h = self.conv(g, h, &format!("{p}.reduce"), true)?;
        }
        let u = self.unet(g, h, &format!("{p}.unet"))?;
        self.gru(g, u, &format!("{p}.gru"))
    }

    fn check_input(
        &self,
        g: &Graph<T>,
        id: Option<NodeId>,
        channels: usize,
        what: &str,
    ) -> Result<NodeId> {
        let id =
            id.ok_or_else(|| Error::Shape(format!("{} model needs {what} input", self.kind)))?;
        let d = g.value(id).dims();
        if d.len() != 4 || d[1] != channels {
            return Err(Error::Shape(format!(
                "{} model expects {what} input [B, {channels}, H, W], got {d:?}",
                self.kind
            )));
        }
        let m = self.config.spatial_multiple();
        if !d[2].is_multiple_of(m) || !d[3].is_multiple_of(m) {
            return Err(Error::Shape(format!(
                "spatial extent {}x{} is not divisible by {m} ({} U-Net levels)",
                d[2], d[3], self.config.unet_levels
            )));
        }
        Ok(id)
    }

    /// Scales the inputs and builds the forward pass into `g`.
    pub fn forward_graph(&self, g: &mut Graph<T>, inputs: &Inputs<T>) -> Result<Forward> {
        let s = T::from_f64(self.config.input_scale);
        let pwi = match (self.kind.uses_pwi(), &inputs.pwi) {
            (true, Some(t)) => Some(g.input(t.map(|v| v * s))),
            _ => None,
        };
        let maps = match (self.kind.uses_maps(), &inputs.maps) {
            (true, Some(t)) => Some(g.input(t.map(|v| v * s))),
            _ => None,
        };
        self.forward_nodes(g, pwi, maps)
    }

    /// Builds the network on already-scaled input nodes.
    pub fn forward_nodes(
        &self,
        g: &mut Graph<T>,
        pwi: Option<NodeId>,
        maps: Option<NodeId>,
    ) -> Result<Forward> {
        let cfg = &self.config;
        let pwi = if self.kind.uses_pwi() {
            Some(self.check_input(g, pwi, cfg.pwi_channels, "PWI")?)
        } else {
            None
        };
        let maps = if self.kind.uses_maps() {
            Some(self.check_input(g, maps, cfg.map_channels, "maps")?)
        } else {
            None
        };
        if let (Some(a), Some(b)) = (pwi, maps) {
            let (da, db) = (g.value(a).dims(), g.value(b).dims());
            if da[0] != db[0] || da[2..] != db[2..] {
                return Err(Error::Shape(
                    "PWI and map inputs differ in batch or extent".into(),
                ));
            }
        }
        let (pf, mf, top) = match self.kind {
            ModelKind::Standard => {
                let f = self.trunk(g, maps.unwrap(), "maps", false)?;
                (None, Some(f), f)
            }
            ModelKind::DataDriven => {
                let f = self.trunk(g, pwi.unwrap(), "pwi", true)?;
                (Some(f), None, f)
            }
            ModelKind::Single => {
                let x = g.concat(&[pwi.unwrap(), maps.unwrap()])?;
                let f = self.trunk(g, x, "joint", false)?;
                (Some(f), None, f)
            }
            ModelKind::Branched => {
                let a = self.trunk(g, pwi.unwrap(), "pwi", true)?;
                let b = self.trunk(g, maps.unwrap(), "maps", false)?;
                let mut h = g.concat(&[a, b])?;
                h = self.conv(g, h, "merge.conv0", true)?;
                h = self.conv(g, h, "merge.conv1", true)?;
                if cfg.post_fusion_gru {
                    h = self.gru(g, h, "merge.gru")?;
                }
                (Some(a), Some(b), h)
            }
        };
        let logits = self.conv(g, top, "head", false)?;
        Ok(Forward {
            prob: g.sigmoid(logits),
            pwi_features: pf,
            map_features: mf,
        })
    }

    /// Probabilities `[B, 1, H, W]`.
    pub fn forward(&self, inputs: &Inputs<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let f = self.forward_graph(&mut g, inputs)?;
        Ok(g.value(f.prob).clone())
    }

    /// Channels of a trunk's feature output.
    pub fn features_width(&self) -> usize {
        self.config.gru_out()
    }

    /// Whether [`Forward`] carries features for `trunk`.
    pub fn has_trunk(&self, trunk: Trunk) -> bool {
        match trunk {
            Trunk::Pwi => self.kind.uses_pwi(),
            Trunk::Maps => matches!(self.kind, ModelKind::Standard | ModelKind::Branched),
        }
    }

    /// Post-GRU features of one trunk, named `feature_0 ..`.
    pub fn extract_features(&self, inputs: &Inputs<T>, trunk: Trunk) -> Result<Features<T>> {
        let mut g = Graph::new();
        let f = self.forward_graph(&mut g, inputs)?;
        let id = match trunk {
            Trunk::Pwi => f.pwi_features,
            Trunk::Maps => f.map_features,
        }
        .ok_or_else(|| Error::ModelKind(format!("{} model has no {trunk:?} trunk", self.kind)))?;
        let maps = g.value(id).clone();
        let names = (0..maps.dims()[1])
            .map(|k| format!("feature_{k}"))
            .collect();
        Ok(Features { names, maps })
    }
}

/// Closed-form parameter count of one trunk.
pub fn trunk_param_count(cfg: &ArchConfig, cin: usize, expand: bool) -> usize {
    let conv = |i: usize, o: usize, k: usize| o * i * k * k + o;
    let k = cfg.kernel;
    let w = |i: usize| cfg.base_filters << i;
    let mut n = 0;
    if expand {
        let wide = cin * cfg.expansion_factor;
        n += conv(cin, wide, 1) + conv(wide, cin, 1);
    }
    let mut c = cin;
    for i in 0..cfg.unet_levels {
        n += conv(c, w(i), k) + conv(w(i), w(i), k);
        c = w(i);
    }
    let mid = w(cfg.unet_levels - 1);
    n += conv(c, mid, k) + conv(mid, mid, k);
    c = mid;
    for i in (0..cfg.unet_levels).rev() {
        n += conv(c + w(i), w(i), k) + conv(w(i), w(i), k);
        c = w(i);
    }
    let h = cfg.gru_hidden;
    n + 4 * (3 * h * c + 3 * h * h + 3 * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check_with_params, GradCheckOptions};

    fn rand_inputs<T: Scalar>(b: usize, hw: usize, cfg: &ArchConfig, seed: u64) -> Inputs<T> {
        let mut rng = SeededRng::new(seed);
        let mut t = |c: usize| {
            let n = b * c * hw * hw;
            Tensor::from_vec(
                &[b, c, hw, hw],
                (0..n)
                    .map(|_| T::from_f64(rng.uniform_range(0.0, 255.0)))
                    .collect(),
            )
            .unwrap()
        };
        Inputs {
            pwi: Some(t(cfg.pwi_channels)),
            maps: Some(t(cfg.map_channels)),
        }
    }

    #[test]
    fn shapes_and_ranges() {
        let cfg = ArchConfig::default();
        let x = rand_inputs::<f32>(1, 32, &cfg, 1);
        for kind in ModelKind::ALL {
            let m = Model::<f32>::build(kind, cfg.clone(), 7).unwrap();
            let p = m.forward(&x).unwrap();
            assert_eq!(p.dims(), &[1, 1, 32, 32], "{kind}");
            assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(p, m.forward(&x).unwrap());
        }
    }

    #[test]
    fn bottleneck_dims() {
        let cfg = ArchConfig::default();
        let m = Model::<f32>::build(ModelKind::Standard, cfg.clone(), 0).unwrap();
        let mut g = Graph::new();
        let mut h = g.input(rand_inputs::<f32>(1, 32, &cfg, 1).maps.unwrap());
        for i in 0..3 {
            h = m
                .conv(&mut g, h, &format!("maps.unet.enc{i}.conv0"), true)
                .unwrap();
            h = m
                .conv(&mut g, h, &format!("maps.unet.enc{i}.conv1"), true)
                .unwrap();
            h = g.maxpool2(h).unwrap();
        }
        h = m.conv(&mut g, h, "maps.unet.mid.conv0", true).unwrap();
        h = m.conv(&mut g, h, "maps.unet.mid.conv1", true).unwrap();
        assert_eq!(g.value(h).dims(), &[1, 32, 4, 4]);

        let one = ArchConfig {
            unet_levels: 1,
            ..cfg
        };
        let m = Model::<f32>::build(ModelKind::Standard, one.clone(), 0).unwrap();
        let names: Vec<&str> = m.params.names().filter(|n| n.ends_with(".w")).collect();
        assert_eq!(names.iter().filter(|n| n.contains("unet")).count(), 6);
        assert_eq!(
            m.forward(&rand_inputs(1, 6, &one, 0)).unwrap().dims(),
            &[1, 1, 6, 6]
        );
    }

    #[test]
    fn parameter_counts_match_closed_form() {
        let cfg = ArchConfig::default();
        let head = |c: usize| c + 1;
        let std = trunk_param_count(&cfg, 6, false);
        let dd = trunk_param_count(&cfg, 26, true);
        let merge = (16 * 32 * 9 + 16) + (16 * 16 * 9 + 16) + head(16);
        let count = |k| Model::<f32>::build(k, cfg.clone(), 0).unwrap().num_params();
        assert_eq!(count(ModelKind::Standard), std + head(16));
        assert_eq!(count(ModelKind::DataDriven), dd + head(16));
        assert_eq!(
            count(ModelKind::Single),
            trunk_param_count(&cfg, 32, false) + head(16)
        );
        assert_eq!(count(ModelKind::Branched), std + dd + merge);
        let m = Model::<f32>::build(ModelKind::DataDriven, cfg, 0).unwrap();
        assert_eq!(
            m.params.require("pwi.expand.w").unwrap().dims(),
            &[104, 26, 1, 1]
        );
        assert_eq!(
            m.params.require("pwi.reduce.w").unwrap().dims(),
            &[26, 104, 1, 1]
        );
    }

    #[test]
    fn contracts_enforced() {
        let cfg = ArchConfig::default();
        let m = Model::<f32>::build(ModelKind::Branched, cfg.clone(), 0).unwrap();
        let mut x = rand_inputs::<f32>(1, 32, &cfg, 1);
        x.maps = None;
        assert!(matches!(m.forward(&x), Err(Error::Shape(_))));
        let x = rand_inputs::<f32>(1, 30, &cfg, 1);
        assert!(matches!(m.forward(&x), Err(Error::Shape(_))));
        let bad = Inputs {
            pwi: rand_inputs::<f32>(1, 32, &cfg, 1).maps,
            maps: None,
        };
        let dd = Model::<f32>::build(ModelKind::DataDriven, cfg, 0).unwrap();
        assert!(matches!(dd.forward(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn zeroed_branch_input_still_valid() {
        let cfg = ArchConfig::default();
        let m = Model::<f32>::build(ModelKind::Branched, cfg.clone(), 2).unwrap();
        let mut x = rand_inputs::<f32>(1, 32, &cfg, 1);
        x.pwi = Some(Tensor::zeros(&[1, 26, 32, 32]));
        let p = m.forward(&x).unwrap();
        assert!(p
            .data()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v) && v.is_finite()));
    }

    #[test]
    fn features_and_kind_errors() {
        let cfg = ArchConfig::default();
        let m = Model::<f32>::build(ModelKind::Branched, cfg.clone(), 2).unwrap();
        let x = rand_inputs::<f32>(1, 32, &cfg, 1);
        let f = m.extract_features(&x, Trunk::Pwi).unwrap();
        assert_eq!(f.names.len(), 16);
        assert_eq!(f.names[3], "feature_3");
        assert_eq!(f.maps.dims(), &[1, 16, 32, 32]);
        let s = Model::<f32>::build(ModelKind::Standard, cfg, 2).unwrap();
        assert!(matches!(
            s.extract_features(&x, Trunk::Pwi),
            Err(Error::ModelKind(_))
        ));
    }

    #[test]
    fn single_and_branched_disagree() {
        let cfg = ArchConfig::default();
        let x = rand_inputs::<f32>(1, 32, &cfg, 1);
        let a = Model::<f32>::build(ModelKind::Single, cfg.clone(), 5)
            .unwrap()
            .forward(&x)
            .unwrap();
        let b = Model::<f32>::build(ModelKind::Branched, cfg, 5)
            .unwrap()
            .forward(&x)
            .unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn zero_expansion_blocks_pwi_gradient() {
        let cfg = ArchConfig {
            unet_levels: 1,
            base_filters: 2,
            gru_hidden: 2,
            ..ArchConfig::default()
        };
        let mut m = Model::<f64>::build(ModelKind::DataDriven, cfg.clone(), 1).unwrap();
        m.params
            .get_mut("pwi.expand.w")
            .unwrap()
            .data_mut()
            .fill(0.0);
        let x = rand_inputs::<f64>(1, 4, &cfg, 3);
        let mut g = Graph::new();
        let pwi = g.leaf(x.pwi.clone().unwrap().map(|v| v * cfg.input_scale));
        let f = m.forward_nodes(&mut g, Some(pwi), None).unwrap();
        let o = g
            .weighted_sum(f.prob, Tensor::full(&[1, 1, 4, 4], 1.0))
            .unwrap();
        let grads = g.backward(o).unwrap();
        assert!(grads.get(pwi).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(g.value(f.prob), &m.forward(&x).unwrap());
    }

    #[test]
    fn tiny_branched_model_gradients() {
        let cfg = ArchConfig {
            unet_levels: 1,
            base_filters: 2,
            gru_hidden: 2,
            merge_filters: 2,
            ..ArchConfig::default()
        };
        let m = Model::<f64>::build(ModelKind::Branched, cfg.clone(), 4).unwrap();
        let x = rand_inputs::<f64>(1, 2, &cfg, 5);
        let inputs = vec![x.pwi.unwrap(), x.maps.unwrap()];
        let kind = m.kind;
        let r = grad_check_with_params(
            &m.params,
            &inputs,
            GradCheckOptions::default(),
            |g, store, ids| {
                let model = Model {
                    kind,
                    config: cfg.clone(),
                    params: store.clone(),
                };
                Ok(model.forward_nodes(g, Some(ids[0]), Some(ids[1]))?.prob)
            },
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
