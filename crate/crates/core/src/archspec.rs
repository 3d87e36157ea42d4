//! Symbolic layer graphs for the detector family and their parameter/FLOP
//! accounting.
//!
//! A [`ModelSpec`] is a flat, ordered list of [`LayerNode`]s. Nodes carry
//! enough shape information to count parameters exactly and, given an input
//! size, FLOPs. Nodes whose parameters are reused from an earlier node (the
//! shared head convs) are marked `shared` and contribute FLOPs but no
//! parameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output strides of the three head levels.
pub const HEAD_STRIDES: [usize; 3] = [8, 16, 32];
/// Input sides must be multiples of the deepest stride.
pub const MAX_STRIDE: usize = 32;

const BASE_STAGES: [(usize, usize, usize, bool, bool); 4] = [
    // in, out, blocks, identity add, sppf
    (64, 128, 3, true, false),
    (128, 256, 6, true, false),
    (256, 512, 6, true, false),
    (512, 1024, 3, false, true),
];

macro_rules! str_enum {
    ($name:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),+];

            pub fn as_str(&self) -> &'static str {
                match self { $($name::$var => $s),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($name::$var),)+
                    _ => Err(Error::InvalidInput(format!(
                        concat!("unknown ", stringify!($name), " '{}'"), s
                    ))),
                }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Det,
    Ins,
    Rot,
}
str_enum!(Task { Det => "det", Ins => "ins", Rot => "rot" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Tiny,
    S,
    M,
    L,
    X,
}
str_enum!(Preset { Tiny => "tiny", S => "s", M => "m", L => "l", X => "x" });

/// How head convs are shared across the pyramid levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    /// Conv weights and BN shared by all levels.
    Shared,
    /// Every level has its own convs and BN.
    Separate,
    /// Conv weights shared, BN per level.
    #[serde(rename = "sepbn")]
    SharedSepBn,
}
str_enum!(HeadMode { Shared => "shared", Separate => "separate", SharedSepBn => "sepbn" });

/// Sharing of the instance kernel branch when the head shares convs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelBranchSharing {
    Shared,
    Separate,
    /// First conv shared like the cls/reg branches, second conv per level.
    FirstShared,
}
str_enum!(KernelBranchSharing {
    Shared => "shared",
    Separate => "separate",
    FirstShared => "first-shared",
});

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizePreset {
    pub depth_multiplier: f64,
    pub width_multiplier: f64,
    pub neck_expand_ratio: f64,
    pub neck_out_channels: usize,
    pub neck_csp_blocks: usize,
}

impl Preset {
    pub fn size(&self) -> SizePreset {
        let (d, w, out, n) = match self {
            Preset::Tiny => (0.167, 0.375, 96, 1),
            Preset::S => (0.33, 0.5, 128, 1),
            Preset::M => (0.67, 0.75, 192, 2),
            Preset::L => (1.0, 1.0, 256, 3),
            Preset::X => (1.33, 1.25, 320, 4),
        };
        SizePreset {
            depth_multiplier: d,
            width_multiplier: w,
            neck_expand_ratio: 0.5,
            neck_out_channels: out,
            neck_csp_blocks: n,
        }
    }

    /// Mosaic resize range used with this preset.
    pub fn mosaic_scale_range(&self) -> (f64, f64) {
        match self {
            Preset::Tiny | Preset::S => (0.5, 2.0),
            _ => (0.1, 2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv,
    DwConv,
    Bn,
    Activation,
    ChannelAttention,
    Concat,
    Upsample,
    Add,
    MaxPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Backbone,
    Neck,
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerNode {
    pub name: String,
    /// Reporting group, e.g. `backbone.stage2` or `head.cls`.
    pub group: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub groups: usize,
    pub bias: bool,
    /// Stride of the output map relative to the input image.
    pub out_stride: usize,
    /// Parameters are those of an earlier node.
    pub shared: bool,
}

impl LayerNode {
    pub fn part(&self) -> Part {
        match self.group.split('.').next() {
            Some("backbone") => Part::Backbone,
            Some("neck") => Part::Neck,
            _ => Part::Head,
        }
    }

    fn conv_weights(&self) -> u64 {
        (self.kernel * self.kernel * self.in_channels * self.out_channels / self.groups) as u64
    }

    /// Parameters stored by this node before sharing is applied, split into
    /// (weights subject to decay, biases and norm parameters).
    pub fn param_split(&self) -> (u64, u64) {
        let c = self.out_channels as u64;
        match self.kind {
            LayerKind::Conv | LayerKind::DwConv => {
                (self.conv_weights(), if self.bias { c } else { 0 })
            }
            LayerKind::Bn => (0, 2 * c),
            LayerKind::ChannelAttention => (c * c, c),
            _ => (0, 0),
        }
    }

    /// Parameters this node adds to the model.
    pub fn params(&self) -> u64 {
        if self.shared {
            return 0;
        }
        let (w, b) = self.param_split();
        w + b
    }

    /// Operation count for an input of `h × w` pixels. Convs count
    /// multiply-accumulates, BN and activations one op per output element,
    /// channel attention its 1×1 conv plus one op per element for pooling and
    /// gating. Data movement (concat, upsample, add, pooling) is free.
    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let oh = (h / self.out_stride) as u64;
        let ow = (w / self.out_stride) as u64;
        let c = self.out_channels as u64;
        match self.kind {
            LayerKind::Conv | LayerKind::DwConv => self.conv_weights() * oh * ow,
            LayerKind::Bn | LayerKind::Activation => c * oh * ow,
            LayerKind::ChannelAttention => c * c + 2 * c * oh * ow,
            _ => 0,
        }
    }
}

/// Knobs for [`build_model_spec_with`]; [`ModelConfig::new`] gives the
/// standard configuration of a preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub task: Task,
    pub preset: Preset,
    pub head_mode: HeadMode,
    pub size: SizePreset,
    pub num_classes: usize,
    /// Depth-wise kernel in the backbone/neck blocks.
    pub block_kernel: usize,
    pub channel_attention: bool,
    /// Base block counts per stage before depth scaling.
    pub stage_blocks: [usize; 4],
    pub kernel_branch: KernelBranchSharing,
    pub head_stacked_convs: usize,
    pub num_prototypes: usize,
    pub mask_convs: usize,
}

impl ModelConfig {
    pub fn new(task: Task, preset: Preset, head_mode: HeadMode) -> Self {
        Self {
            task,
            preset,
            head_mode,
            size: preset.size(),
            num_classes: 80,
            block_kernel: 5,
            channel_attention: true,
            stage_blocks: [3, 6, 6, 3],
            kernel_branch: KernelBranchSharing::FirstShared,
            head_stacked_convs: 2,
            num_prototypes: 8,
            mask_convs: 4,
        }
    }

    pub fn scaled_blocks(&self) -> [usize; 4] {
        self.stage_blocks
            .map(|n| ((n as f64 * self.size.depth_multiplier).round() as usize).max(1))
    }

    fn width(&self, c: usize) -> usize {
        (c as f64 * self.size.width_multiplier) as usize
    }

    fn validate(&self) -> Result<()> {
        let s = &self.size;
        if !(s.depth_multiplier > 0.0 && s.width_multiplier > 0.0 && s.neck_expand_ratio > 0.0) {
            return Err(Error::InvalidInput("size multipliers must be > 0".into()));
        }
        if self.width(BASE_STAGES[0].0) < 2 || s.neck_out_channels == 0 {
            return Err(Error::InvalidInput("channel widths must be positive".into()));
        }
        if self.block_kernel.is_multiple_of(2) || self.num_classes == 0 || self.head_stacked_convs == 0 {
            return Err(Error::InvalidInput(
                "block kernel must be odd; classes and head convs >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub config: ModelConfig,
    pub nodes: Vec<LayerNode>,
    /// Scaled CSP block count of every backbone stage.
    pub stage_blocks: Vec<usize>,
}

/// Lengths of the three dynamic conv parameter groups (weights + bias).
pub fn dynamic_kernel_dims(mask_ch: usize, coord_ch: usize, hidden: usize) -> (usize, usize, usize) {
    (
        (mask_ch + coord_ch) * hidden + hidden,
        hidden * hidden + hidden,
        hidden + 1,
    )
}

/// Mask feature channels, coordinate channels and hidden width of the
/// dynamic mask convs.
pub const DEFAULT_KERNEL_CHANNELS: (usize, usize, usize) = (8, 2, 8);

pub fn kernel_dim() -> usize {
    let (m, c, h) = DEFAULT_KERNEL_CHANNELS;
    let (a, b, d) = dynamic_kernel_dims(m, c, h);
    a + b + d
}

struct Builder {
    nodes: Vec<LayerNode>,
    group: String,
}

struct ConvArgs {
    cin: usize,
    cout: usize,
    k: usize,
    s: usize,
    groups: usize,
}

impl Builder {
    fn push(&mut self, name: String, kind: LayerKind, cin: usize, cout: usize, out_stride: usize) {
        self.nodes.push(LayerNode {
            name,
            group: self.group.clone(),
            kind,
            in_channels: cin,
            out_channels: cout,
            kernel: 1,
            stride: 1,
            groups: 1,
            bias: false,
            out_stride,
            shared: false,
        });
    }

    fn raw_conv(&mut self, name: &str, a: ConvArgs, in_stride: usize, bias: bool, shared: bool) -> usize {
        let out_stride = in_stride * a.s;
        let kind = if a.groups > 1 && a.groups == a.cin {
            LayerKind::DwConv
        } else {
            LayerKind::Conv
        };
        self.nodes.push(LayerNode {
            name: name.to_string(),
            group: self.group.clone(),
            kind,
            in_channels: a.cin,
            out_channels: a.cout,
            kernel: a.k,
            stride: a.s,
            groups: a.groups,
            bias,
            out_stride,
            shared,
        });
        out_stride
    }

    /// conv (no bias) + BN + SiLU.
    fn conv_module(&mut self, name: &str, a: ConvArgs, in_stride: usize) -> usize {
        self.conv_module_shared(name, a, in_stride, false, false)
    }

    fn conv_module_shared(
        &mut self,
        name: &str,
        a: ConvArgs,
        in_stride: usize,
        conv_shared: bool,
        bn_shared: bool,
    ) -> usize {
        let cout = a.cout;
        let st = self.raw_conv(&format!("{name}.conv"), a, in_stride, false, conv_shared);
        self.push(format!("{name}.bn"), LayerKind::Bn, cout, cout, st);
        if let Some(n) = self.nodes.last_mut() {
            n.shared = bn_shared;
        }
        self.push(format!("{name}.act"), LayerKind::Activation, cout, cout, st);
        st
    }

    fn csp_layer(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        blocks: usize,
        expand: f64,
        add: bool,
        ca: bool,
        dw_kernel: usize,
        st: usize,
    ) {
        let mid = (cout as f64 * expand) as usize;
        let c = |cin, cout, k| ConvArgs { cin, cout, k, s: 1, groups: 1 };
        self.conv_module(&format!("{name}.main_conv"), c(cin, mid, 1), st);
        self.conv_module(&format!("{name}.short_conv"), c(cin, mid, 1), st);
        for b in 0..blocks {
            let bn = format!("{name}.blocks.{b}");
            self.conv_module(&format!("{bn}.conv1"), c(mid, mid, 3), st);
            let dw = ConvArgs { cin: mid, cout: mid, k: dw_kernel, s: 1, groups: mid };
            self.conv_module(&format!("{bn}.conv2.depthwise"), dw, st);
            self.conv_module(&format!("{bn}.conv2.pointwise"), c(mid, mid, 1), st);
            if add {
                self.push(format!("{bn}.add"), LayerKind::Add, mid, mid, st);
            }
        }
        self.push(format!("{name}.concat"), LayerKind::Concat, 2 * mid, 2 * mid, st);
        if ca {
            self.push(format!("{name}.attention"), LayerKind::ChannelAttention, 2 * mid, 2 * mid, st);
        }
        self.conv_module(&format!("{name}.final_conv"), c(2 * mid, cout, 1), st);
    }
}

pub fn build_model_spec(task: Task, preset: Preset, head_mode: HeadMode) -> ModelSpec {
    build_model_spec_with(&ModelConfig::new(task, preset, head_mode))
        .expect("standard presets are valid")
}

pub fn build_model_spec_with(cfg: &ModelConfig) -> Result<ModelSpec> {
    cfg.validate()?;
    let mut b = Builder {
        nodes: Vec::new(),
        group: "backbone.stem".into(),
    };
    let c = |cin, cout, k, s| ConvArgs { cin, cout, k, s, groups: 1 };

    // backbone
    let stem = cfg.width(BASE_STAGES[0].0);
    let mut st = b.conv_module("backbone.stem.0", c(3, stem / 2, 3, 2), 1);
    st = b.conv_module("backbone.stem.1", c(stem / 2, stem / 2, 3, 1), st);
    st = b.conv_module("backbone.stem.2", c(stem / 2, stem, 3, 1), st);

    let blocks = cfg.scaled_blocks();
    let mut outs = Vec::new();
    for (i, &(cin, cout, _, add, sppf)) in BASE_STAGES.iter().enumerate() {
        let (cin, cout) = (cfg.width(cin), cfg.width(cout));
        let name = format!("backbone.stage{}", i + 1);
        b.group = name.clone();
        st = b.conv_module(&format!("{name}.downsample"), c(cin, cout, 3, 2), st);
        if sppf {
            let mid = cout / 2;
            b.conv_module(&format!("{name}.sppf.conv1"), c(cout, mid, 1, 1), st);
            for p in 0..3 {
                b.push(format!("{name}.sppf.pool{p}"), LayerKind::MaxPool, mid, mid, st);
            }
            b.push(format!("{name}.sppf.concat"), LayerKind::Concat, 4 * mid, 4 * mid, st);
            b.conv_module(&format!("{name}.sppf.conv2"), c(4 * mid, cout, 1, 1), st);
        }
        b.csp_layer(
            &format!("{name}.csp"),
            cout,
            cout,
            blocks[i],
            0.5,
            add,
            cfg.channel_attention,
            cfg.block_kernel,
            st,
        );
        outs.push((cout, st));
    }

    // neck: top-down then bottom-up fusion over the last three stages
    b.group = "neck".into();
    let ch: Vec<usize> = outs[1..].iter().map(|o| o.0).collect();
    let sts: Vec<usize> = outs[1..].iter().map(|o| o.1).collect();
    let n = cfg.size.neck_csp_blocks;
    let e = cfg.size.neck_expand_ratio;
    for idx in [2usize, 1] {
        b.conv_module(&format!("neck.reduce{idx}"), c(ch[idx], ch[idx - 1], 1, 1), sts[idx]);
        b.push(format!("neck.upsample{idx}"), LayerKind::Upsample, ch[idx - 1], ch[idx - 1], sts[idx - 1]);
        b.push(format!("neck.top_down{idx}.concat_in"), LayerKind::Concat, 2 * ch[idx - 1], 2 * ch[idx - 1], sts[idx - 1]);
        b.csp_layer(
            &format!("neck.top_down{idx}"),
            2 * ch[idx - 1],
            ch[idx - 1],
            n,
            e,
            false,
            false,
            cfg.block_kernel,
            sts[idx - 1],
        );
    }
    for idx in [0usize, 1] {
        b.conv_module(&format!("neck.downsample{idx}"), c(ch[idx], ch[idx], 3, 2), sts[idx]);
        b.push(format!("neck.bottom_up{idx}.concat_in"), LayerKind::Concat, 2 * ch[idx], 2 * ch[idx], sts[idx + 1]);
        b.csp_layer(
            &format!("neck.bottom_up{idx}"),
            2 * ch[idx],
            ch[idx + 1],
            n,
            e,
            false,
            false,
            cfg.block_kernel,
            sts[idx + 1],
        );
    }
    let f = cfg.size.neck_out_channels;
    for (i, (&ci, &s)) in ch.iter().zip(&sts).enumerate() {
        b.conv_module(&format!("neck.out{i}"), c(ci, f, 3, 1), s);
    }

    // head
    let share_conv = cfg.head_mode != HeadMode::Separate;
    let share_bn = cfg.head_mode == HeadMode::Shared;
    let mut branches = vec!["cls", "reg"];
    if cfg.task == Task::Ins {
        branches.push("kernel");
    }
    for (lvl, &s) in sts.iter().enumerate() {
        for &br in &branches {
            b.group = format!("head.{br}");
            for i in 0..cfg.head_stacked_convs {
                let sharable = match (br, cfg.kernel_branch) {
                    ("kernel", KernelBranchSharing::Separate) => false,
                    ("kernel", KernelBranchSharing::FirstShared) => i == 0,
                    _ => true,
                };
                let shared = share_conv && sharable && lvl > 0;
                b.conv_module_shared(
                    &format!("head.{br}_convs.{lvl}.{i}"),
                    c(f, f, 3, 1),
                    s,
                    shared,
                    shared && share_bn,
                );
            }
        }
        b.group = "head.cls".into();
        b.raw_conv(&format!("head.rtm_cls.{lvl}"), c(f, cfg.num_classes, 1, 1), s, true, false);
        b.group = "head.reg".into();
        b.raw_conv(&format!("head.rtm_reg.{lvl}"), c(f, 4, 1, 1), s, true, false);
        match cfg.task {
            Task::Ins => {
                b.group = "head.kernel".into();
                b.raw_conv(&format!("head.rtm_kernel.{lvl}"), c(f, kernel_dim(), 1, 1), s, true, false);
            }
            Task::Rot => {
                b.group = "head.angle".into();
                b.raw_conv(&format!("head.rtm_angle.{lvl}"), c(f, 1, 1, 1), s, true, false);
            }
            Task::Det => {}
        }
    }
    if cfg.task == Task::Ins {
        b.group = "head.mask".into();
        let s0 = sts[0];
        for lvl in 1..sts.len() {
            b.push(format!("head.mask.upsample{lvl}"), LayerKind::Upsample, f, f, s0);
        }
        let fused = f * sts.len();
        b.push("head.mask.concat".into(), LayerKind::Concat, fused, fused, s0);
        b.raw_conv("head.mask.fusion", c(fused, f, 1, 1), s0, true, false);
        for i in 0..cfg.mask_convs {
            b.conv_module(&format!("head.mask.convs.{i}"), c(f, f, 3, 1), s0);
        }
        b.raw_conv("head.mask.projection", c(f, cfg.num_prototypes, 1, 1), s0, true, false);
    }

    Ok(ModelSpec {
        config: cfg.clone(),
        nodes: b.nodes,
        stage_blocks: blocks.to_vec(),
    })
}

pub fn count_params(spec: &ModelSpec) -> u64 {
    spec.nodes.iter().map(LayerNode::params).sum()
}

fn check_input(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(MAX_STRIDE) || !w.is_multiple_of(MAX_STRIDE) {
        return Err(Error::InvalidInput(format!(
            "input {h}x{w} must be a non-empty multiple of {MAX_STRIDE}"
        )));
    }
    Ok(())
}

pub fn count_flops(spec: &ModelSpec, h: usize, w: usize) -> Result<u64> {
    check_input(h, w)?;
    Ok(spec.nodes.iter().map(|n| n.flops(h, w)).sum())
}

impl ModelSpec {
    pub fn part_params(&self, part: Part) -> u64 {
        self.nodes.iter().filter(|n| n.part() == part).map(LayerNode::params).sum()
    }

    pub fn part_flops(&self, part: Part, h: usize, w: usize) -> Result<u64> {
        check_input(h, w)?;
        Ok(self
            .nodes
            .iter()
            .filter(|n| n.part() == part)
            .map(|n| n.flops(h, w))
            .sum())
    }

    /// Per-group totals in graph order, with running sums.
    pub fn group_summary(&self, h: usize, w: usize) -> Result<Vec<GroupStats>> {
        check_input(h, w)?;
        let mut out: Vec<GroupStats> = Vec::new();
        for n in &self.nodes {
            let idx = match out.iter().position(|g| g.name == n.group) {
                Some(i) => i,
                None => {
                    out.push(GroupStats {
                        name: n.group.clone(),
                        ..Default::default()
                    });
                    out.len() - 1
                }
            };
            out[idx].params += n.params();
            out[idx].flops += n.flops(h, w);
        }
        let (mut cp, mut cf) = (0, 0);
        for g in &mut out {
            cp += g.params;
            cf += g.flops;
            g.cumulative_params = cp;
            g.cumulative_flops = cf;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupStats {
    pub name: String,
    pub params: u64,
    pub flops: u64,
    pub cumulative_params: u64,
    pub cumulative_flops: u64,
}
