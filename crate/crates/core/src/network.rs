//! Full two-stream network: encoders, cross-modality interaction, decoder.
//!
//! In the default (discrepant) mode the low stages (1, 2) run detail
//! enhancement from RGB into depth and the high stages (3, 4, 5) run semantic
//! enhancement from depth into RGB. The enhanced maps flow into the next stage
//! of their stream and double as the decoder's skip features: depth-stream
//! outputs at low stages, RGB-stream outputs at high stages.
//!
//! [`NetworkConfig`] also describes the ablation and interaction variants; see
//! [`Variant`] for the named presets.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::attention::DEFAULT_REDUCTION;
use crate::backbone::{self, BackboneConfig, EncoderStream, Stream, NUM_STAGES};
use crate::ddr::{self, Decoded, Decoder, DecoderSpec, SaliencyMap, SkipSet};
use crate::dse::{Dse, DseSpec};
use crate::ops::Dims4;
use crate::params::ParamStore;
use crate::rde::{Rde, RdeSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    /// RGB -> depth at low stages, depth -> RGB at high stages.
    #[default]
    Discrepant,
    /// Depth -> RGB at every stage (low-stage detail module reversed).
    Unidirectional,
    /// Both directions at every stage.
    Bidirectional,
}

/// Replaces or exchanges the two interaction modules (discrepant mode only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleSwap {
    #[default]
    None,
    /// Low stages use semantic enhancement in the RGB -> depth direction.
    RdeAsDse,
    /// High stages use detail enhancement in the depth -> RGB direction.
    DseAsRde,
    /// Low stages run semantic enhancement depth -> RGB, high stages run
    /// detail enhancement RGB -> depth.
    Exchanged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ablations {
    #[serde(default)]
    pub without_rde: bool,
    #[serde(default)]
    pub without_dse: bool,
    #[serde(default)]
    pub without_ddr: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSplit {
    pub low: Vec<usize>,
    pub high: Vec<usize>,
}

impl Default for StageSplit {
    fn default() -> Self {
        Self {
            low: vec![1, 2],
            high: vec![3, 4, 5],
        }
    }
}

impl StageSplit {
    pub fn new(low: Vec<usize>, high: Vec<usize>) -> Self {
        Self { low, high }
    }

    pub fn validate(&self) -> Result<()> {
        let low: BTreeSet<_> = self.low.iter().copied().collect();
        let high: BTreeSet<_> = self.high.iter().copied().collect();
        let all: BTreeSet<_> = (1..=NUM_STAGES).collect();
        if low.len() != self.low.len() || high.len() != self.high.len() {
            return Err(Error::config("stage split lists a stage twice"));
        }
        if !low.is_disjoint(&high) || low.union(&high).copied().collect::<BTreeSet<_>>() != all {
            return Err(Error::config(format!(
                "stage split {:?} / {:?} does not partition stages 1..=5",
                self.low, self.high
            )));
        }
        Ok(())
    }

    pub fn is_low(&self, stage: usize) -> bool {
        self.low.contains(&stage)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub interaction_mode: InteractionMode,
    #[serde(default)]
    pub ablations: Ablations,
    #[serde(default)]
    pub stage_split: StageSplit,
    #[serde(default)]
    pub module_swap: ModuleSwap,
    /// Feature-level branch adds the target stream as well (`cascade(guide) + target`).
    #[serde(default)]
    pub dse_alt_addition: bool,
    /// With semantic enhancement removed, feed `rgb5 + depth5` to the decoder
    /// as the top skip. Probe harnesses switch this off.
    #[serde(default = "yes")]
    pub top_fusion: bool,
    #[serde(default = "default_reduction")]
    pub reduction_ratio: usize,
    /// ReLU between the two 7x7 mask convolutions of detail enhancement.
    #[serde(default = "yes")]
    pub rde_mask_activation: bool,
}

fn yes() -> bool {
    true
}

fn default_reduction() -> usize {
    DEFAULT_REDUCTION
}

impl NetworkConfig {
    pub fn new(backbone: BackboneConfig) -> Self {
        Self {
            backbone,
            interaction_mode: InteractionMode::Discrepant,
            ablations: Ablations::default(),
            stage_split: StageSplit::default(),
            module_swap: ModuleSwap::None,
            dse_alt_addition: false,
            top_fusion: true,
            reduction_ratio: DEFAULT_REDUCTION,
            rde_mask_activation: true,
        }
    }

    pub fn full() -> Self {
        Self::new(BackboneConfig::full())
    }

    pub fn toy(stage_channels: [usize; NUM_STAGES]) -> Self {
        Self::new(BackboneConfig::toy(stage_channels))
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    /// Resolves the per-stage module placement and checks flag consistency.
    pub fn plan(&self) -> Result<Vec<StagePlan>> {
        self.backbone.validate()?;
        self.stage_split.validate()?;
        if self.reduction_ratio == 0 {
            return Err(Error::config("reduction ratio must be positive"));
        }
        let Ablations {
            without_rde,
            without_dse,
            ..
        } = self.ablations;
        let conflict = |what: &str| Err(Error::config(format!("{what} cannot be combined with {self_mode:?}", self_mode = self.interaction_mode)));
        match self.interaction_mode {
            InteractionMode::Discrepant => {}
            InteractionMode::Unidirectional if without_rde => return conflict("without_rde"),
            InteractionMode::Bidirectional if without_rde => return conflict("without_rde"),
            InteractionMode::Bidirectional if without_dse => return conflict("without_dse"),
            _ => {}
        }
        if self.module_swap != ModuleSwap::None {
            if self.interaction_mode != InteractionMode::Discrepant {
                return Err(Error::config("module swaps are defined for the discrepant mode only"));
            }
            let touches_low = matches!(self.module_swap, ModuleSwap::RdeAsDse | ModuleSwap::Exchanged);
            let touches_high = matches!(self.module_swap, ModuleSwap::DseAsRde | ModuleSwap::Exchanged);
            if (touches_low && without_rde) || (touches_high && without_dse) {
                return Err(Error::config(format!(
                    "module swap {:?} conflicts with the removed stage group",
                    self.module_swap
                )));
            }
        }

        use ModuleKind::{Dse as D, Rde as R};
        use Stream::{Depth, Rgb};
        let inj = |kind, target| Injection { kind, target };
        Ok((1..=NUM_STAGES)
            .map(|stage| {
                let low = self.stage_split.is_low(stage);
                let injections = if low {
                    if without_rde {
                        vec![]
                    } else {
                        match (self.interaction_mode, self.module_swap) {
                            (InteractionMode::Unidirectional, _) => vec![inj(R, Rgb)],
                            (InteractionMode::Bidirectional, _) => vec![inj(R, Depth), inj(R, Rgb)],
                            (_, ModuleSwap::RdeAsDse) => vec![inj(D, Depth)],
                            (_, ModuleSwap::Exchanged) => vec![inj(D, Rgb)],
                            _ => vec![inj(R, Depth)],
                        }
                    }
                } else if without_dse {
                    vec![]
                } else {
                    match (self.interaction_mode, self.module_swap) {
                        (InteractionMode::Bidirectional, _) => vec![inj(D, Rgb), inj(D, Depth)],
                        (_, ModuleSwap::DseAsRde) => vec![inj(R, Rgb)],
                        (_, ModuleSwap::Exchanged) => vec![inj(R, Depth)],
                        _ => vec![inj(D, Rgb)],
                    }
                };
                // A stage without interaction passes on the plain RGB feature, so
                // with every group ablated the decoder never sees depth.
                let skip_source = injections.first().map_or(Rgb, |i| i.target);
                StagePlan {
                    stage,
                    low,
                    injections,
                    skip_source,
                }
            })
            .collect())
    }

    /// Whether the top skip is `rgb5 + depth5`.
    pub fn top_fusion_active(&self) -> bool {
        self.ablations.without_dse && self.top_fusion && !self.stage_split.is_low(NUM_STAGES)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    Rde,
    Dse,
}

/// One cross-modality module at one stage: `target` is the stream it enhances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Injection {
    pub kind: ModuleKind,
    pub target: Stream,
}

impl Injection {
    fn param_scope(&self) -> String {
        let kind = match self.kind {
            ModuleKind::Rde => "rde",
            ModuleKind::Dse => "dse",
        };
        format!("{kind}_to_{}", self.target.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePlan {
    pub stage: usize,
    pub low: bool,
    pub injections: Vec<Injection>,
    pub skip_source: Stream,
}

/// Named network variants for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    WithoutRde,
    WithoutDse,
    WithoutDdr,
    Unidirectional,
    Bidirectional,
    RdeAsDse,
    DseAsRde,
    Exchanged,
    RdeFirstThree,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Full,
        Variant::WithoutRde,
        Variant::WithoutDse,
        Variant::WithoutDdr,
        Variant::Unidirectional,
        Variant::Bidirectional,
        Variant::RdeAsDse,
        Variant::DseAsRde,
        Variant::Exchanged,
        Variant::RdeFirstThree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WithoutRde => "without-rde",
            Variant::WithoutDse => "without-dse",
            Variant::WithoutDdr => "without-ddr",
            Variant::Unidirectional => "unidirectional",
            Variant::Bidirectional => "bidirectional",
            Variant::RdeAsDse => "rde-as-dse",
            Variant::DseAsRde => "dse-as-rde",
            Variant::Exchanged => "exchanged",
            Variant::RdeFirstThree => "rde-first-three",
        }
    }

    /// `base` with this variant's changes applied.
    pub fn apply(self, base: &NetworkConfig) -> NetworkConfig {
        let mut c = base.clone();
        match self {
            Variant::Full => {}
            Variant::WithoutRde => c.ablations.without_rde = true,
            Variant::WithoutDse => c.ablations.without_dse = true,
            Variant::WithoutDdr => c.ablations.without_ddr = true,
            Variant::Unidirectional => c.interaction_mode = InteractionMode::Unidirectional,
            Variant::Bidirectional => c.interaction_mode = InteractionMode::Bidirectional,
            Variant::RdeAsDse => c.module_swap = ModuleSwap::RdeAsDse,
            Variant::DseAsRde => c.module_swap = ModuleSwap::DseAsRde,
            Variant::Exchanged => c.module_swap = ModuleSwap::Exchanged,
            Variant::RdeFirstThree => c.stage_split = StageSplit::new(vec![1, 2, 3], vec![4, 5]),
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::config(format!("unknown variant `{s}` (expected one of {names:?})"))
            })
    }
}

#[derive(Debug, Clone)]
enum Interaction {
    Rde(Rde),
    Dse(Dse),
}

impl Interaction {
    fn forward(&self, guide: &Tensor, target: &Tensor) -> Result<Tensor> {
        match self {
            Interaction::Rde(m) => m.forward(guide, target),
            Interaction::Dse(m) => m.forward(guide, target),
        }
    }
}

/// Intermediate results of one forward pass. Per-stage vectors hold stage 1 at index 0.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Backbone outputs before any cross-modality injection.
    pub raw_rgb: Vec<Tensor>,
    pub raw_depth: Vec<Tensor>,
    /// Stream features after injection (what the next stage consumes).
    pub rgb: Vec<Tensor>,
    pub depth: Vec<Tensor>,
    pub skips: Vec<Tensor>,
    pub decoded: Decoded,
}

pub struct Network {
    config: NetworkConfig,
    store: ParamStore,
    rgb: EncoderStream,
    depth: EncoderStream,
    plan: Vec<StagePlan>,
    interactions: Vec<Vec<Interaction>>,
    decoder: Decoder,
}

impl Network {
    /// Builds every module of `config` into `store`, then loads pretrained
    /// backbone weights into both streams if the config names a file.
    pub fn build(config: &NetworkConfig, mut store: ParamStore) -> Result<Self> {
        let plan = config.plan()?;
        let channels = config.backbone.stage_channels;
        let pretrained = backbone::load_pretrained(&config.backbone, store.device(), store.dtype())?;

        let mut root = store.root();
        let rgb = EncoderStream::new(&mut root.push("rgb"), &config.backbone, Stream::Rgb)?;
        let depth = EncoderStream::new(&mut root.push("depth"), &config.backbone, Stream::Depth)?;

        let mut interactions = Vec::with_capacity(NUM_STAGES);
        for stage in &plan {
            let c = channels[stage.stage - 1];
            let mut scope = root.push("interact");
            let mut scope = scope.push(&format!("stage{}", stage.stage));
            let modules = stage
                .injections
                .iter()
                .map(|inj| {
                    let mut s = scope.push(&inj.param_scope());
                    Ok(match inj.kind {
                        ModuleKind::Rde => Interaction::Rde(Rde::new(
                            &mut s,
                            RdeSpec {
                                channels: c,
                                mask_activation: config.rde_mask_activation,
                            },
                        )?),
                        ModuleKind::Dse => Interaction::Dse(Dse::new(
                            &mut s,
                            DseSpec {
                                channels: c,
                                reduction: config.reduction_ratio,
                                alt_addition: config.dse_alt_addition,
                            },
                        )?),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            interactions.push(modules);
        }
        let decoder = Decoder::new(
            &mut root.push("decoder"),
            DecoderSpec {
                stage_channels: channels,
                dense: !config.ablations.without_ddr,
            },
        )?;

        if let Some(weights) = pretrained {
            for stream in ["rgb", "depth"] {
                for (name, t) in &weights.tensors {
                    store.set(&format!("{stream}.{name}"), t)?;
                }
            }
        }

        Ok(Self {
            config: config.clone(),
            store,
            rgb,
            depth,
            plan,
            interactions,
            decoder,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn plan(&self) -> &[StagePlan] {
        &self.plan
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn encoder(&self, stream: Stream) -> &EncoderStream {
        match stream {
            Stream::Rgb => &self.rgb,
            Stream::Depth => &self.depth,
        }
    }

    /// Stream providing each level's skip feature.
    pub fn skip_sources(&self) -> Vec<Stream> {
        self.plan.iter().map(|p| p.skip_source).collect()
    }

    /// Exact number of trainable scalars.
    pub fn count_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    fn check_inputs(&self, rgb: &Tensor, depth: &Tensor) -> Result<()> {
        let d = Dims4::of(rgb)?;
        if rgb.dims() != depth.dims() {
            return Err(Error::shape("network inputs", rgb.dims(), depth.dims()));
        }
        if d.c != backbone::INPUT_CHANNELS {
            return Err(Error::ChannelMismatch {
                what: "network input",
                expected: backbone::INPUT_CHANNELS,
                actual: d.c,
            });
        }
        if d.h % 16 != 0 || d.w % 16 != 0 {
            return Err(Error::Precondition(format!(
                "input resolution {}x{} is not divisible by 16",
                d.h, d.w
            )));
        }
        Ok(())
    }

    pub fn trace(&self, rgb: &Tensor, depth: &Tensor) -> Result<ForwardTrace> {
        self.check_inputs(rgb, depth)?;
        let mut t = ForwardTrace {
            raw_rgb: Vec::with_capacity(NUM_STAGES),
            raw_depth: Vec::with_capacity(NUM_STAGES),
            rgb: Vec::with_capacity(NUM_STAGES),
            depth: Vec::with_capacity(NUM_STAGES),
            skips: Vec::with_capacity(NUM_STAGES),
            decoded: Decoded {
                logits: rgb.zeros_like()?,
                upsampled_skips: 0,
                refined_skips: Vec::new(),
            },
        };
        let (mut r, mut d) = (rgb.clone(), depth.clone());
        for (plan, modules) in self.plan.iter().zip(&self.interactions) {
            let fr = self.rgb.encode_stage(&r, plan.stage)?;
            let fd = self.depth.encode_stage(&d, plan.stage)?;
            let (mut out_r, mut out_d) = (fr.clone(), fd.clone());
            // Bidirectional stages read both inputs before either is replaced.
            for (inj, module) in plan.injections.iter().zip(modules) {
                match inj.target {
                    Stream::Depth => out_d = module.forward(&fr, &fd)?,
                    Stream::Rgb => out_r = module.forward(&fd, &fr)?,
                }
            }
            t.skips.push(match plan.skip_source {
                Stream::Rgb => out_r.clone(),
                Stream::Depth => out_d.clone(),
            });
            t.raw_rgb.push(fr);
            t.raw_depth.push(fd);
            t.rgb.push(out_r.clone());
            t.depth.push(out_d.clone());
            r = out_r;
            d = out_d;
        }
        if self.config.top_fusion_active() {
            t.skips[NUM_STAGES - 1] = (&t.rgb[NUM_STAGES - 1] + &t.depth[NUM_STAGES - 1])?;
        }
        t.decoded = self.decoder.decode(&SkipSet::new(t.skips.clone())?)?;
        Ok(t)
    }

    pub fn forward_logits(&self, rgb: &Tensor, depth: &Tensor) -> Result<Tensor> {
        Ok(self.trace(rgb, depth)?.decoded.logits)
    }

    pub fn forward(&self, rgb: &Tensor, depth: &Tensor) -> Result<SaliencyMap> {
        ddr::predict(&self.forward_logits(rgb, depth)?)
    }
}
