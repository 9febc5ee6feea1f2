//! Five-stage VGG16-style encoder streams.
//!
//! Stage `i` (1-based) runs at `1 / 2^(i-1)` of the input resolution. Stages
//! 2..5 open with a 2x2 max-pool of the previous stage's (possibly
//! cross-modality enhanced) output; the pool after stage 5 and the classifier
//! head of VGG16 are dropped.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::conv::{ConvBlock, ConvBlockSpec};
use crate::ops::Dims4;
use crate::params::{Init, Scope};
use crate::{Error, Result};

pub const NUM_STAGES: usize = 5;
/// Convolutions per stage in VGG16.
pub const CONVS_PER_STAGE: [usize; NUM_STAGES] = [2, 2, 3, 3, 3];
pub const VGG16_CHANNELS: [usize; NUM_STAGES] = [64, 128, 256, 512, 512];
/// Index of each conv layer inside torchvision's `vgg16().features`.
pub const VGG16_FEATURE_INDICES: [usize; 13] = [0, 2, 5, 7, 10, 12, 14, 17, 19, 21, 24, 26, 28];
/// Stage-1 input channels; depth maps are replicated to three channels upstream.
pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Full,
    Toy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Rgb,
    Depth,
}

impl Stream {
    pub fn other(self) -> Self {
        match self {
            Stream::Rgb => Stream::Depth,
            Stream::Depth => Stream::Rgb,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stream::Rgb => "rgb",
            Stream::Depth => "depth",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub scale: Scale,
    pub stage_channels: [usize; NUM_STAGES],
    #[serde(default)]
    pub pretrained_weights_path: Option<PathBuf>,
}

impl BackboneConfig {
    pub fn full() -> Self {
        Self {
            scale: Scale::Full,
            stage_channels: VGG16_CHANNELS,
            pretrained_weights_path: None,
        }
    }

    pub fn toy(stage_channels: [usize; NUM_STAGES]) -> Self {
        Self {
            scale: Scale::Toy,
            stage_channels,
            pretrained_weights_path: None,
        }
    }

    pub fn with_pretrained(mut self, path: impl Into<PathBuf>) -> Self {
        self.pretrained_weights_path = Some(path.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == Scale::Full && self.stage_channels != VGG16_CHANNELS {
            return Err(Error::config(format!(
                "full scale requires stage channels {VGG16_CHANNELS:?}, got {:?}",
                self.stage_channels
            )));
        }
        if self.stage_channels.iter().any(|&c| c == 0) {
            return Err(Error::config("stage channel counts must be positive"));
        }
        Ok(())
    }

    pub fn stage_input_channels(&self, stage: usize) -> usize {
        if stage == 1 {
            INPUT_CHANNELS
        } else {
            self.stage_channels[stage - 2]
        }
    }

    /// Conv specs of one stage, in order.
    pub fn stage_specs(&self, stage: usize) -> Vec<ConvBlockSpec> {
        let out = self.stage_channels[stage - 1];
        let mut input = self.stage_input_channels(stage);
        (0..CONVS_PER_STAGE[stage - 1])
            .map(|_| {
                let spec = ConvBlockSpec::new(input, out, 3);
                input = out;
                spec
            })
            .collect()
    }

    /// Trainable scalars of one encoder stream.
    pub fn stream_params(&self) -> usize {
        (1..=NUM_STAGES)
            .flat_map(|s| self.stage_specs(s))
            .map(|spec| spec.num_params())
            .sum()
    }
}

/// Outputs of the five stages of one stream, index 0 holding stage 1.
#[derive(Debug, Clone)]
pub struct StageFeatures(pub Vec<Tensor>);

impl StageFeatures {
    pub fn stage(&self, i: usize) -> &Tensor {
        &self.0[i - 1]
    }
}

pub(crate) fn check_stage(stage: usize) -> Result<()> {
    if !(1..=NUM_STAGES).contains(&stage) {
        return Err(Error::Precondition(format!("stage index {stage} outside 1..=5")));
    }
    Ok(())
}

/// One encoder stream. The RGB and depth streams are separate instances with
/// disjoint parameters.
#[derive(Debug, Clone)]
pub struct EncoderStream {
    stream: Stream,
    config: BackboneConfig,
    stages: Vec<Vec<ConvBlock>>,
}

impl EncoderStream {
    /// Builds the stream under `<scope>/stage{i}/conv{j}`.
    pub fn new(scope: &mut Scope<'_>, config: &BackboneConfig, stream: Stream) -> Result<Self> {
        config.validate()?;
        let mut stages = Vec::with_capacity(NUM_STAGES);
        for s in 1..=NUM_STAGES {
            let mut stage_scope = scope.push(&format!("stage{s}"));
            let convs = config
                .stage_specs(s)
                .into_iter()
                .enumerate()
                .map(|(j, spec)| {
                    ConvBlock::new(&mut stage_scope.push(&format!("conv{}", j + 1)), spec, Init::KaimingNormal)
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(convs);
        }
        Ok(Self {
            stream,
            config: config.clone(),
            stages,
        })
    }

    pub fn stream(&self) -> Stream {
        self.stream
    }

    /// Runs stage `stage` (1-based) on the previous stage's output (or the
    /// 3-channel image for stage 1).
    pub fn encode_stage(&self, f: &Tensor, stage: usize) -> Result<Tensor> {
        check_stage(stage)?;
        let d = Dims4::of(f)?;
        let expected = self.config.stage_input_channels(stage);
        if d.c != expected {
            return Err(Error::ChannelMismatch {
                what: "encoder stage input",
                expected,
                actual: d.c,
            });
        }
        let mut x = if stage > 1 {
            if d.h % 2 != 0 || d.w % 2 != 0 {
                return Err(Error::Precondition(format!(
                    "stage {stage} input {}x{} cannot be halved",
                    d.h, d.w
                )));
            }
            crate::ops::max_pool2x2(f)?
        } else {
            f.clone()
        };
        for conv in &self.stages[stage - 1] {
            x = conv.forward(&x)?;
        }
        Ok(x)
    }

    /// Runs all five stages without any cross-modality injection.
    pub fn encode(&self, input: &Tensor) -> Result<StageFeatures> {
        let mut out = Vec::with_capacity(NUM_STAGES);
        let mut x = input.clone();
        for s in 1..=NUM_STAGES {
            x = self.encode_stage(&x, s)?;
            out.push(x.clone());
        }
        Ok(StageFeatures(out))
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvBlock> {
        self.stages.iter().flatten()
    }
}

/// Parameter-store names of the 13 backbone convolutions, in VGG16 order, as
/// `(stage, conv)` pairs.
pub fn conv_layout() -> Vec<(usize, usize)> {
    (1..=NUM_STAGES)
        .flat_map(|s| (1..=CONVS_PER_STAGE[s - 1]).map(move |j| (s, j)))
        .collect()
}

/// Weights read from a pretrained archive, keyed `stage{s}.conv{j}.{weight,bias}`.
#[derive(Debug, Clone)]
pub struct PretrainedWeights {
    pub tensors: BTreeMap<String, Tensor>,
}

/// Reads the VGG16 convolution weights named by `config`.
///
/// The archive is a safetensors file keyed like torchvision's VGG16 state
/// dict: `features.{0,2,5,7,10,12,14,17,19,21,24,26,28}.{weight,bias}`. Extra
/// keys (the classifier head) are ignored. Returns `Ok(None)` when no path is
/// configured.
pub fn load_pretrained(config: &BackboneConfig, device: &Device, dtype: DType) -> Result<Option<PretrainedWeights>> {
    let Some(path) = &config.pretrained_weights_path else {
        return Ok(None);
    };
    if config.scale != Scale::Full {
        return Err(Error::WeightLoad {
            path: path.clone(),
            reason: "pretrained weights require full scale".into(),
        });
    }
    let load_err = |reason: String| Error::WeightLoad {
        path: path.clone(),
        reason,
    };
    let bytes = std::fs::read(path).map_err(|e| load_err(e.to_string()))?;
    let archive = safetensors::SafeTensors::deserialize(&bytes).map_err(|e| load_err(e.to_string()))?;
    let mut tensors = BTreeMap::new();
    for ((stage, conv), index) in conv_layout().into_iter().zip(VGG16_FEATURE_INDICES) {
        let spec = config.stage_specs(stage)[conv - 1];
        for (suffix, shape) in [
            ("weight", vec![spec.out_channels, spec.in_channels, 3, 3]),
            ("bias", vec![spec.out_channels]),
        ] {
            let key = format!("features.{index}.{suffix}");
            let view = archive
                .tensor(&key)
                .map_err(|_| load_err(format!("missing tensor `{key}`")))?;
            if view.shape() != shape.as_slice() {
                return Err(load_err(format!(
                    "tensor `{key}` has shape {:?}, expected {shape:?}",
                    view.shape()
                )));
            }
            let t = crate::checkpoint::tensor_from_view(&view, device)
                .map_err(|e| load_err(format!("tensor `{key}`: {e}")))?
                .to_dtype(dtype)?;
            tensors.insert(format!("stage{stage}.conv{conv}.{suffix}"), t);
        }
    }
    Ok(Some(PretrainedWeights { tensors }))
}

/// Writes `stream`'s 13 convolutions in the pretrained-archive layout.
pub fn export_vgg_layout(store: &crate::params::ParamStore, prefix: &str, path: &Path) -> Result<()> {
    let mut out = BTreeMap::new();
    for ((stage, conv), index) in conv_layout().into_iter().zip(VGG16_FEATURE_INDICES) {
        for suffix in ["weight", "bias"] {
            let name = format!("{prefix}.stage{stage}.conv{conv}.{suffix}");
            let var = store
                .get(&name)
                .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))?;
            out.insert(format!("features.{index}.{suffix}"), var.as_tensor().clone());
        }
    }
    crate::checkpoint::write_safetensors(&out, None, path)
}
