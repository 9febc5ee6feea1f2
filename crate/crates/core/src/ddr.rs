//! Dense decoding reconstruction.
//!
//! Before a skip feature enters the decoder it is filtered by a *semantic
//! block* built from every higher-level skip:
//!
//! ```text
//! B[i]      = conv3x3(conv1x1([up(skip[i+1]), ..., up(skip[5])]))
//! refined_i = B[i] * skip[i] + skip[i]
//! ```
//!
//! Level 5 has nothing above it and passes through unchanged. The decoder then
//! runs top-down: at each level the previous decoding features (upsampled to
//! this level) are concatenated with the refined skip, passed through two 3x3
//! conv blocks, and upsampled 2x for the next level. A final 3x3 conv emits
//! one channel of logits at input resolution.
//!
//! All upsampling is bilinear with half-pixel centers (no corner alignment).

use candle_core::Tensor;

use crate::backbone::NUM_STAGES;
use crate::conv::{ConvBlock, ConvBlockSpec};
use crate::ops::{self, Dims4};
use crate::params::{Init, Scope};
use crate::{Error, Result};

/// The five skip features, index 0 holding level 1.
#[derive(Debug, Clone)]
pub struct SkipSet(Vec<Tensor>);

impl SkipSet {
    /// Validates that there are five levels forming a halving spatial ladder.
    pub fn new(levels: Vec<Tensor>) -> Result<Self> {
        if levels.len() != NUM_STAGES {
            return Err(Error::Precondition(format!(
                "skip set needs {NUM_STAGES} levels, got {}",
                levels.len()
            )));
        }
        let base = Dims4::of(&levels[0])?;
        for (i, t) in levels.iter().enumerate() {
            let d = Dims4::of(t)?;
            let (eh, ew) = (base.h >> i, base.w >> i);
            if d.n != base.n || (d.h, d.w) != (eh, ew) || base.h % (1 << i) != 0 || base.w % (1 << i) != 0 {
                return Err(Error::Precondition(format!(
                    "skip level {} has shape {:?}, expected spatial {}x{}",
                    i + 1,
                    t.dims(),
                    eh,
                    ew
                )));
            }
        }
        Ok(Self(levels))
    }

    /// Skip feature of `level` (1-based).
    pub fn level(&self, level: usize) -> &Tensor {
        &self.0[level - 1]
    }

    pub fn levels(&self) -> &[Tensor] {
        &self.0
    }
}

/// `B * skip + skip`.
pub fn refine_skip(block: &Tensor, skip: &Tensor) -> Result<Tensor> {
    ops::ensure_same_shape("skip refinement", block, skip)?;
    Ok(((block * skip)? + skip)?)
}

#[derive(Debug, Clone)]
pub struct SemanticBlock {
    level: usize,
    reduce: ConvBlock,
    refine: ConvBlock,
}

impl SemanticBlock {
    pub fn specs(stage_channels: &[usize; NUM_STAGES], level: usize) -> (ConvBlockSpec, ConvBlockSpec) {
        let concat: usize = stage_channels[level..].iter().sum();
        let c = stage_channels[level - 1];
        (ConvBlockSpec::new(concat, c, 1), ConvBlockSpec::new(c, c, 3).linear())
    }

    pub fn new(scope: &mut Scope<'_>, stage_channels: &[usize; NUM_STAGES], level: usize) -> Result<Self> {
        check_block_level(level)?;
        let (reduce, refine) = Self::specs(stage_channels, level);
        Ok(Self {
            level,
            reduce: ConvBlock::new(&mut scope.push("reduce"), reduce, Init::FanInUniform)?,
            refine: ConvBlock::new(&mut scope.push("refine"), refine, Init::FanInUniform)?,
        })
    }

    pub fn from_parts(level: usize, reduce: ConvBlock, refine: ConvBlock) -> Result<Self> {
        check_block_level(level)?;
        Ok(Self { level, reduce, refine })
    }

    /// Returns `B[level]` and the number of upsampled skip maps it consumed.
    pub fn forward(&self, skips: &SkipSet) -> Result<(Tensor, usize)> {
        let reference = skips.level(self.level);
        let ups = ((self.level + 1)..=NUM_STAGES)
            .map(|j| ops::resize_like(skips.level(j), reference))
            .collect::<Result<Vec<_>>>()?;
        let count = ups.len();
        let x = ops::concat_channels(&ups)?;
        Ok((self.refine.forward(&self.reduce.forward(&x)?)?, count))
    }
}

fn check_block_level(level: usize) -> Result<()> {
    if !(1..NUM_STAGES).contains(&level) {
        return Err(Error::Precondition(format!(
            "semantic blocks exist for levels 1..=4 only (got {level}); level 5 passes through"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderSpec {
    pub stage_channels: [usize; NUM_STAGES],
    /// Gate skips with semantic blocks; off gives plain U-Net style skips.
    pub dense: bool,
}

impl DecoderSpec {
    /// The two conv blocks of a decoding level.
    pub fn level_specs(&self, level: usize) -> [ConvBlockSpec; 2] {
        let c = self.stage_channels[level - 1];
        let input = if level == NUM_STAGES {
            c
        } else {
            c + self.stage_channels[level]
        };
        [ConvBlockSpec::new(input, c, 3), ConvBlockSpec::new(c, c, 3)]
    }

    pub fn head_spec(&self) -> ConvBlockSpec {
        ConvBlockSpec::new(self.stage_channels[0], 1, 3).linear()
    }

    pub fn num_params(&self) -> usize {
        let levels: usize = (1..=NUM_STAGES)
            .flat_map(|l| self.level_specs(l))
            .map(|s| s.num_params())
            .sum();
        let blocks: usize = if self.dense {
            (1..NUM_STAGES)
                .map(|l| {
                    let (a, b) = SemanticBlock::specs(&self.stage_channels, l);
                    a.num_params() + b.num_params()
                })
                .sum()
        } else {
            0
        };
        levels + blocks + self.head_spec().num_params()
    }
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub logits: Tensor,
    /// Upsampled skip maps consumed by semantic blocks in this pass.
    pub upsampled_skips: usize,
    /// Refined skip features, index 0 holding level 1.
    pub refined_skips: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    spec: DecoderSpec,
    blocks: Vec<SemanticBlock>,
    levels: Vec<[ConvBlock; 2]>,
    head: ConvBlock,
}

impl Decoder {
    pub fn new(scope: &mut Scope<'_>, spec: DecoderSpec) -> Result<Self> {
        let init = Init::FanInUniform;
        let blocks = if spec.dense {
            (1..NUM_STAGES)
                .map(|l| SemanticBlock::new(&mut scope.push(&format!("semantic{l}")), &spec.stage_channels, l))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let levels = (1..=NUM_STAGES)
            .map(|l| {
                let mut s = scope.push(&format!("level{l}"));
                let [a, b] = spec.level_specs(l);
                Ok([
                    ConvBlock::new(&mut s.push("conv1"), a, init)?,
                    ConvBlock::new(&mut s.push("conv2"), b, init)?,
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        let head = ConvBlock::new(&mut scope.push("head"), spec.head_spec(), init)?;
        Ok(Self {
            spec,
            blocks,
            levels,
            head,
        })
    }

    pub fn spec(&self) -> &DecoderSpec {
        &self.spec
    }

    pub fn is_dense(&self) -> bool {
        self.spec.dense
    }

    /// Semantic block for `level` (1..=4).
    pub fn semantic_block(&self, skips: &SkipSet, level: usize) -> Result<Tensor> {
        check_block_level(level)?;
        let block = self
            .blocks
            .get(level - 1)
            .ok_or_else(|| Error::Precondition("decoder was built without semantic blocks".into()))?;
        Ok(block.forward(skips)?.0)
    }

    pub fn decode(&self, skips: &SkipSet) -> Result<Decoded> {
        let mut upsampled_skips = 0;
        let mut refined = vec![None; NUM_STAGES];
        for level in 1..=NUM_STAGES {
            let skip = skips.level(level);
            refined[level - 1] = Some(match self.blocks.get(level - 1) {
                Some(block) => {
                    let (b, n) = block.forward(skips)?;
                    upsampled_skips += n;
                    refine_skip(&b, skip)?
                }
                None => skip.clone(),
            });
        }
        let refined: Vec<Tensor> = refined.into_iter().map(Option::unwrap).collect();

        let mut current: Option<Tensor> = None;
        for level in (1..=NUM_STAGES).rev() {
            let skip = &refined[level - 1];
            let x = match current.take() {
                None => skip.clone(),
                Some(prev) => ops::concat_channels(&[&prev, skip])?,
            };
            let [a, b] = &self.levels[level - 1];
            let x = b.forward(&a.forward(&x)?)?;
            current = Some(if level > 1 {
                ops::resize_like(&x, skips.level(level - 1))?
            } else {
                x
            });
        }
        let logits = self.head.forward(&current.expect("five decoding levels ran"))?;
        Ok(Decoded {
            logits,
            upsampled_skips,
            refined_skips: refined,
        })
    }
}

/// Single-channel saliency probabilities `(N, 1, H, W)`.
#[derive(Debug, Clone)]
pub struct SaliencyMap(Tensor);

impl SaliencyMap {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Row-major `H x W` maps, one per batch item.
    pub fn to_maps(&self) -> Result<Vec<Vec<f32>>> {
        let d = Dims4::of(&self.0)?;
        let flat: Vec<f32> = self.0.to_dtype(candle_core::DType::F32)?.flatten_all()?.to_vec1()?;
        Ok(flat.chunks(d.h * d.w).map(<[f32]>::to_vec).collect())
    }
}

/// Elementwise sigmoid over single-channel logits.
pub fn predict(logits: &Tensor) -> Result<SaliencyMap> {
    let d = Dims4::of(logits)?;
    if d.c != 1 {
        return Err(Error::ChannelMismatch {
            what: "saliency logits",
            expected: 1,
            actual: d.c,
        });
    }
    Ok(SaliencyMap(ops::sigmoid(logits)?))
}
