//! The change-detection network: weight-sharing Siamese encoder,
//! similarity-guided channel/spatial attention with inter-stage attention
//! flow, decoder fusion, deep-supervision heads, output head.

mod attention;
mod encoder;
mod export;
mod layers;

pub use attention::{sca_block, ssa_block, ScaOutput, ScaWeights, SsaWeights};
pub use export::{export_attention_maps, AttentionState, StageMaps};
pub use layers::{NamedTensors, ParamId};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tape, Tensor, VarId};
use encoder::Encoder;
use layers::{BatchNormLayer, Conv2dLayer, LinearLayer};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderVariant {
    /// Desk-scale encoder: 3x3 stem, narrow stages.
    Mini,
    /// Full-width residual encoder with a 7x7 stem.
    Resnet18,
}

impl EncoderVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mini" => Ok(EncoderVariant::Mini),
            "resnet18" => Ok(EncoderVariant::Resnet18),
            other => Err(Error::value("encoder_variant", format!("unknown variant {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EncoderVariant::Mini => "mini",
            EncoderVariant::Resnet18 => "resnet18",
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    pub input_channels: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            variant: EncoderVariant::Mini,
            input_channels: 3,
            stage_channels: vec![16, 32, 64, 128],
            blocks_per_stage: 2,
        }
    }
}

impl EncoderConfig {
    pub fn resnet18() -> Self {
        EncoderConfig {
            variant: EncoderVariant::Resnet18,
            input_channels: 3,
            stage_channels: vec![64, 128, 256, 512],
            blocks_per_stage: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.len() < 2 {
            return Err(Error::value("encoder_config", "need at least 2 stages"));
        }
        if !self.stage_channels.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::value(
                "encoder_config",
                format!("stage channels must strictly increase: {:?}", self.stage_channels),
            ));
        }
        if self.blocks_per_stage == 0 || self.input_channels == 0 {
            return Err(Error::value(
                "encoder_config",
                "blocks_per_stage and input_channels must be positive",
            ));
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.stage_channels.len()
    }

    /// Input dims must be divisible by this for a clean decode.
    pub fn required_divisor(&self) -> usize {
        1 << (self.stages() + 1)
    }
}

/// Which optional components of the network are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationFlags {
    pub sim_loss: bool,
    pub deep_supervision: bool,
    pub sca: bool,
    pub ssa: bool,
    pub flow: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags::full()
    }
}

impl AblationFlags {
    /// Plain Siamese encoder-decoder, output supervision only.
    pub fn baseline() -> Self {
        AblationFlags {
            sim_loss: false,
            deep_supervision: false,
            sca: false,
            ssa: false,
            flow: false,
        }
    }

    /// Similarity loss + deep supervision, no attention.
    pub fn sim_ds() -> Self {
        AblationFlags {
            sim_loss: true,
            deep_supervision: true,
            sca: false,
            ssa: false,
            flow: false,
        }
    }

    /// Everything on.
    pub fn full() -> Self {
        AblationFlags {
            sim_loss: true,
            deep_supervision: true,
            sca: true,
            ssa: true,
            flow: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.flow && !(self.sca || self.ssa) {
            return Err(Error::value(
                "ablation_flags",
                "flow requires sca or ssa to be enabled",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Feed constant 0.5 maps as the missing flow inputs of the deepest
    /// stage, keeping every stage's attention convs the same arity. When
    /// false the deepest stage omits those input channels instead.
    pub stage0_flow_neutral: bool,
    /// Apply the channel gate to the DSA-weighted concatenation (the same
    /// tensor that was pooled); when false, gate the raw concatenation.
    pub sca_gate_weighted: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            stage0_flow_neutral: true,
            sca_gate_weighted: true,
        }
    }
}

struct ScaBlockParams {
    dsa_conv: Conv2dLayer,
    mlp1: LinearLayer,
    mlp2: LinearLayer,
}

struct SsaBlockParams {
    conv: Conv2dLayer,
}

struct DecoderStage {
    sca: Option<ScaBlockParams>,
    fuse1_conv: Conv2dLayer,
    fuse1_bn: BatchNormLayer,
    fuse2_conv: Conv2dLayer,
    fuse2_bn: BatchNormLayer,
    ssa: Option<SsaBlockParams>,
    aux: Option<Conv2dLayer>,
}

/// Per-component parameter totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParamCounts {
    pub encoder: usize,
    pub fusion: usize,
    pub sca: usize,
    pub ssa: usize,
    pub heads: usize,
    pub total: usize,
}

/// One forward pass worth of graph handles.
pub struct ForwardOutput<S: Scalar> {
    pub final_logits: VarId,
    /// Deep-supervision heads, deepest stage first; empty when disabled.
    pub aux_logits: Vec<VarId>,
    /// Deepest encoder features of (t1, t2) for the contrastive term.
    pub deepest: (VarId, VarId),
    pub attention: AttentionState<S>,
    /// Tape handles of every parameter, in registry order; where the
    /// trainer reads gradients after backward.
    pub param_vars: Vec<VarId>,
}

pub struct SaanModel<S: Scalar> {
    pub config: ModelConfig,
    pub flags: AblationFlags,
    params: NamedTensors<S>,
    bufs: NamedTensors<S>,
    encoder: Encoder,
    decoder: Vec<DecoderStage>,
    head: Conv2dLayer,
}

impl<S: Scalar> SaanModel<S> {
    pub fn new(config: ModelConfig, flags: AblationFlags, seed: u64) -> Result<Self> {
        config.encoder.validate()?;
        flags.validate()?;
        let mut rng = Rng::from_seed(seed);
        let mut params = NamedTensors::new();
        let mut bufs = NamedTensors::new();

        let encoder = Encoder::build(&config.encoder, &mut params, &mut bufs, &mut rng);

        let stages = config.encoder.stages();
        let chans = &config.encoder.stage_channels;
        let mut decoder = Vec::with_capacity(stages);
        for i in 0..stages {
            let enc_c = chans[stages - 1 - i];
            let prev_c = if i == 0 { 0 } else { chans[stages - i] };
            let ccat = 2 * enc_c + prev_c;
            let name = format!("decoder.stage{i}");

            let sca = flags.sca.then(|| {
                // Flow adds the transmitted attention map as an extra input
                // channel; the deepest stage only has one when it is fed a
                // neutral constant.
                let flow_ch = usize::from(flags.flow && (i > 0 || config.stage0_flow_neutral));
                let hidden = (ccat / 4).max(8);
                ScaBlockParams {
                    dsa_conv: Conv2dLayer::new(
                        &mut params,
                        &format!("{name}.sca.dsa_conv"),
                        1 + flow_ch,
                        1,
                        7,
                        1,
                        3,
                        true,
                        &mut rng,
                    ),
                    mlp1: LinearLayer::new(&mut params, &format!("{name}.sca.mlp1"), ccat, hidden, &mut rng),
                    mlp2: LinearLayer::new(&mut params, &format!("{name}.sca.mlp2"), hidden, ccat, &mut rng),
                }
            });

            let fuse1_conv = Conv2dLayer::new(&mut params, &format!("{name}.fuse1.conv"), ccat, enc_c, 3, 1, 1, false, &mut rng);
            let fuse1_bn = BatchNormLayer::new(&mut params, &mut bufs, &format!("{name}.fuse1.bn"), enc_c);
            let fuse2_conv = Conv2dLayer::new(&mut params, &format!("{name}.fuse2.conv"), enc_c, enc_c, 3, 1, 1, false, &mut rng);
            let fuse2_bn = BatchNormLayer::new(&mut params, &mut bufs, &format!("{name}.fuse2.bn"), enc_c);

            let ssa = flags.ssa.then(|| {
                let flow_ch = usize::from(flags.flow && (i > 0 || config.stage0_flow_neutral));
                let dsa_ch = usize::from(flags.sca);
                SsaBlockParams {
                    conv: Conv2dLayer::new(
                        &mut params,
                        &format!("{name}.ssa.conv"),
                        2 + flow_ch + dsa_ch,
                        1,
                        7,
                        1,
                        3,
                        true,
                        &mut rng,
                    ),
                }
            });

            let aux = flags.deep_supervision.then(|| {
                Conv2dLayer::new(&mut params, &format!("{name}.aux"), enc_c, 1, 1, 1, 0, true, &mut rng)
            });

            decoder.push(DecoderStage {
                sca,
                fuse1_conv,
                fuse1_bn,
                fuse2_conv,
                fuse2_bn,
                ssa,
                aux,
            });
        }

        let head = Conv2dLayer::new(&mut params, "head", chans[0], 1, 1, 1, 0, true, &mut rng);

        Ok(SaanModel {
            config,
            flags,
            params,
            bufs,
            encoder,
            decoder,
            head,
        })
    }

    pub fn params(&self) -> &NamedTensors<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NamedTensors<S> {
        &mut self.params
    }

    pub fn buffers(&self) -> &NamedTensors<S> {
        &self.bufs
    }

    pub fn buffers_mut(&mut self) -> &mut NamedTensors<S> {
        &mut self.bufs
    }

    pub fn cast<T: Scalar>(&self) -> SaanModel<T> {
        let mut other = SaanModel::<T>::new(self.config.clone(), self.flags, 0).expect("same config");
        for (dst, src) in other.params.tensors_mut().iter_mut().zip(self.params.tensors()) {
            *dst = src.cast::<T>();
        }
        for (dst, src) in other.bufs.tensors_mut().iter_mut().zip(self.bufs.tensors()) {
            *dst = src.cast::<T>();
        }
        other
    }

    /// Register every parameter on the tape, in declaration order. With
    /// `trainable`, gradients will be populated by `backward`.
    fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> Vec<VarId> {
        self.params
            .tensors()
            .iter()
            .map(|t| tape.leaf(t.clone().requires_grad(trainable)))
            .collect()
    }

    fn check_input(&self, t: &Tensor<S>) -> Result<()> {
        let (_, c, h, w) = t.dims4()?;
        if c != self.config.encoder.input_channels {
            return Err(Error::shape(
                "forward",
                format!("expected {} input channels, got {c}", self.config.encoder.input_channels),
            ));
        }
        let div = self.config.encoder.required_divisor();
        if h % div != 0 || w % div != 0 {
            return Err(Error::shape(
                "forward",
                format!("input {h}x{w} not divisible by {div}"),
            ));
        }
        Ok(())
    }

    /// Run the shared encoder over both time points. Swapping the inputs
    /// swaps the outputs exactly: both passes use the same parameters.
    pub fn encode_pair(
        &mut self,
        tape: &mut Tape<S>,
        t1: &Tensor<S>,
        t2: &Tensor<S>,
        training: bool,
    ) -> Result<(Vec<VarId>, Vec<VarId>)> {
        self.check_input(t1)?;
        self.check_input(t2)?;
        if t1.shape() != t2.shape() {
            return Err(Error::shape(
                "encode_pair",
                format!("{:?} vs {:?}", t1.shape(), t2.shape()),
            ));
        }
        let bound = self.bind(tape, training);
        let x1 = tape.constant(t1.clone());
        let x2 = tape.constant(t2.clone());
        let p1 = self.encoder.forward(tape, &bound, &mut self.bufs, x1, training)?;
        let p2 = self.encoder.forward(tape, &bound, &mut self.bufs, x2, training)?;
        Ok((p1, p2))
    }

    /// Full pass: encode both images, decode with attention, return
    /// final-resolution logits plus everything the objective needs.
    pub fn forward(
        &mut self,
        tape: &mut Tape<S>,
        t1: &Tensor<S>,
        t2: &Tensor<S>,
        training: bool,
    ) -> Result<ForwardOutput<S>> {
        self.check_input(t1)?;
        self.check_input(t2)?;
        if t1.shape() != t2.shape() {
            return Err(Error::shape(
                "forward",
                format!("{:?} vs {:?}", t1.shape(), t2.shape()),
            ));
        }
        let bound = self.bind(tape, training);
        let x1 = tape.constant(t1.clone());
        let x2 = tape.constant(t2.clone());
        let pyr1 = self.encoder.forward(tape, &bound, &mut self.bufs, x1, training)?;
        let pyr2 = self.encoder.forward(tape, &bound, &mut self.bufs, x2, training)?;
        let stages = self.config.encoder.stages();
        let deepest = (pyr1[stages - 1], pyr2[stages - 1]);

        let mut aux_logits = Vec::new();
        let mut attention = AttentionState::default();
        let mut prev_f: Option<VarId> = None;
        let mut prev_dsa: Option<VarId> = None;
        let mut prev_as: Option<VarId> = None;

        for i in 0..stages {
            let f1 = pyr1[stages - 1 - i];
            let f2 = pyr2[stages - 1 - i];
            let f_prev = match prev_f {
                Some(f) => Some(tape.upsample2x_bilinear(f)?),
                None => None,
            };
            let (n, _, h, w) = tape.value(f1).dims4()?;

            // flow inputs arrive at this stage's resolution
            let neutral = |tape: &mut Tape<S>| {
                tape.constant(Tensor::full(&[n, 1, h, w], S::of(0.5)))
            };
            let dsa_prev = if self.flags.flow && self.flags.sca {
                match prev_dsa {
                    Some(d) => Some(tape.upsample2x_bilinear(d)?),
                    None if self.config.stage0_flow_neutral => Some(neutral(tape)),
                    None => None,
                }
            } else {
                None
            };
            let as_prev = if self.flags.flow && self.flags.ssa {
                match prev_as {
                    Some(a) => Some(tape.upsample2x_bilinear(a)?),
                    None if self.config.stage0_flow_neutral => Some(neutral(tape)),
                    None => None,
                }
            } else {
                None
            };

            let stage = &self.decoder[i];
            let mut maps = StageMaps::default();

            let fused_in = if let Some(sca) = &stage.sca {
                let weights = ScaWeights {
                    dsa_conv_w: bound[sca.dsa_conv.weight.0],
                    dsa_conv_b: bound[sca.dsa_conv.bias.unwrap().0],
                    mlp1_w: bound[sca.mlp1.weight.0],
                    mlp1_b: bound[sca.mlp1.bias.0],
                    mlp2_w: bound[sca.mlp2.weight.0],
                    mlp2_b: bound[sca.mlp2.bias.0],
                };
                let out = sca_block(
                    tape,
                    f1,
                    f2,
                    f_prev,
                    dsa_prev,
                    &weights,
                    self.config.sca_gate_weighted,
                )?;
                maps.sim = Some(tape.value(out.sim).clone());
                maps.dsa = Some(tape.value(out.dsa).clone());
                maps.a_c = Some(tape.value(out.a_c).clone());
                // feeds this stage's spatial gate and, upsampled, the next
                // stage's gate conv
                prev_dsa = Some(out.dsa);
                out.attended
            } else {
                let mut parts = vec![f1, f2];
                parts.extend(f_prev);
                tape.concat(&parts, 1)?
            };

            // two successive conv+bn+relu modules compress Ccat to enc_c
            let c1 = stage.fuse1_conv.forward(tape, &bound, fused_in)?;
            let b1 = stage.fuse1_bn.forward(tape, &bound, &mut self.bufs, c1, training)?;
            let r1 = tape.relu(b1);
            let c2 = stage.fuse2_conv.forward(tape, &bound, r1)?;
            let b2 = stage.fuse2_bn.forward(tape, &bound, &mut self.bufs, c2, training)?;
            let fused = tape.relu(b2);

            let f_i = if let Some(ssa) = &stage.ssa {
                let weights = SsaWeights {
                    conv_w: bound[ssa.conv.weight.0],
                    conv_b: bound[ssa.conv.bias.unwrap().0],
                };
                let dsa_for_ssa = if self.flags.sca { prev_dsa } else { None };
                let (f_i, a_s) = ssa_block(tape, fused, as_prev, dsa_for_ssa, &weights)?;
                maps.a_s = Some(tape.value(a_s).clone());
                prev_as = Some(a_s);
                f_i
            } else {
                fused
            };

            if let Some(aux) = &stage.aux {
                aux_logits.push(aux.forward(tape, &bound, f_i)?);
            }
            attention.stages.push(maps);
            prev_f = Some(f_i);
        }

        // one 2x upsample recovers the stem stride, then the 1x1 head
        let last = prev_f.expect("at least one decoder stage");
        let up = tape.upsample2x_bilinear(last)?;
        let final_logits = self.head.forward(tape, &bound, up)?;

        Ok(ForwardOutput {
            final_logits,
            aux_logits,
            deepest,
            attention,
            param_vars: bound,
        })
    }

    /// Exact parameter totals by component, from enumeration.
    pub fn param_count(&self) -> ParamCounts {
        let mut counts = ParamCounts::default();
        for (name, t) in self.params.iter() {
            let n = t.len();
            counts.total += n;
            if name.starts_with("encoder.") {
                counts.encoder += n;
            } else if name.contains(".sca.") {
                counts.sca += n;
            } else if name.contains(".ssa.") {
                counts.ssa += n;
            } else if name.contains(".fuse") {
                counts.fusion += n;
            } else if name.contains(".aux") || name.starts_with("head") {
                counts.heads += n;
            }
        }
        counts
    }
}
