//! Residual Siamese encoder. A stride-2 stem is followed by one stage per
//! configured width; the first stage keeps the stem resolution, every later
//! stage halves it. Both time points run through identical parameters.

use super::layers::{BatchNormLayer, Conv2dLayer, NamedTensors};
use super::{EncoderConfig, EncoderVariant};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tape, VarId};

struct ResBlock {
    conv1: Conv2dLayer,
    bn1: BatchNormLayer,
    conv2: Conv2dLayer,
    bn2: BatchNormLayer,
    skip: Option<(Conv2dLayer, BatchNormLayer)>,
}

impl ResBlock {
    fn new<S: Scalar>(
        params: &mut NamedTensors<S>,
        bufs: &mut NamedTensors<S>,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Self {
        let conv1 = Conv2dLayer::new(params, &format!("{name}.conv1"), cin, cout, 3, stride, 1, false, rng);
        let bn1 = BatchNormLayer::new(params, bufs, &format!("{name}.bn1"), cout);
        let conv2 = Conv2dLayer::new(params, &format!("{name}.conv2"), cout, cout, 3, 1, 1, false, rng);
        let bn2 = BatchNormLayer::new(params, bufs, &format!("{name}.bn2"), cout);
        let skip = (cin != cout || stride != 1).then(|| {
            (
                Conv2dLayer::new(params, &format!("{name}.skip.conv"), cin, cout, 1, stride, 0, false, rng),
                BatchNormLayer::new(params, bufs, &format!("{name}.skip.bn"), cout),
            )
        });
        ResBlock {
            conv1,
            bn1,
            conv2,
            bn2,
            skip,
        }
    }

    fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &[VarId],
        bufs: &mut NamedTensors<S>,
        x: VarId,
        training: bool,
    ) -> Result<VarId> {
        let c1 = self.conv1.forward(tape, bound, x)?;
        let b1 = self.bn1.forward(tape, bound, bufs, c1, training)?;
        let r1 = tape.relu(b1);
        let c2 = self.conv2.forward(tape, bound, r1)?;
        let b2 = self.bn2.forward(tape, bound, bufs, c2, training)?;
        let shortcut = match &self.skip {
            Some((conv, bn)) => {
                let s = conv.forward(tape, bound, x)?;
                bn.forward(tape, bound, bufs, s, training)?
            }
            None => x,
        };
        let sum = tape.add(b2, shortcut)?;
        Ok(tape.relu(sum))
    }
}

pub(crate) struct Encoder {
    stem_conv: Conv2dLayer,
    stem_bn: BatchNormLayer,
    stages: Vec<Vec<ResBlock>>,
}

impl Encoder {
    pub fn build<S: Scalar>(
        cfg: &EncoderConfig,
        params: &mut NamedTensors<S>,
        bufs: &mut NamedTensors<S>,
        rng: &mut Rng,
    ) -> Self {
        let stem_k = match cfg.variant {
            EncoderVariant::Mini => 3,
            EncoderVariant::Resnet18 => 7,
        };
        let stem_conv = Conv2dLayer::new(
            params,
            "encoder.stem.conv",
            cfg.input_channels,
            cfg.stage_channels[0],
            stem_k,
            2,
            stem_k / 2,
            false,
            rng,
        );
        let stem_bn = BatchNormLayer::new(params, bufs, "encoder.stem.bn", cfg.stage_channels[0]);

        let mut stages = Vec::with_capacity(cfg.stages());
        let mut cin = cfg.stage_channels[0];
        for (s, &cout) in cfg.stage_channels.iter().enumerate() {
            let mut blocks = Vec::with_capacity(cfg.blocks_per_stage);
            for b in 0..cfg.blocks_per_stage {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let in_c = if b == 0 { cin } else { cout };
                blocks.push(ResBlock::new(
                    params,
                    bufs,
                    &format!("encoder.stage{s}.block{b}"),
                    in_c,
                    cout,
                    stride,
                    rng,
                ));
            }
            stages.push(blocks);
            cin = cout;
        }
        Encoder {
            stem_conv,
            stem_bn,
            stages,
        }
    }

    /// One pyramid per call: the outputs of every stage, shallowest first.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &[VarId],
        bufs: &mut NamedTensors<S>,
        x: VarId,
        training: bool,
    ) -> Result<Vec<VarId>> {
        let s = self.stem_conv.forward(tape, bound, x)?;
        let s = self.stem_bn.forward(tape, bound, bufs, s, training)?;
        let mut cur = tape.relu(s);
        let mut pyramid = Vec::with_capacity(self.stages.len());
        for blocks in &self.stages {
            for block in blocks {
                cur = block.forward(tape, bound, bufs, cur, training)?;
            }
            pyramid.push(cur);
        }
        Ok(pyramid)
    }
}
