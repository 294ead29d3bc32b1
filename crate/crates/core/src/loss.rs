//! Segmentation losses and the weighted training objective.
//!
//! The output head is scored by dice + binary cross-entropy; each decoder
//! stage with deep supervision gets the same pair against a
//! majority-downsampled mask; the contrastive term acts on the deepest
//! encoder features. The total is
//! `L = L_seg + w * L_con + w * sum_i L_aux_i` with disabled components
//! dropped entirely.

use crate::error::{Error, Result};
use crate::model::AblationFlags;
use crate::similarity::{contrastive_loss, downsample_labels, ContrastiveConfig};
use crate::tensor::{Scalar, Tape, Tensor, VarId};

#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    /// Weight of the auxiliary and contrastive terms.
    pub w: f64,
    pub dice_smooth: f64,
    pub prediction_threshold: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            w: 0.3,
            dice_smooth: 1.0,
            prediction_threshold: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w < 0.0 {
            return Err(Error::value("loss_config", "w must be >= 0"));
        }
        if self.dice_smooth <= 0.0 {
            return Err(Error::value("loss_config", "dice_smooth must be > 0"));
        }
        if !(self.prediction_threshold > 0.0 && self.prediction_threshold < 1.0) {
            return Err(Error::value("loss_config", "threshold must be in (0,1)"));
        }
        Ok(())
    }
}

/// Soft dice loss on logits: `1 - (2*sum(p*g) + s) / (sum(p) + sum(g) + s)`.
pub fn dice_loss<S: Scalar>(
    tape: &mut Tape<S>,
    logits: VarId,
    targets: &Tensor<S>,
    smooth: f64,
) -> Result<VarId> {
    if tape.value(logits).shape() != targets.shape() {
        return Err(Error::shape(
            "dice_loss",
            format!("{:?} vs {:?}", tape.value(logits).shape(), targets.shape()),
        ));
    }
    let t = tape.constant(targets.clone());
    let p = tape.sigmoid(logits);
    let inter = tape.mul(p, t)?;
    let inter_sum = tape.sum_all(inter);
    let num = tape.affine(inter_sum, S::of(2.0), S::of(smooth));
    let p_sum = tape.sum_all(p);
    let t_sum = tape.sum_all(t);
    let den_raw = tape.add(p_sum, t_sum)?;
    let den = tape.affine(den_raw, S::ONE, S::of(smooth));
    let frac = tape.div(num, den)?;
    Ok(tape.affine(frac, S::of(-1.0), S::ONE))
}

/// Mean binary cross-entropy on logits.
pub fn cross_entropy_loss<S: Scalar>(
    tape: &mut Tape<S>,
    logits: VarId,
    targets: &Tensor<S>,
) -> Result<VarId> {
    let t = tape.constant(targets.clone());
    tape.bce_with_logits(logits, t)
}

/// Stage objective: dice + cross-entropy at the stage's resolution.
pub fn aux_loss<S: Scalar>(
    tape: &mut Tape<S>,
    stage_logits: VarId,
    stage_targets: &Tensor<S>,
    smooth: f64,
) -> Result<VarId> {
    let d = dice_loss(tape, stage_logits, stage_targets, smooth)?;
    let c = cross_entropy_loss(tape, stage_logits, stage_targets)?;
    tape.add(d, c)
}

/// Scalar values of each objective component, for logging.
#[derive(Clone, Debug, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub seg: f64,
    pub con: f64,
    pub aux_sum: f64,
    pub aux_per_stage: Vec<f64>,
}

pub struct TotalLoss {
    pub var: VarId,
    pub breakdown: LossBreakdown,
}

/// Assemble the full objective from a forward pass.
///
/// `aux_logits` are per-stage heads, deepest first; `deepest` are the
/// encoder features the contrastive term compares. Components disabled by
/// `flags` contribute neither value nor gradient.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<S: Scalar>(
    tape: &mut Tape<S>,
    final_logits: VarId,
    aux_logits: &[VarId],
    deepest: Option<(VarId, VarId)>,
    y: &Tensor<S>,
    flags: &AblationFlags,
    cfg: &LossConfig,
    contrastive: &ContrastiveConfig,
) -> Result<TotalLoss> {
    cfg.validate()?;
    let (_, _, h, _) = y.dims4()?;
    let mut breakdown = LossBreakdown::default();

    let seg = aux_loss(tape, final_logits, y, cfg.dice_smooth)?;
    breakdown.seg = tape.value(seg).item().to_f64();
    let mut total = seg;
    let w = S::of(cfg.w);

    if flags.sim_loss {
        let (f1, f2) = deepest.ok_or_else(|| {
            Error::value("total_loss", "sim_loss enabled but no deepest features given")
        })?;
        let (_, _, hd, _) = tape.value(f1).dims4()?;
        let labels = downsample_labels(y, h / hd)?;
        let con = contrastive_loss(tape, f1, f2, &labels, contrastive)?;
        breakdown.con = tape.value(con).item().to_f64();
        let weighted = tape.affine(con, w, S::ZERO);
        total = tape.add(total, weighted)?;
    }

    if flags.deep_supervision {
        for &logits in aux_logits {
            let (_, _, hs, _) = tape.value(logits).dims4()?;
            if h % hs != 0 {
                return Err(Error::shape(
                    "total_loss",
                    format!("stage height {hs} does not divide label height {h}"),
                ));
            }
            let stage_y = downsample_labels(y, h / hs)?;
            let a = aux_loss(tape, logits, &stage_y, cfg.dice_smooth)?;
            let av = tape.value(a).item().to_f64();
            breakdown.aux_per_stage.push(av);
            breakdown.aux_sum += av;
            let weighted = tape.affine(a, w, S::ZERO);
            total = tape.add(total, weighted)?;
        }
    }

    breakdown.total = tape.value(total).item().to_f64();
    Ok(TotalLoss {
        var: total,
        breakdown,
    })
}
