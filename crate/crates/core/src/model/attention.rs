//! Similarity-guided channel and spatial attention.
//!
//! The channel block turns the per-pixel similarity between the two
//! encoder features (optionally fused with the attention transmitted from
//! the coarser stage) into a pixel gate, applies it to the concatenated
//! features, and derives a channel gate from shared-MLP encodings of the
//! global average- and max-pooled result. The spatial block gates the
//! fused decoder features from their per-pixel channel mean/max plus the
//! transmitted maps.

use crate::error::{Error, Result};
use crate::similarity::cosine_similarity_map;
use crate::tensor::{ChanReduce, PoolMode, Scalar, Tape, VarId};

/// Bound parameter handles for one channel-attention block.
pub struct ScaWeights {
    pub dsa_conv_w: VarId,
    pub dsa_conv_b: VarId,
    pub mlp1_w: VarId,
    pub mlp1_b: VarId,
    pub mlp2_w: VarId,
    pub mlp2_b: VarId,
}

pub struct ScaOutput {
    /// Gated concatenation `[f1, f2, f_prev]`, ready for fusion.
    pub attended: VarId,
    pub sim: VarId,
    pub dsa: VarId,
    /// Channel gate, `[N, Ccat, 1, 1]`.
    pub a_c: VarId,
}

/// Channel attention over the concatenated stage inputs.
///
/// `dsa_prev` is the coarser stage's pixel gate (already upsampled); when
/// absent the gate conv sees the similarity map alone. `gate_weighted`
/// picks which tensor the channel gate scales: the DSA-weighted
/// concatenation (also what gets pooled) or the raw one.
pub fn sca_block<S: Scalar>(
    tape: &mut Tape<S>,
    f1: VarId,
    f2: VarId,
    f_prev: Option<VarId>,
    dsa_prev: Option<VarId>,
    w: &ScaWeights,
    gate_weighted: bool,
) -> Result<ScaOutput> {
    let (n, _, h, wd) = tape.value(f1).dims4()?;
    if let Some(p) = f_prev {
        let (pn, _, ph, pw) = tape.value(p).dims4()?;
        if (pn, ph, pw) != (n, h, wd) {
            return Err(Error::shape(
                "sca_block",
                format!("f_prev {:?} does not match stage {h}x{wd}", tape.value(p).shape()),
            ));
        }
    }

    let sim = cosine_similarity_map(tape, f1, f2)?;
    let dsa_in = match dsa_prev {
        Some(prev) => tape.concat(&[sim, prev], 1)?,
        None => sim,
    };
    let dsa_logits = tape.conv2d(dsa_in, w.dsa_conv_w, Some(w.dsa_conv_b), 1, 3)?;
    let dsa = tape.sigmoid(dsa_logits);

    let mut parts = vec![f1, f2];
    parts.extend(f_prev);
    let cat_raw = tape.concat(&parts, 1)?;
    let weighted = tape.mul(cat_raw, dsa)?;
    let ccat = tape.value(cat_raw).shape()[1];

    let shared_mlp = |tape: &mut Tape<S>, pooled: VarId| -> Result<VarId> {
        let flat = tape.reshape(pooled, &[n, ccat])?;
        let h1 = tape.linear(flat, w.mlp1_w, w.mlp1_b)?;
        let r = tape.relu(h1);
        tape.linear(r, w.mlp2_w, w.mlp2_b)
    };
    let gap = tape.global_pool(weighted, PoolMode::Avg)?;
    let gmp = tape.global_pool(weighted, PoolMode::Max)?;
    let va = shared_mlp(tape, gap)?;
    let vm = shared_mlp(tape, gmp)?;
    let summed = tape.add(va, vm)?;
    let gate_flat = tape.sigmoid(summed);
    let a_c = tape.reshape(gate_flat, &[n, ccat, 1, 1])?;

    let target = if gate_weighted { weighted } else { cat_raw };
    let attended = tape.mul(target, a_c)?;
    Ok(ScaOutput {
        attended,
        sim,
        dsa,
        a_c,
    })
}

/// Bound parameter handles for one spatial-attention block.
pub struct SsaWeights {
    pub conv_w: VarId,
    pub conv_b: VarId,
}

/// Spatial attention over the fused stage features.
///
/// The gate conv sees the per-pixel channel mean and max of `fused`, then
/// the transmitted spatial map and the stage's pixel gate when present.
/// Returns the gated features and the gate itself.
pub fn ssa_block<S: Scalar>(
    tape: &mut Tape<S>,
    fused: VarId,
    a_s_prev: Option<VarId>,
    dsa: Option<VarId>,
    w: &SsaWeights,
) -> Result<(VarId, VarId)> {
    tape.value(fused).dims4()?;
    let mean = tape.channel_reduce(fused, ChanReduce::Mean)?;
    let mx = tape.channel_reduce(fused, ChanReduce::Max)?;
    let mut parts = vec![mean, mx];
    parts.extend(a_s_prev);
    parts.extend(dsa);
    let cat = tape.concat(&parts, 1)?;
    let logits = tape.conv2d(cat, w.conv_w, Some(w.conv_b), 1, 3)?;
    let a_s = tape.sigmoid(logits);
    let gated = tape.mul(fused, a_s)?;
    Ok((gated, a_s))
}
