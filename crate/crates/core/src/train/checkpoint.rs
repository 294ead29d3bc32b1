//! Binary checkpoints.
//!
//! Layout: magic `SAANCKPT`, u32 LE format version, u32 LE tensor count,
//! then per tensor `u16 name-length, UTF-8 name, u8 ndim, ndim x u32 dims,
//! little-endian f32 payload`, and a trailing u64 FNV-1a checksum of all
//! preceding bytes. Everything the run needs to resume lives in named
//! tensors: parameters (`param.*`), batchnorm buffers (`buf.*`), optimizer
//! moments (`adam.*`), config echo (`cfg.*`) and loop state (`state.*`).
//! 64-bit values (seeds, RNG state, f64 hyperparameters via their bit
//! pattern) are stored as four 16-bit limbs so the f32 payload carries
//! them exactly.

use super::adam::AdamState;
use super::{TrainConfig, ValMetric};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::{
    AblationFlags, EncoderConfig, EncoderVariant, ModelConfig, NamedTensors, SaanModel,
};
use crate::similarity::{ContrastiveConfig, Reduction};
use crate::tensor::Tensor;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"SAANCKPT";
pub const VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn u64_to_limbs(v: u64) -> [f32; 4] {
    [
        (v & 0xffff) as f32,
        ((v >> 16) & 0xffff) as f32,
        ((v >> 32) & 0xffff) as f32,
        ((v >> 48) & 0xffff) as f32,
    ]
}

fn limbs_to_u64(l: &[f32]) -> Result<u64> {
    if l.len() != 4 {
        return Err(Error::value("checkpoint", "u64 field needs 4 limbs"));
    }
    let mut v = 0u64;
    for (i, &f) in l.iter().enumerate() {
        if !(0.0..=65535.0).contains(&f) || f.fract() != 0.0 {
            return Err(Error::value("checkpoint", format!("bad limb {f}")));
        }
        v |= (f as u64) << (16 * i);
    }
    Ok(v)
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: Vec<(String, Tensor<f32>)>,
    pub bufs: Vec<(String, Tensor<f32>)>,
    pub adam_m: Vec<Tensor<f32>>,
    pub adam_v: Vec<Tensor<f32>>,
    pub adam_step: u64,
    pub rng_state: [u64; 4],
    pub epoch: u64,
    pub best_f1: f64,
}

impl Checkpoint {
    pub fn capture(
        model: &SaanModel<f32>,
        adam: &AdamState<f32>,
        config: &TrainConfig,
        rng_state: [u64; 4],
        epoch: u64,
        best_f1: f64,
    ) -> Checkpoint {
        Checkpoint {
            config: config.clone(),
            params: model
                .params()
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
            bufs: model
                .buffers()
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
            adam_m: adam.m.clone(),
            adam_v: adam.v.clone(),
            adam_step: adam.step,
            rng_state,
            epoch,
            best_f1,
        }
    }

    /// Copy parameters and buffers into an existing model, validating that
    /// names and shapes agree exactly.
    pub fn apply_to(&self, model: &mut SaanModel<f32>) -> Result<()> {
        apply_named(&self.params, model.params_mut(), "parameter")?;
        apply_named(&self.bufs, model.buffers_mut(), "buffer")?;
        Ok(())
    }

    /// Rebuild the model this checkpoint was captured from.
    pub fn restore_model(&self) -> Result<SaanModel<f32>> {
        let mut model = SaanModel::new(
            self.config.model.clone(),
            self.config.flags,
            self.config.seed,
        )?;
        self.apply_to(&mut model)?;
        Ok(model)
    }

    pub fn restore_adam(&self) -> AdamState<f32> {
        AdamState {
            m: self.adam_m.clone(),
            v: self.adam_v.clone(),
            step: self.adam_step,
        }
    }

    fn to_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out: Vec<(String, Tensor<f32>)> = Vec::new();
        let mut f64t = |name: &str, v: f64| {
            out.push((
                name.to_string(),
                Tensor::from_vec(&[4], u64_to_limbs(v.to_bits()).to_vec()),
            ));
        };
        let c = &self.config;
        f64t("cfg.lr0", c.lr0);
        f64t("cfg.weight_decay", c.weight_decay);
        f64t("cfg.plateau_factor", c.plateau_factor);
        f64t("cfg.min_lr", c.min_lr);
        f64t("cfg.w", c.loss.w);
        f64t("cfg.dice_smooth", c.loss.dice_smooth);
        f64t("cfg.prediction_threshold", c.loss.prediction_threshold);
        f64t("cfg.margin", c.contrastive.margin);
        f64t("cfg.sqrt_eps", c.contrastive.sqrt_eps);
        let mut scalar = |name: &str, v: f32| {
            out.push((name.to_string(), Tensor::from_vec(&[1], vec![v])));
        };
        scalar("cfg.batch_size", c.batch_size as f32);
        scalar("cfg.plateau_patience", c.plateau_patience as f32);
        scalar("cfg.max_epochs", c.max_epochs as f32);
        scalar(
            "cfg.reduction",
            match c.contrastive.reduction {
                Reduction::Mean => 0.0,
                Reduction::Sum => 1.0,
            },
        );
        scalar(
            "cfg.variant",
            match c.model.encoder.variant {
                EncoderVariant::Mini => 0.0,
                EncoderVariant::Resnet18 => 1.0,
            },
        );
        scalar("cfg.input_channels", c.model.encoder.input_channels as f32);
        scalar("cfg.blocks_per_stage", c.model.encoder.blocks_per_stage as f32);
        scalar("cfg.stage0_flow_neutral", c.model.stage0_flow_neutral as u8 as f32);
        scalar("cfg.sca_gate_weighted", c.model.sca_gate_weighted as u8 as f32);
        scalar(
            "cfg.val_metric",
            match c.val_metric {
                ValMetric::F1 => 0.0,
                ValMetric::PixelAccuracy => 1.0,
            },
        );
        scalar("cfg.decoupled_weight_decay", c.decoupled_weight_decay as u8 as f32);
        let f = c.flags;
        out.push((
            "cfg.flags".to_string(),
            Tensor::from_vec(
                &[5],
                [f.sim_loss, f.deep_supervision, f.sca, f.ssa, f.flow]
                    .iter()
                    .map(|&b| b as u8 as f32)
                    .collect(),
            ),
        ));
        out.push((
            "cfg.stage_channels".to_string(),
            Tensor::from_vec(
                &[c.model.encoder.stage_channels.len()],
                c.model.encoder.stage_channels.iter().map(|&v| v as f32).collect(),
            ),
        ));
        out.push((
            "cfg.seed".to_string(),
            Tensor::from_vec(&[4], u64_to_limbs(c.seed).to_vec()),
        ));

        out.push((
            "state.epoch".to_string(),
            Tensor::from_vec(&[4], u64_to_limbs(self.epoch).to_vec()),
        ));
        out.push((
            "state.best_f1".to_string(),
            Tensor::from_vec(&[4], u64_to_limbs(self.best_f1.to_bits()).to_vec()),
        ));
        out.push((
            "state.adam_step".to_string(),
            Tensor::from_vec(&[4], u64_to_limbs(self.adam_step).to_vec()),
        ));
        let mut rng_limbs = Vec::with_capacity(16);
        for s in self.rng_state {
            rng_limbs.extend_from_slice(&u64_to_limbs(s));
        }
        out.push(("state.rng".to_string(), Tensor::from_vec(&[16], rng_limbs)));

        for (n, t) in &self.params {
            out.push((format!("param.{n}"), t.clone()));
        }
        for (n, t) in &self.bufs {
            out.push((format!("buf.{n}"), t.clone()));
        }
        for ((m, v), (n, _)) in self.adam_m.iter().zip(&self.adam_v).zip(&self.params) {
            out.push((format!("adam.m.{n}"), m.clone()));
            out.push((format!("adam.v.{n}"), v.clone()));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors = self.to_tensors();
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in &tensors {
            let nb = name.as_bytes();
            buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            buf.extend_from_slice(nb);
            buf.push(t.shape().len() as u8);
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let checksum = fnv1a(&buf);
        buf.extend_from_slice(&checksum.to_le_bytes());
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let pstr = path.display().to_string();
        let bytes = std::fs::read(path)?;
        if bytes.len() < MAGIC.len() + 16 {
            return Err(Error::format(&pstr, "file too short", Some(bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::format(&pstr, "bad magic, expected SAANCKPT", Some(0)));
        }
        let body = &bytes[..bytes.len() - 8];
        let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        if fnv1a(body) != stored {
            return Err(Error::format(
                &pstr,
                "checksum mismatch (truncated or corrupted)",
                Some(bytes.len() - 8),
            ));
        }
        struct Cursor<'a> {
            body: &'a [u8],
            pos: usize,
            path: &'a str,
        }
        impl<'a> Cursor<'a> {
            fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
                if self.pos + n > self.body.len() {
                    return Err(Error::format(
                        self.path,
                        format!("truncated while reading {what}"),
                        Some(self.pos),
                    ));
                }
                let s = &self.body[self.pos..self.pos + n];
                self.pos += n;
                Ok(s)
            }
        }
        let mut cur = Cursor {
            body,
            pos: 8,
            path: &pstr,
        };
        let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::format(
                &pstr,
                format!("unsupported version {version}, expected {VERSION}"),
                Some(8),
            ));
        }
        let count = u32::from_le_bytes(cur.take(4, "tensor count")?.try_into().unwrap());
        let mut tensors: Vec<(String, Tensor<f32>)> = Vec::with_capacity(count as usize);
        for i in 0..count {
            let name_len = u16::from_le_bytes(
                cur.take(2, &format!("name length of tensor {i}"))?
                    .try_into()
                    .unwrap(),
            ) as usize;
            let name_pos = cur.pos;
            let name = String::from_utf8(cur.take(name_len, "tensor name")?.to_vec())
                .map_err(|_| Error::format(&pstr, "tensor name is not UTF-8", Some(name_pos)))?;
            let ndim = cur.take(1, &format!("rank of tensor '{name}'"))?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u32::from_le_bytes(
                    cur.take(4, &format!("dims of tensor '{name}'"))?
                        .try_into()
                        .unwrap(),
                ) as usize);
            }
            let n: usize = shape.iter().product();
            let raw = cur.take(4 * n, &format!("payload of tensor '{name}'"))?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor::from_vec(&shape, data)));
        }
        if cur.pos != body.len() {
            return Err(Error::format(&pstr, "trailing bytes after tensors", Some(cur.pos)));
        }
        Checkpoint::from_tensors(tensors, &pstr)
    }

    fn from_tensors(tensors: Vec<(String, Tensor<f32>)>, path: &str) -> Result<Checkpoint> {
        let find = |name: &str| -> Result<&Tensor<f32>> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::format(path, format!("missing tensor '{name}'"), None))
        };
        let f64v = |name: &str| -> Result<f64> {
            Ok(f64::from_bits(limbs_to_u64(find(name)?.data())?))
        };
        let scalar = |name: &str| -> Result<f32> { Ok(find(name)?.data()[0]) };

        let flags_t = find("cfg.flags")?;
        let fb: Vec<bool> = flags_t.data().iter().map(|&v| v != 0.0).collect();
        let flags = AblationFlags {
            sim_loss: fb[0],
            deep_supervision: fb[1],
            sca: fb[2],
            ssa: fb[3],
            flow: fb[4],
        };
        let config = TrainConfig {
            lr0: f64v("cfg.lr0")?,
            weight_decay: f64v("cfg.weight_decay")?,
            batch_size: scalar("cfg.batch_size")? as usize,
            plateau_patience: scalar("cfg.plateau_patience")? as usize,
            plateau_factor: f64v("cfg.plateau_factor")?,
            min_lr: f64v("cfg.min_lr")?,
            max_epochs: scalar("cfg.max_epochs")? as usize,
            seed: limbs_to_u64(find("cfg.seed")?.data())?,
            loss: LossConfig {
                w: f64v("cfg.w")?,
                dice_smooth: f64v("cfg.dice_smooth")?,
                prediction_threshold: f64v("cfg.prediction_threshold")?,
            },
            contrastive: ContrastiveConfig {
                margin: f64v("cfg.margin")?,
                sqrt_eps: f64v("cfg.sqrt_eps")?,
                reduction: if scalar("cfg.reduction")? == 0.0 {
                    Reduction::Mean
                } else {
                    Reduction::Sum
                },
            },
            flags,
            model: ModelConfig {
                encoder: EncoderConfig {
                    variant: if scalar("cfg.variant")? == 0.0 {
                        EncoderVariant::Mini
                    } else {
                        EncoderVariant::Resnet18
                    },
                    input_channels: scalar("cfg.input_channels")? as usize,
                    stage_channels: find("cfg.stage_channels")?
                        .data()
                        .iter()
                        .map(|&v| v as usize)
                        .collect(),
                    blocks_per_stage: scalar("cfg.blocks_per_stage")? as usize,
                },
                stage0_flow_neutral: scalar("cfg.stage0_flow_neutral")? != 0.0,
                sca_gate_weighted: scalar("cfg.sca_gate_weighted")? != 0.0,
            },
            val_metric: if scalar("cfg.val_metric")? == 0.0 {
                ValMetric::F1
            } else {
                ValMetric::PixelAccuracy
            },
            decoupled_weight_decay: scalar("cfg.decoupled_weight_decay")? != 0.0,
        };

        let epoch = limbs_to_u64(find("state.epoch")?.data())?;
        let best_f1 = f64::from_bits(limbs_to_u64(find("state.best_f1")?.data())?);
        let adam_step = limbs_to_u64(find("state.adam_step")?.data())?;
        let rng_limbs = find("state.rng")?.data().to_vec();
        let mut rng_state = [0u64; 4];
        for (i, s) in rng_state.iter_mut().enumerate() {
            *s = limbs_to_u64(&rng_limbs[4 * i..4 * i + 4])?;
        }

        let mut params = Vec::new();
        let mut bufs = Vec::new();
        for (n, t) in &tensors {
            if let Some(stripped) = n.strip_prefix("param.") {
                params.push((stripped.to_string(), t.clone()));
            } else if let Some(stripped) = n.strip_prefix("buf.") {
                bufs.push((stripped.to_string(), t.clone()));
            }
        }
        let mut adam_m = Vec::with_capacity(params.len());
        let mut adam_v = Vec::with_capacity(params.len());
        for (n, _) in &params {
            adam_m.push(find(&format!("adam.m.{n}"))?.clone());
            adam_v.push(find(&format!("adam.v.{n}"))?.clone());
        }

        Ok(Checkpoint {
            config,
            params,
            bufs,
            adam_m,
            adam_v,
            adam_step,
            rng_state,
            epoch,
            best_f1,
        })
    }
}

fn apply_named(
    src: &[(String, Tensor<f32>)],
    dst: &mut NamedTensors<f32>,
    what: &str,
) -> Result<()> {
    let mut missing = Vec::new();
    let mut unexpected: Vec<String> = src.iter().map(|(n, _)| n.clone()).collect();
    let dst_names: Vec<String> = dst.iter().map(|(n, _)| n.to_string()).collect();
    for name in &dst_names {
        match src.iter().find(|(n, _)| n == name) {
            Some((_, tensor)) => {
                unexpected.retain(|n| n != name);
                let id = dst.find(name).unwrap();
                let target = dst.get_mut(id);
                if target.shape() != tensor.shape() {
                    return Err(Error::shape(
                        "checkpoint",
                        format!(
                            "{what} '{name}': shape {:?} in file, model expects {:?}",
                            tensor.shape(),
                            target.shape()
                        ),
                    ));
                }
                let grad = target.requires_grad_flag();
                *target = tensor.clone().requires_grad(grad);
            }
            None => missing.push(name.clone()),
        }
    }
    if !missing.is_empty() || !unexpected.is_empty() {
        return Err(Error::value(
            "checkpoint",
            format!(
                "{what} mismatch; missing from file: {missing:?}; unexpected in file: {unexpected:?}"
            ),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Tape;
    use tempfile::tempdir;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                encoder: EncoderConfig {
                    stage_channels: vec![4, 8],
                    ..Default::default()
                },
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn capture_tiny() -> (Checkpoint, SaanModel<f32>) {
        let config = tiny_config();
        let model = SaanModel::new(config.model.clone(), config.flags, config.seed).unwrap();
        let adam = AdamState::new(model.params());
        let ckpt = Checkpoint::capture(&model, &adam, &config, [1, 2, 3, u64::MAX], 7, 0.625);
        (ckpt, model)
    }

    #[test]
    fn save_load_round_trips_all_fields() {
        let dir = tempdir().unwrap();
        let (ckpt, _) = capture_tiny();
        let path = dir.path().join("a.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.epoch, 7);
        assert_eq!(back.best_f1, 0.625);
        assert_eq!(back.rng_state, [1, 2, 3, u64::MAX]);
        assert_eq!(back.config.lr0, ckpt.config.lr0);
        assert_eq!(back.config.seed, ckpt.config.seed);
        assert_eq!(back.config.flags, ckpt.config.flags);
        assert_eq!(
            back.config.model.encoder.stage_channels,
            ckpt.config.model.encoder.stage_channels
        );
        assert_eq!(back.params.len(), ckpt.params.len());
        for ((na, ta), (nb, tb)) in back.params.iter().zip(&ckpt.params) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
    }

    #[test]
    fn restore_reproduces_forward_bitwise() {
        let dir = tempdir().unwrap();
        let (ckpt, mut model) = capture_tiny();
        let path = dir.path().join("b.ckpt");
        ckpt.save(&path).unwrap();
        let mut restored = Checkpoint::load(&path).unwrap().restore_model().unwrap();

        let mut rng = Rng::from_seed(5);
        let t1 = Tensor::<f32>::uniform(&[1, 3, 16, 16], 0.0, 1.0, &mut rng);
        let t2 = Tensor::<f32>::uniform(&[1, 3, 16, 16], 0.0, 1.0, &mut rng);
        let run = |m: &mut SaanModel<f32>| {
            let mut tape = Tape::new();
            let out = m.forward(&mut tape, &t1, &t2, false).unwrap();
            tape.value(out.final_logits).data().to_vec()
        };
        assert_eq!(run(&mut model), run(&mut restored));
    }

    #[test]
    fn truncated_file_names_the_failure() {
        let dir = tempdir().unwrap();
        let (ckpt, _) = capture_tiny();
        let path = dir.path().join("c.ckpt");
        ckpt.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = Checkpoint::load(&path).unwrap_err().to_string();
        assert!(err.contains("checksum") || err.contains("truncated"), "{err}");

        // corrupt one payload byte: checksum must catch it
        let mut corrupted = bytes.clone();
        let mid = corrupted.len() / 2;
        corrupted[mid] ^= 0xff;
        std::fs::write(&path, &corrupted).unwrap();
        let err = Checkpoint::load(&path).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
    }

    #[test]
    fn bad_magic_is_rejected_at_offset_zero() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxxxxxxxxxxxxxxxxx").unwrap();
        let err = Checkpoint::load(&path).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn loading_into_mismatched_flags_lists_parameter_names() {
        let (ckpt, _) = capture_tiny(); // full flags: has sca/ssa params
        let config = tiny_config();
        let mut smaller = SaanModel::<f32>::new(
            config.model.clone(),
            AblationFlags::baseline(),
            config.seed,
        )
        .unwrap();
        let err = ckpt.apply_to(&mut smaller).unwrap_err().to_string();
        assert!(err.contains("unexpected"), "{err}");
        assert!(err.contains("sca"), "{err}");
    }

    #[test]
    fn limb_codec_round_trips_extremes() {
        for v in [0u64, 1, 0xffff, 0x1_0000, u64::MAX, 0x1234_5678_9abc_def0] {
            assert_eq!(limbs_to_u64(&u64_to_limbs(v)).unwrap(), v);
        }
        for f in [0.0f64, -1.5, 5e-4, f64::MAX, f64::MIN_POSITIVE] {
            let bits = limbs_to_u64(&u64_to_limbs(f.to_bits())).unwrap();
            assert_eq!(f64::from_bits(bits), f);
        }
    }
}
