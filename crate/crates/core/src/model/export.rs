//! Grayscale dumps of the per-stage attention maps, for inspection.

use crate::data::pnm;
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};
use std::path::{Path, PathBuf};

/// Attention maps recorded by one forward pass, per decoder stage.
/// Entries are present only when the producing block is enabled.
#[derive(Clone, Debug)]
pub struct StageMaps<S: Scalar> {
    pub sim: Option<Tensor<S>>,
    pub dsa: Option<Tensor<S>>,
    pub a_c: Option<Tensor<S>>,
    pub a_s: Option<Tensor<S>>,
}

impl<S: Scalar> Default for StageMaps<S> {
    fn default() -> Self {
        StageMaps {
            sim: None,
            dsa: None,
            a_c: None,
            a_s: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AttentionState<S: Scalar> {
    pub stages: Vec<StageMaps<S>>,
}

impl<S: Scalar> Default for AttentionState<S> {
    fn default() -> Self {
        AttentionState { stages: Vec::new() }
    }
}

/// Map values linearly onto `[0,255]` with half-up rounding. Constant maps
/// fall back to the value itself (clamped to `[0,1]`) so a neutral 0.5 map
/// renders as mid-gray.
fn to_bytes(values: &[f64], min: f64, max: f64) -> Vec<u8> {
    values
        .iter()
        .map(|&v| {
            let unit = if max > min {
                (v - min) / (max - min)
            } else {
                v.clamp(0.0, 1.0)
            };
            pnm::quantize_u8(unit)
        })
        .collect()
}

/// Write one PGM per stage per available map kind (`sim`, `dsa`, `as`) for
/// the first batch element, plus `manifest.txt` describing each file as
/// `stage=<i> kind=<k> min=<f> max=<f> file=<name>`. Returns the written
/// image paths.
pub fn export_attention_maps<S: Scalar>(
    state: &AttentionState<S>,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut manifest = String::new();
    for (i, stage) in state.stages.iter().enumerate() {
        for (kind, map) in [("sim", &stage.sim), ("dsa", &stage.dsa), ("as", &stage.a_s)] {
            let Some(map) = map else { continue };
            let (_, c, h, w) = map.dims4()?;
            debug_assert_eq!(c, 1);
            let values: Vec<f64> = map.data()[..h * w].iter().map(|v| v.to_f64()).collect();
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let bytes = to_bytes(&values, min, max);
            let name = format!("stage{i}_{kind}.pgm");
            let path = dir.join(&name);
            pnm::write_pgm_raw(&path, w, h, &bytes)?;
            manifest.push_str(&format!("stage={i} kind={kind} min={min} max={max} file={name}\n"));
            written.push(path);
        }
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn state_with(stages: usize) -> AttentionState<f32> {
        let mut st = AttentionState::default();
        for i in 0..stages {
            let h = 4 << i;
            let map = Tensor::<f32>::uniform(
                &[1, 1, h, h],
                0.05,
                0.95,
                &mut crate::rng::Rng::from_seed(i as u64),
            );
            st.stages.push(StageMaps {
                sim: Some(map.clone()),
                dsa: Some(map.clone()),
                a_c: None,
                a_s: Some(map),
            });
        }
        st
    }

    #[test]
    fn four_stage_export_writes_twelve_images_and_a_manifest() {
        let dir = tempdir().unwrap();
        let written = export_attention_maps(&state_with(4), dir.path()).unwrap();
        assert_eq!(written.len(), 12);
        let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert_eq!(manifest.lines().count(), 12);
        assert!(manifest.contains("stage=0 kind=sim"));
        assert!(manifest.contains("stage=3 kind=as"));
    }

    #[test]
    fn constant_half_map_renders_as_128() {
        let dir = tempdir().unwrap();
        let mut st = AttentionState::<f32>::default();
        st.stages.push(StageMaps {
            sim: None,
            dsa: Some(Tensor::full(&[1, 1, 2, 2], 0.5)),
            a_c: None,
            a_s: None,
        });
        export_attention_maps(&st, dir.path()).unwrap();
        let img = crate::data::pnm::read_image(&dir.path().join("stage0_dsa.pgm")).unwrap();
        for &v in img.data() {
            assert_eq!((v * 255.0).round() as u8, 128);
        }
    }

    #[test]
    fn manifest_relinearization_recovers_values() {
        let dir = tempdir().unwrap();
        let st = state_with(2);
        export_attention_maps(&st, dir.path()).unwrap();
        let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        for line in manifest.lines() {
            let mut stage = 0usize;
            let mut kind = String::new();
            let (mut min, mut max) = (0.0f64, 0.0f64);
            let mut file = String::new();
            for field in line.split_whitespace() {
                let (k, v) = field.split_once('=').unwrap();
                match k {
                    "stage" => stage = v.parse().unwrap(),
                    "kind" => kind = v.to_string(),
                    "min" => min = v.parse().unwrap(),
                    "max" => max = v.parse().unwrap(),
                    "file" => file = v.to_string(),
                    _ => panic!("unexpected key {k}"),
                }
            }
            let img = crate::data::pnm::read_image(&dir.path().join(&file)).unwrap();
            let orig = match kind.as_str() {
                "sim" => st.stages[stage].sim.as_ref().unwrap(),
                "dsa" => st.stages[stage].dsa.as_ref().unwrap(),
                _ => st.stages[stage].a_s.as_ref().unwrap(),
            };
            for (b, o) in img.data().iter().zip(orig.data()) {
                let recovered = min + (*b as f64) * (max - min);
                assert!(
                    (recovered - *o as f64).abs() <= 1.0 / 255.0 + 1e-9,
                    "{recovered} vs {o}"
                );
            }
        }
    }
}
