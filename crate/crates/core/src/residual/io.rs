use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LowerTriangularResidual, ResidualBlock};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    r: usize,
    m: usize,
    enabled: Vec<bool>,
    blocks: Vec<ResidualBlock>,
}

impl LowerTriangularResidual {
    pub fn to_json(&self) -> Result<String> {
        let doc = ModelFile {
            format_version: FORMAT_VERSION,
            r: self.r,
            m: self.m,
            enabled: self.enabled.clone(),
            blocks: self.blocks.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::ModelFormat(format!("corrupt model file: {e}")))?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::ModelFormat(format!(
                    "format version {v} is not supported (expected {FORMAT_VERSION})"
                )))
            }
            None => return Err(Error::ModelFormat("missing format_version".into())),
        }
        let doc: ModelFile = serde_json::from_value(value)
            .map_err(|e| Error::ModelFormat(format!("invalid model file: {e}")))?;
        if doc.blocks.len() != doc.r || doc.enabled.len() != doc.r {
            return Err(Error::Structure(format!(
                "{} blocks and {} mask entries for r = {}",
                doc.blocks.len(),
                doc.enabled.len(),
                doc.r
            )));
        }
        let res = LowerTriangularResidual {
            r: doc.r,
            m: doc.m,
            blocks: doc.blocks,
            enabled: doc.enabled,
        };
        res.check_structure(doc.r, doc.m)?;
        Ok(res)
    }
}

pub fn save_model(res: &LowerTriangularResidual, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, res.to_json()?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LowerTriangularResidual> {
    LowerTriangularResidual::from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::residual::MlpBlock;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> LowerTriangularResidual {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut res = LowerTriangularResidual::zero(4, 2);
        for i in 0..2 {
            let mut mlp = MlpBlock::new((i + 1) * 2, 32, 2, &mut rng);
            mlp.b1.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
            mlp.set_normalization(vec![0.123; (i + 1) * 2], vec![0.456; (i + 1) * 2]);
            res = res.with_block(i, ResidualBlock::Mlp(mlp));
        }
        res.with_block(
            2,
            ResidualBlock::Drag {
                linear: 0.01,
                quadratic: 0.1,
            },
        )
    }

    #[test]
    fn round_trip_is_bitwise() {
        let res = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&res, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, res);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let a = res.residual_eval(&x).unwrap();
            let b = back.residual_eval(&x).unwrap();
            assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn disabled_mask_round_trips() {
        let mut res = model();
        res.set_enabled(0, false);
        let back = LowerTriangularResidual::from_json(&res.to_json().unwrap()).unwrap();
        assert_eq!(back.enabled(), &[false, true, true, false]);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let text = model().to_json().unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(
            LowerTriangularResidual::from_json(cut),
            Err(Error::ModelFormat(_))
        ));
    }

    #[test]
    fn version_and_shape_mismatch() {
        let text = model().to_json().unwrap();
        let bumped = text.replace("\"format_version\": 1", "\"format_version\": 99");
        let err = LowerTriangularResidual::from_json(&bumped).unwrap_err();
        assert!(err.to_string().contains("version 99"));

        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value["blocks"][1]["input_dim"] = serde_json::json!(3);
        let err = LowerTriangularResidual::from_json(&value.to_string()).unwrap_err();
        assert!(matches!(err, Error::Structure(_)));
    }
}
