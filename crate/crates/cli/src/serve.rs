//! Built-in components exposed through the adapter protocols, so the harness
//! can drive them exactly like external tools.

use std::io::{Read, Write};

use slidebench::adapters::{write_feat, CodecInfo, ExtractorInfo, Mode, TapDecl};
use slidebench::extractor::{Extractor, FeatureExtractor, TAP_IDS};
use slidebench::imagecore::{read_pnm, write_pnm};
use slidebench::refcodec::{self, quant::QualityParam};
use slidebench::{Error, QualityKind, Result};

fn stdin_bytes() -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::io::stdin()
        .read_to_end(&mut buf)
        .map_err(|e| Error::Validation(format!("reading stdin: {e}")))?;
    Ok(buf)
}

fn emit(bytes: &[u8]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(bytes)
        .and_then(|_| out.flush())
        .map_err(|e| Error::Validation(format!("writing stdout: {e}")))
}

pub fn refcodec(verb: &str, quality: Option<f64>, subsample: bool) -> Result<()> {
    match verb {
        "capabilities" => {
            let info = CodecInfo {
                name: if subsample {
                    "refcodec-420"
                } else {
                    "refcodec"
                }
                .into(),
                version: env!("CARGO_PKG_VERSION").into(),
                quality_min: 1.0,
                quality_max: 100.0,
                quality_kind: QualityKind::Int,
                modes: vec![Mode::Encode, Mode::Decode],
            };
            emit(format!("{}\n", serde_json::to_string(&info)?).as_bytes())
        }
        "encode" => {
            let q = quality.ok_or_else(|| Error::Validation("encode needs --quality".into()))?;
            let tile = read_pnm(&stdin_bytes()?)?;
            emit(&refcodec::encode(
                &tile,
                QualityParam::from_f64(q)?,
                subsample,
            )?)
        }
        "decode" => emit(&write_pnm(&refcodec::decode(&stdin_bytes()?)?)),
        other => Err(Error::Validation(format!("unknown verb {other}"))),
    }
}

pub fn extractor(verb: &str, seed: u64, size: u32) -> Result<()> {
    let x = Extractor::seeded(seed);
    match verb {
        "capabilities" => {
            let dims = x.spec().tap_dims(size as usize, size as usize);
            let info = ExtractorInfo {
                name: x.name().to_string(),
                taps: TAP_IDS
                    .iter()
                    .zip(dims)
                    .map(|(id, dim)| TapDecl {
                        id: id.to_string(),
                        dim,
                    })
                    .collect(),
            };
            emit(format!("{}\n", serde_json::to_string(&info)?).as_bytes())
        }
        "extract" => {
            let tile = read_pnm(&stdin_bytes()?)?;
            emit(&write_feat(&x.extract(&tile)?))
        }
        other => Err(Error::Validation(format!("unknown verb {other}"))),
    }
}
