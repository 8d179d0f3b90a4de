//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "MTLSTM01"                       8 bytes
//! spec length n                    u64
//! spec text                        n bytes, ModelSpec key=value lines
//! parameters                       f64 each, in Params::visit order
//! checksum                         u64, FNV-1a 64 over every preceding byte
//! ```
//!
//! Parameter order per tower: W_ix W_fx W_cx W_ox W_ir W_fr W_cr W_or w_ic
//! w_fc w_oc b_i b_f b_c b_o W_rm W_pm W_yr W_yp b_y (matrices row-major).
//! Multitask models store tower `a`, tower `l`, then the cross matrices into
//! `a` followed by those into `l`, each list ordered by gate (i, f, o, g) and
//! then source (r, p).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Model, ModelSpec};
use crate::params::Params;

pub const MAGIC: &[u8; 8] = b"MTLSTM01";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn encode(model: &Model) -> Vec<u8> {
    let spec = model.spec.to_text();
    let mut buf = Vec::with_capacity(32 + spec.len() + 8 * model.params.num_params());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(spec.len() as u64).to_le_bytes());
    buf.extend_from_slice(spec.as_bytes());
    model.params.visit(&mut |_, d| {
        for v in d {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    });
    let sum = fnv1a(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    buf
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < MAGIC.len() + 16 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic (not an MTLSTM01 checkpoint)"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if fnv1a(body) != stored {
        return Err(bad("checksum mismatch (file truncated or corrupted)"));
    }
    let spec_len = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
    let spec_end = 16usize
        .checked_add(spec_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| bad("spec block overruns the file"))?;
    let text = std::str::from_utf8(&body[16..spec_end]).map_err(|_| bad("spec block is not UTF-8"))?;
    let spec = ModelSpec::from_text(text)?;
    let mut model = Model::zeros(spec)?;
    let raw = &body[spec_end..];
    let n = model.params.num_params();
    if raw.len() != 8 * n {
        return Err(Error::Checkpoint(format!(
            "expected {n} parameters ({} bytes), found {} bytes",
            8 * n,
            raw.len()
        )));
    }
    let flat: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    model.params.load_flat(&flat);
    Ok(model)
}

pub fn save<W: Write>(out: &mut W, model: &Model) -> Result<()> {
    out.write_all(&encode(model))?;
    Ok(())
}

pub fn load<R: Read>(input: &mut R) -> Result<Model> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn save_file(path: &Path, model: &Model) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    save(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_file(path: &Path) -> Result<Model> {
    let f = File::open(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    load(&mut BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multitask::FeedbackConfig;
    use crate::network::{InitConfig, Mode, TowerSize};
    use proptest::prelude::{prop_assert_eq, proptest};

    fn spec(mode: Mode, fb: &str) -> ModelSpec {
        ModelSpec {
            mode,
            feat_dim: 3,
            splice_context: 2,
            asr: TowerSize { cell: 5, rproj: 3, pproj: 2 },
            lr: TowerSize { cell: 3, rproj: 2, pproj: 1 },
            feedback: FeedbackConfig::parse(fb).unwrap(),
            phone_classes: 6,
            language_classes: 2,
            target_delay: 5,
            lambda_asr: 1.0,
            lambda_lr: 0.25,
        }
    }

    #[test]
    fn layout() {
        let m = Model::init(spec(Mode::SingleBilingual, "none"), &InitConfig::default()).unwrap();
        let bytes = encode(&m);
        assert_eq!(&bytes[..8], b"MTLSTM01");
        let spec_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 16 + spec_len + 8 * m.params.num_params() + 8);
        let first = f64::from_le_bytes(bytes[16 + spec_len..24 + spec_len].try_into().unwrap());
        assert_eq!(first, m.params.asr_tower().w_ix.data()[0]);
    }

    #[test]
    fn corruption_is_detected() {
        let m = Model::init(spec(Mode::Multitask, "g:r,p"), &InitConfig::default()).unwrap();
        let bytes = encode(&m);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).unwrap_err().to_string().contains("magic"));
        let mut bad = bytes.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 1;
        assert!(decode(&bad).unwrap_err().to_string().contains("checksum"));
        assert!(decode(&bytes[..bytes.len() - 9]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in 0u64..1000, fb in 0usize..13) {
            let configs = FeedbackConfig::sweep_grid();
            let s = if fb == 12 {
                spec(Mode::SingleBilingual, "none")
            } else {
                spec(Mode::Multitask, &configs[fb].to_string())
            };
            let m = Model::init(s, &InitConfig { seed, scale: 3.7, forget_bias: 1.0 }).unwrap();
            let back = decode(&encode(&m)).unwrap();
            prop_assert_eq!(back.spec.clone(), m.spec.clone());
            let a: Vec<u64> = m.params.to_flat().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.params.to_flat().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
