//! Binary checkpoints: magic "GDNN1", a JSON header carrying the model spec
//! (plus build seed and optimizer constants), then every tensor as
//! name / rank / dims / little-endian f64 payload. Parameters, batch-norm
//! running statistics, and Adam moments all ride along, and a save → load →
//! save cycle reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelError, ModelGraph, ModelSpec};
use crate::nn::{Adam, AdamConfig, TensorVisit};

const MAGIC: &[u8; 5] = b"GDNN1";

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    seed: u64,
    adam: Option<AdamHeader>,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

fn fail(path: &Path, reason: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

struct Entry {
    name: String,
    dims: Vec<u64>,
    data: Vec<f64>,
}

fn write_entry(w: &mut impl Write, e: &Entry) -> std::io::Result<()> {
    w.write_all(&(e.name.len() as u32).to_le_bytes())?;
    w.write_all(e.name.as_bytes())?;
    w.write_all(&[e.dims.len() as u8])?;
    for &d in &e.dims {
        w.write_all(&d.to_le_bytes())?;
    }
    for &v in &e.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_checkpoint(
    path: &Path,
    model: &mut ModelGraph,
    adam: Option<&Adam>,
) -> Result<(), ModelError> {
    let mut entries = Vec::new();
    {
        let mut push = |name: String, t: &mut crate::tensor::Tensor2| {
            entries.push(Entry {
                name,
                dims: vec![t.rows() as u64, t.cols() as u64],
                data: t.data().to_vec(),
            });
        };
        model.visit_params("", &mut push);
        model.visit_state("", &mut push);
    }

    let adam_header = adam.map(|a| {
        let cfg = a.config();
        let (step, moments) = a.snapshot();
        for (name, m, v) in moments {
            entries.push(Entry {
                name: format!("adam.m.{name}"),
                dims: vec![m.len() as u64],
                data: m,
            });
            entries.push(Entry {
                name: format!("adam.v.{name}"),
                dims: vec![v.len() as u64],
                data: v,
            });
        }
        AdamHeader {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            step,
        }
    });

    let header = Header {
        spec: model.spec().clone(),
        seed: model.seed(),
        adam: adam_header,
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_json.len() as u32).to_le_bytes())?;
    w.write_all(&header_json)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in &entries {
        write_entry(&mut w, e)?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelGraph, Option<Adam>), ModelError> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(fail(path, "not a GDNN1 checkpoint"));
    }
    let header_len = read_u32(&mut r)? as usize;
    let mut header_buf = vec![0u8; header_len];
    r.read_exact(&mut header_buf)?;
    let header: Header = serde_json::from_slice(&header_buf)
        .map_err(|e| fail(path, format!("bad header: {e}")))?;

    let count = read_u32(&mut r)? as usize;
    let mut stored: BTreeMap<String, (Vec<u64>, Vec<f64>)> = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| fail(path, "tensor name is not utf-8"))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let mut dims = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            dims.push(read_u64(&mut r)?);
        }
        let len: u64 = dims.iter().product();
        let mut data = Vec::with_capacity(len as usize);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        if stored.insert(name.clone(), (dims, data)).is_some() {
            return Err(fail(path, format!("duplicate tensor `{name}`")));
        }
    }

    let mut model = ModelGraph::build(&header.spec, header.seed)?;
    let mut missing: Vec<String> = Vec::new();
    let mut mismatch: Vec<String> = Vec::new();
    {
        let mut apply = |name: String, t: &mut crate::tensor::Tensor2| {
            match stored.remove(&name) {
                None => missing.push(name),
                Some((dims, data)) => {
                    if dims != [t.rows() as u64, t.cols() as u64] {
                        mismatch.push(name);
                    } else {
                        t.data_mut().copy_from_slice(&data);
                    }
                }
            }
        };
        model.visit_params("", &mut apply);
        model.visit_state("", &mut apply);
    }
    if let Some(name) = missing.first() {
        return Err(fail(path, format!("missing tensor `{name}`")));
    }
    if let Some(name) = mismatch.first() {
        return Err(fail(path, format!("shape mismatch for tensor `{name}`")));
    }

    let adam = match header.adam {
        None => {
            if let Some((name, _)) = stored.iter().next() {
                return Err(fail(path, format!("unexpected tensor `{name}`")));
            }
            None
        }
        Some(h) => {
            // Each parameter's moments arrive as two tensors; pair them up.
            type Halves = (Option<Vec<f64>>, Option<Vec<f64>>);
            let mut moments: BTreeMap<String, Halves> = BTreeMap::new();
            for (name, (dims, data)) in stored {
                let (slot, param) = if let Some(p) = name.strip_prefix("adam.m.") {
                    (0, p.to_string())
                } else if let Some(p) = name.strip_prefix("adam.v.") {
                    (1, p.to_string())
                } else {
                    return Err(fail(path, format!("unexpected tensor `{name}`")));
                };
                if dims.len() != 1 {
                    return Err(fail(path, format!("optimizer tensor `{name}` must be rank 1")));
                }
                let entry = moments.entry(param).or_default();
                if slot == 0 {
                    entry.0 = Some(data);
                } else {
                    entry.1 = Some(data);
                }
            }
            let mut entries = Vec::with_capacity(moments.len());
            for (name, (m, v)) in moments {
                match (m, v) {
                    (Some(m), Some(v)) => entries.push((name, m, v)),
                    _ => {
                        return Err(fail(
                            path,
                            format!("optimizer moments for `{name}` are incomplete"),
                        ))
                    }
                }
            }
            let mut adam = Adam::new(AdamConfig {
                lr: h.lr,
                beta1: h.beta1,
                beta2: h.beta2,
                eps: h.eps,
            });
            adam.restore(h.step, entries);
            Some(adam)
        }
    };
    Ok((model, adam))
}

#[cfg(test)]
mod tests {
    use super::super::ModelKind;
    use super::*;
    use crate::nn::Mode;
    use crate::tensor::Tensor2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Dropout 0 on purpose: checkpoints restore parameters, running stats,
    // and optimizer moments, but not dropout rng positions; lockstep resume
    // is only defined for deterministic forwards.
    fn trained_small_model() -> (ModelGraph, Adam) {
        let spec = ModelSpec {
            input_dim: 5,
            d: 8,
            m: 2,
            k: 2,
            blocks: 2,
            dropout: 0.0,
            ..ModelSpec::new(ModelKind::GatedDeepMlp)
        };
        let mut model = ModelGraph::build(&spec, 77).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..3 {
            let x = Tensor2::from_vec(
                6,
                5,
                (0..30).map(|_| rng.random_range(-1.0..1.0)).collect(),
            );
            let y: Vec<f64> = (0..6).map(|i| f64::from(i % 2 == 0)).collect();
            let logits = model.forward(&x, Mode::Train, false).unwrap().0;
            let (_, grad) = crate::nn::bce_loss(&logits, &y);
            model.backward(&grad, None).unwrap();
            adam.step(&mut model).unwrap();
            crate::nn::zero_grads(&mut model);
        }
        (model, adam)
    }

    #[test]
    fn round_trip_is_byte_exact_and_prediction_preserving() {
        let dir = tempfile::tempdir().unwrap();
        let path_a = dir.path().join("a.bin");
        let path_b = dir.path().join("b.bin");

        let (mut model, adam) = trained_small_model();
        save_checkpoint(&path_a, &mut model, Some(&adam)).unwrap();
        let (mut loaded, loaded_adam) = load_checkpoint(&path_a).unwrap();
        save_checkpoint(&path_b, &mut loaded, loaded_adam.as_ref()).unwrap();
        assert_eq!(
            std::fs::read(&path_a).unwrap(),
            std::fs::read(&path_b).unwrap(),
            "save → load → save must reproduce the file exactly"
        );

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor2::from_vec(4, 5, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect());
        assert_eq!(
            model.predict_logits(&x, Mode::Inference).unwrap(),
            loaded.predict_logits(&x, Mode::Inference).unwrap()
        );
    }

    #[test]
    fn optimizer_state_resumes_identically() {
        let (mut model, mut adam) = trained_small_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_checkpoint(&path, &mut model, Some(&adam)).unwrap();
        let (mut loaded, loaded_adam) = load_checkpoint(&path).unwrap();
        let mut loaded_adam = loaded_adam.unwrap();
        assert_eq!(adam.step_count(), loaded_adam.step_count());

        // One more identical step on both copies stays in lockstep.
        let x = Tensor2::from_vec(4, 5, (0..20).map(|i| i as f64 * 0.1 - 1.0).collect());
        let y = vec![1.0, 0.0, 1.0, 0.0];
        for (m, a) in [(&mut model, &mut adam), (&mut loaded, &mut loaded_adam)] {
            let logits = m.forward(&x, Mode::Train, false).unwrap().0;
            let (_, grad) = crate::nn::bce_loss(&logits, &y);
            m.backward(&grad, None).unwrap();
            a.step(m).unwrap();
        }
        let mut wa = Vec::new();
        let mut wb = Vec::new();
        model.visit_params("", &mut |_, t| wa.extend_from_slice(t.data()));
        loaded.visit_params("", &mut |_, t| wb.extend_from_slice(t.data()));
        assert_eq!(wa, wb);
    }

    #[test]
    fn corrupt_files_are_rejected_with_reasons() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOTGD").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("not a GDNN1 checkpoint"), "{err}");

        let (mut model, _) = trained_small_model();
        save_checkpoint(&path, &mut model, None).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 9);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
