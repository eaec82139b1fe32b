//! Model files: `manifest.txt` (one `key value` pair per line) plus one
//! little-endian `f64` blob per weight tensor.
//!
//! ```text
//! format thzce-unfolded 1
//! layers 2
//! s 2
//! q 128
//! hidden 16
//! input_scale 64 20
//! configs 48:10 32:5
//! tensor layer0.conv1_w 16,2,5,5 layer0.conv1_w.bin
//! ...
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{LayerWeights, Tensor, UnfoldedModel, TENSOR_NAMES};
use crate::error::{Error, Result};

const MAGIC: &str = "thzce-unfolded 1";
const MANIFEST: &str = "manifest.txt";

pub fn save_model(model: &UnfoldedModel, dir: &Path) -> Result<()> {
    model.validate()?;
    fs::create_dir_all(dir)?;
    let mut manifest = format!(
        "format {MAGIC}\nlayers {}\ns {}\nq {}\nhidden {}\ninput_scale 64 20\n",
        model.depth(),
        model.s,
        model.q,
        model.hidden
    );
    let configs: Vec<String> = model.configs.iter().map(|(m, snr)| format!("{m}:{snr}")).collect();
    manifest.push_str(&format!("configs {}\n", configs.join(" ")));
    for (l, layer) in model.layers.iter().enumerate() {
        for (name, t) in TENSOR_NAMES.iter().zip(layer.tensors()) {
            let key = format!("layer{l}.{name}");
            let shape: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            let file = format!("{key}.bin");
            manifest.push_str(&format!("tensor {key} {} {file}\n", shape.join(",")));
            let bytes: Vec<u8> = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(dir.join(&file), bytes)?;
        }
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

fn parse<T: std::str::FromStr>(value: &str, what: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Format(format!("bad {what}: {value:?}")))
}

pub fn load_model(dir: &Path) -> Result<UnfoldedModel> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let mut fields: HashMap<&str, &str> = HashMap::new();
    let mut tensors: HashMap<String, (Vec<usize>, String)> = HashMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        if key == "tensor" {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            let [name, shape, file] = parts[..] else {
                return Err(Error::Format(format!("bad tensor line: {line:?}")));
            };
            let shape = shape.split(',').map(|d| parse(d, "shape")).collect::<Result<Vec<usize>>>()?;
            tensors.insert(name.to_string(), (shape, file.to_string()));
        } else {
            fields.insert(key, rest);
        }
    }
    let get = |key: &str| fields.get(key).copied().ok_or_else(|| Error::Format(format!("missing {key}")));
    if get("format")? != MAGIC {
        return Err(Error::Format(format!("unknown format {:?}", get("format")?)));
    }
    if get("input_scale")?.split_whitespace().collect::<Vec<_>>() != ["64", "20"] {
        return Err(Error::Format("unsupported input scaling".into()));
    }
    let depth: usize = parse(get("layers")?, "layers")?;
    let s: usize = parse(get("s")?, "s")?;
    let q: usize = parse(get("q")?, "q")?;
    let hidden: usize = parse(get("hidden")?, "hidden")?;
    let configs = get("configs")?
        .split_whitespace()
        .map(|pair| {
            let (m, snr) = pair.split_once(':').ok_or_else(|| Error::Format(format!("bad config {pair:?}")))?;
            Ok((parse(m, "M")?, parse(snr, "SNR")?))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut layers = Vec::with_capacity(depth);
    for l in 0..depth {
        let mut layer = LayerWeights::zeros(hidden);
        for (name, slot) in TENSOR_NAMES.iter().zip(layer.tensors_mut()) {
            let key = format!("layer{l}.{name}");
            let (shape, file) = tensors.get(&key).ok_or_else(|| Error::Format(format!("missing tensor {key}")))?;
            if *shape != slot.shape {
                return Err(Error::Format(format!("{key}: shape {shape:?}, expected {:?}", slot.shape)));
            }
            let bytes = fs::read(dir.join(file))?;
            if bytes.len() != 8 * slot.len() {
                return Err(Error::Format(format!("{key}: {} bytes for {} values", bytes.len(), slot.len())));
            }
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            *slot = Tensor::from_vec(shape, data)?;
        }
        layers.push(layer);
    }
    let model = UnfoldedModel { layers, s, q, hidden, configs };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = UnfoldedModel::new(3, 2, 16, 16, &mut stream(1, 0)).unwrap();
        model.configs = vec![(48, 10.0), (16, 0.1 + 0.2)];
        model.layers[1].fc1_b.data[0] = -0.0;
        model.layers[2].conv1_w.data[5] = f64::MIN_POSITIVE / 3.0;
        save_model(&model, dir.path()).unwrap();
        let back = load_model(dir.path()).unwrap();
        assert_eq!(back.configs, model.configs);
        for (a, b) in model.layers.iter().zip(&back.layers) {
            for (x, y) in a.tensors().iter().zip(b.tensors()) {
                let xb: Vec<u64> = x.data.iter().map(|v| v.to_bits()).collect();
                let yb: Vec<u64> = y.data.iter().map(|v| v.to_bits()).collect();
                assert_eq!(xb, yb);
            }
        }
    }

    #[test]
    fn truncated_blob_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = UnfoldedModel::new(1, 2, 8, 4, &mut stream(2, 0)).unwrap();
        save_model(&model, dir.path()).unwrap();
        let blob = dir.path().join("layer0.fc2_b.bin");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_shape_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = UnfoldedModel::new(1, 2, 8, 4, &mut stream(3, 0)).unwrap();
        save_model(&model, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap().replace("layer0.fc1_w 4,2", "layer0.fc1_w 2,4");
        fs::write(&path, text).unwrap();
        assert!(load_model(dir.path()).is_err());
    }
}
