//! Tagged channel datasets on disk.
//!
//! A dataset directory holds `manifest.toml` and one little-endian blob per
//! array. Complex arrays are interleaved `re, im` pairs of `f64` in row-major
//! order; the pilot matrix is plain `f64`. Observations are zero-padded to the
//! largest pilot length of the grid so every sample has the same shape.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thzce::channel::sample_channel;
use thzce::config::noise_variance;
use thzce::measurement::{generate_pilot_matrix, observe};
use thzce::rng::stream;
use thzce::training::{ConfigKey, Sample};
use thzce::{CMatrix, Complex64, Error, Result, SystemConfig};

const FORMAT: &str = "thzce-dataset 1";
const MANIFEST: &str = "manifest.toml";
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Random stream of the master pilot matrix; sample `j` uses streams
/// `2j + 1` (channel) and `2j + 2` (noise).
const PILOT_STREAM: u64 = 0;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub system: SystemConfig,
    /// `M_max x N` master pilot; pilot length `M` uses its first `M` rows.
    pub pilot: DMatrix<f64>,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn new(train: usize, val: usize, test: usize) -> Self {
        Self { train, val, test }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    dtype: String,
    m_max: usize,
    system: SystemConfig,
    splits: Vec<SplitEntry>,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitEntry {
    name: String,
    count: usize,
    /// `[M, snr_db]` per sample.
    tags: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    file: String,
    dtype: String,
    shape: Vec<usize>,
}

impl ArrayEntry {
    fn new(name: &str, dtype: &str, shape: Vec<usize>) -> Self {
        Self { name: name.into(), file: format!("{name}.bin"), dtype: dtype.into(), shape }
    }

    fn byte_len(&self) -> usize {
        let words = if self.dtype == "c128" { 2 } else { 1 };
        8 * words * self.shape.iter().product::<usize>()
    }
}

/// Master pilot of `cfg.seed` with `m_max` rows.
pub fn master_pilot(cfg: &SystemConfig, m_max: usize) -> DMatrix<f64> {
    generate_pilot_matrix(m_max, cfg.n, &mut stream(cfg.seed, PILOT_STREAM))
}

/// Sample `index` of the global sample sequence of `cfg.seed`.
pub fn draw_sample(cfg: &SystemConfig, pilot: &DMatrix<f64>, key: ConfigKey, index: u64) -> Result<Sample> {
    let (m, snr_db) = key;
    if m == 0 || m > pilot.nrows() {
        return Err(Error::InvalidConfig(format!("pilot length {m} outside 1..={}", pilot.nrows())));
    }
    let ch = sample_channel(cfg, &mut stream(cfg.seed, 2 * index + 1))?;
    let w = pilot.rows(0, m).into_owned();
    let y = observe(&ch.h, &w, noise_variance(snr_db), &mut stream(cfg.seed, 2 * index + 2))?;
    Ok(Sample { h: ch.h, y, m, snr_db })
}

/// Generates the three splits in memory. Sample `i` of a split is tagged
/// `grid[i % grid.len()]`.
pub fn generate(cfg: &SystemConfig, counts: SplitCounts, grid: &[ConfigKey]) -> Result<Dataset> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty configuration grid".into()));
    }
    let m_max = grid.iter().map(|k| k.0).max().unwrap_or(0);
    let pilot = master_pilot(cfg, m_max);
    let mut next = 0u64;
    let mut split = |count: usize| -> Result<Vec<Sample>> {
        (0..count)
            .map(|i| {
                let index = next;
                next += 1;
                draw_sample(cfg, &pilot, grid[i % grid.len()], index)
            })
            .collect()
    };
    let train = split(counts.train)?;
    let val = split(counts.val)?;
    let test = split(counts.test)?;
    Ok(Dataset { system: cfg.clone(), pilot, train, val, test })
}

/// [`generate`] followed by [`Dataset::save`].
pub fn generate_dataset(cfg: &SystemConfig, counts: SplitCounts, grid: &[ConfigKey], out: &Path) -> Result<Dataset> {
    let ds = generate(cfg, counts, grid)?;
    ds.save(out)?;
    Ok(ds)
}

impl Dataset {
    pub fn split(&self, name: &str) -> Option<&[Sample]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    pub fn m_max(&self) -> usize {
        self.pilot.nrows()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let (n, k, m_max) = (self.system.n, self.system.k, self.m_max());
        let pilot = ArrayEntry::new("pilot", "f64", vec![m_max, n]);
        let mut pilot_bytes = Vec::with_capacity(pilot.byte_len());
        for i in 0..m_max {
            for j in 0..n {
                pilot_bytes.extend_from_slice(&self.pilot[(i, j)].to_le_bytes());
            }
        }
        fs::write(dir.join(&pilot.file), pilot_bytes)?;
        let mut arrays = vec![pilot];
        let mut splits = Vec::new();
        for name in SPLITS {
            let samples = self.split(name).expect("known split");
            let channels = ArrayEntry::new(&format!("{name}.channels"), "c128", vec![samples.len(), n, k]);
            let obs = ArrayEntry::new(&format!("{name}.observations"), "c128", vec![samples.len(), m_max, k]);
            let mut hb = Vec::with_capacity(channels.byte_len());
            let mut yb = Vec::with_capacity(obs.byte_len());
            for s in samples {
                check_sample(s, n, k, m_max)?;
                push_complex(&mut hb, &s.h, n);
                push_complex(&mut yb, &s.y, m_max);
            }
            fs::write(dir.join(&channels.file), hb)?;
            fs::write(dir.join(&obs.file), yb)?;
            arrays.push(channels);
            arrays.push(obs);
            splits.push(SplitEntry {
                name: name.into(),
                count: samples.len(),
                tags: samples.iter().map(|s| (s.m, s.snr_db)).collect(),
            });
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            dtype: "little-endian f64; c128 = interleaved re,im; row-major".into(),
            m_max,
            system: self.system.clone(),
            splits,
            arrays,
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(dir.join(MANIFEST), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        if manifest.format != FORMAT {
            return Err(Error::Format(format!("unknown dataset format {:?}", manifest.format)));
        }
        let (n, k, m_max) = (manifest.system.n, manifest.system.k, manifest.m_max);
        let read = |name: &str, dtype: &str, shape: Vec<usize>| -> Result<Vec<f64>> {
            let entry = manifest
                .arrays
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| Error::Format(format!("missing array {name}")))?;
            if entry.dtype != dtype || entry.shape != shape {
                return Err(Error::Format(format!(
                    "{name}: {} {:?}, expected {dtype} {shape:?}",
                    entry.dtype, entry.shape
                )));
            }
            let bytes = fs::read(dir.join(&entry.file))?;
            if bytes.len() != entry.byte_len() {
                return Err(Error::Format(format!("{name}: {} bytes, expected {}", bytes.len(), entry.byte_len())));
            }
            Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
        };

        let p = read("pilot", "f64", vec![m_max, n])?;
        let pilot = DMatrix::from_row_slice(m_max, n, &p);
        let mut out = Dataset { system: manifest.system.clone(), pilot, train: vec![], val: vec![], test: vec![] };
        for name in SPLITS {
            let entry = manifest
                .splits
                .iter()
                .find(|s| s.name == name)
                .ok_or_else(|| Error::Format(format!("missing split {name}")))?;
            if entry.tags.len() != entry.count {
                return Err(Error::Format(format!("split {name}: {} tags for {} samples", entry.tags.len(), entry.count)));
            }
            let hs = read(&format!("{name}.channels"), "c128", vec![entry.count, n, k])?;
            let ys = read(&format!("{name}.observations"), "c128", vec![entry.count, m_max, k])?;
            let mut samples = Vec::with_capacity(entry.count);
            for (i, &(m, snr_db)) in entry.tags.iter().enumerate() {
                if m == 0 || m > m_max {
                    return Err(Error::Format(format!("split {name}: pilot length {m} outside 1..={m_max}")));
                }
                let h = read_complex(&hs[2 * i * n * k..2 * (i + 1) * n * k], n, k);
                let y_full = read_complex(&ys[2 * i * m_max * k..2 * (i + 1) * m_max * k], m_max, k);
                samples.push(Sample { h, y: y_full.rows(0, m).into_owned(), m, snr_db });
            }
            match name {
                "train" => out.train = samples,
                "val" => out.val = samples,
                _ => out.test = samples,
            }
        }
        Ok(out)
    }
}

fn check_sample(s: &Sample, n: usize, k: usize, m_max: usize) -> Result<()> {
    if s.h.shape() != (n, k) || s.y.shape() != (s.m, k) || s.m > m_max {
        return Err(Error::DimensionMismatch(format!(
            "sample with H {:?}, Y {:?}, M={} does not fit N={n}, K={k}, M_max={m_max}",
            s.h.shape(),
            s.y.shape(),
            s.m
        )));
    }
    Ok(())
}

// Row-major, padded with zero rows up to `rows`.
fn push_complex(out: &mut Vec<u8>, a: &CMatrix, rows: usize) {
    for i in 0..rows {
        for j in 0..a.ncols() {
            let v = if i < a.nrows() { a[(i, j)] } else { Complex64::new(0.0, 0.0) };
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        }
    }
}

fn read_complex(words: &[f64], rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |i, j| {
        let at = 2 * (i * cols + j);
        Complex64::new(words[at], words[at + 1])
    })
}

/// SHA-256 over the manifest and every blob, in manifest order.
pub fn dataset_digest(dir: &Path) -> Result<String> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    for a in &manifest.arrays {
        hasher.update(fs::read(dir.join(&a.file))?);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
