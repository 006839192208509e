//! Binary scene container: a length-prefixed JSON manifest followed by one
//! record per scene (64-bit truth, 32-bit interleaved complex snapshot).

use ndarray::Array2;
use num_complex::Complex;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoding::{encode, CellGridSpec};
use crate::error::{DataError, Error, Result};
use crate::rng::substream;
use crate::signal::{add_noise, sample_paths, sigma_for_snr, synthesize_channel, PathSet, SamplingGrid, SceneConfig, Snapshot};

pub const MAGIC: &[u8; 8] = b"DDSCENE\0";
pub const SCHEMA_VERSION: u32 = 1;

/// Scene draws rejected for overflowing a cell before giving up.
const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub scene: SceneConfig,
    pub grid: SamplingGrid,
    pub count: usize,
    /// Byte offset of each record, relative to the first record.
    pub offsets: Vec<u64>,
    pub seed: u64,
    #[serde(default)]
    pub config_hash: String,
    pub created_unix: u64,
    /// Hex SHA-256 of the record section.
    pub payload_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub truth: PathSet<f64>,
    pub sigma: f64,
    pub snr_db: f64,
    pub data: Array2<Complex<f32>>,
}

impl SceneRecord {
    pub fn snapshot(&self, grid: &SamplingGrid) -> Result<Snapshot<f64>> {
        let data = self.data.mapv(|z| Complex::new(f64::from(z.re), f64::from(z.im)));
        Ok(Snapshot::new(data, *grid, self.sigma)?.with_truth(self.truth.clone()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<SceneRecord>,
}

/// Draws scene `index` from its own random stream. With `cells` set, draws
/// that would overflow a cell are rejected and redrawn from the same stream.
pub fn draw_record(scene: &SceneConfig, grid: &SamplingGrid, cells: Option<&CellGridSpec>, seed: u64, index: u64) -> Result<SceneRecord> {
    let mut rng = substream(seed, &[index]);
    for _ in 0..MAX_REDRAWS {
        let truth = sample_paths::<f64>(scene, &mut rng)?;
        let [lo, hi] = scene.snr_range_db;
        let snr_db = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
        if let Some(spec) = cells {
            match encode(&truth, spec) {
                Err(Error::CellOverflow { .. }) => continue,
                other => {
                    other?;
                }
            }
        }
        let clean = synthesize_channel(&truth, grid)?;
        let sigma = if truth.is_empty() { 1.0 } else { sigma_for_snr(&clean, snr_db)? };
        let noisy = add_noise(&clean, sigma, &mut rng)?;
        let data = noisy.mapv(|z| Complex::new(z.re as f32, z.im as f32));
        return Ok(SceneRecord { truth, sigma, snr_db, data });
    }
    Err(Error::Config(format!("no scene without cell overflow in {MAX_REDRAWS} draws")))
}

/// `count` scenes drawn in parallel; the result depends only on the seed.
pub fn generate(scene: &SceneConfig, grid: &SamplingGrid, cells: Option<&CellGridSpec>, count: usize, seed: u64) -> Result<Vec<SceneRecord>> {
    scene.validate()?;
    grid.validate()?;
    (0..count as u64).into_par_iter().map(|i| draw_record(scene, grid, cells, seed, i)).collect()
}

fn encode_record(r: &SceneRecord, out: &mut Vec<u8>) {
    out.extend_from_slice(&(r.truth.len() as u32).to_le_bytes());
    for (g, t, a) in r.truth.iter() {
        for v in [g.re, g.im, t, a] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&r.sigma.to_le_bytes());
    out.extend_from_slice(&r.snr_db.to_le_bytes());
    for z in r.data.iter() {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Creation time: `SOURCE_DATE_EPOCH` when set, the wall clock otherwise.
pub fn creation_time() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or_else(|| std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
}

pub fn to_bytes(scene: &SceneConfig, grid: &SamplingGrid, records: &[SceneRecord], seed: u64, config_hash: &str, created_unix: u64) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut offsets = Vec::with_capacity(records.len());
    for r in records {
        if r.data.dim() != (grid.n_freq, grid.n_time) {
            return Err(Error::Validation("record shape does not match the grid".into()));
        }
        offsets.push(payload.len() as u64);
        encode_record(r, &mut payload);
    }
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        scene: scene.clone(),
        grid: *grid,
        count: records.len(),
        offsets,
        seed,
        config_hash: config_hash.to_string(),
        created_unix,
        payload_sha256: hex(&Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Validation(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn take<'a>(buf: &'a [u8], pos: &mut usize, n: usize, what: &'static str) -> Result<&'a [u8]> {
    let end = pos.checked_add(n).filter(|&e| e <= buf.len()).ok_or(DataError::Truncated(what))?;
    let s = &buf[*pos..end];
    *pos = end;
    Ok(s)
}

fn f64_at(buf: &[u8], pos: &mut usize, what: &'static str) -> Result<f64> {
    Ok(f64::from_le_bytes(take(buf, pos, 8, what)?.try_into().expect("8 bytes")))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
    let mut pos = 0;
    if take(bytes, &mut pos, 8, "magic")? != MAGIC {
        return Err(DataError::BadMagic.into());
    }
    let version = u32::from_le_bytes(take(bytes, &mut pos, 4, "version")?.try_into().expect("4 bytes"));
    if version != SCHEMA_VERSION {
        return Err(DataError::Version { found: version, expected: SCHEMA_VERSION }.into());
    }
    let len = u64::from_le_bytes(take(bytes, &mut pos, 8, "manifest length")?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| DataError::Truncated("manifest"))?;
    let manifest: DatasetManifest =
        serde_json::from_slice(take(bytes, &mut pos, len, "manifest")?).map_err(|e| DataError::Malformed(e.to_string()))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(DataError::Version { found: manifest.schema_version, expected: SCHEMA_VERSION }.into());
    }
    if manifest.offsets.len() != manifest.count || manifest.offsets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DataError::Malformed("record offsets are inconsistent with the count".into()).into());
    }
    manifest.grid.validate().map_err(|e| DataError::Malformed(e.to_string()))?;
    let payload = &bytes[pos..];
    let (nf, nt) = (manifest.grid.n_freq, manifest.grid.n_time);
    let mut records = Vec::with_capacity(manifest.count);
    let mut at = 0usize;
    for (i, &off) in manifest.offsets.iter().enumerate() {
        if off as usize != at {
            return Err(DataError::Malformed(format!("record {i} is not at its manifest offset")).into());
        }
        let p = u32::from_le_bytes(take(payload, &mut at, 4, "record header")?.try_into().expect("4 bytes")) as usize;
        let mut fields = Vec::with_capacity(4 * p.min(1 << 16));
        for _ in 0..4 * p {
            fields.push(f64_at(payload, &mut at, "record truth")?);
        }
        let sigma = f64_at(payload, &mut at, "record sigma")?;
        let snr_db = f64_at(payload, &mut at, "record snr")?;
        let raw = take(payload, &mut at, nf * nt * 8, "record data")?;
        let values: Vec<Complex<f32>> = raw
            .chunks_exact(8)
            .map(|c| Complex::new(f32::from_le_bytes(c[..4].try_into().expect("4")), f32::from_le_bytes(c[4..].try_into().expect("4"))))
            .collect();
        let data = Array2::from_shape_vec((nf, nt), values).expect("length checked");
        let gains = fields.chunks(4).map(|c| Complex::new(c[0], c[1])).collect();
        let delays = fields.chunks(4).map(|c| c[2]).collect();
        let dopplers = fields.chunks(4).map(|c| c[3]).collect();
        let truth = PathSet::new(gains, delays, dopplers).map_err(|e| DataError::Malformed(e.to_string()))?;
        records.push(SceneRecord { truth, sigma, snr_db, data });
    }
    if at != payload.len() {
        return Err(DataError::Malformed("trailing bytes after the last record".into()).into());
    }
    if hex(&Sha256::digest(payload)) != manifest.payload_sha256 {
        return Err(DataError::Checksum.into());
    }
    Ok(Dataset { manifest, records })
}

/// Writes through a temporary file so a failed write leaves nothing behind.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let tmp = path.with_extension("partial");
    let result = (|| -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn read(path: &std::path::Path) -> Result<Dataset> {
    from_bytes(&std::fs::read(path)?)
}
