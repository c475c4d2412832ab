//! Corpus manifests and the chunked sample container.
//!
//! A manifest (JSON) lists per-sample seeds, labels, identities and sync
//! flags; every sample is regenerated from it bit for bit. Labels are
//! balanced round-robin and exactly `round(count · sync_fraction)` samples are
//! synced, placed by a seeded shuffle.
//!
//! Container layout (little-endian):
//!
//! ```text
//! magic    8 bytes  "DSYSTOYC"
//! version  u32      1
//! hdr_len  u64
//! header   JSON     {"frames", "height", "width", "chunks": [{seed, label, identity,
//!                    sync_flag, transcript, centers, offset}]}
//! chunks   f64 × (F·H·W·3 + 2F) per sample: pixels, envelope, aperture
//! ```
//!
//! `offset` counts f64 values from the start of the chunk area.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{make_sample, Identity, MotionLabel, Result, ToyError, ToySample, Video};

pub const MANIFEST_VERSION: u32 = 1;
/// Share of synced samples in the default corpus; the rest have mouths that
/// ignore the audio.
pub const DEFAULT_SYNC_FRACTION: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub seed: u64,
    pub label: MotionLabel,
    pub identity: Identity,
    pub sync: bool,
}

impl CorpusEntry {
    pub fn sample(&self) -> Result<ToySample> {
        make_sample(self.seed, self.label.as_str(), self.identity, self.sync)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub seed: u64,
    pub sync_fraction: f64,
    pub entries: Vec<CorpusEntry>,
}

fn io_err(e: impl std::fmt::Display) -> ToyError {
    ToyError::Format(e.to_string())
}

impl CorpusManifest {
    pub fn generate(seed: u64, count: usize, sync_fraction: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_sync = (count as f64 * sync_fraction.clamp(0.0, 1.0)).round() as usize;
        let mut flags: Vec<bool> = (0..count).map(|i| i < n_sync).collect();
        flags.shuffle(&mut rng);
        let entries = flags
            .into_iter()
            .enumerate()
            .map(|(i, sync)| CorpusEntry {
                seed: rng.random(),
                label: MotionLabel::ALL[i % MotionLabel::ALL.len()],
                identity: Identity::random(&mut rng),
                sync,
            })
            .collect();
        Self { version: MANIFEST_VERSION, seed, sync_fraction, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(io_err)?;
        std::fs::write(path, s).map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(io_err)?;
        let m: Self = serde_json::from_str(&s).map_err(io_err)?;
        if m.version != MANIFEST_VERSION {
            return Err(ToyError::Format(format!("manifest version {}", m.version)));
        }
        Ok(m)
    }
}

const MAGIC: &[u8; 8] = b"DSYSTOYC";
const CONTAINER_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ChunkHeader {
    seed: u64,
    label: MotionLabel,
    identity: Identity,
    sync_flag: bool,
    transcript: String,
    centers: Vec<(f64, f64)>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct ContainerHeader {
    frames: usize,
    height: usize,
    width: usize,
    chunks: Vec<ChunkHeader>,
}

pub fn write_container(path: &Path, samples: &[ToySample]) -> Result<()> {
    let (frames, height, width) = samples.first().map(|s| (s.video.frames, s.video.height, s.video.width)).unwrap_or_default();
    let mut chunks = Vec::with_capacity(samples.len());
    let mut data: Vec<u8> = Vec::new();
    let mut offset = 0;
    for s in samples {
        if (s.video.frames, s.video.height, s.video.width) != (frames, height, width) {
            return Err(ToyError::Shape("container samples differ in shape".into()));
        }
        chunks.push(ChunkHeader {
            seed: s.seed,
            label: s.label,
            identity: s.identity,
            sync_flag: s.sync_flag,
            transcript: s.transcript.clone(),
            centers: s.centers.clone(),
            offset,
        });
        for v in s.video.pixels.iter().chain(&s.envelope).chain(&s.aperture) {
            data.extend_from_slice(&v.to_le_bytes());
            offset += 1;
        }
    }
    let header = serde_json::to_vec(&ContainerHeader { frames, height, width, chunks }).map_err(io_err)?;
    let mut out = Vec::with_capacity(20 + header.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    std::fs::write(path, out).map_err(io_err)
}

pub fn read_container(path: &Path) -> Result<Vec<ToySample>> {
    let bytes = std::fs::read(path).map_err(io_err)?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(ToyError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CONTAINER_VERSION {
        return Err(ToyError::Format(format!("container version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header: ContainerHeader =
        serde_json::from_slice(bytes.get(20..20 + hlen).ok_or_else(|| io_err("truncated header"))?).map_err(io_err)?;
    let values: Vec<f64> =
        bytes[20 + hlen..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let npix = header.frames * header.height * header.width * super::CHANNELS;
    let per = npix + 2 * header.frames;
    header
        .chunks
        .into_iter()
        .map(|c| {
            let v = values.get(c.offset..c.offset + per).ok_or_else(|| io_err("truncated chunk"))?;
            Ok(ToySample {
                seed: c.seed,
                video: Video { frames: header.frames, height: header.height, width: header.width, pixels: v[..npix].to_vec() },
                envelope: v[npix..npix + header.frames].to_vec(),
                aperture: v[npix + header.frames..].to_vec(),
                label: c.label,
                identity: c.identity,
                transcript: c.transcript,
                sync_flag: c.sync_flag,
                centers: c.centers,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_statistics_and_determinism() {
        let m = CorpusManifest::generate(9, 200, DEFAULT_SYNC_FRACTION);
        assert_eq!(m, CorpusManifest::generate(9, 200, DEFAULT_SYNC_FRACTION));
        assert_eq!(m.entries.iter().filter(|e| e.sync).count(), 60);
        for l in MotionLabel::ALL {
            assert_eq!(m.entries.iter().filter(|e| e.label == l).count(), 50);
        }
    }

    #[test]
    fn manifest_and_container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = CorpusManifest::generate(1, 5, 0.4);
        let mp = dir.path().join("manifest.json");
        m.save(&mp).unwrap();
        assert_eq!(CorpusManifest::load(&mp).unwrap(), m);
        let samples: Vec<ToySample> = m.entries.iter().map(|e| e.sample().unwrap()).collect();
        let cp = dir.path().join("corpus.bin");
        write_container(&cp, &samples).unwrap();
        assert_eq!(read_container(&cp).unwrap(), samples);
    }
}
