//! The native `.spa` map container and the ground-truth sidecar.
//!
//! Archive layout, all integers little-endian:
//!
//! ```text
//! magic  "SPA1"                      4 bytes
//! version u32                        currently 1
//! metadata length u32, then that many bytes of UTF-8 JSON
//!     {"metadata": MapMetadata, "grid": WavelengthGrid}
//! width u32, height u32, n_points u32
//! I planes: width*height*n_points f64, pixels row-major
//! V planes: same count of f64
//! crc32 u32 over all preceding bytes
//! ```
//!
//! The payload is 64-bit floats, so a write→read round-trip is lossless.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectra::{MapMetadata, SPMap, SpectraError, StokesSpectrum, WavelengthGrid};
use crate::synth::GroundTruth;
use crate::wire::{ByteReader, ByteWriter, WireError};

pub const MAGIC: &[u8; 4] = b"SPA1";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("bad magic: expected \"SPA1\", found {0:?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported archive version {0}")]
    VersionUnsupported(u32),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("archive truncated")]
    Truncated,
    #[error("bad metadata block: {0}")]
    Metadata(String),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<WireError> for ArchiveError {
    fn from(e: WireError) -> Self {
        match e {
            WireError::Truncated => ArchiveError::Truncated,
            WireError::Crc { stored, computed } => {
                ArchiveError::ChecksumMismatch { stored, computed }
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MetadataBlock {
    metadata: MapMetadata,
    grid: WavelengthGrid,
}

/// Serialize a map to archive bytes.
pub fn encode_archive(map: &SPMap) -> Result<Vec<u8>, ArchiveError> {
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    let block = MetadataBlock {
        metadata: map.metadata.clone(),
        grid: map.grid.clone(),
    };
    let json = serde_json::to_string(&block)
        .map_err(|e| ArchiveError::Metadata(e.to_string()))?;
    w.u32(json.len() as u32);
    w.bytes(json.as_bytes());
    w.u32(map.width as u32);
    w.u32(map.height as u32);
    w.u32(map.grid.n_points as u32);
    for p in &map.pixels {
        w.f64_slice(&p.i);
    }
    for p in &map.pixels {
        w.f64_slice(&p.v);
    }
    Ok(w.finish_with_crc())
}

/// Parse archive bytes back into a map.
pub fn decode_archive(bytes: &[u8]) -> Result<SPMap, ArchiveError> {
    if bytes.len() < 8 {
        return Err(ArchiveError::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(ArchiveError::BadMagic(bytes[..4].to_vec()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(ArchiveError::VersionUnsupported(version));
    }
    let mut r = ByteReader::new_checked(bytes)?;
    r.bytes(4)?; // magic
    r.u32()?; // version
    let meta_len = r.u32()? as usize;
    let json = std::str::from_utf8(r.bytes(meta_len)?)
        .map_err(|e| ArchiveError::Metadata(e.to_string()))?;
    let block: MetadataBlock =
        serde_json::from_str(json).map_err(|e| ArchiveError::Metadata(e.to_string()))?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let n_points = r.u32()? as usize;
    if n_points != block.grid.n_points {
        return Err(ArchiveError::Metadata(format!(
            "dims record {n_points} wavelength samples, grid says {}",
            block.grid.n_points
        )));
    }
    let n_pixels = width * height;
    let mut i_planes = Vec::with_capacity(n_pixels);
    for _ in 0..n_pixels {
        i_planes.push(r.f64_vec(n_points)?);
    }
    // All I planes precede all V planes; the second pass pairs them back up
    // in the same pixel order.
    let mut pixels = Vec::with_capacity(n_pixels);
    for i in i_planes {
        let v = r.f64_vec(n_points)?;
        pixels.push(StokesSpectrum { i, v });
    }
    let map = SPMap::new(width, height, pixels, block.metadata, block.grid)?;
    Ok(map)
}

/// Write a map archive to disk (atomically: temp file then rename).
pub fn write_archive(map: &SPMap, path: &Path) -> Result<(), ArchiveError> {
    let bytes = encode_archive(map)?;
    let tmp = path.with_extension("spa.tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Read a map archive from disk.
pub fn read_archive(path: &Path) -> Result<SPMap, ArchiveError> {
    let bytes = std::fs::read(path)?;
    decode_archive(&bytes)
}

/// Write the ground-truth sidecar (`{"anomalies":[{"x","y","kind"}]}`).
pub fn write_ground_truth(truth: &GroundTruth, path: &Path) -> Result<(), ArchiveError> {
    let json = serde_json::to_string_pretty(truth)
        .map_err(|e| ArchiveError::Metadata(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth, ArchiveError> {
    let json = std::fs::read_to_string(path)?;
    serde_json::from_str(&json).map_err(|e| ArchiveError::Metadata(e.to_string()))
}
