//! Minimal bit-exact FITS subset: primary HDU only, BITPIX 16 / −32 / −64,
//! BSCALE/BZERO scaling, and a scan-directory importer that assembles an
//! [`SPMap`] from per-slit-position files.
//!
//! Raw payloads are kept alongside the decoded values so a parsed file
//! re-writes byte for byte.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::spectra::{MapMetadata, ObsMode, SPMap, SpectraError, StokesSpectrum, WavelengthGrid};

/// FITS block size; headers and data sections are padded to multiples of it.
pub const BLOCK: usize = 2880;
/// Header card length.
pub const CARD: usize = 80;

#[derive(Debug, Error)]
pub enum FitsError {
    #[error("file length {0} is not a positive multiple of 2880")]
    Truncated(usize),
    #[error("no END card found in header")]
    MissingEnd,
    #[error("unsupported BITPIX {0} (supported: 16, -32, -64)")]
    UnsupportedBitpix(i64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("inconsistent header/array for write: {0}")]
    InconsistentShape(String),
    #[error("scan files disagree: {0}")]
    InconsistentShapes(String),
    #[error("no FITS files in {0}")]
    EmptyDirectory(PathBuf),
    #[error("bad header card: {0}")]
    BadCard(String),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Element type of the primary HDU, with raw storage for exact re-writes.
#[derive(Debug, Clone, PartialEq)]
pub enum FitsData {
    I16(Vec<i16>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl FitsData {
    pub fn bitpix(&self) -> i64 {
        match self {
            FitsData::I16(_) => 16,
            FitsData::F32(_) => -32,
            FitsData::F64(_) => -64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            FitsData::I16(v) => v.len(),
            FitsData::F32(v) => v.len(),
            FitsData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Primary-HDU array: shape from NAXISn (axis 1 fastest-varying), raw
/// elements, and the BZERO/BSCALE pair used to decode physical values.
#[derive(Debug, Clone, PartialEq)]
pub struct FitsArray {
    pub shape: Vec<usize>,
    pub data: FitsData,
    pub bscale: f64,
    pub bzero: f64,
}

impl FitsArray {
    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Self {
        FitsArray {
            shape,
            data: FitsData::F32(data),
            bscale: 1.0,
            bzero: 0.0,
        }
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Self {
        FitsArray {
            shape,
            data: FitsData::F64(data),
            bscale: 1.0,
            bzero: 0.0,
        }
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    /// Decoded physical values: `BZERO + BSCALE * raw`.
    pub fn values(&self) -> Vec<f64> {
        let scale = |r: f64| self.bzero + self.bscale * r;
        match &self.data {
            FitsData::I16(v) => v.iter().map(|&r| scale(r as f64)).collect(),
            FitsData::F32(v) => v.iter().map(|&r| scale(r as f64)).collect(),
            FitsData::F64(v) => v.iter().map(|&r| scale(r)).collect(),
        }
    }

    /// Flat index for multi-axis coordinates (axis 1 fastest).
    pub fn flat_index(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.shape.len());
        let mut idx = 0;
        for (axis, &c) in coords.iter().enumerate().rev() {
            idx = idx * self.shape[axis] + c;
        }
        idx
    }
}

/// Parsed primary header: the verbatim cards (through END) plus the decoded
/// keys this subset understands.
#[derive(Debug, Clone, PartialEq)]
pub struct FitsHeader {
    /// All cards up to and including END, 80 bytes each.
    pub cards: Vec<String>,
    pub simple: bool,
    pub bitpix: i64,
    pub naxis: Vec<usize>,
    pub bscale: f64,
    pub bzero: f64,
}

fn format_card(keyword: &str, value: &str) -> String {
    let mut card = format!("{keyword:<8}= {value:>20}");
    card.push_str(&" ".repeat(CARD - card.len()));
    card
}

impl FitsHeader {
    /// Standard primary header for the given element type and shape.
    pub fn new_primary(bitpix: i64, shape: &[usize]) -> Self {
        let mut cards = Vec::new();
        cards.push(format_card("SIMPLE", "T"));
        cards.push(format_card("BITPIX", &bitpix.to_string()));
        cards.push(format_card("NAXIS", &shape.len().to_string()));
        for (i, &n) in shape.iter().enumerate() {
            cards.push(format_card(&format!("NAXIS{}", i + 1), &n.to_string()));
        }
        let mut end = String::from("END");
        end.push_str(&" ".repeat(CARD - 3));
        cards.push(end);
        FitsHeader {
            cards,
            simple: true,
            bitpix,
            naxis: shape.to_vec(),
            bscale: 1.0,
            bzero: 0.0,
        }
    }

    /// Insert BSCALE/BZERO cards before END and record the values.
    pub fn with_scaling(mut self, bscale: f64, bzero: f64) -> Self {
        let end = self.cards.pop().expect("header always has END");
        self.cards.push(format_card("BSCALE", &format!("{bscale}")));
        self.cards.push(format_card("BZERO", &format!("{bzero}")));
        self.cards.push(end);
        self.bscale = bscale;
        self.bzero = bzero;
        self
    }

    pub fn element_count(&self) -> usize {
        self.naxis.iter().product()
    }
}

fn card_keyword(card: &str) -> &str {
    card[..8.min(card.len())].trim_end()
}

fn card_value(card: &str) -> Option<&str> {
    if card.len() < 10 || &card[8..10] != "= " {
        return None;
    }
    let rest = &card[10..];
    let value = match rest.find('/') {
        Some(pos) => &rest[..pos],
        None => rest,
    };
    Some(value.trim())
}

fn parse_i64(card: &str) -> Result<i64, FitsError> {
    card_value(card)
        .and_then(|v| v.parse::<i64>().ok())
        .ok_or_else(|| FitsError::BadCard(card.trim_end().to_string()))
}

fn parse_f64(card: &str) -> Result<f64, FitsError> {
    card_value(card)
        // FITS allows FORTRAN-style exponents like 1.0D3.
        .and_then(|v| v.replace(['D', 'd'], "E").parse::<f64>().ok())
        .ok_or_else(|| FitsError::BadCard(card.trim_end().to_string()))
}

/// Parse a primary HDU. Unknown cards are retained verbatim but ignored.
pub fn parse_fits(bytes: &[u8]) -> Result<(FitsHeader, FitsArray), FitsError> {
    if bytes.is_empty() || bytes.len() % BLOCK != 0 {
        return Err(FitsError::Truncated(bytes.len()));
    }
    // Scan cards block by block until END.
    let mut cards = Vec::new();
    let mut end_offset = None;
    'blocks: for block_start in (0..bytes.len()).step_by(BLOCK) {
        for card_start in (block_start..block_start + BLOCK).step_by(CARD) {
            let raw = &bytes[card_start..card_start + CARD];
            let card: String = raw.iter().map(|&b| b as char).collect();
            let keyword = card_keyword(&card);
            if keyword == "END" {
                cards.push(card);
                end_offset = Some(block_start + BLOCK);
                break 'blocks;
            }
            cards.push(card);
        }
    }
    let data_start = end_offset.ok_or(FitsError::MissingEnd)?;

    let mut simple = false;
    let mut bitpix: Option<i64> = None;
    let mut naxis_count: Option<usize> = None;
    let mut naxis_n: Vec<Option<usize>> = Vec::new();
    let mut bscale = 1.0;
    let mut bzero = 0.0;
    for card in &cards {
        let keyword = card_keyword(card);
        match keyword {
            "SIMPLE" => {
                simple = card_value(card) == Some("T");
            }
            "BITPIX" => bitpix = Some(parse_i64(card)?),
            "NAXIS" => {
                let n = parse_i64(card)?;
                if n < 0 {
                    return Err(FitsError::BadCard(card.trim_end().to_string()));
                }
                naxis_count = Some(n as usize);
                naxis_n = vec![None; n as usize];
            }
            "BSCALE" => bscale = parse_f64(card)?,
            "BZERO" => bzero = parse_f64(card)?,
            k if k.starts_with("NAXIS") => {
                let axis: usize = k[5..]
                    .parse()
                    .map_err(|_| FitsError::BadCard(card.trim_end().to_string()))?;
                let n = parse_i64(card)?;
                if n <= 0 {
                    return Err(FitsError::ShapeMismatch(format!("{k} = {n} must be > 0")));
                }
                if axis >= 1 && axis <= naxis_n.len() {
                    naxis_n[axis - 1] = Some(n as usize);
                }
            }
            _ => {}
        }
    }
    let bitpix = bitpix.ok_or_else(|| FitsError::BadCard("missing BITPIX".into()))?;
    if !matches!(bitpix, 16 | -32 | -64) {
        return Err(FitsError::UnsupportedBitpix(bitpix));
    }
    let naxis_count =
        naxis_count.ok_or_else(|| FitsError::BadCard("missing NAXIS".into()))?;
    let mut shape = Vec::with_capacity(naxis_count);
    for (i, n) in naxis_n.iter().enumerate() {
        shape.push(n.ok_or_else(|| {
            FitsError::ShapeMismatch(format!("NAXIS{} missing", i + 1))
        })?);
    }

    let count: usize = shape.iter().product::<usize>() * usize::from(naxis_count > 0);
    let elem_size = (bitpix.unsigned_abs() / 8) as usize;
    let need = count * elem_size;
    if bytes.len() < data_start + need {
        return Err(FitsError::Truncated(bytes.len()));
    }
    let payload = &bytes[data_start..data_start + need];
    let data = match bitpix {
        16 => FitsData::I16(
            payload
                .chunks_exact(2)
                .map(|c| i16::from_be_bytes([c[0], c[1]]))
                .collect(),
        ),
        -32 => FitsData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_be_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
        -64 => FitsData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_be_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        _ => unreachable!(),
    };

    let header = FitsHeader {
        cards,
        simple,
        bitpix,
        naxis: shape.clone(),
        bscale,
        bzero,
    };
    let array = FitsArray {
        shape,
        data,
        bscale,
        bzero,
    };
    Ok((header, array))
}

/// Serialize a primary HDU; the inverse of [`parse_fits`].
pub fn write_fits(header: &FitsHeader, array: &FitsArray) -> Result<Vec<u8>, FitsError> {
    if header.bitpix != array.data.bitpix() {
        return Err(FitsError::InconsistentShape(format!(
            "header BITPIX {} vs data {}",
            header.bitpix,
            array.data.bitpix()
        )));
    }
    if header.naxis != array.shape {
        return Err(FitsError::InconsistentShape(format!(
            "header NAXIS {:?} vs array shape {:?}",
            header.naxis, array.shape
        )));
    }
    if array.element_count() != array.data.len() && !header.naxis.is_empty() {
        return Err(FitsError::InconsistentShape(format!(
            "shape {:?} implies {} elements, data has {}",
            array.shape,
            array.element_count(),
            array.data.len()
        )));
    }

    let mut out = Vec::new();
    for card in &header.cards {
        if card.len() != CARD {
            return Err(FitsError::BadCard(format!(
                "card has {} bytes, want {CARD}",
                card.len()
            )));
        }
        out.extend_from_slice(card.as_bytes());
    }
    // Pad the header to a block boundary with blank cards.
    while out.len() % BLOCK != 0 {
        out.extend_from_slice(&[b' '; CARD]);
    }

    let data_start = out.len();
    match &array.data {
        FitsData::I16(v) => {
            for &x in v {
                out.extend_from_slice(&x.to_be_bytes());
            }
        }
        FitsData::F32(v) => {
            for &x in v {
                out.extend_from_slice(&x.to_be_bytes());
            }
        }
        FitsData::F64(v) => {
            for &x in v {
                out.extend_from_slice(&x.to_be_bytes());
            }
        }
    }
    // Data fill is zero bytes, headers use blanks.
    if out.len() > data_start {
        while out.len() % BLOCK != 0 {
            out.push(0);
        }
    }
    Ok(out)
}

/// Which physical quantity each FITS axis carries in a scan file. Axis order
/// is (NAXIS1, NAXIS2, NAXIS3), fastest first. Real Hinode Level-1 layouts
/// vary, hence the switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AxisConvention {
    /// (wavelength, stokes, slit) — the default.
    #[default]
    WaveStokesSlit,
    /// (wavelength, slit, stokes).
    WaveSlitStokes,
    /// (stokes, wavelength, slit).
    StokesWaveSlit,
}

impl AxisConvention {
    /// Axis numbers (0-based) of (wavelength, stokes, slit).
    fn roles(&self) -> (usize, usize, usize) {
        match self {
            AxisConvention::WaveStokesSlit => (0, 1, 2),
            AxisConvention::WaveSlitStokes => (0, 2, 1),
            AxisConvention::StokesWaveSlit => (1, 0, 2),
        }
    }
}

impl std::str::FromStr for AxisConvention {
    type Err = FitsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "wave-stokes-slit" => Ok(AxisConvention::WaveStokesSlit),
            "wave-slit-stokes" => Ok(AxisConvention::WaveSlitStokes),
            "stokes-wave-slit" => Ok(AxisConvention::StokesWaveSlit),
            other => Err(FitsError::BadCard(format!(
                "unknown axis convention {other:?}"
            ))),
        }
    }
}

const STOKES_I: usize = 0;
const STOKES_V: usize = 3;

/// Assemble an [`SPMap`] from a directory of per-slit-position scan files.
///
/// Files are taken in lexicographic filename order (one file per slit
/// position, so the file index is the map x coordinate). Stokes I and V are
/// extracted, Q and U discarded, and each spectrum is divided by its I
/// continuum-window mean so stored units are continuum-relative.
pub fn import_scan_directory(
    dir: &Path,
    convention: AxisConvention,
) -> Result<SPMap, FitsError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .map(|e| {
                        let e = e.to_ascii_lowercase();
                        e == "fits" || e == "fit" || e == "fts"
                    })
                    .unwrap_or(false)
        })
        .collect();
    files.sort_by_key(|p| p.file_name().map(|n| n.to_os_string()));
    if files.is_empty() {
        return Err(FitsError::EmptyDirectory(dir.to_path_buf()));
    }

    let (wave_axis, stokes_axis, slit_axis) = convention.roles();
    let mut n_wave = 0usize;
    let mut n_slit = 0usize;
    let mut arrays = Vec::with_capacity(files.len());
    for path in &files {
        let bytes = std::fs::read(path)?;
        let (_, array) = parse_fits(&bytes)?;
        if array.shape.len() != 3 {
            return Err(FitsError::ShapeMismatch(format!(
                "{}: expected 3 axes, found {:?}",
                path.display(),
                array.shape
            )));
        }
        let (w, s, l) = (
            array.shape[wave_axis],
            array.shape[stokes_axis],
            array.shape[slit_axis],
        );
        if s < 4 {
            return Err(FitsError::ShapeMismatch(format!(
                "{}: stokes axis has {s} planes, need 4",
                path.display()
            )));
        }
        if arrays.is_empty() {
            n_wave = w;
            n_slit = l;
        } else if w != n_wave || l != n_slit {
            return Err(FitsError::InconsistentShapes(format!(
                "{}: ({w} wavelengths, {l} slit pixels) vs first file ({n_wave}, {n_slit})",
                path.display()
            )));
        }
        arrays.push(array);
    }

    let grid = WavelengthGrid {
        n_points: n_wave,
        ..WavelengthGrid::default()
    };
    grid.validate()?;

    let width = arrays.len();
    let height = n_slit;
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        for (_x, array) in arrays.iter().enumerate() {
            let values = array.values();
            let mut coords = [0usize; 3];
            coords[slit_axis] = y;
            let mut fetch = |stokes: usize, k: usize| {
                coords[stokes_axis] = stokes;
                coords[wave_axis] = k;
                values[array.flat_index(&coords)]
            };
            let mut i: Vec<f64> = (0..n_wave).map(|k| fetch(STOKES_I, k)).collect();
            let mut v: Vec<f64> = (0..n_wave).map(|k| fetch(STOKES_V, k)).collect();
            let window = grid.continuum_slice(&i);
            let cmean = window.iter().sum::<f64>() / window.len() as f64;
            if cmean > f64::EPSILON {
                for x in i.iter_mut() {
                    *x = (*x / cmean).max(0.0);
                }
                for x in v.iter_mut() {
                    *x /= cmean;
                }
            } else {
                for x in i.iter_mut() {
                    *x = x.max(0.0);
                }
            }
            pixels.push(StokesSpectrum::new(i, v)?);
        }
    }

    // There are no standard metadata cards in this subset; derive a datetime
    // from the directory name when it follows the yyyymmdd_hhmmss scheme.
    let dirname = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("")
        .to_string();
    let datetime = if dirname.len() == 15
        && dirname.as_bytes()[8] == b'_'
        && dirname
            .chars()
            .enumerate()
            .all(|(i, c)| i == 8 || c.is_ascii_digit())
    {
        dirname
    } else {
        "00000000_000000".to_string()
    };
    let map = SPMap::new(
        width,
        height,
        pixels,
        MapMetadata::for_mode(datetime, ObsMode::QT),
        grid,
    )?;
    Ok(map)
}
