//! Domain types for Stokes I/V spectra and spectro-polarimetric maps, plus
//! normalization, denormalization and field-of-view cropping.
//!
//! All types are immutable values after construction and the operations are
//! pure functions, so everything here is safe to share across threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Difference below which an I profile counts as constant and cannot be
/// min-max scaled.
pub const EPS_DEGENERATE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SpectraError {
    #[error("degenerate spectrum: Stokes I range {range:.3e} below {eps:.1e}")]
    DegenerateSpectrum { range: f64, eps: f64 },
    #[error("crop rectangle ({x0},{y0})+{w}x{h} exceeds map bounds {width}x{height}")]
    OutOfBounds {
        x0: usize,
        y0: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid wavelength grid: {0}")]
    InvalidGrid(String),
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("invalid metadata: {0}")]
    InvalidMetadata(String),
    #[error("invalid map: {0}")]
    InvalidMap(String),
}

/// Sampling geometry of the spectral axis.
///
/// The grid is positioned so that the midpoint of the two line centers falls
/// at the center of the sample range: sample `k` lies at
/// `mean(line_centers) + (k - (n_points-1)/2) * dispersion` (in Å). With the
/// defaults this puts the 630.15 nm line near sample 32 and the 630.25 nm
/// line near sample 79, leaving samples 0..=15 as clean blue continuum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavelengthGrid {
    /// Number of wavelength samples.
    pub n_points: usize,
    /// Å per pixel along the dispersion direction.
    pub dispersion: f64,
    /// The Fe I line pair, in nm.
    pub line_centers_nm: [f64; 2],
    /// Inclusive sample range treated as continuum for noise estimation.
    pub continuum_window: (usize, usize),
}

impl WavelengthGrid {
    pub const DEFAULT_N_POINTS: usize = 112;
    pub const DEFAULT_DISPERSION: f64 = 0.021549;

    pub fn new(
        n_points: usize,
        dispersion: f64,
        line_centers_nm: [f64; 2],
        continuum_window: (usize, usize),
    ) -> Result<Self, SpectraError> {
        let grid = WavelengthGrid {
            n_points,
            dispersion,
            line_centers_nm,
            continuum_window,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), SpectraError> {
        if self.n_points < 32 {
            return Err(SpectraError::InvalidGrid(format!(
                "n_points {} < 32",
                self.n_points
            )));
        }
        if !(self.dispersion > 0.0) || !self.dispersion.is_finite() {
            return Err(SpectraError::InvalidGrid(format!(
                "dispersion {} must be positive",
                self.dispersion
            )));
        }
        let (lo, hi) = self.continuum_window;
        if lo > hi || hi >= self.n_points {
            return Err(SpectraError::InvalidGrid(format!(
                "continuum window {}..={} outside [0, {})",
                lo, hi, self.n_points
            )));
        }
        Ok(())
    }

    /// Wavelength of sample `k` in Å.
    pub fn wavelength(&self, k: usize) -> f64 {
        let mid = 10.0 * (self.line_centers_nm[0] + self.line_centers_nm[1]) / 2.0;
        mid + (k as f64 - (self.n_points as f64 - 1.0) / 2.0) * self.dispersion
    }

    /// Line-center wavelengths in Å.
    pub fn line_centers_angstrom(&self) -> [f64; 2] {
        [
            self.line_centers_nm[0] * 10.0,
            self.line_centers_nm[1] * 10.0,
        ]
    }

    /// Number of samples in the continuum window.
    pub fn continuum_len(&self) -> usize {
        self.continuum_window.1 - self.continuum_window.0 + 1
    }

    /// The continuum samples of a profile.
    pub fn continuum_slice<'a>(&self, values: &'a [f64]) -> &'a [f64] {
        &values[self.continuum_window.0..=self.continuum_window.1]
    }
}

impl Default for WavelengthGrid {
    fn default() -> Self {
        WavelengthGrid {
            n_points: Self::DEFAULT_N_POINTS,
            dispersion: Self::DEFAULT_DISPERSION,
            line_centers_nm: [630.15, 630.25],
            continuum_window: (0, 15),
        }
    }
}

/// One pixel's Stokes I and V profiles, in continuum-relative units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StokesSpectrum {
    /// Total intensity, non-negative.
    pub i: Vec<f64>,
    /// Circular polarization, signed, same units as `i`.
    pub v: Vec<f64>,
}

impl StokesSpectrum {
    pub fn new(i: Vec<f64>, v: Vec<f64>) -> Result<Self, SpectraError> {
        let s = StokesSpectrum { i, v };
        s.validate_lengths()?;
        Ok(s)
    }

    fn validate_lengths(&self) -> Result<(), SpectraError> {
        if self.i.len() != self.v.len() {
            return Err(SpectraError::InvalidSpectrum(format!(
                "I has {} samples, V has {}",
                self.i.len(),
                self.v.len()
            )));
        }
        self.validate_values()
    }

    fn validate_values(&self) -> Result<(), SpectraError> {
        for (k, &x) in self.i.iter().enumerate() {
            if !x.is_finite() {
                return Err(SpectraError::InvalidSpectrum(format!(
                    "I[{k}] = {x} is not finite"
                )));
            }
            if x < 0.0 {
                return Err(SpectraError::InvalidSpectrum(format!("I[{k}] = {x} < 0")));
            }
        }
        for (k, &x) in self.v.iter().enumerate() {
            if !x.is_finite() {
                return Err(SpectraError::InvalidSpectrum(format!(
                    "V[{k}] = {x} is not finite"
                )));
            }
        }
        Ok(())
    }

    /// Check the spectrum against a grid.
    pub fn validate(&self, grid: &WavelengthGrid) -> Result<(), SpectraError> {
        if self.i.len() != grid.n_points {
            return Err(SpectraError::InvalidSpectrum(format!(
                "spectrum has {} samples, grid expects {}",
                self.i.len(),
                grid.n_points
            )));
        }
        self.validate_lengths()
    }

    pub fn n_points(&self) -> usize {
        self.i.len()
    }
}

/// Observation program of a map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObsMode {
    /// Normal ("quiet") program: 1.6 s integration, slit step 1.
    QT,
    /// Flare program: 0.8 s integration, slit step 2.
    FL,
}

impl ObsMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObsMode::QT => "QT",
            ObsMode::FL => "FL",
        }
    }

    /// Integration time in seconds for this program.
    pub fn default_integration_time(&self) -> f64 {
        match self {
            ObsMode::QT => 1.6,
            ObsMode::FL => 0.8,
        }
    }

    /// Slit-scan step count for this program.
    pub fn default_slit_step(&self) -> u32 {
        match self {
            ObsMode::QT => 1,
            ObsMode::FL => 2,
        }
    }
}

impl std::str::FromStr for ObsMode {
    type Err = SpectraError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "QT" => Ok(ObsMode::QT),
            "FL" => Ok(ObsMode::FL),
            other => Err(SpectraError::InvalidMetadata(format!(
                "unknown observation mode {other:?}"
            ))),
        }
    }
}

/// Per-map observation metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMetadata {
    /// `yyyymmdd_hhmmss`.
    pub observed_datetime: String,
    pub obs_mode: ObsMode,
    /// Arcsec per pixel along the slit.
    pub slit_scale: f64,
    /// Seconds per slit position.
    pub integration_time: f64,
    /// Step size of slit scanning.
    pub slit_step: u32,
}

impl MapMetadata {
    /// Metadata with the standard parameters of an observation mode.
    pub fn for_mode(observed_datetime: impl Into<String>, mode: ObsMode) -> Self {
        MapMetadata {
            observed_datetime: observed_datetime.into(),
            obs_mode: mode,
            slit_scale: 0.317,
            integration_time: mode.default_integration_time(),
            slit_step: mode.default_slit_step(),
        }
    }

    pub fn validate(&self) -> Result<(), SpectraError> {
        if !(self.integration_time > 0.0) {
            return Err(SpectraError::InvalidMetadata(format!(
                "integration_time {} must be positive",
                self.integration_time
            )));
        }
        if self.slit_step < 1 {
            return Err(SpectraError::InvalidMetadata(
                "slit_step must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// A 2D spectro-polarimetric map. `width` counts slit-scan steps (x),
/// `height` counts pixels along the slit (y); pixel storage is row-major,
/// `index = y * width + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SPMap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<StokesSpectrum>,
    pub metadata: MapMetadata,
    pub grid: WavelengthGrid,
}

impl SPMap {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<StokesSpectrum>,
        metadata: MapMetadata,
        grid: WavelengthGrid,
    ) -> Result<Self, SpectraError> {
        if pixels.len() != width * height {
            return Err(SpectraError::InvalidMap(format!(
                "{} pixels for a {}x{} map",
                pixels.len(),
                width,
                height
            )));
        }
        grid.validate()?;
        metadata.validate()?;
        for p in &pixels {
            p.validate(&grid)?;
        }
        Ok(SPMap {
            width,
            height,
            pixels,
            metadata,
            grid,
        })
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> &StokesSpectrum {
        &self.pixels[y * self.width + x]
    }

    pub fn pixel_index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }
}

/// Per-spectrum scaling parameters recorded by [`normalize_spectrum`] so the
/// transform can be inverted exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub i_min: f64,
    pub i_max: f64,
    pub v_mean: f64,
}

/// Normalization granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum NormScope {
    /// Scale each spectrum by its own min/max/mean (the default).
    #[default]
    PerSpectrum,
    /// Scale every spectrum of a map by the map-wide min/max/mean.
    PerMap,
}

impl std::str::FromStr for NormScope {
    type Err = SpectraError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-spectrum" => Ok(NormScope::PerSpectrum),
            "per-map" => Ok(NormScope::PerMap),
            other => Err(SpectraError::InvalidMetadata(format!(
                "unknown normalization scope {other:?} (expected per-spectrum or per-map)"
            ))),
        }
    }
}

fn min_max(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
    }
    (lo, hi)
}

fn mean(values: &[f64]) -> f64 {
    crate::parallel::pairwise_sum(values) / values.len() as f64
}

/// Apply min-max scaling to I and zero-mean shifting to V with explicit
/// parameters.
pub fn apply_norm_params(s: &StokesSpectrum, p: NormParams) -> StokesSpectrum {
    let range = p.i_max - p.i_min;
    StokesSpectrum {
        i: s.i.iter().map(|&x| (x - p.i_min) / range).collect(),
        v: s.v.iter().map(|&x| x - p.v_mean).collect(),
    }
}

/// Min-max scale Stokes I into [0,1] and shift Stokes V to zero mean,
/// returning the parameters that invert the transform.
pub fn normalize_spectrum(s: &StokesSpectrum) -> Result<(StokesSpectrum, NormParams), SpectraError> {
    let (i_min, i_max) = min_max(&s.i);
    let range = i_max - i_min;
    if !(range >= EPS_DEGENERATE) {
        return Err(SpectraError::DegenerateSpectrum {
            range,
            eps: EPS_DEGENERATE,
        });
    }
    let params = NormParams {
        i_min,
        i_max,
        v_mean: mean(&s.v),
    };
    Ok((apply_norm_params(s, params), params))
}

/// Exact inverse of [`normalize_spectrum`] (up to floating round-off).
pub fn denormalize_spectrum(s_norm: &StokesSpectrum, p: NormParams) -> StokesSpectrum {
    let range = p.i_max - p.i_min;
    StokesSpectrum {
        i: s_norm.i.iter().map(|&x| x * range + p.i_min).collect(),
        v: s_norm.v.iter().map(|&x| x + p.v_mean).collect(),
    }
}

/// Map-wide normalization parameters (for [`NormScope::PerMap`]): the global
/// I min/max and the global V mean over every pixel.
pub fn map_norm_params(map: &SPMap) -> Result<NormParams, SpectraError> {
    let mut i_min = f64::INFINITY;
    let mut i_max = f64::NEG_INFINITY;
    let mut v_means = Vec::with_capacity(map.pixels.len());
    for p in &map.pixels {
        let (lo, hi) = min_max(&p.i);
        i_min = i_min.min(lo);
        i_max = i_max.max(hi);
        v_means.push(mean(&p.v));
    }
    let range = i_max - i_min;
    if !(range >= EPS_DEGENERATE) {
        return Err(SpectraError::DegenerateSpectrum {
            range,
            eps: EPS_DEGENERATE,
        });
    }
    Ok(NormParams {
        i_min,
        i_max,
        v_mean: mean(&v_means),
    })
}

/// Extract a `w` x `h` rectangle with origin `(x0, y0)`; pixel `(x, y)` of
/// the result is pixel `(x0+x, y0+y)` of the input. Metadata and grid are
/// copied.
pub fn crop_fov(m: &SPMap, x0: usize, y0: usize, w: usize, h: usize) -> Result<SPMap, SpectraError> {
    if w == 0 || h == 0 || x0 + w > m.width || y0 + h > m.height {
        return Err(SpectraError::OutOfBounds {
            x0,
            y0,
            w,
            h,
            width: m.width,
            height: m.height,
        });
    }
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            pixels.push(m.pixel(x0 + x, y0 + y).clone());
        }
    }
    Ok(SPMap {
        width: w,
        height: h,
        pixels,
        metadata: m.metadata.clone(),
        grid: m.grid.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectrum(i: &[f64], v: &[f64]) -> StokesSpectrum {
        StokesSpectrum::new(i.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_identity_and_constant_v() {
        let s = spectrum(&[0.0, 0.5, 1.0], &[0.1, 0.1, 0.1]);
        let (n, p) = normalize_spectrum(&s).unwrap();
        assert_eq!(n.i, vec![0.0, 0.5, 1.0]);
        for &x in &n.v {
            assert!(x.abs() < 1e-15, "constant V should center to ~0, got {x}");
        }
        assert_eq!((p.i_min, p.i_max), (0.0, 1.0));
        assert!((p.v_mean - 0.1).abs() < 1e-15);
    }

    #[test]
    fn normalize_two_point() {
        let s = spectrum(&[2.0, 4.0], &[1.0, -1.0]);
        let (n, p) = normalize_spectrum(&s).unwrap();
        assert_eq!(n.i, vec![0.0, 1.0]);
        assert_eq!(n.v, vec![1.0, -1.0]);
        assert_eq!((p.i_min, p.i_max, p.v_mean), (2.0, 4.0, 0.0));
    }

    #[test]
    fn normalize_rejects_constant_i() {
        let s = spectrum(&[5.0, 5.0, 5.0], &[0.0, 0.0, 0.0]);
        match normalize_spectrum(&s) {
            Err(SpectraError::DegenerateSpectrum { .. }) => {}
            other => panic!("expected DegenerateSpectrum, got {other:?}"),
        }
    }

    #[test]
    fn denormalize_identity_params() {
        let s = spectrum(&[0.2, 0.8], &[0.3, -0.3]);
        let out = denormalize_spectrum(
            &s,
            NormParams {
                i_min: 0.0,
                i_max: 1.0,
                v_mean: 0.0,
            },
        );
        assert_eq!(out, s);
    }

    #[test]
    fn denormalize_two_point() {
        let s = spectrum(&[0.0, 1.0], &[0.0, 0.0]);
        let out = denormalize_spectrum(
            &s,
            NormParams {
                i_min: 2.0,
                i_max: 4.0,
                v_mean: 0.0,
            },
        );
        assert_eq!(out.i, vec![2.0, 4.0]);
    }

    #[test]
    fn round_trip_random_spectra() {
        let mut rng = crate::rng::Pcg32::new(11, 0);
        for _ in 0..50 {
            let n = 16 + rng.bounded(100) as usize;
            let i: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 3.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.uniform(-0.5, 0.5)).collect();
            let s = match StokesSpectrum::new(i, v) {
                Ok(s) => s,
                Err(_) => continue,
            };
            let Ok((norm, p)) = normalize_spectrum(&s) else {
                continue;
            };
            // Normalized I in [0,1]; normalized V has zero mean.
            for &x in &norm.i {
                assert!((-1e-12..=1.0 + 1e-12).contains(&x));
            }
            let v_mean: f64 = norm.v.iter().sum::<f64>() / norm.v.len() as f64;
            assert!(v_mean.abs() < 1e-12);
            let back = denormalize_spectrum(&norm, p);
            for (a, b) in back.i.iter().zip(&s.i) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in back.v.iter().zip(&s.v) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    fn grid_map(width: usize, height: usize) -> SPMap {
        let grid = WavelengthGrid::new(32, 0.02, [630.15, 630.25], (0, 3)).unwrap();
        let pixels: Vec<StokesSpectrum> = (0..width * height)
            .map(|k| {
                let i: Vec<f64> = (0..32).map(|j| 1.0 + (k * 32 + j) as f64 * 1e-3).collect();
                let v = vec![0.0; 32];
                StokesSpectrum::new(i, v).unwrap()
            })
            .collect();
        SPMap::new(
            width,
            height,
            pixels,
            MapMetadata::for_mode("20240504_143042", ObsMode::QT),
            grid,
        )
        .unwrap()
    }

    #[test]
    fn crop_full_extent_is_identity() {
        let m = grid_map(4, 3);
        let c = crop_fov(&m, 0, 0, 4, 3).unwrap();
        assert_eq!(c, m);
    }

    #[test]
    fn crop_indexing() {
        let m = grid_map(4, 4);
        let c = crop_fov(&m, 1, 1, 2, 2).unwrap();
        assert_eq!(c.width, 2);
        assert_eq!(c.height, 2);
        assert_eq!(c.pixel(0, 0), m.pixel(1, 1));
        assert_eq!(c.pixel(1, 1), m.pixel(2, 2));
    }

    #[test]
    fn crop_out_of_bounds() {
        let m = grid_map(4, 4);
        assert!(matches!(
            crop_fov(&m, 3, 3, 5, 5),
            Err(SpectraError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn crop_composes() {
        let m = grid_map(6, 5);
        let a = crop_fov(&m, 1, 2, 4, 3).unwrap();
        let b = crop_fov(&a, 1, 0, 2, 2).unwrap();
        let direct = crop_fov(&m, 2, 2, 2, 2).unwrap();
        assert_eq!(b, direct);
    }

    #[test]
    fn grid_default_geometry() {
        let g = WavelengthGrid::default();
        assert_eq!(g.n_points, 112);
        // Both line centers inside the sampled range, continuum window at
        // the blue end well clear of the first line.
        let [l1, l2] = g.line_centers_angstrom();
        assert!(g.wavelength(0) < l1 && l2 < g.wavelength(111));
        let window_end = g.wavelength(15);
        assert!(l1 - window_end > 0.3, "window too close to line 1");
    }

    #[test]
    fn grid_validation() {
        assert!(WavelengthGrid::new(16, 0.02, [630.15, 630.25], (0, 3)).is_err());
        assert!(WavelengthGrid::new(64, -0.1, [630.15, 630.25], (0, 3)).is_err());
        assert!(WavelengthGrid::new(64, 0.02, [630.15, 630.25], (0, 64)).is_err());
    }

    #[test]
    fn spectrum_rejects_negative_i_and_nan() {
        assert!(StokesSpectrum::new(vec![1.0, -0.1], vec![0.0, 0.0]).is_err());
        assert!(StokesSpectrum::new(vec![1.0, f64::NAN], vec![0.0, 0.0]).is_err());
        assert!(StokesSpectrum::new(vec![1.0, 1.0], vec![0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn per_map_params_cover_all_pixels() {
        let m = grid_map(3, 3);
        let p = map_norm_params(&m).unwrap();
        for px in &m.pixels {
            for &x in &px.i {
                assert!(x >= p.i_min - 1e-15 && x <= p.i_max + 1e-15);
            }
        }
    }
}
