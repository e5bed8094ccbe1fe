//! Deterministic generator of synthetic SP maps.
//!
//! Stokes I is modeled as two Gaussian absorption lines on a flat continuum;
//! Stokes V follows the weak-field proxy `V ∝ −dI/dλ` per line with a signed
//! amplitude. Four solar-surface classes (quiet Sun, pore, penumbra, umbra)
//! differ in continuum level, line depth/width and V amplitude. On top of the
//! normal profiles four kinds of anomalous V shapes can be injected, so the
//! whole detection pipeline is testable without mission data.
//!
//! Generation is pure given a seed: every pixel draws from its own derived
//! PRNG stream ([`Pcg32::for_item`]), so per-pixel work may run in parallel
//! without changing the output.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parallel::indexed_map;
use crate::rng::Pcg32;
use crate::spectra::{MapMetadata, SPMap, StokesSpectrum, WavelengthGrid};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid class parameters: {0}")]
    InvalidClassParams(String),
    #[error("anomaly strength {0} outside (0, 1]")]
    InvalidStrength(f64),
    #[error("anomaly pixel ({x},{y}) outside {width}x{height} map")]
    OutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error(transparent)]
    Spectra(#[from] crate::spectra::SpectraError),
}

/// Solar-surface class of a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PixelClass {
    QuietSun,
    Pore,
    Penumbra,
    Umbra,
}

impl PixelClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            PixelClass::QuietSun => "quiet-sun",
            PixelClass::Pore => "pore",
            PixelClass::Penumbra => "penumbra",
            PixelClass::Umbra => "umbra",
        }
    }
}

impl std::str::FromStr for PixelClass {
    type Err = SynthError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quiet-sun" => Ok(PixelClass::QuietSun),
            "pore" => Ok(PixelClass::Pore),
            "penumbra" => Ok(PixelClass::Penumbra),
            "umbra" => Ok(PixelClass::Umbra),
            other => Err(SynthError::InvalidClassParams(format!(
                "unknown pixel class {other:?}"
            ))),
        }
    }
}

/// Closed-form line parameters of one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassParams {
    /// Continuum level `c` (continuum-relative units).
    pub continuum: f64,
    /// Fractional depth of the 630.15 nm line, in (0, 1).
    pub depth1: f64,
    /// Fractional depth of the 630.25 nm line, in (0, 1).
    pub depth2: f64,
    /// Gaussian line width in Å.
    pub width: f64,
    /// Doppler shift applied to both lines, in Å.
    pub doppler_shift: f64,
    /// Signed Stokes V amplitude.
    pub v_amplitude: f64,
}

impl ClassParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.continuum > 0.0) {
            return Err(SynthError::InvalidClassParams(format!(
                "continuum {} must be positive",
                self.continuum
            )));
        }
        for (name, d) in [("depth1", self.depth1), ("depth2", self.depth2)] {
            if !(d > 0.0 && d < 1.0) {
                return Err(SynthError::InvalidClassParams(format!(
                    "{name} {d} outside (0, 1)"
                )));
            }
        }
        if !(self.width > 0.0) {
            return Err(SynthError::InvalidClassParams(format!(
                "width {} must be positive",
                self.width
            )));
        }
        if !self.doppler_shift.is_finite() || !self.v_amplitude.is_finite() {
            return Err(SynthError::InvalidClassParams(
                "non-finite shift or amplitude".into(),
            ));
        }
        Ok(())
    }
}

/// Uniform sampling ranges for one class. `v_amplitude` draws a magnitude
/// from `[v_amp.0, v_amp.1]` and a random sign.
#[derive(Debug, Clone, Copy)]
pub struct ClassRanges {
    pub continuum: (f64, f64),
    pub depth1: (f64, f64),
    pub depth2: (f64, f64),
    pub width: (f64, f64),
    pub doppler_shift: (f64, f64),
    pub v_amp: (f64, f64),
}

/// Version tag of the shipped class presets. Tests pin this so fixtures stay
/// stable when presets evolve.
pub const PRESET_VERSION: u32 = 1;

/// Sampling ranges of the four classes, preset version 1.
pub fn class_ranges(class: PixelClass) -> ClassRanges {
    match class {
        PixelClass::QuietSun => ClassRanges {
            continuum: (0.95, 1.05),
            depth1: (0.50, 0.55),
            depth2: (0.40, 0.44),
            width: (0.055, 0.065),
            doppler_shift: (-0.005, 0.005),
            v_amp: (0.000, 0.020),
        },
        PixelClass::Pore => ClassRanges {
            continuum: (0.60, 0.75),
            depth1: (0.45, 0.50),
            depth2: (0.36, 0.40),
            width: (0.060, 0.080),
            doppler_shift: (-0.010, 0.010),
            v_amp: (0.050, 0.120),
        },
        PixelClass::Penumbra => ClassRanges {
            continuum: (0.75, 0.90),
            depth1: (0.42, 0.47),
            depth2: (0.33, 0.37),
            width: (0.070, 0.090),
            doppler_shift: (-0.015, 0.015),
            v_amp: (0.080, 0.200),
        },
        PixelClass::Umbra => ClassRanges {
            continuum: (0.30, 0.50),
            depth1: (0.30, 0.35),
            depth2: (0.24, 0.28),
            width: (0.080, 0.100),
            doppler_shift: (-0.005, 0.005),
            v_amp: (0.150, 0.300),
        },
    }
}

/// Draw one pixel's parameters from its class ranges. Draw order is fixed:
/// continuum, depth1, depth2, width, shift, |amplitude|, sign.
pub fn sample_class_params(class: PixelClass, rng: &mut Pcg32) -> ClassParams {
    let r = class_ranges(class);
    let continuum = rng.uniform(r.continuum.0, r.continuum.1);
    let depth1 = rng.uniform(r.depth1.0, r.depth1.1);
    let depth2 = rng.uniform(r.depth2.0, r.depth2.1);
    let width = rng.uniform(r.width.0, r.width.1);
    let doppler_shift = rng.uniform(r.doppler_shift.0, r.doppler_shift.1);
    let magnitude = rng.uniform(r.v_amp.0, r.v_amp.1);
    let sign = if rng.next_u32() & 1 == 0 { 1.0 } else { -1.0 };
    ClassParams {
        continuum,
        depth1,
        depth2,
        width,
        doppler_shift,
        v_amplitude: sign * magnitude,
    }
}

/// Unit-peak Gaussian.
fn gauss(x: f64, mu: f64, w: f64) -> f64 {
    let d = (x - mu) / w;
    (-0.5 * d * d).exp()
}

/// dG/dλ of the unit-peak Gaussian.
fn dgauss(x: f64, mu: f64, w: f64) -> f64 {
    let d = x - mu;
    -(d / (w * w)) * gauss(x, mu, w)
}

/// Evaluate the noiseless closed form:
/// `I(λ) = c (1 − d1 G(λ; λ1+δ, w) − d2 G(λ; λ2+δ, w))` and
/// `V(λ) = a w (G'(λ; λ1+δ, w) + G'(λ; λ2+δ, w))`.
pub fn profile_from_params(
    params: &ClassParams,
    grid: &WavelengthGrid,
) -> Result<StokesSpectrum, SynthError> {
    params.validate()?;
    let [l1, l2] = grid.line_centers_angstrom();
    let mu1 = l1 + params.doppler_shift;
    let mu2 = l2 + params.doppler_shift;
    let n = grid.n_points;
    let mut i = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for k in 0..n {
        let lam = grid.wavelength(k);
        let absorb = params.depth1 * gauss(lam, mu1, params.width)
            + params.depth2 * gauss(lam, mu2, params.width);
        i.push(params.continuum * (1.0 - absorb));
        v.push(
            params.v_amplitude
                * params.width
                * (dgauss(lam, mu1, params.width) + dgauss(lam, mu2, params.width)),
        );
    }
    Ok(StokesSpectrum { i, v })
}

/// Draw class parameters and evaluate the noiseless profile.
pub fn synth_profile(
    class: PixelClass,
    grid: &WavelengthGrid,
    rng: &mut Pcg32,
) -> Result<StokesSpectrum, SynthError> {
    let params = sample_class_params(class, rng);
    profile_from_params(&params, grid)
}

/// The four anomalous V-profile families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnomalyKind {
    /// Extra narrow lobe between the two lobes of each line.
    ThreeLobed,
    /// Second Doppler-shifted V component superposed on each line.
    DoublePeaked,
    /// V convolved with a Gaussian kernel.
    Broadened,
    /// Positive and negative excursions scaled by (1±strength).
    LobeAsymmetric,
}

impl AnomalyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AnomalyKind::ThreeLobed => "three-lobed",
            AnomalyKind::DoublePeaked => "double-peaked",
            AnomalyKind::Broadened => "broadened",
            AnomalyKind::LobeAsymmetric => "lobe-asymmetric",
        }
    }

    pub const ALL: [AnomalyKind; 4] = [
        AnomalyKind::ThreeLobed,
        AnomalyKind::DoublePeaked,
        AnomalyKind::Broadened,
        AnomalyKind::LobeAsymmetric,
    ];
}

impl std::str::FromStr for AnomalyKind {
    type Err = SynthError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "three-lobed" => Ok(AnomalyKind::ThreeLobed),
            "double-peaked" => Ok(AnomalyKind::DoublePeaked),
            "broadened" => Ok(AnomalyKind::Broadened),
            "lobe-asymmetric" => Ok(AnomalyKind::LobeAsymmetric),
            other => Err(SynthError::InvalidClassParams(format!(
                "unknown anomaly kind {other:?}"
            ))),
        }
    }
}

/// An anomaly family with its strength in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub strength: f64,
}

impl AnomalySpec {
    pub fn new(kind: AnomalyKind, strength: f64) -> Result<Self, SynthError> {
        if !(strength > 0.0 && strength <= 1.0) {
            return Err(SynthError::InvalidStrength(strength));
        }
        Ok(AnomalySpec { kind, strength })
    }
}

/// Nominal line width used by injectors, which see only the spectrum and the
/// grid, not the true per-pixel width.
const NOMINAL_WIDTH: f64 = 0.07;

/// Amplitude floor so anomalies remain visible on near-zero-V pixels.
const V_AMPLITUDE_FLOOR: f64 = 0.05;

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |m, &v| m.max(v.abs()))
}

/// Sign of V on the blue lobe of the line at `center` (+1 when V is zero
/// there).
fn lobe_sign(s: &StokesSpectrum, grid: &WavelengthGrid, center: f64) -> f64 {
    let target = center - NOMINAL_WIDTH;
    let idx = (0..grid.n_points)
        .min_by(|&a, &b| {
            let da = (grid.wavelength(a) - target).abs();
            let db = (grid.wavelength(b) - target).abs();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap();
    if s.v[idx] < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Superpose an anomalous structure on the V profile; I is returned
/// unchanged, bit for bit.
pub fn inject_anomaly(
    s: &StokesSpectrum,
    grid: &WavelengthGrid,
    spec: AnomalySpec,
    rng: &mut Pcg32,
) -> Result<StokesSpectrum, SynthError> {
    if !(spec.strength > 0.0 && spec.strength <= 1.0) {
        return Err(SynthError::InvalidStrength(spec.strength));
    }
    let strength = spec.strength;
    let mut v = s.v.clone();
    let amp_scale = max_abs(&s.v).max(V_AMPLITUDE_FLOOR);
    match spec.kind {
        AnomalyKind::ThreeLobed => {
            // Narrow central lobe between the two lobes of each line; its
            // width is jittered so repeated injections differ.
            let sigma = NOMINAL_WIDTH * 0.3 * rng.uniform(0.9, 1.1);
            let amp = strength * 1.2 * amp_scale;
            for center in grid.line_centers_angstrom() {
                let sign = lobe_sign(s, grid, center);
                for k in 0..grid.n_points {
                    v[k] += sign * amp * gauss(grid.wavelength(k), center, sigma);
                }
            }
        }
        AnomalyKind::DoublePeaked => {
            // Second derivative-shaped component red-shifted by an amount
            // growing with strength, polarity matched per line.
            let shift = (0.08 + 0.30 * strength) * rng.uniform(0.95, 1.05);
            let amp = strength * amp_scale;
            // Peak of |x exp(-x^2/2)| is exp(-1/2), at one width from center.
            let peak = (-0.5_f64).exp() / NOMINAL_WIDTH;
            for center in grid.line_centers_angstrom() {
                let sign = lobe_sign(s, grid, center);
                let mu = center + shift;
                for k in 0..grid.n_points {
                    let d = dgauss(grid.wavelength(k), mu, NOMINAL_WIDTH) * NOMINAL_WIDTH;
                    v[k] += sign * amp * d / (peak * NOMINAL_WIDTH);
                }
            }
        }
        AnomalyKind::Broadened => {
            let sigma_px = strength * 0.08 / grid.dispersion;
            let radius = (4.0 * sigma_px).ceil() as isize;
            if radius > 0 {
                let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
                for j in -radius..=radius {
                    kernel.push((-0.5 * (j as f64 / sigma_px).powi(2)).exp());
                }
                let norm: f64 = kernel.iter().sum();
                let n = v.len() as isize;
                let mut out = vec![0.0; v.len()];
                for (idx, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (kj, kw) in kernel.iter().enumerate() {
                        let src = idx as isize + kj as isize - radius;
                        if src >= 0 && src < n {
                            acc += kw * v[src as usize];
                        }
                    }
                    *o = acc / norm;
                }
                v = out;
            }
        }
        AnomalyKind::LobeAsymmetric => {
            for x in v.iter_mut() {
                if *x > 0.0 {
                    *x *= 1.0 + strength;
                } else {
                    *x *= 1.0 - strength;
                }
            }
        }
    }
    Ok(StokesSpectrum { i: s.i.clone(), v })
}

/// Photon-noise model: `σ(t) = sigma_ref · sqrt(t_ref / t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Noise standard deviation at the reference integration time.
    pub sigma_ref: f64,
    /// Reference integration time in seconds.
    pub t_ref: f64,
}

impl NoiseModel {
    pub const DEFAULT_T_REF: f64 = 1.6;

    pub fn new(sigma_ref: f64) -> Self {
        NoiseModel {
            sigma_ref,
            t_ref: Self::DEFAULT_T_REF,
        }
    }

    pub fn sigma_at(&self, integration_time: f64) -> f64 {
        self.sigma_ref * (self.t_ref / integration_time).sqrt()
    }
}

/// Spatial class assignment for a synthetic map.
#[derive(Debug, Clone, PartialEq)]
pub enum MapLayout {
    /// One class everywhere.
    Uniform(PixelClass),
    /// Concentric umbra/penumbra spot at the map center plus a small pore
    /// near the upper-right corner, quiet Sun elsewhere.
    Sunspot,
}

impl MapLayout {
    pub fn class_at(&self, x: usize, y: usize, width: usize, height: usize) -> PixelClass {
        match self {
            MapLayout::Uniform(c) => *c,
            MapLayout::Sunspot => {
                let scale = width.min(height) as f64;
                let dx = x as f64 + 0.5 - width as f64 / 2.0;
                let dy = y as f64 + 0.5 - height as f64 / 2.0;
                let r = (dx * dx + dy * dy).sqrt() / scale;
                let px = x as f64 + 0.5 - 0.78 * width as f64;
                let py = y as f64 + 0.5 - 0.22 * height as f64;
                let rp = (px * px + py * py).sqrt() / scale;
                if r < 0.14 {
                    PixelClass::Umbra
                } else if r < 0.32 {
                    PixelClass::Penumbra
                } else if rp < 0.05 {
                    PixelClass::Pore
                } else {
                    PixelClass::QuietSun
                }
            }
        }
    }
}

impl std::str::FromStr for MapLayout {
    type Err = SynthError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "sunspot" {
            return Ok(MapLayout::Sunspot);
        }
        if let Some(class) = s.strip_prefix("uniform:") {
            return Ok(MapLayout::Uniform(class.parse()?));
        }
        Err(SynthError::InvalidClassParams(format!(
            "unknown layout {s:?} (expected \"sunspot\" or \"uniform:<class>\")"
        )))
    }
}

/// Ground truth recorded alongside a generated map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub anomalies: Vec<TruthEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub x: usize,
    pub y: usize,
    pub kind: String,
}

/// Generate a full synthetic map. Deterministic given `seed`: each pixel
/// uses the derived stream `Pcg32::for_item(seed, pixel_index)` and draws,
/// in order, its class parameters, any injector jitter, then I and V noise.
pub fn synth_map(
    width: usize,
    height: usize,
    layout: &MapLayout,
    anomalies: &[(usize, usize, AnomalySpec)],
    metadata: MapMetadata,
    noise: NoiseModel,
    seed: u64,
) -> Result<(SPMap, GroundTruth), SynthError> {
    let grid = WavelengthGrid::default();
    let mut anomaly_at: HashMap<(usize, usize), AnomalySpec> = HashMap::new();
    for &(x, y, spec) in anomalies {
        if x >= width || y >= height {
            return Err(SynthError::OutOfBounds {
                x,
                y,
                width,
                height,
            });
        }
        if !(spec.strength > 0.0 && spec.strength <= 1.0) {
            return Err(SynthError::InvalidStrength(spec.strength));
        }
        anomaly_at.insert((x, y), spec);
    }
    metadata.validate()?;
    let sigma = noise.sigma_at(metadata.integration_time);
    let n = grid.n_points;

    let results: Vec<Result<StokesSpectrum, SynthError>> =
        indexed_map(width * height, |idx| {
            let x = idx % width;
            let y = idx / width;
            let mut rng = Pcg32::for_item(seed, idx as u64);
            let class = layout.class_at(x, y, width, height);
            let params = sample_class_params(class, &mut rng);
            let mut s = profile_from_params(&params, &grid)?;
            if let Some(spec) = anomaly_at.get(&(x, y)) {
                s = inject_anomaly(&s, &grid, *spec, &mut rng)?;
            }
            let mut noise_i = vec![0.0; n];
            let mut noise_v = vec![0.0; n];
            rng.fill_normal(&mut noise_i, sigma);
            rng.fill_normal(&mut noise_v, sigma);
            for k in 0..n {
                s.i[k] = (s.i[k] + noise_i[k]).max(0.0);
                s.v[k] += noise_v[k];
            }
            Ok(s)
        });

    let mut pixels = Vec::with_capacity(width * height);
    for r in results {
        pixels.push(r?);
    }
    let map = SPMap::new(width, height, pixels, metadata, grid)?;
    let truth = GroundTruth {
        anomalies: anomalies
            .iter()
            .map(|&(x, y, spec)| TruthEntry {
                x,
                y,
                kind: spec.kind.as_str().to_string(),
            })
            .collect(),
    };
    Ok((map, truth))
}
