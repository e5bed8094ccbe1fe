//! Inference-side pipeline: reconstruct a map pixel by pixel, score each
//! spectrum by per-channel RMSE, compare against the observational noise
//! baseline, locate the worst pixel and pull out its neighborhood.
//!
//! RMSE and σ_obs are both computed in normalized space (min-max I,
//! zero-mean V) so the comparison between reconstruction error and
//! observational noise is unit-consistent. Degenerate pixels that cannot be
//! normalized are excluded: their heatmap slots hold NaN and they never
//! enter means, the argmax or the top-k list.

pub mod report;

use thiserror::Error;

use crate::nn::{AutoencoderModel, NnError, Tensor3};
use crate::parallel::{indexed_map, pairwise_sum, CHUNK};
use crate::spectra::{normalize_spectrum, SPMap, SpectraError};

#[derive(Debug, Error)]
pub enum AnomalyError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("every pixel of the map is excluded")]
    AllExcluded,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-pixel scalar field with the map's geometry. NaN marks excluded
/// pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Mean over non-excluded pixels (order-fixed reduction).
    pub fn mean_valid(&self) -> Option<f64> {
        let valid: Vec<f64> = self.values.iter().cloned().filter(|v| !v.is_nan()).collect();
        if valid.is_empty() {
            None
        } else {
            Some(pairwise_sum(&valid) / valid.len() as f64)
        }
    }

    pub fn excluded_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }
}

/// Noise baseline and mean reconstruction error per channel.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MapStats {
    pub sigma_obs_i: f64,
    pub sigma_obs_v: f64,
    pub mu_rmse_i: f64,
    pub mu_rmse_v: f64,
}

/// One ranked pixel of the top-k list.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoredPixel {
    pub x: usize,
    pub y: usize,
    pub score: f64,
}

/// V profiles (original and reconstructed, normalized space) of one cell of
/// the 3x3 grid around the h-pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpectra {
    pub x: usize,
    pub y: usize,
    pub original_v: Vec<f64>,
    pub reconstructed_v: Vec<f64>,
}

/// Heatmap window plus spectra grid centered on a pixel; windows that hit
/// the map border are clipped and flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub center: (usize, usize),
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    /// RMSE_V values of the window, row-major.
    pub heat_values: Vec<f64>,
    pub clipped: bool,
    /// 3x3 cells, row-major over (dy, dx); None where the grid leaves the
    /// map.
    pub cells: Vec<Option<CellSpectra>>,
}

/// Everything `cmd_detect` reports for one map.
#[derive(Debug, Clone)]
pub struct AnomalyReport {
    pub heatmap_i: Heatmap,
    pub heatmap_v: Heatmap,
    pub stats: MapStats,
    pub h_pixel: (usize, usize),
    pub top_k: Vec<ScoredPixel>,
    pub neighborhood: Neighborhood,
    pub excluded_count: usize,
}

/// RMSE between a normalized spectrum pair, per channel:
/// `sqrt(mean_k (x_k - xhat_k)^2)`.
pub fn rmse_channels(original: &Tensor3, recon: &Tensor3, row: usize) -> (f64, f64) {
    let len = original.length() as f64;
    let mut out = [0.0; 2];
    for ch in 0..2 {
        let a = original.row(row, ch);
        let b = recon.row(row, ch);
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b) {
            let d = x - y;
            acc += d * d;
        }
        out[ch] = (acc / len).sqrt();
    }
    (out[0], out[1])
}

fn check_model_grid(map: &SPMap, model: &AutoencoderModel) -> Result<(), AnomalyError> {
    let (channels, length) = model.input_shape();
    if channels != 2 || length != map.grid.n_points {
        return Err(AnomalyError::ShapeMismatch(format!(
            "model expects ({channels}, {length}), map spectra are (2, {})",
            map.grid.n_points
        )));
    }
    Ok(())
}

/// Normalize one pixel into a batch row; returns false for degenerate
/// pixels.
fn normalize_into(map: &SPMap, idx: usize, x: &mut Tensor3, row: usize) -> bool {
    match normalize_spectrum(&map.pixels[idx]) {
        Ok((norm, _)) => {
            x.row_mut(row, 0).copy_from_slice(&norm.i);
            x.row_mut(row, 1).copy_from_slice(&norm.v);
            true
        }
        Err(_) => false,
    }
}

/// Per-pixel reconstruction RMSE, one heatmap per channel. Pixels are
/// scored independently in fixed chunks, so the result does not depend on
/// the worker count.
pub fn rmse_per_pixel(
    map: &SPMap,
    model: &AutoencoderModel,
) -> Result<(Heatmap, Heatmap), AnomalyError> {
    check_model_grid(map, model)?;
    let n = map.n_pixels();
    let n_points = map.grid.n_points;
    let n_chunks = n.div_ceil(CHUNK);
    let chunks: Vec<Result<Vec<(f64, f64)>, NnError>> = indexed_map(n_chunks, |ci| {
        let lo = ci * CHUNK;
        let hi = (lo + CHUNK).min(n);
        let mut x = Tensor3::zeros(hi - lo, 2, n_points);
        let mut valid = vec![false; hi - lo];
        let mut any = false;
        for (row, idx) in (lo..hi).enumerate() {
            valid[row] = normalize_into(map, idx, &mut x, row);
            any |= valid[row];
        }
        let mut out = vec![(f64::NAN, f64::NAN); hi - lo];
        if any {
            let recon = model.reconstruct(&x)?;
            for row in 0..hi - lo {
                if valid[row] {
                    out[row] = rmse_channels(&x, &recon, row);
                }
            }
        }
        Ok(out)
    });

    let mut values_i = Vec::with_capacity(n);
    let mut values_v = Vec::with_capacity(n);
    for chunk in chunks {
        for (ri, rv) in chunk? {
            values_i.push(ri);
            values_v.push(rv);
        }
    }
    Ok((
        Heatmap {
            width: map.width,
            height: map.height,
            values: values_i,
        },
        Heatmap {
            width: map.width,
            height: map.height,
            values: values_v,
        },
    ))
}

/// Population standard deviation.
fn std_pop(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Observational-noise baseline: per pixel, the population standard
/// deviation of the 16 continuum samples of each normalized channel, then
/// the mean over all non-excluded pixels.
pub fn sigma_obs(map: &SPMap) -> (f64, f64) {
    let mut per_pixel_i = Vec::with_capacity(map.n_pixels());
    let mut per_pixel_v = Vec::with_capacity(map.n_pixels());
    for pixel in &map.pixels {
        let Ok((norm, _)) = normalize_spectrum(pixel) else {
            continue;
        };
        per_pixel_i.push(std_pop(map.grid.continuum_slice(&norm.i)));
        per_pixel_v.push(std_pop(map.grid.continuum_slice(&norm.v)));
    }
    if per_pixel_i.is_empty() {
        return (0.0, 0.0);
    }
    let n = per_pixel_i.len() as f64;
    (
        pairwise_sum(&per_pixel_i) / n,
        pairwise_sum(&per_pixel_v) / n,
    )
}

/// Bundle mean heatmap values with the noise baseline.
pub fn map_stats(heatmap_i: &Heatmap, heatmap_v: &Heatmap, sigma: (f64, f64)) -> MapStats {
    MapStats {
        sigma_obs_i: sigma.0,
        sigma_obs_v: sigma.1,
        mu_rmse_i: heatmap_i.mean_valid().unwrap_or(0.0),
        mu_rmse_v: heatmap_v.mean_valid().unwrap_or(0.0),
    }
}

/// Coordinates of the highest non-excluded value; ties break to the
/// smallest row-major index.
pub fn locate_h_pixel(heatmap: &Heatmap) -> Result<(usize, usize), AnomalyError> {
    let mut best: Option<(usize, f64)> = None;
    for (idx, &v) in heatmap.values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((idx, v)),
        }
    }
    let (idx, _) = best.ok_or(AnomalyError::AllExcluded)?;
    Ok((idx % heatmap.width, idx / heatmap.width))
}

/// Pixels ranked by score descending (ties to the smaller row-major
/// index), truncated to `k`. Excluded pixels never appear.
pub fn top_k_pixels(heatmap: &Heatmap, k: usize) -> Vec<ScoredPixel> {
    let mut scored: Vec<(usize, f64)> = heatmap
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_nan())
        .map(|(i, &v)| (i, v))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored
        .into_iter()
        .take(k)
        .map(|(idx, score)| ScoredPixel {
            x: idx % heatmap.width,
            y: idx / heatmap.width,
            score,
        })
        .collect()
}

/// Default top-k size: 1% of the map, rounded up.
pub fn default_top_k(n_pixels: usize) -> usize {
    n_pixels.div_ceil(100)
}

/// Extract the heatmap window (`2*heat_half` wide) and the spectra grid
/// (`2*cell_half + 1` on a side) centered on `center`. Windows clipped by
/// the map border are flagged.
pub fn extract_neighborhood(
    map: &SPMap,
    model: &AutoencoderModel,
    heatmap_v: &Heatmap,
    center: (usize, usize),
    heat_half: usize,
    cell_half: usize,
) -> Result<Neighborhood, AnomalyError> {
    check_model_grid(map, model)?;
    let (cx, cy) = center;
    if cx >= map.width || cy >= map.height {
        return Err(AnomalyError::ShapeMismatch(format!(
            "center ({cx},{cy}) outside {}x{}",
            map.width, map.height
        )));
    }
    // Center-aligned even window: rows cx-heat_half .. cx+heat_half-1.
    let want_x0 = cx as isize - heat_half as isize;
    let want_y0 = cy as isize - heat_half as isize;
    let want_x1 = cx as isize + heat_half as isize;
    let want_y1 = cy as isize + heat_half as isize;
    let x0 = want_x0.max(0) as usize;
    let y0 = want_y0.max(0) as usize;
    let x1 = (want_x1 as usize).min(map.width);
    let y1 = (want_y1 as usize).min(map.height);
    let clipped = want_x0 < 0
        || want_y0 < 0
        || want_x1 > map.width as isize
        || want_y1 > map.height as isize;
    let mut heat_values = Vec::with_capacity((x1 - x0) * (y1 - y0));
    for y in y0..y1 {
        for x in x0..x1 {
            heat_values.push(heatmap_v.get(x, y));
        }
    }

    let side = 2 * cell_half + 1;
    let mut cells: Vec<Option<CellSpectra>> = Vec::with_capacity(side * side);
    for dy in 0..side {
        for dx in 0..side {
            let x = cx as isize + dx as isize - cell_half as isize;
            let y = cy as isize + dy as isize - cell_half as isize;
            if x < 0 || y < 0 || x >= map.width as isize || y >= map.height as isize {
                cells.push(None);
                continue;
            }
            let (x, y) = (x as usize, y as usize);
            let idx = map.pixel_index(x, y);
            let mut xt = Tensor3::zeros(1, 2, map.grid.n_points);
            if !normalize_into(map, idx, &mut xt, 0) {
                cells.push(None);
                continue;
            }
            let recon = model.reconstruct(&xt)?;
            cells.push(Some(CellSpectra {
                x,
                y,
                original_v: xt.row(0, 1).to_vec(),
                reconstructed_v: recon.row(0, 1).to_vec(),
            }));
        }
    }

    Ok(Neighborhood {
        center,
        x0,
        y0,
        width: x1 - x0,
        height: y1 - y0,
        heat_values,
        clipped,
        cells,
    })
}

/// Run the whole detection pipeline on one map.
pub fn analyze_map(
    map: &SPMap,
    model: &AutoencoderModel,
    top_k: Option<usize>,
) -> Result<AnomalyReport, AnomalyError> {
    let (heatmap_i, heatmap_v) = rmse_per_pixel(map, model)?;
    let stats = map_stats(&heatmap_i, &heatmap_v, sigma_obs(map));
    let h_pixel = locate_h_pixel(&heatmap_v)?;
    let k = top_k.unwrap_or_else(|| default_top_k(map.n_pixels()));
    let top_k = top_k_pixels(&heatmap_v, k);
    debug_assert!(top_k.is_empty() || (top_k[0].x, top_k[0].y) == h_pixel);
    let neighborhood = extract_neighborhood(map, model, &heatmap_v, h_pixel, 5, 1)?;
    let excluded_count = heatmap_v.excluded_count();
    Ok(AnomalyReport {
        heatmap_i,
        heatmap_v,
        stats,
        h_pixel,
        top_k,
        neighborhood,
        excluded_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{MapMetadata, ObsMode};
    use crate::synth::{synth_map, MapLayout, NoiseModel, PixelClass};

    #[test]
    fn identity_reconstruction_scores_zero() {
        let x = Tensor3::from_vec(1, 2, 4, vec![0.1, 0.9, 0.4, 0.3, -0.2, 0.0, 0.2, 0.1])
            .unwrap();
        let (ri, rv) = rmse_channels(&x, &x, 0);
        assert_eq!((ri, rv), (0.0, 0.0));
    }

    #[test]
    fn constant_unit_residual_scores_one() {
        let x = Tensor3::zeros(1, 2, 112);
        let mut recon = Tensor3::zeros(1, 2, 112);
        recon.row_mut(0, 1).fill(1.0);
        let (ri, rv) = rmse_channels(&x, &recon, 0);
        assert_eq!(ri, 0.0);
        assert!((rv - 1.0).abs() < 1e-15);
    }

    fn test_map(width: usize, height: usize, sigma: f64, seed: u64) -> SPMap {
        let meta = MapMetadata::for_mode("20240504_143042", ObsMode::QT);
        synth_map(
            width,
            height,
            &MapLayout::Sunspot,
            &[],
            meta,
            NoiseModel::new(sigma),
            seed,
        )
        .unwrap()
        .0
    }

    #[test]
    fn heatmap_matches_per_pixel_oracle() {
        let map = test_map(4, 4, 0.01, 3);
        let model = AutoencoderModel::default_seeded(3);
        let (hi, hv) = rmse_per_pixel(&map, &model).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let (norm, _) = normalize_spectrum(map.pixel(x, y)).unwrap();
                let mut xt = Tensor3::zeros(1, 2, map.grid.n_points);
                xt.row_mut(0, 0).copy_from_slice(&norm.i);
                xt.row_mut(0, 1).copy_from_slice(&norm.v);
                let recon = model.reconstruct(&xt).unwrap();
                let (ri, rv) = rmse_channels(&xt, &recon, 0);
                assert_eq!(hi.get(x, y), ri, "RMSE_I differs at ({x},{y})");
                assert_eq!(hv.get(x, y), rv, "RMSE_V differs at ({x},{y})");
            }
        }
    }

    #[test]
    fn sigma_obs_zero_for_noiseless_map() {
        let map = test_map(6, 6, 0.0, 4);
        let (si, sv) = sigma_obs(&map);
        assert!(si < 1e-10, "sigma_obs_i = {si}");
        assert!(sv < 1e-10, "sigma_obs_v = {sv}");
    }

    #[test]
    fn sigma_obs_tracks_injected_noise() {
        // The V channel keeps its raw units under zero-mean normalization,
        // so σ_obs_v estimates the injected σ directly (the 16-sample
        // population std is biased a few percent low).
        let sigma = 0.01;
        let meta = MapMetadata::for_mode("20240101_000000", ObsMode::QT);
        let (map, _) = synth_map(
            128,
            128,
            &MapLayout::Uniform(PixelClass::QuietSun),
            &[],
            meta,
            NoiseModel::new(sigma),
            11,
        )
        .unwrap();
        let (_, sv) = sigma_obs(&map);
        assert!(
            (sv - sigma).abs() / sigma < 0.05,
            "sigma_obs_v {sv} not within 5% of {sigma}"
        );
    }

    #[test]
    fn stats_mean_arithmetic() {
        let h = Heatmap {
            width: 2,
            height: 1,
            values: vec![0.0, 0.2],
        };
        let stats = map_stats(&h, &h, (0.5, 0.25));
        assert!((stats.mu_rmse_i - 0.1).abs() < 1e-15);
        assert_eq!(stats.sigma_obs_i, 0.5);
        assert_eq!(stats.sigma_obs_v, 0.25);
    }

    #[test]
    fn all_zero_heatmap_zero_mean() {
        let h = Heatmap {
            width: 3,
            height: 1,
            values: vec![0.0; 3],
        };
        assert_eq!(h.mean_valid(), Some(0.0));
    }

    #[test]
    fn h_pixel_argmax_and_ties() {
        let h = Heatmap {
            width: 2,
            height: 2,
            values: vec![0.0, 1.0, 3.0, 2.0],
        };
        assert_eq!(locate_h_pixel(&h).unwrap(), (0, 1));

        let uniform = Heatmap {
            width: 3,
            height: 2,
            values: vec![0.5; 6],
        };
        assert_eq!(locate_h_pixel(&uniform).unwrap(), (0, 0));
    }

    #[test]
    fn h_pixel_ignores_excluded() {
        let h = Heatmap {
            width: 2,
            height: 1,
            values: vec![f64::NAN, 0.1],
        };
        assert_eq!(locate_h_pixel(&h).unwrap(), (1, 0));
        let all = Heatmap {
            width: 2,
            height: 1,
            values: vec![f64::NAN, f64::NAN],
        };
        assert!(matches!(locate_h_pixel(&all), Err(AnomalyError::AllExcluded)));
    }

    #[test]
    fn h_pixel_invariant_under_monotone_rescale() {
        let map = test_map(5, 5, 0.02, 9);
        let model = AutoencoderModel::default_seeded(9);
        let (_, hv) = rmse_per_pixel(&map, &model).unwrap();
        let rescaled = Heatmap {
            width: hv.width,
            height: hv.height,
            values: hv.values.iter().map(|v| 3.0 * v * v + 0.5).collect(),
        };
        assert_eq!(
            locate_h_pixel(&hv).unwrap(),
            locate_h_pixel(&rescaled).unwrap()
        );
    }

    #[test]
    fn top_k_ranked_and_bounded() {
        let h = Heatmap {
            width: 2,
            height: 2,
            values: vec![0.3, f64::NAN, 0.9, 0.3],
        };
        let top = top_k_pixels(&h, 10);
        assert_eq!(top.len(), 3, "excluded pixels must not appear");
        assert_eq!((top[0].x, top[0].y), (0, 1));
        // Tie at 0.3 resolves to the smaller row-major index.
        assert_eq!((top[1].x, top[1].y), (0, 0));
        assert!(top_k_pixels(&h, 0).is_empty());
    }

    #[test]
    fn neighborhood_center_cell_is_center_pixel() {
        let map = test_map(12, 12, 0.01, 5);
        let model = AutoencoderModel::default_seeded(5);
        let (_, hv) = rmse_per_pixel(&map, &model).unwrap();
        let nb = extract_neighborhood(&map, &model, &hv, (6, 6), 5, 1).unwrap();
        assert!(!nb.clipped);
        assert_eq!((nb.width, nb.height), (10, 10));
        let center_cell = nb.cells[4].as_ref().unwrap();
        assert_eq!((center_cell.x, center_cell.y), (6, 6));
        // Cell spectra equal the direct reconstruction of that pixel.
        let (norm, _) = normalize_spectrum(map.pixel(6, 6)).unwrap();
        let mut xt = Tensor3::zeros(1, 2, map.grid.n_points);
        xt.row_mut(0, 0).copy_from_slice(&norm.i);
        xt.row_mut(0, 1).copy_from_slice(&norm.v);
        let recon = model.reconstruct(&xt).unwrap();
        assert_eq!(center_cell.original_v, xt.row(0, 1).to_vec());
        assert_eq!(center_cell.reconstructed_v, recon.row(0, 1).to_vec());
    }

    #[test]
    fn neighborhood_clipped_at_corner() {
        let map = test_map(8, 8, 0.01, 6);
        let model = AutoencoderModel::default_seeded(6);
        let (_, hv) = rmse_per_pixel(&map, &model).unwrap();
        let nb = extract_neighborhood(&map, &model, &hv, (0, 0), 5, 1).unwrap();
        assert!(nb.clipped);
        assert_eq!((nb.x0, nb.y0), (0, 0));
        assert_eq!((nb.width, nb.height), (5, 5));
        // Upper-left cells of the 3x3 grid are off-map.
        assert!(nb.cells[0].is_none());
        assert!(nb.cells[4].is_some());
    }

    #[test]
    fn analyze_map_top1_is_h_pixel() {
        let map = test_map(8, 8, 0.01, 7);
        let model = AutoencoderModel::default_seeded(7);
        let report = analyze_map(&map, &model, Some(5)).unwrap();
        assert_eq!((report.top_k[0].x, report.top_k[0].y), report.h_pixel);
        assert_eq!(report.excluded_count, 0);
    }
}
