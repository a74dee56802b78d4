//! Excursion-set geometry on pixel grids.
//!
//! The key primitive is an exact Euclidean distance transform: for every
//! pixel, the distance to the nearest non-excursion pixel center, where
//! everything outside the observation window also counts as non-excursion.
//! Distances are computed as exact integer squared pixel distances by the
//! two-pass separable lower-envelope algorithm, then scaled by the grid
//! spacing, so erosion thresholds behave identically on every platform.
//!
//! Erosion keeps the pixels strictly farther than r from the complement;
//! dilation is defined through the complement's distance transform, which
//! makes the duality `!erode(m, r) == dilate(!m, r)` hold pixel for pixel
//! by construction rather than approximately.

use crate::randfield::{FieldModel, GridField, GridSpec};
use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

// ---------------------------------------------------------------------------
// masks
// ---------------------------------------------------------------------------

/// Excursion set of a field at a threshold: the pixels whose value strictly
/// exceeds it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcursionMask {
    pub spec: GridSpec,
    pub threshold: f64,
    bits: Vec<bool>,
}

impl ExcursionMask {
    /// Build a mask directly from bits (used by file parsing and synthetic
    /// test patterns).
    pub fn from_bits(spec: GridSpec, threshold: f64, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != spec.n_points() {
            return Err(Error::invalid(format!(
                "mask has {} bits, grid has {} pixels",
                bits.len(),
                spec.n_points()
            )));
        }
        Ok(Self {
            spec,
            threshold,
            bits,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[self.spec.index(row, col)]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Fraction of grid pixels inside the excursion set.
    pub fn volume_fraction(&self) -> f64 {
        self.count_true() as f64 / self.spec.n_points() as f64
    }

    pub fn origin_is_set(&self) -> bool {
        self.bits[self.spec.center_index()]
    }

    /// In-window complement (the window convention is applied by the
    /// distance transform, not stored in the bits).
    pub fn complement(&self) -> ExcursionMask {
        ExcursionMask {
            spec: self.spec,
            threshold: self.threshold,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }
}

/// Threshold a field: strict exceedance, so the excursion set at the origin
/// is nonempty exactly when the origin value is above u.
pub fn excursion_mask(field: &GridField, u: f64) -> ExcursionMask {
    ExcursionMask {
        spec: field.spec,
        threshold: u,
        bits: field.values.iter().map(|&v| v > u).collect(),
    }
}

// ---------------------------------------------------------------------------
// distance transform
// ---------------------------------------------------------------------------

/// Distances from each pixel center to the nearest non-excursion pixel
/// center, in domain units. Pixels outside the window count as
/// non-excursion, so boundary pixels of an all-true mask get distance one
/// spacing rather than infinity.
#[derive(Debug, Clone)]
pub struct DistanceMap {
    pub spec: GridSpec,
    dist: Vec<f64>,
}

impl DistanceMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.dist[self.spec.index(row, col)]
    }

    pub fn values(&self) -> &[f64] {
        &self.dist
    }

    pub fn at_origin(&self) -> f64 {
        self.dist[self.spec.center_index()]
    }
}

/// Exact squared distances in integer pixel units from each pixel to the
/// nearest false pixel, treating everything outside the grid as false
/// (virtual false centers sit one pixel beyond every edge).
///
/// Two separable passes: a column sweep produces per-pixel vertical
/// distances to the nearest false in the same column (or past the top and
/// bottom edges), and a row sweep takes the lower envelope of the parabolas
/// those distances define, then folds in the false columns beyond the left
/// and right edges. All arithmetic stays on integers small enough to be
/// exact in f64.
pub fn squared_pixel_distances(mask: &ExcursionMask) -> Vec<i64> {
    let n = mask.spec.n_side();
    let bits = &mask.bits;
    // column pass: g[r][c] = vertical pixel distance to the nearest false
    // (virtual falses at rows -1 and n)
    let mut g = vec![0i64; n * n];
    for c in 0..n {
        let mut run = 1i64; // distance to the virtual false above row 0
        for r in 0..n {
            let k = r * n + c;
            if bits[k] {
                g[k] = run;
                run += 1;
            } else {
                g[k] = 0;
                run = 1;
            }
        }
        let mut run = 1i64; // distance to the virtual false below row n-1
        for r in (0..n).rev() {
            let k = r * n + c;
            if bits[k] {
                g[k] = g[k].min(run);
                run += 1;
            } else {
                run = 1;
            }
        }
    }
    // row pass: lower envelope of parabolas (x - c')^2 + g(r,c')^2 over c',
    // sampled at integer x, plus the virtual false columns at -1 and n
    let mut out = vec![0i64; n * n];
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let mut f = vec![0f64; n];
    for r in 0..n {
        for c in 0..n {
            f[c] = (g[r * n + c] * g[r * n + c]) as f64;
        }
        let mut k = 0usize;
        v[0] = 0;
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        for q in 1..n {
            let qf = q as f64;
            loop {
                let p = v[k] as f64;
                let s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * qf - 2.0 * p);
                if s <= z[k] {
                    // the parabola at v[k] never wins; discard it (k = 0
                    // cannot get here because z[0] is -inf and s is finite)
                    k -= 1;
                } else {
                    k += 1;
                    v[k] = q;
                    z[k] = s;
                    z[k + 1] = f64::INFINITY;
                    break;
                }
            }
        }
        let mut k = 0usize;
        for x in 0..n {
            while z[k + 1] < x as f64 {
                k += 1;
            }
            let dx = x as i64 - v[k] as i64;
            let env = dx * dx + (g[r * n + v[k]] * g[r * n + v[k]]);
            // virtual false columns just beyond the left and right edges
            let left = (x as i64 + 1) * (x as i64 + 1);
            let right = (n as i64 - x as i64) * (n as i64 - x as i64);
            out[r * n + x] = env.min(left).min(right);
        }
    }
    out
}

/// Distance transform in domain units (spacing times the exact pixel
/// distance).
pub fn distance_transform(mask: &ExcursionMask) -> DistanceMap {
    let spacing = mask.spec.spacing();
    let dist = squared_pixel_distances(mask)
        .into_iter()
        .map(|d2| (d2 as f64).sqrt() * spacing)
        .collect();
    DistanceMap {
        spec: mask.spec,
        dist,
    }
}

// ---------------------------------------------------------------------------
// morphology
// ---------------------------------------------------------------------------

/// Pixels strictly farther than r from the complement (window edges
/// included). Comparisons happen on squared distances so no square root can
/// flip a borderline pixel. Radii below one spacing keep the mask unchanged:
/// every excursion pixel is at least one pixel from the complement.
pub fn erode(mask: &ExcursionMask, r: f64) -> Result<ExcursionMask> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::invalid(format!(
            "erosion radius must be finite and nonnegative, got {r}"
        )));
    }
    let sp = mask.spec.spacing();
    let r2 = r * r;
    let bits = squared_pixel_distances(mask)
        .into_iter()
        .map(|d2| d2 as f64 * sp * sp > r2)
        .collect();
    Ok(ExcursionMask {
        spec: mask.spec,
        threshold: mask.threshold,
        bits,
    })
}

/// Pixels within distance r of an excursion pixel or of the window edge
/// (the outside counts as excursion for dilation, the exact mirror of the
/// erosion convention). Defined as the complement of eroding the
/// complement, so the duality is pixel-exact by construction.
pub fn dilate(mask: &ExcursionMask, r: f64) -> Result<ExcursionMask> {
    Ok(erode(&mask.complement(), r)?.complement())
}

/// Fraction of excursion pixels among the pixel centers within distance r
/// of the origin pixel. The disc must fit inside the window.
pub fn disc_fraction(mask: &ExcursionMask, r: f64) -> Result<f64> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::invalid(format!(
            "disc radius must be finite and nonnegative, got {r}"
        )));
    }
    if r > mask.spec.inradius() {
        return Err(Error::invalid(format!(
            "disc radius {r} pokes out of the window (inradius {})",
            mask.spec.inradius()
        )));
    }
    let n = mask.spec.n_side() as i64;
    let m = mask.spec.center() as i64;
    let sp = mask.spec.spacing();
    let r2 = r * r;
    let mut inside = 0usize;
    let mut set = 0usize;
    for row in 0..n {
        for col in 0..n {
            let d2 = ((row - m) * (row - m) + (col - m) * (col - m)) as f64 * sp * sp;
            if d2 <= r2 {
                inside += 1;
                if mask.bits[(row * n + col) as usize] {
                    set += 1;
                }
            }
        }
    }
    debug_assert!(inside > 0, "the origin pixel is always inside");
    Ok(set as f64 / inside as f64)
}

// ---------------------------------------------------------------------------
// mask file format
// ---------------------------------------------------------------------------

/// Serialize a mask with its provenance: the grid header lines (nside,
/// spacing, model, seed) plus a threshold line, then one row of 0/1
/// characters per grid row.
pub fn mask_to_string(mask: &ExcursionMask, model: &FieldModel, seed: u64) -> String {
    let spec = mask.spec;
    let mut out = String::new();
    out.push_str(&format!("nside={}\n", spec.n_side()));
    out.push_str(&format!("spacing={:.16e}\n", spec.spacing()));
    out.push_str(&format!("model={}\n", model.tag()));
    out.push_str(&format!("seed={}\n", seed));
    out.push_str(&format!("threshold={:.16e}\n", mask.threshold));
    for row in 0..spec.n_side() {
        for col in 0..spec.n_side() {
            out.push(if mask.get(row, col) { '1' } else { '0' });
        }
        out.push('\n');
    }
    out
}

pub fn mask_from_str(text: &str) -> Result<(ExcursionMask, FieldModel, u64)> {
    let mut header = std::collections::BTreeMap::new();
    let mut rows: Vec<Vec<bool>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if rows.is_empty() {
            if let Some((key, value)) = line.split_once('=') {
                if matches!(key, "nside" | "spacing" | "model" | "seed" | "threshold") {
                    header.insert(key.to_string(), value.to_string());
                    continue;
                }
            }
        }
        let mut row = Vec::with_capacity(line.len());
        for ch in line.chars() {
            match ch {
                '0' => row.push(false),
                '1' => row.push(true),
                other => {
                    return Err(Error::parse(format!(
                        "line {}: mask rows must be 0/1 characters, found {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        rows.push(row);
    }
    let need = |key: &str| -> Result<&String> {
        header
            .get(key)
            .ok_or_else(|| Error::parse(format!("mask file is missing the {key}= header line")))
    };
    let n_side: usize = need("nside")?
        .parse()
        .map_err(|_| Error::parse("bad nside value"))?;
    let spacing: f64 = need("spacing")?
        .parse()
        .map_err(|_| Error::parse("bad spacing value"))?;
    let model = FieldModel::parse_tag(need("model")?)?;
    let seed: u64 = need("seed")?
        .trim()
        .parse()
        .map_err(|_| Error::parse("bad seed value"))?;
    let threshold: f64 = need("threshold")?
        .parse()
        .map_err(|_| Error::parse("bad threshold value"))?;
    let spec = GridSpec::new(n_side, spacing)?;
    if rows.len() != n_side || rows.iter().any(|r| r.len() != n_side) {
        return Err(Error::parse(format!(
            "mask body must be {n_side} rows of {n_side} characters"
        )));
    }
    let bits: Vec<bool> = rows.into_iter().flatten().collect();
    Ok((
        ExcursionMask::from_bits(spec, threshold, bits)?,
        model,
        seed,
    ))
}

pub fn write_mask_file(
    path: &Path,
    mask: &ExcursionMask,
    model: &FieldModel,
    seed: u64,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(mask_to_string(mask, model, seed).as_bytes())?;
    Ok(())
}

pub fn read_mask_file(path: &Path) -> Result<(ExcursionMask, FieldModel, u64)> {
    let mut text = String::new();
    std::io::BufReader::new(std::fs::File::open(path)?).read_to_string(&mut text)?;
    mask_from_str(&text)
}
