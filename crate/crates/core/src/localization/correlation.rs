use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a multi-channel mask row becomes a spatial pixel indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// A pixel is kept when any of its channels is kept.
    #[default]
    Union,
    /// One map per channel, summed.
    PerChannel,
}

/// S(d): number of ordered kept-pixel pairs (z, z') with z − z' = d, for
/// d ∈ [−(N_p−1), N_p−1]².
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelationMap {
    pub unit: usize,
    pub n_p: usize,
    /// Row-major over (dy, dx), both offset by N_p − 1.
    values: Vec<u64>,
}

impl CorrelationMap {
    pub fn from_values(unit: usize, n_p: usize, values: Vec<u64>) -> Result<Self> {
        let side = 2 * n_p - 1;
        if values.len() != side * side {
            return Err(Error::Shape(format!(
                "{} bins for N_p = {n_p} (need {})",
                values.len(),
                side * side
            )));
        }
        Ok(Self { unit, n_p, values })
    }

    pub fn side(&self) -> usize {
        2 * self.n_p - 1
    }

    pub fn radius(&self) -> i64 {
        self.n_p as i64 - 1
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    fn index(&self, dx: i64, dy: i64) -> Option<usize> {
        let r = self.radius();
        if dx.abs() > r || dy.abs() > r {
            return None;
        }
        Some(((dy + r) as usize) * self.side() + (dx + r) as usize)
    }

    /// S(dx, dy); zero outside the displacement range.
    pub fn get(&self, dx: i64, dy: i64) -> u64 {
        self.index(dx, dy).map_or(0, |i| self.values[i])
    }

    /// Iterate `(dx, dy, S)` over all bins.
    pub fn bins(&self) -> impl Iterator<Item = (i64, i64, u64)> + '_ {
        let side = self.side();
        let r = self.radius();
        self.values
            .iter()
            .enumerate()
            .map(move |(i, &v)| ((i % side) as i64 - r, (i / side) as i64 - r, v))
    }

    /// S(−d) as a map.
    pub fn mirrored(&self) -> CorrelationMap {
        let mut values = self.values.clone();
        values.reverse();
        CorrelationMap {
            unit: self.unit,
            n_p: self.n_p,
            values,
        }
    }

    /// Checks pair symmetry and the per-bin bounds; `Err` names the first
    /// violated bin.
    pub fn check_invariants(&self, kept_pixels: u64) -> Result<()> {
        if self.get(0, 0) != kept_pixels {
            return Err(Error::Numerical(format!(
                "S(0,0) = {} but {kept_pixels} pixels are kept",
                self.get(0, 0)
            )));
        }
        let n = self.n_p as i64;
        for (dx, dy, v) in self.bins() {
            if v != self.get(-dx, -dy) {
                return Err(Error::Numerical(format!("S not symmetric at ({dx},{dy})")));
            }
            let bound = ((n - dx.abs()) * (n - dy.abs())) as u64;
            if v > bound {
                return Err(Error::Numerical(format!("S({dx},{dy}) = {v} exceeds {bound}")));
            }
        }
        Ok(())
    }
}

/// Spatial indicator(s) of a mask row: one per channel in `PerChannel` mode,
/// a single union map otherwise.
pub fn pixel_support(mask_row: &[bool], n_p: usize, channels: usize, mode: ChannelMode) -> Result<Vec<Vec<bool>>> {
    let p = n_p * n_p;
    if n_p == 0 || channels == 0 || mask_row.len() != channels * p {
        return Err(Error::Shape(format!(
            "mask row of {} entries is not {channels} channels of {n_p}x{n_p} pixels",
            mask_row.len()
        )));
    }
    Ok(match mode {
        ChannelMode::Union => {
            vec![(0..p).map(|i| (0..channels).any(|c| mask_row[c * p + i])).collect()]
        }
        ChannelMode::PerChannel => mask_row.chunks(p).map(<[bool]>::to_vec).collect(),
    })
}

/// Infer N_p from a row length, failing when the per-channel pixel count is
/// not a perfect square.
pub fn infer_n_p(len: usize, channels: usize) -> Result<usize> {
    if channels == 0 || len % channels != 0 {
        return Err(Error::Shape(format!("{len} entries do not split into {channels} channels")));
    }
    let p = len / channels;
    let n = (p as f64).sqrt().round() as usize;
    if n * n != p || n == 0 {
        return Err(Error::Shape(format!("{p} pixels per channel is not a square image")));
    }
    Ok(n)
}

/// Correlation map by direct enumeration of kept-pixel pairs.
pub fn correlation_map(unit: usize, mask_row: &[bool], n_p: usize, channels: usize, mode: ChannelMode) -> Result<CorrelationMap> {
    if infer_n_p(mask_row.len(), channels)? != n_p {
        return Err(Error::Shape(format!("mask row does not hold {n_p}x{n_p} images")));
    }
    let side = 2 * n_p - 1;
    let r = n_p as i64 - 1;
    let mut values = vec![0u64; side * side];
    for support in pixel_support(mask_row, n_p, channels, mode)? {
        let kept: Vec<(i64, i64)> = support
            .iter()
            .enumerate()
            .filter(|(_, &k)| k)
            .map(|(i, _)| ((i % n_p) as i64, (i / n_p) as i64))
            .collect();
        for &(x1, y1) in &kept {
            for &(x2, y2) in &kept {
                let (dx, dy) = (x1 - x2, y1 - y2);
                values[((dy + r) as usize) * side + (dx + r) as usize] += 1;
            }
        }
    }
    CorrelationMap::from_values(unit, n_p, values)
}
