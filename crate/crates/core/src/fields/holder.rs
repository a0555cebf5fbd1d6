//! Scale-resolved Hoelder seminorms `[f]_{0,alpha|r}` and moduli of continuity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FlatError, Result};
use crate::fields::ScalarField;
use crate::mollify::log_log_slope;

/// Grids with more nodes than this use stratified source subsampling.
pub const EXACT_NODE_LIMIT: usize = 256 * 256;
pub const SUBSAMPLE_SEED: u64 = 0x5eed_4e1d;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderProfile {
    pub alpha: f64,
    /// Descending.
    pub scales: Vec<f64>,
    /// `[f]_{0,alpha|r}` for each scale.
    pub values: Vec<f64>,
    /// `omega_f(r)` for each scale.
    pub omega: Vec<f64>,
    /// Set when only a stratified subset of source nodes was examined.
    pub subsampled: bool,
    pub sources: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HolderVerdict {
    Member,
    NonMember,
    Inconclusive,
}

/// Node offsets `(di, dj)` in a half plane (each unordered pair once) with
/// `0 < |offset| <= r_max`, and the bucket index of the smallest scale covering it.
struct OffsetTable {
    di: Vec<i64>,
    dj: Vec<i64>,
    dist_pow: Vec<f64>,
    bucket: Vec<usize>,
}

fn offset_table(f: &ScalarField, alpha: f64, asc: &[f64]) -> OffsetTable {
    let g = f.grid();
    let r_max = *asc.last().unwrap();
    let ki = (r_max / g.hx).floor() as i64;
    let kj = (r_max / g.hy).floor() as i64;
    let mut t = OffsetTable { di: vec![], dj: vec![], dist_pow: vec![], bucket: vec![] };
    for dj in 0..=kj {
        for di in -ki..=ki {
            if dj == 0 && di <= 0 {
                continue;
            }
            let d = (di as f64 * g.hx).hypot(dj as f64 * g.hy);
            let slack = 1e-12 * r_max;
            if let Some(b) = asc.iter().position(|&r| d <= r + slack) {
                t.di.push(di);
                t.dj.push(dj);
                t.dist_pow.push(d.powf(alpha));
                t.bucket.push(b);
            }
        }
    }
    t
}

/// Stratified subsample: one pseudo-random node from each block.
fn stratified_sources(nx: usize, ny: usize, budget: usize) -> Vec<(usize, usize)> {
    let block = ((nx * ny) as f64 / budget as f64).sqrt().ceil().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(SUBSAMPLE_SEED);
    let mut out = Vec::new();
    for bj in (0..ny).step_by(block) {
        for bi in (0..nx).step_by(block) {
            let i = bi + rng.gen_range(0..block.min(nx - bi));
            let j = bj + rng.gen_range(0..block.min(ny - bj));
            out.push((i, j));
        }
    }
    out
}

/// Seminorm profile `[f]_{0,alpha|r}` and modulus `omega_f(r)` at each scale.
///
/// Pairs are enumerated through the grid's offset window of radius `max(scales)`,
/// so the cost is `O(N (r/h)^2)`. Above [`EXACT_NODE_LIMIT`] nodes only a
/// stratified set of source nodes is used and the result is flagged.
pub fn holder_profile(f: &ScalarField, alpha: f64, scales: &[f64]) -> Result<HolderProfile> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(FlatError::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if scales.is_empty() {
        return Err(FlatError::InvalidArgument("no scales given".into()));
    }
    let g = *f.grid();
    let diam = g.diameter();
    let h_min = g.h_min();
    for &r in scales {
        if !(r > 0.0 && r <= diam * (1.0 + 1e-12)) {
            return Err(FlatError::InvalidArgument(format!("scale {r} outside (0, {diam}]")));
        }
        if r < h_min * (1.0 - 1e-12) {
            return Err(FlatError::EmptyPairSet { scale: r, spacing: h_min });
        }
    }
    let mut asc: Vec<f64> = scales.to_vec();
    asc.sort_by(|a, b| a.partial_cmp(b).unwrap());
    asc.dedup();

    let table = offset_table(f, alpha, &asc);
    let nb = asc.len();
    let (nx, ny) = (g.nx as i64, g.ny as i64);
    let vals = f.values();

    let subsampled = g.len() > EXACT_NODE_LIMIT;
    let sources: Vec<(usize, usize)> = if subsampled {
        stratified_sources(g.nx, g.ny, EXACT_NODE_LIMIT / 4)
    } else {
        (0..g.ny).flat_map(|j| (0..g.nx).map(move |i| (i, j))).collect()
    };

    let mut ratio = vec![0.0f64; nb];
    let mut osc = vec![0.0f64; nb];
    let visit = |i: i64, j: i64, di: i64, dj: i64, k: usize, ratio: &mut [f64], osc: &mut [f64]| {
        let (i2, j2) = (i + di, j + dj);
        if i2 < 0 || i2 >= nx || j2 < 0 || j2 >= ny {
            return;
        }
        let a = vals[(j * nx + i) as usize];
        let b = vals[(j2 * nx + i2) as usize];
        let diff = (a - b).abs();
        let bkt = table.bucket[k];
        let q = diff / table.dist_pow[k];
        if q > ratio[bkt] {
            ratio[bkt] = q;
        }
        if diff > osc[bkt] {
            osc[bkt] = diff;
        }
    };
    for &(i, j) in &sources {
        let (i, j) = (i as i64, j as i64);
        for k in 0..table.di.len() {
            visit(i, j, table.di[k], table.dj[k], k, &mut ratio, &mut osc);
            if subsampled {
                // the half-plane table sees each pair once only when every node is a source
                visit(i, j, -table.di[k], -table.dj[k], k, &mut ratio, &mut osc);
            }
        }
    }
    for b in 1..nb {
        ratio[b] = ratio[b].max(ratio[b - 1]);
        osc[b] = osc[b].max(osc[b - 1]);
    }
    // report in descending scale order
    let order: Vec<usize> = (0..nb).rev().collect();
    Ok(HolderProfile {
        alpha,
        scales: order.iter().map(|&b| asc[b]).collect(),
        values: order.iter().map(|&b| ratio[b]).collect(),
        omega: order.iter().map(|&b| osc[b]).collect(),
        subsampled,
        sources: sources.len(),
    })
}

/// Decide membership in the little Hoelder space from the small-scale trend.
///
/// Member: the profile decays toward small `r` (log-log slope above
/// `MIN_DECAY_SLOPE`) and its smallest-scale value is below `threshold`.
/// Non-member: the smallest-scale value stays at or above `threshold` with no
/// such decay. Anything else, including ladders spanning under two octaves, is
/// inconclusive.
pub fn little_holder_verdict(profile: &HolderProfile, threshold: f64) -> HolderVerdict {
    const MIN_DECAY_SLOPE: f64 = 0.05;
    let n = profile.scales.len();
    if n < 4 {
        return HolderVerdict::Inconclusive;
    }
    let r_hi = profile.scales.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let r_lo = profile.scales.iter().cloned().fold(f64::INFINITY, f64::min);
    if r_hi / r_lo < 4.0 * (1.0 - 1e-12) {
        return HolderVerdict::Inconclusive;
    }
    if profile.values.iter().all(|&v| v <= 1e-14) {
        return HolderVerdict::Member;
    }
    let smallest = profile
        .scales
        .iter()
        .zip(&profile.values)
        .min_by(|a, b| a.0.partial_cmp(b.0).unwrap())
        .map(|(_, &v)| v)
        .unwrap();
    let pts: Vec<(f64, f64)> = profile
        .scales
        .iter()
        .zip(&profile.values)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&r, &v)| (r, v))
        .collect();
    let decaying = if pts.len() < n {
        // exact zeros at small scales
        true
    } else {
        let (slope, _) = log_log_slope(&pts);
        slope > MIN_DECAY_SLOPE
    };
    if decaying && smallest < threshold {
        HolderVerdict::Member
    } else if !decaying && smallest >= threshold {
        HolderVerdict::NonMember
    } else {
        HolderVerdict::Inconclusive
    }
}
