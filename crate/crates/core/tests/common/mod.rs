#![allow(dead_code, clippy::needless_range_loop)]

//! Fixtures and reference computations shared by the integration tests.
//! Nothing in here calls into the library's numeric code paths.

pub mod npy_cases;
pub mod oracles;

use probe_inject::feature_store::{
    DatasetManifest, FeatureMatrix, FeatureRecord, Label, ManifestEntry, Split,
};
use probe_inject::linear_head::HeadParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn chacha(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Plain loop-by-loop evaluation of the head; `keep` scales hidden units
/// (1.0 = untouched, 0.0 = dropped, 1/(1-p) = kept under inverted dropout).
pub fn oracle_probability(x: &[f64], p: &HeadParams, keep: &[f64]) -> f64 {
    let mut logit = p.b2;
    for j in 0..p.hidden {
        let mut z = p.b1[j];
        for i in 0..p.dim {
            z += x[i] * p.w1[i * p.hidden + j];
        }
        let h = if z > 0.0 { z } else { p.leaky_slope * z };
        logit += h * keep[j] * p.w2[j];
    }
    1.0 / (1.0 + (-logit).exp())
}

pub fn oracle_mean_bce(batch: &[FeatureRecord], p: &HeadParams, keeps: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (r, keep) in batch.iter().zip(keeps) {
        let q = oracle_probability(&r.features, p, keep).clamp(1e-12, 1.0 - 1e-12);
        let y = if r.label == Label::Fake { 1.0 } else { 0.0 };
        total += -(y * q.ln() + (1.0 - y) * (1.0 - q).ln());
    }
    total / batch.len() as f64
}

pub fn random_params(dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> HeadParams {
    let mut p = HeadParams::zeros(dim, hidden);
    let a1 = 1.0 / (dim as f64).sqrt();
    p.w1.iter_mut().for_each(|w| *w = rng.gen_range(-a1..a1));
    p.b1.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    let a2 = 1.0 / (hidden as f64).sqrt();
    p.w2.iter_mut().for_each(|w| *w = rng.gen_range(-2.0 * a2..2.0 * a2));
    p.b2 = rng.gen_range(-0.5..0.5);
    p
}

pub fn random_batch(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<FeatureRecord> {
    (0..n)
        .map(|i| FeatureRecord {
            image_id: format!("img{i}"),
            features: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            label: if rng.gen_bool(0.5) { Label::Fake } else { Label::Real },
            split: Split::Train,
        })
        .collect()
}

/// Two Gaussian clusters at ±0.5·1 with σ = 0.1, `per_class` samples each,
/// interleaved Fake/Real. Every tenth sample of each class goes to `val`.
pub fn separable_gaussian(per_class: usize, dim: usize, seed: u64) -> Vec<FeatureRecord> {
    let mut rng = chacha(seed);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut out = Vec::with_capacity(2 * per_class);
    for i in 0..per_class {
        for label in [Label::Fake, Label::Real] {
            let mean = if label == Label::Fake { 0.5 } else { -0.5 };
            out.push(FeatureRecord {
                image_id: format!("{}{i:04}", label.as_str()),
                features: (0..dim).map(|_| mean + noise.sample(&mut rng)).collect(),
                label,
                split: if i % 10 == 9 { Split::Val } else { Split::Train },
            });
        }
    }
    out
}

/// A test-split dataset whose two classes overlap, so a trained head makes
/// some mistakes. Returns the matrix and a manifest with row `i` ↔ entry `i`.
pub fn overlapping_dataset(
    n: usize,
    dim: usize,
    fake_fraction: f64,
    seed: u64,
) -> (FeatureMatrix, DatasetManifest) {
    let mut rng = chacha(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::with_capacity(n);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let label = if rng.gen_bool(fake_fraction) { Label::Fake } else { Label::Real };
        let shift = if label == Label::Fake { 0.6 } else { -0.6 };
        let mut row: Vec<f64> = (0..dim).map(|_| noise.sample(&mut rng)).collect();
        row[0] += shift;
        rows.push(row);
        entries.push(ManifestEntry {
            image_id: format!("t{i:03}"),
            row: i,
            label,
            split: Split::Test,
            explanation: None,
        });
    }
    (
        FeatureMatrix::from_rows(&rows).unwrap(),
        DatasetManifest::from_entries(entries).unwrap(),
    )
}

/// A head that reads only the first feature: logit = scale·x0 + bias.
pub fn first_feature_head(dim: usize, scale: f64, bias: f64) -> HeadParams {
    let mut p = HeadParams::zeros(dim, 1);
    p.w1[0] = 1.0;
    p.w2[0] = scale;
    p.b2 = bias;
    p
}

/// Floor on the denominator of the relative error, so coordinates whose
/// true gradient is ~0 are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coord {
    W1(usize),
    B1(usize),
    W2(usize),
    B2,
}

pub fn perturbed(p: &HeadParams, c: Coord, delta: f64) -> HeadParams {
    let mut q = p.clone();
    match c {
        Coord::W1(i) => q.w1[i] += delta,
        Coord::B1(i) => q.b1[i] += delta,
        Coord::W2(i) => q.w2[i] += delta,
        Coord::B2 => q.b2 += delta,
    }
    q
}

pub fn analytic_at(g: &probe_inject::linear_head::Gradients, c: Coord) -> f64 {
    match c {
        Coord::W1(i) => g.w1[i],
        Coord::B1(i) => g.b1[i],
        Coord::W2(i) => g.w2[i],
        Coord::B2 => g.b2,
    }
}

pub fn central_difference(
    batch: &[FeatureRecord],
    p: &HeadParams,
    keeps: &[Vec<f64>],
    c: Coord,
    h: f64,
) -> f64 {
    let up = oracle_mean_bce(batch, &perturbed(p, c, h), keeps);
    let down = oracle_mean_bce(batch, &perturbed(p, c, -h), keeps);
    (up - down) / (2.0 * h)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

pub struct GradInstance {
    pub params: HeadParams,
    pub batch: Vec<FeatureRecord>,
    pub mask: Option<probe_inject::linear_head::DropoutMask>,
    pub keeps: Vec<Vec<f64>>,
}

fn min_abs_preactivation(batch: &[FeatureRecord], p: &HeadParams) -> f64 {
    let mut m = f64::INFINITY;
    for r in batch {
        for j in 0..p.hidden {
            let mut z = p.b1[j];
            for i in 0..p.dim {
                z += r.features[i] * p.w1[i * p.hidden + j];
            }
            m = m.min(z.abs());
        }
    }
    m
}

/// Random (params, batch, optional dropout mask). Instances with a hidden
/// pre-activation within 1e-3 of the LeakyReLU kink are redrawn, since a
/// central difference straddling the kink does not estimate a derivative.
pub fn gradient_instance(
    rng: &mut ChaCha8Rng,
    dim: usize,
    hidden: usize,
    batch_size: usize,
    with_mask: bool,
) -> GradInstance {
    loop {
        let params = random_params(dim, hidden, rng);
        let batch = random_batch(batch_size, dim, rng);
        if min_abs_preactivation(&batch, &params) < 1e-3 {
            continue;
        }
        let scale = 1.0 / (1.0 - params.dropout_p);
        let (mask, keeps) = if with_mask {
            let flags: Vec<bool> = (0..batch_size * hidden)
                .map(|_| rng.gen_bool(1.0 - params.dropout_p))
                .collect();
            let keeps = flags
                .chunks(hidden)
                .map(|row| row.iter().map(|&k| if k { scale } else { 0.0 }).collect())
                .collect();
            (Some(probe_inject::linear_head::DropoutMask::new(hidden, flags)), keeps)
        } else {
            (None, vec![vec![1.0; hidden]; batch_size])
        };
        return GradInstance { params, batch, mask, keeps };
    }
}

/// Every bias and W2 coordinate plus `w1_samples` random W1 coordinates
/// (all of W1 when `w1_samples` is `None`).
pub fn check_coords(p: &HeadParams, w1_samples: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<Coord> {
    let mut coords: Vec<Coord> = match w1_samples {
        None => (0..p.w1.len()).map(Coord::W1).collect(),
        Some(k) => (0..k).map(|_| Coord::W1(rng.gen_range(0..p.w1.len()))).collect(),
    };
    coords.extend((0..p.hidden).map(Coord::B1));
    coords.extend((0..p.hidden).map(Coord::W2));
    coords.push(Coord::B2);
    coords
}

/// Largest per-coordinate relative error between the library gradient and
/// central differences of the reference loss.
pub fn max_gradient_error(inst: &GradInstance, coords: &[Coord]) -> f64 {
    let g = probe_inject::linear_head::gradient(&inst.batch, &inst.params, inst.mask.as_ref())
        .expect("gradient");
    coords
        .iter()
        .map(|&c| {
            let numeric = central_difference(&inst.batch, &inst.params, &inst.keeps, c, FD_STEP);
            relative_error(analytic_at(&g, c), numeric)
        })
        .fold(0.0, f64::max)
}
