//! Masks and synthetic datasets.

use cogd_core::csc::{synthesize, CodeMaps, FilterBank};
use cogd_core::deep::{predict, MaskInit, TinyNet, ToyDataset};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;

/// The generator behind every random draw in the harness.
pub type HarnessRng = Pcg64;

pub fn rng_from_seed(seed: u64) -> HarnessRng {
    Pcg64::seed_from_u64(seed)
}

/// Binary mask with exactly `round(keep_fraction · pixels)` ones placed
/// uniformly at random.
pub fn make_mask(
    shape: (usize, usize),
    keep_fraction: f64,
    seed: u64,
) -> cogd_core::Result<Array2<f64>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(cogd_core::Error::InvalidInput(format!(
            "keep_fraction {keep_fraction} is outside (0, 1]"
        )));
    }
    let n = shape.0 * shape.1;
    let keep = ((keep_fraction * n as f64).round() as usize).min(n);
    let mut mask = Array2::zeros(shape);
    let mut rng = rng_from_seed(seed);
    for i in rand::seq::index::sample(&mut rng, n, keep) {
        mask[[i / shape.1, i % shape.1]] = 1.0;
    }
    Ok(mask)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherParams {
    pub samples: usize,
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub outputs: usize,
    pub noise: f64,
}

/// `(x, teacher(x) + noise)` with standard normal inputs and a random
/// unnormalized ReLU teacher.
pub fn teacher_dataset<R: Rng>(
    rng: &mut R,
    p: &TeacherParams,
) -> cogd_core::Result<(ToyDataset, TinyNet)> {
    let teacher = TinyNet::random(
        rng,
        p.input_dim,
        &p.hidden,
        p.outputs,
        false,
        MaskInit::Ones,
    )?;
    let x = Array2::from_shape_fn((p.samples, p.input_dim), |_| {
        rng.sample::<f64, _>(StandardNormal)
    });
    let mut y = predict(&teacher, x.view())?;
    if p.noise > 0.0 {
        y.mapv_inplace(|v| v + p.noise * rng.sample::<f64, _>(StandardNormal));
    }
    Ok((ToyDataset::new(x, y)?, teacher))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterParams {
    pub filters: usize,
    pub filter_size: usize,
    pub image_size: usize,
    /// Probability that a code entry is non-zero.
    pub density: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterSynthesis {
    pub image: Array2<f64>,
    pub filters: FilterBank,
    pub codes: CodeMaps,
}

/// An image `Σ_k A_k ⊛ x_k` from unit-norm Gaussian filters and
/// Bernoulli-Gaussian codes, returned with its ground truth.
pub fn filter_synthesis<R: Rng>(
    rng: &mut R,
    p: &FilterParams,
) -> cogd_core::Result<FilterSynthesis> {
    let d = p.filter_size;
    let filters = (0..p.filters)
        .map(|_| {
            let f = Array2::from_shape_fn((d, d), |_| rng.sample::<f64, _>(StandardNormal));
            let n = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                f / n
            } else {
                f
            }
        })
        .collect();
    let filters = FilterBank::new(filters)?;
    let s = p.image_size;
    let codes = CodeMaps {
        maps: (0..p.filters)
            .map(|_| {
                Array2::from_shape_fn((s, s), |_| {
                    if rng.random::<f64>() < p.density {
                        rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    }
                })
            })
            .collect(),
    };
    let image = synthesize(&filters, &codes)?;
    Ok(FilterSynthesis {
        image,
        filters,
        codes,
    })
}

pub enum SynthKind {
    TeacherNet(TeacherParams),
    FilterSynthesis(FilterParams),
}

pub enum Dataset {
    TeacherNet { data: ToyDataset, teacher: TinyNet },
    FilterSynthesis(FilterSynthesis),
}

/// Seeded entry point over both generators.
pub fn synth_dataset(kind: &SynthKind, seed: u64) -> cogd_core::Result<Dataset> {
    let mut rng = rng_from_seed(seed);
    Ok(match kind {
        SynthKind::TeacherNet(p) => {
            let (data, teacher) = teacher_dataset(&mut rng, p)?;
            Dataset::TeacherNet { data, teacher }
        }
        SynthKind::FilterSynthesis(p) => Dataset::FilterSynthesis(filter_synthesis(&mut rng, p)?),
    })
}
