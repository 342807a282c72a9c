use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{LabelVector, LabeledDataset, SubjectData};
use crate::error::{Error, Result};

/// Parameters of the synthetic multi-subject generator.
///
/// Every class gets one latent pattern of length `v`. Subject `i` observes
/// the pattern of the current class through its own random orthogonal
/// mixing `Q_i`, plus isotropic Gaussian noise, so an exact linear
/// un-mixing exists when `noise_sigma == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_subjects: usize,
    pub t_per_class: usize,
    pub num_classes: usize,
    pub v: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Use a single mixing matrix for every subject.
    #[serde(default)]
    pub shared_mixing: bool,
}

impl SyntheticSpec {
    pub fn t(&self) -> usize {
        self.t_per_class * self.num_classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_subjects == 0 || self.t_per_class == 0 || self.num_classes == 0 || self.v == 0 {
            return Err(Error::invalid("synthetic spec sizes must all be positive"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma)));
        }
        if self.t() > self.v {
            return Err(Error::invalid(format!(
                "T = {} exceeds V = {}; the generator models the V >= T regime",
                self.t(),
                self.v
            )));
        }
        if self.t() < 2 {
            return Err(Error::invalid("synthetic data needs T >= 2"));
        }
        Ok(())
    }

    pub fn labels(&self) -> LabelVector {
        let y = (0..self.num_classes)
            .flat_map(|c| std::iter::repeat_n(c, self.t_per_class))
            .collect();
        LabelVector::new(y, self.num_classes).expect("class-blocked labels are valid")
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // row-major draw order, independent of nalgebra's storage order
    let values: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    DMatrix::from_row_slice(rows, cols, &values)
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`.
fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, n, n).qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..n {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    q
}

/// Raw (unstandardized) subject matrices and the class-blocked labels.
pub fn generate_synthetic_raw(spec: &SyntheticSpec) -> Result<(Vec<DMatrix<f64>>, LabelVector)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels = spec.labels();
    let patterns = gaussian_matrix(&mut rng, spec.num_classes, spec.v);
    let shared = spec.shared_mixing.then(|| random_orthogonal(&mut rng, spec.v));

    let latent = DMatrix::from_fn(spec.t(), spec.v, |t, n| patterns[(labels.as_slice()[t], n)]);
    let mut raws = Vec::with_capacity(spec.num_subjects);
    for _ in 0..spec.num_subjects {
        let q = match &shared {
            Some(q) => q.clone(),
            None => random_orthogonal(&mut rng, spec.v),
        };
        // noise is drawn even when sigma == 0 so the stream stays aligned across noise levels
        let noise = gaussian_matrix(&mut rng, spec.t(), spec.v);
        raws.push(&latent * q + noise * spec.noise_sigma);
    }
    Ok((raws, labels))
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    let (raws, labels) = generate_synthetic_raw(spec)?;
    let subjects = raws
        .iter()
        .enumerate()
        .map(|(i, x)| SubjectData::standardized(format!("sub-{:02}", i + 1), x))
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(subjects, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            num_subjects: 3,
            t_per_class: 3,
            num_classes: 2,
            v: 8,
            noise_sigma: 0.3,
            seed: 11,
            shared_mixing: false,
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_synthetic(&spec()).unwrap();
        let b = generate_synthetic(&spec()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec { seed: 12, ..spec() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shared_mixing_without_noise_gives_identical_subjects() {
        let s = SyntheticSpec {
            num_subjects: 2,
            noise_sigma: 0.0,
            shared_mixing: true,
            ..spec()
        };
        let ds = generate_synthetic(&s).unwrap();
        assert_eq!(ds.subjects()[0].x(), ds.subjects()[1].x());
    }

    #[test]
    fn single_class_rows_identical() {
        let s = SyntheticSpec {
            num_classes: 1,
            t_per_class: 4,
            noise_sigma: 0.0,
            ..spec()
        };
        let (raws, labels) = generate_synthetic_raw(&s).unwrap();
        assert_eq!(labels.num_classes(), 1);
        for x in &raws {
            for r in 1..x.nrows() {
                assert_eq!(x.row(r), x.row(0));
            }
        }
    }

    #[test]
    fn mixing_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_orthogonal(&mut rng, 7);
        assert!((q.transpose() * &q - DMatrix::identity(7, 7)).amax() < 1e-12);
    }

    #[test]
    fn class_blocked_labels_and_validation() {
        assert_eq!(spec().labels().as_slice(), &[0, 0, 0, 1, 1, 1]);
        assert!(generate_synthetic(&SyntheticSpec { v: 5, ..spec() }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { noise_sigma: -1.0, ..spec() }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { num_subjects: 0, ..spec() }).is_err());
    }
}
