//! Synthetic Gaussian-blob classification data and device partitioning.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::net::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows `indices` as a new batch.
    pub fn batch(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        let mut x = Matrix::zeros(indices.len(), self.x.cols);
        for (r, &i) in indices.iter().enumerate() {
            x.data[r * x.cols..(r + 1) * x.cols].copy_from_slice(self.x.row(i));
        }
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Class means drawn once per task; samples add unit Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobTask {
    pub centers: Vec<Vec<f64>>,
    pub noise: f64,
}

impl BlobTask {
    pub fn new<R: Rng + ?Sized>(dim: usize, classes: usize, separation: f64, noise: f64, rng: &mut R) -> Self {
        let centers = (0..classes)
            .map(|_| {
                (0..dim)
                    .map(|_| separation * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        BlobTask { centers, noise }
    }

    pub fn classes(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    /// `n` samples whose labels follow `class_probs`.
    pub fn sample<R: Rng + ?Sized>(&self, class_probs: &[f64], n: usize, rng: &mut R) -> Dataset {
        let mut x = Matrix::zeros(n, self.dim());
        let mut labels = Vec::with_capacity(n);
        for r in 0..n {
            let c = sample_index(class_probs, rng);
            for (j, mu) in self.centers[c].iter().enumerate() {
                x.data[r * x.cols + j] = mu + self.noise * rng.sample::<f64, _>(StandardNormal);
            }
            labels.push(c);
        }
        Dataset { x, labels }
    }

    /// Exactly `n / classes` samples per class (remainder to the first classes).
    pub fn balanced<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Dataset {
        let k = self.classes();
        let mut x = Matrix::zeros(n, self.dim());
        let mut labels = Vec::with_capacity(n);
        for r in 0..n {
            let c = r % k;
            for (j, mu) in self.centers[c].iter().enumerate() {
                x.data[r * x.cols + j] = mu + self.noise * rng.sample::<f64, _>(StandardNormal);
            }
            labels.push(c);
        }
        Dataset { x, labels }
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Label proportions drawn from a symmetric Dirichlet with concentration `alpha`.
pub fn dirichlet<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive concentration");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter().map(|g| g / total).collect()
    } else {
        // Every gamma draw underflowed; put all mass on one class.
        let mut p = vec![0.0; n];
        p[rng.random_range(0..n)] = 1.0;
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wireless::rng_stream;

    #[test]
    fn dirichlet_is_a_distribution() {
        let mut rng = rng_stream(1, 0);
        for alpha in [0.05, 0.3, 5.0] {
            let p = dirichlet(alpha, 6, &mut rng);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn label_skew_follows_proportions() {
        let mut rng = rng_stream(2, 0);
        let task = BlobTask::new(3, 3, 2.0, 1.0, &mut rng);
        let d = task.sample(&[0.0, 1.0, 0.0], 50, &mut rng);
        assert!(d.labels.iter().all(|&l| l == 1));
        let b = task.balanced(9, &mut rng);
        assert_eq!(b.labels, vec![0, 1, 2, 0, 1, 2, 0, 1, 2]);
    }
}
