//! Procedural image distributions used in place of photo datasets.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Stripes,
    Gradients,
    Blobs,
    Checkerboards,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Stripes => "stripes",
            DatasetKind::Gradients => "gradients",
            DatasetKind::Blobs => "blobs",
            DatasetKind::Checkerboards => "checkerboards",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stripes" => Ok(DatasetKind::Stripes),
            "gradients" => Ok(DatasetKind::Gradients),
            "blobs" => Ok(DatasetKind::Blobs),
            "checkerboards" => Ok(DatasetKind::Checkerboards),
            other => Err(Error::contract(format!(
                "unknown dataset '{other}' (stripes|gradients|blobs|checkerboards)"
            ))),
        }
    }
}

/// Deterministic, indexable image source with values in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticDataset {
    pub kind: DatasetKind,
    pub size: usize,
    pub seed: u64,
}

fn color<R: Rng>(rng: &mut R) -> [f64; 3] {
    [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
}

impl SyntheticDataset {
    pub fn new(kind: DatasetKind, size: usize, seed: u64) -> Self {
        SyntheticDataset { kind, size, seed }
    }

    /// Image `index` as `[3, size, size]` planar values.
    pub fn image(&self, index: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let s = self.size;
        let mut out = vec![0.0; 3 * s * s];
        let mut put = |y: usize, x: usize, c: [f64; 3]| {
            for k in 0..3 {
                out[k * s * s + y * s + x] = c[k].clamp(-1.0, 1.0);
            }
        };
        let mix = |a: [f64; 3], b: [f64; 3], t: f64| [0, 1, 2].map(|k| a[k] + (b[k] - a[k]) * t);
        match self.kind {
            DatasetKind::Stripes => {
                let (a, b) = (color(&mut rng), color(&mut rng));
                let theta = rng.random_range(0.0..PI);
                let period = rng.random_range(0.125..0.25) * s as f64;
                let phase = rng.random_range(0.0..2.0 * PI);
                let (ct, st) = (theta.cos(), theta.sin());
                for y in 0..s {
                    for x in 0..s {
                        let u = (x as f64 * ct + y as f64 * st) * 2.0 * PI / period + phase;
                        put(y, x, mix(a, b, 0.5 + 0.5 * u.sin()));
                    }
                }
            }
            DatasetKind::Gradients => {
                let (a, b) = (color(&mut rng), color(&mut rng));
                let theta = rng.random_range(0.0..2.0 * PI);
                let (ct, st) = (theta.cos(), theta.sin());
                let half = s as f64 / 2.0;
                let reach = half * (ct.abs() + st.abs());
                for y in 0..s {
                    for x in 0..s {
                        let u = ((x as f64 - half) * ct + (y as f64 - half) * st) / reach.max(1.0);
                        put(y, x, mix(a, b, 0.5 + 0.5 * u));
                    }
                }
            }
            DatasetKind::Blobs => {
                let bg = color(&mut rng);
                let n = rng.random_range(2..=5);
                let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..n)
                    .map(|_| {
                        (
                            rng.random_range(0.0..s as f64),
                            rng.random_range(0.0..s as f64),
                            rng.random_range(0.05..0.2) * s as f64,
                            color(&mut rng),
                        )
                    })
                    .collect();
                for y in 0..s {
                    for x in 0..s {
                        let mut c = bg;
                        for &(cy, cx, r, col) in &blobs {
                            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                            c = mix(c, col, (-d2 / (2.0 * r * r)).exp());
                        }
                        put(y, x, c);
                    }
                }
            }
            DatasetKind::Checkerboards => {
                let (a, b) = (color(&mut rng), color(&mut rng));
                let cell = rng.random_range((s / 16).max(1)..=(s / 4).max(1));
                let (oy, ox) = (rng.random_range(0..cell), rng.random_range(0..cell));
                for y in 0..s {
                    for x in 0..s {
                        let odd = ((y + oy) / cell + (x + ox) / cell) % 2 == 1;
                        put(y, x, if odd { b } else { a });
                    }
                }
            }
        }
        out
    }

    /// Images `start .. start + n` stacked as `[n, 3, size, size]`.
    pub fn batch<T: Scalar>(&self, start: u64, n: usize) -> Tensor<T> {
        let mut data = Vec::with_capacity(n * 3 * self.size * self.size);
        for i in 0..n as u64 {
            data.extend(self.image(start + i).into_iter().map(T::lit));
        }
        Tensor::from_vec(data, &[n, 3, self.size, self.size]).expect("extent matches")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        for kind in [DatasetKind::Stripes, DatasetKind::Gradients, DatasetKind::Blobs, DatasetKind::Checkerboards] {
            let ds = SyntheticDataset::new(kind, 32, 7);
            let a = ds.image(3);
            assert_eq!(a, ds.image(3));
            assert_ne!(a, ds.image(4));
            assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
            assert_eq!(kind.name().parse::<DatasetKind>().unwrap(), kind);
        }
        let b = SyntheticDataset::new(DatasetKind::Stripes, 16, 0).batch::<f32>(10, 2);
        assert_eq!(b.shape(), &[2, 3, 16, 16]);
    }
}
