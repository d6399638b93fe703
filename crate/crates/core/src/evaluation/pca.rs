use serde::Serialize;

use crate::corpus::Domain;
use crate::error::{Error, Result};

const MAX_ITERS: usize = 1000;
const TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PcaPoint {
    pub x: f64,
    pub y: f64,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    pub points: Vec<PcaPoint>,
    /// Unit principal directions, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the sample covariance matching `components`.
    pub eigenvalues: Vec<f64>,
    /// Total variance (trace of the sample covariance).
    pub total_variance: f64,
    /// Set when fewer than two directions carry variance; `y` is then 0.
    pub rank_deficient: bool,
}

impl PcaResult {
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|&l| {
                if self.total_variance > 0.0 {
                    l / self.total_variance
                } else {
                    0.0
                }
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Top eigenpair of a symmetric matrix by power iteration.
fn power_iteration(cov: &[f64], d: usize, start: usize) -> (Vec<f64>, f64) {
    // a deterministic start vector that is not orthogonal to typical data
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + ((i + start) % 7) as f64 * 0.1).collect();
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..MAX_ITERS {
        let mut w: Vec<f64> = (0..d).map(|i| dot(&cov[i * d..(i + 1) * d], &v)).collect();
        let norm = normalize(&mut w);
        if norm == 0.0 {
            return (v, 0.0);
        }
        let diff = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        lambda = norm;
        if diff < TOL {
            break;
        }
    }
    let cv: Vec<f64> = (0..d).map(|i| dot(&cov[i * d..(i + 1) * d], &v)).collect();
    let rayleigh = dot(&v, &cv);
    (v, if rayleigh.is_finite() { rayleigh } else { lambda })
}

/// Projects mean-centered rows onto their top two principal directions.
pub fn pca_2d(rows: &[Vec<f64>], domains: &[Domain]) -> Result<PcaResult> {
    if rows.len() < 3 {
        return Err(Error::Data("pca needs at least 3 vectors".into()));
    }
    if domains.len() != rows.len() {
        return Err(Error::Shape {
            op: "pca_2d",
            lhs: vec![rows.len()],
            rhs: vec![domains.len()],
        });
    }
    let d = rows[0].len();
    if d < 2 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Data("pca needs equal-length vectors of dimension >= 2".into()));
    }
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for r in &centered {
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += r[i] * r[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1.0);
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    let total_variance: f64 = (0..d).map(|i| cov[i * d + i]).sum();

    let mut components = Vec::new();
    let mut eigenvalues = Vec::new();
    let mut deflated = cov.clone();
    for start in 0..2 {
        let (v, lambda) = power_iteration(&deflated, d, start);
        for i in 0..d {
            for j in 0..d {
                deflated[i * d + j] -= lambda * v[i] * v[j];
            }
        }
        components.push(v);
        eigenvalues.push(lambda.max(0.0));
    }
    let floor = TOL * total_variance.max(f64::MIN_POSITIVE);
    let rank_deficient = eigenvalues[1] <= floor;
    if rank_deficient {
        eigenvalues[1] = 0.0;
    }
    let points = centered
        .iter()
        .zip(domains)
        .map(|(r, &domain)| PcaPoint {
            x: dot(r, &components[0]),
            y: if rank_deficient { 0.0 } else { dot(r, &components[1]) },
            domain,
        })
        .collect();
    Ok(PcaResult {
        points,
        components,
        eigenvalues,
        total_variance,
        rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points_have_one_component() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let res = pca_2d(&rows, &[Domain::Source; 6]).unwrap();
        let ratio = res.explained_variance_ratio();
        assert!((ratio[0] - 1.0).abs() < 1e-9);
        assert!(ratio[1].abs() < 1e-9);
        assert!(res.rank_deficient);
    }

    #[test]
    fn projections_are_centered() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![(i * i) as f64 + 3.0, (i as f64).sin() * 5.0 - 2.0, i as f64 * 0.5])
            .collect();
        let res = pca_2d(&rows, &[Domain::Target; 10]).unwrap();
        let mx: f64 = res.points.iter().map(|p| p.x).sum::<f64>() / 10.0;
        let my: f64 = res.points.iter().map(|p| p.y).sum::<f64>() / 10.0;
        assert!(mx.abs() < 1e-9 && my.abs() < 1e-9);
    }

    #[test]
    fn too_few_points() {
        assert!(pca_2d(&[vec![1.0, 2.0], vec![3.0, 4.0]], &[Domain::Source; 2]).is_err());
    }
}
