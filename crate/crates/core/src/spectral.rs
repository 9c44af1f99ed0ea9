//! Covariance spectra, scree elbows and the spectral signal-to-noise ratio.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BinaryMatrix;
use crate::error::{check_len, Error, Result};

/// Number of leading eigenvalues considered by the elbow detector.
pub const ELBOW_WINDOW: usize = 200;
const FLAT_DROP: f64 = 0.01;
const INFINITE_SNR_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    Covariance,
    Correlation,
}

/// Sample covariance (or correlation) of binary columns from pairwise popcounts.
pub fn binary_covariance(data: &BinaryMatrix, kind: MatrixKind) -> Result<DMatrix<f64>> {
    let n = data.rows();
    if n < 2 {
        return Err(Error::InvalidSpec(format!("need at least 2 rows, got {n}")));
    }
    let m = data.cols();
    let nf = n as f64;
    let p: Vec<f64> = data.columns().iter().map(|c| c.count_ones() as f64 / nf).collect();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let ci = data.column(i);
            (0..=i)
                .map(|j| (ci.and_count(data.column(j)) as f64 / nf - p[i] * p[j]) * nf / (nf - 1.0))
                .collect()
        })
        .collect();
    let mut cov = DMatrix::zeros(m, m);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    if kind == MatrixKind::Correlation {
        let sd: Vec<f64> = (0..m).map(|i| cov[(i, i)].sqrt()).collect();
        if sd.contains(&0.0) {
            return Err(Error::Degenerate("constant column in correlation matrix".into()));
        }
        for i in 0..m {
            for j in 0..m {
                cov[(i, j)] /= sd[i] * sd[j];
            }
        }
    }
    Ok(cov)
}

/// Eigenvalues of a symmetric matrix, descending.
pub fn descending_eigenvalues(matrix: DMatrix<f64>) -> Vec<f64> {
    let mut eig: Vec<f64> = matrix.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Elbow {
    /// Number of eigenvalues before the knee.
    At(usize),
    NoElbow,
}

impl Elbow {
    pub fn index(self) -> Option<usize> {
        match self {
            Elbow::At(r) => Some(r),
            Elbow::NoElbow => None,
        }
    }
}

/// Kneedle-style elbow: the point furthest below the chord from the first to
/// the last eigenvalue in the window marks the start of the bulk, so `r` is
/// one less than its 1-based index. Ties go to the smaller index.
pub fn detect_elbow(eigenvalues: &[f64]) -> Result<Elbow> {
    if eigenvalues.len() < 3 {
        return Err(Error::InvalidSpec(format!(
            "elbow needs at least 3 eigenvalues, got {}",
            eigenvalues.len()
        )));
    }
    let len = eigenvalues.len().min(ELBOW_WINDOW);
    let first = eigenvalues[0];
    let last = eigenvalues[len - 1];
    let drop = first - last;
    if !(first > 0.0) || drop < FLAT_DROP * first.abs() {
        return Ok(Elbow::NoElbow);
    }
    let slope = drop / (len - 1) as f64;
    let mut best = (0usize, 0.0f64);
    for (i, &v) in eigenvalues.iter().enumerate().take(len - 1).skip(1) {
        let below = first - slope * i as f64 - v;
        if below > best.1 {
            best = (i, below);
        }
    }
    if best.0 == 0 || best.1 <= 1e-9 * drop {
        return Ok(Elbow::NoElbow);
    }
    Ok(Elbow::At(best.0))
}

/// `λ_r / λ_{r+1}`; `None` stands for an infinite ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snr {
    pub value: Option<f64>,
}

impl Snr {
    /// Total-order key with infinity above every finite value.
    pub fn rank_value(self) -> f64 {
        self.value.unwrap_or(f64::INFINITY)
    }
}

pub fn spectral_snr(eigenvalues: &[f64], r: usize) -> Result<Snr> {
    if r == 0 || r >= eigenvalues.len() {
        return Err(Error::InvalidSpec(format!(
            "elbow {r} outside 1..{}",
            eigenvalues.len()
        )));
    }
    let denom = eigenvalues[r];
    Ok(Snr {
        value: (denom > INFINITE_SNR_FLOOR).then(|| eigenvalues[r - 1] / denom),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub eigenvalues: Vec<f64>,
    pub elbow: Elbow,
    pub snr: Option<Snr>,
    pub trace: f64,
    pub kind: MatrixKind,
    /// Set when every column is constant.
    pub degenerate: bool,
}

impl SpectralReport {
    pub fn from_eigenvalues(eigenvalues: Vec<f64>, trace: f64, kind: MatrixKind) -> Result<Self> {
        let degenerate = eigenvalues.iter().all(|v| v.abs() <= 1e-12);
        let elbow = if degenerate || eigenvalues.len() < 3 {
            Elbow::NoElbow
        } else {
            detect_elbow(&eigenvalues)?
        };
        let snr = match elbow {
            Elbow::At(r) => Some(spectral_snr(&eigenvalues, r)?),
            Elbow::NoElbow => None,
        };
        Ok(Self {
            eigenvalues,
            elbow,
            snr,
            trace,
            kind,
            degenerate,
        })
    }

    /// Two-column CSV `index,eigenvalue` with 1-based indices.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,eigenvalue")?;
        for (i, v) in self.eigenvalues.iter().enumerate() {
            writeln!(w, "{},{v}", i + 1)?;
        }
        Ok(())
    }
}

pub fn spectrum(data: &BinaryMatrix, kind: MatrixKind) -> Result<SpectralReport> {
    let matrix = binary_covariance(data, kind)?;
    let trace = matrix.trace();
    SpectralReport::from_eigenvalues(descending_eigenvalues(matrix), trace, kind)
}

pub fn covariance_spectrum(data: &BinaryMatrix) -> Result<SpectralReport> {
    spectrum(data, MatrixKind::Covariance)
}

/// Per-index mean of several spectra truncated to the shortest.
pub fn average_spectrum(spectra: &[Vec<f64>]) -> Vec<f64> {
    let len = spectra.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|i| spectra.iter().map(|s| s[i]).sum::<f64>() / spectra.len() as f64)
        .collect()
}

/// Between-configuration covariance of the predictor probabilities.
pub fn signal_covariance(gamma: &[Vec<f64>], prior: &[f64]) -> Result<DMatrix<f64>> {
    let m = gamma.len();
    for row in gamma {
        check_len(prior.len(), row.len())?;
    }
    let mean: Vec<f64> = gamma
        .iter()
        .map(|row| row.iter().zip(prior).map(|(g, w)| g * w).sum())
        .collect();
    let mut c = DMatrix::zeros(m, m);
    for (p, &w) in prior.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for i in 0..m {
            let di = gamma[i][p] - mean[i];
            for j in 0..=i {
                c[(i, j)] += w * di * (gamma[j][p] - mean[j]);
            }
        }
    }
    for i in 0..m {
        for j in 0..i {
            c[(j, i)] = c[(i, j)];
        }
    }
    Ok(c)
}

/// Expected within-configuration variances `Σ_p P(s_p) γ(1−γ)`.
pub fn noise_covariance_diagonal(gamma: &[Vec<f64>], prior: &[f64]) -> Vec<f64> {
    gamma
        .iter()
        .map(|row| row.iter().zip(prior).map(|(g, w)| w * g * (1.0 - g)).sum())
        .collect()
}

/// Number of singular values above `rel_tol · σ₁`.
pub fn numerical_rank(matrix: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = matrix.clone().singular_values();
    let top = sv.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalNoiseDecomposition {
    pub signal_rank: usize,
    pub realized_configs: usize,
    pub noise_diagonal: Vec<f64>,
    /// Largest |pooled within-configuration covariance| in standard errors.
    pub max_offdiag_z: Option<f64>,
}

/// Law-of-total-covariance split for a known table; `data` (with the row
/// configuration codes) adds the empirical off-diagonal check.
pub fn signal_noise_decomposition(
    gamma: &[Vec<f64>],
    prior: &[f64],
    data: Option<(&BinaryMatrix, &[u32])>,
) -> Result<SignalNoiseDecomposition> {
    let c_signal = signal_covariance(gamma, prior)?;
    let max_offdiag_z = match data {
        Some((x, codes)) => Some(pooled_offdiag_z(x, codes, prior.len())?),
        None => None,
    };
    Ok(SignalNoiseDecomposition {
        signal_rank: numerical_rank(&c_signal, 1e-8),
        realized_configs: prior.iter().filter(|&&w| w > 0.0).count(),
        noise_diagonal: noise_covariance_diagonal(gamma, prior),
        max_offdiag_z,
    })
}

fn pooled_offdiag_z(x: &BinaryMatrix, codes: &[u32], n_configs: usize) -> Result<f64> {
    check_len(x.rows(), codes.len())?;
    let m = x.cols();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_configs];
    for (i, &c) in codes.iter().enumerate() {
        groups[c as usize].push(i);
    }
    let mut cov = vec![0.0; m * m];
    let mut var_prod = vec![0.0; m * m];
    let n = x.rows() as f64;
    for rows in groups.iter().filter(|g| g.len() > 1) {
        let sub: Vec<_> = x.columns().iter().map(|c| c.gather(rows)).collect();
        let ng = rows.len() as f64;
        let p: Vec<f64> = sub.iter().map(|c| c.count_ones() as f64 / ng).collect();
        for i in 0..m {
            for j in 0..i {
                let c = sub[i].and_count(&sub[j]) as f64 / ng - p[i] * p[j];
                cov[i * m + j] += ng * c;
                var_prod[i * m + j] += ng * p[i] * (1.0 - p[i]) * p[j] * (1.0 - p[j]);
            }
        }
    }
    let mut worst: f64 = 0.0;
    for i in 0..m {
        for j in 0..i {
            let se = var_prod[i * m + j].sqrt() / n;
            if se > 0.0 {
                worst = worst.max((cov[i * m + j] / n).abs() / se);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitColumn;
    use crate::seed;
    use rand::Rng;

    fn coins(n: usize, m: usize, seed: u64) -> Vec<BitColumn> {
        let mut rng = seed::rng(seed);
        (0..m)
            .map(|_| BitColumn::from_bools((0..n).map(|_| rng.gen::<bool>())))
            .collect()
    }

    #[test]
    fn flat_spectrum_for_independent_columns() {
        let data = BinaryMatrix::from_columns(100_000, coins(100_000, 50, 1)).unwrap();
        let r = covariance_spectrum(&data).unwrap();
        assert!(r.eigenvalues[0] / r.eigenvalues[49] < 1.3);
        let sum: f64 = r.eigenvalues.iter().sum();
        assert!((sum - r.trace).abs() < 1e-6 * r.trace);
        let direct: f64 = data
            .columns()
            .iter()
            .map(|c| {
                let p = c.mean();
                p * (1.0 - p) * 100_000.0 / 99_999.0
            })
            .sum();
        assert!((r.trace - direct).abs() < 1e-9);
    }

    #[test]
    fn duplicated_pair_doubles_top_eigenvalue() {
        let mut cols = coins(50_000, 20, 2);
        cols.push(cols[0].clone());
        let data = BinaryMatrix::from_columns(50_000, cols).unwrap();
        let r = covariance_spectrum(&data).unwrap();
        let bulk = r.eigenvalues[1..].iter().take(18).sum::<f64>() / 18.0;
        assert!((r.eigenvalues[0] / bulk - 2.0).abs() < 0.15);
    }

    #[test]
    fn elbow_examples() {
        let eig = [10.0, 9.0, 1.0, 0.9, 0.8];
        assert_eq!(detect_elbow(&eig).unwrap(), Elbow::At(2));
        assert_eq!(spectral_snr(&eig, 2).unwrap().value, Some(9.0));

        let linear: Vec<f64> = (0..50).map(|i| 100.0 - i as f64).collect();
        assert_eq!(detect_elbow(&linear).unwrap(), Elbow::NoElbow);

        let mut spike = vec![1.0; 40];
        spike[0] = 100.0;
        assert_eq!(detect_elbow(&spike).unwrap(), Elbow::At(1));

        let flat = vec![1.0, 0.999, 0.998, 0.997];
        assert_eq!(detect_elbow(&flat).unwrap(), Elbow::NoElbow);
        assert!((spectral_snr(&flat, 1).unwrap().value.unwrap() - 1.0).abs() < 0.01);

        assert!(detect_elbow(&[1.0, 0.5]).is_err());
        assert_eq!(spectral_snr(&[1.0, 0.0, 0.0], 1).unwrap().value, None);
    }

    #[test]
    fn elbow_is_scale_invariant() {
        let eig = [7.0, 5.5, 2.0, 0.6, 0.5, 0.45, 0.4, 0.3];
        let scaled: Vec<f64> = eig.iter().map(|v| v * 37.0).collect();
        assert_eq!(detect_elbow(&eig).unwrap(), detect_elbow(&scaled).unwrap());
    }

    #[test]
    fn constant_matrix_is_flagged() {
        let data = BinaryMatrix::from_columns(10, vec![BitColumn::zeros(10); 5]).unwrap();
        let r = covariance_spectrum(&data).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.elbow, Elbow::NoElbow);
    }

    #[test]
    fn single_state_signal_rank_is_one() {
        let gamma = vec![vec![0.3, 0.7], vec![0.6, 0.4], vec![0.25, 0.5]];
        let d = signal_noise_decomposition(&gamma, &[0.4, 0.6], None).unwrap();
        assert!(d.signal_rank <= 1);
    }
}
