//! Current-injection sensitivity factors.
//!
//! For line `(m,n)` with `I_(m,n) = cᵀV`, the factors are
//! `κ_(m,n)ᵀ = cᵀ Y⁻¹`, so `I_(m,n) = κ_(m,n)ᵀ I` for bus current
//! injections `I = Y V`. They depend on network parameters only.
//!
//! When the network has no ground path `Y` is singular and the factors are
//! `κᵀ = y_mn e_mnᵀ Y†` with the Moore–Penrose pseudoinverse.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector, LU};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::network::{build_admittance, AdmittanceMatrix, LineRef, NetworkCase};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    Inverse,
    Pseudoinverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSensitivity {
    pub line: LineRef,
    pub kappa: Vec<Complex64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub basis: Basis,
}

impl LineSensitivity {
    fn new(line: LineRef, kappa: Vec<Complex64>, basis: Basis) -> Self {
        let alpha = kappa.iter().map(|z| z.re).collect();
        let beta = kappa.iter().map(|z| z.im).collect();
        LineSensitivity { line, kappa, alpha, beta, basis }
    }

    /// `κᵀ I`.
    pub fn apply(&self, currents: &[Complex64]) -> Complex64 {
        self.kappa.iter().zip(currents).map(|(k, i)| k * i).sum()
    }
}

/// Right-hand side `c` with `I_(m,n) = cᵀ V`.
fn numerator(case: &NetworkCase, line: &LineRef) -> DVector<Complex64> {
    let (cm, cn) = case.current_coefficients(line);
    let mut c = DVector::zeros(case.n_buses());
    c[line.from - 1] += cm;
    c[line.to - 1] += cn;
    c
}

/// Moore–Penrose pseudoinverse via the SVD; singular values below
/// `1e-10 · σ_max` are treated as zero.
pub fn pseudo_inverse(y: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let svd = y.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    svd.pseudo_inverse(1e-10 * sigma_max.max(f64::MIN_POSITIVE))
        .expect("u and v were computed")
}

fn solve_transposed(lu: &LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>, c: &DVector<Complex64>) -> Result<Vec<Complex64>> {
    let x = lu
        .solve(c)
        .ok_or_else(|| Error::Singular("admittance matrix is singular despite shunts".into()))?;
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Singular("admittance matrix is numerically singular".into()));
    }
    Ok(x.iter().copied().collect())
}

fn check_line(case: &NetworkCase, y: &AdmittanceMatrix, line: &LineRef) -> Result<()> {
    if y.dim() != case.n_buses() {
        return Err(Error::DimensionMismatch { expected: case.n_buses(), actual: y.dim() });
    }
    let stored = case.lines.get(line.index).ok_or(Error::UnknownLine(line.from, line.to))?;
    let matches = (stored.from == line.from && stored.to == line.to)
        || (stored.from == line.to && stored.to == line.from);
    if !matches {
        return Err(Error::UnknownLine(line.from, line.to));
    }
    Ok(())
}

/// Sensitivities through `Y⁻¹`, computed by solving `Yᵀ κ = c`.
pub fn current_sensitivity(case: &NetworkCase, y: &AdmittanceMatrix, line: &LineRef) -> Result<LineSensitivity> {
    check_line(case, y, line)?;
    if !y.has_shunts {
        return Err(Error::Precondition(
            "admittance matrix has no shunts; use the pseudoinverse path".into(),
        ));
    }
    let lu = y.y.transpose().lu();
    let kappa = solve_transposed(&lu, &numerator(case, line))?;
    Ok(LineSensitivity::new(*line, kappa, Basis::Inverse))
}

/// Sensitivities through `Y†` for networks without any ground path.
pub fn current_sensitivity_singular(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    line: &LineRef,
) -> Result<LineSensitivity> {
    check_line(case, y, line)?;
    if y.has_shunts {
        return Err(Error::Precondition("admittance matrix has shunts; use the inverse path".into()));
    }
    let pinv = pseudo_inverse(&y.y);
    Ok(singular_from_pinv(case, &pinv, line))
}

fn singular_from_pinv(case: &NetworkCase, pinv: &DMatrix<Complex64>, line: &LineRef) -> LineSensitivity {
    let series = case.line(line).series;
    let mut c = DVector::zeros(case.n_buses());
    c[line.from - 1] = series;
    c[line.to - 1] = -series;
    let mut kappa = pinv.transpose() * c;
    // exact κ is orthogonal to 𝟙; projecting removes SVD round-off
    let mean = kappa.sum() / kappa.len() as f64;
    kappa.add_scalar_mut(-mean);
    LineSensitivity::new(*line, kappa.iter().copied().collect(), Basis::Pseudoinverse)
}

/// Chooses the inverse or pseudoinverse path from `y.has_shunts`.
pub fn sensitivity(case: &NetworkCase, y: &AdmittanceMatrix, line: &LineRef) -> Result<LineSensitivity> {
    if y.has_shunts {
        current_sensitivity(case, y, line)
    } else {
        current_sensitivity_singular(case, y, line)
    }
}

/// Stacks the α rows of `lines` into a `D × N` matrix, in the given order.
pub fn sensitivity_matrix(case: &NetworkCase, y: &AdmittanceMatrix, lines: &[LineRef]) -> Result<DMatrix<f64>> {
    if lines.is_empty() {
        return Err(Error::EmptyLineSet);
    }
    let cache = SensitivityCache::with_admittance(case.clone(), y.clone())?;
    cache.alpha_matrix(lines)
}

/// α of the lossless network (`y ≈ jb`): `(b_mn e_mnᵀ + b_m e_mᵀ) B⁻¹`, or
/// the pseudoinverse form when the network has no shunts.
pub fn susceptance_alpha(case: &NetworkCase, line: &LineRef) -> Result<Vec<f64>> {
    let lossless = case.lossless();
    let y = build_admittance(&lossless);
    Ok(sensitivity(&lossless, &y, line)?.alpha)
}

enum Factorization {
    Lu(LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>),
    Pinv(DMatrix<Complex64>),
}

/// Memoized sensitivities for one `(case, Y)` pair.
///
/// The cache owns its case and admittance matrix, so any parameter change
/// means building a new cache. Lookups take a shared lock; insertion takes
/// the exclusive lock.
pub struct SensitivityCache {
    case: NetworkCase,
    y: AdmittanceMatrix,
    factorization: Factorization,
    entries: RwLock<HashMap<(usize, usize), Arc<LineSensitivity>>>,
}

impl SensitivityCache {
    pub fn new(case: NetworkCase) -> Result<Self> {
        let y = build_admittance(&case);
        Self::with_admittance(case, y)
    }

    pub fn with_admittance(case: NetworkCase, y: AdmittanceMatrix) -> Result<Self> {
        if y.dim() != case.n_buses() {
            return Err(Error::DimensionMismatch { expected: case.n_buses(), actual: y.dim() });
        }
        let factorization = if y.has_shunts {
            Factorization::Lu(y.y.transpose().lu())
        } else {
            Factorization::Pinv(pseudo_inverse(&y.y))
        };
        Ok(SensitivityCache { case, y, factorization, entries: RwLock::new(HashMap::new()) })
    }

    pub fn case(&self) -> &NetworkCase {
        &self.case
    }

    pub fn admittance(&self) -> &AdmittanceMatrix {
        &self.y
    }

    pub fn get(&self, line: &LineRef) -> Result<Arc<LineSensitivity>> {
        let key = (line.from, line.to);
        if let Some(hit) = self.entries.read().expect("cache lock").get(&key) {
            return Ok(Arc::clone(hit));
        }
        check_line(&self.case, &self.y, line)?;
        let computed = match &self.factorization {
            Factorization::Lu(lu) => {
                let kappa = solve_transposed(lu, &numerator(&self.case, line))?;
                LineSensitivity::new(*line, kappa, Basis::Inverse)
            }
            Factorization::Pinv(pinv) => singular_from_pinv(&self.case, pinv, line),
        };
        let mut entries = self.entries.write().expect("cache lock");
        Ok(Arc::clone(entries.entry(key).or_insert_with(|| Arc::new(computed))))
    }

    /// Looks up the ordered pair `(m, n)`.
    pub fn get_pair(&self, m: usize, n: usize) -> Result<Arc<LineSensitivity>> {
        let line = self.case.line_ref(m, n)?;
        self.get(&line)
    }

    pub fn alpha_matrix(&self, lines: &[LineRef]) -> Result<DMatrix<f64>> {
        if lines.is_empty() {
            return Err(Error::EmptyLineSet);
        }
        let n = self.case.n_buses();
        let mut a = DMatrix::zeros(lines.len(), n);
        for (row, line) in lines.iter().enumerate() {
            let s = self.get(line)?;
            for (col, &value) in s.alpha.iter().enumerate() {
                a[(row, col)] = value;
            }
        }
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_case;

    fn two_bus(g: f64, b: f64) -> NetworkCase {
        parse_case(&format!(
            r#"{{"base_mva": 100, "buses": [
                {{"id": 1, "kind": "slack", "p": 0, "q": 0, "vm": 1.0}},
                {{"id": 2, "kind": "pq", "p": 0, "q": 0}}
            ], "lines": [{{"from": 1, "to": 2, "g": {g}, "b": {b}}}]}}"#
        ))
        .unwrap()
    }

    #[test]
    fn two_bus_current_divider_splits_in_half() {
        for (g, b) in [(1.0, -10.0), (0.0, -3.0), (4.0, 0.5)] {
            let case = two_bus(g, b);
            let y = build_admittance(&case);
            let s = current_sensitivity_singular(&case, &y, &case.line_ref(1, 2).unwrap()).unwrap();
            assert_eq!(s.basis, Basis::Pseudoinverse);
            assert!((s.kappa[0] - Complex64::new(0.5, 0.0)).norm() < 1e-12);
            assert!((s.kappa[1] - Complex64::new(-0.5, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn path_preconditions() {
        let case = two_bus(1.0, -10.0);
        let y = build_admittance(&case);
        let line = case.line_ref(1, 2).unwrap();
        assert!(matches!(current_sensitivity(&case, &y, &line), Err(Error::Precondition(_))));
        let mut shunted = case.clone();
        shunted.buses[1].shunt = Complex64::new(0.0, 0.2);
        let ys = build_admittance(&shunted);
        assert!(matches!(current_sensitivity_singular(&shunted, &ys, &line), Err(Error::Precondition(_))));
        assert!(matches!(sensitivity_matrix(&case, &y, &[]), Err(Error::EmptyLineSet)));
    }

    #[test]
    fn cache_returns_same_record() {
        let mut case = two_bus(1.0, -10.0);
        case.lines[0].end_shunt = Complex64::new(0.0, 0.1);
        let cache = SensitivityCache::new(case).unwrap();
        let a = cache.get_pair(1, 2).unwrap();
        let b = cache.get_pair(1, 2).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        let reverse = cache.get_pair(2, 1).unwrap();
        assert_ne!(a.kappa, reverse.kappa);
        assert!(matches!(cache.get_pair(1, 1), Err(Error::UnknownLine(1, 1))));
    }
}
