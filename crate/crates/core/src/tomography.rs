//! Two-qubit time-bin state tomography.
//!
//! Each photon is projected on one of `{|e⟩, |l⟩, |+⟩, |+i⟩}` with
//! `|+⟩ = (|e⟩+|l⟩)/√2` and `|+i⟩ = (|e⟩+i|l⟩)/√2`, giving 16 settings.
//! The two-photon basis order is `{|ee⟩, |el⟩, |le⟩, |ll⟩}` (signal first).
//!
//! Counts are converted to probabilities with an intensity taken from the
//! four computational-basis settings, which partition unity. The maximum
//! likelihood estimator profiles the intensity out of the Poisson
//! likelihood instead, so it uses every setting.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{Matrix4, SMatrix, SVector, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::{Error, Result, C64};

/// Tolerance used for Hermiticity, positivity and trace checks.
pub const PHYSICAL_TOLERANCE: f64 = 1e-9;

/// Single-photon analysis basis state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Basis {
    Early,
    Late,
    Plus,
    PlusI,
}

impl Basis {
    pub const ALL: [Basis; 4] = [Basis::Early, Basis::Late, Basis::Plus, Basis::PlusI];

    pub fn label(self) -> &'static str {
        match self {
            Basis::Early => "e",
            Basis::Late => "l",
            Basis::Plus => "+",
            Basis::PlusI => "+i",
        }
    }

    /// Amplitudes on `(|e⟩, |l⟩)`.
    pub fn ket(self) -> [C64; 2] {
        let r = C64::new(FRAC_1_SQRT_2, 0.0);
        match self {
            Basis::Early => [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
            Basis::Late => [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
            Basis::Plus => [r, r],
            Basis::PlusI => [r, C64::new(0.0, FRAC_1_SQRT_2)],
        }
    }
}

/// Joint signal/idler projection setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Setting {
    pub signal: Basis,
    pub idler: Basis,
}

impl Setting {
    pub const fn new(signal: Basis, idler: Basis) -> Self {
        Setting { signal, idler }
    }

    /// The 16 settings, signal basis varying slowest.
    pub fn all() -> [Setting; 16] {
        let mut out = [Setting::new(Basis::Early, Basis::Early); 16];
        for (i, s) in Basis::ALL.iter().enumerate() {
            for (j, b) in Basis::ALL.iter().enumerate() {
                out[4 * i + j] = Setting::new(*s, *b);
            }
        }
        out
    }

    /// Product ket on the two-photon basis.
    pub fn ket(self) -> Vector4<C64> {
        let s = self.signal.ket();
        let i = self.idler.ket();
        Vector4::new(s[0] * i[0], s[0] * i[1], s[1] * i[0], s[1] * i[1])
    }

    /// Label such as `"ee"`, `"e+"` or `"+i+i"`.
    pub fn label(self) -> String {
        let mut s = String::from(self.signal.label());
        s.push_str(self.idler.label());
        s
    }

    pub fn parse(label: &str) -> Result<Self> {
        fn token(s: &str) -> Option<(Basis, &str)> {
            if let Some(rest) = s.strip_prefix("+i") {
                Some((Basis::PlusI, rest))
            } else if let Some(rest) = s.strip_prefix('+') {
                Some((Basis::Plus, rest))
            } else if let Some(rest) = s.strip_prefix('e') {
                Some((Basis::Early, rest))
            } else {
                s.strip_prefix('l').map(|rest| (Basis::Late, rest))
            }
        }
        let bad = || Error::domain(alloc::format!("invalid setting label {label:?}"));
        let (signal, rest) = token(label).ok_or_else(bad)?;
        let (idler, rest) = token(rest).ok_or_else(bad)?;
        if !rest.is_empty() {
            return Err(bad());
        }
        Ok(Setting { signal, idler })
    }

    fn is_computational(self) -> bool {
        matches!(self.signal, Basis::Early | Basis::Late) && matches!(self.idler, Basis::Early | Basis::Late)
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.signal.label(), self.idler.label())
    }
}

/// `|ψ_s⟩⟨ψ_s| ⊗ |ψ_i⟩⟨ψ_i|`.
pub fn projector(setting: Setting) -> Matrix4<C64> {
    let k = setting.ket();
    k * k.adjoint()
}

/// `(|ee⟩ + |ll⟩)/√2`.
pub fn phi_plus() -> Vector4<C64> {
    let r = C64::new(FRAC_1_SQRT_2, 0.0);
    let z = C64::new(0.0, 0.0);
    Vector4::new(r, z, z, r)
}

/// A 4×4 density matrix on the time-bin two-photon basis.
///
/// Construction through [`DensityMatrix::new`] enforces Hermiticity,
/// positivity and unit trace; [`DensityMatrix::unchecked`] is for
/// estimates (linear inversion) that may violate positivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix(Matrix4<C64>);

impl DensityMatrix {
    pub fn new(m: Matrix4<C64>) -> Result<Self> {
        let rho = DensityMatrix(m);
        rho.check_physical()?;
        Ok(rho)
    }

    pub fn unchecked(m: Matrix4<C64>) -> Self {
        DensityMatrix(m)
    }

    pub fn from_pure(psi: &Vector4<C64>) -> Result<Self> {
        let norm = psi.norm_squared();
        if (norm - 1.0).abs() > PHYSICAL_TOLERANCE {
            return Err(Error::domain("state vector is not normalized"));
        }
        Ok(DensityMatrix(psi * psi.adjoint()))
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix(Matrix4::identity() * C64::new(0.25, 0.0))
    }

    /// Row-major entries.
    pub fn from_row_slice(entries: &[C64]) -> Result<Self> {
        if entries.len() != 16 {
            return Err(Error::domain("density matrix needs 16 entries"));
        }
        Ok(DensityMatrix(Matrix4::from_row_slice(entries)))
    }

    pub fn matrix(&self) -> &Matrix4<C64> {
        &self.0
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.0[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn hermiticity_error(&self) -> f64 {
        (self.0 - self.0.adjoint()).iter().map(cabs).fold(0.0, f64::max)
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> [f64; 4] {
        let h = (self.0 + self.0.adjoint()) * C64::new(0.5, 0.0);
        let mut ev: [f64; 4] = h.symmetric_eigenvalues().into();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn check_physical(&self) -> Result<()> {
        if self.hermiticity_error() > PHYSICAL_TOLERANCE {
            return Err(Error::domain("density matrix is not Hermitian"));
        }
        if (self.trace() - 1.0).abs() > PHYSICAL_TOLERANCE {
            return Err(Error::domain(alloc::format!("density matrix trace is {}", self.trace())));
        }
        let min = self.eigenvalues()[0];
        if min < -PHYSICAL_TOLERANCE {
            return Err(Error::domain(alloc::format!("density matrix has negative eigenvalue {min}")));
        }
        Ok(())
    }

    pub fn is_physical(&self) -> bool {
        self.check_physical().is_ok()
    }

    /// Divides by the trace.
    pub fn renormalized(&self) -> Result<Self> {
        let t = self.trace();
        if !(t.abs() > 0.0) {
            return Err(Error::domain("zero trace"));
        }
        Ok(DensityMatrix(self.0 / C64::new(t, 0.0)))
    }

    /// Nearest physical state by eigenvalue clipping: Hermitize, clamp
    /// negative eigenvalues to zero, renormalize the trace.
    pub fn psd_projected(&self) -> Result<Self> {
        let h = (self.0 + self.0.adjoint()) * C64::new(0.5, 0.0);
        let eig = h.symmetric_eigen();
        let mut out = Matrix4::<C64>::zeros();
        let mut total = 0.0;
        for k in 0..4 {
            let lam = eig.eigenvalues[k].max(0.0);
            total += lam;
            let v = eig.eigenvectors.column(k);
            out += v * v.adjoint() * C64::new(lam, 0.0);
        }
        if !(total > 0.0) {
            return Err(Error::domain("matrix has no positive eigenvalue"));
        }
        let mut rho = out / C64::new(total, 0.0);
        // remove rounding asymmetry
        rho = (rho + rho.adjoint()) * C64::new(0.5, 0.0);
        Ok(DensityMatrix(rho))
    }

    /// `Tr(ρ²)`.
    pub fn purity(&self) -> f64 {
        (self.0 * self.0).trace().re
    }

    /// `½ Σ |λ_k(ρ − σ)|`.
    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        DensityMatrix(self.0 - other.0).eigenvalues().iter().map(|l| l.abs()).sum::<f64>() * 0.5
    }

    /// `Tr(ρ Π)` without any physicality check.
    pub fn expectation(&self, op: &Matrix4<C64>) -> f64 {
        (self.0 * op).trace().re
    }
}

fn cabs(z: &C64) -> f64 {
    libm::hypot(z.re, z.im)
}

/// Born-rule probability `Tr(ρ Π)` of a setting, clamped to `[0, 1]`.
pub fn predicted_probability(rho: &DensityMatrix, setting: Setting) -> Result<f64> {
    rho.check_physical()?;
    Ok(born(rho, setting))
}

fn born(rho: &DensityMatrix, setting: Setting) -> f64 {
    let k = setting.ket();
    let p = (k.adjoint() * rho.matrix() * k)[(0, 0)].re;
    if p < 0.0 && p > -1e-12 {
        0.0
    } else if p > 1.0 && p < 1.0 + 1e-12 {
        1.0
    } else {
        p
    }
}

/// `⟨ψ|ρ|ψ⟩` for a normalized pure target.
pub fn fidelity(rho: &DensityMatrix, target: &Vector4<C64>) -> Result<f64> {
    if (target.norm_squared() - 1.0).abs() > PHYSICAL_TOLERANCE {
        return Err(Error::domain("fidelity target is not normalized"));
    }
    Ok((target.adjoint() * rho.matrix() * target)[(0, 0)].re)
}

/// Counts recorded in one projection setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementRecord {
    pub setting: Setting,
    pub count: u64,
    pub dwell_s: f64,
}

/// Checks that all 16 settings appear exactly once with positive dwell and
/// returns the records in [`Setting::all`] order.
pub fn complete_set(records: &[MeasurementRecord]) -> Result<[MeasurementRecord; 16]> {
    let all = Setting::all();
    let mut out = [MeasurementRecord { setting: all[0], count: 0, dwell_s: 0.0 }; 16];
    let mut seen = [false; 16];
    for r in records {
        let k = all.iter().position(|s| *s == r.setting).expect("all settings enumerated");
        if seen[k] {
            return Err(Error::domain(alloc::format!("setting {} measured twice", r.setting)));
        }
        if !(r.dwell_s > 0.0) {
            return Err(Error::domain(alloc::format!("setting {} has non-positive dwell", r.setting)));
        }
        seen[k] = true;
        out[k] = *r;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::domain(alloc::format!("setting {} missing", all[k])));
    }
    Ok(out)
}

/// Coincidence rate summed over the four computational-basis settings.
fn intensity(records: &[MeasurementRecord; 16]) -> Result<f64> {
    let n: f64 = records
        .iter()
        .filter(|r| r.setting.is_computational())
        .map(|r| r.count as f64 / r.dwell_s)
        .sum();
    if !(n > 0.0) {
        return Err(Error::no_data("no counts in the computational-basis settings"));
    }
    Ok(n)
}

/// Hermitian basis used to parametrize ρ in the linear inversion:
/// diagonal units, then `(|i⟩⟨j| + |j⟩⟨i|)` and `i(|i⟩⟨j| − |j⟩⟨i|)` for
/// `i < j`.
fn hermitian_basis() -> [Matrix4<C64>; 16] {
    let mut out = [Matrix4::<C64>::zeros(); 16];
    let one = C64::new(1.0, 0.0);
    let i_unit = C64::new(0.0, 1.0);
    let mut k = 0;
    for d in 0..4 {
        out[k][(d, d)] = one;
        k += 1;
    }
    for i in 0..4 {
        for j in i + 1..4 {
            out[k][(i, j)] = one;
            out[k][(j, i)] = one;
            out[k + 1][(i, j)] = -i_unit;
            out[k + 1][(j, i)] = i_unit;
            k += 2;
        }
    }
    out
}

/// Matrix `A_kj = Tr(Γ_j Π_k)` mapping Hermitian coordinates to setting
/// probabilities.
fn measurement_matrix() -> SMatrix<f64, 16, 16> {
    let basis = hermitian_basis();
    let settings = Setting::all();
    SMatrix::from_fn(|k, j| (basis[j] * projector(settings[k])).trace().re)
}

/// Output of [`linear_inversion`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearInversion {
    pub rho: DensityMatrix,
    /// Smallest eigenvalue; negative values mean the estimate is not a
    /// physical state.
    pub min_eigenvalue: f64,
    pub physical: bool,
}

/// Direct solution of `Tr(ρ Π_k) = p_k` for the 16 real degrees of freedom.
pub fn linear_inversion(records: &[MeasurementRecord]) -> Result<LinearInversion> {
    let recs = complete_set(records)?;
    let n = intensity(&recs)?;
    let p = SVector::<f64, 16>::from_fn(|k, _| recs[k].count as f64 / recs[k].dwell_s / n);
    let lu = measurement_matrix().lu();
    let x = lu.solve(&p).ok_or_else(|| Error::degenerate("tomographic measurement matrix is singular"))?;
    let basis = hermitian_basis();
    let mut m = Matrix4::<C64>::zeros();
    for j in 0..16 {
        m += basis[j] * C64::new(x[j], 0.0);
    }
    let rho = DensityMatrix(m);
    let min_eigenvalue = rho.eigenvalues()[0];
    Ok(LinearInversion { rho, min_eigenvalue, physical: rho.is_physical() })
}

/// Output of [`mle_reconstruct`].
#[derive(Debug, Clone, PartialEq)]
pub struct MleResult {
    pub rho: DensityMatrix,
    /// Poisson log-likelihood `Σ n_k ln(N d_k p_k) − N d_k p_k` at the
    /// optimum, with the intensity `N` at its maximum-likelihood value.
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood after every accepted step.
    pub history: Vec<f64>,
}

/// Iteration cap of the likelihood ascent.
pub const MLE_MAX_ITERATIONS: usize = 10_000;
/// Stop once the per-count log-likelihood gain of a step falls below this.
pub const MLE_TOLERANCE: f64 = 1e-10;

const OFF_DIAGONAL: [(usize, usize); 6] = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)];

fn t_from_params(x: &[f64; 16]) -> Matrix4<C64> {
    let mut t = Matrix4::<C64>::zeros();
    for d in 0..4 {
        t[(d, d)] = C64::new(x[d], 0.0);
    }
    for (k, &(i, j)) in OFF_DIAGONAL.iter().enumerate() {
        t[(i, j)] = C64::new(x[4 + 2 * k], x[5 + 2 * k]);
    }
    t
}

fn params_from_t(t: &Matrix4<C64>) -> [f64; 16] {
    let mut x = [0.0; 16];
    for d in 0..4 {
        x[d] = t[(d, d)].re;
    }
    for (k, &(i, j)) in OFF_DIAGONAL.iter().enumerate() {
        x[4 + 2 * k] = t[(i, j)].re;
        x[5 + 2 * k] = t[(i, j)].im;
    }
    x
}

/// Lower-triangular `T` with `T†T = ρ`.
fn lower_factor(rho: &DensityMatrix) -> Result<Matrix4<C64>> {
    // Cholesky of the index-reversed matrix gives ρ = U U† with U upper,
    // so T = U† is lower triangular.
    let rev = |m: &Matrix4<C64>| Matrix4::from_fn(|i, j| m[(3 - i, 3 - j)]);
    let chol = rev(rho.matrix())
        .cholesky()
        .ok_or_else(|| Error::degenerate("initial state is not positive definite"))?;
    let u = rev(&chol.l());
    Ok(u.adjoint())
}

struct Likelihood {
    kets: [Vector4<C64>; 16],
    counts: [f64; 16],
    dwell: [f64; 16],
    total: f64,
}

impl Likelihood {
    fn new(recs: &[MeasurementRecord; 16]) -> Self {
        let settings = Setting::all();
        Likelihood {
            kets: settings.map(Setting::ket),
            counts: recs.map(|r| r.count as f64),
            dwell: recs.map(|r| r.dwell_s),
            total: recs.iter().map(|r| r.count as f64).sum(),
        }
    }

    /// Profile log-likelihood `Σ n_k ln q_k − S ln Σ d_k q_k` with
    /// `q_k = ‖T ψ_k‖²`, and its gradient in the 16 parameters.
    fn eval(&self, x: &[f64; 16], grad: Option<&mut [f64; 16]>) -> f64 {
        let t = t_from_params(x);
        let mut q = [0.0; 16];
        let mut v = [Vector4::<C64>::zeros(); 16];
        for k in 0..16 {
            v[k] = t * self.kets[k];
            q[k] = v[k].norm_squared();
        }
        let denom: f64 = (0..16).map(|k| self.dwell[k] * q[k]).sum();
        let mut ll = -self.total * libm::log(denom);
        for k in 0..16 {
            if self.counts[k] > 0.0 {
                ll += self.counts[k] * libm::log(q[k]);
            }
        }
        if let Some(g) = grad {
            g.fill(0.0);
            for k in 0..16 {
                let w = if self.counts[k] > 0.0 { self.counts[k] / q[k] } else { 0.0 } - self.total * self.dwell[k] / denom;
                let psi = &self.kets[k];
                let vk = &v[k];
                // ∂q/∂T_ij = 2 conj(v_i) ψ_j in the (Re, −Im) sense
                for d in 0..4 {
                    g[d] += w * 2.0 * (vk[d].conj() * psi[d]).re;
                }
                for (m, &(i, j)) in OFF_DIAGONAL.iter().enumerate() {
                    let z = vk[i].conj() * psi[j];
                    g[4 + 2 * m] += w * 2.0 * z.re;
                    g[5 + 2 * m] += w * -2.0 * z.im;
                }
            }
        }
        ll
    }

    fn full_log_likelihood(&self, rho: &DensityMatrix) -> f64 {
        let p: [f64; 16] = core::array::from_fn(|k| (self.kets[k].adjoint() * rho.matrix() * self.kets[k])[(0, 0)].re);
        let expected: f64 = (0..16).map(|k| self.dwell[k] * p[k]).sum();
        let n_hat = self.total / expected;
        (0..16)
            .map(|k| {
                let mu = n_hat * self.dwell[k] * p[k];
                let log_term = if self.counts[k] > 0.0 { self.counts[k] * libm::log(mu) } else { 0.0 };
                log_term - mu
            })
            .sum()
    }
}

/// Maximum-likelihood reconstruction over `ρ = T†T / Tr(T†T)`.
///
/// Quasi-Newton (BFGS) ascent with analytic gradients and a backtracking
/// line search that only accepts likelihood increases; started from the
/// eigenvalue-clipped linear inversion.
pub fn mle_reconstruct(records: &[MeasurementRecord]) -> Result<MleResult> {
    let recs = complete_set(records)?;
    let lik = Likelihood::new(&recs);
    if !(lik.total > 0.0) {
        return Err(Error::no_data("all tomography counts are zero"));
    }
    let start = match linear_inversion(&recs) {
        Ok(lin) => lin.rho.psd_projected().unwrap_or_else(|_| DensityMatrix::maximally_mixed()),
        Err(Error::NoData(_)) => DensityMatrix::maximally_mixed(),
        Err(e) => return Err(e),
    };
    // stay off the boundary so every ln q_k starts finite
    let eps = 1e-3;
    let start = DensityMatrix(start.0 * C64::new(1.0 - eps, 0.0) + Matrix4::identity() * C64::new(eps / 4.0, 0.0));
    let mut x = params_from_t(&lower_factor(&start)?);

    let scale = lik.total;
    let f = |x: &[f64; 16], g: Option<&mut [f64; 16]>| -> f64 {
        match g {
            Some(g) => {
                let v = -lik.eval(x, Some(g)) / scale;
                g.iter_mut().for_each(|gi| *gi = -*gi / scale);
                v
            }
            None => -lik.eval(x, None) / scale,
        }
    };

    let mut g = [0.0; 16];
    let mut fx = f(&x, Some(&mut g));
    let mut h = SMatrix::<f64, 16, 16>::identity();
    let mut history = alloc::vec![-fx * scale];
    let mut iterations = 0;
    let mut converged = false;
    let mut small_steps = 0;

    while iterations < MLE_MAX_ITERATIONS {
        iterations += 1;
        let gv = SVector::<f64, 16>::from_row_slice(&g);
        if gv.amax() < MLE_TOLERANCE {
            converged = true;
            break;
        }
        let mut d = -(h * gv);
        let mut slope = d.dot(&gv);
        if !(slope < 0.0) {
            h = SMatrix::identity();
            d = -gv;
            slope = d.dot(&gv);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: [f64; 16] = core::array::from_fn(|i| x[i] + step * d[i]);
            let ft = f(&trial, None);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            // no ascent direction left at working precision
            converged = true;
            break;
        };
        let mut gn = [0.0; 16];
        let fn_ = f(&next, Some(&mut gn));
        let s = SVector::<f64, 16>::from_fn(|i, _| next[i] - x[i]);
        let y = SVector::<f64, 16>::from_fn(|i, _| gn[i] - g[i]);
        let sy = s.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let i16 = SMatrix::<f64, 16, 16>::identity();
            let left = i16 - s * y.transpose() * rho;
            h = left * h * left.transpose() + s * s.transpose() * rho;
        }
        let gain = fx - fn_;
        x = next;
        fx = fn_;
        g = gn;
        history.push(-fx * scale);
        if gain < MLE_TOLERANCE {
            small_steps += 1;
            if small_steps >= 2 {
                converged = true;
                break;
            }
        } else {
            small_steps = 0;
        }
    }

    let t = t_from_params(&x);
    let m = t.adjoint() * t;
    let tr = m.trace().re;
    let mut rho = m / C64::new(tr, 0.0);
    rho = (rho + rho.adjoint()) * C64::new(0.5, 0.0);
    let rho = DensityMatrix(rho);
    rho.check_physical()?;
    Ok(MleResult { rho, log_likelihood: lik.full_log_likelihood(&rho), iterations, converged, history })
}

/// Expected counts `N d_k Tr(ρ Π_k)` with `N = 4 × per_setting` per unit
/// dwell, so that the settings average about `per_setting` counts.
pub fn expected_counts(rho: &DensityMatrix, per_setting: f64, dwell_s: f64) -> [f64; 16] {
    let settings = Setting::all();
    core::array::from_fn(|k| (4.0 * per_setting * dwell_s * born(rho, settings[k])).max(0.0))
}

/// Poisson-sampled measurement records drawn from `rho`.
pub fn sample_records<R: rand::Rng + ?Sized>(
    rho: &DensityMatrix,
    per_setting: f64,
    dwell_s: f64,
    rng: &mut R,
) -> Vec<MeasurementRecord> {
    let settings = Setting::all();
    expected_counts(rho, per_setting, dwell_s)
        .iter()
        .zip(settings)
        .map(|(&mean, setting)| MeasurementRecord { setting, count: poisson(mean, rng), dwell_s })
        .collect()
}

/// Noiseless records: expected counts rounded to integers.
pub fn exact_records(rho: &DensityMatrix, per_setting: f64, dwell_s: f64) -> Vec<MeasurementRecord> {
    let settings = Setting::all();
    expected_counts(rho, per_setting, dwell_s)
        .iter()
        .zip(settings)
        .map(|(&mean, setting)| MeasurementRecord { setting, count: libm::round(mean) as u64, dwell_s })
        .collect()
}

fn poisson<R: rand::Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean > 0.0 {
        Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
    } else {
        0
    }
}

/// Random generator for Monte Carlo trial `trial`: the seeded ChaCha
/// stream with the trial index as stream number, so trials can run in any
/// order or in parallel.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Fidelity to `target` of the MLE state from Poisson-resampled counts, or
/// `None` when that reconstruction did not converge.
pub fn monte_carlo_trial(records: &[MeasurementRecord], target: &Vector4<C64>, seed: u64, trial: u64) -> Result<Option<f64>> {
    let mut rng = trial_rng(seed, trial);
    let resampled: Vec<MeasurementRecord> = records
        .iter()
        .map(|r| MeasurementRecord { count: poisson(r.count as f64, &mut rng), ..*r })
        .collect();
    match mle_reconstruct(&resampled) {
        Ok(m) if m.converged => Ok(Some(fidelity(&m.rho, target)?)),
        Ok(_) | Err(Error::NoData(_)) | Err(Error::DegenerateData(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Aggregate of Monte Carlo trials.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    /// Per-trial fidelity, `None` for dropped trials; indexed by trial.
    pub values: Vec<Option<f64>>,
    pub dropped: usize,
}

/// Summarizes per-trial values; more than 10% dropped trials is an error.
pub fn summarize_trials(values: Vec<Option<f64>>) -> Result<MonteCarloSummary> {
    let kept: Vec<f64> = values.iter().flatten().copied().collect();
    let dropped = values.len() - kept.len();
    if dropped * 10 > values.len() {
        return Err(Error::NoConvergence { what: "Monte Carlo tomography", iterations: values.len(), best: kept });
    }
    if kept.len() < 2 {
        return Err(Error::no_data("fewer than two Monte Carlo trials"));
    }
    let n = kept.len() as f64;
    let mean = kept.iter().sum::<f64>() / n;
    let var = kept.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(MonteCarloSummary { mean, std: libm::sqrt(var), values, dropped })
}

/// Poisson resampling of every count, MLE and fidelity, `trials` times.
pub fn monte_carlo_uncertainty(
    records: &[MeasurementRecord],
    target: &Vector4<C64>,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloSummary> {
    if trials < 2 {
        return Err(Error::domain("Monte Carlo needs at least two trials"));
    }
    complete_set(records)?;
    let values = (0..trials as u64)
        .map(|t| monte_carlo_trial(records, target, seed, t))
        .collect::<Result<Vec<_>>>()?;
    summarize_trials(values)
}

/// The density matrix printed for the measured time-bin state (rows of
/// `{ee, el, le, ll}`), as published: its trace is 0.9986 and it has a
/// small negative eigenvalue from rounding of the displayed entries.
pub fn published_state() -> DensityMatrix {
    let c = C64::new;
    DensityMatrix::unchecked(Matrix4::new(
        c(0.5300, 0.0),
        c(-0.0215, 0.0355),
        c(-0.0089, 0.0296),
        c(0.4530, -0.0292),
        c(-0.0215, -0.0355),
        c(0.0124, 0.0),
        c(0.0078, 0.0056),
        c(-0.0038, -0.0126),
        c(-0.0089, -0.0296),
        c(0.0078, -0.0056),
        c(0.0092, 0.0),
        c(0.0116, -0.0260),
        c(0.4530, 0.0292),
        c(-0.0038, 0.0126),
        c(0.0116, 0.0260),
        c(0.4470, 0.0),
    ))
}
