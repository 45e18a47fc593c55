//! Spectral coordinates: projection, problem-specific reconstruction and
//! functions of the discrete Laplacian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::eig::EigenBasis;
use crate::fem::SparseMatrix;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SpectralError {
    #[error("time is required for heat reconstructions")]
    MissingTime,
    #[error("forcing coefficients are required for the forced heat reconstruction")]
    MissingForcing,
    #[error("g({lambda}) is not finite")]
    Domain { lambda: f64 },
    #[error("cannot parse spectral function `{0}` (expected identity, pow:<a> or exp-scale:<a>)")]
    Parse(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
}

/// `c_k = φ_kᵀ M u` for a nodal field `u`, with `M` the full mass matrix.
pub fn project(basis: &EigenBasis, mass: &SparseMatrix, u: &[f64]) -> Vec<f64> {
    let mu = basis.dofs.restrict(&mass.mul_vec(u));
    (basis.modes.transpose() * DVector::from_vec(mu)).data.into()
}

/// Interior-restricted `Σ c_k φ_k` extended by zero.
pub fn synthesize(basis: &EigenBasis, coeffs: &[f64]) -> Vec<f64> {
    let v = &basis.modes * DVector::from_column_slice(coeffs);
    basis.dofs.extend(v.as_slice())
}

/// Basis with column `k` scaled by `λ_k^{-1/2}`.
pub fn scaled_basis_poisson(basis: &EigenBasis) -> EigenBasis {
    let mut out = basis.clone();
    for (k, mut col) in out.modes.column_iter_mut().enumerate() {
        col /= basis.eigenvalues[k].sqrt();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    PoissonScaled,
    HeatDecay,
    HeatForcedOde,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionRule {
    pub kind: RuleKind,
    /// Diffusivity for the heat variants.
    pub diffusivity: f64,
}

impl ReconstructionRule {
    pub fn poisson() -> Self {
        ReconstructionRule { kind: RuleKind::PoissonScaled, diffusivity: 0.0 }
    }

    pub fn heat_decay(diffusivity: f64) -> Self {
        ReconstructionRule { kind: RuleKind::HeatDecay, diffusivity }
    }

    pub fn heat_forced(diffusivity: f64) -> Self {
        ReconstructionRule { kind: RuleKind::HeatForcedOde, diffusivity }
    }

    pub fn needs_time(&self) -> bool {
        !matches!(self.kind, RuleKind::PoissonScaled)
    }

    /// Per-mode multiplier `s_k(t)` applied to the learned coordinates:
    /// `λ_k^{-1/2}` (Poisson) or `e^{-Dλ_k t}` (heat).
    pub fn scale_factors(&self, eigenvalues: &[f64], t: Option<f64>) -> Result<Vec<f64>, SpectralError> {
        match self.kind {
            RuleKind::PoissonScaled => Ok(eigenvalues.iter().map(|l| 1.0 / l.sqrt()).collect()),
            _ => {
                let t = t.ok_or(SpectralError::MissingTime)?;
                Ok(eigenvalues.iter().map(|l| (-self.diffusivity * l * t).exp()).collect())
            }
        }
    }

    /// Forced-response weight `(1 - e^{-Dλ_k t}) / (Dλ_k)`, zero for the
    /// other variants.
    pub fn forcing_factors(&self, eigenvalues: &[f64], t: Option<f64>) -> Result<Vec<f64>, SpectralError> {
        match self.kind {
            RuleKind::HeatForcedOde => {
                let t = t.ok_or(SpectralError::MissingTime)?;
                Ok(eigenvalues
                    .iter()
                    .map(|l| {
                        let r = self.diffusivity * l;
                        -(-r * t).exp_m1() / r
                    })
                    .collect())
            }
            _ => Ok(vec![0.0; eigenvalues.len()]),
        }
    }

    /// Modal amplitudes multiplying the unscaled eigenfunctions.
    pub fn modal_amplitudes(
        &self,
        eigenvalues: &[f64],
        coords: &[f64],
        f_coeffs: Option<&[f64]>,
        t: Option<f64>,
    ) -> Result<Vec<f64>, SpectralError> {
        let m = eigenvalues.len();
        if coords.len() != m {
            return Err(SpectralError::Shape { expected: m, got: coords.len() });
        }
        let s = self.scale_factors(eigenvalues, t)?;
        let mut a: Vec<f64> = coords.iter().zip(&s).map(|(c, s)| c * s).collect();
        if self.kind == RuleKind::HeatForcedOde {
            let f = f_coeffs.ok_or(SpectralError::MissingForcing)?;
            if f.len() != m {
                return Err(SpectralError::Shape { expected: m, got: f.len() });
            }
            for ((ak, g), fk) in a.iter_mut().zip(self.forcing_factors(eigenvalues, t)?).zip(f) {
                *ak += g * fk;
            }
        }
        Ok(a)
    }
}

/// Field values `eval · a(t)` at the points whose basis values form the rows
/// of `eval` (`n_points × M`, unscaled eigenfunctions).
pub fn reconstruct(
    rule: &ReconstructionRule,
    eigenvalues: &[f64],
    coords: &[f64],
    f_coeffs: Option<&[f64]>,
    t: Option<f64>,
    eval: &DMatrix<f64>,
) -> Result<Vec<f64>, SpectralError> {
    let a = rule.modal_amplitudes(eigenvalues, coords, f_coeffs, t)?;
    if eval.ncols() != a.len() {
        return Err(SpectralError::Shape { expected: a.len(), got: eval.ncols() });
    }
    Ok((eval * DVector::from_vec(a)).data.into())
}

/// Scalar function of the Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralFunction {
    Identity,
    /// `λ^a`
    Pow(f64),
    /// `e^{-aλ}`
    ExpScale(f64),
}

impl SpectralFunction {
    pub fn apply(&self, lambda: f64) -> f64 {
        match *self {
            SpectralFunction::Identity => 1.0,
            SpectralFunction::Pow(a) => lambda.powf(a),
            SpectralFunction::ExpScale(a) => (-a * lambda).exp(),
        }
    }
}

impl std::str::FromStr for SpectralFunction {
    type Err = SpectralError;
    fn from_str(s: &str) -> Result<Self, SpectralError> {
        let err = || SpectralError::Parse(s.to_string());
        let s = s.trim();
        if s == "identity" {
            return Ok(SpectralFunction::Identity);
        }
        let (name, arg) = s.split_once(':').ok_or_else(err)?;
        let a: f64 = arg.trim().parse().map_err(|_| err())?;
        if !a.is_finite() {
            return Err(err());
        }
        match name.trim() {
            "pow" => Ok(SpectralFunction::Pow(a)),
            "exp-scale" => Ok(SpectralFunction::ExpScale(a)),
            _ => Err(err()),
        }
    }
}

impl std::fmt::Display for SpectralFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpectralFunction::Identity => write!(f, "identity"),
            SpectralFunction::Pow(a) => write!(f, "pow:{a}"),
            SpectralFunction::ExpScale(a) => write!(f, "exp-scale:{a}"),
        }
    }
}

/// `Σ g(λ_k) (φ_kᵀ M u) φ_k` as a nodal field.
pub fn apply_spectral_function(
    basis: &EigenBasis,
    mass: &SparseMatrix,
    g: &SpectralFunction,
    u: &[f64],
) -> Result<Vec<f64>, SpectralError> {
    if u.len() != basis.dofs.n_nodes() {
        return Err(SpectralError::Shape { expected: basis.dofs.n_nodes(), got: u.len() });
    }
    let mut c = project(basis, mass, u);
    for (ck, &l) in c.iter_mut().zip(&basis.eigenvalues) {
        let gl = g.apply(l);
        if !gl.is_finite() {
            return Err(SpectralError::Domain { lambda: l });
        }
        *ck *= gl;
    }
    Ok(synthesize(basis, &c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eig::EigenOptions;
    use crate::fem::Discretization;
    use crate::mesh::generate_unit_square;
    use crate::sim::solve_poisson;
    use proptest::prelude::*;

    fn setup(n: usize, m: Option<usize>) -> (crate::mesh::Mesh, Discretization, EigenBasis) {
        let mesh = generate_unit_square(n).unwrap();
        let disc = Discretization::new(&mesh).unwrap();
        let m = m.unwrap_or(disc.n_interior());
        let basis = EigenBasis::from_discretization(&mesh, &disc, m, &EigenOptions::default()).unwrap();
        (mesh, disc, basis)
    }

    fn interior_random(mesh: &crate::mesh::Mesh, seed: u64) -> Vec<f64> {
        (0..mesh.n_nodes())
            .map(|i| if mesh.is_boundary(i) { 0.0 } else { (((i as u64 + 1) * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0 })
            .collect()
    }

    #[test]
    fn projection_of_modes_and_zero() {
        let (_, disc, basis) = setup(9, Some(6));
        for j in 0..6 {
            let c = project(&basis, &disc.mass, &basis.nodal_mode(j));
            for (k, ck) in c.iter().enumerate() {
                assert!((ck - if k == j { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
        assert!(project(&basis, &disc.mass, &vec![0.0; 81]).iter().all(|&c| c == 0.0));
    }

    #[test]
    fn completeness_on_tiny_mesh() {
        let (mesh, disc, basis) = setup(7, None);
        let u = interior_random(&mesh, 3);
        let back = synthesize(&basis, &project(&basis, &disc.mass, &u));
        for (a, b) in back.iter().zip(&u) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn scaled_basis() {
        let (_, _, basis) = setup(9, Some(3));
        let s = scaled_basis_poisson(&basis);
        for k in 0..3 {
            let f = 1.0 / basis.eigenvalues[k].sqrt();
            for i in 0..basis.modes.nrows() {
                assert!((s.modes[(i, k)] - f * basis.modes[(i, k)]).abs() < 1e-15);
            }
        }
        let mut unit = basis.clone();
        unit.eigenvalues = vec![1.0, 1.0, 4.0];
        let s = scaled_basis_poisson(&unit);
        assert_eq!(s.modes.column(0), basis.modes.column(0));
        assert_eq!(s.modes.column(2), basis.modes.column(2) * 0.5);
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((1.0 / (2.0 * pi2).sqrt() - 0.2251).abs() < 1e-4);
    }

    #[test]
    fn reconstruction_rules() {
        let lam = [2.0 * std::f64::consts::PI.powi(2), 50.0];
        let eval = DMatrix::identity(2, 2);
        let heat = ReconstructionRule::heat_decay(0.02);
        assert_eq!(reconstruct(&heat, &lam, &[1.0, 2.0], None, Some(0.0), &eval).unwrap(), vec![1.0, 2.0]);
        let v = reconstruct(&heat, &lam, &[1.0, 0.0], None, Some(1.0), &eval).unwrap();
        assert!((v[0] - 0.6738).abs() < 1e-4);
        assert_eq!(reconstruct(&heat, &lam, &[1.0, 0.0], None, None, &eval), Err(SpectralError::MissingTime));
        let forced = ReconstructionRule::heat_forced(0.02);
        let f = [3.0, -1.0];
        let late = reconstruct(&forced, &lam, &[0.0, 0.0], Some(&f), Some(1e4), &eval).unwrap();
        for k in 0..2 {
            assert!((late[k] - f[k] / (0.02 * lam[k])).abs() < 1e-12);
        }
        assert_eq!(reconstruct(&forced, &lam, &[0.0, 0.0], None, Some(1.0), &eval), Err(SpectralError::MissingForcing));
        let p = reconstruct(&ReconstructionRule::poisson(), &[4.0, 1.0], &[1.0, 1.0], None, None, &eval).unwrap();
        assert_eq!(p, vec![0.5, 1.0]);
    }

    #[test]
    fn spectral_function_parsing() {
        assert_eq!("identity".parse::<SpectralFunction>().unwrap(), SpectralFunction::Identity);
        assert_eq!("pow:-1".parse::<SpectralFunction>().unwrap(), SpectralFunction::Pow(-1.0));
        assert_eq!("exp-scale:0.5".parse::<SpectralFunction>().unwrap(), SpectralFunction::ExpScale(0.5));
        for bad in ["pow", "pow:x", "sqrt:2", "exp-scale:nan", ""] {
            assert!(bad.parse::<SpectralFunction>().is_err(), "{bad}");
        }
        let g = SpectralFunction::Pow(-0.5);
        assert_eq!(g.to_string().parse::<SpectralFunction>().unwrap(), g);
    }

    #[test]
    fn functional_calculus() {
        let (mesh, disc, basis) = setup(8, None);
        assert!(basis.n_modes() <= 50);
        let u = interior_random(&mesh, 11);
        let id = apply_spectral_function(&basis, &disc.mass, &SpectralFunction::Identity, &u).unwrap();
        for (a, b) in id.iter().zip(&u) {
            assert!((a - b).abs() < 1e-8);
        }
        let f: Vec<f64> = (0..mesh.n_nodes()).map(|i| (i % 7) as f64 - 3.0).collect();
        let inv = apply_spectral_function(&basis, &disc.mass, &SpectralFunction::Pow(-1.0), &f).unwrap();
        let direct = solve_poisson(&mesh, &f).unwrap();
        let e: Vec<f64> = inv.iter().zip(&direct).map(|(a, b)| a - b).collect();
        assert!(disc.mass.bilinear(&e, &e).sqrt() <= 1e-8 * disc.mass.bilinear(&direct, &direct).sqrt());
        let up = apply_spectral_function(&basis, &disc.mass, &SpectralFunction::Pow(1.0), &u).unwrap();
        let back = apply_spectral_function(&basis, &disc.mass, &SpectralFunction::Pow(-1.0), &up).unwrap();
        for (a, b) in back.iter().zip(&u) {
            assert!((a - b).abs() < 1e-8);
        }
        let mut zero = basis.clone();
        zero.eigenvalues[0] = 0.0;
        assert!(matches!(
            apply_spectral_function(&zero, &disc.mass, &SpectralFunction::Pow(-1.0), &u),
            Err(SpectralError::Domain { .. })
        ));
    }

    #[test]
    fn forced_coefficients_solve_modal_ode() {
        let lam = [19.7, 49.3, 120.0];
        let rule = ReconstructionRule::heat_forced(0.02);
        let c0 = [0.3, -1.2, 2.0];
        let f = [1.0, 0.5, -4.0];
        for t in [0.05, 0.4, 1.0] {
            let a = rule.modal_amplitudes(&lam, &c0, Some(&f), Some(t)).unwrap();
            for k in 0..3 {
                let r = 0.02 * lam[k];
                let cdot = -r * c0[k] * (-r * t).exp() + f[k] * (-r * t).exp();
                assert!((cdot + r * a[k] - f[k]).abs() <= 1e-8);
            }
        }
    }

    proptest! {
        #[test]
        fn parseval(coeffs in proptest::collection::vec(-5.0f64..5.0, 8)) {
            let (_, disc, basis) = setup(9, Some(8));
            let u = synthesize(&basis, &coeffs);
            let lhs = disc.mass.bilinear(&u, &u);
            let rhs: f64 = coeffs.iter().map(|c| c * c).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-8 * rhs.max(1.0));
        }

        #[test]
        fn decay_semigroup(t1 in 0.0f64..2.0, t2 in 0.0f64..2.0, c in proptest::collection::vec(-3.0f64..3.0, 4)) {
            let lam = [19.7, 49.3, 49.4, 78.9];
            let rule = ReconstructionRule::heat_decay(0.02);
            let both = rule.modal_amplitudes(&lam, &c, None, Some(t1 + t2)).unwrap();
            let first = rule.modal_amplitudes(&lam, &c, None, Some(t1)).unwrap();
            let second = rule.modal_amplitudes(&lam, &first, None, Some(t2)).unwrap();
            for k in 0..4 {
                prop_assert!((both[k] - second[k]).abs() <= 1e-12);
            }
        }

        #[test]
        fn truncation_residual_is_monotone(seed in 0u64..1000) {
            let (mesh, disc, basis) = setup(7, None);
            let u = interior_random(&mesh, seed);
            let c = project(&basis, &disc.mass, &u);
            let mut prev = f64::INFINITY;
            for m in 0..=c.len() {
                let mut cm = c.clone();
                cm[m..].iter_mut().for_each(|v| *v = 0.0);
                let r: Vec<f64> = u.iter().zip(synthesize(&basis, &cm)).map(|(a, b)| a - b).collect();
                let norm = disc.mass.bilinear(&r, &r).sqrt();
                prop_assert!(norm <= prev + 1e-12);
                prev = norm;
            }
        }
    }
}
