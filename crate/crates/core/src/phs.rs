//! Bilinear port-Hamiltonian converter models.
//!
//! A converter is `dx/dt = (J0 + sum_i Ji*u_i - R) Q x + E` with Hamiltonian
//! `H(x) = x' Q x / 2`. `Q = P^-1` is the inverse inertia (1/henry on flux
//! rows, 1/farad on charge rows), `R` the dissipation, `J0` and the `Ji`
//! exactly skew-symmetric interconnection matrices and `E` the constant
//! sources. All matrices are dense; the applications have n <= 10.

use nalgebra::{DMatrix, DVector};

use crate::error::PhsError;

/// Energy-variable state vector (weber on flux rows, coulomb on charge rows).
pub type State = DVector<f64>;

/// Terms of the instantaneous power balance, in watt.
///
/// `stored = -dissipated + control + supplied`; the control term vanishes to
/// machine precision by skew-symmetry of the modulated interconnection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerBalance {
    pub stored: f64,
    pub dissipated: f64,
    pub control: f64,
    pub supplied: f64,
}

/// A bilinear port-Hamiltonian converter model.
///
/// Symmetry of `Q` and `R` and skew-symmetry of `J0` and every `Ji` are
/// enforced at construction; the skew matrices are rebuilt from their strict
/// upper triangle so `J + J' = 0` holds bit-exactly afterwards. Values are
/// immutable after construction; all operations are pure.
#[derive(Debug, Clone, PartialEq)]
pub struct PhSystem {
    n: usize,
    m: usize,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    j0: DMatrix<f64>,
    ji: Vec<DMatrix<f64>>,
    e: DVector<f64>,
    // cached products
    drift_mat: DMatrix<f64>,      // (J0 - R) Q
    g_mats: Vec<DMatrix<f64>>,    // Ji Q, column i of g(x) is g_mats[i] * x
}

fn check_square(m: &DMatrix<f64>, n: usize, name: &'static str) -> Result<(), PhsError> {
    if m.nrows() != n || m.ncols() != n {
        return Err(PhsError::NotSquare { name, n });
    }
    Ok(())
}

fn check_symmetric_pd(m: &DMatrix<f64>, name: &'static str) -> Result<(), PhsError> {
    if m != &m.transpose() {
        return Err(PhsError::NotSymmetric { name });
    }
    let eig = m.clone().symmetric_eigenvalues();
    let min_eig = eig.min();
    if min_eig <= 0.0 {
        return Err(PhsError::NotPositiveDefinite { name, min_eig });
    }
    Ok(())
}

/// Rebuild a skew matrix from its strict upper triangle; errors unless the
/// input already satisfies `a[(j,i)] == -a[(i,j)]` and a zero diagonal.
fn skew_from_upper(m: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>, PhsError> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        if m[(i, i)] != 0.0 {
            return Err(PhsError::NotSkewSymmetric { name });
        }
        for j in (i + 1)..n {
            if m[(j, i)] != -m[(i, j)] {
                return Err(PhsError::NotSkewSymmetric { name });
            }
            out[(i, j)] = m[(i, j)];
            out[(j, i)] = -m[(i, j)];
        }
    }
    Ok(out)
}

impl PhSystem {
    pub fn new(
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        j0: DMatrix<f64>,
        ji: Vec<DMatrix<f64>>,
        e: DVector<f64>,
    ) -> Result<Self, PhsError> {
        let n = q.nrows();
        check_square(&q, n, "Q")?;
        check_square(&r, n, "R")?;
        check_square(&j0, n, "J0")?;
        if ji.is_empty() {
            return Err(PhsError::NoInputs);
        }
        for j in &ji {
            check_square(j, n, "Ji")?;
        }
        if e.len() != n {
            return Err(PhsError::DimensionMismatch { expected: n, got: e.len() });
        }
        check_symmetric_pd(&q, "Q")?;
        check_symmetric_pd(&r, "R")?;
        let j0 = skew_from_upper(&j0, "J0")?;
        let ji = ji
            .iter()
            .map(|j| skew_from_upper(j, "Ji"))
            .collect::<Result<Vec<_>, _>>()?;

        let drift_mat = (&j0 - &r) * &q;
        let g_mats = ji.iter().map(|j| j * &q).collect::<Vec<_>>();
        let m = ji.len();
        Ok(Self { n, m, q, r, j0, ji, e, drift_mat, g_mats })
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn j0(&self) -> &DMatrix<f64> {
        &self.j0
    }

    pub fn ji(&self) -> &[DMatrix<f64>] {
        &self.ji
    }

    pub fn e(&self) -> &DVector<f64> {
        &self.e
    }

    /// Same topology and inertia with a new dissipation matrix.
    pub fn with_dissipation(&self, r: DMatrix<f64>) -> Result<Self, PhsError> {
        Self::new(self.q.clone(), r, self.j0.clone(), self.ji.clone(), self.e.clone())
    }

    /// Same system with a new source vector.
    pub fn with_sources(&self, e: DVector<f64>) -> Result<Self, PhsError> {
        Self::new(self.q.clone(), self.r.clone(), self.j0.clone(), self.ji.clone(), e)
    }

    fn check_state(&self, x: &State) -> Result<(), PhsError> {
        if x.len() != self.n {
            return Err(PhsError::DimensionMismatch { expected: self.n, got: x.len() });
        }
        Ok(())
    }

    fn check_input(&self, u: &DVector<f64>) -> Result<(), PhsError> {
        if u.len() != self.m {
            return Err(PhsError::DimensionMismatch { expected: self.m, got: u.len() });
        }
        Ok(())
    }

    /// Stored energy `H(x) = x' Q x / 2` in joule.
    pub fn hamiltonian(&self, x: &State) -> Result<f64, PhsError> {
        self.check_state(x)?;
        Ok(0.5 * x.dot(&(&self.q * x)))
    }

    /// Co-energy vector `Q x` (currents on flux rows, voltages on charge rows).
    pub fn coenergy(&self, x: &State) -> Result<DVector<f64>, PhsError> {
        self.check_state(x)?;
        Ok(&self.q * x)
    }

    /// Drift vector field `f(x) = (J0 - R) Q x + E`.
    pub fn drift(&self, x: &State) -> Result<DVector<f64>, PhsError> {
        self.check_state(x)?;
        Ok(&self.drift_mat * x + &self.e)
    }

    /// Input matrix `g(x)`, column i equal to `Ji Q x`.
    pub fn input_matrix(&self, x: &State) -> Result<DMatrix<f64>, PhsError> {
        self.check_state(x)?;
        let mut g = DMatrix::zeros(self.n, self.m);
        for (i, gm) in self.g_mats.iter().enumerate() {
            g.set_column(i, &(gm * x));
        }
        Ok(g)
    }

    /// Closed-form state derivative `f(x) + g(x) u`.
    pub fn dynamics(&self, x: &State, u: &DVector<f64>) -> Result<DVector<f64>, PhsError> {
        self.check_state(x)?;
        self.check_input(u)?;
        let mut dx = self.drift(x)?;
        for (i, gm) in self.g_mats.iter().enumerate() {
            dx += gm * x * u[i];
        }
        Ok(dx)
    }

    /// Passive output `g'(x_ref) Q x` relative to the reference `x_ref`.
    ///
    /// `g'(x_ref) Q x_ref = 0` identically, so this equals the incremental
    /// output `g'(x_ref) Q (x - x_ref)`.
    pub fn passive_output(&self, x_ref: &State, x: &State) -> Result<DVector<f64>, PhsError> {
        self.check_state(x_ref)?;
        self.check_state(x)?;
        let g_ref = self.input_matrix(x_ref)?;
        Ok(g_ref.transpose() * (&self.q * x))
    }

    /// Instantaneous power balance at `(x, u)`.
    pub fn power_balance(&self, x: &State, u: &DVector<f64>) -> Result<PowerBalance, PhsError> {
        self.check_state(x)?;
        self.check_input(u)?;
        let z = &self.q * x; // co-energy
        let dissipated = z.dot(&(&self.r * &z));
        let supplied = z.dot(&self.e);
        let g = self.input_matrix(x)?;
        let control = z.dot(&(&g * u));
        let stored = z.dot(&self.dynamics(x, u)?);
        Ok(PowerBalance { stored, dissipated, control, supplied })
    }
}
