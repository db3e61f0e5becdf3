//! Free-free chain of three masses connected by springs and dampers.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{MatrixPolynomial, Polynomial, StateSpace};
use crate::model::{AdditiveModel, Submodel};

/// Physical parameters. Spring/damper `i` connects mass `i` and mass `i + 1`.
/// Every mass carries one force actuator and one position sensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreeMassConfig {
    pub masses: [f64; 3],
    pub stiffness: [f64; 2],
    pub damping: [f64; 2],
    /// Springs from each mass to the ground; all zero for a free-free structure.
    #[serde(default)]
    pub ground_stiffness: [f64; 3],
    /// Force per unit input on each mass.
    #[serde(default = "unit_gains")]
    pub actuator_gain: [f64; 3],
    /// Output units per metre of displacement of each mass.
    #[serde(default = "unit_gains")]
    pub sensor_gain: [f64; 3],
}

fn unit_gains() -> [f64; 3] {
    [1.0; 3]
}

impl Default for ThreeMassConfig {
    /// Unit masses, flexible modes at 15 Hz and 40 Hz, stiffness-proportional
    /// damping `c = 4.2e-4 k`, positions measured in micrometres.
    fn default() -> Self {
        let k = [6289.925019309863, 29734.13104466629];
        Self {
            masses: [1.0; 3],
            stiffness: k,
            damping: [4.2e-4 * k[0], 4.2e-4 * k[1]],
            ground_stiffness: [0.0; 3],
            actuator_gain: [1.0; 3],
            sensor_gain: [1e6; 3],
        }
    }
}

impl ThreeMassConfig {
    fn check(&self) -> Result<()> {
        if self.masses.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::InvalidConfig("masses must be positive".into()));
        }
        let nonneg = self.stiffness.iter().chain(&self.damping).chain(&self.ground_stiffness);
        if nonneg.clone().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidConfig("stiffness and damping must be nonnegative".into()));
        }
        Ok(())
    }

    fn chain_matrix(coupling: &[f64; 2], ground: &[f64; 3]) -> DMatrix<f64> {
        let mut k = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(ground));
        for (i, &c) in coupling.iter().enumerate() {
            k[(i, i)] += c;
            k[(i + 1, i + 1)] += c;
            k[(i, i + 1)] -= c;
            k[(i + 1, i)] -= c;
        }
        k
    }

    pub fn mass_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.masses))
    }

    pub fn stiffness_matrix(&self) -> DMatrix<f64> {
        Self::chain_matrix(&self.stiffness, &self.ground_stiffness)
    }

    pub fn damping_matrix(&self) -> DMatrix<f64> {
        Self::chain_matrix(&self.damping, &[0.0; 3])
    }

    fn actuation(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.actuator_gain))
    }

    fn sensing(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.sensor_gain))
    }

    /// Second-order physical model with state `[q; dq/dt]`.
    pub fn physical_state_space(&self) -> Result<StateSpace> {
        self.check()?;
        let minv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(3, self.masses.iter().map(|m| 1.0 / m)));
        let mut a = DMatrix::zeros(6, 6);
        a.view_mut((0, 3), (3, 3)).copy_from(&DMatrix::identity(3, 3));
        a.view_mut((3, 0), (3, 3)).copy_from(&(-&minv * self.stiffness_matrix()));
        a.view_mut((3, 3), (3, 3)).copy_from(&(-&minv * self.damping_matrix()));
        let mut b = DMatrix::zeros(6, 3);
        b.view_mut((3, 0), (3, 3)).copy_from(&(&minv * self.actuation()));
        let mut c = DMatrix::zeros(3, 6);
        c.view_mut((0, 0), (3, 3)).copy_from(&self.sensing());
        StateSpace::new(a, b, c, DMatrix::zeros(3, 3))
    }

    /// Natural frequencies (rad/s) and mass-normalized mode shapes, ascending.
    pub fn modes(&self) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.check()?;
        let mhalf_inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(3, self.masses.iter().map(|m| 1.0 / m.sqrt())));
        let kt = &mhalf_inv * self.stiffness_matrix() * &mhalf_inv;
        let eig = SymmetricEigen::new((&kt + kt.transpose()) * 0.5);
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let omegas = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
        let shapes = DMatrix::from_fn(3, 3, |r, c| (&mhalf_inv * eig.eigenvectors.column(order[c]))[r]);
        Ok((omegas, shapes))
    }
}

/// Modal expansion `B_1/p^2 + sum_i B_i/(a_2 p^2 + a_1 p + 1)` of the chain.
pub fn three_mass_model(cfg: &ThreeMassConfig) -> Result<AdditiveModel> {
    cfg.check()?;
    if cfg.ground_stiffness.iter().any(|&k| k > 0.0) {
        return Err(Error::NotFreeFree);
    }
    let (omegas, phi) = cfg.modes()?;
    let scale = omegas[2].max(f64::MIN_POSITIVE);
    if omegas[1] <= 1e-6 * scale {
        return Err(Error::InvalidConfig("the chain is disconnected: more than one rigid-body mode".into()));
    }
    let modal_c = phi.transpose() * cfg.damping_matrix() * &phi;
    let cnorm = modal_c.amax();
    for i in 0..3 {
        for j in 0..3 {
            if i != j && modal_c[(i, j)].abs() > 1e-9 * cnorm.max(f64::MIN_POSITIVE) {
                return Err(Error::InvalidConfig(
                    "damping is not proportional to stiffness; the modes do not decouple".into(),
                ));
            }
        }
    }
    let (s, f) = (cfg.sensing(), cfg.actuation());
    let residue = |i: usize| {
        let v = phi.column(i);
        &s * (v * v.transpose()) * &f
    };
    let mut subs = vec![Submodel::new(
        2,
        Polynomial::one(),
        MatrixPolynomial::new(vec![residue(0)])?,
    )];
    for i in 1..3 {
        let w2 = omegas[i] * omegas[i];
        let a = Polynomial::new(vec![1.0, modal_c[(i, i)] / w2, 1.0 / w2])?;
        subs.push(Submodel::new(0, a, MatrixPolynomial::new(vec![residue(i) / w2])?));
    }
    AdditiveModel::new(3, 3, subs)
}
