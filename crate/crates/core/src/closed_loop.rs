//! Discrete controllers, the control sensitivity `C (I + G C)^-1` and
//! sampled-data closed-loop simulation with `u = C_d (r - y)`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{zoh_discretize, DiscreteStateSpace, Recursion, StateSpace, C64};
use crate::model::AdditiveModel;
use crate::signals::{sample_output_noise, Dataset, NoiseSpec};

/// Scalar discrete transfer function in ascending powers of `q^-1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTf {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl DiscreteTf {
    pub fn gain(k: f64) -> Self {
        Self { num: vec![k], den: vec![1.0] }
    }

    /// Observer-canonical realization.
    fn realize(&self, ts: f64) -> Result<DiscreteStateSpace> {
        let a0 = *self
            .den
            .first()
            .ok_or_else(|| Error::InvalidConfig("empty controller denominator".into()))?;
        if a0 == 0.0 {
            return Err(Error::InvalidConfig("controller denominator must have a nonzero leading q^0 term".into()));
        }
        let n = self.den.len().max(self.num.len()).saturating_sub(1);
        let coef = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0) / a0;
        let b0 = coef(&self.num, 0);
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, 1);
        let mut c = DMatrix::zeros(1, n);
        for i in 0..n {
            let ai = coef(&self.den, i + 1);
            a[(i, 0)] = -ai;
            if i + 1 < n {
                a[(i, i + 1)] = 1.0;
            }
            b[(i, 0)] = coef(&self.num, i + 1) - ai * b0;
        }
        if n > 0 {
            c[(0, 0)] = 1.0;
        }
        DiscreteStateSpace::new(a, b, c, DMatrix::from_element(1, 1, b0), ts)
    }

    pub fn eval(&self, z: C64) -> C64 {
        let zi = z.inv();
        let horner = |v: &[f64]| v.iter().rev().fold(C64::new(0.0, 0.0), |acc, &c| acc * zi + c);
        horner(&self.num) / horner(&self.den)
    }
}

/// Controller file: `entries` lists the `n_u x n_y` transfer matrix row by row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerFile {
    #[serde(rename = "Ts")]
    pub ts: f64,
    pub n_u: usize,
    pub n_y: usize,
    pub entries: Vec<DiscreteTf>,
}

/// Discrete-time controller mapping the tracking error (`n_y`) to the plant
/// input (`n_u`).
#[derive(Clone, Debug)]
pub struct DiscreteController {
    pub sys: DiscreteStateSpace,
    file: ControllerFile,
}

impl DiscreteController {
    pub fn from_file(file: ControllerFile) -> Result<Self> {
        if file.entries.len() != file.n_u * file.n_y {
            return Err(Error::InvalidConfig(format!(
                "controller has {} entries, expected {} x {}",
                file.entries.len(),
                file.n_u,
                file.n_y
            )));
        }
        if !(file.ts > 0.0) {
            return Err(Error::InvalidConfig("controller sample period must be positive".into()));
        }
        let (n_u, n_y) = (file.n_u, file.n_y);
        let parts = file
            .entries
            .iter()
            .map(|e| e.realize(file.ts))
            .collect::<Result<Vec<_>>>()?;
        let order: usize = parts.iter().map(|p| p.order()).sum();
        let mut a = DMatrix::zeros(order, order);
        let mut b = DMatrix::zeros(order, n_y);
        let mut c = DMatrix::zeros(n_u, order);
        let mut d = DMatrix::zeros(n_u, n_y);
        let mut off = 0;
        for (idx, p) in parts.iter().enumerate() {
            let (i, j) = (idx / n_y, idx % n_y);
            let n = p.order();
            a.view_mut((off, off), (n, n)).copy_from(&p.a);
            b.view_mut((off, j), (n, 1)).copy_from(&p.b);
            c.view_mut((i, off), (1, n)).copy_from(&p.c);
            d[(i, j)] += p.d[(0, 0)];
            off += n;
        }
        Ok(Self {
            sys: DiscreteStateSpace::new(a, b, c, d, file.ts)?,
            file,
        })
    }

    /// Static gain matrix `n_u x n_y`.
    pub fn static_gain(k: &DMatrix<f64>, ts: f64) -> Result<Self> {
        Self::from_file(ControllerFile {
            ts,
            n_u: k.nrows(),
            n_y: k.ncols(),
            entries: (0..k.nrows())
                .flat_map(|i| (0..k.ncols()).map(move |j| (i, j)))
                .map(|(i, j)| DiscreteTf::gain(k[(i, j)]))
                .collect(),
        })
    }

    /// Diagonal `kp + kd s / (tau s + 1)` on every channel, ZOH-discretized.
    pub fn pd_diagonal(channels: usize, kp: f64, kd: f64, tau: f64, ts: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidConfig("derivative filter time constant must be positive".into()));
        }
        // kp + kd/tau - (kd/tau^2) / (s + 1/tau), the strictly proper part discretized exactly
        let a = (-ts / tau).exp();
        let b = (1.0 - a) * tau;
        let c = -kd / (tau * tau);
        let d = kp + kd / tau;
        let entry = DiscreteTf {
            num: vec![d, c * b - d * a],
            den: vec![1.0, -a],
        };
        let zero = DiscreteTf::gain(0.0);
        Self::from_file(ControllerFile {
            ts,
            n_u: channels,
            n_y: channels,
            entries: (0..channels * channels)
                .map(|idx| if idx / channels == idx % channels { entry.clone() } else { zero.clone() })
                .collect(),
        })
    }

    /// Lead-type PD whose loop gain on a double integrator `g / s^2` crosses
    /// unity at `omega_c` with the phase lead centred there.
    pub fn pd_for_double_integrator(channels: usize, g: f64, omega_c: f64, ts: f64) -> Result<Self> {
        let (wz, wp) = (omega_c / 3.0, omega_c * 3.0);
        // |1 + j w/wz| / |1 + j w/wp| = 3 at w = omega_c
        let k = omega_c * omega_c / (3.0 * g);
        let tau = 1.0 / wp;
        let kd = k / wz - k / wp;
        Self::pd_diagonal(channels, k, kd, tau, ts)
    }

    pub fn ts(&self) -> f64 {
        self.sys.ts
    }

    pub fn n_u(&self) -> usize {
        self.sys.outputs()
    }

    pub fn n_y(&self) -> usize {
        self.sys.inputs()
    }

    pub fn file(&self) -> &ControllerFile {
        &self.file
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_file(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.file)?)?;
        Ok(())
    }

    fn check_ts(&self, ts: f64) -> Result<()> {
        if (self.ts() - ts).abs() > 1e-9 * ts {
            return Err(Error::SamplePeriodMismatch(self.ts(), ts));
        }
        Ok(())
    }
}

/// Plant and controller joined in the loop `u = C (r - G u)`; `f = (I + Dc Dg)^-1`.
struct Interconnection<'a> {
    g: &'a DiscreteStateSpace,
    c: &'a DiscreteStateSpace,
    f: DMatrix<f64>,
}

impl<'a> Interconnection<'a> {
    fn new(c: &'a DiscreteStateSpace, g: &'a DiscreteStateSpace) -> Result<Self> {
        if c.inputs() != g.outputs() || c.outputs() != g.inputs() {
            return Err(Error::Dimension(format!(
                "controller is {}x{}, plant is {}x{}",
                c.outputs(),
                c.inputs(),
                g.outputs(),
                g.inputs()
            )));
        }
        let n_u = g.inputs();
        let m = DMatrix::identity(n_u, n_u) + &c.d * &g.d;
        let svd = m.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 1e-12 * smax.max(1.0)) {
            return Err(Error::IllPosed);
        }
        let f = m.try_inverse().ok_or(Error::IllPosed)?;
        Ok(Self { g, c, f })
    }

    /// Closed-loop realization with input `r` and output `u`; states `[xg; xc]`.
    fn sensitivity(&self) -> Result<DiscreteStateSpace> {
        let (g, c, f) = (self.g, self.c, &self.f);
        let (ng, nc) = (g.order(), c.order());
        // u = F (Cc xc - Dc Cg xg + Dc r)
        let u_xg = -(f * &c.d * &g.c);
        let u_xc = f * &c.c;
        let u_r = f * &c.d;
        // e = r - y = r - Cg xg - Dg u
        let e_xg = -(&g.c) - &g.d * &u_xg;
        let e_xc = -(&g.d * &u_xc);
        let e_r = DMatrix::identity(g.outputs(), g.outputs()) - &g.d * &u_r;

        let n = ng + nc;
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, g.outputs());
        a.view_mut((0, 0), (ng, ng)).copy_from(&(&g.a + &g.b * &u_xg));
        a.view_mut((0, ng), (ng, nc)).copy_from(&(&g.b * &u_xc));
        a.view_mut((ng, 0), (nc, ng)).copy_from(&(&c.b * &e_xg));
        a.view_mut((ng, ng), (nc, nc)).copy_from(&(&c.a + &c.b * &e_xc));
        b.view_mut((0, 0), (ng, g.outputs())).copy_from(&(&g.b * &u_r));
        b.view_mut((ng, 0), (nc, g.outputs())).copy_from(&(&c.b * &e_r));
        let mut cc = DMatrix::zeros(g.inputs(), n);
        cc.view_mut((0, 0), (g.inputs(), ng)).copy_from(&u_xg);
        cc.view_mut((0, ng), (g.inputs(), nc)).copy_from(&u_xc);
        DiscreteStateSpace::new(a, b, cc, u_r, g.ts)
    }
}

/// `S_uo = C (I + G C)^-1` as a discrete system from `r` to `u`.
pub fn control_sensitivity(controller: &DiscreteController, plant_d: &DiscreteStateSpace) -> Result<DiscreteStateSpace> {
    controller.check_ts(plant_d.ts)?;
    Interconnection::new(&controller.sys, plant_d)?.sensitivity()
}

/// ZOH equivalent of the whole additive model.
pub fn plant_discrete(model: &AdditiveModel, ts: f64) -> Result<DiscreteStateSpace> {
    zoh_discretize(&model.to_state_space()?, ts)
}

/// Noise-free part of the plant input, `S_uo r`, with `S_uo` formed from `model`.
pub fn noise_free_input(controller: &DiscreteController, model: &AdditiveModel, ds: &Dataset) -> Result<DMatrix<f64>> {
    let r = ds.reference()?;
    controller.check_ts(ds.ts)?;
    let s = control_sensitivity(controller, &plant_discrete(model, ds.ts)?)?;
    s.simulate(r)
}

fn loop_spectral_radius(controller: &DiscreteController, plant: &DiscreteStateSpace) -> Result<f64> {
    Ok(control_sensitivity(controller, plant)?.spectral_radius())
}

/// Simulate the sampled-data loop: continuous `model` behind a ZOH, discrete
/// controller, output noise `v`, `y = x + v`, `u = C_d (r - y)`.
///
/// With an SNR noise specification the noise level is set from the output of
/// a noise-free run with the same reference.
pub fn simulate_closed_loop(
    model: &AdditiveModel,
    controller: &DiscreteController,
    r: &DMatrix<f64>,
    noise: &NoiseSpec,
    seed: u64,
    ts: f64,
) -> Result<Dataset> {
    controller.check_ts(ts)?;
    let plant = plant_discrete(model, ts)?;
    if r.ncols() != plant.outputs() {
        return Err(Error::ChannelMismatch {
            expected: plant.outputs(),
            got: r.ncols(),
        });
    }
    let rho = loop_spectral_radius(controller, &plant)?;
    if !(rho < 1.0) {
        return Err(Error::UnstableLoop(rho));
    }
    let zero = DMatrix::zeros(r.nrows(), r.ncols());
    let (_, x_free) = run_loop(&plant, controller, r, &zero)?;
    let v = sample_output_noise(&x_free, noise, seed)?;
    let (u, x) = if v.iter().all(|&e| e == 0.0) {
        run_loop(&plant, controller, r, &zero)?
    } else {
        run_loop(&plant, controller, r, &v)?
    };
    Dataset::new(u, x + v, Some(r.clone()), ts)
}

/// Returns `(u, x)` where `x` is the noise-free plant output.
fn run_loop(
    plant: &DiscreteStateSpace,
    controller: &DiscreteController,
    r: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let inter = Interconnection::new(&controller.sys, plant)?;
    let (n_u, n_y) = (plant.inputs(), plant.outputs());
    let n = r.nrows();
    let mut g = Recursion::new(plant);
    let mut c = Recursion::new(&controller.sys);
    let mut u = DMatrix::zeros(n, n_u);
    let mut x = DMatrix::zeros(n, n_y);
    let zero_u = vec![0.0; n_u];
    let zero_e = vec![0.0; n_y];
    let mut xg_free = vec![0.0; n_y];
    let mut uc_free = vec![0.0; n_u];
    let mut dc_e = vec![0.0; n_u];
    let mut e = vec![0.0; n_y];
    let mut uk = vec![0.0; n_u];
    let mut xk = vec![0.0; n_y];
    let gd = &plant.d;
    let cd = &controller.sys.d;
    for k in 0..n {
        // state contributions with zero direct feedthrough
        g.output(&zero_u, &mut xg_free);
        c.output(&zero_e, &mut uc_free);
        // u = F (Cc xc + Dc (r - v - Cg xg))
        for j in 0..n_y {
            e[j] = r[(k, j)] - v[(k, j)] - xg_free[j];
        }
        for i in 0..n_u {
            dc_e[i] = uc_free[i] + (0..n_y).map(|j| cd[(i, j)] * e[j]).sum::<f64>();
        }
        for i in 0..n_u {
            uk[i] = (0..n_u).map(|j| inter.f[(i, j)] * dc_e[j]).sum();
        }
        for j in 0..n_y {
            xk[j] = xg_free[j] + (0..n_u).map(|i| gd[(j, i)] * uk[i]).sum::<f64>();
            e[j] = r[(k, j)] - v[(k, j)] - xk[j];
        }
        g.advance(&uk);
        c.advance(&e);
        for i in 0..n_u {
            u[(k, i)] = uk[i];
        }
        for j in 0..n_y {
            x[(k, j)] = xk[j];
        }
    }
    if u.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::UnstableLoop(f64::INFINITY));
    }
    Ok((u, x))
}

/// Scalar discrete transfer function of a SISO discrete state-space system.
pub fn siso_transfer(sys: &DiscreteStateSpace) -> Result<DiscreteTf> {
    if sys.inputs() != 1 || sys.outputs() != 1 {
        return Err(Error::Dimension("expected a SISO system".into()));
    }
    // characteristic polynomial by Faddeev-LeVerrier; C adj(zI - A) B from the same recursion
    let n = sys.order();
    let mut den = vec![1.0; 1];
    let mut num_adj = vec![0.0; n + 1];
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut coeffs = Vec::with_capacity(n);
    for k in 1..=n {
        num_adj[k] = (&sys.c * &m * &sys.b)[(0, 0)];
        let am = &sys.a * &m;
        let ck = -am.trace() / k as f64;
        coeffs.push(ck);
        m = am + DMatrix::identity(n, n) * ck;
    }
    den.extend(coeffs);
    // H(q) = D + C adj B / det, in q^-1: numerator of the strictly proper part shifts by one
    let d = sys.d[(0, 0)];
    let mut num: Vec<f64> = den.iter().map(|c| c * d).collect();
    for k in 1..=n {
        num[k] += num_adj[k];
    }
    Ok(DiscreteTf { num, den })
}

pub fn discretize_siso(ss: &StateSpace, ts: f64) -> Result<DiscreteTf> {
    siso_transfer(&zoh_discretize(ss, ts)?)
}
