//! Bundled benchmark systems: the alternating-spring Fermi-Pasta-Ulam chain
//! and the spring ring.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MultirateSystem, State};

/// Fermi-Pasta-Ulam chain of `2l` masses with alternating soft (cubic force)
/// and stiff (linear force) springs, in centre/stretch coordinates.
///
/// `masses[..l]` belong to the slow coordinates, `masses[l..]` to the fast ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FpuConfig {
    pub l: usize,
    pub omega_sq: f64,
    pub masses: Vec<f64>,
}

impl Default for FpuConfig {
    fn default() -> Self {
        FpuConfig {
            l: 3,
            omega_sq: 2500.0,
            masses: vec![1.0; 6],
        }
    }
}

impl FpuConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l == 0 {
            return Err(Error::InvalidArgument("FPU chain needs l >= 1".into()));
        }
        if !(self.omega_sq > 0.0 && self.omega_sq.is_finite()) {
            return Err(Error::InvalidArgument("omega_sq must be positive".into()));
        }
        check_masses(&self.masses, 2 * self.l)
    }
}

fn check_masses(masses: &[f64], expected: usize) -> Result<()> {
    if masses.len() != expected {
        return Err(Error::InvalidArgument(format!(
            "expected {expected} masses, got {}",
            masses.len()
        )));
    }
    if masses.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(Error::InvalidArgument("masses must be positive".into()));
    }
    Ok(())
}

/// Coefficient rows of the soft spring elongations `d_j = c_j · [q_s; q_f]`.
fn fpu_links(l: usize) -> Vec<Vec<(usize, f64)>> {
    let mut links = Vec::with_capacity(l + 1);
    links.push(vec![(0, 1.0), (l, -1.0)]);
    for i in 0..l - 1 {
        links.push(vec![(i + 1, 1.0), (l + i + 1, -1.0), (i, -1.0), (l + i, -1.0)]);
    }
    links.push(vec![(l - 1, 1.0), (2 * l - 1, 1.0)]);
    links
}

/// Builds the FPU system and its standard initial state
/// `q_s = e1, q_f = e1/ω, v_s = v_f = e1`.
pub fn build_fpu(config: &FpuConfig) -> Result<(MultirateSystem, State)> {
    config.validate()?;
    let l = config.l;
    let w2 = config.omega_sq;
    let links = fpu_links(l);

    let elongations = {
        let links = links.clone();
        move |qs: &DVector<f64>, qf: &DVector<f64>| -> Vec<f64> {
            links
                .iter()
                .map(|c| {
                    c.iter()
                        .map(|&(i, a)| a * if i < l { qs[i] } else { qf[i - l] })
                        .sum()
                })
                .collect()
        }
    };
    let value = {
        let el = elongations.clone();
        move |qs: &DVector<f64>, qf: &DVector<f64>| el(qs, qf).iter().map(|d| 0.25 * d.powi(4)).sum()
    };
    let gradient = {
        let el = elongations.clone();
        let links = links.clone();
        move |qs: &DVector<f64>, qf: &DVector<f64>| {
            let mut g = DVector::zeros(2 * l);
            for (d, c) in el(qs, qf).iter().zip(&links) {
                let d3 = d.powi(3);
                for &(i, a) in c {
                    g[i] += a * d3;
                }
            }
            (g.rows(0, l).into_owned(), g.rows(l, l).into_owned())
        }
    };
    let hessian = move |qs: &DVector<f64>, qf: &DVector<f64>| {
        let mut h = DMatrix::zeros(2 * l, 2 * l);
        for (d, c) in elongations(qs, qf).iter().zip(&links) {
            let s = 3.0 * d * d;
            for &(i, a) in c {
                for &(j, b) in c {
                    h[(i, j)] += s * a * b;
                }
            }
        }
        h
    };

    let sys = MultirateSystem::builder(
        DMatrix::from_diagonal(&DVector::from_column_slice(&config.masses[..l])),
        DMatrix::from_diagonal(&DVector::from_column_slice(&config.masses[l..])),
    )
    .slow_potential(value, gradient)
    .slow_hessian(hessian)
    .fast_potential(
        move |qf| 0.5 * w2 * qf.norm_squared(),
        move |qf| qf * w2,
    )
    .fast_hessian(move |qf| DMatrix::identity(qf.len(), qf.len()) * w2)
    .oscillator_stiffness(DVector::from_element(l, w2))
    .build()?;

    let e1 = DVector::from_fn(l, |i, _| if i == 0 { 1.0 } else { 0.0 });
    let x0 = sys.state_from_velocities(e1.clone(), &e1 / w2.sqrt(), &e1, &e1);
    Ok((sys, x0))
}

/// Ring of `2l` point masses in 3D. Odd masses (1, 3, …) hang on soft radial
/// springs and form the slow variables, even masses hang on stiff radial
/// springs and form the fast variables. Neighbours on the ring are joined by
/// quartic springs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpringRingConfig {
    pub l: usize,
    pub epsilon: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub radius: f64,
    pub depth: f64,
    pub g_mag: f64,
    pub masses: Vec<f64>,
}

impl Default for SpringRingConfig {
    fn default() -> Self {
        SpringRingConfig {
            l: 3,
            epsilon: 5.0,
            omega1: 2.0,
            omega2: 4000.0,
            radius: 2.0,
            depth: 2.0,
            g_mag: 9.81,
            masses: vec![2.0; 6],
        }
    }
}

impl SpringRingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l == 0 {
            return Err(Error::InvalidArgument("spring ring needs l >= 1".into()));
        }
        for (name, v) in [
            ("epsilon", self.epsilon),
            ("omega1", self.omega1),
            ("omega2", self.omega2),
            ("radius", self.radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !(self.depth.is_finite() && self.g_mag.is_finite()) {
            return Err(Error::InvalidArgument("depth and g_mag must be finite".into()));
        }
        check_masses(&self.masses, 2 * self.l)
    }

    /// Resting position of mass `i` (0-based) on the ring.
    pub fn ring_position(&self, i: usize) -> Vector3<f64> {
        let phi = i as f64 * std::f64::consts::PI / self.l as f64;
        Vector3::new(self.radius * phi.sin(), -self.radius * phi.cos(), -self.depth)
    }
}

/// Position of mass `i` (0-based) inside the stacked `[q_s; q_f]` vector.
fn ring_slot(i: usize, l: usize) -> usize {
    if i.is_multiple_of(2) {
        3 * (i / 2)
    } else {
        3 * l + 3 * (i / 2)
    }
}

fn mass_position(q: &DVector<f64>, i: usize, l: usize) -> Vector3<f64> {
    let s = ring_slot(i, l);
    Vector3::new(q[s], q[s + 1], q[s + 2])
}

/// Builds the spring ring and its standard initial state.
///
/// The masses 2..5 are displaced from the ring and masses 1..6 get the
/// standard initial velocities when `l >= 3`; otherwise all masses start at
/// rest on the ring.
pub fn build_spring_ring(config: &SpringRingConfig) -> Result<(MultirateSystem, State)> {
    config.validate()?;
    let l = config.l;
    let n = 2 * l;
    let (eps, w1, w2) = (config.epsilon, config.omega1, config.omega2);
    // gravity enters as q^T M g with g = [0, 0, -|g|] per mass
    let gravity: DVector<f64> = {
        let mut g = DVector::zeros(3 * n);
        for i in 0..n {
            g[ring_slot(i, l) + 2] = -config.g_mag * config.masses[i];
        }
        g
    };
    let stack = move |qs: &DVector<f64>, qf: &DVector<f64>| {
        let mut q = DVector::zeros(3 * n);
        q.rows_mut(0, 3 * l).copy_from(qs);
        q.rows_mut(3 * l, 3 * l).copy_from(qf);
        q
    };
    let neighbours = move |i: usize| (i, (i + 1) % n);

    let value = {
        let gravity = gravity.clone();
        move |qs: &DVector<f64>, qf: &DVector<f64>| {
            let q = stack(qs, qf);
            let ring: f64 = (0..n)
                .map(|i| {
                    let (a, b) = neighbours(i);
                    (mass_position(&q, b, l) - mass_position(&q, a, l)).norm_squared().powi(2)
                })
                .sum();
            0.5 * w1 * qs.norm_squared() + 0.25 * eps * ring + q.dot(&gravity)
        }
    };
    let gradient = {
        let gravity = gravity.clone();
        move |qs: &DVector<f64>, qf: &DVector<f64>| {
            let q = stack(qs, qf);
            let mut g = gravity.clone();
            g.rows_mut(0, 3 * l).axpy(w1, qs, 1.0);
            for i in 0..n {
                let (a, b) = neighbours(i);
                let d = mass_position(&q, b, l) - mass_position(&q, a, l);
                let f = d * (eps * d.norm_squared());
                let (sa, sb) = (ring_slot(a, l), ring_slot(b, l));
                for c in 0..3 {
                    g[sb + c] += f[c];
                    g[sa + c] -= f[c];
                }
            }
            (g.rows(0, 3 * l).into_owned(), g.rows(3 * l, 3 * l).into_owned())
        }
    };
    let hessian = move |qs: &DVector<f64>, qf: &DVector<f64>| {
        let q = stack(qs, qf);
        let mut h = DMatrix::zeros(3 * n, 3 * n);
        for i in 0..3 * l {
            h[(i, i)] = w1;
        }
        for i in 0..n {
            let (a, b) = neighbours(i);
            let d = mass_position(&q, b, l) - mass_position(&q, a, l);
            let k = (nalgebra::Matrix3::identity() * d.norm_squared() + d * d.transpose() * 2.0) * eps;
            let (sa, sb) = (ring_slot(a, l), ring_slot(b, l));
            for (r, c, s) in [(sa, sa, 1.0), (sb, sb, 1.0), (sa, sb, -1.0), (sb, sa, -1.0)] {
                let mut blk = h.view_mut((r, c), (3, 3));
                blk += k * s;
            }
        }
        h
    };

    let mass_diag = |parity: usize| {
        DVector::from_fn(3 * l, |j, _| config.masses[2 * (j / 3) + parity])
    };
    let sys = MultirateSystem::builder(
        DMatrix::from_diagonal(&mass_diag(0)),
        DMatrix::from_diagonal(&mass_diag(1)),
    )
    .slow_potential(value, gradient)
    .slow_hessian(hessian)
    .fast_potential(move |qf| 0.5 * w2 * qf.norm_squared(), move |qf| qf * w2)
    .fast_hessian(move |qf| DMatrix::identity(qf.len(), qf.len()) * w2)
    .build()?;

    let mut pos: Vec<Vector3<f64>> = (0..n).map(|i| config.ring_position(i)).collect();
    let mut vel = vec![Vector3::zeros(); n];
    if l >= 3 {
        pos[2] += Vector3::new(0.3, 0.3, 0.0);
        pos[4] += Vector3::new(0.2, -0.3, -0.3);
        pos[1] += Vector3::new(0.2, -0.2, 0.0);
        pos[3] += Vector3::new(-0.3, 0.4, 0.0);
        let u12 = (pos[0] - pos[1]).normalize();
        let u36 = (pos[2] - pos[5]).normalize();
        vel[0] = u12 * 5.0;
        vel[1] = u12 * -30.0;
        vel[2] = u36 * -5.0;
        vel[3] = Vector3::new(50.0, 40.0, -10.0);
        vel[5] = Vector3::new(50.0, 40.0, 10.0);
    }
    let mut q = DVector::zeros(3 * n);
    let mut v = DVector::zeros(3 * n);
    for i in 0..n {
        let s = ring_slot(i, l);
        q.rows_mut(s, 3).copy_from(&pos[i]);
        v.rows_mut(s, 3).copy_from(&vel[i]);
    }
    let x0 = sys.state_from_velocities(
        q.rows(0, 3 * l).into_owned(),
        q.rows(3 * l, 3 * l).into_owned(),
        &v.rows(0, 3 * l).into_owned(),
        &v.rows(3 * l, 3 * l).into_owned(),
    );
    Ok((sys, x0))
}

/// Reproducible random states around `center`: every entry is shifted by a
/// uniform offset in `[-spread, spread]`.
pub fn probe_states(center: &State, spread: f64, count: usize, seed: u64) -> Vec<State> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |v: &DVector<f64>| v.map(|x| x + rng.random_range(-spread..=spread));
    (0..count)
        .map(|_| State {
            q_slow: jitter(&center.q_slow),
            q_fast: jitter(&center.q_fast),
            p_slow: jitter(&center.p_slow),
            p_fast: jitter(&center.p_fast),
        })
        .collect()
}
