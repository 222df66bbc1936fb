//! Dispersion relations, band folding, group velocities, the pulse transfer
//! amplitude, and the abstract two-band mirror model.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{EchoError, Result};
use crate::lattice::LatticeSpec;

const BZ_TOL: f64 = 1e-9;

/// Unfolded dispersion E(k) = E0 - sum_r J_r cos(r k ell) over the stencil.
pub fn dispersion_unfolded(spec: &LatticeSpec, k: &[f64]) -> Result<f64> {
    check_rank(spec, k)?;
    let edge = PI / spec.spacing;
    for &kx in k {
        if kx.abs() > edge + BZ_TOL {
            return Err(EchoError::Domain(format!(
                "momentum {kx} outside Brillouin zone (|k| <= {edge})"
            )));
        }
    }
    let mut e = spec.base_energy;
    for h in &spec.hoppings {
        e -= h.amplitude * (h.order as f64 * k[h.axis] * spec.spacing).cos();
    }
    Ok(e)
}

/// Off-diagonal hopping form J(k): odd-order terms, sum_axes J_r cos(r k ell).
pub fn hopping_form(spec: &LatticeSpec, k: &[f64]) -> f64 {
    spec.hoppings
        .iter()
        .filter(|h| h.order % 2 == 1)
        .map(|h| h.amplitude * (h.order as f64 * k[h.axis] * spec.spacing).cos())
        .sum()
}

/// Diagonal shift from even-order neighbors, which fold onto the diagonal
/// and move both branches together.
fn even_order_shift(spec: &LatticeSpec, k: &[f64]) -> f64 {
    -spec
        .hoppings
        .iter()
        .filter(|h| h.order % 2 == 0)
        .map(|h| h.amplitude * (h.order as f64 * k[h.axis] * spec.spacing).cos())
        .sum::<f64>()
}

/// True if `k` lies in the reduced Brillouin zone: 1D |k| <= pi/(2 ell),
/// 2D diamond |kx| + |ky| <= pi/ell.
pub fn in_reduced_bz(spec: &LatticeSpec, k: &[f64]) -> bool {
    match k.len() {
        1 => k[0].abs() <= PI / (2.0 * spec.spacing) + BZ_TOL,
        2 => k[0].abs() + k[1].abs() <= PI / spec.spacing + BZ_TOL,
        _ => false,
    }
}

/// Folded two-branch dispersion with staggered strength `m`:
/// E0 + D(k) -+ sqrt(m^2 + J(k)^2), returned as (lower, upper).
pub fn dispersion_folded(spec: &LatticeSpec, m: f64, k: &[f64]) -> Result<(f64, f64)> {
    check_rank(spec, k)?;
    if !in_reduced_bz(spec, k) {
        return Err(EchoError::Domain(format!(
            "momentum {k:?} outside the reduced Brillouin zone"
        )));
    }
    let j = hopping_form(spec, k);
    let mid = spec.base_energy + even_order_shift(spec, k);
    let root = (m * m + j * j).sqrt();
    Ok((mid - root, mid + root))
}

/// Analytic group velocity of the unfolded band, one component per axis.
pub fn group_velocity_unfolded(spec: &LatticeSpec, k: &[f64]) -> Result<Vec<f64>> {
    check_rank(spec, k)?;
    let ell = spec.spacing;
    let mut v = vec![0.0; k.len()];
    for h in &spec.hoppings {
        let r = h.order as f64;
        v[h.axis] += h.amplitude * r * ell * (r * k[h.axis] * ell).sin();
    }
    Ok(v)
}

/// Analytic group velocities of the folded pair, (lower, upper).
pub fn group_velocity_folded(
    spec: &LatticeSpec,
    m: f64,
    k: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_rank(spec, k)?;
    let ell = spec.spacing;
    let j = hopping_form(spec, k);
    let root = (m * m + j * j).sqrt();
    let mut lower = vec![0.0; k.len()];
    let mut upper = vec![0.0; k.len()];
    for h in &spec.hoppings {
        let r = h.order as f64;
        let s = h.amplitude * r * ell * (r * k[h.axis] * ell).sin();
        if h.order % 2 == 0 {
            // diagonal part, common to both branches
            lower[h.axis] += s;
            upper[h.axis] += s;
        } else if root > 0.0 {
            let dj = -s;
            lower[h.axis] -= j * dj / root;
            upper[h.axis] += j * dj / root;
        }
    }
    Ok((lower, upper))
}

/// Central-difference group velocity on a tabulated band; one-sided at the edges.
pub fn group_velocity_samples(k_grid: &[f64], energies: &[f64]) -> Vec<f64> {
    let n = k_grid.len();
    assert_eq!(n, energies.len());
    let mut v = vec![0.0; n];
    for i in 0..n {
        let (a, b) = if i == 0 {
            (0, 1.min(n - 1))
        } else if i == n - 1 {
            (n - 2, n - 1)
        } else {
            (i - 1, i + 1)
        };
        v[i] = (energies[b] - energies[a]) / (k_grid[b] - k_grid[a]);
    }
    v
}

/// Amplitudes of a staggered pulse of strength `m` and duration `delta_t`
/// acting on one k-mode with hopping form `j_of_k`, in the free band basis
/// (lower, upper). Returns (alpha stay amplitude, beta transfer amplitude):
/// beta = -i m/E~ sin(E~ dT) with E~ = sqrt(m^2 + J(k)^2).
pub fn transfer_amplitude(j_of_k: f64, m: f64, delta_t: f64) -> (Complex64, Complex64) {
    let etil = (m * m + j_of_k * j_of_k).sqrt();
    if etil == 0.0 {
        return (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
    }
    let theta = etil * delta_t;
    let alpha = Complex64::new(theta.cos(), j_of_k / etil * theta.sin());
    let beta = Complex64::new(0.0, -m / etil * theta.sin());
    (alpha, beta)
}

/// Sampled folded dispersion over the reduced Brillouin zone.
#[derive(Debug, Clone)]
pub struct BandStructure {
    /// Momentum points, one coordinate vector per sample.
    pub k_grid: Vec<Vec<f64>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Analytic group velocities per axis.
    pub v_lower: Vec<Vec<f64>>,
    pub v_upper: Vec<Vec<f64>>,
    /// min_k (upper - lower).
    pub gap: f64,
}

/// Sample the folded pair. 1D uses a uniform `n_points` grid on
/// (-pi/2ell, pi/2ell], zone-edge inclusive on the positive side; 2D uses the
/// supercell reciprocal grid determined by the lattice extents.
pub fn band_structure(spec: &LatticeSpec, m: f64, n_points: usize) -> Result<BandStructure> {
    let k_grid: Vec<Vec<f64>> = match spec.dimension() {
        1 => {
            if n_points == 0 {
                return Err(EchoError::InvalidInput("need at least one k-point".into()));
            }
            let edge = PI / (2.0 * spec.spacing);
            (1..=n_points)
                .map(|j| vec![-edge + 2.0 * edge * j as f64 / n_points as f64])
                .collect()
        }
        _ => reduced_pairs(spec)?
            .into_iter()
            .map(|p| p.k)
            .collect(),
    };
    let mut lower = Vec::with_capacity(k_grid.len());
    let mut upper = Vec::with_capacity(k_grid.len());
    let mut v_lower = Vec::with_capacity(k_grid.len());
    let mut v_upper = Vec::with_capacity(k_grid.len());
    for k in &k_grid {
        let (lo, up) = dispersion_folded(spec, m, k)?;
        let (vl, vu) = group_velocity_folded(spec, m, k)?;
        lower.push(lo);
        upper.push(up);
        v_lower.push(vl);
        v_upper.push(vu);
    }
    let gap = lower
        .iter()
        .zip(upper.iter())
        .map(|(l, u)| u - l)
        .fold(f64::INFINITY, f64::min);
    Ok(BandStructure {
        k_grid,
        lower,
        upper,
        v_lower,
        v_upper,
        gap,
    })
}

/// One momentum pair (k, k + Q) of a periodic lattice, Q the folding vector
/// (pi/ell per axis). `index` is the full-grid flat index of the reduced-zone
/// representative, `partner` that of k + Q.
#[derive(Debug, Clone)]
pub struct MomentumPair {
    pub index: usize,
    pub partner: usize,
    /// Momentum of the representative, in the reduced Brillouin zone.
    pub k: Vec<f64>,
}

/// Momentum of full-grid index `m` per axis, mapped into (-pi/ell, pi/ell].
pub fn grid_momentum(spec: &LatticeSpec, flat: usize) -> Vec<f64> {
    let coord = spec.site_coord(flat);
    coord
        .iter()
        .zip(spec.extents.iter())
        .map(|(&m, &l)| {
            let h = l / 2;
            let signed = if m > h { m as isize - l as isize } else { m as isize };
            2.0 * PI * signed as f64 / (l as f64 * spec.spacing)
        })
        .collect()
}

/// Full-grid flat index of k + Q (shift by extent/2 along each axis).
pub fn folding_partner(spec: &LatticeSpec, flat: usize) -> usize {
    let coord = spec.site_coord(flat);
    let shifted: Vec<usize> = coord
        .iter()
        .zip(spec.extents.iter())
        .map(|(&c, &l)| (c + l / 2) % l)
        .collect();
    spec.site_index(&shifted).unwrap()
}

/// Enumerate each momentum pair once, with the reduced-zone member as
/// representative. Requires even extents. Yields num_sites/2 pairs in
/// ascending order of the representative index.
pub fn reduced_pairs(spec: &LatticeSpec) -> Result<Vec<MomentumPair>> {
    if spec.extents.iter().any(|&l| l % 2 != 0) {
        return Err(EchoError::InvalidInput(
            "momentum folding requires even extents".into(),
        ));
    }
    let edge = PI / spec.spacing;
    let mut pairs = Vec::with_capacity(spec.num_sites() / 2);
    for flat in 0..spec.num_sites() {
        let partner = folding_partner(spec, flat);
        let k = grid_momentum(spec, flat);
        let kp = grid_momentum(spec, partner);
        let s = |k: &[f64]| k.iter().map(|x| x.abs()).sum::<f64>();
        let (sk, sp) = (s(&k), s(&kp));
        let take = if (sk - sp).abs() > BZ_TOL {
            // interior: exactly one member has |k|_1 below the fold line
            if spec.dimension() == 1 {
                sk < edge / 2.0
            } else {
                sk < edge
            }
        } else {
            // zone boundary: both on the fold line, break the tie
            // lexicographically toward the positive side
            k > kp
        };
        if take {
            pairs.push(MomentumPair {
                index: flat,
                partner,
                k,
            });
        }
    }
    debug_assert_eq!(pairs.len(), spec.num_sites() / 2);
    Ok(pairs)
}

fn check_rank(spec: &LatticeSpec, k: &[f64]) -> Result<()> {
    if k.len() != spec.dimension() {
        return Err(EchoError::Domain(format!(
            "momentum rank {} does not match lattice dimension {}",
            k.len(),
            spec.dimension()
        )));
    }
    Ok(())
}

/// Abstract two-band mirror model: a tabulated band E1(k) and its partner
/// E2(k) = delta_E - lambda E1(k), derived on the fly.
#[derive(Debug, Clone)]
pub struct TwoBandModel {
    pub e1_samples: Vec<f64>,
    pub delta_e: f64,
    pub lambda: f64,
}

impl TwoBandModel {
    pub fn new(e1_samples: Vec<f64>, delta_e: f64, lambda: f64) -> Result<Self> {
        if lambda <= 0.0 {
            return Err(EchoError::InvalidInput("lambda must be positive".into()));
        }
        if e1_samples.is_empty() {
            return Err(EchoError::InvalidInput("empty band table".into()));
        }
        Ok(TwoBandModel {
            e1_samples,
            delta_e,
            lambda,
        })
    }

    pub fn e1(&self, i: usize) -> f64 {
        self.e1_samples[i]
    }

    pub fn e2(&self, i: usize) -> f64 {
        self.delta_e - self.lambda * self.e1_samples[i]
    }
}

/// A band-population swap event: at `time`, mix the two band amplitudes with
/// amplitude-level `fraction` (1 = full swap, 0 = no-op).
#[derive(Debug, Clone, Copy)]
pub struct SwapEvent {
    pub time: f64,
    pub fraction: f64,
}

/// Time-sampled record of a two-band model run.
#[derive(Debug, Clone)]
pub struct TwoBandTrajectory {
    pub times: Vec<f64>,
    /// Normalized modulus of the spatial-envelope overlap with the initial packet.
    pub overlap: Vec<f64>,
    pub p_lower: Vec<f64>,
    pub p_upper: Vec<f64>,
}

/// Evolve per-k band amplitudes under the two-band model with swap events.
/// `psi_k` populates band 1 at t = 0. Each k-mode picks up the phase
/// exp(-i E_b t) of its current band; swaps rotate (a1, a2) by the given
/// amplitude fraction, conserving k and norm.
pub fn twoband_evolve(
    model: &TwoBandModel,
    psi_k: &[Complex64],
    schedule: &[SwapEvent],
    t_end: f64,
    sample_dt: f64,
) -> Result<TwoBandTrajectory> {
    let n = model.e1_samples.len();
    if psi_k.len() != n {
        return Err(EchoError::InvalidInput(
            "amplitude count does not match band table".into(),
        ));
    }
    if sample_dt <= 0.0 || t_end < 0.0 {
        return Err(EchoError::InvalidInput("bad sampling window".into()));
    }
    for w in schedule.windows(2) {
        if w[1].time < w[0].time {
            return Err(EchoError::InvalidInput("swap schedule not sorted".into()));
        }
    }
    for ev in schedule {
        if !(0.0..=1.0).contains(&ev.fraction) {
            return Err(EchoError::InvalidInput(
                "swap fraction must lie in [0, 1]".into(),
            ));
        }
    }

    let mut a1: Vec<Complex64> = psi_k.to_vec();
    let mut a2: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n];
    let reference: Vec<Complex64> = psi_k.to_vec();
    let ref_norm: f64 = reference.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if ref_norm == 0.0 {
        return Err(EchoError::InvalidInput("zero initial packet".into()));
    }

    let advance = |a1: &mut [Complex64], a2: &mut [Complex64], dt: f64| {
        for i in 0..n {
            a1[i] *= Complex64::from_polar(1.0, -model.e1(i) * dt);
            a2[i] *= Complex64::from_polar(1.0, -model.e2(i) * dt);
        }
    };
    let swap = |a1: &mut [Complex64], a2: &mut [Complex64], f: f64| {
        let c = (1.0 - f * f).max(0.0).sqrt();
        for i in 0..n {
            let (x, y) = (a1[i], a2[i]);
            a1[i] = c * x + f * y;
            a2[i] = -f * x + c * y;
        }
    };

    let n_samples = (t_end / sample_dt).floor() as usize + 1;
    let mut traj = TwoBandTrajectory {
        times: Vec::with_capacity(n_samples),
        overlap: Vec::with_capacity(n_samples),
        p_lower: Vec::with_capacity(n_samples),
        p_upper: Vec::with_capacity(n_samples),
    };

    let mut t_cur = 0.0;
    let mut next_event = 0usize;
    for s in 0..n_samples {
        let t = s as f64 * sample_dt;
        while next_event < schedule.len() && schedule[next_event].time <= t + 1e-12 {
            let ev = schedule[next_event];
            advance(&mut a1, &mut a2, ev.time - t_cur);
            t_cur = ev.time;
            swap(&mut a1, &mut a2, ev.fraction);
            next_event += 1;
        }
        advance(&mut a1, &mut a2, t - t_cur);
        t_cur = t;

        let mut dot = Complex64::new(0.0, 0.0);
        let mut env_norm2 = 0.0;
        let mut p1 = 0.0;
        let mut p2 = 0.0;
        for i in 0..n {
            let env = a1[i] + a2[i];
            dot += reference[i].conj() * env;
            env_norm2 += env.norm_sqr();
            p1 += a1[i].norm_sqr();
            p2 += a2[i].norm_sqr();
        }
        let env_norm = env_norm2.sqrt();
        traj.times.push(t);
        traj.overlap.push(if env_norm > 0.0 {
            dot.norm() / (ref_norm * env_norm)
        } else {
            0.0
        });
        traj.p_lower.push(p1);
        traj.p_upper.push(p2);
    }
    Ok(traj)
}
