//! Finite-volume traffic reaction model (TRM) on a single road.
//!
//! Densities are stored normalized by the jam density, `u = rho / rho_max`,
//! so the update only involves the dimensionless reaction rates `c` and the
//! transfer kernel `F(u_l, u_r) = u_l (1 - u_r)`.
//!
//! Layout (0-based): a road with `n_interfaces` interfaces has
//! `n_cells = n_interfaces - 1` cells. Interface `k` sits between cell `k - 1`
//! and cell `k`; interface `0` is the upstream boundary (treated as a full
//! road) and interface `n_interfaces - 1` the downstream boundary (treated
//! as an empty road).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound (exclusive) on every reaction rate.
pub const RATE_BOUND: f64 = 0.5;

/// Cell/interface layout of the road and the detector mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadGeometry {
    n_interfaces: usize,
    dx: f64,
    observed: Vec<bool>,
    hidden: Vec<usize>,
}

impl RoadGeometry {
    /// `observed` lists the interfaces whose measurements feed the network;
    /// `hidden` lists interfaces with measurements withheld from training
    /// and used only for evaluation. The two sets must be disjoint.
    pub fn new(n_interfaces: usize, dx: f64, observed: &[usize], hidden: &[usize]) -> Result<Self> {
        if n_interfaces < 2 {
            return Err(Error::Config(format!(
                "a road needs at least 2 interfaces, got {n_interfaces}"
            )));
        }
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(Error::Config(format!("cell length must be positive, got {dx}")));
        }
        if observed.is_empty() {
            return Err(Error::Config("at least one interface must be observed".into()));
        }
        let mut mask = vec![false; n_interfaces];
        for &i in observed {
            if i >= n_interfaces {
                return Err(Error::Config(format!(
                    "observed interface {i} out of range 0..{n_interfaces}"
                )));
            }
            if mask[i] {
                return Err(Error::Config(format!("observed interface {i} listed twice")));
            }
            mask[i] = true;
        }
        let mut hidden_sorted = hidden.to_vec();
        hidden_sorted.sort_unstable();
        hidden_sorted.dedup();
        for &i in &hidden_sorted {
            if i >= n_interfaces {
                return Err(Error::Config(format!(
                    "hidden interface {i} out of range 0..{n_interfaces}"
                )));
            }
            if mask[i] {
                return Err(Error::Config(format!(
                    "interface {i} cannot be both observed and hidden"
                )));
            }
        }
        Ok(Self {
            n_interfaces,
            dx,
            observed: mask,
            hidden: hidden_sorted,
        })
    }

    pub fn n_interfaces(&self) -> usize {
        self.n_interfaces
    }

    pub fn n_cells(&self) -> usize {
        self.n_interfaces - 1
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn observed_mask(&self) -> &[bool] {
        &self.observed
    }

    /// Indices of observed interfaces, increasing.
    pub fn observed(&self) -> Vec<usize> {
        (0..self.n_interfaces).filter(|&i| self.observed[i]).collect()
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn is_observed(&self, interface: usize) -> bool {
        self.observed.get(interface).copied().unwrap_or(false)
    }

    pub fn is_hidden(&self, interface: usize) -> bool {
        self.hidden.binary_search(&interface).is_ok()
    }
}

/// Smallest integer strictly greater than `2 v_max dT / dx`.
pub fn compute_substeps(v_max: f64, dt_measure: f64, dx: f64) -> Result<usize> {
    for (name, v) in [("v_max", v_max), ("dT", dt_measure), ("dx", dx)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
    }
    let bound = 2.0 * v_max * dt_measure / dx;
    let p = bound.floor() + 1.0;
    Ok(p.max(1.0) as usize)
}

/// Discretization and physical bounds of the TRM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrmConfig {
    /// Jam density, vehicles per meter.
    pub rho_max: f64,
    /// Cell length, meters.
    pub dx: f64,
    /// Measurement period, seconds.
    pub dt_measure: f64,
    /// TRM substeps per measurement period.
    pub p_t: usize,
    /// Speed bound, meters per second.
    pub v_max: f64,
}

impl TrmConfig {
    /// Build a config; `p_t = None` picks the smallest admissible substep count.
    pub fn new(rho_max: f64, dx: f64, dt_measure: f64, v_max: f64, p_t: Option<usize>) -> Result<Self> {
        if !(rho_max > 0.0 && rho_max.is_finite()) {
            return Err(Error::Config(format!("rho_max must be positive, got {rho_max}")));
        }
        let min_p = compute_substeps(v_max, dt_measure, dx)?;
        let p_t = match p_t {
            None => min_p,
            Some(p) if p >= min_p => p,
            Some(p) => {
                return Err(Error::Config(format!(
                    "p_t = {p} violates p_t > 2 v_max dT / dx = {}; need at least {min_p}",
                    2.0 * v_max * dt_measure / dx
                )))
            }
        };
        Ok(Self {
            rho_max,
            dx,
            dt_measure,
            p_t,
            v_max,
        })
    }

    /// TRM time step `dT / p_t`.
    pub fn dt(&self) -> f64 {
        self.dt_measure / self.p_t as f64
    }

    /// Upper bound on the maximal flux, `v_max rho_max / 4`.
    pub fn f_max_bound(&self) -> f64 {
        self.v_max * self.rho_max / 4.0
    }
}

/// Outcome of a CFL check; both sides of `dt/dx < rho_max / (8 f_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CflReport {
    pub ratio: f64,
    pub limit: f64,
    pub passed: bool,
}

pub fn check_cfl(config: &TrmConfig, f_max: f64) -> CflReport {
    let ratio = config.dt() / config.dx;
    let limit = if f_max == 0.0 {
        f64::INFINITY
    } else {
        config.rho_max / (8.0 * f_max)
    };
    CflReport {
        ratio,
        limit,
        passed: ratio < limit,
    }
}

/// Vehicles per second represented by one unit of dimensionless flux.
pub fn flux_scale(config: &TrmConfig) -> f64 {
    config.rho_max * config.dx / config.dt()
}

/// Greenshields flux `4 f_max u (1 - u)` of a normalized density.
pub fn greenshields_flux(u: f64, f_max: f64) -> Result<f64> {
    check_unit(u, "density")?;
    Ok(4.0 * f_max * u * (1.0 - u))
}

/// Transfer kernel `u_left (1 - u_right)`.
pub fn numerical_flux(u_left: f64, u_right: f64) -> Result<f64> {
    check_unit(u_left, "left density")?;
    check_unit(u_right, "right density")?;
    Ok(u_left * (1.0 - u_right))
}

fn check_unit(v: f64, what: &'static str) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Domain { what, value: v })
    }
}

/// Normalized cell densities at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityState(Vec<f64>);

impl DensityState {
    pub fn new(u: Vec<f64>) -> Result<Self> {
        if u.is_empty() {
            return Err(Error::Dimension {
                context: "density state",
                expected: 1,
                actual: 0,
            });
        }
        for &v in &u {
            check_unit(v, "density")?;
        }
        Ok(Self(u))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Reaction rates at every interface for one TRM step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateVector(Vec<f64>);

impl RateVector {
    /// Rejects negative or non-finite rates, and rates at or above 1/2 as a CFL violation.
    pub fn new(c: Vec<f64>) -> Result<Self> {
        for (interface, &rate) in c.iter().enumerate() {
            if rate.is_nan() || rate < 0.0 {
                return Err(Error::Domain {
                    what: "reaction rate",
                    value: rate,
                });
            }
            if rate >= RATE_BOUND {
                return Err(Error::Cfl { interface, rate });
            }
        }
        Ok(Self(c))
    }

    pub fn zeros(n_interfaces: usize) -> Self {
        Self(vec![0.0; n_interfaces])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Dimensionless numerical fluxes at every interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxVector(Vec<f64>);

impl FluxVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Numerical fluxes at all interfaces; the boundaries use a full upstream
/// and an empty downstream ghost cell.
pub fn trm_fluxes(state: &DensityState, rates: &RateVector) -> Result<FluxVector> {
    let u = state.values();
    let c = rates.values();
    if c.len() != u.len() + 1 {
        return Err(Error::Dimension {
            context: "rate vector vs density state",
            expected: u.len() + 1,
            actual: c.len(),
        });
    }
    let n_cells = u.len();
    let mut f = Vec::with_capacity(n_cells + 1);
    f.push(c[0] * (1.0 - u[0]));
    for k in 1..n_cells {
        f.push(c[k] * (u[k - 1] * (1.0 - u[k])));
    }
    f.push(c[n_cells] * u[n_cells - 1]);
    Ok(FluxVector(f))
}

/// One TRM update `u'_j = u_j + f_j - f_{j+1}`. Returns the new state and
/// the fluxes evaluated on the old state.
pub fn trm_step(state: &DensityState, rates: &RateVector) -> Result<(DensityState, FluxVector)> {
    let fluxes = trm_fluxes(state, rates)?;
    let f = fluxes.values();
    let next: Vec<f64> = state
        .values()
        .iter()
        .enumerate()
        .map(|(j, &u)| u + f[j] - f[j + 1])
        .collect();
    Ok((DensityState::new(next)?, fluxes))
}

/// Apply `trm_step` once per rate vector. The k-th density is the state
/// after step k; the k-th flux vector is evaluated before it.
pub fn trm_rollout(initial: &DensityState, rate_seq: &[RateVector]) -> Result<(Vec<DensityState>, Vec<FluxVector>)> {
    let mut densities = Vec::with_capacity(rate_seq.len());
    let mut fluxes = Vec::with_capacity(rate_seq.len());
    let mut state = initial.clone();
    for (step, rates) in rate_seq.iter().enumerate() {
        let (next, f) = trm_step(&state, rates).map_err(|e| Error::AtStep {
            step,
            source: Box::new(e),
        })?;
        fluxes.push(f);
        densities.push(next.clone());
        state = next;
    }
    Ok((densities, fluxes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn state(u: &[f64]) -> DensityState {
        DensityState::new(u.to_vec()).unwrap()
    }

    fn rates(c: &[f64]) -> RateVector {
        RateVector::new(c.to_vec()).unwrap()
    }

    #[test]
    fn greenshields_examples() {
        assert_eq!(greenshields_flux(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(greenshields_flux(1.0, 1.0).unwrap(), 0.0);
        assert_eq!(greenshields_flux(0.5, 2.0).unwrap(), 2.0);
        assert!(matches!(greenshields_flux(1.2, 1.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn numerical_flux_examples() {
        assert_eq!(numerical_flux(0.0, 0.7).unwrap(), 0.0);
        assert_eq!(numerical_flux(1.0, 0.0).unwrap(), 1.0);
        assert_eq!(numerical_flux(0.5, 0.5).unwrap(), 0.25);
        assert!(numerical_flux(-0.1, 0.5).is_err());
        assert!(numerical_flux(0.1, 1.5).is_err());
    }

    #[test]
    fn fluxes_single_cell() {
        let f = trm_fluxes(&state(&[0.5]), &rates(&[0.4, 0.2])).unwrap();
        assert_abs_diff_eq!(f.values()[0], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(f.values()[1], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn fluxes_zero_rates_and_full_road() {
        let f = trm_fluxes(&state(&[0.3, 0.9, 0.1]), &RateVector::zeros(4)).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
        let f = trm_fluxes(&state(&[1.0, 1.0, 1.0]), &rates(&[0.1, 0.4, 0.3, 0.2])).unwrap();
        assert_eq!(&f.values()[1..3], &[0.0, 0.0]);
    }

    #[test]
    fn fluxes_dimension_mismatch() {
        let err = trm_fluxes(&state(&[0.3, 0.2]), &rates(&[0.1, 0.1])).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn step_examples() {
        let (u, _) = trm_step(&state(&[0.5]), &rates(&[0.4, 0.2])).unwrap();
        assert_abs_diff_eq!(u.values()[0], 0.6, epsilon = 1e-15);

        let s = state(&[0.2, 0.7]);
        let (u, _) = trm_step(&s, &RateVector::zeros(3)).unwrap();
        assert_eq!(u, s);

        let (u, f) = trm_step(&state(&[0.0, 0.0, 0.0]), &rates(&[0.3, 0.0, 0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(u.values()[0], 0.3, epsilon = 1e-15);
        assert_eq!(&u.values()[1..], &[0.0, 0.0]);
        assert_eq!(f.values(), &[0.3, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn rates_at_half_are_a_cfl_error() {
        assert!(matches!(
            RateVector::new(vec![0.1, 0.5]),
            Err(Error::Cfl { interface: 1, .. })
        ));
        assert!(matches!(RateVector::new(vec![-0.1, 0.2]), Err(Error::Domain { .. })));
    }

    #[test]
    fn rollout_examples() {
        let (d, f) = trm_rollout(&state(&[0.5]), &[]).unwrap();
        assert!(d.is_empty() && f.is_empty());

        let s = state(&[0.1, 0.4]);
        let (d, f) = trm_rollout(&s, &vec![RateVector::zeros(3); 3]).unwrap();
        assert!(d.iter().all(|x| x == &s));
        assert!(f.iter().all(|x| x.values().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn rollout_two_step_trace() {
        let seq = vec![rates(&[0.4, 0.2]), rates(&[0.4, 0.2])];
        let (d, f) = trm_rollout(&state(&[0.5]), &seq).unwrap();
        // independent scalar recomputation
        let mut u = 0.5_f64;
        let mut expected = Vec::new();
        for _ in 0..2 {
            let fin = 0.4 * (1.0 - u);
            let fout = 0.2 * u;
            expected.push((fin, fout));
            u = u + fin - fout;
        }
        assert_abs_diff_eq!(d[0].values()[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1].values()[0], 0.64, epsilon = 1e-15);
        assert_abs_diff_eq!(f[1].values()[0], 0.16, epsilon = 1e-15);
        assert_abs_diff_eq!(f[1].values()[1], 0.12, epsilon = 1e-15);
        for (k, (fin, fout)) in expected.iter().enumerate() {
            assert_eq!(f[k].values(), &[*fin, *fout]);
        }
        assert_eq!(d[1].values()[0], u);
    }

    #[test]
    fn substep_examples() {
        assert_eq!(compute_substeps(130.0 / 3.6, 60.0, 150.0).unwrap(), 29);
        assert_eq!(compute_substeps(1.0, 1.0, 4.0).unwrap(), 1);
        assert_eq!(compute_substeps(1.0, 1.0, 2.0).unwrap(), 2);
        assert!(compute_substeps(0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn config_rejects_too_few_substeps() {
        assert!(TrmConfig::new(0.2, 150.0, 60.0, 130.0 / 3.6, Some(28)).is_err());
        let cfg = TrmConfig::new(0.2, 150.0, 60.0, 130.0 / 3.6, None).unwrap();
        assert_eq!(cfg.p_t, 29);
        assert!(check_cfl(&cfg, cfg.f_max_bound()).passed);
    }

    #[test]
    fn cfl_examples() {
        let cfg = TrmConfig {
            rho_max: 1.0,
            dx: 1.0,
            dt_measure: 0.1,
            p_t: 1,
            v_max: 1.0,
        };
        assert!(check_cfl(&cfg, 0.0).passed);
        let r = check_cfl(&cfg, 1.0);
        assert!(r.passed);
        assert_abs_diff_eq!(r.limit, 0.125);
        // dt/dx = 0.125 exactly
        let edge = TrmConfig {
            dt_measure: 0.125,
            ..cfg
        };
        assert!(!check_cfl(&edge, 1.0).passed);
    }

    #[test]
    fn flux_scale_examples() {
        let unit = TrmConfig {
            rho_max: 1.0,
            dx: 1.0,
            dt_measure: 1.0,
            p_t: 1,
            v_max: 0.1,
        };
        assert_eq!(flux_scale(&unit), 1.0);
        let a12 = TrmConfig::new(0.2, 150.0, 60.0, 130.0 / 3.6, None).unwrap();
        assert_abs_diff_eq!(flux_scale(&a12), 14.5, epsilon = 1e-12);
        let doubled = TrmConfig { dx: 2.0, ..unit };
        assert_eq!(flux_scale(&doubled), 2.0);
    }

    #[test]
    fn geometry_validation() {
        let g = RoadGeometry::new(11, 150.0, &[0, 4, 6, 10], &[3, 7]).unwrap();
        assert_eq!(g.n_cells(), 10);
        assert_eq!(g.n_observed(), 4);
        assert_eq!(g.observed(), vec![0, 4, 6, 10]);
        assert!(g.is_hidden(7) && !g.is_hidden(4));
        assert!(RoadGeometry::new(1, 150.0, &[0], &[]).is_err());
        assert!(RoadGeometry::new(3, 0.0, &[0], &[]).is_err());
        assert!(RoadGeometry::new(3, 1.0, &[], &[]).is_err());
        assert!(RoadGeometry::new(3, 1.0, &[0], &[0]).is_err());
        assert!(RoadGeometry::new(3, 1.0, &[0], &[5]).is_err());
    }
}
