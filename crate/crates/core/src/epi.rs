//! Discrete-time SIR and SEIR simulators in population-normalized form
//! (the total population is folded into `beta`).
//!
//! The simulators never clamp: for parameters outside the stable regime the
//! compartments can go negative, which the fitting code guards against.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StelarError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirConfig {
    pub s0: f64,
    pub i0: f64,
    pub beta: f64,
    pub gamma: f64,
    pub horizon: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeirConfig {
    pub s0: f64,
    pub e0: f64,
    pub i0: f64,
    pub beta: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub horizon: usize,
}

/// Compartment values for `t = 0..=L` and new infections `C(t)` for
/// `t = 1..=L` (stored at index `t - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct EpiTrajectory {
    pub susceptible: Vec<f64>,
    pub exposed: Option<Vec<f64>>,
    pub infected: Vec<f64>,
    pub recovered: Vec<f64>,
    pub new_infections: Vec<f64>,
}

impl EpiTrajectory {
    /// Total population at step `t`.
    pub fn total(&self, t: usize) -> f64 {
        let e = self.exposed.as_ref().map_or(0.0, |e| e[t]);
        self.susceptible[t] + e + self.infected[t] + self.recovered[t]
    }
}

fn check_nonneg(fields: &[(&str, f64)], horizon: usize) -> Result<()> {
    for (name, v) in fields {
        if !v.is_finite() || *v < 0.0 {
            return Err(StelarError::usage(format!(
                "{name} must be finite and nonnegative, got {v}"
            )));
        }
    }
    if horizon == 0 {
        return Err(StelarError::usage("simulation horizon must be >= 1"));
    }
    Ok(())
}

impl SirConfig {
    pub fn validate(&self) -> Result<()> {
        check_nonneg(
            &[
                ("s0", self.s0),
                ("i0", self.i0),
                ("beta", self.beta),
                ("gamma", self.gamma),
            ],
            self.horizon,
        )
    }
}

impl SeirConfig {
    pub fn validate(&self) -> Result<()> {
        check_nonneg(
            &[
                ("s0", self.s0),
                ("e0", self.e0),
                ("i0", self.i0),
                ("beta", self.beta),
                ("sigma", self.sigma),
                ("gamma", self.gamma),
            ],
            self.horizon,
        )
    }
}

pub fn sir_simulate(cfg: &SirConfig) -> Result<EpiTrajectory> {
    cfg.validate()?;
    let l = cfg.horizon;
    let mut s = Vec::with_capacity(l + 1);
    let mut i = Vec::with_capacity(l + 1);
    let mut r = Vec::with_capacity(l + 1);
    let mut c = Vec::with_capacity(l);
    s.push(cfg.s0);
    i.push(cfg.i0);
    r.push(0.0);
    for t in 1..=l {
        let (sp, ip, rp) = (s[t - 1], i[t - 1], r[t - 1]);
        let infections = cfg.beta * sp * ip;
        let recoveries = cfg.gamma * ip;
        s.push(sp - infections);
        i.push(ip + infections - recoveries);
        r.push(rp + recoveries);
        c.push(infections);
    }
    Ok(EpiTrajectory {
        susceptible: s,
        exposed: None,
        infected: i,
        recovered: r,
        new_infections: c,
    })
}

/// SEIR: new infections enter the exposed pool and become infectious at
/// rate `sigma`.
pub fn seir_simulate(cfg: &SeirConfig) -> Result<EpiTrajectory> {
    cfg.validate()?;
    let l = cfg.horizon;
    let mut s = Vec::with_capacity(l + 1);
    let mut e = Vec::with_capacity(l + 1);
    let mut i = Vec::with_capacity(l + 1);
    let mut r = Vec::with_capacity(l + 1);
    let mut c = Vec::with_capacity(l);
    s.push(cfg.s0);
    e.push(cfg.e0);
    i.push(cfg.i0);
    r.push(0.0);
    for t in 1..=l {
        let (sp, ep, ip, rp) = (s[t - 1], e[t - 1], i[t - 1], r[t - 1]);
        let infections = cfg.beta * sp * ip;
        let onsets = cfg.sigma * ep;
        let recoveries = cfg.gamma * ip;
        s.push(sp - infections);
        e.push(ep + infections - onsets);
        i.push(ip + onsets - recoveries);
        r.push(rp + recoveries);
        c.push(infections);
    }
    Ok(EpiTrajectory {
        susceptible: s,
        exposed: Some(e),
        infected: i,
        recovered: r,
        new_infections: c,
    })
}

/// `C(1..=L)` of the SIR recursion.
pub fn new_infections_curve(cfg: &SirConfig) -> Result<Vec<f64>> {
    Ok(sir_simulate(cfg)?.new_infections)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1(horizon: usize) -> SirConfig {
        SirConfig {
            s0: 0.95,
            i0: 0.05,
            beta: 0.4,
            gamma: 0.1,
            horizon,
        }
    }

    #[test]
    fn no_infected_means_no_dynamics() {
        let traj = sir_simulate(&SirConfig {
            i0: 0.0,
            ..fig1(20)
        })
        .unwrap();
        assert!(traj.susceptible.iter().all(|s| *s == 0.95));
        assert!(traj.infected.iter().all(|i| *i == 0.0));
        assert!(traj.new_infections.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn first_step_by_hand() {
        let traj = sir_simulate(&fig1(50)).unwrap();
        assert!((traj.new_infections[0] - 0.019).abs() < 1e-15);
        assert!((traj.susceptible[1] - 0.931).abs() < 1e-15);
        assert!((traj.infected[1] - 0.064).abs() < 1e-15);
        assert!((traj.recovered[1] - 0.005).abs() < 1e-15);
        assert_eq!(traj.new_infections.len(), 50);
        assert_eq!(new_infections_curve(&fig1(50)).unwrap(), traj.new_infections);
    }

    #[test]
    fn zero_beta_is_geometric_decay() {
        let traj = sir_simulate(&SirConfig {
            beta: 0.0,
            ..fig1(30)
        })
        .unwrap();
        for (t, i) in traj.infected.iter().enumerate() {
            assert!((i - 0.9f64.powi(t as i32) * 0.05).abs() < 1e-15);
        }
        assert!(traj.new_infections.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn seir_constant_without_seed_infection() {
        let traj = seir_simulate(&SeirConfig {
            s0: 0.9,
            e0: 0.0,
            i0: 0.0,
            beta: 0.5,
            sigma: 0.3,
            gamma: 0.2,
            horizon: 15,
        })
        .unwrap();
        assert!(traj.susceptible.iter().all(|s| *s == 0.9));
        assert!(traj.exposed.unwrap().iter().all(|e| *e == 0.0));
        assert!(traj.infected.iter().all(|i| *i == 0.0));
    }

    #[test]
    fn seir_full_onset_step() {
        let traj = seir_simulate(&SeirConfig {
            s0: 0.9,
            e0: 0.1,
            i0: 0.0,
            beta: 0.5,
            sigma: 1.0,
            gamma: 0.2,
            horizon: 3,
        })
        .unwrap();
        assert!((traj.infected[1] - 0.1).abs() < 1e-15);
        assert_eq!(traj.exposed.as_ref().unwrap()[1], 0.0);
    }

    #[test]
    fn seir_zero_sigma_decouples() {
        let traj = seir_simulate(&SeirConfig {
            s0: 0.8,
            e0: 0.1,
            i0: 0.1,
            beta: 0.5,
            sigma: 0.0,
            gamma: 0.25,
            horizon: 10,
        })
        .unwrap();
        let e = traj.exposed.as_ref().unwrap();
        for t in 1..=10 {
            assert!(e[t] >= e[t - 1]);
            assert!((traj.infected[t] - 0.75f64.powi(t as i32) * 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn conservation_and_monotonicity() {
        let sir = sir_simulate(&fig1(500)).unwrap();
        let seir = seir_simulate(&SeirConfig {
            s0: 0.9,
            e0: 0.05,
            i0: 0.05,
            beta: 0.6,
            sigma: 0.2,
            gamma: 0.1,
            horizon: 500,
        })
        .unwrap();
        for traj in [&sir, &seir] {
            let n0 = traj.total(0);
            for t in 1..=500 {
                assert!((traj.total(t) - n0).abs() < 1e-10);
                assert!(traj.susceptible[t] <= traj.susceptible[t - 1]);
                assert!(traj.recovered[t] >= traj.recovered[t - 1]);
                assert!(traj.new_infections[t - 1] >= 0.0);
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(sir_simulate(&SirConfig {
            beta: -0.1,
            ..fig1(5)
        })
        .is_err());
        assert!(sir_simulate(&fig1(0)).is_err());
    }
}
