//! Random network realizations for flat and frequency-selective MIMO
//! interference channels.
//!
//! Small-scale fading is i.i.d. circularly-symmetric complex Gaussian and the
//! large-scale path-loss scales the entry *variance* as `d^(-gamma)`. All
//! generators are pure functions of their inputs and seed.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Converts a dB quantity to linear scale.
pub fn db_to_linear(x_db: f64) -> f64 {
    10f64.powf(x_db / 10.0)
}

/// Geometry and antenna configuration of a network of transmit-receive pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub tx_antennas: Vec<usize>,
    pub rx_antennas: Vec<usize>,
    pub direct_distance: Vec<f64>,
    /// `cross_distance[r][q]`: distance from transmitter `r` to receiver `q`.
    pub cross_distance: Vec<Vec<f64>>,
    pub pathloss_exponent: f64,
}

impl Topology {
    /// All users share one antenna configuration, one direct distance and one
    /// cross distance.
    pub fn symmetric(
        users: usize,
        tx_antennas: usize,
        rx_antennas: usize,
        direct_distance: f64,
        cross_distance: f64,
        pathloss_exponent: f64,
    ) -> Self {
        let cross = (0..users)
            .map(|r| {
                (0..users)
                    .map(|q| if r == q { direct_distance } else { cross_distance })
                    .collect()
            })
            .collect();
        Self {
            tx_antennas: vec![tx_antennas; users],
            rx_antennas: vec![rx_antennas; users],
            direct_distance: vec![direct_distance; users],
            cross_distance: cross,
            pathloss_exponent,
        }
    }

    pub fn users(&self) -> usize {
        self.tx_antennas.len()
    }

    /// Variance of each channel entry between transmitter `r` and receiver `q`.
    pub fn link_variance(&self, r: usize, q: usize) -> f64 {
        self.cross_distance[r][q].powf(-self.pathloss_exponent)
    }

    pub fn validate(&self) -> Result<()> {
        let users = self.users();
        if users == 0 {
            return Err(Error::Topology("at least one user is required".into()));
        }
        if self.rx_antennas.len() != users || self.direct_distance.len() != users {
            return Err(Error::Topology("per-user vectors differ in length".into()));
        }
        if self.tx_antennas.iter().chain(&self.rx_antennas).any(|&n| n == 0) {
            return Err(Error::Topology("antenna counts must be >= 1".into()));
        }
        if !(self.pathloss_exponent > 0.0 && self.pathloss_exponent.is_finite()) {
            return Err(Error::Topology(format!(
                "path-loss exponent must be positive, got {}",
                self.pathloss_exponent
            )));
        }
        if self.cross_distance.len() != users || self.cross_distance.iter().any(|row| row.len() != users) {
            return Err(Error::Topology("cross distance matrix must be Q x Q".into()));
        }
        for (q, &d) in self.direct_distance.iter().enumerate() {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Topology(format!("direct distance of user {q} must be positive")));
            }
            if self.cross_distance[q][q] != d {
                return Err(Error::Topology(format!(
                    "cross_distance[{q}][{q}] must equal the direct distance"
                )));
            }
        }
        for row in &self.cross_distance {
            if row.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
                return Err(Error::Topology("all distances must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One channel realization: every `H_rq` on every carrier plus the power
/// constraints of each user.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInstance {
    pub topology: Topology,
    pub carriers: usize,
    /// Flattened `[carrier][r][q]`, each `rx_antennas[q] x tx_antennas[r]`.
    channels: Vec<CMatrix>,
    pub noise_power: Vec<f64>,
    pub budget: Vec<f64>,
    /// Optional per-dimension caps, `caps[q]` has `carriers * tx_antennas[q]` entries.
    pub caps: Option<Vec<Vec<f64>>>,
}

impl NetworkInstance {
    /// Assembles an instance from explicit matrices, `channels[k][r][q]`.
    /// Budgets default to 1.
    pub fn from_channels(
        topology: Topology,
        channels: Vec<Vec<Vec<CMatrix>>>,
        noise_power: Vec<f64>,
    ) -> Result<Self> {
        topology.validate()?;
        let users = topology.users();
        let carriers = channels.len();
        let mut flat = Vec::with_capacity(carriers * users * users);
        for per_carrier in channels {
            if per_carrier.len() != users {
                return Err(Error::Instance("channel list must be indexed [carrier][r][q]".into()));
            }
            for row in per_carrier {
                if row.len() != users {
                    return Err(Error::Instance("channel list must be indexed [carrier][r][q]".into()));
                }
                flat.extend(row);
            }
        }
        let inst = Self {
            topology,
            carriers,
            channels: flat,
            noise_power,
            budget: vec![1.0; users],
            caps: None,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn users(&self) -> usize {
        self.topology.users()
    }

    /// `H_rq` on carrier `k`.
    pub fn channel(&self, carrier: usize, r: usize, q: usize) -> &CMatrix {
        let users = self.users();
        &self.channels[(carrier * users + r) * users + q]
    }

    /// Number of power-allocation dimensions owned by user `q`.
    pub fn user_dims(&self, q: usize) -> usize {
        self.carriers * self.topology.tx_antennas[q]
    }

    pub fn with_budgets(mut self, budget: Vec<f64>) -> Result<Self> {
        self.budget = budget;
        self.validate()?;
        Ok(self)
    }

    pub fn with_uniform_budget(self, budget: f64) -> Result<Self> {
        let users = self.users();
        self.with_budgets(vec![budget; users])
    }

    pub fn with_caps(mut self, caps: Vec<Vec<f64>>) -> Result<Self> {
        self.caps = Some(caps);
        self.validate()?;
        Ok(self)
    }

    /// Applies the same cap to every dimension of every user.
    pub fn with_uniform_cap(self, cap: f64) -> Result<Self> {
        let caps = (0..self.users()).map(|q| vec![cap; self.user_dims(q)]).collect();
        self.with_caps(caps)
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        let users = self.users();
        if self.carriers == 0 {
            return Err(Error::Instance("at least one carrier is required".into()));
        }
        if self.channels.len() != self.carriers * users * users {
            return Err(Error::Instance("channel count does not match topology".into()));
        }
        for k in 0..self.carriers {
            for r in 0..users {
                for q in 0..users {
                    let h = self.channel(k, r, q);
                    let shape = (self.topology.rx_antennas[q], self.topology.tx_antennas[r]);
                    if h.shape() != shape {
                        return Err(Error::Instance(format!(
                            "H[{r}][{q}] on carrier {k} has shape {:?}, expected {shape:?}",
                            h.shape()
                        )));
                    }
                }
            }
        }
        if self.noise_power.len() != users || self.noise_power.iter().any(|&n| !(n > 0.0 && n.is_finite())) {
            return Err(Error::Instance("noise power must be positive for every user".into()));
        }
        if self.budget.len() != users || self.budget.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::Instance("power budget must be positive for every user".into()));
        }
        if let Some(caps) = &self.caps {
            if caps.len() != users {
                return Err(Error::Instance("caps must be given for every user".into()));
            }
            for (q, cq) in caps.iter().enumerate() {
                if cq.len() != self.user_dims(q) {
                    return Err(Error::Shape { expected: self.user_dims(q), got: cq.len() });
                }
                if cq.iter().any(|&c| !(c > 0.0)) {
                    return Err(Error::Instance(format!("caps of user {q} must be positive")));
                }
                let total: f64 = cq.iter().sum();
                if !(self.budget[q] < total) {
                    return Err(Error::Instance(format!(
                        "user {q}: budget {} must be strictly below the sum of caps {total}",
                        self.budget[q]
                    )));
                }
            }
        }
        Ok(())
    }
}

fn complex_gaussian(rng: &mut impl Rng, variance: f64) -> Complex64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(scale * re, scale * im)
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, variance: f64) -> CMatrix {
    // Column-major draw order.
    let data: Vec<Complex64> = (0..rows * cols).map(|_| complex_gaussian(rng, variance)).collect();
    CMatrix::from_vec(rows, cols, data)
}

/// Flat-fading instance with a single carrier.
pub fn generate_flat(topology: &Topology, noise_power: f64, seed: u64) -> Result<NetworkInstance> {
    generate_flat_with(topology, noise_power, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// As [`generate_flat`], drawing from a caller-owned generator.
pub fn generate_flat_with(
    topology: &Topology,
    noise_power: f64,
    rng: &mut impl Rng,
) -> Result<NetworkInstance> {
    topology.validate()?;
    check_noise(noise_power)?;
    let users = topology.users();
    let mut channels = Vec::with_capacity(users);
    for r in 0..users {
        let mut row = Vec::with_capacity(users);
        for q in 0..users {
            row.push(gaussian_matrix(
                rng,
                topology.rx_antennas[q],
                topology.tx_antennas[r],
                topology.link_variance(r, q),
            ));
        }
        channels.push(row);
    }
    NetworkInstance::from_channels(topology.clone(), vec![channels], vec![noise_power; users])
}

/// Frequency-selective instance: `taps` i.i.d. matrix taps per link with the
/// link variance split equally across taps, transformed to `carriers` flat
/// subchannels by a DFT.
pub fn generate_frequency_selective(
    topology: &Topology,
    taps: usize,
    carriers: usize,
    noise_power: f64,
    seed: u64,
) -> Result<NetworkInstance> {
    generate_frequency_selective_with(
        topology,
        taps,
        carriers,
        noise_power,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

pub fn generate_frequency_selective_with(
    topology: &Topology,
    taps: usize,
    carriers: usize,
    noise_power: f64,
    rng: &mut impl Rng,
) -> Result<NetworkInstance> {
    topology.validate()?;
    check_noise(noise_power)?;
    if taps == 0 || taps > carriers {
        return Err(Error::InvalidArgument(format!(
            "channel taps must satisfy 1 <= L <= N_c, got L={taps}, N_c={carriers}"
        )));
    }
    let users = topology.users();
    // [carrier][r][q]
    let mut channels: Vec<Vec<Vec<CMatrix>>> = vec![vec![Vec::with_capacity(users); users]; carriers];
    for r in 0..users {
        for q in 0..users {
            let (rows, cols) = (topology.rx_antennas[q], topology.tx_antennas[r]);
            let tap_var = topology.link_variance(r, q) / taps as f64;
            let tap_mats: Vec<CMatrix> = (0..taps).map(|_| gaussian_matrix(rng, rows, cols, tap_var)).collect();
            for (k, per_carrier) in channels.iter_mut().enumerate() {
                let mut h = CMatrix::zeros(rows, cols);
                for (l, g) in tap_mats.iter().enumerate() {
                    let phase = -2.0 * PI * (l * k) as f64 / carriers as f64;
                    h += g * Complex64::from_polar(1.0, phase);
                }
                per_carrier[r].push(h);
            }
        }
    }
    NetworkInstance::from_channels(topology.clone(), channels, vec![noise_power; users])
}

fn check_noise(noise_power: f64) -> Result<()> {
    if noise_power > 0.0 && noise_power.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("noise power must be positive, got {noise_power}")))
    }
}
