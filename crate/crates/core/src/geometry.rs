// SPDX-License-Identifier: Apache-2.0

//! Physical layout of the SIM and of the two scenarios.
//!
//! Frame: the ground is the plane `z = 0`. The antenna array is a uniform
//! linear array along `x`, centred on the `z` axis at height `bs_height`.
//! Metasurface layers are square grids parallel to the ground, stacked
//! downwards from the array; layer 1 is closest to the antennas and layer `L`
//! faces free space. The layer normal is therefore `-z`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self([x, y, z])
    }

    #[inline]
    pub fn x(self) -> f64 {
        self.0[0]
    }

    #[inline]
    pub fn y(self) -> f64 {
        self.0[1]
    }

    #[inline]
    pub fn z(self) -> f64 {
        self.0[2]
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    #[inline]
    pub fn distance(self, o: Vec3) -> f64 {
        (o - self).norm()
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;

    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;

    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;

    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

/// Meta-atom phase resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhaseLevels {
    #[default]
    Continuous,
    Discrete(u32),
}

impl Serialize for PhaseLevels {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PhaseLevels::Continuous => s.serialize_str("continuous"),
            PhaseLevels::Discrete(n) => s.serialize_u32(*n),
        }
    }
}

impl<'de> Deserialize<'de> for PhaseLevels {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u32),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) => Ok(PhaseLevels::Discrete(n)),
            Raw::Word(w) if w == "continuous" => Ok(PhaseLevels::Continuous),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "expected \"continuous\" or a level count, found \"{w}\""
            ))),
        }
    }
}

/// Hardware parameters of one SIM-equipped base station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Hz.
    pub carrier_frequency: f64,
    pub num_layers: usize,
    /// Must be a perfect square.
    pub atoms_per_layer: usize,
    pub num_antennas: usize,
    pub num_users: usize,
    /// Metres between the antenna plane and the outermost layer.
    pub sim_thickness: f64,
    /// Metres between adjacent antennas and between adjacent meta-atoms.
    pub element_spacing: f64,
    /// m².
    pub atom_area: f64,
    /// Metres above ground of the antenna array.
    pub bs_height: f64,
    pub phase_levels: PhaseLevels,
}

impl SimConfig {
    /// Defaults derived from the wavelength: thickness 5λ, spacing λ/2,
    /// atom area (λ/2)², BS height 10 m.
    pub fn new(
        carrier_frequency: f64,
        num_layers: usize,
        atoms_per_layer: usize,
        num_antennas: usize,
        num_users: usize,
    ) -> Self {
        let lambda = SPEED_OF_LIGHT / carrier_frequency;
        Self {
            carrier_frequency,
            num_layers,
            atoms_per_layer,
            num_antennas,
            num_users,
            sim_thickness: 5.0 * lambda,
            element_spacing: lambda / 2.0,
            atom_area: (lambda / 2.0).powi(2),
            bs_height: 10.0,
            phase_levels: PhaseLevels::Continuous,
        }
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    pub fn grid_side(&self) -> Option<usize> {
        let side = (self.atoms_per_layer as f64).sqrt().round() as usize;
        (side * side == self.atoms_per_layer).then_some(side)
    }

    pub fn inter_layer_gap(&self) -> f64 {
        self.sim_thickness / self.num_layers as f64
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive("carrier_frequency", self.carrier_frequency)?;
        positive("sim_thickness", self.sim_thickness)?;
        positive("element_spacing", self.element_spacing)?;
        positive("atom_area", self.atom_area)?;
        if !self.bs_height.is_finite() {
            return Err(Error::InvalidConfig("bs_height must be finite".into()));
        }
        for (name, v) in [
            ("num_layers", self.num_layers),
            ("atoms_per_layer", self.atoms_per_layer),
            ("num_antennas", self.num_antennas),
            ("num_users", self.num_users),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.grid_side().is_none() {
            return Err(Error::InvalidConfig(format!(
                "atoms_per_layer = {} is not a perfect square",
                self.atoms_per_layer
            )));
        }
        if let PhaseLevels::Discrete(n) = self.phase_levels {
            if n < 2 {
                return Err(Error::InvalidConfig(format!(
                    "phase_levels must be at least 2, got {n}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimGeometry {
    /// `layer_positions[l][n]`, layer 0 adjacent to the antennas.
    pub layer_positions: Vec<Vec<Vec3>>,
    pub antenna_positions: Vec<Vec3>,
    pub layer_normal: Vec3,
    pub inter_layer_gap: f64,
}

impl SimGeometry {
    pub fn num_layers(&self) -> usize {
        self.layer_positions.len()
    }

    pub fn atoms_per_layer(&self) -> usize {
        self.layer_positions.first().map_or(0, Vec::len)
    }

    pub fn outer_layer(&self) -> &[Vec3] {
        self.layer_positions.last().map_or(&[], Vec::as_slice)
    }

    /// Centre of the free-space-facing layer.
    pub fn aperture_center(&self) -> Vec3 {
        let outer = self.outer_layer();
        let sum = outer.iter().fold(Vec3::default(), |acc, &p| acc + p);
        sum * (1.0 / outer.len() as f64)
    }
}

fn centered(i: usize, count: usize, spacing: f64) -> f64 {
    (i as f64 - (count as f64 - 1.0) / 2.0) * spacing
}

pub fn build_sim_geometry(config: &SimConfig) -> Result<SimGeometry> {
    config.validate()?;
    let side = config.grid_side().expect("validated");
    let d = config.element_spacing;
    let gap = config.inter_layer_gap();
    let top = config.bs_height;

    let antenna_positions = (0..config.num_antennas)
        .map(|m| Vec3::new(centered(m, config.num_antennas, d), 0.0, top))
        .collect();

    let layer_positions = (1..=config.num_layers)
        .map(|l| {
            let z = top - l as f64 * gap;
            (0..config.atoms_per_layer)
                .map(|n| {
                    let (row, col) = (n / side, n % side);
                    Vec3::new(centered(col, side, d), centered(row, side, d), z)
                })
                .collect()
        })
        .collect();

    Ok(SimGeometry {
        layer_positions,
        antenna_positions,
        layer_normal: Vec3::new(0.0, 0.0, -1.0),
        inter_layer_gap: gap,
    })
}

/// One of the four coverage areas, labelled counterclockwise from `+x, +y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    A,
    B,
    C,
    D,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::A, Quadrant::B, Quadrant::C, Quadrant::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Axis-aligned square on the ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageArea {
    /// Ground-plane `(x, y)` of the square's centre.
    pub center: [f64; 2],
    pub side: f64,
}

impl CoverageArea {
    pub fn quadrant_of(&self, p: Vec3) -> Quadrant {
        let dx = p.x() - self.center[0];
        let dy = p.y() - self.center[1];
        match (dx >= 0.0, dy >= 0.0) {
            (true, true) => Quadrant::A,
            (false, true) => Quadrant::B,
            (false, false) => Quadrant::C,
            (true, false) => Quadrant::D,
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let h = self.side / 2.0;
        (p.x() - self.center[0]).abs() <= h && (p.y() - self.center[1]).abs() <= h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Multiuser,
    Doa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Users(Vec<Vec3>),
    Coverage(CoverageArea),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub placement: Placement,
    pub tx_power_dbm: f64,
    pub noise_power_dbm: f64,
    pub path_loss_exponent: f64,
}

impl Scenario {
    pub fn user_positions(&self) -> Option<&[Vec3]> {
        match &self.placement {
            Placement::Users(u) => Some(u),
            Placement::Coverage(_) => None,
        }
    }

    pub fn coverage(&self) -> Option<&CoverageArea> {
        match &self.placement {
            Placement::Coverage(c) => Some(c),
            Placement::Users(_) => None,
        }
    }
}

/// Optional departures from the scenario defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioOverrides {
    pub user_positions: Option<Vec<Vec3>>,
    /// Metres from the BS ground point to the user line.
    pub standoff: Option<f64>,
    pub user_spacing: Option<f64>,
    pub coverage_side: Option<f64>,
    pub coverage_center: Option<[f64; 2]>,
    pub tx_power_dbm: Option<f64>,
    pub noise_power_dbm: Option<f64>,
    pub path_loss_exponent: Option<f64>,
}

pub const DEFAULT_STANDOFF: f64 = 50.0;
pub const DEFAULT_USER_SPACING: f64 = 20.0;
pub const DEFAULT_COVERAGE_SIDE: f64 = 100.0;

pub fn build_scenario(kind: ScenarioKind, config: &SimConfig, overrides: &ScenarioOverrides) -> Result<Scenario> {
    let placement = match kind {
        ScenarioKind::Multiuser => {
            let users = match &overrides.user_positions {
                Some(u) => {
                    if u.len() != config.num_users {
                        return Err(Error::InvalidConfig(format!(
                            "num_users = {} but {} user positions were given",
                            config.num_users,
                            u.len()
                        )));
                    }
                    u.clone()
                }
                None => {
                    let standoff = overrides.standoff.unwrap_or(DEFAULT_STANDOFF);
                    let spacing = overrides.user_spacing.unwrap_or(DEFAULT_USER_SPACING);
                    (0..config.num_users)
                        .map(|k| Vec3::new(centered(k, config.num_users, spacing), standoff, 0.0))
                        .collect()
                }
            };
            Placement::Users(users)
        }
        ScenarioKind::Doa => {
            let side = overrides.coverage_side.unwrap_or(DEFAULT_COVERAGE_SIDE);
            if !(side.is_finite() && side > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "coverage_side must be positive, got {side}"
                )));
            }
            Placement::Coverage(CoverageArea {
                center: overrides.coverage_center.unwrap_or([0.0, 0.0]),
                side,
            })
        }
    };
    let (tx, noise, exponent) = match kind {
        ScenarioKind::Multiuser => (20.0, -100.0, 3.5),
        ScenarioKind::Doa => (20.0, -140.0, 2.0),
    };
    let scenario = Scenario {
        placement,
        tx_power_dbm: overrides.tx_power_dbm.unwrap_or(tx),
        noise_power_dbm: overrides.noise_power_dbm.unwrap_or(noise),
        path_loss_exponent: overrides.path_loss_exponent.unwrap_or(exponent),
    };
    // -inf noise is the noiseless limit and is allowed.
    if !scenario.tx_power_dbm.is_finite() || scenario.noise_power_dbm.is_nan() {
        return Err(Error::InvalidConfig("tx/noise power must be finite dBm".into()));
    }
    Ok(scenario)
}
