//! Cooperative-localization problem instances: node placement, the
//! range-limited communication graph, Gaussian priors, and noisy directed
//! distance measurements.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Attempts to place a connected set of agents before giving up.
const MAX_PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario parameter: {0}")]
    InvalidParameter(String),
    #[error("agent node {agent} has no neighbors after {attempts} placement attempts")]
    IsolatedAgent { agent: usize, attempts: usize },
    #[error("scenario io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario invariant violated: {0}")]
    Invariant(String),
}

/// A planar position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance_to(&self, other: &Position) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Anchors have precisely known positions; agents are to be localized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Anchor,
    Agent,
}

/// Distance-measurement noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseModel {
    /// Additive Gaussian noise with a fixed standard deviation in meters.
    Awgn { sigma: f64 },
    /// Gaussian noise whose standard deviation is `sigma * distance`.
    #[serde(rename = "range")]
    RangeDependent { sigma: f64 },
}

impl NoiseModel {
    pub fn sigma(&self) -> f64 {
        match self {
            NoiseModel::Awgn { sigma } | NoiseModel::RangeDependent { sigma } => *sigma,
        }
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let s = self.sigma();
        if !s.is_finite() || s < 0.0 {
            return Err(ScenarioError::InvalidParameter(format!(
                "noise sigma must be finite and non-negative, got {s}"
            )));
        }
        Ok(())
    }
}

/// One sampled network: true positions, kinds, range-`r` adjacency, directed
/// noisy measurements, and per-agent Gaussian priors.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioInstance {
    /// True positions, anchors first.
    pub positions: Vec<Position>,
    pub kinds: Vec<NodeKind>,
    pub range: f64,
    /// Per-node sorted neighbor index lists; symmetric.
    pub neighbors: Vec<Vec<usize>>,
    /// `(from j, to i) -> z_{j->i}`; one entry per directed edge.
    pub measurements: BTreeMap<(usize, usize), f64>,
    /// Prior means for agent nodes, in node-index order.
    pub prior_means: Vec<Position>,
    /// Diagonal of the shared prior covariance, in m^2.
    pub prior_cov_diag: (f64, f64),
    pub seed: u64,
}

impl ScenarioInstance {
    pub fn n_nodes(&self) -> usize {
        self.positions.len()
    }

    pub fn n_agents(&self) -> usize {
        self.kinds.iter().filter(|k| **k == NodeKind::Agent).count()
    }

    pub fn is_agent(&self, node: usize) -> bool {
        self.kinds[node] == NodeKind::Agent
    }

    /// Node indices of agents, ascending.
    pub fn agents(&self) -> impl Iterator<Item = usize> + '_ {
        self.kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == NodeKind::Agent)
            .map(|(i, _)| i)
    }

    /// Position of `node` among agents (index into `prior_means`).
    pub fn agent_ordinal(&self, node: usize) -> Option<usize> {
        if !self.is_agent(node) {
            return None;
        }
        Some(
            self.kinds[..node]
                .iter()
                .filter(|k| **k == NodeKind::Agent)
                .count(),
        )
    }

    pub fn measurement(&self, from: usize, to: usize) -> f64 {
        self.measurements[&(from, to)]
    }

    /// Directed edges `(from, to)` ordered by receiver then sender.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for (to, nbrs) in self.neighbors.iter().enumerate() {
            for &from in nbrs {
                edges.push((from, to));
            }
        }
        edges
    }

    pub fn n_directed_edges(&self) -> usize {
        self.neighbors.iter().map(|n| n.len()).sum()
    }

    /// Check the structural invariants; used after deserialization.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let n = self.n_nodes();
        if self.kinds.len() != n || self.neighbors.len() != n {
            return Err(ScenarioError::Invariant(
                "positions, kinds and neighbors must have equal length".into(),
            ));
        }
        if self.prior_means.len() != self.n_agents() {
            return Err(ScenarioError::Invariant(
                "one prior mean per agent is required".into(),
            ));
        }
        for (i, nbrs) in self.neighbors.iter().enumerate() {
            for &j in nbrs {
                if j == i || j >= n {
                    return Err(ScenarioError::Invariant(format!(
                        "bad neighbor {j} of node {i}"
                    )));
                }
                if !self.neighbors[j].contains(&i) {
                    return Err(ScenarioError::Invariant(format!(
                        "adjacency is not symmetric between {i} and {j}"
                    )));
                }
                if !self.measurements.contains_key(&(j, i)) {
                    return Err(ScenarioError::Invariant(format!(
                        "missing measurement {j}->{i}"
                    )));
                }
            }
        }
        if self.measurements.len() != self.n_directed_edges() {
            return Err(ScenarioError::Invariant(
                "measurement count must equal the number of directed edges".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, ScenarioError> {
        let file = ScenarioFile {
            positions: self.positions.clone(),
            kinds: self.kinds.clone(),
            range: self.range,
            measurements: self
                .measurements
                .iter()
                .map(|(&(from, to), &z)| (from, to, z))
                .collect(),
            prior_means: self.prior_means.clone(),
            prior_cov: [self.prior_cov_diag.0, self.prior_cov_diag.1],
            seed: self.seed,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        let neighbors = build_adjacency(&file.positions, file.range);
        let scenario = ScenarioInstance {
            positions: file.positions,
            kinds: file.kinds,
            range: file.range,
            neighbors,
            measurements: file
                .measurements
                .into_iter()
                .map(|(from, to, z)| ((from, to), z))
                .collect(),
            prior_means: file.prior_means,
            prior_cov_diag: (file.prior_cov[0], file.prior_cov[1]),
            seed: file.seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk schema. Adjacency is rebuilt from positions and range on load.
#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    positions: Vec<Position>,
    kinds: Vec<NodeKind>,
    range: f64,
    measurements: Vec<(usize, usize, f64)>,
    prior_means: Vec<Position>,
    prior_cov: [f64; 2],
    seed: u64,
}

/// Generation parameters for one family of scenarios. Defaults follow the
/// standard setup: a 50 m square with nine grid anchors, 20 agents,
/// communication range 25 m, AWGN sigma 4, prior variance 10 m^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    pub num_agents: usize,
    pub area: f64,
    pub range: f64,
    pub noise: NoiseModel,
    pub prior_var: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            num_agents: 20,
            area: 50.0,
            range: 25.0,
            noise: NoiseModel::Awgn { sigma: 4.0 },
            prior_var: 10.0,
        }
    }
}

impl ScenarioParams {
    pub fn generate(&self, seed: u64) -> Result<ScenarioInstance, ScenarioError> {
        generate_scenario(
            self.num_agents,
            self.area,
            self.range,
            &self.noise,
            self.prior_var,
            seed,
        )
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.num_agents < 1 {
            return Err(ScenarioError::InvalidParameter(
                "scenario.num_agents must be at least 1".into(),
            ));
        }
        if !self.area.is_finite() || self.area <= 0.0 {
            return Err(ScenarioError::InvalidParameter(
                "scenario.area must be positive".into(),
            ));
        }
        if !self.range.is_finite() || self.range <= 0.0 {
            return Err(ScenarioError::InvalidParameter(
                "scenario.range must be positive".into(),
            ));
        }
        if !self.prior_var.is_finite() || self.prior_var <= 0.0 {
            return Err(ScenarioError::InvalidParameter(
                "scenario.prior_var must be positive".into(),
            ));
        }
        self.noise.validate()
    }
}

/// Build an instance from explicit anchor and agent positions: adjacency
/// within `range`, noisy measurements and priors drawn from `seed`
/// sub-streams. Used for small hand-laid test networks.
pub fn synthetic_scenario(
    anchors: &[Position],
    agents: &[Position],
    range: f64,
    noise: &NoiseModel,
    prior_var: f64,
    seed: u64,
) -> Result<ScenarioInstance, ScenarioError> {
    noise.validate()?;
    let mut positions = anchors.to_vec();
    positions.extend_from_slice(agents);
    let kinds: Vec<NodeKind> = (0..positions.len())
        .map(|i| {
            if i < anchors.len() {
                NodeKind::Anchor
            } else {
                NodeKind::Agent
            }
        })
        .collect();
    let neighbors = build_adjacency(&positions, range);
    let mut noise_rng = rng::stream(seed, "noise");
    let mut measurements = BTreeMap::new();
    for (to, nbrs) in neighbors.iter().enumerate() {
        for &from in nbrs {
            let z = measure_distance(&positions[from], &positions[to], noise, &mut noise_rng);
            measurements.insert((from, to), z);
        }
    }
    let mut prior_rng = rng::stream(seed, "priors");
    let prior_means: Vec<Position> = (anchors.len()..positions.len())
        .map(|i| sample_initial_position(&positions[i], (prior_var, prior_var), &mut prior_rng))
        .collect();
    let scenario = ScenarioInstance {
        positions,
        kinds,
        range,
        neighbors,
        measurements,
        prior_means,
        prior_cov_diag: (prior_var, prior_var),
        seed,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// The nine anchor sites: the four vertices, the four side midpoints, and
/// the center of the deployment square, in row-major order.
pub fn anchor_grid(area: f64) -> Vec<Position> {
    let ticks = [0.0, area / 2.0, area];
    let mut out = Vec::with_capacity(9);
    for &gy in &ticks {
        for &gx in &ticks {
            out.push(Position::new(gx, gy));
        }
    }
    out
}

fn build_adjacency(positions: &[Position], range: f64) -> Vec<Vec<usize>> {
    let n = positions.len();
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if positions[i].distance_to(&positions[j]) <= range {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    neighbors
}

/// One noisy directed distance measurement `z_{j->i} = d + n_{j->i}`.
/// Negative outcomes are passed through unclamped.
pub fn measure_distance(
    x_from: &Position,
    x_to: &Position,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> f64 {
    let d = x_from.distance_to(x_to);
    let z: f64 = rng.sample(StandardNormal);
    match noise {
        NoiseModel::Awgn { sigma } => d + sigma * z,
        NoiseModel::RangeDependent { sigma } => d + sigma * d * z,
    }
}

/// Draw an initial position estimate from a diagonal Gaussian prior.
/// Zero variance degenerates to the mean.
pub fn sample_initial_position(
    prior_mean: &Position,
    prior_cov_diag: (f64, f64),
    rng: &mut impl Rng,
) -> Position {
    let zx: f64 = rng.sample(StandardNormal);
    let zy: f64 = rng.sample(StandardNormal);
    Position::new(
        prior_mean.x + prior_cov_diag.0.sqrt() * zx,
        prior_mean.y + prior_cov_diag.1.sqrt() * zy,
    )
}

/// Initial positions for a whole scenario: anchors use their true position,
/// agents draw from their prior.
pub fn draw_init_positions(scenario: &ScenarioInstance, rng: &mut impl Rng) -> Vec<Position> {
    (0..scenario.n_nodes())
        .map(|i| match scenario.kinds[i] {
            NodeKind::Anchor => scenario.positions[i],
            NodeKind::Agent => {
                let ord = scenario.agent_ordinal(i).unwrap();
                sample_initial_position(&scenario.prior_means[ord], scenario.prior_cov_diag, rng)
            }
        })
        .collect()
}

/// Generate a scenario: nine anchors on the grid, `num_agents` agents
/// uniform in the square, adjacency within `range`, one noisy measurement
/// per directed edge, and per-agent prior means drawn from `N(x_i, prior_var I)`.
///
/// Placement is resampled (up to a bounded number of attempts) until no
/// agent is isolated. Placement, measurement noise and priors use separate
/// sub-streams of `seed`, so changing the noise model does not move nodes.
pub fn generate_scenario(
    num_agents: usize,
    area: f64,
    range: f64,
    noise: &NoiseModel,
    prior_var: f64,
    seed: u64,
) -> Result<ScenarioInstance, ScenarioError> {
    if num_agents < 1 {
        return Err(ScenarioError::InvalidParameter(
            "num_agents must be at least 1".into(),
        ));
    }
    if !area.is_finite() || area <= 0.0 {
        return Err(ScenarioError::InvalidParameter(format!(
            "area must be positive, got {area}"
        )));
    }
    if !range.is_finite() || range <= 0.0 {
        return Err(ScenarioError::InvalidParameter(format!(
            "range must be positive, got {range}"
        )));
    }
    if !prior_var.is_finite() || prior_var <= 0.0 {
        return Err(ScenarioError::InvalidParameter(format!(
            "prior_var must be positive, got {prior_var}"
        )));
    }
    noise.validate()?;

    let mut placement_rng = rng::stream(seed, "placement");
    let anchors = anchor_grid(area);
    let n = anchors.len() + num_agents;

    let mut positions = Vec::new();
    let mut neighbors = Vec::new();
    let mut placed = false;
    for attempt in 0..MAX_PLACEMENT_ATTEMPTS {
        positions = anchors.clone();
        for _ in 0..num_agents {
            positions.push(Position::new(
                placement_rng.gen_range(0.0..=area),
                placement_rng.gen_range(0.0..=area),
            ));
        }
        neighbors = build_adjacency(&positions, range);
        let isolated = (anchors.len()..n).find(|&i| neighbors[i].is_empty());
        match isolated {
            None => {
                placed = true;
                break;
            }
            Some(agent) if attempt == MAX_PLACEMENT_ATTEMPTS - 1 => {
                return Err(ScenarioError::IsolatedAgent {
                    agent,
                    attempts: MAX_PLACEMENT_ATTEMPTS,
                });
            }
            Some(_) => {}
        }
    }
    if !placed {
        unreachable!("placement loop always returns or breaks");
    }

    let kinds: Vec<NodeKind> = (0..n)
        .map(|i| {
            if i < anchors.len() {
                NodeKind::Anchor
            } else {
                NodeKind::Agent
            }
        })
        .collect();

    let mut noise_rng = rng::stream(seed, "noise");
    let mut measurements = BTreeMap::new();
    for (to, nbrs) in neighbors.iter().enumerate() {
        for &from in nbrs {
            let z = measure_distance(&positions[from], &positions[to], noise, &mut noise_rng);
            measurements.insert((from, to), z);
        }
    }

    let mut prior_rng = rng::stream(seed, "priors");
    let prior_means: Vec<Position> = (anchors.len()..n)
        .map(|i| sample_initial_position(&positions[i], (prior_var, prior_var), &mut prior_rng))
        .collect();

    let scenario = ScenarioInstance {
        positions,
        kinds,
        range,
        neighbors,
        measurements,
        prior_means,
        prior_cov_diag: (prior_var, prior_var),
        seed,
    };
    debug_assert!(scenario.validate().is_ok());
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn awgn(sigma: f64) -> NoiseModel {
        NoiseModel::Awgn { sigma }
    }

    #[test]
    fn anchors_sit_on_the_grid() {
        let s = generate_scenario(20, 50.0, 25.0, &awgn(4.0), 10.0, 1).unwrap();
        let expected = [
            (0.0, 0.0),
            (25.0, 0.0),
            (50.0, 0.0),
            (0.0, 25.0),
            (25.0, 25.0),
            (50.0, 25.0),
            (0.0, 50.0),
            (25.0, 50.0),
            (50.0, 50.0),
        ];
        for (i, &(x, y)) in expected.iter().enumerate() {
            assert_eq!(s.positions[i], Position::new(x, y));
            assert_eq!(s.kinds[i], NodeKind::Anchor);
        }
        assert_eq!(s.n_agents(), 20);
    }

    #[test]
    fn out_of_range_nodes_are_not_neighbors() {
        let a = Position::new(0.0, 0.0);
        let b = Position::new(0.0, 30.0);
        let nbrs = build_adjacency(&[a, b], 25.0);
        assert!(nbrs[0].is_empty() && nbrs[1].is_empty());
    }

    #[test]
    fn zero_noise_measurements_are_exact_distances() {
        let s = generate_scenario(10, 50.0, 25.0, &awgn(0.0), 10.0, 3).unwrap();
        for (&(from, to), &z) in &s.measurements {
            assert_eq!(z, s.positions[from].distance_to(&s.positions[to]));
        }
    }

    #[test]
    fn three_four_five_triangle() {
        let mut r = rng::stream(0, "t");
        let z = measure_distance(
            &Position::new(0.0, 0.0),
            &Position::new(3.0, 4.0),
            &awgn(0.0),
            &mut r,
        );
        assert_eq!(z, 5.0);
    }

    #[test]
    fn range_dependent_noise_std_matches_model() {
        // d = 10, sigma = 0.2 -> sample std 2.0 within 2% over 1e5 draws
        let mut r = rng::stream(11, "mc");
        let a = Position::new(0.0, 0.0);
        let b = Position::new(10.0, 0.0);
        let noise = NoiseModel::RangeDependent { sigma: 0.2 };
        let n = 100_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| measure_distance(&a, &b, &noise, &mut r) - 10.0)
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        assert!((std - 2.0).abs() / 2.0 < 0.02, "std {std}");
    }

    #[test]
    fn initial_position_sampling_statistics() {
        let mut r = rng::stream(5, "mc");
        let mean = Position::new(25.0, 25.0);
        let n = 100_000;
        let (mut sx, mut sy) = (0.0, 0.0);
        for _ in 0..n {
            let p = sample_initial_position(&mean, (10.0, 10.0), &mut r);
            sx += p.x;
            sy += p.y;
        }
        assert!((sx / n as f64 - 25.0).abs() < 0.1);
        assert!((sy / n as f64 - 25.0).abs() < 0.1);
    }

    #[test]
    fn zero_variance_prior_returns_the_mean() {
        let mut r = rng::stream(5, "mc");
        let mean = Position::new(7.0, -3.0);
        let p = sample_initial_position(&mean, (0.0, 0.0), &mut r);
        assert_eq!(p, mean);
    }

    #[test]
    fn anchors_get_exact_initial_positions() {
        let s = generate_scenario(5, 50.0, 25.0, &awgn(4.0), 10.0, 9).unwrap();
        let init = draw_init_positions(&s, &mut rng::stream(9, "init"));
        for i in 0..9 {
            assert_eq!(init[i], s.positions[i]);
        }
    }

    #[test]
    fn adjacency_is_symmetric_and_measurements_cover_edges() {
        let s = generate_scenario(20, 50.0, 25.0, &awgn(4.0), 10.0, 17).unwrap();
        for i in 0..s.n_nodes() {
            for &j in &s.neighbors[i] {
                assert!(s.neighbors[j].contains(&i));
            }
        }
        assert_eq!(s.measurements.len(), s.n_directed_edges());
    }

    #[test]
    fn directional_noise_is_independent() {
        let s = generate_scenario(20, 50.0, 25.0, &awgn(4.0), 10.0, 23).unwrap();
        let (&(from, to), _) = s.measurements.iter().next().unwrap();
        assert_ne!(s.measurement(from, to), s.measurement(to, from));
    }

    #[test]
    fn generation_is_bit_reproducible() {
        let a = generate_scenario(20, 50.0, 25.0, &awgn(4.0), 10.0, 99).unwrap();
        let b = generate_scenario(20, 50.0, 25.0, &awgn(4.0), 10.0, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_model_does_not_shift_placements() {
        let a = generate_scenario(20, 50.0, 25.0, &awgn(4.0), 10.0, 41).unwrap();
        let b = generate_scenario(
            20,
            50.0,
            25.0,
            &NoiseModel::RangeDependent { sigma: 0.2 },
            10.0,
            41,
        )
        .unwrap();
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.prior_means, b.prior_means);
    }

    #[test]
    fn isolated_agents_raise_a_typed_error() {
        let err = generate_scenario(1, 50.0, 1e-6, &awgn(0.0), 10.0, 2).unwrap_err();
        assert!(matches!(err, ScenarioError::IsolatedAgent { .. }));
    }

    #[test]
    fn json_round_trip_preserves_the_instance() {
        let s = generate_scenario(12, 50.0, 25.0, &awgn(4.0), 10.0, 55).unwrap();
        let text = s.to_json().unwrap();
        for key in [
            "positions",
            "kinds",
            "range",
            "measurements",
            "prior_means",
            "prior_cov",
            "seed",
        ] {
            assert!(text.contains(&format!("\"{key}\"")), "missing field {key}");
        }
        let back = ScenarioInstance::from_json(&text).unwrap();
        assert_eq!(s, back);
    }
}
