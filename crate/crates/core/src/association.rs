//! Multi-cell pairing of users with sensing targets.
//!
//! Each cell hosts one base station, one user and one target. Pairing cost
//! is the divergence `KLD(user_i ‖ target_j)`; the minimum-cost assignment is
//! found with the Hungarian method and compared with random pairings on the
//! network-average PCRB, every cell being solved independently.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::channel::{generate_ensemble, ChannelParams};
use crate::error::{Error, Result};
use crate::geometry::ArrayConfig;
use crate::optimizer::{solve_p1, ProblemSpec, Tolerances};
use crate::priors::{
    default_user_support, discretize_user_pmf, kld_gaussian, quadrature_grid, AngularPrior, ReflectionPrior,
};
use crate::sensing::build_kernel;

/// Settings shared by every cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellTemplate {
    pub config: ArrayConfig,
    pub channel: ChannelParams,
    pub power_budget: f64,
    pub rate_target: f64,
    pub l_symbols: usize,
    pub sensing_noise: f64,
    pub reflection_variance: f64,
    pub user_points: usize,
    pub quadrature_nodes: usize,
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkScenario {
    pub user_priors: Vec<AngularPrior>,
    pub target_priors: Vec<AngularPrior>,
    pub template: CellTemplate,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `pairing[i]` is the target served together with user `i`.
    pub pairing: Vec<usize>,
    pub total_cost: f64,
}

impl NetworkScenario {
    pub fn new(
        user_priors: Vec<AngularPrior>,
        target_priors: Vec<AngularPrior>,
        template: CellTemplate,
        seed: u64,
    ) -> Result<Self> {
        if user_priors.len() < 2 {
            return Err(Error::invalid("n_cells", "need at least two cells"));
        }
        if user_priors.len() != target_priors.len() {
            return Err(Error::Dimension(format!(
                "{} users but {} targets",
                user_priors.len(),
                target_priors.len()
            )));
        }
        template.config.validate()?;
        template.channel.validate()?;
        Ok(NetworkScenario {
            user_priors,
            target_priors,
            template,
            seed,
        })
    }

    /// Random scenario: user means uniform on `[-1, 1]`, each target placed
    /// near a distinct user (shuffled) with `N(0, 0.05²)` jitter, variances
    /// drawn from `{1e-3, 10^-2.5}`.
    pub fn random(n_cells: usize, template: CellTemplate, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let variances = [1e-3, 10f64.powf(-2.5)];
        let jitter = Normal::new(0.0, 0.05).expect("valid normal");
        let means: Vec<f64> = (0..n_cells).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut users = Vec::with_capacity(n_cells);
        for &m in &means {
            users.push(AngularPrior::new(m, variances[rng.random_range(0..2)])?);
        }
        let mut order: Vec<usize> = (0..n_cells).collect();
        order.shuffle(&mut rng);
        let mut targets = Vec::with_capacity(n_cells);
        for &i in &order {
            let m = (means[i] + jitter.sample(&mut rng)).clamp(-1.2, 1.2);
            targets.push(AngularPrior::new(m, variances[rng.random_range(0..2)])?);
        }
        NetworkScenario::new(users, targets, template, seed)
    }

    pub fn n_cells(&self) -> usize {
        self.user_priors.len()
    }

    /// Seed of the channel ensemble drawn for user `i`.
    pub fn user_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64 + 1)
    }

    /// PCRB of the cell serving user `i` and target `j`.
    pub fn cell_pcrb(&self, i: usize, j: usize) -> Result<f64> {
        let t = &self.template;
        let user = &self.user_priors[i];
        let target = &self.target_priors[j];
        let grid = quadrature_grid(target, t.quadrature_nodes)?;
        let reflection = ReflectionPrior::new(t.reflection_variance)?;
        let kernel = build_kernel(target, &grid, &t.config, &reflection, t.l_symbols, t.sensing_noise)?;
        let pmf = discretize_user_pmf(
            user.mean,
            user.variance,
            t.user_points,
            default_user_support(user.mean, user.variance),
        )?;
        let ensemble = generate_ensemble(&pmf, &t.config, &t.channel, self.user_seed(i))?;
        let spec = ProblemSpec::new(kernel, ensemble, t.power_budget, t.rate_target)?.with_tolerances(t.tolerances);
        Ok(solve_p1(&spec)?.pcrb)
    }
}

/// `cost[i][j] = KLD(user_i ‖ target_j)`.
pub fn build_cost_matrix(scenario: &NetworkScenario) -> Vec<Vec<f64>> {
    scenario
        .user_priors
        .iter()
        .map(|u| scenario.target_priors.iter().map(|t| kld_gaussian(u, t)).collect())
        .collect()
}

fn check_square(cost: &[Vec<f64>]) -> Result<usize> {
    let n = cost.len();
    if n == 0 {
        return Err(Error::invalid("cost", "empty cost matrix"));
    }
    for row in cost {
        if row.len() != n {
            return Err(Error::Dimension(format!(
                "cost row of length {} in {n}×{n} matrix",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("cost", "entries must be finite"));
        }
    }
    Ok(n)
}

pub fn total_cost(cost: &[Vec<f64>], pairing: &[usize]) -> f64 {
    pairing.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

/// Minimum-cost perfect matching (Hungarian method with row/column
/// potentials, `O(n³)`).
pub fn assign_min_cost(cost: &[Vec<f64>]) -> Result<Assignment> {
    let n = check_square(cost)?;
    // 1-based arrays; column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairing = vec![0; n];
    for j in 1..=n {
        pairing[row_of[j] - 1] = j - 1;
    }
    Ok(Assignment {
        total_cost: total_cost(cost, &pairing),
        pairing,
    })
}

/// Uniformly random pairing.
pub fn random_assignment(cost: &[Vec<f64>], seed: u64) -> Result<Assignment> {
    let n = check_square(cost)?;
    let mut pairing: Vec<usize> = (0..n).collect();
    pairing.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(Assignment {
        total_cost: total_cost(cost, &pairing),
        pairing,
    })
}

/// Network-average PCRB of an assignment.
pub fn evaluate_network(scenario: &NetworkScenario, assignment: &Assignment) -> Result<f64> {
    let n = scenario.n_cells();
    if assignment.pairing.len() != n {
        return Err(Error::Dimension(format!(
            "pairing of length {} for {n} cells",
            assignment.pairing.len()
        )));
    }
    let mut seen = vec![false; n];
    for &j in &assignment.pairing {
        if j >= n || std::mem::replace(&mut seen[j], true) {
            return Err(Error::invalid("pairing", "not a permutation"));
        }
    }
    let solve = |(i, &j): (usize, &usize)| {
        scenario.cell_pcrb(i, j).map_err(|e| Error::Cell {
            cell: i,
            source: Box::new(e),
        })
    };
    #[cfg(feature = "parallel")]
    let pcrbs: Vec<Result<f64>> = assignment.pairing.par_iter().enumerate().map(solve).collect();
    #[cfg(not(feature = "parallel"))]
    let pcrbs: Vec<Result<f64>> = assignment.pairing.iter().enumerate().map(solve).collect();
    let mut sum = 0.0;
    for p in pcrbs {
        sum += p?;
    }
    Ok(sum / n as f64)
}
