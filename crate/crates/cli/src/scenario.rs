//! Interaction matrices and initial states for the builtin scenarios.

use std::path::Path;

use consensus_core::kernel::{sample_kernel, Kernel, KernelGrid};
use consensus_core::operator::InteractionMatrix;
use nalgebra::{DMatrix, DVector};
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Initial, LoadedConfig, Source};
use crate::error::{CliError, InModule};

/// Recorded in every summary next to the seed.
pub const RNG_NAME: &str = "ChaCha8Rng (rand_chacha 0.9, seed_from_u64)";

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(Open01)
}

/// Every off-diagonal entry uniform on (0, 1).
pub fn fully_connected(n: usize, rng: &mut ChaCha8Rng) -> InteractionMatrix {
    let m = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { open_unit(rng) });
    InteractionMatrix::new(m).expect("entries lie in (0, 1)")
}

/// `sigma_{i,i+1}` and `sigma_{N,1}` uniform on (0, 1), all else zero.
pub fn ring(n: usize, rng: &mut ChaCha8Rng) -> InteractionMatrix {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, (i + 1) % n)] = open_unit(rng);
    }
    InteractionMatrix::new(m).expect("entries lie in (0, 1)")
}

/// Sizes of `k` consecutive blocks covering `n` agents, larger blocks first.
pub fn block_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|b| n / k + usize::from(b < n % k)).collect()
}

/// `k` fully connected blocks on consecutive agents, no arcs between them.
pub fn blocks(n: usize, k: usize, rng: &mut ChaCha8Rng) -> InteractionMatrix {
    let mut m = DMatrix::zeros(n, n);
    let mut start = 0;
    for size in block_sizes(n, k) {
        for i in start..start + size {
            for j in start..start + size {
                if i != j {
                    m[(i, j)] = open_unit(rng);
                }
            }
        }
        start += size;
    }
    InteractionMatrix::new(m).expect("entries lie in (0, 1)")
}

/// Whitespace- or comma-separated numbers, `#` starts a comment.
fn read_numbers(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut rows = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|tok| !tok.is_empty())
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| CliError::Data {
                    path: path.to_path_buf(),
                    message: format!("line {}: `{tok}` is not a number", line_no + 1),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_matrix(path: &Path) -> Result<InteractionMatrix, CliError> {
    let rows = read_numbers(path)?;
    if rows.is_empty() {
        return Err(CliError::Data {
            path: path.to_path_buf(),
            message: "no matrix rows".into(),
        });
    }
    InteractionMatrix::from_rows(&rows).in_module("operator")
}

pub fn read_vector(path: &Path) -> Result<DVector<f64>, CliError> {
    let values: Vec<f64> = read_numbers(path)?.into_iter().flatten().collect();
    Ok(DVector::from_vec(values))
}

/// Interaction matrix, kernel grid (kernel sources only) and initial state.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub sigma: InteractionMatrix,
    pub grid: Option<KernelGrid>,
    pub y_in: DVector<f64>,
}

pub fn kernel_from_name(name: &str, param: Option<f64>, origin: &str) -> Result<Kernel, CliError> {
    Kernel::from_registry(name, param).ok_or_else(|| {
        CliError::config(
            origin,
            format!(
                "`source.name`: unknown kernel `{name}` (constant, listener_only, asymmetric_sine, periodic_gaussian, periodic_skew)"
            ),
        )
    })
}

/// Draws the matrix first, then the initial state, from one seeded stream.
pub fn build(config: &LoadedConfig) -> Result<Scenario, CliError> {
    let c = &config.config;
    let mut rng = rng(c.scenario.seed);
    let mut grid = None;
    let sigma = match &c.source {
        Source::FullyConnected { n } => fully_connected(*n, &mut rng),
        Source::Ring { n } => ring(*n, &mut rng),
        Source::Blocks { n, blocks: k } => blocks(*n, *k, &mut rng),
        Source::Kernel {
            n,
            name,
            param,
            dimension,
        } => {
            let kernel = kernel_from_name(name, *param, &config.origin)?;
            let g = sample_kernel(&kernel, *n, *dimension).in_module("kernel")?;
            let sigma = consensus_core::kernel::discretize_grid(&g).in_module("kernel")?;
            grid = Some(g);
            sigma
        }
        Source::MatrixFile { path } => read_matrix(&config.resolve(path))?,
    };
    let n = sigma.n();
    let y_in = match &c.initial {
        Initial::Uniform { lo, hi } => DVector::from_fn(n, |_, _| rng.random_range(*lo..*hi)),
        Initial::List { values } => DVector::from_column_slice(values),
        Initial::File { path } => read_vector(&config.resolve(path))?,
        Initial::NodeCoordinate => {
            let g = grid.as_ref().expect("validated: kernel source");
            DVector::from_iterator(n, g.nodes.iter().map(|x| x[0]))
        }
    };
    if y_in.len() != n {
        return Err(CliError::config(
            &config.origin,
            format!("`initial`: {} values for {n} agents", y_in.len()),
        ));
    }
    if y_in.iter().any(|x| !x.is_finite()) {
        return Err(CliError::config(&config.origin, "`initial`: values must be finite"));
    }
    Ok(Scenario { sigma, grid, y_in })
}
