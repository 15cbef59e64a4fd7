//! Random search over network depth, widths, activation and penalty weight,
//! scored by validation MSE.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::LagDesign;
use crate::deepnet::{init_network, predict, sgd_train, Activation, DeepNet, NetConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub activations: Vec<Activation>,
    /// Inclusive range of hidden-layer counts.
    pub depth_range: (usize, usize),
    /// Inclusive range of widths, drawn independently per layer.
    pub width_range: (usize, usize),
    /// Penalty weights are drawn log-uniformly from this range.
    pub lambda_range: (f64, f64),
    pub budget: usize,
    /// Epochs per candidate during the search.
    pub search_epochs: usize,
    /// Template for everything not searched (learning rate, batch, dropout,
    /// penalty kind); its `epochs` are used to retrain the winner.
    pub base: NetConfig,
    pub seed: u64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            activations: vec![Activation::Tanh, Activation::Relu],
            depth_range: (1, 8),
            width_range: (1, 200),
            lambda_range: (1e-4, 1e-2),
            budget: 50,
            search_epochs: 50,
            base: NetConfig::default(),
            seed: 0,
        }
    }
}

impl SearchSpace {
    /// Depth up to 60 hidden layers; slow, and rarely better at desk scale.
    pub fn wide() -> Self {
        Self {
            depth_range: (1, 60),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Param(m));
        if self.activations.is_empty() {
            return bad("search space has no activations".into());
        }
        if self.depth_range.0 > self.depth_range.1 {
            return bad(format!("depth range {:?} is reversed", self.depth_range));
        }
        if self.width_range.0 == 0 || self.width_range.0 > self.width_range.1 {
            return bad(format!("width range {:?} must satisfy 1 ≤ lo ≤ hi", self.width_range));
        }
        let (lo, hi) = self.lambda_range;
        if !(lo > 0.0) || !(lo <= hi) || !hi.is_finite() {
            return bad(format!("lambda range {:?} must satisfy 0 < lo ≤ hi", self.lambda_range));
        }
        if self.budget == 0 {
            return bad("search budget must be at least 1".into());
        }
        Ok(())
    }

    /// Whether a configuration could have been drawn from this space.
    pub fn contains(&self, c: &NetConfig) -> bool {
        let depth = c.hidden_widths.len();
        self.activations.contains(&c.activation)
            && (self.depth_range.0..=self.depth_range.1).contains(&depth)
            && c
                .hidden_widths
                .iter()
                .all(|w| (self.width_range.0..=self.width_range.1).contains(w))
            && c.penalty_weight >= self.lambda_range.0
            && c.penalty_weight <= self.lambda_range.1
    }

    fn candidate_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }
}

/// Draw one configuration. Input/output sizes come from `base`.
pub fn sample_config<R: Rng>(space: &SearchSpace, rng: &mut R) -> NetConfig {
    let activation = space.activations[rng.random_range(0..space.activations.len())];
    let depth = rng.random_range(space.depth_range.0..=space.depth_range.1);
    let hidden_widths = (0..depth)
        .map(|_| rng.random_range(space.width_range.0..=space.width_range.1))
        .collect();
    let (lo, hi) = space.lambda_range;
    let penalty_weight = if lo == hi {
        lo
    } else {
        (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp().clamp(lo, hi)
    };
    NetConfig {
        activation,
        hidden_widths,
        penalty_weight,
        seed: rng.random(),
        ..space.base.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub index: usize,
    pub config: NetConfig,
    pub n_parameters: usize,
    pub val_mse: f64,
    pub train_mse: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Winner retrained for `base.epochs`.
    pub best: DeepNet,
    /// Sorted by validation MSE, then parameter count, then sample index.
    pub leaderboard: Vec<LeaderboardRow>,
    /// Candidates whose training failed, with the reason.
    pub failures: Vec<(usize, String)>,
}

fn design_mse(net: &DeepNet, d: &LagDesign) -> Result<f64> {
    let p = predict(net, d)?;
    let n = p.as_slice().len();
    Ok(p.as_slice()
        .iter()
        .zip(d.y.as_slice())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n as f64)
}

fn train_candidate(
    cfg: &NetConfig,
    train: &LagDesign,
    valid: &LagDesign,
) -> Result<(DeepNet, f64, f64)> {
    let net = sgd_train(&init_network(cfg)?, train, valid)?;
    let val = design_mse(&net, valid)?;
    let tr = design_mse(&net, train)?;
    if !val.is_finite() {
        return Err(Error::Training {
            epoch: cfg.epochs,
            message: "non-finite validation error".into(),
        });
    }
    Ok((net, val, tr))
}

/// Train `budget` sampled configurations on up to `workers` threads and
/// retrain the best one. Results do not depend on `workers`.
pub fn random_search(
    train: &LagDesign,
    valid: &LagDesign,
    space: &SearchSpace,
    workers: usize,
) -> Result<SearchOutcome> {
    space.validate()?;
    if valid.rows() == 0 {
        return Err(Error::Empty("random search needs validation rows".into()));
    }
    let mut base = space.base.clone();
    base.input_dim = train.x.cols();
    base.output_dim = train.y.cols();
    let space = SearchSpace { base, ..space.clone() };
    let configs: Vec<NetConfig> = (0..space.budget)
        .map(|i| sample_config(&space, &mut space.candidate_rng(i)))
        .collect();
    let run = || {
        configs
            .par_iter()
            .enumerate()
            .map(|(i, cfg)| {
                let started = Instant::now();
                let cfg = NetConfig {
                    epochs: space.search_epochs,
                    ..cfg.clone()
                };
                let r = train_candidate(&cfg, train, valid);
                (i, r.map(|(_, v, t)| (v, t)), started.elapsed().as_secs_f64())
            })
            .collect::<Vec<_>>()
    };
    let results = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Param(format!("thread pool: {e}")))?
        .install(run);

    let mut leaderboard = Vec::new();
    let mut failures = Vec::new();
    for (i, r, secs) in results {
        match r {
            Ok((val, tr)) => leaderboard.push(LeaderboardRow {
                index: i,
                n_parameters: configs[i].n_parameters(),
                config: configs[i].clone(),
                val_mse: val,
                train_mse: tr,
                seconds: secs,
            }),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    if leaderboard.is_empty() {
        let list: Vec<String> = failures.iter().map(|(i, e)| format!("#{i}: {e}")).collect();
        return Err(Error::Training {
            epoch: 0,
            message: format!("every candidate failed: {}", list.join("; ")),
        });
    }
    leaderboard.sort_by(|a, b| {
        a.val_mse
            .total_cmp(&b.val_mse)
            .then(a.n_parameters.cmp(&b.n_parameters))
            .then(a.index.cmp(&b.index))
    });
    let head = &leaderboard[0];
    let best = match train_candidate(&head.config, train, valid) {
        Ok((net, _, _)) => net,
        Err(_) => {
            // fall back to the search-length run, which is known to train
            let cfg = NetConfig {
                epochs: space.search_epochs,
                ..head.config.clone()
            };
            train_candidate(&cfg, train, valid)?.0
        }
    };
    Ok(SearchOutcome {
        best,
        leaderboard,
        failures,
    })
}

/// `rank, depth, widths, activation, lambda, val_mse, train_mse, seconds`.
pub fn write_leaderboard<W: Write>(rows: &[LeaderboardRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "rank",
        "depth",
        "widths",
        "activation",
        "lambda",
        "val_mse",
        "train_mse",
        "seconds",
    ])?;
    for (rank, r) in rows.iter().enumerate() {
        let widths: Vec<String> = r.config.hidden_widths.iter().map(|w| w.to_string()).collect();
        w.write_record([
            (rank + 1).to_string(),
            r.config.hidden_widths.len().to_string(),
            widths.join(";"),
            r.config.activation.to_string(),
            r.config.penalty_weight.to_string(),
            r.val_mse.to_string(),
            r.train_mse.to_string(),
            format!("{:.3}", r.seconds),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
