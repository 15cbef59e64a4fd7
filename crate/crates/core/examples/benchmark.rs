//! Synthetic benchmark: 120 weekdays, first 60 train, last 60 test.
//!
//! `cargo run --release --example benchmark` prints the comparison table.
//! `BUDGET`, `EPOCHS`, `SEARCH_EPOCHS` and `SEED` override the defaults.

use std::time::Instant;

use flowcast::datastore::SplitPolicy;
use flowcast::deepnet::NetConfig;
use flowcast::diagnostics::{box_pierce, Portmanteau};
use flowcast::evalharness::{compare_models, EvalOptions, ModelSpec, PipelineSpec, Selector};
use flowcast::filters::FilterSpec;
use flowcast::hypersearch::SearchSpace;
use flowcast::synthgen::{gen_dataset, CorridorParams, DayMix};

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> flowcast::Result<()> {
    let seed: u64 = env("SEED", 7);
    let params = CorridorParams { seed, ..Default::default() };
    let t0 = Instant::now();
    let field = gen_dataset(&params, 120, &DayMix::default())?;
    eprintln!("generated in {:.1}s", t0.elapsed().as_secs_f64());

    let space = SearchSpace {
        depth_range: (env("DMIN", 1), env("DMAX", 8)),
        width_range: (env("WMIN", 1), env("WMAX", 200)),
        budget: env("BUDGET", 20),
        search_epochs: env("SEARCH_EPOCHS", 50),
        base: NetConfig { epochs: env("EPOCHS", 200), ..Default::default() },
        seed,
        ..Default::default()
    };
    let one_layer = SearchSpace { depth_range: (1, 1), ..space.clone() };
    let m8 = FilterSpec::Median { window: 8 };
    let lasso = Selector::Lasso { lambda: None };
    let spec = |label: Option<&str>, filter, selector, model| PipelineSpec {
        label: label.map(str::to_string),
        filter,
        selector,
        model,
        horizon: 8,
        lags: 12,
        target: "S11".into(),
    };
    let specs = vec![
        spec(None, FilterSpec::None, Selector::None, ModelSpec::Naive),
        spec(None, m8, Selector::None, ModelSpec::Naive),
        spec(None, m8, lasso.clone(), ModelSpec::Var { lambda: None }),
        spec(None, m8, lasso.clone(), ModelSpec::DlSearch { space: space.clone() }),
        spec(None, FilterSpec::None, lasso.clone(), ModelSpec::DlSearch { space: space.clone() }),
        spec(Some("DLM8L-1"), m8, lasso, ModelSpec::DlSearch { space: one_layer }),
    ];
    let opts = EvalOptions { workers: env("WORKERS", 1), ..Default::default() };
    for s in &specs {
        let t = Instant::now();
        let c = compare_models(std::slice::from_ref(s), &field, &SplitPolicy::FirstHalfDays, &opts)?;
        print!("{c}");
        if let Err((l, e)) = &c.results[0] {
            eprintln!("  {l} failed: {e}");
        }
        if let Ok(p) = &c.results[0] {
            let r = p.test.residuals();
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            let q = box_pierce(&r, 24, Portmanteau::LjungBox)?.statistic;
            eprintln!("  test residual mean {mean:.3}, Ljung-Box Q {q:.1}");
            if let Some(sel) = &p.selected {
                eprintln!("  selected {} columns", sel.len());
            }
            if let Some(lb) = &p.leaderboard {
                let h = &lb[0];
                eprintln!("  best {:?} {} λ={:.2e} val {:.3}", h.config.hidden_widths, h.config.activation, h.config.penalty_weight, h.val_mse);
            }
        }
        eprintln!("  {:.1}s", t.elapsed().as_secs_f64());
    }
    Ok(())
}
