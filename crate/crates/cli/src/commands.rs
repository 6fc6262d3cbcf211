//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use simexplain::engine::{BackboneSpec, SimilarityEngine};
use simexplain::estimators::convergence_experiment;
use simexplain::eval::{
    evaluate, explain_joint, explain_marginal, read_dataset, synthetic_pair_dataset, timing_benchmark, write_dataset,
    write_report, EvalConfig, EvalReport, Method,
};
use simexplain::explainers::Side;
use simexplain::game::{harsanyi_dividends, shapley_direct, shapley_taylor_exact, CreditJson, GameJson};
use simexplain::image::{heatmap_overlay, Image, Mask};
use simexplain::perturb::AttentionMap;
use simexplain::record::write_atomic;
use simexplain::Error;

use crate::{ConvergeArgs, EvalArgs, ExplainArgs, GameArgs, GenDatasetArgs};

const OVERLAY_ALPHA: f32 = 0.5;

fn required<T>(value: Option<T>, flag: &str) -> Result<T, Error> {
    value.ok_or_else(|| Error::Config(format!("missing required option --{flag}")))
}

fn engine_spec(
    base: Option<BackboneSpec>,
    seed: Option<u64>,
    stride: Option<usize>,
    channels: Option<usize>,
) -> BackboneSpec {
    let mut spec = base.unwrap_or_default();
    spec.seed = seed.unwrap_or(spec.seed);
    spec.stride = stride.unwrap_or(spec.stride);
    spec.channels = channels.unwrap_or(spec.channels);
    spec
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_atomic(path, text.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_overlay(path: &Path, image: &Image, attention: &AttentionMap) -> Result<(), Error> {
    heatmap_overlay(image, attention.values(), OVERLAY_ALPHA)?.save_ppm(path)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn explain(a: ExplainArgs) -> Result<(), Error> {
    let query = Image::load_ppm(required(a.query, "query")?)?;
    let retrieved = Image::load_ppm(required(a.retrieved, "retrieved")?)?;
    let method = Method::parse(&required(a.method, "method")?)?;
    let (marginal, joint) = match a.mode.as_deref().unwrap_or("both") {
        "marginal" => (true, false),
        "joint" => (false, true),
        "both" => (true, true),
        other => {
            return Err(Error::Config(format!(
                "unknown mode {other:?}; expected marginal, joint or both"
            )))
        }
    };
    let sides: &[Side] = match a.side.as_deref().unwrap_or("query") {
        "query" => &[Side::Query],
        "retrieved" => &[Side::Retrieved],
        "both" => &[Side::Query, Side::Retrieved],
        other => {
            return Err(Error::Config(format!(
                "unknown side {other:?}; expected query, retrieved or both"
            )))
        }
    };
    let engine = SimilarityEngine::new(engine_spec(a.engine, a.engine_seed, a.stride, a.channels))?;
    let mut settings = a.settings.unwrap_or_default();
    if let Some(s) = a.samples {
        settings.marginal_samples = s;
        settings.joint_samples = s;
    }
    settings.grid = [a.rows.unwrap_or(settings.grid[0]), a.cols.unwrap_or(settings.grid[1])];
    settings.exact = a.exact.unwrap_or(settings.exact);
    let seed = a.seed.unwrap_or(0);
    let out = required(a.out, "out")?;
    std::fs::create_dir_all(&out)?;
    let name = method.as_str();

    if marginal {
        for &side in sides {
            let e = explain_marginal(method, &engine, &query, &retrieved, side, &settings, seed)?;
            let stem = format!("{name}_marginal_{}", side.as_str());
            write_text(&out.join(format!("{stem}.json")), &e.to_record().to_json()?)?;
            let image = if side == Side::Query { &query } else { &retrieved };
            write_overlay(&out.join(format!("{stem}.ppm")), image, &e.attention()?)?;
        }
    }
    if joint {
        let j = explain_joint(method, &engine, &query, &retrieved, &settings, seed)?;
        write_text(&out.join(format!("{name}_joint.json")), &j.to_record().to_json()?)?;
        let region = match a.query_mask {
            Some(p) => {
                let mask = Mask::read_pgm(std::io::BufReader::new(std::fs::File::open(p)?))?;
                AttentionMap::from_mask(&mask)
            }
            None => AttentionMap::uniform(query.width(), query.height()),
        };
        let projection = j.project(&region)?;
        if projection.degenerate {
            println!("projection had no signal; overlay shows uniform attention");
        }
        write_overlay(
            &out.join(format!("{name}_joint.ppm")),
            &retrieved,
            &projection.attention,
        )?;
    }
    Ok(())
}

fn print_summary(report: &EvalReport) {
    println!("method       mode      pairs  mean       random     win   p-value   mIoU");
    for s in &report.summary {
        let p = s.test.map_or_else(|| "-".to_string(), |t| format!("{:.2e}", t.p_value));
        let miou = s.mean_miou.map_or_else(|| "-".to_string(), |m| format!("{m:.3}"));
        println!(
            "{:<12} {:<9} {:>5}  {:<+10.5} {:<+10.5} {:.2}  {:<9} {}",
            s.method, s.mode, s.pairs, s.mean_score, s.mean_random, s.win_rate, p, miou
        );
    }
}

pub fn eval(a: EvalArgs) -> Result<(), Error> {
    let out = required(a.out, "out")?;
    let pairs = match a.dataset {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(Error::Argument(format!(
                    "dataset directory {} does not exist",
                    dir.display()
                )));
            }
            read_dataset(&dir)?
        }
        None => synthetic_pair_dataset(
            a.count.unwrap_or(50),
            a.dataset_seed.unwrap_or(0),
            &a.synthetic.unwrap_or_default(),
        )?,
    };
    let defaults = EvalConfig::default();
    let methods = match a.methods {
        Some(names) => names
            .iter()
            .map(|m| Method::parse(m.trim()))
            .collect::<Result<Vec<_>, _>>()?,
        None => defaults.methods,
    };
    let config = EvalConfig {
        engine: engine_spec(a.engine, a.engine_seed, a.stride, a.channels),
        methods,
        settings: a.settings.unwrap_or_default(),
        fraction: a.fraction.unwrap_or(defaults.fraction),
        random_seeds: a.random_seeds.unwrap_or(defaults.random_seeds),
        seed: a.seed.unwrap_or(defaults.seed),
    };
    let engine = SimilarityEngine::new(config.engine)?;
    let report = evaluate(&engine, &pairs, &config)?;
    write_report(&out, &report)?;
    println!(
        "wrote {} and {}",
        out.join("report.csv").display(),
        out.join("report.json").display()
    );
    print_summary(&report);
    if a.timing.unwrap_or(false) {
        let timing = timing_benchmark(&engine, &config.methods, &pairs, &config)?;
        write_text(&out.join("timing.csv"), &timing.to_csv())?;
        write_text(&out.join("timing.json"), &timing.to_json()?)?;
    }
    Ok(())
}

pub fn converge(a: ConvergeArgs) -> Result<(), Error> {
    let out = required(a.out, "out")?;
    let budgets = a.budgets.unwrap_or_else(|| vec![64, 128, 256]);
    let report = convergence_experiment(a.n.unwrap_or(8), &budgets, a.trials.unwrap_or(20), a.seed.unwrap_or(0))?;
    write_text(&out, &report.to_csv())?;
    let json: PathBuf = out.with_extension("json");
    write_text(&json, &serde_json::to_string_pretty(&report)?)?;
    for c in &report.curves {
        let medians: Vec<String> = c.median_mse.iter().map(|m| format!("{m:.3e}")).collect();
        println!(
            "{:<10} median MSE at {:?}: {}",
            c.estimator,
            c.evaluations,
            medians.join(", ")
        );
    }
    Ok(())
}

pub fn gen_dataset(a: GenDatasetArgs) -> Result<(), Error> {
    let out = required(a.out, "out")?;
    let pairs = synthetic_pair_dataset(
        a.count.unwrap_or(50),
        a.seed.unwrap_or(0),
        &a.synthetic.unwrap_or_default(),
    )?;
    std::fs::create_dir_all(&out)?;
    write_dataset(&out, &pairs)?;
    println!("wrote {} pairs to {}", pairs.len(), out.display());
    Ok(())
}

pub fn game(a: GameArgs) -> Result<(), Error> {
    let action = required(a.action, "action")?;
    let text = std::fs::read_to_string(required(a.input, "input")?)?;
    let game = serde_json::from_str::<GameJson>(&text)?.into_game()?;
    let value = match action.as_str() {
        "dividends" => {
            let d = harsanyi_dividends(&game)?;
            let values: BTreeMap<String, f64> = d.iter().map(|(c, v)| (c.to_string(), v)).collect();
            serde_json::json!({ "n": game.n(), "dividends": values })
        }
        "shapley" => serde_json::to_value(CreditJson::from(&shapley_direct(&game)?))?,
        "shapley-taylor" => serde_json::to_value(CreditJson::from(&shapley_taylor_exact(&game, a.k.unwrap_or(2))?))?,
        other => {
            return Err(Error::Config(format!(
                "unknown game action {other:?}; expected dividends, shapley or shapley-taylor"
            )))
        }
    };
    let text = serde_json::to_string_pretty(&value)? + "\n";
    match a.out {
        Some(p) => write_text(&p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
