//! End-to-end reproduction run: generate the zoo, compare construction
//! strategies, train, evaluate retrieval and the surrogate, run ablations.
//! Produces a markdown report plus CSV tables and one hash over all of them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::contrastive::{evaluate_surrogate, meta_train, Objective, TrainConfig};
use crate::encoders::EmbeddingMode;
use crate::error::{Error, Result};
use crate::retrieval::{
    build_index, constraint_cases, evaluate_constrained, evaluate_ranker, evaluate_retrieval,
    LargestParameterRanker, RandomRanker, RetrievalMetrics, RERANK_K,
};
use crate::seed;
use crate::synth::{build_full_zoo, SynthConfig};
use crate::zoo_builder::{construct_zoo, BuilderConfig, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Construction budget as a fraction of the universe.
    pub budget_fraction: f64,
    pub constraint_cases: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: crate::synth::DEFAULT_SEED,
            epochs: 200,
            budget_fraction: 0.5,
            constraint_cases: 50,
        }
    }
}

/// Report files by name, plus the hash binding them together.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub files: BTreeMap<String, String>,
    pub hash: String,
}

impl BenchReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in &self.files {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        let p = dir.join("report.sha256");
        std::fs::write(&p, format!("{}\n", self.hash)).map_err(|e| Error::io(&p, e))
    }
}

fn metrics_row(name: &str, m: &RetrievalMetrics) -> String {
    format!(
        "{name},{:.4},{:.4},{:.4},{:.3},{:.1}\n",
        m.r_at_1, m.r_at_5, m.r_at_10, m.mean_rank, m.median_rank
    )
}

pub fn run(cfg: &BenchConfig) -> Result<BenchReport> {
    if !(cfg.budget_fraction > 0.0 && cfg.budget_fraction <= 1.0) {
        return Err(Error::invalid("budget_fraction must be in (0, 1]"));
    }
    let synth = SynthConfig {
        rng_seed: cfg.seed,
        ..Default::default()
    };
    let zoo = build_full_zoo(&synth)?;
    info!("bench: zoo with {} entries", zoo.len());

    let budget = ((zoo.len() as f64 * cfg.budget_fraction).round() as usize).max(1);
    let mut construction = String::from("strategy,iteration,pair_id,total_hypervolume\n");
    let mut finals = Vec::new();
    for strategy in [Strategy::Greedy, Strategy::Random, Strategy::LargestParam] {
        let c = construct_zoo(
            &zoo,
            &BuilderConfig {
                rng_seed: cfg.seed,
                budget: Some(budget),
                strategy,
                ..Default::default()
            },
        )?;
        let name = serde_json::to_value(strategy).expect("enum serializes");
        let name = name.as_str().unwrap_or_default().to_string();
        for t in &c.trace {
            writeln!(
                construction,
                "{name},{},{},{:.6}",
                t.iteration, t.pair_id, t.total_hypervolume
            )
            .expect("string write");
        }
        finals.push((name, c.trace.last().map_or(0.0, |t| t.total_hypervolume)));
    }

    let base = TrainConfig {
        rng_seed: cfg.seed,
        epochs: cfg.epochs,
        ..Default::default()
    };
    let full = meta_train(&zoo, &base)?;
    let index = build_index(&zoo, &full.model)?;
    let mut loss = String::from("epoch,l_m,l_q,l_s,total\n");
    for e in &full.trace {
        let p = e.parts;
        writeln!(
            loss,
            "{},{:.6},{:.6},{:.6},{:.6}",
            e.epoch, p.l_m, p.l_q, p.l_s, p.total
        )
        .expect("string write");
    }

    let mut rows: Vec<(String, RetrievalMetrics)> =
        vec![("tans".into(), evaluate_retrieval(&index, &zoo)?)];
    for (name, objective, mode) in [
        (
            "cosine-regression",
            Objective::CosineRegression,
            EmbeddingMode::Full,
        ),
        (
            "no-functional-embedding",
            Objective::Contrastive,
            EmbeddingMode::TopologyOnly,
        ),
    ] {
        let out = meta_train(
            &zoo,
            &TrainConfig {
                objective,
                mode,
                ..base.clone()
            },
        )?;
        rows.push((
            name.into(),
            evaluate_retrieval(&build_index(&zoo, &out.model)?, &zoo)?,
        ));
    }
    let ids: Vec<String> = zoo.networks.keys().cloned().collect();
    rows.push((
        "random".into(),
        evaluate_ranker(
            &RandomRanker {
                model_ids: ids,
                seed: cfg.seed,
            },
            &zoo,
        )?,
    ));
    rows.push((
        "largest-parameter".into(),
        evaluate_ranker(&LargestParameterRanker::new(&zoo), &zoo)?,
    ));
    let mut retrieval = String::from("method,r_at_1,r_at_5,r_at_10,mean_rank,median_rank\n");
    for (name, m) in &rows {
        retrieval.push_str(&metrics_row(name, m));
    }

    let sm = evaluate_surrogate(&full.model, &zoo, &full.holdout)?;
    let cases = constraint_cases(
        &zoo,
        cfg.constraint_cases,
        seed::derive(cfg.seed, "bench", &[]),
    )?;
    let with = evaluate_constrained(&index, &zoo, &cases, RERANK_K, true)?;
    let without = evaluate_constrained(&index, &zoo, &cases, RERANK_K, false)?;
    let mut constrained = String::from(
        "dataset_id,max_params,max_flops,top1_rerank,top1_accuracy_rerank,top1_plain,top1_accuracy_plain,best_feasible_accuracy\n",
    );
    for ((c, a), b) in cases.iter().zip(&with.cases).zip(&without.cases) {
        writeln!(
            constrained,
            "{},{},{},{},{:.4},{},{:.4},{:.4}",
            c.dataset_id,
            c.constraints.max_params.unwrap_or(0),
            c.constraints.max_flops.unwrap_or(0),
            a.top1_id.as_deref().unwrap_or(""),
            a.top1_accuracy,
            b.top1_id.as_deref().unwrap_or(""),
            b.top1_accuracy,
            a.best_feasible_accuracy
        )
        .expect("string write");
    }

    let mut md = String::new();
    writeln!(md, "# tanszoo bench (seed {})\n", cfg.seed).expect("string write");
    writeln!(
        md,
        "Zoo: {} datasets, {} networks, {} entries. Training: {} epochs.\n",
        zoo.datasets.len(),
        zoo.networks.len(),
        zoo.len(),
        cfg.epochs
    )
    .expect("string write");
    md.push_str("## Retrieval (held-out probes)\n\n| method | R@1 | R@5 | R@10 | mean rank | median rank |\n|---|---|---|---|---|---|\n");
    for (name, m) in &rows {
        writeln!(
            md,
            "| {name} | {:.3} | {:.3} | {:.3} | {:.2} | {:.1} |",
            m.r_at_1, m.r_at_5, m.r_at_10, m.mean_rank, m.median_rank
        )
        .expect("string write");
    }
    md.push_str("\n## Accuracy surrogate (held-out networks)\n\n| predictor | MSE |\n|---|---|\n");
    for (name, v) in [
        ("full", sm.mse),
        ("without query", sm.mse_no_query),
        ("without model", sm.mse_no_model),
        ("constant mean", sm.baseline_mse),
    ] {
        writeln!(md, "| {name} | {v:.5} |").expect("string write");
    }
    writeln!(
        md,
        "\n## Constrained retrieval ({} cases, k = {RERANK_K})\n\n| rerank | bounds satisfied | top-1 matches best feasible |\n|---|---|---|\n| on | {:.3} | {:.3} |\n| off | {:.3} | {:.3} |",
        cases.len(),
        with.satisfaction_rate,
        with.hit_rate,
        without.satisfaction_rate,
        without.hit_rate
    )
    .expect("string write");
    writeln!(
        md,
        "\n## Zoo construction (budget {budget} of {})\n\n| strategy | final sum of g_D |\n|---|---|",
        zoo.len()
    )
    .expect("string write");
    for (name, v) in &finals {
        writeln!(md, "| {name} | {v:.4} |").expect("string write");
    }

    let files: BTreeMap<String, String> = [
        ("report.md", md),
        ("retrieval.csv", retrieval),
        ("loss.csv", loss),
        ("construction.csv", construction),
        ("constrained.csv", constrained),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let mut all = Vec::new();
    for (name, body) in &files {
        all.extend_from_slice(name.as_bytes());
        all.push(0);
        all.extend_from_slice(body.as_bytes());
        all.push(0);
    }
    Ok(BenchReport {
        hash: seed::sha256_hex(&all),
        files,
    })
}
