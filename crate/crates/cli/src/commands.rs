use std::fs;
use std::io::{self, BufRead, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;
use wcaps_core::corpus::{generate_synthetic, load_dataset, DataFormat, Dataset, SyntheticSpec};
use wcaps_core::dbd::{build_domain_stats, word_dbd, DomainStats};
use wcaps_core::ensemble::{
    cross_validate, evaluate, load_model, save_model, EvalReport, TrainConfig, TrainingMeta,
};
use wcaps_core::layers::NetworkArch;
use wcaps_core::text::{load_stopwords, preprocess, MaxLen, PipelineConfig};
use wcaps_core::train_ensemble;

use crate::report::eval_tsv;
use crate::{
    Command, DbdArgs, EvalArgs, PredictArgs, ReportFormat, SynthArgs, TrainArgs,
    DEFAULT_MODEL_FILE, MODEL_DIR_ENV,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Dbd(a) => dbd(a),
    }
}

fn read_data(path: &Path) -> Result<Dataset> {
    load_dataset(path, DataFormat::from_path(path))
        .with_context(|| format!("reading dataset {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Standard output unless a path is given.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        num_domains: a.domains,
        docs_per_domain: a.docs_per_domain,
        domain_vocab_size: a.domain_vocab,
        sentiment_lexicon_size: a.sentiment_words,
        vocab_overlap: a.vocab_overlap,
        imbalance_ratio: a.imbalance,
        doc_length_range: (a.min_len, a.max_len),
        seed: a.seed,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec)?;
    data.save_jsonl(&a.output)
        .with_context(|| format!("writing {}", a.output.display()))?;
    eprintln!(
        "wrote {} documents in {} domains to {}",
        data.len(),
        data.domains().len(),
        a.output.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct DomainLog<'a> {
    domain: &'a str,
    #[serde(flatten)]
    meta: &'a TrainingMeta,
}

#[derive(Serialize)]
struct TrainLog<'a> {
    data: String,
    documents: usize,
    vocabulary_size: usize,
    parameters_per_domain: usize,
    config: &'a TrainConfig,
    arch: NetworkArch,
    domains: Vec<DomainLog<'a>>,
}

#[derive(Serialize)]
struct CrossValidation {
    folds: usize,
    mean_polarity_accuracy: f64,
    mean_domain_accuracy: f64,
    reports: Vec<EvalReport>,
}

fn log_path(model: &Path) -> PathBuf {
    let mut name = model.as_os_str().to_owned();
    name.push(".log.json");
    PathBuf::from(name)
}

fn train(a: TrainArgs) -> Result<()> {
    let data = read_data(&a.data)?;
    let mut pipeline = PipelineConfig {
        min_count: a.min_count,
        max_len: a.max_len.map_or(MaxLen::Auto, MaxLen::Cap),
        embed_dim: a.embed_dim,
        ..PipelineConfig::default()
    };
    if let Some(path) = &a.stopwords {
        let words = load_stopwords(path)
            .with_context(|| format!("reading stopwords {}", path.display()))?;
        pipeline = pipeline.with_stopwords(words);
    }
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        seed: a.seed,
        cost_sensitive: a.cost_sensitive,
        minority: a.minority,
        pipeline,
        arch: NetworkArch {
            hidden_dim: a.hidden_dim,
            num_capsules: a.capsules,
            capsule_dim: a.capsule_dim,
            routing_iterations: a.routing_iterations,
            ..NetworkArch::default()
        },
        embeddings: a.embeddings.clone(),
        ..TrainConfig::default()
    };

    if let (Some(k), Some(path)) = (a.folds, &a.cv_report) {
        let reports = cross_validate(&data, k, &config)?;
        let mean =
            |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
        let cv = CrossValidation {
            folds: k,
            mean_polarity_accuracy: mean(|r| r.polarity.accuracy),
            mean_domain_accuracy: mean(|r| r.domain.accuracy),
            reports,
        };
        write_json(path, &cv)?;
        eprintln!(
            "{k}-fold cross-validation: polarity accuracy {:.4}, domain accuracy {:.4}",
            cv.mean_polarity_accuracy, cv.mean_domain_accuracy
        );
    }

    let model = train_ensemble(&data, &config)?;
    save_model(&model, &a.output)
        .with_context(|| format!("writing model {}", a.output.display()))?;
    let log = TrainLog {
        data: a.data.display().to_string(),
        documents: data.len(),
        vocabulary_size: model.vocab.len(),
        parameters_per_domain: model.models.first().map_or(0, |m| m.params.param_count()),
        config: &config,
        arch: model.arch,
        domains: model
            .models
            .iter()
            .map(|m| DomainLog {
                domain: &m.domain,
                meta: &m.meta,
            })
            .collect(),
    };
    write_json(&a.log.unwrap_or_else(|| log_path(&a.output)), &log)?;
    eprintln!(
        "trained {} domain models, wrote {}",
        model.models.len(),
        a.output.display()
    );
    Ok(())
}

fn open_model(path: &Path) -> Result<wcaps_core::EnsembleModel> {
    if !path.exists() {
        bail!("model file {} does not exist", path.display());
    }
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = open_model(&a.model)?;
    let data = read_data(&a.data)?;
    let report = evaluate(&model, &data)?;
    let mut out = sink(a.output.as_deref())?;
    match a.format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, &report)?;
            writeln!(out)?;
        }
        ReportFormat::Tsv => out.write_all(eval_tsv(&report).as_bytes())?,
    }
    out.flush()?;
    Ok(())
}

fn resolve_model(explicit: Option<PathBuf>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p);
    }
    match std::env::var_os(MODEL_DIR_ENV) {
        Some(dir) if !dir.is_empty() => Ok(Path::new(&dir).join(DEFAULT_MODEL_FILE)),
        _ => bail!("no model file: pass --model or set {MODEL_DIR_ENV} to a directory containing {DEFAULT_MODEL_FILE}"),
    }
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = open_model(&resolve_model(a.model)?)?;
    let mut input = String::new();
    match &a.input {
        Some(p) => {
            input = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        }
        None => {
            io::stdin()
                .lock()
                .read_to_string(&mut input)
                .context("reading standard input")?;
        }
    }
    let mut out = sink(a.output.as_deref())?;
    for (i, line) in input.as_bytes().lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let prediction = model.predict(&line)?;
        let mut record = serde_json::to_value(&prediction)?;
        if let Value::Object(map) = &mut record {
            map.insert("line".into(), Value::from(i + 1));
        }
        serde_json::to_writer(&mut out, &record)?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn dbd(a: DbdArgs) -> Result<()> {
    let (stats, pipeline): (DomainStats, PipelineConfig) = match (&a.model, &a.data) {
        (Some(m), _) => {
            let model = open_model(m)?;
            (model.stats, model.pipeline)
        }
        (None, Some(d)) => {
            let pipeline = PipelineConfig::default();
            (build_domain_stats(&read_data(d)?, &pipeline)?, pipeline)
        }
        (None, None) => bail!("pass --model or --data"),
    };
    let tokens: Vec<String> = if a.tokens.is_empty() {
        stats.tokens().map(str::to_owned).collect()
    } else {
        a.tokens
            .iter()
            .flat_map(|t| preprocess(t, &pipeline))
            .collect()
    };
    let mut out = sink(a.output.as_deref())?;
    writeln!(out, "token\tdomain\tcount\ttf\tidf\tdbd")?;
    for tok in &tokens {
        for (i, domain) in stats.domains().iter().enumerate() {
            let w = word_dbd(tok, i, &stats);
            writeln!(
                out,
                "{tok}\t{domain}\t{}\t{}\t{}\t{}",
                stats.count(tok, i),
                w.tf,
                w.idf,
                w.dbd
            )?;
        }
    }
    out.flush()?;
    Ok(())
}
