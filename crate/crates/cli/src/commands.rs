use std::fs;
use std::path::{Path, PathBuf};

use dualmoco::datagen::{
    load_mining_tsv, load_nli_tsv, load_sts_tsv, load_tsv, save_mining_tsv, save_nli_tsv, save_sts_tsv, save_tsv,
    Language, Lexicon, ParallelCorpus, World,
};
use dualmoco::encoder::{EncoderParams, TokenSequence};
use dualmoco::eval::{embed_matrix, mine_bitext, mining_eval, retrieval_accuracy, sts_eval_threads, CandidateMode};
use dualmoco::formats::{load_checkpoint, load_embeddings, save_checkpoint, save_embeddings, save_moco_state};
use dualmoco::trainer::{train as run_training, EvalData, TrainData};
use serde::Serialize;
use serde_json::json;

use crate::config::{require, RunConfig};
use crate::error::CliError;

pub const PARALLEL_FILE: &str = "parallel.tsv";
pub const STS_FILE: &str = "sts.tsv";
pub const NLI_FILE: &str = "nli.tsv";
pub const MINING_VALIDATION_FILE: &str = "mining_validation.tsv";
pub const MINING_TEST_FILE: &str = "mining_test.tsv";
pub const LEXICON_FILE: &str = "lexicon.json";

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn prepare_out(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    config.write(out)
}

fn load_encoders(config: &RunConfig) -> Result<(EncoderParams, EncoderParams), CliError> {
    let path = require(&config.paths.checkpoint, "--checkpoint")?;
    Ok(load_checkpoint(&path)?)
}

fn data_file(config: &RunConfig, name: &str) -> Result<PathBuf, CliError> {
    Ok(require(&config.paths.data_dir, "--data")?.join(name))
}

pub fn gen_data(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let world = World::generate(&config.data)?;
    prepare_out(config, out)?;
    save_tsv(&world.parallel, &out.join(PARALLEL_FILE))?;
    save_sts_tsv(&world.sts, &out.join(STS_FILE))?;
    save_nli_tsv(&world.nli, &out.join(NLI_FILE))?;
    save_mining_tsv(&world.mining_validation, &out.join(MINING_VALIDATION_FILE))?;
    save_mining_tsv(&world.mining_test, &out.join(MINING_TEST_FILE))?;
    write_json(&out.join(LEXICON_FILE), &world.lexicon)?;
    log::info!(
        "wrote {} parallel pairs, {} STS pairs, {} NLI triples to {}",
        world.parallel.len(),
        world.sts.len(),
        world.nli.len(),
        out.display()
    );
    Ok(())
}

/// Vocabulary size from the lexicon when present, else one past the largest
/// token id seen in the parallel corpus.
fn vocab_sizes(config: &RunConfig, corpus: &ParallelCorpus) -> Result<(usize, usize), CliError> {
    let path = data_file(config, LEXICON_FILE)?;
    if path.exists() {
        let text = fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let lex: Lexicon = serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        return Ok((lex.vocab_size(), lex.vocab_size()));
    }
    Ok(corpus.observed_vocab())
}

pub fn train(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let corpus = load_tsv(&data_file(config, PARALLEL_FILE)?)?;
    let sts_path = data_file(config, STS_FILE)?;
    let sts = if sts_path.exists() {
        Some(load_sts_tsv(&sts_path)?)
    } else {
        None
    };
    let nli = if config.nli {
        Some(load_nli_tsv(&data_file(config, NLI_FILE)?)?)
    } else {
        None
    };
    let (vocab_a, vocab_b) = vocab_sizes(config, &corpus)?;
    let (test_a, test_b) = corpus.sides(dualmoco::datagen::Split::Test);
    let data = TrainData {
        vocab_a,
        vocab_b,
        corpus: &corpus,
        nli: nli.as_deref(),
        eval: EvalData {
            retrieval: (!test_a.is_empty()).then_some((&test_a[..], &test_b[..])),
            sts: sts.as_deref(),
        },
    };
    prepare_out(config, out)?;
    log::info!(
        "training on {} pairs (vocab {vocab_a}/{vocab_b})",
        corpus.split(dualmoco::datagen::Split::Train).len()
    );
    let outcome = run_training(&config.train, &data)?;
    for e in outcome.log.epochs() {
        log::info!(
            "epoch {}: retrieval {:?}/{:?}, sts {:?}",
            e.epoch,
            e.retrieval_acc_ab,
            e.retrieval_acc_ba,
            e.sts_spearman
        );
    }
    let mut log_file = fs::File::create(out.join("metrics.jsonl"))?;
    outcome.log.write_jsonl(&mut log_file)?;
    save_checkpoint(
        &out.join("checkpoint.dmc"),
        &outcome.state.base_a,
        &outcome.state.base_b,
    )?;
    save_moco_state(&out.join("state"), &outcome.state)?;
    if let Some(head) = &outcome.nli_head {
        write_json(&out.join("nli_head.json"), head)?;
    }
    let last = outcome.log.epochs().last();
    write_json(
        &out.join("summary.json"),
        &json!({
            "steps": outcome.log.steps().count(),
            "final_loss": outcome.log.steps().last().map(|s| s.loss_total),
            "retrieval_acc_ab": last.and_then(|e| e.retrieval_acc_ab),
            "retrieval_acc_ba": last.and_then(|e| e.retrieval_acc_ba),
            "sts_spearman": last.and_then(|e| e.sts_spearman),
        }),
    )?;
    Ok(())
}

pub fn embed(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (enc_a, enc_b) = load_encoders(config)?;
    let path = data_file(config, PARALLEL_FILE)?;
    let corpus = load_tsv(&path)?;
    let (a, b) = corpus.sides(config.eval.split);
    if a.is_empty() {
        return Err(CliError::Usage(format!(
            "split `{}` is empty in {}",
            config.eval.split,
            path.display()
        )));
    }
    let pooling = config.train.pooling;
    let ma = embed_matrix(&enc_a, &a, pooling, config.eval.threads)?;
    let mb = embed_matrix(&enc_b, &b, pooling, config.eval.threads)?;
    prepare_out(config, out)?;
    let source = format!("{}#{}", path.display(), config.eval.split);
    save_embeddings(&out.join("embeddings_a.dmce"), &ma, &format!("{source}:a"))?;
    save_embeddings(&out.join("embeddings_b.dmce"), &mb, &format!("{source}:b"))?;
    log::info!("encoded {} aligned pairs into {}", a.len(), out.display());
    Ok(())
}

pub fn eval_retrieval(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let dir = require(&config.paths.embeddings_dir, "--embeddings")?;
    let a = load_embeddings(&dir.join("embeddings_a.dmce"))?;
    let b = load_embeddings(&dir.join("embeddings_b.dmce"))?;
    let (fwd, bwd) = retrieval_accuracy(&a, &b)?;
    prepare_out(config, out)?;
    write_json(
        &out.join("retrieval.json"),
        &json!({ "acc_forward": fwd, "acc_backward": bwd, "count": a.rows() }),
    )?;
    log::info!("retrieval accuracy A→B {fwd:.4}, B→A {bwd:.4}");
    Ok(())
}

pub fn mine(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (enc_a, enc_b) = load_encoders(config)?;
    let validation = load_mining_tsv(&data_file(config, MINING_VALIDATION_FILE)?)?;
    let test = load_mining_tsv(&data_file(config, MINING_TEST_FILE)?)?;
    let (pooling, threads, variant) = (config.train.pooling, config.eval.threads, config.eval.margin);
    let report = mining_eval(&enc_a, &enc_b, &validation, &test, variant, pooling, threads)?;
    let ta = embed_matrix(&enc_a, &test.tokens_a(), pooling, threads)?;
    let tb = embed_matrix(&enc_b, &test.tokens_b(), pooling, threads)?;
    let mined = mine_bitext(
        &ta,
        &tb,
        dualmoco::eval::DEFAULT_MARGIN_K,
        variant,
        report.lambda,
        CandidateMode::UnionNn1,
    )?;
    prepare_out(config, out)?;
    write_json(
        &out.join("mining.json"),
        &json!({
            "variant": variant,
            "lambda": report.lambda,
            "validation_f1": report.validation_f1,
            "precision": report.test.precision,
            "recall": report.test.recall,
            "f1": report.test.f1,
            "pairs": mined.accepted,
        }),
    )?;
    log::info!(
        "mining ({variant}) λ = {:.4}: test F1 {:.4}",
        report.lambda,
        report.test.f1
    );
    Ok(())
}

pub fn eval_sts(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (enc_a, _) = load_encoders(config)?;
    let pairs = load_sts_tsv(&data_file(config, STS_FILE)?)?;
    let rho = sts_eval_threads(&enc_a, &pairs, config.train.pooling, config.eval.threads)?;
    prepare_out(config, out)?;
    write_json(&out.join("sts.json"), &json!({ "spearman": rho, "count": pairs.len() }))?;
    log::info!("STS Spearman {rho:.4} over {} pairs", pairs.len());
    Ok(())
}

fn read_token_lines(path: &Path) -> Result<Vec<TokenSequence>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ids = line
            .split_whitespace()
            .map(|t| t.parse::<u32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Io(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(TokenSequence::new(ids)?);
    }
    if out.is_empty() {
        return Err(CliError::Io(format!("{}: no sentences", path.display())));
    }
    Ok(out)
}

pub fn dump_embeddings(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (enc_a, enc_b) = load_encoders(config)?;
    let input = require(&config.paths.input, "--input")?;
    let sentences = read_token_lines(&input)?;
    let encoder = match config.eval.language {
        Language::A => &enc_a,
        Language::B => &enc_b,
    };
    let m = embed_matrix(encoder, &sentences, config.train.pooling, config.eval.threads)?;
    prepare_out(config, out)?;
    let source = format!("{}:{}", input.display(), config.eval.language);
    let sidecar = save_embeddings(&out.join("embeddings.dmce"), &m, &source)?;
    log::info!(
        "dumped {} × {} embeddings (sha256 {})",
        sidecar.count,
        sidecar.dim,
        sidecar.checksum
    );
    Ok(())
}
