use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, Context};
use mds_core::acquisition::walk_relations;
use mds_core::checkpoint;
use mds_core::corpus::{read_records, write_records, CorpusRecord};
use mds_core::decoder::generate;
use mds_core::kb::{build_graph, parse_kb};
use mds_core::metrics::evaluate;
use mds_core::pipeline::{build_vocabulary, feature_dim_for, inference_context};
use mds_core::regularizer::semantic_pair;
use mds_core::synth::{make_synthetic_corpus, SynthConfig};
use mds_core::text::detokenize;
use mds_core::train::{train, TrainError};
use mds_core::{
    composer, AcquisitionConfig, DialogContext, DialogPair, KnowledgeBase, Model, ModelShape, Pipeline, Tape,
    TrainingConfig, Vocabulary,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{Command, ConfigArgs, Output};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest { kb, corpus, out } => {
            let kb = load_kb(&kb)?;
            let graph = build_graph(&kb);
            let mut summary = json!({
                "entities": kb.len(),
                "mean_attributes": kb.mean_attributes(),
                "feature_dim": kb.feature_dim(),
                "graph_nodes": graph.nodes().len(),
                "graph_edges": graph.edges().len(),
            });
            if let Some(path) = corpus {
                let pairs = pairs_of(&load_corpus(&path)?);
                feature_dim_for(&kb, &pairs).map_err(|e| CliError::input(anyhow!(e)))?;
                summary["pairs"] = json!(pairs.len());
                summary["vocabulary"] = json!(build_vocabulary(&kb, &pairs).len());
            }
            let mut w = sink(&out)?;
            emit(&mut w, &summary)?;
            finish(w)
        }
        Command::Walk { kb, seeds, hops, max_tuples, out } => {
            let kb = load_kb(&kb)?;
            let graph = build_graph(&kb);
            for s in seeds.iter().filter(|s| !graph.contains_node(s)) {
                log::warn!("seed {s:?} is not a graph node");
            }
            let cfg = AcquisitionConfig { max_hops: hops as usize, max_tuples, ..Default::default() };
            let mut w = sink(&out)?;
            for t in walk_relations(&graph, &seeds, &cfg) {
                emit(&mut w, &t)?;
            }
            finish(w)
        }
        Command::Retrieve { kb, context, epsilon, hops, out } => {
            if !epsilon.is_finite() {
                return Err(CliError::input(anyhow!("--epsilon must be finite")));
            }
            let pipeline = Pipeline::new(load_kb(&kb)?, AcquisitionConfig { epsilon, max_hops: hops as usize, max_tuples: None });
            let ctx = load_context(&context.context)?;
            let mut w = sink(&out)?;
            emit(&mut w, &pipeline.acquire(&ctx))?;
            finish(w)
        }
        Command::Train { kb, corpus, checkpoint: ckpt, config, out } => {
            let cfg = resolve_config(&config)?;
            let kb = load_kb(&kb)?;
            let pairs = pairs_of(&load_corpus(&corpus)?);
            let feature_dim = feature_dim_for(&kb, &pairs).map_err(|e| CliError::input(anyhow!(e)))?;
            let vocab = build_vocabulary(&kb, &pairs);
            let pipeline = Pipeline::new(kb, cfg.acquisition());
            let examples = pipeline.prepare_all(&vocab, &pairs, cfg.max_positions);
            let mut model = Model::new(&cfg, ModelShape { vocab_size: vocab.len(), feature_dim });
            let mut w = sink(&out)?;
            let mut write_err = None;
            let trained = train(&mut model, &examples, |r| {
                if write_err.is_none() {
                    write_err = emit(&mut w, r).err();
                }
            });
            if let Some(e) = write_err {
                return Err(e);
            }
            trained.map_err(|e| match e {
                TrainError::EmptyCorpus | TrainError::Config(_) => CliError::input(e),
                _ => CliError::internal(e),
            })?;
            checkpoint::save(&ckpt, &model, &vocab).map_err(CliError::input)?;
            finish(w)
        }
        Command::Generate { kb, checkpoint: ckpt, context, max_len, strategy, out } => {
            let (model, vocab, pipeline) = load_model(&kb, &ckpt)?;
            let ctx = load_context(&context.context)?;
            check_features(&model, &ctx)?;
            let (inputs, _) = pipeline.context_inputs(&vocab, &ctx);
            let (dctx, _, _) = inference_context(&model, &inputs).map_err(CliError::internal)?;
            let ids = generate(&model, &dctx, max_len, strategy).map_err(CliError::internal)?;
            let tokens: Vec<String> = ids.iter().map(|&i| vocab.token(i).to_string()).collect();
            let mut w = sink(&out)?;
            writeln!(w, "{}", detokenize(&tokens)).map_err(CliError::internal)?;
            finish(w)
        }
        Command::Evaluate { kb, checkpoint: ckpt, corpus, max_len, out } => {
            let (model, vocab, pipeline) = load_model(&kb, &ckpt)?;
            let pairs = model_pairs(&model, &corpus)?;
            let report = evaluate(&model, &vocab, &pipeline, &pairs, max_len).map_err(CliError::internal)?;
            let mut w = sink(&out)?;
            emit(&mut w, &report)?;
            finish(w)
        }
        Command::DumpAttention { kb, checkpoint: ckpt, corpus, out } => {
            let (model, vocab, pipeline) = load_model(&kb, &ckpt)?;
            let pairs = model_pairs(&model, &corpus)?;
            let mut w = sink(&out)?;
            for pair in &pairs {
                let (inputs, tuples) = pipeline.context_inputs(&vocab, &pair.context);
                let mut tape = Tape::new();
                let composed = composer::compose(&mut tape, &model, &inputs).map_err(CliError::internal)?;
                let attention = composed.relation_attention.map(|a| tape.value(a).to_rows()).unwrap_or_default();
                let (r_t, r_h) = match composed.fusion {
                    Some(f) => (tape.value(f.r_t).data().to_vec(), tape.value(f.r_h).data().to_vec()),
                    None => (Vec::new(), Vec::new()),
                };
                let tuples: Vec<&Vec<String>> = tuples.iter().map(|t| &t.entries).collect();
                emit(&mut w, &AttentionDump { tuples, relation_attention: attention, fusion_r_t: r_t, fusion_r_h: r_h })?;
            }
            finish(w)
        }
        Command::ExportReps { kb, checkpoint: ckpt, corpus, out } => {
            let (model, vocab, pipeline) = load_model(&kb, &ckpt)?;
            let pairs = model_pairs(&model, &corpus)?;
            let mut w = sink(&out)?;
            for pair in &pairs {
                let ex = pipeline.prepare(&vocab, pair, model.cfg.max_positions);
                let mut tape = Tape::new();
                let composed = composer::compose(&mut tape, &model, &ex.inputs).map_err(CliError::internal)?;
                let (c, r) = semantic_pair(&mut tape, &model, composed.t_c, &ex.response_ids).map_err(CliError::internal)?;
                emit(&mut w, &json!({ "composed": tape.value(c).to_rows(), "ground_truth": tape.value(r).to_rows() }))?;
            }
            finish(w)
        }
        Command::Synth { seed, entities, pairs, image_dim, kb_out, out } => {
            if entities == 0 {
                return Err(CliError::input(anyhow!("--entities must be at least 1")));
            }
            let cfg = SynthConfig { seed, n_entities: entities, n_pairs: pairs, image_dim, ..Default::default() };
            let corpus = make_synthetic_corpus(&cfg).map_err(CliError::internal)?;
            std::fs::write(&kb_out, corpus.kb.to_json())
                .with_context(|| format!("writing {}", kb_out.display()))
                .map_err(CliError::input)?;
            let mut w = sink(&out)?;
            write_records(&mut w, &corpus.records()).map_err(CliError::internal)?;
            finish(w)
        }
    }
}

#[derive(Serialize)]
struct AttentionDump<'a> {
    tuples: Vec<&'a Vec<String>>,
    relation_attention: Vec<Vec<f64>>,
    fusion_r_t: Vec<f64>,
    fusion_r_h: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextFile {
    context_utterances: Vec<String>,
    #[serde(default)]
    context_image_features: Vec<Vec<f64>>,
}

fn open(path: &Path) -> Result<Box<dyn BufRead>> {
    if path == Path::new("-") {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let f = File::open(path).with_context(|| format!("opening {}", path.display())).map_err(CliError::input)?;
    Ok(Box::new(BufReader::new(f)))
}

fn sink(out: &Output) -> Result<Box<dyn Write>> {
    match &out.out {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display())).map_err(CliError::input)?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(BufWriter::new(io::stdout()))),
    }
}

fn emit<T: Serialize>(w: &mut dyn Write, value: &T) -> Result<()> {
    let line = serde_json::to_string(value).map_err(CliError::internal)?;
    writeln!(w, "{line}").map_err(CliError::internal)
}

fn finish(mut w: Box<dyn Write>) -> Result<()> {
    w.flush().map_err(CliError::internal)
}

fn load_kb(path: &Path) -> Result<KnowledgeBase> {
    parse_kb(open(path)?).with_context(|| format!("knowledge base {}", path.display())).map_err(CliError::input)
}

fn load_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    read_records(open(path)?).with_context(|| format!("corpus {}", path.display())).map_err(CliError::input)
}

fn pairs_of(records: &[CorpusRecord]) -> Vec<DialogPair> {
    records.iter().map(CorpusRecord::to_pair).collect()
}

fn load_context(path: &Path) -> Result<DialogContext> {
    let file: ContextFile = serde_json::from_reader(open(path)?)
        .with_context(|| format!("context {}", path.display()))
        .map_err(CliError::input)?;
    let record = CorpusRecord {
        context_utterances: file.context_utterances,
        context_image_features: file.context_image_features,
        response: String::new(),
    };
    Ok(record.to_pair().context)
}

fn load_model(kb: &Path, ckpt: &Path) -> Result<(Model, Vocabulary, Pipeline)> {
    let kb = load_kb(kb)?;
    let (model, vocab) = checkpoint::load(ckpt).map_err(CliError::input)?;
    if kb.feature_dim() != 0 && kb.feature_dim() != model.shape.feature_dim {
        return Err(CliError::input(anyhow!(
            "knowledge base images have dimension {}, checkpoint expects {}",
            kb.feature_dim(),
            model.shape.feature_dim
        )));
    }
    let pipeline = Pipeline::new(kb, model.cfg.acquisition());
    Ok((model, vocab, pipeline))
}

fn check_features(model: &Model, ctx: &DialogContext) -> Result<()> {
    match ctx.image_features.iter().find(|f| f.len() != model.shape.feature_dim) {
        Some(f) => Err(CliError::input(anyhow!(
            "context image has dimension {}, checkpoint expects {}",
            f.len(),
            model.shape.feature_dim
        ))),
        None => Ok(()),
    }
}

fn model_pairs(model: &Model, corpus: &Path) -> Result<Vec<DialogPair>> {
    let pairs = pairs_of(&load_corpus(corpus)?);
    if pairs.is_empty() {
        return Err(CliError::input(anyhow!("corpus {} is empty", corpus.display())));
    }
    for p in &pairs {
        check_features(model, &p.context)?;
    }
    Ok(pairs)
}

fn resolve_config(args: &ConfigArgs) -> Result<TrainingConfig> {
    let base = match &args.config {
        Some(p) => serde_json::from_reader(open(p)?)
            .with_context(|| format!("config {}", p.display()))
            .map_err(CliError::input)?,
        None => TrainingConfig::default(),
    };
    let cfg = args.apply(base);
    cfg.validate().map_err(|e| CliError::input(anyhow!("invalid configuration: {e}")))?;
    Ok(cfg)
}
