use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use xfer_core::corpora::{
    format_dataset, gen_motif_task, gen_parens, gen_uniform, inject_tokens, make_mapping,
    parse_dataset, read_corpus, read_injection, read_mapping, split_dataset, write_corpus,
    write_mapping, CorpusKind, CorpusSpec, LabelKind, LabeledDataset, MappingKind, Vocab,
};
use xfer_core::diagnostics::{
    attention_match, collect_representations, gradient_confusion, jacobian_singular_values,
    perturbation_variance, pwcca_both, write_attention_csv, write_confusion_csv, write_perturb_csv,
    write_pwcca_csv, write_spectrum_csv, OutputSite,
};
use xfer_core::model::{
    read_checkpoint, write_checkpoint, CheckpointManifest, ModelConfig, Parameters,
};
use xfer_core::training::{
    finetune, pretrain_mlm, write_metrics_csv, InitMode, Splits, TrainConfig,
};
use xfer_core::{Error, Result};

use crate::manifest::{
    config_sections, manifest_path, overlay, read_bytes, read_text, write_file, RunManifest,
};
use crate::{Command, DiagData, Diagnose, ModelFlags, TrainFlags};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::GenTask(a) => gen_task(a),
        Command::MakeMap(a) => make_map(a),
        Command::Remap(a) => remap(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Finetune(a) => finetune_cmd(a),
        Command::Diagnose(d) => diagnose(d),
        Command::Report(a) => crate::report::report(&a.runs, &a.out),
    }
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn label_kind(s: &str) -> Result<LabelKind> {
    match s {
        "classes" => Ok(LabelKind::Classes(0)),
        "scalar" => Ok(LabelKind::Scalar),
        _ => Err(Error::Config(format!(
            "--labels must be classes or scalar, got {s:?}"
        ))),
    }
}

fn load_vocab(explicit: Option<&Path>, data: &Path, m: &mut RunManifest) -> Result<Vocab> {
    let path = explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| sidecar(data, ".vocab"));
    let bytes = read_bytes(&path)?;
    m.input("vocab", &path, &bytes);
    Vocab::parse(&String::from_utf8_lossy(&bytes))
}

fn load_data(
    name: &str,
    path: &Path,
    vocab: &Vocab,
    max_len: usize,
    kind: LabelKind,
    m: &mut RunManifest,
) -> Result<LabeledDataset> {
    let bytes = read_bytes(path)?;
    m.input(name, path, &bytes);
    let loaded = parse_dataset(&String::from_utf8_lossy(&bytes), vocab, max_len, kind)?;
    if loaded.unknown_tokens > 0 {
        eprintln!(
            "warning: {}: {} unknown tokens mapped to [UNK]",
            path.display(),
            loaded.unknown_tokens
        );
    }
    if loaded.truncated > 0 {
        eprintln!(
            "warning: {}: {} sequences truncated to {max_len}",
            path.display(),
            loaded.truncated
        );
    }
    Ok(loaded.dataset)
}

fn load_ckpt(
    name: &str,
    path: &Path,
    m: &mut RunManifest,
) -> Result<(Parameters, CheckpointManifest)> {
    let bytes = read_bytes(path)?;
    m.input(name, path, &bytes);
    read_checkpoint(&bytes)
}

fn gen_corpus(a: crate::GenCorpus) -> Result<()> {
    let sections = config_sections(a.config.as_deref(), &["corpus"])?;
    let mut spec = CorpusSpec::default();
    if let Some(patch) = sections.get("corpus") {
        spec = overlay(&spec, patch, "corpus")?;
    }
    if let Some(k) = &a.kind {
        spec.kind = k.parse()?;
    }
    set(&mut spec.lines, a.lines);
    set(&mut spec.min_len, a.min_len);
    set(&mut spec.max_len, a.max_len);
    set(&mut spec.vocab_size, a.vocab_size);
    set(&mut spec.unused, a.unused);
    set(&mut spec.bracket_types, a.bracket_types);
    set(&mut spec.close_prob, a.close_prob);
    set(&mut spec.seed, a.seed);
    let corpus = match spec.kind {
        CorpusKind::Uniform => gen_uniform(&spec)?,
        CorpusKind::Flat | CorpusKind::Nesting => gen_parens(&spec)?,
        CorpusKind::MotifTask => {
            return Err(Error::Spec("motif tasks are generated by gen-task".into()))
        }
    };
    let vocab = spec.vocab()?;
    let vocab_path = sidecar(&a.out, ".vocab");
    write_file(&a.out, write_corpus(&corpus, &vocab)?)?;
    write_file(&vocab_path, vocab.to_file_string())?;
    let mut m = RunManifest::new("gen-corpus", json!({ "corpus": spec }));
    m.seed(spec.seed).output(&a.out).output(&vocab_path);
    m.write(&manifest_path(&a.out))
}

fn gen_task(a: crate::GenTask) -> Result<()> {
    let sections = config_sections(a.config.as_deref(), &["task"])?;
    let mut spec = CorpusSpec {
        kind: CorpusKind::MotifTask,
        min_len: 16,
        max_len: 24,
        ..Default::default()
    };
    if let Some(patch) = sections.get("task") {
        spec = overlay(&spec, patch, "task")?;
    }
    set(&mut spec.lines, a.lines);
    set(&mut spec.min_len, a.min_len);
    set(&mut spec.max_len, a.max_len);
    set(&mut spec.motif_len, a.motif_len);
    set(&mut spec.alphabet, a.alphabet);
    set(&mut spec.seed, a.seed);
    let task = gen_motif_task(&spec)?;
    let vocab_path = sidecar(&a.out, ".vocab");
    let motif_path = sidecar(&a.out, ".motif");
    write_file(&a.out, format_dataset(&task.dataset, &task.vocab)?)?;
    write_file(&vocab_path, task.vocab.to_file_string())?;
    let motif: Vec<&str> = task
        .motif
        .iter()
        .map(|&i| task.vocab.token(i).unwrap_or("?"))
        .collect();
    write_file(&motif_path, format!("{}\n", motif.join(" ")))?;
    let mut m = RunManifest::new("gen-task", json!({ "task": spec }));
    m.seed(spec.seed)
        .output(&a.out)
        .output(&vocab_path)
        .output(&motif_path);
    m.write(&manifest_path(&a.out))
}

fn make_map(a: crate::MakeMap) -> Result<()> {
    let mut m = RunManifest::new(
        "make-map",
        json!({ "kind": a.kind, "offset": a.offset, "seed": a.seed, "avoid_unused": a.avoid_unused }),
    );
    let vbytes = read_bytes(&a.vocab)?;
    m.input("vocab", &a.vocab, &vbytes);
    let vocab = Vocab::parse(&String::from_utf8_lossy(&vbytes))?;
    let mapping = match a.kind.as_str() {
        "shift" => make_mapping(MappingKind::Shift, a.offset, &vocab)?,
        "random" => make_mapping(MappingKind::Random, a.seed, &vocab)?,
        "inject" => {
            let path = a
                .model_vocab
                .as_ref()
                .ok_or_else(|| Error::Config("inject needs --model-vocab".into()))?;
            let bytes = read_bytes(path)?;
            m.input("model_vocab", path, &bytes);
            let model = Vocab::parse(&String::from_utf8_lossy(&bytes))?;
            inject_tokens(&vocab, &model, a.seed, a.avoid_unused)?
        }
        other => return Err(Error::Config(format!("unknown mapping kind {other:?}"))),
    };
    write_file(&a.out, write_mapping(&mapping))?;
    m.seed(a.seed).output(&a.out);
    m.write(&manifest_path(&a.out))
}

fn remap(a: crate::Remap) -> Result<()> {
    let input = a
        .data
        .as_ref()
        .or(a.corpus.as_ref())
        .expect("clap requires one input");
    let mut m = RunManifest::new("remap", json!({ "labels": a.labels }));
    let src = load_vocab(a.vocab.as_deref(), input, &mut m)?;
    let dst = match &a.model_vocab {
        Some(p) => {
            let bytes = read_bytes(p)?;
            m.input("model_vocab", p, &bytes);
            Vocab::parse(&String::from_utf8_lossy(&bytes))?
        }
        None => src.clone(),
    };
    let map_text = read_text(&a.map)?;
    m.input("map", &a.map, map_text.as_bytes());
    let mapping = if src.len() == dst.len() {
        read_mapping(&map_text, src.len())?
    } else {
        read_injection(&map_text, src.len(), dst.len())?
    };
    let text = if let Some(d) = &a.data {
        let data = load_data("data", d, &src, usize::MAX, label_kind(&a.labels)?, &mut m)?;
        format_dataset(&mapping.apply_dataset(&data)?, &dst)?
    } else {
        let c = a.corpus.as_ref().unwrap();
        let bytes = read_bytes(c)?;
        m.input("corpus", c, &bytes);
        let corpus = read_corpus(&String::from_utf8_lossy(&bytes), &src);
        write_corpus(&mapping.apply_corpus(&corpus)?, &dst)?
    };
    let vocab_path = sidecar(&a.out, ".vocab");
    write_file(&a.out, text)?;
    write_file(&vocab_path, dst.to_file_string())?;
    m.output(&a.out).output(&vocab_path);
    m.write(&manifest_path(&a.out))
}

fn apply_model_flags(c: &mut ModelConfig, f: &ModelFlags) {
    set(&mut c.num_layers, f.layers);
    set(&mut c.hidden_dim, f.hidden);
    set(&mut c.num_heads, f.heads);
    set(&mut c.ffn_dim, f.ffn);
    set(&mut c.max_len, f.model_max_len);
    set(&mut c.dropout_prob, f.dropout);
}

fn apply_train_flags(t: &mut TrainConfig, f: &TrainFlags) {
    set(&mut t.lr, f.lr);
    set(&mut t.batch_size, f.batch_size);
    set(&mut t.total_steps, f.steps);
    set(&mut t.seed, f.seed);
    set(&mut t.log_every, f.log_every);
    set(&mut t.eval_every, f.eval_every);
    set(&mut t.mask_ratio, f.mask_ratio);
}

fn pretrain(a: crate::Pretrain) -> Result<()> {
    let sections = config_sections(a.config.as_deref(), &["model", "train"])?;
    let mut m = RunManifest::new("pretrain", Value::Null);
    let vocab = load_vocab(a.vocab.as_deref(), &a.corpus, &mut m)?;
    let mut model = ModelConfig {
        vocab_size: vocab.len(),
        ..Default::default()
    };
    if let Some(p) = sections.get("model") {
        model = overlay(&model, p, "model")?;
    }
    apply_model_flags(&mut model, &a.model);
    let mut train = TrainConfig::default();
    if let Some(p) = sections.get("train") {
        train = overlay(&train, p, "train")?;
    }
    apply_train_flags(&mut train, &a.train);

    let bytes = read_bytes(&a.corpus)?;
    m.input("corpus", &a.corpus, &bytes);
    let corpus = read_corpus(&String::from_utf8_lossy(&bytes), &vocab);
    let out = pretrain_mlm(&corpus, &vocab, &model, &train)?;
    let curve_path = sidecar(&a.out, ".curve.csv");
    write_file(&a.out, write_checkpoint(&out.params, &out.manifest)?)?;
    write_file(&curve_path, csv_bytes(|b| out.curve.write_csv(b)))?;
    m.set_config(json!({ "model": model, "train": train }));
    m.seed(train.seed).output(&a.out).output(&curve_path);
    m.write(&manifest_path(&a.out))
}

fn finetune_cmd(a: crate::Finetune) -> Result<()> {
    let sections = config_sections(a.config.as_deref(), &["model", "train"])?;
    let mut m = RunManifest::new("finetune", Value::Null);
    let first = a
        .data
        .as_ref()
        .or(a.train_data.as_ref())
        .expect("clap requires data");
    let vocab = load_vocab(a.vocab.as_deref(), first, &mut m)?;
    let kind = label_kind(&a.labels)?;

    let ckpt = match &a.ckpt {
        Some(p) => Some(load_ckpt("ckpt", p, &mut m)?),
        None => None,
    };
    let mut model = match &ckpt {
        Some((_, man)) => man.config.clone(),
        None => ModelConfig {
            vocab_size: vocab.len(),
            ..Default::default()
        },
    };
    if let Some(p) = sections.get("model") {
        model = overlay(&model, p, "model")?;
    }
    apply_model_flags(&mut model, &a.model);
    let mut train = TrainConfig::default();
    if let Some(p) = sections.get("train") {
        train = overlay(&train, p, "train")?;
    }
    apply_train_flags(&mut train, &a.train);
    if let Some(s) = &a.init_mode {
        train.init_mode = s.parse()?;
    } else if ckpt.is_some()
        && !sections
            .get("train")
            .is_some_and(|t| t.get("init_mode").is_some())
    {
        train.init_mode = InitMode::Checkpoint;
    }
    set(&mut train.subset_fraction, a.subset_fraction);
    if let Some(s) = &a.checkpoint_selection {
        train.checkpoint_selection = s.parse()?;
    }
    if a.reembed_positional {
        train.reembed_positional = true;
    }

    let splits = if let Some(d) = &a.data {
        let all = load_data("data", d, &vocab, model.max_len, kind, &mut m)?;
        let (tr, va, te) = split_dataset(&all, (0.9, 0.05, 0.05), train.seed)?;
        Splits {
            train: tr,
            valid: Some(va),
            test: Some(te),
        }
    } else {
        let tr = load_data(
            "train",
            a.train_data.as_ref().unwrap(),
            &vocab,
            model.max_len,
            kind,
            &mut m,
        )?;
        // valid/test share the class count inferred from train
        let kind = tr.label_kind;
        let mut opt = |name: &str, p: &Option<PathBuf>| -> Result<Option<LabeledDataset>> {
            p.as_ref()
                .map(|p| load_data(name, p, &vocab, model.max_len, kind, &mut m))
                .transpose()
        };
        let va = opt("valid", &a.valid_data)?;
        let te = opt("test", &a.test_data)?;
        Splits {
            train: tr,
            valid: va,
            test: te,
        }
    };
    let task = a.task.clone().unwrap_or_else(|| {
        first
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });

    let out = finetune(&splits, ckpt.as_ref().map(|(p, m)| (p, m)), &model, &train)?;
    let data_split = if a.data.is_some() {
        json!([0.9, 0.05, 0.05])
    } else {
        Value::Null
    };
    m.set_config(json!({
        "task": task,
        "model": out.manifest.config,
        "train": train,
        "data_split": data_split,
    }));
    let run_id = m.run_id();
    let dir = &a.out_dir;
    let files = [
        (
            "metrics.csv",
            csv_bytes(|b| {
                write_metrics_csv(
                    b,
                    &run_id,
                    if out.test_reports.is_empty() {
                        &out.valid_reports
                    } else {
                        &out.test_reports
                    },
                )
            }),
        ),
        (
            "valid_metrics.csv",
            csv_bytes(|b| write_metrics_csv(b, &run_id, &out.valid_reports)),
        ),
        ("curve.csv", csv_bytes(|b| out.curve.write_csv(b))),
        (
            "valid_curve.csv",
            csv_bytes(|b| out.curve.write_valid_csv(b)),
        ),
        ("model.ck", write_checkpoint(&out.params, &out.manifest)?),
    ];
    for (name, bytes) in &files {
        let p = dir.join(name);
        write_file(&p, bytes)?;
        m.output(&p);
    }
    m.seed(train.seed);
    m.write(&dir.join("manifest.json"))
}

fn diag_data(d: &DiagData, max_len: usize, m: &mut RunManifest) -> Result<LabeledDataset> {
    let vocab = load_vocab(d.vocab.as_deref(), &d.data, m)?;
    load_data("data", &d.data, &vocab, max_len, label_kind(&d.labels)?, m)
}

fn diagnose(d: Diagnose) -> Result<()> {
    match d {
        Diagnose::Pwcca {
            ckpt_a,
            ckpt_b,
            data,
            layer,
            n_points,
            variance_kept,
            seed,
            out,
        } => {
            let mut m = RunManifest::new(
                "diagnose pwcca",
                json!({ "layer": layer, "n_points": n_points, "variance_kept": variance_kept, "seed": seed, "labels": data.labels }),
            );
            let (pa, ma) = load_ckpt("ckpt_a", &ckpt_a, &mut m)?;
            let (pb, mb) = load_ckpt("ckpt_b", &ckpt_b, &mut m)?;
            if ma.config.hidden_dim != mb.config.hidden_dim
                || ma.config.num_layers != mb.config.num_layers
            {
                return Err(Error::Compatibility(
                    "checkpoints differ in width or depth".into(),
                ));
            }
            let ds = diag_data(&data, ma.config.max_len.min(mb.config.max_len), &mut m)?;
            let layers: Vec<usize> = match layer {
                Some(l) => vec![l],
                None => (1..=ma.config.num_layers).collect(),
            };
            let mut rows = Vec::new();
            for l in layers {
                let x = collect_representations(&pa, &ma.config, &ds, l, n_points, seed)?;
                let y = collect_representations(&pb, &mb.config, &ds, l, n_points, seed)?;
                rows.push((l, pwcca_both(&x.data, &y.data, variance_kept)?));
            }
            finish(m, &out, seed, csv_bytes(|b| write_pwcca_csv(b, &rows)))
        }
        Diagnose::Attention {
            ckpt_a,
            ckpt_b,
            data,
            n_inputs,
            out,
        } => {
            let mut m = RunManifest::new(
                "diagnose attention",
                json!({ "n_inputs": n_inputs, "labels": data.labels }),
            );
            let (pa, ma) = load_ckpt("ckpt_a", &ckpt_a, &mut m)?;
            let (pb, mb) = load_ckpt("ckpt_b", &ckpt_b, &mut m)?;
            let ds = diag_data(&data, ma.config.max_len.min(mb.config.max_len), &mut m)?;
            let r = attention_match((&pa, &ma.config), (&pb, &mb.config), &ds, n_inputs)?;
            finish(m, &out, 0, csv_bytes(|b| write_attention_csv(b, &r)))
        }
        Diagnose::Isometry {
            ckpt,
            data,
            index,
            out,
        } => {
            let mut m = RunManifest::new(
                "diagnose isometry",
                json!({ "index": index, "labels": data.labels }),
            );
            let (p, man) = load_ckpt("ckpt", &ckpt, &mut m)?;
            let ds = diag_data(&data, man.config.max_len, &mut m)?;
            let ex = ds
                .examples
                .get(index)
                .ok_or_else(|| Error::Index(format!("example {index} of {}", ds.len())))?;
            let s = jacobian_singular_values(&p, &man.config, &ex.ids)?;
            finish(m, &out, 0, csv_bytes(|b| write_spectrum_csv(b, &s)))
        }
        Diagnose::Confusion {
            ckpt,
            data,
            pairs,
            seed,
            out,
        } => {
            let mut m = RunManifest::new(
                "diagnose confusion",
                json!({ "pairs": pairs, "seed": seed, "labels": data.labels }),
            );
            let (p, man) = load_ckpt("ckpt", &ckpt, &mut m)?;
            let ds = diag_data(&data, man.config.max_len, &mut m)?;
            let s = gradient_confusion(&p, &man.config, &ds, pairs, seed)?;
            if s.n_excluded > 0 {
                eprintln!(
                    "warning: {} pairs excluded for zero-norm gradients",
                    s.n_excluded
                );
            }
            finish(m, &out, seed, csv_bytes(|b| write_confusion_csv(b, &s)))
        }
        Diagnose::Perturb {
            ckpt,
            data,
            sigmas,
            draws,
            n_examples,
            site,
            seed,
            out,
        } => {
            let mut m = RunManifest::new(
                "diagnose perturb",
                json!({ "sigmas": sigmas, "draws": draws, "n_examples": n_examples, "site": site, "seed": seed, "labels": data.labels }),
            );
            let site: OutputSite = site.parse()?;
            let (p, man) = load_ckpt("ckpt", &ckpt, &mut m)?;
            let mut ds = diag_data(&data, man.config.max_len, &mut m)?;
            ds.examples.truncate(n_examples);
            let r = perturbation_variance(&p, &man.config, &ds, &sigmas, draws, seed, site)?;
            for row in r.rows.iter().filter(|r| r.n_diverged > 0) {
                eprintln!(
                    "warning: sigma {}: {} draws diverged",
                    row.sigma, row.n_diverged
                );
            }
            finish(m, &out, seed, csv_bytes(|b| write_perturb_csv(b, &r)))
        }
    }
}

fn finish(mut m: RunManifest, out: &Path, seed: u64, csv: Vec<u8>) -> Result<()> {
    write_file(out, csv)?;
    m.seed(seed).output(out);
    m.write(&manifest_path(out))
}
