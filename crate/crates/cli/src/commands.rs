use std::fs;
use std::path::Path;

use collabdm::data::PartitionSpec;
use collabdm::distill::{DMConfig, SyntheticSet};
use collabdm::encoder::EncoderSpec;
use collabdm::eval::{cross_arch_eval, ClassifierSpec};
use collabdm::orchestrator::{run as run_protocol, EvalOptions, RunConfig};
use collabdm::protocol::{decode_payload, payload_bytes};
use collabdm::{Error, Result};
use serde::Serialize;

use crate::dataset::DataSource;
use crate::{ClassifierArgs, EvalArgs, InspectArgs, RunArgs};

/// Everything needed to reproduce a run, written next to its report.
#[derive(Serialize)]
struct ExperimentConfig<'a> {
    run: &'a RunConfig,
    data: &'a DataSource,
    repeats: usize,
}

fn classifier_spec(a: &ClassifierArgs, seed: u64) -> ClassifierSpec {
    ClassifierSpec {
        arch: a.arch,
        epochs: a.epochs,
        lr: a.eval_lr,
        seed,
        ..ClassifierSpec::default()
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Input(format!("writing {}: {e}", path.display())))
}

pub fn run(a: &RunArgs) -> Result<()> {
    let (source, train, test) = a.data.load()?;
    let [c, h, w] = train.image_shape();
    let encoder = EncoderSpec {
        num_blocks: a.blocks,
        channels: a.channels,
        ..EncoderSpec::desk(c, h, w)
    };
    let config = RunConfig {
        dm: DMConfig {
            ipc: a.ipc,
            local_lr: a.lr_local,
            server_lr: a.lr_server,
            local_iters: a.local_iters,
            batch: a.batch,
            momentum: a.momentum,
            pae: a.pae,
            ..DMConfig::default()
        },
        rounds: a.iters,
        epsilon: a.eps,
        master_seed: a.seed,
        eval_every: a.eval_every,
        global_ipc: Some(a.global_ipc.unwrap_or(a.ipc)),
        eval: (!a.no_eval).then(|| EvalOptions {
            classifier: classifier_spec(&a.classifier, a.seed),
            repeats: a.classifier.repeats,
        }),
        ..RunConfig::new(a.mode, encoder, PartitionSpec::dirichlet(a.clients, a.beta, a.seed))
    };
    // Fail on bad flags before any output directory is touched.
    config.validate()?;

    let out = run_protocol(&config, &train, (!a.no_eval).then_some(&test))?;

    let payload_dir = a.out.join("payloads");
    fs::create_dir_all(&payload_dir)
        .map_err(|e| Error::Input(format!("creating {}: {e}", payload_dir.display())))?;
    write(&a.out.join("report.json"), out.report.to_json()?)?;
    write(&a.out.join("losses.csv"), out.report.losses_csv())?;
    write(&a.out.join("accuracy.csv"), out.report.accuracy_csv())?;
    let experiment = ExperimentConfig {
        run: &config,
        data: &source,
        repeats: a.classifier.repeats,
    };
    let experiment = serde_json::to_string_pretty(&experiment)
        .map_err(|e| Error::Input(format!("serializing experiment: {e}")))?;
    write(&a.out.join("experiment.json"), experiment)?;
    out.synthetic.save(a.out.join("synthetic.cdt"))?;
    for (k, bytes) in out.payloads.iter().enumerate() {
        write(&payload_dir.join(format!("client-{k:03}.cdm")), bytes)?;
    }

    let r = &out.report;
    println!("mode {} clients {} rounds {}", config.mode, config.partition.clients, config.rounds);
    if let (Some(first), Some(last)) = (r.losses.first(), r.losses.last()) {
        println!("server loss t={} {:.6} -> t={} {:.6}", first.t, first.loss, last.t, last.loss);
    }
    if let Some(acc) = r.accuracy.last() {
        println!("accuracy at t={}: {:.4} +/- {:.4}", acc.iteration, acc.mean, acc.std);
    }
    let up: usize = r.uplink_bytes.iter().sum();
    let down: usize = r.downlink_bytes.iter().sum();
    println!("downlink {down} bytes, uplink {up} bytes, stored scalars {}", r.stored_scalars);
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let synthetic = SyntheticSet::<f32>::load(&a.synthetic)?;
    let (_, _, test) = a.data.load()?;
    if synthetic.num_classes() != test.num_classes() || synthetic.image_shape() != test.image_shape() {
        return Err(Error::Input(format!(
            "synthetic set ({} classes, {:?}) does not fit the test data ({} classes, {:?})",
            synthetic.num_classes(),
            synthetic.image_shape(),
            test.num_classes(),
            test.image_shape()
        )));
    }
    let base = classifier_spec(&a.classifier, a.seed);
    base.validate()?;
    let mut archs = vec![a.classifier.arch];
    archs.extend(a.also.iter().copied().filter(|x| *x != a.classifier.arch));
    let name = a.synthetic.display().to_string();
    let matrix = cross_arch_eval(&[(name, &synthetic)], &archs, &base, &test, a.classifier.repeats)?;
    match &a.out {
        Some(path) => write(path, matrix.to_csv()),
        None => {
            print!("{}", matrix.to_csv());
            Ok(())
        }
    }
}

pub fn inspect(a: &InspectArgs) -> Result<()> {
    let bytes = fs::read(&a.payload)
        .map_err(|e| Error::Input(format!("{}: {e}", a.payload.display())))?;
    let p = decode_payload(&bytes)?;
    let classes = p.num_classes();
    let dim = p.embedding_dim as usize;
    let s = &p.synthetic;
    println!("client {}", p.client);
    println!(
        "synthetic: {classes} classes x {} images of {:?}, pae {}, real-init {:?}",
        s.ipc(),
        s.image_shape(),
        s.pae_l(),
        s.real_init()
    );
    println!("embedding dim {dim}");
    println!(
        "rounds {} (t = {})",
        p.rounds.len(),
        match (p.rounds.first(), p.rounds.last()) {
            (Some(f), Some(l)) => format!("{}..{}", f.t, l.t),
            _ => "none".to_string(),
        }
    );
    let mut per_class = vec![0usize; classes];
    for r in &p.rounds {
        for (y, m) in r.per_class.iter().enumerate() {
            if m.is_some() {
                per_class[y] += 1;
            }
        }
    }
    let present = p.present_means();
    println!("mean vectors {present} of {}", p.rounds.len() * classes);
    println!("present per class {per_class:?}");
    let formula = payload_bytes(p.rounds.len(), classes, dim, s.encoded_len(), present);
    println!("bytes {} (formula {formula})", bytes.len());
    if formula != bytes.len() {
        return Err(Error::Protocol(format!(
            "byte total {} disagrees with the accounting formula {formula}",
            bytes.len()
        )));
    }
    Ok(())
}
