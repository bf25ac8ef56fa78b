//! Subcommand implementations.
//!
//! Every command validates its flags before touching the filesystem, writes
//! only the documented formats, and drops a run manifest next to its
//! outputs. Reruns from a manifest reproduce outputs byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use ccst_core::analysis::before_after_report;
use ccst_core::augment::{
    assemble_amplitude_bank, augment_client, publish_amplitudes, AugmentConfig, TransferBackend,
    TransferBank,
};
use ccst_core::bank::{assemble_bank, decode_bank, encode_bank, publish_styles, GlobalStyleBank};
use ccst_core::data::{
    default_specs, format_domain_specs, generate_domains, parse_domain_specs, split_leave_one_out,
    FederatedDataset,
};
use ccst_core::fed::{leave_one_out_suite, run_ccst_experiment, FederationConfig};
use ccst_core::io::{load_dataset, read_manifest, save_tensor, write_manifest, ManifestEntry};
use ccst_core::model::{evaluate, load_params, save_params, Standardizer, TrainConfig};
use ccst_core::privacy::{attack_report, invert_style};
use ccst_core::rng::Rng;
use ccst_core::style::{IdentitySpace, StyleMode};
use ccst_core::tensor::{ClientId, LabeledImage};

use crate::manifest::RunManifest;

/// Usage errors exit 1; data and format errors exit 2.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

impl From<ccst_core::Error> for CliError {
    fn from(e: ccst_core::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Single,
    Overall,
}

impl ModeArg {
    fn to_mode(self) -> StyleMode {
        match self {
            ModeArg::Single => StyleMode::Single,
            ModeArg::Overall => StyleMode::Overall,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ModeArg::Single => "single",
            ModeArg::Overall => "overall",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Adain,
    Fft,
}

impl BackendArg {
    fn to_backend(self) -> TransferBackend {
        match self {
            BackendArg::Adain => TransferBackend::Adain,
            BackendArg::Fft => TransferBackend::Fft,
        }
    }

    fn name(self) -> &'static str {
        match self {
            BackendArg::Adain => "adain",
            BackendArg::Fft => "fft",
        }
    }
}

/// Worker-thread cap: CCST_THREADS when set, otherwise the available cores.
pub fn worker_threads() -> usize {
    if let Ok(v) = std::env::var("CCST_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn create_out_dir(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn push_flag(argv: &mut Vec<String>, flag: &str, value: impl ToString) {
    argv.push(flag.into());
    argv.push(value.to_string());
}

/// Loads a generated dataset directory back into per-domain image lists.
fn load_domains(data: &Path) -> CliResult<(BTreeMap<ClientId, Vec<LabeledImage>>, usize)> {
    let manifest_path = data.join("domains.tsv");
    if !manifest_path.exists() {
        return Err(CliError::Data(format!(
            "no dataset manifest at {}; run `ccst gen-data` first",
            manifest_path.display()
        )));
    }
    let entries = read_manifest(&manifest_path)?;
    if entries.is_empty() {
        return Err(CliError::Data(format!(
            "empty dataset manifest {}",
            manifest_path.display()
        )));
    }
    let num_classes = entries.iter().map(|e| e.label + 1).max().unwrap_or(1);
    let images = load_dataset(data, &entries, num_classes)?;
    let mut domains: BTreeMap<ClientId, Vec<LabeledImage>> = BTreeMap::new();
    for img in images {
        domains.entry(img.domain).or_default().push(img);
    }
    Ok((domains, num_classes))
}

fn split_for(
    domains: &BTreeMap<ClientId, Vec<LabeledImage>>,
    target: u16,
    train_fraction: f64,
    seed: u64,
) -> CliResult<FederatedDataset> {
    Ok(split_leave_one_out(
        domains,
        ClientId(target),
        train_fraction,
        seed,
    )?)
}

fn write_standardizer(path: &Path, std: &Standardizer) -> CliResult<()> {
    let mut text = String::new();
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
    writeln!(text, "mu\t{}", join(&std.mu)).unwrap();
    writeln!(text, "sigma\t{}", join(&std.sigma)).unwrap();
    fs::write(path, text)?;
    Ok(())
}

fn read_standardizer(path: &Path) -> CliResult<Standardizer> {
    let text = fs::read_to_string(path)?;
    let mut mu = None;
    let mut sigma = None;
    for line in text.lines() {
        let Some((key, values)) = line.split_once('\t') else {
            continue;
        };
        let parsed: Result<Vec<f64>, _> = values.split_whitespace().map(str::parse).collect();
        let parsed =
            parsed.map_err(|e| CliError::Data(format!("bad standardizer value: {e}")))?;
        match key {
            "mu" => mu = Some(parsed),
            "sigma" => sigma = Some(parsed),
            other => {
                return Err(CliError::Data(format!(
                    "unknown standardizer key {other:?} in {}",
                    path.display()
                )))
            }
        }
    }
    match (mu, sigma) {
        (Some(mu), Some(sigma)) if mu.len() == sigma.len() && !mu.is_empty() => {
            Ok(Standardizer { mu, sigma })
        }
        _ => Err(CliError::Data(format!(
            "standardizer file {} needs matching mu and sigma lines",
            path.display()
        ))),
    }
}

// ---------------------------------------------------------------------------
// gen-data

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Number of style domains to synthesize.
    #[arg(long, default_value_t = 4)]
    pub domains: usize,
    /// Number of content classes shared by every domain.
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Images per domain (must be divisible by --classes).
    #[arg(long = "per-domain", default_value_t = 400)]
    pub per_domain: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Domain style spec file; defaults to the built-in styles.
    #[arg(long)]
    pub specs: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

impl GenDataArgs {
    pub fn argv(&self) -> Vec<String> {
        let mut argv = vec!["gen-data".to_string()];
        push_flag(&mut argv, "--domains", self.domains);
        push_flag(&mut argv, "--classes", self.classes);
        push_flag(&mut argv, "--per-domain", self.per_domain);
        push_flag(&mut argv, "--size", self.size);
        if let Some(specs) = &self.specs {
            push_flag(&mut argv, "--specs", specs.display());
        }
        push_flag(&mut argv, "--seed", self.seed);
        push_flag(&mut argv, "--out", self.out.display());
        argv
    }

    pub fn run(&self) -> CliResult<()> {
        let specs = match &self.specs {
            Some(path) => parse_domain_specs(&fs::read_to_string(path)?)?,
            None => default_specs(self.domains),
        };
        if specs.len() != self.domains {
            return Err(CliError::Usage(format!(
                "--domains {} but spec file defines {} domains",
                self.domains,
                specs.len()
            )));
        }
        let domains = generate_domains(self.classes, self.per_domain, self.size, &specs, self.seed)?;

        create_out_dir(&self.out)?;
        let mut entries = Vec::new();
        let mut outputs = vec!["specs.txt".to_string(), "domains.tsv".to_string()];
        for (&id, images) in &domains {
            let sub = format!("d{}", id.0);
            fs::create_dir_all(self.out.join(&sub))?;
            for (i, img) in images.iter().enumerate() {
                let rel = format!("{sub}/img_{i:05}.cct");
                save_tensor(&self.out.join(&rel), &img.image)?;
                entries.push(ManifestEntry {
                    path: rel.clone(),
                    label: img.label,
                    domain: id,
                });
                outputs.push(rel);
            }
        }
        fs::write(self.out.join("specs.txt"), format_domain_specs(&specs))?;
        write_manifest(&self.out.join("domains.tsv"), &entries)?;
        RunManifest::new("gen-data", self.argv(), self.seed, outputs).save(&self.out)?;
        println!(
            "generated {} domains x {} images ({}x{}x3, {} classes) into {}",
            self.domains,
            self.per_domain,
            self.size,
            self.size,
            self.classes,
            self.out.display()
        );
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// styles

#[derive(Debug, Args)]
pub struct StylesArgs {
    /// Dataset directory produced by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out target domain; its data never enters the bank.
    #[arg(long)]
    pub target: u16,
    #[arg(long, value_enum, default_value_t = ModeArg::Overall)]
    pub mode: ModeArg,
    /// Single-image styles each client publishes in single mode.
    #[arg(long, default_value_t = 16)]
    pub j: usize,
    /// Cap on images used for the overall style (default: all).
    #[arg(long = "overall-style-sample")]
    pub overall_style_sample: Option<usize>,
    #[arg(long = "train-fraction", default_value_t = 0.9)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

impl StylesArgs {
    pub fn argv(&self) -> Vec<String> {
        let mut argv = vec!["styles".to_string()];
        push_flag(&mut argv, "--data", self.data.display());
        push_flag(&mut argv, "--target", self.target);
        push_flag(&mut argv, "--mode", self.mode.name());
        push_flag(&mut argv, "--j", self.j);
        if let Some(m) = self.overall_style_sample {
            push_flag(&mut argv, "--overall-style-sample", m);
        }
        push_flag(&mut argv, "--train-fraction", self.train_fraction);
        push_flag(&mut argv, "--seed", self.seed);
        push_flag(&mut argv, "--out", self.out.display());
        argv
    }

    pub fn run(&self) -> CliResult<()> {
        let (domains, _) = load_domains(&self.data)?;
        let fed = split_for(&domains, self.target, self.train_fraction, self.seed)?;
        let space = IdentitySpace::new(fed.channels());
        let mut locals = Vec::new();
        let mut upload_lines = Vec::new();
        for (&id, client) in &fed.clients {
            let mut rng = Rng::stream(self.seed, id, 0, "publish");
            let local = publish_styles(
                id,
                &client.train,
                self.mode.to_mode(),
                self.j,
                &space,
                &mut rng,
                self.overall_style_sample,
            )?;
            let upload = encode_bank(&assemble_bank(vec![local.clone()])?)?;
            upload_lines.push(format!("client {id}: {} styles, {} bytes", local.styles.len(), upload.len()));
            locals.push(local);
        }
        let bank = assemble_bank(locals)?;
        let encoded = encode_bank(&bank)?;

        create_out_dir(&self.out)?;
        fs::write(self.out.join("bank.ccsb"), &encoded)?;
        RunManifest::new("styles", self.argv(), self.seed, vec!["bank.ccsb".into()])
            .save(&self.out)?;
        for line in upload_lines {
            println!("{line}");
        }
        println!(
            "bank: {} mode, {} clients, {} channels, broadcast {} bytes -> {}",
            bank.mode(),
            bank.len(),
            bank.channels(),
            encoded.len(),
            self.out.join("bank.ccsb").display()
        );
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// augment

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Style bank file (adain backend); the fft backend exchanges spectra
    /// in-process, so omit it there.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long)]
    pub target: u16,
    #[arg(long, value_enum, default_value_t = ModeArg::Overall)]
    pub mode: ModeArg,
    /// Augmentation level: bank clients drawn per image.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = BackendArg::Adain)]
    pub backend: BackendArg,
    /// Low-frequency window fraction for the fft backend.
    #[arg(long = "fft-window", default_value_t = 1.0)]
    pub fft_window: f64,
    /// Spectra per client for the fft backend in single mode.
    #[arg(long, default_value_t = 16)]
    pub j: usize,
    #[arg(long = "train-fraction", default_value_t = 0.9)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

impl AugmentArgs {
    pub fn argv(&self) -> Vec<String> {
        let mut argv = vec!["augment".to_string()];
        push_flag(&mut argv, "--data", self.data.display());
        if let Some(bank) = &self.bank {
            push_flag(&mut argv, "--bank", bank.display());
        }
        push_flag(&mut argv, "--target", self.target);
        push_flag(&mut argv, "--mode", self.mode.name());
        push_flag(&mut argv, "--k", self.k);
        push_flag(&mut argv, "--backend", self.backend.name());
        push_flag(&mut argv, "--fft-window", self.fft_window);
        push_flag(&mut argv, "--j", self.j);
        push_flag(&mut argv, "--train-fraction", self.train_fraction);
        push_flag(&mut argv, "--seed", self.seed);
        push_flag(&mut argv, "--out", self.out.display());
        argv
    }

    fn validate_flags(&self) -> CliResult<()> {
        match self.backend {
            BackendArg::Adain if self.bank.is_none() => Err(CliError::Usage(
                "the adain backend needs --bank <file> from `ccst styles`".into(),
            )),
            BackendArg::Fft if self.bank.is_some() => Err(CliError::Usage(
                "--bank applies only to the adain backend; fft spectra are computed in-process"
                    .into(),
            )),
            _ => Ok(()),
        }
    }

    fn load_bank(&self, fed: &FederatedDataset) -> CliResult<TransferBank> {
        match self.backend {
            BackendArg::Adain => {
                let path = self.bank.as_ref().expect("validated");
                let bank: GlobalStyleBank = decode_bank(&fs::read(path)?)?;
                Ok(TransferBank::Style(bank))
            }
            BackendArg::Fft => {
                let mut locals = Vec::new();
                for (&id, client) in &fed.clients {
                    let mut rng = Rng::stream(self.seed, id, 0, "publish");
                    locals.push((
                        id,
                        publish_amplitudes(&client.train, self.mode.to_mode(), self.j, &mut rng)?,
                    ));
                }
                Ok(TransferBank::Amplitude(assemble_amplitude_bank(
                    locals,
                    self.mode.to_mode(),
                )?))
            }
        }
    }

    pub fn run(&self) -> CliResult<()> {
        self.validate_flags()?;
        let (domains, _) = load_domains(&self.data)?;
        let fed = split_for(&domains, self.target, self.train_fraction, self.seed)?;
        let bank = self.load_bank(&fed)?;
        let cfg = AugmentConfig {
            k: self.k,
            mode: self.mode.to_mode(),
            backend: self.backend.to_backend(),
            fft_window: self.fft_window,
            seed: self.seed,
        };
        let space = IdentitySpace::new(fed.channels());

        create_out_dir(&self.out)?;
        let mut lines = String::new();
        let mut outputs = vec!["augmented.tsv".to_string()];
        let mut total = 0usize;
        for (&id, client) in &fed.clients {
            let augmented = augment_client(&client.train, &bank, &cfg, id, &space)?;
            let sub = format!("c{}", id.0);
            fs::create_dir_all(self.out.join(&sub))?;
            for (i, entry) in augmented.entries.iter().enumerate() {
                let rel = format!("{sub}/aug_{i:05}.cct");
                save_tensor(&self.out.join(&rel), &entry.image.image)?;
                writeln!(
                    lines,
                    "{rel}\t{}\t{}\t{}",
                    entry.image.label, entry.image.domain.0, entry.provenance
                )
                .unwrap();
                outputs.push(rel);
            }
            total += augmented.len();
            println!(
                "client {id}: {} -> {} entries ({} originals)",
                client.train.len(),
                augmented.len(),
                augmented.originals()
            );
        }
        fs::write(self.out.join("augmented.tsv"), lines)?;
        RunManifest::new("augment", self.argv(), self.seed, outputs).save(&self.out)?;
        println!(
            "augmented {} entries ({} mode, K={}, {} backend) into {}",
            total,
            self.mode.name(),
            self.k,
            self.backend.name(),
            self.out.display()
        );
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub target: u16,
    #[arg(long, value_enum, default_value_t = ModeArg::Overall)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 16)]
    pub j: usize,
    #[arg(long, value_enum, default_value_t = BackendArg::Adain)]
    pub backend: BackendArg,
    #[arg(long = "fft-window", default_value_t = 1.0)]
    pub fft_window: f64,
    #[arg(long, default_value_t = 60)]
    pub rounds: usize,
    #[arg(long = "local-epochs", default_value_t = 1)]
    pub local_epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    /// Skip style transfer entirely: the plain federated-averaging baseline.
    #[arg(long = "no-ccst", default_value_t = false)]
    pub no_ccst: bool,
    #[arg(long = "overall-style-sample")]
    pub overall_style_sample: Option<usize>,
    #[arg(long = "train-fraction", default_value_t = 0.9)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn argv(&self) -> Vec<String> {
        let mut argv = vec!["train".to_string()];
        push_flag(&mut argv, "--data", self.data.display());
        push_flag(&mut argv, "--target", self.target);
        push_flag(&mut argv, "--mode", self.mode.name());
        push_flag(&mut argv, "--k", self.k);
        push_flag(&mut argv, "--j", self.j);
        push_flag(&mut argv, "--backend", self.backend.name());
        push_flag(&mut argv, "--fft-window", self.fft_window);
        push_flag(&mut argv, "--rounds", self.rounds);
        push_flag(&mut argv, "--local-epochs", self.local_epochs);
        push_flag(&mut argv, "--lr", self.lr);
        push_flag(&mut argv, "--batch", self.batch);
        push_flag(&mut argv, "--hidden", self.hidden);
        if self.no_ccst {
            argv.push("--no-ccst".into());
        }
        if let Some(m) = self.overall_style_sample {
            push_flag(&mut argv, "--overall-style-sample", m);
        }
        push_flag(&mut argv, "--train-fraction", self.train_fraction);
        push_flag(&mut argv, "--seed", self.seed);
        push_flag(&mut argv, "--out", self.out.display());
        argv
    }

    pub fn federation_config(&self) -> FederationConfig {
        FederationConfig {
            rounds: self.rounds,
            train: TrainConfig {
                learning_rate: self.lr,
                batch_size: self.batch,
                local_epochs: self.local_epochs,
                seed: 0,
            },
            augment: (!self.no_ccst).then(|| AugmentConfig {
                k: self.k,
                mode: self.mode.to_mode(),
                backend: self.backend.to_backend(),
                fft_window: self.fft_window,
                seed: self.seed,
            }),
            styles_per_client: self.j,
            overall_style_sample: self.overall_style_sample,
            hidden_dim: self.hidden,
            threads: worker_threads(),
            seed: self.seed,
        }
    }

    pub fn run(&self) -> CliResult<()> {
        let (domains, _) = load_domains(&self.data)?;
        let fed = split_for(&domains, self.target, self.train_fraction, self.seed)?;
        let cfg = self.federation_config();
        let report = run_ccst_experiment(&fed, &cfg)?;

        create_out_dir(&self.out)?;
        save_params(&self.out.join("checkpoint.cctp"), &report.best_params)?;
        write_standardizer(&self.out.join("standardizer.tsv"), &report.eval_standardizer)?;

        let mut csv = String::from("round,validation_accuracy");
        let client_ids: Vec<ClientId> = fed.clients.keys().copied().collect();
        for id in &client_ids {
            write!(csv, ",train_loss_{id}").unwrap();
        }
        csv.push('\n');
        for record in &report.rounds {
            write!(csv, "{},{}", record.round, record.validation_accuracy).unwrap();
            for id in &client_ids {
                write!(csv, ",{}", record.train_loss[id]).unwrap();
            }
            csv.push('\n');
        }
        fs::write(self.out.join("rounds.csv"), csv)?;
        RunManifest::new(
            "train",
            self.argv(),
            self.seed,
            vec![
                "checkpoint.cctp".into(),
                "standardizer.tsv".into(),
                "rounds.csv".into(),
            ],
        )
        .save(&self.out)?;

        for (id, bytes) in &report.communication.upload_bytes {
            println!("client {id}: augmented {} entries, uploaded {bytes} bytes", report.augmented_sizes[id]);
        }
        if report.communication.broadcast_bytes > 0 {
            println!("broadcast bank: {} bytes", report.communication.broadcast_bytes);
        }
        println!(
            "target {}: test accuracy {:.4} (best round {} of {}, validation {:.4}) -> {}",
            self.target,
            report.test_accuracy,
            report.best_round,
            self.rounds,
            report.best_validation_accuracy,
            self.out.display()
        );
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// eval

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `ccst train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Standardizer written next to the checkpoint.
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub target: u16,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl EvalArgs {
    pub fn argv(&self) -> Vec<String> {
        let mut argv = vec!["eval".to_string()];
        push_flag(&mut argv, "--checkpoint", self.checkpoint.display());
        push_flag(&mut argv, "--stats", self.stats.display());
        push_flag(&mut argv, "--data", self.data.display());
        push_flag(&mut argv, "--target", self.target);
        if let Some(out) = &self.out {
            push_flag(&mut argv, "--out", out.display());
        }
        argv
    }

    pub fn run(&self) -> CliResult<()> {
        let params = load_params(&self.checkpoint)?;
        let standardizer = read_standardizer(&self.stats)?;
        let (domains, _) = load_domains(&self.data)?;
        let Some(test) = domains.get(&ClientId(self.target)) else {
            return Err(CliError::Data(format!(
                "target domain {} not present in {}",
                self.target,
                self.data.display()
            )));
        };
        let test = standardizer.apply_all(test)?;
        let accuracy = evaluate(&params, &test)?;
        println!(
            "target {}: {} test images, accuracy {:.4}",
            self.target,
            test.len(),
            accuracy
        );
        if let Some(out) = &self.out {
            create_out_dir(out)?;
            fs::write(
                out.join("eval.csv"),
                format!("target,images,accuracy\n{},{},{}\n", self.target, test.len(), accuracy),
            )?;
            RunManifest::new("eval", self.argv(), 0, vec!["eval.csv".into()]).save(out)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Hold out only this domain instead of sweeping all targets.
    #[arg(long)]
    pub target: Option<u16>,
    /// Augmentation levels to sweep, comma separated.
    #[arg(long, default_value = "1,2,3", value_delimiter = ',')]
    pub ks: Vec<usize>,
    #[arg(long, value_enum, default_value = "single,overall", value_delimiter = ',')]
    pub modes: Vec<ModeArg>,
    #[arg(long, value_enum, default_value_t = BackendArg::Adain)]
    pub backend: BackendArg,
    #[arg(long = "fft-window", default_value_t = 1.0)]
    pub fft_window: f64,
    #[arg(long, default_value_t = 16)]
    pub j: usize,
    #[arg(long, default_value_t = 60)]
    pub rounds: usize,
    #[arg(long = "local-epochs", default_value_t = 1)]
    pub local_epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    #[arg(long = "overall-style-sample")]
    pub overall_style_sample: Option<usize>,
    #[arg(long = "train-fraction", default_value_t = 0.9)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

impl SweepArgs {
    pub fn argv(&self) -> Vec<String> {
        let mut argv = vec!["sweep".to_string()];
        push_flag(&mut argv, "--data", self.data.display());
        if let Some(t) = self.target {
            push_flag(&mut argv, "--target", t);
        }
        push_flag(
            &mut argv,
            "--ks",
            self.ks.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        );
        push_flag(
            &mut argv,
            "--modes",
            self.modes.iter().map(|m| m.name()).collect::<Vec<_>>().join(","),
        );
        push_flag(&mut argv, "--backend", self.backend.name());
        push_flag(&mut argv, "--fft-window", self.fft_window);
        push_flag(&mut argv, "--j", self.j);
        push_flag(&mut argv, "--rounds", self.rounds);
        push_flag(&mut argv, "--local-epochs", self.local_epochs);
        push_flag(&mut argv, "--lr", self.lr);
        push_flag(&mut argv, "--batch", self.batch);
        push_flag(&mut argv, "--hidden", self.hidden);
        if let Some(m) = self.overall_style_sample {
            push_flag(&mut argv, "--overall-style-sample", m);
        }
        push_flag(&mut argv, "--train-fraction", self.train_fraction);
        push_flag(&mut argv, "--seed", self.seed);
        push_flag(&mut argv, "--out", self.out.display());
        argv
    }

    fn base_config(&self, cell: Option<(ModeArg, usize)>, seed: u64) -> FederationConfig {
        FederationConfig {
            rounds: self.rounds,
            train: TrainConfig {
                learning_rate: self.lr,
                batch_size: self.batch,
                local_epochs: self.local_epochs,
                seed: 0,
            },
            augment: cell.map(|(mode, k)| AugmentConfig {
                k,
                mode: mode.to_mode(),
                backend: self.backend.to_backend(),
                fft_window: self.fft_window,
                seed,
            }),
            styles_per_client: self.j,
            overall_style_sample: self.overall_style_sample,
            hidden_dim: self.hidden,
            threads: worker_threads(),
            seed,
        }
    }

    pub fn run(&self) -> CliResult<()> {
        if self.ks.is_empty() || self.modes.is_empty() {
            return Err(CliError::Usage("--ks and --modes must be non-empty".into()));
        }
        let (domains, _) = load_domains(&self.data)?;
        let targets: Vec<ClientId> = match self.target {
            Some(t) => {
                if !domains.contains_key(&ClientId(t)) {
                    return Err(CliError::Data(format!("target domain {t} not in dataset")));
                }
                vec![ClientId(t)]
            }
            None => domains.keys().copied().collect(),
        };

        // settings: the no-transfer baseline, then every mode x K cell
        let mut settings: Vec<(String, Option<(ModeArg, usize)>)> =
            vec![("fedavg".to_string(), None)];
        for &mode in &self.modes {
            for &k in &self.ks {
                settings.push((format!("{}_k{}", mode.name(), k), Some((mode, k))));
            }
        }

        let mut csv = String::from("setting");
        for t in &targets {
            write!(csv, ",target_{t}").unwrap();
        }
        csv.push_str(",average\n");

        for (row, (name, cell)) in settings.iter().enumerate() {
            // every row gets its own seed; per-target seeds derive from it
            let seed = Rng::derive(self.seed, ClientId(row as u16), 0, "sweep-row");
            let accs: Vec<(ClientId, f64)> = if self.target.is_some() {
                let target = targets[0];
                let split_seed = Rng::derive(seed, target, 0, "split");
                let fed =
                    split_leave_one_out(&domains, target, self.train_fraction, split_seed)?;
                let mut cfg = self.base_config(*cell, Rng::derive(seed, target, 0, "experiment"));
                if let Some(acfg) = &mut cfg.augment {
                    acfg.seed = Rng::derive(seed, target, 0, "augment");
                }
                vec![(target, run_ccst_experiment(&fed, &cfg)?.test_accuracy)]
            } else {
                let suite = leave_one_out_suite(
                    &domains,
                    &self.base_config(*cell, seed),
                    self.train_fraction,
                )?;
                suite
                    .per_target
                    .iter()
                    .map(|t| (t.target, t.test_accuracy))
                    .collect()
            };
            let average = accs.iter().map(|(_, a)| a).sum::<f64>() / accs.len() as f64;
            write!(csv, "{name}").unwrap();
            for (_, acc) in &accs {
                write!(csv, ",{acc}").unwrap();
            }
            writeln!(csv, ",{average}").unwrap();
            let cells: Vec<String> = accs
                .iter()
                .map(|(t, a)| format!("target {t}: {a:.4}"))
                .collect();
            println!("{name:>12}: {} | average {average:.4}", cells.join("  "));
        }

        create_out_dir(&self.out)?;
        fs::write(self.out.join("sweep.csv"), csv)?;
        RunManifest::new("sweep", self.argv(), self.seed, vec!["sweep.csv".into()])
            .save(&self.out)?;
        println!("sweep table -> {}", self.out.join("sweep.csv").display());
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// attack

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Style bank whose vectors are attacked.
    #[arg(long)]
    pub bank: PathBuf,
    /// Dataset the bank was published from (ground truth for scoring).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub target: u16,
    #[arg(long = "train-fraction", default_value_t = 0.9)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

impl AttackArgs {
    pub fn argv(&self) -> Vec<String> {
        let mut argv = vec!["attack".to_string()];
        push_flag(&mut argv, "--bank", self.bank.display());
        push_flag(&mut argv, "--data", self.data.display());
        push_flag(&mut argv, "--target", self.target);
        push_flag(&mut argv, "--train-fraction", self.train_fraction);
        push_flag(&mut argv, "--iterations", self.iterations);
        push_flag(&mut argv, "--seed", self.seed);
        push_flag(&mut argv, "--out", self.out.display());
        argv
    }

    pub fn run(&self) -> CliResult<()> {
        let bank: GlobalStyleBank = decode_bank(&fs::read(&self.bank)?)?;
        let (domains, _) = load_domains(&self.data)?;
        let fed = split_for(&domains, self.target, self.train_fraction, self.seed)?;
        let shape = fed
            .test
            .first()
            .map(|i| i.image.shape())
            .ok_or_else(|| CliError::Data("dataset has no images".into()))?;
        let space = IdentitySpace::new(shape.0);

        create_out_dir(&self.out)?;
        let mut csv = String::from(
            "client,style_index,iterations,residual,best_psnr_db,baseline_psnr_db\n",
        );
        let mut outputs = vec!["attack.csv".to_string()];
        for id in bank.clients() {
            let Some(client) = fed.clients.get(&id) else {
                return Err(CliError::Data(format!(
                    "bank client {id} has no source data in this split"
                )));
            };
            let candidates: Vec<_> = client.train.iter().map(|i| i.image.clone()).collect();
            let local = bank.entry(id).expect("listed client");
            for (s, style) in local.styles.iter().enumerate() {
                let mut rng = Rng::stream(self.seed, id, s as u64, "attack");
                let inversion = invert_style(style, shape, &space, self.iterations, &mut rng)?;
                let report = attack_report(&inversion, &candidates)?;
                let rel = format!("recon_c{}_{s}.cct", id.0);
                save_tensor(&self.out.join(&rel), &inversion.image)?;
                outputs.push(rel);
                writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    id.0, s, report.iterations, report.residual, report.best_psnr, report.baseline_psnr
                )
                .unwrap();
                println!(
                    "client {id} style {s}: residual {:.2e}, attack {:.1} dB vs mean-image baseline {:.1} dB",
                    report.residual, report.best_psnr, report.baseline_psnr
                );
            }
        }
        fs::write(self.out.join("attack.csv"), csv)?;
        RunManifest::new("attack", self.argv(), self.seed, outputs).save(&self.out)?;
        println!("attack report -> {}", self.out.join("attack.csv").display());
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// report (histogram uniformization)

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub target: u16,
    #[arg(long, value_enum, default_value_t = ModeArg::Overall)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 16)]
    pub j: usize,
    #[arg(long, value_enum, default_value_t = BackendArg::Adain)]
    pub backend: BackendArg,
    #[arg(long = "fft-window", default_value_t = 1.0)]
    pub fft_window: f64,
    #[arg(long, default_value_t = 256)]
    pub bins: usize,
    #[arg(long = "overall-style-sample")]
    pub overall_style_sample: Option<usize>,
    #[arg(long = "train-fraction", default_value_t = 0.9)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

impl ReportArgs {
    pub fn argv(&self) -> Vec<String> {
        let mut argv = vec!["report".to_string()];
        push_flag(&mut argv, "--data", self.data.display());
        push_flag(&mut argv, "--target", self.target);
        push_flag(&mut argv, "--mode", self.mode.name());
        push_flag(&mut argv, "--k", self.k);
        push_flag(&mut argv, "--j", self.j);
        push_flag(&mut argv, "--backend", self.backend.name());
        push_flag(&mut argv, "--fft-window", self.fft_window);
        push_flag(&mut argv, "--bins", self.bins);
        if let Some(m) = self.overall_style_sample {
            push_flag(&mut argv, "--overall-style-sample", m);
        }
        push_flag(&mut argv, "--train-fraction", self.train_fraction);
        push_flag(&mut argv, "--seed", self.seed);
        push_flag(&mut argv, "--out", self.out.display());
        argv
    }

    pub fn run(&self) -> CliResult<()> {
        let (domains, _) = load_domains(&self.data)?;
        let fed = split_for(&domains, self.target, self.train_fraction, self.seed)?;
        let acfg = AugmentConfig {
            k: self.k,
            mode: self.mode.to_mode(),
            backend: self.backend.to_backend(),
            fft_window: self.fft_window,
            seed: self.seed,
        };
        let (augmented, _) = ccst_core::fed::augment_federation(
            &fed,
            &acfg,
            self.j,
            self.overall_style_sample,
            self.seed,
        )?;
        let before: BTreeMap<ClientId, Vec<LabeledImage>> = fed
            .clients
            .iter()
            .map(|(&id, c)| (id, c.train.clone()))
            .collect();
        let report = before_after_report(&before, &augmented, self.bins)?;

        create_out_dir(&self.out)?;
        let profile_csv = |profiles: &[ccst_core::analysis::ClientHistogramProfile]| {
            let mut csv = String::from("client,bin,average_count\n");
            for p in profiles {
                for (bin, count) in p.histogram.iter().enumerate() {
                    writeln!(csv, "{},{},{}", p.client.0, bin, count).unwrap();
                }
            }
            csv
        };
        fs::write(self.out.join("profiles_before.csv"), profile_csv(&report.before))?;
        fs::write(self.out.join("profiles_after.csv"), profile_csv(&report.after))?;
        let mut pairs = String::from("client_a,client_b,before_l1,after_l1\n");
        for p in &report.pairs {
            writeln!(pairs, "{},{},{},{}", p.a.0, p.b.0, p.before, p.after).unwrap();
        }
        fs::write(self.out.join("pairs.csv"), pairs)?;
        RunManifest::new(
            "report",
            self.argv(),
            self.seed,
            vec![
                "profiles_before.csv".into(),
                "profiles_after.csv".into(),
                "pairs.csv".into(),
            ],
        )
        .save(&self.out)?;
        println!(
            "mean pairwise histogram L1: before {:.4}, after {:.4}, margin {:.4} -> {}",
            report.before_distance,
            report.after_distance,
            report.margin(),
            self.out.display()
        );
        Ok(())
    }
}
