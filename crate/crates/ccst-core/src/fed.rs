//! Federated averaging and the end-to-end experiment harness.
//!
//! A round copies the global parameters to every client, runs local SGD,
//! and aggregates the results weighted by augmented-training-set sizes.
//! The full pipeline is: local style computation, server-side bank assembly
//! and broadcast (through the wire encoding), local style transfer, then
//! federated training with best-validation model selection and evaluation
//! on the held-out target domain.

use std::collections::BTreeMap;

use crate::augment::{
    assemble_amplitude_bank, augment_client, publish_amplitudes, AugmentConfig, TransferBackend,
    TransferBank,
};
use crate::bank::{assemble_bank, decode_bank, encode_bank, publish_styles, LocalStyleBank};
use crate::data::FederatedDataset;
use crate::error::{Error, Result};
use crate::model::{
    evaluate, sgd_epochs, Arch, ModelParams, Standardizer, TrainConfig,
};
use crate::rng::Rng;
use crate::tensor::{ClientId, LabeledImage};

/// Everything a federation run needs beyond the dataset itself.
#[derive(Debug, Clone)]
pub struct FederationConfig {
    /// Communication rounds.
    pub rounds: usize,
    pub train: TrainConfig,
    /// Augmentation settings; `None` runs the plain FedAvg baseline.
    pub augment: Option<AugmentConfig>,
    /// Styles each client publishes in single mode (J).
    pub styles_per_client: usize,
    /// Cap on images used for the overall style; `None` uses all.
    pub overall_style_sample: Option<usize>,
    pub hidden_dim: usize,
    /// Worker threads for client-parallel stages; results are
    /// schedule-invariant, so any value >= 1 gives identical output.
    pub threads: usize,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 60,
            train: TrainConfig::default(),
            augment: Some(AugmentConfig::default()),
            styles_per_client: 16,
            overall_style_sample: None,
            hidden_dim: 256,
            threads: 1,
            seed: 7,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("rounds must be >= 1".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::InvalidConfig("hidden dim must be >= 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::InvalidConfig("threads must be >= 1".into()));
        }
        self.train.validate()
    }
}

/// What happened in one communication round.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: usize,
    pub train_loss: BTreeMap<ClientId, f64>,
    /// Unweighted mean accuracy of the new global model over the source
    /// clients' validation sets.
    pub validation_accuracy: f64,
}

/// Element-wise weighted mean of parameter vectors: the sum runs in client
/// index order and is divided once, so results are bit-reproducible under
/// any scheduling.
pub fn fedavg_aggregate(params: &[ModelParams], weights: &[f64]) -> Result<ModelParams> {
    if params.is_empty() {
        return Err(Error::EmptyInput("fedavg_aggregate"));
    }
    if params.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameter sets vs {} weights",
            params.len(),
            weights.len()
        )));
    }
    let arch = params[0].arch();
    for p in params {
        if p.arch() != arch {
            return Err(Error::ShapeMismatch("mixed architectures".into()));
        }
    }
    if weights.iter().any(|&w| w.is_nan() || w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidConfig("weights must be non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidConfig("weights sum to zero".into()));
    }
    // anchored form: first params plus the weighted mean of deltas, summed
    // in client-index order and divided once. Equal inputs aggregate to
    // themselves exactly, and scheduling cannot change the result.
    let anchor = params[0].values();
    let mut acc = vec![0.0; arch.param_count()];
    for (p, &w) in params.iter().zip(weights).skip(1) {
        for ((a, v), base) in acc.iter_mut().zip(p.values()).zip(anchor) {
            *a += w * (v - base);
        }
    }
    for (a, base) in acc.iter_mut().zip(anchor) {
        *a = base + *a / total;
    }
    ModelParams::new(arch, acc)
}

/// A client's standardized training and validation data plus its FedAvg
/// weight (its augmented-training-set size).
#[derive(Debug, Clone)]
pub struct PreparedClient {
    pub id: ClientId,
    pub train: Vec<LabeledImage>,
    pub validation: Vec<LabeledImage>,
}

impl PreparedClient {
    pub fn weight(&self) -> f64 {
        self.train.len() as f64
    }
}

fn local_train_config(cfg: &FederationConfig, client: ClientId, round: usize) -> TrainConfig {
    TrainConfig {
        seed: Rng::derive(cfg.seed, client, round as u64, "train"),
        ..cfg.train.clone()
    }
}

/// One communication round: local SGD on every client from the shared
/// global parameters, then weighted aggregation. Clients may train on
/// `cfg.threads` workers; the result is identical for any thread count.
pub fn run_round(
    global: &ModelParams,
    clients: &[PreparedClient],
    cfg: &FederationConfig,
    round: usize,
) -> Result<(ModelParams, RoundRecord)> {
    if clients.is_empty() {
        return Err(Error::EmptyInput("run_round clients"));
    }
    let mut outcomes: Vec<Option<Result<(ModelParams, f64)>>> = Vec::new();
    outcomes.resize_with(clients.len(), || None);

    let workers = cfg.threads.min(clients.len());
    if workers <= 1 {
        for (i, client) in clients.iter().enumerate() {
            let local_cfg = local_train_config(cfg, client.id, round);
            outcomes[i] = Some(sgd_epochs(global, &client.train, &local_cfg));
        }
    } else {
        let mut slots: Vec<&mut Option<Result<(ModelParams, f64)>>> =
            outcomes.iter_mut().collect();
        std::thread::scope(|scope| {
            for (worker, chunk) in slots.chunks_mut(clients.len().div_ceil(workers)).enumerate() {
                let base = worker * clients.len().div_ceil(workers);
                let chunk: &mut [&mut Option<Result<(ModelParams, f64)>>] = chunk;
                scope.spawn(move || {
                    for (offset, slot) in chunk.iter_mut().enumerate() {
                        let client = &clients[base + offset];
                        let local_cfg = local_train_config(cfg, client.id, round);
                        **slot = Some(sgd_epochs(global, &client.train, &local_cfg));
                    }
                });
            }
        });
    }

    let mut locals = Vec::with_capacity(clients.len());
    let mut weights = Vec::with_capacity(clients.len());
    let mut train_loss = BTreeMap::new();
    for (client, outcome) in clients.iter().zip(outcomes) {
        let (params, loss) = outcome.expect("every slot filled")?;
        train_loss.insert(client.id, loss);
        weights.push(client.weight());
        locals.push(params);
    }
    let new_global = fedavg_aggregate(&locals, &weights)?;

    let mut accuracy_sum = 0.0;
    for client in clients {
        accuracy_sum += evaluate(&new_global, &client.validation)?;
    }
    let record = RoundRecord {
        round,
        train_loss,
        validation_accuracy: accuracy_sum / clients.len() as f64,
    };
    Ok((new_global, record))
}

/// Communication-cost accounting for the style-sharing stage.
#[derive(Debug, Clone, Default)]
pub struct CommunicationCost {
    /// Encoded upload size per client (its local bank as a one-entry wire
    /// message).
    pub upload_bytes: BTreeMap<ClientId, usize>,
    /// Encoded size of the broadcast global bank.
    pub broadcast_bytes: usize,
}

/// Full report of one leave-one-domain-out experiment.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub rounds: Vec<RoundRecord>,
    pub best_round: usize,
    pub best_validation_accuracy: f64,
    /// Test accuracy of the best-validation checkpoint on the unseen target.
    pub test_accuracy: f64,
    pub best_params: ModelParams,
    /// Standardizer applied to target-domain data at evaluation time (the
    /// mean of the source clients' training statistics).
    pub eval_standardizer: Standardizer,
    pub augmented_sizes: BTreeMap<ClientId, usize>,
    pub communication: CommunicationCost,
}

/// Stages 1-3 of the pipeline: publish styles, assemble and broadcast the
/// bank (through its wire encoding), and augment every client's training
/// set. Returns the per-client augmented data and the byte accounting.
pub fn augment_federation(
    data: &FederatedDataset,
    acfg: &AugmentConfig,
    styles_per_client: usize,
    overall_style_sample: Option<usize>,
    root_seed: u64,
) -> Result<(BTreeMap<ClientId, Vec<LabeledImage>>, CommunicationCost)> {
    let channels = data.channels();
    let space = crate::style::IdentitySpace::new(channels);
    let mut cost = CommunicationCost::default();

    let bank = match acfg.backend {
        TransferBackend::Adain => {
            let mut locals: Vec<LocalStyleBank> = Vec::new();
            for (&id, client) in &data.clients {
                let mut rng = Rng::stream(root_seed, id, 0, "publish");
                let local = publish_styles(
                    id,
                    &client.train,
                    acfg.mode,
                    styles_per_client,
                    &space,
                    &mut rng,
                    overall_style_sample,
                )?;
                let upload = encode_bank(&assemble_bank(vec![local.clone()])?)?;
                cost.upload_bytes.insert(id, upload.len());
                locals.push(local);
            }
            // broadcast is the encoded global bank; decode on the way back
            // in, exactly as a client would
            let encoded = encode_bank(&assemble_bank(locals)?)?;
            cost.broadcast_bytes = encoded.len();
            TransferBank::Style(decode_bank(&encoded)?)
        }
        TransferBackend::Fft => {
            let mut locals = Vec::new();
            for (&id, client) in &data.clients {
                let mut rng = Rng::stream(root_seed, id, 0, "publish");
                let spectra =
                    publish_amplitudes(&client.train, acfg.mode, styles_per_client, &mut rng)?;
                cost.upload_bytes
                    .insert(id, spectra.iter().map(|s| s.data().len() * 8).sum());
                locals.push((id, spectra));
            }
            let bank = assemble_amplitude_bank(locals, acfg.mode)?;
            cost.broadcast_bytes = bank.payload_bytes();
            TransferBank::Amplitude(bank)
        }
    };

    let mut augmented = BTreeMap::new();
    for (&id, client) in &data.clients {
        let out = augment_client(&client.train, &bank, acfg, id, &space)?;
        augmented.insert(id, out.entries.into_iter().map(|e| e.image).collect());
    }
    Ok((augmented, cost))
}

fn check_target_isolation(data: &FederatedDataset) -> Result<()> {
    for (&id, client) in &data.clients {
        if id == data.target {
            return Err(Error::InvalidConfig(format!(
                "target {id} appears among source clients"
            )));
        }
        for img in client.train.iter().chain(&client.validation) {
            if img.domain == data.target {
                return Err(Error::InvalidConfig(format!(
                    "target-domain image reached source client {id}"
                )));
            }
        }
    }
    Ok(())
}

/// Runs the whole pipeline on one leave-one-domain-out federation and
/// reports the test accuracy of the best-validation checkpoint.
pub fn run_ccst_experiment(
    data: &FederatedDataset,
    cfg: &FederationConfig,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    if data.clients.is_empty() {
        return Err(Error::EmptyInput("federation without source clients"));
    }
    check_target_isolation(data)?;

    let (augmented, communication) = match &cfg.augment {
        Some(acfg) => augment_federation(
            data,
            acfg,
            cfg.styles_per_client,
            cfg.overall_style_sample,
            cfg.seed,
        )?,
        None => (
            data.clients
                .iter()
                .map(|(&id, c)| (id, c.train.clone()))
                .collect(),
            CommunicationCost::default(),
        ),
    };

    // each client standardizes by its own augmented-train statistics; the
    // server evaluates unseen data with the mean of those statistics
    let mut clients = Vec::new();
    let mut standardizers = Vec::new();
    let mut augmented_sizes = BTreeMap::new();
    for (&id, train) in &augmented {
        let standardizer = Standardizer::fit(train.iter())?;
        let validation = standardizer.apply_all(&data.clients[&id].validation)?;
        let train = standardizer.apply_all(train)?;
        augmented_sizes.insert(id, train.len());
        standardizers.push(standardizer);
        clients.push(PreparedClient { id, train, validation });
    }
    let eval_standardizer = Standardizer::mean_of(&standardizers)?;
    let test = eval_standardizer.apply_all(&data.test)?;

    let input_dim = data.channels() * test[0].image.pixels();
    let arch = Arch {
        input_dim,
        hidden_dim: cfg.hidden_dim,
        num_classes: data.num_classes,
    };
    let mut global = ModelParams::init(arch, &mut Rng::stream(cfg.seed, ClientId(0), 0, "init"));

    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut best_round = 0usize;
    let mut best_validation = f64::NEG_INFINITY;
    let mut best_params = global.clone();
    for round in 0..cfg.rounds {
        let (next, record) = run_round(&global, &clients, cfg, round)?;
        global = next;
        if record.validation_accuracy > best_validation {
            best_validation = record.validation_accuracy;
            best_round = round;
            best_params = global.clone();
        }
        rounds.push(record);
    }

    let test_accuracy = evaluate(&best_params, &test)?;
    Ok(ExperimentReport {
        rounds,
        best_round,
        best_validation_accuracy: best_validation,
        test_accuracy,
        best_params,
        eval_standardizer,
        augmented_sizes,
        communication,
    })
}

/// Outcome of holding out one domain.
#[derive(Debug, Clone)]
pub struct TargetResult {
    pub target: ClientId,
    pub test_accuracy: f64,
    pub best_round: usize,
    pub best_validation_accuracy: f64,
}

/// Results of the full leave-one-domain-out sweep.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub per_target: Vec<TargetResult>,
    pub average_accuracy: f64,
}

/// Runs one experiment per held-out domain; per-target seeds are derived
/// from the root seed.
pub fn leave_one_out_suite(
    domains: &BTreeMap<ClientId, Vec<LabeledImage>>,
    cfg: &FederationConfig,
    train_fraction: f64,
) -> Result<SuiteReport> {
    if domains.len() < 2 {
        return Err(Error::InvalidConfig(
            "leave-one-out needs at least 2 domains".into(),
        ));
    }
    let mut per_target = Vec::new();
    for &target in domains.keys() {
        let split_seed = Rng::derive(cfg.seed, target, 0, "split");
        let data = crate::data::split_leave_one_out(domains, target, train_fraction, split_seed)?;
        let mut exp_cfg = cfg.clone();
        exp_cfg.seed = Rng::derive(cfg.seed, target, 0, "experiment");
        if let Some(acfg) = &mut exp_cfg.augment {
            acfg.seed = Rng::derive(cfg.seed, target, 0, "augment");
        }
        let report = run_ccst_experiment(&data, &exp_cfg)?;
        per_target.push(TargetResult {
            target,
            test_accuracy: report.test_accuracy,
            best_round: report.best_round,
            best_validation_accuracy: report.best_validation_accuracy,
        });
    }
    let average_accuracy =
        per_target.iter().map(|t| t.test_accuracy).sum::<f64>() / per_target.len() as f64;
    Ok(SuiteReport {
        per_target,
        average_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_specs, generate_domains, split_leave_one_out};
    use crate::model::TrainConfig;
    use crate::style::StyleMode;

    fn tiny_params(value: f64) -> ModelParams {
        // input 1, hidden 1, classes 1 -> 4 params (w1, b1, w2, b2)
        let arch = Arch {
            input_dim: 1,
            hidden_dim: 1,
            num_classes: 1,
        };
        ModelParams::new(arch, vec![value; 4]).unwrap()
    }

    fn small_config(rounds: usize) -> FederationConfig {
        FederationConfig {
            rounds,
            train: TrainConfig {
                learning_rate: 0.01,
                batch_size: 8,
                local_epochs: 1,
                seed: 0,
            },
            augment: Some(AugmentConfig {
                k: 3,
                mode: StyleMode::Overall,
                seed: 9,
                ..Default::default()
            }),
            styles_per_client: 4,
            overall_style_sample: None,
            hidden_dim: 16,
            threads: 1,
            seed: 42,
        }
    }

    fn small_dataset(seed: u64) -> crate::data::FederatedDataset {
        let domains = generate_domains(2, 20, 8, &default_specs(4), seed).unwrap();
        split_leave_one_out(&domains, ClientId(3), 0.8, seed).unwrap()
    }

    #[test]
    fn aggregate_weighted_mean() {
        let a = tiny_params(0.0);
        let b = tiny_params(4.0);
        let out = fedavg_aggregate(&[a, b], &[1.0, 3.0]).unwrap();
        assert_eq!(out.values(), &[3.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn aggregate_identity_cases() {
        let a = tiny_params(0.5);
        let out = fedavg_aggregate(&[a.clone(), a.clone()], &[2.0, 5.0]).unwrap();
        assert_eq!(out, a);
        let single = fedavg_aggregate(std::slice::from_ref(&a), &[0.7]).unwrap();
        assert_eq!(single, a);
    }

    #[test]
    fn aggregate_rejects_bad_weights_and_arches() {
        let a = tiny_params(0.0);
        assert!(fedavg_aggregate(std::slice::from_ref(&a), &[0.0]).is_err());
        assert!(fedavg_aggregate(std::slice::from_ref(&a), &[-1.0]).is_err());
        assert!(fedavg_aggregate(std::slice::from_ref(&a), &[1.0, 1.0]).is_err());
        let other = ModelParams::zeros(Arch {
            input_dim: 2,
            hidden_dim: 1,
            num_classes: 1,
        });
        assert!(fedavg_aggregate(&[a, other], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn aggregate_power_of_two_weight_scaling_is_bitwise() {
        let a = tiny_params(0.1);
        let b = tiny_params(0.9);
        let w = [0.3, 1.7];
        let scaled: Vec<f64> = w.iter().map(|v| v * 4.0).collect();
        let x = fedavg_aggregate(&[a.clone(), b.clone()], &w).unwrap();
        let y = fedavg_aggregate(&[a, b], &scaled).unwrap();
        for (p, q) in x.values().iter().zip(y.values()) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
    }

    #[test]
    fn aggregate_is_associative_within_tolerance() {
        let a = tiny_params(0.1);
        let b = tiny_params(0.9);
        let c = tiny_params(-0.5);
        let (wa, wb, wc) = (1.0, 2.0, 3.0);
        let ab = fedavg_aggregate(&[a.clone(), b.clone()], &[wa, wb]).unwrap();
        let nested = fedavg_aggregate(&[ab, c.clone()], &[wa + wb, wc]).unwrap();
        let flat = fedavg_aggregate(&[a, b, c], &[wa, wb, wc]).unwrap();
        for (p, q) in nested.values().iter().zip(flat.values()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn round_with_zero_lr_keeps_global() {
        let data = small_dataset(1);
        let mut cfg = small_config(1);
        cfg.train.learning_rate = 0.0;
        cfg.train.local_epochs = 2;
        let report = run_ccst_experiment(&data, &cfg).unwrap();
        // aggregation of identical params equals the init regardless of data
        let arch = report.best_params.arch();
        let init = ModelParams::init(arch, &mut Rng::stream(cfg.seed, ClientId(0), 0, "init"));
        assert_eq!(report.best_params, init);
    }

    #[test]
    fn parallel_and_sequential_rounds_agree_bitwise() {
        let data = small_dataset(2);
        let cfg = small_config(2);
        let seq = run_ccst_experiment(&data, &cfg).unwrap();
        let mut par_cfg = cfg;
        par_cfg.threads = 3;
        let par = run_ccst_experiment(&data, &par_cfg).unwrap();
        assert_eq!(seq.best_params, par.best_params);
        assert_eq!(seq.test_accuracy, par.test_accuracy);
        for (a, b) in seq.rounds.iter().zip(&par.rounds) {
            assert_eq!(a.validation_accuracy, b.validation_accuracy);
            assert_eq!(a.train_loss, b.train_loss);
        }
    }

    #[test]
    fn single_client_round_equals_local_training() {
        let domains = generate_domains(2, 20, 8, &default_specs(2), 4).unwrap();
        let data = split_leave_one_out(&domains, ClientId(1), 0.8, 4).unwrap();
        let cfg = FederationConfig {
            augment: None,
            ..small_config(1)
        };
        // prepare exactly as the harness does
        let std = Standardizer::fit(data.clients[&ClientId(0)].train.iter()).unwrap();
        let train = std.apply_all(&data.clients[&ClientId(0)].train).unwrap();
        let arch = Arch {
            input_dim: 3 * 64,
            hidden_dim: cfg.hidden_dim,
            num_classes: data.num_classes,
        };
        let global = ModelParams::init(arch, &mut Rng::stream(cfg.seed, ClientId(0), 0, "init"));
        let clients = vec![PreparedClient {
            id: ClientId(0),
            train: train.clone(),
            validation: std.apply_all(&data.clients[&ClientId(0)].validation).unwrap(),
        }];
        let (aggregated, _) = run_round(&global, &clients, &cfg, 0).unwrap();
        let local_cfg = local_train_config(&cfg, ClientId(0), 0);
        let (local, _) = sgd_epochs(&global, &train, &local_cfg).unwrap();
        assert_eq!(aggregated, local);
    }

    #[test]
    fn report_structure_and_baseline_path() {
        let data = small_dataset(3);
        let cfg = small_config(3);
        let report = run_ccst_experiment(&data, &cfg).unwrap();
        assert_eq!(report.rounds.len(), 3);
        assert!(report.best_round < 3);
        assert!((0.0..=1.0).contains(&report.test_accuracy));
        // augmented size is k * train size
        for (id, &size) in &report.augmented_sizes {
            assert_eq!(size, 3 * data.clients[id].train.len());
        }
        assert!(report.communication.broadcast_bytes > 0);

        let baseline_cfg = FederationConfig {
            augment: None,
            ..small_config(3)
        };
        let baseline = run_ccst_experiment(&data, &baseline_cfg).unwrap();
        for (id, &size) in &baseline.augmented_sizes {
            assert_eq!(size, data.clients[id].train.len());
        }
        assert_eq!(baseline.communication.broadcast_bytes, 0);
    }

    #[test]
    fn experiment_is_deterministic() {
        let data = small_dataset(5);
        let cfg = small_config(2);
        let a = run_ccst_experiment(&data, &cfg).unwrap();
        let b = run_ccst_experiment(&data, &cfg).unwrap();
        assert_eq!(a.best_params, b.best_params);
        assert_eq!(a.test_accuracy, b.test_accuracy);
    }

    #[test]
    fn target_leak_is_rejected() {
        let mut data = small_dataset(8);
        let stray = data.test[0].clone();
        data.clients.get_mut(&ClientId(0)).unwrap().train.push(stray);
        let err = run_ccst_experiment(&data, &small_config(1)).unwrap_err();
        assert!(err.to_string().contains("target-domain image"));
    }

    #[test]
    fn suite_runs_each_target_and_averages() {
        let domains = generate_domains(2, 16, 8, &default_specs(3), 6).unwrap();
        let mut cfg = small_config(2);
        cfg.augment.as_mut().unwrap().k = 2;
        let suite = leave_one_out_suite(&domains, &cfg, 0.75).unwrap();
        assert_eq!(suite.per_target.len(), 3);
        let mean = suite
            .per_target
            .iter()
            .map(|t| t.test_accuracy)
            .sum::<f64>()
            / 3.0;
        assert!((suite.average_accuracy - mean).abs() < 1e-12);
        let targets: Vec<u16> = suite.per_target.iter().map(|t| t.target.0).collect();
        assert_eq!(targets, vec![0, 1, 2]);
    }
}
