use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::checkpoint::{save_checkpoint, CheckpointRecord, NamedArray, NamedBytes, FORMAT_VERSION};
use super::config::{
    resolve_mode, Mode, ResolvedMode, TrainingConfig, DUMP_SEED_OFFSET, EVAL_SEED_OFFSET, INIT_SEED_OFFSET,
    TRAIN_SEED_OFFSET,
};
use super::log::{LogRow, MetricsLog};
use super::{evaluate, generate_labeled, latent_batch, step_rng};
use crate::autodiff::{adam_step, AdamState, Gradients, Tape, Tensor, Var};
use crate::data::{write_points_csv, ClassConditionalDataset};
use crate::error::{Error, Result};
use crate::metrics::{MetricOptions, MetricsReport};
use crate::nets::{
    discriminator_forward_batch, generator_forward_batch, init_params, DiscriminatorParams, GeneratorParams,
};
use crate::objective::{combined_losses, generator_objective, r1_penalty};

/// Loss values of the most recent iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepLosses {
    /// Discriminator objective without the R1 term.
    pub d_total: f64,
    pub g_total: f64,
}

/// Mutable state of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainingConfig,
    dataset: ClassConditionalDataset,
    generator: GeneratorParams,
    discriminator: DiscriminatorParams,
    g_opt: AdamState,
    d_opt: AdamState,
    rng: ChaCha8Rng,
    step: u64,
    real_samples_seen: u64,
    first_embedding_grad_step: Option<u64>,
    last_losses: StepLosses,
    log: MetricsLog,
    metric_options: MetricOptions,
}

/// What a finished run hands back besides its files.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: MetricsLog,
    pub checkpoint: CheckpointRecord,
    pub real_samples_seen: u64,
    pub first_embedding_grad_step: Option<u64>,
    pub best_fid_step: Option<u64>,
}

fn optimizer_for(tensors: &[(String, &Tensor)], config: &TrainingConfig) -> AdamState {
    let refs: Vec<&Tensor> = tensors.iter().map(|(_, t)| *t).collect();
    AdamState::new(&refs, config.lr, config.beta1, config.beta2)
}

fn collect_grads(grads: &mut Gradients, vars: &[Var]) -> Result<Vec<Vec<f64>>> {
    vars.iter()
        .map(|&v| {
            grads
                .take(v)
                .ok_or_else(|| Error::contract("trainable parameter received no gradient"))
        })
        .collect()
}

fn apply_update(named: Vec<(String, &mut Tensor)>, grads: &[Vec<f64>], opt: &mut AdamState) -> Result<()> {
    let mut slices: Vec<&mut [f64]> = named.into_iter().map(|(_, t)| t.data_mut()).collect();
    adam_step(&mut slices, grads, opt)?;
    if slices.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("parameters after adam update".into()));
    }
    Ok(())
}

fn u64_bytes(name: &str, v: u64) -> NamedBytes {
    NamedBytes {
        name: name.into(),
        bytes: v.to_le_bytes().to_vec(),
    }
}

impl Trainer {
    pub fn new(config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let dataset = config.build_dataset()?;
        let (generator, discriminator) = init_params(&config.arch(), config.seed.wrapping_add(INIT_SEED_OFFSET))?;
        let g_opt = optimizer_for(&generator.named(), &config);
        let d_opt = optimizer_for(&discriminator.named(), &config);
        let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(TRAIN_SEED_OFFSET));
        let metric_options = MetricOptions {
            classwise: config.eval_classwise,
            ..MetricOptions::default()
        };
        Ok(Self {
            config,
            dataset,
            generator,
            discriminator,
            g_opt,
            d_opt,
            rng,
            step: 0,
            real_samples_seen: 0,
            first_embedding_grad_step: None,
            last_losses: StepLosses::default(),
            log: MetricsLog::new(),
            metric_options,
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn dataset(&self) -> &ClassConditionalDataset {
        &self.dataset
    }

    pub fn generator(&self) -> &GeneratorParams {
        &self.generator
    }

    pub fn discriminator(&self) -> &DiscriminatorParams {
        &self.discriminator
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    pub fn real_samples_seen(&self) -> u64 {
        self.real_samples_seen
    }

    /// First iteration at which the class embedding received a nonzero gradient.
    pub fn first_embedding_grad_step(&self) -> Option<u64> {
        self.first_embedding_grad_step
    }

    pub fn last_losses(&self) -> StepLosses {
        self.last_losses
    }

    fn t_max(&self) -> u64 {
        self.config.t_max as u64
    }

    /// λ reported in the log: the schedule for modes that follow it,
    /// otherwise the mode's constant.
    pub fn logged_lambda(&self, t: u64) -> f64 {
        match self.config.mode {
            Mode::Unconditional => 0.0,
            Mode::Conditional | Mode::NoTransition => 1.0,
            _ => self.config.schedule().lambda_at(t as i64),
        }
    }

    fn discriminator_update(&mut self, mode: ResolvedMode) -> Result<f64> {
        let b = self.config.batch_size;
        let (real, labels) = self.dataset.minibatch(b, &mut self.rng)?;
        self.real_samples_seen += b as u64;
        let z = latent_batch(&mut self.rng, b, self.generator.latent_dim())?;
        let fake = self.generator.sample(&z, &labels, mode.generator_lambda)?;

        let mut tape = Tape::new();
        let vars = self.discriminator.bind(&mut tape, true)?;
        let xr = tape.constant(real)?;
        let xf = tape.constant(fake)?;
        let real_trace = discriminator_forward_batch(&mut tape, &vars, xr, &labels)?;
        let fake_trace = discriminator_forward_batch(&mut tape, &vars, xf, &labels)?;
        let terms = combined_losses(
            &mut tape,
            (&real_trace).into(),
            (&fake_trace).into(),
            mode.loss_lambda,
            mode.formulation,
        )?;
        let penalty = r1_penalty(&mut tape, &vars, &real_trace, self.config.r1_weight)?;
        let total = tape.add(terms.d_total, penalty)?;
        let d_value = tape.scalar_value(terms.d_total)?;

        let mut grads = tape.backward(total)?;
        let g = collect_grads(&mut grads, &vars.all())?;
        apply_update(self.discriminator.named_mut(), &g, &mut self.d_opt)?;
        Ok(d_value)
    }

    fn generator_update(&mut self, mode: ResolvedMode, t: u64) -> Result<f64> {
        let b = self.config.batch_size;
        let n = self.dataset.len();
        let labels: Vec<usize> = (0..b)
            .map(|_| self.dataset.labels()[self.rng.random_range(0..n)])
            .collect();
        let z = latent_batch(&mut self.rng, b, self.generator.latent_dim())?;

        let mut tape = Tape::new();
        let gv = self.generator.bind(&mut tape, true)?;
        let dv = self.discriminator.bind(&mut tape, false)?;
        let zv = tape.constant(z)?;
        let gen = generator_forward_batch(&mut tape, &gv, zv, &labels, mode.generator_lambda)?;
        let fake = discriminator_forward_batch(&mut tape, &dv, gen.output, &labels)?;
        let loss = generator_objective(&mut tape, (&fake).into(), mode.loss_lambda, mode.formulation)?;
        let g_value = tape.scalar_value(loss)?;

        let mut grads = tape.backward(loss)?;
        if self.first_embedding_grad_step.is_none()
            && grads
                .get(gv.class_embedding_table)
                .is_some_and(|g| g.iter().any(|&v| v != 0.0))
        {
            self.first_embedding_grad_step = Some(t);
        }
        let g = collect_grads(&mut grads, &gv.all())?;
        apply_update(self.generator.named_mut(), &g, &mut self.g_opt)?;
        Ok(g_value)
    }

    /// One full iteration `t`: the discriminator updates, then the generator update.
    fn iterate(&mut self, t: u64) -> Result<()> {
        let mode = resolve_mode(&self.config, t as i64);
        let mut d_total = 0.0;
        for _ in 0..self.config.d_steps_per_g_step {
            d_total = self.discriminator_update(mode)?;
        }
        let g_total = self.generator_update(mode, t)?;
        self.last_losses = StepLosses { d_total, g_total };
        Ok(())
    }

    /// Scores the current generator at `lambda` with the evaluation stream of `step`.
    pub fn evaluate_at(&self, lambda: f64, step: u64) -> Result<MetricsReport> {
        let mut rng = step_rng(self.config.seed, EVAL_SEED_OFFSET, step);
        evaluate(
            &self.generator,
            lambda,
            &self.dataset,
            self.config.effective_per_class(),
            &mut rng,
            &self.metric_options,
            step,
        )
    }

    fn record_eval(&mut self, t: u64) -> Result<MetricsReport> {
        let lambda = resolve_mode(&self.config, t as i64).generator_lambda;
        let report = self.evaluate_at(lambda, t)?;
        self.log.push(LogRow {
            step: t,
            lambda: self.logged_lambda(t),
            d_total: self.last_losses.d_total,
            g_total: self.last_losses.g_total,
            fid: report.fid,
            kid: report.kid,
            precision: report.precision,
            recall: report.recall,
            mode_coverage: report.mode_coverage,
            class_fidelity: report.class_fidelity,
        })?;
        Ok(report)
    }

    fn dump_samples(&self, t: u64, dir: &Path) -> Result<()> {
        let lambda = resolve_mode(&self.config, t as i64).generator_lambda;
        let mut rng = step_rng(self.config.seed, DUMP_SEED_OFFSET, t);
        let set = generate_labeled(
            &self.generator,
            lambda,
            self.dataset.num_classes(),
            self.config.effective_per_class(),
            &mut rng,
        )?;
        let file = std::fs::File::create(dir.join(format!("samples_step{t}.csv")))?;
        write_points_csv(
            std::io::BufWriter::new(file),
            set.dim(),
            set.vectors(),
            set.labels().expect("generated sets are labeled"),
        )
    }

    /// Runs iterations until `until` (clamped to `t_max`), writing artifacts into `out` when given.
    pub fn run_until(&mut self, until: u64, out: Option<&Path>) -> Result<()> {
        let until = until.min(self.t_max());
        while self.step < until {
            let t = self.step + 1;
            if let Err(e) = self.iterate(t) {
                return Err(self.abort(e, t, out));
            }
            self.step = t;
            let c = &self.config;
            if t.is_multiple_of(c.eval_every) || t == self.t_max() {
                let report = self.record_eval(t).map_err(|e| self.abort(e, t, out))?;
                if let Some(dir) = out {
                    std::fs::write(dir.join("metrics.csv"), self.log.to_csv_string())?;
                    if self.config.eval_classwise {
                        let line = serde_json::to_string(&report)?;
                        append_line(&dir.join("classwise.jsonl"), &line)?;
                    }
                }
            }
            if let Some(dir) = out {
                let c = &self.config;
                if c.sample_dump_every > 0 && t.is_multiple_of(c.sample_dump_every) {
                    self.dump_samples(t, dir)?;
                }
                if c.checkpoint_every > 0 && t.is_multiple_of(c.checkpoint_every) && t != self.t_max() {
                    save_checkpoint(&self.checkpoint(), &dir.join(format!("checkpoint_step{t}.bin")))?;
                }
            }
        }
        Ok(())
    }

    pub fn run(&mut self, out: Option<&Path>) -> Result<()> {
        self.run_until(self.t_max(), out)
    }

    /// Turns a failure at iteration `t` into the returned error, leaving a
    /// diagnostic checkpoint behind for non-finite values.
    fn abort(&self, err: Error, t: u64, out: Option<&Path>) -> Error {
        match err {
            Error::NonFinite(what) => {
                if let Some(dir) = out {
                    let _ = save_checkpoint(&self.checkpoint(), &dir.join("checkpoint_abort.bin"));
                }
                Error::NonFinite(format!("step {t}: {what}"))
            }
            other => other,
        }
    }

    pub fn checkpoint(&self) -> CheckpointRecord {
        let mut arrays = Vec::new();
        let push = |arrays: &mut Vec<NamedArray>, name: String, shape: Vec<usize>, data: &[f64]| {
            arrays.push(NamedArray {
                name,
                shape,
                data: data.to_vec(),
            })
        };
        for (name, t) in self.generator.named().into_iter().chain(self.discriminator.named()) {
            push(&mut arrays, name, t.shape().to_vec(), t.data());
        }
        for (prefix, params, opt) in [
            ("g", self.generator.named(), &self.g_opt),
            ("d", self.discriminator.named(), &self.d_opt),
        ] {
            for (i, (name, t)) in params.iter().enumerate() {
                let shape = t.shape().to_vec();
                push(&mut arrays, format!("adam.{prefix}.m.{name}"), shape.clone(), &opt.first_moment[i]);
                push(&mut arrays, format!("adam.{prefix}.v.{name}"), shape, &opt.second_moment[i]);
            }
        }
        let rows: Vec<f64> = self.log.rows().iter().flat_map(|r| r.to_array()).collect();
        push(&mut arrays, "log".into(), vec![self.log.rows().len(), LogRow::WIDTH], &rows);
        push(
            &mut arrays,
            "last_losses".into(),
            vec![2],
            &[self.last_losses.d_total, self.last_losses.g_total],
        );

        let mut rng_state = self.rng.get_seed().to_vec();
        rng_state.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        rng_state.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        let bytes = vec![
            NamedBytes {
                name: "rng".into(),
                bytes: rng_state,
            },
            u64_bytes("adam.g.step", self.g_opt.step_count),
            u64_bytes("adam.d.step", self.d_opt.step_count),
            u64_bytes("real_samples_seen", self.real_samples_seen),
            u64_bytes(
                "first_embedding_grad_step",
                self.first_embedding_grad_step.unwrap_or(u64::MAX),
            ),
        ];
        CheckpointRecord {
            version: FORMAT_VERSION,
            config: self.config.clone(),
            step: self.step,
            arrays,
            bytes,
        }
    }

    /// Rebuilds the exact state saved in `record`.
    pub fn from_checkpoint(record: &CheckpointRecord) -> Result<Self> {
        let mut tr = Self::new(record.config.clone())?;
        let restore = |t: &mut Tensor, name: &str| -> Result<()> {
            let a = record.array(name)?;
            if a.shape != t.shape() {
                return Err(Error::Format(format!(
                    "array '{name}' has shape {:?}, expected {:?}",
                    a.shape,
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(&a.data);
            Ok(())
        };
        for (name, t) in tr.generator.named_mut() {
            restore(t, &name)?;
        }
        for (name, t) in tr.discriminator.named_mut() {
            restore(t, &name)?;
        }
        for (prefix, names, opt) in [
            ("g", tr.generator.named(), &mut tr.g_opt),
            ("d", tr.discriminator.named(), &mut tr.d_opt),
        ] {
            for (i, (name, _)) in names.iter().enumerate() {
                for (kind, moments) in [("m", &mut opt.first_moment), ("v", &mut opt.second_moment)] {
                    let a = record.array(&format!("adam.{prefix}.{kind}.{name}"))?;
                    if a.data.len() != moments[i].len() {
                        return Err(Error::Format(format!("optimizer state for '{name}' has the wrong size")));
                    }
                    moments[i].copy_from_slice(&a.data);
                }
            }
            opt.step_count = record.u64_value(&format!("adam.{prefix}.step"))?;
        }

        let log = record.array("log")?;
        for row in log.data.chunks(LogRow::WIDTH) {
            tr.log.push(LogRow::from_array(row)?)?;
        }
        let losses = &record.array("last_losses")?.data;
        if losses.len() != 2 {
            return Err(Error::Format("last_losses must hold two values".into()));
        }
        tr.last_losses = StepLosses {
            d_total: losses[0],
            g_total: losses[1],
        };

        let rng = record.byte_array("rng")?;
        if rng.len() != 32 + 8 + 16 {
            return Err(Error::Format("rng state has the wrong length".into()));
        }
        let seed: [u8; 32] = rng[..32].try_into().unwrap();
        let mut r = ChaCha8Rng::from_seed(seed);
        r.set_stream(u64::from_le_bytes(rng[32..40].try_into().unwrap()));
        r.set_word_pos(u128::from_le_bytes(rng[40..56].try_into().unwrap()));
        tr.rng = r;

        tr.real_samples_seen = record.u64_value("real_samples_seen")?;
        tr.first_embedding_grad_step = match record.u64_value("first_embedding_grad_step")? {
            u64::MAX => None,
            s => Some(s),
        };
        if record.step > tr.t_max() {
            return Err(Error::Format(format!(
                "checkpoint step {} exceeds t_max {}",
                record.step, tr.config.t_max
            )));
        }
        tr.step = record.step;
        Ok(tr)
    }

    /// Final artifacts once the run has reached `t_max`.
    pub fn finish(&self, out: Option<&Path>) -> Result<TrainOutcome> {
        let checkpoint = self.checkpoint();
        let best = self.log.best_fid();
        if let Some(dir) = out {
            std::fs::write(dir.join("metrics.csv"), self.log.to_csv_string())?;
            save_checkpoint(&checkpoint, &dir.join("checkpoint.bin"))?;
            let summary = serde_json::json!({
                "mode": self.config.mode.as_str(),
                "steps": self.step,
                "real_samples_seen": self.real_samples_seen,
                "first_embedding_grad_step": self.first_embedding_grad_step,
                "best_fid_step": best.map(|r| r.step),
                "best_fid": best.map(|r| r.fid),
                "final": self.log.last().map(|r| serde_json::json!({
                    "fid": r.fid,
                    "kid": r.kid,
                    "precision": r.precision,
                    "recall": r.recall,
                    "mode_coverage": r.mode_coverage,
                    "class_fidelity": r.class_fidelity,
                })),
            });
            std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        }
        Ok(TrainOutcome {
            log: self.log.clone(),
            checkpoint,
            real_samples_seen: self.real_samples_seen,
            first_embedding_grad_step: self.first_embedding_grad_step,
            best_fid_step: best.map(|r| r.step),
        })
    }
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}

fn prepare_output(trainer: &Trainer) -> Result<Option<PathBuf>> {
    let Some(dir) = trainer.config.output_dir.as_ref().map(PathBuf::from) else {
        return Ok(None);
    };
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.json"), trainer.config.to_json())?;
    trainer
        .dataset
        .save(&dir.join("dataset.csv"), &dir.join("centers.csv"))?;
    for stale in ["metrics.csv", "classwise.jsonl"] {
        let p = dir.join(stale);
        if trainer.step == 0 && p.exists() {
            std::fs::remove_file(p)?;
        }
    }
    Ok(Some(dir))
}

/// Full run from scratch to `t_max`, writing artifacts when `output_dir` is set.
pub fn train(config: &TrainingConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone())?;
    let out = prepare_output(&trainer)?;
    trainer.run(out.as_deref())?;
    trainer.finish(out.as_deref())
}

/// Continues a saved run to `t_max`. `output_dir` overrides the saved one.
pub fn resume(record: &CheckpointRecord, output_dir: Option<String>) -> Result<TrainOutcome> {
    let mut rec = record.clone();
    if output_dir.is_some() {
        rec.config.output_dir = output_dir;
    }
    let mut trainer = Trainer::from_checkpoint(&rec)?;
    let out = prepare_output(&trainer)?;
    trainer.run(out.as_deref())?;
    trainer.finish(out.as_deref())
}
