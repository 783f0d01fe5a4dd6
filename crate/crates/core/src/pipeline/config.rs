use crate::dataio::DatasetTag;
use crate::error::{Error, Result};
use crate::kv;
use crate::models::{BackboneSpec, Variant};
use crate::optim::{HyperOverrides, SolverKind, DEFAULT_LR};
use crate::postproc::PostprocConfig;

const WHAT: &str = "experiment config";

/// Pixel area of one stride-32 score cell.
pub const DEFAULT_LOSS_SCALE: f64 = 1024.0;

/// Everything that determines a run. Rendered as `key=value` lines; parsing
/// the rendering gives back the same config.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetTag,
    pub variant: Variant,
    pub solver: SolverKind,
    pub epochs: usize,
    pub lr: f64,
    /// Solver hyperparameters other than `lr`; unset fields use the solver
    /// defaults.
    pub hyper: HyperOverrides,
    pub batch_size: usize,
    /// Multiplier on the per-pixel mean cross-entropy.
    pub loss_scale: f64,
    pub folds: usize,
    pub seed: u64,
    pub backbone: BackboneSpec,
    pub postproc: bool,
    pub postproc_steps: PostprocConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetTag::Md,
            variant: Variant::Fcn8s,
            solver: SolverKind::Adam,
            epochs: 50,
            lr: DEFAULT_LR,
            hyper: HyperOverrides::default(),
            batch_size: 4,
            loss_scale: DEFAULT_LOSS_SCALE,
            folds: 5,
            seed: 0,
            backbone: BackboneSpec::small(),
            postproc: true,
            postproc_steps: PostprocConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.loss_scale.is_finite() && self.loss_scale > 0.0) {
            return Err(Error::invalid(format!("loss_scale must be positive, got {}", self.loss_scale)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.folds < 2 {
            return Err(Error::invalid(format!("folds must be at least 2, got {}", self.folds)));
        }
        self.backbone.validate()?;
        crate::optim::make_state(self.solver, &self.overrides())?;
        Ok(())
    }

    /// Solver overrides with `lr` folded in.
    pub fn overrides(&self) -> HyperOverrides {
        HyperOverrides { lr: Some(self.lr), ..self.hyper }
    }

    pub fn to_kv(&self) -> String {
        let h = self.hyper;
        let opt = |v: Option<f64>| v.map_or_else(|| "default".to_string(), |v| v.to_string());
        kv::render([
            ("dataset", self.dataset.to_string()),
            ("variant", self.variant.to_string()),
            ("solver", self.solver.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("momentum", opt(h.momentum)),
            ("beta1", opt(h.beta1)),
            ("beta2", opt(h.beta2)),
            ("rho", opt(h.rho)),
            ("eps", opt(h.eps)),
            ("rms_decay", opt(h.rms_decay)),
            ("batch_size", self.batch_size.to_string()),
            ("loss_scale", self.loss_scale.to_string()),
            ("folds", self.folds.to_string()),
            ("seed", self.seed.to_string()),
            ("widths", self.backbone.widths_string()),
            ("convs_per_stage", self.backbone.convs_per_stage.to_string()),
            ("fc_width", self.backbone.fc_width.to_string()),
            ("postproc", self.postproc.to_string()),
            ("postproc_steps", self.postproc_steps.to_string()),
        ])
    }

    /// Applies `key=value` text on top of `self`. Unknown keys are errors.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (k, v) in kv::parse(text, WHAT)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        c.apply_kv(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = |v: &str| kv::parse_value::<f64>(v, key, WHAT);
        let opt = |v: &str| if v == "default" { Ok(None) } else { f(v).map(Some) };
        match key {
            "dataset" => self.dataset = value.parse()?,
            "variant" => self.variant = value.parse()?,
            "solver" => self.solver = value.parse()?,
            "epochs" => self.epochs = kv::parse_value(value, key, WHAT)?,
            "lr" => self.lr = f(value)?,
            "momentum" => self.hyper.momentum = opt(value)?,
            "beta1" => self.hyper.beta1 = opt(value)?,
            "beta2" => self.hyper.beta2 = opt(value)?,
            "rho" => self.hyper.rho = opt(value)?,
            "eps" => self.hyper.eps = opt(value)?,
            "rms_decay" => self.hyper.rms_decay = opt(value)?,
            "batch_size" => self.batch_size = kv::parse_value(value, key, WHAT)?,
            "loss_scale" => self.loss_scale = f(value)?,
            "folds" => self.folds = kv::parse_value(value, key, WHAT)?,
            "seed" => self.seed = kv::parse_value(value, key, WHAT)?,
            "widths" => self.backbone.widths = BackboneSpec::parse_widths(value)?,
            "convs_per_stage" => self.backbone.convs_per_stage = kv::parse_value(value, key, WHAT)?,
            "fc_width" => self.backbone.fc_width = kv::parse_value(value, key, WHAT)?,
            "postproc" => self.postproc = kv::parse_value(value, key, WHAT)?,
            "postproc_steps" => self.postproc_steps = value.parse()?,
            _ => return Err(Error::format(WHAT, format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}
