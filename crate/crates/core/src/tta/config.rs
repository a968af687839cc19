use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::invalid(format!(
                        "unknown {} {s:?}; expected one of {:?}",
                        stringify!($name),
                        [$($text),+]
                    ))),
                }
            }
        }
    };
}

named_enum!(
    /// Adaptation method.
    Method {
        NoAdapt => "no_adapt",
        BnAdapt => "bn_adapt",
        Tent => "tent",
        Nctta => "nctta",
    }
);

named_enum!(
    /// Alignment loss instantiation.
    LossVariant {
        InfoNce => "infonce",
        L2 => "l2",
        Triplet => "triplet",
    }
);

named_enum!(
    /// Parameters touched by the gradient step. The classifier is never updated.
    UpdatePolicy {
        AffineOnly => "affine_only",
        ExtractorAll => "extractor_all",
    }
);

/// Hyperparameters of the adaptation engine.
///
/// `gamma_ent` and `tau_ent` default to `0.4 ln K` when left unset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub method: Method,
    pub alpha: f64,
    pub epsilon: f64,
    pub k: usize,
    pub gamma_ent: Option<f64>,
    pub tau_ent: Option<f64>,
    pub nu: f64,
    pub eta: f64,
    pub tau_margin: f64,
    pub loss_variant: LossVariant,
    pub update_policy: UpdatePolicy,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Include the entropy term in each sample's loss.
    pub use_entropy_loss: bool,
    /// Multiplier on the alignment term; 0 removes it.
    pub nc_weight: f64,
    /// Apply the entropy filter; off means every sample passes.
    pub use_filter: bool,
    /// Apply the per-sample weight; off means weight 1.
    pub use_weight: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            method: Method::Nctta,
            alpha: 0.5,
            epsilon: 1.0,
            k: 2,
            gamma_ent: None,
            tau_ent: None,
            nu: 1.0,
            eta: 1.0,
            tau_margin: 1.0,
            loss_variant: LossVariant::InfoNce,
            update_policy: UpdatePolicy::AffineOnly,
            lr: 1e-3,
            momentum: 0.0,
            batch_size: 64,
            use_entropy_loss: true,
            nc_weight: 1.0,
            use_filter: true,
            use_weight: true,
        }
    }
}

/// Objective actually optimised for one method, with thresholds resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub alpha: f64,
    pub epsilon: f64,
    pub k: usize,
    pub gamma_ent: Option<f64>,
    pub tau_ent: f64,
    pub nu: f64,
    pub eta: f64,
    pub tau_margin: f64,
    pub variant: LossVariant,
    pub use_entropy_loss: bool,
    pub nc_weight: f64,
    pub use_weight: bool,
}

impl AdaptConfig {
    /// Entropy-minimisation baseline.
    pub fn tent() -> Self {
        Self { method: Method::Tent, ..Self::default() }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn gamma_ent_for(&self, num_classes: usize) -> f64 {
        self.gamma_ent.unwrap_or(0.4 * (num_classes as f64).ln())
    }

    pub fn tau_ent_for(&self, num_classes: usize) -> f64 {
        self.tau_ent.unwrap_or(0.4 * (num_classes as f64).ln())
    }

    /// Range checks; `k` is checked against `num_classes` when given.
    pub fn validate(&self, num_classes: Option<usize>) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if self.k < 1 {
            return bad("k must be at least 1".into());
        }
        if let Some(kc) = num_classes {
            if self.k > kc {
                return bad(format!("k = {} exceeds the number of classes {kc}", self.k));
            }
            if self.method == Method::Nctta
                && self.nc_weight != 0.0
                && self.k == kc
                && self.loss_variant != LossVariant::InfoNce
            {
                return bad(format!("{} loss needs a non-empty negative set, but k = K = {kc}", self.loss_variant));
            }
        }
        if let Some(g) = self.gamma_ent {
            if !(g > 0.0) {
                return bad(format!("gamma_ent must be > 0, got {g}"));
            }
        }
        if let Some(t) = self.tau_ent {
            if !t.is_finite() {
                return bad(format!("tau_ent must be finite, got {t}"));
            }
        }
        for (name, v) in [("nu", self.nu), ("eta", self.eta), ("tau_margin", self.tau_margin)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.nc_weight >= 0.0 && self.nc_weight.is_finite()) {
            return bad(format!("nc_weight must be >= 0, got {}", self.nc_weight));
        }
        Ok(())
    }

    /// The loss optimised by `method`; `None` for methods without a gradient step.
    ///
    /// Tent keeps only the entropy term with every sample passing and unit weights.
    pub fn objective(&self, num_classes: usize) -> Option<Objective> {
        let base = Objective {
            alpha: self.alpha,
            epsilon: self.epsilon,
            k: self.k,
            gamma_ent: self.use_filter.then(|| self.gamma_ent_for(num_classes)),
            tau_ent: self.tau_ent_for(num_classes),
            nu: self.nu,
            eta: self.eta,
            tau_margin: self.tau_margin,
            variant: self.loss_variant,
            use_entropy_loss: self.use_entropy_loss,
            nc_weight: self.nc_weight,
            use_weight: self.use_weight,
        };
        match self.method {
            Method::NoAdapt | Method::BnAdapt => None,
            Method::Nctta => Some(base),
            Method::Tent => {
                Some(Objective { gamma_ent: None, use_entropy_loss: true, nc_weight: 0.0, use_weight: false, ..base })
            }
        }
    }
}
