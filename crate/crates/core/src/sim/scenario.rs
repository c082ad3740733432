// SPDX-License-Identifier: Apache-2.0

//! Declarative scenario files (TOML).
//!
//! ```toml
//! name = "double-send"
//! n = 4
//! f = 1
//! seed = 7
//! delta = 500            # auto-unlock delay; omit to disable
//! epoch_length = 2000    # liveness horizon for unlocks
//! max_ticks = 20000
//! unlock_mode = "single" # or "multi"
//!
//! [network]
//! min_delay = 1
//! max_delay = 10
//! drop_budget = 4
//! drop_probability = 0.05
//! seq_min_delay = 2      # sequencer to validator delivery
//! seq_max_delay = 12
//!
//! [[faults]]
//! validator = 3
//! behavior = "equivocator"  # honest | crash | equivocator | vote_withholder | stale_replier | infinite_budget
//! at = 40                   # crash tick
//! clock_skew = 0
//! submit_delay = 0          # extra latency on this validator's sequencer submissions
//!
//! [[objects]]
//! name = "coin"
//! kind = "owned"           # owned | read_only | shared | counter | g_counter | u_set | pn_set
//! owner = "alice"
//! balance = 100
//! gas = false
//!
//! [[script]]
//! at = 0
//! client = "alice"
//! action = "double_send"
//! object = "coin"
//! to = "bob"
//! send_to = [0, 1]          # first copy only reaches these; the second goes to the rest
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::AuthCommitment;
use crate::commutative::{bounded_counter, g_counter, pn_set, u_set};
use crate::crypto::{Digest, KeyPair};
use crate::types::{
    CommitteeParams, Contents, Object, ObjectId, ObjectKey, ObjectKind, UnlockMode,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn default_epoch_length() -> u64 {
    5_000
}

fn default_max_ticks() -> u64 {
    50_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub n: usize,
    pub f: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub delta: Option<u64>,
    #[serde(default = "default_epoch_length")]
    pub epoch_length: u64,
    #[serde(default = "default_max_ticks")]
    pub max_ticks: u64,
    #[serde(default)]
    pub unlock_mode: ModeSpec,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub script: Vec<ActionSpec>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    #[default]
    Single,
    Multi,
}

impl From<ModeSpec> for UnlockMode {
    fn from(m: ModeSpec) -> Self {
        match m {
            ModeSpec::Single => UnlockMode::Single,
            ModeSpec::Multi => UnlockMode::Multi,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSpec {
    pub min_delay: u64,
    pub max_delay: u64,
    pub drop_budget: u64,
    pub drop_probability: f64,
    pub seq_min_delay: u64,
    pub seq_max_delay: u64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            min_delay: 1,
            max_delay: 10,
            drop_budget: 0,
            drop_probability: 0.0,
            seq_min_delay: 2,
            seq_max_delay: 12,
        }
    }
}

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    #[default]
    Honest,
    Crash,
    Equivocator,
    VoteWithholder,
    StaleReplier,
    InfiniteBudget,
}

impl Behavior {
    pub fn is_faulty(self) -> bool {
        self != Behavior::Honest
    }

    pub fn name(self) -> &'static str {
        match self {
            Behavior::Honest => "honest",
            Behavior::Crash => "crash",
            Behavior::Equivocator => "equivocator",
            Behavior::VoteWithholder => "vote_withholder",
            Behavior::StaleReplier => "stale_replier",
            Behavior::InfiniteBudget => "infinite_budget",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub validator: u32,
    #[serde(default)]
    pub behavior: Behavior,
    /// Crash tick.
    #[serde(default)]
    pub at: Option<u64>,
    #[serde(default)]
    pub clock_skew: i64,
    #[serde(default)]
    pub submit_delay: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKindSpec {
    #[default]
    Owned,
    ReadOnly,
    Shared,
    Counter,
    GCounter,
    USet,
    PnSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    #[serde(default)]
    pub kind: ObjectKindSpec,
    #[serde(default)]
    pub owner: Option<String>,
    #[serde(default)]
    pub balance: u64,
    #[serde(default)]
    pub max_credit: u64,
    /// Usable by its owner to pay for transactions and unlocks.
    #[serde(default)]
    pub gas: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub at: u64,
    #[serde(default)]
    pub client: String,
    #[serde(flatten)]
    pub action: Action,
    /// Name other actions can refer to.
    #[serde(default)]
    pub label: Option<String>,
    /// Validators the first broadcast of the transaction reaches; retries go to all.
    #[serde(default)]
    pub send_to: Option<Vec<u32>>,
    /// Validators that ever receive the certificate; all when absent.
    #[serde(default)]
    pub cert_to: Option<Vec<u32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Transfer {
        object: String,
        to: String,
    },
    /// Swap `object` with `counterparty`'s `counter_object`; both sign, this client submits.
    Swap {
        object: String,
        counterparty: String,
        counter_object: String,
    },
    /// The same transfer sent twice with different nonces.
    DoubleSend {
        object: String,
        to: String,
    },
    Debit {
        counter: String,
        amount: u64,
    },
    Credit {
        counter: String,
        amount: u64,
    },
    /// Debits until the counter's value is spent, consolidating when budgets run out.
    Drain {
        counter: String,
    },
    Consolidate {
        counter: String,
    },
    /// Unlock of the keys the labelled action's transaction locked, or of
    /// the current versions of `objects`.
    Unlock {
        #[serde(default)]
        of: Option<String>,
        #[serde(default)]
        objects: Vec<String>,
    },
    /// Unlock of another party's object without evidence.
    UnauthorizedUnlock {
        object: String,
    },
    /// Resends the original transaction of the labelled action.
    Replay {
        of: String,
    },
    EpochChange,
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Transfer { .. } => "transfer",
            Action::Swap { .. } => "swap",
            Action::DoubleSend { .. } => "double_send",
            Action::Debit { .. } => "debit",
            Action::Credit { .. } => "credit",
            Action::Drain { .. } => "drain",
            Action::Consolidate { .. } => "consolidate",
            Action::Unlock { .. } => "unlock",
            Action::UnauthorizedUnlock { .. } => "unauthorized_unlock",
            Action::Replay { .. } => "replay",
            Action::EpochChange => "epoch_change",
        }
    }
}

pub fn party_key(name: &str) -> KeyPair {
    KeyPair::from_name(name)
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Digest of the canonical serialization, seed excluded.
    pub fn digest(&self) -> Digest {
        let mut s = self.clone();
        s.seed = 0;
        crate::encoding::hash_with("cuttlefish.scenario", s.to_toml().as_bytes())
    }

    pub fn params(&self) -> CommitteeParams {
        CommitteeParams::new(self.n, self.f).expect("validated")
    }

    pub fn behavior(&self, v: u32) -> Behavior {
        self.faults
            .iter()
            .find(|x| x.validator == v)
            .map_or(Behavior::Honest, |x| x.behavior)
    }

    pub fn fault(&self, v: u32) -> Option<&FaultSpec> {
        self.faults.iter().find(|x| x.validator == v)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if let Err(e) = CommitteeParams::new(self.n, self.f) {
            return bad(e.to_string());
        }
        let mut seen = BTreeSet::new();
        for fault in &self.faults {
            if fault.validator as usize >= self.n {
                return bad(format!("fault on unknown validator {}", fault.validator));
            }
            if !seen.insert(fault.validator) {
                return bad(format!(
                    "validator {} has two fault entries",
                    fault.validator
                ));
            }
            if (fault.behavior == Behavior::Crash) != fault.at.is_some() {
                return bad(format!(
                    "validator {}: `at` is required for and only for crash",
                    fault.validator
                ));
            }
        }
        let faulty = self
            .faults
            .iter()
            .filter(|x| x.behavior.is_faulty())
            .count();
        if faulty > self.f {
            return bad(format!("{faulty} faulty validators exceed f = {}", self.f));
        }
        let n = &self.network;
        if n.min_delay == 0
            || n.min_delay > n.max_delay
            || n.seq_min_delay == 0
            || n.seq_min_delay > n.seq_max_delay
        {
            return bad("delays must satisfy 1 <= min <= max".into());
        }
        if !(0.0..=1.0).contains(&n.drop_probability) {
            return bad("drop_probability must be within [0, 1]".into());
        }
        if self.epoch_length == 0 || self.max_ticks == 0 {
            return bad("epoch_length and max_ticks must be positive".into());
        }
        let mut names = BTreeSet::new();
        for o in &self.objects {
            if !names.insert(o.name.as_str()) {
                return bad(format!("object `{}` declared twice", o.name));
            }
            if matches!(o.kind, ObjectKindSpec::Owned) != o.owner.is_some() {
                return bad(format!(
                    "object `{}`: owned objects need an owner, others none",
                    o.name
                ));
            }
            if o.gas && o.balance == 0 {
                return bad(format!("gas object `{}` needs a balance", o.name));
            }
        }
        let labels: BTreeSet<&str> = self
            .script
            .iter()
            .filter_map(|a| a.label.as_deref())
            .collect();
        for a in &self.script {
            let obj = |name: &str| -> Result<(), ScenarioError> {
                if names.contains(name) {
                    Ok(())
                } else {
                    Err(ScenarioError::Invalid(format!("unknown object `{name}`")))
                }
            };
            if !matches!(a.action, Action::EpochChange) && a.client.is_empty() {
                return bad(format!("`{}` needs a client", a.action.name()));
            }
            match &a.action {
                Action::Transfer { object, .. } | Action::DoubleSend { object, .. } => obj(object)?,
                Action::UnauthorizedUnlock { object } => obj(object)?,
                Action::Swap {
                    object,
                    counter_object,
                    ..
                } => {
                    obj(object)?;
                    obj(counter_object)?;
                }
                Action::Debit { counter, .. }
                | Action::Credit { counter, .. }
                | Action::Drain { counter }
                | Action::Consolidate { counter } => {
                    obj(counter)?;
                    let spec = self
                        .objects
                        .iter()
                        .find(|o| &o.name == counter)
                        .expect("checked");
                    if spec.kind != ObjectKindSpec::Counter
                        && !matches!(a.action, Action::Credit { .. })
                    {
                        return bad(format!("`{counter}` is not a bounded counter"));
                    }
                }
                Action::Unlock { of, objects } => {
                    objects.iter().try_for_each(|o| obj(o))?;
                    if of.is_some() == !objects.is_empty() {
                        return bad("unlock names either `of` or `objects`".into());
                    }
                    if of.as_ref().is_some_and(|l| !labels.contains(l.as_str())) {
                        return bad(format!(
                            "unlock of unknown label `{}`",
                            of.as_ref().unwrap()
                        ));
                    }
                }
                Action::Replay { of } => {
                    if !labels.contains(of.as_str()) {
                        return bad(format!("replay of unknown label `{of}`"));
                    }
                }
                Action::EpochChange => {}
            }
            for to in [&a.send_to, &a.cert_to].into_iter().flatten() {
                if to.iter().any(|v| *v as usize >= self.n) {
                    return bad("send_to or cert_to names an unknown validator".into());
                }
            }
        }
        Ok(())
    }

    pub fn genesis(&self) -> Vec<Object> {
        self.objects.iter().map(build_object).collect()
    }

    /// Gas objects per owner, in declaration order.
    pub fn gas_by_owner(&self) -> BTreeMap<String, Vec<ObjectId>> {
        let mut out: BTreeMap<String, Vec<ObjectId>> = BTreeMap::new();
        for o in &self.objects {
            if let (true, Some(owner)) = (o.gas, &o.owner) {
                out.entry(owner.clone())
                    .or_default()
                    .push(ObjectId::from_name(&o.name));
            }
        }
        out
    }

    /// Every client name that appears in the scenario.
    pub fn clients(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self
            .script
            .iter()
            .map(|a| a.client.clone())
            .filter(|c| !c.is_empty())
            .collect();
        for o in &self.objects {
            out.extend(o.owner.iter().cloned());
        }
        for a in &self.script {
            if let Action::Swap { counterparty, .. } = &a.action {
                out.insert(counterparty.clone());
            }
        }
        out
    }
}

pub fn party_address(name: &str) -> AuthCommitment {
    AuthCommitment::single_key(party_key(name).public())
}

fn build_object(spec: &ObjectSpec) -> Object {
    let id = ObjectId::from_name(&spec.name);
    let owner = spec.owner.as_deref().map(party_address);
    let key = ObjectKey::new(id, 0);
    match spec.kind {
        ObjectKindSpec::Owned => Object {
            key,
            kind: ObjectKind::Owned,
            owner,
            contents: Contents::Balance(spec.balance),
        },
        ObjectKindSpec::ReadOnly => Object {
            key,
            kind: ObjectKind::ReadOnly,
            owner: None,
            contents: Contents::Balance(spec.balance),
        },
        ObjectKindSpec::Shared => Object {
            key,
            kind: ObjectKind::Shared,
            owner: None,
            contents: Contents::Balance(spec.balance),
        },
        ObjectKindSpec::Counter => bounded_counter(id, spec.max_credit),
        ObjectKindSpec::GCounter => g_counter(id),
        ObjectKindSpec::USet => u_set(id),
        ObjectKindSpec::PnSet => pn_set(id),
    }
}
