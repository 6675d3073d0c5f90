//! Service configuration file (TOML) and the wiring that turns it into a
//! ready-to-run [`SessionEngine`].
//!
//! Backends are declared once under `[backends.<name>]` and referenced by
//! name from the stage bindings, so stages that name the same backend share
//! one client and one request budget. Credentials never live here; an HTTP
//! backend reads its key from the environment variable named by
//! `api_key_env`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clarify_core::answering::AnswererBinding;
use clarify_core::backend::{BackendClient, BackendConfig, ChatBackend, Fault, StubReply, StubTransport, SystemClock};
use clarify_core::clarification::{ClarifierBinding, SessionEngine};
use clarify_core::classifier::{ClassifierBinding, ScriptedLevels};
use clarify_core::datagen::TeacherStub;
use clarify_core::domain::{ClarityThreshold, DEFAULT_CLEAR_MIN_LEVEL, DEFAULT_MAX_QUESTIONS_PER_ROUND, DEFAULT_MAX_ROUNDS};
use clarify_core::evalkit::SimulatedUser;
use clarify_core::template::{defaults, PromptTemplate};
use serde::Deserialize;

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}
fn default_data_dir() -> PathBuf {
    PathBuf::from("data/sessions")
}
fn default_max_rounds() -> u32 {
    DEFAULT_MAX_ROUNDS
}
fn default_clear_min_level() -> u8 {
    DEFAULT_CLEAR_MIN_LEVEL
}
fn default_max_questions() -> usize {
    DEFAULT_MAX_QUESTIONS_PER_ROUND
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u32,
    #[serde(default = "default_clear_min_level")]
    pub clear_min_level: u8,
    #[serde(default = "default_max_questions")]
    pub max_questions_per_round: usize,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendSpec>,
    pub classifier: ClassifierSpec,
    pub clarifier: StageSpec,
    pub answerer: AnswererSpec,
    #[serde(default)]
    pub simulated_user: Option<StageSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendSpec {
    /// OpenAI-compatible chat completions endpoint.
    Http(BackendConfig),
    /// Canned replies, in order; the last one repeats.
    Stub {
        #[serde(default)]
        replies: Vec<StubReplySpec>,
        /// Reply with the request's own user message instead.
        #[serde(default)]
        echo: bool,
        #[serde(default)]
        delay_ms: u64,
        #[serde(default)]
        max_retries: u32,
    },
    /// Seeded synthetic teacher for offline dataset campaigns.
    TeacherStub {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        malformed_rate: f64,
        #[serde(default)]
        timeouts: Vec<u64>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum StubReplySpec {
    Text(String),
    Fault { fault: String },
}

impl StubReplySpec {
    fn to_reply(&self) -> Result<StubReply> {
        Ok(match self {
            StubReplySpec::Text(t) => StubReply::text(t.clone()),
            StubReplySpec::Fault { fault } => StubReply::Fault(match fault.as_str() {
                "timeout" => Fault::Timeout,
                "connection-reset" => Fault::ConnectionReset,
                "malformed" => Fault::Malformed,
                other => Fault::Status(
                    other
                        .parse()
                        .map_err(|_| anyhow!("unknown stub fault {other:?}"))?,
                ),
            }),
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ClassifierSpec {
    Backend {
        backend: String,
        #[serde(default)]
        template: Option<PathBuf>,
    },
    Heuristic,
    Stub {
        levels: Vec<i64>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub backend: String,
    #[serde(default)]
    pub template: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswererSpec {
    pub backend: String,
    #[serde(default)]
    pub template: Option<PathBuf>,
    #[serde(default)]
    pub system_preamble: String,
}

impl ServiceConfig {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config = Self::parse(&raw).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(base) = path.parent() {
            config.rebase(base);
        }
        Ok(config)
    }

    pub fn parse(raw: &str) -> Result<Self> {
        let config: Self = toml::from_str(raw)?;
        config.check()?;
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        if let ClassifierSpec::Backend { template: Some(t), .. } = &mut self.classifier {
            fix(t);
        }
        for t in [&mut self.clarifier.template, &mut self.answerer.template].into_iter().flatten() {
            fix(t);
        }
        if let Some(StageSpec { template: Some(t), .. }) = &mut self.simulated_user {
            fix(t);
        }
    }

    /// Every binding must name a declared backend.
    fn check(&self) -> Result<()> {
        ClarityThreshold::new(self.clear_min_level).map_err(|e| anyhow!("clear_min_level: {e}"))?;
        let mut refs = vec![("clarifier", &self.clarifier.backend), ("answerer", &self.answerer.backend)];
        if let ClassifierSpec::Backend { backend, .. } = &self.classifier {
            refs.push(("classifier", backend));
        }
        if let Some(s) = &self.simulated_user {
            refs.push(("simulated_user", &s.backend));
        }
        for (stage, name) in refs {
            if !self.backends.contains_key(name) {
                bail!("{stage} references undeclared backend {name:?}");
            }
        }
        Ok(())
    }

    pub fn threshold(&self) -> ClarityThreshold {
        ClarityThreshold::new(self.clear_min_level).expect("checked at load")
    }
}

/// One client per declared backend.
pub struct Backends {
    clients: BTreeMap<String, Arc<BackendClient>>,
}

fn stub_config(name: &str, max_retries: u32) -> BackendConfig {
    let mut config = BackendConfig::new(format!("stub://{name}"), name);
    config.max_retries = max_retries;
    config.backoff_base_ms = 0;
    config.requests_per_minute = 1_000_000;
    config
}

impl Backends {
    pub fn build(specs: &BTreeMap<String, BackendSpec>) -> Result<Self> {
        let mut clients = BTreeMap::new();
        for (name, spec) in specs {
            let client = match spec {
                BackendSpec::Http(config) => BackendClient::http(config.clone()),
                BackendSpec::Stub {
                    replies,
                    echo,
                    delay_ms,
                    max_retries,
                } => {
                    let transport = if *echo {
                        StubTransport::echo()
                    } else if replies.is_empty() {
                        bail!("stub backend {name:?} needs replies or echo = true");
                    } else {
                        StubTransport::scripted(replies.iter().map(StubReplySpec::to_reply).collect::<Result<_>>()?)
                    };
                    let transport = transport.with_delay(Duration::from_millis(*delay_ms), Arc::new(SystemClock));
                    BackendClient::new(stub_config(name, *max_retries), Arc::new(transport), Arc::new(SystemClock))
                }
                BackendSpec::TeacherStub {
                    seed,
                    malformed_rate,
                    timeouts,
                } => {
                    let teacher = TeacherStub::new(*seed)
                        .malformed(*malformed_rate)
                        .timing_out(timeouts.iter().copied());
                    BackendClient::new(stub_config(name, 0), Arc::new(teacher.into_transport()), Arc::new(SystemClock))
                }
            }
            .map_err(|e| anyhow!("backend {name:?}: {e}"))?;
            clients.insert(name.clone(), Arc::new(client));
        }
        Ok(Self { clients })
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn ChatBackend>> {
        self.clients
            .get(name)
            .map(|c| c.clone() as Arc<dyn ChatBackend>)
            .ok_or_else(|| anyhow!("undeclared backend {name:?}"))
    }
}

fn template(path: &Option<PathBuf>, fallback: &str) -> Result<PromptTemplate> {
    match path {
        Some(p) => PromptTemplate::load(p).with_context(|| format!("loading template {}", p.display())),
        None => Ok(PromptTemplate::new(fallback)),
    }
}

/// Everything a front end needs: the engine plus the optional simulated user.
pub struct Wiring {
    pub engine: SessionEngine,
    pub simulated_user: Option<SimulatedUser>,
    pub backends: Backends,
}

pub fn wire(config: &ServiceConfig) -> Result<Wiring> {
    let backends = Backends::build(&config.backends)?;
    let threshold = config.threshold();
    let classifier = match &config.classifier {
        ClassifierSpec::Backend { backend, template: t } => {
            ClassifierBinding::remote(backends.get(backend)?, template(t, defaults::CLASSIFIER)?, threshold)?
        }
        ClassifierSpec::Heuristic => ClassifierBinding::heuristic(threshold),
        ClassifierSpec::Stub { levels } => ClassifierBinding::stub(ScriptedLevels::from_ints(levels)?, threshold),
    };
    let clarifier = ClarifierBinding::new(
        backends.get(&config.clarifier.backend)?,
        template(&config.clarifier.template, defaults::CLARIFIER)?,
        config.max_questions_per_round,
    )?;
    let answerer = AnswererBinding::new(
        backends.get(&config.answerer.backend)?,
        template(&config.answerer.template, defaults::ANSWERER)?,
        config.answerer.system_preamble.clone(),
    )?;
    let simulated_user = match &config.simulated_user {
        Some(spec) => Some(
            SimulatedUser::new(backends.get(&spec.backend)?)
                .with_template(template(&spec.template, defaults::SIMULATED_USER)?),
        ),
        None => None,
    };
    Ok(Wiring {
        engine: SessionEngine {
            classifier,
            clarifier,
            answerer,
            max_rounds: config.max_rounds,
        },
        simulated_user,
        backends,
    })
}
