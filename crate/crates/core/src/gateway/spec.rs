//! Backend selection as configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{CompletionBackend, MockBackend, MockScript, RemoteBackend, RemoteConfig, ReplayBackend};
use crate::error::GatewayError;

/// ```toml
/// [backend]
/// kind = "mock"             # mock | replay | remote
/// rules = "mock.toml"       # mock: rule file
/// # log = "completions.jsonl"  replay: recorded completions
/// # url = "https://..."        remote: see RemoteConfig
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Mock {
        rules: PathBuf,
        #[serde(default)]
        seed_offset: u64,
    },
    Replay {
        log: PathBuf,
    },
    Remote(RemoteConfig),
}

impl BackendSpec {
    /// Resolves relative file paths against `base`.
    pub fn resolve(mut self, base: &Path) -> Self {
        match &mut self {
            BackendSpec::Mock { rules, .. } if rules.is_relative() => *rules = base.join(&*rules),
            BackendSpec::Replay { log } if log.is_relative() => *log = base.join(&*log),
            _ => {}
        }
        self
    }

    pub fn build(&self) -> Result<Arc<dyn CompletionBackend>, GatewayError> {
        Ok(match self {
            BackendSpec::Mock { rules, seed_offset } => {
                Arc::new(MockBackend::new(MockScript::from_file(rules)?).with_seed_offset(*seed_offset))
            }
            BackendSpec::Replay { log } => Arc::new(ReplayBackend::from_file(log)?),
            BackendSpec::Remote(config) => Arc::new(RemoteBackend::new(config.clone())?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::BackendKind;

    #[test]
    fn parses_each_kind_and_resolves_paths() {
        #[derive(Deserialize)]
        struct Wrap {
            backend: BackendSpec,
        }
        let mock: Wrap = toml::from_str("[backend]\nkind = \"mock\"\nrules = \"m.toml\"\n").unwrap();
        assert_eq!(
            mock.backend.resolve(Path::new("/cfg")),
            BackendSpec::Mock {
                rules: "/cfg/m.toml".into(),
                seed_offset: 0
            }
        );
        let remote: Wrap =
            toml::from_str("[backend]\nkind = \"remote\"\nurl = \"http://x\"\napi_style = \"chat\"\n").unwrap();
        let BackendSpec::Remote(cfg) = remote.backend else {
            panic!("expected remote")
        };
        assert_eq!(cfg.url, "http://x");
        assert_eq!(cfg.timeout_secs, 60);
    }

    #[test]
    fn builds_a_mock_backend() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.toml");
        std::fs::write(&path, "[[rule]]\npattern = \"*\"\nlabel = \"met\"\n").unwrap();
        let backend = BackendSpec::Mock {
            rules: path,
            seed_offset: 0,
        }
        .build()
        .unwrap();
        assert_eq!(backend.kind(), BackendKind::Mock);
        let missing = BackendSpec::Replay {
            log: dir.path().join("none.jsonl"),
        };
        assert!(missing.build().is_err());
    }
}
