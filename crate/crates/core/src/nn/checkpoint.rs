//! JSON checkpoints: networks, optimizer state, value normalizer, and a
//! hash of the originating config so mismatched resumes are detectable.
//! Wall-clock metadata lives in its own field and never enters the hash.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Adam, Mlp, PopArt};

pub const CHECKPOINT_FORMAT: &str = "vsl-checkpoint-v1";

/// Provenance that may differ between otherwise identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Seconds since the Unix epoch at save time.
    pub created_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub meta: CheckpointMeta,
    /// SHA-256 of the scenario config text, so evaluation can detect a
    /// checkpoint being applied to a different scenario than it trained on.
    pub config_hash: String,
    pub scenario: String,
    pub algorithm: String,
    pub seed: u64,
    /// Environment steps collected when this was written.
    pub train_step: u64,
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub popart: PopArt,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        config_hash: String,
        scenario: String,
        algorithm: String,
        seed: u64,
        train_step: u64,
        actor: Mlp,
        critic: Mlp,
        actor_opt: Adam,
        critic_opt: Adam,
        popart: PopArt,
    ) -> Checkpoint {
        let created_unix =
            SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            meta: CheckpointMeta { created_unix },
            config_hash,
            scenario,
            algorithm,
            seed,
            train_step,
            actor,
            critic,
            actor_opt,
            critic_opt,
            popart,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = std::fs::File::open(path)?;
        let ck: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::checkpoint(format!(
                "format '{}' is not '{CHECKPOINT_FORMAT}'",
                self.format
            )));
        }
        self.actor.validate()?;
        self.critic.validate()?;
        self.actor_opt.validate(&self.actor)?;
        self.critic_opt.validate(&self.critic)?;
        self.popart.validate()?;
        if self.algorithm != "mappo" && self.algorithm != "ippo" {
            return Err(Error::checkpoint(format!("unknown algorithm '{}'", self.algorithm)));
        }
        Ok(())
    }
}

/// SHA-256 hex digest of a config's canonical text.
pub fn config_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let actor = Mlp::orthogonal(&[5, 8, 5], 0.01, 1).unwrap();
        let critic = Mlp::orthogonal(&[5, 8, 1], 1.0, 2).unwrap();
        let actor_opt = Adam::new(7e-4, &actor);
        let critic_opt = Adam::new(5e-4, &critic);
        Checkpoint::new(
            config_hash("episode_steps = 120"),
            "desk".into(),
            "mappo".into(),
            3,
            480,
            actor,
            critic,
            actor_opt,
            critic_opt,
            PopArt::new(0.1),
        )
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let ck = sample();
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ck);
    }

    #[test]
    fn load_rejects_wrong_format_marker() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let mut ck = sample();
        ck.format = "something-else".into();
        ck.save(&path).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn load_rejects_corrupted_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let ck = sample();
        ck.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // Truncate one weight array in the serialized actor.
        let corrupted = text.replacen("\"w\":[", "\"w\":[0.0,", 1);
        std::fs::write(&path, corrupted).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn load_rejects_garbage_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        std::fs::write(&path, "{not json").unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn hash_depends_on_config_text_not_time() {
        let a = config_hash("batch = 120");
        let b = config_hash("batch = 120");
        let c = config_hash("batch = 121");
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);

        // Two checkpoints of the same run share the hash even though
        // their timestamps differ.
        let mut x = sample();
        let y = sample();
        x.meta.created_unix = y.meta.created_unix + 100;
        assert_eq!(x.config_hash, y.config_hash);
    }

    #[test]
    fn known_sha256_vector() {
        assert_eq!(
            config_hash(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            config_hash("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
