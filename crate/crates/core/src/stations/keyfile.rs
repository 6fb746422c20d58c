//! The gauge key as distributed out of band to both stations.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::StationError;
use crate::dataset::SCHEMA_VERSION;
use crate::model::GaugeKey;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyFile {
    pub schema_version: u32,
    pub key: GaugeKey,
}

impl KeyFile {
    pub fn new(key: GaugeKey) -> Self {
        KeyFile {
            schema_version: SCHEMA_VERSION,
            key,
        }
    }

    pub fn load(path: &Path) -> Result<Self, StationError> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StationError::MissingKey(path.to_path_buf()))
            }
            Err(e) => return Err(e.into()),
        };
        let bad = |reason: String| StationError::BadKey {
            path: path.to_path_buf(),
            reason,
        };
        let kf: KeyFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if kf.schema_version != SCHEMA_VERSION {
            return Err(bad(format!("unsupported schema version {}", kf.schema_version)));
        }
        kf.key.validate().map_err(|e| bad(e.to_string()))?;
        Ok(kf)
    }

    pub fn save(&self, path: &Path) -> Result<(), StationError> {
        let mut text = serde_json::to_string_pretty(self).expect("key serializes");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding, as lowercase hex.
    pub fn digest_hex(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("key serializes");
        Sha256::digest(&bytes).iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_depends_on_content_only() {
        let a = KeyFile::new(GaugeKey::rademacher(3).unwrap());
        let b = KeyFile::new(GaugeKey::rademacher(3).unwrap());
        let c = KeyFile::new(GaugeKey::rademacher(4).unwrap());
        assert_eq!(a.digest_hex(), b.digest_hex());
        assert_ne!(a.digest_hex(), c.digest_hex());
        assert_eq!(a.digest_hex().len(), 64);
    }

    #[test]
    fn load_errors() {
        let dir = std::env::temp_dir().join(format!("eqrc-key-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let missing = dir.join("nope.json");
        assert!(matches!(KeyFile::load(&missing), Err(StationError::MissingKey(_))));
        let bad = dir.join("bad.json");
        std::fs::write(&bad, r#"{"schema_version":1,"key":{"mode":"rademacher","j":0}}"#).unwrap();
        assert!(matches!(KeyFile::load(&bad), Err(StationError::BadKey { .. })));
        let good = dir.join("good.json");
        let kf = KeyFile::new(GaugeKey::rademacher_times_rarb(2, 9).unwrap());
        kf.save(&good).unwrap();
        assert_eq!(KeyFile::load(&good).unwrap(), kf);
        std::fs::remove_dir_all(&dir).ok();
    }
}
