//! Profile store with snapshot persistence.
//!
//! The store is the single writer for profiles: lifecycle code reads a
//! profile, produces a new version and writes it back. Snapshots are
//! immutable deep copies, persisted as JSON files named
//! `<profile_id>.<state>.<version>.json` when a snapshot directory is set.

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::profile::{LifecycleState, SecurityProfile, Snapshot};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("profile `{0}` already deposited")]
    DuplicateProfile(String),
    #[error("unknown profile `{0}`")]
    UnknownProfile(String),
    #[error("unknown snapshot `{0}`")]
    UnknownSnapshot(String),
    #[error("snapshot io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Default)]
pub struct ProfileStore {
    profiles: BTreeMap<String, SecurityProfile>,
    snapshots: BTreeMap<String, Snapshot>,
    /// Snapshot ids in creation order, for latest-at-state lookups.
    snapshot_order: Vec<String>,
    version_counter: BTreeMap<String, u32>,
    snapshot_dir: Option<PathBuf>,
}

impl ProfileStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_snapshot_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            snapshot_dir: Some(dir.into()),
            ..Self::default()
        }
    }

    /// Deposit a freshly parsed profile and take its Deposited snapshot.
    pub fn deposit(&mut self, profile: SecurityProfile) -> Result<Snapshot, StoreError> {
        if self.profiles.contains_key(&profile.profile_id) {
            return Err(StoreError::DuplicateProfile(profile.profile_id));
        }
        self.profiles.insert(profile.profile_id.clone(), profile.clone());
        self.take_snapshot(&profile.profile_id)
    }

    pub fn get(&self, profile_id: &str) -> Result<&SecurityProfile, StoreError> {
        self.profiles
            .get(profile_id)
            .ok_or_else(|| StoreError::UnknownProfile(profile_id.to_string()))
    }

    pub fn profiles(&self) -> impl Iterator<Item = &SecurityProfile> {
        self.profiles.values()
    }

    /// Replace the stored profile with a newer version.
    pub fn put(&mut self, profile: SecurityProfile) -> Result<(), StoreError> {
        if !self.profiles.contains_key(&profile.profile_id) {
            return Err(StoreError::UnknownProfile(profile.profile_id));
        }
        self.profiles.insert(profile.profile_id.clone(), profile);
        Ok(())
    }

    /// Deep-copy the current profile into an immutable snapshot.
    pub fn take_snapshot(&mut self, profile_id: &str) -> Result<Snapshot, StoreError> {
        let profile = self.get(profile_id)?.clone();
        let counter = self.version_counter.entry(profile_id.to_string()).or_insert(0);
        *counter += 1;
        let version = *counter;
        let mut document = profile.clone();
        document.version = version;
        let snapshot_id = format!("{}.{}.{}", profile_id, profile.state.name(), version);
        let snapshot = Snapshot {
            snapshot_id: snapshot_id.clone(),
            profile_id: profile_id.to_string(),
            state: profile.state.clone(),
            document,
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        };
        if let Some(dir) = &self.snapshot_dir {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("{snapshot_id}.json"));
            std::fs::write(path, serde_json::to_vec_pretty(&snapshot).expect("snapshot serializes"))?;
        }
        self.snapshots.insert(snapshot_id.clone(), snapshot.clone());
        self.snapshot_order.push(snapshot_id);
        Ok(snapshot)
    }

    pub fn get_snapshot(&self, snapshot_id: &str) -> Result<&Snapshot, StoreError> {
        self.snapshots
            .get(snapshot_id)
            .ok_or_else(|| StoreError::UnknownSnapshot(snapshot_id.to_string()))
    }

    /// Most recent snapshot of `profile_id` at `state`.
    pub fn latest_snapshot_at(
        &self,
        profile_id: &str,
        state: &LifecycleState,
    ) -> Option<&Snapshot> {
        self.snapshot_order
            .iter()
            .rev()
            .filter_map(|id| self.snapshots.get(id))
            .find(|s| s.profile_id == profile_id && &s.state == state)
    }

    /// Restore the snapshotted document as the live profile, under a fresh
    /// version counter. The snapshot itself is untouched.
    pub fn restore_snapshot(&mut self, snapshot_id: &str) -> Result<SecurityProfile, StoreError> {
        let snapshot = self.get_snapshot(snapshot_id)?.clone();
        let counter = self
            .version_counter
            .entry(snapshot.profile_id.clone())
            .or_insert(0);
        *counter += 1;
        let mut profile = snapshot.document.clone();
        profile.version = *counter;
        self.profiles.insert(profile.profile_id.clone(), profile.clone());
        Ok(profile)
    }

    pub fn snapshot_ids(&self) -> Vec<String> {
        self.snapshot_order.clone()
    }
}
