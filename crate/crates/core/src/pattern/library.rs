use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{PatternRecording, ProfileId};

use super::{from_json, to_json, PatternError};

pub const PATTERN_FILE_SUFFIX: &str = ".skp.json";

/// Index row for one stored pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub id: String,
    pub name: String,
    pub created_utc: DateTime<Utc>,
    pub frame_count: usize,
    pub profile_id: ProfileId,
}

impl LibraryEntry {
    fn from_recording(id: String, rec: &PatternRecording) -> Self {
        Self {
            id,
            name: rec.name.clone(),
            created_utc: rec.created_utc,
            frame_count: rec.len(),
            profile_id: rec.display_profile.id,
        }
    }
}

/// A directory of `<id>.skp.json` files with an in-memory index.
#[derive(Debug)]
pub struct PatternLibrary {
    root: PathBuf,
    index: BTreeMap<String, LibraryEntry>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl PatternLibrary {
    /// Open (creating if needed) the library at `root` and index it.
    /// Unreadable pattern files are skipped with a warning.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, PatternError> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        let mut lib = Self {
            root,
            index: BTreeMap::new(),
        };
        lib.rescan()?;
        Ok(lib)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn rescan(&mut self) -> Result<(), PatternError> {
        let mut index = BTreeMap::new();
        for entry in std::fs::read_dir(&self.root)? {
            let path = entry?.path();
            let Some(id) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(PATTERN_FILE_SUFFIX))
                .filter(|id| valid_id(id))
                .map(str::to_owned)
            else {
                continue;
            };
            match std::fs::read_to_string(&path)
                .map_err(PatternError::from)
                .and_then(|t| from_json(&t))
            {
                Ok(rec) => {
                    index.insert(id.clone(), LibraryEntry::from_recording(id, &rec));
                }
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        self.index = index;
        Ok(())
    }

    fn path_for(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}{PATTERN_FILE_SUFFIX}"))
    }

    fn fresh_id(&self, created: &DateTime<Utc>) -> String {
        let mut rng = rand::rng();
        loop {
            let id = format!(
                "{}-{:06x}",
                created.format("%Y%m%dT%H%M%S%3fZ"),
                rng.random::<u32>() & 0xff_ffff
            );
            if !self.index.contains_key(&id) && !self.path_for(&id).exists() {
                return id;
            }
        }
    }

    /// Store a recording and return its new id.
    pub fn save(&mut self, recording: &PatternRecording) -> Result<String, PatternError> {
        let text = to_json(recording)?;
        let id = self.fresh_id(&recording.created_utc);
        let path = self.path_for(&id);
        let tmp = self.root.join(format!(".{id}.tmp"));
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, &path)?;
        self.index.insert(
            id.clone(),
            LibraryEntry::from_recording(id.clone(), recording),
        );
        Ok(id)
    }

    pub fn load(&self, id: &str) -> Result<PatternRecording, PatternError> {
        if !valid_id(id) || !self.index.contains_key(id) {
            return Err(PatternError::NotFound(id.to_string()));
        }
        let text = std::fs::read_to_string(self.path_for(id)).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => PatternError::NotFound(id.to_string()),
            _ => PatternError::from(e),
        })?;
        from_json(&text)
    }

    pub fn delete(&mut self, id: &str) -> Result<(), PatternError> {
        if !valid_id(id) || !self.index.contains_key(id) {
            return Err(PatternError::NotFound(id.to_string()));
        }
        match std::fs::remove_file(self.path_for(id)) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        self.index.remove(id);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&LibraryEntry> {
        self.index.get(id)
    }

    /// Entries ordered by creation time, then id.
    pub fn list(&self) -> Vec<LibraryEntry> {
        let mut entries: Vec<LibraryEntry> = self.index.values().cloned().collect();
        entries.sort_by(|a, b| a.created_utc.cmp(&b.created_utc).then(a.id.cmp(&b.id)));
        entries
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DisplayProfile, PIN_COUNT};
    use proptest::prelude::*;

    fn rec(name: &str, n: usize) -> PatternRecording {
        PatternRecording::new(
            name,
            DisplayProfile::medium(),
            30.0,
            vec![[2.5; PIN_COUNT]; n],
        )
    }

    #[test]
    fn save_load_delete() {
        let dir = tempfile::tempdir().unwrap();
        let mut lib = PatternLibrary::open(dir.path()).unwrap();
        let r = rec("stroke", 90);
        let id = lib.save(&r).unwrap();
        assert!(id.len() > 20);
        assert_eq!(lib.load(&id).unwrap(), r);
        let entry = lib.get(&id).unwrap();
        assert_eq!((entry.frame_count, entry.profile_id), (90, ProfileId::M));
        assert!(dir.path().join(format!("{id}.skp.json")).exists());

        lib.delete(&id).unwrap();
        assert!(lib.is_empty());
        assert_eq!(lib.load(&id), Err(PatternError::NotFound(id.clone())));
        assert_eq!(lib.delete(&id), Err(PatternError::NotFound(id)));
    }

    #[test]
    fn unknown_and_hostile_ids_are_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let lib = PatternLibrary::open(dir.path()).unwrap();
        for id in ["nope", "../etc/passwd", ""] {
            assert!(matches!(lib.load(id), Err(PatternError::NotFound(_))));
        }
    }

    #[test]
    fn reopen_reloads_index_and_skips_junk() {
        let dir = tempfile::tempdir().unwrap();
        let ids: Vec<String> = {
            let mut lib = PatternLibrary::open(dir.path()).unwrap();
            (0..3)
                .map(|i| lib.save(&rec(&format!("p{i}"), 3)).unwrap())
                .collect()
        };
        std::fs::write(dir.path().join("broken.skp.json"), "{").unwrap();
        std::fs::write(dir.path().join("readme.txt"), "hi").unwrap();
        let lib = PatternLibrary::open(dir.path()).unwrap();
        let mut listed: Vec<String> = lib.list().into_iter().map(|e| e.id).collect();
        listed.sort();
        let mut expected = ids;
        expected.sort();
        assert_eq!(listed, expected);
    }

    #[test]
    fn invalid_recording_is_not_saved() {
        let dir = tempfile::tempdir().unwrap();
        let mut lib = PatternLibrary::open(dir.path()).unwrap();
        assert!(matches!(
            lib.save(&rec("empty", 0)),
            Err(PatternError::Format(_))
        ));
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Save(usize),
        Delete(usize),
    }

    fn ops() -> impl Strategy<Value = Vec<Op>> {
        prop::collection::vec(
            prop_oneof![
                (1usize..5).prop_map(Op::Save),
                (0usize..8).prop_map(Op::Delete)
            ],
            1..24,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn index_tracks_directory(ops in ops()) {
            let dir = tempfile::tempdir().unwrap();
            let mut lib = PatternLibrary::open(dir.path()).unwrap();
            let mut model: Vec<String> = Vec::new();
            for op in ops {
                match op {
                    Op::Save(n) => model.push(lib.save(&rec("m", n)).unwrap()),
                    Op::Delete(k) => {
                        if model.is_empty() {
                            prop_assert!(lib.delete("missing").is_err());
                        } else {
                            let id = model.remove(k % model.len());
                            lib.delete(&id).unwrap();
                        }
                    }
                }
                let on_disk = PatternLibrary::open(dir.path()).unwrap();
                let mut a: Vec<String> = lib.list().into_iter().map(|e| e.id).collect();
                let mut b: Vec<String> = on_disk.list().into_iter().map(|e| e.id).collect();
                let mut m = model.clone();
                a.sort(); b.sort(); m.sort();
                prop_assert_eq!(&a, &b);
                prop_assert_eq!(&a, &m);
            }
        }
    }
}
