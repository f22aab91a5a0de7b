#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use slidebench::adapters::AdapterHandle;

/// Writes a shell script and returns a handle that runs it through
/// `/bin/sh`, which avoids exec-ing a file this process just wrote.
pub fn script_adapter(dir: &Path, name: &str, body: &str) -> AdapterHandle {
    let path = dir.join(name);
    std::fs::write(&path, format!("#!/bin/sh\n{body}")).unwrap();
    AdapterHandle::new("/bin/sh")
        .with_args([path.display().to_string()])
        .with_timeout(Duration::from_secs(30))
        .unwrap()
}

pub const IDENTITY_CAPS: &str = r#"{"name":"identity","version":"1","quality_min":1,"quality_max":100,"quality_kind":"int","modes":["encode","decode"]}"#;

/// Stores the PPM unchanged: lossless at a constant rate.
pub fn identity_codec(dir: &Path) -> AdapterHandle {
    script_adapter(
        dir,
        "identity.sh",
        &format!(
            r#"case "$1" in
  capabilities) echo '{IDENTITY_CAPS}' ;;
  encode) cat ;;
  decode) cat ;;
  *) echo "unknown verb $1" >&2; exit 2 ;;
esac
"#
        ),
    )
}

/// Encodes like the identity codec but cannot decode.
pub fn broken_decoder(dir: &Path) -> AdapterHandle {
    script_adapter(
        dir,
        "broken.sh",
        &format!(
            r#"case "$1" in
  capabilities) echo '{IDENTITY_CAPS}' ;;
  encode) cat ;;
  decode) cat >/dev/null; echo "decoder exploded" >&2; exit 3 ;;
  *) exit 2 ;;
esac
"#
        ),
    )
}

/// Answers `extract` with the FEAT stream stored in `feat`.
pub fn canned_extractor(dir: &Path, caps: &str, feat: &Path) -> AdapterHandle {
    script_adapter(
        dir,
        "extractor.sh",
        &format!(
            r#"case "$1" in
  capabilities) echo '{caps}' ;;
  extract) cat >/dev/null; cat '{}' ;;
  *) exit 2 ;;
esac
"#,
            feat.display()
        ),
    )
}

pub fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

pub fn path_of(dir: &tempfile::TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}
