//! Optional download of the four standard MNIST files.
//!
//! Files are fetched gzip-compressed, decompressed, and kept only if the
//! SHA-256 of the decompressed bytes matches the published file.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use sha2::{Digest, Sha256};

use crate::data::{TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS};
use crate::error::{Error, Result};

pub const DEFAULT_BASE_URL: &str = "https://ossci-datasets.s3.amazonaws.com/mnist/";

/// SHA-256 of the uncompressed IDX files.
pub const CHECKSUMS: [(&str, &str); 4] = [
    (
        TRAIN_IMAGES,
        "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    ),
    (
        TRAIN_LABELS,
        "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    ),
    (
        TEST_IMAGES,
        "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    ),
    (
        TEST_LABELS,
        "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
    ),
];

const MAX_DOWNLOAD: u64 = 64 << 20;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Checks the raw file for `stem` in `dir` against its published checksum.
pub fn verify_file(dir: &Path, stem: &str) -> Result<bool> {
    let expected = CHECKSUMS
        .iter()
        .find(|(s, _)| *s == stem)
        .map(|(_, h)| *h)
        .ok_or_else(|| Error::InvalidInput(format!("no checksum for {stem}")))?;
    let path = dir.join(stem);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(sha256_hex(&bytes) == expected)
}

fn download(url: &str) -> Result<Vec<u8>> {
    let mut response = ureq::get(url)
        .call()
        .map_err(|e| Error::InvalidInput(format!("GET {url}: {e}")))?;
    response
        .body_mut()
        .with_config()
        .limit(MAX_DOWNLOAD)
        .read_to_vec()
        .map_err(|e| Error::InvalidInput(format!("GET {url}: {e}")))
}

/// Downloads whatever is missing or corrupt into `dir`. Returns the files
/// written.
pub fn fetch_mnist(dir: &Path, base_url: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (stem, expected) in CHECKSUMS {
        let path = dir.join(stem);
        if path.is_file() && verify_file(dir, stem)? {
            log::info!("{} already present", path.display());
            continue;
        }
        let url = format!("{}/{stem}.gz", base_url.trim_end_matches('/'));
        log::info!("downloading {url}");
        let compressed = download(&url)?;
        let mut raw = Vec::new();
        GzDecoder::new(compressed.as_slice())
            .read_to_end(&mut raw)
            .map_err(|e| Error::io(&path, e))?;
        let actual = sha256_hex(&raw);
        if actual != expected {
            return Err(Error::Consistency(format!(
                "{url}: checksum {actual} does not match {expected}"
            )));
        }
        std::fs::write(&path, &raw).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
