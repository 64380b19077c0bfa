//! Dataset fetching with checksum verification.
//!
//! The manifest maps each dataset file to its source URL and the
//! SHA-256 of the decompressed file. Downloads land next to their final
//! name only after the digest matches; a mismatch deletes the file and
//! fails the command.

use std::io::Read;
use std::path::{Path, PathBuf};

use mtsnn::{Error, Result};

use crate::commands::hex_digest;

/// Built-in manifest. Checksums are over the decompressed IDX files.
/// CIFAR-10's official archive has no entry here; add one with its
/// verified digest to fetch it (see README).
const DEFAULT_MANIFEST: &str = "\
mnist.train-images-idx3-ubyte = https://storage.googleapis.com/cvdf-datasets/mnist/train-images-idx3-ubyte.gz ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db
mnist.train-labels-idx1-ubyte = https://storage.googleapis.com/cvdf-datasets/mnist/train-labels-idx1-ubyte.gz 65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5
mnist.t10k-images-idx3-ubyte = https://storage.googleapis.com/cvdf-datasets/mnist/t10k-images-idx3-ubyte.gz 0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7
mnist.t10k-labels-idx1-ubyte = https://storage.googleapis.com/cvdf-datasets/mnist/t10k-labels-idx1-ubyte.gz ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2
fashion.train-images-idx3-ubyte = https://github.com/zalandoresearch/fashion-mnist/raw/master/data/fashion/train-images-idx3-ubyte.gz c59f468a2f672dc815687fe0f83887768d799fd8a3f3276145d20f83aa44d888
fashion.train-labels-idx1-ubyte = https://github.com/zalandoresearch/fashion-mnist/raw/master/data/fashion/train-labels-idx1-ubyte.gz bad3541b69d912435c50bb6ba87bec294ff4f6a2e1246121d8633921760443d9
fashion.t10k-images-idx3-ubyte = https://github.com/zalandoresearch/fashion-mnist/raw/master/data/fashion/t10k-images-idx3-ubyte.gz 5b4141f0afbad91edebe8549f8fcffe087ea10ca49f1dbef5c9a5cd8815ce37b
fashion.t10k-labels-idx1-ubyte = https://github.com/zalandoresearch/fashion-mnist/raw/master/data/fashion/t10k-labels-idx1-ubyte.gz 0402a96d92fd2663957122ceb108a494c5af83dab82d92729df917d7dec38c34
";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub dataset: String,
    pub filename: String,
    pub url: String,
    pub sha256: String,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("fetch manifest line {}: expected 'dataset.file = url sha256'", line_no + 1))
        })?;
        let (dataset, filename) = key.trim().split_once('.').ok_or_else(|| {
            Error::Config(format!("fetch manifest line {}: key must be dataset.filename", line_no + 1))
        })?;
        let mut parts = value.split_whitespace();
        let url = parts.next().ok_or_else(|| {
            Error::Config(format!("fetch manifest line {}: missing url", line_no + 1))
        })?;
        let sha256 = parts.next().ok_or_else(|| {
            Error::Config(format!("fetch manifest line {}: missing sha256", line_no + 1))
        })?;
        if sha256.len() != 64 || !sha256.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(Error::Config(format!(
                "fetch manifest line {}: '{sha256}' is not a sha256 digest",
                line_no + 1
            )));
        }
        entries.push(ManifestEntry {
            dataset: dataset.trim().to_string(),
            filename: filename.trim().to_string(),
            url: url.to_string(),
            sha256: sha256.to_ascii_lowercase(),
        });
    }
    Ok(entries)
}

fn download(url: &str) -> Result<Vec<u8>> {
    let response = reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_secs(300))
        .build()
        .map_err(|e| Error::Data(format!("http client: {e}")))?
        .get(url)
        .send()
        .and_then(|r| r.error_for_status())
        .map_err(|e| Error::Data(format!("download {url}: {e}")))?;
    let bytes = response
        .bytes()
        .map_err(|e| Error::Data(format!("download {url}: {e}")))?;
    Ok(bytes.to_vec())
}

fn gunzip(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    flate2::read::GzDecoder::new(bytes)
        .read_to_end(&mut out)
        .map_err(|e| Error::Data(format!("gzip decode: {e}")))?;
    Ok(out)
}

/// Verifies bytes against the manifest digest and installs them at the
/// final path; on mismatch nothing is left behind.
pub fn verify_and_install(entry: &ManifestEntry, bytes: &[u8], dest: &Path) -> Result<()> {
    let digest = hex_digest(bytes);
    if digest != entry.sha256 {
        // Remove any stale copy so a bad mirror cannot be picked up.
        let _ = std::fs::remove_file(dest);
        return Err(Error::Data(format!(
            "checksum mismatch for {}: expected {}, got {digest}; file removed",
            entry.filename, entry.sha256
        )));
    }
    if let Some(dir) = dest.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(dest, bytes)?;
    Ok(())
}

pub fn fetch(
    dataset: &str,
    data_dir: Option<PathBuf>,
    manifest_path: Option<&Path>,
    quiet: bool,
) -> Result<()> {
    let manifest_text = match manifest_path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", p.display())))?,
        None => DEFAULT_MANIFEST.to_string(),
    };
    let entries: Vec<ManifestEntry> = parse_manifest(&manifest_text)?
        .into_iter()
        .filter(|e| e.dataset == dataset)
        .collect();
    if entries.is_empty() {
        return Err(Error::Config(format!(
            "no fetch manifest entries for dataset '{dataset}'"
        )));
    }
    let data_root = data_dir
        .or_else(|| std::env::var("MTSNN_DATA_DIR").ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"));
    let dir = data_root.join(dataset);

    for entry in &entries {
        let dest = dir.join(&entry.filename);
        if dest.exists() {
            let existing = std::fs::read(&dest)?;
            if hex_digest(&existing) == entry.sha256 {
                if !quiet {
                    eprintln!("{}: already present, checksum ok", entry.filename);
                }
                continue;
            }
            if !quiet {
                eprintln!("{}: present but checksum differs, refetching", entry.filename);
            }
        }
        if !quiet {
            eprintln!("fetching {}", entry.url);
        }
        let raw = download(&entry.url)?;
        let bytes = if entry.url.ends_with(".gz") { gunzip(&raw)? } else { raw };
        verify_and_install(entry, &bytes, &dest)?;
        if !quiet {
            eprintln!("{}: verified ({} bytes)", entry.filename, bytes.len());
        }
    }
    println!("fetched {} file(s) into {}", entries.len(), dir.display());
    Ok(())
}
