use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use url::Url;

use super::WpmError;
use crate::device::{WorkloadAction, WorkloadScript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteStatus {
    Active,
    CertError,
    Timeout,
    HttpError,
    Filtered,
}

/// From `at` seconds after the load starts until the next phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadPhase {
    pub at: f64,
    pub cpu_load: f64,
    pub bandwidth_kbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteCatalogEntry {
    pub url: String,
    pub status: SiteStatus,
    pub profile: Vec<LoadPhase>,
    pub page_weight_bytes: u64,
    /// HTTP status returned by `http_error` sites.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http_code: Option<u16>,
}

impl SiteCatalogEntry {
    fn validate(&self) -> Result<(), String> {
        normalize(&self.url).ok_or_else(|| format!("bad url {:?}", self.url))?;
        let mut last = -1.0;
        for p in &self.profile {
            if !(p.at.is_finite() && p.at > last) {
                return Err(format!("{}: phase offsets must increase", self.url));
            }
            if !(0.0..=1.0).contains(&p.cpu_load) || !(p.bandwidth_kbps.is_finite() && p.bandwidth_kbps >= 0.0) {
                return Err(format!("{}: phase values out of range", self.url));
            }
            last = p.at;
        }
        if self.profile.first().is_some_and(|p| p.at != 0.0) {
            return Err(format!("{}: profile must start at 0", self.url));
        }
        if self.profile.last().is_some_and(|p| p.bandwidth_kbps != 0.0) {
            return Err(format!("{}: final phase must be quiet", self.url));
        }
        Ok(())
    }

    /// Device workload reproducing the load profile.
    pub fn workload(&self) -> WorkloadScript {
        WorkloadScript::new(self.profile.iter().map(|p| (p.at, WorkloadAction::SetCpu { load: p.cpu_load })))
    }

    fn kilobits_until(&self, t: f64) -> f64 {
        let mut total = 0.0;
        for (i, p) in self.profile.iter().enumerate() {
            let end = self.profile.get(i + 1).map_or(f64::INFINITY, |n| n.at).min(t);
            if end > p.at && p.bandwidth_kbps > 0.0 {
                total += p.bandwidth_kbps * (end - p.at);
            }
        }
        total
    }

    /// Bytes transferred when the load is cut off after `budget` seconds.
    pub fn bytes_within(&self, budget: f64) -> u64 {
        let full = self.kilobits_until(f64::INFINITY);
        if full <= 0.0 {
            return self.page_weight_bytes;
        }
        (self.page_weight_bytes as f64 * (self.kilobits_until(budget) / full).min(1.0)).round() as u64
    }
}

/// Everything the synthetic resolver knows, in popularity order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SiteCatalog {
    entries: Vec<SiteCatalogEntry>,
}

/// Partition sizes for a synthetic catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogSpec {
    pub active: usize,
    pub cert_error: usize,
    pub timeout: usize,
    pub http_error: usize,
    /// Sites on the content denylist.
    pub denylisted: usize,
    /// Less popular twins of active sites under another TLD.
    pub duplicate_tld: usize,
    pub seed: u64,
}

impl CatalogSpec {
    /// The 20-site desk catalog.
    pub fn desk() -> Self {
        Self { active: 12, cert_error: 2, timeout: 2, http_error: 2, denylisted: 1, duplicate_tld: 1, seed: 7 }
    }

    pub fn total(&self) -> usize {
        self.active + self.cert_error + self.timeout + self.http_error + self.denylisted + self.duplicate_tld
    }
}

impl SiteCatalog {
    pub fn new(entries: Vec<SiteCatalogEntry>) -> Result<Self, WpmError> {
        let mut hosts = BTreeSet::new();
        for e in &entries {
            e.validate().map_err(WpmError::Invalid)?;
            if !hosts.insert(normalize(&e.url).expect("validated").0) {
                return Err(WpmError::Invalid(format!("duplicate catalog host for {}", e.url)));
            }
        }
        Ok(Self { entries })
    }

    pub fn parse(text: &str) -> Result<Self, WpmError> {
        let entries: Vec<SiteCatalogEntry> = serde_json::from_str(text).map_err(|e| WpmError::Invalid(e.to_string()))?;
        Self::new(entries)
    }

    pub fn entries(&self) -> &[SiteCatalogEntry] {
        &self.entries
    }

    pub fn urls(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.url.clone()).collect()
    }

    pub fn lookup(&self, url: &str) -> Option<&SiteCatalogEntry> {
        let (host, _) = normalize(url)?;
        self.entries.iter().find(|e| normalize(&e.url).is_some_and(|(h, _)| h == host))
    }

    /// Seeded catalog with exactly the partition sizes in `spec`.
    pub fn synthetic(spec: CatalogSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut kinds: Vec<SiteStatus> = [
            (SiteStatus::Active, spec.active),
            (SiteStatus::CertError, spec.cert_error),
            (SiteStatus::Timeout, spec.timeout),
            (SiteStatus::HttpError, spec.http_error),
            (SiteStatus::Filtered, spec.denylisted),
        ]
        .iter()
        .flat_map(|&(s, n)| std::iter::repeat_n(s, n))
        .collect();
        kinds.shuffle(&mut rng);
        let mut entries: Vec<SiteCatalogEntry> = kinds
            .into_iter()
            .enumerate()
            .map(|(i, status)| {
                let host = if status == SiteStatus::Filtered { format!("blocked{i:02}.example.com") } else { format!("site{i:02}.example.com") };
                synthetic_entry(&mut rng, format!("https://{host}/"), status)
            })
            .collect();
        let originals: Vec<usize> = entries.iter().enumerate().filter(|(_, e)| e.status == SiteStatus::Active).map(|(i, _)| i).collect();
        for k in 0..spec.duplicate_tld.min(originals.len()) {
            let src = &entries[originals[k]];
            let host = normalize(&src.url).expect("generated").0;
            let twin = host.rsplit_once('.').map(|(stem, _)| format!("{stem}.fr")).unwrap_or_else(|| format!("{host}.fr"));
            let mut dup = synthetic_entry(&mut rng, format!("https://{twin}/"), SiteStatus::Active);
            dup.profile = src.profile.clone();
            dup.page_weight_bytes = src.page_weight_bytes;
            entries.push(dup);
        }
        Self { entries }
    }
}

fn synthetic_entry(rng: &mut ChaCha8Rng, url: String, status: SiteStatus) -> SiteCatalogEntry {
    // burst while the page renders, a tail of late resources, then quiet
    let burst_cpu = rng.random_range(0.55..0.95);
    let tail_cpu = rng.random_range(0.15..0.45);
    let tail_end = rng.random_range(10.0..24.0_f64).round();
    let burst_kbps = rng.random_range(1500.0..8000.0_f64).round();
    let tail_kbps = rng.random_range(50.0..600.0_f64).round();
    let profile = vec![
        LoadPhase { at: 0.0, cpu_load: burst_cpu, bandwidth_kbps: burst_kbps },
        LoadPhase { at: 6.0, cpu_load: tail_cpu, bandwidth_kbps: tail_kbps },
        LoadPhase { at: tail_end, cpu_load: 0.05, bandwidth_kbps: 0.0 },
    ];
    let kilobits = burst_kbps * 6.0 + tail_kbps * (tail_end - 6.0);
    let http_code = (status == SiteStatus::HttpError).then(|| if rng.random_bool(0.5) { 403 } else { 503 });
    SiteCatalogEntry { url, status, profile, page_weight_bytes: (kilobits * 125.0).round() as u64, http_code }
}

/// Lower-cased host and path; bare hosts get an `https` scheme.
fn normalize(raw: &str) -> Option<(String, String)> {
    let raw = raw.trim();
    let parsed = if raw.contains("://") { Url::parse(raw) } else { Url::parse(&format!("https://{raw}")) }.ok()?;
    let host = parsed.host_str()?.trim_end_matches('.').to_ascii_lowercase();
    if host.is_empty() {
        return None;
    }
    Some((host, parsed.path().to_string()))
}

/// Host without a leading `www.` and without its top-level label, so
/// `a.com` and `www.a.fr` share a name.
pub fn registrable_name(url: &str) -> Option<String> {
    let (host, _) = normalize(url)?;
    let host = host.strip_prefix("www.").unwrap_or(&host);
    Some(match host.rsplit_once('.') {
        Some((stem, _)) => stem.to_string(),
        None => host.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrefilterReport {
    pub active: Vec<String>,
    pub filtered: Vec<String>,
    pub cert_error: Vec<String>,
    pub timeout: Vec<String>,
    pub http_error: Vec<String>,
}

impl PrefilterReport {
    pub fn counts(&self) -> BTreeMap<SiteStatus, usize> {
        BTreeMap::from([
            (SiteStatus::Active, self.active.len()),
            (SiteStatus::Filtered, self.filtered.len()),
            (SiteStatus::CertError, self.cert_error.len()),
            (SiteStatus::Timeout, self.timeout.len()),
            (SiteStatus::HttpError, self.http_error.len()),
        ])
    }

    fn push(&mut self, status: SiteStatus, url: String) {
        match status {
            SiteStatus::Active => self.active.push(url),
            SiteStatus::Filtered => self.filtered.push(url),
            SiteStatus::CertError => self.cert_error.push(url),
            SiteStatus::Timeout => self.timeout.push(url),
            SiteStatus::HttpError => self.http_error.push(url),
        }
    }
}

/// Classifies `urls` (most popular first): the duplicate-TLD rule keeps the
/// first of each name, then each survivor gets one probe of the resolver.
/// Unparseable or unknown URLs count as timeouts.
pub fn prefilter(urls: &[String], catalog: &SiteCatalog) -> PrefilterReport {
    let mut report = PrefilterReport::default();
    let mut seen = BTreeSet::new();
    for url in urls {
        let Some(name) = registrable_name(url) else {
            report.push(SiteStatus::Timeout, url.clone());
            continue;
        };
        if !seen.insert(name) {
            report.push(SiteStatus::Filtered, url.clone());
            continue;
        }
        let status = catalog.lookup(url).map_or(SiteStatus::Timeout, |e| e.status);
        report.push(status, url.clone());
    }
    report
}
