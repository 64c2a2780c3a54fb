use url::Url;

use super::IngestError;

/// Query keys dropped during canonicalization. A trailing `*` matches any
/// key with that prefix.
pub const DEFAULT_TRACKING_PARAMS: &[&str] = &[
    "utm_*", "fbclid", "gclid", "dclid", "msclkid", "mc_cid", "mc_eid", "cmpid", "smid", "ocid", "ref",
    "ref_src", "_ga",
];

fn denied(key: &str, denylist: &[String]) -> bool {
    let key = key.to_ascii_lowercase();
    denylist.iter().any(|d| match d.strip_suffix('*') {
        Some(prefix) => key.starts_with(prefix),
        None => key == *d,
    })
}

pub fn default_denylist() -> Vec<String> {
    DEFAULT_TRACKING_PARAMS.iter().map(|s| s.to_string()).collect()
}

/// Lowercases scheme and host, drops tracking parameters and the fragment,
/// and removes a trailing slash from any path other than `/`.
pub fn canonicalize_url(raw: &str, denylist: &[String]) -> Result<String, IngestError> {
    let mut url = Url::parse(raw.trim()).map_err(|_| IngestError::InvalidUrl(raw.to_string()))?;
    if !matches!(url.scheme(), "http" | "https") || url.host_str().is_none() {
        return Err(IngestError::InvalidUrl(raw.to_string()));
    }
    url.set_fragment(None);
    let kept: Vec<(String, String)> = url
        .query_pairs()
        .filter(|(k, _)| !denied(k, denylist))
        .map(|(k, v)| (k.into_owned(), v.into_owned()))
        .collect();
    if kept.is_empty() {
        url.set_query(None);
    } else {
        url.query_pairs_mut().clear().extend_pairs(kept);
    }
    let path = url.path().to_string();
    if path.len() > 1 && path.ends_with('/') {
        url.set_path(path.trim_end_matches('/'));
    }
    Ok(url.to_string())
}
