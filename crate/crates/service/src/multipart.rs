//! Just enough `multipart/form-data` to pull an uploaded file out of a
//! buffered request body.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MultipartError {
    #[error("content type has no multipart boundary")]
    NoBoundary,
    #[error("malformed multipart body: {0}")]
    Malformed(&'static str),
    #[error("no file part in the upload")]
    NoFile,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Part<'a> {
    pub name: Option<String>,
    pub filename: Option<String>,
    pub content_type: Option<String>,
    pub data: &'a [u8],
}

/// Splits on `;` outside double quotes.
fn params(value: &str) -> impl Iterator<Item = (String, String)> + '_ {
    let mut parts = Vec::new();
    let (mut start, mut quoted) = (0, false);
    for (i, ch) in value.char_indices() {
        match ch {
            '"' => quoted = !quoted,
            ';' if !quoted => {
                parts.push(&value[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&value[start..]);
    parts.into_iter().filter_map(|p| {
        let (k, v) = p.split_once('=')?;
        let v = v.trim();
        let v = v.strip_prefix('"').and_then(|v| v.strip_suffix('"')).unwrap_or(v);
        Some((k.trim().to_ascii_lowercase(), v.to_string()))
    })
}

/// The boundary of a `multipart/form-data` content type.
pub fn boundary(content_type: &str) -> Option<String> {
    let (mime, rest) = content_type.split_once(';')?;
    if !mime.trim().eq_ignore_ascii_case("multipart/form-data") {
        return None;
    }
    params(rest).find(|(k, _)| k == "boundary").map(|(_, v)| v).filter(|b| !b.is_empty())
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

pub fn parse<'a>(body: &'a [u8], boundary: &str) -> Result<Vec<Part<'a>>, MultipartError> {
    let delimiter = format!("--{boundary}").into_bytes();
    let close = [b"\r\n".as_slice(), &delimiter].concat();
    let start = find(body, &delimiter).ok_or(MultipartError::Malformed("missing opening boundary"))?;
    let mut rest = &body[start + delimiter.len()..];
    let mut parts = Vec::new();
    loop {
        if rest.starts_with(b"--") {
            return Ok(parts);
        }
        rest = rest.strip_prefix(b"\r\n").ok_or(MultipartError::Malformed("boundary not followed by CRLF"))?;
        let header_end = find(rest, b"\r\n\r\n").ok_or(MultipartError::Malformed("unterminated part headers"))?;
        let headers = std::str::from_utf8(&rest[..header_end]).map_err(|_| MultipartError::Malformed("non-UTF-8 headers"))?;
        let data_start = header_end + 4;
        let data_len = find(&rest[data_start..], &close).ok_or(MultipartError::Malformed("unterminated part"))?;
        let mut part = Part {
            name: None,
            filename: None,
            content_type: None,
            data: &rest[data_start..data_start + data_len],
        };
        for line in headers.split("\r\n").filter(|l| !l.is_empty()) {
            let (name, value) = line.split_once(':').ok_or(MultipartError::Malformed("bad part header"))?;
            match name.trim().to_ascii_lowercase().as_str() {
                "content-disposition" => {
                    for (k, v) in params(value) {
                        match k.as_str() {
                            "name" => part.name = Some(v),
                            "filename" => part.filename = Some(v),
                            _ => {}
                        }
                    }
                }
                "content-type" => part.content_type = Some(value.trim().to_string()),
                _ => {}
            }
        }
        parts.push(part);
        rest = &rest[data_start + data_len + close.len()..];
    }
}

/// The part named `image`, else the first part carrying a filename.
pub fn image_part<'a>(parts: &[Part<'a>]) -> Result<&'a [u8], MultipartError> {
    parts
        .iter()
        .find(|p| p.name.as_deref() == Some("image"))
        .or_else(|| parts.iter().find(|p| p.filename.is_some()))
        .map(|p| p.data)
        .ok_or(MultipartError::NoFile)
}
