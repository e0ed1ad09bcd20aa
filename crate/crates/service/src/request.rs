//! Multipart form of `POST /v1/stylize`.
//!
//! | field           | kind  | count | meaning                                    |
//! |-----------------|-------|-------|--------------------------------------------|
//! | `content`       | image | 1     | content image                              |
//! | `style`         | image | 1+    | style images, in order                     |
//! | `weight`        | text  | 0 or one per style | mix weights, normalised here  |
//! | `alpha`         | text  | 0-1   | content/style trade-off, default 1, clamped |
//! | `mask`          | image | 0+    | grayscale region mask at content size      |
//! | `mask_style`    | text  | 0 or one per mask | style index of each mask; defaults to the mask's position |
//! | `output_format` | text  | 0-1   | `png` (default) or `jpeg`                  |

use std::path::Path;

use axum::extract::multipart::{Multipart, MultipartError};
use axum::http::StatusCode;
use ldstyle::controls::{clamp_alpha, RegionMask, StyleMix};
use ldstyle::imaging::{decode_image, decode_mask, Image, OutputFormat};

use crate::api_error::ApiError;

/// A validated stylization request.
#[derive(Debug, Clone)]
pub struct StylizeParams {
    pub content: Image,
    pub mix: StyleMix,
    pub alpha: f64,
    pub regions: Vec<RegionMask>,
    pub format: OutputFormat,
}

impl StylizeParams {
    /// Longer side of the content image.
    pub fn max_side(&self) -> usize {
        self.content.width().max(self.content.height())
    }
}

fn multipart_error(e: MultipartError) -> ApiError {
    let status = e.status();
    if status == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::new(status, "payload_too_large", e.body_text())
    } else {
        ApiError::bad_request(format!("malformed multipart body: {}", e.body_text()))
    }
}

fn text(bytes: &[u8], field: &str) -> Result<String, ApiError> {
    String::from_utf8(bytes.to_vec())
        .map(|s| s.trim().to_string())
        .map_err(|_| ApiError::bad_request(format!("field `{field}` is not UTF-8 text")))
}

fn number<T: std::str::FromStr>(bytes: &[u8], field: &str) -> Result<T, ApiError> {
    let s = text(bytes, field)?;
    s.parse()
        .map_err(|_| ApiError::bad_request(format!("field `{field}` has invalid value `{s}`")))
}

pub async fn parse(mut form: Multipart) -> Result<StylizeParams, ApiError> {
    let mut content = None;
    let mut styles = Vec::new();
    let mut weights = Vec::new();
    let mut alpha = None;
    let mut masks = Vec::new();
    let mut mask_styles = Vec::new();
    let mut format = OutputFormat::Png;
    while let Some(field) = form.next_field().await.map_err(multipart_error)? {
        let name = field.name().unwrap_or_default().to_string();
        let file = field.file_name().unwrap_or(&name).to_string();
        let bytes = field.bytes().await.map_err(multipart_error)?;
        let label = Path::new(&file);
        match name.as_str() {
            "content" => {
                if content.is_some() {
                    return Err(ApiError::bad_request("more than one `content` field"));
                }
                content = Some(decode_image(&bytes, label)?);
            }
            "style" => styles.push(decode_image(&bytes, label)?),
            "weight" => weights.push(number::<f64>(&bytes, "weight")?),
            "alpha" => {
                let a = number::<f64>(&bytes, "alpha")?;
                alpha = Some(clamp_alpha(a).map_err(|e| ApiError::bad_request(e.to_string()))?);
            }
            "mask" => masks.push(decode_mask(&bytes, label)?),
            "mask_style" => mask_styles.push(number::<usize>(&bytes, "mask_style")?),
            "output_format" => {
                let s = text(&bytes, "output_format")?;
                format = OutputFormat::parse(&s)
                    .ok_or_else(|| ApiError::bad_request(format!("unknown output format `{s}`")))?;
            }
            other => return Err(ApiError::bad_request(format!("unknown field `{other}`"))),
        }
    }
    let content = content.ok_or_else(|| ApiError::bad_request("missing `content` image"))?;
    if styles.is_empty() {
        return Err(ApiError::bad_request("at least one `style` image is required"));
    }
    if weights.is_empty() {
        weights = vec![1.0; styles.len()];
    }
    let mix = StyleMix::new(styles, weights)?;
    if !mask_styles.is_empty() && mask_styles.len() != masks.len() {
        return Err(ApiError::bad_request(format!(
            "{} masks but {} mask_style values",
            masks.len(),
            mask_styles.len()
        )));
    }
    let regions = masks
        .into_iter()
        .enumerate()
        .map(|(i, mask)| RegionMask {
            mask,
            style_index: mask_styles.get(i).copied().unwrap_or(i),
        })
        .collect();
    Ok(StylizeParams {
        content,
        mix,
        alpha: alpha.unwrap_or(1.0),
        regions,
        format,
    })
}
