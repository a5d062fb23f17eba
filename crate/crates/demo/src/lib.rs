//! WebAssembly bindings for the static demo page in `www/`.

use wasm_bindgen::prelude::*;

use t2f_core::caption::{flip_attribute, parse_caption, render_caption, ATTRIBUTE_NAMES};
use t2f_core::config::DEFAULT_GENERATOR_SEED;
use t2f_core::dataset::OracleLatents;
use t2f_core::generator::GeneratorParams;
use t2f_core::io::image_to_bytes;

pub const FACE_SIZE: usize = 16;

fn js(e: t2f_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = attributeNames)]
pub fn attribute_names() -> Vec<String> {
    ATTRIBUTE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Attribute names a caption sets.
#[wasm_bindgen(js_name = parseCaption)]
pub fn parse(text: &str) -> Result<Vec<String>, JsError> {
    Ok(parse_caption(text).map_err(js)?.attrs.names().into_iter().map(String::from).collect())
}

/// Canonical caption after setting one attribute, with conflicting ones repaired.
#[wasm_bindgen(js_name = flipCaption)]
pub fn flip(text: &str, attribute: &str, value: bool) -> Result<String, JsError> {
    let attrs = parse_caption(text).map_err(js)?.attrs;
    let flipped = flip_attribute(attrs, attribute, value).map_err(js)?;
    Ok(render_caption(&flipped).map_err(js)?.text().to_string())
}

/// Holds the seeded generator so repeated renders skip initialization.
#[wasm_bindgen]
pub struct FaceRenderer {
    generator: GeneratorParams,
    latents: OracleLatents,
}

#[wasm_bindgen]
impl FaceRenderer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<FaceRenderer, JsError> {
        Ok(Self {
            generator: GeneratorParams::init(DEFAULT_GENERATOR_SEED, FACE_SIZE).map_err(js)?,
            latents: OracleLatents::new(u64::from(seed)),
        })
    }

    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        FACE_SIZE
    }

    /// RGBA pixels of the oracle face for a caption's attributes; `variant`
    /// selects the per-sample jitter.
    pub fn render(&self, caption: &str, variant: u32) -> Result<Vec<u8>, JsError> {
        let attrs = parse_caption(caption).map_err(js)?.attrs;
        let z = self.latents.latent(&attrs, variant as usize);
        let rgb = image_to_bytes(&self.generator.generate(&z).map_err(js)?).map_err(js)?;
        Ok(rgb.pixels.chunks(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect())
    }
}
