//! SVG overlays: the raster as an embedded PNG, keypoints as dots colored by
//! type, symbols as outlines.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use base64::Engine as _;
use symspot::detect::read_detections_csv;
use symspot::{Keypoint, Raster, RectangleSymbol, SymbolClass};

use crate::inputs::{image_key, GroupedImage};
use crate::RenderArgs;

const PALETTE: [&str; 15] = [
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#f032e6", "#9a6324", "#469990", "#800000",
    "#808000", "#000075", "#bfef45", "#dcbeff", "#a9a9a9",
];

pub fn run(a: &RenderArgs) -> Result<()> {
    let raster = Raster::load(&a.image)?;
    let key = image_key(&a.image.to_string_lossy());
    let (points, symbols) = if let Some(csv) = &a.detections {
        let rows = read_detections_csv(csv)?;
        let points: Vec<Keypoint> = rows.into_iter().filter(|r| image_key(&r.image) == key).map(|r| r.keypoint).collect();
        (points, Vec::new())
    } else if let Some(json) = &a.symbols {
        let text = fs::read_to_string(json).with_context(|| format!("reading {}", json.display()))?;
        let grouped: Vec<GroupedImage> = serde_json::from_str(&text).with_context(|| format!("parsing {}", json.display()))?;
        match grouped.into_iter().find(|g| image_key(&g.image) == key) {
            Some(g) => (g.keypoints, g.symbols),
            None => (Vec::new(), Vec::new()),
        }
    } else {
        (Vec::new(), Vec::new())
    };
    let (svg, clipped) = render_svg(&raster, &points, &symbols)?;
    if clipped > 0 {
        log::warn!("{clipped} overlay points lie outside the {}x{} image and were clipped", raster.width(), raster.height());
        eprintln!("warning: {clipped} overlay points outside the image were clipped");
    }
    write(&a.out, &svg)
}

fn write(path: &Path, svg: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, svg).with_context(|| format!("writing {}", path.display()))
}

/// The SVG text and the number of overlay points outside the raster.
pub fn render_svg(raster: &Raster, points: &[Keypoint], symbols: &[RectangleSymbol]) -> Result<(String, usize)> {
    let (w, h) = (raster.width(), raster.height());
    let png = base64::engine::general_purpose::STANDARD.encode(raster.png_bytes()?);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<image id="base" x="0" y="0" width="{w}" height="{h}" href="data:image/png;base64,{png}"/>"#);
    let clipped = points.iter().filter(|k| !k.in_bounds(w, h)).count();
    if !points.is_empty() || !symbols.is_empty() {
        let _ = writeln!(s, r#"<defs><clipPath id="frame"><rect x="0" y="0" width="{w}" height="{h}"/></clipPath></defs>"#);
        let _ = writeln!(s, r#"<g id="overlay" clip-path="url(#frame)">"#);
        for sym in symbols {
            let coords: Vec<String> = sym.vertices(points).map(|k| format!("{:.2},{:.2}", k.x, k.y)).collect();
            let (tag, color) = match sym.class {
                SymbolClass::Scale => ("polyline", "#0077ff"),
                SymbolClass::Block => ("polygon", "#ff7700"),
                SymbolClass::Wall => ("polygon", "#00aa44"),
            };
            let _ = writeln!(
                s,
                r#"<{tag} class="symbol {}" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                sym.class,
                coords.join(" ")
            );
        }
        for k in points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}"><title>{}</title></circle>"#,
                k.x,
                k.y,
                PALETTE[k.kind.channel() % PALETTE.len()],
                k.kind.name()
            );
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    Ok((s, clipped))
}
