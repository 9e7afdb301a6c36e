//! Dataset XML: one document per dataset, image paths relative to the
//! document's directory.
//!
//! ```xml
//! <dataset><images>
//!   <image file='img/a.png' subject='S1' cohort='patient' expression='rest'>
//!     <box top='10' left='12' width='200' height='240'>
//!       <part name='00' x='31.5' y='80'/>
//!       ...
//!     </box>
//!   </image>
//! </images></dataset>
//! ```
//!
//! Optional image attributes `width`, `height`, `age`, `sex`, `race` and
//! `etiology` are read when present and written when known.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dataset::pts::format_coord;
use crate::dataset::{AnnotatedImage, Cohort, DatasetIndex, Demographics, SubjectMeta};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Point2, Shape68, NUM_LANDMARKS};

pub fn parse_annotation_xml(text: &str, base_dir: &Path) -> Result<DatasetIndex> {
    let doc = roxmltree::Document::parse(text).map_err(|e| {
        let pos = e.pos();
        Error::parse(pos.row as usize, e.to_string())
    })?;
    let line_of = |node: roxmltree::Node| doc.text_pos_at(node.range().start).row as usize;

    let root = doc.root_element();
    if root.tag_name().name() != "dataset" {
        return Err(Error::parse(line_of(root), "root element must be <dataset>"));
    }
    let mut images = Vec::new();
    for images_el in root.children().filter(|n| n.has_tag_name("images")) {
        for image_el in images_el.children().filter(|n| n.has_tag_name("image")) {
            images.push(parse_image(image_el, &line_of)?);
        }
    }
    Ok(DatasetIndex::new(base_dir.to_path_buf(), images))
}

fn parse_image(
    el: roxmltree::Node,
    line_of: &dyn Fn(roxmltree::Node) -> usize,
) -> Result<AnnotatedImage> {
    let line = line_of(el);
    let file = el
        .attribute("file")
        .ok_or_else(|| Error::parse(line, "<image> without 'file' attribute"))?;
    let subject_id = el.attribute("subject").unwrap_or(file).to_string();
    if subject_id.is_empty() {
        return Err(Error::parse(line, "empty subject id"));
    }
    let cohort = match el.attribute("cohort") {
        None => Cohort::Control,
        Some(c) => c
            .parse()
            .map_err(|_| Error::parse(line, format!("unknown cohort {c:?}")))?,
    };
    let size = match (el.attribute("width"), el.attribute("height")) {
        (Some(w), Some(h)) => Some((
            parse_num::<u32>(line, "width", w)?,
            parse_num::<u32>(line, "height", h)?,
        )),
        _ => None,
    };
    let demographics = Demographics {
        age: el
            .attribute("age")
            .map(|a| parse_num::<f64>(line, "age", a))
            .transpose()?,
        sex: el.attribute("sex").map(str::to_string),
        race: el.attribute("race").map(str::to_string),
        etiology: el.attribute("etiology").map(str::to_string),
    };
    let meta = SubjectMeta {
        subject_id,
        cohort,
        expression: el.attribute("expression").unwrap_or("unknown").to_string(),
        demographics,
    };

    let boxes: Vec<_> = el.children().filter(|n| n.has_tag_name("box")).collect();
    let box_el = match boxes.as_slice() {
        [b] => *b,
        [] => return Err(Error::parse(line, "<image> without <box>")),
        [_, second, ..] => {
            return Err(Error::parse(line_of(*second), "more than one <box> per image"))
        }
    };
    let bline = line_of(box_el);
    let attr = |name: &str| -> Result<f64> {
        let v = box_el
            .attribute(name)
            .ok_or_else(|| Error::parse(bline, format!("<box> missing '{name}' attribute")))?;
        parse_num::<f64>(bline, name, v)
    };
    let bbox = BoundingBox::new(attr("left")?, attr("top")?, attr("width")?, attr("height")?)
        .map_err(|e| Error::parse(bline, e.to_string()))?;

    let mut parts: [Option<Point2>; NUM_LANDMARKS] = [None; NUM_LANDMARKS];
    let mut n_parts = 0;
    for part in box_el.children().filter(|n| n.has_tag_name("part")) {
        let pline = line_of(part);
        let name = part
            .attribute("name")
            .ok_or_else(|| Error::parse(pline, "<part> without 'name'"))?;
        let idx: usize = name
            .parse()
            .ok()
            .filter(|&i| i < NUM_LANDMARKS)
            .ok_or_else(|| Error::parse(pline, format!("part name {name:?} is not in 00–67")))?;
        if parts[idx].is_some() {
            return Err(Error::parse(pline, format!("duplicate part {name:?}")));
        }
        let coord = |k: &str| -> Result<f64> {
            let v = part
                .attribute(k)
                .ok_or_else(|| Error::parse(pline, format!("<part> missing '{k}'")))?;
            parse_num::<f64>(pline, k, v)
        };
        parts[idx] = Some(Point2::new(coord("x")?, coord("y")?));
        n_parts += 1;
    }
    let ground_truth = match n_parts {
        0 => None,
        NUM_LANDMARKS => Some(
            Shape68::new(parts.map(|p| p.expect("all parts present")))
                .map_err(|e| Error::parse(bline, e.to_string()))?,
        ),
        n => {
            let missing: Vec<_> = (0..NUM_LANDMARKS).filter(|&i| parts[i].is_none()).collect();
            return Err(Error::parse(
                bline,
                format!("incomplete shape: {n} of 68 parts, missing {missing:?}"),
            ));
        }
    };

    Ok(AnnotatedImage {
        image_path: PathBuf::from(file),
        size,
        bbox,
        annotations: BTreeMap::new(),
        ground_truth,
        meta,
    })
}

fn parse_num<T: std::str::FromStr>(line: usize, what: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("attribute '{what}' is not numeric: {v:?}")))
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '\'' => out.push_str("&apos;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
    out
}

/// Serializes `images`; `paths` gives the file attribute for each image.
pub(crate) fn write_xml<'a>(
    images: impl IntoIterator<Item = (&'a AnnotatedImage, String)>,
) -> String {
    let mut out = String::from("<?xml version='1.0' encoding='UTF-8'?>\n<dataset>\n<images>\n");
    for (img, file) in images {
        let m = &img.meta;
        let _ = write!(
            out,
            "  <image file='{}' subject='{}' cohort='{}' expression='{}'",
            escape(&file),
            escape(&m.subject_id),
            m.cohort,
            escape(&m.expression)
        );
        if let Some((w, h)) = img.size {
            let _ = write!(out, " width='{w}' height='{h}'");
        }
        let d = &m.demographics;
        if let Some(age) = d.age {
            let _ = write!(out, " age='{age}'");
        }
        for (k, v) in [("sex", &d.sex), ("race", &d.race), ("etiology", &d.etiology)] {
            if let Some(v) = v {
                let _ = write!(out, " {k}='{}'", escape(v));
            }
        }
        out.push_str(">\n");
        let b = &img.bbox;
        let _ = write!(
            out,
            "    <box top='{}' left='{}' width='{}' height='{}'",
            format_coord(b.top),
            format_coord(b.left),
            format_coord(b.width),
            format_coord(b.height)
        );
        match &img.ground_truth {
            None => out.push_str("/>\n"),
            Some(gt) => {
                out.push_str(">\n");
                for (i, p) in gt.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "      <part name='{i:02}' x='{}' y='{}'/>",
                        format_coord(p.x),
                        format_coord(p.y)
                    );
                }
                out.push_str("    </box>\n");
            }
        }
        out.push_str("  </image>\n");
    }
    out.push_str("</images>\n</dataset>\n");
    out
}
