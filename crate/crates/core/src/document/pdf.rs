//! Minimal PDF content-stream interpreter.
//!
//! Walks each page's operators (including form XObjects), tracking the
//! graphics and text state needed to place every text-showing operation and
//! every straight stroked path. Output is in page points with the origin at
//! the bottom-left corner of the media box.

use std::collections::HashMap;

use lopdf::content::Content;
use lopdf::{Dictionary, Document, Encoding, Object, ObjectId};
use thiserror::Error;

use super::model::{PageContent, TextBox};
use crate::geom::{BBox, Orientation, Segment};

/// Minor-axis tolerance for ruling extraction.
pub const AXIS_TOLERANCE_PT: f64 = 0.5;
/// Filled rectangles thinner than this become ruling lines.
const THIN_RECT_PT: f64 = 2.0;
const MAX_FORM_DEPTH: usize = 8;
/// Box extents relative to the baseline, as fractions of the font size.
const DESCENT: f64 = 0.2;
const ASCENT: f64 = 0.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdfError {
    #[error("malformed PDF: {0}")]
    Malformed(String),
    #[error("PDF is encrypted")]
    Encrypted,
}

/// Document-level information dictionary fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InfoDict {
    pub title: Option<String>,
    pub author: Option<String>,
    pub subject: Option<String>,
    pub keywords: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedPdf {
    pub pages: Vec<PageContent>,
    pub info: InfoDict,
}

pub fn parse_pdf(bytes: &[u8]) -> Result<ParsedPdf, PdfError> {
    if bytes.is_empty() {
        return Err(PdfError::Malformed("empty input".into()));
    }
    let declares_encryption = contains(bytes, b"/Encrypt");
    let doc = match Document::load_mem(bytes) {
        Ok(doc) => doc,
        Err(_) if declares_encryption => return Err(PdfError::Encrypted),
        Err(e) => return Err(PdfError::Malformed(e.to_string())),
    };
    if doc.was_encrypted() || doc.is_encrypted() {
        return Err(PdfError::Encrypted);
    }
    let page_ids = doc.get_pages();
    if page_ids.is_empty() {
        return Err(PdfError::Malformed("document has no pages".into()));
    }
    let mut pages = Vec::with_capacity(page_ids.len());
    for (index, (_, page_id)) in page_ids.into_iter().enumerate() {
        pages.push(parse_page(&doc, page_id, index)?);
    }
    Ok(ParsedPdf { pages, info: read_info(&doc) })
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

fn read_info(doc: &Document) -> InfoDict {
    let Ok(info) = doc.trailer.get(b"Info").and_then(|o| match o {
        Object::Reference(id) => doc.get_dictionary(*id),
        Object::Dictionary(d) => Ok(d),
        _ => Err(lopdf::Error::ObjectNotFound((0, 0))),
    }) else {
        return InfoDict::default();
    };
    let field = |key: &[u8]| -> Option<String> {
        let obj = info.get_deref(key, doc).ok()?;
        let s = lopdf::decode_text_string(obj).ok()?;
        let s = s.trim().to_string();
        (!s.is_empty()).then_some(s)
    };
    InfoDict {
        title: field(b"Title"),
        author: field(b"Author"),
        subject: field(b"Subject"),
        keywords: field(b"Keywords"),
    }
}

// ---------------------------------------------------------------------------
// Matrices

#[derive(Debug, Clone, Copy, PartialEq)]
struct Matrix([f64; 6]);

impl Matrix {
    const IDENTITY: Matrix = Matrix([1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);

    fn translate(tx: f64, ty: f64) -> Matrix {
        Matrix([1.0, 0.0, 0.0, 1.0, tx, ty])
    }

    /// `self × other` in PDF row-vector convention (apply self first).
    fn then(&self, other: &Matrix) -> Matrix {
        let [a, b, c, d, e, f] = self.0;
        let [a2, b2, c2, d2, e2, f2] = other.0;
        Matrix([
            a * a2 + b * c2,
            a * b2 + b * d2,
            c * a2 + d * c2,
            c * b2 + d * d2,
            e * a2 + f * c2 + e2,
            e * b2 + f * d2 + f2,
        ])
    }

    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b, c, d, e, f] = self.0;
        (a * x + c * y + e, b * x + d * y + f)
    }

    fn vertical_scale(&self) -> f64 {
        self.0[2].hypot(self.0[3])
    }
}

// ---------------------------------------------------------------------------
// Fonts

struct FontInfo<'a> {
    encoding: Option<Encoding<'a>>,
    two_byte: bool,
    first_char: u32,
    widths: Vec<f64>,
    cid_widths: HashMap<u32, f64>,
    default_width: f64,
}

impl<'a> FontInfo<'a> {
    fn load(doc: &'a Document, dict: &'a Dictionary) -> FontInfo<'a> {
        let subtype = dict.get(b"Subtype").and_then(Object::as_name).unwrap_or(b"");
        let base_font = dict.get(b"BaseFont").and_then(Object::as_name).unwrap_or(b"");
        let two_byte = subtype == b"Type0";
        let encoding = if two_byte {
            // Composite fonts decode only through their ToUnicode map.
            dict.get(b"ToUnicode").ok().and_then(|tu| {
                let mut shim = Dictionary::new();
                shim.set("Type", Object::Name(b"Font".to_vec()));
                shim.set("ToUnicode", tu.clone());
                match shim.get_font_encoding(doc).ok()? {
                    Encoding::UnicodeMapEncoding(map) => Some(Encoding::UnicodeMapEncoding(map)),
                    _ => None,
                }
            })
        } else {
            dict.get_font_encoding(doc).ok()
        };

        let first_char = dict.get(b"FirstChar").and_then(Object::as_i64).unwrap_or(0).max(0) as u32;
        let widths = dict
            .get_deref(b"Widths", doc)
            .and_then(Object::as_array)
            .map(|arr| arr.iter().map(|o| number(doc, o).unwrap_or(0.0)).collect())
            .unwrap_or_default();

        let mut cid_widths = HashMap::new();
        let mut default_width = if contains(base_font, b"Courier") { 600.0 } else { 500.0 };
        if two_byte {
            default_width = 1000.0;
            if let Ok(desc) = dict
                .get_deref(b"DescendantFonts", doc)
                .and_then(Object::as_array)
                .and_then(|a| a.first().ok_or(lopdf::Error::ObjectNotFound((0, 0))))
                .and_then(|o| doc.dereference(o).map(|(_, o)| o))
                .and_then(Object::as_dict)
            {
                if let Ok(dw) = desc.get(b"DW").and_then(Object::as_float) {
                    default_width = dw as f64;
                }
                if let Ok(w) = desc.get_deref(b"W", doc).and_then(Object::as_array) {
                    parse_cid_widths(doc, w, &mut cid_widths);
                }
            }
        }
        FontInfo { encoding, two_byte, first_char, widths, cid_widths, default_width }
    }

    fn fallback() -> FontInfo<'static> {
        FontInfo {
            encoding: None,
            two_byte: false,
            first_char: 0,
            widths: Vec::new(),
            cid_widths: HashMap::new(),
            default_width: 500.0,
        }
    }

    /// Glyph width in thousandths of text space.
    fn width(&self, code: u32) -> f64 {
        if self.two_byte {
            return self.cid_widths.get(&code).copied().unwrap_or(self.default_width);
        }
        code.checked_sub(self.first_char)
            .and_then(|i| self.widths.get(i as usize))
            .copied()
            .filter(|w| *w > 0.0)
            .unwrap_or(self.default_width)
    }

    fn decode(&self, bytes: &[u8]) -> String {
        match &self.encoding {
            Some(enc) => enc.bytes_to_string(bytes).unwrap_or_else(|_| latin1(bytes)),
            None if self.two_byte => bytes
                .chunks(2)
                .filter_map(|c| char::from_u32(u32::from(c[0]) << 8 | u32::from(*c.get(1).unwrap_or(&0))))
                .collect(),
            None => latin1(bytes),
        }
    }

    fn codes<'b>(&self, bytes: &'b [u8]) -> impl Iterator<Item = (u32, &'b [u8])> + 'b {
        let step = if self.two_byte { 2 } else { 1 };
        bytes.chunks(step).map(|c| {
            let code = c.iter().fold(0u32, |acc, b| acc << 8 | u32::from(*b));
            (code, c)
        })
    }
}

fn latin1(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| char::from(b)).collect()
}

fn parse_cid_widths(doc: &Document, w: &[Object], out: &mut HashMap<u32, f64>) {
    let mut i = 0;
    while i < w.len() {
        let Some(first) = number(doc, &w[i]) else { break };
        match w.get(i + 1).map(|o| doc.dereference(o).map(|(_, o)| o)) {
            Some(Ok(Object::Array(list))) => {
                for (k, o) in list.iter().enumerate() {
                    if let Some(v) = number(doc, o) {
                        out.insert(first as u32 + k as u32, v);
                    }
                }
                i += 2;
            }
            Some(Ok(_)) => {
                let (Some(last), Some(v)) = (number(doc, &w[i + 1]), w.get(i + 2).and_then(|o| number(doc, o)))
                else {
                    break;
                };
                for cid in first as u32..=last as u32 {
                    out.insert(cid, v);
                }
                i += 3;
            }
            _ => break,
        }
    }
}

fn number(doc: &Document, o: &Object) -> Option<f64> {
    let o = doc.dereference(o).ok()?.1;
    match o {
        Object::Integer(i) => Some(*i as f64),
        Object::Real(r) => Some(*r as f64),
        _ => None,
    }
}

fn operand(ops: &[Object], i: usize) -> f64 {
    match ops.get(i) {
        Some(Object::Integer(v)) => *v as f64,
        Some(Object::Real(v)) => *v as f64,
        _ => 0.0,
    }
}

// ---------------------------------------------------------------------------
// Interpreter

#[derive(Clone)]
struct TextState {
    font: Option<Vec<u8>>,
    size: f64,
    char_spacing: f64,
    word_spacing: f64,
    hscale: f64,
    leading: f64,
    rise: f64,
}

impl Default for TextState {
    fn default() -> Self {
        TextState { font: None, size: 0.0, char_spacing: 0.0, word_spacing: 0.0, hscale: 1.0, leading: 0.0, rise: 0.0 }
    }
}

#[derive(Clone)]
struct GraphicsState {
    ctm: Matrix,
    text: TextState,
}

/// A text-showing operation placed in page space, before line merging.
#[derive(Debug, Clone)]
struct Run {
    x0: f64,
    x1: f64,
    baseline: f64,
    size: f64,
    text: String,
}

#[derive(Default)]
struct PathBuilder {
    segments: Vec<(f64, f64, f64, f64)>,
    rects: Vec<[(f64, f64); 4]>,
    start: Option<(f64, f64)>,
    current: Option<(f64, f64)>,
}

struct Interpreter<'a> {
    doc: &'a Document,
    fonts: HashMap<ObjectId, FontInfo<'a>>,
    inline_fonts: Vec<FontInfo<'a>>,
    runs: Vec<Run>,
    rulings: Vec<Segment>,
}

impl<'a> Interpreter<'a> {
    fn font_for(&mut self, resources: &[&'a Dictionary], name: &[u8]) -> Option<(bool, usize, ObjectId)> {
        for res in resources {
            let Ok(fonts) = res.get_deref(b"Font", self.doc).and_then(Object::as_dict) else { continue };
            let Ok(entry) = fonts.get(name) else { continue };
            return match entry {
                Object::Reference(id) => {
                    if !self.fonts.contains_key(id) {
                        let dict = self.doc.get_dictionary(*id).ok()?;
                        self.fonts.insert(*id, FontInfo::load(self.doc, dict));
                    }
                    Some((true, 0, *id))
                }
                Object::Dictionary(dict) => {
                    self.inline_fonts.push(FontInfo::load(self.doc, dict));
                    Some((false, self.inline_fonts.len() - 1, (0, 0)))
                }
                _ => None,
            };
        }
        None
    }

    fn run_content(&mut self, content: &[u8], resources: Vec<&'a Dictionary>, base: Matrix, depth: usize) {
        let Ok(content) = Content::decode(content) else { return };
        let mut gs = GraphicsState { ctm: base, text: TextState::default() };
        let mut stack: Vec<GraphicsState> = Vec::new();
        let mut tm = Matrix::IDENTITY;
        let mut tlm = Matrix::IDENTITY;
        let mut path = PathBuilder::default();
        let mut font_cache: HashMap<Vec<u8>, Option<(bool, usize, ObjectId)>> = HashMap::new();

        for op in &content.operations {
            let o = &op.operands;
            match op.operator.as_str() {
                "q" => stack.push(gs.clone()),
                "Q" => {
                    if let Some(prev) = stack.pop() {
                        gs = prev;
                    }
                }
                "cm" => {
                    let m = Matrix([operand(o, 0), operand(o, 1), operand(o, 2), operand(o, 3), operand(o, 4), operand(o, 5)]);
                    gs.ctm = m.then(&gs.ctm);
                }
                "BT" => {
                    tm = Matrix::IDENTITY;
                    tlm = Matrix::IDENTITY;
                }
                "Tf" => {
                    gs.text.font = o.first().and_then(|n| n.as_name().ok()).map(<[u8]>::to_vec);
                    gs.text.size = operand(o, 1);
                }
                "Tc" => gs.text.char_spacing = operand(o, 0),
                "Tw" => gs.text.word_spacing = operand(o, 0),
                "Tz" => gs.text.hscale = operand(o, 0) / 100.0,
                "TL" => gs.text.leading = operand(o, 0),
                "Ts" => gs.text.rise = operand(o, 0),
                "Td" => {
                    tlm = Matrix::translate(operand(o, 0), operand(o, 1)).then(&tlm);
                    tm = tlm;
                }
                "TD" => {
                    gs.text.leading = -operand(o, 1);
                    tlm = Matrix::translate(operand(o, 0), operand(o, 1)).then(&tlm);
                    tm = tlm;
                }
                "Tm" => {
                    tlm = Matrix([operand(o, 0), operand(o, 1), operand(o, 2), operand(o, 3), operand(o, 4), operand(o, 5)]);
                    tm = tlm;
                }
                "T*" => {
                    tlm = Matrix::translate(0.0, -gs.text.leading).then(&tlm);
                    tm = tlm;
                }
                "Tj" | "'" | "\"" | "TJ" => {
                    if op.operator == "'" || op.operator == "\"" {
                        if op.operator == "\"" {
                            gs.text.word_spacing = operand(o, 0);
                            gs.text.char_spacing = operand(o, 1);
                        }
                        tlm = Matrix::translate(0.0, -gs.text.leading).then(&tlm);
                        tm = tlm;
                    }
                    let font_key = gs.text.font.clone().unwrap_or_default();
                    let handle = *font_cache
                        .entry(font_key.clone())
                        .or_insert_with(|| self.font_for(&resources, &font_key));
                    let items: Vec<Object> = if op.operator == "TJ" {
                        o.first().and_then(|a| a.as_array().ok()).cloned().unwrap_or_default()
                    } else {
                        o.last().cloned().into_iter().collect()
                    };
                    self.show_text(&items, handle, &gs, &mut tm);
                }
                "m" => {
                    let p = gs.ctm.apply(operand(o, 0), operand(o, 1));
                    path.start = Some(p);
                    path.current = Some(p);
                }
                "l" => {
                    let p = gs.ctm.apply(operand(o, 0), operand(o, 1));
                    if let Some(c) = path.current {
                        path.segments.push((c.0, c.1, p.0, p.1));
                    }
                    path.current = Some(p);
                }
                "c" => path.current = Some(gs.ctm.apply(operand(o, 4), operand(o, 5))),
                "v" | "y" => path.current = Some(gs.ctm.apply(operand(o, 2), operand(o, 3))),
                "h" => {
                    if let (Some(c), Some(s)) = (path.current, path.start) {
                        path.segments.push((c.0, c.1, s.0, s.1));
                        path.current = Some(s);
                    }
                }
                "re" => {
                    let (x, y, w, h) = (operand(o, 0), operand(o, 1), operand(o, 2), operand(o, 3));
                    let corners = [
                        gs.ctm.apply(x, y),
                        gs.ctm.apply(x + w, y),
                        gs.ctm.apply(x + w, y + h),
                        gs.ctm.apply(x, y + h),
                    ];
                    path.rects.push(corners);
                    path.start = Some(corners[0]);
                    path.current = Some(corners[0]);
                }
                "S" | "s" | "B" | "B*" | "b" | "b*" => {
                    if matches!(op.operator.as_str(), "s" | "b" | "b*") {
                        if let (Some(c), Some(s)) = (path.current, path.start) {
                            path.segments.push((c.0, c.1, s.0, s.1));
                        }
                    }
                    self.stroke(&path);
                    path = PathBuilder::default();
                }
                "f" | "F" | "f*" => {
                    self.fill(&path);
                    path = PathBuilder::default();
                }
                "n" => path = PathBuilder::default(),
                "Do" if depth < MAX_FORM_DEPTH => {
                    if let Some(name) = o.first().and_then(|n| n.as_name().ok()) {
                        self.run_form(&resources, name, gs.ctm, depth);
                    }
                }
                _ => {}
            }
        }
    }

    fn run_form(&mut self, resources: &[&'a Dictionary], name: &[u8], ctm: Matrix, depth: usize) {
        for res in resources {
            let Ok(xobjects) = res.get_deref(b"XObject", self.doc).and_then(Object::as_dict) else { continue };
            let Ok(stream) = xobjects.get_deref(name, self.doc).and_then(Object::as_stream) else { continue };
            if stream.dict.get(b"Subtype").and_then(Object::as_name).ok() != Some(b"Form") {
                return;
            }
            let matrix = stream
                .dict
                .get(b"Matrix")
                .and_then(Object::as_array)
                .ok()
                .filter(|a| a.len() == 6)
                .map(|a| Matrix([operand(a, 0), operand(a, 1), operand(a, 2), operand(a, 3), operand(a, 4), operand(a, 5)]))
                .unwrap_or(Matrix::IDENTITY);
            let mut inner: Vec<&'a Dictionary> = Vec::new();
            if let Ok(r) = stream.dict.get_deref(b"Resources", self.doc).and_then(Object::as_dict) {
                inner.push(r);
            }
            inner.extend(resources.iter().copied());
            let data = stream.decompressed_content().unwrap_or_else(|_| stream.content.clone());
            self.run_content(&data, inner, matrix.then(&ctm), depth + 1);
            return;
        }
    }

    fn show_text(&mut self, items: &[Object], handle: Option<(bool, usize, ObjectId)>, gs: &GraphicsState, tm: &mut Matrix) {
        let fallback = FontInfo::fallback();
        let font = match handle {
            Some((true, _, id)) => self.fonts.get(&id).unwrap_or(&fallback),
            Some((false, i, _)) => self.inline_fonts.get(i).unwrap_or(&fallback),
            None => &fallback,
        };
        let ts = &gs.text;
        let start = Matrix([ts.size * ts.hscale, 0.0, 0.0, ts.size, 0.0, ts.rise]).then(tm).then(&gs.ctm);
        let (x_start, baseline) = start.apply(0.0, 0.0);
        let size = start.vertical_scale().abs();
        let mut text = String::new();
        for item in items {
            match item {
                Object::String(bytes, _) => {
                    for (code, raw) in font.codes(bytes) {
                        let w0 = font.width(code) / 1000.0;
                        let mut tx = w0 * ts.size + ts.char_spacing;
                        if raw == [32] {
                            tx += ts.word_spacing;
                        }
                        *tm = Matrix::translate(tx * ts.hscale, 0.0).then(tm);
                    }
                    text.push_str(&font.decode(bytes));
                }
                Object::Integer(_) | Object::Real(_) => {
                    let n = operand(std::slice::from_ref(item), 0);
                    *tm = Matrix::translate(-n / 1000.0 * ts.size * ts.hscale, 0.0).then(tm);
                }
                _ => {}
            }
        }
        let end = Matrix([ts.size * ts.hscale, 0.0, 0.0, ts.size, 0.0, ts.rise]).then(tm).then(&gs.ctm);
        let (x_end, _) = end.apply(0.0, 0.0);
        if text.trim().is_empty() || size <= 0.0 {
            return;
        }
        self.runs.push(Run { x0: x_start.min(x_end), x1: x_start.max(x_end), baseline, size, text });
    }

    fn stroke(&mut self, path: &PathBuilder) {
        for &(x0, y0, x1, y1) in &path.segments {
            self.push_ruling(Segment::new(x0, y0, x1, y1));
        }
        for r in &path.rects {
            for i in 0..4 {
                let (a, b) = (r[i], r[(i + 1) % 4]);
                self.push_ruling(Segment::new(a.0, a.1, b.0, b.1));
            }
        }
    }

    fn fill(&mut self, path: &PathBuilder) {
        for r in &path.rects {
            let xs = r.iter().map(|p| p.0);
            let ys = r.iter().map(|p| p.1);
            let (x0, x1) = (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
            let (y0, y1) = (ys.clone().fold(f64::INFINITY, f64::min), ys.fold(f64::NEG_INFINITY, f64::max));
            if y1 - y0 <= THIN_RECT_PT && x1 - x0 > THIN_RECT_PT {
                let y = (y0 + y1) / 2.0;
                self.push_ruling(Segment::new(x0, y, x1, y));
            } else if x1 - x0 <= THIN_RECT_PT && y1 - y0 > THIN_RECT_PT {
                let x = (x0 + x1) / 2.0;
                self.push_ruling(Segment::new(x, y0, x, y1));
            }
        }
    }

    fn push_ruling(&mut self, s: Segment) {
        if let Some((_, n)) = s.normalized(AXIS_TOLERANCE_PT) {
            self.rulings.push(n);
        }
    }
}

fn media_box(doc: &Document, page_id: ObjectId) -> BBox {
    let mut node = doc.get_dictionary(page_id).ok();
    let mut guard = 0;
    while let Some(dict) = node {
        if let Ok(arr) = dict.get_deref(b"MediaBox", doc).and_then(Object::as_array) {
            let v: Vec<f64> = arr.iter().filter_map(|o| number(doc, o)).collect();
            if v.len() == 4 {
                return BBox::new(v[0].min(v[2]), v[1].min(v[3]), v[0].max(v[2]), v[1].max(v[3]));
            }
        }
        guard += 1;
        node = dict
            .get(b"Parent")
            .and_then(Object::as_reference)
            .and_then(|id| doc.get_dictionary(id))
            .ok()
            .filter(|_| guard < 64);
    }
    BBox::new(0.0, 0.0, 612.0, 792.0)
}

fn parse_page(doc: &Document, page_id: ObjectId, page_index: usize) -> Result<PageContent, PdfError> {
    let mb = media_box(doc, page_id);
    if !mb.is_proper() {
        return Err(PdfError::Malformed(format!("page {page_index} has an empty media box")));
    }
    let content = doc.get_page_content(page_id);
    let mut resources: Vec<&Dictionary> = Vec::new();
    if let Ok((direct, ids)) = doc.get_page_resources(page_id) {
        resources.extend(direct);
        resources.extend(ids.iter().filter_map(|id| doc.get_dictionary(*id).ok()));
    }
    let mut interp = Interpreter {
        doc,
        fonts: HashMap::new(),
        inline_fonts: Vec::new(),
        runs: Vec::new(),
        rulings: Vec::new(),
    };
    let origin = Matrix::translate(-mb.x0, -mb.y0);
    interp.run_content(&content, resources, origin, 0);

    let (w, h) = (mb.width(), mb.height());
    let text_boxes = merge_runs(interp.runs)
        .into_iter()
        .filter_map(|r| {
            let text = r.text.trim().to_string();
            let bbox = BBox::new(r.x0, r.baseline - DESCENT * r.size, r.x1.max(r.x0 + 0.01), r.baseline + ASCENT * r.size)
                .clamp_to(w, h)?;
            (!text.is_empty()).then(|| TextBox::new(bbox, text, r.size))
        })
        .collect();
    let ruling_segments = interp
        .rulings
        .into_iter()
        .filter_map(|s| {
            let b = s.bbox();
            let c = BBox::new(b.x0.clamp(0.0, w), b.y0.clamp(0.0, h), b.x1.clamp(0.0, w), b.y1.clamp(0.0, h));
            let seg = match s.orientation(AXIS_TOLERANCE_PT)? {
                Orientation::Horizontal => Segment::new(c.x0, c.y0, c.x1, c.y0),
                Orientation::Vertical => Segment::new(c.x0, c.y0, c.x0, c.y1),
            };
            (seg.length() > AXIS_TOLERANCE_PT).then_some(seg)
        })
        .collect();
    Ok(PageContent { page_index, width_pt: w, height_pt: h, text_boxes, ruling_segments })
}

/// Joins runs that continue each other on the same baseline (kerning splits
/// a word into several show operations in many producers).
fn merge_runs(runs: Vec<Run>) -> Vec<Run> {
    let mut out: Vec<Run> = Vec::with_capacity(runs.len());
    for r in runs {
        if let Some(prev) = out.last_mut() {
            let same_line = (prev.baseline - r.baseline).abs() < 0.05 * r.size.max(prev.size);
            let same_size = (prev.size - r.size).abs() < 0.05 * r.size.max(prev.size);
            let gap = r.x0 - prev.x1;
            if same_line && same_size && gap > -0.05 * r.size && gap < 0.1 * r.size {
                prev.x1 = prev.x1.max(r.x1);
                prev.text.push_str(&r.text);
                continue;
            }
        }
        out.push(r);
    }
    out
}
