//! Patch location enumeration, the line-delimited triplet manifest and patch export.
//!
//! Manifest layout: a header line
//! `{"format":"ptsp-manifest","version":1,"scheme":"points=...;weights=..."}`
//! followed by one JSON object per accepted patch:
//! `{"image_id":"...","top":T,"left":L,"p":64,"ncct_dy":D,"ncct_dx":E,"sim_ln":A,"sim_lg":B,"mode":"ptsp"}`.
//! `sim_lg` is `null` for pair-only records; RMSE baseline records additionally carry
//! `ndct_dy`, `ndct_dx` and `rmse`.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::image::{load_pgm, save_pgm, PatchLoc};
use crate::purify::{ImageTriple, Offset, PatchTriplet, PurifyMode};

pub const MANIFEST_FORMAT: &str = "ptsp-manifest";
pub const MANIFEST_VERSION: u32 = 1;

const REQUIRED_FIELDS: [&str; 9] = [
    "image_id", "top", "left", "p", "ncct_dy", "ncct_dx", "sim_ln", "sim_lg", "mode",
];

/// What to do with the strip left over when `stride` does not divide `extent - p`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum EdgePolicy {
    /// Floor enumeration; the remainder is not covered.
    #[default]
    Drop,
    /// Adds one extra row/column of patches flush with the bottom/right border.
    Flush,
}

fn axis_starts(extent: usize, p: usize, stride: usize, edges: EdgePolicy) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..=extent - p).step_by(stride).collect();
    if edges == EdgePolicy::Flush && *starts.last().unwrap() != extent - p {
        starts.push(extent - p);
    }
    starts
}

/// Row-major patch locations with tops `0, stride, 2*stride, ...` while `top + p <= height`,
/// and likewise for lefts.
pub fn enumerate_locs(height: usize, width: usize, p: usize, stride: usize, edges: EdgePolicy) -> Result<Vec<PatchLoc>> {
    if p == 0 || stride == 0 {
        return Err(Error::Config(format!("patch size and stride must be positive, got p={p}, stride={stride}")));
    }
    if p > height || p > width {
        return Err(Error::Dimension(format!("patch size {p} exceeds image {width}x{height}")));
    }
    let tops = axis_starts(height, p, stride, edges);
    let lefts = axis_starts(width, p, stride, edges);
    Ok(tops
        .iter()
        .flat_map(|&t| lefts.iter().map(move |&l| PatchLoc::new(t, l, p)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_id: String,
    pub top: usize,
    pub left: usize,
    pub p: usize,
    pub ncct_dy: i32,
    pub ncct_dx: i32,
    pub sim_ln: f64,
    pub sim_lg: Option<f64>,
    pub mode: PurifyMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ndct_dy: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ndct_dx: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
}

impl ManifestRecord {
    pub fn from_triplet(image_id: &str, t: &PatchTriplet, mode: PurifyMode) -> Self {
        let rmse_mode = mode == PurifyMode::Rmse;
        Self {
            image_id: image_id.to_string(),
            top: t.loc.top,
            left: t.loc.left,
            p: t.loc.size,
            ncct_dy: t.ncct_offset.dy,
            ncct_dx: t.ncct_offset.dx,
            sim_ln: t.sim_ln,
            sim_lg: t.sim_lg,
            mode,
            ndct_dy: rmse_mode.then_some(t.ndct_offset.dy),
            ndct_dx: rmse_mode.then_some(t.ndct_offset.dx),
            rmse: if rmse_mode { t.rmse } else { None },
        }
    }

    pub fn loc(&self) -> PatchLoc {
        PatchLoc::new(self.top, self.left, self.p)
    }

    pub fn ncct_offset(&self) -> Offset {
        Offset::new(self.ncct_dy, self.ncct_dx)
    }

    pub fn ndct_offset(&self) -> Offset {
        Offset::new(self.ndct_dy.unwrap_or(0), self.ndct_dx.unwrap_or(0))
    }

    fn sort_key(&self) -> (&str, usize, usize) {
        (&self.image_id, self.top, self.left)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestHeader {
    format: String,
    version: u32,
    scheme: String,
}

/// Accepted triplet records, kept sorted by `(image_id, top, left)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    scheme: String,
    records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn new(scheme_fingerprint: impl Into<String>) -> Self {
        Self {
            scheme: scheme_fingerprint.into(),
            records: Vec::new(),
        }
    }

    pub fn with_records(scheme_fingerprint: impl Into<String>, records: Vec<ManifestRecord>) -> Self {
        let mut m = Self::new(scheme_fingerprint);
        m.extend(records);
        m
    }

    /// Ordered merge: records from any number of producers end up in canonical order.
    pub fn extend(&mut self, records: impl IntoIterator<Item = ManifestRecord>) {
        self.records.extend(records);
        self.records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    }

    pub fn scheme(&self) -> &str {
        &self.scheme
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_text(&self) -> String {
        let header = ManifestHeader {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            scheme: self.scheme.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::Manifest {
            line: 1,
            msg: "missing header".into(),
        })?;
        let header: ManifestHeader = serde_json::from_str(first).map_err(|e| Error::Manifest {
            line: 1,
            msg: format!("invalid header: {e}"),
        })?;
        if header.format != MANIFEST_FORMAT || header.version != MANIFEST_VERSION {
            return Err(Error::Manifest {
                line: 1,
                msg: format!("unsupported manifest {} v{}", header.format, header.version),
            });
        }
        let mut records = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let bad = |msg: String| Error::Manifest { line: line_no, msg };
            let obj: Map<String, Value> =
                serde_json::from_str(line).map_err(|e| bad(format!("invalid record: {e}")))?;
            if let Some(missing) = REQUIRED_FIELDS.iter().find(|f| !obj.contains_key(**f)) {
                return Err(bad(format!("missing field {missing}")));
            }
            let rec: ManifestRecord =
                serde_json::from_value(Value::Object(obj)).map_err(|e| bad(format!("invalid record: {e}")))?;
            records.push(rec);
        }
        Ok(Self::with_records(header.scheme, records))
    }
}

pub fn write_manifest(m: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(m.to_text().as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DatasetManifest::parse(&text)
}

/// Provides the full image triple for a manifest `image_id`.
pub trait TripletSource {
    fn load(&self, image_id: &str) -> Result<ImageTriple>;
}

impl TripletSource for HashMap<String, ImageTriple> {
    fn load(&self, image_id: &str) -> Result<ImageTriple> {
        self.get(image_id)
            .cloned()
            .ok_or_else(|| Error::MissingImage(image_id.to_string()))
    }
}

/// Three directories holding `<image_id>.pgm` for each modality.
#[derive(Debug, Clone)]
pub struct DirSource {
    pub ldct: PathBuf,
    pub ndct: PathBuf,
    pub ncct: PathBuf,
}

impl TripletSource for DirSource {
    fn load(&self, image_id: &str) -> Result<ImageTriple> {
        let file = format!("{image_id}.pgm");
        let get = |dir: &Path| {
            let path = dir.join(&file);
            if !path.is_file() {
                return Err(Error::MissingImage(image_id.to_string()));
            }
            load_pgm(path)
        };
        ImageTriple::new(get(&self.ldct)?, get(&self.ndct)?, get(&self.ncct)?)
    }
}

/// Sorted file stems of the `.pgm` files in `dir`.
pub fn pgm_stems(dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "pgm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

/// Writes `{id}_{top}_{left}_{L|N|G}.pgm` for every record. NDCT and NCCT patches are
/// cropped at the location moved by their recorded offsets. Returns the files written.
pub fn export_patches(manifest: &DatasetManifest, source: &dyn TripletSource, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::with_capacity(manifest.len() * 3);
    let mut cached: Option<(String, ImageTriple)> = None;
    for rec in manifest.records() {
        if cached.as_ref().is_none_or(|(id, _)| id != &rec.image_id) {
            cached = Some((rec.image_id.clone(), source.load(&rec.image_id)?));
        }
        let triple = &cached.as_ref().unwrap().1;
        let loc = rec.loc();
        let shifted = |off: Offset| -> Result<PatchLoc> {
            let top = loc.top as i64 + off.dy as i64;
            let left = loc.left as i64 + off.dx as i64;
            if top < 0 || left < 0 {
                return Err(Error::Bounds {
                    top: top.max(0) as usize,
                    left: left.max(0) as usize,
                    size: loc.size,
                    width: triple.ldct.width(),
                    height: triple.ldct.height(),
                });
            }
            Ok(PatchLoc::new(top as usize, left as usize, loc.size))
        };
        let patches = [
            ('L', triple.ldct.crop(loc)?),
            ('N', triple.ndct.crop(shifted(rec.ndct_offset())?)?),
            ('G', triple.ncct.crop(shifted(rec.ncct_offset())?)?),
        ];
        for (tag, patch) in patches {
            let path = out_dir.join(format!("{}_{}_{}_{}.pgm", rec.image_id, rec.top, rec.left, tag));
            save_pgm(&patch, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::GrayImage;
    use proptest::prelude::*;

    fn rec(id: &str, top: usize, left: usize) -> ManifestRecord {
        ManifestRecord {
            image_id: id.into(),
            top,
            left,
            p: 8,
            ncct_dy: 0,
            ncct_dx: 0,
            sim_ln: 0.9,
            sim_lg: Some(0.875),
            mode: PurifyMode::Ptsp,
            ndct_dy: None,
            ndct_dx: None,
            rmse: None,
        }
    }

    #[test]
    fn clinical_geometry_gives_165() {
        let locs = enumerate_locs(392, 512, 64, 32, EdgePolicy::Drop).unwrap();
        assert_eq!(locs.len(), 11 * 15);
        assert_eq!(locs[0], PatchLoc::new(0, 0, 64));
        assert_eq!(locs[1], PatchLoc::new(0, 32, 64));
        assert_eq!(locs.last().unwrap(), &PatchLoc::new(320, 448, 64));
    }

    #[test]
    fn single_and_tiled() {
        assert_eq!(enumerate_locs(64, 64, 64, 32, EdgePolicy::Drop).unwrap(), vec![PatchLoc::new(0, 0, 64)]);
        assert_eq!(enumerate_locs(200, 130, 64, 64, EdgePolicy::Drop).unwrap().len(), 3 * 2);
        assert!(enumerate_locs(63, 100, 64, 32, EdgePolicy::Drop).is_err());
    }

    #[test]
    fn flush_edges_reaches_border() {
        let locs = enumerate_locs(392, 512, 64, 32, EdgePolicy::Flush).unwrap();
        // 392 - 64 = 328 is not a multiple of 32, so one extra row of tops (328)
        assert_eq!(locs.len(), 12 * 15);
        assert!(locs.iter().any(|l| l.top == 328));
    }

    #[test]
    fn empty_manifest_is_header_only() {
        let m = DatasetManifest::new("points=0,64,128,256;weights=1,0.7,0");
        let text = m.to_text();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(DatasetManifest::parse(&text).unwrap(), m);
    }

    #[test]
    fn three_records_round_trip_in_canonical_order() {
        let m = DatasetManifest::with_records("s", vec![rec("b", 0, 0), rec("a", 8, 0), rec("a", 0, 8)]);
        let keys: Vec<_> = m.records().iter().map(|r| (r.image_id.as_str(), r.top, r.left)).collect();
        assert_eq!(keys, vec![("a", 0, 8), ("a", 8, 0), ("b", 0, 0)]);
        let text = m.to_text();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(DatasetManifest::parse(&text).unwrap(), m);
        assert!(text.lines().nth(1).unwrap().starts_with(r#"{"image_id":"a","top":0,"left":8,"p":8,"ncct_dy":0"#));
    }

    proptest! {
        #[test]
        fn scores_round_trip_bit_exactly(ln in 0.0f64..=1.0, lg in 0.0f64..=1.0, e in 0.0f64..1e4) {
            let mut r = rec("a", 0, 0);
            r.sim_ln = ln;
            r.sim_lg = Some(lg);
            r.mode = PurifyMode::Rmse;
            r.rmse = Some(e);
            r.ndct_dy = Some(-3);
            r.ndct_dx = Some(2);
            let m = DatasetManifest::with_records("s", vec![r]);
            prop_assert_eq!(DatasetManifest::parse(&m.to_text()).unwrap(), m);
        }
    }

    #[test]
    fn missing_field_names_line() {
        let text = "{\"format\":\"ptsp-manifest\",\"version\":1,\"scheme\":\"s\"}\n\
                    {\"image_id\":\"a\",\"top\":0,\"left\":0,\"p\":8,\"ncct_dy\":0,\"ncct_dx\":0,\"sim_ln\":0.9,\"mode\":\"ptsp\"}\n";
        let err = DatasetManifest::parse(text).unwrap_err();
        assert_eq!(err.to_string(), "line 2: missing field sim_lg");
        let err = DatasetManifest::parse("{\"format\":\"x\"}\n").unwrap_err();
        assert!(err.to_string().starts_with("line 1:"));
    }

    #[test]
    fn null_sim_lg_and_rmse_extras() {
        let mut psp = rec("a", 0, 0);
        psp.sim_lg = None;
        psp.mode = PurifyMode::Psp;
        let mut base = rec("a", 8, 8);
        base.mode = PurifyMode::Rmse;
        base.ndct_dy = Some(-1);
        base.ndct_dx = Some(2);
        base.rmse = Some(3.25);
        let m = DatasetManifest::with_records("s", vec![psp, base]);
        let text = m.to_text();
        assert!(text.contains("\"sim_lg\":null"));
        assert!(text.contains("\"ndct_dy\":-1"));
        assert_eq!(DatasetManifest::parse(&text).unwrap(), m);
    }

    fn fixture_source() -> HashMap<String, ImageTriple> {
        let img = |salt: usize| GrayImage::from_fn(24, 24, |r, c| ((r * 24 + c + salt) % 256) as u8);
        let mut map = HashMap::new();
        map.insert("img0".to_string(), ImageTriple::new(img(0), img(1), img(2)).unwrap());
        map
    }

    #[test]
    fn export_writes_triples_with_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = rec("img0", 4, 8);
        r.ncct_dy = 2;
        let m = DatasetManifest::with_records("s", vec![r]);
        let src = fixture_source();
        let files = export_patches(&m, &src, dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 3);
        let g = load_pgm(dir.path().join("img0_4_8_G.pgm")).unwrap();
        assert_eq!(g, src["img0"].ncct.crop(PatchLoc::new(6, 8, 8)).unwrap());

        let before: Vec<_> = files.iter().map(|f| fs::read(f).unwrap()).collect();
        export_patches(&m, &src, dir.path()).unwrap();
        let after: Vec<_> = files.iter().map(|f| fs::read(f).unwrap()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn export_names_missing_image() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::with_records("s", vec![rec("ghost", 0, 0)]);
        let err = export_patches(&m, &fixture_source(), dir.path()).unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    proptest! {
        #[test]
        fn count_matches_brute_force(h in 1usize..140, w in 1usize..140, p in 1usize..40, stride in 1usize..40) {
            prop_assume!(p <= h && p <= w);
            let locs = enumerate_locs(h, w, p, stride, EdgePolicy::Drop).unwrap();
            let mut brute = Vec::new();
            for t in 0..h {
                for l in 0..w {
                    if t % stride == 0 && l % stride == 0 && t + p <= h && l + p <= w {
                        brute.push(PatchLoc::new(t, l, p));
                    }
                }
            }
            prop_assert_eq!(locs.len(), ((h - p) / stride + 1) * ((w - p) / stride + 1));
            prop_assert_eq!(locs, brute);
        }
    }
}
