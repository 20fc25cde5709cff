//! Depth-frame preprocessing: per-camera back-projection, palm-centered
//! cube cropping, `[-1, 1]` normalization of depth and joints, 16-joint
//! remapping, and the binary corpus format shared by the training and
//! evaluation tools.
//!
//! The pipeline consumes a depth image plus its camera intrinsics, crops a
//! fixed-size cube around the annotated palm center in all three
//! dimensions, resamples the crop window to a square output with
//! nearest-neighbor lookup, and maps depth affinely so the palm plane sits
//! at 0 and the near/far cube faces at -1/+1. Anything outside the cube's
//! depth slab, outside the source image, or missing (raw depth 0) reads as
//! +1: background behind the hand.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use thiserror::Error;

use crate::skeleton::{JointSet, JOINT_COUNT};

/// First bytes of every corpus file.
pub const CORPUS_MAGIC: &[u8; 8] = b"HFKCORP1";
/// Bumped on any layout change; readers reject other versions.
pub const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PreprocError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("image decode: {0}")]
    Image(#[from] image::ImageError),
    #[error("camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("crop spec: {0}")]
    InvalidCrop(String),
    #[error("palm center depth {value} is missing or non-positive")]
    PalmDepth { value: f64 },
    #[error("mapping slot {slot} references raw joint {index}, but the frame has {raw_count}")]
    MappingIndexOutOfRange {
        slot: usize,
        index: usize,
        raw_count: usize,
    },
    #[error("mapping table: {0}")]
    MappingParse(String),
    #[error("corpus format: {0}")]
    CorpusFormat(String),
    #[error("depth image: {0}")]
    BadDepthImage(String),
}

/// Pinhole camera model of a depth sensor.
///
/// `depth_unit_to_mm` converts the sensor's raw depth values (and the
/// depth component of its annotations) to millimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub depth_unit_to_mm: f64,
}

impl CameraIntrinsics {
    /// Published intrinsics of each supported dataset's sensor.
    pub fn defaults_for(kind: DatasetKind) -> Self {
        match kind {
            DatasetKind::Icvl | DatasetKind::Msra2015 => CameraIntrinsics {
                fx: 241.42,
                fy: 241.42,
                cx: 160.0,
                cy: 120.0,
                depth_unit_to_mm: 1.0,
            },
            DatasetKind::Nyu => CameraIntrinsics {
                fx: 588.03,
                fy: 587.07,
                cx: 320.0,
                cy: 240.0,
                depth_unit_to_mm: 1.0,
            },
        }
    }

    fn validate(&self) -> Result<(), PreprocError> {
        for (name, value) in [("fx", self.fx), ("fy", self.fy)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(PreprocError::InvalidIntrinsics(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        for (name, value) in [("cx", self.cx), ("cy", self.cy)] {
            if !value.is_finite() {
                return Err(PreprocError::InvalidIntrinsics(format!(
                    "{name} must be finite, got {value}"
                )));
            }
        }
        if !(self.depth_unit_to_mm.is_finite() && self.depth_unit_to_mm > 0.0) {
            return Err(PreprocError::InvalidIntrinsics(format!(
                "depth_unit_to_mm must be positive, got {}",
                self.depth_unit_to_mm
            )));
        }
        Ok(())
    }

    /// Lifts a pixel with depth (mm) into camera-space millimeters.
    pub fn back_project(&self, u: f64, v: f64, depth_mm: f64) -> Point3<f64> {
        Point3::new(
            (u - self.cx) * depth_mm / self.fx,
            (v - self.cy) * depth_mm / self.fy,
            depth_mm,
        )
    }

    /// Projects a camera-space point (mm) onto the pixel plane.
    pub fn project(&self, p: &Point3<f64>) -> (f64, f64) {
        (
            self.cx + p.x * self.fx / p.z,
            self.cy + p.y * self.fy / p.z,
        )
    }
}

/// Palm-centered crop geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropSpec {
    /// Side of the cube cropped around the palm, in millimeters.
    pub cube_side_mm: f64,
    /// Output images are `output_size × output_size`.
    pub output_size: usize,
}

impl Default for CropSpec {
    fn default() -> Self {
        CropSpec {
            cube_side_mm: 300.0,
            output_size: 128,
        }
    }
}

impl CropSpec {
    fn validate(&self) -> Result<(), PreprocError> {
        if !(self.cube_side_mm.is_finite() && self.cube_side_mm > 0.0) {
            return Err(PreprocError::InvalidCrop(format!(
                "cube_side_mm must be positive, got {}",
                self.cube_side_mm
            )));
        }
        if self.output_size == 0 {
            return Err(PreprocError::InvalidCrop(
                "output_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Supported source datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Icvl,
    Nyu,
    Msra2015,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [DatasetKind::Icvl, DatasetKind::Nyu, DatasetKind::Msra2015];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Icvl => "icvl",
            DatasetKind::Nyu => "nyu",
            DatasetKind::Msra2015 => "msra2015",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    fn id(self) -> u32 {
        match self {
            DatasetKind::Icvl => 1,
            DatasetKind::Nyu => 2,
            DatasetKind::Msra2015 => 3,
        }
    }

    fn from_id(id: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.id() == id)
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Identifies where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceTag {
    pub dataset: DatasetKind,
    pub subject: u32,
    pub frame: u64,
}

/// A raw depth frame in the sensor's native units, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, PreprocError> {
        if data.len() != width * height {
            return Err(PreprocError::BadDepthImage(format!(
                "{width}x{height} image needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(DepthImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn at(&self, col: usize, row: usize) -> f32 {
        self.data[row * self.width + col]
    }
}

/// One preprocessed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tag: SourceTag,
    /// Palm center in camera-space millimeters; the anchor every
    /// normalized quantity is relative to.
    pub palm_center_mm: Point3<f64>,
    /// Per-axis `(joint - palm) / (cube_side/2)`, clamped to `[-1, 1]`.
    pub joints_norm: JointSet,
    /// `output_size²` normalized depth values in `[-1, 1]`, row-major.
    pub depth: Vec<f32>,
}

/// Raw-annotation index for each of the 16 canonical output joints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingTable(pub [usize; JOINT_COUNT]);

impl MappingTable {
    pub fn identity() -> Self {
        let mut table = [0usize; JOINT_COUNT];
        for (i, slot) in table.iter_mut().enumerate() {
            *slot = i;
        }
        MappingTable(table)
    }

    /// Parses the bundled table format: one raw index per line, `#`
    /// comments and blank lines ignored.
    pub fn parse(text: &str) -> Result<Self, PreprocError> {
        let mut indices = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let index: usize = body.parse().map_err(|_| {
                PreprocError::MappingParse(format!(
                    "line {}: expected a joint index, got {body:?}",
                    line_no + 1
                ))
            })?;
            indices.push(index);
        }
        if indices.len() != JOINT_COUNT {
            return Err(PreprocError::MappingParse(format!(
                "expected {JOINT_COUNT} indices, found {}",
                indices.len()
            )));
        }
        let mut table = [0usize; JOINT_COUNT];
        table.copy_from_slice(&indices);
        Ok(MappingTable(table))
    }

    /// The table shipped for a dataset; edit the corresponding
    /// `data/remap_*.txt` (or pass an override file) to change the subset.
    pub fn bundled(kind: DatasetKind) -> Self {
        let text = match kind {
            DatasetKind::Icvl => include_str!("../data/remap_icvl.txt"),
            DatasetKind::Nyu => include_str!("../data/remap_nyu.txt"),
            DatasetKind::Msra2015 => include_str!("../data/remap_msra2015.txt"),
        };
        Self::parse(text).expect("bundled mapping tables are valid")
    }
}

/// Selects the 16 canonical joints out of a raw annotation list.
///
/// Output slot `i` receives `raw[table[i]]`; millimeter units pass through
/// untouched.
pub fn remap_joints(
    raw: &[Point3<f64>],
    table: &MappingTable,
) -> Result<JointSet, PreprocError> {
    let mut joints = JointSet::origin();
    for (slot, &index) in table.0.iter().enumerate() {
        if index >= raw.len() {
            return Err(PreprocError::MappingIndexOutOfRange {
                slot,
                index,
                raw_count: raw.len(),
            });
        }
        joints[slot] = raw[index];
    }
    Ok(joints)
}

/// Crops a cube around the palm and normalizes depth and joints.
///
/// The u,v window is the projection of the cube's palm-depth square, so
/// the output always covers `cube_side_mm` of physical extent regardless
/// of distance. Joints are expected in camera-space millimeters and
/// already remapped to the canonical 16.
pub fn crop_normalize(
    depth: &DepthImage,
    intrinsics: &CameraIntrinsics,
    palm_center_mm: Point3<f64>,
    joints_mm: &JointSet,
    crop: &CropSpec,
    tag: SourceTag,
) -> Result<Sample, PreprocError> {
    intrinsics.validate()?;
    crop.validate()?;
    let pz = palm_center_mm.z;
    if !pz.is_finite() || pz <= 0.0 {
        return Err(PreprocError::PalmDepth { value: pz });
    }

    let half = 0.5 * crop.cube_side_mm;
    let n = crop.output_size;
    let (u_min, _) = intrinsics.project(&Point3::new(
        palm_center_mm.x - half,
        palm_center_mm.y,
        pz,
    ));
    let (u_max, _) = intrinsics.project(&Point3::new(
        palm_center_mm.x + half,
        palm_center_mm.y,
        pz,
    ));
    let (_, v_min) = intrinsics.project(&Point3::new(
        palm_center_mm.x,
        palm_center_mm.y - half,
        pz,
    ));
    let (_, v_max) = intrinsics.project(&Point3::new(
        palm_center_mm.x,
        palm_center_mm.y + half,
        pz,
    ));

    let mut out = vec![1.0f32; n * n];
    for row in 0..n {
        let v = v_min + (row as f64 + 0.5) * (v_max - v_min) / n as f64;
        let sv = v.floor();
        if sv < 0.0 || sv >= depth.height as f64 {
            continue;
        }
        for col in 0..n {
            let u = u_min + (col as f64 + 0.5) * (u_max - u_min) / n as f64;
            let su = u.floor();
            if su < 0.0 || su >= depth.width as f64 {
                continue;
            }
            let raw = depth.at(su as usize, sv as usize);
            if !(raw.is_finite() && raw > 0.0) {
                continue;
            }
            let normalized = (raw as f64 * intrinsics.depth_unit_to_mm - pz) / half;
            if normalized.abs() <= 1.0 {
                out[row * n + col] = normalized as f32;
            }
        }
    }

    let mut joints_norm = JointSet::origin();
    for j in 0..JOINT_COUNT {
        for axis in 0..3 {
            let d = (joints_mm[j][axis] - palm_center_mm[axis]) / half;
            joints_norm[j][axis] = d.clamp(-1.0, 1.0);
        }
    }

    Ok(Sample {
        tag,
        palm_center_mm,
        joints_norm,
        depth: out,
    })
}

/// Exact affine inverse of the joint normalization.
pub fn denormalize(sample: &Sample, crop: &CropSpec) -> JointSet {
    let half = 0.5 * crop.cube_side_mm;
    let mut joints = JointSet::origin();
    for j in 0..JOINT_COUNT {
        for axis in 0..3 {
            joints[j][axis] = sample.palm_center_mm[axis] + half * sample.joints_norm[j][axis];
        }
    }
    joints
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_f32<R: Read>(r: &mut R) -> io::Result<f32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(f32::from_le_bytes(buf))
}

/// Incremental corpus writer; the sample count is back-patched on finish
/// so corpora can be streamed without knowing the count up front.
struct CorpusWriter {
    out: BufWriter<File>,
    crop: CropSpec,
    count: u64,
}

/// Byte offset of the count field: magic and version come first.
const COUNT_OFFSET: u64 = 12;

impl CorpusWriter {
    fn create(path: &Path, crop: &CropSpec) -> Result<Self, PreprocError> {
        crop.validate()?;
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(CORPUS_MAGIC)?;
        write_u32(&mut out, CORPUS_VERSION)?;
        write_u64(&mut out, 0)?;
        write_f64(&mut out, crop.cube_side_mm)?;
        write_u32(&mut out, crop.output_size as u32)?;
        Ok(CorpusWriter {
            out,
            crop: *crop,
            count: 0,
        })
    }

    fn append(&mut self, sample: &Sample) -> Result<(), PreprocError> {
        let n = self.crop.output_size;
        if sample.depth.len() != n * n {
            return Err(PreprocError::CorpusFormat(format!(
                "sample depth has {} values, corpus expects {}",
                sample.depth.len(),
                n * n
            )));
        }
        write_u32(&mut self.out, sample.tag.dataset.id())?;
        write_u32(&mut self.out, sample.tag.subject)?;
        write_u64(&mut self.out, sample.tag.frame)?;
        for axis in 0..3 {
            write_f64(&mut self.out, sample.palm_center_mm[axis])?;
        }
        for value in sample.joints_norm.to_flat() {
            write_f64(&mut self.out, value)?;
        }
        for value in &sample.depth {
            self.out.write_all(&value.to_le_bytes())?;
        }
        self.count += 1;
        Ok(())
    }

    fn finish(mut self) -> Result<u64, PreprocError> {
        self.out.seek(SeekFrom::Start(COUNT_OFFSET))?;
        write_u64(&mut self.out, self.count)?;
        self.out.flush()?;
        Ok(self.count)
    }
}

/// Writes a complete corpus file.
pub fn write_corpus(
    path: &Path,
    crop: &CropSpec,
    samples: &[Sample],
) -> Result<(), PreprocError> {
    let mut writer = CorpusWriter::create(path, crop)?;
    for sample in samples {
        writer.append(sample)?;
    }
    writer.finish()?;
    Ok(())
}

/// Reads a corpus file back; validates magic, version, and payload sizes.
pub fn read_corpus(path: &Path) -> Result<(CropSpec, Vec<Sample>), PreprocError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CORPUS_MAGIC {
        return Err(PreprocError::CorpusFormat(
            "not a corpus file (bad magic)".into(),
        ));
    }
    let version = read_u32(&mut r)?;
    if version != CORPUS_VERSION {
        return Err(PreprocError::CorpusFormat(format!(
            "unsupported version {version}, expected {CORPUS_VERSION}"
        )));
    }
    let count = read_u64(&mut r)?;
    let crop = CropSpec {
        cube_side_mm: read_f64(&mut r)?,
        output_size: read_u32(&mut r)? as usize,
    };
    crop.validate()
        .map_err(|e| PreprocError::CorpusFormat(format!("header: {e}")))?;

    let mut samples = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        let dataset_id = read_u32(&mut r)?;
        let dataset = DatasetKind::from_id(dataset_id).ok_or_else(|| {
            PreprocError::CorpusFormat(format!("unknown dataset id {dataset_id}"))
        })?;
        let subject = read_u32(&mut r)?;
        let frame = read_u64(&mut r)?;
        let palm_center_mm = Point3::new(read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?);
        let mut flat = [0.0f64; 3 * JOINT_COUNT];
        for value in flat.iter_mut() {
            *value = read_f64(&mut r)?;
        }
        let joints_norm = JointSet::from_flat(&flat).expect("fixed-size joint block");
        let n = crop.output_size;
        let mut depth = Vec::with_capacity(n * n);
        for _ in 0..n * n {
            depth.push(read_f32(&mut r)?);
        }
        samples.push(Sample {
            tag: SourceTag {
                dataset,
                subject,
                frame,
            },
            palm_center_mm,
            joints_norm,
            depth,
        });
    }
    Ok((crop, samples))
}

/// Knobs for [`build_corpus`]; the defaults follow the dataset kind.
#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    pub crop: Option<CropSpec>,
    pub intrinsics: Option<CameraIntrinsics>,
    pub mapping: Option<MappingTable>,
}

/// What [`build_corpus`] did, displayable as a plain-text summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusSummary {
    pub written: u64,
    /// Frames present in the dataset layout but dropped: unreadable
    /// images, malformed annotation lines, or invalid palm depth.
    pub skipped: u64,
    pub subjects: u32,
}

impl fmt::Display for CorpusSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "wrote {} samples ({} skipped) from {} subjects",
            self.written, self.skipped, self.subjects
        )
    }
}

/// One frame's raw ingredients, produced by the per-dataset walkers.
struct RawFrame {
    subject: u32,
    depth: DepthImage,
    /// Camera-space millimeter annotations, before remapping.
    raw_joints: Vec<Point3<f64>>,
}

/// Streams a dataset directory into a corpus file.
///
/// Frames that cannot be read or normalized are skipped and counted, not
/// fatal; an empty layout yields an empty corpus. Frames are visited in a
/// deterministic sorted order, so rebuilding from the same tree gives a
/// byte-identical corpus.
pub fn build_corpus(
    dataset_dir: &Path,
    kind: DatasetKind,
    out_path: &Path,
    options: &BuildOptions,
) -> Result<CorpusSummary, PreprocError> {
    let crop = options.crop.unwrap_or_default();
    let intrinsics = options
        .intrinsics
        .unwrap_or_else(|| CameraIntrinsics::defaults_for(kind));
    intrinsics.validate()?;
    let mapping = options
        .mapping
        .clone()
        .unwrap_or_else(|| MappingTable::bundled(kind));

    let mut writer = CorpusWriter::create(out_path, &crop)?;
    let mut subjects = BTreeSet::new();
    let mut frame_id = 0u64;

    // Returns whether the frame made it into the corpus; the walkers
    // count the rejects along with frames they could not even read.
    let mut emit = |frame: RawFrame| -> Result<bool, PreprocError> {
        let tag = SourceTag {
            dataset: kind,
            subject: frame.subject,
            frame: frame_id,
        };
        frame_id += 1;
        let Ok(joints) = remap_joints(&frame.raw_joints, &mapping) else {
            return Ok(false);
        };
        // The canonical palm sits in slot 0 after remapping.
        let palm = joints[0];
        match crop_normalize(&frame.depth, &intrinsics, palm, &joints, &crop, tag) {
            Ok(sample) => {
                writer.append(&sample)?;
                subjects.insert(frame.subject);
                Ok(true)
            }
            Err(PreprocError::PalmDepth { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    };

    let skipped = match kind {
        DatasetKind::Icvl => walk_uvd_lines(
            &dataset_dir.join("labels.txt"),
            dataset_dir,
            16,
            ' ',
            &intrinsics,
            load_depth_png_luma16,
            &mut emit,
        )?,
        DatasetKind::Nyu => walk_uvd_lines(
            &dataset_dir.join("annotations.csv"),
            dataset_dir,
            36,
            ',',
            &intrinsics,
            load_depth_png_nyu,
            &mut emit,
        )?,
        DatasetKind::Msra2015 => walk_msra(dataset_dir, &mut emit)?,
    };
    drop(emit);

    let written = writer.finish()?;
    Ok(CorpusSummary {
        written,
        skipped,
        subjects: subjects.len() as u32,
    })
}

/// 16-bit grayscale PNG, depth in sensor units (ICVL).
fn load_depth_png_luma16(path: &Path) -> Result<DepthImage, PreprocError> {
    let img = image::open(path)?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|v| v as f32).collect();
    DepthImage::new(w, h, data)
}

/// RGB PNG with depth packed as `(green << 8) | blue` (NYU).
fn load_depth_png_nyu(path: &Path) -> Result<DepthImage, PreprocError> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| (((p[1] as u16) << 8) | p[2] as u16) as f32)
        .collect();
    DepthImage::new(w, h, data)
}

/// Shared walker for the ICVL and NYU layouts: one annotation file whose
/// lines carry an image path followed by `joints_per_line` (u, v, depth)
/// triples in pixel/sensor units. A missing annotation file is an empty
/// dataset. Returns the number of frames skipped: unparseable lines,
/// unreadable images, or frames the sink rejected.
fn walk_uvd_lines(
    annotation_file: &Path,
    dataset_dir: &Path,
    joints_per_line: usize,
    separator: char,
    intrinsics: &CameraIntrinsics,
    load_depth: fn(&Path) -> Result<DepthImage, PreprocError>,
    emit: &mut impl FnMut(RawFrame) -> Result<bool, PreprocError>,
) -> Result<u64, PreprocError> {
    let file = match File::open(annotation_file) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(0),
        Err(e) => return Err(e.into()),
    };
    let mut skipped = 0u64;
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line
            .split(separator)
            .map(str::trim)
            .filter(|s| !s.is_empty());
        let Some(rel_path) = fields.next() else {
            skipped += 1;
            continue;
        };
        let values: Option<Vec<f64>> = fields.map(|s| s.parse().ok()).collect();
        let raw_joints = match values {
            Some(v) if v.len() == 3 * joints_per_line => v
                .chunks_exact(3)
                .map(|uvd| {
                    intrinsics.back_project(uvd[0], uvd[1], uvd[2] * intrinsics.depth_unit_to_mm)
                })
                .collect::<Vec<_>>(),
            _ => {
                skipped += 1;
                continue;
            }
        };
        let depth = match load_depth(&dataset_dir.join(rel_path)) {
            Ok(d) => d,
            Err(PreprocError::Io(_)) | Err(PreprocError::Image(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        if !emit(RawFrame {
            subject: 0,
            depth,
            raw_joints,
        })? {
            skipped += 1;
        }
    }
    Ok(skipped)
}

/// MSRA-2015 layout: `P<k>` subject directories containing gesture
/// directories, each with a `joint.txt` (frame count, then 21 x/y/z mm
/// triples per line) and one `*_depth.bin` per frame: six little-endian
/// i32s (image width/height, crop left/top/right/bottom) followed by f32
/// depth for the crop region. Annotations with a negative depth axis are
/// mirrored into the +z camera frame. Returns the skipped-frame count.
fn walk_msra(
    dataset_dir: &Path,
    emit: &mut impl FnMut(RawFrame) -> Result<bool, PreprocError>,
) -> Result<u64, PreprocError> {
    let mut subject_dirs: Vec<(u32, PathBuf)> = Vec::new();
    let entries = match std::fs::read_dir(dataset_dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(0),
        Err(e) => return Err(e.into()),
    };
    for entry in entries {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_prefix('P').and_then(|s| s.parse().ok()) {
            subject_dirs.push((id, entry.path()));
        }
    }
    subject_dirs.sort();

    let mut skipped = 0u64;
    for (subject, subject_dir) in subject_dirs {
        let mut gesture_dirs: Vec<PathBuf> = std::fs::read_dir(&subject_dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().map(|t| t.is_dir()).unwrap_or(false))
            .map(|e| e.path())
            .collect();
        gesture_dirs.sort();
        for gesture_dir in gesture_dirs {
            let joint_file = gesture_dir.join("joint.txt");
            let text = match std::fs::read_to_string(&joint_file) {
                Ok(t) => t,
                Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
                Err(e) => return Err(e.into()),
            };
            let mut lines = text.lines();
            let declared: usize = lines
                .next()
                .and_then(|l| l.trim().parse().ok())
                .unwrap_or(0);
            let mut bins: Vec<PathBuf> = std::fs::read_dir(&gesture_dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| {
                    p.file_name()
                        .map(|n| n.to_string_lossy().ends_with("_depth.bin"))
                        .unwrap_or(false)
                })
                .collect();
            bins.sort();
            for (line, bin) in lines.take(declared).zip(bins) {
                let values: Option<Vec<f64>> = line
                    .split_whitespace()
                    .map(|s| s.parse().ok())
                    .collect();
                let raw_joints = match values {
                    Some(v) if v.len() == 3 * 21 => v
                        .chunks_exact(3)
                        .map(|xyz| {
                            if xyz[2] < 0.0 {
                                Point3::new(xyz[0], -xyz[1], -xyz[2])
                            } else {
                                Point3::new(xyz[0], xyz[1], xyz[2])
                            }
                        })
                        .collect::<Vec<_>>(),
                    _ => {
                        skipped += 1;
                        continue;
                    }
                };
                let depth = match load_msra_bin(&bin) {
                    Ok(d) => d,
                    Err(PreprocError::Io(_)) | Err(PreprocError::BadDepthImage(_)) => {
                        skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                if !emit(RawFrame {
                    subject,
                    depth,
                    raw_joints,
                })? {
                    skipped += 1;
                }
            }
        }
    }
    Ok(skipped)
}

fn load_msra_bin(path: &Path) -> Result<DepthImage, PreprocError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0i32; 6];
    for v in header.iter_mut() {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)?;
        *v = i32::from_le_bytes(buf);
    }
    let [width, height, left, top, right, bottom] = header;
    let ok = width > 0
        && height > 0
        && (0..=width).contains(&right)
        && (0..=height).contains(&bottom)
        && (0..right).contains(&left)
        && (0..bottom).contains(&top);
    if !ok {
        return Err(PreprocError::BadDepthImage(format!(
            "inconsistent bin header {header:?}"
        )));
    }
    let mut data = vec![0.0f32; (width * height) as usize];
    for row in top..bottom {
        for col in left..right {
            data[(row * width + col) as usize] = read_f32(&mut r)?;
        }
    }
    DepthImage::new(width as usize, height as usize, data)
}
