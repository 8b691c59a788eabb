//! On-disk formats and the sequence directory layout shared by every stage.
//!
//! ```text
//! <seq>/camera.json  footprint.json  grid.json  poses.csv
//! <seq>/clouds/000000.pts      raw scans, vehicle frame
//! <seq>/images/000000.png      RGB camera frames
//! <seq>/obstacles/000000.png   obstacle detections on the BEV grid (L8, 0/255)
//! <seq>/gt/000000.png          ground-truth labels (indexed)
//! <out>/bev/000000.png + .json, <out>/occupancy/000000.png
//! <out>/labels/000000.png + .json
//! <out>/costmaps/000000.png + .json (L16, value = round(T * 65535))
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autolabel::{Label, LabelMask, ObstacleMask};
use crate::bev::{BevGrid, GridSpec};
use crate::error::{Error, Result};
use crate::geometry::{FrameTag, PointCloud, Pose, RgbImage, Vec3};
use crate::online::TraversabilityMap;

pub const PTS_MAGIC: &[u8; 4] = b"TPTS";
const PTS_VERSION: u32 = 1;
const PTS_COLORED: u32 = 1;

pub fn frame_name(i: usize) -> String {
    format!("{i:06}")
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

const POSE_HEADER: [&str; 13] = [
    "timestamp", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "tx", "ty", "tz",
];

pub fn write_poses_csv(path: impl AsRef<Path>, poses: &[Pose]) -> Result<()> {
    let path = path.as_ref();
    let err = |e: csv::Error| Error::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(POSE_HEADER).map_err(err)?;
    for p in poses {
        let r = &p.rotation;
        let t = &p.translation;
        let row = [
            p.timestamp,
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.x,
            t.y,
            t.z,
        ];
        w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_poses_csv(path: impl AsRef<Path>) -> Result<Vec<Pose>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let header = r.headers().map_err(|e| Error::format(path, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != POSE_HEADER {
        return Err(Error::format(path, format!("expected header {}", POSE_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, format!("row {}: {e}", line + 1)))?;
        if v.len() != 13 {
            return Err(Error::format(path, format!("row {} has {} fields", line + 1, v.len())));
        }
        let rot = nalgebra::Matrix3::new(v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]);
        let pose = Pose::new(rot, Vec3::new(v[10], v[11], v[12]), v[0])
            .map_err(|e| Error::format(path, format!("row {}: {e}", line + 1)))?;
        out.push(pose);
    }
    Ok(out)
}

/// Point file: magic, version, flags, count, then little-endian f32 xyz per
/// point, then RGB bytes per point when the colored flag is set.
pub fn write_pts(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(path, e);
    w.write_all(PTS_MAGIC).map_err(io)?;
    w.write_all(&PTS_VERSION.to_le_bytes()).map_err(io)?;
    let flags = if cloud.is_colored() { PTS_COLORED } else { 0 };
    w.write_all(&flags.to_le_bytes()).map_err(io)?;
    w.write_all(&(cloud.len() as u64).to_le_bytes()).map_err(io)?;
    for p in &cloud.points {
        for v in [p.x, p.y, p.z] {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
        }
    }
    if let Some(colors) = &cloud.colors {
        for c in colors {
            w.write_all(c).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_pts(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut head = [0u8; 20];
    r.read_exact(&mut head).map_err(|_| Error::format(path, "truncated header"))?;
    if &head[..4] != PTS_MAGIC {
        return Err(Error::format(path, "not a point file"));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != PTS_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let flags = u32::from_le_bytes(head[8..12].try_into().unwrap());
    let count = u64::from_le_bytes(head[12..20].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    let colored = flags & PTS_COLORED != 0;
    let want = count * 12 + if colored { count * 3 } else { 0 };
    if body.len() != want {
        return Err(Error::format(path, format!("expected {want} payload bytes, found {}", body.len())));
    }
    let f = |i: usize| f32::from_le_bytes(body[i..i + 4].try_into().unwrap()) as f64;
    let points = (0..count).map(|k| Vec3::new(f(k * 12), f(k * 12 + 4), f(k * 12 + 8))).collect();
    let colors = colored.then(|| {
        let base = count * 12;
        (0..count).map(|k| [body[base + 3 * k], body[base + 3 * k + 1], body[base + 3 * k + 2]]).collect()
    });
    PointCloud::new(points, colors, FrameTag::Vehicle).map_err(|e| Error::format(path, e.to_string()))
}

fn png_encoder<'a, W: Write>(w: W, width: usize, height: usize, color: png::ColorType, depth: png::BitDepth) -> png::Encoder<'a, W> {
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    enc
}

fn write_png_with(path: &Path, enc: png::Encoder<'_, BufWriter<File>>, data: &[u8]) -> Result<()> {
    let mut w = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
    w.write_image_data(data).map_err(|e| Error::format(path, e.to_string()))?;
    w.finish().map_err(|e| Error::format(path, e.to_string()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn write_rgb_png(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let enc = png_encoder(create(path)?, width, height, png::ColorType::Rgb, png::BitDepth::Eight);
    write_png_with(path, enc, rgb)
}

pub fn write_gray8_png(path: impl AsRef<Path>, width: usize, height: usize, data: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let enc = png_encoder(create(path)?, width, height, png::ColorType::Grayscale, png::BitDepth::Eight);
    write_png_with(path, enc, data)
}

pub fn write_gray16_png(path: impl AsRef<Path>, width: usize, height: usize, data: &[u16]) -> Result<()> {
    let path = path.as_ref();
    let enc = png_encoder(create(path)?, width, height, png::ColorType::Grayscale, png::BitDepth::Sixteen);
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_be_bytes()).collect();
    write_png_with(path, enc, &bytes)
}

/// Decoded PNG without color conversion: indexed images keep their indices.
pub struct RawPng {
    pub width: usize,
    pub height: usize,
    pub color: png::ColorType,
    pub depth: png::BitDepth,
    pub data: Vec<u8>,
}

pub fn read_png(path: impl AsRef<Path>) -> Result<RawPng> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(f));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::format(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e.to_string()))?;
    buf.truncate(info.buffer_size());
    Ok(RawPng {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data: buf,
    })
}

fn expect_kind(path: &Path, img: &RawPng, color: png::ColorType, depth: png::BitDepth) -> Result<()> {
    if img.color != color || img.depth != depth {
        return Err(Error::format(
            path,
            format!("expected {color:?}/{depth:?}, found {:?}/{:?}", img.color, img.depth),
        ));
    }
    Ok(())
}

pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = read_png(path)?;
    expect_kind(path, &img, png::ColorType::Rgb, png::BitDepth::Eight)?;
    Ok(RgbImage {
        width: img.width as u32,
        height: img.height as u32,
        data: img.data,
    })
}

pub fn read_gray8_png(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    let img = read_png(path)?;
    expect_kind(path, &img, png::ColorType::Grayscale, png::BitDepth::Eight)?;
    Ok((img.width, img.height, img.data))
}

pub fn read_gray16_png(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u16>)> {
    let path = path.as_ref();
    let img = read_png(path)?;
    expect_kind(path, &img, png::ColorType::Grayscale, png::BitDepth::Sixteen)?;
    let data = img.data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok((img.width, img.height, data))
}

pub fn write_image(path: impl AsRef<Path>, image: &RgbImage) -> Result<()> {
    write_rgb_png(path, image.width as usize, image.height as usize, &image.data)
}

/// Indexed PNG: 0 unlabeled (gray), 1 traversable (green), 2 untraversable (red).
pub fn write_label_png(path: impl AsRef<Path>, mask: &LabelMask) -> Result<()> {
    let path = path.as_ref();
    let mut enc = png_encoder(
        create(path)?,
        mask.spec.width_cells,
        mask.spec.height_cells,
        png::ColorType::Indexed,
        png::BitDepth::Eight,
    );
    enc.set_palette(vec![128, 128, 128, 0, 200, 0, 220, 0, 0]);
    let data: Vec<u8> = mask.labels.iter().map(|l| *l as u8).collect();
    write_png_with(path, enc, &data)
}

pub fn read_label_png(path: impl AsRef<Path>, resolution: f64) -> Result<LabelMask> {
    let path = path.as_ref();
    let img = read_png(path)?;
    if img.depth != png::BitDepth::Eight || !matches!(img.color, png::ColorType::Indexed | png::ColorType::Grayscale) {
        return Err(Error::format(path, "labels must be 8-bit indexed or grayscale"));
    }
    let labels = img
        .data
        .iter()
        .map(|v| Label::from_u8(*v).ok_or_else(|| Error::format(path, format!("label value {v}"))))
        .collect::<Result<Vec<_>>>()?;
    let spec = GridSpec::new(img.width, img.height, resolution).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(LabelMask { spec, labels })
}

pub fn write_mask_png(path: impl AsRef<Path>, spec: &GridSpec, cells: &[bool]) -> Result<()> {
    let data: Vec<u8> = cells.iter().map(|b| if *b { 255 } else { 0 }).collect();
    write_gray8_png(path, spec.width_cells, spec.height_cells, &data)
}

pub fn read_mask_png(path: impl AsRef<Path>, spec: &GridSpec) -> Result<Vec<bool>> {
    let path = path.as_ref();
    let (w, h, data) = read_gray8_png(path)?;
    if (w, h) != (spec.width_cells, spec.height_cells) {
        return Err(Error::format(
            path,
            format!("mask is {w}x{h}, grid is {}x{}", spec.width_cells, spec.height_cells),
        ));
    }
    Ok(data.into_iter().map(|v| v >= 128).collect())
}

pub fn read_obstacle_mask(path: impl AsRef<Path>, spec: &GridSpec, timestamp: f64) -> Result<ObstacleMask> {
    Ok(ObstacleMask {
        spec: *spec,
        cells: read_mask_png(path, spec)?,
        timestamp,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BevMeta {
    pub timestamp: f64,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    /// Vehicle-to-odometry transform, row-major 4x4.
    pub pose: [f64; 16],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMapMeta {
    pub timestamp: f64,
    pub queue_size: usize,
    pub queue_version: u64,
    pub cold_start: bool,
}

pub fn cost_to_u16(values: &[f32]) -> Vec<u16> {
    values.iter().map(|v| (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16).collect()
}

/// Paths of one sequence (or stage output) directory.
#[derive(Debug, Clone)]
pub struct SequenceDir {
    pub root: PathBuf,
}

impl SequenceDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn camera(&self) -> PathBuf {
        self.file("camera.json")
    }

    pub fn footprint(&self) -> PathBuf {
        self.file("footprint.json")
    }

    pub fn grid(&self) -> PathBuf {
        self.file("grid.json")
    }

    pub fn poses(&self) -> PathBuf {
        self.file("poses.csv")
    }

    pub fn frame(&self, sub: &str, i: usize, ext: &str) -> PathBuf {
        self.root.join(sub).join(format!("{}.{ext}", frame_name(i)))
    }

    /// Creates the root and the listed subdirectories.
    pub fn create(&self, subdirs: &[&str]) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        for s in subdirs {
            let p = self.root.join(s);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    /// Requires `path` to exist, reporting it as an I/O error otherwise.
    pub fn require(path: &Path) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "missing file")))
        }
    }

    pub fn write_bev(&self, i: usize, bev: &BevGrid, pose: &Pose) -> Result<()> {
        let flat: Vec<u8> = bev.rgb.iter().flatten().copied().collect();
        write_rgb_png(self.frame("bev", i, "png"), bev.spec.width_cells, bev.spec.height_cells, &flat)?;
        write_mask_png(self.frame("occupancy", i, "png"), &bev.spec, &bev.occupancy)?;
        let h = pose.to_homogeneous();
        let mut rows = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                rows[r * 4 + c] = h[(r, c)];
            }
        }
        write_json(
            self.frame("bev", i, "json"),
            &BevMeta {
                timestamp: bev.timestamp,
                resolution: bev.spec.resolution,
                width: bev.spec.width_cells,
                height: bev.spec.height_cells,
                pose: rows,
            },
        )
    }

    pub fn read_bev(&self, i: usize) -> Result<BevGrid> {
        let meta_path = self.frame("bev", i, "json");
        let meta: BevMeta = read_json(&meta_path)?;
        let spec = GridSpec::new(meta.width, meta.height, meta.resolution).map_err(|e| Error::format(&meta_path, e.to_string()))?;
        let img_path = self.frame("bev", i, "png");
        let img = read_rgb_png(&img_path)?;
        if (img.width as usize, img.height as usize) != (spec.width_cells, spec.height_cells) {
            return Err(Error::format(&img_path, "BEV image does not match its sidecar"));
        }
        let rgb = img.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let occupancy = read_mask_png(self.frame("occupancy", i, "png"), &spec)?;
        Ok(BevGrid {
            spec,
            rgb,
            occupancy,
            timestamp: meta.timestamp,
        })
    }

    pub fn write_costmap(&self, i: usize, map: &TraversabilityMap, meta: &CostMapMeta) -> Result<()> {
        write_gray16_png(self.frame("costmaps", i, "png"), map.width, map.height, &cost_to_u16(&map.values))?;
        write_json(self.frame("costmaps", i, "json"), meta)
    }

    pub fn read_costmap(&self, i: usize) -> Result<TraversabilityMap> {
        let (w, h, data) = read_gray16_png(self.frame("costmaps", i, "png"))?;
        let meta: CostMapMeta = read_json(self.frame("costmaps", i, "json"))?;
        Ok(TraversabilityMap {
            height: h,
            width: w,
            values: data.into_iter().map(|v| v as f32 / 65535.0).collect(),
            cold_start: meta.cold_start,
        })
    }

    /// Number of consecutive frames present in `sub` with extension `ext`.
    pub fn count_frames(&self, sub: &str, ext: &str) -> usize {
        (0..).take_while(|&i| self.frame(sub, i, ext).exists()).count()
    }
}
