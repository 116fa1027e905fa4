//! Versioned episode files, dataset normalization statistics and chunked training samples.
//!
//! Episode container (`.cpak`), all integers little-endian:
//!
//! ```text
//! "CPAK" | version u16 | header_len u32 | header JSON (UTF-8)
//!        | stride u32 | count u32 | count × stride f32 | crc32 u32
//! ```
//!
//! The CRC covers every preceding byte. Each record holds `t`, a flag word and, per arm,
//! 25 observation values, 19 action values and the commanded stiffness mode, followed by
//! one image frame index per camera. Images live in a sidecar `.cpim` file:
//!
//! ```text
//! "CPIM" | version u16 | cameras u32 | width u32 | height u32 | frames u32
//!        | cameras × frames × (height·width·3) bytes | crc32 u32
//! ```

mod chunks;
mod norm;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::control::{ControllerTarget, StiffnessMode};
use crate::error::{Error, Result};
use crate::geometry::{quat_to_rotvec, rotvec_to_quat, CholeskyVector, Pose, StiffnessSpec, Wrench};
use crate::sim::{Image, Observation};

pub use chunks::{load_chunks, ChunkSample};
pub use norm::{compute_norm_stats, DimStats, NormStats};

pub const EPISODE_MAGIC: &[u8; 4] = b"CPAK";
pub const IMAGE_MAGIC: &[u8; 4] = b"CPIM";
pub const FORMAT_VERSION: u16 = 1;
/// Action values per arm: position, rotation vector, gripper, Cholesky stiffness.
pub const ACTION_DIM: usize = 19;
/// Observation values per arm kept in a record.
pub const ARM_OBS_DIM: usize = 25;
/// Policy observation features per arm: position, rotation vector, gripper, wrench.
pub const OBS_FEATURES: usize = 13;
/// Of which the trailing six are the wrench.
pub const WRENCH_FEATURES: usize = 6;
const ARM_RECORD_DIM: usize = ARM_OBS_DIM + ACTION_DIM + 1;

/// Record flag: the step missed its deadline by more than half a period.
pub const FLAG_UNDERRUN: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoreConfig {
    /// Recording rate (Hz).
    pub record_rate: f64,
    /// Cutoff of the one-pole wrench filter (Hz).
    pub wrench_cutoff: f64,
    /// Floor applied to standard deviations in the normalization statistics.
    pub std_floor: f64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            record_rate: 20.0,
            wrench_cutoff: 10.0,
            std_floor: 1e-2,
        }
    }
}

impl StoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.record_rate > 0.0) || !(self.wrench_cutoff > 0.0) || !(self.std_floor > 0.0) {
            return Err(Error::config(
                "store: record_rate, wrench_cutoff and std_floor must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub format_version: u16,
    pub task: String,
    pub seed: u64,
    pub arms: usize,
    pub arm_labels: Vec<String>,
    pub cameras: Vec<String>,
    pub image_width: usize,
    pub image_height: usize,
    pub record_rate: f64,
    pub control_rate: f64,
    pub physics_rate: f64,
    pub mode_pairs: Vec<(StiffnessMode, StiffnessMode)>,
    pub duration: f64,
    /// "scripted", "teleop" or "policy".
    pub source: String,
    pub success: bool,
    pub aborted: bool,
    pub metric: f64,
    pub peak_force: f64,
}

impl EpisodeHeader {
    pub fn stride(&self) -> usize {
        record_stride(self.arms, self.cameras.len())
    }
}

pub fn record_stride(arms: usize, cameras: usize) -> usize {
    2 + ARM_RECORD_DIM * arms + cameras
}

/// One arm's slice of a record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmRecord {
    pub ee_position: [f32; 3],
    pub ee_rotvec: [f32; 3],
    /// Filtered wrench in the flange frame.
    pub wrench: [f32; 6],
    pub gripper: f32,
    /// Active stiffness of the controller as a Cholesky vector.
    pub stiffness: [f32; 12],
    pub action: [f32; ACTION_DIM],
    pub mode: StiffnessMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f32,
    pub flags: u32,
    pub arms: Vec<ArmRecord>,
    /// Frame index into each camera's image track.
    pub frames: Vec<u32>,
}

fn mode_code(m: StiffnessMode) -> f32 {
    match m {
        StiffnessMode::Low => 0.0,
        StiffnessMode::Mid => 1.0,
        StiffnessMode::High => 2.0,
    }
}

fn mode_from_code(v: f32) -> Result<StiffnessMode> {
    match v as i32 {
        0 => Ok(StiffnessMode::Low),
        1 => Ok(StiffnessMode::Mid),
        2 => Ok(StiffnessMode::High),
        _ => Err(Error::format(format!("invalid stiffness mode code {v}"))),
    }
}

impl StepRecord {
    pub fn write_floats(&self, out: &mut Vec<f32>) {
        out.push(self.t);
        out.push(f32::from_bits(self.flags));
        for a in &self.arms {
            out.extend_from_slice(&a.ee_position);
            out.extend_from_slice(&a.ee_rotvec);
            out.extend_from_slice(&a.wrench);
            out.push(a.gripper);
            out.extend_from_slice(&a.stiffness);
            out.extend_from_slice(&a.action);
            out.push(mode_code(a.mode));
        }
        out.extend(self.frames.iter().map(|&f| f32::from_bits(f)));
    }

    pub fn from_floats(v: &[f32], arms: usize, cameras: usize) -> Result<Self> {
        if v.len() != record_stride(arms, cameras) {
            return Err(Error::format(format!(
                "record has {} values, expected {}",
                v.len(),
                record_stride(arms, cameras)
            )));
        }
        let copy = |s: &[f32], out: &mut [f32]| out.copy_from_slice(s);
        let mut recs = Vec::with_capacity(arms);
        for a in 0..arms {
            let b = 2 + a * ARM_RECORD_DIM;
            let mut r = ArmRecord {
                ee_position: [0.0; 3],
                ee_rotvec: [0.0; 3],
                wrench: [0.0; 6],
                gripper: v[b + 12],
                stiffness: [0.0; 12],
                action: [0.0; ACTION_DIM],
                mode: mode_from_code(v[b + ARM_RECORD_DIM - 1])?,
            };
            copy(&v[b..b + 3], &mut r.ee_position);
            copy(&v[b + 3..b + 6], &mut r.ee_rotvec);
            copy(&v[b + 6..b + 12], &mut r.wrench);
            copy(&v[b + 13..b + 25], &mut r.stiffness);
            copy(&v[b + 25..b + 44], &mut r.action);
            recs.push(r);
        }
        let fb = 2 + arms * ARM_RECORD_DIM;
        Ok(Self {
            t: v[0],
            flags: v[1].to_bits(),
            arms: recs,
            frames: v[fb..].iter().map(|f| f.to_bits()).collect(),
        })
    }

    /// Concatenated action vectors of all arms (19 per arm).
    pub fn action(&self) -> Vec<f64> {
        self.arms
            .iter()
            .flat_map(|a| a.action.iter().map(|&v| v as f64))
            .collect()
    }

    /// Policy observation features of all arms; the wrench is dropped when `with_ft` is false.
    pub fn observation(&self, with_ft: bool) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.arms.len() * OBS_FEATURES);
        for a in &self.arms {
            out.extend(a.ee_position.iter().map(|&v| v as f64));
            out.extend(a.ee_rotvec.iter().map(|&v| v as f64));
            out.push(a.gripper as f64);
            if with_ft {
                out.extend(a.wrench.iter().map(|&v| v as f64));
            }
        }
        out
    }
}

/// Policy observation features for a live observation, rounded through `f32` exactly as
/// recorded episodes store them, so training and inference see identical inputs.
pub fn observation_features(obs: &Observation, wrenches: &[Wrench], with_ft: bool) -> Result<Vec<f64>> {
    if wrenches.len() != obs.arms.len() {
        return Err(Error::config("one wrench per arm is required"));
    }
    let r = |v: f64| v as f32 as f64;
    let mut out = Vec::with_capacity(obs.arms.len() * OBS_FEATURES);
    for (a, w) in obs.arms.iter().zip(wrenches) {
        out.extend(a.ee_pose.position.iter().map(|&v| r(v)));
        out.extend(quat_to_rotvec(&a.ee_pose.orientation).iter().map(|&v| r(v)));
        out.push(r(a.gripper));
        if with_ft {
            out.extend(w.to_array().iter().map(|&v| r(v)));
        }
    }
    Ok(out)
}

/// Flattens a controller target to `[position, rotation vector, gripper, Cholesky]`.
pub fn action_from_target(target: &ControllerTarget) -> Result<[f64; ACTION_DIM]> {
    let mut out = [0.0; ACTION_DIM];
    let p = target.pose.position;
    let r = quat_to_rotvec(&target.pose.orientation);
    out[..3].copy_from_slice(p.as_slice());
    out[3..6].copy_from_slice(r.as_slice());
    out[6] = target.gripper;
    out[7..].copy_from_slice(target.stiffness.encode()?.as_slice());
    Ok(out)
}

/// Inverse of [`action_from_target`]; any finite vector maps to a valid target because the
/// stiffness goes through the floored Cholesky decoder and the gripper is clamped.
pub fn target_from_action(action: &[f64]) -> Result<ControllerTarget> {
    if action.len() != ACTION_DIM {
        return Err(Error::config(format!(
            "action vector needs {ACTION_DIM} values, got {}",
            action.len()
        )));
    }
    if action.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite action".into()));
    }
    let pose = Pose::new(
        Vector3::new(action[0], action[1], action[2]),
        rotvec_to_quat(&Vector3::new(action[3], action[4], action[5])),
    );
    let stiffness = CholeskyVector::from_slice(&action[7..])?.decode();
    Ok(ControllerTarget::new(pose, stiffness, action[6].clamp(0.0, 1.0)))
}

/// One-pole low-pass filter for the wrench fed to recordings and policies.
#[derive(Debug, Clone)]
pub struct WrenchFilter {
    alpha: f64,
    state: Option<Wrench>,
}

impl WrenchFilter {
    pub fn new(cutoff_hz: f64, dt: f64) -> Self {
        let tau = 1.0 / (2.0 * std::f64::consts::PI * cutoff_hz);
        Self {
            alpha: dt / (dt + tau),
            state: None,
        }
    }

    pub fn update(&mut self, w: &Wrench) -> Wrench {
        let next = match self.state {
            None => *w,
            Some(s) => s + (*w - s) * self.alpha,
        };
        self.state = Some(next);
        next
    }

    pub fn value(&self) -> Wrench {
        self.state.unwrap_or_else(Wrench::zero)
    }
}

/// Per-camera image frames kept alongside an episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageTrack {
    pub width: usize,
    pub height: usize,
    /// `frames[camera][index]`, each `height·width·3` bytes.
    pub frames: Vec<Vec<Vec<u8>>>,
}

impl ImageTrack {
    pub fn new(cameras: usize, width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            frames: vec![Vec::new(); cameras],
        }
    }

    pub fn push(&mut self, images: &[Image]) -> Result<Vec<u32>> {
        if images.len() != self.frames.len() {
            return Err(Error::config(format!(
                "expected {} camera images, got {}",
                self.frames.len(),
                images.len()
            )));
        }
        let mut idx = Vec::with_capacity(images.len());
        for (track, img) in self.frames.iter_mut().zip(images) {
            if img.width != self.width || img.height != self.height {
                return Err(Error::config("image size differs from the track size"));
            }
            idx.push(track.len() as u32);
            track.push(img.data.clone());
        }
        Ok(idx)
    }

    pub fn image(&self, camera: usize, frame: u32) -> Result<Image> {
        let data = self
            .frames
            .get(camera)
            .and_then(|t| t.get(frame as usize))
            .ok_or_else(|| Error::format(format!("no frame {frame} for camera {camera}")))?;
        Ok(Image {
            width: self.width,
            height: self.height,
            data: data.clone(),
        })
    }

    fn to_bytes(&self) -> Vec<u8> {
        let count = self.frames.first().map_or(0, |f| f.len());
        let mut out = Vec::new();
        out.extend_from_slice(IMAGE_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for v in [self.frames.len(), self.width, self.height, count] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for track in &self.frames {
            for f in track {
                out.extend_from_slice(f);
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let body = verify_crc(bytes, "image track")?;
        let mut r = Reader::new(body);
        if r.take(4)? != IMAGE_MAGIC {
            return Err(Error::format("image track has wrong magic bytes"));
        }
        check_version(r.u16()?)?;
        let cams = r.u32()? as usize;
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let count = r.u32()? as usize;
        let size = width * height * 3;
        let mut frames = Vec::with_capacity(cams);
        for _ in 0..cams {
            let mut track = Vec::with_capacity(count);
            for _ in 0..count {
                track.push(r.take(size)?.to_vec());
            }
            frames.push(track);
        }
        r.finish()?;
        Ok(Self {
            width,
            height,
            frames,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub header: EpisodeHeader,
    pub steps: Vec<StepRecord>,
    pub images: ImageTrack,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("file is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format("trailing bytes after the last record"));
        }
        Ok(())
    }
}

fn verify_crc<'a>(bytes: &'a [u8], what: &str) -> Result<&'a [u8]> {
    if bytes.len() < 4 {
        return Err(Error::format(format!("{what} is truncated")));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::format(format!("{what} checksum mismatch")));
    }
    Ok(body)
}

fn check_version(v: u16) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::format(format!(
            "unsupported format version {v} (expected {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

/// Sidecar image path for an episode path.
pub fn image_path(episode: &Path) -> PathBuf {
    episode.with_extension("cpim")
}

impl Episode {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let stride = self.header.stride();
        let mut floats = Vec::with_capacity(stride * self.steps.len());
        for s in &self.steps {
            let before = floats.len();
            s.write_floats(&mut floats);
            if floats.len() - before != stride {
                return Err(Error::format("step record does not match the header layout"));
            }
        }
        let mut out = Vec::with_capacity(18 + header.len() + floats.len() * 4);
        out.extend_from_slice(EPISODE_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(stride as u32).to_le_bytes());
        out.extend_from_slice(&(self.steps.len() as u32).to_le_bytes());
        for f in floats {
            out.extend_from_slice(&f.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], images: ImageTrack) -> Result<Self> {
        let body = verify_crc(bytes, "episode")?;
        let mut r = Reader::new(body);
        if r.take(4)? != EPISODE_MAGIC {
            return Err(Error::format("episode has wrong magic bytes"));
        }
        check_version(r.u16()?)?;
        let hlen = r.u32()? as usize;
        let header: EpisodeHeader = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| Error::format(format!("bad episode header: {e}")))?;
        let stride = r.u32()? as usize;
        if stride != header.stride() {
            return Err(Error::format(format!(
                "record stride {stride} does not match header ({})",
                header.stride()
            )));
        }
        let count = r.u32()? as usize;
        let mut steps = Vec::with_capacity(count);
        let mut buf = vec![0f32; stride];
        for _ in 0..count {
            let raw = r.take(stride * 4)?;
            for (dst, chunk) in buf.iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().expect("four bytes"));
            }
            steps.push(StepRecord::from_floats(&buf, header.arms, header.cameras.len())?);
        }
        r.finish()?;
        Ok(Self {
            header,
            steps,
            images,
        })
    }

    /// Writes the episode and its image sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)?;
        write_atomic(&image_path(path), &self.images.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let images = match fs::read(image_path(path)) {
            Ok(b) => ImageTrack::from_bytes(&b)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => ImageTrack::default(),
            Err(e) => return Err(e.into()),
        };
        Self::from_bytes(&fs::read(path)?, images)
    }

    pub fn action_dim(&self) -> usize {
        ACTION_DIM * self.header.arms
    }

    /// Line-delimited text rendering for inspection.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# {}\n",
            serde_json::to_string(&self.header).expect("header serializes")
        ));
        for s in &self.steps {
            let mut fields = vec![format!("t={:.3}", s.t), format!("flags={}", s.flags)];
            for (i, a) in s.arms.iter().enumerate() {
                let list = |v: &[f32]| {
                    v.iter()
                        .map(|x| format!("{x:.5}"))
                        .collect::<Vec<_>>()
                        .join(",")
                };
                fields.push(format!("arm{i}.pos=[{}]", list(&a.ee_position)));
                fields.push(format!("arm{i}.rot=[{}]", list(&a.ee_rotvec)));
                fields.push(format!("arm{i}.wrench=[{}]", list(&a.wrench)));
                fields.push(format!("arm{i}.gripper={:.4}", a.gripper));
                fields.push(format!("arm{i}.k=[{}]", list(&a.stiffness)));
                fields.push(format!("arm{i}.action=[{}]", list(&a.action)));
                fields.push(format!("arm{i}.mode={}", a.mode));
            }
            if !s.frames.is_empty() {
                let f: Vec<String> = s.frames.iter().map(|f| f.to_string()).collect();
                fields.push(format!("frames=[{}]", f.join(",")));
            }
            out.push_str(&fields.join(" "));
            out.push('\n');
        }
        out
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Episode files (`*.cpak`) in a directory, sorted by name.
pub fn episode_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "cpak"))
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Episode>> {
    let paths = episode_paths(dir)?;
    if paths.is_empty() {
        return Err(Error::config(format!("no episodes in {}", dir.display())));
    }
    paths.iter().map(|p| Episode::read(p)).collect()
}

/// Builds an episode record by record at the configured rate.
#[derive(Debug, Clone)]
pub struct EpisodeRecorder {
    pub episode: Episode,
    period: f64,
}

impl EpisodeRecorder {
    pub fn new(header: EpisodeHeader) -> Result<Self> {
        if !(header.record_rate > 0.0) {
            return Err(Error::config("record rate must be positive"));
        }
        let images = ImageTrack::new(header.cameras.len(), header.image_width, header.image_height);
        Ok(Self {
            period: 1.0 / header.record_rate,
            episode: Episode {
                header,
                steps: Vec::new(),
                images,
            },
        })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Appends one step. `wrenches` are the filtered flange-frame wrenches,
    /// `targets` the commands in force for this step, `modes` the commanded modes.
    /// `lateness` is how far past its deadline the step was taken (s).
    pub fn record_step(
        &mut self,
        obs: &Observation,
        wrenches: &[Wrench],
        targets: &[ControllerTarget],
        modes: &[StiffnessMode],
        lateness: f64,
    ) -> Result<()> {
        let arms = self.episode.header.arms;
        if obs.arms.len() != arms || wrenches.len() != arms || targets.len() != arms || modes.len() != arms {
            return Err(Error::config(format!("recorder expects {arms} arms")));
        }
        let mut recs = Vec::with_capacity(arms);
        for i in 0..arms {
            let a = &obs.arms[i];
            let action = action_from_target(&targets[i])?;
            let k = a.stiffness.unwrap_or_else(|| modes[i].spec());
            let f = |v: &[f64]| -> Vec<f32> { v.iter().map(|&x| x as f32).collect() };
            let mut r = ArmRecord {
                ee_position: [0.0; 3],
                ee_rotvec: [0.0; 3],
                wrench: [0.0; 6],
                gripper: a.gripper as f32,
                stiffness: [0.0; 12],
                action: [0.0; ACTION_DIM],
                mode: modes[i],
            };
            r.ee_position.copy_from_slice(&f(a.ee_pose.position.as_slice()));
            r.ee_rotvec.copy_from_slice(&f(quat_to_rotvec(&a.ee_pose.orientation).as_slice()));
            r.wrench.copy_from_slice(&f(&wrenches[i].to_array()));
            r.stiffness.copy_from_slice(&f(StiffnessSpec::encode(&k)?.as_slice()));
            r.action.copy_from_slice(&f(&action));
            recs.push(r);
        }
        let frames = if self.episode.header.cameras.is_empty() {
            Vec::new()
        } else {
            self.episode.images.push(&obs.images)?
        };
        let flags = if lateness > 0.5 * self.period {
            FLAG_UNDERRUN
        } else {
            0
        };
        self.episode.steps.push(StepRecord {
            t: obs.time as f32,
            flags,
            arms: recs,
            frames,
        });
        Ok(())
    }

    pub fn finish(mut self, success: bool, aborted: bool, metric: f64, peak_force: f64) -> Episode {
        self.episode.header.success = success;
        self.episode.header.aborted = aborted;
        self.episode.header.metric = metric;
        self.episode.header.peak_force = peak_force;
        self.episode
    }
}

#[cfg(test)]
mod tests;
