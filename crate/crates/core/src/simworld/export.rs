use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use super::render::{render_frame, render_right_frame, RenderedFrame};
use super::{generate_scene, SceneSpec, SimError, SyntheticScene};

/// Scene description stored at the root of an exported dataset.
pub const SCENE_FILE: &str = "scene.toml";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    seed: u64,
    spec: SceneSpec,
}

/// Nanosecond timestamp of `frame`.
pub fn timestamp_ns(scene: &SyntheticScene, frame: usize) -> u64 {
    (frame as f64 * 1e9 / scene.spec.rate_hz).round() as u64
}

fn draw(rendered: &RenderedFrame, width: u32, height: u32) -> GrayImage {
    let mut img = GrayImage::new(width, height);
    for (k, s) in rendered.features.keypoints.iter().zip(&rendered.features.scores) {
        let v = Luma([(s * 255.0).round().clamp(0.0, 255.0) as u8]);
        let (cx, cy) = (k.x.round() as i64, k.y.round() as i64);
        for y in cy - 1..=cy + 1 {
            for x in cx - 1..=cx + 1 {
                if x >= 0 && y >= 0 && (x as u32) < width && (y as u32) < height {
                    img.put_pixel(x as u32, y as u32, v);
                }
            }
        }
    }
    img
}

fn write_camera(scene: &SyntheticScene, dir: &Path, right: bool) -> Result<(), SimError> {
    let data = dir.join("data");
    fs::create_dir_all(&data)?;
    let mut csv = BufWriter::new(fs::File::create(dir.join("data.csv"))?);
    writeln!(csv, "#timestamp [ns],filename")?;
    let cam = scene.camera();
    for frame in 0..scene.poses.len() {
        let ns = timestamp_ns(scene, frame);
        let name = format!("{ns}.png");
        let rendered = if right { render_right_frame(scene, frame) } else { render_frame(scene, frame) };
        draw(&rendered, cam.width, cam.height)
            .save(data.join(&name))
            .map_err(|e| SimError::Format(format!("cannot write {name}: {e}")))?;
        writeln!(csv, "{ns},{name}")?;
    }
    csv.flush()?;
    Ok(())
}

/// Writes the scene as an EuRoC-layout dataset under `root`: camera manifests
/// and preview images, ground truth, and the scene file that lets the
/// synthetic backend regenerate every frame.
pub fn export_scene(scene: &SyntheticScene, root: &Path) -> Result<(), SimError> {
    let mav = root.join("mav0");
    write_camera(scene, &mav.join("cam0"), false)?;
    if scene.spec.stereo_baseline > 0.0 {
        write_camera(scene, &mav.join("cam1"), true)?;
    }
    let gt_dir = mav.join("state_groundtruth_estimate0");
    fs::create_dir_all(&gt_dir)?;
    let mut gt = BufWriter::new(fs::File::create(gt_dir.join("data.csv"))?);
    writeln!(gt, "#timestamp,p_RS_R_x [m],p_RS_R_y [m],p_RS_R_z [m],q_RS_w [],q_RS_x [],q_RS_y [],q_RS_z []")?;
    for (frame, pose) in scene.poses.iter().enumerate() {
        let c2w = pose.inverse();
        let (t, q) = (c2w.translation, c2w.rotation.quaternion());
        writeln!(
            gt,
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            timestamp_ns(scene, frame),
            t.x,
            t.y,
            t.z,
            q.w,
            q.i,
            q.j,
            q.k
        )?;
    }
    gt.flush()?;
    let file = SceneFile { seed: scene.seed, spec: scene.spec.clone() };
    let text = toml::to_string(&file).map_err(|e| SimError::Format(e.to_string()))?;
    fs::write(root.join(SCENE_FILE), text)?;
    Ok(())
}

/// Regenerates the scene recorded in `root`'s scene file.
pub fn load_scene_file(root: &Path) -> Result<SyntheticScene, SimError> {
    let path = root.join(SCENE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| SimError::Format(format!("{}: {e}", path.display())))?;
    let file: SceneFile = toml::from_str(&text).map_err(|e| SimError::Format(e.to_string()))?;
    generate_scene(&file.spec, file.seed)
}
