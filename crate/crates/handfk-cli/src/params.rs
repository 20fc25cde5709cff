//! Plain-text parameter file formats: one value per line under a header
//! naming the payload and its count, `#` comments and blank lines
//! ignored. Values are printed with Rust's shortest round-trip float
//! formatting, so write followed by parse is exact.

use handfk::skeleton::{
    JointSet, PoseVector, ScaleMode, ScaleVector, COORD_COUNT, DOF_COUNT, JOINT_COUNT,
};
use handfk::synth::SynthSample;

/// Header line plus the bare numeric lines of a file.
fn split_header(text: &str, path_like: &str) -> Result<(Vec<String>, Vec<f64>), String> {
    let mut header: Option<Vec<String>> = None;
    let mut values = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if header.is_none() {
            header = Some(body.split_whitespace().map(str::to_owned).collect());
            continue;
        }
        let value: f64 = body
            .parse()
            .map_err(|_| format!("{path_like}:{}: expected a number, got {body:?}", line_no + 1))?;
        values.push(value);
    }
    let header = header.ok_or_else(|| format!("{path_like}: missing header line"))?;
    Ok((header, values))
}

fn expect_count(
    kind: &str,
    declared: usize,
    per_item: usize,
    values: &[f64],
    path_like: &str,
) -> Result<(), String> {
    if values.len() != declared * per_item {
        return Err(format!(
            "{path_like}: {kind} header declares {declared}, which needs {} values, found {}",
            declared * per_item,
            values.len()
        ));
    }
    Ok(())
}

pub fn write_pose(theta: &PoseVector) -> String {
    let mut out = format!("pose {DOF_COUNT}\n");
    for v in theta.as_slice() {
        out.push_str(&format!("{v}\n"));
    }
    out
}

pub fn parse_pose(text: &str, path_like: &str) -> Result<PoseVector, String> {
    let (header, values) = split_header(text, path_like)?;
    match header.as_slice() {
        [kind, count] if kind == "pose" && count == &DOF_COUNT.to_string() => {}
        _ => {
            return Err(format!(
                "{path_like}: expected header \"pose {DOF_COUNT}\", got {:?}",
                header.join(" ")
            ))
        }
    }
    expect_count("pose", DOF_COUNT, 1, &values, path_like)?;
    let mut theta = PoseVector::zeros();
    theta.0.copy_from_slice(&values);
    Ok(theta)
}

pub fn write_scales(s: &ScaleVector) -> String {
    let mut out = format!("scale {} {}\n", s.mode().name(), s.mode().param_count());
    for v in s.values() {
        out.push_str(&format!("{v}\n"));
    }
    out
}

pub fn parse_scales(text: &str, path_like: &str) -> Result<ScaleVector, String> {
    let (header, values) = split_header(text, path_like)?;
    let (mode_name, declared) = match header.as_slice() {
        [kind, mode, count] if kind == "scale" => (mode.clone(), count.clone()),
        _ => {
            return Err(format!(
                "{path_like}: expected header \"scale <mode> <count>\", got {:?}",
                header.join(" ")
            ))
        }
    };
    let mode = ScaleMode::from_name(&mode_name)
        .ok_or_else(|| format!("{path_like}: unknown scale mode {mode_name:?}"))?;
    if declared != mode.param_count().to_string() {
        return Err(format!(
            "{path_like}: mode {mode_name} expects count {}, header says {declared}",
            mode.param_count()
        ));
    }
    expect_count("scale", mode.param_count(), 1, &values, path_like)?;
    ScaleVector::new(mode, values).map_err(|e| format!("{path_like}: {e}"))
}

pub fn write_joints(joints: &JointSet) -> String {
    let mut out = format!("joints {JOINT_COUNT}\n");
    for v in joints.to_flat() {
        out.push_str(&format!("{v}\n"));
    }
    out
}

pub fn parse_joints(text: &str, path_like: &str) -> Result<JointSet, String> {
    let (header, values) = split_header(text, path_like)?;
    match header.as_slice() {
        [kind, count] if kind == "joints" && count == &JOINT_COUNT.to_string() => {}
        _ => {
            return Err(format!(
                "{path_like}: expected header \"joints {JOINT_COUNT}\", got {:?}",
                header.join(" ")
            ))
        }
    }
    expect_count("joints", 1, COORD_COUNT, &values, path_like)?;
    let mut flat = [0.0; COORD_COUNT];
    flat.copy_from_slice(&values);
    JointSet::from_flat(&flat).ok_or_else(|| format!("{path_like}: non-finite joint value"))
}

pub fn write_annotations(frames: &[JointSet]) -> String {
    let mut out = format!("annotations {}\n", frames.len());
    for joints in frames {
        for v in joints.to_flat() {
            out.push_str(&format!("{v}\n"));
        }
    }
    out
}

pub fn parse_annotations(text: &str, path_like: &str) -> Result<Vec<JointSet>, String> {
    let (header, values) = split_header(text, path_like)?;
    let declared: usize = match header.as_slice() {
        [kind, count] if kind == "annotations" => count
            .parse()
            .map_err(|_| format!("{path_like}: bad frame count {count:?}"))?,
        _ => {
            return Err(format!(
                "{path_like}: expected header \"annotations <n>\", got {:?}",
                header.join(" ")
            ))
        }
    };
    expect_count("annotations", declared, COORD_COUNT, &values, path_like)?;
    let mut frames = Vec::with_capacity(declared);
    for chunk in values.chunks_exact(COORD_COUNT) {
        let mut flat = [0.0; COORD_COUNT];
        flat.copy_from_slice(chunk);
        let joints = JointSet::from_flat(&flat)
            .ok_or_else(|| format!("{path_like}: non-finite joint value"))?;
        frames.push(joints);
    }
    Ok(frames)
}

/// Synthetic sample sets: per sample the pose values, then the scale
/// components, then the 48 joint coordinates.
pub fn write_synth_samples(samples: &[SynthSample], mode: ScaleMode) -> String {
    let mut out = format!("synth {} {}\n", mode.name(), samples.len());
    for sample in samples {
        for v in sample.theta.as_slice() {
            out.push_str(&format!("{v}\n"));
        }
        for v in sample.scales.values() {
            out.push_str(&format!("{v}\n"));
        }
        for v in sample.joints.to_flat() {
            out.push_str(&format!("{v}\n"));
        }
    }
    out
}

pub fn parse_synth_samples(
    text: &str,
    path_like: &str,
) -> Result<(ScaleMode, Vec<SynthSample>), String> {
    let (header, values) = split_header(text, path_like)?;
    let (mode, declared) = match header.as_slice() {
        [kind, mode, count] if kind == "synth" => {
            let mode = ScaleMode::from_name(mode)
                .ok_or_else(|| format!("{path_like}: unknown scale mode {mode:?}"))?;
            let declared: usize = count
                .parse()
                .map_err(|_| format!("{path_like}: bad sample count {count:?}"))?;
            (mode, declared)
        }
        _ => {
            return Err(format!(
                "{path_like}: expected header \"synth <mode> <n>\", got {:?}",
                header.join(" ")
            ))
        }
    };
    let per_sample = DOF_COUNT + mode.param_count() + COORD_COUNT;
    expect_count("synth", declared, per_sample, &values, path_like)?;
    let mut samples = Vec::with_capacity(declared);
    for chunk in values.chunks_exact(per_sample) {
        let mut theta = PoseVector::zeros();
        theta.0.copy_from_slice(&chunk[..DOF_COUNT]);
        let scales = ScaleVector::new(
            mode,
            chunk[DOF_COUNT..DOF_COUNT + mode.param_count()].to_vec(),
        )
        .map_err(|e| format!("{path_like}: {e}"))?;
        let mut flat = [0.0; COORD_COUNT];
        flat.copy_from_slice(&chunk[DOF_COUNT + mode.param_count()..]);
        let joints = JointSet::from_flat(&flat)
            .ok_or_else(|| format!("{path_like}: non-finite joint value"))?;
        samples.push(SynthSample {
            theta,
            scales,
            joints,
        });
    }
    Ok((mode, samples))
}
