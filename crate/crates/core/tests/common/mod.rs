#![allow(dead_code)]

use std::fs;
use std::path::Path;

use awekit::corpus::frame_index;

pub fn write_f32(path: &Path, values: &[f32]) {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).unwrap();
}

/// What an external feature extractor emits: one manifest per layer with
/// identical utterance ids, a non-default frame period and word alignments
/// converted from seconds.
pub fn write_layer_corpora(dir: &Path, n_layers: usize) {
    let period = 0.02;
    let words = [("alpha", 0.10, 0.50), ("beta", 0.62, 1.04)];
    for layer in 0..n_layers {
        let ldir = dir.join(format!("layer{layer}"));
        fs::create_dir_all(&ldir).unwrap();
        let mut tlines = Vec::new();
        let mut slines = Vec::new();
        for (u, spk) in [("clip0", "a"), ("clip1", "b"), ("clip2", "a")] {
            let n_frames = frame_index(1.2, period);
            let dim = 6;
            let vals: Vec<f32> = (0..n_frames * dim)
                .map(|i| ((i * 7 + layer * 13 + u.len()) % 11) as f32 * 0.1 + (i % dim) as f32)
                .collect();
            write_f32(&ldir.join(format!("{u}.f32")), &vals);
            let w: Vec<String> = words
                .iter()
                .map(|(l, t0, t1)| {
                    format!(
                        r#"{{"label":"{l}","start":{},"end":{}}}"#,
                        frame_index(*t0, period),
                        frame_index(*t1, period)
                    )
                })
                .collect();
            let line = format!(
                r#"{{"id":"{u}","speaker":"{spk}","n_frames":{n_frames},"dim":{dim},"path":"{u}.f32","sample_period":{period},"words":[{}]}}"#,
                w.join(",")
            );
            slines.push(line.clone());
            tlines.push(line);
        }
        fs::write(ldir.join("templates.jsonl"), tlines.join("\n") + "\n").unwrap();
        fs::write(ldir.join("search.jsonl"), slines.join("\n") + "\n").unwrap();
    }
}

