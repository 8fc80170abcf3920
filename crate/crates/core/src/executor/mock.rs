//! Built-in stand-in for the reconstruction engine.
//!
//! The mock decides deterministically which quality problems a parameter set
//! would show for a given [`MockScenario`] and renders an 80x80 grayscale PNG
//! whose five horizontal bands encode those problems, so vision-based
//! assessment can be tested without a real reconstruction.

use serde::{Deserialize, Serialize};

use crate::params::ReconstructionParams;
use crate::rulebook::{IssueTag, QualityReport};

/// Layer regularization at or above this suppresses per-layer features.
pub const LAYER_REG_THRESHOLD: f64 = 0.3;

pub const IMAGE_SIZE: u32 = 80;
const BAND_ROWS: u32 = IMAGE_SIZE / 5;
const RAISED: u8 = 230;
const LOWERED: u8 = 25;

/// Properties of the simulated sample and instrument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockScenario {
    pub needed_probe_modes: u64,
    pub needs_layer_reg: bool,
    pub target_blur: f64,
    pub has_drift: bool,
    pub min_iterations: u64,
}

impl Default for MockScenario {
    fn default() -> Self {
        Self {
            needed_probe_modes: 6,
            needs_layer_reg: true,
            target_blur: 2.0,
            has_drift: false,
            min_iterations: 50,
        }
    }
}

/// Ground-truth quality flags; `converged` is the only one where true is good.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockFlags {
    pub converged: bool,
    pub grid_artifacts: bool,
    pub last_probe_mode_structures: bool,
    pub per_layer_random_features: bool,
    pub atoms_blurred: bool,
}

impl Default for MockFlags {
    fn default() -> Self {
        Self {
            converged: true,
            grid_artifacts: false,
            last_probe_mode_structures: false,
            per_layer_random_features: false,
            atoms_blurred: false,
        }
    }
}

impl MockFlags {
    /// Band order top to bottom; a raised band means a problem.
    fn bands(&self) -> [bool; 5] {
        [
            !self.converged,
            self.grid_artifacts,
            self.last_probe_mode_structures,
            self.per_layer_random_features,
            self.atoms_blurred,
        ]
    }

    fn from_bands(b: [bool; 5]) -> Self {
        Self {
            converged: !b[0],
            grid_artifacts: b[1],
            last_probe_mode_structures: b[2],
            per_layer_random_features: b[3],
            atoms_blurred: b[4],
        }
    }

    pub fn raised(&self) -> usize {
        self.bands().iter().filter(|b| **b).count()
    }

    pub fn score(&self) -> f64 {
        1.0 - self.raised() as f64 / 5.0
    }

    pub fn to_report(&self) -> QualityReport {
        let mut tags = Vec::new();
        if self.per_layer_random_features {
            tags.push(IssueTag::PerLayerRandomFeatures);
        }
        if self.atoms_blurred {
            tags.push(IssueTag::AtomsBlurred);
        }
        if tags.is_empty() {
            tags.push(IssueTag::None);
        }
        QualityReport {
            converged: self.converged,
            grid_artifacts: self.grid_artifacts,
            initial_probe_accurate: true,
            last_probe_mode_structures: self.last_probe_mode_structures,
            free_text_issues: tags,
            raw_text: String::new(),
        }
    }

    pub fn from_report(r: &QualityReport) -> Self {
        Self {
            converged: r.converged,
            grid_artifacts: r.grid_artifacts,
            last_probe_mode_structures: r.last_probe_mode_structures,
            per_layer_random_features: r.has_issue(IssueTag::PerLayerRandomFeatures),
            atoms_blurred: r.has_issue(IssueTag::AtomsBlurred),
        }
    }

    /// Plain-language description used as an image caption.
    pub fn caption(&self) -> String {
        let mut parts = vec![
            if self.converged {
                "The reconstruction converged."
            } else {
                "The reconstruction did not converge."
            },
            if self.grid_artifacts {
                "Grid artifacts are visible in the object."
            } else {
                "No grid artifacts are visible."
            },
            if self.last_probe_mode_structures {
                "The last probe mode shows structures."
            } else {
                "The last probe mode has no structures."
            },
        ];
        if self.per_layer_random_features {
            parts.push("Each layer shows random features that are not real.");
        }
        if self.atoms_blurred {
            parts.push("The atoms look blurred.");
        }
        parts.join(" ")
    }
}

pub fn evaluate(params: &ReconstructionParams, scenario: &MockScenario) -> MockFlags {
    MockFlags {
        converged: params.number_of_iterations >= scenario.min_iterations,
        last_probe_mode_structures: params.number_of_probe_modes < scenario.needed_probe_modes,
        per_layer_random_features: params.multislice_ptycho
            && scenario.needs_layer_reg
            && params.layer_regularization_coefficient < LAYER_REG_THRESHOLD,
        atoms_blurred: params.diff_pattern_blur < scenario.target_blur,
        grid_artifacts: scenario.has_drift && !params.position_correction,
    }
}

/// 80x80 8-bit grayscale PNG with one 16-row band per flag.
pub fn render_flags_png(flags: &MockFlags) -> Vec<u8> {
    let bands = flags.bands();
    let mut pixels = Vec::with_capacity((IMAGE_SIZE * IMAGE_SIZE) as usize);
    for y in 0..IMAGE_SIZE {
        let base = if bands[(y / BAND_ROWS) as usize] { RAISED } else { LOWERED };
        for x in 0..IMAGE_SIZE {
            // faint lattice so the image is not flat
            let texture = ((x * 7 + y * 13) % 11) as u8;
            pixels.push(base.saturating_add(texture));
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, IMAGE_SIZE, IMAGE_SIZE);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("png header");
        writer.write_image_data(&pixels).expect("png data");
    }
    out
}

/// Reads the flags back from a rendered image; None for any other image.
pub fn decode_flags_png(bytes: &[u8]) -> Option<MockFlags> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().ok()?;
    let mut buf = vec![0; reader.output_buffer_size()?];
    let info = reader.next_frame(&mut buf).ok()?;
    if info.width != IMAGE_SIZE || info.height != IMAGE_SIZE || info.color_type != png::ColorType::Grayscale {
        return None;
    }
    let mut bands = [false; 5];
    for (i, band) in bands.iter_mut().enumerate() {
        let rows = (i as u32 * BAND_ROWS)..((i as u32 + 1) * BAND_ROWS);
        let sum: u64 = rows
            .flat_map(|y| (0..IMAGE_SIZE).map(move |x| (y * IMAGE_SIZE + x) as usize))
            .map(|idx| u64::from(buf[idx]))
            .sum();
        let mean = sum as f64 / f64::from(BAND_ROWS * IMAGE_SIZE);
        *band = mean > 128.0;
    }
    Some(MockFlags::from_bands(bands))
}

/// Result of one mock run.
#[derive(Debug, Clone, PartialEq)]
pub struct MockRun {
    pub flags: MockFlags,
    pub report: QualityReport,
    pub score: f64,
    pub output: String,
    pub elapsed_secs: f64,
    pub image_png: Vec<u8>,
}

/// Simulated engine time; grows with the work a real engine would do.
fn simulated_seconds(p: &ReconstructionParams) -> f64 {
    let work = p.number_of_iterations as f64
        * p.number_of_layers as f64
        * p.number_of_probe_modes as f64
        * (p.number_scan_points_x * p.number_scan_points_y) as f64;
    (work / 1.0e5 * 10.0).round() / 10.0
}

pub fn mock_reconstruct(params: &ReconstructionParams, scenario: &MockScenario) -> MockRun {
    let flags = evaluate(params, scenario);
    let engine = if params.multislice_ptycho { "GPU_MS" } else { "GPU" };
    let engine_secs = simulated_seconds(params);
    let total_secs = engine_secs + 12.5;
    let output = format!(
        "[init] : Preparing paths.\n\
         [init] : Preparing initial guess.\n\
         [init] : Preparing data using mock data preparation.\n\
         [init] : Finished data preparation and initialization.\n\
         [ptycho] : Reconstructing S{:05}\n\
         [ptycho] : Calling engine {engine}\n\
         [ptycho] : Elapsed time for engine {engine}: {engine_secs:.1} s\n\
         Elapsed time is {total_secs:.6} seconds.\n",
        params.scan_number
    );
    MockRun {
        flags,
        report: flags.to_report(),
        score: flags.score(),
        output,
        elapsed_secs: total_secs,
        image_png: render_flags_png(&flags),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::parse_params;

    fn recon_1() -> ReconstructionParams {
        parse_params(include_str!("../../tests/fixtures/recon_1.json")).unwrap()
    }

    #[test]
    fn first_block_raises_three_flags() {
        let run = mock_reconstruct(&recon_1(), &MockScenario::default());
        let f = run.flags;
        assert!(f.converged && !f.grid_artifacts);
        assert!(f.last_probe_mode_structures && f.per_layer_random_features && f.atoms_blurred);
        assert!((run.score - 0.4).abs() < 1e-12);
        assert!(run.output.contains("Elapsed time"));
    }

    #[test]
    fn final_block_raises_only_structures() {
        let mut p = recon_1();
        p.number_of_probe_modes = 5;
        p.layer_regularization_coefficient = 0.3;
        p.diff_pattern_blur = 2.0;
        p.update_batch_size = 256;
        let run = mock_reconstruct(&p, &MockScenario::default());
        assert_eq!(
            run.flags,
            MockFlags {
                last_probe_mode_structures: true,
                ..MockFlags::default()
            }
        );
        assert!((run.score - 0.8).abs() < 1e-12);
    }

    #[test]
    fn meeting_every_bound_is_clean() {
        let mut p = recon_1();
        p.number_of_probe_modes = 6;
        p.layer_regularization_coefficient = 0.3;
        p.diff_pattern_blur = 2.0;
        let run = mock_reconstruct(&p, &MockScenario::default());
        assert!(run.report.is_clean());
        assert_eq!(run.score, 1.0);
    }

    #[test]
    fn image_encodes_every_flag_combination() {
        for bits in 0..32u32 {
            let b = |i: u32| bits & (1 << i) != 0;
            let flags = MockFlags {
                converged: b(0),
                grid_artifacts: b(1),
                last_probe_mode_structures: b(2),
                per_layer_random_features: b(3),
                atoms_blurred: b(4),
            };
            assert_eq!(decode_flags_png(&render_flags_png(&flags)), Some(flags));
        }
        assert_eq!(decode_flags_png(b"junk"), None);
    }
}
