//! Schedule files and integer matrix files.
//!
//! A schedule is TOML:
//!
//! ```toml
//! preset = "medium"          # optional, --preset wins
//!
//! [input]
//! height = 28
//! width = 28
//! channels = 1
//!
//! [[layer]]
//! kind = "conv"
//! filter_h = 5
//! filter_w = 5
//! conv_type = "same"         # or "valid"; default "same"
//! channels_out = 5
//!
//! [[layer]]
//! kind = "activation"
//! function = "relu"          # relu | square | identity
//!
//! [weights]
//! source = "random"          # or source = "file", path = "weights.txt"
//! seed = 7
//! ```
//!
//! Matrix files hold whitespace-separated integers, one matrix row per line,
//! with blank lines between matrices and `#` comments.

use std::fs;
use std::path::{Path, PathBuf};

use ensei_core::ntt::{ConvType, Matrix};
use ensei_core::protocol::{Activation, ConvSpec, ConvWeights, LayerSpec, Schedule};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleFile {
    preset: Option<String>,
    input: InputSection,
    #[serde(rename = "layer")]
    layers: Vec<LayerEntry>,
    weights: Option<WeightsEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputSection {
    height: usize,
    width: usize,
    #[serde(default = "one")]
    channels: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ConvKind {
    #[default]
    Same,
    Valid,
}

impl From<ConvKind> for ConvType {
    fn from(k: ConvKind) -> Self {
        match k {
            ConvKind::Same => ConvType::Same,
            ConvKind::Valid => ConvType::Valid,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum LayerEntry {
    Conv {
        filter_h: usize,
        filter_w: usize,
        #[serde(default)]
        conv_type: ConvKind,
        #[serde(default = "one")]
        channels_out: usize,
    },
    Activation {
        function: ActivationKind,
    },
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Square,
    Identity,
}

impl From<ActivationKind> for Activation {
    fn from(k: ActivationKind) -> Self {
        match k {
            ActivationKind::Relu => Activation::ReLU,
            ActivationKind::Square => Activation::Square,
            ActivationKind::Identity => Activation::Identity,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
enum WeightsEntry {
    Random { seed: Option<u64> },
    File { path: PathBuf },
}

/// Where Bob's filters come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WeightSource {
    /// Seeded random; `None` derives the seed from `--seed`.
    Random(Option<u64>),
    File(PathBuf),
}

#[derive(Clone, Debug)]
pub struct LoadedSchedule {
    pub preset: Option<String>,
    pub schedule: Schedule,
    pub weights: Option<WeightSource>,
}

pub fn load_schedule(path: &Path) -> Result<LoadedSchedule, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_schedule(&text, base)
}

/// Parses schedule text; relative weight paths resolve against `base`.
pub fn parse_schedule(text: &str, base: &Path) -> Result<LoadedSchedule, CliError> {
    let file: ScheduleFile = toml::from_str(text).map_err(|e| CliError::Usage(format!("schedule: {e}")))?;
    let layers = file
        .layers
        .into_iter()
        .map(|l| match l {
            LayerEntry::Conv {
                filter_h,
                filter_w,
                conv_type,
                channels_out,
            } => LayerSpec::Conv(ConvSpec {
                filter_h,
                filter_w,
                conv_type: conv_type.into(),
                channels_out,
            }),
            LayerEntry::Activation { function } => LayerSpec::Activation(function.into()),
        })
        .collect();
    let weights = file.weights.map(|w| match w {
        WeightsEntry::Random { seed } => WeightSource::Random(seed),
        WeightsEntry::File { path } => WeightSource::File(base.join(path)),
    });
    Ok(LoadedSchedule {
        preset: file.preset,
        schedule: Schedule {
            input_h: file.input.height,
            input_w: file.input.width,
            channels_in: file.input.channels,
            layers,
        },
        weights,
    })
}

/// Splits matrix-file text into matrices.
pub fn parse_matrices(text: &str) -> Result<Vec<Matrix<i64>>, CliError> {
    let mut out = Vec::new();
    let mut rows: Vec<Vec<i64>> = Vec::new();
    let flush = |rows: &mut Vec<Vec<i64>>, out: &mut Vec<Matrix<i64>>| -> Result<(), CliError> {
        if !rows.is_empty() {
            let m = Matrix::from_rows(rows).map_err(|e| CliError::Usage(format!("matrix {}: {e}", out.len())))?;
            out.push(m);
            rows.clear();
        }
        Ok(())
    };
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            flush(&mut rows, &mut out)?;
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| {
                t.parse::<i64>()
                    .map_err(|_| CliError::Usage(format!("line {}: `{t}` is not an integer", lineno + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    flush(&mut rows, &mut out)?;
    Ok(out)
}

pub fn format_matrices(ms: &[Matrix<i64>]) -> String {
    ms.iter()
        .map(|m| {
            m.data
                .chunks(m.cols.max(1))
                .map(|r| r.iter().map(i64::to_string).collect::<Vec<_>>().join(" "))
                .collect::<Vec<_>>()
                .join("\n")
        })
        .collect::<Vec<_>>()
        .join("\n\n")
        + "\n"
}

fn read_matrices(path: &Path) -> Result<Vec<Matrix<i64>>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    parse_matrices(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Reads the input image, one matrix per channel.
pub fn read_image(path: &Path, schedule: &Schedule) -> Result<Vec<Matrix<i64>>, CliError> {
    let ms = read_matrices(path)?;
    let dims = (schedule.input_h, schedule.input_w);
    if ms.len() != schedule.channels_in || ms.iter().any(|m| m.dims() != dims) {
        return Err(CliError::Usage(format!(
            "{}: expected {} matrices of {}x{}",
            path.display(),
            schedule.channels_in,
            dims.0,
            dims.1
        )));
    }
    Ok(ms)
}

/// Reads weights ordered by layer, then output channel, then input channel.
pub fn read_weights(path: &Path, schedule: &Schedule) -> Result<Vec<ConvWeights>, CliError> {
    let mut ms = read_matrices(path)?.into_iter();
    let mut c_in = schedule.channels_in;
    let mut out = Vec::new();
    for spec in schedule.conv_layers() {
        let mut layer = Vec::with_capacity(spec.channels_out);
        for _ in 0..spec.channels_out {
            let mut row = Vec::with_capacity(c_in);
            for _ in 0..c_in {
                let m = ms
                    .next()
                    .ok_or_else(|| CliError::Usage(format!("{}: too few filters", path.display())))?;
                if m.dims() != (spec.filter_h, spec.filter_w) {
                    return Err(CliError::Usage(format!(
                        "{}: expected a {}x{} filter, found {}x{}",
                        path.display(),
                        spec.filter_h,
                        spec.filter_w,
                        m.rows,
                        m.cols
                    )));
                }
                row.push(m);
            }
            layer.push(row);
        }
        out.push(layer);
        c_in = spec.channels_out;
    }
    if ms.next().is_some() {
        return Err(CliError::Usage(format!("{}: more filters than the schedule uses", path.display())));
    }
    Ok(out)
}

pub fn flatten_weights(weights: &[ConvWeights]) -> Vec<Matrix<i64>> {
    weights.iter().flatten().flatten().cloned().collect()
}
