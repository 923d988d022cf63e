//! Command-line front end: palette fitting and sampling, layout synthesis
//! and editing, metrics, rendering, and the gradient self-check.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use semantic_palette::gmm::{sample_palette, select_components, FitOptions, GmmModel};
use semantic_palette::io::{
    palette_to_json, parse_palettes, read_label_map, write_label_map, PgmEncoding,
};
use semantic_palette::metrics::metric_report;
use semantic_palette::render::render_ppm;
use semantic_palette::synth::{SynthesisConfig, SynthesisTrace};
use semantic_palette::{
    gradcheck, hard_histogram, synthesize, synthesize_edit, EditRegion, HardLayout, Palette,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl From<semantic_palette::Error> for CliError {
    fn from(e: semantic_palette::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "sempal",
    version,
    about = "Palette-conditioned semantic layouts"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a mixture model to the class proportions of every *.pgm in a directory.
    FitPalettes(FitArgs),
    /// Draw palettes from a fitted model, one JSON array per line.
    SamplePalettes(SampleArgs),
    /// Synthesize a layout that follows a palette.
    Synthesize(SynthArgs),
    /// Re-synthesize a rectangular region of a layout.
    Edit(EditArgs),
    /// KL to a target palette and FSD against a reference set.
    Metrics(MetricsArgs),
    /// Compare the analytic loss gradient with central differences.
    Gradcheck(GradcheckArgs),
    /// Render a label map as a colour PPM image.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub dir: PathBuf,
    /// Candidate component counts, e.g. `1..10` (inclusive) or `3`.
    #[arg(long, default_value = "1..10")]
    pub components: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Write the model here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    pub model: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.5)]
    pub step_size: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1.0)]
    pub init_std: f64,
    #[arg(long, default_value_t = 0.01)]
    pub kl_stop: f64,
    /// Write the optimization trace as JSON.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Write binary (P5) instead of ASCII (P2) label maps.
    #[arg(long)]
    pub binary: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Palette as inline JSON/CSV or a file containing one.
    #[arg(long)]
    pub palette: String,
    /// Layout size as HxW.
    #[arg(long, default_value = "32x32")]
    pub size: String,
    #[arg(long)]
    pub multiscale: bool,
    #[arg(long, default_value = "layout.pgm")]
    pub output: PathBuf,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    pub layout: PathBuf,
    /// Region as top,left,height,width.
    #[arg(long)]
    pub region: String,
    /// Either C+1 budgets ending with the background share, or C
    /// proportions for the region alone.
    #[arg(long)]
    pub palette: String,
    #[arg(long, default_value = "edited.pgm")]
    pub output: PathBuf,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub target: String,
    #[arg(long)]
    pub layouts: PathBuf,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Grid size as HxW, at most 8x8.
    #[arg(long, default_value = "4x4")]
    pub size: String,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    pub layout: PathBuf,
    /// Defaults to the input path with a .ppm extension.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    return EXIT_OK;
                }
                _ => EXIT_INVALID,
            };
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<i32> {
    match cmd {
        Command::FitPalettes(a) => fit_palettes(a, out, err),
        Command::SamplePalettes(a) => sample_palettes(a, out),
        Command::Synthesize(a) => synthesize_cmd(a, err),
        Command::Edit(a) => edit_cmd(a, err),
        Command::Metrics(a) => metrics_cmd(a, out),
        Command::Gradcheck(a) => gradcheck_cmd(a, out),
        Command::Render(a) => render_cmd(a),
    }
}

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => write_bytes(p, text.as_bytes()),
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(e.to_string())),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn read_layout(path: &Path) -> CliResult<HardLayout> {
    let bytes = read_bytes(path)?;
    read_label_map(&bytes).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// Every `*.pgm` in `dir`, sorted by file name.
pub fn read_layout_dir(dir: &Path) -> CliResult<Vec<HardLayout>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::Io(e.to_string()))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == "pgm") {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Invalid(format!(
            "no .pgm files in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| read_layout(p)).collect()
}

/// Reads palettes from `arg`: a path to an existing file, otherwise
/// inline JSON or comma-separated text.
pub fn load_palettes(arg: &str) -> CliResult<Vec<Palette>> {
    let path = Path::new(arg);
    let text = if path.is_file() {
        String::from_utf8(read_bytes(path)?)
            .map_err(|_| CliError::Invalid(format!("{arg}: not UTF-8")))?
    } else {
        arg.to_string()
    };
    Ok(parse_palettes(&text)?)
}

fn load_one_palette(arg: &str) -> CliResult<Palette> {
    let mut all = load_palettes(arg)?;
    if all.len() != 1 {
        return Err(CliError::Invalid(format!(
            "expected one palette, found {}",
            all.len()
        )));
    }
    Ok(all.remove(0))
}

/// Parses `HxW`.
pub fn parse_size(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Invalid(format!("size {s:?} is not HxW"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

/// Parses `a..b` or `a..=b` (both inclusive) or a single count.
pub fn parse_range(s: &str) -> CliResult<Vec<usize>> {
    let bad = || CliError::Invalid(format!("component range {s:?} is not a..b"));
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.trim_start_matches('='))?),
        None => {
            let v = num(s)?;
            (v, v)
        }
    };
    if lo == 0 || lo > hi {
        return Err(bad());
    }
    Ok((lo..=hi).collect())
}

/// Parses `top,left,height,width`.
pub fn parse_region(s: &str) -> CliResult<EditRegion> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::Invalid(format!("region {s:?} is not T,L,H,W")))?;
    match parts[..] {
        [t, l, h, w] => Ok(EditRegion::new(t, l, h, w)),
        _ => Err(CliError::Invalid(format!("region {s:?} is not T,L,H,W"))),
    }
}

fn fit_palettes(a: FitArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<i32> {
    let layouts = read_layout_dir(&a.dir)?;
    let samples: Vec<Vec<f64>> = layouts
        .iter()
        .map(|l| hard_histogram(l).into_vec())
        .collect();
    let candidates: Vec<usize> = parse_range(&a.components)?
        .into_iter()
        .filter(|&m| m <= samples.len())
        .collect();
    if candidates.is_empty() {
        return Err(CliError::Invalid(format!(
            "{} layouts are too few for the requested component counts",
            samples.len()
        )));
    }
    let options = FitOptions {
        seed: a.seed,
        max_iter: a.max_iter,
        tol: a.tol,
    };
    let sel = select_components(&samples, &candidates, options)?;
    for (m, score) in &sel.table {
        let _ = writeln!(err, "components={m} aic={score}");
    }
    let _ = writeln!(err, "chosen={}", sel.chosen);
    let mut text = sel.model.to_json();
    text.push('\n');
    emit(out, a.output.as_deref(), &text)?;
    Ok(EXIT_OK)
}

fn sample_palettes(a: SampleArgs, out: &mut dyn Write) -> CliResult<i32> {
    let text = String::from_utf8(read_bytes(&a.model)?)
        .map_err(|_| CliError::Invalid("model file is not UTF-8".into()))?;
    let model = GmmModel::from_json(&text)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut lines = String::new();
    for _ in 0..a.count {
        lines.push_str(&palette_to_json(&sample_palette(&model, &mut rng)?));
        lines.push('\n');
    }
    emit(out, a.output.as_deref(), &lines)?;
    Ok(EXIT_OK)
}

fn synthesis_config(
    o: &OptimArgs,
    height: usize,
    width: usize,
    multiscale: bool,
) -> SynthesisConfig {
    SynthesisConfig {
        height,
        width,
        steps: o.steps,
        step_size: o.step_size,
        momentum: o.momentum,
        seed: o.seed,
        init_std: o.init_std,
        multiscale,
        kl_stop: o.kl_stop,
        ..SynthesisConfig::default()
    }
}

#[derive(Serialize)]
struct TraceDocument<'a> {
    note: &'static str,
    palette: &'a [f64],
    config: &'a SynthesisConfig,
    trace: &'a SynthesisTrace,
}

const TRACE_NOTE: &str = "class proportions only; the layout carries no spatial realism prior";

fn write_outputs(
    o: &OptimArgs,
    output: &Path,
    layout: &HardLayout,
    palette: &Palette,
    cfg: &SynthesisConfig,
    trace: &SynthesisTrace,
    err: &mut dyn Write,
) -> CliResult<()> {
    let encoding = if o.binary {
        PgmEncoding::Binary
    } else {
        PgmEncoding::Ascii
    };
    write_bytes(output, &write_label_map(layout, encoding)?)?;
    if let Some(path) = &o.trace {
        let doc = TraceDocument {
            note: TRACE_NOTE,
            palette: palette.as_slice(),
            config: cfg,
            trace,
        };
        write_bytes(path, to_json(&doc).as_bytes())?;
    }
    let _ = writeln!(
        err,
        "steps={} final_kl={} converged={}",
        trace.steps_run, trace.final_kl, trace.converged
    );
    Ok(())
}

fn synthesize_cmd(a: SynthArgs, err: &mut dyn Write) -> CliResult<i32> {
    let palette = load_one_palette(&a.palette)?;
    let (h, w) = parse_size(&a.size)?;
    let cfg = synthesis_config(&a.optim, h, w, a.multiscale);
    let s = synthesize(&palette, &cfg)?;
    write_outputs(
        &a.optim, &a.output, &s.layout, &palette, &cfg, &s.trace, err,
    )?;
    Ok(EXIT_OK)
}

/// Background-augmented edit palette: `C + 1` budgets are used as given,
/// `C` proportions are scaled to the region and the background share is
/// appended.
pub fn edit_palette(
    p: &Palette,
    classes: usize,
    region: &EditRegion,
    pixels: usize,
) -> CliResult<Palette> {
    if p.classes() == classes + 1 {
        return Ok(p.clone());
    }
    if p.classes() != classes {
        return Err(CliError::Invalid(format!(
            "palette has {} entries; the layout has {classes} classes",
            p.classes()
        )));
    }
    let inside = region.area() as f64 / pixels as f64;
    let mut v: Vec<f64> = p.iter().map(|x| x * inside).collect();
    v.push(1.0 - inside);
    Ok(Palette::new(v)?)
}

fn edit_cmd(a: EditArgs, err: &mut dyn Write) -> CliResult<i32> {
    let input = read_layout(&a.layout)?;
    let region = parse_region(&a.region)?;
    let raw = load_one_palette(&a.palette)?;
    let palette = edit_palette(&raw, input.classes(), &region, input.pixels())?;
    let cfg = synthesis_config(&a.optim, input.height(), input.width(), false);
    let e = synthesize_edit(&input, &region, &palette, &cfg)?;
    write_outputs(
        &a.optim, &a.output, &e.layout, &palette, &cfg, &e.trace, err,
    )?;
    Ok(EXIT_OK)
}

fn metrics_cmd(a: MetricsArgs, out: &mut dyn Write) -> CliResult<i32> {
    let target = load_one_palette(&a.target)?;
    let layouts = read_layout_dir(&a.layouts)?;
    let reference = a.reference.as_deref().map(read_layout_dir).transpose()?;
    let report = metric_report(&target, &layouts, reference.as_deref())?;
    emit(out, a.output.as_deref(), &to_json(&report))?;
    Ok(EXIT_OK)
}

fn gradcheck_cmd(a: GradcheckArgs, out: &mut dyn Write) -> CliResult<i32> {
    let (h, w) = parse_size(&a.size)?;
    if h > 8 || w > 8 {
        return Err(CliError::Invalid(format!(
            "gradcheck grid {h}x{w} exceeds 8x8"
        )));
    }
    let report = gradcheck(a.seed, a.classes, h, w)?;
    emit(out, a.output.as_deref(), &to_json(&report))?;
    Ok(if report.passed { EXIT_OK } else { EXIT_INVALID })
}

fn render_cmd(a: RenderArgs) -> CliResult<i32> {
    let layout = read_layout(&a.layout)?;
    let output = a.output.unwrap_or_else(|| a.layout.with_extension("ppm"));
    write_bytes(&output, &render_ppm(&layout))?;
    Ok(EXIT_OK)
}
