//! Command line front end for the motion synthesizer.
//!
//! Subcommands mirror the library's modes: `synth` grows a new clip
//! from exemplars, `complete` / `keyframe` / `loop` add constraints,
//! `reassemble` rebuilds body parts from different source clips,
//! `metrics` scores generated motion, and `fixture` emits procedural
//! test data.  Every run is deterministic given its flags and seed,
//! and `--manifest` records enough to replay it byte-identically with
//! `--from-manifest`.
//!
//! Exit codes: 0 success, 2 usage, 3 bad data, 4 internal failure.

mod io;
mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use genmm::fixture::fixture_bvh;
use genmm::metrics::{coverage, patch_distance, set_diversity, MetricsParameters, MetricsReport};
use genmm::motion::from_features;
use genmm::patching::{load_partition, part_matrix, SkeletonPartition};
use genmm::synthesis::{
    synthesize, synthesize_reassembly, CompletionConstraint, Constraint, Keyframe,
    ReassemblySource, SynthesisConfig,
};
use genmm::MotionFeatures;

use crate::io::{load_clip, read_text, write_clip, LoadedClip};
use crate::manifest::{HashedFile, KeyframeSpec, Manifest, ScheduleEcho, WeightsSpec};

#[derive(Debug)]
pub enum CliError {
    /// Unreadable, malformed, or inconsistent input.  Exit code 3.
    Data(String),
    /// A failure that indicates a bug or broken environment.  Exit 4.
    Internal(String),
}

impl CliError {
    pub fn data(message: impl Into<String>) -> CliError {
        CliError::Data(message.into())
    }

    pub fn internal(message: impl Into<String>) -> CliError {
        CliError::Internal(message.into())
    }

    fn code(&self) -> i32 {
        match self {
            CliError::Data(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Data(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<genmm::Error> for CliError {
    fn from(e: genmm::Error) -> CliError {
        CliError::Data(e.to_string())
    }
}

/// Output length: absolute, or relative to the first input.
#[derive(Debug, Clone)]
enum LengthSpec {
    Frames(usize),
    Multiple(f64),
}

fn parse_length(s: &str) -> Result<LengthSpec, String> {
    let bad = || format!("'{s}' is not a frame count like 750 or a multiplier like 2x");
    if let Some(prefix) = s.strip_suffix(['x', 'X']) {
        let m: f64 = prefix.trim().parse().map_err(|_| bad())?;
        // The negated form also rejects NaN, which `m <= 0.0` would pass.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(m > 0.0) || !m.is_finite() {
            return Err(bad());
        }
        Ok(LengthSpec::Multiple(m))
    } else {
        let n: usize = s.trim().parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        Ok(LengthSpec::Frames(n))
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "genmm",
    version,
    about = "Example-based motion synthesis over BVH clips"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a new clip from one or more exemplars.
    Synth(SynthArgs),
    /// Synthesize while holding one body part to a given track.
    Complete(CompleteArgs),
    /// Synthesize through pinned keyframes.
    Keyframe(KeyframeArgs),
    /// Synthesize a clip whose last pose equals its first.
    #[command(name = "loop")]
    Loop(SynthArgs),
    /// Rebuild each body part from an assigned source clip.
    Reassemble(ReassembleArgs),
    /// Score generated clips against exemplars (JSON report).
    Metrics(MetricsArgs),
    /// Emit a deterministic procedural test clip.
    Fixture(FixtureArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Exemplar BVH clip; repeat for multiple exemplars.
    #[arg(long = "input", value_name = "BVH", required_unless_present = "from_manifest")]
    inputs: Vec<PathBuf>,
    /// Output length: frame count (750) or multiple of the first input (2x).
    #[arg(long, default_value = "2x", value_parser = parse_length)]
    length: LengthSpec,
    /// Patch window length in frames.
    #[arg(long, default_value_t = 11)]
    patch_size: usize,
    /// Coarsest stage spans this many patch lengths of the shortest exemplar.
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Completeness strength; smaller values chase exemplar variety harder.
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    /// Per-stage growth factor of the refinement pyramid.
    #[arg(long, default_value_t = 4.0 / 3.0)]
    ratio: f64,
    /// Match-and-blend passes per stage.
    #[arg(long, default_value_t = 5)]
    iters: usize,
    /// Seed for the initial noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scale on the initial noise deviation.
    #[arg(long, default_value_t = 1.0)]
    noise_sigma: f64,
    /// JSON file mapping part names to joint name lists.
    #[arg(long, value_name = "JSON")]
    partition: Option<PathBuf>,
    /// Unit scale applied to inputs on load and undone on write.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// JSON file with per-channel matching weights.
    #[arg(long, value_name = "JSON")]
    weights: Option<PathBuf>,
    /// Output BVH path.
    #[arg(long, value_name = "BVH", required_unless_present = "from_manifest")]
    out: Option<PathBuf>,
    /// Record the resolved run here as JSON.
    #[arg(long, value_name = "JSON")]
    manifest: Option<PathBuf>,
    /// Kernel thread cap (0 = auto); GENMM_THREADS is the fallback.
    #[arg(long)]
    threads: Option<usize>,
    /// Replay a recorded run; all flags except --out and --manifest
    /// are taken from the manifest.
    #[arg(long, value_name = "JSON")]
    from_manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompleteArgs {
    #[command(flatten)]
    common: SynthArgs,
    /// BVH providing the track the held part must follow.
    #[arg(long, value_name = "BVH", required_unless_present = "from_manifest")]
    given: Option<PathBuf>,
    /// Partition part held to the given track.
    #[arg(long, value_name = "NAME", required_unless_present = "from_manifest")]
    given_part: Option<String>,
}

#[derive(Args, Debug)]
struct KeyframeArgs {
    #[command(flatten)]
    common: SynthArgs,
    /// JSON file {"<coarse frame>": {"input": i, "frame": f}, ...}
    /// pinning coarse-stage frames to poses of the inputs.
    #[arg(long, value_name = "JSON", required_unless_present = "from_manifest")]
    keyframes: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReassembleArgs {
    #[command(flatten)]
    common: SynthArgs,
    /// JSON file {"<part>": <input index>, ...} assigning every
    /// partition part a source clip.
    #[arg(long, value_name = "JSON", required_unless_present = "from_manifest")]
    map: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Generated BVH clip; repeat for a batch.
    #[arg(long = "generated", value_name = "BVH", required = true)]
    generated: Vec<PathBuf>,
    /// Exemplar BVH clip; repeat for a set.
    #[arg(long = "exemplar", value_name = "BVH", required = true)]
    exemplars: Vec<PathBuf>,
    /// Window for the local patch distance and coverage.
    #[arg(long, default_value_t = 11)]
    local: usize,
    /// Window for the global patch distance.
    #[arg(long, default_value_t = 61)]
    global: usize,
    /// Coverage threshold relative to mean exemplar variance.
    #[arg(long, default_value_t = 0.05)]
    threshold: f64,
    /// Unit scale applied to every clip on load.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Kernel thread cap (0 = auto); GENMM_THREADS is the fallback.
    #[arg(long)]
    threads: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "JSON")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FixtureArgs {
    #[arg(long, default_value_t = 24)]
    joints: usize,
    #[arg(long, default_value_t = 500)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// Output BVH path; stdout when omitted.
    #[arg(long, value_name = "BVH")]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {}", e.message());
        std::process::exit(e.code());
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth(common) => run_synth_family("synth", common, ModeExtras::None),
        Command::Complete(args) => {
            let extras = match (&args.given, &args.given_part) {
                (Some(path), Some(part)) => ModeExtras::Given(path.clone(), part.clone()),
                _ => ModeExtras::None,
            };
            run_synth_family("complete", args.common, extras)
        }
        Command::Keyframe(args) => {
            let extras = args
                .keyframes
                .as_ref()
                .map_or(ModeExtras::None, |p| ModeExtras::Keyframes(p.clone()));
            run_synth_family("keyframe", args.common, extras)
        }
        Command::Loop(common) => run_synth_family("loop", common, ModeExtras::Loop),
        Command::Reassemble(args) => {
            let extras = args
                .map
                .as_ref()
                .map_or(ModeExtras::None, |p| ModeExtras::Map(p.clone()));
            run_synth_family("reassemble", args.common, extras)
        }
        Command::Metrics(args) => run_metrics(args),
        Command::Fixture(args) => run_fixture(args),
    }
}

enum ModeExtras {
    None,
    Loop,
    Given(PathBuf, String),
    Keyframes(PathBuf),
    Map(PathBuf),
}

/// A fully resolved synthesis invocation, whether it came from flags
/// or from a replayed manifest.
struct RunSpec {
    command: String,
    inputs: Vec<PathBuf>,
    /// Present when replaying: inputs must hash to these values.
    expected_hashes: Option<Vec<String>>,
    length: LengthSpec,
    patch_size: usize,
    k: usize,
    alpha: f64,
    ratio: f64,
    iters: usize,
    seed: u64,
    noise_sigma: f64,
    scale: f64,
    threads: usize,
    weights: WeightsSpec,
    partition: Option<serde_json::Value>,
    given: Option<GivenSpec>,
    keyframes: Option<BTreeMap<String, KeyframeSpec>>,
    map: Option<BTreeMap<String, usize>>,
    looped: bool,
    out: PathBuf,
    manifest_out: Option<PathBuf>,
}

struct GivenSpec {
    path: PathBuf,
    part: String,
    expected_hash: Option<String>,
}

fn run_synth_family(
    command: &str,
    common: SynthArgs,
    extras: ModeExtras,
) -> Result<(), CliError> {
    let spec = if let Some(mpath) = &common.from_manifest {
        spec_from_manifest(mpath, common.out.clone(), common.manifest.clone())?
    } else {
        spec_from_args(command, common, extras)?
    };
    execute(spec)
}

fn effective_threads(cli: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = cli {
        return Ok(n);
    }
    match std::env::var("GENMM_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::data(format!("GENMM_THREADS '{v}' is not a thread count"))),
        Err(_) => Ok(0),
    }
}

fn configure_threads(n: usize) -> Result<(), CliError> {
    if n == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::internal(format!("thread pool: {e}")))
}

fn parse_json_file<T: serde::de::DeserializeOwned>(
    path: &std::path::Path,
    what: &str,
) -> Result<T, CliError> {
    let text = read_text(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::data(format!("{}: malformed {what}: {e}", path.display())))
}

fn spec_from_args(
    command: &str,
    common: SynthArgs,
    extras: ModeExtras,
) -> Result<RunSpec, CliError> {
    let weights = match &common.weights {
        Some(p) => parse_json_file::<WeightsSpec>(p, "weights file")?,
        None => WeightsSpec::default(),
    };
    let partition = match &common.partition {
        Some(p) => Some(parse_json_file::<serde_json::Value>(p, "partition file")?),
        None => None,
    };
    let mut spec = RunSpec {
        command: command.to_string(),
        inputs: common.inputs,
        expected_hashes: None,
        length: common.length,
        patch_size: common.patch_size,
        k: common.k,
        alpha: common.alpha,
        ratio: common.ratio,
        iters: common.iters,
        seed: common.seed,
        noise_sigma: common.noise_sigma,
        scale: common.scale,
        threads: effective_threads(common.threads)?,
        weights,
        partition,
        given: None,
        keyframes: None,
        map: None,
        looped: false,
        out: common.out.expect("clap requires --out without --from-manifest"),
        manifest_out: common.manifest,
    };
    match extras {
        ModeExtras::None => {}
        ModeExtras::Loop => spec.looped = true,
        ModeExtras::Given(path, part) => {
            spec.given = Some(GivenSpec {
                path,
                part,
                expected_hash: None,
            });
        }
        ModeExtras::Keyframes(path) => {
            spec.keyframes = Some(parse_json_file(&path, "keyframes file")?);
        }
        ModeExtras::Map(path) => {
            spec.map = Some(parse_json_file(&path, "part map file")?);
        }
    }
    Ok(spec)
}

fn spec_from_manifest(
    path: &std::path::Path,
    out_override: Option<PathBuf>,
    manifest_override: Option<PathBuf>,
) -> Result<RunSpec, CliError> {
    let m: Manifest = parse_json_file(path, "manifest")?;
    let looped = m.command == "loop";
    Ok(RunSpec {
        command: m.command,
        inputs: m.inputs.iter().map(|h| PathBuf::from(&h.path)).collect(),
        expected_hashes: Some(m.inputs.into_iter().map(|h| h.sha256).collect()),
        length: LengthSpec::Frames(m.length_frames),
        patch_size: m.patch_size,
        k: m.k,
        alpha: m.alpha,
        ratio: m.ratio,
        iters: m.iters,
        seed: m.seed,
        noise_sigma: m.noise_sigma,
        scale: m.scale,
        threads: m.threads,
        weights: m.weights,
        partition: m.partition,
        given: m.given.map(|h| GivenSpec {
            path: PathBuf::from(&h.path),
            part: m.given_part.unwrap_or_default(),
            expected_hash: Some(h.sha256),
        }),
        keyframes: m.keyframes,
        map: m.map,
        looped,
        out: out_override.unwrap_or_else(|| PathBuf::from(&m.output)),
        manifest_out: manifest_override,
    })
}

fn report_warnings(clip: &LoadedClip) {
    for w in &clip.warnings {
        eprintln!("warning: {}: {w}", clip.path.display());
    }
}

fn execute(spec: RunSpec) -> Result<(), CliError> {
    configure_threads(spec.threads)?;

    let clips: Vec<LoadedClip> = spec
        .inputs
        .iter()
        .map(|p| load_clip(p, spec.scale))
        .collect::<Result<_, _>>()?;
    if clips.is_empty() {
        return Err(CliError::data("at least one --input is required"));
    }
    for clip in &clips {
        report_warnings(clip);
    }
    if let Some(expected) = &spec.expected_hashes {
        for (clip, hash) in clips.iter().zip(expected) {
            if &clip.sha256 != hash {
                return Err(CliError::data(format!(
                    "{}: content changed since the manifest was written",
                    clip.path.display()
                )));
            }
        }
    }

    let target_frames = match spec.length {
        LengthSpec::Frames(n) => n,
        LengthSpec::Multiple(m) => (m * clips[0].frames() as f64).round() as usize,
    };
    let skeleton = clips[0].skeleton.clone();
    let partition = match &spec.partition {
        Some(v) => load_partition(&v.to_string(), &skeleton)?,
        None => SkeletonPartition::whole_body(&skeleton),
    };
    let config = SynthesisConfig {
        patch_size: spec.patch_size,
        coarse_multiple: spec.k,
        alpha: spec.alpha,
        iterations: spec.iters,
        ratio: spec.ratio,
        output_frames: target_frames,
        seed: spec.seed,
        noise_sigma: spec.noise_sigma,
        weights: spec.weights.to_weights(),
    };

    let mut constraint = Constraint {
        looped: spec.looped,
        ..Default::default()
    };
    let mut given_record = None;
    if let Some(g) = &spec.given {
        let given_clip = load_clip(&g.path, spec.scale)?;
        report_warnings(&given_clip);
        if let Some(hash) = &g.expected_hash {
            if &given_clip.sha256 != hash {
                return Err(CliError::data(format!(
                    "{}: content changed since the manifest was written",
                    g.path.display()
                )));
            }
        }
        let same_rig = given_clip.features.layout == clips[0].features.layout
            && given_clip
                .skeleton
                .joints()
                .iter()
                .map(|j| &j.name)
                .eq(skeleton.joints().iter().map(|j| &j.name));
        if !same_rig {
            return Err(CliError::data(format!(
                "{}: the given clip must use the exemplar's skeleton",
                g.path.display()
            )));
        }
        let part = partition.part_by_name(&g.part).ok_or_else(|| {
            CliError::data(format!("--given-part '{}' is not a partition part", g.part))
        })?;
        constraint.completion = Some(CompletionConstraint {
            part: g.part.clone(),
            channels: part_matrix(&given_clip.features.data, &part.columns),
        });
        given_record = Some(HashedFile {
            path: g.path.display().to_string(),
            sha256: given_clip.sha256.clone(),
        });
    }
    if let Some(kfs) = &spec.keyframes {
        for (key, kf) in kfs {
            let coarse_index: usize = key.trim().parse().map_err(|_| {
                CliError::data(format!("keyframe index '{key}' is not a frame number"))
            })?;
            let clip = clips.get(kf.input).ok_or_else(|| {
                CliError::data(format!(
                    "keyframe '{key}': input {} does not exist ({} inputs)",
                    kf.input,
                    clips.len()
                ))
            })?;
            if kf.frame >= clip.frames() {
                return Err(CliError::data(format!(
                    "keyframe '{key}': frame {} exceeds {} ({} frames)",
                    kf.frame,
                    clip.path.display(),
                    clip.frames()
                )));
            }
            constraint.keyframes.push(Keyframe {
                coarse_index,
                row: clip.features.data.row(kf.frame).to_vec(),
            });
        }
    }

    let output = if let Some(map) = &spec.map {
        let sources: Vec<ReassemblySource> = clips
            .iter()
            .map(|c| ReassemblySource {
                skeleton: c.skeleton.clone(),
                features: c.features.clone(),
            })
            .collect();
        synthesize_reassembly(&sources, &skeleton, &partition, map, &config)?
    } else {
        let features: Vec<MotionFeatures> = clips.iter().map(|c| c.features.clone()).collect();
        synthesize(&features, &partition, &config, &constraint)?
    };

    let world = from_features(&output.features, &skeleton)?;
    write_clip(
        &spec.out,
        &skeleton,
        &world,
        output.features.fps,
        spec.scale,
    )?;

    if let Some(mpath) = &spec.manifest_out {
        let record = Manifest {
            command: spec.command.clone(),
            inputs: spec
                .inputs
                .iter()
                .zip(&clips)
                .map(|(p, c)| HashedFile {
                    path: p.display().to_string(),
                    sha256: c.sha256.clone(),
                })
                .collect(),
            given: given_record,
            given_part: spec.given.as_ref().map(|g| g.part.clone()),
            length_frames: target_frames,
            patch_size: spec.patch_size,
            k: spec.k,
            alpha: spec.alpha,
            ratio: spec.ratio,
            iters: spec.iters,
            seed: spec.seed,
            noise_sigma: spec.noise_sigma,
            scale: spec.scale,
            threads: spec.threads,
            weights: spec.weights.clone(),
            partition: spec.partition.clone(),
            keyframes: spec.keyframes.clone(),
            map: spec.map.clone(),
            output: spec.out.display().to_string(),
            schedule: ScheduleEcho::from_schedule(&output.schedule),
            stage_millis: output.stage_millis.clone(),
        };
        let text = serde_json::to_string_pretty(&record)
            .map_err(|e| CliError::internal(format!("manifest serialization: {e}")))?;
        fs::write(mpath, text + "\n")
            .map_err(|e| CliError::data(format!("{}: {e}", mpath.display())))?;
    }

    let total_ms: f64 = output.stage_millis.iter().sum();
    println!(
        "wrote {} ({} frames, {} stages, {total_ms:.0} ms)",
        spec.out.display(),
        output.features.frames(),
        output.schedule.stages
    );
    Ok(())
}

fn run_metrics(args: MetricsArgs) -> Result<(), CliError> {
    configure_threads(effective_threads(args.threads)?)?;

    let generated: Vec<LoadedClip> = args
        .generated
        .iter()
        .map(|p| load_clip(p, args.scale))
        .collect::<Result<_, _>>()?;
    let exemplars: Vec<LoadedClip> = args
        .exemplars
        .iter()
        .map(|p| load_clip(p, args.scale))
        .collect::<Result<_, _>>()?;
    for clip in generated.iter().chain(&exemplars) {
        report_warnings(clip);
        if clip.features.layout != generated[0].features.layout {
            return Err(CliError::data(format!(
                "{}: layout differs from {}",
                clip.path.display(),
                generated[0].path.display()
            )));
        }
    }

    let gen_refs: Vec<&MotionFeatures> = generated.iter().map(|c| &c.features).collect();
    let ex_refs: Vec<&MotionFeatures> = exemplars.iter().map(|c| &c.features).collect();
    let local = patch_distance(&gen_refs, &ex_refs, args.local)?;
    let global = patch_distance(&gen_refs, &ex_refs, args.global)?;
    let cov = coverage(&gen_refs, &ex_refs, args.local, args.threshold)?;
    let diversity = if generated.len() >= 2 {
        let samples: Vec<genmm::WorldMotion> =
            generated.iter().map(|c| c.world.clone()).collect();
        Some(set_diversity(&samples, &exemplars[0].world)?)
    } else {
        None
    };

    let report = MetricsReport {
        coverage: cov,
        local_patch_distance: local,
        global_patch_distance: global,
        set_diversity: diversity,
        parameters: MetricsParameters {
            local_window: args.local,
            global_window: args.global,
            coverage_window: args.local,
            rel_threshold: args.threshold,
            sample_count: generated.len(),
        },
    };
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::internal(format!("report serialization: {e}")))?;
    match &args.out {
        Some(path) => fs::write(path, text + "\n")
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run_fixture(args: FixtureArgs) -> Result<(), CliError> {
    let text = fixture_bvh(args.joints, args.frames, args.seed, args.fps)?;
    match &args.out {
        Some(path) => fs::write(path, &text)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    Ok(())
}
