use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use arapgs_core::config::ConfigError;
use arapgs_core::fixtures::write_toy_fixture;
use arapgs_core::image::ImageBuffer;
use arapgs_core::pipeline::{deform, evaluate, render_views, run_refine, view_file_name, write_views, PipelineError};
use arapgs_core::refine::loss_csv;
use arapgs_core::splat_io::{read_cameras, read_dragspec, read_ply, write_ply};
use arapgs_core::{CameraSet, DragSpec, GaussianScene, PipelineConfig, RunManifest};
use arapgs_service::AppState;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

/// Drag-based deformation of Gaussian splat scenes.
#[derive(Parser)]
#[command(name = "arapgs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Scene PLY.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Drag spec JSON.
    #[arg(long)]
    drag: Option<PathBuf>,
    /// Cameras JSON.
    #[arg(long)]
    cameras: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON run manifest; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Deform a scene by a drag spec: writes deformed.ply and report.json.
    Deform(Common),
    /// Render every camera: writes view_{i}.png.
    Render(Common),
    /// Refine a deformed scene: writes refined.ply, loss.csv and refine_report.json.
    Refine {
        #[command(flatten)]
        common: Common,
        /// Deformed scene PLY; `--scene` is the original.
        #[arg(long)]
        deformed: PathBuf,
    },
    /// Drag accuracy index between two render sets: writes dai.json.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        original_renders: PathBuf,
        #[arg(long)]
        edited_renders: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Persist sessions here and reload them on start.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the toy dumbbell scene, cameras and drag into `--out`.
    Fixture {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Stage(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Stage(_) => 3,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Drag { .. } => Failure::Input(e.to_string()),
            e => Failure::Stage(e.to_string()),
        }
    }
}

fn input<E: std::fmt::Display>(what: &Path) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::Input(format!("{}: {e}", what.display()))
}

fn stage<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Stage(e.to_string())
}

struct Run {
    manifest: RunManifest,
}

impl Run {
    fn new(common: &Common) -> Result<Self, Failure> {
        let mut manifest = match &common.config {
            Some(path) => RunManifest::load(path)?,
            None => RunManifest::default(),
        };
        let c = common.clone();
        manifest.scene = c.scene.or(manifest.scene);
        manifest.drag = c.drag.or(manifest.drag);
        manifest.cameras = c.cameras.or(manifest.cameras);
        manifest.out = c.out.or(manifest.out);
        if let Some(seed) = c.seed {
            manifest.config.seed = seed;
        }
        manifest.config.apply_env();
        manifest.config.validate()?;
        Ok(Self { manifest })
    }

    fn config(&self) -> &PipelineConfig {
        &self.manifest.config
    }

    fn path(&self, name: &str, value: &Option<PathBuf>) -> Result<PathBuf, Failure> {
        let path = value.clone().ok_or_else(|| Failure::Input(format!("--{name} is required")))?;
        if !path.exists() {
            return Err(Failure::Input(format!("{}: no such file", path.display())));
        }
        Ok(path)
    }

    fn scene(&self) -> Result<GaussianScene, Failure> {
        let path = self.path("scene", &self.manifest.scene)?;
        read_ply(&path).map_err(input(&path))
    }

    fn drag(&self) -> Result<DragSpec, Failure> {
        let path = self.path("drag", &self.manifest.drag)?;
        read_dragspec(&path).map_err(input(&path))
    }

    fn cameras(&self) -> Result<CameraSet, Failure> {
        let path = self.path("cameras", &self.manifest.cameras)?;
        read_cameras(&path).map_err(input(&path))
    }

    fn output(&self) -> Result<Output, Failure> {
        let dir = self
            .manifest
            .out
            .clone()
            .ok_or_else(|| Failure::Input("--out is required".into()))?;
        Output::create(dir)
    }
}

/// Output directory that forgets everything written to it unless committed.
struct Output {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
    committed: bool,
}

impl Output {
    fn create(dir: PathBuf) -> Result<Self, Failure> {
        let created_dir = !dir.exists();
        std::fs::create_dir_all(&dir).map_err(input(&dir))?;
        Ok(Self {
            dir,
            created_dir,
            files: Vec::new(),
            committed: false,
        })
    }

    fn file(&mut self, name: &str) -> PathBuf {
        let path = self.dir.join(name);
        self.files.push(path.clone());
        path
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
        let path = self.file(name);
        std::fs::write(&path, bytes).map_err(stage)
    }

    fn write_json(&mut self, name: &str, value: &impl serde::Serialize) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).map_err(stage)?;
        text.push('\n');
        self.write(name, text)
    }

    fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Output {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
        if self.created_dir {
            let _ = std::fs::remove_dir(&self.dir);
        }
    }
}

fn cmd_deform(common: &Common) -> Result<(), Failure> {
    let run = Run::new(common)?;
    let scene = run.scene()?;
    let drag = run.drag()?;
    let mut out = run.output()?;
    let result = deform(&scene, &drag, run.config())?;
    log::info!(
        "deformed {} gaussians in {} iterations, energy {:e}",
        result.report.gaussians,
        result.report.iterations,
        result.report.final_energy
    );
    let ply = out.file("deformed.ply");
    write_ply(&result.scene, &ply).map_err(stage)?;
    out.write_json("report.json", &result.report)?;
    out.commit();
    Ok(())
}

fn cmd_render(common: &Common) -> Result<(), Failure> {
    let run = Run::new(common)?;
    let scene = run.scene()?;
    let cameras = run.cameras()?;
    let mut out = run.output()?;
    let images = render_views(&scene, &cameras, run.config().render.background);
    for i in 0..images.len() {
        out.file(&view_file_name(i));
    }
    write_views(&images, &out.dir).map_err(stage)?;
    out.commit();
    Ok(())
}

fn cmd_refine(common: &Common, deformed: &Path) -> Result<(), Failure> {
    let run = Run::new(common)?;
    let original = run.scene()?;
    let deformed = read_ply(deformed).map_err(input(deformed))?;
    let cameras = run.cameras()?;
    let mut out = run.output()?;
    let result = run_refine(&original, &deformed, &cameras, run.config(), |done, total| {
        if done % 100 == 0 || done == total {
            log::info!("refine step {done}/{total}");
        }
    })?;
    let ply = out.file("refined.ply");
    write_ply(&result.scene, &ply).map_err(stage)?;
    out.write("loss.csv", loss_csv(&result.losses))?;
    out.write_json(
        "refine_report.json",
        &json!({
            "seed": run.config().seed,
            "steps": result.losses.len(),
            "optimized": result.optimized,
            "updates": result.updates,
            "enhancer_fallbacks": result.enhancer_fallbacks,
            "final_loss": result.losses.last().map(|l| l.loss),
        }),
    )?;
    out.commit();
    Ok(())
}

fn read_renders(dir: &Path, count: usize) -> Result<Vec<ImageBuffer>, Failure> {
    (0..count)
        .map(|i| {
            let path = dir.join(view_file_name(i));
            ImageBuffer::read_png(&path).map_err(input(&path))
        })
        .collect()
}

fn cmd_eval(common: &Common, original: &Path, edited: &Path) -> Result<(), Failure> {
    let run = Run::new(common)?;
    let drag = run.drag()?;
    let cameras = run.cameras()?;
    let original = read_renders(original, cameras.len())?;
    let edited = read_renders(edited, cameras.len())?;
    let mut out = run.output()?;
    let report = evaluate(&original, &edited, &drag, &cameras, &run.config().eval)?;
    println!("{}", serde_json::to_string(&report).map_err(stage)?);
    out.write_json("dai.json", &report)?;
    out.commit();
    Ok(())
}

fn cmd_serve(listen: SocketAddr, data_dir: Option<&Path>, config: Option<&Path>) -> Result<(), Failure> {
    let mut config = match config {
        Some(path) => RunManifest::load(path)?.config,
        None => PipelineConfig::default(),
    };
    config.apply_env();
    config.validate()?;
    let state = match data_dir {
        Some(dir) => AppState::with_data_dir(config, dir).map_err(input(dir))?,
        None => AppState::new(config),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(stage)?;
    runtime
        .block_on(arapgs_service::serve(listen, Arc::new(state)))
        .map_err(stage)
}

fn init_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("ARAPGS_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| Failure::Input(format!("ARAPGS_THREADS={value:?} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(stage)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match &cli.command {
        Command::Deform(c) => cmd_deform(c),
        Command::Render(c) => cmd_render(c),
        Command::Refine { common, deformed } => cmd_refine(common, deformed),
        Command::Eval {
            common,
            original_renders,
            edited_renders,
        } => cmd_eval(common, original_renders, edited_renders),
        Command::Serve { listen, data_dir, config } => cmd_serve(*listen, data_dir.as_deref(), config.as_deref()),
        Command::Fixture { out } => std::fs::create_dir_all(out)
            .map_err(input(out))
            .and_then(|()| write_toy_fixture(out).map_err(stage)),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Input(m) | Failure::Stage(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}
