pub mod config;

use clap::{Args, Parser, Subcommand};
use config::{GuidanceKind, Resolved, Settings, VlmKind};
use sketchfill::dsl::{adjustment_loop, apply_program, parse_program, LoopStatus};
use sketchfill::guidance::{FileProvider, GuidanceProvider, HttpProvider};
use sketchfill::objective::{LossBreakdown, PyramidBackend};
use sketchfill::optimizer::trace_csv;
use sketchfill::pipeline::{complete, new_session_id, Hooks, PipelineContext, SessionState, SessionStatus, SessionStore};
use sketchfill::raster::{render, render_two_tone, CanvasSpec};
use sketchfill::svg::{parse_svg, serialize_svg};
use sketchfill::vlm::{AugmentedPrompt, FixtureStore, OpenAiTransport, VlmClient};
use sketchfill_server::{AppState, Engine};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sketchfill", version, about = "Complete partial vector sketches from a text prompt")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run both stages on a partial sketch and write the results.
    Complete(CompleteArgs),
    /// Rasterize an SVG sketch to PNG.
    Render(RenderArgs),
    /// Run style adjustment alone, from a DSL program or the VLM loop.
    Adjust(AdjustArgs),
    /// Serve the HTTP API and web client.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON file with default settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub prompt: String,
    /// Partial sketch (SVG).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub quiet: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Draw input strokes blue and generated strokes black.
    #[arg(long)]
    pub two_tone: bool,
}

#[derive(Debug, Args)]
pub struct AdjustArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Adjusted SVG destination.
    #[arg(long)]
    pub out: PathBuf,
    /// Apply this DSL program instead of asking the VLM.
    #[arg(long)]
    pub program: Option<PathBuf>,
    /// Prompt the sketch depicts; required without `--program`.
    #[arg(long)]
    pub prompt: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Session records.
    #[arg(long, default_value = "sessions")]
    pub store: PathBuf,
    /// Built web client to serve at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

/// A command outcome: exit code plus a one-line diagnostic.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_FAILURE,
            message: message.into(),
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Complete(a) => cmd_complete(a),
        Command::Render(a) => cmd_render(a),
        Command::Adjust(a) => cmd_adjust(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn resolve(common: Common) -> Result<Resolved, Failure> {
    let file = match &common.config {
        Some(path) => Settings::load(path).map_err(Failure::usage)?,
        None => Settings::default(),
    };
    common.settings.over(file).resolve(|k| std::env::var(k).ok()).map_err(Failure::usage)
}

fn vlm_client(r: &Resolved) -> Result<VlmClient, Failure> {
    let transport = || {
        OpenAiTransport::from_env()
            .map_err(|e| Failure::usage(format!("{e}; use --vlm replay with --fixtures to run offline")))
    };
    Ok(match r.vlm {
        VlmKind::Live => VlmClient::live(transport()?),
        VlmKind::Record => VlmClient::record(transport()?, FixtureStore::new(&r.fixtures)),
        VlmKind::Replay => {
            if !r.fixtures.is_dir() {
                return Err(Failure::usage(format!("fixture directory {} does not exist", r.fixtures.display())));
            }
            VlmClient::replay(FixtureStore::new(&r.fixtures))
        }
    })
}

fn guidance_provider(r: &Resolved) -> Result<Box<dyn GuidanceProvider>, Failure> {
    match r.guidance {
        GuidanceKind::File => {
            let path = r.guide.as_ref().ok_or_else(|| Failure::usage("file guidance needs --guide PATH"))?;
            Ok(Box::new(FileProvider::new(path)))
        }
        GuidanceKind::Http => {
            let endpoint = r
                .guidance_endpoint
                .as_ref()
                .ok_or_else(|| Failure::usage("http guidance needs --guidance-endpoint or GUIDANCE_ENDPOINT"))?;
            let provider = HttpProvider::new(endpoint, r.timeout).map_err(|e| Failure::runtime(e.to_string()))?;
            Ok(Box::new(provider))
        }
    }
}

fn read_sketch(path: &Path) -> Result<sketchfill::geom::Sketch, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
    parse_svg(&text).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CmdResult {
    std::fs::write(path, bytes).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

/// Sets the returned flag on the first SIGINT.
fn interrupt_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let set = flag.clone();
    std::thread::spawn(move || {
        let Ok(rt) = tokio::runtime::Builder::new_current_thread().enable_io().build() else {
            return;
        };
        if rt.block_on(tokio::signal::ctrl_c()).is_ok() {
            eprintln!("interrupted, stopping");
            set.store(true, Ordering::SeqCst);
        }
    });
    flag
}

pub fn cmd_complete(args: CompleteArgs) -> CmdResult {
    if args.prompt.trim().is_empty() {
        return Err(Failure::usage("--prompt must not be empty"));
    }
    let r = resolve(args.common)?;
    let vlm = vlm_client(&r)?;
    let guidance = guidance_provider(&r)?;
    let input = read_sketch(&args.input)?;
    std::fs::create_dir_all(&r.out_dir).map_err(|e| Failure::runtime(format!("{}: {e}", r.out_dir.display())))?;

    let backend = PyramidBackend::default();
    let mut ctx = PipelineContext::new(&vlm, guidance.as_ref(), &backend);
    ctx.max_adjust_iters = r.max_adjust_iters;
    let total = r.optimizer.iterations;
    let every = (total / 10).max(1);
    let quiet = args.quiet;
    let progress = move |i: usize, l: &LossBreakdown| {
        if !quiet && ((i + 1).is_multiple_of(every) || i + 1 == total) {
            eprintln!("iteration {}/{total}  loss {:.5}  overlap {}", i + 1, l.total, l.overlap_count);
        }
    };
    let transition = move |s: &SessionState| {
        if !quiet {
            eprintln!("status: {}", s.status);
        }
    };
    let cancel = interrupt_flag();
    let hooks = Hooks {
        cancel: Some(&cancel),
        progress: Some(&progress),
        on_transition: Some(&transition),
    };
    let mut session = SessionState::new(new_session_id(), args.prompt, input, r.optimizer.clone());
    complete(&mut session, &ctx, &hooks).map_err(|e| Failure::runtime(e.to_string()))?;

    let out = &r.out_dir;
    if let Some(s) = &session.intermediate {
        write(&out.join("intermediate.svg"), serialize_svg(s))?;
    }
    if let Some(s) = &session.final_sketch {
        write(&out.join("final.svg"), serialize_svg(s))?;
    }
    if let Some(g) = &session.guidance {
        g.save_png(&out.join("guidance.png")).map_err(|e| Failure::runtime(e.to_string()))?;
    }
    write(&out.join("trace.csv"), trace_csv(&session.loss_trace))?;
    let json = serde_json::to_string_pretty(&session).map_err(|e| Failure::runtime(e.to_string()))?;
    write(&out.join("session.json"), json)?;
    for w in &session.warnings {
        eprintln!("warning: {w}");
    }
    match &session.status {
        SessionStatus::Done => Ok(()),
        SessionStatus::Failed(reason) => Err(Failure::runtime(format!("session failed: {reason}"))),
        other => Err(Failure::runtime(format!("session stopped in state {other}"))),
    }
}

pub fn cmd_render(args: RenderArgs) -> CmdResult {
    let sketch = read_sketch(&args.input)?;
    let spec = CanvasSpec::new(sketch.canvas_w, sketch.canvas_h).with_segments(CanvasSpec::FINAL_SEGMENTS);
    let image = if args.two_tone { render_two_tone(&sketch, &spec) } else { render(&sketch, &spec) };
    image.save_png(&args.out).map_err(|e| Failure::runtime(format!("{}: {e}", args.out.display())))
}

pub fn cmd_adjust(args: AdjustArgs) -> CmdResult {
    let sketch = read_sketch(&args.input)?;
    let adjusted = match &args.program {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
            let program = parse_program(&text).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
            apply_program(&program, &sketch).map_err(|e| Failure::runtime(e.to_string()))?
        }
        None => {
            let prompt = args.prompt.ok_or_else(|| Failure::usage("adjust needs --program FILE or --prompt TEXT"))?;
            let r = resolve(args.common)?;
            let vlm = vlm_client(&r)?;
            let outcome = adjustment_loop(&vlm, &sketch, &AugmentedPrompt::new(prompt, ""), r.max_adjust_iters);
            for step in &outcome.trace {
                if let Some(f) = &step.failure {
                    eprintln!("warning: {f}");
                }
            }
            if let LoopStatus::DetectionFailed { message } = &outcome.status {
                eprintln!("warning: style detection failed: {message}");
            }
            outcome.sketch
        }
    };
    write(&args.out, serialize_svg(&adjusted))
}

pub fn cmd_serve(args: ServeArgs) -> CmdResult {
    let r = resolve(args.common)?;
    let engine = Engine {
        vlm: vlm_client(&r)?,
        guidance: guidance_provider(&r)?,
        backend: Box::new(PyramidBackend::default()),
        config: r.optimizer.clone(),
        max_adjust_iters: r.max_adjust_iters,
    };
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    let state = Arc::new(AppState::new(engine, SessionStore::new(&args.store), args.static_dir));
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::runtime(e.to_string()))?;
    rt.block_on(async move {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| Failure::runtime(format!("cannot listen on {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| Failure::runtime(e.to_string()))?;
        eprintln!("listening on http://{local}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            eprintln!("interrupted, checkpointing running sessions");
        };
        sketchfill_server::serve(listener, state, shutdown)
            .await
            .map_err(|e| Failure::runtime(e.to_string()))
    })
}
