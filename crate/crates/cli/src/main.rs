use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use embfuse::harness::{
    default_extractors, extract_all, read_header, run_suite, synthetic_suite, write_manifests,
    write_suite_config, EmbeddingStore, RunReport, SuiteConfig, INDEX_FILE,
};
use embfuse::synth::{make_synthetic_task, AudioClip, ExtractorSpec};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "embfuse",
    version,
    about = "Fuse audio embeddings and score them with downstream probes"
)]
struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run extractors over every WAV file in a directory into an embedding store.
    Extract {
        /// Extractor config: {"extractors": [ ... ]}.
        #[arg(long)]
        config: PathBuf,
        /// Directory of 16-bit mono WAV files; clip ids are the file stems.
        #[arg(long)]
        audio: PathBuf,
        /// Store directory; an existing index is extended.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate every (task, variant) cell of a suite.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Report file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the suite's global seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Print the header of EMB1 files.
    Inspect {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Write the synthetic two-factor corpus with its tasks, extractor config and suite.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20260101)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        factors: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 12)]
        clips_per_class: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Table,
}

#[derive(Serialize, Deserialize)]
struct ExtractorConfig {
    extractors: Vec<ExtractorSpec>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Extract { config, audio, out } => extract(&config, &audio, &out),
        Command::Run {
            config,
            out,
            seed,
            format,
        } => run(&config, out.as_deref(), seed, format),
        Command::Inspect { files, format } => inspect(&files, format),
        Command::Synth {
            out,
            seed,
            factors,
            classes,
            clips_per_class,
        } => synth(&out, seed, factors, classes, clips_per_class),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")));
    files.sort();
    Ok(files)
}

fn extract(config: &Path, audio: &Path, out: &Path) -> Result<()> {
    let cfg: ExtractorConfig = read_json(config)?;
    if cfg.extractors.is_empty() {
        bail!("{}: no extractors listed", config.display());
    }
    let files = wav_files(audio)?;
    if files.is_empty() {
        bail!("no .wav files in {}", audio.display());
    }
    let ids: Vec<String> = files
        .iter()
        .map(|p| {
            p.file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    let clips = files
        .iter()
        .map(AudioClip::read_wav)
        .collect::<embfuse::Result<Vec<_>>>()?;

    let mut store = if out.join(INDEX_FILE).exists() {
        EmbeddingStore::open(out)?
    } else {
        EmbeddingStore::create(out)?
    };
    let stacks = extract_all(&ids, &clips, &cfg.extractors)?;
    let count = stacks.len();
    for (extractor, clip, stack) in stacks {
        store.insert(&extractor, &clip, &stack)?;
    }
    store.save_index()?;
    eprintln!(
        "wrote {count} embeddings ({} clips x {} extractors) to {}",
        ids.len(),
        cfg.extractors.len(),
        out.display()
    );
    Ok(())
}

fn render(report: &RunReport, format: Format) -> String {
    match format {
        Format::Csv => report.to_csv(),
        Format::Table => report.to_table(),
    }
}

fn run(config: &Path, out: Option<&Path>, seed: Option<u64>, format: Format) -> Result<()> {
    let mut cfg = SuiteConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let report = run_suite(&cfg)?;
    let text = render(&report, format);
    match out {
        Some(path) => {
            fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    for row in report.failures() {
        eprintln!("{}/{}: {}", row.task_id, row.variant, row.status);
    }
    Ok(())
}

fn inspect(files: &[PathBuf], format: Format) -> Result<()> {
    let mut out = String::new();
    if let Format::Csv = format {
        out.push_str("file,version,dtype,layers,frames,channels,frame_rate_hz,t_start_s,bytes\n");
    }
    for path in files {
        let h = read_header(path)?;
        match format {
            Format::Csv => out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                path.display(),
                h.version,
                h.dtype,
                h.layers,
                h.frames,
                h.channels,
                h.frame_rate_hz,
                h.t_start_s,
                h.file_len()
            )),
            Format::Table => out.push_str(&format!(
                "{}\n  version        {}\n  dtype          {} (f32)\n  layers         {}\n  frames         {}\n  channels       {}\n  frame_rate_hz  {}\n  t_start_s      {}\n  bytes          {}\n",
                path.display(),
                h.version,
                h.dtype,
                h.layers,
                h.frames,
                h.channels,
                h.frame_rate_hz,
                h.t_start_s,
                h.file_len()
            )),
        }
    }
    std::io::stdout().write_all(out.as_bytes())?;
    Ok(())
}

fn synth(
    out: &Path,
    seed: u64,
    factors: usize,
    classes: usize,
    clips_per_class: usize,
) -> Result<()> {
    let corpus = make_synthetic_task(factors, classes, clips_per_class, seed)?;
    let audio = out.join("audio");
    fs::create_dir_all(&audio).with_context(|| format!("creating {}", audio.display()))?;
    for (id, clip) in corpus.clip_ids.iter().zip(&corpus.clips) {
        clip.write_wav(audio.join(format!("{id}.wav")))?;
    }
    let task_ids = write_manifests(out, &corpus)?;
    let extractors = ExtractorConfig {
        extractors: default_extractors(),
    };
    let path = out.join("extractors.json");
    fs::write(&path, serde_json::to_string_pretty(&extractors)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    write_suite_config(&out.join("suite.json"), &synthetic_suite(&task_ids, seed))?;
    eprintln!(
        "wrote {} clips, tasks {}, extractors.json and suite.json to {}",
        corpus.clips.len(),
        task_ids.join(", "),
        out.display()
    );
    Ok(())
}
