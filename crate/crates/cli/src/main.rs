use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use tablesmith_core::corpus::{generate_collection, parse_annotation_file, TemplateSpec};
use tablesmith_core::finetune::{evaluate, DEFAULT_BASE};
use tablesmith_core::layout::{normalize_layout, parse_page_file, PageLayout};
use tablesmith_core::project::{JobInfo, JobStatus, Service, UploadFile};
use tablesmith_core::structure::TableGrid;

#[derive(Parser)]
#[command(name = "tablesmith", version, about = "Interactive table extraction workbench")]
struct Cli {
    /// Directory holding projects and the model registry.
    #[arg(long, global = true, env = "TABLESMITH_STORE", default_value = "tablesmith-data")]
    store: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create an empty project and print its id.
    Create { name: String },
    /// Add page-layout files (or directories of them) to a project.
    Ingest {
        project: String,
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Extract tables from every pending page and wait for the job.
    Extract { project: String },
    /// List pages in review order with their recommendation tags.
    Recommend { project: String },
    /// Show labelling progress.
    Progress { project: String },
    /// Write the annotation archive of a project.
    Export {
        project: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Load labels from an annotation archive.
    Import { project: String, archive: PathBuf },
    /// Submit pages as they are currently labelled or extracted.
    Submit {
        project: String,
        #[arg(required = true)]
        pages: Vec<String>,
    },
    /// Finetune from submitted labels, activate the result and re-extract.
    Finetune {
        project: String,
        #[arg(long)]
        base: Option<String>,
    },
    /// Select the model a project extracts with.
    SelectModel { project: String, version_id: String },
    /// Score each base model's confidence on a project's pages.
    Bases { project: String },
    /// List registered models.
    Models {
        #[arg(long)]
        project: Option<String>,
    },
    /// Score a model against ground-truth annotation files.
    Eval {
        /// Directory of page-layout files.
        pages: PathBuf,
        /// Directory of `{page_id}.json` annotation files.
        truth: PathBuf,
        #[arg(long, default_value = DEFAULT_BASE)]
        model: String,
    },
    /// Write a synthetic corpus with ground truth.
    Generate {
        output: PathBuf,
        /// JSON list of `[TemplateSpec, page count]` pairs.
        #[arg(long)]
        specs: Option<PathBuf>,
        /// Pages per template when no spec file is given.
        #[arg(long, default_value_t = 20)]
        pages: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

/// Every `.json` file under the given files and directories, sorted.
fn json_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            for entry in fs::read_dir(p).with_context(|| format!("reading {}", p.display()))? {
                let path = entry?.path();
                if path.extension().is_some_and(|x| x == "json") {
                    out.push(path);
                }
            }
        } else {
            out.push(p.clone());
        }
    }
    out.sort();
    Ok(out)
}

fn wait(svc: &Service, job: JobInfo) -> Result<JobInfo> {
    let done = svc.wait_job(&job.job_id)?;
    if done.status == JobStatus::Failed {
        bail!("job {} failed: {}", done.job_id, done.error.unwrap_or_default());
    }
    Ok(done)
}

fn load_pages(dir: &Path) -> Result<Vec<PageLayout>> {
    json_files(&[dir.to_path_buf()])?
        .iter()
        .map(|p| {
            let bytes = fs::read(p)?;
            let page = parse_page_file(&bytes).with_context(|| format!("parsing {}", p.display()))?;
            Ok(normalize_layout(page))
        })
        .collect()
}

/// Two templates far apart on the page, varied by `seed`.
fn default_specs(seed: u64, pages: usize) -> Vec<(TemplateSpec, usize)> {
    let a = TemplateSpec {
        seed,
        n_rows: 6,
        n_cols: 4,
        ..TemplateSpec::default()
    };
    let b = TemplateSpec {
        seed: seed.wrapping_add(1),
        n_rows: 8,
        n_cols: 3,
        origin_x: 300,
        origin_y: 420,
        ..TemplateSpec::default()
    };
    vec![(a, pages), (b, pages)]
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Generate {
        output,
        specs,
        pages,
        seed,
    } = &cli.command
    {
        let specs = match specs {
            Some(path) => serde_json::from_str(&fs::read_to_string(path)?)
                .with_context(|| format!("parsing {}", path.display()))?,
            None => default_specs(*seed, *pages),
        };
        let corpus = generate_collection(&specs)?;
        corpus.write_to(output)?;
        println!("wrote {} pages to {}", corpus.pages.len(), output.display());
        return Ok(());
    }

    let svc = Service::open(&cli.store).with_context(|| format!("opening store {}", cli.store.display()))?;
    match cli.command {
        Command::Create { name } => print_json(&svc.create_project(&name)?)?,
        Command::Ingest { project, paths } => {
            let files = json_files(&paths)?
                .into_iter()
                .map(|p| {
                    Ok(UploadFile {
                        name: p.display().to_string(),
                        content: fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            match svc.add_documents(&project, &files) {
                Ok(n) => println!("added {n} pages"),
                Err(tablesmith_core::project::ProjectError::InvalidDocuments(diags)) => {
                    for d in &diags {
                        eprintln!("{}: {}", d.file, d.message);
                    }
                    bail!("{} file(s) rejected, nothing added", diags.len());
                }
                Err(e) => return Err(e.into()),
            }
        }
        Command::Extract { project } => {
            let job = svc.run_extraction(&project)?;
            print_json(&wait(&svc, job)?)?;
        }
        Command::Recommend { project } => {
            for p in svc.list_pages(&project)? {
                let tag = p.recommendation.map_or("-", |k| k.tag_color());
                let conf = p.confidence.map_or("-".to_string(), |c| format!("{c:.3}"));
                let template = p.template_id.map_or("-".to_string(), |t| t.to_string());
                println!("{}\t{tag}\ttemplate={template}\tconfidence={conf}\ttables={}", p.page_id, p.table_count);
            }
        }
        Command::Progress { project } => print_json(&svc.get_progress(&project)?)?,
        Command::Export { project, output } => {
            let bytes = svc.export(&project)?;
            fs::write(&output, &bytes)?;
            println!("wrote {} bytes to {}", bytes.len(), output.display());
        }
        Command::Import { project, archive } => {
            let n = svc.import(&project, &fs::read(&archive)?)?;
            println!("imported labels for {n} pages");
        }
        Command::Submit { project, pages } => {
            for page in pages {
                svc.submit(&project, &page)?;
            }
        }
        Command::Finetune { project, base } => {
            let job = svc.start_finetune(&project, base.as_deref())?;
            print_json(&wait(&svc, job)?)?;
        }
        Command::SelectModel { project, version_id } => print_json(&svc.select_model(&project, &version_id)?)?,
        Command::Bases { project } => {
            for b in svc.compare_bases(&project)? {
                let fmt = |c: Option<f64>| c.map_or("-".to_string(), |c| format!("{c:.3}"));
                println!(
                    "{}\ttables_on={}/{}\tmean={}\tmin={}",
                    b.version_id,
                    b.pages_with_tables,
                    b.pages,
                    fmt(b.mean_confidence),
                    fmt(b.min_confidence)
                );
            }
        }
        Command::Models { project } => print_json(&svc.list_models(project.as_deref())?)?,
        Command::Eval { pages, truth, model } => {
            let params = svc
                .list_models(None)?
                .into_iter()
                .find(|m| m.entry.version_id() == model)
                .with_context(|| format!("unknown model {model}"))?
                .entry
                .params;
            let pages = load_pages(&pages)?;
            let truths = pages
                .iter()
                .map(|p| {
                    let path = truth.join(format!("{}.json", p.page_id));
                    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    parse_annotation_file(&text).with_context(|| format!("parsing {}", path.display()))
                })
                .collect::<Result<Vec<Vec<TableGrid>>>>()?;
            let pairs: Vec<_> = pages.iter().zip(&truths).map(|(p, t)| (p, t.as_slice())).collect();
            let report = evaluate(&params, &pairs);
            println!("pages: {}", report.pages);
            println!("detection_f1: {:.4}", report.detection_f1);
            println!("grid_agreement: {:.4}", report.grid_agreement);
        }
        Command::Serve { addr } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                log::info!("listening on {addr}");
                axum::serve(listener, tablesmith_cli::router(svc)).await?;
                anyhow::Ok(())
            })?;
        }
        Command::Generate { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse())
}
