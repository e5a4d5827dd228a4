//! `quarry` command line: run the server, batch-import PDFs, export a
//! project dataset and administer users, teams and projects.
//!
//! Import, export and admin commands open the data directory in-process and
//! go through the same service calls the HTTP handlers use. A lock file keeps
//! two processes from opening one data directory at once.
//!
//! Exit codes: 0 success, 1 partial failure, 2 fatal.

use std::ffi::OsString;
use std::fs;
use std::future::Future;
use std::io::{self, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use quarry_core::config::{MapConfig, PipelineConfig, TableConfig};
use quarry_core::integrate;
use quarry_core::service::{self, ImportOutcome, Role, Service, ServiceConfig, ServiceError, SettingsPatch};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_FATAL: i32 = 2;

/// Config file contents (TOML). Every key is optional; command-line flags
/// win over the file.
///
/// ```toml
/// listen = "127.0.0.1:8080"
/// data_dir = "/var/lib/quarry"
/// lock_lease_secs = 300
/// session_ttl_secs = 43200
/// bcrypt_cost = 12
/// recent_len = 20
/// tombstone_days = 30
/// disabled_meta_adapters = ["info_dict"]
///
/// [table]
/// ruling_merge_pt = 1.5
/// row_gap_factor = 1.5
/// col_valley_factor = 1.0
/// region_slack_pt = 2.0
/// axis_tolerance_pt = 0.5
///
/// [map]
/// margin_band_frac = 0.08
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub listen: String,
    pub data_dir: Option<PathBuf>,
    pub lock_lease_secs: i64,
    pub session_ttl_secs: i64,
    pub bcrypt_cost: u32,
    pub recent_len: usize,
    pub tombstone_days: i64,
    pub disabled_meta_adapters: Vec<String>,
    pub table: TableConfig,
    pub map: MapConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        let s = ServiceConfig::default();
        CliConfig {
            listen: "127.0.0.1:8080".into(),
            data_dir: None,
            lock_lease_secs: s.lock_lease_secs,
            session_ttl_secs: s.session_ttl_secs,
            bcrypt_cost: s.bcrypt_cost,
            recent_len: s.recent_len,
            tombstone_days: s.tombstone_days,
            disabled_meta_adapters: s.disabled_meta_adapters,
            table: s.pipeline.table,
            map: s.pipeline.map,
        }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::BadConfig(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::BadConfig(format!("{}: {e}", path.display())))
    }

    pub fn service(&self) -> ServiceConfig {
        ServiceConfig {
            pipeline: PipelineConfig { table: self.table, map: self.map },
            lock_lease_secs: self.lock_lease_secs,
            session_ttl_secs: self.session_ttl_secs,
            bcrypt_cost: self.bcrypt_cost,
            recent_len: self.recent_len,
            tombstone_days: self.tombstone_days,
            disabled_meta_adapters: self.disabled_meta_adapters.clone(),
        }
    }

    /// Thresholds positive, data directory present and writable.
    pub fn validate(&self) -> Result<PathBuf, CliError> {
        self.service().validate().map_err(CliError::BadConfig)?;
        let dir = self.data_dir.clone().ok_or_else(|| CliError::BadConfig("no data directory given (--data-dir or data_dir)".into()))?;
        if !dir.is_dir() {
            return Err(CliError::BadConfig(format!("data directory {} does not exist", dir.display())));
        }
        if fs::metadata(&dir).map(|m| m.permissions().readonly()).unwrap_or(true) {
            return Err(CliError::BadConfig(format!("data directory {} is not writable", dir.display())));
        }
        Ok(dir)
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("address in use: {0}")]
    AddressInUse(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("data directory {0} is in use by another process (remove {0}/quarry.lock if it is stale)")]
    DataDirBusy(PathBuf),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Held while a command has the data directory open.
pub struct DataDirLock(PathBuf);

impl DataDirLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join("quarry.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(DataDirLock(path))
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(CliError::DataDirBusy(dir.to_path_buf())),
            Err(e) => Err(CliError::BadConfig(format!("cannot write to {}: {e}", dir.display()))),
        }
    }
}

impl Drop for DataDirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

#[derive(Parser, Debug)]
#[command(name = "quarry", version, about = "Collaborative dataset extraction from scientific PDFs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Data directory holding the database.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Serve the HTTP API until interrupted.
    Serve {
        #[arg(long)]
        listen: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Import every *.pdf in a directory into a project.
    Import {
        /// Project id or name.
        #[arg(long)]
        project: String,
        #[arg(long)]
        dir: PathBuf,
        /// Parallel parse workers.
        #[arg(long, default_value_t = 4)]
        jobs: usize,
        #[arg(long)]
        user: String,
        #[arg(long, env = "QUARRY_PASSWORD", hide_env_values = true)]
        password: String,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Write the project summary CSV and its provenance sidecar.
    Export {
        /// Project id or name.
        #[arg(long)]
        project: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Local administration.
    Admin {
        #[command(subcommand)]
        command: AdminCommand,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum RoleArg {
    Manager,
    Member,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Role {
        match r {
            RoleArg::Manager => Role::Manager,
            RoleArg::Member => Role::Member,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum AdminCommand {
    AddUser {
        #[arg(long)]
        username: String,
        #[arg(long, env = "QUARRY_PASSWORD", hide_env_values = true)]
        password: String,
    },
    /// Create a team owned by an existing user.
    CreateTeam {
        #[arg(long)]
        owner: String,
        #[arg(long)]
        name: String,
    },
    AddMember {
        /// Team id or name.
        #[arg(long)]
        team: String,
        #[arg(long)]
        username: String,
        #[arg(long, value_enum)]
        role: RoleArg,
    },
    CreateProject {
        /// Team id or name.
        #[arg(long)]
        team: String,
        #[arg(long)]
        name: String,
    },
    /// Apply a JSON settings patch (name, description, schema, header_batch, labels).
    Settings {
        #[arg(long)]
        project: String,
        #[arg(long)]
        file: PathBuf,
    },
}

fn resolve(common: &Common) -> Result<CliConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    if let Some(d) = &common.data_dir {
        cfg.data_dir = Some(d.clone());
    }
    Ok(cfg)
}

fn open(cfg: &CliConfig) -> Result<(Service, DataDirLock), CliError> {
    let dir = cfg.validate()?;
    let lock = DataDirLock::acquire(&dir)?;
    Ok((Service::open(&dir, cfg.service())?, lock))
}

/// Bind the listen address, reporting an occupied port as `AddressInUse`.
pub fn bind(addr: &str) -> Result<TcpListener, CliError> {
    TcpListener::bind(addr).map_err(|e| match e.kind() {
        io::ErrorKind::AddrInUse => CliError::AddressInUse(addr.to_string()),
        _ => CliError::BadConfig(format!("cannot listen on {addr}: {e}")),
    })
}

/// Serve `svc` on `listener` until `shutdown` resolves.
pub fn serve_until(listener: TcpListener, svc: Service, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), CliError> {
    listener.set_nonblocking(true)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener)?;
        service::http::serve_until(listener, Arc::new(svc), shutdown).await
    })?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct ImportReport {
    pub project_id: String,
    pub imported: usize,
    pub failed: usize,
    pub files: Vec<ImportOutcome>,
}

pub fn cmd_import(svc: &Service, project: &str, dir: &Path, jobs: usize, user: &str, password: &str) -> Result<ImportReport, CliError> {
    if !dir.is_dir() {
        return Err(CliError::NotFound(format!("directory {}", dir.display())));
    }
    let user_id = svc.verify_password(user, password)?;
    let project = svc.find_project(project).ok_or_else(|| CliError::NotFound(format!("project {project}")))?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pdf")))
        .collect();
    paths.sort();
    let mut files = Vec::new();
    for p in paths {
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        files.push((name, fs::read(&p)?));
    }
    let outcomes = svc.import_files(&user_id, &project.project_id, files, jobs)?;
    let imported = outcomes.iter().filter(|o| o.doc_id.is_some()).count();
    Ok(ImportReport { project_id: project.project_id, imported, failed: outcomes.len() - imported, files: outcomes })
}

#[derive(Debug, Serialize)]
pub struct ExportReport {
    pub project_id: String,
    pub rows: usize,
    pub csv: PathBuf,
    pub provenance: PathBuf,
    pub warnings: Vec<String>,
}

/// `out` gets the summary; `<stem>.provenance.csv` next to it the cell
/// provenance.
pub fn cmd_export(svc: &Service, project: &str, out: &Path) -> Result<ExportReport, CliError> {
    let project = svc.find_project(project).ok_or_else(|| CliError::NotFound(format!("project {project}")))?;
    let table = svc.integrate_project_local(&project.project_id)?;
    let provenance = out.with_extension("provenance.csv");
    fs::write(out, integrate::export_csv(&table))?;
    fs::write(&provenance, integrate::export_provenance_csv(&table))?;
    Ok(ExportReport { project_id: project.project_id, rows: table.rows.len(), csv: out.to_path_buf(), provenance, warnings: table.warnings })
}

fn admin(svc: &Service, cmd: AdminCommand, out: &mut dyn Write) -> Result<(), CliError> {
    let team_id = |t: &str| svc.find_team(t).map(|t| t.team_id).ok_or_else(|| CliError::NotFound(format!("team {t}")));
    match cmd {
        AdminCommand::AddUser { username, password } => {
            let u = svc.register(&username, &password)?;
            writeln!(out, "{}", u.user_id)?;
        }
        AdminCommand::CreateTeam { owner, name } => {
            let owner = svc.user_id_by_name(&owner)?;
            writeln!(out, "{}", svc.create_team(&owner, &name)?.team_id)?;
        }
        AdminCommand::AddMember { team, username, role } => {
            let user = svc.user_id_by_name(&username)?;
            svc.admin_add_member(&team_id(&team)?, &user, role.into())?;
        }
        AdminCommand::CreateProject { team, name } => {
            writeln!(out, "{}", svc.admin_create_project(&team_id(&team)?, &name)?.project_id)?;
        }
        AdminCommand::Settings { project, file } => {
            let p = svc.find_project(&project).ok_or_else(|| CliError::NotFound(format!("project {project}")))?;
            let text = fs::read_to_string(&file)?;
            let patch: SettingsPatch = serde_json::from_str(&text).map_err(|e| CliError::BadConfig(format!("{}: {e}", file.display())))?;
            svc.admin_update_settings(&p.project_id, patch)?;
        }
    }
    Ok(())
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    match cli.command {
        Command::Serve { listen, common } => {
            let mut cfg = resolve(&common)?;
            if let Some(l) = listen {
                cfg.listen = l;
            }
            let dir = cfg.validate()?;
            let listener = bind(&cfg.listen)?;
            let _lock = DataDirLock::acquire(&dir)?;
            let svc = Service::open(&dir, cfg.service())?;
            let _ = tracing_subscriber::fmt().with_writer(io::stderr).try_init();
            tracing::info!(addr = %listener.local_addr()?, "listening");
            serve_until(listener, svc, async {
                let _ = tokio::signal::ctrl_c().await;
            })?;
            Ok(EXIT_OK)
        }
        Command::Import { project, dir, jobs, user, password, json, common } => {
            let (svc, _lock) = open(&resolve(&common)?)?;
            let r = cmd_import(&svc, &project, &dir, jobs.max(1), &user, &password)?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&r).expect("report serializes"))?;
            } else {
                for f in &r.files {
                    match (&f.doc_id, &f.error) {
                        (Some(id), _) => writeln!(out, "ok\t{}\t{id}", f.file_name)?,
                        (None, Some(e)) => writeln!(out, "failed\t{}\t{}: {}", f.file_name, e.code, e.message)?,
                        (None, None) => {}
                    }
                }
                writeln!(out, "imported {} of {} files into {}", r.imported, r.files.len(), r.project_id)?;
            }
            Ok(if r.failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
        }
        Command::Export { project, out: path, json, common } => {
            let (svc, _lock) = open(&resolve(&common)?)?;
            let r = cmd_export(&svc, &project, &path)?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&r).expect("report serializes"))?;
            } else {
                writeln!(out, "wrote {} rows to {} (provenance in {})", r.rows, r.csv.display(), r.provenance.display())?;
                for w in &r.warnings {
                    writeln!(out, "warning: {w}")?;
                }
            }
            Ok(EXIT_OK)
        }
        Command::Admin { command, common } => {
            let (svc, _lock) = open(&resolve(&common)?)?;
            admin(&svc, command, out)?;
            Ok(EXIT_OK)
        }
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FATAL } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FATAL
        }
    }
}
