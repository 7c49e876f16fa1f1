use std::fs::{self, File};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tracing::debug;

use super::{classify_log, SimOutcome, Verifier, VerifyError};

static WORKDIR_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Command templates for a compile-then-run flow. `{inputs}` expands to one
/// argument per source file, `{out}` and `{binary}` to the compiled image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolchainConfig {
    pub compile_cmd: String,
    pub run_cmd: String,
    #[serde(with = "crate::tree::duration_secs")]
    pub timeout: Duration,
    pub workdir_root: PathBuf,
    pub keep_artifacts: bool,
}

impl Default for ToolchainConfig {
    fn default() -> Self {
        Self {
            compile_cmd: "iverilog -g2012 -o {out} {inputs}".into(),
            run_cmd: "vvp -n {binary}".into(),
            timeout: Duration::from_secs(10),
            workdir_root: std::env::temp_dir(),
            keep_artifacts: false,
        }
    }
}

impl ToolchainConfig {
    pub fn validate(&self) -> Result<(), VerifyError> {
        for (name, tpl, needed) in [
            ("compile_cmd", &self.compile_cmd, &["{inputs}", "{out}"][..]),
            ("run_cmd", &self.run_cmd, &["{binary}"][..]),
        ] {
            if tpl.split_whitespace().next().is_none() {
                return Err(VerifyError::Config(format!("{name} is empty")));
            }
            for p in needed {
                if !tpl.contains(p) {
                    return Err(VerifyError::Config(format!("{name} lacks {p}")));
                }
            }
        }
        if self.timeout.is_zero() {
            return Err(VerifyError::Config("timeout must be positive".into()));
        }
        Ok(())
    }
}

pub struct ToolchainVerifier {
    cfg: ToolchainConfig,
}

struct Exec {
    status: Option<ExitStatus>,
    log: String,
    timed_out: bool,
}

impl ToolchainVerifier {
    pub fn new(cfg: ToolchainConfig) -> Result<Self, VerifyError> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &ToolchainConfig {
        &self.cfg
    }

    /// True when the compiler named by the compile template can be spawned.
    pub fn is_available(&self) -> bool {
        let program = self.cfg.compile_cmd.split_whitespace().next().unwrap_or_default();
        Command::new(program)
            .arg("-V")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .is_ok()
    }

    fn workdir(&self) -> Result<tempfile::TempDir, VerifyError> {
        fs::create_dir_all(&self.cfg.workdir_root)?;
        let n = WORKDIR_COUNTER.fetch_add(1, Ordering::SeqCst);
        Ok(tempfile::Builder::new()
            .prefix(&format!("veribtot-{}-{n}-", std::process::id()))
            .tempdir_in(&self.cfg.workdir_root)?)
    }

    fn finish(&self, dir: tempfile::TempDir) {
        if self.cfg.keep_artifacts {
            let kept = dir.keep();
            debug!(path = %kept.display(), "kept verification workdir");
        }
    }

    fn write_sources(dir: &Path, sources: &[String], testbench: Option<&str>) -> Result<Vec<PathBuf>, VerifyError> {
        let mut paths = Vec::new();
        for (i, src) in sources.iter().enumerate() {
            let p = dir.join(format!("design_{i}.v"));
            fs::write(&p, src)?;
            paths.push(p);
        }
        if let Some(tb) = testbench {
            let p = dir.join("testbench.v");
            fs::write(&p, tb)?;
            paths.push(p);
        }
        Ok(paths)
    }

    fn expand(template: &str, inputs: &[PathBuf], image: &Path) -> Vec<String> {
        let image = image.to_string_lossy();
        let mut args = Vec::new();
        for tok in template.split_whitespace() {
            if tok == "{inputs}" {
                args.extend(inputs.iter().map(|p| p.to_string_lossy().into_owned()));
            } else {
                args.push(tok.replace("{out}", &image).replace("{binary}", &image));
            }
        }
        args
    }

    fn exec(&self, dir: &Path, argv: &[String], timeout: Duration, stage: &str) -> Result<Exec, VerifyError> {
        let log_path = dir.join(format!("{stage}.log"));
        let log_file = File::create(&log_path)?;
        let mut child = match Command::new(&argv[0])
            .args(&argv[1..])
            .current_dir(dir)
            .stdin(Stdio::null())
            .stdout(log_file.try_clone()?)
            .stderr(log_file)
            .spawn()
        {
            Ok(c) => c,
            Err(e) if e.kind() == ErrorKind::NotFound || e.kind() == ErrorKind::PermissionDenied => {
                return Err(VerifyError::ToolchainUnavailable(format!("{}: {e}", argv[0])))
            }
            Err(e) => return Err(e.into()),
        };
        let started = Instant::now();
        let mut timed_out = false;
        let status = loop {
            if let Some(s) = child.try_wait()? {
                break Some(s);
            }
            if started.elapsed() >= timeout {
                let _ = child.kill();
                let _ = child.wait();
                timed_out = true;
                break None;
            }
            std::thread::sleep(Duration::from_millis(5));
        };
        let mut log = fs::read_to_string(&log_path).unwrap_or_default();
        if timed_out {
            log.push_str(&format!("\n[veribtot] {stage} killed after {:.1}s timeout\n", timeout.as_secs_f64()));
        }
        Ok(Exec { status, log, timed_out })
    }

    fn compile(&self, dir: &Path, inputs: &[PathBuf], timeout: Duration) -> Result<(bool, Exec, PathBuf), VerifyError> {
        let image = dir.join("sim.out");
        let argv = Self::expand(&self.cfg.compile_cmd, inputs, &image);
        let exec = self.exec(dir, &argv, timeout, "compile")?;
        let ok = !exec.timed_out && exec.status.is_some_and(|s| s.success());
        Ok((ok, exec, image))
    }
}

impl Verifier for ToolchainVerifier {
    fn syntax_check(&self, sources: &[String]) -> Result<SimOutcome, VerifyError> {
        let started = Instant::now();
        let dir = self.workdir()?;
        let inputs = Self::write_sources(dir.path(), sources, None)?;
        let result = self.compile(dir.path(), &inputs, self.cfg.timeout);
        self.finish(dir);
        let (ok, exec, _) = result?;
        let mut outcome = SimOutcome::syntax_only(ok, exec.log, started.elapsed());
        outcome.timed_out = exec.timed_out;
        Ok(outcome)
    }

    fn run_testbench(
        &self,
        design_sources: &[String],
        testbench: &str,
        timeout: Option<Duration>,
    ) -> Result<SimOutcome, VerifyError> {
        let timeout = timeout.unwrap_or(self.cfg.timeout);
        let started = Instant::now();
        let dir = self.workdir()?;
        let result = (|| {
            let inputs = Self::write_sources(dir.path(), design_sources, Some(testbench))?;
            let (ok, compile, image) = self.compile(dir.path(), &inputs, timeout)?;
            if !ok {
                let mut outcome = SimOutcome::syntax_only(false, compile.log, started.elapsed());
                outcome.timed_out = compile.timed_out;
                return Ok(outcome);
            }
            let argv = Self::expand(&self.cfg.run_cmd, &[], &image);
            let run = self.exec(dir.path(), &argv, timeout, "run")?;
            let log = format!("{}{}", compile.log, run.log);
            let (functional_pass, mismatch_count) = if run.timed_out {
                (Some(false), None)
            } else {
                let v = classify_log(&run.log);
                (v.functional_pass, v.mismatch_count)
            };
            Ok(SimOutcome {
                syntax_ok: true,
                functional_pass,
                mismatch_count,
                log,
                duration: started.elapsed(),
                timed_out: run.timed_out,
            })
        })();
        self.finish(dir);
        result
    }
}
